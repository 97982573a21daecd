//! Published synthesis numbers kept as read-only calibration data.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{HwError, MappingName, PipelineConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRow {
    pub name: String,
    pub cycles: u64,
    pub lut: u64,
    pub ff: u64,
    pub dsp: u64,
    pub bram: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_w: Option<f64>,
    /// Marked as the preferred configuration in the source table.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub highlighted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFixture {
    pub provenance: String,
    pub fmax_mhz: Option<f64>,
    pub rows: Vec<FixtureRow>,
}

const MAPPING_SWEEP: &str = include_str!("../../fixtures/mapping_sweep.json");
const DESIGN_COMPARISON: &str = include_str!("../../fixtures/design_comparison.json");

impl CalibrationFixture {
    pub fn from_json(s: &str) -> Result<Self, HwError> {
        let fx: Self = serde_json::from_str(s)?;
        fx.validate()?;
        Ok(fx)
    }

    /// Cycles and resources of the 16 stage-binding combinations.
    pub fn mapping_sweep() -> Self {
        Self::from_json(MAPPING_SWEEP).expect("embedded fixture is valid")
    }

    /// LTC baseline, GRU baseline, concurrent GRU and banked GRU with
    /// measured intervals and power.
    pub fn design_comparison() -> Self {
        Self::from_json(DESIGN_COMPARISON).expect("embedded fixture is valid")
    }

    fn validate(&self) -> Result<(), HwError> {
        if self.rows.is_empty() {
            return Err(HwError::Fixture("no rows".into()));
        }
        let mut seen = HashSet::new();
        for r in &self.rows {
            if !seen.insert(r.name.as_str()) {
                return Err(HwError::Fixture(format!("duplicate row {:?}", r.name)));
            }
            if r.interval == Some(0) {
                return Err(HwError::Fixture(format!("{}: zero interval", r.name)));
            }
            if r.power_w.is_some_and(|p| !(p >= 0.0 && p.is_finite())) {
                return Err(HwError::Fixture(format!("{}: invalid power", r.name)));
            }
        }
        if self.fmax_mhz.is_some_and(|f| !(f > 0.0 && f.is_finite())) {
            return Err(HwError::Fixture("Fmax must be positive".into()));
        }
        Ok(())
    }

    pub fn row(&self, name: &str) -> Option<&FixtureRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn row_for(&self, mapping: MappingName) -> Option<&FixtureRow> {
        self.row(&mapping.to_string())
    }

    /// A pipeline carrying the row's measured interval and power, on the
    /// reference stage template.
    pub fn pipeline(&self, name: &str) -> Result<PipelineConfig, HwError> {
        let row = self
            .row(name)
            .ok_or_else(|| HwError::Fixture(format!("no row named {name:?}")))?;
        let interval = row
            .interval
            .ok_or_else(|| HwError::Fixture(format!("{name}: no interval")))?;
        let power = row
            .power_w
            .ok_or_else(|| HwError::Fixture(format!("{name}: no power")))?;
        let fmax = self
            .fmax_mhz
            .ok_or_else(|| HwError::Fixture("fixture has no Fmax".into()))?;
        let mut cfg = PipelineConfig::reference_template();
        cfg.name = row.name.clone();
        cfg.fmax_mhz = fmax;
        cfg.power_w = power;
        cfg.measured_interval = Some(interval);
        Ok(cfg)
    }
}
