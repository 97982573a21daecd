//! Analytic model of the streaming GRU pipeline: the banking law for stage
//! initiation intervals, a cycle-level bank-port scheduler to check it,
//! interval composition, and throughput/energy arithmetic over
//! calibration fixtures.

mod fixtures;
mod mapping;
mod sched;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fixtures::{CalibrationFixture, FixtureRow};
pub use mapping::{
    design_report, enumerate_mappings, mapping_report, resource_ordering_check, text_table, to_csv,
    DesignReportRow, FlipViolation, MappingName, MappingReportRow, OrderingReport,
};
pub use sched::{simulate_bank_ports, BankConfig, BankLayout};

#[derive(Debug, Error)]
pub enum HwError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("fixture integrity: {0}")]
    Fixture(String),
    #[error("cannot parse {0:?} as a stage mapping name")]
    MappingName(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Ports a true dual-port BRAM bank offers per cycle.
pub const PORTS_PER_BANK: u64 = 2;

/// Initiation interval a stage can sustain when it needs `reads` array
/// reads per iteration from `banks` dual-port banks: `⌈R / 2B⌉`, and 1 when
/// nothing is read.
pub fn stage_ii(reads: u64, banks: u64) -> u64 {
    assert!(banks >= 1, "bank count must be at least 1");
    reads.div_ceil(PORTS_PER_BANK * banks).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageId {
    S1,
    S2,
    S3,
    S4,
}

impl StageId {
    pub const ALL: [StageId; 4] = [StageId::S1, StageId::S2, StageId::S3, StageId::S4];

    pub fn index(self) -> usize {
        self as usize
    }

    /// What the stage computes in the GRU step.
    pub fn role(self) -> &'static str {
        match self {
            StageId::S1 => "gate affines",
            StageId::S2 => "sigmoid and reset modulation",
            StageId::S3 => "candidate tanh and accumulation",
            StageId::S4 => "update-gate blend",
        }
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.index() + 1)
    }
}

/// Which fabric a stage's arithmetic is bound to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Binding {
    /// DSP-slice MACs.
    #[serde(rename = "D")]
    Dsp,
    /// LUT and carry-chain logic.
    #[serde(rename = "L")]
    Lut,
}

impl Binding {
    pub fn letter(self) -> char {
        match self {
            Binding::Dsp => 'D',
            Binding::Lut => 'L',
        }
    }
}

impl FromStr for Binding {
    type Err = HwError;
    fn from_str(s: &str) -> Result<Self, HwError> {
        match s {
            "D" => Ok(Binding::Dsp),
            "L" => Ok(Binding::Lut),
            _ => Err(HwError::MappingName(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub id: StageId,
    pub binding: Binding,
    /// Reads one unrolled lane issues per iteration.
    pub reads_per_iter: u64,
    pub unroll: u64,
    pub base_latency: u64,
    /// Banks the stage's operand array is partitioned into.
    pub banks: u64,
}

impl StageSpec {
    /// Reads the whole unrolled iteration needs in one cycle.
    pub fn effective_reads(&self) -> u64 {
        self.reads_per_iter * self.unroll
    }

    pub fn ii(&self) -> u64 {
        stage_ii(self.effective_reads(), self.banks)
    }

    fn validate(&self) -> Result<(), HwError> {
        if self.unroll < 1 {
            return Err(HwError::InvalidConfig(format!(
                "{}: unroll must be at least 1",
                self.id
            )));
        }
        if self.banks < 1 {
            return Err(HwError::InvalidConfig(format!(
                "{}: bank count must be at least 1",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub name: String,
    pub stages: Vec<StageSpec>,
    pub fmax_mhz: f64,
    pub power_w: f64,
    /// Extra cycles added to the slowest stage for port arbitration.
    #[serde(default)]
    pub arbitration_overhead: u64,
    /// Interval reported by synthesis; overrides the modeled one when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured_interval: Option<u64>,
}

impl PipelineConfig {
    /// Four stages with the given per-stage (reads per lane, unroll, banks),
    /// all bound to DSPs.
    pub fn with_stages(
        name: &str,
        shape: [(u64, u64, u64); 4],
        fmax_mhz: f64,
        power_w: f64,
    ) -> Self {
        let stages = StageId::ALL
            .iter()
            .zip(shape)
            .map(|(&id, (reads_per_iter, unroll, banks))| StageSpec {
                id,
                binding: Binding::Dsp,
                reads_per_iter,
                unroll,
                base_latency: 1,
                banks,
            })
            .collect();
        Self {
            name: name.to_string(),
            stages,
            fmax_mhz,
            power_w,
            arbitration_overhead: 0,
            measured_interval: None,
        }
    }

    /// Fully banked four-lane template: every stage sustains II = 1.
    pub fn reference_template() -> Self {
        Self::with_stages(
            "template",
            [(2, 4, 4), (1, 4, 2), (2, 4, 4), (1, 4, 2)],
            150.0,
            3.0,
        )
    }

    pub fn validate(&self) -> Result<(), HwError> {
        if self.stages.len() != 4 {
            return Err(HwError::InvalidConfig(format!(
                "expected 4 stages, got {}",
                self.stages.len()
            )));
        }
        for (spec, id) in self.stages.iter().zip(StageId::ALL) {
            if spec.id != id {
                return Err(HwError::InvalidConfig(format!(
                    "stage {} listed where {id} belongs",
                    spec.id
                )));
            }
            spec.validate()?;
        }
        if !(self.fmax_mhz > 0.0 && self.fmax_mhz.is_finite()) {
            return Err(HwError::InvalidConfig(format!(
                "Fmax must be positive, got {}",
                self.fmax_mhz
            )));
        }
        if !(self.power_w >= 0.0 && self.power_w.is_finite()) {
            return Err(HwError::InvalidConfig(format!(
                "power must be non-negative, got {}",
                self.power_w
            )));
        }
        Ok(())
    }

    pub fn bindings(&self) -> [Binding; 4] {
        std::array::from_fn(|i| self.stages[i].binding)
    }

    /// Measured interval if known, otherwise the modeled one.
    pub fn interval(&self) -> u64 {
        self.measured_interval
            .unwrap_or_else(|| pipeline_interval(self))
    }

    pub fn from_json(s: &str) -> Result<Self, HwError> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Modeled steady-state interval: the slowest stage's II plus arbitration.
pub fn pipeline_interval(cfg: &PipelineConfig) -> u64 {
    cfg.stages.iter().map(StageSpec::ii).max().unwrap_or(1) + cfg.arbitration_overhead
}

/// Outputs per second, `Fmax / Interval`.
pub fn throughput(cfg: &PipelineConfig) -> f64 {
    cfg.fmax_mhz * 1e6 / cfg.interval() as f64
}

/// Energy per output relative to `reference`: `(P·I) / (P_ref·I_ref)`.
pub fn energy_per_output(cfg: &PipelineConfig, reference: &PipelineConfig) -> f64 {
    (cfg.power_w * cfg.interval() as f64) / (reference.power_w * reference.interval() as f64)
}
