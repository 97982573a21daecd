//! Stage-binding combinations, fixture ordering checks and reports.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::{
    energy_per_output, pipeline_interval, throughput, Binding, CalibrationFixture, HwError,
    PipelineConfig, StageId,
};

/// A binding per stage, written `s1D_s2L_s3L_s4D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MappingName(pub [Binding; 4]);

impl MappingName {
    /// All 16 combinations, `s1` most significant and `D` before `L`.
    pub fn all() -> Vec<MappingName> {
        (0..16u8)
            .map(|bits| {
                MappingName(std::array::from_fn(|i| {
                    if bits >> (3 - i) & 1 == 0 {
                        Binding::Dsp
                    } else {
                        Binding::Lut
                    }
                }))
            })
            .collect()
    }

    /// The same mapping with stage `stage` bound to `b`.
    pub fn with(self, stage: StageId, b: Binding) -> Self {
        let mut m = self.0;
        m[stage.index()] = b;
        MappingName(m)
    }
}

impl fmt::Display for MappingName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (id, b)) in StageId::ALL.iter().zip(self.0).enumerate() {
            if i > 0 {
                f.write_str("_")?;
            }
            write!(f, "{id}{}", b.letter())?;
        }
        Ok(())
    }
}

impl FromStr for MappingName {
    type Err = HwError;
    fn from_str(s: &str) -> Result<Self, HwError> {
        let bad = || HwError::MappingName(s.to_string());
        let parts: Vec<&str> = s.split('_').collect();
        if parts.len() != 4 {
            return Err(bad());
        }
        let mut out = [Binding::Dsp; 4];
        for ((part, id), slot) in parts.iter().zip(StageId::ALL).zip(out.iter_mut()) {
            let rest = part.strip_prefix(&id.to_string()).ok_or_else(bad)?;
            *slot = rest.parse().map_err(|_| bad())?;
        }
        Ok(MappingName(out))
    }
}

/// The 16 binding variants of `template`, named by their mapping.
pub fn enumerate_mappings(template: &PipelineConfig) -> Result<Vec<PipelineConfig>, HwError> {
    template.validate()?;
    Ok(MappingName::all()
        .into_iter()
        .map(|m| {
            let mut cfg = template.clone();
            cfg.name = m.to_string();
            for (stage, b) in cfg.stages.iter_mut().zip(m.0) {
                stage.binding = b;
            }
            cfg
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlipViolation {
    pub stage: StageId,
    pub from: String,
    pub to: String,
    pub dsp_from: u64,
    pub dsp_to: u64,
}

/// Qualitative laws checked over the mapping sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingReport {
    /// Single-stage D→L flips compared.
    pub flips_checked: usize,
    /// Flips where the DSP count went up.
    pub dsp_violations: Vec<FlipViolation>,
    pub bram_values: Vec<u64>,
    pub min_cycles: u64,
    pub min_cycle_configs: Vec<String>,
    pub highlighted: Option<String>,
}

impl OrderingReport {
    pub fn dsp_monotone(&self) -> bool {
        self.dsp_violations.is_empty()
    }

    pub fn bram_constant(&self) -> bool {
        self.bram_values.len() == 1
    }

    /// The highlighted configuration is the unique cycle minimum.
    pub fn highlighted_is_min(&self) -> bool {
        self.min_cycle_configs.len() == 1
            && self.highlighted.as_ref() == self.min_cycle_configs.first()
    }

    pub fn passed(&self) -> bool {
        self.dsp_monotone() && self.bram_constant() && self.highlighted_is_min()
    }
}

/// Checks that D→L flips never raise DSP use, that BRAM is constant, and
/// that the highlighted row has the fewest cycles. Requires all 16 rows.
pub fn resource_ordering_check(fixture: &CalibrationFixture) -> Result<OrderingReport, HwError> {
    let all = MappingName::all();
    let rows = all
        .iter()
        .map(|&m| {
            fixture
                .row_for(m)
                .map(|r| (m, r))
                .ok_or_else(|| HwError::Fixture(format!("missing row {m}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if fixture.rows.len() != 16 {
        return Err(HwError::Fixture(format!(
            "expected 16 mapping rows, got {}",
            fixture.rows.len()
        )));
    }

    let mut flips_checked = 0;
    let mut dsp_violations = Vec::new();
    for &(m, r) in &rows {
        for stage in StageId::ALL {
            if m.0[stage.index()] != Binding::Dsp {
                continue;
            }
            let to = m.with(stage, Binding::Lut);
            let r2 = fixture.row_for(to).expect("all rows present");
            flips_checked += 1;
            if r2.dsp > r.dsp {
                dsp_violations.push(FlipViolation {
                    stage,
                    from: m.to_string(),
                    to: to.to_string(),
                    dsp_from: r.dsp,
                    dsp_to: r2.dsp,
                });
            }
        }
    }

    let mut bram_values: Vec<u64> = rows.iter().map(|(_, r)| r.bram).collect();
    bram_values.sort_unstable();
    bram_values.dedup();
    let min_cycles = rows.iter().map(|(_, r)| r.cycles).min().expect("16 rows");
    let min_cycle_configs = rows
        .iter()
        .filter(|(_, r)| r.cycles == min_cycles)
        .map(|(m, _)| m.to_string())
        .collect();
    let highlighted = fixture
        .rows
        .iter()
        .find(|r| r.highlighted)
        .map(|r| r.name.clone());
    Ok(OrderingReport {
        flips_checked,
        dsp_violations,
        bram_values,
        min_cycles,
        min_cycle_configs,
        highlighted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MappingReportRow {
    pub config: String,
    pub modeled_interval: u64,
    pub throughput_per_s: f64,
    pub cycles: Option<u64>,
    pub lut: Option<u64>,
    pub ff: Option<u64>,
    pub dsp: Option<u64>,
    pub bram: Option<u64>,
}

/// One row per enumerated mapping, joined with fixture resources by name.
pub fn mapping_report(
    configs: &[PipelineConfig],
    fixture: &CalibrationFixture,
) -> Vec<MappingReportRow> {
    configs
        .iter()
        .map(|cfg| {
            let row = fixture.row(&cfg.name);
            MappingReportRow {
                config: cfg.name.clone(),
                modeled_interval: pipeline_interval(cfg),
                throughput_per_s: cfg.fmax_mhz * 1e6 / pipeline_interval(cfg) as f64,
                cycles: row.map(|r| r.cycles),
                lut: row.map(|r| r.lut),
                ff: row.map(|r| r.ff),
                dsp: row.map(|r| r.dsp),
                bram: row.map(|r| r.bram),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignReportRow {
    pub design: String,
    pub interval: u64,
    pub power_w: f64,
    pub throughput_per_s: f64,
    /// Throughput relative to the reference design.
    pub speedup_vs_reference: f64,
    /// Throughput relative to the previous row.
    pub speedup_vs_previous: f64,
    pub energy_vs_reference: f64,
}

/// Throughput and energy of every design in `fixture`, in row order,
/// normalized to the first row.
pub fn design_report(fixture: &CalibrationFixture) -> Result<Vec<DesignReportRow>, HwError> {
    let cfgs = fixture
        .rows
        .iter()
        .map(|r| fixture.pipeline(&r.name))
        .collect::<Result<Vec<_>, _>>()?;
    let reference = &cfgs[0];
    let mut out = Vec::with_capacity(cfgs.len());
    for (i, cfg) in cfgs.iter().enumerate() {
        let prev = &cfgs[i.saturating_sub(1)];
        out.push(DesignReportRow {
            design: cfg.name.clone(),
            interval: cfg.interval(),
            power_w: cfg.power_w,
            throughput_per_s: throughput(cfg),
            speedup_vs_reference: throughput(cfg) / throughput(reference),
            speedup_vs_previous: throughput(cfg) / throughput(prev),
            energy_vs_reference: energy_per_output(cfg, reference),
        });
    }
    Ok(out)
}

/// Writes serializable rows as CSV with a header line.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, HwError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| HwError::InvalidConfig(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Fixed-width text table of `header` and pre-formatted `rows`.
pub fn text_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(
        &widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("  "),
    );
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}
