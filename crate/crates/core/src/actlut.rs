//! Table-driven sigmoid and tanh.
//!
//! A table samples the exact function at `size` evenly spaced points over
//! `[x_min, x_max]` (endpoints included) and stores the quantized outputs.
//! Inputs outside the domain clamp to the nearest endpoint.
//!
//! Lookup works purely on integers so a hardware port can reproduce it bit
//! for bit. With the domain endpoints expressed as raw integers in the
//! input's format, `lo` and `hi`, and a clamped input `x`:
//!
//! ```text
//! pos   = (x - lo) * (size - 1)
//! index = pos / (hi - lo)          (integer division)
//! rem   = pos % (hi - lo)
//! ```
//!
//! Nearest-entry mode rounds `rem / (hi - lo)` to the closer neighbour
//! (ties go up). Piecewise-linear mode returns
//! `e[index] + round((e[index+1] - e[index]) * rem / (hi - lo))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fxp::{quantize, FxError, FxFormat, FxValue};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("degenerate domain [{0}, {1}]")]
    DegenerateDomain(f64, f64),
    #[error("table size {0} must be a power of two and at least 2")]
    BadSize(usize),
    #[error("table holds {found} entries, expected {expected}")]
    EntryCount { expected: usize, found: usize },
    #[error("table entries are not monotone at index {0}")]
    NotMonotone(usize),
    #[error("table entry {index} ({value}) outside the function's range")]
    OutOfRange { index: usize, value: f64 },
    #[error(transparent)]
    Fixed(#[from] FxError),
    #[error("table json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActKind {
    Sigmoid,
    Tanh,
}

impl ActKind {
    pub fn exact(self, x: f64) -> f64 {
        match self {
            ActKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            ActKind::Tanh => x.tanh(),
        }
    }

    fn range(self) -> (f64, f64) {
        match self {
            ActKind::Sigmoid => (0.0, 1.0),
            ActKind::Tanh => (-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LookupMode {
    NearestEntry,
    #[default]
    PiecewiseLinear,
}

pub const DEFAULT_TABLE_SIZE: usize = 1024;
pub const DEFAULT_DOMAIN: (f64, f64) = (-8.0, 8.0);

/// An immutable activation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableDump", into = "TableDump")]
pub struct ActTable {
    kind: ActKind,
    mode: LookupMode,
    domain: (f64, f64),
    out_fmt: FxFormat,
    entries: Vec<i64>,
}

/// On-disk layout of a table.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TableDump {
    kind: ActKind,
    mode: LookupMode,
    size: usize,
    domain: [f64; 2],
    format: FxFormat,
    entries: Vec<i64>,
}

impl From<ActTable> for TableDump {
    fn from(t: ActTable) -> Self {
        TableDump {
            kind: t.kind,
            mode: t.mode,
            size: t.entries.len(),
            domain: [t.domain.0, t.domain.1],
            format: t.out_fmt,
            entries: t.entries,
        }
    }
}

impl TryFrom<TableDump> for ActTable {
    type Error = TableError;

    fn try_from(d: TableDump) -> Result<Self, Self::Error> {
        check_shape(d.size, (d.domain[0], d.domain[1]))?;
        if d.entries.len() != d.size {
            return Err(TableError::EntryCount {
                expected: d.size,
                found: d.entries.len(),
            });
        }
        let (lo, hi) = d.kind.range();
        for (i, &raw) in d.entries.iter().enumerate() {
            let v = FxValue::from_raw(raw, d.format)?.to_f64();
            if v < lo || v > hi {
                return Err(TableError::OutOfRange { index: i, value: v });
            }
            if i > 0 && raw < d.entries[i - 1] {
                return Err(TableError::NotMonotone(i));
            }
        }
        Ok(ActTable {
            kind: d.kind,
            mode: d.mode,
            domain: (d.domain[0], d.domain[1]),
            out_fmt: d.format,
            entries: d.entries,
        })
    }
}

fn check_shape(size: usize, domain: (f64, f64)) -> Result<(), TableError> {
    if size < 2 || !size.is_power_of_two() {
        return Err(TableError::BadSize(size));
    }
    let (lo, hi) = domain;
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(TableError::DegenerateDomain(lo, hi));
    }
    Ok(())
}

/// Samples `kind` at `size` points spanning `domain`.
pub fn build_table(
    kind: ActKind,
    size: usize,
    domain: (f64, f64),
    out_fmt: FxFormat,
    mode: LookupMode,
) -> Result<ActTable, TableError> {
    check_shape(size, domain)?;
    let (x_min, x_max) = domain;
    let step = (x_max - x_min) / (size - 1) as f64;
    let (lo, hi) = kind.range();
    let lo_raw = quantize(lo, out_fmt)?.raw();
    let hi_raw = quantize(hi, out_fmt)?.raw();
    let mut entries = Vec::with_capacity(size);
    for i in 0..size {
        let x = if i == size - 1 {
            x_max
        } else {
            x_min + i as f64 * step
        };
        // Clamp so a format that cannot reach 1.0 exactly rounds inward.
        let raw = quantize(kind.exact(x), out_fmt)?
            .raw()
            .clamp(lo_raw, hi_raw);
        let raw = match entries.last() {
            Some(&prev) if raw < prev => prev,
            _ => raw,
        };
        entries.push(raw);
    }
    Ok(ActTable {
        kind,
        mode,
        domain,
        out_fmt,
        entries,
    })
}

impl ActTable {
    /// 1024-entry piecewise-linear table over `[-8, 8]`.
    pub fn standard(kind: ActKind, out_fmt: FxFormat) -> Self {
        build_table(
            kind,
            DEFAULT_TABLE_SIZE,
            DEFAULT_DOMAIN,
            out_fmt,
            LookupMode::PiecewiseLinear,
        )
        .expect("default table parameters are valid")
    }

    pub fn kind(&self) -> ActKind {
        self.kind
    }

    pub fn mode(&self) -> LookupMode {
        self.mode
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn out_format(&self) -> FxFormat {
        self.out_fmt
    }

    pub fn entries(&self) -> &[i64] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> FxValue {
        FxValue::from_raw(self.entries[i], self.out_fmt).expect("entries fit their format")
    }

    /// Looks up `x`; the result is in the table's output format.
    pub fn eval(&self, x: FxValue) -> FxValue {
        let fmt = x.format();
        let lo = quantize(self.domain.0, fmt).expect("finite domain").raw() as i128;
        let hi = quantize(self.domain.1, fmt).expect("finite domain").raw() as i128;
        let last = self.entries.len() - 1;
        let raw = x.raw() as i128;
        if raw <= lo || hi <= lo {
            return self.entry(0);
        }
        if raw >= hi {
            return self.entry(last);
        }
        let span = hi - lo;
        let pos = (raw - lo) * last as i128;
        let index = (pos / span) as usize;
        let rem = pos % span;
        let out = match self.mode {
            LookupMode::NearestEntry => {
                if 2 * rem >= span {
                    self.entries[index + 1]
                } else {
                    self.entries[index]
                }
            }
            LookupMode::PiecewiseLinear => {
                let base = self.entries[index] as i128;
                let delta = self.entries[index + 1] as i128 - base;
                // delta >= 0 by monotonicity; round half up.
                (base + (2 * delta * rem + span).div_euclid(2 * span)) as i64
            }
        };
        FxValue::from_raw(out, self.out_fmt).expect("interpolant lies between entries")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tables serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, TableError> {
        serde_json::from_str(s).map_err(|e| TableError::Json(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q2_14() -> FxFormat {
        FxFormat::new(16, 14).unwrap()
    }

    fn lut_in() -> FxFormat {
        FxFormat::new(16, 11).unwrap()
    }

    #[test]
    fn two_entry_table_holds_endpoints() {
        let t = build_table(
            ActKind::Tanh,
            2,
            (-1.0, 1.0),
            q2_14(),
            LookupMode::PiecewiseLinear,
        )
        .unwrap();
        assert_eq!(
            t.entries()[0],
            quantize((-1f64).tanh(), q2_14()).unwrap().raw()
        );
        assert_eq!(
            t.entries()[1],
            quantize(1f64.tanh(), q2_14()).unwrap().raw()
        );
    }

    #[test]
    fn rejects_bad_shapes() {
        let f = q2_14();
        let pwl = LookupMode::PiecewiseLinear;
        assert!(matches!(
            build_table(ActKind::Tanh, 2, (1.0, 1.0), f, pwl),
            Err(TableError::DegenerateDomain(..))
        ));
        assert!(matches!(
            build_table(ActKind::Tanh, 2, (f64::NAN, 1.0), f, pwl),
            Err(TableError::DegenerateDomain(..))
        ));
        assert!(matches!(
            build_table(ActKind::Tanh, 1000, (-1.0, 1.0), f, pwl),
            Err(TableError::BadSize(1000))
        ));
        assert!(matches!(
            build_table(ActKind::Tanh, 1, (-1.0, 1.0), f, pwl),
            Err(TableError::BadSize(1))
        ));
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let t = ActTable::standard(ActKind::Sigmoid, q2_14());
        let y = t.eval(quantize(0.0, lut_in()).unwrap());
        assert!((y.to_f64() - 0.5).abs() <= q2_14().ulp());
        // Even sizes put zero between the two middle entries.
        let mid = (t.entry(511).to_f64() + t.entry(512).to_f64()) / 2.0;
        assert!((mid - 0.5).abs() <= q2_14().ulp());
    }

    #[test]
    fn inputs_clamp_to_end_entries() {
        let t = ActTable::standard(ActKind::Tanh, q2_14());
        assert_eq!(t.eval(quantize(8.0, lut_in()).unwrap()), t.entry(1023));
        assert_eq!(t.eval(FxValue::max(lut_in())), t.entry(1023));
        assert_eq!(t.eval(FxValue::min(lut_in())), t.entry(0));
    }

    #[test]
    fn pwl_error_sweep_within_budget() {
        // 1e5 uniform samples; the table is compared against the exact
        // function at the quantized input it actually sees.
        for kind in [ActKind::Sigmoid, ActKind::Tanh] {
            let t = ActTable::standard(kind, q2_14());
            let mut worst = 0.0f64;
            for i in 0..100_000 {
                let x = -8.0 + 16.0 * i as f64 / 99_999.0;
                let xq = quantize(x, lut_in()).unwrap();
                let err = (t.eval(xq).to_f64() - kind.exact(xq.to_f64())).abs();
                worst = worst.max(err);
            }
            assert!(worst <= 2f64.powi(-7), "{kind:?}: {worst}");
        }
    }

    #[test]
    fn tanh_is_odd_within_one_ulp() {
        for mode in [LookupMode::NearestEntry, LookupMode::PiecewiseLinear] {
            let t = build_table(ActKind::Tanh, 1024, (-8.0, 8.0), q2_14(), mode).unwrap();
            for raw in (-20_000i64..20_000).step_by(7) {
                let x = FxValue::from_raw(raw, lut_in()).unwrap();
                let nx = FxValue::from_raw(-raw, lut_in()).unwrap();
                assert!(
                    (t.eval(x).raw() + t.eval(nx).raw()).abs() <= 1,
                    "{mode:?} raw={raw}"
                );
            }
        }
    }

    #[test]
    fn json_dump_roundtrip_and_validation() {
        let t = build_table(
            ActKind::Sigmoid,
            64,
            (-4.0, 4.0),
            q2_14(),
            LookupMode::NearestEntry,
        )
        .unwrap();
        let back = ActTable::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);

        let mut v: serde_json::Value = serde_json::from_str(&t.to_json()).unwrap();
        v["entries"][10] = serde_json::json!(0);
        assert!(matches!(
            ActTable::from_json(&v.to_string()),
            Err(TableError::Json(_))
        ));
    }

    proptest! {
        #[test]
        fn eval_monotone_and_in_range(a in -32768i64..32768, b in -32768i64..32768, pwl in any::<bool>()) {
            let mode = if pwl { LookupMode::PiecewiseLinear } else { LookupMode::NearestEntry };
            for kind in [ActKind::Sigmoid, ActKind::Tanh] {
                let t = build_table(kind, 1024, (-8.0, 8.0), FxFormat::activation_default(), mode).unwrap();
                let (lo, hi) = (a.min(b), a.max(b));
                let ylo = t.eval(FxValue::from_raw(lo, lut_in()).unwrap());
                let yhi = t.eval(FxValue::from_raw(hi, lut_in()).unwrap());
                prop_assert!(ylo.raw() <= yhi.raw());
                let (rmin, rmax) = kind.range();
                prop_assert!(ylo.to_f64() >= rmin && yhi.to_f64() <= rmax);
            }
        }
    }
}
