//! Two's-complement Q-format arithmetic with saturation.
//!
//! Values carry their [`FxFormat`]; every operation checks format
//! compatibility instead of silently rescaling. Rounding is
//! round-to-nearest-even everywhere a value loses fraction bits, and
//! overflow always saturates to the format's range.
//!
//! Datapath formats (activations, weights, table outputs) are 8 to 32 bits
//! wide. Accumulators may be up to 64 bits so that a full-precision product
//! of two 32-bit operands fits without rescaling.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Narrowest format the library accepts.
pub const MIN_TOTAL_BITS: u8 = 8;
/// Widest datapath (non-accumulator) format.
pub const MAX_DATAPATH_BITS: u8 = 32;
/// Widest accumulator format.
pub const MAX_ACCUMULATOR_BITS: u8 = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FxError {
    #[error("invalid format: {total} total bits with {frac} fraction bits ({reason})")]
    InvalidFormat {
        total: u8,
        frac: u8,
        reason: &'static str,
    },
    #[error("format mismatch: {left} vs {right}")]
    FormatMismatch { left: FxFormat, right: FxFormat },
    #[error("accumulator {acc} cannot hold the product of {a} and {b} without rescaling")]
    FractionAlignment {
        acc: FxFormat,
        a: FxFormat,
        b: FxFormat,
    },
    #[error("cannot quantize non-finite value {0}")]
    NotFinite(f64),
    #[error("raw value {raw} does not fit in {fmt}")]
    RawOutOfRange { raw: i64, fmt: FxFormat },
    #[error("bad format descriptor {0:?}: expected Q<int>.<frac>/<total>")]
    Parse(String),
}

/// A signed two's-complement fixed-point format.
///
/// The representable range is
/// `[-2^(total-1-frac), 2^(total-1-frac) - 2^-frac]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FxFormat {
    total_bits: u8,
    frac_bits: u8,
}

impl FxFormat {
    /// A datapath format, 8 to 32 bits wide.
    pub fn new(total_bits: u8, frac_bits: u8) -> Result<Self, FxError> {
        Self::checked(total_bits, frac_bits, MAX_DATAPATH_BITS)
    }

    /// An accumulator format, 8 to 64 bits wide.
    pub fn accumulator(total_bits: u8, frac_bits: u8) -> Result<Self, FxError> {
        Self::checked(total_bits, frac_bits, MAX_ACCUMULATOR_BITS)
    }

    fn checked(total: u8, frac: u8, max_total: u8) -> Result<Self, FxError> {
        if total < MIN_TOTAL_BITS || total > max_total {
            return Err(FxError::InvalidFormat {
                total,
                frac,
                reason: "total width out of range",
            });
        }
        if frac >= total {
            return Err(FxError::InvalidFormat {
                total,
                frac,
                reason: "no room for the sign bit",
            });
        }
        Ok(Self {
            total_bits: total,
            frac_bits: frac,
        })
    }

    /// Q2.6 over 8 bits, the default activation format.
    pub fn activation_default() -> Self {
        Self {
            total_bits: 8,
            frac_bits: 6,
        }
    }

    /// Q2.14 over 16 bits, the default weight format.
    pub fn weight_default() -> Self {
        Self {
            total_bits: 16,
            frac_bits: 14,
        }
    }

    /// Full-precision accumulator for products of `a` and `b`.
    ///
    /// 32 bits wide when that leaves at least seven integer bits, otherwise
    /// 64 bits.
    pub fn accumulator_for(a: FxFormat, b: FxFormat) -> Self {
        let frac = a.frac_bits + b.frac_bits;
        let total = if frac + 8 <= 32 { 32 } else { 64 };
        Self {
            total_bits: total,
            frac_bits: frac.min(total - 1),
        }
    }

    pub fn total_bits(self) -> u8 {
        self.total_bits
    }

    pub fn frac_bits(self) -> u8 {
        self.frac_bits
    }

    /// Integer bits excluding the sign bit.
    pub fn int_bits(self) -> u8 {
        self.total_bits - 1 - self.frac_bits
    }

    pub fn is_datapath(self) -> bool {
        self.total_bits <= MAX_DATAPATH_BITS
    }

    pub fn max_raw(self) -> i64 {
        if self.total_bits == 64 {
            i64::MAX
        } else {
            (1i64 << (self.total_bits - 1)) - 1
        }
    }

    pub fn min_raw(self) -> i64 {
        if self.total_bits == 64 {
            i64::MIN
        } else {
            -(1i64 << (self.total_bits - 1))
        }
    }

    /// Weight of one least-significant bit.
    pub fn ulp(self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn max_value(self) -> f64 {
        self.max_raw() as f64 * self.ulp()
    }

    pub fn min_value(self) -> f64 {
        self.min_raw() as f64 * self.ulp()
    }

    fn saturate(self, raw: i128) -> i64 {
        raw.clamp(self.min_raw() as i128, self.max_raw() as i128) as i64
    }
}

impl fmt::Display for FxFormat {
    /// `Q<int>.<frac>/<total>` where `<int>` counts the sign bit.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Q{}.{}/{}",
            self.total_bits - self.frac_bits,
            self.frac_bits,
            self.total_bits
        )
    }
}

impl FromStr for FxFormat {
    type Err = FxError;

    /// Parses `Q<int>.<frac>/<total>`.
    ///
    /// The explicit total width is authoritative. `<int>` may count the
    /// sign bit (`Q2.14/16`) or not (`Q8.23/32`); anything else is
    /// rejected as inconsistent.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FxError::Parse(s.to_string());
        let body = s.trim().strip_prefix('Q').ok_or_else(bad)?;
        let (q, total) = body.split_once('/').ok_or_else(bad)?;
        let (int, frac) = q.split_once('.').ok_or_else(bad)?;
        let int: u8 = int.parse().map_err(|_| bad())?;
        let frac: u8 = frac.parse().map_err(|_| bad())?;
        let total: u8 = total.parse().map_err(|_| bad())?;
        let declared = int as u16 + frac as u16;
        if declared != total as u16 && declared + 1 != total as u16 {
            return Err(bad());
        }
        Self::accumulator(total, frac)
    }
}

impl TryFrom<String> for FxFormat {
    type Error = FxError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<FxFormat> for String {
    fn from(f: FxFormat) -> String {
        f.to_string()
    }
}

/// A fixed-point number: `raw * 2^-frac_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FxValue {
    raw: i64,
    fmt: FxFormat,
}

impl FxValue {
    pub fn from_raw(raw: i64, fmt: FxFormat) -> Result<Self, FxError> {
        if raw < fmt.min_raw() || raw > fmt.max_raw() {
            return Err(FxError::RawOutOfRange { raw, fmt });
        }
        Ok(Self { raw, fmt })
    }

    pub fn zero(fmt: FxFormat) -> Self {
        Self { raw: 0, fmt }
    }

    /// Largest representable value.
    pub fn max(fmt: FxFormat) -> Self {
        Self {
            raw: fmt.max_raw(),
            fmt,
        }
    }

    pub fn min(fmt: FxFormat) -> Self {
        Self {
            raw: fmt.min_raw(),
            fmt,
        }
    }

    pub fn raw(self) -> i64 {
        self.raw
    }

    pub fn format(self) -> FxFormat {
        self.fmt
    }

    pub fn to_f64(self) -> f64 {
        self.raw as f64 * self.fmt.ulp()
    }
}

/// Round-to-nearest-even of `x * 2^frac`, saturated to the format.
pub fn quantize(x: f64, fmt: FxFormat) -> Result<FxValue, FxError> {
    if x.is_nan() {
        return Err(FxError::NotFinite(x));
    }
    // Scaling by a power of two is exact, so the only rounding is here.
    let scaled = (x * (fmt.frac_bits as f64).exp2()).round_ties_even();
    let raw = if scaled >= fmt.max_raw() as f64 {
        fmt.max_raw()
    } else if scaled <= fmt.min_raw() as f64 {
        fmt.min_raw()
    } else {
        scaled as i64
    };
    Ok(FxValue { raw, fmt })
}

pub fn dequantize(v: FxValue) -> f64 {
    v.to_f64()
}

/// Arithmetic right shift with round-to-nearest-even.
fn shift_right_rne(raw: i128, shift: u32) -> i128 {
    if shift == 0 {
        return raw;
    }
    let floor = raw >> shift;
    let rem = raw - (floor << shift);
    let half = 1i128 << (shift - 1);
    if rem > half || (rem == half && floor & 1 == 1) {
        floor + 1
    } else {
        floor
    }
}

/// Re-expresses a wide intermediate with `frac` fraction bits in `fmt`.
fn rescale(raw: i128, frac: u8, fmt: FxFormat) -> FxValue {
    let shifted = if frac >= fmt.frac_bits {
        shift_right_rne(raw, (frac - fmt.frac_bits) as u32)
    } else {
        // Left shifts can only overflow, never lose precision.
        let up = (fmt.frac_bits - frac) as u32;
        raw.checked_shl(up)
            .filter(|v| v >> up == raw)
            .unwrap_or(if raw < 0 { i128::MIN } else { i128::MAX })
    };
    FxValue {
        raw: fmt.saturate(shifted),
        fmt,
    }
}

/// Converts `v` into `fmt` (rounding to nearest-even, saturating).
pub fn requantize(v: FxValue, fmt: FxFormat) -> FxValue {
    rescale(v.raw as i128, v.fmt.frac_bits, fmt)
}

fn same_format(a: FxValue, b: FxValue) -> Result<FxFormat, FxError> {
    if a.fmt != b.fmt {
        return Err(FxError::FormatMismatch {
            left: a.fmt,
            right: b.fmt,
        });
    }
    Ok(a.fmt)
}

/// Saturating add in the shared format.
pub fn fx_add(a: FxValue, b: FxValue) -> Result<FxValue, FxError> {
    let fmt = same_format(a, b)?;
    Ok(FxValue {
        raw: fmt.saturate(a.raw as i128 + b.raw as i128),
        fmt,
    })
}

/// Saturating subtract in the shared format.
pub fn fx_sub(a: FxValue, b: FxValue) -> Result<FxValue, FxError> {
    let fmt = same_format(a, b)?;
    Ok(FxValue {
        raw: fmt.saturate(a.raw as i128 - b.raw as i128),
        fmt,
    })
}

/// Product of `a` and `b` rounded into `out`.
pub fn fx_mul(a: FxValue, b: FxValue, out: FxFormat) -> FxValue {
    let product = a.raw as i128 * b.raw as i128;
    rescale(product, a.fmt.frac_bits + b.fmt.frac_bits, out)
}

/// `acc + a * b` with the product kept at full precision.
///
/// The accumulator must carry exactly `a.frac + b.frac` fraction bits;
/// the sum saturates to the accumulator's range.
pub fn fx_mac(acc: FxValue, a: FxValue, b: FxValue) -> Result<FxValue, FxError> {
    if acc.fmt.frac_bits != a.fmt.frac_bits + b.fmt.frac_bits {
        return Err(FxError::FractionAlignment {
            acc: acc.fmt,
            a: a.fmt,
            b: b.fmt,
        });
    }
    let sum = acc.raw as i128 + a.raw as i128 * b.raw as i128;
    Ok(FxValue {
        raw: acc.fmt.saturate(sum),
        fmt: acc.fmt,
    })
}

/// In-order dot product `acc + Σ a_i b_i`, saturating after every MAC
/// like the hardware post-adder does.
pub fn fx_dot(acc: FxValue, a: &[FxValue], b: &[FxValue]) -> Result<FxValue, FxError> {
    a.iter()
        .zip(b)
        .try_fold(acc, |acc, (&x, &y)| fx_mac(acc, x, y))
}
