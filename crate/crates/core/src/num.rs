//! Scalar abstraction shared by the latency model, the dirty-page process and
//! the analytic pre-copy oracle.
//!
//! The simulation clock, page counts and byte counts are integers. The only
//! quantities that are genuinely fractional are dirtying rates, their carry
//! accumulator and half-microsecond one-way latencies, and those are generic
//! over [`Scalar`] so the same code runs on `f32`, `f64` or an exact rational.

use std::fmt::{Debug, Display};

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Exact rational scalar used wherever results must match integer oracles bit for bit.
pub type Exact = Ratio<i128>;

/// Numeric type usable for rates, carries and latencies.
pub trait Scalar:
    Num + Copy + PartialOrd + Debug + Display + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Largest integral value not greater than `self`.
    fn floor(self) -> Self;

    /// Smallest integral value not less than `self`.
    fn ceil(self) -> Self;

    /// Converts a JSON-style floating point value, snapping to a nearby
    /// simple fraction for exact types.
    fn from_f64_lossy(v: f64) -> Option<Self>;

    fn from_int(v: u64) -> Self {
        Self::from_u64(v).expect("u64 must be representable")
    }

    /// `num / den` computed in the scalar domain.
    fn ratio(num: u64, den: u64) -> Self {
        Self::from_int(num) / Self::from_int(den)
    }

    /// Floor converted to an unsigned count. Negative values clamp to zero.
    fn floor_u64(self) -> u64 {
        if self < Self::zero() {
            return 0;
        }
        self.floor().to_u64().unwrap_or(u64::MAX)
    }

    fn ceil_u64(self) -> u64 {
        if self < Self::zero() {
            return 0;
        }
        self.ceil().to_u64().unwrap_or(u64::MAX)
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
}

impl Scalar for f64 {
    fn floor(self) -> Self {
        f64::floor(self)
    }

    fn ceil(self) -> Self {
        f64::ceil(self)
    }

    fn from_f64_lossy(v: f64) -> Option<Self> {
        v.is_finite().then_some(v)
    }
}

impl Scalar for f32 {
    fn floor(self) -> Self {
        f32::floor(self)
    }

    fn ceil(self) -> Self {
        f32::ceil(self)
    }

    fn from_f64_lossy(v: f64) -> Option<Self> {
        v.is_finite().then_some(v as f32)
    }
}

impl Scalar for Exact {
    fn floor(self) -> Self {
        Ratio::floor(&self)
    }

    fn ceil(self) -> Self {
        Ratio::ceil(&self)
    }

    fn from_f64_lossy(v: f64) -> Option<Self> {
        if !v.is_finite() {
            return None;
        }
        // Decimal literals from scenario files (0.1, 2.5, ...) should become
        // the obvious fraction, not the binary expansion.
        for den in [1i128, 10, 100, 1_000, 10_000, 100_000, 1_000_000] {
            let scaled = v * den as f64;
            if (scaled - scaled.round()).abs() < 1e-9 * den as f64 {
                return Some(Ratio::new(scaled.round() as i128, den));
            }
        }
        Ratio::<i128>::approximate_float(v)
    }
}
