//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! Losses, similarity scores, metrics and the mock backends are written
//! against [`Real`] so the same code runs in `f32` and `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar usable throughout the crate.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Panics only if the target type cannot hold
    /// a finite value, which never happens for `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + Sum
        + Default
        + Debug
        + Display
        + Serialize
        + DeserializeOwned
        + Send
        + Sync
        + 'static
{
}

/// `ln(1 + Σ exp(z_i))` with the max-shift applied before exponentiation.
///
/// The implicit `1` is the `exp(0)` term, so the shift is `max(0, max z_i)`.
pub fn log1p_sum_exp<F: Real>(terms: impl IntoIterator<Item = F> + Clone) -> F {
    let shift = terms
        .clone()
        .into_iter()
        .fold(F::zero(), |acc, z| if z > acc { z } else { acc });
    let mut acc = (-shift).exp();
    for z in terms {
        acc = acc + (z - shift).exp();
    }
    shift + acc.ln()
}

/// `ln Σ exp(z_i)` over a nonempty slice, stabilized by the slice maximum.
pub fn log_sum_exp<F: Real>(terms: &[F]) -> F {
    let shift = terms
        .iter()
        .copied()
        .fold(F::neg_infinity(), |acc, z| if z > acc { z } else { acc });
    if shift == F::neg_infinity() {
        return shift;
    }
    let acc: F = terms.iter().map(|&z| (z - shift).exp()).sum();
    shift + acc.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log1p_sum_exp_matches_naive_at_small_magnitudes() {
        let zs = [0.3_f64, -1.2, 2.5];
        let naive = (1.0 + zs.iter().map(|z| z.exp()).sum::<f64>()).ln();
        assert!((log1p_sum_exp(zs) - naive).abs() < 1e-14);
        assert_eq!(log1p_sum_exp(Vec::<f64>::new()), 0.0);
    }

    #[test]
    fn log1p_sum_exp_survives_large_inputs() {
        let v = log1p_sum_exp([1000.0_f64, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-9);
        let v32 = log1p_sum_exp([200.0_f32]);
        assert!(v32.is_finite());
    }

    #[test]
    fn log_sum_exp_uniform() {
        let v = log_sum_exp(&[3.0_f64; 4]);
        assert!((v - (3.0 + 4f64.ln())).abs() < 1e-14);
    }
}
