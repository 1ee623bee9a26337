//! Scalar abstraction shared by every law evaluator.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Bound on the argument of every exponential evaluated by a law.
pub const EXP_CLAMP: f64 = 40.0;

/// Floating-point type a law can be evaluated in (`f32` or `f64`).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Tolerance on `|sum(r) - 1|` for a mixture of `len` entries.
    ///
    /// 1e-9 in `f64`; widened to a few ulps per entry when the type cannot resolve 1e-9.
    fn simplex_tolerance(len: usize) -> Self {
        let ulps = Self::epsilon() * Self::lit(8.0 * len.max(1) as f64);
        ulps.max(Self::lit(1e-9))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `exp(x)` with `x` clamped to `[-EXP_CLAMP, EXP_CLAMP]`.
#[inline]
pub fn clamped_exp<F: Scalar>(x: F) -> F {
    let bound = F::lit(EXP_CLAMP);
    x.max(-bound).min(bound).exp()
}

/// Whether `clamped_exp` saturates at `x` (its derivative is zero there).
#[inline]
pub fn exp_saturates<F: Scalar>(x: F) -> bool {
    x.abs() > F::lit(EXP_CLAMP)
}

/// Display helper: perplexity from a loss in nats per token.
#[inline]
pub fn perplexity<F: Scalar>(loss: F) -> F {
    loss.exp()
}
