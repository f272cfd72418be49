use std::fmt::Debug;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type the network runs in: `f32` for training, `f64` for gradient
/// checks.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Default
    + Send
    + Sync
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + 'static
{
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }

    /// `exp` used inside hot loops. Defaults to the libm routine.
    #[inline(always)]
    fn fast_exp(self) -> Self {
        self.exp()
    }
}

/// Adding and subtracting 1.5·2^23 rounds to the nearest integer.
const ROUND_MAGIC: f32 = 12_582_912.0;

impl Real for f32 {
    /// Range reduction plus a degree-6 polynomial; relative error below 2e-7
    /// and branch-free, so loops over slices vectorize.
    #[inline(always)]
    fn fast_exp(self) -> f32 {
        let x = self.clamp(-87.0, 88.0);
        let shifted = x * std::f32::consts::LOG2_E + ROUND_MAGIC;
        let n = shifted - ROUND_MAGIC;
        let ni = shifted.to_bits().wrapping_sub(ROUND_MAGIC.to_bits());
        let r = x - n * 0.693_145_75 - n * 1.428_606_8e-6;
        let p = 1.0
            + r * (1.0
                + r * (0.5
                    + r * (0.166_666_67
                        + r * (0.041_666_668 + r * (0.008_333_334 + r * 0.001_388_889)))));
        let bits = ni.wrapping_add(127) << 23;
        p * f32::from_bits(bits)
    }
}

impl Real for f64 {}
