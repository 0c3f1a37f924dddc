//! Small fixed-architecture neural network core: LSTM stacks with BPTT,
//! linear and 1-D convolution layers, losses, Adam and cosine annealing.
//!
//! All layers are generic over [`Scalar`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference gradient checks.

pub mod adam;
pub mod conv1d;
pub mod linear;
pub mod loss;
pub mod lstm;
pub mod params;
pub mod schedule;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

pub use adam::{Adam, AdamConfig};
pub use conv1d::{Conv1d, Conv1dCache};
pub use linear::Linear;
pub use loss::{l1_loss, softmax_xent};
pub use lstm::{LstmCache, LstmStack, LstmState};
pub use params::ParamSet;
pub use schedule::{cosine_lr, LrSchedule};

pub trait Scalar:
    Float
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub(crate) fn uniform<F: Scalar, R: Rng>(rng: &mut R, bound: f64) -> F {
    F::of(rng.random_range(-bound..bound))
}
