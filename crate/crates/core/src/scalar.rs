use num_traits::{Float, FloatConst, NumAssign};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftNum;

/// Floating-point scalar the spectral machinery is generic over: f32 or f64.
pub trait Scalar:
    Float
    + FloatConst
    + NumAssign
    + FftNum
    + Default
    + Send
    + Sync
    + std::fmt::Display
    + std::fmt::LowerExp
    + 'static
{
    /// Lossless in f64, rounds in f32.
    fn of_f64(x: f64) -> Self;

    fn as_f64(self) -> f64;

    /// One standard normal variate.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// 2*pi
    fn two_pi() -> Self {
        Self::PI() + Self::PI()
    }

    /// 4*pi^2, the square of the torus frequency factor.
    fn four_pi_sq() -> Self {
        Self::two_pi() * Self::two_pi()
    }
}

impl Scalar for f32 {
    fn of_f64(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}

impl Scalar for f64 {
    fn of_f64(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
}
