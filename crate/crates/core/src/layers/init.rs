use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Glorot (Xavier) uniform sampler on `[-a, a]` with
/// `a = sqrt(6 / (fan_in + fan_out))`.
///
/// Convolutions pass the receptive field in both fans:
/// `fan_in = kh·kw·C_in`, `fan_out = kh·kw·C_out`.
#[derive(Debug, Clone, Copy)]
pub struct GlorotUniform {
    bound: f64,
    dist: Uniform<f64>,
}

impl GlorotUniform {
    pub fn new(fan_in: usize, fan_out: usize) -> Result<Self> {
        if fan_in == 0 || fan_out == 0 {
            return Err(Error::Invalid(format!(
                "glorot fans must be positive (fan_in={fan_in}, fan_out={fan_out})"
            )));
        }
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Ok(Self {
            bound,
            dist: Uniform::new_inclusive(-bound, bound),
        })
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.dist.sample(rng)
    }

    pub fn fill<T: Scalar, R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<T> {
        (0..count)
            .map(|_| T::from_f64_lossy(self.sample(rng)))
            .collect()
    }
}
