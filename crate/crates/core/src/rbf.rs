//! Gaussian radial-basis encoding of scalar ratings.
//!
//! A rating `x` becomes the vector of responses `exp(-(x - c_k)^2 / sigma^2)`
//! to an evenly spaced grid of centers `c_k`; decoding picks the center with
//! the largest response.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("rating {value} outside [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },
    #[error("expected a {expected}-component vector, got {actual}")]
    WrongDimension { expected: usize, actual: usize },
    #[error("invalid codec config: {0}")]
    InvalidConfig(&'static str),
}

const RANGE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbfConfig {
    pub num_centers: usize,
    pub range_min: f64,
    pub range_max: f64,
    /// Kernel width; `None` means one center spacing.
    pub sigma: Option<f64>,
    /// Half-width of the uniform noise added to a rating before encoding.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for RbfConfig {
    fn default() -> Self {
        Self {
            num_centers: 16,
            range_min: 1.0,
            range_max: 5.0,
            sigma: None,
            noise_scale: 1e-4,
            seed: 0,
        }
    }
}

impl RbfConfig {
    pub fn validate(&self) -> Result<(), CodecError> {
        if self.num_centers < 2 {
            return Err(CodecError::InvalidConfig("num_centers must be at least 2"));
        }
        if !(self.range_max > self.range_min) || !self.range_min.is_finite() || !self.range_max.is_finite() {
            return Err(CodecError::InvalidConfig("range_max must exceed range_min"));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(CodecError::InvalidConfig("sigma must be positive"));
            }
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(CodecError::InvalidConfig("noise_scale must be nonnegative"));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        (self.range_max - self.range_min) / (self.num_centers - 1) as f64
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or_else(|| self.spacing())
    }
}

/// Encoder/decoder bound to one grid of centers.
#[derive(Debug, Clone)]
pub struct RbfCodec<T> {
    centers: Vec<T>,
    inv_sigma_sq: T,
    range: (T, T),
    noise_scale: T,
}

impl<T: Scalar> RbfCodec<T> {
    pub fn new(cfg: &RbfConfig) -> Result<Self, CodecError> {
        cfg.validate()?;
        let sigma = T::of(cfg.sigma());
        Ok(Self {
            centers: centers(cfg),
            inv_sigma_sq: T::one() / (sigma * sigma),
            range: (T::of(cfg.range_min), T::of(cfg.range_max)),
            noise_scale: T::of(cfg.noise_scale),
        })
    }

    pub fn centers(&self) -> &[T] {
        &self.centers
    }

    pub fn dim(&self) -> usize {
        self.centers.len()
    }

    fn check_range(&self, x: T) -> Result<(), CodecError> {
        let tol = T::of(RANGE_TOLERANCE);
        let (lo, hi) = self.range;
        if x.is_finite() && x >= lo - tol && x <= hi + tol {
            Ok(())
        } else {
            Err(CodecError::OutOfRange {
                value: x.to_f64().unwrap_or(f64::NAN),
                min: lo.to_f64_lossless(),
                max: hi.to_f64_lossless(),
            })
        }
    }

    fn respond(&self, x: T) -> Vec<T> {
        let x = x.max(self.range.0).min(self.range.1);
        self.centers
            .iter()
            .map(|&c| {
                let d = x - c;
                (-(d * d) * self.inv_sigma_sq).exp()
            })
            .collect()
    }

    /// Noiseless encoding.
    pub fn encode(&self, x: T) -> Result<Vec<T>, CodecError> {
        self.check_range(x)?;
        Ok(self.respond(x))
    }

    /// Encoding of `x + eta`, `eta ~ U[-noise_scale, noise_scale]`, clamped back into range.
    pub fn encode_noisy<R: Rng + ?Sized>(&self, x: T, rng: &mut R) -> Result<Vec<T>, CodecError> {
        self.check_range(x)?;
        let s = self.noise_scale.to_f64_lossless();
        let eta = if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 };
        Ok(self.respond(x + T::of(eta)))
    }

    /// Value of the strongest center; ties go to the lower index.
    pub fn decode(&self, t: &[T]) -> Result<T, CodecError> {
        if t.len() != self.centers.len() {
            return Err(CodecError::WrongDimension {
                expected: self.centers.len(),
                actual: t.len(),
            });
        }
        let mut best = 0;
        for (k, &v) in t.iter().enumerate().skip(1) {
            if v > t[best] {
                best = k;
            }
        }
        Ok(self.centers[best])
    }
}

/// Evenly spaced centers from `range_min` to `range_max` inclusive.
pub fn centers<T: Scalar>(cfg: &RbfConfig) -> Vec<T> {
    let n = cfg.num_centers;
    let (lo, hi) = (cfg.range_min, cfg.range_max);
    (0..n)
        .map(|k| {
            if k + 1 == n {
                T::of(hi)
            } else {
                T::of(lo + k as f64 * (hi - lo) / (n - 1) as f64)
            }
        })
        .collect()
}
