use serde::{Deserialize, Serialize};

use super::NoiseSchedule;
use crate::{Error, Result};

/// Flattened bottleneck activation of a denoiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HVector {
    values: Vec<f64>,
}

impl HVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: 0, column: i });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub epsilon: Vec<f64>,
    pub h: HVector,
}

/// A noise predictor with an addressable bottleneck.
///
/// Implementations must be deterministic, and `predict_with_h(x, t, h)` with the
/// `h` returned by `predict(x, t)` must give the same epsilon as `predict`.
pub trait Denoiser: Sync {
    fn predict(&self, x: &[f64], t: usize) -> Result<Prediction>;

    fn predict_with_h(&self, x: &[f64], t: usize, h: &HVector) -> Result<Vec<f64>>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict(&self, x: &[f64], t: usize) -> Result<Prediction> {
        (**self).predict(x, t)
    }

    fn predict_with_h(&self, x: &[f64], t: usize, h: &HVector) -> Result<Vec<f64>> {
        (**self).predict_with_h(x, t, h)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn predict(&self, x: &[f64], t: usize) -> Result<Prediction> {
        (**self).predict(x, t)
    }

    fn predict_with_h(&self, x: &[f64], t: usize, h: &HVector) -> Result<Vec<f64>> {
        (**self).predict_with_h(x, t, h)
    }
}

/// Bayes-optimal noise predictor for data distributed as `N(mu, sigma2 * I)`.
///
/// With `a = alpha_bar(t)` the posterior mean is
/// `E[x0 | xt] = (sqrt(a) sigma2 xt + (1 - a) mu) / (a sigma2 + 1 - a)` and the
/// predicted noise is `(xt - sqrt(a) E[x0 | xt]) / sqrt(1 - a)`. The h-vector is
/// `mu`; overriding h substitutes it for `mu`.
#[derive(Debug, Clone)]
pub struct AnalyticGaussianDenoiser {
    mu: Vec<f64>,
    sigma2: f64,
    schedule: NoiseSchedule,
}

impl AnalyticGaussianDenoiser {
    pub fn new(mu: Vec<f64>, sigma2: f64, schedule: NoiseSchedule) -> Result<Self> {
        if mu.is_empty() || mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "analytic denoiser mean must be nonempty and finite",
            ));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma2 = {sigma2} must be positive"
            )));
        }
        Ok(Self {
            mu,
            sigma2,
            schedule,
        })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn epsilon(&self, x: &[f64], t: usize, mean: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mu.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mu.len(),
                found: x.len(),
            });
        }
        if mean.len() != self.mu.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mu.len(),
                found: mean.len(),
            });
        }
        if t > self.schedule.train_steps() {
            return Err(Error::invalid(format!("timestep {t} beyond schedule")));
        }
        let a = self.schedule.alpha_bar(t);
        // Algebraically equal to the posterior-mean form above; stays finite at a = 1.
        let scale = (1.0 - a).sqrt() / (a * self.sigma2 + 1.0 - a);
        let sa = a.sqrt();
        Ok(x.iter()
            .zip(mean)
            .map(|(&xi, &mi)| scale * (xi - sa * mi))
            .collect())
    }
}

impl Denoiser for AnalyticGaussianDenoiser {
    fn predict(&self, x: &[f64], t: usize) -> Result<Prediction> {
        Ok(Prediction {
            epsilon: self.epsilon(x, t, &self.mu)?,
            h: HVector {
                values: self.mu.clone(),
            },
        })
    }

    fn predict_with_h(&self, x: &[f64], t: usize, h: &HVector) -> Result<Vec<f64>> {
        self.epsilon(x, t, h.values())
    }
}
