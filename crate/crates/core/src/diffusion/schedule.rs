use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Forward-process coefficients. `alphas_bar[t]` is the cumulative product of
/// `1 - beta_s` for `s <= t`, with `alphas_bar[0] = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("noise schedule needs at least one step"));
        }
        if let Some((t, b)) = betas
            .iter()
            .enumerate()
            .find(|(_, &b)| !(b > 0.0 && b < 1.0))
        {
            return Err(Error::invalid(format!(
                "beta_{} = {b} is outside (0, 1)",
                t + 1
            )));
        }
        let mut alphas_bar = Vec::with_capacity(betas.len() + 1);
        alphas_bar.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alphas_bar.push(acc);
        }
        if alphas_bar.windows(2).any(|w| w[1] >= w[0]) || acc <= 0.0 {
            return Err(Error::invalid(
                "alpha_bar must decrease strictly and stay positive",
            ));
        }
        Ok(Self { betas, alphas_bar })
    }

    /// Betas spaced evenly from `beta_start` to `beta_end` over `steps` steps.
    pub fn linear(beta_start: f64, beta_end: f64, steps: usize) -> Result<Self> {
        let betas = match steps {
            0 => Vec::new(),
            1 => vec![beta_start],
            _ => (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                .collect(),
        };
        Self::from_betas(betas)
    }

    /// Number of training timesteps `T`.
    pub fn train_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alphas_bar[t]
    }

    /// The inference grid `0 = t_0 < t_1 < ... < t_S = T` with uniform stride.
    pub fn timesteps(&self, num_steps: usize) -> Result<Vec<usize>> {
        let t_max = self.train_steps();
        if num_steps > t_max {
            return Err(Error::invalid(format!(
                "{num_steps} inference steps exceed the {t_max} training steps"
            )));
        }
        if num_steps == 0 {
            return Ok(vec![0]);
        }
        Ok((0..=num_steps).map(|i| i * t_max / num_steps).collect())
    }
}

impl Default for NoiseSchedule {
    /// Linear betas from 1e-4 to 0.02 over 1000 steps.
    fn default() -> Self {
        Self::linear(1e-4, 0.02, 1000).expect("default schedule is valid")
    }
}
