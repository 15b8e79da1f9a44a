use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Denoiser, HVector, NoiseSchedule};
use crate::model::RasterImage;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    /// Weight of the content image's h-vector.
    pub gamma: f64,
    /// DDIM inference steps (uniform stride over the training schedule).
    pub num_steps: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            gamma: 0.7,
            num_steps: 50,
        }
    }
}

fn check_finite(x: &[f64], timestep: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { timestep })
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Deterministic DDIM inversion: walks the inference grid upward from `x0`,
/// predicting noise at the current state and timestep.
pub fn ddim_invert<D: Denoiser + ?Sized>(
    x0: &[f64],
    denoiser: &D,
    schedule: &NoiseSchedule,
    num_steps: usize,
) -> Result<Vec<f64>> {
    let grid = schedule.timesteps(num_steps)?;
    check_finite(x0, 0)?;
    let mut x = x0.to_vec();
    for w in grid.windows(2) {
        let (t, next) = (w[0], w[1]);
        let eps = denoiser.predict(&x, t)?.epsilon;
        check_len(x.len(), eps.len())?;
        let (a_t, a_n) = (schedule.alpha_bar(t), schedule.alpha_bar(next));
        let (sa_t, sb_t) = (a_t.sqrt(), (1.0 - a_t).sqrt());
        let (sa_n, sb_n) = (a_n.sqrt(), (1.0 - a_n).sqrt());
        for (xi, &e) in x.iter_mut().zip(&eps) {
            let x0_pred = (*xi - sb_t * e) / sa_t;
            *xi = sa_n * x0_pred + sb_n * e;
        }
        check_finite(&x, next)?;
    }
    Ok(x)
}

/// `(1 - gamma) * h1 + gamma * h2`, exact at both endpoints and when `h1 == h2`.
pub fn interpolate_h(h1: &HVector, h2: &HVector, gamma: f64) -> Result<HVector> {
    check_len(h1.len(), h2.len())?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma = {gamma} is outside [0, 1]")));
    }
    let values = h1
        .values()
        .iter()
        .zip(h2.values())
        .map(|(&a, &b)| {
            if a == b {
                a
            } else {
                (1.0 - gamma) * a + gamma * b
            }
        })
        .collect();
    HVector::new(values)
}

/// Asymmetric reverse process. At each grid step the predicted-x0 term uses the
/// noise predicted with `h_gen` injected, while the direction term uses the
/// unmodified prediction:
/// `x_prev = sqrt(a_prev) * (x - sqrt(1 - a) * eps_h) / sqrt(a) + sqrt(1 - a_prev) * eps`.
pub fn ddim_generate<D: Denoiser + ?Sized>(
    x_t: &[f64],
    h_gen: &HVector,
    denoiser: &D,
    schedule: &NoiseSchedule,
    num_steps: usize,
) -> Result<Vec<f64>> {
    reverse(x_t, Some(h_gen), denoiser, schedule, num_steps)
}

/// Plain deterministic DDIM sampling from `x_t` down to `t = 0`.
pub fn ddim_reverse<D: Denoiser + ?Sized>(
    x_t: &[f64],
    denoiser: &D,
    schedule: &NoiseSchedule,
    num_steps: usize,
) -> Result<Vec<f64>> {
    reverse(x_t, None, denoiser, schedule, num_steps)
}

fn reverse<D: Denoiser + ?Sized>(
    x_t: &[f64],
    h_gen: Option<&HVector>,
    denoiser: &D,
    schedule: &NoiseSchedule,
    num_steps: usize,
) -> Result<Vec<f64>> {
    let grid = schedule.timesteps(num_steps)?;
    check_finite(x_t, *grid.last().expect("grid is nonempty"))?;
    let mut x = x_t.to_vec();
    for w in grid.windows(2).rev() {
        let (prev, t) = (w[0], w[1]);
        let plain = denoiser.predict(&x, t)?.epsilon;
        let injected = match h_gen {
            Some(h) => denoiser.predict_with_h(&x, t, h)?,
            None => plain.clone(),
        };
        check_len(x.len(), plain.len())?;
        check_len(x.len(), injected.len())?;
        let (a_t, a_p) = (schedule.alpha_bar(t), schedule.alpha_bar(prev));
        let (sa_t, sb_t) = (a_t.sqrt(), (1.0 - a_t).sqrt());
        let (sa_p, sb_p) = (a_p.sqrt(), (1.0 - a_p).sqrt());
        for i in 0..x.len() {
            let predicted_x0 = (x[i] - sb_t * injected[i]) / sa_t;
            x[i] = sa_p * predicted_x0 + sb_p * plain[i];
        }
        check_finite(&x, prev)?;
    }
    Ok(x)
}

/// One generated sample for an ordered (style, content) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSample {
    pub id: String,
    pub style_id: String,
    pub content_id: String,
    pub x0: Vec<f64>,
}

struct Inverted {
    latent: Vec<f64>,
    h: HVector,
}

fn invert_all<D: Denoiser + ?Sized>(
    items: &[(String, Vec<f64>)],
    denoiser: &D,
    schedule: &NoiseSchedule,
    cfg: &DiffusionConfig,
) -> Result<Vec<Inverted>> {
    let t_last = *schedule
        .timesteps(cfg.num_steps)?
        .last()
        .expect("grid is nonempty");
    items
        .par_iter()
        .map(|(_, x0)| {
            let latent = ddim_invert(x0, denoiser, schedule, cfg.num_steps)?;
            let h = denoiser.predict(&latent, t_last)?.h;
            Ok(Inverted { latent, h })
        })
        .collect()
}

/// Generates one sample per ordered `(style, content)` pair, style-major.
///
/// Both images are inverted; the content image's h-vector is blended in with
/// weight `gamma`, and generation starts from the style latent.
pub fn generate_diffusion_pairs<D: Denoiser + ?Sized>(
    style: &[(String, Vec<f64>)],
    content: &[(String, Vec<f64>)],
    cfg: &DiffusionConfig,
    denoiser: &D,
    schedule: &NoiseSchedule,
) -> Result<Vec<DiffusionSample>> {
    if style.is_empty() || content.is_empty() {
        return Err(Error::invalid(
            "diffusion generation needs style and content images",
        ));
    }
    if !(0.0..=1.0).contains(&cfg.gamma) {
        return Err(Error::invalid(format!(
            "gamma = {} is outside [0, 1]",
            cfg.gamma
        )));
    }
    let style_inv = invert_all(style, denoiser, schedule, cfg)?;
    let content_inv = invert_all(content, denoiser, schedule, cfg)?;
    let pairs: Vec<(usize, usize)> = (0..style.len())
        .flat_map(|s| (0..content.len()).map(move |c| (s, c)))
        .collect();
    pairs
        .par_iter()
        .map(|&(s, c)| {
            let h_gen = interpolate_h(&style_inv[s].h, &content_inv[c].h, cfg.gamma)?;
            let x0 = ddim_generate(
                &style_inv[s].latent,
                &h_gen,
                denoiser,
                schedule,
                cfg.num_steps,
            )?;
            Ok(DiffusionSample {
                id: format!("diffusion_{}_{}", style[s].0, content[c].0),
                style_id: style[s].0.clone(),
                content_id: content[c].0.clone(),
                x0,
            })
        })
        .collect()
}

/// Image front end for [`generate_diffusion_pairs`]: pixels are mapped to `[-1, 1]`
/// and back. All images must share one size.
pub fn generate_diffusion_set<D: Denoiser + ?Sized>(
    style: &[(String, RasterImage)],
    content: &[(String, RasterImage)],
    cfg: &DiffusionConfig,
    denoiser: &D,
    schedule: &NoiseSchedule,
) -> Result<Vec<(String, RasterImage)>> {
    let first = style
        .first()
        .or(content.first())
        .ok_or_else(|| Error::invalid("diffusion generation needs style and content images"))?;
    let (w, h) = (first.1.width(), first.1.height());
    let to_states = |items: &[(String, RasterImage)]| -> Result<Vec<(String, Vec<f64>)>> {
        items
            .iter()
            .map(|(id, img)| {
                if (img.width(), img.height()) != (w, h) {
                    return Err(Error::Image(format!(
                        "{id} is {}x{}, expected {w}x{h}",
                        img.width(),
                        img.height()
                    )));
                }
                Ok((id.clone(), img.to_signed_unit()))
            })
            .collect()
    };
    let samples = generate_diffusion_pairs(
        &to_states(style)?,
        &to_states(content)?,
        cfg,
        denoiser,
        schedule,
    )?;
    samples
        .into_iter()
        .map(|s| Ok((s.id, RasterImage::from_signed_unit(w, h, &s.x0)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::AnalyticGaussianDenoiser;

    fn setup(dim: usize) -> (AnalyticGaussianDenoiser, NoiseSchedule) {
        let schedule = NoiseSchedule::linear(1e-4, 0.02, 200).unwrap();
        let mu = (0..dim).map(|i| (i as f64 * 0.37).sin()).collect();
        (
            AnalyticGaussianDenoiser::new(mu, 1.0, schedule.clone()).unwrap(),
            schedule,
        )
    }

    #[test]
    fn zero_steps_is_identity() {
        let (d, s) = setup(3);
        let x = vec![0.1, 0.2, 0.3];
        assert_eq!(ddim_invert(&x, &d, &s, 0).unwrap(), x);
        let h = HVector::new(d.mu().to_vec()).unwrap();
        assert_eq!(ddim_generate(&x, &h, &d, &s, 0).unwrap(), x);
    }

    #[test]
    fn interpolation_endpoints_and_linearity() {
        let h1 = HVector::new(vec![1.0, 0.0, 0.1, -3.3]).unwrap();
        let h2 = HVector::new(vec![0.0, 1.0, 0.7, 2.9]).unwrap();
        assert_eq!(interpolate_h(&h1, &h2, 0.0).unwrap(), h1);
        assert_eq!(interpolate_h(&h1, &h2, 1.0).unwrap(), h2);
        for g in [0.0, 0.3, 0.7, 1.0] {
            assert_eq!(interpolate_h(&h1, &h1, g).unwrap(), h1);
        }
        let mid = interpolate_h(&h1, &h2, 0.7).unwrap();
        assert!((mid.values()[0] - 0.3).abs() < 1e-15);
        assert!((mid.values()[1] - 0.7).abs() < 1e-15);
        assert!(interpolate_h(&h1, &HVector::new(vec![1.0]).unwrap(), 0.5).is_err());
        assert!(interpolate_h(&h1, &h2, 1.5).is_err());
    }

    #[test]
    fn generation_with_own_h_equals_plain_reverse() {
        let (d, s) = setup(4);
        let x_t = vec![0.5, -1.2, 0.3, 2.0];
        let h = HVector::new(d.mu().to_vec()).unwrap();
        assert_eq!(
            ddim_generate(&x_t, &h, &d, &s, 40).unwrap(),
            ddim_reverse(&x_t, &d, &s, 40).unwrap()
        );
    }

    #[test]
    fn sharp_prior_follows_closed_form_trajectory() {
        // With sigma2 -> 0 and x0 = mu, every state on the grid is sqrt(alpha_bar) * mu.
        let schedule = NoiseSchedule::linear(1e-4, 0.02, 100).unwrap();
        let mu = vec![0.8, -0.4];
        let d = AnalyticGaussianDenoiser::new(mu.clone(), 1e-12, schedule.clone()).unwrap();
        for steps in [1, 5, 20, 100] {
            let xt = ddim_invert(&mu, &d, &schedule, steps).unwrap();
            let a = schedule.alpha_bar(100);
            for i in 0..2 {
                assert!((xt[i] - a.sqrt() * mu[i]).abs() < 1e-9, "steps={steps}");
            }
        }
    }

    #[test]
    fn round_trip_reconstructs() {
        let (d, s) = setup(8);
        let x0: Vec<f64> = d.mu().iter().map(|m| m + 0.5).collect();
        let xt = ddim_invert(&x0, &d, &s, 200).unwrap();
        let h = HVector::new(d.mu().to_vec()).unwrap();
        let back = ddim_generate(&xt, &h, &d, &s, 200).unwrap();
        let err: f64 = x0
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = x0.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err / norm < 1e-2, "relative error {}", err / norm);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let (d, s) = setup(2);
        assert!(matches!(
            ddim_invert(&[f64::NAN, 0.0], &d, &s, 5),
            Err(Error::NonFiniteState { .. })
        ));
    }

    #[test]
    fn pair_counts() {
        let (d, s) = setup(3);
        let items = |n: usize, p: &str| -> Vec<(String, Vec<f64>)> {
            (0..n)
                .map(|i| (format!("{p}{i}"), vec![i as f64 * 0.1; 3]))
                .collect()
        };
        let cfg = DiffusionConfig {
            gamma: 0.7,
            num_steps: 10,
        };
        let out = generate_diffusion_pairs(&items(10, "s"), &items(10, "c"), &cfg, &d, &s).unwrap();
        assert_eq!(out.len(), 100);
        assert_eq!(out[0].id, "diffusion_s0_c0");
        assert_eq!(out[1].id, "diffusion_s0_c1");
        let out = generate_diffusion_pairs(&items(5, "s"), &items(5, "c"), &cfg, &d, &s).unwrap();
        assert_eq!(out.len(), 25);
        assert!(generate_diffusion_pairs(&[], &items(1, "c"), &cfg, &d, &s).is_err());
    }

    #[test]
    fn identical_pair_is_a_fixed_point() {
        let (d, s) = setup(6);
        let x0: Vec<f64> = d.mu().iter().map(|m| m - 0.3).collect();
        let cfg = DiffusionConfig {
            gamma: 0.7,
            num_steps: 200,
        };
        let one = vec![("a".to_string(), x0.clone())];
        let out = generate_diffusion_pairs(&one, &one, &cfg, &d, &s).unwrap();
        let h = HVector::new(d.mu().to_vec()).unwrap();
        let rt = ddim_generate(&ddim_invert(&x0, &d, &s, 200).unwrap(), &h, &d, &s, 200).unwrap();
        assert_eq!(out[0].x0, rt);
    }

    #[test]
    fn image_front_end_preserves_size() {
        let schedule = NoiseSchedule::linear(1e-4, 0.02, 50).unwrap();
        let img = RasterImage::new(2, 2, (0..12).map(|i| i * 20).collect()).unwrap();
        let d = AnalyticGaussianDenoiser::new(img.to_signed_unit(), 0.5, schedule.clone()).unwrap();
        let items = vec![("a".to_string(), img.clone())];
        let cfg = DiffusionConfig {
            gamma: 0.7,
            num_steps: 50,
        };
        let out = generate_diffusion_set(&items, &items, &cfg, &d, &schedule).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, "diffusion_a_a");
        // Reconstructing the denoiser's own mean is exact up to pixel rounding.
        assert_eq!(out[0].1, img);
    }
}
