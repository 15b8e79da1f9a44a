use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use swsa_core::diffusion::{
    ddim_generate, ddim_invert, generate_diffusion_pairs, interpolate_h, AnalyticGaussianDenoiser,
    DiffusionConfig, HVector, NoiseSchedule,
};

fn normal_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

#[test]
fn analytic_round_trip_over_draws() {
    let schedule = NoiseSchedule::linear(1e-4, 0.02, 200).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mu = normal_vec(&mut rng, 16);
    let d = AnalyticGaussianDenoiser::new(mu.clone(), 1.0, schedule.clone()).unwrap();
    let h = HVector::new(mu.clone()).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x0: Vec<f64> = mu
            .iter()
            .zip(normal_vec(&mut rng, 16))
            .map(|(m, e)| m + e)
            .collect();
        let back = ddim_generate(
            &ddim_invert(&x0, &d, &schedule, 200).unwrap(),
            &h,
            &d,
            &schedule,
            200,
        )
        .unwrap();
        worst = worst.max(rel_err(&back, &x0));
    }
    assert!(worst <= 1e-2, "worst relative error {worst}");
}

/// With unit variance the injected predicted-x0 term is `sqrt(a) x + (1 - a) h`,
/// which gives this closed-form step.
fn oracle_step(x: &[f64], h: &[f64], mu: &[f64], a: f64, a_prev: f64) -> Vec<f64> {
    x.iter()
        .zip(h)
        .zip(mu)
        .map(|((&x, &h), &m)| {
            a_prev.sqrt() * (a.sqrt() * x + (1.0 - a) * h)
                + (1.0 - a_prev).sqrt() * (1.0 - a).sqrt() * (x - a.sqrt() * m)
        })
        .collect()
}

#[test]
fn interpolated_generation_matches_mean_trajectory() {
    let schedule = NoiseSchedule::linear(1e-4, 0.02, 200).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mu_a, mu_b) = (normal_vec(&mut rng, 8), normal_vec(&mut rng, 8));
    let d = AnalyticGaussianDenoiser::new(mu_a.clone(), 1.0, schedule.clone()).unwrap();
    let h_gen = interpolate_h(
        &HVector::new(mu_a.clone()).unwrap(),
        &HVector::new(mu_b).unwrap(),
        0.7,
    )
    .unwrap();

    let grid = schedule.timesteps(50).unwrap();
    let mut mean_out = vec![0.0; 8];
    let mut mean_latent = vec![0.0; 8];
    let draws = 200;
    for _ in 0..draws {
        let x0: Vec<f64> = mu_a
            .iter()
            .zip(normal_vec(&mut rng, 8))
            .map(|(m, e)| m + e)
            .collect();
        let xt = ddim_invert(&x0, &d, &schedule, 50).unwrap();
        let out = ddim_generate(&xt, &h_gen, &d, &schedule, 50).unwrap();
        for i in 0..8 {
            mean_latent[i] += xt[i] / draws as f64;
            mean_out[i] += out[i] / draws as f64;
        }
    }
    let mut x = mean_latent;
    for w in grid.windows(2).rev() {
        x = oracle_step(
            &x,
            h_gen.values(),
            &mu_a,
            schedule.alpha_bar(w[1]),
            schedule.alpha_bar(w[0]),
        );
    }
    let err = rel_err(&mean_out, &x);
    assert!(err <= 1e-2, "relative error {err}");
}

#[test]
fn cross_product_counts() {
    let schedule = NoiseSchedule::linear(1e-4, 0.02, 100).unwrap();
    let d = AnalyticGaussianDenoiser::new(vec![0.0; 4], 1.0, schedule.clone()).unwrap();
    let items: Vec<(String, Vec<f64>)> = (0..10)
        .map(|i| (format!("i{i}"), vec![i as f64 / 10.0; 4]))
        .collect();
    let cfg = DiffusionConfig {
        gamma: 0.7,
        num_steps: 20,
    };
    let out = generate_diffusion_pairs(&items, &items, &cfg, &d, &schedule).unwrap();
    assert_eq!(out.len(), 100);
    let ids: std::collections::BTreeSet<_> = out.iter().map(|s| s.id.clone()).collect();
    assert_eq!(ids.len(), 100);
}
