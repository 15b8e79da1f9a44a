//! Total variation between two embedding sets, estimated from k-means cluster
//! histograms of their union.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::EmbeddingBank;
use crate::rng::stream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TvConfig {
    pub runs: usize,
    /// Cluster count; `floor(sqrt(|d1| + |d2|))` when absent.
    pub k: Option<usize>,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for TvConfig {
    fn default() -> Self {
        Self {
            runs: 10,
            k: None,
            max_iters: 100,
            tol: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, lowest index on ties.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut closest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = closest.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in closest.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].clone();
        for (d, p) in closest.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm from a k-means++ start. Stops when no centroid moves by
/// `tol` or more, or after `max_iters` updates. An emptied cluster is reseeded
/// at the point farthest from its centroid.
pub fn kmeans<R: Rng + ?Sized>(
    points: &[Vec<f64>],
    k: usize,
    max_iters: usize,
    tol: f64,
    rng: &mut R,
) -> Result<Clustering> {
    if k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if k > points.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} points",
            points.len()
        )));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: p.len(),
        });
    }
    let mut centroids = plus_plus_init(points, k, rng);
    let mut assignments = vec![0; points.len()];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut far = (0, -1.0);
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            assignments[i] = c;
            if d > far.1 {
                far = (i, d);
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            let next = if counts[c] == 0 {
                points[far.0].clone()
            } else {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            };
            shift = shift.max(sq_dist(&next, &centroids[c]).sqrt());
            centroids[c] = next;
        }
        if shift < tol {
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        assignments[i] = nearest(p, &centroids).0;
    }
    Ok(Clustering {
        assignments,
        centroids,
        iterations,
    })
}

/// `floor(sqrt(n))`, at least 1.
pub fn default_k(n: usize) -> usize {
    (n as f64).sqrt().floor().max(1.0) as usize
}

/// Mean over `cfg.runs` clusterings of `sum_i |K_i1 / |d1| - K_i2 / |d2||`, in `[0, 2]`.
pub fn total_variation(d1: &EmbeddingBank, d2: &EmbeddingBank, cfg: &TvConfig) -> Result<f64> {
    if d1.is_empty() || d2.is_empty() {
        return Err(Error::invalid("total variation needs two nonempty sets"));
    }
    if d1.dim() != d2.dim() {
        return Err(Error::DimensionMismatch {
            expected: d1.dim(),
            found: d2.dim(),
        });
    }
    if cfg.runs == 0 {
        return Err(Error::invalid("total variation needs runs >= 1"));
    }
    let total = d1.len() + d2.len();
    let k = cfg.k.unwrap_or_else(|| default_k(total));

    // Canonical union order keeps the estimate symmetric in its arguments.
    let mut union: Vec<(&str, Vec<u32>, usize)> = Vec::with_capacity(total);
    for (side, bank) in [d1, d2].into_iter().enumerate() {
        for (id, row) in bank.ids().iter().zip(bank.rows()) {
            union.push((id, row.iter().map(|v| v.to_bits()).collect(), side));
        }
    }
    union.sort_by(|a, b| a.0.cmp(b.0).then_with(|| a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let points: Vec<Vec<f64>> = union
        .iter()
        .map(|(_, bits, _)| bits.iter().map(|&b| f64::from(f32::from_bits(b))).collect())
        .collect();
    let sides: Vec<usize> = union.iter().map(|u| u.2).collect();

    let per_run = (0..cfg.runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(cfg.seed, &format!("tv-run-{r}"));
            let clustering = kmeans(&points, k, cfg.max_iters, cfg.tol, &mut rng)?;
            let mut counts = vec![[0usize; 2]; k];
            for (&c, &side) in clustering.assignments.iter().zip(&sides) {
                counts[c][side] += 1;
            }
            let (n1, n2) = (d1.len() as f64, d2.len() as f64);
            Ok(counts
                .iter()
                .map(|c| (c[0] as f64 / n1 - c[1] as f64 / n2).abs())
                .sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_run.iter().sum::<f64>() / cfg.runs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn blob(
        prefix: &str,
        center: f64,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> (Vec<String>, Vec<Vec<f32>>) {
        let noise = Normal::new(0.0, 1.0).unwrap();
        let ids = (0..n).map(|i| format!("{prefix}{i:03}")).collect();
        let rows = (0..n)
            .map(|_| {
                vec![
                    (center + noise.sample(rng)) as f32,
                    noise.sample(rng) as f32,
                ]
            })
            .collect();
        (ids, rows)
    }

    fn bank(name: &str, parts: Vec<(Vec<String>, Vec<Vec<f32>>)>) -> EmbeddingBank {
        let (mut ids, mut rows) = (Vec::new(), Vec::new());
        for (i, r) in parts {
            ids.extend(i);
            rows.extend(r);
        }
        EmbeddingBank::from_rows(name, 2, ids, &rows, None).unwrap()
    }

    #[test]
    fn single_cluster_centroid_is_mean() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = kmeans(&pts, 1, 100, 1e-4, &mut rng).unwrap();
        assert_eq!(c.assignments, vec![0, 0, 0]);
        assert_eq!(c.centroids[0], vec![2.0, 3.0]);
        assert!(kmeans(&pts, 4, 100, 1e-4, &mut rng).is_err());
        assert!(kmeans(&pts, 0, 100, 1e-4, &mut rng).is_err());
    }

    #[test]
    fn separated_blobs_recovered_and_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (_, a) = blob("a", 0.0, 30, &mut rng);
        let (_, b) = blob("b", 50.0, 30, &mut rng);
        let pts: Vec<Vec<f64>> = a
            .iter()
            .chain(&b)
            .map(|r| r.iter().map(|&v| f64::from(v)).collect())
            .collect();
        let run = |seed| kmeans(&pts, 2, 100, 1e-4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let c = run(3);
        assert!(c.assignments[..30].iter().all(|&x| x == c.assignments[0]));
        assert!(c.assignments[30..].iter().all(|&x| x == c.assignments[30]));
        assert_ne!(c.assignments[0], c.assignments[30]);
        assert_eq!(run(3), c);
    }

    #[test]
    fn identical_banks_have_zero_tv() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = bank("d", vec![blob("x", 0.0, 40, &mut rng)]);
        assert_eq!(total_variation(&d, &d, &TvConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn separated_sets_have_tv_two_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d1 = bank("d1", vec![blob("p", 0.0, 50, &mut rng)]);
        let d2 = bank("d2", vec![blob("q", 100.0, 50, &mut rng)]);
        let cfg = TvConfig::default();
        let tv = total_variation(&d1, &d2, &cfg).unwrap();
        assert!((tv - 2.0).abs() < 0.01, "tv = {tv}");
        assert_eq!(tv, total_variation(&d2, &d1, &cfg).unwrap());
    }

    #[test]
    fn tv_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d1 = bank(
            "d1",
            vec![blob("p", 0.0, 20, &mut rng), blob("r", 3.0, 15, &mut rng)],
        );
        let d2 = bank("d2", vec![blob("q", 1.5, 25, &mut rng)]);
        let tv = total_variation(&d1, &d2, &TvConfig::default()).unwrap();
        assert!((0.0..=2.0).contains(&tv));
    }

    #[test]
    fn default_k_formula() {
        assert_eq!(default_k(100), 10);
        assert_eq!(default_k(99), 9);
        assert_eq!(default_k(1), 1);
    }
}
