//! AUROC, Kendall rank correlation with exact small-sample p-values, and
//! Bonferroni thresholds.

use std::cmp::Ordering;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::model::ScoredSet;
use crate::{Error, Result};

/// Largest ranking length for which the exact null distribution is used.
pub const EXACT_KENDALL_MAX_N: usize = 12;

/// Mann-Whitney AUROC of a scored set; ties earn half credit.
pub fn auroc(scored: &ScoredSet) -> Result<f64> {
    auroc_of(scored.scores(), scored.labels())
}

/// [`auroc`] on raw slices. Computed from midranks as an exact integer
/// `2U`, so the result equals the pair-counting definition bit for bit.
pub fn auroc_of(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite { row: i, column: 0 });
    }
    let n1 = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n0 = labels.len() as u64 - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::invalid("AUROC needs both labels present"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    // Sum over positives of twice their midrank.
    let mut twice_rank_sum = 0u64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let positives = order[start..=end]
            .iter()
            .filter(|&&i| labels[i] == 1)
            .count() as u64;
        twice_rank_sum += positives * (start as u64 + 1 + end as u64 + 1);
        start = end + 1;
    }
    let twice_u = twice_rank_sum - n1 * (n1 + 1);
    Ok(twice_u as f64 / (2 * n1 * n0) as f64)
}

/// Number of permutations of `n` items with each inversion count `0..=n(n-1)/2`.
pub fn mahonian(n: usize) -> Result<Vec<u64>> {
    if n > 20 {
        return Err(Error::invalid(format!(
            "mahonian table limited to n <= 20, got {n}"
        )));
    }
    let mut row = vec![1u64];
    for m in 2..=n {
        let mut next = vec![0u64; row.len() + m - 1];
        for (i, &c) in row.iter().enumerate() {
            for slot in &mut next[i..i + m] {
                *slot += c;
            }
        }
        row = next;
    }
    Ok(row)
}

/// Exact two-sided p-value for `discordant` discordant pairs among `n` tie-free
/// items under uniformly random rankings.
pub fn kendall_exact_p(n: usize, discordant: u64) -> Result<f64> {
    let counts = mahonian(n)?;
    let pairs = (n * n.saturating_sub(1) / 2) as u64;
    if discordant > pairs {
        return Err(Error::invalid(format!(
            "{discordant} discordant pairs exceeds {pairs} total"
        )));
    }
    let tail = discordant.min(pairs - discordant) as usize;
    let total: u64 = counts.iter().sum();
    let hits: u64 = counts[..=tail].iter().sum();
    Ok((2.0 * hits as f64 / total as f64).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KendallMethod {
    Exact,
    Normal,
    TieCorrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KendallTau {
    pub tau: f64,
    pub p_value: f64,
    pub concordant: u64,
    pub discordant: u64,
    pub method: KendallMethod,
}

fn two_sided_normal(z: f64) -> f64 {
    let std = Normal::standard();
    (2.0 * std.cdf(-z.abs())).min(1.0)
}

fn tie_groups(v: &[f64]) -> Vec<u64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let mut groups = Vec::new();
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            if run > 1 {
                groups.push(run);
            }
            run = 1;
        }
    }
    if run > 1 {
        groups.push(run);
    }
    groups
}

/// Kendall rank correlation of two equal-length score vectors.
///
/// Tie-free inputs give tau-a with an exact p-value for `n <= 12` and the normal
/// approximation above. Tied inputs log a warning and give tau-b with the
/// tie-corrected normal approximation.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<KendallTau> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("rank correlation needs at least 2 entries"));
    }
    if let Some(i) = a.iter().chain(b).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: i % n,
            column: i / n,
        });
    }
    let (mut concordant, mut discordant) = (0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            let s = (a[i] - a[j]).signum() * (b[i] - b[j]).signum();
            let tied = a[i] == a[j] || b[i] == b[j];
            if tied {
                continue;
            }
            if s > 0.0 {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as u64;
    let nf = n as f64;
    let s = concordant as f64 - discordant as f64;
    let (ties_a, ties_b) = (tie_groups(a), tie_groups(b));
    if ties_a.is_empty() && ties_b.is_empty() {
        let tau = s / pairs as f64;
        let (p_value, method) = if n <= EXACT_KENDALL_MAX_N {
            (kendall_exact_p(n, discordant)?, KendallMethod::Exact)
        } else {
            let var = nf * (nf - 1.0) * (2.0 * nf + 5.0) / 18.0;
            (two_sided_normal(s / var.sqrt()), KendallMethod::Normal)
        };
        return Ok(KendallTau {
            tau,
            p_value,
            concordant,
            discordant,
            method,
        });
    }

    log::warn!("tied values in rank correlation input; using tau-b with normal approximation");
    let pair_ties = |g: &[u64]| g.iter().map(|&t| t * (t - 1) / 2).sum::<u64>();
    let (t_a, t_b) = (pair_ties(&ties_a), pair_ties(&ties_b));
    if t_a == pairs || t_b == pairs {
        return Err(Error::invalid(
            "rank correlation undefined for a constant ranking",
        ));
    }
    let denom = (((pairs - t_a) as f64) * ((pairs - t_b) as f64)).sqrt();
    let tau = s / denom;
    let f = |g: &[u64], k: fn(f64) -> f64| g.iter().map(|&t| k(t as f64)).sum::<f64>();
    let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
    let vt = f(&ties_a, |t| t * (t - 1.0) * (2.0 * t + 5.0));
    let vu = f(&ties_b, |t| t * (t - 1.0) * (2.0 * t + 5.0));
    let t2 = f(&ties_a, |t| t * (t - 1.0));
    let u2 = f(&ties_b, |t| t * (t - 1.0));
    let t3 = f(&ties_a, |t| t * (t - 1.0) * (t - 2.0));
    let u3 = f(&ties_b, |t| t * (t - 1.0) * (t - 2.0));
    let mut var = (v0 - vt - vu) / 18.0 + t2 * u2 / (2.0 * nf * (nf - 1.0));
    if n > 2 {
        var += t3 * u3 / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
    }
    let p_value = if var > 0.0 {
        two_sided_normal(s / var.sqrt())
    } else {
        1.0
    };
    Ok(KendallTau {
        tau,
        p_value,
        concordant,
        discordant,
        method: KendallMethod::TieCorrected,
    })
}

/// Per-test significance level `alpha / m`.
pub fn bonferroni_threshold(alpha: f64, m: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha = {alpha} is outside (0, 1)")));
    }
    if m == 0 {
        return Err(Error::invalid(
            "Bonferroni correction needs at least one test",
        ));
    }
    Ok(alpha / m as f64)
}

pub fn is_significant(p_value: f64, threshold: f64) -> bool {
    p_value < threshold
}
