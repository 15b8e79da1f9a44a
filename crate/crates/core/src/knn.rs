//! Exact k-nearest-neighbour anomaly scoring against a bank of normal embeddings.

use rayon::prelude::*;

use crate::model::{EmbeddingBank, ScoredSet};
use crate::{Error, Result};

pub const DEFAULT_K: usize = 3;

#[derive(Debug, Clone)]
pub struct FeatureBank {
    bank: EmbeddingBank,
    k: usize,
    normalize: bool,
}

/// Builds a bank that stores the support vectors verbatim.
pub fn build_feature_bank(support: EmbeddingBank, k: usize) -> Result<FeatureBank> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > support.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} support vectors",
            support.len()
        )));
    }
    Ok(FeatureBank {
        bank: support,
        k,
        normalize: false,
    })
}

fn unit(v: &[f32]) -> Vec<f64> {
    let norm = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 {
        v.iter().map(|&x| f64::from(x)).collect()
    } else {
        v.iter().map(|&x| f64::from(x) / norm).collect()
    }
}

impl FeatureBank {
    /// Scores on L2-normalised bank and query vectors instead of raw ones.
    pub fn normalized(mut self, on: bool) -> Self {
        self.normalize = on;
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bank(&self) -> &EmbeddingBank {
        &self.bank
    }

    fn distances(&self, query: &[f32]) -> Vec<f64> {
        if self.normalize {
            let q = unit(query);
            self.bank
                .rows()
                .map(|row| {
                    unit(row)
                        .iter()
                        .zip(&q)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum()
                })
                .collect()
        } else {
            self.bank
                .rows()
                .map(|row| {
                    row.iter()
                        .zip(query)
                        .map(|(&a, &b)| {
                            let d = f64::from(a) - f64::from(b);
                            d * d
                        })
                        .sum()
                })
                .collect()
        }
    }
}

/// Sum of squared Euclidean distances to the `k` nearest bank vectors. Ties at the
/// cutoff go to the lower bank index; the selected distances are summed in
/// ascending order.
pub fn knn_score(bank: &FeatureBank, query: &[f32]) -> Result<f64> {
    if query.len() != bank.bank.dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.bank.dim(),
            found: query.len(),
        });
    }
    let mut keyed: Vec<(f64, usize)> = bank
        .distances(query)
        .into_iter()
        .enumerate()
        .map(|(i, d)| (d, i))
        .collect();
    let k = bank.k;
    let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k - 1, by_key);
        keyed.truncate(k);
    }
    keyed.sort_unstable_by(by_key);
    Ok(keyed.iter().map(|&(d, _)| d).sum())
}

/// Scores every query row and pairs the scores with `labels`.
pub fn score_set(bank: &FeatureBank, queries: &EmbeddingBank, labels: &[u8]) -> Result<ScoredSet> {
    if labels.len() != queries.len() {
        return Err(Error::invalid(format!(
            "{} labels for {} queries",
            labels.len(),
            queries.len()
        )));
    }
    let scores = (0..queries.len())
        .into_par_iter()
        .map(|i| knn_score(bank, queries.row(i)))
        .collect::<Result<Vec<f64>>>()?;
    ScoredSet::new(queries.ids().to_vec(), scores, labels.to_vec())
}
