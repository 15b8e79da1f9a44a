use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Labeled mixture of held-out normals (label 0) and synthetic anomalies (label 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticValidationSet {
    normal_ids: Vec<String>,
    anomaly_ids: Vec<String>,
}

impl SyntheticValidationSet {
    pub fn new(normal_ids: Vec<String>, anomaly_ids: Vec<String>) -> Result<Self> {
        if normal_ids.is_empty() || anomaly_ids.is_empty() {
            return Err(Error::invalid("validation set needs both classes"));
        }
        let mut seen = HashSet::with_capacity(normal_ids.len() + anomaly_ids.len());
        for id in normal_ids.iter().chain(&anomaly_ids) {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            normal_ids,
            anomaly_ids,
        })
    }

    pub fn normal_ids(&self) -> &[String] {
        &self.normal_ids
    }

    pub fn anomaly_ids(&self) -> &[String] {
        &self.anomaly_ids
    }

    pub fn len(&self) -> usize {
        self.normal_ids.len() + self.anomaly_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Normals first, then anomalies.
    pub fn ids(&self) -> Vec<String> {
        self.normal_ids
            .iter()
            .chain(&self.anomaly_ids)
            .cloned()
            .collect()
    }

    /// Labels aligned with [`ids`](Self::ids).
    pub fn labels(&self) -> Vec<u8> {
        let mut labels = vec![0u8; self.normal_ids.len()];
        labels.resize(self.len(), 1);
        labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateKind {
    FeatureExtractor,
    PromptTemplate,
}

/// One selectable model or prompt.
///
/// `size_rank` orders candidates by parameter count (higher is larger) and is only
/// needed by the largest-model baseline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateDescriptor {
    pub id: String,
    pub kind: CandidateKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_rank: Option<u32>,
}

impl CandidateDescriptor {
    pub fn extractor(id: impl Into<String>, size_rank: Option<u32>) -> Self {
        Self {
            id: id.into(),
            kind: CandidateKind::FeatureExtractor,
            size_rank,
        }
    }

    pub fn prompt(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: CandidateKind::PromptTemplate,
            size_rank: None,
        }
    }
}

/// Checks that candidate ids are unique within a pool.
pub(crate) fn check_unique_candidates(pool: &[CandidateDescriptor]) -> Result<()> {
    let mut seen = HashSet::new();
    for c in pool {
        if !seen.insert(c.id.as_str()) {
            return Err(Error::DuplicateId(c.id.clone()));
        }
    }
    Ok(())
}

/// Anomaly scores paired with ground-truth labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    ids: Vec<String>,
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(ids: Vec<String>, scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if ids.len() != scores.len() || ids.len() != labels.len() {
            return Err(Error::invalid(format!(
                "scored set lengths differ: {} ids, {} scores, {} labels",
                ids.len(),
                scores.len(),
                labels.len()
            )));
        }
        if let Some(row) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite { row, column: 1 });
        }
        if let Some(row) = labels.iter().position(|&l| l > 1) {
            return Err(Error::Row {
                row,
                message: format!("label {} is not 0 or 1", labels[row]),
            });
        }
        Ok(Self {
            ids,
            scores,
            labels,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Keeps the rows whose id satisfies `keep`, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&str) -> bool) -> Self {
        let mut out = Self {
            ids: Vec::new(),
            scores: Vec::new(),
            labels: Vec::new(),
        };
        for i in 0..self.len() {
            if keep(&self.ids[i]) {
                out.ids.push(self.ids[i].clone());
                out.scores.push(self.scores[i]);
                out.labels.push(self.labels[i]);
            }
        }
        out
    }

    /// Applies `f` to every score.
    pub fn map_scores(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.ids.clone(),
            self.scores.iter().map(|&s| f(s)).collect(),
            self.labels.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn validation_set_requires_both_classes() {
        let err = SyntheticValidationSet::new(s(&["a"]), vec![]).unwrap_err();
        assert!(err.to_string().contains("needs both classes"));
        assert!(SyntheticValidationSet::new(s(&["a"]), s(&["a"])).is_err());
        let v = SyntheticValidationSet::new(s(&["a", "b"]), s(&["x"])).unwrap();
        assert_eq!(v.ids(), s(&["a", "b", "x"]));
        assert_eq!(v.labels(), vec![0, 0, 1]);
    }

    #[test]
    fn scored_set_invariants() {
        assert!(ScoredSet::new(s(&["a"]), vec![f64::NAN], vec![0]).is_err());
        assert!(ScoredSet::new(s(&["a"]), vec![1.0], vec![2]).is_err());
        assert!(ScoredSet::new(s(&["a"]), vec![], vec![0]).is_err());
    }
}
