use std::collections::HashMap;

use crate::{Error, Result};

/// A named matrix of feature vectors with one id per row and optional binary labels.
///
/// Rows are stored row-major as `f32`. Construction validates every invariant, so a
/// bank that exists is always well formed.
#[derive(Debug, Clone)]
pub struct EmbeddingBank {
    name: String,
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<f32>,
    labels: Option<Vec<u8>>,
    index: HashMap<String, usize>,
}

impl EmbeddingBank {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        ids: Vec<String>,
        vectors: Vec<f32>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidBank("dim must be at least 1".into()));
        }
        if vectors.len() != ids.len() * dim {
            return Err(Error::InvalidBank(format!(
                "{} ids with dim {} need {} values, found {}",
                ids.len(),
                dim,
                ids.len() * dim,
                vectors.len()
            )));
        }
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                column: pos % dim,
            });
        }
        if let Some(labels) = &labels {
            if labels.len() != ids.len() {
                return Err(Error::InvalidBank(format!(
                    "{} labels for {} ids",
                    labels.len(),
                    ids.len()
                )));
            }
            if let Some(row) = labels.iter().position(|&l| l > 1) {
                return Err(Error::InvalidBank(format!(
                    "label {} in row {row} is not 0 or 1",
                    labels[row]
                )));
            }
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            dim,
            ids,
            vectors,
            labels,
            index,
        })
    }

    /// Builds a bank from per-row vectors; every row must have length `dim`.
    pub fn from_rows(
        name: impl Into<String>,
        dim: usize,
        ids: Vec<String>,
        rows: &[Vec<f32>],
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            vectors.extend_from_slice(row);
        }
        Self::new(name, dim, ids, vectors, labels)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Raw row-major storage.
    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.vectors.chunks_exact(self.dim)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index_of(id).map(|i| self.row(i))
    }

    /// Returns a new bank holding the rows for `ids`, in that order.
    pub fn select<S: AsRef<str>>(&self, name: impl Into<String>, ids: &[S]) -> Result<Self> {
        let mut out_ids = Vec::with_capacity(ids.len());
        let mut vectors = Vec::with_capacity(ids.len() * self.dim);
        let mut labels = self.labels.as_ref().map(|_| Vec::with_capacity(ids.len()));
        for id in ids {
            let id = id.as_ref();
            let i = self.index_of(id).ok_or_else(|| {
                Error::invalid(format!(
                    "bank {:?} has no embedding for id {id:?}",
                    self.name
                ))
            })?;
            out_ids.push(id.to_string());
            vectors.extend_from_slice(self.row(i));
            if let (Some(out), Some(src)) = (labels.as_mut(), self.labels.as_ref()) {
                out.push(src[i]);
            }
        }
        Self::new(name, self.dim, out_ids, vectors, labels)
    }

    /// Replaces (or sets) the label column.
    pub fn with_labels(self, labels: Option<Vec<u8>>) -> Result<Self> {
        Self::new(self.name, self.dim, self.ids, self.vectors, labels)
    }

    /// Concatenates banks of equal dimension. Labels are kept only if every part has them.
    pub fn concat(name: impl Into<String>, parts: &[&EmbeddingBank]) -> Result<Self> {
        let dim = parts
            .first()
            .map(|b| b.dim)
            .ok_or_else(|| Error::invalid("cannot concatenate zero banks"))?;
        let mut ids = Vec::new();
        let mut vectors = Vec::new();
        let keep_labels = parts.iter().all(|b| b.labels.is_some());
        let mut labels = Vec::new();
        for part in parts {
            if part.dim != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: part.dim,
                });
            }
            ids.extend(part.ids.iter().cloned());
            vectors.extend_from_slice(&part.vectors);
            if let Some(l) = &part.labels {
                labels.extend_from_slice(l);
            }
        }
        Self::new(name, dim, ids, vectors, keep_labels.then_some(labels))
    }
}

impl PartialEq for EmbeddingBank {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.dim == other.dim
            && self.ids == other.ids
            && self.labels == other.labels
            && self.vectors.len() == other.vectors.len()
            && self
                .vectors
                .iter()
                .zip(&other.vectors)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn rejects_duplicate_ids() {
        let err = EmbeddingBank::new("b", 1, ids(&["a", "a"]), vec![0.0, 1.0], None).unwrap_err();
        assert!(err.to_string().contains("duplicate id"), "{err}");
    }

    #[test]
    fn rejects_non_finite_and_bad_labels() {
        let err = EmbeddingBank::new("b", 2, ids(&["a"]), vec![0.0, f32::NAN], None).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 0, column: 1 }));
        assert!(EmbeddingBank::new("b", 1, ids(&["a"]), vec![0.0], Some(vec![2])).is_err());
        assert!(EmbeddingBank::new("b", 1, ids(&["a"]), vec![0.0], Some(vec![])).is_err());
        assert!(EmbeddingBank::new("b", 0, vec![], vec![], None).is_err());
    }

    #[test]
    fn select_keeps_order_and_labels() {
        let bank = EmbeddingBank::new(
            "b",
            1,
            ids(&["a", "b", "c"]),
            vec![1.0, 2.0, 3.0],
            Some(vec![0, 1, 0]),
        )
        .unwrap();
        let sub = bank.select("s", &["c", "a"]).unwrap();
        assert_eq!(sub.ids(), &ids(&["c", "a"])[..]);
        assert_eq!(sub.vectors(), &[3.0, 1.0]);
        assert_eq!(sub.labels(), Some(&[0u8, 0][..]));
        assert!(bank.select("s", &["zz"]).is_err());
    }
}
