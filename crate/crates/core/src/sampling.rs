//! Support-set partitioning and validation-set mixing.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::model::SyntheticValidationSet;
use crate::{rng, Error, Result};

/// How a task's support set is split into seed images and held-out normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub master_seed: u64,
    /// Fraction of the support set used as seeds, in `(0, 1)`.
    pub seed_fraction: f64,
    /// Absolute seed count; overrides `seed_fraction` when set.
    pub seed_count: Option<usize>,
    /// Task id; selects the random stream.
    pub context_tag: String,
}

impl SplitSpec {
    pub fn new(master_seed: u64, context_tag: impl Into<String>) -> Self {
        Self {
            master_seed,
            seed_fraction: 0.5,
            seed_count: None,
            context_tag: context_tag.into(),
        }
    }

    fn seed_size(&self, n: usize) -> Result<usize> {
        match self.seed_count {
            Some(c) => Ok(c),
            None => {
                if !(self.seed_fraction > 0.0 && self.seed_fraction < 1.0) {
                    return Err(Error::invalid(format!(
                        "seed_fraction {} is outside (0, 1)",
                        self.seed_fraction
                    )));
                }
                Ok((self.seed_fraction * n as f64).round() as usize)
            }
        }
    }
}

/// Splits support ids into `(seed_ids, in_ids)` after a shuffle drawn from the
/// task's stream. Both parts keep the shuffled order.
pub fn partition_support<S: AsRef<str>>(
    support: &[S],
    spec: &SplitSpec,
) -> Result<(Vec<String>, Vec<String>)> {
    let n = support.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "support set needs at least 2 samples, found {n}"
        )));
    }
    let mut seen = HashSet::with_capacity(n);
    for id in support {
        if !seen.insert(id.as_ref()) {
            return Err(Error::DuplicateId(id.as_ref().to_string()));
        }
    }
    let seeds = spec.seed_size(n)?;
    if seeds == 0 || seeds >= n {
        return Err(Error::invalid(format!(
            "splitting {n} support samples into {seeds} seeds leaves an empty part"
        )));
    }
    let mut ids: Vec<String> = support.iter().map(|s| s.as_ref().to_string()).collect();
    ids.shuffle(&mut rng::stream(spec.master_seed, &spec.context_tag));
    let held_out = ids.split_off(seeds);
    Ok((ids, held_out))
}

/// Divides seeds into style and content halves; an odd extra element goes to style.
pub fn split_style_content<S: AsRef<str>>(seed_ids: &[S]) -> Result<(Vec<String>, Vec<String>)> {
    if seed_ids.len() < 2 {
        return Err(Error::invalid(format!(
            "style/content split needs at least 2 seeds, found {}",
            seed_ids.len()
        )));
    }
    let style_len = seed_ids.len().div_ceil(2);
    let all: Vec<String> = seed_ids.iter().map(|s| s.as_ref().to_string()).collect();
    let (style, content) = all.split_at(style_len);
    Ok((style.to_vec(), content.to_vec()))
}

/// Labels held-out normals 0 and synthetic anomalies 1.
pub fn mix_validation<S: AsRef<str>, T: AsRef<str>>(
    in_ids: &[S],
    synthetic_ids: &[T],
) -> Result<SyntheticValidationSet> {
    SyntheticValidationSet::new(
        in_ids.iter().map(|s| s.as_ref().to_string()).collect(),
        synthetic_ids
            .iter()
            .map(|s| s.as_ref().to_string())
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i:03}")).collect()
    }

    #[test]
    fn forty_split_in_half() {
        let spec = SplitSpec::new(7, "task-a");
        let (seed, held) = partition_support(&ids(40), &spec).unwrap();
        assert_eq!((seed.len(), held.len()), (20, 20));
        let mut all: Vec<_> = seed.iter().chain(&held).cloned().collect();
        all.sort();
        assert_eq!(all, ids(40));
    }

    #[test]
    fn ten_sample_support() {
        let (seed, held) = partition_support(&ids(10), &SplitSpec::new(1, "flowers")).unwrap();
        assert_eq!((seed.len(), held.len()), (5, 5));
    }

    #[test]
    fn rerun_is_identical_and_tag_matters() {
        let a = partition_support(&ids(30), &SplitSpec::new(3, "x")).unwrap();
        let b = partition_support(&ids(30), &SplitSpec::new(3, "x")).unwrap();
        let c = partition_support(&ids(30), &SplitSpec::new(3, "y")).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn seed_count_override() {
        let mut spec = SplitSpec::new(0, "t");
        spec.seed_count = Some(20);
        let (seed, held) = partition_support(&ids(30), &spec).unwrap();
        assert_eq!((seed.len(), held.len()), (20, 10));
        spec.seed_count = Some(30);
        assert!(partition_support(&ids(30), &spec).is_err());
    }

    #[test]
    fn degenerate_inputs() {
        assert!(partition_support(&ids(1), &SplitSpec::new(0, "t")).is_err());
        let mut spec = SplitSpec::new(0, "t");
        spec.seed_fraction = 0.1;
        // round(0.1 * 3) = 0 seeds
        assert!(partition_support(&ids(3), &spec).is_err());
        spec.seed_fraction = 1.0;
        assert!(partition_support(&ids(3), &spec).is_err());
        assert!(partition_support(&["a", "a"], &SplitSpec::new(0, "t")).is_err());
    }

    #[test]
    fn style_content_pair_counts() {
        for (n, s, c) in [(20, 10, 10), (10, 5, 5), (2, 1, 1), (5, 3, 2)] {
            let (style, content) = split_style_content(&ids(n)).unwrap();
            assert_eq!((style.len(), content.len()), (s, c));
        }
        assert_eq!(
            split_style_content(&ids(20))
                .map(|(s, c)| s.len() * c.len())
                .unwrap(),
            100
        );
        assert!(split_style_content(&ids(1)).is_err());
    }

    #[test]
    fn mixing_counts_and_collisions() {
        let synthetic: Vec<String> = (0..100).map(|i| format!("cutpaste_{i:04}")).collect();
        let set = mix_validation(&ids(20), &synthetic).unwrap();
        assert_eq!(set.len(), 120);
        assert_eq!(set.labels().iter().filter(|&&l| l == 1).count(), 100);
        let empty: [&str; 0] = [];
        assert!(mix_validation(&ids(20), &empty)
            .unwrap_err()
            .to_string()
            .contains("needs both classes"));
        assert!(mix_validation(&["a"], &["a"]).is_err());
    }

    #[test]
    fn mixed_labels_survive_the_scores_format() {
        use crate::model::{read_scores, write_scores, ScoredSet};
        let set = mix_validation(&ids(3), &["diffusion_a_b", "diffusion_b_a"]).unwrap();
        let scored = ScoredSet::new(set.ids(), vec![0.0; set.len()], set.labels()).unwrap();
        let mut buf = Vec::new();
        write_scores(&scored, &mut buf).unwrap();
        let back = read_scores(buf.as_slice()).unwrap();
        assert_eq!(back.ids(), set.ids().as_slice());
        assert_eq!(back.labels(), set.labels().as_slice());
    }

    proptest! {
        #[test]
        fn partition_is_a_partition(n in 2usize..80, seed in any::<u64>(), frac in 0.05f64..0.95) {
            let mut spec = SplitSpec::new(seed, "prop");
            spec.seed_fraction = frac;
            let expected = (frac * n as f64).round() as usize;
            match partition_support(&ids(n), &spec) {
                Ok((s, h)) => {
                    prop_assert_eq!(s.len(), expected);
                    let mut all: Vec<_> = s.into_iter().chain(h).collect();
                    all.sort();
                    prop_assert_eq!(all, ids(n));
                }
                Err(_) => prop_assert!(expected == 0 || expected >= n),
            }
        }
    }
}
