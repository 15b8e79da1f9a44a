use rand::seq::index::sample;

use crate::rng::stream;
use crate::{Error, Result};

/// Draws `count` distinct ids uniformly without replacement from an auxiliary pool.
pub fn sample_auxiliary<S: AsRef<str>>(
    pool: &[S],
    count: usize,
    master_seed: u64,
    tag: &str,
) -> Result<Vec<String>> {
    if count > pool.len() {
        return Err(Error::invalid(format!(
            "cannot sample {count} auxiliary samples from {}",
            pool.len()
        )));
    }
    let mut rng = stream(master_seed, &format!("{tag}/auxiliary"));
    Ok(sample(&mut rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i].as_ref().to_string())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn unique_and_reproducible() {
        let pool: Vec<String> = (0..10_000).map(|i| format!("tiny{i}")).collect();
        let a = sample_auxiliary(&pool, 100, 5, "t").unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(a.iter().collect::<HashSet<_>>().len(), 100);
        assert_eq!(a, sample_auxiliary(&pool, 100, 5, "t").unwrap());
        assert_eq!(sample_auxiliary(&pool, 25, 5, "t").unwrap().len(), 25);
        assert!(sample_auxiliary(&pool[..10], 11, 5, "t").is_err());
    }
}
