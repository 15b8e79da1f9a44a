use std::collections::BTreeMap;

use crate::model::{ScoredSet, SyntheticValidationSet};
use crate::{Error, Result};

/// Mean over candidates of each sample's min-max-normalised score. A candidate
/// whose scores are all equal contributes 0 for every sample.
pub fn difficulty_scores(per_candidate: &[ScoredSet]) -> Result<BTreeMap<String, f64>> {
    let first = per_candidate
        .first()
        .ok_or_else(|| Error::invalid("difficulty needs at least one candidate's scores"))?;
    let mut total: BTreeMap<String, f64> = first.ids().iter().map(|id| (id.clone(), 0.0)).collect();
    for set in per_candidate {
        if set.len() != total.len() || set.ids().iter().any(|id| !total.contains_key(id)) {
            return Err(Error::invalid(
                "candidate score sets cover different samples",
            ));
        }
        let lo = set.scores().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = set
            .scores()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        for (id, &s) in set.ids().iter().zip(set.scores()) {
            let norm = if hi > lo { (s - lo) / (hi - lo) } else { 0.0 };
            *total.get_mut(id).expect("checked above") += norm;
        }
    }
    let n = per_candidate.len() as f64;
    Ok(total.into_iter().map(|(id, v)| (id, v / n)).collect())
}

/// Keeps every normal and the `n` anomalies with the lowest difficulty score,
/// ties broken by ascending id. `None` keeps everything.
pub fn filter_hardest(
    set: &SyntheticValidationSet,
    difficulty: &BTreeMap<String, f64>,
    n: Option<usize>,
) -> Result<SyntheticValidationSet> {
    let Some(n) = n else {
        return Ok(set.clone());
    };
    let anomalies = set.anomaly_ids();
    if n > anomalies.len() {
        return Err(Error::invalid(format!(
            "cannot keep {n} of {} synthetic anomalies",
            anomalies.len()
        )));
    }
    let mut ranked = anomalies
        .iter()
        .map(|id| {
            difficulty
                .get(id)
                .map(|&d| (d, id))
                .ok_or_else(|| Error::invalid(format!("no difficulty score for {id:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    let keep: std::collections::HashSet<&String> = ranked[..n].iter().map(|r| r.1).collect();
    SyntheticValidationSet::new(
        set.normal_ids().to_vec(),
        anomalies
            .iter()
            .filter(|id| keep.contains(id))
            .cloned()
            .collect(),
    )
}
