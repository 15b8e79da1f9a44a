use proptest::prelude::*;
use swsa_core::knn::{build_feature_bank, knn_score};
use swsa_core::metrics::{auroc_of, kendall_tau, mahonian};
use swsa_core::model::EmbeddingBank;

fn pair_count_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut credit, mut n1, mut n0) = (0u64, 0u64, 0u64);
    for &l in labels {
        if l == 1 {
            n1 += 1
        } else {
            n0 += 1
        }
    }
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                if scores[i] > scores[j] {
                    credit += 2;
                } else if scores[i] == scores[j] {
                    credit += 1;
                }
            }
        }
    }
    credit as f64 / (2 * n1 * n0) as f64
}

fn sort_oracle(rows: &[Vec<f32>], q: &[f32], k: usize) -> f64 {
    let mut d: Vec<f64> = rows
        .iter()
        .map(|r| {
            r.iter()
                .zip(q)
                .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                .sum()
        })
        .collect();
    d.sort_by(f64::total_cmp);
    d[..k].iter().sum()
}

fn bank(rows: &[Vec<f32>]) -> EmbeddingBank {
    let ids = (0..rows.len()).map(|i| format!("r{i}")).collect();
    EmbeddingBank::from_rows("b", rows[0].len(), ids, rows, None).unwrap()
}

fn labeled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..8).prop_map(|v| f64::from(v) * 0.25), n),
            prop::collection::vec(0u8..2, n),
        )
            .prop_filter("both classes", |(_, l)| l.contains(&0) && l.contains(&1))
    })
}

fn banks() -> impl Strategy<Value = (Vec<Vec<f32>>, Vec<f32>, usize)> {
    (1usize..6, 1usize..40).prop_flat_map(|(d, n)| {
        let cell = (-4i8..4).prop_map(|v| f32::from(v) * 0.5);
        (
            prop::collection::vec(prop::collection::vec(cell.clone(), d), n.max(5)),
            prop::collection::vec(cell, d),
            1usize..=5,
        )
    })
}

proptest! {
    #[test]
    fn auroc_equals_pair_counting((scores, labels) in labeled_scores()) {
        prop_assert_eq!(auroc_of(&scores, &labels).unwrap(), pair_count_auroc(&scores, &labels));
    }

    #[test]
    fn auroc_invariant_under_increasing_maps((scores, labels) in labeled_scores(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let mapped: Vec<f64> = scores.iter().map(|s| (a * s + b).exp()).collect();
        prop_assert_eq!(auroc_of(&scores, &labels).unwrap(), auroc_of(&mapped, &labels).unwrap());
    }

    #[test]
    fn knn_equals_sort_oracle((rows, q, k) in banks()) {
        let fb = build_feature_bank(bank(&rows), k).unwrap();
        prop_assert_eq!(knn_score(&fb, &q).unwrap(), sort_oracle(&rows, &q, k));
    }

    #[test]
    fn knn_permutation_invariant_and_monotone((rows, q, k) in banks(), shift in 0usize..40, extra in prop::collection::vec(-2.0f32..2.0, 6)) {
        let base = knn_score(&build_feature_bank(bank(&rows), k).unwrap(), &q).unwrap();
        let mut rotated = rows.clone();
        rotated.rotate_left(shift % rows.len());
        rotated.reverse();
        prop_assert_eq!(base, knn_score(&build_feature_bank(bank(&rotated), k).unwrap(), &q).unwrap());
        let mut grown = rows.clone();
        grown.push(extra[..rows[0].len()].to_vec());
        prop_assert!(knn_score(&build_feature_bank(bank(&grown), k).unwrap(), &q).unwrap() <= base);
    }

    #[test]
    fn kendall_symmetric_and_reversal(v in prop::collection::btree_set(0u32..1000, 2..15), seed in any::<u64>()) {
        let a: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
        let mut b = a.clone();
        let n = b.len();
        for i in 0..n {
            b.swap(i, (seed.rotate_left(i as u32) as usize) % n);
        }
        let ab = kendall_tau(&a, &b).unwrap();
        prop_assert_eq!(ab, kendall_tau(&b, &a).unwrap());
        let neg: Vec<f64> = b.iter().map(|x| -x).collect();
        let r = kendall_tau(&a, &neg).unwrap();
        prop_assert_eq!(r.tau, -ab.tau);
        prop_assert_eq!(r.p_value, ab.p_value);
    }
}

fn inversions(p: &[usize]) -> usize {
    let mut c = 0;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            if p[i] > p[j] {
                c += 1;
            }
        }
    }
    c
}

#[test]
fn mahonian_matches_permutation_enumeration() {
    for n in 1..=7 {
        let mut hist = vec![0u64; n * (n - 1) / 2 + 1];
        let mut p: Vec<usize> = (0..n).collect();
        // Heap's algorithm.
        let mut c = vec![0; n];
        hist[inversions(&p)] += 1;
        let mut i = 0;
        while i < n {
            if c[i] < i {
                if i % 2 == 0 {
                    p.swap(0, i);
                } else {
                    p.swap(c[i], i);
                }
                hist[inversions(&p)] += 1;
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        assert_eq!(mahonian(n).unwrap(), hist, "n = {n}");
    }
}
