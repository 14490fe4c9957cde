//! Property tests over the pure kernels.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use rqrf_core::corpus::{head_tail_split, KeywordId, QueryId};
use rqrf_core::encoder::{tokenize, Vocabulary};
use rqrf_core::evaluator::{metric_map, metric_mrr, metric_ndcg};
use rqrf_core::sampler::rpm_score;
use rqrf_core::tensor::{matmul, Tensor};
use rqrf_core::trainer::loss_value;

fn traffic_strategy() -> impl Strategy<Value = BTreeMap<QueryId, u64>> {
    prop::collection::btree_map(0u32..200, 1u64..1000, 1..40)
        .prop_map(|m| m.into_iter().map(|(q, c)| (QueryId(q), c)).collect())
}

proptest! {
    #[test]
    fn head_tail_partitions_and_is_minimal(
        traffic in traffic_strategy(),
        fraction in 0.05f64..0.95,
    ) {
        let (head, tail) = head_tail_split(&traffic, fraction).unwrap();
        let mut union: BTreeSet<QueryId> = head.union(&tail).copied().collect();
        prop_assert_eq!(union.len(), traffic.len());
        prop_assert!(head.is_disjoint(&tail));
        union.clear();

        let total: u64 = traffic.values().sum();
        let head_traffic: u64 = head.iter().map(|q| traffic[q]).sum();
        prop_assert!(head_traffic as f64 >= fraction * total as f64);

        // dropping the head's lightest member must break the bound
        if head.len() > 1 {
            let lightest = head
                .iter()
                .min_by(|a, b| traffic[a].cmp(&traffic[b]).then(b.cmp(a)))
                .copied()
                .unwrap();
            let without = head_traffic - traffic[&lightest];
            prop_assert!((without as f64) < fraction * total as f64);
        }
    }

    #[test]
    fn tokenize_is_stable_and_respects_bounds(
        words in prop::collection::vec("[a-z]{1,14}", 0..16),
        t_max in 1usize..12,
        c_max in 1usize..10,
    ) {
        let vocab = Vocabulary::from_words(["red", "dress", "blue", "shoe"]);
        let text = words.join(" ");
        let a = tokenize(&text, &vocab, t_max, c_max).unwrap();
        let b = tokenize(&text, &vocab, t_max, c_max).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.n_real(), words.len().min(t_max));
        for (t, real) in a.mask.iter().enumerate() {
            if !real {
                prop_assert_eq!(a.word_ids[t], rqrf_core::encoder::PAD);
                prop_assert!(a.char_ids[t].iter().all(|c| *c == rqrf_core::encoder::PAD));
            }
        }
    }

    #[test]
    fn score_is_nonnegative_and_damped_by_popularity(
        price in 0.01f64..100.0,
        rel in 0.0f64..1.0,
        n in 1u32..50,
    ) {
        let s = rpm_score(price, rel, n);
        prop_assert!(s >= 0.0);
        prop_assert!(rpm_score(price, rel, n + 1) <= s);
        if rel > 0.0 {
            prop_assert!(rpm_score(price, rel, n + 1) < s);
        }
    }

    #[test]
    fn normalized_scores_sum_to_one(
        scores in prop::collection::vec(0.0f64..10.0, 1..20),
    ) {
        let total: f64 = scores.iter().sum();
        let probs: Vec<f64> = if total > 0.0 {
            scores.iter().map(|s| s / total).collect()
        } else {
            vec![1.0 / scores.len() as f64; scores.len()]
        };
        let sum: f64 = probs.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(probs.iter().all(|p| *p >= 0.0));
    }

    #[test]
    fn loss_permutation_invariance(
        seed in 0u64..1000,
        n_pos in 1usize..5,
        n_neg in 0usize..8,
    ) {
        let mut rng = rqrf_core::rng::rng_from(seed, "prop-loss");
        let mut unit = || {
            let v: Vec<f64> = (0..8).map(|_| rqrf_core::rng::next_gaussian(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect::<Vec<f64>>()
        };
        let q = unit();
        let pos: Vec<Vec<f64>> = (0..n_pos).map(|_| unit()).collect();
        let neg: Vec<Vec<f64>> = (0..n_neg).map(|_| unit()).collect();
        let l = loss_value(&q, &pos, &neg, 10.0).unwrap();
        let pos_rev: Vec<Vec<f64>> = pos.iter().rev().cloned().collect();
        let neg_rev: Vec<Vec<f64>> = neg.iter().rev().cloned().collect();
        let l_rev = loss_value(&q, &pos_rev, &neg_rev, 10.0).unwrap();
        prop_assert!((l - l_rev).abs() <= 1e-12);
    }

    #[test]
    fn ranking_metrics_stay_in_unit_interval(
        order in prop::collection::vec(0u32..30, 1..12),
        mask in 1u32..4096,
    ) {
        let mut seen = BTreeSet::new();
        let ranked: Vec<KeywordId> = order
            .into_iter()
            .filter(|k| seen.insert(*k))
            .map(KeywordId)
            .collect();
        let relevant: BTreeSet<KeywordId> = (0..12)
            .filter(|i| mask & (1 << i) != 0)
            .map(KeywordId)
            .collect();
        prop_assume!(!relevant.is_empty());
        for metric in [
            metric_map(&ranked, &relevant),
            metric_mrr(&ranked, &relevant),
            metric_ndcg(&ranked, &relevant),
        ] {
            prop_assert!((0.0..=1.0).contains(&metric), "metric {metric}");
        }
    }

    #[test]
    fn matmul_matches_naive_triple_loop(
        m in 1usize..5,
        k in 1usize..5,
        n in 1usize..5,
        seed in 0u64..500,
    ) {
        let mut rng = rqrf_core::rng::rng_from(seed, "prop-matmul");
        let mut fill = |len: usize| -> Vec<f64> {
            (0..len).map(|_| rqrf_core::rng::next_gaussian(&mut rng)).collect()
        };
        let a = Tensor::from_vec(&[m, k], fill(m * k));
        let b = Tensor::from_vec(&[k, n], fill(k * n));
        let c = matmul(&a, &b);
        for i in 0..m {
            for j in 0..n {
                let mut expect = 0.0;
                for l in 0..k {
                    expect += a.row(i)[l] * b.row(l)[j];
                }
                prop_assert!((c.row(i)[j] - expect).abs() < 1e-9);
            }
        }
    }
}
