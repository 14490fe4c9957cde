//! Category-restricted retrieval and offline ranking metrics.
//!
//! Candidates are ranked by brute-force cosine against every keyword
//! embedding of the query's category. Relevance is binary: the keywords
//! bought by ads the query clicked in a held-out log slice. A relevant
//! keyword missing from the ranking contributes rank-infinity (zero gain) to
//! MAP and NDCG; NDCG still normalizes by the ideal DCG over the full
//! relevant set.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::corpus::{CategoryId, ClickLog, KeywordId, QueryId, Universe};
use crate::error::{Error, Result};
use crate::stats::{paired_t_test, PairedTTest};
use crate::tensor::dot;
use crate::tower::TowerSide;
use crate::trainer::Checkpoint;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalCase {
    pub query: QueryId,
    pub category: CategoryId,
    pub relevant: BTreeSet<KeywordId>,
}

/// Ground-truth cases from a held-out log slice: for every query with at
/// least one click, the union of keywords bought by its clicked ads.
pub fn build_eval_cases(log: &ClickLog, universe: &Universe) -> Result<Vec<EvalCase>> {
    let clicked = crate::corpus::clicks_by_query(log);
    let mut cases = Vec::new();
    for (query, ads) in clicked {
        let category = universe.queries[query.index()].category;
        let mut relevant = BTreeSet::new();
        for (ad, _) in ads {
            for (k, _) in &universe.ads[ad.index()].bought {
                relevant.insert(*k);
            }
        }
        debug_assert!(relevant
            .iter()
            .all(|k| universe.keywords[k.index()].category == category));
        if !relevant.is_empty() {
            cases.push(EvalCase {
                query,
                category,
                relevant,
            });
        }
    }
    if cases.is_empty() {
        return Err(Error::EmptyInput("no clicked queries in eval log".into()));
    }
    Ok(cases)
}

/// Keyword embeddings for every category, computed once per checkpoint.
pub struct KeywordIndex {
    per_category: Vec<Vec<(KeywordId, Vec<f32>)>>,
}

impl KeywordIndex {
    pub fn build(ckpt: &Checkpoint, universe: &Universe) -> Result<Self> {
        let mut per_category = vec![Vec::new(); universe.n_categories];
        for i in 0..universe.keywords.len() {
            let id = KeywordId(i as u32);
            let surface = universe.keyword_surface(id);
            let vec = ckpt.model.encode_text(TowerSide::Keyword, &surface)?;
            per_category[universe.keywords[i].category.index()].push((id, vec));
        }
        Ok(KeywordIndex { per_category })
    }

    pub fn category(&self, cat: CategoryId) -> &[(KeywordId, Vec<f32>)] {
        &self.per_category[cat.index()]
    }
}

/// Brute-force cosine ranking, descending, ties broken by ascending id.
pub fn rank_candidates(
    query_vec: &[f32],
    candidates: &[(KeywordId, Vec<f32>)],
) -> Result<Vec<(KeywordId, f64)>> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("no candidate keywords".into()));
    }
    let q: Vec<f64> = query_vec.iter().map(|v| f64::from(*v)).collect();
    let mut scored: Vec<(KeywordId, f64)> = candidates
        .iter()
        .map(|(k, v)| {
            let vv: Vec<f64> = v.iter().map(|x| f64::from(*x)).collect();
            (*k, dot(&q, &vv))
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(scored)
}

/// Mean average precision: mean of precision-at-hit over the relevant set;
/// relevant items absent from the ranking contribute zero.
pub fn metric_map(ranked: &[KeywordId], relevant: &BTreeSet<KeywordId>) -> f64 {
    assert!(!relevant.is_empty(), "relevant set must be non-empty");
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, k) in ranked.iter().enumerate() {
        if relevant.contains(k) {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    sum / relevant.len() as f64
}

/// Reciprocal rank of the first relevant item, zero if none is ranked.
pub fn metric_mrr(ranked: &[KeywordId], relevant: &BTreeSet<KeywordId>) -> f64 {
    assert!(!relevant.is_empty(), "relevant set must be non-empty");
    for (pos, k) in ranked.iter().enumerate() {
        if relevant.contains(k) {
            return 1.0 / (pos + 1) as f64;
        }
    }
    0.0
}

/// NDCG with binary gain, discount 1/log2(rank + 1), full-list depth.
pub fn metric_ndcg(ranked: &[KeywordId], relevant: &BTreeSet<KeywordId>) -> f64 {
    assert!(!relevant.is_empty(), "relevant set must be non-empty");
    let mut dcg = 0.0;
    for (pos, k) in ranked.iter().enumerate() {
        if relevant.contains(k) {
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let idcg: f64 = (0..relevant.len())
        .map(|i| 1.0 / ((i + 2) as f64).log2())
        .sum();
    dcg / idcg
}

/// Softmax cross-entropy of one positive over the scored candidate list at
/// temperature gamma.
pub fn metric_nll(scored: &[(KeywordId, f64)], positive: KeywordId, gamma: f64) -> Result<f64> {
    let mut pos_logit = None;
    let mut max_logit = f64::NEG_INFINITY;
    for (k, cos) in scored {
        let logit = gamma * cos;
        if logit > max_logit {
            max_logit = logit;
        }
        if *k == positive {
            pos_logit = Some(logit);
        }
    }
    let pos_logit = pos_logit.ok_or_else(|| {
        Error::Internal(format!("positive {positive} missing from candidates"))
    })?;
    let log_sum: f64 = scored
        .iter()
        .map(|(_, cos)| (gamma * cos - max_logit).exp())
        .sum::<f64>()
        .ln();
    Ok(-(pos_logit - max_logit - log_sum))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    pub cases: usize,
    pub nll: f64,
    pub map: f64,
    pub mrr: f64,
    pub ndcg: f64,
}

impl MetricsReport {
    pub fn to_text(&self) -> String {
        format!(
            "cases: {}\nnll: {}\nmap: {}\nmrr: {}\nndcg: {}\n",
            self.cases, self.nll, self.map, self.mrr, self.ndcg
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CaseMetrics {
    pub query: u32,
    pub nll: f64,
    pub map: f64,
    pub mrr: f64,
    pub ndcg: f64,
}

/// Per-case metrics in ascending query order (bit-stable regardless of the
/// input case order).
pub fn evaluate_per_case(
    ckpt: &Checkpoint,
    cases: &[EvalCase],
    universe: &Universe,
) -> Result<Vec<CaseMetrics>> {
    if cases.is_empty() {
        return Err(Error::EmptyInput("no evaluation cases".into()));
    }
    if ckpt.meta.universe_fingerprint != universe.fingerprint() {
        return Err(Error::Mismatch(
            "checkpoint was trained on a different universe".into(),
        ));
    }
    let mut ordered: Vec<&EvalCase> = cases.iter().collect();
    ordered.sort_by_key(|c| c.query);
    let index = KeywordIndex::build(ckpt, universe)?;
    let gamma = ckpt.model.config.gamma;
    let mut out = Vec::with_capacity(ordered.len());
    for case in ordered {
        let q_vec = ckpt
            .model
            .encode_text(TowerSide::Query, &universe.query_surface(case.query))?;
        let scored = rank_candidates(&q_vec, index.category(case.category))?;
        let ranked: Vec<KeywordId> = scored.iter().map(|(k, _)| *k).collect();
        let mut nll_sum = 0.0;
        for positive in &case.relevant {
            nll_sum += metric_nll(&scored, *positive, gamma)?;
        }
        out.push(CaseMetrics {
            query: case.query.0,
            nll: nll_sum / case.relevant.len() as f64,
            map: metric_map(&ranked, &case.relevant),
            mrr: metric_mrr(&ranked, &case.relevant),
            ndcg: metric_ndcg(&ranked, &case.relevant),
        });
    }
    Ok(out)
}

pub fn evaluate(ckpt: &Checkpoint, cases: &[EvalCase], universe: &Universe) -> Result<MetricsReport> {
    let per_case = evaluate_per_case(ckpt, cases, universe)?;
    let n = per_case.len() as f64;
    Ok(MetricsReport {
        cases: per_case.len(),
        nll: per_case.iter().map(|c| c.nll).sum::<f64>() / n,
        map: per_case.iter().map(|c| c.map).sum::<f64>() / n,
        mrr: per_case.iter().map(|c| c.mrr).sum::<f64>() / n,
        ndcg: per_case.iter().map(|c| c.ndcg).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricComparison {
    pub metric: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub test: PairedTTest,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub cases: usize,
    pub metrics: Vec<MetricComparison>,
}

impl ComparisonReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("cases: {}\n", self.cases);
        for m in &self.metrics {
            out.push_str(&format!(
                "{}: a={} b={} diff={} t={} p={}\n",
                m.metric, m.mean_a, m.mean_b, m.test.mean_diff, m.test.t, m.test.p_two_tailed
            ));
        }
        out
    }
}

/// Two-tailed paired t-test of checkpoint `a` minus checkpoint `b` on the
/// per-case metric differences.
pub fn compare(
    a: &Checkpoint,
    b: &Checkpoint,
    cases: &[EvalCase],
    universe: &Universe,
) -> Result<ComparisonReport> {
    let pa = evaluate_per_case(a, cases, universe)?;
    let pb = evaluate_per_case(b, cases, universe)?;
    debug_assert_eq!(pa.len(), pb.len());
    let selectors: [(&str, fn(&CaseMetrics) -> f64); 4] = [
        ("nll", |c| c.nll),
        ("map", |c| c.map),
        ("mrr", |c| c.mrr),
        ("ndcg", |c| c.ndcg),
    ];
    let mut metrics = Vec::new();
    for (name, select) in selectors {
        let diffs: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| select(x) - select(y)).collect();
        let mean_a = pa.iter().map(select).sum::<f64>() / pa.len() as f64;
        let mean_b = pb.iter().map(select).sum::<f64>() / pb.len() as f64;
        metrics.push(MetricComparison {
            metric: name.to_string(),
            mean_a,
            mean_b,
            test: paired_t_test(&diffs)?,
        });
    }
    Ok(ComparisonReport {
        cases: pa.len(),
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u32]) -> Vec<KeywordId> {
        v.iter().map(|i| KeywordId(*i)).collect()
    }

    fn relset(v: &[u32]) -> BTreeSet<KeywordId> {
        v.iter().map(|i| KeywordId(*i)).collect()
    }

    #[test]
    fn perfect_ranking_scores_one() {
        let ranked = ids(&[5, 1, 2]);
        let relevant = relset(&[5]);
        assert_eq!(metric_map(&ranked, &relevant), 1.0);
        assert_eq!(metric_mrr(&ranked, &relevant), 1.0);
        assert_eq!(metric_ndcg(&ranked, &relevant), 1.0);
    }

    #[test]
    fn relevant_at_rank_three() {
        let ranked = ids(&[1, 2, 5, 9]);
        let relevant = relset(&[5]);
        assert!((metric_mrr(&ranked, &relevant) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_relevant_at_ranks_one_and_three() {
        let ranked = ids(&[7, 1, 8, 2]);
        let relevant = relset(&[7, 8]);
        let map = metric_map(&ranked, &relevant);
        assert!((map - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12, "map {map}");
        let ndcg = metric_ndcg(&ranked, &relevant);
        let expected = (1.0 + 1.0 / 2.0) / (1.0 + 1.0 / 3f64.log2());
        assert!((ndcg - expected).abs() < 1e-12, "ndcg {ndcg}");
        assert!((ndcg - 0.9197).abs() < 1e-4);
    }

    #[test]
    fn all_metrics_are_one_iff_relevant_precede_all_others() {
        let relevant = relset(&[3, 4]);
        let good = ids(&[4, 3, 1, 2]);
        assert_eq!(metric_map(&good, &relevant), 1.0);
        assert_eq!(metric_ndcg(&good, &relevant), 1.0);
        assert_eq!(metric_mrr(&good, &relevant), 1.0);
        let bad = ids(&[4, 1, 3, 2]);
        assert!(metric_map(&bad, &relevant) < 1.0);
        assert!(metric_ndcg(&bad, &relevant) < 1.0);
    }

    /// Independent definition-based reference implementations: precision at
    /// every prefix is recomputed by scanning, NDCG enumerates the ideal
    /// ranking explicitly.
    mod reference {
        use super::*;

        pub fn ap(ranked: &[KeywordId], relevant: &BTreeSet<KeywordId>) -> f64 {
            let mut total = 0.0;
            for k in relevant {
                if let Some(pos) = ranked.iter().position(|r| r == k) {
                    let hits = ranked[..=pos].iter().filter(|r| relevant.contains(r)).count();
                    total += hits as f64 / (pos + 1) as f64;
                }
            }
            total / relevant.len() as f64
        }

        pub fn rr(ranked: &[KeywordId], relevant: &BTreeSet<KeywordId>) -> f64 {
            ranked
                .iter()
                .position(|r| relevant.contains(r))
                .map_or(0.0, |pos| 1.0 / (pos + 1) as f64)
        }

        pub fn ndcg(ranked: &[KeywordId], relevant: &BTreeSet<KeywordId>) -> f64 {
            let gain = |r: &[KeywordId]| -> f64 {
                r.iter()
                    .enumerate()
                    .map(|(i, k)| {
                        if relevant.contains(k) {
                            1.0 / ((i + 2) as f64).log2()
                        } else {
                            0.0
                        }
                    })
                    .sum()
            };
            let mut ideal: Vec<KeywordId> = relevant.iter().copied().collect();
            ideal.extend(ranked.iter().filter(|k| !relevant.contains(k)).copied());
            gain(ranked) / gain(&ideal)
        }
    }

    fn permutations(items: &[u32]) -> Vec<Vec<u32>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for (i, first) in items.iter().enumerate() {
            let mut rest = items.to_vec();
            rest.remove(i);
            for mut p in permutations(&rest) {
                p.insert(0, *first);
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn metrics_match_reference_exhaustively_up_to_five() {
        for n in 1..=5u32 {
            let items: Vec<u32> = (0..n).collect();
            for perm in permutations(&items) {
                let ranked = ids(&perm);
                for mask in 1..(1u32 << n) {
                    let relevant: BTreeSet<KeywordId> = (0..n)
                        .filter(|i| mask & (1 << i) != 0)
                        .map(KeywordId)
                        .collect();
                    assert!(
                        (metric_map(&ranked, &relevant) - reference::ap(&ranked, &relevant)).abs()
                            < 1e-12
                    );
                    assert!(
                        (metric_mrr(&ranked, &relevant) - reference::rr(&ranked, &relevant)).abs()
                            < 1e-12
                    );
                    assert!(
                        (metric_ndcg(&ranked, &relevant) - reference::ndcg(&ranked, &relevant))
                            .abs()
                            < 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn missing_relevant_items_contribute_zero() {
        // relevant item 9 is not in the ranking at all
        let ranked = ids(&[1, 2, 3]);
        let relevant = relset(&[1, 9]);
        assert!((metric_map(&ranked, &relevant) - 0.5).abs() < 1e-12);
        let ndcg = metric_ndcg(&ranked, &relevant);
        let expected = 1.0 / (1.0 + 1.0 / 3f64.log2());
        assert!((ndcg - expected).abs() < 1e-12);
    }

    #[test]
    fn nll_examples() {
        let two_equal = vec![(KeywordId(0), 0.4), (KeywordId(1), 0.4)];
        let nll = metric_nll(&two_equal, KeywordId(0), 10.0).unwrap();
        assert!((nll - std::f64::consts::LN_2).abs() < 1e-12);

        let dominant = vec![
            (KeywordId(0), 1.0),
            (KeywordId(1), -1.0),
            (KeywordId(2), -1.0),
        ];
        let nll = metric_nll(&dominant, KeywordId(0), 10.0).unwrap();
        assert!(nll < 1e-8, "nll {nll}");

        let single = vec![(KeywordId(3), 0.2)];
        assert_eq!(metric_nll(&single, KeywordId(3), 10.0).unwrap(), 0.0);

        assert!(metric_nll(&single, KeywordId(4), 10.0).is_err());
    }

    #[test]
    fn evaluation_is_case_order_free_and_rejects_empty_input() {
        use crate::corpus::{generate_universe, simulate_click_log, GenConfig};
        use crate::sampler::draw_samples;
        use crate::trainer::{train, TrainConfig};

        let gen = GenConfig {
            n_categories: 1,
            words_per_category: 12,
            keywords_per_category: 8,
            ads_per_category: 3,
            queries_per_category: 10,
            holdout_fraction: 0.2,
            ..GenConfig::default()
        };
        let universe = generate_universe(&gen, 3).unwrap();
        let wv = crate::corpus::pretrained_word_vectors(&universe, 0.05, 1).unwrap();
        let log = simulate_click_log(&universe, 400, 2).unwrap();
        let samples = draw_samples(&log, &universe, &wv, 4, 3).unwrap();
        let cfg = crate::tower::ModelConfig {
            d_w: 6,
            d_c: 4,
            d_h: 8,
            d_out: 8,
            t_max: 6,
            c_max: 6,
            n_blocks: 1,
            flags: crate::tower::AblationFlags::full(),
            gamma: 10.0,
        };
        let train_cfg = TrainConfig {
            epochs: 1,
            batch_size: 16,
            max_samples: 60,
            ..TrainConfig::default()
        };
        let (ckpt, _) = train(&samples, &universe, &cfg, &train_cfg, 0, |_, _| Ok(())).unwrap();
        let eval_log = simulate_click_log(&universe, 300, 9).unwrap();
        let mut cases = build_eval_cases(&eval_log, &universe).unwrap();
        let forward = evaluate(&ckpt, &cases, &universe).unwrap();
        cases.reverse();
        let reversed = evaluate(&ckpt, &cases, &universe).unwrap();
        assert_eq!(forward, reversed, "case order leaked into the report");

        assert!(matches!(
            evaluate(&ckpt, &[], &universe),
            Err(Error::EmptyInput(_))
        ));

        // keyword embeddings are bit-stable across rebuilds
        let a = KeywordIndex::build(&ckpt, &universe).unwrap();
        let b = KeywordIndex::build(&ckpt, &universe).unwrap();
        for cat in 0..universe.n_categories {
            let cat = CategoryId(cat as u32);
            assert_eq!(a.category(cat), b.category(cat));
        }
    }

    #[test]
    fn rank_candidates_ties_and_self() {
        let q = vec![1.0f32, 0.0];
        let candidates = vec![
            (KeywordId(7), vec![0.0f32, 1.0]),
            (KeywordId(3), vec![0.0f32, 1.0]),
            (KeywordId(5), vec![1.0f32, 0.0]),
        ];
        let ranked = rank_candidates(&q, &candidates).unwrap();
        assert_eq!(ranked[0].0, KeywordId(5));
        assert!((ranked[0].1 - 1.0).abs() < 1e-12);
        // tie: ascending id
        assert_eq!(ranked[1].0, KeywordId(3));
        assert_eq!(ranked[2].0, KeywordId(7));

        assert!(rank_candidates(&q, &[]).is_err());
        let one = rank_candidates(&q, &candidates[..1]).unwrap();
        assert_eq!(one.len(), 1);
    }
}
