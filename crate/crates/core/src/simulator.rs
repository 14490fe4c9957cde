//! The "online" side: RPM accounting, the statistic-based memory baseline,
//! paired A/B traffic simulation with head/tail slicing, and the Monte-Carlo
//! verifier for the sampling-probability/RPM proportionality.
//!
//! The A/B harness draws one shared query stream and one shared click-noise
//! stream for both arms, so two identical retrieval policies produce
//! bit-identical revenue.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::corpus::{
    head_tail_split, pretrained_word_vectors, Ad, AdId, CategoryId, ClickLog, ClickRecord,
    Keyword, KeywordId, LogAggregates, Query, QueryId, Universe, Word, WordId,
};
use crate::error::{Error, Result};
use crate::evaluator::KeywordIndex;
use crate::rng::{rng_from, weighted_index};
use crate::sampler::{relevance, rpm_score, sample_distribution};
use crate::tower::TowerSide;
use crate::trainer::Checkpoint;

pub const RPM_DISPLAY_SCALE: f64 = 1000.0;

/// Raw revenue-per-request ratio `sum_j price(a_j, b) * click(a_j, q) / request(q)`.
/// Multiply by [`RPM_DISPLAY_SCALE`] for the per-mille display value.
pub fn rpm(
    query: QueryId,
    keyword: KeywordId,
    aggregates: &LogAggregates,
    universe: &Universe,
) -> Result<f64> {
    let requests = aggregates.requests(query);
    if requests == 0 {
        return Err(Error::EmptyInput(format!(
            "query {query} has no requests in the log"
        )));
    }
    let mut revenue = 0.0;
    for (ad, clicks) in aggregates.clicks_for_query(query) {
        if let Some(price) = universe.ads[ad.index()].price(keyword) {
            revenue += price * clicks as f64;
        }
    }
    Ok(revenue / requests as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewriteEntry {
    pub keyword: u32,
    pub clicks: u64,
    pub weighted_clicks: f64,
}

/// Exact-match rewrite table: query surface -> ranked keywords with click
/// statistics. Contains only queries observed (and clicked) in the log.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewriteTable {
    entries: BTreeMap<String, Vec<RewriteEntry>>,
}

impl RewriteTable {
    pub fn lookup(&self, surface: &str) -> &[RewriteEntry] {
        self.entries.get(surface).map_or(&[], |v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The statistic-based control: for each training query, the keywords of its
/// clicked ads ranked by price-weighted click mass.
pub fn build_memory_baseline(log: &ClickLog, universe: &Universe) -> RewriteTable {
    let mut entries = BTreeMap::new();
    for (query, ads) in crate::corpus::clicks_by_query(log) {
        let mut stats: BTreeMap<KeywordId, (u64, f64)> = BTreeMap::new();
        for (ad, clicks) in ads {
            for (k, price) in &universe.ads[ad.index()].bought {
                let slot = stats.entry(*k).or_insert((0, 0.0));
                slot.0 += clicks;
                slot.1 += price * clicks as f64;
            }
        }
        let mut ranked: Vec<RewriteEntry> = stats
            .into_iter()
            .map(|(k, (clicks, weighted))| RewriteEntry {
                keyword: k.0,
                clicks,
                weighted_clicks: weighted,
            })
            .collect();
        ranked.sort_by(|a, b| {
            b.weighted_clicks
                .partial_cmp(&a.weighted_clicks)
                .unwrap()
                .then(a.keyword.cmp(&b.keyword))
        });
        entries.insert(universe.query_surface(query), ranked);
    }
    RewriteTable { entries }
}

/// A retrieval arm of the A/B test.
pub trait Rewriter {
    fn rewrite(&self, query: QueryId, top_k: usize) -> Vec<KeywordId>;
}

pub struct MemoryRewriter<'a> {
    table: &'a RewriteTable,
    surfaces: Vec<String>,
}

impl<'a> MemoryRewriter<'a> {
    pub fn new(table: &'a RewriteTable, universe: &Universe) -> Self {
        let surfaces = (0..universe.queries.len())
            .map(|i| universe.query_surface(QueryId(i as u32)))
            .collect();
        MemoryRewriter { table, surfaces }
    }
}

impl Rewriter for MemoryRewriter<'_> {
    fn rewrite(&self, query: QueryId, top_k: usize) -> Vec<KeywordId> {
        self.table
            .lookup(&self.surfaces[query.index()])
            .iter()
            .take(top_k)
            .map(|e| KeywordId(e.keyword))
            .collect()
    }
}

/// Model arm: every query ranking is precomputed from the checkpoint, so
/// rewrites are pure lookups.
pub struct ModelRewriter {
    ranked: Vec<Vec<KeywordId>>,
}

impl ModelRewriter {
    pub fn build(ckpt: &Checkpoint, universe: &Universe) -> Result<Self> {
        if ckpt.meta.universe_fingerprint != universe.fingerprint() {
            return Err(Error::Mismatch(
                "checkpoint was trained on a different universe".into(),
            ));
        }
        let index = KeywordIndex::build(ckpt, universe)?;
        let mut ranked = Vec::with_capacity(universe.queries.len());
        for i in 0..universe.queries.len() {
            let id = QueryId(i as u32);
            let q_vec = ckpt
                .model
                .encode_text(TowerSide::Query, &universe.query_surface(id))?;
            let scored = crate::evaluator::rank_candidates(
                &q_vec,
                index.category(universe.queries[i].category),
            )?;
            ranked.push(scored.into_iter().map(|(k, _)| k).collect());
        }
        Ok(ModelRewriter { ranked })
    }
}

impl Rewriter for ModelRewriter {
    fn rewrite(&self, query: QueryId, top_k: usize) -> Vec<KeywordId> {
        self.ranked[query.index()].iter().take(top_k).copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct ArmStats {
    pub revenue: f64,
    pub served: u64,
    pub rpm: f64,
    pub rpm_displayed: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceReport {
    pub slice: String,
    pub requests: u64,
    pub control: ArmStats,
    pub treatment: ArmStats,
    pub lift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiftReport {
    pub n_requests: u64,
    pub top_k: usize,
    pub head_fraction: f64,
    pub head: SliceReport,
    pub tail: SliceReport,
    pub combined: SliceReport,
    /// The held-out paraphrase sub-slice of the tail.
    pub holdout: SliceReport,
}

impl LiftReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "requests: {}\ntop_k: {}\nhead_fraction: {}\n",
            self.n_requests, self.top_k, self.head_fraction
        );
        for s in [&self.head, &self.tail, &self.combined, &self.holdout] {
            out.push_str(&format!(
                "{}: requests={} control_rpm={} treatment_rpm={} lift={} control_coverage={} treatment_coverage={}\n",
                s.slice,
                s.requests,
                s.control.rpm_displayed,
                s.treatment.rpm_displayed,
                s.lift,
                s.control.coverage,
                s.treatment.coverage,
            ));
        }
        out
    }
}

#[derive(Default, Clone, Copy)]
struct QueryAccumulator {
    requests: u64,
    revenue: [f64; 2],
    served: [u64; 2],
}

/// Paired A/B over fresh traffic (held-out paraphrases included): both arms
/// see the same query and click-noise streams, retrieve `top_k` keywords,
/// and show the eCPM-maximal ad among the retrieved keywords' bidders at its
/// first-price bid.
pub fn run_paired_ab(
    universe: &Universe,
    control: &dyn Rewriter,
    treatment: &dyn Rewriter,
    n_requests: u64,
    top_k: usize,
    head_fraction: f64,
    seed: u64,
) -> Result<LiftReport> {
    if top_k == 0 {
        return Err(Error::config("top_k", "must be >= 1"));
    }
    if n_requests == 0 {
        return Err(Error::config("n_requests", "must be >= 1"));
    }
    if universe.queries.is_empty() {
        return Err(Error::EmptyInput("universe has no queries".into()));
    }
    let bidders = universe.bidders();
    let mut cumulative = Vec::with_capacity(universe.queries.len());
    let mut total_weight = 0.0;
    for q in &universe.queries {
        total_weight += q.weight;
        cumulative.push(total_weight);
    }
    let query_topics: Vec<Vec<f64>> = (0..universe.queries.len())
        .map(|i| universe.query_topic(QueryId(i as u32)))
        .collect();
    let ad_topics: Vec<Vec<f64>> = (0..universe.ads.len())
        .map(|i| universe.ad_topic(AdId(i as u32)))
        .collect();
    let propensity = |q: QueryId, a: AdId| -> f64 {
        crate::nn::sigmoid(
            universe.click_sharpness
                * crate::corpus::cosine_f64(&query_topics[q.index()], &ad_topics[a.index()]),
        )
    };

    let mut per_query: Vec<QueryAccumulator> =
        vec![QueryAccumulator::default(); universe.queries.len()];
    let mut rng = rng_from(seed, "ab");
    use rand::RngExt;
    for _ in 0..n_requests {
        let draw: f64 = rng.random::<f64>() * total_weight;
        let qi = cumulative
            .partition_point(|c| *c <= draw)
            .min(universe.queries.len() - 1);
        let query = QueryId(qi as u32);
        let click_noise: f64 = rng.random();
        per_query[qi].requests += 1;
        for (arm_idx, arm) in [control, treatment].into_iter().enumerate() {
            let retrieved = arm.rewrite(query, top_k);
            let mut best: Option<(f64, AdId, f64)> = None;
            for kw in &retrieved {
                for (ad, price) in &bidders[kw.index()] {
                    let ecpm = price * propensity(query, *ad);
                    if best.map_or(true, |(b, _, _)| ecpm > b) {
                        best = Some((ecpm, *ad, *price));
                    }
                }
            }
            if let Some((_, ad, price)) = best {
                per_query[qi].served[arm_idx] += 1;
                if click_noise < propensity(query, ad) {
                    per_query[qi].revenue[arm_idx] += price;
                }
            }
        }
    }

    let realized: BTreeMap<QueryId, u64> = per_query
        .iter()
        .enumerate()
        .filter(|(_, acc)| acc.requests > 0)
        .map(|(i, acc)| (QueryId(i as u32), acc.requests))
        .collect();
    let (head, _tail) = head_tail_split(&realized, head_fraction)?;

    let aggregate = |name: &str, queries: &mut dyn Iterator<Item = QueryId>| -> SliceReport {
        let mut requests = 0u64;
        let mut revenue = [0.0f64; 2];
        let mut served = [0u64; 2];
        for q in queries {
            let acc = &per_query[q.index()];
            requests += acc.requests;
            for arm in 0..2 {
                revenue[arm] += acc.revenue[arm];
                served[arm] += acc.served[arm];
            }
        }
        let arm = |i: usize| -> ArmStats {
            let rpm = if requests > 0 {
                revenue[i] / requests as f64
            } else {
                0.0
            };
            ArmStats {
                revenue: revenue[i],
                served: served[i],
                rpm,
                rpm_displayed: rpm * RPM_DISPLAY_SCALE,
                coverage: if requests > 0 {
                    served[i] as f64 / requests as f64
                } else {
                    0.0
                },
            }
        };
        let control = arm(0);
        let treatment = arm(1);
        let lift = if control.rpm > 0.0 {
            (treatment.rpm - control.rpm) / control.rpm
        } else if treatment.rpm > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        SliceReport {
            slice: name.to_string(),
            requests,
            control,
            treatment,
            lift,
        }
    };

    let all: Vec<QueryId> = realized.keys().copied().collect();
    let head_report = aggregate("head", &mut all.iter().copied().filter(|q| head.contains(q)));
    let tail_report = aggregate("tail", &mut all.iter().copied().filter(|q| !head.contains(q)));
    let combined = aggregate("head_and_tail", &mut all.iter().copied());
    let holdout = aggregate(
        "holdout_tail",
        &mut all
            .iter()
            .copied()
            .filter(|q| universe.queries[q.index()].holdout),
    );
    Ok(LiftReport {
        n_requests,
        top_k,
        head_fraction,
        head: head_report,
        tail: tail_report,
        combined,
        holdout,
    })
}

/// The standard pairing: memory baseline as control, checkpoint as treatment.
pub fn run_ab(
    universe: &Universe,
    table: &RewriteTable,
    ckpt: &Checkpoint,
    n_requests: u64,
    top_k: usize,
    head_fraction: f64,
    seed: u64,
) -> Result<LiftReport> {
    let control = MemoryRewriter::new(table, universe);
    let treatment = ModelRewriter::build(ckpt, universe)?;
    run_paired_ab(
        universe,
        &control,
        &treatment,
        n_requests,
        top_k,
        head_fraction,
        seed,
    )
}

/// Construction recipe for the proportionality check: a single query, a
/// chain of ads each buying two adjacent keywords, and hand-placed word
/// topics giving exact relevances.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionalitySpec {
    /// Relevance of each keyword to the fixed query, in [0, 1].
    pub relevances: Vec<f64>,
    /// Raw (pre-equalization) price pair for each ad in the chain.
    pub raw_prices: Vec<[f64; 2]>,
    /// Clicked-record count for each ad.
    pub click_counts: Vec<u64>,
    /// Rescale each ad's prices so its score normalizer equals one.
    pub equalize: bool,
}

impl Default for ProportionalitySpec {
    fn default() -> Self {
        ProportionalitySpec {
            relevances: vec![0.9, 0.7, 0.5, 0.3],
            raw_prices: vec![[1.0, 2.0], [1.5, 1.0], [2.0, 3.0]],
            click_counts: vec![30, 50, 20],
            equalize: true,
        }
    }
}

impl ProportionalitySpec {
    fn validate(&self) -> Result<()> {
        let n = self.relevances.len();
        if n < 2 {
            return Err(Error::config("relevances", "need at least two keywords"));
        }
        if self.raw_prices.len() != n - 1 || self.click_counts.len() != n - 1 {
            return Err(Error::config(
                "raw_prices",
                "chain needs exactly one ad per adjacent keyword pair",
            ));
        }
        for r in &self.relevances {
            if !(0.0..=1.0).contains(r) {
                return Err(Error::config("relevances", "must be in [0, 1]"));
            }
        }
        for p in &self.raw_prices {
            if !(p[0] > 0.0 && p[1] > 0.0) {
                return Err(Error::config("raw_prices", "must be positive"));
            }
        }
        if self.click_counts.iter().any(|c| *c == 0) {
            return Err(Error::config("click_counts", "must be positive"));
        }
        Ok(())
    }
}

/// Build the hand-crafted universe and click log realizing a spec.
pub fn build_proportionality_universe(
    spec: &ProportionalitySpec,
) -> Result<(Universe, ClickLog, QueryId)> {
    spec.validate()?;
    let n = spec.relevances.len();
    let g = 4;
    let mut words = vec![Word {
        surface: "query".into(),
        category: CategoryId(0),
        topic: vec![1.0, 0.0, 0.0, 0.0],
        topic_alt: None,
    }];
    for (i, rel) in spec.relevances.iter().enumerate() {
        let sin = (1.0 - rel * rel).sqrt();
        let snap = |v: f64| if v.abs() < 1e-12 { 0.0f32 } else { v as f32 };
        words.push(Word {
            surface: format!("kw{i}"),
            category: CategoryId(0),
            topic: vec![snap(*rel), snap(sin), 0.0, 0.0],
            topic_alt: None,
        });
    }
    let keywords: Vec<Keyword> = (0..n)
        .map(|i| Keyword {
            words: vec![WordId(i as u32 + 1)],
            category: CategoryId(0),
        })
        .collect();
    let mut universe = Universe {
        latent_dim: g,
        n_categories: 1,
        click_sharpness: 4.0,
            serve_temperature: 0.0,
            policy_noise: 0.0,
        words,
        keywords,
        ads: (0..n - 1)
            .map(|i| Ad {
                category: CategoryId(0),
                bought: vec![
                    (KeywordId(i as u32), spec.raw_prices[i][0]),
                    (KeywordId(i as u32 + 1), spec.raw_prices[i][1]),
                ],
                topic: vec![1.0, 0.0, 0.0, 0.0],
            })
            .collect(),
        queries: vec![Query {
            words: vec![WordId(0)],
            filler: vec![false],
            category: CategoryId(0),
            weight: 1.0,
            holdout: false,
        }],
    };

    if spec.equalize {
        let wv = pretrained_word_vectors(&universe, 0.0, 0)?;
        let n_bidders = universe.bidder_counts();
        let query = QueryId(0);
        let mut scales = Vec::with_capacity(universe.ads.len());
        for ad in &universe.ads {
            let mut normalizer = 0.0;
            for (k, price) in &ad.bought {
                let rel = relevance(*k, query, &universe, &wv)?;
                normalizer += rpm_score(*price, rel, n_bidders[k.index()]);
            }
            if normalizer <= 0.0 {
                return Err(Error::Generation(
                    "equal-normalizer construction infeasible: an ad has zero total score"
                        .into(),
                ));
            }
            scales.push(1.0 / normalizer);
        }
        for (ad, scale) in universe.ads.iter_mut().zip(scales) {
            for (_, price) in &mut ad.bought {
                *price *= scale;
            }
        }
    }

    let mut records = Vec::new();
    let mut request_id = 0u64;
    for (i, count) in spec.click_counts.iter().enumerate() {
        for _ in 0..*count {
            records.push(ClickRecord {
                request_id,
                query: QueryId(0),
                ad: AdId(i as u32),
                clicked: true,
            });
            request_id += 1;
        }
    }
    universe.validate()?;
    Ok((universe, ClickLog { records }, QueryId(0)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProportionalityRow {
    pub keyword: u32,
    pub empirical: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProportionalityReport {
    pub n_draws: u64,
    pub rows: Vec<ProportionalityRow>,
    /// L1 distance between empirical draw frequencies and normalized f * RPM.
    pub l1: f64,
    pub threshold: f64,
    pub pass: bool,
    /// Analytic deviation of the same construction without equal normalizers;
    /// reported, not asserted.
    pub general_l1: f64,
}

impl ProportionalityReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("draws: {}\n", self.n_draws);
        for row in &self.rows {
            out.push_str(&format!(
                "keyword {}: empirical={} predicted={}\n",
                row.keyword, row.empirical, row.predicted
            ));
        }
        out.push_str(&format!(
            "l1: {}\nthreshold: {}\npass: {}\ngeneral_l1: {}\n",
            self.l1, self.threshold, self.pass, self.general_l1
        ));
        out
    }
}

/// Normalized f(b,q) * RPM(q,b) over the keyword set.
fn predicted_distribution(
    universe: &Universe,
    log: &ClickLog,
    query: QueryId,
) -> Result<Vec<f64>> {
    let wv = pretrained_word_vectors(universe, 0.0, 0)?;
    let aggregates = log.aggregates(universe);
    let mut raw = Vec::with_capacity(universe.keywords.len());
    for i in 0..universe.keywords.len() {
        let k = KeywordId(i as u32);
        let rel = relevance(k, query, universe, &wv)?;
        let n = aggregates.n_bidders[i];
        let f = if n > 0 {
            rel / (f64::from(n) + 1.0).ln()
        } else {
            0.0
        };
        raw.push(f * rpm(query, k, &aggregates, universe)?);
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::Numerical("predicted distribution is all zero".into()));
    }
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Exact per-keyword positive probability when replaying the clicked records:
/// `sum_ads (clicks_a / total_clicks) * p(b | a, q)`.
fn analytic_empirical_distribution(
    universe: &Universe,
    log: &ClickLog,
    query: QueryId,
) -> Result<Vec<f64>> {
    let wv = pretrained_word_vectors(universe, 0.0, 0)?;
    let aggregates = log.aggregates(universe);
    let mut out = vec![0.0; universe.keywords.len()];
    let mut total_clicks = 0u64;
    let clicked: Vec<(AdId, u64)> = aggregates
        .clicks_for_query(query)
        .inspect(|(_, c)| total_clicks += c)
        .collect();
    for (ad, clicks) in clicked {
        let dist = sample_distribution(query, ad, universe, &aggregates, &wv)?;
        for (k, p) in dist {
            out[k.index()] += (clicks as f64 / total_clicks as f64) * p;
        }
    }
    Ok(out)
}

/// Monte-Carlo verification that positive-sampling frequency tracks
/// normalized f * RPM on the equal-normalizer construction, plus the analytic
/// deviation of the general (unequal-normalizer) variant.
pub fn verify_proportionality(
    spec: &ProportionalitySpec,
    n_draws: u64,
    seed: u64,
) -> Result<ProportionalityReport> {
    if n_draws == 0 {
        return Err(Error::config("n_draws", "must be >= 1"));
    }
    let equal_spec = ProportionalitySpec {
        equalize: true,
        ..spec.clone()
    };
    let (universe, log, query) = build_proportionality_universe(&equal_spec)?;
    let wv = pretrained_word_vectors(&universe, 0.0, 0)?;
    let aggregates = log.aggregates(&universe);

    // Per-ad positive distributions through the production sampler path.
    let clicked: Vec<AdId> = log.records.iter().map(|r| r.ad).collect();
    let mut per_ad: BTreeMap<AdId, Vec<(KeywordId, f64)>> = BTreeMap::new();
    for ad in &clicked {
        if !per_ad.contains_key(ad) {
            per_ad.insert(
                *ad,
                sample_distribution(query, *ad, &universe, &aggregates, &wv)?,
            );
        }
    }

    let mut rng = rng_from(seed, "verify");
    let mut counts = vec![0u64; universe.keywords.len()];
    for t in 0..n_draws {
        let ad = clicked[(t % clicked.len() as u64) as usize];
        let dist = &per_ad[&ad];
        let weights: Vec<f64> = dist.iter().map(|(_, p)| *p).collect();
        let pick = weighted_index(&mut rng, &weights);
        counts[dist[pick].0.index()] += 1;
    }
    let empirical: Vec<f64> = counts.iter().map(|c| *c as f64 / n_draws as f64).collect();
    let predicted = predicted_distribution(&universe, &log, query)?;
    let l1: f64 = empirical
        .iter()
        .zip(&predicted)
        .map(|(e, p)| (e - p).abs())
        .sum();

    // General case: same construction, raw prices, analytic comparison.
    let general_spec = ProportionalitySpec {
        equalize: false,
        ..spec.clone()
    };
    let (gen_universe, gen_log, gen_query) = build_proportionality_universe(&general_spec)?;
    let gen_empirical = analytic_empirical_distribution(&gen_universe, &gen_log, gen_query)?;
    let gen_predicted = predicted_distribution(&gen_universe, &gen_log, gen_query)?;
    let general_l1: f64 = gen_empirical
        .iter()
        .zip(&gen_predicted)
        .map(|(e, p)| (e - p).abs())
        .sum();

    let threshold = 0.02;
    Ok(ProportionalityReport {
        n_draws,
        rows: (0..universe.keywords.len())
            .map(|i| ProportionalityRow {
                keyword: i as u32,
                empirical: empirical[i],
                predicted: predicted[i],
            })
            .collect(),
        l1,
        threshold,
        pass: l1 <= threshold,
        general_l1,
    })
}

pub fn save_report_text(text: &str, path: &Path) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}
