//! Click-log simulation and aggregates.
//!
//! One impression per request: a query is drawn by traffic weight (held-out
//! paraphrases excluded), the serving policy shows the category ad with the
//! highest mean-bid x propensity, and a click is a Bernoulli draw on the
//! ground-truth propensity. The coarse mean-bid policy is deliberately
//! blunter than the per-keyword auction used at evaluation time, the way a
//! legacy serving stack is blunter than the system replacing it.

use std::collections::BTreeMap;
use std::path::Path;

use rand::RngExt;

use super::universe::{cosine_f64, AdId, QueryId, Universe};
use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClickRecord {
    pub request_id: u64,
    pub query: QueryId,
    pub ad: AdId,
    pub clicked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClickLog {
    pub records: Vec<ClickRecord>,
}

/// Ground-truth click propensity: logistic(kappa * cos(topic(q), topic(a))).
pub fn click_propensity(universe: &Universe, query: QueryId, ad: AdId) -> f64 {
    let qt = universe.query_topic(query);
    let at = universe.ad_topic(ad);
    sigmoid(universe.click_sharpness * cosine_f64(&qt, &at))
}

/// The legacy serving stack's view of a query's topic: the ground truth plus
/// a persistent, query-keyed perturbation. The same estimate is used for
/// every log drawn over the universe, the way one production system biases
/// all the traffic it serves.
pub fn legacy_query_topic(universe: &Universe, query: QueryId) -> Vec<f64> {
    let mut topic = universe.query_topic(query);
    if universe.policy_noise == 0.0 {
        return topic;
    }
    let seed = crate::rng::derive_seed_indexed(0x4c45_4741_4359, "legacy-policy", query.0 as u64);
    let mut rng = rng_from(seed, "estimate");
    for t in &mut topic {
        *t += universe.policy_noise * crate::rng::next_gaussian(&mut rng);
    }
    let norm = topic.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for t in &mut topic {
            *t /= norm;
        }
    }
    topic
}

/// Simulate `n_requests` impressions. Deterministic for a fixed seed.
pub fn simulate_click_log(universe: &Universe, n_requests: u64, seed: u64) -> Result<ClickLog> {
    if n_requests == 0 {
        return Err(Error::config("n_requests", "must be >= 1"));
    }
    let eligible: Vec<usize> = (0..universe.queries.len())
        .filter(|i| !universe.queries[*i].holdout)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Generation("no non-holdout queries to draw".into()));
    }
    let mut cumulative = Vec::with_capacity(eligible.len());
    let mut total = 0.0;
    for &qi in &eligible {
        total += universe.queries[qi].weight;
        cumulative.push(total);
    }

    // Per-query serving scores are deterministic; cache them per query.
    // With temperature zero the policy is an exact argmax, otherwise the
    // shown ad is drawn proportionally to score^(1/temperature).
    let mut policy_cache: Vec<Option<(Vec<AdId>, Vec<f64>)>> = vec![None; universe.queries.len()];
    let ads_by_cat: Vec<Vec<AdId>> = (0..universe.n_categories)
        .map(|c| universe.ads_of_category(super::universe::CategoryId(c as u32)))
        .collect();
    let temperature = universe.serve_temperature;

    let mut rng = rng_from(seed, "clicklog");
    let mut records = Vec::with_capacity(n_requests as usize);
    for request_id in 0..n_requests {
        let draw: f64 = rng.random::<f64>() * total;
        let pos = cumulative.partition_point(|c| *c <= draw).min(eligible.len() - 1);
        let query = QueryId(eligible[pos] as u32);

        if policy_cache[query.index()].is_none() {
            let cat = universe.queries[query.index()].category;
            let candidates = &ads_by_cat[cat.index()];
            if candidates.is_empty() {
                return Err(Error::Generation(format!(
                    "category {cat} has no ads to serve"
                )));
            }
            let legacy_topic = legacy_query_topic(universe, query);
            let scores: Vec<f64> = candidates
                .iter()
                .map(|ad| {
                    let estimate = sigmoid(
                        universe.click_sharpness
                            * cosine_f64(&legacy_topic, &universe.ad_topic(*ad)),
                    );
                    universe.ads[ad.index()].mean_bid() * estimate
                })
                .collect();
            let weights = if temperature == 0.0 {
                let mut best = 0;
                for (i, s) in scores.iter().enumerate() {
                    if *s > scores[best] {
                        best = i;
                    }
                }
                let mut w = vec![0.0; scores.len()];
                w[best] = 1.0;
                w
            } else {
                let max = scores.iter().fold(f64::MIN, |a, b| a.max(*b));
                scores.iter().map(|s| (s / max).powf(1.0 / temperature)).collect()
            };
            policy_cache[query.index()] = Some((candidates.clone(), weights));
        }
        let (candidates, weights) = policy_cache[query.index()].as_ref().unwrap();
        let ad = candidates[crate::rng::weighted_index(&mut rng, weights)];
        let clicked = rng.random::<f64>() < click_propensity(universe, query, ad);
        records.push(ClickRecord {
            request_id,
            query,
            ad,
            clicked,
        });
    }
    Ok(ClickLog { records })
}

/// Counts the sampler and the RPM computation run on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogAggregates {
    /// request(q), indexed by query id.
    pub requests_per_query: Vec<u64>,
    /// click(a, q) for pairs with at least one click.
    pub clicks: BTreeMap<(AdId, QueryId), u64>,
    /// n_b: number of ads bidding each keyword (from the universe).
    pub n_bidders: Vec<u32>,
}

impl LogAggregates {
    pub fn requests(&self, query: QueryId) -> u64 {
        self.requests_per_query[query.index()]
    }

    pub fn clicks_for_query(&self, query: QueryId) -> impl Iterator<Item = (AdId, u64)> + '_ {
        self.clicks
            .range((AdId(0), query)..)
            .filter(move |((_, q), _)| *q == query)
            .map(|((a, _), count)| (*a, *count))
    }
}

impl ClickLog {
    pub fn aggregates(&self, universe: &Universe) -> LogAggregates {
        let mut requests_per_query = vec![0u64; universe.queries.len()];
        let mut clicks = BTreeMap::new();
        for record in &self.records {
            requests_per_query[record.query.index()] += 1;
            if record.clicked {
                *clicks.entry((record.ad, record.query)).or_insert(0) += 1;
            }
        }
        LogAggregates {
            requests_per_query,
            clicks,
            n_bidders: universe.bidder_counts(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.request_id,
                r.query,
                r.ad,
                if r.clicked { 1 } else { 0 }
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Format(format!(
                    "click log line {}: expected 4 fields",
                    lineno + 1
                )));
            }
            let bad = |what: &str| Error::Format(format!("click log line {}: {what}", lineno + 1));
            records.push(ClickRecord {
                request_id: fields[0].parse().map_err(|_| bad("request id"))?,
                query: QueryId(fields[1].parse().map_err(|_| bad("query id"))?),
                ad: AdId(fields[2].parse().map_err(|_| bad("ad id"))?),
                clicked: match fields[3] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad("clicked flag")),
                },
            });
        }
        Ok(ClickLog { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Aggregate clicks per query across ads (used by the memory baseline).
pub fn clicks_by_query(log: &ClickLog) -> BTreeMap<QueryId, Vec<(AdId, u64)>> {
    let mut by_query: BTreeMap<QueryId, BTreeMap<AdId, u64>> = BTreeMap::new();
    for record in &log.records {
        if record.clicked {
            *by_query
                .entry(record.query)
                .or_default()
                .entry(record.ad)
                .or_insert(0) += 1;
        }
    }
    by_query
        .into_iter()
        .map(|(q, ads)| (q, ads.into_iter().collect()))
        .collect()
}
