//! RPM-oriented label construction.
//!
//! For a clicked (query, ad) pair, each keyword bought by the ad is scored
//! `price(b|a) * relevance(b, q) / ln(n_b + 1)`; the normalized scores give
//! the positive-sampling distribution. Negatives come from the query's
//! category keyword pool with probability proportional to one minus the
//! score-normalized distribution extended over that pool (keywords the ad did
//! not buy enter with their relevance alone). The damping by `n_b` steers
//! positives toward keywords fewer ads compete for.

use std::collections::BTreeMap;
use std::path::Path;

use crate::corpus::{
    cosine_f64, AdId, ClickLog, KeywordId, LogAggregates, QueryId, Universe, WordVecTable,
};
use crate::error::{Error, Result};
use crate::rng::{rng_from, weighted_index};

/// One labeled training record: a query with positively and negatively
/// sampled keywords from its category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSample {
    pub query: QueryId,
    pub positives: Vec<KeywordId>,
    pub negatives: Vec<KeywordId>,
}

/// Cosine relevance of a keyword to a query under the pretrained word
/// vectors, clamped below at zero.
pub fn relevance(
    keyword: KeywordId,
    query: QueryId,
    universe: &Universe,
    wv: &WordVecTable,
) -> Result<f64> {
    let kw_mean = wv.mean_vector(&universe.keywords[keyword.index()].words)?;
    let q_mean = wv.mean_vector(&universe.queries[query.index()].words)?;
    Ok(cosine_f64(&kw_mean, &q_mean).max(0.0))
}

/// The raw positive-sampling score `price * relevance / ln(n_bidders + 1)`.
pub fn rpm_score(price: f64, relevance: f64, n_bidders: u32) -> f64 {
    price * relevance / (f64::from(n_bidders) + 1.0).ln()
}

/// Score of a keyword bought by `ad` for a clicked `(query, ad)` pair.
pub fn score(
    keyword: KeywordId,
    query: QueryId,
    ad: AdId,
    universe: &Universe,
    aggregates: &LogAggregates,
    wv: &WordVecTable,
) -> Result<f64> {
    let price = universe.ads[ad.index()].price(keyword).ok_or_else(|| {
        Error::Internal(format!("keyword {keyword} is not bought by ad {ad}"))
    })?;
    let n = aggregates.n_bidders[keyword.index()];
    debug_assert!(n >= 1, "bought keyword must have a bidder");
    Ok(rpm_score(price, relevance(keyword, query, universe, wv)?, n))
}

/// Positive-sampling distribution `p(b | a, q)` over the keywords bought by
/// `ad`, in ascending keyword-id order. Falls back to uniform when every
/// score is zero.
pub fn sample_distribution(
    query: QueryId,
    ad: AdId,
    universe: &Universe,
    aggregates: &LogAggregates,
    wv: &WordVecTable,
) -> Result<Vec<(KeywordId, f64)>> {
    let bought = &universe.ads[ad.index()].bought;
    if bought.is_empty() {
        return Err(Error::EmptyInput(format!("ad {ad} buys no keywords")));
    }
    let mut scores = Vec::with_capacity(bought.len());
    for (k, _) in bought {
        scores.push((*k, score(*k, query, ad, universe, aggregates, wv)?));
    }
    let total: f64 = scores.iter().map(|(_, s)| s).sum();
    if total <= 0.0 {
        let uniform = 1.0 / scores.len() as f64;
        return Ok(scores.into_iter().map(|(k, _)| (k, uniform)).collect());
    }
    Ok(scores.into_iter().map(|(k, s)| (k, s / total)).collect())
}

/// Draw training samples from every clicked record in log order: one
/// positive from `p(b|a,q)` and `neg_ratio` distinct negatives from the
/// category pool weighted by `1 - p~`. Deterministic for a fixed seed.
pub fn draw_samples(
    log: &ClickLog,
    universe: &Universe,
    wv: &WordVecTable,
    neg_ratio: usize,
    seed: u64,
) -> Result<Vec<TrainingSample>> {
    if log.records.is_empty() {
        return Err(Error::EmptyInput("click log has no records".into()));
    }
    if neg_ratio == 0 {
        return Err(Error::config("neg_ratio", "must be >= 1"));
    }
    let aggregates = log.aggregates(universe);

    // Per-category keyword pools and cached mean vectors.
    let pools: Vec<Vec<KeywordId>> = (0..universe.n_categories)
        .map(|c| universe.keywords_of_category(crate::corpus::CategoryId(c as u32)))
        .collect();
    let keyword_means: Vec<Vec<f64>> = universe
        .keywords
        .iter()
        .map(|k| wv.mean_vector(&k.words))
        .collect::<Result<_>>()?;
    let mut query_means: Vec<Option<Vec<f64>>> = vec![None; universe.queries.len()];

    let mut rng = rng_from(seed, "samples");
    let mut samples = Vec::new();
    for record in &log.records {
        if !record.clicked {
            continue;
        }
        let query = record.query;
        let ad = record.ad;
        let pool = &pools[universe.queries[query.index()].category.index()];
        if pool.len() < neg_ratio + 1 {
            return Err(Error::Generation(format!(
                "category pool of {} keywords cannot supply {} negatives plus a positive",
                pool.len(),
                neg_ratio
            )));
        }
        if query_means[query.index()].is_none() {
            query_means[query.index()] =
                Some(wv.mean_vector(&universe.queries[query.index()].words)?);
        }
        let q_mean = query_means[query.index()].as_ref().unwrap();

        // Positive from the per-ad normalized score distribution.
        let ad_ref = &universe.ads[ad.index()];
        let mut pos_weights = Vec::with_capacity(ad_ref.bought.len());
        for (k, price) in &ad_ref.bought {
            let rel = cosine_f64(&keyword_means[k.index()], q_mean).max(0.0);
            pos_weights.push(rpm_score(*price, rel, aggregates.n_bidders[k.index()]));
        }
        if pos_weights.iter().sum::<f64>() <= 0.0 {
            pos_weights.iter_mut().for_each(|w| *w = 1.0);
        }
        let positive = ad_ref.bought[weighted_index(&mut rng, &pos_weights)].0;

        // p~ over the category pool: the ad's scores where defined,
        // relevance alone elsewhere, normalized jointly.
        let mut extended = Vec::with_capacity(pool.len());
        for k in pool {
            let rel = cosine_f64(&keyword_means[k.index()], q_mean).max(0.0);
            let s = match ad_ref.price(*k) {
                Some(price) => rpm_score(price, rel, aggregates.n_bidders[k.index()]),
                None => rel,
            };
            extended.push(s);
        }
        let total: f64 = extended.iter().sum();
        let p_tilde: Vec<f64> = if total > 0.0 {
            extended.iter().map(|s| s / total).collect()
        } else {
            vec![1.0 / pool.len() as f64; pool.len()]
        };

        let mut neg_weights: Vec<f64> = pool
            .iter()
            .zip(&p_tilde)
            .map(|(k, p)| if *k == positive { 0.0 } else { 1.0 - p })
            .collect();
        let mut negatives = Vec::with_capacity(neg_ratio);
        for _ in 0..neg_ratio {
            if neg_weights.iter().sum::<f64>() <= 0.0 {
                for (i, w) in neg_weights.iter_mut().enumerate() {
                    if pool[i] != positive && !negatives.contains(&pool[i]) {
                        *w = 1.0;
                    }
                }
            }
            let i = weighted_index(&mut rng, &neg_weights);
            negatives.push(pool[i]);
            neg_weights[i] = 0.0;
        }

        samples.push(TrainingSample {
            query,
            positives: vec![positive],
            negatives,
        });
    }
    Ok(samples)
}

fn ids_to_csv(ids: &[KeywordId]) -> String {
    ids.iter()
        .map(|k| k.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn samples_to_text(samples: &[TrainingSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&format!(
            "{}\tpos:{}\tneg:{}\n",
            s.query,
            ids_to_csv(&s.positives),
            ids_to_csv(&s.negatives)
        ));
    }
    out
}

pub fn samples_from_text(text: &str) -> Result<Vec<TrainingSample>> {
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let bad = |what: &str| Error::Format(format!("samples line {}: {what}", lineno + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad("expected 3 fields"));
        }
        let query = QueryId(fields[0].parse().map_err(|_| bad("query id"))?);
        let pos = fields[1]
            .strip_prefix("pos:")
            .ok_or_else(|| bad("missing pos: prefix"))?;
        let neg = fields[2]
            .strip_prefix("neg:")
            .ok_or_else(|| bad("missing neg: prefix"))?;
        let parse_ids = |s: &str| -> Result<Vec<KeywordId>> {
            s.split(',')
                .map(|p| {
                    p.parse()
                        .map(KeywordId)
                        .map_err(|_| bad("keyword id"))
                })
                .collect()
        };
        samples.push(TrainingSample {
            query,
            positives: parse_ids(pos)?,
            negatives: parse_ids(neg)?,
        });
    }
    Ok(samples)
}

pub fn save_samples(samples: &[TrainingSample], path: &Path) -> Result<()> {
    std::fs::write(path, samples_to_text(samples))?;
    Ok(())
}

pub fn load_samples(path: &Path) -> Result<Vec<TrainingSample>> {
    samples_from_text(&std::fs::read_to_string(path)?)
}

/// Per-query positive-draw frequencies over many sampler runs; used by the
/// proportionality verifier.
pub fn positive_frequencies(
    samples: &[TrainingSample],
    query: QueryId,
) -> BTreeMap<KeywordId, f64> {
    let mut counts: BTreeMap<KeywordId, u64> = BTreeMap::new();
    let mut total = 0u64;
    for s in samples.iter().filter(|s| s.query == query) {
        for p in &s.positives {
            *counts.entry(*p).or_insert(0) += 1;
            total += 1;
        }
    }
    counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / total as f64))
        .collect()
}
