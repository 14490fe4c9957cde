//! Marketplace generation.
//!
//! Ground truth lives in the latent topic vectors: words scatter around a
//! category anchor, keywords and ads sample words/keywords near their own
//! anchor directions, and queries are noisy paraphrases of an anchor keyword.
//! A configured fraction of each category's queries is generated as held-out
//! paraphrases: their surfaces never coincide with a keyword surface and they
//! never enter the click log, which is what starves the exact-match memory
//! baseline on tail traffic.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::universe::{cosine_f64, Ad, CategoryId, Keyword, KeywordId, Query, Universe, Word, WordId};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, next_gaussian, rng_from, shuffle, weighted_index};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_categories: usize,
    pub words_per_category: usize,
    pub keywords_per_category: usize,
    pub ads_per_category: usize,
    pub queries_per_category: usize,
    pub latent_dim: usize,
    /// Zipf exponent s: the rank-r query gets traffic weight r^(-s).
    pub zipf_s: f64,
    /// Log-normal bid price parameters.
    pub price_mu: f64,
    pub price_sigma: f64,
    /// Sharpness of the ground-truth click propensity logistic.
    pub click_sharpness: f64,
    /// Softness of the legacy log serving policy: the shown ad is drawn with
    /// probability proportional to (mean bid x propensity)^(1/temperature);
    /// zero means exact argmax.
    pub serve_temperature: f64,
    /// Persistent per-query error in the legacy policy's propensity estimate.
    pub policy_noise: f64,
    /// Fraction of each category's queries generated as held-out paraphrases.
    pub holdout_fraction: f64,
    pub keyword_words_min: usize,
    pub keyword_words_max: usize,
    pub query_words_min: usize,
    pub query_words_max: usize,
    /// Per-category pool of intent-free filler words (random topics).
    pub filler_words_per_category: usize,
    /// Filler words mixed into each query surface.
    pub query_fillers_min: usize,
    pub query_fillers_max: usize,
    pub keywords_per_ad_min: usize,
    pub keywords_per_ad_max: usize,
    /// Scatter of word topics around their category anchor.
    pub word_spread: f64,
    /// Scatter of keyword/ad anchor directions around the category anchor.
    pub anchor_spread: f64,
    /// Word-choice sharpness when composing keywords and query paraphrases.
    pub affinity: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_categories: 2,
            words_per_category: 60,
            keywords_per_category: 100,
            ads_per_category: 25,
            queries_per_category: 150,
            latent_dim: 16,
            zipf_s: 1.2,
            price_mu: 0.0,
            price_sigma: 0.5,
            click_sharpness: 4.0,
            serve_temperature: 0.3,
            policy_noise: 0.3,
            holdout_fraction: 0.3,
            keyword_words_min: 2,
            keyword_words_max: 3,
            query_words_min: 3,
            query_words_max: 5,
            filler_words_per_category: 8,
            query_fillers_min: 1,
            query_fillers_max: 2,
            keywords_per_ad_min: 3,
            keywords_per_ad_max: 8,
            word_spread: 0.6,
            anchor_spread: 0.4,
            affinity: 8.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_categories < 1 {
            return Err(Error::config("n_categories", "must be >= 1"));
        }
        if self.words_per_category < 10 {
            return Err(Error::config("words_per_category", "must be >= 10"));
        }
        if self.keywords_per_category < 5 {
            return Err(Error::config("keywords_per_category", "must be >= 5"));
        }
        if self.ads_per_category < 2 {
            return Err(Error::config("ads_per_category", "must be >= 2"));
        }
        if self.queries_per_category < 5 {
            return Err(Error::config("queries_per_category", "must be >= 5"));
        }
        if self.latent_dim < 2 {
            return Err(Error::config("latent_dim", "must be >= 2"));
        }
        if !(self.zipf_s > 0.0) {
            return Err(Error::config("zipf_s", "must be > 0"));
        }
        if !(self.price_sigma > 0.0) {
            return Err(Error::config("price_sigma", "must be > 0"));
        }
        if !(self.serve_temperature >= 0.0) {
            return Err(Error::config("serve_temperature", "must be >= 0"));
        }
        if !(self.policy_noise >= 0.0) {
            return Err(Error::config("policy_noise", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::config("holdout_fraction", "must be in [0, 1)"));
        }
        if self.keyword_words_min < 1 || self.keyword_words_min > self.keyword_words_max {
            return Err(Error::config("keyword_words_min", "need 1 <= min <= max"));
        }
        if self.query_words_min < 1 || self.query_words_min > self.query_words_max {
            return Err(Error::config("query_words_min", "need 1 <= min <= max"));
        }
        if self.query_fillers_min > self.query_fillers_max {
            return Err(Error::config("query_fillers_min", "need min <= max"));
        }
        if self.query_fillers_max > 0 && self.filler_words_per_category < self.query_fillers_max {
            return Err(Error::config(
                "filler_words_per_category",
                "must cover query_fillers_max",
            ));
        }
        if self.keywords_per_ad_min < 1 || self.keywords_per_ad_min > self.keywords_per_ad_max {
            return Err(Error::config("keywords_per_ad_min", "need 1 <= min <= max"));
        }
        if self.keywords_per_ad_max > self.keywords_per_category {
            return Err(Error::config(
                "keywords_per_ad_max",
                "cannot exceed keywords_per_category",
            ));
        }
        if self.keyword_words_max > self.words_per_category {
            return Err(Error::config(
                "keyword_words_max",
                "cannot exceed words_per_category",
            ));
        }
        if !(self.word_spread > 0.0) {
            return Err(Error::config("word_spread", "must be > 0"));
        }
        if !(self.anchor_spread > 0.0) {
            return Err(Error::config("anchor_spread", "must be > 0"));
        }
        if !(self.affinity >= 0.0) {
            return Err(Error::config("affinity", "must be >= 0"));
        }
        Ok(())
    }

    fn holdout_per_category(&self) -> usize {
        ((self.queries_per_category as f64) * self.holdout_fraction).round() as usize
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| next_gaussian(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn jitter_unit(rng: &mut ChaCha8Rng, base: &[f64], spread: f64) -> Vec<f64> {
    let mut v: Vec<f64> = base
        .iter()
        .map(|x| x + spread * next_gaussian(rng))
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    v
}

const CONSONANTS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

fn synth_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(2..=4);
    let mut s = String::new();
    for _ in 0..syllables {
        s.push_str(CONSONANTS[rng.random_range(0..CONSONANTS.len())]);
        s.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
    }
    s
}

/// Sense-resolved normalized mean topic of a word sequence (see
/// [`super::universe::sense_flags`]).
fn resolved_mean(words: &[Word], ids: &[WordId], g: usize) -> Vec<f64> {
    let flags = super::universe::sense_flags(ids);
    let mut mean = vec![0.0f64; g];
    for (alt, id) in flags.into_iter().zip(ids) {
        let word = &words[id.index()];
        let topic = match (&word.topic_alt, alt) {
            (Some(t), true) => t,
            _ => &word.topic,
        };
        for (m, v) in mean.iter_mut().zip(topic) {
            *m += f64::from(*v);
        }
    }
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for m in &mut mean {
            *m /= norm;
        }
    }
    mean
}

/// Sample `count` distinct indices with probability proportional to
/// exp(affinity * cos(topic_i, anchor)).
fn sample_near(
    rng: &mut ChaCha8Rng,
    topics: &[Vec<f64>],
    anchor: &[f64],
    affinity: f64,
    count: usize,
) -> Vec<usize> {
    debug_assert!(count <= topics.len());
    let mut weights: Vec<f64> = topics
        .iter()
        .map(|t| (affinity * cosine_f64(t, anchor)).exp())
        .collect();
    let mut chosen = Vec::with_capacity(count);
    for _ in 0..count {
        let i = weighted_index(rng, &weights);
        chosen.push(i);
        weights[i] = 0.0;
    }
    chosen
}

/// Re-draw bid prices multiplicatively (log-normal drift), leaving topics,
/// traffic, and everything else untouched. Models the gap between the time a
/// log was collected and the time a rewriter serves live traffic; zero sigma
/// returns an identical universe.
pub fn drift_prices(universe: &Universe, sigma: f64, seed: u64) -> Result<Universe> {
    if !(sigma >= 0.0) {
        return Err(Error::config("price_drift_sigma", "must be >= 0"));
    }
    let mut drifted = universe.clone();
    if sigma == 0.0 {
        return Ok(drifted);
    }
    let mut rng = rng_from(seed, "price-drift");
    for ad in &mut drifted.ads {
        for (_, price) in &mut ad.bought {
            *price *= (sigma * next_gaussian(&mut rng)).exp();
        }
    }
    Ok(drifted)
}

/// Deterministic marketplace synthesis. Identical `(config, seed)` inputs
/// produce byte-identical universes.
pub fn generate_universe(config: &GenConfig, seed: u64) -> Result<Universe> {
    config.validate()?;
    let g = config.latent_dim;
    let mut rng = rng_from(derive_seed(seed, "universe"), "gen");

    let anchors: Vec<Vec<f64>> = (0..config.n_categories)
        .map(|_| random_unit(&mut rng, g))
        .collect();

    // Words: unique surfaces. Content words scatter around the category
    // anchor; filler words get unrelated random topics and never appear in
    // keywords, only as query-surface noise.
    let mut words = Vec::new();
    let mut is_filler = Vec::new();
    let mut used_surfaces = std::collections::HashSet::new();
    for cat in 0..config.n_categories {
        let total = config.words_per_category + config.filler_words_per_category;
        for i in 0..total {
            let filler = i >= config.words_per_category;
            let mut surface = synth_word(&mut rng);
            let mut tries = 0;
            while used_surfaces.contains(&surface) {
                surface = synth_word(&mut rng);
                tries += 1;
                if tries > 100 {
                    surface = format!("{surface}{cat}x{i}");
                    break;
                }
            }
            used_surfaces.insert(surface.clone());
            let (topic, topic_alt) = if filler {
                (random_unit(&mut rng, g), None)
            } else {
                (
                    jitter_unit(&mut rng, &anchors[cat], config.word_spread),
                    Some(jitter_unit(&mut rng, &anchors[cat], config.word_spread)),
                )
            };
            words.push(Word {
                surface,
                category: CategoryId(cat as u32),
                topic: topic.into_iter().map(|v| v as f32).collect(),
                topic_alt: topic_alt.map(|t| t.into_iter().map(|v| v as f32).collect()),
            });
            is_filler.push(filler);
        }
    }
    let word_topics: Vec<Vec<f64>> = words
        .iter()
        .map(|w| w.topic.iter().map(|v| f64::from(*v)).collect())
        .collect();

    // Keywords: short content-word sequences sampled near a per-keyword anchor.
    let mut keywords: Vec<Keyword> = Vec::new();
    let mut keyword_sequences = std::collections::HashSet::new();
    for cat in 0..config.n_categories {
        let cat_words: Vec<usize> = (0..words.len())
            .filter(|i| words[*i].category.index() == cat && !is_filler[*i])
            .collect();
        let cat_topics: Vec<Vec<f64>> = cat_words.iter().map(|i| word_topics[*i].clone()).collect();
        for _ in 0..config.keywords_per_category {
            let mut sequence = None;
            for _ in 0..100 {
                let anchor = jitter_unit(&mut rng, &anchors[cat], config.anchor_spread);
                let len = rng.random_range(config.keyword_words_min..=config.keyword_words_max);
                let picks = sample_near(&mut rng, &cat_topics, &anchor, config.affinity, len);
                let candidate: Vec<WordId> =
                    picks.iter().map(|p| WordId(cat_words[*p] as u32)).collect();
                if keyword_sequences.insert(candidate.clone()) {
                    sequence = Some(candidate);
                    break;
                }
            }
            let words = sequence.ok_or_else(|| {
                Error::Generation(format!(
                    "could not generate a unique keyword in category {cat}; \
                     increase words_per_category or keyword length range"
                ))
            })?;
            keywords.push(Keyword {
                words,
                category: CategoryId(cat as u32),
            });
        }
    }

    // Ads: buy keywords near the ad's topic; log-normal bid prices.
    let mut ads = Vec::new();
    for cat in 0..config.n_categories {
        let cat_keywords: Vec<usize> = (0..keywords.len())
            .filter(|i| keywords[*i].category.index() == cat)
            .collect();
        let kw_topics: Vec<Vec<f64>> = cat_keywords
            .iter()
            .map(|ki| resolved_mean(&words, &keywords[*ki].words, g))
            .collect();
        for _ in 0..config.ads_per_category {
            let topic = jitter_unit(&mut rng, &anchors[cat], config.anchor_spread);
            let count = rng.random_range(config.keywords_per_ad_min..=config.keywords_per_ad_max);
            let picks = sample_near(&mut rng, &kw_topics, &topic, config.affinity, count);
            let mut bought: Vec<(KeywordId, f64)> = picks
                .iter()
                .map(|p| {
                    let price = (config.price_mu + config.price_sigma * next_gaussian(&mut rng)).exp();
                    (KeywordId(cat_keywords[*p] as u32), price)
                })
                .collect();
            bought.sort_by_key(|(k, _)| *k);
            ads.push(Ad {
                category: CategoryId(cat as u32),
                bought,
                topic: topic.into_iter().map(|v| v as f32).collect(),
            });
        }
    }

    // Queries: paraphrases near an anchor keyword. The last
    // holdout_per_category of each category never coincide with a keyword
    // surface and are flagged held-out.
    let keyword_surface_set: std::collections::HashSet<String> = (0..keywords.len())
        .map(|i| {
            keywords[i]
                .words
                .iter()
                .map(|w| words[w.index()].surface.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let mut queries = Vec::new();
    let mut query_surfaces = std::collections::HashSet::new();
    let n_holdout = config.holdout_per_category();
    for cat in 0..config.n_categories {
        let cat_words: Vec<usize> = (0..words.len())
            .filter(|i| words[*i].category.index() == cat && !is_filler[*i])
            .collect();
        let cat_fillers: Vec<usize> = (0..words.len())
            .filter(|i| words[*i].category.index() == cat && is_filler[*i])
            .collect();
        let cat_topics: Vec<Vec<f64>> = cat_words.iter().map(|i| word_topics[*i].clone()).collect();
        let cat_keywords: Vec<usize> = (0..keywords.len())
            .filter(|i| keywords[*i].category.index() == cat)
            .collect();
        for qi in 0..config.queries_per_category {
            let holdout = qi >= config.queries_per_category - n_holdout;
            let mut accepted = None;
            for _ in 0..200 {
                let anchor_kw = cat_keywords[rng.random_range(0..cat_keywords.len())];
                let anchor = resolved_mean(&words, &keywords[anchor_kw].words, g);
                let len = rng.random_range(config.query_words_min..=config.query_words_max);
                let len = len.min(cat_words.len());
                let picks = sample_near(&mut rng, &cat_topics, &anchor, config.affinity, len);
                let mut slots: Vec<(WordId, bool)> = picks
                    .iter()
                    .map(|p| (WordId(cat_words[*p] as u32), false))
                    .collect();
                let n_fillers = if cat_fillers.is_empty() {
                    0
                } else {
                    rng.random_range(config.query_fillers_min..=config.query_fillers_max)
                };
                let mut filler_pool = cat_fillers.clone();
                for _ in 0..n_fillers {
                    let pick = rng.random_range(0..filler_pool.len());
                    let word = WordId(filler_pool.swap_remove(pick) as u32);
                    let position = rng.random_range(0..=slots.len());
                    slots.insert(position, (word, true));
                }
                let surface = slots
                    .iter()
                    .map(|(w, _)| words[w.index()].surface.as_str())
                    .collect::<Vec<_>>()
                    .join(" ");
                if query_surfaces.contains(&surface) {
                    continue;
                }
                if holdout && keyword_surface_set.contains(&surface) {
                    continue;
                }
                query_surfaces.insert(surface);
                accepted = Some(slots);
                break;
            }
            let slots = accepted.ok_or_else(|| {
                Error::Generation(format!(
                    "could not generate a unique query in category {cat}"
                ))
            })?;
            queries.push(Query {
                words: slots.iter().map(|(w, _)| *w).collect(),
                filler: slots.iter().map(|(_, f)| *f).collect(),
                category: CategoryId(cat as u32),
                weight: 0.0,
                holdout,
            });
        }
    }

    // Zipf traffic: regular queries occupy the head ranks in shuffled order,
    // held-out paraphrases fill the bottom of the curve.
    let mut regular: Vec<usize> = (0..queries.len()).filter(|i| !queries[*i].holdout).collect();
    let mut held: Vec<usize> = (0..queries.len()).filter(|i| queries[*i].holdout).collect();
    shuffle(&mut rng, &mut regular);
    shuffle(&mut rng, &mut held);
    for (rank0, qi) in regular.iter().chain(held.iter()).enumerate() {
        queries[*qi].weight = ((rank0 + 1) as f64).powf(-config.zipf_s);
    }

    let universe = Universe {
        latent_dim: g,
        n_categories: config.n_categories,
        click_sharpness: config.click_sharpness,
        serve_temperature: config.serve_temperature,
        policy_noise: config.policy_noise,
        words,
        keywords,
        ads,
        queries,
    };
    universe.validate().map_err(|e| match e {
        Error::Format(msg) => Error::Generation(msg),
        other => other,
    })?;
    Ok(universe)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_config_and_seed() {
        let config = GenConfig {
            words_per_category: 12,
            keywords_per_category: 8,
            ads_per_category: 3,
            queries_per_category: 10,
            ..GenConfig::default()
        };
        let a = generate_universe(&config, 7).unwrap();
        let b = generate_universe(&config, 7).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let c = generate_universe(&config, 8).unwrap();
        assert_ne!(a.to_text(), c.to_text());
    }

    #[test]
    fn ads_buy_only_own_category_keywords() {
        let config = GenConfig {
            n_categories: 2,
            words_per_category: 12,
            keywords_per_category: 8,
            ads_per_category: 3,
            queries_per_category: 10,
            ..GenConfig::default()
        };
        let u = generate_universe(&config, 3).unwrap();
        for ad in &u.ads {
            for (k, price) in &ad.bought {
                assert_eq!(u.keywords[k.index()].category, ad.category);
                assert!(*price > 0.0);
            }
            assert!(!ad.bought.is_empty());
        }
    }

    #[test]
    fn zipf_rank_ratio() {
        let config = GenConfig {
            n_categories: 1,
            words_per_category: 20,
            keywords_per_category: 10,
            ads_per_category: 2,
            queries_per_category: 100,
            zipf_s: 1.2,
            holdout_fraction: 0.0,
            ..GenConfig::default()
        };
        let u = generate_universe(&config, 5).unwrap();
        let mut weights: Vec<f64> = u.queries.iter().map(|q| q.weight).collect();
        weights.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let ratio = weights[0] / weights[1];
        assert!((ratio - 2f64.powf(1.2)).abs() < 1e-12, "ratio {ratio}");
    }

    #[test]
    fn holdout_queries_avoid_keyword_surfaces_and_sit_in_the_tail() {
        let config = GenConfig {
            words_per_category: 14,
            keywords_per_category: 10,
            ads_per_category: 3,
            queries_per_category: 20,
            holdout_fraction: 0.25,
            ..GenConfig::default()
        };
        let u = generate_universe(&config, 11).unwrap();
        let n_holdout = u.queries.iter().filter(|q| q.holdout).count();
        assert_eq!(n_holdout, 2 * 5);
        let keyword_surfaces: std::collections::HashSet<String> = (0..u.keywords.len())
            .map(|i| u.keyword_surface(KeywordId(i as u32)))
            .collect();
        let max_holdout_weight = u
            .queries
            .iter()
            .filter(|q| q.holdout)
            .map(|q| q.weight)
            .fold(0.0f64, f64::max);
        let min_regular_weight = u
            .queries
            .iter()
            .filter(|q| !q.holdout)
            .map(|q| q.weight)
            .fold(f64::MAX, f64::min);
        assert!(max_holdout_weight < min_regular_weight);
        for (i, q) in u.queries.iter().enumerate() {
            if q.holdout {
                let surface = u.query_surface(QueryId(i as u32));
                assert!(!keyword_surfaces.contains(&surface));
            }
        }
    }

    #[test]
    fn fillers_stay_out_of_keywords_and_out_of_query_topics() {
        let config = GenConfig {
            words_per_category: 14,
            keywords_per_category: 10,
            ads_per_category: 3,
            queries_per_category: 12,
            filler_words_per_category: 4,
            query_fillers_min: 1,
            query_fillers_max: 2,
            ..GenConfig::default()
        };
        let u = generate_universe(&config, 9).unwrap();
        let filler_ids: std::collections::HashSet<WordId> = u
            .queries
            .iter()
            .flat_map(|q| {
                q.words
                    .iter()
                    .zip(&q.filler)
                    .filter(|(_, f)| **f)
                    .map(|(w, _)| *w)
            })
            .collect();
        assert!(!filler_ids.is_empty());
        for kw in &u.keywords {
            for w in &kw.words {
                assert!(!filler_ids.contains(w), "keyword uses filler word {w}");
            }
        }
        for (i, q) in u.queries.iter().enumerate() {
            let n_fillers = q.filler.iter().filter(|f| **f).count();
            assert!((1..=2).contains(&n_fillers), "query {i} has {n_fillers} fillers");
            let topic = u.query_topic(QueryId(i as u32));
            let content = q.content_words();
            let mut mean = vec![0.0f64; u.latent_dim];
            for (alt, w) in super::super::universe::sense_flags(&content)
                .into_iter()
                .zip(&content)
            {
                let word = &u.words[w.index()];
                let t = match (&word.topic_alt, alt) {
                    (Some(t), true) => t,
                    _ => &word.topic,
                };
                for (m, v) in mean.iter_mut().zip(t) {
                    *m += f64::from(*v);
                }
            }
            let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (t, m) in topic.iter().zip(&mean) {
                assert!((t - m / norm).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_config_names_field() {
        let config = GenConfig {
            zipf_s: 0.0,
            ..GenConfig::default()
        };
        match generate_universe(&config, 1) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "zipf_s"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn query_surfaces_are_unique() {
        let config = GenConfig {
            words_per_category: 16,
            keywords_per_category: 12,
            ads_per_category: 3,
            queries_per_category: 30,
            ..GenConfig::default()
        };
        let u = generate_universe(&config, 13).unwrap();
        let mut seen = std::collections::HashSet::new();
        for i in 0..u.queries.len() {
            assert!(seen.insert(u.query_surface(QueryId(i as u32))));
        }
    }

    use super::super::universe::QueryId;
}
