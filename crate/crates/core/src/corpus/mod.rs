//! The synthetic marketplace and everything derived directly from it:
//! universe generation, click-log simulation, simulated pretrained word
//! vectors, and the head/tail traffic split.

mod clicklog;
mod generate;
mod split;
mod universe;
mod wordvec;

pub use clicklog::{
    click_propensity, clicks_by_query, legacy_query_topic, simulate_click_log, ClickLog, ClickRecord, LogAggregates,
};
pub use generate::{drift_prices, generate_universe, GenConfig};
pub use split::head_tail_split;
pub use universe::{
    cosine_f64, resolved_topics, sense_flags, Ad, AdId, CategoryId, Keyword, KeywordId, Query, QueryId, Universe, Word, WordId,
};
pub use wordvec::{pretrained_word_vectors, WordVecTable};

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> GenConfig {
        GenConfig {
            n_categories: 2,
            words_per_category: 14,
            keywords_per_category: 10,
            ads_per_category: 3,
            queries_per_category: 12,
            ..GenConfig::default()
        }
    }

    #[test]
    fn universe_text_round_trip_is_exact() {
        let u = generate_universe(&small_config(), 7).unwrap();
        let text = u.to_text();
        let parsed = Universe::from_text(&text).unwrap();
        assert_eq!(parsed, u);
        assert_eq!(parsed.to_text(), text);
    }

    #[test]
    fn click_log_round_trip_and_determinism() {
        let u = generate_universe(&small_config(), 7).unwrap();
        let a = simulate_click_log(&u, 500, 9).unwrap();
        let b = simulate_click_log(&u, 500, 9).unwrap();
        assert_eq!(a, b);
        let parsed = ClickLog::from_text(&a.to_text()).unwrap();
        assert_eq!(parsed, a);
    }

    #[test]
    fn aggregates_count_requests_and_clicks() {
        let u = generate_universe(&small_config(), 7).unwrap();
        let log = simulate_click_log(&u, 2000, 9).unwrap();
        let agg = log.aggregates(&u);
        let total: u64 = agg.requests_per_query.iter().sum();
        assert_eq!(total, 2000);
        for ((ad, query), count) in &agg.clicks {
            assert!(*count > 0);
            let shown = log
                .records
                .iter()
                .filter(|r| r.query == *query && r.ad == *ad)
                .count() as u64;
            assert!(*count <= shown);
        }
        // every bought keyword has at least one bidder
        for ad in &u.ads {
            for (k, _) in &ad.bought {
                assert!(agg.n_bidders[k.index()] >= 1);
            }
        }
    }

    #[test]
    fn holdout_queries_never_enter_the_log() {
        let u = generate_universe(&small_config(), 7).unwrap();
        let log = simulate_click_log(&u, 3000, 1).unwrap();
        for record in &log.records {
            assert!(!u.queries[record.query.index()].holdout);
        }
    }

    #[test]
    fn single_ad_category_always_shows_it() {
        let mut config = small_config();
        config.ads_per_category = 2;
        let mut u = generate_universe(&config, 7).unwrap();
        // drop down to a single ad in category 0
        let keep: Vec<Ad> = u
            .ads
            .iter()
            .enumerate()
            .filter(|(i, ad)| ad.category != CategoryId(0) || *i == 0)
            .map(|(_, ad)| ad.clone())
            .collect();
        u.ads = keep;
        let log = simulate_click_log(&u, 1000, 2).unwrap();
        for record in &log.records {
            if u.queries[record.query.index()].category == CategoryId(0) {
                assert_eq!(u.ads[record.ad.index()].category, CategoryId(0));
                assert_eq!(record.ad, AdId(0));
            }
        }
    }

    #[test]
    fn zero_sharpness_gives_half_propensity() {
        let mut config = small_config();
        config.click_sharpness = 0.0;
        let u = generate_universe(&config, 7).unwrap();
        for q in 0..u.queries.len() as u32 {
            for a in 0..u.ads.len() as u32 {
                assert_eq!(click_propensity(&u, QueryId(q), AdId(a)), 0.5);
            }
        }
        // empirical click rate should be close to one half
        let log = simulate_click_log(&u, 20_000, 3).unwrap();
        let clicks = log.records.iter().filter(|r| r.clicked).count() as f64;
        let rate = clicks / log.records.len() as f64;
        assert!((rate - 0.5).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn empirical_frequencies_match_zipf_weights() {
        let config = GenConfig {
            n_categories: 2,
            words_per_category: 14,
            keywords_per_category: 10,
            ads_per_category: 3,
            queries_per_category: 25,
            holdout_fraction: 0.2,
            ..GenConfig::default()
        };
        let u = generate_universe(&config, 7).unwrap();
        let n = 100_000u64;
        let log = simulate_click_log(&u, n, 5).unwrap();
        let agg = log.aggregates(&u);
        let eligible: Vec<usize> = (0..u.queries.len())
            .filter(|i| !u.queries[*i].holdout)
            .collect();
        let total_weight: f64 = eligible.iter().map(|i| u.queries[*i].weight).sum();
        let l1: f64 = eligible
            .iter()
            .map(|i| {
                let expected = u.queries[*i].weight / total_weight;
                let observed = agg.requests_per_query[*i] as f64 / n as f64;
                (expected - observed).abs()
            })
            .sum();
        assert!(l1 < 0.02, "L1 distance {l1}");
    }

    #[test]
    fn pretrained_vectors_zero_noise_are_the_latent_sense_means() {
        let u = generate_universe(&small_config(), 7).unwrap();
        let wv = pretrained_word_vectors(&u, 0.0, 1).unwrap();
        for (i, w) in u.words.iter().enumerate() {
            let got = wv.vector(WordId(i as u32));
            match &w.topic_alt {
                // monosemous words: the latent vector verbatim
                None => assert_eq!(got, w.topic.as_slice()),
                Some(alt) => {
                    let mut mean: Vec<f64> = w
                        .topic
                        .iter()
                        .zip(alt)
                        .map(|(a, b)| 0.5 * (f64::from(*a) + f64::from(*b)))
                        .collect();
                    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
                    for m in &mut mean {
                        *m /= norm;
                    }
                    for (g, m) in got.iter().zip(&mean) {
                        assert!((f64::from(*g) - m).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn pretrained_vectors_unit_norm_and_reproducible() {
        let u = generate_universe(&small_config(), 7).unwrap();
        let a = pretrained_word_vectors(&u, 0.1, 4).unwrap();
        let b = pretrained_word_vectors(&u, 0.1, 4).unwrap();
        assert_eq!(a, b);
        for i in 0..a.len() {
            let norm: f64 = a
                .vector(WordId(i as u32))
                .iter()
                .map(|v| f64::from(*v) * f64::from(*v))
                .sum::<f64>()
                .sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "word {i} norm {norm}");
        }
        let c = pretrained_word_vectors(&u, 0.1, 5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn adjacent_words_resolve_senses_and_change_phrase_topics() {
        let u = generate_universe(&small_config(), 7).unwrap();
        // find a polysemous word pair whose xor parity is odd
        let mut found = false;
        'outer: for a in 0..u.words.len() {
            if u.words[a].topic_alt.is_none() {
                continue;
            }
            for b in 0..u.words.len() {
                if a == b || u.words[b].category != u.words[a].category {
                    continue;
                }
                if (a as u32 ^ b as u32) & 1 == 1 {
                    let seq = [WordId(b as u32), WordId(a as u32)];
                    let flags = sense_flags(&seq);
                    assert_eq!(flags, vec![false, true]);
                    let resolved = resolved_topics(&u, &seq);
                    assert_eq!(resolved[1], u.words[a].topic_alt.as_ref().unwrap().as_slice());
                    // the leading token always takes its primary sense
                    assert_eq!(resolved[0], u.words[b].topic.as_slice());
                    found = true;
                    break 'outer;
                }
            }
        }
        assert!(found, "no polysemous pair found");
    }

    #[test]
    fn negative_noise_sigma_rejected() {
        let u = generate_universe(&small_config(), 7).unwrap();
        assert!(pretrained_word_vectors(&u, -0.1, 1).is_err());
    }
}
