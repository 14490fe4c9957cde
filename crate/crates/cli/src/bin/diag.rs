// Temporary diagnostic: per-head-query eCPM reachable by each arm vs global.
use std::collections::BTreeMap;
use std::path::Path;

use rqrf_core::corpus::{head_tail_split, AdId, ClickLog, QueryId, Universe};
use rqrf_core::nn::sigmoid;
use rqrf_core::simulator::{build_memory_baseline, MemoryRewriter, ModelRewriter, Rewriter};
use rqrf_core::trainer::Checkpoint;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let universe = Universe::load(Path::new(&args[1])).unwrap();
    let log = ClickLog::load(Path::new(&args[2])).unwrap();
    let ckpt = Checkpoint::load(Path::new(&args[3])).unwrap();
    let top_k: usize = args[4].parse().unwrap();

    let table = build_memory_baseline(&log, &universe);
    let control = MemoryRewriter::new(&table, &universe);
    let treatment = ModelRewriter::build(&ckpt, &universe).unwrap();
    let drift_sigma: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(0.0);
    let universe = rqrf_core::corpus::drift_prices(
        &universe,
        drift_sigma,
        rqrf_core::rng::derive_seed(7, "drift"),
    )
    .unwrap();
    let bidders = universe.bidders();

    let agg = log.aggregates(&universe);
    let counts: BTreeMap<QueryId, u64> = (0..universe.queries.len())
        .map(|i| (QueryId(i as u32), agg.requests_per_query[i]))
        .filter(|(_, c)| *c > 0)
        .collect();
    let hf: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.5);
    let (head, _) = head_tail_split(&counts, hf).unwrap();

    let prop = |q: QueryId, a: AdId| -> f64 {
        sigmoid(
            universe.click_sharpness
                * rqrf_core::corpus::cosine_f64(&universe.query_topic(q), &universe.ad_topic(a)),
        )
    };
    let best_reachable = |q: QueryId, kws: &[rqrf_core::corpus::KeywordId]| -> f64 {
        let mut best = 0.0f64;
        for kw in kws {
            for (ad, price) in &bidders[kw.index()] {
                best = best.max(price * prop(q, *ad));
            }
        }
        best
    };

    let (mut n, mut control_sum, mut treat_sum, mut global_sum) = (0u64, 0.0, 0.0, 0.0);
    let mut treat_wins = 0u64;
    let mut control_wins = 0u64;
    let mut c_ads = 0usize;
    let mut t_ads = 0usize;
    for q in &head {
        let distinct = |kws: &[rqrf_core::corpus::KeywordId]| -> usize {
            let mut ads: std::collections::BTreeSet<AdId> = Default::default();
            for kw in kws {
                for (ad, _) in &bidders[kw.index()] {
                    ads.insert(*ad);
                }
            }
            ads.len()
        };
        c_ads += distinct(&control.rewrite(*q, top_k));
        t_ads += distinct(&treatment.rewrite(*q, top_k));
        let weight = counts[q] as f64;
        let c = best_reachable(*q, &control.rewrite(*q, top_k));
        let t = best_reachable(*q, &treatment.rewrite(*q, top_k));
        let cat = universe.queries[q.index()].category;
        let mut global = 0.0f64;
        for (ki, kw_bidders) in bidders.iter().enumerate() {
            if universe.keywords[ki].category != cat {
                continue;
            }
            for (ad, price) in kw_bidders {
                global = global.max(price * prop(*q, *ad));
            }
        }
        n += 1;
        control_sum += weight * c;
        treat_sum += weight * t;
        global_sum += weight * global;
        if t > c + 1e-9 {
            treat_wins += 1;
        }
        if c > t + 1e-9 {
            control_wins += 1;
        }
    }
    println!(
        "head queries: {n}; traffic-weighted eCPM: control={:.4} treatment={:.4} global={:.4}",
        control_sum / counts.values().sum::<u64>() as f64,
        treat_sum / counts.values().sum::<u64>() as f64,
        global_sum / counts.values().sum::<u64>() as f64
    );
    println!("treatment strictly better on {treat_wins} head queries, control on {control_wins}");
    // per-head-query structure: does the eCPM-optimal pair's keyword appear
    // in each arm's retrieved list, and which ad dominates the log?
    let mut opt_in_control = 0u64;
    let mut opt_in_treat = 0u64;
    let mut dominant_is_opt = 0u64;
    for q in &head {
        let cat = universe.queries[q.index()].category;
        let mut opt: Option<(f64, AdId, rqrf_core::corpus::KeywordId)> = None;
        for (ki, kw_bidders) in bidders.iter().enumerate() {
            if universe.keywords[ki].category != cat {
                continue;
            }
            for (ad, price) in kw_bidders {
                let e = price * prop(*q, *ad);
                if opt.map_or(true, |(b, _, _)| e > b) {
                    opt = Some((e, *ad, rqrf_core::corpus::KeywordId(ki as u32)));
                }
            }
        }
        let (_, opt_ad, opt_kw) = opt.unwrap();
        if control.rewrite(*q, top_k).contains(&opt_kw) {
            opt_in_control += 1;
        }
        if treatment.rewrite(*q, top_k).contains(&opt_kw) {
            opt_in_treat += 1;
        }
        // dominant logged ad for q
        let mut best_clicks = 0u64;
        let mut dominant = None;
        for (ad, c) in agg.clicks_for_query(*q) {
            if c > best_clicks {
                best_clicks = c;
                dominant = Some(ad);
            }
        }
        if dominant == Some(opt_ad) {
            dominant_is_opt += 1;
        }
    }
    println!(
        "optimal keyword in control top-k: {opt_in_control}/{n}; in treatment: {opt_in_treat}/{n}; dominant ad == optimal ad: {dominant_is_opt}/{n}"
    );
    println!(
        "mean distinct reachable ads per head query: control={:.2} treatment={:.2}",
        c_ads as f64 / n as f64,
        t_ads as f64 / n as f64
    );
}
