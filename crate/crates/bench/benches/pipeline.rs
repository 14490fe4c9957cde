use std::collections::BTreeSet;

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use rqrf_bench::fixture;
use rqrf_core::corpus::KeywordId;
use rqrf_core::evaluator::{metric_map, metric_ndcg, rank_candidates};
use rqrf_core::sampler::draw_samples;
use rqrf_core::tower::{encode, TowerSide};
use rqrf_core::trainer::batch_gradients;

fn bench_encode(c: &mut Criterion) {
    let fx = fixture();
    let tok = fx.batch[0].query.clone();
    c.bench_function("encode/query_forward", |b| {
        b.iter(|| {
            encode(
                fx.model.tower(TowerSide::Query),
                &fx.model.config,
                black_box(&tok),
            )
            .unwrap()
        })
    });
}

fn bench_train_step(c: &mut Criterion) {
    let fx = fixture();
    c.bench_function("train/batch32_forward_backward", |b| {
        b.iter(|| batch_gradients(black_box(&fx.model), &fx.batch).unwrap())
    });
}

fn bench_sampler(c: &mut Criterion) {
    let fx = fixture();
    let short_log = rqrf_core::corpus::ClickLog {
        records: fx.log.records[..2000].to_vec(),
    };
    c.bench_function("sampler/draw_2000_records", |b| {
        b.iter(|| {
            draw_samples(
                black_box(&short_log),
                &fx.universe,
                &fx.word_vectors,
                4,
                11,
            )
            .unwrap()
        })
    });
}

fn bench_retrieval(c: &mut Criterion) {
    let fx = fixture();
    let cat = fx.universe.queries[0].category;
    let keywords: Vec<(KeywordId, Vec<f32>)> = fx
        .universe
        .keywords_of_category(cat)
        .into_iter()
        .map(|k| {
            let v = fx
                .model
                .encode_text(TowerSide::Keyword, &fx.universe.keyword_surface(k))
                .unwrap();
            (k, v)
        })
        .collect();
    let q_vec = fx
        .model
        .encode_text(TowerSide::Query, &fx.universe.query_surface(rqrf_core::corpus::QueryId(0)))
        .unwrap();
    c.bench_function("retrieval/rank_category_candidates", |b| {
        b.iter(|| rank_candidates(black_box(&q_vec), &keywords).unwrap())
    });

    let ranked: Vec<KeywordId> = rank_candidates(&q_vec, &keywords)
        .unwrap()
        .into_iter()
        .map(|(k, _)| k)
        .collect();
    let relevant: BTreeSet<KeywordId> = ranked.iter().step_by(7).copied().collect();
    c.bench_function("metrics/map_and_ndcg", |b| {
        b.iter(|| {
            (
                metric_map(black_box(&ranked), &relevant),
                metric_ndcg(black_box(&ranked), &relevant),
            )
        })
    });
}

fn bench_simulation(c: &mut Criterion) {
    let fx = fixture();
    c.bench_function("corpus/simulate_10k_requests", |b| {
        b.iter(||rqrf_core::corpus::simulate_click_log(black_box(&fx.universe), 10_000, 3).unwrap())
    });
}

criterion_group!(
    benches,
    bench_encode,
    bench_train_step,
    bench_sampler,
    bench_retrieval,
    bench_simulation
);
criterion_main!(benches);
