//! Shared fixtures for the pipeline benchmarks.

use rqrf_core::corpus::{
    generate_universe, pretrained_word_vectors, simulate_click_log, ClickLog, GenConfig, Universe,
    WordVecTable,
};
use rqrf_core::encoder::Vocabulary;
use rqrf_core::sampler::{draw_samples, TrainingSample};
use rqrf_core::tower::ModelConfig;
use rqrf_core::trainer::{tokenize_samples, TokenizedSample};
use rqrf_core::ModelParams;

pub struct Fixture {
    pub universe: Universe,
    pub log: ClickLog,
    pub word_vectors: WordVecTable,
    pub samples: Vec<TrainingSample>,
    pub model: ModelParams<f32>,
    pub batch: Vec<TokenizedSample>,
}

pub fn bench_config() -> GenConfig {
    GenConfig {
        n_categories: 2,
        words_per_category: 30,
        keywords_per_category: 40,
        ads_per_category: 10,
        queries_per_category: 40,
        ..GenConfig::default()
    }
}

pub fn model_config() -> ModelConfig {
    ModelConfig::default()
}

/// One deterministic mid-sized marketplace with a trained-shape model
/// (random weights) and a ready batch.
pub fn fixture() -> Fixture {
    let universe = generate_universe(&bench_config(), 7).expect("generate");
    let log = simulate_click_log(&universe, 20_000, 3).expect("log");
    let word_vectors = pretrained_word_vectors(&universe, 0.1, 5).expect("word vectors");
    let samples = draw_samples(&log, &universe, &word_vectors, 4, 9).expect("samples");
    let vocab = Vocabulary::from_words(universe.words.iter().map(|w| w.surface.as_str()));
    let model = ModelParams::<f32>::init(model_config(), vocab, 0).expect("model");
    let batch = tokenize_samples(&model, &samples[..32.min(samples.len())], &universe)
        .expect("tokenize");
    Fixture {
        universe,
        log,
        word_vectors,
        samples,
        model,
        batch,
    }
}
