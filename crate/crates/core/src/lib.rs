//! RPM-oriented query rewriting for sponsored search, end to end at desk
//! scale: a synthetic marketplace with click logs, RPM-oriented training
//! label construction, a two-tower query/keyword encoder trained with exact
//! reverse-mode gradients, offline ranking metrics, and a simulated A/B
//! harness with a sampling-proportionality verifier.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluator;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod simulator;
pub mod stats;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod tower;

pub use corpus::{
    generate_universe, head_tail_split, pretrained_word_vectors, simulate_click_log, ClickLog,
    GenConfig, LogAggregates, Universe, WordVecTable,
};
pub use error::{Error, Result};
pub use evaluator::{build_eval_cases, evaluate, EvalCase, MetricsReport};
pub use sampler::{draw_samples, TrainingSample};
pub use simulator::{
    build_memory_baseline, run_ab, verify_proportionality, LiftReport, ProportionalityReport,
    ProportionalitySpec, RewriteTable,
};
pub use tensor::{Scalar, Tensor};
pub use tower::{AblationFlags, ModelConfig, ModelParams, TowerSide};
pub use trainer::{train, Checkpoint, EpochStats, TrainConfig};
