//! The run configuration: one TOML file with per-stage sections, every
//! default overridable, unknown keys rejected. Paths in `[paths]` resolve
//! relative to the config file's directory; command-line path arguments
//! override them. `RQRF_SEED` overrides the global seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rqrf_core::tower::{AblationFlags, ModelConfig};
use rqrf_core::trainer::TrainConfig;
use rqrf_core::{Error, GenConfig, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub universe: String,
    pub train_log: String,
    pub eval_log: String,
    pub samples: String,
    pub checkpoint_dir: String,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            universe: "out/universe.tsv".into(),
            train_log: "out/train_clicks.tsv".into(),
            eval_log: "out/eval_clicks.tsv".into(),
            samples: "out/samples.tsv".into(),
            checkpoint_dir: "out/model".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogSection {
    pub train_requests: u64,
    pub eval_requests: u64,
}

impl Default for LogSection {
    fn default() -> Self {
        LogSection {
            train_requests: 100_000,
            eval_requests: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub neg_ratio: usize,
    pub noise_sigma: f64,
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection {
            neg_ratio: 4,
            noise_sigma: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_w: usize,
    pub d_c: usize,
    pub d_h: usize,
    pub d_out: usize,
    pub t_max: usize,
    pub c_max: usize,
    pub n_blocks: usize,
    pub gamma: f64,
    pub use_cnn: bool,
    pub use_attention: bool,
    pub use_mlp: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let cfg = ModelConfig::default();
        ModelSection {
            d_w: cfg.d_w,
            d_c: cfg.d_c,
            d_h: cfg.d_h,
            d_out: cfg.d_out,
            t_max: cfg.t_max,
            c_max: cfg.c_max,
            n_blocks: cfg.n_blocks,
            gamma: cfg.gamma,
            use_cnn: true,
            use_attention: true,
            use_mlp: true,
        }
    }
}

impl ModelSection {
    pub fn to_model_config(self) -> Result<ModelConfig> {
        let flags = AblationFlags::new(self.use_cnn, self.use_attention, self.use_mlp)?;
        let cfg = ModelConfig {
            d_w: self.d_w,
            d_c: self.d_c,
            d_h: self.d_h,
            d_out: self.d_out,
            t_max: self.t_max,
            c_max: self.c_max,
            n_blocks: self.n_blocks,
            flags,
            gamma: self.gamma,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub n_requests: u64,
    pub top_k: usize,
    pub head_fraction: f64,
    /// Log-normal bid drift applied between log collection and the A/B run.
    pub price_drift_sigma: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            n_requests: 20_000,
            top_k: 5,
            head_fraction: 0.5,
            price_drift_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationSection {
    pub n_draws: u64,
}

impl Default for VerificationSection {
    fn default() -> Self {
        VerificationSection { n_draws: 100_000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsSection,
    pub generation: GenConfig,
    pub log: LogSection,
    pub sampling: SamplingSection,
    pub model: ModelSection,
    pub training: TrainConfig,
    pub simulation: SimulationSection,
    pub verification: VerificationSection,
}

/// A parsed config plus the directory it lives in (for path resolution).
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::config("config", format!("{path:?}: {e}")))?;
        if let Ok(seed) = std::env::var("RQRF_SEED") {
            config.seed = seed
                .parse()
                .map_err(|_| Error::config("RQRF_SEED", format!("not a u64: {seed:?}")))?;
        }
        config.generation.validate()?;
        config.training.validate()?;
        config.model.to_model_config()?;
        if config.sampling.neg_ratio == 0 {
            return Err(Error::config("sampling.neg_ratio", "must be >= 1"));
        }
        if !(config.sampling.noise_sigma >= 0.0) {
            return Err(Error::config("sampling.noise_sigma", "must be >= 0"));
        }
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(LoadedConfig { config, dir })
    }

    /// CLI argument wins; otherwise the `[paths]` value relative to the
    /// config file location.
    pub fn resolve(&self, cli: Option<&Path>, section_value: &str) -> PathBuf {
        match cli {
            Some(p) => p.to_path_buf(),
            None => self.dir.join(section_value),
        }
    }
}
