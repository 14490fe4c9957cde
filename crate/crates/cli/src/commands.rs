//! Command implementations. Every command is a pure function of the config
//! file, its input artifacts, and the seed; reports go to stdout, artifacts
//! to their configured paths.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use rqrf_core::corpus::{
    drift_prices, generate_universe, pretrained_word_vectors, simulate_click_log, ClickLog,
    Universe,
};
use rqrf_core::evaluator::{build_eval_cases, compare, evaluate, EvalCase};
use rqrf_core::rng::derive_seed;
use rqrf_core::sampler::{draw_samples, load_samples, save_samples};
use rqrf_core::simulator::{
    build_memory_baseline, run_paired_ab, verify_proportionality, LiftReport, MemoryRewriter,
    ModelRewriter, ProportionalityReport, ProportionalitySpec,
};
use rqrf_core::tower::AblationFlags;
use rqrf_core::trainer::{train, Checkpoint, EpochStats};
use rqrf_core::{Error, Result};

use crate::config::LoadedConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogRole {
    Train,
    Eval,
}

fn require_exists(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{what} not found at {}", path.display()),
        )))
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn load_universe(path: &Path) -> Result<Universe> {
    require_exists(path, "universe")?;
    Universe::load(path)
}

fn load_log(path: &Path, what: &str) -> Result<ClickLog> {
    require_exists(path, what)?;
    ClickLog::load(path)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    require_exists(path, "checkpoint")?;
    Checkpoint::load(path)
}

pub fn cmd_gen(loaded: &LoadedConfig, out: Option<&Path>) -> Result<()> {
    let path = loaded.resolve(out, &loaded.config.paths.universe);
    let universe = generate_universe(&loaded.config.generation, loaded.config.seed)?;
    ensure_parent(&path)?;
    universe.save(&path)?;
    eprintln!(
        "wrote universe ({} words, {} keywords, {} ads, {} queries) to {}",
        universe.words.len(),
        universe.keywords.len(),
        universe.ads.len(),
        universe.queries.len(),
        path.display()
    );
    Ok(())
}

pub fn cmd_log(
    loaded: &LoadedConfig,
    universe: Option<&Path>,
    out: Option<&Path>,
    role: LogRole,
) -> Result<()> {
    let universe_path = loaded.resolve(universe, &loaded.config.paths.universe);
    let u = load_universe(&universe_path)?;
    let (requests, seed_label, default_out) = match role {
        LogRole::Train => (
            loaded.config.log.train_requests,
            "train-log",
            &loaded.config.paths.train_log,
        ),
        LogRole::Eval => (
            loaded.config.log.eval_requests,
            "eval-log",
            &loaded.config.paths.eval_log,
        ),
    };
    let log = simulate_click_log(&u, requests, derive_seed(loaded.config.seed, seed_label))?;
    let path = loaded.resolve(out, default_out);
    ensure_parent(&path)?;
    log.save(&path)?;
    let clicks = log.records.iter().filter(|r| r.clicked).count();
    eprintln!(
        "wrote {} requests ({clicks} clicks) to {}",
        log.records.len(),
        path.display()
    );
    Ok(())
}

pub fn cmd_sample(
    loaded: &LoadedConfig,
    universe: Option<&Path>,
    log: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let u = load_universe(&loaded.resolve(universe, &loaded.config.paths.universe))?;
    let click_log = load_log(
        &loaded.resolve(log, &loaded.config.paths.train_log),
        "click log",
    )?;
    let wv = pretrained_word_vectors(
        &u,
        loaded.config.sampling.noise_sigma,
        derive_seed(loaded.config.seed, "wordvec"),
    )?;
    let samples = draw_samples(
        &click_log,
        &u,
        &wv,
        loaded.config.sampling.neg_ratio,
        derive_seed(loaded.config.seed, "sampling"),
    )?;
    let path = loaded.resolve(out, &loaded.config.paths.samples);
    ensure_parent(&path)?;
    save_samples(&samples, &path)?;
    eprintln!("wrote {} samples to {}", samples.len(), path.display());
    Ok(())
}

fn write_epoch_artifacts(dir: &Path, ckpt: &Checkpoint, stats: &EpochStats) -> Result<()> {
    ckpt.save(&dir.join(format!("checkpoint_epoch_{}.rqrf", stats.epoch)))?;
    Ok(())
}

pub fn cmd_train(
    loaded: &LoadedConfig,
    universe: Option<&Path>,
    samples: Option<&Path>,
    out_dir: Option<&Path>,
) -> Result<()> {
    let u = load_universe(&loaded.resolve(universe, &loaded.config.paths.universe))?;
    let samples_path = loaded.resolve(samples, &loaded.config.paths.samples);
    require_exists(&samples_path, "samples")?;
    let samples = load_samples(&samples_path)?;
    let model_cfg = loaded.config.model.to_model_config()?;
    let dir = loaded.resolve(out_dir, &loaded.config.paths.checkpoint_dir);
    std::fs::create_dir_all(&dir)?;
    let (ckpt, trace) = train(
        &samples,
        &u,
        &model_cfg,
        &loaded.config.training,
        derive_seed(loaded.config.seed, "train"),
        |snapshot, stats| write_epoch_artifacts(&dir, snapshot, stats),
    )?;
    ckpt.save(&dir.join("checkpoint.rqrf"))?;
    let mut trace_text = String::new();
    for stats in &trace {
        let _ = writeln!(trace_text, "{}\t{}", stats.epoch, stats.mean_loss);
    }
    std::fs::write(dir.join("trace.tsv"), trace_text)?;
    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        eprintln!(
            "trained {} epochs: loss {} -> {} ({})",
            trace.len(),
            first.mean_loss,
            last.mean_loss,
            dir.display()
        );
    } else {
        eprintln!("wrote untrained checkpoint to {}", dir.display());
    }
    Ok(())
}

fn emit(report_text: String, out: Option<&Path>) -> Result<String> {
    if let Some(path) = out {
        ensure_parent(path)?;
        std::fs::write(path, &report_text)?;
    }
    Ok(report_text)
}

fn json_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("report serializes")
}

fn eval_cases_for(
    loaded: &LoadedConfig,
    universe: &Universe,
    eval_log: Option<&Path>,
) -> Result<Vec<EvalCase>> {
    let log = load_log(
        &loaded.resolve(eval_log, &loaded.config.paths.eval_log),
        "eval log",
    )?;
    build_eval_cases(&log, universe)
}

pub fn cmd_eval(
    loaded: &LoadedConfig,
    universe: Option<&Path>,
    checkpoint: Option<&Path>,
    eval_log: Option<&Path>,
    against: Option<&Path>,
    format: Format,
    out: Option<&Path>,
) -> Result<String> {
    let u = load_universe(&loaded.resolve(universe, &loaded.config.paths.universe))?;
    let default_ckpt = format!("{}/checkpoint.rqrf", loaded.config.paths.checkpoint_dir);
    let ckpt = load_checkpoint(&loaded.resolve(checkpoint, &default_ckpt))?;
    let cases = eval_cases_for(loaded, &u, eval_log)?;
    match against {
        None => {
            let report = evaluate(&ckpt, &cases, &u)?;
            let text = match format {
                Format::Text => report.to_text(),
                Format::Json => format!("{}\n", json_line(&report)),
            };
            emit(text, out)
        }
        Some(other) => {
            let other = load_checkpoint(other)?;
            let report = compare(&ckpt, &other, &cases, &u)?;
            let text = match format {
                Format::Text => report.to_text(),
                Format::Json => {
                    let mut s = String::new();
                    for m in &report.metrics {
                        let _ = writeln!(s, "{}", json_line(m));
                    }
                    s
                }
            };
            emit(text, out)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct AblateRow {
    variant: String,
    cases: usize,
    nll: f64,
    map: f64,
    mrr: f64,
    ndcg: f64,
}

pub fn cmd_ablate(
    loaded: &LoadedConfig,
    universe: Option<&Path>,
    samples: Option<&Path>,
    eval_log: Option<&Path>,
    out_dir: Option<&Path>,
    format: Format,
    out: Option<&Path>,
) -> Result<String> {
    let u = load_universe(&loaded.resolve(universe, &loaded.config.paths.universe))?;
    let samples_path = loaded.resolve(samples, &loaded.config.paths.samples);
    require_exists(&samples_path, "samples")?;
    let training_samples = load_samples(&samples_path)?;
    let cases = eval_cases_for(loaded, &u, eval_log)?;
    let dir = loaded.resolve(out_dir, &loaded.config.paths.checkpoint_dir);
    std::fs::create_dir_all(&dir)?;

    let variants = [
        AblationFlags::full(),
        AblationFlags::new(false, true, true)?,
        AblationFlags::new(true, false, true)?,
        AblationFlags::new(true, true, false)?,
    ];
    let mut rows = Vec::with_capacity(variants.len());
    for flags in variants {
        let mut model_cfg = loaded.config.model.to_model_config()?;
        model_cfg.flags = flags;
        if !flags.use_mlp {
            model_cfg.d_out = model_cfg.d_h;
        }
        model_cfg.validate()?;
        let (ckpt, _) = train(
            &training_samples,
            &u,
            &model_cfg,
            &loaded.config.training,
            derive_seed(loaded.config.seed, "train"),
            |_, _| Ok(()),
        )?;
        ckpt.save(&dir.join(format!("checkpoint_{}.rqrf", flags.label())))?;
        let report = evaluate(&ckpt, &cases, &u)?;
        rows.push(AblateRow {
            variant: flags.label().to_string(),
            cases: report.cases,
            nll: report.nll,
            map: report.map,
            mrr: report.mrr,
            ndcg: report.ndcg,
        });
        eprintln!("trained and evaluated {}", rows.last().unwrap().variant);
    }
    let text = match format {
        Format::Text => {
            let mut s = String::from("variant\tnll\tmap\tmrr\tndcg\n");
            for r in &rows {
                let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", r.variant, r.nll, r.map, r.mrr, r.ndcg);
            }
            s
        }
        Format::Json => {
            let mut s = String::new();
            for r in &rows {
                let _ = writeln!(s, "{}", json_line(r));
            }
            s
        }
    };
    emit(text, out)
}

fn lift_report_json(report: &LiftReport) -> String {
    let mut s = String::new();
    for slice in [&report.head, &report.tail, &report.combined, &report.holdout] {
        let _ = writeln!(s, "{}", json_line(slice));
    }
    s
}

pub fn cmd_simulate(
    loaded: &LoadedConfig,
    universe: Option<&Path>,
    log: Option<&Path>,
    checkpoint: Option<&Path>,
    format: Format,
    out: Option<&Path>,
) -> Result<String> {
    let u = load_universe(&loaded.resolve(universe, &loaded.config.paths.universe))?;
    let click_log = load_log(
        &loaded.resolve(log, &loaded.config.paths.train_log),
        "click log",
    )?;
    let default_ckpt = format!("{}/checkpoint.rqrf", loaded.config.paths.checkpoint_dir);
    let ckpt = load_checkpoint(&loaded.resolve(checkpoint, &default_ckpt))?;
    let table = build_memory_baseline(&click_log, &u);
    let sim = loaded.config.simulation;
    let control = MemoryRewriter::new(&table, &u);
    let treatment = ModelRewriter::build(&ckpt, &u)?;
    let serving = drift_prices(&u, sim.price_drift_sigma, derive_seed(loaded.config.seed, "drift"))?;
    let report = run_paired_ab(
        &serving,
        &control,
        &treatment,
        sim.n_requests,
        sim.top_k,
        sim.head_fraction,
        derive_seed(loaded.config.seed, "ab"),
    )?;
    let text = match format {
        Format::Text => report.to_text(),
        Format::Json => lift_report_json(&report),
    };
    emit(text, out)
}

fn proportionality_json(report: &ProportionalityReport) -> String {
    let mut s = String::new();
    for row in &report.rows {
        let _ = writeln!(s, "{}", json_line(row));
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        n_draws: u64,
        l1: f64,
        threshold: f64,
        pass: bool,
        general_l1: f64,
        kind: &'a str,
    }
    let _ = writeln!(
        s,
        "{}",
        json_line(&Summary {
            n_draws: report.n_draws,
            l1: report.l1,
            threshold: report.threshold,
            pass: report.pass,
            general_l1: report.general_l1,
            kind: "summary",
        })
    );
    s
}

pub fn cmd_verify(loaded: &LoadedConfig, format: Format, out: Option<&Path>) -> Result<String> {
    let report = verify_proportionality(
        &ProportionalitySpec::default(),
        loaded.config.verification.n_draws,
        derive_seed(loaded.config.seed, "verify"),
    )?;
    let text = match format {
        Format::Text => report.to_text(),
        Format::Json => proportionality_json(&report),
    };
    emit(text, out)
}
