//! Metrics records and run manifests.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use gap_core::gap::{stream, Achieved, FitReport, Metrics, NoiseChoice};
use gap_core::privacy::default_alpha_grid;
use gap_core::rng::derive_seed;
use gap_core::stats::ConfidenceInterval;
use gap_core::{GapConfig, GapModel, PrivacyLevel};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

/// Non-finite ε is written as the string `"inf"`.
pub fn epsilon_value(eps: f64) -> Value {
    if eps.is_finite() {
        json!(eps)
    } else {
        json!("inf")
    }
}

/// Stable id of a configuration.
pub fn run_id(cfg: &GapConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    let h = text
        .bytes()
        .fold(0x6761_70u64, |h, b| derive_seed(h, u64::from(b)));
    format!("{h:016x}")
}

/// Privacy context attached to every metrics line.
#[derive(Debug, Clone, Serialize)]
pub struct RecordContext {
    pub run_id: String,
    pub level: PrivacyLevel,
    pub epsilon: Value,
    pub delta: f64,
}

impl RecordContext {
    pub fn of(model: &GapModel, achieved: &Achieved) -> RecordContext {
        RecordContext {
            run_id: run_id(model.config()),
            level: model.config().privacy,
            epsilon: epsilon_value(achieved.epsilon),
            delta: achieved.delta,
        }
    }

    pub fn record(&self, stage: &str, metric: &str, value: Value) -> Value {
        json!({
            "run_id": self.run_id,
            "stage": stage,
            "metric": metric,
            "value": value,
            "level": self.level,
            "epsilon": self.epsilon,
            "delta": self.delta,
        })
    }
}

pub fn fit_records(ctx: &RecordContext, stage: &str, fit: &FitReport) -> Vec<Value> {
    vec![
        ctx.record(stage, "epochs_run", json!(fit.epochs_run)),
        ctx.record(stage, "best_epoch", json!(fit.best_epoch)),
        ctx.record(stage, "best_val_accuracy", json!(fit.best_val_accuracy)),
        ctx.record(stage, "steps", json!(fit.steps)),
    ]
}

pub fn accuracy_records(ctx: &RecordContext, stage: &str, m: &Metrics) -> Vec<Value> {
    vec![
        ctx.record(stage, "train_accuracy", json!(m.train_accuracy)),
        ctx.record(stage, "val_accuracy", json!(m.val_accuracy)),
        ctx.record(stage, "test_accuracy", json!(m.test_accuracy)),
    ]
}

pub fn ci_value(ci: &ConfidenceInterval) -> Value {
    json!({ "mean": ci.mean, "lo": ci.lo, "hi": ci.hi })
}

pub fn append_jsonl(path: &Path, records: &[Value]) -> anyhow::Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    for r in records {
        writeln!(f, "{r}").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Writes one line to stdout. A closed reader (`gap infer | head`) ends the
/// process quietly instead of panicking.
pub fn emit(line: impl std::fmt::Display) {
    let mut out = std::io::stdout().lock();
    if let Err(e) = writeln!(out, "{line}") {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        panic!("writing to stdout: {e}");
    }
}

pub fn print_jsonl(records: &[Value]) {
    for r in records {
        emit(r);
    }
}

/// Everything needed to rerun and audit one training run.
pub struct ManifestInput<'a> {
    pub config: &'a RunConfig,
    pub dataset: Value,
    pub model: &'a GapModel,
    pub noise: &'a NoiseChoice,
    pub achieved: &'a Achieved,
    pub metrics: &'a Metrics,
    pub encoder_fit: &'a FitReport,
    pub classifier_fit: &'a FitReport,
    pub wall_clock_secs: f64,
}

pub fn manifest(m: &ManifestInput<'_>) -> Value {
    let cfg = m.model.config();
    let seed = cfg.seed;
    let seeds = json!({
        "master": seed,
        "encoder_init": derive_seed(seed, stream::ENCODER_INIT),
        "encoder_batches": derive_seed(seed, stream::ENCODER_BATCHES),
        "encoder_noise": derive_seed(seed, stream::ENCODER_NOISE),
        "degree_sampling": derive_seed(seed, stream::DEGREE),
        "aggregation": derive_seed(seed, stream::PMA),
        "classifier_init": derive_seed(seed, stream::CLASSIFIER_INIT),
        "classifier_batches": derive_seed(seed, stream::BATCHES),
        "classifier_noise": derive_seed(seed, stream::NOISE),
    });
    let dp_adam_noise = (cfg.privacy == PrivacyLevel::Node).then_some(m.noise.noise_scale);
    json!({
        "run_id": run_id(cfg),
        "config": m.config,
        "resolved_config": cfg,
        "dataset": m.dataset,
        "seeds": seeds,
        "noise_scale": m.noise.noise_scale,
        "dp_adam_noise_multiplier": dp_adam_noise,
        "dp_adam_sampling": (cfg.privacy == PrivacyLevel::Node).then_some("poisson"),
        "budget": m.noise.budget,
        "achieved": {
            "epsilon": epsilon_value(m.achieved.epsilon),
            "delta": m.achieved.delta,
            "best_alpha": m.achieved.best_alpha,
        },
        "ledger": m.model.ledger(),
        "rdp_table": m.model.ledger().tabulate(&default_alpha_grid()),
        "metrics": m.metrics,
        "encoder_fit": m.encoder_fit,
        "classifier_fit": m.classifier_fit,
        "wall_clock_secs": m.wall_clock_secs,
        "threads": rayon::current_num_threads(),
        "git_describe": env!("GAP_GIT_DESCRIBE"),
        "version": env!("CARGO_PKG_VERSION"),
    })
}
