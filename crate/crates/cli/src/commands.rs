use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use gap_core::audit::run_attack;
use gap_core::gap::{full_pipeline, Metrics};
use gap_core::graph::{
    apply_splits_csv, generate_sbm, load_binary, load_csv, save_binary, save_csv, SbmParams,
};
use gap_core::pma::pma_rdp_curve;
use gap_core::privacy::{calibrate_sigma, default_alpha_grid, rdp_to_dp, sampled_gaussian_rdp};
use gap_core::stats::{accuracy, bootstrap_ci, DEFAULT_RESAMPLES};
use gap_core::{
    GapModel, GraphDataset, PmaConfig, PrivacyBudget, PrivacyLevel, SampledGaussianParams, Split,
};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{self, RunConfig};
use crate::report::{self, epsilon_value, RecordContext};
use crate::Usage;

pub fn parse_level(s: &str) -> Result<PrivacyLevel, String> {
    PrivacyLevel::parse(s).ok_or_else(|| format!("expected none, edge or node, got {s:?}"))
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

/// A directory is read as `nodes.csv`, `edges.csv` and an optional
/// `splits.csv`; anything else as a binary `.gapd` file.
pub fn load_dataset(path: &Path, splits: Option<&Path>) -> anyhow::Result<GraphDataset> {
    let g = if path.is_dir() {
        let g = load_csv(&path.join("nodes.csv"), &path.join("edges.csv"))?;
        let stored = path.join("splits.csv");
        if splits.is_none() && stored.exists() {
            apply_splits_csv(&g, &stored)?
        } else {
            g
        }
    } else {
        load_binary(path)?
    };
    Ok(match splits {
        Some(s) => apply_splits_csv(&g, s)?,
        None => g,
    })
}

/// `.gapd` paths are written in binary, anything else as a CSV directory.
pub fn save_dataset(g: &GraphDataset, path: &Path) -> anyhow::Result<()> {
    if path.extension().is_some_and(|e| e == "gapd") {
        save_binary(g, path)?;
        return Ok(());
    }
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    save_csv(g, &path.join("nodes.csv"), &path.join("edges.csv"))?;
    let mut splits = String::from("id,split\n");
    for (v, s) in g.split().iter().enumerate() {
        splits.push_str(&format!("{v},{}\n", s.as_str()));
    }
    let sp = path.join("splits.csv");
    std::fs::write(&sp, splits).with_context(|| format!("writing {}", sp.display()))?;
    Ok(())
}

fn dataset_summary(path: &Path, g: &GraphDataset) -> Value {
    json!({
        "path": path,
        "nodes": g.num_nodes(),
        "edges": g.num_edges(),
        "features": g.num_features(),
        "classes": g.num_classes(),
        "train": g.nodes_in(Split::Train).len(),
        "val": g.nodes_in(Split::Val).len(),
        "test": g.nodes_in(Split::Test).len(),
    })
}

fn write_json(path: &Path, v: &Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

struct RunResult {
    metrics: Metrics,
    records: Vec<Value>,
}

fn train_one(
    g: &GraphDataset,
    cfg: &RunConfig,
    dataset: Value,
    dir: &Path,
) -> anyhow::Result<RunResult> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let start = Instant::now();
    let out = full_pipeline(g, &cfg.gap_config())?;
    let wall_clock_secs = start.elapsed().as_secs_f64();
    out.model
        .save(&dir.join("model.gapm"), &dir.join("cache.gapc"))?;

    let ctx = RecordContext::of(&out.model, &out.achieved);
    let mut records = vec![ctx.record("privacy", "noise_scale", json!(out.noise.noise_scale))];
    records.push(ctx.record("privacy", "epsilon", epsilon_value(out.achieved.epsilon)));
    if out.model.config().privacy == PrivacyLevel::Node {
        records.push(ctx.record("privacy", "dp_adam_sampling", json!("poisson")));
    }
    records.extend(report::fit_records(&ctx, "encoder", &out.encoder_fit));
    records.extend(report::fit_records(&ctx, "classifier", &out.classifier_fit));
    records.extend(report::accuracy_records(&ctx, "eval", &out.metrics));
    let metrics_path = dir.join("metrics.jsonl");
    if metrics_path.exists() {
        std::fs::remove_file(&metrics_path)
            .with_context(|| format!("replacing {}", metrics_path.display()))?;
    }
    report::append_jsonl(&metrics_path, &records)?;

    let manifest = report::manifest(&report::ManifestInput {
        config: cfg,
        dataset,
        model: &out.model,
        noise: &out.noise,
        achieved: &out.achieved,
        metrics: &out.metrics,
        encoder_fit: &out.encoder_fit,
        classifier_fit: &out.classifier_fit,
        wall_clock_secs,
    });
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(RunResult {
        metrics: out.metrics,
        records,
    })
}

pub fn train(
    config_path: &Path,
    dataset: Option<&Path>,
    out: &Path,
    repeats: usize,
    parallel: Option<usize>,
) -> anyhow::Result<()> {
    if repeats == 0 {
        return Err(Usage::new("--repeats must be at least 1").into());
    }
    if parallel == Some(0) {
        return Err(Usage::new("--parallel must be at least 1").into());
    }
    let mut cfg = config::load(config_path)?;
    let data_path = dataset
        .map(Path::to_path_buf)
        .or_else(|| cfg.dataset.path.clone())
        .ok_or_else(|| Usage::new("no dataset: pass --dataset or set dataset.path"))?;
    let data_path = absolute(&data_path);
    cfg.dataset.path = Some(data_path.clone());
    cfg.dataset.splits = cfg.dataset.splits.as_deref().map(absolute);
    let g = load_dataset(&data_path, cfg.dataset.splits.as_deref())?;
    cfg.gap_config().validate()?;
    let summary = dataset_summary(&data_path, &g);

    let base_seed = cfg.seed();
    let job = |r: usize| {
        let run_cfg = cfg.with_seed(base_seed.wrapping_add(r as u64));
        let dir = if repeats == 1 {
            out.to_path_buf()
        } else {
            out.join(format!("run-{r:03}"))
        };
        train_one(&g, &run_cfg, summary.clone(), &dir)
    };
    let results: Vec<RunResult> = match parallel {
        Some(p) if repeats > 1 => rayon::ThreadPoolBuilder::new()
            .num_threads(p)
            .build()?
            .install(|| {
                (0..repeats)
                    .into_par_iter()
                    .map(job)
                    .collect::<anyhow::Result<_>>()
            })?,
        _ => (0..repeats).map(job).collect::<anyhow::Result<_>>()?,
    };

    if repeats == 1 {
        report::print_jsonl(&results[0].records);
        return Ok(());
    }
    let all: Vec<Value> = results
        .iter()
        .flat_map(|r| r.records.iter().cloned())
        .collect();
    let metrics_path = out.join("metrics.jsonl");
    if metrics_path.exists() {
        std::fs::remove_file(&metrics_path)
            .with_context(|| format!("replacing {}", metrics_path.display()))?;
    }
    report::append_jsonl(&metrics_path, &all)?;
    let ci = |f: fn(&Metrics) -> f64| -> anyhow::Result<Value> {
        let xs: Vec<f64> = results.iter().map(|r| f(&r.metrics)).collect();
        Ok(json!({
            "ci": report::ci_value(&bootstrap_ci(&xs, DEFAULT_RESAMPLES, 0.95, base_seed)?),
            "samples": xs,
        }))
    };
    let summary = json!({
        "repeats": repeats,
        "seeds": (0..repeats).map(|r| base_seed.wrapping_add(r as u64)).collect::<Vec<_>>(),
        "level": cfg.privacy.level,
        "train_accuracy": ci(|m| m.train_accuracy)?,
        "val_accuracy": ci(|m| m.val_accuracy)?,
        "test_accuracy": ci(|m| m.test_accuracy)?,
    });
    write_json(&out.join("summary.json"), &summary)?;
    report::emit(&summary);
    Ok(())
}

struct Checkpoint {
    dir: PathBuf,
    model_path: PathBuf,
    model: GapModel,
    manifest: Option<Value>,
}

fn open_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    let (dir, model_path) = if path.is_dir() {
        (path.to_path_buf(), path.join("model.gapm"))
    } else {
        (
            path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            path.to_path_buf(),
        )
    };
    let model = GapModel::load(&model_path, &dir.join("cache.gapc"))?;
    let manifest_path = dir.join("manifest.json");
    let manifest = match std::fs::read_to_string(&manifest_path) {
        Ok(text) => Some(
            serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", manifest_path.display()))?,
        ),
        Err(_) => None,
    };
    Ok(Checkpoint {
        dir,
        model_path,
        model,
        manifest,
    })
}

impl Checkpoint {
    fn run_config(&self) -> Option<RunConfig> {
        let m = self.manifest.as_ref()?;
        config::from_value(m.clone(), "manifest").ok()
    }

    fn dataset(&self, explicit: Option<&Path>) -> anyhow::Result<GraphDataset> {
        if let Some(p) = explicit {
            return load_dataset(p, None);
        }
        let cfg = self
            .run_config()
            .ok_or_else(|| Usage::new("no manifest next to the checkpoint: pass --dataset"))?;
        let path = cfg
            .dataset
            .path
            .ok_or_else(|| Usage::new("manifest records no dataset: pass --dataset"))?;
        load_dataset(&path, cfg.dataset.splits.as_deref())
    }

    fn context(&self) -> anyhow::Result<RecordContext> {
        let achieved = self.model.ledger().achieved(&default_alpha_grid())?;
        Ok(RecordContext::of(&self.model, &achieved))
    }

    /// Persists ledger entries added by inductive runs.
    fn save_model(&self) -> anyhow::Result<()> {
        std::fs::write(&self.model_path, self.model.to_bytes())
            .with_context(|| format!("writing {}", self.model_path.display()))
    }
}

fn split_accuracy(g: &GraphDataset, predicted: &[usize]) -> Metrics {
    let acc = |s: Split| {
        let nodes = g.nodes_in(s);
        let pred: Vec<usize> = nodes.iter().map(|&v| predicted[v]).collect();
        let truth: Vec<usize> = nodes.iter().map(|&v| g.labels()[v]).collect();
        accuracy(&pred, &truth)
    };
    Metrics {
        train_accuracy: acc(Split::Train),
        val_accuracy: acc(Split::Val),
        test_accuracy: acc(Split::Test),
    }
}

/// Records of one inductive run, including its own guarantee.
fn inductive_records(ck: &Checkpoint, ctx: &RecordContext) -> anyhow::Result<Vec<Value>> {
    let record = ck
        .model
        .ledger()
        .inductive
        .last()
        .expect("inductive run recorded");
    let eps = if ck.model.config().privacy == PrivacyLevel::None {
        f64::INFINITY
    } else if record.curve.is_zero() {
        0.0
    } else {
        rdp_to_dp(
            &record.curve,
            ck.model.ledger().delta,
            &default_alpha_grid(),
        )?
        .epsilon
    };
    Ok(vec![
        ctx.record("inductive", "run", json!(record.run)),
        ctx.record("inductive", "nodes", json!(record.num_nodes)),
        ctx.record("inductive", "inference_epsilon", epsilon_value(eps)),
    ])
}

pub fn eval(
    checkpoint: &Path,
    dataset: Option<&Path>,
    inductive: Option<&Path>,
) -> anyhow::Result<()> {
    let mut ck = open_checkpoint(checkpoint)?;
    let ctx = ck.context()?;
    let records = match inductive {
        None => {
            let g = ck.dataset(dataset)?;
            report::accuracy_records(&ctx, "eval", &ck.model.evaluate(g.labels(), g.split())?)
        }
        Some(path) => {
            let g = load_dataset(path, None)?;
            let preds = ck.model.infer_inductive(&g)?;
            ck.save_model()?;
            let mut r =
                report::accuracy_records(&ctx, "inductive", &split_accuracy(&g, &preds.labels));
            r.extend(inductive_records(&ck, &ctx)?);
            r
        }
    };
    report::print_jsonl(&records);
    Ok(())
}

pub fn infer(checkpoint: &Path, nodes: &[u64], inductive: Option<&Path>) -> anyhow::Result<()> {
    let mut ck = open_checkpoint(checkpoint)?;
    let to_index = |n: usize| -> anyhow::Result<Vec<usize>> {
        if nodes.is_empty() {
            return Ok((0..n).collect());
        }
        nodes
            .iter()
            .map(|&id| {
                usize::try_from(id)
                    .ok()
                    .filter(|&v| v < n)
                    .ok_or_else(|| gap_core::GapError::UnknownNode { id, num_nodes: n }.into())
            })
            .collect()
    };
    // `rows[i]` is the prediction row holding node `ids[i]`.
    let (ids, rows, preds) = match inductive {
        None => {
            let ids = to_index(ck.model.cache().num_nodes())?;
            let preds = ck.model.infer_transductive(&ids)?;
            let rows = (0..ids.len()).collect();
            (ids, rows, preds)
        }
        Some(path) => {
            let g = load_dataset(path, None)?;
            let ids = to_index(g.num_nodes())?;
            let preds = ck.model.infer_inductive(&g)?;
            ck.save_model()?;
            (ids.clone(), ids, preds)
        }
    };
    for (id, r) in ids.into_iter().zip(rows) {
        let line = json!({
            "node": id,
            "label": preds.labels[r],
            "posteriors": preds.posteriors.row(r).to_vec(),
        });
        report::emit(&line);
    }
    Ok(())
}

pub struct CalibrateArgs {
    pub epsilon: f64,
    pub delta: f64,
    pub level: PrivacyLevel,
    pub hops: usize,
    pub max_degree: Option<usize>,
    pub sampling_rate: Option<f64>,
    pub steps: Option<u64>,
}

pub fn calibrate(a: &CalibrateArgs) -> anyhow::Result<()> {
    let training = match (a.level, a.sampling_rate, a.steps) {
        (PrivacyLevel::None, ..) => {
            return Err(Usage::new("calibration needs --level edge or node").into())
        }
        (PrivacyLevel::Node, Some(q), Some(t)) => Some((q, t)),
        (PrivacyLevel::Node, None, None) => None,
        (PrivacyLevel::Node, ..) => {
            return Err(Usage::new("--sampling-rate and --steps must be given together").into());
        }
        (PrivacyLevel::Edge, None, None) => None,
        (PrivacyLevel::Edge, ..) => {
            return Err(Usage::new("--sampling-rate and --steps apply to node level only").into());
        }
    };
    if a.level == PrivacyLevel::Node && a.max_degree.is_none() {
        return Err(Usage::new("node-level calibration needs --max-degree").into());
    }
    if a.hops == 0 && training.is_none() {
        return Err(Usage::new("nothing to calibrate: no hops and no DP-Adam steps").into());
    }
    let curve = |sigma: f64| {
        let pma = pma_rdp_curve(&PmaConfig {
            hops: a.hops,
            sigma,
            level: a.level,
            max_degree: a.max_degree,
            seed: 0,
        })?;
        match training {
            None => Ok(pma),
            Some((q, t)) => Ok(pma.then(&sampled_gaussian_rdp(SampledGaussianParams {
                noise_multiplier: sigma,
                sampling_rate: q,
                steps: t,
            })?)),
        }
    };
    let target = PrivacyBudget {
        epsilon: a.epsilon,
        delta: a.delta,
        level: a.level,
    };
    let c = calibrate_sigma(&target, curve, &default_alpha_grid())?;
    report::emit(json!({
            "sigma": c.sigma,
            "noise_multiplier": (a.level == PrivacyLevel::Node).then_some(c.sigma),
            "epsilon": c.achieved.epsilon,
            "delta": c.achieved.delta,
        "best_alpha": c.achieved.best_alpha,
    }));
    Ok(())
}

pub fn attack(
    checkpoint: &Path,
    config_path: Option<&Path>,
    dataset: Option<&Path>,
    repetitions: Option<usize>,
) -> anyhow::Result<()> {
    let ck = open_checkpoint(checkpoint)?;
    let mut acfg = match config_path {
        Some(p) => config::load(p)?.attack,
        None => ck.run_config().map(|c| c.attack).unwrap_or_default(),
    };
    if let Some(r) = repetitions {
        acfg.repetitions = r;
    }
    let g = ck.dataset(dataset)?;
    let rep = run_attack(&g, &ck.model, &acfg)?;
    let ctx = ck.context()?;
    let mut records: Vec<Value> = rep
        .aucs
        .iter()
        .zip(&rep.shadow_accuracy)
        .enumerate()
        .map(|(i, (auc, shadow))| {
            let mut r = ctx.record("attack", "attack_auc", json!(auc));
            r["attack_auc"] = json!(auc);
            r["run_index"] = json!(i);
            r["shadow_accuracy"] = json!(shadow);
            r
        })
        .collect();
    let ci = bootstrap_ci(&rep.aucs, DEFAULT_RESAMPLES, 0.95, acfg.seed)?;
    let mut summary = ctx.record("attack", "mean_attack_auc", json!(rep.mean_auc));
    summary["ci"] = report::ci_value(&ci);
    summary["repetitions"] = json!(acfg.repetitions);
    records.push(summary);
    report::append_jsonl(&ck.dir.join("metrics.jsonl"), &records)?;
    report::print_jsonl(&records);
    Ok(())
}

pub fn gen_sbm(params: &SbmParams, out: &Path) -> anyhow::Result<()> {
    let g = generate_sbm(params)?;
    save_dataset(&g, out)?;
    report::emit(dataset_summary(out, &g));
    Ok(())
}

pub fn convert(input: &Path, output: &Path) -> anyhow::Result<()> {
    let g = load_dataset(input, None)?;
    save_dataset(&g, output)?;
    report::emit(dataset_summary(output, &g));
    Ok(())
}
