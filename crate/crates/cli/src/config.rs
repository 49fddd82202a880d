//! Run configuration files.
//!
//! The schema has five sections, `dataset`, `model`, `privacy`, `train` and
//! `attack`, written either as TOML or as JSON. A run manifest is also
//! accepted; its `config` object is used.

use std::path::{Path, PathBuf};

use anyhow::Context;
use gap_core::audit::AttackConfig;
use gap_core::neural::Activation;
use gap_core::{GapConfig, PrivacyLevel};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::Usage;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// A `.gapd` file or a directory holding `nodes.csv` and `edges.csv`.
    pub path: Option<PathBuf>,
    /// Optional `id,split` CSV overriding the stored splits.
    pub splits: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hops: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub encoder_layers: Option<usize>,
    pub base_layers: Option<usize>,
    pub head_layers: Option<usize>,
    pub activation: Option<Activation>,
    pub batch_norm: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySection {
    pub level: PrivacyLevel,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub max_degree: Option<usize>,
    #[serde(default)]
    pub noise_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub encoder_epochs: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub clip_norm: Option<f64>,
    pub patience: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    pub privacy: PrivacySection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub attack: AttackConfig,
}

impl RunConfig {
    pub fn gap_config(&self) -> GapConfig {
        let d = GapConfig::default();
        let (m, p, t) = (&self.model, &self.privacy, &self.train);
        GapConfig {
            hops: m.hops.unwrap_or(d.hops),
            hidden_dim: m.hidden_dim.unwrap_or(d.hidden_dim),
            encoder_layers: m.encoder_layers.unwrap_or(d.encoder_layers),
            base_layers: m.base_layers.unwrap_or(d.base_layers),
            head_layers: m.head_layers.unwrap_or(d.head_layers),
            activation: m.activation.unwrap_or(d.activation),
            batch_norm: m.batch_norm,
            privacy: p.level,
            epsilon: p.epsilon,
            delta: p.delta,
            max_degree: p.max_degree,
            noise_scale: p.noise_scale,
            encoder_epochs: t.encoder_epochs.unwrap_or(d.encoder_epochs),
            epochs: t.epochs.unwrap_or(d.epochs),
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            learning_rate: t.learning_rate.unwrap_or(d.learning_rate),
            clip_norm: t.clip_norm.unwrap_or(d.clip_norm),
            patience: t.patience.unwrap_or(d.patience),
            seed: t.seed.unwrap_or(d.seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.train.seed.unwrap_or_default()
    }

    pub fn with_seed(&self, seed: u64) -> RunConfig {
        let mut out = self.clone();
        out.train.seed = Some(seed);
        out
    }
}

fn parse_value(text: &str, path: &Path) -> anyhow::Result<Value> {
    let is_json =
        path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
    if is_json {
        serde_json::from_str(text)
            .map_err(|e| Usage::new(format!("{}: invalid JSON: {e}", path.display())).into())
    } else {
        let table: toml::Table = toml::from_str(text)
            .map_err(|e| Usage::new(format!("{}: invalid TOML: {e}", path.display())))?;
        Ok(serde_json::to_value(table)?)
    }
}

/// Decodes a config value, reporting failures by key path.
pub fn from_value(mut value: Value, origin: &str) -> anyhow::Result<RunConfig> {
    if let Some(inner) = value.get_mut("config") {
        value = inner.take();
    }
    let missing = |key: &str| Usage::new(format!("{origin}: missing required key `{key}`"));
    match value.get("privacy") {
        None => return Err(missing("privacy.level").into()),
        Some(p) if p.get("level").is_none() => return Err(missing("privacy.level").into()),
        _ => {}
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Usage::new(format!("{origin}: key `{path}`: {}", e.into_inner())).into()
    })
}

/// Reads a config file; relative dataset paths resolve against its
/// directory. `GAP_SEED` overrides the seed.
pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg = from_value(parse_value(&text, path)?, &path.display().to_string())?;
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut cfg.dataset.path, &mut cfg.dataset.splits]
        .into_iter()
        .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    if let Ok(raw) = std::env::var("GAP_SEED") {
        let seed = raw.trim().parse::<u64>().map_err(|_| {
            Usage::new(format!("GAP_SEED must be an unsigned integer, got {raw:?}"))
        })?;
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_toml(s: &str) -> anyhow::Result<RunConfig> {
        from_value(parse_value(s, Path::new("c.toml"))?, "c.toml")
    }

    #[test]
    fn sections_map_onto_gap_config() {
        let cfg = parse_toml(
            "[model]\nhops = 3\n[privacy]\nlevel = \"edge\"\nepsilon = 2.0\n[train]\nseed = 9\nepochs = 7\n",
        )
        .unwrap();
        let g = cfg.gap_config();
        assert_eq!((g.hops, g.epochs, g.seed), (3, 7, 9));
        assert_eq!(g.privacy, PrivacyLevel::Edge);
        assert_eq!(g.epsilon, Some(2.0));
        assert_eq!(g.hidden_dim, GapConfig::default().hidden_dim);
    }

    #[test]
    fn json_is_the_same_schema() {
        let json = r#"{"privacy": {"level": "node", "epsilon": 4, "max_degree": 10}, "attack": {"repetitions": 3}}"#;
        let cfg = from_value(parse_value(json, Path::new("c.json")).unwrap(), "c.json").unwrap();
        assert_eq!(cfg.privacy.max_degree, Some(10));
        assert_eq!(cfg.attack.repetitions, 3);
    }

    #[test]
    fn missing_level_names_the_key() {
        let err = parse_toml("[privacy]\nepsilon = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("privacy.level"), "{err}");
        let err = parse_toml("[model]\nhops = 1\n").unwrap_err();
        assert!(err.to_string().contains("privacy.level"), "{err}");
    }

    #[test]
    fn type_errors_carry_the_path() {
        let err = parse_toml("[privacy]\nlevel = \"edge\"\nepsilon = \"big\"\n").unwrap_err();
        assert!(err.to_string().contains("privacy.epsilon"), "{err}");
        let err = parse_toml("[privacy]\nlevel = \"edge\"\n[train]\nsede = 1\n").unwrap_err();
        assert!(err.to_string().contains("train"), "{err}");
    }

    #[test]
    fn manifest_config_is_unwrapped() {
        let cfg = parse_toml("[privacy]\nlevel = \"none\"\n").unwrap();
        let manifest = serde_json::json!({ "config": cfg, "wall_clock_secs": 1.0 });
        assert_eq!(from_value(manifest, "m.json").unwrap(), cfg);
    }
}
