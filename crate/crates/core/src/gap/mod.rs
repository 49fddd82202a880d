//! The three-stage pipeline: encoder pre-training, one private
//! aggregation run whose output is cached, and a classification module
//! trained on the cache alone.
//!
//! With `hops = 0` the pipeline reduces to an MLP over encoded features,
//! which doubles as the MLP (and, at node level, DP-MLP) baseline.

pub mod classifier;
mod encoder;
mod train;

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use classifier::{classifier_curve, train_classifier, Classifier};
pub use encoder::{encoder_curve, pretrain_encoder, Encoder};
pub use train::FitReport;

use crate::codec::{read_file, write_file};
use crate::error::{GapError, Result};
use crate::graph::{bound_in_out_degree, GraphDataset, Split};
use crate::neural::{decode_mlps, encode_mlps, Activation};
use crate::pma::{pma_rdp_curve, run_pma, AggregationCache, PmaConfig};
use crate::privacy::{
    calibrate_sigma, compose, default_alpha_grid, rdp_to_dp, PrivacyBudget, PrivacyLevel, RdpCurve,
};
use crate::rng::derive_seed;
use crate::stats::accuracy;

/// Sub-stream ids under the run seed.
pub mod stream {
    pub const ENCODER_INIT: u64 = 1;
    pub const ENCODER_BATCHES: u64 = 2;
    pub const ENCODER_NOISE: u64 = 3;
    pub const DEGREE: u64 = 4;
    pub const PMA: u64 = 5;
    pub const CLASSIFIER_INIT: u64 = 6;
    pub const BATCHES: u64 = 7;
    pub const NOISE: u64 = 8;
    pub const INDUCTIVE: u64 = 9;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GapConfig {
    pub hops: usize,
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub base_layers: usize,
    pub head_layers: usize,
    pub activation: Activation,
    pub privacy: PrivacyLevel,
    /// Target ε; required for edge and node level unless `noise_scale` is
    /// fixed.
    pub epsilon: Option<f64>,
    /// Defaults to the power-of-ten rule on the number of protected entities.
    pub delta: Option<f64>,
    pub max_degree: Option<usize>,
    /// Skips calibration and uses this noise scale directly.
    pub noise_scale: Option<f64>,
    pub encoder_epochs: usize,
    pub epochs: usize,
    /// Expected Poisson batch size under node-level DP-Adam.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    /// Defaults to on, except at node level where it is unavailable.
    pub batch_norm: Option<bool>,
    pub patience: usize,
    pub seed: u64,
}

impl Default for GapConfig {
    fn default() -> GapConfig {
        GapConfig {
            hops: 2,
            hidden_dim: 16,
            encoder_layers: 2,
            base_layers: 1,
            head_layers: 1,
            activation: Activation::Selu,
            privacy: PrivacyLevel::None,
            epsilon: None,
            delta: None,
            max_degree: None,
            noise_scale: None,
            encoder_epochs: 100,
            epochs: 100,
            batch_size: 256,
            learning_rate: 0.01,
            clip_norm: 1.0,
            batch_norm: None,
            patience: 20,
            seed: 0,
        }
    }
}

impl GapConfig {
    pub fn uses_batch_norm(&self) -> bool {
        self.privacy != PrivacyLevel::Node && self.batch_norm.unwrap_or(true)
    }

    /// The same configuration without aggregation hops.
    pub fn mlp_baseline(&self) -> GapConfig {
        GapConfig {
            hops: 0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GapError::InvalidParameter(m));
        if self.hidden_dim == 0 || self.encoder_layers == 0 || self.base_layers == 0 || self.head_layers == 0 {
            return bad("hidden_dim and all layer counts must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return bad("learning_rate and clip_norm must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if let Some(s) = self.noise_scale {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("noise_scale must be finite and non-negative, got {s}"));
            }
        }
        match self.privacy {
            PrivacyLevel::None => {}
            level => {
                if self.epsilon.is_none() && self.noise_scale.is_none() {
                    return bad(format!("{level}-level privacy needs epsilon or noise_scale"));
                }
                if let Some(e) = self.epsilon {
                    if !(e > 0.0) {
                        return bad(format!("epsilon must be positive, got {e}"));
                    }
                }
            }
        }
        if self.privacy == PrivacyLevel::Node {
            if self.batch_norm == Some(true) {
                return Err(GapError::BatchNormUnderNodePrivacy);
            }
            if self.hops > 0 && self.max_degree.is_none() {
                return bad("node-level privacy needs max_degree".into());
            }
            if self.max_degree == Some(0) {
                return bad("max_degree must be at least 1".into());
            }
        }
        Ok(())
    }

    /// Entities protected at this level: nodes, edges, or none.
    pub fn protected_entities(&self, g: &GraphDataset) -> usize {
        match self.privacy {
            PrivacyLevel::Node => g.num_nodes(),
            _ => g.num_edges(),
        }
    }

    pub fn delta_for(&self, g: &GraphDataset) -> f64 {
        self.delta
            .unwrap_or_else(|| PrivacyBudget::default_delta(self.protected_entities(g)))
    }

    pub fn pma_config(&self, noise_scale: f64) -> PmaConfig {
        PmaConfig {
            hops: self.hops,
            sigma: noise_scale,
            level: self.privacy,
            max_degree: self.max_degree,
            seed: derive_seed(self.seed, stream::PMA),
        }
    }
}

/// One inductive inference run; it touches a disjoint graph, so its cost
/// composes in parallel with training and is reported rather than added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InductiveRecord {
    pub run: u64,
    pub seed: u64,
    pub num_nodes: usize,
    pub curve: RdpCurve,
}

/// Per-stage RDP curves of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub level: PrivacyLevel,
    pub delta: f64,
    pub encoder: RdpCurve,
    pub aggregation: RdpCurve,
    pub classifier: RdpCurve,
    pub inductive: Vec<InductiveRecord>,
}

/// Achieved guarantee; ε is infinite for non-private runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Achieved {
    pub epsilon: f64,
    pub delta: f64,
    pub best_alpha: Option<f64>,
}

impl PrivacyLedger {
    pub fn total(&self) -> Result<RdpCurve> {
        compose(&[self.encoder.clone(), self.aggregation.clone(), self.classifier.clone()])
    }

    pub fn achieved(&self, alpha_grid: &[f64]) -> Result<Achieved> {
        if self.level == PrivacyLevel::None {
            return Ok(Achieved {
                epsilon: f64::INFINITY,
                delta: 0.0,
                best_alpha: None,
            });
        }
        let total = self.total()?;
        if total.is_zero() {
            return Ok(Achieved {
                epsilon: 0.0,
                delta: 0.0,
                best_alpha: None,
            });
        }
        let g = rdp_to_dp(&total, self.delta, alpha_grid)?;
        Ok(Achieved {
            epsilon: g.epsilon,
            delta: g.delta,
            best_alpha: Some(g.best_alpha),
        })
    }

    /// `(α, encoder, aggregation, classifier)` at every grid order all
    /// three curves support.
    pub fn tabulate(&self, alpha_grid: &[f64]) -> Vec<[f64; 4]> {
        alpha_grid
            .iter()
            .filter_map(|&a| {
                Some([
                    a,
                    self.encoder.evaluate(a).ok()?,
                    self.aggregation.evaluate(a).ok()?,
                    self.classifier.evaluate(a).ok()?,
                ])
            })
            .collect()
    }
}

/// Encodes every node, row-normalizes and runs the private aggregation. At
/// node level in- and out-degrees are bounded first.
pub fn build_cache(
    g: &GraphDataset,
    encoder: &Encoder,
    cfg: &GapConfig,
    noise_scale: f64,
) -> Result<(AggregationCache, RdpCurve)> {
    let encoded = encoder.encode(&g.features_f64())?;
    cache_from_encoded(g, &encoded, cfg, noise_scale, derive_seed(cfg.seed, stream::DEGREE), derive_seed(cfg.seed, stream::PMA))
}

fn cache_from_encoded(
    g: &GraphDataset,
    encoded: &Array2<f64>,
    cfg: &GapConfig,
    noise_scale: f64,
    degree_seed: u64,
    pma_seed: u64,
) -> Result<(AggregationCache, RdpCurve)> {
    let pma = PmaConfig {
        seed: pma_seed,
        ..cfg.pma_config(noise_scale)
    };
    let cache = match (cfg.privacy, cfg.hops) {
        (PrivacyLevel::Node, k) if k > 0 => {
            let d = cfg.max_degree.ok_or_else(|| {
                GapError::InvalidParameter("node-level aggregation needs max_degree".into())
            })?;
            run_pma(&bound_in_out_degree(g, d, degree_seed)?, encoded, &pma)?
        }
        _ => run_pma(g, encoded, &pma)?,
    };
    Ok((cache, pma_rdp_curve(&pma)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub labels: Vec<usize>,
    pub posteriors: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    config: GapConfig,
    noise_scale: f64,
    num_classes: usize,
    ledger: PrivacyLedger,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapModel {
    config: GapConfig,
    noise_scale: f64,
    num_classes: usize,
    encoder: Encoder,
    classifier: Classifier,
    cache: AggregationCache,
    ledger: PrivacyLedger,
}

impl GapModel {
    pub fn config(&self) -> &GapConfig {
        &self.config
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn cache(&self) -> &AggregationCache {
        &self.cache
    }

    pub fn ledger(&self) -> &PrivacyLedger {
        &self.ledger
    }

    /// Predictions from the cached rows of `nodes`; reads no graph data and
    /// spends no budget.
    pub fn infer_transductive(&self, nodes: &[usize]) -> Result<Predictions> {
        let posteriors = self.classifier.posteriors(&self.cache.select(nodes)?)?;
        Ok(Predictions {
            labels: train::argmax_rows(&posteriors),
            posteriors,
        })
    }

    /// Encodes and aggregates a new graph with the trained noise scale and
    /// a fresh seed, then classifies every node of it.
    pub fn infer_inductive(&mut self, g_new: &GraphDataset) -> Result<Predictions> {
        if g_new.num_features() != self.encoder.body.input_dim() {
            return Err(GapError::DimensionMismatch(format!(
                "graph has {} features, model expects {}",
                g_new.num_features(),
                self.encoder.body.input_dim()
            )));
        }
        let run = self.ledger.inductive.len() as u64;
        let seed = derive_seed(derive_seed(self.config.seed, stream::INDUCTIVE), run);
        let encoded = self.encoder.encode(&g_new.features_f64())?;
        let (cache, curve) = cache_from_encoded(
            g_new,
            &encoded,
            &self.config,
            self.noise_scale,
            derive_seed(seed, stream::DEGREE),
            derive_seed(seed, stream::PMA),
        )?;
        let posteriors = self.classifier.posteriors(cache.matrices())?;
        self.ledger.inductive.push(InductiveRecord {
            run,
            seed,
            num_nodes: g_new.num_nodes(),
            curve,
        });
        Ok(Predictions {
            labels: train::argmax_rows(&posteriors),
            posteriors,
        })
    }

    /// Accuracy on each split of the cached graph.
    pub fn evaluate(&self, labels: &[usize], split: &[Split]) -> Result<Metrics> {
        if labels.len() != self.cache.num_nodes() || split.len() != labels.len() {
            return Err(GapError::DimensionMismatch(format!(
                "model covers {} nodes, got {} labels and {} split tags",
                self.cache.num_nodes(),
                labels.len(),
                split.len()
            )));
        }
        let acc = |s: Split| -> Result<f64> {
            let nodes: Vec<usize> = (0..labels.len()).filter(|&v| split[v] == s).collect();
            let truth: Vec<usize> = nodes.iter().map(|&v| labels[v]).collect();
            Ok(accuracy(&self.infer_transductive(&nodes)?.labels, &truth))
        };
        Ok(Metrics {
            train_accuracy: acc(Split::Train)?,
            val_accuracy: acc(Split::Val)?,
            test_accuracy: acc(Split::Test)?,
        })
    }

    /// `GAPM` checkpoint holding every network and a JSON metadata block;
    /// the cache is stored separately.
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = ModelMeta {
            config: self.config.clone(),
            noise_scale: self.noise_scale,
            num_classes: self.num_classes,
            ledger: self.ledger.clone(),
        };
        let mut models = vec![&self.encoder.body, &self.encoder.softmax_head];
        models.extend(self.classifier.bases());
        models.push(self.classifier.head());
        encode_mlps(&models, &serde_json::to_string(&meta).expect("metadata serializes"))
    }

    pub fn from_bytes(bytes: &[u8], cache: AggregationCache) -> Result<GapModel> {
        let (mut models, meta) = decode_mlps(bytes)?;
        let meta: ModelMeta = serde_json::from_str(&meta)
            .map_err(|e| GapError::InvalidParameter(format!("checkpoint metadata: {e}")))?;
        let hops = meta.config.hops;
        if models.len() != hops + 4 {
            return Err(GapError::DimensionMismatch(format!(
                "checkpoint holds {} networks, {hops} hops need {}",
                models.len(),
                hops + 4
            )));
        }
        if cache.hops() != hops || cache.width() != meta.config.hidden_dim {
            return Err(GapError::DimensionMismatch(format!(
                "cache with {} hops of width {} does not belong to this checkpoint",
                cache.hops(),
                cache.width()
            )));
        }
        let head = models.pop().unwrap();
        let bases = models.split_off(2);
        let softmax_head = models.pop().unwrap();
        let body = models.pop().unwrap();
        Ok(GapModel {
            config: meta.config,
            noise_scale: meta.noise_scale,
            num_classes: meta.num_classes,
            encoder: Encoder { body, softmax_head },
            classifier: Classifier::from_parts(bases, head)?,
            cache,
            ledger: meta.ledger,
        })
    }

    pub fn save(&self, model_path: &Path, cache_path: &Path) -> Result<()> {
        write_file(model_path, &self.to_bytes())?;
        self.cache.save(cache_path)
    }

    pub fn load(model_path: &Path, cache_path: &Path) -> Result<GapModel> {
        let cache = AggregationCache::load(cache_path)?;
        GapModel::from_bytes(&read_file(model_path)?, cache)
    }
}

/// Noise scale chosen for a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseChoice {
    pub noise_scale: f64,
    pub budget: Option<PrivacyBudget>,
}

/// All three stage curves as functions of the shared noise scale.
pub fn stage_curves(cfg: &GapConfig, noise_scale: f64, train_size: usize) -> Result<[RdpCurve; 3]> {
    let pma = pma_rdp_curve(&cfg.pma_config(noise_scale))?;
    if cfg.privacy != PrivacyLevel::Node {
        return Ok([RdpCurve::zero(), pma, RdpCurve::zero()]);
    }
    Ok([
        encoder_curve(cfg, noise_scale, train_size)?,
        pma,
        classifier_curve(cfg, noise_scale, train_size)?,
    ])
}

/// Finds the smallest shared noise scale meeting the configured budget.
pub fn calibrate_noise(g: &GraphDataset, cfg: &GapConfig) -> Result<NoiseChoice> {
    cfg.validate()?;
    if cfg.privacy == PrivacyLevel::None {
        return Ok(NoiseChoice {
            noise_scale: 0.0,
            budget: None,
        });
    }
    let train_size = g.nodes_in(Split::Train).len();
    let budget = cfg.epsilon.map(|epsilon| PrivacyBudget {
        epsilon,
        delta: cfg.delta_for(g),
        level: cfg.privacy,
    });
    if let Some(b) = &budget {
        b.validate(cfg.protected_entities(g))?;
    }
    if let Some(s) = cfg.noise_scale {
        return Ok(NoiseChoice { noise_scale: s, budget });
    }
    let budget = budget.expect("validated above");
    // Edge level without hops reads no edges and needs no noise.
    if cfg.privacy == PrivacyLevel::Edge && cfg.hops == 0 {
        return Ok(NoiseChoice {
            noise_scale: 0.0,
            budget: Some(budget),
        });
    }
    let c = calibrate_sigma(
        &budget,
        |s| compose(&stage_curves(cfg, s, train_size)?),
        &default_alpha_grid(),
    )?;
    Ok(NoiseChoice {
        noise_scale: c.sigma,
        budget: Some(budget),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub model: GapModel,
    pub noise: NoiseChoice,
    pub achieved: Achieved,
    pub metrics: Metrics,
    pub encoder_fit: FitReport,
    pub classifier_fit: FitReport,
}

/// Calibration, encoder pre-training, cached aggregation and classifier
/// training on `g`.
pub fn full_pipeline(g: &GraphDataset, cfg: &GapConfig) -> Result<RunOutcome> {
    let noise = calibrate_noise(g, cfg)?;
    let (encoder, encoder_curve, encoder_fit) = pretrain_encoder(g, cfg, noise.noise_scale)?;
    let (cache, aggregation_curve) = build_cache(g, &encoder, cfg, noise.noise_scale)?;
    let (classifier, classifier_curve, classifier_fit) =
        train_classifier(&cache, g.labels(), g.split(), g.num_classes(), cfg, noise.noise_scale)?;
    let ledger = PrivacyLedger {
        level: cfg.privacy,
        delta: cfg.delta_for(g),
        encoder: encoder_curve,
        aggregation: aggregation_curve,
        classifier: classifier_curve,
        inductive: Vec::new(),
    };
    let achieved = ledger.achieved(&default_alpha_grid())?;
    let model = GapModel {
        config: cfg.clone(),
        noise_scale: noise.noise_scale,
        num_classes: g.num_classes(),
        encoder,
        classifier,
        cache,
        ledger,
    };
    let metrics = model.evaluate(g.labels(), g.split())?;
    Ok(RunOutcome {
        model,
        noise,
        achieved,
        metrics,
        encoder_fit,
        classifier_fit,
    })
}
