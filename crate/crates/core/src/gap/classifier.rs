//! Classification module: one base MLP per hop over the cached
//! aggregations, concatenated and fed to a head MLP. Everything here reads
//! only the cache, labels and split tags.

use ndarray::{concatenate, s, Array2, Axis};

use super::train::{fit, FitOptions, FitReport, Network, PrivateFit};
use super::{stream, GapConfig};
use crate::error::{GapError, Result};
use crate::graph::Split;
use crate::neural::{softmax, Mlp, MlpSpec, Parameterized, Tape};
use crate::pma::AggregationCache;
use crate::privacy::{sampled_gaussian_rdp, PrivacyLevel, RdpCurve, SampledGaussianParams};
use crate::rng::{derive_seed, derived_rng};

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    bases: Vec<Mlp>,
    head: Mlp,
}

impl Classifier {
    pub fn new(cfg: &GapConfig, num_classes: usize, seed: u64) -> Result<Classifier> {
        let bn = cfg.uses_batch_norm();
        let bases = (0..=cfg.hops)
            .map(|k| {
                let mut dims = vec![cfg.hidden_dim];
                dims.extend(std::iter::repeat_n(cfg.hidden_dim, cfg.base_layers));
                let spec = MlpSpec {
                    dims,
                    activation: cfg.activation,
                    plain_last: false,
                    batch_norm: bn,
                };
                Mlp::new(&spec, &mut derived_rng(seed, k as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut dims = vec![(cfg.hops + 1) * cfg.hidden_dim];
        dims.extend(std::iter::repeat_n(cfg.hidden_dim, cfg.head_layers - 1));
        dims.push(num_classes);
        let head = Mlp::new(
            &MlpSpec {
                dims,
                activation: cfg.activation,
                plain_last: true,
                batch_norm: bn,
            },
            &mut derived_rng(seed, u64::MAX),
        )?;
        Ok(Classifier { bases, head })
    }

    pub fn from_parts(bases: Vec<Mlp>, head: Mlp) -> Result<Classifier> {
        let width: usize = bases.iter().map(Mlp::output_dim).sum();
        if bases.is_empty() || width != head.input_dim() {
            return Err(GapError::DimensionMismatch(format!(
                "{} base outputs of total width {width} do not feed a head of input {}",
                bases.len(),
                head.input_dim()
            )));
        }
        Ok(Classifier { bases, head })
    }

    pub fn bases(&self) -> &[Mlp] {
        &self.bases
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    pub fn hops(&self) -> usize {
        self.bases.len() - 1
    }

    /// Width of the concatenation entering the head.
    pub fn combined_width(&self) -> usize {
        self.head.input_dim()
    }

    /// Class posteriors for the given cached rows, one matrix per hop.
    pub fn posteriors(&self, hop_rows: &[Array2<f64>]) -> Result<Array2<f64>> {
        Ok(softmax(&self.logits(hop_rows, false)?.0))
    }

    fn logits(&self, hop_rows: &[Array2<f64>], training: bool) -> Result<(Array2<f64>, Vec<Tape>)> {
        if hop_rows.len() != self.bases.len() {
            return Err(GapError::DimensionMismatch(format!(
                "{} cached hops for a classifier over {}",
                hop_rows.len(),
                self.bases.len()
            )));
        }
        let mut tapes = Vec::with_capacity(self.bases.len() + 1);
        let mut hidden = Vec::with_capacity(self.bases.len());
        for (base, x) in self.bases.iter().zip(hop_rows) {
            let (h, t) = base.forward(x, training)?;
            hidden.push(h);
            tapes.push(t);
        }
        let views: Vec<_> = hidden.iter().map(|h| h.view()).collect();
        let combined = concatenate(Axis(1), &views).map_err(|e| GapError::DimensionMismatch(e.to_string()))?;
        let (out, t) = self.head.forward(&combined, training)?;
        tapes.push(t);
        Ok((out, tapes))
    }
}

impl Parameterized for Classifier {
    fn num_params(&self) -> usize {
        self.bases.iter().map(Mlp::num_params).sum::<usize>() + self.head.num_params()
    }

    fn params(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.bases.iter().flat_map(Mlp::params).collect();
        out.extend(self.head.params());
        out
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(GapError::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut rest = params;
        for m in self.bases.iter_mut().chain(std::iter::once(&mut self.head)) {
            let (mine, tail) = rest.split_at(m.num_params());
            m.set_params(mine)?;
            rest = tail;
        }
        Ok(())
    }

    fn uses_batch_norm(&self) -> bool {
        self.head.uses_batch_norm() || self.bases.iter().any(Mlp::uses_batch_norm)
    }
}

impl Network for Classifier {
    type Data = AggregationCache;

    fn forward(&self, cache: &AggregationCache, rows: &[usize], training: bool) -> Result<(Array2<f64>, Vec<Tape>)> {
        self.logits(&cache.select(rows)?, training)
    }

    fn backward(&self, tapes: &[Tape], grad: &Array2<f64>) -> Result<Vec<f64>> {
        let (head_tape, base_tapes) = tapes.split_last().expect("classifier tapes");
        let (head_grad, dcombined) = self.head.backward(head_tape, grad)?;
        let mut out = Vec::with_capacity(self.num_params());
        let mut col = 0;
        for (base, tape) in self.bases.iter().zip(base_tapes) {
            let w = base.output_dim();
            let (g, _) = base.backward(tape, &dcombined.slice(s![.., col..col + w]).to_owned())?;
            out.extend(g);
            col += w;
        }
        out.extend(head_grad);
        Ok(out)
    }

    fn commit(&mut self, tapes: &[Tape]) {
        for (m, t) in self.bases.iter_mut().chain(std::iter::once(&mut self.head)).zip(tapes) {
            m.commit_batch_stats(t);
        }
    }
}

/// Trains the classification module on the cache. The returned curve is
/// the DP-Adam cost at node level and zero otherwise.
pub fn train_classifier(
    cache: &AggregationCache,
    labels: &[usize],
    split: &[Split],
    num_classes: usize,
    cfg: &GapConfig,
    noise_scale: f64,
) -> Result<(Classifier, RdpCurve, FitReport)> {
    let n = cache.num_nodes();
    if labels.len() != n || split.len() != n {
        return Err(GapError::DimensionMismatch(format!(
            "cache has {n} rows but {} labels and {} split tags",
            labels.len(),
            split.len()
        )));
    }
    if cache.hops() != cfg.hops || cache.width() != cfg.hidden_dim {
        return Err(GapError::DimensionMismatch(format!(
            "cache with {} hops of width {} does not match the configuration ({} hops, width {})",
            cache.hops(),
            cache.width(),
            cfg.hops,
            cfg.hidden_dim
        )));
    }
    let rows_in = |s: Split| -> Vec<usize> { (0..n).filter(|&i| split[i] == s).collect() };
    let (train, val) = (rows_in(Split::Train), rows_in(Split::Val));
    if train.is_empty() {
        return Err(GapError::DegenerateSplit("no training nodes".into()));
    }
    let mut model = Classifier::new(cfg, num_classes, derive_seed(cfg.seed, stream::CLASSIFIER_INIT))?;
    let private = cfg.privacy == PrivacyLevel::Node;
    let opts = FitOptions {
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        patience: cfg.patience,
        private: private.then_some(PrivateFit {
            clip_norm: cfg.clip_norm,
            noise_multiplier: noise_scale,
            batch_size: cfg.batch_size,
        }),
        batch_seed: derive_seed(cfg.seed, stream::BATCHES),
        noise_seed: derive_seed(cfg.seed, stream::NOISE),
    };
    let report = fit(&mut model, cache, labels, &train, &val, &opts)?;
    let curve = if private {
        classifier_curve(cfg, noise_scale, train.len())?
    } else {
        RdpCurve::zero()
    };
    Ok((model, curve, report))
}

/// Node-level DP-Adam cost of training the classification module.
pub fn classifier_curve(cfg: &GapConfig, noise_scale: f64, train_size: usize) -> Result<RdpCurve> {
    sampled_gaussian_rdp(SampledGaussianParams::for_training(
        noise_scale,
        cfg.batch_size,
        train_size,
        cfg.epochs,
    ))
}
