//! Encoder pre-training on node features and labels alone.

use ndarray::{Array2, Axis};

use super::train::{fit, FitOptions, FitReport, Network, PrivateFit};
use super::{stream, GapConfig};
use crate::error::{GapError, Result};
use crate::graph::{GraphDataset, Split};
use crate::neural::{Mlp, MlpSpec, Parameterized, Tape};
use crate::privacy::{sampled_gaussian_rdp, PrivacyLevel, RdpCurve, SampledGaussianParams};
use crate::rng::{derive_seed, derived_rng};

/// The encoder MLP together with the linear softmax layer used only while
/// pre-training.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub body: Mlp,
    pub softmax_head: Mlp,
}

impl Encoder {
    pub fn new(cfg: &GapConfig, input_dim: usize, num_classes: usize, seed: u64) -> Result<Encoder> {
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat_n(cfg.hidden_dim, cfg.encoder_layers));
        let body = Mlp::new(
            &MlpSpec {
                dims,
                activation: cfg.activation,
                plain_last: false,
                batch_norm: cfg.uses_batch_norm(),
            },
            &mut derived_rng(seed, 0),
        )?;
        let softmax_head = Mlp::new(
            &MlpSpec {
                dims: vec![cfg.hidden_dim, num_classes],
                activation: cfg.activation,
                plain_last: true,
                batch_norm: false,
            },
            &mut derived_rng(seed, 1),
        )?;
        Ok(Encoder { body, softmax_head })
    }

    /// Encoded features of every row (inference mode).
    pub fn encode(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        self.body.predict(features)
    }
}

impl Parameterized for Encoder {
    fn num_params(&self) -> usize {
        self.body.num_params() + self.softmax_head.num_params()
    }

    fn params(&self) -> Vec<f64> {
        let mut p = self.body.params();
        p.extend(self.softmax_head.params());
        p
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(GapError::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let (a, b) = params.split_at(self.body.num_params());
        self.body.set_params(a)?;
        self.softmax_head.set_params(b)
    }

    fn uses_batch_norm(&self) -> bool {
        self.body.uses_batch_norm() || self.softmax_head.uses_batch_norm()
    }
}

impl Network for Encoder {
    type Data = Array2<f64>;

    fn forward(&self, x: &Array2<f64>, rows: &[usize], training: bool) -> Result<(Array2<f64>, Vec<Tape>)> {
        let (h, t1) = self.body.forward(&x.select(Axis(0), rows), training)?;
        let (out, t2) = self.softmax_head.forward(&h, training)?;
        Ok((out, vec![t1, t2]))
    }

    fn backward(&self, tapes: &[Tape], grad: &Array2<f64>) -> Result<Vec<f64>> {
        let (head_grad, dh) = self.softmax_head.backward(&tapes[1], grad)?;
        let (mut g, _) = self.body.backward(&tapes[0], &dh)?;
        g.extend(head_grad);
        Ok(g)
    }

    fn commit(&mut self, tapes: &[Tape]) {
        self.body.commit_batch_stats(&tapes[0]);
        self.softmax_head.commit_batch_stats(&tapes[1]);
    }
}

/// Trains `softmax(MLP_enc(X)·W)` on the training split. No edge is read,
/// so the returned curve is zero unless training runs under node-level
/// DP-Adam.
pub fn pretrain_encoder(g: &GraphDataset, cfg: &GapConfig, noise_scale: f64) -> Result<(Encoder, RdpCurve, FitReport)> {
    let train = g.nodes_in(Split::Train);
    let val = g.nodes_in(Split::Val);
    if train.is_empty() {
        return Err(GapError::DegenerateSplit("no training nodes".into()));
    }
    let x = g.features_f64();
    let mut enc = Encoder::new(
        cfg,
        g.num_features(),
        g.num_classes(),
        derive_seed(cfg.seed, stream::ENCODER_INIT),
    )?;
    let private = cfg.privacy == PrivacyLevel::Node;
    let opts = FitOptions {
        epochs: cfg.encoder_epochs,
        learning_rate: cfg.learning_rate,
        patience: cfg.patience,
        private: private.then_some(PrivateFit {
            clip_norm: cfg.clip_norm,
            noise_multiplier: noise_scale,
            batch_size: cfg.batch_size,
        }),
        batch_seed: derive_seed(cfg.seed, stream::ENCODER_BATCHES),
        noise_seed: derive_seed(cfg.seed, stream::ENCODER_NOISE),
    };
    let report = fit(&mut enc, &x, g.labels(), &train, &val, &opts)?;
    let curve = if private {
        encoder_curve(cfg, noise_scale, train.len())?
    } else {
        RdpCurve::zero()
    };
    Ok((enc, curve, report))
}

/// Node-level DP-Adam cost of encoder pre-training.
pub fn encoder_curve(cfg: &GapConfig, noise_scale: f64, train_size: usize) -> Result<RdpCurve> {
    sampled_gaussian_rdp(SampledGaussianParams::for_training(
        noise_scale,
        cfg.batch_size,
        train_size,
        cfg.encoder_epochs,
    ))
}
