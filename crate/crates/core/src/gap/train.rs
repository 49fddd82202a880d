//! Training loop shared by the encoder and the classification module.

use ndarray::Array2;
use rand::Rng;

use crate::error::Result;
use crate::neural::{
    adam_step, per_sample_gradients, privatize_gradients, softmax_cross_entropy, AdamConfig, AdamState,
    DpOptimizerConfig, Parameterized, Tape,
};
use crate::rng::{derive_seed, derived_rng};
use crate::stats::accuracy;

/// A network trained on rows of some input table.
pub(crate) trait Network: Parameterized + Clone + Sync {
    type Data: ?Sized + Sync;

    fn forward(&self, data: &Self::Data, rows: &[usize], training: bool) -> Result<(Array2<f64>, Vec<Tape>)>;

    /// Flat parameter gradient for an upstream logit gradient.
    fn backward(&self, tapes: &[Tape], grad: &Array2<f64>) -> Result<Vec<f64>>;

    fn commit(&mut self, tapes: &[Tape]);
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PrivateFit {
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FitOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub private: Option<PrivateFit>,
    pub batch_seed: u64,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    pub steps: u64,
}

pub(crate) fn predict_labels<N: Network>(net: &N, data: &N::Data, rows: &[usize]) -> Result<Vec<usize>> {
    let (logits, _) = net.forward(data, rows, false)?;
    Ok(argmax_rows(&logits))
}

pub(crate) fn argmax_rows(m: &Array2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

fn labels_of(labels: &[usize], rows: &[usize]) -> Vec<usize> {
    rows.iter().map(|&r| labels[r]).collect()
}

/// Full-batch Adam without privacy, Poisson-sampled DP-Adam with it. The
/// model with the best validation accuracy is kept; training stops after
/// `patience` epochs without improvement.
pub(crate) fn fit<N: Network>(
    net: &mut N,
    data: &N::Data,
    labels: &[usize],
    train: &[usize],
    val: &[usize],
    opts: &FitOptions,
) -> Result<FitReport> {
    let adam = AdamConfig {
        learning_rate: opts.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(net.num_params());
    let mut best: Option<(f64, usize, N)> = None;
    let mut steps = 0u64;
    let mut epochs_run = 0;

    let train_labels = labels_of(labels, train);
    let val_labels = labels_of(labels, val);

    for epoch in 1..=opts.epochs {
        epochs_run = epoch;
        match opts.private {
            None => {
                let (logits, tapes) = net.forward(data, train, true)?;
                let (_, dlogits) = softmax_cross_entropy(&logits, &train_labels)?;
                let grad = net.backward(&tapes, &dlogits)?;
                let mut params = net.params();
                adam_step(&mut params, &grad, &mut state, &adam)?;
                net.set_params(&params)?;
                net.commit(&tapes);
                steps += 1;
            }
            Some(p) => {
                let batch = p.batch_size.clamp(1, train.len());
                let q = batch as f64 / train.len() as f64;
                let dp = DpOptimizerConfig {
                    learning_rate: opts.learning_rate,
                    clip_norm: p.clip_norm,
                    noise_multiplier: p.noise_multiplier,
                    batch_size: batch,
                    adam_betas: (adam.beta1, adam.beta2),
                    adam_eps: adam.eps,
                };
                for _ in 0..train.len().div_ceil(batch) {
                    let mut rng = derived_rng(opts.batch_seed, steps);
                    let rows: Vec<usize> = train.iter().copied().filter(|_| rng.random::<f64>() < q).collect();
                    let model = &*net;
                    let per_sample = per_sample_gradients(rows.len(), |i| {
                        let (logits, tapes) = model.forward(data, &rows[i..=i], true)?;
                        let (_, dlogits) = softmax_cross_entropy(&logits, &[labels[rows[i]]])?;
                        model.backward(&tapes, &dlogits)
                    })?;
                    let (grad, _) =
                        privatize_gradients(&per_sample, net.num_params(), &dp, derive_seed(opts.noise_seed, steps))?;
                    let mut params = net.params();
                    adam_step(&mut params, &grad, &mut state, &adam)?;
                    net.set_params(&params)?;
                    steps += 1;
                }
            }
        }

        if val.is_empty() {
            continue;
        }
        let acc = accuracy(&predict_labels(net, data, val)?, &val_labels);
        match &best {
            Some((b, _, _)) if acc <= *b => {}
            _ => best = Some((acc, epoch, net.clone())),
        }
        if let Some((_, best_epoch, _)) = &best {
            if epoch - best_epoch >= opts.patience {
                break;
            }
        }
    }

    Ok(match best {
        Some((acc, best_epoch, model)) => {
            *net = model;
            FitReport {
                epochs_run,
                best_epoch,
                best_val_accuracy: Some(acc),
                steps,
            }
        }
        None => FitReport {
            epochs_run,
            best_epoch: epochs_run,
            best_val_accuracy: None,
            steps,
        },
    })
}
