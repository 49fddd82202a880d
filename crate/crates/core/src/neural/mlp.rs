use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::activation::{selu, selu_grad};
use super::Parameterized;
use crate::error::{GapError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Selu,
    None,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Selu => selu(x),
            Activation::None => x,
        }
    }

    fn grad(self, x: f64) -> f64 {
        match self {
            Activation::Selu => selu_grad(x),
            Activation::None => 1.0,
        }
    }
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Per-feature batch normalization with affine parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> BatchNorm {
        BatchNorm {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in × out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
    pub batch_norm: Option<BatchNorm>,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.ncols()
    }

    fn num_params(&self) -> usize {
        let bn = if self.batch_norm.is_some() { 2 * self.out_dim() } else { 0 };
        self.weight.len() + self.bias.len() + bn
    }
}

/// Layer sizes and layout of an MLP. Every layer except a plain last one
/// gets the activation (and batch norm when enabled).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MlpSpec {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub plain_last: bool,
    pub batch_norm: bool,
}

#[derive(Debug, Clone)]
struct BnTape {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
    batch_stats: Option<(Array1<f64>, Array1<f64>)>,
}

#[derive(Debug, Clone)]
struct LayerTape {
    input: Array2<f64>,
    bn: Option<BnTape>,
    pre_activation: Array2<f64>,
}

/// Activations recorded by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    training: bool,
    layers: Vec<LayerTape>,
}

impl Tape {
    pub fn training(&self) -> bool {
        self.training
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Dense>,
    version: u64,
}

/// Equal parameters and statistics; the update counter is ignored.
impl PartialEq for Mlp {
    fn eq(&self, other: &Mlp) -> bool {
        self.layers == other.layers
    }
}

impl Mlp {
    /// Uniform fan-in initialization, `U(-1/√fan_in, 1/√fan_in)` for weights
    /// and biases.
    pub fn new<R: Rng>(spec: &MlpSpec, rng: &mut R) -> Result<Mlp> {
        if spec.dims.len() < 2 || spec.dims.contains(&0) {
            return Err(GapError::InvalidParameter(format!(
                "MLP needs at least two positive dims, got {:?}",
                spec.dims
            )));
        }
        let n_layers = spec.dims.len() - 1;
        let layers = (0..n_layers)
            .map(|i| {
                let (fan_in, fan_out) = (spec.dims[i], spec.dims[i + 1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weight = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..=bound));
                let bias = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..=bound));
                let plain = spec.plain_last && i + 1 == n_layers;
                Dense {
                    weight,
                    bias,
                    activation: if plain { Activation::None } else { spec.activation },
                    batch_norm: (!plain && spec.batch_norm).then(|| BatchNorm::new(fan_out)),
                }
            })
            .collect();
        Ok(Mlp { layers, version: 0 })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Mlp> {
        if layers.is_empty() {
            return Err(GapError::InvalidParameter("MLP needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(GapError::DimensionMismatch(format!(
                    "layer output {} does not feed layer input {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.out_dim()
                || l.batch_norm.as_ref().is_some_and(|bn| bn.gamma.len() != l.out_dim())
            {
                return Err(GapError::DimensionMismatch("bias or norm width".into()));
            }
        }
        Ok(Mlp { layers, version: 0 })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn uses_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| l.batch_norm.is_some())
    }

    /// Incremented on every parameter update; tapes from older versions
    /// are rejected.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Training mode normalizes with batch statistics, inference mode with
    /// the running estimates.
    pub fn forward(&self, x: &Array2<f64>, training: bool) -> Result<(Array2<f64>, Tape)> {
        if x.ncols() != self.input_dim() {
            return Err(GapError::DimensionMismatch(format!(
                "input width {} does not match MLP input {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let mut tapes = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for layer in &self.layers {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            let bn = match &layer.batch_norm {
                None => None,
                Some(bn) => {
                    let (mean, var, batch_stats) = if training {
                        let mean = z.mean_axis(Axis(0)).unwrap();
                        let var = z.var_axis(Axis(0), 0.0);
                        (mean.clone(), var.clone(), Some((mean, var)))
                    } else {
                        (bn.running_mean.clone(), bn.running_var.clone(), None)
                    };
                    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                    let normalized = (&z - &mean) * &inv_std;
                    z = &normalized * &bn.gamma + &bn.beta;
                    Some(BnTape {
                        normalized,
                        inv_std,
                        batch_stats,
                    })
                }
            };
            let act = layer.activation;
            let out = z.mapv(|v| act.apply(v));
            tapes.push(LayerTape {
                input: h,
                bn,
                pre_activation: z,
            });
            h = out;
        }
        Ok((
            h,
            Tape {
                version: self.version,
                training,
                layers: tapes,
            },
        ))
    }

    /// Inference-mode forward pass.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x, false)?.0)
    }

    /// Returns the flat parameter gradient (same layout as
    /// [`Parameterized::params`]) and the gradient with respect to the input.
    pub fn backward(&self, tape: &Tape, grad_output: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        if tape.version != self.version || tape.layers.len() != self.layers.len() {
            return Err(GapError::StaleTape {
                tape: tape.version,
                model: self.version,
            });
        }
        let batch = tape.layers[0].input.nrows();
        if grad_output.dim() != (batch, self.output_dim()) {
            return Err(GapError::DimensionMismatch(format!(
                "upstream gradient {:?} does not match output ({batch}, {})",
                grad_output.dim(),
                self.output_dim()
            )));
        }
        let mut per_layer: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut grad = grad_output.to_owned();
        for (layer, lt) in self.layers.iter().zip(&tape.layers).rev() {
            let act = layer.activation;
            let mut dz = &grad * &lt.pre_activation.mapv(|v| act.grad(v));
            let mut bn_grads: Vec<f64> = Vec::new();
            if let (Some(bn), Some(bt)) = (&layer.batch_norm, &lt.bn) {
                let dgamma = (&dz * &bt.normalized).sum_axis(Axis(0));
                let dbeta = dz.sum_axis(Axis(0));
                let dnorm = &dz * &bn.gamma;
                dz = if bt.batch_stats.is_some() {
                    let b = dz.nrows() as f64;
                    let sum_dn = dnorm.sum_axis(Axis(0));
                    let sum_dn_n = (&dnorm * &bt.normalized).sum_axis(Axis(0));
                    let inner = &dnorm * b - &sum_dn - &(&bt.normalized * &sum_dn_n);
                    inner * &(&bt.inv_std / b)
                } else {
                    dnorm * &bt.inv_std
                };
                bn_grads.extend(dgamma.iter());
                bn_grads.extend(dbeta.iter());
            }
            let dw = lt.input.t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            grad = dz.dot(&layer.weight.t());
            let mut g = Vec::with_capacity(layer.num_params());
            g.extend(dw.iter());
            g.extend(db.iter());
            g.extend(bn_grads);
            per_layer.push(g);
        }
        per_layer.reverse();
        Ok((per_layer.concat(), grad))
    }

    /// Folds the batch statistics of a training-mode tape into the running
    /// estimates.
    pub fn commit_batch_stats(&mut self, tape: &Tape) {
        for (layer, lt) in self.layers.iter_mut().zip(&tape.layers) {
            if let (Some(bn), Some(BnTape { batch_stats: Some((mean, var)), .. })) =
                (layer.batch_norm.as_mut(), lt.bn.as_ref())
            {
                let b = lt.input.nrows() as f64;
                let unbiased = if b > 1.0 { var * (b / (b - 1.0)) } else { var.clone() };
                bn.running_mean = &bn.running_mean * (1.0 - BN_MOMENTUM) + mean * BN_MOMENTUM;
                bn.running_var = &bn.running_var * (1.0 - BN_MOMENTUM) + unbiased * BN_MOMENTUM;
            }
        }
    }
}

impl Parameterized for Mlp {
    fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
            if let Some(bn) = &l.batch_norm {
                out.extend(bn.gamma.iter());
                out.extend(bn.beta.iter());
            }
        }
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
        let mut take = |dst: &mut dyn Iterator<Item = &mut f64>| {
            for x in dst {
                *x = rest[0];
                rest = &rest[1..];
            }
        };
        for l in &mut self.layers {
            take(&mut l.weight.iter_mut());
            take(&mut l.bias.iter_mut());
            if let Some(bn) = &mut l.batch_norm {
                take(&mut bn.gamma.iter_mut());
                take(&mut bn.beta.iter_mut());
            }
        }
        self.version += 1;
        Ok(())
    }

    fn uses_batch_norm(&self) -> bool {
        Mlp::uses_batch_norm(self)
    }
}
