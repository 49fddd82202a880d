//! Node membership inference with a shadow model ("train on subgraph, test
//! on full graph").
//!
//! A shadow graph is sampled from the target's own dataset, half of its
//! nodes train a shadow model with the target's configuration, and an MLP
//! learns to tell members from non-members by their sorted posteriors. The
//! attack is then scored by AUC on the target's train versus test nodes.

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GapError, Result};
use crate::gap::{full_pipeline, GapConfig, GapModel};
use crate::graph::{GraphDataset, Split};
use crate::neural::{adam_step, softmax, softmax_cross_entropy, AdamConfig, AdamState, Activation, Mlp, MlpSpec, Parameterized};
use crate::rng::{derive_seed, derived_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub shadow_nodes_per_class: usize,
    pub hidden_dim: usize,
    /// Number of weight layers of the attack MLP.
    pub layers: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> AttackConfig {
        AttackConfig {
            shadow_nodes_per_class: 1000,
            hidden_dim: 64,
            layers: 3,
            epochs: 300,
            learning_rate: 0.01,
            repetitions: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shadow {
    /// Shadow members carry `Split::Train`, non-members `Split::Test`.
    pub graph: GraphDataset,
    /// Original ids of the shadow nodes, ascending.
    pub nodes: Vec<usize>,
    pub membership: Vec<bool>,
}

/// Samples `shadow_nodes_per_class` nodes of every class and splits them
/// evenly into members and non-members.
pub fn build_shadow(g: &GraphDataset, cfg: &AttackConfig, seed: u64) -> Result<Shadow> {
    let per_class = cfg.shadow_nodes_per_class;
    if per_class == 0 {
        return Err(GapError::InvalidParameter("shadow_nodes_per_class must be positive".into()));
    }
    let mut rng = derived_rng(seed, 0);
    let mut nodes = Vec::with_capacity(per_class * g.num_classes());
    for c in 0..g.num_classes() {
        let of_class: Vec<usize> = (0..g.num_nodes()).filter(|&v| g.labels()[v] == c).collect();
        if of_class.len() < per_class {
            return Err(GapError::Audit(format!(
                "class {c} has {} nodes, {per_class} requested for the shadow graph",
                of_class.len()
            )));
        }
        nodes.extend(of_class.choose_multiple(&mut rng, per_class).copied());
    }
    nodes.sort_unstable();
    let mut order: Vec<usize> = (0..nodes.len()).collect();
    order.shuffle(&mut rng);
    let mut membership = vec![false; nodes.len()];
    for &i in &order[..nodes.len() / 2] {
        membership[i] = true;
    }
    let split = membership
        .iter()
        .map(|&m| if m { Split::Train } else { Split::Test })
        .collect();
    Ok(Shadow {
        graph: g.induced_subgraph(&nodes, split)?,
        nodes,
        membership,
    })
}

/// Posterior rows sorted in descending order.
pub fn attack_features(posteriors: &Array2<f64>) -> Array2<f64> {
    let mut out = posteriors.to_owned();
    for mut row in out.rows_mut() {
        let mut v = row.to_vec();
        v.sort_by(|a, b| b.total_cmp(a));
        row.assign(&ndarray::Array1::from(v));
    }
    out
}

pub fn attack_spec(cfg: &AttackConfig, num_classes: usize) -> MlpSpec {
    let mut dims = vec![num_classes];
    dims.extend(std::iter::repeat_n(cfg.hidden_dim, cfg.layers.saturating_sub(1)));
    dims.push(2);
    MlpSpec {
        dims,
        activation: Activation::Selu,
        plain_last: true,
        batch_norm: false,
    }
}

/// Full-batch Adam on sorted posteriors with a two-class softmax output.
pub fn train_attack(posteriors: &Array2<f64>, membership: &[bool], cfg: &AttackConfig, seed: u64) -> Result<Mlp> {
    if posteriors.nrows() != membership.len() {
        return Err(GapError::DimensionMismatch(format!(
            "{} posterior rows for {} membership labels",
            posteriors.nrows(),
            membership.len()
        )));
    }
    if membership.iter().all(|&m| m) || membership.iter().all(|&m| !m) {
        return Err(GapError::Audit("attack training needs both members and non-members".into()));
    }
    if cfg.layers == 0 {
        return Err(GapError::InvalidParameter("attack MLP needs at least one layer".into()));
    }
    let x = attack_features(posteriors);
    let y: Vec<usize> = membership.iter().map(|&m| m as usize).collect();
    let mut mlp = Mlp::new(&attack_spec(cfg, x.ncols()), &mut derived_rng(seed, 0))?;
    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(mlp.num_params());
    for _ in 0..cfg.epochs {
        let (logits, tape) = mlp.forward(&x, true)?;
        let (_, grad) = softmax_cross_entropy(&logits, &y)?;
        let (g, _) = mlp.backward(&tape, &grad)?;
        let mut p = mlp.params();
        adam_step(&mut p, &g, &mut state, &adam)?;
        mlp.set_params(&p)?;
    }
    Ok(mlp)
}

/// Membership score of every posterior row: the attack's member probability.
pub fn attack_scores(attack: &Mlp, posteriors: &Array2<f64>) -> Result<Vec<f64>> {
    let p = softmax(&attack.predict(&attack_features(posteriors))?);
    Ok(p.column(1).to_vec())
}

/// Rank-based AUC; ties count one half.
pub fn auc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(GapError::Audit("AUC needs both positive and negative scores".into()));
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let mean_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += mean_rank * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let (np, nn) = (positive.len() as f64, negative.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// AUC of `attack` against `target` on the given member and non-member
/// nodes of the target graph.
pub fn attack_auc(target: &GapModel, attack: &Mlp, members: &[usize], nonmembers: &[usize]) -> Result<f64> {
    if members.iter().any(|m| nonmembers.contains(m)) {
        return Err(GapError::Audit("member and non-member sets overlap".into()));
    }
    if members.is_empty() || nonmembers.is_empty() {
        return Err(GapError::Audit("empty evaluation set".into()));
    }
    let pos = attack_scores(attack, &target.infer_transductive(members)?.posteriors)?;
    let neg = attack_scores(attack, &target.infer_transductive(nonmembers)?.posteriors)?;
    auc(&pos, &neg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub aucs: Vec<f64>,
    pub mean_auc: f64,
    /// Attack accuracy on its own shadow training data, per repetition.
    pub shadow_accuracy: Vec<f64>,
}

/// One attack repetition: shadow sampling and training, attack training,
/// and evaluation on equally many target members and non-members outside
/// the shadow set.
pub fn run_attack_once(
    g: &GraphDataset,
    target: &GapModel,
    cfg: &AttackConfig,
    run: u64,
) -> Result<(f64, f64)> {
    let seed = derive_seed(cfg.seed, run);
    let shadow = build_shadow(g, cfg, derive_seed(seed, 0))?;
    let shadow_cfg = GapConfig {
        seed: derive_seed(seed, 1),
        ..target.config().clone()
    };
    let shadow_model = full_pipeline(&shadow.graph, &shadow_cfg)?.model;
    let all: Vec<usize> = (0..shadow.graph.num_nodes()).collect();
    let posteriors = shadow_model.infer_transductive(&all)?.posteriors;
    let attack = train_attack(&posteriors, &shadow.membership, cfg, derive_seed(seed, 2))?;

    let fitted = attack_scores(&attack, &posteriors)?;
    let hits = fitted
        .iter()
        .zip(&shadow.membership)
        .filter(|(s, &m)| (**s > 0.5) == m)
        .count();
    let shadow_accuracy = hits as f64 / fitted.len() as f64;

    let outside = |s: Split| -> Vec<usize> {
        g.nodes_in(s)
            .into_iter()
            .filter(|v| shadow.nodes.binary_search(v).is_err())
            .collect()
    };
    let (train, test) = (outside(Split::Train), outside(Split::Test));
    let m = train.len().min(test.len());
    if m == 0 {
        return Err(GapError::Audit(
            "no target train or test nodes left outside the shadow graph".into(),
        ));
    }
    let mut rng = derived_rng(seed, 3);
    let members: Vec<usize> = train.choose_multiple(&mut rng, m).copied().collect();
    let nonmembers: Vec<usize> = test.choose_multiple(&mut rng, m).copied().collect();
    Ok((attack_auc(target, &attack, &members, &nonmembers)?, shadow_accuracy))
}

/// Independent repetitions of [`run_attack_once`], run in parallel.
pub fn run_attack(g: &GraphDataset, target: &GapModel, cfg: &AttackConfig) -> Result<AttackReport> {
    if cfg.repetitions == 0 {
        return Err(GapError::InvalidParameter("repetitions must be positive".into()));
    }
    let runs: Vec<(f64, f64)> = (0..cfg.repetitions as u64)
        .into_par_iter()
        .map(|r| run_attack_once(g, target, cfg, r))
        .collect::<Result<_>>()?;
    let aucs: Vec<f64> = runs.iter().map(|r| r.0).collect();
    Ok(AttackReport {
        mean_auc: aucs.iter().sum::<f64>() / aucs.len() as f64,
        shadow_accuracy: runs.iter().map(|r| r.1).collect(),
        aucs,
    })
}
