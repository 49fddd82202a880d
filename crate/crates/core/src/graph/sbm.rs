use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{Csr, GraphDataset, Split};
use crate::error::{GapError, Result};
use crate::rng;

/// Directed stochastic block model with Gaussian class-centroid features.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SbmParams {
    pub num_nodes: usize,
    pub num_classes: usize,
    /// Probability of an edge between two nodes of the same class.
    pub p_in: f64,
    /// Probability of an edge between nodes of different classes.
    pub p_out: f64,
    pub feature_dim: usize,
    /// Scale of the unit-norm class centroid added to unit Gaussian noise.
    pub feature_signal: f64,
    pub seed: u64,
}

const LABEL_STREAM: u64 = 0;
const CENTROID_STREAM: u64 = 1;
const FEATURE_STREAM: u64 = 2;
const SPLIT_STREAM: u64 = 3;
const EDGE_STREAM: u64 = 4;

pub fn generate_sbm(p: &SbmParams) -> Result<GraphDataset> {
    let prob_ok = |x: f64| (0.0..=1.0).contains(&x);
    if !prob_ok(p.p_in) || !prob_ok(p.p_out) || p.p_out > p.p_in {
        return Err(GapError::InvalidParameter(format!(
            "need 0 <= p_out <= p_in <= 1, got p_in={}, p_out={}",
            p.p_in, p.p_out
        )));
    }
    if p.num_classes < 2 {
        return Err(GapError::InvalidParameter("num_classes must be >= 2".into()));
    }
    if p.num_nodes == 0 {
        return Err(GapError::InvalidParameter("num_nodes must be >= 1".into()));
    }
    let n = p.num_nodes;
    let c = p.num_classes;

    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    labels.shuffle(&mut rng::derived_rng(p.seed, LABEL_STREAM));

    let mut crng = rng::derived_rng(p.seed, CENTROID_STREAM);
    let mut centroids = Array2::<f64>::zeros((c, p.feature_dim));
    for mut row in centroids.rows_mut() {
        row.mapv_inplace(|_| crng.sample(StandardNormal));
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }

    let mut frng = rng::derived_rng(p.seed, FEATURE_STREAM);
    let mut features = Array2::<f32>::zeros((n, p.feature_dim));
    for (v, mut row) in features.rows_mut().into_iter().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            let noise: f64 = frng.sample(StandardNormal);
            *x = (p.feature_signal * centroids[[labels[v], j]] + noise) as f32;
        }
    }

    // One stream per destination keeps generation parallel and deterministic.
    let rows: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|v| {
            let mut erng = rng::rng_from(rng::derive_seed(
                rng::derive_seed(p.seed, EDGE_STREAM),
                v as u64,
            ));
            (0..n)
                .filter(|&u| {
                    if u == v {
                        return false;
                    }
                    let prob = if labels[u] == labels[v] { p.p_in } else { p.p_out };
                    erng.random::<f64>() < prob
                })
                .collect()
        })
        .collect();
    let edges = rows
        .into_iter()
        .enumerate()
        .flat_map(|(v, srcs)| srcs.into_iter().map(move |u| (u, v)));

    GraphDataset::from_parts(
        c,
        Csr::from_edges(n, edges),
        features,
        labels,
        Split::assign_random(n, rng::derive_seed(p.seed, SPLIT_STREAM)),
    )
}
