//! Private multi-hop aggregation.
//!
//! Starting from row-normalized encoder features, each hop sums the
//! previous hop's rows over in-neighbors, adds isotropic Gaussian noise and
//! row-normalizes again. Unit rows keep the sum's sensitivity at 1 per hop:
//! removing an edge changes one output row by one unit vector, removing a
//! node changes at most `D` rows by one unit vector each.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{read_file, write_file, Reader, Writer};
use crate::error::{GapError, Result};
use crate::graph::InNeighbors;
use crate::privacy::{PrivacyLevel, RdpCurve};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmaConfig {
    pub hops: usize,
    pub sigma: f64,
    pub level: PrivacyLevel,
    /// Required at node level.
    pub max_degree: Option<usize>,
    pub seed: u64,
}

/// The `K + 1` normalized matrices produced by one aggregation run.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationCache {
    matrices: Vec<Array2<f64>>,
}

impl AggregationCache {
    pub fn new(matrices: Vec<Array2<f64>>) -> Result<AggregationCache> {
        let first = matrices
            .first()
            .ok_or_else(|| GapError::InvalidParameter("cache needs at least one matrix".into()))?;
        let shape = first.dim();
        if matrices.iter().any(|m| m.dim() != shape) {
            return Err(GapError::DimensionMismatch(
                "cache matrices must share one shape".into(),
            ));
        }
        Ok(AggregationCache { matrices })
    }

    pub fn hops(&self) -> usize {
        self.matrices.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn width(&self) -> usize {
        self.matrices[0].ncols()
    }

    pub fn matrices(&self) -> &[Array2<f64>] {
        &self.matrices
    }

    /// Rows `nodes` of every hop.
    pub fn select(&self, nodes: &[usize]) -> Result<Vec<Array2<f64>>> {
        if let Some(&bad) = nodes.iter().find(|&&v| v >= self.num_nodes()) {
            return Err(GapError::UnknownNode {
                id: bad as u64,
                num_nodes: self.num_nodes(),
            });
        }
        Ok(self.matrices.iter().map(|m| m.select(Axis(0), nodes)).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(CACHE_MAGIC, CACHE_VERSION);
        w.u32(self.matrices.len() as u32);
        w.u64(self.num_nodes() as u64);
        w.u32(self.width() as u32);
        for m in &self.matrices {
            w.f64s(m.iter().copied());
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<AggregationCache> {
        let mut r = Reader::open(bytes, CACHE_MAGIC, CACHE_VERSION)?;
        let count = r.u32("header")? as usize;
        let n = r.u64("header")? as usize;
        let d = r.u32("header")? as usize;
        if count == 0 {
            return Err(GapError::InvalidParameter("cache has no matrices".into()));
        }
        if count.saturating_mul(n).saturating_mul(d).saturating_mul(8) > r.remaining() {
            return Err(GapError::Truncated { section: "cache matrices" });
        }
        let mut matrices = Vec::with_capacity(count);
        for _ in 0..count {
            let data = r.f64s(n * d, "cache matrices")?;
            matrices.push(Array2::from_shape_vec((n, d), data).expect("shape checked"));
        }
        AggregationCache::new(matrices)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<AggregationCache> {
        AggregationCache::from_bytes(&read_file(path)?)
    }
}

const CACHE_MAGIC: [u8; 4] = *b"GAPC";
const CACHE_VERSION: u16 = 1;

/// Scales every nonzero row to unit L2 norm; zero rows stay zero.
pub fn row_normalize(m: &Array2<f64>) -> Result<Array2<f64>> {
    if let Some(((r, c), _)) = m.indexed_iter().find(|(_, x)| !x.is_finite()) {
        return Err(GapError::InvalidParameter(format!(
            "non-finite entry at ({r}, {c})"
        )));
    }
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
    Ok(out)
}

/// Sum aggregation `Aᵀ X`: row `v` is the sum of rows of its in-neighbors.
pub fn aggregate<G>(x: &Array2<f64>, g: &G) -> Result<Array2<f64>>
where
    G: InNeighbors + Sync + ?Sized,
{
    let n = g.num_nodes();
    if x.nrows() != n {
        return Err(GapError::DimensionMismatch(format!(
            "feature matrix has {} rows, graph has {n} nodes",
            x.nrows()
        )));
    }
    let d = x.ncols();
    let mut out = Array2::<f64>::zeros((n, d));
    if d == 0 {
        return Ok(out);
    }
    out.as_slice_mut()
        .expect("fresh array is contiguous")
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(v, row)| {
            for &u in g.in_neighbors(v) {
                for (o, &xi) in row.iter_mut().zip(x.row(u as usize)) {
                    *o += xi;
                }
            }
        });
    Ok(out)
}

/// Adds i.i.d. `N(0, σ²)` noise to every entry. Row `r` draws from its own
/// stream derived from `seed`, so the result is schedule independent.
pub fn perturb(m: &Array2<f64>, sigma: f64, seed: u64) -> Array2<f64> {
    let mut out = m.as_standard_layout().into_owned();
    if sigma == 0.0 || m.ncols() == 0 {
        return out;
    }
    let d = m.ncols();
    out.as_slice_mut()
        .expect("standard layout is contiguous")
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(r, row)| {
            let mut rng = rng::derived_rng(seed, r as u64);
            for x in row {
                let z: f64 = rng.sample(StandardNormal);
                *x += sigma * z;
            }
        });
    out
}

/// Runs `K` rounds of aggregate, perturb, normalize on row-normalized `x0`.
pub fn run_pma<G>(g: &G, x0: &Array2<f64>, cfg: &PmaConfig) -> Result<AggregationCache>
where
    G: InNeighbors + Sync + ?Sized,
{
    if !(cfg.sigma >= 0.0) {
        return Err(GapError::InvalidParameter(format!(
            "sigma must be non-negative, got {}",
            cfg.sigma
        )));
    }
    let mut matrices = vec![row_normalize(x0)?];
    if cfg.hops == 0 {
        return AggregationCache::new(matrices);
    }
    if cfg.level == PrivacyLevel::Node {
        let max_degree = cfg.max_degree.ok_or_else(|| {
            GapError::InvalidParameter("node-level aggregation needs a degree bound".into())
        })?;
        if let Some(node) = (0..g.num_nodes()).find(|&v| g.in_neighbors(v).len() > max_degree) {
            return Err(GapError::DegreeBoundViolated {
                node,
                degree: g.in_neighbors(node).len(),
                max_degree,
            });
        }
        let out = g.out_degrees();
        if let Some(node) = (0..out.len()).find(|&u| out[u] > max_degree) {
            return Err(GapError::DegreeBoundViolated {
                node,
                degree: out[node],
                max_degree,
            });
        }
    }
    for k in 1..=cfg.hops {
        let summed = aggregate(&matrices[k - 1], g)?;
        let noisy = perturb(&summed, cfg.sigma, rng::derive_seed(cfg.seed, k as u64));
        matrices.push(row_normalize(&noisy)?);
    }
    AggregationCache::new(matrices)
}

/// RDP cost of [`run_pma`]: `Kα/(2σ²)` at edge level, `DKα/(2σ²)` at node
/// level.
pub fn pma_rdp_curve(cfg: &PmaConfig) -> Result<RdpCurve> {
    if cfg.hops == 0 || cfg.level == PrivacyLevel::None {
        return Ok(RdpCurve::zero());
    }
    if !(cfg.sigma > 0.0) {
        return Err(GapError::InvalidParameter(
            "aggregation with zero noise has unbounded privacy cost".into(),
        ));
    }
    let fan_out = match cfg.level {
        PrivacyLevel::Node => cfg.max_degree.ok_or_else(|| {
            GapError::InvalidParameter("node-level accounting needs a degree bound".into())
        })? as f64,
        _ => 1.0,
    };
    Ok(RdpCurve::linear(
        fan_out * cfg.hops as f64 / (2.0 * cfg.sigma * cfg.sigma),
    ))
}
