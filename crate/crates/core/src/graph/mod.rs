//! Directed graph datasets.
//!
//! Edge `(u, v)` means `u -> v`, and aggregation at `v` sums over its
//! in-neighbors. The adjacency is therefore stored as the CSR of the
//! transposed matrix: row `v` lists the sources of edges pointing at `v`.

mod io;
mod sbm;

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{GapError, Result};
use crate::rng;

pub use io::{apply_splits_csv, load_binary, load_csv, save_binary, save_csv};
pub use sbm::{generate_sbm, SbmParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Split> {
        match tag {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s.trim() {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// Random 75/10/15 partition, balanced up to rounding.
    pub fn assign_random(num_nodes: usize, seed: u64) -> Vec<Split> {
        let n_train = (num_nodes as f64 * 0.75).round() as usize;
        let n_val = ((num_nodes as f64 * 0.10).round() as usize).min(num_nodes - n_train);
        let mut order: Vec<usize> = (0..num_nodes).collect();
        order.shuffle(&mut rng::rng_from(seed));
        let mut split = vec![Split::Test; num_nodes];
        for (rank, &node) in order.iter().enumerate() {
            if rank < n_train {
                split[node] = Split::Train;
            } else if rank < n_train + n_val {
                split[node] = Split::Val;
            }
        }
        split
    }
}

/// Compressed sparse rows of in-neighbors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    sources: Vec<u32>,
}

impl Csr {
    /// Builds the in-neighbor CSR from directed `(src, dst)` pairs,
    /// dropping duplicates. Callers must have range-checked the ids.
    pub fn from_edges(num_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Csr {
        let mut pairs: Vec<(u32, u32)> = edges
            .into_iter()
            .map(|(s, d)| (d as u32, s as u32))
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        let mut offsets = vec![0usize; num_nodes + 1];
        for &(d, _) in &pairs {
            offsets[d as usize + 1] += 1;
        }
        for v in 0..num_nodes {
            offsets[v + 1] += offsets[v];
        }
        let sources = pairs.into_iter().map(|(_, s)| s).collect();
        Csr { offsets, sources }
    }

    pub fn empty(num_nodes: usize) -> Csr {
        Csr {
            offsets: vec![0; num_nodes + 1],
            sources: Vec::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.sources.len()
    }

    pub fn row(&self, v: usize) -> &[u32] {
        &self.sources[self.offsets[v]..self.offsets[v + 1]]
    }

    /// `(src, dst)` pairs ordered by destination, then source.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |v| self.row(v).iter().map(move |&u| (u as usize, v)))
    }
}

/// Read access to in-neighborhoods, shared by full graphs and
/// degree-bounded views.
pub trait InNeighbors {
    fn num_nodes(&self) -> usize;
    fn in_neighbors(&self, v: usize) -> &[u32];

    fn num_edges(&self) -> usize {
        (0..self.num_nodes()).map(|v| self.in_neighbors(v).len()).sum()
    }

    fn max_in_degree(&self) -> usize {
        (0..self.num_nodes())
            .map(|v| self.in_neighbors(v).len())
            .max()
            .unwrap_or(0)
    }

    /// Number of rows each node appears in, i.e. its out-degree.
    fn out_degrees(&self) -> Vec<usize> {
        let mut out = vec![0; self.num_nodes()];
        for v in 0..self.num_nodes() {
            for &u in self.in_neighbors(v) {
                out[u as usize] += 1;
            }
        }
        out
    }
}

impl InNeighbors for Csr {
    fn num_nodes(&self) -> usize {
        Csr::num_nodes(self)
    }

    fn in_neighbors(&self, v: usize) -> &[u32] {
        self.row(v)
    }

    fn num_edges(&self) -> usize {
        Csr::num_edges(self)
    }
}

/// Immutable node-classification dataset over a directed graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    num_classes: usize,
    adjacency: Csr,
    features: Array2<f32>,
    labels: Vec<usize>,
    split: Vec<Split>,
}

impl GraphDataset {
    pub fn new(
        features: Array2<f32>,
        labels: Vec<usize>,
        num_classes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        split: Vec<Split>,
    ) -> Result<GraphDataset> {
        let n = features.nrows();
        let edges: Vec<(usize, usize)> = edges.into_iter().collect();
        for &(s, d) in &edges {
            let bad = if s >= n { s } else { d };
            if s >= n || d >= n {
                return Err(GapError::UnknownNode {
                    id: bad as u64,
                    num_nodes: n,
                });
            }
        }
        Self::from_parts(num_classes, Csr::from_edges(n, edges), features, labels, split)
    }

    pub(crate) fn from_parts(
        num_classes: usize,
        adjacency: Csr,
        features: Array2<f32>,
        labels: Vec<usize>,
        split: Vec<Split>,
    ) -> Result<GraphDataset> {
        let n = features.nrows();
        if labels.len() != n || split.len() != n || adjacency.num_nodes() != n {
            return Err(GapError::InvalidDataset(format!(
                "inconsistent lengths: {n} feature rows, {} labels, {} split tags, {} adjacency rows",
                labels.len(),
                split.len(),
                adjacency.num_nodes()
            )));
        }
        if let Some((&label, _)) = labels.iter().zip(0..).find(|(&l, _)| l >= num_classes) {
            return Err(GapError::LabelOutOfRange { label, num_classes });
        }
        for ((node, feature), value) in features.indexed_iter() {
            if !value.is_finite() {
                return Err(GapError::NonFiniteFeature { node, feature });
            }
        }
        Ok(GraphDataset {
            num_classes,
            adjacency,
            features,
            labels,
            split,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.num_edges()
    }

    pub fn adjacency(&self) -> &Csr {
        &self.adjacency
    }

    pub fn features(&self) -> &Array2<f32> {
        &self.features
    }

    pub fn features_f64(&self) -> Array2<f64> {
        self.features.mapv(f64::from)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    pub fn nodes_in(&self, which: Split) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&v| self.split[v] == which)
            .collect()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency.edges()
    }

    pub fn with_split(&self, split: Vec<Split>) -> Result<GraphDataset> {
        Self::from_parts(
            self.num_classes,
            self.adjacency.clone(),
            self.features.clone(),
            self.labels.clone(),
            split,
        )
    }

    /// Same nodes with the given adjacency, e.g. materialising a
    /// degree-bounded view.
    pub fn with_adjacency(&self, adjacency: Csr) -> Result<GraphDataset> {
        Self::from_parts(
            self.num_classes,
            adjacency,
            self.features.clone(),
            self.labels.clone(),
            self.split.clone(),
        )
    }

    /// Subgraph induced on `nodes`; node `nodes[i]` becomes node `i`.
    pub fn induced_subgraph(&self, nodes: &[usize], split: Vec<Split>) -> Result<GraphDataset> {
        let mut position = vec![usize::MAX; self.num_nodes()];
        for (i, &v) in nodes.iter().enumerate() {
            if v >= self.num_nodes() {
                return Err(GapError::UnknownNode {
                    id: v as u64,
                    num_nodes: self.num_nodes(),
                });
            }
            position[v] = i;
        }
        let edges: Vec<(usize, usize)> = nodes
            .iter()
            .enumerate()
            .flat_map(|(i, &v)| {
                let position = &position;
                self.adjacency
                    .row(v)
                    .iter()
                    .filter_map(move |&u| {
                        let p = position[u as usize];
                        (p != usize::MAX).then_some((p, i))
                    })
            })
            .collect();
        let features = self.features.select(ndarray::Axis(0), nodes);
        let labels = nodes.iter().map(|&v| self.labels[v]).collect();
        Self::from_parts(
            self.num_classes,
            Csr::from_edges(nodes.len(), edges),
            features,
            labels,
            split,
        )
    }
}

impl InNeighbors for GraphDataset {
    fn num_nodes(&self) -> usize {
        GraphDataset::num_nodes(self)
    }

    fn in_neighbors(&self, v: usize) -> &[u32] {
        self.adjacency.row(v)
    }

    fn num_edges(&self) -> usize {
        self.adjacency.num_edges()
    }
}

/// In-degree of every node.
pub fn in_degrees<G: InNeighbors + ?Sized>(g: &G) -> Vec<usize> {
    (0..g.num_nodes()).map(|v| g.in_neighbors(v).len()).collect()
}

/// A graph whose in-degrees are capped by neighbor sampling.
#[derive(Debug, Clone)]
pub struct DegreeBoundedView<'a> {
    base: &'a GraphDataset,
    max_degree: usize,
    sampler_seed: u64,
    adjacency: Csr,
}

impl<'a> DegreeBoundedView<'a> {
    pub fn base(&self) -> &'a GraphDataset {
        self.base
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn sampler_seed(&self) -> u64 {
        self.sampler_seed
    }

    pub fn adjacency(&self) -> &Csr {
        &self.adjacency
    }

    /// Applies the sampler again to this view's own edges.
    pub fn bound_again(&self, max_degree: usize, seed: u64) -> Result<DegreeBoundedView<'a>> {
        Ok(DegreeBoundedView {
            base: self.base,
            max_degree,
            sampler_seed: seed,
            adjacency: sample_in_neighbors(&self.adjacency, max_degree, seed)?,
        })
    }

    /// Additionally keeps a uniform sample of at most `max_degree` outgoing
    /// edges per node, so that removing a node alters at most `max_degree`
    /// aggregation rows. In-degrees only shrink.
    pub fn with_out_degree_bound(self, seed: u64) -> Result<DegreeBoundedView<'a>> {
        let adjacency = sample_out_edges(&self.adjacency, self.max_degree, seed)?;
        Ok(DegreeBoundedView { adjacency, ..self })
    }

    pub fn to_dataset(&self) -> Result<GraphDataset> {
        self.base.with_adjacency(self.adjacency.clone())
    }
}

impl InNeighbors for DegreeBoundedView<'_> {
    fn num_nodes(&self) -> usize {
        self.adjacency.num_nodes()
    }

    fn in_neighbors(&self, v: usize) -> &[u32] {
        self.adjacency.row(v)
    }

    fn num_edges(&self) -> usize {
        self.adjacency.num_edges()
    }
}

/// Keeps a uniform sample of at most `max_degree` in-neighbors per node.
pub fn bound_degree(g: &GraphDataset, max_degree: usize, seed: u64) -> Result<DegreeBoundedView<'_>> {
    Ok(DegreeBoundedView {
        base: g,
        max_degree,
        sampler_seed: seed,
        adjacency: sample_in_neighbors(&g.adjacency, max_degree, seed)?,
    })
}

/// [`bound_degree`] followed by out-edge sampling: every in-degree and
/// every out-degree of the view is at most `max_degree`.
pub fn bound_in_out_degree(g: &GraphDataset, max_degree: usize, seed: u64) -> Result<DegreeBoundedView<'_>> {
    bound_degree(g, max_degree, rng::derive_seed(seed, 0))?.with_out_degree_bound(rng::derive_seed(seed, 1))
}

fn sample_out_edges(csr: &Csr, max_degree: usize, seed: u64) -> Result<Csr> {
    if max_degree == 0 {
        return Err(GapError::InvalidParameter(
            "max_degree must be at least 1".into(),
        ));
    }
    let n = csr.num_nodes();
    let mut targets: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (u, v) in csr.edges() {
        targets[u].push(v);
    }
    let mut kept = Vec::with_capacity(csr.num_edges());
    for (u, outs) in targets.iter().enumerate() {
        if outs.len() <= max_degree {
            kept.extend(outs.iter().map(|&v| (u, v)));
        } else {
            let mut rng = rng::derived_rng(seed, u as u64);
            kept.extend(index::sample(&mut rng, outs.len(), max_degree).into_iter().map(|i| (u, outs[i])));
        }
    }
    Ok(Csr::from_edges(n, kept))
}

fn sample_in_neighbors(csr: &Csr, max_degree: usize, seed: u64) -> Result<Csr> {
    if max_degree == 0 {
        return Err(GapError::InvalidParameter(
            "max_degree must be at least 1".into(),
        ));
    }
    let n = csr.num_nodes();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut sources = Vec::with_capacity(csr.num_edges().min(n * max_degree));
    offsets.push(0);
    for v in 0..n {
        let row = csr.row(v);
        if row.len() <= max_degree {
            sources.extend_from_slice(row);
        } else {
            let mut rng = rng::derived_rng(seed, v as u64);
            let mut picked: Vec<u32> = index::sample(&mut rng, row.len(), max_degree)
                .into_iter()
                .map(|i| row[i])
                .collect();
            picked.sort_unstable();
            sources.extend(picked);
        }
        offsets.push(sources.len());
    }
    Ok(Csr { offsets, sources })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny(n: usize, edges: &[(usize, usize)]) -> GraphDataset {
        GraphDataset::new(
            Array2::zeros((n, 2)),
            vec![0; n],
            2,
            edges.iter().copied(),
            vec![Split::Train; n],
        )
        .unwrap()
    }

    #[test]
    fn out_edges_are_capped_too() {
        // node 0 feeds ten others, node 9 is fed by everyone
        let mut edges: Vec<(usize, usize)> = (1..11).map(|v| (0, v)).collect();
        edges.extend((1..11).filter(|&u| u != 9).map(|u| (u, 9)));
        let g = tiny(11, &edges);
        let view = bound_in_out_degree(&g, 3, 5).unwrap();
        assert!(view.out_degrees().iter().all(|&d| d <= 3));
        assert!(view.max_in_degree() <= 3);
        let original: std::collections::HashSet<_> = g.edges().collect();
        assert!(view.adjacency().edges().all(|e| original.contains(&e)));
        assert_eq!(view.out_degrees()[0], 3);
        let again = bound_in_out_degree(&g, 3, 5).unwrap();
        assert_eq!(again.adjacency(), view.adjacency());
    }

    #[test]
    fn in_degrees_of_small_graph() {
        let g = tiny(3, &[(0, 1), (2, 1)]);
        assert_eq!(in_degrees(&g), vec![0, 2, 0]);
        assert_eq!(in_degrees(&tiny(4, &[])), vec![0; 4]);
    }

    #[test]
    fn duplicate_edges_collapse() {
        let g = tiny(2, &[(0, 1), (0, 1)]);
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn self_loops_are_kept() {
        let g = tiny(2, &[(1, 1)]);
        assert_eq!(g.in_neighbors(1), &[1]);
    }

    #[test]
    fn unknown_node_rejected() {
        let err = GraphDataset::new(
            Array2::zeros((3, 1)),
            vec![0; 3],
            1,
            [(0, 99)],
            vec![Split::Train; 3],
        )
        .unwrap_err();
        assert!(err.to_string().contains("unknown node id"));
    }

    #[test]
    fn bound_is_noop_under_limit() {
        let g = tiny(4, &[(0, 1), (2, 1), (3, 1), (1, 0)]);
        let view = bound_degree(&g, 5, 1).unwrap();
        assert_eq!(view.adjacency(), g.adjacency());
    }

    #[test]
    fn star_hub_is_capped() {
        let spokes: Vec<(usize, usize)> = (1..=10).map(|s| (s, 0)).collect();
        let g = tiny(11, &spokes);
        let view = bound_degree(&g, 4, 9).unwrap();
        assert_eq!(view.in_neighbors(0).len(), 4);
        assert!(view.in_neighbors(0).iter().all(|u| g.in_neighbors(0).contains(u)));
        let again = bound_degree(&g, 4, 9).unwrap();
        assert_eq!(view.adjacency(), again.adjacency());
    }

    #[test]
    fn zero_bound_rejected() {
        let g = tiny(2, &[(0, 1)]);
        assert!(bound_degree(&g, 0, 0).is_err());
    }

    #[test]
    fn split_proportions() {
        for n in [1usize, 7, 20, 101, 1000] {
            let s = Split::assign_random(n, 3);
            let count = |w| s.iter().filter(|&&x| x == w).count() as f64;
            assert!((count(Split::Train) - 0.75 * n as f64).abs() <= 1.0);
            assert!((count(Split::Val) - 0.10 * n as f64).abs() <= 1.0);
            assert!((count(Split::Test) - 0.15 * n as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn induced_subgraph_relabels() {
        let g = tiny(4, &[(0, 1), (1, 2), (3, 2), (2, 0)]);
        let sub = g.induced_subgraph(&[2, 1], vec![Split::Train; 2]).unwrap();
        // 1 -> 2 becomes 1 -> 0
        assert_eq!(sub.edges().collect::<Vec<_>>(), vec![(1, 0)]);
        let all = g.induced_subgraph(&[0, 1, 2, 3], g.split().to_vec()).unwrap();
        assert_eq!(all, g);
    }

    fn edge_list() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (1usize..25).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..80)))
    }

    proptest! {
        #[test]
        fn csr_round_trip_preserves_edge_set((n, edges) in edge_list()) {
            let csr = Csr::from_edges(n, edges.iter().copied());
            let mut expected = edges.clone();
            expected.sort_by_key(|&(s, d)| (d, s));
            expected.dedup();
            prop_assert_eq!(csr.edges().collect::<Vec<_>>(), expected);
            prop_assert_eq!(in_degrees(&csr).iter().sum::<usize>(), csr.num_edges());
        }

        #[test]
        fn bound_degree_is_subset_and_idempotent((n, edges) in edge_list(), d in 1usize..6, seed in any::<u64>()) {
            let g = tiny(n, &edges);
            let view = bound_degree(&g, d, seed).unwrap();
            for v in 0..n {
                let kept = view.in_neighbors(v);
                let orig = g.in_neighbors(v);
                prop_assert_eq!(kept.len(), orig.len().min(d));
                prop_assert!(kept.iter().all(|u| orig.contains(u)));
            }
            let twice = view.bound_again(d, seed ^ 1).unwrap();
            prop_assert_eq!(twice.adjacency(), view.adjacency());
        }
    }
}
