//! Undirected graphs, their normalized adjacency, link splits and the
//! synthetic community benchmark.

mod io;
mod split;
mod synth;

pub use io::{load_edge_list, load_features, read_edge_list, LoadStats};
pub use split::{make_splits, read_split, write_split, SplitSpec};
pub use synth::{generate_synthetic, edge_probability, SyntheticSpec};

use crate::error::{Error, Result};
use crate::tensor::{SparseMatrix, Tensor};

/// Undirected, unweighted graph with optional dense node features.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    adjacency: SparseMatrix,
    features: Option<Tensor>,
}

impl Graph {
    /// Builds a graph from node pairs. Reversed duplicates collapse into one
    /// undirected edge and self-loops are dropped.
    pub fn from_edges(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (u, v) in edges {
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::Usage(format!(
                    "edge ({u}, {v}) out of range for {n_nodes} nodes"
                )));
            }
            if u != v {
                pairs.push((u.min(v), u.max(v)));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        let adjacency = SparseMatrix::from_triplets(
            n_nodes,
            n_nodes,
            pairs.iter().flat_map(|&(u, v)| [(u, v, 1.0), (v, u, 1.0)]),
        )?;
        Ok(Self {
            adjacency,
            features: None,
        })
    }

    pub fn with_features(mut self, features: Tensor) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != self.n_nodes() {
            return Err(Error::shape(
                "Graph::with_features",
                features.shape(),
                &[self.n_nodes(), 0],
            ));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn without_features(mut self) -> Self {
        self.features = None;
        self
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn features(&self) -> Option<&Tensor> {
        self.features.as_ref()
    }

    /// Feature dimension, zero when no features are attached.
    pub fn d_features(&self) -> usize {
        self.features.as_ref().map_or(0, |f| f.cols())
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency.contains(u, v)
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adjacency.row_nnz(u)
    }

    /// Undirected edges as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n_nodes())
            .flat_map(|u| self.adjacency.row(u).filter(move |&(v, _)| v > u).map(move |(v, _)| (u, v)))
            .collect()
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` where `D̃` holds the degrees of `A + I`.
pub fn normalize_adjacency(adjacency: &SparseMatrix) -> SparseMatrix {
    let n = adjacency.rows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|u| {
            let deg = adjacency.row(u).map(|(_, v)| v).sum::<f64>() + 1.0;
            1.0 / deg.sqrt()
        })
        .collect();
    let trip = (0..n).flat_map(|u| {
        let inv_sqrt = &inv_sqrt;
        adjacency
            .row(u)
            .map(move |(v, w)| (u, v, w * inv_sqrt[u] * inv_sqrt[v]))
            .chain(std::iter::once((u, u, inv_sqrt[u] * inv_sqrt[u])))
    });
    SparseMatrix::from_triplets(n, n, trip).expect("indices come from a square matrix")
}
