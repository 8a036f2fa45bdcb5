use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Graph;
use crate::error::{Error, Result};
use crate::special::sigmoid;
use crate::tensor::Tensor;

/// Parameters of the block-structured synthetic benchmark.
///
/// Node `n` belongs to community `⌊n·K/N⌋` and, with probability
/// `overlap_prob`, to one more community drawn uniformly from the rest.
/// Each pair links with probability `σ(sharpness · ⟨b_n, b_m⟩ + offset)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_nodes: usize,
    pub n_communities: usize,
    pub sharpness: f64,
    pub offset: f64,
    pub overlap_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_nodes: 100,
            n_communities: 10,
            sharpness: 8.0,
            offset: -4.0,
            overlap_prob: 0.3,
            seed: 0,
        }
    }
}

/// Link probability for two membership rows.
pub fn edge_probability(spec: &SyntheticSpec, a: &[f64], b: &[f64]) -> f64 {
    let overlap: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    sigmoid(spec.sharpness * overlap + spec.offset)
}

/// Samples a graph and returns it with its `N × K*` binary membership
/// matrix.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Graph, Tensor)> {
    let (n, k) = (spec.n_nodes, spec.n_communities);
    if k == 0 || k > n {
        return Err(Error::Config(format!(
            "need 1 ≤ communities ≤ nodes, got {k} communities for {n} nodes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut members = Tensor::zeros(&[n, k]);
    for node in 0..n {
        let primary = node * k / n;
        members.set(node, primary, 1.0);
        if k > 1 && rng.random::<f64>() < spec.overlap_prob {
            let mut other = rng.random_range(0..k - 1);
            if other >= primary {
                other += 1;
            }
            members.set(node, other, 1.0);
        }
    }
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = edge_probability(spec, members.row(u), members.row(v));
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Ok((Graph::from_edges(n, edges)?, members))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_community_probability() {
        let spec = SyntheticSpec::default();
        let p = edge_probability(&spec, &[1.0, 0.0], &[1.0, 0.0]);
        assert!(p >= 0.9);
        assert!((p - sigmoid(4.0)).abs() < 1e-15);
    }

    #[test]
    fn disjoint_community_probability() {
        let spec = SyntheticSpec::default();
        let p = edge_probability(&spec, &[1.0, 0.0], &[0.0, 1.0]);
        assert!((p - 0.017986).abs() < 1e-6);
    }

    #[test]
    fn memberships_cover_every_node_and_column() {
        let (g, b) = generate_synthetic(&SyntheticSpec::default()).unwrap();
        assert_eq!(g.n_nodes(), 100);
        for n in 0..100 {
            let c: f64 = b.row(n).iter().sum();
            assert!((1.0..=2.0).contains(&c));
        }
        let cols = b.sum_rows();
        assert!(cols.data().iter().all(|&c| c > 0.0));
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = SyntheticSpec {
            seed: 11,
            ..Default::default()
        };
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
    }

    #[test]
    fn block_structure_dominates() {
        let (g, b) = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let (mut within, mut within_n, mut across, mut across_n) = (0.0, 0.0, 0.0, 0.0);
        for u in 0..100 {
            for v in u + 1..100 {
                let shared = b.row(u).iter().zip(b.row(v)).any(|(x, y)| x * y > 0.0);
                let e = g.has_edge(u, v) as u8 as f64;
                if shared {
                    within += e;
                    within_n += 1.0;
                } else {
                    across += e;
                    across_n += 1.0;
                }
            }
        }
        assert!(within / within_n > 0.9);
        assert!(across / across_n < 0.05);
    }
}
