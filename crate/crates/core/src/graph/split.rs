use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Graph;
use crate::error::{Error, Result};

/// Held-out link prediction split.
///
/// All pairs are stored as `(u, v)` with `u < v`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub n_nodes: usize,
    pub seed: u64,
    /// Graph with validation and test edges removed.
    pub train: Graph,
    pub val_pos: Vec<(usize, usize)>,
    pub val_neg: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
}

fn holdout_count(frac: f64, n_edges: usize, which: &str) -> Result<usize> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::Split(format!(
            "{which} fraction {frac} must lie in (0, 1); an empty {which} set is not allowed"
        )));
    }
    Ok(((frac * n_edges as f64).round() as usize).max(1))
}

/// Holds out `test_frac` and `val_frac` of the undirected edges uniformly at
/// random, and samples the same number of non-edges for each holdout set.
///
/// Each holdout set gets `max(1, round(frac · E))` edges. Negatives are
/// distinct non-edges of the full graph, disjoint between validation and
/// test.
pub fn make_splits(g: &Graph, test_frac: f64, val_frac: f64, seed: u64) -> Result<SplitSpec> {
    let n = g.n_nodes();
    let mut edges = g.edges();
    let e = edges.len();
    let n_test = holdout_count(test_frac, e, "test")?;
    let n_val = holdout_count(val_frac, e, "validation")?;
    if n_test + n_val >= e {
        return Err(Error::Split(format!(
            "graph has {e} edges, too few to hold out {n_test} test and {n_val} validation edges"
        )));
    }
    let total_pairs = n * (n - 1) / 2;
    let non_edges = total_pairs - e;
    let n_neg = n_test + n_val;
    if non_edges < n_neg {
        return Err(Error::Split(format!(
            "only {non_edges} non-edges available, need {n_neg} negative pairs"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    edges.shuffle(&mut rng);
    let test_pos = edges[..n_test].to_vec();
    let val_pos = edges[n_test..n_test + n_val].to_vec();
    let train_edges = edges[n_test + n_val..].to_vec();

    let negatives = sample_non_edges(g, n_neg, non_edges, &mut rng);
    let test_neg = negatives[..n_test].to_vec();
    let val_neg = negatives[n_test..].to_vec();

    let mut train = Graph::from_edges(n, train_edges)?;
    if let Some(x) = g.features() {
        train = train.with_features(x.clone())?;
    }
    Ok(SplitSpec {
        n_nodes: n,
        seed,
        train,
        val_pos,
        val_neg,
        test_pos,
        test_neg,
    })
}

fn sample_non_edges(g: &Graph, count: usize, available: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let n = g.n_nodes();
    if available < 4 * count {
        // Dense graph: enumerate and shuffle rather than rejection-sample.
        let mut all: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|&(u, v)| !g.has_edge(u, v))
            .collect();
        all.shuffle(rng);
        all.truncate(count);
        return all;
    }
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u == v {
            continue;
        }
        let pair = (u.min(v), u.max(v));
        if g.has_edge(pair.0, pair.1) || !seen.insert(pair) {
            continue;
        }
        out.push(pair);
    }
    out
}

const SECTIONS: [&str; 5] = ["TRAIN", "VAL_POS", "VAL_NEG", "TEST_POS", "TEST_NEG"];

/// Serializes a split as plain text with one section per pair list.
pub fn write_split(split: &SplitSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    writeln!(s, "# dglfrm link split").unwrap();
    writeln!(s, "nodes {}", split.n_nodes).unwrap();
    writeln!(s, "seed {}", split.seed).unwrap();
    let train_edges = split.train.edges();
    let lists: [&[(usize, usize)]; 5] = [
        &train_edges,
        &split.val_pos,
        &split.val_neg,
        &split.test_pos,
        &split.test_neg,
    ];
    for (name, pairs) in SECTIONS.iter().zip(lists) {
        writeln!(s, "[{name}]").unwrap();
        for (u, v) in pairs {
            writeln!(s, "{u} {v}").unwrap();
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads a split written by [`write_split`]. Features are not part of the
/// file; attach them to `split.train` separately.
pub fn read_split(path: impl AsRef<Path>) -> Result<SplitSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut n_nodes = None;
    let mut seed = 0;
    let mut lists: [Vec<(usize, usize)>; 5] = Default::default();
    let mut current: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        let err = |msg: String| Error::Load {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = Some(
                SECTIONS
                    .iter()
                    .position(|s| *s == name)
                    .ok_or_else(|| err(format!("unknown section `{name}`")))?,
            );
            continue;
        }
        let mut it = line.split_whitespace();
        let (a, b) = (it.next().unwrap_or(""), it.next().unwrap_or(""));
        match current {
            None => match a {
                "nodes" => n_nodes = Some(b.parse().map_err(|_| err("bad node count".into()))?),
                "seed" => seed = b.parse().map_err(|_| err("bad seed".into()))?,
                _ => return Err(err(format!("unexpected header line `{line}`"))),
            },
            Some(sec) => {
                let u: usize = a.parse().map_err(|_| err(format!("bad pair `{line}`")))?;
                let v: usize = b.parse().map_err(|_| err(format!("bad pair `{line}`")))?;
                lists[sec].push((u, v));
            }
        }
    }
    let n_nodes = n_nodes.ok_or_else(|| Error::Load {
        path: path.to_path_buf(),
        line: 0,
        msg: "missing `nodes` header".into(),
    })?;
    let [train, val_pos, val_neg, test_pos, test_neg] = lists;
    for &(u, v) in train.iter().chain(&val_pos).chain(&val_neg).chain(&test_pos).chain(&test_neg) {
        if u >= n_nodes || v >= n_nodes || u == v {
            return Err(Error::Load {
                path: path.to_path_buf(),
                line: 0,
                msg: format!("pair ({u}, {v}) invalid for {n_nodes} nodes"),
            });
        }
    }
    Ok(SplitSpec {
        n_nodes,
        seed,
        train: Graph::from_edges(n_nodes, train)?,
        val_pos,
        val_neg,
        test_pos,
        test_neg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k4_minus_edge() -> Graph {
        Graph::from_edges(4, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3)]).unwrap()
    }

    #[test]
    fn small_graph_partitions_edges() {
        // K4 minus two edges leaves exactly two non-edges for the negatives.
        let g = Graph::from_edges(4, [(0, 1), (0, 2), (1, 2), (1, 3)]).unwrap();
        let s = make_splits(&g, 0.1, 0.05, 3).unwrap();
        assert_eq!(s.test_pos.len(), 1);
        assert_eq!(s.val_pos.len(), 1);
        let mut all: Vec<_> = s.train.edges();
        all.extend(&s.val_pos);
        all.extend(&s.test_pos);
        all.sort();
        assert_eq!(all, g.edges());
        let mut neg = vec![s.test_neg[0], s.val_neg[0]];
        neg.sort();
        assert_eq!(neg, vec![(0, 3), (2, 3)]);
    }

    #[test]
    fn k4_minus_one_edge_lacks_negatives() {
        assert!(matches!(make_splits(&k4_minus_edge(), 0.1, 0.05, 3), Err(Error::Split(_))));
    }

    #[test]
    fn not_enough_non_edges() {
        let g = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]).unwrap();
        assert!(matches!(make_splits(&g, 0.1, 0.05, 1), Err(Error::Split(_))));
    }

    #[test]
    fn zero_test_fraction_is_rejected() {
        let g = k4_minus_edge();
        assert!(matches!(make_splits(&g, 0.0, 0.05, 1), Err(Error::Split(_))));
    }

    #[test]
    fn rounding_of_holdout_sizes() {
        assert_eq!(holdout_count(0.10, 5278, "test").unwrap(), 528);
        assert_eq!(holdout_count(0.05, 5278, "val").unwrap(), 264);
    }

    #[test]
    fn file_round_trip() {
        let g = Graph::from_edges(
            8,
            [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (0, 7), (0, 4), (2, 6)],
        )
        .unwrap();
        let s = make_splits(&g, 0.2, 0.1, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("split.txt");
        write_split(&s, &p).unwrap();
        assert_eq!(read_split(&p).unwrap(), s);
    }
}
