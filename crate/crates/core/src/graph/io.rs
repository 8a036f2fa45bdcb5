use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;

use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// What the edge-list reader had to clean up.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub lines: usize,
    pub self_loops_dropped: usize,
    pub duplicates_dropped: usize,
}

/// Reads `u v` pairs (0-based ids, whitespace separated, `#` comments).
///
/// The node count is the largest id plus one, or `min_nodes` if larger.
pub fn read_edge_list<R: BufRead>(
    reader: R,
    path: &Path,
    min_nodes: usize,
) -> Result<(Graph, LoadStats)> {
    let mut stats = LoadStats::default();
    let mut pairs = Vec::new();
    let mut max_id = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let load_err = |msg: String| Error::Load {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let mut it = line.split_whitespace();
        let (Some(a), Some(b)) = (it.next(), it.next()) else {
            return Err(load_err(format!("expected two node ids, got `{line}`")));
        };
        let u: usize = a.parse().map_err(|_| load_err(format!("bad node id `{a}`")))?;
        let v: usize = b.parse().map_err(|_| load_err(format!("bad node id `{b}`")))?;
        stats.lines += 1;
        max_id = Some(max_id.unwrap_or(0).max(u).max(v));
        if u == v {
            stats.self_loops_dropped += 1;
            continue;
        }
        pairs.push((u.min(v), u.max(v)));
    }
    let before = pairs.len();
    pairs.sort_unstable();
    pairs.dedup();
    stats.duplicates_dropped = before - pairs.len();
    if pairs.is_empty() {
        return Err(Error::Load {
            path: path.to_path_buf(),
            line: 0,
            msg: "graph has no edges".into(),
        });
    }
    if stats.self_loops_dropped > 0 {
        warn!("{}: dropped {} self-loops", path.display(), stats.self_loops_dropped);
    }
    let n = (max_id.unwrap_or(0) + 1).max(min_nodes);
    Ok((Graph::from_edges(n, pairs)?, stats))
}

pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Graph> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(read_edge_list(BufReader::new(file), path, 0)?.0)
}

/// Loads an `n_nodes × D` feature matrix.
///
/// `.csv` files are dense rows of comma-separated values, one per node.
/// Anything else is read as sparse `row col value` triplets with `D` equal
/// to the largest column index plus one.
pub fn load_features(path: impl AsRef<Path>, n_nodes: usize) -> Result<Tensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_dense_csv(reader, path, n_nodes)
    } else {
        read_triplets(reader, path, n_nodes)
    }
}

fn read_triplets<R: BufRead>(reader: R, path: &Path, n_nodes: usize) -> Result<Tensor> {
    let mut entries = Vec::new();
    let mut d = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let load_err = |msg: String| Error::Load {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(load_err(format!("expected `row col value`, got `{line}`")));
        }
        let r: usize = fields[0].parse().map_err(|_| load_err("bad row index".into()))?;
        let c: usize = fields[1].parse().map_err(|_| load_err("bad column index".into()))?;
        let v: f64 = fields[2].parse().map_err(|_| load_err("bad value".into()))?;
        if r >= n_nodes {
            return Err(load_err(format!("row {r} out of range for {n_nodes} nodes")));
        }
        d = d.max(c + 1);
        entries.push((r, c, v));
    }
    let mut t = Tensor::zeros(&[n_nodes, d]);
    for (r, c, v) in entries {
        t.set(r, c, v);
    }
    Ok(t)
}

fn read_dense_csv<R: BufRead>(reader: R, path: &Path, n_nodes: usize) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut d = None;
    let mut rows = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let load_err = |msg: String| Error::Load {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let row: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| load_err("non-numeric field".into()))?;
        match d {
            None => d = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(load_err(format!("expected {d} columns, got {}", row.len())))
            }
            _ => {}
        }
        rows += 1;
        if rows > n_nodes {
            return Err(load_err(format!("more than {n_nodes} rows")));
        }
        data.extend(row);
    }
    if rows != n_nodes {
        return Err(Error::Load {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("expected {n_nodes} rows, got {rows}"),
        });
    }
    Tensor::matrix(n_nodes, d.unwrap_or(0), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn read(s: &str) -> Result<(Graph, LoadStats)> {
        read_edge_list(Cursor::new(s), Path::new("mem"), 0)
    }

    #[test]
    fn smallest_graph() {
        let (g, _) = read("0 1\n").unwrap();
        assert_eq!(g.n_nodes(), 2);
        assert_eq!(g.n_edges(), 1);
    }

    #[test]
    fn dedup_and_self_loop_rule() {
        let (g, stats) = read("# header\n0 1\n1 0\n1 1\n").unwrap();
        assert_eq!(g.n_edges(), 1);
        assert_eq!(stats.self_loops_dropped, 1);
        assert_eq!(stats.duplicates_dropped, 1);
    }

    #[test]
    fn unparseable_line_reports_line_number() {
        match read("0 1\n1 x\n") {
            Err(Error::Load { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_graph_is_an_error() {
        assert!(read("# nothing\n").is_err());
        assert!(read("3 3\n").is_err());
    }

    #[test]
    fn triplets_place_entries() {
        let t = read_triplets(Cursor::new("0 0 1\n1 2 1\n"), Path::new("mem"), 2).unwrap();
        assert_eq!(t, Tensor::from_rows(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]));
    }

    #[test]
    fn triplet_row_out_of_range() {
        assert!(matches!(
            read_triplets(Cursor::new("2 0 1\n"), Path::new("mem"), 2),
            Err(Error::Load { line: 1, .. })
        ));
    }

    #[test]
    fn dense_csv_rows() {
        let t = read_dense_csv(Cursor::new("1,0\n0.5,2\n"), Path::new("mem"), 2).unwrap();
        assert_eq!(t, Tensor::from_rows(&[[1.0, 0.0], [0.5, 2.0]]));
        assert!(read_dense_csv(Cursor::new("1,0\n"), Path::new("mem"), 2).is_err());
    }
}
