//! Areal adjacency graphs and the spanning-tree split used by the treed
//! coefficient model.
//!
//! A split of a connected region subset draws a uniform spanning tree of the
//! induced subgraph (Wilson's loop-erased random walk) and deletes one tree
//! edge chosen uniformly; the two pieces are connected by construction.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

const NOT_IN_SUBSET: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionGraph {
    n_regions: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    connected: bool,
}

impl RegionGraph {
    /// Normalizes the edge list (`i < j`, sorted, duplicates removed) and
    /// records connectivity.
    pub fn new(n_regions: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n_regions == 0 {
            return Err(Error::Graph("graph must have at least one region".into()));
        }
        let mut normalized = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::Graph(format!("self-loop on region {a}")));
            }
            if a >= n_regions || b >= n_regions {
                return Err(Error::Graph(format!(
                    "edge ({a},{b}) references a region id >= {n_regions}"
                )));
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        normalized.dedup();

        let mut adjacency = vec![Vec::new(); n_regions];
        for &(a, b) in &normalized {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let mut graph = RegionGraph {
            n_regions,
            edges: normalized,
            adjacency,
            connected: false,
        };
        let all: Vec<usize> = (0..n_regions).collect();
        graph.connected = components(&graph, &all).len() == 1;
        Ok(graph)
    }

    /// Rook-adjacency lattice; cell `(row, col)` is region `row * cols + col`.
    pub fn grid(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Graph("grid dimensions must be positive".into()));
        }
        let mut edges = Vec::with_capacity(2 * rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let id = r * cols + c;
                if c + 1 < cols {
                    edges.push((id, id + 1));
                }
                if r + 1 < rows {
                    edges.push((id, id + cols));
                }
            }
        }
        Self::new(rows * cols, edges)
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, region: usize) -> &[usize] {
        &self.adjacency[region]
    }

    pub fn degree(&self, region: usize) -> usize {
        self.adjacency[region].len()
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    /// Reads an `i,j` edge list. The region count is `n_regions` when given,
    /// otherwise one more than the largest id seen.
    pub fn read_csv(path: &Path, n_regions: Option<usize>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::file(path, format!("cannot open adjacency file: {e}")))?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::file(path, format!("missing column `{name}`")))
        };
        let (ci, cj) = (col("i")?, col("j")?);
        let mut edges = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let parse = |c: usize| -> Result<usize> {
                let cell = record.get(c).unwrap_or("").trim();
                cell.parse::<usize>().map_err(|_| {
                    Error::file(path, format!("row {}: bad region id `{cell}`", line + 1))
                })
            };
            edges.push((parse(ci)?, parse(cj)?));
        }
        let inferred = edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(1);
        let n = match n_regions {
            Some(n) => n,
            None => inferred,
        };
        Self::new(n, edges)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["i", "j"])?;
        for &(a, b) in &self.edges {
            w.write_record([a.to_string(), b.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A binary split of a region subset into two connected, non-empty sides.
/// Each side is sorted; `left` holds the smallest region id of the subset.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RegionPartition {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

/// Connected components of the subgraph induced by `subset`, each sorted,
/// ordered by smallest member.
pub fn components(graph: &RegionGraph, subset: &[usize]) -> Vec<Vec<usize>> {
    let mut local = vec![NOT_IN_SUBSET; graph.n_regions()];
    for (k, &r) in subset.iter().enumerate() {
        local[r] = k;
    }
    let mut seen = vec![false; subset.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    let mut order: Vec<usize> = subset.to_vec();
    order.sort_unstable();
    for &start in &order {
        let ks = local[start];
        if seen[ks] {
            continue;
        }
        seen[ks] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(u) = queue.pop_front() {
            comp.push(u);
            for &v in graph.neighbors(u) {
                let kv = local[v];
                if kv != NOT_IN_SUBSET && !seen[kv] {
                    seen[kv] = true;
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

fn check_splittable(graph: &RegionGraph, subset: &[usize]) -> Result<()> {
    if subset.len() < 2 {
        return Err(Error::Graph("subset needs at least two regions".into()));
    }
    if let Some(&bad) = subset.iter().find(|&&r| r >= graph.n_regions()) {
        return Err(Error::Graph(format!("region {bad} not in graph")));
    }
    if components(graph, subset).len() != 1 {
        return Err(Error::Graph("induced subgraph on subset is disconnected".into()));
    }
    Ok(())
}

/// Uniform spanning tree of the subgraph induced by `subset`, by Wilson's
/// algorithm. Edges are returned as `(min, max)` pairs in insertion order.
pub fn uniform_spanning_tree<R: Rng + ?Sized>(
    graph: &RegionGraph,
    subset: &[usize],
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    check_splittable(graph, subset)?;
    Ok(wilson(graph, subset, rng))
}

fn wilson<R: Rng + ?Sized>(graph: &RegionGraph, subset: &[usize], rng: &mut R) -> Vec<(usize, usize)> {
    let k = subset.len();
    let mut local = vec![NOT_IN_SUBSET; graph.n_regions()];
    for (i, &r) in subset.iter().enumerate() {
        local[r] = i;
    }
    let nbrs: Vec<Vec<usize>> = subset
        .iter()
        .map(|&r| {
            graph
                .neighbors(r)
                .iter()
                .filter_map(|&v| (local[v] != NOT_IN_SUBSET).then_some(local[v]))
                .collect()
        })
        .collect();

    let mut in_tree = vec![false; k];
    let mut next = vec![usize::MAX; k];
    in_tree[0] = true;
    let mut edges = Vec::with_capacity(k - 1);
    for start in 1..k {
        // Random walk until the tree is hit; overwriting `next` erases loops.
        let mut u = start;
        while !in_tree[u] {
            let nb = &nbrs[u];
            next[u] = nb[rng.random_range(0..nb.len())];
            u = next[u];
        }
        let mut u = start;
        while !in_tree[u] {
            in_tree[u] = true;
            let v = next[u];
            let (a, b) = (subset[u], subset[v]);
            edges.push((a.min(b), a.max(b)));
            u = v;
        }
    }
    edges
}

/// Draws a uniform spanning tree of the induced subgraph and deletes one of
/// its edges uniformly at random.
pub fn split_subset<R: Rng + ?Sized>(
    graph: &RegionGraph,
    subset: &[usize],
    rng: &mut R,
) -> Result<RegionPartition> {
    check_splittable(graph, subset)?;
    let tree = wilson(graph, subset, rng);
    let cut = rng.random_range(0..tree.len());
    Ok(cut_tree(subset, &tree, cut))
}

/// Removes `tree[cut]` and returns the two sides.
fn cut_tree(subset: &[usize], tree: &[(usize, usize)], cut: usize) -> RegionPartition {
    let pos = |r: usize| subset.iter().position(|&s| s == r).expect("tree edge outside subset");
    let k = subset.len();
    let mut adj = vec![Vec::new(); k];
    for (e, &(a, b)) in tree.iter().enumerate() {
        if e == cut {
            continue;
        }
        let (ia, ib) = (pos(a), pos(b));
        adj[ia].push(ib);
        adj[ib].push(ia);
    }
    let anchor = (0..k).min_by_key(|&i| subset[i]).unwrap_or(0);
    let mut side = vec![false; k];
    side[anchor] = true;
    let mut stack = vec![anchor];
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !side[v] {
                side[v] = true;
                stack.push(v);
            }
        }
    }
    let mut left = Vec::new();
    let mut right = Vec::new();
    for (i, &r) in subset.iter().enumerate() {
        if side[i] {
            left.push(r);
        } else {
            right.push(r);
        }
    }
    left.sort_unstable();
    right.sort_unstable();
    RegionPartition { left, right }
}
