//! Undirected interference networks and random-graph generators.
//!
//! Networks are simple graphs over units `0..n`: no self-loops, no duplicate
//! edges. Edge-list text I/O is 1-indexed; everything in memory is 0-indexed.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    n: usize,
    adj: Vec<Vec<usize>>,
}

/// Builds a network over `n` units from an edge list. Duplicate edges (in
/// either orientation) collapse to one; self-loops and out-of-range
/// endpoints are rejected.
pub fn new_network(n: usize, edges: &[(usize, usize)]) -> Result<Network> {
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        if j >= n {
            return Err(Error::IndexOutOfRange { index: j, n });
        }
        if i == j {
            return Err(Error::SelfLoop(i));
        }
        adj[i].push(j);
        adj[j].push(i);
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    Ok(Network { n, adj })
}

impl Network {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Direct neighbors of `i`, sorted ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i].binary_search(&j).is_ok()
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges as `(i, j)` with `i < j`, sorted lexicographically.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for i in 0..self.n {
            for &j in &self.adj[i] {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Units at distance exactly two from `i`: neighbors of neighbors,
    /// excluding `i` itself and all direct neighbors. Sorted ascending.
    pub fn second_neighbors(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for &j in &self.adj[i] {
            for &m in &self.adj[j] {
                if m != i && !self.has_edge(i, m) {
                    out.push(m);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Erdos-Renyi graph: every unordered pair is an edge independently with
/// probability `p`. Deterministic given `seed`; pairs are scanned in a fixed
/// order `(0,1), (0,2), ..., (n-2, n-1)`.
pub fn gen_erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Network> {
    if n == 0 {
        return Err(Error::InvalidParameter("network needs at least one unit".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidProbability(p));
    }
    let mut rng = seeds::rng(seed);
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < p {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    Ok(Network { n, adj })
}

/// Watts-Strogatz small world: a ring lattice joining each unit to its
/// `k_side` nearest units on each side, then one rewiring pass. Lattice edges
/// are scanned in fixed order (offset-major, then unit); each is rewired with
/// probability `beta` by replacing its far endpoint with a uniformly drawn
/// unit that is neither `i` nor already adjacent to `i`. If no such unit
/// exists the edge is kept. The edge count is always exactly `n * k_side`.
pub fn gen_watts_strogatz(n: usize, k_side: usize, beta: f64, seed: u64) -> Result<Network> {
    if n == 0 {
        return Err(Error::InvalidParameter("network needs at least one unit".into()));
    }
    if k_side == 0 || 2 * k_side >= n {
        return Err(Error::InvalidParameter(format!(
            "ring lattice needs 1 <= k_side and 2 * k_side < n; got k_side = {k_side}, n = {n}"
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidProbability(beta));
    }

    let mut rng = seeds::rng(seed);
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let insert = |adj: &mut Vec<Vec<usize>>, a: usize, b: usize| {
        let pos = adj[a].binary_search(&b).unwrap_err();
        adj[a].insert(pos, b);
        let pos = adj[b].binary_search(&a).unwrap_err();
        adj[b].insert(pos, a);
    };
    let remove = |adj: &mut Vec<Vec<usize>>, a: usize, b: usize| {
        let pos = adj[a].binary_search(&b).unwrap();
        adj[a].remove(pos);
        let pos = adj[b].binary_search(&a).unwrap();
        adj[b].remove(pos);
    };

    for offset in 1..=k_side {
        for i in 0..n {
            insert(&mut adj, i, (i + offset) % n);
        }
    }
    for offset in 1..=k_side {
        for i in 0..n {
            let j = (i + offset) % n;
            if rng.gen::<f64>() >= beta {
                continue;
            }
            if adj[i].len() >= n - 1 {
                continue; // no non-adjacent unit left; keep the edge
            }
            let w = loop {
                let cand = rng.gen_range(0..n);
                if cand != i && adj[i].binary_search(&cand).is_err() {
                    break cand;
                }
            };
            remove(&mut adj, i, j);
            insert(&mut adj, i, w);
        }
    }
    Ok(Network { n, adj })
}

/// Renders the edge list as text: one `i j` pair per line, 1-indexed,
/// `i < j`, sorted. Isolated units do not appear; pair with the unit count
/// when reading back.
pub fn render_edge_list(net: &Network) -> String {
    let mut out = String::new();
    for (i, j) in net.edges() {
        writeln!(out, "{} {}", i + 1, j + 1).expect("string write cannot fail");
    }
    out
}

/// Parses a 1-indexed edge list for a network over `n` units.
pub fn parse_edge_list(text: &str, n: usize) -> Result<Network> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (a, b) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(Error::Parse(format!(
                    "edge list line {}: expected exactly two indices, got {:?}",
                    lineno + 1,
                    line
                )))
            }
        };
        let parse = |s: &str| -> Result<usize> {
            let v: usize = s
                .parse()
                .map_err(|_| Error::Parse(format!("edge list line {}: bad index {:?}", lineno + 1, s)))?;
            if v == 0 {
                return Err(Error::Parse(format!(
                    "edge list line {}: indices are 1-based, got 0",
                    lineno + 1
                )));
            }
            Ok(v - 1)
        };
        edges.push((parse(a)?, parse(b)?));
    }
    new_network(n, &edges)
}

pub fn write_edge_list(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, render_edge_list(net))?;
    Ok(())
}

pub fn read_edge_list(path: &Path, n: usize) -> Result<Network> {
    let text = std::fs::read_to_string(path)?;
    parse_edge_list(&text, n)
}
