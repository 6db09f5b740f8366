//! Coupling graphs: nodes are qubits, edges are directly coupled pairs.
//!
//! Besides the graph type itself this module owns everything derived purely
//! from topology: hop distances, the binary `p`-th order adjacency matrices,
//! their symmetric normalization used by the high-order GCN, the canonical
//! small training graphs and the random medium-scale generator.

use std::collections::{HashSet, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum hop order that carries crosstalk.
pub const DEFAULT_MAX_ORDER: usize = 4;

/// Marker for pairs further apart than the largest tracked order.
pub const FAR: u32 = u32::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("generated graph has {0} nodes, need at least 2")]
    TooSmall(usize),
    #[error("invalid probability {0}")]
    BadProbability(f64),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
}

/// Undirected simple graph over nodes `0..node_count`.
///
/// Edges are stored with the smaller index first, in insertion order. The
/// edge order is meaningful: edge frequencies are indexed by it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CouplingGraph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl CouplingGraph {
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        let mut seen = HashSet::new();
        let mut stored = Vec::new();
        let mut adjacency = vec![Vec::new(); node_count];
        for (a, b) in edges {
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            if a >= node_count || b >= node_count {
                return Err(GraphError::NodeOutOfRange(a, b, node_count));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(GraphError::DuplicateEdge(e.0, e.1));
            }
            adjacency[e.0].push(e.1);
            adjacency[e.1].push(e.0);
            stored.push(e);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            node_count,
            edges: stored,
            adjacency,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    /// Index of edge `{a, b}` in [`Self::edges`], if present.
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        let e = (a.min(b), a.max(b));
        self.edges.iter().position(|&x| x == e)
    }

    /// Path `0 - 1 - ... - (n-1)`.
    pub fn chain(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (i - 1, i))).expect("chain is valid")
    }

    pub fn ring(n: usize) -> Self {
        assert!(n >= 3, "ring needs at least 3 nodes");
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n))).expect("ring is valid")
    }

    /// Square lattice with row-major node numbering.
    pub fn grid(rows: usize, cols: usize) -> Self {
        let mut edges = Vec::new();
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
        Self::new(rows * cols, edges).expect("grid is valid")
    }

    /// Node 0 connected to every other node.
    pub fn star(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (0, i))).expect("star is valid")
    }

    /// Bar `0 - 1 - 2` with a stem `1 - 3 - 4 - 5`.
    pub fn t_shape() -> Self {
        Self::new(6, [(0, 1), (1, 2), (1, 3), (3, 4), (4, 5)]).expect("t-shape is valid")
    }

    pub fn is_connected(&self) -> bool {
        if self.node_count == 0 {
            return true;
        }
        self.bfs_distances(0).iter().all(|&d| d != FAR)
    }

    /// Hop distances from `source`; unreachable nodes get [`FAR`].
    pub fn bfs_distances(&self, source: usize) -> Vec<u32> {
        let mut dist = vec![FAR; self.node_count];
        let mut queue = VecDeque::new();
        dist[source] = 0;
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if dist[v] == FAR {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Nodes in breadth-first order from `start`, neighbors visited by index.
    pub fn bfs_order(&self, start: usize) -> Vec<usize> {
        let mut seen = vec![false; self.node_count];
        let mut order = Vec::with_capacity(self.node_count);
        let mut queue = VecDeque::new();
        for root in std::iter::once(start).chain(0..self.node_count) {
            if seen[root] {
                continue;
            }
            seen[root] = true;
            queue.push_back(root);
            while let Some(u) = queue.pop_front() {
                order.push(u);
                for &v in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        order
    }

    /// Relabels node `i` as `perm[i]`. Edge order is preserved.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.node_count);
        Self::new(self.node_count, self.edges.iter().map(|&(a, b)| (perm[a], perm[b])))
            .expect("relabeling a valid graph with a permutation is valid")
    }

    /// Subgraph induced by `nodes`; node `nodes[t]` becomes `t`.
    pub fn induced(&self, nodes: &[usize]) -> Self {
        let mut map = vec![usize::MAX; self.node_count];
        for (t, &n) in nodes.iter().enumerate() {
            map[n] = t;
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(a, b)| map[a] != usize::MAX && map[b] != usize::MAX)
            .map(|&(a, b)| (map[a], map[b]));
        Self::new(nodes.len(), edges).expect("induced subgraph is valid")
    }

    /// Disjoint union; the second graph's nodes are shifted by `self.node_count()`.
    pub fn disjoint_union(&self, other: &Self) -> Self {
        let off = self.node_count;
        let edges = self
            .edges
            .iter()
            .copied()
            .chain(other.edges.iter().map(|&(a, b)| (a + off, b + off)));
        Self::new(off + other.node_count, edges).expect("union is valid")
    }

    /// Largest connected component, nodes renumbered in increasing order.
    pub fn largest_component(&self) -> Self {
        let mut comp = vec![usize::MAX; self.node_count];
        let mut best: Vec<usize> = Vec::new();
        for s in 0..self.node_count {
            if comp[s] != usize::MAX {
                continue;
            }
            let mut members = vec![s];
            comp[s] = s;
            let mut head = 0;
            while head < members.len() {
                let u = members[head];
                head += 1;
                for &v in &self.adjacency[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = s;
                        members.push(v);
                    }
                }
            }
            if members.len() > best.len() {
                best = members;
            }
        }
        best.sort_unstable();
        self.induced(&best)
    }
}

impl fmt::Display for CouplingGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "graph(n={}, m={})", self.node_count, self.edges.len())
    }
}

/// Hop distances truncated at `max_order`, plus the binary adjacency powers.
///
/// `(A^p)_{ik} = 1` exactly when `dist(i, k) == p`, for `1 <= p <= max_order`.
#[derive(Debug, Clone)]
pub struct AdjacencyPowers {
    max_order: usize,
    n: usize,
    dist: Vec<u32>,
    by_order: Vec<Vec<Vec<usize>>>,
}

impl AdjacencyPowers {
    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Hop distance, or `max_order + 1` when further apart (or disconnected).
    pub fn dist(&self, i: usize, k: usize) -> u32 {
        self.dist[i * self.n + k]
    }

    /// Sentinel used for pairs beyond `max_order`.
    pub fn sentinel(&self) -> u32 {
        self.max_order as u32 + 1
    }

    /// Nodes exactly `p` hops from `i`, sorted.
    pub fn at_order(&self, p: usize, i: usize) -> &[usize] {
        &self.by_order[p - 1][i]
    }

    /// Dense binary matrix `A^p`, row-major.
    pub fn dense(&self, p: usize) -> Vec<Vec<u8>> {
        assert!(p >= 1 && p <= self.max_order);
        (0..self.n)
            .map(|i| (0..self.n).map(|k| u8::from(self.dist(i, k) == p as u32)).collect())
            .collect()
    }
}

pub fn compute_hop_distances(graph: &CouplingGraph, max_order: usize) -> AdjacencyPowers {
    let n = graph.node_count();
    let sentinel = max_order as u32 + 1;
    let mut dist = vec![sentinel; n * n];
    let mut by_order = vec![vec![Vec::new(); n]; max_order];
    let mut level = vec![FAR; n];
    let mut queue = VecDeque::new();
    let mut touched = Vec::new();
    for s in 0..n {
        // bounded BFS: large graphs never need the full distance row
        level[s] = 0;
        touched.push(s);
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            let du = level[u];
            if du as usize == max_order {
                continue;
            }
            for &v in graph.neighbors(u) {
                if level[v] == FAR {
                    level[v] = du + 1;
                    touched.push(v);
                    queue.push_back(v);
                }
            }
        }
        for &v in &touched {
            let d = level[v];
            dist[s * n + v] = d;
            if d >= 1 {
                by_order[d as usize - 1][s].push(v);
            }
            level[v] = FAR;
        }
        touched.clear();
        for list in &mut by_order {
            list[s].sort_unstable();
        }
    }
    AdjacencyPowers {
        max_order,
        n,
        dist,
        by_order,
    }
}

/// Sparse square matrix stored by rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            n,
            rows: (0..n).map(|i| vec![(i, 1.0)]).collect(),
        }
    }

    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(rows.len(), n);
        Self { n, rows }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.rows[i].iter().find(|e| e.0 == k).map_or(0.0, |e| e.1)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.n]; self.n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(k, v) in row {
                out[i][k] += v;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(k, v) in row {
                rows[k].push((i, v));
            }
        }
        Self { n: self.n, rows }
    }

    /// Block-diagonal concatenation.
    pub fn block_diag(blocks: &[&SparseMatrix]) -> Self {
        let n = blocks.iter().map(|b| b.n).sum();
        let mut rows = Vec::with_capacity(n);
        let mut off = 0;
        for b in blocks {
            for row in &b.rows {
                rows.push(row.iter().map(|&(k, v)| (k + off, v)).collect());
            }
            off += b.n;
        }
        Self { n, rows }
    }
}

/// `Ã^p = D^{-1/2} (A^p + I) D^{-1/2}` for `p = 0..=order`; `Ã^0` is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    mats: Vec<SparseMatrix>,
}

impl NormalizedAdjacency {
    pub fn order(&self) -> usize {
        self.mats.len() - 1
    }

    pub fn node_count(&self) -> usize {
        self.mats[0].dim()
    }

    pub fn get(&self, p: usize) -> &SparseMatrix {
        &self.mats[p]
    }

    pub fn block_diag(parts: &[&NormalizedAdjacency]) -> Self {
        let order = parts[0].order();
        let mats = (0..=order)
            .map(|p| {
                let blocks: Vec<&SparseMatrix> = parts.iter().map(|a| a.get(p)).collect();
                SparseMatrix::block_diag(&blocks)
            })
            .collect();
        Self { mats }
    }
}

/// Normalizes orders `1..=order` of `powers` (`order` may be below the powers' maximum).
pub fn normalize_adjacency(powers: &AdjacencyPowers, order: usize) -> NormalizedAdjacency {
    assert!(order <= powers.max_order());
    let n = powers.node_count();
    let mut mats = vec![SparseMatrix::identity(n)];
    for p in 1..=order {
        let deg: Vec<f64> = (0..n).map(|i| (powers.at_order(p, i).len() + 1) as f64).collect();
        let rows = (0..n)
            .map(|i| {
                let mut cols: Vec<usize> = powers.at_order(p, i).to_vec();
                cols.push(i);
                cols.sort_unstable();
                cols.into_iter()
                    .map(|k| (k, 1.0 / (deg[i] * deg[k]).sqrt()))
                    .collect()
            })
            .collect();
        mats.push(SparseMatrix::from_rows(n, rows));
    }
    NormalizedAdjacency { mats }
}

/// Role of a small graph in evaluator training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphRole {
    Train,
    NewStructure,
    /// Large holdout chain simulated in local windows.
    ScaleHoldout,
}

#[derive(Debug, Clone)]
pub struct NamedGraph {
    pub name: String,
    pub role: GraphRole,
    pub graph: CouplingGraph,
}

/// The five six-node graphs: chain, ring and 2x3 grid for training; star and
/// T-shape held out as new structures.
pub fn small_training_graphs() -> Vec<NamedGraph> {
    let named = |name: &str, role, graph| NamedGraph {
        name: name.to_string(),
        role,
        graph,
    };
    vec![
        named("chain6", GraphRole::Train, CouplingGraph::chain(6)),
        named("ring6", GraphRole::Train, CouplingGraph::ring(6)),
        named("grid2x3", GraphRole::Train, CouplingGraph::grid(2, 3)),
        named("star6", GraphRole::NewStructure, CouplingGraph::star(6)),
        named("tshape6", GraphRole::NewStructure, CouplingGraph::t_shape()),
    ]
}

/// Square lattice with random node and edge deletions, reduced to its largest
/// connected component.
pub fn random_medium_graph(
    base_rows: usize,
    base_cols: usize,
    node_removal_prob: f64,
    edge_removal_prob: f64,
    seed: u64,
) -> Result<CouplingGraph, GraphError> {
    for p in [node_removal_prob, edge_removal_prob] {
        if !(0.0..1.0).contains(&p) {
            return Err(GraphError::BadProbability(p));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = CouplingGraph::grid(base_rows, base_cols);
    let keep: Vec<bool> = (0..base.node_count())
        .map(|_| rng.gen::<f64>() >= node_removal_prob)
        .collect();
    let mut edges = Vec::new();
    for &(a, b) in base.edges() {
        // one draw per base edge keeps the stream aligned across node outcomes
        let survive = rng.gen::<f64>() >= edge_removal_prob;
        if survive && keep[a] && keep[b] {
            edges.push((a, b));
        }
    }
    let pruned = CouplingGraph::new(base.node_count(), edges)?;
    let kept_nodes: Vec<usize> = (0..base.node_count()).filter(|&i| keep[i]).collect();
    let lcc = pruned.induced(&kept_nodes).largest_component();
    if lcc.node_count() < 2 {
        return Err(GraphError::TooSmall(lcc.node_count()));
    }
    Ok(lcc)
}

/// Recipe for random graphs of a target mean size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MediumGraphSpec {
    pub rows: usize,
    pub cols: usize,
    pub node_removal_prob: f64,
    pub edge_removal_prob: f64,
}

/// Expected fraction of base lattice nodes that survive deletion and component
/// extraction at the default probabilities; a Monte-Carlo fit that rises
/// slowly with lattice size as boundary effects fade.
fn survival_rate(base_nodes: usize) -> f64 {
    0.851 - 0.202 / (base_nodes as f64).sqrt()
}

impl MediumGraphSpec {
    pub const NODE_REMOVAL: f64 = 0.15;
    pub const EDGE_REMOVAL: f64 = 0.10;

    /// Near-square lattice whose expected surviving node count is closest
    /// to `mean_nodes`.
    pub fn for_mean_nodes(mean_nodes: usize) -> Self {
        let target = mean_nodes.max(2) as f64;
        let side = (target / 0.8).sqrt().round() as usize;
        let mut best = (f64::INFINITY, 2, 2);
        for rows in side.saturating_sub(2).max(2)..=side + 2 {
            for cols in rows..=rows + 2 {
                let base = rows * cols;
                let miss = (survival_rate(base) * base as f64 - target).abs();
                if miss < best.0 {
                    best = (miss, rows, cols);
                }
            }
        }
        Self {
            rows: best.1,
            cols: best.2,
            node_removal_prob: Self::NODE_REMOVAL,
            edge_removal_prob: Self::EDGE_REMOVAL,
        }
    }

    pub fn sample(&self, seed: u64) -> Result<CouplingGraph, GraphError> {
        random_medium_graph(self.rows, self.cols, self.node_removal_prob, self.edge_removal_prob, seed)
    }
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    nodes: usize,
    edges: Vec<[usize; 2]>,
}

/// Line-oriented text form: `nodes N` followed by `edge i j` records.
pub fn to_text(graph: &CouplingGraph) -> String {
    let mut out = format!("nodes {}\n", graph.node_count());
    for &(a, b) in graph.edges() {
        out.push_str(&format!("edge {a} {b}\n"));
    }
    out
}

pub fn from_text(doc: &str) -> Result<CouplingGraph, GraphError> {
    let err = |line: usize, column: usize, message: String| GraphError::Parse { line, column, message };
    let mut node_count: Option<usize> = None;
    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in doc.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut fields = Vec::new();
        let mut col = 0;
        for tok in raw.split(' ') {
            if !tok.is_empty() {
                fields.push((col + 1, tok));
            }
            col += tok.len() + 1;
        }
        let parse_num = |(c, t): (usize, &str)| -> Result<usize, GraphError> {
            t.parse::<usize>()
                .map_err(|_| err(line, c, format!("expected a non-negative integer, found `{t}`")))
        };
        match fields[0].1 {
            "nodes" => {
                if node_count.is_some() {
                    return Err(err(line, fields[0].0, "repeated `nodes` header".into()));
                }
                if !edges.is_empty() {
                    return Err(err(line, fields[0].0, "`nodes` must come first".into()));
                }
                if fields.len() != 2 {
                    return Err(err(line, fields[0].0, "expected `nodes N`".into()));
                }
                node_count = Some(parse_num(fields[1])?);
            }
            "edge" => {
                let n = node_count.ok_or_else(|| err(line, fields[0].0, "`edge` before `nodes` header".into()))?;
                if fields.len() != 3 {
                    return Err(err(line, fields[0].0, "expected `edge i j`".into()));
                }
                let a = parse_num(fields[1])?;
                let b = parse_num(fields[2])?;
                for (v, f) in [(a, fields[1]), (b, fields[2])] {
                    if v >= n {
                        return Err(err(line, f.0, format!("node {v} out of range 0..{n}")));
                    }
                }
                if a == b {
                    return Err(err(line, fields[1].0, format!("self-loop on node {a}")));
                }
                if !seen.insert((a.min(b), a.max(b))) {
                    return Err(err(line, fields[1].0, format!("duplicate edge ({a}, {b})")));
                }
                edges.push((a, b));
            }
            other => return Err(err(line, fields[0].0, format!("unknown record `{other}`"))),
        }
    }
    let n = node_count.ok_or_else(|| err(1, 1, "missing `nodes` header".into()))?;
    CouplingGraph::new(n, edges)
}

pub fn to_json(graph: &CouplingGraph) -> String {
    let doc = GraphJson {
        nodes: graph.node_count(),
        edges: graph.edges().iter().map(|&(a, b)| [a, b]).collect(),
    };
    serde_json::to_string(&doc).expect("graph serializes")
}

pub fn from_json(doc: &str) -> Result<CouplingGraph, GraphError> {
    let parsed: GraphJson = serde_json::from_str(doc).map_err(|e| GraphError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    CouplingGraph::new(parsed.nodes, parsed.edges.into_iter().map(|[a, b]| (a, b)))
}

/// Parses either form, picking JSON when the document starts with `{`.
pub fn parse_any(doc: &str) -> Result<CouplingGraph, GraphError> {
    if doc.trim_start().starts_with('{') {
        from_json(doc)
    } else {
        from_text(doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_of_three_distances() {
        let g = CouplingGraph::chain(3);
        let pw = compute_hop_distances(&g, 4);
        assert_eq!(pw.dist(0, 2), 2);
        assert_eq!(pw.dense(2)[0][2], 1);
        assert_eq!(pw.dense(1)[0][2], 0);
    }

    #[test]
    fn single_node_has_no_neighbors() {
        let g = CouplingGraph::new(1, []).unwrap();
        let pw = compute_hop_distances(&g, 4);
        assert_eq!(pw.dist(0, 0), 0);
        let g2 = CouplingGraph::new(2, []).unwrap();
        let pw2 = compute_hop_distances(&g2, 4);
        assert!(pw2.dist(0, 1) > 4);
    }

    #[test]
    fn ring_opposite_node() {
        let pw = compute_hop_distances(&CouplingGraph::ring(6), 4);
        assert_eq!(pw.dist(0, 3), 3);
        assert_eq!(pw.dense(3)[0][3], 1);
    }

    #[test]
    fn two_node_normalization() {
        let g = CouplingGraph::chain(2);
        let na = normalize_adjacency(&compute_hop_distances(&g, 4), 1);
        let d = na.get(1).to_dense();
        for row in &d {
            for &v in row {
                assert!((v - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn empty_order_is_identity() {
        let g = CouplingGraph::chain(2);
        let na = normalize_adjacency(&compute_hop_distances(&g, 4), 3);
        assert_eq!(na.get(2), &SparseMatrix::identity(2));
        assert_eq!(na.get(3), &SparseMatrix::identity(2));
    }

    #[test]
    fn chain_normalization_matches_hand_values() {
        // degrees of A + I are [2, 3, 2]
        let na = normalize_adjacency(&compute_hop_distances(&CouplingGraph::chain(3), 4), 1);
        let d = na.get(1).to_dense();
        let expect = [
            [0.5, 1.0 / 6f64.sqrt(), 0.0],
            [1.0 / 6f64.sqrt(), 1.0 / 3.0, 1.0 / 6f64.sqrt()],
            [0.0, 1.0 / 6f64.sqrt(), 0.5],
        ];
        for i in 0..3 {
            let s: f64 = d[i].iter().sum();
            assert!(s <= 1.21);
            for k in 0..3 {
                assert!((d[i][k] - expect[i][k]).abs() < 1e-15);
                assert_eq!(d[i][k], d[k][i]);
            }
        }
    }

    #[test]
    fn full_grid_edge_count() {
        let g = random_medium_graph(5, 7, 0.0, 0.0, 3).unwrap();
        assert_eq!(g.node_count(), 35);
        assert_eq!(g.edge_count(), 4 * 7 + 5 * 6);
    }

    #[test]
    fn generator_is_deterministic() {
        let a = random_medium_graph(8, 8, 0.15, 0.1, 42).unwrap();
        let b = random_medium_graph(8, 8, 0.15, 0.1, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.is_connected());
    }

    #[test]
    fn generator_rejects_bad_probability() {
        assert_eq!(
            random_medium_graph(3, 3, 1.0, 0.0, 0),
            Err(GraphError::BadProbability(1.0))
        );
    }

    #[test]
    fn small_graph_shapes() {
        let gs = small_training_graphs();
        assert_eq!(gs.len(), 5);
        assert_eq!(gs[0].graph.edges(), &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]);
        assert_eq!(gs[2].graph.edge_count(), 7);
        assert_eq!(gs[3].graph.degree(0), 5);
        for g in &gs {
            assert_eq!(g.graph.node_count(), 6);
            assert!(g.graph.is_connected());
        }
        assert_eq!(gs.iter().filter(|g| g.role == GraphRole::Train).count(), 3);
    }

    #[test]
    fn text_round_trip_and_errors() {
        let doc = "nodes 3\nedge 0 1\nedge 1 2\n";
        let g = from_text(doc).unwrap();
        assert_eq!(g.edge_count(), 2);
        assert_eq!(to_text(&g), doc);

        match from_text("nodes 3\nedge 0 1\nedge 1 0\n") {
            Err(GraphError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match from_text("nodes 3\nedge 0 x\n") {
            Err(GraphError::Parse { line, column, .. }) => assert_eq!((line, column), (2, 8)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(from_text("edge 0 1\n").is_err());
    }

    #[test]
    fn json_round_trip() {
        let g = CouplingGraph::grid(2, 3);
        let back = from_json(&to_json(&g)).unwrap();
        assert_eq!(back, g);
        assert_eq!(parse_any(&to_json(&g)).unwrap(), g);
        assert!(from_json(r#"{"nodes": 2, "edges": [[0,1],[1,0]]}"#).is_err());
    }
}
