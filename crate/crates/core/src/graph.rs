//! Labeled graphs, permutations, synthetic generators, and dataset I/O.
//!
//! A [`Graph`] stores categorical node types and a symmetric matrix of
//! categorical edge types. Edge category 0 means "no edge" and is treated as
//! a first-class category everywhere: paths, costs, priors, and losses all
//! see absence as just another label, which is what keeps sparse graphs
//! sparse along the whole generative path.
//!
//! The dataset format is UTF-8 JSON Lines, one object per graph:
//! `{"n": 3, "nodes": [0, 1, 0], "edges": [[0, 1, 2], [1, 2, 1]]}`
//! with `i < j` and `type >= 1`; absent edges are omitted and symmetry is
//! reconstructed on load.

use crate::error::{Error, Result};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// Variable-size labeled graph with categorical nodes and symmetric
/// categorical edges. Category 0 on an edge slot encodes absence; the
/// diagonal is fixed to 0.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Graph {
    node_types: Vec<u8>,
    /// Row-major n*n symmetric matrix, diagonal 0.
    edge_types: Vec<u8>,
}

impl std::fmt::Debug for Graph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Graph(n={}, nodes={:?}, edges=[", self.n_nodes(), self.node_types)?;
        let mut first = true;
        for (i, j, ty) in self.edges() {
            if !first {
                write!(f, ", ")?;
            }
            write!(f, "({i},{j}):{ty}")?;
            first = false;
        }
        write!(f, "])")
    }
}

impl Graph {
    /// Build from node types and a full edge matrix. Checks the symmetry and
    /// zero-diagonal invariants.
    pub fn new(node_types: Vec<u8>, edge_types: Vec<u8>) -> Result<Self> {
        let n = node_types.len();
        if n == 0 {
            return Err(Error::precondition("graph must have at least one node"));
        }
        if edge_types.len() != n * n {
            return Err(Error::Shape(format!(
                "edge matrix has {} entries, expected {}",
                edge_types.len(),
                n * n
            )));
        }
        for i in 0..n {
            if edge_types[i * n + i] != 0 {
                return Err(Error::precondition(format!("diagonal entry ({i},{i}) must be 0")));
            }
            for j in (i + 1)..n {
                if edge_types[i * n + j] != edge_types[j * n + i] {
                    return Err(Error::precondition(format!(
                        "edge matrix asymmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Graph {
            node_types,
            edge_types,
        })
    }

    /// Build from an upper-triangle edge list; symmetry is filled in.
    pub fn from_edges(node_types: Vec<u8>, edges: &[(usize, usize, u8)]) -> Result<Self> {
        let n = node_types.len();
        let mut m = vec![0u8; n * n];
        for &(i, j, ty) in edges {
            if i >= n || j >= n {
                return Err(Error::precondition(format!(
                    "edge ({i},{j}) out of range for {n} nodes"
                )));
            }
            if i == j {
                return Err(Error::precondition(format!("self-loop at node {i}")));
            }
            m[i * n + j] = ty;
            m[j * n + i] = ty;
        }
        Graph::new(node_types, m)
    }

    /// Single-category nodes with a plain (unlabeled) edge set.
    pub fn from_adjacency(n: usize, adj: &[(usize, usize)]) -> Result<Self> {
        let edges: Vec<(usize, usize, u8)> = adj.iter().map(|&(i, j)| (i, j, 1)).collect();
        Graph::from_edges(vec![0; n], &edges)
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.node_types.len()
    }

    #[inline]
    pub fn node_type(&self, i: usize) -> u8 {
        self.node_types[i]
    }

    #[inline]
    pub fn node_types(&self) -> &[u8] {
        &self.node_types
    }

    #[inline]
    pub fn edge_type(&self, i: usize, j: usize) -> u8 {
        self.edge_types[i * self.n_nodes() + j]
    }

    /// Iterator over present edges as (i, j, type) with i < j.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, u8)> + '_ {
        let n = self.n_nodes();
        (0..n).flat_map(move |i| {
            ((i + 1)..n).filter_map(move |j| {
                let ty = self.edge_type(i, j);
                (ty != 0).then_some((i, j, ty))
            })
        })
    }

    /// Number of present (nonzero) edges over unordered pairs.
    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    /// Degree in the binarized adjacency (any category >= 1 counts).
    pub fn degree(&self, i: usize) -> usize {
        let n = self.n_nodes();
        (0..n).filter(|&j| self.edge_types[i * n + j] != 0).count()
    }

    /// Binarized adjacency rows as bitsets (`ceil(n/64)` words per row).
    pub fn adjacency_bits(&self) -> Vec<Vec<u64>> {
        let n = self.n_nodes();
        let words = n.div_ceil(64);
        let mut rows = vec![vec![0u64; words]; n];
        for (i, j, _) in self.edges() {
            rows[i][j / 64] |= 1 << (j % 64);
            rows[j][i / 64] |= 1 << (i % 64);
        }
        rows
    }

    /// Check that every category index is within the given cardinalities.
    pub fn validate_categories(&self, node_cats: usize, edge_cats: usize) -> Result<()> {
        if let Some((i, &v)) = self
            .node_types
            .iter()
            .enumerate()
            .find(|(_, &v)| v as usize >= node_cats)
        {
            return Err(Error::precondition(format!(
                "node {i} has type {v}, cardinality is {node_cats}"
            )));
        }
        if let Some(&e) = self.edge_types.iter().find(|&&e| e as usize >= edge_cats) {
            return Err(Error::precondition(format!(
                "edge type {e} exceeds cardinality {edge_cats}"
            )));
        }
        Ok(())
    }

    /// Relabel nodes: node i of `self` becomes node `p(i)` of the result.
    pub fn permute(&self, p: &Permutation) -> Result<Graph> {
        let n = self.n_nodes();
        if p.len() != n {
            return Err(Error::precondition(format!(
                "permutation size {} does not match graph size {n}",
                p.len()
            )));
        }
        let mut node_types = vec![0u8; n];
        let mut edge_types = vec![0u8; n * n];
        for i in 0..n {
            node_types[p.map(i)] = self.node_types[i];
            for j in 0..n {
                edge_types[p.map(i) * n + p.map(j)] = self.edge_types[i * n + j];
            }
        }
        Ok(Graph {
            node_types,
            edge_types,
        })
    }
}

/// Bijection on {0, .., n-1}, validated on construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &v in &mapping {
            if v >= n || seen[v] {
                return Err(Error::precondition("mapping is not a bijection"));
            }
            seen[v] = true;
        }
        Ok(Permutation { mapping })
    }

    pub fn identity(n: usize) -> Self {
        Permutation {
            mapping: (0..n).collect(),
        }
    }

    pub fn random(n: usize, rng: &mut Rng) -> Self {
        let mut mapping: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut mapping);
        Permutation { mapping }
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0usize; self.mapping.len()];
        for (i, &v) in self.mapping.iter().enumerate() {
            inv[v] = i;
        }
        Permutation { mapping: inv }
    }

    #[inline]
    pub fn map(&self, i: usize) -> usize {
        self.mapping[i]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Synthetic dataset generators
// ---------------------------------------------------------------------------

const GEN_COMMUNITY: u64 = 0x10;
const GEN_GRID: u64 = 0x11;

/// Two equal communities of Erdos-Renyi graphs with sparse inter-community
/// links. Total node count is even, uniform over [12, 20]; within-community
/// edges appear independently with probability 0.7; `ceil(0.05 * n)` cross
/// edges are added uniformly at random.
pub fn gen_community_small(count: usize, seed: u64) -> Result<Vec<Graph>> {
    gen_community_small_p(count, seed, 0.7)
}

/// Like [`gen_community_small`] with an explicit within-community edge
/// probability (test hook: p = 1.0 makes two cliques).
pub fn gen_community_small_p(count: usize, seed: u64, p_within: f64) -> Result<Vec<Graph>> {
    if count == 0 {
        return Err(Error::precondition("count must be positive"));
    }
    let mut out = Vec::with_capacity(count);
    for g in 0..count {
        let mut rng = Rng::derive(seed, &[GEN_COMMUNITY, g as u64]);
        // Even sizes 12, 14, 16, 18, 20.
        let n = 12 + 2 * rng.below(5);
        let half = n / 2;
        let mut edges: Vec<(usize, usize, u8)> = Vec::new();
        for (lo, hi) in [(0, half), (half, n)] {
            for i in lo..hi {
                for j in (i + 1)..hi {
                    if rng.bernoulli(p_within) {
                        edges.push((i, j, 1));
                    }
                }
            }
        }
        // Sparse inter-community links, distinct pairs.
        let n_cross = (0.05 * n as f64).ceil() as usize;
        let mut cross: Vec<(usize, usize)> = (0..half)
            .flat_map(|i| (half..n).map(move |j| (i, j)))
            .collect();
        rng.shuffle(&mut cross);
        for &(i, j) in cross.iter().take(n_cross) {
            edges.push((i, j, 1));
        }
        out.push(Graph::from_edges(vec![0; n], &edges)?);
    }
    Ok(out)
}

/// 2-D lattice graphs with side lengths uniform in [min_side, max_side].
pub fn gen_grid(count: usize, min_side: usize, max_side: usize, seed: u64) -> Result<Vec<Graph>> {
    if count == 0 {
        return Err(Error::precondition("count must be positive"));
    }
    if min_side < 2 || min_side > max_side {
        return Err(Error::precondition("need 2 <= min_side <= max_side"));
    }
    let mut out = Vec::with_capacity(count);
    for g in 0..count {
        let mut rng = Rng::derive(seed, &[GEN_GRID, g as u64]);
        let rows = min_side + rng.below(max_side - min_side + 1);
        let cols = min_side + rng.below(max_side - min_side + 1);
        let idx = |r: usize, c: usize| r * cols + c;
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push((idx(r, c), idx(r, c + 1), 1));
                }
                if r + 1 < rows {
                    edges.push((idx(r, c), idx(r + 1, c), 1));
                }
            }
        }
        out.push(Graph::from_edges(vec![0; rows * cols], &edges)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dataset I/O (JSON Lines)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    n: usize,
    nodes: Vec<u8>,
    edges: Vec<(usize, usize, u8)>,
}

/// Parse one JSON Lines record into a graph.
pub fn parse_graph_record(line: &str) -> Result<Graph> {
    let rec: GraphRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
        field: "record".into(),
        reason: e.to_string(),
    })?;
    if rec.n == 0 {
        return Err(Error::Parse {
            field: "n".into(),
            reason: "node count must be positive".into(),
        });
    }
    if rec.nodes.len() != rec.n {
        return Err(Error::Parse {
            field: "nodes".into(),
            reason: format!("{} entries for n={}", rec.nodes.len(), rec.n),
        });
    }
    let mut seen = std::collections::HashSet::new();
    for (k, &(i, j, ty)) in rec.edges.iter().enumerate() {
        if i >= j {
            return Err(Error::Parse {
                field: format!("edges[{k}]"),
                reason: format!("expected i < j, got ({i},{j})"),
            });
        }
        if j >= rec.n {
            return Err(Error::Parse {
                field: format!("edges[{k}]"),
                reason: format!("endpoint {j} out of range for n={}", rec.n),
            });
        }
        if ty == 0 {
            return Err(Error::Parse {
                field: format!("edges[{k}]"),
                reason: "explicit type-0 (absent) edges are not stored".into(),
            });
        }
        if !seen.insert((i, j)) {
            return Err(Error::Parse {
                field: format!("edges[{k}]"),
                reason: format!("duplicate pair ({i},{j})"),
            });
        }
    }
    Graph::from_edges(rec.nodes, &rec.edges)
}

/// Serialize one graph as a single JSON line (no trailing newline).
pub fn serialize_graph(g: &Graph) -> String {
    let rec = GraphRecord {
        n: g.n_nodes(),
        nodes: g.node_types().to_vec(),
        edges: g.edges().collect(),
    };
    serde_json::to_string(&rec).expect("graph record serialization cannot fail")
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Graph>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = std::io::BufReader::new(file);
    let mut graphs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        graphs.push(parse_graph_record(&line).map_err(|e| match e {
            Error::Parse { field, reason } => Error::Parse {
                field: format!("line {}: {field}", lineno + 1),
                reason,
            },
            other => other,
        })?);
    }
    Ok(graphs)
}

pub fn write_dataset(path: impl AsRef<Path>, graphs: &[Graph]) -> Result<()> {
    let path = path.as_ref();
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    for g in graphs {
        writeln!(file, "{}", serialize_graph(g))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Enumerable graph spaces (test oracles, exact distributions)
// ---------------------------------------------------------------------------

/// The space of all graphs with a fixed node count and given category
/// cardinalities, indexed dimension-by-dimension: first the n node slots,
/// then the n(n-1)/2 unordered edge slots in (i < j) lexicographic order.
#[derive(Clone, Debug)]
pub struct GraphSpace {
    pub n_nodes: usize,
    pub node_cats: usize,
    pub edge_cats: usize,
}

impl GraphSpace {
    pub fn new(n_nodes: usize, node_cats: usize, edge_cats: usize) -> Result<Self> {
        let space = GraphSpace {
            n_nodes,
            node_cats,
            edge_cats,
        };
        if space.len_checked().is_none() {
            return Err(Error::Capacity(format!(
                "graph space {n_nodes} nodes / {node_cats} node cats / {edge_cats} edge cats is not enumerable"
            )));
        }
        Ok(space)
    }

    pub fn n_edge_slots(&self) -> usize {
        self.n_nodes * (self.n_nodes - 1) / 2
    }

    pub fn n_dims(&self) -> usize {
        self.n_nodes + self.n_edge_slots()
    }

    /// Cardinality of dimension `d` (node slots first, then edge slots).
    pub fn dim_cardinality(&self, d: usize) -> usize {
        if d < self.n_nodes {
            self.node_cats
        } else {
            self.edge_cats
        }
    }

    fn len_checked(&self) -> Option<usize> {
        let mut total = 1usize;
        for d in 0..self.n_dims() {
            total = total.checked_mul(self.dim_cardinality(d))?;
            if total > 1 << 22 {
                return None;
            }
        }
        Some(total)
    }

    pub fn len(&self) -> usize {
        self.len_checked().expect("space validated on construction")
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Edge slot (i, j) with i < j, in enumeration order.
    pub fn edge_slots(&self) -> Vec<(usize, usize)> {
        let n = self.n_nodes;
        (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .collect()
    }

    /// Per-dimension category values of a graph, in enumeration order.
    pub fn dims_of(&self, g: &Graph) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.n_dims());
        for i in 0..self.n_nodes {
            dims.push(g.node_type(i) as usize);
        }
        for (i, j) in self.edge_slots() {
            dims.push(g.edge_type(i, j) as usize);
        }
        dims
    }

    pub fn graph_from_dims(&self, dims: &[usize]) -> Graph {
        let node_types: Vec<u8> = dims[..self.n_nodes].iter().map(|&v| v as u8).collect();
        let edges: Vec<(usize, usize, u8)> = self
            .edge_slots()
            .iter()
            .zip(&dims[self.n_nodes..])
            .filter(|(_, &v)| v != 0)
            .map(|(&(i, j), &v)| (i, j, v as u8))
            .collect();
        Graph::from_edges(node_types, &edges).expect("dims are structurally valid")
    }

    pub fn index_of(&self, g: &Graph) -> usize {
        let mut idx = 0usize;
        for (d, v) in self.dims_of(g).iter().enumerate() {
            idx = idx * self.dim_cardinality(d) + v;
        }
        idx
    }

    pub fn graph_at(&self, mut idx: usize) -> Graph {
        let n_dims = self.n_dims();
        let mut dims = vec![0usize; n_dims];
        for d in (0..n_dims).rev() {
            let c = self.dim_cardinality(d);
            dims[d] = idx % c;
            idx /= c;
        }
        self.graph_from_dims(&dims)
    }

    pub fn iter(&self) -> impl Iterator<Item = Graph> + '_ {
        (0..self.len()).map(|i| self.graph_at(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        // 0 - 1 - 2
        Graph::from_adjacency(3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn rejects_asymmetric_matrix() {
        let err = Graph::new(vec![0, 0], vec![0, 1, 0, 0]).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn rejects_nonzero_diagonal() {
        assert!(Graph::new(vec![0], vec![1]).is_err());
    }

    #[test]
    fn identity_permutation_is_noop() {
        let g = path3();
        let p = Permutation::identity(3);
        assert_eq!(g.permute(&p).unwrap(), g);
    }

    #[test]
    fn two_node_swap_preserves_symmetric_edge() {
        let g = Graph::from_edges(vec![0, 1], &[(0, 1, 1)]).unwrap();
        let p = Permutation::new(vec![1, 0]).unwrap();
        let h = g.permute(&p).unwrap();
        assert_eq!(h.node_types(), &[1, 0]);
        assert_eq!(h.edge_type(0, 1), 1);
    }

    #[test]
    fn path_swap_end_to_end() {
        // Path 0-1-2 with ends swapped is the path 2-1-0: same degrees,
        // same edge multiset under the relabeling.
        let g = path3();
        let p = Permutation::new(vec![2, 1, 0]).unwrap();
        let h = g.permute(&p).unwrap();
        assert_eq!(h.edge_type(2, 1), 1);
        assert_eq!(h.edge_type(1, 0), 1);
        assert_eq!(h.edge_type(0, 2), 0);
        let mut degs_g: Vec<usize> = (0..3).map(|i| g.degree(i)).collect();
        let mut degs_h: Vec<usize> = (0..3).map(|i| h.degree(i)).collect();
        degs_g.sort_unstable();
        degs_h.sort_unstable();
        assert_eq!(degs_g, degs_h);
    }

    #[test]
    fn permute_size_mismatch_errors() {
        let g = path3();
        let p = Permutation::identity(4);
        assert!(g.permute(&p).is_err());
    }

    #[test]
    fn permute_then_inverse_roundtrips() {
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let n = 2 + rng.below(6);
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.bernoulli(0.4) {
                        edges.push((i, j, 1 + rng.below(2) as u8));
                    }
                }
            }
            let nodes: Vec<u8> = (0..n).map(|_| rng.below(3) as u8).collect();
            let g = Graph::from_edges(nodes, &edges).unwrap();
            let p = Permutation::random(n, &mut rng);
            let back = g.permute(&p).unwrap().permute(&p.inverse()).unwrap();
            assert_eq!(back, g);
        }
    }

    #[test]
    fn community_sizes_in_range() {
        let graphs = gen_community_small(100, 7).unwrap();
        assert_eq!(graphs.len(), 100);
        for g in &graphs {
            assert!(g.n_nodes() >= 12 && g.n_nodes() <= 20);
            assert_eq!(g.n_nodes() % 2, 0);
        }
    }

    #[test]
    fn community_p1_gives_two_cliques() {
        let graphs = gen_community_small_p(1, 3, 1.0).unwrap();
        let g = &graphs[0];
        let half = g.n_nodes() / 2;
        for (lo, hi) in [(0, half), (half, g.n_nodes())] {
            for i in lo..hi {
                for j in (i + 1)..hi {
                    assert_eq!(g.edge_type(i, j), 1, "missing clique edge ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn community_within_density_near_p() {
        let graphs = gen_community_small(1000, 99).unwrap();
        let mut present = 0usize;
        let mut total = 0usize;
        for g in &graphs {
            let half = g.n_nodes() / 2;
            for (lo, hi) in [(0, half), (half, g.n_nodes())] {
                for i in lo..hi {
                    for j in (i + 1)..hi {
                        total += 1;
                        if g.edge_type(i, j) != 0 {
                            present += 1;
                        }
                    }
                }
            }
        }
        let density = present as f64 / total as f64;
        assert!((density - 0.7).abs() < 0.02, "density {density}");
    }

    #[test]
    fn grid_2x2() {
        let graphs = gen_grid(50, 2, 2, 1).unwrap();
        for g in &graphs {
            assert_eq!(g.n_nodes(), 4);
            assert_eq!(g.edge_count(), 4);
        }
    }

    #[test]
    fn grid_3x3_structure() {
        let graphs = gen_grid(20, 3, 3, 1).unwrap();
        let g = &graphs[0];
        assert_eq!(g.n_nodes(), 9);
        assert_eq!(g.edge_count(), 12);
        let mut degs: Vec<usize> = (0..9).map(|i| g.degree(i)).collect();
        degs.sort_unstable();
        assert_eq!(degs, vec![2, 2, 2, 2, 3, 3, 3, 3, 4]);
    }

    #[test]
    fn grid_paper_scale_node_range() {
        let graphs = gen_grid(100, 10, 20, 4).unwrap();
        assert_eq!(graphs.len(), 100);
        for g in &graphs {
            assert!(g.n_nodes() >= 100 && g.n_nodes() <= 400);
        }
    }

    #[test]
    fn generators_deterministic() {
        let a = gen_community_small(10, 42).unwrap();
        let b = gen_community_small(10, 42).unwrap();
        assert_eq!(a, b);
        let c = gen_grid(5, 2, 4, 9).unwrap();
        let d = gen_grid(5, 2, 4, 9).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn parse_single_node() {
        let g = parse_graph_record(r#"{"n":1,"nodes":[0],"edges":[]}"#).unwrap();
        assert_eq!(g.n_nodes(), 1);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn parse_fills_symmetry() {
        let g = parse_graph_record(r#"{"n":2,"nodes":[0,0],"edges":[[0,1,2]]}"#).unwrap();
        assert_eq!(g.edge_type(0, 1), 2);
        assert_eq!(g.edge_type(1, 0), 2);
    }

    #[test]
    fn parse_rejects_bad_records() {
        // i >= j
        let err = parse_graph_record(r#"{"n":2,"nodes":[0,0],"edges":[[1,0,1]]}"#).unwrap_err();
        assert!(err.to_string().contains("edges[0]"), "{err}");
        // out of range endpoint
        assert!(parse_graph_record(r#"{"n":2,"nodes":[0,0],"edges":[[0,5,1]]}"#).is_err());
        // explicit absent edge
        assert!(parse_graph_record(r#"{"n":2,"nodes":[0,0],"edges":[[0,1,0]]}"#).is_err());
        // node count mismatch
        assert!(parse_graph_record(r#"{"n":3,"nodes":[0,0],"edges":[]}"#).is_err());
        // garbage
        assert!(parse_graph_record("not json").is_err());
    }

    #[test]
    fn roundtrip_random_graphs() {
        let mut rng = Rng::new(17);
        for _ in 0..50 {
            let n = 1 + rng.below(8);
            let nodes: Vec<u8> = (0..n).map(|_| rng.below(4) as u8).collect();
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.bernoulli(0.5) {
                        edges.push((i, j, 1 + rng.below(3) as u8));
                    }
                }
            }
            let g = Graph::from_edges(nodes, &edges).unwrap();
            let back = parse_graph_record(&serialize_graph(&g)).unwrap();
            assert_eq!(back, g);
        }
    }

    #[test]
    fn space_roundtrip_indexing() {
        let space = GraphSpace::new(3, 2, 2).unwrap();
        assert_eq!(space.len(), 2usize.pow(3) * 2usize.pow(3));
        for idx in 0..space.len() {
            let g = space.graph_at(idx);
            assert_eq!(space.index_of(&g), idx);
        }
    }

    #[test]
    fn space_rejects_huge() {
        assert!(GraphSpace::new(10, 4, 4).is_err());
    }
}
