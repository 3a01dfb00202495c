//! Structural graph features fed to the network alongside the categorical
//! encodings.
//!
//! Per node: participation counts in k-cycles (k = 3, 4, 5) and a flag for
//! membership in the largest connected component. Per graph: total k-cycle
//! counts (k = 3..6), the number of connected components, optional valency
//! and molecular-weight sums when a valence table is configured, and a
//! sinusoidal embedding of the time coordinate.
//!
//! Cycle counts are exact: a depth-first enumeration of simple paths that
//! close back at the anchor vertex, with the last hop resolved by a bitset
//! intersection. Counts are log-compressed (`ln(1+x)`) before entering the
//! network so dense graphs do not blow up activation scales.

use crate::graph::Graph;
use serde::{Deserialize, Serialize};

pub const NODE_FEAT_DIM: usize = 4;
pub const TIME_EMBED_DIM: usize = 16;
/// 4 cycle totals + component count + valency sum + molecular weight.
pub const GLOBAL_FEAT_DIM: usize = 7 + TIME_EMBED_DIM;

/// Per-category valence caps and atomic weights for molecular features and
/// validity checks. Edge category indices are interpreted as bond orders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValenceTable {
    /// Max summed bond order per node category.
    pub max_valence: Vec<f64>,
    /// Per node category weight contribution.
    pub atomic_weight: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct StructuralFeatures {
    /// `[n][NODE_FEAT_DIM]`, permutation-equivariant.
    pub node_features: Vec<Vec<f64>>,
    /// `[GLOBAL_FEAT_DIM]`, permutation-invariant.
    pub global_features: Vec<f64>,
}

struct BitAdjacency {
    words: usize,
    rows: Vec<Vec<u64>>,
    neighbors: Vec<Vec<u32>>,
}

impl BitAdjacency {
    fn new(g: &Graph) -> Self {
        let n = g.n_nodes();
        let words = n.div_ceil(64);
        let rows = g.adjacency_bits();
        let neighbors = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i && g.edge_type(i, j) != 0)
                    .map(|j| j as u32)
                    .collect()
            })
            .collect();
        BitAdjacency {
            words,
            rows,
            neighbors,
        }
    }

    #[inline]
    fn popcount_and3(&self, a: usize, b: usize, exclude: &[u64]) -> u64 {
        self.rows[a]
            .iter()
            .zip(&self.rows[b])
            .zip(exclude)
            .map(|((&x, &y), &e)| (x & y & !e).count_ones() as u64)
            .sum()
    }
}

/// Directed closed walks of length `k` from `anchor` with distinct interior
/// vertices; each k-cycle through the anchor yields exactly two.
fn closed_paths(adj: &BitAdjacency, anchor: usize, cur: usize, remaining: usize, visited: &mut [u64]) -> u64 {
    if remaining == 1 {
        // Last vertex: adjacent to both `cur` and the anchor, unvisited.
        return adj.popcount_and3(cur, anchor, visited);
    }
    let mut total = 0;
    for &w in &adj.neighbors[cur] {
        let (wi, wb) = (w as usize / 64, 1u64 << (w % 64));
        if visited[wi] & wb != 0 {
            continue;
        }
        visited[wi] |= wb;
        total += closed_paths(adj, anchor, w as usize, remaining - 1, visited);
        visited[wi] &= !wb;
    }
    total
}

/// Number of k-cycles through each node, exact.
pub fn cycles_per_node(g: &Graph, k: usize) -> Vec<u64> {
    assert!(k >= 3, "cycles need length >= 3");
    let n = g.n_nodes();
    let adj = BitAdjacency::new(g);
    let mut out = vec![0u64; n];
    let mut visited = vec![0u64; adj.words];
    for (anchor, slot) in out.iter_mut().enumerate() {
        visited.iter_mut().for_each(|w| *w = 0);
        visited[anchor / 64] |= 1 << (anchor % 64);
        *slot = closed_paths(&adj, anchor, anchor, k - 1, &mut visited) / 2;
        visited[anchor / 64] &= !(1 << (anchor % 64));
    }
    out
}

/// Total number of k-cycles in the graph.
pub fn cycle_total(g: &Graph, k: usize) -> u64 {
    cycles_per_node(g, k).iter().sum::<u64>() / k as u64
}

/// Connected components of the binarized graph: `(count, component id per
/// node, size of the largest component)`.
pub fn connected_components(g: &Graph) -> (usize, Vec<usize>, usize) {
    let n = g.n_nodes();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, j, _) in g.edges() {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
        }
    }
    let mut ids = vec![usize::MAX; n];
    let mut sizes: Vec<usize> = Vec::new();
    let mut count = 0;
    let mut comp = vec![0usize; n];
    for (i, slot) in comp.iter_mut().enumerate() {
        let root = find(&mut parent, i);
        if ids[root] == usize::MAX {
            ids[root] = count;
            sizes.push(0);
            count += 1;
        }
        *slot = ids[root];
        sizes[ids[root]] += 1;
    }
    let largest = sizes.iter().copied().max().unwrap_or(0);
    (count, comp, largest)
}

/// Sinusoidal embedding of `t` in [0, 1]: interleaved sin/cos at
/// geometrically spaced frequencies.
pub fn time_embedding(t: f64) -> Vec<f64> {
    let half = TIME_EMBED_DIM / 2;
    let mut out = Vec::with_capacity(TIME_EMBED_DIM);
    for i in 0..half {
        let freq = 100.0f64.powf(i as f64 / (half - 1) as f64);
        out.push((freq * t).sin());
        out.push((freq * t).cos());
    }
    out
}

/// All structural features for a graph at time `t`.
pub fn structural_features(
    g: &Graph,
    t: f64,
    valence: Option<&ValenceTable>,
) -> StructuralFeatures {
    let n = g.n_nodes();
    let c3 = cycles_per_node(g, 3);
    let c4 = cycles_per_node(g, 4);
    let c5 = cycles_per_node(g, 5);
    let (n_components, comp, largest) = connected_components(g);
    let compress = |x: f64| (1.0 + x).ln();

    let mut node_features = Vec::with_capacity(n);
    let mut sizes = vec![0usize; n_components];
    for &c in &comp {
        sizes[c] += 1;
    }
    for i in 0..n {
        node_features.push(vec![
            compress(c3[i] as f64),
            compress(c4[i] as f64),
            compress(c5[i] as f64),
            if sizes[comp[i]] == largest { 1.0 } else { 0.0 },
        ]);
    }

    let total3: u64 = c3.iter().sum::<u64>() / 3;
    let total4: u64 = c4.iter().sum::<u64>() / 4;
    let total5: u64 = c5.iter().sum::<u64>() / 5;
    let total6 = cycle_total(g, 6);

    let (valency_sum, weight_sum) = match valence {
        Some(table) => {
            let mut v = 0.0;
            let mut w = 0.0;
            for i in 0..n {
                w += table.atomic_weight[g.node_type(i) as usize];
                for j in 0..n {
                    if j != i {
                        v += g.edge_type(i, j) as f64;
                    }
                }
            }
            (v / 2.0, w)
        }
        None => (0.0, 0.0),
    };

    let mut global_features = vec![
        compress(total3 as f64),
        compress(total4 as f64),
        compress(total5 as f64),
        compress(total6 as f64),
        compress(n_components as f64),
        compress(valency_sum),
        compress(weight_sum),
    ];
    global_features.extend(time_embedding(t));
    debug_assert_eq!(global_features.len(), GLOBAL_FEAT_DIM);

    StructuralFeatures {
        node_features,
        global_features,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Permutation;
    use crate::rng::Rng;

    /// Independent oracle: enumerate canonical vertex sequences
    /// (v0 minimal, second < last to kill reflection) and check adjacency.
    fn brute_cycles_per_node(g: &Graph, k: usize) -> Vec<u64> {
        let n = g.n_nodes();
        let mut counts = vec![0u64; n];
        let mut seq = Vec::with_capacity(k);
        fn rec(g: &Graph, k: usize, seq: &mut Vec<usize>, counts: &mut [u64]) {
            if seq.len() == k {
                let first = seq[0];
                let last = *seq.last().unwrap();
                if g.edge_type(last, first) != 0 && seq[1] < *seq.last().unwrap() {
                    for &v in seq.iter() {
                        counts[v] += 1;
                    }
                }
                return;
            }
            let prev = *seq.last().unwrap();
            let start_min = seq[0];
            for v in 0..g.n_nodes() {
                if v <= start_min || seq.contains(&v) || g.edge_type(prev, v) == 0 {
                    continue;
                }
                seq.push(v);
                rec(g, k, seq, counts);
                seq.pop();
            }
        }
        for v0 in 0..n {
            seq.clear();
            seq.push(v0);
            rec(g, k, &mut seq, &mut counts);
        }
        counts
    }

    #[test]
    fn triangle_graph_counts() {
        let g = Graph::from_adjacency(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(cycles_per_node(&g, 3), vec![1, 1, 1]);
        assert_eq!(cycle_total(&g, 3), 1);
        assert_eq!(cycle_total(&g, 4), 0);
    }

    #[test]
    fn tree_has_no_cycles() {
        let g = Graph::from_adjacency(5, &[(0, 1), (0, 2), (1, 3), (1, 4)]).unwrap();
        for k in 3..=6 {
            assert_eq!(cycle_total(&g, k), 0, "k={k}");
        }
    }

    #[test]
    fn k4_counts() {
        let g = Graph::from_adjacency(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]).unwrap();
        // K4 has 4 triangles (3 per node) and 3 four-cycles, no 5-cycles.
        assert_eq!(cycles_per_node(&g, 3), vec![3, 3, 3, 3]);
        assert_eq!(cycle_total(&g, 3), 4);
        assert_eq!(cycle_total(&g, 4), 3);
        assert_eq!(cycle_total(&g, 5), 0);
    }

    #[test]
    fn six_cycle_ring() {
        let g =
            Graph::from_adjacency(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)]).unwrap();
        assert_eq!(cycle_total(&g, 6), 1);
        assert_eq!(cycle_total(&g, 3), 0);
        assert_eq!(cycle_total(&g, 4), 0);
        assert_eq!(cycle_total(&g, 5), 0);
    }

    #[test]
    fn cycles_match_brute_force_on_all_small_graphs() {
        // Every graph on 5 nodes (1024 edge subsets), plus random 6-node
        // graphs; checks k = 3, 4, 5 per node and 6 totals.
        for bits in 0u32..1024 {
            let mut edges = Vec::new();
            let mut b = 0;
            for i in 0..5 {
                for j in (i + 1)..5 {
                    if bits >> b & 1 == 1 {
                        edges.push((i, j));
                    }
                    b += 1;
                }
            }
            let g = Graph::from_adjacency(5, &edges).unwrap();
            for k in 3..=5 {
                assert_eq!(
                    cycles_per_node(&g, k),
                    brute_cycles_per_node(&g, k),
                    "bits={bits} k={k}"
                );
            }
        }
        let mut rng = Rng::new(55);
        for _ in 0..60 {
            let mut edges = Vec::new();
            for i in 0..6 {
                for j in (i + 1)..6 {
                    if rng.bernoulli(0.5) {
                        edges.push((i, j));
                    }
                }
            }
            let g = Graph::from_adjacency(6, &edges).unwrap();
            for k in 3..=6 {
                assert_eq!(cycles_per_node(&g, k), brute_cycles_per_node(&g, k), "k={k}");
            }
        }
    }

    #[test]
    fn components_and_largest() {
        let g = Graph::from_adjacency(5, &[(0, 1), (2, 3)]).unwrap();
        let (count, comp, largest) = connected_components(&g);
        assert_eq!(count, 3);
        assert_eq!(comp[0], comp[1]);
        assert_eq!(comp[2], comp[3]);
        assert_ne!(comp[0], comp[2]);
        assert_eq!(largest, 2);
    }

    #[test]
    fn features_shapes_and_trivial_values() {
        let tri = Graph::from_adjacency(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let f = structural_features(&tri, 0.5, None);
        assert_eq!(f.node_features.len(), 3);
        assert_eq!(f.node_features[0].len(), NODE_FEAT_DIM);
        assert_eq!(f.global_features.len(), GLOBAL_FEAT_DIM);
        // Each node sits on one triangle.
        for nf in &f.node_features {
            assert!((nf[0] - 2.0f64.ln()).abs() < 1e-12);
            assert_eq!(nf[3], 1.0);
        }

        let two_edges = Graph::from_adjacency(4, &[(0, 1), (2, 3)]).unwrap();
        let f = structural_features(&two_edges, 0.0, None);
        // ln(1 + 2) for two components.
        assert!((f.global_features[4] - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn features_equivariant_under_permutation() {
        let mut rng = Rng::new(9);
        for _ in 0..20 {
            let n = 4 + rng.below(4);
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.bernoulli(0.45) {
                        edges.push((i, j));
                    }
                }
            }
            let g = Graph::from_adjacency(n, &edges).unwrap();
            let p = Permutation::random(n, &mut rng);
            let gp = g.permute(&p).unwrap();
            let f = structural_features(&g, 0.3, None);
            let fp = structural_features(&gp, 0.3, None);
            assert_eq!(f.global_features, fp.global_features);
            for i in 0..n {
                assert_eq!(f.node_features[i], fp.node_features[p.map(i)], "node {i}");
            }
        }
    }

    #[test]
    fn valence_features_when_configured() {
        let table = ValenceTable {
            max_valence: vec![4.0, 2.0],
            atomic_weight: vec![12.0, 16.0],
        };
        // Two nodes, double bond between them.
        let g = Graph::from_edges(vec![0, 1], &[(0, 1, 2)]).unwrap();
        let f = structural_features(&g, 0.0, Some(&table));
        // Valency sum: each endpoint has bond order 2, total/2 = 2.
        assert!((f.global_features[5] - 3.0f64.ln()).abs() < 1e-12);
        // Weight 12 + 16 = 28.
        assert!((f.global_features[6] - 29.0f64.ln()).abs() < 1e-12);
        let bare = structural_features(&g, 0.0, None);
        assert_eq!(bare.global_features[5], 0.0);
        assert_eq!(bare.global_features[6], 0.0);
    }

    #[test]
    fn time_embedding_varies() {
        let a = time_embedding(0.1);
        let b = time_embedding(0.9);
        assert_eq!(a.len(), TIME_EMBED_DIM);
        assert_ne!(a, b);
    }
}
