//! Minibatch optimal-transport pairing of noise and data graphs.
//!
//! Within a training batch the noise draws and the data graphs are paired
//! either index-aligned (independent coupling) or by an exact minimum-cost
//! assignment under the Hamming cost
//!
//! ```text
//! H(g0, g1) = #{i : v0_i != v1_i} + lambda * #{i < j : e0_ij != e1_ij}
//! ```
//!
//! Batch marginals are uniform, so the exact assignment **is** the minibatch
//! OT plan. The solver is the O(B^3) shortest-augmenting-path form of the
//! Hungarian algorithm; batches are small enough that exactness is cheaper
//! than an entropic approximation and it strengthens the test oracles.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::prior::Prior;
use crate::rng::Rng;

/// Finite sentinel for pairs of different node counts; large enough that the
/// solver avoids them whenever any size-matched assignment exists.
pub const SIZE_MISMATCH_COST: f64 = 1e9;

/// Hamming distance between two equally sized graphs. Node mismatches count
/// 1 each; unordered edge-slot mismatches count `lambda` each.
pub fn hamming(g0: &Graph, g1: &Graph, lambda: f64) -> Result<f64> {
    let n = g0.n_nodes();
    if g1.n_nodes() != n {
        return Err(Error::precondition(format!(
            "hamming distance needs equal sizes, got {n} and {}",
            g1.n_nodes()
        )));
    }
    let mut nodes = 0usize;
    for i in 0..n {
        if g0.node_type(i) != g1.node_type(i) {
            nodes += 1;
        }
    }
    let mut edges = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            if g0.edge_type(i, j) != g1.edge_type(i, j) {
                edges += 1;
            }
        }
    }
    Ok(nodes as f64 + lambda * edges as f64)
}

/// Pairwise-cost matrix: row = noise sample, column = data sample.
#[derive(Clone, Debug)]
pub struct CostMatrix {
    entries: Vec<f64>,
    size: usize,
}

impl CostMatrix {
    pub fn from_entries(entries: Vec<f64>, size: usize) -> Result<Self> {
        if entries.len() != size * size {
            return Err(Error::Shape(format!(
                "{} entries for a {size}x{size} matrix",
                entries.len()
            )));
        }
        if entries.iter().any(|&c| !c.is_finite() || c < 0.0) {
            return Err(Error::precondition("costs must be finite and non-negative"));
        }
        Ok(CostMatrix { entries, size })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    pub fn size(&self) -> usize {
        self.size
    }
}

/// Hamming costs between every noise/data pair. Cross-size pairs get the
/// [`SIZE_MISMATCH_COST`] sentinel so an assignment always exists.
pub fn batch_cost_matrix(noise: &[Graph], data: &[Graph], lambda: f64) -> Result<CostMatrix> {
    if noise.is_empty() {
        return Err(Error::precondition("empty batch"));
    }
    if noise.len() != data.len() {
        return Err(Error::precondition(format!(
            "batch sizes differ: {} noise vs {} data",
            noise.len(),
            data.len()
        )));
    }
    let b = noise.len();
    let mut entries = vec![0.0; b * b];
    for (i, g0) in noise.iter().enumerate() {
        for (j, g1) in data.iter().enumerate() {
            entries[i * b + j] = if g0.n_nodes() == g1.n_nodes() {
                hamming(g0, g1, lambda)?
            } else {
                SIZE_MISMATCH_COST
            };
        }
    }
    CostMatrix::from_entries(entries, b)
}

/// How a batch is paired.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    Independent,
    Ot,
}

/// A pairing of a noise batch with a data batch: noise `i` goes with data
/// `assignment[i]`.
#[derive(Clone, Debug)]
pub struct CouplingPlan {
    pub assignment: Vec<usize>,
    pub total_cost: f64,
    pub mode: CouplingMode,
}

/// Exact minimum-cost perfect assignment (Hungarian algorithm, shortest
/// augmenting paths with row/column potentials).
pub fn solve_assignment(cost: &CostMatrix) -> Result<CouplingPlan> {
    let n = cost.size();
    // Potentials and matching are 1-indexed; index 0 is the virtual root.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        // Augment along the recorded path.
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[matched_row[j] - 1] = j - 1;
    }
    let total_cost = (0..n).map(|i| cost.get(i, assignment[i])).sum();
    Ok(CouplingPlan {
        assignment,
        total_cost,
        mode: CouplingMode::Ot,
    })
}

/// Pair a noise batch with a data batch under the requested mode.
pub fn couple(
    noise: &[Graph],
    data: &[Graph],
    lambda: f64,
    mode: CouplingMode,
) -> Result<Vec<(Graph, Graph)>> {
    let plan = couple_plan(noise, data, lambda, mode)?;
    Ok(plan
        .assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| (noise[i].clone(), data[j].clone()))
        .collect())
}

/// Like [`couple`] but returns the assignment instead of cloned pairs.
pub fn couple_plan(
    noise: &[Graph],
    data: &[Graph],
    lambda: f64,
    mode: CouplingMode,
) -> Result<CouplingPlan> {
    if noise.len() != data.len() {
        return Err(Error::precondition("batch sizes differ"));
    }
    if noise.is_empty() {
        return Err(Error::precondition("empty batch"));
    }
    match mode {
        CouplingMode::Independent => {
            let cost = batch_cost_matrix(noise, data, lambda)?;
            let assignment: Vec<usize> = (0..noise.len()).collect();
            let total_cost = (0..noise.len()).map(|i| cost.get(i, i)).sum();
            Ok(CouplingPlan {
                assignment,
                total_cost,
                mode,
            })
        }
        CouplingMode::Ot => {
            let cost = batch_cost_matrix(noise, data, lambda)?;
            solve_assignment(&cost)
        }
    }
}

/// Size-matched noise batch: one prior draw per data graph, with the same
/// node count, so the Hamming cost is always well defined.
pub fn sample_noise_batch(data: &[Graph], prior: &Prior, rng: &mut Rng) -> Vec<Graph> {
    data.iter()
        .map(|g| prior.sample_graph(g.n_nodes(), rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_community_small, Permutation};

    fn g(nodes: Vec<u8>, edges: &[(usize, usize, u8)]) -> Graph {
        Graph::from_edges(nodes, edges).unwrap()
    }

    #[test]
    fn hamming_identity_zero() {
        let a = g(vec![0, 1, 0], &[(0, 1, 1)]);
        assert_eq!(hamming(&a, &a, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn hamming_single_node_mismatch() {
        let a = g(vec![0, 0], &[(0, 1, 1)]);
        let b = g(vec![0, 1], &[(0, 1, 1)]);
        assert_eq!(hamming(&a, &b, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn hamming_weighted_hand_count() {
        // 2 node mismatches, 2 edge mismatches, lambda 0.5 -> 3.0
        let a = g(vec![0, 0, 0], &[(0, 1, 1), (1, 2, 1)]);
        let b = g(vec![1, 1, 0], &[(0, 1, 2)]);
        assert_eq!(hamming(&a, &b, 0.5).unwrap(), 3.0);
    }

    #[test]
    fn hamming_symmetric_and_permutation_invariant() {
        let mut rng = Rng::new(2);
        for _ in 0..50 {
            let n = 3 + rng.below(4);
            let mk = |rng: &mut Rng| {
                let nodes: Vec<u8> = (0..n).map(|_| rng.below(2) as u8).collect();
                let mut edges = Vec::new();
                for i in 0..n {
                    for j in (i + 1)..n {
                        let ty = rng.below(3) as u8;
                        if ty != 0 {
                            edges.push((i, j, ty));
                        }
                    }
                }
                g(nodes, &edges)
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let lambda = rng.uniform() * 2.0;
            let d_ab = hamming(&a, &b, lambda).unwrap();
            let d_ba = hamming(&b, &a, lambda).unwrap();
            assert_eq!(d_ab, d_ba);
            let p = Permutation::random(n, &mut rng);
            let d_perm = hamming(&a.permute(&p).unwrap(), &b.permute(&p).unwrap(), lambda).unwrap();
            assert_eq!(d_ab, d_perm);
        }
    }

    #[test]
    fn hamming_size_mismatch_errors() {
        let a = g(vec![0, 0], &[]);
        let b = g(vec![0, 0, 0], &[]);
        assert!(hamming(&a, &b, 1.0).is_err());
    }

    #[test]
    fn cost_matrix_matches_per_entry_recomputation() {
        let mut rng = Rng::new(6);
        let batch: Vec<Graph> = (0..4)
            .map(|_| {
                let nodes: Vec<u8> = (0..3).map(|_| rng.below(2) as u8).collect();
                let mut edges = Vec::new();
                for i in 0..3 {
                    for j in (i + 1)..3 {
                        if rng.bernoulli(0.5) {
                            edges.push((i, j, 1));
                        }
                    }
                }
                g(nodes, &edges)
            })
            .collect();
        let other: Vec<Graph> = batch.iter().rev().cloned().collect();
        let cm = batch_cost_matrix(&batch, &other, 1.0).unwrap();
        for (i, gi) in batch.iter().enumerate() {
            for (j, gj) in other.iter().enumerate() {
                assert_eq!(cm.get(i, j), hamming(gi, gj, 1.0).unwrap());
            }
        }
    }

    #[test]
    fn cost_matrix_trivial_cases() {
        let a = g(vec![0, 0], &[(0, 1, 1)]);
        let b = g(vec![0, 1], &[]);
        let cm =
            batch_cost_matrix(std::slice::from_ref(&a), std::slice::from_ref(&b), 1.0).unwrap();
        assert_eq!(cm.size(), 1);
        assert_eq!(cm.get(0, 0), hamming(&a, &b, 1.0).unwrap());

        let same = vec![a.clone(), a.clone(), a.clone()];
        let cm = batch_cost_matrix(&same, &same, 1.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(cm.get(i, j), 0.0);
            }
        }

        assert!(batch_cost_matrix(&[], &[], 1.0).is_err());
    }

    #[test]
    fn assignment_diagonal_and_antidiagonal() {
        let cm = CostMatrix::from_entries(vec![0.0, 9.0, 9.0, 0.0], 2).unwrap();
        let plan = solve_assignment(&cm).unwrap();
        assert_eq!(plan.assignment, vec![0, 1]);
        assert_eq!(plan.total_cost, 0.0);

        let cm = CostMatrix::from_entries(vec![9.0, 0.0, 0.0, 9.0], 2).unwrap();
        let plan = solve_assignment(&cm).unwrap();
        assert_eq!(plan.assignment, vec![1, 0]);
        assert_eq!(plan.total_cost, 0.0);
    }

    fn brute_force_min_cost(cm: &CostMatrix) -> f64 {
        fn go(cm: &CostMatrix, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == cm.size() {
                *best = best.min(acc);
                return;
            }
            for j in 0..cm.size() {
                if !used[j] {
                    used[j] = true;
                    go(cm, row + 1, used, acc + cm.get(row, j), best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        go(cm, 0, &mut vec![false; cm.size()], 0.0, &mut best);
        best
    }

    #[test]
    fn assignment_optimal_vs_exhaustive() {
        let mut rng = Rng::new(88);
        for trial in 0..60 {
            let n = 2 + trial % 5; // up to 6x6
            let entries: Vec<f64> = (0..n * n).map(|_| (rng.below(1000) as f64) / 10.0).collect();
            let cm = CostMatrix::from_entries(entries, n).unwrap();
            let plan = solve_assignment(&cm).unwrap();
            let best = brute_force_min_cost(&cm);
            assert!(
                (plan.total_cost - best).abs() < 1e-9,
                "n={n}: got {} expected {best}",
                plan.total_cost
            );
            let mut seen = vec![false; n];
            for &j in &plan.assignment {
                assert!(!seen[j], "assignment not a bijection");
                seen[j] = true;
            }
        }
    }

    #[test]
    fn couple_independent_is_index_aligned() {
        let batch = gen_community_small(4, 5).unwrap();
        let pairs = couple(&batch, &batch, 1.0, CouplingMode::Independent).unwrap();
        for (i, (a, b)) in pairs.iter().enumerate() {
            assert_eq!(a, &batch[i]);
            assert_eq!(b, &batch[i]);
        }
    }

    #[test]
    fn couple_same_multiset_reaches_zero_cost() {
        let mut rng = Rng::new(10);
        let data = gen_community_small(6, 77).unwrap();
        let mut noise = data.clone();
        rng.shuffle(&mut noise);
        let plan = couple_plan(&noise, &data, 1.0, CouplingMode::Ot).unwrap();
        assert_eq!(plan.total_cost, 0.0);
    }

    #[test]
    fn ot_cost_never_exceeds_independent() {
        let prior = crate::prior::empirical_prior(&gen_community_small(50, 3).unwrap()).unwrap();
        let mut rng = Rng::new(41);
        for seed in 0..20 {
            let data = gen_community_small(8, 1000 + seed).unwrap();
            let noise = sample_noise_batch(&data, &prior, &mut rng);
            let ot = couple_plan(&noise, &data, 1.0, CouplingMode::Ot).unwrap();
            let ind = couple_plan(&noise, &data, 1.0, CouplingMode::Independent).unwrap();
            assert!(ot.total_cost <= ind.total_cost + 1e-9);
        }
    }

    #[test]
    fn ot_cost_invariant_under_shared_relabeling() {
        // Applying one permutation per node count to every graph in both
        // batches preserves each cost entry, hence the optimal total cost.
        let mut rng = Rng::new(12);
        let data = gen_community_small(8, 123).unwrap();
        let prior = crate::prior::empirical_prior(&data).unwrap();
        let noise = sample_noise_batch(&data, &prior, &mut rng);
        let base = couple_plan(&noise, &data, 1.0, CouplingMode::Ot).unwrap();

        let mut perms: std::collections::HashMap<usize, Permutation> = Default::default();
        let mut relabel = |g: &Graph, rng: &mut Rng| {
            let p = perms
                .entry(g.n_nodes())
                .or_insert_with(|| Permutation::random(g.n_nodes(), rng));
            g.permute(p).unwrap()
        };
        let noise_p: Vec<Graph> = noise.iter().map(|g| relabel(g, &mut rng)).collect();
        let data_p: Vec<Graph> = data.iter().map(|g| relabel(g, &mut rng)).collect();
        let permuted = couple_plan(&noise_p, &data_p, 1.0, CouplingMode::Ot).unwrap();
        assert!(
            (base.total_cost - permuted.total_cost).abs() < 1e-9,
            "{} vs {}",
            base.total_cost,
            permuted.total_cost
        );
    }
}
