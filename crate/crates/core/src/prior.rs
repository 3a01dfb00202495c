//! Product-of-categoricals reference distribution.
//!
//! The reference distribution factorizes over graph slots: one shared node
//! marginal, one shared edge marginal (with "no edge" included as category
//! 0), plus an empirical distribution over node counts used to size sampled
//! graphs. Using the data marginals rather than uniform noise keeps the
//! reference as close to the data as a product distribution can be, which is
//! what makes the sparse intermediate states informative.

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphSpace};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const PRIOR_FORMAT_VERSION: u32 = 1;

const PROB_SUM_TOL: f64 = 1e-9;

/// Reference distribution: node marginal, edge marginal, and node-count law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub node_marginal: Vec<f64>,
    pub edge_marginal: Vec<f64>,
    /// `size_distribution[k]` is the probability of a graph with k nodes.
    pub size_distribution: Vec<f64>,
}

fn check_prob_vector(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::precondition(format!("{name} is empty")));
    }
    if v.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return Err(Error::precondition(format!("{name} has negative or non-finite entries")));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::precondition(format!("{name} sums to {sum}, expected 1")));
    }
    Ok(())
}

impl Prior {
    pub fn new(
        node_marginal: Vec<f64>,
        edge_marginal: Vec<f64>,
        size_distribution: Vec<f64>,
    ) -> Result<Self> {
        check_prob_vector("node_marginal", &node_marginal)?;
        check_prob_vector("edge_marginal", &edge_marginal)?;
        check_prob_vector("size_distribution", &size_distribution)?;
        Ok(Prior {
            node_marginal,
            edge_marginal,
            size_distribution,
        })
    }

    pub fn node_cats(&self) -> usize {
        self.node_marginal.len()
    }

    pub fn edge_cats(&self) -> usize {
        self.edge_marginal.len()
    }

    pub fn max_nodes(&self) -> usize {
        self.size_distribution.len() - 1
    }

    /// Draw a node count from the size distribution.
    pub fn sample_size(&self, rng: &mut Rng) -> usize {
        rng.categorical(&self.size_distribution)
    }

    /// Draw a graph of `n_nodes` nodes from the product distribution.
    pub fn sample_graph(&self, n_nodes: usize, rng: &mut Rng) -> Graph {
        let node_types: Vec<u8> = (0..n_nodes)
            .map(|_| rng.categorical(&self.node_marginal) as u8)
            .collect();
        let mut edges = Vec::new();
        for i in 0..n_nodes {
            for j in (i + 1)..n_nodes {
                let ty = rng.categorical(&self.edge_marginal) as u8;
                if ty != 0 {
                    edges.push((i, j, ty));
                }
            }
        }
        Graph::from_edges(node_types, &edges).expect("product draw is structurally valid")
    }

    /// Probability of a fixed-size graph under the product distribution.
    pub fn graph_prob(&self, g: &Graph) -> f64 {
        let mut p = 1.0;
        for i in 0..g.n_nodes() {
            p *= self.node_marginal[g.node_type(i) as usize];
        }
        for i in 0..g.n_nodes() {
            for j in (i + 1)..g.n_nodes() {
                p *= self.edge_marginal[g.edge_type(i, j) as usize];
            }
        }
        p
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = PriorFile {
            format_version: PRIOR_FORMAT_VERSION,
            node_marginal: self.node_marginal.clone(),
            edge_marginal: self.edge_marginal.clone(),
            size_distribution: self.size_distribution.clone(),
        };
        let json = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let file: PriorFile = serde_json::from_str(&text)?;
        if file.format_version != PRIOR_FORMAT_VERSION {
            return Err(Error::Parse {
                field: "format_version".into(),
                reason: format!("unsupported version {}", file.format_version),
            });
        }
        Prior::new(file.node_marginal, file.edge_marginal, file.size_distribution)
    }
}

#[derive(Serialize, Deserialize)]
struct PriorFile {
    format_version: u32,
    node_marginal: Vec<f64>,
    edge_marginal: Vec<f64>,
    size_distribution: Vec<f64>,
}

/// Frequency estimate of the prior from a dataset, with category
/// cardinalities inferred from the largest observed index.
pub fn empirical_prior(dataset: &[Graph]) -> Result<Prior> {
    let node_cats = dataset
        .iter()
        .flat_map(|g| g.node_types().iter())
        .map(|&v| v as usize + 1)
        .max()
        .unwrap_or(0);
    let edge_cats = dataset
        .iter()
        .flat_map(|g| g.edges())
        .map(|(_, _, ty)| ty as usize + 1)
        .max()
        .unwrap_or(1)
        .max(2);
    empirical_prior_with(dataset, node_cats.max(1), edge_cats)
}

/// Frequency estimate of the prior with explicit cardinalities.
///
/// Node marginal counts every node; edge marginal counts every unordered
/// pair (i < j) including absent pairs as category 0; the size distribution
/// counts node counts.
pub fn empirical_prior_with(dataset: &[Graph], node_cats: usize, edge_cats: usize) -> Result<Prior> {
    if dataset.is_empty() {
        return Err(Error::precondition("empirical prior needs a non-empty dataset"));
    }
    let mut node_counts = vec![0u64; node_cats];
    let mut edge_counts = vec![0u64; edge_cats];
    let max_n = dataset.iter().map(|g| g.n_nodes()).max().unwrap();
    let mut size_counts = vec![0u64; max_n + 1];
    for g in dataset {
        g.validate_categories(node_cats, edge_cats)?;
        size_counts[g.n_nodes()] += 1;
        for i in 0..g.n_nodes() {
            node_counts[g.node_type(i) as usize] += 1;
            for j in (i + 1)..g.n_nodes() {
                edge_counts[g.edge_type(i, j) as usize] += 1;
            }
        }
    }
    let normalize = |counts: &[u64]| -> Vec<f64> {
        let total: u64 = counts.iter().sum();
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    };
    Prior::new(
        normalize(&node_counts),
        normalize(&edge_counts),
        normalize(&size_counts),
    )
}

/// Euclidean distance between an empirical distribution over a fixed-size
/// graph space and the product distribution with the given marginals.
///
/// Used to check that the empirical product prior is the closest product
/// distribution to the data (closer than random products).
pub fn product_distance(
    dataset: &[Graph],
    space: &GraphSpace,
    node_marginal: &[f64],
    edge_marginal: &[f64],
) -> Result<f64> {
    let mut empirical = vec![0.0; space.len()];
    for g in dataset {
        if g.n_nodes() != space.n_nodes {
            return Err(Error::precondition("dataset graph size does not match space"));
        }
        empirical[space.index_of(g)] += 1.0 / dataset.len() as f64;
    }
    let mut dist2 = 0.0;
    for (idx, &emp) in empirical.iter().enumerate() {
        let g = space.graph_at(idx);
        let mut p = 1.0;
        for i in 0..space.n_nodes {
            p *= node_marginal[g.node_type(i) as usize];
        }
        for (i, j) in space.edge_slots() {
            p *= edge_marginal[g.edge_type(i, j) as usize];
        }
        let d = emp - p;
        dist2 += d * d;
    }
    Ok(dist2.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Permutation;

    #[test]
    fn single_graph_marginals() {
        let g = Graph::from_edges(vec![0, 0], &[(0, 1, 1)]).unwrap();
        let prior = empirical_prior_with(&[g], 2, 2).unwrap();
        assert_eq!(prior.node_marginal, vec![1.0, 0.0]);
        assert_eq!(prior.edge_marginal, vec![0.0, 1.0]);
        assert_eq!(prior.size_distribution[2], 1.0);
    }

    #[test]
    fn balanced_node_categories() {
        let g0 = Graph::from_edges(vec![0, 0], &[]).unwrap();
        let g1 = Graph::from_edges(vec![1, 1], &[]).unwrap();
        let prior = empirical_prior(&[g0, g1]).unwrap();
        assert_eq!(prior.node_marginal, vec![0.5, 0.5]);
    }

    #[test]
    fn random_dataset_matches_direct_counts() {
        let mut rng = Rng::new(23);
        let mut dataset = Vec::new();
        for _ in 0..10 {
            let nodes: Vec<u8> = (0..4).map(|_| rng.below(3) as u8).collect();
            let mut edges = Vec::new();
            for i in 0..4 {
                for j in (i + 1)..4 {
                    let ty = rng.below(3) as u8;
                    if ty != 0 {
                        edges.push((i, j, ty));
                    }
                }
            }
            dataset.push(Graph::from_edges(nodes, &edges).unwrap());
        }
        let prior = empirical_prior_with(&dataset, 3, 3).unwrap();

        // Independent counting pass.
        let mut node_counts = [0usize; 3];
        let mut edge_counts = [0usize; 3];
        for g in &dataset {
            for i in 0..4 {
                node_counts[g.node_type(i) as usize] += 1;
            }
            for i in 0..4 {
                for j in (i + 1)..4 {
                    edge_counts[g.edge_type(i, j) as usize] += 1;
                }
            }
        }
        for k in 0..3 {
            assert!((prior.node_marginal[k] - node_counts[k] as f64 / 40.0).abs() < 1e-12);
            assert!((prior.edge_marginal[k] - edge_counts[k] as f64 / 60.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_dataset_errors() {
        assert!(empirical_prior(&[]).is_err());
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = Rng::new(5);
        let dataset: Vec<Graph> = (0..8)
            .map(|_| {
                let nodes: Vec<u8> = (0..5).map(|_| rng.below(2) as u8).collect();
                let mut edges = Vec::new();
                for i in 0..5 {
                    for j in (i + 1)..5 {
                        if rng.bernoulli(0.5) {
                            edges.push((i, j, 1));
                        }
                    }
                }
                Graph::from_edges(nodes, &edges).unwrap()
            })
            .collect();
        let permuted: Vec<Graph> = dataset
            .iter()
            .map(|g| {
                let p = Permutation::random(g.n_nodes(), &mut rng);
                g.permute(&p).unwrap()
            })
            .collect();
        assert_eq!(
            empirical_prior(&dataset).unwrap(),
            empirical_prior(&permuted).unwrap()
        );
    }

    #[test]
    fn projection_beats_random_products() {
        // The empirical product prior minimizes Euclidean distance to the
        // joint over the product class; check against random products on a
        // small enumerated space.
        let mut rng = Rng::new(31);
        let space = GraphSpace::new(3, 2, 2).unwrap();
        let dataset: Vec<Graph> = (0..20)
            .map(|_| space.graph_at(rng.below(space.len())))
            .collect();
        let prior = empirical_prior_with(&dataset, 2, 2).unwrap();
        let best = product_distance(&dataset, &space, &prior.node_marginal, &prior.edge_marginal)
            .unwrap();
        for _ in 0..1000 {
            let a = rng.uniform();
            let b = rng.uniform();
            let d = product_distance(&dataset, &space, &[a, 1.0 - a], &[b, 1.0 - b]).unwrap();
            assert!(
                best <= d + 1e-12,
                "random product closer than empirical: {d} < {best}"
            );
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = std::env::temp_dir().join("flowgraph-prior-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("prior.json");
        let prior = Prior::new(vec![0.25, 0.75], vec![0.5, 0.25, 0.25], vec![0.0, 1.0]).unwrap();
        prior.save(&path).unwrap();
        let back = Prior::load(&path).unwrap();
        assert_eq!(prior, back);
    }

    #[test]
    fn sample_graph_respects_marginals() {
        let prior = Prior::new(vec![0.3, 0.7], vec![0.6, 0.4], vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let mut rng = Rng::new(77);
        let mut node1 = 0usize;
        let mut edge1 = 0usize;
        let trials = 20_000;
        for _ in 0..trials {
            let n = prior.sample_size(&mut rng);
            assert_eq!(n, 3);
            let g = prior.sample_graph(n, &mut rng);
            node1 += (0..3).filter(|&i| g.node_type(i) == 1).count();
            edge1 += g.edge_count();
        }
        let node_frac = node1 as f64 / (3 * trials) as f64;
        let edge_frac = edge1 as f64 / (3 * trials) as f64;
        assert!((node_frac - 0.7).abs() < 0.01, "{node_frac}");
        assert!((edge_frac - 0.4).abs() < 0.01, "{edge_frac}");
    }
}
