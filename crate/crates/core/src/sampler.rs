//! Generative sampling: Euler-discretized CTMC integration of the learned
//! posterior, plus exact-posterior oracles on enumerable spaces.
//!
//! A chain draws its node count from the prior's size distribution, its
//! start state from the product prior, and then for `n_steps` Euler steps:
//! sample a clean-graph estimate dimension-by-dimension from the predicted
//! posterior, then move every dimension through its transition kernel. The
//! final step absorbs deterministically to the sampled clean estimate, so
//! emitted graphs always sit on the clean manifold.
//!
//! Chains are independent; all randomness comes from streams keyed by
//! `(seed, chain, step)`, so output is bit-reproducible regardless of how
//! chains are scheduled across threads.

use crate::error::{Error, Result};
use crate::flow::{
    euler_kernel, exact_dim_posteriors, CategoricalState, Coupling, PathParams, QMode,
};
use crate::graph::{Graph, GraphSpace};
use crate::model::{ForwardInput, ModelParams};
use crate::prior::Prior;
use crate::rng::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const STREAM_SIZE: u64 = 0x51;
const STREAM_START: u64 = 0x52;
const STREAM_GHAT: u64 = 0x53;
const STREAM_MOVE: u64 = 0x54;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleConfig {
    pub n_steps: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub q_mode: QMode,
    pub record_trajectory: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            n_steps: 500,
            n_samples: 1,
            seed: 0,
            q_mode: QMode::PointMass,
            record_trajectory: false,
        }
    }
}

/// A recorded sampling path: states at every time, the summed posterior
/// log-probability of the realized terminal graph at every step, and an
/// optional terminal reward (filled in by guided fine-tuning).
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Graph>,
    pub step_logprobs: Vec<f64>,
    pub terminal_reward: Option<f64>,
}

/// The per-dimension category values of a graph, nodes first then (i < j)
/// edge slots, plus enough metadata to rebuild a graph.
pub(crate) struct DimView {
    pub n: usize,
    pub values: Vec<usize>,
}

impl DimView {
    pub fn of(g: &Graph) -> Self {
        let n = g.n_nodes();
        let mut values = Vec::with_capacity(n + n * (n - 1) / 2);
        for i in 0..n {
            values.push(g.node_type(i) as usize);
        }
        for i in 0..n {
            for j in (i + 1)..n {
                values.push(g.edge_type(i, j) as usize);
            }
        }
        DimView { n, values }
    }

    pub fn n_dims(&self) -> usize {
        self.values.len()
    }

    pub fn is_node_dim(&self, d: usize) -> bool {
        d < self.n
    }

    pub fn to_graph(&self) -> Graph {
        let node_types: Vec<u8> = self.values[..self.n].iter().map(|&v| v as u8).collect();
        let mut edges = Vec::new();
        let mut d = self.n;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.values[d] != 0 {
                    edges.push((i, j, self.values[d] as u8));
                }
                d += 1;
            }
        }
        Graph::from_edges(node_types, &edges).expect("dimension view is structurally valid")
    }
}

/// Reference distribution for one dimension's transition kernel.
///
/// The point-mass form anchors at the dimension's *current* value. Because
/// the clean estimate is redrawn every step, a dimension can sit outside the
/// support of the original (start, estimate) pair; anchoring at the current
/// value gives the uniform re-targeting rate 1/(1-t) toward the new estimate
/// (which generates the same conditional path) instead of freezing the
/// dimension under the zero-rate convention. On-support the two anchors
/// produce identical kernels.
fn q_vector(
    q_mode: QMode,
    prior: &Prior,
    is_node: bool,
    current: usize,
    cardinality: usize,
) -> Vec<f64> {
    match q_mode {
        QMode::Prior => {
            if is_node {
                prior.node_marginal.clone()
            } else {
                prior.edge_marginal.clone()
            }
        }
        QMode::PointMass => {
            let mut q = vec![0.0; cardinality];
            q[current] = 1.0;
            q
        }
    }
}

/// Sample graphs from a trained model. Returns the terminal graphs and, if
/// requested, full trajectories.
pub fn sample(
    model: &ModelParams,
    prior: &Prior,
    cfg: &SampleConfig,
) -> Result<(Vec<Graph>, Vec<Trajectory>)> {
    sample_with_temperature(model, prior, cfg, 1.0)
}

/// [`sample`] with a policy temperature: per-dimension transition
/// distributions are raised to the power `1/temperature` and renormalized.
/// `temperature == 1.0` reproduces the base sampler bit-for-bit.
pub fn sample_with_temperature(
    model: &ModelParams,
    prior: &Prior,
    cfg: &SampleConfig,
    temperature: f64,
) -> Result<(Vec<Graph>, Vec<Trajectory>)> {
    if cfg.n_steps == 0 {
        return Err(Error::precondition("n_steps must be >= 1"));
    }
    if temperature <= 0.0 {
        return Err(Error::precondition("temperature must be positive"));
    }
    if model.hp.node_cats != prior.node_cats() || model.hp.edge_cats != prior.edge_cats() {
        return Err(Error::precondition(
            "model and prior category counts disagree",
        ));
    }
    let chains: Vec<Result<(Graph, Option<Trajectory>)>> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|chain| run_chain(model, prior, cfg, temperature, chain as u64))
        .collect();
    let mut graphs = Vec::with_capacity(cfg.n_samples);
    let mut trajectories = Vec::new();
    for c in chains {
        let (g, traj) = c?;
        graphs.push(g);
        if let Some(t) = traj {
            trajectories.push(t);
        }
    }
    Ok((graphs, trajectories))
}

pub(crate) fn temper(probs: &mut [f64], temperature: f64) {
    if temperature == 1.0 {
        return;
    }
    let inv = 1.0 / temperature;
    let mut total = 0.0;
    for p in probs.iter_mut() {
        *p = p.max(0.0).powf(inv);
        total += *p;
    }
    if total > 0.0 {
        for p in probs.iter_mut() {
            *p /= total;
        }
    }
}

fn run_chain(
    model: &ModelParams,
    prior: &Prior,
    cfg: &SampleConfig,
    temperature: f64,
    chain: u64,
) -> Result<(Graph, Option<Trajectory>)> {
    let mut size_rng = Rng::derive(cfg.seed, &[STREAM_SIZE, chain]);
    let n = prior.sample_size(&mut size_rng).max(1);
    if n > model.hp.n_max {
        return Err(Error::Capacity(format!(
            "prior drew {n} nodes, model capacity is {}",
            model.hp.n_max
        )));
    }
    let mut start_rng = Rng::derive(cfg.seed, &[STREAM_START, chain]);
    let g0 = prior.sample_graph(n, &mut start_rng);
    let mut state = DimView::of(&g0);
    let origin = DimView::of(&g0);
    let dt = 1.0 / cfg.n_steps as f64;

    let mut states = Vec::new();
    let mut times = Vec::new();
    // Per-step, per-dimension clean-draw distributions; kept only while
    // recording so the terminal log-probabilities can be filled afterwards.
    let mut dists: Vec<Vec<Vec<f64>>> = Vec::new();
    if cfg.record_trajectory {
        states.push(state.to_graph());
        times.push(0.0);
    }

    let edge_slots: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();

    for step in 0..cfg.n_steps {
        let t = step as f64 * dt;
        let current = state.to_graph();
        let g0_cond = model.hp.cond_on_g0.then(|| origin.to_graph());
        let logits = model.forward(&ForwardInput {
            g: &current,
            t,
            g0: g0_cond.as_ref(),
            pad_to: None,
        })?;
        let mut ghat_rng = Rng::derive(cfg.seed, &[STREAM_GHAT, chain, step as u64]);
        let mut move_rng = Rng::derive(cfg.seed, &[STREAM_MOVE, chain, step as u64]);
        let mut step_dists = Vec::new();
        let mut edge_slot = 0usize;
        for d in 0..state.n_dims() {
            let (card, probs) = if state.is_node_dim(d) {
                (model.hp.node_cats, logits.node_probs(d))
            } else {
                let (i, j) = edge_slots[edge_slot];
                edge_slot += 1;
                (model.hp.edge_cats, logits.edge_probs(i, j))
            };
            let x1hat = ghat_rng.categorical(&probs);
            let q = q_vector(cfg.q_mode, prior, state.is_node_dim(d), state.values[d], card);
            let params = PathParams::new(t, q)?;
            let xt = CategoricalState::new(state.values[d], card)?;
            let x1 = CategoricalState::new(x1hat, card)?;
            let mut kernel = euler_kernel(&xt, &x1, &params, dt)?;
            temper(&mut kernel, temperature);
            state.values[d] = move_rng.categorical(&kernel);
            if cfg.record_trajectory {
                step_dists.push(probs);
            }
        }
        if cfg.record_trajectory {
            states.push(state.to_graph());
            times.push((step + 1) as f64 * dt);
            dists.push(step_dists);
        }
    }

    let terminal = state.to_graph();
    let trajectory = cfg.record_trajectory.then(|| {
        let final_dims = DimView::of(&terminal);
        let step_logprobs = dists
            .iter()
            .map(|step_dists| {
                step_dists
                    .iter()
                    .zip(&final_dims.values)
                    .map(|(dist, &v)| dist[v].max(f64::MIN_POSITIVE).ln())
                    .sum()
            })
            .collect();
        Trajectory {
            times,
            states,
            step_logprobs,
            terminal_reward: None,
        }
    });
    Ok((terminal, trajectory))
}

// ---------------------------------------------------------------------------
// Exact-posterior oracles on enumerable spaces
// ---------------------------------------------------------------------------

/// Per-step transition tables for the exact-posterior sampler on a small
/// space: for each (conditioning start state, current state, dimension), the
/// mixed one-step kernel `sum_x1 p(x1 | state, g0) * kernel(x1)`.
struct ExactTables {
    /// `[g0_idx][state_idx][dim][next_value]` for one time step.
    kernels: Vec<Vec<Vec<Vec<f64>>>>,
}

fn build_step_tables(
    space: &GraphSpace,
    coupling: &Coupling,
    g0_states: &[Graph],
    t: f64,
    dt: f64,
    q_mode: QMode,
    prior: Option<&Prior>,
) -> Result<ExactTables> {
    let mut kernels = Vec::with_capacity(g0_states.len());
    for g0 in g0_states {

        // Restrict the coupling to this chain's start state under the
        // point-mass path; the prior-marginal path ignores the start.
        let restricted: Coupling = match q_mode {
            QMode::PointMass => coupling
                .iter()
                .filter(|(a, _, _)| a == g0)
                .cloned()
                .collect(),
            QMode::Prior => coupling.clone(),
        };
        let mut per_state = Vec::with_capacity(space.len());
        for idx in 0..space.len() {
            let gt = space.graph_at(idx);
            let gt_dims = space.dims_of(&gt);
            let posteriors = if restricted.is_empty() {
                None
            } else {
                Some(exact_dim_posteriors(
                    space,
                    &restricted,
                    &gt,
                    t,
                    q_mode,
                    prior,
                )?)
            };
            let mut per_dim = Vec::with_capacity(space.n_dims());
            for d in 0..space.n_dims() {
                let card = space.dim_cardinality(d);
                let q = match q_mode {
                    QMode::Prior => {
                        let prior = prior.expect("prior mode requires a prior");
                        if d < space.n_nodes {
                            prior.node_marginal.clone()
                        } else {
                            prior.edge_marginal.clone()
                        }
                    }
                    QMode::PointMass => {
                        let mut q = vec![0.0; card];
                        q[gt_dims[d]] = 1.0;
                        q
                    }
                };
                let params = PathParams::new(t, q)?;
                let xt = CategoricalState::new(gt_dims[d], card)?;
                // Off-path states (posterior has no mass) freeze in place;
                // the final absorbing step still lands on a posterior draw.
                let posterior_d: Vec<f64> = match &posteriors {
                    Some(p) if p[d].iter().sum::<f64>() > 0.0 => p[d].clone(),
                    _ => {
                        let mut v = vec![0.0; card];
                        v[gt_dims[d]] = 1.0;
                        v
                    }
                };
                let mut mixed = vec![0.0; card];
                for (x1v, &w) in posterior_d.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let x1 = CategoricalState::new(x1v, card)?;
                    let kernel = euler_kernel(&xt, &x1, &params, dt)?;
                    for (m, k) in mixed.iter_mut().zip(&kernel) {
                        *m += w * k;
                    }
                }
                per_dim.push(mixed);
            }
            per_state.push(per_dim);
        }
        kernels.push(per_state);
    }
    Ok(ExactTables { kernels })
}

/// Distinct start states of a coupling with their probabilities.
fn start_distribution(space: &GraphSpace, coupling: &Coupling) -> (Vec<Graph>, Vec<f64>) {
    let total: f64 = coupling.iter().map(|(_, _, w)| w).sum();
    let mut acc: std::collections::BTreeMap<usize, f64> = Default::default();
    for (g0, _, w) in coupling {
        *acc.entry(space.index_of(g0)).or_default() += w / total;
    }
    let graphs: Vec<Graph> = acc.keys().map(|&i| space.graph_at(i)).collect();
    let probs: Vec<f64> = acc.values().copied().collect();
    (graphs, probs)
}

/// Exact terminal distribution of the Euler sampler driven by the exact
/// posterior of a coupling, obtained by propagating state distributions
/// through the per-step product kernels (no Monte Carlo error).
pub fn exact_sampler_distribution(
    space: &GraphSpace,
    coupling: &Coupling,
    q_mode: QMode,
    prior: Option<&Prior>,
    n_steps: usize,
) -> Result<Vec<f64>> {
    Ok(exact_sampler_marginals(space, coupling, q_mode, prior, n_steps, &[])?.0)
}

/// Like [`exact_sampler_distribution`], additionally returning the exact
/// state marginals at the requested time checkpoints.
pub fn exact_sampler_marginals(
    space: &GraphSpace,
    coupling: &Coupling,
    q_mode: QMode,
    prior: Option<&Prior>,
    n_steps: usize,
    checkpoints: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if n_steps == 0 {
        return Err(Error::precondition("n_steps must be >= 1"));
    }
    if space.len() > 512 {
        return Err(Error::Capacity(format!(
            "{} states is too large for exact propagation",
            space.len()
        )));
    }
    let (g0_states, g0_probs) = start_distribution(space, coupling);
    let dt = 1.0 / n_steps as f64;
    // dist[g0_idx][state_idx]
    let mut dist: Vec<Vec<f64>> = g0_states
        .iter()
        .zip(&g0_probs)
        .map(|(g, &p)| {
            let mut v = vec![0.0; space.len()];
            v[space.index_of(g)] = p;
            v
        })
        .collect();
    let mut checkpoint_marginals: Vec<Vec<f64>> = Vec::new();
    for step in 0..n_steps {
        let t = step as f64 * dt;
        for &c in checkpoints {
            if (t - c).abs() < dt / 2.0 {
                let mut merged = vec![0.0; space.len()];
                for per_g0 in &dist {
                    for (m, &p) in merged.iter_mut().zip(per_g0) {
                        *m += p;
                    }
                }
                checkpoint_marginals.push(merged);
            }
        }
        let tables = build_step_tables(space, coupling, &g0_states, t, dt, q_mode, prior)?;
        for (g0_idx, per_g0) in dist.iter_mut().enumerate() {
            let mut next = vec![0.0; space.len()];
            for (state_idx, &mass) in per_g0.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                let per_dim = &tables.kernels[g0_idx][state_idx];
                // Product kernel over dimensions, expanded state by state.
                let mut acc: Vec<(usize, f64)> = vec![(0usize, mass)];
                for (d, kernel) in per_dim.iter().enumerate() {
                    let card = space.dim_cardinality(d);
                    let mut grown = Vec::with_capacity(acc.len() * card);
                    for &(partial_idx, p) in &acc {
                        for (v, &kv) in kernel.iter().enumerate() {
                            if kv > 0.0 {
                                grown.push((partial_idx * card + v, p * kv));
                            }
                        }
                    }
                    acc = grown;
                }
                for (idx, p) in acc {
                    next[idx] += p;
                }
            }
            *per_g0 = next;
        }
    }
    let mut terminal = vec![0.0; space.len()];
    for per_g0 in &dist {
        for (t, &p) in terminal.iter_mut().zip(per_g0) {
            *t += p;
        }
    }
    Ok((terminal, checkpoint_marginals))
}

/// Monte Carlo simulation of the exact-posterior Euler sampler. Returns the
/// empirical terminal distribution and the empirical state distribution at
/// each checkpoint time. Transition tables are precomputed per step, so
/// chains are cheap.
#[allow(clippy::too_many_arguments)]
pub fn mc_exact_posterior_sampler(
    space: &GraphSpace,
    coupling: &Coupling,
    q_mode: QMode,
    prior: Option<&Prior>,
    n_steps: usize,
    n_chains: usize,
    seed: u64,
    checkpoints: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if space.len() > 512 {
        return Err(Error::Capacity("space too large for the MC oracle".into()));
    }
    let (g0_states, g0_probs) = start_distribution(space, coupling);
    let dt = 1.0 / n_steps as f64;
    let mut all_tables = Vec::with_capacity(n_steps);
    let mut checkpoint_steps = Vec::new();
    for step in 0..n_steps {
        let t = step as f64 * dt;
        for &c in checkpoints {
            if (t - c).abs() < dt / 2.0 {
                checkpoint_steps.push(step);
            }
        }
        all_tables.push(build_step_tables(
            space, coupling, &g0_states, t, dt, q_mode, prior,
        )?);
    }
    let n_dims = space.n_dims();
    let cards: Vec<usize> = (0..n_dims).map(|d| space.dim_cardinality(d)).collect();

    let counts: Vec<(Vec<u64>, Vec<Vec<u64>>)> = (0..n_chains)
        .into_par_iter()
        .fold(
            || {
                (
                    vec![0u64; space.len()],
                    vec![vec![0u64; space.len()]; checkpoint_steps.len()],
                )
            },
            |(mut terminal, mut checks), chain| {
                let mut rng = Rng::derive(seed, &[0x3c, chain as u64]);
                let g0_idx = rng.categorical(&g0_probs);
                let mut state_idx = space.index_of(&g0_states[g0_idx]);
                let mut dims = vec![0usize; n_dims];
                for (step, tables) in all_tables.iter().enumerate() {
                    for (slot, &s) in checkpoint_steps.iter().enumerate() {
                        if s == step {
                            checks[slot][state_idx] += 1;
                        }
                    }
                    let per_dim = &tables.kernels[g0_idx][state_idx];
                    // Unpack, step each dimension, repack.
                    let mut rem = state_idx;
                    for d in (0..n_dims).rev() {
                        dims[d] = rem % cards[d];
                        rem /= cards[d];
                    }
                    let mut next = 0usize;
                    for (d, kernel) in per_dim.iter().enumerate() {
                        let v = rng.categorical(kernel);
                        next = next * cards[d] + v;
                    }
                    let _ = &dims;
                    state_idx = next;
                }
                terminal[state_idx] += 1;
                (terminal, checks)
            },
        )
        .collect();

    let mut terminal = vec![0.0; space.len()];
    let mut checks = vec![vec![0.0; space.len()]; checkpoint_steps.len()];
    for (t_counts, c_counts) in counts {
        for (t, &c) in terminal.iter_mut().zip(&t_counts) {
            *t += c as f64 / n_chains as f64;
        }
        for (slot, per) in c_counts.iter().enumerate() {
            for (t, &c) in checks[slot].iter_mut().zip(per) {
                *t += c as f64 / n_chains as f64;
            }
        }
    }
    Ok((terminal, checks))
}

/// Sample many chains from a trained model on an *enumerable* space by
/// precomputing, per time step, the model's per-dimension clean-draw
/// distributions for every state. Chains then run on table lookups, which
/// makes large sample counts (e.g. 50k) cheap. Node counts are fixed to the
/// space's size; behavior matches [`sample`] with the same q-mode.
pub fn tabulated_sample(
    model: &ModelParams,
    prior: &Prior,
    space: &GraphSpace,
    cfg: &SampleConfig,
) -> Result<Vec<Graph>> {
    if cfg.n_steps == 0 {
        return Err(Error::precondition("n_steps must be >= 1"));
    }
    if space.len() > 4096 {
        return Err(Error::Capacity("space too large to tabulate".into()));
    }
    let n_dims = space.n_dims();
    let cards: Vec<usize> = (0..n_dims).map(|d| space.dim_cardinality(d)).collect();
    let dt = 1.0 / cfg.n_steps as f64;
    // posterior_tables[step][state][dim][category]
    let mut posterior_tables: Vec<Vec<Vec<Vec<f64>>>> = Vec::with_capacity(cfg.n_steps);
    for step in 0..cfg.n_steps {
        let t = step as f64 * dt;
        let per_state: Vec<Vec<Vec<f64>>> = (0..space.len())
            .into_par_iter()
            .map(|idx| {
                let g = space.graph_at(idx);
                let out = model.forward(&ForwardInput::plain(&g, t))?;
                let mut per_dim = Vec::with_capacity(n_dims);
                for i in 0..space.n_nodes {
                    per_dim.push(out.node_probs(i));
                }
                for (i, j) in space.edge_slots() {
                    per_dim.push(out.edge_probs(i, j));
                }
                Ok(per_dim)
            })
            .collect::<Result<_>>()?;
        posterior_tables.push(per_state);
    }

    let graphs: Vec<Result<Graph>> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|chain| {
            let chain = chain as u64;
            let mut start_rng = Rng::derive(cfg.seed, &[STREAM_START, chain]);
            let g0 = prior.sample_graph(space.n_nodes, &mut start_rng);
            let mut dims = space.dims_of(&g0);
            for step in 0..cfg.n_steps {
                let t = step as f64 * dt;
                let state_idx = {
                    let mut idx = 0usize;
                    for (d, &v) in dims.iter().enumerate() {
                        idx = idx * cards[d] + v;
                    }
                    idx
                };
                let posts = &posterior_tables[step][state_idx];
                let mut ghat_rng = Rng::derive(cfg.seed, &[STREAM_GHAT, chain, step as u64]);
                let mut move_rng = Rng::derive(cfg.seed, &[STREAM_MOVE, chain, step as u64]);
                for d in 0..n_dims {
                    let x1hat = ghat_rng.categorical(&posts[d]);
                    let q = match cfg.q_mode {
                        QMode::Prior => {
                            if d < space.n_nodes {
                                prior.node_marginal.clone()
                            } else {
                                prior.edge_marginal.clone()
                            }
                        }
                        QMode::PointMass => {
                            let mut q = vec![0.0; cards[d]];
                            q[dims[d]] = 1.0;
                            q
                        }
                    };
                    let params = PathParams::new(t, q)?;
                    let xt = CategoricalState::new(dims[d], cards[d])?;
                    let x1 = CategoricalState::new(x1hat, cards[d])?;
                    let kernel = euler_kernel(&xt, &x1, &params, dt)?;
                    dims[d] = move_rng.categorical(&kernel);
                }
            }
            Ok(space.graph_from_dims(&dims))
        })
        .collect();
    graphs.into_iter().collect()
}

/// Half L1 distance between two distributions on the same support.
pub fn tv_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0
}
