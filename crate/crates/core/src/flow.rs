//! Conditional probability paths, jump rates, and Euler transition kernels
//! over factorized categorical states.
//!
//! Every node slot and unordered edge slot of a graph is one categorical
//! dimension. Along each dimension the path interpolates a reference
//! distribution `q` and the clean value `x1`:
//!
//! ```text
//! p_t(x | x1) = t * onehot(x1) + (1 - t) * q
//! ```
//!
//! Two choices of `q` are supported through [`PathParams`]: the prior
//! marginal for that slot, and a point mass at the noise value `x0`. The
//! point-mass form is the training default because it is the one for which
//! coupling the noise and data endpoints is meaningful.
//!
//! The jump rates that generate this path are
//!
//! ```text
//! u(xt -> x) = relu(dp_t(x) - dp_t(xt)) / (Z_t * p_t(xt))
//! dp_t(x)    = onehot(x1)[x] - q[x]
//! Z_t        = #{x : p_t(x) > 0}
//! ```
//!
//! with zero rates whenever `p_t(xt) = 0`. The module also contains
//! exhaustive-enumeration oracles over small graph spaces: the exact
//! endpoint posterior given a coupling, the marginal velocity field, and the
//! analytic marginal path with its time derivative, which together support
//! Kolmogorov-equation consistency checks.

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphSpace};
use crate::prior::Prior;
use crate::rng::Rng;

/// Largest enumerated space the oracles accept.
const ORACLE_MAX_STATES: usize = 4096;

/// Threshold past which a step is treated as the final, absorbing one.
pub const ABSORB_EPS: f64 = 1e-6;

/// One categorical slot: its current value and its cardinality.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CategoricalState {
    pub value: usize,
    pub cardinality: usize,
}

impl CategoricalState {
    pub fn new(value: usize, cardinality: usize) -> Result<Self> {
        if value >= cardinality {
            return Err(Error::precondition(format!(
                "category {value} out of range for cardinality {cardinality}"
            )));
        }
        Ok(CategoricalState { value, cardinality })
    }
}

/// Which reference distribution feeds each dimension's path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QMode {
    /// `q` is the prior marginal for the slot (mixture path).
    Prior,
    /// `q` is a point mass at the slot's noise value `x0`.
    PointMass,
}

/// Time point plus the reference distribution for one dimension.
#[derive(Clone, Debug)]
pub struct PathParams {
    pub t: f64,
    pub q: Vec<f64>,
}

impl PathParams {
    pub fn new(t: f64, q: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::precondition(format!("t={t} outside [0,1]")));
        }
        if q.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::precondition("q has negative or non-finite entries"));
        }
        let sum: f64 = q.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::precondition(format!("q sums to {sum}, expected 1")));
        }
        Ok(PathParams { t, q })
    }

    pub fn point_mass(t: f64, x0: usize, cardinality: usize) -> Result<Self> {
        let mut q = vec![0.0; cardinality];
        q[x0] = 1.0;
        PathParams::new(t, q)
    }
}

/// Jump rates out of `current`: `rates[k]` for `k != current` is the rate of
/// jumping to `k`; the diagonal entry is minus the off-diagonal sum.
#[derive(Clone, Debug)]
pub struct RateVector {
    pub rates: Vec<f64>,
    pub current: usize,
}

impl RateVector {
    pub fn zeros(current: usize, cardinality: usize) -> Self {
        RateVector {
            rates: vec![0.0; cardinality],
            current,
        }
    }
}

/// `p_t(. | x1) = t * onehot(x1) + (1 - t) * q`.
pub fn path_prob(x1: &CategoricalState, params: &PathParams) -> Vec<f64> {
    let mut probs: Vec<f64> = params.q.iter().map(|&q| (1.0 - params.t) * q).collect();
    probs[x1.value] += params.t;
    probs
}

/// Draw the intermediate value on the point-mass path: `x1` with
/// probability `t`, else `x0`.
pub fn sample_xt(x0: usize, x1: usize, t: f64, rng: &mut Rng) -> usize {
    if rng.uniform() < t {
        x1
    } else {
        x0
    }
}

/// Draw the intermediate value on a general path `t*onehot(x1) + (1-t)*q`.
pub fn sample_xt_mixture(x1: usize, params: &PathParams, rng: &mut Rng) -> usize {
    if rng.uniform() < params.t {
        x1
    } else {
        rng.categorical(&params.q)
    }
}

/// Jump rates of the conditional path at `xt`, targeting clean value `x1`.
///
/// Zero rates when `p_t(xt) = 0` (unreachable state convention). Errors for
/// `t >= 1`, where the rate normalization diverges.
pub fn conditional_velocity(
    xt: &CategoricalState,
    x1: &CategoricalState,
    params: &PathParams,
) -> Result<RateVector> {
    let k = params.q.len();
    if xt.cardinality != k || x1.cardinality != k {
        return Err(Error::Shape(format!(
            "state cardinalities ({}, {}) do not match q length {k}",
            xt.cardinality, x1.cardinality
        )));
    }
    if params.t >= 1.0 {
        return Err(Error::precondition("conditional velocity undefined at t >= 1"));
    }
    let probs = path_prob(x1, params);
    let p_xt = probs[xt.value];
    if p_xt <= 0.0 {
        return Ok(RateVector::zeros(xt.value, k));
    }
    let z_t = probs.iter().filter(|&&p| p > 0.0).count() as f64;
    // d/dt p_t(x) = onehot(x1)[x] - q[x]
    let dp = |x: usize| -> f64 {
        let oh = if x == x1.value { 1.0 } else { 0.0 };
        oh - params.q[x]
    };
    let dp_xt = dp(xt.value);
    let mut rates = vec![0.0; k];
    let mut outflow = 0.0;
    for (x, r) in rates.iter_mut().enumerate() {
        if x == xt.value {
            continue;
        }
        let num = (dp(x) - dp_xt).max(0.0);
        if num > 0.0 {
            *r = num / (z_t * p_xt);
            outflow += *r;
        }
    }
    rates[xt.value] = -outflow;
    Ok(RateVector {
        rates,
        current: xt.value,
    })
}

/// One Euler step of the conditional CTMC as a categorical distribution over
/// the next value: `onehot(xt) + u * dt`, clamped and renormalized.
///
/// When `t + dt` reaches 1 (within [`ABSORB_EPS`]) the kernel absorbs
/// deterministically to `x1hat`, which keeps the final step well defined as
/// the rates diverge.
pub fn euler_kernel(
    xt: &CategoricalState,
    x1hat: &CategoricalState,
    params: &PathParams,
    dt: f64,
) -> Result<Vec<f64>> {
    if dt <= 0.0 {
        return Err(Error::precondition(format!("dt={dt} must be positive")));
    }
    let k = params.q.len();
    if params.t + dt >= 1.0 - ABSORB_EPS {
        let mut probs = vec![0.0; k];
        probs[x1hat.value] = 1.0;
        return Ok(probs);
    }
    let velocity = conditional_velocity(xt, x1hat, params)?;
    let mut probs = vec![0.0; k];
    probs[xt.value] = 1.0;
    for (p, r) in probs.iter_mut().zip(velocity.rates.iter()) {
        *p = (*p + r * dt).max(0.0);
    }
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        // Whole mass clamped away (huge dt); fall back to the jump target.
        probs.fill(0.0);
        probs[x1hat.value] = 1.0;
        return Ok(probs);
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
    Ok(probs)
}

// ---------------------------------------------------------------------------
// Enumeration oracles over small graph spaces
// ---------------------------------------------------------------------------

/// A weighted list of (noise, data) endpoint pairs on a fixed-size space.
pub type Coupling = Vec<(Graph, Graph, f64)>;

fn check_oracle_capacity(space: &GraphSpace) -> Result<()> {
    if space.len() > ORACLE_MAX_STATES {
        return Err(Error::Capacity(format!(
            "{} states exceeds the oracle limit of {ORACLE_MAX_STATES}",
            space.len()
        )));
    }
    Ok(())
}

fn q_for_dim(space: &GraphSpace, prior: &Prior, d: usize) -> Vec<f64> {
    if d < space.n_nodes {
        prior.node_marginal.clone()
    } else {
        prior.edge_marginal.clone()
    }
}

/// Per-dimension path parameters for a coupling entry.
fn dim_params_at(
    space: &GraphSpace,
    q_mode: QMode,
    prior: Option<&Prior>,
    d: usize,
    x0_d: usize,
    t: f64,
) -> Result<PathParams> {
    let card = space.dim_cardinality(d);
    match q_mode {
        QMode::Prior => {
            let prior =
                prior.ok_or_else(|| Error::precondition("prior-marginal q mode needs a prior"))?;
            let q = q_for_dim(space, prior, d);
            if q.len() != card {
                return Err(Error::Shape(format!(
                    "prior marginal length {} does not match dimension cardinality {card}",
                    q.len()
                )));
            }
            PathParams::new(t, q)
        }
        QMode::PointMass => PathParams::point_mass(t, x0_d, card),
    }
}

/// Posterior weight of each coupling entry given the observed state `gt`.
///
/// Returns normalized weights `p(pair | gt) ∝ w_pair * p_t(gt | pair)`;
/// all-zero when `gt` is unreachable at time `t` under every pair.
pub fn pair_posterior(
    space: &GraphSpace,
    coupling: &Coupling,
    gt: &Graph,
    t: f64,
    q_mode: QMode,
    prior: Option<&Prior>,
) -> Result<Vec<f64>> {
    check_oracle_capacity(space)?;
    let gt_dims = space.dims_of(gt);
    let mut weights = Vec::with_capacity(coupling.len());
    for (g0, g1, w) in coupling {
        let d0 = space.dims_of(g0);
        let d1 = space.dims_of(g1);
        let mut like = *w;
        for d in 0..space.n_dims() {
            let params = dim_params_at(space, q_mode, prior, d, d0[d], t)?;
            let x1 = CategoricalState::new(d1[d], space.dim_cardinality(d))?;
            like *= path_prob(&x1, &params)[gt_dims[d]];
            if like == 0.0 {
                break;
            }
        }
        weights.push(like);
    }
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        for w in weights.iter_mut() {
            *w /= total;
        }
    }
    Ok(weights)
}

/// Exact per-dimension posterior over clean categories, `p(x1_d = v | gt)`.
pub fn exact_dim_posteriors(
    space: &GraphSpace,
    coupling: &Coupling,
    gt: &Graph,
    t: f64,
    q_mode: QMode,
    prior: Option<&Prior>,
) -> Result<Vec<Vec<f64>>> {
    let weights = pair_posterior(space, coupling, gt, t, q_mode, prior)?;
    let mut posts: Vec<Vec<f64>> = (0..space.n_dims())
        .map(|d| vec![0.0; space.dim_cardinality(d)])
        .collect();
    for ((_, g1, _), w) in coupling.iter().zip(&weights) {
        if *w == 0.0 {
            continue;
        }
        for (d, &v) in space.dims_of(g1).iter().enumerate() {
            posts[d][v] += w;
        }
    }
    Ok(posts)
}

/// Exact marginal velocity field at `gt`: the posterior-weighted mixture of
/// conditional rates, one [`RateVector`] per dimension. Test oracle only;
/// refuses spaces beyond the enumeration limit.
pub fn marginal_velocity_oracle(
    space: &GraphSpace,
    gt: &Graph,
    t: f64,
    coupling: &Coupling,
    q_mode: QMode,
    prior: Option<&Prior>,
) -> Result<Vec<RateVector>> {
    let weights = pair_posterior(space, coupling, gt, t, q_mode, prior)?;
    let gt_dims = space.dims_of(gt);
    let mut out: Vec<RateVector> = (0..space.n_dims())
        .map(|d| RateVector::zeros(gt_dims[d], space.dim_cardinality(d)))
        .collect();
    for ((g0, g1, _), w) in coupling.iter().zip(&weights) {
        if *w == 0.0 {
            continue;
        }
        let d0 = space.dims_of(g0);
        let d1 = space.dims_of(g1);
        for d in 0..space.n_dims() {
            let card = space.dim_cardinality(d);
            let params = dim_params_at(space, q_mode, prior, d, d0[d], t)?;
            let xt = CategoricalState::new(gt_dims[d], card)?;
            let x1 = CategoricalState::new(d1[d], card)?;
            let v = conditional_velocity(&xt, &x1, &params)?;
            for (acc, r) in out[d].rates.iter_mut().zip(v.rates.iter()) {
                *acc += w * r;
            }
        }
    }
    Ok(out)
}

/// Analytic marginal path `p_t` over the whole space.
pub fn path_distribution(
    space: &GraphSpace,
    coupling: &Coupling,
    t: f64,
    q_mode: QMode,
    prior: Option<&Prior>,
) -> Result<Vec<f64>> {
    check_oracle_capacity(space)?;
    let total_w: f64 = coupling.iter().map(|(_, _, w)| w).sum();
    let mut dist = vec![0.0; space.len()];
    for (g0, g1, w) in coupling {
        let d0 = space.dims_of(g0);
        let d1 = space.dims_of(g1);
        // Per-dimension marginals for this pair.
        let per_dim: Vec<Vec<f64>> = (0..space.n_dims())
            .map(|d| {
                let params = dim_params_at(space, q_mode, prior, d, d0[d], t)?;
                let x1 = CategoricalState::new(d1[d], space.dim_cardinality(d))?;
                Ok(path_prob(&x1, &params))
            })
            .collect::<Result<_>>()?;
        for (idx, slot) in dist.iter_mut().enumerate() {
            let g = space.graph_at(idx);
            let mut p = w / total_w;
            for (d, &v) in space.dims_of(&g).iter().enumerate() {
                p *= per_dim[d][v];
                if p == 0.0 {
                    break;
                }
            }
            *slot += p;
        }
    }
    Ok(dist)
}

/// Analytic time derivative of the marginal path.
pub fn path_distribution_derivative(
    space: &GraphSpace,
    coupling: &Coupling,
    t: f64,
    q_mode: QMode,
    prior: Option<&Prior>,
) -> Result<Vec<f64>> {
    check_oracle_capacity(space)?;
    let total_w: f64 = coupling.iter().map(|(_, _, w)| w).sum();
    let mut deriv = vec![0.0; space.len()];
    for (g0, g1, w) in coupling {
        let d0 = space.dims_of(g0);
        let d1 = space.dims_of(g1);
        let per_dim: Vec<Vec<f64>> = (0..space.n_dims())
            .map(|d| {
                let params = dim_params_at(space, q_mode, prior, d, d0[d], t)?;
                let x1 = CategoricalState::new(d1[d], space.dim_cardinality(d))?;
                Ok(path_prob(&x1, &params))
            })
            .collect::<Result<_>>()?;
        // d/dt of a product: sum over dims of (derivative in that dim).
        for (idx, slot) in deriv.iter_mut().enumerate() {
            let g = space.graph_at(idx);
            let dims = space.dims_of(&g);
            for d in 0..space.n_dims() {
                let q = match q_mode {
                    QMode::Prior => q_for_dim(space, prior.expect("checked"), d)[dims[d]],
                    QMode::PointMass => {
                        if dims[d] == d0[d] {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
                let dp_d = (if dims[d] == d1[d] { 1.0 } else { 0.0 }) - q;
                if dp_d == 0.0 {
                    continue;
                }
                let mut term = w / total_w * dp_d;
                for (e, &v) in dims.iter().enumerate() {
                    if e != d {
                        term *= per_dim[e][v];
                        if term == 0.0 {
                            break;
                        }
                    }
                }
                *slot += term;
            }
        }
    }
    Ok(deriv)
}

/// Max-norm residual of the Kolmogorov forward equation at time `t`:
/// `max_G |d/dt p_t(G) - sum of probability flux into G|`.
pub fn kolmogorov_residual(
    space: &GraphSpace,
    coupling: &Coupling,
    t: f64,
    q_mode: QMode,
    prior: Option<&Prior>,
) -> Result<f64> {
    let p = path_distribution(space, coupling, t, q_mode, prior)?;
    let dp = path_distribution_derivative(space, coupling, t, q_mode, prior)?;
    // Rates out of every state, per dimension.
    let rates: Vec<Vec<RateVector>> = (0..space.len())
        .map(|idx| {
            marginal_velocity_oracle(space, &space.graph_at(idx), t, coupling, q_mode, prior)
        })
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    for idx in 0..space.len() {
        let g = space.graph_at(idx);
        let dims = space.dims_of(&g);
        let mut flux = 0.0;
        // Outflow (diagonal entries are negative row sums).
        for d in 0..space.n_dims() {
            flux += rates[idx][d].rates[dims[d]] * p[idx];
        }
        // Inflow from single-dimension neighbors.
        for d in 0..space.n_dims() {
            for k in 0..space.dim_cardinality(d) {
                if k == dims[d] {
                    continue;
                }
                let mut neighbor = dims.clone();
                neighbor[d] = k;
                let nidx = space.index_of(&space.graph_from_dims(&neighbor));
                flux += rates[nidx][d].rates[dims[d]] * p[nidx];
            }
        }
        worst = worst.max((dp[idx] - flux).abs());
    }
    Ok(worst)
}
