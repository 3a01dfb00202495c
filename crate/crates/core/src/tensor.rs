//! Reverse-mode automatic differentiation on a flat tape of 2-D tensors.
//!
//! Every value is a row-major `[rows, cols]` matrix of f64. A [`Tape`] owns
//! the forward values; calling [`Tape::backward`] from a scalar node fills
//! per-node gradients by walking the tape in reverse and applying each op's
//! vector-Jacobian product. The op set is exactly what the graph transformer
//! needs, including a few structured contractions over `(i, j)` pair-indexed
//! tensors:
//!
//! - [`Tape::pair_scores`]: per-head inner products `Y[(i,j),h] = <Q_i, K_j>`
//! - [`Tape::triangle_scores`]: two-hop contraction
//!   `S[(i,j),h] = sum_k <Qe[(i,k)], Ke[(k,j)]>`
//! - [`Tape::softmax_over_j`]: masked softmax across the `j` index of an
//!   `(i, j)`-pair tensor
//! - [`Tape::attend`]: attention-weighted aggregation of value vectors
//! - [`Tape::pna_pool`]: masked max/min/mean/std pooling over rows
//!
//! Gradient correctness for every op is pinned by central finite differences
//! in this module's tests and again end-to-end by the training module's
//! gradient check.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    /// Multiply by a compile-time constant scalar.
    Scale(TensorId, f64),
    AddScalar(TensorId),
    Relu(TensorId),
    Sigmoid(TensorId),
    /// `a[m,k] @ b[k,n]`
    MatMul(TensorId, TensorId),
    /// Add a `[1, c]` bias to every row of a `[r, c]` tensor.
    AddRowBias(TensorId, TensorId),
    /// Multiply every row of a `[r, c]` tensor by a `[1, c]` vector.
    MulRowBias(TensorId, TensorId),
    /// Per-head broadcast product: `a[r, h]` times `b[r, h*dh]`.
    MulPerHead {
        head_scalars: TensorId,
        values: TensorId,
        head_dim: usize,
    },
    /// `y[(i,j),h] = <q[i, h*dh..], k[j, h*dh..]> / sqrt(dh)`
    PairScores {
        q: TensorId,
        k: TensorId,
        n: usize,
        heads: usize,
        head_dim: usize,
    },
    /// `s[(i,j),h] = sum_k mask[k] <qe[(i,k), h*dh..], ke[(k,j), h*dh..]> / sqrt(dh)`
    TriangleScores {
        qe: TensorId,
        ke: TensorId,
        n: usize,
        heads: usize,
        head_dim: usize,
        mask: Vec<bool>,
    },
    /// Softmax over `j` of an `[n*n, h]` pair tensor, per `(i, head)`,
    /// restricted to unmasked `j`.
    SoftmaxOverJ {
        x: TensorId,
        n: usize,
        mask: Vec<bool>,
    },
    /// `out[i, h*dh+c] = sum_j a[(i,j), h] * v[j, h*dh+c]`
    Attend {
        attn: TensorId,
        values: TensorId,
        n: usize,
        heads: usize,
        head_dim: usize,
    },
    /// Masked concat(max, min, mean, std) over rows: `[r, c] -> [1, 4c]`.
    PnaPool { x: TensorId, mask: Vec<bool> },
    /// Layer norm over each row with learned scale/offset `[1, c]`.
    LayerNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    },
    /// `out[(i,j)] = out[(j,i)] = (x[(i,j)] + x[(j,i)]) / 2` on `[n*n, c]`.
    SymmetrizePairs { x: TensorId, n: usize },
    /// Weighted categorical cross-entropy:
    /// `sum_r w[r] * -log softmax(x[r])[target[r]]`, a `[1,1]` scalar.
    MaskedCe {
        logits: TensorId,
        targets: Vec<usize>,
        weights: Vec<f64>,
    },
    /// Weighted KL against fixed reference log-probabilities:
    /// `sum_r w[r] * KL(softmax(x[r]) || exp(ref[r]))`.
    KlVsConst {
        logits: TensorId,
        ref_logprobs: Vec<f64>,
        weights: Vec<f64>,
    },
}

struct Node {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
}

/// Forward-value tape with reverse-mode gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(row.iter()) {
        let e = (x - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, data: Vec<f64>, rows: usize, cols: usize, op: Op) -> TensorId {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node {
            data,
            rows,
            cols,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, data: Vec<f64>, rows: usize, cols: usize) -> TensorId {
        assert_eq!(data.len(), rows * cols, "input data does not match shape");
        self.push(data, rows, cols, Op::Input)
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        (self.nodes[id.0].rows, self.nodes[id.0].cols)
    }

    pub fn scalar_value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    fn same_shape(&self, a: TensorId, b: TensorId) -> (usize, usize) {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert_eq!((ra, ca), (rb, cb), "shape mismatch: {ra}x{ca} vs {rb}x{cb}");
        (ra, ca)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (r, c) = self.same_shape(a, b);
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        self.push(data, r, c, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (r, c) = self.same_shape(a, b);
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x - y)
            .collect();
        self.push(data, r, c, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (r, c) = self.same_shape(a, b);
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        self.push(data, r, c, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: TensorId, s: f64) -> TensorId {
        let (r, c) = self.shape(a);
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x * s).collect();
        self.push(data, r, c, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: TensorId, s: f64) -> TensorId {
        let (r, c) = self.shape(a);
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x + s).collect();
        self.push(data, r, c, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x.max(0.0)).collect();
        self.push(data, r, c, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        self.push(data, r, c, Op::Sigmoid(a))
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        assert_eq!(ka, kb, "matmul inner dims {ka} vs {kb}");
        let mut out = vec![0.0; m * n];
        {
            let ad = &self.nodes[a.0].data;
            let bd = &self.nodes[b.0].data;
            for i in 0..m {
                let arow = &ad[i * ka..(i + 1) * ka];
                let orow = &mut out[i * n..(i + 1) * n];
                for (p, &av) in arow.iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &bd[p * n..(p + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
        self.push(out, m, n, Op::MatMul(a, b))
    }

    pub fn add_row_bias(&mut self, a: TensorId, bias: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let (rb, cb) = self.shape(bias);
        assert_eq!((rb, cb), (1, c), "bias must be [1, {c}]");
        let bd = &self.nodes[bias.0].data;
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .chunks(c)
            .flat_map(|row| row.iter().zip(bd).map(|(x, b)| x + b).collect::<Vec<_>>())
            .collect();
        self.push(data, r, c, Op::AddRowBias(a, bias))
    }

    pub fn mul_row_bias(&mut self, a: TensorId, bias: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let (rb, cb) = self.shape(bias);
        assert_eq!((rb, cb), (1, c), "bias must be [1, {c}]");
        let bd = &self.nodes[bias.0].data;
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .chunks(c)
            .flat_map(|row| row.iter().zip(bd).map(|(x, b)| x * b).collect::<Vec<_>>())
            .collect();
        self.push(data, r, c, Op::MulRowBias(a, bias))
    }

    /// Affine map `x @ w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: TensorId) -> TensorId {
        let xw = self.matmul(x, w);
        self.add_row_bias(xw, b)
    }

    pub fn mul_per_head(
        &mut self,
        head_scalars: TensorId,
        values: TensorId,
        head_dim: usize,
    ) -> TensorId {
        let (r, h) = self.shape(head_scalars);
        let (rv, hv) = self.shape(values);
        assert_eq!(r, rv);
        assert_eq!(hv, h * head_dim, "values must be [r, heads*head_dim]");
        let mut out = vec![0.0; r * hv];
        let sd = &self.nodes[head_scalars.0].data;
        let vd = &self.nodes[values.0].data;
        for row in 0..r {
            for head in 0..h {
                let s = sd[row * h + head];
                for c in 0..head_dim {
                    let idx = row * hv + head * head_dim + c;
                    out[idx] = s * vd[idx];
                }
            }
        }
        self.push(
            out,
            r,
            hv,
            Op::MulPerHead {
                head_scalars,
                values,
                head_dim,
            },
        )
    }

    pub fn pair_scores(
        &mut self,
        q: TensorId,
        k: TensorId,
        n: usize,
        heads: usize,
        head_dim: usize,
    ) -> TensorId {
        let (rq, cq) = self.shape(q);
        assert_eq!((rq, cq), (n, heads * head_dim));
        self.same_shape(q, k);
        let inv = 1.0 / (head_dim as f64).sqrt();
        let qd = &self.nodes[q.0].data;
        let kd = &self.nodes[k.0].data;
        let mut out = vec![0.0; n * n * heads];
        for i in 0..n {
            for j in 0..n {
                for h in 0..heads {
                    let mut dot = 0.0;
                    let qo = i * cq + h * head_dim;
                    let ko = j * cq + h * head_dim;
                    for c in 0..head_dim {
                        dot += qd[qo + c] * kd[ko + c];
                    }
                    out[(i * n + j) * heads + h] = dot * inv;
                }
            }
        }
        self.push(
            out,
            n * n,
            heads,
            Op::PairScores {
                q,
                k,
                n,
                heads,
                head_dim,
            },
        )
    }

    pub fn triangle_scores(
        &mut self,
        qe: TensorId,
        ke: TensorId,
        n: usize,
        heads: usize,
        head_dim: usize,
        mask: &[bool],
    ) -> TensorId {
        let (r, c) = self.shape(qe);
        assert_eq!((r, c), (n * n, heads * head_dim));
        self.same_shape(qe, ke);
        assert_eq!(mask.len(), n);
        let inv = 1.0 / (head_dim as f64).sqrt();
        let qd = &self.nodes[qe.0].data;
        let kd = &self.nodes[ke.0].data;
        let mut out = vec![0.0; n * n * heads];
        for i in 0..n {
            for (k, &ok) in mask.iter().enumerate() {
                if !ok {
                    continue;
                }
                for j in 0..n {
                    let qo = (i * n + k) * c;
                    let ko = (k * n + j) * c;
                    for h in 0..heads {
                        let mut dot = 0.0;
                        for ch in 0..head_dim {
                            dot += qd[qo + h * head_dim + ch] * kd[ko + h * head_dim + ch];
                        }
                        out[(i * n + j) * heads + h] += dot * inv;
                    }
                }
            }
        }
        self.push(
            out,
            n * n,
            heads,
            Op::TriangleScores {
                qe,
                ke,
                n,
                heads,
                head_dim,
                mask: mask.to_vec(),
            },
        )
    }

    pub fn softmax_over_j(&mut self, x: TensorId, n: usize, mask: &[bool]) -> TensorId {
        let (r, h) = self.shape(x);
        assert_eq!(r, n * n);
        assert_eq!(mask.len(), n);
        let xd = &self.nodes[x.0].data;
        let mut out = vec![0.0; r * h];
        for i in 0..n {
            for head in 0..h {
                let mut max = f64::NEG_INFINITY;
                for (j, &ok) in mask.iter().enumerate() {
                    if ok {
                        max = max.max(xd[(i * n + j) * h + head]);
                    }
                }
                let mut sum = 0.0;
                for (j, &ok) in mask.iter().enumerate() {
                    if ok {
                        let e = (xd[(i * n + j) * h + head] - max).exp();
                        out[(i * n + j) * h + head] = e;
                        sum += e;
                    }
                }
                if sum > 0.0 {
                    for (j, &ok) in mask.iter().enumerate() {
                        if ok {
                            out[(i * n + j) * h + head] /= sum;
                        }
                    }
                }
            }
        }
        self.push(
            out,
            r,
            h,
            Op::SoftmaxOverJ {
                x,
                n,
                mask: mask.to_vec(),
            },
        )
    }

    pub fn attend(
        &mut self,
        attn: TensorId,
        values: TensorId,
        n: usize,
        heads: usize,
        head_dim: usize,
    ) -> TensorId {
        let (ra, ha) = self.shape(attn);
        assert_eq!((ra, ha), (n * n, heads));
        let (rv, cv) = self.shape(values);
        assert_eq!((rv, cv), (n, heads * head_dim));
        let ad = &self.nodes[attn.0].data;
        let vd = &self.nodes[values.0].data;
        let mut out = vec![0.0; n * cv];
        for i in 0..n {
            for j in 0..n {
                for h in 0..heads {
                    let a = ad[(i * n + j) * heads + h];
                    if a == 0.0 {
                        continue;
                    }
                    for c in 0..head_dim {
                        out[i * cv + h * head_dim + c] += a * vd[j * cv + h * head_dim + c];
                    }
                }
            }
        }
        self.push(
            out,
            n,
            cv,
            Op::Attend {
                attn,
                values,
                n,
                heads,
                head_dim,
            },
        )
    }

    pub fn pna_pool(&mut self, x: TensorId, mask: &[bool]) -> TensorId {
        let (r, c) = self.shape(x);
        assert_eq!(mask.len(), r);
        let count = mask.iter().filter(|&&m| m).count();
        assert!(count > 0, "pna over an empty masked set");
        let xd = &self.nodes[x.0].data;
        let mut out = vec![0.0; 4 * c];
        for col in 0..c {
            let mut max = f64::NEG_INFINITY;
            let mut min = f64::INFINITY;
            let mut sum = 0.0;
            for row in 0..r {
                if !mask[row] {
                    continue;
                }
                let v = xd[row * c + col];
                max = max.max(v);
                min = min.min(v);
                sum += v;
            }
            let mean = sum / count as f64;
            let mut var = 0.0;
            for row in 0..r {
                if mask[row] {
                    let d = xd[row * c + col] - mean;
                    var += d * d;
                }
            }
            var /= count as f64;
            out[col] = max;
            out[c + col] = min;
            out[2 * c + col] = mean;
            out[3 * c + col] = var.sqrt();
        }
        self.push(
            out,
            1,
            4 * c,
            Op::PnaPool {
                x,
                mask: mask.to_vec(),
            },
        )
    }

    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> TensorId {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(gamma), (1, c));
        assert_eq!(self.shape(beta), (1, c));
        let xd = &self.nodes[x.0].data;
        let gd = &self.nodes[gamma.0].data;
        let bd = &self.nodes[beta.0].data;
        let mut out = vec![0.0; r * c];
        for row in 0..r {
            let slice = &xd[row * c..(row + 1) * c];
            let mean: f64 = slice.iter().sum::<f64>() / c as f64;
            let var: f64 = slice.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for col in 0..c {
                out[row * c + col] = (slice[col] - mean) * inv_std * gd[col] + bd[col];
            }
        }
        self.push(out, r, c, Op::LayerNorm { x, gamma, beta, eps })
    }

    pub fn symmetrize_pairs(&mut self, x: TensorId, n: usize) -> TensorId {
        let (r, c) = self.shape(x);
        assert_eq!(r, n * n);
        let xd = &self.nodes[x.0].data;
        let mut out = vec![0.0; r * c];
        for i in 0..n {
            for j in 0..n {
                for col in 0..c {
                    out[(i * n + j) * c + col] =
                        0.5 * (xd[(i * n + j) * c + col] + xd[(j * n + i) * c + col]);
                }
            }
        }
        self.push(out, r, c, Op::SymmetrizePairs { x, n })
    }

    /// Weighted cross-entropy between row-wise softmax distributions and
    /// integer targets. Rows with weight 0 are skipped entirely.
    pub fn masked_ce(
        &mut self,
        logits: TensorId,
        targets: &[usize],
        weights: &[f64],
    ) -> TensorId {
        let (r, c) = self.shape(logits);
        assert_eq!(targets.len(), r);
        assert_eq!(weights.len(), r);
        let xd = &self.nodes[logits.0].data;
        let mut loss = 0.0;
        for row in 0..r {
            if weights[row] == 0.0 {
                continue;
            }
            debug_assert!(targets[row] < c);
            let slice = &xd[row * c..(row + 1) * c];
            let lse = log_sum_exp(slice);
            loss += weights[row] * (lse - slice[targets[row]]);
        }
        self.push(
            vec![loss],
            1,
            1,
            Op::MaskedCe {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
        )
    }

    /// Weighted KL(softmax(logits) || exp(ref_logprobs)) summed over rows.
    /// `ref_logprobs` is a flat `[r, c]` constant.
    pub fn kl_vs_const(
        &mut self,
        logits: TensorId,
        ref_logprobs: &[f64],
        weights: &[f64],
    ) -> TensorId {
        let (r, c) = self.shape(logits);
        assert_eq!(ref_logprobs.len(), r * c);
        assert_eq!(weights.len(), r);
        let xd = &self.nodes[logits.0].data;
        let mut total = 0.0;
        let mut probs = vec![0.0; c];
        for row in 0..r {
            if weights[row] == 0.0 {
                continue;
            }
            let slice = &xd[row * c..(row + 1) * c];
            let lse = log_sum_exp(slice);
            softmax_into(slice, &mut probs);
            let mut kl = 0.0;
            for col in 0..c {
                if probs[col] > 0.0 {
                    kl += probs[col] * ((slice[col] - lse) - ref_logprobs[row * c + col]);
                }
            }
            total += weights[row] * kl;
        }
        self.push(
            vec![total],
            1,
            1,
            Op::KlVsConst {
                logits,
                ref_logprobs: ref_logprobs.to_vec(),
                weights: weights.to_vec(),
            },
        )
    }

    /// Reverse pass from a scalar node; returns per-node gradients indexed
    /// like the tape.
    pub fn backward(&self, from: TensorId) -> Result<Gradients> {
        if self.nodes[from.0].data.len() != 1 {
            return Err(Error::Shape("backward must start from a scalar".into()));
        }
        if !self.nodes[from.0].data[0].is_finite() {
            return Err(Error::Numerical("non-finite loss".into()));
        }
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.data.len()])
            .collect();
        grads[from.0][0] = 1.0;

        for idx in (0..=from.0).rev() {
            let g = std::mem::take(&mut grads[idx]);
            if g.iter().all(|&x| x == 0.0) {
                grads[idx] = g;
                continue;
            }
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Add(a, b) => {
                    for (t, &v) in grads[a.0].iter_mut().zip(&g) {
                        *t += v;
                    }
                    for (t, &v) in grads[b.0].iter_mut().zip(&g) {
                        *t += v;
                    }
                }
                Op::Sub(a, b) => {
                    for (t, &v) in grads[a.0].iter_mut().zip(&g) {
                        *t += v;
                    }
                    for (t, &v) in grads[b.0].iter_mut().zip(&g) {
                        *t -= v;
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    for i in 0..g.len() {
                        grads[a.0][i] += g[i] * self.nodes[b.0].data[i];
                    }
                    for i in 0..g.len() {
                        grads[b.0][i] += g[i] * self.nodes[a.0].data[i];
                    }
                }
                Op::Scale(a, s) => {
                    for (t, &v) in grads[a.0].iter_mut().zip(&g) {
                        *t += v * s;
                    }
                }
                Op::AddScalar(a) => {
                    for (t, &v) in grads[a.0].iter_mut().zip(&g) {
                        *t += v;
                    }
                }
                Op::Relu(a) => {
                    for i in 0..g.len() {
                        if self.nodes[a.0].data[i] > 0.0 {
                            grads[a.0][i] += g[i];
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    for i in 0..g.len() {
                        let s = self.nodes[idx].data[i];
                        grads[a.0][i] += g[i] * s * (1.0 - s);
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let (_, n) = self.shape(*b);
                    // dA = dC @ B^T
                    {
                        let bd = &self.nodes[b.0].data;
                        let da = &mut grads[a.0];
                        for i in 0..m {
                            for j in 0..n {
                                let gv = g[i * n + j];
                                if gv == 0.0 {
                                    continue;
                                }
                                for p in 0..k {
                                    da[i * k + p] += gv * bd[p * n + j];
                                }
                            }
                        }
                    }
                    // dB = A^T @ dC
                    {
                        let ad = &self.nodes[a.0].data;
                        let db = &mut grads[b.0];
                        for i in 0..m {
                            for p in 0..k {
                                let av = ad[i * k + p];
                                if av == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    db[p * n + j] += av * g[i * n + j];
                                }
                            }
                        }
                    }
                }
                Op::AddRowBias(a, bias) => {
                    let (_, c) = self.shape(*a);
                    for (t, &v) in grads[a.0].iter_mut().zip(&g) {
                        *t += v;
                    }
                    for (i, &v) in g.iter().enumerate() {
                        grads[bias.0][i % c] += v;
                    }
                }
                Op::MulRowBias(a, bias) => {
                    let (_, c) = self.shape(*a);
                    let (a, bias) = (*a, *bias);
                    for (i, &v) in g.iter().enumerate() {
                        grads[a.0][i] += v * self.nodes[bias.0].data[i % c];
                    }
                    for (i, &v) in g.iter().enumerate() {
                        grads[bias.0][i % c] += v * self.nodes[a.0].data[i];
                    }
                }
                Op::MulPerHead {
                    head_scalars,
                    values,
                    head_dim,
                } => {
                    let (r, h) = self.shape(*head_scalars);
                    let cv = h * head_dim;
                    let (hs, vals, hd) = (*head_scalars, *values, *head_dim);
                    for row in 0..r {
                        for head in 0..h {
                            let s = self.nodes[hs.0].data[row * h + head];
                            let mut ds = 0.0;
                            for c in 0..hd {
                                let i = row * cv + head * hd + c;
                                ds += g[i] * self.nodes[vals.0].data[i];
                                grads[vals.0][i] += g[i] * s;
                            }
                            grads[hs.0][row * h + head] += ds;
                        }
                    }
                }
                Op::PairScores {
                    q,
                    k,
                    n,
                    heads,
                    head_dim,
                } => {
                    let (n, heads, hd) = (*n, *heads, *head_dim);
                    let cq = heads * hd;
                    let inv = 1.0 / (hd as f64).sqrt();
                    let (q, k) = (*q, *k);
                    for i in 0..n {
                        for j in 0..n {
                            for h in 0..heads {
                                let gv = g[(i * n + j) * heads + h] * inv;
                                if gv == 0.0 {
                                    continue;
                                }
                                for c in 0..hd {
                                    grads[q.0][i * cq + h * hd + c] +=
                                        gv * self.nodes[k.0].data[j * cq + h * hd + c];
                                    grads[k.0][j * cq + h * hd + c] +=
                                        gv * self.nodes[q.0].data[i * cq + h * hd + c];
                                }
                            }
                        }
                    }
                }
                Op::TriangleScores {
                    qe,
                    ke,
                    n,
                    heads,
                    head_dim,
                    mask,
                } => {
                    let (n, heads, hd) = (*n, *heads, *head_dim);
                    let cw = heads * hd;
                    let inv = 1.0 / (hd as f64).sqrt();
                    let (qe, ke) = (*qe, *ke);
                    for i in 0..n {
                        for (k, &ok) in mask.iter().enumerate() {
                            if !ok {
                                continue;
                            }
                            for j in 0..n {
                                let qo = (i * n + k) * cw;
                                let ko = (k * n + j) * cw;
                                for h in 0..heads {
                                    let gv = g[(i * n + j) * heads + h] * inv;
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    for c in 0..hd {
                                        grads[qe.0][qo + h * hd + c] +=
                                            gv * self.nodes[ke.0].data[ko + h * hd + c];
                                        grads[ke.0][ko + h * hd + c] +=
                                            gv * self.nodes[qe.0].data[qo + h * hd + c];
                                    }
                                }
                            }
                        }
                    }
                }
                Op::SoftmaxOverJ { x, n, mask } => {
                    let n = *n;
                    let (_, h) = self.shape(*x);
                    let out = &self.nodes[idx].data;
                    for i in 0..n {
                        for head in 0..h {
                            let mut dot = 0.0;
                            for (j, &ok) in mask.iter().enumerate() {
                                if ok {
                                    let f = (i * n + j) * h + head;
                                    dot += g[f] * out[f];
                                }
                            }
                            for (j, &ok) in mask.iter().enumerate() {
                                if ok {
                                    let f = (i * n + j) * h + head;
                                    grads[x.0][f] += out[f] * (g[f] - dot);
                                }
                            }
                        }
                    }
                }
                Op::Attend {
                    attn,
                    values,
                    n,
                    heads,
                    head_dim,
                } => {
                    let (n, heads, hd) = (*n, *heads, *head_dim);
                    let cv = heads * hd;
                    let (attn, values) = (*attn, *values);
                    for i in 0..n {
                        for j in 0..n {
                            for h in 0..heads {
                                let a = self.nodes[attn.0].data[(i * n + j) * heads + h];
                                let mut da = 0.0;
                                for c in 0..hd {
                                    let go = g[i * cv + h * hd + c];
                                    if go == 0.0 {
                                        continue;
                                    }
                                    da += go * self.nodes[values.0].data[j * cv + h * hd + c];
                                    grads[values.0][j * cv + h * hd + c] += go * a;
                                }
                                grads[attn.0][(i * n + j) * heads + h] += da;
                            }
                        }
                    }
                }
                Op::PnaPool { x, mask } => {
                    let (r, c) = self.shape(*x);
                    let count = mask.iter().filter(|&&m| m).count() as f64;
                    let xd = &self.nodes[x.0].data;
                    let out = &self.nodes[idx].data;
                    for col in 0..c {
                        let gmax = g[col];
                        let gmin = g[c + col];
                        let gmean = g[2 * c + col];
                        let gstd = g[3 * c + col];
                        let mean = out[2 * c + col];
                        let std = out[3 * c + col];
                        // max/min subgradient: first matching row.
                        if gmax != 0.0 {
                            for row in 0..r {
                                if mask[row] && xd[row * c + col] == out[col] {
                                    grads[x.0][row * c + col] += gmax;
                                    break;
                                }
                            }
                        }
                        if gmin != 0.0 {
                            for row in 0..r {
                                if mask[row] && xd[row * c + col] == out[c + col] {
                                    grads[x.0][row * c + col] += gmin;
                                    break;
                                }
                            }
                        }
                        for row in 0..r {
                            if !mask[row] {
                                continue;
                            }
                            grads[x.0][row * c + col] += gmean / count;
                            if std > 0.0 {
                                grads[x.0][row * c + col] +=
                                    gstd * (xd[row * c + col] - mean) / (count * std);
                            }
                        }
                    }
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let (r, c) = self.shape(*x);
                    let xd = &self.nodes[x.0].data;
                    let gd = &self.nodes[gamma.0].data;
                    let (x, gamma, beta) = (*x, *gamma, *beta);
                    for row in 0..r {
                        let slice = &xd[row * c..(row + 1) * c];
                        let grow = &g[row * c..(row + 1) * c];
                        let mean: f64 = slice.iter().sum::<f64>() / c as f64;
                        let var: f64 =
                            slice.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                        let inv_std = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> =
                            slice.iter().map(|&v| (v - mean) * inv_std).collect();
                        let mut dxhat_sum = 0.0;
                        let mut dxhat_xhat = 0.0;
                        for col in 0..c {
                            let dxh = grow[col] * gd[col];
                            dxhat_sum += dxh;
                            dxhat_xhat += dxh * xhat[col];
                            grads[gamma.0][col] += grow[col] * xhat[col];
                            grads[beta.0][col] += grow[col];
                        }
                        let cf = c as f64;
                        for col in 0..c {
                            let dxh = grow[col] * gd[col];
                            grads[x.0][row * c + col] +=
                                inv_std / cf * (cf * dxh - dxhat_sum - xhat[col] * dxhat_xhat);
                        }
                    }
                }
                Op::SymmetrizePairs { x, n } => {
                    let n = *n;
                    let (_, c) = self.shape(*x);
                    for i in 0..n {
                        for j in 0..n {
                            for col in 0..c {
                                let gv = 0.5 * g[(i * n + j) * c + col];
                                grads[x.0][(i * n + j) * c + col] += gv;
                                grads[x.0][(j * n + i) * c + col] += gv;
                            }
                        }
                    }
                }
                Op::MaskedCe {
                    logits,
                    targets,
                    weights,
                } => {
                    let (r, c) = self.shape(*logits);
                    let xd = &self.nodes[logits.0].data;
                    let gscale = g[0];
                    let mut probs = vec![0.0; c];
                    for row in 0..r {
                        if weights[row] == 0.0 {
                            continue;
                        }
                        softmax_into(&xd[row * c..(row + 1) * c], &mut probs);
                        for col in 0..c {
                            let delta = if col == targets[row] { 1.0 } else { 0.0 };
                            grads[logits.0][row * c + col] +=
                                gscale * weights[row] * (probs[col] - delta);
                        }
                    }
                }
                Op::KlVsConst {
                    logits,
                    ref_logprobs,
                    weights,
                } => {
                    let (r, c) = self.shape(*logits);
                    let xd = &self.nodes[logits.0].data;
                    let gscale = g[0];
                    let mut probs = vec![0.0; c];
                    for row in 0..r {
                        if weights[row] == 0.0 {
                            continue;
                        }
                        let slice = &xd[row * c..(row + 1) * c];
                        let lse = log_sum_exp(slice);
                        softmax_into(slice, &mut probs);
                        let mut kl = 0.0;
                        for col in 0..c {
                            if probs[col] > 0.0 {
                                kl += probs[col] * ((slice[col] - lse) - ref_logprobs[row * c + col]);
                            }
                        }
                        // d/dl_j = p_j * (log p_j - ref_j - kl)
                        for col in 0..c {
                            let logp = slice[col] - lse;
                            grads[logits.0][row * c + col] += gscale
                                * weights[row]
                                * probs[col]
                                * (logp - ref_logprobs[row * c + col] - kl);
                        }
                    }
                }
            }
            grads[idx] = g;
        }
        Ok(Gradients { grads })
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: TensorId) -> &[f64] {
        &self.grads[id.0]
    }
}
