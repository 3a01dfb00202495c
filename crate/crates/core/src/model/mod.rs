//! Edge-augmented graph transformer predicting factorized posterior logits
//! over clean node and edge categories.
//!
//! One block, per layer:
//!
//! 1. Per-head node attention scores from Q/K projections of node states.
//! 2. The scores are FiLM-modulated by projections of the edge states; the
//!    modulated score tensor becomes the edge pathway's working state.
//! 3. Edge update: a triangle contraction couples every pair (i, j) to its
//!    two-hop paths i -> k -> j, plus a learned pairwise bias; the result
//!    gates value vectors through a sigmoid gate.
//! 4. Node update: masked softmax over the modulated scores aggregates node
//!    values per head. (A `literal_attention` switch skips the softmax and
//!    uses the raw modulated scores as weights, for ablation.)
//! 5. Both pathways are FiLM-modulated by the global feature vector, which
//!    is itself updated from PNA poolings of the new node and edge states.
//! 6. Dropout, residual, layer norm, ReLU around each pathway.
//!
//! Output heads project node states to node-category logits and edge states
//! to edge-category logits; edge logits are symmetrized by averaging the
//! (i, j) and (j, i) slots. Everything runs on the autodiff [`Tape`], so the
//! same code path serves inference and training.

pub mod features;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::Rng;
use crate::tensor::{Tape, TensorId};
use features::{structural_features, ValenceTable, GLOBAL_FEAT_DIM, NODE_FEAT_DIM};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Architecture and data-space configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub node_cats: usize,
    pub edge_cats: usize,
    /// Capacity cap on node count (triangle updates are cubic in it).
    pub n_max: usize,
    pub layers: usize,
    pub heads: usize,
    pub dx: usize,
    pub de: usize,
    pub dy: usize,
    pub dropout: f64,
    /// Concatenate the noise graph's encodings to the input (off by default;
    /// the sampler's posterior then conditions only on the current state).
    pub cond_on_g0: bool,
    /// Use raw modulated scores as attention weights instead of softmax.
    pub literal_attention: bool,
    pub valence: Option<ValenceTable>,
}

impl HyperParams {
    /// Workstation-scale defaults.
    pub fn desk(node_cats: usize, edge_cats: usize) -> Self {
        HyperParams {
            node_cats,
            edge_cats,
            n_max: 64,
            layers: 4,
            heads: 8,
            dx: 64,
            de: 32,
            dy: 32,
            dropout: 0.1,
            cond_on_g0: false,
            literal_attention: false,
            valence: None,
        }
    }

    /// Small configuration for tests and toy problems.
    pub fn tiny(node_cats: usize, edge_cats: usize) -> Self {
        HyperParams {
            node_cats,
            edge_cats,
            n_max: 16,
            layers: 2,
            heads: 2,
            dx: 16,
            de: 8,
            dy: 12,
            dropout: 0.0,
            cond_on_g0: false,
            literal_attention: false,
            valence: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_cats == 0 || self.edge_cats < 2 {
            return Err(Error::precondition(
                "need at least one node category and two edge categories",
            ));
        }
        if !self.dx.is_multiple_of(self.heads) || !self.de.is_multiple_of(self.heads) {
            return Err(Error::precondition(format!(
                "dx={} and de={} must be divisible by heads={}",
                self.dx, self.de, self.heads
            )));
        }
        if let Some(v) = &self.valence {
            if v.max_valence.len() != self.node_cats || v.atomic_weight.len() != self.node_cats {
                return Err(Error::precondition(
                    "valence table must cover every node category",
                ));
            }
        }
        Ok(())
    }

    fn node_in_dim(&self) -> usize {
        self.node_cats * if self.cond_on_g0 { 2 } else { 1 } + NODE_FEAT_DIM
    }

    fn edge_in_dim(&self) -> usize {
        self.edge_cats * if self.cond_on_g0 { 2 } else { 1 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// All network weights plus shape metadata; immutable during inference.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub hp: HyperParams,
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

struct ParamBuilder {
    params: Vec<Param>,
    rng: Rng,
}

impl ParamBuilder {
    fn weight(&mut self, name: &str, rows: usize, cols: usize) {
        let scale = 1.0 / (rows as f64).sqrt();
        let values = (0..rows * cols).map(|_| self.rng.normal() * scale).collect();
        self.params.push(Param {
            name: name.to_string(),
            rows,
            cols,
            values,
        });
    }

    fn bias(&mut self, name: &str, cols: usize) {
        self.params.push(Param {
            name: name.to_string(),
            rows: 1,
            cols,
            values: vec![0.0; cols],
        });
    }

    fn constant(&mut self, name: &str, cols: usize, value: f64) {
        self.params.push(Param {
            name: name.to_string(),
            rows: 1,
            cols,
            values: vec![value; cols],
        });
    }

    fn affine(&mut self, name: &str, rows: usize, cols: usize) {
        self.weight(&format!("{name}.w"), rows, cols);
        self.bias(&format!("{name}.b"), cols);
    }
}

impl ModelParams {
    pub fn init(hp: HyperParams, seed: u64) -> Result<Self> {
        hp.validate()?;
        let mut b = ParamBuilder {
            params: Vec::new(),
            rng: Rng::derive(seed, &[0x1417]),
        };
        b.affine("enc.node", hp.node_in_dim(), hp.dx);
        b.affine("enc.edge", hp.edge_in_dim(), hp.de);
        b.affine("enc.y", GLOBAL_FEAT_DIM, hp.dy);
        for l in 0..hp.layers {
            let p = format!("layer{l}");
            b.affine(&format!("{p}.q"), hp.dx, hp.dx);
            b.affine(&format!("{p}.k"), hp.dx, hp.dx);
            b.affine(&format!("{p}.v"), hp.dx, hp.dx);
            b.affine(&format!("{p}.film_e.mul"), hp.de, hp.heads);
            b.affine(&format!("{p}.film_e.add"), hp.de, hp.heads);
            b.affine(&format!("{p}.qe"), hp.heads, hp.de);
            b.affine(&format!("{p}.ke"), hp.heads, hp.de);
            b.affine(&format!("{p}.ve"), hp.heads, hp.de);
            b.affine(&format!("{p}.tri_bias"), hp.heads, hp.heads);
            b.affine(&format!("{p}.gate"), hp.heads, hp.heads);
            b.affine(&format!("{p}.film_y_node.mul"), hp.dy, hp.dx);
            b.affine(&format!("{p}.film_y_node.add"), hp.dy, hp.dx);
            b.affine(&format!("{p}.film_y_edge.mul"), hp.dy, hp.de);
            b.affine(&format!("{p}.film_y_edge.add"), hp.dy, hp.de);
            b.affine(&format!("{p}.node_out"), hp.dx, hp.dx);
            b.affine(&format!("{p}.edge_out"), hp.de, hp.de);
            b.affine(&format!("{p}.y_self"), hp.dy, hp.dy);
            b.affine(&format!("{p}.pna_x"), 4 * hp.dx, hp.dy);
            b.affine(&format!("{p}.pna_e"), 4 * hp.de, hp.dy);
            b.affine(&format!("{p}.y_out"), hp.dy, hp.dy);
            b.constant(&format!("{p}.ln_x.gamma"), hp.dx, 1.0);
            b.bias(&format!("{p}.ln_x.beta"), hp.dx);
            b.constant(&format!("{p}.ln_e.gamma"), hp.de, 1.0);
            b.bias(&format!("{p}.ln_e.beta"), hp.de);
            b.constant(&format!("{p}.ln_y.gamma"), hp.dy, 1.0);
            b.bias(&format!("{p}.ln_y.beta"), hp.dy);
        }
        b.affine("head.node", hp.dx, hp.node_cats);
        b.affine("head.edge", hp.de, hp.edge_cats);

        let index = b
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        Ok(ModelParams {
            hp,
            params: b.params,
            index,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn n_tensors(&self) -> usize {
        self.params.len()
    }

    pub fn param(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn param_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    /// Push every parameter tensor onto a tape, returning ids aligned with
    /// the parameter order.
    pub fn bind(&self, tape: &mut Tape) -> TapeBinding {
        let ids = self
            .params
            .iter()
            .map(|p| tape.input(p.values.clone(), p.rows, p.cols))
            .collect();
        TapeBinding { ids }
    }

    fn idx(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = CheckpointFile {
            format_version: CHECKPOINT_FORMAT_VERSION,
            hyperparams: self.hp.clone(),
            tensors: self.params.clone(),
        };
        let json = serde_json::to_string(&file)?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let file: CheckpointFile = serde_json::from_str(&text)?;
        if file.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Parse {
                field: "format_version".into(),
                reason: format!("unsupported checkpoint version {}", file.format_version),
            });
        }
        file.hyperparams.validate()?;
        for p in &file.tensors {
            if p.values.len() != p.rows * p.cols {
                return Err(Error::Parse {
                    field: p.name.clone(),
                    reason: "tensor values do not match shape".into(),
                });
            }
            if p.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    field: p.name.clone(),
                    reason: "non-finite tensor values".into(),
                });
            }
        }
        let index = file
            .tensors
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        Ok(ModelParams {
            hp: file.hyperparams,
            params: file.tensors,
            index,
        })
    }

    /// Inference-mode forward pass (no dropout). Builds a private tape.
    pub fn forward(&self, input: &ForwardInput) -> Result<PosteriorLogits> {
        let mut tape = Tape::new();
        let binding = self.bind(&mut tape);
        let (node_id, edge_id, meta) = forward_on_tape(&mut tape, self, &binding, input, None)?;
        Ok(PosteriorLogits {
            n_pad: meta.n_pad,
            n_real: meta.n_real,
            node_cats: self.hp.node_cats,
            edge_cats: self.hp.edge_cats,
            node_logits: tape.data(node_id).to_vec(),
            edge_logits: tape.data(edge_id).to_vec(),
            mask: meta.mask,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    hyperparams: HyperParams,
    tensors: Vec<Param>,
}

/// Parameter tensor ids on a tape, aligned with [`ModelParams::params`].
pub struct TapeBinding {
    pub ids: Vec<TensorId>,
}

impl TapeBinding {
    pub fn id_of(&self, model: &ModelParams, name: &str) -> TensorId {
        self.ids[model.idx(name)]
    }
}

/// One forward-pass request.
pub struct ForwardInput<'a> {
    pub g: &'a Graph,
    pub t: f64,
    pub g0: Option<&'a Graph>,
    /// Process the graph as if padded to this many node slots.
    pub pad_to: Option<usize>,
}

impl<'a> ForwardInput<'a> {
    pub fn plain(g: &'a Graph, t: f64) -> Self {
        ForwardInput {
            g,
            t,
            g0: None,
            pad_to: None,
        }
    }
}

pub struct ForwardMeta {
    pub n_real: usize,
    pub n_pad: usize,
    pub mask: Vec<bool>,
}

/// Factorized posterior logits with padding metadata. Edge logits are
/// symmetric in (i, j) by construction.
#[derive(Clone, Debug)]
pub struct PosteriorLogits {
    pub n_pad: usize,
    pub n_real: usize,
    pub node_cats: usize,
    pub edge_cats: usize,
    /// `[n_pad * node_cats]`
    pub node_logits: Vec<f64>,
    /// `[n_pad * n_pad * edge_cats]`
    pub edge_logits: Vec<f64>,
    pub mask: Vec<bool>,
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl PosteriorLogits {
    pub fn node_logit_row(&self, i: usize) -> &[f64] {
        &self.node_logits[i * self.node_cats..(i + 1) * self.node_cats]
    }

    pub fn edge_logit_row(&self, i: usize, j: usize) -> &[f64] {
        let r = i * self.n_pad + j;
        &self.edge_logits[r * self.edge_cats..(r + 1) * self.edge_cats]
    }

    pub fn node_probs(&self, i: usize) -> Vec<f64> {
        softmax(self.node_logit_row(i))
    }

    pub fn edge_probs(&self, i: usize, j: usize) -> Vec<f64> {
        softmax(self.edge_logit_row(i, j))
    }
}

fn one_hot_into(out: &mut [f64], offset: usize, cat: usize) {
    out[offset + cat] = 1.0;
}

/// Run the network on an existing tape. Returns node logits `[n_pad,
/// node_cats]`, edge logits `[n_pad^2, edge_cats]`, and padding metadata.
/// `dropout_rng` enables train-mode dropout.
pub fn forward_on_tape(
    tape: &mut Tape,
    model: &ModelParams,
    binding: &TapeBinding,
    input: &ForwardInput,
    mut dropout_rng: Option<&mut Rng>,
) -> Result<(TensorId, TensorId, ForwardMeta)> {
    let hp = &model.hp;
    let g = input.g;
    let n_real = g.n_nodes();
    let n_pad = input.pad_to.unwrap_or(n_real);
    if n_pad < n_real {
        return Err(Error::precondition("pad_to smaller than the graph"));
    }
    if n_pad > hp.n_max {
        return Err(Error::Capacity(format!(
            "{n_pad} node slots exceeds the model capacity n_max={}",
            hp.n_max
        )));
    }
    g.validate_categories(hp.node_cats, hp.edge_cats)?;
    if hp.cond_on_g0 && input.g0.is_none() {
        return Err(Error::precondition("model conditions on g0 but none was given"));
    }
    if let Some(g0) = input.g0 {
        if g0.n_nodes() != n_real {
            return Err(Error::precondition("g0 size does not match the state graph"));
        }
    }

    let mask: Vec<bool> = (0..n_pad).map(|i| i < n_real).collect();
    let pair_mask: Vec<bool> = (0..n_pad * n_pad)
        .map(|r| mask[r / n_pad] && mask[r % n_pad])
        .collect();
    let feats = structural_features(g, input.t, hp.valence.as_ref());

    // Input encodings are constants; only parameters carry gradients.
    let nid = hp.node_in_dim();
    let mut node_in = vec![0.0; n_pad * nid];
    for i in 0..n_real {
        let off = i * nid;
        one_hot_into(&mut node_in, off, g.node_type(i) as usize);
        let mut fo = hp.node_cats;
        if hp.cond_on_g0 {
            one_hot_into(
                &mut node_in,
                off + fo,
                input.g0.unwrap().node_type(i) as usize,
            );
            fo += hp.node_cats;
        }
        node_in[off + fo..off + fo + NODE_FEAT_DIM].copy_from_slice(&feats.node_features[i]);
    }
    let eid = hp.edge_in_dim();
    let mut edge_in = vec![0.0; n_pad * n_pad * eid];
    for i in 0..n_real {
        for j in 0..n_real {
            let off = (i * n_pad + j) * eid;
            let ty = if i == j { 0 } else { g.edge_type(i, j) as usize };
            one_hot_into(&mut edge_in, off, ty);
            if hp.cond_on_g0 {
                let g0 = input.g0.unwrap();
                let ty0 = if i == j { 0 } else { g0.edge_type(i, j) as usize };
                one_hot_into(&mut edge_in, off + hp.edge_cats, ty0);
            }
        }
    }

    let node_in = tape.input(node_in, n_pad, nid);
    let edge_in = tape.input(edge_in, n_pad * n_pad, eid);
    let y_in = tape.input(feats.global_features.clone(), 1, GLOBAL_FEAT_DIM);

    let p = |name: &str| binding.id_of(model, name);
    let lin = |tape: &mut Tape, x: TensorId, name: &str| {
        let w = p(&format!("{name}.w"));
        let b = p(&format!("{name}.b"));
        tape.linear(x, w, b)
    };
    // FiLM(x1, x2) = x1 * (Linear(x2) + 1) + Linear'(x2), with both affine
    // maps of matching output width.
    let film = |tape: &mut Tape, x1: TensorId, x2: TensorId, name: &str| {
        let m = lin(tape, x2, &format!("{name}.mul"));
        let m1 = tape.add_scalar(m, 1.0);
        let a = lin(tape, x2, &format!("{name}.add"));
        let prod = tape.mul(x1, m1);
        tape.add(prod, a)
    };
    // FiLM with a [1, c] modulator broadcast over rows.
    let film_row = |tape: &mut Tape, x1: TensorId, x2: TensorId, name: &str| {
        let m = lin(tape, x2, &format!("{name}.mul"));
        let m1 = tape.add_scalar(m, 1.0);
        let a = lin(tape, x2, &format!("{name}.add"));
        let prod = tape.mul_row_bias(x1, m1);
        tape.add_row_bias(prod, a)
    };

    let dropout = |tape: &mut Tape, x: TensorId, rng: &mut Option<&mut Rng>| -> TensorId {
        let rate = hp.dropout;
        match rng {
            Some(rng) if rate > 0.0 => {
                let (r, c) = tape.shape(x);
                let keep = 1.0 - rate;
                let m: Vec<f64> = (0..r * c)
                    .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let mt = tape.input(m, r, c);
                tape.mul(x, mt)
            }
            _ => x,
        }
    };

    let dhx = hp.dx / hp.heads;
    let dhe = hp.de / hp.heads;

    let mut x = lin(tape, node_in, "enc.node");
    let mut e = lin(tape, edge_in, "enc.edge");
    let mut y = lin(tape, y_in, "enc.y");

    for l in 0..hp.layers {
        let pre = format!("layer{l}");
        let q = lin(tape, x, &format!("{pre}.q"));
        let k = lin(tape, x, &format!("{pre}.k"));
        let v = lin(tape, x, &format!("{pre}.v"));
        let scores = tape.pair_scores(q, k, n_pad, hp.heads, dhx);
        let modulated = film(tape, scores, e, &format!("{pre}.film_e"));

        // Edge pathway: the modulated scores are the new edge working state.
        let qe = lin(tape, modulated, &format!("{pre}.qe"));
        let ke = lin(tape, modulated, &format!("{pre}.ke"));
        let ve = lin(tape, modulated, &format!("{pre}.ve"));
        let tri_bias = lin(tape, modulated, &format!("{pre}.tri_bias"));
        let gate_logits = lin(tape, modulated, &format!("{pre}.gate"));
        let tri = tape.triangle_scores(qe, ke, n_pad, hp.heads, dhe, &mask);
        let tri = tape.add(tri, tri_bias);
        let gate = tape.sigmoid(gate_logits);
        let gated = tape.mul_per_head(tri, ve, dhe);
        let gated = tape.mul_per_head(gate, gated, dhe);
        let e_mod = film_row(tape, gated, y, &format!("{pre}.film_y_edge"));
        let e_new = lin(tape, e_mod, &format!("{pre}.edge_out"));

        // Node pathway.
        let attn = if hp.literal_attention {
            let m: Vec<f64> = pair_mask
                .iter()
                .flat_map(|&ok| vec![if ok { 1.0 } else { 0.0 }; hp.heads])
                .collect();
            let mt = tape.input(m, n_pad * n_pad, hp.heads);
            tape.mul(modulated, mt)
        } else {
            tape.softmax_over_j(modulated, n_pad, &mask)
        };
        let agg = tape.attend(attn, v, n_pad, hp.heads, dhx);
        let x_mod = film_row(tape, agg, y, &format!("{pre}.film_y_node"));
        let x_new = lin(tape, x_mod, &format!("{pre}.node_out"));

        // Global pathway.
        let y_self = lin(tape, y, &format!("{pre}.y_self"));
        let px = tape.pna_pool(x_new, &mask);
        let px = lin(tape, px, &format!("{pre}.pna_x"));
        let pe = tape.pna_pool(e_new, &pair_mask);
        let pe = lin(tape, pe, &format!("{pre}.pna_e"));
        let y_sum = tape.add(y_self, px);
        let y_sum = tape.add(y_sum, pe);
        let y_new = lin(tape, y_sum, &format!("{pre}.y_out"));

        // Dropout + residual + layer norm + ReLU.
        let xd = dropout(tape, x_new, &mut dropout_rng);
        let xr = tape.add(x, xd);
        let xn = tape.layer_norm(
            xr,
            p(&format!("{pre}.ln_x.gamma")),
            p(&format!("{pre}.ln_x.beta")),
            1e-5,
        );
        x = tape.relu(xn);

        let ed = dropout(tape, e_new, &mut dropout_rng);
        let er = tape.add(e, ed);
        let en = tape.layer_norm(
            er,
            p(&format!("{pre}.ln_e.gamma")),
            p(&format!("{pre}.ln_e.beta")),
            1e-5,
        );
        e = tape.relu(en);

        let yd = dropout(tape, y_new, &mut dropout_rng);
        let yr = tape.add(y, yd);
        let yn = tape.layer_norm(
            yr,
            p(&format!("{pre}.ln_y.gamma")),
            p(&format!("{pre}.ln_y.beta")),
            1e-5,
        );
        y = tape.relu(yn);
    }

    let node_logits = lin(tape, x, "head.node");
    let edge_raw = lin(tape, e, "head.edge");
    let edge_logits = tape.symmetrize_pairs(edge_raw, n_pad);

    Ok((
        node_logits,
        edge_logits,
        ForwardMeta {
            n_real,
            n_pad,
            mask,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Permutation;

    fn random_graph(n: usize, node_cats: usize, edge_cats: usize, rng: &mut Rng) -> Graph {
        let nodes: Vec<u8> = (0..n).map(|_| rng.below(node_cats) as u8).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let ty = rng.below(edge_cats) as u8;
                if ty != 0 {
                    edges.push((i, j, ty));
                }
            }
        }
        Graph::from_edges(nodes, &edges).unwrap()
    }

    #[test]
    fn forward_shapes_and_softmax_normalization() {
        let hp = HyperParams::tiny(3, 2);
        let model = ModelParams::init(hp, 1).unwrap();
        let mut rng = Rng::new(2);
        let g = random_graph(5, 3, 2, &mut rng);
        let out = model.forward(&ForwardInput::plain(&g, 0.4)).unwrap();
        assert_eq!(out.node_logits.len(), 5 * 3);
        assert_eq!(out.edge_logits.len(), 25 * 2);
        for i in 0..5 {
            let s: f64 = out.node_probs(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            for j in 0..5 {
                let s: f64 = out.edge_probs(i, j).iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn edge_logits_symmetric() {
        let model = ModelParams::init(HyperParams::tiny(2, 3), 7).unwrap();
        let mut rng = Rng::new(3);
        let g = random_graph(6, 2, 3, &mut rng);
        let out = model.forward(&ForwardInput::plain(&g, 0.7)).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(out.edge_logit_row(i, j), out.edge_logit_row(j, i));
            }
        }
    }

    #[test]
    fn forward_permutation_equivariant() {
        let mut rng = Rng::new(11);
        for trial in 0..10 {
            let model = ModelParams::init(HyperParams::tiny(2, 2), 100 + trial).unwrap();
            let n = 3 + rng.below(4);
            let g = random_graph(n, 2, 2, &mut rng);
            let p = Permutation::random(n, &mut rng);
            let gp = g.permute(&p).unwrap();
            let out = model.forward(&ForwardInput::plain(&g, 0.5)).unwrap();
            let outp = model.forward(&ForwardInput::plain(&gp, 0.5)).unwrap();
            for i in 0..n {
                let a = out.node_logit_row(i);
                let b = outp.node_logit_row(p.map(i));
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() < 1e-6, "node {i}: {x} vs {y}");
                }
                for j in 0..n {
                    let a = out.edge_logit_row(i, j);
                    let b = outp.edge_logit_row(p.map(i), p.map(j));
                    for (x, y) in a.iter().zip(b) {
                        assert!((x - y).abs() < 1e-6, "edge {i},{j}: {x} vs {y}");
                    }
                }
            }
        }
    }

    #[test]
    fn padding_does_not_change_real_slots() {
        let model = ModelParams::init(HyperParams::tiny(2, 2), 9).unwrap();
        let mut rng = Rng::new(5);
        let g = random_graph(4, 2, 2, &mut rng);
        let plain = model.forward(&ForwardInput::plain(&g, 0.3)).unwrap();
        let padded = model
            .forward(&ForwardInput {
                g: &g,
                t: 0.3,
                g0: None,
                pad_to: Some(7),
            })
            .unwrap();
        assert_eq!(padded.n_pad, 7);
        assert_eq!(padded.mask, vec![true, true, true, true, false, false, false]);
        for i in 0..4 {
            for (a, b) in plain.node_logit_row(i).iter().zip(padded.node_logit_row(i)) {
                assert!((a - b).abs() < 1e-9, "node {i}");
            }
            for j in 0..4 {
                for (a, b) in plain
                    .edge_logit_row(i, j)
                    .iter()
                    .zip(padded.edge_logit_row(i, j))
                {
                    assert!((a - b).abs() < 1e-9, "edge {i},{j}");
                }
            }
        }
    }

    #[test]
    fn single_node_graph_is_finite() {
        let model = ModelParams::init(HyperParams::tiny(2, 2), 4).unwrap();
        let g = Graph::from_edges(vec![1], &[]).unwrap();
        let out = model.forward(&ForwardInput::plain(&g, 0.9)).unwrap();
        assert!(out.node_logits.iter().all(|v| v.is_finite()));
        assert!(out.edge_logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn oversize_graph_rejected() {
        let mut hp = HyperParams::tiny(2, 2);
        hp.n_max = 4;
        let model = ModelParams::init(hp, 4).unwrap();
        let mut rng = Rng::new(6);
        let g = random_graph(5, 2, 2, &mut rng);
        assert!(matches!(
            model.forward(&ForwardInput::plain(&g, 0.1)),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn film_zero_init_is_identity() {
        // With both affine maps zero, FiLM(x1, x2) = x1 * (0 + 1) + 0 = x1.
        let mut tape = Tape::new();
        let x1 = tape.input(vec![0.3, -0.7, 1.1, 0.0, 2.0, -1.0], 2, 3);
        let x2 = tape.input(vec![0.5; 8], 2, 4);
        let w_mul = tape.input(vec![0.0; 12], 4, 3);
        let b_mul = tape.input(vec![0.0; 3], 1, 3);
        let w_add = tape.input(vec![0.0; 12], 4, 3);
        let b_add = tape.input(vec![0.0; 3], 1, 3);
        let m = tape.linear(x2, w_mul, b_mul);
        let m1 = tape.add_scalar(m, 1.0);
        let a = tape.linear(x2, w_add, b_add);
        let prod = tape.mul(x1, m1);
        let out = tape.add(prod, a);
        assert_eq!(tape.data(out), tape.data(x1));
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let dir = std::env::temp_dir().join("flowgraph-model-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ckpt.json");
        let model = ModelParams::init(HyperParams::tiny(3, 2), 42).unwrap();
        model.save(&path).unwrap();
        let back = ModelParams::load(&path).unwrap();
        assert_eq!(model.hp, back.hp);
        assert_eq!(model.params.len(), back.params.len());
        for (a, b) in model.params.iter().zip(back.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!((a.rows, a.cols), (b.rows, b.cols));
            for (x, y) in a.values.iter().zip(b.values.iter()) {
                assert_eq!(x.to_bits(), y.to_bits(), "tensor {} not bit-exact", a.name);
            }
        }
    }

    #[test]
    fn literal_attention_flag_changes_output() {
        let mut rng = Rng::new(14);
        let g = random_graph(4, 2, 2, &mut rng);
        let mut hp = HyperParams::tiny(2, 2);
        let base = ModelParams::init(hp.clone(), 5).unwrap();
        hp.literal_attention = true;
        let mut literal = ModelParams::init(hp, 5).unwrap();
        // Same weights, different attention normalization.
        literal.params = base.params.clone();
        let a = base.forward(&ForwardInput::plain(&g, 0.5)).unwrap();
        let b = literal.forward(&ForwardInput::plain(&g, 0.5)).unwrap();
        assert_ne!(a.node_logits, b.node_logits);
    }

    #[test]
    fn conditioning_flag_requires_and_uses_g0() {
        let mut hp = HyperParams::tiny(2, 2);
        hp.cond_on_g0 = true;
        let model = ModelParams::init(hp, 3).unwrap();
        let mut rng = Rng::new(8);
        let g = random_graph(4, 2, 2, &mut rng);
        assert!(model.forward(&ForwardInput::plain(&g, 0.2)).is_err());
        let g0a = random_graph(4, 2, 2, &mut rng);
        let g0b = random_graph(4, 2, 2, &mut rng);
        let by_a = model
            .forward(&ForwardInput {
                g: &g,
                t: 0.2,
                g0: Some(&g0a),
                pad_to: None,
            })
            .unwrap();
        let by_b = model
            .forward(&ForwardInput {
                g: &g,
                t: 0.2,
                g0: Some(&g0b),
                pad_to: None,
            })
            .unwrap();
        assert_ne!(by_a.node_logits, by_b.node_logits);
    }
}
