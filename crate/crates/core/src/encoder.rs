//! Spatiotemporal encoder blocks: gated temporal convolution, per-view graph
//! and hypergraph convolution, attention-based view fusion, and the stacked
//! "sandwich" path encoder (GTC → spatial conv → GTC per layer, then
//! attention fusion across layers).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::params::{ParamId, ParamSet};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::views::View;

/// Temporal kernel width (causal, left-padded).
pub const KERNEL: usize = 3;
const LN_EPS: f64 = 1e-5;

#[inline]
fn bv(bound: &[Var], id: ParamId) -> Var {
    bound[id.0]
}

/// Binds every registered parameter onto the tape, indexed by `ParamId`.
pub fn bind_all(tape: &mut Tape, params: &ParamSet) -> Vec<Var> {
    params.ids().map(|id| tape.param(params, id)).collect()
}

/// Multiplies each input scalar by the learnable embedding vector `e`:
/// out[n,t,:] = x[n,t] · e.
pub fn embed_sequence(tape: &mut Tape, bound: &[Var], e: ParamId, x: Var) -> Var {
    let dims = tape.value(x).dims().to_vec();
    let flat = tape.reshape(x, &[dims[0], dims[1], 1]);
    tape.channel_map(flat, bv(bound, e))
}

/// One gated temporal convolution sub-layer:
/// out = res + g·(transform − res) with g = sigmoid(conv_gate(x)),
/// transform = conv(x), and res = x (or a 1×1 projection when the widths
/// differ).
#[derive(Debug, Clone)]
pub struct GtcSubLayer {
    pub w_gate: ParamId,
    pub b_gate: ParamId,
    pub w_transform: ParamId,
    pub b_transform: ParamId,
    pub w_residual: Option<ParamId>,
}

impl GtcSubLayer {
    pub fn register(
        params: &mut ParamSet,
        rng: &mut SeededRng,
        name: &str,
        c_in: usize,
        c_out: usize,
    ) -> Self {
        let fan = KERNEL * c_in;
        let w_gate = params.register_uniform(format!("{name}.gate.w"), &[KERNEL, c_in, c_out], fan, rng);
        let b_gate = params.register_bias(format!("{name}.gate.b"), &[c_out]);
        let w_transform =
            params.register_uniform(format!("{name}.transform.w"), &[KERNEL, c_in, c_out], fan, rng);
        let b_transform = params.register_bias(format!("{name}.transform.b"), &[c_out]);
        let w_residual = (c_in != c_out)
            .then(|| params.register_uniform(format!("{name}.residual.w"), &[c_in, c_out], c_in, rng));
        Self {
            w_gate,
            b_gate,
            w_transform,
            b_transform,
            w_residual,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Var {
        let gate_pre = tape.conv1d_causal(x, bv(bound, self.w_gate), bv(bound, self.b_gate));
        let gate = tape.sigmoid(gate_pre);
        let transform =
            tape.conv1d_causal(x, bv(bound, self.w_transform), bv(bound, self.b_transform));
        let residual = match self.w_residual {
            None => x,
            Some(w) => tape.channel_map(x, bv(bound, w)),
        };
        let delta = tape.sub(transform, residual);
        let gated = tape.mul(gate, delta);
        tape.add(residual, gated)
    }
}

/// Gated temporal convolution block: two stacked sub-layers. A width change
/// happens in the first sub-layer.
#[derive(Debug, Clone)]
pub struct GtcBlock {
    pub sub1: GtcSubLayer,
    pub sub2: GtcSubLayer,
}

impl GtcBlock {
    pub fn register(
        params: &mut ParamSet,
        rng: &mut SeededRng,
        name: &str,
        c_in: usize,
        c_out: usize,
    ) -> Self {
        Self {
            sub1: GtcSubLayer::register(params, rng, &format!("{name}.sub1"), c_in, c_out),
            sub2: GtcSubLayer::register(params, rng, &format!("{name}.sub2"), c_out, c_out),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Var {
        let h = self.sub1.forward(tape, bound, x);
        self.sub2.forward(tape, bound, h)
    }
}

/// Graph convolution for one view: ReLU(Â · x · W) applied per time slice.
pub fn gcn_view(tape: &mut Tape, bound: &[Var], w: ParamId, a_hat: Var, x: Var) -> Var {
    let mixed = tape.mix(a_hat, x);
    let mapped = tape.channel_map(mixed, bv(bound, w));
    tape.relu(mapped)
}

/// Hypergraph convolution for one view: hyperedge mean aggregation
/// M = D_e⁻¹ Hᵀ x, inner ReLU, then node update
/// ReLU(D_v^{-1/2} H M W). Zero-degree rows and columns follow the
/// pseudo-inverse convention (0 → 0).
pub fn hgcn_view(tape: &mut Tape, bound: &[Var], w: ParamId, h: Var, x: Var) -> Var {
    let ht = tape.permute(h, &[1, 0]);
    let col_sum = tape.sum_axis(h, 0);
    let edge_inv = tape.recip0(col_sum);
    let row_sum = tape.sum_axis(h, 1);
    let node_scale = tape.rsqrt0(row_sum);

    let aggregated = tape.mix(ht, x);
    let aggregated = tape.row_scale(aggregated, edge_inv);
    let aggregated = tape.relu(aggregated);

    let spread = tape.mix(h, aggregated);
    let spread = tape.row_scale(spread, node_scale);
    let mapped = tape.channel_map(spread, bv(bound, w));
    tape.relu(mapped)
}

/// One transformer encoder block over a short token axis (views or layers),
/// batched over every (region, time) position, followed by a mean over
/// tokens.
#[derive(Debug, Clone)]
pub struct FusionBlock {
    pub heads: usize,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bvv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

pub struct FusionOutput {
    /// Mean over the fused tokens, shaped like one input token.
    pub fused: Var,
    /// Attention probabilities (batch·heads, tokens, tokens), for reporting.
    pub attention: Var,
}

impl FusionBlock {
    pub fn register(
        params: &mut ParamSet,
        rng: &mut SeededRng,
        name: &str,
        d: usize,
        heads: usize,
        ffn_hidden: usize,
    ) -> Self {
        assert!(heads > 0 && d % heads == 0, "embed dim {d} not divisible by {heads} heads");
        let proj = |params: &mut ParamSet, rng: &mut SeededRng, field: &str| {
            (
                params.register_uniform(format!("{name}.{field}.w"), &[d, d], d, rng),
                params.register_bias(format!("{name}.{field}.b"), &[d]),
            )
        };
        let (wq, bq) = proj(params, rng, "query");
        let (wk, bk) = proj(params, rng, "key");
        let (wv, bvv) = proj(params, rng, "value");
        let (wo, bo) = proj(params, rng, "out");
        let ln1_gain = params.register(format!("{name}.ln1.gain"), Tensor::full(&[d], 1.0), false);
        let ln1_bias = params.register_bias(format!("{name}.ln1.bias"), &[d]);
        let ffn_w1 = params.register_uniform(format!("{name}.ffn.w1"), &[d, ffn_hidden], d, rng);
        let ffn_b1 = params.register_bias(format!("{name}.ffn.b1"), &[ffn_hidden]);
        let ffn_w2 = params.register_uniform(format!("{name}.ffn.w2"), &[ffn_hidden, d], ffn_hidden, rng);
        let ffn_b2 = params.register_bias(format!("{name}.ffn.b2"), &[d]);
        let ln2_gain = params.register(format!("{name}.ln2.gain"), Tensor::full(&[d], 1.0), false);
        let ln2_bias = params.register_bias(format!("{name}.ln2.bias"), &[d]);
        Self {
            heads,
            wq,
            bq,
            wk,
            bk,
            wv,
            bvv,
            wo,
            bo,
            ln1_gain,
            ln1_bias,
            ffn_w1,
            ffn_b1,
            ffn_w2,
            ffn_b2,
            ln2_gain,
            ln2_bias,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &[Var], tokens: &[Var]) -> FusionOutput {
        assert!(!tokens.is_empty());
        let dims = tape.value(tokens[0]).dims().to_vec();
        let (n, t, d) = (dims[0], dims[1], dims[2]);
        let b = n * t;
        let v_tokens = tokens.len();
        let heads = self.heads;
        let w = d / heads;

        let stacked: Vec<Var> = tokens
            .iter()
            .map(|&tok| tape.reshape(tok, &[b, 1, d]))
            .collect();
        let x = tape.concat(&stacked, 1); // (b, V, d)

        let split = |tape: &mut Tape, y: Var| -> Var {
            let y = tape.reshape(y, &[b, v_tokens, heads, w]);
            let y = tape.permute(y, &[0, 2, 1, 3]);
            tape.reshape(y, &[b * heads, v_tokens, w])
        };

        let q = tape.affine(x, bv(bound, self.wq), bv(bound, self.bq));
        let k = tape.affine(x, bv(bound, self.wk), bv(bound, self.bk));
        let val = tape.affine(x, bv(bound, self.wv), bv(bound, self.bvv));
        let qh = split(tape, q);
        let kh = split(tape, k);
        let vh = split(tape, val);

        let scores = tape.bmm_nt(qh, kh);
        let scores = tape.mul_scalar(scores, 1.0 / crate::fmath::sqrt(w as f64));
        let attention = tape.softmax_last(scores);
        let context = tape.bmm(attention, vh); // (b·h, V, w)
        let context = tape.reshape(context, &[b, heads, v_tokens, w]);
        let context = tape.permute(context, &[0, 2, 1, 3]);
        let context = tape.reshape(context, &[b, v_tokens, d]);
        let projected = tape.affine(context, bv(bound, self.wo), bv(bound, self.bo));

        let res1 = tape.add(x, projected);
        let norm1 = tape.layer_norm_last(res1, bv(bound, self.ln1_gain), bv(bound, self.ln1_bias), LN_EPS);

        let hidden = tape.affine(norm1, bv(bound, self.ffn_w1), bv(bound, self.ffn_b1));
        let hidden = tape.relu(hidden);
        let ffn = tape.affine(hidden, bv(bound, self.ffn_w2), bv(bound, self.ffn_b2));
        let res2 = tape.add(norm1, ffn);
        let norm2 = tape.layer_norm_last(res2, bv(bound, self.ln2_gain), bv(bound, self.ln2_bias), LN_EPS);

        let pooled = tape.mean_axis(norm2, 1); // (b, d)
        let fused = tape.reshape(pooled, &[n, t, d]);
        FusionOutput { fused, attention }
    }
}

/// Attention-free fallback: plain mean over tokens.
pub fn mean_fuse(tape: &mut Tape, tokens: &[Var]) -> Var {
    assert!(!tokens.is_empty());
    let mut acc = tokens[0];
    for &tok in &tokens[1..] {
        acc = tape.add(acc, tok);
    }
    tape.mul_scalar(acc, 1.0 / tokens.len() as f64)
}

/// Which structure a path convolves over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    Graph,
    Hyper,
}

/// Per-view spatial convolution weights for one layer of one path.
#[derive(Debug, Clone)]
pub struct SpatialConv {
    pub weights: Vec<(View, ParamId)>,
}

impl SpatialConv {
    pub fn register(
        params: &mut ParamSet,
        rng: &mut SeededRng,
        name: &str,
        d: usize,
        views: &[View],
    ) -> Self {
        let weights = views
            .iter()
            .map(|&view| {
                let id = params.register_uniform(
                    format!("{name}.{}.w", view.code()),
                    &[d, d],
                    d,
                    rng,
                );
                (view, id)
            })
            .collect();
        Self { weights }
    }
}

/// One encoder layer: GTC in, per-view spatial convolution, attention fusion
/// across views, GTC out.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub gtc_in: GtcBlock,
    pub conv: SpatialConv,
    pub fusion: FusionBlock,
    pub gtc_out: GtcBlock,
}

/// Stack of encoder layers plus the attention fusion across layer outputs.
#[derive(Debug, Clone)]
pub struct PathEncoder {
    pub kind: PathKind,
    pub layers: Vec<EncoderLayer>,
    pub layer_fusion: FusionBlock,
}

/// Tape handles produced by one path for one window, kept for the
/// contrastive loss and inspection.
pub struct PathActivations {
    /// `per_view[l]` holds the post-convolution activation of every view at
    /// layer `l`.
    pub per_view: Vec<Vec<(View, Var)>>,
    pub per_layer: Vec<Var>,
    pub output: Var,
}

impl PathEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        params: &mut ParamSet,
        rng: &mut SeededRng,
        name: &str,
        kind: PathKind,
        d: usize,
        heads: usize,
        ffn_hidden: usize,
        n_layers: usize,
        views: &[View],
    ) -> Self {
        let layers = (0..n_layers)
            .map(|l| EncoderLayer {
                gtc_in: GtcBlock::register(params, rng, &format!("{name}.layer{l}.gtc_in"), d, d),
                conv: SpatialConv::register(params, rng, &format!("{name}.layer{l}.conv"), d, views),
                fusion: FusionBlock::register(
                    params,
                    rng,
                    &format!("{name}.layer{l}.view_fusion"),
                    d,
                    heads,
                    ffn_hidden,
                ),
                gtc_out: GtcBlock::register(params, rng, &format!("{name}.layer{l}.gtc_out"), d, d),
            })
            .collect();
        let layer_fusion =
            FusionBlock::register(params, rng, &format!("{name}.layer_fusion"), d, heads, ffn_hidden);
        Self {
            kind,
            layers,
            layer_fusion,
        }
    }

    /// Runs the stack. `structures` pairs each view with its normalized
    /// adjacency (graph path) or masked incidence (hypergraph path).
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        x0: Var,
        structures: &[(View, Var)],
        use_attention: bool,
    ) -> PathActivations {
        let mut x = x0;
        let mut per_view = Vec::with_capacity(self.layers.len());
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let h = layer.gtc_in.forward(tape, bound, x);
            let mut view_outs = Vec::with_capacity(structures.len());
            for (view, w) in &layer.conv.weights {
                let structure = structures
                    .iter()
                    .find(|(v, _)| v == view)
                    .unwrap_or_else(|| panic!("missing structure for view {}", view.code()))
                    .1;
                let out = match self.kind {
                    PathKind::Graph => gcn_view(tape, bound, *w, structure, h),
                    PathKind::Hyper => hgcn_view(tape, bound, *w, structure, h),
                };
                view_outs.push((*view, out));
            }
            let tokens: Vec<Var> = view_outs.iter().map(|&(_, v)| v).collect();
            let fused = if use_attention {
                layer.fusion.forward(tape, bound, &tokens).fused
            } else {
                mean_fuse(tape, &tokens)
            };
            let out = layer.gtc_out.forward(tape, bound, fused);
            per_view.push(view_outs);
            per_layer.push(out);
            x = out;
        }
        let output = if use_attention {
            self.layer_fusion.forward(tape, bound, &per_layer).fused
        } else {
            mean_fuse(tape, &per_layer)
        };
        PathActivations {
            per_view,
            per_layer,
            output,
        }
    }
}

/// Stacked temporal-then-affine encoder producing the accident-temporal view
/// embedding U^T from an N×T history.
#[derive(Debug, Clone)]
pub struct TemporalViewEncoder {
    pub conv1_w: ParamId,
    pub conv1_b: ParamId,
    pub conv2_w: ParamId,
    pub conv2_b: ParamId,
    pub fc_w: ParamId,
    pub fc_b: ParamId,
}

impl TemporalViewEncoder {
    pub fn register(params: &mut ParamSet, rng: &mut SeededRng, name: &str, d: usize) -> Self {
        Self {
            conv1_w: params.register_uniform(format!("{name}.conv1.w"), &[KERNEL, 1, d], KERNEL, rng),
            conv1_b: params.register_bias(format!("{name}.conv1.b"), &[d]),
            conv2_w: params.register_uniform(
                format!("{name}.conv2.w"),
                &[KERNEL, d, d],
                KERNEL * d,
                rng,
            ),
            conv2_b: params.register_bias(format!("{name}.conv2.b"), &[d]),
            fc_w: params.register_uniform(format!("{name}.fc.w"), &[d, d], d, rng),
            fc_b: params.register_bias(format!("{name}.fc.b"), &[d]),
        }
    }

    /// history (N, T) → embedding (N, d). Two causal convolutions with ReLU,
    /// mean pooling over time, then an affine map.
    pub fn forward(&self, tape: &mut Tape, bound: &[Var], history: Var) -> Var {
        let dims = tape.value(history).dims().to_vec();
        assert!(dims[1] >= KERNEL, "history shorter than the temporal kernel");
        let x = tape.reshape(history, &[dims[0], dims[1], 1]);
        let h = tape.conv1d_causal(x, bv(bound, self.conv1_w), bv(bound, self.conv1_b));
        let h = tape.relu(h);
        let h = tape.conv1d_causal(h, bv(bound, self.conv2_w), bv(bound, self.conv2_b));
        let h = tape.relu(h);
        let pooled = tape.mean_axis(h, 1); // (N, d)
        tape.affine(pooled, bv(bound, self.fc_w), bv(bound, self.fc_b))
    }
}

/// Two affine layers with ReLU producing a static view embedding (POI/road).
#[derive(Debug, Clone)]
pub struct StaticViewEncoder {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl StaticViewEncoder {
    pub fn register(
        params: &mut ParamSet,
        rng: &mut SeededRng,
        name: &str,
        d_in: usize,
        d_out: usize,
    ) -> Self {
        Self {
            w1: params.register_uniform(format!("{name}.w1"), &[d_in, d_out], d_in, rng),
            b1: params.register_bias(format!("{name}.b1"), &[d_out]),
            w2: params.register_uniform(format!("{name}.w2"), &[d_out, d_out], d_out, rng),
            b2: params.register_bias(format!("{name}.b2"), &[d_out]),
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &[Var], features: Var) -> Var {
        let h = tape.affine(features, bv(bound, self.w1), bv(bound, self.b1));
        let h = tape.relu(h);
        tape.affine(h, bv(bound, self.w2), bv(bound, self.b2))
    }
}

/// Human-readable block name, used in gradient-check reports.
pub fn describe_path(kind: PathKind) -> String {
    match kind {
        PathKind::Graph => String::from("graph path"),
        PathKind::Hyper => String::from("hypergraph path"),
    }
}
