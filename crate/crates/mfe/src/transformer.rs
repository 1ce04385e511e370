//! Pre-norm transformer blocks expressed as functions over the autodiff
//! graph, with parameters addressed by name prefix in a [`ParamStore`].

use numcore::graph::{Graph, Var};
use numcore::rng::RngStream;

use crate::params::{Bound, ParamStore};
use crate::Result;

pub const LN_EPS: f32 = 1e-5;

/// Registers the parameters of one transformer block under `prefix`.
/// `cross` adds a second attention sublayer fed by an external sequence.
pub fn init_block(
    store: &mut ParamStore,
    rng: &mut RngStream,
    prefix: &str,
    width: usize,
    mlp_hidden: usize,
    cross: bool,
) {
    init_attention(store, rng, &format!("{prefix}.attn"), width);
    store.insert_ones(&format!("{prefix}.ln1.g"), &[width], true);
    store.insert_zeros(&format!("{prefix}.ln1.b"), &[width], true);
    if cross {
        init_attention(store, rng, &format!("{prefix}.cross"), width);
        store.insert_ones(&format!("{prefix}.lnq.g"), &[width], true);
        store.insert_zeros(&format!("{prefix}.lnq.b"), &[width], true);
        store.insert_ones(&format!("{prefix}.lnkv.g"), &[width], true);
        store.insert_zeros(&format!("{prefix}.lnkv.b"), &[width], true);
    }
    store.insert_gauss(&format!("{prefix}.mlp.w1"), &[width, mlp_hidden], rng, true);
    store.insert_zeros(&format!("{prefix}.mlp.b1"), &[mlp_hidden], true);
    store.insert_gauss(&format!("{prefix}.mlp.w2"), &[mlp_hidden, width], rng, true);
    store.insert_zeros(&format!("{prefix}.mlp.b2"), &[width], true);
    store.insert_ones(&format!("{prefix}.ln2.g"), &[width], true);
    store.insert_zeros(&format!("{prefix}.ln2.b"), &[width], true);
}

fn init_attention(store: &mut ParamStore, rng: &mut RngStream, prefix: &str, width: usize) {
    store.insert_gauss(&format!("{prefix}.wqkv"), &[width, 3 * width], rng, true);
    store.insert_zeros(&format!("{prefix}.bqkv"), &[3 * width], true);
    store.insert_gauss(&format!("{prefix}.wo"), &[width, width], rng, true);
    store.insert_zeros(&format!("{prefix}.bo"), &[width], true);
}

/// Parameter count of one block as registered by [`init_block`].
pub fn block_param_count(width: usize, mlp_hidden: usize, cross: bool) -> usize {
    let attn = width * 3 * width + 3 * width + width * width + width;
    let ln = 2 * width;
    let mlp = width * mlp_hidden + mlp_hidden + mlp_hidden * width + width;
    let mut total = attn + 2 * ln + mlp; // ln1 + ln2
    if cross {
        total += attn + 2 * ln; // cross attention + lnq/lnkv
    }
    total
}

fn layer_norm(g: &Graph<f32>, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    Ok(g.layer_norm(x, p.var(&format!("{prefix}.g"))?, p.var(&format!("{prefix}.b"))?, LN_EPS)?)
}

/// Multi-head attention with a fused qkv projection. `kv` defaults to the
/// query sequence (self-attention).
fn attention(
    g: &Graph<f32>,
    p: &Bound,
    prefix: &str,
    q_seq: Var,
    kv_seq: Var,
    heads: usize,
) -> Result<Var> {
    let width = *g.shape(q_seq).last().expect("rank 3");
    let wqkv = p.var(&format!("{prefix}.wqkv"))?;
    let bqkv = p.var(&format!("{prefix}.bqkv"))?;

    let q_proj = g.add_bcast(g.matmul(q_seq, wqkv)?, bqkv)?;
    let q = g.narrow(q_proj, 2, 0, width)?;
    let (k, v) = if kv_seq == q_seq {
        (
            g.narrow(q_proj, 2, width, width)?,
            g.narrow(q_proj, 2, 2 * width, width)?,
        )
    } else {
        let kv_proj = g.add_bcast(g.matmul(kv_seq, wqkv)?, bqkv)?;
        (
            g.narrow(kv_proj, 2, width, width)?,
            g.narrow(kv_proj, 2, 2 * width, width)?,
        )
    };

    let dh = width / heads;
    let qh = g.split_heads(q, heads)?;
    let kh = g.split_heads(k, heads)?;
    let vh = g.split_heads(v, heads)?;
    let scale = 1.0 / (dh as f32).sqrt();
    let ctx = g.attention(qh, kh, vh, scale)?;
    let merged = g.merge_heads(ctx, heads)?;
    let wo = p.var(&format!("{prefix}.wo"))?;
    let bo = p.var(&format!("{prefix}.bo"))?;
    Ok(g.add_bcast(g.matmul(merged, wo)?, bo)?)
}

/// One pre-norm block: self-attention, optional cross-attention, MLP, each
/// with a residual connection. `x` is `[batch, tokens, width]`.
pub fn block_forward(
    g: &Graph<f32>,
    p: &Bound,
    prefix: &str,
    x: Var,
    heads: usize,
    cross_kv: Option<Var>,
) -> Result<Var> {
    let normed = layer_norm(g, p, &format!("{prefix}.ln1"), x)?;
    let attn = attention(g, p, &format!("{prefix}.attn"), normed, normed, heads)?;
    let mut x = g.add(x, attn)?;

    if let Some(kv) = cross_kv {
        let qn = layer_norm(g, p, &format!("{prefix}.lnq"), x)?;
        let kvn = layer_norm(g, p, &format!("{prefix}.lnkv"), kv)?;
        let cross = attention(g, p, &format!("{prefix}.cross"), qn, kvn, heads)?;
        x = g.add(x, cross)?;
    }

    let normed = layer_norm(g, p, &format!("{prefix}.ln2"), x)?;
    let h = g.gelu(g.add_bcast(g.matmul(normed, p.var(&format!("{prefix}.mlp.w1"))?)?, p.var(&format!("{prefix}.mlp.b1"))?)?);
    let m = g.add_bcast(g.matmul(h, p.var(&format!("{prefix}.mlp.w2"))?)?, p.var(&format!("{prefix}.mlp.b2"))?)?;
    Ok(g.add(x, m)?)
}

/// A stack of identical blocks under `{prefix}.{i}`.
pub fn stack_forward(
    g: &Graph<f32>,
    p: &Bound,
    prefix: &str,
    mut x: Var,
    layers: usize,
    heads: usize,
) -> Result<Var> {
    for i in 0..layers {
        x = block_forward(g, p, &format!("{prefix}.{i}"), x, heads, None)?;
    }
    Ok(x)
}
