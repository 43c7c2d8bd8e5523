use rand_chacha::ChaCha8Rng;

use super::{repeat_row, EncoderConfig};
use crate::diff::{Array, Graph, Var};
use crate::error::Result;
use crate::nn::{Ctx, LayerNorm, Linear, ParamId, ParamStore};

const MASKED: f64 = -1e9;

/// Scaled dot-product attention over `[B, N, d]` inputs where row `j` attends to
/// rows `0..=j`. Masked weights underflow to exactly zero.
pub fn causal_attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var> {
    let s = g.shape(q).to_vec();
    let (n, d) = (s[1], s[2]);
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (d as f64).sqrt())?;
    let mut mask = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            mask[i * n + j] = MASKED;
        }
    }
    let mask = g.constant(Array::new(vec![n, n], mask)?);
    let scores = g.add(scores, mask)?;
    let w = g.softmax(scores)?;
    g.matmul(w, v)
}

#[derive(Clone, Debug)]
struct Block {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    norm1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    norm2: LayerNorm,
}

/// Transformer-style causal self-attention stack with a learned empty-history state.
#[derive(Clone, Debug)]
pub struct Attention {
    dim: usize,
    heads: usize,
    input: Linear,
    blocks: Vec<Block>,
    h0: ParamId,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.hidden_dim;
        let input = Linear::new(store, &format!("{name}.in"), input_dim, d, true, rng);
        let blocks = (0..cfg.num_layers)
            .map(|l| {
                let p = format!("{name}.l{l}");
                Block {
                    q: Linear::new(store, &format!("{p}.q"), d, d, false, rng),
                    k: Linear::new(store, &format!("{p}.k"), d, d, false, rng),
                    v: Linear::new(store, &format!("{p}.v"), d, d, false, rng),
                    out: Linear::new(store, &format!("{p}.o"), d, d, true, rng),
                    norm1: LayerNorm::new(store, &format!("{p}.norm1"), d),
                    ff1: Linear::new(store, &format!("{p}.ff1"), d, 2 * d, true, rng),
                    ff2: Linear::new(store, &format!("{p}.ff2"), 2 * d, d, true, rng),
                    norm2: LayerNorm::new(store, &format!("{p}.norm2"), d),
                }
            })
            .collect();
        let h0 = store.add_uniform(format!("{name}.h0"), &[d], 0.1, rng);
        Self { dim: d, heads: cfg.num_heads, input, blocks, h0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn forward(&self, ctx: &mut Ctx, emb: Var) -> Result<Var> {
        let b = ctx.g.shape(emb)[0];
        let dh = self.dim / self.heads;
        let mut x = self.input.forward(ctx, emb)?;
        for blk in &self.blocks {
            let q = blk.q.forward(ctx, x)?;
            let k = blk.k.forward(ctx, x)?;
            let v = blk.v.forward(ctx, x)?;
            let mut heads = Vec::with_capacity(self.heads);
            for hd in 0..self.heads {
                let g = &mut ctx.g;
                let (lo, hi) = (hd * dh, (hd + 1) * dh);
                let qh = g.slice_last(q, lo, hi)?;
                let kh = g.slice_last(k, lo, hi)?;
                let vh = g.slice_last(v, lo, hi)?;
                heads.push(causal_attention(g, qh, kh, vh)?);
            }
            let cat = if heads.len() == 1 { heads[0] } else { ctx.g.concat(&heads, 2)? };
            let a = blk.out.forward(ctx, cat)?;
            let r = ctx.g.add(x, a)?;
            let x1 = blk.norm1.forward(ctx, r)?;
            let f = blk.ff1.forward(ctx, x1)?;
            let f = ctx.g.relu(f)?;
            let f = blk.ff2.forward(ctx, f)?;
            let r = ctx.g.add(x1, f)?;
            x = blk.norm2.forward(ctx, r)?;
        }
        let h0 = ctx.p(self.h0);
        let h0 = repeat_row(ctx, h0, b)?;
        ctx.g.concat(&[h0, x], 1)
    }
}
