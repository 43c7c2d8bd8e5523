//! Variational discovery of the type-level causality graph: a sequence-to-graph
//! encoder, relaxed Bernoulli edge samples, lagged pooling of intra-type
//! history states, the Bernoulli KL penalty and graph artifacts.
//!
//! Graphs are `[M, M]` with row = target type, column = source type, so entry
//! `[m', m]` gates the influence of type `m` events on the intensity of `m'`.

mod certificate;
mod io;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Array, Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Ctx, Linear, ParamId, ParamStore};

pub use certificate::granger_certificate;
pub use io::{read_graph_csv, write_graph_csv, GraphMeta};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrangerConfig {
    /// Number of most recent events pooled for each intensity.
    pub lag: usize,
    pub z_dim: usize,
    pub edge_hidden: usize,
    /// Bernoulli prior on every off-diagonal edge.
    pub prior_p: f64,
    pub temp_initial: f64,
    pub temp_final: f64,
    /// Single Gumbel draw added to the logit instead of logistic noise.
    pub literal_gumbel: bool,
    /// Threshold the mean graph at evaluation time.
    pub hard_eval: bool,
    pub threshold: f64,
}

impl Default for GrangerConfig {
    fn default() -> Self {
        Self {
            lag: 32,
            z_dim: 16,
            edge_hidden: 16,
            prior_p: 0.5,
            temp_initial: 1.0,
            temp_final: 0.1,
            literal_gumbel: false,
            hard_eval: true,
            threshold: 0.5,
        }
    }
}

impl GrangerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lag == 0 {
            return Err(Error::Config("lag must be at least 1".into()));
        }
        if self.z_dim == 0 || self.edge_hidden == 0 {
            return Err(Error::Config("graph encoder widths must be positive".into()));
        }
        if !(self.prior_p > 0.0 && self.prior_p < 1.0) {
            return Err(Error::Config(format!("prior_p {} outside (0, 1)", self.prior_p)));
        }
        if !(self.temp_initial > 0.0 && self.temp_final > 0.0 && self.temp_final <= self.temp_initial) {
            return Err(Error::Config("temperatures must satisfy 0 < final <= initial".into()));
        }
        Ok(())
    }

    /// Geometric anneal from `temp_initial` at epoch 0 to `temp_final` at the last epoch.
    pub fn temperature(&self, epoch: usize, epochs: usize) -> f64 {
        if epochs <= 1 {
            return self.temp_initial;
        }
        let frac = (epoch.min(epochs - 1)) as f64 / (epochs - 1) as f64;
        self.temp_initial * (self.temp_final / self.temp_initial).powf(frac)
    }
}

/// Stride-2 convolution (kernel 3, padding 1) over `[B, n, C]` via an
/// im2col gather; positions at or beyond each row's length read as zero.
fn conv_stride2(ctx: &mut Ctx, x: Var, lens: &[usize], lin: &Linear) -> Result<(Var, Vec<usize>)> {
    let s = ctx.g.shape(x).to_vec();
    let (b, n, c) = (s[0], s[1], s[2]);
    let n_out = n.div_ceil(2);
    let mut idx = Vec::with_capacity(b * n_out * 3 * c);
    for (bi, &len) in lens.iter().enumerate() {
        for o in 0..n_out {
            for tap in 0..3 {
                let p = (2 * o + tap) as isize - 1;
                if p < 0 || p as usize >= len {
                    idx.extend(std::iter::repeat(-1).take(c));
                } else {
                    let base = (bi * n + p as usize) * c;
                    idx.extend((base..base + c).map(|k| k as isize));
                }
            }
        }
    }
    let cols = ctx.g.gather(x, idx, vec![b, n_out, 3 * c])?;
    let y = lin.forward(ctx, cols)?;
    let y = ctx.g.tanh(y)?;
    Ok((y, lens.iter().map(|l| l.div_ceil(2)).collect()))
}

/// Sequence-to-graph encoder: per-type convolution stack with mean readout
/// giving `Z_m`, then an asymmetric pairwise score
/// `g_e([Z_m'; Z_m]) = w · tanh(U Z_m' + V Z_m + b) + c`.
#[derive(Clone, Debug)]
pub struct GraphEncoder {
    conv1: Linear,
    conv2: Linear,
    target: Linear,
    source: Linear,
    score: Linear,
    pub z_dim: usize,
}

impl GraphEncoder {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, cfg: &GrangerConfig, rng: &mut ChaCha8Rng) -> Self {
        let (z, h) = (cfg.z_dim, cfg.edge_hidden);
        Self {
            conv1: Linear::new(store, &format!("{name}.conv1"), 3 * input_dim, z, true, rng),
            conv2: Linear::new(store, &format!("{name}.conv2"), 3 * z, z, true, rng),
            target: Linear::new(store, &format!("{name}.target"), z, h, false, rng),
            source: Linear::new(store, &format!("{name}.source"), z, h, true, rng),
            score: Linear::new(store, &format!("{name}.score"), h, 1, true, rng),
            z_dim: z,
        }
    }

    /// Weight and bias of the final score map, for tests that zero it.
    pub fn score_params(&self) -> (ParamId, ParamId) {
        (self.score.w, self.score.b.expect("score bias"))
    }

    /// `Z` for one type: embeddings `[B, n, E]` with per-row lengths, giving `[B, z_dim]`.
    /// An empty row is read as a single padding event.
    pub fn readout(&self, ctx: &mut Ctx, emb: Var, lens: &[usize]) -> Result<Var> {
        let lens: Vec<usize> = lens.to_vec();
        let (h1, l1) = conv_stride2(ctx, emb, &lens, &self.conv1)?;
        let (h2, l2) = conv_stride2(ctx, h1, &l1, &self.conv2)?;
        let s = ctx.g.shape(h2).to_vec();
        let (b, n) = (s[0], s[1]);
        let mut w = vec![0.0; b * n];
        for (bi, &len) in l2.iter().enumerate() {
            let len = len.clamp(1, n);
            w[bi * n..bi * n + len].iter_mut().for_each(|v| *v = 1.0 / len as f64);
        }
        let w = ctx.g.constant(Array::from_parts(vec![b, 1, n], w));
        let z = ctx.g.matmul(w, h2)?;
        ctx.g.reshape(z, vec![b, self.z_dim])
    }

    /// Edge logits `[B, M·M]` (row-major `[m', m]`) from per-type readouts, each `[B, z_dim]`.
    pub fn edge_logits(&self, ctx: &mut Ctx, z: &[Var]) -> Result<Var> {
        let m = z.len();
        let b = ctx.g.shape(z[0])[0];
        let parts: Vec<Var> = z.iter().map(|&v| ctx.g.reshape(v, vec![b, 1, self.z_dim])).collect::<Result<_>>()?;
        let zc = ctx.g.concat(&parts, 1)?;
        let p = self.target.forward(ctx, zc)?;
        let q = self.source.forward(ctx, zc)?;
        let h = ctx.g.shape(p)[2];
        let mut ip = Vec::with_capacity(b * m * m * h);
        let mut iq = Vec::with_capacity(b * m * m * h);
        for bi in 0..b {
            for t in 0..m {
                for s in 0..m {
                    ip.extend((0..h).map(|k| ((bi * m + t) * h + k) as isize));
                    iq.extend((0..h).map(|k| ((bi * m + s) * h + k) as isize));
                }
            }
        }
        let g = &mut ctx.g;
        let pe = g.gather(p, ip, vec![b, m * m, h])?;
        let qe = g.gather(q, iq, vec![b, m * m, h])?;
        let a = g.add(pe, qe)?;
        let a = g.tanh(a)?;
        let y = self.score.forward(ctx, a)?;
        ctx.g.reshape(y, vec![b, m * m])
    }
}

/// Off-diagonal indicator and identity for `B` stacked `M × M` graphs.
fn masks(b: usize, m: usize) -> (Array, Array) {
    let mut off = vec![1.0; b * m * m];
    let mut diag = vec![0.0; b * m * m];
    for bi in 0..b {
        for i in 0..m {
            off[bi * m * m + i * m + i] = 0.0;
            diag[bi * m * m + i * m + i] = 1.0;
        }
    }
    (Array::from_parts(vec![b, m * m], off), Array::from_parts(vec![b, m * m], diag))
}

/// Replaces the diagonal of every `[B, M·M]` graph by 1.
fn unit_diagonal(g: &mut Graph, x: Var, m: usize) -> Result<Var> {
    let b = g.shape(x)[0];
    let (off, diag) = masks(b, m);
    let off = g.constant(off);
    let diag = g.constant(diag);
    let y = g.mul(x, off)?;
    g.add(y, diag)
}

/// Edge probabilities `sigmoid(logits)` with unit diagonal.
pub fn edge_probs(g: &mut Graph, logits: Var, m: usize) -> Result<Var> {
    let p = g.sigmoid(logits)?;
    unit_diagonal(g, p, m)
}

/// Noise for `n` relaxed edge samples: logistic (difference of two Gumbels),
/// or a single standard Gumbel draw in literal mode.
pub fn edge_noise(rng: &mut ChaCha8Rng, n: usize, literal_gumbel: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            if literal_gumbel {
                -(-u.ln()).ln()
            } else {
                u.ln() - (-u).ln_1p()
            }
        })
        .collect()
}

/// Relaxed sample `sigmoid((logit + noise) / ε)` with unit diagonal.
pub fn relaxed_sample(g: &mut Graph, logits: Var, noise: &[f64], temperature: f64, m: usize) -> Result<Var> {
    if temperature <= 0.0 {
        return Err(Error::Domain(format!("temperature {temperature} must be positive")));
    }
    let shape = g.shape(logits).to_vec();
    let n = g.constant(Array::new(shape, noise.to_vec())?);
    let y = g.add(logits, n)?;
    let y = g.scale(y, 1.0 / temperature)?;
    let s = g.sigmoid(y)?;
    unit_diagonal(g, s, m)
}

/// Summed `KL[Bernoulli(sigmoid(x)) ‖ Bernoulli(prior)]` over off-diagonal
/// entries, using `ln p = −softplus(−x)` and `ln(1 − p) = −softplus(x)`.
pub fn bernoulli_kl(g: &mut Graph, logits: Var, prior: f64, m: usize) -> Result<Var> {
    let b = g.shape(logits)[0];
    let p = g.sigmoid(logits)?;
    let nx = g.neg(logits)?;
    let sp_neg = g.softplus(nx)?;
    let sp_pos = g.softplus(logits)?;
    let lp = g.scale(sp_neg, -1.0)?;
    let lq = g.scale(sp_pos, -1.0)?;
    let a = g.offset(lp, -prior.ln())?;
    let a = g.mul(p, a)?;
    let one_minus = g.scale(p, -1.0)?;
    let one_minus = g.offset(one_minus, 1.0)?;
    let c = g.offset(lq, -(-prior).ln_1p())?;
    let c = g.mul(one_minus, c)?;
    let kl = g.add(a, c)?;
    let (off, _) = masks(b, m);
    let off = g.constant(off);
    let kl = g.mul(kl, off)?;
    g.sum(kl)
}

/// Elementwise mean of `[M, M]` graphs.
pub fn mean_graph(graphs: &[Array]) -> Result<Array> {
    let first = graphs.first().ok_or_else(|| Error::Degenerate("no graphs to average".into()))?;
    let mut acc = vec![0.0; first.len()];
    for gph in graphs {
        if gph.shape() != first.shape() {
            return Err(Error::Shape("graphs disagree in size".into()));
        }
        acc.iter_mut().zip(gph.data()).for_each(|(a, v)| *a += v);
    }
    let n = graphs.len() as f64;
    Array::new(first.shape().to_vec(), acc.into_iter().map(|a| a / n).collect())
}

/// Thresholds a graph to `{0, 1}`; entries at or above `threshold` become 1.
pub fn harden(probs: &Array, threshold: f64) -> Array {
    probs.map(|p| if p >= threshold { 1.0 } else { 0.0 })
}

/// Learnable lag weights `ρ_1..ρ_L`.
#[derive(Clone, Debug)]
pub struct LagAggregator {
    pub rho: ParamId,
    pub lag: usize,
}

/// Row layout for lagged pooling over `R` events.
#[derive(Clone, Debug, Default)]
pub struct LagPlan {
    /// `[R·L]` rows of the stacked intra-type states, or -1 when the lag runs
    /// past the start of the sequence.
    pub src: Vec<isize>,
    /// `[R·M·L]` index into the flattened graphs `[G·M·M]` for target `m` and
    /// lag `l`, or -1.
    pub edge: Vec<isize>,
}

impl LagAggregator {
    pub fn new(store: &mut ParamStore, name: &str, lag: usize) -> Self {
        let init: Vec<f64> = (1..=lag).map(|l| 1.0 / l as f64).collect();
        Self { rho: store.add(format!("{name}.rho"), Array::vector(init)), lag }
    }

    /// Pooled states `Σ_l ρ_l A[m, m_{i−l}] h_{i−l}` as `[R, M, D]`, and the
    /// ungated pool `Σ_l ρ_l h_{i−l}` as `[R, D]`.
    pub fn pool(&self, ctx: &mut Ctx, states: Var, graphs: Var, plan: &LagPlan, m: usize) -> Result<(Var, Var)> {
        let l = self.lag;
        let r = plan.src.len() / l;
        let d = ctx.g.shape(states)[1];
        let rho = ctx.p(self.rho);
        let g = &mut ctx.g;
        let x = crate::nn::take_rows(g, states, &plan.src, d)?;
        let x = g.reshape(x, vec![r, l, d])?;
        let ng = g.shape(graphs).iter().product();
        let flat = g.reshape(graphs, vec![ng])?;
        let w = g.gather(flat, plan.edge.clone(), vec![r, m, l])?;
        let w = g.mul(w, rho)?;
        let gated = g.matmul(w, x)?;
        let present: Vec<f64> = plan.src.iter().map(|&s| if s >= 0 { 1.0 } else { 0.0 }).collect();
        let present = g.constant(Array::from_parts(vec![r, 1, l], present));
        let u = g.mul(present, rho)?;
        let plain = g.matmul(u, x)?;
        let plain = g.reshape(plain, vec![r, d])?;
        Ok((gated, plain))
    }
}

#[cfg(test)]
mod tests;
