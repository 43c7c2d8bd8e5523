use rand_chacha::ChaCha8Rng;

use super::{repeat_row, EncoderConfig};
use crate::diff::Var;
use crate::error::Result;
use crate::nn::{Ctx, Linear, ParamId, ParamStore};

/// Indices of the `k` rows of a `rows × cols` magnitude grid with the largest
/// energy, in descending order (ties to the lower index). Missing slots are -1.
///
/// Rows `r` and `rows − r` of a real input's spectrum have equal energy; both
/// are scored by their pair average so rounding cannot reorder them.
pub fn top_rows(mag: &[f64], rows: usize, cols: usize, k: usize, exclude_dc: bool) -> Vec<isize> {
    let energy: Vec<f64> = (0..rows).map(|r| mag[r * cols..(r + 1) * cols].iter().map(|m| m * m).sum()).collect();
    let mut scored: Vec<(usize, f64)> = (0..rows)
        .filter(|&r| !(exclude_dc && r == 0))
        .map(|r| (r, 0.5 * (energy[r] + energy[(rows - r) % rows])))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<isize> = scored.iter().take(k).map(|(r, _)| *r as isize).collect();
    out.resize(k, -1);
    out
}

/// Spectral encoder: 2-D DFT magnitude of each causal prefix of embeddings,
/// keep the `top_k` frequency rows, project to the state width.
#[derive(Clone, Debug)]
pub struct FNet {
    dim: usize,
    top_k: usize,
    exclude_dc: bool,
    proj: Linear,
    h0: ParamId,
}

impl FNet {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let proj = Linear::new(store, &format!("{name}.proj"), cfg.top_k * input_dim, cfg.hidden_dim, true, rng);
        let h0 = store.add_uniform(format!("{name}.h0"), &[cfg.hidden_dim], 0.1, rng);
        Self { dim: cfg.hidden_dim, top_k: cfg.top_k, exclude_dc: cfg.exclude_dc, proj, h0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Selected spectrum rows, flattened, for every prefix: `[B * N, top_k * E]`.
    pub fn spectra(&self, ctx: &mut Ctx, emb: Var) -> Result<Var> {
        let s = ctx.g.shape(emb).to_vec();
        let (b, n, e) = (s[0], s[1], s[2]);
        let k = self.top_k;
        let mut rows = Vec::with_capacity(b * n);
        for bi in 0..b {
            for j in 1..=n {
                let base = bi * n * e;
                let idx: Vec<isize> = (base..base + j * e).map(|x| x as isize).collect();
                let g = &mut ctx.g;
                let prefix = g.gather(emb, idx, vec![j, e])?;
                let mag = g.dft_magnitude(prefix)?;
                let mag = g.scale(mag, 1.0 / ((j * e) as f64).sqrt())?;
                let pick = top_rows(g.value(mag).data(), j, e, k, self.exclude_dc);
                let mut idx = Vec::with_capacity(k * e);
                for r in pick {
                    if r < 0 {
                        idx.extend(std::iter::repeat(-1).take(e));
                    } else {
                        idx.extend((0..e).map(|c| r * e as isize + c as isize));
                    }
                }
                rows.push(g.gather(mag, idx, vec![1, k * e])?);
            }
        }
        ctx.g.concat(&rows, 0)
    }

    pub fn forward(&self, ctx: &mut Ctx, emb: Var) -> Result<Var> {
        let s = ctx.g.shape(emb).to_vec();
        let (b, n) = (s[0], s[1]);
        let spec = self.spectra(ctx, emb)?;
        let y = self.proj.forward(ctx, spec)?;
        let y = ctx.g.reshape(y, vec![b, n, self.dim])?;
        let h0 = ctx.p(self.h0);
        let h0 = repeat_row(ctx, h0, b)?;
        ctx.g.concat(&[h0, y], 1)
    }
}
