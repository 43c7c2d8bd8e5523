use rand_chacha::ChaCha8Rng;

use super::family::{bisect, integrate_survival, Expectation, TRAPEZOID_POINTS};
use crate::diff::{Array, Var};
use crate::error::Result;
use crate::nn::{Ctx, Linear, ParamId, ParamStore};

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Monotone network for the cumulative hazard of one interval:
/// `Λ(τ) = softplus(W3 tanh(W2 tanh(w_τ τ + W_h h + b1) + b2) + b3) + b_t τ`,
/// with `w_τ, W2, W3` kept non-negative through softplus and `b_t > 0`.
#[derive(Clone, Debug)]
pub struct FnnHead {
    w_tau: ParamId,
    hist: Linear,
    w2: ParamId,
    b2: ParamId,
    w3: ParamId,
    b3: ParamId,
    bt: ParamId,
    pub hidden: usize,
}

/// Per-row log intensity and cumulative hazard (`Λ(τ) − Λ(0)`), each `[R, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct FnnOut {
    pub log_lambda: Var,
    pub chf: Var,
    /// Pre-activation `W_h h + b1`, kept for numeric evaluation.
    pub pre: Var,
}

impl FnnHead {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let b = 1.0 / (hidden as f64).sqrt();
        Self {
            w_tau: store.add_uniform(format!("{name}.w_tau"), &[hidden], 1.0, rng),
            hist: Linear::new(store, &format!("{name}.hist"), input_dim, hidden, true, rng),
            w2: store.add_uniform(format!("{name}.w2"), &[hidden, hidden], b, rng),
            b2: store.add_uniform(format!("{name}.b2"), &[hidden], b, rng),
            w3: store.add_uniform(format!("{name}.w3"), &[hidden, 1], b, rng),
            b3: store.add_uniform(format!("{name}.b3"), &[1], b, rng),
            bt: store.add(format!("{name}.bt"), Array::vector(vec![-2.0])),
            hidden,
        }
    }

    /// `h` is `[R, D]`, `tau` holds one interval per row.
    pub fn forward(&self, ctx: &mut Ctx, h: Var, tau: &[f64]) -> Result<FnnOut> {
        let r = tau.len();
        let pre = self.hist.forward(ctx, h)?;
        let ps: Vec<Var> = [self.w_tau, self.w2, self.w3, self.bt, self.b2, self.b3].iter().map(|p| ctx.p(*p)).collect();
        let g = &mut ctx.g;
        let (wt, w2, w3, bt) = (g.softplus(ps[0])?, g.softplus(ps[1])?, g.softplus(ps[2])?, g.softplus(ps[3])?);
        let (b2, b3) = (ps[4], ps[5]);
        let t = g.constant(Array::from_parts(vec![r, 1], tau.to_vec()));
        let cum = |g: &mut crate::diff::Graph, t: Var| -> Result<(Var, Var, Var, Var)> {
            let a1 = g.mul(t, wt)?;
            let a1 = g.add(a1, pre)?;
            let z1 = g.tanh(a1)?;
            let a2 = g.matmul(z1, w2)?;
            let a2 = g.add(a2, b2)?;
            let z2 = g.tanh(a2)?;
            let a3 = g.matmul(z2, w3)?;
            let a3 = g.add(a3, b3)?;
            let sp = g.softplus(a3)?;
            let lin = g.mul(t, bt)?;
            Ok((g.add(sp, lin)?, z1, z2, a3))
        };
        let (lam_t, z1, z2, a3) = cum(g, t)?;
        let zero = g.constant(Array::zeros(&[r, 1]));
        let (lam_0, _, _, _) = cum(g, zero)?;
        let chf = g.sub(lam_t, lam_0)?;
        // dΛ/dτ by the chain rule, written as graph operations
        let one_minus = |g: &mut crate::diff::Graph, z: Var| -> Result<Var> {
            let z2 = g.square(z)?;
            let n = g.neg(z2)?;
            g.offset(n, 1.0)
        };
        let d1 = one_minus(g, z1)?;
        let d1 = g.mul(d1, wt)?;
        let d2 = g.matmul(d1, w2)?;
        let s2 = one_minus(g, z2)?;
        let d2 = g.mul(d2, s2)?;
        let d3 = g.matmul(d2, w3)?;
        let s3 = g.sigmoid(a3)?;
        let lam = g.mul(s3, d3)?;
        let lam = g.add(lam, bt)?;
        let log_lambda = g.log(lam)?;
        Ok(FnnOut { log_lambda, chf, pre })
    }

    /// Numeric evaluators for each row of a finished forward pass.
    pub fn scalars(&self, ctx: &Ctx, out: &FnnOut) -> Vec<FnnScalar> {
        let st = ctx.store();
        let sp = |id: ParamId| st.get(id).data().iter().map(|x| softplus(*x)).collect::<Vec<f64>>();
        let (wt, w2, w3) = (sp(self.w_tau), sp(self.w2), sp(self.w3));
        let bt = softplus(st.get(self.bt).data()[0]);
        let b2 = st.get(self.b2).data().to_vec();
        let b3 = st.get(self.b3).data()[0];
        let pre = ctx.g.value(out.pre);
        pre.data()
            .chunks(self.hidden)
            .map(|p| FnnScalar {
                pre: p.to_vec(),
                w_tau: wt.clone(),
                w2: w2.clone(),
                b2: b2.clone(),
                w3: w3.clone(),
                b3,
                bt,
            })
            .collect()
    }
}

/// Plain-number copy of one row of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct FnnScalar {
    pub pre: Vec<f64>,
    pub w_tau: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: f64,
    pub bt: f64,
}

impl FnnScalar {
    fn raw(&self, t: f64) -> f64 {
        let h = self.pre.len();
        let z1: Vec<f64> = (0..h).map(|i| (self.w_tau[i] * t + self.pre[i]).tanh()).collect();
        let mut a3 = self.b3;
        for j in 0..h {
            let mut a2 = self.b2[j];
            for i in 0..h {
                a2 += z1[i] * self.w2[i * h + j];
            }
            a3 += a2.tanh() * self.w3[j];
        }
        softplus(a3) + self.bt * t
    }

    /// `Λ(τ) − Λ(0)`.
    pub fn chf(&self, t: f64) -> f64 {
        self.raw(t) - self.raw(0.0)
    }

    pub fn survival(&self, t: f64) -> f64 {
        (-self.chf(t)).exp()
    }

    /// Intensity by central difference of the cumulative hazard.
    pub fn intensity(&self, t: f64) -> f64 {
        let h = 1e-6 * t.abs().max(1.0);
        (self.raw(t + h) - self.raw((t - h).max(0.0))) / (t + h - (t - h).max(0.0))
    }

    fn quantile(&self, p: f64) -> Option<f64> {
        let target = -(-p).ln_1p();
        let mut hi = 1.0;
        while self.chf(hi) < target {
            hi *= 2.0;
            if hi > 1e12 {
                return None;
            }
        }
        Some(bisect(|t| self.chf(t) - target, 0.0, hi))
    }

    pub fn expectation(&self) -> Expectation {
        integrate_survival(|t| self.survival(t), |p| self.quantile(p), TRAPEZOID_POINTS)
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> f64 {
        let u: f64 = rng.gen();
        self.quantile(u).unwrap_or(f64::INFINITY)
    }
}
