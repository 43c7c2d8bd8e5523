use rand_chacha::ChaCha8Rng;

use super::family::{Component, Mixture, SURVIVAL_FLOOR};
use super::FamilyKind;
use crate::diff::{Array, Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Ctx, Linear, ParamId, ParamStore};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Raw log-scale parameters are clamped to this range before `exp`.
const LOG_SCALE_LIMIT: f64 = 12.0;

/// Gompertz slope range: `[1e-7, min(1e7, ln 50 / t_max)]`.
pub fn gompertz_beta_max(t_max: f64) -> f64 {
    (50f64.ln() / t_max).min(1e7)
}

/// Affine map from history encodings to mixture parameters, laid out field-major:
/// column `f·M·K + m·K + k` is field `f` of component `k` of type `m`.
#[derive(Clone, Debug)]
pub struct MixtureHead {
    pub kind: FamilyKind,
    pub num_types: usize,
    pub components: usize,
    pub t_max: f64,
    /// Shared map `[D, F·M·K]`, or one `[D, F·K]` map per type.
    shared: Option<Linear>,
    per_type: Option<(ParamId, ParamId)>,
}

impl MixtureHead {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kind: FamilyKind,
        input_dim: usize,
        num_types: usize,
        components: usize,
        per_type: bool,
        t_max: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if kind == FamilyKind::FnnIntegral {
            return Err(Error::Config("the cumulative-hazard network is not a mixture head".into()));
        }
        if components == 0 || num_types == 0 {
            return Err(Error::Config("mixture head needs K ≥ 1 and M ≥ 1".into()));
        }
        let f = kind.num_fields();
        let bound = 1.0 / (input_dim.max(1) as f64).sqrt();
        let (shared, per) = if per_type {
            let w = store.add_uniform(format!("{name}.w"), &[num_types, input_dim, f * components], bound, rng);
            let b = store.add_uniform(format!("{name}.b"), &[num_types, 1, f * components], bound, rng);
            (None, Some((w, b)))
        } else {
            (Some(Linear::new(store, name, input_dim, f * num_types * components, true, rng)), None)
        };
        Ok(Self { kind, num_types, components, t_max, shared, per_type: per })
    }

    /// `h` is `[R, D]` for a shared head or `[M, R, D]` for per-type heads.
    pub fn forward(&self, ctx: &mut Ctx, h: Var) -> Result<MixtureOut> {
        let raw = match (&self.shared, &self.per_type) {
            (Some(lin), _) => lin.forward(ctx, h)?,
            (None, Some((w, b))) => {
                let (m, k, f) = (self.num_types, self.components, self.kind.num_fields());
                let r = ctx.g.shape(h)[1];
                let (w, b) = (ctx.p(*w), ctx.p(*b));
                let y = ctx.g.matmul(h, w)?;
                let y = ctx.g.add(y, b)?;
                // [M, R, F·K] -> [R, F·M·K]
                let mut idx = Vec::with_capacity(r * f * m * k);
                for ri in 0..r {
                    for fi in 0..f {
                        for mi in 0..m {
                            for ki in 0..k {
                                idx.push(((mi * r + ri) * f * k + fi * k + ki) as isize);
                            }
                        }
                    }
                }
                ctx.g.gather(y, idx, vec![r, f * m * k])?
            }
            _ => unreachable!(),
        };
        MixtureOut::from_raw(&mut ctx.g, self.kind, raw, self.num_types, self.components, self.t_max)
    }
}

/// Per-row mixture parameters as graph nodes, each `[R, M, K]`.
#[derive(Clone, Debug)]
pub struct MixtureOut {
    pub kind: FamilyKind,
    pub rows: usize,
    pub num_types: usize,
    pub components: usize,
    pub log_w: Var,
    /// Family fields in order: lognorm/logcauchy/gaussian (μ, σ);
    /// gompertz/weibull (η, β); expdecay (η, β, α).
    pub fields: Vec<Var>,
    /// Logs of positive fields (same order, `None` for location fields).
    pub logs: Vec<Option<Var>>,
}

/// Log density and log survival per row and type, each `[R, M]`.
#[derive(Clone, Copy, Debug)]
pub struct TimeTerms {
    pub log_f: Var,
    pub log_s: Var,
    /// Survival values that hit the floor.
    pub saturated: usize,
}

impl MixtureOut {
    pub fn from_raw(g: &mut Graph, kind: FamilyKind, raw: Var, m: usize, k: usize, t_max: f64) -> Result<Self> {
        let f = kind.num_fields();
        let s = g.shape(raw).to_vec();
        if s.len() != 2 || s[1] != f * m * k {
            return Err(Error::Shape(format!("raw parameters {:?} do not hold {}×{}×{} fields", s, f, m, k)));
        }
        let r = s[0];
        let field = |g: &mut Graph, i: usize| -> Result<Var> {
            let x = g.slice_last(raw, i * m * k, (i + 1) * m * k)?;
            g.reshape(x, vec![r, m, k])
        };
        let w = field(g, 0)?;
        let log_w = g.log_softmax(w)?;
        let mut fields = Vec::new();
        let mut logs = Vec::new();
        for i in 1..f {
            let x = field(g, i)?;
            let location = matches!(kind, FamilyKind::LogNorm | FamilyKind::LogCauchy | FamilyKind::Gaussian) && i == 1;
            if location {
                fields.push(x);
                logs.push(None);
                continue;
            }
            let lx = g.clamp(x, -LOG_SCALE_LIMIT, LOG_SCALE_LIMIT)?;
            let v = g.exp(lx)?;
            if kind == FamilyKind::Gompertz && i == 2 {
                let b = g.clamp(v, 1e-7, gompertz_beta_max(t_max))?;
                let lb = g.log(b)?;
                fields.push(b);
                logs.push(Some(lb));
            } else {
                fields.push(v);
                logs.push(Some(lx));
            }
        }
        Ok(Self { kind, rows: r, num_types: m, components: k, log_w, fields, logs })
    }

    /// Evaluates the family at intervals `tau` (one per row).
    pub fn time_terms(&self, g: &mut Graph, tau: &[f64]) -> Result<TimeTerms> {
        let (r, m) = (self.rows, self.num_types);
        if tau.len() != r {
            return Err(Error::Shape(format!("{} intervals for {} rows", tau.len(), r)));
        }
        let positive = self.kind != FamilyKind::Gaussian;
        if positive {
            if let Some(t) = tau.iter().find(|t| !(**t > 0.0)) {
                return Err(Error::Domain(format!("interval {t} must be positive")));
            }
        }
        let col = |g: &mut Graph, v: Vec<f64>| g.constant(Array::from_parts(vec![r, 1, 1], v));
        let t = col(g, tau.to_vec());
        let lt = col(g, tau.iter().map(|x| if *x > 0.0 { x.ln() } else { 0.0 }).collect());
        enum Surv {
            Log(Var),
            Linear(Var),
        }
        let (log_fk, surv) = match self.kind {
            FamilyKind::LogNorm => {
                let (mu, sigma, ls) = (self.fields[0], self.fields[1], self.logs[1].unwrap());
                let d = g.sub(lt, mu)?;
                let z = g.div(d, sigma)?;
                let z2 = g.square(z)?;
                let q = g.scale(z2, -0.5)?;
                let a = g.sub(q, ls)?;
                let a = g.sub(a, lt)?;
                let lf = g.offset(a, -LN_SQRT_2PI)?;
                let e = g.scale(z, FRAC_1_SQRT_2)?;
                let e = g.erf(e)?;
                let sk = g.scale(e, -0.5)?;
                (lf, Surv::Linear(g.offset(sk, 0.5)?))
            }
            FamilyKind::Gaussian => {
                let (mu, sigma, ls) = (self.fields[0], self.fields[1], self.logs[1].unwrap());
                let d = g.sub(t, mu)?;
                let z = g.div(d, sigma)?;
                let z2 = g.square(z)?;
                let q = g.scale(z2, -0.5)?;
                let a = g.sub(q, ls)?;
                let lf = g.offset(a, -LN_SQRT_2PI)?;
                let e = g.scale(z, FRAC_1_SQRT_2)?;
                let e = g.erf(e)?;
                let sk = g.scale(e, -0.5)?;
                (lf, Surv::Linear(g.offset(sk, 0.5)?))
            }
            FamilyKind::LogCauchy => {
                let (mu, sigma, ls) = (self.fields[0], self.fields[1], self.logs[1].unwrap());
                let d = g.sub(lt, mu)?;
                let u = g.div(d, sigma)?;
                let u2 = g.square(u)?;
                let u2 = g.offset(u2, 1.0)?;
                let l1 = g.log(u2)?;
                let a = g.add(l1, ls)?;
                let a = g.add(a, lt)?;
                let a = g.neg(a)?;
                let lf = g.offset(a, -std::f64::consts::PI.ln())?;
                let at = g.atan(u)?;
                let sk = g.scale(at, -1.0 / std::f64::consts::PI)?;
                (lf, Surv::Linear(g.offset(sk, 0.5)?))
            }
            FamilyKind::Gompertz => {
                let (eta, beta, le) = (self.fields[0], self.fields[1], self.logs[0].unwrap());
                let bt = g.mul(beta, t)?;
                let e = g.exp(bt)?;
                let e = g.offset(e, -1.0)?;
                let ratio = g.div(eta, beta)?;
                let chf = g.mul(ratio, e)?;
                let a = g.add(le, bt)?;
                let lf = g.sub(a, chf)?;
                (lf, Surv::Log(g.neg(chf)?))
            }
            FamilyKind::ExpDecay => {
                let (eta, beta, alpha) = (self.fields[0], self.fields[1], self.fields[2]);
                let bt = g.mul(beta, t)?;
                let nbt = g.neg(bt)?;
                let decay = g.exp(nbt)?;
                let ed = g.mul(eta, decay)?;
                let lam = g.add(ed, alpha)?;
                let ll = g.log(lam)?;
                let one_minus = g.neg(decay)?;
                let one_minus = g.offset(one_minus, 1.0)?;
                let ratio = g.div(eta, beta)?;
                let c1 = g.mul(ratio, one_minus)?;
                let c2 = g.mul(alpha, t)?;
                let chf = g.add(c1, c2)?;
                let lf = g.sub(ll, chf)?;
                (lf, Surv::Log(g.neg(chf)?))
            }
            FamilyKind::Weibull => {
                let (beta, le, lb) = (self.fields[1], self.logs[0].unwrap(), self.logs[1].unwrap());
                let let_ = g.add(le, lt)?;
                let p = g.mul(beta, let_)?;
                let chf = g.exp(p)?;
                let bm1 = g.offset(beta, -1.0)?;
                let a = g.mul(bm1, let_)?;
                let a = g.add(a, le)?;
                let a = g.add(a, lb)?;
                let lf = g.sub(a, chf)?;
                (lf, Surv::Log(g.neg(chf)?))
            }
            FamilyKind::FnnIntegral => unreachable!("not a mixture"),
        };
        let wf = g.add(self.log_w, log_fk)?;
        let log_f = g.logsumexp(wf)?;
        let log_f = g.reshape(log_f, vec![r, m])?;
        let mut saturated = 0;
        let log_s = match surv {
            Surv::Log(ls) => {
                let ws = g.add(self.log_w, ls)?;
                let l = g.logsumexp(ws)?;
                g.reshape(l, vec![r, m])?
            }
            Surv::Linear(sk) => {
                let w = g.exp(self.log_w)?;
                let ws = g.mul(w, sk)?;
                let s = g.sum_last(ws)?;
                saturated = g.value(s).data().iter().filter(|v| **v < SURVIVAL_FLOOR).count();
                let s = g.clamp(s, SURVIVAL_FLOOR, 1.0)?;
                let l = g.log(s)?;
                g.reshape(l, vec![r, m])?
            }
        };
        Ok(TimeTerms { log_f, log_s, saturated })
    }

    /// Numeric mixtures, indexed `[row][type]`.
    pub fn to_mixtures(&self, g: &Graph) -> Vec<Vec<Mixture>> {
        let (r, m, k) = (self.rows, self.num_types, self.components);
        let lw = g.value(self.log_w).data();
        let vals: Vec<&[f64]> = self.fields.iter().map(|v| g.value(*v).data()).collect();
        (0..r)
            .map(|ri| {
                (0..m)
                    .map(|mi| {
                        let base = (ri * m + mi) * k;
                        let weights: Vec<f64> = lw[base..base + k].iter().map(|x| x.exp()).collect();
                        let comps = (base..base + k)
                            .map(|i| {
                                let (a, b) = (vals[0][i], vals[1][i]);
                                match self.kind {
                                    FamilyKind::LogNorm => Component::LogNorm { mu: a, sigma: b },
                                    FamilyKind::Gompertz => Component::Gompertz { eta: a, beta: b },
                                    FamilyKind::ExpDecay => Component::ExpDecay { eta: a, beta: b, alpha: vals[2][i] },
                                    FamilyKind::Weibull => Component::Weibull { eta: a, beta: b },
                                    FamilyKind::LogCauchy => Component::LogCauchy { mu: a, sigma: b },
                                    FamilyKind::Gaussian => Component::Gaussian { mu: a, sigma: b },
                                    FamilyKind::FnnIntegral => unreachable!(),
                                }
                            })
                            .collect();
                        Mixture { kind: self.kind, weights, components: comps }
                    })
                    .collect()
            })
            .collect()
    }
}
