//! Ground-truth generators: homogeneous Poisson, multivariate Hawkes with
//! exponential kernels, and the self-correcting process, each with its exact
//! compensator for likelihood and time-rescaling checks.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::diff::Array;
use crate::error::{Error, Result};
use crate::events::EventSequence;

/// Hard cap on generated events per sequence.
const MAX_EVENTS: usize = 10_000_000;

fn exp1(rng: &mut impl Rng) -> f64 {
    Exp1.sample(rng)
}

/// Homogeneous Poisson process of the given rate on `[0, horizon]`, all type 1.
pub fn gen_poisson(rate: f64, horizon: f64, rng: &mut impl Rng) -> Result<EventSequence> {
    if !(rate > 0.0 && rate.is_finite() && horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Domain(format!("poisson needs rate > 0 and horizon > 0, got {rate}, {horizon}")));
    }
    let mut times = Vec::new();
    let mut t = 0.0;
    loop {
        t += exp1(rng) / rate;
        if t > horizon {
            break;
        }
        if times.len() >= MAX_EVENTS {
            return Err(Error::Unstable(format!("poisson rate {rate} exceeds {MAX_EVENTS} events")));
        }
        times.push(t);
    }
    let marks = vec![1; times.len()];
    Ok(EventSequence { times, marks })
}

/// Time-rescaled gaps `rate · (t_i − t_{i−1})` of a Poisson sequence.
pub fn poisson_residuals(rate: f64, seq: &EventSequence) -> Vec<f64> {
    seq.intervals().into_iter().map(|g| rate * g).collect()
}

/// Multivariate Hawkes process with intensities
/// `λ_m'(t) = α_m' + Σ_{t_j < t} η[m'][m_j] exp(−β[m'][m_j] (t − t_j))`.
/// Matrices are indexed `[target][source]` with 0-based types.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HawkesSpec {
    pub alpha: Vec<f64>,
    pub eta: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub horizon: f64,
}

impl Default for HawkesSpec {
    /// Two types, self-excitation on both, and type 1 exciting type 2.
    fn default() -> Self {
        Self {
            alpha: vec![0.2, 0.2],
            eta: vec![vec![0.5, 0.0], vec![0.8, 0.5]],
            beta: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            horizon: 50.0,
        }
    }
}

impl HawkesSpec {
    pub fn num_types(&self) -> usize {
        self.alpha.len()
    }

    /// Branching matrix `η / β`.
    pub fn branching(&self) -> Vec<Vec<f64>> {
        self.eta.iter().zip(&self.beta).map(|(e, b)| e.iter().zip(b).map(|(e, b)| e / b).collect()).collect()
    }

    /// Spectral radius of the branching matrix, from `‖B^(2^k)‖^(1/2^k)` by
    /// repeated squaring with the scale tracked in log space.
    pub fn branching_radius(&self) -> f64 {
        let m = self.num_types();
        let mut b: Vec<f64> = self.branching().into_iter().flatten().collect();
        let mut log_scale = 0.0;
        let mut power = 1.0;
        for _ in 0..40 {
            let norm = b.iter().map(|x| x.abs()).fold(0.0, f64::max);
            if norm == 0.0 {
                return 0.0;
            }
            b.iter_mut().for_each(|x| *x /= norm);
            log_scale += norm.ln() / power;
            let mut sq = vec![0.0; m * m];
            for i in 0..m {
                for k in 0..m {
                    let a = b[i * m + k];
                    if a != 0.0 {
                        for j in 0..m {
                            sq[i * m + j] += a * b[k * m + j];
                        }
                    }
                }
            }
            b = sq;
            power *= 2.0;
        }
        let norm = b.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if norm == 0.0 {
            return 0.0;
        }
        (log_scale + norm.ln() / power).exp()
    }

    /// Checks shapes, signs and stationarity.
    pub fn validate(&self) -> Result<()> {
        let m = self.num_types();
        if m == 0 {
            return Err(Error::Config("hawkes spec needs at least one type".into()));
        }
        let square = |x: &Vec<Vec<f64>>| x.len() == m && x.iter().all(|r| r.len() == m);
        if !square(&self.eta) || !square(&self.beta) {
            return Err(Error::Config(format!("eta and beta must be {m}×{m}")));
        }
        if self.alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::Config("base rates must be positive".into()));
        }
        if self.eta.iter().flatten().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(Error::Config("excitations must be non-negative".into()));
        }
        if self.beta.iter().flatten().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::Config("decays must be positive".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        let r = self.branching_radius();
        if r >= 1.0 {
            return Err(Error::Unstable(format!("branching ratio {r:.4} is not below 1")));
        }
        Ok(())
    }

    /// True Granger graph `[M, M]`: 1 where `η[m'][m] > 0`.
    pub fn graph(&self) -> Array {
        let m = self.num_types();
        let data = self.eta.iter().flatten().map(|&e| if e > 0.0 { 1.0 } else { 0.0 }).collect();
        Array::from_parts(vec![m, m], data)
    }

    /// Exact intensities of every type at time `t` given the events of `seq` before `t`.
    pub fn intensity(&self, seq: &EventSequence, t: f64) -> Vec<f64> {
        let mut lam = self.alpha.clone();
        for (&tj, &mj) in seq.times.iter().zip(&seq.marks) {
            if tj >= t {
                break;
            }
            for (target, l) in lam.iter_mut().enumerate() {
                *l += self.eta[target][mj - 1] * (-self.beta[target][mj - 1] * (t - tj)).exp();
            }
        }
        lam
    }

    /// Compensator of each type over `[0, t]`.
    pub fn compensator(&self, seq: &EventSequence, t: f64) -> Vec<f64> {
        let mut out: Vec<f64> = self.alpha.iter().map(|a| a * t).collect();
        for (&tj, &mj) in seq.times.iter().zip(&seq.marks) {
            if tj >= t {
                break;
            }
            for (target, o) in out.iter_mut().enumerate() {
                let (e, b) = (self.eta[target][mj - 1], self.beta[target][mj - 1]);
                *o += e / b * (-(-b * (t - tj)).exp_m1());
            }
        }
        out
    }
}

/// Decaying excitation state `E[target][source]`.
struct Excitation<'a> {
    spec: &'a HawkesSpec,
    state: Vec<Vec<f64>>,
    at: f64,
}

impl<'a> Excitation<'a> {
    fn new(spec: &'a HawkesSpec) -> Self {
        let m = spec.num_types();
        Self { spec, state: vec![vec![0.0; m]; m], at: 0.0 }
    }

    fn advance(&mut self, t: f64) {
        let dt = t - self.at;
        for (row, b) in self.state.iter_mut().zip(&self.spec.beta) {
            for (e, b) in row.iter_mut().zip(b) {
                *e *= (-b * dt).exp();
            }
        }
        self.at = t;
    }

    fn intensities(&self) -> Vec<f64> {
        self.spec.alpha.iter().zip(&self.state).map(|(a, row)| a + row.iter().sum::<f64>()).collect()
    }

    fn excite(&mut self, source: usize) {
        for (row, eta) in self.state.iter_mut().zip(&self.spec.eta) {
            row[source] += eta[source];
        }
    }
}

/// Ogata thinning with the total intensity just after the current point as
/// the bound (valid because every kernel decays).
pub fn gen_hawkes(spec: &HawkesSpec, rng: &mut impl Rng) -> Result<EventSequence> {
    spec.validate()?;
    let mut ex = Excitation::new(spec);
    let (mut times, mut marks) = (Vec::new(), Vec::new());
    let mut t = 0.0;
    loop {
        let bound: f64 = ex.intensities().iter().sum();
        if !bound.is_finite() || bound > 1e12 || times.len() >= MAX_EVENTS {
            return Err(Error::Unstable(format!(
                "intensity bound {bound:e} after {} events (branching ratio {:.4})",
                times.len(),
                spec.branching_radius()
            )));
        }
        t += exp1(rng) / bound;
        if t > spec.horizon {
            break;
        }
        ex.advance(t);
        let lam = ex.intensities();
        let total: f64 = lam.iter().sum();
        let u: f64 = rng.gen::<f64>() * bound;
        if u < total {
            // pick the type in proportion to its intensity
            let mut acc = 0.0;
            let mut k = lam.len() - 1;
            for (i, l) in lam.iter().enumerate() {
                acc += l;
                if u < acc {
                    k = i;
                    break;
                }
            }
            times.push(t);
            marks.push(k + 1);
            ex.excite(k);
        }
    }
    Ok(EventSequence { times, marks })
}

/// Exact log-likelihood `Σ_i log λ_{m_i}(t_i) − Σ_m Λ_m(0, t_end)` by the
/// exponential-kernel recursion.
pub fn hawkes_loglik(spec: &HawkesSpec, seq: &EventSequence, t_end: f64) -> f64 {
    let mut ex = Excitation::new(spec);
    let mut ll = 0.0;
    for (&t, &m) in seq.times.iter().zip(&seq.marks) {
        ex.advance(t);
        ll += ex.intensities()[m - 1].ln();
        ex.excite(m - 1);
    }
    ll - spec.compensator(seq, t_end).iter().sum::<f64>()
}

/// Increments of the total compensator between consecutive events (the first
/// from time 0); unit exponentials when `seq` follows `spec`.
pub fn hawkes_residuals(spec: &HawkesSpec, seq: &EventSequence) -> Vec<f64> {
    let mut ex = Excitation::new(spec);
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(seq.len());
    for (&t, &m) in seq.times.iter().zip(&seq.marks) {
        let mut inc = 0.0;
        for (target, a) in spec.alpha.iter().enumerate() {
            inc += a * (t - prev);
            for source in 0..spec.num_types() {
                let b = spec.beta[target][source];
                inc += ex.state[target][source] / b * (-(-b * (t - prev)).exp_m1());
            }
        }
        out.push(inc);
        ex.advance(t);
        ex.excite(m - 1);
        prev = t;
    }
    out
}

/// Self-correcting process `λ(t) = exp(μ t − α N(t))` on `[0, horizon]`,
/// by thinning over windows of length `1/μ` with the window-end intensity as bound.
pub fn gen_selfcorrecting(mu: f64, alpha: f64, horizon: f64, rng: &mut impl Rng) -> Result<EventSequence> {
    if !(mu > 0.0 && alpha > 0.0 && horizon > 0.0) || !(mu.is_finite() && alpha.is_finite() && horizon.is_finite()) {
        return Err(Error::Domain(format!("self-correcting needs μ, α, horizon > 0, got {mu}, {alpha}, {horizon}")));
    }
    let window = 1.0 / mu;
    let mut times = Vec::new();
    let mut t = 0.0;
    while t < horizon {
        let n = times.len() as f64;
        let end = (t + window).min(horizon);
        let log_bound = mu * end - alpha * n;
        let bound = log_bound.exp();
        if !bound.is_finite() || times.len() >= MAX_EVENTS {
            return Err(Error::Unstable(format!("self-correcting intensity overflow at t = {t}")));
        }
        let s = t + exp1(rng) / bound;
        if s > end {
            t = end;
            continue;
        }
        t = s;
        if rng.gen::<f64>() < (mu * s - alpha * n - log_bound).exp() {
            times.push(s);
        }
    }
    let marks = vec![1; times.len()];
    Ok(EventSequence { times, marks })
}

/// Compensator increments `e^{−αN} (e^{μ t_i} − e^{μ t_{i−1}}) / μ`.
pub fn selfcorrecting_residuals(mu: f64, alpha: f64, seq: &EventSequence) -> Vec<f64> {
    let mut prev = 0.0;
    seq.times
        .iter()
        .enumerate()
        .map(|(n, &t)| {
            let inc = (mu * prev - alpha * n as f64).exp() * (mu * (t - prev)).exp_m1() / mu;
            prev = t;
            inc
        })
        .collect()
}
