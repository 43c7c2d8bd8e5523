//! Scalar (non-differentiable) evaluation of mixture interevent distributions.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::FamilyKind;
use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Floor applied to survival probabilities before taking logs or dividing.
pub const SURVIVAL_FLOOR: f64 = 1e-12;

/// Points of the trapezoid grid used for numeric expectations.
pub const TRAPEZOID_POINTS: usize = 10_000;

/// One mixture component. Positive-support components take `τ > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Component {
    LogNorm { mu: f64, sigma: f64 },
    Gompertz { eta: f64, beta: f64 },
    ExpDecay { eta: f64, beta: f64, alpha: f64 },
    Weibull { eta: f64, beta: f64 },
    LogCauchy { mu: f64, sigma: f64 },
    Gaussian { mu: f64, sigma: f64 },
}

impl Component {
    pub fn log_pdf(&self, t: f64) -> f64 {
        match *self {
            Component::LogNorm { mu, sigma } => {
                let l = t.ln();
                let z = (l - mu) / sigma;
                -l - sigma.ln() - LN_SQRT_2PI - 0.5 * z * z
            }
            Component::Gompertz { eta, beta } => eta.ln() + beta * t - self.chf(t),
            Component::ExpDecay { .. } | Component::Weibull { .. } => self.hazard(t).ln() - self.chf(t),
            Component::LogCauchy { mu, sigma } => {
                let l = t.ln();
                let u = (l - mu) / sigma;
                -l - PI.ln() - sigma.ln() - (1.0 + u * u).ln()
            }
            Component::Gaussian { mu, sigma } => {
                let z = (t - mu) / sigma;
                -sigma.ln() - LN_SQRT_2PI - 0.5 * z * z
            }
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        match *self {
            Component::LogNorm { .. } | Component::LogCauchy { .. } | Component::Gaussian { .. } => {
                1.0 - self.survival(t)
            }
            _ => -(-self.chf(t)).exp_m1(),
        }
    }

    pub fn survival(&self, t: f64) -> f64 {
        match *self {
            Component::LogNorm { mu, sigma } => {
                if t <= 0.0 {
                    return 1.0;
                }
                0.5 * libm::erfc((t.ln() - mu) / (sigma * SQRT_2))
            }
            Component::LogCauchy { mu, sigma } => {
                if t <= 0.0 {
                    return 1.0;
                }
                0.5 - ((t.ln() - mu) / sigma).atan() / PI
            }
            Component::Gaussian { mu, sigma } => 0.5 * libm::erfc((t - mu) / (sigma * SQRT_2)),
            _ => (-self.chf(t)).exp(),
        }
    }

    /// Closed-form hazard for the families that have one.
    pub fn hazard(&self, t: f64) -> f64 {
        match *self {
            Component::Gompertz { eta, beta } => eta * (beta * t).exp(),
            Component::ExpDecay { eta, beta, alpha } => eta * (-beta * t).exp() + alpha,
            Component::Weibull { eta, beta } => eta * beta * (eta * t).powf(beta - 1.0),
            _ => self.log_pdf(t).exp() / self.survival(t).max(SURVIVAL_FLOOR),
        }
    }

    /// Cumulative hazard `-ln S(t)`.
    pub fn chf(&self, t: f64) -> f64 {
        if t <= 0.0 && !matches!(self, Component::Gaussian { .. }) {
            return 0.0;
        }
        match *self {
            Component::Gompertz { eta, beta } => eta / beta * (beta * t).exp_m1(),
            Component::ExpDecay { eta, beta, alpha } => -eta / beta * (-beta * t).exp_m1() + alpha * t,
            Component::Weibull { eta, beta } => (eta * t).powf(beta),
            _ => -self.survival(t).max(SURVIVAL_FLOOR).ln(),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.gen();
        match *self {
            Component::LogNorm { mu, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                (mu + sigma * z).exp()
            }
            Component::Gompertz { eta, beta } => gompertz_inverse_cdf(eta, beta, u),
            Component::Weibull { eta, beta } => (-(-u).ln_1p()).powf(1.0 / beta) / eta,
            Component::LogCauchy { mu, sigma } => (mu + sigma * (PI * (u - 0.5)).tan()).exp(),
            Component::Gaussian { mu, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                mu + sigma * z
            }
            Component::ExpDecay { .. } => {
                // invert the cumulative hazard at a unit exponential draw
                let target = -(-u).ln_1p();
                let mut hi = 1.0;
                while self.chf(hi) < target {
                    hi *= 2.0;
                }
                bisect(|t| self.chf(t) - target, 0.0, hi)
            }
        }
    }
}

/// Inverse CDF of a Gompertz law: `(1/β) ln(1 − (β/η) ln(1 − u))`.
pub fn gompertz_inverse_cdf(eta: f64, beta: f64, u: f64) -> f64 {
    (-(beta / eta) * (-u).ln_1p()).ln_1p() / beta
}

pub(crate) fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.abs().max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Trapezoid rule on `n` equally spaced points.
pub fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / (n - 1) as f64;
    let mut s = 0.5 * (f(a) + f(b));
    for i in 1..n - 1 {
        s += f(a + h * i as f64);
    }
    s * h
}

/// Result of a numeric or closed-form expectation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Expectation {
    pub value: f64,
    /// Set when the integration range could not be bracketed; `value` is partial.
    pub warning: bool,
    /// Upper end of the integration range, for numeric estimates.
    pub horizon: Option<f64>,
}

/// Mixture of components from one family.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub kind: FamilyKind,
    pub weights: Vec<f64>,
    pub components: Vec<Component>,
}

impl Mixture {
    pub fn new(kind: FamilyKind, weights: Vec<f64>, components: Vec<Component>) -> Result<Self> {
        if weights.len() != components.len() || weights.is_empty() {
            return Err(Error::Shape("mixture needs equally many weights and components".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Domain("mixture weights must lie on the simplex".into()));
        }
        Ok(Self { kind, weights, components })
    }

    pub fn single(kind: FamilyKind, c: Component) -> Self {
        Self { kind, weights: vec![1.0], components: vec![c] }
    }

    fn positive_support(&self) -> bool {
        self.kind != FamilyKind::Gaussian
    }

    pub fn log_pdf(&self, t: f64) -> Result<f64> {
        if self.positive_support() && !(t > 0.0) {
            return Err(Error::Domain(format!("interval {t} must be positive")));
        }
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, c)| w.ln() + c.log_pdf(t))
            .collect();
        let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if mx == f64::NEG_INFINITY {
            return Ok(mx);
        }
        Ok(mx + terms.iter().map(|v| (v - mx).exp()).sum::<f64>().ln())
    }

    pub fn pdf(&self, t: f64) -> f64 {
        self.log_pdf(t).map(f64::exp).unwrap_or(0.0)
    }

    pub fn cdf(&self, t: f64) -> f64 {
        if self.positive_support() && t <= 0.0 {
            return 0.0;
        }
        self.weights.iter().zip(&self.components).map(|(w, c)| w * c.cdf(t)).sum()
    }

    pub fn survival(&self, t: f64) -> f64 {
        if self.positive_support() && t <= 0.0 {
            return 1.0;
        }
        self.weights.iter().zip(&self.components).map(|(w, c)| w * c.survival(t)).sum()
    }

    /// Conditional intensity `f / (1 − F)` and whether the survival floor was hit.
    pub fn cif(&self, t: f64) -> Result<(f64, bool)> {
        let s = self.survival(t);
        let sat = s < SURVIVAL_FLOOR;
        Ok((self.log_pdf(t)?.exp() / s.max(SURVIVAL_FLOOR), sat))
    }

    /// Cumulative hazard `−ln(1 − F)` and whether the survival floor was hit.
    pub fn chf(&self, t: f64) -> (f64, bool) {
        let s = self.survival(t);
        (-s.max(SURVIVAL_FLOOR).ln(), s < SURVIVAL_FLOOR)
    }

    /// Hazard of the mixture written with each component's closed-form hazard:
    /// `Σ w_k λ_k S_k / Σ w_k S_k`.
    pub fn hazard_closed_form(&self, t: f64) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (w, c) in self.weights.iter().zip(&self.components) {
            let s = c.survival(t);
            num += w * c.hazard(t) * s;
            den += w * s;
        }
        num / den
    }

    /// Smallest `t` with `F(t) ≥ p`, or `None` if no bracket below 1e12 exists.
    pub fn quantile(&self, p: f64) -> Option<f64> {
        let mut lo = if self.positive_support() { 0.0 } else { -1.0 };
        while !self.positive_support() && self.cdf(lo) > p {
            lo *= 2.0;
            if lo < -1e12 {
                return None;
            }
        }
        let mut hi = 1.0;
        while self.cdf(hi) < p {
            hi *= 2.0;
            if hi > 1e12 {
                return None;
            }
        }
        Some(bisect(|t| self.cdf(t) - p, lo, hi))
    }

    pub fn expectation(&self) -> Expectation {
        let closed = |value| Expectation { value, warning: false, horizon: None };
        let wsum = |f: &dyn Fn(&Component) -> f64| -> f64 {
            self.weights.iter().zip(&self.components).map(|(w, c)| w * f(c)).sum()
        };
        match self.kind {
            FamilyKind::LogNorm => closed(wsum(&|c| match *c {
                Component::LogNorm { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
                _ => f64::NAN,
            })),
            FamilyKind::Weibull => closed(wsum(&|c| match *c {
                Component::Weibull { eta, beta } => libm::tgamma(1.0 + 1.0 / beta) / eta,
                _ => f64::NAN,
            })),
            FamilyKind::Gaussian => closed(wsum(&|c| match *c {
                Component::Gaussian { mu, .. } => mu,
                _ => f64::NAN,
            })),
            FamilyKind::LogCauchy => {
                // mean of the law restricted to [0, q_0.99]
                match self.quantile(0.99) {
                    Some(q) => {
                        let lo = self.quantile(1e-9).unwrap_or(q * 1e-12).max(q * 1e-300);
                        let (a, b) = (lo.ln(), q.ln());
                        let int_s = lo + trapezoid(|u| self.survival(u.exp()) * u.exp(), a, b, TRAPEZOID_POINTS);
                        let value = (int_s - q * self.survival(q)) / self.cdf(q);
                        Expectation { value, warning: false, horizon: Some(q) }
                    }
                    None => Expectation { value: f64::NAN, warning: true, horizon: None },
                }
            }
            FamilyKind::Gompertz | FamilyKind::ExpDecay | FamilyKind::FnnIntegral => {
                integrate_survival(|t| self.survival(t), |p| self.quantile(p), TRAPEZOID_POINTS)
            }
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut k = self.components.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        while self.weights[k] == 0.0 {
            k -= 1;
        }
        let c = &self.components[k];
        if self.positive_support() {
            return c.sample(rng);
        }
        // truncate to positive intervals by resampling
        for _ in 0..10_000 {
            let t = c.sample(rng);
            if t > 0.0 {
                return t;
            }
        }
        f64::MIN_POSITIVE
    }
}

/// `∫_0^q S(t) dt` on the trapezoid grid, with `q` the `1 − 1e-4` quantile.
pub fn integrate_survival(s: impl Fn(f64) -> f64, quantile: impl Fn(f64) -> Option<f64>, points: usize) -> Expectation {
    match quantile(1.0 - 1e-4) {
        Some(q) => Expectation { value: trapezoid(s, 0.0, q, points), warning: false, horizon: Some(q) },
        None => Expectation { value: trapezoid(s, 0.0, 1e12, points), warning: true, horizon: Some(1e12) },
    }
}

/// Expected time to the first of several competing events whose own
/// interevent laws are `mixtures` (one per type): `∫ Π_m S_m(t) dt`.
pub fn expected_first_arrival(mixtures: &[Mixture]) -> Expectation {
    expected_first_arrival_with(mixtures, TRAPEZOID_POINTS)
}

/// [`expected_first_arrival`] with a chosen trapezoid resolution.
pub fn expected_first_arrival_with(mixtures: &[Mixture], points: usize) -> Expectation {
    let s = |t: f64| mixtures.iter().map(|m| m.survival(t)).product::<f64>();
    let quantile = |p: f64| {
        let mut hi = 1.0;
        while 1.0 - s(hi) < p {
            hi *= 2.0;
            if hi > 1e12 {
                return None;
            }
        }
        Some(bisect(|t| (1.0 - s(t)) - p, 0.0, hi))
    };
    integrate_survival(s, quantile, points)
}

impl Mixture {
    /// Random valid mixture with parameters in moderate ranges.
    pub fn random(kind: FamilyKind, k: usize, rng: &mut impl Rng) -> Self {
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        let components = (0..k)
            .map(|_| match kind {
                FamilyKind::LogNorm => Component::LogNorm { mu: rng.gen_range(-1.0..1.0), sigma: rng.gen_range(0.3..1.5) },
                FamilyKind::Gompertz => Component::Gompertz { eta: rng.gen_range(0.2..2.0), beta: rng.gen_range(0.05..1.5) },
                FamilyKind::ExpDecay => Component::ExpDecay {
                    eta: rng.gen_range(0.2..2.0),
                    beta: rng.gen_range(0.3..3.0),
                    alpha: rng.gen_range(0.1..1.0),
                },
                FamilyKind::Weibull => Component::Weibull { eta: rng.gen_range(0.3..2.0), beta: rng.gen_range(0.5..2.5) },
                FamilyKind::LogCauchy => Component::LogCauchy { mu: rng.gen_range(-1.0..1.0), sigma: rng.gen_range(0.3..1.2) },
                FamilyKind::Gaussian => Component::Gaussian { mu: rng.gen_range(-1.0..2.0), sigma: rng.gen_range(0.3..1.5) },
                FamilyKind::FnnIntegral => panic!("not a mixture family"),
            })
            .collect();
        Self { kind, weights, components }
    }

    /// Parameters in the head's raw layout (`F·K` values, field-major) that
    /// reproduce this mixture for a single type.
    pub fn to_raw(&self) -> Vec<f64> {
        let k = self.components.len();
        let f = self.kind.num_fields();
        let mut raw = vec![0.0; f * k];
        for (i, (w, c)) in self.weights.iter().zip(&self.components).enumerate() {
            raw[i] = w.ln();
            let vals: Vec<f64> = match *c {
                Component::LogNorm { mu, sigma } | Component::LogCauchy { mu, sigma } | Component::Gaussian { mu, sigma } => {
                    vec![mu, sigma.ln()]
                }
                Component::Gompertz { eta, beta } | Component::Weibull { eta, beta } => vec![eta.ln(), beta.ln()],
                Component::ExpDecay { eta, beta, alpha } => vec![eta.ln(), beta.ln(), alpha.ln()],
            };
            for (j, v) in vals.into_iter().enumerate() {
                raw[(j + 1) * k + i] = v;
            }
        }
        raw
    }
}
