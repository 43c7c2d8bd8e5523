use super::head::TimeTerms;
use crate::diff::{Array, Graph, Var};
use crate::error::{Error, Result};

/// Total log-likelihood of intervals under one overall density: `Σ log f(τ_i)`.
pub fn overall_loglik(g: &mut Graph, log_f: Var) -> Result<Var> {
    g.sum(log_f)
}

/// Total type-wise log-likelihood
/// `Σ_i log λ_{m_i}(τ_i) − Σ_i Σ_m Λ_m(τ_i)`, with the first term picked by a
/// one-hot mask over the `M` intensities evaluated at every event. `marks`
/// are 1-based; a 0 mark contributes only the cumulative-hazard term.
pub fn typewise_loglik(g: &mut Graph, terms: &TimeTerms, marks: &[usize]) -> Result<Var> {
    let s = g.shape(terms.log_f).to_vec();
    let (r, m) = (s[0], s[1]);
    if marks.len() != r {
        return Err(Error::Shape(format!("{} marks for {} rows", marks.len(), r)));
    }
    let mut mask = vec![0.0; r * m];
    for (i, &k) in marks.iter().enumerate() {
        if k > m {
            return Err(Error::Index(format!("type {k} exceeds {m}")));
        }
        if k > 0 {
            mask[i * m + k - 1] = 1.0;
        }
    }
    let mask = g.constant(Array::from_parts(vec![r, m], mask));
    let log_lambda = g.sub(terms.log_f, terms.log_s)?;
    let picked = g.mul(mask, log_lambda)?;
    let first = g.sum(picked)?;
    let second = g.sum(terms.log_s)?;
    g.add(first, second)
}

/// Summed cross-entropy of 1-based `marks` under row logits `[R, M]`.
pub fn cross_entropy_sum(g: &mut Graph, logits: Var, marks: &[usize]) -> Result<Var> {
    let m = g.shape(logits)[1];
    let lp = g.log_softmax(logits)?;
    let idx: Vec<isize> = marks.iter().enumerate().map(|(i, &k)| (i * m + k - 1) as isize).collect();
    let n = idx.len();
    let picked = g.gather(lp, idx, vec![n])?;
    let s = g.sum(picked)?;
    g.neg(s)
}

/// Fails with a divergence error when `v` holds a non-finite value.
pub fn check_finite(g: &Graph, v: Var, what: &str) -> Result<()> {
    let a = g.value(v);
    if a.is_finite() {
        return Ok(());
    }
    let bad: Vec<String> = a.data().iter().enumerate().filter(|(_, x)| !x.is_finite()).take(5).map(|(i, x)| format!("[{i}]={x}")).collect();
    Err(Error::Divergence(format!("non-finite {what}: {}", bad.join(", "))))
}
