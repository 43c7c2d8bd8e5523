use super::{Array, Graph, Var};
use crate::error::{Error, Result};

fn eval(f: &impl Fn(&mut Graph, &[Var]) -> Result<Var>, points: &[Array]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = points.iter().map(|p| g.leaf(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::Contract("grad_check needs a scalar function".into()));
    }
    if !v.item().is_finite() {
        return Err(Error::Domain(format!("non-finite forward value {}", v.item())));
    }
    Ok(v.item())
}

/// Denominator floor for relative gradient errors. Central differences carry
/// a rounding error near `1e-11` for O(1) function values, so gradients much
/// smaller than this floor are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Compares reverse-mode gradients of `f` with central differences over
/// several parameter arrays. Returns the largest elementwise relative error,
/// as defined by [`relative_error`].
pub fn grad_check_many(
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
    points: &[Array],
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::Contract(format!("step must be positive, got {step}")));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = points.iter().map(|p| g.leaf(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    if !g.value(out).is_finite() {
        return Err(Error::Domain("non-finite forward value".into()));
    }
    g.backward(out)?;
    let analytic: Vec<Array> = vars.iter().map(|v| g.grad(*v)).collect();

    let mut worst = 0.0f64;
    let mut probe = points.to_vec();
    for (a, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let orig = probe[a].data()[k];
            probe[a].data_mut()[k] = orig + step;
            let up = eval(&f, &probe)?;
            probe[a].data_mut()[k] = orig - step;
            let down = eval(&f, &probe)?;
            probe[a].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let exact = grad.data()[k];
            worst = worst.max(relative_error(exact, numeric));
        }
    }
    Ok(worst)
}

/// Single-array form of [`grad_check_many`].
pub fn grad_check(f: impl Fn(&mut Graph, Var) -> Result<Var>, point: &Array, step: f64) -> Result<f64> {
    grad_check_many(|g, v| f(g, v[0]), std::slice::from_ref(point), step)
}
