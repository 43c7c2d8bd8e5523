use crate::diff::Array;
use crate::error::{Error, Result};
use crate::events::{pad_batch, EventSequence};
use crate::model::{GraphSource, Mode, Model, TimeParams};
use crate::nn::Ctx;

/// Largest `|∂λ_target(t_i) / ∂t_j|` over events `i` of `seq` and earlier
/// events `j` of type `source`, under the model's fixed evaluation graph.
/// The elapsed interval at each `t_i` is held fixed, so only the history
/// path contributes. One reverse pass per interval.
pub fn granger_certificate(model: &Model, seq: &EventSequence, source: usize, target: usize) -> Result<f64> {
    let m = model.num_types();
    if model.cfg.mode != Mode::Granger {
        return Err(Error::Contract("the certificate needs a model in granger mode".into()));
    }
    for (what, k) in [("source", source), ("target", target)] {
        if k == 0 || k > m {
            return Err(Error::Index(format!("{what} type {k} outside 1..={m}")));
        }
    }
    let graph = model.fixed_graph()?;
    let mut ctx = Ctx::new(&model.store);
    let batch = pad_batch(&[seq]);
    let t = ctx.g.leaf(Array::new(vec![batch.times.len(), 1], batch.times.clone())?);
    let fw = model.forward_times(&mut ctx, &batch, t, Some(GraphSource::Fixed(graph)))?;
    let TimeParams::Mixture(out) = &fw.params else {
        return Err(Error::Contract("the certificate needs a mixture time head".into()));
    };
    let tau: Vec<f64> = fw.tau.iter().map(|&x| if x > 0.0 { x } else { 1.0 }).collect();
    let terms = out.time_terms(&mut ctx.g, &tau)?;
    let log_lambda = ctx.g.sub(terms.log_f, terms.log_s)?;
    let lambda = ctx.g.exp(log_lambda)?;
    let mut worst = 0.0f64;
    for (r, &(_, i)) in fw.events.iter().enumerate() {
        if !seq.marks[..i].contains(&source) {
            continue;
        }
        let pick = ctx.g.gather(lambda, vec![(r * m + target - 1) as isize], vec![1])?;
        ctx.g.backward(pick)?;
        let grad = ctx.g.grad(t);
        for j in (0..i).filter(|&j| seq.marks[j] == source) {
            worst = worst.max(grad.data()[j].abs());
        }
    }
    Ok(worst)
}
