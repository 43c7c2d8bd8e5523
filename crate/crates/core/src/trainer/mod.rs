//! Adam with global-norm clipping, early stopping on validation NLL, and
//! evaluation metrics.

mod checkpoint;
mod metrics;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::Array;
use crate::error::{Error, Result};
use crate::events::{Dataset, EventSequence};
use crate::model::{GraphSource, Mode, Model};
use crate::nn::Ctx;

pub use checkpoint::{Checkpoint, RngState};
pub use metrics::{
    ape, joint_loss, top_k_hit, type_distribution, MapeVariant, MetricsAccumulator, MetricsReport,
};

/// Optimization settings. Model sizes (embedding width, layers, `K`, `L`)
/// live in the model configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, batch_size: 32, max_epochs: 100, patience: 5, seed: 0, clip_norm: 10.0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip_norm {} must be positive", self.clip_norm)));
        }
        Ok(())
    }
}

/// Adam with the usual defaults `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Array>,
    v: Vec<Array>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, params: &[Array]) -> Self {
        let zeros = |p: &Array| Array::zeros(p.shape());
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Array], grads: &[Array]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, (x, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * d;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * d * d;
                *x -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_global_norm(grads: &mut [Array], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Array::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_nll: f64,
    /// Training RNG after the last epoch.
    pub rng: ChaCha8Rng,
}

fn nonempty(ds: &Dataset) -> Vec<&EventSequence> {
    ds.sequences.iter().filter(|s| !s.is_empty()).collect()
}

fn divergence(model: &Model, epoch: usize, batch: usize, loss: f64, saturated: usize) -> Error {
    let mut norms: Vec<(String, f64)> =
        model.store.names().iter().zip(model.store.values()).map(|(n, v)| (n.clone(), v.sq_norm().sqrt())).collect();
    norms.sort_by(|a, b| b.1.total_cmp(&a.1));
    let top: Vec<String> = norms.iter().take(5).map(|(n, v)| format!("{n}={v:.4e}")).collect();
    Error::Divergence(format!(
        "non-finite loss or gradient at epoch {epoch}, batch {batch} (loss {loss}); saturated survival terms this epoch: {saturated}; largest parameter norms: {}",
        top.join(", ")
    ))
}

/// Fits `model` on `train`, keeping the parameters with the lowest NLL on
/// `val` (on `train` when `val` is empty). `on_epoch` sees each log row.
pub fn train(
    model: &mut Model,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = nonempty(train);
    if order.is_empty() {
        return Err(Error::Degenerate("training set has no events".into()));
    }
    let granger = model.cfg.mode == Mode::Granger;
    let mut adam = Adam::new(cfg.learning_rate, model.store.values());
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, Vec<Array>, Option<Array>)> = None;
    let mut bad = 0;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let temperature = model.cfg.granger.temperature(epoch, cfg.max_epochs);
        let (mut nll_sum, mut n_timed, mut saturated) = (0.0, 0usize, 0usize);
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = {
                let mut ctx = Ctx::new(&model.store);
                let source = granger.then(|| GraphSource::Sample { temperature, rng: &mut rng });
                let fw = model.forward(&mut ctx, batch, source)?;
                saturated += fw.saturated;
                let obj = fw.objective(&mut ctx.g)?;
                let loss = ctx.g.value(obj).item();
                let ll = ctx.g.value(fw.time_ll).item();
                if !loss.is_finite() {
                    return Err(divergence(model, epoch + 1, bi, loss, saturated));
                }
                ctx.g.backward(obj)?;
                nll_sum -= ll;
                n_timed += fw.timed.len();
                (loss, ctx.param_grads())
            };
            let mut grads = grads;
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(divergence(model, epoch + 1, bi, loss, saturated));
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.step(model.store.values_mut(), &grads);
        }
        if granger {
            model.eval_graph = Some(model.mean_edge_probs(&order, cfg.batch_size)?);
        }
        let train_nll = if n_timed == 0 { f64::NAN } else { nll_sum / n_timed as f64 };
        let val_nll = if val.is_empty() { nll(model, train, cfg.batch_size)? } else { nll(model, val, cfg.batch_size)? };
        let row = EpochLog { epoch: epoch + 1, train_nll, val_nll };
        on_epoch(&row);
        log.push(row);
        if !val_nll.is_finite() {
            return Err(divergence(model, epoch + 1, usize::MAX, val_nll, saturated));
        }
        if best.as_ref().map_or(true, |b| val_nll < b.1) {
            best = Some((epoch + 1, val_nll, model.store.values().to_vec(), model.eval_graph.clone()));
            bad = 0;
        } else {
            bad += 1;
            if bad >= cfg.patience {
                break;
            }
        }
    }

    let (best_epoch, best_val_nll) = match best {
        Some((epoch, v, values, graph)) => {
            let names = model.store.names().to_vec();
            model.store.load(&names, values)?;
            model.eval_graph = graph;
            (Some(epoch), v)
        }
        None => (None, f64::NAN),
    };
    if granger && model.eval_graph.is_none() {
        model.eval_graph = Some(model.mean_edge_probs(&order, cfg.batch_size)?);
    }
    Ok(TrainOutcome { log, best_epoch, best_val_nll, rng })
}

fn fixed_source(model: &Model) -> Result<Option<GraphSource<'static>>> {
    Ok(match model.cfg.mode {
        Mode::Granger => Some(GraphSource::Fixed(model.fixed_graph()?)),
        _ => None,
    })
}

/// Mean time NLL per event with a positive interval; Granger mode uses the
/// evaluation graph.
pub fn nll(model: &Model, ds: &Dataset, batch_size: usize) -> Result<f64> {
    let seqs = nonempty(ds);
    let (mut sum, mut n) = (0.0, 0usize);
    for batch in seqs.chunks(batch_size.max(1)) {
        let mut ctx = Ctx::new(&model.store);
        let fw = model.forward(&mut ctx, batch, fixed_source(model)?)?;
        sum -= ctx.g.value(fw.time_ll).item();
        n += fw.timed.len();
    }
    Ok(if n == 0 { f64::NAN } else { sum / n as f64 })
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub batch_size: usize,
    pub variant: MapeVariant,
    /// Trapezoid resolution for numeric next-time expectations.
    pub points: usize,
    /// Skip next-time predictions (MAPE becomes NaN).
    pub predict_times: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { batch_size: 64, variant: MapeVariant::Interval, points: 2000, predict_times: true }
    }
}

/// NLL, both MAPE variants and top-1 / top-3 type accuracy over `ds`.
pub fn evaluate(model: &Model, ds: &Dataset, opts: &EvalOptions) -> Result<MetricsReport> {
    let seqs = nonempty(ds);
    let mut acc = MetricsAccumulator::new();
    for batch in seqs.chunks(opts.batch_size.max(1)) {
        let mut ctx = Ctx::new(&model.store);
        let fw = model.forward(&mut ctx, batch, fixed_source(model)?)?;
        acc.add_nll(-ctx.g.value(fw.time_ll).item(), fw.timed.len());
        let logits = ctx.g.value(fw.logits).data();
        let m = model.num_types();
        for (r, &mark) in fw.marks.iter().enumerate() {
            acc.add_type(&logits[r * m..(r + 1) * m], mark);
        }
        if opts.predict_times {
            let preds = model.predictions(&ctx, &fw, opts.points);
            for &r in &fw.timed {
                acc.add_time(preds[r].expected.value, fw.tau[r]);
            }
        }
    }
    Ok(acc.finish(opts.variant))
}
