//! Complete event model: embedding, history encoder, interevent-time head and
//! type head, run in overall, type-wise or Granger mode.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Array, Graph, Var};
use crate::embedding::{Embedding, EmbeddingConfig, TimeMode};
use crate::encoders::{Encoder, EncoderConfig, EncoderKind};
use crate::error::{Error, Result};
use crate::events::{pad_batch, EventSequence, PaddedBatch, NORMALIZED_HORIZON};
use crate::granger::{
    bernoulli_kl, edge_noise, edge_probs, harden, relaxed_sample, GraphEncoder, GrangerConfig, LagAggregator, LagPlan,
};
use crate::intensity::{
    cross_entropy_sum, expected_first_arrival_with, overall_loglik, typewise_loglik, Expectation, FamilyKind, FnnHead,
    FnnOut, MixtureHead, MixtureOut, TimeTerms,
};
use crate::nn::{take_rows, Ctx, Linear, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One density over interevent times regardless of type.
    Overall,
    /// One intensity per type, all updated at every event.
    Typewise,
    /// Type-wise intensities fed by lagged intra-type states gated by a latent graph.
    Granger,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "overall" => Self::Overall,
            "typewise" => Self::Typewise,
            "granger" => Self::Granger,
            _ => return Err(Error::Config(format!("unknown mode '{s}'"))),
        })
    }
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Overall => "overall",
            Mode::Typewise => "typewise",
            Mode::Granger => "granger",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: Mode,
    pub family: FamilyKind,
    /// Mixture components `K`.
    pub components: usize,
    pub num_types: usize,
    pub embedding: EmbeddingConfig,
    pub encoder: EncoderConfig,
    pub fnn_hidden: usize,
    /// Time horizon the data is scaled to; bounds the Gompertz slope.
    pub t_max: f64,
    pub granger: GrangerConfig,
}

impl ModelConfig {
    pub fn new(mode: Mode, family: FamilyKind, encoder: EncoderKind, num_types: usize, embed_dim: usize) -> Self {
        Self {
            mode,
            family,
            components: 16,
            num_types,
            embedding: EmbeddingConfig { time_mode: TimeMode::Trigonometric, embed_dim, num_types, time_dim: None },
            encoder: EncoderConfig::new(encoder, embed_dim),
            fnn_hidden: 32,
            t_max: NORMALIZED_HORIZON,
            granger: GrangerConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.family == FamilyKind::FnnIntegral && self.mode != Mode::Overall {
            return Err(Error::Config("fnn_integral supports only the overall mode".into()));
        }
        if self.components == 0 {
            return Err(Error::Config("components must be at least 1".into()));
        }
        if self.num_types == 0 || self.embedding.num_types != self.num_types {
            return Err(Error::Config("num_types must be positive and match the embedding".into()));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::Config(format!("t_max {} must be positive", self.t_max)));
        }
        if self.fnn_hidden == 0 {
            return Err(Error::Config("fnn_hidden must be positive".into()));
        }
        self.embedding.validate()?;
        self.encoder.validate()?;
        if self.mode == Mode::Granger {
            self.granger.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum TimeHead {
    Mixture(MixtureHead),
    Fnn(FnnHead),
}

#[derive(Clone, Debug)]
pub enum TimeParams {
    Mixture(MixtureOut),
    Fnn(FnnOut),
}

/// Which graph gates the lagged pooling in Granger mode.
pub enum GraphSource<'r> {
    /// One relaxed sample per sequence at the given temperature, plus the KL term.
    Sample { temperature: f64, rng: &'r mut ChaCha8Rng },
    /// A fixed `[M, M]` graph shared by every sequence.
    Fixed(Array),
}

/// Graph nodes and bookkeeping from one forward pass over a batch.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Summed time log-likelihood over events with a positive interval.
    pub time_ll: Var,
    /// Summed type cross-entropy over all events.
    pub ce: Var,
    /// Summed off-diagonal KL of the sampled graphs.
    pub kl: Option<Var>,
    /// Type logits `[R, M]`, one row per event.
    pub logits: Var,
    pub params: TimeParams,
    /// `(sequence, index)` of each row.
    pub events: Vec<(usize, usize)>,
    pub marks: Vec<usize>,
    pub tau: Vec<f64>,
    /// Rows that enter the time likelihood.
    pub timed: Vec<usize>,
    pub saturated: usize,
    /// Edge probabilities `[B, M·M]` when graphs were sampled.
    pub edge_probs: Option<Var>,
}

impl Forward {
    /// Loss to minimize: `(−time_ll + KL) / n_timed + CE / n_events`.
    pub fn objective(&self, g: &mut Graph) -> Result<Var> {
        let nt = self.timed.len().max(1) as f64;
        let ne = self.events.len().max(1) as f64;
        let mut neg = g.neg(self.time_ll)?;
        if let Some(kl) = self.kl {
            neg = g.add(neg, kl)?;
        }
        let a = g.scale(neg, 1.0 / nt)?;
        let b = g.scale(self.ce, 1.0 / ne)?;
        g.add(a, b)
    }
}

/// Next-event prediction for one event.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub expected: Expectation,
    pub logits: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GrangerParts {
    pub encoder: GraphEncoder,
    pub lag: LagAggregator,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub embedding: Embedding,
    pub encoder: Encoder,
    pub time: TimeHead,
    pub types: Linear,
    pub granger: Option<GrangerParts>,
    /// Mean edge probabilities over the training set, `[M, M]`.
    pub eval_graph: Option<Array>,
}

/// Per-type view of a padded batch.
struct TypeView {
    /// `[B, n, E]` embeddings of each row's type-`m` events.
    emb: Var,
    n: usize,
    counts: Vec<usize>,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let embedding = Embedding::new(&mut store, "embed", cfg.embedding.clone(), &mut rng)?;
        let e = embedding.dim();
        let encoder = Encoder::new(&mut store, "encoder", e, &cfg.encoder, &mut rng)?;
        let d = encoder.dim();
        let time = match cfg.family {
            FamilyKind::FnnIntegral => TimeHead::Fnn(FnnHead::new(&mut store, "time", d, cfg.fnn_hidden, &mut rng)),
            kind => {
                let m = if cfg.mode == Mode::Overall { 1 } else { cfg.num_types };
                let per_type = cfg.mode == Mode::Granger;
                TimeHead::Mixture(MixtureHead::new(
                    &mut store,
                    "time",
                    kind,
                    d,
                    m,
                    cfg.components,
                    per_type,
                    cfg.t_max,
                    &mut rng,
                )?)
            }
        };
        let types = Linear::new(&mut store, "types", d, cfg.num_types, true, &mut rng);
        let granger = (cfg.mode == Mode::Granger).then(|| GrangerParts {
            encoder: GraphEncoder::new(&mut store, "graph", e, &cfg.granger, &mut rng),
            lag: LagAggregator::new(&mut store, "lag", cfg.granger.lag),
        });
        Ok(Self { cfg, store, embedding, encoder, time, types, granger, eval_graph: None })
    }

    pub fn num_types(&self) -> usize {
        self.cfg.num_types
    }

    /// Graph used at evaluation: the mean graph, thresholded when configured.
    pub fn fixed_graph(&self) -> Result<Array> {
        let g = self.eval_graph.as_ref().ok_or_else(|| Error::Contract("no evaluation graph has been computed".into()))?;
        Ok(if self.cfg.granger.hard_eval { harden(g, self.cfg.granger.threshold) } else { g.clone() })
    }

    /// Forward pass over a batch. Granger mode needs a graph source.
    pub fn forward(&self, ctx: &mut Ctx, seqs: &[&EventSequence], graph: Option<GraphSource>) -> Result<Forward> {
        let batch = pad_batch(seqs);
        let t = ctx.g.constant(Array::from_parts(vec![batch.times.len(), 1], batch.times.clone()));
        self.forward_times(ctx, &batch, t, graph)
    }

    /// Forward pass with the timestamps supplied as a `[B·N, 1]` node.
    pub fn forward_times(
        &self,
        ctx: &mut Ctx,
        batch: &PaddedBatch,
        times: Var,
        graph: Option<GraphSource>,
    ) -> Result<Forward> {
        let n = batch.n_max;
        let gaps = batch.intervals();
        let mut events = Vec::new();
        for b in 0..batch.batch {
            for i in 0..n {
                if batch.is_valid(b, i) {
                    events.push((b, i));
                }
            }
        }
        if events.is_empty() {
            return Err(Error::Degenerate("batch holds no events".into()));
        }
        let marks: Vec<usize> = events.iter().map(|&(b, i)| batch.mark(b, i)).collect();
        let tau: Vec<f64> = events.iter().map(|&(b, i)| gaps[b * n + i]).collect();
        let timed: Vec<usize> = (0..events.len()).filter(|&r| tau[r] > 0.0).collect();

        let (head_in, type_in, kl, probs) = match self.cfg.mode {
            Mode::Overall | Mode::Typewise => {
                let h = self.history(ctx, batch, times, &events)?;
                (h, h, None, None)
            }
            Mode::Granger => self.granger_history(ctx, batch, times, &events, graph)?,
        };
        let logits = self.types.forward(ctx, type_in)?;
        let ce = cross_entropy_sum(&mut ctx.g, logits, &marks)?;

        // intervals ≤ 0 only occur for an event at time 0; they are evaluated at
        // a dummy interval and then left out of the likelihood
        let tau_eval: Vec<f64> = tau.iter().map(|&t| if t > 0.0 { t } else { 1.0 }).collect();
        let keep: Vec<isize> = timed.iter().map(|&r| r as isize).collect();
        let (params, time_ll, saturated) = match &self.time {
            TimeHead::Mixture(head) => {
                let out = head.forward(ctx, head_in)?;
                let terms = out.time_terms(&mut ctx.g, &tau_eval)?;
                let mh = out.num_types;
                let ll = if timed.is_empty() {
                    ctx.g.scalar(0.0)
                } else {
                    let log_f = take_rows(&mut ctx.g, terms.log_f, &keep, mh)?;
                    let log_s = take_rows(&mut ctx.g, terms.log_s, &keep, mh)?;
                    if self.cfg.mode == Mode::Overall {
                        overall_loglik(&mut ctx.g, log_f)?
                    } else {
                        let t = TimeTerms { log_f, log_s, saturated: terms.saturated };
                        let mk: Vec<usize> = timed.iter().map(|&r| marks[r]).collect();
                        typewise_loglik(&mut ctx.g, &t, &mk)?
                    }
                };
                (TimeParams::Mixture(out), ll, terms.saturated)
            }
            TimeHead::Fnn(head) => {
                let out = head.forward(ctx, head_in, &tau_eval)?;
                let ll = if timed.is_empty() {
                    ctx.g.scalar(0.0)
                } else {
                    let per = ctx.g.sub(out.log_lambda, out.chf)?;
                    let per = take_rows(&mut ctx.g, per, &keep, 1)?;
                    ctx.g.sum(per)?
                };
                (TimeParams::Fnn(out), ll, 0)
            }
        };
        Ok(Forward { time_ll, ce, kl, logits, params, events, marks, tau, timed, saturated, edge_probs: probs })
    }

    /// History state before each event, `[R, D]`.
    fn history(&self, ctx: &mut Ctx, batch: &PaddedBatch, times: Var, events: &[(usize, usize)]) -> Result<Var> {
        let (b, n) = (batch.batch, batch.n_max);
        let positions: Vec<f64> = (0..b).flat_map(|_| (0..n).map(|i| i as f64)).collect();
        let emb = self.embedding.forward(ctx, times, &positions, &batch.marks)?;
        let emb = ctx.g.reshape(emb, vec![b, n, self.embedding.dim()])?;
        let states = self.encoder.forward(ctx, emb)?;
        let d = self.encoder.dim();
        let flat = ctx.g.reshape(states, vec![b * (n + 1), d])?;
        let rows: Vec<isize> = events.iter().map(|&(bi, i)| (bi * (n + 1) + i) as isize).collect();
        take_rows(&mut ctx.g, flat, &rows, d)
    }

    /// Embeddings of each type's subsequence, with positions counted within the type.
    fn type_views(&self, ctx: &mut Ctx, batch: &PaddedBatch, times: Var) -> Result<(Vec<TypeView>, Vec<usize>)> {
        let (b, n, m) = (batch.batch, batch.n_max, self.cfg.num_types);
        // per-type global indices of each row's events, and each event's position in its type
        let mut members: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); b]; m];
        let mut pos_in_type = vec![0usize; b * n];
        for bi in 0..b {
            for i in 0..n {
                if batch.is_valid(bi, i) {
                    let k = batch.mark(bi, i) - 1;
                    pos_in_type[bi * n + i] = members[k][bi].len();
                    members[k][bi].push(i);
                }
            }
        }
        let e = self.embedding.dim();
        let mut views = Vec::with_capacity(m);
        for (k, rows) in members.iter().enumerate() {
            let counts: Vec<usize> = rows.iter().map(|r| r.len()).collect();
            let nk = counts.iter().copied().max().unwrap_or(0).max(1);
            let mut idx = Vec::with_capacity(b * nk);
            let mut mk = Vec::with_capacity(b * nk);
            for (bi, r) in rows.iter().enumerate() {
                for p in 0..nk {
                    match r.get(p) {
                        Some(&i) => {
                            idx.push((bi * n + i) as isize);
                            mk.push(k + 1);
                        }
                        None => {
                            idx.push(-1);
                            mk.push(0);
                        }
                    }
                }
            }
            let positions: Vec<f64> = (0..b).flat_map(|_| (0..nk).map(|p| p as f64)).collect();
            let tk = ctx.g.gather(times, idx, vec![b * nk, 1])?;
            let emb = self.embedding.forward(ctx, tk, &positions, &mk)?;
            let emb = ctx.g.reshape(emb, vec![b, nk, e])?;
            views.push(TypeView { emb, n: nk, counts });
        }
        Ok((views, pos_in_type))
    }

    /// Edge logits `[B, M·M]` from per-type views.
    fn edge_logits(&self, ctx: &mut Ctx, views: &[TypeView]) -> Result<Var> {
        let parts = self.granger.as_ref().ok_or_else(|| Error::Contract("model has no graph encoder".into()))?;
        let z: Vec<Var> = views.iter().map(|v| parts.encoder.readout(ctx, v.emb, &v.counts)).collect::<Result<_>>()?;
        parts.encoder.edge_logits(ctx, &z)
    }

    /// Gated lagged pools `[M, R, D]` for the per-type heads, the ungated pool
    /// `[R, D]` for the type head, the KL term and edge probabilities.
    #[allow(clippy::type_complexity)]
    fn granger_history(
        &self,
        ctx: &mut Ctx,
        batch: &PaddedBatch,
        times: Var,
        events: &[(usize, usize)],
        graph: Option<GraphSource>,
    ) -> Result<(Var, Var, Option<Var>, Option<Var>)> {
        let parts = self.granger.as_ref().ok_or_else(|| Error::Contract("model has no graph encoder".into()))?;
        let (b, n, m) = (batch.batch, batch.n_max, self.cfg.num_types);
        let d = self.encoder.dim();
        let (views, pos_in_type) = self.type_views(ctx, batch, times)?;
        let mut stacked = Vec::with_capacity(m);
        let mut offsets = Vec::with_capacity(m);
        let mut total = 0;
        for v in &views {
            let s = self.encoder.forward(ctx, v.emb)?;
            stacked.push(ctx.g.reshape(s, vec![b * (v.n + 1), d])?);
            offsets.push(total);
            total += b * (v.n + 1);
        }
        let states = ctx.g.concat(&stacked, 0)?;
        // state right after event (b, i) within its own type
        let after = |bi: usize, i: usize| {
            let k = batch.mark(bi, i) - 1;
            offsets[k] + bi * (views[k].n + 1) + pos_in_type[bi * n + i] + 1
        };

        let (graphs, per_seq, kl, probs) = match graph {
            Some(GraphSource::Sample { temperature, rng }) => {
                let logits = self.edge_logits(ctx, &views)?;
                let noise = edge_noise(rng, b * m * m, self.cfg.granger.literal_gumbel);
                let sample = relaxed_sample(&mut ctx.g, logits, &noise, temperature, m)?;
                let kl = bernoulli_kl(&mut ctx.g, logits, self.cfg.granger.prior_p, m)?;
                let probs = edge_probs(&mut ctx.g, logits, m)?;
                (sample, true, Some(kl), Some(probs))
            }
            Some(GraphSource::Fixed(a)) => {
                if a.shape() != [m, m] {
                    return Err(Error::Shape(format!("graph {:?} for {} types", a.shape(), m)));
                }
                let a = ctx.g.constant(a.reshaped(vec![1, m * m])?);
                (a, false, None, None)
            }
            None => return Err(Error::Contract("granger mode needs a graph source".into())),
        };

        let l = parts.lag.lag;
        let r = events.len();
        let mut plan = LagPlan { src: Vec::with_capacity(r * l), edge: vec![-1; r * m * l] };
        for (ri, &(bi, i)) in events.iter().enumerate() {
            let gi = if per_seq { bi } else { 0 };
            for lag in 1..=l {
                if lag > i {
                    plan.src.push(-1);
                    continue;
                }
                let j = i - lag;
                plan.src.push(after(bi, j) as isize);
                let src_type = batch.mark(bi, j) - 1;
                for target in 0..m {
                    plan.edge[(ri * m + target) * l + lag - 1] = (gi * m * m + target * m + src_type) as isize;
                }
            }
        }
        let (gated, plain) = parts.lag.pool(ctx, states, graphs, &plan, m)?;
        let mut idx = Vec::with_capacity(m * r * d);
        for target in 0..m {
            for ri in 0..r {
                idx.extend((0..d).map(|c| ((ri * m + target) * d + c) as isize));
            }
        }
        let per_type = ctx.g.gather(gated, idx, vec![m, r, d])?;
        Ok((per_type, plain, kl, probs))
    }

    /// Edge probabilities `[M, M]` inferred from each sequence.
    pub fn infer_edge_probs(&self, seqs: &[&EventSequence]) -> Result<Vec<Array>> {
        let m = self.cfg.num_types;
        let mut ctx = Ctx::new(&self.store);
        let batch = pad_batch(seqs);
        let t = ctx.g.constant(Array::from_parts(vec![batch.times.len(), 1], batch.times.clone()));
        let (views, _) = self.type_views(&mut ctx, &batch, t)?;
        let logits = self.edge_logits(&mut ctx, &views)?;
        let probs = edge_probs(&mut ctx.g, logits, m)?;
        let data = ctx.g.value(probs).data();
        Ok(data.chunks(m * m).map(|c| Array::from_parts(vec![m, m], c.to_vec())).collect())
    }

    /// Mean of the inferred graphs over `seqs`, processed in chunks of `batch_size`.
    pub fn mean_edge_probs(&self, seqs: &[&EventSequence], batch_size: usize) -> Result<Array> {
        let mut graphs = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(batch_size.max(1)) {
            graphs.extend(self.infer_edge_probs(chunk)?);
        }
        crate::granger::mean_graph(&graphs)
    }

    /// Intra-type history states for every event of one sequence: the state of
    /// the event's own type just before it, `[N][D]`.
    pub fn intra_type_states(&self, seq: &EventSequence) -> Result<Vec<Vec<f64>>> {
        let mut ctx = Ctx::new(&self.store);
        let batch = pad_batch(&[seq]);
        let t = ctx.g.constant(Array::from_parts(vec![batch.times.len(), 1], batch.times.clone()));
        let (views, pos) = self.type_views(&mut ctx, &batch, t)?;
        let d = self.encoder.dim();
        let states: Vec<Array> = views
            .iter()
            .map(|v| self.encoder.forward(&mut ctx, v.emb).map(|s| ctx.g.value(s).clone()))
            .collect::<Result<_>>()?;
        Ok((0..seq.len())
            .map(|i| {
                let k = seq.marks[i] - 1;
                let row = pos[i];
                states[k].data()[row * d..(row + 1) * d].to_vec()
            })
            .collect())
    }

    /// Expected next interval and type logits for every row of a forward pass.
    /// `points` sets the trapezoid resolution for numeric expectations.
    pub fn predictions(&self, ctx: &Ctx, fw: &Forward, points: usize) -> Vec<Prediction> {
        let m = self.cfg.num_types;
        let logits = ctx.g.value(fw.logits).data();
        let expected: Vec<Expectation> = match (&self.time, &fw.params) {
            (TimeHead::Mixture(_), TimeParams::Mixture(out)) => out
                .to_mixtures(&ctx.g)
                .iter()
                .map(|row| if row.len() == 1 { row[0].expectation() } else { expected_first_arrival_with(row, points) })
                .collect(),
            (TimeHead::Fnn(head), TimeParams::Fnn(out)) => head.scalars(ctx, out).iter().map(|s| s.expectation()).collect(),
            _ => unreachable!("time head and parameters always match"),
        };
        expected
            .into_iter()
            .enumerate()
            .map(|(r, expected)| Prediction { expected, logits: logits[r * m..(r + 1) * m].to_vec() })
            .collect()
    }
}
