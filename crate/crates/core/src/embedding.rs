//! Event embedding: a time encoding concatenated with a type embedding row.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Array, Var};
use crate::error::{Error, Result};
use crate::nn::{Ctx, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeMode {
    Linear,
    #[serde(alias = "trig")]
    Trigonometric,
}

impl std::str::FromStr for TimeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "trig" | "trigonometric" => Ok(Self::Trigonometric),
            _ => Err(Error::Config(format!("unknown time mode '{s}'"))),
        }
    }
}

impl TimeMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Trigonometric => "trig",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub time_mode: TimeMode,
    pub embed_dim: usize,
    pub num_types: usize,
    /// Width of the time part; the rest goes to the type part.
    pub time_dim: Option<usize>,
}

impl EmbeddingConfig {
    pub fn resolved_time_dim(&self) -> usize {
        match (self.time_dim, self.time_mode) {
            (Some(d), _) => d,
            (None, TimeMode::Trigonometric) => 2 * (self.embed_dim / 4).max(1),
            (None, TimeMode::Linear) => (self.embed_dim / 2).max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let td = self.resolved_time_dim();
        if self.num_types == 0 {
            return Err(Error::Config("embedding needs at least one type".into()));
        }
        if self.embed_dim < 2 || td > self.embed_dim || td == 0 {
            return Err(Error::Config(format!("embedding width {} with time part {}", self.embed_dim, td)));
        }
        if self.time_mode == TimeMode::Trigonometric && (td % 2 != 0 || self.embed_dim % 2 != 0) {
            return Err(Error::Config("trigonometric time encoding needs even widths".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub cfg: EmbeddingConfig,
    time_dim: usize,
    type_dim: usize,
    /// Fixed positional frequencies, one per sin/cos pair.
    omega_pos: Vec<f64>,
    omega_time: Option<ParamId>,
    lin_w: Option<ParamId>,
    lin_b: Option<ParamId>,
    table: Option<ParamId>,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, cfg: EmbeddingConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let time_dim = cfg.resolved_time_dim();
        let type_dim = cfg.embed_dim - time_dim;
        let pairs = time_dim / 2;
        let omega_pos: Vec<f64> =
            (0..pairs).map(|p| 1.0 / 10000f64.powf(2.0 * p as f64 / time_dim as f64)).collect();
        let (mut omega_time, mut lin_w, mut lin_b) = (None, None, None);
        match cfg.time_mode {
            TimeMode::Trigonometric => {
                omega_time = Some(store.add(format!("{name}.omega_time"), Array::vector(omega_pos.clone())));
            }
            TimeMode::Linear => {
                lin_w = Some(store.add_uniform(format!("{name}.time_w"), &[time_dim], 1.0, rng));
                lin_b = Some(store.add_uniform(format!("{name}.time_b"), &[time_dim], 1.0, rng));
            }
        }
        let table = (type_dim > 0)
            .then(|| store.add_uniform(format!("{name}.types"), &[cfg.num_types, type_dim], 1.0, rng));
        Ok(Self { cfg, time_dim, type_dim, omega_pos, omega_time, lin_w, lin_b, table })
    }

    pub fn dim(&self) -> usize {
        self.cfg.embed_dim
    }

    pub fn time_dim(&self) -> usize {
        self.time_dim
    }

    /// Embeds `R` events. `times` is an `[R, 1]` node; `marks` may contain 0 (padding).
    pub fn forward(&self, ctx: &mut Ctx, times: Var, positions: &[f64], marks: &[usize]) -> Result<Var> {
        let r = marks.len();
        if positions.len() != r || ctx.g.shape(times) != [r, 1] {
            return Err(Error::Shape("embedding inputs disagree in length".into()));
        }
        if let Some(&m) = marks.iter().find(|&&m| m > self.cfg.num_types) {
            return Err(Error::Index(format!("type {} exceeds {}", m, self.cfg.num_types)));
        }
        let time_part = match self.cfg.time_mode {
            TimeMode::Trigonometric => {
                let pairs = self.omega_pos.len();
                let mut pos = Vec::with_capacity(r * pairs);
                for &p in positions {
                    pos.extend(self.omega_pos.iter().map(|w| w * p));
                }
                let pos = ctx.g.constant(Array::new(vec![r, pairs], pos)?);
                let w = ctx.p(self.omega_time.expect("trig mode"));
                let g = &mut ctx.g;
                let shifted = g.mul(times, w)?;
                let ang = g.add(pos, shifted)?;
                let ang = g.reshape(ang, vec![r, pairs, 1])?;
                let s = g.sin(ang)?;
                let c = g.cos(ang)?;
                let sc = g.concat(&[s, c], 2)?;
                g.reshape(sc, vec![r, 2 * pairs])?
            }
            TimeMode::Linear => {
                let w = ctx.p(self.lin_w.expect("linear mode"));
                let b = ctx.p(self.lin_b.expect("linear mode"));
                let y = ctx.g.mul(times, w)?;
                ctx.g.add(y, b)?
            }
        };
        let Some(table) = self.table else { return Ok(time_part) };
        let e = ctx.p(table);
        let zero = ctx.g.constant(Array::zeros(&[1, self.type_dim]));
        let full = ctx.g.concat(&[zero, e], 0)?;
        let mut idx = Vec::with_capacity(r * self.type_dim);
        for &m in marks {
            idx.extend((0..self.type_dim).map(|c| (m * self.type_dim + c) as isize));
        }
        let type_part = ctx.g.gather(full, idx, vec![r, self.type_dim])?;
        ctx.g.concat(&[time_part, type_part], 1)
    }

    /// Embeds constant times.
    pub fn forward_const(&self, ctx: &mut Ctx, times: &[f64], positions: &[f64], marks: &[usize]) -> Result<Var> {
        let t = ctx.g.constant(Array::new(vec![times.len(), 1], times.to_vec())?);
        self.forward(ctx, t, positions, marks)
    }

    /// Embeds a padded batch as `[B, N_max, D]`; positions count from 0 within each row.
    pub fn embed_batch(&self, ctx: &mut Ctx, batch: &crate::events::PaddedBatch) -> Result<Var> {
        let positions: Vec<f64> = (0..batch.batch).flat_map(|_| (0..batch.n_max).map(|i| i as f64)).collect();
        let e = self.forward_const(ctx, &batch.times, &positions, &batch.marks)?;
        ctx.g.reshape(e, vec![batch.batch, batch.n_max, self.dim()])
    }

    /// Single event embedding as plain numbers.
    pub fn embed_event(&self, store: &ParamStore, t: f64, position: usize, mark: usize) -> Result<Vec<f64>> {
        let mut ctx = Ctx::new(store);
        let v = self.forward_const(&mut ctx, &[t], &[position as f64], &[mark])?;
        Ok(ctx.g.value(v).data().to_vec())
    }
}
