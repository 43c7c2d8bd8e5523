//! History encoders. Every encoder maps embeddings `[B, N, E]` to states
//! `[B, N + 1, D]`, where state `j` summarizes events `1..=j` only and state 0
//! is the empty-history state. The encoding used for event `i` is state `i - 1`.

mod attention;
mod fnet;
mod recurrent;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::Var;
use crate::error::{Error, Result};
use crate::nn::{Ctx, ParamStore};

pub use attention::{causal_attention, Attention};
pub use fnet::{top_rows, FNet};
pub use recurrent::{Cell, Recurrent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Rnn,
    Lstm,
    Gru,
    Attention,
    Fnet,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rnn" => Self::Rnn,
            "lstm" => Self::Lstm,
            "gru" => Self::Gru,
            "attention" => Self::Attention,
            "fnet" => Self::Fnet,
            _ => return Err(Error::Config(format!("unknown encoder '{s}'"))),
        })
    }
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Rnn => "rnn",
            Self::Lstm => "lstm",
            Self::Gru => "gru",
            Self::Attention => "attention",
            Self::Fnet => "fnet",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub top_k: usize,
    /// Leave the zero-frequency row out of the top-k selection.
    pub exclude_dc: bool,
}

impl EncoderConfig {
    pub fn new(kind: EncoderKind, hidden_dim: usize) -> Self {
        Self { kind, hidden_dim, num_layers: 1, num_heads: 1, top_k: 4, exclude_dc: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be at least 1".into()));
        }
        if !(1..=3).contains(&self.num_layers) {
            return Err(Error::Config(format!("num_layers {} outside 1..=3", self.num_layers)));
        }
        if self.kind == EncoderKind::Attention && (self.num_heads == 0 || self.hidden_dim % self.num_heads != 0) {
            return Err(Error::Config(format!("{} heads do not divide width {}", self.num_heads, self.hidden_dim)));
        }
        if self.kind == EncoderKind::Fnet && self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Encoder {
    Recurrent(Recurrent),
    Attention(Attention),
    FNet(FNet),
}

impl Encoder {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.kind {
            EncoderKind::Rnn => Self::Recurrent(Recurrent::new(store, name, Cell::Rnn, input_dim, cfg, rng)),
            EncoderKind::Lstm => Self::Recurrent(Recurrent::new(store, name, Cell::Lstm, input_dim, cfg, rng)),
            EncoderKind::Gru => Self::Recurrent(Recurrent::new(store, name, Cell::Gru, input_dim, cfg, rng)),
            EncoderKind::Attention => Self::Attention(Attention::new(store, name, input_dim, cfg, rng)),
            EncoderKind::Fnet => Self::FNet(FNet::new(store, name, input_dim, cfg, rng)),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Recurrent(r) => r.dim(),
            Self::Attention(a) => a.dim(),
            Self::FNet(f) => f.dim(),
        }
    }

    /// States `[B, N + 1, D]` for embeddings `[B, N, E]`.
    pub fn forward(&self, ctx: &mut Ctx, emb: Var) -> Result<Var> {
        let s = ctx.g.shape(emb);
        if s.len() != 3 {
            return Err(Error::Shape(format!("encoder input must be [B, N, E], got {:?}", s)));
        }
        match self {
            Self::Recurrent(r) => r.forward(ctx, emb),
            Self::Attention(a) => a.forward(ctx, emb),
            Self::FNet(f) => f.forward(ctx, emb),
        }
    }
}

/// Row `t` of every batch element of a `[B, N, C]` node, as `[B, C]`.
pub(crate) fn time_slice(ctx: &mut Ctx, x: Var, t: usize) -> Result<Var> {
    let s = ctx.g.shape(x).to_vec();
    let (b, n, c) = (s[0], s[1], s[2]);
    let mut idx = Vec::with_capacity(b * c);
    for bi in 0..b {
        let base = (bi * n + t) * c;
        idx.extend((base..base + c).map(|k| k as isize));
    }
    ctx.g.gather(x, idx, vec![b, c])
}

/// Broadcasts a `[D]` parameter to `[B, 1, D]`.
pub(crate) fn repeat_row(ctx: &mut Ctx, row: Var, batch: usize) -> Result<Var> {
    let d = ctx.g.value(row).len();
    let idx: Vec<isize> = (0..batch).flat_map(|_| 0..d as isize).collect();
    ctx.g.gather(row, idx, vec![batch, 1, d])
}
