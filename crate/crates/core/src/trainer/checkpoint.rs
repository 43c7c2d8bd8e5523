//! Binary checkpoint: an 8-byte magic, a little-endian `u64` header length,
//! a JSON header, then every parameter value as little-endian `f64` in
//! header order.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::diff::Array;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

const MAGIC: &[u8; 8] = b"TPPCKPT1";

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position as a decimal string (it is a `u128`).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let pos: u128 = self.word_pos.parse().map_err(|_| Error::Parse(format!("bad word position '{}'", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: Option<TrainConfig>,
    time_scale: Option<f64>,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    eval_graph: Option<Vec<f64>>,
    rng: Option<RngState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    /// Largest training timestamp used to normalize times, if any.
    pub time_scale: Option<f64>,
    pub names: Vec<String>,
    pub values: Vec<Array>,
    /// `[M, M]` mean edge probabilities in Granger mode.
    pub eval_graph: Option<Array>,
    pub rng: Option<RngState>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, train: Option<&TrainConfig>, time_scale: Option<f64>, rng: Option<&ChaCha8Rng>) -> Self {
        Self {
            model: model.cfg.clone(),
            train: train.cloned(),
            time_scale,
            names: model.store.names().to_vec(),
            values: model.store.values().to_vec(),
            eval_graph: model.eval_graph.clone(),
            rng: rng.map(RngState::capture),
        }
    }

    /// Rebuilds the model and loads the stored parameters.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::new(self.model.clone(), 0)?;
        model.store.load(&self.names, self.values.clone())?;
        model.eval_graph = self.eval_graph.clone();
        Ok(model)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = Header {
            model: self.model.clone(),
            train: self.train.clone(),
            time_scale: self.time_scale,
            names: self.names.clone(),
            shapes: self.values.iter().map(|v| v.shape().to_vec()).collect(),
            eval_graph: self.eval_graph.as_ref().map(|g| g.data().to_vec()),
            rng: self.rng.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for v in &self.values {
            for x in v.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::Parse("checkpoint too short".into()))?;
        if &magic != MAGIC {
            return Err(Error::Parse("not a checkpoint file (bad magic)".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(|_| Error::Parse("truncated checkpoint header".into()))?;
        let h: Header = serde_json::from_slice(&json)?;
        if h.names.len() != h.shapes.len() {
            return Err(Error::Parse("checkpoint names and shapes differ in length".into()));
        }
        let mut values = Vec::with_capacity(h.shapes.len());
        let mut buf = [0u8; 8];
        for shape in &h.shapes {
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf).map_err(|_| Error::Parse("truncated checkpoint values".into()))?;
                data.push(f64::from_le_bytes(buf));
            }
            values.push(Array::new(shape.clone(), data)?);
        }
        if r.read(&mut buf)? != 0 {
            return Err(Error::Parse("trailing bytes after checkpoint values".into()));
        }
        let m = h.model.num_types;
        let eval_graph = h.eval_graph.map(|d| Array::new(vec![m, m], d)).transpose()?;
        Ok(Self {
            model: h.model,
            train: h.train,
            time_scale: h.time_scale,
            names: h.names,
            values,
            eval_graph,
            rng: h.rng,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
