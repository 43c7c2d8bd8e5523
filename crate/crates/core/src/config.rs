//! Flat `key = value` run configuration. Lines starting with `#` are
//! comments; unknown and repeated keys are rejected.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::embedding::TimeMode;
use crate::encoders::EncoderKind;
use crate::error::{Error, Result};
use crate::intensity::FamilyKind;
use crate::model::{Mode, ModelConfig};
use crate::trainer::{MapeVariant, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub family: FamilyKind,
    pub encoder: EncoderKind,
    /// `0` means infer from the largest mark in the data.
    pub num_types: usize,
    pub components: usize,
    pub embed_dim: usize,
    /// Encoder state width; `0` means equal to `embed_dim`.
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub top_k: usize,
    pub exclude_dc: bool,
    pub time_mode: TimeMode,
    pub fnn_hidden: usize,

    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub clip_norm: f64,

    pub lag: usize,
    pub z_dim: usize,
    pub edge_hidden: usize,
    pub prior_p: f64,
    pub temp_initial: f64,
    pub temp_final: f64,
    pub literal_gumbel: bool,
    pub hard_eval: bool,
    pub threshold: f64,

    /// One file split by `split`, or explicit `train` / `val` / `test` files.
    pub dataset: Option<PathBuf>,
    pub split: (f64, f64, f64),
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub normalize: bool,
    pub max_len: usize,
    pub out: PathBuf,
    pub mape_variant: MapeVariant,
    pub eval_points: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let g = crate::granger::GrangerConfig::default();
        Self {
            mode: Mode::Overall,
            family: FamilyKind::LogNorm,
            encoder: EncoderKind::Gru,
            num_types: 0,
            components: 16,
            embed_dim: 16,
            hidden_dim: 0,
            layers: 1,
            heads: 1,
            top_k: 4,
            exclude_dc: false,
            time_mode: TimeMode::Trigonometric,
            fnn_hidden: 32,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: t.seed,
            clip_norm: t.clip_norm,
            lag: g.lag,
            z_dim: g.z_dim,
            edge_hidden: g.edge_hidden,
            prior_p: g.prior_p,
            temp_initial: g.temp_initial,
            temp_final: g.temp_final,
            literal_gumbel: g.literal_gumbel,
            hard_eval: g.hard_eval,
            threshold: g.threshold,
            dataset: None,
            split: (0.6, 0.2, 0.2),
            train: None,
            val: None,
            test: None,
            normalize: true,
            max_len: crate::events::MAX_SEQ_LEN,
            out: PathBuf::from("run"),
            mape_variant: MapeVariant::Interval,
            eval_points: 2000,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{v}' for {key}"))),
    }
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub const KEYS: [&'static str; 39] = [
        "mode",
        "family",
        "encoder",
        "num_types",
        "components",
        "embed_dim",
        "hidden_dim",
        "layers",
        "heads",
        "top_k",
        "exclude_dc",
        "time_mode",
        "fnn_hidden",
        "learning_rate",
        "batch_size",
        "max_epochs",
        "patience",
        "seed",
        "clip_norm",
        "lag",
        "z_dim",
        "edge_hidden",
        "prior_p",
        "temp_initial",
        "temp_final",
        "literal_gumbel",
        "hard_eval",
        "threshold",
        "dataset",
        "split",
        "train",
        "val",
        "test",
        "normalize",
        "max_len",
        "out",
        "mape_variant",
        "eval_points",
        "K",
    ];

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{line}'", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: key '{k}' given twice", n + 1)));
            }
            cfg.set(k, v).map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("configuration error: "))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
        Self::parse_text(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "mode" => self.mode = v.parse()?,
            "family" => self.family = v.parse()?,
            "encoder" => self.encoder = v.parse()?,
            "num_types" => self.num_types = parse(key, v)?,
            "components" | "K" => self.components = parse(key, v)?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "hidden_dim" => self.hidden_dim = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "top_k" => self.top_k = parse(key, v)?,
            "exclude_dc" => self.exclude_dc = parse_bool(key, v)?,
            "time_mode" => self.time_mode = v.parse()?,
            "fnn_hidden" => self.fnn_hidden = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "lag" => self.lag = parse(key, v)?,
            "z_dim" => self.z_dim = parse(key, v)?,
            "edge_hidden" => self.edge_hidden = parse(key, v)?,
            "prior_p" => self.prior_p = parse(key, v)?,
            "temp_initial" => self.temp_initial = parse(key, v)?,
            "temp_final" => self.temp_final = parse(key, v)?,
            "literal_gumbel" => self.literal_gumbel = parse_bool(key, v)?,
            "hard_eval" => self.hard_eval = parse_bool(key, v)?,
            "threshold" => self.threshold = parse(key, v)?,
            "dataset" => self.dataset = path(v),
            "split" => {
                let parts: Vec<f64> = v.split(',').map(|p| parse(key, p.trim())).collect::<Result<_>>()?;
                if parts.len() != 3 || parts.iter().any(|&x| !(0.0..=1.0).contains(&x)) || parts.iter().sum::<f64>() > 1.0 + 1e-9 {
                    return Err(Error::Config(format!("split '{v}' must be three fractions summing to at most 1")));
                }
                self.split = (parts[0], parts[1], parts[2]);
            }
            "train" => self.train = path(v),
            "val" => self.val = path(v),
            "test" => self.test = path(v),
            "normalize" => self.normalize = parse_bool(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "mape_variant" => self.mape_variant = v.parse()?,
            "eval_points" => self.eval_points = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, one `key = value` per line.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("mode", self.mode.name().into());
        put("family", self.family.name().into());
        put("encoder", self.encoder.name().into());
        put("num_types", self.num_types.to_string());
        put("components", self.components.to_string());
        put("embed_dim", self.embed_dim.to_string());
        put("hidden_dim", self.hidden_dim().to_string());
        put("layers", self.layers.to_string());
        put("heads", self.heads.to_string());
        put("top_k", self.top_k.to_string());
        put("exclude_dc", self.exclude_dc.to_string());
        put("time_mode", self.time_mode.name().into());
        put("fnn_hidden", self.fnn_hidden.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("batch_size", self.batch_size.to_string());
        put("max_epochs", self.max_epochs.to_string());
        put("patience", self.patience.to_string());
        put("seed", self.seed.to_string());
        put("clip_norm", self.clip_norm.to_string());
        put("lag", self.lag.to_string());
        put("z_dim", self.z_dim.to_string());
        put("edge_hidden", self.edge_hidden.to_string());
        put("prior_p", self.prior_p.to_string());
        put("temp_initial", self.temp_initial.to_string());
        put("temp_final", self.temp_final.to_string());
        put("literal_gumbel", self.literal_gumbel.to_string());
        put("hard_eval", self.hard_eval.to_string());
        put("threshold", self.threshold.to_string());
        put("dataset", show(&self.dataset));
        put("split", format!("{},{},{}", self.split.0, self.split.1, self.split.2));
        put("train", show(&self.train));
        put("val", show(&self.val));
        put("test", show(&self.test));
        put("normalize", self.normalize.to_string());
        put("max_len", self.max_len.to_string());
        put("out", self.out.display().to_string());
        put("mape_variant", self.mape_variant.name().into());
        put("eval_points", self.eval_points.to_string());
        s
    }

    pub fn hidden_dim(&self) -> usize {
        if self.hidden_dim == 0 {
            self.embed_dim
        } else {
            self.hidden_dim
        }
    }

    /// Model configuration; `num_types` must already be resolved.
    pub fn model_config(&self) -> Result<ModelConfig> {
        if self.num_types == 0 {
            return Err(Error::Config("num_types is not resolved".into()));
        }
        let mut m = ModelConfig::new(self.mode, self.family, self.encoder, self.num_types, self.embed_dim);
        m.components = self.components;
        m.embedding.time_mode = self.time_mode;
        m.encoder.hidden_dim = self.hidden_dim();
        m.encoder.num_layers = self.layers;
        m.encoder.num_heads = self.heads;
        m.encoder.top_k = self.top_k;
        m.encoder.exclude_dc = self.exclude_dc;
        m.fnn_hidden = self.fnn_hidden;
        let g = &mut m.granger;
        g.lag = self.lag;
        g.z_dim = self.z_dim;
        g.edge_hidden = self.edge_hidden;
        g.prior_p = self.prior_p;
        g.temp_initial = self.temp_initial;
        g.temp_final = self.temp_final;
        g.literal_gumbel = self.literal_gumbel;
        g.hard_eval = self.hard_eval;
        g.threshold = self.threshold;
        m.validate()?;
        Ok(m)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            clip_norm: self.clip_norm,
        };
        t.validate()?;
        Ok(t)
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        self.train_config()?;
        if self.dataset.is_none() && self.train.is_none() {
            return Err(Error::Config("either dataset or train must be set".into()));
        }
        if self.dataset.is_some() && self.train.is_some() {
            return Err(Error::Config("set dataset or train, not both".into()));
        }
        if self.max_len == 0 || self.eval_points < 2 {
            return Err(Error::Config("max_len must be positive and eval_points at least 2".into()));
        }
        let mut probe = self.clone();
        if probe.num_types == 0 {
            probe.num_types = 1;
        }
        probe.model_config().map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_echoes() {
        let text = "# comment\nmode = typewise\nfamily=weibull\n\nencoder = lstm\nK = 4\nlearning_rate = 5e-4\nsplit = 0.5, 0.25, 0.25\ndataset = data/x.jsonl\nliteral_gumbel = true\n";
        let cfg = RunConfig::parse_text(text).unwrap();
        assert_eq!(cfg.mode, Mode::Typewise);
        assert_eq!(cfg.family, FamilyKind::Weibull);
        assert_eq!(cfg.encoder, EncoderKind::Lstm);
        assert_eq!(cfg.components, 4);
        assert_eq!(cfg.learning_rate, 5e-4);
        assert_eq!(cfg.split, (0.5, 0.25, 0.25));
        assert!(cfg.literal_gumbel);
        let echo = cfg.resolved();
        let back = RunConfig::parse_text(&echo).unwrap();
        assert_eq!(back.resolved(), echo);
        assert_eq!(echo.lines().count(), RunConfig::KEYS.len() - 1);
        for line in echo.lines() {
            let k = line.split(" = ").next().unwrap();
            assert!(RunConfig::KEYS.contains(&k), "{k}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            "colour = blue",
            "mode = joint",
            "seed = -1",
            "seed = 1\nseed = 2",
            "no equals sign",
            "split = 0.9,0.9,0.1",
            "normalize = maybe",
        ] {
            assert!(matches!(RunConfig::parse_text(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn validation() {
        let mut cfg = RunConfig::default();
        assert!(cfg.validate().is_err());
        cfg.dataset = Some("x".into());
        assert!(cfg.validate().is_ok());
        cfg.patience = 0;
        assert!(cfg.validate().is_err());
        cfg.patience = 1;
        cfg.family = FamilyKind::FnnIntegral;
        cfg.mode = Mode::Granger;
        assert!(cfg.validate().is_err());
        assert!(RunConfig::default().model_config().is_err());
    }

    #[test]
    fn model_config_carries_fields() {
        let mut cfg = RunConfig::parse_text("mode = granger\nlag = 8\nembed_dim = 8\nhidden_dim = 12\nlayers = 2").unwrap();
        cfg.num_types = 3;
        let m = cfg.model_config().unwrap();
        assert_eq!(m.granger.lag, 8);
        assert_eq!(m.encoder.hidden_dim, 12);
        assert_eq!(m.encoder.num_layers, 2);
        assert_eq!(m.num_types, 3);
        assert_eq!(m.embedding.embed_dim, 8);
    }
}
