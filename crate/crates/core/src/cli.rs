//! Command-line front end: `train`, `synth`, `eval` and `aggregate`.
//!
//! Exit codes: 0 ok, 1 other failure, 2 configuration or input error,
//! 3 training divergence, 4 generator failure.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::diff::Array;
use crate::error::{Error, Result};
use crate::events::{load_dataset, Dataset, EventSequence};
use crate::granger::{read_graph_csv, write_graph_csv, GraphMeta};
use crate::model::{Mode, Model};
use crate::synth::{gen_hawkes, gen_poisson, gen_selfcorrecting, HawkesSpec};
use crate::trainer::{self, Checkpoint, EvalOptions, MapeVariant, MetricsReport};

#[derive(Parser, Debug)]
#[command(name = "tpp", version, about = "Neural temporal point processes: training, evaluation and synthetic data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model from a key = value config and write a run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `dataset` in the config.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Overrides the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        mape_variant: Option<String>,
    },
    /// Generate synthetic sequences as JSON lines.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long = "n", default_value_t = 1000)]
        n_sequences: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Observation window; defaults to the Hawkes spec horizon (50).
        #[arg(long)]
        horizon: Option<f64>,
        /// Poisson rate.
        #[arg(long, default_value_t = 1.0)]
        rate: f64,
        /// Self-correcting base growth rate.
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        /// Self-correcting drop per event.
        #[arg(long, default_value_t = 0.2)]
        alpha: f64,
        /// Hawkes spec as JSON (`alpha`, `eta`, `beta`, `horizon`); default is the two-type spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Where to write the true graph for hawkes data; default `graph.csv` beside `--out`.
        #[arg(long)]
        true_graph: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Metrics file; default `eval_metrics.json` beside the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mape_variant: Option<String>,
        /// True graph CSV for edge-recovery scoring in Granger mode.
        #[arg(long)]
        true_graph: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        eval_points: usize,
    },
    /// Mean and variance of metrics over the runs with the five lowest NLLs.
    Aggregate {
        /// Run directories containing metrics.json.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        keep: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Poisson,
    Hawkes,
    Selfcorrecting,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence(_) => 3,
        Error::Unstable(_) => 4,
        Error::Config(_)
        | Error::Parse(_)
        | Error::Validation { .. }
        | Error::Io(_)
        | Error::Size(_)
        | Error::Degenerate(_)
        | Error::Index(_) => 2,
        Error::Shape(_) | Error::Domain(_) | Error::Contract(_) => 1,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { config, dataset, out, seed, mode, mape_variant } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(d) = dataset {
                cfg.dataset = Some(d);
                cfg.train = None;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = mode {
                cfg.mode = m.parse()?;
            }
            if let Some(v) = mape_variant {
                cfg.mape_variant = v.parse()?;
            }
            let report = cmd_train(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Synth { kind, n_sequences, seed, out, horizon, rate, mu, alpha, spec, true_graph } => {
            let spec = match spec {
                Some(p) => serde_json::from_reader(BufReader::new(File::open(&p)?))?,
                None => HawkesSpec::default(),
            };
            let params = SynthParams { kind, n_sequences, seed, horizon, rate, mu, alpha, spec };
            let graph_path = true_graph.unwrap_or_else(|| sibling(&out, "graph.csv"));
            cmd_synth(&params, &out, &graph_path)
        }
        Command::Eval { checkpoint, dataset, out, mape_variant, true_graph, eval_points } => {
            let variant = mape_variant.map(|v| v.parse()).transpose()?.unwrap_or_default();
            let out = out.unwrap_or_else(|| sibling(&checkpoint, "eval_metrics.json"));
            let report = cmd_eval(&checkpoint, &dataset, variant, true_graph.as_deref(), eval_points, &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Aggregate { runs, out, keep } => {
            let summary = cmd_aggregate(&runs, keep)?;
            let text = serde_json::to_string_pretty(&summary)?;
            if let Some(p) = out {
                std::fs::write(p, format!("{text}\n"))?;
            }
            println!("{text}");
            Ok(())
        }
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().map(|p| p.join(name)).unwrap_or_else(|| PathBuf::from(name))
}

fn max_mark(sets: &[&Dataset]) -> usize {
    sets.iter().flat_map(|d| d.sequences.iter()).flat_map(|s| s.marks.iter().copied()).max().unwrap_or(0)
}

fn with_types(mut ds: Dataset, m: usize) -> Result<Dataset> {
    for (i, s) in ds.sequences.iter().enumerate() {
        s.validate(i, Some(m))?;
    }
    ds.num_types = m;
    Ok(ds)
}

/// Train / validation / test sets with marks checked against the resolved `M`.
fn load_splits(cfg: &mut RunConfig) -> Result<(Dataset, Dataset, Dataset)> {
    let open = |p: &Path| load_dataset(p, usize::MAX);
    let (train, val, test) = if let Some(path) = &cfg.dataset {
        let all = open(path)?;
        let n = all.len();
        let count = |f: f64| (f * n as f64).round() as usize;
        let a = count(cfg.split.0).min(n);
        let b = count(cfg.split.1).min(n - a);
        let c = count(cfg.split.2).min(n - a - b);
        all.split((a, b, c), cfg.seed)?
    } else {
        let path = cfg.train.as_ref().ok_or_else(|| Error::Config("no training data configured".into()))?;
        let train = open(path)?;
        let empty = || Dataset { sequences: Vec::new(), num_types: usize::MAX, t_max_train: None };
        let val = cfg.val.as_deref().map(open).transpose()?.unwrap_or_else(empty);
        let test = cfg.test.as_deref().map(open).transpose()?.unwrap_or_else(empty);
        (train, val, test)
    };
    let m = if cfg.num_types == 0 { max_mark(&[&train, &val, &test]) } else { cfg.num_types };
    if m == 0 {
        return Err(Error::Degenerate("datasets contain no events".into()));
    }
    cfg.num_types = m;
    Ok((with_types(train, m)?, with_types(val, m)?, with_types(test, m)?))
}

/// Runs training and writes the run directory. Returns the test metrics.
pub fn cmd_train(cfg: &RunConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    let (train, val, test) = load_splits(&mut cfg)?;
    let (train, val, test) = (train.clipped(cfg.max_len), val.clipped(cfg.max_len), test.clipped(cfg.max_len));
    let (train, val, test, scale) = if cfg.normalize {
        let s = train.fit_time_scale()?;
        (train.normalize_times(s)?, val.normalize_times(s)?, test.normalize_times(s)?, Some(s))
    } else {
        (train, val, test, None)
    };
    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("config.resolved"), cfg.resolved())?;

    let mut model = Model::new(model_cfg, cfg.seed)?;
    let mut log = BufWriter::new(File::create(cfg.out.join("log.csv"))?);
    writeln!(log, "epoch,train_nll,val_nll")?;
    let mut io_err = None;
    let outcome = trainer::train(&mut model, &train, &val, &train_cfg, |row| {
        eprintln!("epoch {:>4}  train {:.6}  val {:.6}", row.epoch, row.train_nll, row.val_nll);
        if let Err(e) = writeln!(log, "{},{},{}", row.epoch, row.train_nll, row.val_nll) {
            io_err.get_or_insert(e);
        }
    });
    log.flush()?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let outcome = outcome?;

    Checkpoint::from_model(&model, Some(&train_cfg), scale, Some(&outcome.rng)).save(cfg.out.join("checkpoint.bin"))?;
    let eval_set = if !test.is_empty() {
        &test
    } else if !val.is_empty() {
        &val
    } else {
        &train
    };
    let opts = EvalOptions { batch_size: train_cfg.batch_size, variant: cfg.mape_variant, points: cfg.eval_points, predict_times: true };
    let report = trainer::evaluate(&model, eval_set, &opts)?;
    write_json(&cfg.out.join("metrics.json"), &report)?;

    if model.cfg.mode == Mode::Granger {
        let graph = model.eval_graph.clone().ok_or_else(|| Error::Contract("granger run without a graph".into()))?;
        write_graph_csv(BufWriter::new(File::create(cfg.out.join("graph.csv"))?), &graph)?;
        let g = &model.cfg.granger;
        let meta = GraphMeta {
            num_types: model.num_types(),
            threshold: g.threshold,
            temperature: g.temperature(train_cfg.max_epochs.saturating_sub(1), train_cfg.max_epochs),
            hard_eval: g.hard_eval,
            prior_p: g.prior_p,
            literal_gumbel: g.literal_gumbel,
        };
        write_json(&cfg.out.join("graph.json"), &meta)?;
    }
    Ok(report)
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    std::fs::write(path, format!("{}\n", serde_json::to_string_pretty(v)?))?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SynthParams {
    pub kind: SynthKind,
    pub n_sequences: usize,
    pub seed: u64,
    pub horizon: Option<f64>,
    pub rate: f64,
    pub mu: f64,
    pub alpha: f64,
    pub spec: HawkesSpec,
}

/// Sequence `k` draws from the ChaCha stream `k` of `seed`, so files are
/// reproducible and any prefix of a larger run is identical.
pub fn synth_sequences(p: &SynthParams) -> Result<Vec<EventSequence>> {
    let mut spec = p.spec.clone();
    if let Some(h) = p.horizon {
        spec.horizon = h;
    }
    let horizon = spec.horizon;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!("horizon {horizon} must be positive")));
    }
    match p.kind {
        SynthKind::Hawkes => spec.validate().map_err(|e| match e {
            Error::Unstable(_) => e,
            other => Error::Config(other.to_string()),
        })?,
        SynthKind::Poisson if !(p.rate > 0.0) => return Err(Error::Config(format!("rate {} must be positive", p.rate))),
        SynthKind::Selfcorrecting if !(p.mu > 0.0 && p.alpha >= 0.0) => {
            return Err(Error::Config("self-correcting needs mu > 0 and alpha >= 0".into()))
        }
        _ => {}
    }
    (0..p.n_sequences)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
            rng.set_stream(k as u64);
            match p.kind {
                SynthKind::Poisson => gen_poisson(p.rate, horizon, &mut rng),
                SynthKind::Hawkes => gen_hawkes(&spec, &mut rng),
                SynthKind::Selfcorrecting => gen_selfcorrecting(p.mu, p.alpha, horizon, &mut rng),
            }
        })
        .collect()
}

pub fn cmd_synth(p: &SynthParams, out: &Path, graph_path: &Path) -> Result<()> {
    let seqs = synth_sequences(p)?;
    let m = seqs.iter().flat_map(|s| s.marks.iter().copied()).max().unwrap_or(1);
    let ds = Dataset { sequences: seqs, num_types: m, t_max_train: None };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(out)?);
    ds.write_jsonl(&mut w)?;
    w.flush()?;
    if p.kind == SynthKind::Hawkes {
        write_graph_csv(BufWriter::new(File::create(graph_path)?), &p.spec.graph())?;
    }
    eprintln!("wrote {} sequences ({} events) to {}", ds.len(), ds.num_events(), out.display());
    Ok(())
}

/// Edge-recovery AUC and thresholded accuracy over off-diagonal entries
/// (the diagonal is fixed to 1 by construction).
pub fn edge_recovery(probs: &Array, truth: &Array, threshold: f64) -> Result<(Option<f64>, f64)> {
    if probs.shape() != truth.shape() {
        return Err(Error::Config(format!("true graph has shape {:?}, model graph {:?}", truth.shape(), probs.shape())));
    }
    let m = probs.shape()[0];
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for i in 0..m {
        for j in 0..m {
            if i != j {
                scores.push(probs.data()[i * m + j]);
                labels.push(truth.data()[i * m + j] > 0.0);
            }
        }
    }
    if scores.is_empty() {
        return Ok((None, 1.0));
    }
    let correct = scores.iter().zip(&labels).filter(|(&s, &l)| (s >= threshold) == l).count();
    Ok((crate::stats::auc(&scores, &labels), correct as f64 / scores.len() as f64))
}

#[derive(Serialize)]
struct EvalReport<'a> {
    #[serde(flatten)]
    metrics: &'a MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    edge_probs: Option<Vec<Vec<f64>>>,
}

pub fn cmd_eval(
    checkpoint: &Path,
    dataset: &Path,
    variant: MapeVariant,
    true_graph: Option<&Path>,
    points: usize,
    out: &Path,
) -> Result<MetricsReport> {
    let ck = Checkpoint::load(checkpoint)
        .map_err(|e| Error::Config(format!("cannot load checkpoint {}: {e}", checkpoint.display())))?;
    let model = ck.to_model()?;
    let m = model.num_types();
    let mut ds = load_dataset(dataset, m)?.clipped(crate::events::MAX_SEQ_LEN);
    if let Some(s) = ck.time_scale {
        ds = ds.normalize_times(s)?;
    }
    let batch = ck.train.as_ref().map_or(64, |t| t.batch_size);
    let opts = EvalOptions { batch_size: batch, variant, points, predict_times: true };
    let mut report = trainer::evaluate(&model, &ds, &opts)?;
    let mut edge_probs = None;
    if model.cfg.mode == Mode::Granger {
        let g = model.eval_graph.clone().ok_or_else(|| Error::Contract("checkpoint has no evaluation graph".into()))?;
        eprintln!("edge probabilities (row = target, column = source):");
        for row in g.data().chunks(m) {
            eprintln!("  {}", row.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join("  "));
        }
        if let Some(p) = true_graph {
            let truth = read_graph_csv(BufReader::new(File::open(p)?))?;
            let (auc, acc) = edge_recovery(&g, &truth, model.cfg.granger.threshold)?;
            report.auc = Some(auc.unwrap_or(f64::NAN));
            report.edge_accuracy = Some(acc);
        }
        edge_probs = Some(g.data().chunks(m).map(|r| r.to_vec()).collect());
    }
    write_json(out, &EvalReport { metrics: &report, edge_probs })?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub n_runs: usize,
    pub selected: Vec<String>,
    pub nll_mean: f64,
    pub nll_var: f64,
    pub mape_mean: f64,
    pub mape_var: f64,
    pub acc1_mean: f64,
    pub acc1_var: f64,
    pub acc3_mean: f64,
    pub acc3_var: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}

/// Keeps the `keep` runs with the lowest test NLL and summarizes them.
pub fn cmd_aggregate(runs: &[PathBuf], keep: usize) -> Result<Aggregate> {
    let mut rows: Vec<(String, MetricsReport)> = runs
        .iter()
        .map(|r| {
            let p = r.join("metrics.json");
            let f = File::open(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            Ok((r.display().to_string(), serde_json::from_reader(BufReader::new(f))?))
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() || keep == 0 {
        return Err(Error::Config("nothing to aggregate".into()));
    }
    rows.sort_by(|a, b| a.1.nll.total_cmp(&b.1.nll).then_with(|| a.0.cmp(&b.0)));
    rows.truncate(keep);
    let col = |f: fn(&MetricsReport) -> f64| mean_var(&rows.iter().map(|r| f(&r.1)).collect::<Vec<_>>());
    let (nll_mean, nll_var) = col(|r| r.nll);
    let (mape_mean, mape_var) = col(|r| r.mape);
    let (acc1_mean, acc1_var) = col(|r| r.acc1);
    let (acc3_mean, acc3_var) = col(|r| r.acc3);
    Ok(Aggregate {
        n_runs: runs.len(),
        selected: rows.iter().map(|r| r.0.clone()).collect(),
        nll_mean,
        nll_var,
        mape_mean,
        mape_var,
        acc1_mean,
        acc1_var,
        acc3_mean,
        acc3_var,
    })
}
