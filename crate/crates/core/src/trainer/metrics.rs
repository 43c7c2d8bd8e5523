use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the next-time percentage error is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapeVariant {
    /// `|t̂_i − t_i| / (t_i − t_{i−1})`: zero at a perfect prediction.
    #[default]
    Interval,
    /// `|(t̂_i − t_{i−1}) / (t_i − t_{i−1})|`: one at a perfect prediction.
    Printed,
}

impl std::str::FromStr for MapeVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interval" => Ok(Self::Interval),
            "printed" => Ok(Self::Printed),
            _ => Err(Error::Config(format!("unknown MAPE variant '{s}' (expected interval or printed)"))),
        }
    }
}

impl MapeVariant {
    pub fn name(self) -> &'static str {
        match self {
            Self::Interval => "interval",
            Self::Printed => "printed",
        }
    }
}

/// Absolute percentage error of one predicted interval, as a fraction.
pub fn ape(predicted: f64, actual: f64, variant: MapeVariant) -> f64 {
    match variant {
        MapeVariant::Interval => (predicted - actual).abs() / actual,
        MapeVariant::Printed => (predicted / actual).abs(),
    }
}

/// Whether `mark` (0-based) is among the `k` largest logits. Equal logits
/// rank the lower index first.
pub fn top_k_hit(logits: &[f64], mark: usize, k: usize) -> bool {
    let v = logits[mark];
    let rank = logits.iter().enumerate().filter(|&(j, &x)| x > v || (x == v && j < mark)).count();
    rank < k
}

/// Softmax of type logits.
pub fn type_distribution(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Mean time NLL plus mean type cross-entropy; `marks` are 1-based.
pub fn joint_loss(nll: f64, type_probs: &[Vec<f64>], marks: &[usize]) -> f64 {
    if marks.is_empty() {
        return nll;
    }
    let ce: f64 = type_probs.iter().zip(marks).map(|(p, &m)| -p[m - 1].ln()).sum();
    nll + ce / marks.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nll: f64,
    /// MAPE of the selected variant, as a fraction.
    pub mape: f64,
    pub mape_variant: MapeVariant,
    pub mape_interval: f64,
    pub mape_printed: f64,
    pub acc1: f64,
    pub acc3: f64,
    pub n_events: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_accuracy: Option<f64>,
}

/// Running sums behind a [`MetricsReport`].
#[derive(Clone, Debug, Default)]
pub struct MetricsAccumulator {
    nll_sum: f64,
    n_timed: usize,
    n_events: usize,
    hits1: usize,
    hits3: usize,
    ape_interval: f64,
    ape_printed: f64,
    n_predicted: usize,
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a summed time NLL over `n_timed` events.
    pub fn add_nll(&mut self, nll_sum: f64, n_timed: usize) {
        self.nll_sum += nll_sum;
        self.n_timed += n_timed;
    }

    /// Records the type prediction for one event (`mark` 1-based).
    pub fn add_type(&mut self, logits: &[f64], mark: usize) {
        self.n_events += 1;
        self.hits1 += top_k_hit(logits, mark - 1, 1) as usize;
        self.hits3 += top_k_hit(logits, mark - 1, 3) as usize;
    }

    /// Records a predicted interval against the true positive interval.
    pub fn add_time(&mut self, predicted: f64, actual: f64) {
        self.ape_interval += ape(predicted, actual, MapeVariant::Interval);
        self.ape_printed += ape(predicted, actual, MapeVariant::Printed);
        self.n_predicted += 1;
    }

    pub fn finish(&self, variant: MapeVariant) -> MetricsReport {
        let ratio = |a: f64, n: usize| if n == 0 { f64::NAN } else { a / n as f64 };
        let mape_interval = ratio(self.ape_interval, self.n_predicted);
        let mape_printed = ratio(self.ape_printed, self.n_predicted);
        MetricsReport {
            nll: ratio(self.nll_sum, self.n_timed),
            mape: match variant {
                MapeVariant::Interval => mape_interval,
                MapeVariant::Printed => mape_printed,
            },
            mape_variant: variant,
            mape_interval,
            mape_printed,
            acc1: ratio(self.hits1 as f64, self.n_events),
            acc3: ratio(self.hits3 as f64, self.n_events),
            n_events: self.n_events,
            auc: None,
            edge_accuracy: None,
        }
    }
}
