//! Event sequences, JSON-lines ingestion, time normalization, splitting and padding.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized horizon: the largest training timestamp maps here.
pub const NORMALIZED_HORIZON: f64 = 50.0;

/// Default cap on sequence length.
pub const MAX_SEQ_LEN: usize = 256;

/// One observed sequence of `(time, mark)` pairs. Marks are 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    #[serde(rename = "timestamps")]
    pub times: Vec<f64>,
    #[serde(rename = "types")]
    pub marks: Vec<usize>,
}

impl EventSequence {
    /// Builds a validated sequence; `index` only labels errors.
    pub fn new(times: Vec<f64>, marks: Vec<usize>, index: usize) -> Result<Self> {
        let s = Self { times, marks };
        s.validate(index, None)?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Last timestamp, used as the observation window end.
    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn validate(&self, index: usize, num_types: Option<usize>) -> Result<()> {
        let bad = |reason: String| Err(Error::Validation { index, reason });
        if self.times.len() != self.marks.len() {
            return bad(format!("{} timestamps but {} types", self.times.len(), self.marks.len()));
        }
        if self.times.is_empty() {
            return bad("empty sequence".into());
        }
        if !(self.times[0] >= 0.0) {
            return bad(format!("first timestamp {} is negative", self.times[0]));
        }
        for (i, w) in self.times.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return bad(format!("timestamps not increasing at position {}: {} then {}", i + 1, w[0], w[1]));
            }
        }
        if self.times.iter().any(|t| !t.is_finite()) {
            return bad("non-finite timestamp".into());
        }
        for (i, &m) in self.marks.iter().enumerate() {
            if m == 0 || num_types.is_some_and(|n| m > n) {
                return bad(format!("type {} at position {} outside 1..{}", m, i, num_types.unwrap_or(usize::MAX)));
            }
        }
        Ok(())
    }

    /// Keeps the earliest `max_len` events.
    pub fn clipped(&self, max_len: usize) -> Self {
        let n = self.len().min(max_len);
        Self { times: self.times[..n].to_vec(), marks: self.marks[..n].to_vec() }
    }

    /// Gaps `t_i - t_{i-1}`, with the first gap measured from time 0.
    pub fn intervals(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.times
            .iter()
            .map(|&t| {
                let d = t - prev;
                prev = t;
                d
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<EventSequence>,
    pub num_types: usize,
    /// Normalization constant (largest training timestamp) once applied.
    pub t_max_train: Option<f64>,
}

impl Dataset {
    pub fn new(sequences: Vec<EventSequence>, num_types: usize) -> Result<Self> {
        if num_types == 0 {
            return Err(Error::Config("num_types must be at least 1".into()));
        }
        for (i, s) in sequences.iter().enumerate() {
            s.validate(i, Some(num_types))?;
        }
        Ok(Self { sequences, num_types, t_max_train: None })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn num_events(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }

    pub fn max_time(&self) -> f64 {
        self.sequences.iter().map(|s| s.horizon()).fold(0.0, f64::max)
    }

    /// Reads one JSON object per line with `timestamps` and `types` arrays.
    pub fn from_reader(reader: impl BufRead, num_types: usize) -> Result<Self> {
        let mut seqs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s: EventSequence = serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("line {}: {}", i + 1, e)))?;
            seqs.push(s);
        }
        Self::new(seqs, num_types)
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for s in &self.sequences {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn clipped(&self, max_len: usize) -> Self {
        Self {
            sequences: self.sequences.iter().map(|s| s.clipped(max_len)).collect(),
            num_types: self.num_types,
            t_max_train: self.t_max_train,
        }
    }

    /// Deterministic shuffled split into disjoint train/val/test subsets.
    pub fn split(&self, counts: (usize, usize, usize), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
        let (a, b, c) = counts;
        if a + b + c > self.len() {
            return Err(Error::Size(format!("split {}+{}+{} exceeds {} sequences", a, b, c, self.len())));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let take = |r: &[usize]| Dataset {
            sequences: r.iter().map(|&i| self.sequences[i].clone()).collect(),
            num_types: self.num_types,
            t_max_train: self.t_max_train,
        };
        Ok((take(&idx[..a]), take(&idx[a..a + b]), take(&idx[a + b..a + b + c])))
    }

    /// Largest timestamp of this (training) set, the normalization constant.
    pub fn fit_time_scale(&self) -> Result<f64> {
        let m = self.max_time();
        if !(m > 0.0) {
            return Err(Error::Degenerate("largest timestamp is 0; cannot normalize".into()));
        }
        Ok(m)
    }

    /// Maps every `t` to `50 t / t_max`; values above 50 are kept.
    pub fn normalize_times(&self, t_max: f64) -> Result<Dataset> {
        if !(t_max > 0.0) {
            return Err(Error::Degenerate(format!("normalization constant {t_max} is not positive")));
        }
        let sequences = self
            .sequences
            .iter()
            .map(|s| EventSequence { times: s.times.iter().map(|t| t / t_max * NORMALIZED_HORIZON).collect(), marks: s.marks.clone() })
            .collect();
        Ok(Dataset { sequences, num_types: self.num_types, t_max_train: Some(t_max) })
    }
}

pub fn load_dataset(path: impl AsRef<Path>, num_types: usize) -> Result<Dataset> {
    let f = std::fs::File::open(path.as_ref())?;
    Dataset::from_reader(BufReader::new(f), num_types)
}

/// Rectangular view of several sequences. Padded cells repeat the row's last
/// timestamp and carry mark 0.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    pub batch: usize,
    pub n_max: usize,
    pub times: Vec<f64>,
    pub marks: Vec<usize>,
    pub valid: Vec<bool>,
}

impl PaddedBatch {
    pub fn time(&self, b: usize, i: usize) -> f64 {
        self.times[b * self.n_max + i]
    }

    pub fn mark(&self, b: usize, i: usize) -> usize {
        self.marks[b * self.n_max + i]
    }

    pub fn is_valid(&self, b: usize, i: usize) -> bool {
        self.valid[b * self.n_max + i]
    }

    pub fn row_len(&self, b: usize) -> usize {
        self.valid[b * self.n_max..(b + 1) * self.n_max].iter().filter(|v| **v).count()
    }

    /// Inter-event gaps; 0 at padded cells, first gap measured from time 0.
    pub fn intervals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.times.len()];
        for b in 0..self.batch {
            let mut prev = 0.0;
            for i in 0..self.n_max {
                let k = b * self.n_max + i;
                if self.valid[k] {
                    out[k] = self.times[k] - prev;
                    prev = self.times[k];
                }
            }
        }
        out
    }
}

pub fn pad_batch(seqs: &[&EventSequence]) -> PaddedBatch {
    let n_max = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
    let batch = seqs.len();
    let mut times = Vec::with_capacity(batch * n_max);
    let mut marks = Vec::with_capacity(batch * n_max);
    let mut valid = Vec::with_capacity(batch * n_max);
    for s in seqs {
        times.extend_from_slice(&s.times);
        marks.extend_from_slice(&s.marks);
        valid.extend(std::iter::repeat(true).take(s.len()));
        let pad = n_max - s.len();
        times.extend(std::iter::repeat(s.horizon()).take(pad));
        marks.extend(std::iter::repeat(0).take(pad));
        valid.extend(std::iter::repeat(false).take(pad));
    }
    PaddedBatch { batch, n_max, times, marks, valid }
}

/// Events of one type together with their positions in the parent sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TypeSubsequence {
    pub times: Vec<f64>,
    pub positions: Vec<usize>,
}

/// Splits a sequence into `num_types` per-type subsequences (index `m-1` holds type `m`).
pub fn split_by_type(seq: &EventSequence, num_types: usize) -> Vec<TypeSubsequence> {
    let mut out = vec![TypeSubsequence::default(); num_types];
    for (i, (&t, &m)) in seq.times.iter().zip(&seq.marks).enumerate() {
        out[m - 1].times.push(t);
        out[m - 1].positions.push(i);
    }
    out
}

/// Inverse of [`split_by_type`].
pub fn merge_by_position(parts: &[TypeSubsequence]) -> EventSequence {
    let mut all: Vec<(usize, f64, usize)> = parts
        .iter()
        .enumerate()
        .flat_map(|(m, p)| p.positions.iter().zip(&p.times).map(move |(&i, &t)| (i, t, m + 1)))
        .collect();
    all.sort_by_key(|e| e.0);
    EventSequence { times: all.iter().map(|e| e.1).collect(), marks: all.iter().map(|e| e.2).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(times: &[f64], marks: &[usize]) -> EventSequence {
        EventSequence::new(times.to_vec(), marks.to_vec(), 0).unwrap()
    }

    #[test]
    fn load_rejects_bad_sequences() {
        let text = "{\"timestamps\":[1.0,2.0],\"types\":[1,2]}\n{\"timestamps\":[3.0,3.0],\"types\":[1,1]}\n";
        match Dataset::from_reader(text.as_bytes(), 2) {
            Err(Error::Validation { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
        let text = "{\"timestamps\":[1.0],\"types\":[3]}\n";
        assert!(matches!(Dataset::from_reader(text.as_bytes(), 2), Err(Error::Validation { index: 0, .. })));
    }

    #[test]
    fn load_single_event() {
        let ds = Dataset::from_reader("{\"timestamps\":[1.0],\"types\":[1]}".as_bytes(), 1).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.sequences[0].len(), 1);
    }

    #[test]
    fn jsonl_round_trip() {
        let ds = Dataset::new(vec![seq(&[0.5, 1.25], &[2, 1]), seq(&[3.0], &[1])], 2).unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        assert_eq!(Dataset::from_reader(buf.as_slice(), 2).unwrap(), ds);
    }

    #[test]
    fn normalization() {
        let train = Dataset::new(vec![seq(&[40.0, 100.0], &[1, 1])], 1).unwrap();
        let tmax = train.fit_time_scale().unwrap();
        let n = train.normalize_times(tmax).unwrap();
        assert_eq!(n.sequences[0].times, vec![20.0, 50.0]);
        let val = Dataset::new(vec![seq(&[200.0], &[1])], 1).unwrap();
        assert_eq!(val.normalize_times(tmax).unwrap().sequences[0].times, vec![100.0]);
        let zero = Dataset::new(vec![seq(&[0.0], &[1])], 1).unwrap();
        assert!(matches!(zero.fit_time_scale(), Err(Error::Degenerate(_))));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let seqs: Vec<_> = (0..20).map(|i| seq(&[i as f64 + 1.0], &[1])).collect();
        let ds = Dataset::new(seqs, 1).unwrap();
        let (a, b, c) = ds.split((10, 4, 6), 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (10, 4, 6));
        let (a2, _, _) = ds.split((10, 4, 6), 3).unwrap();
        assert_eq!(a, a2);
        let mut all: Vec<f64> = [a, b, c].iter().flat_map(|d| d.sequences.iter().map(|s| s.times[0])).collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        assert_eq!(all.len(), 20);
        assert_eq!(ds.split((20, 0, 0), 1).unwrap().0.len(), 20);
        assert!(matches!(ds.split((15, 5, 1), 1), Err(Error::Size(_))));
    }

    #[test]
    fn padding() {
        let a = seq(&[1.0, 2.0, 3.0], &[1, 2, 1]);
        let b = seq(&[0.5, 1.0, 1.5, 2.0, 2.5], &[2, 2, 2, 1, 1]);
        let p = pad_batch(&[&a, &b]);
        assert_eq!(p.n_max, 5);
        assert_eq!(&p.valid[..5], &[true, true, true, false, false]);
        assert_eq!(&p.times[3..5], &[3.0, 3.0]);
        assert_eq!(&p.marks[3..5], &[0, 0]);
        assert_eq!(&p.intervals()[..5], &[1.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(pad_batch(&[&a]).valid.iter().all(|v| *v));
    }

    #[test]
    fn type_split_examples() {
        let s = seq(&[1.0, 2.0, 3.0], &[1, 2, 1]);
        let parts = split_by_type(&s, 2);
        assert_eq!(parts[0].positions, vec![0, 2]);
        assert_eq!(parts[1].positions, vec![1]);
        let s = seq(&[1.0, 2.0], &[1, 1]);
        let parts = split_by_type(&s, 3);
        assert_eq!(parts[0].times, s.times);
        assert!(parts[1].times.is_empty() && parts[2].times.is_empty());
    }

    fn arb_seq() -> impl Strategy<Value = (EventSequence, usize)> {
        (1usize..5, prop::collection::vec((0.01f64..3.0, 0usize..5), 1..30)).prop_map(|(m, ev)| {
            let mut t = 0.0;
            let mut times = Vec::new();
            let mut marks = Vec::new();
            for (dt, k) in ev {
                t += dt;
                times.push(t);
                marks.push(k % m + 1);
            }
            (EventSequence { times, marks }, m)
        })
    }

    proptest! {
        #[test]
        fn split_merge_round_trip((s, m) in arb_seq()) {
            prop_assert_eq!(merge_by_position(&split_by_type(&s, m)), s);
        }

        #[test]
        fn normalization_preserves_order((s, m) in arb_seq()) {
            let ds = Dataset::new(vec![s], m).unwrap();
            let n = ds.normalize_times(ds.fit_time_scale().unwrap()).unwrap();
            prop_assert!(n.sequences[0].times.windows(2).all(|w| w[1] > w[0]));
            prop_assert_eq!(*n.sequences[0].times.last().unwrap(), 50.0);
        }

        #[test]
        fn padding_keeps_valid_values((a, _) in arb_seq(), (b, _) in arb_seq()) {
            let p = pad_batch(&[&a, &b]);
            for (r, s) in [&a, &b].iter().enumerate() {
                for i in 0..s.len() {
                    prop_assert_eq!(p.time(r, i), s.times[i]);
                    prop_assert_eq!(p.mark(r, i), s.marks[i]);
                    prop_assert!(p.is_valid(r, i));
                }
                for i in s.len()..p.n_max {
                    prop_assert_eq!(p.time(r, i), s.horizon());
                    prop_assert!(!p.is_valid(r, i));
                }
            }
        }
    }
}
