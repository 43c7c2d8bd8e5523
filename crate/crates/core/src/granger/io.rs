use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::diff::Array;
use crate::error::{Error, Result};

/// Metadata written next to a graph CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub num_types: usize,
    /// Threshold for hard edges, when the CSV holds probabilities.
    pub threshold: f64,
    /// Sampling temperature at the end of training.
    pub temperature: f64,
    pub hard_eval: bool,
    pub prior_p: f64,
    pub literal_gumbel: bool,
}

/// Writes an `[M, M]` graph: a header row of type indices `1..=M`, then one
/// row per target type with one column per source type.
pub fn write_graph_csv(mut w: impl Write, graph: &Array) -> Result<()> {
    let s = graph.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::Shape(format!("graph must be square, got {:?}", s)));
    }
    let m = s[0];
    let header: Vec<String> = (1..=m).map(|i| i.to_string()).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in graph.data().chunks(m) {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", vals.join(","))?;
    }
    Ok(())
}

pub fn read_graph_csv(r: impl BufRead) -> Result<Array> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty graph file".into()))??;
    let m = header.split(',').count();
    for (i, h) in header.split(',').enumerate() {
        if h.trim().parse::<usize>().ok() != Some(i + 1) {
            return Err(Error::Parse(format!("graph header column {} is '{}'", i + 1, h)));
        }
    }
    let mut data = Vec::with_capacity(m * m);
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Parse(format!("graph row {}: {e}", row + 1))))
            .collect::<Result<_>>()?;
        if vals.len() != m {
            return Err(Error::Parse(format!("graph row {} has {} columns, expected {}", row + 1, vals.len(), m)));
        }
        data.extend(vals);
    }
    if data.len() != m * m {
        return Err(Error::Parse(format!("graph has {} rows, expected {}", data.len() / m.max(1), m)));
    }
    Array::new(vec![m, m], data)
}
