use rand_chacha::ChaCha8Rng;

use super::{time_slice, EncoderConfig};
use crate::diff::{Array, Var};
use crate::error::Result;
use crate::nn::{Ctx, Linear, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Rnn,
    Lstm,
    Gru,
}

impl Cell {
    fn gates(self) -> usize {
        match self {
            Cell::Rnn => 1,
            Cell::Gru => 3,
            Cell::Lstm => 4,
        }
    }
}

#[derive(Clone, Debug)]
struct Layer {
    input: Linear,
    hidden: Linear,
}

/// Stacked Elman / LSTM / GRU recurrence with a zero initial state.
#[derive(Clone, Debug)]
pub struct Recurrent {
    cell: Cell,
    dim: usize,
    layers: Vec<Layer>,
}

impl Recurrent {
    pub fn new(store: &mut ParamStore, name: &str, cell: Cell, input_dim: usize, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let h = cfg.hidden_dim;
        let g = cell.gates() * h;
        let layers = (0..cfg.num_layers)
            .map(|l| {
                let inp = if l == 0 { input_dim } else { h };
                let input = Linear::new(store, &format!("{name}.l{l}.in"), inp, g, true, rng);
                let hidden = Linear::new(store, &format!("{name}.l{l}.rec"), h, g, false, rng);
                if cell == Cell::Lstm {
                    // forget-gate bias starts at 1
                    let b = store.get_mut(input.b.expect("bias"));
                    b.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
                }
                Layer { input, hidden }
            })
            .collect();
        Self { cell, dim: h, layers }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn forward(&self, ctx: &mut Ctx, emb: Var) -> Result<Var> {
        let s = ctx.g.shape(emb).to_vec();
        let (b, n) = (s[0], s[1]);
        let h = self.dim;
        let zero = ctx.g.constant(Array::zeros(&[b, h]));
        let mut x = emb;
        for layer in &self.layers {
            let proj = layer.input.forward(ctx, x)?;
            let mut state = zero;
            let mut cell = zero;
            let mut outs = Vec::with_capacity(n);
            for t in 0..n {
                let xt = time_slice(ctx, proj, t)?;
                let rec = layer.hidden.forward(ctx, state)?;
                let g = &mut ctx.g;
                state = match self.cell {
                    Cell::Rnn => {
                        let a = g.add(xt, rec)?;
                        g.tanh(a)?
                    }
                    Cell::Gru => {
                        let xrz = g.slice_last(xt, 0, 2 * h)?;
                        let hrz = g.slice_last(rec, 0, 2 * h)?;
                        let a = g.add(xrz, hrz)?;
                        let rz = g.sigmoid(a)?;
                        let r = g.slice_last(rz, 0, h)?;
                        let z = g.slice_last(rz, h, 2 * h)?;
                        let xn = g.slice_last(xt, 2 * h, 3 * h)?;
                        let hn = g.slice_last(rec, 2 * h, 3 * h)?;
                        let rh = g.mul(r, hn)?;
                        let a = g.add(xn, rh)?;
                        let cand = g.tanh(a)?;
                        let d = g.sub(state, cand)?;
                        let zd = g.mul(z, d)?;
                        g.add(cand, zd)?
                    }
                    Cell::Lstm => {
                        let a = g.add(xt, rec)?;
                        let ifo = g.slice_last(a, 0, 2 * h)?;
                        let ifo = g.sigmoid(ifo)?;
                        let i = g.slice_last(ifo, 0, h)?;
                        let f = g.slice_last(ifo, h, 2 * h)?;
                        let c_in = g.slice_last(a, 2 * h, 3 * h)?;
                        let c_in = g.tanh(c_in)?;
                        let o = g.slice_last(a, 3 * h, 4 * h)?;
                        let o = g.sigmoid(o)?;
                        let fc = g.mul(f, cell)?;
                        let ic = g.mul(i, c_in)?;
                        cell = g.add(fc, ic)?;
                        let tc = g.tanh(cell)?;
                        g.mul(o, tc)?
                    }
                };
                outs.push(ctx.g.reshape(state, vec![b, 1, h])?);
            }
            x = ctx.g.concat(&outs, 1)?;
        }
        let z = ctx.g.constant(Array::zeros(&[b, 1, h]));
        ctx.g.concat(&[z, x], 1)
    }
}
