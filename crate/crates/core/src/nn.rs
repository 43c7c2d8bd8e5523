//! Named parameter storage and the small building blocks shared by models.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{Array, Graph, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered collection of named parameter arrays.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform in `(-bound, bound)`.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, Array::new(shape.to_vec(), data).expect("shape and data agree"))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array] {
        &mut self.values
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Replaces all values, checking names and shapes agree.
    pub fn load(&mut self, names: &[String], values: Vec<Array>) -> Result<()> {
        if names != self.names.as_slice() || values.len() != self.values.len() {
            return Err(Error::Config("checkpoint parameters do not match the model".into()));
        }
        for (i, v) in values.iter().enumerate() {
            if v.shape() != self.values[i].shape() {
                return Err(Error::Config(format!(
                    "parameter {} has shape {:?}, checkpoint has {:?}",
                    self.names[i],
                    self.values[i].shape(),
                    v.shape()
                )));
            }
        }
        self.values = values;
        Ok(())
    }
}

/// A graph together with lazily bound parameter leaves.
pub struct Ctx<'p> {
    pub g: Graph,
    store: &'p ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'p> Ctx<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self { g: Graph::new(), store, bound: vec![None; store.len()] }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Graph leaf for a parameter, created on first use.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.g.leaf(self.store.get(id).clone());
        self.bound[id.0] = Some(v);
        v
    }

    /// Gradients for every parameter after `g.backward`; zeros for unused ones.
    pub fn param_grads(&self) -> Vec<Array> {
        self.bound
            .iter()
            .enumerate()
            .map(|(i, b)| match b {
                Some(v) => self.g.grad(*v),
                None => Array::zeros(self.store.get(ParamId(i)).shape()),
            })
            .collect()
    }
}

/// Affine map over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let w = store.add_uniform(format!("{name}.w"), &[input, output], bound, rng);
        let b = bias.then(|| store.add_uniform(format!("{name}.b"), &[output], bound, rng));
        Self { w, b, input, output }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let w = ctx.p(self.w);
        let y = ctx.g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = ctx.p(b);
                ctx.g.add(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Layer normalization over the last axis with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Array::full(&[dim], 1.0)),
            bias: store.add(format!("{name}.bias"), Array::zeros(&[dim])),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let g = &mut ctx.g;
        let mu = g.mean_last(x)?;
        let c = g.sub(x, mu)?;
        let sq = g.square(c)?;
        let var = g.mean_last(sq)?;
        let var = g.offset(var, 1e-5)?;
        let inv = g.power(var, -0.5)?;
        let n = g.mul(c, inv)?;
        let (gain, bias) = (ctx.p(self.gain), ctx.p(self.bias));
        let y = ctx.g.mul(n, gain)?;
        ctx.g.add(y, bias)
    }
}

/// Rows of a `[rows, cols]` (or deeper, flattened) tensor picked by index.
pub fn take_rows(g: &mut Graph, x: Var, rows: &[isize], cols: usize) -> Result<Var> {
    let mut idx = Vec::with_capacity(rows.len() * cols);
    for &r in rows {
        if r < 0 {
            idx.extend(std::iter::repeat(-1).take(cols));
        } else {
            idx.extend((0..cols).map(|c| r * cols as isize + c as isize));
        }
    }
    g.gather(x, idx, vec![rows.len(), cols])
}

/// Central-difference check of every parameter gradient of a scalar model
/// function, with the same relative-error convention as [`crate::diff::grad_check`].
pub fn grad_check_params(store: &ParamStore, f: impl Fn(&mut Ctx) -> Result<Var>, step: f64) -> Result<f64> {
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut ctx = Ctx::new(s);
        let out = f(&mut ctx)?;
        let v = ctx.g.value(out).item();
        if !v.is_finite() {
            return Err(Error::Domain(format!("non-finite forward value {v}")));
        }
        Ok(v)
    };
    let grads = {
        let mut ctx = Ctx::new(store);
        let out = f(&mut ctx)?;
        ctx.g.backward(out)?;
        ctx.param_grads()
    };
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for (p, grad) in grads.iter().enumerate() {
        for k in 0..grad.len() {
            let orig = probe.values()[p].data()[k];
            probe.values_mut()[p].data_mut()[k] = orig + step;
            let up = eval(&probe)?;
            probe.values_mut()[p].data_mut()[k] = orig - step;
            let down = eval(&probe)?;
            probe.values_mut()[p].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let exact = grad.data()[k];
            worst = worst.max(crate::diff::relative_error(exact, numeric));
        }
    }
    Ok(worst)
}
