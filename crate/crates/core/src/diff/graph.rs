use std::rc::Rc;

use super::array::Array;
use super::dft;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum UnKind {
    Neg,
    Scale(f64),
    Offset(f64),
    Exp,
    Log,
    Erf,
    Tanh,
    Sigmoid,
    Softplus,
    Atan,
    Sin,
    Cos,
    Relu,
    Power(f64),
    Clamp(f64, f64),
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Binary(BinKind, Var, Var),
    Unary(UnKind, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    Concat(Vec<Var>, usize),
    Gather(Var, Rc<Vec<isize>>),
    Reshape(Var),
    DftMagnitude(Var, Rc<(Vec<f64>, Vec<f64>)>),
}

struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// The operation kinds accepted by [`Graph::apply`].
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Div,
    MatMul,
    Exp,
    Log,
    Erf,
    Tanh,
    Sigmoid,
    Softplus,
    Softmax,
    Sum,
    Mean,
    Concat { axis: usize },
    /// Flat-index gather; negative indices read as zero.
    Gather { indices: Vec<isize>, shape: Vec<usize> },
    /// Keeps the elements whose mask entry is true, as a flat vector.
    MaskSelect { mask: Vec<bool> },
    Power(f64),
    Negate,
    Clamp { lo: f64, hi: f64 },
    DftMagnitude,
}

/// Index mapping from an output element to an input element under broadcasting.
enum Bcast {
    Same,
    Scalar,
    Suffix(usize),
    Prefix(usize),
    General(Vec<usize>),
}

impl Bcast {
    #[inline]
    fn idx(&self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Scalar => 0,
            Bcast::Suffix(n) => i % n,
            Bcast::Prefix(inner) => i / inner,
            Bcast::General(map) => map[i],
        }
    }

    fn plan(out: &[usize], inp: &[usize]) -> Self {
        if out == inp {
            return Bcast::Same;
        }
        let in_len: usize = inp.iter().product();
        if in_len == 1 {
            return Bcast::Scalar;
        }
        let mut p = vec![1usize; out.len() - inp.len()];
        p.extend_from_slice(inp);
        let first = p.iter().position(|&d| d != 1).unwrap_or(0);
        if p[first..] == out[first..] {
            return Bcast::Suffix(in_len);
        }
        let last = p.iter().rposition(|&d| d != 1).unwrap_or(0);
        if p[..=last] == out[..=last] {
            return Bcast::Prefix(out[last + 1..].iter().product());
        }
        let mut in_strides = vec![0usize; p.len()];
        let mut acc = 1;
        for d in (0..p.len()).rev() {
            in_strides[d] = if p[d] == 1 { 0 } else { acc };
            acc *= p[d];
        }
        let total: usize = out.iter().product();
        let mut map = Vec::with_capacity(total);
        let mut idx = vec![0usize; out.len()];
        for _ in 0..total {
            map.push(idx.iter().zip(&in_strides).map(|(i, s)| i * s).sum());
            for d in (0..out.len()).rev() {
                idx[d] += 1;
                if idx[d] < out[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Bcast::General(map)
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(Error::Shape(format!("cannot broadcast {:?} with {:?}", a, b)));
        };
    }
    Ok(out)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// A reverse-mode computation graph (tape).
///
/// Nodes are appended in topological order, so a backward sweep is a
/// reverse iteration over the node list.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Array>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Array::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward root with respect to `v`; zeros if unreachable.
    pub fn grad(&self, v: Var) -> Array {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Array::zeros(self.nodes[v.0].value.shape()),
        }
    }

    /// Dispatch by operation kind.
    pub fn apply(&mut self, kind: &OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(Error::Contract(format!("{:?} takes {} inputs, got {}", kind, n, inputs.len())));
            }
            Ok(())
        };
        match kind {
            OpKind::Add => arity(2).and_then(|_| self.add(inputs[0], inputs[1])),
            OpKind::Sub => arity(2).and_then(|_| self.sub(inputs[0], inputs[1])),
            OpKind::Mul => arity(2).and_then(|_| self.mul(inputs[0], inputs[1])),
            OpKind::Div => arity(2).and_then(|_| self.div(inputs[0], inputs[1])),
            OpKind::MatMul => arity(2).and_then(|_| self.matmul(inputs[0], inputs[1])),
            OpKind::Exp => arity(1).and_then(|_| self.exp(inputs[0])),
            OpKind::Log => arity(1).and_then(|_| self.log(inputs[0])),
            OpKind::Erf => arity(1).and_then(|_| self.erf(inputs[0])),
            OpKind::Tanh => arity(1).and_then(|_| self.tanh(inputs[0])),
            OpKind::Sigmoid => arity(1).and_then(|_| self.sigmoid(inputs[0])),
            OpKind::Softplus => arity(1).and_then(|_| self.softplus(inputs[0])),
            OpKind::Softmax => arity(1).and_then(|_| self.softmax(inputs[0])),
            OpKind::Sum => arity(1).and_then(|_| self.sum(inputs[0])),
            OpKind::Mean => arity(1).and_then(|_| self.mean(inputs[0])),
            OpKind::Concat { axis } => self.concat(inputs, *axis),
            OpKind::Gather { indices, shape } => {
                arity(1)?;
                self.gather(inputs[0], indices.clone(), shape.clone())
            }
            OpKind::MaskSelect { mask } => arity(1).and_then(|_| self.mask_select(inputs[0], mask)),
            OpKind::Power(p) => arity(1).and_then(|_| self.power(inputs[0], *p)),
            OpKind::Negate => arity(1).and_then(|_| self.neg(inputs[0])),
            OpKind::Clamp { lo, hi } => arity(1).and_then(|_| self.clamp(inputs[0], *lo, *hi)),
            OpKind::DftMagnitude => arity(1).and_then(|_| self.dft_magnitude(inputs[0])),
        }
    }

    // ---- elementwise binary ----

    fn binary(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let shape = broadcast_shape(va.shape(), vb.shape())?;
        let pa = Bcast::plan(&shape, va.shape());
        let pb = Bcast::plan(&shape, vb.shape());
        let n: usize = shape.iter().product();
        let (da, db) = (va.data(), vb.data());
        if kind == BinKind::Div && db.iter().any(|&x| x == 0.0) {
            return Err(Error::Domain("division by zero".into()));
        }
        let mut out = Vec::with_capacity(n);
        match (&pa, &pb, kind) {
            (Bcast::Same, Bcast::Same, BinKind::Add) => out.extend(da.iter().zip(db).map(|(x, y)| x + y)),
            (Bcast::Same, Bcast::Same, BinKind::Mul) => out.extend(da.iter().zip(db).map(|(x, y)| x * y)),
            _ => {
                for i in 0..n {
                    let (x, y) = (da[pa.idx(i)], db[pb.idx(i)]);
                    out.push(match kind {
                        BinKind::Add => x + y,
                        BinKind::Sub => x - y,
                        BinKind::Mul => x * y,
                        BinKind::Div => x / y,
                    });
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Array::from_parts(shape, out), Op::Binary(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Div, a, b)
    }

    // ---- elementwise unary ----

    fn unary(&mut self, kind: UnKind, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        match kind {
            UnKind::Log if v.data().iter().any(|&t| t <= 0.0) => {
                return Err(Error::Domain("log of non-positive value".into()));
            }
            UnKind::Power(p) if p.fract() != 0.0 && v.data().iter().any(|&t| t < 0.0) => {
                return Err(Error::Domain("fractional power of negative value".into()));
            }
            UnKind::Clamp(lo, hi) if lo > hi => {
                return Err(Error::Contract(format!("clamp interval [{lo}, {hi}] is empty")));
            }
            _ => {}
        }
        let out = match kind {
            UnKind::Neg => v.map(|t| -t),
            UnKind::Scale(c) => v.map(|t| c * t),
            UnKind::Offset(c) => v.map(|t| t + c),
            UnKind::Exp => v.map(f64::exp),
            UnKind::Log => v.map(f64::ln),
            UnKind::Erf => v.map(libm::erf),
            UnKind::Tanh => v.map(f64::tanh),
            UnKind::Sigmoid => v.map(sigmoid),
            UnKind::Softplus => v.map(softplus),
            UnKind::Atan => v.map(f64::atan),
            UnKind::Sin => v.map(f64::sin),
            UnKind::Cos => v.map(f64::cos),
            UnKind::Relu => v.map(|t| t.max(0.0)),
            UnKind::Power(p) => v.map(|t| t.powf(p)),
            UnKind::Clamp(lo, hi) => v.map(|t| t.clamp(lo, hi)),
        };
        let rg = self.rg(x);
        Ok(self.push(out, Op::Unary(kind, x), rg))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(UnKind::Neg, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(UnKind::Scale(c), x)
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(UnKind::Offset(c), x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnKind::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnKind::Log, x)
    }

    pub fn erf(&mut self, x: Var) -> Result<Var> {
        self.unary(UnKind::Erf, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(UnKind::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnKind::Sigmoid, x)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(UnKind::Softplus, x)
    }

    pub fn atan(&mut self, x: Var) -> Result<Var> {
        self.unary(UnKind::Atan, x)
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        self.unary(UnKind::Sin, x)
    }

    pub fn cos(&mut self, x: Var) -> Result<Var> {
        self.unary(UnKind::Cos, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnKind::Relu, x)
    }

    pub fn power(&mut self, x: Var, p: f64) -> Result<Var> {
        self.unary(UnKind::Power(p), x)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(UnKind::Clamp(lo, hi), x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    // ---- linear algebra ----

    /// `[.., n, k] × [k, m]` (shared right factor) or `[b, n, k] × [b, k, m]` (batched).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::Shape(format!("matmul needs matrices, got {:?} and {:?}", sa, sb)));
        }
        let (n, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, m) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(Error::Shape(format!("matmul inner dims differ: {:?} × {:?}", sa, sb)));
        }
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.extend([n, m]);
        let (da, db) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
        let mut out = vec![0.0; out_shape.iter().product()];
        if sb.len() == 2 {
            let rows = da.len() / k;
            matmul_into(da, db, &mut out, rows, k, m);
        } else {
            if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
                return Err(Error::Shape(format!("batched matmul needs equal batch: {:?} × {:?}", sa, sb)));
            }
            for bi in 0..sa[0] {
                matmul_into(
                    &da[bi * n * k..(bi + 1) * n * k],
                    &db[bi * k * m..(bi + 1) * k * m],
                    &mut out[bi * n * m..(bi + 1) * n * m],
                    n,
                    k,
                    m,
                );
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Array::from_parts(out_shape, out), Op::MatMul(a, b), rg))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::Shape(format!("transpose needs ndim >= 2, got {:?}", s)));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let d = self.nodes[x.0].value.data();
        let mut out = vec![0.0; d.len()];
        for b in 0..d.len() / (r * c).max(1) {
            let off = b * r * c;
            for i in 0..r {
                for j in 0..c {
                    out[off + j * r + i] = d[off + i * c + j];
                }
            }
        }
        let mut shape = s[..s.len() - 2].to_vec();
        shape.extend([c, r]);
        let rg = self.rg(x);
        Ok(self.push(Array::from_parts(shape, out), Op::Transpose(x), rg))
    }

    // ---- reductions ----

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.nodes[x.0].value.data().iter().sum();
        let rg = self.rg(x);
        Ok(self.push(Array::scalar(s), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if v.is_empty() {
            return Err(Error::Shape("mean of empty array".into()));
        }
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(x);
        Ok(self.push(Array::scalar(s), Op::Mean(x), rg))
    }

    fn last_dim(&self, x: Var) -> Result<(usize, Vec<usize>)> {
        let s = self.shape(x);
        match s.last() {
            Some(&d) if d > 0 => {
                let mut keep = s.to_vec();
                *keep.last_mut().unwrap() = 1;
                Ok((d, keep))
            }
            _ => Err(Error::Shape(format!("reduction over empty last axis of {:?}", s))),
        }
    }

    /// Sum over the last axis, keeping it with extent 1.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let (d, shape) = self.last_dim(x)?;
        let out = self.nodes[x.0].value.data().chunks(d).map(|r| r.iter().sum()).collect();
        let rg = self.rg(x);
        Ok(self.push(Array::from_parts(shape, out), Op::SumLast(x), rg))
    }

    pub fn mean_last(&mut self, x: Var) -> Result<Var> {
        let (d, _) = self.last_dim(x)?;
        let s = self.sum_last(x)?;
        self.scale(s, 1.0 / d as f64)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (d, _) = self.last_dim(x)?;
        let v = &self.nodes[x.0].value;
        let mut out = Vec::with_capacity(v.len());
        for row in v.data().chunks(d) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let start = out.len();
            let mut z = 0.0;
            for &t in row {
                let e = (t - mx).exp();
                z += e;
                out.push(e);
            }
            out[start..].iter_mut().for_each(|e| *e /= z);
        }
        let shape = v.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Array::from_parts(shape, out), Op::Softmax(x), rg))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (d, _) = self.last_dim(x)?;
        let v = &self.nodes[x.0].value;
        let mut out = Vec::with_capacity(v.len());
        for row in v.data().chunks(d) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|t| (t - mx).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|t| t - lse));
        }
        let shape = v.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Array::from_parts(shape, out), Op::LogSoftmax(x), rg))
    }

    /// Log-sum-exp over the last axis, keeping it with extent 1.
    pub fn logsumexp(&mut self, x: Var) -> Result<Var> {
        let (d, shape) = self.last_dim(x)?;
        let out = self.nodes[x.0]
            .value
            .data()
            .chunks(d)
            .map(|row| {
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if mx == f64::NEG_INFINITY {
                    return mx;
                }
                mx + row.iter().map(|t| (t - mx).exp()).sum::<f64>().ln()
            })
            .collect();
        let rg = self.rg(x);
        Ok(self.push(Array::from_parts(shape, out), Op::LogSumExp(x), rg))
    }

    // ---- structural ----

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = match xs.first() {
            Some(v) => self.shape(*v).to_vec(),
            None => return Err(Error::Shape("concat of nothing".into())),
        };
        if axis >= first.len() {
            return Err(Error::Shape(format!("concat axis {axis} out of range for {:?}", first)));
        }
        let mut total = 0;
        for v in xs {
            let s = self.shape(*v);
            if s.len() != first.len() || s.iter().enumerate().any(|(d, &e)| d != axis && e != first[d]) {
                return Err(Error::Shape(format!("concat shapes {:?} and {:?} differ", first, s)));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut shape = first.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in xs {
                let chunk = self.shape(*v)[axis] * inner;
                out.extend_from_slice(&self.nodes[v.0].value.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = xs.iter().any(|v| self.rg(*v));
        Ok(self.push(Array::from_parts(shape, out), Op::Concat(xs.to_vec(), axis), rg))
    }

    /// `out.flat[i] = x.flat[indices[i]]`, with negative indices producing zero.
    pub fn gather(&mut self, x: Var, indices: Vec<isize>, shape: Vec<usize>) -> Result<Var> {
        self.gather_rc(x, Rc::new(indices), shape)
    }

    pub fn gather_rc(&mut self, x: Var, indices: Rc<Vec<isize>>, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != indices.len() {
            return Err(Error::Shape(format!("gather shape {:?} vs {} indices", shape, indices.len())));
        }
        let d = self.nodes[x.0].value.data();
        let n = d.len() as isize;
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices.iter() {
            if i >= n {
                return Err(Error::Index(format!("gather index {i} out of range {n}")));
            }
            out.push(if i < 0 { 0.0 } else { d[i as usize] });
        }
        let rg = self.rg(x);
        Ok(self.push(Array::from_parts(shape, out), Op::Gather(x, indices), rg))
    }

    pub fn mask_select(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        if mask.len() != self.nodes[x.0].value.len() {
            return Err(Error::Shape("mask length differs from input".into()));
        }
        let idx: Vec<isize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i as isize).collect();
        let n = idx.len();
        self.gather(x, idx, vec![n])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.nodes[x.0].value.clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    /// Columns `[start, end)` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| Error::Shape("slice of scalar".into()))?;
        if start > end || end > d {
            return Err(Error::Index(format!("slice {start}..{end} of axis with {d}")));
        }
        let rows = self.nodes[x.0].value.len() / d.max(1);
        let w = end - start;
        let mut idx = Vec::with_capacity(rows * w);
        for r in 0..rows {
            idx.extend((start..end).map(|c| (r * d + c) as isize));
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = w;
        self.gather(x, idx, shape)
    }

    /// Magnitude of the 2-D DFT of a matrix (or the 1-D DFT of a vector).
    pub fn dft_magnitude(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let (rows, cols) = match s.len() {
            1 => (1, s[0]),
            2 => (s[0], s[1]),
            _ => return Err(Error::Shape(format!("dft-magnitude needs 1-D or 2-D input, got {:?}", s))),
        };
        let (mag, re, im) = dft::magnitude2(self.nodes[x.0].value.data(), rows, cols);
        let rg = self.rg(x);
        Ok(self.push(Array::from_parts(s, mag), Op::DftMagnitude(x, Rc::new((re, im))), rg))
    }

    // ---- backward ----

    /// Reverse sweep from a scalar root; earlier gradients are discarded.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[root.0] = Some(Array::full(self.shape(root), 1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var) -> Option<&mut [f64]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape();
        let slot = &mut self.grads[v.0];
        if slot.is_none() {
            *slot = Some(Array::zeros(shape));
        }
        slot.as_mut().map(|a| a.data_mut())
    }

    fn propagate(&mut self, i: usize, g: &Array) {
        let op = self.nodes[i].op.clone();
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let out_shape = self.nodes[i].value.shape().to_vec();
                let pa = Bcast::plan(&out_shape, self.shape(a));
                let pb = Bcast::plan(&out_shape, self.shape(b));
                let va = self.nodes[a.0].value.data().to_vec();
                let vb = self.nodes[b.0].value.data().to_vec();
                if let Some(ga) = self.acc(a) {
                    for (k, &gk) in gd.iter().enumerate() {
                        ga[pa.idx(k)] += match kind {
                            BinKind::Add | BinKind::Sub => gk,
                            BinKind::Mul => gk * vb[pb.idx(k)],
                            BinKind::Div => gk / vb[pb.idx(k)],
                        };
                    }
                }
                if let Some(gb) = self.acc(b) {
                    for (k, &gk) in gd.iter().enumerate() {
                        let j = pb.idx(k);
                        gb[j] += match kind {
                            BinKind::Add => gk,
                            BinKind::Sub => -gk,
                            BinKind::Mul => gk * va[pa.idx(k)],
                            BinKind::Div => -gk * va[pa.idx(k)] / (vb[j] * vb[j]),
                        };
                    }
                }
            }
            Op::Unary(kind, x) => {
                let xv = self.nodes[x.0].value.data().to_vec();
                let yv = self.nodes[i].value.data().to_vec();
                if let Some(gx) = self.acc(x) {
                    for k in 0..gd.len() {
                        let (t, y) = (xv[k], yv[k]);
                        let d = match kind {
                            UnKind::Neg => -1.0,
                            UnKind::Scale(c) => c,
                            UnKind::Offset(_) => 1.0,
                            UnKind::Exp => y,
                            UnKind::Log => 1.0 / t,
                            UnKind::Erf => FRAC_2_SQRT_PI * (-t * t).exp(),
                            UnKind::Tanh => 1.0 - y * y,
                            UnKind::Sigmoid => y * (1.0 - y),
                            UnKind::Softplus => sigmoid(t),
                            UnKind::Atan => 1.0 / (1.0 + t * t),
                            UnKind::Sin => t.cos(),
                            UnKind::Cos => -t.sin(),
                            UnKind::Relu => {
                                if t > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnKind::Power(p) => p * t.powf(p - 1.0),
                            UnKind::Clamp(lo, hi) => {
                                if t >= lo && t <= hi {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        gx[k] += gd[k] * d;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let sa = self.shape(a).to_vec();
                let sb = self.shape(b).to_vec();
                let (n, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let m = sb[sb.len() - 1];
                let va = self.nodes[a.0].value.data().to_vec();
                let vb = self.nodes[b.0].value.data().to_vec();
                let shared = sb.len() == 2;
                let batches = if shared { 1 } else { sa[0] };
                let rows = if shared { va.len() / k } else { n };
                if let Some(ga) = self.acc(a) {
                    for bi in 0..batches {
                        let bo = if shared { 0 } else { bi * k * m };
                        for r in 0..rows {
                            let grow = &gd[(bi * rows + r) * m..(bi * rows + r + 1) * m];
                            for p in 0..k {
                                let brow = &vb[bo + p * m..bo + (p + 1) * m];
                                ga[(bi * rows + r) * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    }
                }
                if let Some(gb) = self.acc(b) {
                    for bi in 0..batches {
                        let bo = if shared { 0 } else { bi * k * m };
                        for r in 0..rows {
                            let grow = &gd[(bi * rows + r) * m..(bi * rows + r + 1) * m];
                            for p in 0..k {
                                let a_rp = va[(bi * rows + r) * k + p];
                                if a_rp == 0.0 {
                                    continue;
                                }
                                for (o, gv) in gb[bo + p * m..bo + (p + 1) * m].iter_mut().zip(grow) {
                                    *o += a_rp * gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                let s = self.shape(x).to_vec();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                if let Some(gx) = self.acc(x) {
                    for b in 0..gd.len() / (r * c).max(1) {
                        let off = b * r * c;
                        for ii in 0..r {
                            for j in 0..c {
                                gx[off + ii * c + j] += gd[off + j * r + ii];
                            }
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.acc(x) {
                    gx.iter_mut().for_each(|v| *v += gd[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = self.acc(x) {
                    let c = gd[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|v| *v += c);
                }
            }
            Op::SumLast(x) => {
                let d = *self.shape(x).last().unwrap();
                if let Some(gx) = self.acc(x) {
                    for (r, chunk) in gx.chunks_mut(d).enumerate() {
                        chunk.iter_mut().for_each(|v| *v += gd[r]);
                    }
                }
            }
            Op::Softmax(x) => {
                let d = *self.shape(x).last().unwrap();
                let y = self.nodes[i].value.data().to_vec();
                if let Some(gx) = self.acc(x) {
                    for r in 0..y.len() / d {
                        let (yr, gr) = (&y[r * d..(r + 1) * d], &gd[r * d..(r + 1) * d]);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..d {
                            gx[r * d + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let d = *self.shape(x).last().unwrap();
                let y = self.nodes[i].value.data().to_vec();
                if let Some(gx) = self.acc(x) {
                    for r in 0..y.len() / d {
                        let gr = &gd[r * d..(r + 1) * d];
                        let gs: f64 = gr.iter().sum();
                        for c in 0..d {
                            gx[r * d + c] += gr[c] - y[r * d + c].exp() * gs;
                        }
                    }
                }
            }
            Op::LogSumExp(x) => {
                let d = *self.shape(x).last().unwrap();
                let xv = self.nodes[x.0].value.data().to_vec();
                let y = self.nodes[i].value.data().to_vec();
                if let Some(gx) = self.acc(x) {
                    for r in 0..y.len() {
                        if y[r] == f64::NEG_INFINITY {
                            continue;
                        }
                        for c in 0..d {
                            gx[r * d + c] += gd[r] * (xv[r * d + c] - y[r]).exp();
                        }
                    }
                }
            }
            Op::Concat(xs, axis) => {
                let shape = self.nodes[i].value.shape().to_vec();
                let outer: usize = shape[..axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[axis] * inner;
                let mut off = 0;
                for v in xs {
                    let chunk = self.shape(v)[axis] * inner;
                    if let Some(gv) = self.acc(v) {
                        for o in 0..outer {
                            let src = &gd[o * total + off..o * total + off + chunk];
                            for (d, s) in gv[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    off += chunk;
                }
            }
            Op::Gather(x, idx) => {
                if let Some(gx) = self.acc(x) {
                    for (k, &j) in idx.iter().enumerate() {
                        if j >= 0 {
                            gx[j as usize] += gd[k];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.acc(x) {
                    for (d, s) in gx.iter_mut().zip(gd) {
                        *d += s;
                    }
                }
            }
            Op::DftMagnitude(x, spec) => {
                let s = self.shape(x).to_vec();
                let (rows, cols) = if s.len() == 1 { (1, s[0]) } else { (s[0], s[1]) };
                let mag = self.nodes[i].value.data().to_vec();
                let (re, im) = (&spec.0, &spec.1);
                let mut yr = vec![0.0; mag.len()];
                let mut yi = vec![0.0; mag.len()];
                for k in 0..mag.len() {
                    if mag[k] > 0.0 {
                        yr[k] = gd[k] * re[k] / mag[k];
                        yi[k] = -gd[k] * im[k] / mag[k];
                    }
                }
                let (zr, _) = dft::dft2(&yr, &yi, rows, cols);
                if let Some(gx) = self.acc(x) {
                    for (d, s) in gx.iter_mut().zip(&zr) {
                        *d += s;
                    }
                }
            }
        }
    }
}
