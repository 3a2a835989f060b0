//! Reverse-mode differentiation over a per-step tape of tensor operations.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamStore`] and appear on the tape once, however often
//! they are used, so shared weights (the recurrent decoder block) accumulate
//! gradient from every use. [`Tape::backward`] walks the tape in reverse and
//! returns gradients keyed by parameter name.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::kernels;
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Hadamard(Var, Var),
    Outer(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    MeanRows(Var),
    ConcatCols(Vec<Var>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    Sum(Var),
    SqErrorSum {
        x: Var,
        target: Vec<T>,
    },
    StackRows(Vec<Var>),
}

struct Node<'a, T: Scalar> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
}

/// Gradients of a scalar loss, keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub by_name: BTreeMap<String, Vec<T>>,
}

impl<T> Default for Gradients<T> {
    fn default() -> Self {
        Self {
            by_name: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.by_name.get(name).map(Vec::as_slice)
    }

    /// Adds `other` into `self`, name by name.
    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (name, g) in &other.by_name {
            match self.by_name.get_mut(name) {
                Some(acc) => {
                    for (a, &b) in acc.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                None => {
                    self.by_name.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.by_name.values().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

pub struct Tape<'a, T: Scalar> {
    nodes: Vec<Node<'a, T>>,
    param_vars: HashMap<String, Var>,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn owned<T: Scalar>(shape: Vec<usize>, data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape, data).expect("kernel output matches its shape")
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// A constant input: no gradient flows out of it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf)
    }

    /// Borrows the named parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &'a ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(name) {
            return Ok(v);
        }
        let t = store.get(name)?;
        let v = self.push(Cow::Borrowed(t), Op::Param);
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Registers an owned tensor as a named differentiable input.
    pub fn param_owned(&mut self, name: &str, t: Tensor<T>) -> Result<Var> {
        if self.param_vars.contains_key(name) {
            return Err(Error::Conflict(format!("parameter `{name}` already on tape")));
        }
        let v = self.push(Cow::Owned(t), Op::Param);
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a);
        let (k2, n) = self.dims2(b);
        if k != k2 || self.value(b).shape().len() != 2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} · {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Cow::Owned(owned(vec![m, n], out)), Op::MatMul(a, b)))
    }

    /// `a · bᵀ`, the layout used for `x · Wᵀ` projections and `Q · Kᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a);
        let (n, k2) = self.dims2(b);
        if k != k2 {
            return Err(Error::shape(
                "matmul_bt",
                format!("{:?} · {:?}ᵀ", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let out = kernels::matmul_bt(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Cow::Owned(owned(vec![m, n], out)), Op::MatMulBt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Cow::Owned(owned(shape, data)), Op::Add(a, b)))
    }

    /// Adds a length-`cols` vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, c) = self.dims2(a);
        if self.value(bias).len() != c {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + {:?}", self.value(a).shape(), self.value(bias).shape()),
            ));
        }
        let b = self.value(bias).data();
        let ta = self.value(a);
        let data = ta
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Cow::Owned(owned(shape, data)), Op::AddRow(a, bias)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("hadamard", self.value(a), self.value(b))?;
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Cow::Owned(owned(shape, data)), Op::Hadamard(a, b)))
    }

    /// `u · vᵀ` for vectors `u` (length l) and `v` (length d).
    pub fn outer(&mut self, u: Var, v: Var) -> Result<Var> {
        let (tu, tv) = (self.value(u), self.value(v));
        if tu.shape().len() != 1 || tv.shape().len() != 1 {
            return Err(Error::shape("outer", format!("{:?} ⊗ {:?}", tu.shape(), tv.shape())));
        }
        let (l, d) = (tu.len(), tv.len());
        let data = tu
            .data()
            .iter()
            .flat_map(|&x| tv.data().iter().map(move |&y| x * y))
            .collect();
        Ok(self.push(Cow::Owned(owned(vec![l, d], data)), Op::Outer(u, v)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| x * c).collect();
        let shape = ta.shape().to_vec();
        self.push(Cow::Owned(owned(shape, data)), Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| x.max(T::zero())).collect();
        let shape = ta.shape().to_vec();
        self.push(Cow::Owned(owned(shape, data)), Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = kernels::softmax_rows(ta.data(), ta.cols());
        let shape = ta.shape().to_vec();
        self.push(Cow::Owned(owned(shape, data)), Op::Softmax(a))
    }

    /// Row-wise layer norm followed by `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (_, c) = self.dims2(x);
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "input {:?}, gain {:?}, bias {:?}",
                    self.value(x).shape(),
                    self.value(gain).shape(),
                    self.value(bias).shape()
                ),
            ));
        }
        let tx = self.value(x);
        let (xhat, rstd) = kernels::normalize_rows(tx.data(), c, eps);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let data = xhat
            .chunks(c)
            .flat_map(|row| row.iter().zip(g.iter().zip(b)).map(|(&h, (&gi, &bi))| gi * h + bi))
            .collect();
        let shape = tx.shape().to_vec();
        Ok(self.push(
            Cow::Owned(owned(shape, data)),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    /// Column-wise mean over rows; returns a vector.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims2(a);
        let inv = T::one() / T::from_usize(r).expect("row count fits scalar");
        let mut out = vec![T::zero(); c];
        for row in self.value(a).data().chunks(c) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        for o in &mut out {
            *o *= inv;
        }
        self.push(Cow::Owned(owned(vec![c], out)), Op::MeanRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let (r, _) = self.dims2(first);
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.dims2(p);
            if pr != r {
                return Err(Error::shape("concat_cols", "row counts differ"));
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        Ok(self.push(Cow::Owned(owned(vec![r, total], data)), Op::ConcatCols(parts.to_vec())))
    }

    /// Embedding lookup: rows of `table` selected by `ids`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(table);
        if ids.is_empty() {
            return Err(Error::shape("gather_rows", "no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::shape(
                "gather_rows",
                format!("id {bad} out of range for table with {r} rows"),
            ));
        }
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        Ok(self.push(
            Cow::Owned(owned(vec![ids.len(), c], data)),
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(a);
        if len == 0 || start + len > r {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} of {r}", start + len),
            ));
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        Ok(self.push(Cow::Owned(owned(vec![len, c], data)), Op::SliceRows { x: a, start }))
    }

    /// Stacks equally long vectors into a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows.first().ok_or_else(|| Error::shape("stack_rows", "no inputs"))?;
        let c = self.value(first).len();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            let t = self.value(r);
            if t.len() != c {
                return Err(Error::shape("stack_rows", "vector lengths differ"));
            }
            data.extend_from_slice(t.data());
        }
        Ok(self.push(
            Cow::Owned(owned(vec![rows.len(), c], data)),
            Op::StackRows(rows.to_vec()),
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Sum(a))
    }

    /// `Σ (a - target)²` against a constant target.
    pub fn sq_error_sum(&mut self, a: Var, target: &[T]) -> Result<Var> {
        let ta = self.value(a);
        if ta.len() != target.len() {
            return Err(Error::shape(
                "sq_error_sum",
                format!("{} values vs {} targets", ta.len(), target.len()),
            ));
        }
        let s = ta.data().iter().zip(target).map(|(&x, &t)| (x - t) * (x - t)).sum();
        Ok(self.push(
            Cow::Owned(Tensor::scalar(s)),
            Op::SqErrorSum {
                x: a,
                target: target.to_vec(),
            },
        ))
    }

    /// Sign pattern of every ReLU input on the tape, used to detect probes
    /// that cross a kink.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                out.extend(self.value(x).data().iter().map(|&v| v > T::zero()));
            }
        }
        out
    }

    /// Propagates d(loss)/d(node) back to every parameter on the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param => grads[i] = Some(g),
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims2(*a);
                    let n = self.value(*b).cols();
                    let da = kernels::matmul_bt(&g, self.value(*b).data(), m, n, k);
                    let db = kernels::matmul_at(self.value(*a).data(), &g, m, k, n);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulBt(a, b) => {
                    let (m, k) = self.dims2(*a);
                    let n = self.value(*b).rows();
                    let da = kernels::matmul(&g, self.value(*b).data(), m, n, k);
                    let db = kernels::matmul_at(&g, self.value(*a).data(), m, n, k);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, bias) => {
                    let c = self.value(*bias).len();
                    let mut db = vec![T::zero(); c];
                    for row in g.chunks(c) {
                        for (o, &x) in db.iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *bias, db);
                    accumulate(&mut grads, *a, g);
                }
                Op::Hadamard(a, b) => {
                    let da = mul(&g, self.value(*b).data());
                    let db = mul(&g, self.value(*a).data());
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Outer(u, v) => {
                    let uu = self.value(*u).data();
                    let vv = self.value(*v).data();
                    let d = vv.len();
                    let du = g.chunks(d).map(|row| kernels::dot(row, vv)).collect();
                    let mut dv = vec![T::zero(); d];
                    for (row, &ui) in g.chunks(d).zip(uu) {
                        for (o, &x) in dv.iter_mut().zip(row) {
                            *o += x * ui;
                        }
                    }
                    accumulate(&mut grads, *u, du);
                    accumulate(&mut grads, *v, dv);
                }
                Op::Scale(a, c) => {
                    let da = g.iter().map(|&x| x * *c).collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::Relu(a) => {
                    let da = g
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(&x, &v)| if v > T::zero() { x } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let c = node.value.cols();
                    let mut da = Vec::with_capacity(y.len());
                    for (yr, gr) in y.chunks(c).zip(g.chunks(c)) {
                        let s = kernels::dot(yr, gr);
                        da.extend(yr.iter().zip(gr).map(|(&yi, &gi)| yi * (gi - s)));
                    }
                    accumulate(&mut grads, *a, da);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let gv = self.value(*gain).data();
                    let c = gv.len();
                    let n = T::from_usize(c).expect("column count fits scalar");
                    let mut dgain = vec![T::zero(); c];
                    let mut dbias = vec![T::zero(); c];
                    let mut dx = Vec::with_capacity(g.len());
                    for ((gr, hr), &r) in g.chunks(c).zip(xhat.chunks(c)).zip(rstd) {
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..c {
                            dgain[j] += gr[j] * hr[j];
                            dbias[j] += gr[j];
                            let dh = gr[j] * gv[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[j];
                        }
                        let mean_dh = sum_dh / n;
                        let mean_dh_h = sum_dh_h / n;
                        for j in 0..c {
                            let dh = gr[j] * gv[j];
                            dx.push(r * (dh - mean_dh - hr[j] * mean_dh_h));
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gain, dgain);
                    accumulate(&mut grads, *bias, dbias);
                }
                Op::MeanRows(a) => {
                    let (r, _) = self.dims2(*a);
                    let inv = T::one() / T::from_usize(r).expect("row count fits scalar");
                    let row: Vec<T> = g.iter().map(|&x| x * inv).collect();
                    let da = (0..r).flat_map(|_| row.iter().copied()).collect();
                    accumulate(&mut grads, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        let dp = g
                            .chunks(total)
                            .flat_map(|row| row[offset..offset + pc].iter().copied())
                            .collect();
                        accumulate(&mut grads, p, dp);
                        offset += pc;
                    }
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let c = t.cols();
                    let mut dt = vec![T::zero(); t.len()];
                    for (row, &id) in g.chunks(c).zip(ids) {
                        for (o, &x) in dt[id * c..(id + 1) * c].iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::SliceRows { x, start } => {
                    let t = self.value(*x);
                    let c = t.cols();
                    let mut dx = vec![T::zero(); t.len()];
                    dx[start * c..start * c + g.len()].copy_from_slice(&g);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sum(a) => {
                    let da = vec![g[0]; self.value(*a).len()];
                    accumulate(&mut grads, *a, da);
                }
                Op::SqErrorSum { x, target } => {
                    let two = T::one() + T::one();
                    let da = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(target)
                        .map(|(&v, &t)| two * (v - t) * g[0])
                        .collect();
                    accumulate(&mut grads, *x, da);
                }
                Op::StackRows(rows) => {
                    let c = node.value.cols();
                    for (&r, chunk) in rows.iter().zip(g.chunks(c)) {
                        accumulate(&mut grads, r, chunk.to_vec());
                    }
                }
            }
        }

        let mut out = Gradients::default();
        for (name, &v) in &self.param_vars {
            if v.0 < grads.len() {
                if let Some(g) = grads[v.0].take() {
                    out.by_name.insert(name.clone(), g);
                }
            }
        }
        Ok(out)
    }

    /// Runs [`Tape::backward`] and accumulates into the store's gradients.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.backward(loss)?;
        for (name, g) in &grads.by_name {
            store.get_mut(name)?.accumulate_grad(g)?;
        }
        Ok(())
    }
}

fn mul<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x * y).collect()
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, delta: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(delta) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::InitScheme;

    fn store_with(name: &str, t: Tensor<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new(0);
        s.insert(name, t).unwrap();
        s
    }

    #[test]
    fn square_has_gradient_two_x() {
        let s = store_with("x", Tensor::vector(vec![3.0]).unwrap());
        let mut tape = Tape::new();
        let x = tape.param(&s, "x").unwrap();
        let y = tape.hadamard(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get("x").unwrap(), &[6.0]);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let s = store_with("x", Tensor::vector(vec![3.0]).unwrap());
        let mut tape = Tape::new();
        let x = tape.param(&s, "x").unwrap();
        let zero = tape.scale(x, 0.0);
        let c = tape.constant(Tensor::vector(vec![5.0]).unwrap());
        let y = tape.add(zero, c).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get("x").unwrap(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let s = store_with("x", Tensor::vector(vec![1.0, 2.0]).unwrap());
        let mut tape = Tape::new();
        let x = tape.param(&s, "x").unwrap();
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn repeated_backward_into_accumulates() {
        let mut s = store_with("x", Tensor::vector(vec![3.0]).unwrap());
        let snapshot = s.clone();
        let mut tape = Tape::new();
        let x = tape.param(&snapshot, "x").unwrap();
        let y = tape.hadamard(x, x).unwrap();
        tape.backward_into(y, &mut s).unwrap();
        tape.backward_into(y, &mut s).unwrap();
        assert_eq!(s.get("x").unwrap().grad().unwrap(), &[12.0]);
    }

    #[test]
    fn matmul_values_and_identity() {
        let mut tape = Tape::<f64>::new();
        let i = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let m = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let p = tape.matmul(i, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
        let a = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let b = tape.constant(Tensor::from_rows(&[vec![5.0], vec![7.0]]).unwrap());
        let p = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(p).data(), &[5.0]);
        assert!(matches!(tape.matmul(a, a), Err(Error::Shape { .. })));
    }

    #[test]
    fn matmul_gradient_is_ones_times_b_transpose() {
        let a = Tensor::<f64>::init(vec![2, 3], InitScheme::Normal { mean: 0.0, std: 1.0 }, 1).unwrap();
        let b = Tensor::<f64>::init(vec![3, 4], InitScheme::Normal { mean: 0.0, std: 1.0 }, 2).unwrap();
        let s = store_with("a", a);
        let mut tape = Tape::new();
        let av = tape.param(&s, "a").unwrap();
        let bv = tape.constant(b.clone());
        let p = tape.matmul(av, bv).unwrap();
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        // ones(2×4) · bᵀ: every row equals the row sums of b.
        let expected: Vec<f64> = (0..2)
            .flat_map(|_| (0..3).map(|k| b.row(k).iter().sum::<f64>()))
            .collect();
        for (x, y) in g.get("a").unwrap().iter().zip(&expected) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn hadamard_values_and_shape_error() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let ones = tape.constant(Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap());
        let p = tape.hadamard(a, ones).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let y = tape.constant(Tensor::from_rows(&[vec![0.0, 5.0]]).unwrap());
        let p = tape.hadamard(x, y).unwrap();
        assert_eq!(tape.value(p).data(), &[0.0, 10.0]);
        assert!(tape.hadamard(a, x).is_err());
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_rows(&[vec![0.0, 0.0], vec![1000.0, 1000.0]]).unwrap());
        let s = tape.softmax_rows(a);
        assert_eq!(tape.value(s).data(), &[0.5, 0.5, 0.5, 0.5]);
        let b = tape.constant(Tensor::from_rows(&[vec![0.0, 3f64.ln()]]).unwrap());
        let s = tape.softmax_rows(b);
        let v = tape.value(s).data();
        assert!((v[0] - 0.25).abs() < 1e-12 && (v[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::<f64>::new();
        let g = tape.constant(Tensor::vector(vec![1.0, 1.0]).unwrap());
        let b = tape.constant(Tensor::vector(vec![0.0, 0.0]).unwrap());
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 3.0]]).unwrap());
        let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);

        let g3 = tape.constant(Tensor::vector(vec![1.0; 3]).unwrap());
        let b3 = tape.constant(Tensor::vector(vec![0.0; 3]).unwrap());
        let c = tape.constant(Tensor::from_rows(&[vec![5.0, 5.0, 5.0]]).unwrap());
        let y = tape.layer_norm(c, g3, b3, 1e-5).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0]);
        assert!(tape.layer_norm(c, g, b, 1e-5).is_err());
    }

    #[test]
    fn shared_parameter_accumulates_from_every_use() {
        let s = store_with("w", Tensor::vector(vec![2.0]).unwrap());
        let mut tape = Tape::new();
        let w1 = tape.param(&s, "w").unwrap();
        let w2 = tape.param(&s, "w").unwrap();
        assert_eq!(w1, w2);
        let y = tape.add(w1, w2).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get("w").unwrap(), &[2.0]);
    }
}
