//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! Every operation appends one node whose inputs are strictly earlier
//! nodes, so replaying the tape back to front is a valid topological
//! order. Values are immutable once recorded.

use std::collections::BTreeMap;

use super::kernels::{matmul_nn, matmul_nt, matmul_tn};
use super::{Mask, NumericsError, ParamSet, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Transpose { a: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddBias { a: Var, bias: Var },
    Scale { a: Var, factor: f64 },
    Relu { a: Var },
    Softmax { a: Var },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat { a: Var, b: Var },
    Reshape { a: Var },
    Permute { a: Var, axes: Vec<usize> },
    RepeatAxis { a: Var, axis: usize },
    Sum { a: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of executed operations. One graph per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

fn dim_err(op: &'static str, a: &[usize], b: &[usize]) -> NumericsError {
    NumericsError::Dimension {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn grad_flag(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a differentiable leaf that is not tied to a named parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds parameter `name` from `params`; repeated calls return the same node.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var, NumericsError> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = params
            .get(name)
            .ok_or_else(|| NumericsError::MissingParameter(name.to_string()))?
            .clone();
        let v = self.push(value, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// `a [.., M, K] x b [.., K, N]`. `b` may also be a shared rank-2 matrix.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(dim_err("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let batch_a = &sa[..sa.len() - 2];
        let batch_b = &sb[..sb.len() - 2];
        if k != k2 || !(batch_b.is_empty() || batch_a == batch_b) {
            return Err(dim_err("matmul", &sa, &sb));
        }
        let groups: usize = batch_a.iter().product();
        let shared = batch_b.is_empty();
        let mut out = vec![0.0; groups * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for g in 0..groups {
                let bo = if shared { 0 } else { g * k * n };
                matmul_nn(
                    &av[g * m * k..(g + 1) * m * k],
                    &bv[bo..bo + k * n],
                    &mut out[g * m * n..(g + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let mut shape = batch_a.to_vec();
        shape.extend([m, n]);
        let rg = self.grad_flag(a) || self.grad_flag(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b }, rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(dim_err("transpose", &s, &[]));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let value = transpose_last2(self.value(a).data(), r, c);
        let mut shape = s.clone();
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        let rg = self.grad_flag(a);
        Ok(self.push(Tensor::new(shape, value)?, Op::Transpose { a }, rg))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, bool), NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(name, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.grad_flag(a) || self.grad_flag(b);
        Ok((Tensor::new(ta.shape().to_vec(), data)?, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (t, rg) = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (t, rg) = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub { a, b }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (t, rg) = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul { a, b }, rg))
    }

    /// Adds `bias [D]` to every row of `a [.., D]`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rank() != 1 || ta.rank() == 0 || ta.last_dim() != tb.len() {
            return Err(dim_err("add_bias", ta.shape(), tb.shape()));
        }
        let d = tb.len();
        let mut data = ta.data().to_vec();
        if d > 0 {
            for row in data.chunks_mut(d) {
                for (x, b) in row.iter_mut().zip(tb.data()) {
                    *x += b;
                }
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.grad_flag(a) || self.grad_flag(bias);
        Ok(self.push(t, Op::AddBias { a, bias }, rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * factor).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.grad_flag(a);
        Ok(self.push(t, Op::Scale { a, factor }, rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| x.max(0.0)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.grad_flag(a);
        Ok(self.push(t, Op::Relu { a }, rg))
    }

    /// Softmax along the last axis. Masked-out entries get weight exactly 0.
    ///
    /// A row with no unmasked entry is an error unless `allow_empty`, in
    /// which case the row is all zeros.
    pub fn softmax_rows(
        &mut self,
        logits: Var,
        mask: Option<&Mask>,
        allow_empty: bool,
    ) -> Result<Var, NumericsError> {
        let t = self.value(logits);
        if let Some(m) = mask {
            if m.shape() != t.shape() {
                return Err(dim_err("softmax_rows", t.shape(), m.shape()));
            }
        }
        let d = t.last_dim();
        let rows = if d == 0 { 0 } else { t.len() / d };
        let mut out = vec![0.0; t.len()];
        for r in 0..rows {
            let z = &t.data()[r * d..(r + 1) * d];
            let valid = |j: usize| mask.map_or(true, |m| m.data()[r * d + j]);
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in z.iter().enumerate() {
                if valid(j) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                if allow_empty {
                    continue;
                }
                return Err(NumericsError::EmptyRow { row: r });
            }
            let y = &mut out[r * d..(r + 1) * d];
            let mut total = 0.0;
            for j in 0..d {
                if valid(j) {
                    let e = (z[j] - max).exp();
                    y[j] = e;
                    total += e;
                }
            }
            for v in y.iter_mut() {
                *v /= total;
            }
        }
        if d == 0 && !allow_empty {
            let lead: usize = t.shape()[..t.rank().saturating_sub(1)].iter().product();
            if lead > 0 {
                return Err(NumericsError::EmptyRow { row: 0 });
            }
        }
        let t = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.grad_flag(logits);
        Ok(self.push(t, Op::Softmax { a: logits }, rg))
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gain` and `bias`.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, NumericsError> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let d = tx.last_dim();
        if tx.rank() == 0 || d == 0 || tg.shape() != [d] || tb.shape() != [d] {
            return Err(dim_err("layer_norm", tx.shape(), tg.shape()));
        }
        let rows = tx.len() / d;
        let mut normalized = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let row = &tx.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            inv_std[r] = rstd;
            for j in 0..d {
                let xh = (row[j] - mean) * rstd;
                normalized[r * d + j] = xh;
                out[r * d + j] = xh * tg.data()[j] + tb.data()[j];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.grad_flag(x) || self.grad_flag(gain) || self.grad_flag(bias);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    /// Concatenates along the last axis; leading shapes must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ra, rb) = (ta.rank(), tb.rank());
        if ra == 0 || ra != rb || ta.shape()[..ra - 1] != tb.shape()[..rb - 1] {
            return Err(dim_err("concat_last", ta.shape(), tb.shape()));
        }
        let (p, q) = (ta.last_dim(), tb.last_dim());
        let rows: usize = ta.shape()[..ra - 1].iter().product();
        let mut data = Vec::with_capacity(rows * (p + q));
        for r in 0..rows {
            data.extend_from_slice(&ta.data()[r * p..(r + 1) * p]);
            data.extend_from_slice(&tb.data()[r * q..(r + 1) * q]);
        }
        let mut shape = ta.shape().to_vec();
        shape[ra - 1] = p + q;
        let t = Tensor::new(shape, data)?;
        let rg = self.grad_flag(a) || self.grad_flag(b);
        Ok(self.push(t, Op::Concat { a, b }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        if shape.iter().product::<usize>() != ta.len() {
            return Err(dim_err("reshape", ta.shape(), shape));
        }
        let t = ta.reshaped(shape)?;
        let rg = self.grad_flag(a);
        Ok(self.push(t, Op::Reshape { a }, rg))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let mut seen = vec![false; ta.rank()];
        if axes.len() != ta.rank() {
            return Err(dim_err("permute", ta.shape(), axes));
        }
        for &ax in axes {
            if ax >= ta.rank() || seen[ax] {
                return Err(dim_err("permute", ta.shape(), axes));
            }
            seen[ax] = true;
        }
        let (shape, data) = permute_data(ta.shape(), ta.data(), axes);
        let t = Tensor::new(shape, data)?;
        let rg = self.grad_flag(a);
        Ok(self.push(
            t,
            Op::Permute {
                a,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    /// Tiles a size-1 axis `times` times.
    pub fn repeat_axis(&mut self, a: Var, axis: usize, times: usize) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        if axis >= ta.rank() || ta.shape()[axis] != 1 {
            return Err(dim_err("repeat_axis", ta.shape(), &[axis, times]));
        }
        let outer: usize = ta.shape()[..axis].iter().product();
        let inner: usize = ta.shape()[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * times * inner);
        for o in 0..outer {
            let chunk = &ta.data()[o * inner..(o + 1) * inner];
            for _ in 0..times {
                data.extend_from_slice(chunk);
            }
        }
        let mut shape = ta.shape().to_vec();
        shape[axis] = times;
        let t = Tensor::new(shape, data)?;
        let rg = self.grad_flag(a);
        Ok(self.push(t, Op::RepeatAxis { a, axis }, rg))
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.value(a).sum();
        let rg = self.grad_flag(a);
        Ok(self.push(Tensor::scalar(s), Op::Sum { a }, rg))
    }

    /// Gradients of scalar `loss` with respect to every node on the tape.
    fn gradients(&self, loss: Var) -> Result<Vec<Option<Tensor>>, NumericsError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(NumericsError::NonScalarLoss {
                shape: lt.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.backprop(node, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Ok(grads)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.grad_flag(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop(&self, node: &Node, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let shape_of = |v: Var| self.shape(v).to_vec();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (sa, sb) = (shape_of(*a), shape_of(*b));
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = sb[sb.len() - 1];
                let groups: usize = sa[..sa.len() - 2].iter().product();
                let shared = sb.len() == 2;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.grad_flag(*a) {
                    let mut da = vec![0.0; groups * m * k];
                    for g in 0..groups {
                        let bo = if shared { 0 } else { g * k * n };
                        matmul_nt(
                            &gy.data()[g * m * n..(g + 1) * m * n],
                            &bv[bo..bo + k * n],
                            &mut da[g * m * k..(g + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    self.accumulate(grads, *a, Tensor::new(sa, da).expect("shape"));
                }
                if self.grad_flag(*b) {
                    let mut db = vec![0.0; self.value(*b).len()];
                    for g in 0..groups {
                        let bo = if shared { 0 } else { g * k * n };
                        matmul_tn(
                            &av[g * m * k..(g + 1) * m * k],
                            &gy.data()[g * m * n..(g + 1) * m * n],
                            &mut db[bo..bo + k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    self.accumulate(grads, *b, Tensor::new(sb, db).expect("shape"));
                }
            }
            Op::Transpose { a } => {
                let s = gy.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let data = transpose_last2(gy.data(), r, c);
                self.accumulate(grads, *a, Tensor::new(shape_of(*a), data).expect("shape"));
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, gy.clone());
                self.accumulate(grads, *b, gy.clone());
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, gy.clone());
                let neg = gy.data().iter().map(|g| -g).collect();
                self.accumulate(grads, *b, Tensor::new(gy.shape().to_vec(), neg).expect("shape"));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.grad_flag(*a) {
                    let d = gy.data().iter().zip(bv).map(|(g, y)| g * y).collect();
                    self.accumulate(grads, *a, Tensor::new(gy.shape().to_vec(), d).expect("shape"));
                }
                if self.grad_flag(*b) {
                    let d = gy.data().iter().zip(av).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, *b, Tensor::new(gy.shape().to_vec(), d).expect("shape"));
                }
            }
            Op::AddBias { a, bias } => {
                self.accumulate(grads, *a, gy.clone());
                if self.grad_flag(*bias) {
                    let d = self.value(*bias).len();
                    let mut db = vec![0.0; d];
                    if d > 0 {
                        for row in gy.data().chunks(d) {
                            for (acc, g) in db.iter_mut().zip(row) {
                                *acc += g;
                            }
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::vector(db));
                }
            }
            Op::Scale { a, factor } => {
                let d = gy.data().iter().map(|g| g * factor).collect();
                self.accumulate(grads, *a, Tensor::new(gy.shape().to_vec(), d).expect("shape"));
            }
            Op::Relu { a } => {
                let x = self.value(*a).data();
                let d = gy
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(gy.shape().to_vec(), d).expect("shape"));
            }
            Op::Softmax { a } => {
                let y = node.value.data();
                let d = node.value.last_dim();
                let mut dz = vec![0.0; y.len()];
                if d > 0 {
                    for ((yr, gr), zr) in y.chunks(d).zip(gy.data().chunks(d)).zip(dz.chunks_mut(d)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for j in 0..d {
                            zr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(gy.shape().to_vec(), dz).expect("shape"));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let g = self.value(*gain).data();
                let d = g.len();
                let rows = inv_std.len();
                let mut dx = vec![0.0; rows * d];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for r in 0..rows {
                    let gr = &gy.data()[r * d..(r + 1) * d];
                    let xh = &normalized[r * d..(r + 1) * d];
                    let mut mean_dxh = 0.0;
                    let mut mean_dxh_xh = 0.0;
                    for j in 0..d {
                        let dxh = gr[j] * g[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh[j];
                        dgain[j] += gr[j] * xh[j];
                        dbias[j] += gr[j];
                    }
                    mean_dxh /= d as f64;
                    mean_dxh_xh /= d as f64;
                    for j in 0..d {
                        let dxh = gr[j] * g[j];
                        dx[r * d + j] = inv_std[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(shape_of(*x), dx).expect("shape"));
                self.accumulate(grads, *gain, Tensor::vector(dgain));
                self.accumulate(grads, *bias, Tensor::vector(dbias));
            }
            Op::Concat { a, b } => {
                let (sa, sb) = (shape_of(*a), shape_of(*b));
                let (p, q) = (sa[sa.len() - 1], sb[sb.len() - 1]);
                let rows: usize = sa[..sa.len() - 1].iter().product();
                let mut da = Vec::with_capacity(rows * p);
                let mut db = Vec::with_capacity(rows * q);
                for r in 0..rows {
                    let row = &gy.data()[r * (p + q)..(r + 1) * (p + q)];
                    da.extend_from_slice(&row[..p]);
                    db.extend_from_slice(&row[p..]);
                }
                self.accumulate(grads, *a, Tensor::new(sa, da).expect("shape"));
                self.accumulate(grads, *b, Tensor::new(sb, db).expect("shape"));
            }
            Op::Reshape { a } => {
                self.accumulate(grads, *a, gy.reshaped(&shape_of(*a)).expect("shape"));
            }
            Op::Permute { a, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inverse[ax] = i;
                }
                let (shape, data) = permute_data(gy.shape(), gy.data(), &inverse);
                self.accumulate(grads, *a, Tensor::new(shape, data).expect("shape"));
            }
            Op::RepeatAxis { a, axis } => {
                let s = gy.shape();
                let times = s[*axis];
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[*axis + 1..].iter().product();
                let mut da = vec![0.0; outer * inner];
                for o in 0..outer {
                    for t in 0..times {
                        let src = &gy.data()[(o * times + t) * inner..(o * times + t + 1) * inner];
                        for (acc, g) in da[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *acc += g;
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(shape_of(*a), da).expect("shape"));
            }
            Op::Sum { a } => {
                let g = gy.data()[0];
                self.accumulate(grads, *a, Tensor::full(&shape_of(*a), g));
            }
        }
    }

    /// Gradient of `loss` for every parameter in `params`. Parameters that
    /// were never bound on this tape, or do not reach `loss`, get zeros.
    pub fn backward(
        &self,
        loss: Var,
        params: &ParamSet,
    ) -> Result<BTreeMap<String, Tensor>, NumericsError> {
        let mut grads = self.gradients(loss)?;
        let mut out = BTreeMap::new();
        for (name, value) in params.iter() {
            let g = self
                .params
                .get(name)
                .and_then(|v| grads[v.0].take())
                .unwrap_or_else(|| Tensor::zeros(value.shape()));
            out.insert(name.to_string(), g);
        }
        Ok(out)
    }

    /// Gradient of `loss` with respect to an arbitrary recorded node.
    pub fn grad_of(&self, loss: Var, wrt: Var) -> Result<Tensor, NumericsError> {
        let mut grads = self.gradients(loss)?;
        Ok(grads[wrt.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shape(wrt))))
    }
}

fn transpose_last2(data: &[f64], r: usize, c: usize) -> Vec<f64> {
    let block = r * c;
    let mut out = vec![0.0; data.len()];
    if block == 0 {
        return out;
    }
    for (src, dst) in data.chunks(block).zip(out.chunks_mut(block)) {
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    out
}

fn permute_data(shape: &[usize], data: &[f64], axes: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let rank = shape.len();
    let mut strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let out_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    if data.is_empty() {
        return (out_shape, out);
    }
    let mut idx = vec![0; rank];
    for _ in 0..data.len() {
        let off: usize = idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum();
        out.push(data[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}
