//! Reverse-mode differentiation over a dynamically recorded tape.
//!
//! A [`Tape`] is built fresh for each forward pass. Every operation appends a
//! node holding its value and enough context to compute its vector-Jacobian
//! product; [`Tape::backward`] replays the nodes in reverse and accumulates
//! parameter gradients into a [`ParamStore`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{matmul_ex, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// Owns every learnable tensor of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param::new(name, value));
        ParamId(self.params.len() - 1)
    }

    /// Weight matrix drawn uniformly from ±sqrt(6 / (fan_in + fan_out)).
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        let value = Tensor::new(vec![fan_in, fan_out], data).expect("glorot shape");
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn add_ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::ones(shape))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Euclidean norm of all gradients taken together.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        scale: Var,
        shift: Var,
        normalized: Tensor,
        inv_std: Vec<f64>,
    },
    GatherRows(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Sum(Var),
    MaskedMae {
        pred: Var,
        truth: Tensor,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of a scalar with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` if it did not influence the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a).scale(factor);
        self.push(v, Op::Scale(a, factor))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `x · w + b` with `w` of shape `[in, out]` and `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let v = self.value(a).permute(perm)?;
        Ok(self.push(v, Op::Permute(a, perm.to_vec())))
    }

    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let r = self.value(a).rank();
        if r < 2 {
            return Err(Error::contract("transpose_last2 needs rank >= 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).softmax_rows()?;
        Ok(self.push(v, Op::Softmax(a)))
    }

    /// Normalises each last-axis slice to zero mean and unit variance, then
    /// applies `scale` and `shift` (both of length equal to the last axis).
    pub fn layer_norm(&mut self, x: Var, scale: Var, shift: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = *xv
            .shape()
            .last()
            .ok_or_else(|| Error::contract("layer_norm needs rank >= 1"))?;
        for s in [scale, shift] {
            if self.value(s).shape() != [d] {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    lhs: xv.shape().to_vec(),
                    rhs: self.value(s).shape().to_vec(),
                });
            }
        }
        let mut normalized = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.len() / d.max(1));
        for row in normalized.data_mut().chunks_mut(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        let out = normalized
            .mul(self.value(scale))?
            .add(self.value(shift))?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                scale,
                shift,
                normalized,
                inv_std,
            },
        ))
    }

    /// Row selection along axis -2 (indices may repeat).
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let v = self.value(a).gather_rows(index)?;
        Ok(self.push(v, Op::GatherRows(a, index.to_vec())))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat(&tensors, axis)?;
        Ok(self.push(v, Op::Concat(parts.to_vec(), axis)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean absolute error over the points whose truth is nonzero. Masked
    /// points contribute to neither the value nor the gradient; the result is
    /// 0 when every point is masked.
    pub fn masked_mae(&mut self, pred: Var, truth: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != truth.shape() {
            return Err(Error::Dimension {
                op: "masked_mae",
                lhs: p.shape().to_vec(),
                rhs: truth.shape().to_vec(),
            });
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for (&y, &t) in p.data().iter().zip(truth.data()) {
            if t != 0.0 {
                total += (y - t).abs();
                count += 1;
            }
        }
        let value = if count == 0 { 0.0 } else { total / count as f64 };
        Ok(self.push(
            Tensor::scalar(value),
            Op::MaskedMae {
                pred,
                truth: truth.clone(),
                count,
            },
        ))
    }

    /// Gradients of scalar `loss` with respect to every recorded node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Accumulates ∂loss/∂param into every participating parameter's gradient.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                store.get_mut(*id).grad.add_assign(g)?;
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let shape_of = |v: Var| self.value(v).shape().to_vec();
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g.sum_to_shape(&shape_of(*a))?)?;
                accumulate(grads, *b, g.sum_to_shape(&shape_of(*b))?)?;
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.sum_to_shape(&shape_of(*a))?)?;
                accumulate(grads, *b, g.scale(-1.0).sum_to_shape(&shape_of(*b))?)?;
            }
            Op::Mul(a, b) => {
                let ga = g.mul(self.value(*b))?.sum_to_shape(&shape_of(*a))?;
                let gb = g.mul(self.value(*a))?.sum_to_shape(&shape_of(*b))?;
                accumulate(grads, *a, ga)?;
                accumulate(grads, *b, gb)?;
            }
            Op::Scale(a, f) => accumulate(grads, *a, g.scale(*f))?,
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = matmul_ex(g, bv, false, true)?.sum_to_shape(av.shape())?;
                let gb = if bv.rank() == 2 && av.rank() > 2 {
                    // Collapse the batch of a shared right operand into one product.
                    let k = av.shape()[av.rank() - 1];
                    let n = bv.shape()[1];
                    let a2 = av.reshape(&[av.len() / k, k])?;
                    let g2 = g.reshape(&[g.len() / n, n])?;
                    matmul_ex(&a2, &g2, true, false)?
                } else {
                    matmul_ex(av, g, true, false)?.sum_to_shape(bv.shape())?
                };
                accumulate(grads, *a, ga)?;
                accumulate(grads, *b, gb)?;
            }
            Op::Permute(a, perm) => {
                let mut inverse = vec![0; perm.len()];
                for (k, &p) in perm.iter().enumerate() {
                    inverse[p] = k;
                }
                accumulate(grads, *a, g.permute(&inverse)?)?;
            }
            Op::Reshape(a) => accumulate(grads, *a, g.reshape(&shape_of(*a))?)?,
            Op::Relu(a) => {
                let x = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(grads, *a, Tensor::new(x.shape().to_vec(), data)?)?;
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let d = *y.shape().last().unwrap_or(&1);
                let mut out = vec![0.0; y.len()];
                if d > 0 {
                    for ((o, yr), gr) in out
                        .chunks_mut(d)
                        .zip(y.data().chunks(d))
                        .zip(g.data().chunks(d))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((ov, yv), gv) in o.iter_mut().zip(yr).zip(gr) {
                            *ov = yv * (gv - dot);
                        }
                    }
                }
                accumulate(grads, *a, Tensor::new(y.shape().to_vec(), out)?)?;
            }
            Op::LayerNorm {
                x,
                scale,
                shift,
                normalized,
                inv_std,
            } => {
                let d = *normalized.shape().last().unwrap_or(&1);
                let gamma = self.value(*scale).data();
                let mut gx = vec![0.0; normalized.len()];
                let mut g_scale = vec![0.0; d];
                let mut g_shift = vec![0.0; d];
                for (r, ((gxr, xh), gr)) in gx
                    .chunks_mut(d)
                    .zip(normalized.data().chunks(d))
                    .zip(g.data().chunks(d))
                    .enumerate()
                {
                    let mut mean_dxh = 0.0;
                    let mut mean_dxh_xh = 0.0;
                    for j in 0..d {
                        let dxh = gr[j] * gamma[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh[j];
                        g_scale[j] += gr[j] * xh[j];
                        g_shift[j] += gr[j];
                    }
                    mean_dxh /= d as f64;
                    mean_dxh_xh /= d as f64;
                    for j in 0..d {
                        let dxh = gr[j] * gamma[j];
                        gxr[j] = inv_std[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                    }
                }
                accumulate(grads, *x, Tensor::new(normalized.shape().to_vec(), gx)?)?;
                accumulate(grads, *scale, Tensor::new(vec![d], g_scale)?)?;
                accumulate(grads, *shift, Tensor::new(vec![d], g_shift)?)?;
            }
            Op::GatherRows(a, index) => {
                let shape = shape_of(*a);
                let rows = shape[shape.len() - 2];
                accumulate(grads, *a, g.scatter_add_rows(index, rows)?)?;
            }
            Op::Concat(parts, axis) => {
                let mut start = 0;
                for &p in parts {
                    let len = self.value(p).shape()[*axis];
                    accumulate(grads, p, g.narrow(*axis, start, len)?)?;
                    start += len;
                }
            }
            Op::Sum(a) => {
                let gs = g.item()?;
                accumulate(grads, *a, Tensor::full(&shape_of(*a), gs))?;
            }
            Op::MaskedMae { pred, truth, count } => {
                let p = self.value(*pred);
                let scale = if *count == 0 {
                    0.0
                } else {
                    g.item()? / *count as f64
                };
                let data = p
                    .data()
                    .iter()
                    .zip(truth.data())
                    .map(|(&y, &t)| {
                        if t == 0.0 || y == t {
                            0.0
                        } else {
                            scale * (y - t).signum()
                        }
                    })
                    .collect();
                accumulate(grads, *pred, Tensor::new(p.shape().to_vec(), data)?)?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
