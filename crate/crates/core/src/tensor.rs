//! Dense row-major `f64` tensors and the raw kernels the tape builds on.
//!
//! Everything here is value-level: no gradient tracking. Binary elementwise
//! operations follow numpy broadcasting over right-aligned shapes, and
//! `matmul` broadcasts over all leading (batch) dimensions.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Builds a rank-2 tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::contract("ragged rows in from_rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Element at a full multi-index.
    pub fn at(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            debug_assert!(ix < dim, "index {ix} out of range on axis {i}");
            off = off * dim + ix;
        }
        self.data[off]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        zip_broadcast(self, other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        zip_broadcast(self, other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        zip_broadcast(self, other, "mul", |a, b| a * b)
    }

    /// In-place accumulation of a same-shape tensor.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op: "add_assign",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Sums a broadcast result back down to `shape` (the reverse of broadcasting).
    pub fn sum_to_shape(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let mismatch = || Error::Dimension {
            op: "sum_to_shape",
            lhs: self.shape.clone(),
            rhs: shape.to_vec(),
        };
        match broadcast_shape(&self.shape, shape) {
            Some(s) if s == self.shape => {}
            _ => return Err(mismatch()),
        }
        let n: usize = shape.iter().product();
        let mut out = vec![0.0; n];
        if self.shape.ends_with(shape) {
            for chunk in self.data.chunks(n.max(1)) {
                for (o, v) in out.iter_mut().zip(chunk) {
                    *o += v;
                }
            }
        } else {
            let strides = broadcast_strides(shape, &self.shape);
            for_each_offset(&self.shape, &strides, |i, off| out[off] += self.data[i]);
        }
        Tensor::new(shape.to_vec(), out)
    }

    /// Matrix product over the trailing two axes, broadcasting leading axes.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        matmul_ex(self, other, false, false)
    }

    pub fn transpose_last2(&self) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 {
            return Err(Error::contract("transpose_last2 needs rank >= 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::contract(format!(
                "invalid permutation {perm:?} for rank {r}"
            )));
        }
        let in_strides = contiguous_strides(&self.shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        for_each_offset(&out_shape, &strides, |_, off| data.push(self.data[off]));
        Tensor::new(out_shape, data)
    }

    /// Exponentiate-and-normalise along the last axis (max-subtracted).
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let d = *self
            .shape
            .last()
            .ok_or_else(|| Error::contract("softmax_rows needs rank >= 1"))?;
        let mut data = self.data.clone();
        if d > 0 {
            for row in data.chunks_mut(d) {
                softmax_in_place(row);
            }
        }
        Tensor::new(self.shape.clone(), data)
    }

    /// Selects rows along axis -2: output row `r` is input row `index[r]`.
    pub fn gather_rows(&self, index: &[usize]) -> Result<Tensor> {
        let (outer, rows, width) = row_layout(&self.shape, "gather_rows")?;
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::contract(format!(
                "gather_rows index {bad} out of range for {rows} rows"
            )));
        }
        let mut data = Vec::with_capacity(outer * index.len() * width);
        for o in 0..outer {
            let base = o * rows * width;
            for &i in index {
                data.extend_from_slice(&self.data[base + i * width..base + (i + 1) * width]);
            }
        }
        let mut shape = self.shape.clone();
        let r = shape.len();
        shape[r - 2] = index.len();
        Tensor::new(shape, data)
    }

    /// Adjoint of `gather_rows`: accumulates rows of `self` into a tensor with `rows` rows.
    pub fn scatter_add_rows(&self, index: &[usize], rows: usize) -> Result<Tensor> {
        let (outer, n, width) = row_layout(&self.shape, "scatter_add_rows")?;
        if n != index.len() {
            return Err(Error::contract("scatter_add_rows index length mismatch"));
        }
        let mut shape = self.shape.clone();
        let r = shape.len();
        shape[r - 2] = rows;
        let mut out = vec![0.0; outer * rows * width];
        for o in 0..outer {
            for (k, &i) in index.iter().enumerate() {
                let src = &self.data[(o * n + k) * width..(o * n + k + 1) * width];
                let dst = &mut out[(o * rows + i) * width..(o * rows + i + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        Tensor::new(shape, out)
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let r = first.rank();
        if axis >= r {
            return Err(Error::contract(format!("concat axis {axis} >= rank {r}")));
        }
        for p in parts {
            let compatible = p.rank() == r
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total_axis: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total_axis;
        Tensor::new(shape, data)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        if axis >= self.rank() || start + len > self.shape[axis] {
            return Err(Error::contract(format!(
                "narrow axis {axis} [{start}, {}) on shape {:?}",
                start + len,
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let dim = self.shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Tensor::new(shape, data)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn row_layout(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    let r = shape.len();
    if r < 2 {
        return Err(Error::contract(format!("{op} needs rank >= 2")));
    }
    let outer = shape[..r - 2].iter().product();
    Ok((outer, shape[r - 2], shape[r - 1]))
}

pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Result shape of broadcasting `a` against `b`, if compatible.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out` (zero along broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = contiguous_strides(shape);
    let pad = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < pad || shape[i - pad] == 1 && out[i] != 1 {
                0
            } else {
                own[i - pad]
            }
        })
        .collect()
}

/// Walks every multi-index of `shape` in row-major order, passing the linear
/// position and the offset under `strides`.
fn for_each_offset(shape: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let total: usize = shape.iter().product();
    if total == 0 {
        return;
    }
    let r = shape.len();
    let mut idx = vec![0usize; r];
    let mut off = 0usize;
    for i in 0..total {
        f(i, off);
        for d in (0..r).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < shape[d] {
                break;
            }
            off -= strides[d] * shape[d];
            idx[d] = 0;
        }
    }
}

fn zip_broadcast(
    a: &Tensor,
    b: &Tensor,
    op: &'static str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape.clone(), data);
    }
    let out = broadcast_shape(&a.shape, &b.shape).ok_or_else(|| Error::Dimension {
        op,
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    })?;
    if out == a.shape && a.shape.ends_with(&b.shape) && !b.data.is_empty() {
        let data = a
            .data
            .iter()
            .zip(b.data.iter().cycle())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(out, data);
    }
    let sa = broadcast_strides(&a.shape, &out);
    let sb = broadcast_strides(&b.shape, &out);
    let total: usize = out.iter().product();
    let mut data = Vec::with_capacity(total);
    let r = out.len();
    let mut idx = vec![0usize; r];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..total {
        data.push(f(a.data[oa], b.data[ob]));
        for d in (0..r).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
    Tensor::new(out, data)
}

/// Batched matrix product with optional transposition of either operand's
/// trailing two axes. Leading axes broadcast.
pub fn matmul_ex(a: &Tensor, b: &Tensor, trans_a: bool, trans_b: bool) -> Result<Tensor> {
    let mismatch = || Error::Dimension {
        op: "matmul",
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
    };
    if a.rank() < 2 || b.rank() < 2 {
        return Err(mismatch());
    }
    let (ra, rb) = (a.rank(), b.rank());
    let (a0, a1) = (a.shape[ra - 2], a.shape[ra - 1]);
    let (b0, b1) = (b.shape[rb - 2], b.shape[rb - 1]);
    let (m, k) = if trans_a { (a1, a0) } else { (a0, a1) };
    let (k2, n) = if trans_b { (b1, b0) } else { (b0, b1) };
    if k != k2 {
        return Err(mismatch());
    }
    let lead_a = &a.shape[..ra - 2];
    let lead_b = &b.shape[..rb - 2];
    let lead = broadcast_shape(lead_a, lead_b).ok_or_else(mismatch)?;
    let sa = broadcast_strides(lead_a, &lead);
    let sb = broadcast_strides(lead_b, &lead);
    let (size_a, size_b, size_c) = (m * k, k * n, m * n);
    let batches: usize = lead.iter().product();
    let mut out = vec![0.0; batches * size_c];

    let mut offsets = Vec::with_capacity(batches);
    if lead.is_empty() {
        offsets.push((0, 0));
    } else {
        let mut offs_a = Vec::with_capacity(batches);
        for_each_offset(&lead, &sa, |_, off| offs_a.push(off));
        let mut i = 0;
        for_each_offset(&lead, &sb, |_, off| {
            offsets.push((offs_a[i], off));
            i += 1;
        });
    }
    for (bi, &(oa, ob)) in offsets.iter().enumerate() {
        gemm(
            &a.data[oa * size_a..(oa + 1) * size_a],
            &b.data[ob * size_b..(ob + 1) * size_b],
            &mut out[bi * size_c..(bi + 1) * size_c],
            (m, k, n),
            trans_a,
            trans_b,
        );
    }
    let mut shape = lead;
    shape.push(m);
    shape.push(n);
    Tensor::new(shape, out)
}

/// `c += op(a) * op(b)` for one matrix pair, `op` being optional transposition.
fn gemm(a: &[f64], b: &[f64], c: &mut [f64], dims: (usize, usize, usize), ta: bool, tb: bool) {
    let (m, k, n) = dims;
    match (ta, tb) {
        (false, false) => {
            for i in 0..m {
                let c_row = &mut c[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = a[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    for (cv, bv) in c_row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                        *cv += aip * bv;
                    }
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let a_row = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    let b_row = &b[j * k..(j + 1) * k];
                    c[i * n + j] += a_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
                }
            }
        }
        (true, false) => {
            for p in 0..k {
                let b_row = &b[p * n..(p + 1) * n];
                for i in 0..m {
                    let api = a[p * m + i];
                    if api == 0.0 {
                        continue;
                    }
                    for (cv, bv) in c[i * n..(i + 1) * n].iter_mut().zip(b_row) {
                        *cv += api * bv;
                    }
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut s = 0.0;
                    for p in 0..k {
                        s += a[p * m + i] * b[j * k + p];
                    }
                    c[i * n + j] += s;
                }
            }
        }
    }
}
