//! Tensor operations and their reverse-mode rules.

use super::{strides, Tensor};
use crate::error::{Error, Result};

/// Elementwise nonlinearity kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x >= 0.0 {
                    x
                } else {
                    x.exp() - 1.0
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the forward output. At exactly 0 the
    /// subgradient 0 is used for relu and elu.
    #[inline]
    fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Elu => {
                if y > 0.0 {
                    1.0
                } else if y < 0.0 {
                    y + 1.0
                } else {
                    0.0
                }
            }
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    for (ca, cb) in a.chunks_exact(4).zip(b.chunks_exact(4)) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let tail = a.len() - a.len() % 4;
    let mut s = acc[0] + acc[1] + acc[2] + acc[3];
    for i in tail..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// c[m,n] = a[m,k] · b[k,n]
pub(crate) fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aip * bv;
            }
        }
    }
    c
}

/// c[m,k] = a[m,n] · b[k,n]ᵀ
pub(crate) fn mm_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        let c_row = &mut c[i * k..(i + 1) * k];
        for (j, cv) in c_row.iter_mut().enumerate() {
            *cv = dot(a_row, &b[j * n..(j + 1) * n]);
        }
    }
    c
}

/// c[k,n] = a[m,k]ᵀ · b[m,n]
pub(crate) fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aip * bv;
            }
        }
    }
    c
}

impl Tensor {
    fn same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(Error::Dim(format!("{op}: shapes {a:?} and {b:?} differ")));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        let out: Vec<f64> = {
            let a = self.vals();
            let b = other.vals();
            a.iter().zip(b.iter()).map(|(x, y)| x + y).collect()
        };
        Ok(Tensor::from_op(
            self.shape(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(|_, g| vec![g.to_vec(), g.to_vec()]),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "sub")?;
        let out: Vec<f64> = {
            let a = self.vals();
            let b = other.vals();
            a.iter().zip(b.iter()).map(|(x, y)| x - y).collect()
        };
        Ok(Tensor::from_op(
            self.shape(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(|_, g| vec![g.to_vec(), g.iter().map(|v| -v).collect()]),
        ))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "mul")?;
        let out: Vec<f64> = {
            let a = self.vals();
            let b = other.vals();
            a.iter().zip(b.iter()).map(|(x, y)| x * y).collect()
        };
        let (lhs, rhs) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            self.shape(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |_, g| {
                let da = if lhs.requires_grad() {
                    let b = rhs.vals();
                    g.iter().zip(b.iter()).map(|(gv, bv)| gv * bv).collect()
                } else {
                    Vec::new()
                };
                let db = if rhs.requires_grad() {
                    let a = lhs.vals();
                    g.iter().zip(a.iter()).map(|(gv, av)| gv * av).collect()
                } else {
                    Vec::new()
                };
                vec![da, db]
            }),
        ))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let out: Vec<f64> = self.vals().iter().map(|x| x + c).collect();
        Tensor::from_op(
            self.shape(),
            out,
            vec![self.clone()],
            Box::new(|_, g| vec![g.to_vec()]),
        )
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let out: Vec<f64> = self.vals().iter().map(|x| x * c).collect();
        Tensor::from_op(
            self.shape(),
            out,
            vec![self.clone()],
            Box::new(move |_, g| vec![g.iter().map(|v| v * c).collect()]),
        )
    }

    /// Broadcast-add a length-C vector to every row of a [R, C] matrix.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let shape = self.shape();
        let bshape = bias.shape();
        if shape.len() != 2 || bshape != vec![shape[1]] {
            return Err(Error::Dim(format!(
                "add_row: matrix {shape:?} incompatible with bias {bshape:?}"
            )));
        }
        let (r, c) = (shape[0], shape[1]);
        let out: Vec<f64> = {
            let x = self.vals();
            let b = bias.vals();
            let mut out = Vec::with_capacity(r * c);
            for row in 0..r {
                for col in 0..c {
                    out.push(x[row * c + col] + b[col]);
                }
            }
            out
        };
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone(), bias.clone()],
            Box::new(move |_, g| {
                let mut db = vec![0.0; c];
                for row in 0..r {
                    for col in 0..c {
                        db[col] += g[row * c + col];
                    }
                }
                vec![g.to_vec(), db]
            }),
        ))
    }

    /// Matrix product [m,k]·[k,n] → [m,n].
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let a_shape = self.shape();
        let b_shape = other.shape();
        if a_shape.len() != 2 || b_shape.len() != 2 || a_shape[1] != b_shape[0] {
            return Err(Error::Dim(format!(
                "matmul: {a_shape:?} · {b_shape:?} (inner dimensions must agree)"
            )));
        }
        let (m, k, n) = (a_shape[0], a_shape[1], b_shape[1]);
        let out = {
            let a = self.vals();
            let b = other.vals();
            mm(&a, &b, m, k, n)
        };
        let (lhs, rhs) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |_, g| {
                let da = if lhs.requires_grad() {
                    mm_nt(g, &rhs.vals(), m, n, k)
                } else {
                    Vec::new()
                };
                let db = if rhs.requires_grad() {
                    mm_tn(&lhs.vals(), g, m, k, n)
                } else {
                    Vec::new()
                };
                vec![da, db]
            }),
        ))
    }

    /// Elementwise nonlinearity.
    pub fn activation(&self, kind: Activation) -> Tensor {
        let out: Vec<f64> = self.vals().iter().map(|&x| kind.apply(x)).collect();
        Tensor::from_op(
            self.shape(),
            out,
            vec![self.clone()],
            Box::new(move |out_vals, g| {
                vec![out_vals
                    .iter()
                    .zip(g)
                    .map(|(&y, gv)| kind.deriv_from_output(y) * gv)
                    .collect()]
            }),
        )
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::Arg(format!(
                "softmax: axis {axis} out of range for shape {shape:?}"
            )));
        }
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut out = self.values();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * axis_len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for a in 0..axis_len {
                    max = max.max(out[base + a * inner]);
                }
                let mut total = 0.0;
                for a in 0..axis_len {
                    let idx = base + a * inner;
                    out[idx] = (out[idx] - max).exp();
                    total += out[idx];
                }
                for a in 0..axis_len {
                    out[base + a * inner] /= total;
                }
            }
        }
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone()],
            Box::new(move |out_vals, g| {
                let mut dx = vec![0.0; g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * axis_len * inner + i;
                        let mut inner_dot = 0.0;
                        for a in 0..axis_len {
                            let idx = base + a * inner;
                            inner_dot += g[idx] * out_vals[idx];
                        }
                        for a in 0..axis_len {
                            let idx = base + a * inner;
                            dx[idx] = out_vals[idx] * (g[idx] - inner_dot);
                        }
                    }
                }
                vec![dx]
            }),
        ))
    }

    /// Mean over the batch of −log softmax(logits)[label].
    pub fn cross_entropy_loss(&self, labels: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(Error::Dim(format!(
                "cross_entropy_loss: logits must be [B, C], got {shape:?}"
            )));
        }
        let (b, c) = (shape[0], shape[1]);
        if labels.len() != b {
            return Err(Error::Dim(format!(
                "cross_entropy_loss: {} labels for batch of {b}",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Arg(format!(
                "cross_entropy_loss: label {bad} outside [0, {c})"
            )));
        }
        let loss = {
            let x = self.vals();
            let mut total = 0.0;
            for (row, &label) in labels.iter().enumerate() {
                let logits = &x[row * c..(row + 1) * c];
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - logits[label];
            }
            total / b as f64
        };
        let labels = labels.to_vec();
        let input = self.clone();
        Ok(Tensor::from_op(
            vec![1],
            vec![loss],
            vec![self.clone()],
            Box::new(move |_, g| {
                let scale = g[0] / b as f64;
                let x = input.vals();
                let mut dx = vec![0.0; b * c];
                for (row, &label) in labels.iter().enumerate() {
                    let logits = &x[row * c..(row + 1) * c];
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let total: f64 = logits.iter().map(|v| (v - max).exp()).sum();
                    for col in 0..c {
                        let p = (logits[col] - max).exp() / total;
                        let target = if col == label { 1.0 } else { 0.0 };
                        dx[row * c + col] = scale * (p - target);
                    }
                }
                vec![dx]
            }),
        ))
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self) -> Tensor {
        let total: f64 = self.vals().iter().sum();
        let n = self.len();
        Tensor::from_op(
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |_, g| vec![vec![g[0]; n]]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.len();
        self.sum().mul_scalar(1.0 / n as f64)
    }

    /// Same data, new shape. Element count must match.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != self.len() {
            return Err(Error::Dim(format!(
                "reshape: {:?} (len {}) into {:?} (len {expected})",
                self.shape(),
                self.len(),
                shape
            )));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.values(),
            vec![self.clone()],
            Box::new(|_, g| vec![g.to_vec()]),
        ))
    }

    /// Concatenate same-rank tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Arg("concat: no tensors given".into()));
        }
        let first = parts[0].shape();
        if axis >= first.len() {
            return Err(Error::Arg(format!(
                "concat: axis {axis} out of range for shape {first:?}"
            )));
        }
        let mut axis_total = 0usize;
        for p in parts {
            let s = p.shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::Dim(format!(
                    "concat: shape {s:?} incompatible with {first:?} along axis {axis}"
                )));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * axis_total * inner);
        let part_axis: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        {
            let vals: Vec<_> = parts.iter().map(|p| p.vals()).collect();
            for o in 0..outer {
                for (pv, pa) in vals.iter().zip(&part_axis) {
                    let chunk = pa * inner;
                    out.extend_from_slice(&pv[o * chunk..(o + 1) * chunk]);
                }
            }
        }
        let part_axis_bw = part_axis.clone();
        Ok(Tensor::from_op(
            out_shape,
            out,
            parts.to_vec(),
            Box::new(move |_, g| {
                let mut grads: Vec<Vec<f64>> = part_axis_bw
                    .iter()
                    .map(|pa| Vec::with_capacity(outer * pa * inner))
                    .collect();
                let row_len: usize = part_axis_bw.iter().map(|pa| pa * inner).sum();
                for o in 0..outer {
                    let mut offset = o * row_len;
                    for (dst, pa) in grads.iter_mut().zip(&part_axis_bw) {
                        let chunk = pa * inner;
                        dst.extend_from_slice(&g[offset..offset + chunk]);
                        offset += chunk;
                    }
                }
                grads
            }),
        ))
    }

    /// Select rows of a [R, C] matrix by index (with repetition allowed).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(Error::Dim(format!(
                "gather_rows: expected matrix, got {shape:?}"
            )));
        }
        let (r, c) = (shape[0], shape[1]);
        if let Some(bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::Arg(format!(
                "gather_rows: index {bad} outside [0, {r})"
            )));
        }
        let out = {
            let x = self.vals();
            let mut out = Vec::with_capacity(indices.len() * c);
            for &i in indices {
                out.extend_from_slice(&x[i * c..(i + 1) * c]);
            }
            out
        };
        let idx = indices.to_vec();
        Ok(Tensor::from_op(
            vec![indices.len(), c],
            out,
            vec![self.clone()],
            Box::new(move |_, g| {
                let mut dx = vec![0.0; r * c];
                for (row, &i) in idx.iter().enumerate() {
                    let src = &g[row * c..(row + 1) * c];
                    let dst = &mut dx[i * c..(i + 1) * c];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
                vec![dx]
            }),
        ))
    }

    /// Select elements of the flattened tensor by index, producing a vector.
    pub fn gather_flat(&self, indices: &[usize]) -> Result<Tensor> {
        let n = self.len();
        if let Some(bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Arg(format!(
                "gather_flat: index {bad} outside [0, {n})"
            )));
        }
        let out = {
            let x = self.vals();
            indices.iter().map(|&i| x[i]).collect()
        };
        let idx = indices.to_vec();
        Ok(Tensor::from_op(
            vec![indices.len()],
            out,
            vec![self.clone()],
            Box::new(move |_, g| {
                let mut dx = vec![0.0; n];
                for (pos, &i) in idx.iter().enumerate() {
                    dx[i] += g[pos];
                }
                vec![dx]
            }),
        ))
    }

    /// Sum rows of a [R, C] matrix into `n_groups` buckets. `group_of[r]` names
    /// the bucket of row r; `usize::MAX` drops the row.
    pub fn group_sum_rows(&self, group_of: &[usize], n_groups: usize) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 || group_of.len() != shape[0] {
            return Err(Error::Dim(format!(
                "group_sum_rows: matrix {shape:?} with {} group entries",
                group_of.len()
            )));
        }
        let c = shape[1];
        if let Some(bad) = group_of.iter().find(|&&gi| gi != usize::MAX && gi >= n_groups) {
            return Err(Error::Arg(format!(
                "group_sum_rows: group {bad} outside [0, {n_groups})"
            )));
        }
        let out = {
            let x = self.vals();
            let mut out = vec![0.0; n_groups * c];
            for (row, &gi) in group_of.iter().enumerate() {
                if gi == usize::MAX {
                    continue;
                }
                let src = &x[row * c..(row + 1) * c];
                let dst = &mut out[gi * c..(gi + 1) * c];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            out
        };
        let groups = group_of.to_vec();
        let rows = shape[0];
        Ok(Tensor::from_op(
            vec![n_groups, c],
            out,
            vec![self.clone()],
            Box::new(move |_, g| {
                let mut dx = vec![0.0; rows * c];
                for (row, &gi) in groups.iter().enumerate() {
                    if gi == usize::MAX {
                        continue;
                    }
                    dx[row * c..(row + 1) * c].copy_from_slice(&g[gi * c..(gi + 1) * c]);
                }
                vec![dx]
            }),
        ))
    }

    /// Weighted bucket sum: out[g] = Σ_{r: group_of[r]==g} weights[r] · values[r].
    /// Differentiable in both the row values and the weights.
    pub fn weighted_group_sum(
        &self,
        weights: &Tensor,
        group_of: &[usize],
        n_groups: usize,
    ) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 || group_of.len() != shape[0] {
            return Err(Error::Dim(format!(
                "weighted_group_sum: matrix {shape:?} with {} group entries",
                group_of.len()
            )));
        }
        let (rows, c) = (shape[0], shape[1]);
        if weights.shape() != vec![rows] {
            return Err(Error::Dim(format!(
                "weighted_group_sum: weights {:?} for {rows} rows",
                weights.shape()
            )));
        }
        if let Some(bad) = group_of.iter().find(|&&gi| gi != usize::MAX && gi >= n_groups) {
            return Err(Error::Arg(format!(
                "weighted_group_sum: group {bad} outside [0, {n_groups})"
            )));
        }
        let out = {
            let x = self.vals();
            let w = weights.vals();
            let mut out = vec![0.0; n_groups * c];
            for (row, &gi) in group_of.iter().enumerate() {
                if gi == usize::MAX {
                    continue;
                }
                let wr = w[row];
                if wr == 0.0 {
                    continue;
                }
                let src = &x[row * c..(row + 1) * c];
                let dst = &mut out[gi * c..(gi + 1) * c];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wr * s;
                }
            }
            out
        };
        let groups = group_of.to_vec();
        let (vals_h, weights_h) = (self.clone(), weights.clone());
        Ok(Tensor::from_op(
            vec![n_groups, c],
            out,
            vec![self.clone(), weights.clone()],
            Box::new(move |_, g| {
                let w = weights_h.vals();
                let dv = if vals_h.requires_grad() {
                    let mut dv = vec![0.0; rows * c];
                    for (row, &gi) in groups.iter().enumerate() {
                        if gi == usize::MAX {
                            continue;
                        }
                        let wr = w[row];
                        let src = &g[gi * c..(gi + 1) * c];
                        let dst = &mut dv[row * c..(row + 1) * c];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d = wr * s;
                        }
                    }
                    dv
                } else {
                    Vec::new()
                };
                let dw = if weights_h.requires_grad() {
                    let x = vals_h.vals();
                    let mut dw = vec![0.0; rows];
                    for (row, &gi) in groups.iter().enumerate() {
                        if gi == usize::MAX {
                            continue;
                        }
                        dw[row] = dot(&x[row * c..(row + 1) * c], &g[gi * c..(gi + 1) * c]);
                    }
                    dw
                } else {
                    Vec::new()
                };
                vec![dv, dw]
            }),
        ))
    }

    /// Axis permutation (generalized transpose).
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::Arg(format!(
                "permute: {axes:?} is not a permutation of 0..{rank}"
            )));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let in_strides = strides(&shape);
        let out_strides = strides(&out_shape);
        let n = self.len();
        let mut mapping = vec![0usize; n]; // out offset -> in offset
        for (out_off, slot) in mapping.iter_mut().enumerate() {
            let mut rem = out_off;
            let mut in_off = 0;
            for (d, &os) in out_strides.iter().enumerate() {
                let coord = rem / os;
                rem %= os;
                in_off += coord * in_strides[axes[d]];
            }
            *slot = in_off;
        }
        let out = {
            let x = self.vals();
            mapping.iter().map(|&i| x[i]).collect()
        };
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |_, g| {
                let mut dx = vec![0.0; n];
                for (out_off, &in_off) in mapping.iter().enumerate() {
                    dx[in_off] = g[out_off];
                }
                vec![dx]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn randn(rng: &mut ChaCha20Rng, shape: &[usize], rg: bool) -> Tensor {
        let n: usize = shape.iter().product();
        let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(shape, vals, rg).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let i = Tensor::new(&[2, 2], vec![1., 0., 0., 1.], false).unwrap();
        let b = Tensor::new(&[2, 2], vec![3., 4., 5., 6.], false).unwrap();
        assert_eq!(i.matmul(&b).unwrap().values(), vec![3., 4., 5., 6.]);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Tensor::new(&[1, 2], vec![1., 2.], false).unwrap();
        let b = Tensor::new(&[2, 1], vec![3., 4.], false).unwrap();
        assert_eq!(a.matmul(&b).unwrap().values(), vec![11.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3], false);
        let b = Tensor::zeros(&[2, 3], false);
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "got: {err}");
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let a = randn(&mut rng, &[4, 5], true);
        let b = randn(&mut rng, &[5, 3], true);
        let err = grad_check(
            |inputs| Ok(inputs[0].matmul(&inputs[1])?.sum()),
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn activation_closed_forms() {
        let x = Tensor::new(&[4], vec![0.0, -3.0, 0.0, -1.0], false).unwrap();
        let elu = x.activation(Activation::Elu).values();
        assert_eq!(elu[0], 0.0);
        assert!((elu[3] - ((-1.0f64).exp() - 1.0)).abs() < 1e-12);
        assert_eq!(x.activation(Activation::Relu).values()[1], 0.0);
        let sig = x.activation(Activation::Sigmoid).values();
        assert_eq!(sig[0], 0.5);
    }

    #[test]
    fn activation_gradients_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for kind in [Activation::Elu, Activation::Relu, Activation::Sigmoid] {
            // keep points away from the relu/elu kink at 0
            let vals: Vec<f64> = (0..20)
                .map(|_| {
                    let v: f64 = rng.gen_range(0.05..2.0);
                    if rng.gen_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect();
            let x = Tensor::new(&[20], vals, true).unwrap();
            let err = grad_check(
                move |inputs| Ok(inputs[0].activation(kind).sum()),
                &[x],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "{kind:?}: max rel err {err}");
        }
    }

    #[test]
    fn relu_and_elu_subgradient_zero_at_zero() {
        let x = Tensor::new(&[1], vec![0.0], true).unwrap();
        for kind in [Activation::Relu, Activation::Elu] {
            x.zero_grad();
            x.activation(kind).sum().backward().unwrap();
            assert_eq!(x.grad(), vec![0.0], "{kind:?}");
        }
    }

    #[test]
    fn softmax_uniform_and_stability() {
        let x = Tensor::new(&[3], vec![0.0; 3], false).unwrap();
        for v in x.softmax(0).unwrap().values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let big = Tensor::new(&[3], vec![1000.0, 0.0, 0.0], false).unwrap();
        let s = big.softmax(0).unwrap().values();
        assert!(s.iter().all(|v| v.is_finite()));
        assert!((s[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_sums_to_one_along_axis() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let x = randn(&mut rng, &[2, 5, 3], false);
        for axis in 0..3 {
            let s = x.softmax(axis).unwrap();
            let shape = s.shape();
            let vals = s.values();
            let inner: usize = shape[axis + 1..].iter().product();
            let outer: usize = shape[..axis].iter().product();
            for o in 0..outer {
                for i in 0..inner {
                    let total: f64 = (0..shape[axis])
                        .map(|a| vals[o * shape[axis] * inner + a * inner + i])
                        .sum();
                    assert!((total - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn softmax_jacobian_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let x = randn(&mut rng, &[5], true);
        // random linear functional of the softmax output exercises the full Jacobian
        let w: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let wt = Tensor::new(&[5], w, false).unwrap();
        let err = grad_check(
            move |inputs| inputs[0].softmax(0)?.mul(&wt).map(|t| t.sum()),
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn cross_entropy_uniform_logits_is_log_c() {
        let logits = Tensor::zeros(&[2, 40], false);
        let loss = logits.cross_entropy_loss(&[0, 13]).unwrap().item();
        assert!((loss - (40f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident_correct_is_near_zero() {
        let mut vals = vec![0.0; 4];
        vals[2] = 20.0;
        let logits = Tensor::new(&[1, 4], vals, false).unwrap();
        assert!(logits.cross_entropy_loss(&[2]).unwrap().item() < 1e-6);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        let logits = Tensor::zeros(&[1, 4], false);
        assert!(matches!(
            logits.cross_entropy_loss(&[4]),
            Err(Error::Arg(_))
        ));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let logits = randn(&mut rng, &[3, 4], true);
        let err = grad_check(
            |inputs| inputs[0].cross_entropy_loss(&[1, 0, 3]),
            &[logits],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "max rel err {err}");
    }

    #[test]
    fn concat_and_gather_gradients() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let a = randn(&mut rng, &[3, 2], true);
        let b = randn(&mut rng, &[3, 4], true);
        let err = grad_check(
            |inputs| {
                let cat = Tensor::concat(&[inputs[0].clone(), inputs[1].clone()], 1)?;
                Ok(cat.gather_rows(&[2, 0, 0])?.sum())
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn group_sum_drops_sentinel_rows() {
        let x = Tensor::new(&[3, 2], vec![1., 2., 10., 20., 100., 200.], false).unwrap();
        let out = x
            .group_sum_rows(&[0, usize::MAX, 0], 1)
            .unwrap()
            .values();
        assert_eq!(out, vec![101., 202.]);
    }

    #[test]
    fn weighted_group_sum_gradients() {
        let mut rng = ChaCha20Rng::seed_from_u64(19);
        let v = randn(&mut rng, &[4, 3], true);
        let w = randn(&mut rng, &[4], true);
        let groups = vec![0, 1, usize::MAX, 0];
        let err = grad_check(
            move |inputs| {
                Ok(inputs[0]
                    .weighted_group_sum(&inputs[1], &groups, 2)?
                    .sum())
            },
            &[v, w],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn permute_roundtrip_and_gradient() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let x = randn(&mut rng, &[2, 3, 4], true);
        let p = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), vec![4, 2, 3]);
        let back = p.permute(&[1, 2, 0]).unwrap();
        assert_eq!(back.values(), x.values());
        let err = grad_check(
            |inputs| {
                let t = inputs[0].permute(&[2, 0, 1])?;
                Ok(t.mul(&t)?.sum())
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "max rel err {err}");
    }
}
