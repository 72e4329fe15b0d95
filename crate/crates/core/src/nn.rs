//! Composite layers: fully-connected blocks with optional batch
//! normalization, dilated 1-D convolution, and max pooling.

use crate::error::{Error, Result};
use crate::tensor::{Activation, Tensor};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use std::cell::RefCell;

/// Forward-pass mode. Train mode uses batch statistics and updates running
/// stats; eval mode reads running stats only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Affine layer: weights are uniform(±1/√fan_in), biases zero.
pub struct Linear {
    pub weight: Tensor, // [in, out]
    pub bias: Tensor,   // [out]
}

impl Linear {
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut ChaCha20Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Linear {
            weight: Tensor::new(&[fan_in, fan_out], w, true).expect("linear weight"),
            bias: Tensor::zeros(&[fan_out], true),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add_row(&self.bias)
    }
}

/// Per-feature scale/shift with running statistics.
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: RefCell<Vec<f64>>,
    pub running_var: RefCell<Vec<f64>>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        BatchNorm {
            gamma: Tensor::new(&[features], vec![1.0; features], true).expect("gamma"),
            beta: Tensor::zeros(&[features], true),
            running_mean: RefCell::new(vec![0.0; features]),
            running_var: RefCell::new(vec![1.0; features]),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    /// Normalize a [B, F] batch. Train mode needs B ≥ 2.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let shape = x.shape();
        let f = self.features();
        if shape.len() != 2 || shape[1] != f {
            return Err(Error::Dim(format!(
                "batchnorm: input {shape:?} for {f} features"
            )));
        }
        let rows = shape[0];
        match mode {
            Mode::Train => {
                if rows < 2 {
                    return Err(Error::Contract(
                        "batchnorm: train mode requires a batch of at least 2".into(),
                    ));
                }
                let (mean, var) = {
                    let xv = x.vals();
                    let mut mean = vec![0.0; f];
                    for r in 0..rows {
                        for (m, v) in mean.iter_mut().zip(&xv[r * f..(r + 1) * f]) {
                            *m += v;
                        }
                    }
                    mean.iter_mut().for_each(|m| *m /= rows as f64);
                    let mut var = vec![0.0; f];
                    for r in 0..rows {
                        for c in 0..f {
                            let d = xv[r * f + c] - mean[c];
                            var[c] += d * d;
                        }
                    }
                    var.iter_mut().for_each(|v| *v /= rows as f64);
                    (mean, var)
                };
                {
                    // running stats keep the unbiased variance
                    let unbias = rows as f64 / (rows as f64 - 1.0);
                    let mut rm = self.running_mean.borrow_mut();
                    let mut rv = self.running_var.borrow_mut();
                    for c in 0..f {
                        rm[c] = (1.0 - self.momentum) * rm[c] + self.momentum * mean[c];
                        rv[c] = (1.0 - self.momentum) * rv[c] + self.momentum * var[c] * unbias;
                    }
                }
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
                let out = {
                    let xv = x.vals();
                    let gv = self.gamma.vals();
                    let bv = self.beta.vals();
                    let mut out = vec![0.0; rows * f];
                    for r in 0..rows {
                        for c in 0..f {
                            let xhat = (xv[r * f + c] - mean[c]) * inv_std[c];
                            out[r * f + c] = gv[c] * xhat + bv[c];
                        }
                    }
                    out
                };
                let (xh, gh) = (x.clone(), self.gamma.clone());
                let (mean_bw, inv_std_bw) = (mean, inv_std);
                Ok(Tensor::from_op(
                    vec![rows, f],
                    out,
                    vec![x.clone(), self.gamma.clone(), self.beta.clone()],
                    Box::new(move |_, g| {
                        let xv = xh.vals();
                        let gv = gh.vals();
                        let mut dbeta = vec![0.0; f];
                        let mut dgamma = vec![0.0; f];
                        let mut g_mean = vec![0.0; f];
                        let mut gxhat_mean = vec![0.0; f];
                        for r in 0..rows {
                            for c in 0..f {
                                let idx = r * f + c;
                                let xhat = (xv[idx] - mean_bw[c]) * inv_std_bw[c];
                                dbeta[c] += g[idx];
                                dgamma[c] += g[idx] * xhat;
                                g_mean[c] += g[idx];
                                gxhat_mean[c] += g[idx] * xhat;
                            }
                        }
                        let inv_rows = 1.0 / rows as f64;
                        g_mean.iter_mut().for_each(|v| *v *= inv_rows);
                        gxhat_mean.iter_mut().for_each(|v| *v *= inv_rows);
                        let mut dx = vec![0.0; rows * f];
                        for r in 0..rows {
                            for c in 0..f {
                                let idx = r * f + c;
                                let xhat = (xv[idx] - mean_bw[c]) * inv_std_bw[c];
                                dx[idx] = gv[c]
                                    * inv_std_bw[c]
                                    * (g[idx] - g_mean[c] - xhat * gxhat_mean[c]);
                            }
                        }
                        vec![dx, dgamma, dbeta]
                    }),
                ))
            }
            Mode::Eval => {
                let rm = self.running_mean.borrow().clone();
                let inv_std: Vec<f64> = self
                    .running_var
                    .borrow()
                    .iter()
                    .map(|v| 1.0 / (v + self.eps).sqrt())
                    .collect();
                let out = {
                    let xv = x.vals();
                    let gv = self.gamma.vals();
                    let bv = self.beta.vals();
                    let mut out = vec![0.0; rows * f];
                    for r in 0..rows {
                        for c in 0..f {
                            let xhat = (xv[r * f + c] - rm[c]) * inv_std[c];
                            out[r * f + c] = gv[c] * xhat + bv[c];
                        }
                    }
                    out
                };
                let (xh, gh) = (x.clone(), self.gamma.clone());
                Ok(Tensor::from_op(
                    vec![rows, f],
                    out,
                    vec![x.clone(), self.gamma.clone(), self.beta.clone()],
                    Box::new(move |_, g| {
                        let xv = xh.vals();
                        let gv = gh.vals();
                        let mut dx = vec![0.0; rows * f];
                        let mut dgamma = vec![0.0; f];
                        let mut dbeta = vec![0.0; f];
                        for r in 0..rows {
                            for c in 0..f {
                                let idx = r * f + c;
                                let xhat = (xv[idx] - rm[c]) * inv_std[c];
                                dx[idx] = g[idx] * gv[c] * inv_std[c];
                                dgamma[c] += g[idx] * xhat;
                                dbeta[c] += g[idx];
                            }
                        }
                        vec![dx, dgamma, dbeta]
                    }),
                ))
            }
        }
    }
}

/// Layer widths plus activation/normalization layout of a fully-connected
/// block.
#[derive(Debug, Clone)]
pub struct MlpSpec {
    /// input width, hidden widths..., output width
    pub widths: Vec<usize>,
    pub activation: Activation,
    /// one flag per affine layer
    pub batchnorm: Vec<bool>,
    /// apply the activation after the final affine layer
    pub activate_last: bool,
}

impl MlpSpec {
    /// Two-layer block `in → hidden → out` with the activation on every layer
    /// and batch normalization on the output layer only.
    pub fn two_layer(input: usize, hidden: usize, output: usize, activation: Activation) -> Self {
        MlpSpec {
            widths: vec![input, hidden, output],
            activation,
            batchnorm: vec![false, true],
            activate_last: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Arg("mlp: need at least input and output widths".into()));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Arg(format!("mlp: zero width in {:?}", self.widths)));
        }
        if self.batchnorm.len() != self.widths.len() - 1 {
            return Err(Error::Arg(format!(
                "mlp: {} batchnorm flags for {} layers",
                self.batchnorm.len(),
                self.widths.len() - 1
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

/// Fully-connected block assembled from an [`MlpSpec`].
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
    pub norms: Vec<Option<BatchNorm>>,
}

impl Mlp {
    pub fn new(spec: MlpSpec, rng: &mut ChaCha20Rng) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        for i in 0..spec.widths.len() - 1 {
            layers.push(Linear::new(spec.widths[i], spec.widths[i + 1], rng));
            norms.push(if spec.batchnorm[i] {
                Some(BatchNorm::new(spec.widths[i + 1]))
            } else {
                None
            });
        }
        Ok(Mlp { spec, layers, norms })
    }

    /// Affine → activation → batchnorm per layer, as configured.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.spec.input_width() {
            return Err(Error::Dim(format!(
                "mlp: input {shape:?}, expected [B, {}]",
                self.spec.input_width()
            )));
        }
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i < last || self.spec.activate_last {
                h = h.activation(self.spec.activation);
            }
            if let Some(norm) = &self.norms[i] {
                h = norm.forward(&h, mode)?;
            }
        }
        Ok(h)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.l{i}.weight"), layer.weight.clone()));
            out.push((format!("{prefix}.l{i}.bias"), layer.bias.clone()));
            if let Some(norm) = &self.norms[i] {
                out.push((format!("{prefix}.l{i}.gamma"), norm.gamma.clone()));
                out.push((format!("{prefix}.l{i}.beta"), norm.beta.clone()));
            }
        }
    }

    pub fn collect_buffers(&self, prefix: &str, out: &mut Vec<(String, Vec<usize>, Vec<f64>)>) {
        for (i, norm) in self.norms.iter().enumerate() {
            if let Some(norm) = norm {
                out.push((
                    format!("{prefix}.l{i}.running_mean"),
                    vec![norm.features()],
                    norm.running_mean.borrow().clone(),
                ));
                out.push((
                    format!("{prefix}.l{i}.running_var"),
                    vec![norm.features()],
                    norm.running_var.borrow().clone(),
                ));
            }
        }
    }

    pub fn load_buffer(&self, name: &str, values: &[f64]) -> bool {
        for (i, norm) in self.norms.iter().enumerate() {
            if let Some(norm) = norm {
                if name == format!("l{i}.running_mean") {
                    norm.running_mean.borrow_mut().copy_from_slice(values);
                    return true;
                }
                if name == format!("l{i}.running_var") {
                    norm.running_var.borrow_mut().copy_from_slice(values);
                    return true;
                }
            }
        }
        false
    }
}

/// Dilated 1-D convolution with kernel size 3 and symmetric zero padding,
/// preserving sequence length. Input [S, C_in, L], kernels [C_out, C_in, 3],
/// bias [C_out] → [S, C_out, L]. Requires L > 2·dilation.
pub fn conv1d_dilated(
    x: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    dilation: usize,
) -> Result<Tensor> {
    let xs = x.shape();
    let ks = kernels.shape();
    if xs.len() != 3 || ks.len() != 3 || ks[2] != 3 || xs[1] != ks[1] {
        return Err(Error::Dim(format!(
            "conv1d_dilated: input {xs:?} with kernels {ks:?} (want [S,C_in,L] and [C_out,C_in,3])"
        )));
    }
    let (s, c_in, l) = (xs[0], xs[1], xs[2]);
    let c_out = ks[0];
    if bias.shape() != vec![c_out] {
        return Err(Error::Dim(format!(
            "conv1d_dilated: bias {:?} for {c_out} output channels",
            bias.shape()
        )));
    }
    if l <= 2 * dilation {
        return Err(Error::Dim(format!(
            "conv1d_dilated: length {l} too short for dilation {dilation} (need L > 2d)"
        )));
    }
    let out = {
        let xv = x.vals();
        let kv = kernels.vals();
        let bv = bias.vals();
        let mut out = vec![0.0; s * c_out * l];
        for si in 0..s {
            for co in 0..c_out {
                let out_row = &mut out[(si * c_out + co) * l..(si * c_out + co + 1) * l];
                out_row.iter_mut().for_each(|v| *v = bv[co]);
                for ci in 0..c_in {
                    let x_row = &xv[(si * c_in + ci) * l..(si * c_in + ci + 1) * l];
                    for tap in 0..3 {
                        let k = kv[(co * c_in + ci) * 3 + tap];
                        if k == 0.0 {
                            continue;
                        }
                        let offset = (tap as isize - 1) * dilation as isize;
                        let (t0, t1) = valid_range(l, offset);
                        for t in t0..t1 {
                            out_row[t] += k * x_row[(t as isize + offset) as usize];
                        }
                    }
                }
            }
        }
        out
    };
    let (xh, kh, bh) = (x.clone(), kernels.clone(), bias.clone());
    Ok(Tensor::from_op(
        vec![s, c_out, l],
        out,
        vec![x.clone(), kernels.clone(), bias.clone()],
        Box::new(move |_, g| {
            let kv = kh.vals();
            let dx = if xh.requires_grad() {
                let mut dx = vec![0.0; s * c_in * l];
                for si in 0..s {
                    for ci in 0..c_in {
                        let dx_row = &mut dx[(si * c_in + ci) * l..(si * c_in + ci + 1) * l];
                        for co in 0..c_out {
                            let g_row = &g[(si * c_out + co) * l..(si * c_out + co + 1) * l];
                            for tap in 0..3 {
                                let k = kv[(co * c_in + ci) * 3 + tap];
                                if k == 0.0 {
                                    continue;
                                }
                                // out[t] consumed x[t + offset] ⇒ dx[p] += k·g[p − offset]
                                let offset = (tap as isize - 1) * dilation as isize;
                                let (t0, t1) = valid_range(l, -offset);
                                for p in t0..t1 {
                                    dx_row[p] += k * g_row[(p as isize - offset) as usize];
                                }
                            }
                        }
                    }
                }
                dx
            } else {
                Vec::new()
            };
            let dk = if kh.requires_grad() {
                let xv = xh.vals();
                let mut dk = vec![0.0; c_out * c_in * 3];
                for si in 0..s {
                    for co in 0..c_out {
                        let g_row = &g[(si * c_out + co) * l..(si * c_out + co + 1) * l];
                        for ci in 0..c_in {
                            let x_row = &xv[(si * c_in + ci) * l..(si * c_in + ci + 1) * l];
                            for tap in 0..3 {
                                let offset = (tap as isize - 1) * dilation as isize;
                                let (t0, t1) = valid_range(l, offset);
                                let mut acc = 0.0;
                                for t in t0..t1 {
                                    acc += g_row[t] * x_row[(t as isize + offset) as usize];
                                }
                                dk[(co * c_in + ci) * 3 + tap] += acc;
                            }
                        }
                    }
                }
                dk
            } else {
                Vec::new()
            };
            let db = if bh.requires_grad() {
                let mut db = vec![0.0; c_out];
                for si in 0..s {
                    for (co, dbv) in db.iter_mut().enumerate() {
                        *dbv += g[(si * c_out + co) * l..(si * c_out + co + 1) * l]
                            .iter()
                            .sum::<f64>();
                    }
                }
                db
            } else {
                Vec::new()
            };
            vec![dx, dk, db]
        }),
    ))
}

#[inline]
fn valid_range(l: usize, offset: isize) -> (usize, usize) {
    let t0 = (-offset).max(0) as usize;
    let t1 = ((l as isize).min(l as isize - offset)).max(0) as usize;
    (t0, t1.max(t0))
}

/// Non-overlapping window maximum over the last axis of [S, C, L].
/// Gradient routes to the first occurrence of the maximum in each window.
pub fn maxpool1d(x: &Tensor, window: usize) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 3 {
        return Err(Error::Dim(format!("maxpool1d: input {xs:?}, want [S,C,L]")));
    }
    let (s, c, l) = (xs[0], xs[1], xs[2]);
    if window == 0 || l % window != 0 {
        return Err(Error::Dim(format!(
            "maxpool1d: window {window} does not divide length {l}"
        )));
    }
    let p = l / window;
    let mut argmax = vec![0usize; s * c * p];
    let out = {
        let xv = x.vals();
        let mut out = vec![0.0; s * c * p];
        for row in 0..s * c {
            let x_row = &xv[row * l..(row + 1) * l];
            for pi in 0..p {
                let start = pi * window;
                let mut best = x_row[start];
                let mut best_at = start;
                for t in start + 1..start + window {
                    if x_row[t] > best {
                        best = x_row[t];
                        best_at = t;
                    }
                }
                out[row * p + pi] = best;
                argmax[row * p + pi] = row * l + best_at;
            }
        }
        out
    };
    let total = s * c * l;
    Ok(Tensor::from_op(
        vec![s, c, p],
        out,
        vec![x.clone()],
        Box::new(move |_, g| {
            let mut dx = vec![0.0; total];
            for (pos, &src) in argmax.iter().enumerate() {
                dx[src] += g[pos];
            }
            vec![dx]
        }),
    ))
}
