//! Per-node temporal features via stacked dilated inception modules.
//!
//! Each module runs several dilation rates of a kernel-3 convolution over a
//! shared input, concatenates the branch channels, applies ELU and max-pools.
//! Every input channel is processed independently as a 1-channel sequence
//! with shared weights, so features are per-node and channel-permutation
//! equivariant.

use crate::error::{Error, Result};
use crate::nn::{conv1d_dilated, maxpool1d};
use crate::tensor::{Activation, Tensor};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Branch layout of the inception stack.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct InceptionSpec {
    pub dilations: Vec<usize>,
    pub channels_per_branch: usize,
    pub kernel_size: usize,
    pub pool: usize,
    pub modules: usize,
}

impl Default for InceptionSpec {
    fn default() -> Self {
        InceptionSpec {
            dilations: vec![1, 2, 4, 8],
            channels_per_branch: 8,
            kernel_size: 3,
            pool: 4,
            modules: 3,
        }
    }
}

impl InceptionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size != 3 {
            return Err(Error::Arg(format!(
                "inception: kernel size {} unsupported (convolutions are kernel-3)",
                self.kernel_size
            )));
        }
        if self.dilations.is_empty() || self.dilations.iter().any(|&d| d == 0) {
            return Err(Error::Arg(format!(
                "inception: dilation rates must be ≥ 1, got {:?}",
                self.dilations
            )));
        }
        if self.channels_per_branch == 0 || self.modules == 0 || self.pool == 0 {
            return Err(Error::Arg(
                "inception: channels, modules and pool window must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Feature width after channel concatenation.
    pub fn feature_dim(&self) -> usize {
        self.dilations.len() * self.channels_per_branch
    }

    /// Reduced length after all pooling stages, or a dimension error when the
    /// pool windows do not divide evenly.
    pub fn reduced_len(&self, t: usize) -> Result<usize> {
        let factor = self.pool.pow(self.modules as u32);
        if t == 0 || t % factor != 0 {
            return Err(Error::Dim(format!(
                "inception: length {t} not divisible by pool^modules = {factor}"
            )));
        }
        Ok(t / factor)
    }
}

struct Branch {
    kernels: Tensor, // [C_out, C_in, 3]
    bias: Tensor,    // [C_out]
    dilation: usize,
}

/// The stacked modules with their convolution parameters.
pub struct FeatureExtractor {
    pub spec: InceptionSpec,
    modules: Vec<Vec<Branch>>,
}

impl FeatureExtractor {
    pub fn new(spec: InceptionSpec, rng: &mut ChaCha20Rng) -> Result<Self> {
        spec.validate()?;
        let f = spec.feature_dim();
        let mut modules = Vec::with_capacity(spec.modules);
        for m in 0..spec.modules {
            let c_in = if m == 0 { 1 } else { f };
            let bound = 1.0 / ((c_in * 3) as f64).sqrt();
            let branches = spec
                .dilations
                .iter()
                .map(|&dilation| {
                    let n = spec.channels_per_branch * c_in * 3;
                    let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
                    Branch {
                        kernels: Tensor::new(&[spec.channels_per_branch, c_in, 3], vals, true)
                            .expect("kernel shape"),
                        bias: Tensor::zeros(&[spec.channels_per_branch], true),
                        dilation,
                    }
                })
                .collect();
            modules.push(branches);
        }
        Ok(FeatureExtractor { spec, modules })
    }

    /// [B, N, T] signals → [B, N, T′, F] features.
    pub fn extract(&self, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape();
        if shape.len() != 3 {
            return Err(Error::Dim(format!(
                "features: input {shape:?}, expected [B, N, T]"
            )));
        }
        let (b, n, t) = (shape[0], shape[1], shape[2]);
        let t_out = self.spec.reduced_len(t)?;
        let f = self.spec.feature_dim();
        let mut h = x.reshape(&[b * n, 1, t])?;
        for branches in &self.modules {
            let outs = branches
                .iter()
                .map(|br| conv1d_dilated(&h, &br.kernels, &br.bias, br.dilation))
                .collect::<Result<Vec<_>>>()?;
            let cat = Tensor::concat(&outs, 1)?;
            h = maxpool1d(&cat.activation(Activation::Elu), self.spec.pool)?;
        }
        // [B·N, F, T′] → [B, N, T′, F]
        h.reshape(&[b, n, f, t_out])?.permute(&[0, 1, 3, 2])
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (m, branches) in self.modules.iter().enumerate() {
            for (bi, br) in branches.iter().enumerate() {
                out.push((format!("{prefix}.m{m}.b{bi}.kernels"), br.kernels.clone()));
                out.push((format!("{prefix}.m{m}.b{bi}.bias"), br.bias.clone()));
            }
        }
    }
}
