//! Per-edge layer-membership extraction from raw signals.
//!
//! Every ordered channel pair (i, j) gets a K-vector of logits describing how
//! strongly the directed edge i→j belongs to each graph layer. Channels share
//! one set of networks: f1 embeds a raw channel, f2 embeds an ordered pair
//! from the two channel embeddings, f3 re-embeds each node from the sum of
//! its outgoing pair embeddings, and f4 maps (h_i ‖ h_j ‖ e_ij) to the
//! per-layer logits.

use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpSpec, Mode};
use crate::tensor::{Activation, Tensor};
use rand_chacha::ChaCha20Rng;

/// Logits h_ij ∈ R^K for every ordered pair, shape [B, N, N, K]. Diagonal
/// entries are computed for shape regularity but masked everywhere
/// downstream.
pub struct MembershipTensor {
    pub logits: Tensor,
}

impl MembershipTensor {
    pub fn batch(&self) -> usize {
        self.logits.shape()[0]
    }
    pub fn nodes(&self) -> usize {
        self.logits.shape()[1]
    }
    pub fn layers(&self) -> usize {
        self.logits.shape()[3]
    }
}

/// The shared networks f1–f4.
pub struct MembershipNet {
    pub f1: Mlp,
    pub f2: Mlp,
    pub f3: Mlp,
    pub f4: Mlp,
    input_len: usize,
    layers: usize,
}

impl MembershipNet {
    /// `input_len` is the raw segment length consumed by f1; `hidden` is the
    /// shared embedding width; `layers` is K, the output width of f4.
    pub fn new(
        input_len: usize,
        hidden: usize,
        layers: usize,
        rng: &mut ChaCha20Rng,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Arg("membership: need at least one graph layer".into()));
        }
        let f4_spec = MlpSpec {
            widths: vec![3 * hidden, hidden, hidden, layers],
            activation: Activation::Elu,
            batchnorm: vec![false, false, false],
            activate_last: false,
        };
        Ok(MembershipNet {
            f1: Mlp::new(MlpSpec::two_layer(input_len, hidden, hidden, Activation::Elu), rng)?,
            f2: Mlp::new(MlpSpec::two_layer(2 * hidden, hidden, hidden, Activation::Elu), rng)?,
            f3: Mlp::new(MlpSpec::two_layer(hidden, hidden, hidden, Activation::Elu), rng)?,
            f4: Mlp::new(f4_spec, rng)?,
            input_len,
            layers,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.layers
    }

    /// Membership logits for a [B, N, T] signal batch.
    pub fn extract(&self, x: &Tensor, mode: Mode) -> Result<MembershipTensor> {
        let shape = x.shape();
        if shape.len() != 3 || shape[2] != self.input_len {
            return Err(Error::Dim(format!(
                "membership: input {shape:?}, expected [B, N, {}]",
                self.input_len
            )));
        }
        let (b, n) = (shape[0], shape[1]);
        if n < 2 {
            return Err(Error::Contract(format!(
                "membership: {n} channel(s) admit no edges"
            )));
        }
        let rows = x.reshape(&[b * n, self.input_len])?;
        let phi = self.f1.forward(&rows, mode)?;

        // ordered pair index tables, diagonal included for regular shapes
        let mut idx_src = Vec::with_capacity(b * n * n);
        let mut idx_dst = Vec::with_capacity(b * n * n);
        let mut group_of = Vec::with_capacity(b * n * n);
        for bi in 0..b {
            for i in 0..n {
                for j in 0..n {
                    idx_src.push(bi * n + i);
                    idx_dst.push(bi * n + j);
                    group_of.push(if i == j { usize::MAX } else { bi * n + i });
                }
            }
        }

        let src = phi.gather_rows(&idx_src)?;
        let dst = phi.gather_rows(&idx_dst)?;
        let pair = self
            .f2
            .forward(&Tensor::concat(&[src, dst], 1)?, mode)?;

        // each node aggregates its outgoing pair embeddings over j ≠ i
        let agg = pair.group_sum_rows(&group_of, b * n)?;
        let node = self.f3.forward(&agg, mode)?;

        let node_src = node.gather_rows(&idx_src)?;
        let node_dst = node.gather_rows(&idx_dst)?;
        let logits = self
            .f4
            .forward(&Tensor::concat(&[node_src, node_dst, pair], 1)?, mode)?
            .reshape(&[b, n, n, self.layers])?;
        Ok(MembershipTensor { logits })
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        self.f1.collect_params(&format!("{prefix}.f1"), out);
        self.f2.collect_params(&format!("{prefix}.f2"), out);
        self.f3.collect_params(&format!("{prefix}.f3"), out);
        self.f4.collect_params(&format!("{prefix}.f4"), out);
    }

    pub fn collect_buffers(&self, prefix: &str, out: &mut Vec<(String, Vec<usize>, Vec<f64>)>) {
        self.f1.collect_buffers(&format!("{prefix}.f1"), out);
        self.f2.collect_buffers(&format!("{prefix}.f2"), out);
        self.f3.collect_buffers(&format!("{prefix}.f3"), out);
        self.f4.collect_buffers(&format!("{prefix}.f4"), out);
    }

    pub fn load_buffer(&self, name: &str, values: &[f64]) -> bool {
        for (net, tag) in [(&self.f1, "f1."), (&self.f2, "f2."), (&self.f3, "f3."), (&self.f4, "f4.")] {
            if let Some(rest) = name.strip_prefix(tag) {
                return net.load_buffer(rest, values);
            }
        }
        false
    }
}
