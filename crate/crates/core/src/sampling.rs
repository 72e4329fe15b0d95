//! Graph sampling: converts per-edge layer-membership logits into a
//! multi-layer graph.
//!
//! Three methods are provided. Stochastic sampling (STO) assigns each edge
//! to exactly one layer via the Gumbel-softmax relaxation with a hard
//! argmax forward value. Deterministic thresholding (DET) admits an edge
//! into every layer whose membership passes a sigmoid threshold,
//! independently per layer. Continuous sampling (CON) keeps the relaxed
//! softmax weights as-is. Hard forward values train through a
//! straight-through estimator: the backward pass uses the gradient of the
//! relaxed value.

use crate::error::{Error, Result};
use crate::graph::MultiLayerGraph;
use crate::tensor::{Activation, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Which sampling method converts logits to a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    #[serde(rename = "sto")]
    Stochastic,
    #[serde(rename = "det")]
    Deterministic,
    #[serde(rename = "con")]
    Continuous,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sto" => Ok(SamplerKind::Stochastic),
            "det" => Ok(SamplerKind::Deterministic),
            "con" => Ok(SamplerKind::Continuous),
            other => Err(Error::Arg(format!(
                "unknown sampler {other:?} (expected sto, det or con)"
            ))),
        }
    }
}

/// Seeded stream of sampling noise. Uniform draws are clamped away from 0
/// and 1 so the log transforms stay finite.
pub struct NoiseStream {
    rng: ChaCha20Rng,
}

const UNIFORM_CLAMP: f64 = 1e-12;

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        NoiseStream {
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    fn uniform(&mut self) -> f64 {
        self.rng
            .gen::<f64>()
            .clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP)
    }

    /// i.i.d. standard Gumbel samples: −log(−log u).
    pub fn gumbel(&mut self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let vals: Vec<f64> = (0..n).map(|_| -(-self.uniform().ln()).ln()).collect();
        Tensor::new(shape, vals, false).expect("gumbel noise")
    }

    /// i.i.d. standard logistic samples: log u − log(1−u).
    pub fn logistic(&mut self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let vals: Vec<f64> = (0..n)
            .map(|_| {
                let u = self.uniform();
                u.ln() - (1.0 - u).ln()
            })
            .collect();
        Tensor::new(shape, vals, false).expect("logistic noise")
    }
}

/// Relaxed per-edge layer assignment: softmax((h + q)/τ) over the layer axis
/// of [B, N, N, K] logits.
pub fn gumbel_softmax(logits: &Tensor, tau: f64, noise: &Tensor) -> Result<Tensor> {
    if tau <= 0.0 {
        return Err(Error::Arg(format!("temperature must be positive, got {tau}")));
    }
    let shape = logits.shape();
    if shape.len() != 4 {
        return Err(Error::Dim(format!(
            "gumbel_softmax: logits must be [B,N,N,K], got {shape:?}"
        )));
    }
    logits.add(noise)?.mul_scalar(1.0 / tau).softmax(3)
}

/// Index plumbing shared by the samplers: output layout is [B,K,N,N] while
/// relaxed assignments live in [B,N,N,K]. `hard` computes the forward value
/// of one off-diagonal entry from the relaxed edge slice.
fn edge_graph<F>(relaxed: &Tensor, hard: F) -> Result<Tensor>
where
    F: Fn(&[f64], usize) -> f64,
{
    let shape = relaxed.shape();
    if shape.len() != 4 || shape[1] != shape[2] {
        return Err(Error::Dim(format!(
            "sampler: expected [B,N,N,K] input, got {shape:?}"
        )));
    }
    let (b, n, k) = (shape[0], shape[1], shape[3]);
    let out = {
        let z = relaxed.vals();
        let mut out = vec![0.0; b * k * n * n];
        for bi in 0..b {
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let edge = &z[((bi * n + i) * n + j) * k..((bi * n + i) * n + j + 1) * k];
                    for ki in 0..k {
                        out[((bi * k + ki) * n + i) * n + j] = hard(edge, ki);
                    }
                }
            }
        }
        out
    };
    Ok(Tensor::from_op(
        vec![b, k, n, n],
        out,
        vec![relaxed.clone()],
        Box::new(move |_, g| {
            let mut dz = vec![0.0; b * n * n * k];
            for bi in 0..b {
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        for ki in 0..k {
                            dz[((bi * n + i) * n + j) * k + ki] =
                                g[((bi * k + ki) * n + i) * n + j];
                        }
                    }
                }
            }
            vec![dz]
        }),
    ))
}

/// STO: one-hot argmax over layers per edge, straight-through backward.
pub fn sample_stochastic(relaxed: &Tensor) -> Result<MultiLayerGraph> {
    let w = edge_graph(relaxed, |edge, ki| {
        let mut best = 0;
        for (idx, v) in edge.iter().enumerate() {
            if *v > edge[best] {
                best = idx;
            }
        }
        if ki == best {
            1.0
        } else {
            0.0
        }
    })?;
    MultiLayerGraph::new(w, false)
}

/// DET training path: threshold the relaxed binary-concrete sample,
/// straight-through backward.
fn sample_threshold(relaxed: &Tensor, threshold: f64) -> Result<MultiLayerGraph> {
    let w = edge_graph(relaxed, |edge, ki| {
        if edge[ki] > threshold {
            1.0
        } else {
            0.0
        }
    })?;
    MultiLayerGraph::new(w, false)
}

/// CON: the relaxed assignment itself is the edge weight.
pub fn sample_continuous(relaxed: &Tensor) -> Result<MultiLayerGraph> {
    let w = edge_graph(relaxed, |edge, ki| edge[ki])?;
    MultiLayerGraph::new(w, false)
}

/// DET: independent per-layer thresholding of sigmoid(h) against r.
///
/// In train mode the hard value comes from a binary-concrete relaxation
/// (sigmoid of logistic-noised logits over the same temperature) with a
/// straight-through backward; in eval mode the rule is applied noise-free
/// and exactly.
pub fn sample_deterministic(
    logits: &Tensor,
    r: f64,
    tau: f64,
    noise: Option<&Tensor>,
) -> Result<MultiLayerGraph> {
    if r <= 0.0 || r >= 1.0 {
        return Err(Error::Arg(format!("threshold must lie in (0,1), got {r}")));
    }
    match noise {
        Some(q) => {
            if tau <= 0.0 {
                return Err(Error::Arg(format!("temperature must be positive, got {tau}")));
            }
            let relaxed = logits
                .add(q)?
                .mul_scalar(1.0 / tau)
                .activation(Activation::Sigmoid);
            sample_threshold(&relaxed, r)
        }
        None => {
            let probs = logits.activation(Activation::Sigmoid);
            // hard rule, no gradient path
            let hard = edge_graph(&Tensor::new(&probs.shape(), probs.values(), false)?, |edge, ki| {
                if edge[ki] > r {
                    1.0
                } else {
                    0.0
                }
            })?;
            MultiLayerGraph::new(hard, false)
        }
    }
}

/// Drop the skip layer (layer index 0) from message passing. Analysis keeps
/// the full graph; this returns the reduced view for the classifier.
pub fn apply_skip(graph: &MultiLayerGraph) -> Result<MultiLayerGraph> {
    if !graph.skip_layer {
        return Err(Error::Contract(
            "apply_skip: graph has no skip layer configured".into(),
        ));
    }
    let k = graph.layers();
    if k < 2 {
        return Err(Error::Contract(format!(
            "apply_skip: {k} layer(s); dropping the skip layer would leave none"
        )));
    }
    let shape = graph.weights.shape();
    let (b, n) = (shape[0], shape[2]);
    let per_layer = n * n;
    let out = {
        let w = graph.weights.vals();
        let mut out = Vec::with_capacity(b * (k - 1) * per_layer);
        for bi in 0..b {
            let start = (bi * k + 1) * per_layer;
            out.extend_from_slice(&w[start..start + (k - 1) * per_layer]);
        }
        out
    };
    let reduced = Tensor::from_op(
        vec![b, k - 1, n, n],
        out,
        vec![graph.weights.clone()],
        Box::new(move |_, g| {
            let mut dw = vec![0.0; b * k * per_layer];
            for bi in 0..b {
                let dst = (bi * k + 1) * per_layer;
                let src = bi * (k - 1) * per_layer;
                dw[dst..dst + (k - 1) * per_layer]
                    .copy_from_slice(&g[src..src + (k - 1) * per_layer]);
            }
            vec![dw]
        }),
    );
    MultiLayerGraph::new(reduced, false)
}

/// Sample a graph from membership logits with the configured method.
pub fn sample(
    kind: SamplerKind,
    logits: &Tensor,
    tau: f64,
    r: f64,
    skip_layer: bool,
    train: bool,
    noise: &mut NoiseStream,
) -> Result<MultiLayerGraph> {
    let shape = logits.shape();
    let mut graph = match kind {
        SamplerKind::Stochastic => {
            let q = noise.gumbel(&shape);
            let z = gumbel_softmax(logits, tau, &q)?;
            sample_stochastic(&z)?
        }
        SamplerKind::Continuous => {
            let q = noise.gumbel(&shape);
            let z = gumbel_softmax(logits, tau, &q)?;
            sample_continuous(&z)?
        }
        SamplerKind::Deterministic => {
            if train {
                let q = noise.logistic(&shape);
                sample_deterministic(logits, r, tau, Some(&q))?
            } else {
                sample_deterministic(logits, r, tau, None)?
            }
        }
    };
    graph.skip_layer = skip_layer;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(b: usize, n: usize, k: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..b * n * n * k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Tensor::new(&[b, n, n, k], vals, true).unwrap()
    }

    #[test]
    fn noise_is_reproducible_given_seed() {
        let a = NoiseStream::new(5).gumbel(&[2, 2, 2, 3]).values();
        let b = NoiseStream::new(5).gumbel(&[2, 2, 2, 3]).values();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gumbel_softmax_sums_to_one() {
        let h = logits(2, 3, 4, 1);
        let q = NoiseStream::new(2).gumbel(&[2, 3, 3, 4]);
        let z = gumbel_softmax(&h, 0.5, &q).unwrap();
        let vals = z.values();
        for edge in vals.chunks(4) {
            let total: f64 = edge.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gumbel_softmax_rejects_nonpositive_temperature() {
        let h = logits(1, 2, 2, 3);
        let q = NoiseStream::new(0).gumbel(&[1, 2, 2, 2]);
        assert!(matches!(gumbel_softmax(&h, 0.0, &q), Err(Error::Arg(_))));
        assert!(matches!(gumbel_softmax(&h, -1.0, &q), Err(Error::Arg(_))));
    }

    #[test]
    fn temperature_smooths_towards_uniform() {
        // q fixed to zero: larger τ must shrink the dominant entry
        let h = Tensor::new(&[1, 2, 2, 3], {
            let mut v = vec![0.0; 12];
            v[3] = 2.0; // edge (0,1): h = [2,0,0]
            v
        }, false)
        .unwrap();
        let q = Tensor::zeros(&[1, 2, 2, 3], false);
        let mut last_max = f64::INFINITY;
        for tau in [0.5, 5.0, 50.0] {
            let z = gumbel_softmax(&h, tau, &q).unwrap().values();
            let edge = &z[3..6];
            let max = edge.iter().cloned().fold(f64::MIN, f64::max);
            assert!(max < last_max, "τ={tau}: {max} !< {last_max}");
            last_max = max;
        }
    }

    #[test]
    fn stochastic_is_one_hot_per_edge() {
        let h = logits(2, 4, 3, 7);
        let mut ns = NoiseStream::new(7);
        let q = ns.gumbel(&[2, 4, 4, 3]);
        let z = gumbel_softmax(&h, 0.5, &q).unwrap();
        let g = sample_stochastic(&z).unwrap();
        let w = g.weights.values();
        let (n, k) = (4, 3);
        for bi in 0..2 {
            for i in 0..n {
                for j in 0..n {
                    let total: f64 = (0..k)
                        .map(|ki| w[((bi * k + ki) * n + i) * n + j])
                        .sum();
                    if i == j {
                        assert_eq!(total, 0.0);
                    } else {
                        assert_eq!(total, 1.0, "edge {i}->{j} not one-hot");
                    }
                }
            }
        }
    }

    #[test]
    fn stochastic_layer_frequencies_follow_gumbel_max() {
        // single edge (0,1) of a 2-node graph, K = 3
        let h_edge = [0.5, -0.3, 1.1];
        let mut vals = vec![0.0; 2 * 2 * 3];
        vals[3..6].copy_from_slice(&h_edge);
        let h = Tensor::new(&[1, 2, 2, 3], vals, false).unwrap();
        let max = h_edge.iter().cloned().fold(f64::MIN, f64::max);
        let exp: Vec<f64> = h_edge.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        let p: Vec<f64> = exp.iter().map(|e| e / total).collect();

        let draws = 10_000;
        let mut counts = [0usize; 3];
        let mut ns = NoiseStream::new(123);
        for _ in 0..draws {
            let q = ns.gumbel(&[1, 2, 2, 3]);
            let z = gumbel_softmax(&h, 0.5, &q).unwrap();
            let w = sample_stochastic(&z).unwrap().weights.values();
            for (ki, c) in counts.iter_mut().enumerate() {
                // entry (b=0, k=ki, i=0, j=1)
                if w[(ki * 2) * 2 + 1] == 1.0 {
                    *c += 1;
                }
            }
        }
        for ki in 0..3 {
            let freq = counts[ki] as f64 / draws as f64;
            let sigma = (p[ki] * (1.0 - p[ki]) / draws as f64).sqrt();
            assert!(
                (freq - p[ki]).abs() <= 3.0 * sigma,
                "layer {ki}: freq {freq:.4} vs p {:.4} (3σ = {:.4})",
                p[ki],
                3.0 * sigma
            );
        }
    }

    #[test]
    fn straight_through_gradient_equals_soft_path() {
        let h = logits(1, 2, 3, 9);
        let q = NoiseStream::new(9).gumbel(&[1, 2, 2, 3]);
        let c = {
            let mut rng = ChaCha20Rng::seed_from_u64(10);
            let vals: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Tensor::new(&[1, 3, 2, 2], vals, false).unwrap()
        };

        let grad_of = |hard: bool| {
            h.zero_grad();
            let z = gumbel_softmax(&h, 0.5, &q).unwrap();
            let g = if hard {
                sample_stochastic(&z).unwrap()
            } else {
                sample_continuous(&z).unwrap()
            };
            g.weights.mul(&c).unwrap().sum().backward().unwrap();
            h.grad()
        };
        let hard_grad = grad_of(true);
        let soft_grad = grad_of(false);
        assert_eq!(hard_grad, soft_grad);
        assert!(hard_grad.iter().any(|g| *g != 0.0));
    }

    #[test]
    fn deterministic_eval_thresholds_each_layer_independently() {
        let mut vals = vec![-10.0; 2 * 2 * 3];
        vals[3..6].copy_from_slice(&[3.0, -3.0, 0.1]); // sigmoids 0.953, 0.047, 0.525
        let h = Tensor::new(&[1, 2, 2, 3], vals, false).unwrap();
        let g = sample_deterministic(&h, 0.5, 0.5, None).unwrap();
        let w = g.weights.values();
        let edge: Vec<f64> = (0..3).map(|ki| w[(ki * 2) * 2 + 1]).collect();
        assert_eq!(edge, vec![1.0, 0.0, 1.0]);
        // the all −10 edge (1,0) is absent from every layer
        for ki in 0..3 {
            assert_eq!(w[(ki * 2 + 1) * 2], 0.0);
        }
    }

    #[test]
    fn deterministic_eval_ignores_noise_seed() {
        let h = logits(2, 3, 2, 21);
        let a = sample_deterministic(&h, 0.5, 0.5, None).unwrap().weights.values();
        let b = sample_deterministic(&h, 0.5, 0.5, None).unwrap().weights.values();
        assert_eq!(a, b);
        assert!(a.iter().all(|w| *w == 0.0 || *w == 1.0));
    }

    #[test]
    fn deterministic_rejects_threshold_outside_unit_interval() {
        let h = logits(1, 2, 2, 1);
        for r in [0.0, 1.0, -0.5, 2.0] {
            assert!(matches!(
                sample_deterministic(&h, r, 0.5, None),
                Err(Error::Arg(_))
            ));
        }
    }

    #[test]
    fn continuous_keeps_relaxed_weights() {
        let h = logits(1, 3, 3, 31);
        let q = NoiseStream::new(31).gumbel(&[1, 3, 3, 3]);
        let z = gumbel_softmax(&h, 0.5, &q).unwrap();
        let g = sample_continuous(&z).unwrap();
        let (zv, wv) = (z.values(), g.weights.values());
        let (n, k) = (3, 3);
        for i in 0..n {
            for j in 0..n {
                let mut total = 0.0;
                for ki in 0..k {
                    let w = wv[(ki * n + i) * n + j];
                    if i == j {
                        assert_eq!(w, 0.0);
                    } else {
                        assert_eq!(w, zv[(i * n + j) * k + ki]);
                        total += w;
                    }
                }
                if i != j {
                    assert!((total - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn continuous_differs_across_seeds() {
        let h = logits(1, 3, 2, 41);
        let draw = |seed| {
            let q = NoiseStream::new(seed).gumbel(&[1, 3, 3, 2]);
            let z = gumbel_softmax(&h, 0.5, &q).unwrap();
            sample_continuous(&z).unwrap().weights.values()
        };
        assert_ne!(draw(1), draw(2));
    }

    #[test]
    fn skip_layer_reduces_message_view() {
        let h = logits(1, 3, 2, 51);
        let mut ns = NoiseStream::new(51);
        let g = sample(
            SamplerKind::Deterministic,
            &h,
            0.5,
            0.5,
            true,
            false,
            &mut ns,
        )
        .unwrap();
        assert_eq!(g.layers(), 2);
        let reduced = apply_skip(&g).unwrap();
        assert_eq!(reduced.layers(), 1);
        // reduced layer 0 is the original layer 1
        let full = g.weights.values();
        let red = reduced.weights.values();
        assert_eq!(&full[9..18], red.as_slice());
    }

    #[test]
    fn skip_refusals() {
        let h = logits(1, 3, 1, 61);
        let mut ns = NoiseStream::new(61);
        let mut single = sample(
            SamplerKind::Deterministic,
            &h,
            0.5,
            0.5,
            false,
            false,
            &mut ns,
        )
        .unwrap();
        assert!(matches!(apply_skip(&single), Err(Error::Contract(_))));
        single.skip_layer = true;
        assert!(matches!(apply_skip(&single), Err(Error::Contract(_))));
    }

    #[test]
    fn sampler_invariants_hold_on_random_logits() {
        let mut seed = 0u64;
        for _ in 0..200 {
            seed += 1;
            let h = logits(1, 4, 3, seed);
            let mut ns = NoiseStream::new(seed);
            let (n, k) = (4usize, 3usize);
            for kind in [
                SamplerKind::Stochastic,
                SamplerKind::Deterministic,
                SamplerKind::Continuous,
            ] {
                let g = sample(kind, &h, 0.5, 0.5, false, false, &mut ns).unwrap();
                let w = g.weights.values();
                for i in 0..n {
                    for ki in 0..k {
                        assert_eq!(w[(ki * n + i) * n + i], 0.0, "diagonal must be zero");
                    }
                }
                assert!(w.iter().all(|v| (0.0..=1.0).contains(v)));
                match kind {
                    SamplerKind::Deterministic => {
                        assert!(w.iter().all(|v| *v == 0.0 || *v == 1.0))
                    }
                    SamplerKind::Stochastic | SamplerKind::Continuous => {
                        for i in 0..n {
                            for j in 0..n {
                                if i == j {
                                    continue;
                                }
                                let total: f64 =
                                    (0..k).map(|ki| w[(ki * n + i) * n + j]).sum();
                                assert!((total - 1.0).abs() < 1e-6);
                            }
                        }
                    }
                }
            }
        }
    }
}
