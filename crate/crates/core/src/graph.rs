//! Multi-layer graph containers and the shared graph JSON format.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Batch of weighted directed multi-layer graphs backed by a tensor of shape
/// [B, K, N, N], weights in [0,1], zero diagonal. When `skip_layer` is set,
/// layer 0 is the skip layer and is dropped before message passing while
/// analysis tooling still sees all K layers.
pub struct MultiLayerGraph {
    pub weights: Tensor,
    pub skip_layer: bool,
}

impl MultiLayerGraph {
    pub fn new(weights: Tensor, skip_layer: bool) -> Result<Self> {
        let shape = weights.shape();
        if shape.len() != 4 || shape[2] != shape[3] {
            return Err(Error::Dim(format!(
                "multi-layer graph weights must be [B,K,N,N], got {shape:?}"
            )));
        }
        Ok(MultiLayerGraph { weights, skip_layer })
    }

    pub fn batch(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn layers(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn nodes(&self) -> usize {
        self.weights.shape()[2]
    }

    /// Detach one instance of the batch as plain matrices.
    pub fn instance(&self, b: usize) -> InstanceGraph {
        let (k, n) = (self.layers(), self.nodes());
        let vals = self.weights.values();
        let per_layer = n * n;
        let per_instance = k * per_layer;
        let layers = (0..k)
            .map(|ki| {
                vals[b * per_instance + ki * per_layer..b * per_instance + (ki + 1) * per_layer]
                    .to_vec()
            })
            .collect();
        InstanceGraph {
            n_nodes: n,
            layers,
            skip_layer: self.skip_layer,
        }
    }
}

/// One extracted graph: K dense row-major N×N adjacency matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceGraph {
    pub n_nodes: usize,
    pub layers: Vec<Vec<f64>>,
    pub skip_layer: bool,
}

impl InstanceGraph {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn weight(&self, layer: usize, from: usize, to: usize) -> f64 {
        self.layers[layer][from * self.n_nodes + to]
    }

    /// Binarize continuous weights at 0.5; binary graphs pass through.
    pub fn binarized(&self) -> InstanceGraph {
        InstanceGraph {
            n_nodes: self.n_nodes,
            layers: self
                .layers
                .iter()
                .map(|l| l.iter().map(|&w| if w > 0.5 { 1.0 } else { 0.0 }).collect())
                .collect(),
            skip_layer: self.skip_layer,
        }
    }
}

/// Round to six significant digits, the precision used by the graph JSON
/// format. Exact on already-rounded values, so write→read→write is stable.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

/// Serialized form of a single graph.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphJson {
    pub n_nodes: usize,
    pub n_layers: usize,
    pub skip_layer: bool,
    /// layers[k] is the dense row-major N×N weight matrix of layer k
    pub layers: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub node_names: Option<Vec<String>>,
}

impl GraphJson {
    pub fn from_instance(g: &InstanceGraph, node_names: Option<Vec<String>>) -> Self {
        GraphJson {
            n_nodes: g.n_nodes,
            n_layers: g.n_layers(),
            skip_layer: g.skip_layer,
            layers: g
                .layers
                .iter()
                .map(|l| l.iter().map(|&w| round_sig6(w)).collect())
                .collect(),
            node_names,
        }
    }

    pub fn to_instance(&self) -> Result<InstanceGraph> {
        if self.layers.len() != self.n_layers
            || self.layers.iter().any(|l| l.len() != self.n_nodes * self.n_nodes)
        {
            return Err(Error::Dim(format!(
                "graph JSON: {} layers of expected {}, node count {}",
                self.layers.len(),
                self.n_layers,
                self.n_nodes
            )));
        }
        Ok(InstanceGraph {
            n_nodes: self.n_nodes,
            layers: self.layers.clone(),
            skip_layer: self.skip_layer,
        })
    }
}

/// Bundle of per-instance graphs extracted by one trained model on one data
/// split, in instance order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphBundle {
    pub n_nodes: usize,
    pub n_layers: usize,
    pub skip_layer: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub node_names: Option<Vec<String>>,
    pub instances: Vec<GraphBundleEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphBundleEntry {
    pub id: u64,
    pub label: u32,
    pub layers: Vec<Vec<f64>>,
}

impl GraphBundle {
    pub fn entry_graph(&self, idx: usize) -> InstanceGraph {
        InstanceGraph {
            n_nodes: self.n_nodes,
            layers: self.instances[idx].layers.clone(),
            skip_layer: self.skip_layer,
        }
    }
}
