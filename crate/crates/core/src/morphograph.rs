//! EdgeConv graph classifier over joint graphs.
//!
//! Each layer computes `x_i' = max_{j∈N(i)} φ([x_i, x_j − x_i])` over the
//! static joint-graph edges, followed by per-graph normalization and ReLU.
//! Mean and max pooling give the graph embedding; a linear head gives logits.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{JointGraph, NODE_FEATURES};
use crate::nn::{init_head, init_mlp2, linear, mlp2, Bound, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

pub const GRAPH_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphModelConfig {
    pub in_features: usize,
    /// Output width of each EdgeConv layer.
    pub widths: Vec<usize>,
    pub num_classes: usize,
}

impl Default for GraphModelConfig {
    fn default() -> Self {
        Self {
            in_features: NODE_FEATURES,
            widths: vec![16, 32, 64],
            num_classes: 3,
        }
    }
}

impl GraphModelConfig {
    /// Width of the pooled embedding (mean ‖ max).
    pub fn embed_dim(&self) -> usize {
        2 * self.widths.last().copied().unwrap_or(self.in_features)
    }

    fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.num_classes < 2 {
            return Err(Error::Config("graph model needs ≥1 layer and ≥2 classes".into()));
        }
        for w in self.widths.windows(2) {
            if w[1] != 2 * w[0] {
                return Err(Error::Config(format!(
                    "EdgeConv widths must double after the first layer, got {:?}",
                    self.widths
                )));
            }
        }
        Ok(())
    }
}

/// Node features and directed edge lists of several graphs stacked together.
#[derive(Clone, Debug)]
pub struct GraphBatch<T> {
    pub features: Tensor<T>,
    /// Receiving node of each directed edge.
    pub centers: Rc<[usize]>,
    /// Sending node of each directed edge.
    pub neighbors: Rc<[usize]>,
    pub graph_id: Vec<usize>,
    pub num_graphs: usize,
}

impl<T: Scalar> GraphBatch<T> {
    pub fn new(graphs: &[&JointGraph]) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::Contract("empty graph batch".into()));
        }
        let mut data = Vec::new();
        let mut centers = Vec::new();
        let mut neighbors = Vec::new();
        let mut graph_id = Vec::new();
        let mut offset = 0;
        for (g, graph) in graphs.iter().enumerate() {
            let n = graph.num_nodes();
            if n == 0 {
                return Err(Error::EmptySegment {
                    op: "graph batch",
                    segment: g,
                });
            }
            let mut degree = vec![0usize; n];
            for &(a, b) in &graph.edges {
                if a >= n || b >= n || a == b {
                    return Err(Error::Contract(format!("graph {g}: bad edge ({a}, {b})")));
                }
                centers.extend([offset + a, offset + b]);
                neighbors.extend([offset + b, offset + a]);
                degree[a] += 1;
                degree[b] += 1;
            }
            if let Some(i) = degree.iter().position(|&d| d == 0) {
                return Err(Error::IsolatedNode(offset + i));
            }
            data.extend(graph.nodes.iter().flatten().map(|&v| T::of(v)));
            graph_id.extend(std::iter::repeat(g).take(n));
            offset += n;
        }
        Ok(Self {
            features: Tensor::new(vec![offset, NODE_FEATURES], data)?,
            centers: centers.into(),
            neighbors: neighbors.into(),
            graph_id,
            num_graphs: graphs.len(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph_id.len()
    }
}

/// One EdgeConv aggregation with φ = `mlp2` under `prefix`.
pub fn edgeconv_layer<'t, T: Scalar>(
    x: Var<'t, T>,
    batch: &GraphBatch<T>,
    p: &Bound<'t, T>,
    prefix: &str,
) -> Result<Var<'t, T>> {
    let n = x.shape()[0];
    let xi = x.gather_rows(batch.centers.clone())?;
    let xj = x.gather_rows(batch.neighbors.clone())?;
    let message = mlp2(xi.concat(xj.sub(xi)?)?, p, &format!("{prefix}.phi"))?;
    message
        .segment_max(&batch.centers, n)
        .map_err(|e| match e {
            Error::EmptySegment { segment, .. } => Error::IsolatedNode(segment),
            other => other,
        })
}

/// Per-graph, per-column `γ·(x − μ)/(σ + ε) + β` with population σ.
pub fn graph_norm<'t, T: Scalar>(
    x: Var<'t, T>,
    graph_id: &[usize],
    num_graphs: usize,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    eps: T,
) -> Result<Var<'t, T>> {
    x.segment_standardize(graph_id, num_graphs, eps)?
        .mul_row(gamma)?
        .add_row(beta)
}

/// `[mean ‖ max]` pooling per graph.
pub fn graph_readout<'t, T: Scalar>(
    x: Var<'t, T>,
    graph_id: &[usize],
    num_graphs: usize,
) -> Result<Var<'t, T>> {
    let mean = x.segment_mean(graph_id, num_graphs)?;
    let max = x.segment_max(graph_id, num_graphs)?;
    mean.concat(max)
}

pub struct GraphOutput<'t, T: Scalar> {
    pub logits: Var<'t, T>,
    pub embedding: Var<'t, T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MorphoGraph<T> {
    pub config: GraphModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> MorphoGraph<T> {
    pub fn new(config: GraphModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut d_in = config.in_features;
        for (l, &d_out) in config.widths.iter().enumerate() {
            init_mlp2(&mut params, &format!("edgeconv{l}.phi"), 2 * d_in, d_out, d_out, &mut rng);
            params.insert(format!("edgeconv{l}.norm.gamma"), Tensor::full(&[d_out], T::one()));
            params.insert(format!("edgeconv{l}.norm.beta"), Tensor::zeros(&[d_out]));
            d_in = d_out;
        }
        init_head(&mut params, "classifier", config.embed_dim(), config.num_classes, &mut rng);
        Ok(Self { config, params })
    }

    pub fn from_params(config: GraphModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let reference = Self::new(config.clone(), 0)?;
        check_layout(&reference.params, &params)?;
        Ok(Self { config, params })
    }

    /// edgeconv → graph_norm → relu per layer, then readout and classifier.
    pub fn forward<'t>(&self, p: &Bound<'t, T>, batch: &GraphBatch<T>) -> Result<GraphOutput<'t, T>> {
        if batch.features.shape()[1] != self.config.in_features {
            return Err(Error::Shape {
                op: "morphograph_forward",
                lhs: batch.features.shape().to_vec(),
                rhs: vec![batch.num_nodes(), self.config.in_features],
            });
        }
        let tape = p.get("classifier.weight")?.tape();
        let mut x = tape.constant(batch.features.clone());
        for l in 0..self.config.widths.len() {
            let h = edgeconv_layer(x, batch, p, &format!("edgeconv{l}"))?;
            x = graph_norm(
                h,
                &batch.graph_id,
                batch.num_graphs,
                p.get(&format!("edgeconv{l}.norm.gamma"))?,
                p.get(&format!("edgeconv{l}.norm.beta"))?,
                T::of(GRAPH_NORM_EPS),
            )?
            .relu();
        }
        let embedding = graph_readout(x, &batch.graph_id, batch.num_graphs)?;
        let logits = linear(embedding, p, "classifier")?;
        Ok(GraphOutput { logits, embedding })
    }
}

/// Same names and shapes as `reference`.
pub(crate) fn check_layout<T: Scalar>(reference: &ParamStore<T>, params: &ParamStore<T>) -> Result<()> {
    let a: Vec<_> = reference.iter().map(|(n, t)| (n, t.shape())).collect();
    let b: Vec<_> = params.iter().map(|(n, t)| (n, t.shape())).collect();
    if a != b {
        return Err(Error::Format("parameter layout does not match the model config".into()));
    }
    Ok(())
}
