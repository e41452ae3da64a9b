use std::fmt;
use std::str::FromStr;

use super::checkpoint::Bundle;
use super::data::Dataset;
use super::metrics::{argmax_rows, EvalReport};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::synth::Split;
use crate::tensor::{Tape, Tensor};

/// Rows per forward pass during evaluation and export.
pub const EVAL_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingKind {
    ZGraph,
    ZVision,
    ZTrans,
    ZRep,
}

impl EmbeddingKind {
    pub const NAMES: [&'static str; 4] = ["z_graph", "z_vision", "z_trans", "z_rep"];
}

impl fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = match self {
            EmbeddingKind::ZGraph => 0,
            EmbeddingKind::ZVision => 1,
            EmbeddingKind::ZTrans => 2,
            EmbeddingKind::ZRep => 3,
        };
        f.write_str(Self::NAMES[i])
    }
}

impl FromStr for EmbeddingKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "z_graph" => Ok(EmbeddingKind::ZGraph),
            "z_vision" => Ok(EmbeddingKind::ZVision),
            "z_trans" => Ok(EmbeddingKind::ZTrans),
            "z_rep" => Ok(EmbeddingKind::ZRep),
            other => Err(Error::Config(format!(
                "unknown embedding `{other}`; valid names: {}",
                Self::NAMES.join(", ")
            ))),
        }
    }
}

/// Outputs of a no-gradient forward pass over one chunk.
pub(crate) struct Forward<T> {
    pub logits: Tensor<T>,
    pub z_graph: Option<Tensor<T>>,
    pub z_vision: Option<Tensor<T>>,
    pub z_trans: Option<Tensor<T>>,
    pub z_rep: Option<Tensor<T>>,
}

impl<T: Scalar> Bundle<T> {
    pub fn num_classes(&self) -> usize {
        match self {
            Bundle::Graph(g) => g.config.num_classes,
            Bundle::Vision(v) => v.config.num_classes,
            Bundle::Fusion { fusion, .. } => fusion.config.num_classes,
        }
    }

    /// Embeddings this bundle can export.
    pub fn embedding_kinds(&self) -> &'static [EmbeddingKind] {
        match self {
            Bundle::Graph(_) => &[EmbeddingKind::ZGraph],
            Bundle::Vision(_) => &[EmbeddingKind::ZVision],
            Bundle::Fusion { .. } => &[
                EmbeddingKind::ZGraph,
                EmbeddingKind::ZVision,
                EmbeddingKind::ZTrans,
                EmbeddingKind::ZRep,
            ],
        }
    }

    /// Forward pass over `idx`; `z_graph` may supply precomputed frozen
    /// graph embeddings for fusion bundles.
    pub(crate) fn forward(&self, data: &Dataset, idx: &[usize], z_graph: Option<&Tensor<T>>) -> Result<Forward<T>> {
        let tape = Tape::new();
        Ok(match self {
            Bundle::Graph(g) => {
                let out = g.forward(&g.params.bind(&tape, false), &data.graphs(idx)?)?;
                Forward {
                    logits: out.logits.value().as_ref().clone(),
                    z_graph: Some(out.embedding.value().as_ref().clone()),
                    z_vision: None,
                    z_trans: None,
                    z_rep: None,
                }
            }
            Bundle::Vision(v) => {
                let out = v.forward(&v.params.bind(&tape, false), &data.images(idx))?;
                Forward {
                    logits: out.logits.value().as_ref().clone(),
                    z_graph: None,
                    z_vision: Some(out.embedding.value().as_ref().clone()),
                    z_trans: None,
                    z_rep: None,
                }
            }
            Bundle::Fusion {
                graph,
                vision,
                fusion,
                ..
            } => {
                let zg = match z_graph {
                    Some(z) => tape.constant(z.clone()),
                    None => graph.forward(&graph.params.bind(&tape, false), &data.graphs(idx)?)?.embedding,
                };
                let zv = vision.forward(&vision.params.bind(&tape, false), &data.images(idx))?.embedding;
                let heads = fusion.heads(&fusion.params.bind(&tape, false), zv, zg)?;
                Forward {
                    logits: heads.logits.value().as_ref().clone(),
                    z_graph: Some(zg.value().as_ref().clone()),
                    z_vision: Some(zv.value().as_ref().clone()),
                    z_trans: Some(heads.z_trans.value().as_ref().clone()),
                    z_rep: Some(heads.z_rep.value().as_ref().clone()),
                }
            }
        })
    }

    /// Predicted class per sample of `split`, in chunks of [`EVAL_CHUNK`].
    pub fn predict(&self, data: &Dataset, idx: &[usize]) -> Result<Vec<usize>> {
        let mut predicted = Vec::with_capacity(idx.len());
        for chunk in idx.chunks(EVAL_CHUNK) {
            let out = self.forward(data, chunk, None)?;
            predicted.extend(argmax_rows(out.logits.data(), self.num_classes()));
        }
        Ok(predicted)
    }

    pub fn evaluate(&self, data: &Dataset, split: Split) -> Result<EvalReport> {
        let idx = data.indices(split);
        if idx.is_empty() {
            return Err(Error::Contract(format!("split `{split}` is empty")));
        }
        let predicted = self.predict(data, &idx)?;
        EvalReport::from_predictions(&predicted, &data.labels(&idx), self.num_classes())
    }

    /// CSV text with `sample_id,label,e0,…` rows for every sample of `split`.
    pub fn export_embeddings(&self, data: &Dataset, split: Split, which: EmbeddingKind) -> Result<String> {
        if !self.embedding_kinds().contains(&which) {
            let valid: Vec<String> = self.embedding_kinds().iter().map(|k| k.to_string()).collect();
            return Err(Error::Config(format!(
                "this checkpoint cannot export `{which}`; valid names: {}",
                valid.join(", ")
            )));
        }
        let idx = data.indices(split);
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header_done = false;
        for chunk in idx.chunks(EVAL_CHUNK) {
            let out = self.forward(data, chunk, None)?;
            let z = match which {
                EmbeddingKind::ZGraph => out.z_graph,
                EmbeddingKind::ZVision => out.z_vision,
                EmbeddingKind::ZTrans => out.z_trans,
                EmbeddingKind::ZRep => out.z_rep,
            }
            .expect("kind checked above");
            let width = z.shape()[1];
            if !header_done {
                let mut header = vec!["sample_id".to_string(), "label".to_string()];
                header.extend((0..width).map(|j| format!("e{j}")));
                w.write_record(&header)?;
                header_done = true;
            }
            for (r, &i) in chunk.iter().enumerate() {
                let mut row = vec![data.samples[i].id.to_string(), data.samples[i].label.to_string()];
                row.extend(z.row(r).iter().map(|v| v.to_f64_lossless().to_string()));
                w.write_record(&row)?;
            }
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Format(format!("embedding export: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}
