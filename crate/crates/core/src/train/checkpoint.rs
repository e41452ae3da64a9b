use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FusionMode, FusionModel, FusionModelConfig};
use crate::morphograph::{GraphModelConfig, MorphoGraph};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vision::{VisionModel, VisionModelConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Graph,
    Vision,
    MmfClassic,
    MmfMim,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::Graph,
        ExperimentKind::Vision,
        ExperimentKind::MmfClassic,
        ExperimentKind::MmfMim,
    ];

    pub fn fusion_mode(self) -> Option<FusionMode> {
        match self {
            ExperimentKind::MmfClassic => Some(FusionMode::Classic),
            ExperimentKind::MmfMim => Some(FusionMode::Mim),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Graph => "graph",
            ExperimentKind::Vision => "vision",
            ExperimentKind::MmfClassic => "mmf_classic",
            ExperimentKind::MmfMim => "mmf_mim",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision `{other}` (expected f32 or f64)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamArray {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry<C> {
    pub config: C,
    pub params: IndexMap<String, ParamArray>,
}

impl<C: Clone> ModelEntry<C> {
    pub fn new<T: Scalar>(config: &C, store: &ParamStore<T>) -> Self {
        let params = store
            .iter()
            .map(|(name, t)| {
                let values = t.data().iter().map(|v| v.to_f64_lossless()).collect();
                (name.to_string(), ParamArray { shape: t.shape().to_vec(), values })
            })
            .collect();
        Self {
            config: config.clone(),
            params,
        }
    }

    pub fn store<T: Scalar>(&self) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        for (name, arr) in &self.params {
            let tensor = Tensor::from_f64(&arr.shape, &arr.values)
                .map_err(|e| Error::Format(format!("parameter `{name}`: {e}")))?;
            store.insert(name.clone(), tensor);
        }
        Ok(store)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: ExperimentKind,
    pub precision: Precision,
    pub num_classes: usize,
    pub best_step: usize,
    pub best_val_acc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<ModelEntry<GraphModelConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vision: Option<ModelEntry<VisionModelConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion: Option<ModelEntry<FusionModelConfig>>,
    /// Fingerprint of the frozen graph encoder a fusion model was trained on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_fingerprint: Option<String>,
}

/// Models restored from a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub enum Bundle<T> {
    Graph(MorphoGraph<T>),
    Vision(VisionModel<T>),
    Fusion {
        mode: FusionMode,
        graph: MorphoGraph<T>,
        vision: VisionModel<T>,
        fusion: FusionModel<T>,
    },
}

fn require<C: Clone>(entry: &Option<ModelEntry<C>>, what: &str, kind: ExperimentKind) -> Result<ModelEntry<C>> {
    entry
        .clone()
        .ok_or_else(|| Error::Format(format!("{kind} checkpoint lacks the {what} model")))
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = parse_json(text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn bundle<T: Scalar>(&self) -> Result<Bundle<T>> {
        let graph = |e: ModelEntry<GraphModelConfig>| MorphoGraph::from_params(e.config.clone(), e.store()?);
        let vision = |e: ModelEntry<VisionModelConfig>| VisionModel::from_params(e.config.clone(), e.store()?);
        Ok(match self.kind {
            ExperimentKind::Graph => Bundle::Graph(graph(require(&self.graph, "graph", self.kind)?)?),
            ExperimentKind::Vision => Bundle::Vision(vision(require(&self.vision, "vision", self.kind)?)?),
            kind @ (ExperimentKind::MmfClassic | ExperimentKind::MmfMim) => {
                let f = require(&self.fusion, "fusion", kind)?;
                let bundle = Bundle::Fusion {
                    mode: kind.fusion_mode().expect("fusion kind"),
                    graph: graph(require(&self.graph, "graph", kind)?)?,
                    vision: vision(require(&self.vision, "vision", kind)?)?,
                    fusion: FusionModel::from_params(f.config.clone(), f.store()?)?,
                };
                if let (Some(expected), Bundle::Fusion { graph, .. }) = (&self.graph_fingerprint, &bundle) {
                    if graph.params.fingerprint() != *expected {
                        return Err(Error::Format("embedded graph encoder does not match its fingerprint".into()));
                    }
                }
                bundle
            }
        })
    }
}

/// JSON parsing that reports the path of the offending field.
pub fn parse_json<D: DeserializeOwned>(text: &str) -> Result<D> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Format(format!("at `{path}`: {}", e.into_inner()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_checkpoint_roundtrip_is_exact() {
        let model = MorphoGraph::<f32>::new(GraphModelConfig::default(), 5).unwrap();
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: ExperimentKind::Graph,
            precision: Precision::F32,
            num_classes: 3,
            best_step: 49,
            best_val_acc: 0.5,
            graph: Some(ModelEntry::new(&model.config, &model.params)),
            vision: None,
            fusion: None,
            graph_fingerprint: None,
        };
        let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
        assert_eq!(back, ckpt);
        match back.bundle::<f32>().unwrap() {
            Bundle::Graph(g) => assert_eq!(g, model),
            other => panic!("unexpected bundle {other:?}"),
        }
    }

    #[test]
    fn missing_model_and_bad_version() {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: ExperimentKind::MmfMim,
            precision: Precision::F64,
            num_classes: 3,
            best_step: 0,
            best_val_acc: 0.0,
            graph: None,
            vision: None,
            fusion: None,
            graph_fingerprint: None,
        };
        assert!(ckpt.bundle::<f64>().is_err());
        let text = ckpt.to_json().unwrap().replace("\"version\":1", "\"version\":9");
        assert!(Checkpoint::from_json(&text).is_err());
        let err = Checkpoint::from_json(&ckpt.to_json().unwrap().replace("\"num_classes\":3", "\"num_classes\":\"x\""))
            .unwrap_err();
        assert!(err.to_string().contains("num_classes"), "{err}");
    }
}
