//! Run configuration: defaults, then `MORPHOGRAPH_SEED`, then a JSON file,
//! then command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::fusion::MimConfig;
use crate::geometry::GraphConfig;
use crate::morphograph::GraphModelConfig;
use crate::synth::{GeneratorConfig, Split};
use crate::train::{AdamConfig, ExperimentKind, Precision, TrainSettings};
use crate::vision::VisionModelConfig;

pub const SEED_ENV: &str = "MORPHOGRAPH_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data_dir: Option<PathBuf>,
    pub num_classes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub noise_level: f64,
    pub distractors: usize,
    pub n_per_bone: usize,
    pub k: usize,
    pub tau0_factor: f64,
    pub growth: f64,
    pub graph_widths: Vec<usize>,
    pub vision_embed_dim: usize,
    pub temperature: f64,
    pub lambda_ce: f64,
    pub lambda_info: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub graph_steps: usize,
    pub vision_steps: usize,
    pub fusion_steps: usize,
    pub eval_every: usize,
    pub precision: Precision,
    pub graph_checkpoint: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub split: Split,
    pub embedding: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gen = GeneratorConfig::default();
        let graph = GraphConfig::default();
        let mim = MimConfig::default();
        let adam = AdamConfig::default();
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            data_dir: None,
            num_classes: gen.num_classes,
            train: gen.train,
            val: gen.val,
            test: gen.test,
            noise_level: gen.noise_level,
            distractors: gen.distractors,
            n_per_bone: graph.n_per_bone,
            k: graph.k,
            tau0_factor: graph.tau0_factor,
            growth: graph.growth,
            graph_widths: GraphModelConfig::default().widths,
            vision_embed_dim: VisionModelConfig::default().embed_dim,
            temperature: mim.temperature,
            lambda_ce: mim.lambda_ce,
            lambda_info: mim.lambda_info,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            batch_size: 16,
            graph_steps: 600,
            vision_steps: 1500,
            fusion_steps: 1500,
            eval_every: 50,
            precision: Precision::F32,
            graph_checkpoint: None,
            checkpoint: None,
            split: Split::Test,
            embedding: "z_graph".into(),
        }
    }
}

/// One-line description of every key, in declaration order.
pub const KEY_DOCS: &[(&str, &str)] = &[
    ("seed", "base seed for data generation, initialization and batching"),
    ("out", "output directory"),
    ("data_dir", "dataset directory (default: <out>/data)"),
    ("num_classes", "number of severity grades"),
    ("train", "training samples"),
    ("val", "validation samples"),
    ("test", "test samples"),
    ("noise_level", "Gaussian pixel noise sigma in [0, 1]"),
    ("distractors", "distractor masks per sample"),
    ("n_per_bone", "boundary points sampled per bone"),
    ("k", "nearest neighbours per graph node"),
    ("tau0_factor", "initial radius as a multiple of the median nearest-neighbour distance"),
    ("growth", "radius growth factor until the graph is connected"),
    ("graph_widths", "EdgeConv output widths, JSON list"),
    ("vision_embed_dim", "width of the image embedding"),
    ("temperature", "InfoNCE temperature"),
    ("lambda_ce", "cross-entropy weight"),
    ("lambda_info", "weight of the InfoNCE and MSE alignment terms"),
    ("lr", "Adam learning rate"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("adam_eps", "Adam epsilon"),
    ("batch_size", "mini-batch size"),
    ("graph_steps", "optimizer steps for train-graph"),
    ("vision_steps", "optimizer steps for train-vision"),
    ("fusion_steps", "optimizer steps (and mask-ratio horizon) for fusion runs"),
    ("eval_every", "validation interval in steps"),
    ("precision", "training precision: f32 or f64"),
    ("graph_checkpoint", "frozen graph encoder for fusion runs (default: <out>/graph/checkpoint.json)"),
    ("checkpoint", "checkpoint read by eval and export-embeddings (default: none, required there)"),
    ("split", "split used by eval and export-embeddings: train, val or test"),
    ("embedding", "embedding exported by export-embeddings: z_graph, z_vision, z_trans or z_rep"),
];

/// Keys whose values are taken verbatim as strings on the command line.
fn is_text_key(default: &Value) -> bool {
    matches!(default, Value::String(_) | Value::Null)
}

impl RunConfig {
    pub fn defaults_json() -> Map<String, Value> {
        match serde_json::to_value(RunConfig::default()).expect("config serializes") {
            Value::Object(map) => map,
            _ => unreachable!("config is a struct"),
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out.join("data"))
    }

    pub fn graph_checkpoint(&self) -> PathBuf {
        self.graph_checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("graph").join("checkpoint.json"))
    }

    pub fn run_dir(&self, kind: ExperimentKind) -> PathBuf {
        self.out.join(kind.as_str())
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            num_classes: self.num_classes,
            train: self.train,
            val: self.val,
            test: self.test,
            noise_level: self.noise_level,
            distractors: self.distractors,
            seed: self.seed,
        }
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            n_per_bone: self.n_per_bone,
            k: self.k,
            tau0_factor: self.tau0_factor,
            growth: self.growth,
        }
    }

    pub fn train_settings(&self, kind: ExperimentKind) -> TrainSettings {
        TrainSettings {
            seed: self.seed,
            num_classes: self.num_classes,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
            },
            batch_size: self.batch_size,
            steps: match kind {
                ExperimentKind::Graph => self.graph_steps,
                ExperimentKind::Vision => self.vision_steps,
                ExperimentKind::MmfClassic | ExperimentKind::MmfMim => self.fusion_steps,
            },
            eval_every: self.eval_every,
            graph_model: GraphModelConfig {
                widths: self.graph_widths.clone(),
                num_classes: self.num_classes,
                ..GraphModelConfig::default()
            },
            vision_model: VisionModelConfig {
                embed_dim: self.vision_embed_dim,
                num_classes: self.num_classes,
                ..VisionModelConfig::default()
            },
            temperature: self.temperature,
            lambda_ce: self.lambda_ce,
            lambda_info: self.lambda_info,
        }
    }
}

fn check_keys(map: &Map<String, Value>, source: &str) -> Result<()> {
    let known = RunConfig::defaults_json();
    for key in map.keys() {
        if !known.contains_key(key) {
            let suggestion = known
                .keys()
                .map(|k| (strsim::jaro_winkler(key, k), k))
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .filter(|(score, _)| *score > 0.7)
                .map(|(_, k)| format!("; did you mean `{k}`?"))
                .unwrap_or_default();
            return Err(Error::Config(format!("{source}: unknown key `{key}`{suggestion}")));
        }
    }
    Ok(())
}

/// Converts a command-line string into the JSON value for `key`, using the
/// type of the default to decide between text and JSON literals.
pub fn flag_value(key: &str, raw: &str) -> Result<Value> {
    let defaults = RunConfig::defaults_json();
    let default = defaults
        .get(key)
        .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
    if is_text_key(default) {
        return Ok(Value::String(raw.to_string()));
    }
    Ok(serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string())))
}

/// Layers defaults ← `MORPHOGRAPH_SEED` ← `file` ← `overrides`.
pub fn parse_config(file: Option<&Path>, overrides: &Map<String, Value>) -> Result<RunConfig> {
    let env_seed = std::env::var(SEED_ENV).ok();
    parse_layers(env_seed.as_deref(), file, overrides)
}

pub(crate) fn parse_layers(
    env_seed: Option<&str>,
    file: Option<&Path>,
    overrides: &Map<String, Value>,
) -> Result<RunConfig> {
    let mut merged = RunConfig::defaults_json();
    if let Some(raw) = env_seed {
        let seed: u64 = raw
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{raw}` is not an unsigned integer")))?;
        merged.insert("seed".into(), Value::from(seed));
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let layer: Map<String, Value> = if text.trim().is_empty() {
            Map::new()
        } else {
            match serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            {
                Value::Object(map) => map,
                _ => return Err(Error::Config(format!("{}: expected a JSON object", path.display()))),
            }
        };
        check_keys(&layer, &path.display().to_string())?;
        merged.extend(layer);
    }
    check_keys(overrides, "command line")?;
    merged.extend(overrides.clone());
    let text = Value::Object(merged).to_string();
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("`{path}`: {}", e.into_inner()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn empty_file_gives_defaults() {
        let f = file("");
        assert_eq!(parse_layers(None, Some(f.path()), &Map::new()).unwrap(), RunConfig::default());
        let f = file("{}");
        assert_eq!(parse_layers(None, Some(f.path()), &Map::new()).unwrap(), RunConfig::default());
    }

    #[test]
    fn flag_beats_file_beats_env() {
        let f = file(r#"{"seed": 3, "lambda_ce": 0.5}"#);
        let mut flags = Map::new();
        flags.insert("seed".into(), flag_value("seed", "7").unwrap());
        let cfg = parse_layers(Some("11"), Some(f.path()), &flags).unwrap();
        assert_eq!((cfg.seed, cfg.lambda_ce), (7, 0.5));
        let cfg = parse_layers(Some("11"), Some(f.path()), &Map::new()).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(parse_layers(Some("11"), None, &Map::new()).unwrap().seed, 11);
    }

    #[test]
    fn unknown_key_suggests() {
        let f = file(r#"{"lamda_ce": 0.5}"#);
        let err = parse_layers(None, Some(f.path()), &Map::new()).unwrap_err().to_string();
        assert!(err.contains("`lamda_ce`") && err.contains("`lambda_ce`"), "{err}");
    }

    #[test]
    fn type_error_names_path() {
        let f = file(r#"{"graph_widths": [16, "x"]}"#);
        let err = parse_layers(None, Some(f.path()), &Map::new()).unwrap_err().to_string();
        assert!(err.contains("graph_widths[1]"), "{err}");
        let mut flags = Map::new();
        flags.insert("batch_size".into(), flag_value("batch_size", "many").unwrap());
        let err = parse_layers(None, None, &flags).unwrap_err().to_string();
        assert!(err.contains("batch_size"), "{err}");
    }

    #[test]
    fn text_flags_and_derived_paths() {
        let mut flags = Map::new();
        flags.insert("out".into(), flag_value("out", "123").unwrap());
        flags.insert("precision".into(), flag_value("precision", "f64").unwrap());
        flags.insert("graph_widths".into(), flag_value("graph_widths", "[8,16]").unwrap());
        let cfg = parse_layers(None, None, &flags).unwrap();
        assert_eq!(cfg.out, PathBuf::from("123"));
        assert_eq!(cfg.precision, Precision::F64);
        assert_eq!(cfg.graph_widths, vec![8, 16]);
        assert_eq!(cfg.data_dir(), PathBuf::from("123/data"));
        assert_eq!(cfg.graph_checkpoint(), PathBuf::from("123/graph/checkpoint.json"));
    }

    #[test]
    fn every_key_is_documented_in_order() {
        let keys: Vec<String> = RunConfig::defaults_json().keys().cloned().collect();
        let docs: Vec<&str> = KEY_DOCS.iter().map(|(k, _)| *k).collect();
        assert_eq!(keys, docs);
    }
}
