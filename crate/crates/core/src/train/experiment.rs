use log::info;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::bundle::EVAL_CHUNK;
use super::checkpoint::{Bundle, Checkpoint, ExperimentKind, ModelEntry, Precision, CHECKPOINT_VERSION};
use super::data::Dataset;
use super::metrics::{argmax_rows, EvalReport};
use super::records::TrainRecord;
use crate::error::{Error, Result};
use crate::fusion::{FusionModel, FusionModelConfig, MimConfig};
use crate::morphograph::{GraphModelConfig, MorphoGraph};
use crate::scalar::Scalar;
use crate::synth::Split;
use crate::tensor::{Tape, Tensor};
use crate::vision::{VisionModel, VisionModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub seed: u64,
    pub num_classes: usize,
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Optimizer steps; also the mask-ratio horizon of fusion runs.
    pub steps: usize,
    pub eval_every: usize,
    pub graph_model: GraphModelConfig,
    pub vision_model: VisionModelConfig,
    pub temperature: f64,
    pub lambda_ce: f64,
    pub lambda_info: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let mim = MimConfig::default();
        Self {
            seed: 0,
            num_classes: 3,
            adam: AdamConfig::default(),
            batch_size: 16,
            steps: 600,
            eval_every: 50,
            graph_model: GraphModelConfig::default(),
            vision_model: VisionModelConfig::default(),
            temperature: mim.temperature,
            lambda_ce: mim.lambda_ce,
            lambda_info: mim.lambda_info,
        }
    }
}

impl TrainSettings {
    fn mim(&self) -> MimConfig {
        MimConfig {
            temperature: self.temperature,
            lambda_ce: self.lambda_ce,
            lambda_info: self.lambda_info,
            total_steps: self.steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub checkpoint: Checkpoint,
    pub records: Vec<TrainRecord>,
    pub report: EvalReport,
}

/// Independent seed for one consumer of the run seed.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const STREAM_GRAPH: u64 = 1;
const STREAM_VISION: u64 = 2;
const STREAM_FUSION: u64 = 3;
const STREAM_BATCHES: u64 = 4;

/// Endless sequence of shuffled mini-batches; an incomplete tail is dropped.
struct Batches {
    pool: Vec<usize>,
    order: Vec<usize>,
    pos: usize,
    size: usize,
    rng: ChaCha8Rng,
}

impl Batches {
    fn new(pool: Vec<usize>, size: usize, seed: u64) -> Result<Self> {
        if pool.len() < size || size == 0 {
            return Err(Error::Config(format!(
                "batch size {size} does not fit a training split of {}",
                pool.len()
            )));
        }
        Ok(Self {
            order: Vec::new(),
            pos: usize::MAX,
            pool,
            size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.pos.saturating_add(self.size) > self.order.len() {
            self.order = self.pool.clone();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let batch = self.order[self.pos..self.pos + self.size].to_vec();
        self.pos += self.size;
        batch
    }
}

fn rows<T: Scalar>(table: &Tensor<T>, idx: &[usize]) -> Tensor<T> {
    let cols = table.shape()[1];
    let data = idx.iter().flat_map(|&i| table.row(i).iter().copied()).collect();
    Tensor::new(vec![idx.len(), cols], data).expect("row gather shape")
}

fn accuracy(logits: &Tensor<impl Scalar>, labels: &[usize]) -> f64 {
    let predicted = argmax_rows(logits.data(), logits.shape()[1]);
    let hits = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

/// Frozen graph embeddings of every sample, indexed by sample position.
pub fn graph_embeddings<T: Scalar>(graph: &MorphoGraph<T>, data: &Dataset) -> Result<Tensor<T>> {
    let all: Vec<usize> = (0..data.samples.len()).collect();
    let mut values = Vec::new();
    for chunk in all.chunks(EVAL_CHUNK) {
        let tape = Tape::new();
        let out = graph.forward(&graph.params.bind(&tape, false), &data.graphs(chunk)?)?;
        values.extend_from_slice(out.embedding.value().data());
    }
    Tensor::new(vec![all.len(), graph.config.embed_dim()], values)
}

struct Trainer<T: Scalar> {
    bundle: Bundle<T>,
    optimizers: Vec<AdamState<T>>,
    z_graph: Option<Tensor<T>>,
}

impl<T: Scalar> Trainer<T> {
    fn step(&mut self, data: &Dataset, idx: &[usize], step: usize, mim: &MimConfig) -> Result<TrainRecord> {
        let labels = data.labels(idx);
        let tape = Tape::new();
        let (grads, logits, record) = match &self.bundle {
            Bundle::Graph(g) => {
                let p = g.params.bind(&tape, true);
                let out = g.forward(&p, &data.graphs(idx)?)?;
                let loss = out.logits.softmax_cross_entropy(&labels)?;
                let grads = tape.backward(loss)?;
                let ce = loss.item().to_f64_lossless();
                (vec![p.gradients(&grads)], out.logits, single_record(step, ce))
            }
            Bundle::Vision(v) => {
                let p = v.params.bind(&tape, true);
                let out = v.forward(&p, &data.images(idx))?;
                let loss = out.logits.softmax_cross_entropy(&labels)?;
                let grads = tape.backward(loss)?;
                let ce = loss.item().to_f64_lossless();
                (vec![p.gradients(&grads)], out.logits, single_record(step, ce))
            }
            Bundle::Fusion {
                mode,
                vision,
                fusion,
                ..
            } => {
                let cache = self.z_graph.as_ref().expect("fusion trainer has cached graph embeddings");
                let zg = tape.constant(rows(cache, idx));
                let pv = vision.params.bind(&tape, true);
                let pf = fusion.params.bind(&tape, true);
                let zv = vision.forward(&pv, &data.images(idx))?.embedding;
                let out = fusion.forward(&pf, zv, zg, &labels, *mode, step, mim)?;
                let grads = tape.backward(out.loss)?;
                let t = out.terms;
                let record = TrainRecord {
                    step,
                    loss_total: t.total,
                    loss_ce: t.ce,
                    loss_infonce: Some(t.infonce),
                    loss_mse: Some(t.mse),
                    mask_ratio: Some(t.mask_ratio),
                    train_acc: 0.0,
                    val_acc: None,
                };
                (vec![pv.gradients(&grads), pf.gradients(&grads)], out.logits, record)
            }
        };
        let train_acc = accuracy(&logits.value(), &labels);
        let stores = stores_mut(&mut self.bundle);
        for ((store, opt), g) in stores.into_iter().zip(&mut self.optimizers).zip(&grads) {
            opt.step(store, g)?;
        }
        Ok(TrainRecord { train_acc, ..record })
    }

    fn validation_accuracy(&self, data: &Dataset, val: &[usize]) -> Result<f64> {
        let mut hits = 0;
        for chunk in val.chunks(EVAL_CHUNK) {
            let cached = self.z_graph.as_ref().map(|z| rows(z, chunk));
            let out = self.bundle.forward(data, chunk, cached.as_ref())?;
            let predicted = argmax_rows(out.logits.data(), data.num_classes);
            hits += predicted
                .iter()
                .zip(chunk)
                .filter(|(p, &i)| **p == data.samples[i].label)
                .count();
        }
        Ok(hits as f64 / val.len() as f64)
    }
}

fn single_record(step: usize, ce: f64) -> TrainRecord {
    TrainRecord {
        step,
        loss_total: ce,
        loss_ce: ce,
        loss_infonce: None,
        loss_mse: None,
        mask_ratio: None,
        train_acc: 0.0,
        val_acc: None,
    }
}

/// Trainable stores in optimizer order; the frozen graph encoder of a
/// fusion bundle is never handed out.
fn stores_mut<T: Scalar>(bundle: &mut Bundle<T>) -> Vec<&mut crate::nn::ParamStore<T>> {
    match bundle {
        Bundle::Graph(g) => vec![&mut g.params],
        Bundle::Vision(v) => vec![&mut v.params],
        Bundle::Fusion { vision, fusion, .. } => vec![&mut vision.params, &mut fusion.params],
    }
}

fn stores<T: Scalar>(bundle: &Bundle<T>) -> Vec<&crate::nn::ParamStore<T>> {
    match bundle {
        Bundle::Graph(g) => vec![&g.params],
        Bundle::Vision(v) => vec![&v.params],
        Bundle::Fusion { vision, fusion, .. } => vec![&vision.params, &fusion.params],
    }
}

fn precision_of<T: Scalar>() -> Precision {
    if std::mem::size_of::<T>() == 4 {
        Precision::F32
    } else {
        Precision::F64
    }
}

/// Builds a checkpoint for `bundle`.
pub fn checkpoint_of<T: Scalar>(bundle: &Bundle<T>, kind: ExperimentKind, best_step: usize, best_val_acc: f64) -> Checkpoint {
    let mut ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        kind,
        precision: precision_of::<T>(),
        num_classes: bundle.num_classes(),
        best_step,
        best_val_acc,
        graph: None,
        vision: None,
        fusion: None,
        graph_fingerprint: None,
    };
    match bundle {
        Bundle::Graph(g) => ckpt.graph = Some(ModelEntry::new(&g.config, &g.params)),
        Bundle::Vision(v) => ckpt.vision = Some(ModelEntry::new(&v.config, &v.params)),
        Bundle::Fusion {
            graph,
            vision,
            fusion,
            ..
        } => {
            ckpt.graph = Some(ModelEntry::new(&graph.config, &graph.params));
            ckpt.vision = Some(ModelEntry::new(&vision.config, &vision.params));
            ckpt.fusion = Some(ModelEntry::new(&fusion.config, &fusion.params));
            ckpt.graph_fingerprint = Some(graph.params.fingerprint());
        }
    }
    ckpt
}

fn initial_bundle<T: Scalar>(
    kind: ExperimentKind,
    settings: &TrainSettings,
    frozen_graph: Option<&Checkpoint>,
) -> Result<Bundle<T>> {
    let graph_cfg = GraphModelConfig {
        num_classes: settings.num_classes,
        ..settings.graph_model.clone()
    };
    let vision_cfg = VisionModelConfig {
        num_classes: settings.num_classes,
        ..settings.vision_model.clone()
    };
    Ok(match kind {
        ExperimentKind::Graph => Bundle::Graph(MorphoGraph::new(graph_cfg, sub_seed(settings.seed, STREAM_GRAPH))?),
        ExperimentKind::Vision => Bundle::Vision(VisionModel::new(vision_cfg, sub_seed(settings.seed, STREAM_VISION))?),
        ExperimentKind::MmfClassic | ExperimentKind::MmfMim => {
            let ckpt = frozen_graph.ok_or_else(|| {
                Error::Prerequisite(format!(
                    "{kind} needs a trained graph encoder; run `train-graph` first"
                ))
            })?;
            let graph = match ckpt.bundle::<T>()? {
                Bundle::Graph(g) => g,
                _ => {
                    return Err(Error::Prerequisite(format!(
                        "{kind} needs a graph checkpoint, got a {} checkpoint",
                        ckpt.kind
                    )))
                }
            };
            let fusion_cfg = FusionModelConfig {
                vision_dim: vision_cfg.embed_dim,
                graph_dim: graph.config.embed_dim(),
                num_classes: settings.num_classes,
            };
            Bundle::Fusion {
                mode: kind.fusion_mode().expect("fusion kind"),
                graph,
                vision: VisionModel::new(vision_cfg, sub_seed(settings.seed, STREAM_VISION))?,
                fusion: FusionModel::new(fusion_cfg, sub_seed(settings.seed, STREAM_FUSION))?,
            }
        }
    })
}

/// Trains `kind`, keeps the parameters with the best validation accuracy
/// and evaluates them once on the test split.
pub fn run_experiment<T: Scalar>(
    kind: ExperimentKind,
    data: &Dataset,
    settings: &TrainSettings,
    frozen_graph: Option<&Checkpoint>,
) -> Result<ExperimentOutput> {
    if settings.steps == 0 || settings.eval_every == 0 {
        return Err(Error::Config("steps and eval_every must be ≥ 1".into()));
    }
    if data.num_classes != settings.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, settings say {}",
            data.num_classes, settings.num_classes
        )));
    }
    let train = data.indices(Split::Train);
    let val = data.indices(Split::Val);
    if train.is_empty() || val.is_empty() {
        return Err(Error::Contract("training needs non-empty train and val splits".into()));
    }
    let bundle = initial_bundle::<T>(kind, settings, frozen_graph)?;
    let z_graph = match &bundle {
        Bundle::Fusion { graph, .. } => Some(graph_embeddings(graph, data)?),
        _ => None,
    };
    let optimizers = stores(&bundle)
        .into_iter()
        .map(|s| AdamState::new(settings.adam.clone(), s))
        .collect::<Result<Vec<_>>>()?;
    let mut trainer = Trainer {
        bundle,
        optimizers,
        z_graph,
    };
    let mut batches = Batches::new(train, settings.batch_size, sub_seed(settings.seed, STREAM_BATCHES))?;
    let mim = settings.mim();
    let mut records = Vec::with_capacity(settings.steps);
    let mut best: Option<(f64, usize, Bundle<T>)> = None;
    for step in 0..settings.steps {
        let idx = batches.next_batch();
        let mut record = trainer.step(data, &idx, step, &mim)?;
        if (step + 1) % settings.eval_every == 0 || step + 1 == settings.steps {
            let acc = trainer.validation_accuracy(data, &val)?;
            record.val_acc = Some(acc);
            info!("{kind} step {step}: loss {:.4} val_acc {acc:.4}", record.loss_total);
            if best.as_ref().map_or(true, |(b, _, _)| acc > *b) {
                best = Some((acc, step, trainer.bundle.clone()));
            }
        }
        records.push(record);
    }
    let (best_val, best_step, best_bundle) = best.expect("at least one evaluation");
    let report = best_bundle.evaluate(data, Split::Test)?;
    info!("{kind} test accuracy {:.4} macro-F1 {:.4}", report.accuracy, report.macro_f1);
    Ok(ExperimentOutput {
        checkpoint: checkpoint_of(&best_bundle, kind, best_step, best_val),
        records,
        report,
    })
}
