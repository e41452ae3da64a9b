//! Command dispatch shared by the binary and the tests.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::synth::generate_dataset;
use crate::train::{
    build_graphs, run_experiment, write_records, Checkpoint, Dataset, EmbeddingKind, EvalReport, ExperimentKind,
    ExperimentOutput, Precision,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    BuildGraphs,
    TrainGraph,
    TrainVision,
    TrainMmf,
    TrainMmfMim,
    Eval,
    ExportEmbeddings,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::GenData,
        Command::BuildGraphs,
        Command::TrainGraph,
        Command::TrainVision,
        Command::TrainMmf,
        Command::TrainMmfMim,
        Command::Eval,
        Command::ExportEmbeddings,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::BuildGraphs => "build-graphs",
            Command::TrainGraph => "train-graph",
            Command::TrainVision => "train-vision",
            Command::TrainMmf => "train-mmf",
            Command::TrainMmfMim => "train-mmf-mim",
            Command::Eval => "eval",
            Command::ExportEmbeddings => "export-embeddings",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            Command::GenData => "generate the synthetic radiograph dataset",
            Command::BuildGraphs => "build a joint graph for every sample",
            Command::TrainGraph => "train the graph encoder",
            Command::TrainVision => "train the image-only baseline",
            Command::TrainMmf => "train classic fusion on a frozen graph encoder",
            Command::TrainMmfMim => "train masked-interaction fusion on a frozen graph encoder",
            Command::Eval => "evaluate a checkpoint on one split",
            Command::ExportEmbeddings => "write one embedding per sample as CSV",
        }
    }

    fn experiment(self) -> Option<ExperimentKind> {
        match self {
            Command::TrainGraph => Some(ExperimentKind::Graph),
            Command::TrainVision => Some(ExperimentKind::Vision),
            Command::TrainMmf => Some(ExperimentKind::MmfClassic),
            Command::TrainMmfMim => Some(ExperimentKind::MmfMim),
            _ => None,
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let names: Vec<_> = Command::ALL.iter().map(|c| c.name()).collect();
            Error::Config(format!("unknown command `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    command: &'a str,
    config: &'a RunConfig,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_echo(dir: &Path, command: Command, cfg: &RunConfig) -> Result<()> {
    let echo = ConfigEcho {
        command: command.name(),
        config: cfg,
    };
    write_text(&dir.join("config.json"), &serde_json::to_string_pretty(&echo)?)
}

fn report_json(report: &EvalReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

/// Runs `command` and returns a one-line summary.
pub fn run(command: Command, cfg: &RunConfig) -> Result<String> {
    if let Some(kind) = command.experiment() {
        return train(command, kind, cfg);
    }
    match command {
        Command::GenData => {
            let dir = cfg.data_dir();
            let rows = generate_dataset(&cfg.generator(), &dir)?;
            write_echo(&dir, command, cfg)?;
            Ok(format!("wrote {} samples to {}", rows.len(), dir.display()))
        }
        Command::BuildGraphs => {
            let dir = cfg.data_dir();
            let n = build_graphs(&dir, &cfg.graph_config())?;
            Ok(format!("built {n} graphs in {}", dir.display()))
        }
        Command::Eval => {
            let (ckpt, data) = load_checkpoint_and_data(cfg)?;
            let report = match ckpt.precision {
                Precision::F32 => ckpt.bundle::<f32>()?.evaluate(&data, cfg.split)?,
                Precision::F64 => ckpt.bundle::<f64>()?.evaluate(&data, cfg.split)?,
            };
            let dir = cfg.out.join("eval");
            create_dir(&dir)?;
            let path = dir.join(format!("{}_{}.json", ckpt.kind, cfg.split));
            write_text(&path, &report_json(&report)?)?;
            write_echo(&dir, command, cfg)?;
            Ok(format!(
                "{} on {}: accuracy {:.4} macro-F1 {:.4} -> {}",
                ckpt.kind,
                cfg.split,
                report.accuracy,
                report.macro_f1,
                path.display()
            ))
        }
        Command::ExportEmbeddings => {
            let which: EmbeddingKind = cfg.embedding.parse()?;
            let (ckpt, data) = load_checkpoint_and_data(cfg)?;
            let csv = match ckpt.precision {
                Precision::F32 => ckpt.bundle::<f32>()?.export_embeddings(&data, cfg.split, which)?,
                Precision::F64 => ckpt.bundle::<f64>()?.export_embeddings(&data, cfg.split, which)?,
            };
            let dir = cfg.out.join("embeddings");
            create_dir(&dir)?;
            let path = dir.join(format!("{}_{}_{which}.csv", ckpt.kind, cfg.split));
            write_text(&path, &csv)?;
            write_echo(&dir, command, cfg)?;
            Ok(format!("wrote {} rows to {}", csv.lines().count().saturating_sub(1), path.display()))
        }
        _ => unreachable!("training commands handled above"),
    }
}

fn load_checkpoint_and_data(cfg: &RunConfig) -> Result<(Checkpoint, Dataset)> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs --checkpoint".into()))?;
    let ckpt = Checkpoint::load(path)?;
    let data = Dataset::load(&cfg.data_dir(), ckpt.num_classes)?;
    Ok((ckpt, data))
}

fn frozen_graph(cfg: &RunConfig) -> Result<Checkpoint> {
    let path = cfg.graph_checkpoint();
    if !path.exists() {
        return Err(Error::Prerequisite(format!(
            "graph checkpoint {} not found; run `train-graph` first",
            path.display()
        )));
    }
    let ckpt = Checkpoint::load(&path)?;
    if ckpt.kind != ExperimentKind::Graph {
        return Err(Error::Config(format!(
            "{} holds a {} checkpoint, not a graph encoder",
            path.display(),
            ckpt.kind
        )));
    }
    Ok(ckpt)
}

fn experiment<T: Scalar>(kind: ExperimentKind, cfg: &RunConfig, data: &Dataset, frozen: Option<&Checkpoint>) -> Result<ExperimentOutput> {
    run_experiment::<T>(kind, data, &cfg.train_settings(kind), frozen)
}

fn train(command: Command, kind: ExperimentKind, cfg: &RunConfig) -> Result<String> {
    let frozen = match kind.fusion_mode() {
        Some(_) => Some(frozen_graph(cfg)?),
        None => None,
    };
    let data = Dataset::load(&cfg.data_dir(), cfg.num_classes)?;
    info!("{kind}: {} samples, precision {}", data.samples.len(), cfg.precision);
    let out = match cfg.precision {
        Precision::F32 => experiment::<f32>(kind, cfg, &data, frozen.as_ref())?,
        Precision::F64 => experiment::<f64>(kind, cfg, &data, frozen.as_ref())?,
    };
    let dir = cfg.run_dir(kind);
    create_dir(&dir)?;
    out.checkpoint.save(&dir.join("checkpoint.json"))?;
    write_records(&dir.join("records.csv"), &out.records)?;
    write_text(&dir.join("report.json"), &report_json(&out.report)?)?;
    write_echo(&dir, command, cfg)?;
    Ok(format!(
        "{kind}: test accuracy {:.4} macro-F1 {:.4} (best val {:.4} at step {}) -> {}",
        out.report.accuracy,
        out.report.macro_f1,
        out.checkpoint.best_val_acc,
        out.checkpoint.best_step,
        dir.display()
    ))
}

/// Paths written by a training command.
pub fn run_outputs(cfg: &RunConfig, kind: ExperimentKind) -> [PathBuf; 4] {
    let dir = cfg.run_dir(kind);
    ["checkpoint.json", "records.csv", "report.json", "config.json"].map(|f| dir.join(f))
}
