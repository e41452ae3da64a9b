//! Optimization, metrics, checkpoints and the four-way experiment runner.

mod adam;
mod bundle;
mod checkpoint;
mod data;
mod experiment;
mod metrics;
mod records;

pub use adam::{AdamConfig, AdamState};
pub use bundle::{EmbeddingKind, EVAL_CHUNK};
pub use checkpoint::{
    parse_json, Bundle, Checkpoint, ExperimentKind, ModelEntry, ParamArray, Precision,
    CHECKPOINT_VERSION,
};
pub use data::{build_graphs, graph_path, Dataset, Sample, GRAPH_DIR};
pub use experiment::{
    checkpoint_of, graph_embeddings, run_experiment, sub_seed, ExperimentOutput, TrainSettings,
};
pub use metrics::{argmax_rows, EvalReport};
pub use records::{read_records, write_records, TrainRecord};
