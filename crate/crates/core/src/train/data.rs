use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{build_joint_graph, select_mask, GraphConfig, JointGraph};
use crate::morphograph::GraphBatch;
use crate::scalar::Scalar;
use crate::synth::{
    generate_sample, load_manifest, template_masks, GeneratorConfig, GrayImage, Split, SIDE,
    TEMPLATE_L, TEMPLATE_U,
};
use crate::tensor::Tensor;

pub const GRAPH_DIR: &str = "graphs";

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub label: usize,
    pub split: Split,
    /// Row-major `SIDE×SIDE` pixels.
    pub image: Vec<u8>,
    pub graph: JointGraph,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
}

pub fn graph_path(data_dir: &Path, id: usize) -> PathBuf {
    data_dir.join(GRAPH_DIR).join(format!("{id:05}.json"))
}

/// Selects both bone masks from each sample's candidates by template IoU,
/// builds the joint graph and caches it as JSON. Returns the sample count.
pub fn build_graphs(data_dir: &Path, cfg: &GraphConfig) -> Result<usize> {
    let rows = load_manifest(data_dir)?;
    let read_mask = |rel: &str| GrayImage::read(&data_dir.join(rel)).map(|img| img.to_mask());
    let tu = read_mask(TEMPLATE_U)?;
    let tl = read_mask(TEMPLATE_L)?;
    let dir = data_dir.join(GRAPH_DIR);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (id, row) in rows.iter().enumerate() {
        let candidates = row
            .candidates
            .iter()
            .map(|p| read_mask(p))
            .collect::<Result<Vec<_>>>()?;
        let (_, mask_u) = select_mask(&candidates, &tu)?;
        let (_, mask_l) = select_mask(&candidates, &tl)?;
        let graph = build_joint_graph(mask_u, mask_l, cfg)
            .map_err(|e| Error::Geometry(format!("sample {id}: {e}")))?;
        let path = graph_path(data_dir, id);
        fs::write(&path, graph.to_json()?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(rows.len())
}

impl Dataset {
    /// Reads the manifest, images and cached graphs of `data_dir`.
    pub fn load(data_dir: &Path, num_classes: usize) -> Result<Self> {
        let rows = load_manifest(data_dir)?;
        let mut samples = Vec::with_capacity(rows.len());
        for (id, row) in rows.into_iter().enumerate() {
            let gpath = graph_path(data_dir, id);
            let text = fs::read_to_string(&gpath).map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    Error::Prerequisite(format!(
                        "graph cache {} is missing; run `build-graphs` first",
                        gpath.display()
                    ))
                } else {
                    Error::io(&gpath, e)
                }
            })?;
            let image = GrayImage::read(&data_dir.join(&row.image))?;
            if image.width != SIDE || image.height != SIDE {
                return Err(Error::Format(format!("{}: expected {SIDE}×{SIDE}", row.image)));
            }
            samples.push(Sample {
                id,
                label: row.label,
                split: row.split,
                image: image.pixels,
                graph: JointGraph::from_json(&text)?,
            });
        }
        Self::new(samples, num_classes)
    }

    pub fn new(samples: Vec<Sample>, num_classes: usize) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.label >= num_classes) {
            return Err(Error::Label {
                label: s.label,
                classes: num_classes,
            });
        }
        Ok(Self {
            samples,
            num_classes,
        })
    }

    /// In-memory equivalent of generating, selecting and graph building.
    pub fn synthetic(gen: &GeneratorConfig, graph_cfg: &GraphConfig) -> Result<Self> {
        gen.validate()?;
        let (tu, tl) = template_masks(gen)?;
        let mut samples = Vec::new();
        let mut id = 0;
        for (split, count) in [(Split::Train, gen.train), (Split::Val, gen.val), (Split::Test, gen.test)] {
            for local in 0..count {
                let s = generate_sample(local % gen.num_classes, gen, id as u64)?;
                let (_, mask_u) = select_mask(&s.candidates, &tu)?;
                let (_, mask_l) = select_mask(&s.candidates, &tl)?;
                samples.push(Sample {
                    id,
                    label: s.label,
                    split,
                    graph: build_joint_graph(mask_u, mask_l, graph_cfg)?,
                    image: s.image.pixels,
                });
                id += 1;
            }
        }
        Self::new(samples, gen.num_classes)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len())
            .filter(|&i| self.samples[i].split == split)
            .collect()
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.samples[i].label).collect()
    }

    /// `[B×1×SIDE×SIDE]` with pixels scaled to `[0, 1]`.
    pub fn images<T: Scalar>(&self, idx: &[usize]) -> Tensor<T> {
        let scale = T::of(1.0 / 255.0);
        let data = idx
            .iter()
            .flat_map(|&i| self.samples[i].image.iter().map(move |&p| T::of(p as f64) * scale))
            .collect();
        Tensor::new(vec![idx.len(), 1, SIDE, SIDE], data).expect("image batch shape")
    }

    pub fn graphs<T: Scalar>(&self, idx: &[usize]) -> Result<GraphBatch<T>> {
        let graphs: Vec<&JointGraph> = idx.iter().map(|&i| &self.samples[i].graph).collect();
        GraphBatch::new(&graphs)
    }
}
