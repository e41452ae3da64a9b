use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::generator::{generate_sample, template_masks, GeneratorConfig};
use super::pgm::GrayImage;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.jsonl";
pub const TEMPLATE_U: &str = "templates/template_u.pgm";
pub const TEMPLATE_L: &str = "templates/template_l.pgm";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split `{other}` (expected train, val or test)"
            ))),
        }
    }
}

/// One manifest line; paths are relative to the dataset directory and the
/// sample id is the line index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRow {
    pub image: String,
    pub mask_u: String,
    pub mask_l: String,
    pub candidates: Vec<String>,
    pub label: usize,
    pub split: Split,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes every split under `dir` and returns the manifest rows.
/// Labels cycle through the grades within each split.
pub fn generate_dataset(cfg: &GeneratorConfig, dir: &Path) -> Result<Vec<ManifestRow>> {
    cfg.validate()?;
    for sub in ["images", "masks", "candidates", "templates"] {
        create_dir(&dir.join(sub))?;
    }
    let (tu, tl) = template_masks(cfg)?;
    GrayImage::from_mask(&tu).write(&dir.join(TEMPLATE_U))?;
    GrayImage::from_mask(&tl).write(&dir.join(TEMPLATE_L))?;

    let splits = [(Split::Train, cfg.train), (Split::Val, cfg.val), (Split::Test, cfg.test)];
    let mut rows = Vec::new();
    let mut index = 0u64;
    for (split, count) in splits {
        for local in 0..count {
            let s = generate_sample(local % cfg.num_classes, cfg, index)?;
            let id = format!("{index:05}");
            let image = format!("images/{id}.pgm");
            let mask_u = format!("masks/{id}_u.pgm");
            let mask_l = format!("masks/{id}_l.pgm");
            s.image.write(&dir.join(&image))?;
            GrayImage::from_mask(&s.mask_u).write(&dir.join(&mask_u))?;
            GrayImage::from_mask(&s.mask_l).write(&dir.join(&mask_l))?;
            let mut candidates = Vec::new();
            for (k, c) in s.candidates.iter().enumerate() {
                let path = format!("candidates/{id}_{k}.pgm");
                GrayImage::from_mask(c).write(&dir.join(&path))?;
                candidates.push(path);
            }
            rows.push(ManifestRow {
                image,
                mask_u,
                mask_l,
                candidates,
                label: s.label,
                split,
            });
            index += 1;
        }
    }
    let path = dir.join(MANIFEST);
    let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for row in &rows {
        let line = serde_json::to_string(row)?;
        writeln!(file, "{line}").map_err(|e| Error::io(&path, e))?;
    }
    Ok(rows)
}

pub fn load_manifest(dir: &Path) -> Result<Vec<ManifestRow>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Prerequisite(format!(
                "no dataset at {}; run `gen-data` first",
                dir.display()
            ))
        } else {
            Error::io(&path, e)
        }
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use sha2::{Digest, Sha256};

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            train: 9,
            val: 3,
            test: 4,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn layout_balance_and_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = generate_dataset(&small(), dir.path()).unwrap();
        assert_eq!(rows.len(), 16);
        assert_eq!(load_manifest(dir.path()).unwrap(), rows);
        let train: Vec<_> = rows.iter().filter(|r| r.split == Split::Train).collect();
        for c in 0..3 {
            assert_eq!(train.iter().filter(|r| r.label == c).count(), 3);
        }
        for row in &rows {
            for p in [&row.image, &row.mask_u, &row.mask_l].into_iter().chain(&row.candidates) {
                GrayImage::read(&dir.path().join(p)).unwrap();
            }
        }
        let first = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        let keys: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
        let mut names: Vec<_> = keys.as_object().unwrap().keys().cloned().collect();
        names.sort();
        assert_eq!(names, ["candidates", "image", "label", "mask_l", "mask_u", "split"]);
    }

    #[test]
    fn rerun_gives_identical_manifest_and_rasters() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_dataset(&small(), a.path()).unwrap();
        generate_dataset(&small(), b.path()).unwrap();
        let digest = |dir: &Path| {
            let mut h = Sha256::new();
            for row in load_manifest(dir).unwrap() {
                h.update(fs::read(dir.join(&row.image)).unwrap());
            }
            h.update(fs::read(dir.join(MANIFEST)).unwrap());
            h.finalize()
        };
        assert_eq!(digest(a.path()), digest(b.path()));
    }

    #[test]
    fn small_split_rejected() {
        let cfg = GeneratorConfig {
            val: 2,
            ..small()
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(generate_dataset(&cfg, dir.path()).is_err());
    }

    #[test]
    fn missing_manifest_is_a_prerequisite_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_manifest(dir.path()), Err(Error::Prerequisite(_))));
    }
}
