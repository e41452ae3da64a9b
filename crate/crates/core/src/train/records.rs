use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One optimizer step. Alignment columns are empty for single-modality runs;
/// `val_acc` is filled on evaluation steps only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss_total: f64,
    pub loss_ce: f64,
    pub loss_infonce: Option<f64>,
    pub loss_mse: Option<f64>,
    pub mask_ratio: Option<f64>,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

pub fn write_records(path: &Path, records: &[TrainRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| with_path(path, e))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<TrainRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| with_path(path, e))?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn with_path(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip() {
        let records = vec![
            TrainRecord {
                step: 0,
                loss_total: 1.0986122886681098,
                loss_ce: 1.0986122886681098,
                loss_infonce: None,
                loss_mse: None,
                mask_ratio: None,
                train_acc: 0.3125,
                val_acc: None,
            },
            TrainRecord {
                step: 1,
                loss_total: 0.1 + 0.2,
                loss_ce: 0.5,
                loss_infonce: Some(2.0794415416798357),
                loss_mse: Some(0.0),
                mask_ratio: Some(0.998),
                train_acc: 1.0,
                val_acc: Some(0.75),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");
        write_records(&path, &records).unwrap();
        assert_eq!(read_records(&path).unwrap(), records);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "step,loss_total,loss_ce,loss_infonce,loss_mse,mask_ratio,train_acc,val_acc\n"
        ));
    }
}
