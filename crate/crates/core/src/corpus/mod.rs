//! Patent records, IPC labels, taxonomy census, splitting and synthetic data.

mod ingest;
mod ipc;
mod synthetic;
mod taxonomy;

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use ingest::{decode, ingest_bytes, ingest_csv, IngestOptions, IngestStats, Ingested, LabelColumns, TextEncoding};
pub use ipc::{parse_ipc, IpcCode};
pub use synthetic::{generate_synthetic, SyntheticSpec, KEYWORDS_PER_CLASS};
pub use taxonomy::LabelTaxonomy;

use crate::error::{Error, Result};
use crate::rng::seeded;

/// One labeled abstract.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatentRecord {
    pub id: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub ipc: IpcCode,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<PatentRecord>,
    pub test: Vec<PatentRecord>,
    pub seed: u64,
}

/// Shuffles with the seeded generator, then puts the first
/// `round(ratio · n)` records in the training part.
pub fn split(records: &[PatentRecord], ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut seeded(seed));
    let n_train = ((ratio * records.len() as f64).round() as usize).min(records.len());
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect();
    Ok(DatasetSplit {
        train: pick(&order[..n_train]),
        test: pick(&order[n_train..]),
        seed,
    })
}

/// Writes one JSON object `{id, abstract, ipc}` per line.
pub fn write_jsonl(path: &Path, records: &[PatentRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<PatentRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PatentRecord = serde_json::from_str(&line)?;
        if rec.abstract_text.trim().is_empty() {
            return Err(Error::InvalidConfig(format!("record {} has an empty abstract", rec.id)));
        }
        out.push(rec);
    }
    Ok(out)
}
