use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ipc::{parse_ipc, IpcCode};
use super::PatentRecord;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextEncoding {
    #[default]
    Utf8,
    Gbk,
}

impl TextEncoding {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "utf-8" | "utf8" => Some(TextEncoding::Utf8),
            "gbk" | "gb2312" | "gb18030" => Some(TextEncoding::Gbk),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            TextEncoding::Utf8 => "utf-8",
            TextEncoding::Gbk => "gbk",
        }
    }
}

/// Where the label lives in the CSV.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LabelColumns {
    /// One column with a full or truncated IPC code.
    Ipc(String),
    /// Pre-split section and class columns (`YL1`=`B`, `YL2`=`65`).
    Levels { section: String, class: String },
}

#[derive(Clone, Debug)]
pub struct IngestOptions {
    pub encoding: TextEncoding,
    pub delimiter: u8,
    pub abstract_column: String,
    pub label: LabelColumns,
    /// Column used as record id; row numbers are used when absent.
    pub id_column: Option<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            encoding: TextEncoding::Utf8,
            delimiter: b',',
            abstract_column: "摘要".to_string(),
            label: LabelColumns::Ipc("专利分类".to_string()),
            id_column: Some("申请号".to_string()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub accepted: usize,
    /// Rows dropped for a malformed label or an empty abstract.
    pub rejected: usize,
    pub rejected_ipc: usize,
    pub rejected_abstract: usize,
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub records: Vec<PatentRecord>,
    pub stats: IngestStats,
}

pub fn ingest_csv(path: &Path, opts: &IngestOptions) -> Result<Ingested> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ingest_bytes(&bytes, opts)
}

pub fn decode(bytes: &[u8], encoding: TextEncoding) -> Result<String> {
    match encoding {
        TextEncoding::Utf8 => {
            let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
            String::from_utf8(bytes.to_vec()).map_err(|e| Error::Decode {
                encoding: encoding.name(),
                detail: format!("invalid byte sequence at offset {}", e.utf8_error().valid_up_to()),
            })
        }
        TextEncoding::Gbk => encoding_rs::GBK
            .decode_without_bom_handling_and_without_replacement(bytes)
            .map(|s| s.into_owned())
            .ok_or_else(|| Error::Decode {
                encoding: encoding.name(),
                detail: "invalid GBK byte sequence".to_string(),
            }),
    }
}

pub fn ingest_bytes(bytes: &[u8], opts: &IngestOptions) -> Result<Ingested> {
    let text = decode(bytes, opts.encoding)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let abstract_idx = column(&opts.abstract_column)?;
    enum Label {
        Ipc(usize),
        Levels(usize, usize),
    }
    let label = match &opts.label {
        LabelColumns::Ipc(c) => Label::Ipc(column(c)?),
        LabelColumns::Levels { section, class } => Label::Levels(column(section)?, column(class)?),
    };
    let id_idx = opts.id_column.as_deref().and_then(|c| column(c).ok());

    let mut records = Vec::new();
    let mut stats = IngestStats::default();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let code: Result<IpcCode> = match label {
            Label::Ipc(i) => parse_ipc(field(i)),
            Label::Levels(s, c) => IpcCode::from_levels(field(s), field(c)),
        };
        let Ok(ipc) = code else {
            stats.rejected_ipc += 1;
            continue;
        };
        let abstract_text = field(abstract_idx).trim();
        if abstract_text.is_empty() {
            stats.rejected_abstract += 1;
            continue;
        }
        let id = id_idx
            .map(|i| field(i).trim().to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| format!("row-{row}"));
        records.push(PatentRecord {
            id,
            abstract_text: abstract_text.to_string(),
            ipc,
        });
    }
    stats.accepted = records.len();
    stats.rejected = stats.rejected_ipc + stats.rejected_abstract;
    Ok(Ingested { records, stats })
}
