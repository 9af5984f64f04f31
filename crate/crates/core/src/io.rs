//! JSONL readers and writers for datasets and model outputs.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::domain::{validate_sample, GroundingSample};
use crate::error::SampleError;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: {source}")]
    Sample {
        path: PathBuf,
        line: usize,
        #[source]
        source: SampleError,
    },
}

/// Parses each non-blank line of `path` as a JSON value of type `T`.
/// Returns `(line_number, value)` pairs.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(line).map_err(|e| LoadError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

/// Reads and validates a dataset file.
pub fn read_dataset(path: &Path) -> Result<Vec<GroundingSample>, LoadError> {
    read_jsonl::<Map<String, Value>>(path)?
        .into_iter()
        .map(|(line, rec)| {
            validate_sample(&rec).map_err(|source| LoadError::Sample {
                path: path.to_path_buf(),
                line,
                source,
            })
        })
        .collect()
}

/// One line of an outputs file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputRecord {
    pub sample_id: String,
    pub output: String,
}

pub fn read_outputs(path: &Path) -> Result<Vec<OutputRecord>, LoadError> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

pub fn sample_line(sample: &GroundingSample) -> String {
    let mut line = Value::Object(sample.to_record()).to_string();
    line.push('\n');
    line
}

pub fn write_jsonl<T: Serialize>(mut w: impl Write, items: impl IntoIterator<Item = T>) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}
