//! JSON-lines reading and writing.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Open { path: String, source: std::io::Error },
    /// `line` is 1-based.
    #[error("{path}:{line}: {message}")]
    Malformed { path: String, line: usize, message: String },
}

/// Parses one value per non-blank line.
pub fn read_jsonl_from<T: DeserializeOwned>(reader: impl BufRead, name: &str) -> Result<Vec<T>, IoError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IoError::Malformed {
            path: name.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| IoError::Malformed {
            path: name.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let name = path.display().to_string();
    let file = File::open(path).map_err(|source| IoError::Open {
        path: name.clone(),
        source,
    })?;
    read_jsonl_from(BufReader::new(file), &name)
}

pub fn write_jsonl_to<T: Serialize>(mut writer: impl Write, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), IoError> {
    let open_err = |source| IoError::Open {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(open_err)?;
    write_jsonl_to(BufWriter::new(file), items).map_err(open_err)
}
