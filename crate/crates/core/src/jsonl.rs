//! Line-delimited JSON persistence.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: malformed record: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: missing required field `{field}`")]
    Schema {
        path: PathBuf,
        line: usize,
        field: String,
    },
}

impl JsonlError {
    pub fn line(&self) -> Option<usize> {
        match self {
            JsonlError::Io { .. } => None,
            JsonlError::Parse { line, .. } | JsonlError::Schema { line, .. } => Some(*line),
        }
    }
}

/// A record together with its 1-based source line.
#[derive(Debug, Clone, PartialEq)]
pub struct Numbered<T> {
    pub line: usize,
    pub record: T,
}

/// Streaming reader over a JSONL file. Blank lines are skipped.
pub struct JsonlReader<T> {
    path: PathBuf,
    lines: io::Lines<BufReader<File>>,
    line: usize,
    _kind: PhantomData<T>,
}

impl<T: DeserializeOwned> JsonlReader<T> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, JsonlError> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|source| JsonlError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(JsonlReader {
            path,
            lines: BufReader::new(file).lines(),
            line: 0,
            _kind: PhantomData,
        })
    }
}

impl<T: DeserializeOwned> Iterator for JsonlReader<T> {
    type Item = Result<Numbered<T>, JsonlError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let raw = match self.lines.next()? {
                Ok(raw) => raw,
                Err(source) => {
                    return Some(Err(JsonlError::Io {
                        path: self.path.clone(),
                        source,
                    }))
                }
            };
            self.line += 1;
            if raw.trim().is_empty() {
                continue;
            }
            return Some(
                parse_line(&raw)
                    .map(|record| Numbered {
                        line: self.line,
                        record,
                    })
                    .map_err(|e| e.at(&self.path, self.line)),
            );
        }
    }
}

enum LineError {
    Parse(String),
    Missing(String),
}

impl LineError {
    fn at(self, path: &Path, line: usize) -> JsonlError {
        match self {
            LineError::Parse(reason) => JsonlError::Parse {
                path: path.to_path_buf(),
                line,
                reason,
            },
            LineError::Missing(field) => JsonlError::Schema {
                path: path.to_path_buf(),
                line,
                field,
            },
        }
    }
}

fn parse_line<T: DeserializeOwned>(raw: &str) -> Result<T, LineError> {
    serde_json::from_str(raw).map_err(|e| {
        let msg = e.to_string();
        match msg.strip_prefix("missing field `") {
            Some(rest) => LineError::Missing(rest.split('`').next().unwrap_or_default().to_string()),
            None => LineError::Parse(msg),
        }
    })
}

/// Reads every record of `path` in file order, failing on the first bad line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, JsonlError> {
    JsonlReader::open(path)?
        .map(|r| r.map(|n| n.record))
        .collect()
}

/// Writes one JSON object per line and returns the number written.
pub fn write_jsonl<'a, T, I>(path: impl AsRef<Path>, records: I) -> Result<usize, JsonlError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let path = path.as_ref();
    let io_err = |source| JsonlError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    let mut count = 0;
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(|e| io_err(e.into()))?;
        out.write_all(b"\n").map_err(io_err)?;
        count += 1;
    }
    out.flush().map_err(io_err)?;
    Ok(count)
}

/// Appends one record as a single line and flushes it.
pub fn append_jsonl<T: Serialize>(path: impl AsRef<Path>, record: &T) -> Result<(), JsonlError> {
    let path = path.as_ref();
    let io_err = |source| JsonlError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut line = serde_json::to_vec(record).map_err(|e| io_err(e.into()))?;
    line.push(b'\n');
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err)?;
    file.write_all(&line).map_err(io_err)?;
    file.flush().map_err(io_err)
}
