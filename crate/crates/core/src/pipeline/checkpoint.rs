use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::marker::PhantomData;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::PipelineError;

#[derive(Serialize, Deserialize)]
struct Entry<T> {
    example_id: String,
    fingerprint: String,
    outcome: T,
}

/// Append-only JSONL of finished examples keyed by example id. A torn last
/// line (the process died mid-write) is dropped on reopen.
pub struct Checkpoint<T> {
    path: PathBuf,
    fingerprint: String,
    writer: Mutex<File>,
    _outcome: PhantomData<fn(T)>,
}

impl<T: Serialize + DeserializeOwned> Checkpoint<T> {
    /// Opens or creates the checkpoint and returns the outcomes already in
    /// it. Entries written under a different fingerprint are a config error.
    pub fn open(path: &Path, fingerprint: &str) -> Result<(Self, HashMap<String, T>), PipelineError> {
        let io = |e: std::io::Error| PipelineError::Io(format!("{}: {e}", path.display()));
        let mut done = HashMap::new();
        if path.exists() {
            let bytes = std::fs::read(path).map_err(io)?;
            let mut offset = 0usize;
            let mut line_no = 0usize;
            let mut keep = 0usize;
            while offset < bytes.len() {
                line_no += 1;
                let end = bytes[offset..].iter().position(|b| *b == b'\n').map(|p| offset + p);
                let line = &bytes[offset..end.unwrap_or(bytes.len())];
                let next = end.map_or(bytes.len(), |e| e + 1);
                if line.iter().all(u8::is_ascii_whitespace) {
                    offset = next;
                    keep = next;
                    continue;
                }
                match serde_json::from_slice::<Entry<T>>(line) {
                    Ok(entry) => {
                        if entry.fingerprint != fingerprint {
                            return Err(PipelineError::Config(format!(
                                "{}: checkpoint was written with a different configuration",
                                path.display()
                            )));
                        }
                        done.entry(entry.example_id).or_insert(entry.outcome);
                        keep = next;
                    }
                    Err(e) if next >= bytes.len() => {
                        log::warn!("{}: dropping torn final line {line_no}: {e}", path.display());
                        break;
                    }
                    Err(e) => {
                        return Err(PipelineError::Data(format!("{}:{line_no}: {e}", path.display())));
                    }
                }
                offset = next;
            }
            if keep < bytes.len() {
                let f = OpenOptions::new().write(true).open(path).map_err(io)?;
                f.set_len(keep as u64).map_err(io)?;
            }
        }
        let writer = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok((
            Checkpoint {
                path: path.to_path_buf(),
                fingerprint: fingerprint.to_string(),
                writer: Mutex::new(writer),
                _outcome: PhantomData,
            },
            done,
        ))
    }

    pub fn append(&self, example_id: &str, outcome: &T) -> Result<(), PipelineError> {
        let entry = Entry {
            example_id: example_id.to_string(),
            fingerprint: self.fingerprint.clone(),
            outcome,
        };
        let mut line = serde_json::to_vec(&entry).map_err(|e| PipelineError::Data(e.to_string()))?;
        line.push(b'\n');
        let mut w = self.writer.lock().expect("checkpoint lock poisoned");
        w.write_all(&line)
            .and_then(|_| w.flush())
            .map_err(|e| PipelineError::Io(format!("{}: {e}", self.path.display())))
    }
}
