use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use thiserror::Error;

use super::AuditAnnotation;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("annotation store {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("annotation store {path} line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Append-only JSON Lines log of annotations. A write returns only after
/// the line has reached the disk.
pub struct AnnotationStore {
    path: PathBuf,
    file: Mutex<File>,
    records: RwLock<Vec<AuditAnnotation>>,
}

impl AnnotationStore {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let io = |source| StoreError::Io {
            path: path.into(),
            source,
        };
        let mut records = Vec::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(io)?;
            for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                records.push(serde_json::from_str(line).map_err(|e| StoreError::Malformed {
                    path: path.into(),
                    line: k + 1,
                    message: e.to_string(),
                })?);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(Self {
            path: path.into(),
            file: Mutex::new(file),
            records: RwLock::new(records),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, annotation: AuditAnnotation) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(&annotation).expect("annotation serializes");
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        let io = |source| StoreError::Io {
            path: self.path.clone(),
            source,
        };
        file.write_all(line.as_bytes()).map_err(io)?;
        file.sync_data().map_err(io)?;
        self.records.write().unwrap_or_else(|e| e.into_inner()).push(annotation);
        Ok(())
    }

    /// Every stored annotation, oldest first.
    pub fn snapshot(&self) -> Vec<AuditAnnotation> {
        self.records.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

/// Latest annotation per (candidate, annotator), grouped by candidate.
pub fn latest_labels(annotations: &[AuditAnnotation]) -> BTreeMap<String, Vec<AuditAnnotation>> {
    let mut latest: BTreeMap<(String, String), &AuditAnnotation> = BTreeMap::new();
    for a in annotations {
        latest.insert((a.candidate_id.clone(), a.annotator_id.clone()), a);
    }
    let mut out: BTreeMap<String, Vec<AuditAnnotation>> = BTreeMap::new();
    for ((cand, _), a) in latest {
        out.entry(cand).or_default().push(a.clone());
    }
    out
}
