use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use super::{KnowledgeDoc, RetrievalError};

/// Persistent map from target key to knowledge, stored as one JSON record per
/// line. Later lines win, so `put` is an append. Reads are concurrent; writes
/// are serialized through a single file handle.
#[derive(Debug)]
pub struct KnowledgeCache {
    path: Option<PathBuf>,
    records: RwLock<HashMap<String, KnowledgeDoc>>,
    writer: Mutex<Option<File>>,
}

impl KnowledgeCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            records: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    pub fn open(path: &Path) -> Result<Self, RetrievalError> {
        let io = |source| RetrievalError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut records = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(io)?;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let doc: KnowledgeDoc =
                    serde_json::from_str(&line).map_err(|e| RetrievalError::CorruptCache {
                        path: path.to_path_buf(),
                        line: idx + 1,
                        message: e.to_string(),
                    })?;
                records.insert(doc.target_key.clone(), doc);
            }
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            records: RwLock::new(records),
            writer: Mutex::new(None),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, target_key: &str) -> Option<KnowledgeDoc> {
        self.records.read().unwrap().get(target_key).cloned()
    }

    pub fn put(&self, doc: KnowledgeDoc) -> Result<(), RetrievalError> {
        if let Some(path) = &self.path {
            let io = |source| RetrievalError::Io {
                path: path.clone(),
                source,
            };
            let line = serde_json::to_string(&doc).expect("knowledge records serialize");
            let mut writer = self.writer.lock().unwrap();
            if writer.is_none() {
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent).map_err(io)?;
                }
                *writer = Some(
                    OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(path)
                        .map_err(io)?,
                );
            }
            let file = writer.as_mut().expect("writer opened above");
            writeln!(file, "{line}").map_err(io)?;
            file.flush().map_err(io)?;
        }
        self.records
            .write()
            .unwrap()
            .insert(doc.target_key.clone(), doc);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
