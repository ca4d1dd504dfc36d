//! Durable homes for the event log and the latest snapshot.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("storage failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("storage failure: {0}")]
    Refused(String),
}

pub trait EventStore: Send {
    /// Every log line in append order.
    fn read_log(&mut self) -> Result<Vec<String>, StorageError>;
    /// Appends one line. Returns only once the line is durable.
    fn append(&mut self, line: &str) -> Result<(), StorageError>;
    fn read_snapshot(&mut self) -> Result<Option<String>, StorageError>;
    fn write_snapshot(&mut self, text: &str) -> Result<(), StorageError>;
}

/// `events.ndjson` plus `snapshot.json` in one directory.
pub struct FileStore {
    dir: PathBuf,
    log: File,
}

impl FileStore {
    pub const LOG: &'static str = "events.ndjson";
    pub const SNAPSHOT: &'static str = "snapshot.json";

    pub fn open(dir: &Path) -> Result<FileStore, StorageError> {
        std::fs::create_dir_all(dir)?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(Self::LOG))?;
        Ok(FileStore {
            dir: dir.to_path_buf(),
            log,
        })
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join(Self::LOG)
    }
}

impl EventStore for FileStore {
    fn read_log(&mut self) -> Result<Vec<String>, StorageError> {
        let file = File::open(self.log_path())?;
        let mut lines = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                lines.push(line);
            }
        }
        Ok(lines)
    }

    fn append(&mut self, line: &str) -> Result<(), StorageError> {
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        self.log.write_all(&buf)?;
        self.log.sync_data()?;
        Ok(())
    }

    fn read_snapshot(&mut self) -> Result<Option<String>, StorageError> {
        match std::fs::read_to_string(self.dir.join(Self::SNAPSHOT)) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn write_snapshot(&mut self, text: &str) -> Result<(), StorageError> {
        let tmp = self.dir.join("snapshot.json.tmp");
        let mut f = File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
        std::fs::rename(tmp, self.dir.join(Self::SNAPSHOT))?;
        Ok(())
    }
}

#[derive(Debug, Default)]
struct Memory {
    lines: Vec<String>,
    snapshot: Option<String>,
}

/// In-process store. Clones share the same contents, so a test can keep a
/// handle after giving one to the service.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    inner: Arc<Mutex<Memory>>,
}

impl MemoryStore {
    pub fn lines(&self) -> Vec<String> {
        self.inner.lock().unwrap().lines.clone()
    }

    pub fn set_lines(&self, lines: Vec<String>) {
        self.inner.lock().unwrap().lines = lines;
    }

    pub fn snapshot(&self) -> Option<String> {
        self.inner.lock().unwrap().snapshot.clone()
    }

    pub fn clear_snapshot(&self) {
        self.inner.lock().unwrap().snapshot = None;
    }
}

impl EventStore for MemoryStore {
    fn read_log(&mut self) -> Result<Vec<String>, StorageError> {
        Ok(self.lines())
    }

    fn append(&mut self, line: &str) -> Result<(), StorageError> {
        self.inner.lock().unwrap().lines.push(line.to_string());
        Ok(())
    }

    fn read_snapshot(&mut self) -> Result<Option<String>, StorageError> {
        Ok(self.snapshot())
    }

    fn write_snapshot(&mut self, text: &str) -> Result<(), StorageError> {
        self.inner.lock().unwrap().snapshot = Some(text.to_string());
        Ok(())
    }
}

/// Wraps a store and refuses appends while its switch is on.
pub struct FailingStore<S> {
    inner: S,
    failing: Arc<AtomicBool>,
}

impl<S: EventStore> FailingStore<S> {
    pub fn new(inner: S) -> (FailingStore<S>, Arc<AtomicBool>) {
        let failing = Arc::new(AtomicBool::new(false));
        (
            FailingStore {
                inner,
                failing: failing.clone(),
            },
            failing,
        )
    }
}

impl<S: EventStore> EventStore for FailingStore<S> {
    fn read_log(&mut self) -> Result<Vec<String>, StorageError> {
        self.inner.read_log()
    }

    fn append(&mut self, line: &str) -> Result<(), StorageError> {
        if self.failing.load(Ordering::SeqCst) {
            return Err(StorageError::Refused("append refused".into()));
        }
        self.inner.append(line)
    }

    fn read_snapshot(&mut self) -> Result<Option<String>, StorageError> {
        self.inner.read_snapshot()
    }

    fn write_snapshot(&mut self, text: &str) -> Result<(), StorageError> {
        if self.failing.load(Ordering::SeqCst) {
            return Err(StorageError::Refused("snapshot refused".into()));
        }
        self.inner.write_snapshot(text)
    }
}
