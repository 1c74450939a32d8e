//! Append-only event logs, in memory or as newline-delimited JSON files
//! with periodic snapshots.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::state::{EventRecord, InstanceState};
use super::ServiceError;

/// Events between snapshots.
pub const SNAPSHOT_EVERY: u64 = 100;

const EVENTS_FILE: &str = "events.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";
const FEEDBACK_FILE: &str = "feedback.jsonl";

pub trait EventLog: Send {
    /// Appends one record; `durable` forces it to stable storage.
    fn append(&mut self, record: &EventRecord, durable: bool) -> io::Result<()>;
    fn snapshot(&mut self, state: &InstanceState) -> io::Result<()>;
    /// The full log from genesis.
    fn records(&self) -> io::Result<Vec<EventRecord>>;
}

#[derive(Default)]
pub struct MemoryLog {
    records: Vec<EventRecord>,
}

impl EventLog for MemoryLog {
    fn append(&mut self, record: &EventRecord, _durable: bool) -> io::Result<()> {
        self.records.push(record.clone());
        Ok(())
    }

    fn snapshot(&mut self, _state: &InstanceState) -> io::Result<()> {
        Ok(())
    }

    fn records(&self) -> io::Result<Vec<EventRecord>> {
        Ok(self.records.clone())
    }
}

pub struct FileLog {
    dir: PathBuf,
    file: File,
}

impl FileLog {
    fn open(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let file = OpenOptions::new().create(true).append(true).open(dir.join(EVENTS_FILE))?;
        Ok(FileLog {
            dir: dir.to_path_buf(),
            file,
        })
    }
}

impl EventLog for FileLog {
    fn append(&mut self, record: &EventRecord, durable: bool) -> io::Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        if durable {
            self.file.sync_data()?;
        }
        Ok(())
    }

    fn snapshot(&mut self, state: &InstanceState) -> io::Result<()> {
        self.file.sync_data()?;
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            serde_json::to_writer(&mut f, state)?;
            f.sync_all()?;
        }
        fs::rename(tmp, self.dir.join(SNAPSHOT_FILE))
    }

    fn records(&self) -> io::Result<Vec<EventRecord>> {
        read_records(&self.dir.join(EVENTS_FILE))
    }
}

/// Reads a log, tolerating a torn final line.
fn read_records(path: &Path) -> io::Result<Vec<EventRecord>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(e) if i + 1 == lines.len() => {
                log::warn!("{}: ignoring torn final line: {e}", path.display());
            }
            Err(e) => return Err(io::Error::new(io::ErrorKind::InvalidData, e)),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub seq: u64,
    pub session: String,
    pub text: String,
    pub timestamp: u64,
}

/// Where instance logs live.
#[derive(Clone, Debug)]
pub enum Store {
    Memory,
    Dir(PathBuf),
}

impl Store {
    fn instances_dir(root: &Path) -> PathBuf {
        root.join("instances")
    }

    pub fn create_log(&self, id: &str) -> io::Result<Box<dyn EventLog>> {
        match self {
            Store::Memory => Ok(Box::<MemoryLog>::default()),
            Store::Dir(root) => {
                let dir = Self::instances_dir(root).join(id);
                if dir.join(EVENTS_FILE).exists() {
                    return Err(io::Error::new(io::ErrorKind::AlreadyExists, format!("instance {id} exists")));
                }
                Ok(Box::new(FileLog::open(&dir)?))
            }
        }
    }

    /// Restores every instance, from its latest snapshot plus later events.
    pub fn load(&self) -> Result<Vec<(InstanceState, Box<dyn EventLog>)>, ServiceError> {
        let Store::Dir(root) = self else {
            return Ok(Vec::new());
        };
        let dir = Self::instances_dir(root);
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        entries.sort();
        let mut out = Vec::new();
        for path in entries {
            let records = read_records(&path.join(EVENTS_FILE))?;
            if records.is_empty() {
                continue;
            }
            let snapshot: Option<InstanceState> = match fs::read(path.join(SNAPSHOT_FILE)) {
                Ok(bytes) => serde_json::from_slice(&bytes).ok(),
                Err(_) => None,
            };
            let state = match snapshot {
                Some(mut s) if s.last_seq <= records.len() as u64 => {
                    let from = s.last_seq;
                    for r in records.iter().filter(|r| r.seq > from) {
                        s.apply(r)?;
                    }
                    s
                }
                _ => InstanceState::replay(&records)?,
            };
            out.push((state, Box::new(FileLog::open(&path)?) as Box<dyn EventLog>));
        }
        Ok(out)
    }

    pub fn load_feedback(&self) -> io::Result<Vec<FeedbackRecord>> {
        match self {
            Store::Memory => Ok(Vec::new()),
            Store::Dir(root) => {
                let path = root.join(FEEDBACK_FILE);
                let Ok(file) = File::open(&path) else {
                    return Ok(Vec::new());
                };
                BufReader::new(file)
                    .lines()
                    .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
                    .map(|l| serde_json::from_str(&l?).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)))
                    .collect()
            }
        }
    }

    pub fn append_feedback(&self, record: &FeedbackRecord) -> io::Result<()> {
        if let Store::Dir(root) = self {
            fs::create_dir_all(root)?;
            let mut f = OpenOptions::new().create(true).append(true).open(root.join(FEEDBACK_FILE))?;
            let mut line = serde_json::to_vec(record)?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.sync_data()?;
        }
        Ok(())
    }
}
