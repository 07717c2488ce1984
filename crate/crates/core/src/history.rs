//! `history.jsonl`: one JSON object per line, exchange records from the
//! gateway interleaved with meta-step records from the orchestration loop,
//! in the order they happened.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallOrigin {
    Orchestrator,
    Subagent(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeRecord {
    pub seq: u64,
    pub origin: CallOrigin,
    pub task_id: String,
    pub model: String,
    pub output_tokens: u64,
    pub input_tokens: u64,
    pub approximate: bool,
    pub completion_sha256: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    #[serde(rename = "type")]
    pub kind: String,
    pub step: u64,
    pub action: String,
    pub args: serde_json::Value,
    pub observation_sha256: String,
    pub exchange_seq: u64,
}

impl StepRecord {
    pub const KIND: &'static str = "meta_step";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HistoryLine {
    Step(StepRecord),
    Exchange(ExchangeRecord),
}

/// Append-only writer for one task's history, shared by the gateway and
/// the orchestration loop.
#[derive(Debug)]
pub struct TaskLog {
    path: PathBuf,
    exchanges_dir: PathBuf,
    file: Mutex<File>,
}

impl TaskLog {
    /// Opens `history_path` for appending; full completions go under
    /// `out_dir/exchanges/<seq>.txt`.
    pub fn open(history_path: &Path, out_dir: &Path) -> io::Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(history_path)?;
        Ok(TaskLog {
            path: history_path.to_path_buf(),
            exchanges_dir: out_dir.join("exchanges"),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append<T: Serialize>(&self, record: &T) -> io::Result<()> {
        let mut line = serde_json::to_string(record).map_err(io::Error::other)?;
        line.push('\n');
        let mut file = self.file.lock().unwrap();
        file.write_all(line.as_bytes())?;
        file.flush()
    }

    pub fn store_completion(&self, seq: u64, completion: &str) -> io::Result<()> {
        fs::create_dir_all(&self.exchanges_dir)?;
        fs::write(self.exchanges_dir.join(format!("{seq}.txt")), completion)
    }
}

pub fn read_history(path: &Path) -> io::Result<Vec<HistoryLine>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}:{}: {e}", path.display(), i + 1),
            )
        })?;
        out.push(parsed);
    }
    Ok(out)
}
