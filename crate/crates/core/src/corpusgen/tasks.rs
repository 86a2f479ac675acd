//! Completion tasks and their JSONL form.
//!
//! Records use `prompt`/`groundtruth` like CrossCodeEval. When `task_id`,
//! `repo` or `file` are missing at the top level they are read from a
//! `metadata` object (`task_id`, `repository`, `file`). Fields this type does
//! not know are kept and written back unchanged.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaskIoError {
    #[error("malformed task record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// 0-based line and byte column of the cursor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub line: usize,
    pub col: usize,
}

impl Cursor {
    /// Cursor at the end of `prefix`.
    pub fn at_end_of(prefix: &str) -> Self {
        let line = prefix.matches('\n').count();
        let col = prefix.len() - prefix.rfind('\n').map_or(0, |i| i + 1);
        Self { line, col }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskMeta {
    /// Exactly one identifier is valid at the completion point.
    #[serde(default)]
    pub unique_valid: bool,
    /// The ground-truth line is held out of model training text.
    #[serde(default)]
    pub unseen: bool,
    #[serde(flatten)]
    pub other: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionTask {
    pub task_id: String,
    pub repo: String,
    pub file: String,
    /// Text of `file` before the cursor.
    pub prompt: String,
    /// Rest of the cursor line.
    pub groundtruth: String,
    pub cursor: Cursor,
    pub meta: TaskMeta,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

fn take_string(obj: &mut Map<String, Value>, key: &str) -> Option<String> {
    match obj.get(key) {
        Some(Value::String(_)) => match obj.remove(key) {
            Some(Value::String(s)) => Some(s),
            _ => unreachable!(),
        },
        _ => None,
    }
}

fn from_metadata(obj: &Map<String, Value>, keys: &[&str]) -> Option<String> {
    let meta = obj.get("metadata")?.as_object()?;
    keys.iter()
        .find_map(|k| meta.get(*k).and_then(Value::as_str).map(str::to_string))
}

impl CompletionTask {
    pub fn from_json(text: &str, line: usize) -> Result<Self, TaskIoError> {
        let bad = |reason: String| TaskIoError::MalformedRecord { line, reason };
        let value: Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        let Value::Object(mut obj) = value else {
            return Err(bad("record is not an object".into()));
        };
        let prompt = take_string(&mut obj, "prompt").ok_or_else(|| bad("missing `prompt`".into()))?;
        let groundtruth = take_string(&mut obj, "groundtruth").ok_or_else(|| bad("missing `groundtruth`".into()))?;
        let mut required = |key: &str, meta_keys: &[&str]| {
            take_string(&mut obj, key)
                .or_else(|| from_metadata(&obj, meta_keys))
                .ok_or_else(|| bad(format!("missing `{key}`")))
        };
        let task_id = required("task_id", &["task_id"])?;
        let repo = required("repo", &["repository", "repo"])?;
        let file = required("file", &["file"])?;
        let cursor = match obj.remove("cursor") {
            Some(v) => serde_json::from_value(v).map_err(|e| bad(format!("bad `cursor`: {e}")))?,
            None => Cursor::at_end_of(&prompt),
        };
        let meta = match obj.remove("meta") {
            Some(v) => serde_json::from_value(v).map_err(|e| bad(format!("bad `meta`: {e}")))?,
            None => TaskMeta::default(),
        };
        Ok(Self {
            task_id,
            repo,
            file,
            prompt,
            groundtruth,
            cursor,
            meta,
            extra: obj,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("task serializes")
    }
}

pub fn parse_tasks(text: &str) -> Result<Vec<CompletionTask>, TaskIoError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| CompletionTask::from_json(l, i + 1))
        .collect()
}

pub fn load_tasks(path: &Path) -> Result<Vec<CompletionTask>, TaskIoError> {
    let io = |source| TaskIoError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(fs::File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if !line.trim().is_empty() {
            out.push(CompletionTask::from_json(&line, i + 1)?);
        }
    }
    Ok(out)
}

pub fn save_tasks(tasks: &[CompletionTask], path: &Path) -> Result<(), TaskIoError> {
    let io = |source| TaskIoError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for t in tasks {
        writeln!(f, "{}", t.to_json()).map_err(io)?;
    }
    f.flush().map_err(io)
}
