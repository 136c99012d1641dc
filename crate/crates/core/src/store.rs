//! Task and rating storage with an optional append-only journal on disk.
//!
//! Layout of a store directory:
//!
//! ```text
//! journal.jsonl        one event per line, fsynced on append
//! imports/000001.jsonl task lines of one import, written before its journal event
//! ```
//!
//! Replaying the journal rebuilds the full engine state.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ingestion::{encode_task_line, read_dataset_file};
use crate::model::{RatingRecord, Task, TaskKind, Timestamp};

const JOURNAL: &str = "journal.jsonl";
const IMPORTS: &str = "imports";

/// One durable state change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Imported {
        dataset_id: String,
        kind: TaskKind,
        file: String,
    },
    Assigned {
        dataset_id: String,
        pool: Vec<String>,
        pairs: Vec<(String, String)>,
    },
    Delivered {
        task_id: String,
        annotator_id: String,
        at: Timestamp,
    },
    Stage1Passed {
        task_id: String,
        annotator_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        justification: Option<String>,
        at: Timestamp,
    },
    Rated {
        rating: RatingRecord,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("corrupt journal at line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

/// File-backed journal.
#[derive(Debug)]
pub struct Journal {
    dir: PathBuf,
    file: File,
    imports: usize,
}

impl Journal {
    /// Opens (creating if needed) the journal in `dir` and returns it with
    /// every event recorded so far.
    pub fn open(dir: &Path) -> Result<(Journal, Vec<Event>), StoreError> {
        fs::create_dir_all(dir.join(IMPORTS))?;
        let path = dir.join(JOURNAL);
        let mut events = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let event = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                events.push(event);
            }
        }
        let imports = events
            .iter()
            .filter(|e| matches!(e, Event::Imported { .. }))
            .count();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let journal = Journal {
            dir: dir.to_path_buf(),
            file,
            imports,
        };
        Ok((journal, events))
    }

    pub fn append(&mut self, event: &Event) -> io::Result<()> {
        let line = serde_json::to_string(event).map_err(io::Error::other)?;
        writeln!(self.file, "{line}")?;
        self.file.sync_data()
    }

    /// Writes the tasks of one import to their own file atomically and
    /// returns the path relative to the store directory.
    pub fn write_import(&mut self, tasks: &[Task]) -> io::Result<String> {
        let name = format!("{IMPORTS}/{:06}.jsonl", self.imports + 1);
        let mut tmp = tempfile::NamedTempFile::new_in(self.dir.join(IMPORTS))?;
        for task in tasks {
            writeln!(tmp, "{}", encode_task_line(task))?;
        }
        tmp.as_file().sync_all()?;
        tmp.persist(self.dir.join(&name)).map_err(|e| e.error)?;
        self.imports += 1;
        Ok(name)
    }

    pub fn read_import(&self, file: &str, dataset_id: &str, kind: TaskKind) -> Result<Vec<Task>, StoreError> {
        let (tasks, summary) = read_dataset_file(&self.dir.join(file), dataset_id, kind)
            .map_err(|e| StoreError::Corrupt {
                line: 0,
                message: format!("{file}: {e}"),
            })?;
        if let Some(v) = summary.violations.first() {
            return Err(StoreError::Corrupt {
                line: v.line,
                message: format!("{file}: {}", v.code),
            });
        }
        Ok(tasks)
    }
}

#[derive(Debug, Clone)]
struct StoredTask {
    seq: u64,
    task: Task,
}

/// In-memory view of every imported task and persisted rating.
#[derive(Debug, Default)]
pub struct Store {
    datasets: BTreeMap<String, Vec<String>>,
    tasks: HashMap<String, StoredTask>,
    ratings: BTreeMap<(String, String), RatingRecord>,
    next_seq: u64,
}

impl Store {
    pub fn contains_task(&self, task_id: &str) -> bool {
        self.tasks.contains_key(task_id)
    }

    pub fn contains_dataset(&self, dataset_id: &str) -> bool {
        self.datasets.contains_key(dataset_id)
    }

    /// Adds tasks in order; callers check ids for uniqueness first.
    pub fn insert_tasks(&mut self, dataset_id: &str, tasks: Vec<Task>) {
        let ids = self.datasets.entry(dataset_id.to_string()).or_default();
        for task in tasks {
            let seq = self.next_seq;
            self.next_seq += 1;
            ids.push(task.task_id.clone());
            self.tasks
                .insert(task.task_id.clone(), StoredTask { seq, task });
        }
    }

    pub fn task(&self, task_id: &str) -> Option<&Task> {
        self.tasks.get(task_id).map(|t| &t.task)
    }

    /// Global import order of a task.
    pub fn task_seq(&self, task_id: &str) -> Option<u64> {
        self.tasks.get(task_id).map(|t| t.seq)
    }

    pub fn dataset_ids(&self) -> impl Iterator<Item = &str> {
        self.datasets.keys().map(String::as_str)
    }

    /// Tasks of a dataset in import order.
    pub fn dataset_tasks(&self, dataset_id: &str) -> Option<Vec<&Task>> {
        self.datasets
            .get(dataset_id)
            .map(|ids| ids.iter().map(|id| &self.tasks[id].task).collect())
    }

    pub fn rating(&self, task_id: &str, annotator_id: &str) -> Option<&RatingRecord> {
        self.ratings
            .get(&(task_id.to_string(), annotator_id.to_string()))
    }

    /// Returns false (and stores nothing) when the pair is already rated.
    pub fn insert_rating(&mut self, rating: RatingRecord) -> bool {
        let key = (rating.task_id.clone(), rating.annotator_id.clone());
        if self.ratings.contains_key(&key) {
            return false;
        }
        self.ratings.insert(key, rating);
        true
    }

    /// Ratings ordered by (task, annotator), optionally restricted to one dataset.
    pub fn ratings(&self, dataset_id: Option<&str>) -> Vec<RatingRecord> {
        self.ratings
            .values()
            .filter(|r| {
                dataset_id.is_none_or(|d| {
                    self.task(&r.task_id).is_some_and(|t| t.dataset_id == d)
                })
            })
            .cloned()
            .collect()
    }
}
