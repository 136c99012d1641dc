//! Assignment engine and the two-stage rating state machine.
//!
//! Each assignment moves `PendingStage1 -> AwaitingStage2 -> Complete`, or
//! `PendingStage1 -> Complete` when the output is judged not interpretable.
//! A flag ends the assignment from either open state. All mutations go
//! through one lock, and each transition is journaled before it is applied,
//! so a persisted rating and its assignment state never disagree.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingestion::{self, ImportSummary, IngestError};
use crate::model::{
    AttributedSource, FlagReason, LinguisticContext, RatingRecord, Response, Task, TaskKind,
    Timestamp,
};
use crate::store::{Event, Journal, Store, StoreError};

pub const DEFAULT_REPLICATION: usize = 5;

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs() as Timestamp)
            .unwrap_or(0)
    }
}

/// A clock that only moves when told to; used by tests and simulations.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(start: Timestamp) -> Self {
        ManualClock(AtomicI64::new(start))
    }

    pub fn set(&self, t: Timestamp) {
        self.0.store(t, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: i64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Interpretability,
    Attribution,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::Interpretability => 1,
            Stage::Attribution => 2,
        }
    }
}

/// Question wording per task kind and stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionTemplates {
    questions: BTreeMap<(TaskKind, Stage), String>,
}

impl Default for QuestionTemplates {
    fn default() -> Self {
        let mut questions = BTreeMap::new();
        for (kind, noun, source) in [
            (TaskKind::ConversationalQa, "response", "source document"),
            (TaskKind::Summarization, "summary", "source document"),
            (TaskKind::TableToText, "caption", "source table"),
        ] {
            questions.insert(
                (kind, Stage::Interpretability),
                format!("Is all of the information relayed by the system {noun} interpretable to you?"),
            );
            questions.insert(
                (kind, Stage::Attribution),
                format!(
                    "Is all of the information provided by the system {noun} fully supported by the {source}?"
                ),
            );
        }
        QuestionTemplates { questions }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateOverride {
    stage1: Option<String>,
    stage2: Option<String>,
}

#[derive(Debug, thiserror::Error)]
#[error("invalid question template file: {0}")]
pub struct TemplateError(String);

impl QuestionTemplates {
    pub fn question(&self, kind: TaskKind, stage: Stage) -> &str {
        &self.questions[&(kind, stage)]
    }

    pub fn set(&mut self, kind: TaskKind, stage: Stage, text: impl Into<String>) {
        self.questions.insert((kind, stage), text.into());
    }

    /// Overrides defaults from TOML tables keyed by task kind:
    ///
    /// ```toml
    /// [summarization]
    /// stage1 = "..."
    /// stage2 = "..."
    /// ```
    pub fn from_toml(text: &str) -> Result<Self, TemplateError> {
        let tables: BTreeMap<String, TemplateOverride> =
            toml::from_str(text).map_err(|e| TemplateError(e.to_string()))?;
        let mut out = QuestionTemplates::default();
        for (name, o) in tables {
            let kind: TaskKind = name.parse().map_err(|e| TemplateError(format!("{e}")))?;
            if let Some(q) = o.stage1 {
                out.set(kind, Stage::Interpretability, q);
            }
            if let Some(q) = o.stage2 {
                out.set(kind, Stage::Attribution, q);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkflowConfig {
    pub replication: usize,
    pub pilot_mode: bool,
    pub templates: QuestionTemplates,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        WorkflowConfig {
            replication: DEFAULT_REPLICATION,
            pilot_mode: false,
            templates: QuestionTemplates::default(),
        }
    }
}

impl WorkflowConfig {
    pub fn with_replication(replication: usize) -> Self {
        WorkflowConfig {
            replication,
            ..Default::default()
        }
    }

    pub fn pilot(mut self, on: bool) -> Self {
        self.pilot_mode = on;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentState {
    PendingStage1,
    AwaitingStage2,
    Complete,
    Flagged,
}

impl AssignmentState {
    pub fn is_open(self) -> bool {
        matches!(
            self,
            AssignmentState::PendingStage1 | AssignmentState::AwaitingStage2
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub task_id: String,
    pub annotator_id: String,
    pub state: AssignmentState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub assigned: usize,
}

/// What an annotator is shown for one stage. Stage-1 payloads never carry
/// the source: the field is absent, not blanked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePayload {
    pub task_id: String,
    pub kind: TaskKind,
    pub context: LinguisticContext,
    pub output: String,
    pub stage: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<AttributedSource>,
    pub question_text: String,
    pub require_justification: bool,
}

impl StagePayload {
    fn for_stage(task: &Task, stage: Stage, config: &WorkflowConfig) -> Self {
        StagePayload {
            task_id: task.task_id.clone(),
            kind: task.kind,
            context: task.context.clone(),
            output: task.output.clone(),
            stage: stage.number(),
            source: match stage {
                Stage::Interpretability => None,
                Stage::Attribution => Some(task.source.clone()),
            },
            question_text: config.templates.question(task.kind, stage).to_string(),
            require_justification: config.pilot_mode,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error("replication factor must be at least 1")]
    InvalidReplication,
    #[error("pool of {pool} annotators is smaller than replication {replication}")]
    PoolTooSmall { pool: usize, replication: usize },
    #[error("unknown annotator `{0}`")]
    UnknownAnnotator(String),
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("no assignment of task `{task_id}` to `{annotator_id}`")]
    NoAssignment {
        task_id: String,
        annotator_id: String,
    },
    #[error("task `{task_id}` was already answered by `{annotator_id}`")]
    DuplicateRating {
        task_id: String,
        annotator_id: String,
    },
    #[error("stage 2 answer for `{task_id}` is not expected in state {state:?}")]
    StageOrderViolation {
        task_id: String,
        state: AssignmentState,
    },
    #[error("assignment of `{task_id}` to `{annotator_id}` is already complete")]
    AlreadyComplete {
        task_id: String,
        annotator_id: String,
    },
    #[error("a written justification is required in pilot mode")]
    MissingJustification,
    #[error("task id `{0}` already exists")]
    DuplicateTaskId(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Key = (String, String);

fn key(task_id: &str, annotator_id: &str) -> Key {
    (task_id.to_string(), annotator_id.to_string())
}

#[derive(Debug, Clone)]
struct Slot {
    state: AssignmentState,
    delivered_at: Option<Timestamp>,
    stage1_justification: Option<String>,
}

#[derive(Default)]
struct Inner {
    store: Store,
    journal: Option<Journal>,
    annotators: BTreeSet<String>,
    slots: HashMap<Key, Slot>,
    per_task: HashMap<String, usize>,
    /// Open assignments per annotator, keyed by task import order.
    queues: HashMap<String, BTreeMap<u64, String>>,
}

impl Inner {
    fn record(&mut self, event: Event) -> Result<(), WorkflowError> {
        if let Some(journal) = self.journal.as_mut() {
            journal.append(&event)?;
        }
        self.apply(event);
        Ok(())
    }

    fn apply(&mut self, event: Event) {
        match event {
            // Import events are applied together with their tasks.
            Event::Imported { .. } => {}
            Event::Assigned { pool, pairs, .. } => {
                self.annotators.extend(pool);
                for (task_id, annotator_id) in pairs {
                    let seq = self.store.task_seq(&task_id).unwrap_or(u64::MAX);
                    *self.per_task.entry(task_id.clone()).or_default() += 1;
                    self.queues
                        .entry(annotator_id.clone())
                        .or_default()
                        .insert(seq, task_id.clone());
                    self.slots.insert(
                        (task_id, annotator_id),
                        Slot {
                            state: AssignmentState::PendingStage1,
                            delivered_at: None,
                            stage1_justification: None,
                        },
                    );
                }
            }
            Event::Delivered {
                task_id,
                annotator_id,
                at,
            } => {
                if let Some(slot) = self.slots.get_mut(&(task_id, annotator_id)) {
                    slot.delivered_at.get_or_insert(at);
                }
            }
            Event::Stage1Passed {
                task_id,
                annotator_id,
                justification,
                ..
            } => {
                if let Some(slot) = self.slots.get_mut(&(task_id, annotator_id)) {
                    slot.state = AssignmentState::AwaitingStage2;
                    slot.stage1_justification = justification;
                }
            }
            Event::Rated { rating } => {
                let state = if rating.response.is_flag() {
                    AssignmentState::Flagged
                } else {
                    AssignmentState::Complete
                };
                let k = key(&rating.task_id, &rating.annotator_id);
                if let Some(slot) = self.slots.get_mut(&k) {
                    slot.state = state;
                }
                if let (Some(seq), Some(queue)) = (
                    self.store.task_seq(&rating.task_id),
                    self.queues.get_mut(&rating.annotator_id),
                ) {
                    queue.remove(&seq);
                }
                self.store.insert_rating(rating);
            }
        }
    }

    fn slot(&self, annotator_id: &str, task_id: &str) -> Result<&Slot, WorkflowError> {
        if !self.annotators.contains(annotator_id) {
            return Err(WorkflowError::UnknownAnnotator(annotator_id.to_string()));
        }
        self.slots
            .get(&key(task_id, annotator_id))
            .ok_or_else(|| WorkflowError::NoAssignment {
                task_id: task_id.to_string(),
                annotator_id: annotator_id.to_string(),
            })
    }
}

/// The annotation engine: tasks, assignments and ratings behind one lock.
pub struct Engine {
    config: WorkflowConfig,
    clock: Arc<dyn Clock>,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

fn non_empty(justification: Option<&str>) -> Option<String> {
    justification
        .filter(|j| !j.trim().is_empty())
        .map(str::to_string)
}

impl Engine {
    pub fn in_memory(config: WorkflowConfig) -> Result<Self, WorkflowError> {
        Self::with_clock(config, Arc::new(SystemClock))
    }

    pub fn with_clock(config: WorkflowConfig, clock: Arc<dyn Clock>) -> Result<Self, WorkflowError> {
        if config.replication == 0 {
            return Err(WorkflowError::InvalidReplication);
        }
        Ok(Engine {
            config,
            clock,
            inner: Mutex::new(Inner::default()),
        })
    }

    /// Opens a durable engine in `dir`, replaying its journal.
    pub fn open(dir: &Path, config: WorkflowConfig) -> Result<Self, WorkflowError> {
        Self::open_with_clock(dir, config, Arc::new(SystemClock))
    }

    pub fn open_with_clock(
        dir: &Path,
        config: WorkflowConfig,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, WorkflowError> {
        let engine = Self::with_clock(config, clock)?;
        let (journal, events) = Journal::open(dir)?;
        {
            let mut inner = engine.inner.lock();
            for event in events {
                if let Event::Imported {
                    dataset_id,
                    kind,
                    file,
                } = &event
                {
                    let tasks = journal.read_import(file, dataset_id, *kind)?;
                    inner.store.insert_tasks(dataset_id, tasks);
                }
                inner.apply(event);
            }
            inner.journal = Some(journal);
        }
        Ok(engine)
    }

    pub fn config(&self) -> &WorkflowConfig {
        &self.config
    }

    pub fn import_dataset(
        &self,
        path: &Path,
        dataset_id: &str,
        kind: TaskKind,
    ) -> Result<ImportSummary, WorkflowError> {
        self.import_reader(BufReader::new(fs::File::open(path)?), dataset_id, kind)
    }

    /// Parses a corpus and stores every accepted task atomically. Nothing is
    /// stored when any accepted task id already exists.
    pub fn import_reader<R: BufRead>(
        &self,
        reader: R,
        dataset_id: &str,
        kind: TaskKind,
    ) -> Result<ImportSummary, WorkflowError> {
        let (tasks, summary) = ingestion::read_dataset(reader, dataset_id, kind)?;
        let mut inner = self.inner.lock();
        if let Some(dup) = tasks.iter().find(|t| inner.store.contains_task(&t.task_id)) {
            return Err(WorkflowError::DuplicateTaskId(dup.task_id.clone()));
        }
        if let Some(journal) = inner.journal.as_mut() {
            let file = journal.write_import(&tasks)?;
            journal.append(&Event::Imported {
                dataset_id: dataset_id.to_string(),
                kind,
                file,
            })?;
        }
        inner.store.insert_tasks(dataset_id, tasks);
        Ok(summary)
    }

    /// Gives every not-yet-assigned task of the dataset `replication`
    /// distinct annotators from the pool. Load differs by at most one task
    /// across the pool, and the result depends only on the inputs and seed.
    pub fn create_assignments(
        &self,
        dataset_id: &str,
        pool: &[String],
        seed: u64,
    ) -> Result<usize, WorkflowError> {
        let r = self.config.replication;
        let mut members: Vec<String> = Vec::with_capacity(pool.len());
        for a in pool {
            if !members.contains(a) {
                members.push(a.clone());
            }
        }
        if members.len() < r {
            return Err(WorkflowError::PoolTooSmall {
                pool: members.len(),
                replication: r,
            });
        }

        let mut inner = self.inner.lock();
        let tasks: Vec<String> = inner
            .store
            .dataset_tasks(dataset_id)
            .ok_or_else(|| WorkflowError::UnknownDataset(dataset_id.to_string()))?
            .into_iter()
            .filter(|t| !inner.per_task.contains_key(&t.task_id))
            .map(|t| t.task_id.clone())
            .collect();

        let mut order = members.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let p = order.len();
        // Consecutive windows of length r over the cycle are distinct since r <= p.
        let pairs: Vec<(String, String)> = tasks
            .iter()
            .enumerate()
            .flat_map(|(i, task_id)| {
                let order = &order;
                (0..r).map(move |j| (task_id.clone(), order[(i * r + j) % p].clone()))
            })
            .collect();
        let created = pairs.len();
        inner.record(Event::Assigned {
            dataset_id: dataset_id.to_string(),
            pool: members,
            pairs,
        })?;
        Ok(created)
    }

    /// The oldest open assignment of this annotator, at its current stage.
    pub fn next_task(&self, annotator_id: &str) -> Result<Option<StagePayload>, WorkflowError> {
        let mut inner = self.inner.lock();
        if !inner.annotators.contains(annotator_id) {
            return Err(WorkflowError::UnknownAnnotator(annotator_id.to_string()));
        }
        let Some(task_id) = inner
            .queues
            .get(annotator_id)
            .and_then(|q| q.values().next().cloned())
        else {
            return Ok(None);
        };
        let slot = inner.slots[&key(&task_id, annotator_id)].clone();
        let stage = match slot.state {
            AssignmentState::PendingStage1 => Stage::Interpretability,
            AssignmentState::AwaitingStage2 => Stage::Attribution,
            AssignmentState::Complete | AssignmentState::Flagged => {
                unreachable!("closed assignments leave the queue")
            }
        };
        if slot.delivered_at.is_none() {
            let at = self.clock.now();
            inner.record(Event::Delivered {
                task_id: task_id.clone(),
                annotator_id: annotator_id.to_string(),
                at,
            })?;
        }
        let task = inner.store.task(&task_id).expect("assigned task exists");
        Ok(Some(StagePayload::for_stage(task, stage, &self.config)))
    }

    /// Records the interpretability answer. "No" completes the assignment;
    /// "yes" unlocks stage 2.
    pub fn submit_stage1(
        &self,
        annotator_id: &str,
        task_id: &str,
        interpretable: bool,
        justification: Option<&str>,
    ) -> Result<AssignmentState, WorkflowError> {
        let mut inner = self.inner.lock();
        let slot = inner.slot(annotator_id, task_id)?.clone();
        if slot.state != AssignmentState::PendingStage1 {
            return Err(WorkflowError::DuplicateRating {
                task_id: task_id.to_string(),
                annotator_id: annotator_id.to_string(),
            });
        }
        let justification = non_empty(justification);
        if self.config.pilot_mode && justification.is_none() {
            return Err(WorkflowError::MissingJustification);
        }
        let now = self.clock.now();
        if interpretable {
            inner.record(Event::Stage1Passed {
                task_id: task_id.to_string(),
                annotator_id: annotator_id.to_string(),
                justification,
                at: now,
            })?;
            Ok(AssignmentState::AwaitingStage2)
        } else {
            inner.record(Event::Rated {
                rating: RatingRecord {
                    task_id: task_id.to_string(),
                    annotator_id: annotator_id.to_string(),
                    response: Response::NotInterpretable,
                    justification_stage1: justification,
                    justification_stage2: None,
                    started_at: slot.delivered_at.unwrap_or(now).min(now),
                    finished_at: now,
                },
            })?;
            Ok(AssignmentState::Complete)
        }
    }

    pub fn submit_stage2(
        &self,
        annotator_id: &str,
        task_id: &str,
        ais: bool,
        justification: Option<&str>,
    ) -> Result<AssignmentState, WorkflowError> {
        let mut inner = self.inner.lock();
        let slot = inner.slot(annotator_id, task_id)?.clone();
        if slot.state != AssignmentState::AwaitingStage2 {
            return Err(WorkflowError::StageOrderViolation {
                task_id: task_id.to_string(),
                state: slot.state,
            });
        }
        let justification = non_empty(justification);
        if self.config.pilot_mode && justification.is_none() {
            return Err(WorkflowError::MissingJustification);
        }
        let now = self.clock.now();
        inner.record(Event::Rated {
            rating: RatingRecord {
                task_id: task_id.to_string(),
                annotator_id: annotator_id.to_string(),
                response: Response::Interpretable { ais },
                justification_stage1: slot.stage1_justification,
                justification_stage2: justification,
                started_at: slot.delivered_at.unwrap_or(now).min(now),
                finished_at: now,
            },
        })?;
        Ok(AssignmentState::Complete)
    }

    /// Flags the task for this annotator only, discarding any stage-1 answer
    /// already given.
    pub fn submit_flag(
        &self,
        annotator_id: &str,
        task_id: &str,
        reason: FlagReason,
    ) -> Result<AssignmentState, WorkflowError> {
        let mut inner = self.inner.lock();
        let slot = inner.slot(annotator_id, task_id)?.clone();
        match slot.state {
            AssignmentState::Complete => {
                return Err(WorkflowError::AlreadyComplete {
                    task_id: task_id.to_string(),
                    annotator_id: annotator_id.to_string(),
                })
            }
            AssignmentState::Flagged => {
                return Err(WorkflowError::DuplicateRating {
                    task_id: task_id.to_string(),
                    annotator_id: annotator_id.to_string(),
                })
            }
            AssignmentState::PendingStage1 | AssignmentState::AwaitingStage2 => {}
        }
        let now = self.clock.now();
        inner.record(Event::Rated {
            rating: RatingRecord {
                task_id: task_id.to_string(),
                annotator_id: annotator_id.to_string(),
                response: Response::Flag { reason },
                justification_stage1: None,
                justification_stage2: None,
                started_at: slot.delivered_at.unwrap_or(now).min(now),
                finished_at: now,
            },
        })?;
        Ok(AssignmentState::Flagged)
    }

    pub fn assignment(&self, task_id: &str, annotator_id: &str) -> Option<Assignment> {
        let inner = self.inner.lock();
        inner
            .slots
            .get(&key(task_id, annotator_id))
            .map(|s| Assignment {
                task_id: task_id.to_string(),
                annotator_id: annotator_id.to_string(),
                state: s.state,
            })
    }

    /// Every assignment, ordered by (task, annotator).
    pub fn assignments(&self) -> Vec<Assignment> {
        let inner = self.inner.lock();
        let mut out: Vec<Assignment> = inner
            .slots
            .iter()
            .map(|((t, a), s)| Assignment {
                task_id: t.clone(),
                annotator_id: a.clone(),
                state: s.state,
            })
            .collect();
        out.sort_by(|x, y| (&x.task_id, &x.annotator_id).cmp(&(&y.task_id, &y.annotator_id)));
        out
    }

    /// Closed (complete or flagged) and total assignments of an annotator.
    pub fn progress(&self, annotator_id: &str) -> Result<Progress, WorkflowError> {
        let inner = self.inner.lock();
        if !inner.annotators.contains(annotator_id) {
            return Err(WorkflowError::UnknownAnnotator(annotator_id.to_string()));
        }
        let assigned = inner
            .slots
            .keys()
            .filter(|(_, a)| a == annotator_id)
            .count();
        let open = inner.queues.get(annotator_id).map_or(0, BTreeMap::len);
        Ok(Progress {
            completed: assigned - open,
            assigned,
        })
    }

    pub fn annotators(&self) -> Vec<String> {
        self.inner.lock().annotators.iter().cloned().collect()
    }

    pub fn task(&self, task_id: &str) -> Option<Task> {
        self.inner.lock().store.task(task_id).cloned()
    }

    pub fn dataset_ids(&self) -> Vec<String> {
        self.inner
            .lock()
            .store
            .dataset_ids()
            .map(str::to_string)
            .collect()
    }

    /// Tasks of a dataset in import order.
    pub fn tasks(&self, dataset_id: &str) -> Result<Vec<Task>, WorkflowError> {
        self.inner
            .lock()
            .store
            .dataset_tasks(dataset_id)
            .map(|ts| ts.into_iter().cloned().collect())
            .ok_or_else(|| WorkflowError::UnknownDataset(dataset_id.to_string()))
    }

    /// Persisted ratings of one dataset, ordered by (task, annotator).
    pub fn ratings(&self, dataset_id: &str) -> Result<Vec<RatingRecord>, WorkflowError> {
        let inner = self.inner.lock();
        if !inner.store.contains_dataset(dataset_id) {
            return Err(WorkflowError::UnknownDataset(dataset_id.to_string()));
        }
        Ok(inner.store.ratings(Some(dataset_id)))
    }

    pub fn all_ratings(&self) -> Vec<RatingRecord> {
        self.inner.lock().store.ratings(None)
    }

    /// Writes the dataset's ratings as rating lines.
    pub fn export_ratings<W: std::io::Write>(
        &self,
        dataset_id: &str,
        writer: W,
    ) -> Result<usize, WorkflowError> {
        let ratings = self.ratings(dataset_id)?;
        ingestion::write_ratings(writer, &ratings)?;
        Ok(ratings.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Speaker, TaskKind};

    fn corpus(n: usize) -> String {
        (0..n)
            .map(|i| {
                format!(
                    r#"{{"task_id":"t{i:03}","system_id":"sys","context":{{"turns":[{{"speaker":"user","text":"question {i}"}}],"time":100}},"output":"answer {i}","source":{{"variant":"passage","text":"SOURCE-TEXT-{i}","corpus_id":"wiki"}}}}"#
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn pool(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("a{i}")).collect()
    }

    fn engine(replication: usize, tasks: usize) -> (Engine, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::new(1_000));
        let engine =
            Engine::with_clock(WorkflowConfig::with_replication(replication), clock.clone())
                .unwrap();
        engine
            .import_reader(corpus(tasks).as_bytes(), "d", TaskKind::ConversationalQa)
            .unwrap();
        (engine, clock)
    }

    fn loads(engine: &Engine) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for a in engine.assignments() {
            *counts.entry(a.annotator_id).or_insert(0) += 1;
        }
        counts
    }

    #[test]
    fn full_pool_gets_every_task() {
        let (engine, _) = engine(5, 10);
        assert_eq!(engine.create_assignments("d", &pool(5), 7).unwrap(), 50);
        assert!(loads(&engine).values().all(|&c| c == 10));
    }

    #[test]
    fn nine_annotators_are_balanced_within_one() {
        let (engine, _) = engine(5, 10);
        assert_eq!(engine.create_assignments("d", &pool(9), 3).unwrap(), 50);
        let counts = loads(&engine);
        assert_eq!(counts.len(), 9);
        // 50 slots over 9 annotators: five carry 6 tasks, four carry 5.
        assert_eq!(counts.values().filter(|&&c| c == 6).count(), 5);
        assert_eq!(counts.values().filter(|&&c| c == 5).count(), 4);
        for task in engine.tasks("d").unwrap() {
            let raters: BTreeSet<_> = engine
                .assignments()
                .into_iter()
                .filter(|a| a.task_id == task.task_id)
                .map(|a| a.annotator_id)
                .collect();
            assert_eq!(raters.len(), 5);
        }
    }

    #[test]
    fn assignment_is_deterministic_per_seed() {
        let run = |seed| {
            let (engine, _) = engine(3, 12);
            engine.create_assignments("d", &pool(7), seed).unwrap();
            engine.assignments()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn small_pool_is_rejected() {
        let (engine, _) = engine(5, 2);
        assert!(matches!(
            engine.create_assignments("d", &pool(3), 0),
            Err(WorkflowError::PoolTooSmall { pool: 3, replication: 5 })
        ));
    }

    #[test]
    fn reassigning_skips_assigned_tasks() {
        let (engine, _) = engine(3, 4);
        assert_eq!(engine.create_assignments("d", &pool(3), 0).unwrap(), 12);
        assert_eq!(engine.create_assignments("d", &pool(5), 1).unwrap(), 0);
    }

    #[test]
    fn unknown_dataset_and_annotator() {
        let (engine, _) = engine(3, 1);
        assert!(matches!(
            engine.create_assignments("nope", &pool(3), 0),
            Err(WorkflowError::UnknownDataset(_))
        ));
        assert!(matches!(
            engine.next_task("ghost"),
            Err(WorkflowError::UnknownAnnotator(_))
        ));
    }

    #[test]
    fn idle_annotator_gets_nothing() {
        let (engine, _) = engine(1, 1);
        engine.create_assignments("d", &pool(2), 0).unwrap();
        let idle = pool(2)
            .into_iter()
            .find(|a| engine.assignments().iter().all(|x| &x.annotator_id != a))
            .unwrap();
        assert!(engine.next_task(&idle).unwrap().is_none());
    }

    #[test]
    fn stage_one_hides_source_and_stage_two_reveals_it() {
        let (engine, clock) = engine(1, 1);
        engine.create_assignments("d", &["solo".into()], 0).unwrap();

        let p1 = engine.next_task("solo").unwrap().unwrap();
        assert_eq!(p1.stage, 1);
        assert!(p1.source.is_none());
        let json = serde_json::to_string(&p1).unwrap();
        assert!(!json.contains("\"source\""));
        assert!(!json.contains("SOURCE-TEXT"));
        assert_eq!(p1.context.turns[0].speaker, Speaker::User);
        assert!(p1.question_text.contains("system response"));

        clock.advance(30);
        assert_eq!(
            engine.submit_stage1("solo", "t000", true, None).unwrap(),
            AssignmentState::AwaitingStage2
        );
        let p2 = engine.next_task("solo").unwrap().unwrap();
        assert_eq!(p2.stage, 2);
        assert!(matches!(p2.source, Some(AttributedSource::Passage { .. })));
        assert!(p2.question_text.contains("fully supported"));

        clock.advance(45);
        engine.submit_stage2("solo", "t000", true, None).unwrap();
        let r = &engine.ratings("d").unwrap()[0];
        assert_eq!(r.response, Response::Interpretable { ais: true });
        assert_eq!((r.started_at, r.finished_at), (1_000, 1_075));
        assert!(engine.next_task("solo").unwrap().is_none());
    }

    #[test]
    fn not_interpretable_completes_without_stage_two() {
        let (engine, _) = engine(1, 1);
        engine.create_assignments("d", &["solo".into()], 0).unwrap();
        assert_eq!(
            engine.submit_stage1("solo", "t000", false, None).unwrap(),
            AssignmentState::Complete
        );
        assert!(engine.next_task("solo").unwrap().is_none());
        assert!(matches!(
            engine.submit_stage2("solo", "t000", true, None),
            Err(WorkflowError::StageOrderViolation { .. })
        ));
        assert!(matches!(
            engine.submit_stage1("solo", "t000", true, None),
            Err(WorkflowError::DuplicateRating { .. })
        ));
        assert_eq!(
            engine.ratings("d").unwrap()[0].response,
            Response::NotInterpretable
        );
    }

    #[test]
    fn stage_two_before_stage_one_is_rejected() {
        let (engine, _) = engine(1, 1);
        engine.create_assignments("d", &["solo".into()], 0).unwrap();
        assert!(matches!(
            engine.submit_stage2("solo", "t000", true, None),
            Err(WorkflowError::StageOrderViolation {
                state: AssignmentState::PendingStage1,
                ..
            })
        ));
    }

    #[test]
    fn stage_two_no_is_recorded() {
        let (engine, _) = engine(1, 1);
        engine.create_assignments("d", &["solo".into()], 0).unwrap();
        engine.submit_stage1("solo", "t000", true, None).unwrap();
        engine.submit_stage2("solo", "t000", false, None).unwrap();
        assert_eq!(
            engine.ratings("d").unwrap()[0].response,
            Response::Interpretable { ais: false }
        );
    }

    #[test]
    fn flag_supersedes_partial_answer_and_leaves_others_alone() {
        let (engine, _) = engine(2, 2);
        engine
            .create_assignments("d", &["x".into(), "y".into()], 0)
            .unwrap();
        engine.submit_stage1("x", "t000", true, Some("fine")).unwrap();
        assert_eq!(
            engine
                .submit_flag("x", "t000", FlagReason::UnderspecifiedSource)
                .unwrap(),
            AssignmentState::Flagged
        );
        let ratings = engine.ratings("d").unwrap();
        assert_eq!(ratings.len(), 1);
        assert_eq!(
            ratings[0].response,
            Response::Flag {
                reason: FlagReason::UnderspecifiedSource
            }
        );
        assert_eq!(ratings[0].justification_stage1, None);

        assert_eq!(engine.next_task("x").unwrap().unwrap().task_id, "t001");
        assert_eq!(engine.next_task("y").unwrap().unwrap().task_id, "t000");
        assert!(matches!(
            engine.submit_flag("x", "t000", FlagReason::MalformedText),
            Err(WorkflowError::DuplicateRating { .. })
        ));
    }

    #[test]
    fn flag_after_completion_is_rejected() {
        let (engine, _) = engine(1, 1);
        engine.create_assignments("d", &["solo".into()], 0).unwrap();
        engine.submit_stage1("solo", "t000", false, None).unwrap();
        assert!(matches!(
            engine.submit_flag("solo", "t000", FlagReason::MalformedText),
            Err(WorkflowError::AlreadyComplete { .. })
        ));
    }

    #[test]
    fn pilot_mode_requires_justifications() {
        let engine = Engine::in_memory(WorkflowConfig::with_replication(1).pilot(true)).unwrap();
        engine
            .import_reader(corpus(1).as_bytes(), "d", TaskKind::ConversationalQa)
            .unwrap();
        engine.create_assignments("d", &["solo".into()], 0).unwrap();
        assert!(engine.next_task("solo").unwrap().unwrap().require_justification);
        assert!(matches!(
            engine.submit_stage1("solo", "t000", true, Some("  ")),
            Err(WorkflowError::MissingJustification)
        ));
        engine
            .submit_stage1("solo", "t000", true, Some("clear referent"))
            .unwrap();
        assert!(matches!(
            engine.submit_stage2("solo", "t000", true, None),
            Err(WorkflowError::MissingJustification)
        ));
        engine
            .submit_stage2("solo", "t000", true, Some("stated in passage"))
            .unwrap();
        let r = &engine.ratings("d").unwrap()[0];
        assert_eq!(r.justification_stage1.as_deref(), Some("clear referent"));
        assert_eq!(r.justification_stage2.as_deref(), Some("stated in passage"));
    }

    #[test]
    fn queue_is_fifo_by_import_order() {
        let (engine, _) = engine(1, 3);
        engine.create_assignments("d", &["solo".into()], 0).unwrap();
        for expected in ["t000", "t001", "t002"] {
            let p = engine.next_task("solo").unwrap().unwrap();
            assert_eq!(p.task_id, expected);
            engine.submit_stage1("solo", expected, false, None).unwrap();
        }
    }

    #[test]
    fn duplicate_import_is_rejected_without_partial_storage() {
        let (engine, _) = engine(1, 2);
        let err = engine
            .import_reader(corpus(3).as_bytes(), "d", TaskKind::ConversationalQa)
            .unwrap_err();
        assert!(matches!(err, WorkflowError::DuplicateTaskId(_)));
        assert_eq!(engine.tasks("d").unwrap().len(), 2);
    }

    #[test]
    fn durable_engine_replays_state() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new(50));
        {
            let engine = Engine::open_with_clock(
                dir.path(),
                WorkflowConfig::with_replication(2),
                clock.clone(),
            )
            .unwrap();
            engine
                .import_reader(corpus(3).as_bytes(), "d", TaskKind::ConversationalQa)
                .unwrap();
            engine
                .create_assignments("d", &["x".into(), "y".into()], 9)
                .unwrap();
            engine.next_task("x").unwrap();
            clock.advance(10);
            engine.submit_stage1("x", "t000", true, None).unwrap();
            engine.submit_flag("y", "t001", FlagReason::MalformedText).unwrap();
        }
        let engine =
            Engine::open_with_clock(dir.path(), WorkflowConfig::with_replication(2), clock)
                .unwrap();
        assert_eq!(engine.tasks("d").unwrap().len(), 3);
        assert_eq!(
            engine.assignment("t000", "x").unwrap().state,
            AssignmentState::AwaitingStage2
        );
        assert_eq!(
            engine.assignment("t001", "y").unwrap().state,
            AssignmentState::Flagged
        );
        assert_eq!(engine.next_task("x").unwrap().unwrap().stage, 2);
        engine.submit_stage2("x", "t000", true, None).unwrap();
        let rating = engine
            .ratings("d")
            .unwrap()
            .into_iter()
            .find(|r| r.annotator_id == "x")
            .unwrap();
        assert_eq!(rating.started_at, 50);
        assert!(matches!(
            engine.import_reader(corpus(1).as_bytes(), "d", TaskKind::ConversationalQa),
            Err(WorkflowError::DuplicateTaskId(_))
        ));
    }

    #[test]
    fn templates_load_from_toml() {
        let t = QuestionTemplates::from_toml(
            "[summarization]\nstage1 = \"Can you understand the summary?\"\n",
        )
        .unwrap();
        assert_eq!(
            t.question(TaskKind::Summarization, Stage::Interpretability),
            "Can you understand the summary?"
        );
        assert!(t
            .question(TaskKind::TableToText, Stage::Attribution)
            .ends_with("fully supported by the source table?"));
        assert!(QuestionTemplates::from_toml("[poetry]\nstage1 = \"x\"\n").is_err());
    }

    #[test]
    fn zero_replication_is_invalid() {
        assert!(matches!(
            Engine::in_memory(WorkflowConfig::with_replication(0)),
            Err(WorkflowError::InvalidReplication)
        ));
    }
}
