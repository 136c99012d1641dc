//! Line-oriented JSON formats for task corpora and rating records.
//!
//! Task line:
//!
//! ```text
//! {"task_id":"q1","dataset_id":"qrecc","system_id":"t5-base","kind":"conversational_qa",
//!  "context":{"turns":[{"speaker":"user","text":"..."}],"time":1650000000},
//!  "output":"...","source":{"variant":"passage","text":"...","corpus_id":"..."}}
//! ```
//!
//! Rating line:
//!
//! ```text
//! {"task_id":"q1","annotator_id":"a1","response":{"type":"full","ais":true},
//!  "started_at":1650000000,"finished_at":1650000090}
//! ```
//!
//! Text is kept verbatim. Enum values are lower_snake_case, timestamps are
//! integer epoch seconds and table highlights are `[row, col]` pairs.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::model::{
    validate_task, AttributedSource, FlagReason, LinguisticContext, RatingRecord, Response,
    Speaker, Task, TaskKind, Timestamp, Turn, ViolationCode,
};

/// Why a single line was rejected.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LineError {
    #[error("not a JSON object: {0}")]
    Json(String),
    #[error("schema error in `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("validation failed: {0:?}")]
    Validation(Vec<ViolationCode>),
    #[error("line kind `{found}` does not match import kind `{expected}`")]
    KindMismatch { expected: TaskKind, found: TaskKind },
    #[error("line dataset `{found}` does not match import dataset `{expected}`")]
    DatasetMismatch { expected: String, found: String },
    #[error("ais answer present on a non-interpretable response")]
    GatingViolation,
    #[error("finished_at precedes started_at")]
    InvalidTimestamps,
}

impl LineError {
    /// Machine-readable code used in import summaries.
    pub fn code(&self) -> String {
        match self {
            LineError::Json(_) => "invalid_json".into(),
            LineError::Schema { field, .. } => format!("schema_error:{field}"),
            LineError::Validation(codes) => codes
                .iter()
                .map(|c| c.as_str())
                .collect::<Vec<_>>()
                .join(","),
            LineError::KindMismatch { .. } => "kind_mismatch".into(),
            LineError::DatasetMismatch { .. } => "dataset_mismatch".into(),
            LineError::GatingViolation => "gating_violation".into(),
            LineError::InvalidTimestamps => "invalid_timestamps".into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {error}")]
    AtLine { line: usize, error: LineError },
    #[error("line {line}: duplicate task id `{task_id}`")]
    DuplicateTaskId { line: usize, task_id: String },
    #[error("line {line}: duplicate rating for task `{task_id}` by `{annotator_id}`")]
    DuplicateRating {
        line: usize,
        task_id: String,
        annotator_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineViolation {
    pub line: usize,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportSummary {
    pub dataset_id: String,
    pub accepted: usize,
    pub rejected: usize,
    pub violations: Vec<LineViolation>,
}

#[derive(Serialize, Deserialize)]
struct TurnLine {
    speaker: Speaker,
    text: String,
    #[serde(default, skip_serializing)]
    index: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct ContextLine {
    #[serde(default)]
    turns: Vec<TurnLine>,
    time: Timestamp,
}

#[derive(Serialize)]
struct TaskLineOut<'a> {
    task_id: &'a str,
    dataset_id: &'a str,
    system_id: &'a str,
    kind: TaskKind,
    context: ContextLine,
    output: &'a str,
    source: &'a AttributedSource,
}

fn field<T: DeserializeOwned>(obj: &Map<String, Value>, name: &str) -> Result<T, LineError> {
    optional_field(obj, name)?.ok_or_else(|| LineError::Schema {
        field: name.to_string(),
        message: "missing field".into(),
    })
}

fn optional_field<T: DeserializeOwned>(
    obj: &Map<String, Value>,
    name: &str,
) -> Result<Option<T>, LineError> {
    match obj.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => T::deserialize(v).map(Some).map_err(|e| LineError::Schema {
            field: name.to_string(),
            message: e.to_string(),
        }),
    }
}

fn parse_object(line: &str) -> Result<Map<String, Value>, LineError> {
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(obj)) => Ok(obj),
        Ok(_) => Err(LineError::Json("expected an object".into())),
        Err(e) => Err(LineError::Json(e.to_string())),
    }
}

/// Parses and validates one task line. A `kind` key in the line, when
/// present, must agree with `kind`; a missing `dataset_id` is left empty.
pub fn parse_task_line(line: &str, kind: TaskKind) -> Result<Task, LineError> {
    let obj = parse_object(line)?;

    let task_id: String = field(&obj, "task_id")?;
    let dataset_id: String = optional_field(&obj, "dataset_id")?.unwrap_or_default();
    let system_id: String = field(&obj, "system_id")?;
    if let Some(found) = optional_field::<TaskKind>(&obj, "kind")? {
        if found != kind {
            return Err(LineError::KindMismatch {
                expected: kind,
                found,
            });
        }
    }
    let context: ContextLine = field(&obj, "context")?;
    let output: String = field(&obj, "output")?;
    let source: AttributedSource = field(&obj, "source")?;

    // An explicit index that disagrees with the position is kept so
    // validation reports it.
    let turns = context
        .turns
        .into_iter()
        .enumerate()
        .map(|(i, t)| Turn {
            speaker: t.speaker,
            text: t.text,
            index: t.index.unwrap_or(i),
        })
        .collect();

    let task = Task {
        task_id,
        dataset_id,
        system_id,
        kind,
        context: LinguisticContext {
            turns,
            time: context.time,
        },
        output,
        source,
    };
    let violations = validate_task(&task);
    if violations.is_empty() {
        Ok(task)
    } else {
        Err(LineError::Validation(violations))
    }
}

/// Canonical single-line encoding of a task (no trailing newline).
pub fn encode_task_line(task: &Task) -> String {
    let out = TaskLineOut {
        task_id: &task.task_id,
        dataset_id: &task.dataset_id,
        system_id: &task.system_id,
        kind: task.kind,
        context: ContextLine {
            turns: task
                .context
                .turns
                .iter()
                .map(|t| TurnLine {
                    speaker: t.speaker,
                    text: t.text.clone(),
                    index: None,
                })
                .collect(),
            time: task.context.time,
        },
        output: &task.output,
        source: &task.source,
    };
    serde_json::to_string(&out).expect("task serialization is infallible")
}

/// Non-blank lines of a reader paired with their 1-based line numbers.
fn numbered_lines<R: BufRead>(reader: R) -> impl Iterator<Item = io::Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)))
        .filter(|r| r.as_ref().map_or(true, |(_, l)| !l.trim().is_empty()))
}

/// Parses a whole task corpus. Malformed lines are reported in the summary
/// and skipped; a repeated task id aborts the read.
pub fn read_dataset<R: BufRead>(
    reader: R,
    dataset_id: &str,
    kind: TaskKind,
) -> Result<(Vec<Task>, ImportSummary), IngestError> {
    let mut tasks = Vec::new();
    let mut seen = HashSet::new();
    let mut summary = ImportSummary {
        dataset_id: dataset_id.to_string(),
        accepted: 0,
        rejected: 0,
        violations: Vec::new(),
    };

    for entry in numbered_lines(reader) {
        let (line_no, line) = entry?;
        let parsed = parse_task_line(&line, kind).and_then(|mut task| {
            if task.dataset_id.is_empty() {
                task.dataset_id = dataset_id.to_string();
            } else if task.dataset_id != dataset_id {
                return Err(LineError::DatasetMismatch {
                    expected: dataset_id.to_string(),
                    found: task.dataset_id,
                });
            }
            Ok(task)
        });
        match parsed {
            Ok(task) => {
                if !seen.insert(task.task_id.clone()) {
                    return Err(IngestError::DuplicateTaskId {
                        line: line_no,
                        task_id: task.task_id,
                    });
                }
                summary.accepted += 1;
                tasks.push(task);
            }
            Err(e) => {
                summary.rejected += 1;
                summary.violations.push(LineViolation {
                    line: line_no,
                    code: e.code(),
                });
            }
        }
    }
    Ok((tasks, summary))
}

pub fn read_dataset_file(
    path: &Path,
    dataset_id: &str,
    kind: TaskKind,
) -> Result<(Vec<Task>, ImportSummary), IngestError> {
    read_dataset(BufReader::new(File::open(path)?), dataset_id, kind)
}

#[derive(Serialize, Deserialize)]
struct ResponseLine {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reason: Option<FlagReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ais: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    interpretable: Option<bool>,
}

#[derive(Serialize, Deserialize)]
struct RatingLine {
    task_id: String,
    annotator_id: String,
    response: ResponseLine,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    justification_stage1: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    justification_stage2: Option<String>,
    started_at: Timestamp,
    finished_at: Timestamp,
}

fn response_from_line(r: ResponseLine) -> Result<Response, LineError> {
    let schema = |message: &str| LineError::Schema {
        field: "response".into(),
        message: message.into(),
    };
    match r.kind.as_str() {
        "flag" => {
            if r.ais.is_some() || r.interpretable.is_some() {
                return Err(schema("flag responses carry no answers"));
            }
            let reason = r.reason.ok_or_else(|| schema("flag without reason"))?;
            Ok(Response::Flag { reason })
        }
        "stage1_no" => {
            if r.ais.is_some() || r.interpretable == Some(true) {
                return Err(LineError::GatingViolation);
            }
            Ok(Response::NotInterpretable)
        }
        "full" => match (r.interpretable, r.ais) {
            (Some(false), _) => Err(LineError::GatingViolation),
            (_, Some(ais)) => Ok(Response::Interpretable { ais }),
            (_, None) => Err(schema("full response without ais")),
        },
        other => Err(schema(&format!("unknown response type `{other}`"))),
    }
}

impl TryFrom<RatingLine> for RatingRecord {
    type Error = LineError;

    fn try_from(raw: RatingLine) -> Result<Self, LineError> {
        let response = response_from_line(raw.response)?;
        if raw.finished_at < raw.started_at {
            return Err(LineError::InvalidTimestamps);
        }
        Ok(RatingRecord {
            task_id: raw.task_id,
            annotator_id: raw.annotator_id,
            response,
            justification_stage1: raw.justification_stage1,
            justification_stage2: raw.justification_stage2,
            started_at: raw.started_at,
            finished_at: raw.finished_at,
        })
    }
}

impl From<&RatingRecord> for RatingLine {
    fn from(record: &RatingRecord) -> Self {
        let (kind, reason, ais) = match record.response {
            Response::Flag { reason } => ("flag", Some(reason), None),
            Response::NotInterpretable => ("stage1_no", None, None),
            Response::Interpretable { ais } => ("full", None, Some(ais)),
        };
        RatingLine {
            task_id: record.task_id.clone(),
            annotator_id: record.annotator_id.clone(),
            response: ResponseLine {
                kind: kind.into(),
                reason,
                ais,
                interpretable: None,
            },
            justification_stage1: record.justification_stage1.clone(),
            justification_stage2: record.justification_stage2.clone(),
            started_at: record.started_at,
            finished_at: record.finished_at,
        }
    }
}

impl Serialize for RatingRecord {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RatingLine::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RatingRecord {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RatingLine::deserialize(deserializer)?;
        RatingRecord::try_from(raw).map_err(serde::de::Error::custom)
    }
}

pub fn parse_rating_line(line: &str) -> Result<RatingRecord, LineError> {
    let obj = parse_object(line)?;
    RatingRecord::try_from(RatingLine {
        task_id: field(&obj, "task_id")?,
        annotator_id: field(&obj, "annotator_id")?,
        response: field(&obj, "response")?,
        justification_stage1: optional_field(&obj, "justification_stage1")?,
        justification_stage2: optional_field(&obj, "justification_stage2")?,
        started_at: field(&obj, "started_at")?,
        finished_at: field(&obj, "finished_at")?,
    })
}

/// Canonical single-line encoding of a rating (no trailing newline).
pub fn encode_rating_line(record: &RatingRecord) -> String {
    serde_json::to_string(record).expect("rating serialization is infallible")
}

/// Reads rating records, rejecting the whole input on the first bad line.
pub fn read_ratings<R: BufRead>(reader: R) -> Result<Vec<RatingRecord>, IngestError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for entry in numbered_lines(reader) {
        let (line, text) = entry?;
        let record =
            parse_rating_line(&text).map_err(|error| IngestError::AtLine { line, error })?;
        if !seen.insert((record.task_id.clone(), record.annotator_id.clone())) {
            return Err(IngestError::DuplicateRating {
                line,
                task_id: record.task_id,
                annotator_id: record.annotator_id,
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn load_ratings(path: &Path) -> Result<Vec<RatingRecord>, IngestError> {
    read_ratings(BufReader::new(File::open(path)?))
}

/// Writes one rating per line.
pub fn write_ratings<'a, W, I>(mut writer: W, records: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a RatingRecord>,
{
    for record in records {
        writeln!(writer, "{}", encode_rating_line(record))?;
    }
    writer.flush()
}
