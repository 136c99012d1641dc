//! Domain types shared by every other module: tasks, their linguistic context
//! and attributed source, and the rating records annotators produce.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Epoch seconds.
pub type Timestamp = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ConversationalQa,
    Summarization,
    TableToText,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [
        TaskKind::ConversationalQa,
        TaskKind::Summarization,
        TaskKind::TableToText,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::ConversationalQa => "conversational_qa",
            TaskKind::Summarization => "summarization",
            TaskKind::TableToText => "table_to_text",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

/// Returned when parsing a stable enum name fails.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown name `{0}`")]
pub struct UnknownName(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    pub index: usize,
}

/// Preceding turns of the interaction plus the evaluation time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinguisticContext {
    pub turns: Vec<Turn>,
    pub time: Timestamp,
}

impl LinguisticContext {
    pub fn empty(time: Timestamp) -> Self {
        LinguisticContext {
            turns: Vec::new(),
            time,
        }
    }

    /// Builds a context from `(speaker, text)` pairs, numbering turns from 0.
    pub fn from_turns<I, S>(turns: I, time: Timestamp) -> Self
    where
        I: IntoIterator<Item = (Speaker, S)>,
        S: Into<String>,
    {
        let turns = turns
            .into_iter()
            .enumerate()
            .map(|(index, (speaker, text))| Turn {
                speaker,
                text: text.into(),
                index,
            })
            .collect();
        LinguisticContext { turns, time }
    }
}

fn one() -> u32 {
    1
}

fn is_one(v: &u32) -> bool {
    *v == 1
}

fn is_false(v: &bool) -> bool {
    !*v
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub text: String,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub row_span: u32,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub col_span: u32,
    #[serde(default, skip_serializing_if = "is_false")]
    pub is_header: bool,
}

impl Cell {
    pub fn new(text: impl Into<String>) -> Self {
        Cell {
            text: text.into(),
            row_span: 1,
            col_span: 1,
            is_header: false,
        }
    }

    pub fn header(text: impl Into<String>) -> Self {
        Cell {
            is_header: true,
            ..Cell::new(text)
        }
    }
}

/// The source `P` an output must be supported by.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum AttributedSource {
    Passage {
        text: String,
        corpus_id: String,
    },
    Article {
        text: String,
        corpus_id: String,
    },
    Table {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        title: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        section_title: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        section_text: Option<String>,
        rows: Vec<Vec<Cell>>,
        /// `(row, col)` where `col` indexes the row's cell list.
        #[serde(default)]
        highlights: BTreeSet<(usize, usize)>,
    },
}

impl AttributedSource {
    pub fn is_table(&self) -> bool {
        matches!(self, AttributedSource::Table { .. })
    }

    /// Every piece of text the source carries, in display order.
    pub fn texts(&self) -> Vec<&str> {
        match self {
            AttributedSource::Passage { text, .. } | AttributedSource::Article { text, .. } => {
                vec![text.as_str()]
            }
            AttributedSource::Table {
                title,
                section_title,
                section_text,
                rows,
                ..
            } => title
                .iter()
                .chain(section_title)
                .chain(section_text)
                .map(String::as_str)
                .chain(rows.iter().flatten().map(|c| c.text.as_str()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub dataset_id: String,
    pub system_id: String,
    pub kind: TaskKind,
    pub context: LinguisticContext,
    /// The system output under evaluation.
    pub output: String,
    pub source: AttributedSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagReason {
    MissingComponents,
    MalformedText,
    UnderspecifiedSource,
    ExpertKnowledgeRequired,
}

impl FlagReason {
    pub const ALL: [FlagReason; 4] = [
        FlagReason::MissingComponents,
        FlagReason::MalformedText,
        FlagReason::UnderspecifiedSource,
        FlagReason::ExpertKnowledgeRequired,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FlagReason::MissingComponents => "missing_components",
            FlagReason::MalformedText => "malformed_text",
            FlagReason::UnderspecifiedSource => "underspecified_source",
            FlagReason::ExpertKnowledgeRequired => "expert_knowledge_required",
        }
    }

    /// Short label shown next to the flag button.
    pub fn label(self) -> &'static str {
        match self {
            FlagReason::MissingComponents => "Missing components in the task",
            FlagReason::MalformedText => "Malformed text",
            FlagReason::UnderspecifiedSource => "Source is underspecified",
            FlagReason::ExpertKnowledgeRequired => "Source requires expert-level knowledge",
        }
    }
}

impl fmt::Display for FlagReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FlagReason {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FlagReason::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

/// An annotator's answer. An AIS judgement only exists once the output was
/// judged interpretable, so the gating rule holds by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Response {
    Flag { reason: FlagReason },
    NotInterpretable,
    Interpretable { ais: bool },
}

impl Response {
    pub fn is_flag(&self) -> bool {
        matches!(self, Response::Flag { .. })
    }

    /// Stage-1 answer, `None` for flags.
    pub fn interpretable(&self) -> Option<bool> {
        match self {
            Response::Flag { .. } => None,
            Response::NotInterpretable => Some(false),
            Response::Interpretable { .. } => Some(true),
        }
    }

    /// Stage-2 answer, present only for interpretable responses.
    pub fn ais(&self) -> Option<bool> {
        match self {
            Response::Interpretable { ais } => Some(*ais),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RatingRecord {
    pub task_id: String,
    pub annotator_id: String,
    pub response: Response,
    pub justification_stage1: Option<String>,
    pub justification_stage2: Option<String>,
    pub started_at: Timestamp,
    pub finished_at: Timestamp,
}

impl RatingRecord {
    pub fn duration_secs(&self) -> i64 {
        self.finished_at - self.started_at
    }

    /// `(task_id, annotator_id)`; unique within a rating set.
    pub fn key(&self) -> (&str, &str) {
        (&self.task_id, &self.annotator_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    EmptyTaskId,
    EmptyOutput,
    KindSourceMismatch,
    ContextNotAllowed,
    LastTurnNotUser,
    EmptyTurnText,
    TurnIndexNotContiguous,
    EmptySourceText,
    HighlightOutOfBounds,
    InvalidSpan,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::EmptyTaskId => "empty_task_id",
            ViolationCode::EmptyOutput => "empty_output",
            ViolationCode::KindSourceMismatch => "kind_source_mismatch",
            ViolationCode::ContextNotAllowed => "context_not_allowed",
            ViolationCode::LastTurnNotUser => "last_turn_not_user",
            ViolationCode::EmptyTurnText => "empty_turn_text",
            ViolationCode::TurnIndexNotContiguous => "turn_index_not_contiguous",
            ViolationCode::EmptySourceText => "empty_source_text",
            ViolationCode::HighlightOutOfBounds => "highlight_out_of_bounds",
            ViolationCode::InvalidSpan => "invalid_span",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Returns every invariant the task breaks; empty when valid.
pub fn validate_task(task: &Task) -> Vec<ViolationCode> {
    let mut out = Vec::new();

    if task.task_id.trim().is_empty() {
        out.push(ViolationCode::EmptyTaskId);
    }
    if task.output.trim().is_empty() {
        out.push(ViolationCode::EmptyOutput);
    }
    if (task.kind == TaskKind::TableToText) != task.source.is_table() {
        out.push(ViolationCode::KindSourceMismatch);
    }

    let turns = &task.context.turns;
    match task.kind {
        TaskKind::Summarization | TaskKind::TableToText => {
            if !turns.is_empty() {
                out.push(ViolationCode::ContextNotAllowed);
            }
        }
        TaskKind::ConversationalQa => {
            if turns.last().is_some_and(|t| t.speaker != Speaker::User) {
                out.push(ViolationCode::LastTurnNotUser);
            }
        }
    }
    if turns.iter().any(|t| t.text.trim().is_empty()) {
        out.push(ViolationCode::EmptyTurnText);
    }
    if turns.iter().enumerate().any(|(i, t)| t.index != i) {
        out.push(ViolationCode::TurnIndexNotContiguous);
    }

    match &task.source {
        AttributedSource::Passage { text, .. } | AttributedSource::Article { text, .. } => {
            if text.trim().is_empty() {
                out.push(ViolationCode::EmptySourceText);
            }
        }
        AttributedSource::Table {
            rows, highlights, ..
        } => {
            let bad_span = rows
                .iter()
                .flatten()
                .any(|c| c.row_span == 0 || c.col_span == 0);
            if bad_span {
                out.push(ViolationCode::InvalidSpan);
            }
            let out_of_bounds = highlights
                .iter()
                .any(|&(r, c)| rows.get(r).is_none_or(|row| c >= row.len()));
            if out_of_bounds {
                out.push(ViolationCode::HighlightOutOfBounds);
            }
        }
    }

    out
}
