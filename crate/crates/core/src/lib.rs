//! Two-stage attribution rating platform: task ingestion, assignment and
//! rating workflow, consensus scoring, agreement statistics and reports.

pub mod aggregation;
pub mod cli;
pub mod agreement;
pub mod ingestion;
pub mod model;
pub mod reporting;
pub mod service;
pub mod store;
pub mod workflow;

pub use aggregation::{ScoreReport, ConsensusResult};
pub use model::{RatingRecord, Response, Task, TaskKind};
pub use workflow::{Engine, WorkflowConfig, WorkflowError};
