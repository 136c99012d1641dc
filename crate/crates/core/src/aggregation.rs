//! Per-task majority-vote consensus, dataset-level Flag/Int/AIS scores,
//! completion-time statistics and audit sampling.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{RatingRecord, Task, TaskKind};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggregationError {
    #[error("no ratings given")]
    EmptyRatings,
    #[error("ratings span several tasks (`{0}` and `{1}`)")]
    MixedTasks(String, String),
    #[error("empty input")]
    EmptyInput,
    #[error("every item was excluded as flagged")]
    AllFlagged(Box<ScoreReport>),
    #[error("audit fraction must be in (0, 1], got {0}")]
    InvalidFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consensus {
    Yes,
    No,
    NoConsensus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AisConsensus {
    Yes,
    No,
    NoConsensus,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusResult {
    pub task_id: String,
    pub flag_count: usize,
    pub valid_count: usize,
    pub interpretable: Consensus,
    pub ais: AisConsensus,
    pub excluded_as_flagged: bool,
}

fn strict_majority(yes: usize, no: usize) -> Consensus {
    let total = yes + no;
    if 2 * yes > total {
        Consensus::Yes
    } else if 2 * no > total {
        Consensus::No
    } else {
        Consensus::NoConsensus
    }
}

/// Majority vote over one task's ratings. Flags are excluded from both
/// votes; the task is excluded when flags outnumber the other ratings.
pub fn consensus(ratings: &[RatingRecord]) -> Result<ConsensusResult, AggregationError> {
    let first = ratings.first().ok_or(AggregationError::EmptyRatings)?;
    if let Some(other) = ratings.iter().find(|r| r.task_id != first.task_id) {
        return Err(AggregationError::MixedTasks(
            first.task_id.clone(),
            other.task_id.clone(),
        ));
    }

    let flag_count = ratings.iter().filter(|r| r.response.is_flag()).count();
    let valid_count = ratings.len() - flag_count;
    let int_yes = ratings
        .iter()
        .filter(|r| r.response.interpretable() == Some(true))
        .count();
    let interpretable = strict_majority(int_yes, valid_count - int_yes);

    let ais = if interpretable == Consensus::Yes {
        let answers: Vec<bool> = ratings.iter().filter_map(|r| r.response.ais()).collect();
        let yes = answers.iter().filter(|&&a| a).count();
        match strict_majority(yes, answers.len() - yes) {
            Consensus::Yes => AisConsensus::Yes,
            Consensus::No => AisConsensus::No,
            Consensus::NoConsensus => AisConsensus::NoConsensus,
        }
    } else {
        AisConsensus::NotApplicable
    };

    Ok(ConsensusResult {
        task_id: first.task_id.clone(),
        flag_count,
        valid_count,
        interpretable,
        ais,
        excluded_as_flagged: flag_count > valid_count,
    })
}

/// Consensus for every task that has ratings, ordered by task id.
pub fn consensus_by_task(ratings: &[RatingRecord]) -> Vec<ConsensusResult> {
    let mut groups: BTreeMap<&str, Vec<RatingRecord>> = BTreeMap::new();
    for r in ratings {
        groups.entry(&r.task_id).or_default().push(r.clone());
    }
    groups
        .values()
        .map(|g| consensus(g).expect("non-empty single-task group"))
        .collect()
}

/// `num/den` as a percentage with one decimal, rounded half up. Exact for
/// integer counts.
pub fn percent_display(num: usize, den: usize) -> String {
    assert!(den > 0, "percentage of an empty denominator");
    let tenths = (2 * 1000 * num as u128 + den as u128) / (2 * den as u128);
    format!("{}.{}", tenths / 10, tenths % 10)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Markers {
    pub flag: bool,
    pub int: bool,
    pub ais: bool,
}

impl Markers {
    /// `;`-joined names of marked columns.
    pub fn describe(&self) -> String {
        [("flag", self.flag), ("int", self.int), ("ais", self.ais)]
            .iter()
            .filter(|(_, on)| *on)
            .map(|(n, _)| *n)
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Flag/Int/AIS scores for one (dataset, system).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub dataset_id: String,
    pub system_id: String,
    pub n_total: usize,
    pub n_flagged: usize,
    pub n_no_consensus_int: usize,
    pub n_no_consensus_ais: usize,
    pub n_int_yes: usize,
    pub n_int_no: usize,
    pub n_ais_yes: usize,
    pub n_ais_no: usize,
    pub flag_pct: f64,
    pub int_pct: Option<f64>,
    pub ais_pct: Option<f64>,
    pub markers: Markers,
}

impl ScoreReport {
    pub fn flag_display(&self) -> String {
        percent_display(self.n_flagged, self.n_total)
    }

    pub fn int_display(&self) -> Option<String> {
        let den = self.n_int_yes + self.n_int_no;
        (den > 0).then(|| percent_display(self.n_int_yes, den))
    }

    pub fn ais_display(&self) -> Option<String> {
        let den = self.n_ais_yes + self.n_ais_no;
        (den > 0).then(|| percent_display(self.n_ais_yes, den))
    }

    /// Per-item interpretability outcomes behind `int_pct`.
    pub fn int_outcomes(&self) -> Vec<bool> {
        outcomes(self.n_int_yes, self.n_int_no)
    }

    /// Per-item attribution outcomes behind `ais_pct`.
    pub fn ais_outcomes(&self) -> Vec<bool> {
        outcomes(self.n_ais_yes, self.n_ais_no)
    }

    /// Per-item flag outcomes behind `flag_pct`.
    pub fn flag_outcomes(&self) -> Vec<bool> {
        outcomes(self.n_flagged, self.n_total - self.n_flagged)
    }
}

fn outcomes(yes: usize, no: usize) -> Vec<bool> {
    let mut v = vec![true; yes];
    v.resize(yes + no, false);
    v
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Aggregates consensus results of one (dataset, system). Int is over
/// non-flagged items with an interpretability consensus; AIS is over items
/// judged interpretable that have an attribution consensus.
pub fn dataset_scores(
    dataset_id: &str,
    system_id: &str,
    results: &[ConsensusResult],
) -> Result<ScoreReport, AggregationError> {
    if results.is_empty() {
        return Err(AggregationError::EmptyInput);
    }
    let mut report = ScoreReport {
        dataset_id: dataset_id.to_string(),
        system_id: system_id.to_string(),
        n_total: results.len(),
        n_flagged: 0,
        n_no_consensus_int: 0,
        n_no_consensus_ais: 0,
        n_int_yes: 0,
        n_int_no: 0,
        n_ais_yes: 0,
        n_ais_no: 0,
        flag_pct: 0.0,
        int_pct: None,
        ais_pct: None,
        markers: Markers::default(),
    };
    for r in results {
        if r.excluded_as_flagged {
            report.n_flagged += 1;
            continue;
        }
        match r.interpretable {
            Consensus::Yes => report.n_int_yes += 1,
            Consensus::No => report.n_int_no += 1,
            Consensus::NoConsensus => report.n_no_consensus_int += 1,
        }
        match r.ais {
            AisConsensus::Yes => report.n_ais_yes += 1,
            AisConsensus::No => report.n_ais_no += 1,
            AisConsensus::NoConsensus => report.n_no_consensus_ais += 1,
            AisConsensus::NotApplicable => {}
        }
    }
    report.flag_pct = report.n_flagged as f64 / report.n_total as f64;
    report.int_pct = ratio(report.n_int_yes, report.n_int_yes + report.n_int_no);
    report.ais_pct = ratio(report.n_ais_yes, report.n_ais_yes + report.n_ais_no);
    if report.n_flagged == report.n_total {
        return Err(AggregationError::AllFlagged(Box::new(report)));
    }
    Ok(report)
}

/// Scores every system of a dataset, ordered by system id. Tasks without
/// ratings are skipped; a system whose items were all flagged still gets
/// its flag-only report.
pub fn score_by_system(
    dataset_id: &str,
    tasks: &[Task],
    ratings: &[RatingRecord],
) -> Vec<ScoreReport> {
    let results: BTreeMap<String, ConsensusResult> = consensus_by_task(ratings)
        .into_iter()
        .map(|c| (c.task_id.clone(), c))
        .collect();
    let mut by_system: BTreeMap<&str, Vec<ConsensusResult>> = BTreeMap::new();
    for task in tasks.iter().filter(|t| t.dataset_id == dataset_id) {
        if let Some(c) = results.get(&task.task_id) {
            by_system.entry(&task.system_id).or_default().push(c.clone());
        }
    }
    by_system
        .into_iter()
        .filter_map(|(system, rs)| match dataset_scores(dataset_id, system, &rs) {
            Ok(r) => Some(r),
            Err(AggregationError::AllFlagged(r)) => Some(*r),
            Err(_) => None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationStats {
    pub count: usize,
    pub mean_secs: f64,
    pub median_secs: f64,
}

impl DurationStats {
    pub fn from_secs<I: IntoIterator<Item = f64>>(durations: I) -> Option<Self> {
        let mut v: Vec<f64> = durations.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        };
        Some(DurationStats {
            count: n,
            mean_secs: v.iter().sum::<f64>() / n as f64,
            median_secs: median,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionTimeRow {
    pub kind: TaskKind,
    pub phase: String,
    #[serde(flatten)]
    pub stats: DurationStats,
}

/// Average completion time per (task kind, phase). Ratings whose kind is
/// unknown are skipped; empty groups do not appear.
pub fn completion_time_stats<K, P>(
    ratings: &[RatingRecord],
    kind_of: K,
    phase_of: P,
) -> Vec<CompletionTimeRow>
where
    K: Fn(&RatingRecord) -> Option<TaskKind>,
    P: Fn(&RatingRecord) -> String,
{
    let mut groups: BTreeMap<(TaskKind, String), Vec<f64>> = BTreeMap::new();
    for r in ratings {
        if let Some(kind) = kind_of(r) {
            groups
                .entry((kind, phase_of(r)))
                .or_default()
                .push(r.duration_secs() as f64);
        }
    }
    groups
        .into_iter()
        .filter_map(|((kind, phase), d)| {
            DurationStats::from_secs(d).map(|stats| CompletionTimeRow { kind, phase, stats })
        })
        .collect()
}

/// Pilot ratings carry written justifications; production ratings do not.
pub fn phase_by_justification(r: &RatingRecord) -> String {
    let justified = r.justification_stage1.is_some() || r.justification_stage2.is_some();
    if justified { "pilot" } else { "production" }.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RatingId {
    pub task_id: String,
    pub annotator_id: String,
}

impl From<&RatingRecord> for RatingId {
    fn from(r: &RatingRecord) -> Self {
        RatingId {
            task_id: r.task_id.clone(),
            annotator_id: r.annotator_id.clone(),
        }
    }
}

/// `round(fraction * n)` with halves rounded up.
pub fn audit_sample_size(n: usize, fraction: f64) -> usize {
    // The epsilon keeps products such as 0.5000000000000001 and
    // 0.49999999999999994 on the intended side of the half.
    (fraction * n as f64 + 0.5 + 1e-9).floor() as usize
}

/// Draws `round(fraction * n)` ratings without replacement, returned in
/// input order.
pub fn audit_sample(
    ids: &[RatingId],
    fraction: f64,
    seed: u64,
) -> Result<Vec<RatingId>, AggregationError> {
    if ids.is_empty() {
        return Err(AggregationError::EmptyInput);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(AggregationError::InvalidFraction(fraction));
    }
    let k = audit_sample_size(ids.len(), fraction).min(ids.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, ids.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| ids[i].clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approved,
    Rejected,
}

/// Share of audited ratings that were approved.
pub fn audit_quality(verdicts: &[Verdict]) -> Result<f64, AggregationError> {
    if verdicts.is_empty() {
        return Err(AggregationError::EmptyInput);
    }
    let approved = verdicts.iter().filter(|&&v| v == Verdict::Approved).count();
    Ok(approved as f64 / verdicts.len() as f64)
}
