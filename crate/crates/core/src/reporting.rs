//! Score tables with significance markers, and CSV encodings of the
//! score, agreement and completion-time outputs.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::aggregation::{CompletionTimeRow, ScoreReport};
use crate::agreement::{proportion_significance, AgreementReport, DEFAULT_PERMUTATIONS};

pub const DEFAULT_THRESHOLD: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("no score reports to render")]
    EmptyInput,
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceConfig {
    pub iterations: u64,
    pub seed: u64,
    /// Cells with a p-value strictly below this are marked.
    pub threshold: f64,
}

impl Default for SignificanceConfig {
    fn default() -> Self {
        SignificanceConfig {
            iterations: DEFAULT_PERMUTATIONS,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// Rendered score table. `rows` carry their markers: a marked cell is
/// significantly below the highest value of its column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub title: String,
    pub rows: Vec<ScoreReport>,
    pub footnote: String,
}

const FOOTNOTE: &str = "* below the best value of its column at p < {p} (two-sided permutation test on proportions).";

/// `(yes, no)` counts behind one marked column.
type Counts = fn(&ScoreReport) -> (usize, usize);

fn int_counts(r: &ScoreReport) -> (usize, usize) {
    (r.n_int_yes, r.n_int_no)
}

fn ais_counts(r: &ScoreReport) -> (usize, usize) {
    (r.n_ais_yes, r.n_ais_no)
}

fn outcomes((yes, no): (usize, usize)) -> Vec<bool> {
    let mut v = vec![true; yes];
    v.resize(yes + no, false);
    v
}

/// Compares `a/(a+b)` with `c/(c+d)` exactly.
fn cmp_fraction((a, b): (usize, usize), (c, d): (usize, usize)) -> Ordering {
    (a as u128 * (c + d) as u128).cmp(&(c as u128 * (a + b) as u128))
}

/// Marks each column's cells that are significantly below the column's
/// maximum. Every system tied at the maximum stays unmarked; the others are
/// tested against the first maximum holder. Flag rates are not marked,
/// since a lower flag rate is not worse.
fn mark_column(rows: &mut [ScoreReport], counts: Counts, cfg: &SignificanceConfig) -> Vec<bool> {
    let mut marks = vec![false; rows.len()];
    let defined: Vec<usize> = (0..rows.len())
        .filter(|&i| {
            let (y, n) = counts(&rows[i]);
            y + n > 0
        })
        .collect();
    let Some(&best) = defined
        .iter()
        .reduce(|b, i| if cmp_fraction(counts(&rows[*i]), counts(&rows[*b])).is_gt() { i } else { b })
    else {
        return marks;
    };
    let best_counts = counts(&rows[best]);
    let best_outcomes = outcomes(best_counts);
    for &i in &defined {
        let c = counts(&rows[i]);
        if cmp_fraction(c, best_counts).is_lt() {
            let p = proportion_significance(&best_outcomes, &outcomes(c), cfg.iterations, cfg.seed)
                .expect("both samples are non-empty");
            marks[i] = p < cfg.threshold;
        }
    }
    marks
}

/// Builds a table from per-system reports. Markers already present on the
/// inputs are replaced. Output depends only on the inputs and `cfg`.
pub fn render_report(
    title: &str,
    reports: &[ScoreReport],
    cfg: &SignificanceConfig,
) -> Result<ReportTable, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let mut rows = reports.to_vec();
    let int = mark_column(&mut rows, int_counts, cfg);
    let ais = mark_column(&mut rows, ais_counts, cfg);
    for (i, row) in rows.iter_mut().enumerate() {
        row.markers.flag = false;
        row.markers.int = int[i];
        row.markers.ais = ais[i];
    }
    Ok(ReportTable {
        title: title.to_string(),
        rows,
        footnote: FOOTNOTE.replace("{p}", &cfg.threshold.to_string()),
    })
}

fn cell(value: Option<String>, marked: bool) -> String {
    match value {
        Some(v) if marked => format!("{v}*"),
        Some(v) => v,
        None => "-".to_string(),
    }
}

impl ReportTable {
    pub fn to_markdown(&self) -> String {
        let mut out = format!("## {}\n\n", self.title);
        out.push_str("| System | Flag | Int | AIS | n |\n");
        out.push_str("|---|---:|---:|---:|---:|\n");
        for r in &self.rows {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                r.system_id,
                cell(Some(r.flag_display()), r.markers.flag),
                cell(r.int_display(), r.markers.int),
                cell(r.ais_display(), r.markers.ais),
                r.n_total,
            ));
        }
        if self.rows.iter().any(|r| r.markers != Default::default()) {
            out.push('\n');
            out.push_str(&self.footnote.replace('*', "\\*"));
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> Result<String, ReportError> {
        scores_csv(&self.rows)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String, ReportError> {
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Columns: dataset, system, flag, int, ais, n, markers. Undefined
/// percentages are empty.
pub fn scores_csv(reports: &[ScoreReport]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", "system", "flag", "int", "ais", "n", "markers"])?;
    for r in reports {
        w.write_record([
            r.dataset_id.clone(),
            r.system_id.clone(),
            r.flag_display(),
            r.int_display().unwrap_or_default(),
            r.ais_display().unwrap_or_default(),
            r.n_total.to_string(),
            r.markers.describe(),
        ])?;
    }
    finish(w)
}

fn metric(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// Columns: dimension, f1, pa, alpha, n_items, n_pairs.
pub fn agreement_csv(report: &AgreementReport) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dimension", "f1", "pa", "alpha", "n_items", "n_pairs"])?;
    for d in &report.rows {
        w.write_record([
            d.dimension.as_str().to_string(),
            metric(d.f1),
            metric(d.pa),
            metric(d.alpha),
            d.n_items.to_string(),
            d.n_pairs.to_string(),
        ])?;
    }
    finish(w)
}

/// Columns: kind, phase, count, mean_secs, median_secs.
pub fn completion_time_csv(rows: &[CompletionTimeRow]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["kind", "phase", "count", "mean_secs", "median_secs"])?;
    for r in rows {
        w.write_record([
            r.kind.as_str().to_string(),
            r.phase.clone(),
            r.stats.count.to_string(),
            format!("{:.2}", r.stats.mean_secs),
            format!("{:.2}", r.stats.median_secs),
        ])?;
    }
    finish(w)
}
