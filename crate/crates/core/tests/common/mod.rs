//! Helpers shared by the integration tests, including brute-force oracles
//! that recompute the agreement statistics straight from their definitions.

#![allow(dead_code)]

use ais_core::agreement::{Dimension, RatingMatrix};
use ais_core::model::{RatingRecord, Response};

pub fn rating(task: &str, annotator: &str, response: Response) -> RatingRecord {
    RatingRecord {
        task_id: task.to_string(),
        annotator_id: annotator.to_string(),
        response,
        justification_stage1: None,
        justification_stage2: None,
        started_at: 0,
        finished_at: 60,
    }
}

/// Task line for a conversational task with a one-turn context.
pub fn qa_line(task_id: &str, system_id: &str) -> String {
    serde_json::json!({
        "task_id": task_id,
        "system_id": system_id,
        "context": {"turns": [{"speaker": "user", "text": format!("question for {task_id}?")}], "time": 1_650_000_000},
        "output": format!("answer of {system_id}"),
        "source": {"variant": "passage", "text": format!("SOURCE-PASSAGE {task_id}"), "corpus_id": "wiki"},
    })
    .to_string()
}

pub fn qa_corpus(n: usize, system_id: &str) -> String {
    (0..n)
        .map(|i| qa_line(&format!("{system_id}-{i:04}"), system_id) + "\n")
        .collect()
}

/// Grid rows as a matrix; `None` cells stay missing.
pub fn matrix_from_grid(grid: &[Vec<Option<bool>>]) -> RatingMatrix {
    let mut m = RatingMatrix::new(Dimension::Interpretability);
    for (i, row) in grid.iter().enumerate() {
        for (r, cell) in row.iter().enumerate() {
            if let Some(v) = cell {
                m.insert(&format!("item{i}"), &format!("rater{r}"), *v);
            }
        }
    }
    m
}

fn pairable(grid: &[Vec<Option<bool>>]) -> Vec<Vec<bool>> {
    grid.iter()
        .map(|row| row.iter().flatten().copied().collect::<Vec<_>>())
        .filter(|vs| vs.len() >= 2)
        .collect()
}

/// Alpha by enumerating every ordered pair of ratings: within items for the
/// observed disagreement (weighted by 1/(m-1)) and across the pooled
/// pairable ratings for the expected disagreement.
pub fn oracle_alpha(grid: &[Vec<Option<bool>>]) -> Option<f64> {
    let units = pairable(grid);
    if units.is_empty() {
        return None;
    }
    let mut observed = 0.0;
    for vs in &units {
        let m = vs.len() as f64;
        for i in 0..vs.len() {
            for j in 0..vs.len() {
                if i != j && vs[i] != vs[j] {
                    observed += 1.0 / (m - 1.0);
                }
            }
        }
    }
    let pooled: Vec<bool> = units.concat();
    let n = pooled.len() as f64;
    let mut expected_pairs = 0.0;
    for i in 0..pooled.len() {
        for j in 0..pooled.len() {
            if i != j && pooled[i] != pooled[j] {
                expected_pairs += 1.0;
            }
        }
    }
    let d_o = observed / n;
    let d_e = expected_pairs / (n * (n - 1.0));
    Some(if d_e == 0.0 { 1.0 } else { 1.0 - d_o / d_e })
}

/// Pairwise agreement by listing every unordered within-item pair.
pub fn oracle_pa(grid: &[Vec<Option<bool>>]) -> Option<f64> {
    let mut agree = 0usize;
    let mut total = 0usize;
    for vs in pairable(grid) {
        for i in 0..vs.len() {
            for j in i + 1..vs.len() {
                total += 1;
                agree += usize::from(vs[i] == vs[j]);
            }
        }
    }
    (total > 0).then(|| agree as f64 / total as f64)
}
