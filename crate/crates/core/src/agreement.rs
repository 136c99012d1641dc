//! Inter-annotator agreement and crowd-vs-expert statistics.
//!
//! Nominal Krippendorff's alpha uses the coincidence-matrix formulation,
//! which handles missing cells: every ordered pair of distinct ratings `(c, k)`
//! inside an item with `m` ratings adds `1 / (m - 1)` to `o[c][k]`, and
//!
//! ```text
//! D_o = sum_{c != k} o[c][k] / n
//! D_e = sum_{c != k} n_c * n_k / (n * (n - 1))
//! alpha = 1 - D_o / D_e      (1.0 when D_e = 0)
//! ```

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Hypergeometric};
use serde::{Deserialize, Serialize};

use crate::aggregation::{consensus_by_task, AisConsensus, Consensus};
use crate::model::{FlagReason, RatingRecord, Response};

pub const DEFAULT_PERMUTATIONS: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AgreementError {
    #[error("no item has at least two ratings")]
    InsufficientData,
    #[error("no item has a consensus label")]
    NoConsensusItems,
    #[error("empty input")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Interpretability,
    Ais,
}

impl Dimension {
    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Interpretability => "int",
            Dimension::Ais => "ais",
        }
    }

    fn answer(self, response: &Response) -> Option<bool> {
        match self {
            Dimension::Interpretability => response.interpretable(),
            Dimension::Ais => response.ais(),
        }
    }
}

/// Sparse item x rater grid of yes/no answers for one dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingMatrix {
    dimension: Dimension,
    items: Vec<String>,
    raters: Vec<String>,
    item_index: HashMap<String, usize>,
    rater_index: HashMap<String, usize>,
    cells: BTreeMap<(usize, usize), bool>,
}

impl RatingMatrix {
    pub fn new(dimension: Dimension) -> Self {
        RatingMatrix {
            dimension,
            items: Vec::new(),
            raters: Vec::new(),
            item_index: HashMap::new(),
            rater_index: HashMap::new(),
            cells: BTreeMap::new(),
        }
    }

    /// Builds the matrix from rating records. Flags never enter; the AIS
    /// matrix only has cells where a stage-2 answer exists.
    pub fn from_ratings<'a, I>(dimension: Dimension, ratings: I) -> Self
    where
        I: IntoIterator<Item = &'a RatingRecord>,
    {
        let mut m = RatingMatrix::new(dimension);
        for r in ratings {
            if let Some(v) = dimension.answer(&r.response) {
                m.insert(&r.task_id, &r.annotator_id, v);
            }
        }
        m
    }

    pub fn insert(&mut self, item: &str, rater: &str, value: bool) {
        let i = intern(&mut self.items, &mut self.item_index, item);
        let r = intern(&mut self.raters, &mut self.rater_index, rater);
        self.cells.insert((i, r), value);
    }

    pub fn dimension(&self) -> Dimension {
        self.dimension
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn raters(&self) -> &[String] {
        &self.raters
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, item: &str, rater: &str) -> Option<bool> {
        let i = *self.item_index.get(item)?;
        let r = *self.rater_index.get(rater)?;
        self.cells.get(&(i, r)).copied()
    }

    /// Drops every cell of one rater.
    pub fn remove_rater(&mut self, rater: &str) {
        if let Some(&r) = self.rater_index.get(rater) {
            self.cells.retain(|&(_, rr), _| rr != r);
        }
    }

    /// Answers grouped by item, in item order (items may be empty).
    pub fn item_values(&self) -> Vec<(&str, Vec<bool>)> {
        let mut out: Vec<(&str, Vec<bool>)> =
            self.items.iter().map(|i| (i.as_str(), Vec::new())).collect();
        for (&(i, _), &v) in &self.cells {
            out[i].1.push(v);
        }
        out
    }

    fn units(&self) -> Vec<[usize; 2]> {
        self.item_values()
            .into_iter()
            .map(|(_, vs)| {
                let yes = vs.iter().filter(|&&v| v).count();
                [vs.len() - yes, yes]
            })
            .collect()
    }
}

fn intern(names: &mut Vec<String>, index: &mut HashMap<String, usize>, name: &str) -> usize {
    if let Some(&i) = index.get(name) {
        return i;
    }
    names.push(name.to_string());
    index.insert(name.to_string(), names.len() - 1);
    names.len() - 1
}

/// Nominal alpha over units given as per-category counts. Units with fewer
/// than two ratings are not pairable and are ignored.
pub fn nominal_alpha(units: &[Vec<usize>]) -> Result<f64, AgreementError> {
    let categories = units.iter().map(Vec::len).max().unwrap_or(0);
    let mut coincidence = vec![vec![0.0_f64; categories]; categories];
    let mut pairable = false;
    for counts in units {
        let m: usize = counts.iter().sum();
        if m < 2 {
            continue;
        }
        pairable = true;
        let w = 1.0 / (m - 1) as f64;
        for (c, &nc) in counts.iter().enumerate() {
            for (k, &nk) in counts.iter().enumerate() {
                let pairs = if c == k { nc * nc.saturating_sub(1) } else { nc * nk };
                coincidence[c][k] += pairs as f64 * w;
            }
        }
    }
    if !pairable {
        return Err(AgreementError::InsufficientData);
    }

    let marginals: Vec<f64> = coincidence.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = marginals.iter().sum();
    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..categories {
        for k in 0..categories {
            if c != k {
                observed += coincidence[c][k];
                expected += marginals[c] * marginals[k];
            }
        }
    }
    let d_o = observed / n;
    let d_e = expected / (n * (n - 1.0));
    if d_e == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - d_o / d_e)
}

pub fn krippendorff_alpha(matrix: &RatingMatrix) -> Result<f64, AgreementError> {
    let units: Vec<Vec<usize>> = matrix.units().iter().map(|u| u.to_vec()).collect();
    nominal_alpha(&units)
}

fn choose2(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// `(agreeing pairs, total pairs)` over unordered within-item pairs.
fn pair_counts(matrix: &RatingMatrix) -> (usize, usize) {
    matrix
        .units()
        .iter()
        .fold((0, 0), |(agree, total), &[no, yes]| {
            (agree + choose2(no) + choose2(yes), total + choose2(no + yes))
        })
}

/// Share of agreeing pairs, pooled over every unordered within-item pair.
pub fn pairwise_agreement(matrix: &RatingMatrix) -> Result<f64, AgreementError> {
    let (agree, total) = pair_counts(matrix);
    if total == 0 {
        return Err(AgreementError::InsufficientData);
    }
    Ok(agree as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Confusion {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Confusion {
    fn add(&mut self, predicted: bool, reference: bool) {
        match (predicted, reference) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => {}
        }
    }

    /// F1 for the "yes" class; 0 when it is undefined.
    fn f1(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / den as f64
        }
    }
}

/// F1 of individual answers against the per-item consensus, positive class
/// "yes", pooled over items that have a consensus.
pub fn f1_vs_consensus(
    matrix: &RatingMatrix,
    consensus: &HashMap<String, bool>,
) -> Result<f64, AgreementError> {
    let mut confusion = Confusion::default();
    let mut used = false;
    for (item, values) in matrix.item_values() {
        if let Some(&reference) = consensus.get(item) {
            used |= !values.is_empty();
            for v in values {
                confusion.add(v, reference);
            }
        }
    }
    if !used {
        return Err(AgreementError::NoConsensusItems);
    }
    Ok(confusion.f1())
}

/// Consensus labels of one dimension, leaving out flagged-out items and
/// items without a majority.
pub fn consensus_labels(ratings: &[RatingRecord], dimension: Dimension) -> HashMap<String, bool> {
    consensus_by_task(ratings)
        .into_iter()
        .filter(|c| !c.excluded_as_flagged)
        .filter_map(|c| {
            let label = match dimension {
                Dimension::Interpretability => match c.interpretable {
                    Consensus::Yes => Some(true),
                    Consensus::No => Some(false),
                    Consensus::NoConsensus => None,
                },
                Dimension::Ais => match c.ais {
                    AisConsensus::Yes => Some(true),
                    AisConsensus::No => Some(false),
                    _ => None,
                },
            };
            label.map(|l| (c.task_id, l))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertLabel {
    Yes,
    No,
    /// Either answer is acceptable.
    Either,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertAgreement {
    /// `None` when every compared item is labelled `Either`.
    pub f1: Option<f64>,
    pub pa: f64,
    /// Alpha over (crowd answer, expert label) pairs of non-`Either` items.
    pub alpha: Option<f64>,
    pub items_used: usize,
    pub pairs_used: usize,
}

/// Compares individual crowd answers with expert labels. An `Either` label
/// agrees with any answer for `pa` and is left out of `f1` and `alpha`.
pub fn expert_agreement(
    matrix: &RatingMatrix,
    experts: &HashMap<String, ExpertLabel>,
) -> Result<ExpertAgreement, AgreementError> {
    let mut agree = 0;
    let mut pairs = 0;
    let mut items_used = 0;
    let mut confusion = Confusion::default();
    let mut decided = false;
    let mut units = Vec::new();
    for (item, values) in matrix.item_values() {
        let Some(&label) = experts.get(item) else {
            continue;
        };
        if values.is_empty() {
            continue;
        }
        items_used += 1;
        for v in values {
            pairs += 1;
            let reference = match label {
                ExpertLabel::Either => {
                    agree += 1;
                    continue;
                }
                ExpertLabel::Yes => true,
                ExpertLabel::No => false,
            };
            decided = true;
            agree += usize::from(v == reference);
            confusion.add(v, reference);
            let mut unit = vec![0, 0];
            unit[usize::from(v)] += 1;
            unit[usize::from(reference)] += 1;
            units.push(unit);
        }
    }
    if pairs == 0 {
        return Err(AgreementError::EmptyInput);
    }
    Ok(ExpertAgreement {
        f1: decided.then(|| confusion.f1()),
        pa: agree as f64 / pairs as f64,
        alpha: nominal_alpha(&units).ok(),
        items_used,
        pairs_used: pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionAgreement {
    pub dimension: Dimension,
    pub f1: Option<f64>,
    pub pa: Option<f64>,
    pub alpha: Option<f64>,
    /// Items with at least two ratings.
    pub n_items: usize,
    /// Unordered within-item rating pairs.
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub rows: Vec<DimensionAgreement>,
}

impl AgreementReport {
    pub fn get(&self, dimension: Dimension) -> Option<&DimensionAgreement> {
        self.rows.iter().find(|r| r.dimension == dimension)
    }
}

pub fn dimension_agreement(ratings: &[RatingRecord], dimension: Dimension) -> DimensionAgreement {
    let matrix = RatingMatrix::from_ratings(dimension, ratings);
    let labels = consensus_labels(ratings, dimension);
    let n_items = matrix
        .units()
        .iter()
        .filter(|[no, yes]| no + yes >= 2)
        .count();
    DimensionAgreement {
        dimension,
        f1: f1_vs_consensus(&matrix, &labels).ok(),
        pa: pairwise_agreement(&matrix).ok(),
        alpha: krippendorff_alpha(&matrix).ok(),
        n_items,
        n_pairs: pair_counts(&matrix).1,
    }
}

pub fn agreement_report(ratings: &[RatingRecord], dimensions: &[Dimension]) -> AgreementReport {
    AgreementReport {
        rows: dimensions
            .iter()
            .map(|&d| dimension_agreement(ratings, d))
            .collect(),
    }
}

/// Two-sided permutation test on the difference of two proportions.
///
/// For binary outcomes, the number of successes landing in the first group
/// under a uniformly random relabelling is hypergeometric, so each
/// permutation is drawn from that distribution directly. Returns
/// `(hits + 1) / (iterations + 1)`, where a hit is a permuted absolute
/// difference at least as large as the observed one.
pub fn proportion_significance(
    sample_a: &[bool],
    sample_b: &[bool],
    iterations: u64,
    seed: u64,
) -> Result<f64, AgreementError> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(AgreementError::EmptyInput);
    }
    let na = sample_a.len() as i128;
    let nb = sample_b.len() as i128;
    let ka = sample_a.iter().filter(|&&x| x).count() as i128;
    let kb = sample_b.iter().filter(|&&x| x).count() as i128;
    let total = ka + kb;
    // |ka/na - kb/nb| scaled by na*nb keeps the comparison in integers.
    let observed = (ka * nb - kb * na).abs();

    let dist = Hypergeometric::new((na + nb) as u64, total as u64, na as u64)
        .expect("valid hypergeometric parameters");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    for _ in 0..iterations {
        let sa = dist.sample(&mut rng) as i128;
        let sb = total - sa;
        if (sa * nb - sb * na).abs() >= observed {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (iterations + 1) as f64)
}

/// Ground truth for one simulated item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemTruth {
    pub task_id: String,
    pub interpretable: bool,
    pub ais: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_raters: usize,
    /// Probability that a rater flips each true answer.
    pub noise: f64,
    pub flag_prob: f64,
    pub seed: u64,
}

/// Independent noisy raters. Each rater flags with `flag_prob`; otherwise
/// it reports the true interpretability flipped with probability `noise`,
/// and, when that answer is "yes", the true attribution flipped likewise.
pub fn simulate_raters(truth: &[ItemTruth], config: &SimulationConfig) -> Vec<RatingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(truth.len() * config.n_raters);
    let mut clock = 0i64;
    for item in truth {
        for r in 0..config.n_raters {
            let response = if rng.random_bool(config.flag_prob) {
                let reason = FlagReason::ALL[rng.random_range(0..FlagReason::ALL.len())];
                Response::Flag { reason }
            } else if item.interpretable ^ rng.random_bool(config.noise) {
                Response::Interpretable {
                    ais: item.ais ^ rng.random_bool(config.noise),
                }
            } else {
                Response::NotInterpretable
            };
            let duration = rng.random_range(20..=600);
            out.push(RatingRecord {
                task_id: item.task_id.clone(),
                annotator_id: format!("sim-{r:02}"),
                response,
                justification_stage1: None,
                justification_stage2: None,
                started_at: clock,
                finished_at: clock + duration,
            });
            clock += duration;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn matrix(dimension: Dimension, rows: &[&[Option<bool>]]) -> RatingMatrix {
        let mut m = RatingMatrix::new(dimension);
        for (i, row) in rows.iter().enumerate() {
            for (r, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    m.insert(&format!("i{i}"), &format!("r{r}"), *v);
                }
            }
        }
        m
    }

    const Y: Option<bool> = Some(true);
    const N: Option<bool> = Some(false);
    const X: Option<bool> = None;

    #[test]
    fn unanimous_items_give_alpha_one() {
        let m = matrix(Dimension::Interpretability, &[&[Y, Y, Y], &[N, N, N]]);
        assert_eq!(krippendorff_alpha(&m).unwrap(), 1.0);
        assert_eq!(pairwise_agreement(&m).unwrap(), 1.0);
    }

    #[test]
    fn single_category_is_one_by_convention() {
        let m = matrix(Dimension::Ais, &[&[Y, Y], &[Y, Y, Y]]);
        assert_eq!(krippendorff_alpha(&m).unwrap(), 1.0);
    }

    #[test]
    fn worked_example_with_missing_cell() {
        // Items: [Y,Y,N], [N,N,-], [Y,N,Y], [Y,Y,Y]
        // Coincidences: o[Y][Y] = 1 + 1 + 3 = 5, o[N][N] = 2, o[Y][N] = o[N][Y] = 1 + 1 = 2
        // n_Y = 7, n_N = 4, n = 11, D_o = 4/11, D_e = 2*7*4/(11*10) = 56/110
        // alpha = 1 - (4/11) / (56/110) = 1 - 40/56 = 2/7
        let m = matrix(
            Dimension::Interpretability,
            &[&[Y, Y, N], &[N, N, X], &[Y, N, Y], &[Y, Y, Y]],
        );
        assert_abs_diff_eq!(krippendorff_alpha(&m).unwrap(), 2.0 / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn alpha_needs_a_pairable_item() {
        let m = matrix(Dimension::Ais, &[&[Y, X], &[X, N]]);
        assert_eq!(krippendorff_alpha(&m), Err(AgreementError::InsufficientData));
        assert_eq!(pairwise_agreement(&m), Err(AgreementError::InsufficientData));
        assert_eq!(
            krippendorff_alpha(&RatingMatrix::new(Dimension::Ais)),
            Err(AgreementError::InsufficientData)
        );
    }

    #[test]
    fn pairwise_agreement_four_to_one() {
        // Of the 10 unordered pairs, the 6 among the four "yes" agree.
        let m = matrix(Dimension::Interpretability, &[&[Y, Y, Y, Y, N]]);
        assert_eq!(pairwise_agreement(&m).unwrap(), 0.6);
    }

    #[test]
    fn opposite_raters_never_agree() {
        let m = matrix(Dimension::Interpretability, &[&[Y, N], &[N, Y], &[Y, N]]);
        assert_eq!(pairwise_agreement(&m).unwrap(), 0.0);
    }

    #[test]
    fn f1_against_consensus() {
        let m = matrix(Dimension::Ais, &[&[Y, Y, Y], &[Y, Y, N], &[N, N, Y]]);
        let all_yes: HashMap<String, bool> =
            ["i0", "i1", "i2"].iter().map(|i| (i.to_string(), true)).collect();
        // TP = 3 + 2 + 1 = 6, FN = 3
        assert_abs_diff_eq!(f1_vs_consensus(&m, &all_yes).unwrap(), 12.0 / 15.0);

        let mixed: HashMap<String, bool> = [("i0", true), ("i1", true), ("i2", false)]
            .iter()
            .map(|(i, v)| (i.to_string(), *v))
            .collect();
        // i0: TP 3; i1: TP 2, FN 1; i2: FP 1
        assert_abs_diff_eq!(f1_vs_consensus(&m, &mixed).unwrap(), 10.0 / 12.0);
    }

    #[test]
    fn f1_hand_count() {
        // i0 consensus yes: [Y,Y,N] -> TP 2, FN 1
        // i1 consensus yes: [Y,Y,N] -> TP 2, FN 1
        // i2 consensus no:  [Y,N,N] -> FP 1
        // TP = 4, FP = 1, FN = 2 -> P = 0.8, R = 2/3, F1 = 8/11
        let m = matrix(Dimension::Ais, &[&[Y, Y, N], &[Y, Y, N], &[Y, N, N]]);
        let c: HashMap<String, bool> = [("i0", true), ("i1", true), ("i2", false)]
            .iter()
            .map(|(i, v)| (i.to_string(), *v))
            .collect();
        assert_abs_diff_eq!(f1_vs_consensus(&m, &c).unwrap(), 8.0 / 11.0, epsilon = 1e-12);
    }

    #[test]
    fn f1_edge_cases() {
        let m = matrix(Dimension::Ais, &[&[N, N]]);
        let yes: HashMap<String, bool> = [("i0".to_string(), true)].into();
        assert_eq!(f1_vs_consensus(&m, &yes).unwrap(), 0.0);
        let m = matrix(Dimension::Ais, &[&[Y, Y]]);
        assert_eq!(f1_vs_consensus(&m, &yes).unwrap(), 1.0);
        assert_eq!(
            f1_vs_consensus(&m, &HashMap::new()),
            Err(AgreementError::NoConsensusItems)
        );
    }

    #[test]
    fn expert_either_counts_as_agreement() {
        let m = matrix(Dimension::Interpretability, &[&[Y], &[Y], &[Y]]);
        let experts: HashMap<String, ExpertLabel> = [
            ("i0".to_string(), ExpertLabel::Either),
            ("i1".to_string(), ExpertLabel::Yes),
            ("i2".to_string(), ExpertLabel::No),
        ]
        .into();
        let e = expert_agreement(&m, &experts).unwrap();
        assert_abs_diff_eq!(e.pa, 2.0 / 3.0);
        // Either item left out of F1: TP 1, FP 1.
        assert_abs_diff_eq!(e.f1.unwrap(), 2.0 / 3.0);
        assert_eq!((e.items_used, e.pairs_used), (3, 3));

        let only_either: HashMap<String, ExpertLabel> =
            [("i0".to_string(), ExpertLabel::Either)].into();
        let e = expert_agreement(&m, &only_either).unwrap();
        assert_eq!(e.pa, 1.0);
        assert!(e.f1.is_none() && e.alpha.is_none());
        assert_eq!(
            expert_agreement(&m, &HashMap::new()),
            Err(AgreementError::EmptyInput)
        );
    }

    #[test]
    fn matrices_skip_flags_and_gate_ais() {
        let rec = |t: &str, a: &str, response| RatingRecord {
            task_id: t.into(),
            annotator_id: a.into(),
            response,
            justification_stage1: None,
            justification_stage2: None,
            started_at: 0,
            finished_at: 0,
        };
        let ratings = vec![
            rec("t", "a", Response::Interpretable { ais: true }),
            rec("t", "b", Response::NotInterpretable),
            rec("t", "c", Response::Flag { reason: FlagReason::MalformedText }),
        ];
        let int = RatingMatrix::from_ratings(Dimension::Interpretability, &ratings);
        assert_eq!(int.len(), 2);
        assert_eq!(int.get("t", "c"), None);
        let ais = RatingMatrix::from_ratings(Dimension::Ais, &ratings);
        assert_eq!(ais.len(), 1);
        assert_eq!(ais.get("t", "a"), Some(true));
    }

    #[test]
    fn removing_a_rater_keeps_matrix_consistent() {
        let mut m = matrix(Dimension::Interpretability, &[&[Y, N, Y], &[N, N, Y]]);
        m.remove_rater("r2");
        assert_eq!(m.len(), 4);
        assert_eq!(m.get("i0", "r2"), None);
        assert!(krippendorff_alpha(&m).is_ok());
        m.remove_rater("unknown");
        assert_eq!(m.len(), 4);
    }

    #[test]
    fn identical_samples_are_not_significant() {
        let a: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
        assert_eq!(proportion_significance(&a, &a, 1_000, 1).unwrap(), 1.0);
        assert_eq!(
            proportion_significance(&[], &a, 10, 1),
            Err(AgreementError::EmptyInput)
        );
    }

    #[test]
    fn permutation_test_is_deterministic() {
        let a: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let b: Vec<bool> = (0..40).map(|i| i % 3 == 0).collect();
        let p1 = proportion_significance(&a, &b, 2_000, 99).unwrap();
        assert_eq!(p1, proportion_significance(&a, &b, 2_000, 99).unwrap());
        assert!(p1 > 0.0 && p1 <= 1.0);
    }

    #[test]
    fn noiseless_simulation_agrees_perfectly() {
        let truth: Vec<ItemTruth> = (0..30)
            .map(|i| ItemTruth {
                task_id: format!("t{i}"),
                interpretable: i % 4 != 0,
                ais: i % 3 == 0,
            })
            .collect();
        let cfg = SimulationConfig {
            n_raters: 5,
            noise: 0.0,
            flag_prob: 0.0,
            seed: 3,
        };
        let ratings = simulate_raters(&truth, &cfg);
        assert_eq!(ratings.len(), 150);
        assert_eq!(ratings, simulate_raters(&truth, &cfg));
        for d in [Dimension::Interpretability, Dimension::Ais] {
            let m = RatingMatrix::from_ratings(d, &ratings);
            assert_eq!(krippendorff_alpha(&m).unwrap(), 1.0);
        }
        assert!(ratings.iter().all(|r| r.finished_at >= r.started_at));
    }

    #[test]
    fn report_counts_items_and_pairs() {
        let truth: Vec<ItemTruth> = (0..4)
            .map(|i| ItemTruth {
                task_id: format!("t{i}"),
                interpretable: true,
                ais: i % 2 == 0,
            })
            .collect();
        let ratings = simulate_raters(
            &truth,
            &SimulationConfig {
                n_raters: 3,
                noise: 0.0,
                flag_prob: 0.0,
                seed: 0,
            },
        );
        let report = agreement_report(&ratings, &[Dimension::Interpretability, Dimension::Ais]);
        let ais = report.get(Dimension::Ais).unwrap();
        assert_eq!((ais.n_items, ais.n_pairs), (4, 12));
        assert_eq!(ais.alpha, Some(1.0));
        assert_eq!(ais.f1, Some(1.0));
        assert_eq!(ais.pa, Some(1.0));
    }
}
