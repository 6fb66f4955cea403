//! Ratings and agreement statistics over a vote log.
//!
//! ELO uses the logistic update
//! `expected_a = 1 / (1 + 10^((R_b - R_a) / scale))`,
//! `R_a += K (s_a - expected_a)`, `R_b -= K (s_a - expected_a)`, so every
//! step moves the same amount of rating from one side to the other.
//! Order sensitivity is removed by replaying the log under many random
//! orderings and reporting the mean final rating with a 2.5/97.5 percentile
//! interval.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::vote::{Outcome, Vote};
use crate::seed::indexed_rng;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("invalid ELO config: {0}")]
    InvalidConfig(String),
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EloConfig {
    pub initial_rating: f64,
    pub k_factor: f64,
    pub logistic_scale: f64,
    pub n_permutations: usize,
    pub seed: u64,
}

impl Default for EloConfig {
    fn default() -> Self {
        Self {
            initial_rating: 1000.0,
            k_factor: 32.0,
            logistic_scale: 400.0,
            n_permutations: 1000,
            seed: 0,
        }
    }
}

impl EloConfig {
    pub fn validate(&self) -> Result<(), AnalyticsError> {
        let bad = |m: &str| Err(AnalyticsError::InvalidConfig(m.to_string()));
        if !self.initial_rating.is_finite() {
            return bad("initial_rating must be finite");
        }
        if !(self.k_factor > 0.0 && self.k_factor.is_finite()) {
            return bad("k_factor must be > 0");
        }
        if !(self.logistic_scale > 0.0 && self.logistic_scale.is_finite()) {
            return bad("logistic_scale must be > 0");
        }
        if self.n_permutations == 0 {
            return bad("n_permutations must be >= 1");
        }
        Ok(())
    }

    /// Probability that a player rated `rating` beats one rated `opponent`.
    pub fn expected(&self, rating: f64, opponent: f64) -> f64 {
        1.0 / (1.0 + 10f64.powf((opponent - rating) / self.logistic_scale))
    }

    /// One rating update; returns the new `(R_a, R_b)`.
    pub fn update(&self, rating_a: f64, rating_b: f64, outcome: Outcome) -> (f64, f64) {
        let delta = self.k_factor * (outcome.score_a() - self.expected(rating_a, rating_b));
        (rating_a + delta, rating_b - delta)
    }
}

/// Votes reduced to model indices.
struct IndexedVotes {
    models: Vec<String>,
    matches: Vec<(usize, usize, Outcome)>,
}

impl IndexedVotes {
    fn new(votes: &[Vote]) -> Result<Self, AnalyticsError> {
        if votes.is_empty() {
            return Err(AnalyticsError::Usage("no votes".into()));
        }
        let models: Vec<String> = votes
            .iter()
            .flat_map(|v| [v.model_a.clone(), v.model_b.clone()])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index_of = |m: &str| models.binary_search_by(|x| x.as_str().cmp(m)).unwrap();
        let matches = votes
            .iter()
            .map(|v| (index_of(&v.model_a), index_of(&v.model_b), v.outcome))
            .collect();
        Ok(Self { models, matches })
    }

    fn replay(&self, order: impl Iterator<Item = usize>, config: &EloConfig) -> Vec<f64> {
        let mut ratings = vec![config.initial_rating; self.models.len()];
        for i in order {
            let (a, b, outcome) = self.matches[i];
            let (ra, rb) = config.update(ratings[a], ratings[b], outcome);
            ratings[a] = ra;
            ratings[b] = rb;
        }
        ratings
    }
}

/// Final ratings after replaying `votes` in order.
pub fn elo_sequence(votes: &[Vote], config: &EloConfig) -> Result<BTreeMap<String, f64>, AnalyticsError> {
    config.validate()?;
    let indexed = IndexedVotes::new(votes)?;
    let ratings = indexed.replay(0..indexed.matches.len(), config);
    Ok(indexed.models.into_iter().zip(ratings).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRating {
    pub model: String,
    pub mean_rating: f64,
    pub ci_plus: f64,
    pub ci_minus: f64,
}

impl ModelRating {
    /// Rating and interval rounded to whole points, e.g. `1061 +61/-52`.
    pub fn table_cell(&self) -> String {
        format!(
            "{:.0} +{:.0}/-{:.0}",
            self.mean_rating, self.ci_plus, self.ci_minus
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EloReport {
    /// Sorted by mean rating, highest first; ties by model name.
    pub ratings: Vec<ModelRating>,
    pub n_permutations: usize,
    pub seed: u64,
}

impl EloReport {
    pub fn get(&self, model: &str) -> Option<&ModelRating> {
        self.ratings.iter().find(|r| r.model == model)
    }
}

/// Linear-interpolation percentile of sorted data, `p` in `[0, 1]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Permutation-averaged ELO.
///
/// Permutation `p` shuffles with the generator stream `(seed, p)`, so the
/// report does not depend on how permutations are scheduled across threads.
pub fn elo_permuted(votes: &[Vote], config: &EloConfig) -> Result<EloReport, AnalyticsError> {
    config.validate()?;
    let indexed = IndexedVotes::new(votes)?;
    let n = indexed.matches.len();
    let finals: Vec<Vec<f64>> = (0..config.n_permutations)
        .into_par_iter()
        .map(|p| {
            let mut rng = indexed_rng(config.seed, p as u64);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            indexed.replay(order.into_iter(), config)
        })
        .collect();

    let mut ratings: Vec<ModelRating> = indexed
        .models
        .iter()
        .enumerate()
        .map(|(m, model)| {
            let mut values: Vec<f64> = finals.iter().map(|r| r[m]).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            values.sort_unstable_by(f64::total_cmp);
            let hi = percentile(&values, 0.975);
            let lo = percentile(&values, 0.025);
            ModelRating {
                model: model.clone(),
                mean_rating: mean,
                ci_plus: (hi - mean).max(0.0),
                ci_minus: (mean - lo).max(0.0),
            }
        })
        .collect();
    ratings.sort_by(|a, b| {
        b.mean_rating.total_cmp(&a.mean_rating).then_with(|| a.model.cmp(&b.model))
    });
    Ok(EloReport { ratings, n_permutations: config.n_permutations, seed: config.seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinPct {
    pub model: String,
    pub win: usize,
    pub both: usize,
    pub total: usize,
    pub value: f64,
}

impl WinPct {
    fn from_counts(model: &str, win: usize, both: usize, total: usize) -> Self {
        Self {
            model: model.to_string(),
            win,
            both,
            total,
            value: (win + both) as f64 / total as f64,
        }
    }
}

/// `(win + both) / total` over the votes `model` took part in.
pub fn win_pct(votes: &[Vote], model: &str) -> Result<WinPct, AnalyticsError> {
    let mut win = 0;
    let mut both = 0;
    let mut total = 0;
    for v in votes.iter().filter(|v| v.involves(model)) {
        total += 1;
        if v.outcome == Outcome::Both {
            both += 1;
        } else if v.won_by(model) {
            win += 1;
        }
    }
    if total == 0 {
        return Err(AnalyticsError::Usage(format!("model `{model}` has no votes")));
    }
    Ok(WinPct::from_counts(model, win, both, total))
}

/// [`win_pct`] for every model in the log, in name order.
pub fn win_pct_all(votes: &[Vote]) -> Vec<WinPct> {
    let models: BTreeSet<&str> =
        votes.iter().flat_map(|v| [v.model_a.as_str(), v.model_b.as_str()]).collect();
    models
        .into_iter()
        .map(|m| win_pct(votes, m).expect("model drawn from the log"))
        .collect()
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalyticsError> {
    if x.len() != y.len() {
        return Err(AnalyticsError::Usage(format!("length mismatch {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(AnalyticsError::Usage("need at least 2 observations".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalyticsError::UndefinedCorrelation("constant vector".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Symmetric labelled matrix; `None` marks an undefined cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    /// Labels whose vector was constant; their rows and columns are blank.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
}

impl CorrelationMatrix {
    pub fn from_vectors(labels: Vec<String>, vectors: &[Vec<f64>]) -> Result<Self, AnalyticsError> {
        assert_eq!(labels.len(), vectors.len());
        let n = labels.len();
        let constant: Vec<bool> = vectors
            .iter()
            .map(|v| v.iter().all(|&x| x == v[0]))
            .collect();
        let mut values = vec![vec![None; n]; n];
        for i in 0..n {
            if constant[i] {
                continue;
            }
            values[i][i] = Some(1.0);
            for j in (i + 1)..n {
                if constant[j] {
                    continue;
                }
                let r = pearson(&vectors[i], &vectors[j])?;
                values[i][j] = Some(r);
                values[j][i] = Some(r);
            }
        }
        let degenerate =
            labels.iter().zip(&constant).filter(|(_, &c)| c).map(|(l, _)| l.clone()).collect();
        Ok(Self { labels, values, degenerate })
    }

    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == row)?;
        let j = self.labels.iter().position(|l| l == col)?;
        self.values[i][j]
    }

    /// CSV with a header row of labels; blank cells for undefined values.
    pub fn to_csv(&self) -> String {
        let quote = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        let mut out = String::new();
        out.push_str(
            &std::iter::once(String::new())
                .chain(self.labels.iter().map(|l| quote(l)))
                .collect::<Vec<_>>()
                .join(","),
        );
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.values) {
            let cells = row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default());
            out.push_str(&std::iter::once(quote(label)).chain(cells).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

/// Per-group per-model win percentage over models every group covers.
fn grouped_win_pct(
    votes: &[Vote],
    group_of: impl Fn(&Vote) -> &str,
    what: &str,
) -> Result<CorrelationMatrix, AnalyticsError> {
    let mut groups: BTreeMap<&str, Vec<Vote>> = BTreeMap::new();
    for v in votes {
        groups.entry(group_of(v)).or_default().push(v.clone());
    }
    if groups.len() < 2 {
        return Err(AnalyticsError::InsufficientData(format!(
            "need at least 2 {what}s, found {}",
            groups.len()
        )));
    }
    let mut common: Option<BTreeSet<&str>> = None;
    for group in groups.values() {
        let models: BTreeSet<&str> =
            group.iter().flat_map(|v| [v.model_a.as_str(), v.model_b.as_str()]).collect();
        common = Some(match common {
            None => models,
            Some(c) => c.intersection(&models).copied().collect(),
        });
    }
    let models: Vec<&str> = common.unwrap_or_default().into_iter().collect();
    if models.len() < 2 {
        return Err(AnalyticsError::InsufficientData(format!(
            "fewer than 2 models are covered by every {what}"
        )));
    }
    let labels: Vec<String> = groups.keys().map(|g| g.to_string()).collect();
    let vectors: Vec<Vec<f64>> = groups
        .values()
        .map(|group| {
            models.iter().map(|m| win_pct(group, m).map(|w| w.value)).collect::<Result<_, _>>()
        })
        .collect::<Result<_, _>>()?;
    CorrelationMatrix::from_vectors(labels, &vectors)
}

/// Agreement between judges: per-judge win-percentage vectors correlated.
pub fn judge_correlation(votes: &[Vote]) -> Result<CorrelationMatrix, AnalyticsError> {
    grouped_win_pct(votes, |v| v.judge_id.as_str(), "judge")
}

/// Agreement between categories: per-category win-percentage vectors.
pub fn category_correlation(votes: &[Vote]) -> Result<CorrelationMatrix, AnalyticsError> {
    grouped_win_pct(votes, |v| v.category.as_str(), "category")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricColumn {
    pub name: String,
    pub values: Vec<f64>,
}

/// Models × named metric columns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub models: Vec<String>,
    pub columns: Vec<MetricColumn>,
}

impl MetricTable {
    pub fn push_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<(), AnalyticsError> {
        let name = name.into();
        if values.len() != self.models.len() {
            return Err(AnalyticsError::Usage(format!(
                "column `{name}` has {} values for {} models",
                values.len(),
                self.models.len()
            )));
        }
        if self.columns.iter().any(|c| c.name == name) {
            return Err(AnalyticsError::Usage(format!("duplicate column `{name}`")));
        }
        self.columns.push(MetricColumn { name, values });
        Ok(())
    }
}

/// Correlation between metric columns across models.
pub fn metric_correlation(table: &MetricTable) -> Result<CorrelationMatrix, AnalyticsError> {
    if table.models.len() < 2 {
        return Err(AnalyticsError::InsufficientData("need at least 2 models".into()));
    }
    if table.columns.len() < 2 {
        return Err(AnalyticsError::InsufficientData("need at least 2 metric columns".into()));
    }
    for c in &table.columns {
        if c.values.len() != table.models.len() {
            return Err(AnalyticsError::Usage(format!("column `{}` has wrong length", c.name)));
        }
        if c.values.iter().any(|v| !v.is_finite()) {
            return Err(AnalyticsError::Usage(format!("column `{}` has non-finite values", c.name)));
        }
    }
    let labels = table.columns.iter().map(|c| c.name.clone()).collect();
    let vectors: Vec<Vec<f64>> = table.columns.iter().map(|c| c.values.clone()).collect();
    CorrelationMatrix::from_vectors(labels, &vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vote(judge: &str, category: &str, a: &str, b: &str, outcome: Outcome) -> Vote {
        Vote {
            vote_id: format!("{judge}-{a}-{b}"),
            judge_id: judge.into(),
            question_id: "q".into(),
            category: category.into(),
            model_a: a.into(),
            model_b: b.into(),
            outcome,
            timestamp: "2024-05-01T00:00:00Z".parse().unwrap(),
        }
    }

    #[test]
    fn single_step_exact() {
        let cfg = EloConfig::default();
        let r = elo_sequence(&[vote("j", "c", "A", "B", Outcome::A)], &cfg).unwrap();
        assert_eq!(r["A"], 1016.0);
        assert_eq!(r["B"], 984.0);
    }

    #[test]
    fn draw_at_equal_ratings_is_noop() {
        let r = elo_sequence(&[vote("j", "c", "A", "B", Outcome::Both)], &EloConfig::default()).unwrap();
        assert_eq!(r["A"], 1000.0);
        assert_eq!(r["B"], 1000.0);
    }

    #[test]
    fn repeated_wins_separate_ratings() {
        let votes: Vec<_> = (0..10).map(|_| vote("j", "c", "A", "B", Outcome::A)).collect();
        let r = elo_sequence(&votes, &EloConfig::default()).unwrap();
        assert!(r["A"] > 1000.0 && 1000.0 > r["B"]);
    }

    #[test]
    fn upset_pays_more() {
        let cfg = EloConfig::default();
        let (underdog, _) = cfg.update(900.0, 1100.0, Outcome::A);
        let (favourite, _) = cfg.update(1100.0, 900.0, Outcome::A);
        assert!(underdog - 900.0 > favourite - 1100.0);
    }

    #[test]
    fn empty_log_and_bad_config() {
        assert!(matches!(elo_sequence(&[], &EloConfig::default()), Err(AnalyticsError::Usage(_))));
        let cfg = EloConfig { k_factor: 0.0, ..EloConfig::default() };
        assert!(elo_sequence(&[vote("j", "c", "A", "B", Outcome::A)], &cfg).is_err());
        let cfg = EloConfig { n_permutations: 0, ..EloConfig::default() };
        assert!(elo_permuted(&[vote("j", "c", "A", "B", Outcome::A)], &cfg).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let data = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&data, 0.0), 1.0);
        assert_eq!(percentile(&data, 1.0), 5.0);
        assert_eq!(percentile(&data, 0.5), 3.0);
        assert!((percentile(&data, 0.975) - 4.9).abs() < 1e-12);
        assert!((percentile(&data, 0.025) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn permuted_report_is_deterministic_and_ordered() {
        let mut votes = Vec::new();
        for i in 0..30 {
            votes.push(vote("j", "c", "X", "Y", Outcome::A));
            votes.push(vote("j", "c", "Y", "Z", if i % 3 == 0 { Outcome::B } else { Outcome::A }));
        }
        let cfg = EloConfig { n_permutations: 200, seed: 3, ..EloConfig::default() };
        let a = elo_permuted(&votes, &cfg).unwrap();
        let b = elo_permuted(&votes, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.ratings[0].model, "X");
        for r in &a.ratings {
            assert!(r.ci_plus >= 0.0 && r.ci_minus >= 0.0);
        }
    }

    #[test]
    fn table_cell_format() {
        let r = ModelRating { model: "m".into(), mean_rating: 1061.3, ci_plus: 60.6, ci_minus: 52.2 };
        assert_eq!(r.table_cell(), "1061 +61/-52");
    }

    #[test]
    fn win_pct_examples() {
        let votes = vec![
            vote("j", "c", "M", "N", Outcome::A),
            vote("j", "c", "N", "M", Outcome::B),
            vote("j", "c", "M", "O", Outcome::A),
            vote("j", "c", "M", "O", Outcome::Both),
            vote("j", "c", "O", "M", Outcome::A),
        ];
        let w = win_pct(&votes, "M").unwrap();
        assert_eq!((w.win, w.both, w.total), (3, 1, 5));
        assert_eq!(w.value, 0.8);
        let n = win_pct(&votes, "N").unwrap();
        assert_eq!(n.value, 0.0);
        assert!(win_pct(&votes, "Q").is_err());
    }

    #[test]
    fn both_counts_for_each_side() {
        let votes = vec![vote("j", "c", "M", "N", Outcome::Both)];
        assert_eq!(win_pct(&votes, "M").unwrap().value, 1.0);
        assert_eq!(win_pct(&votes, "N").unwrap().value, 1.0);
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(AnalyticsError::UndefinedCorrelation(_))
        ));
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn identical_judges_correlate_perfectly() {
        let mut votes = Vec::new();
        for judge in ["r1", "r2"] {
            votes.push(vote(judge, "c", "A", "B", Outcome::A));
            votes.push(vote(judge, "c", "B", "C", Outcome::A));
            votes.push(vote(judge, "c", "A", "C", Outcome::Both));
        }
        let m = judge_correlation(&votes).unwrap();
        assert_eq!(m.labels, ["r1", "r2"]);
        assert!((m.get("r1", "r2").unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(m.get("r1", "r1"), Some(1.0));
    }

    #[test]
    fn degenerate_judge_is_blank() {
        let votes = vec![
            vote("r1", "c", "A", "B", Outcome::A),
            vote("r1", "c", "B", "C", Outcome::A),
            vote("r2", "c", "A", "B", Outcome::Both),
            vote("r2", "c", "B", "C", Outcome::Both),
            vote("r2", "c", "A", "C", Outcome::Both),
            vote("r1", "c", "A", "C", Outcome::A),
        ];
        let m = judge_correlation(&votes).unwrap();
        assert_eq!(m.degenerate, ["r2"]);
        assert_eq!(m.get("r1", "r2"), None);
        assert_eq!(m.get("r2", "r2"), None);
        assert_eq!(m.get("r1", "r1"), Some(1.0));
        let csv = m.to_csv();
        assert_eq!(csv.lines().next().unwrap(), ",r1,r2");
        assert_eq!(csv.lines().nth(2).unwrap(), "r2,,");
    }

    #[test]
    fn single_group_is_insufficient() {
        let votes = vec![vote("r1", "c", "A", "B", Outcome::A)];
        assert!(matches!(judge_correlation(&votes), Err(AnalyticsError::InsufficientData(_))));
    }

    #[test]
    fn metric_duplicates_and_negation() {
        let mut t = MetricTable { models: vec!["a".into(), "b".into(), "c".into()], columns: vec![] };
        t.push_column("arc", vec![40.0, 45.0, 50.0]).unwrap();
        t.push_column("arc_copy", vec![40.0, 45.0, 50.0]).unwrap();
        t.push_column("neg", vec![-40.0, -45.0, -50.0]).unwrap();
        assert!(t.push_column("short", vec![1.0]).is_err());
        let m = metric_correlation(&t).unwrap();
        assert!((m.get("arc", "arc_copy").unwrap() - 1.0).abs() < 1e-12);
        assert!((m.get("arc", "neg").unwrap() + 1.0).abs() < 1e-12);
        for i in 0..3 {
            assert_eq!(m.values[i][i], Some(1.0));
        }
    }
}
