//! Few-shot multiple-choice evaluation and corpus selection.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::BufRead;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scorer::{Scorer, ScorerConfig, ScorerError};
use crate::seed::labelled_rng;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid item `{id}`: {reason}")]
    InvalidItem { id: String, reason: String },
    #[error("invalid dataset `{name}`: {reason}")]
    InvalidDataset { name: String, reason: String },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error("evaluation of `{}` aborted after {} scored item(s): {source}", .partial.dataset_name, .partial.n_scored)]
    Aborted { partial: PartialResult, source: ScorerError },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MCItem {
    pub id: String,
    pub question: String,
    pub choices: Vec<String>,
    pub answer_index: usize,
    #[serde(default)]
    pub category: Option<String>,
}

impl MCItem {
    pub fn validate(&self) -> Result<(), EvalError> {
        let invalid = |reason: String| EvalError::InvalidItem { id: self.id.clone(), reason };
        if self.id.is_empty() {
            return Err(invalid("empty id".into()));
        }
        if self.choices.len() < 2 {
            return Err(invalid(format!("needs at least 2 choices, has {}", self.choices.len())));
        }
        if self.answer_index >= self.choices.len() {
            return Err(invalid(format!(
                "answer_index {} out of range for {} choices",
                self.answer_index,
                self.choices.len()
            )));
        }
        let distinct: HashSet<&str> = self.choices.iter().map(String::as_str).collect();
        if distinct.len() != self.choices.len() {
            return Err(invalid("duplicate choices".into()));
        }
        Ok(())
    }

    pub fn gold(&self) -> &str {
        &self.choices[self.answer_index]
    }

    /// Candidate continuations: each choice with a leading space.
    pub fn continuations(&self) -> Vec<String> {
        self.choices.iter().map(|c| format!(" {c}")).collect()
    }
}

/// Reads one [`MCItem`] per non-blank line.
pub fn read_items_jsonl<R: BufRead>(reader: R) -> Result<Vec<MCItem>, EvalError> {
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: MCItem = serde_json::from_str(&line)
            .map_err(|e| EvalError::Parse { line: i + 1, message: e.to_string() })?;
        items.push(item);
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MCDataset {
    pub name: String,
    pub items: Vec<MCItem>,
    pub shots: usize,
}

impl MCDataset {
    pub fn new(name: impl Into<String>, items: Vec<MCItem>, shots: usize) -> Result<Self, EvalError> {
        let dataset = Self { name: name.into(), items, shots };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let invalid = |reason: String| EvalError::InvalidDataset { name: self.name.clone(), reason };
        if self.items.is_empty() {
            return Err(invalid("no items".into()));
        }
        if self.shots >= self.items.len() {
            return Err(invalid(format!(
                "{} shots leave no item to score among {}",
                self.shots,
                self.items.len()
            )));
        }
        let mut seen = HashSet::new();
        for item in &self.items {
            item.validate()?;
            if !seen.insert(item.id.as_str()) {
                return Err(invalid(format!("duplicate item id `{}`", item.id)));
            }
        }
        Ok(())
    }

    /// Indices of the exemplars shown before item `index`.
    ///
    /// `shots` items drawn without replacement from everything except the
    /// scored item, from a generator keyed on `(seed, item id)`.
    pub fn exemplar_indices(&self, index: usize, seed: u64) -> Vec<usize> {
        let item = &self.items[index];
        let mut rng = labelled_rng(seed, item.id.as_bytes());
        index::sample(&mut rng, self.items.len() - 1, self.shots)
            .into_iter()
            .map(|j| if j >= index { j + 1 } else { j })
            .collect()
    }
}

/// Per-dataset shot counts. Names match case-insensitively.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotPolicy {
    pub overrides: BTreeMap<String, usize>,
    pub default: usize,
}

impl Default for ShotPolicy {
    fn default() -> Self {
        let overrides = [("ARC".to_string(), 25), ("HellaSwag".to_string(), 5)].into();
        Self { overrides, default: 0 }
    }
}

impl ShotPolicy {
    pub fn shots_for(&self, dataset: &str) -> usize {
        self.overrides
            .iter()
            .find(|(name, _)| name.eq_ignore_ascii_case(dataset))
            .map(|(_, &k)| k)
            .unwrap_or(self.default)
    }

    /// Adds or replaces an override, replacing any case-variant of `name`.
    pub fn set(&mut self, name: &str, shots: usize) {
        self.overrides.retain(|k, _| !k.eq_ignore_ascii_case(name));
        self.overrides.insert(name.to_string(), shots);
    }
}

/// Labels used to render prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub question_label: String,
    pub answer_label: String,
    pub separator: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            question_label: "Soru:".into(),
            answer_label: "Cevap:".into(),
            separator: "\n\n".into(),
        }
    }
}

impl PromptTemplate {
    pub fn render(&self, item: &MCItem, exemplars: &[&MCItem]) -> Result<String, EvalError> {
        let mut prompt = String::new();
        for ex in exemplars {
            if ex.id == item.id {
                return Err(EvalError::Usage(format!(
                    "item `{}` appears among its own exemplars",
                    item.id
                )));
            }
            if ex.answer_index >= ex.choices.len() {
                return Err(EvalError::InvalidItem {
                    id: ex.id.clone(),
                    reason: "exemplar answer_index out of range".into(),
                });
            }
            prompt.push_str(&format!(
                "{} {}\n{} {}{}",
                self.question_label,
                ex.question,
                self.answer_label,
                ex.gold(),
                self.separator
            ));
        }
        prompt.push_str(&format!("{} {}\n{}", self.question_label, item.question, self.answer_label));
        Ok(prompt)
    }
}

/// Renders `item` after `exemplars` with the default template.
pub fn build_prompt(item: &MCItem, exemplars: &[&MCItem]) -> Result<String, EvalError> {
    PromptTemplate::default().render(item, exemplars)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetResult {
    pub dataset_name: String,
    pub n_items: usize,
    pub n_correct: usize,
    pub accuracy: f64,
}

impl DatasetResult {
    pub fn new(dataset_name: impl Into<String>, n_items: usize, n_correct: usize) -> Self {
        assert!(n_items > 0 && n_correct <= n_items, "invalid counts {n_correct}/{n_items}");
        Self {
            dataset_name: dataset_name.into(),
            n_items,
            n_correct,
            accuracy: n_correct as f64 / n_items as f64,
        }
    }

    pub fn accuracy_percent(&self) -> f64 {
        self.accuracy * 100.0
    }
}

/// Counts accumulated before a run was aborted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialResult {
    pub dataset_name: String,
    pub n_items: usize,
    pub n_scored: usize,
    pub n_correct: usize,
}

/// On-disk result document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub dataset_name: String,
    pub n_items: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    pub seed: u64,
    pub scorer_kind: String,
}

impl ResultsFile {
    pub fn new(result: &DatasetResult, seed: u64, scorer: &ScorerConfig) -> Self {
        Self {
            dataset_name: result.dataset_name.clone(),
            n_items: result.n_items,
            n_correct: result.n_correct,
            accuracy: result.accuracy,
            seed,
            scorer_kind: scorer.kind.to_string(),
        }
    }

    pub fn result(&self) -> DatasetResult {
        DatasetResult::new(self.dataset_name.clone(), self.n_items, self.n_correct)
    }
}

pub fn evaluate_dataset(
    dataset: &MCDataset,
    scorer: &ScorerConfig,
    seed: u64,
) -> Result<DatasetResult, EvalError> {
    let scorer = Scorer::new(scorer.clone())?;
    evaluate_with(dataset, &scorer, &PromptTemplate::default(), seed)
}

/// Scores every item; `scorer.config().concurrency` items run at once.
pub fn evaluate_with(
    dataset: &MCDataset,
    scorer: &Scorer,
    template: &PromptTemplate,
    seed: u64,
) -> Result<DatasetResult, EvalError> {
    dataset.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(scorer.config().concurrency)
        .build()
        .map_err(|e| EvalError::Usage(e.to_string()))?;

    let abort = AtomicBool::new(false);
    let outcomes: Vec<Option<Result<bool, EvalError>>> = pool.install(|| {
        (0..dataset.items.len())
            .into_par_iter()
            .map(|i| {
                if abort.load(Ordering::Relaxed) {
                    return None;
                }
                let outcome = score_item(dataset, i, scorer, template, seed);
                if outcome.is_err() {
                    abort.store(true, Ordering::Relaxed);
                }
                Some(outcome)
            })
            .collect()
    });

    let mut n_correct = 0;
    let mut n_scored = 0;
    let mut first_error = None;
    for outcome in outcomes.into_iter().flatten() {
        match outcome {
            Ok(correct) => {
                n_scored += 1;
                n_correct += usize::from(correct);
            }
            Err(e) if first_error.is_none() => first_error = Some(e),
            Err(_) => {}
        }
    }
    match first_error {
        None => Ok(DatasetResult::new(dataset.name.clone(), dataset.items.len(), n_correct)),
        Some(EvalError::Scorer(source)) => Err(EvalError::Aborted {
            partial: PartialResult {
                dataset_name: dataset.name.clone(),
                n_items: dataset.items.len(),
                n_scored,
                n_correct,
            },
            source,
        }),
        Some(other) => Err(other),
    }
}

fn score_item(
    dataset: &MCDataset,
    index: usize,
    scorer: &Scorer,
    template: &PromptTemplate,
    seed: u64,
) -> Result<bool, EvalError> {
    let item = &dataset.items[index];
    let exemplars: Vec<&MCItem> = dataset
        .exemplar_indices(index, seed)
        .into_iter()
        .map(|j| &dataset.items[j])
        .collect();
    let prompt = template.render(item, &exemplars)?;
    let scores = scorer.score(&prompt, &item.continuations(), Some(item.answer_index))?;
    Ok(scores.argmax() == Some(item.answer_index))
}

/// Unweighted mean of percentages.
pub fn average_percent(values: &[f64]) -> Result<f64, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Usage("cannot average an empty list".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Unweighted mean of dataset accuracies, in percent.
pub fn average_accuracy(results: &[DatasetResult]) -> Result<f64, EvalError> {
    let percents: Vec<f64> = results.iter().map(DatasetResult::accuracy_percent).collect();
    average_percent(&percents)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub base_average: f64,
    pub candidates: BTreeMap<String, f64>,
    pub selected: BTreeSet<String>,
}

/// Keeps every candidate whose average strictly beats the base.
pub fn select_corpora(base_avg: f64, candidates: &BTreeMap<String, f64>) -> SelectionReport {
    let selected = candidates
        .iter()
        .filter(|(_, &avg)| avg > base_avg)
        .map(|(name, _)| name.clone())
        .collect();
    SelectionReport { base_average: base_avg, candidates: candidates.clone(), selected }
}

/// Disagreement between the rule's selection and a caller-supplied set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionMismatch {
    pub selected: BTreeSet<String>,
    pub expected: BTreeSet<String>,
    /// Selected by the rule but not expected.
    pub unexpected: BTreeSet<String>,
    /// Expected but not selected by the rule.
    pub missing: BTreeSet<String>,
}

impl fmt::Display for SelectionMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(", ");
        write!(
            f,
            "warning: strict-improvement rule selected {{{}}} but the expected set is {{{}}}",
            join(&self.selected),
            join(&self.expected)
        )?;
        if !self.unexpected.is_empty() {
            write!(f, "; beyond expected: {{{}}}", join(&self.unexpected))?;
        }
        if !self.missing.is_empty() {
            write!(f, "; not selected: {{{}}}", join(&self.missing))?;
        }
        Ok(())
    }
}

impl SelectionReport {
    pub fn compare_expected(&self, expected: &BTreeSet<String>) -> Option<SelectionMismatch> {
        if &self.selected == expected {
            return None;
        }
        Some(SelectionMismatch {
            selected: self.selected.clone(),
            expected: expected.clone(),
            unexpected: self.selected.difference(expected).cloned().collect(),
            missing: expected.difference(&self.selected).cloned().collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: u32,
    pub batch_size: u32,
    pub gradient_accumulation: u32,
    pub learning_rate: f64,
    pub gradient_clip: f64,
    pub optimizer: String,
}

pub fn emit_training_config() -> TrainingConfig {
    TrainingConfig {
        epochs: 1,
        batch_size: 1,
        gradient_accumulation: 512,
        learning_rate: 1e-6,
        gradient_clip: 0.05,
        optimizer: "adamw-8bit".into(),
    }
}

const TRAINING_KEYS: [&str; 6] =
    ["epochs", "batch_size", "gradient_accumulation", "learning_rate", "gradient_clip", "optimizer"];

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::Usage(format!("invalid training config: {m}")));
        if self.epochs == 0 || self.batch_size == 0 || self.gradient_accumulation == 0 {
            return bad("counts must be >= 1");
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.learning_rate) || !positive(self.gradient_clip) {
            return bad("learning_rate and gradient_clip must be > 0");
        }
        Ok(())
    }

    /// Flat `key=value` lines in a fixed key order.
    pub fn to_kv_string(&self) -> String {
        format!(
            "epochs={}\nbatch_size={}\ngradient_accumulation={}\nlearning_rate={:e}\ngradient_clip={}\noptimizer={}\n",
            self.epochs,
            self.batch_size,
            self.gradient_accumulation,
            self.learning_rate,
            self.gradient_clip,
            self.optimizer
        )
    }

    pub fn from_kv_str(text: &str) -> Result<Self, EvalError> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| EvalError::Parse { line: i + 1, message };
            let (key, value) =
                line.split_once('=').ok_or_else(|| parse_err("expected key=value".into()))?;
            let key = key.trim();
            if !TRAINING_KEYS.contains(&key) {
                return Err(parse_err(format!("unknown key `{key}`")));
            }
            if values.insert(key, value.trim().to_string()).is_some() {
                return Err(parse_err(format!("duplicate key `{key}`")));
            }
        }
        fn field<T: std::str::FromStr>(
            values: &BTreeMap<&str, String>,
            key: &str,
        ) -> Result<T, EvalError>
        where
            T::Err: fmt::Display,
        {
            let raw = values
                .get(key)
                .ok_or_else(|| EvalError::Usage(format!("missing key `{key}`")))?;
            raw.parse()
                .map_err(|e| EvalError::Usage(format!("bad value for `{key}`: {e}")))
        }
        let config = TrainingConfig {
            epochs: field(&values, "epochs")?,
            batch_size: field(&values, "batch_size")?,
            gradient_accumulation: field(&values, "gradient_accumulation")?,
            learning_rate: field(&values, "learning_rate")?,
            gradient_clip: field(&values, "gradient_clip")?,
            optimizer: field(&values, "optimizer")?,
        };
        config.validate()?;
        Ok(config)
    }
}
