//! Evaluation: nDCG with custom per-class gains for ranking, Micro-F1 for
//! the classification tasks.
//!
//! DCG uses the `log2(i + 1)` discount over 1-based positions with no rank
//! cutoff. A group whose ideal DCG is zero (all Irrelevant) scores 1.
//! Micro-F1 on single-label predictions equals accuracy and is computed that
//! way.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write;

use crate::data::{EsciLabel, ExampleSet, Locale, PairKey, Task, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::rank::RankedList;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainTable([f64; NUM_CLASSES]);

impl Default for GainTable {
    fn default() -> Self {
        GainTable(EsciLabel::ALL.map(EsciLabel::gain))
    }
}

impl GainTable {
    pub fn new(gains: [f64; NUM_CLASSES]) -> Self {
        GainTable(gains)
    }

    pub fn gain(&self, label: EsciLabel) -> f64 {
        self.0[label.index()]
    }
}

pub fn dcg(labels: &[EsciLabel], gains: &GainTable) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| gains.gain(*l) / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG of labels already in ranked order.
pub fn ndcg_labels(labels: &[EsciLabel], gains: &GainTable) -> f64 {
    let mut ideal = labels.to_vec();
    ideal.sort_by(|a, b| gains.gain(*b).total_cmp(&gains.gain(*a)));
    let best = dcg(&ideal, gains);
    if best == 0.0 {
        return 1.0;
    }
    dcg(labels, gains) / best
}

pub fn ndcg(ranked: &RankedList, truth: &GroundTruth, gains: &GainTable) -> Result<f64> {
    let labels = ranked
        .product_ids
        .iter()
        .map(|p| truth.label(&PairKey::new(&ranked.query_id, p)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ndcg_labels(&labels, gains))
}

/// Fraction of positions where `predictions` equals `truth`.
pub fn micro_f1<T: PartialEq>(predictions: &[T], truth: &[T]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} truth labels",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Validation("Micro-F1 of an empty set".into()));
    }
    let correct = predictions
        .iter()
        .zip(truth)
        .filter(|(p, t)| p == t)
        .count();
    Ok(correct as f64 / truth.len() as f64)
}

/// Reference labels and query locales for scoring.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    labels: HashMap<PairKey, EsciLabel>,
    locales: HashMap<String, Locale>,
}

impl GroundTruth {
    /// Fails if any example is unlabeled.
    pub fn from_examples(examples: &ExampleSet) -> Result<Self> {
        let mut t = GroundTruth::default();
        for ex in examples.examples() {
            let label = ex
                .label
                .ok_or_else(|| Error::Validation(format!("no truth label for {}", ex.key())))?;
            t.labels.insert(ex.key(), label);
            t.locales.insert(ex.query_id.clone(), ex.locale);
        }
        Ok(t)
    }

    pub fn label(&self, key: &PairKey) -> Result<EsciLabel> {
        self.labels
            .get(key)
            .copied()
            .ok_or_else(|| Error::MissingKey(format!("no truth label for {key}")))
    }

    pub fn locale(&self, query_id: &str) -> Result<Locale> {
        self.locales
            .get(query_id)
            .copied()
            .ok_or_else(|| Error::MissingKey(format!("no locale for query `{query_id}`")))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Predictions for one task.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskOutputs {
    Ranking(Vec<RankedList>),
    Labels(Vec<(PairKey, EsciLabel)>),
    Substitute(Vec<(PairKey, bool)>),
}

impl TaskOutputs {
    pub fn task(&self) -> Task {
        match self {
            TaskOutputs::Ranking(_) => Task::T1,
            TaskOutputs::Labels(_) => Task::T2,
            TaskOutputs::Substitute(_) => Task::T3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub task: Task,
    /// Free-form evaluation split name, such as `cv` or `test`.
    pub split: String,
    pub overall: f64,
    pub per_locale: BTreeMap<Locale, f64>,
    /// Queries for T1, pairs otherwise.
    pub count: usize,
}

impl Report {
    pub fn metric_name(&self) -> &'static str {
        match self.task {
            Task::T1 => "ndcg",
            Task::T2 | Task::T3 => "micro_f1",
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} {} {} = {:.6} (n = {})\n",
            self.task,
            self.split,
            self.metric_name(),
            self.overall,
            self.count
        );
        for (loc, v) in &self.per_locale {
            let _ = writeln!(s, "  {loc}: {v:.6}");
        }
        s
    }

    /// Lines of `metric<TAB>locale<TAB>value`, overall first.
    pub fn to_kv_lines(&self) -> String {
        let metric = format!("{}.{}.{}", self.task, self.split, self.metric_name());
        let mut s = format!("{metric}\tall\t{:.6}\n", self.overall);
        for (loc, v) in &self.per_locale {
            let _ = writeln!(s, "{metric}\t{loc}\t{v:.6}");
        }
        s
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Scores `outputs` against `truth` overall and per locale.
pub fn evaluate_run(outputs: &TaskOutputs, truth: &GroundTruth, task: Task) -> Result<Report> {
    if outputs.task() != task {
        return Err(Error::Validation(format!(
            "{} outputs cannot be scored as {task}",
            outputs.task()
        )));
    }
    let gains = GainTable::default();
    let mut by_locale: BTreeMap<Locale, Vec<f64>> = BTreeMap::new();
    let mut all = Vec::new();
    let mut add = |loc: Locale, v: f64| {
        by_locale.entry(loc).or_default().push(v);
        all.push(v);
    };
    match outputs {
        TaskOutputs::Ranking(lists) => {
            for l in lists {
                add(truth.locale(&l.query_id)?, ndcg(l, truth, &gains)?);
            }
        }
        TaskOutputs::Labels(preds) => {
            for (k, p) in preds {
                add(
                    truth.locale(&k.query_id)?,
                    (truth.label(k)? == *p) as u8 as f64,
                );
            }
        }
        TaskOutputs::Substitute(preds) => {
            for (k, p) in preds {
                let actual = truth.label(k)? == EsciLabel::Substitute;
                add(truth.locale(&k.query_id)?, (actual == *p) as u8 as f64);
            }
        }
    }
    if all.is_empty() {
        return Err(Error::Validation(format!("no {task} outputs to evaluate")));
    }
    Ok(Report {
        task,
        split: String::new(),
        overall: mean(&all),
        per_locale: by_locale.iter().map(|(l, v)| (*l, mean(v))).collect(),
        count: all.len(),
    })
}
