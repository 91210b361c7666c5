//! End-to-end second stage: features, two-fold stacking per upstream model,
//! ensembling, task outputs and evaluation.
//!
//! For every task and every upstream model `m` one booster is trained per
//! fold on the other folds' rows, using only model `m`'s probability
//! columns. Training rows get the average over models of their out-of-fold
//! predictions; test rows get the average over all `models x folds`
//! boosters. T1 boosters train on task-1 rows only, T2 and T3 boosters on
//! every labeled row.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::config::KvConfig;
use crate::data::{
    load_examples, load_probs, split_folds, Catalog, DatasetPaths, EsciLabel, ExampleSet,
    FoldAssignment, PairKey, ProbStore, ProbVector, SynthDataset, Task, TaskFile,
};
use crate::error::{Error, Result, StageContext};
use crate::features::{
    assemble_features, feature_names, t1_product_set, FeatureConfig, FeatureFamily, FeatureMatrix,
    FeatureSet,
};
use crate::gbdt::{self, GbdtModel, GbdtParams, Objective};
use crate::metrics::{evaluate_run, GroundTruth, Report, TaskOutputs};
use crate::par::{self, Exec};
use crate::rank::{
    self, classify_t2, classify_t3, ensemble_average, expected_gain, rank_products, RankedList,
};

/// Where task-3 substitute probabilities come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum T3Source {
    /// A dedicated binary booster.
    #[default]
    Binary,
    /// `p_s` of the four-class T2 ensemble.
    MulticlassPs,
}

impl FromStr for T3Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(T3Source::Binary),
            "multiclass_ps" => Ok(T3Source::MulticlassPs),
            other => Err(format!(
                "unknown t3_source `{other}` (expected binary or multiclass_ps)"
            )),
        }
    }
}

impl T3Source {
    pub fn as_str(self) -> &'static str {
        match self {
            T3Source::Binary => "binary",
            T3Source::MulticlassPs => "multiclass_ps",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub folds: usize,
    pub gbdt: GbdtParams,
    /// Seeds the fold split.
    pub seed: u64,
    pub features: FeatureSet,
    pub tasks: Vec<Task>,
    pub t3_source: T3Source,
    pub t3_threshold: f64,
    pub exec: Exec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            folds: 2,
            gbdt: GbdtParams::default(),
            seed: 0,
            features: FeatureSet::all(),
            tasks: Task::ALL.to_vec(),
            t3_source: T3Source::default(),
            t3_threshold: rank::DEFAULT_T3_THRESHOLD,
            exec: Exec::default(),
        }
    }
}

impl PipelineConfig {
    pub const KEYS: &'static [&'static str] = &[
        "folds",
        "seed",
        "num_rounds",
        "max_depth",
        "min_samples_leaf",
        "learning_rate",
        "l2_leaf_regularization",
        "disable_features",
        "tasks",
        "t3_source",
        "t3_threshold",
    ];

    /// Reads the keys in [`Self::KEYS`]; absent keys keep their defaults.
    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        let mut c = PipelineConfig::default();
        if let Some(v) = cfg.get("folds")? {
            c.folds = v;
        }
        if let Some(v) = cfg.get("seed")? {
            c.seed = v;
            c.gbdt.seed = v;
        }
        if let Some(v) = cfg.get("num_rounds")? {
            c.gbdt.num_rounds = v;
        }
        if let Some(v) = cfg.get("max_depth")? {
            c.gbdt.max_depth = v;
        }
        if let Some(v) = cfg.get("min_samples_leaf")? {
            c.gbdt.min_samples_leaf = v;
        }
        if let Some(v) = cfg.get("learning_rate")? {
            c.gbdt.learning_rate = v;
        }
        if let Some(v) = cfg.get("l2_leaf_regularization")? {
            c.gbdt.l2_leaf_regularization = v;
        }
        if let Some(off) = cfg.get_list::<FeatureFamily>("disable_features")? {
            for f in off {
                c.features = c.features.without(f);
            }
        }
        if let Some(t) = cfg.get_list::<Task>("tasks")? {
            c.tasks = t;
        }
        if let Some(v) = cfg.get("t3_source")? {
            c.t3_source = v;
        }
        if let Some(v) = cfg.get("t3_threshold")? {
            c.t3_threshold = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if !(self.t3_threshold > 0.0 && self.t3_threshold < 1.0) {
            return Err(Error::Config("t3_threshold must lie in (0, 1)".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("no tasks selected".into()));
        }
        self.gbdt.validate()
    }

    fn runs(&self, task: Task) -> bool {
        self.tasks.contains(&task)
    }
}

/// Inputs of one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineData {
    pub catalog: Catalog,
    /// Labeled training pairs with merged task membership.
    pub train: ExampleSet,
    /// Unlabeled test pairs.
    pub test: Option<ExampleSet>,
    /// Test labels, read only by evaluation.
    pub truth: Option<ExampleSet>,
    pub probs: ProbStore,
}

impl PipelineData {
    pub fn from_synth(data: &SynthDataset) -> Result<Self> {
        Ok(Self {
            catalog: data.catalog.clone(),
            train: data.train_examples()?,
            test: Some(data.test_examples()?),
            truth: Some(data.test_truth()?),
            probs: data.probs.clone(),
        })
    }

    pub fn load(paths: &DatasetPaths) -> Result<Self> {
        let catalog = crate::data::load_catalog(&paths.catalog).stage("load")?;
        let t1 = load_examples(&paths.t1_train, TaskFile::T1, Some(&catalog)).stage("load")?;
        let t2t3 =
            load_examples(&paths.t2t3_train, TaskFile::T2T3, Some(&catalog)).stage("load")?;
        let train = t1.merge(&t2t3).stage("load")?;
        let mut test: Option<ExampleSet> = None;
        for (path, file) in [
            (&paths.t1_test, TaskFile::T1),
            (&paths.t2t3_test, TaskFile::T2T3),
        ] {
            if let Some(p) = path {
                let part = load_examples(p, file, Some(&catalog))
                    .stage("load")?
                    .without_labels();
                test = Some(match test {
                    Some(t) => t.merge(&part).stage("load")?,
                    None => part,
                });
            }
        }
        let truth = match &paths.truth {
            Some(p) => Some(load_examples(p, TaskFile::T2T3, Some(&catalog)).stage("load")?),
            None => None,
        };
        let probs = load_probs(&paths.probs).stage("load")?;
        Ok(Self {
            catalog,
            train,
            test,
            truth,
            probs,
        })
    }
}

/// One trained booster.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub task: Task,
    pub upstream_model: usize,
    pub fold: usize,
    pub model: GbdtModel,
}

impl TrainedModel {
    pub fn file_name(&self) -> String {
        format!(
            "{}_m{}_f{}.model",
            self.task, self.upstream_model, self.fold
        )
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub folds: FoldAssignment,
    /// `cv` reports (out-of-fold on training rows) then `test` reports.
    pub reports: Vec<Report>,
    /// Out-of-fold outputs on training rows.
    pub cv_outputs: Vec<TaskOutputs>,
    pub test_outputs: Vec<TaskOutputs>,
    pub models: Vec<TrainedModel>,
}

impl PipelineOutput {
    pub fn report(&self, task: Task, split: &str) -> Option<&Report> {
        self.reports
            .iter()
            .find(|r| r.task == task && r.split == split)
    }

    /// Test report when present, otherwise cross-validation.
    pub fn headline(&self, task: Task) -> Option<&Report> {
        self.report(task, "test")
            .or_else(|| self.report(task, "cv"))
    }

    pub fn reports_text(&self) -> String {
        self.reports.iter().map(Report::to_text).collect()
    }

    pub fn reports_kv(&self) -> String {
        self.reports.iter().map(Report::to_kv_lines).collect()
    }

    /// Writes reports, models, folds and test predictions into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let models_dir = dir.join("models");
        std::fs::create_dir_all(&models_dir).map_err(|e| Error::io(&models_dir, e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("report.txt", self.reports_text())?;
        write("report.kv", self.reports_kv())?;
        crate::data::write_folds(dir.join("folds.csv"), &self.folds)?;
        for m in &self.models {
            gbdt::save_model(&m.model, models_dir.join(m.file_name()))?;
        }
        for out in &self.test_outputs {
            write_task_outputs(dir, out)?;
        }
        Ok(())
    }
}

/// Standard file name of a task's predictions.
pub fn output_file_name(task: Task) -> &'static str {
    match task {
        Task::T1 => "t1_ranking.csv",
        Task::T2 => "t2_labels.csv",
        Task::T3 => "t3_substitute.csv",
    }
}

pub fn write_task_outputs(dir: &Path, outputs: &TaskOutputs) -> Result<()> {
    let path = dir.join(output_file_name(outputs.task()));
    match outputs {
        TaskOutputs::Ranking(l) => rank::write_rankings(path, l),
        TaskOutputs::Labels(l) => rank::write_labels(path, l),
        TaskOutputs::Substitute(f) => rank::write_substitutes(path, f),
    }
}

pub fn read_task_outputs(path: &Path, task: Task) -> Result<TaskOutputs> {
    Ok(match task {
        Task::T1 => TaskOutputs::Ranking(rank::read_rankings(path)?),
        Task::T2 => TaskOutputs::Labels(rank::read_labels(path)?),
        Task::T3 => TaskOutputs::Substitute(rank::read_substitutes(path)?),
    })
}

/// Per-row predictions of an ensemble.
enum Preds {
    Multi(Vec<ProbVector>),
    Binary(Vec<f64>),
}

struct Fitted {
    oof: Preds,
    test: Preds,
    models: Vec<TrainedModel>,
}

struct Prepared<'a> {
    data: &'a PipelineData,
    config: &'a PipelineConfig,
    /// Training rows then test rows.
    matrix: FeatureMatrix,
    n_train: usize,
    folds: FoldAssignment,
    row_fold: Vec<usize>,
    test_keys: HashSet<PairKey>,
}

/// Runs every configured task.
pub fn run_pipeline(data: &PipelineData, config: &PipelineConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let prepared = prepare(data, config)?;
    let truth_cv = GroundTruth::from_examples(&data.train).stage("evaluate")?;
    let truth_test = match &data.truth {
        Some(t) => Some(GroundTruth::from_examples(t).stage("evaluate")?),
        None => None,
    };

    let mut reports = Vec::new();
    let mut cv_outputs = Vec::new();
    let mut test_outputs = Vec::new();
    let mut models = Vec::new();
    let mut t2_fit: Option<Fitted> = None;

    for task in Task::ALL {
        if !config.runs(task) {
            continue;
        }
        let (train_rows, test_rows) = task_rows(data, task, prepared.n_train);

        let reuse_t2 = task == Task::T3 && config.t3_source == T3Source::MulticlassPs;
        let fitted = if reuse_t2 {
            match t2_fit.take() {
                Some(f) => f,
                None => fit_task(&prepared, Task::T2, &train_rows, &test_rows).stage("train")?,
            }
        } else {
            fit_task(&prepared, task, &train_rows, &test_rows).stage("train")?
        };

        let cv = task_outputs(task, config, &prepared, &train_rows, &fitted.oof)?;
        let mut r = evaluate_run(&cv, &truth_cv, task).stage("evaluate")?;
        r.split = "cv".into();
        reports.push(r);
        cv_outputs.push(cv);
        if !test_rows.is_empty() {
            let out = task_outputs(task, config, &prepared, &test_rows, &fitted.test)?;
            if let Some(t) = &truth_test {
                let mut r = evaluate_run(&out, t, task).stage("evaluate")?;
                r.split = "test".into();
                reports.push(r);
            }
            test_outputs.push(out);
        }
        if !reuse_t2 {
            models.extend(fitted.models.iter().cloned());
        }
        if task == Task::T2 {
            t2_fit = Some(fitted);
        }
    }
    reports.sort_by_key(|r| (r.split != "cv", r.task));
    Ok(PipelineOutput {
        folds: prepared.folds,
        reports,
        cv_outputs,
        test_outputs,
        models,
    })
}

fn task_rows(data: &PipelineData, task: Task, n_train: usize) -> (Vec<usize>, Vec<usize>) {
    let train_rows = match task {
        Task::T1 => (0..n_train)
            .filter(|&i| data.train.examples()[i].tasks.contains(TaskFile::T1))
            .collect(),
        Task::T2 | Task::T3 => (0..n_train).collect(),
    };
    let test_rows = match (&data.test, task) {
        (None, _) => Vec::new(),
        (Some(t), Task::T1) => (0..t.len())
            .filter(|&i| t.examples()[i].tasks.contains(TaskFile::T1))
            .map(|i| n_train + i)
            .collect(),
        (Some(t), _) => (n_train..n_train + t.len()).collect(),
    };
    (train_rows, test_rows)
}

/// Trains the `models x folds` boosters of one task without predicting.
/// With `T3Source::MulticlassPs` a T3 request trains T2 boosters.
pub fn train_task(
    data: &PipelineData,
    config: &PipelineConfig,
    task: Task,
) -> Result<(FoldAssignment, Vec<TrainedModel>)> {
    config.validate()?;
    let prepared = prepare(data, config)?;
    let (train_rows, _) = task_rows(data, task, prepared.n_train);
    let fit_as = if task == Task::T3 && config.t3_source == T3Source::MulticlassPs {
        Task::T2
    } else {
        task
    };
    let fitted = fit_task(&prepared, fit_as, &train_rows, &[]).stage("train")?;
    Ok((prepared.folds, fitted.models))
}

/// Test-set outputs of `task` from previously trained boosters, averaged.
/// Each booster reads the columns named in its own schema.
pub fn predict_task(
    data: &PipelineData,
    config: &PipelineConfig,
    task: Task,
    models: &[GbdtModel],
) -> Result<TaskOutputs> {
    if models.is_empty() {
        return Err(Error::Validation(format!(
            "no {task} models to predict with"
        )))
        .stage("predict");
    }
    if data.test.is_none() {
        return Err(Error::Validation("no test pairs to predict".into())).stage("predict");
    }
    let prepared = prepare(data, config)?;
    let (_, test_rows) = task_rows(data, task, prepared.n_train);
    let obj = models[0].objective;
    if models.iter().any(|m| m.objective != obj) {
        return Err(Error::Validation("models mix objectives".into())).stage("predict");
    }
    let test = prepared.matrix.select_rows(&test_rows);
    let per_model =
        par::try_map(config.exec, models, |m| m.predict_margins(&test)).stage("predict")?;
    let mut per_row: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(models.len()); test_rows.len()];
    for margins in per_model {
        for (row, mg) in per_row.iter_mut().zip(margins) {
            row.push(mg);
        }
    }
    let preds = average(obj, &per_row)?;
    task_outputs(task, config, &prepared, &test_rows, &preds)
}

fn prepare<'a>(data: &'a PipelineData, config: &'a PipelineConfig) -> Result<Prepared<'a>> {
    if data.train.examples().iter().any(|e| e.label.is_none()) {
        return Err(Error::Validation(
            "training pairs must all be labeled".into(),
        ))
        .stage("load");
    }
    if let Some(t) = &data.test {
        if t.examples().iter().any(|e| e.label.is_some()) {
            return Err(Error::Leakage("test pairs carry labels".into())).stage("load");
        }
    }
    let all = match &data.test {
        Some(t) => {
            let mut all = data.train.clone();
            for e in t.examples() {
                all.push(e.clone()).map_err(|_| {
                    Error::Leakage(format!(
                        "pair {} is in both the training and test sets",
                        e.key()
                    ))
                })?;
            }
            all
        }
        None => data.train.clone(),
    };
    let t1_products = t1_product_set(&all);
    let feature_config = FeatureConfig {
        families: config.features,
        models: (0..data.probs.num_models()).collect(),
        exec: config.exec,
    };
    let matrix = assemble_features(
        &all,
        &data.catalog,
        &data.probs,
        &t1_products,
        &feature_config,
    )
    .stage("features")?;
    let folds = split_folds(&data.train, config.folds, config.seed).stage("folds")?;
    let row_fold = data
        .train
        .examples()
        .iter()
        .map(|e| {
            folds
                .fold_of(&e.query_id)
                .expect("every training query is assigned a fold")
        })
        .collect();
    let test_keys = data
        .test
        .iter()
        .flat_map(|t| t.examples().iter().map(|e| e.key()))
        .collect();
    Ok(Prepared {
        data,
        config,
        matrix,
        n_train: data.train.len(),
        folds,
        row_fold,
        test_keys,
    })
}

fn objective(task: Task) -> Objective {
    match task {
        Task::T1 | Task::T2 => Objective::Multiclass,
        Task::T3 => Objective::Binary,
    }
}

fn targets(p: &Prepared, task: Task, rows: &[usize]) -> Vec<usize> {
    rows.iter()
        .map(|&i| {
            let label = p.data.train.examples()[i]
                .label
                .expect("training rows are labeled");
            match task {
                Task::T1 | Task::T2 => label.index(),
                Task::T3 => (label == EsciLabel::Substitute) as usize,
            }
        })
        .collect()
}

/// One booster with its held-out and test predictions.
type FoldFit = (TrainedModel, Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Trains `models x folds` boosters and averages their predictions.
fn fit_task(p: &Prepared, task: Task, train_rows: &[usize], test_rows: &[usize]) -> Result<Fitted> {
    let n_models = p.data.probs.num_models();
    let k = p.folds.k();
    let obj = objective(task);
    let jobs: Vec<(usize, usize)> = (0..n_models)
        .flat_map(|m| (0..k).map(move |f| (m, f)))
        .collect();

    let results = par::try_map(p.config.exec, &jobs, |&(m, f)| -> Result<FoldFit> {
        let cols = feature_names(&FeatureConfig {
            families: p.config.features,
            models: vec![m],
            exec: p.config.exec,
        });
        let fit_rows: Vec<usize> = train_rows
            .iter()
            .copied()
            .filter(|&i| p.row_fold[i] != f)
            .collect();
        let held_rows: Vec<usize> = train_rows
            .iter()
            .copied()
            .filter(|&i| p.row_fold[i] == f)
            .collect();
        let fit = p.matrix.select_rows(&fit_rows).select_columns(&cols)?;
        if let Some(k) = fit.keys().iter().find(|k| p.test_keys.contains(k)) {
            return Err(Error::Leakage(format!(
                "test pair {k} reached a training matrix"
            )));
        }
        let mut params = p.config.gbdt.clone();
        params.exec = p.config.exec;
        let model = gbdt::train(&fit, &targets(p, task, &fit_rows), obj, &params)
            .map_err(|e| Error::Validation(format!("{task} model {m} fold {f}: {e}")))?;
        let margins = |rows: &[usize]| -> Result<Vec<Vec<f64>>> {
            if rows.is_empty() {
                return Ok(Vec::new());
            }
            model.predict_margins(&p.matrix.select_rows(rows).select_columns(&cols)?)
        };
        let held = margins(&held_rows)?;
        let test = margins(test_rows)?;
        Ok((
            TrainedModel {
                task,
                upstream_model: m,
                fold: f,
                model,
            },
            held,
            test,
        ))
    })?;

    // Collect per-row prediction lists, then average.
    let pos: BTreeMap<usize, usize> = train_rows
        .iter()
        .enumerate()
        .map(|(j, &i)| (i, j))
        .collect();
    let mut oof: Vec<Vec<Vec<f64>>> = vec![Vec::new(); train_rows.len()];
    let mut test: Vec<Vec<Vec<f64>>> = vec![Vec::new(); test_rows.len()];
    let mut models = Vec::with_capacity(jobs.len());
    for ((_, f), (model, held, t)) in jobs.iter().zip(results) {
        let held_rows = train_rows.iter().filter(|&&i| p.row_fold[i] == *f);
        for (i, mg) in held_rows.zip(held) {
            oof[pos[i]].push(mg);
        }
        for (j, mg) in t.into_iter().enumerate() {
            test[j].push(mg);
        }
        models.push(model);
    }
    Ok(Fitted {
        oof: average(obj, &oof)?,
        test: average(obj, &test)?,
        models,
    })
}

fn average(obj: Objective, per_row: &[Vec<Vec<f64>>]) -> Result<Preds> {
    Ok(match obj {
        Objective::Multiclass => Preds::Multi(
            per_row
                .iter()
                .map(|ms| {
                    let vs = ms
                        .iter()
                        .map(|m| {
                            let p = gbdt::softmax(m);
                            ProbVector::new([p[0], p[1], p[2], p[3]])
                        })
                        .collect::<Result<Vec<_>>>()?;
                    ensemble_average(&vs)
                })
                .collect::<Result<_>>()?,
        ),
        Objective::Binary => Preds::Binary(
            per_row
                .iter()
                .map(|ms| rank::mean(&ms.iter().map(|m| gbdt::sigmoid(m[0])).collect::<Vec<_>>()))
                .collect::<Result<_>>()?,
        ),
    })
}

fn key_of(p: &Prepared, row: usize) -> PairKey {
    p.matrix.keys()[row].clone()
}

fn task_outputs(
    task: Task,
    config: &PipelineConfig,
    p: &Prepared,
    rows: &[usize],
    preds: &Preds,
) -> Result<TaskOutputs> {
    Ok(match (task, preds) {
        (Task::T1, Preds::Multi(v)) => {
            let mut groups: BTreeMap<String, (Vec<String>, Vec<f64>)> = BTreeMap::new();
            for (&row, pv) in rows.iter().zip(v) {
                let k = key_of(p, row);
                let g = groups.entry(k.query_id).or_default();
                g.0.push(k.product_id);
                g.1.push(expected_gain(pv));
            }
            let lists = groups
                .iter()
                .map(|(q, (ids, s))| rank_products(q, ids, s))
                .collect::<Result<Vec<RankedList>>>()
                .stage("rank")?;
            TaskOutputs::Ranking(lists)
        }
        (Task::T2, Preds::Multi(v)) => TaskOutputs::Labels(
            rows.iter()
                .zip(v)
                .map(|(&r, pv)| (key_of(p, r), classify_t2(pv)))
                .collect(),
        ),
        (Task::T3, Preds::Multi(v)) => TaskOutputs::Substitute(
            rows.iter()
                .zip(v)
                .map(|(&r, pv)| (key_of(p, r), classify_t3(pv.p_s(), config.t3_threshold)))
                .collect(),
        ),
        (Task::T3, Preds::Binary(v)) => TaskOutputs::Substitute(
            rows.iter()
                .zip(v)
                .map(|(&r, &ps)| (key_of(p, r), classify_t3(ps, config.t3_threshold)))
                .collect(),
        ),
        (task, Preds::Binary(_)) => {
            return Err(Error::Validation(format!(
                "{task} needs class probabilities"
            )));
        }
    })
}

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub family: FeatureFamily,
    pub task: Task,
    /// `test` or `cv`.
    pub split: String,
    pub on: f64,
    pub off: f64,
}

impl AblationRow {
    /// Improvement from enabling the family.
    pub fn delta(&self) -> f64 {
        self.on - self.off
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let mut s = String::from("family\ttask\tsplit\ton\toff\tdelta\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{:+.6}",
                r.family,
                r.task,
                r.split,
                r.on,
                r.off,
                r.delta()
            );
        }
        s
    }

    pub fn get(&self, family: FeatureFamily, task: Task) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.family == family && r.task == task)
    }
}

/// Headline metric of every task with `family` enabled versus disabled.
/// Families already disabled in `config` are enabled for the "on" run.
pub fn ablate(
    data: &PipelineData,
    config: &PipelineConfig,
    families: &[FeatureFamily],
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for &family in families {
        let mut on_cfg = config.clone();
        on_cfg.features = config.features.with(family);
        let mut off_cfg = config.clone();
        off_cfg.features = config.features.without(family);
        let on = run_pipeline(data, &on_cfg)?;
        let off = run_pipeline(data, &off_cfg)?;
        for &task in &config.tasks {
            let (a, b) = match (on.headline(task), off.headline(task)) {
                (Some(a), Some(b)) => (a, b),
                _ => continue,
            };
            rows.push(AblationRow {
                family,
                task,
                split: a.split.clone(),
                on: a.overall,
                off: b.overall,
            });
        }
    }
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};

    fn small(noise: f64) -> PipelineData {
        let cfg = SynthConfig {
            queries: 60,
            noise,
            ..SynthConfig::default()
        };
        PipelineData::from_synth(&synth_generate(&cfg, 3).unwrap()).unwrap()
    }

    fn quick() -> PipelineConfig {
        PipelineConfig {
            gbdt: GbdtParams {
                num_rounds: 10,
                max_depth: 3,
                min_samples_leaf: 5,
                ..GbdtParams::default()
            },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn produces_all_reports_and_models() {
        let out = run_pipeline(&small(0.7), &quick()).unwrap();
        for task in Task::ALL {
            assert!(out.report(task, "cv").is_some());
            assert!(out.report(task, "test").is_some());
        }
        assert_eq!(out.models.len(), 3 * 3 * 2);
        assert_eq!(out.test_outputs.len(), 3);
    }

    #[test]
    fn multiclass_ps_route_reuses_t2_boosters() {
        let cfg = PipelineConfig {
            t3_source: T3Source::MulticlassPs,
            ..quick()
        };
        let out = run_pipeline(&small(0.7), &cfg).unwrap();
        assert_eq!(out.models.len(), 2 * 3 * 2);
        assert!(out.report(Task::T3, "test").is_some());
    }

    #[test]
    fn labeled_test_rows_trip_the_guard() {
        let mut d = small(0.5);
        d.test = d.truth.clone();
        let err = run_pipeline(&d, &quick()).unwrap_err();
        assert!(err.to_string().contains("leakage"), "{err}");
    }

    #[test]
    fn overlapping_pairs_trip_the_guard() {
        let mut d = small(0.5);
        d.test = Some(d.train.without_labels());
        assert!(matches!(prepare(&d, &quick()), Err(Error::Leakage(_))));
    }

    #[test]
    fn config_from_kv() {
        let kv = KvConfig::parse("folds = 3\ndisable_features = group_stats, leakage\ntasks = T2\nt3_source = multiclass_ps\n").unwrap();
        let c = PipelineConfig::from_kv(&kv).unwrap();
        assert_eq!(c.folds, 3);
        assert!(!c.features.contains(FeatureFamily::GroupStats));
        assert!(!c.features.contains(FeatureFamily::Leakage));
        assert!(c.features.contains(FeatureFamily::Brand));
        assert_eq!(c.tasks, vec![Task::T2]);
        assert!(
            PipelineConfig::from_kv(&KvConfig::parse("disable_features = colour").unwrap())
                .is_err()
        );
        assert!(PipelineConfig::from_kv(&KvConfig::parse("folds = 1").unwrap()).is_err());
    }
}
