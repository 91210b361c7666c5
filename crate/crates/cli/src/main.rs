use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use esci_core::config::KvConfig;
use esci_core::data::{load_examples, synth_generate, DatasetPaths, SynthConfig, Task, TaskFile};
use esci_core::features::{assemble_features, t1_product_set, FeatureConfig, FeatureFamily};
use esci_core::gbdt::{load_model, save_model};
use esci_core::metrics::{evaluate_run, GroundTruth};
use esci_core::pipeline::{
    ablate, predict_task, read_task_outputs, run_pipeline, train_task, write_task_outputs,
    PipelineConfig, PipelineData, T3Source,
};
use esci_core::sched::{
    example_sequences, presort_batches, run_inference, simulate, unsorted_batches, BatchItem,
    SurrogateScorer, TokenCache, WhitespaceTokenizer, DEFAULT_BATCH_SIZE,
};
use esci_core::Exec;

#[derive(Parser)]
#[command(
    name = "esci",
    version,
    about = "Product search relevance: features, boosting, ranking and evaluation"
)]
struct Cli {
    /// Key-value config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Write the feature matrix of every train and test pair.
    Features(FeaturesArgs),
    /// Train the per-model, per-fold boosters of one task.
    Train(TrainArgs),
    /// Rank test pairs (T1) with trained boosters.
    Rank(PredictArgs),
    /// Label (T2) or flag (T3) test pairs with trained boosters.
    Classify(ClassifyArgs),
    /// Score a prediction file against labeled pairs.
    Evaluate(EvaluateArgs),
    /// Train, ensemble, predict and evaluate every task.
    Pipeline(PipelineArgs),
    /// Compare each feature family switched on and off.
    Ablate(AblateArgs),
    /// Compare padded-cell cost of sorted and unsorted inference batches.
    BatchSim(BatchSimArgs),
}

#[derive(Args)]
struct Overrides {
    /// Extra `key=value` settings, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    queries: Option<usize>,
    /// Upstream probability noise in [0, 1].
    #[arg(long)]
    noise: Option<f64>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct ModelArgs {
    /// Dataset directory in the standard layout.
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "disable-feature", value_name = "FAMILY", value_parser = parse_family)]
    disable_feature: Vec<FeatureFamily>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct FeaturesArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_parser = parse_task)]
    task: Task,
    /// Directory for model files and the fold assignment.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Directory written by `train`.
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    predict: PredictArgs,
    #[arg(long, value_parser = parse_task)]
    task: Task,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Labeled pairs (for example `test_truth.csv`).
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, value_parser = parse_task)]
    task: Task,
    /// Print `metric<TAB>locale<TAB>value` lines instead of text.
    #[arg(long)]
    kv: bool,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long = "task", value_parser = parse_task)]
    tasks: Vec<Task>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    seed: u64,
    /// Families to ablate; all of them when omitted.
    #[arg(long = "family", value_parser = parse_family)]
    families: Vec<FeatureFamily>,
    #[arg(long = "task", value_parser = parse_task)]
    tasks: Vec<Task>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BatchSimArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Sort within consecutive buckets of this many pairs instead of globally.
    #[arg(long)]
    bucket_size: Option<usize>,
    /// Token cache file; built and written if it does not exist.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

fn parse_family(s: &str) -> Result<FeatureFamily, String> {
    s.parse()
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse()
}

const SCHED_KEYS: &[&str] = &["batch_size", "bucket_size"];

struct Ctx {
    kv: KvConfig,
    exec: Exec,
}

impl Ctx {
    fn new(config: Option<&Path>, sequential: bool) -> Result<Self> {
        let kv = match config {
            Some(p) => KvConfig::load(p).context("config")?,
            None => KvConfig::default(),
        };
        let exec = if sequential {
            Exec::Sequential
        } else {
            Exec::default()
        };
        Ok(Ctx { kv, exec })
    }

    fn apply(&mut self, o: &Overrides) -> Result<()> {
        for item in &o.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| anyhow!("[config] --set expects KEY=VALUE, got `{item}`"))?;
            self.kv.set(k.trim(), v.trim());
        }
        let mut known: Vec<&str> = SynthConfig::keys().to_vec();
        known.extend_from_slice(PipelineConfig::KEYS);
        known.extend_from_slice(SCHED_KEYS);
        let unknown = self.kv.unknown_keys(&known);
        if !unknown.is_empty() {
            bail!("[config] unknown key(s): {}", unknown.join(", "));
        }
        Ok(())
    }

    fn pipeline_config(
        &mut self,
        m: &ModelArgs,
        seed: Option<u64>,
        tasks: &[Task],
    ) -> Result<PipelineConfig> {
        self.apply(&m.overrides)?;
        if let Some(s) = seed {
            self.kv.set("seed", s);
        }
        let mut c = PipelineConfig::from_kv(&self.kv).map_err(|e| anyhow!("[config] {e}"))?;
        for f in &m.disable_feature {
            c.features = c.features.without(*f);
        }
        if !tasks.is_empty() {
            c.tasks = tasks.to_vec();
        }
        c.exec = self.exec;
        c.gbdt.exec = self.exec;
        Ok(c)
    }
}

fn load_data(dir: &Path) -> Result<PipelineData> {
    if !dir.is_dir() {
        bail!("[load] dataset directory {} does not exist", dir.display());
    }
    Ok(PipelineData::load(&DatasetPaths::in_dir(dir).existing())?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("[write] {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("[write] {}", path.display()))
}

fn cmd_synth(ctx: &mut Ctx, a: &SynthArgs) -> Result<()> {
    ctx.apply(&a.overrides)?;
    if let Some(q) = a.queries {
        ctx.kv.set("queries", q);
    }
    if let Some(n) = a.noise {
        ctx.kv.set("noise", n);
    }
    let cfg = SynthConfig::from_kv(&ctx.kv).map_err(|e| anyhow!("[synth] {e}"))?;
    let data = synth_generate(&cfg, a.seed).map_err(|e| anyhow!("[synth] {e}"))?;
    data.write_dir(&a.out).map_err(|e| anyhow!("[synth] {e}"))?;
    let mut kv = cfg.to_kv();
    kv.set("seed", a.seed);
    write_text(&a.out.join("synth.cfg"), &kv.to_text())?;
    println!(
        "wrote {} pairs over {} queries to {}",
        data.t2t3.len(),
        data.splits.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_features(ctx: &mut Ctx, a: &FeaturesArgs) -> Result<()> {
    let cfg = ctx.pipeline_config(&a.model, None, &[])?;
    let data = load_data(&a.model.data)?;
    let mut all = data.train.clone();
    if let Some(t) = &data.test {
        all = all.merge(t).map_err(|e| anyhow!("[features] {e}"))?;
    }
    let fc = FeatureConfig {
        families: cfg.features,
        models: (0..data.probs.num_models()).collect(),
        exec: cfg.exec,
    };
    let m = assemble_features(&all, &data.catalog, &data.probs, &t1_product_set(&all), &fc)
        .map_err(|e| anyhow!("[features] {e}"))?;
    m.write_csv(&a.out).map_err(|e| anyhow!("[features] {e}"))?;
    println!(
        "wrote {} rows x {} columns to {}",
        m.n_rows(),
        m.n_cols(),
        a.out.display()
    );
    Ok(())
}

fn cmd_train(ctx: &mut Ctx, a: &TrainArgs) -> Result<()> {
    let cfg = ctx.pipeline_config(&a.model, Some(a.seed), &[a.task])?;
    let data = load_data(&a.model.data)?;
    let (folds, models) = train_task(&data, &cfg, a.task)?;
    fs::create_dir_all(&a.out).with_context(|| format!("[write] {}", a.out.display()))?;
    esci_core::data::write_folds(a.out.join("folds.csv"), &folds)?;
    for m in &models {
        save_model(&m.model, a.out.join(m.file_name())).map_err(|e| anyhow!("[write] {e}"))?;
    }
    println!("wrote {} models to {}", models.len(), a.out.display());
    Ok(())
}

/// Model files in `dir` whose names start with `{task}_`, sorted by name.
fn load_models(dir: &Path, task: Task) -> Result<Vec<esci_core::gbdt::GbdtModel>> {
    let prefix = format!("{task}_");
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("[load] {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "model")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with(&prefix))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("[load] no {task} model files in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| load_model(p).map_err(|e| anyhow!("[load] {}: {e}", p.display())))
        .collect()
}

fn predict(ctx: &mut Ctx, a: &PredictArgs, task: Task) -> Result<()> {
    let cfg = ctx.pipeline_config(&a.model, None, &[task])?;
    let data = load_data(&a.model.data)?;
    let model_task = if task == Task::T3 && cfg.t3_source == T3Source::MulticlassPs {
        Task::T2
    } else {
        task
    };
    let models = load_models(&a.models, model_task)?;
    let out = predict_task(&data, &cfg, task, &models)?;
    fs::create_dir_all(&a.out).with_context(|| format!("[write] {}", a.out.display()))?;
    write_task_outputs(&a.out, &out)?;
    println!("wrote {task} predictions to {}", a.out.display());
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let truth = load_examples(&a.truth, TaskFile::T2T3, None).map_err(|e| anyhow!("[load] {e}"))?;
    let truth = GroundTruth::from_examples(&truth).map_err(|e| anyhow!("[evaluate] {e}"))?;
    let outputs = read_task_outputs(&a.predictions, a.task).map_err(|e| anyhow!("[load] {e}"))?;
    let mut report =
        evaluate_run(&outputs, &truth, a.task).map_err(|e| anyhow!("[evaluate] {e}"))?;
    report.split = "eval".into();
    print!(
        "{}",
        if a.kv {
            report.to_kv_lines()
        } else {
            report.to_text()
        }
    );
    Ok(())
}

fn cmd_pipeline(ctx: &mut Ctx, a: &PipelineArgs) -> Result<()> {
    let cfg = ctx.pipeline_config(&a.model, Some(a.seed), &a.tasks)?;
    let data = load_data(&a.model.data)?;
    let out = run_pipeline(&data, &cfg)?;
    out.write_dir(&a.out).map_err(|e| anyhow!("[write] {e}"))?;
    print!("{}", out.reports_text());
    if !a.model.disable_feature.is_empty() {
        let mut full_cfg = cfg.clone();
        for f in &a.model.disable_feature {
            full_cfg.features = full_cfg.features.with(*f);
        }
        let full = run_pipeline(&data, &full_cfg)?;
        let mut text = String::from("task\tsplit\treduced\tfull\tdelta\n");
        for r in &out.reports {
            if let Some(f) = full.report(r.task, &r.split) {
                text.push_str(&format!(
                    "{}\t{}\t{:.6}\t{:.6}\t{:+.6}\n",
                    r.task,
                    r.split,
                    r.overall,
                    f.overall,
                    r.overall - f.overall
                ));
            }
        }
        write_text(&a.out.join("delta.txt"), &text)?;
        print!("delta vs full feature set\n{text}");
    }
    Ok(())
}

fn cmd_ablate(ctx: &mut Ctx, a: &AblateArgs) -> Result<()> {
    let cfg = ctx.pipeline_config(&a.model, Some(a.seed), &a.tasks)?;
    let data = load_data(&a.model.data)?;
    let families = if a.families.is_empty() {
        FeatureFamily::ALL.to_vec()
    } else {
        a.families.clone()
    };
    let table = ablate(&data, &cfg, &families)?;
    let text = table.to_text();
    if let Some(p) = &a.out {
        write_text(p, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_batch_sim(ctx: &mut Ctx, a: &BatchSimArgs) -> Result<()> {
    ctx.apply(&a.overrides)?;
    let batch_size = match a.batch_size {
        Some(b) => b,
        None => ctx.kv.get("batch_size")?.unwrap_or(DEFAULT_BATCH_SIZE),
    };
    let bucket = match a.bucket_size {
        Some(b) => Some(b),
        None => ctx.kv.get("bucket_size")?,
    };
    let data = load_data(&a.data)?;
    let cache = match &a.cache {
        Some(p) if p.exists() => TokenCache::load(p).map_err(|e| anyhow!("[cache] {e}"))?,
        other => {
            let c = TokenCache::build(&data.catalog, &WhitespaceTokenizer, ctx.exec)
                .map_err(|e| anyhow!("[cache] {e}"))?;
            if let Some(p) = other {
                c.save(p).map_err(|e| anyhow!("[cache] {e}"))?;
            }
            c
        }
    };
    let mut pairs = data.train.examples().to_vec();
    if let Some(t) = &data.test {
        pairs.extend_from_slice(t.examples());
    }
    let seqs = example_sequences(&pairs, &cache, &WhitespaceTokenizer)
        .map_err(|e| anyhow!("[batch-sim] {e}"))?;
    let items: Vec<BatchItem> = pairs
        .iter()
        .zip(&seqs)
        .map(|(e, s)| BatchItem {
            key: e.key(),
            length: s.len(),
        })
        .collect();
    let report = simulate(&items, batch_size, bucket).map_err(|e| anyhow!("[batch-sim] {e}"))?;
    let sorted = presort_batches(&items, batch_size, bucket)?;
    let unsorted = unsorted_batches(&items, batch_size)?;
    let a_out = run_inference(&sorted, &seqs, &SurrogateScorer, ctx.exec)
        .map_err(|e| anyhow!("[batch-sim] {e}"))?;
    let b_out = run_inference(&unsorted, &seqs, &SurrogateScorer, ctx.exec)
        .map_err(|e| anyhow!("[batch-sim] {e}"))?;
    print!("{}", report.to_text());
    println!("outputs_identical\t{}", a_out == b_out);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut ctx = Ctx::new(cli.config.as_deref(), cli.sequential)?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(&mut ctx, a),
        Command::Features(a) => cmd_features(&mut ctx, a),
        Command::Train(a) => cmd_train(&mut ctx, a),
        Command::Rank(a) => predict(&mut ctx, a, Task::T1),
        Command::Classify(a) => {
            if a.task == Task::T1 {
                bail!("[usage] classify takes T2 or T3; use `rank` for T1");
            }
            predict(&mut ctx, &a.predict, a.task)
        }
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Pipeline(a) => cmd_pipeline(&mut ctx, a),
        Command::Ablate(a) => cmd_ablate(&mut ctx, a),
        Command::BatchSim(a) => cmd_batch_sim(&mut ctx, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
