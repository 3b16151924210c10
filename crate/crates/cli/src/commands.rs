use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use segsearch::gateway::{Models, RunOptions, Strategy};
use segsearch::io::{
    self, read_checkpoint, read_corpus, write_checkpoint, write_corpus, write_json, CheckpointMeta,
    Corpus, Split,
};
use segsearch::lang_model::TransitionTable;
use segsearch::metrics::{self, MetricReport};
use segsearch::policy::PolicyModel;
use segsearch::synth::{generate_corpus, preset};
use segsearch::value::RecurrentValueModel;
use segsearch::LabeledSequence;

use crate::config::RunConfig;
use crate::pipeline;
use crate::CliError;

pub const POLICY_FILE: &str = "policy.ckpt";
pub const LANG_MODEL_FILE: &str = "lang_model.ckpt";
pub const VALUE_FILE: &str = "value.ckpt";

const REFERENCE_ROW: &str = "Reference numbers for the combined policy+value method on the \
original video benchmark (not reproducible here without its features): \
Acc 81.67, Edit 88.53, F1@10 92.68, F1@25 90.99, F1@50 83.15.";

#[derive(Debug, Parser)]
#[command(name = "segsearch", version, about = "Policy/value tree search for temporal segmentation")]
pub struct Cli {
    /// TOML run configuration; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Root seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus (39 sequence files and a manifest).
    SynthGen(SynthGenArgs),
    /// Train the policy network and fit the transition table.
    TrainPolicy(TrainArgs),
    /// Train the recurrent value network.
    TrainValue(TrainArgs),
    /// Segment a corpus with the confidence-gated search.
    Run(RunArgs),
    /// Sweep search times for the value-only and combined methods.
    Ablate(AblateArgs),
    /// Score predicted labels against ground truth.
    #[command(after_help = REFERENCE_ROW)]
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetName {
    Easy,
    Hard,
    /// Uses the `[synth]` table of the config file.
    Custom,
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    #[arg(long, value_enum)]
    pub preset: PresetName,
    #[arg(long, env = "SEGSEARCH_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct Selection {
    /// Corpus directory written by `synth-gen` (or any directory with a
    /// manifest).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Which manifest split to use.
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Select a single group (evaluation) or every other group (training):
    /// leave-one-group-out.
    #[arg(long)]
    pub group: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: Selection,
    /// Output directory for checkpoints and training logs.
    #[arg(long, env = "SEGSEARCH_OUT")]
    pub out: PathBuf,
    /// Training iterations (policy) or iterations per curriculum stage
    /// (value); 0 writes the initialisation unchanged.
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EngineFlags {
    /// Directory holding the three checkpoints.
    #[arg(long)]
    pub models: PathBuf,
    /// Confidence threshold; 0 never searches (pure policy).
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub c_puct: Option<f64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Combined,
    ValueOnly,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: Selection,
    #[command(flatten)]
    pub engine: EngineFlags,
    /// Simulations per search.
    #[arg(long)]
    pub search_times: Option<usize>,
    #[arg(long, value_enum, default_value = "combined")]
    pub mode: ModeArg,
    /// Output directory for report.json, trace.csv and predictions/.
    #[arg(long, env = "SEGSEARCH_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: Selection,
    #[command(flatten)]
    pub engine: EngineFlags,
    #[arg(long, value_delimiter = ',', default_value = "0,10,20,30,40")]
    pub search_times: Vec<usize>,
    #[arg(long, env = "SEGSEARCH_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted labels: a `.txt` label file, a labelled sequence file, or
    /// a directory of them.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth in the same forms; a corpus directory also works.
    #[arg(long)]
    pub gt: PathBuf,
    /// Optional JSON output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::SynthGen(args) => synth_gen(&cfg, &args),
        Command::TrainPolicy(args) => train_policy(cfg, &args),
        Command::TrainValue(args) => train_value(cfg, &args),
        Command::Run(args) => run(cfg, &args),
        Command::Ablate(args) => ablate(cfg, &args),
        Command::Eval(args) => eval(&args),
    }
}

fn synth_gen(cfg: &RunConfig, args: &SynthGenArgs) -> Result<(), CliError> {
    let (name, synth, train, test) = match args.preset {
        PresetName::Easy | PresetName::Hard => {
            let name = if args.preset == PresetName::Easy { "easy" } else { "hard" };
            let p = preset(name)?;
            (name, p.config, p.train, p.test)
        }
        PresetName::Custom => {
            let synth = cfg
                .synth
                .clone()
                .ok_or_else(|| CliError::Usage("--preset custom needs a [synth] table in --config".into()))?;
            let mut train = generate_corpus(&synth)?;
            let n_test = train.len() / 4;
            let test = train.split_off(train.len() - n_test);
            ("custom", synth, train, test)
        }
    };
    let manifest = write_corpus(&args.out, &train, &test, Some(name), Some(&synth))?;
    println!(
        "wrote {} sequences ({} train, {} test) to {}",
        manifest.sequences.len(),
        train.len(),
        test.len(),
        args.out.display()
    );
    Ok(())
}

/// Resolves a selection. Training defaults to the train split, evaluation
/// to the test split; `--group` takes precedence over the split.
fn select(sel: &Selection, training: bool) -> Result<(Corpus, Vec<String>, Vec<LabeledSequence>), CliError> {
    let corpus = read_corpus(&sel.corpus)?;
    let (names, seqs) = if let Some(group) = &sel.group {
        corpus.by_group(group, training)
    } else {
        let split = sel.split.unwrap_or(if training { SplitArg::Train } else { SplitArg::Test });
        match split {
            SplitArg::Train => corpus.split(Split::Train),
            SplitArg::Test => corpus.split(Split::Test),
            SplitArg::All => {
                let names = corpus
                    .manifest
                    .sequences
                    .iter()
                    .map(|e| Path::new(&e.file).file_stem().unwrap().to_string_lossy().into_owned())
                    .collect();
                (names, corpus.sequences.clone())
            }
        }
    };
    if seqs.is_empty() {
        return Err(CliError::Usage("the selection contains no sequences".into()));
    }
    Ok((corpus, names, seqs))
}

fn engine_for(cfg: &mut RunConfig, corpus: &Corpus) -> Result<(), CliError> {
    cfg.engine.num_classes = corpus.manifest.num_classes;
    cfg.engine.feature_dim = corpus.manifest.feature_dim;
    cfg.engine.validate()?;
    Ok(())
}

fn train_policy(mut cfg: RunConfig, args: &TrainArgs) -> Result<(), CliError> {
    let (corpus, _, train) = select(&args.data, true)?;
    engine_for(&mut cfg, &corpus)?;
    if let Some(n) = args.iterations {
        cfg.policy_training.iterations = n;
    }
    let (model, table, log) = pipeline::train_policy(&train, &cfg)?;
    let meta = CheckpointMeta::new(cfg.seed, &cfg.engine);
    write_checkpoint(&args.out.join(POLICY_FILE), &model, &meta)?;
    write_checkpoint(&args.out.join(LANG_MODEL_FILE), &table, &meta)?;
    write_json(
        &args.out.join("policy_training.json"),
        &json!({ "config": cfg.to_json(), "log": log }),
    )?;
    if let Some(last) = log.mean_returns.last() {
        println!("final mean episode return: {last:.4}");
    }
    Ok(())
}

fn train_value(mut cfg: RunConfig, args: &TrainArgs) -> Result<(), CliError> {
    let (corpus, _, train) = select(&args.data, true)?;
    engine_for(&mut cfg, &corpus)?;
    if let Some(n) = args.iterations {
        cfg.value_training.iterations_per_stage = n;
    }
    let (model, report) = pipeline::train_value(&train, &cfg)?;
    let meta = CheckpointMeta::new(cfg.seed, &cfg.engine);
    write_checkpoint(&args.out.join(VALUE_FILE), &model, &meta)?;
    write_json(
        &args.out.join("value_training.json"),
        &json!({ "config": cfg.to_json(), "report": report }),
    )?;
    match report.final_loss {
        Some(loss) => println!("final MSE: {loss:.6}"),
        None => println!("final MSE: n/a (no training iterations)"),
    }
    Ok(())
}

pub struct LoadedModels {
    pub policy: PolicyModel,
    pub value: RecurrentValueModel,
    pub table: TransitionTable,
}

impl LoadedModels {
    pub fn models(&self) -> Models<'_> {
        Models {
            policy: &self.policy,
            value: &self.value,
            table: &self.table,
        }
    }
}

pub fn load_models(dir: &Path, cfg: &RunConfig) -> Result<LoadedModels, CliError> {
    let (policy, pm) = read_checkpoint::<PolicyModel>(&dir.join(POLICY_FILE))?;
    let (value, vm) = read_checkpoint::<RecurrentValueModel>(&dir.join(VALUE_FILE))?;
    let (table, tm) = read_checkpoint::<TransitionTable>(&dir.join(LANG_MODEL_FILE))?;
    for manifest in [&pm, &vm, &tm] {
        // Logged at warn level by the io layer.
        let _ = io::config_hash_warning(manifest, &cfg.engine);
    }
    Ok(LoadedModels { policy, value, table })
}

fn apply_engine_flags(cfg: &mut RunConfig, flags: &EngineFlags) {
    if let Some(t) = flags.threshold {
        cfg.engine.confidence_threshold = t;
    }
    if let Some(c) = flags.c_puct {
        cfg.engine.c_puct = c;
    }
}

fn run(mut cfg: RunConfig, args: &RunArgs) -> Result<(), CliError> {
    let (corpus, names, seqs) = select(&args.data, false)?;
    engine_for(&mut cfg, &corpus)?;
    apply_engine_flags(&mut cfg, &args.engine);
    if let Some(n) = args.search_times {
        cfg.engine.num_simulations = n;
    }
    cfg.engine.validate()?;
    let models = load_models(&args.engine.models, &cfg)?;
    let strategy = match args.mode {
        ModeArg::Combined => Strategy::Combined,
        ModeArg::ValueOnly => Strategy::ValueOnly,
    };
    let options = RunOptions {
        strategy,
        simulations: None,
    };
    let result = pipeline::evaluate(&seqs, models.models(), &cfg.engine, options, args.engine.jobs)?;
    let echo = json!({
        "run": cfg.to_json(),
        "mode": format!("{:?}", args.mode),
        "split": args.data.split.map(|s| format!("{s:?}")),
        "group": args.data.group,
    });
    let report = io::RunReport::new("run", cfg.seed, echo, &names, &seqs, &result);
    io::write_report(&args.out.join("report.json"), &report)?;
    io::write_frame_trace(&args.out.join("trace.csv"), &names, &seqs, &result)?;
    for (name, ep) in names.iter().zip(&result.episodes) {
        io::write_labels(&args.out.join("predictions").join(format!("{name}.txt")), &ep.predicted)?;
    }
    print_summary(result.aggregate.as_ref(), result.searched_fraction);
    Ok(())
}

fn print_summary(agg: Option<&MetricReport>, searched: f64) {
    if let Some(m) = agg {
        println!(
            "acc {:.2}  edit {:.2}  F1@10 {:.2}  F1@25 {:.2}  F1@50 {:.2}",
            m.accuracy, m.edit, m.f1_10, m.f1_25, m.f1_50
        );
    }
    println!("searched decisions: {:.2}%", 100.0 * searched);
}

fn ablate(mut cfg: RunConfig, args: &AblateArgs) -> Result<(), CliError> {
    if args.search_times.is_empty() {
        return Err(CliError::Usage("--search-times must not be empty".into()));
    }
    let (corpus, _, seqs) = select(&args.data, false)?;
    engine_for(&mut cfg, &corpus)?;
    apply_engine_flags(&mut cfg, &args.engine);
    let models = load_models(&args.engine.models, &cfg)?;
    let rows = pipeline::ablate(&seqs, models.models(), &cfg.engine, &args.search_times, args.engine.jobs)?;
    let table = pipeline::format_ablation(&rows);
    std::fs::create_dir_all(&args.out)
        .map_err(|e| segsearch::Error::Io { path: args.out.clone(), source: e })?;
    std::fs::write(args.out.join("ablation.tsv"), &table)
        .map_err(|e| segsearch::Error::Io { path: args.out.join("ablation.tsv"), source: e })?;
    write_json(
        &args.out.join("ablation.json"),
        &json!({ "tool_version": env!("CARGO_PKG_VERSION"), "seed": cfg.seed, "config": cfg.to_json(), "rows": rows }),
    )?;
    print!("{table}");
    Ok(())
}

/// Name, predicted labels, ground-truth labels.
type LabelPair = (String, Vec<usize>, Vec<usize>);

fn label_pairs(pred: &Path, gt: &Path) -> Result<Vec<LabelPair>, CliError> {
    if !pred.is_dir() {
        let name = pred.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        return Ok(vec![(name, io::read_any_labels(pred)?, io::read_any_labels(gt)?)]);
    }
    let gt_files = io::sequence_paths(gt)?;
    let mut pairs = Vec::new();
    for p in io::sequence_paths(pred)? {
        let stem = p.file_stem().unwrap_or_default();
        let g = gt_files
            .iter()
            .find(|g| g.file_stem() == Some(stem))
            .ok_or_else(|| CliError::Usage(format!("no ground truth for {}", p.display())))?;
        pairs.push((stem.to_string_lossy().into_owned(), io::read_any_labels(&p)?, io::read_any_labels(g)?));
    }
    if pairs.is_empty() {
        return Err(CliError::Usage(format!("no label files in {}", pred.display())));
    }
    Ok(pairs)
}

fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let pairs = label_pairs(&args.pred, &args.gt)?;
    let mut per_sequence = Vec::new();
    for (name, p, g) in &pairs {
        per_sequence.push((name.clone(), metrics::report(p, g)?));
    }
    let reports: Vec<MetricReport> = per_sequence.iter().map(|(_, r)| r.clone()).collect();
    let aggregate = MetricReport::mean(&reports);
    if let Some(out) = &args.out {
        write_json(out, &json!({ "aggregate": aggregate, "sequences": per_sequence }))?;
    }
    if let Some(m) = &aggregate {
        println!(
            "acc {:.2}  edit {:.2}  F1@10 {:.2}  F1@25 {:.2}  F1@50 {:.2}",
            m.accuracy, m.edit, m.f1_10, m.f1_25, m.f1_50
        );
    }
    Ok(())
}
