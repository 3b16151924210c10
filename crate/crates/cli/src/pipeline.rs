//! Training and evaluation pipelines shared by the subcommands and the
//! acceptance suite.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use segsearch::domain::derive_seed;
use segsearch::gateway::{run_corpus, CorpusResult, Models, RunOptions, Strategy};
use segsearch::lang_model::TransitionTable;
use segsearch::policy::{PolicyModel, PolicyTrainingLog};
use segsearch::value::{build_value_dataset, RecurrentValueModel, ValueTrainingReport};
use segsearch::{EngineConfig, LabeledSequence, Result};

use crate::config::RunConfig;

const POLICY_INIT: u64 = 1;
const POLICY_TRAIN: u64 = 2;
const VALUE_INIT: u64 = 3;
const VALUE_DATA: u64 = 4;
const VALUE_TRAIN: u64 = 5;

pub fn fit_language_model(train: &[LabeledSequence], cfg: &EngineConfig) -> Result<TransitionTable> {
    let labels = train
        .iter()
        .map(|s| s.labels().map(<[usize]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    TransitionTable::fit(&labels, cfg.num_classes)
}

pub fn initial_policy(cfg: &RunConfig) -> PolicyModel {
    PolicyModel::for_config(&cfg.engine, derive_seed(cfg.seed, &[POLICY_INIT]))
}

pub fn initial_value(cfg: &RunConfig) -> RecurrentValueModel {
    RecurrentValueModel::for_config(&cfg.engine, derive_seed(cfg.seed, &[VALUE_INIT]))
}

/// Fits the transition table and trains the policy on `train`.
pub fn train_policy(
    train: &[LabeledSequence],
    cfg: &RunConfig,
) -> Result<(PolicyModel, TransitionTable, PolicyTrainingLog)> {
    cfg.engine.validate()?;
    let table = fit_language_model(train, &cfg.engine)?;
    let mut model = initial_policy(cfg);
    let trainer = segsearch::policy::PolicyTrainer {
        seed: derive_seed(cfg.seed, &[POLICY_TRAIN]),
        ..cfg.policy_training.clone()
    };
    let log = trainer.train(&mut model, train, &table, &cfg.engine)?;
    Ok((model, table, log))
}

pub fn train_value(
    train: &[LabeledSequence],
    cfg: &RunConfig,
) -> Result<(RecurrentValueModel, ValueTrainingReport)> {
    cfg.engine.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[VALUE_DATA]));
    let samples = build_value_dataset(train, &cfg.engine, &mut rng, cfg.value_random_fraction)?;
    let mut model = initial_value(cfg);
    let trainer = segsearch::value::ValueTrainer {
        seed: derive_seed(cfg.seed, &[VALUE_TRAIN]),
        ..cfg.value_training.clone()
    };
    let report = trainer.train(&mut model, &samples)?;
    Ok((model, report))
}

pub fn evaluate(
    corpus: &[LabeledSequence],
    models: Models<'_>,
    engine: &EngineConfig,
    options: RunOptions,
    jobs: usize,
) -> Result<CorpusResult> {
    run_corpus(corpus, models, engine, options, jobs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scores {
    pub accuracy: f64,
    pub edit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub search_times: usize,
    /// Pure policy; only reported on the first row since it does not search.
    pub policy: Option<Scores>,
    /// Search at every decision with uniform priors.
    pub value: Scores,
    /// Confidence-gated search with policy priors.
    pub combined: Scores,
    pub combined_searched_fraction: f64,
}

fn scores(result: &CorpusResult) -> Result<Scores> {
    let agg = result
        .aggregate
        .as_ref()
        .ok_or(segsearch::Error::MissingLabels)?;
    Ok(Scores {
        accuracy: agg.accuracy,
        edit: agg.edit,
    })
}

pub fn ablate(
    corpus: &[LabeledSequence],
    models: Models<'_>,
    engine: &EngineConfig,
    search_times: &[usize],
    jobs: usize,
) -> Result<Vec<AblationRow>> {
    let pure_cfg = EngineConfig {
        confidence_threshold: 0.0,
        ..engine.clone()
    };
    let mut rows = Vec::with_capacity(search_times.len());
    for (i, &n) in search_times.iter().enumerate() {
        let policy = if i == 0 {
            Some(scores(&run_corpus(corpus, models, &pure_cfg, RunOptions::default(), jobs)?)?)
        } else {
            None
        };
        let value = run_corpus(
            corpus,
            models,
            engine,
            RunOptions {
                strategy: Strategy::ValueOnly,
                simulations: Some(n),
            },
            jobs,
        )?;
        let combined = run_corpus(
            corpus,
            models,
            engine,
            RunOptions {
                strategy: Strategy::Combined,
                simulations: Some(n),
            },
            jobs,
        )?;
        rows.push(AblationRow {
            search_times: n,
            policy,
            value: scores(&value)?,
            combined: scores(&combined)?,
            combined_searched_fraction: combined.searched_fraction,
        });
    }
    Ok(rows)
}

/// Renders rows in the layout of the reference ablation table.
pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut out = String::from("search_times\tpolicy_acc\tpolicy_edit\tvalue_acc\tvalue_edit\tcombined_acc\tcombined_edit\n");
    for row in rows {
        let (pa, pe) = match row.policy {
            Some(s) => (format!("{:.2}", s.accuracy), format!("{:.2}", s.edit)),
            None => ("-".into(), "-".into()),
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\n",
            row.search_times, pa, pe, row.value.accuracy, row.value.edit, row.combined.accuracy, row.combined.edit
        ));
    }
    out
}
