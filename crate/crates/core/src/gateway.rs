//! Episode controller. At each decision the policy proposes a distribution
//! over actions; if its maximum reaches the confidence threshold the greedy
//! action is executed, otherwise a tree search picks the action.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ActionSpec, EngineConfig, LabeledSequence};
use crate::env::{self, EpisodeState};
use crate::error::{Error, Result};
use crate::lang_model::TransitionTable;
use crate::metrics::{self, MetricReport};
use crate::policy::{assemble_policy_observation, greedy_action, PolicyModel};
use crate::search::{tree_search_with, NetworkEvaluator, SearchDiagnostics, SearchRoot};
use crate::value::{value_input, LstmState, RecurrentValueModel};

/// How decisions are made.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Greedy policy above the threshold, policy-guided search below.
    #[default]
    Combined,
    /// Search at every decision with uniform priors; the policy is only
    /// evaluated for the confidence trace.
    ValueOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct Models<'a> {
    pub policy: &'a PolicyModel,
    pub value: &'a RecurrentValueModel,
    pub table: &'a TransitionTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub frame: usize,
    pub max_prob: f64,
    pub searched: bool,
    pub action_index: usize,
    pub action: ActionSpec,
    pub search: Option<SearchDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub predicted: Vec<usize>,
    pub decisions: Vec<Decision>,
    /// Searched decisions over all decisions.
    pub searched_fraction: f64,
    /// Frames covered by searched decisions over all frames.
    pub searched_frame_fraction: f64,
}

impl EpisodeResult {
    pub fn searched_decisions(&self) -> usize {
        self.decisions.iter().filter(|d| d.searched).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub strategy: Strategy,
    /// Simulations per search; `cfg.num_simulations` when `None`.
    pub simulations: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            strategy: Strategy::Combined,
            simulations: None,
        }
    }
}

fn check_dims(seq: &LabeledSequence, models: &Models<'_>, cfg: &EngineConfig) -> Result<()> {
    cfg.validate()?;
    let checks = [
        ("sequence features", cfg.feature_dim, seq.feature_dim()),
        ("value model features", cfg.feature_dim, models.value.feature_dim()),
        ("value model classes", cfg.num_classes, models.value.num_classes()),
        ("policy actions", cfg.num_actions(), models.policy.num_actions()),
        ("transition table classes", cfg.num_classes, models.table.num_classes()),
    ];
    for (what, expected, actual) in checks {
        if expected != actual {
            return Err(Error::DimensionMismatch {
                what,
                expected,
                actual,
            });
        }
    }
    Ok(())
}

pub fn run_episode(
    seq: &LabeledSequence,
    models: Models<'_>,
    cfg: &EngineConfig,
) -> Result<EpisodeResult> {
    run_episode_with(seq, models, cfg, RunOptions::default())
}

pub fn run_episode_with(
    seq: &LabeledSequence,
    models: Models<'_>,
    cfg: &EngineConfig,
    options: RunOptions,
) -> Result<EpisodeResult> {
    check_dims(seq, &models, cfg)?;
    let len = seq.len();
    let space = cfg.action_space();
    let simulations = options.simulations.unwrap_or(cfg.num_simulations);
    let evaluator = NetworkEvaluator {
        policy: match options.strategy {
            Strategy::Combined => Some(models.policy),
            Strategy::ValueOnly => None,
        },
        value: models.value,
        table: models.table,
        seq,
        cfg,
    };

    let mut state = EpisodeState::start(len);
    let mut predicted: Vec<usize> = Vec::with_capacity(len);
    let mut decisions = Vec::new();
    // Value-model state over the executed prefix, advanced lazily up to
    // `value_pos` whenever a search needs it.
    let mut value_state: LstmState = models.value.initial_state();
    let mut value_pos = 0;

    while !state.done {
        let t = state.position;
        let obs = assemble_policy_observation(seq, t, state.prev_class, models.table, cfg)?;
        let dist = models.policy.forward(obs.view())?;
        let (greedy, max_prob) = greedy_action(dist.view(), cfg)?;
        let must_search = match options.strategy {
            Strategy::Combined => max_prob < cfg.confidence_threshold,
            Strategy::ValueOnly => true,
        };
        let (action, search) = if must_search {
            while value_pos < t {
                let x = value_input(seq.frame(value_pos), predicted[value_pos], cfg.num_classes);
                value_state = models.value.step(&value_state, x.view()).0;
                value_pos += 1;
            }
            let root = SearchRoot {
                position: t,
                prev_class: state.prev_class,
                state: value_state.clone(),
            };
            let (action, diag) = tree_search_with(&evaluator, cfg, root, simulations)?;
            (action, Some(diag))
        } else {
            (greedy, None)
        };
        let next = env::step(&state, action, len)?;
        predicted.extend(std::iter::repeat_n(action.class, next.position - t));
        decisions.push(Decision {
            frame: t,
            max_prob,
            searched: search.is_some(),
            action_index: space.index(&action)?,
            action,
            search,
        });
        state = next;
    }

    let searched = decisions.iter().filter(|d| d.searched).count();
    let searched_frames: usize = decisions
        .iter()
        .filter(|d| d.searched)
        .map(|d| d.action.step.min(len - d.frame))
        .sum();
    Ok(EpisodeResult {
        predicted,
        searched_fraction: searched as f64 / decisions.len() as f64,
        searched_frame_fraction: searched_frames as f64 / len as f64,
        decisions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusResult {
    pub episodes: Vec<EpisodeResult>,
    /// Per-sequence metrics, when the corpus is labelled.
    pub metrics: Option<Vec<MetricReport>>,
    /// Unweighted mean of the per-sequence metrics.
    pub aggregate: Option<MetricReport>,
    pub searched_fraction: f64,
}

/// Runs every sequence independently on up to `jobs` threads. Output order
/// and content do not depend on `jobs`.
pub fn run_corpus(
    corpus: &[LabeledSequence],
    models: Models<'_>,
    cfg: &EngineConfig,
    options: RunOptions,
    jobs: usize,
) -> Result<CorpusResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let episodes: Vec<EpisodeResult> = pool.install(|| {
        corpus
            .par_iter()
            .map(|seq| run_episode_with(seq, models, cfg, options))
            .collect::<Result<_>>()
    })?;

    let labelled = !corpus.is_empty() && corpus.iter().all(|s| s.labels.is_some());
    let metrics = if labelled {
        Some(
            corpus
                .iter()
                .zip(&episodes)
                .map(|(seq, ep)| metrics::report(&ep.predicted, seq.labels()?))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let aggregate = metrics.as_deref().and_then(MetricReport::mean);
    let decisions: usize = episodes.iter().map(|e| e.decisions.len()).sum();
    let searched: usize = episodes.iter().map(|e| e.searched_decisions()).sum();
    Ok(CorpusResult {
        searched_fraction: if decisions == 0 {
            0.0
        } else {
            searched as f64 / decisions as f64
        },
        episodes,
        metrics,
        aggregate,
    })
}
