//! Policy model: observation assembly, a two-hidden-layer feedforward
//! network with a softmax over the `2C` composite actions, and a
//! clipped-surrogate policy-gradient trainer.

use ndarray::{s, Array1, ArrayView1};
use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{derive_seed, ActionSpec, EngineConfig, LabeledSequence};
use crate::env::{self, EpisodeState};
use crate::error::{Error, Result};
use crate::lang_model::TransitionTable;
use crate::nn::{self, Adam, ParamLayout};

/// Observation vector: `[f(t), f(t + k_s), f(t + k_l), s_trans, s_hot]`,
/// with look-ahead frames clipped to the last frame.
pub type PolicyObservation = Array1<f64>;

pub fn observation_dim(cfg: &EngineConfig) -> usize {
    3 * cfg.feature_dim + 2 * cfg.num_classes
}

pub fn assemble_policy_observation(
    seq: &LabeledSequence,
    t: usize,
    prev_class: Option<usize>,
    table: &TransitionTable,
    cfg: &EngineConfig,
) -> Result<PolicyObservation> {
    let len = seq.len();
    if t >= len {
        return Err(Error::PositionOutOfRange { position: t, len });
    }
    let f = cfg.feature_dim;
    let c = cfg.num_classes;
    if seq.feature_dim() != f {
        return Err(Error::DimensionMismatch {
            what: "sequence features",
            expected: f,
            actual: seq.feature_dim(),
        });
    }
    if table.num_classes() != c {
        return Err(Error::DimensionMismatch {
            what: "transition table classes",
            expected: c,
            actual: table.num_classes(),
        });
    }
    let mut obs = Array1::zeros(observation_dim(cfg));
    let frames = [t, (t + cfg.small_step).min(len - 1), (t + cfg.large_step).min(len - 1)];
    for (block, &frame) in frames.iter().enumerate() {
        obs.slice_mut(s![block * f..(block + 1) * f])
            .assign(&seq.frame(frame).mapv(f64::from));
    }
    obs.slice_mut(s![3 * f..3 * f + c])
        .assign(&table.transition_probs(prev_class)?);
    if let Some(prev) = prev_class {
        obs[3 * f + c + prev] = 1.0;
    }
    Ok(obs)
}

/// Feedforward policy: two tanh hidden layers and a softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    layout: ParamLayout,
    pub params: Array1<f64>,
    input_dim: usize,
    hidden: [usize; 2],
    num_actions: usize,
}

const W1: usize = 0;
const B1: usize = 1;
const W2: usize = 2;
const B2: usize = 3;
const W3: usize = 4;
const B3: usize = 5;

struct ForwardCache {
    h1: Array1<f64>,
    h2: Array1<f64>,
    probs: Array1<f64>,
}

impl PolicyModel {
    pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

    pub fn layout_for(input_dim: usize, hidden: [usize; 2], num_actions: usize) -> ParamLayout {
        let mut layout = ParamLayout::default();
        layout.push("w1", &[hidden[0], input_dim]);
        layout.push("b1", &[hidden[0]]);
        layout.push("w2", &[hidden[1], hidden[0]]);
        layout.push("b2", &[hidden[1]]);
        layout.push("w3", &[num_actions, hidden[1]]);
        layout.push("b3", &[num_actions]);
        layout
    }

    /// Glorot-uniform hidden layers; the output layer starts at zero so
    /// the initial policy is uniform.
    pub fn new(input_dim: usize, hidden: [usize; 2], num_actions: usize, seed: u64) -> Self {
        let mut model = Self::zeros(input_dim, hidden, num_actions);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (index, fan_in, fan_out) in [(W1, input_dim, hidden[0]), (W2, hidden[0], hidden[1])] {
            let bound = nn::glorot_bound(fan_in, fan_out);
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let slice = model.layout.slice_mut(model.params.as_slice_mut().unwrap(), index);
            for w in slice.iter_mut() {
                *w = dist.sample(&mut rng);
            }
        }
        model
    }

    pub fn for_config(cfg: &EngineConfig, seed: u64) -> Self {
        Self::new(observation_dim(cfg), Self::DEFAULT_HIDDEN, cfg.num_actions(), seed)
    }

    pub fn zeros(input_dim: usize, hidden: [usize; 2], num_actions: usize) -> Self {
        let layout = Self::layout_for(input_dim, hidden, num_actions);
        let params = Array1::zeros(layout.total());
        Self {
            layout,
            params,
            input_dim,
            hidden,
            num_actions,
        }
    }

    pub fn from_params(
        input_dim: usize,
        hidden: [usize; 2],
        num_actions: usize,
        params: Array1<f64>,
    ) -> Result<Self> {
        let mut model = Self::zeros(input_dim, hidden, num_actions);
        if params.len() != model.params.len() {
            return Err(Error::ShapeMismatch {
                name: "policy parameters".into(),
                detail: format!("expected {}, got {}", model.params.len(), params.len()),
            });
        }
        model.params = params;
        Ok(model)
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> [usize; 2] {
        self.hidden
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn forward_cached(&self, x: ArrayView1<'_, f64>) -> ForwardCache {
        let p = self.params.as_slice().unwrap();
        let l = &self.layout;
        let h1 = (l.view2(p, W1).dot(&x) + l.view1(p, B1)).mapv(f64::tanh);
        let h2 = (l.view2(p, W2).dot(&h1) + l.view1(p, B2)).mapv(f64::tanh);
        let logits = l.view2(p, W3).dot(&h2) + l.view1(p, B3);
        let probs = nn::softmax(logits.view());
        ForwardCache { h1, h2, probs }
    }

    /// Action distribution for one observation.
    pub fn forward(&self, obs: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if obs.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "policy observation",
                expected: self.input_dim,
                actual: obs.len(),
            });
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy observation"));
        }
        Ok(self.forward_cached(obs).probs)
    }

    /// Accumulates `d(loss)/d(params)` into `grad` given `d(loss)/d(logits)`
    /// for one observation.
    fn backward(
        &self,
        x: ArrayView1<'_, f64>,
        cache: &ForwardCache,
        dlogits: &Array1<f64>,
        grad: &mut Array1<f64>,
    ) {
        let p = self.params.as_slice().unwrap();
        let l = &self.layout;
        let g = grad.as_slice_mut().unwrap();

        outer_add(l.slice_mut(g, W3), dlogits, &cache.h2);
        add_into(l.slice_mut(g, B3), dlogits);
        let dz2 = l.view2(p, W3).t().dot(dlogits) * cache.h2.mapv(|h| 1.0 - h * h);
        outer_add(l.slice_mut(g, W2), &dz2, &cache.h1);
        add_into(l.slice_mut(g, B2), &dz2);
        let dz1 = l.view2(p, W2).t().dot(&dz2) * cache.h1.mapv(|h| 1.0 - h * h);
        outer_add(l.slice_mut(g, W1), &dz1, &x);
        add_into(l.slice_mut(g, B1), &dz1);
    }

    /// Clipped surrogate loss `-mean(min(r A, clip(r, 1-e, 1+e) A))` and its
    /// gradient over a batch of samples.
    pub fn surrogate_loss_and_grad(&self, batch: &[PolicySample], clip: f64) -> (f64, Array1<f64>) {
        let mut grad = Array1::zeros(self.params.len());
        if batch.is_empty() {
            return (0.0, grad);
        }
        let n = batch.len() as f64;
        let mut loss = 0.0;
        for sample in batch {
            let x = sample.observation.view();
            let cache = self.forward_cached(x);
            let prob = cache.probs[sample.action];
            let ratio = (prob.ln() - sample.old_log_prob).exp();
            let a = sample.advantage;
            let unclipped = ratio * a;
            let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * a;
            if unclipped <= clipped {
                loss -= unclipped / n;
                // d(ratio)/d(logits) = ratio * (onehot - probs)
                let mut dlogits = cache.probs.mapv(|q| a * ratio * q / n);
                dlogits[sample.action] -= a * ratio / n;
                self.backward(x, &cache, &dlogits, &mut grad);
            } else {
                loss -= clipped / n;
            }
        }
        (loss, grad)
    }
}

fn outer_add(target: &mut [f64], rows: &Array1<f64>, cols: &impl AsCols) {
    let ncols = cols.len_();
    for (i, &r) in rows.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        let row = &mut target[i * ncols..(i + 1) * ncols];
        for (j, w) in row.iter_mut().enumerate() {
            *w += r * cols.at(j);
        }
    }
}

fn add_into(target: &mut [f64], values: &Array1<f64>) {
    for (t, v) in target.iter_mut().zip(values.iter()) {
        *t += v;
    }
}

trait AsCols {
    fn len_(&self) -> usize;
    fn at(&self, j: usize) -> f64;
}

impl AsCols for Array1<f64> {
    fn len_(&self) -> usize {
        self.len()
    }
    fn at(&self, j: usize) -> f64 {
        self[j]
    }
}

impl AsCols for ArrayView1<'_, f64> {
    fn len_(&self) -> usize {
        self.len()
    }
    fn at(&self, j: usize) -> f64 {
        self[j]
    }
}

/// Greedy decision: the highest-probability action (lowest index on ties)
/// and its probability.
pub fn greedy_action(dist: ArrayView1<'_, f64>, cfg: &EngineConfig) -> Result<(ActionSpec, f64)> {
    if dist.len() != cfg.num_actions() {
        return Err(Error::DimensionMismatch {
            what: "action distribution",
            expected: cfg.num_actions(),
            actual: dist.len(),
        });
    }
    let index = nn::argmax(dist);
    Ok((cfg.action_space().action(index)?, dist[index]))
}

/// One stored decision from a training rollout.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub observation: Array1<f64>,
    pub action: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyTrainer {
    pub iterations: usize,
    pub epochs_per_iteration: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub clip: f64,
    /// Per-decision discount on the Monte-Carlo return.
    pub discount: f64,
    pub baseline_decay: f64,
    pub seed: u64,
}

impl Default for PolicyTrainer {
    fn default() -> Self {
        Self {
            iterations: 250,
            epochs_per_iteration: 2,
            minibatch_size: 256,
            learning_rate: 1e-3,
            clip: 0.2,
            discount: 0.5,
            baseline_decay: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PolicyTrainingLog {
    /// Mean undiscounted episode return per iteration.
    pub mean_returns: Vec<f64>,
    pub final_baseline: f64,
}

struct Rollout {
    observations: Vec<Array1<f64>>,
    actions: Vec<usize>,
    log_probs: Vec<f64>,
    rewards: Vec<f64>,
}

fn run_stochastic_episode(
    model: &PolicyModel,
    seq: &LabeledSequence,
    table: &TransitionTable,
    cfg: &EngineConfig,
    seed: u64,
) -> Result<Rollout> {
    let labels = seq.labels()?;
    let space = cfg.action_space();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let mut state = EpisodeState::start(seq.len());
    let mut out = Rollout {
        observations: Vec::new(),
        actions: Vec::new(),
        log_probs: Vec::new(),
        rewards: Vec::new(),
    };
    while !state.done {
        let obs = assemble_policy_observation(seq, state.position, state.prev_class, table, cfg)?;
        let probs = model.forward(obs.view())?;
        let u: f64 = unit.sample(&mut rng);
        let mut acc = 0.0;
        let mut index = probs.len() - 1;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                index = i;
                break;
            }
        }
        let action = space.action(index)?;
        out.rewards
            .push(env::policy_reward(labels, state.position, action, cfg.alpha)?);
        out.log_probs.push(probs[index].max(f64::MIN_POSITIVE).ln());
        out.actions.push(index);
        out.observations.push(obs);
        state = env::step(&state, action, seq.len())?;
    }
    Ok(out)
}

impl PolicyTrainer {
    /// Trains `model` in place. Rollouts are parallel across sequences but
    /// each uses a seed derived from `(seed, iteration, sequence)`, and
    /// gradients are reduced in a fixed order, so results do not depend on
    /// the thread count.
    pub fn train(
        &self,
        model: &mut PolicyModel,
        corpus: &[LabeledSequence],
        table: &TransitionTable,
        cfg: &EngineConfig,
    ) -> Result<PolicyTrainingLog> {
        cfg.validate()?;
        if corpus.is_empty() {
            return Err(Error::EmptyInput("training corpus"));
        }
        for seq in corpus {
            seq.labels()?;
            seq.check_classes(cfg.num_classes)?;
        }
        if model.input_dim() != observation_dim(cfg) || model.num_actions() != cfg.num_actions() {
            return Err(Error::DimensionMismatch {
                what: "policy model input",
                expected: observation_dim(cfg),
                actual: model.input_dim(),
            });
        }

        let mut log = PolicyTrainingLog::default();
        let mut adam = Adam::new(model.params.len(), self.learning_rate);
        let mut baseline: Option<f64> = None;

        for iteration in 0..self.iterations {
            let frozen = &*model;
            let rollouts: Vec<Rollout> = corpus
                .par_iter()
                .enumerate()
                .map(|(i, seq)| {
                    let seed = derive_seed(self.seed, &[iteration as u64, i as u64]);
                    run_stochastic_episode(frozen, seq, table, cfg, seed)
                })
                .collect::<Result<_>>()?;

            let episode_returns: Vec<f64> = rollouts.iter().map(|r| r.rewards.iter().sum()).collect();
            log.mean_returns
                .push(episode_returns.iter().sum::<f64>() / episode_returns.len() as f64);

            let mut samples = Vec::new();
            let mut returns_all = Vec::new();
            for rollout in rollouts {
                let mut g = 0.0;
                let mut returns = vec![0.0; rollout.rewards.len()];
                for (t, r) in rollout.rewards.iter().enumerate().rev() {
                    g = r + self.discount * g;
                    returns[t] = g;
                }
                for (((observation, action), old_log_prob), ret) in rollout
                    .observations
                    .into_iter()
                    .zip(rollout.actions)
                    .zip(rollout.log_probs)
                    .zip(returns)
                {
                    returns_all.push(ret);
                    samples.push(PolicySample {
                        observation,
                        action,
                        old_log_prob,
                        advantage: 0.0,
                    });
                }
            }
            let batch_mean = returns_all.iter().sum::<f64>() / returns_all.len() as f64;
            let b = match baseline {
                None => batch_mean,
                Some(prev) => self.baseline_decay * prev + (1.0 - self.baseline_decay) * batch_mean,
            };
            baseline = Some(b);
            // Advantages are scaled (not re-centred) by their spread so the
            // step size is insensitive to the reward scale.
            let spread = (returns_all.iter().map(|g| (g - b).powi(2)).sum::<f64>()
                / returns_all.len() as f64)
                .sqrt()
                .max(1e-8);
            for (sample, g) in samples.iter_mut().zip(&returns_all) {
                sample.advantage = (g - b) / spread;
            }

            let mut order: Vec<usize> = (0..samples.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[iteration as u64, u64::MAX]));
            for _ in 0..self.epochs_per_iteration {
                order.shuffle(&mut rng);
                for chunk in order.chunks(self.minibatch_size.max(1)) {
                    let batch: Vec<PolicySample> = chunk.iter().map(|&i| samples[i].clone()).collect();
                    let grad = parallel_grad(model, &batch, self.clip);
                    adam.step(&mut model.params, &grad);
                }
            }
        }
        log.final_baseline = baseline.unwrap_or(0.0);
        Ok(log)
    }
}

const GRAD_CHUNK: usize = 32;

fn parallel_grad(model: &PolicyModel, batch: &[PolicySample], clip: f64) -> Array1<f64> {
    let scale = 1.0 / batch.len() as f64;
    let partials: Vec<Array1<f64>> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let (_, g) = model.surrogate_loss_and_grad(chunk, clip);
            g * (chunk.len() as f64)
        })
        .collect();
    let mut total = Array1::zeros(model.params.len());
    for partial in partials {
        total += &partial;
    }
    total * scale
}

/// Greedy rollout of the policy alone; returns predicted labels and the
/// maximum action probability at every decision.
pub fn greedy_segmentation(
    model: &PolicyModel,
    seq: &LabeledSequence,
    table: &TransitionTable,
    cfg: &EngineConfig,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut state = EpisodeState::start(seq.len());
    let mut labels = Vec::with_capacity(seq.len());
    let mut confidences = Vec::new();
    while !state.done {
        let obs = assemble_policy_observation(seq, state.position, state.prev_class, table, cfg)?;
        let probs = model.forward(obs.view())?;
        let (action, max_prob) = greedy_action(probs.view(), cfg)?;
        confidences.push(max_prob);
        let next = env::step(&state, action, seq.len())?;
        labels.extend(std::iter::repeat_n(action.class, next.position - state.position));
        state = next;
    }
    Ok((labels, confidences))
}
