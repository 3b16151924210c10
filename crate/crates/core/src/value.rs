//! Recurrent value model.
//!
//! Each frame's input is the frame feature vector concatenated with a
//! one-hot code of the class conjectured for that frame. A single LSTM
//! layer feeds a tanh fully-connected layer and a tanh scalar head, so
//! every per-frame score lies in `(-1, 1)`. Training regresses the
//! episode-level mean reward broadcast to every frame, on random windows
//! whose length grows over a curriculum.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{derive_seed, labels_from_actions, EngineConfig, LabeledSequence};
use crate::env;
use crate::error::{Error, Result};
use crate::nn::{self, sigmoid, Adam, ParamLayout};

const WX: usize = 0;
const WH: usize = 1;
const B: usize = 2;
const WF: usize = 3;
const BF: usize = 4;
const WO: usize = 5;
const BO: usize = 6;

/// Recurrent state carried between frames.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: Array1::zeros(hidden),
            c: Array1::zeros(hidden),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentValueModel {
    layout: ParamLayout,
    pub params: Array1<f64>,
    feature_dim: usize,
    num_classes: usize,
    hidden: usize,
    fc: usize,
}

/// Intermediate values of one recurrent step, kept for backpropagation.
struct StepCache {
    input: Array1<f64>,
    h_prev: Array1<f64>,
    c_prev: Array1<f64>,
    gates: Array1<f64>,
    c: Array1<f64>,
    tanh_c: Array1<f64>,
    h: Array1<f64>,
    fc: Array1<f64>,
    out: f64,
}

impl RecurrentValueModel {
    pub const DEFAULT_HIDDEN: usize = 32;
    pub const DEFAULT_FC: usize = 32;

    pub fn layout_for(input_dim: usize, hidden: usize, fc: usize) -> ParamLayout {
        let mut layout = ParamLayout::default();
        layout.push("lstm_wx", &[4 * hidden, input_dim]);
        layout.push("lstm_wh", &[4 * hidden, hidden]);
        layout.push("lstm_b", &[4 * hidden]);
        layout.push("fc_w", &[fc, hidden]);
        layout.push("fc_b", &[fc]);
        layout.push("out_w", &[fc]);
        layout.push("out_b", &[1]);
        layout
    }

    pub fn zeros(feature_dim: usize, num_classes: usize, hidden: usize, fc: usize) -> Self {
        let layout = Self::layout_for(feature_dim + num_classes, hidden, fc);
        let params = Array1::zeros(layout.total());
        Self {
            layout,
            params,
            feature_dim,
            num_classes,
            hidden,
            fc,
        }
    }

    /// Uniform `±1/sqrt(hidden)` recurrent weights with forget-gate bias 1,
    /// Glorot-uniform dense layers.
    pub fn new(feature_dim: usize, num_classes: usize, hidden: usize, fc: usize, seed: u64) -> Self {
        let mut model = Self::zeros(feature_dim, num_classes, hidden, fc);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = model.layout.clone();
        let params = model.params.as_slice_mut().unwrap();
        let bound = 1.0 / (hidden as f64).sqrt();
        let recurrent = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        for index in [WX, WH] {
            for w in layout.slice_mut(params, index) {
                *w = recurrent.sample(&mut rng);
            }
        }
        for w in &mut layout.slice_mut(params, B)[hidden..2 * hidden] {
            *w = 1.0;
        }
        for (index, fan_in, fan_out) in [(WF, hidden, fc), (WO, fc, 1)] {
            let b = nn::glorot_bound(fan_in, fan_out);
            let dist = Uniform::new_inclusive(-b, b).expect("finite bound");
            for w in layout.slice_mut(params, index) {
                *w = dist.sample(&mut rng);
            }
        }
        model
    }

    pub fn for_config(cfg: &EngineConfig, seed: u64) -> Self {
        Self::new(
            cfg.feature_dim,
            cfg.num_classes,
            Self::DEFAULT_HIDDEN,
            Self::DEFAULT_FC,
            seed,
        )
    }

    pub fn from_params(
        feature_dim: usize,
        num_classes: usize,
        hidden: usize,
        fc: usize,
        params: Array1<f64>,
    ) -> Result<Self> {
        let mut model = Self::zeros(feature_dim, num_classes, hidden, fc);
        if params.len() != model.params.len() {
            return Err(Error::ShapeMismatch {
                name: "value parameters".into(),
                detail: format!("expected {}, got {}", model.params.len(), params.len()),
            });
        }
        model.params = params;
        Ok(model)
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.feature_dim + self.num_classes
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn fc(&self) -> usize {
        self.fc
    }

    pub fn initial_state(&self) -> LstmState {
        LstmState::zeros(self.hidden)
    }

    fn step_cached(&self, state: &LstmState, input: ArrayView1<'_, f64>) -> StepCache {
        let p = self.params.as_slice().unwrap();
        let l = &self.layout;
        let hd = self.hidden;
        let mut gates =
            l.view2(p, WX).dot(&input) + l.view2(p, WH).dot(&state.h) + l.view1(p, B);
        for (k, z) in gates.iter_mut().enumerate() {
            *z = if (2 * hd..3 * hd).contains(&k) {
                z.tanh()
            } else {
                sigmoid(*z)
            };
        }
        let (i, f, g, o) = (
            gates.slice(s![0..hd]),
            gates.slice(s![hd..2 * hd]),
            gates.slice(s![2 * hd..3 * hd]),
            gates.slice(s![3 * hd..4 * hd]),
        );
        let c = &f * &state.c + &i * &g;
        let tanh_c = c.mapv(f64::tanh);
        let h = &o * &tanh_c;
        let fc = (l.view2(p, WF).dot(&h) + l.view1(p, BF)).mapv(f64::tanh);
        let out = (l.view1(p, WO).dot(&fc) + p[l.entry(BO).offset]).tanh();
        StepCache {
            input: input.to_owned(),
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            gates,
            c,
            tanh_c,
            h,
            fc,
            out,
        }
    }

    /// Advances the recurrent state by one frame and returns its score.
    pub fn step(&self, state: &LstmState, input: ArrayView1<'_, f64>) -> (LstmState, f64) {
        let cache = self.step_cached(state, input);
        (
            LstmState {
                h: cache.h,
                c: cache.c,
            },
            cache.out,
        )
    }

    fn check_observations(&self, obs: ArrayView2<'_, f64>) -> Result<()> {
        if obs.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "value observation",
                expected: self.input_dim(),
                actual: obs.ncols(),
            });
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("value observation"));
        }
        Ok(())
    }

    /// Per-frame scores from a forward scan starting at the zero state.
    pub fn forward(&self, obs: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        self.check_observations(obs)?;
        Ok(self.scan(&self.initial_state(), obs).1)
    }

    /// Forward scan from an arbitrary state; returns the final state and the
    /// per-frame scores.
    pub fn scan(&self, state: &LstmState, obs: ArrayView2<'_, f64>) -> (LstmState, Vec<f64>) {
        let mut state = state.clone();
        let mut outputs = Vec::with_capacity(obs.nrows());
        for row in obs.rows() {
            let (next, out) = self.step(&state, row);
            state = next;
            outputs.push(out);
        }
        (state, outputs)
    }

    /// Mean squared error against a constant target over one window, plus
    /// its gradient by backpropagation through time. The window starts from
    /// the zero state.
    pub fn window_loss_and_grad(&self, obs: ArrayView2<'_, f64>, target: f64) -> (f64, Array1<f64>) {
        let mut grad = Array1::zeros(self.params.len());
        let loss = self.accumulate_window_grad(obs, target, 1.0, &mut grad);
        (loss, grad)
    }

    fn accumulate_window_grad(
        &self,
        obs: ArrayView2<'_, f64>,
        target: f64,
        weight: f64,
        grad: &mut Array1<f64>,
    ) -> f64 {
        let len = obs.nrows();
        if len == 0 {
            return 0.0;
        }
        let mut state = self.initial_state();
        let mut caches = Vec::with_capacity(len);
        let mut loss = 0.0;
        for row in obs.rows() {
            let cache = self.step_cached(&state, row);
            loss += (cache.out - target).powi(2);
            state = LstmState {
                h: cache.h.clone(),
                c: cache.c.clone(),
            };
            caches.push(cache);
        }
        let scale = weight / len as f64;

        let p = self.params.as_slice().unwrap();
        let l = &self.layout;
        let hd = self.hidden;
        let wh = l.view2(p, WH);
        let wf = l.view2(p, WF);
        let wo = l.view1(p, WO);
        let g = grad.as_slice_mut().unwrap();

        let mut dh_next = Array1::<f64>::zeros(hd);
        let mut dc_next = Array1::<f64>::zeros(hd);
        let mut dz = Array1::<f64>::zeros(4 * hd);
        for cache in caches.iter().rev() {
            let dout = 2.0 * (cache.out - target) * scale;
            let dpre = dout * (1.0 - cache.out * cache.out);
            axpy(l.slice_mut(g, WO), dpre, cache.fc.as_slice().unwrap());
            g[l.entry(BO).offset] += dpre;
            let dzf = (&wo * dpre) * cache.fc.mapv(|u| 1.0 - u * u);
            outer_add(l.slice_mut(g, WF), &dzf, &cache.h);
            axpy(l.slice_mut(g, BF), 1.0, dzf.as_slice().unwrap());

            let dh = wf.t().dot(&dzf) + &dh_next;
            let gates = &cache.gates;
            for k in 0..hd {
                let (i, f, gg, o) = (gates[k], gates[hd + k], gates[2 * hd + k], gates[3 * hd + k]);
                let tc = cache.tanh_c[k];
                let dc = dh[k] * o * (1.0 - tc * tc) + dc_next[k];
                dz[k] = dc * gg * i * (1.0 - i);
                dz[hd + k] = dc * cache.c_prev[k] * f * (1.0 - f);
                dz[2 * hd + k] = dc * i * (1.0 - gg * gg);
                dz[3 * hd + k] = dh[k] * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            outer_add(l.slice_mut(g, WX), &dz, &cache.input);
            outer_add(l.slice_mut(g, WH), &dz, &cache.h_prev);
            axpy(l.slice_mut(g, B), 1.0, dz.as_slice().unwrap());
            dh_next = wh.t().dot(&dz);
        }
        loss * scale
    }

    /// Mean of the per-window losses and their gradient over a batch.
    pub fn batch_loss_and_grad(&self, windows: &[(ArrayView2<'_, f64>, f64)]) -> (f64, Array1<f64>) {
        const CHUNK: usize = 4;
        let weight = 1.0 / windows.len().max(1) as f64;
        let partials: Vec<(f64, Array1<f64>)> = windows
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grad = Array1::zeros(self.params.len());
                let loss = chunk
                    .iter()
                    .map(|(obs, target)| self.accumulate_window_grad(*obs, *target, weight, &mut grad))
                    .sum::<f64>();
                (loss, grad)
            })
            .collect();
        let mut grad = Array1::zeros(self.params.len());
        let mut loss = 0.0;
        for (l, g) in partials {
            loss += l;
            grad += &g;
        }
        (loss, grad)
    }
}

fn axpy(target: &mut [f64], a: f64, x: &[f64]) {
    for (t, v) in target.iter_mut().zip(x) {
        *t += a * v;
    }
}

fn outer_add(target: &mut [f64], rows: &Array1<f64>, cols: &Array1<f64>) {
    let n = cols.len();
    let cols = cols.as_slice().unwrap();
    for (i, &r) in rows.iter().enumerate() {
        if r != 0.0 {
            axpy(&mut target[i * n..(i + 1) * n], r, cols);
        }
    }
}

/// Builds one frame's value input `[features, one_hot(class)]`.
pub fn value_input(features: ArrayView1<'_, f32>, class: usize, num_classes: usize) -> Array1<f64> {
    let f = features.len();
    let mut x = Array1::zeros(f + num_classes);
    for (dst, &src) in x.iter_mut().zip(features.iter()) {
        *dst = f64::from(src);
    }
    x[f + class] = 1.0;
    x
}

/// Per-frame value observations for a conjectured labelling.
pub fn assemble_value_sequence(
    seq: &LabeledSequence,
    conjectured: &[usize],
    num_classes: usize,
) -> Result<Array2<f64>> {
    if conjectured.len() != seq.len() {
        return Err(Error::LengthMismatch {
            expected: seq.len(),
            actual: conjectured.len(),
        });
    }
    let f = seq.feature_dim();
    let mut obs = Array2::zeros((seq.len(), f + num_classes));
    for (t, (mut row, &class)) in obs.axis_iter_mut(Axis(0)).zip(conjectured).enumerate() {
        if class >= num_classes {
            return Err(Error::ClassOutOfRange { class, num_classes });
        }
        row.slice_mut(s![0..f]).assign(&seq.frame(t).mapv(f64::from));
        row[f + class] = 1.0;
    }
    Ok(obs)
}

/// Mean of a window of per-frame scores `[t, min(t + k, T))`.
pub fn window_mean(outputs: &[f64], t: usize, k: usize) -> Result<f64> {
    let end = (t + k).min(outputs.len());
    if k == 0 || t >= end {
        return Err(Error::EmptyInput("value window"));
    }
    Ok(outputs[t..end].iter().sum::<f64>() / (end - t) as f64)
}

/// Window estimate of the mean reward for the span `[t, t + k)` of an
/// observation sequence, clipped at its end.
pub fn window_estimate(
    model: &RecurrentValueModel,
    obs: ArrayView2<'_, f64>,
    t: usize,
    k: usize,
) -> Result<f64> {
    let end = (t + k).min(obs.nrows());
    if k == 0 || t >= end {
        return Err(Error::EmptyInput("value window"));
    }
    let outputs = model.forward(obs.slice(s![0..end, ..]))?;
    window_mean(&outputs, t, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Expert,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueSample {
    pub observations: Array2<f64>,
    /// Episode mean reward, broadcast to every frame.
    pub target: f64,
    pub provenance: Provenance,
}

/// Labels produced by uniformly random actions over a sequence.
pub fn random_conjecture<R: Rng + ?Sized>(len: usize, cfg: &EngineConfig, rng: &mut R) -> Vec<usize> {
    let space = cfg.action_space();
    let pick = Uniform::new(0, space.len()).expect("non-empty action space");
    let mut actions = Vec::new();
    let mut covered = 0;
    while covered < len {
        let action = space.action(pick.sample(rng)).expect("index in range");
        covered += action.step;
        actions.push(action);
    }
    labels_from_actions(&actions, len).expect("actions cover the sequence")
}

/// One expert sample per sequence plus enough random-action samples that
/// they make up `random_fraction` of the dataset.
pub fn build_value_dataset<R: Rng + ?Sized>(
    corpus: &[LabeledSequence],
    cfg: &EngineConfig,
    rng: &mut R,
    random_fraction: f64,
) -> Result<Vec<ValueSample>> {
    if !(0.0..1.0).contains(&random_fraction) {
        return Err(Error::InvalidConfig(format!(
            "random_fraction must lie in [0, 1), got {random_fraction}"
        )));
    }
    let mut samples = Vec::new();
    for seq in corpus {
        let labels = seq.labels()?;
        seq.check_classes(cfg.num_classes)?;
        samples.push(ValueSample {
            observations: assemble_value_sequence(seq, labels, cfg.num_classes)?,
            target: env::episode_mean_reward(labels, labels)?,
            provenance: Provenance::Expert,
        });
    }
    let expert = samples.len();
    let random = (expert as f64 * random_fraction / (1.0 - random_fraction)).round() as usize;
    for i in 0..random {
        let seq = &corpus[i % corpus.len()];
        let labels = seq.labels()?;
        let conjectured = random_conjecture(seq.len(), cfg, rng);
        samples.push(ValueSample {
            observations: assemble_value_sequence(seq, &conjectured, cfg.num_classes)?,
            target: env::episode_mean_reward(labels, &conjectured)?,
            provenance: Provenance::Random,
        });
    }
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValueTrainer {
    /// Window lengths, one curriculum stage each.
    pub curriculum: Vec<usize>,
    pub iterations_per_stage: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ValueTrainer {
    fn default() -> Self {
        Self {
            curriculum: (20..=100).step_by(10).collect(),
            iterations_per_stage: 300,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub window: usize,
    pub iterations: usize,
    pub skipped: bool,
    /// Mean batch loss over the last quarter of the stage.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValueTrainingReport {
    pub stages: Vec<StageReport>,
    pub final_loss: Option<f64>,
}

impl ValueTrainer {
    pub fn train(
        &self,
        model: &mut RecurrentValueModel,
        samples: &[ValueSample],
    ) -> Result<ValueTrainingReport> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("value samples"));
        }
        for sample in samples {
            if sample.observations.ncols() != model.input_dim() {
                return Err(Error::DimensionMismatch {
                    what: "value observation",
                    expected: model.input_dim(),
                    actual: sample.observations.ncols(),
                });
            }
        }
        let mut adam = Adam::new(model.params.len(), self.learning_rate);
        let mut report = ValueTrainingReport::default();
        for (stage, &window) in self.curriculum.iter().enumerate() {
            let eligible: Vec<&ValueSample> = samples
                .iter()
                .filter(|s| s.observations.nrows() >= window)
                .collect();
            if eligible.is_empty() {
                log::warn!("skipping curriculum stage K={window}: every sequence is shorter");
                report.stages.push(StageReport {
                    window,
                    iterations: 0,
                    skipped: true,
                    loss: None,
                });
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[stage as u64]));
            let pick = Uniform::new(0, eligible.len()).expect("non-empty");
            let mut losses = Vec::with_capacity(self.iterations_per_stage);
            for _ in 0..self.iterations_per_stage {
                let windows: Vec<(ArrayView2<'_, f64>, f64)> = (0..self.batch_size.max(1))
                    .map(|_| {
                        let sample = eligible[pick.sample(&mut rng)];
                        let start = rng.random_range(0..=sample.observations.nrows() - window);
                        (
                            sample.observations.slice(s![start..start + window, ..]),
                            sample.target,
                        )
                    })
                    .collect();
                let (loss, grad) = model.batch_loss_and_grad(&windows);
                adam.step(&mut model.params, &grad);
                losses.push(loss);
            }
            let tail = &losses[losses.len() - losses.len().div_ceil(4)..];
            let loss = (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64);
            report.stages.push(StageReport {
                window,
                iterations: self.iterations_per_stage,
                skipped: false,
                loss,
            });
            if loss.is_some() {
                report.final_loss = loss;
            }
        }
        Ok(report)
    }
}
