//! Deterministic stepping environment over a labelled sequence.
//!
//! The agent's position only moves forward; the label it emits never affects
//! the next state's features, so transitions are a pure function of
//! `(state, action)`. Both rewards use the span clipped at the sequence end.

use serde::{Deserialize, Serialize};

use crate::domain::ActionSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EpisodeState {
    pub position: usize,
    pub prev_class: Option<usize>,
    pub done: bool,
}

impl EpisodeState {
    pub fn start(len: usize) -> Self {
        Self {
            position: 0,
            prev_class: None,
            done: len == 0,
        }
    }
}

/// One executed decision and the reward it earned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: EpisodeState,
    pub action: ActionSpec,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub predicted: Vec<usize>,
}

fn clipped_span(len: usize, t: usize, step: usize) -> Result<std::ops::Range<usize>> {
    if t >= len {
        return Err(Error::PositionOutOfRange { position: t, len });
    }
    Ok(t..t + step.min(len - t))
}

/// Step reward: `alpha * k' - #wrong` over the clipped span of length `k'`.
pub fn policy_reward(labels: &[usize], t: usize, action: ActionSpec, alpha: f64) -> Result<f64> {
    let span = clipped_span(labels.len(), t, action.step)?;
    let covered = span.len();
    let wrong = labels[span].iter().filter(|&&y| y != action.class).count();
    Ok(alpha * covered as f64 - wrong as f64)
}

/// Value reward: `#correct - #wrong` over the clipped span.
pub fn value_reward(labels: &[usize], t: usize, action: ActionSpec) -> Result<f64> {
    let span = clipped_span(labels.len(), t, action.step)?;
    Ok(labels[span]
        .iter()
        .map(|&y| if y == action.class { 1.0 } else { -1.0 })
        .sum())
}

/// Episode-level mean reward in `[-1, 1]`.
pub fn episode_mean_reward(labels: &[usize], conjectured: &[usize]) -> Result<f64> {
    if labels.len() != conjectured.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            actual: conjectured.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("label array"));
    }
    let correct = labels.iter().zip(conjectured).filter(|(a, b)| a == b).count() as f64;
    let total = labels.len() as f64;
    Ok((2.0 * correct - total) / total)
}

pub fn step(state: &EpisodeState, action: ActionSpec, len: usize) -> Result<EpisodeState> {
    if state.done || state.position >= len {
        return Err(Error::EpisodeDone);
    }
    if action.step == 0 {
        return Err(Error::InvalidStep(0));
    }
    let position = state.position + action.step.min(len - state.position);
    Ok(EpisodeState {
        position,
        prev_class: Some(action.class),
        done: position >= len,
    })
}

/// Replays a fixed action list through the environment, recording the step
/// rewards. Actions past the end of the episode are ignored.
pub fn rollout(labels: &[usize], actions: &[ActionSpec], alpha: f64) -> Result<Trajectory> {
    let len = labels.len();
    let mut state = EpisodeState::start(len);
    let mut trajectory = Trajectory::default();
    for &action in actions {
        if state.done {
            break;
        }
        let reward = policy_reward(labels, state.position, action, alpha)?;
        let next = step(&state, action, len)?;
        trajectory.transitions.push(Transition {
            state,
            action,
            reward,
        });
        trajectory
            .predicted
            .extend(std::iter::repeat_n(action.class, next.position - state.position));
        state = next;
    }
    if !state.done {
        return Err(Error::ActionsTooShort {
            covered: state.position,
            len,
        });
    }
    Ok(trajectory)
}
