//! Central finite-difference checks for both networks on random tiny
//! configurations.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segsearch::policy::{PolicyModel, PolicySample};
use segsearch::value::RecurrentValueModel;

const H: f64 = 1e-5;
const FLOOR: f64 = 1e-6;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn uniform(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    rng.random_range(-scale..scale)
}

/// Worst relative error over every parameter of a random policy
/// configuration with `F = 3`, `C = 2` and two hidden units per layer, or
/// sizes drawn from `seed` when `vary` is set.
pub fn policy_check(seed: u64, vary: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (f, c, hidden) = if vary {
        (
            rng.random_range(1..=3),
            rng.random_range(2..=3),
            [rng.random_range(2..=4), rng.random_range(2..=4)],
        )
    } else {
        (3, 2, [2, 2])
    };
    let input = 3 * f + 2 * c;
    let actions = 2 * c;
    let mut model = PolicyModel::new(input, hidden, actions, seed);
    for w in model.params.iter_mut() {
        *w = uniform(&mut rng, 1.0);
    }
    let batch: Vec<PolicySample> = (0..rng.random_range(2..=6))
        .map(|_| {
            let observation = Array1::from_shape_fn(input, |_| uniform(&mut rng, 1.0));
            let probs = model.forward(observation.view()).expect("valid input");
            let action = rng.random_range(0..actions);
            PolicySample {
                action,
                // Ratios stay well inside the clip range, where the
                // surrogate is smooth.
                old_log_prob: probs[action].ln() + uniform(&mut rng, 0.05),
                advantage: uniform(&mut rng, 2.0),
                observation,
            }
        })
        .collect();
    let (_, grad) = model.surrogate_loss_and_grad(&batch, 0.2);
    let mut worst: f64 = 0.0;
    for i in 0..model.params.len() {
        let mut plus = model.clone();
        plus.params[i] += H;
        let mut minus = model.clone();
        minus.params[i] -= H;
        let numeric = (plus.surrogate_loss_and_grad(&batch, 0.2).0
            - minus.surrogate_loss_and_grad(&batch, 0.2).0)
            / (2.0 * H);
        worst = worst.max(relative_error(grad[i], numeric));
    }
    worst
}

/// Worst relative error of the BPTT gradient for a random value model with
/// 4 recurrent units, `F = 2`, `C = 2`, `T = 6`, or drawn sizes with `vary`.
pub fn value_check(seed: u64, vary: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (f, c, hidden, fc, t) = if vary {
        (
            rng.random_range(1..=3),
            rng.random_range(2..=3),
            rng.random_range(2..=5),
            rng.random_range(2..=4),
            rng.random_range(2..=8),
        )
    } else {
        (2, 2, 4, 4, 6)
    };
    let mut model = RecurrentValueModel::new(f, c, hidden, fc, seed);
    for w in model.params.iter_mut() {
        *w = uniform(&mut rng, 0.8);
    }
    let obs = Array2::from_shape_fn((t, f + c), |_| uniform(&mut rng, 2.0));
    let target = uniform(&mut rng, 1.0);
    let (_, grad) = model.window_loss_and_grad(obs.view(), target);
    let mut worst: f64 = 0.0;
    for i in 0..model.params.len() {
        let mut plus = model.clone();
        plus.params[i] += H;
        let mut minus = model.clone();
        minus.params[i] -= H;
        let numeric = (plus.window_loss_and_grad(obs.view(), target).0
            - minus.window_loss_and_grad(obs.view(), target).0)
            / (2.0 * H);
        worst = worst.max(relative_error(grad[i], numeric));
    }
    worst
}
