//! Small numerical building blocks shared by the policy and value models:
//! a flat parameter layout, the adaptive-moment optimizer and a couple of
//! activation helpers.
//!
//! Every model keeps all of its weights in one contiguous vector so that
//! the optimizer, finite-difference checks and checkpoints can treat
//! parameters uniformly. Named, shaped views are carved out by
//! [`ParamLayout`].

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
}

impl ParamLayout {
    pub fn push(&mut self, name: &str, shape: &[usize]) -> usize {
        let offset = self.total();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset,
        });
        self.entries.len() - 1
    }

    pub fn total(&self) -> usize {
        self.entries.last().map_or(0, |e| e.offset + e.len())
    }

    pub fn entry(&self, index: usize) -> &ParamEntry {
        &self.entries[index]
    }

    pub fn view1<'a>(&self, params: &'a [f64], index: usize) -> ArrayView1<'a, f64> {
        let e = &self.entries[index];
        ArrayView1::from(&params[e.range()])
    }

    pub fn view2<'a>(&self, params: &'a [f64], index: usize) -> ArrayView2<'a, f64> {
        let e = &self.entries[index];
        ArrayView2::from_shape((e.shape[0], e.shape[1]), &params[e.range()])
            .expect("layout shape matches slice")
    }

    pub fn slice_mut<'a>(&self, params: &'a mut [f64], index: usize) -> &'a mut [f64] {
        &mut params[self.entries[index].range()]
    }

    /// Checks that a stored set of named arrays has exactly this layout.
    pub fn check_against(&self, arrays: &[(String, Vec<usize>, usize)]) -> Result<()> {
        if arrays.len() != self.entries.len() {
            return Err(Error::ShapeMismatch {
                name: "parameters".into(),
                detail: format!("expected {} arrays, got {}", self.entries.len(), arrays.len()),
            });
        }
        for (entry, (name, shape, stored)) in self.entries.iter().zip(arrays) {
            if &entry.name != name || &entry.shape != shape {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    detail: format!(
                        "expected {} {:?}, got {} {:?}",
                        entry.name, entry.shape, name, shape
                    ),
                });
            }
            let declared: usize = shape.iter().product();
            if declared != *stored {
                return Err(Error::ShapeMismatch {
                    name: name.clone(),
                    detail: format!("shape {shape:?} declares {declared} values, {stored} stored"),
                });
            }
        }
        Ok(())
    }
}

/// Adaptive-moment gradient descent over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Array1<f64>,
    second_moment: Array1<f64>,
}

impl Adam {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: Array1::zeros(num_params),
            second_moment: Array1::zeros(num_params),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one descent step: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut Array1<f64>, grad: &Array1<f64>) {
        assert_eq!(params.len(), grad.len(), "gradient length");
        self.step += 1;
        let bias1 = 1.0 - self.beta1.powi(self.step as i32);
        let bias2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        ndarray::Zip::from(params)
            .and(grad)
            .and(&mut self.first_moment)
            .and(&mut self.second_moment)
            .for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softmax.
pub fn softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let total = exp.sum();
    exp / total
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Glorot-uniform initialization bound for a `fan_out x fan_in` matrix.
pub(crate) fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut params = array![3.0, -2.0];
        let mut adam = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let grad = params.mapv(|p| 2.0 * p);
            adam.step(&mut params, &grad);
        }
        assert!(params.iter().all(|p| p.abs() < 1e-3), "{params:?}");
        assert_eq!(adam.steps_taken(), 2000);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut params = array![1.0];
        let mut adam = Adam::new(1, 0.01);
        adam.step(&mut params, &array![0.3]);
        assert!((params[0] - 0.99).abs() < 1e-9);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let logits = array![0.3, -1.2, 2.0];
        let a = softmax(logits.view());
        let b = softmax((&logits + 100.0).view());
        assert!((a.sum() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(array![0.2, 0.5, 0.5].view()), 1);
        assert_eq!(argmax(Array1::from_elem(4, 0.25).view()), 0);
    }

    #[test]
    fn layout_views() {
        let mut layout = ParamLayout::default();
        let w = layout.push("w", &[2, 3]);
        let b = layout.push("b", &[2]);
        assert_eq!(layout.total(), 8);
        let params: Vec<f64> = (0..8).map(f64::from).collect();
        assert_eq!(layout.view2(&params, w)[[1, 0]], 3.0);
        assert_eq!(layout.view1(&params, b)[1], 7.0);
        assert!(layout
            .check_against(&[("w".into(), vec![2, 3], 6), ("b".into(), vec![3], 3)])
            .is_err());
    }
}
