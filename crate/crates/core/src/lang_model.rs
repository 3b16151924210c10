//! Segment-level bigram model over gesture classes with add-one smoothing.
//!
//! Self-transitions never occur at the segment level, so the diagonal only
//! ever holds smoothing mass.

use ndarray::{Array1, Array2};

use crate::domain::segments_from_labels;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    /// `P(next | previous)`, rows indexed by the previous class.
    pub transitions: Array2<f64>,
    /// Distribution of the first segment's class.
    pub start: Array1<f64>,
}

impl TransitionTable {
    pub fn fit(label_sequences: &[Vec<usize>], num_classes: usize) -> Result<Self> {
        if label_sequences.is_empty() {
            return Err(Error::EmptyInput("label corpus"));
        }
        if num_classes == 0 {
            return Err(Error::InvalidConfig("num_classes must be positive".into()));
        }
        let mut counts = Array2::<f64>::zeros((num_classes, num_classes));
        let mut starts = Array1::<f64>::zeros(num_classes);
        for labels in label_sequences {
            if let Some((frame, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
                return Err(Error::LabelOutOfRange {
                    label,
                    frame,
                    num_classes,
                });
            }
            let segments = segments_from_labels(labels)?;
            starts[segments[0].class] += 1.0;
            for pair in segments.windows(2) {
                counts[[pair[0].class, pair[1].class]] += 1.0;
            }
        }

        let c = num_classes as f64;
        let mut transitions = counts;
        for mut row in transitions.rows_mut() {
            let total = row.sum();
            row.mapv_inplace(|n| (n + 1.0) / (total + c));
        }
        let total = starts.sum();
        let start = starts.mapv(|n| (n + 1.0) / (total + c));
        Ok(Self { transitions, start })
    }

    /// Uniform table; what `fit` yields for a corpus carrying no transitions.
    pub fn uniform(num_classes: usize) -> Self {
        let p = 1.0 / num_classes as f64;
        Self {
            transitions: Array2::from_elem((num_classes, num_classes), p),
            start: Array1::from_elem(num_classes, p),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.start.len()
    }

    /// Next-class distribution given the previously executed class, or the
    /// start distribution at the beginning of an episode.
    pub fn transition_probs(&self, prev_class: Option<usize>) -> Result<Array1<f64>> {
        match prev_class {
            None => Ok(self.start.clone()),
            Some(c) if c < self.num_classes() => Ok(self.transitions.row(c).to_owned()),
            Some(c) => Err(Error::ClassOutOfRange {
                class: c,
                num_classes: self.num_classes(),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes();
        if self.transitions.dim() != (c, c) {
            return Err(Error::ShapeMismatch {
                name: "transitions".into(),
                detail: format!("expected {c}x{c}, got {:?}", self.transitions.dim()),
            });
        }
        let rows = self.transitions.rows().into_iter().chain(std::iter::once(self.start.view()));
        for row in rows {
            if row.iter().any(|&p| !(p.is_finite() && p > 0.0)) || (row.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig("transition rows must be positive distributions".into()));
            }
        }
        Ok(())
    }
}
