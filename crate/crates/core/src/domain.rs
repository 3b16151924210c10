//! Shared domain types: engine configuration, the composite action space,
//! segments and labelled feature sequences.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Engine-wide hyperparameters. Defaults reproduce the reference settings:
/// steps (4, 21), step-reward weight 0.1, search threshold 0.98,
/// exploration constant 1.5 and 10 simulations per search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub num_classes: usize,
    pub small_step: usize,
    pub large_step: usize,
    pub alpha: f64,
    pub confidence_threshold: f64,
    pub c_puct: f64,
    pub num_simulations: usize,
    pub feature_dim: usize,
    pub rng_seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            small_step: 4,
            large_step: 21,
            alpha: 0.1,
            confidence_threshold: 0.98,
            c_puct: 1.5,
            num_simulations: 10,
            feature_dim: 10,
            rng_seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn with_dims(num_classes: usize, feature_dim: usize) -> Self {
        Self {
            num_classes,
            feature_dim,
            ..Self::default()
        }
    }

    /// Checks the structural invariants. The confidence threshold is allowed
    /// above 1 so that callers can force a search at every decision.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.num_classes > u16::MAX as usize + 1 {
            return Err(Error::InvalidConfig("num_classes exceeds 65536".into()));
        }
        if self.small_step == 0 || self.small_step >= self.large_step {
            return Err(Error::InvalidConfig(format!(
                "steps must satisfy 0 < small ({}) < large ({})",
                self.small_step, self.large_step
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidConfig("feature_dim must be positive".into()));
        }
        if self.num_simulations == 0 {
            return Err(Error::InvalidConfig("num_simulations must be positive".into()));
        }
        if !self.alpha.is_finite() {
            return Err(Error::InvalidConfig("alpha must be finite".into()));
        }
        if !(self.c_puct.is_finite() && self.c_puct >= 0.0) {
            return Err(Error::InvalidConfig("c_puct must be a nonnegative real".into()));
        }
        if !(self.confidence_threshold.is_finite() && self.confidence_threshold >= 0.0) {
            return Err(Error::InvalidConfig(
                "confidence_threshold must be a nonnegative real".into(),
            ));
        }
        Ok(())
    }

    pub fn action_space(&self) -> ActionSpace {
        ActionSpace {
            num_classes: self.num_classes,
            small_step: self.small_step,
            large_step: self.large_step,
        }
    }

    /// Number of composite actions, `2 * num_classes`.
    pub fn num_actions(&self) -> usize {
        2 * self.num_classes
    }

    /// Short hex digest of the fields that shape trained models (dimensions,
    /// step lengths and reward weight), used to tie checkpoints to the
    /// configuration that produced them. Inference-only knobs such as the
    /// threshold or search budget are excluded.
    pub fn config_hash(&self) -> String {
        let key = (
            self.num_classes,
            self.feature_dim,
            self.small_step,
            self.large_step,
            self.alpha,
        );
        let json = serde_json::to_vec(&key).expect("config serializes");
        let digest = Sha256::digest(&json);
        hex::encode(&digest[..8])
    }
}

/// A composite action: advance `step` frames and label them `class`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionSpec {
    pub step: usize,
    pub class: usize,
}

impl ActionSpec {
    pub fn new(step: usize, class: usize) -> Self {
        Self { step, class }
    }
}

/// The canonical flat action ordering: indices `[0, C)` are small steps
/// with class `index`, indices `[C, 2C)` are large steps with class
/// `index - C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSpace {
    pub num_classes: usize,
    pub small_step: usize,
    pub large_step: usize,
}

impl ActionSpace {
    pub fn len(&self) -> usize {
        2 * self.num_classes
    }

    pub fn is_empty(&self) -> bool {
        self.num_classes == 0
    }

    pub fn action(&self, index: usize) -> Result<ActionSpec> {
        let c = self.num_classes;
        if index < c {
            Ok(ActionSpec::new(self.small_step, index))
        } else if index < 2 * c {
            Ok(ActionSpec::new(self.large_step, index - c))
        } else {
            Err(Error::ClassOutOfRange {
                class: index,
                num_classes: 2 * c,
            })
        }
    }

    pub fn index(&self, action: &ActionSpec) -> Result<usize> {
        if action.class >= self.num_classes {
            return Err(Error::ClassOutOfRange {
                class: action.class,
                num_classes: self.num_classes,
            });
        }
        if action.step == self.small_step {
            Ok(action.class)
        } else if action.step == self.large_step {
            Ok(self.num_classes + action.class)
        } else {
            Err(Error::InvalidStep(action.step))
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = ActionSpec> + '_ {
        (0..self.len()).map(move |i| self.action(i).expect("index in range"))
    }
}

/// A maximal run of frames `[start, end)` sharing one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub class: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Run-length encodes a label array.
pub fn segments_from_labels(labels: &[usize]) -> Result<Vec<Segment>> {
    let first = *labels.first().ok_or(Error::EmptyInput("label array"))?;
    let mut segments = Vec::new();
    let mut current = Segment {
        start: 0,
        end: 1,
        class: first,
    };
    for (t, &class) in labels.iter().enumerate().skip(1) {
        if class == current.class {
            current.end = t + 1;
        } else {
            segments.push(current);
            current = Segment {
                start: t,
                end: t + 1,
                class,
            };
        }
    }
    segments.push(current);
    Ok(segments)
}

pub fn labels_from_segments(segments: &[Segment]) -> Vec<usize> {
    let mut labels = Vec::with_capacity(segments.last().map_or(0, |s| s.end));
    for segment in segments {
        labels.extend(std::iter::repeat_n(segment.class, segment.len()));
    }
    labels
}

/// Expands executed actions into per-frame labels; the final action is
/// clipped at `len`.
pub fn labels_from_actions(actions: &[ActionSpec], len: usize) -> Result<Vec<usize>> {
    let mut labels = Vec::with_capacity(len);
    for action in actions {
        if labels.len() >= len {
            break;
        }
        if action.step == 0 {
            return Err(Error::InvalidStep(0));
        }
        let take = action.step.min(len - labels.len());
        labels.extend(std::iter::repeat_n(action.class, take));
    }
    if labels.len() < len {
        return Err(Error::ActionsTooShort {
            covered: labels.len(),
            len,
        });
    }
    Ok(labels)
}

/// Per-frame features (`T x F`, stored as `f32` like the on-disk format)
/// with optional ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub features: Array2<f32>,
    pub labels: Option<Vec<usize>>,
    pub group_id: String,
}

impl LabeledSequence {
    pub fn new(
        features: Array2<f32>,
        labels: Option<Vec<usize>>,
        group_id: impl Into<String>,
    ) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::EmptyInput("feature matrix"));
        }
        if features.ncols() == 0 {
            return Err(Error::DimensionMismatch {
                what: "feature dimension",
                expected: 1,
                actual: 0,
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix"));
        }
        if let Some(labels) = &labels {
            if labels.len() != features.nrows() {
                return Err(Error::LengthMismatch {
                    expected: features.nrows(),
                    actual: labels.len(),
                });
            }
        }
        Ok(Self {
            features,
            labels,
            group_id: group_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn frame(&self, t: usize) -> ArrayView1<'_, f32> {
        self.features.row(t)
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels.as_deref().ok_or(Error::MissingLabels)
    }

    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        if let Some(labels) = &self.labels {
            if let Some((frame, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
                return Err(Error::LabelOutOfRange {
                    label,
                    frame,
                    num_classes,
                });
            }
        }
        Ok(())
    }
}

/// Derives an independent 64-bit seed from a base seed and a path of
/// indices (iteration, episode, ...), so that parallel work gets the same
/// random stream regardless of scheduling.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg(start: usize, end: usize, class: usize) -> Segment {
        Segment { start, end, class }
    }

    #[test]
    fn run_length_examples() {
        assert_eq!(
            segments_from_labels(&[0, 0, 1, 1, 1, 0]).unwrap(),
            vec![seg(0, 2, 0), seg(2, 5, 1), seg(5, 6, 0)]
        );
        assert_eq!(segments_from_labels(&[3]).unwrap(), vec![seg(0, 1, 3)]);
        assert_eq!(segments_from_labels(&[2, 2, 2, 2]).unwrap(), vec![seg(0, 4, 2)]);
        assert!(matches!(segments_from_labels(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn actions_to_labels() {
        let a = |k, c| ActionSpec::new(k, c);
        assert_eq!(
            labels_from_actions(&[a(4, 1), a(4, 2)], 8).unwrap(),
            vec![1, 1, 1, 1, 2, 2, 2, 2]
        );
        assert_eq!(labels_from_actions(&[a(21, 0)], 5).unwrap(), vec![0; 5]);
        assert_eq!(labels_from_actions(&[a(4, 1), a(21, 1)], 10).unwrap(), vec![1; 10]);
        assert!(matches!(
            labels_from_actions(&[a(4, 1)], 10),
            Err(Error::ActionsTooShort { covered: 4, len: 10 })
        ));
    }

    #[test]
    fn default_config_matches_reference_settings() {
        let cfg = EngineConfig::default();
        assert_eq!((cfg.small_step, cfg.large_step), (4, 21));
        assert_eq!(cfg.alpha, 0.1);
        assert_eq!(cfg.confidence_threshold, 0.98);
        assert_eq!(cfg.c_puct, 1.5);
        assert_eq!(cfg.num_simulations, 10);
        assert_eq!(cfg.num_actions(), 20);
        cfg.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let cfg = EngineConfig {
            large_step: 4,
            ..EngineConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = EngineConfig {
            num_classes: 1,
            ..EngineConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert_ne!(
            EngineConfig::default().config_hash(),
            EngineConfig::with_dims(3, 2).config_hash()
        );
        let inference_only = EngineConfig {
            confidence_threshold: 0.5,
            num_simulations: 40,
            c_puct: 3.0,
            ..EngineConfig::default()
        };
        assert_eq!(inference_only.config_hash(), EngineConfig::default().config_hash());
    }

    #[test]
    fn action_index_examples() {
        let space = EngineConfig::default().action_space();
        assert_eq!(space.action(3).unwrap(), ActionSpec::new(4, 3));
        assert_eq!(space.action(13).unwrap(), ActionSpec::new(21, 3));
        assert!(space.action(20).is_err());
        assert!(space.index(&ActionSpec::new(5, 0)).is_err());
    }

    #[test]
    fn sequence_validation() {
        let features = Array2::<f32>::zeros((3, 2));
        assert!(LabeledSequence::new(features.clone(), Some(vec![0, 1]), "g").is_err());
        let mut bad = features.clone();
        bad[[1, 1]] = f32::NAN;
        assert!(matches!(
            LabeledSequence::new(bad, None, "g"),
            Err(Error::NonFinite(_))
        ));
        let seq = LabeledSequence::new(features, Some(vec![0, 1, 4]), "g").unwrap();
        assert!(matches!(
            seq.check_classes(3),
            Err(Error::LabelOutOfRange { label: 4, frame: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn segments_round_trip(labels in prop::collection::vec(0usize..4, 1..200)) {
            let segments = segments_from_labels(&labels).unwrap();
            prop_assert_eq!(labels_from_segments(&segments), labels);
            for pair in segments.windows(2) {
                prop_assert_eq!(pair[0].end, pair[1].start);
                prop_assert_ne!(pair[0].class, pair[1].class);
            }
        }

        #[test]
        fn action_index_bijection(classes in 2usize..40) {
            let space = EngineConfig::with_dims(classes, 1).action_space();
            for i in 0..space.len() {
                prop_assert_eq!(space.index(&space.action(i).unwrap()).unwrap(), i);
            }
        }
    }
}
