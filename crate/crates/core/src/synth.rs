//! Seeded synthetic corpora: labels from a segment-level Markov chain with
//! geometric segment lengths, features from class centroids plus isotropic
//! Gaussian noise.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{derive_seed, LabeledSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionSpec {
    /// Every other class equally likely.
    Uniform,
    /// Row-stochastic C x C matrix with a zero diagonal.
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Inclusive range of sequence lengths.
    pub min_len: usize,
    pub max_len: usize,
    pub transitions: TransitionSpec,
    /// Mean segment length in frames; lengths are 1 + Geometric(1 / mean).
    pub mean_segment_len: f64,
    /// Explicit C x F centroids. When absent, scaled unit directions are
    /// used if F >= C and seeded random unit vectors otherwise.
    pub centroids: Option<Vec<Vec<f64>>>,
    pub centroid_scale: f64,
    pub noise: f64,
    pub num_sequences: usize,
    /// Groups are assigned round-robin.
    pub num_groups: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            feature_dim: 10,
            min_len: 600,
            max_len: 1000,
            transitions: TransitionSpec::Uniform,
            mean_segment_len: 40.0,
            centroids: None,
            centroid_scale: 1.0,
            noise: 0.1,
            num_sequences: 39,
            num_groups: 8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.feature_dim < 1 {
            return bad("feature_dim must be at least 1".into());
        }
        if self.min_len < 1 || self.min_len > self.max_len {
            return bad(format!("invalid length range {}..={}", self.min_len, self.max_len));
        }
        if self.mean_segment_len < 1.0 || !self.mean_segment_len.is_finite() {
            return bad(format!("mean_segment_len must be >= 1, got {}", self.mean_segment_len));
        }
        if self.noise < 0.0 || !self.noise.is_finite() {
            return bad(format!("noise must be finite and >= 0, got {}", self.noise));
        }
        if !self.centroid_scale.is_finite() || self.centroid_scale <= 0.0 {
            return bad(format!("centroid_scale must be positive, got {}", self.centroid_scale));
        }
        if self.num_groups < 1 {
            return bad("num_groups must be at least 1".into());
        }
        if let TransitionSpec::Matrix(rows) = &self.transitions {
            if rows.len() != self.num_classes || rows.iter().any(|r| r.len() != self.num_classes) {
                return bad("transition matrix must be C x C".into());
            }
            for (i, row) in rows.iter().enumerate() {
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return bad(format!("transition row {i} has invalid entries"));
                }
                if row[i] != 0.0 {
                    return bad(format!("transition row {i} must have a zero diagonal"));
                }
                if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return bad(format!("transition row {i} does not sum to 1"));
                }
            }
        }
        if let Some(c) = &self.centroids {
            if c.len() != self.num_classes || c.iter().any(|r| r.len() != self.feature_dim) {
                return bad("centroids must be C x F".into());
            }
            if c.iter().flatten().any(|v| !v.is_finite()) {
                return bad("centroids must be finite".into());
            }
        }
        Ok(())
    }

    pub fn transition_matrix(&self) -> Array2<f64> {
        let c = self.num_classes;
        match &self.transitions {
            TransitionSpec::Uniform => Array2::from_shape_fn((c, c), |(i, j)| {
                if i == j {
                    0.0
                } else {
                    1.0 / (c - 1) as f64
                }
            }),
            TransitionSpec::Matrix(rows) => Array2::from_shape_fn((c, c), |(i, j)| rows[i][j]),
        }
    }

    pub fn centroid_matrix(&self) -> Array2<f64> {
        let (c, f) = (self.num_classes, self.feature_dim);
        if let Some(rows) = &self.centroids {
            return Array2::from_shape_fn((c, f), |(i, j)| rows[i][j]);
        }
        if f >= c {
            return Array2::from_shape_fn((c, f), |(i, j)| {
                if i == j {
                    self.centroid_scale
                } else {
                    0.0
                }
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[0xce]));
        let mut m: Array2<f64> = Array2::from_shape_fn((c, f), |_| StandardNormal.sample(&mut rng));
        for mut row in m.rows_mut() {
            let norm = row.dot(&row).sqrt().max(f64::MIN_POSITIVE);
            row.mapv_inplace(|v: f64| v / norm * self.centroid_scale);
        }
        m
    }
}

fn sample_row(row: ArrayView1<f64>, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = j;
            if u < acc {
                return j;
            }
        }
    }
    last
}

/// Segment-level class sequence and lengths for one sequence of length
/// `len`; the last segment is clipped.
fn sample_labels(
    len: usize,
    transitions: &Array2<f64>,
    lengths: &Geometric,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let c = transitions.nrows();
    let mut labels = Vec::with_capacity(len);
    let mut class = rng.random_range(0..c);
    while labels.len() < len {
        let seg = (1 + lengths.sample(rng) as usize).min(len - labels.len());
        labels.extend(std::iter::repeat_n(class, seg));
        class = sample_row(transitions.row(class), rng);
    }
    labels
}

pub fn generate_corpus(cfg: &SynthConfig) -> Result<Vec<LabeledSequence>> {
    cfg.validate()?;
    let transitions = cfg.transition_matrix();
    let centroids = cfg.centroid_matrix();
    let lengths = Geometric::new(1.0 / cfg.mean_segment_len)
        .map_err(|e| Error::InvalidConfig(format!("segment length distribution: {e}")))?;
    let noise = Normal::new(0.0, cfg.noise)
        .map_err(|e| Error::InvalidConfig(format!("noise distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.num_sequences)
        .map(|i| {
            let len = rng.random_range(cfg.min_len..=cfg.max_len);
            let labels = sample_labels(len, &transitions, &lengths, &mut rng);
            let features = Array2::from_shape_fn((len, cfg.feature_dim), |(t, j)| {
                (centroids[[labels[t], j]] + noise.sample(&mut rng)) as f32
            });
            LabeledSequence::new(features, Some(labels), format!("g{}", i % cfg.num_groups))
        })
        .collect()
}

/// Labels each frame with the class of the closest centroid (lowest index on
/// ties).
pub fn nearest_centroid_labels(seq: &LabeledSequence, centroids: &Array2<f64>) -> Vec<usize> {
    (0..seq.len())
        .map(|t| {
            let x: Array1<f64> = seq.frame(t).mapv(f64::from);
            let mut best = (f64::INFINITY, 0);
            for (c, row) in centroids.rows().into_iter().enumerate() {
                let d: f64 = row.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, c);
                }
            }
            best.1
        })
        .collect()
}

pub const TRAIN_SEQUENCES: usize = 30;
pub const TEST_SEQUENCES: usize = 9;

#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub config: SynthConfig,
    pub train: Vec<LabeledSequence>,
    pub test: Vec<LabeledSequence>,
}

pub const PRESET_NAMES: [&str; 2] = ["easy", "hard"];

pub fn preset_config(name: &str) -> Option<SynthConfig> {
    let base = SynthConfig {
        num_sequences: TRAIN_SEQUENCES + TEST_SEQUENCES,
        ..SynthConfig::default()
    };
    match name {
        "easy" => Some(SynthConfig {
            mean_segment_len: 160.0,
            min_len: 1200,
            max_len: 1800,
            noise: 0.0,
            seed: 0x5e9_ea5e,
            ..base
        }),
        "hard" => Some(SynthConfig {
            mean_segment_len: 40.0,
            min_len: 600,
            max_len: 1000,
            noise: 0.5,
            seed: 0x5e9_4a2d,
            ..base
        }),
        _ => None,
    }
}

/// Generates a named preset and splits it into the first 30 sequences for
/// training and the last 9 for testing.
pub fn preset(name: &str) -> Result<Preset> {
    let (name, config) = PRESET_NAMES
        .iter()
        .find(|n| **n == name)
        .and_then(|n| preset_config(n).map(|c| (*n, c)))
        .ok_or_else(|| Error::InvalidConfig(format!("unknown preset {name:?}")))?;
    let mut train = generate_corpus(&config)?;
    let test = train.split_off(TRAIN_SEQUENCES);
    Ok(Preset {
        name,
        config,
        train,
        test,
    })
}

pub fn standard_corpora() -> Result<(Preset, Preset)> {
    Ok((preset("easy")?, preset("hard")?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::segments_from_labels;
    use proptest::prelude::*;

    fn small(noise: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            min_len: 200,
            max_len: 300,
            num_sequences: 6,
            noise,
            seed,
            ..SynthConfig::default()
        }
    }

    fn nearest_centroid_accuracy(cfg: &SynthConfig) -> f64 {
        let corpus = generate_corpus(cfg).unwrap();
        let centroids = cfg.centroid_matrix();
        let (mut hit, mut total) = (0, 0);
        for seq in &corpus {
            let pred = nearest_centroid_labels(seq, &centroids);
            hit += pred.iter().zip(seq.labels().unwrap()).filter(|(a, b)| a == b).count();
            total += seq.len();
        }
        hit as f64 / total as f64
    }

    #[test]
    fn noiseless_features_are_separable() {
        assert_eq!(nearest_centroid_accuracy(&small(0.0, 1)), 1.0);
        let cfg = SynthConfig {
            feature_dim: 4,
            ..small(0.0, 2)
        };
        assert_eq!(nearest_centroid_accuracy(&cfg), 1.0);
    }

    #[test]
    fn heavy_noise_defeats_nearest_centroid() {
        // Unit directions are sqrt(2) apart; 4x that separation as noise.
        let cfg = small(4.0 * 2f64.sqrt(), 3);
        let acc = nearest_centroid_accuracy(&cfg);
        assert!(acc < 0.6, "accuracy {acc}");
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate_corpus(&small(0.3, 9)).unwrap();
        let b = generate_corpus(&small(0.3, 9)).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&small(0.3, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        for cfg in [
            SynthConfig { num_classes: 1, ..SynthConfig::default() },
            SynthConfig { feature_dim: 0, ..SynthConfig::default() },
            SynthConfig { noise: -1.0, ..SynthConfig::default() },
            SynthConfig { min_len: 10, max_len: 5, ..SynthConfig::default() },
            SynthConfig {
                num_classes: 2,
                transitions: TransitionSpec::Matrix(vec![vec![0.5, 0.5], vec![1.0, 0.0]]),
                ..SynthConfig::default()
            },
        ] {
            assert!(matches!(generate_corpus(&cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn transition_frequencies_match_configured_matrix() {
        let rows = vec![
            vec![0.0, 0.7, 0.3],
            vec![0.2, 0.0, 0.8],
            vec![0.5, 0.5, 0.0],
        ];
        let cfg = SynthConfig {
            num_classes: 3,
            feature_dim: 3,
            min_len: 4000,
            max_len: 4000,
            mean_segment_len: 4.0,
            transitions: TransitionSpec::Matrix(rows.clone()),
            num_sequences: 10,
            ..SynthConfig::default()
        };
        let mut counts = [[0usize; 3]; 3];
        let mut segments = 0;
        for seq in generate_corpus(&cfg).unwrap() {
            let segs = segments_from_labels(seq.labels().unwrap()).unwrap();
            segments += segs.len();
            for w in segs.windows(2) {
                counts[w[0].class][w[1].class] += 1;
            }
        }
        assert!(segments >= 10_000);
        // Chi-square per row with one degree of freedom; 10.83 is the 0.1%
        // critical value.
        for (i, row) in rows.iter().enumerate() {
            let n: usize = counts[i].iter().sum();
            let chi: f64 = (0..3)
                .filter(|&j| row[j] > 0.0)
                .map(|j| {
                    let e = row[j] * n as f64;
                    (counts[i][j] as f64 - e).powi(2) / e
                })
                .sum();
            assert!(chi < 10.83, "row {i}: chi-square {chi}");
            assert_eq!(counts[i][i], 0);
        }
    }

    #[test]
    fn mean_segment_length_is_respected() {
        let cfg = SynthConfig {
            min_len: 20_000,
            max_len: 20_000,
            num_sequences: 2,
            mean_segment_len: 25.0,
            ..SynthConfig::default()
        };
        let mut lens = Vec::new();
        for seq in generate_corpus(&cfg).unwrap() {
            let segs = segments_from_labels(seq.labels().unwrap()).unwrap();
            // The clipped final segment is biased short.
            lens.extend(segs[..segs.len() - 1].iter().map(|s| s.end - s.start));
        }
        let mean = lens.iter().sum::<usize>() as f64 / lens.len() as f64;
        assert!((mean - 25.0).abs() < 1.5, "mean {mean}");
    }

    #[test]
    fn presets_have_the_standard_split() {
        let (easy, hard) = standard_corpora().unwrap();
        for p in [&easy, &hard] {
            assert_eq!(p.train.len(), 30);
            assert_eq!(p.test.len(), 9);
            let groups: std::collections::BTreeSet<_> =
                p.train.iter().map(|s| s.group_id.as_str()).collect();
            assert_eq!(groups.len(), p.config.num_groups);
        }
        assert!(preset("medium").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn segments_are_well_formed(seed in any::<u64>(), c in 2usize..6, mean in 1.0f64..20.0) {
            let cfg = SynthConfig {
                num_classes: c,
                feature_dim: 3,
                min_len: 1,
                max_len: 200,
                mean_segment_len: mean,
                num_sequences: 3,
                seed,
                ..SynthConfig::default()
            };
            for seq in generate_corpus(&cfg).unwrap() {
                prop_assert!(!seq.is_empty() && seq.len() <= 200);
                let segs = segments_from_labels(seq.labels().unwrap()).unwrap();
                for s in &segs {
                    prop_assert!(s.end > s.start && s.class < c);
                }
                for w in segs.windows(2) {
                    prop_assert_ne!(w[0].class, w[1].class);
                }
            }
        }
    }
}
