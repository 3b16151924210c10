//! Joint temporal segmentation and classification of feature sequences.
//!
//! An agent walks over a sequence of per-frame feature vectors and, at each
//! decision, emits a composite action `(step, class)`: advance by a small or
//! large step and label every frame it stepped over with `class`. A
//! feedforward policy model proposes actions directly. When its maximum
//! action probability falls below a confidence threshold, a single-player
//! tree search refines the decision by combining the policy's priors with a
//! recurrent value model that scores conjectured labelings.
//!
//! Module map:
//!
//! - [`domain`]: configuration, actions, segments and labelled sequences
//! - [`env`]: the deterministic stepping environment and its two rewards
//! - [`lang_model`]: segment-level class transition model
//! - [`policy`]: observation assembly, policy network and its trainer
//! - [`value`]: recurrent value network, dataset builder and trainer
//! - [`search`]: prior-guided max-backup tree search
//! - [`gateway`]: the episode controller that decides when to search
//! - [`metrics`]: frame accuracy, segmental edit score, F1@k
//! - [`synth`]: seeded synthetic corpora
//! - [`io`]: feature files, checkpoints and reports

pub mod domain;
pub mod env;
pub mod error;
pub mod gateway;
pub mod io;
pub mod lang_model;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod search;
pub mod synth;
pub mod value;

pub use domain::{ActionSpace, ActionSpec, EngineConfig, LabeledSequence, Segment};
pub use error::{Error, Result};
