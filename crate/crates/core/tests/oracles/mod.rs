//! Independent reference implementations used by the integration tests and
//! the acceptance suite. Each check returns a summary or a description of
//! the first disagreement instead of panicking, so callers can report it.

#![allow(dead_code)]

pub mod gradients;
pub mod metrics;
pub mod search;
