//! Incremental code coverage.
//!
//! Given the dependency graph and coverage data of the previous version, the
//! pipeline selects the tests whose execution is needed to bring coverage up
//! to date, runs them on a deterministic mini-language interpreter, and
//! merges the fresh deltas into the stored data. The merged coverage equals
//! what running every test from scratch would produce.
//!
//! Stages, in pipeline order:
//!
//! - [`changedet`]: normalized unit checksums and changesets
//! - [`selection`]: regression test selection widened to the coverage closure
//! - [`miniproj`]: project parser and instrumented interpreter
//! - [`merge`]: folding deltas into the dependency graph and coverage data
//! - [`report`]: line, branch and function coverage
//! - [`store`]: the persisted cross-version state
//! - [`harness`]: orchestration, oracle checks, and synthetic histories

pub mod changedet;
pub mod error;
pub mod harness;
pub mod merge;
pub mod miniproj;
pub mod model;
pub mod par;
pub mod report;
pub mod selection;
pub mod store;

pub use error::{Error, Result};
