//! groundkit turns densely annotated GUI screenshot corpora into grounding
//! training data and verifiable reward signals.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`corpus`]: data model, JSONL storage and validation
//! - [`geometry`]: point/box distances behind rewards and evaluation
//! - [`rewards`]: discrete/continuous/binary rewards, leave-one-out advantages
//!   and the newline-delimited JSON reward server
//! - [`dedup`]: perceptual hashing and label-gated element deduplication
//! - [`instructions`]: instruction synthesis, prompt assembly, mix sampling
//!   and SFT/RL export
//! - [`evaluation`]: prediction parsing and point-in-box accuracy reports
//! - [`stats`]: corpus-level statistics

pub mod corpus;
pub mod dedup;
pub mod evaluation;
pub mod geometry;
pub mod instructions;
pub mod jsonl;
pub mod rewards;
pub mod stats;

pub use corpus::{BoundingBox, Corpus, Screenshot, UiCategory, UiElement};
pub use geometry::{DistanceProfile, Point};
