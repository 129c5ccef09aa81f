//! Uniqueness and re-identification analysis of GPS mobility traces.
//!
//! Modules build on one another: [`geo`] primitives, [`trace`] datasets and
//! parsers, [`coarsen`] resolution reduction, [`features`] movement
//! signatures, [`uniqueness`] sampled-subset uniqueness, [`reident`]
//! unseen-point classification, [`separability`] geometric separability and
//! [`synth`] synthetic ground truth.

pub mod coarsen;
pub mod error;
pub mod features;
pub mod geo;
pub mod grid;
pub mod reident;
pub mod seed;
pub mod separability;
pub mod stats;
pub mod synth;
pub mod trace;
pub mod uniqueness;

pub use error::{Error, Result};
