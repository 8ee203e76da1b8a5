//! Question-conditioned attention over a role-aware object/text scene graph,
//! with an iterative vocabulary-or-copy answer decoder.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, checkpoints and
//! the command-line driver live in the `relgraph` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attention;
pub mod checks;
pub mod config;
pub mod decoder;
pub mod error;
pub mod features;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod qencoder;
pub mod train;
pub mod transformer;
pub mod vocab;

pub use error::{Error, Result};
