//! File formats, checkpoints and command implementations behind the
//! `relgraph` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod io;
