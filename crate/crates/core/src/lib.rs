// SPDX-License-Identifier: MIT OR Apache-2.0

//! CPU transformer inference engine whose forward pass follows an explicit
//! [`plans::ExecutionPlan`]. Plans express layer interventions on a frozen
//! model (skipping, repeating, reordering, or averaging middle layers) and
//! the crate measures their effect on task scores, latency and hidden-state
//! geometry.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod eval;
mod io_util;
pub mod model;
pub mod numerics;
pub mod plans;
pub mod store;
pub mod svg;

pub use error::{Error, Result};
pub use io_util::write_atomic;
