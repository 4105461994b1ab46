//! Placing-via-picking: self-supervised synthesis of placing demonstrations.
//!
//! Objects start at their goal poses. The pipeline grasps them compliantly,
//! checks the grasp with a tactile patch model, records the retrieval
//! trajectory, and time-reverses it into a placing demonstration. The
//! resulting episodes train behavioural-cloning policies with Gaussian or
//! Gaussian-mixture action heads.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration
//! files and the experiment driver live in the `pvp` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod collect;
pub mod error;
pub mod grasp;
pub mod math;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod se3;
pub mod sim;

pub use error::{Error, Result};
