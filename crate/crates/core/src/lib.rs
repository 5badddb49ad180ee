//! Federated, privacy-preserving generation of human mobility trajectories.
//!
//! Clients keep their trajectories on-device and train personal
//! discriminators; the server trains one global policy with PPO against a
//! Laplace-perturbed, variance-compensated aggregate of the client scores.
//! Everything in this crate is pure computation over `alloc`; file formats
//! and the command line live in the `fedtraj` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod aggregation;
pub mod attacks;
pub mod discriminator;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod federated;
pub mod grid;
pub mod math;
pub mod neuro;
pub mod policy;
pub mod seed;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
pub use grid::{LocationGrid, LocationId};
pub use trajectory::{Action, ClientDataset, Point, State, Trajectory, UserId};
