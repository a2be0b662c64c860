//! Learning reactive hopping policies for an underactuated one-legged hopper.
//!
//! The crate is `no_std` (with `alloc`) and contains every algorithmic piece of
//! the pipeline:
//!
//! * [`sim`]: rigid-body simulation of the rail-constrained hopper with hard,
//!   inelastic contact.
//! * [`dynamics`]: per-timestep affine-Gaussian dynamics fitted from rollouts
//!   with a GMM prior and an identity-shift ridge prior.
//! * [`ilqr`]: control-limited iLQR with a KL trust region, switching costs and
//!   an adaptive horizon.
//! * [`nn`]: small MLPs, Adam, and the torque / feedback policy networks.
//! * [`pipeline`]: policy optimization, dataset generation and distillation.
//! * [`eval`]: the PHVS metric and the robustness scenarios.
//! * [`exec`]: sequential or caller-supplied parallel execution of studies.
//!
//! File formats, configuration and the command line live in the `hopper`
//! companion crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dynamics;
pub mod eval;
pub mod exec;
pub mod ilqr;
pub mod linalg;
pub mod nn;
pub mod pipeline;
pub mod sim;
mod types;

pub use types::*;
