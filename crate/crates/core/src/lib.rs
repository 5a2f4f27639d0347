//! Trajectory-tracking control laboratory.
//!
//! A nonlinear MPC expert steers a constant-speed kinematic bicycle along
//! waypoint references. Its decisions are distilled into small
//! fully connected controllers, either by supervised imitation of
//! MPC-labelled poses or by DDPG against a tracking reward, and the learned
//! controllers are compared with the expert in closed loop and by latency.
//!
//! Module map:
//!
//! * [`vehicle`]: bicycle dynamics and frame transforms.
//! * [`mpc`]: the expert (single shooting, adjoint gradients, projected
//!   Newton steps) and a grid-search oracle.
//! * [`trajgen`]: reference generators, the validation circuit, pose sampling.
//! * [`dataset`]: MPC labelling and the data set CSV format.
//! * [`features`]: the I3 / I21 / I40 robot-frame input sets.
//! * [`nn`]: dense networks, backpropagation, Adam, model files.
//! * [`sl`]: supervised training and architecture sweeps.
//! * [`rl`]: DDPG environment, replay buffer, actor-critic training.
//! * [`harness`]: closed-loop rollouts, deviation metrics, latency benches.
//! * [`experiment`]: file-based experiment recipes behind the CLI.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod features;
pub mod harness;
pub mod io;
pub mod mpc;
pub mod nn;
pub mod rl;
pub mod rng;
pub mod sl;
pub mod trajgen;
pub mod vehicle;

pub use error::{Error, Result};
