//! Multi-task loss weighting under one gradient-aggregation interface.
//!
//! The crate implements ten task-balancing strategies (equal weighting,
//! random loss weighting over six sampling distributions, gradnorm, uw,
//! mgda, dwa, pcgrad, graddrop, imtl in its loss/gradient/combined forms,
//! and gradvac), synthetic multi-task problem families with exact
//! gradients, a doubly stochastic training loop, and a verification suite
//! that checks the convergence, noise, and minima-escape behavior of
//! random loss weighting against equal weighting on those problems.

pub mod config;
pub mod math;
pub mod metrics;
pub mod problems;
pub mod rng;
pub mod sampling;
pub mod strategies;
pub mod trainer;
pub mod verify;
