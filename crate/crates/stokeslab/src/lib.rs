//! # stokeslab
//!
//! A desk-scale laboratory for linear ODE singularities in one complex
//! variable. Given an operator `P = a_m(z) (d/dz)^m + … + a_0(z)` the crate
//! computes, at `z = 0` or `z = ∞`:
//!
//! - the Newton polygon, irregularity, and the Fuchsian (regular singular)
//!   test ([`diffop`], [`hlt`]);
//! - exponential factors `f_j ∈ z^{-1/d} ℂ[z^{-1/d}]` and truncated formal
//!   solutions `z^{λ_j} e^{f_j} Σ â_{jk} (log z)^k` ([`hlt`]);
//! - Stokes directions, sector covers on the universal cover of the circle of
//!   directions, and dominance zero-patterns ([`stokesgeo`]);
//! - numerically matched asymptotic solutions, Stokes matrices, and the
//!   monodromy they assemble to ([`numint`]);
//! - a combinatorial model of exponential enhanced sheaves and Stokes local
//!   systems with convolution, isomorphism and Hom computations
//!   ([`enhanced`]).
//!
//! All values are immutable and all functions are pure, so everything can be
//! shared across threads. With the default `parallel` feature the independent
//! inner loops (per-sector integrations, angular sampling) run on rayon;
//! disable default features for a strictly sequential build.

pub mod diffop;
pub mod enhanced;
pub mod error;
pub mod hlt;
pub mod numint;
mod par;
pub mod rational;
pub mod series;
pub mod stokesgeo;

pub use error::{Error, Result};
pub use rational::RationalExp;
pub use series::{ExponentialFactor, PuiseuxSeries};
