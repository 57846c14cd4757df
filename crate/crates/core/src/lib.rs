//! Gaussian-gated mixture of experts (GMoE).
//!
//! The model couples a Gaussian gate on the covariate `x ∈ R^d` with an affine
//! Gaussian expert on the response `y ∈ R`:
//!
//! ```text
//! p_G(x, y) = Σ_j π_j · N_d(x | c_j, Γ_j) · N_1(y | a_jᵀx + b_j, ν_j)
//! ```
//!
//! The crate covers the whole estimation pipeline for that model:
//!
//! | module | contents |
//! |--------|----------|
//! | [`model`] | atoms, mixing measures, log densities, the joint-Gaussian reparameterization |
//! | [`sampler`] | hierarchical i.i.d. sampling and the CSV dataset format |
//! | [`em`] | favourable initialization and EM on the joint Gaussian mixture |
//! | [`voronoi`] | Voronoi cells over atoms and the two cell-aware parameter losses |
//! | [`polysys`] | the two polynomial systems that fix the loss exponents |
//! | [`experiments`] | model presets, sample-size sweeps, log-log rate fits, TV distance, SVG plots |
//!
//! All numerical code is generic over a [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below are what the experiment harness and the CLI use.

// `!(x > 0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod em;
pub mod error;
pub mod experiments;
pub mod json;
pub mod linalg;
pub mod model;
pub mod polysys;
pub mod rng;
pub mod sampler;
mod scalar;
pub mod voronoi;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Component64 = model::Component<f64>;
pub type MixingMeasure64 = model::MixingMeasure<f64>;
pub type JointGaussian64 = model::JointGaussian<f64>;
pub type Dataset64 = sampler::Dataset<f64>;
pub type FitResult64 = em::FitResult<f64>;
pub type EmSettings64 = em::EmSettings<f64>;

pub type Component32 = model::Component<f32>;
pub type MixingMeasure32 = model::MixingMeasure<f32>;
pub type Dataset32 = sampler::Dataset<f32>;
