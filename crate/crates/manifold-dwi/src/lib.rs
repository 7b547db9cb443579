//! Log-Euclidean toolkit for diffusion MRI reconstruction schemes.
//!
//! The crate covers two Riemannian frameworks and everything needed to use
//! them end to end on desk-scale data:
//!
//! - [`spd`] — the SPD(3) manifold of diffusion tensors: eigendecomposition,
//!   log/exp maps at the identity, geodesic distance, FA, principal direction.
//! - [`odf`] — square-root ODFs as unit-norm spherical-harmonic coefficient
//!   vectors: basis evaluation, sphere log/exp maps, GFA, peak extraction.
//! - [`autodiff`] — analytic backward passes for the spectral log/exp layers
//!   with a finite-difference verification harness.
//! - [`volume`] / [`ops`] — voxel grids, log-domain resampling, patch
//!   decomposition, normalization and manifold-validity audits.
//! - [`losses`] — least-squares adversarial, threefold cycle-consistency,
//!   prior and anisotropy-weighted loss terms, plus the combined objective.
//! - [`synth`] — deterministic phantoms and a small trainable
//!   generator/discriminator pair exercising the full loss stack.
//! - [`tracking`] — deterministic streamline propagation on tensor or ODF
//!   fields.
//! - [`metrics`] — cosine similarity, FA/GFA MSE, mean geodesic distance,
//!   Dice/overlap/overreach and tractogram statistics.
//! - [`io`] — a minimal NIfTI-1 float32 subset, PGM/PPM slice export and a
//!   compact streamline binary.
//!
//! Start with the runnable programs under `examples/`; each demonstrates one
//! capability end to end. The `manifold-dwi` binary wires the same calls into
//! batch subcommands.

pub mod autodiff;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod odf;
pub mod ops;
pub mod spd;
pub mod synth;
pub mod tracking;
pub mod volume;

pub use error::{Error, Result};
