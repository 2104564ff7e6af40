//! Radial mean curvature flow near Simons' cone.
//!
//! The crate is organised bottom-up:
//!
//! * [`parameters`]: scalar constants derived from the half-dimension `n`.
//! * [`minimal_profile`]: the smooth minimal hypersurface asymptotic to the cone,
//!   its scaling family and barrier perturbations.
//! * [`spectral`]: the linearised operator, its Kummer eigenbasis, the Gaussian
//!   inner product, the cutoff and the unstable-mode projection.
//! * [`flow_core`]: the radial flow PDE, initial data and time stepping.
//! * [`rescaling_diagnostics`]: type I / type II views, curvature and rate fits.
//! * [`shooting`]: tuning the two unstable-mode amplitudes of the initial data.
//!
//! Supporting numerics live in [`numerics`]; file formats in [`io`].

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod flow_core;
pub mod io;
pub mod minimal_profile;
pub mod numerics;
pub mod parameters;
pub mod rescaling_diagnostics;
pub mod shooting;
pub mod spectral;

pub use error::{Error, Result};
pub use parameters::Parameters;
