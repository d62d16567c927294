//! Three-dimensional light-atom interface for Faraday spin squeezing.
//!
//! A focused Gaussian probe passes through a cylindrically symmetric Gaussian
//! cloud of spin-1/2 atoms. The polarimeter continuously measures the
//! fundamental spin wave, conditioning a squeezed state, while diffuse photon
//! scattering pumps the spins. The crate propagates the spin-wave means and
//! covariances in a truncated Laguerre-Gauss basis over longitudinal slices and
//! reports the Wineland squeezing parameter, with a dense small-N stochastic
//! master equation as a reference.
//!
//! All lengths are in µm and all times are in units of `1/gamma0`.

// `!(x > 0.0)` guards deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod ensemble_geometry;
pub mod error;
pub mod geometry_scan;
pub mod mode_projection;
pub mod ode;
pub mod paraxial_optics;
pub mod quad;
pub mod sme_oracle;
pub mod squeezing_dynamics;

pub use error::{Error, Result};

/// Format tag written into every output file.
pub const FORMAT_VERSION: &str = "faraday3d-output/1";
