//! Numerical laboratory for the Wick-ordered nonlinear Schrodinger equation
//! on the two dimensional torus.
//!
//! The crate provides spectral fields with sharp frequency truncation, exact
//! dealiased pseudospectral products, Wick-ordered and pair-free polynomial
//! calculus, Gaussian free field and Gibbs samplers, interaction-picture time
//! integrators for the truncated and gauged flows, the shell-by-shell
//! averaging-operator decomposition with discrete time-frequency norms,
//! lattice counting oracles, Gaussian chaos deviation checks, and the
//! experiment harness that ties them together behind reproducible manifests.

pub mod averaging;
pub mod counting;
pub mod deviation;
pub mod dynamics;
pub mod gibbs;
pub mod harness;
pub mod io;
pub mod params;
pub mod reference;
pub mod spectral;
pub mod stats;
pub mod timefreq;
pub mod wick;

pub use num_complex::Complex64;
pub use params::{Dyadic, Params};
pub use spectral::{PhysicalGrid, SpectralField, Wavenumber};
pub use wick::WickContext;
