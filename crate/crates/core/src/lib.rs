//! Certified exponential decay for the boundary-stabilized KdV–KdV system
//! with a time-varying delay, and a finite-difference laboratory to test it.
//!
//! The system on `(0, L)` is
//!
//! ```text
//! η_t + ω_x + ω_xxx + (ηω)_x = 0
//! ω_t + η_x + η_xxx + ωω_x  = 0
//! η(t,0) = η(t,L) = η_x(t,0) = 0,  ω(t,0) = ω(t,L) = 0
//! ω_x(t,L) = −α η_x(t,L) + β η_x(t−τ(t), L)
//! ```
//!
//! For gains with `(2α−|β|)(1−d) > |β|`, delays with `τ ≤ M`, `τ̇ ≤ d < 1`,
//! and `L < √3π`, the linearized energy obeys `E(t) ≤ ζ E(0) e^{−λt}`.
//!
//! - [`model`]: gains, delay profiles, feasibility formulas.
//! - [`certify`]: Φ, Ψ, the rate bounds and the optimal certificate.
//! - [`discretize`]: grids, banded operators, quadrature.
//! - [`simulate`]: the θ-scheme with transport or history delay channels.
//! - [`analyze`]: energy, decay fits, bound verification, diagnostics.
//! - [`config`]: the TOML run configuration.
//!
//! ```
//! use kdv_delay::certify::{optimal_certificate, Problem};
//!
//! let cert = optimal_certificate(&Problem::FIGURE_ONE, 1e-12).unwrap();
//! assert!(cert.feasible);
//! assert!((cert.lambda - 0.007108902699).abs() < 1e-11);
//! ```

pub mod analyze;
pub mod certify;
pub mod config;
pub mod discretize;
pub mod error;
pub mod model;
pub mod simulate;

pub use error::{Error, Result};

// The guide's code blocks run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/certificate.md")]
    mod certificate {}
    #[doc = include_str!("../../../book/src/discretization.md")]
    mod discretization {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
}
