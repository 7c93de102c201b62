//! Equilibria of a privacy-constrained strategic communication game.
//!
//! An encoder observes a jointly Gaussian pair `(X, θ)` and sends a message
//! `Z` to a decoder that estimates `X`, while an eavesdropper uses the same
//! message to estimate θ. The encoder minimizes
//! `E{(X + θ - Y)²} - λ E{(θ - θ̂)²}`; the decoder and eavesdropper each
//! minimize their own squared error. This crate computes
//!
//! * the closed-form linear equilibrium when the message is real-valued
//!   ([`linear`]),
//! * gradient-designed θ-parameterized quantizers when the message alphabet
//!   has `M` symbols ([`quantizer`], [`optimizer`]),
//! * similarity and baseline metrics ([`metrics`]), brute-force and Monte
//!   Carlo checks ([`oracle`]), and λ sweeps ([`sweep`]).

pub mod error;
pub mod gaussian;
pub mod json;
pub mod linear;
pub mod metrics;
pub mod optimizer;
pub mod oracle;
pub mod quantizer;
pub mod report;
pub mod sweep;

pub use error::{Error, Result};
pub use gaussian::{make_source, make_theta_grid, GridScheme, SourceSpec, ThetaGrid};
pub use linear::LinearEquilibrium;
pub use optimizer::{DesignResult, GradientMode, OptimOptions};
pub use quantizer::{BestResponses, Quantizer};
pub use report::DistortionReport;
