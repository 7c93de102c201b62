use serde::{Deserialize, Serialize};

/// Distortions at an encoder/decoder/eavesdropper profile, in variance units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    /// Encoder Lagrangian `fidelity - λ·d_theta`.
    pub d_e: f64,
    /// `E{(X + θ - Y)²}`.
    pub fidelity: f64,
    /// Decoder distortion `E{(X - Y)²}`.
    pub d_d: f64,
    /// Eavesdropper distortion `E{(θ - θ̂)²}`.
    pub d_theta: f64,
}

impl DistortionReport {
    pub fn new(fidelity: f64, d_d: f64, d_theta: f64, lambda: f64) -> Self {
        DistortionReport {
            d_e: fidelity - lambda * d_theta,
            fidelity,
            d_d,
            d_theta,
        }
    }
}
