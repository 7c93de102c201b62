//! Rate-unconstrained equilibrium with a linear encoder `Z = X + αθ`.
//!
//! The decoder and eavesdropper answer with linear MMSE estimates `Y = κZ`
//! and `θ̂ = νZ`. Substituting them gives the encoder's reduced objective
//!
//! ```text
//! J(α) = σ_X² + (1 - λ)σ_θ² + 2ρσ_Xσ_θ + P(α)/v(α)
//! P(α) = c_x² - 2 c_x c_{x+θ} + λ c_s²
//! ```
//!
//! whose stationary points solve `r(ρ+r)α² + (1+λr²)α + (λρr - 1) = 0`.
//! The minimizing root is confirmed by direct evaluation of `J` rather than
//! by a curvature argument.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::SourceSpec;
use crate::report::DistortionReport;

/// Second moments of the message `Z = X + αθ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentBundle {
    /// `E{Z²}`
    pub v: f64,
    /// `E{XZ}`
    pub c_x: f64,
    /// `E{θZ}`
    pub c_s: f64,
    /// `E{(X+θ)Z}`
    pub c_xs: f64,
}

pub fn moment_bundle(source: &SourceSpec, alpha: f64) -> MomentBundle {
    let vx = source.var_x();
    let vt = source.var_theta();
    let cov = source.cov_x_theta();
    let c_x = vx + alpha * cov;
    let c_s = cov + alpha * vt;
    MomentBundle {
        v: vx + 2.0 * alpha * cov + alpha * alpha * vt,
        c_x,
        c_s,
        c_xs: c_x + c_s,
    }
}

/// Encoder coefficient with the matching follower responses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearEquilibrium {
    pub alpha: f64,
    pub kappa: f64,
    pub nu: f64,
    pub lambda: f64,
}

impl LinearEquilibrium {
    pub fn solve(source: &SourceSpec, lambda: f64) -> Result<Self> {
        let alpha = optimal_alpha(source, lambda)?;
        let (kappa, nu) = best_response_coeffs(source, alpha)?;
        Ok(LinearEquilibrium {
            alpha,
            kappa,
            nu,
            lambda,
        })
    }

    pub fn report(&self, source: &SourceSpec) -> Result<DistortionReport> {
        linear_distortions(source, self.alpha, self.lambda)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    Ok(())
}

/// Coefficients `(a, b, c)` of the stationarity quadratic `aα² + bα + c = 0`.
pub fn stationarity_quadratic(source: &SourceSpec, lambda: f64) -> (f64, f64, f64) {
    let r = source.r();
    let rho = source.rho();
    (r * (rho + r), 1.0 + lambda * r * r, lambda * rho * r - 1.0)
}

/// Both critical points of `J`; the first entry is the closed-form
/// minimizer, the second the other root (absent when the quadratic
/// degenerates to a linear equation).
pub fn critical_points(source: &SourceSpec, lambda: f64) -> Result<(f64, Option<f64>)> {
    check_lambda(lambda)?;
    let (a, b, c) = stationarity_quadratic(source, lambda);
    if a.abs() <= 1e-14 * (b.abs() + c.abs()) {
        return Ok((-c / b, None));
    }
    let disc = b * b - 4.0 * a * c;
    if !(disc >= 0.0) {
        return Err(Error::Invariant(format!(
            "negative discriminant {disc} for r = {}, rho = {}, lambda = {lambda}",
            source.r(),
            source.rho()
        )));
    }
    // b > 0, so -b - sqrt(disc) never cancels; (-b + sqrt(disc)) / 2a == c / q.
    let q = -0.5 * (b + disc.sqrt());
    Ok((c / q, Some(q / a)))
}

const PROBE_OFFSETS: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];

/// Minimizer of `J(α)` over the reals.
pub fn optimal_alpha(source: &SourceSpec, lambda: f64) -> Result<f64> {
    let (root, other) = critical_points(source, lambda)?;
    let tol = |j: f64| 1e-12 * (1.0 + j.abs()) * (1.0 + lambda);
    let verified = |alpha: f64| -> Option<f64> {
        let j = objective_j_rational(source, alpha, lambda).ok()?;
        let beats = |probe: f64| match objective_j_rational(source, probe, lambda) {
            Ok(jp) => j <= jp + tol(j),
            // v(probe) = 0 only on degenerate sources; J is undefined there
            Err(_) => true,
        };
        let local = PROBE_OFFSETS
            .iter()
            .all(|&d| beats(alpha + d) && beats(alpha - d));
        let global = other.is_none_or(|o| o == alpha || beats(o));
        (local && global).then_some(j)
    };
    if verified(root).is_some() {
        return Ok(root);
    }
    if let Some(o) = other {
        if verified(o).is_some() {
            return Ok(o);
        }
    }
    Err(Error::Invariant(format!(
        "no critical point of J minimizes it (r = {}, rho = {}, lambda = {lambda})",
        source.r(),
        source.rho()
    )))
}

fn checked_bundle(source: &SourceSpec, alpha: f64) -> Result<MomentBundle> {
    let m = moment_bundle(source, alpha);
    if !(m.v > 0.0) {
        return Err(Error::domain(format!("E{{Z^2}} = {} is not positive at alpha = {alpha}", m.v)));
    }
    Ok(m)
}

/// MMSE scalings `(κ, ν)` of the message for X and θ.
pub fn best_response_coeffs(source: &SourceSpec, alpha: f64) -> Result<(f64, f64)> {
    let m = checked_bundle(source, alpha)?;
    Ok((m.c_x / m.v, m.c_s / m.v))
}

/// `J(α)` by expanding the squared errors at the MMSE responses.
pub fn objective_j_direct(source: &SourceSpec, alpha: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let r = linear_distortions(source, alpha, lambda)?;
    Ok(r.d_e)
}

/// `J(α)` as the constant plus `P(α)/v(α)`.
pub fn objective_j_rational(source: &SourceSpec, alpha: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    let m = checked_bundle(source, alpha)?;
    let constant = source.var_x() + (1.0 - lambda) * source.var_theta() + 2.0 * source.cov_x_theta();
    let p = m.c_x * m.c_x - 2.0 * m.c_x * m.c_xs + lambda * m.c_s * m.c_s;
    Ok(constant + p / m.v)
}

/// `J(α)`; both evaluation routes must agree.
pub fn objective_j(source: &SourceSpec, alpha: f64, lambda: f64) -> Result<f64> {
    let direct = objective_j_direct(source, alpha, lambda)?;
    let rational = objective_j_rational(source, alpha, lambda)?;
    let scale = (1.0 + lambda) * (source.var_x() + source.var_theta());
    if (direct - rational).abs() > 1e-10 * scale.max(1.0) {
        return Err(Error::Invariant(format!(
            "J(alpha) routes disagree: direct {direct}, rational {rational}"
        )));
    }
    Ok(rational)
}

pub fn linear_distortions(source: &SourceSpec, alpha: f64, lambda: f64) -> Result<DistortionReport> {
    check_lambda(lambda)?;
    let m = checked_bundle(source, alpha)?;
    let kappa = m.c_x / m.v;
    let det = source.covariance_determinant();
    // MMSE errors: σ_X² - c_x²/v = α² det / v and σ_θ² - c_s²/v = det / v,
    // written without the cancellation of the expanded forms.
    let d_d = alpha * alpha * det / m.v;
    let d_theta = det / m.v;
    // X + θ - κZ = (X - κZ) + θ
    let fidelity =
        (d_d + source.var_theta() + 2.0 * (source.cov_x_theta() - kappa * m.c_s)).max(0.0);
    Ok(DistortionReport::new(fidelity, d_d, d_theta, lambda))
}
