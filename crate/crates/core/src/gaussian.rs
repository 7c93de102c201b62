//! Jointly Gaussian source `(X, θ)`, discretization of θ, and closed-form
//! partial moments of the conditional law `X | θ`.
//!
//! Every integral over a quantizer cell reduces to truncated moments of a
//! normal law, which are evaluated here with the complementary error function.
//! Interval endpoints are extended reals: `f64::NEG_INFINITY` and
//! `f64::INFINITY` encode the outermost cells.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `1 / sqrt(2π)`.
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn std_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        return 0.0;
    }
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF.
#[inline]
pub fn std_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(z)`, accurate for large positive `z`.
#[inline]
pub fn std_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z * FRAC_1_SQRT_2)
}

/// `Φ(b) - Φ(a)` without cancellation in either tail.
#[inline]
pub fn std_interval_mass(a: f64, b: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    let mass = if a >= 0.0 {
        std_sf(a) - std_sf(b)
    } else if b <= 0.0 {
        std_cdf(b) - std_cdf(a)
    } else {
        1.0 - std_cdf(a) - std_sf(b)
    };
    mass.max(0.0)
}

/// Parameters of the zero-mean jointly Gaussian source
/// `(X, θ) ~ N(0, σ_X² [[1, ρr], [ρr, r²]])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    sigma_x: f64,
    r: f64,
    rho: f64,
}

impl SourceSpec {
    pub fn new(sigma_x: f64, r: f64, rho: f64) -> Result<Self> {
        if !(sigma_x.is_finite() && sigma_x > 0.0) {
            return Err(Error::domain(format!("sigma_x must be finite and > 0, got {sigma_x}")));
        }
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::domain(format!("r must be finite and > 0, got {r}")));
        }
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::domain(format!("rho must lie in [-1, 1], got {rho}")));
        }
        let spec = SourceSpec { sigma_x, r, rho };
        let det = spec.covariance_determinant();
        if det < -1e-12 * spec.sigma_x.powi(4) * r * r {
            return Err(Error::Invariant(format!("covariance determinant is negative: {det}")));
        }
        Ok(spec)
    }

    /// Unit variances, independent components.
    pub fn standard() -> Self {
        SourceSpec {
            sigma_x: 1.0,
            r: 1.0,
            rho: 0.0,
        }
    }

    pub fn sigma_x(&self) -> f64 {
        self.sigma_x
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn sigma_theta(&self) -> f64 {
        self.r * self.sigma_x
    }

    pub fn var_x(&self) -> f64 {
        self.sigma_x * self.sigma_x
    }

    pub fn var_theta(&self) -> f64 {
        let s = self.sigma_theta();
        s * s
    }

    /// `E{Xθ} = ρ σ_X σ_θ`.
    pub fn cov_x_theta(&self) -> f64 {
        self.rho * self.sigma_x * self.sigma_theta()
    }

    pub fn covariance_determinant(&self) -> f64 {
        self.var_x() * self.var_theta() * (1.0 - self.rho * self.rho)
    }

    /// `|ρ| = 1`: θ is a deterministic multiple of X.
    pub fn is_degenerate(&self) -> bool {
        self.rho.abs() == 1.0
    }

    /// Law of `X` given `θ = theta`.
    pub fn conditional(&self, theta: f64) -> ConditionalLaw {
        ConditionalLaw {
            mean: self.rho * theta / self.r,
            sd: self.sigma_x * (1.0 - self.rho * self.rho).max(0.0).sqrt(),
        }
    }

    /// Marginal law of `X`.
    pub fn marginal_x(&self) -> ConditionalLaw {
        ConditionalLaw {
            mean: 0.0,
            sd: self.sigma_x,
        }
    }
}

pub fn make_source(sigma_x: f64, r: f64, rho: f64) -> Result<SourceSpec> {
    SourceSpec::new(sigma_x, r, rho)
}

/// A normal law `N(mean, sd²)`; `sd = 0` is a point mass at `mean`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalLaw {
    pub mean: f64,
    pub sd: f64,
}

/// Truncated moments of a normal law over `(a, b]`, kept in standardized
/// form so second moments about any center can be formed without
/// catastrophic cancellation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalMoments {
    pub mass: f64,
    mean: f64,
    sd: f64,
    /// `E{Z 1[a,b]}` for the standardized variable.
    ez: f64,
    /// `E{Z² 1[a,b]}` for the standardized variable.
    ez2: f64,
}

impl IntervalMoments {
    pub const EMPTY: IntervalMoments = IntervalMoments {
        mass: 0.0,
        mean: 0.0,
        sd: 0.0,
        ez: 0.0,
        ez2: 0.0,
    };

    /// `E{X 1[a,b]}`.
    #[inline]
    pub fn first(&self) -> f64 {
        self.mean * self.mass + self.sd * self.ez
    }

    /// `E{X² 1[a,b]}`.
    #[inline]
    pub fn second(&self) -> f64 {
        self.second_about(0.0)
    }

    /// `E{(X - c)² 1[a,b]}`.
    #[inline]
    pub fn second_about(&self, c: f64) -> f64 {
        let d = self.mean - c;
        (d * d * self.mass + 2.0 * d * self.sd * self.ez + self.sd * self.sd * self.ez2).max(0.0)
    }
}

impl ConditionalLaw {
    #[inline]
    pub fn pdf(&self, x: f64) -> f64 {
        std_pdf((x - self.mean) / self.sd) / self.sd
    }

    #[inline]
    pub fn cdf(&self, x: f64) -> f64 {
        if self.sd == 0.0 {
            return if x >= self.mean { 1.0 } else { 0.0 };
        }
        std_cdf((x - self.mean) / self.sd)
    }

    /// Moments over `(a, b]`. Callers guarantee `a <= b` and no NaN.
    pub fn interval(&self, a: f64, b: f64) -> IntervalMoments {
        if a >= b {
            return IntervalMoments::EMPTY;
        }
        if self.sd == 0.0 {
            let inside = a < self.mean && self.mean <= b;
            return IntervalMoments {
                mass: if inside { 1.0 } else { 0.0 },
                mean: self.mean,
                sd: 0.0,
                ez: 0.0,
                ez2: 0.0,
            };
        }
        let za = (a - self.mean) / self.sd;
        let zb = (b - self.mean) / self.sd;
        let mass = std_interval_mass(za, zb);
        let (pa, pb) = (std_pdf(za), std_pdf(zb));
        // z·φ(z) -> 0 at infinite endpoints
        let za_pa = if za.is_finite() { za * pa } else { 0.0 };
        let zb_pb = if zb.is_finite() { zb * pb } else { 0.0 };
        IntervalMoments {
            mass,
            mean: self.mean,
            sd: self.sd,
            ez: pa - pb,
            ez2: (mass + za_pa - zb_pb).max(0.0),
        }
    }
}

/// Mass and first partial moment of `X | θ` over an interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartialMoments {
    pub mass: f64,
    pub first: f64,
}

/// `P(a < X <= b | θ)` and `E{X 1[a,b] | θ}` in closed form.
pub fn partial_moments(source: &SourceSpec, theta: f64, a: f64, b: f64) -> Result<PartialMoments> {
    if theta.is_nan() || a.is_nan() || b.is_nan() {
        return Err(Error::domain("NaN passed to partial_moments"));
    }
    if a > b {
        return Err(Error::domain(format!("interval endpoints out of order: a = {a} > b = {b}")));
    }
    let m = source.conditional(theta).interval(a, b);
    Ok(PartialMoments {
        mass: m.mass,
        first: m.first(),
    })
}

/// Density of `X | θ = theta` at `x`. Undefined for `|ρ| = 1`.
pub fn conditional_density(source: &SourceSpec, theta: f64, x: f64) -> Result<f64> {
    if source.is_degenerate() {
        return Err(Error::domain("conditional density does not exist for |rho| = 1"));
    }
    Ok(source.conditional(theta).pdf(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridScheme {
    #[default]
    GaussHermite,
    UniformTruncated,
}

impl FromStr for GridScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss-hermite" => Ok(GridScheme::GaussHermite),
            "uniform-truncated" => Ok(GridScheme::UniformTruncated),
            other => Err(Error::UnsupportedScheme(other.to_string())),
        }
    }
}

impl fmt::Display for GridScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridScheme::GaussHermite => "gauss-hermite",
            GridScheme::UniformTruncated => "uniform-truncated",
        })
    }
}

/// Default number of θ nodes.
pub const DEFAULT_THETA_NODES: usize = 17;

/// Truncation of the uniform scheme, in units of σ_θ.
pub const UNIFORM_TRUNCATION: f64 = 5.0;

/// Finite discretization of θ: strictly increasing nodes with probability weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ThetaGrid {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(Error::domain(format!(
                "theta grid needs matching nonempty nodes/weights, got {} and {}",
                nodes.len(),
                weights.len()
            )));
        }
        if nodes.iter().chain(&weights).any(|v| !v.is_finite()) {
            return Err(Error::domain("theta grid entries must be finite"));
        }
        if nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("theta nodes must be strictly increasing"));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::domain("theta weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("theta weights sum to {total}, expected 1")));
        }
        Ok(ThetaGrid { nodes, weights })
    }

    /// A single node at `theta` carrying all the mass.
    pub fn point(theta: f64) -> Self {
        ThetaGrid {
            nodes: vec![theta],
            weights: vec![1.0],
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        self.iter().map(|(t, w)| w * t).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.iter().map(|(t, w)| w * t * t).sum()
    }
}

pub fn make_theta_grid(source: &SourceSpec, n_nodes: usize, scheme: GridScheme) -> Result<ThetaGrid> {
    if n_nodes == 0 {
        return Err(Error::domain("theta grid needs at least one node"));
    }
    let sigma = source.sigma_theta();
    let (nodes, mut weights) = match scheme {
        GridScheme::GaussHermite => {
            let (x, w) = gauss_hermite(n_nodes);
            let scale = std::f64::consts::SQRT_2 * sigma;
            (x.into_iter().map(|v| v * scale).collect::<Vec<_>>(), w)
        }
        GridScheme::UniformTruncated => uniform_truncated(n_nodes, sigma),
    };
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    ThetaGrid::new(nodes, weights)
}

/// Gauss–Hermite rule for the weight `exp(-x²)`, nodes ascending.
/// Newton iteration on the orthonormal Hermite recurrence.
fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^(-1/4)
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = n.div_ceil(2);
    let mut z = 0.0_f64;
    for i in 0..half {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        if n % 2 == 1 && i == half - 1 {
            z = 0.0;
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    x.reverse();
    w.reverse();
    (x, w)
}

/// Equispaced midpoints on `[-5σ, 5σ]` with cell probabilities; tails fold
/// into the edge cells.
fn uniform_truncated(n: usize, sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let lo = -UNIFORM_TRUNCATION;
    let h = 2.0 * UNIFORM_TRUNCATION / n as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let a = if i == 0 { f64::NEG_INFINITY } else { lo + i as f64 * h };
        let b = if i + 1 == n { f64::INFINITY } else { lo + (i + 1) as f64 * h };
        nodes.push((lo + (i as f64 + 0.5) * h) * sigma);
        weights.push(std_interval_mass(a, b));
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> SourceSpec {
        make_source(1.0, 1.0, 0.0).unwrap()
    }

    #[test]
    fn source_validation() {
        let s = unit();
        assert_eq!(s.sigma_theta(), 1.0);
        assert!(!s.is_degenerate());
        let d = make_source(1.0, 1.0, 1.0).unwrap();
        assert!(d.is_degenerate());
        assert!(d.covariance_determinant().abs() < 1e-15);
        assert!(matches!(make_source(0.0, 1.0, 0.0), Err(Error::Domain(_))));
        assert!(make_source(1.0, -1.0, 0.0).is_err());
        assert!(make_source(1.0, 1.0, 1.01).is_err());
        assert!(make_source(f64::NAN, 1.0, 0.0).is_err());
        assert_eq!(make_source(2.0, 3.0, 0.5).unwrap().sigma_theta(), 6.0);
    }

    #[test]
    fn one_point_uniform_grid() {
        let g = make_theta_grid(&unit(), 1, GridScheme::UniformTruncated).unwrap();
        assert_eq!(g.nodes(), &[0.0]);
        assert_eq!(g.weights(), &[1.0]);
    }

    #[test]
    fn two_point_hermite_grid() {
        let g = make_theta_grid(&unit(), 2, GridScheme::GaussHermite).unwrap();
        assert!((g.nodes()[0] + 1.0).abs() < 1e-14);
        assert!((g.nodes()[1] - 1.0).abs() < 1e-14);
        assert!((g.weights()[0] - 0.5).abs() < 1e-14);
        assert!((g.weights()[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn uniform_grid_is_symmetric() {
        let g = make_theta_grid(&unit(), 33, GridScheme::UniformTruncated).unwrap();
        let total: f64 = g.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let n = g.len();
        for i in 0..n {
            assert!((g.nodes()[i] + g.nodes()[n - 1 - i]).abs() < 1e-12);
            assert!((g.weights()[i] - g.weights()[n - 1 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn hermite_rule_integrates_polynomials() {
        // E{θ^k} for θ ~ N(0, 4): 1, 0, 4, 0, 48, 0, 960
        let s = make_source(1.0, 2.0, 0.0).unwrap();
        let g = make_theta_grid(&s, 17, GridScheme::GaussHermite).unwrap();
        let moment = |k: i32| g.iter().map(|(t, w)| w * t.powi(k)).sum::<f64>();
        assert!((moment(2) - 4.0).abs() < 1e-12);
        assert!((moment(4) - 48.0).abs() < 1e-10);
        assert!((moment(6) - 960.0).abs() < 1e-8);
        assert!(moment(3).abs() < 1e-10);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(make_theta_grid(&unit(), 0, GridScheme::GaussHermite).is_err());
        assert!(ThetaGrid::new(vec![1.0, 0.0], vec![0.5, 0.5]).is_err());
        assert!(ThetaGrid::new(vec![0.0, 1.0], vec![0.6, 0.6]).is_err());
        assert!(ThetaGrid::new(vec![0.0, 1.0], vec![1.5, -0.5]).is_err());
        assert!(matches!("simpson".parse::<GridScheme>(), Err(Error::UnsupportedScheme(_))));
    }

    #[test]
    fn partial_moment_examples() {
        let s = unit();
        let full = partial_moments(&s, 0.0, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        assert!((full.mass - 1.0).abs() < 1e-15);
        assert!(full.first.abs() < 1e-15);

        let half = partial_moments(&s, 0.0, 0.0, f64::INFINITY).unwrap();
        assert!((half.mass - 0.5).abs() < 1e-15);
        assert!((half.first - INV_SQRT_2PI).abs() < 1e-15);

        let empty = partial_moments(&s, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(empty, PartialMoments { mass: 0.0, first: 0.0 });

        assert!(partial_moments(&s, 0.0, 1.0, 0.0).is_err());
        assert!(partial_moments(&s, f64::NAN, 0.0, 1.0).is_err());
    }

    #[test]
    fn second_moment_of_full_line() {
        let law = make_source(1.5, 1.0, 0.6).unwrap().conditional(0.7);
        let m = law.interval(f64::NEG_INFINITY, f64::INFINITY);
        let var = 1.5f64.powi(2) * (1.0 - 0.36);
        assert!((m.second() - (var + law.mean * law.mean)).abs() < 1e-13);
        assert!((m.second_about(law.mean) - var).abs() < 1e-13);
    }

    #[test]
    fn density_examples() {
        let s = unit();
        assert!((conditional_density(&s, 0.0, 0.0).unwrap() - 0.398942).abs() < 1e-6);
        assert!(conditional_density(&s, 0.0, 10.0).unwrap() < 1e-20);
        let s = make_source(1.0, 1.0, 0.5).unwrap();
        assert!((conditional_density(&s, 2.0, 1.0).unwrap() - 0.460659).abs() < 1e-6);
        let d = make_source(1.0, 1.0, -1.0).unwrap();
        assert!(conditional_density(&d, 0.0, 0.0).is_err());
    }

    #[test]
    fn degenerate_source_is_point_mass() {
        let s = make_source(1.0, 2.0, 1.0).unwrap();
        // θ = 2X, so X | θ = 1 is the point 0.5
        let m = partial_moments(&s, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(m.mass, 1.0);
        assert!((m.first - 0.5).abs() < 1e-15);
        assert_eq!(partial_moments(&s, 1.0, 0.5, 1.0).unwrap().mass, 0.0);
    }

    #[test]
    fn tail_masses_keep_precision() {
        // Φ(-9) - Φ(-10)
        let expected = 1.128_512_207_423_59e-19;
        let m = std_interval_mass(-10.0, -9.0);
        assert!((m / expected - 1.0).abs() < 1e-8);
        let m = std_interval_mass(9.0, 10.0);
        assert!((m / expected - 1.0).abs() < 1e-8);
    }
}
