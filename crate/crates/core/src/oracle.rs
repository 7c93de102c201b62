//! Independent checks of the analytic pipeline: exhaustive search over
//! boundary grids for tiny instances, and Monte Carlo estimates of the
//! distortions of a fixed quantizer.

use rand::distr::weighted::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{SourceSpec, ThetaGrid};
use crate::linear::LinearEquilibrium;
use crate::optimizer::DesignResult;
use crate::quantizer::{evaluate, BestResponses, Quantizer};
use crate::report::DistortionReport;

/// Largest enumeration [`brute_force_design`] accepts.
pub const MAX_ENUMERATION: f64 = 1e8;

/// Candidate positions for interior boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleGrid {
    candidates: Vec<f64>,
}

impl OracleGrid {
    pub fn new(candidates: Vec<f64>) -> Result<Self> {
        if candidates.iter().any(|c| !c.is_finite()) {
            return Err(Error::domain("oracle candidates must be finite"));
        }
        if candidates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("oracle candidates must be strictly increasing"));
        }
        Ok(OracleGrid { candidates })
    }

    /// `n` equispaced points on `[-half_width, half_width]`.
    pub fn equispaced(half_width: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return OracleGrid::new(vec![0.0; n.min(1)]);
        }
        let step = 2.0 * half_width / (n - 1) as f64;
        OracleGrid::new((0..n).map(|i| -half_width + i as f64 * step).collect())
    }

    /// 41 points on `[-3σ_X, 3σ_X]`.
    pub fn default_for(source: &SourceSpec) -> Self {
        OracleGrid::equispaced(3.0 * source.sigma_x(), 41).expect("valid default grid")
    }

    pub fn candidates(&self) -> &[f64] {
        &self.candidates
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Strictly increasing `k`-subsets of `0..n`, in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            break;
        };
        idx[i] += 1;
        for t in i + 1..k {
            idx[t] = idx[t - 1] + 1;
        }
    }
    out
}

/// Number of quantizers [`brute_force_design`] would evaluate.
pub fn enumeration_size(ogrid: &OracleGrid, m: usize, n_rows: usize) -> f64 {
    binomial(ogrid.candidates.len(), m.saturating_sub(1)).powi(n_rows as i32)
}

/// Global optimum of the encoder Lagrangian over all quantizers whose
/// interior boundaries lie on `ogrid`, at exact best responses. Ties go to
/// the lexicographically smallest tuple of candidate indices.
pub fn brute_force_design(
    source: &SourceSpec,
    grid: &ThetaGrid,
    m: usize,
    lambda: f64,
    ogrid: &OracleGrid,
) -> Result<DesignResult> {
    if m < 1 {
        return Err(Error::domain("M must be at least 1"));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    let count = enumeration_size(ogrid, m, grid.len());
    if count > MAX_ENUMERATION {
        return Err(Error::EnumerationTooLarge {
            count,
            limit: MAX_ENUMERATION,
        });
    }
    let combos = combinations(ogrid.candidates.len(), m - 1);
    if combos.is_empty() {
        return Err(Error::domain("oracle grid has fewer candidates than interior boundaries"));
    }
    let rows = grid.len();
    let to_row = |c: &[usize]| -> Vec<f64> { c.iter().map(|&i| ogrid.candidates[i]).collect() };

    // Partition by the first row's choice; odometer over the remaining rows.
    let best = (0..combos.len())
        .into_par_iter()
        .map(|first| {
            let mut digits = vec![0usize; rows];
            digits[0] = first;
            let mut best: Option<(f64, Vec<usize>)> = None;
            loop {
                let interior = digits.iter().map(|&d| to_row(&combos[d])).collect();
                let q = Quantizer::from_interior(m, interior).expect("combinations are increasing");
                let d_e = evaluate(&q, source, grid, lambda).report.d_e;
                if best.as_ref().is_none_or(|(b, _)| d_e < *b) {
                    best = Some((d_e, digits.clone()));
                }
                let Some(pos) = (1..rows).rev().find(|&p| digits[p] + 1 < combos.len()) else {
                    break;
                };
                digits[pos] += 1;
                digits[pos + 1..].fill(0);
            }
            best.expect("nonempty enumeration")
        })
        .reduce_with(|a, b| {
            if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
                b
            } else {
                a
            }
        })
        .expect("nonempty enumeration");

    let interior = best.1.iter().map(|&d| to_row(&combos[d])).collect();
    let q = Quantizer::from_interior(m, interior)?;
    let eval = evaluate(&q, source, grid, lambda);
    Ok(DesignResult {
        quantizer: q,
        responses: eval.responses,
        report: eval.report,
        iterations: 0,
        converged: true,
        trajectory: None,
        projected_gradient_norm: f64::NAN,
        restart: 0,
    })
}

/// Sample means of the four distortions with their standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub estimate: DistortionReport,
    pub se_d_e: f64,
    pub se_fidelity: f64,
    pub se_d_d: f64,
    pub se_d_theta: f64,
    pub n_samples: usize,
}

#[derive(Default)]
struct Welford {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn std_error(&self) -> f64 {
        if self.n < 2.0 {
            return f64::NAN;
        }
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }
}

/// Draws θ from the grid and X from its conditional law, encodes with `q`,
/// answers with `br`, and averages the squared errors.
pub fn monte_carlo_distortions(
    q: &Quantizer,
    br: &BestResponses,
    source: &SourceSpec,
    grid: &ThetaGrid,
    lambda: f64,
    n_samples: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    if n_samples == 0 {
        return Err(Error::domain("n_samples must be at least 1"));
    }
    if q.n_rows() != grid.len() || br.y.len() != q.m() || br.theta_hat.len() != q.m() {
        return Err(Error::InvalidQuantizer("quantizer, grid and responses disagree in shape".into()));
    }
    let pick = WeightedIndex::new(grid.weights()).map_err(|e| Error::domain(e.to_string()))?;
    let laws: Vec<_> = grid.nodes().iter().map(|&t| source.conditional(t)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut de, mut fid, mut dd, mut dt) = (
        Welford::default(),
        Welford::default(),
        Welford::default(),
        Welford::default(),
    );
    for _ in 0..n_samples {
        let j = pick.sample(&mut rng);
        let theta = grid.nodes()[j];
        let z: f64 = StandardNormal.sample(&mut rng);
        let x = laws[j].mean + laws[j].sd * z;
        let k = q.encode(j, x);
        let f = (x + theta - br.y[k]).powi(2);
        let t = (theta - br.theta_hat[k]).powi(2);
        fid.push(f);
        dd.push((x - br.y[k]).powi(2));
        dt.push(t);
        de.push(f - lambda * t);
    }
    Ok(MonteCarloReport {
        estimate: DistortionReport {
            d_e: de.mean,
            fidelity: fid.mean,
            d_d: dd.mean,
            d_theta: dt.mean,
        },
        se_d_e: de.std_error(),
        se_fidelity: fid.std_error(),
        se_d_d: dd.std_error(),
        se_d_theta: dt.std_error(),
        n_samples,
    })
}

/// Monte Carlo estimate for the linear equilibrium `Z = X + αθ`,
/// `Y = κZ`, `θ̂ = νZ`, sampling the continuous source directly.
pub fn monte_carlo_linear(
    eq: &LinearEquilibrium,
    source: &SourceSpec,
    n_samples: usize,
    seed: u64,
) -> Result<MonteCarloReport> {
    if n_samples == 0 {
        return Err(Error::domain("n_samples must be at least 1"));
    }
    let (sx, st, rho) = (source.sigma_x(), source.sigma_theta(), source.rho());
    let rho_c = (1.0 - rho * rho).max(0.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut de, mut fid, mut dd, mut dt) = (
        Welford::default(),
        Welford::default(),
        Welford::default(),
        Welford::default(),
    );
    for _ in 0..n_samples {
        let z1: f64 = StandardNormal.sample(&mut rng);
        let z2: f64 = StandardNormal.sample(&mut rng);
        let x = sx * z1;
        let theta = st * (rho * z1 + rho_c * z2);
        let z = x + eq.alpha * theta;
        let y = eq.kappa * z;
        let f = (x + theta - y).powi(2);
        let t = (theta - eq.nu * z).powi(2);
        fid.push(f);
        dd.push((x - y).powi(2));
        dt.push(t);
        de.push(f - eq.lambda * t);
    }
    Ok(MonteCarloReport {
        estimate: DistortionReport {
            d_e: de.mean,
            fidelity: fid.mean,
            d_d: dd.mean,
            d_theta: dt.mean,
        },
        se_d_e: de.std_error(),
        se_fidelity: fid.std_error(),
        se_d_d: dd.std_error(),
        se_d_theta: dt.std_error(),
        n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{make_theta_grid, GridScheme};
    use crate::quantizer::best_responses;

    #[test]
    fn combinations_are_lexicographic() {
        assert_eq!(combinations(4, 2), vec![
            vec![0, 1],
            vec![0, 2],
            vec![0, 3],
            vec![1, 2],
            vec![1, 3],
            vec![2, 3]
        ]);
        assert_eq!(combinations(3, 0), vec![Vec::<usize>::new()]);
        assert_eq!(binomial(41, 1), 41.0);
        assert_eq!(binomial(5, 2), 10.0);
    }

    #[test]
    fn single_cell_oracle() {
        let s = SourceSpec::standard();
        let g = make_theta_grid(&s, 3, GridScheme::GaussHermite).unwrap();
        let r = brute_force_design(&s, &g, 1, 0.7, &OracleGrid::default_for(&s)).unwrap();
        assert!((r.report.d_e - (2.0 - 0.7)).abs() < 1e-12);
    }

    #[test]
    fn single_node_oracle_finds_lloyd_split() {
        let s = SourceSpec::standard();
        let g = ThetaGrid::point(0.0);
        let r = brute_force_design(&s, &g, 2, 0.0, &OracleGrid::default_for(&s)).unwrap();
        assert!(r.quantizer.interior(0)[0].abs() < 1e-12);
        assert!((r.report.d_d - 0.363_380).abs() < 1e-6);
    }

    #[test]
    fn oversized_enumeration_rejected() {
        let s = SourceSpec::standard();
        let g = make_theta_grid(&s, 5, GridScheme::GaussHermite).unwrap();
        let err = brute_force_design(&s, &g, 3, 0.0, &OracleGrid::default_for(&s)).unwrap_err();
        match err {
            Error::EnumerationTooLarge { count, .. } => assert_eq!(count, 820f64.powi(5)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let s = SourceSpec::standard();
        let g = make_theta_grid(&s, 3, GridScheme::GaussHermite).unwrap();
        let q = Quantizer::from_interior(2, vec![vec![0.1], vec![-0.2], vec![0.4]]).unwrap();
        let br = best_responses(&q, &s, &g);
        let a = monte_carlo_distortions(&q, &br, &s, &g, 1.0, 10_000, 5).unwrap();
        let b = monte_carlo_distortions(&q, &br, &s, &g, 1.0, 10_000, 5).unwrap();
        assert_eq!(a, b);
        assert!(monte_carlo_distortions(&q, &br, &s, &g, 1.0, 0, 5).is_err());
    }

    #[test]
    fn linear_monte_carlo_matches_closed_form() {
        let s = SourceSpec::new(1.0, 0.8, 0.3).unwrap();
        let eq = LinearEquilibrium::solve(&s, 0.7).unwrap();
        let exact = eq.report(&s).unwrap();
        let mc = monte_carlo_linear(&eq, &s, 200_000, 11).unwrap();
        assert!((mc.estimate.d_d - exact.d_d).abs() < 4.0 * mc.se_d_d);
        assert!((mc.estimate.fidelity - exact.fidelity).abs() < 4.0 * mc.se_fidelity);
        assert!((mc.estimate.d_theta - exact.d_theta).abs() < 4.0 * mc.se_d_theta);
    }
}
