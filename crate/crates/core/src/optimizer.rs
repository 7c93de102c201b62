//! Gradient design of the encoder's θ-parameterized quantizer.
//!
//! Each iteration steps every interior boundary against the total
//! derivative of the encoder Lagrangian (best responses included), projects
//! each row back onto the nondecreasing cone, recomputes the decoder and
//! eavesdropper centroids and re-evaluates the Lagrangian. A backtracking
//! rule halves the step whenever the Lagrangian would increase, so accepted
//! iterates never get worse.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{SourceSpec, ThetaGrid};
use crate::json;
use crate::metrics;
use crate::quantizer::{evaluate, BestResponses, Evaluation, Quantizer, MASS_FLOOR};
use crate::report::DistortionReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    #[default]
    Analytic,
    FiniteDifference,
}

impl std::str::FromStr for GradientMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(GradientMode::Analytic),
            "finite-difference" => Ok(GradientMode::FiniteDifference),
            other => Err(Error::Config(format!(
                "unknown gradient mode `{other}` (expected `analytic` or `finite-difference`)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimOptions {
    /// Base step size.
    pub eta: f64,
    /// Stop once an accepted step lowers the Lagrangian by less than this.
    pub eps: f64,
    pub max_iters: usize,
    /// Random initializations on top of the replicated Lloyd-Max start.
    pub n_restarts: usize,
    pub seed: u64,
    pub gradient_mode: GradientMode,
    #[serde(skip)]
    pub record_trajectory: bool,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            eta: 0.05,
            eps: 1e-9,
            max_iters: 20_000,
            n_restarts: 8,
            seed: 0,
            gradient_mode: GradientMode::Analytic,
            record_trajectory: false,
        }
    }
}

impl OptimOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::Config(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be > 0, got {}", self.eps)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if self.n_restarts == 0 {
            return Err(Error::Config("n_restarts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Smallest step the backtracking rule will try, relative to `eta`.
const MIN_STEP_FACTOR: f64 = 1.0 / (1u64 << 20) as f64;

/// Central-difference step of the finite-difference gradient.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignResult {
    pub quantizer: Quantizer,
    pub responses: BestResponses,
    pub report: DistortionReport,
    pub iterations: usize,
    pub converged: bool,
    /// Lagrangian after every accepted step, starting from the initial value.
    pub trajectory: Option<Vec<f64>>,
    /// `‖q - P(q - ∇)‖` at the returned quantizer.
    pub projected_gradient_norm: f64,
    /// Index of the initialization that produced this result (0 = Lloyd-Max).
    pub restart: usize,
}

/// JSON form: the quantizer file extended with responses and distortions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFile {
    #[serde(rename = "M")]
    pub m: usize,
    pub theta_nodes: Vec<f64>,
    #[serde(with = "json::ext_f64_matrix")]
    pub boundaries: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub d_e: f64,
    pub d_d: f64,
    pub d_theta: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl DesignResult {
    pub fn to_file(&self, grid: &ThetaGrid) -> DesignFile {
        DesignFile {
            m: self.quantizer.m(),
            theta_nodes: grid.nodes().to_vec(),
            boundaries: self.quantizer.rows().to_vec(),
            y: self.responses.y.clone(),
            theta_hat: self.responses.theta_hat.clone(),
            d_e: self.report.d_e,
            d_d: self.report.d_d,
            d_theta: self.report.d_theta,
            iterations: self.iterations,
            converged: self.converged,
        }
    }
}

/// Gradient split into its total and the eavesdropper chain-rule term, which
/// vanishes at the eavesdropper's best response.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientParts {
    pub total: Vec<Vec<f64>>,
    pub eavesdropper_chain: Vec<Vec<f64>>,
}

fn gradient_from_eval(
    q: &Quantizer,
    eval: &Evaluation,
    source: &SourceSpec,
    grid: &ThetaGrid,
    lambda: f64,
) -> GradientParts {
    let m = q.m();
    let table = &eval.table;
    let y = &eval.responses.y;
    let th = &eval.responses.theta_hat;
    let mut total = Vec::with_capacity(grid.len());
    let mut eaves = Vec::with_capacity(grid.len());
    for (j, (theta, w)) in grid.iter().enumerate() {
        let law = source.conditional(theta);
        let row = q.row(j);
        let mut g_row = vec![0.0; m.saturating_sub(1)];
        let mut e_row = vec![0.0; m.saturating_sub(1)];
        for i in 1..m {
            let b = row[i];
            let fw = w * law.pdf(b);
            if !(fw > 0.0) {
                continue;
            }
            // integrand of the Lagrangian for cell k, evaluated at x = b
            let integrand = |k: usize| {
                let u = b + theta - y[k];
                let e = theta - th[k];
                u * u - lambda * e * e
            };
            let direct = fw * (integrand(i - 1) - integrand(i));
            let mut chain_y = 0.0;
            let mut chain_t = 0.0;
            // b is the upper edge of cell i-1 and the lower edge of cell i
            for (k, sign) in [(i - 1, 1.0), (i, -1.0)] {
                let n = table.pooled_mass[k];
                if n < MASS_FLOOR {
                    continue;
                }
                let a = table.pooled_x[k];
                let t = table.pooled_theta[k];
                let dl_dy = -2.0 * (a + t - y[k] * n);
                let dy_db = sign * fw * (b - y[k]) / n;
                chain_y += dl_dy * dy_db;
                let dl_dth = -2.0 * lambda * (th[k] * n - t);
                let dth_db = sign * fw * (theta - th[k]) / n;
                chain_t += dl_dth * dth_db;
            }
            g_row[i - 1] = direct + chain_y + chain_t;
            e_row[i - 1] = chain_t;
        }
        total.push(g_row);
        eaves.push(e_row);
    }
    GradientParts {
        total,
        eavesdropper_chain: eaves,
    }
}

pub fn gradient_parts(q: &Quantizer, source: &SourceSpec, grid: &ThetaGrid, lambda: f64) -> GradientParts {
    let eval = evaluate(q, source, grid, lambda);
    gradient_from_eval(q, &eval, source, grid, lambda)
}

/// Total derivative of the encoder Lagrangian with respect to every interior
/// boundary, best responses included. Shape: `rows × (M - 1)`.
pub fn gradient(q: &Quantizer, source: &SourceSpec, grid: &ThetaGrid, lambda: f64) -> Vec<Vec<f64>> {
    gradient_parts(q, source, grid, lambda).total
}

/// Central differences of the Lagrangian with best responses recomputed at
/// every probe.
pub fn finite_difference_gradient(
    q: &Quantizer,
    source: &SourceSpec,
    grid: &ThetaGrid,
    lambda: f64,
    step: f64,
) -> Vec<Vec<f64>> {
    let m = q.m();
    let mut probe = q.clone();
    let mut out = vec![vec![0.0; m.saturating_sub(1)]; q.n_rows()];
    for (j, g_row) in out.iter_mut().enumerate() {
        for i in 0..m.saturating_sub(1) {
            let b = q.interior(j)[i];
            probe.interior_mut(j)[i] = b + step;
            let up = evaluate(&probe, source, grid, lambda).report.d_e;
            probe.interior_mut(j)[i] = b - step;
            let down = evaluate(&probe, source, grid, lambda).report.d_e;
            probe.interior_mut(j)[i] = b;
            g_row[i] = (up - down) / (2.0 * step);
        }
    }
    out
}

/// Euclidean projection of a boundary row onto the nondecreasing cone by
/// pool-adjacent-violators. Infinite entries (the outer edges) are left in
/// place; only the finite interior is pooled.
pub fn project_monotone(row: &[f64]) -> Vec<f64> {
    let mut out = row.to_vec();
    let start = out.iter().position(|v| v.is_finite()).unwrap_or(out.len());
    let end = out.iter().rposition(|v| v.is_finite()).map_or(start, |e| e + 1);
    if start < end {
        pool_adjacent_violators(&mut out[start..end]);
    }
    out
}

fn pool_adjacent_violators(xs: &mut [f64]) {
    // blocks of (mean, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(xs.len());
    for &x in xs.iter() {
        blocks.push((x, 1));
        while blocks.len() > 1 {
            let (m2, c2) = blocks[blocks.len() - 1];
            let (m1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let c = c1 + c2;
            *blocks.last_mut().unwrap() = ((m1 * c1 as f64 + m2 * c2 as f64) / c as f64, c);
        }
    }
    let mut i = 0;
    for (mean, count) in blocks {
        xs[i..i + count].fill(mean);
        i += count;
    }
}

fn descend_step(q: &Quantizer, grad: &[Vec<f64>], step: f64) -> Quantizer {
    let mut next = q.clone();
    for (j, g) in grad.iter().enumerate() {
        let inner = next.interior_mut(j);
        for (b, d) in inner.iter_mut().zip(g) {
            *b -= step * d;
        }
        pool_adjacent_violators(inner);
    }
    next
}

fn projected_gradient_norm(q: &Quantizer, grad: &[Vec<f64>]) -> f64 {
    let moved = descend_step(q, grad, 1.0);
    let mut sq = 0.0;
    for j in 0..q.n_rows() {
        for (a, b) in q.interior(j).iter().zip(moved.interior(j)) {
            sq += (a - b) * (a - b);
        }
    }
    sq.sqrt()
}

fn check_design_inputs(source: &SourceSpec, grid: &ThetaGrid, m: usize, lambda: f64) -> Result<()> {
    if m < 1 {
        return Err(Error::domain("M must be at least 1"));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    if source.is_degenerate() {
        return Err(Error::domain(
            "quantizer design needs |rho| < 1 (the conditional density of X given theta)",
        ));
    }
    if grid.is_empty() {
        return Err(Error::domain("theta grid is empty"));
    }
    Ok(())
}

/// Lloyd-Max boundaries copied to every θ row.
pub fn lloyd_max_init(source: &SourceSpec, grid: &ThetaGrid, m: usize) -> Quantizer {
    let lm = metrics::lloyd_max(source, m);
    Quantizer::replicated(&lm.boundaries, grid.len()).expect("Lloyd-Max row is a valid quantizer row")
}

/// Sorted standard-normal draws scaled by σ_X, independently per row.
pub fn random_init(source: &SourceSpec, grid: &ThetaGrid, m: usize, seed: u64) -> Quantizer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let interior = (0..grid.len())
        .map(|_| {
            let mut row: Vec<f64> = (0..m - 1)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * source.sigma_x()
                })
                .collect();
            row.sort_by(f64::total_cmp);
            row
        })
        .collect();
    Quantizer::from_interior(m, interior).expect("sorted finite draws form a valid quantizer")
}

fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed.wrapping_add((restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// One descent run. Without `init`, starts from the replicated Lloyd-Max
/// quantizer.
pub fn design(
    source: &SourceSpec,
    grid: &ThetaGrid,
    m: usize,
    lambda: f64,
    opts: &OptimOptions,
    init: Option<Quantizer>,
) -> Result<DesignResult> {
    check_design_inputs(source, grid, m, lambda)?;
    opts.validate()?;
    let mut q = match init {
        Some(q) => {
            if q.m() != m || q.n_rows() != grid.len() {
                return Err(Error::InvalidQuantizer(format!(
                    "initial quantizer is {}x{} cells, expected {}x{}",
                    q.n_rows(),
                    q.m(),
                    grid.len(),
                    m
                )));
            }
            q
        }
        None => lloyd_max_init(source, grid, m),
    };

    let grad_of = |q: &Quantizer, eval: &Evaluation| match opts.gradient_mode {
        GradientMode::Analytic => gradient_from_eval(q, eval, source, grid, lambda).total,
        GradientMode::FiniteDifference => finite_difference_gradient(q, source, grid, lambda, FD_STEP),
    };

    let mut eval = evaluate(&q, source, grid, lambda);
    let mut trajectory = opts.record_trajectory.then(|| vec![eval.report.d_e]);
    let min_step = opts.eta * MIN_STEP_FACTOR;
    let mut step = opts.eta;
    let mut iterations = 0;
    let mut converged = m == 1;
    let mut grad = grad_of(&q, &eval);

    while !converged && iterations < opts.max_iters {
        iterations += 1;
        let current = eval.report.d_e;
        let accepted = loop {
            let trial = descend_step(&q, &grad, step);
            if trial == q {
                break None;
            }
            let trial_eval = evaluate(&trial, source, grid, lambda);
            if trial_eval.report.d_e <= current {
                break Some((trial, trial_eval));
            }
            if step <= min_step {
                break None;
            }
            step = (0.5 * step).max(min_step);
        };
        let Some((next, next_eval)) = accepted else {
            // no admissible step decreases the Lagrangian: ΔD = 0
            converged = true;
            break;
        };
        let delta = current - next_eval.report.d_e;
        q = next;
        eval = next_eval;
        if let Some(t) = trajectory.as_mut() {
            t.push(eval.report.d_e);
        }
        grad = grad_of(&q, &eval);
        step = (2.0 * step).min(opts.eta);
        if delta < opts.eps {
            converged = true;
        }
    }

    let projected_gradient_norm = projected_gradient_norm(&q, &grad);
    Ok(DesignResult {
        quantizer: q,
        responses: eval.responses,
        report: eval.report,
        iterations,
        converged,
        trajectory,
        projected_gradient_norm,
        restart: 0,
    })
}

/// Initializations used by [`multistart`]: index 0 is the replicated
/// Lloyd-Max quantizer, indices `1..=n_restarts` are seeded random draws.
pub fn initial_quantizers(source: &SourceSpec, grid: &ThetaGrid, m: usize, opts: &OptimOptions) -> Vec<Quantizer> {
    let mut inits = Vec::with_capacity(opts.n_restarts + 1);
    inits.push(lloyd_max_init(source, grid, m));
    if m > 1 {
        for r in 1..=opts.n_restarts {
            inits.push(random_init(source, grid, m, restart_seed(opts.seed, r)));
        }
    }
    inits
}

/// Runs [`design`] from every initialization in parallel and keeps the
/// lowest Lagrangian (ties go to the lowest restart index).
pub fn multistart(
    source: &SourceSpec,
    grid: &ThetaGrid,
    m: usize,
    lambda: f64,
    opts: &OptimOptions,
) -> Result<DesignResult> {
    check_design_inputs(source, grid, m, lambda)?;
    opts.validate()?;
    let inits = initial_quantizers(source, grid, m, opts);
    let results: Vec<DesignResult> = inits
        .into_par_iter()
        .enumerate()
        .map(|(idx, init)| {
            design(source, grid, m, lambda, opts, Some(init)).map(|mut r| {
                r.restart = idx;
                r
            })
        })
        .collect::<Result<_>>()?;
    let key = |r: &DesignResult| {
        if r.report.d_e.is_nan() {
            f64::INFINITY
        } else {
            r.report.d_e
        }
    };
    let best = results
        .into_iter()
        .reduce(|best, r| if key(&r) < key(&best) { r } else { best })
        .expect("at least one initialization");
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{make_theta_grid, GridScheme};

    const INF: f64 = f64::INFINITY;

    #[test]
    fn projection_examples() {
        assert_eq!(project_monotone(&[-INF, 1.0, 2.0, INF]), vec![-INF, 1.0, 2.0, INF]);
        assert_eq!(project_monotone(&[-INF, 2.0, 1.0, INF]), vec![-INF, 1.5, 1.5, INF]);
        assert_eq!(project_monotone(&[-INF, 3.0, 1.0, 2.0, INF]), vec![-INF, 2.0, 2.0, 2.0, INF]);
        assert_eq!(project_monotone(&[-INF, INF]), vec![-INF, INF]);
    }

    #[test]
    fn symmetric_split_is_stationary_at_zero_theta() {
        let s = SourceSpec::standard();
        let g = ThetaGrid::point(0.0);
        let q = Quantizer::from_interior(2, vec![vec![0.0]]).unwrap();
        let grad = gradient(&q, &s, &g, 0.0);
        assert!(grad[0][0].abs() < 1e-15);

        let g = make_theta_grid(&s, 4, GridScheme::GaussHermite).unwrap();
        let q = Quantizer::from_interior(2, vec![vec![0.0]; 4]).unwrap();
        let grad = gradient(&q, &s, &g, 0.0);
        for j in 0..2 {
            assert!((grad[j][0] + grad[3 - j][0]).abs() < 1e-14, "{grad:?}");
        }
    }

    #[test]
    fn analytic_matches_finite_differences() {
        let s = SourceSpec::new(1.2, 0.8, 0.3).unwrap();
        let g = make_theta_grid(&s, 3, GridScheme::GaussHermite).unwrap();
        let q = Quantizer::from_interior(
            3,
            vec![vec![-0.7, 0.4], vec![-0.2, 0.9], vec![-1.1, 0.1]],
        )
        .unwrap();
        for lambda in [0.0, 1.0, 5.0] {
            let a = gradient(&q, &s, &g, lambda);
            let f = finite_difference_gradient(&q, &s, &g, lambda, FD_STEP);
            for (ra, rf) in a.iter().zip(&f) {
                for (x, y) in ra.iter().zip(rf) {
                    assert!((x - y).abs() < 1e-7 * (1.0 + y.abs()), "{x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn design_rejects_bad_inputs() {
        let s = SourceSpec::standard();
        let g = ThetaGrid::point(0.0);
        let opts = OptimOptions::default();
        assert!(design(&s, &g, 0, 0.0, &opts, None).is_err());
        assert!(design(&s, &g, 2, -1.0, &opts, None).is_err());
        let d = SourceSpec::new(1.0, 1.0, 1.0).unwrap();
        assert!(design(&d, &g, 2, 0.0, &opts, None).is_err());
        let bad = OptimOptions { eta: 0.0, ..opts };
        assert!(design(&s, &g, 2, 0.0, &bad, None).is_err());
    }

    #[test]
    fn single_cell_design_is_immediate() {
        let s = SourceSpec::standard();
        let g = make_theta_grid(&s, 5, GridScheme::GaussHermite).unwrap();
        let r = design(&s, &g, 1, 0.3, &OptimOptions::default(), None).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
        assert!((r.report.fidelity - 2.0).abs() < 1e-12);
    }

    #[test]
    fn descent_trajectory_is_monotone() {
        let s = SourceSpec::standard();
        let g = make_theta_grid(&s, 5, GridScheme::GaussHermite).unwrap();
        let opts = OptimOptions {
            record_trajectory: true,
            max_iters: 3000,
            ..OptimOptions::default()
        };
        let init = random_init(&s, &g, 4, 7);
        let r = design(&s, &g, 4, 1.0, &opts, Some(init)).unwrap();
        let t = r.trajectory.unwrap();
        assert!(t.len() > 1);
        assert!(t.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert_eq!(*t.last().unwrap(), r.report.d_e);
    }
}
