//! Quantizer similarity across θ nodes, the fully revealing Lloyd-Max
//! baseline, and the large-λ limit identity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{SourceSpec, ThetaGrid};
use crate::quantizer::Quantizer;
use crate::report::DistortionReport;

/// Pairwise KL divergences (nats) between the message distributions of the
/// θ rows, and their maximum. `+∞` marks an absolute-continuity failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub pairwise: Vec<Vec<f64>>,
    pub d_max: f64,
}

/// Probability of each cell of row `j` under the marginal law of X.
pub fn row_masses(q: &Quantizer, source: &SourceSpec, j: usize) -> Vec<f64> {
    let law = source.marginal_x();
    let row = q.row(j);
    row.windows(2).map(|w| law.interval(w[0], w[1]).mass).collect()
}

fn kl(p: &[f64], r: &[f64]) -> f64 {
    let mut d = 0.0;
    for (&pa, &pb) in p.iter().zip(r) {
        if pa == 0.0 {
            continue;
        }
        if pb == 0.0 {
            return f64::INFINITY;
        }
        d += pa * (pa / pb).ln();
    }
    d.max(0.0)
}

/// `D_KL(θ_a, θ_b) = Σ_m p_m(a) log(p_m(a) / p_m(b))`.
pub fn kl_similarity(q: &Quantizer, source: &SourceSpec, a: usize, b: usize) -> Result<f64> {
    let n = q.n_rows();
    for index in [a, b] {
        if index >= n {
            return Err(Error::IndexOutOfRange { index, len: n });
        }
    }
    Ok(kl(&row_masses(q, source, a), &row_masses(q, source, b)))
}

pub fn max_kl(q: &Quantizer, source: &SourceSpec, grid: &ThetaGrid) -> SimilarityReport {
    assert_eq!(q.n_rows(), grid.len(), "quantizer rows must match theta nodes");
    let masses: Vec<Vec<f64>> = (0..q.n_rows()).map(|j| row_masses(q, source, j)).collect();
    let pairwise: Vec<Vec<f64>> = masses
        .iter()
        .map(|pa| masses.iter().map(|pb| kl(pa, pb)).collect())
        .collect();
    let d_max = pairwise
        .iter()
        .flatten()
        .copied()
        .fold(0.0, f64::max);
    SimilarityReport { pairwise, d_max }
}

/// Fixed point of the classical Lloyd-Max iteration for the marginal of X.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LloydMax {
    /// Full row, `-∞` and `+∞` included.
    pub boundaries: Vec<f64>,
    pub reconstructions: Vec<f64>,
    pub distortion: f64,
    pub iterations: usize,
}

impl LloydMax {
    /// The fully revealing quantizer: the same row for every θ node.
    pub fn replicated(&self, n_rows: usize) -> Quantizer {
        Quantizer::replicated(&self.boundaries, n_rows).expect("Lloyd-Max row is valid")
    }
}

const LLOYD_TOL: f64 = 1e-12;
const LLOYD_MAX_ITERS: usize = 200_000;

pub fn lloyd_max(source: &SourceSpec, m: usize) -> LloydMax {
    let law = source.marginal_x();
    let sigma = source.sigma_x();
    let m = m.max(1);
    let mut bounds: Vec<f64> = (0..=m)
        .map(|k| match k {
            0 => f64::NEG_INFINITY,
            k if k == m => f64::INFINITY,
            k => sigma * 2.0 * (2.0 * k as f64 / m as f64 - 1.0),
        })
        .collect();
    let centroids = |bounds: &[f64]| -> (Vec<f64>, f64) {
        let mut y = Vec::with_capacity(m);
        let mut cells = Vec::with_capacity(m);
        for w in bounds.windows(2) {
            let c = law.interval(w[0], w[1]);
            y.push(if c.mass > 0.0 { c.first() / c.mass } else { 0.5 * (w[0] + w[1]) });
            cells.push(c);
        }
        let d = cells.iter().zip(&y).map(|(c, &yk)| c.second_about(yk)).sum();
        (y, d)
    };
    let (mut y, mut dist) = centroids(&bounds);
    let mut iterations = 0;
    while iterations < LLOYD_MAX_ITERS && m > 1 {
        iterations += 1;
        let mut shift: f64 = 0.0;
        for k in 1..m {
            let b = 0.5 * (y[k - 1] + y[k]);
            shift = shift.max((b - bounds[k]).abs());
            bounds[k] = b;
        }
        let (ny, nd) = centroids(&bounds);
        let delta = dist - nd;
        y = ny;
        dist = nd;
        if delta < LLOYD_TOL && shift < 1e-10 * sigma {
            break;
        }
    }
    LloydMax {
        boundaries: bounds,
        reconstructions: y,
        distortion: dist,
        iterations,
    }
}

/// Residual of the large-λ identity `fidelity = d_d + σ_θ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitCheck {
    pub lambda: f64,
    pub residual: f64,
}

/// Meaningful for ρ = 0 and large λ; the caller interprets the residual.
pub fn limit_identities(report: &DistortionReport, source: &SourceSpec, lambda: f64) -> Result<LimitCheck> {
    if source.rho() != 0.0 {
        return Err(Error::domain("the large-lambda identity assumes rho = 0"));
    }
    Ok(LimitCheck {
        lambda,
        residual: (report.fidelity - (report.d_d + source.var_theta())).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const INF: f64 = f64::INFINITY;

    #[test]
    fn kl_examples() {
        let s = SourceSpec::standard();
        let q = Quantizer::new(2, vec![vec![-INF, 0.0, INF], vec![-INF, 0.5, INF], vec![-INF, 0.0, INF]])
            .unwrap();
        assert_eq!(kl_similarity(&q, &s, 0, 2).unwrap(), 0.0);
        let d = kl_similarity(&q, &s, 0, 1).unwrap();
        let (p1, p2): (f64, f64) = (0.691_462_461_274_013, 0.308_537_538_725_987);
        let want = 0.5 * (0.5 / p1).ln() + 0.5 * (0.5 / p2).ln();
        assert!((d - want).abs() < 1e-12);
        assert!((d - 0.079_281_9).abs() < 1e-6);
        assert!(matches!(kl_similarity(&q, &s, 0, 3), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn kl_infinite_on_skipped_message() {
        let s = SourceSpec::standard();
        let q = Quantizer::new(3, vec![vec![-INF, -0.5, 0.5, INF], vec![-INF, 0.1, 0.1, INF]]).unwrap();
        assert_eq!(kl_similarity(&q, &s, 0, 1).unwrap(), INF);
        assert!(kl_similarity(&q, &s, 1, 0).unwrap().is_finite());
    }

    #[test]
    fn max_kl_matrix_shape() {
        let s = SourceSpec::standard();
        let g = ThetaGrid::new(vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
        let q = Quantizer::from_interior(3, vec![vec![-1.0, 0.2], vec![-0.3, 1.4]]).unwrap();
        let rep = max_kl(&q, &s, &g);
        assert_eq!(rep.pairwise.len(), 2);
        assert_eq!(rep.pairwise[0][0], 0.0);
        assert_eq!(rep.pairwise[1][1], 0.0);
        assert!(rep.pairwise[0][1] > 0.0 && rep.pairwise[1][0] > 0.0);
        assert_ne!(rep.pairwise[0][1], rep.pairwise[1][0]);
        assert_eq!(rep.d_max, rep.pairwise[0][1].max(rep.pairwise[1][0]));

        let same = Quantizer::from_interior(2, vec![vec![0.3], vec![0.3]]).unwrap();
        assert_eq!(max_kl(&same, &s, &g).d_max, 0.0);
    }

    #[test]
    fn lloyd_max_anchors() {
        let s = SourceSpec::standard();
        assert_eq!(lloyd_max(&s, 1).distortion, 1.0);
        let two = lloyd_max(&s, 2);
        assert!(two.boundaries[1].abs() < 1e-12);
        assert!((two.reconstructions[1] - 0.797_884_560_8).abs() < 1e-9);
        assert!((two.distortion - 0.363_380_227_6).abs() < 1e-9);
        assert!((lloyd_max(&s, 4).distortion - 0.1175).abs() < 1e-4);
        assert!((lloyd_max(&s, 8).distortion - 0.03454).abs() < 1e-5);
    }

    #[test]
    fn lloyd_max_scales_with_sigma() {
        let s = SourceSpec::new(3.0, 1.0, 0.0).unwrap();
        let unit = lloyd_max(&SourceSpec::standard(), 4);
        let scaled = lloyd_max(&s, 4);
        assert!((scaled.distortion - 9.0 * unit.distortion).abs() < 1e-9);
    }

    #[test]
    fn limit_identity_residual() {
        let s = SourceSpec::standard();
        let r = DistortionReport::new(1.5, 0.5, 1.0, 1e7);
        assert!(limit_identities(&r, &s, 1e7).unwrap().residual.abs() < 1e-15);
        let s = SourceSpec::new(1.0, 1.0, 0.3).unwrap();
        assert!(limit_identities(&r, &s, 1e7).is_err());
    }
}
