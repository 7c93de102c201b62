//! θ-parameterized scalar quantizers and the followers' best responses.
//!
//! Row `j` of a [`Quantizer`] partitions the real line for the θ node `θ_j`
//! into `M` contiguous cells `(q_{j,m-1}, q_{j,m}]`, with `q_{j,0} = -∞` and
//! `q_{j,M} = +∞`. Cell `m` of every row emits the same message `m`, so the
//! decoder and eavesdropper pool the per-θ cells when forming centroids.
//! Coincident boundaries leave a cell empty for that θ, i.e. the message is
//! never sent for it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{IntervalMoments, SourceSpec, ThetaGrid};
use crate::json;
use crate::report::DistortionReport;

/// Pooled cell probability below which a message counts as never sent.
pub const MASS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    m: usize,
    boundaries: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ZeroCells,
    NoRows,
    WrongLength { row: usize, len: usize, expected: usize },
    NotANumber { row: usize, index: usize },
    OpenEdges { row: usize },
    Decreasing { row: usize, index: usize },
    InfiniteInterior { row: usize, index: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroCells => write!(f, "M must be at least 1"),
            Violation::NoRows => write!(f, "quantizer has no rows"),
            Violation::WrongLength { row, len, expected } => {
                write!(f, "row {row} has {len} entries, expected {expected}")
            }
            Violation::NotANumber { row, index } => write!(f, "row {row} entry {index} is NaN"),
            Violation::OpenEdges { row } => write!(f, "row {row} must start at -inf and end at +inf"),
            Violation::Decreasing { row, index } => {
                write!(f, "row {row} is not nondecreasing at entry {index}")
            }
            Violation::InfiniteInterior { row, index } => {
                write!(f, "row {row} interior boundary {index} is infinite")
            }
        }
    }
}

/// Outcome of [`validate`]: hard violations plus informational empty cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Validation {
    pub violations: Vec<Violation>,
    /// `(row, cell)` pairs whose boundaries coincide.
    pub empty_cells: Vec<(usize, usize)>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check shape, edges and ordering of raw boundary rows.
pub fn validate_rows(m: usize, rows: &[Vec<f64>]) -> Validation {
    let mut out = Validation::default();
    if m == 0 {
        out.violations.push(Violation::ZeroCells);
    }
    if rows.is_empty() {
        out.violations.push(Violation::NoRows);
    }
    for (j, row) in rows.iter().enumerate() {
        if row.len() != m + 1 {
            out.violations.push(Violation::WrongLength {
                row: j,
                len: row.len(),
                expected: m + 1,
            });
            continue;
        }
        for (i, v) in row.iter().enumerate() {
            if v.is_nan() {
                out.violations.push(Violation::NotANumber { row: j, index: i });
            }
        }
        if row[0] != f64::NEG_INFINITY || row[m] != f64::INFINITY {
            out.violations.push(Violation::OpenEdges { row: j });
        }
        for i in 1..m {
            if row[i].is_infinite() {
                out.violations.push(Violation::InfiniteInterior { row: j, index: i });
            }
        }
        for i in 1..row.len() {
            if row[i] < row[i - 1] {
                out.violations.push(Violation::Decreasing { row: j, index: i });
            } else if row[i] == row[i - 1] {
                out.empty_cells.push((j, i - 1));
            }
        }
    }
    out
}

pub fn validate(q: &Quantizer) -> Validation {
    validate_rows(q.m, &q.boundaries)
}

impl Quantizer {
    /// Build from full rows (including the `±∞` edges).
    pub fn new(m: usize, boundaries: Vec<Vec<f64>>) -> Result<Self> {
        let v = validate_rows(m, &boundaries);
        if !v.is_ok() {
            let msgs: Vec<String> = v.violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::InvalidQuantizer(msgs.join("; ")));
        }
        Ok(Quantizer { m, boundaries })
    }

    /// Build from the `M - 1` interior boundaries of each row.
    pub fn from_interior(m: usize, interior: Vec<Vec<f64>>) -> Result<Self> {
        let rows = interior
            .into_iter()
            .map(|inner| {
                let mut row = Vec::with_capacity(inner.len() + 2);
                row.push(f64::NEG_INFINITY);
                row.extend(inner);
                row.push(f64::INFINITY);
                row
            })
            .collect();
        Quantizer::new(m, rows)
    }

    /// Every row equal to `row`.
    pub fn replicated(row: &[f64], n_rows: usize) -> Result<Self> {
        if row.is_empty() {
            return Err(Error::InvalidQuantizer("empty row".into()));
        }
        Quantizer::new(row.len() - 1, vec![row.to_vec(); n_rows])
    }

    /// The single-cell quantizer: no information is sent.
    pub fn trivial(n_rows: usize) -> Self {
        Quantizer {
            m: 1,
            boundaries: vec![vec![f64::NEG_INFINITY, f64::INFINITY]; n_rows],
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_rows(&self) -> usize {
        self.boundaries.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.boundaries
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.boundaries[j]
    }

    pub fn interior(&self, j: usize) -> &[f64] {
        &self.boundaries[j][1..self.m]
    }

    pub(crate) fn interior_mut(&mut self, j: usize) -> &mut [f64] {
        let m = self.m;
        &mut self.boundaries[j][1..m]
    }

    /// Index of the cell containing `x` in row `j` (cells are `(lo, hi]`).
    pub fn encode(&self, j: usize, x: f64) -> usize {
        let inner = self.interior(j);
        inner.partition_point(|&b| b < x)
    }

    pub fn to_file(&self, grid: &ThetaGrid) -> QuantizerFile {
        QuantizerFile {
            m: self.m,
            theta_nodes: grid.nodes().to_vec(),
            boundaries: self.boundaries.clone(),
        }
    }
}

/// On-disk JSON form of a quantizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerFile {
    #[serde(rename = "M")]
    pub m: usize,
    pub theta_nodes: Vec<f64>,
    #[serde(with = "json::ext_f64_matrix")]
    pub boundaries: Vec<Vec<f64>>,
}

impl QuantizerFile {
    pub fn into_quantizer(self) -> Result<(Quantizer, Vec<f64>)> {
        if self.theta_nodes.len() != self.boundaries.len() {
            return Err(Error::InvalidQuantizer(format!(
                "{} theta nodes but {} boundary rows",
                self.theta_nodes.len(),
                self.boundaries.len()
            )));
        }
        Ok((Quantizer::new(self.m, self.boundaries)?, self.theta_nodes))
    }
}

/// Decoder reconstructions, eavesdropper estimates and pooled message
/// probabilities for one quantizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponses {
    pub y: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub cell_mass: Vec<f64>,
}

/// Conditional moments of every (θ node, cell) pair plus their pooled sums.
#[derive(Debug, Clone)]
pub struct CellTable {
    m: usize,
    cells: Vec<IntervalMoments>,
    /// `N_k = Σ_j w_j P(cell k | θ_j)`
    pub pooled_mass: Vec<f64>,
    /// `Σ_j w_j E{X 1[cell k] | θ_j}`
    pub pooled_x: Vec<f64>,
    /// `Σ_j w_j θ_j P(cell k | θ_j)`
    pub pooled_theta: Vec<f64>,
}

impl CellTable {
    pub fn build(q: &Quantizer, source: &SourceSpec, grid: &ThetaGrid) -> Self {
        assert_eq!(
            q.n_rows(),
            grid.len(),
            "quantizer has {} rows but the theta grid has {} nodes",
            q.n_rows(),
            grid.len()
        );
        let m = q.m;
        let mut cells = Vec::with_capacity(m * grid.len());
        let mut pooled_mass = vec![0.0; m];
        let mut pooled_x = vec![0.0; m];
        let mut pooled_theta = vec![0.0; m];
        for (j, (theta, w)) in grid.iter().enumerate() {
            let law = source.conditional(theta);
            let row = q.row(j);
            for k in 0..m {
                let c = law.interval(row[k], row[k + 1]);
                pooled_mass[k] += w * c.mass;
                pooled_x[k] += w * c.first();
                pooled_theta[k] += w * theta * c.mass;
                cells.push(c);
            }
        }
        CellTable {
            m,
            cells,
            pooled_mass,
            pooled_x,
            pooled_theta,
        }
    }

    #[inline]
    pub fn cell(&self, j: usize, k: usize) -> &IntervalMoments {
        &self.cells[j * self.m + k]
    }

    pub fn is_empty_cell(&self, k: usize) -> bool {
        self.pooled_mass[k] < MASS_FLOOR
    }

    fn decoder(&self, q: &Quantizer) -> Vec<f64> {
        (0..self.m)
            .map(|k| {
                if self.is_empty_cell(k) {
                    empty_cell_reconstruction(q, k)
                } else {
                    self.pooled_x[k] / self.pooled_mass[k]
                }
            })
            .collect()
    }

    fn eavesdropper(&self) -> Vec<f64> {
        (0..self.m)
            .map(|k| {
                if self.is_empty_cell(k) {
                    0.0
                } else {
                    self.pooled_theta[k] / self.pooled_mass[k]
                }
            })
            .collect()
    }

    pub fn best_responses(&self, q: &Quantizer) -> BestResponses {
        BestResponses {
            y: self.decoder(q),
            theta_hat: self.eavesdropper(),
            cell_mass: self.pooled_mass.clone(),
        }
    }

    /// Exact distortions for arbitrary (possibly off-equilibrium) responses.
    pub fn distortions(&self, br: &BestResponses, grid: &ThetaGrid, lambda: f64) -> DistortionReport {
        let mut fidelity = 0.0;
        let mut d_d = 0.0;
        let mut d_theta = 0.0;
        for (j, (theta, w)) in grid.iter().enumerate() {
            let (mut fj, mut dj, mut tj) = (0.0, 0.0, 0.0);
            for k in 0..self.m {
                let c = self.cell(j, k);
                if c.mass == 0.0 {
                    continue;
                }
                let y = br.y[k];
                // x + θ - y = x - (y - θ)
                fj += c.second_about(y - theta);
                dj += c.second_about(y);
                let e = theta - br.theta_hat[k];
                tj += c.mass * e * e;
            }
            fidelity += w * fj;
            d_d += w * dj;
            d_theta += w * tj;
        }
        DistortionReport::new(fidelity, d_d, d_theta, lambda)
    }
}

/// Midpoint of the cell's span over all rows, or 0 when that span is unbounded.
fn empty_cell_reconstruction(q: &Quantizer, k: usize) -> f64 {
    let lo = q.rows().iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
    let hi = q.rows().iter().map(|r| r[k + 1]).fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() && hi.is_finite() {
        0.5 * (lo + hi)
    } else {
        0.0
    }
}

/// Pooled centroid of X per message.
pub fn decoder_best_response(q: &Quantizer, source: &SourceSpec, grid: &ThetaGrid) -> Vec<f64> {
    CellTable::build(q, source, grid).decoder(q)
}

/// Pooled centroid of θ per message.
pub fn eavesdropper_best_response(q: &Quantizer, source: &SourceSpec, grid: &ThetaGrid) -> Vec<f64> {
    CellTable::build(q, source, grid).eavesdropper()
}

pub fn best_responses(q: &Quantizer, source: &SourceSpec, grid: &ThetaGrid) -> BestResponses {
    CellTable::build(q, source, grid).best_responses(q)
}

/// Distortions of `q` against the responses `br`, which need not be the
/// best responses to `q`.
pub fn distortions(
    q: &Quantizer,
    br: &BestResponses,
    source: &SourceSpec,
    grid: &ThetaGrid,
    lambda: f64,
) -> Result<DistortionReport> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    if br.y.len() != q.m || br.theta_hat.len() != q.m {
        return Err(Error::InvalidQuantizer(format!(
            "responses have {} / {} entries for M = {}",
            br.y.len(),
            br.theta_hat.len(),
            q.m
        )));
    }
    Ok(CellTable::build(q, source, grid).distortions(br, grid, lambda))
}

/// Quantizer, its best responses and the resulting distortions.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub table: CellTable,
    pub responses: BestResponses,
    pub report: DistortionReport,
}

pub fn evaluate(q: &Quantizer, source: &SourceSpec, grid: &ThetaGrid, lambda: f64) -> Evaluation {
    let table = CellTable::build(q, source, grid);
    let responses = table.best_responses(q);
    let report = table.distortions(&responses, grid, lambda);
    Evaluation {
        table,
        responses,
        report,
    }
}
