//! Lasso and nuclear-norm least squares, their median-of-blocks versions and
//! the associated penalty levels.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::aggregate::{block_estimates, partition_blocks};
use crate::constants::{p_star, psi};
use crate::covariance::SymMatrix;
use crate::error::{Error, Result};
use crate::median::{geometric_median, MedianOptions, MedianResult, PointSet};

/// Regression design `X` (rows are observations) and responses `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    x: DMatrix<f64>,
    y: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::arg("design must have n >= 1 rows and D >= 1 columns"));
        }
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: y.len(),
            });
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::arg("design or responses contain a non-finite value"));
        }
        Ok(Self { x, y })
    }

    /// From observation rows.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: bad.len(),
            });
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]), y)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Rows `range` as a new design.
    pub fn rows(&self, range: std::ops::Range<usize>) -> DesignMatrix {
        DesignMatrix {
            x: self.x.rows(range.start, range.len()).into_owned(),
            y: self.y[range].to_vec(),
        }
    }

    /// The listed rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> DesignMatrix {
        DesignMatrix {
            x: self.x.select_rows(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// Same design with responses replaced.
    pub fn with_responses(&self, y: Vec<f64>) -> Result<DesignMatrix> {
        DesignMatrix::new(self.x.clone(), y)
    }

    /// `(1/n) ||Y - X lambda||^2 + eps ||lambda||_1`.
    pub fn lasso_objective(&self, lambda: &[f64], eps: f64) -> f64 {
        let r = self.residual(lambda);
        r.norm_squared() / self.n() as f64 + eps * lambda.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn residual(&self, lambda: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(&self.y) - &self.x * DVector::from_column_slice(lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoOptions {
    pub penalty: f64,
    /// Stop once no coordinate moves by more than this in a sweep and the
    /// subgradient conditions hold to the same tolerance.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl LassoOptions {
    pub fn new(penalty: f64) -> Self {
        Self {
            penalty,
            tol: 1e-8,
            max_sweeps: 100_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.penalty >= 0.0) || !self.penalty.is_finite() {
            return Err(Error::arg(format!("lasso penalty {} must be >= 0", self.penalty)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::arg("lasso tol must be positive"));
        }
        if self.max_sweeps == 0 {
            return Err(Error::arg("lasso max_sweeps must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coef: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
    pub objective: f64,
    /// Objective after every sweep.
    pub history: Vec<f64>,
}

fn soft(z: f64, level: f64) -> f64 {
    if z > level {
        z - level
    } else if z < -level {
        z + level
    } else {
        0.0
    }
}

/// Cyclic coordinate descent from zero, with exact soft-threshold updates.
pub fn lasso(dm: &DesignMatrix, opts: &LassoOptions) -> Result<LassoFit> {
    lasso_from(dm, opts, &vec![0.0; dm.dim()])
}

/// Cyclic coordinate descent from a warm start.
pub fn lasso_from(dm: &DesignMatrix, opts: &LassoOptions, start: &[f64]) -> Result<LassoFit> {
    opts.validate()?;
    let (n, d) = (dm.n(), dm.dim());
    if start.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: start.len(),
        });
    }
    let cols = dm.x.as_slice();
    let col = |i: usize| &cols[i * n..(i + 1) * n];
    let scale = 2.0 / n as f64;
    let curvature: Vec<f64> = (0..d)
        .map(|i| scale * col(i).iter().map(|v| v * v).sum::<f64>())
        .collect();
    let mut coef = start.to_vec();
    let mut r: Vec<f64> = dm.residual(&coef).iter().copied().collect();
    let mut history = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    let all: Vec<usize> = (0..d).collect();
    let objective_of = |coef: &[f64], r: &[f64]| {
        r.iter().map(|v| v * v).sum::<f64>() / n as f64 + opts.penalty * coef.iter().map(|v| v.abs()).sum::<f64>()
    };
    // Full sweeps alternate with sweeps over the current support until the
    // support settles; convergence is only declared after a full sweep.
    'outer: while sweeps < opts.max_sweeps {
        sweeps += 1;
        let change = sweep(&all, &mut coef, &mut r, &col, &curvature, scale, opts.penalty);
        history.push(objective_of(&coef, &r));
        if change <= opts.tol && kkt_violation(dm, &coef, &r, opts.penalty) <= opts.tol {
            converged = true;
            break;
        }
        let active: Vec<usize> = (0..d).filter(|&i| coef[i] != 0.0).collect();
        loop {
            if sweeps >= opts.max_sweeps {
                break 'outer;
            }
            sweeps += 1;
            let change = sweep(&active, &mut coef, &mut r, &col, &curvature, scale, opts.penalty);
            history.push(objective_of(&coef, &r));
            if change <= opts.tol {
                break;
            }
        }
    }
    let objective = dm.lasso_objective(&coef, opts.penalty);
    Ok(LassoFit {
        coef,
        converged,
        sweeps,
        objective,
        history,
    })
}

/// One cyclic pass over `indices`; returns the largest coordinate move.
fn sweep<'a>(
    indices: &[usize],
    coef: &mut [f64],
    r: &mut [f64],
    col: &impl Fn(usize) -> &'a [f64],
    curvature: &[f64],
    scale: f64,
    penalty: f64,
) -> f64 {
    let mut max_change: f64 = 0.0;
    for &i in indices {
        let xi = col(i);
        let old = coef[i];
        let new = if curvature[i] > 0.0 {
            let corr: f64 = xi.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            soft(scale * corr + curvature[i] * old, penalty) / curvature[i]
        } else {
            0.0
        };
        let delta = new - old;
        if delta != 0.0 {
            for (rj, xj) in r.iter_mut().zip(xi) {
                *rj -= delta * xj;
            }
            coef[i] = new;
            max_change = max_change.max(delta.abs());
        }
    }
    max_change
}

/// Largest deviation of the correlations from the Lasso subgradient
/// conditions, given the current residual `r`.
fn kkt_violation(dm: &DesignMatrix, coef: &[f64], r: &[f64], eps: f64) -> f64 {
    let n = dm.n();
    let cols = dm.x.as_slice();
    coef.iter()
        .enumerate()
        .map(|(i, &c)| {
            let g = 2.0 / n as f64 * cols[i * n..(i + 1) * n].iter().zip(r).map(|(a, b)| a * b).sum::<f64>();
            if c == 0.0 {
                (g.abs() - eps).max(0.0)
            } else {
                (g - eps * c.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Correlations `(2/n) X^T (Y - X lambda)`; at a solution these are the
/// subgradient certificates.
pub fn lasso_correlations(dm: &DesignMatrix, lambda: &[f64]) -> Vec<f64> {
    let r = dm.residual(lambda);
    (dm.x.tr_mul(&r) * (2.0 / dm.n() as f64)).iter().copied().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyRegime {
    /// `4 sigma t sqrt(log D / n)` for Gaussian noise.
    Gaussian,
    /// `95 M sigma sqrt((t + 2/7)/n * log 2D)` for the median-Lasso.
    Robust,
}

pub fn lasso_penalty(sigma: f64, n: usize, d: usize, t: f64, regime: PenaltyRegime, m: Option<f64>) -> Result<f64> {
    if !(sigma > 0.0 && t > 0.0) || n == 0 || d == 0 {
        return Err(Error::arg("sigma, t, n and D must be positive"));
    }
    let (n, d) = (n as f64, d as f64);
    match regime {
        PenaltyRegime::Gaussian => Ok(4.0 * sigma * t * (d.ln() / n).sqrt()),
        PenaltyRegime::Robust => {
            let m = m.ok_or_else(|| Error::arg("robust penalty needs the bound M on ||x_j||_inf"))?;
            if !(m > 0.0) {
                return Err(Error::arg("M must be positive"));
            }
            Ok(95.0 * m * sigma * ((t + 2.0 / 7.0) / n * (2.0 * d).ln()).sqrt())
        }
    }
}

/// Median estimate plus the per-block solutions it was built from.
#[derive(Debug, Clone)]
pub struct MedianFit {
    pub median: MedianResult,
    /// One point per block.
    pub blocks: PointSet,
    /// False if any block solver stopped without converging.
    pub blocks_converged: bool,
}

/// Lasso on each of `k` consecutive blocks of size `floor(n/k)`, then the
/// Euclidean geometric median of the coefficient vectors.
pub fn median_lasso(
    dm: &DesignMatrix,
    eps: f64,
    k: usize,
    lasso_opts: &LassoOptions,
    median_opts: &MedianOptions,
) -> Result<MedianFit> {
    let opts = LassoOptions {
        penalty: eps,
        ..*lasso_opts
    };
    opts.validate()?;
    let partition = partition_blocks(dm.n(), k)?;
    let fits = block_estimates(&partition, |g| lasso(&dm.rows(g), &opts));
    let fits: Vec<LassoFit> = fits.into_iter().collect::<Result<_>>()?;
    let blocks_converged = fits.iter().all(|f| f.converged);
    let flat: Vec<f64> = fits.iter().flat_map(|f| f.coef.iter().copied()).collect();
    let blocks = PointSet::from_flat(dm.dim(), flat)?;
    let median = geometric_median(&blocks, median_opts)?;
    Ok(MedianFit {
        median,
        blocks,
        blocks_converged,
    })
}

/// Result of the brute-force restricted-eigenvalue search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestrictedEigenvalue {
    /// Smallest ratio found at a feasible point: an upper bound on kappa and
    /// the heuristic estimate of it.
    pub estimate: f64,
    /// `sqrt(lambda_min(X^T X / n))`, a guaranteed lower bound.
    pub lower: f64,
}

/// Restricted-eigenvalue constant `kappa(s, c0)` by enumerating supports of
/// size `<= s` and running projected descent from 10 restarts. Only for
/// `D <= 20`, `s <= 3`.
pub fn restricted_eigenvalue(dm: &DesignMatrix, s: usize, c0: f64) -> Result<RestrictedEigenvalue> {
    restricted_eigenvalue_search(dm, s, c0, 10, 0)
}

pub fn restricted_eigenvalue_search(
    dm: &DesignMatrix,
    s: usize,
    c0: f64,
    restarts: usize,
    seed: u64,
) -> Result<RestrictedEigenvalue> {
    let d = dm.dim();
    if d > 20 || s > 3 || s == 0 || s > d {
        return Err(Error::arg(format!(
            "restricted eigenvalue search limited to D <= 20 and 1 <= s <= min(3, D); got D = {d}, s = {s}"
        )));
    }
    if !(c0 > 0.0) {
        return Err(Error::arg("c0 must be positive"));
    }
    let gram = dm.x.tr_mul(&dm.x) / dm.n() as f64;
    let eigen = gram.symmetric_eigenvalues();
    let lmin = eigen.iter().copied().fold(f64::INFINITY, f64::min);
    let lmax = eigen.iter().copied().fold(0.0, f64::max);
    let lower = lmin.max(0.0).sqrt();
    if lmax <= 0.0 {
        return Ok(RestrictedEigenvalue {
            estimate: 0.0,
            lower: 0.0,
        });
    }
    let step = 1.0 / lmax;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for size in 1..=s {
        for support in combinations(d, size) {
            let inside: Vec<bool> = (0..d).map(|i| support.contains(&i)).collect();
            let project = |u: &mut DVector<f64>| -> bool {
                let on: f64 = (0..d).filter(|&i| inside[i]).map(|i| u[i] * u[i]).sum::<f64>().sqrt();
                if on < 1e-12 {
                    return false;
                }
                for i in 0..d {
                    if inside[i] {
                        u[i] /= on;
                    }
                }
                let radius = c0 * (0..d).filter(|&i| inside[i]).map(|i| u[i].abs()).sum::<f64>();
                let off: Vec<usize> = (0..d).filter(|&i| !inside[i]).collect();
                let v: Vec<f64> = off.iter().map(|&i| u[i]).collect();
                for (&i, w) in off.iter().zip(project_l1_ball(&v, radius)) {
                    u[i] = w;
                }
                true
            };
            let ratio = |u: &DVector<f64>| u.dot(&(&gram * u)).max(0.0).sqrt();
            for restart in 0..restarts.max(1) {
                let mut u = DVector::zeros(d);
                if restart < size {
                    u[support[restart]] = 1.0;
                } else {
                    for i in 0..d {
                        u[i] = rng.sample::<f64, _>(StandardNormal);
                    }
                }
                if !project(&mut u) {
                    continue;
                }
                best = best.min(ratio(&u));
                for _ in 0..300 {
                    let mut next = &u - (&gram * &u) * step;
                    if !project(&mut next) {
                        break;
                    }
                    let value = ratio(&next);
                    best = best.min(value);
                    if (&next - &u).norm() < 1e-12 {
                        break;
                    }
                    u = next;
                }
            }
        }
    }
    Ok(RestrictedEigenvalue {
        estimate: best.max(lower),
        lower,
    })
}

fn combinations(d: usize, size: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, d: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..d {
            cur.push(i);
            rec(i + 1, d, size, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, d, size, &mut Vec::new(), &mut out);
    out
}

/// Euclidean projection onto `{w : ||w||_1 <= radius}`.
pub fn project_l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return v.to_vec();
    }
    if radius <= 0.0 {
        return vec![0.0; v.len()];
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &m) in mags.iter().enumerate() {
        cum += m;
        let t = (cum - radius) / (i + 1) as f64;
        if m > t {
            theta = t;
        } else {
            break;
        }
    }
    v.iter().map(|&x| soft(x, theta)).collect()
}

/// Soft-threshold the eigenvalues of `s` at `level`.
pub fn svt(s: &SymMatrix, level: f64) -> SymMatrix {
    spectral_map(s, |values| values.iter().map(|&v| soft(v, level)).collect())
}

fn spectral_map(s: &SymMatrix, f: impl FnOnce(&[f64]) -> Vec<f64>) -> SymMatrix {
    let (values, vectors) = s.eigen_decreasing();
    let mapped = f(&values);
    let diag = DMatrix::from_diagonal(&DVector::from_vec(mapped));
    SymMatrix::symmetrized(&vectors * diag * vectors.transpose())
}

/// Nuclear norm of a symmetric matrix: sum of absolute eigenvalues.
pub fn nuclear_norm(s: &SymMatrix) -> f64 {
    s.as_matrix().symmetric_eigenvalues().iter().map(|v| v.abs()).sum()
}

/// Observations `Y_j = <A_0, X_j> + noise` with symmetric designs
/// and the nuclear-ball radius of the constraint set.
#[derive(Debug, Clone)]
pub struct MatrixSamples {
    dim: usize,
    /// Row `j` is the column-major flattening of `X_j`.
    designs: DMatrix<f64>,
    responses: Vec<f64>,
    radius: f64,
}

impl MatrixSamples {
    pub fn new(designs: &[SymMatrix], responses: Vec<f64>, radius: f64) -> Result<Self> {
        let first = designs.first().ok_or_else(|| Error::arg("need at least one sample"))?;
        let dim = first.dim();
        if responses.len() != designs.len() {
            return Err(Error::DimensionMismatch {
                expected: designs.len(),
                found: responses.len(),
            });
        }
        if let Some(bad) = designs.iter().find(|x| x.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::arg("constraint radius must be positive"));
        }
        if responses.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("responses contain a non-finite value"));
        }
        let dd = dim * dim;
        let designs = DMatrix::from_fn(designs.len(), dd, |j, c| designs[j].as_matrix().as_slice()[c]);
        Ok(Self {
            dim,
            designs,
            responses,
            radius,
        })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn design(&self, j: usize) -> SymMatrix {
        let row: Vec<f64> = self.designs.row(j).iter().copied().collect();
        SymMatrix::symmetrized(DMatrix::from_column_slice(self.dim, self.dim, &row))
    }

    pub fn subset(&self, range: std::ops::Range<usize>) -> MatrixSamples {
        MatrixSamples {
            dim: self.dim,
            designs: self.designs.rows(range.start, range.len()).into_owned(),
            responses: self.responses[range].to_vec(),
            radius: self.radius,
        }
    }

    fn residual(&self, a: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(&self.responses) - &self.designs * a
    }

    /// `(1/n) sum (Y_j - <A, X_j>)^2 + eps ||A||_1`.
    pub fn objective(&self, a: &SymMatrix, eps: f64) -> f64 {
        let v = DVector::from_column_slice(a.as_matrix().as_slice());
        self.residual(&v).norm_squared() / self.len() as f64 + eps * nuclear_norm(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuclearOptions {
    /// Stop when the proximal-gradient step moves less than
    /// `tol * max(1, ||A||_F)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NuclearOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NuclearFit {
    pub estimate: SymMatrix,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective of the accepted iterate, non-increasing.
    pub history: Vec<f64>,
}

/// Largest eigenvalue of `A -> sum_j <A, X_j> X_j` by power iteration.
fn design_operator_norm(ms: &MatrixSamples) -> f64 {
    let gram = ms.designs.tr_mul(&ms.designs);
    let dd = gram.nrows();
    let mut v = DVector::from_element(dd, 1.0 / (dd as f64).sqrt());
    let mut value = 0.0;
    for _ in 0..500 {
        let w = &gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = w / norm;
        let converged = (norm - value).abs() <= 1e-10 * norm;
        value = norm;
        v = next;
        if converged {
            break;
        }
    }
    // Power iteration approaches from below; pad so the step stays safe.
    value * 1.01
}

/// Prox of `step * eps * ||.||_1` plus the indicator of the nuclear ball:
/// shrink the eigenvalues, then project them onto the l1 ball.
fn nuclear_prox(v: &SymMatrix, level: f64, radius: f64) -> SymMatrix {
    spectral_map(v, |values| {
        let shrunk: Vec<f64> = values.iter().map(|&x| soft(x, level)).collect();
        project_l1_ball(&shrunk, radius)
    })
}

/// Nuclear-penalised least squares over `{A symmetric : ||A||_1 <= R}` by
/// monotone FISTA.
pub fn nuclear_ls(ms: &MatrixSamples, eps: f64, opts: &NuclearOptions) -> Result<NuclearFit> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::arg(format!("penalty {eps} must be >= 0")));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::arg("nuclear solver needs tol > 0 and max_iter >= 1"));
    }
    let d = ms.dim;
    let n = ms.len() as f64;
    let lipschitz = 2.0 / n * design_operator_norm(ms);
    let step = if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 };
    let to_vec = |a: &SymMatrix| DVector::from_column_slice(a.as_matrix().as_slice());
    let to_sym = |v: &DVector<f64>| SymMatrix::symmetrized(DMatrix::from_column_slice(d, d, v.as_slice()));
    let gradient = |a: &DVector<f64>| ms.designs.tr_mul(&ms.residual(a)) * (-2.0 / n);

    let mut x = SymMatrix::symmetrized(DMatrix::zeros(d, d));
    let mut fx = ms.objective(&x, eps);
    let mut y = to_vec(&x);
    let mut t = 1.0f64;
    let mut history = vec![fx];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let forward = &y - gradient(&y) * step;
        let z = nuclear_prox(&to_sym(&forward), step * eps, ms.radius);
        let zv = to_vec(&z);
        let moved = (&zv - &y).norm();
        let fz = ms.objective(&z, eps);
        let xv = to_vec(&x);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let accepted = fz <= fx;
        y = if accepted {
            &zv + (&zv - &xv) * ((t - 1.0) / t_next)
        } else {
            &xv + (&zv - &xv) * (t / t_next)
        };
        if accepted {
            x = z;
            fx = fz;
        }
        t = t_next;
        history.push(fx);
        if moved <= opts.tol * x.frobenius_norm().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(NuclearFit {
        estimate: x,
        objective: fx,
        iterations,
        converged,
        history,
    })
}

/// Nuclear least squares on `k = floor(t) + 1` blocks followed by the
/// Frobenius geometric median.
pub fn median_matrix_regression(
    ms: &MatrixSamples,
    eps: f64,
    t: f64,
    nuclear_opts: &NuclearOptions,
    median_opts: &MedianOptions,
) -> Result<MedianFit> {
    if !(t >= 1.0) || !t.is_finite() {
        return Err(Error::arg(format!("confidence parameter t = {t} must be >= 1")));
    }
    let k = t.floor() as usize + 1;
    if 2 * k > ms.len() {
        return Err(Error::arg(format!(
            "k = {k} blocks need k <= n/2, but n = {}",
            ms.len()
        )));
    }
    median_matrix_regression_blocks(ms, eps, k, nuclear_opts, median_opts)
}

/// As [`median_matrix_regression`] with an explicit block count.
pub fn median_matrix_regression_blocks(
    ms: &MatrixSamples,
    eps: f64,
    k: usize,
    nuclear_opts: &NuclearOptions,
    median_opts: &MedianOptions,
) -> Result<MedianFit> {
    let partition = partition_blocks(ms.len(), k)?;
    let fits = block_estimates(&partition, |g| nuclear_ls(&ms.subset(g), eps, nuclear_opts));
    let fits: Vec<NuclearFit> = fits.into_iter().collect::<Result<_>>()?;
    let blocks_converged = fits.iter().all(|f| f.converged);
    let flat: Vec<f64> = fits.iter().flat_map(|f| f.estimate.flatten()).collect();
    let blocks = PointSet::from_flat(ms.dim * ms.dim, flat)?;
    let median = geometric_median(&blocks, median_opts)?;
    Ok(MedianFit {
        median,
        blocks,
        blocks_converged,
    })
}

/// Inputs of the heavy-tailed matrix-regression penalty level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixPenaltyParams {
    pub alpha: f64,
    /// Unspecified absolute constant; 1 by default.
    pub b: f64,
    /// `||xi||_{2,1} = int_0^inf sqrt(P(|xi| > x)) dx`.
    pub xi_norm21: f64,
    pub t: f64,
    pub n: usize,
    pub d: usize,
    /// Nuclear radius of the constraint set.
    pub radius: f64,
}

impl MatrixPenaltyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::arg(format!("alpha = {} outside (0, 1/2)", self.alpha)));
        }
        if !(self.b > 0.0) || !(self.xi_norm21 >= 0.0) || !(self.radius > 0.0) {
            return Err(Error::arg("B and R must be positive and ||xi||_{2,1} nonnegative"));
        }
        if !(self.t >= 1.0) {
            return Err(Error::arg(format!("t = {} must be >= 1", self.t)));
        }
        if self.n == 0 || self.d == 0 {
            return Err(Error::arg("n and D must be positive"));
        }
        Ok(())
    }

    pub fn p_star(&self) -> Result<f64> {
        self.validate()?;
        let p = p_star(self.alpha)?;
        debug_assert!((psi(self.alpha, p)? - 1.0).abs() < 1e-6);
        Ok(p)
    }

    /// `log log_2(D R)`; needs `D R > 2` to be positive.
    pub fn kappa(&self) -> Result<f64> {
        self.validate()?;
        let l2 = (self.d as f64 * self.radius).log2();
        if !(l2 > 0.0) {
            return Err(Error::arg("kappa needs D * R > 1"));
        }
        Ok(l2.ln())
    }

    /// `(log(2/p*) + kappa) log(n/t) + log(2D)`.
    pub fn s_ntd(&self) -> Result<f64> {
        let p = self.p_star()?;
        Ok(((2.0 / p).ln() + self.kappa()?) * (self.n as f64 / self.t).ln() + (2.0 * self.d as f64).ln())
    }

    /// `(B / p*) ||xi||_{2,1} sqrt(D t / n) log(2D)`.
    pub fn penalty(&self) -> Result<f64> {
        let p = self.p_star()?;
        let (n, d) = (self.n as f64, self.d as f64);
        Ok(self.b / p * self.xi_norm21 * (d * self.t / n).sqrt() * (2.0 * d).ln())
    }
}

pub fn matrix_penalty(params: &MatrixPenaltyParams) -> Result<f64> {
    params.penalty()
}
