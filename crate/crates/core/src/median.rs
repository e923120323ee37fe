//! Geometric median of a finite point set.
//!
//! The solver is Weiszfeld's fixed-point iteration with Ostresh's relaxed
//! step and generalized-gradient rule at data points. It works in the
//! Euclidean norm; matrices are handled by flattening, which is an isometry
//! for the Frobenius norm.

use serde::{Deserialize, Serialize};

use crate::constants::{c_alpha, Space};
use crate::error::{Error, Result};

/// Iterates closer than this (relative to the point-set scale) to a data
/// point are treated as sitting on it.
const VERTEX_TOL: f64 = 1e-13;

/// An ordered collection of `k >= 1` points of one dimension, with optional
/// weights. Points are stored row-major in one buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    data: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl PointSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::arg("point set must contain at least one point"))?;
        let dim = first.len();
        let mut data = Vec::with_capacity(dim * points.len());
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            data.extend_from_slice(p);
        }
        Self::from_flat(dim, data)
    }

    /// Build from a row-major buffer of `k * dim` values.
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("points must have dimension >= 1"));
        }
        if data.is_empty() {
            return Err(Error::arg("point set must contain at least one point"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::arg(format!(
                "buffer of length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite coordinate in point {}", bad / dim)));
        }
        Ok(Self {
            dim,
            data,
            weights: None,
        })
    }

    /// Attach weights; they must be nonnegative and sum to one within 1e-12.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::arg("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::arg(format!("weights sum to {total}, not 1")));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn weight(&self, j: usize) -> f64 {
        match &self.weights {
            Some(w) => w[j],
            None => 1.0 / self.len() as f64,
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.weight(j)).collect()
    }

    /// True when no weights were supplied or all supplied weights are equal.
    pub fn is_uniform(&self) -> bool {
        match &self.weights {
            None => true,
            Some(w) => w.iter().all(|v| (v - w[0]).abs() <= 1e-12),
        }
    }

    /// `max(1, max_j ||x_j||)`, the length scale used for tolerances.
    pub fn scale(&self) -> f64 {
        self.points().map(norm).fold(1.0, f64::max)
    }

    /// `sum_j alpha_j x_j`.
    pub fn combine(&self, coefficients: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (x, &a) in self.points().zip(coefficients) {
            if a != 0.0 {
                axpy(a, x, &mut out);
            }
        }
        out
    }
}

/// Solver settings for [`geometric_median`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianOptions {
    /// Relative step tolerance: stop when `||z' - z|| <= tol * max(1, ||z||)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Ostresh relaxation factor in `[1, 2]`; 1 is plain Weiszfeld.
    pub step_relaxation: f64,
}

impl Default for MedianOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            step_relaxation: 1.0,
        }
    }
}

impl MedianOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::arg("median tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::arg("median max_iter must be >= 1"));
        }
        if !(1.0..=2.0).contains(&self.step_relaxation) {
            return Err(Error::arg("step_relaxation must lie in [1, 2]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MedianResult {
    pub point: Vec<f64>,
    /// Convex-combination coefficients with `point = sum_j weights[j] x_j`.
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    /// Objective at every accepted iterate, non-increasing. The
    /// reported `point` is the Weiszfeld image of the last one.
    pub history: Vec<f64>,
}

/// `F(y) = sum_j w_j ||y - x_j||`.
pub fn objective(ps: &PointSet, y: &[f64]) -> Result<f64> {
    if y.len() != ps.dim() {
        return Err(Error::DimensionMismatch {
            expected: ps.dim(),
            found: y.len(),
        });
    }
    Ok(objective_unchecked(ps, y))
}

fn objective_unchecked(ps: &PointSet, y: &[f64]) -> f64 {
    ps.points().enumerate().map(|(j, x)| ps.weight(j) * dist(x, y)).sum()
}

/// Weighted geometric median by Weiszfeld iteration started at the
/// coordinatewise median.
///
/// Hitting a data point is handled by the generalized gradient: with `R` the
/// weighted sum of unit vectors toward the other points, the vertex is optimal
/// when `||R||` does not exceed its own weight, and otherwise the iterate
/// moves along `R`. Running out of iterations is reported through
/// `converged = false`, not as an error.
pub fn geometric_median(ps: &PointSet, opts: &MedianOptions) -> Result<MedianResult> {
    opts.validate()?;
    let k = ps.len();
    let dim = ps.dim();
    if k == 1 {
        return Ok(MedianResult {
            point: ps.point(0).to_vec(),
            weights: vec![1.0],
            iterations: 0,
            converged: true,
            objective: 0.0,
            history: vec![0.0],
        });
    }

    let vtol = VERTEX_TOL * ps.scale();
    let zeta = opts.step_relaxation;
    let weights = ps.weights();
    let mut z = weighted_coordinatewise_median(ps);
    let mut dists = vec![0.0; k];
    let mut next = vec![0.0; dim];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let f = distances(ps, &z, &mut dists, &weights);
        if history.last().is_some_and(|&prev| f > prev) {
            // The step no longer lowers the objective in floating point:
            // keep the previous iterate.
            std::mem::swap(&mut z, &mut next);
            converged = true;
            break;
        }
        history.push(f);

        match Step::at(ps, &z, &dists, &weights, vtol) {
            Step::OptimalVertex(j) => return Ok(vertex_result(ps, j, iterations, history)),
            Step::Vertex { direction, factor } => {
                for (n, (zi, ri)) in next.iter_mut().zip(z.iter().zip(&direction)) {
                    *n = zi + zeta * factor * ri;
                }
            }
            Step::Interior { target } => {
                for (n, (zi, ti)) in next.iter_mut().zip(z.iter().zip(&target)) {
                    *n = zi + zeta * (ti - zi);
                }
            }
        }

        let moved = dist(&next, &z);
        std::mem::swap(&mut z, &mut next);
        if moved <= opts.tol * norm(&next).max(1.0) {
            converged = true;
            break;
        }
    }

    // Report the Weiszfeld image of the last iterate so that the returned
    // coefficients reconstruct the point exactly.
    distances(ps, &z, &mut dists, &weights);
    match Step::at(ps, &z, &dists, &weights, vtol) {
        Step::OptimalVertex(j) => Ok(vertex_result(ps, j, iterations, history)),
        Step::Vertex { .. } => {
            let j = nearest(&dists);
            let mut res = vertex_result(ps, j, iterations, history);
            res.converged = converged;
            Ok(res)
        }
        Step::Interior { .. } => {
            let coeffs = weiszfeld_coefficients(&dists, &weights);
            let point = ps.combine(&coeffs);
            let objective = objective_unchecked(ps, &point);
            Ok(MedianResult {
                point,
                weights: coeffs,
                iterations,
                converged,
                objective,
                history,
            })
        }
    }
}

enum Step {
    OptimalVertex(usize),
    Vertex { direction: Vec<f64>, factor: f64 },
    Interior { target: Vec<f64> },
}

impl Step {
    fn at(ps: &PointSet, z: &[f64], dists: &[f64], weights: &[f64], vtol: f64) -> Step {
        let on_vertex = dists.iter().any(|&d| d <= vtol);
        if !on_vertex {
            let coeffs = weiszfeld_coefficients(dists, weights);
            return Step::Interior {
                target: ps.combine(&coeffs),
            };
        }
        let mut resultant = vec![0.0; ps.dim()];
        let mut own_weight = 0.0;
        let mut inv_sum = 0.0;
        for (j, x) in ps.points().enumerate() {
            if dists[j] <= vtol {
                own_weight += weights[j];
            } else {
                let s = weights[j] / dists[j];
                inv_sum += s;
                for (r, (xi, zi)) in resultant.iter_mut().zip(x.iter().zip(z)) {
                    *r += s * (xi - zi);
                }
            }
        }
        let r_norm = norm(&resultant);
        if r_norm <= own_weight || inv_sum == 0.0 {
            return Step::OptimalVertex(nearest(dists));
        }
        // z' = z + beta (1 - w_j / ||R||) R, beta = 1 / sum_{i != j} w_i / d_i
        let factor = (1.0 - own_weight / r_norm) / inv_sum;
        Step::Vertex {
            direction: resultant,
            factor,
        }
    }
}

fn vertex_result(ps: &PointSet, j: usize, iterations: usize, history: Vec<f64>) -> MedianResult {
    let point = ps.point(j).to_vec();
    let objective = objective_unchecked(ps, &point);
    let mut weights = vec![0.0; ps.len()];
    weights[j] = 1.0;
    MedianResult {
        point,
        weights,
        iterations,
        converged: true,
        objective,
        history,
    }
}

fn nearest(dists: &[f64]) -> usize {
    dists
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(j, _)| j)
        .unwrap_or(0)
}

/// Fills `dists` and returns the objective at `z`.
fn distances(ps: &PointSet, z: &[f64], dists: &mut [f64], weights: &[f64]) -> f64 {
    let mut f = 0.0;
    for (j, x) in ps.points().enumerate() {
        dists[j] = dist(x, z);
        f += weights[j] * dists[j];
    }
    f
}

fn weiszfeld_coefficients(dists: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut c: Vec<f64> = dists.iter().zip(weights).map(|(d, w)| w / d).collect();
    let s: f64 = c.iter().sum();
    c.iter_mut().for_each(|v| *v /= s);
    c
}

/// Coordinatewise median for uniform weights; even `k` takes the lower
/// middle order statistic.
pub fn coordinatewise_median(ps: &PointSet) -> Result<Vec<f64>> {
    if !ps.is_uniform() {
        return Err(Error::arg("coordinatewise median is defined for uniform weights only"));
    }
    let k = ps.len();
    let mid = (k - 1) / 2;
    let mut column = vec![0.0; k];
    Ok((0..ps.dim())
        .map(|i| {
            for (c, x) in column.iter_mut().zip(ps.points()) {
                *c = x[i];
            }
            *column.select_nth_unstable_by(mid, f64::total_cmp).1
        })
        .collect())
}

/// Per-coordinate lower weighted median: the smallest value whose cumulative
/// weight reaches one half.
fn weighted_coordinatewise_median(ps: &PointSet) -> Vec<f64> {
    if ps.is_uniform() {
        return coordinatewise_median(ps).expect("uniform weights");
    }
    let weights = ps.weights();
    let mut column: Vec<(f64, f64)> = Vec::with_capacity(ps.len());
    (0..ps.dim())
        .map(|i| {
            column.clear();
            column.extend(ps.points().zip(&weights).map(|(x, &w)| (x[i], w)));
            column.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut acc = 0.0;
            for &(v, w) in &column {
                acc += w;
                if acc >= 0.5 - 1e-12 {
                    return v;
                }
            }
            column.last().map(|c| c.0).unwrap_or(0.0)
        })
        .collect()
}

/// Median coefficients after zeroing those below `nu / k`, renormalised.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdedMedian {
    pub point: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn thresholded_median(ps: &PointSet, nu: f64, opts: &MedianOptions) -> Result<ThresholdedMedian> {
    if !(nu >= 0.0) || !nu.is_finite() {
        return Err(Error::arg(format!("threshold nu = {nu} must be >= 0")));
    }
    let med = geometric_median(ps, opts)?;
    threshold_coefficients(ps, &med.weights, nu)
}

/// Thresholds an existing set of median coefficients.
pub fn threshold_coefficients(ps: &PointSet, coefficients: &[f64], nu: f64) -> Result<ThresholdedMedian> {
    if !(nu >= 0.0) || !nu.is_finite() {
        return Err(Error::arg(format!("threshold nu = {nu} must be >= 0")));
    }
    if coefficients.len() != ps.len() {
        return Err(Error::DimensionMismatch {
            expected: ps.len(),
            found: coefficients.len(),
        });
    }
    if nu == 0.0 {
        return Ok(ThresholdedMedian {
            point: ps.combine(coefficients),
            weights: coefficients.to_vec(),
        });
    }
    let cut = nu / ps.len() as f64;
    let mut kept: Vec<f64> = coefficients.iter().map(|&a| if a >= cut { a } else { 0.0 }).collect();
    let total: f64 = kept.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptySupport);
    }
    kept.iter_mut().for_each(|a| *a /= total);
    Ok(ThresholdedMedian {
        point: ps.combine(&kept),
        weights: kept,
    })
}

fn require_uniform(ps: &PointSet, what: &str) -> Result<()> {
    if ps.is_uniform() {
        Ok(())
    } else {
        Err(Error::arg(format!("{what} requires uniform weights")))
    }
}

/// Majority-cluster selector: the smallest (0-based) index `j` such that more
/// than `k/2` points, `j` itself included, lie within `2 epsilon` of `x_j`.
/// Falls back to index 0 when no point qualifies.
pub fn select_nemirovski(ps: &PointSet, epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::arg(format!("epsilon = {epsilon} must be positive")));
    }
    require_uniform(ps, "select_nemirovski")?;
    let k = ps.len();
    let radius = 2.0 * epsilon;
    for (j, xj) in ps.points().enumerate() {
        let close = ps.points().filter(|xi| dist(xi, xj) <= radius).count();
        if 2 * close > k {
            return Ok(j);
        }
    }
    Ok(0)
}

/// Selector with the smallest feasible radius: returns `(j, eps_star)` where
/// `2 eps_star` is the smallest majority radius over all centres and `j` is
/// the smallest index attaining it.
pub fn select_nemirovski_adaptive(ps: &PointSet) -> Result<(usize, f64)> {
    require_uniform(ps, "select_nemirovski_adaptive")?;
    let k = ps.len();
    if k < 2 {
        return Err(Error::arg("adaptive selector needs at least two points"));
    }
    // ceil((k+1)/2)-th smallest distance, counting the zero self-distance
    let rank = k / 2;
    let mut row = vec![0.0; k];
    let mut best = (0, f64::INFINITY);
    for (j, xj) in ps.points().enumerate() {
        for (r, xi) in row.iter_mut().zip(ps.points()) {
            *r = dist(xi, xj);
        }
        let radius = *row.select_nth_unstable_by(rank, f64::total_cmp).1;
        let eps = radius / 2.0;
        if eps < best.1 {
            best = (j, eps);
        }
    }
    Ok(best)
}

/// Witness set for the far-from-median lemma, using the Hilbert constant.
///
/// Given `||med - z|| > C_alpha r`, returns every index with `||x_j - z|| > r`;
/// the lemma guarantees more than `alpha k` of them.
pub fn lemma_witness(ps: &PointSet, z: &[f64], r: f64, alpha: f64) -> Result<Vec<usize>> {
    lemma_witness_in(ps, z, r, alpha, Space::Hilbert)
}

/// [`lemma_witness`] with the constant of the chosen space.
pub fn lemma_witness_in(ps: &PointSet, z: &[f64], r: f64, alpha: f64, space: Space) -> Result<Vec<usize>> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::arg(format!("radius r = {r} must be positive")));
    }
    if z.len() != ps.dim() {
        return Err(Error::DimensionMismatch {
            expected: ps.dim(),
            found: z.len(),
        });
    }
    require_uniform(ps, "lemma_witness")?;
    let c = c_alpha(alpha, space)?;
    let med = geometric_median(ps, &MedianOptions::default())?;
    let gap = dist(&med.point, z);
    if !(gap > c * r) {
        return Err(Error::arg(format!(
            "precondition ||med - z|| = {gap} > C_alpha r = {} fails",
            c * r
        )));
    }
    let far: Vec<usize> = ps
        .points()
        .enumerate()
        .filter(|(_, x)| dist(x, z) > r)
        .map(|(j, _)| j)
        .collect();
    if (far.len() as f64) > alpha * ps.len() as f64 {
        Ok(far)
    } else {
        Err(Error::InvariantViolation(format!(
            "only {} of {} points are farther than r from z",
            far.len(),
            ps.len()
        )))
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
