//! Geometric-median covariance estimators and eigenprojectors.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::aggregate::{block_estimates, boost, check_sample, partition_blocks, AggregationPlan, NormKind};
use crate::error::{Error, Result};
use crate::median::{MedianOptions, MedianResult, PointSet};

const SYMMETRY_TOL: f64 = 1e-10;

/// Dense symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Checks squareness, finiteness and symmetry within 1e-10 (relative to
    /// the largest entry), then stores the exactly symmetrised matrix.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::arg(format!("matrix is {}x{}, not square", m.nrows(), m.ncols())));
        }
        if m.nrows() == 0 {
            return Err(Error::arg("matrix must be at least 1x1"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("matrix contains a non-finite entry"));
        }
        let scale = m.amax().max(1.0);
        let asym = (&m - m.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::arg(format!("matrix is not symmetric (gap {asym})")));
        }
        Ok(Self::symmetrized(m))
    }

    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(d: usize) -> Self {
        SymMatrix(DMatrix::identity(d, d))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)))
    }

    /// Rebuild from a column-major `d*d` buffer, symmetrising.
    pub fn from_flat(d: usize, values: &[f64]) -> Result<Self> {
        if values.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                found: values.len(),
            });
        }
        Ok(Self::symmetrized(DMatrix::from_column_slice(d, d, values)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Column-major entries; the Euclidean norm of this vector is the
    /// Frobenius norm of the matrix.
    pub fn flatten(&self) -> Vec<f64> {
        self.0.as_slice().to_vec()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// `<A, B> = tr(A^T B)`.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Eigenvalues in decreasing order with matching eigenvector columns.
    pub fn eigen_decreasing(&self) -> (Vec<f64>, DMatrix<f64>) {
        let eig = SymmetricEigen::new(self.0.clone());
        let d = self.dim();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
        (values, vectors)
    }

    pub fn eigenvalues_decreasing(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.0.symmetric_eigenvalues().iter().copied().collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }

    /// `Q A Q^T`.
    pub fn conjugate(&self, q: &DMatrix<f64>) -> SymMatrix {
        Self::symmetrized(q * &self.0 * q.transpose())
    }
}

/// Orthogonal projector of rank `rank`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub matrix: SymMatrix,
    pub rank: usize,
    /// Set when `lambda_m` and `lambda_{m+1}` coincide within 1e-12, so the
    /// top-`m` eigenspace is not well defined.
    pub ill_posed: bool,
}

/// Projector onto the span of eigenvectors of the `m` largest eigenvalues.
pub fn top_projector(s: &SymMatrix, m: usize) -> Result<Projector> {
    let d = s.dim();
    if m == 0 || m > d {
        return Err(Error::arg(format!("projector rank m = {m} outside [1, {d}]")));
    }
    let (values, vectors) = s.eigen_decreasing();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("eigensolver returned non-finite values".into()));
    }
    let ill_posed = m < d && values[m - 1] - values[m] <= 1e-12 * values[0].abs().max(1.0);
    let top = vectors.columns(0, m);
    let p = top * top.transpose();
    Ok(Projector {
        matrix: SymMatrix::symmetrized(p),
        rank: m,
        ill_posed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixNorm {
    Frobenius,
    /// Spectral norm.
    Operator,
}

pub fn projector_distance(p: &Projector, q: &Projector, norm: MatrixNorm) -> Result<f64> {
    matrix_distance(&p.matrix, &q.matrix, norm)
}

pub fn matrix_distance(a: &SymMatrix, b: &SymMatrix, norm: MatrixNorm) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let diff = SymMatrix::symmetrized(a.as_matrix() - b.as_matrix());
    Ok(match norm {
        MatrixNorm::Frobenius => diff.frobenius_norm(),
        MatrixNorm::Operator => diff
            .as_matrix()
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0, |acc: f64, v| acc.max(v.abs())),
    })
}

/// `lambda_m - lambda_{m+1}` with eigenvalues in decreasing order.
pub fn spectral_gap(s: &SymMatrix, m: usize) -> Result<f64> {
    let d = s.dim();
    if m == 0 || m >= d {
        return Err(Error::arg(format!("gap index m = {m} outside [1, {})", d)));
    }
    let values = s.eigenvalues_decreasing();
    Ok((values[m - 1] - values[m]).max(0.0))
}

fn outer_average<V: AsRef<[f64]>>(block: &[V], center: Option<&[f64]>) -> DMatrix<f64> {
    let d = block[0].as_ref().len();
    let m = block.len();
    let rows = DMatrix::from_fn(m, d, |i, j| {
        let v = block[i].as_ref()[j];
        match center {
            Some(c) => v - c[j],
            None => v,
        }
    });
    rows.tr_mul(&rows) / m as f64
}

/// Second-moment (`centered = true`) or covariance-about-the-mean matrix of
/// the whole sample.
pub fn sample_covariance<V: AsRef<[f64]>>(data: &[V], centered: bool) -> Result<SymMatrix> {
    check_sample(data)?;
    let mean = (!centered).then(|| crate::aggregate::sample_mean(data));
    Ok(SymMatrix::symmetrized(outer_average(data, mean.as_deref())))
}

/// Median covariance together with the block matrices and median weights.
#[derive(Debug, Clone)]
pub struct RobustCovariance {
    pub matrix: SymMatrix,
    /// Flattened block matrices, one point per block.
    pub blocks: PointSet,
    pub median: MedianResult,
}

impl RobustCovariance {
    /// Rebuild a matrix from arbitrary coefficients over the block matrices.
    pub fn combine(&self, coefficients: &[f64]) -> Result<SymMatrix> {
        SymMatrix::from_flat(self.matrix.dim(), &self.blocks.combine(coefficients))
    }
}

/// Frobenius geometric median of per-block covariance matrices.
///
/// `centered = true` uses second moments `|G|^-1 sum X X^T` (the caller knows
/// the mean is zero); otherwise each block is centred at its own mean.
pub fn robust_covariance<V: AsRef<[f64]> + Sync>(
    data: &[V],
    plan: &AggregationPlan,
    centered: bool,
    opts: &MedianOptions,
) -> Result<SymMatrix> {
    Ok(robust_covariance_detailed(data, plan, centered, opts)?.matrix)
}

pub fn robust_covariance_detailed<V: AsRef<[f64]> + Sync>(
    data: &[V],
    plan: &AggregationPlan,
    centered: bool,
    opts: &MedianOptions,
) -> Result<RobustCovariance> {
    let d = check_sample(data)?;
    let k = plan.blocks_for(data.len())?;
    let partition = partition_blocks(data.len(), k)?;
    let blocks = block_estimates(&partition, |g| {
        let block = &data[g];
        let mean = (!centered).then(|| crate::aggregate::sample_mean(block));
        outer_average(block, mean.as_deref()).as_slice().to_vec()
    });
    let blocks = PointSet::from_flat(d * d, blocks.concat())?;
    let plan = AggregationPlan {
        norm: NormKind::Frobenius,
        ..*plan
    };
    let median = boost(&blocks, &plan, opts)?;
    let matrix = SymMatrix::from_flat(d, &median.point)?;
    Ok(RobustCovariance { matrix, blocks, median })
}

/// Radius term of the projector bounds.
///
/// Centred: `11 sqrt(term log(1.4/delta) / n)` with `term = E||X||^4 - tr(Sigma^2)`.
/// Uncentred: `15.2 sqrt(term log(1.4/delta)/n) + 178 tr(Sigma) log(1.4/delta)/n`
/// with `term = E||X - mu||^4 - tr(Sigma^2)`.
pub fn pca_radius(fourth_moment_term: f64, trace_sigma: f64, n: usize, delta: f64, centered: bool) -> Result<f64> {
    if !(fourth_moment_term >= 0.0) || !(trace_sigma >= 0.0) {
        return Err(Error::arg("moment terms must be nonnegative"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::arg(format!("delta = {delta} outside (0, 1)")));
    }
    if n == 0 {
        return Err(Error::arg("sample size must be >= 1"));
    }
    let l = (1.4 / delta).ln();
    let n = n as f64;
    Ok(if centered {
        11.0 * (fourth_moment_term * l / n).sqrt()
    } else {
        15.2 * (fourth_moment_term * l / n).sqrt() + 178.0 * trace_sigma * l / n
    })
}

/// Spectral gap the bound needs: four times the radius.
pub fn pca_gap_threshold(radius: f64) -> f64 {
    4.0 * radius
}

/// Frobenius projector-error bound `2 radius / gap`.
pub fn pca_error_bound(radius: f64, gap: f64) -> Result<f64> {
    if !(gap > 0.0) {
        return Err(Error::arg("spectral gap must be positive"));
    }
    Ok(2.0 * radius / gap)
}
