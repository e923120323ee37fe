//! Confidence boosting: split the sample into blocks, estimate per block,
//! and take the geometric median of the block estimates.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{self, c_alpha, psi, Space, ALPHA_STAR, P_STAR};
use crate::error::{Error, Result};
use crate::median::{coordinatewise_median, geometric_median, MedianOptions, MedianResult, PointSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Euclidean,
    /// Matrices flattened to vectors; the Frobenius norm is their Euclidean norm.
    Frobenius,
}

/// Knobs of the boosting construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregationPlan {
    pub alpha: f64,
    pub p: f64,
    pub delta: f64,
    /// Explicit block count; derived from `delta` when `None`.
    pub k: Option<usize>,
    pub norm: NormKind,
}

impl Default for AggregationPlan {
    fn default() -> Self {
        Self {
            alpha: ALPHA_STAR,
            p: P_STAR,
            delta: 0.05,
            k: None,
            norm: NormKind::Euclidean,
        }
    }
}

impl AggregationPlan {
    pub fn with_delta(delta: f64) -> Self {
        Self {
            delta,
            ..Self::default()
        }
    }

    pub fn with_blocks(k: usize) -> Self {
        Self {
            k: Some(k),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::arg(format!("alpha = {} outside (0, 1/2)", self.alpha)));
        }
        if !(self.p > 0.0 && self.p < self.alpha) {
            return Err(Error::arg(format!("p = {} outside (0, alpha)", self.p)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::arg(format!("delta = {} outside (0, 1)", self.delta)));
        }
        if self.k == Some(0) {
            return Err(Error::arg("block count k must be >= 1"));
        }
        Ok(())
    }

    /// Block count: the explicit override, or `floor(log(1/delta)/psi) + 1`.
    pub fn blocks(&self) -> Result<usize> {
        self.validate()?;
        match self.k {
            Some(k) => Ok(k),
            None => block_count(self.delta, self.alpha, self.p),
        }
    }

    /// Block count for a sample of size `n`. A count derived from `delta` must
    /// satisfy the standing assumption `k <= n/2`; an explicit override only
    /// needs `k <= n`.
    pub fn blocks_for(&self, n: usize) -> Result<usize> {
        let k = self.blocks()?;
        if self.k.is_none() && 2 * k > n {
            return Err(Error::arg(format!(
                "delta = {} requires k = {k} blocks, violating k <= n/2 for n = {n}",
                self.delta
            )));
        }
        if k > n {
            return Err(Error::arg(format!("k = {k} blocks exceed the sample size n = {n}")));
        }
        Ok(k)
    }
}

/// `floor(log(1/delta) / psi(alpha; p)) + 1`, the smallest `k` with
/// `exp(-k psi) <= delta`.
pub fn block_count(delta: f64, alpha: f64, p: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::arg(format!("delta = {delta} outside (0, 1)")));
    }
    if !(alpha < 0.5) {
        return Err(Error::arg(format!("alpha = {alpha} outside (0, 1/2)")));
    }
    let exponent = psi(alpha, p)?;
    let ratio = (1.0 / delta).ln() / exponent;
    // An integer ratio that rounds to just below itself would lose a block;
    // nudging up only ever adds one, which keeps exp(-k psi) <= delta.
    let k = (ratio * (1.0 + 1e-12)).floor() + 1.0;
    if !k.is_finite() || k > usize::MAX as f64 {
        return Err(Error::Numeric(format!("block count {k} is not representable")));
    }
    Ok(k as usize)
}

/// `k` contiguous blocks of `floor(n/k)` indices; the trailing remainder is
/// discarded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub groups: Vec<Range<usize>>,
    pub discarded: Range<usize>,
}

impl BlockPartition {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn block_size(&self) -> usize {
        self.groups.first().map(|g| g.len()).unwrap_or(0)
    }

    pub fn discarded_count(&self) -> usize {
        self.discarded.len()
    }
}

pub fn partition_blocks(n: usize, k: usize) -> Result<BlockPartition> {
    if k == 0 {
        return Err(Error::arg("block count k must be >= 1"));
    }
    if k > n {
        return Err(Error::arg(format!("k = {k} blocks exceed the sample size n = {n}")));
    }
    let m = n / k;
    Ok(BlockPartition {
        groups: (0..k).map(|l| l * m..(l + 1) * m).collect(),
        discarded: k * m..n,
    })
}

/// Applies `estimate` to every block, possibly in parallel. Results come back
/// in block order, so the outcome does not depend on the schedule.
pub fn block_estimates<T, F>(partition: &BlockPartition, estimate: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync,
{
    partition.groups.par_iter().map(|g| estimate(g.clone())).collect()
}

/// Geometric median of block estimates.
pub fn boost(estimates: &PointSet, plan: &AggregationPlan, opts: &MedianOptions) -> Result<MedianResult> {
    plan.validate()?;
    if !estimates.is_uniform() {
        return Err(Error::arg("block estimates must carry uniform weights"));
    }
    if plan.norm == NormKind::Frobenius {
        let side = (estimates.dim() as f64).sqrt().round() as usize;
        if side * side != estimates.dim() {
            return Err(Error::arg(format!(
                "Frobenius aggregation needs flattened square matrices, got dimension {}",
                estimates.dim()
            )));
        }
    }
    geometric_median(estimates, opts)
}

/// Failure-probability bound of the boosted estimator when up to a fraction
/// `tau` of the blocks is arbitrary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationBudget {
    /// Largest admissible contamination fraction `(alpha - p)/(1 - p)`.
    pub tau_max: f64,
    /// `exp(-k (1-tau) psi((alpha-tau)/(1-tau); p))`.
    pub bound: f64,
}

pub fn boost_bound(k: usize, alpha: f64, p: f64, tau: f64) -> Result<DeviationBudget> {
    if k == 0 {
        return Err(Error::arg("block count k must be >= 1"));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::arg(format!("alpha = {alpha} outside (0, 1/2)")));
    }
    if !(p > 0.0 && p < alpha) {
        return Err(Error::arg(format!("p = {p} outside (0, alpha)")));
    }
    let tau_max = (alpha - p) / (1.0 - p);
    if !(tau >= 0.0 && tau < tau_max) {
        return Err(Error::arg(format!("tau = {tau} outside [0, {tau_max})")));
    }
    let shifted = (alpha - tau) / (1.0 - tau);
    let exponent = if shifted > p { psi(shifted, p)? } else { 0.0 };
    Ok(DeviationBudget {
        tau_max,
        bound: (-(k as f64) * (1.0 - tau) * exponent).exp(),
    })
}

/// Plain sample mean, summed in index order.
pub fn sample_mean<V: AsRef<[f64]>>(data: &[V]) -> Vec<f64> {
    let dim = data.first().map(|x| x.as_ref().len()).unwrap_or(0);
    let mut sum = vec![0.0; dim];
    for x in data {
        for (s, v) in sum.iter_mut().zip(x.as_ref()) {
            *s += v;
        }
    }
    let n = data.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    sum
}

pub(crate) fn check_sample<V: AsRef<[f64]>>(data: &[V]) -> Result<usize> {
    let first = data.first().ok_or_else(|| Error::arg("sample must not be empty"))?;
    let dim = first.as_ref().len();
    if dim == 0 {
        return Err(Error::arg("observations must have dimension >= 1"));
    }
    for x in data {
        let x = x.as_ref();
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("sample contains a non-finite value"));
        }
    }
    Ok(dim)
}

fn block_means<V: AsRef<[f64]> + Sync>(data: &[V], partition: &BlockPartition) -> Vec<Vec<f64>> {
    block_estimates(partition, |g| sample_mean(&data[g]))
}

/// Median-of-means: geometric median of the block sample means.
pub fn robust_mean<V: AsRef<[f64]> + Sync>(
    data: &[V],
    plan: &AggregationPlan,
    opts: &MedianOptions,
) -> Result<MedianResult> {
    check_sample(data)?;
    let k = plan.blocks_for(data.len())?;
    let partition = partition_blocks(data.len(), k)?;
    let means = PointSet::new(block_means(data, &partition))?;
    boost(&means, plan, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadiusVariant {
    /// `11 sqrt(tr(Sigma) log(1.4/delta) / n)`.
    C11,
    /// `C/sqrt(p psi) sqrt(tr(Sigma) log(1.4/delta) / (n - 3.5 log(1.4/delta)))`.
    Sharp,
}

/// Deviation radius of the median-of-means estimator at confidence `1 - delta`.
pub fn mean_radius(trace_sigma: f64, n: usize, delta: f64, variant: RadiusVariant) -> Result<f64> {
    if !(trace_sigma >= 0.0) || !trace_sigma.is_finite() {
        return Err(Error::arg(format!("trace = {trace_sigma} must be >= 0")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::arg(format!("delta = {delta} outside (0, 1)")));
    }
    if n == 0 {
        return Err(Error::arg("sample size must be >= 1"));
    }
    let log_term = (1.4 / delta).ln();
    let n = n as f64;
    match variant {
        RadiusVariant::C11 => Ok(11.0 * (trace_sigma * log_term / n).sqrt()),
        RadiusVariant::Sharp => {
            let effective = n - 3.5 * log_term;
            if !(effective > 0.0) {
                return Err(Error::arg(format!(
                    "sharp radius needs n > 3.5 log(1.4/delta) = {}",
                    3.5 * log_term
                )));
            }
            Ok(constants::mean_deviation_sharp_constant() * (trace_sigma * log_term / effective).sqrt())
        }
    }
}

/// Median of the block variances `T_j = |G_j|^-1 sum ||X_i - mean_j||^2`.
/// Even `k` takes the lower middle value.
pub fn robust_trace<V: AsRef<[f64]> + Sync>(data: &[V], plan: &AggregationPlan, _opts: &MedianOptions) -> Result<f64> {
    check_sample(data)?;
    let n = data.len();
    let k = plan.blocks()?;
    if n < 2 * k {
        return Err(Error::arg(format!(
            "trace estimator needs n >= 2k, got n = {n}, k = {k}"
        )));
    }
    let partition = partition_blocks(n, k)?;
    let traces = block_estimates(&partition, |g| {
        let block = &data[g];
        let mean = sample_mean(block);
        let total: f64 = block
            .iter()
            .map(|x| {
                x.as_ref()
                    .iter()
                    .zip(&mean)
                    .map(|(v, m)| (v - m) * (v - m))
                    .sum::<f64>()
            })
            .sum();
        vec![total / block.len() as f64]
    });
    Ok(coordinatewise_median(&PointSet::new(traces)?)?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBall {
    pub center: Vec<f64>,
    pub radius: f64,
    /// The trace estimate the radius was built from.
    pub trace: f64,
}

impl ConfidenceBall {
    pub fn contains(&self, x: &[f64]) -> bool {
        crate::median::dist(&self.center, x) <= self.radius
    }
}

/// `11 sqrt(2) sqrt(T log(1.4/delta) / n)`.
pub fn ball_radius(trace_estimate: f64, n: usize, delta: f64) -> Result<f64> {
    Ok(2f64.sqrt() * mean_radius(trace_estimate, n, delta, RadiusVariant::C11)?)
}

/// Median-of-means centre with a data-driven radius at confidence `1 - 2 delta`.
pub fn confidence_ball<V: AsRef<[f64]> + Sync>(
    data: &[V],
    plan: &AggregationPlan,
    opts: &MedianOptions,
) -> Result<ConfidenceBall> {
    let trace = robust_trace(data, plan, opts)?;
    let center = robust_mean(data, plan, opts)?.point;
    let radius = ball_radius(trace, data.len(), plan.delta)?;
    Ok(ConfidenceBall { center, radius, trace })
}

/// Both sides of the kurtosis-type condition under which the trace estimate
/// satisfies `tr(Sigma) <= 2 T`:
/// `15.2 sqrt((E||X - mu||^4 - tr(Sigma)^2) / tr(Sigma)^2)` on the left and
/// `(1/2 - 178 log(1.4/delta)/n) sqrt(n / log(1.4/delta))` on the right.
pub fn trace_condition(fourth_moment: f64, trace_sigma: f64, n: usize, delta: f64) -> Result<(f64, f64)> {
    if !(trace_sigma > 0.0) || !(fourth_moment >= trace_sigma * trace_sigma) {
        return Err(Error::arg("need tr(Sigma) > 0 and E||X - mu||^4 >= tr(Sigma)^2"));
    }
    if !(delta > 0.0 && delta < 1.0) || n == 0 {
        return Err(Error::arg("need delta in (0, 1) and n >= 1"));
    }
    let l = (1.4 / delta).ln();
    let n = n as f64;
    let lhs = 15.2 * ((fourth_moment - trace_sigma * trace_sigma) / (trace_sigma * trace_sigma)).sqrt();
    let rhs = (0.5 - 178.0 * l / n) * (n / l).sqrt();
    Ok((lhs, rhs))
}

/// Hilbert-space blow-up constant for the plan's `alpha`.
pub fn plan_constant(plan: &AggregationPlan) -> Result<f64> {
    c_alpha(plan.alpha, Space::Hilbert)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_count_examples() {
        let a = 7.0 / 18.0;
        assert_eq!(block_count(0.01, a, 0.1).unwrap(), 16);
        assert_eq!(block_count(0.1, a, 0.1).unwrap(), 8);
        let d = (-psi(a, 0.1).unwrap()).exp();
        assert_eq!(block_count(d, a, 0.1).unwrap(), 2);
        assert!(block_count(0.0, a, 0.1).is_err());
        assert!(block_count(0.5, a, 0.5).is_err());
        // cap from the rounded slope
        assert!(block_count(0.01, a, 0.1).unwrap() <= (3.5 * 100f64.ln()).floor() as usize + 1);
    }

    #[test]
    fn block_count_meets_delta() {
        let a = 7.0 / 18.0;
        let s = psi(a, 0.1).unwrap();
        for i in 1..200 {
            let delta = i as f64 / 201.0;
            let k = block_count(delta, a, 0.1).unwrap();
            assert!((-(k as f64) * s).exp() <= delta * (1.0 + 1e-12));
        }
    }

    #[test]
    fn partition_examples() {
        let p = partition_blocks(160, 10).unwrap();
        assert_eq!(p.len(), 10);
        assert!(p.groups.iter().all(|g| g.len() == 16));
        assert_eq!(p.discarded_count(), 0);
        let p = partition_blocks(10, 3).unwrap();
        assert_eq!(p.groups, vec![0..3, 3..6, 6..9]);
        assert_eq!(p.discarded, 9..10);
        let p = partition_blocks(5, 5).unwrap();
        assert!(p.groups.iter().all(|g| g.len() == 1));
        assert!(partition_blocks(3, 4).is_err());
        assert!(partition_blocks(3, 0).is_err());
    }

    #[test]
    fn derived_block_count_respects_half_sample() {
        let plan = AggregationPlan::with_delta(1e-6);
        let err = plan.blocks_for(40).unwrap_err();
        assert!(err.to_string().contains("k <= n/2"));
        assert!(AggregationPlan::with_blocks(30).blocks_for(40).is_ok());
    }

    #[test]
    fn boost_examples() {
        let one = PointSet::new(vec![vec![1.5, -2.0]]).unwrap();
        let r = boost(&one, &AggregationPlan::default(), &MedianOptions::default()).unwrap();
        assert_eq!(r.point, vec![1.5, -2.0]);
        let three = PointSet::new(vec![vec![0.0], vec![0.0], vec![100.0]]).unwrap();
        let r = boost(&three, &AggregationPlan::default(), &MedianOptions::default()).unwrap();
        assert_eq!(r.point, vec![0.0]);
        let plan = AggregationPlan {
            norm: NormKind::Frobenius,
            ..Default::default()
        };
        assert!(boost(
            &PointSet::new(vec![vec![0.0; 3]]).unwrap(),
            &plan,
            &MedianOptions::default()
        )
        .is_err());
    }

    #[test]
    fn boost_bound_examples() {
        let a = 7.0 / 18.0;
        let b = boost_bound(16, a, 0.1, 0.0).unwrap();
        assert!((b.bound - 9.41e-3).abs() < 1e-5);
        assert!((b.tau_max - (a - 0.1) / 0.9).abs() < 1e-15);
        let b = boost_bound(10, a, 0.1, 0.1).unwrap();
        let expect = (-10.0 * 0.9 * psi((a - 0.1) / 0.9, 0.1).unwrap()).exp();
        assert!((b.bound - expect).abs() < 1e-15);
        // monotone toward 1 as tau approaches tau_max
        let tmax = (a - 0.1) / 0.9;
        let mut prev = 0.0;
        for i in 0..100 {
            let tau = tmax * i as f64 / 100.0;
            let v = boost_bound(16, a, 0.1, tau).unwrap().bound;
            assert!(v >= prev);
            prev = v;
        }
        assert!(boost_bound(16, a, 0.1, tmax * (1.0 - 1e-9)).unwrap().bound > 0.999);
        assert!(boost_bound(16, a, 0.1, tmax).is_err());
        assert!(boost_bound(16, a, 0.1, -0.1).is_err());
    }

    #[test]
    fn robust_mean_examples() {
        let data = vec![vec![2.5, -1.0]; 40];
        let r = robust_mean(&data, &AggregationPlan::with_blocks(4), &MedianOptions::default()).unwrap();
        assert_eq!(r.point, vec![2.5, -1.0]);
        let data: Vec<Vec<f64>> = (0..13).map(|i| vec![i as f64 * 0.37, (i * i) as f64 * 0.1]).collect();
        let r = robust_mean(&data, &AggregationPlan::with_blocks(1), &MedianOptions::default()).unwrap();
        assert_eq!(r.point, sample_mean(&data));
        assert!(robust_mean(&data, &AggregationPlan::with_blocks(14), &MedianOptions::default()).is_err());
    }

    #[test]
    fn radius_examples() {
        let r = mean_radius(1.0, 10_000, 0.01, RadiusVariant::C11).unwrap();
        assert!((r - 0.24453).abs() < 1e-4);
        assert_eq!(mean_radius(0.0, 10, 0.1, RadiusVariant::C11).unwrap(), 0.0);
        assert!(mean_radius(1.0, 10, 0.01, RadiusVariant::Sharp).is_err());
        for n in [100usize, 1000, 100_000] {
            for delta in [0.001, 0.05, 0.5] {
                if (n as f64) < 10.0 * (1.4f64 / delta).ln() {
                    continue;
                }
                let s = mean_radius(2.0, n, delta, RadiusVariant::Sharp).unwrap();
                let c = mean_radius(2.0, n, delta, RadiusVariant::C11).unwrap();
                assert!(s < c);
            }
        }
        let b = ball_radius(1.0, 10_000, 0.01).unwrap();
        assert!((b - 0.34582).abs() < 1e-4);
    }

    #[test]
    fn trace_examples() {
        let data = vec![vec![1.0, 2.0, 3.0]; 20];
        assert_eq!(
            robust_trace(&data, &AggregationPlan::with_blocks(3), &MedianOptions::default()).unwrap(),
            0.0
        );
        let data = vec![vec![-1.0], vec![1.0]];
        assert_eq!(
            robust_trace(&data, &AggregationPlan::with_blocks(1), &MedianOptions::default()).unwrap(),
            1.0
        );
        assert!(robust_trace(&data, &AggregationPlan::with_blocks(2), &MedianOptions::default()).is_err());
    }

    #[test]
    fn ball_of_constant_data_is_a_point() {
        let data = vec![vec![4.0, 4.0]; 30];
        let ball = confidence_ball(&data, &AggregationPlan::with_blocks(5), &MedianOptions::default()).unwrap();
        assert_eq!(ball.radius, 0.0);
        assert_eq!(ball.center, vec![4.0, 4.0]);
        assert!(ball.contains(&[4.0, 4.0]));
    }

    #[test]
    fn gaussian_trace_condition() {
        // Standard Gaussian in R^20: E||X||^4 = D^2 + 2D.
        let (lhs, rhs) = trace_condition(440.0, 20.0, 2000, 0.05).unwrap();
        assert!((lhs - 15.2 * 0.1f64.sqrt()).abs() < 1e-12);
        assert!(lhs < rhs);
        let (_, rhs) = trace_condition(440.0, 20.0, 200, 0.05).unwrap();
        assert!(lhs > rhs);
    }
}
