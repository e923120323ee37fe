//! Seeded samplers and the Monte Carlo experiment drivers.
//!
//! Every repetition draws from its own ChaCha stream `(seed, stream)`, so a
//! run is reproducible bit for bit regardless of how repetitions are
//! scheduled across threads.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::distr::{Distribution, Open01, Uniform};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{
    block_estimates, boost_bound, confidence_ball, mean_radius, partition_blocks, robust_mean, AggregationPlan,
    RadiusVariant,
};
use crate::constants::{c_alpha, Space, ALPHA_STAR, P_STAR};
use crate::covariance::{
    matrix_distance, robust_covariance_detailed, sample_covariance, top_projector, MatrixNorm, SymMatrix,
};
use crate::error::{Error, Result};
use crate::median::{dist, geometric_median, threshold_coefficients, MedianOptions, PointSet};
use crate::regress::{
    lasso_from, lasso_penalty, median_matrix_regression, nuclear_ls, DesignMatrix, LassoFit, LassoOptions,
    MatrixSamples, NuclearOptions, PenaltyRegime,
};

/// Per-coordinate variance of the heavy-tailed law with density
/// `3y^2 / (2(1 + |y|^3)^2)`.
///
/// Substituting `t = y^3` turns `E y^2` into the Beta integral
/// `int_0^inf t^(2/3) (1+t)^-2 dt = Gamma(5/3) Gamma(1/3) = 4 pi / (3 sqrt 3)`.
pub const HEAVY_TAIL_VARIANCE: f64 = 2.418_399_152_312_29;

/// Magnitude of the rare branch of the mixture noise, `250 / sqrt 2`.
pub const MIXTURE_SPIKE: f64 = 176.776_695_296_636_9;

/// Probability of the rare branch of the mixture noise.
pub const MIXTURE_SPIKE_PROB: f64 = 1.0 / 500.0;

/// Variance of the common branch of the mixture noise.
pub const MIXTURE_GAUSS_VARIANCE: f64 = 1.0 / 8.0;

/// Generator for stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Inverse CDF of the heavy-tailed law at `u` in `(0, 1)`.
pub fn heavy_tail_quantile(u: f64) -> f64 {
    let v = 2.0 * u - 1.0;
    v.signum() * (v.abs() / (1.0 - v.abs())).cbrt()
}

pub fn heavy_tail_cdf(y: f64) -> f64 {
    let tail = 0.5 / (1.0 + y.abs().powi(3));
    if y >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

pub fn sample_heavy_tail<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| heavy_tail_quantile(rng.sample::<f64, _>(Open01)))
        .collect()
}

/// `N(0, 1/8)` with probability `1 - 1/500`, otherwise `+-250/sqrt 2`.
pub fn sample_mixture_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let gauss = Normal::new(0.0, MIXTURE_GAUSS_VARIANCE.sqrt()).expect("valid sd");
    (0..n)
        .map(|_| {
            if rng.random::<f64>() < MIXTURE_SPIKE_PROB {
                if rng.random::<bool>() {
                    MIXTURE_SPIKE
                } else {
                    -MIXTURE_SPIKE
                }
            } else {
                gauss.sample(rng)
            }
        })
        .collect()
}

/// Uniform draws on `[-half_width, half_width]^d`.
pub fn sample_outliers<R: Rng + ?Sized>(rng: &mut R, count: usize, d: usize, half_width: f64) -> Result<Vec<Vec<f64>>> {
    if d == 0 || !(half_width > 0.0) || !half_width.is_finite() {
        return Err(Error::arg("outliers need D >= 1 and a positive half width"));
    }
    let cube = Uniform::new_inclusive(-half_width, half_width).map_err(|e| Error::arg(e.to_string()))?;
    Ok((0..count).map(|_| (0..d).map(|_| cube.sample(rng)).collect()).collect())
}

/// Isotropic symmetric designs: `E <A, X>^2 = ||A||_F^2` for symmetric `A`
/// (diagonal `A` for the diagonal kinds).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    /// Gaussian entries, variance 1 on the diagonal, 1/2 off it.
    GaussSym,
    /// Random signs, scaled by `1/sqrt 2` off the diagonal.
    RademacherSym,
    DiagGauss,
    DiagRademacher,
}

pub fn sample_isotropic_matrix<R: Rng + ?Sized>(rng: &mut R, d: usize, kind: MatrixKind) -> Result<SymMatrix> {
    if d == 0 {
        return Err(Error::arg("matrix dimension must be >= 1"));
    }
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let sign = |rng: &mut R| if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mut m = DMatrix::zeros(d, d);
    match kind {
        MatrixKind::GaussSym | MatrixKind::RademacherSym => {
            for i in 0..d {
                for j in i..d {
                    let draw = match kind {
                        MatrixKind::GaussSym => rng.sample::<f64, _>(StandardNormal),
                        _ => sign(rng),
                    };
                    let v = if i == j { draw } else { draw * half };
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
        }
        MatrixKind::DiagGauss => {
            for i in 0..d {
                m[(i, i)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        MatrixKind::DiagRademacher => {
            for i in 0..d {
                m[(i, i)] = sign(rng);
            }
        }
    }
    Ok(SymMatrix::symmetrized(m))
}

/// Distribution of data coordinates or noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Law {
    /// Identically zero.
    None,
    Gaussian,
    Mixture,
    HeavyTail,
}

impl Law {
    pub fn variance(self) -> f64 {
        match self {
            Law::None => 0.0,
            Law::Gaussian => 1.0,
            Law::Mixture => {
                (1.0 - MIXTURE_SPIKE_PROB) * MIXTURE_GAUSS_VARIANCE + MIXTURE_SPIKE_PROB * MIXTURE_SPIKE * MIXTURE_SPIKE
            }
            Law::HeavyTail => HEAVY_TAIL_VARIANCE,
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R, n: usize) -> Vec<f64> {
        match self {
            Law::None => vec![0.0; n],
            Law::Gaussian => (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            Law::Mixture => sample_mixture_noise(rng, n),
            Law::HeavyTail => sample_heavy_tail(rng, n),
        }
    }
}

/// Where the bad block estimates of the boosting Monte Carlo are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// One common point at distance 1e6.
    Far,
    /// Independent uniform directions at radius `1.01 C_alpha eps`.
    Ring,
    /// One common point at radius `1.01 C_alpha eps`.
    Cluster,
}

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Far => "far",
            Shape::Ring => "ring",
            Shape::Cluster => "cluster",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Pca,
    Lasso,
    MeanCoverage,
    BoostMc,
    Matreg,
}

/// Flat experiment configuration; fields not used by a kind are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    /// Repetitions (trials for `boost_mc`).
    pub repetitions: usize,
    pub dim: usize,
    /// Clean sample size.
    pub n: usize,
    /// Block count; derived from `delta` where the method allows it.
    pub blocks: Option<usize>,
    pub alpha: f64,
    pub p: f64,
    pub delta: f64,
    /// Law of data coordinates (pca, mean_coverage) or of the noise.
    pub law: Law,
    pub outliers: usize,
    /// Half width of the outlier cube (pca), coordinate value of outlier
    /// vectors (mean_coverage) or outlier response (matreg).
    pub outlier_scale: f64,
    pub components: usize,
    /// Threshold of the thresholded median.
    pub nu: f64,
    pub sparsity: usize,
    pub coef_range: f64,
    pub cv_folds: usize,
    pub cv_grid: usize,
    /// Fixed penalty; cross-validated (lasso) or noise-scaled (matreg) when absent.
    pub penalty: Option<f64>,
    /// Accuracy of good block estimates in `boost_mc`.
    pub epsilon: f64,
    pub shapes: Vec<Shape>,
    /// Contaminated fraction of blocks in `boost_mc`.
    pub tau: f64,
    pub rank: usize,
    /// Nonzero eigenvalue of the low-rank target.
    pub signal: f64,
    pub t: f64,
    pub design: MatrixKind,
    /// Nuclear radius as a multiple of `||A_0||_1`.
    pub radius_factor: f64,
    pub bins: usize,
    pub median_tol: f64,
}

impl ExperimentConfig {
    /// Reference setup of each experiment.
    pub fn paper_defaults(kind: ExperimentKind) -> Self {
        let base = ExperimentConfig {
            kind,
            seed: 42,
            repetitions: 100,
            dim: 2,
            n: 100,
            blocks: None,
            alpha: ALPHA_STAR,
            p: P_STAR,
            delta: 0.05,
            law: Law::Gaussian,
            outliers: 0,
            outlier_scale: 20.0,
            components: 5,
            nu: 0.5,
            sparsity: 10,
            coef_range: 15.0,
            cv_folds: 4,
            cv_grid: 20,
            penalty: None,
            epsilon: 1.0,
            shapes: vec![Shape::Far, Shape::Ring, Shape::Cluster],
            tau: 0.0,
            rank: 2,
            signal: 4.0,
            t: 3.0,
            design: MatrixKind::GaussSym,
            radius_factor: 2.0,
            bins: 20,
            median_tol: 1e-10,
        };
        match kind {
            ExperimentKind::Pca => ExperimentConfig {
                repetitions: 100,
                dim: 120,
                n: 156,
                blocks: Some(10),
                law: Law::HeavyTail,
                outliers: 4,
                outlier_scale: 20.0,
                ..base
            },
            ExperimentKind::Lasso => ExperimentConfig {
                repetitions: 50,
                dim: 1000,
                n: 300,
                blocks: Some(4),
                law: Law::Mixture,
                ..base
            },
            ExperimentKind::MeanCoverage => ExperimentConfig {
                repetitions: 500,
                dim: 20,
                n: 2000,
                law: Law::HeavyTail,
                outlier_scale: 1e4,
                ..base
            },
            ExperimentKind::BoostMc => ExperimentConfig {
                repetitions: 100_000,
                dim: 2,
                blocks: Some(16),
                ..base
            },
            ExperimentKind::Matreg => ExperimentConfig {
                repetitions: 50,
                dim: 20,
                n: 4000,
                law: Law::HeavyTail,
                outliers: 1,
                outlier_scale: 1e4,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("repetitions", self.repetitions),
            ("dim", self.dim),
            ("n", self.n),
            ("bins", self.bins),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::arg(format!("{name} must be positive")));
        }
        if self.blocks == Some(0) {
            return Err(Error::arg("blocks must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::arg(format!("alpha = {} outside (0, 1/2)", self.alpha)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::arg(format!("delta = {} outside (0, 1)", self.delta)));
        }
        if !(self.median_tol > 0.0) {
            return Err(Error::arg("median_tol must be positive"));
        }
        if !(self.outlier_scale > 0.0) || !self.outlier_scale.is_finite() {
            return Err(Error::arg("outlier_scale must be positive"));
        }
        if let Some(eps) = self.penalty {
            if !(eps >= 0.0) || !eps.is_finite() {
                return Err(Error::arg(format!("penalty {eps} must be >= 0")));
            }
        }
        match self.kind {
            ExperimentKind::Pca => {
                if self.components == 0 || self.components >= self.dim {
                    return Err(Error::arg("components must lie in [1, dim)"));
                }
                if !(self.nu >= 0.0 && self.nu <= 1.0) {
                    return Err(Error::arg(format!("nu = {} outside [0, 1]", self.nu)));
                }
            }
            ExperimentKind::Lasso => {
                if self.sparsity == 0 || self.sparsity > self.dim {
                    return Err(Error::arg("sparsity must lie in [1, dim]"));
                }
                if !(self.coef_range > 0.0) {
                    return Err(Error::arg("coef_range must be positive"));
                }
                if self.penalty.is_none() && (self.cv_folds < 2 || self.cv_folds > self.n || self.cv_grid == 0) {
                    return Err(Error::arg("cross validation needs 2 <= cv_folds <= n and cv_grid >= 1"));
                }
            }
            ExperimentKind::BoostMc => {
                if !(self.p >= 0.0 && self.p < 1.0) {
                    return Err(Error::arg(format!("p = {} outside [0, 1)", self.p)));
                }
                if !(self.epsilon > 0.0) {
                    return Err(Error::arg("epsilon must be positive"));
                }
                if self.shapes.is_empty() {
                    return Err(Error::arg("at least one shape is required"));
                }
                if !(self.tau >= 0.0 && self.tau < 1.0) {
                    return Err(Error::arg(format!("tau = {} outside [0, 1)", self.tau)));
                }
            }
            ExperimentKind::MeanCoverage => {
                if !(self.p > 0.0 && self.p < self.alpha) {
                    return Err(Error::arg(format!("p = {} outside (0, alpha)", self.p)));
                }
                if matches!(self.law, Law::None | Law::Mixture) {
                    return Err(Error::arg("mean coverage supports the gaussian and heavy_tail laws"));
                }
            }
            ExperimentKind::Matreg => {
                if self.rank == 0 || self.rank > self.dim {
                    return Err(Error::arg("rank must lie in [1, dim]"));
                }
                if !(self.signal > 0.0) || !(self.radius_factor >= 1.0) {
                    return Err(Error::arg("signal must be positive and radius_factor >= 1"));
                }
                if !(self.t >= 1.0) {
                    return Err(Error::arg(format!("t = {} must be >= 1", self.t)));
                }
            }
        }
        Ok(())
    }

    fn median_options(&self) -> MedianOptions {
        MedianOptions {
            tol: self.median_tol,
            ..MedianOptions::default()
        }
    }
}

/// Order statistics of one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Summary {
            count: values.len(),
            mean,
            min: quantile(&sorted, 0.0),
            q05: quantile(&sorted, 0.05),
            q25: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q75: quantile(&sorted, 0.75),
            q95: quantile(&sorted, 0.95),
            max: quantile(&sorted, 1.0),
        }
    }
}

/// Equal-width histogram; bin `i` is `[edges[i], edges[i+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn of(values: &[f64], bins: usize) -> Histogram {
        let bins = bins.max(1);
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return Histogram {
                edges: vec![0.0, 0.0],
                counts: vec![0],
            };
        }
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bins = if hi > lo { bins } else { 1 };
        let width = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * width).collect();
        edges.push(hi.next_up());
        let mut counts = vec![0u64; bins];
        for v in finite {
            let i = edges.partition_point(|&e| e <= v) - 1;
            counts[i.min(bins - 1)] += 1;
        }
        Histogram { edges, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// One value per repetition.
    pub series: BTreeMap<String, Vec<f64>>,
    pub summaries: BTreeMap<String, Summary>,
    pub histograms: BTreeMap<String, Histogram>,
    pub metrics: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, u64>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl ExperimentReport {
    pub fn new(config: &ExperimentConfig) -> Self {
        ExperimentReport {
            config: config.clone(),
            series: BTreeMap::new(),
            summaries: BTreeMap::new(),
            histograms: BTreeMap::new(),
            metrics: BTreeMap::new(),
            counts: BTreeMap::new(),
            warnings: Vec::new(),
            wall_clock_seconds: None,
        }
    }

    /// Record a per-repetition series with its summary and histogram.
    pub fn add_series(&mut self, name: &str, values: Vec<f64>) {
        self.summaries.insert(name.to_string(), Summary::of(&values));
        self.histograms
            .insert(name.to_string(), Histogram::of(&values, self.config.bins));
        self.series.insert(name.to_string(), values);
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn count(&mut self, name: &str, value: u64) {
        self.counts.insert(name.to_string(), value);
    }
}

/// Runs `f` once per repetition on its own stream; results are in
/// repetition order.
fn repeat<T, F>(cfg: &ExperimentConfig, stream_offset: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> Result<T> + Sync,
{
    (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| f(&mut stream_rng(cfg.seed, stream_offset + rep as u64)))
        .collect()
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    match cfg.kind {
        ExperimentKind::Pca => run_pca_experiment(cfg),
        ExperimentKind::Lasso => run_lasso_experiment(cfg),
        ExperimentKind::MeanCoverage => run_mean_coverage(cfg),
        ExperimentKind::BoostMc => run_boost_mc(cfg),
        ExperimentKind::Matreg => run_matreg_experiment(cfg),
    }
}

fn expect_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(Error::arg(format!(
            "config kind {:?} passed to the {kind:?} driver",
            cfg.kind
        )));
    }
    cfg.validate()
}

/// Diagonal scales of the PCA population: `sqrt(5), sqrt(6), ...` on the
/// first `m` coordinates and `1/sqrt(D)` elsewhere.
pub fn pca_scales(d: usize, m: usize) -> Vec<f64> {
    (0..d)
        .map(|i| {
            if i < m {
                ((5 + i) as f64).sqrt()
            } else {
                1.0 / (d as f64).sqrt()
            }
        })
        .collect()
}

/// Robust PCA: inliers `A Y` with independent coordinates of `Y`, plus
/// uniform cube outliers; projector errors of the sample covariance, the
/// median covariance and its thresholded version.
pub fn run_pca_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_kind(cfg, ExperimentKind::Pca)?;
    let (d, m) = (cfg.dim, cfg.components);
    let scales = pca_scales(d, m);
    let truth = top_projector(&SymMatrix::from_diagonal(&scales), m)?;
    let total = cfg.n + cfg.outliers;
    let plan = AggregationPlan {
        alpha: cfg.alpha,
        p: cfg.p,
        delta: cfg.delta,
        k: cfg.blocks,
        ..AggregationPlan::default()
    };
    let k = plan.blocks_for(total)?;
    let opts = cfg.median_options();
    let records = repeat(cfg, 0, |rng| {
        let mut data: Vec<Vec<f64>> = (0..cfg.n)
            .map(|_| {
                let y = cfg.law.sample(rng, d);
                y.iter().zip(&scales).map(|(v, s)| v * s).collect()
            })
            .collect();
        data.extend(sample_outliers(rng, cfg.outliers, d, cfg.outlier_scale)?);
        data.shuffle(rng);

        let err = |s: &SymMatrix| -> Result<f64> {
            matrix_distance(&top_projector(s, m)?.matrix, &truth.matrix, MatrixNorm::Operator)
        };
        let sample = err(&sample_covariance(&data, true)?)?;
        let rc = robust_covariance_detailed(&data, &plan, true, &opts)?;
        let median = err(&rc.matrix)?;
        let thresholded = threshold_coefficients(&rc.blocks, &rc.median.weights, cfg.nu)?;
        let thresholded = err(&SymMatrix::from_flat(d, &thresholded.point)?)?;
        Ok([sample, median, thresholded, f64::from(u8::from(rc.median.converged))])
    })?;
    let mut report = ExperimentReport::new(cfg);
    let col = |i: usize| records.iter().map(|r| r[i]).collect::<Vec<_>>();
    report.add_series("sample_error", col(0));
    report.add_series("median_error", col(1));
    report.add_series("thresholded_error", col(2));
    let wins = records.iter().filter(|r| r[1] < r[0]).count();
    report.metric("median_beats_sample_fraction", wins as f64 / records.len() as f64);
    report.count("blocks", k as u64);
    report.count("discarded", (total - k * (total / k)) as u64);
    let unconverged = records.iter().filter(|r| r[3] == 0.0).count();
    if unconverged > 0 {
        report
            .warnings
            .push(format!("median solver unconverged in {unconverged} repetitions"));
    }
    Ok(report)
}

/// Grid of `count` log-spaced values over `[0.01, 10] * level`, descending.
pub fn penalty_grid(level: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![level];
    }
    let (lo, hi) = ((0.01 * level).ln(), (10.0 * level).ln());
    (0..count)
        .map(|i| (hi + (lo - hi) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Which estimator a cross-validation run tunes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CvTarget {
    Lasso,
    /// Median of `k` block Lassos.
    MedianLasso {
        k: usize,
        opts: MedianOptions,
    },
}

/// Descending-penalty Lasso path with warm starts.
fn lasso_path(dm: &DesignMatrix, grid: &[f64], opts: &LassoOptions) -> Result<Vec<LassoFit>> {
    let mut coef = vec![0.0; dm.dim()];
    grid.iter()
        .map(|&eps| {
            let fit = lasso_from(dm, &LassoOptions { penalty: eps, ..*opts }, &coef)?;
            coef.clone_from(&fit.coef);
            Ok(fit)
        })
        .collect()
}

/// The grid values above `eps`, then `eps` itself.
fn path_to(grid: &[f64], eps: f64) -> Vec<f64> {
    let mut path: Vec<f64> = grid.iter().copied().filter(|&g| g > eps).collect();
    path.push(eps);
    path
}

/// Median of `k` block Lassos, each warm-started down the path to its last
/// penalty. Returns the median and whether every block fit converged.
fn median_lasso_path(
    dm: &DesignMatrix,
    path: &[f64],
    k: usize,
    opts: &LassoOptions,
    median_opts: &MedianOptions,
) -> Result<Vec<(Vec<f64>, bool)>> {
    let partition = partition_blocks(dm.n(), k)?;
    let paths = block_estimates(&partition, |g| lasso_path(&dm.rows(g), path, opts));
    let paths: Vec<Vec<LassoFit>> = paths.into_iter().collect::<Result<_>>()?;
    (0..path.len())
        .map(|g| {
            let flat: Vec<f64> = paths.iter().flat_map(|p| p[g].coef.iter().copied()).collect();
            let point = geometric_median(&PointSet::from_flat(dm.dim(), flat)?, median_opts)?.point;
            Ok((point, paths.iter().all(|p| p[g].converged)))
        })
        .collect()
}

/// K-fold cross-validated penalty (mean squared prediction error on the
/// held-out fold) over a descending grid. Ties go to the larger penalty.
///
/// For the median-Lasso each training fold is cut into blocks of the same
/// size `floor(n/k)` the full-sample estimator uses.
pub fn cross_validate_penalty(
    dm: &DesignMatrix,
    grid: &[f64],
    folds: usize,
    opts: &LassoOptions,
    target: CvTarget,
) -> Result<f64> {
    let n = dm.n();
    if folds < 2 || folds > n || grid.is_empty() {
        return Err(Error::arg(format!("cannot split n = {n} into {folds} folds")));
    }
    let size = n / folds;
    let mut loss = vec![0.0f64; grid.len()];
    for f in 0..folds {
        let held = f * size..(f + 1) * size;
        let train: Vec<usize> = (0..n).filter(|i| !held.contains(i)).collect();
        let test: Vec<usize> = held.collect();
        let (train, test) = (dm.select_rows(&train), dm.select_rows(&test));
        let path: Vec<Vec<f64>> = match target {
            CvTarget::Lasso => lasso_path(&train, grid, opts)?.into_iter().map(|f| f.coef).collect(),
            CvTarget::MedianLasso { k, opts: median_opts } => {
                // Keep the block size of the full-sample estimator.
                let block = n / k;
                if block == 0 {
                    return Err(Error::arg(format!("cannot split n = {n} into {k} blocks")));
                }
                let k_train = (train.n() / block).max(1);
                median_lasso_path(&train, grid, k_train, opts, &median_opts)?
                    .into_iter()
                    .map(|(point, _)| point)
                    .collect()
            }
        };
        for (g, coef) in path.iter().enumerate() {
            loss[g] += test.residual(coef).norm_squared() / test.n() as f64;
        }
    }
    let best = (0..grid.len())
        .min_by(|&a, &b| loss[a].total_cmp(&loss[b]))
        .expect("grid is nonempty");
    Ok(grid[best])
}

/// Sparse regression with Gaussian design: relative errors of the Lasso and
/// of the median-Lasso, each at its own cross-validated penalty.
pub fn run_lasso_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_kind(cfg, ExperimentKind::Lasso)?;
    let (d, n) = (cfg.dim, cfg.n);
    let k = cfg.blocks.unwrap_or(4);
    let level = lasso_penalty(1.0, n, d, 1.0, PenaltyRegime::Gaussian, None)?;
    let grid = penalty_grid(level, cfg.cv_grid);
    let opts = LassoOptions::new(0.0);
    // Model selection only needs the loss curve, not fully polished fits.
    let cv_opts = LassoOptions {
        tol: 1e-6,
        max_sweeps: 2_000,
        ..opts
    };
    let median_opts = cfg.median_options();
    let records = repeat(cfg, 0, |rng| {
        let mut truth = vec![0.0; d];
        let coef = Uniform::new_inclusive(-cfg.coef_range, cfg.coef_range).map_err(|e| Error::arg(e.to_string()))?;
        for i in index::sample(rng, d, cfg.sparsity) {
            truth[i] = coef.sample(rng);
        }
        let x = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = cfg.law.sample(rng, n);
        let signal = &x * nalgebra::DVector::from_column_slice(&truth);
        let y: Vec<f64> = signal.iter().zip(&noise).map(|(s, e)| s + e).collect();
        let dm = DesignMatrix::new(x, y)?;
        let (eps, eps_median) = match cfg.penalty {
            Some(eps) => (eps, eps),
            None => (
                cross_validate_penalty(&dm, &grid, cfg.cv_folds, &cv_opts, CvTarget::Lasso)?,
                cross_validate_penalty(
                    &dm,
                    &grid,
                    cfg.cv_folds,
                    &cv_opts,
                    CvTarget::MedianLasso { k, opts: median_opts },
                )?,
            ),
        };
        // Final fits follow the warm-started path down to the chosen penalty.
        let plain = lasso_path(&dm, &path_to(&grid, eps), &opts)?
            .pop()
            .expect("path is nonempty");
        let (med, med_converged) = median_lasso_path(&dm, &path_to(&grid, eps_median), k, &opts, &median_opts)?
            .pop()
            .expect("path is nonempty");
        let norm = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
        let converged = plain.converged && med_converged;
        Ok([
            dist(&plain.coef, &truth) / norm,
            dist(&med, &truth) / norm,
            eps,
            eps_median,
            f64::from(u8::from(converged)),
        ])
    })?;
    let mut report = ExperimentReport::new(cfg);
    let col = |i: usize| records.iter().map(|r| r[i]).collect::<Vec<_>>();
    let plain = col(0);
    let median = col(1);
    report.metric("plain_over_0.15", plain.iter().filter(|&&e| e > 0.15).count() as f64);
    report.metric("median_over_0.15", median.iter().filter(|&&e| e > 0.15).count() as f64);
    report.metric("median_max_error", median.iter().copied().fold(0.0, f64::max));
    report.metric("reference_penalty", level);
    report.add_series("lasso_error", plain);
    report.add_series("median_lasso_error", median);
    report.add_series("penalty", col(2));
    report.add_series("median_penalty", col(3));
    report.count("blocks", k as u64);
    let unconverged = records.iter().filter(|r| r[4] == 0.0).count();
    if unconverged > 0 {
        report
            .warnings
            .push(format!("lasso solver unconverged in {unconverged} repetitions"));
    }
    Ok(report)
}

fn uniform_direction<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Confidence boosting with synthetic block estimates: each is uniform in
/// the `eps`-ball around zero with probability `1 - p`, otherwise placed by
/// the adversarial shape; `floor(tau k)` more are replaced outright.
pub fn run_boost_mc(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_kind(cfg, ExperimentKind::BoostMc)?;
    let d = cfg.dim;
    let k = cfg.blocks.unwrap_or(16);
    let c = c_alpha(cfg.alpha, Space::Hilbert)?;
    let threshold = c * cfg.epsilon;
    let near = 1.01 * threshold;
    let replaced = (cfg.tau * k as f64).floor() as usize;
    let opts = cfg.median_options();
    let bound = if cfg.p == 0.0 {
        0.0
    } else {
        boost_bound(k, cfg.alpha, cfg.p, cfg.tau)?.bound
    };
    let tau_max = (cfg.alpha - cfg.p) / (1.0 - cfg.p);
    let mut axis = vec![0.0; d];
    axis[0] = 1.0;
    let records = repeat(cfg, 0, |rng| {
        let good: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let r = cfg.epsilon * rng.random::<f64>().powf(1.0 / d as f64);
                uniform_direction(rng, d).into_iter().map(|x| r * x).collect()
            })
            .collect();
        let bad: Vec<bool> = (0..k).map(|j| j < replaced || rng.random::<f64>() < cfg.p).collect();
        let ring: Vec<Vec<f64>> = (0..k)
            .map(|_| uniform_direction(rng, d).into_iter().map(|x| near * x).collect())
            .collect();
        cfg.shapes
            .iter()
            .map(|shape| {
                let points: Vec<Vec<f64>> = (0..k)
                    .map(|j| {
                        if !bad[j] {
                            return good[j].clone();
                        }
                        match shape {
                            Shape::Far => axis.iter().map(|a| a * 1e6).collect(),
                            Shape::Cluster => axis.iter().map(|a| a * near).collect(),
                            Shape::Ring => ring[j].clone(),
                        }
                    })
                    .collect();
                let med = geometric_median(&PointSet::new(points)?, &opts)?;
                Ok(med.point.iter().map(|x| x * x).sum::<f64>().sqrt())
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let mut report = ExperimentReport::new(cfg);
    let mut worst: f64 = 0.0;
    for (s, shape) in cfg.shapes.iter().enumerate() {
        let deviations: Vec<f64> = records.iter().map(|r| r[s]).collect();
        let rate = deviations.iter().filter(|&&v| v > threshold).count() as f64 / deviations.len() as f64;
        worst = worst.max(rate);
        report.metric(&format!("failure_rate_{}", shape.name()), rate);
        report.add_series(&format!("deviation_{}", shape.name()), deviations);
    }
    let trials = cfg.repetitions as f64;
    report.metric("failure_rate_worst", worst);
    report.metric("bound", bound);
    report.metric("bound_standard_error", (bound * (1.0 - bound) / trials).sqrt());
    report.metric("threshold", threshold);
    report.metric("tau_max", tau_max);
    report.count("blocks", k as u64);
    report.count("replaced_blocks", replaced as u64);
    Ok(report)
}

/// Median-of-means accuracy against the `11 sqrt(...)` radius with known
/// trace, and containment of the mean in the data-driven confidence ball.
pub fn run_mean_coverage(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_kind(cfg, ExperimentKind::MeanCoverage)?;
    let d = cfg.dim;
    let plan = AggregationPlan {
        alpha: cfg.alpha,
        p: cfg.p,
        delta: cfg.delta,
        k: cfg.blocks,
        ..AggregationPlan::default()
    };
    let total = cfg.n + cfg.outliers;
    let k = plan.blocks_for(total)?;
    let trace = d as f64 * cfg.law.variance();
    let radius = mean_radius(trace, total, cfg.delta, RadiusVariant::C11)?;
    let opts = cfg.median_options();
    let mean = vec![0.0; d];
    let records = repeat(cfg, 0, |rng| {
        let mut data: Vec<Vec<f64>> = (0..cfg.n).map(|_| cfg.law.sample(rng, d)).collect();
        data.extend((0..cfg.outliers).map(|_| vec![cfg.outlier_scale; d]));
        data.shuffle(rng);
        let est = robust_mean(&data, &plan, &opts)?;
        let ball = confidence_ball(&data, &plan, &opts)?;
        let error = dist(&est.point, &mean);
        Ok([
            error,
            f64::from(u8::from(error <= radius)),
            f64::from(u8::from(ball.contains(&mean))),
            ball.radius,
            ball.trace,
        ])
    })?;
    let mut report = ExperimentReport::new(cfg);
    let col = |i: usize| records.iter().map(|r| r[i]).collect::<Vec<_>>();
    let reps = records.len() as f64;
    report.metric("radius", radius);
    report.metric("trace", trace);
    report.metric("radius_coverage", col(1).iter().sum::<f64>() / reps);
    report.metric("ball_coverage", col(2).iter().sum::<f64>() / reps);
    report.add_series("error", col(0));
    report.add_series("ball_radius", col(3));
    report.add_series("trace_estimate", col(4));
    report.count("blocks", k as u64);
    report.count("discarded", (total - k * (total / k)) as u64);
    if cfg.law == Law::HeavyTail {
        report
            .warnings
            .push("heavy-tailed law has no fourth moment; the ball's trace condition is not met".into());
    }
    Ok(report)
}

fn random_low_rank<R: Rng + ?Sized>(rng: &mut R, d: usize, rank: usize, signal: f64) -> SymMatrix {
    let g = DMatrix::from_fn(d, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    SymMatrix::symmetrized(&q * q.transpose() * signal)
}

/// Penalty `2 sigma sqrt(2D/m)` of a nuclear solve on `m` samples.
pub fn nuclear_penalty(sigma: f64, d: usize, m: usize) -> f64 {
    2.0 * sigma * (2.0 * d as f64 / m as f64).sqrt()
}

/// Low-rank matrix regression with heavy-tailed noise and gross outlier
/// responses: Frobenius errors of the full-data solve and of the median of
/// `floor(t) + 1` block solves, plus the median estimator on a clean copy
/// (Gaussian noise of equal variance, no outliers).
pub fn run_matreg_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_kind(cfg, ExperimentKind::Matreg)?;
    let (d, n) = (cfg.dim, cfg.n);
    let k = cfg.t.floor() as usize + 1;
    if 2 * k > n || cfg.outliers > n {
        return Err(Error::arg("matreg needs n >= 2k and at most n outliers"));
    }
    let sigma = cfg.law.variance().sqrt();
    let eps_full = cfg.penalty.unwrap_or_else(|| nuclear_penalty(sigma, d, n));
    let eps_block = cfg.penalty.unwrap_or_else(|| nuclear_penalty(sigma, d, n / k));
    let nuclear = NuclearOptions {
        tol: 1e-7,
        ..NuclearOptions::default()
    };
    let opts = cfg.median_options();
    let clean_offset = 1u64 << 40;
    let records = repeat(cfg, 0, |rng| {
        let truth = random_low_rank(rng, d, cfg.rank, cfg.signal);
        let radius = cfg.radius_factor * cfg.rank as f64 * cfg.signal;
        let designs: Vec<SymMatrix> = (0..n)
            .map(|_| sample_isotropic_matrix(rng, d, cfg.design))
            .collect::<Result<_>>()?;
        let signal: Vec<f64> = designs.iter().map(|x| x.inner(&truth)).collect();
        let noise = cfg.law.sample(rng, n);
        let mut y: Vec<f64> = signal.iter().zip(&noise).map(|(s, e)| s + e).collect();
        for j in index::sample(rng, n, cfg.outliers) {
            y[j] = cfg.outlier_scale;
        }
        // The clean copy draws from its own stream so the contaminated run
        // is unaffected by it.
        let mut clean_rng = ChaCha8Rng::from_rng(rng);
        clean_rng.set_stream(clean_offset);
        let clean_y: Vec<f64> = signal
            .iter()
            .map(|s| s + sigma * clean_rng.sample::<f64, _>(StandardNormal))
            .collect();

        let ms = MatrixSamples::new(&designs, y, radius)?;
        let clean = MatrixSamples::new(&designs, clean_y, radius)?;
        let frob = |flat: &[f64]| -> Result<f64> {
            matrix_distance(&SymMatrix::from_flat(d, flat)?, &truth, MatrixNorm::Frobenius)
        };
        let single = nuclear_ls(&ms, eps_full, &nuclear)?;
        let med = median_matrix_regression(&ms, eps_block, cfg.t, &nuclear, &opts)?;
        let med_clean = median_matrix_regression(&clean, eps_block, cfg.t, &nuclear, &opts)?;
        let converged = single.converged && med.blocks_converged && med_clean.blocks_converged;
        Ok([
            frob(&single.estimate.flatten())?,
            frob(&med.median.point)?,
            frob(&med_clean.median.point)?,
            f64::from(u8::from(converged)),
        ])
    })?;
    let mut report = ExperimentReport::new(cfg);
    let col = |i: usize| records.iter().map(|r| r[i]).collect::<Vec<_>>();
    report.metric("penalty_full", eps_full);
    report.metric("penalty_block", eps_block);
    report.metric("noise_sd", sigma);
    report.add_series("single_error", col(0));
    report.add_series("median_error", col(1));
    report.add_series("clean_median_error", col(2));
    report.count("blocks", k as u64);
    let unconverged = records.iter().filter(|r| r[3] == 0.0).count();
    if unconverged > 0 {
        report
            .warnings
            .push(format!("nuclear solver unconverged in {unconverged} repetitions"));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heavy_tail_quantile_examples() {
        assert_eq!(heavy_tail_quantile(0.5), 0.0);
        assert!((heavy_tail_quantile(0.75) - 1.0).abs() < 1e-15);
        assert!((heavy_tail_cdf(1.0) - 0.75).abs() < 1e-15);
        for u in [0.01, 0.3, 0.9, 0.999] {
            assert!((heavy_tail_cdf(heavy_tail_quantile(u)) - u).abs() < 1e-12);
        }
    }

    #[test]
    fn heavy_tail_variance_constant() {
        let expect = 4.0 * std::f64::consts::PI / (3.0 * 3f64.sqrt());
        assert!((HEAVY_TAIL_VARIANCE - expect).abs() < 1e-15);
        assert!((MIXTURE_SPIKE - 250.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = sample_heavy_tail(&mut stream_rng(1, 3), 5);
        let b = sample_heavy_tail(&mut stream_rng(1, 3), 5);
        let c = sample_heavy_tail(&mut stream_rng(1, 4), 5);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rademacher_matrix_entries() {
        let x = sample_isotropic_matrix(&mut stream_rng(0, 0), 4, MatrixKind::RademacherSym).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for i in 0..4 {
            for j in 0..4 {
                let v = x.as_matrix()[(i, j)].abs();
                assert!((v - if i == j { 1.0 } else { h }).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn histogram_bins_are_half_open() {
        let h = Histogram::of(&[0.0, 0.5, 1.0, 1.0], 2);
        assert_eq!(h.counts, vec![1, 3]);
        assert_eq!(h.edges[1], 0.5);
        assert!(h.edges[2] > 1.0);
        let h = Histogram::of(&[2.0, 2.0], 5);
        assert_eq!(h.counts, vec![2]);
    }

    #[test]
    fn quantiles_interpolate() {
        let s = Summary::of(&[3.0, 1.0, 2.0, 4.0]);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.min, 1.0);
        assert_eq!(s.max, 4.0);
    }

    #[test]
    fn penalty_grid_spans_range() {
        let g = penalty_grid(2.0, 20);
        assert_eq!(g.len(), 20);
        assert!((g[0] - 20.0).abs() < 1e-12 && (g[19] - 0.02).abs() < 1e-14);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn boost_without_bad_blocks_never_fails() {
        let cfg = ExperimentConfig {
            p: 0.0,
            repetitions: 200,
            ..ExperimentConfig::paper_defaults(ExperimentKind::BoostMc)
        };
        let r = run_boost_mc(&cfg).unwrap();
        assert_eq!(r.metrics["failure_rate_worst"], 0.0);
        assert_eq!(r.metrics["bound"], 0.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::paper_defaults(ExperimentKind::Pca);
        assert!(cfg.validate().is_ok());
        cfg.components = 120;
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            repetitions: 0,
            ..ExperimentConfig::paper_defaults(ExperimentKind::Lasso)
        };
        assert!(cfg.validate().is_err());
    }
}
