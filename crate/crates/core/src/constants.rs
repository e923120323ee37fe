//! Large-deviation exponent, geometric-median blow-up constants and the
//! numeric constants that appear in the derived deviation bounds.
//!
//! Every bound constant is computed here from first principles so it can be
//! compared against the rounded value quoted alongside each bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default fraction of "bad" blocks tolerated by the median.
pub const ALPHA_STAR: f64 = 7.0 / 18.0;
/// Default per-block failure probability.
pub const P_STAR: f64 = 0.1;
/// Per-block failure probability used for the univariate/selector bounds.
pub const P_SELECTOR: f64 = 0.12;

/// Geometry of the ambient space, selecting the blow-up constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Hilbert,
    Banach,
}

/// Binomial large-deviation exponent
/// `psi(alpha; p) = (1-alpha) ln((1-alpha)/(1-p)) + alpha ln(alpha/p)`.
///
/// Accepts `0 < p < alpha <= 1/2`; the closed endpoint `alpha = 1/2` is the
/// univariate-median / selector case.
pub fn psi(alpha: f64, p: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(Error::arg(format!("psi: alpha = {alpha} outside (0, 1/2]")));
    }
    if !(p > 0.0 && p < alpha) {
        return Err(Error::arg(format!("psi: p = {p} outside (0, alpha)")));
    }
    Ok(psi_unchecked(alpha, p))
}

#[inline]
pub(crate) fn psi_unchecked(alpha: f64, p: f64) -> f64 {
    (1.0 - alpha) * ((1.0 - alpha) / (1.0 - p)).ln() + alpha * (alpha / p).ln()
}

/// Blow-up constant `C_alpha` of the geometric median.
///
/// Hilbert: `(1-alpha) / sqrt(1-2 alpha)`. Banach: `2(1-alpha)/(1-2 alpha)`.
pub fn c_alpha(alpha: f64, space: Space) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::arg(format!("c_alpha: alpha = {alpha} outside (0, 1/2)")));
    }
    Ok(match space {
        Space::Hilbert => (1.0 - alpha) * (1.0 / (1.0 - 2.0 * alpha)).sqrt(),
        Space::Banach => 2.0 * (1.0 - alpha) / (1.0 - 2.0 * alpha),
    })
}

/// `p*(alpha) = max { p in (0, alpha) : psi(alpha; p) >= 1 }`, by bisection.
///
/// `psi(alpha; .)` decreases strictly from `+inf` at `0` to `0` at `alpha`,
/// so the root is unique.
pub fn p_star(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::arg(format!("p_star: alpha = {alpha} outside (0, 1/2)")));
    }
    let mut lo = f64::MIN_POSITIVE;
    let mut hi = alpha;
    if psi_unchecked(alpha, lo) < 1.0 {
        return Err(Error::Numeric(format!("p_star: psi({alpha}; p) < 1 for every p")));
    }
    // Bisect on the log scale first, then linearly; the root can be tiny.
    while hi - lo > 1e-10 * hi.max(1e-300) && hi - lo > 1e-300 {
        let mid = if hi / lo > 4.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if psi_unchecked(alpha, mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

fn default_pair() -> (f64, f64) {
    let c = c_alpha(ALPHA_STAR, Space::Hilbert).expect("alpha* in range");
    let psi = psi_unchecked(ALPHA_STAR, P_STAR);
    (c, psi)
}

/// `C_{alpha*} sqrt(2 / (p* psi*))`: leading constant of the median-of-means
/// deviation radius (quoted as 11).
pub fn mean_deviation_constant() -> f64 {
    let (c, psi) = default_pair();
    c * (2.0 / (P_STAR * psi)).sqrt()
}

/// `C_{alpha*} / sqrt(p* psi*)`: constant of the sharpened radius (quoted as 7.6).
pub fn mean_deviation_sharp_constant() -> f64 {
    let (c, psi) = default_pair();
    c / (P_STAR * psi).sqrt()
}

/// `1 / sqrt(p psi(1/2; p))` at `p = 0.12`: coordinatewise median-of-means
/// constant (quoted as 4.4).
pub fn coordinatewise_constant() -> f64 {
    1.0 / (P_SELECTOR * psi_unchecked(0.5, P_SELECTOR)).sqrt()
}

/// `3 / sqrt(p psi(1/2; p))` at `p = 0.12`: selector-estimator constant
/// (quoted as 13.2).
pub fn selector_constant() -> f64 {
    3.0 * coordinatewise_constant()
}

/// `1 / psi(alpha*; p*)`: slope of the block-count cap (quoted as 3.5).
pub fn block_cap_slope() -> f64 {
    1.0 / psi_unchecked(ALPHA_STAR, P_STAR)
}

/// `1 / psi(1/2; 0.12)`: block-count cap slope for the selector (quoted as 2.4).
pub fn selector_block_cap_slope() -> f64 {
    1.0 / psi_unchecked(0.5, P_SELECTOR)
}

/// `exp(psi(alpha*; p*))`: bounds `log(1/delta) + psi <= log(c/delta)` (quoted as 1.4).
pub fn confidence_inflation() -> f64 {
    psi_unchecked(ALPHA_STAR, P_STAR).exp()
}

/// `exp(psi(1/2; 0.12))` (quoted as 1.6).
pub fn selector_confidence_inflation() -> f64 {
    psi_unchecked(0.5, P_SELECTOR).exp()
}

/// `2 C_{alpha*} / sqrt(p* psi*)`: square-root term of the trace condition
/// (quoted as 15.2).
pub fn trace_sqrt_constant() -> f64 {
    2.0 * mean_deviation_sharp_constant()
}

/// `4 C_{alpha*} / (p* psi*)`: linear term of the trace condition (quoted as 178).
pub fn trace_linear_constant() -> f64 {
    let (c, psi) = default_pair();
    4.0 * c / (P_STAR * psi)
}

/// Spectral-gap condition constant, `4 x` the mean-deviation constant (quoted as 44).
pub fn pca_gap_constant() -> f64 {
    4.0 * mean_deviation_constant()
}

/// Projector error constant, `2 x` the mean-deviation constant (quoted as 22).
pub fn pca_error_constant() -> f64 {
    2.0 * mean_deviation_constant()
}

/// How a computed constant relates to its quoted value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantKind {
    /// The quoted value is a rounded-up upper bound of the computed one.
    UpperBound,
    /// The quoted value is a limit or an exact identity.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadlineConstant {
    pub name: &'static str,
    pub quoted: f64,
    pub computed: f64,
    pub kind: ConstantKind,
}

impl HeadlineConstant {
    /// Signed relative deviation `(computed - quoted) / quoted`.
    pub fn relative_gap(&self) -> f64 {
        (self.computed - self.quoted) / self.quoted
    }
}

/// Every headline constant, computed, next to the value it is quoted as.
pub fn headline_constants() -> Vec<HeadlineConstant> {
    use ConstantKind::*;
    let tiny = 1e-9;
    let hilbert = |a| c_alpha(a, Space::Hilbert).expect("alpha in range");
    let banach = |a| c_alpha(a, Space::Banach).expect("alpha in range");
    let hc = |name, quoted, computed, kind| HeadlineConstant {
        name,
        quoted,
        computed,
        kind,
    };
    vec![
        hc("mean_deviation", 11.0, mean_deviation_constant(), UpperBound),
        hc("mean_deviation_sharp", 7.6, mean_deviation_sharp_constant(), UpperBound),
        hc("coordinatewise", 4.4, coordinatewise_constant(), UpperBound),
        hc("selector", 13.2, selector_constant(), UpperBound),
        hc("block_cap", 3.5, block_cap_slope(), UpperBound),
        hc("selector_block_cap", 2.4, selector_block_cap_slope(), UpperBound),
        hc("trace_sqrt", 15.2, trace_sqrt_constant(), UpperBound),
        hc("trace_linear", 178.0, trace_linear_constant(), UpperBound),
        hc("pca_gap", 44.0, pca_gap_constant(), UpperBound),
        hc("pca_error", 22.0, pca_error_constant(), UpperBound),
        hc("c_alpha_hilbert_limit", 1.0, hilbert(tiny), Exact),
        hc("c_alpha_banach_limit", 2.0, banach(tiny), Exact),
        hc(
            "c_alpha_hilbert_at_selector_crossover",
            3.0,
            hilbert(6.0 * 2f64.sqrt() - 8.0),
            Exact,
        ),
        hc(
            "p_star_default_alpha",
            0.0140,
            p_star(ALPHA_STAR).expect("alpha* in range"),
            UpperBound,
        ),
    ]
}
