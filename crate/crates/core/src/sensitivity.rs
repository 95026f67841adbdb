//! ℓ1 sensitivities of the SPOF coefficient query and of the clipped DP-SGD
//! gradient, plus per-feature sensitivity curves over the expansion point `a`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{log1p_exp, sigmoid, Scalar};

/// `Δ̄ = 3n/2`.
pub fn spof_sensitivity_bar<T: Scalar>(n: usize) -> T {
    T::lit(1.5) * T::from_count(n)
}

/// `Δ̂ = 3n/2 + n c_j (c_j/2 + 2)`.
pub fn spof_sensitivity_hat<T: Scalar>(n: usize, c_j: T) -> Result<T> {
    if !(c_j >= T::zero()) {
        return Err(Error::Validation(format!("c_j must be >= 0, got {c_j}")));
    }
    Ok(spof_sensitivity_bar::<T>(n) + stabilization_increment(n, c_j))
}

fn stabilization_increment<T: Scalar>(n: usize, c_j: T) -> T {
    T::from_count(n) * c_j * (c_j / T::lit(2.0) + T::lit(2.0))
}

/// Scales a clean SPOF sensitivity by the input-noise factor `b_j`.
pub fn spof_sensitivity_noisy<T: Scalar>(spof: T, b_j: T) -> Result<T> {
    check_b(b_j)?;
    Ok(b_j * spof)
}

/// `Δ̂^[N] = b_j Δ̄ + n c_j (c_j/2 + 2)`: only the data-dependent part scales.
pub fn spof_sensitivity_hat_noisy<T: Scalar>(n: usize, c_j: T, b_j: T) -> Result<T> {
    spof_sensitivity_hat(n, c_j)?;
    Ok(spof_sensitivity_noisy(spof_sensitivity_bar(n), b_j)? + stabilization_increment(n, c_j))
}

fn check_b<T: Scalar>(b_j: T) -> Result<()> {
    if !(b_j > T::zero()) || !b_j.is_finite() {
        return Err(Error::Validation(format!("b_j must be positive and finite, got {b_j}")));
    }
    Ok(())
}

/// Whether the unclipped gradient norm is below the clipping threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GradRegime {
    Below,
    Above,
}

impl GradRegime {
    pub fn of<T: Scalar>(grad_norm: T, clip: T) -> Self {
        if grad_norm < clip {
            Self::Below
        } else {
            Self::Above
        }
    }
}

/// DP-SGD sensitivity: `n · 2e^a/(1+e^a)` (times `b_j` under input noise)
/// below the clipping threshold, `2nC` otherwise.
pub fn sgd_sensitivity<T: Scalar>(n: usize, clip: T, grad_norm: T, a: T, b_j: Option<T>) -> Result<T> {
    if !(clip > T::zero()) {
        return Err(Error::Config(format!("clipping threshold must be positive, got {clip}")));
    }
    if let Some(b) = b_j {
        check_b(b)?;
    }
    let nn = T::from_count(n);
    Ok(match GradRegime::of(grad_norm, clip) {
        GradRegime::Below => nn * sgd_per_term(a, clip, GradRegime::Below) * b_j.unwrap_or_else(T::one),
        GradRegime::Above => nn * sgd_per_term(a, clip, GradRegime::Above),
    })
}

/// Per-feature DP-SGD sensitivity: `2e^a/(1+e^a)` below threshold, `2C` above.
/// The below-threshold form is the true maximum over `x` only for `a >= 0`.
pub fn sgd_per_term<T: Scalar>(a: T, clip: T, regime: GradRegime) -> T {
    match regime {
        GradRegime::Below => T::lit(2.0) * sigmoid(a),
        GradRegime::Above => T::lit(2.0) * clip,
    }
}

/// Closed-form per-feature SPOF sensitivity at expansion point `a`:
/// `log(1+e^a) + 2( log(1+e^{-a})/log(1+e^a) + 2e^a/(1+e^a)² + e^a/(1+e^a) )`.
pub fn spof_per_term<T: Scalar>(a: T) -> T {
    let sp = log1p_exp(a);
    let s = sigmoid(a);
    let two = T::lit(2.0);
    // e^a/(1+e^a)² = σ(a)(1−σ(a))
    sp + two * (log1p_exp(-a) / sp + two * s * (T::one() - s) + s)
}

/// Evaluates `f` at the candidate extremes {0, 1/2, 1} plus `grid` uniform
/// points on [0, 1] and returns the maximum.
pub fn max_over_x<T: Scalar>(grid: usize, f: impl Fn(T) -> T) -> T {
    let grid = grid.max(2);
    [T::zero(), T::lit(0.5), T::one()]
        .into_iter()
        .chain((0..grid).map(|k| T::from_count(k) / T::from_count(grid - 1)))
        .map(f)
        .fold(T::neg_infinity(), T::max)
}

/// `2 max_x (|0.5 − x| + |0.5x − 0.25|)`; equals 1.5.
pub fn spof_bar_per_term_max<T: Scalar>(grid: usize) -> T {
    T::lit(2.0) * max_over_x(grid, |x: T| (T::lit(0.5) - x).abs() + (T::lit(0.5) * x - T::lit(0.25)).abs())
}

/// `2 max_x |σ(a) − x|`, the below-threshold DP-SGD per-term sensitivity by search.
pub fn sgd_below_per_term_max<T: Scalar>(a: T, grid: usize) -> T {
    T::lit(2.0) * max_over_x(grid, |x: T| (sigmoid(a) - x).abs())
}

/// Direct evaluation of `2 max_x Σ_k Σ_{r=0..2} |f_k^{(r)}(a)|` with
/// `f_1 = x log(1+e^{-z})`, `f_2 = (1−x) log(1+e^z)`, by search over `x`.
///
/// This is the quantity the closed form is derived from; the two do not
/// coincide (see `spof_per_term`), so callers compare rather than assume.
pub fn spof_per_term_search<T: Scalar>(a: T, grid: usize) -> T {
    let s = sigmoid(a);
    let d2 = s * (T::one() - s);
    let (sp_pos, sp_neg) = (log1p_exp(a), log1p_exp(-a));
    // |f_1|, |f_1'|, |f_1''| = x·(log(1+e^{-a}), 1−σ(a), σ'(a)); f_2 mirrors with σ(a).
    let per_x = sp_neg + (T::one() - s) + d2;
    let per_1mx = sp_pos + s + d2;
    T::lit(2.0) * max_over_x(grid, |x: T| x * per_x + (T::one() - x) * per_1mx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerTermCurve<T> {
    pub a_grid: Vec<T>,
    pub values: Vec<T>,
    pub argmin: T,
    pub min: T,
}

pub fn spof_per_term_curve<T: Scalar>(a_grid: &[T]) -> Result<PerTermCurve<T>> {
    if a_grid.is_empty() {
        return Err(Error::Validation("expansion-point grid is empty".into()));
    }
    if a_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Validation("expansion-point grid must be strictly ascending".into()));
    }
    let values: Vec<T> = a_grid.iter().map(|&a| spof_per_term(a)).collect();
    let (k, &min) = values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.partial_cmp(y.1).expect("finite curve"))
        .expect("non-empty");
    Ok(PerTermCurve { a_grid: a_grid.to_vec(), argmin: a_grid[k], min, values })
}

/// Uniform grid `lo, lo+step, ..., hi` (inclusive up to rounding).
pub fn uniform_grid<T: Scalar>(lo: f64, hi: f64, step: f64) -> Vec<T> {
    let count = ((hi - lo) / step).round() as usize + 1;
    (0..count).map(|k| T::lit(lo + step * k as f64)).collect()
}

/// Default expansion-point grid: [−5, 5] with step 1e-4.
pub fn default_a_grid<T: Scalar>() -> Vec<T> {
    uniform_grid(-5.0, 5.0, 1e-4)
}

/// Inputs to a full sensitivity report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensitivityConfig {
    pub n: usize,
    pub l: usize,
    pub clip: f64,
    pub c_j: f64,
    pub b_j: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub config: SensitivityConfig,
    pub regime: GradRegime,
    pub spof_bar: f64,
    pub spof_hat: f64,
    pub spof_bar_noisy: f64,
    pub spof_hat_noisy: f64,
    pub sgd: f64,
    pub sgd_noisy: f64,
}

impl SensitivityReport {
    /// Expansion point is fixed at `a = 0`.
    pub fn compute(config: SensitivityConfig) -> Result<Self> {
        let SensitivityConfig { n, clip, c_j, b_j, grad_norm, .. } = config;
        let spof_bar = spof_sensitivity_bar::<f64>(n);
        Ok(Self {
            config,
            regime: GradRegime::of(grad_norm, clip),
            spof_bar,
            spof_hat: spof_sensitivity_hat(n, c_j)?,
            spof_bar_noisy: spof_sensitivity_noisy(spof_bar, b_j)?,
            spof_hat_noisy: spof_sensitivity_hat_noisy(n, c_j, b_j)?,
            sgd: sgd_sensitivity(n, clip, grad_norm, 0.0, None)?,
            sgd_noisy: sgd_sensitivity(n, clip, grad_norm, 0.0, Some(b_j))?,
        })
    }
}

/// One row of the per-term sensitivity comparison over `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerTermRow {
    pub a: f64,
    pub spof: f64,
    pub sgd_below: f64,
    pub sgd_above: f64,
}

pub fn per_term_rows(a_grid: &[f64], clip: f64) -> Vec<PerTermRow> {
    a_grid
        .iter()
        .map(|&a| PerTermRow {
            a,
            spof: spof_per_term(a),
            sgd_below: sgd_per_term(a, clip, GradRegime::Below),
            sgd_above: sgd_per_term(a, clip, GradRegime::Above),
        })
        .collect()
}

pub fn write_per_term_csv<W: Write>(rows: &[PerTermRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
