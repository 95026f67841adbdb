//! Laplace mechanism, privacy budgets, user datasets and neighbor construction,
//! plus an empirical check of the ε-DP density-ratio bound.

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;

/// Per-user privacy parameter ε. Budgets are not composed across users: each
/// user holds disjoint data and keeps its own ε.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget<T>(T);

impl<T: Scalar> PrivacyBudget<T> {
    pub fn new(epsilon: T) -> Result<Self> {
        if !(epsilon > T::zero()) || epsilon.is_nan() {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self(epsilon))
    }

    pub fn epsilon(&self) -> T {
        self.0
    }
}

/// Scale `d` of a zero-mean Laplace distribution, `d = Δ/ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceScale<T>(T);

impl<T: Scalar> LaplaceScale<T> {
    pub fn new(d: T) -> Result<Self> {
        if !(d > T::zero()) || !d.is_finite() {
            return Err(Error::Config(format!("Laplace scale must be positive and finite, got {d}")));
        }
        Ok(Self(d))
    }

    /// Calibrates the scale for a query of ℓ1 sensitivity `sensitivity`.
    pub fn calibrated(sensitivity: T, budget: PrivacyBudget<T>) -> Result<Self> {
        Self::new(sensitivity / budget.epsilon())
    }

    pub fn d(&self) -> T {
        self.0
    }

    pub fn variance(&self) -> T {
        T::lit(2.0) * self.0 * self.0
    }

    /// Inverse CDF: `-d * sign(u - 1/2) * ln(1 - 2|u - 1/2|)` for `u` in (0, 1).
    pub fn inverse_cdf(&self, u: T) -> T {
        let c = u - T::lit(0.5);
        if c == T::zero() {
            return T::zero();
        }
        -self.0 * c.signum() * (T::one() - T::lit(2.0) * c.abs()).ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        self.inverse_cdf(T::lit(rng::open01(rng)))
    }

    pub fn log_density(&self, x: T, mean: T) -> T {
        -(x - mean).abs() / self.0 - (T::lit(2.0) * self.0).ln()
    }
}

/// Draws a single Laplace sample from the stream keyed by `seed`.
pub fn sample_laplace<T: Scalar>(scale: LaplaceScale<T>, seed: u64) -> T {
    let mut r = rng::stream(seed, Purpose::Single, &[]);
    scale.sample(&mut r)
}

/// `m` user rows of `n` features, every entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    rows: Array2<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(rows: Array2<T>) -> Result<Self> {
        let (m, n) = rows.dim();
        if m == 0 || n == 0 {
            return Err(Error::Validation(format!("dataset must be non-empty, got {m}x{n}")));
        }
        if let Some(((j, i), v)) = rows
            .indexed_iter()
            .find(|(_, &v)| !(v >= T::zero() && v <= T::one()))
        {
            return Err(Error::Validation(format!(
                "entry ({j}, {i}) = {v} outside [0, 1]"
            )));
        }
        Ok(Self { rows })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(shape_err(format!("rows of length {n}"), format!("row of length {}", bad.len())));
        }
        let flat: Vec<T> = rows.iter().flatten().copied().collect();
        let arr = Array2::from_shape_vec((m, n), flat).map_err(|e| Error::Validation(e.to_string()))?;
        Self::new(arr)
    }

    /// Number of users.
    pub fn m(&self) -> usize {
        self.rows.nrows()
    }

    /// Number of features.
    pub fn n(&self) -> usize {
        self.rows.ncols()
    }

    pub fn row(&self, j: usize) -> Result<ArrayView1<'_, T>> {
        if j >= self.m() {
            return Err(Error::Index { index: j, len: self.m() });
        }
        Ok(self.rows.row(j))
    }

    pub fn rows(&self) -> impl Iterator<Item = ArrayView1<'_, T>> {
        self.rows.axis_iter(Axis(0))
    }

    pub fn as_array(&self) -> &Array2<T> {
        &self.rows
    }

    pub fn into_array(self) -> Array2<T> {
        self.rows
    }
}

/// Two datasets that differ in exactly one user's row.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborPair<T> {
    pub base: Dataset<T>,
    pub neighbor: Dataset<T>,
    pub changed_user: usize,
}

/// Replaces row `user_j` of `data` with `replacement_row`.
pub fn make_neighbor<T: Scalar>(
    data: &Dataset<T>,
    user_j: usize,
    replacement_row: &[T],
) -> Result<NeighborPair<T>> {
    if user_j >= data.m() {
        return Err(Error::Index { index: user_j, len: data.m() });
    }
    if replacement_row.len() != data.n() {
        return Err(shape_err(data.n(), replacement_row.len()));
    }
    if let Some(v) = replacement_row.iter().find(|&&v| !(v >= T::zero() && v <= T::one())) {
        return Err(Error::Validation(format!("replacement entry {v} outside [0, 1]")));
    }
    let old = data.rows.row(user_j);
    if old.iter().zip(replacement_row).all(|(a, b)| a == b) {
        return Err(Error::NotNeighbor(user_j));
    }
    let mut rows = data.rows.clone();
    rows.row_mut(user_j)
        .iter_mut()
        .zip(replacement_row)
        .for_each(|(dst, &src)| *dst = src);
    Ok(NeighborPair {
        base: data.clone(),
        neighbor: Dataset { rows },
        changed_user: user_j,
    })
}

/// Indices of rows that differ between two equally shaped datasets.
pub fn differing_rows<T: Scalar>(a: &Dataset<T>, b: &Dataset<T>) -> Result<Vec<usize>> {
    if a.rows.dim() != b.rows.dim() {
        return Err(shape_err(format!("{:?}", a.rows.dim()), format!("{:?}", b.rows.dim())));
    }
    Ok(a.rows()
        .zip(b.rows())
        .enumerate()
        .filter(|(_, (ra, rb))| ra != rb)
        .map(|(j, _)| j)
        .collect())
}

/// Expected samples per histogram bin under the base distribution; bins with
/// fewer observed samples on either side are excluded from the ratio.
pub const MIN_BIN_COUNT: usize = 50;
/// Bins are sized so an average bin holds this many times `MIN_BIN_COUNT`.
const BIN_OCCUPANCY_FACTOR: usize = 200;

/// Smallest trial count `empirical_dp_ratio` accepts.
pub const fn min_ratio_trials() -> usize {
    MIN_BIN_COUNT * BIN_OCCUPANCY_FACTOR
}

/// Runs the Laplace mechanism `trials` times on each of two query vectors
/// and returns the largest observed absolute log-ratio of output probabilities.
///
/// Outputs are reduced to the privacy-loss statistic
/// `S(q) = Σ_k |q_k - f'_k| - |q_k - f_k|`, a post-processing of the output,
/// so any ratio observed on its histogram lower-bounds the mechanism's true
/// privacy loss. For a correctly calibrated mechanism the result stays at or
/// below ε up to binning noise.
pub fn empirical_dp_ratio<T: Scalar>(
    query_base: &[T],
    query_neighbor: &[T],
    budget: PrivacyBudget<T>,
    sensitivity: T,
    trials: usize,
    seed: u64,
) -> Result<T> {
    if query_base.len() != query_neighbor.len() {
        return Err(shape_err(query_base.len(), query_neighbor.len()));
    }
    if trials < min_ratio_trials() {
        return Err(Error::InsufficientTrials { required: min_ratio_trials(), got: trials });
    }
    let scale = LaplaceScale::calibrated(sensitivity, budget)?;

    let statistic = |q: &[T]| -> f64 {
        q.iter()
            .zip(query_base)
            .zip(query_neighbor)
            .map(|((&q, &fb), &fnb)| ((q - fnb).abs() - (q - fb).abs()).as_f64())
            .sum()
    };
    let run = |query: &[T], tag: u64| -> Vec<f64> {
        let mut r = rng::stream(seed, Purpose::Ratio, &[tag]);
        let mut out = vec![T::zero(); query.len()];
        (0..trials)
            .map(|_| {
                out.iter_mut()
                    .zip(query)
                    .for_each(|(o, &f)| *o = f + scale.sample(&mut r));
                statistic(&out)
            })
            .collect()
    };
    let (base, neighbor) = rayon::join(|| run(query_base, 0), || run(query_neighbor, 1));

    let lo = base.iter().chain(&neighbor).copied().fold(f64::INFINITY, f64::min);
    let hi = base.iter().chain(&neighbor).copied().fold(f64::NEG_INFINITY, f64::max);
    let bins = (trials / min_ratio_trials()).max(1);
    let width = (hi - lo) / bins as f64;
    if !(width > 0.0) {
        // Both statistics are a single point mass: identical distributions.
        return Ok(T::zero());
    }
    let histogram = |xs: &[f64]| {
        let mut counts = vec![0usize; bins];
        for &x in xs {
            let k = (((x - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        counts
    };
    let (cb, cn) = (histogram(&base), histogram(&neighbor));
    let worst = cb
        .iter()
        .zip(&cn)
        .filter(|(&a, &b)| a >= MIN_BIN_COUNT && b >= MIN_BIN_COUNT)
        .map(|(&a, &b)| (a as f64 / b as f64).ln().abs())
        .fold(0.0, f64::max);
    Ok(T::lit(worst))
}
