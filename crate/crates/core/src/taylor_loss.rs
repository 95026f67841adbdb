//! Exact cross-entropy DA loss and its second-order expansion at `z = 0`,
//! including the shifted (stabilized) and noisy-input coefficient variants.

use ndarray::{Array1, ArrayView1};

use crate::da_model::{DaParams, Encoding};
use crate::dp_mech::Dataset;
use crate::error::{shape_err, Error, Result};
use crate::scalar::{log1p_exp, Scalar};

/// Per-feature loss `x log(1+e^{-z}) + (1-x) log(1+e^z)`.
#[inline]
pub fn exact_term<T: Scalar>(x: T, z: T) -> T {
    x * log1p_exp(-z) + (T::one() - x) * log1p_exp(z)
}

/// Summed loss of one user row against its decoder pre-activations.
pub fn exact_row_loss<T: Scalar>(x: ArrayView1<'_, T>, z: ArrayView1<'_, T>) -> Result<T> {
    if x.len() != z.len() {
        return Err(shape_err(x.len(), z.len()));
    }
    Ok(x.iter().zip(z).fold(T::zero(), |acc, (&x, &z)| acc + exact_term(x, z)))
}

/// Total cross-entropy loss over all users.
pub fn exact_loss<T: Scalar>(params: &DaParams<T>, data: &Dataset<T>) -> Result<T> {
    if data.m() != params.m() || data.n() != params.n() {
        return Err(shape_err(
            format!("{}x{}", params.m(), params.n()),
            format!("{}x{}", data.m(), data.n()),
        ));
    }
    let mut total = T::zero();
    for (j, x) in data.rows().enumerate() {
        let z = params.z_values(j, &params.encode(j, x)?)?;
        total = total + exact_row_loss(x, z.view())?;
    }
    Ok(total)
}

/// Coefficients of `n·α1 + Σ_i (α2_i z_i + α3_i z_i²)` for one user row.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCoeffs<T> {
    pub alpha2: Array1<T>,
    pub alpha3: Array1<T>,
}

impl<T: Scalar> LossCoeffs<T> {
    pub fn alpha1() -> T {
        T::LN_2()
    }

    pub fn n(&self) -> usize {
        self.alpha2.len()
    }

    /// The released vector `(α2_1..α2_n, α3_1..α3_n)`.
    pub fn query(&self) -> Vec<T> {
        self.alpha2.iter().chain(&self.alpha3).copied().collect()
    }
}

pub fn coeffs<T: Scalar>(x_row: ArrayView1<'_, T>) -> Result<LossCoeffs<T>> {
    if let Some(v) = x_row.iter().find(|&&v| !(v >= T::zero() && v <= T::one())) {
        return Err(Error::Validation(format!("feature value {v} outside [0, 1]")));
    }
    let half = T::lit(0.5);
    Ok(LossCoeffs {
        alpha2: x_row.mapv(|x| half - x),
        alpha3: x_row.mapv(|x| half * x - T::lit(0.25)),
    })
}

fn quadratic<T: Scalar>(a2: &Array1<T>, a3: &Array1<T>, z: ArrayView1<'_, T>) -> Result<T> {
    if z.len() != a2.len() {
        return Err(shape_err(a2.len(), z.len()));
    }
    Ok(a2.iter().zip(a3).zip(z).fold(T::zero(), |acc, ((&p, &q), &z)| acc + p * z + q * z * z))
}

fn quadratic_grad<T: Scalar>(a2: &Array1<T>, a3: &Array1<T>, z: ArrayView1<'_, T>) -> Result<Array1<T>> {
    if z.len() != a2.len() {
        return Err(shape_err(a2.len(), z.len()));
    }
    let two = T::lit(2.0);
    Ok(a2.iter().zip(a3).zip(z).map(|((&p, &q), &z)| p + two * q * z).collect())
}

pub fn approx_loss<T: Scalar>(c: &LossCoeffs<T>, z: ArrayView1<'_, T>) -> Result<T> {
    Ok(T::from_count(c.n()) * LossCoeffs::<T>::alpha1() + quadratic(&c.alpha2, &c.alpha3, z)?)
}

/// `∂ approx_loss / ∂ z_i = α2_i + 2 α3_i z_i`.
pub fn approx_loss_grad<T: Scalar>(c: &LossCoeffs<T>, z: ArrayView1<'_, T>) -> Result<Array1<T>> {
    quadratic_grad(&c.alpha2, &c.alpha3, z)
}

/// How the shifted polynomial's coefficients are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShiftConvention {
    /// Algebraic expansion of `α2(z+c_j) + α3(z+c_j)²`:
    /// `α̂2 = α2 + 2c_j α3`, per-feature constant `α2 c_j + α3 c_j²`.
    #[default]
    Exact,
    /// Literal form `α̂2 = α2(1+2c_j)`, per-feature constant `c_j² α3`; not an identity.
    /// It is not equal to the shifted polynomial; kept for reproduction.
    PaperLiteral,
}

/// Coefficients after shifting the loss variable by `c_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizedCoeffs<T> {
    pub c_j: T,
    pub convention: ShiftConvention,
    pub alpha2_hat: Array1<T>,
    pub alpha3_hat: Array1<T>,
    /// Data-dependent part of the constant term, per feature.
    pub kappa: Array1<T>,
    /// `n·log 2 + Σ κ_i`.
    pub constant: T,
}

impl<T: Scalar> StabilizedCoeffs<T> {
    pub fn n(&self) -> usize {
        self.alpha2_hat.len()
    }

    pub fn evaluate(&self, z: ArrayView1<'_, T>) -> Result<T> {
        Ok(self.constant + quadratic(&self.alpha2_hat, &self.alpha3_hat, z)?)
    }

    pub fn grad(&self, z: ArrayView1<'_, T>) -> Result<Array1<T>> {
        quadratic_grad(&self.alpha2_hat, &self.alpha3_hat, z)
    }

    /// Released vector `(α̂2_1.., α̂3_1.., κ_1..)`.
    pub fn query(&self) -> Vec<T> {
        self.alpha2_hat
            .iter()
            .chain(&self.alpha3_hat)
            .chain(&self.kappa)
            .copied()
            .collect()
    }
}

/// Shift with an explicit `c_j`.
pub fn stabilize_with_shift<T: Scalar>(
    c: &LossCoeffs<T>,
    c_j: T,
    convention: ShiftConvention,
) -> StabilizedCoeffs<T> {
    let two = T::lit(2.0);
    let (alpha2_hat, kappa) = match convention {
        ShiftConvention::Exact => (
            &c.alpha2 + &c.alpha3.mapv(|a| two * c_j * a),
            &c.alpha2.mapv(|a| a * c_j) + &c.alpha3.mapv(|a| a * c_j * c_j),
        ),
        ShiftConvention::PaperLiteral => (
            c.alpha2.mapv(|a| a * (T::one() + two * c_j)),
            c.alpha3.mapv(|a| a * c_j * c_j),
        ),
    };
    StabilizedCoeffs {
        c_j,
        convention,
        alpha2_hat,
        alpha3_hat: c.alpha3.clone(),
        constant: T::from_count(c.n()) * LossCoeffs::<T>::alpha1() + kappa.sum(),
        kappa,
    }
}

/// Shift induced by adding `c_scalar` to every decoder weight: `c_j = c_scalar · Σ h`.
pub fn stabilize<T: Scalar>(
    c: &LossCoeffs<T>,
    c_scalar: T,
    h: &Encoding<T>,
    convention: ShiftConvention,
) -> Result<StabilizedCoeffs<T>> {
    if !(c_scalar >= T::zero()) {
        return Err(Error::Config(format!("stabilization constant must be >= 0, got {c_scalar}")));
    }
    Ok(stabilize_with_shift(c, c_scalar * h.sum(), convention))
}

/// Upper bound on the second-order remainder: `2G(e^δ − 1 − δ − δ²/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorErrorBound<T> {
    pub g: T,
    pub delta: T,
    pub bound: T,
}

pub fn taylor_error_bound<T: Scalar>(g: T, delta: T) -> Result<TaylorErrorBound<T>> {
    if !(g >= T::zero()) || !(delta >= T::zero()) {
        return Err(Error::Validation(format!("G and delta must be non-negative, got G={g}, delta={delta}")));
    }
    // exp_m1 keeps the small-δ cancellation accurate.
    let bound = T::lit(2.0) * g * (delta.exp_m1() - delta - delta * delta / T::lit(2.0));
    Ok(TaylorErrorBound { g, delta, bound: bound.max(T::zero()) })
}

/// Polynomial in `s = σ(z)` representing `σ^{(k)}(z)`, coefficients by power of `s`.
pub fn sigmoid_derivative_poly(k: usize) -> Vec<f64> {
    // σ' = s - s², and d/dz P(s) = P'(s)·(s - s²).
    let mut p = vec![0.0, 1.0];
    for _ in 0..k {
        let dp: Vec<f64> = (1..p.len()).map(|i| i as f64 * p[i]).collect();
        let mut next = vec![0.0; dp.len() + 2];
        for (i, &c) in dp.iter().enumerate() {
            next[i + 1] += c;
            next[i + 2] -= c;
        }
        p = next;
    }
    p
}

/// Largest `|d^r/dz^r log(1+e^z)|` over `r ∈ 3..=r_max` and `|z| ≤ delta`,
/// found on a grid. Each per-feature loss term shares these magnitudes since
/// `log(1+e^{-z})` is the mirror image.
pub fn derivative_cap(delta: f64, r_max: usize, grid: usize) -> f64 {
    let polys: Vec<Vec<f64>> = (3..=r_max).map(|r| sigmoid_derivative_poly(r - 1)).collect();
    let grid = grid.max(2);
    (0..grid)
        .map(|k| -delta + 2.0 * delta * k as f64 / (grid - 1) as f64)
        .flat_map(|z| {
            let s = crate::scalar::sigmoid(z);
            polys.iter().map(move |p| p.iter().rev().fold(0.0, |acc, &c| acc * s + c).abs())
        })
        .fold(0.0, f64::max)
}

/// Input-noise factors for one user and the resulting loss coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyLossCoeffs<T> {
    /// Per-unit factors `b_{j,r}`, so that the noisy encoding is `b_{j,r} h_{j,r}`.
    pub b: Array1<T>,
    pub b_j: T,
    pub t: Array1<T>,
    pub alpha2: Array1<T>,
    pub alpha3: Array1<T>,
}

impl<T: Scalar> NoisyLossCoeffs<T> {
    /// `ẑ = b_j z − t`; exactly `z` when every factor is 1.
    pub fn z_hat(&self, z: ArrayView1<'_, T>) -> Result<Array1<T>> {
        if z.len() != self.t.len() {
            return Err(shape_err(self.t.len(), z.len()));
        }
        if self.b.iter().all(|&b| b == T::one()) {
            return Ok(z.to_owned());
        }
        Ok(z.mapv(|v| v * self.b_j) - &self.t)
    }

    /// Loss variable `z − t/b_j` the noisy coefficients multiply.
    pub fn shifted(&self, z: ArrayView1<'_, T>) -> Result<Array1<T>> {
        if z.len() != self.t.len() {
            return Err(shape_err(self.t.len(), z.len()));
        }
        Ok(&z - &self.t.mapv(|v| v / self.b_j))
    }

    pub fn approx_loss(&self, z: ArrayView1<'_, T>) -> Result<T> {
        let u = self.shifted(z)?;
        Ok(T::from_count(self.t.len()) * LossCoeffs::<T>::alpha1() + quadratic(&self.alpha2, &self.alpha3, u.view())?)
    }
}

/// `b_{j,r} = e^p / (1 + (e^p − 1) h_r)` with `p = W_{:,r}ᵀ noise`, evaluated
/// as `1 / ((1 − h_r) e^{−p} + h_r)`.
pub fn noise_factor<T: Scalar>(p: T, h: T) -> T {
    if p == T::zero() {
        return T::one();
    }
    T::one() / ((T::one() - h) * (-p).exp() + h)
}

pub fn noisy_factors<T: Scalar>(
    params: &DaParams<T>,
    user_j: usize,
    x: ArrayView1<'_, T>,
    env_noise: ArrayView1<'_, T>,
) -> Result<NoisyLossCoeffs<T>> {
    if env_noise.len() != params.n() {
        return Err(shape_err(params.n(), env_noise.len()));
    }
    if env_noise.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("environmental noise must be finite".into()));
    }
    let clean = coeffs(x)?;
    let h = params.encode(user_j, x)?;
    let p = params.encoder(user_j)?.t().dot(&env_noise);
    let b: Array1<T> = p.iter().zip(h.as_array()).map(|(&p, &h)| noise_factor(p, h)).collect();
    let b_j = b.sum();
    // t_i = Σ_r (b_j − b_r) Ŵ[j·l + r, i] h_r
    let weights: Array1<T> = b.iter().zip(h.as_array()).map(|(&br, &hr)| (b_j - br) * hr).collect();
    let t = params.decoder_block(user_j)?.t().dot(&weights);
    Ok(NoisyLossCoeffs {
        alpha2: clean.alpha2.mapv(|a| a * b_j),
        alpha3: clean.alpha3.mapv(|a| a * b_j),
        b,
        b_j,
        t,
    })
}
