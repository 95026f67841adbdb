//! Distribution of the per-unit input-noise factor `X = e^D / (1 + h(e^D − 1))`
//! with `D ~ N(0, σ̃²)`, the scaled maximum `b_max = l · max(X_1..X_|D|)`, and
//! the probability that `b_max ≤ 1`.

use std::io::Write;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;
use crate::taylor_loss::noise_factor;

/// How `Var(wᵀn)` is formed from `σ` and the weight row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceConvention {
    /// `σ̃² = σ² ‖w‖²`.
    #[default]
    Squared,
    /// `σ̃² = σ² ‖w‖` (literal variant).
    PaperLiteral,
}

/// Which closed form `pdf_fx` evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityForm {
    /// Change of variables through `y = x(1−h)/(1−hx)`: the density of the
    /// simulated `X`, supported on `(0, 1/h)`.
    #[default]
    Exact,
    /// Literal form `(1+h)/(σ̃√(2π)) · 1/(x(1−hx+h)) · exp(−ln²(x/(1−hx+h))/(2σ̃²))`.
    /// Coincides with `Exact` at `h = 0` only.
    PaperLiteral,
}

pub fn sigma_tilde(sigma: f64, weight_row: &[f64], convention: VarianceConvention) -> f64 {
    let sq: f64 = weight_row.iter().map(|w| w * w).sum();
    match convention {
        VarianceConvention::Squared => sigma * sq.sqrt(),
        VarianceConvention::PaperLiteral => sigma * sq.sqrt().sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvNoiseProfile {
    pub sigma: f64,
    pub sigma_tilde: f64,
    pub h: f64,
    pub l: usize,
    pub sample_count: usize,
    pub form: DensityForm,
}

impl EnvNoiseProfile {
    /// Profile with `σ̃` derived from `σ` and one encoder weight row.
    pub fn from_weights(
        sigma: f64,
        weight_row: &[f64],
        convention: VarianceConvention,
        h: f64,
        l: usize,
        sample_count: usize,
    ) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::Config(format!("sigma must be >= 0, got {sigma}")));
        }
        let mut p = Self::with_sigma_tilde(sigma_tilde(sigma, weight_row, convention), h, l, sample_count)?;
        p.sigma = sigma;
        Ok(p)
    }

    /// Profile parameterized directly by `σ̃` (with `σ` recorded as `σ̃`).
    pub fn with_sigma_tilde(sigma_tilde: f64, h: f64, l: usize, sample_count: usize) -> Result<Self> {
        if !(sigma_tilde >= 0.0) || !sigma_tilde.is_finite() {
            return Err(Error::Config(format!("sigma_tilde must be finite and >= 0, got {sigma_tilde}")));
        }
        if !(0.0..=1.0).contains(&h) {
            return Err(Error::Config(format!("h must lie in [0, 1], got {h}")));
        }
        if l == 0 || sample_count == 0 {
            return Err(Error::Config("l and |D| must be >= 1".into()));
        }
        Ok(Self { sigma: sigma_tilde, sigma_tilde, h, l, sample_count, form: DensityForm::Exact })
    }

    pub fn with_form(mut self, form: DensityForm) -> Self {
        self.form = form;
        self
    }

    pub fn with_h(mut self, h: f64) -> Self {
        self.h = h;
        self
    }

    /// One draw of `X`.
    pub fn sample_x<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sigma_tilde == 0.0 {
            return 1.0;
        }
        let d = Normal::new(0.0, self.sigma_tilde).expect("validated scale").sample(rng);
        noise_factor(d, self.h)
    }
}

fn lognormal_kernel<T: Scalar>(y: T, sigma_tilde: T) -> T {
    let ln = y.ln();
    (-(ln * ln) / (T::lit(2.0) * sigma_tilde * sigma_tilde)).exp() / (sigma_tilde * (T::lit(2.0) * T::PI()).sqrt())
}

/// Density of `X` at `x`; zero outside the support.
pub fn pdf_fx<T: Scalar>(x: T, profile: &EnvNoiseProfile) -> T {
    let (h, st) = (T::lit(profile.h), T::lit(profile.sigma_tilde));
    if !(x > T::zero()) || !(st > T::zero()) {
        return T::zero();
    }
    match profile.form {
        DensityForm::PaperLiteral => {
            let den = T::one() - h * x + h;
            if !(den > T::zero()) {
                return T::zero();
            }
            (T::one() + h) / (x * den) * lognormal_kernel(x / den, st)
        }
        DensityForm::Exact => {
            let den = T::one() - h * x;
            if !(den > T::zero()) || h == T::one() {
                return T::zero();
            }
            let y = x * (T::one() - h) / den;
            let dy = (T::one() - h) / (den * den);
            dy / y * lognormal_kernel(y, st)
        }
    }
}

/// Minimum Monte Carlo sample size for CDF estimates.
pub const MIN_MC_SAMPLES: usize = 10_000;

const CHUNK: usize = 1 << 16;

/// Empirical CDF of Monte Carlo draws of `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn from_samples(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() || samples.iter().any(|v| v.is_nan()) {
            return Err(Error::Validation("empirical CDF needs non-empty, non-NaN samples".into()));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { sorted: samples })
    }

    /// Fraction of samples `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }
}

/// `count` draws of `X`, generated in fixed-size chunks with one stream per chunk.
pub fn sample_x(profile: &EnvNoiseProfile, count: usize, seed: u64) -> Vec<f64> {
    (0..count.div_ceil(CHUNK))
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut r = rng::stream(seed, Purpose::MonteCarlo, &[c as u64]);
            let len = CHUNK.min(count - c * CHUNK);
            (0..len).map(move |_| profile.sample_x(&mut r))
        })
        .collect()
}

pub fn empirical_cdf(profile: &EnvNoiseProfile, mc_samples: usize, seed: u64) -> Result<EmpiricalCdf> {
    if mc_samples < MIN_MC_SAMPLES {
        return Err(Error::InsufficientTrials { required: MIN_MC_SAMPLES, got: mc_samples });
    }
    EmpiricalCdf::from_samples(sample_x(profile, mc_samples, seed))
}

/// Monte Carlo estimate of `F_X(threshold)`.
pub fn estimate_cdf_fx(profile: &EnvNoiseProfile, threshold: f64, mc_samples: usize, seed: u64) -> Result<f64> {
    Ok(empirical_cdf(profile, mc_samples, seed)?.eval(threshold))
}

/// Density of `b_max` with a Monte Carlo CDF standing in for `F_X`.
#[derive(Debug, Clone)]
pub struct BmaxDistribution {
    pub profile: EnvNoiseProfile,
    cdf: EmpiricalCdf,
}

impl BmaxDistribution {
    pub fn new(profile: EnvNoiseProfile, mc_samples: usize, seed: u64) -> Result<Self> {
        Ok(Self { cdf: empirical_cdf(&profile, mc_samples, seed)?, profile })
    }

    /// `(|D|/l) f_X(b/l) F̂_X(b/l)^{|D|−1}`.
    pub fn pdf(&self, b: f64) -> f64 {
        if !(b > 0.0) {
            return 0.0;
        }
        let l = self.profile.l as f64;
        let d = self.profile.sample_count;
        let m = b / l;
        let tail = if d == 1 { 1.0 } else { self.cdf.eval(m).powi((d - 1) as i32) };
        d as f64 / l * pdf_fx(m, &self.profile) * tail
    }

    pub fn tabulate(&self, hi: f64, step: f64) -> Result<TabulatedPdf> {
        TabulatedPdf::from_fn(0.0, hi, step, PdfKind::Bmax, |b| self.pdf(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PdfKind {
    Fx,
    Bmax,
}

/// A density sampled on an ascending grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedPdf {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub kind: PdfKind,
}

impl TabulatedPdf {
    pub fn new(grid: Vec<f64>, density: Vec<f64>, kind: PdfKind) -> Result<Self> {
        if grid.len() != density.len() || grid.len() < 2 {
            return Err(Error::Validation("grid and density must match and hold >= 2 points".into()));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Validation("grid must be strictly ascending".into()));
        }
        if density.iter().any(|&d| !(d >= 0.0)) {
            return Err(Error::Validation("density must be non-negative".into()));
        }
        Ok(Self { grid, density, kind })
    }

    /// Tabulates `f` on `lo, lo+step, ..., hi`.
    pub fn from_fn(lo: f64, hi: f64, step: f64, kind: PdfKind, f: impl Fn(f64) -> f64 + Sync) -> Result<Self> {
        if !(step > 0.0) || !(hi > lo) {
            return Err(Error::Validation(format!("invalid grid [{lo}, {hi}] step {step}")));
        }
        let count = ((hi - lo) / step).round() as usize + 1;
        let grid: Vec<f64> = (0..count).map(|k| lo + step * k as f64).collect();
        let density = grid.par_iter().map(|&x| f(x)).collect();
        Self::new(grid, density, kind)
    }

    /// Trapezoidal integral over the grid points `<= upper`.
    pub fn integral_to(&self, upper: f64) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .take_while(|(g, _)| g[1] <= upper + 1e-12)
            .map(|(g, d)| 0.5 * (d[0] + d[1]) * (g[1] - g[0]))
            .sum()
    }

    pub fn integral(&self) -> f64 {
        self.integral_to(f64::INFINITY)
    }
}

/// `½ ∫ |f − g|` by trapezoid; both tables must share a grid.
pub fn total_variation(a: &TabulatedPdf, b: &TabulatedPdf) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::Validation("total variation needs a shared grid".into()));
    }
    let diff: Vec<f64> = a.density.iter().zip(&b.density).map(|(x, y)| (x - y).abs()).collect();
    Ok(0.5 * TabulatedPdf { grid: a.grid.clone(), density: diff, kind: a.kind }.integral())
}

/// Default trapezoid step on (0, 1].
pub const PROB_GRID_STEP: f64 = 1e-3;

/// `F_{b_max}(1)` by trapezoid over `(0, 1]`.
pub fn prob_bmax_leq_one(profile: &EnvNoiseProfile, grid_step: f64, mc_samples: usize, seed: u64) -> Result<f64> {
    if !(grid_step > 0.0) {
        return Err(Error::Validation(format!("grid step must be positive, got {grid_step}")));
    }
    let dist = BmaxDistribution::new(*profile, mc_samples, seed)?;
    Ok(dist.tabulate(1.0, grid_step)?.integral().clamp(0.0, 1.0))
}

/// Direct simulation: fraction of trials where `l · max(X_1..X_|D|) <= 1`.
pub fn simulate_bmax_leq_one(profile: &EnvNoiseProfile, trials: usize, seed: u64) -> f64 {
    let l = profile.l as f64;
    let hits: usize = (0..trials)
        .into_par_iter()
        .filter(|&t| {
            let mut r = rng::stream(seed, Purpose::MonteCarlo, &[1, t as u64]);
            (0..profile.sample_count).all(|_| l * profile.sample_x(&mut r) <= 1.0)
        })
        .count();
    hits as f64 / trials as f64
}

/// Fraction of trials where `b_j = Σ_{r=1..l} X_r < 1`, i.e. where the noisy
/// SPOF sensitivity `b_j Δ̄` falls below the clean one.
pub fn simulate_bj_below_one(profile: &EnvNoiseProfile, trials: usize, seed: u64) -> f64 {
    let hits: usize = (0..trials)
        .into_par_iter()
        .filter(|&t| {
            let mut r = rng::stream(seed, Purpose::MonteCarlo, &[2, t as u64]);
            (0..profile.l).map(|_| profile.sample_x(&mut r)).sum::<f64>() < 1.0
        })
        .count();
    hits as f64 / trials as f64
}

/// Fixed settings of a σ sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepTemplate {
    pub n: usize,
    pub l: usize,
    pub sample_count: usize,
    pub h: f64,
    /// Weight entries are uniform on `[-weight_range, weight_range]`.
    pub weight_range: f64,
    pub variance: VarianceConvention,
    pub mc_samples: usize,
    pub direct_trials: usize,
    pub grid_step: f64,
}

impl Default for SweepTemplate {
    fn default() -> Self {
        Self {
            n: 14,
            l: 7,
            sample_count: 100,
            h: 0.0,
            weight_range: 10.0,
            variance: VarianceConvention::Squared,
            mc_samples: 200_000,
            direct_trials: 20_000,
            grid_step: PROB_GRID_STEP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaSweepRow {
    pub sigma: f64,
    pub sigma_tilde: f64,
    pub prob_trapezoid: f64,
    pub prob_direct: f64,
}

/// Weight row used by a sweep, drawn once from the seed.
pub fn sweep_weights(template: &SweepTemplate, seed: u64) -> Vec<f64> {
    use rand::Rng;
    let mut r = rng::stream(seed, Purpose::EnvNoise, &[0]);
    let w = template.weight_range;
    (0..template.n).map(|_| r.random_range(-w..=w)).collect()
}

/// `Pr[b_max <= 1]` for each `σ`, by trapezoid and by direct simulation.
pub fn sweep_sigma(sigmas: &[f64], template: &SweepTemplate, seed: u64) -> Result<Vec<SigmaSweepRow>> {
    if sigmas.is_empty() {
        return Err(Error::Validation("sigma list is empty".into()));
    }
    let weights = sweep_weights(template, seed);
    sigmas
        .par_iter()
        .enumerate()
        .map(|(k, &sigma)| {
            let p = EnvNoiseProfile::from_weights(
                sigma,
                &weights,
                template.variance,
                template.h,
                template.l,
                template.sample_count,
            )?;
            let s = rng::derive_seed(seed, Purpose::EnvNoise, &[1, k as u64]);
            Ok(SigmaSweepRow {
                sigma,
                sigma_tilde: p.sigma_tilde,
                prob_trapezoid: prob_bmax_leq_one(&p, template.grid_step, template.mc_samples, s)?,
                prob_direct: simulate_bmax_leq_one(&p, template.direct_trials, s),
            })
        })
        .collect()
}

/// Tabulated `b_max` densities for several `h` on `[0, hi]`.
pub fn bmax_curves(
    hs: &[f64],
    base: &EnvNoiseProfile,
    hi: f64,
    step: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<(f64, TabulatedPdf)>> {
    hs.iter()
        .enumerate()
        .map(|(k, &h)| {
            let p = EnvNoiseProfile::with_sigma_tilde(base.sigma_tilde, h, base.l, base.sample_count)?.with_form(base.form);
            let s = rng::derive_seed(seed, Purpose::EnvNoise, &[2, k as u64]);
            Ok((h, BmaxDistribution::new(p, mc_samples, s)?.tabulate(hi, step)?))
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SigmaSweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    h: f64,
    b: f64,
    density: f64,
}

pub fn write_curves_csv<W: Write>(curves: &[(f64, TabulatedPdf)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (h, t) in curves {
        for (&b, &density) in t.grid.iter().zip(&t.density) {
            w.serialize(CurveRow { h: *h, b, density })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Continuous, LogNormal};

    fn profile(st: f64, h: f64) -> EnvNoiseProfile {
        EnvNoiseProfile::with_sigma_tilde(st, h, 7, 100).unwrap()
    }

    #[test]
    fn zero_h_matches_lognormal() {
        for st in [0.3, 1.0, 2.5] {
            let oracle = LogNormal::new(0.0, st).unwrap();
            for form in [DensityForm::Exact, DensityForm::PaperLiteral] {
                let p = profile(st, 0.0).with_form(form);
                for k in 1..=100 {
                    let x = 0.05 * k as f64;
                    assert!((pdf_fx(x, &p) - oracle.pdf(x)).abs() < 1e-12);
                }
            }
        }
        let p = profile(1.0, 0.0);
        assert!((pdf_fx(1.0, &p) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert_eq!(pdf_fx(-1.0, &p), 0.0);
    }

    #[test]
    fn supports() {
        assert_eq!(pdf_fx(2.1, &profile(1.0, 0.5)), 0.0);
        assert!(pdf_fx(1.9, &profile(1.0, 0.5)) > 0.0);
        let lit = profile(1.0, 0.5).with_form(DensityForm::PaperLiteral);
        assert!(pdf_fx(2.9, &lit) > 0.0);
        assert_eq!(pdf_fx(3.1, &lit), 0.0);
    }

    #[test]
    fn densities_normalize() {
        let t = TabulatedPdf::from_fn(0.0, 50.0, 1e-3, PdfKind::Fx, |x| pdf_fx(x, &profile(1.0, 0.0))).unwrap();
        assert!((t.integral() - 1.0).abs() < 0.02);
        let t = TabulatedPdf::from_fn(0.0, 4.0, 1e-4, PdfKind::Fx, |x| pdf_fx(x, &profile(1.0, 0.5))).unwrap();
        assert!((t.integral() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn exact_form_matches_simulated_cdf() {
        let p = profile(1.0, 0.5);
        let cdf = empirical_cdf(&p, 400_000, 5).unwrap();
        for x in [0.5, 1.0, 1.5] {
            let t = TabulatedPdf::from_fn(0.0, x, 1e-5, PdfKind::Fx, |v| pdf_fx(v, &p)).unwrap();
            assert!((t.integral() - cdf.eval(x)).abs() < 5e-3, "x={x}");
        }
    }

    #[test]
    fn cdf_estimates() {
        let p = profile(1.0, 0.0);
        assert!((estimate_cdf_fx(&p, 1.0, 100_000, 3).unwrap() - 0.5).abs() < 0.01);
        assert_eq!(estimate_cdf_fx(&p, 0.0, 10_000, 3).unwrap(), 0.0);
        assert_eq!(estimate_cdf_fx(&p, f64::INFINITY, 10_000, 3).unwrap(), 1.0);
        assert_eq!(
            estimate_cdf_fx(&p, 1.0, 10, 3).unwrap_err(),
            Error::InsufficientTrials { required: MIN_MC_SAMPLES, got: 10 }
        );
    }

    #[test]
    fn bmax_single_sample_unit_scale_is_fx() {
        let p = EnvNoiseProfile::with_sigma_tilde(0.8, 0.0, 1, 1).unwrap();
        let d = BmaxDistribution::new(p, 10_000, 1).unwrap();
        for b in [0.2, 1.0, 3.0] {
            assert_eq!(d.pdf(b), pdf_fx(b, &p));
        }
    }

    #[test]
    fn bmax_normalizes() {
        let d = BmaxDistribution::new(profile(0.5, 0.0), 200_000, 2).unwrap();
        let t = d.tabulate(140.0, 1e-2).unwrap();
        assert!((t.integral() - 1.0).abs() < 0.03, "{}", t.integral());
    }

    #[test]
    fn bmax_mode_moves_right_with_more_samples() {
        let mode = |count| {
            let p = EnvNoiseProfile::with_sigma_tilde(0.5, 0.0, 7, count).unwrap();
            let t = BmaxDistribution::new(p, 100_000, 4).unwrap().tabulate(60.0, 1e-2).unwrap();
            let k = (0..t.density.len()).max_by(|&a, &b| t.density[a].total_cmp(&t.density[b])).unwrap();
            t.grid[k]
        };
        assert!(mode(100) > mode(1) + 5.0);
    }

    #[test]
    fn tiny_noise_makes_bmax_exceed_one() {
        let p = profile(1e-6, 0.0);
        assert_eq!(simulate_bmax_leq_one(&p, 2_000, 1), 0.0);
        assert!(prob_bmax_leq_one(&p, PROB_GRID_STEP, 10_000, 1).unwrap() < 1e-12);
    }

    #[test]
    fn variance_conventions() {
        let w = [3.0, 4.0];
        assert_eq!(sigma_tilde(2.0, &w, VarianceConvention::Squared), 10.0);
        assert!((sigma_tilde(2.0, &w, VarianceConvention::PaperLiteral) - 2.0 * 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sweep_is_reproducible() {
        let t = SweepTemplate { mc_samples: 10_000, direct_trials: 500, ..Default::default() };
        let a = sweep_sigma(&[1.0], &t, 9).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a, sweep_sigma(&[1.0], &t, 9).unwrap());
        assert!(sweep_sigma(&[], &t, 9).is_err());
        let mut buf = Vec::new();
        write_sweep_csv(&a, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("sigma,sigma_tilde,prob_trapezoid,prob_direct\n"));
    }

    #[test]
    fn total_variation_of_identical_tables_is_zero() {
        let t = TabulatedPdf::from_fn(0.0, 5.0, 1e-2, PdfKind::Fx, |x| pdf_fx(x, &profile(1.0, 0.0))).unwrap();
        assert_eq!(total_variation(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn total_variation_across_h() {
        // Measured values at σ̃ = 1 between h = 0 and h = 0.75.
        let tv = |form| {
            let f = |h| {
                let p = profile(1.0, h).with_form(form);
                TabulatedPdf::from_fn(0.0, 60.0, 1e-4, PdfKind::Fx, move |x| pdf_fx(x, &p)).unwrap()
            };
            total_variation(&f(0.0), &f(0.75)).unwrap()
        };
        assert!((tv(DensityForm::PaperLiteral) - 0.3137).abs() < 2e-3);
        assert!((tv(DensityForm::Exact) - 0.6006).abs() < 2e-3);
    }
}
