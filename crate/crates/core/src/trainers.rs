//! Per-user training loops: SPOF (perturbed loss coefficients), DP-SGD
//! (clipped, perturbed gradients) and an unperturbed cross-entropy baseline.
//!
//! Every user only reads and writes its own encoder and its own decoder block,
//! so users are isolated from each other's data throughout training.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::da_model::{corpus_accuracy, DaParams};
use crate::dp_mech::{Dataset, LaplaceScale, PrivacyBudget};
use crate::error::{shape_err, Error, Result};
use crate::rng::{self, Purpose, StreamRng};
use crate::scalar::{sigmoid, Scalar};
use crate::sensitivity::{sgd_sensitivity, spof_sensitivity_hat, spof_sensitivity_hat_noisy};
use crate::taylor_loss::{coeffs, exact_row_loss, noisy_factors, stabilize_with_shift, ShiftConvention};

/// Training aborts once the magnitude of a per-user loss exceeds this.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig<T> {
    pub eta: T,
    /// `None` disables privacy noise.
    pub epsilon: Option<PrivacyBudget<T>>,
    /// Clipping threshold `C` (DP-SGD only); may be infinite.
    pub clip: T,
    /// Stabilization constant entry `c` (SPOF only).
    pub c_scalar: T,
    pub latent: usize,
    pub epochs: usize,
    /// Standard deviation of Gaussian input noise; 0 disables it.
    pub env_sigma: T,
    pub seed: u64,
    pub shift: ShiftConvention,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            eta: T::lit(0.01),
            epsilon: None,
            clip: T::lit(4.0),
            c_scalar: T::zero(),
            latent: 7,
            epochs: 1,
            env_sigma: T::zero(),
            seed: 0,
            shift: ShiftConvention::Exact,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > T::zero()) || !self.eta.is_finite() {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.clip > T::zero()) {
            return Err(Error::Config(format!("clipping threshold must be positive, got {}", self.clip)));
        }
        if !(self.c_scalar >= T::zero()) || !self.c_scalar.is_finite() {
            return Err(Error::Config(format!("stabilization constant must be >= 0, got {}", self.c_scalar)));
        }
        if !(self.env_sigma >= T::zero()) || !self.env_sigma.is_finite() {
            return Err(Error::Config(format!("env_sigma must be >= 0, got {}", self.env_sigma)));
        }
        if self.latent == 0 {
            return Err(Error::Config("latent size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Operation counts along the privatization path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OpCounters {
    pub perturbations: u64,
    pub clip_divisions: u64,
    pub norm_ops: u64,
    pub noise_draws: u64,
    pub stabilization_adds: u64,
    pub user_steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics<T> {
    pub epoch: usize,
    /// The trainer's noise-free objective on the corpus, averaged per batch.
    pub objective: T,
    /// Cross-entropy on the corpus, averaged per batch.
    pub exact_loss: T,
    pub accuracy: T,
    pub counters: OpCounters,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Divergence {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    /// Trained parameters with any stabilization shift folded into the decoder.
    pub params: DaParams<T>,
    pub metrics: Vec<EpochMetrics<T>>,
    pub counters: OpCounters,
    pub divergence: Option<Divergence>,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rule {
    Spof,
    Dpsgd,
    Nonprivate,
}

/// Parameter gradients for one user: encoder (n x l) and decoder block (l x n).
#[derive(Debug, Clone, PartialEq)]
pub struct UserGrads<T> {
    pub encoder: Array2<T>,
    pub decoder_block: Array2<T>,
}

fn outer<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> Array2<T> {
    a.insert_axis(Axis(1)).dot(&b.insert_axis(Axis(0)))
}

/// Chains `dL/dz'` back to user `j`'s parameters, where the effective
/// pre-activation is `z' = (Ŵ_block + c)ᵀ h` and `h = σ(W_jᵀ x)`.
pub fn backprop<T: Scalar>(
    params: &DaParams<T>,
    j: usize,
    x: ArrayView1<'_, T>,
    h: ArrayView1<'_, T>,
    dz: ArrayView1<'_, T>,
    c_scalar: T,
) -> Result<UserGrads<T>> {
    if dz.len() != params.n() {
        return Err(shape_err(params.n(), dz.len()));
    }
    let block = params.decoder_block(j)?;
    let dh = block.dot(&dz) + c_scalar * dz.sum();
    let dpre: Array1<T> = h.iter().zip(&dh).map(|(&h, &g)| h * (T::one() - h) * g).collect();
    Ok(UserGrads {
        encoder: outer(x, dpre.view()),
        decoder_block: outer(h, dz),
    })
}

fn apply<T: Scalar>(params: &mut DaParams<T>, j: usize, grads: &UserGrads<T>, eta: T) {
    let (mut w, mut d) = params.parts_mut(j);
    w.scaled_add(-eta, &grads.encoder);
    d.scaled_add(-eta, &grads.decoder_block);
}

/// Everything one user step needs from the forward pass.
struct StepInputs<T> {
    h: Array1<T>,
    /// Loss variable: `Ŵ_blockᵀ h`, shifted by `−t/b_j` under input noise.
    u: Array1<T>,
    alpha2: Array1<T>,
    alpha3: Array1<T>,
    /// `b_j` under input noise, else `None`.
    b_j: Option<T>,
}

fn step_inputs<T: Scalar>(
    params: &DaParams<T>,
    j: usize,
    x: ArrayView1<'_, T>,
    env: Option<&Array1<T>>,
) -> Result<StepInputs<T>> {
    let h = params.encode(j, x)?;
    let z = params.z_values(j, &h)?;
    match env {
        None => {
            let c = coeffs(x)?;
            Ok(StepInputs { h: h.as_array().clone(), u: z, alpha2: c.alpha2, alpha3: c.alpha3, b_j: None })
        }
        Some(noise) => {
            let nc = noisy_factors(params, j, x, noise.view())?;
            let u = nc.shifted(z.view())?;
            Ok(StepInputs { h: h.as_array().clone(), u, alpha2: nc.alpha2, alpha3: nc.alpha3, b_j: Some(nc.b_j) })
        }
    }
}

/// SPOF's released, perturbed coefficients for one user step.
#[derive(Debug, Clone, PartialEq)]
pub struct SpofRelease<T> {
    pub alpha2: Array1<T>,
    pub alpha3: Array1<T>,
    pub c_j: T,
    pub sensitivity: T,
}

fn spof_release<T: Scalar>(
    inputs: &StepInputs<T>,
    cfg: &TrainConfig<T>,
    rng: &mut StreamRng,
    counters: &mut OpCounters,
) -> Result<SpofRelease<T>> {
    let n = inputs.u.len();
    let c_j = cfg.c_scalar * inputs.h.sum();
    let base = crate::taylor_loss::LossCoeffs { alpha2: inputs.alpha2.clone(), alpha3: inputs.alpha3.clone() };
    let s = stabilize_with_shift(&base, c_j, cfg.shift);
    if cfg.c_scalar > T::zero() {
        counters.stabilization_adds += (n * inputs.h.len()) as u64;
    }
    let sensitivity = match inputs.b_j {
        None => spof_sensitivity_hat(n, c_j)?,
        Some(b) => spof_sensitivity_hat_noisy(n, c_j, b)?,
    };
    let (mut alpha2, mut alpha3) = (s.alpha2_hat, s.alpha3_hat);
    if let Some(budget) = cfg.epsilon {
        let scale = LaplaceScale::new(sensitivity / (T::SQRT_2() * budget.epsilon()))?;
        alpha2.iter_mut().chain(alpha3.iter_mut()).for_each(|a| *a = *a + scale.sample(rng));
        counters.noise_draws += 2 * n as u64;
        counters.perturbations += 2 * n as u64;
    }
    Ok(SpofRelease { alpha2, alpha3, c_j, sensitivity })
}

fn polynomial<T: Scalar>(a2: &Array1<T>, a3: &Array1<T>, u: &Array1<T>) -> (T, Array1<T>) {
    let two = T::lit(2.0);
    let mut value = T::zero();
    let grad = a2
        .iter()
        .zip(a3)
        .zip(u)
        .map(|((&p, &q), &u)| {
            value = value + p * u + q * u * u;
            p + two * q * u
        })
        .collect();
    (value, grad)
}

/// One user's update; returns the loss value used for the divergence guard.
fn user_step<T: Scalar>(
    rule: Rule,
    params: &mut DaParams<T>,
    j: usize,
    x: ArrayView1<'_, T>,
    cfg: &TrainConfig<T>,
    tags: [u64; 2],
    counters: &mut OpCounters,
) -> Result<T> {
    counters.user_steps += 1;
    let tag = [tags[0], tags[1], j as u64];
    let env = if cfg.env_sigma > T::zero() {
        let normal = Normal::new(0.0, cfg.env_sigma.as_f64()).map_err(|e| Error::Config(e.to_string()))?;
        let mut r = rng::stream(cfg.seed, Purpose::EnvNoise, &tag);
        Some(Array1::from_shape_simple_fn(x.len(), || T::lit(normal.sample(&mut r))))
    } else {
        None
    };
    let mut noise = rng::stream(cfg.seed, Purpose::DpNoise, &tag);

    let (loss, dz, c) = match rule {
        Rule::Spof => {
            let inputs = step_inputs(params, j, x, env.as_ref())?;
            let rel = spof_release(&inputs, cfg, &mut noise, counters)?;
            let (loss, dz) = polynomial(&rel.alpha2, &rel.alpha3, &inputs.u);
            (loss, (dz, inputs.h), cfg.c_scalar)
        }
        Rule::Dpsgd => {
            let inputs = step_inputs(params, j, x, env.as_ref())?;
            let (loss, g) = polynomial(&inputs.alpha2, &inputs.alpha3, &inputs.u);
            let norm = g.dot(&g).sqrt();
            let factor = T::one().max(norm / cfg.clip);
            let mut g = g.mapv(|v| v / factor);
            counters.norm_ops += 1;
            counters.clip_divisions += g.len() as u64 + 1;
            if let Some(budget) = cfg.epsilon {
                let sens = sgd_sensitivity(g.len(), cfg.clip, norm, T::zero(), inputs.b_j)?;
                let scale = LaplaceScale::calibrated(sens, budget)?;
                g.mapv_inplace(|v| v + scale.sample(&mut noise));
                counters.noise_draws += g.len() as u64;
                counters.perturbations += g.len() as u64;
            }
            (loss, (g, inputs.h), T::zero())
        }
        Rule::Nonprivate => {
            let input = match &env {
                Some(e) => &x + e,
                None => x.to_owned(),
            };
            let h = params.encode(j, input.view())?;
            let z = params.z_values(j, &h)?;
            let loss = exact_row_loss(x, z.view())?;
            let g: Array1<T> = z.iter().zip(x).map(|(&z, &x)| sigmoid(z) - x).collect();
            let grads = backprop(params, j, input.view(), h.view(), g.view(), T::zero())?;
            if loss.is_finite() && loss.abs().as_f64() <= DIVERGENCE_THRESHOLD {
                apply(params, j, &grads, cfg.eta);
            }
            return Ok(loss);
        }
    };
    let (dz, h) = dz;
    if !loss.is_finite() || loss.abs().as_f64() > DIVERGENCE_THRESHOLD || dz.iter().any(|v| !v.is_finite()) {
        return Ok(if loss.is_finite() { loss } else { T::infinity() });
    }
    let grads = backprop(params, j, x, h.view(), dz.view(), c)?;
    apply(params, j, &grads, cfg.eta);
    Ok(loss)
}

fn check_corpus<T: Scalar>(batches: &[Dataset<T>], latent: usize) -> Result<(usize, usize)> {
    let first = batches.first().ok_or_else(|| Error::Validation("corpus has no batches".into()))?;
    let (m, n) = (first.m(), first.n());
    if let Some(b) = batches.iter().find(|b| b.m() != m || b.n() != n) {
        return Err(shape_err(format!("{m}x{n} batches"), format!("{}x{}", b.m(), b.n())));
    }
    if latent > n {
        return Err(Error::Config(format!("latent size l={latent} exceeds n={n}")));
    }
    Ok((m, n))
}

/// Noise-free objective each trainer descends, averaged per batch.
fn objective<T: Scalar>(rule: Rule, params: &DaParams<T>, batches: &[Dataset<T>], cfg: &TrainConfig<T>) -> Result<T> {
    let mut total = T::zero();
    for batch in batches {
        for (j, x) in batch.rows().enumerate() {
            let h = params.encode(j, x)?;
            let z = params.z_values(j, &h)?;
            total = total
                + match rule {
                    Rule::Nonprivate => exact_row_loss(x, z.view())?,
                    Rule::Spof | Rule::Dpsgd => {
                        let c = if rule == Rule::Spof { cfg.c_scalar } else { T::zero() };
                        let s = stabilize_with_shift(&coeffs(x)?, c * h.sum(), cfg.shift);
                        s.evaluate(z.view())?
                    }
                };
        }
    }
    Ok(total / T::from_count(batches.len()))
}

fn effective<T: Scalar>(params: &DaParams<T>, shift: T) -> DaParams<T> {
    let mut p = params.clone();
    if shift != T::zero() {
        p.shift_decoder(shift);
    }
    p
}

fn corpus_exact_loss<T: Scalar>(params: &DaParams<T>, batches: &[Dataset<T>]) -> Result<T> {
    let mut total = T::zero();
    for b in batches {
        total = total + crate::taylor_loss::exact_loss(params, b)?;
    }
    Ok(total / T::from_count(batches.len()))
}

fn train<T: Scalar>(rule: Rule, batches: &[Dataset<T>], cfg: &TrainConfig<T>) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let (m, n) = check_corpus(batches, cfg.latent)?;
    let shift = if rule == Rule::Spof { cfg.c_scalar } else { T::zero() };
    let mut params = DaParams::init(n, cfg.latent, m, rng::derive_seed(cfg.seed, Purpose::Init, &[]))?;
    let mut counters = OpCounters::default();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut divergence = None;
    let mut step = 0usize;
    'epochs: for epoch in 0..cfg.epochs {
        for (b, batch) in batches.iter().enumerate() {
            for (j, x) in batch.rows().enumerate() {
                let loss = user_step(rule, &mut params, j, x, cfg, [epoch as u64, b as u64], &mut counters)?;
                if !loss.is_finite() || loss.abs().as_f64() > DIVERGENCE_THRESHOLD {
                    log::warn!("training diverged at step {step} (user {j}, batch {b}): loss {loss}");
                    divergence = Some(Divergence { step, loss: loss.as_f64() });
                    break 'epochs;
                }
                step += 1;
            }
        }
        let eff = effective(&params, shift);
        metrics.push(EpochMetrics {
            epoch,
            objective: objective(rule, &params, batches, cfg)?,
            exact_loss: corpus_exact_loss(&eff, batches)?,
            accuracy: corpus_accuracy(&eff, batches)?,
            counters,
        });
    }
    Ok(TrainOutcome { params: effective(&params, shift), metrics, counters, divergence })
}

/// Trains with perturbed, stabilized loss coefficients.
pub fn train_spof<T: Scalar>(batches: &[Dataset<T>], cfg: &TrainConfig<T>) -> Result<TrainOutcome<T>> {
    train(Rule::Spof, batches, cfg)
}

/// Trains with clipped, perturbed gradients of the same polynomial loss.
pub fn train_dpsgd<T: Scalar>(batches: &[Dataset<T>], cfg: &TrainConfig<T>) -> Result<TrainOutcome<T>> {
    train(Rule::Dpsgd, batches, cfg)
}

/// Unperturbed gradient descent on the cross-entropy loss.
pub fn train_nonprivate<T: Scalar>(batches: &[Dataset<T>], cfg: &TrainConfig<T>) -> Result<TrainOutcome<T>> {
    train(Rule::Nonprivate, batches, cfg)
}

/// The noise-free SPOF objective of one user as a function of all parameters.
pub fn user_objective<T: Scalar>(params: &DaParams<T>, j: usize, x: ArrayView1<'_, T>, c_scalar: T) -> Result<T> {
    let h = params.encode(j, x)?;
    let z = params.z_values(j, &h)?;
    stabilize_with_shift(&coeffs(x)?, c_scalar * h.sum(), ShiftConvention::Exact).evaluate(z.view())
}

/// Analytic gradient of [`user_objective`] for user `j`'s parameters.
pub fn user_objective_grad<T: Scalar>(
    params: &DaParams<T>,
    j: usize,
    x: ArrayView1<'_, T>,
    c_scalar: T,
) -> Result<UserGrads<T>> {
    let h = params.encode(j, x)?;
    let z = params.z_values(j, &h)?;
    let s = stabilize_with_shift(&coeffs(x)?, c_scalar * h.sum(), ShiftConvention::Exact);
    let (_, dz) = polynomial(&s.alpha2_hat, &s.alpha3_hat, &z);
    backprop(params, j, x, h.view(), dz.view(), c_scalar)
}

/// Maximum relative error between the analytic gradient and central
/// differences with step `1e-5`. Entries where both are below `1e-8` count as exact.
pub fn grad_check<T: Scalar>(params: &DaParams<T>, j: usize, x: ArrayView1<'_, T>, c_scalar: T) -> Result<f64> {
    let analytic = user_objective_grad(params, j, x, c_scalar)?;
    let step = 1e-5;
    let l = params.l();
    let mut worst = 0.0f64;
    let mut probe = |perturb: &dyn Fn(&mut DaParams<T>, T), a: T| -> Result<()> {
        let mut p = params.clone();
        perturb(&mut p, T::lit(step));
        let up = user_objective(&p, j, x, c_scalar)?.as_f64();
        let mut p = params.clone();
        perturb(&mut p, T::lit(-step));
        let down = user_objective(&p, j, x, c_scalar)?.as_f64();
        let numeric = (up - down) / (2.0 * step);
        let a = a.as_f64();
        let scale = a.abs().max(numeric.abs());
        if scale >= 1e-8 {
            worst = worst.max((a - numeric).abs() / scale);
        }
        Ok(())
    };
    for ((r, c), &a) in analytic.encoder.indexed_iter() {
        probe(&|p, d| p.parts_mut(j).0[[r, c]] = p.parts_mut(j).0[[r, c]] + d, a)?;
    }
    for ((r, c), &a) in analytic.decoder_block.indexed_iter() {
        probe(&|p, d| p.decoder_mut()[[j * l + r, c]] = p.decoder()[[j * l + r, c]] + d, a)?;
    }
    Ok(worst)
}
