//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fail.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::Array1;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{Continuous, LogNormal};

use spof_core::complexity::{c_dpsgd, c_dpsgd_closed_form, c_spof, c_spof_closed_form, reduction, OpCosts};
use spof_core::dp_mech::{empirical_dp_ratio, PrivacyBudget};
use spof_core::env_noise::{pdf_fx, sweep_sigma, EnvNoiseProfile, SweepTemplate};
use spof_core::harness::{run_experiment, run_trials, synth_corpus, train_once, ExperimentSpec, Mechanism, DEFAULT_EPSILONS};
use spof_core::rng::{self, Purpose};
use spof_core::sensitivity::{
    sgd_below_per_term_max, sgd_per_term, sgd_sensitivity, spof_bar_per_term_max, spof_per_term, spof_per_term_search,
    spof_sensitivity_bar, spof_sensitivity_hat, GradRegime,
};
use spof_core::taylor_loss::{coeffs, derivative_cap, noisy_factors, stabilize_with_shift, taylor_error_bound, ShiftConvention};
use spof_core::trainers::{grad_check, TrainConfig};
use spof_core::DaParams;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn run(id: u32, title: &str, budget: Duration, f: impl FnOnce() -> Verdict) -> bool {
    let t = Instant::now();
    let v = f();
    let elapsed = t.elapsed();
    let pass = v.pass && elapsed < budget;
    println!(
        "{} criterion {id}: {title} — {} [{:.2?} / budget {:.0?}]",
        if pass { "PASS" } else { "FAIL" },
        v.detail,
        elapsed,
        budget
    );
    pass
}

fn info(msg: &str) {
    println!("INFO {msg}");
}

fn c1() -> Verdict {
    let bar = spof_sensitivity_bar::<f64>(14);
    let hat = spof_sensitivity_hat(14, 2.5f64).unwrap();
    let below = sgd_sensitivity(14, 4.0f64, 1.0, 0.0, None).unwrap();
    let above = sgd_sensitivity(14, 4.0f64, 10.0, 0.0, None).unwrap();
    let grid = 100_000;
    // Independent oracles: brute force maxima over x of the per-feature query gaps.
    let xs = (0..grid).map(|k| k as f64 / (grid - 1) as f64);
    let c = 2.5;
    let bar_oracle = 2.0 * xs.clone().map(|x| (0.5 - x).abs() + (0.5 * x - 0.25).abs()).fold(0.0, f64::max);
    let hat_oracle = 2.0
        * xs.clone()
            .map(|x| {
                let (a2, a3) = (0.5 - x, 0.5 * x - 0.25);
                (a2 * (1.0 + 2.0 * c)).abs() + a3.abs() + (c * c * a3).abs()
            })
            .fold(0.0, f64::max);
    let sgd_oracle = 2.0 * xs.map(|x| (0.5 - x).abs()).fold(0.0, f64::max);
    let errs = [
        (bar_oracle - spof_bar_per_term_max::<f64>(grid)).abs(),
        (bar_oracle - 1.5).abs(),
        (hat_oracle * 14.0 - hat).abs(),
        (sgd_oracle - sgd_below_per_term_max(0.0f64, grid)).abs(),
        (sgd_oracle - sgd_per_term(0.0f64, 4.0, GradRegime::Below)).abs(),
    ];
    let worst = errs.iter().copied().fold(0.0, f64::max);
    verdict(
        bar == 21.0 && hat == 134.75 && below == 14.0 && above == 112.0 && worst < 1e-9,
        format!("Δ̄={bar}, Δ̂={hat}, Δ_SGD below={below} above={above}, max oracle gap {worst:.1e}"),
    )
}

fn c2() -> Verdict {
    let at0 = spof_per_term(0.0f64);
    // Dense scan then golden-section refinement for the minimum over a.
    let (mut a_min, mut v_min) = (0.0, f64::INFINITY);
    for k in 0..=40_000 {
        let a = -2.0 + k as f64 * 1e-4;
        let v = spof_per_term(a);
        if v < v_min {
            (a_min, v_min) = (a, v);
        }
    }
    let (mut lo, mut hi) = (a_min - 1e-4, a_min + 1e-4);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let (p, q) = (hi - g * (hi - lo), lo + g * (hi - lo));
        if spof_per_term(p) < spof_per_term(q) {
            hi = q;
        } else {
            lo = p;
        }
    }
    let (a_min, v_min) = ((lo + hi) / 2.0, spof_per_term((lo + hi) / 2.0));
    let sgd1 = sgd_per_term(0.0f64, 4.0, GradRegime::Below);
    let sgd2 = sgd_per_term(0.0f64, 4.0, GradRegime::Above);
    info(&format!(
        "per-term SPOF sensitivity by direct search at a=0: {:.4} (closed form {at0:.4}); reduction vs 2C: {:.1}%",
        spof_per_term_search(0.0f64, 100_000),
        100.0 * (1.0 - v_min / at0)
    ));
    verdict(
        (at0 - 4.6931).abs() <= 1e-3
            && (v_min - 4.0348).abs() <= 1e-3
            && (a_min - 0.9057).abs() <= 1e-3
            && sgd1 == 1.0
            && sgd2 == 8.0
            && sgd1 < at0
            && at0 < sgd2,
        format!("Δ_SPOF(0)={at0:.4}, min {v_min:.4} at a={a_min:.4}, Δ_SGD(1)(0)={sgd1}, Δ_SGD(2)={sgd2}"),
    )
}

fn c3() -> Verdict {
    let c = OpCosts::default();
    let (s, d) = (c_spof(14, 7, &c).unwrap(), c_dpsgd(14, &c).unwrap());
    let r = reduction(14, 7, &c).unwrap();
    let pct = *r.numer() as f64 / *r.denom() as f64;
    let mut identity = true;
    for n in 1..=1000usize {
        identity &= c_dpsgd(n, &c).unwrap() == c_dpsgd_closed_form(n as u64);
        for l in [1, 7, n] {
            identity &= c_spof(n, l, &c).unwrap() == c_spof_closed_form(n as u64, l as u64);
        }
    }
    let rounded = (pct * 100.0).round() / 100.0;
    verdict(
        s == 364 && d == 1403 && rounded == 74.06 && identity,
        format!("C_SPOF={s}, C_DPSGD={d}, reduction {}/{} % = {pct:.4}%, itemized identity n≤1000: {identity}", r.numer(), r.denom()),
    )
}

fn c4() -> Verdict {
    let (n, c, trials) = (14, 2.5, 1_000_000);
    let row = |v: f64| Array1::from_elem(n, v);
    let query = |x: &Array1<f64>| stabilize_with_shift(&coeffs(x.view()).unwrap(), c, ShiftConvention::PaperLiteral).query();
    let (qa, qb) = (query(&row(0.0)), query(&row(1.0)));
    let gap: f64 = qa.iter().zip(&qb).map(|(a, b)| (a - b).abs()).sum();
    let sens = spof_sensitivity_hat(n, c).unwrap();
    let eps = PrivacyBudget::new(1.0).unwrap();
    let calibrated = empirical_dp_ratio(&qa, &qb, eps, sens, trials, 11).unwrap();
    let halved = empirical_dp_ratio(&qa, &qb, eps, sens / 2.0, trials, 12).unwrap();
    verdict(
        calibrated <= 1.05 && halved > 1.1,
        format!("query ℓ1 gap {gap} vs Δ̂ {sens}; max log-ratio calibrated {calibrated:.3}, halved {halved:.3}"),
    )
}

/// `x log(1+e^{-z}) + (1−x) log(1+e^z)` and its second-order Taylor polynomial at 0.
fn remainder(x: f64, z: f64) -> f64 {
    let sp = |v: f64| v.max(0.0) + (-v.abs()).exp().ln_1p();
    let exact = x * sp(-z) + (1.0 - x) * sp(z);
    let taylor = std::f64::consts::LN_2 + (0.5 - x) * z + z * z / 8.0;
    (exact - taylor).abs()
}

fn c5() -> Verdict {
    let mut r = rng::stream(5, Purpose::Single, &[]);
    let mut worst_shift = 0.0f64;
    for _ in 0..10_000 {
        let n = r.random_range(1..=20);
        let x = Array1::from_shape_simple_fn(n, || r.random::<f64>());
        let z = Array1::from_shape_simple_fn(n, || r.random_range(-5.0..5.0));
        let c_j = r.random_range(0.0..5.0);
        let base = coeffs(x.view()).unwrap();
        // Oracle: the unshifted polynomial evaluated at z + c_j.
        let direct: f64 = n as f64 * std::f64::consts::LN_2
            + x.iter().zip(&z).map(|(&x, &z)| {
                let v = z + c_j;
                (0.5 - x) * v + (0.5 * x - 0.25) * v * v
            }).sum::<f64>();
        let s = stabilize_with_shift(&base, c_j, ShiftConvention::Exact).evaluate(z.view()).unwrap();
        worst_shift = worst_shift.max((direct - s).abs() / direct.abs().max(1.0));
    }
    let mut dominated = true;
    let mut detail = Vec::new();
    for delta in [0.1, 0.5, 1.0] {
        let g = derivative_cap(delta, 20, 2001);
        let bound = taylor_error_bound(g, delta).unwrap().bound;
        let mut worst = 0.0f64;
        for i in 0..=100 {
            for k in 0..=1000 {
                let (x, z) = (i as f64 / 100.0, -delta + 2.0 * delta * k as f64 / 1000.0);
                worst = worst.max(remainder(x, z));
            }
        }
        dominated &= worst <= bound;
        detail.push(format!("δ={delta}: remainder {worst:.2e} ≤ bound {bound:.2e}"));
    }
    verdict(
        worst_shift <= 1e-12 && dominated,
        format!("shift identity max rel err {worst_shift:.1e}; {}", detail.join(", ")),
    )
}

fn c6() -> Verdict {
    let mut r = rng::stream(6, Purpose::Single, &[]);
    let mut worst = 0.0f64;
    for draw in 0..10_000u64 {
        let (n, m) = (r.random_range(2..=14), r.random_range(1..=3));
        let l = r.random_range(1..=n);
        let params = DaParams::<f64>::init(n, l, m, draw).unwrap();
        let j = r.random_range(0..m);
        let x = Array1::from_shape_simple_fn(n, || r.random::<f64>());
        let sigma = r.random_range(0.0..1.5);
        let normal = Normal::new(0.0, sigma).unwrap();
        let noise = Array1::from_shape_simple_fn(n, || normal.sample(&mut r));
        let nc = noisy_factors(&params, j, x.view(), noise.view()).unwrap();
        let h = params.encode(j, x.view()).unwrap();
        let z_hat = nc.z_hat(params.z_values(j, &h).unwrap().view()).unwrap();
        // Oracle: forward pass on the noisy input.
        let noisy_h = params.encode(j, (&x + &noise).view()).unwrap();
        let direct = params.z_values(j, &noisy_h).unwrap();
        let err = z_hat.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
    }
    let params = DaParams::<f64>::init(14, 7, 2, 1).unwrap();
    let x = Array1::from_shape_fn(14, |i| i as f64 / 13.0);
    let nc = noisy_factors(&params, 1, x.view(), Array1::zeros(14).view()).unwrap();
    let z = params.z_values(1, &params.encode(1, x.view()).unwrap()).unwrap();
    let exact_zero = nc.b.iter().all(|&b| b == 1.0) && nc.z_hat(z.view()).unwrap() == z;
    verdict(
        worst <= 1e-10 && exact_zero,
        format!("max |b_j z − t − Ŵᵀĥ| = {worst:.1e} over 10^4 draws; zero noise exact: {exact_zero}"),
    )
}

fn c7() -> Verdict {
    let mut pdf_err = 0.0f64;
    for st in [0.3, 1.0, 2.5] {
        let p = EnvNoiseProfile::with_sigma_tilde(st, 0.0, 7, 100).unwrap();
        let oracle = LogNormal::new(0.0, st).unwrap();
        for k in 1..=100 {
            let x = k as f64 * 0.05;
            pdf_err = pdf_err.max((pdf_fx(x, &p) - oracle.pdf(x)).abs());
        }
    }
    let template = SweepTemplate::default();
    let check = sweep_sigma(&[1.0, 5.0, 10.0], &template, 7).unwrap();
    let agree = check.iter().map(|r| (r.prob_trapezoid - r.prob_direct).abs()).fold(0.0, f64::max);
    let sigmas = [0.1, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];
    let sweep = sweep_sigma(&sigmas, &template, 7).unwrap();
    let probs: Vec<f64> = sweep.iter().map(|r| r.prob_trapezoid).collect();
    let crossing = probs.iter().position(|&p| p >= 0.5);
    let shape = crossing.is_some_and(|k| probs[k..].iter().all(|&p| p >= 0.5));
    let peak = probs.iter().copied().fold(0.0, f64::max);
    verdict(
        pdf_err <= 1e-12 && agree <= 0.02 && shape,
        format!(
            "pdf vs lognormal max err {pdf_err:.1e}; trapezoid vs direct max gap {agree:.3} (σ=1,5,10); \
             sweep σ∈[0.1,100] peak Pr[b_max≤1] = {peak:.2e}, crosses 0.5: {shape}"
        ),
    )
}

fn c8() -> Verdict {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let params = DaParams::<f64>::init(4, 2, 2, seed).unwrap();
        let mut r = rng::stream(seed, Purpose::Single, &[8]);
        for j in 0..2 {
            let x = Array1::from_shape_simple_fn(4, || r.random::<f64>());
            for c in [0.0, 2.5] {
                worst = worst.max(grad_check(&params, j, x.view(), c).unwrap());
            }
        }
    }
    verdict(worst < 1e-5, format!("max relative error {worst:.2e} over 20 seeds × 2 users × c∈{{0, 2.5}}"))
}

fn c9() -> Verdict {
    let corpus = synth_corpus(14, 2, 2000, 1).unwrap();
    let spec = |mechanism| ExperimentSpec {
        mechanism,
        epsilons: DEFAULT_EPSILONS.to_vec(),
        env_sigma: 0.0,
        mc_trials: 10,
        train: TrainConfig { c_scalar: 2.5, seed: 9, ..Default::default() },
    };
    let rows: Vec<_> = [Mechanism::Nonprivate, Mechanism::Spof, Mechanism::Dpsgd, Mechanism::Fm]
        .into_iter()
        .map(|m| run_experiment(&spec(m), &corpus).unwrap())
        .collect();
    let means = |k: usize| rows[k].iter().map(|r| r.mean_acc).collect::<Vec<_>>();
    let spread = |v: &[f64]| v.iter().copied().fold(f64::MIN, f64::max) - v.iter().copied().fold(f64::MAX, f64::min);
    let baseline = rows[0][0].mean_acc;
    let ordering = rows[1..].iter().flatten().all(|r| baseline >= r.mean_acc);
    let (s_spof, s_sgd) = (spread(&means(1)), spread(&means(2)));
    let counters = rows
        .iter()
        .flatten()
        .all(|r| r.noise_draws == r.mechanism.draws_per_user_step(14) * r.user_steps && r.user_steps > 0);
    for r in rows.iter().flatten() {
        info(&format!(
            "{:>10} ε={:<3} mean {:.2} sd {:.2} diverged {}/{}",
            r.mechanism, r.epsilon, r.mean_acc, r.sd_acc, r.diverged, r.trials
        ));
    }
    verdict(
        ordering && s_spof <= s_sgd && counters,
        format!(
            "nonprivate {baseline:.2} ≥ all private means: {ordering}; spread SPOF {s_spof:.2} ≤ DP-SGD {s_sgd:.2}; \
             draws/user-step 2n and n: {counters}"
        ),
    )
}

fn c10() -> Verdict {
    let corpus = synth_corpus(14, 2, 300, 10).unwrap();
    let single = corpus.single_user();
    let spec = ExperimentSpec {
        mechanism: Mechanism::Fm,
        epsilons: vec![0.5, 2.0],
        env_sigma: 0.0,
        mc_trials: 3,
        train: TrainConfig { c_scalar: 2.5, seed: 10, ..Default::default() },
    };
    let spof_spec = ExperimentSpec {
        mechanism: Mechanism::Spof,
        train: TrainConfig { c_scalar: 0.0, ..spec.train },
        ..spec.clone()
    };
    let fm = run_trials(&spec, &corpus).unwrap();
    let spof = run_trials(&spof_spec, &single).unwrap();
    let rows_equal = fm.len() == spof.len()
        && fm.iter().zip(&spof).all(|(a, b)| a.accuracy.to_bits() == b.accuracy.to_bits() && a.counters == b.counters);
    let cfg = spec.trial_config(1.0, 0).unwrap();
    let a = train_once(Mechanism::Fm, &corpus, &cfg).unwrap();
    let b = train_once(Mechanism::Spof, &single, &TrainConfig { c_scalar: 0.0, ..cfg }).unwrap();
    let params_equal = a.params == b.params && a.metrics == b.metrics;
    verdict(rows_equal && params_equal, format!("{} trial rows bit-identical: {rows_equal}; parameters identical: {params_equal}", fm.len()))
}

fn main() -> ExitCode {
    let s = Duration::from_secs;
    let results = [
        run(1, "sensitivity closed forms", s(1), c1),
        run(2, "per-term sensitivity curve", s(5), c2),
        run(3, "perturbation complexity", s(1), c3),
        run(4, "empirical ε-DP ratio", s(30), c4),
        run(5, "Taylor machinery", s(5), c5),
        run(6, "noisy-input identity", s(5), c6),
        run(7, "environmental noise analysis", s(60), c7),
        run(8, "gradient correctness", s(5), c8),
        run(9, "desk-scale privacy-utility experiment", s(600), c9),
        run(10, "FM special case", s(60), c10),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
