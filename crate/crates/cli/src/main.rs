use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use spof_core::complexity::{dpsgd_items, spof_items, ComplexityReport, OpCosts};
use spof_core::dp_mech::{empirical_dp_ratio, PrivacyBudget};
use spof_core::env_noise::{
    bmax_curves, sweep_sigma, sweep_weights, write_curves_csv, write_sweep_csv, EnvNoiseProfile, SweepTemplate,
    VarianceConvention,
};
use spof_core::harness::{
    c_grid, ingest_csv, mean_curve, plateau, run_experiment, sweep_c, synth_corpus, train_once, write_metrics_csv,
    write_results_csv, write_sweep_c_csv, Corpus, ExperimentSpec, Mechanism, DEFAULT_EPSILONS, PLATEAU_TOLERANCE,
};
use spof_core::sensitivity::{per_term_rows, uniform_grid, write_per_term_csv, SensitivityConfig, SensitivityReport};
use spof_core::taylor_loss::{coeffs, stabilize_with_shift, ShiftConvention};
use spof_core::trainers::TrainConfig;
use spof_core::{rng, sensitivity};

#[derive(Parser)]
#[command(name = "spof", version, about = "Private training of distributed autoencoders: SPOF vs DP-SGD")]
struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true, env = "SPOF_SEED", default_value_t = 0)]
    seed: u64,

    /// Output CSV path (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and report per-epoch metrics.
    Train(TrainArgs),
    /// Monte Carlo privacy-utility comparison across mechanisms and budgets.
    Compare(CompareArgs),
    /// Accuracy of SPOF as a function of the stabilization constant.
    SweepC(SweepCArgs),
    /// Probability that input noise lowers the required privacy noise, over σ.
    EnvNoise(EnvNoiseArgs),
    /// Per-feature sensitivities over the expansion point, plus a full report.
    SensitivityCurve(SensitivityArgs),
    /// Macro-operation cost of the privatization step.
    Complexity(ComplexityArgs),
    /// Empirical density-ratio check of the SPOF coefficient release.
    DpCheck(DpCheckArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Numeric CSV, one user row per line; grouped into batches of --users rows.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Use the generated corpus (the default when --data is absent).
    #[arg(long)]
    synthetic: bool,
    /// Features per row of the synthetic corpus.
    #[arg(long, default_value_t = 14)]
    features: usize,
    /// Users per batch (m).
    #[arg(long, default_value_t = 2)]
    users: usize,
    /// Batches in the synthetic corpus.
    #[arg(long, default_value_t = 2000)]
    batches: usize,
    /// Skip column-max normalization of --data.
    #[arg(long)]
    raw: bool,
}

impl DataArgs {
    fn load(&self, seed: u64) -> Result<Corpus> {
        let corpus = match &self.data {
            Some(path) => ingest_csv(path, self.users, None, !self.raw)
                .with_context(|| format!("reading {}", path.display()))?,
            None => synth_corpus(
                self.features,
                self.users,
                self.batches,
                rng::derive_seed(seed, rng::Purpose::Corpus, &[]),
            )?,
        };
        log::info!("corpus: {} batches of {}x{}", corpus.len(), corpus.m(), corpus.n());
        Ok(corpus)
    }
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Stabilization constant added to every decoder weight (SPOF).
    #[arg(long, default_value_t = 2.5)]
    c: f64,
    #[arg(long, default_value_t = 0.01)]
    eta: f64,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    /// Latent units per user (l).
    #[arg(long, default_value_t = 7)]
    latent: usize,
    /// Gradient clipping threshold (DP-SGD).
    #[arg(long, default_value_t = 4.0)]
    clip: f64,
    /// Standard deviation of Gaussian input noise.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Use the literal expansion `α2(1+2c_j)` of the shifted loss instead of the exact one.
    #[arg(long)]
    paper_literal_shift: bool,
}

impl ModelArgs {
    fn config(&self, seed: u64) -> TrainConfig<f64> {
        TrainConfig {
            eta: self.eta,
            epsilon: None,
            clip: self.clip,
            c_scalar: self.c,
            latent: self.latent,
            epochs: self.epochs,
            env_sigma: self.sigma,
            seed,
            shift: if self.paper_literal_shift { ShiftConvention::PaperLiteral } else { ShiftConvention::Exact },
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "spof")]
    mechanism: Mechanism,
    /// Privacy budget; omit for a noise-free run.
    #[arg(long)]
    epsilon: Option<f64>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// Mechanisms to run (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "spof,dpsgd,fm,nonprivate")]
    mechanism: Vec<Mechanism>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_EPSILONS)]
    epsilon: Vec<f64>,
    /// Monte Carlo trials per (mechanism, ε).
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct SweepCArgs {
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_EPSILONS)]
    epsilon: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 0.0)]
    c_min: f64,
    #[arg(long, default_value_t = 2.5)]
    c_max: f64,
    #[arg(long, default_value_t = 0.25)]
    c_step: f64,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct EnvNoiseArgs {
    /// Input-noise standard deviations to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0])]
    sigma: Vec<f64>,
    /// Form the weighted noise variance as σ²‖w‖ rather than σ²‖w‖².
    #[arg(long)]
    paper_literal_variance: bool,
    /// Encoder activation the factors are evaluated at.
    #[arg(long, default_value_t = 0.0)]
    h: f64,
    #[arg(long, default_value_t = 7)]
    latent: usize,
    /// Samples per maximum (|D|).
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Monte Carlo draws for the CDF estimate.
    #[arg(long, default_value_t = 200_000)]
    mc: usize,
    /// Trials of the direct max simulation.
    #[arg(long, default_value_t = 20_000)]
    direct: usize,
    /// Also write b_max densities for these h values (needs --curves-out).
    #[arg(long, value_delimiter = ',')]
    curves_h: Vec<f64>,
    #[arg(long, requires = "curves_h")]
    curves_out: Option<PathBuf>,
    /// σ̃ for the density curves.
    #[arg(long, default_value_t = 1.0)]
    curves_sigma_tilde: f64,
}

#[derive(Args)]
struct SensitivityArgs {
    #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
    a_min: f64,
    #[arg(long, default_value_t = 5.0)]
    a_max: f64,
    #[arg(long, default_value_t = 0.01)]
    a_step: f64,
    #[arg(long, default_value_t = 4.0)]
    clip: f64,
    #[arg(long, default_value_t = 14)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    latent: usize,
    /// Shift c_j for the stabilized sensitivity.
    #[arg(long, default_value_t = 2.5)]
    c: f64,
    /// Input-noise factor b_j for the noisy sensitivities.
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    /// Gradient norm that selects the DP-SGD regime.
    #[arg(long, default_value_t = 1.0)]
    grad_norm: f64,
}

#[derive(Args)]
struct ComplexityArgs {
    #[arg(long, default_value_t = 14)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    latent: usize,
    /// Cost profile (amd-k7 or unit).
    #[arg(long, default_value = "amd-k7")]
    profile: String,
}

#[derive(Args)]
struct DpCheckArgs {
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 1_000_000)]
    trials: usize,
    #[arg(long, default_value_t = 14)]
    n: usize,
    #[arg(long, default_value_t = 2.5)]
    c: f64,
    /// Multiplies the calibrated sensitivity (values below 1 under-calibrate).
    #[arg(long, default_value_t = 1.0)]
    sensitivity_factor: f64,
    /// Allowed slack over ε for binning noise.
    #[arg(long, default_value_t = 0.05)]
    tolerance: f64,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Prints to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    match writeln!(io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn check_epsilons(eps: &[f64]) -> Result<()> {
    for &e in eps {
        PrivacyBudget::new(e)?;
    }
    Ok(())
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let corpus = a.data.load(cli.seed)?;
    let mut cfg = a.model.config(cli.seed);
    if a.mechanism.is_private() {
        cfg.epsilon = a.epsilon.map(PrivacyBudget::new).transpose()?;
    } else if a.epsilon.is_some() {
        log::warn!("--epsilon is ignored for the nonprivate baseline");
    }
    let out = train_once(a.mechanism, &corpus, &cfg)?;
    write_metrics_csv(&out.metrics, output(cli.out.as_deref())?)?;
    let summary = json!({
        "mechanism": a.mechanism.name(),
        "epsilon": cfg.epsilon.map(|e| e.epsilon()),
        "final_accuracy": out.metrics.last().map(|m| m.accuracy),
        "diverged": out.divergence,
        "counters": out.counters,
    });
    eprintln!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn compare(cli: &Cli, a: &CompareArgs) -> Result<()> {
    check_epsilons(&a.epsilon)?;
    let corpus = a.data.load(cli.seed)?;
    let mut rows = Vec::new();
    for &mechanism in &a.mechanism {
        let spec = ExperimentSpec {
            mechanism,
            epsilons: a.epsilon.clone(),
            env_sigma: a.model.sigma,
            mc_trials: a.trials,
            train: a.model.config(cli.seed),
        };
        let r = run_experiment(&spec, &corpus)?;
        for row in &r {
            eprintln!(
                "{:>10} ε={:<4} acc {:6.2} ± {:5.2}  diverged {}/{}",
                row.mechanism, row.epsilon, row.mean_acc, row.sd_acc, row.diverged, row.trials
            );
        }
        rows.extend(r);
    }
    write_results_csv(&rows, output(cli.out.as_deref())?)?;
    Ok(())
}

fn sweep(cli: &Cli, a: &SweepCArgs) -> Result<()> {
    check_epsilons(&a.epsilon)?;
    if !a.c_step.is_finite() || a.c_step <= 0.0 || a.c_max < a.c_min {
        bail!("c grid needs c_step > 0 and c_max >= c_min");
    }
    let corpus = a.data.load(cli.seed)?;
    let spec = ExperimentSpec {
        mechanism: Mechanism::Spof,
        epsilons: a.epsilon.clone(),
        env_sigma: a.model.sigma,
        mc_trials: a.trials,
        train: a.model.config(cli.seed),
    };
    let rows = sweep_c(&spec, &corpus, &c_grid(a.c_min, a.c_max, a.c_step))?;
    let curve = mean_curve(&rows);
    for (c, acc) in &curve {
        eprintln!("c={c:<5} mean accuracy over ε {acc:.2}");
    }
    if let Some(c) = plateau(&curve, PLATEAU_TOLERANCE) {
        eprintln!("plateau from c = {c}");
    }
    write_sweep_c_csv(&rows, output(cli.out.as_deref())?)?;
    Ok(())
}

fn env_noise(cli: &Cli, a: &EnvNoiseArgs) -> Result<()> {
    let template = SweepTemplate {
        l: a.latent,
        sample_count: a.samples,
        h: a.h,
        variance: if a.paper_literal_variance { VarianceConvention::PaperLiteral } else { VarianceConvention::Squared },
        mc_samples: a.mc,
        direct_trials: a.direct,
        ..SweepTemplate::default()
    };
    let weights = sweep_weights(&template, cli.seed);
    log::info!("weight row: {weights:?}");
    let rows = sweep_sigma(&a.sigma, &template, cli.seed)?;
    for r in &rows {
        eprintln!(
            "σ={:<6} σ̃={:<10.4} Pr[b_max ≤ 1]: trapezoid {:.3e}, direct {:.3e}",
            r.sigma, r.sigma_tilde, r.prob_trapezoid, r.prob_direct
        );
    }
    write_sweep_csv(&rows, output(cli.out.as_deref())?)?;
    if let Some(path) = &a.curves_out {
        let base = EnvNoiseProfile::with_sigma_tilde(a.curves_sigma_tilde, 0.0, a.latent, a.samples)?;
        let hi = 20.0 * a.latent as f64;
        let curves = bmax_curves(&a.curves_h, &base, hi, hi / 2000.0, a.mc, cli.seed)?;
        write_curves_csv(&curves, output(Some(path))?)?;
    }
    Ok(())
}

fn sensitivity_curve(cli: &Cli, a: &SensitivityArgs) -> Result<()> {
    if !a.a_step.is_finite() || a.a_step <= 0.0 || a.a_max < a.a_min {
        bail!("a grid needs a_step > 0 and a_max >= a_min");
    }
    let grid: Vec<f64> = uniform_grid(a.a_min, a.a_max, a.a_step);
    let curve = sensitivity::spof_per_term_curve(&grid)?;
    write_per_term_csv(&per_term_rows(&grid, a.clip), output(cli.out.as_deref())?)?;
    let report = SensitivityReport::compute(SensitivityConfig {
        n: a.n,
        l: a.latent,
        clip: a.clip,
        c_j: a.c,
        b_j: a.b,
        grad_norm: a.grad_norm,
    })?;
    eprintln!("{}", serde_json::to_string_pretty(&json!({ "report": report, "per_term_min": curve.min, "per_term_argmin": curve.argmin }))?);
    Ok(())
}

fn complexity(a: &ComplexityArgs) -> Result<()> {
    let costs = OpCosts::profile(&a.profile)?;
    let report = ComplexityReport::compute(a.n, a.latent, &a.profile)?;
    let summary = json!({
        "report": report,
        "costs": costs,
        "spof_items": spof_items(a.n, a.latent, &costs)?,
        "dpsgd_items": dpsgd_items(a.n, &costs)?,
    });
    emit(&serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

fn dp_check(cli: &Cli, a: &DpCheckArgs) -> Result<bool> {
    if a.n == 0 {
        bail!("n must be >= 1");
    }
    let budget = PrivacyBudget::new(a.epsilon)?;
    let query = |v: f64| -> Result<Vec<f64>> {
        let row = vec![v; a.n];
        let c = coeffs(row.as_slice().into())?;
        Ok(stabilize_with_shift(&c, a.c, ShiftConvention::PaperLiteral).query())
    };
    let (base, neighbor) = (query(0.0)?, query(1.0)?);
    let gap: f64 = base.iter().zip(&neighbor).map(|(x, y)| (x - y).abs()).sum();
    let calibrated = sensitivity::spof_sensitivity_hat(a.n, a.c)?;
    let used = calibrated * a.sensitivity_factor;
    let ratio = empirical_dp_ratio(&base, &neighbor, budget, used, a.trials, cli.seed)?;
    let ok = ratio <= a.epsilon * (1.0 + a.tolerance);
    let summary = json!({
        "epsilon": a.epsilon,
        "query_l1_gap": gap,
        "sensitivity": calibrated,
        "sensitivity_used": used,
        "trials": a.trials,
        "max_log_ratio": ratio,
        "within_bound": ok,
    });
    emit(&serde_json::to_string_pretty(&summary)?)?;
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => train(&cli, a).map(|_| true),
        Command::Compare(a) => compare(&cli, a).map(|_| true),
        Command::SweepC(a) => sweep(&cli, a).map(|_| true),
        Command::EnvNoise(a) => env_noise(&cli, a).map(|_| true),
        Command::SensitivityCurve(a) => sensitivity_curve(&cli, a).map(|_| true),
        Command::Complexity(a) => complexity(a).map(|_| true),
        Command::DpCheck(a) => dp_check(&cli, a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
