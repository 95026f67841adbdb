//! Data ingestion, synthetic corpora and Monte Carlo experiment orchestration.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::dp_mech::{Dataset, PrivacyBudget};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::trainers::{train_dpsgd, train_nonprivate, train_spof, EpochMetrics, OpCounters, TrainConfig, TrainOutcome};

/// Default ε grid.
pub const DEFAULT_EPSILONS: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];

/// Accuracy changes below this (absolute, in percent) count as a plateau.
pub const PLATEAU_TOLERANCE: f64 = 0.5;

/// Normalized training corpus: a sequence of m×n batches, one row per user.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub batches: Vec<Dataset<f64>>,
    /// Raw per-column maxima the entries were divided by (0 for all-zero columns).
    pub column_max: Vec<f64>,
}

impl Corpus {
    /// Groups the rows of `data` into `m`-row batches in order; a trailing
    /// remainder of fewer than `m` rows is dropped.
    pub fn from_rows(data: Array2<f64>, m: usize, column_max: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("users per batch must be >= 1".into()));
        }
        let (rows, n) = data.dim();
        let full = rows / m;
        if full == 0 {
            return Err(Error::Validation(format!("{rows} rows cannot fill a batch of {m} users")));
        }
        if rows % m != 0 {
            log::warn!("dropping {} trailing rows that do not fill a batch of {m}", rows % m);
        }
        let batches = data
            .slice(ndarray::s![..full * m, ..])
            .axis_chunks_iter(Axis(0), m)
            .map(|b| Dataset::new(b.to_owned()))
            .collect::<Result<_>>()?;
        debug_assert_eq!(column_max.len(), n);
        Ok(Self { batches, column_max })
    }

    pub fn m(&self) -> usize {
        self.batches[0].m()
    }

    pub fn n(&self) -> usize {
        self.batches[0].n()
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    /// The same rows regrouped as single-user batches.
    pub fn single_user(&self) -> Self {
        let batches = self
            .batches
            .iter()
            .flat_map(|b| b.rows().map(|r| Dataset::new(r.insert_axis(Axis(0)).to_owned()).expect("valid row")))
            .collect();
        Self { batches, column_max: self.column_max.clone() }
    }

    /// All rows stacked into one matrix.
    pub fn stacked(&self) -> Array2<f64> {
        let views: Vec<_> = self.batches.iter().map(|b| b.as_array().view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("batches share n")
    }
}

/// Divides every column by its maximum; all-zero columns are left alone.
pub fn normalize_columns(data: &mut Array2<f64>) -> Vec<f64> {
    data.axis_iter_mut(Axis(1))
        .enumerate()
        .map(|(k, mut col)| {
            let max = col.fold(0.0f64, |a, &v| a.max(v));
            if max > 0.0 {
                col.mapv_inplace(|v| v / max);
            } else {
                log::warn!("column {k} is all zeros; leaving it unnormalized");
            }
            max
        })
        .collect()
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok()
}

/// Reads a rectangular, non-negative numeric CSV. A first line with no numeric
/// cells is treated as a header.
pub fn ingest_reader<R: Read>(reader: R, m: usize, n_expected: Option<usize>, normalize: bool) -> Result<Corpus> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut values = Vec::new();
    let mut n = None;
    let mut rows = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse { row: i + 1, col: 0, msg: e.to_string() })?;
        if i == 0 && rec.iter().all(|c| parse_cell(c).is_none()) {
            continue;
        }
        let width = *n.get_or_insert(rec.len());
        if rec.len() != width {
            return Err(Error::Parse { row: i + 1, col: rec.len(), msg: format!("expected {width} columns") });
        }
        for (k, cell) in rec.iter().enumerate() {
            let v = parse_cell(cell).ok_or_else(|| Error::Parse {
                row: i + 1,
                col: k + 1,
                msg: format!("non-numeric cell {cell:?}"),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation(format!("row {}, column {}: value {v} is not finite and >= 0", i + 1, k + 1)));
            }
            values.push(v);
        }
        rows += 1;
    }
    let n = n.ok_or_else(|| Error::Validation("CSV contains no data rows".into()))?;
    if let Some(expected) = n_expected {
        if expected != n {
            return Err(Error::Shape { expected: format!("{expected} columns"), got: format!("{n} columns") });
        }
    }
    let mut data = Array2::from_shape_vec((rows, n), values).expect("rectangular by construction");
    let column_max = if normalize { normalize_columns(&mut data) } else { vec![1.0; n] };
    Corpus::from_rows(data, m, column_max)
}

pub fn ingest_csv(path: &Path, m: usize, n_expected: Option<usize>, normalize: bool) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, m, n_expected, normalize)
}

/// Positive-valued synthetic corpus loosely shaped like wearable sensor data:
/// three latent uniform factors mixed into `n` columns, each with its own scale
/// spanning four decades, half with uniform jitter and half with truncated
/// Gaussian jitter. Columns are max-normalized.
pub fn synth_corpus(n: usize, m: usize, batches: usize, seed: u64) -> Result<Corpus> {
    if n == 0 || m == 0 || batches == 0 {
        return Err(Error::Config(format!("synthetic corpus needs n, m, batches >= 1, got {n}, {m}, {batches}")));
    }
    const FACTORS: usize = 3;
    let rows = batches * m;
    let mut r = rng::stream(seed, Purpose::Corpus, &[]);
    let factors = Array2::from_shape_simple_fn((rows, FACTORS), || r.random::<f64>());
    let mut data = Array2::zeros((rows, n));
    for k in 0..n {
        let scale = 10f64.powf(4.0 * r.random::<f64>());
        let uniform_jitter = r.random_bool(0.5);
        let mut loading = Array1::from_shape_simple_fn(FACTORS, || r.random::<f64>());
        loading /= loading.sum();
        let base = factors.dot(&loading);
        let (lo, hi) = base.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        for (out, &b) in data.column_mut(k).iter_mut().zip(&base) {
            let b = (b - lo) / span;
            *out = scale
                * if uniform_jitter {
                    0.85 * b + 0.15 * r.random::<f64>()
                } else {
                    (b + 0.08 * r.sample::<f64, _>(StandardNormal)).max(0.0)
                };
        }
    }
    let column_max = normalize_columns(&mut data);
    Corpus::from_rows(data, m, column_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Spof,
    Dpsgd,
    /// Single-user SPOF without stabilization.
    Fm,
    Nonprivate,
}

impl Mechanism {
    pub const ALL: [Mechanism; 4] = [Mechanism::Spof, Mechanism::Dpsgd, Mechanism::Fm, Mechanism::Nonprivate];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Spof => "spof",
            Mechanism::Dpsgd => "dpsgd",
            Mechanism::Fm => "fm",
            Mechanism::Nonprivate => "nonprivate",
        }
    }

    pub fn is_private(self) -> bool {
        self != Mechanism::Nonprivate
    }

    /// Expected noise draws per user step.
    pub fn draws_per_user_step(self, n: usize) -> u64 {
        match self {
            Mechanism::Spof | Mechanism::Fm => 2 * n as u64,
            Mechanism::Dpsgd => n as u64,
            Mechanism::Nonprivate => 0,
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown mechanism {s:?}; expected spof, dpsgd, fm or nonprivate")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub mechanism: Mechanism,
    pub epsilons: Vec<f64>,
    pub env_sigma: f64,
    pub mc_trials: usize,
    /// `epsilon`, `env_sigma` and `seed` are overridden per run; `seed` is the root seed.
    pub train: TrainConfig<f64>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mc_trials == 0 {
            return Err(Error::Config("mc_trials must be >= 1".into()));
        }
        if self.epsilons.is_empty() {
            return Err(Error::Config("at least one epsilon is required".into()));
        }
        for &e in &self.epsilons {
            PrivacyBudget::new(e)?;
        }
        self.train.validate()
    }

    /// Trial `t`'s training config at budget `epsilon` (ignored for nonprivate).
    pub fn trial_config(&self, epsilon: f64, trial: usize) -> Result<TrainConfig<f64>> {
        let mut cfg = self.train;
        cfg.env_sigma = self.env_sigma;
        cfg.seed = rng::derive_seed(self.train.seed, Purpose::Trial, &[trial as u64]);
        cfg.epsilon = if self.mechanism.is_private() { Some(PrivacyBudget::new(epsilon)?) } else { None };
        if self.mechanism == Mechanism::Fm {
            cfg.c_scalar = 0.0;
        }
        Ok(cfg)
    }
}

/// Trains one run of `mechanism` on `corpus`.
pub fn train_once(mechanism: Mechanism, corpus: &Corpus, cfg: &TrainConfig<f64>) -> Result<TrainOutcome<f64>> {
    match mechanism {
        Mechanism::Spof => train_spof(&corpus.batches, cfg),
        Mechanism::Fm => train_spof(&corpus.single_user().batches, &TrainConfig { c_scalar: 0.0, ..*cfg }),
        Mechanism::Dpsgd => train_dpsgd(&corpus.batches, cfg),
        Mechanism::Nonprivate => train_nonprivate(&corpus.batches, cfg),
    }
}

/// Outcome of one Monte Carlo trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialResult {
    pub mechanism: Mechanism,
    pub epsilon: f64,
    pub trial: usize,
    pub accuracy: f64,
    pub diverged: bool,
    pub counters: OpCounters,
}

/// Aggregated row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub mechanism: Mechanism,
    pub epsilon: f64,
    pub sigma: f64,
    pub c: f64,
    pub trials: usize,
    pub mean_acc: f64,
    pub sd_acc: f64,
    pub noise_draws: u64,
    pub user_steps: u64,
    pub diverged: usize,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, var.sqrt())
}

fn final_accuracy(out: &TrainOutcome<f64>, mechanism: Mechanism, corpus: &Corpus) -> Result<f64> {
    match out.metrics.last() {
        Some(m) => Ok(m.accuracy),
        // Diverged in the first epoch: score the parameters at the abort.
        None => match mechanism {
            Mechanism::Fm => crate::da_model::corpus_accuracy(&out.params, &corpus.single_user().batches),
            _ => crate::da_model::corpus_accuracy(&out.params, &corpus.batches),
        },
    }
}

/// Runs every (ε, trial) pair; results are ordered by (ε, trial).
pub fn run_trials(spec: &ExperimentSpec, corpus: &Corpus) -> Result<Vec<TrialResult>> {
    spec.validate()?;
    let eps: Vec<f64> = if spec.mechanism.is_private() { spec.epsilons.clone() } else { vec![spec.epsilons[0]] };
    let jobs: Vec<(f64, usize)> = eps.iter().flat_map(|&e| (0..spec.mc_trials).map(move |t| (e, t))).collect();
    let mut results: Vec<TrialResult> = jobs
        .par_iter()
        .map(|&(epsilon, trial)| {
            let cfg = spec.trial_config(epsilon, trial)?;
            let out = train_once(spec.mechanism, corpus, &cfg)?;
            Ok(TrialResult {
                mechanism: spec.mechanism,
                epsilon,
                trial,
                accuracy: final_accuracy(&out, spec.mechanism, corpus)?,
                diverged: out.diverged(),
                counters: out.counters,
            })
        })
        .collect::<Result<_>>()?;
    if !spec.mechanism.is_private() {
        // One set of runs serves every ε.
        results = spec
            .epsilons
            .iter()
            .flat_map(|&e| results.iter().map(move |r| TrialResult { epsilon: e, ..*r }))
            .collect();
    }
    Ok(results)
}

pub fn aggregate(spec: &ExperimentSpec, trials: &[TrialResult]) -> Vec<ResultRow> {
    spec.epsilons
        .iter()
        .map(|&e| {
            let runs: Vec<&TrialResult> = trials.iter().filter(|r| r.epsilon == e).collect();
            let accs: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
            let (mean_acc, sd_acc) = mean_sd(&accs);
            ResultRow {
                mechanism: spec.mechanism,
                epsilon: e,
                sigma: spec.env_sigma,
                c: if spec.mechanism == Mechanism::Spof { spec.train.c_scalar } else { 0.0 },
                trials: runs.len(),
                mean_acc,
                sd_acc,
                noise_draws: runs.iter().map(|r| r.counters.noise_draws).sum(),
                user_steps: runs.iter().map(|r| r.counters.user_steps).sum(),
                diverged: runs.iter().filter(|r| r.diverged).count(),
            }
        })
        .collect()
}

/// One row per ε, aggregated over the Monte Carlo trials.
pub fn run_experiment(spec: &ExperimentSpec, corpus: &Corpus) -> Result<Vec<ResultRow>> {
    let trials = run_trials(spec, corpus)?;
    Ok(aggregate(spec, &trials))
}

fn write_serialized<W: Write, S: Serialize>(rows: &[S], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    write_serialized(rows, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepCRow {
    pub c: f64,
    pub epsilon: f64,
    pub mean_acc: f64,
    pub sd_acc: f64,
    pub diverged: usize,
}

/// Inclusive grid from `lo` to `hi` in steps of `step`.
pub fn c_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let k = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=k).map(|i| lo + i as f64 * step).collect()
}

/// Mean SPOF accuracy for each stabilization constant in `grid`, at every ε of `spec`.
pub fn sweep_c(spec: &ExperimentSpec, corpus: &Corpus, grid: &[f64]) -> Result<Vec<SweepCRow>> {
    if spec.mechanism != Mechanism::Spof {
        return Err(Error::Config(format!("the c sweep applies to spof, not {}", spec.mechanism)));
    }
    if grid.is_empty() || grid.iter().any(|c| !(*c >= 0.0)) {
        return Err(Error::Config("c grid must be non-empty and non-negative".into()));
    }
    let mut rows = Vec::new();
    for &c in grid {
        let s = ExperimentSpec { train: TrainConfig { c_scalar: c, ..spec.train }, ..spec.clone() };
        rows.extend(run_experiment(&s, corpus)?.into_iter().map(|r| SweepCRow {
            c,
            epsilon: r.epsilon,
            mean_acc: r.mean_acc,
            sd_acc: r.sd_acc,
            diverged: r.diverged,
        }));
    }
    Ok(rows)
}

/// Smallest `c` after which every step along the (c-sorted) curve changes
/// accuracy by less than `tolerance`; the last `c` when none does.
pub fn plateau(curve: &[(f64, f64)], tolerance: f64) -> Option<f64> {
    let last = curve.len().checked_sub(1)?;
    let mut k = last;
    while k > 0 && (curve[k].1 - curve[k - 1].1).abs() < tolerance {
        k -= 1;
    }
    Some(curve[k].0)
}

/// Accuracy averaged over ε for each c, in grid order.
pub fn mean_curve(rows: &[SweepCRow]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64, usize)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(c, _, _)| *c == r.c) {
            Some(e) => {
                e.1 += r.mean_acc;
                e.2 += 1;
            }
            None => out.push((r.c, r.mean_acc, 1)),
        }
    }
    out.into_iter().map(|(c, s, k)| (c, s / k as f64)).collect()
}

pub fn write_sweep_c_csv<W: Write>(rows: &[SweepCRow], out: W) -> Result<()> {
    write_serialized(rows, out)
}

#[derive(Serialize)]
struct MetricsRow {
    epoch: usize,
    objective: f64,
    exact_loss: f64,
    accuracy: f64,
    noise_draws: u64,
    user_steps: u64,
}

/// Per-epoch training metrics, one row per completed epoch.
pub fn write_metrics_csv<W: Write>(metrics: &[EpochMetrics<f64>], out: W) -> Result<()> {
    let rows: Vec<MetricsRow> = metrics
        .iter()
        .map(|m| MetricsRow {
            epoch: m.epoch,
            objective: m.objective,
            exact_loss: m.exact_loss,
            accuracy: m.accuracy,
            noise_draws: m.counters.noise_draws,
            user_steps: m.counters.user_steps,
        })
        .collect();
    write_serialized(&rows, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ingest_normalizes_columns() {
        let csv = "a,b,c\n2,0,1\n4,0,3\n8,0,2\n1,0,1\n";
        let c = ingest_reader(csv.as_bytes(), 2, Some(3), true).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.column_max, vec![8.0, 0.0, 3.0]);
        assert_eq!(c.batches[0].as_array(), &array![[0.25, 0.0, 1.0 / 3.0], [0.5, 0.0, 1.0]]);
        assert_eq!(c.batches[1].row(0).unwrap()[0], 1.0);
    }

    #[test]
    fn ingest_errors() {
        match ingest_reader("1,2\n3,x\n".as_bytes(), 1, None, true) {
            Err(Error::Parse { row: 2, col: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(ingest_reader("1,-2\n".as_bytes(), 1, None, true), Err(Error::Validation(_))));
        assert!(matches!(ingest_reader("1,2\n".as_bytes(), 1, Some(3), true), Err(Error::Shape { .. })));
        assert!(ingest_reader("1,2\n3\n".as_bytes(), 1, None, true).is_err());
    }

    #[test]
    fn synthetic_corpus_properties() {
        let a = synth_corpus(14, 2, 300, 1).unwrap();
        assert_eq!((a.len(), a.m(), a.n()), (300, 2, 14));
        let all = a.stacked();
        assert!(all.iter().all(|v| (0.0..=1.0).contains(v)));
        for col in all.axis_iter(Axis(1)) {
            assert_eq!(col.fold(0.0f64, |m, &v| m.max(v)), 1.0);
        }
        assert_eq!(a, synth_corpus(14, 2, 300, 1).unwrap());
        assert_ne!(a, synth_corpus(14, 2, 300, 2).unwrap());
    }

    #[test]
    fn single_user_regrouping() {
        let c = synth_corpus(4, 3, 5, 3).unwrap();
        let s = c.single_user();
        assert_eq!((s.len(), s.m()), (15, 1));
        assert_eq!(s.stacked(), c.stacked());
    }

    #[test]
    fn plateau_detection() {
        assert_eq!(plateau(&[(0.0, 50.0)], 0.5), Some(0.0));
        assert_eq!(plateau(&[(0.0, 50.0), (1.0, 60.0), (2.0, 60.2), (3.0, 60.1)], 0.5), Some(1.0));
        assert_eq!(plateau(&[(0.0, 50.0), (1.0, 60.0), (2.0, 70.0)], 0.5), Some(2.0));
        assert_eq!(plateau(&[], 0.5), None);
        assert_eq!(c_grid(0.0, 2.5, 0.25).len(), 11);
    }

    #[test]
    fn experiment_rows_and_determinism() {
        let corpus = synth_corpus(6, 2, 40, 4).unwrap();
        let spec = ExperimentSpec {
            mechanism: Mechanism::Dpsgd,
            epsilons: vec![1.0, 4.0],
            env_sigma: 0.0,
            mc_trials: 3,
            train: TrainConfig { latent: 3, ..Default::default() },
        };
        let rows = run_experiment(&spec, &corpus).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows, run_experiment(&spec, &corpus).unwrap());
        for r in &rows {
            assert!((0.0..=100.0).contains(&r.mean_acc));
            assert_eq!(r.noise_draws, 6 * r.user_steps);
        }
        let np = run_experiment(&ExperimentSpec { mechanism: Mechanism::Nonprivate, ..spec.clone() }, &corpus).unwrap();
        assert_eq!(np.len(), 2);
        assert_eq!(np[0].mean_acc, np[1].mean_acc);
        let mut out = Vec::new();
        write_results_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("mechanism,epsilon,sigma,c,trials,mean_acc,sd_acc,noise_draws,user_steps,diverged\n"));
        assert!(text.contains("\ndpsgd,1.0,"));
    }

    #[test]
    fn fm_equals_single_user_spof() {
        let corpus = synth_corpus(5, 2, 30, 5).unwrap();
        let spec = ExperimentSpec {
            mechanism: Mechanism::Fm,
            epsilons: vec![2.0],
            env_sigma: 0.0,
            mc_trials: 2,
            train: TrainConfig { latent: 2, c_scalar: 1.5, ..Default::default() },
        };
        let fm = run_trials(&spec, &corpus).unwrap();
        let single = corpus.single_user();
        let spof = run_trials(
            &ExperimentSpec {
                mechanism: Mechanism::Spof,
                train: TrainConfig { c_scalar: 0.0, ..spec.train },
                ..spec.clone()
            },
            &single,
        )
        .unwrap();
        for (a, b) in fm.iter().zip(&spof) {
            assert_eq!(a.accuracy.to_bits(), b.accuracy.to_bits());
            assert_eq!(a.counters, b.counters);
        }
    }

    #[test]
    fn sweep_c_rows() {
        let corpus = synth_corpus(5, 2, 20, 6).unwrap();
        let spec = ExperimentSpec {
            mechanism: Mechanism::Spof,
            epsilons: vec![1.0],
            env_sigma: 0.0,
            mc_trials: 2,
            train: TrainConfig { latent: 2, ..Default::default() },
        };
        let rows = sweep_c(&spec, &corpus, &[0.0, 0.5]).unwrap();
        assert_eq!(rows.len(), 2);
        let plain = run_experiment(&spec, &corpus).unwrap();
        assert_eq!(rows[0].mean_acc, plain[0].mean_acc);
        assert_eq!(sweep_c(&spec, &corpus, &[1.0]).unwrap().len(), 1);
        assert!(sweep_c(&ExperimentSpec { mechanism: Mechanism::Dpsgd, ..spec }, &corpus, &[0.0]).is_err());
    }
}
