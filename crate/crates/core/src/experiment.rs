//! Monte Carlo orchestration behind the `ctkrm` command line tool: data
//! banks on disk, per-trial estimation, FIT evaluation and the kernel
//! validation sweep.
//!
//! Layout of a data bank directory:
//!
//! ```text
//! manifest.json            bank definition, seed, per-trial seeds
//! trial_0000/train.csv     `# ts=… intersample=zoh past=unknown` then columns u,y
//! trial_0000/validation.csv columns u,y0 from t = 0; the last `horizon` rows are scored
//! trial_0000/truth.json    transfer function, state space, σ², seeds
//! ```
//!
//! An estimate directory holds `config.json` and per trial `hyperparams.json`,
//! `g_hat.csv`, `y_hat.csv`, `coefficients.json`, `traces.csv` (verbose) or
//! `error.json`; `evaluate` adds `fits.csv` and `summary.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{build_declared, Combo};
use crate::error::{Error, Result};
use crate::estimator::fit_with_transient;
use crate::hyperopt::{optimize, HyperParams, OptimizerSettings, StartTrace};
use crate::kernels::{oracle, DcKernel, ImpulseKernel};
use crate::metrics::{fit_g, fit_y, FitReport, TrialFit};
use crate::signals::{Intersample, PastBehavior, SampledSignal};
use crate::simulator::{make_databank, CtTransferFunction, DataBankSpec, StateSpace, Trial, TrialSeeds};

pub const FORMAT_VERSION: u32 = 1;

/// Impulse-response evaluation grid `step, 2·step, …, end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub step: f64,
    pub end: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { step: 0.0002, end: 10.0 }
    }
}

impl GridSpec {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step > 0.0 && self.end >= self.step && self.step.is_finite() && self.end.is_finite()) {
            return Err(Error::Config(format!("bad grid step {} end {}", self.step, self.end)));
        }
        let count = (self.end / self.step + 1e-9).floor() as usize;
        Ok((1..=count).map(|k| k as f64 * self.step).collect())
    }
}

/// One JSON document describing a run; stored beside its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Bank to generate; `None` means the D1 preset.
    pub bank: Option<DataBankSpec>,
    pub seed: u64,
    /// Override of the training input's declared behavior.
    pub combo: Option<Combo>,
    pub optimizer: OptimizerSettings,
    pub grid: GridSpec,
    /// Worker threads for trials; `None` uses the rayon default.
    pub jobs: Option<usize>,
    pub verbose: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            bank: None,
            seed: 0,
            combo: None,
            optimizer: OptimizerSettings::default(),
            grid: GridSpec::default(),
            jobs: None,
            verbose: false,
        }
    }
}

impl ExperimentConfig {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(fs::File::open(path)?))?)
    }

    pub fn bank(&self) -> DataBankSpec {
        self.bank.clone().unwrap_or_else(DataBankSpec::d1)
    }
}

fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(fs::File::open(path)?))?)
}

fn in_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::Config("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// A sampled input with aligned data columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub input: SampledSignal,
    pub columns: BTreeMap<String, Vec<f64>>,
    pub meta: BTreeMap<String, String>,
}

/// Write `# ts=… intersample=… past=… [key=value…]`, then `u,<names…>`.
pub fn write_record(
    path: impl AsRef<Path>,
    u: &SampledSignal,
    meta: &[(&str, String)],
    columns: &[(&str, &[f64])],
) -> Result<()> {
    for (name, col) in columns {
        if col.len() != u.len() {
            return Err(Error::Dimension(format!("column {name} has {} rows, input has {}", col.len(), u.len())));
        }
    }
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write!(f, "# ts={} intersample={} past={}", u.ts(), u.intersample(), u.past())?;
    for (k, v) in meta {
        write!(f, " {k}={v}")?;
    }
    writeln!(f)?;
    write!(f, "u")?;
    for (name, _) in columns {
        write!(f, ",{name}")?;
    }
    writeln!(f)?;
    for (i, x) in u.samples().iter().enumerate() {
        write!(f, "{x:e}")?;
        for (_, col) in columns {
            write!(f, ",{:e}", col[i])?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_record(path: impl AsRef<Path>) -> Result<Record> {
    let path = path.as_ref();
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let comment = first
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::InvalidSignal(format!("{}: missing header comment", path.display())))?;
    let mut meta: BTreeMap<String, String> = comment
        .split_whitespace()
        .filter_map(|f| f.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let take = |meta: &mut BTreeMap<String, String>, key: &str| {
        meta.remove(key)
            .ok_or_else(|| Error::InvalidSignal(format!("{}: header lacks `{key}=`", path.display())))
    };
    let ts: f64 = take(&mut meta, "ts")?
        .parse()
        .map_err(|e| Error::InvalidSignal(format!("{}: bad ts: {e}", path.display())))?;
    let intersample: Intersample = take(&mut meta, "intersample")?.parse()?;
    let past: PastBehavior = take(&mut meta, "past")?.parse()?;
    let mut rest = String::new();
    reader.read_to_string(&mut rest)?;
    let mut csv = csv::Reader::from_reader(rest.as_bytes());
    let names: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
    if names.first().map(String::as_str) != Some("u") {
        return Err(Error::InvalidSignal(format!("{}: first column must be `u`", path.display())));
    }
    let mut cols = vec![Vec::new(); names.len()];
    for row in csv.records() {
        let row = row?;
        for (col, field) in cols.iter_mut().zip(row.iter()) {
            col.push(field.trim().parse::<f64>().map_err(|e| {
                Error::InvalidSignal(format!("{}: bad number `{field}`: {e}", path.display()))
            })?);
        }
    }
    let mut cols = cols.into_iter();
    let input = SampledSignal::new(cols.next().unwrap_or_default(), ts, intersample, past)?;
    Ok(Record { input, columns: names.into_iter().skip(1).zip(cols).collect(), meta })
}

fn column(rec: &Record, name: &str, path: &Path) -> Result<Vec<f64>> {
    rec.columns
        .get(name)
        .cloned()
        .ok_or_else(|| Error::InvalidSignal(format!("{}: missing column `{name}`", path.display())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestTrial {
    pub index: usize,
    pub dir: String,
    pub seeds: TrialSeeds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub bank: DataBankSpec,
    pub seed: u64,
    pub trials: Vec<ManifestTrial>,
}

impl Manifest {
    pub fn read(data_dir: impl AsRef<Path>) -> Result<Self> {
        let m: Manifest = read_json(data_dir.as_ref().join("manifest.json"))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported data bank format {}", m.format_version)));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceJson {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: f64,
}

impl From<&StateSpace> for StateSpaceJson {
    fn from(ss: &StateSpace) -> Self {
        Self {
            a: (0..ss.order()).map(|i| ss.a.row(i).iter().copied().collect()).collect(),
            b: ss.b.iter().copied().collect(),
            c: ss.c.iter().copied().collect(),
            d: ss.d,
        }
    }
}

impl StateSpaceJson {
    pub fn to_state_space(&self) -> Result<StateSpace> {
        let n = self.a.len();
        if self.a.iter().any(|r| r.len() != n) || self.b.len() != n || self.c.len() != n {
            return Err(Error::Dimension("state-space matrices have inconsistent sizes".into()));
        }
        Ok(StateSpace {
            a: nalgebra::DMatrix::from_fn(n, n, |i, j| self.a[i][j]),
            b: nalgebra::DVector::from_column_slice(&self.b),
            c: nalgebra::DVector::from_column_slice(&self.c),
            d: self.d,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub format_version: u32,
    pub system: CtTransferFunction,
    pub state_space: StateSpaceJson,
    pub sigma2: f64,
    pub seeds: TrialSeeds,
    pub horizon: usize,
}

/// A trial read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredTrial {
    pub index: usize,
    pub train_u: SampledSignal,
    pub train_y: Vec<f64>,
    pub validation_u: SampledSignal,
    pub validation_y0: Vec<f64>,
    pub truth: Truth,
}

impl StoredTrial {
    pub fn validation_window(&self) -> &[f64] {
        &self.validation_y0[self.validation_y0.len() - self.truth.horizon..]
    }
}

pub fn trial_dir_name(index: usize) -> String {
    format!("trial_{index:04}")
}

pub fn write_trial(dir: impl AsRef<Path>, trial: &Trial, system: &CtTransferFunction) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_record(
        dir.join("train.csv"),
        &trial.train_u,
        &[],
        &[("y", &trial.train_y)],
    )?;
    write_record(
        dir.join("validation.csv"),
        &trial.validation_u,
        &[("horizon", trial.horizon.to_string())],
        &[("y0", &trial.validation_y0)],
    )?;
    let truth = Truth {
        format_version: FORMAT_VERSION,
        system: system.clone(),
        state_space: (&system.to_state_space()?).into(),
        sigma2: trial.sigma2,
        seeds: trial.seeds,
        horizon: trial.horizon,
    };
    write_json(dir.join("truth.json"), &truth)
}

pub fn read_trial(dir: impl AsRef<Path>, index: usize) -> Result<StoredTrial> {
    let dir = dir.as_ref();
    let train_path = dir.join("train.csv");
    let train = read_record(&train_path)?;
    let val_path = dir.join("validation.csv");
    let val = read_record(&val_path)?;
    let truth: Truth = read_json(dir.join("truth.json"))?;
    let validation_y0 = column(&val, "y0", &val_path)?;
    if truth.horizon == 0 || truth.horizon > validation_y0.len() {
        return Err(Error::Config(format!("{}: horizon {} out of range", dir.display(), truth.horizon)));
    }
    Ok(StoredTrial {
        index,
        train_y: column(&train, "y", &train_path)?,
        train_u: train.input,
        validation_u: val.input,
        validation_y0,
        truth,
    })
}

/// Simulate the bank and write it under `out`; returns the manifest.
pub fn cmd_generate(bank: &DataBankSpec, seed: u64, jobs: Option<usize>, out: impl AsRef<Path>) -> Result<Manifest> {
    let out = out.as_ref();
    bank.validate()?;
    let trials = in_pool(jobs, || make_databank(bank, seed))??;
    fs::create_dir_all(out)?;
    in_pool(jobs, || {
        trials
            .par_iter()
            .map(|t| write_trial(out.join(trial_dir_name(t.index)), t, &bank.system))
            .collect::<Result<Vec<()>>>()
    })??;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        bank: bank.clone(),
        seed,
        trials: trials
            .iter()
            .map(|t| ManifestTrial { index: t.index, dir: trial_dir_name(t.index), seeds: t.seeds })
            .collect(),
    };
    write_json(out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Everything one estimation run produces for a trial.
#[derive(Clone, Debug)]
pub struct TrialEstimate {
    pub hyperparams: HyperParams,
    pub objective: f64,
    pub combo: Combo,
    pub coeffs: Vec<f64>,
    pub grid: Vec<f64>,
    pub g_hat: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub traces: Vec<StartTrace>,
}

/// Relabel the training input with the requested behavior.
pub fn apply_combo(u: &SampledSignal, combo: Option<Combo>) -> Result<SampledSignal> {
    match combo {
        None => Ok(u.clone()),
        Some(Combo::ZohZa) if u.intersample() == Intersample::Zoh && u.past() == PastBehavior::Unknown => {
            Ok(u.clone())
        }
        Some(c) => SampledSignal::new(u.samples().to_vec(), u.ts(), c.intersample(), c.past()),
    }
}

/// Tune, fit, evaluate `ĝ` on the grid and predict the last `horizon`
/// samples of the validation output.
pub fn estimate_trial(
    train_u: &SampledSignal,
    train_y: &[f64],
    validation_u: &SampledSignal,
    horizon: usize,
    config: &ExperimentConfig,
) -> Result<TrialEstimate> {
    if train_u.is_zero() {
        return Err(Error::Unidentifiable("training input is identically zero".into()));
    }
    let u = apply_combo(train_u, config.combo)?;
    let combo = Combo::of(&u)?;
    let opt = optimize(&u, train_y, &config.optimizer)?;
    let hp = opt.best;
    let est = fit_with_transient(build_declared(&u, hp.kernel()?)?, &hp.transient()?, train_y, hp.sigma2)?;
    let grid = config.grid.points()?;
    let g_hat = est.eval_impulse(&grid)?;
    let y_hat = est.predict_output(validation_u, horizon)?;
    Ok(TrialEstimate {
        hyperparams: hp,
        objective: opt.objective,
        combo,
        coeffs: est.coeffs().to_vec(),
        grid,
        g_hat,
        y_hat,
        traces: opt.starts,
    })
}

#[derive(Serialize, Deserialize)]
struct HyperparamsFile {
    hyperparams: HyperParams,
    objective: f64,
    combo: Combo,
    transient: bool,
}

#[derive(Serialize, Deserialize)]
struct CoefficientsFile {
    combo: Combo,
    ts: f64,
    gamma: f64,
    coefficients: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ErrorFile {
    trial: usize,
    error: String,
}

fn write_two_columns(path: &Path, names: (&str, &str), a: &[f64], b: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "{},{}", names.0, names.1)?;
    for (x, y) in a.iter().zip(b) {
        writeln!(f, "{x:e},{y:e}")?;
    }
    f.flush()?;
    Ok(())
}

fn read_two_columns(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for row in r.deserialize::<(f64, f64)>() {
        let (x, y) = row?;
        a.push(x);
        b.push(y);
    }
    Ok((a, b))
}

fn write_estimate(dir: &Path, trial: &StoredTrial, est: &TrialEstimate, config: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let _ = fs::remove_file(dir.join("error.json"));
    write_json(
        dir.join("hyperparams.json"),
        &HyperparamsFile {
            hyperparams: est.hyperparams,
            objective: est.objective,
            combo: est.combo,
            transient: config.optimizer.transient,
        },
    )?;
    write_json(
        dir.join("coefficients.json"),
        &CoefficientsFile {
            combo: est.combo,
            ts: trial.train_u.ts(),
            gamma: est.hyperparams.sigma2,
            coefficients: est.coeffs.clone(),
        },
    )?;
    write_two_columns(&dir.join("g_hat.csv"), ("tau", "g_hat"), &est.grid, &est.g_hat)?;
    let first = trial.validation_u.len() - est.y_hat.len();
    let k: Vec<f64> = (first..trial.validation_u.len()).map(|k| k as f64).collect();
    write_two_columns(&dir.join("y_hat.csv"), ("k", "y_hat"), &k, &est.y_hat)?;
    let traces = dir.join("traces.csv");
    if config.verbose {
        let mut f = std::io::BufWriter::new(fs::File::create(traces)?);
        writeln!(f, "start,iteration,evaluations,objective")?;
        for t in &est.traces {
            for (i, (evals, obj)) in t.history.iter().enumerate() {
                writeln!(f, "{},{i},{evals},{obj:e}", t.start)?;
            }
        }
        f.flush()?;
    } else {
        let _ = fs::remove_file(traces);
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub succeeded: Vec<usize>,
    pub failed: Vec<(usize, String)>,
}

/// Estimate every trial of the bank in `data_dir`; per-trial failures are
/// written as `error.json` and never abort the run.
pub fn cmd_estimate(
    data_dir: impl AsRef<Path>,
    out: impl AsRef<Path>,
    config: &ExperimentConfig,
    trials: Option<usize>,
) -> Result<EstimateSummary> {
    let (data_dir, out) = (data_dir.as_ref(), out.as_ref());
    let manifest = Manifest::read(data_dir)?;
    fs::create_dir_all(out)?;
    write_json(out.join("config.json"), config)?;
    let selected: Vec<&ManifestTrial> = manifest.trials.iter().take(trials.unwrap_or(usize::MAX)).collect();
    let outcomes: Vec<(usize, Result<()>)> = in_pool(config.jobs, || {
        selected
            .par_iter()
            .map(|mt| {
                let dir = out.join(&mt.dir);
                let started = Instant::now();
                let result = read_trial(data_dir.join(&mt.dir), mt.index).and_then(|t| {
                    let est = estimate_trial(&t.train_u, &t.train_y, &t.validation_u, t.truth.horizon, config)?;
                    write_estimate(&dir, &t, &est, config)
                });
                match &result {
                    Ok(()) => log::info!("trial {} done in {:.1?}", mt.index, started.elapsed()),
                    Err(e) => log::warn!("trial {} failed: {e}", mt.index),
                }
                (mt.index, result)
            })
            .collect()
    })?;
    let mut summary = EstimateSummary::default();
    for (index, result) in outcomes {
        match result {
            Ok(()) => summary.succeeded.push(index),
            Err(e) => {
                let dir = out.join(trial_dir_name(index));
                fs::create_dir_all(&dir)?;
                for stale in ["hyperparams.json", "coefficients.json", "g_hat.csv", "y_hat.csv", "traces.csv"] {
                    let _ = fs::remove_file(dir.join(stale));
                }
                write_json(dir.join("error.json"), &ErrorFile { trial: index, error: e.to_string() })?;
                summary.failed.push((index, e.to_string()));
            }
        }
    }
    Ok(summary)
}

/// Score a single trial's estimate against its truth.
pub fn score_trial(trial: &StoredTrial, grid: &[f64], g_hat: &[f64], y_hat: &[f64]) -> Result<TrialFit> {
    let g0 = trial.truth.state_space.to_state_space()?.impulse_response(grid)?;
    Ok(TrialFit { trial: trial.index, fit_g: fit_g(g_hat, &g0)?, fit_y: fit_y(y_hat, trial.validation_window())? })
}

/// FIT per trial plus summary, written as `fits.csv` and `summary.json`
/// in the estimate directory.
pub fn cmd_evaluate(data_dir: impl AsRef<Path>, est_dir: impl AsRef<Path>) -> Result<FitReport> {
    let (data_dir, est_dir) = (data_dir.as_ref(), est_dir.as_ref());
    let manifest = Manifest::read(data_dir)?;
    if !est_dir.is_dir() {
        return Err(Error::Config(format!("estimate directory {} does not exist", est_dir.display())));
    }
    let mut report = FitReport::default();
    let mut truth_cache: Option<(StateSpaceJson, Vec<f64>, Vec<f64>)> = None;
    for mt in &manifest.trials {
        let dir = est_dir.join(&mt.dir);
        if !dir.join("g_hat.csv").is_file() || !dir.join("y_hat.csv").is_file() {
            report.missing.push(mt.index);
            continue;
        }
        let trial = read_trial(data_dir.join(&mt.dir), mt.index)?;
        let (grid, g_hat) = read_two_columns(&dir.join("g_hat.csv"))?;
        let (_, y_hat) = read_two_columns(&dir.join("y_hat.csv"))?;
        let g0 = match &truth_cache {
            Some((ss, cached_grid, g0)) if *ss == trial.truth.state_space && *cached_grid == grid => g0.clone(),
            _ => {
                let g0 = trial.truth.state_space.to_state_space()?.impulse_response(&grid)?;
                truth_cache = Some((trial.truth.state_space.clone(), grid.clone(), g0.clone()));
                g0
            }
        };
        report.push(TrialFit { trial: mt.index, fit_g: fit_g(&g_hat, &g0)?, fit_y: fit_y(&y_hat, trial.validation_window())? });
    }
    if report.trials.is_empty() {
        return Err(Error::Config(format!("no estimates found in {}", est_dir.display())));
    }
    report.write_csv(est_dir.join("fits.csv"))?;
    report.write_summary_json(est_dir.join("summary.json"))?;
    Ok(report)
}

/// Settings of the closed-form versus oracle sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSettings {
    pub draws: usize,
    pub seed: u64,
    /// Restrict to the quantities one input combination uses.
    pub combo: Option<Combo>,
    pub tolerance: f64,
    /// Relative perturbation applied to `λ₁` before the constants check;
    /// a mutation canary that must make the sweep fail.
    pub perturb_lambda1: f64,
}

impl Default for ValidateSettings {
    fn default() -> Self {
        Self { draws: 100, seed: 0, combo: None, tolerance: 1e-6, perturb_lambda1: 0.0 }
    }
}

/// Worst relative error of one closed form over the sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelCheck {
    pub name: String,
    pub checks: usize,
    pub worst_rel_error: f64,
    pub worst_case: String,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub settings: ValidateSettings,
    pub checks: Vec<KernelCheck>,
    pub pass: bool,
    pub elapsed_seconds: f64,
}

/// The DC kernel seen through its pointwise value only, so every integral
/// falls back to quadrature or truncated series.
struct Pointwise<'a>(&'a DcKernel);

impl ImpulseKernel for Pointwise<'_> {
    fn value(&self, tau: f64, tau2: f64) -> f64 {
        self.0.value(tau, tau2)
    }

    fn envelope_rate(&self) -> f64 {
        self.0.envelope_rate()
    }

    fn envelope_scale(&self) -> f64 {
        self.0.envelope_scale()
    }
}

#[derive(Default)]
struct Tally {
    checks: BTreeMap<&'static str, KernelCheck>,
}

impl Tally {
    fn record(&mut self, name: &'static str, closed: Complex64, oracle: Complex64, case: impl FnOnce() -> String) {
        let err = (closed - oracle).norm();
        let rel = if oracle.norm() > 0.0 { err / oracle.norm() } else { err };
        let rel = if rel.is_nan() { f64::INFINITY } else { rel };
        let entry = self.checks.entry(name).or_insert_with(|| KernelCheck {
            name: name.to_string(),
            checks: 0,
            worst_rel_error: 0.0,
            worst_case: String::new(),
            pass: true,
        });
        entry.checks += 1;
        if rel > entry.worst_rel_error || entry.checks == 1 {
            entry.worst_rel_error = rel;
            entry.worst_case = case();
        }
    }

    fn real(&mut self, name: &'static str, closed: f64, oracle: f64, case: impl FnOnce() -> String) {
        self.record(name, Complex64::new(closed, 0.0), Complex64::new(oracle, 0.0), case);
    }
}

fn log_uniform(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Compare every closed form against its quadrature or series oracle on
/// random admissible draws.
pub fn cmd_validate_kernels(settings: &ValidateSettings) -> Result<ValidationReport> {
    let started = Instant::now();
    let wants = |c: Combo| settings.combo.is_none_or(|x| x == c);
    let mut rng = ChaCha20Rng::seed_from_u64(settings.seed);
    let mut tally = Tally::default();
    for draw in 0..settings.draws {
        let alpha = log_uniform(&mut rng, 0.3, 3.0);
        let beta = alpha * rng.random_range(0.0..0.99);
        let lambda = log_uniform(&mut rng, 0.1, 10.0);
        let n = rng.random_range(2..=8usize);
        // Keep αP ≥ 2 so the truncated periodic series stay short.
        let ts = log_uniform(&mut rng, 0.02, 0.5).max(2.0 / (alpha * n as f64));
        let period = n as f64 * ts;
        let k = DcKernel::new(alpha, beta, lambda)?;
        let p = Pointwise(&k);
        let s = rng.random_range(1..=n);
        let s2 = rng.random_range(1..=n);
        let tau = rng.random_range(0.0..3.0 / alpha);
        let tau_p = rng.random_range(0.0..period);
        let tau2_p = rng.random_range(0.0..period);
        let case = |what: &str| format!("draw {draw}: alpha={alpha:.4} beta={beta:.4} lambda={lambda:.4} ts={ts:.4} n={n} {what}");
        if wants(Combo::ZohZa) || wants(Combo::ZohPa) {
            let far = rng.random_range(1..=3 * n);
            tally.real("kappa_gd", k.kappa_gd(ts, far, s2)?, oracle::cell(&p, ts, far, s2)?, || {
                case(&format!("s={far} s2={s2}"))
            });
            tally.real("kappa_ggd", k.kappa_ggd(ts, tau, s2)?, oracle::line_cell(&p, ts, tau, s2)?, || {
                case(&format!("tau={tau:.4} s2={s2}"))
            });
            let mut c = k.derived_constants(ts, n)?;
            c.lambda1 *= 1.0 + settings.perturb_lambda1;
            let (a, b) = if s == s2 { (s, s % n + 1) } else { (s, s2) };
            tally.real("lambda_constants", c.cell(&k, ts, a, b), oracle::cell(&p, ts, a, b)?, || {
                case(&format!("s={a} s2={b}"))
            });
            tally.real("lambda_constants", c.cell(&k, ts, s, s), oracle::cell(&p, ts, s, s)?, || {
                case(&format!("s=s2={s}"))
            });
        }
        if wants(Combo::ZohPa) {
            tally.real(
                "kappa_gp",
                k.kappa_gp(period, tau_p, tau2_p)?,
                oracle::series_periodic(&p, period, tau_p, tau2_p)?,
                || case(&format!("tau={tau_p:.4} tau2={tau2_p:.4}")),
            );
            tally.real(
                "kappa_ggp",
                k.kappa_ggp(period, tau, tau2_p)?,
                oracle::series_line_periodic(&p, period, tau, tau2_p)?,
                || case(&format!("tau={tau:.4} tau2={tau2_p:.4}")),
            );
            tally.real(
                "kappa_gdp",
                k.kappa_gdp(ts, n, s, s2)?,
                oracle::series_cell_periodic(&p, ts, n, s, s2)?,
                || case(&format!("s={s} s2={s2}")),
            );
            tally.real(
                "kappa_ggdp",
                k.kappa_ggdp(ts, n, tau, s2)?,
                oracle::series_line_cell_periodic(&p, ts, n, tau, s2)?,
                || case(&format!("tau={tau:.4} s2={s2}")),
            );
            let far = rng.random_range(1..=3 * n);
            tally.real(
                "kappa_gd_one_sided_periodic",
                k.kappa_gd_one_sided_periodic(ts, n, far, s2)?,
                oracle::series_cell_one_sided(&p, ts, n, far, s2)?,
                || case(&format!("s={far} s2={s2}")),
            );
        }
        if wants(Combo::BlPa) {
            let w0 = std::f64::consts::TAU / period;
            let (m, m2) = (rng.random_range(-6..=6i64), rng.random_range(-6..=6i64));
            tally.record(
                "fourier_kernel_integrals",
                k.fourier_kernel_integrals(period, m, m2)?,
                oracle::fourier_truncated(&p, m as f64 * w0, m2 as f64 * w0)?,
                || case(&format!("n={m} n2={m2}")),
            );
            tally.record(
                "fourier_cross_integral",
                k.fourier_cross_integral(period, tau, m2)?,
                oracle::line_fourier_truncated(&p, tau, m2 as f64 * w0)?,
                || case(&format!("tau={tau:.4} n2={m2}")),
            );
        }
    }
    let mut checks: Vec<KernelCheck> = tally.checks.into_values().collect();
    for c in &mut checks {
        c.pass = c.worst_rel_error <= settings.tolerance;
    }
    let pass = !checks.is_empty() && checks.iter().all(|c| c.pass);
    Ok(ValidationReport {
        settings: settings.clone(),
        checks,
        pass,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    })
}

pub fn write_validation_report(path: impl AsRef<Path>, report: &ValidationReport) -> Result<()> {
    write_json(path, report)
}

/// Paths of trial directories that hold an estimate.
pub fn estimated_trials(est_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(est_dir)? {
        let path = entry?.path();
        if path.join("g_hat.csv").is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_points() {
        let g = GridSpec::default().points().unwrap();
        assert_eq!(g.len(), 50_000);
        assert_eq!(g[0], 0.0002);
        assert!((g[49_999] - 10.0).abs() < 1e-12);
        assert!(GridSpec { step: 0.0, end: 1.0 }.points().is_err());
    }

    #[test]
    fn record_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let u = SampledSignal::zoh(vec![1.0, -1.0, 0.1 + 0.2], 0.01, PastBehavior::Unknown).unwrap();
        let y = [0.5, 1e-300, -3.25e7];
        let p = dir.path().join("r.csv");
        write_record(&p, &u, &[("horizon", "2".into())], &[("y", &y)]).unwrap();
        let r = read_record(&p).unwrap();
        assert_eq!(r.input, u);
        assert_eq!(r.columns["y"], y.to_vec());
        assert_eq!(r.meta["horizon"], "2");
        assert!(write_record(&p, &u, &[], &[("y", &y[..2])]).is_err());
    }

    #[test]
    fn combo_relabeling() {
        let u = SampledSignal::zoh(vec![1.0, 2.0], 0.1, PastBehavior::Unknown).unwrap();
        assert_eq!(apply_combo(&u, None).unwrap(), u);
        assert_eq!(apply_combo(&u, Some(Combo::ZohZa)).unwrap(), u);
        let pa = apply_combo(&u, Some(Combo::ZohPa)).unwrap();
        assert_eq!((pa.intersample(), pa.past()), (Intersample::Zoh, PastBehavior::Pa));
        let bl = apply_combo(&u, Some(Combo::BlPa)).unwrap();
        assert_eq!(bl.intersample(), Intersample::Bl);
    }

    #[test]
    fn zero_input_is_unidentifiable() {
        let u = SampledSignal::zoh(vec![0.0; 8], 0.1, PastBehavior::Unknown).unwrap();
        let v = SampledSignal::zoh(vec![1.0; 8], 0.1, PastBehavior::Za).unwrap();
        let err = estimate_trial(&u, &[1.0, 2.0, 0.0, 1.0, 0.0, 2.0, 1.0, 3.0], &v, 4, &ExperimentConfig::default());
        assert!(matches!(err, Err(Error::Unidentifiable(_))));
    }

    #[test]
    fn small_sweep_passes_and_canary_fails() {
        let ok = cmd_validate_kernels(&ValidateSettings { draws: 4, ..Default::default() }).unwrap();
        assert!(ok.pass, "{:#?}", ok.checks);
        assert_eq!(ok.checks.len(), 10);
        let bad = cmd_validate_kernels(&ValidateSettings {
            draws: 4,
            perturb_lambda1: 1e-3,
            combo: Some(Combo::ZohZa),
            ..Default::default()
        })
        .unwrap();
        assert!(!bad.pass);
        let failing: Vec<&str> = bad.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        assert_eq!(failing, ["lambda_constants"]);
        let bl = cmd_validate_kernels(&ValidateSettings { draws: 2, combo: Some(Combo::BlPa), ..Default::default() }).unwrap();
        let names: Vec<&str> = bl.checks.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["fourier_cross_integral", "fourier_kernel_integrals"]);
    }
}
