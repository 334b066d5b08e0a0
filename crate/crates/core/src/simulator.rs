//! Continuous-time LTI simulation under ZOH input and Monte Carlo data banks.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{generate_prbs, splitmix64, PastBehavior, SampledSignal};

/// `G(s) = num(s) / den(s)`, coefficients in descending powers of `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTf", into = "RawTf")]
pub struct CtTransferFunction {
    num: Vec<f64>,
    den: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTf {
    num: Vec<f64>,
    den: Vec<f64>,
}

impl TryFrom<RawTf> for CtTransferFunction {
    type Error = Error;
    fn try_from(r: RawTf) -> Result<Self> {
        CtTransferFunction::new(r.num, r.den)
    }
}

impl From<CtTransferFunction> for RawTf {
    fn from(tf: CtTransferFunction) -> Self {
        RawTf { num: tf.num, den: tf.den }
    }
}

fn trim_leading_zeros(mut v: Vec<f64>) -> Vec<f64> {
    let first = v.iter().position(|&c| c != 0.0).unwrap_or(v.len().saturating_sub(1));
    v.drain(..first);
    v
}

impl CtTransferFunction {
    /// Requires a strictly proper, BIBO-stable rational function.
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self> {
        if num.is_empty() || den.is_empty() || num.iter().chain(&den).any(|c| !c.is_finite()) {
            return Err(Error::TransferFunction("coefficients must be finite and non-empty".into()));
        }
        let num = trim_leading_zeros(num);
        let den = trim_leading_zeros(den);
        if den[0] == 0.0 {
            return Err(Error::TransferFunction("denominator is identically zero".into()));
        }
        if num.len() >= den.len() {
            return Err(Error::TransferFunction(format!(
                "relative degree must be at least 1 (numerator degree {}, denominator degree {})",
                num.len() - 1,
                den.len() - 1
            )));
        }
        let tf = Self { num, den };
        if let Some(p) = tf.poles().iter().find(|p| p.re >= 0.0) {
            return Err(Error::TransferFunction(format!("unstable pole {p}")));
        }
        Ok(tf)
    }

    /// The benchmark `(−6400s + 1600) / (s⁴ + a₃s³ + 408s² + 416s + 1600)`.
    pub fn rao_garnier(a3: f64) -> Result<Self> {
        Self::new(vec![-6400.0, 1600.0], vec![1.0, a3, 408.0, 416.0, 1600.0])
    }

    pub fn num(&self) -> &[f64] {
        &self.num
    }

    pub fn den(&self) -> &[f64] {
        &self.den
    }

    pub fn order(&self) -> usize {
        self.den.len() - 1
    }

    pub fn poles(&self) -> Vec<Complex64> {
        let n = self.order();
        if n == 0 {
            return Vec::new();
        }
        let a = companion(&self.den);
        a.complex_eigenvalues().iter().copied().collect()
    }

    /// `G(jω)`.
    pub fn frequency_response(&self, omega: f64) -> Complex64 {
        let s = Complex64::new(0.0, omega);
        let eval = |c: &[f64]| c.iter().fold(Complex64::new(0.0, 0.0), |acc, &v| acc * s + v);
        eval(&self.num) / eval(&self.den)
    }

    pub fn to_state_space(&self) -> Result<StateSpace> {
        to_state_space(self)
    }
}

/// Companion matrix of the monic-normalized polynomial, last row `−a`.
fn companion(den: &[f64]) -> DMatrix<f64> {
    let n = den.len() - 1;
    let lead = den[0];
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = -den[n - j] / lead;
    }
    a
}

/// Single-input single-output `ẋ = Ax + Bu`, `y = Cx + Du`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
}

/// Controllable canonical realization.
pub fn to_state_space(tf: &CtTransferFunction) -> Result<StateSpace> {
    let n = tf.order();
    if tf.num.len() > tf.den.len() {
        return Err(Error::TransferFunction("improper transfer function".into()));
    }
    let lead = tf.den[0];
    let mut num = vec![0.0; n + 1 - tf.num.len()];
    num.extend(tf.num.iter().map(|v| v / lead));
    let den: Vec<f64> = tf.den.iter().map(|v| v / lead).collect();
    let d = num[0];
    // Strictly proper remainder num − d·den, ascending powers.
    let c = DVector::from_iterator(n, (0..n).map(|i| num[n - i] - d * den[n - i]));
    let mut b = DVector::zeros(n);
    if n > 0 {
        b[n - 1] = 1.0;
    }
    Ok(StateSpace { a: companion(&den), b, c, d })
}

impl StateSpace {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// `C (jωI − A)⁻¹ B + D`.
    pub fn frequency_response(&self, omega: f64) -> Result<Complex64> {
        let n = self.order();
        let m = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
            let diag = if i == j { Complex64::new(0.0, omega) } else { Complex64::new(0.0, 0.0) };
            diag - self.a[(i, j)]
        });
        let rhs = DVector::<Complex64>::from_fn(n, |i, _| Complex64::new(self.b[i], 0.0));
        let x = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::TransferFunction(format!("jω = {omega} is a pole")))?;
        Ok((0..n).map(|i| x[i] * self.c[i]).sum::<Complex64>() + self.d)
    }

    /// Exact ZOH discretization `(A_d, B_d)` from `exp([[A, B], [0, 0]]·T)`.
    pub fn discretize(&self, ts: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let n = self.order();
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(&(&self.a * ts));
        m.view_mut((0, n), (n, 1)).copy_from(&(&self.b * ts));
        let e = m.exp();
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::MatrixExp(format!("non-finite exponential for ts = {ts}")));
        }
        Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, 1)).column(0).into_owned()))
    }

    /// `g(τ) = C e^{Aτ} B` at each lag.
    pub fn impulse_response(&self, grid: &[f64]) -> Result<Vec<f64>> {
        grid.iter()
            .map(|&tau| {
                if !(tau.is_finite() && tau >= 0.0) {
                    return Err(Error::Domain(format!("impulse lag {tau} must be non-negative")));
                }
                let e = (&self.a * tau).exp();
                if e.iter().any(|v| !v.is_finite()) {
                    return Err(Error::MatrixExp(format!("non-finite exponential at lag {tau}")));
                }
                Ok(self.c.dot(&(e * &self.b)))
            })
            .collect()
    }
}

/// Noiseless output at the sampling instants `kT`, `k = 0..N`, for a ZOH
/// input held over `(kT, (k+1)T]`, starting from state `x0` at `t = 0`.
pub fn simulate_zoh(ss: &StateSpace, u: &SampledSignal, x0: &[f64]) -> Result<Vec<f64>> {
    if u.intersample() != crate::signals::Intersample::Zoh {
        return Err(Error::Behavior("exact discretization needs a ZOH input".into()));
    }
    let n = ss.order();
    if x0.len() != n {
        return Err(Error::Dimension(format!("initial state has {} entries, system order is {n}", x0.len())));
    }
    let (ad, bd) = ss.discretize(u.ts())?;
    let mut x = DVector::from_column_slice(x0);
    let mut y = Vec::with_capacity(u.len());
    let mut held = 0.0;
    for &uk in u.samples() {
        y.push(ss.c.dot(&x) + ss.d * held);
        x = &ad * x + &bd * uk;
        held = uk;
    }
    Ok(y)
}

/// Population variance.
pub(crate) fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Add white Gaussian noise at the given SNR; returns the noisy signal and
/// the noise variance. `snr_db = +∞` returns the input unchanged.
pub fn add_noise(y0: &[f64], snr_db: f64, seed: u64) -> Result<(Vec<f64>, f64)> {
    if snr_db == f64::INFINITY {
        return Ok((y0.to_vec(), 0.0));
    }
    if !snr_db.is_finite() {
        return Err(Error::Domain(format!("SNR {snr_db} dB is not usable")));
    }
    let var = variance(y0);
    if !(var > 0.0) {
        return Err(Error::InvalidSignal("noiseless signal has zero variance".into()));
    }
    let sigma2 = var / 10f64.powf(snr_db / 10.0);
    let normal = Normal::new(0.0, sigma2.sqrt()).map_err(|e| Error::Domain(e.to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok((y0.iter().map(|v| v + normal.sample(&mut rng)).collect(), sigma2))
}

fn default_validation_len() -> usize {
    1000
}

/// One Monte Carlo data-bank configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataBankSpec {
    pub name: String,
    pub ts: f64,
    pub n: usize,
    pub snr_db: f64,
    pub trials: usize,
    /// First kept sample; the window is `[window_start, window_start + n)`.
    pub window_start: usize,
    pub record_len: usize,
    /// Scored validation samples, taken at the same offset as the training window.
    #[serde(default = "default_validation_len")]
    pub validation_len: usize,
    pub prbs_order: u32,
    pub prbs_divider: usize,
    pub system: CtTransferFunction,
}

impl DataBankSpec {
    fn bank(name: &str, ts: f64, n: usize) -> Self {
        Self {
            name: name.to_string(),
            ts,
            n,
            snr_db: 10.0,
            trials: 200,
            window_start: 3000,
            record_len: 7167,
            validation_len: default_validation_len(),
            prbs_order: 10,
            prbs_divider: 7,
            system: CtTransferFunction::rao_garnier(6.0).expect("benchmark system is stable"),
        }
    }

    pub fn d1() -> Self {
        Self::bank("D1", 0.01, 1000)
    }

    pub fn d2() -> Self {
        Self::bank("D2", 0.05, 200)
    }

    pub fn d3() -> Self {
        Self::bank("D3", 0.1, 100)
    }

    pub fn d4() -> Self {
        Self::bank("D4", 0.1, 1000)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_uppercase().as_str() {
            "D1" => Ok(Self::d1()),
            "D2" => Ok(Self::d2()),
            "D3" => Ok(Self::d3()),
            "D4" => Ok(Self::d4()),
            other => Err(Error::Config(format!("unknown data bank {other:?}; expected D1..D4"))),
        }
    }

    pub fn window_end(&self) -> usize {
        self.window_start + self.n
    }

    pub fn validation_end(&self) -> usize {
        self.window_start + self.validation_len
    }

    /// Kept record duration `n·ts`.
    pub fn duration(&self) -> f64 {
        self.n as f64 * self.ts
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ts.is_finite() && self.ts > 0.0) {
            return Err(Error::Config(format!("ts must be positive, got {}", self.ts)));
        }
        if self.n < 2 {
            return Err(Error::Config("n must be at least 2".into()));
        }
        if self.validation_len == 0 {
            return Err(Error::Config("validation_len must be positive".into()));
        }
        if self.window_end().max(self.validation_end()) > self.record_len {
            return Err(Error::Config(format!(
                "window [{}, {}) exceeds record length {}",
                self.window_start,
                self.window_end().max(self.validation_end()),
                self.record_len
            )));
        }
        if self.prbs_divider == 0 || !(2..=31).contains(&self.prbs_order) {
            return Err(Error::Config("PRBS order must be 2..=31 and divider at least 1".into()));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Config("SNR must be a number".into()));
        }
        Ok(())
    }
}

/// Seeds of one trial, derived from the bank seed and trial index only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSeeds {
    pub train_input: u64,
    pub validation_input: u64,
    pub noise: u64,
}

impl TrialSeeds {
    pub fn derive(seed: u64, trial: usize) -> Self {
        let base = splitmix64(seed ^ splitmix64(trial as u64));
        Self {
            train_input: splitmix64(base ^ 1),
            validation_input: splitmix64(base ^ 2),
            noise: splitmix64(base ^ 3),
        }
    }
}

/// One generated Monte Carlo trial.
#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub index: usize,
    pub seeds: TrialSeeds,
    /// Windowed training input; its past is unknown.
    pub train_u: SampledSignal,
    pub train_y: Vec<f64>,
    pub train_y0: Vec<f64>,
    pub sigma2: f64,
    /// Validation input from the start of its record (zero past), so the
    /// whole input history of the predicted window is available.
    pub validation_u: SampledSignal,
    /// Noiseless validation output aligned with `validation_u`.
    pub validation_y0: Vec<f64>,
    /// Number of trailing validation samples that are scored.
    pub horizon: usize,
}

impl Trial {
    /// Noiseless validation output over the scored window.
    pub fn validation_window(&self) -> &[f64] {
        &self.validation_y0[self.validation_y0.len() - self.horizon..]
    }
}

/// Generate one trial of the bank.
pub fn make_trial(spec: &DataBankSpec, ss: &StateSpace, seed: u64, index: usize) -> Result<Trial> {
    spec.validate()?;
    let seeds = TrialSeeds::derive(seed, index);
    let x0 = vec![0.0; ss.order()];
    let record = |s: u64| -> Result<(SampledSignal, Vec<f64>)> {
        let u = generate_prbs(spec.prbs_order, spec.prbs_divider, spec.record_len, s, spec.ts)?;
        let y = simulate_zoh(ss, &u, &x0)?;
        Ok((u, y))
    };
    let (win_lo, win_hi) = (spec.window_start, spec.window_end());
    let (u, y0) = record(seeds.train_input)?;
    let train_u = SampledSignal::zoh(u.samples()[win_lo..win_hi].to_vec(), spec.ts, PastBehavior::Unknown)?;
    let train_y0 = y0[win_lo..win_hi].to_vec();
    let (train_y, sigma2) = add_noise(&train_y0, spec.snr_db, seeds.noise)?;
    let (uv, yv) = record(seeds.validation_input)?;
    let val_hi = spec.validation_end();
    let validation_u = SampledSignal::zoh(uv.samples()[..val_hi].to_vec(), spec.ts, PastBehavior::Za)?;
    Ok(Trial {
        index,
        seeds,
        train_u,
        train_y,
        train_y0,
        sigma2,
        validation_u,
        validation_y0: yv[..val_hi].to_vec(),
        horizon: spec.validation_len,
    })
}

/// Generate every trial of the bank; trials are independent and
/// generated in parallel, with results identical to serial generation.
pub fn make_databank(spec: &DataBankSpec, seed: u64) -> Result<Vec<Trial>> {
    spec.validate()?;
    let ss = spec.system.to_state_space()?;
    (0..spec.trials)
        .into_par_iter()
        .map(|i| make_trial(spec, &ss, seed, i))
        .collect()
}
