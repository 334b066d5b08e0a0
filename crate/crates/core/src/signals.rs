//! Sampled signals with declared intersample and past behavior.
//!
//! A [`SampledSignal`] holds `u(kT_s)` for `k = 0..N-1`. The intersample
//! behavior decides how the continuous-time signal is rebuilt between samples
//! and the past behavior decides what it was before `t = 0`.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the continuous-time input behaves between sampling instants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intersample {
    /// Zero-order hold: `u(kT_s)` is held on `(kT_s, (k+1)T_s]`.
    Zoh,
    /// Band-limited below the Nyquist frequency `π/T_s`.
    Bl,
}

/// What the input was before the first sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PastBehavior {
    /// Periodically appended with period `N·T_s`.
    Pa,
    /// Zero appended.
    Za,
    /// Not known; an assumed past plus a transient model is required.
    Unknown,
}

impl fmt::Display for Intersample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Intersample::Zoh => "zoh",
            Intersample::Bl => "bl",
        })
    }
}

impl fmt::Display for PastBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PastBehavior::Pa => "pa",
            PastBehavior::Za => "za",
            PastBehavior::Unknown => "unknown",
        })
    }
}

impl FromStr for Intersample {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zoh" => Ok(Intersample::Zoh),
            "bl" => Ok(Intersample::Bl),
            other => Err(Error::InvalidSignal(format!("unknown intersample behavior `{other}`"))),
        }
    }
}

impl FromStr for PastBehavior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pa" => Ok(PastBehavior::Pa),
            "za" => Ok(PastBehavior::Za),
            "unknown" => Ok(PastBehavior::Unknown),
            other => Err(Error::InvalidSignal(format!("unknown past behavior `{other}`"))),
        }
    }
}

/// `N` uniformly spaced samples plus the behavior needed to rebuild `u(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledSignal {
    samples: Vec<f64>,
    ts: f64,
    intersample: Intersample,
    past: PastBehavior,
}

impl SampledSignal {
    pub fn new(
        samples: Vec<f64>,
        ts: f64,
        intersample: Intersample,
        past: PastBehavior,
    ) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidSignal(format!(
                "need at least 2 samples, got {}",
                samples.len()
            )));
        }
        if !(ts.is_finite() && ts > 0.0) {
            return Err(Error::InvalidSignal(format!("sampling interval must be > 0, got {ts}")));
        }
        if let Some(k) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSignal(format!("sample {k} is not finite")));
        }
        if intersample == Intersample::Bl && past == PastBehavior::Za {
            return Err(Error::InvalidSignal(
                "a band-limited input cannot be zero appended".into(),
            ));
        }
        Ok(Self {
            samples,
            ts,
            intersample,
            past,
        })
    }

    pub fn zoh(samples: Vec<f64>, ts: f64, past: PastBehavior) -> Result<Self> {
        Self::new(samples, ts, Intersample::Zoh, past)
    }

    pub fn bl(samples: Vec<f64>, ts: f64) -> Result<Self> {
        Self::new(samples, ts, Intersample::Bl, PastBehavior::Pa)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    pub fn intersample(&self) -> Intersample {
        self.intersample
    }

    pub fn past(&self) -> PastBehavior {
        self.past
    }

    /// Record length `N·T_s`, which is also the period under PA.
    pub fn period(&self) -> f64 {
        self.samples.len() as f64 * self.ts
    }

    /// Same samples with a different declared past behavior.
    pub fn with_past(&self, past: PastBehavior) -> Result<Self> {
        Self::new(self.samples.clone(), self.ts, self.intersample, past)
    }

    /// Sample times `[0, T_s, ..., (N-1)T_s]`.
    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| k as f64 * self.ts).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.samples.iter().all(|&v| v == 0.0)
    }

    /// `u(kT_s)` for any integer `k`, extending the record with the declared
    /// past behavior. Indices beyond the record are only defined under PA.
    pub fn sample_at(&self, k: i64) -> Result<f64> {
        let n = self.samples.len() as i64;
        if (0..n).contains(&k) {
            return Ok(self.samples[k as usize]);
        }
        match self.past {
            PastBehavior::Pa => Ok(self.samples[k.rem_euclid(n) as usize]),
            PastBehavior::Za if k < 0 => Ok(0.0),
            PastBehavior::Za => Err(Error::Domain(format!(
                "sample index {k} lies after a zero-appended record of length {n}"
            ))),
            PastBehavior::Unknown => Err(Error::Behavior(
                "past behavior is unknown; assume PA or ZA first".into(),
            )),
        }
    }

    /// Write the signal as a one-column CSV with the behaviors in a header comment.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            file,
            "# ts={} intersample={} past={}",
            self.ts, self.intersample, self.past
        )?;
        writeln!(file, "value")?;
        for v in &self.samples {
            writeln!(file, "{v:e}")?;
        }
        file.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut ts = None;
        let mut intersample = Intersample::Zoh;
        let mut past = PastBehavior::Unknown;
        let mut samples = Vec::new();
        let mut seen_header = false;
        for line in reader.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                for field in comment.split_whitespace() {
                    match field.split_once('=') {
                        Some(("ts", v)) => {
                            ts = Some(v.parse::<f64>().map_err(|e| {
                                Error::InvalidSignal(format!("bad ts `{v}`: {e}"))
                            })?)
                        }
                        Some(("intersample", v)) => intersample = v.parse()?,
                        Some(("past", v)) => past = v.parse()?,
                        _ => {}
                    }
                }
                continue;
            }
            if !seen_header {
                if line != "value" {
                    return Err(Error::InvalidSignal(format!("expected `value` header, got `{line}`")));
                }
                seen_header = true;
                continue;
            }
            samples.push(
                line.parse::<f64>()
                    .map_err(|e| Error::InvalidSignal(format!("bad sample `{line}`: {e}")))?,
            );
        }
        let ts = ts.ok_or_else(|| Error::InvalidSignal("missing `ts=` header comment".into()))?;
        Self::new(samples, ts, intersample, past)
    }
}

/// Continuous-time value of a ZOH input at time `t` (seconds).
///
/// `u(kT_s)` applies on the left-open interval `(kT_s, (k+1)T_s]`, so the
/// value at `t = 0` comes from the past extension.
pub fn eval_zoh(sig: &SampledSignal, t: f64) -> Result<f64> {
    if sig.intersample != Intersample::Zoh {
        return Err(Error::Behavior("eval_zoh needs a ZOH signal".into()));
    }
    if sig.past == PastBehavior::Unknown {
        return Err(Error::Behavior(
            "past behavior is unknown; assume PA or ZA first".into(),
        ));
    }
    if !t.is_finite() {
        return Err(Error::Domain(format!("time {t} is not finite")));
    }
    let k = (t / sig.ts).ceil() as i64 - 1;
    sig.sample_at(k)
}

/// Fourier coefficients `U(nω₀) = Σ_k u(kT_s) e^{-jnω₀kT_s}` for `|n| < N/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct DftCoefficients {
    /// Bins `-M..=M`, stored from `-M` upwards, with `M = (N-1)/2`.
    coeffs: Vec<Complex64>,
    omega0: f64,
    len: usize,
    nyquist: Option<f64>,
}

impl DftCoefficients {
    /// Largest retained bin index `M`.
    pub fn max_bin(&self) -> i64 {
        ((self.len - 1) / 2) as i64
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    /// Number of samples the coefficients were computed from.
    pub fn signal_len(&self) -> usize {
        self.len
    }

    /// `U(nω₀)`, or `None` when `|n| ≥ N/2`.
    pub fn get(&self, n: i64) -> Option<Complex64> {
        let m = self.max_bin();
        if n.abs() > m {
            return None;
        }
        Some(self.coeffs[(n + m) as usize])
    }

    /// Iterate over `(n, U(nω₀))` for `n = -M..=M`.
    pub fn iter(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        let m = self.max_bin();
        self.coeffs.iter().enumerate().map(move |(i, c)| (i as i64 - m, *c))
    }

    /// Value of the (real) Nyquist bin for even `N`; it is not representable
    /// by the retained bins.
    pub fn nyquist(&self) -> Option<f64> {
        self.nyquist
    }
}

/// DFT coefficients of the samples restricted to `|n| < N/2`.
pub fn dft(sig: &SampledSignal) -> DftCoefficients {
    let n = sig.len();
    let mut buf: Vec<Complex64> = sig.samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let m = (n - 1) / 2;
    let mut coeffs = Vec::with_capacity(2 * m + 1);
    for k in (1..=m).rev() {
        coeffs.push(buf[n - k]);
    }
    coeffs.extend_from_slice(&buf[..=m]);
    // Enforce exact conjugate symmetry for real input.
    coeffs[m].im = 0.0;
    for k in 1..=m {
        coeffs[m - k] = coeffs[m + k].conj();
    }
    let nyquist = (n % 2 == 0).then(|| buf[n / 2].re);
    DftCoefficients {
        coeffs,
        omega0: 2.0 * PI / sig.period(),
        len: n,
        nyquist,
    }
}

/// Trigonometric interpolant of a periodic band-limited signal.
#[derive(Clone, Debug)]
pub struct BlInterpolant {
    dft: DftCoefficients,
}

impl BlInterpolant {
    pub fn new(sig: &SampledSignal) -> Result<Self> {
        if sig.intersample != Intersample::Bl {
            return Err(Error::Behavior("band-limited reconstruction needs a BL signal".into()));
        }
        let dft = dft(sig);
        check_nyquist(&dft, sig.samples())?;
        Ok(Self { dft })
    }

    pub fn coefficients(&self) -> &DftCoefficients {
        &self.dft
    }

    pub fn eval(&self, t: f64) -> f64 {
        let w = self.dft.omega0;
        let mut acc = self.dft.get(0).map(|c| c.re).unwrap_or(0.0);
        for n in 1..=self.dft.max_bin() {
            let c = self.dft.get(n).expect("bin in range");
            let phase = Complex64::from_polar(1.0, n as f64 * w * t);
            acc += 2.0 * (c * phase).re;
        }
        acc / self.dft.len as f64
    }
}

pub(crate) fn check_nyquist(dft: &DftCoefficients, samples: &[f64]) -> Result<()> {
    if let Some(ny) = dft.nyquist() {
        let scale = samples.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        if ny.abs() > 1e-10 * scale {
            return Err(Error::InvalidSignal(format!(
                "even-length band-limited signal has energy {ny:e} in the Nyquist bin"
            )));
        }
    }
    Ok(())
}

/// Continuous-time value of a periodic band-limited input at time `t`.
pub fn eval_bl(sig: &SampledSignal, t: f64) -> Result<f64> {
    Ok(BlInterpolant::new(sig)?.eval(t))
}

/// Feedback taps (1-based register positions) of a maximal-length LFSR for
/// register orders 2 through 31.
const LFSR_TAPS: [&[u32]; 30] = [
    &[2, 1],
    &[3, 2],
    &[4, 3],
    &[5, 3],
    &[6, 5],
    &[7, 6],
    &[8, 6, 5, 4],
    &[9, 5],
    &[10, 7],
    &[11, 9],
    &[12, 6, 4, 1],
    &[13, 4, 3, 1],
    &[14, 5, 3, 1],
    &[15, 14],
    &[16, 15, 13, 4],
    &[17, 14],
    &[18, 11],
    &[19, 6, 2, 1],
    &[20, 17],
    &[21, 19],
    &[22, 21],
    &[23, 18],
    &[24, 23, 22, 17],
    &[25, 22],
    &[26, 6, 2, 1],
    &[27, 5, 2, 1],
    &[28, 25],
    &[29, 27],
    &[30, 6, 4, 1],
    &[31, 28],
];

/// Maximal-length binary LFSR.
#[derive(Clone, Debug)]
pub struct Lfsr {
    state: u32,
    taps: u32,
    order: u32,
}

impl Lfsr {
    /// Register of the given order; `seed = 0` starts from the all-ones state,
    /// any other seed picks a pseudo-random nonzero state.
    pub fn new(order: u32, seed: u64) -> Result<Self> {
        if !(2..=31).contains(&order) {
            return Err(Error::Domain(format!(
                "no primitive polynomial tabulated for LFSR order {order} (supported: 2..=31)"
            )));
        }
        let taps = LFSR_TAPS[(order - 2) as usize]
            .iter()
            .fold(0u32, |acc, &t| acc | 1 << (order - t));
        let period = (1u64 << order) - 1;
        let state = if seed == 0 {
            period as u32
        } else {
            (splitmix64(seed) % period + 1) as u32
        };
        Ok(Self { state, taps, order })
    }

    pub fn period(&self) -> u64 {
        (1u64 << self.order) - 1
    }

    /// Next output bit.
    pub fn next_bit(&mut self) -> bool {
        let out = self.state & 1 == 1;
        let feedback = (self.state & self.taps).count_ones() & 1;
        self.state = (self.state >> 1) | (feedback << (self.order - 1));
        out
    }
}

/// Pseudo-random binary sequence at levels ±1: a maximal-length LFSR of the
/// given order, each chip held for `divider` samples, tiled to `length`.
pub fn generate_prbs(
    order: u32,
    divider: usize,
    length: usize,
    seed: u64,
    ts: f64,
) -> Result<SampledSignal> {
    if divider == 0 {
        return Err(Error::Domain("PRBS divider must be at least 1".into()));
    }
    let mut lfsr = Lfsr::new(order, seed)?;
    let period_chips = lfsr.period() as usize;
    let mut samples = Vec::with_capacity(length);
    let mut chips: Vec<f64> = Vec::new();
    // One full period of chips, then tile.
    while samples.len() < length {
        let chip_index = samples.len() / divider;
        let within_period = chip_index % period_chips;
        if within_period >= chips.len() {
            chips.push(if lfsr.next_bit() { 1.0 } else { -1.0 });
        }
        samples.push(chips[within_period]);
    }
    SampledSignal::zoh(samples, ts, PastBehavior::Unknown)
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
