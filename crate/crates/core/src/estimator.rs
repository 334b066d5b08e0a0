//! Regularized (MAP) impulse-response estimate `ĝ(τ) = Σ_gy(τ)(Σ_y + γI)⁻¹y`.

use num_complex::Complex64;

use crate::covariance::{augment_transient, CovariancePair, ImpulseWeights, TransientKernel};
use crate::error::{Error, Result};
use crate::kernels::ImpulseKernel;
use crate::linalg::SpdFactor;
use crate::quadrature::{integrate, QuadSettings};
use crate::signals::{check_nyquist, dft, Intersample, PastBehavior, SampledSignal};

/// Envelope level below which impulse-response tails are dropped.
const TAIL_LEVEL: f64 = 1e-10;

/// Solved coefficients plus everything needed to evaluate `ĝ` and predict.
#[derive(Clone, Debug)]
pub struct RegularizedEstimate<K> {
    coeffs: Vec<f64>,
    cov: CovariancePair<K>,
    gamma: f64,
    weights: ImpulseWeights,
    residual: f64,
}

/// Solve `(Σ_y + γI) c = y` once.
pub fn fit<K: ImpulseKernel>(cov: CovariancePair<K>, y: &[f64], gamma: f64) -> Result<RegularizedEstimate<K>> {
    let n = cov.len();
    if y.len() != n {
        return Err(Error::Dimension(format!("output has {} samples, covariance is {n}x{n}", y.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("output samples".into()));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Hyperparameters(format!("gamma must be positive, got {gamma}")));
    }
    let mut a = cov.sigma_y().to_vec();
    for i in 0..n {
        a[i * n + i] += gamma;
    }
    let factor = SpdFactor::new(&a, n)?;
    let mut c = factor.solve(y);
    let y_norm = norm(y);
    let tolerance = 1e-8 * y_norm;
    let mut residual = residual_norm(&a, &c, y);
    for _ in 0..3 {
        if residual <= tolerance {
            break;
        }
        let r: Vec<f64> = residual_vec(&a, &c, y);
        let dc = factor.solve(&r);
        for (ci, d) in c.iter_mut().zip(dc) {
            *ci += d;
        }
        residual = residual_norm(&a, &c, y);
    }
    if residual > tolerance {
        return Err(Error::SolveResidual { residual, tolerance });
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regularized coefficients".into()));
    }
    let weights = cov.impulse_weights(&c)?;
    Ok(RegularizedEstimate {
        coeffs: c,
        cov,
        gamma,
        weights,
        residual: if y_norm > 0.0 { residual / y_norm } else { 0.0 },
    })
}

/// Fit with the transient prior added to the output covariance; `sigma2`
/// plays the role of `γ`.
pub fn fit_with_transient<K: ImpulseKernel, T: ImpulseKernel>(
    cov: CovariancePair<K>,
    tk: &TransientKernel<T>,
    y: &[f64],
    sigma2: f64,
) -> Result<RegularizedEstimate<K>> {
    let t = cov.input().times();
    fit(augment_transient(cov, tk, &t)?, y, sigma2)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `y − A c`, row-major `A`.
fn residual_vec(a: &[f64], c: &[f64], y: &[f64]) -> Vec<f64> {
    let n = y.len();
    (0..n)
        .map(|i| y[i] - a[i * n..(i + 1) * n].iter().zip(c).map(|(p, q)| p * q).sum::<f64>())
        .collect()
}

fn residual_norm(a: &[f64], c: &[f64], y: &[f64]) -> f64 {
    norm(&residual_vec(a, c, y))
}

impl<K: ImpulseKernel> RegularizedEstimate<K> {
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn covariance(&self) -> &CovariancePair<K> {
        &self.cov
    }

    pub fn train_input(&self) -> &SampledSignal {
        self.cov.input()
    }

    /// `‖(Σ + γI)c − y‖ / ‖y‖` after the solve.
    pub fn relative_residual(&self) -> f64 {
        self.residual
    }

    /// `Σ_y c`, the posterior mean of the noiseless training output
    /// (including the transient block when present).
    pub fn fitted_output(&self) -> Vec<f64> {
        let n = self.coeffs.len();
        let s = self.cov.sigma_y();
        (0..n)
            .map(|i| s[i * n..(i + 1) * n].iter().zip(&self.coeffs).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `ĝ(τ)` at each grid point.
    pub fn eval_impulse(&self, grid: &[f64]) -> Result<Vec<f64>> {
        grid.iter()
            .map(|&tau| {
                if !(tau.is_finite() && tau >= 0.0) {
                    return Err(Error::Domain(format!("impulse lag {tau} must be non-negative")));
                }
                self.cov.impulse_value(&self.weights, tau)
            })
            .collect()
    }

    fn impulse_at(&self, tau: f64) -> f64 {
        self.cov.impulse_value(&self.weights, tau).unwrap_or(f64::NAN)
    }

    /// Lag beyond which `|ĝ|` is below `TAIL_LEVEL` of its scale.
    fn horizon(&self) -> f64 {
        let train = self.cov.input();
        train.len() as f64 * train.ts() + (1.0 / TAIL_LEVEL).ln() / self.cov.kernel().envelope_rate()
    }

    /// Predict the last `horizon` output samples of the validation input
    /// `u_val` by convolving it with `ĝ`.
    pub fn predict_output(&self, u_val: &SampledSignal, horizon: usize) -> Result<Vec<f64>> {
        let n = u_val.len();
        if horizon == 0 || horizon > n {
            return Err(Error::Domain(format!("horizon {horizon} must lie in 1..={n}")));
        }
        match u_val.intersample() {
            Intersample::Zoh => self.predict_zoh(u_val, horizon),
            Intersample::Bl => self.predict_bl(u_val, horizon),
        }
    }

    fn predict_zoh(&self, u: &SampledSignal, horizon: usize) -> Result<Vec<f64>> {
        let n = u.len();
        let t = u.ts();
        let first = n - horizon;
        let mut cells = (self.horizon() / t).ceil().max(1.0) as usize;
        match u.past() {
            // Everything before the record is zero.
            PastBehavior::Za => cells = cells.min(n),
            PastBehavior::Unknown if cells > first => {
                return Err(Error::InvalidSignal(format!(
                    "validation input needs {cells} past samples before the predicted window, has {first}"
                )));
            }
            _ => {}
        }
        let gd = self.impulse_cells(t, cells)?;
        (first..n)
            .map(|k| {
                let mut acc = 0.0;
                for (s, g) in gd.iter().enumerate() {
                    acc += u.sample_at(k as i64 - s as i64 - 1)? * g;
                }
                Ok(acc)
            })
            .collect()
    }

    /// `∫` of `ĝ` over cells `1..=count` of width `t`.
    fn impulse_cells(&self, t: f64, count: usize) -> Result<Vec<f64>> {
        let train = self.cov.input();
        let same_grid = (train.ts() - t).abs() <= 1e-12 * t;
        if let (true, ImpulseWeights::Cells(w), Some(periodic)) =
            (same_grid, &self.weights, self.cov.periodic_cells())
        {
            let k = self.cov.kernel();
            let n = train.len();
            return (1..=count)
                .map(|s| {
                    let mut acc = 0.0;
                    for (j, wj) in w.iter().enumerate() {
                        let c = if periodic {
                            k.cell_one_sided_periodic(t, n, s, j + 1)?
                        } else {
                            k.cell(t, s, j + 1)?
                        };
                        acc += wj * c;
                    }
                    Ok(acc)
                })
                .collect();
        }
        let settings = QuadSettings::tolerance(1e-13, 1e-10);
        (1..=count)
            .map(|s| {
                let lo = (s - 1) as f64 * t;
                Ok(integrate(|x| self.impulse_at(x), lo, lo + t, &settings)?.value)
            })
            .collect()
    }

    fn predict_bl(&self, u: &SampledSignal, horizon: usize) -> Result<Vec<f64>> {
        if u.past() != PastBehavior::Pa {
            return Err(Error::Behavior("band-limited validation input must be periodic".into()));
        }
        let coeffs = dft(u);
        check_nyquist(&coeffs, u.samples())?;
        let w0 = coeffs.omega0();
        let freqs: Vec<f64> = (0..=coeffs.max_bin()).map(|m| m as f64 * w0).collect();
        let spectrum = self.impulse_spectrum(&freqs, u.ts())?;
        let n = u.len();
        let times = u.times();
        Ok(times[n - horizon..]
            .iter()
            .map(|&t| {
                let mut acc = (coeffs.get(0).unwrap() * spectrum[0]).re;
                for m in 1..=coeffs.max_bin() {
                    let c = coeffs.get(m).unwrap();
                    let phase = Complex64::from_polar(1.0, m as f64 * w0 * t);
                    acc += 2.0 * (c * phase * spectrum[m as usize]).re;
                }
                acc / n as f64
            })
            .collect())
    }

    /// `Ĝ(a) = ∫₀^∞ ĝ(τ) e^{−jaτ} dτ` at each angular frequency.
    fn impulse_spectrum(&self, freqs: &[f64], t_val: f64) -> Result<Vec<Complex64>> {
        if let (ImpulseWeights::Fourier(z), Some(bins)) = (&self.weights, self.cov.fourier_bins()) {
            let k = self.cov.kernel();
            return freqs
                .iter()
                .map(|&a| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (zb, &b) in z.iter().zip(bins) {
                        acc += zb * k.fourier(a, b)?;
                    }
                    Ok(acc)
                })
                .collect();
        }
        // Composite Gauss–Legendre on panels no wider than either sampling
        // interval; `ĝ` is sampled once and reused for every frequency.
        let width = self.cov.input().ts().min(t_val);
        let panels = (self.horizon() / width).ceil() as usize;
        let (nodes, weights) = gauss_legendre_8();
        let mut samples = Vec::with_capacity(panels * nodes.len());
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * width;
            for (x, w) in nodes.iter().zip(&weights) {
                let tau = mid + 0.5 * width * x;
                samples.push((tau, 0.5 * width * w * self.cov.impulse_value(&self.weights, tau)?));
            }
        }
        Ok(freqs
            .iter()
            .map(|&a| samples.iter().map(|&(tau, g)| Complex64::from_polar(g, -a * tau)).sum())
            .collect())
    }
}

fn gauss_legendre_8() -> ([f64; 8], [f64; 8]) {
    let x = [
        0.183_434_642_495_649_8,
        0.525_532_409_916_329_0,
        0.796_666_477_413_626_7,
        0.960_289_856_497_536_2,
    ];
    let w = [
        0.362_683_783_378_362_0,
        0.313_706_645_877_887_3,
        0.222_381_034_453_374_5,
        0.101_228_536_290_376_3,
    ];
    let mut nodes = [0.0; 8];
    let mut weights = [0.0; 8];
    for i in 0..4 {
        nodes[2 * i] = -x[i];
        nodes[2 * i + 1] = x[i];
        weights[2 * i] = w[i];
        weights[2 * i + 1] = w[i];
    }
    (nodes, weights)
}
