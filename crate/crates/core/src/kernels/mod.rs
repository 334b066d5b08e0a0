//! Impulse-response kernels and the integrals the covariance builders need.
//!
//! A kernel only has to supply its pointwise value and an exponential
//! envelope; every derived quantity then falls back to [`oracle`] quadrature
//! or truncated series. [`DcKernel`] overrides all of them with closed forms.

mod dc;
pub mod oracle;

pub use dc::{DcKernel, DerivedDcConstants};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// A covariance function for a causal impulse response `g(τ)`, `τ ≥ 0`.
///
/// Cells are 1-based: cell `s` is the interval `[(s-1)·ts, s·ts]`. The
/// periodic variants sum the second argument (or both, for `cell_periodic`)
/// over shifts by whole periods `n_period·ts`.
pub trait ImpulseKernel: Send + Sync {
    /// κ(τ, τ′).
    fn value(&self, tau: f64, tau2: f64) -> f64;

    /// Rate `r` such that `|κ(τ, τ′)| ≤ envelope_scale()·e^{−r(τ+τ′)}`.
    fn envelope_rate(&self) -> f64;

    fn envelope_scale(&self) -> f64;

    /// ∫∫ over cell `s` × cell `s2`.
    fn cell(&self, ts: f64, s: usize, s2: usize) -> Result<f64> {
        oracle::cell(self, ts, s, s2)
    }

    /// ∫ κ(τ, τ′) dτ′ over cell `s2`.
    fn line_cell(&self, ts: f64, tau: f64, s2: usize) -> Result<f64> {
        oracle::line_cell(self, ts, tau, s2)
    }

    /// Σₙ Σₙ′ cell(s + nN, s2 + n′N).
    fn cell_periodic(&self, ts: f64, n_period: usize, s: usize, s2: usize) -> Result<f64> {
        oracle::series_cell_periodic(self, ts, n_period, s, s2)
    }

    /// Σₙ′ line_cell(τ, s2 + n′N).
    fn line_cell_periodic(&self, ts: f64, n_period: usize, tau: f64, s2: usize) -> Result<f64> {
        oracle::series_line_cell_periodic(self, ts, n_period, tau, s2)
    }

    /// Σₙ′ cell(s, s2 + n′N) for any `s ≥ 1`.
    fn cell_one_sided_periodic(
        &self,
        ts: f64,
        n_period: usize,
        s: usize,
        s2: usize,
    ) -> Result<f64> {
        oracle::series_cell_one_sided(self, ts, n_period, s, s2)
    }

    /// ∫₀^∞∫₀^∞ κ(τ, τ′) e^{−jaτ} e^{jbτ′} dτ dτ′.
    fn fourier(&self, a: f64, b: f64) -> Result<Complex64> {
        oracle::fourier_truncated(self, a, b)
    }

    /// ∫₀^∞ κ(τ, τ′) e^{jbτ′} dτ′.
    fn line_fourier(&self, tau: f64, b: f64) -> Result<Complex64> {
        oracle::line_fourier_truncated(self, tau, b)
    }

    /// Row-major Gram matrix `κ(tᵢ, tⱼ)` on the points `t`.
    fn gram(&self, t: &[f64]) -> Vec<f64> {
        let n = t.len();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = self.value(t[i], t[j]);
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        out
    }

    /// Row-major `n × n` matrix of `cell` (or `cell_periodic`) values.
    fn cell_gram(&self, ts: f64, n: usize, periodic: bool) -> Result<Vec<f64>> {
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = if periodic {
                    self.cell_periodic(ts, n, i + 1, j + 1)?
                } else {
                    self.cell(ts, i + 1, j + 1)?
                };
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        Ok(out)
    }

    /// `line_cell` (or `line_cell_periodic`) for `s2 = 1..=n`.
    fn line_cells(&self, ts: f64, n: usize, tau: f64, periodic: bool) -> Result<Vec<f64>> {
        (1..=n)
            .map(|s2| {
                if periodic {
                    self.line_cell_periodic(ts, n, tau, s2)
                } else {
                    self.line_cell(ts, tau, s2)
                }
            })
            .collect()
    }

    /// Optional fast path for the zero-past ZOH output covariance
    /// `Σ[i][k] = Σ_{s,s′} u(i−s) u(k−s′) cell(s, s′)`, row-major.
    fn za_output_covariance(&self, _u: &[f64], _ts: f64) -> Option<Vec<f64>> {
        None
    }
}

/// `(1 − e^{−x}) / x`, continuous at 0.
pub(crate) fn phi1(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// `∫₀^w e^{−c v} dv`.
pub(crate) fn exp_cell(c: f64, w: f64) -> f64 {
    w * phi1(c * w)
}

/// `e^z − 1` without cancellation for small `|z|`.
pub(crate) fn expm1_complex(z: Complex64) -> Complex64 {
    let half = (0.5 * z.im).sin();
    Complex64::new(
        z.re.exp_m1() * z.im.cos() - 2.0 * half * half,
        z.re.exp() * z.im.sin(),
    )
}

/// Complex `(1 − e^{−z}) / z`.
pub(crate) fn phi1_complex(z: Complex64) -> Complex64 {
    if z == Complex64::new(0.0, 0.0) {
        Complex64::new(1.0, 0.0)
    } else {
        -expm1_complex(-z) / z
    }
}

/// `Σ_{k<count} e^{−rate·k}`.
pub(crate) fn geometric_prefix(count: u64, rate: f64) -> f64 {
    if count == 0 {
        0.0
    } else if rate == 0.0 {
        count as f64
    } else {
        (-(count as f64) * rate).exp_m1() / (-rate).exp_m1()
    }
}

pub(crate) fn check_ts(ts: f64) -> Result<()> {
    if ts.is_finite() && ts > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("sampling interval must be positive, got {ts}")))
    }
}

pub(crate) fn check_lag(name: &str, tau: f64) -> Result<()> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be a finite non-negative lag, got {tau}")))
    }
}

pub(crate) fn check_cell(name: &str, s: usize) -> Result<()> {
    if s >= 1 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} is a 1-based cell index, got 0")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi1_matches_direct_formula_away_from_zero() {
        for &x in &[1e-3, 0.5, 3.0, 40.0] {
            let direct = (1.0 - (-x as f64).exp()) / x;
            assert!((phi1(x) - direct).abs() <= 1e-12 * direct);
        }
        assert_eq!(phi1(0.0), 1.0);
        assert!((phi1(1e-12) - 1.0).abs() < 1e-11);
    }

    #[test]
    fn complex_phi1_small_argument_series() {
        let z = Complex64::new(3e-7, -2e-7);
        let series = Complex64::new(1.0, 0.0) - z / 2.0 + z * z / 6.0;
        assert!((phi1_complex(z) - series).norm() < 1e-15);
        let w = Complex64::new(0.7, 2.5);
        let direct = (Complex64::new(1.0, 0.0) - (-w).exp()) / w;
        assert!((phi1_complex(w) - direct).norm() < 1e-14);
    }

    #[test]
    fn geometric_prefix_counts() {
        assert_eq!(geometric_prefix(0, 0.3), 0.0);
        assert_eq!(geometric_prefix(4, 0.0), 4.0);
        let r: f64 = 0.3;
        let direct: f64 = (0..5).map(|k| (-r * k as f64).exp()).sum();
        assert!((geometric_prefix(5, r) - direct).abs() < 1e-14);
    }
}
