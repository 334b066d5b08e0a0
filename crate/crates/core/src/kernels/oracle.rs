//! Reference values computed only from pointwise kernel evaluations.
//!
//! These back the default [`ImpulseKernel`] hooks and serve as the ground
//! truth against which closed forms are checked.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::ImpulseKernel;
use crate::error::{Error, Result};
use crate::quadrature::{breakpoints, integrate_2d, integrate_points, QuadEstimate, QuadSettings};

/// Integration domain for [`quadrature_oracle`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    /// `τ ∈ tau.0..tau.1`, `τ′ ∈ tau2.0..tau2.1`.
    Rectangle { tau: (f64, f64), tau2: (f64, f64) },
    /// Fixed `τ`, `τ′ ∈ tau2.0..tau2.1`.
    Line { tau: f64, tau2: (f64, f64) },
}

/// Weight multiplying κ(τ, τ′) under the integral.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Integrand {
    Kernel,
    /// `e^{−jaτ} e^{jbτ′}`.
    Fourier { a: f64, b: f64 },
}

const SERIES_CAP: usize = 10_000;
const SERIES_RTOL: f64 = 1e-14;

/// Adaptive Gauss–Kronrod integral of κ (times the chosen weight) over a
/// finite region, split along the diagonal `τ = τ′`.
pub fn quadrature_oracle<K: ImpulseKernel + ?Sized>(
    k: &K,
    region: Region,
    integrand: Integrand,
) -> Result<QuadEstimate<Complex64>> {
    quadrature_with(k, region, integrand, 1)
}

fn quadrature_with<K: ImpulseKernel + ?Sized>(
    k: &K,
    region: Region,
    integrand: Integrand,
    panels: usize,
) -> Result<QuadEstimate<Complex64>> {
    // Absolute tolerance relative to the envelope over the region, so that
    // deep-tail cells are still resolved to relative precision.
    let (lo, size) = match region {
        Region::Rectangle { tau, tau2 } => (tau.0 + tau2.0, (tau.1 - tau.0) * (tau2.1 - tau2.0)),
        Region::Line { tau, tau2 } => (tau + tau2.0, tau2.1 - tau2.0),
    };
    let bound = k.envelope_scale() * (-k.envelope_rate() * lo).exp() * size.abs();
    let settings = &QuadSettings {
        abs_tol: (1e-12 * bound).max(f64::MIN_POSITIVE),
        ..QuadSettings::default()
    };
    let (a, b) = match integrand {
        Integrand::Kernel => (0.0, 0.0),
        Integrand::Fourier { a, b } => (a, b),
    };
    let weight = move |x: f64, y: f64| Complex64::from_polar(1.0, b * y - a * x);
    let uniform = |lo: f64, hi: f64| (1..panels).map(move |i| lo + (hi - lo) * i as f64 / panels as f64);
    match region {
        Region::Rectangle { tau, tau2 } => {
            for (lo, hi) in [tau, tau2] {
                check_range(lo, hi)?;
            }
            let xs = breakpoints(tau.0, tau.1, uniform(tau.0, tau.1).chain([tau2.0, tau2.1]));
            integrate_2d(
                |x, y| weight(x, y) * k.value(x, y),
                &xs,
                |x| breakpoints(tau2.0, tau2.1, uniform(tau2.0, tau2.1).chain([x])),
                settings,
            )
        }
        Region::Line { tau, tau2 } => {
            check_range(tau2.0, tau2.1)?;
            let ys = breakpoints(tau2.0, tau2.1, uniform(tau2.0, tau2.1).chain([tau]));
            integrate_points(|y| weight(tau, y) * k.value(tau, y), &ys, settings)
        }
    }
}

fn check_range(lo: f64, hi: f64) -> Result<()> {
    if lo.is_finite() && hi.is_finite() && lo <= hi {
        Ok(())
    } else {
        Err(Error::Domain(format!("quadrature region [{lo}, {hi}] is not a finite interval")))
    }
}

/// Cell integral by 2-D quadrature.
pub fn cell<K: ImpulseKernel + ?Sized>(k: &K, ts: f64, s: usize, s2: usize) -> Result<f64> {
    let span = |s: usize| ((s as f64 - 1.0) * ts, s as f64 * ts);
    let est = quadrature_oracle(k, Region::Rectangle { tau: span(s), tau2: span(s2) }, Integrand::Kernel)?;
    Ok(est.value.re)
}

/// Line-cell integral by 1-D quadrature.
pub fn line_cell<K: ImpulseKernel + ?Sized>(k: &K, ts: f64, tau: f64, s2: usize) -> Result<f64> {
    let tau2 = ((s2 as f64 - 1.0) * ts, s2 as f64 * ts);
    let est = quadrature_oracle(k, Region::Line { tau, tau2 }, Integrand::Kernel)?;
    Ok(est.value.re)
}

/// Horizon beyond which the envelope tail is below double precision.
fn horizon<K: ImpulseKernel + ?Sized>(k: &K) -> f64 {
    40.0 / k.envelope_rate()
}

fn oscillation_panels(h: f64, a: f64, b: f64) -> usize {
    let cycles = h * a.abs().max(b.abs()) / (2.0 * PI);
    (cycles.ceil() as usize).clamp(1, 400)
}

/// ∫∫ over `[0, H]²` with `H` past the envelope's precision horizon.
pub fn fourier_truncated<K: ImpulseKernel + ?Sized>(k: &K, a: f64, b: f64) -> Result<Complex64> {
    let h = horizon(k);
    let region = Region::Rectangle { tau: (0.0, h), tau2: (0.0, h) };
    let est = quadrature_with(
        k,
        region,
        Integrand::Fourier { a, b },
        oscillation_panels(h, a, b),
    )?;
    Ok(est.value)
}

/// ∫ over `τ′ ∈ [0, H]` with `H` past the envelope's precision horizon.
pub fn line_fourier_truncated<K: ImpulseKernel + ?Sized>(k: &K, tau: f64, b: f64) -> Result<Complex64> {
    let h = horizon(k).max(tau);
    let est = quadrature_with(
        k,
        Region::Line { tau, tau2: (0.0, h) },
        Integrand::Fourier { a: 0.0, b },
        oscillation_panels(h, 0.0, b),
    )?;
    Ok(est.value)
}

/// `Σ_{n≥0} term(n)` where `|term(n)| ≤ bound·e^{−rate·n}`; stops once the
/// remaining geometric tail drops below `1e-14` of the running sum.
pub fn geometric_series<F>(mut term: F, bound: f64, rate: f64) -> Result<f64>
where
    F: FnMut(usize) -> Result<f64>,
{
    let denom = -(-rate).exp_m1();
    let mut acc = 0.0;
    for n in 0..SERIES_CAP {
        acc += term(n)?;
        let tail = bound * (-rate * (n + 1) as f64).exp() / denom;
        if tail <= SERIES_RTOL * acc.abs() || tail < f64::MIN_POSITIVE {
            return Ok(acc);
        }
    }
    Err(Error::Domain(format!(
        "truncated series did not reach tolerance within {SERIES_CAP} terms"
    )))
}

/// Σₙ Σₙ′ κ(τ + nP, τ′ + n′P).
pub fn series_periodic<K: ImpulseKernel + ?Sized>(k: &K, period: f64, tau: f64, tau2: f64) -> Result<f64> {
    let r = k.envelope_rate();
    let m = k.envelope_scale();
    geometric_series(
        |n| {
            let t = tau + n as f64 * period;
            geometric_series(
                |n2| Ok(k.value(t, tau2 + n2 as f64 * period)),
                m * (-r * (t + tau2)).exp(),
                r * period,
            )
        },
        m * (-r * (tau + tau2)).exp() / -(-r * period).exp_m1(),
        r * period,
    )
}

/// Σₙ′ κ(τ, τ′ + n′P).
pub fn series_line_periodic<K: ImpulseKernel + ?Sized>(
    k: &K,
    period: f64,
    tau: f64,
    tau2: f64,
) -> Result<f64> {
    let r = k.envelope_rate();
    geometric_series(
        |n2| Ok(k.value(tau, tau2 + n2 as f64 * period)),
        k.envelope_scale() * (-r * (tau + tau2)).exp(),
        r * period,
    )
}

/// Σₙ Σₙ′ cell(s + nN, s2 + n′N).
pub fn series_cell_periodic<K: ImpulseKernel + ?Sized>(
    k: &K,
    ts: f64,
    n_period: usize,
    s: usize,
    s2: usize,
) -> Result<f64> {
    let r = k.envelope_rate();
    let rate = r * n_period as f64 * ts;
    let base = k.envelope_scale() * ts * ts * (-r * (s + s2 - 2) as f64 * ts).exp();
    geometric_series(
        |n| {
            let si = s + n * n_period;
            geometric_series(
                |n2| k.cell(ts, si, s2 + n2 * n_period),
                base * (-rate * n as f64).exp(),
                rate,
            )
        },
        base / -(-rate).exp_m1(),
        rate,
    )
}

/// Σₙ′ line_cell(τ, s2 + n′N).
pub fn series_line_cell_periodic<K: ImpulseKernel + ?Sized>(
    k: &K,
    ts: f64,
    n_period: usize,
    tau: f64,
    s2: usize,
) -> Result<f64> {
    let r = k.envelope_rate();
    geometric_series(
        |n2| k.line_cell(ts, tau, s2 + n2 * n_period),
        k.envelope_scale() * ts * (-r * (tau + (s2 - 1) as f64 * ts)).exp(),
        r * n_period as f64 * ts,
    )
}

/// Σₙ′ cell(s, s2 + n′N).
pub fn series_cell_one_sided<K: ImpulseKernel + ?Sized>(
    k: &K,
    ts: f64,
    n_period: usize,
    s: usize,
    s2: usize,
) -> Result<f64> {
    let r = k.envelope_rate();
    geometric_series(
        |n2| k.cell(ts, s, s2 + n2 * n_period),
        k.envelope_scale() * ts * ts * (-r * (s + s2 - 2) as f64 * ts).exp(),
        r * n_period as f64 * ts,
    )
}
