use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{
    check_cell, check_lag, check_ts, exp_cell, geometric_prefix, phi1, phi1_complex, ImpulseKernel,
};
use crate::error::{Error, Result};

/// Diagonal-correlated kernel `κ(τ, τ′) = λ e^{−α(τ+τ′)} e^{−β|τ−τ′|}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDc", into = "RawDc")]
pub struct DcKernel {
    alpha: f64,
    beta: f64,
    lambda: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDc {
    alpha: f64,
    beta: f64,
    lambda: f64,
}

impl TryFrom<RawDc> for DcKernel {
    type Error = Error;
    fn try_from(r: RawDc) -> Result<Self> {
        DcKernel::new(r.alpha, r.beta, r.lambda)
    }
}

impl From<DcKernel> for RawDc {
    fn from(k: DcKernel) -> Self {
        RawDc {
            alpha: k.alpha,
            beta: k.beta,
            lambda: k.lambda,
        }
    }
}

/// The scalar constants that multiply exponentials in the cell and
/// periodized closed forms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedDcConstants {
    /// Off-diagonal cell factor: `cell(s, s′) = λ₁λ e^{−β|s−s′|T − α(s+s′)T}`.
    pub lambda1: f64,
    /// Diagonal cell factor: `cell(s, s) = λ₂λ e^{−2αsT}`.
    pub lambda2: f64,
    /// `e^{−(α+β)P} / ((1 − e^{−2αP})(1 − e^{−(α+β)P}))` with `P = N·T`.
    pub lambda3: f64,
    /// `2λ₁ − λ₂`.
    pub lambda4: f64,
}

impl DerivedDcConstants {
    /// `κ_gd(s, s2)` rebuilt from `λ₁` (off the diagonal) or `λ₂` (on it).
    pub fn cell(&self, k: &DcKernel, ts: f64, s: usize, s2: usize) -> f64 {
        let (s, s2) = (s as f64, s2 as f64);
        let factor = if s == s2 { self.lambda2 } else { self.lambda1 };
        k.lambda * factor * (-k.beta * (s - s2).abs() * ts - k.alpha * (s + s2) * ts).exp()
    }
}

impl DcKernel {
    /// Requires `α > 0`, `0 ≤ β ≤ α` and `λ ≥ 0`, all finite.
    pub fn new(alpha: f64, beta: f64, lambda: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Hyperparameters(format!("alpha must be positive, got {alpha}")));
        }
        if !(beta.is_finite() && (0.0..=alpha).contains(&beta)) {
            return Err(Error::Hyperparameters(format!(
                "beta must lie in [0, alpha = {alpha}], got {beta}"
            )));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Hyperparameters(format!("lambda must be non-negative, got {lambda}")));
        }
        Ok(Self { alpha, beta, lambda })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.alpha, self.beta, lambda)
    }

    pub fn kappa_g(&self, tau: f64, tau2: f64) -> Result<f64> {
        check_lag("tau", tau)?;
        check_lag("tau2", tau2)?;
        Ok(self.value(tau, tau2))
    }

    pub fn kappa_gd(&self, ts: f64, s: usize, s2: usize) -> Result<f64> {
        check_cell("s", s)?;
        check_cell("s2", s2)?;
        Ok(self.cells(ts, 0)?.cell(s, s2))
    }

    pub fn kappa_ggd(&self, ts: f64, tau: f64, s2: usize) -> Result<f64> {
        check_lag("tau", tau)?;
        check_cell("s2", s2)?;
        Ok(self.cells(ts, 0)?.line(tau, s2))
    }

    pub fn kappa_gp(&self, period: f64, tau: f64, tau2: f64) -> Result<f64> {
        check_period(period)?;
        check_in_period("tau", tau, period)?;
        check_in_period("tau2", tau2, period)?;
        let p = self.periodic(period);
        let (c, d) = (self.alpha + self.beta, self.alpha - self.beta);
        let cross = (-c * tau - d * tau2).exp() + (-c * tau2 - d * tau).exp();
        Ok(self.value(tau, tau2) / p.q + self.lambda * p.lambda3() * cross)
    }

    pub fn kappa_ggp(&self, period: f64, tau: f64, tau2: f64) -> Result<f64> {
        check_period(period)?;
        check_lag("tau", tau)?;
        check_in_period("tau2", tau2, period)?;
        let p = self.periodic(period);
        let (c, d) = (self.alpha + self.beta, self.alpha - self.beta);
        let below = if tau >= tau2 {
            ((tau - tau2) / period).floor() as u64 + 1
        } else {
            0
        };
        let lower = (-c * tau - d * tau2).exp() * geometric_prefix(below, d * period);
        let upper = (-d * tau - c * (tau2 + below as f64 * period)).exp() / p.one_minus_x;
        Ok(self.lambda * (lower + upper))
    }

    pub fn kappa_gdp(&self, ts: f64, n_period: usize, s: usize, s2: usize) -> Result<f64> {
        check_in_record("s", s, n_period)?;
        check_in_record("s2", s2, n_period)?;
        Ok(self.cells(ts, n_period)?.cell_periodic(s, s2))
    }

    pub fn kappa_ggdp(&self, ts: f64, n_period: usize, tau: f64, s2: usize) -> Result<f64> {
        check_lag("tau", tau)?;
        check_in_record("s2", s2, n_period)?;
        Ok(self.cells(ts, n_period)?.line_periodic(tau, s2))
    }

    /// Σₙ′ κ_gd(s, s2 + n′N) for any `s ≥ 1`.
    pub fn kappa_gd_one_sided_periodic(&self, ts: f64, n_period: usize, s: usize, s2: usize) -> Result<f64> {
        check_cell("s", s)?;
        check_in_record("s2", s2, n_period)?;
        Ok(self.cells(ts, n_period)?.cell_one_sided(s, s2))
    }

    /// `∫₀^P∫₀^P κ_gp(τ, τ′) e^{−jnω₀τ} e^{jn′ω₀τ′}` with `ω₀ = 2π/P`.
    pub fn fourier_kernel_integrals(&self, period: f64, n: i64, n2: i64) -> Result<Complex64> {
        check_period(period)?;
        let w0 = std::f64::consts::TAU / period;
        Ok(self.fourier_closed(n as f64 * w0, n2 as f64 * w0))
    }

    /// `∫₀^P κ_ggp(τ, τ′) e^{jn′ω₀τ′} dτ′`.
    pub fn fourier_cross_integral(&self, period: f64, tau: f64, n2: i64) -> Result<Complex64> {
        check_period(period)?;
        check_lag("tau", tau)?;
        let w0 = std::f64::consts::TAU / period;
        Ok(self.line_fourier_closed(tau, n2 as f64 * w0))
    }

    pub fn derived_constants(&self, ts: f64, n_period: usize) -> Result<DerivedDcConstants> {
        if n_period == 0 {
            return Err(Error::Domain("period length must be at least one sample".into()));
        }
        let cells = self.cells(ts, n_period)?;
        let grow = (2.0 * self.alpha * ts).exp();
        let lambda1 = cells.pp * grow;
        let lambda2 = cells.d0 * grow;
        Ok(DerivedDcConstants {
            lambda1,
            lambda2,
            lambda3: cells.lambda3(),
            lambda4: 2.0 * lambda1 - lambda2,
        })
    }

    fn fourier_closed(&self, a: f64, b: f64) -> Complex64 {
        let c = self.alpha + self.beta;
        let one = Complex64::new(1.0, 0.0);
        let outer = Complex64::new(2.0 * self.alpha, a - b);
        self.lambda / outer * (one / Complex64::new(c, a) + one / Complex64::new(c, -b))
    }

    fn line_fourier_closed(&self, tau: f64, b: f64) -> Complex64 {
        let c = self.alpha + self.beta;
        let d = self.alpha - self.beta;
        let below = (-c * tau).exp() * tau * phi1_complex(Complex64::new(d, -b) * tau);
        let above = Complex64::from_polar((-2.0 * self.alpha * tau).exp(), b * tau) / Complex64::new(c, -b);
        self.lambda * (below + above)
    }

    fn periodic(&self, period: f64) -> Periodic {
        Periodic::new(self.alpha, self.beta, period)
    }

    /// `out[i][j] += scale·κ(tᵢ, tⱼ)` for `j ≥ i`, row-major; the strict
    /// lower triangle is left untouched.
    pub(crate) fn add_gram_upper(&self, t: &[f64], scale: f64, out: &mut [f64]) {
        // For tᵢ ≥ tⱼ the kernel factors as λ e^{−(α+β)tᵢ} e^{−(α−β)tⱼ}.
        let hi: Vec<f64> = t.iter().map(|&v| (-(self.alpha + self.beta) * v).exp()).collect();
        let lo: Vec<f64> = t.iter().map(|&v| (-(self.alpha - self.beta) * v).exp()).collect();
        let n = t.len();
        let w = scale * self.lambda;
        for i in 0..n {
            let row = &mut out[i * n + i..(i + 1) * n];
            for (o, j) in row.iter_mut().zip(i..n) {
                let v = if t[i] >= t[j] { hi[i] * lo[j] } else { hi[j] * lo[i] };
                *o += w * v;
            }
        }
    }

    /// Upper triangle (with diagonal) of the zero-past ZOH output
    /// covariance, row-major; the strict lower triangle is left untouched.
    pub(crate) fn za_output_covariance_upper(&self, u: &[f64], ts: f64, out: &mut [f64]) -> Result<()> {
        let n = u.len();
        if out.len() != n * n {
            return Err(Error::Dimension(format!("buffer has {} entries, expected {}", out.len(), n * n)));
        }
        za_recursion(&self.cells(ts, n)?, u, out);
        Ok(())
    }

    fn cells(&self, ts: f64, n_period: usize) -> Result<Cells> {
        check_ts(ts)?;
        Ok(Cells::new(self, ts, n_period))
    }
}

fn check_period(period: f64) -> Result<()> {
    if period.is_finite() && period > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("period must be positive, got {period}")))
    }
}

fn check_in_period(name: &str, tau: f64, period: f64) -> Result<()> {
    if tau.is_finite() && (0.0..period).contains(&tau) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {tau} lies outside [0, {period})")))
    }
}

fn check_in_record(name: &str, s: usize, n: usize) -> Result<()> {
    if (1..=n).contains(&s) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {s} lies outside 1..={n}")))
    }
}

/// Geometric factors of one period `P`.
#[derive(Clone, Copy, Debug)]
struct Periodic {
    /// `e^{−(α+β)P}`
    x: f64,
    one_minus_x: f64,
    /// `1 − e^{−2αP}`
    q: f64,
}

impl Periodic {
    fn new(alpha: f64, beta: f64, period: f64) -> Self {
        let cp = (alpha + beta) * period;
        Self {
            x: (-cp).exp(),
            one_minus_x: -(-cp).exp_m1(),
            q: -(-2.0 * alpha * period).exp_m1(),
        }
    }

    fn lambda3(&self) -> f64 {
        self.x / (self.one_minus_x * self.q)
    }
}

/// Everything the cell closed forms need for a fixed `T` (and `N`).
#[derive(Clone, Copy, Debug)]
struct Cells {
    lambda: f64,
    alpha: f64,
    c: f64,
    d: f64,
    ts: f64,
    p_plus: f64,
    p_minus: f64,
    pp: f64,
    d0: f64,
    n: usize,
    per: Periodic,
}

impl Cells {
    fn new(k: &DcKernel, ts: f64, n: usize) -> Self {
        let c = k.alpha + k.beta;
        let d = k.alpha - k.beta;
        let p_plus = exp_cell(c, ts);
        let p_minus = exp_cell(d, ts);
        Self {
            lambda: k.lambda,
            alpha: k.alpha,
            c,
            d,
            ts,
            p_plus,
            p_minus,
            pp: p_plus * p_minus,
            d0: diagonal_cell(c, d, ts),
            n,
            per: Periodic::new(k.alpha, k.beta, n as f64 * ts),
        }
    }

    fn lambda3(&self) -> f64 {
        self.per.lambda3()
    }

    /// `e^{−c(hi−1)T − d(lo−1)T}` for a pair of cells.
    fn off(&self, hi: usize, lo: usize) -> f64 {
        (-(self.c * (hi - 1) as f64 + self.d * (lo - 1) as f64) * self.ts).exp()
    }

    fn cell(&self, s: usize, s2: usize) -> f64 {
        if s == s2 {
            self.lambda * self.d0 * (-2.0 * self.alpha * (s - 1) as f64 * self.ts).exp()
        } else {
            self.lambda * self.pp * self.off(s.max(s2), s.min(s2))
        }
    }

    fn line(&self, tau: f64, s2: usize) -> f64 {
        let a = (s2 - 1) as f64 * self.ts;
        let b = a + self.ts;
        let (c, d) = (self.c, self.d);
        let v = if tau >= b {
            (-c * tau - d * a).exp() * self.p_minus
        } else if tau <= a {
            (-d * tau - c * a).exp() * self.p_plus
        } else {
            (-c * tau - d * a).exp() * exp_cell(d, tau - a)
                + (-2.0 * self.alpha * tau).exp() * exp_cell(c, b - tau)
        };
        self.lambda * v
    }

    fn cell_periodic(&self, s: usize, s2: usize) -> f64 {
        let cross = self.off(s, s2) + self.off(s2, s);
        self.cell(s, s2) / self.per.q + self.lambda * self.pp * self.lambda3() * cross
    }

    fn line_periodic(&self, tau: f64, s2: usize) -> f64 {
        let n = self.n;
        let t = self.ts;
        let steps = tau / t;
        let below = if steps >= s2 as f64 {
            ((steps - s2 as f64) / n as f64).floor() as u64 + 1
        } else {
            0
        };
        let boundary = s2 + below as usize * n;
        let (partial, first_above) = if ((boundary - 1) as f64) * t < tau {
            (self.line(tau, boundary), below as usize + 1)
        } else {
            (0.0, below as usize)
        };
        let rate = self.d * n as f64 * t;
        let lower = self.p_minus
            * (-self.c * tau - self.d * (s2 - 1) as f64 * t).exp()
            * geometric_prefix(below, rate);
        let start = (s2 + first_above * n - 1) as f64 * t;
        let upper = self.p_plus * (-self.d * tau - self.c * start).exp() / self.per.one_minus_x;
        self.lambda * (lower + upper) + partial
    }

    fn cell_one_sided(&self, s: usize, s2: usize) -> f64 {
        let n = self.n;
        let below = if s > s2 { (s - s2 - 1) / n + 1 } else { 0 };
        let diag = s >= s2 && (s - s2) % n == 0;
        let first_above = below + diag as usize;
        let t = self.ts;
        let rate = self.d * n as f64 * t;
        let lower = self.off(s, s2) * geometric_prefix(below as u64, rate);
        let upper = (-(self.c * (s2 + first_above * n - 1) as f64 + self.d * (s - 1) as f64) * t).exp()
            / self.per.one_minus_x;
        let centre = if diag { self.cell(s, s) } else { 0.0 };
        self.lambda * self.pp * (lower + upper) + centre
    }

    fn gram(&self, periodic: bool) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = if periodic {
                    self.cell_periodic(i + 1, j + 1)
                } else {
                    self.cell(i + 1, j + 1)
                };
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        out
    }
}

/// `∫₀ᵀ∫₀ᵀ e^{−α(x+y) − β|x−y|} dx dy` with `c = α+β`, `d = α−β`.
fn diagonal_cell(c: f64, d: f64, ts: f64) -> f64 {
    if d * ts > 0.1 {
        return 2.0 / d * (exp_cell(c, ts) - exp_cell(c + d, ts));
    }
    // 2 ∫₀ᵀ e^{−cx} x φ₁(dx) dx, expanding φ₁ in powers of d.
    let z = c * ts;
    let mut sum = 0.0;
    let mut coef = 2.0;
    let mut scale = ts * ts;
    for j in 0..40 {
        let term = coef * scale * truncated_moment(j + 1, z);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
        coef *= -d / (j + 2) as f64;
        scale *= ts;
    }
    sum
}

/// `∫₀¹ u^k e^{−z u} du` for `z ≥ 0`.
fn truncated_moment(k: usize, z: f64) -> f64 {
    if z > 50.0 {
        let mut e = phi1(z);
        for m in 1..=k {
            e = (m as f64 * e - (-z).exp()) / z;
        }
        return e;
    }
    // e^{−z} Σₘ zᵐ / ((k+1)(k+2)…(k+m+1)), all terms positive.
    let mut term = 1.0 / (k + 1) as f64;
    let mut sum = term;
    for m in 1..1000 {
        term *= z / (k + m + 1) as f64;
        sum += term;
        if term <= 1e-17 * sum {
            break;
        }
    }
    (-z).exp() * sum
}

impl ImpulseKernel for DcKernel {
    fn value(&self, tau: f64, tau2: f64) -> f64 {
        self.lambda * (-self.alpha * (tau + tau2) - self.beta * (tau - tau2).abs()).exp()
    }

    fn envelope_rate(&self) -> f64 {
        self.alpha
    }

    fn envelope_scale(&self) -> f64 {
        self.lambda
    }

    fn cell(&self, ts: f64, s: usize, s2: usize) -> Result<f64> {
        self.kappa_gd(ts, s, s2)
    }

    fn line_cell(&self, ts: f64, tau: f64, s2: usize) -> Result<f64> {
        self.kappa_ggd(ts, tau, s2)
    }

    fn cell_periodic(&self, ts: f64, n_period: usize, s: usize, s2: usize) -> Result<f64> {
        self.kappa_gdp(ts, n_period, s, s2)
    }

    fn line_cell_periodic(&self, ts: f64, n_period: usize, tau: f64, s2: usize) -> Result<f64> {
        self.kappa_ggdp(ts, n_period, tau, s2)
    }

    fn cell_one_sided_periodic(&self, ts: f64, n_period: usize, s: usize, s2: usize) -> Result<f64> {
        self.kappa_gd_one_sided_periodic(ts, n_period, s, s2)
    }

    fn fourier(&self, a: f64, b: f64) -> Result<Complex64> {
        Ok(self.fourier_closed(a, b))
    }

    fn line_fourier(&self, tau: f64, b: f64) -> Result<Complex64> {
        check_lag("tau", tau)?;
        Ok(self.line_fourier_closed(tau, b))
    }

    fn gram(&self, t: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; t.len() * t.len()];
        self.add_gram_upper(t, 1.0, &mut out);
        mirror_upper(&mut out, t.len());
        out
    }

    fn cell_gram(&self, ts: f64, n: usize, periodic: bool) -> Result<Vec<f64>> {
        Ok(self.cells(ts, n)?.gram(periodic))
    }

    fn line_cells(&self, ts: f64, n: usize, tau: f64, periodic: bool) -> Result<Vec<f64>> {
        check_lag("tau", tau)?;
        let cells = self.cells(ts, n)?;
        Ok((1..=n)
            .map(|s2| if periodic { cells.line_periodic(tau, s2) } else { cells.line(tau, s2) })
            .collect())
    }

    fn za_output_covariance(&self, u: &[f64], ts: f64) -> Option<Vec<f64>> {
        let mut out = vec![0.0; u.len() * u.len()];
        self.za_output_covariance_upper(u, ts, &mut out).ok()?;
        mirror_upper(&mut out, u.len());
        Some(out)
    }
}

/// O(N²) zero-past ZOH output covariance.
///
/// Splits each cell into the off-diagonal product `p₊p₋·A^{hi−1}B^{lo−1}`
/// (extended to the diagonal) plus a diagonal correction; both double sums
/// then obey a one-step recursion from `(i, k)` to `(i+1, k+1)`.
fn za_recursion(cells: &Cells, u: &[f64], out: &mut [f64]) {
    let n = u.len();
    let a = (-cells.c * cells.ts).exp();
    let rho = (-2.0 * cells.alpha * cells.ts).exp();
    let mut v = vec![0.0; n];
    let mut acc = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        acc = uk + if k > 0 { a * acc } else { 0.0 };
        v[k] = acc;
    }
    let w_off = cells.lambda * cells.pp;
    let w_diag = cells.lambda * (cells.d0 - cells.pp);
    out[..n].fill(0.0);
    // Row r is one step of the recursion applied to row r − 1 shifted by one
    // column; row 0 and column 0 vanish.
    let (mut q_prev, mut m_prev) = (vec![0.0; n], vec![0.0; n]);
    let (mut q, mut m) = (vec![0.0; n], vec![0.0; n]);
    for r in 1..n {
        let (ui, vi) = (u[r - 1], v[r - 1]);
        let cols = out[r * n + r..(r + 1) * n]
            .iter_mut()
            .zip(&mut q[r..])
            .zip(&mut m[r..])
            .zip(q_prev[r - 1..n - 1].iter().zip(&m_prev[r - 1..n - 1]))
            .zip(u[r - 1..n - 1].iter().zip(&v[r - 1..n - 1]));
        for ((((o, qc), mc), (qp, mp)), (&uk, &vk)) in cols {
            *qc = rho * qp + ui * vk + uk * vi - ui * uk;
            *mc = rho * mp + ui * uk;
            *o = w_off * *qc + w_diag * *mc;
        }
        std::mem::swap(&mut q, &mut q_prev);
        std::mem::swap(&mut m, &mut m_prev);
    }
}

/// Copy the upper triangle of a row-major matrix onto its lower triangle.
fn mirror_upper(out: &mut [f64], n: usize) {
    for i in 0..n {
        for j in 0..i {
            out[i * n + j] = out[j * n + i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::oracle::{self, quadrature_oracle, Integrand, Region};
    use crate::quadrature::{breakpoints, integrate_2d, integrate_points, QuadSettings};
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn k1() -> DcKernel {
        DcKernel::new(1.0, 0.5, 1.0).unwrap()
    }

    #[test]
    fn rejects_inadmissible_hyperparameters() {
        assert!(DcKernel::new(0.0, 0.0, 1.0).is_err());
        assert!(DcKernel::new(1.0, 1.5, 1.0).is_err());
        assert!(DcKernel::new(1.0, -0.1, 1.0).is_err());
        assert!(DcKernel::new(1.0, 0.5, -1.0).is_err());
        assert!(DcKernel::new(f64::NAN, 0.5, 1.0).is_err());
    }

    #[test]
    fn json_is_flat() {
        let k = k1();
        let s = serde_json::to_string(&k).unwrap();
        assert_eq!(s, r#"{"alpha":1.0,"beta":0.5,"lambda":1.0}"#);
        let back: DcKernel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, k);
        assert!(serde_json::from_str::<DcKernel>(r#"{"alpha":1.0,"beta":2.0,"lambda":1.0}"#).is_err());
    }

    #[test]
    fn pointwise_values() {
        assert_eq!(k1().kappa_g(0.0, 0.0).unwrap(), 1.0);
        let k2 = DcKernel::new(0.7, 0.3, 2.0).unwrap();
        assert!(rel(k2.kappa_g(1.3, 1.3).unwrap(), 2.0 * (-2.0f64 * 0.7 * 1.3).exp()) < 1e-15);
        let expect = (-3.0f64).exp() * (-0.5f64).exp();
        assert!(rel(k1().kappa_g(1.0, 2.0).unwrap(), expect) < 1e-15);
        assert!(k1().kappa_g(-1.0, 0.0).is_err());
    }

    #[test]
    fn cell_matches_quadrature() {
        let q = oracle::cell(&k1(), 0.1, 1, 1).unwrap();
        assert!(rel(k1().kappa_gd(0.1, 1, 1).unwrap(), q) < 1e-8);
        for (s, s2) in [(2, 5), (7, 3), (4, 4), (1, 9)] {
            let q = oracle::cell(&k1(), 0.1, s, s2).unwrap();
            assert!(rel(k1().kappa_gd(0.1, s, s2).unwrap(), q) < 1e-10, "{s},{s2}");
        }
        assert_eq!(k1().kappa_gd(0.1, 2, 5).unwrap(), k1().kappa_gd(0.1, 5, 2).unwrap());
        let zero = DcKernel::new(1.0, 0.5, 0.0).unwrap();
        assert_eq!(zero.kappa_gd(0.1, 3, 3).unwrap(), 0.0);
        assert!(k1().kappa_gd(0.1, 0, 1).is_err());
    }

    #[test]
    fn separable_square_oracle() {
        let k = DcKernel::new(1.0, 0.0, 1.0).unwrap();
        let t: f64 = 0.37;
        let est = quadrature_oracle(&k, Region::Rectangle { tau: (0.0, t), tau2: (0.0, t) }, Integrand::Kernel).unwrap();
        assert!(rel(est.value.re, (1.0 - (-t).exp()).powi(2)) < 1e-12);
    }

    #[test]
    fn printed_constants_agree_away_from_cancellation() {
        let (a, b, t) = (1.3f64, 0.4f64, 0.2f64);
        let k = DcKernel::new(a, b, 1.0).unwrap();
        let c = k.derived_constants(t, 10).unwrap();
        let l1 = (1.0 - ((a - b) * t).exp()) * (1.0 - ((a + b) * t).exp()) / (a * a - b * b);
        let l2 = (-2.0 * a * ((a - b) * t).exp() - (2.0 * a * t).exp() * (b - a) + a + b) / (a.powi(3) - a * b * b);
        let l4 = (-2.0 * a * ((a + b) * t).exp() - (2.0 * a * t).exp() * (-b - a) + a - b) / (a.powi(3) - a * b * b);
        let p = 10.0 * t;
        let l3 = (-(a + b) * p).exp() / ((1.0 - (-2.0 * a * p).exp()) * (1.0 - (-(a + b) * p).exp()));
        assert!(rel(c.lambda1, l1) < 1e-12);
        assert!(rel(c.lambda2, l2) < 1e-10);
        assert!(rel(c.lambda3, l3) < 1e-12);
        assert!(rel(c.lambda4, l4) < 1e-10);
        for (s, s2) in [(1, 1), (2, 5), (7, 3), (4, 4)] {
            assert!(rel(c.cell(&k, t, s, s2), k.kappa_gd(t, s, s2).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn diagonal_cell_is_smooth_across_series_switch() {
        let t = 0.1;
        for &d in &[0.999_999, 1.000_001, 1e-9, 0.0] {
            let k = DcKernel::new(5.0, 5.0 - d, 1.0).unwrap();
            let q = oracle::cell(&k, t, 3, 3).unwrap();
            assert!(rel(k.kappa_gd(t, 3, 3).unwrap(), q) < 1e-10, "d = {d}");
        }
    }

    #[test]
    fn line_cell_branches_match_quadrature() {
        for tau in [0.03, 0.15, 0.42] {
            let q = oracle::line_cell(&k1(), 0.1, tau, 2).unwrap();
            assert!(rel(k1().kappa_ggd(0.1, tau, 2).unwrap(), q) < 1e-8, "tau {tau}");
        }
        let hi = k1().kappa_ggd(0.1, 0.2 + 1e-12, 2).unwrap();
        let lo = k1().kappa_ggd(0.1, 0.2 - 1e-12, 2).unwrap();
        assert!((hi - lo).abs() <= 1e-9);
    }

    #[test]
    fn periodic_kernel_matches_double_series() {
        let k = k1();
        for (t1, t2) in [(0.0, 0.0), (0.3, 1.7), (1.9, 0.1), (1.0, 1.0)] {
            let s = oracle::series_periodic(&k, 2.0, t1, t2).unwrap();
            assert!(rel(k.kappa_gp(2.0, t1, t2).unwrap(), s) < 1e-10);
            assert_eq!(k.kappa_gp(2.0, t1, t2).unwrap(), k.kappa_gp(2.0, t2, t1).unwrap());
        }
        assert!(k.kappa_gp(2.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn periodic_kernel_tends_to_base_for_long_periods() {
        let k = k1();
        let p = 40.0;
        assert!(rel(k.kappa_gp(p, 0.4, 1.1).unwrap(), k.kappa_g(0.4, 1.1).unwrap()) < 1e-6);
    }

    #[test]
    fn line_periodic_matches_series_and_beta_zero_product() {
        let k = DcKernel::new(0.8, 0.35, 1.7).unwrap();
        for (tau, tau2) in [(0.0, 0.5), (0.5, 0.5), (3.3, 1.2), (9.99, 0.01), (1.0, 1.9)] {
            let s = oracle::series_line_periodic(&k, 2.0, tau, tau2).unwrap();
            assert!(rel(k.kappa_ggp(2.0, tau, tau2).unwrap(), s) < 1e-10, "{tau},{tau2}");
        }
        let k0 = DcKernel::new(0.8, 0.0, 1.0).unwrap();
        let (tau, tau2, p) = (2.7f64, 0.9f64, 2.0f64);
        let exact = (-0.8 * tau).exp() * (-0.8 * tau2).exp() / (1.0 - (-0.8 * p).exp());
        assert!(rel(k0.kappa_ggp(p, tau, tau2).unwrap(), exact) < 1e-13);
        assert_eq!(DcKernel::new(0.8, 0.1, 0.0).unwrap().kappa_ggp(p, tau, tau2).unwrap(), 0.0);
    }

    #[test]
    fn periodic_cells_match_double_series() {
        let k = DcKernel::new(1.4, 0.9, 0.6).unwrap();
        let (t, n) = (0.07, 6);
        for s in 1..=n {
            for s2 in 1..=n {
                let series = oracle::series_cell_periodic(&k, t, n, s, s2).unwrap();
                assert!(rel(k.kappa_gdp(t, n, s, s2).unwrap(), series) < 1e-9);
            }
        }
        assert_eq!(k.kappa_gdp(t, n, 2, 5).unwrap(), k.kappa_gdp(t, n, 5, 2).unwrap());
    }

    #[test]
    fn periodic_cells_tend_to_cells_for_long_records() {
        let k = k1();
        let (t, n) = (0.1, 400);
        assert!(rel(k.kappa_gdp(t, n, 3, 7).unwrap(), k.kappa_gd(t, 3, 7).unwrap()) < 1e-6);
    }

    #[test]
    fn periodic_line_cells_match_series_and_are_continuous() {
        let k = DcKernel::new(0.9, 0.6, 2.0).unwrap();
        let (t, n) = (0.11, 5);
        let period = n as f64 * t;
        for s2 in 1..=n {
            for i in 0..60 {
                let tau = i as f64 * 0.037;
                let series = oracle::series_line_cell_periodic(&k, t, n, tau, s2).unwrap();
                assert!(rel(k.kappa_ggdp(t, n, tau, s2).unwrap(), series) < 1e-9, "tau {tau} s2 {s2}");
            }
            for m in 0..12 {
                let edge = m as f64 * t;
                let left = k.kappa_ggdp(t, n, (edge - 1e-12).max(0.0), s2).unwrap();
                let right = k.kappa_ggdp(t, n, edge + 1e-12, s2).unwrap();
                assert!((left - right).abs() <= 1e-8, "edge {edge} s2 {s2}");
            }
        }
        assert!(k.kappa_ggdp(t, n, 0.1, n + 1).is_err());
        let _ = period;
    }

    #[test]
    fn one_sided_periodic_cells_match_series() {
        let k = DcKernel::new(0.9, 0.3, 1.0).unwrap();
        let (t, n) = (0.2, 4);
        for s in 1..=14 {
            for s2 in 1..=n {
                let series = oracle::series_cell_one_sided(&k, t, n, s, s2).unwrap();
                assert!(rel(k.kappa_gd_one_sided_periodic(t, n, s, s2).unwrap(), series) < 1e-9);
            }
        }
    }

    fn periodic_fourier_quadrature(k: &DcKernel, period: f64, n: i64, n2: i64) -> Complex64 {
        let w0 = std::f64::consts::TAU / period;
        let (a, b) = (n as f64 * w0, n2 as f64 * w0);
        let est = integrate_2d(
            |x, y| k.kappa_gp(period, x, y).unwrap() * Complex64::from_polar(1.0, b * y - a * x),
            &breakpoints(0.0, period, (1..8).map(|i| i as f64 * period / 8.0)),
            |x| breakpoints(0.0, period, (1..8).map(|i| i as f64 * period / 8.0).chain([x])),
            &QuadSettings::default(),
        )
        .unwrap();
        est.value
    }

    #[test]
    fn fourier_integrals_match_periodic_quadrature() {
        let k = k1();
        let period = 2.0;
        for (n, n2) in [(0, 0), (1, -3), (5, 2), (-7, -7), (3, 0)] {
            let closed = k.fourier_kernel_integrals(period, n, n2).unwrap();
            let quad = periodic_fourier_quadrature(&k, period, n, n2);
            assert!((closed - quad).norm() <= 1e-8 * quad.norm(), "{n},{n2}: {closed} vs {quad}");
            let mirrored = k.fourier_kernel_integrals(period, -n, -n2).unwrap();
            assert!((closed - mirrored.conj()).norm() <= 1e-14 * closed.norm());
        }
        let k0 = DcKernel::new(0.6, 0.0, 1.5).unwrap();
        let dc = k0.fourier_kernel_integrals(3.0, 0, 0).unwrap();
        let quad = periodic_fourier_quadrature(&k0, 3.0, 0, 0);
        assert!(dc.im.abs() < 1e-15 && rel(dc.re, quad.re) < 1e-8);
        assert!(rel(dc.re, 1.5 / (0.6 * 0.6)) < 1e-13);
    }

    #[test]
    fn cross_fourier_matches_periodic_quadrature() {
        let k = DcKernel::new(0.7, 0.45, 1.3).unwrap();
        let period = 2.5;
        let w0 = std::f64::consts::TAU / period;
        for tau in [0.0, 0.4, 2.6, 7.1] {
            for n2 in [0i64, 1, -2, 6] {
                let b = n2 as f64 * w0;
                let pts = breakpoints(0.0, period, [tau % period]);
                let quad = integrate_points(
                    |y| k.kappa_ggp(period, tau, y).unwrap() * Complex64::from_polar(1.0, b * y),
                    &pts,
                    &QuadSettings::default(),
                )
                .unwrap()
                .value;
                let closed = k.fourier_cross_integral(period, tau, n2).unwrap();
                assert!((closed - quad).norm() <= 1e-8 * quad.norm(), "tau {tau} n2 {n2}");
                let mirrored = k.fourier_cross_integral(period, tau, -n2).unwrap();
                assert!((closed - mirrored.conj()).norm() <= 1e-14 * closed.norm());
            }
        }
        let zero = DcKernel::new(0.7, 0.45, 0.0).unwrap();
        assert_eq!(zero.fourier_cross_integral(period, 1.0, 3).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn factored_gram_matches_pointwise() {
        let k = DcKernel::new(2.0, 1.2, 0.9).unwrap();
        let t = [0.0, 0.35, 0.1, 2.0, 0.35];
        let g = k.gram(&t);
        for i in 0..t.len() {
            for j in 0..t.len() {
                assert!(rel(g[i * 5 + j], k.value(t[i], t[j])) < 1e-14);
            }
        }
    }

    #[test]
    fn za_recursion_matches_explicit_double_sum() {
        let k = DcKernel::new(1.1, 0.7, 0.8).unwrap();
        let t = 0.13;
        let u = [0.3, -1.2, 0.0, 2.2, 0.7, -0.4, 1.0];
        let n = u.len();
        let fast = k.za_output_covariance(&u, t).unwrap();
        for i in 0..n {
            for j in 0..n {
                let mut direct = 0.0;
                for s in 1..=i {
                    for s2 in 1..=j {
                        direct += u[i - s] * u[j - s2] * k.kappa_gd(t, s, s2).unwrap();
                    }
                }
                assert!((fast[i * n + j] - direct).abs() <= 1e-13 * direct.abs().max(1e-3), "{i},{j}");
            }
        }
    }

    fn admissible() -> impl Strategy<Value = (DcKernel, f64)> {
        (
            (0.05f64.ln()..20f64.ln()),
            0.0f64..0.95,
            (1e-3f64.ln()..1e3f64.ln()),
            (0.01f64.ln()..0.5f64.ln()),
        )
            .prop_map(|(la, r, ll, lt)| {
                let a = la.exp();
                (DcKernel::new(a, r * a, ll.exp()).unwrap(), lt.exp())
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn cells_are_linear_in_scale((k, t) in admissible(), s in 1usize..8, s2 in 1usize..8, tau in 0.0f64..3.0) {
            let k2 = k.with_lambda(3.0 * k.lambda()).unwrap();
            prop_assert!(rel(k2.kappa_gd(t, s, s2).unwrap(), 3.0 * k.kappa_gd(t, s, s2).unwrap()) < 1e-14);
            prop_assert!(rel(k2.kappa_ggdp(t, 8, tau, s2).unwrap(), 3.0 * k.kappa_ggdp(t, 8, tau, s2).unwrap()) < 1e-14);
        }

        #[test]
        fn cell_gram_is_positive_semidefinite((k, t) in admissible(), periodic in any::<bool>()) {
            let n = 8;
            let g = k.cell_gram(t, n, periodic).unwrap();
            let m = nalgebra::DMatrix::from_row_slice(n, n, &g);
            prop_assert!((&m - m.transpose()).amax() == 0.0);
            let trace = m.trace();
            let min = m.symmetric_eigenvalues().min();
            prop_assert!(min >= -1e-8 * trace / n as f64);
        }

        #[test]
        fn line_cells_decay_under_envelope((k, t) in admissible(), s2 in 1usize..6, tau in 0.0f64..40.0) {
            let v = k.kappa_ggd(t, tau, s2).unwrap();
            let a = (s2 - 1) as f64 * t;
            let bound = k.lambda() * t * (-(k.alpha() - k.beta()) * (tau - a - t).max(0.0)).exp();
            prop_assert!(v >= 0.0 && v <= bound * (1.0 + 1e-12));
        }

        #[test]
        fn cells_match_quadrature_sweep((k, t) in admissible(), s in 1usize..6, s2 in 1usize..6) {
            let q = oracle::cell(&k, t, s, s2).unwrap();
            let c = k.kappa_gd(t, s, s2).unwrap();
            prop_assert!((c - q).abs() <= 1e-8 * q.abs() + 1e-300, "{c} vs {q}");
        }
    }
}
