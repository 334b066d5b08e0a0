//! Output covariance `Σ_y` and impulse/output cross-covariance rows
//! `Σ_gy(τ)` for the supported input behaviors.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::ImpulseKernel;
use crate::signals::{check_nyquist, dft, Intersample, PastBehavior, SampledSignal};

/// Supported (intersample, past) input combinations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Combo {
    ZohPa,
    ZohZa,
    BlPa,
}

impl Combo {
    pub const ALL: [Combo; 3] = [Combo::ZohPa, Combo::ZohZa, Combo::BlPa];

    pub fn intersample(self) -> Intersample {
        match self {
            Combo::ZohPa | Combo::ZohZa => Intersample::Zoh,
            Combo::BlPa => Intersample::Bl,
        }
    }

    pub fn past(self) -> PastBehavior {
        match self {
            Combo::ZohPa | Combo::BlPa => PastBehavior::Pa,
            Combo::ZohZa => PastBehavior::Za,
        }
    }

    /// The combination a signal declares; a ZOH signal with unknown past is
    /// modelled as zero-past (the transient term absorbs the difference).
    pub fn of(u: &SampledSignal) -> Result<Combo> {
        match (u.intersample(), u.past()) {
            (Intersample::Zoh, PastBehavior::Pa) => Ok(Combo::ZohPa),
            (Intersample::Zoh, PastBehavior::Za | PastBehavior::Unknown) => Ok(Combo::ZohZa),
            (Intersample::Bl, PastBehavior::Pa) => Ok(Combo::BlPa),
            (i, p) => Err(Error::Behavior(format!("no covariance model for {i} input with {p} past"))),
        }
    }

    fn check(self, u: &SampledSignal) -> Result<()> {
        if u.intersample() == self.intersample() && u.past() == self.past() {
            Ok(())
        } else {
            Err(Error::Behavior(format!(
                "{self} builder needs {} input with {} past, got {} with {}",
                self.intersample(),
                self.past(),
                u.intersample(),
                u.past()
            )))
        }
    }
}

impl fmt::Display for Combo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Combo::ZohPa => "zoh-pa",
            Combo::ZohZa => "zoh-za",
            Combo::BlPa => "bl-pa",
        })
    }
}

impl FromStr for Combo {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zoh-pa" => Ok(Combo::ZohPa),
            "zoh-za" => Ok(Combo::ZohZa),
            "bl-pa" => Ok(Combo::BlPa),
            other => Err(Error::Config(format!("unknown combo {other:?}; expected zoh-pa, zoh-za or bl-pa"))),
        }
    }
}

/// Additive transient prior `κ_t = α_t·κ`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransientKernel<K> {
    pub base: K,
    alpha_t: f64,
}

impl<K: ImpulseKernel> TransientKernel<K> {
    pub fn new(base: K, alpha_t: f64) -> Result<Self> {
        if !(alpha_t.is_finite() && alpha_t >= 0.0) {
            return Err(Error::Hyperparameters(format!("alpha_t must be non-negative, got {alpha_t}")));
        }
        Ok(Self { base, alpha_t })
    }

    pub fn alpha_t(&self) -> f64 {
        self.alpha_t
    }

    pub fn value(&self, t: f64, t2: f64) -> f64 {
        self.alpha_t * self.base.value(t, t2)
    }
}

#[derive(Clone, Debug)]
enum CrossEval {
    Cells { periodic: bool },
    /// `weights[k][b] = conj(U(n′)) e^{−jn′ω₀t_k} / N` at angular bins `bins[b]`.
    Fourier { bins: Vec<f64>, weights: Vec<Complex64> },
}

/// Coefficients that turn a solved vector `c` into `ĝ(τ) = Σ_gy(τ)·c`.
#[derive(Clone, Debug)]
pub(crate) enum ImpulseWeights {
    /// `w = Uᵀc`, weights on `line_cell(τ, s′)`.
    Cells(Vec<f64>),
    /// Weights on `line_fourier(τ, b)` per bin.
    Fourier(Vec<Complex64>),
}

/// `Σ_y` together with an evaluator for `Σ_gy(τ)`.
#[derive(Clone, Debug)]
pub struct CovariancePair<K> {
    kernel: K,
    combo: Combo,
    input: SampledSignal,
    sigma_y: Vec<f64>,
    cross: CrossEval,
    alpha_t: f64,
}

impl<K: ImpulseKernel> CovariancePair<K> {
    pub fn combo(&self) -> Combo {
        self.combo
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    pub fn input(&self) -> &SampledSignal {
        &self.input
    }

    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    /// Scale of the transient block added by [`augment_transient`] (0 if none).
    pub fn transient_scale(&self) -> f64 {
        self.alpha_t
    }

    /// Row-major `N × N` output covariance.
    pub fn sigma_y(&self) -> &[f64] {
        &self.sigma_y
    }

    pub fn sigma_y_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_row_slice(n, n, &self.sigma_y)
    }

    /// `Σ_gy(τ)`, the covariance of `g(τ)` with each output sample.
    pub fn cross_row(&self, tau: f64) -> Result<Vec<f64>> {
        let n = self.len();
        match &self.cross {
            CrossEval::Cells { periodic } => {
                let lines = self.kernel.line_cells(self.input.ts(), n, tau, *periodic)?;
                let u = regressor(&self.input, *periodic)?;
                Ok((0..n)
                    .map(|i| u[i * n..(i + 1) * n].iter().zip(&lines).map(|(a, b)| a * b).sum())
                    .collect())
            }
            CrossEval::Fourier { bins, weights } => {
                let g = bins
                    .iter()
                    .map(|&b| self.kernel.line_fourier(tau, b))
                    .collect::<Result<Vec<_>>>()?;
                let nb = bins.len();
                Ok((0..n)
                    .map(|k| weights[k * nb..(k + 1) * nb].iter().zip(&g).map(|(w, g)| w * g).sum::<Complex64>().re)
                    .collect())
            }
        }
    }

    pub(crate) fn impulse_weights(&self, c: &[f64]) -> Result<ImpulseWeights> {
        let n = self.len();
        if c.len() != n {
            return Err(Error::Dimension(format!("coefficient vector has {} entries, expected {n}", c.len())));
        }
        match &self.cross {
            CrossEval::Cells { periodic } => {
                let mut w = vec![0.0; n];
                for (s, ws) in w.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (i, &ci) in c.iter().enumerate() {
                        let k = i as i64 - s as i64 - 1;
                        if k >= 0 || *periodic {
                            acc += ci * self.input.sample_at(k)?;
                        }
                    }
                    *ws = acc;
                }
                Ok(ImpulseWeights::Cells(w))
            }
            CrossEval::Fourier { bins, weights } => {
                let nb = bins.len();
                let mut z = vec![Complex64::new(0.0, 0.0); nb];
                for (k, &ck) in c.iter().enumerate() {
                    for (zb, w) in z.iter_mut().zip(&weights[k * nb..(k + 1) * nb]) {
                        *zb += w * ck;
                    }
                }
                Ok(ImpulseWeights::Fourier(z))
            }
        }
    }

    /// `ĝ(τ)` given precomputed weights.
    pub(crate) fn impulse_value(&self, w: &ImpulseWeights, tau: f64) -> Result<f64> {
        match (w, &self.cross) {
            (ImpulseWeights::Cells(w), CrossEval::Cells { periodic }) => {
                let lines = self.kernel.line_cells(self.input.ts(), self.len(), tau, *periodic)?;
                Ok(lines.iter().zip(w).map(|(a, b)| a * b).sum())
            }
            (ImpulseWeights::Fourier(z), CrossEval::Fourier { bins, .. }) => {
                let mut acc = Complex64::new(0.0, 0.0);
                for (zb, &b) in z.iter().zip(bins) {
                    acc += zb * self.kernel.line_fourier(tau, b)?;
                }
                Ok(acc.re)
            }
            _ => Err(Error::Dimension("impulse weights do not match the covariance kind".into())),
        }
    }

    /// Bins of the Fourier cross evaluator, if any.
    pub(crate) fn fourier_bins(&self) -> Option<&[f64]> {
        match &self.cross {
            CrossEval::Fourier { bins, .. } => Some(bins),
            CrossEval::Cells { .. } => None,
        }
    }

    /// Whether the cross evaluator sums periodic cell shifts.
    pub(crate) fn periodic_cells(&self) -> Option<bool> {
        match &self.cross {
            CrossEval::Cells { periodic } => Some(*periodic),
            CrossEval::Fourier { .. } => None,
        }
    }
}

/// Row-major regressor `U[i][s−1] = u(i − s)`, `s = 1..=N`.
fn regressor(u: &SampledSignal, periodic: bool) -> Result<Vec<f64>> {
    let n = u.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for s in 1..=n {
            let k = i as i64 - s as i64;
            if k >= 0 || periodic {
                out[i * n + s - 1] = u.sample_at(k)?;
            }
        }
    }
    Ok(out)
}

fn symmetrize(m: &mut [f64], n: usize) {
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = v;
            m[j * n + i] = v;
        }
    }
}

/// `U K Uᵀ` for the cell Gram `K`.
fn sandwich(u: &[f64], k: &[f64], n: usize) -> Vec<f64> {
    let um = DMatrix::from_row_slice(n, n, u);
    let km = DMatrix::from_row_slice(n, n, k);
    let s = &um * km * um.transpose();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = s[(i, j)];
        }
    }
    out
}

fn cell_pair<K: ImpulseKernel>(u: &SampledSignal, k: K, combo: Combo) -> Result<CovariancePair<K>> {
    combo.check(u)?;
    let n = u.len();
    let periodic = combo == Combo::ZohPa;
    let mut sigma_y = match (periodic, k.za_output_covariance(u.samples(), u.ts())) {
        (false, Some(fast)) => fast,
        _ => {
            let gram = k.cell_gram(u.ts(), n, periodic)?;
            sandwich(&regressor(u, periodic)?, &gram, n)
        }
    };
    symmetrize(&mut sigma_y, n);
    finite(&sigma_y)?;
    Ok(CovariancePair {
        kernel: k,
        combo,
        input: u.clone(),
        sigma_y,
        cross: CrossEval::Cells { periodic },
        alpha_t: 0.0,
    })
}

fn finite(m: &[f64]) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("output covariance".into()))
    }
}

/// ZOH input, periodic past: `Σ_y = U K_dp Uᵀ` with the wrapped regressor.
pub fn build_zoh_pa<K: ImpulseKernel>(u: &SampledSignal, k: K) -> Result<CovariancePair<K>> {
    cell_pair(u, k, Combo::ZohPa)
}

/// ZOH input, zero past: lower-triangular Toeplitz regressor and plain cells.
pub fn build_zoh_za<K: ImpulseKernel>(u: &SampledSignal, k: K) -> Result<CovariancePair<K>> {
    cell_pair(u, k, Combo::ZohZa)
}

/// Band-limited periodic input, assembled over DFT bins `|n| < N/2`.
pub fn build_bl_pa<K: ImpulseKernel>(u: &SampledSignal, k: K) -> Result<CovariancePair<K>> {
    Combo::BlPa.check(u)?;
    let n = u.len();
    let coeffs = dft(u);
    check_nyquist(&coeffs, u.samples())?;
    let w0 = coeffs.omega0();
    let bins: Vec<(f64, Complex64)> = coeffs.iter().map(|(m, c)| (m as f64 * w0, c)).collect();
    let nb = bins.len();
    let t = u.times();
    // left[i][b] = U(n) e^{jnω₀tᵢ} / N; the cross weights are its conjugate.
    let mut left = DMatrix::<Complex64>::zeros(n, nb);
    let mut weights = vec![Complex64::new(0.0, 0.0); n * nb];
    for (i, &ti) in t.iter().enumerate() {
        for (b, &(freq, c)) in bins.iter().enumerate() {
            let v = c * Complex64::from_polar(1.0, freq * ti) / n as f64;
            left[(i, b)] = v;
            weights[i * nb + b] = v.conj();
        }
    }
    let mut f = DMatrix::<Complex64>::zeros(nb, nb);
    for (a, &(fa, _)) in bins.iter().enumerate() {
        for (b, &(fb, _)) in bins.iter().enumerate() {
            f[(a, b)] = k.fourier(fa, fb)?;
        }
    }
    let full = &left * f * left.adjoint();
    let mut sigma_y = vec![0.0; n * n];
    let mut residue: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = full[(i, j)];
            sigma_y[i * n + j] = v.re;
            residue = residue.max(v.im.abs());
            scale = scale.max(v.re.abs());
        }
    }
    let tolerance = 1e-9 * scale;
    if residue > tolerance && residue > f64::MIN_POSITIVE {
        return Err(Error::ImaginaryResidue { residue, tolerance });
    }
    symmetrize(&mut sigma_y, n);
    finite(&sigma_y)?;
    Ok(CovariancePair {
        kernel: k,
        combo: Combo::BlPa,
        input: u.clone(),
        sigma_y,
        cross: CrossEval::Fourier {
            bins: bins.iter().map(|&(f, _)| f).collect(),
            weights,
        },
        alpha_t: 0.0,
    })
}

/// Dispatch on `combo`.
pub fn build<K: ImpulseKernel>(u: &SampledSignal, k: K, combo: Combo) -> Result<CovariancePair<K>> {
    match combo {
        Combo::ZohPa => build_zoh_pa(u, k),
        Combo::ZohZa => build_zoh_za(u, k),
        Combo::BlPa => build_bl_pa(u, k),
    }
}

/// Dispatch on the behavior `u` declares; an unknown past is built as zero
/// past.
pub fn build_declared<K: ImpulseKernel>(u: &SampledSignal, k: K) -> Result<CovariancePair<K>> {
    let combo = Combo::of(u)?;
    if u.past() == PastBehavior::Unknown {
        build(&u.with_past(PastBehavior::Za)?, k, combo)
    } else {
        build(u, k, combo)
    }
}

/// Add the transient block `κ_t(t, tᵀ)` to `Σ_y`; the cross evaluator is
/// unchanged.
pub fn augment_transient<K: ImpulseKernel, T: ImpulseKernel>(
    base: CovariancePair<K>,
    tk: &TransientKernel<T>,
    t_grid: &[f64],
) -> Result<CovariancePair<K>> {
    let n = base.len();
    if t_grid.len() != n {
        return Err(Error::Dimension(format!("time grid has {} points, expected {n}", t_grid.len())));
    }
    if tk.alpha_t == 0.0 {
        return Ok(base);
    }
    let gram = tk.base.gram(t_grid);
    let mut out = base;
    for (s, g) in out.sigma_y.iter_mut().zip(&gram) {
        *s += tk.alpha_t * g;
    }
    finite(&out.sigma_y)?;
    out.alpha_t += tk.alpha_t;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::DcKernel;

    fn k() -> DcKernel {
        DcKernel::new(1.2, 0.5, 2.0).unwrap()
    }

    #[test]
    fn combo_names_round_trip() {
        for c in Combo::ALL {
            assert_eq!(c.to_string().parse::<Combo>().unwrap(), c);
            let json = serde_json::to_string(&c).unwrap();
            assert_eq!(json, format!("\"{c}\""));
        }
        assert!("zoh".parse::<Combo>().is_err());
    }

    #[test]
    fn behavior_mismatch_is_rejected() {
        let u = SampledSignal::zoh(vec![1.0, 0.0, 2.0], 0.1, PastBehavior::Za).unwrap();
        assert!(matches!(build_zoh_pa(&u, k()), Err(Error::Behavior(_))));
        assert!(matches!(build_bl_pa(&u, k()), Err(Error::Behavior(_))));
        assert!(build_zoh_za(&u, k()).is_ok());
    }

    #[test]
    fn zero_input_gives_zero_matrices() {
        for combo in Combo::ALL {
            let u = SampledSignal::new(vec![0.0; 5], 0.1, combo.intersample(), combo.past()).unwrap();
            let p = build(&u, k(), combo).unwrap();
            assert!(p.sigma_y().iter().all(|&v| v == 0.0), "{combo}");
            assert!(p.cross_row(0.3).unwrap().iter().all(|&v| v == 0.0), "{combo}");
        }
    }

    #[test]
    fn unit_pulse_zero_past_is_shifted_cell_gram() {
        let u = SampledSignal::zoh(vec![1.0, 0.0, 0.0], 0.2, PastBehavior::Za).unwrap();
        let p = build_zoh_za(&u, k()).unwrap();
        let s = p.sigma_y();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == 0 || j == 0 { 0.0 } else { k().kappa_gd(0.2, i, j).unwrap() };
                assert!((s[i * 3 + j] - expect).abs() <= 1e-14 * expect.abs().max(1e-300), "{i},{j}");
            }
        }
    }

    #[test]
    fn unit_pulse_periodic_past_is_wrapped_cell_gram() {
        let n = 4;
        let u = SampledSignal::zoh(vec![1.0, 0.0, 0.0, 0.0], 0.15, PastBehavior::Pa).unwrap();
        let p = build_zoh_pa(&u, k()).unwrap();
        // u(i − s) = 1 iff s ≡ i (mod N), i.e. s = i for i ≥ 1 and s = N for i = 0.
        let cell = |i: usize| if i == 0 { n } else { i };
        for i in 0..n {
            for j in 0..n {
                let expect = k().kappa_gdp(0.15, n, cell(i), cell(j)).unwrap();
                assert!((p.sigma_y()[i * n + j] - expect).abs() <= 1e-13 * expect);
            }
        }
    }

    #[test]
    fn fast_zero_past_path_matches_generic_sandwich() {
        let u = SampledSignal::zoh(vec![0.4, -1.0, 2.0, 0.3, 0.0, -0.7], 0.3, PastBehavior::Za).unwrap();
        let fast = build_zoh_za(&u, k()).unwrap();
        let n = u.len();
        let gram = k().cell_gram(0.3, n, false).unwrap();
        let slow = sandwich(&regressor(&u, false).unwrap(), &gram, n);
        for (a, b) in fast.sigma_y().iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-6));
        }
    }

    #[test]
    fn transient_block_is_plain_gram() {
        let u = SampledSignal::zoh(vec![1.0, -1.0, 1.0], 0.1, PastBehavior::Za).unwrap();
        let base = build_zoh_za(&u, k()).unwrap();
        let t = u.times();
        let same = augment_transient(base.clone(), &TransientKernel::new(k(), 0.0).unwrap(), &t).unwrap();
        assert_eq!(same.sigma_y(), base.sigma_y());
        let aug = augment_transient(base.clone(), &TransientKernel::new(k(), 1.0).unwrap(), &t).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let added = aug.sigma_y()[i * 3 + j] - base.sigma_y()[i * 3 + j];
                assert!((added - k().value(t[i], t[j])).abs() < 1e-14);
            }
        }
        assert!(augment_transient(base, &TransientKernel::new(k(), 1.0).unwrap(), &t[..2]).is_err());
        assert!(TransientKernel::new(k(), -1.0).is_err());
    }

    #[test]
    fn band_limited_sigma_is_real_symmetric() {
        let n = 9;
        let u: Vec<f64> = (0..n).map(|i| (0.7 * i as f64).sin() + 0.2 * (i as f64 * 1.9).cos()).collect();
        let sig = SampledSignal::bl(u, 0.25).unwrap();
        let p = build_bl_pa(&sig, k()).unwrap();
        let s = p.sigma_y();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(s[i * n + j], s[j * n + i]);
            }
        }
        let min = p.sigma_y_matrix().symmetric_eigenvalues().min();
        assert!(min >= -1e-8 * p.sigma_y_matrix().trace() / n as f64);
    }
}
