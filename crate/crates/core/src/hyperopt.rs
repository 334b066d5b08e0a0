//! Empirical-Bayes hyperparameter estimation: the Gaussian negative log
//! marginal likelihood and a multistart, box-projected Nelder–Mead search.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{build, Combo, TransientKernel};
use crate::error::{Error, Result};
use crate::kernels::DcKernel;
use crate::linalg::SpdFactor;
use crate::signals::{PastBehavior, SampledSignal};
use crate::simulator::variance;

/// The full hyperparameter vector of the DC kernel, noise and transient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub sigma2: f64,
    #[serde(default)]
    pub alpha_t: f64,
}

impl HyperParams {
    pub fn kernel(&self) -> Result<DcKernel> {
        DcKernel::new(self.alpha, self.beta, self.lambda)
    }

    /// `α_t·κ_g` with the same DC kernel.
    pub fn transient(&self) -> Result<TransientKernel<DcKernel>> {
        TransientKernel::new(self.kernel()?, self.alpha_t)
    }

    fn validate(&self) -> Result<()> {
        self.kernel()?;
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(Error::Hyperparameters(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if !(self.alpha_t.is_finite() && self.alpha_t >= 0.0) {
            return Err(Error::Hyperparameters(format!("alpha_t must be non-negative, got {}", self.alpha_t)));
        }
        Ok(())
    }
}

/// Admissible box. `sigma2_rel` is relative to the sample variance of `y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperBounds {
    pub alpha: (f64, f64),
    /// Upper bound of `β/α`; the lower bound is 0.
    pub ratio_max: f64,
    pub lambda: (f64, f64),
    pub sigma2_rel: (f64, f64),
    pub alpha_t_max: f64,
}

impl Default for HyperBounds {
    fn default() -> Self {
        Self {
            alpha: (1e-2, 1e2),
            ratio_max: 0.99,
            lambda: (1e-6, 1e6),
            sigma2_rel: (1e-8, 10.0),
            alpha_t_max: 1e3,
        }
    }
}

fn lerp(lo: f64, hi: f64, x: f64) -> f64 {
    lo + (hi - lo) * x
}

fn unlerp(lo: f64, hi: f64, v: f64) -> f64 {
    if hi == lo {
        0.0
    } else {
        (v - lo) / (hi - lo)
    }
}

impl HyperBounds {
    pub fn validate(&self) -> Result<()> {
        let pos = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        if !(pos(self.alpha) && pos(self.lambda) && pos(self.sigma2_rel)) {
            return Err(Error::Config("log-scale bounds must satisfy 0 < lo ≤ hi < ∞".into()));
        }
        if !(0.0..=1.0).contains(&self.ratio_max) {
            return Err(Error::Config(format!("ratio_max must lie in [0, 1], got {}", self.ratio_max)));
        }
        if !(self.alpha_t_max.is_finite() && self.alpha_t_max >= 0.0) {
            return Err(Error::Config("alpha_t_max must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Number of optimized coordinates.
    pub fn dims(transient: bool) -> usize {
        if transient {
            5
        } else {
            4
        }
    }

    /// Map a point of the unit cube to hyperparameters: `α`, `λ`, `σ²`
    /// log-uniform, `β = r·α` with `r` uniform, `α_t = 10^z − 1` with `z`
    /// uniform on `[0, log₁₀(1 + α_t,max)]`.
    pub fn from_unit(&self, x: &[f64], var_y: f64) -> HyperParams {
        let log = |(lo, hi): (f64, f64), t: f64| 10f64.powf(lerp(lo.log10(), hi.log10(), t));
        let alpha = log(self.alpha, x[0]);
        let r = self.ratio_max * x[1];
        let alpha_t = match x.get(4) {
            Some(&z) => 10f64.powf(z * (1.0 + self.alpha_t_max).log10()) - 1.0,
            None => 0.0,
        };
        HyperParams {
            alpha,
            beta: r * alpha,
            lambda: log(self.lambda, x[2]),
            sigma2: var_y * log(self.sigma2_rel, x[3]),
            alpha_t: alpha_t.max(0.0),
        }
    }

    /// Inverse of [`from_unit`](Self::from_unit).
    pub fn to_unit(&self, hp: &HyperParams, var_y: f64, transient: bool) -> Vec<f64> {
        let log = |(lo, hi): (f64, f64), v: f64| unlerp(lo.log10(), hi.log10(), v.log10());
        let mut x = vec![
            log(self.alpha, hp.alpha),
            if self.ratio_max == 0.0 { 0.0 } else { hp.beta / hp.alpha / self.ratio_max },
            log(self.lambda, hp.lambda),
            log(self.sigma2_rel, hp.sigma2 / var_y),
        ];
        if transient {
            let top = (1.0 + self.alpha_t_max).log10();
            x.push(if top == 0.0 { 0.0 } else { hp.alpha_t.ln_1p() / std::f64::consts::LN_10 / top });
        }
        x
    }

    pub fn contains(&self, hp: &HyperParams, var_y: f64) -> bool {
        let tol = 1e-12;
        let within = |(lo, hi): (f64, f64), v: f64| v >= lo * (1.0 - tol) && v <= hi * (1.0 + tol);
        within(self.alpha, hp.alpha)
            && hp.beta >= 0.0
            && hp.beta <= self.ratio_max * hp.alpha * (1.0 + tol)
            && within(self.lambda, hp.lambda)
            && within((self.sigma2_rel.0 * var_y, self.sigma2_rel.1 * var_y), hp.sigma2)
            && hp.alpha_t >= 0.0
            && hp.alpha_t <= self.alpha_t_max * (1.0 + tol)
    }
}

/// Multistart search settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub n_starts: usize,
    pub seed: u64,
    /// Optimize `α_t`; when off the transient term is absent.
    pub transient: bool,
    pub bounds: HyperBounds,
    pub max_evals_per_start: usize,
    /// Relative spread of simplex objective values that ends a start.
    pub f_tol: f64,
    /// Simplex diameter in unit-cube coordinates that ends a start.
    pub x_tol: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            n_starts: 25,
            seed: 0,
            transient: true,
            bounds: HyperBounds::default(),
            max_evals_per_start: 250,
            f_tol: 1e-9,
            x_tol: 1e-5,
        }
    }
}

/// One start's outcome and the best objective after each iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub start: usize,
    pub initial: HyperParams,
    pub best: HyperParams,
    pub objective: f64,
    pub evaluations: usize,
    /// `(evaluations so far, best objective)` per iteration.
    pub history: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best: HyperParams,
    pub objective: f64,
    /// Index of the winning start.
    pub start: usize,
    pub starts: Vec<StartTrace>,
}

/// Precomputed pieces of the evidence for one data set.
struct Evidence<'a> {
    /// Input with an unknown past replaced by zero past.
    u: SampledSignal,
    combo: Combo,
    y: &'a [f64],
    times: Vec<f64>,
}

impl<'a> Evidence<'a> {
    fn new(u: &SampledSignal, y: &'a [f64]) -> Result<Self> {
        if y.len() != u.len() {
            return Err(Error::Dimension(format!("output has {} samples, input has {}", y.len(), u.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("output samples".into()));
        }
        let combo = Combo::of(u)?;
        let u = if u.past() == PastBehavior::Unknown { u.with_past(PastBehavior::Za)? } else { u.clone() };
        Ok(Self { times: u.times(), u, combo, y })
    }

    /// Evaluate using `buf` as the `N × N` workspace; it is handed back for
    /// the next call.
    fn eval(&self, hp: &HyperParams, buf: &mut Vec<f64>) -> Result<f64> {
        hp.validate()?;
        let n = self.y.len();
        let k = hp.kernel()?;
        let mut a = std::mem::take(buf);
        a.resize(n * n, 0.0);
        if self.combo == Combo::ZohZa {
            k.za_output_covariance_upper(self.u.samples(), self.u.ts(), &mut a)?;
        } else {
            a.copy_from_slice(build(&self.u, k, self.combo)?.sigma_y());
        }
        if hp.alpha_t > 0.0 {
            k.add_gram_upper(&self.times, hp.alpha_t, &mut a);
        }
        for i in 0..n {
            a[i * n + i] += hp.sigma2;
        }
        let factor = SpdFactor::from_upper(a, n)?;
        let z = factor.forward(self.y);
        let quad: f64 = z.iter().map(|v| v * v).sum();
        let value = quad + factor.log_det() + n as f64 * (2.0 * std::f64::consts::PI).ln();
        *buf = factor.into_buffer();
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite("marginal likelihood".into()))
        }
    }

    /// Numeric failures become `+∞` so the search treats them as infeasible.
    fn eval_or_inf(&self, hp: &HyperParams, buf: &mut Vec<f64>) -> f64 {
        self.eval(hp, buf).unwrap_or_else(|e| {
            log::debug!("objective infeasible at {hp:?}: {e}");
            f64::INFINITY
        })
    }
}

/// `yᵀ(Σ + σ²I)⁻¹y + log det(Σ + σ²I) + N·log 2π`, with `Σ` the output
/// covariance of the input's declared behavior plus `α_t·κ_g(t, tᵀ)`.
/// A failed factorization yields `+∞`; malformed arguments are errors.
pub fn neg_log_marginal(u: &SampledSignal, y: &[f64], hp: &HyperParams) -> Result<f64> {
    hp.validate()?;
    Ok(Evidence::new(u, y)?.eval_or_inf(hp, &mut Vec::new()))
}

/// Start points in the unit cube: the center first, then a Latin hypercube.
fn start_points(n_starts: usize, dims: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let m = n_starts.saturating_sub(1);
    let mut pts = vec![vec![0.5; dims]];
    let mut lhs = vec![vec![0.0; dims]; m];
    for d in 0..dims {
        let mut strata: Vec<usize> = (0..m).collect();
        strata.shuffle(&mut rng);
        for (p, s) in lhs.iter_mut().zip(strata) {
            p[d] = (s as f64 + rng.random::<f64>()) / m as f64;
        }
    }
    pts.extend(lhs);
    pts
}

fn clamp_unit(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Nelder–Mead on the unit cube with every trial point projected back into
/// the cube. The best vertex never worsens, so `history` is non-increasing.
fn nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    max_evals: usize,
    f_tol: f64,
    x_tol: f64,
) -> (Vec<f64>, f64, usize, Vec<(usize, f64)>) {
    let d = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        f(x)
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let mut p0 = x0.to_vec();
    clamp_unit(&mut p0);
    let f0 = eval(&p0, &mut evals);
    simplex.push((p0.clone(), f0));
    for i in 0..d {
        let mut p = p0.clone();
        p[i] += if p[i] + 0.1 <= 1.0 { 0.1 } else { -0.1 };
        let fp = eval(&p, &mut evals);
        simplex.push((p, fp));
    }
    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    order(&mut simplex);
    let mut history = vec![(evals, simplex[0].1)];
    while evals < max_evals {
        let (fb, fw) = (simplex[0].1, simplex[d].1);
        let diameter = simplex[1..]
            .iter()
            .map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if fb.is_finite() && fw.is_finite() && fw - fb <= f_tol * (1.0 + fb.abs()) && diameter <= x_tol {
            break;
        }
        if diameter == 0.0 {
            break;
        }
        let centroid: Vec<f64> =
            (0..d).map(|j| simplex[..d].iter().map(|(p, _)| p[j]).sum::<f64>() / d as f64).collect();
        let along = |t: f64| {
            let mut p: Vec<f64> = (0..d).map(|j| centroid[j] + t * (simplex[d].0[j] - centroid[j])).collect();
            clamp_unit(&mut p);
            p
        };
        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[d].1 {
                let xc = along(-0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[d].1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let p: Vec<f64> = v.0.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    let fp = eval(&p, &mut evals);
                    *v = (p, fp);
                }
            }
        }
        order(&mut simplex);
        history.push((evals, simplex[0].1));
    }
    let (x, fx) = simplex.swap_remove(0);
    (x, fx, evals, history)
}

/// Multistart Empirical-Bayes search; deterministic in `settings.seed`.
pub fn optimize(u: &SampledSignal, y: &[f64], settings: &OptimizerSettings) -> Result<OptimizationResult> {
    if settings.n_starts == 0 {
        return Err(Error::Config("n_starts must be at least 1".into()));
    }
    settings.bounds.validate()?;
    let evidence = Evidence::new(u, y)?;
    let var_y = variance(y);
    if !(var_y > 0.0) {
        return Err(Error::Unidentifiable("output has zero sample variance".into()));
    }
    if u.is_zero() {
        return Err(Error::Unidentifiable("input is identically zero".into()));
    }
    let bounds = settings.bounds;
    let dims = HyperBounds::dims(settings.transient);
    let starts = start_points(settings.n_starts, dims, settings.seed);
    let traces: Vec<StartTrace> = starts
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            let mut buf = Vec::new();
            let mut objective = |x: &[f64]| evidence.eval_or_inf(&bounds.from_unit(x, var_y), &mut buf);
            let (x, fx, evaluations, history) =
                nelder_mead(&mut objective, x0, settings.max_evals_per_start, settings.f_tol, settings.x_tol);
            StartTrace {
                start: i,
                initial: bounds.from_unit(x0, var_y),
                best: bounds.from_unit(&x, var_y),
                objective: fx,
                evaluations,
                history,
            }
        })
        .collect();
    let winner = traces
        .iter()
        .filter(|t| t.objective.is_finite())
        .min_by(|a, b| a.objective.total_cmp(&b.objective).then(a.start.cmp(&b.start)))
        .ok_or(Error::AllStartsInfeasible(settings.n_starts))?;
    Ok(OptimizationResult { best: winner.best, objective: winner.objective, start: winner.start, starts: traces })
}
