//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs every criterion by default; pass criterion numbers to run a subset,
//! e.g. `cargo test --test acceptance -- 1 4 6`. Criteria 5 and 7 run the
//! four 20-trial benchmark banks and dominate the runtime.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use common::{dopri5, max_rel, random_kernel, rng, Pointwise};
use ctkrm::covariance::{build, Combo};
use ctkrm::estimator::fit;
use ctkrm::experiment::{cmd_validate_kernels, estimate_trial, ExperimentConfig, ValidateSettings};
use ctkrm::kernels::oracle;
use ctkrm::metrics::{fit_g, fit_y, MeanStd};
use ctkrm::quadrature::{breakpoints, integrate_2d, integrate_points, QuadSettings};
use ctkrm::signals::BlInterpolant;
use ctkrm::simulator::{make_databank, simulate_zoh, CtTransferFunction, DataBankSpec};
use ctkrm::{eval_zoh, generate_prbs, DcKernel, ImpulseKernel, Intersample, PastBehavior, SampledSignal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Criterion 1: every closed form against its oracle, 100 draws, ≤ 1e−6, < 5 min.
fn closed_form_equivalence() -> Outcome {
    let started = Instant::now();
    let report = match cmd_validate_kernels(&ValidateSettings::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("sweep failed: {e}")),
    };
    let secs = started.elapsed().as_secs_f64();
    let worst = report
        .checks
        .iter()
        .max_by(|a, b| a.worst_rel_error.total_cmp(&b.worst_rel_error))
        .map(|c| format!("{} {:.2e}", c.name, c.worst_rel_error))
        .unwrap_or_default();
    let failing: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    outcome(
        report.pass && report.checks.len() == 10 && secs < 300.0,
        format!(
            "{} quantities, worst {worst} (tol 1e-6), failing {failing:?}, {secs:.1}s (limit 300s)",
            report.checks.len()
        ),
    )
}

/// `Σ_y` and `Σ_gy(τ)` of a ZOH input straight from the defining double
/// integral, cell by cell, with cell integrals from adaptive quadrature and
/// input values read through `eval_zoh`.
fn zoh_direct(u: &SampledSignal, k: &DcKernel, taus: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = u.len();
    let ts = u.ts();
    let p = Pointwise(*k);
    let cells = match u.past() {
        PastBehavior::Za => n,
        _ => (30.0 / (k.alpha() * ts)).ceil() as usize + n,
    };
    let mut gram = vec![0.0; cells * cells];
    for s in 1..=cells {
        for s2 in s..=cells {
            let v = oracle::cell(&p, ts, s, s2).unwrap();
            gram[(s - 1) * cells + s2 - 1] = v;
            gram[(s2 - 1) * cells + s - 1] = v;
        }
    }
    // Held value seen at t_i through lag cell s.
    let held = |i: usize, s: usize| eval_zoh(u, (i as f64 - s as f64 + 0.5) * ts).unwrap();
    let weights: Vec<Vec<f64>> = (0..n).map(|i| (1..=cells).map(|s| held(i, s)).collect()).collect();
    let mut sigma = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for a in 0..cells {
                if weights[i][a] == 0.0 {
                    continue;
                }
                for b in 0..cells {
                    acc += weights[i][a] * weights[j][b] * gram[a * cells + b];
                }
            }
            sigma[i * n + j] = acc;
        }
    }
    let rows = taus
        .iter()
        .map(|&tau| {
            let lines: Vec<f64> = (1..=cells).map(|s| oracle::line_cell(&p, ts, tau, s).unwrap()).collect();
            (0..n).map(|j| weights[j].iter().zip(&lines).map(|(w, l)| w * l).sum()).collect()
        })
        .collect();
    (sigma, rows)
}

/// Band-limited input: two-dimensional adaptive quadrature of
/// `u(tᵢ−τ) u(tⱼ−τ′) κ(τ, τ′)` over a truncated quadrant.
fn bl_direct(u: &SampledSignal, k: &DcKernel, taus: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = u.len();
    let ts = u.ts();
    let interp = BlInterpolant::new(u).unwrap();
    let len = 32.0 / k.alpha();
    let pieces: Vec<f64> = (1..).map(|m| m as f64 * 0.5).take_while(|&x| x < len).collect();
    let outer = breakpoints(0.0, len, pieces.iter().copied());
    let scale = k.lambda() * samples_norm(u).powi(2);
    let settings = QuadSettings::tolerance(1e-12 * scale, 1e-11);
    let mut sigma = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let (ti, tj) = (i as f64 * ts, j as f64 * ts);
            let v: f64 = integrate_2d(
                |a, b| interp.eval(ti - a) * interp.eval(tj - b) * k.value(a, b),
                &outer,
                |a| breakpoints(0.0, len, pieces.iter().copied().chain(std::iter::once(a))),
                &settings,
            )
            .unwrap()
            .value;
            sigma[i * n + j] = v;
            sigma[j * n + i] = v;
        }
    }
    let rows = taus
        .iter()
        .map(|&tau| {
            (0..n)
                .map(|j| {
                    let tj = j as f64 * ts;
                    let pts = breakpoints(0.0, len, pieces.iter().copied().chain(std::iter::once(tau)));
                    integrate_points(|b| interp.eval(tj - b) * k.value(tau, b), &pts, &settings).unwrap().value
                })
                .collect()
        })
        .collect();
    (sigma, rows)
}

fn samples_norm(u: &SampledSignal) -> f64 {
    u.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Random samples with no energy in the Nyquist bin.
fn bl_samples(r: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    if n % 2 == 0 {
        let alt = x.iter().enumerate().map(|(k, v)| if k % 2 == 0 { *v } else { -*v }).sum::<f64>() / n as f64;
        for (k, v) in x.iter_mut().enumerate() {
            *v -= if k % 2 == 0 { alt } else { -alt };
        }
    }
    x
}

/// Criterion 2: builders against the defining integrals, N ≤ 6, 10 per combo.
fn covariance_equivalence() -> Outcome {
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    for combo in [Combo::ZohPa, Combo::ZohZa, Combo::BlPa] {
        let cases: Vec<f64> = (0..10u64)
            .into_par_iter()
            .map(|case| {
                let mut r = rng(1000 * combo as u64 + case);
                let n = r.random_range(2..=6usize);
                let ts = r.random_range(0.25..0.5);
                let k = random_kernel(&mut r, (1.0, 3.0));
                let taus = [0.0, r.random_range(0.0..2.0), r.random_range(2.0..6.0)];
                let (u, direct) = match combo {
                    Combo::BlPa => {
                        let u = SampledSignal::new(bl_samples(&mut r, n), ts, Intersample::Bl, PastBehavior::Pa).unwrap();
                        let d = bl_direct(&u, &k, &taus);
                        (u, d)
                    }
                    _ => {
                        let x = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
                        let u = SampledSignal::zoh(x, ts, combo.past()).unwrap();
                        let d = zoh_direct(&u, &k, &taus);
                        (u, d)
                    }
                };
                let pair = build(&u, k, combo).unwrap();
                let mut e = max_rel(pair.sigma_y(), &direct.0);
                for (tau, row) in taus.iter().zip(&direct.1) {
                    e = e.max(max_rel(&pair.cross_row(*tau).unwrap(), row));
                }
                e
            })
            .collect();
        worst.insert(combo.to_string(), cases.into_iter().fold(0.0, f64::max));
    }
    let pass = worst.values().all(|&e| e <= 1e-6);
    let detail = worst.iter().map(|(c, e)| format!("{c} {e:.2e}")).collect::<Vec<_>>().join(", ");
    outcome(pass, format!("worst relative error {detail} (tol 1e-6, 10 instances each)"))
}

fn matvec(a: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n).map(|i| a[i * n..(i + 1) * n].iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖y − Σc‖² + γ cᵀΣc`.
fn rls_objective(sigma: &[f64], c: &[f64], y: &[f64], gamma: f64) -> f64 {
    let s = matvec(sigma, c);
    let fit: f64 = y.iter().zip(&s).map(|(a, b)| (a - b) * (a - b)).sum();
    fit + gamma * c.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>()
}

/// Criterion 3: residual, linearity, shrinkage and RLS dominance on N ≤ 8.
fn estimator_algebra() -> Outcome {
    let (mut residual, mut linear, mut shrink, mut dominance) = (0.0f64, 0.0f64, 0.0f64, 0usize);
    let mut instances = 0;
    for combo in [Combo::ZohPa, Combo::ZohZa, Combo::BlPa] {
        for case in 0..5u64 {
            let mut r = rng(77 + 10 * combo as u64 + case);
            let n = r.random_range(2..=8usize);
            let ts = r.random_range(0.05..0.5);
            let k = random_kernel(&mut r, (0.5, 3.0));
            let x = if combo == Combo::BlPa { bl_samples(&mut r, n) } else { (0..n).map(|_| r.random_range(-1.0..1.0)).collect() };
            let u = SampledSignal::new(x, ts, combo.intersample(), combo.past()).unwrap();
            let pair = build(&u, k, combo).unwrap();
            let y1: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
            let y2: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
            let gamma = r.random_range(0.01..1.0);
            let e1 = fit(pair.clone(), &y1, gamma).unwrap();
            let e2 = fit(pair.clone(), &y2, gamma).unwrap();
            let ys: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| a - 2.5 * b).collect();
            let es = fit(pair.clone(), &ys, gamma).unwrap();
            residual = residual.max(e1.relative_residual()).max(es.relative_residual());
            let comb: Vec<f64> = e1.coeffs().iter().zip(e2.coeffs()).map(|(a, b)| a - 2.5 * b).collect();
            linear = linear.max(max_rel(es.coeffs(), &comb));
            let grid = [0.0, 0.3, 1.7];
            let g1 = e1.eval_impulse(&grid).unwrap();
            let g2 = e2.eval_impulse(&grid).unwrap();
            let gs = es.eval_impulse(&grid).unwrap();
            let gcomb: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a - 2.5 * b).collect();
            linear = linear.max(max_rel(&gs, &gcomb));
            // (Σ + γI)⁻¹ has norm at most 1/γ for PSD Σ.
            let big = 1e8;
            let eb = fit(pair.clone(), &y1, big).unwrap();
            shrink = shrink.max(norm(eb.coeffs()) * big / norm(&y1));
            let sigma = pair.sigma_y();
            let j0 = rls_objective(sigma, e1.coeffs(), &y1, gamma);
            for _ in 0..50 {
                let d: Vec<f64> = e1.coeffs().iter().map(|c| c + r.random_range(-1.0..1.0) * (1e-3 + c.abs())).collect();
                if rls_objective(sigma, &d, &y1, gamma) < j0 - 1e-12 * j0.abs().max(1.0) {
                    dominance += 1;
                }
            }
            instances += 1;
        }
    }
    let pass = residual <= 1e-8 && linear <= 1e-10 && shrink <= 1.0 + 1e-9 && dominance == 0;
    outcome(
        pass,
        format!(
            "{instances} instances: residual {residual:.1e} (≤1e-8), linearity {linear:.1e} (≤1e-10), \
             γ‖c‖/‖y‖ at γ=1e8 {shrink:.6} (≤1), RLS perturbations beating the estimate {dominance}/{}",
            instances * 50
        ),
    )
}

/// Criterion 4: exact ZOH simulation.
fn exact_simulation() -> Outcome {
    // First order b/(s + a): step samples (b/a)(1 − e^{−a k T}).
    let (a, b, ts) = (1.7, 2.3, 0.05);
    let ss = CtTransferFunction::new(vec![b], vec![1.0, a]).unwrap().to_state_space().unwrap();
    let step = SampledSignal::zoh(vec![1.0; 200], ts, PastBehavior::Za).unwrap();
    let y = simulate_zoh(&ss, &step, &[0.0]).unwrap();
    let first = y
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let exact = b / a * -(-a * k as f64 * ts).exp_m1();
            (v - exact).abs() / exact.abs().max(1.0)
        })
        .fold(0.0, f64::max);

    let rg = CtTransferFunction::rao_garnier(6.0).unwrap().to_state_space().unwrap();
    let ts = 0.01;
    let u = generate_prbs(10, 7, 1000, 5, ts).unwrap().with_past(PastBehavior::Za).unwrap();
    let y = simulate_zoh(&rg, &u, &[0.0; 4]).unwrap();
    let n = rg.order();
    let mut x = vec![0.0; n];
    let mut ode = 0.0f64;
    let ymax = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (k, &uk) in u.samples().iter().enumerate() {
        let yk: f64 = rg.c.iter().zip(&x).map(|(c, s)| c * s).sum::<f64>();
        ode = ode.max((yk - y[k]).abs() / ymax.max(1.0));
        dopri5(
            |_, s, ds| {
                for i in 0..n {
                    ds[i] = (0..n).map(|j| rg.a[(i, j)] * s[j]).sum::<f64>() + rg.b[i] * uk;
                }
            },
            k as f64 * ts,
            (k + 1) as f64 * ts,
            &mut x,
            1e-13,
            1e-16,
        );
    }
    outcome(
        first <= 1e-12 && ode <= 1e-8,
        format!("first-order step {first:.1e} (≤1e-12), benchmark vs Dormand-Prince over 10 s {ode:.1e} (≤1e-8)"),
    )
}

struct BankRun {
    fit_g: MeanStd,
    fit_y: MeanStd,
    failures: usize,
    seconds: f64,
}

const BANK_SEED: u64 = 0;
const BANK_TRIALS: usize = 20;

fn run_bank(mut spec: DataBankSpec, trials: usize) -> BankRun {
    let started = Instant::now();
    spec.trials = trials;
    let config = ExperimentConfig::default();
    let grid = config.grid.points().unwrap();
    let g0 = spec.system.to_state_space().unwrap().impulse_response(&grid).unwrap();
    let bank = make_databank(&spec, BANK_SEED).unwrap();
    let fits: Vec<Option<(f64, f64)>> = bank
        .par_iter()
        .map(|t| {
            let est = estimate_trial(&t.train_u, &t.train_y, &t.validation_u, t.horizon, &config).ok()?;
            Some((fit_g(&est.g_hat, &g0).ok()?, fit_y(&est.y_hat, t.validation_window()).ok()?))
        })
        .collect();
    let ok: Vec<(f64, f64)> = fits.iter().flatten().copied().collect();
    let g: Vec<f64> = ok.iter().map(|f| f.0).collect();
    let y: Vec<f64> = ok.iter().map(|f| f.1).collect();
    let nan = MeanStd { mean: f64::NAN, std: f64::NAN };
    let run = BankRun {
        fit_g: MeanStd::of(&g).unwrap_or(nan),
        fit_y: MeanStd::of(&y).unwrap_or(nan),
        failures: fits.len() - ok.len(),
        seconds: started.elapsed().as_secs_f64(),
    };
    eprintln!(
        "  {}: FIT_g {:.2} ± {:.2}, FIT_y {:.2} ± {:.2}, {} failed, {:.0}s",
        spec.name, run.fit_g.mean, run.fit_g.std, run.fit_y.mean, run.fit_y.std, run.failures, run.seconds
    );
    run
}

struct Banks(BTreeMap<&'static str, BankRun>);

impl Banks {
    fn get(&mut self, name: &'static str) -> &BankRun {
        self.0
            .entry(name)
            .or_insert_with(|| run_bank(DataBankSpec::preset(name).unwrap(), BANK_TRIALS))
    }
}

fn within(v: f64, band: (f64, f64)) -> bool {
    v >= band.0 && v <= band.1
}

/// Criterion 5: 20-trial means inside the bands around the published means.
fn benchmark_reproduction(banks: &mut Banks) -> Outcome {
    let checks: [(&'static str, &str, (f64, f64)); 5] = [
        ("D1", "FIT_g", (85.5, 92.0)),
        ("D1", "FIT_y", (87.4, 93.4)),
        ("D2", "FIT_g", (58.0, 68.1)),
        ("D3", "FIT_g", (25.0, 65.0)),
        ("D4", "FIT_y", (91.1, 97.1)),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (bank, metric, band) in checks {
        let run = banks.get(bank);
        let m = if metric == "FIT_g" { run.fit_g.mean } else { run.fit_y.mean };
        let ok = within(m, band) && run.failures == 0;
        pass &= ok;
        parts.push(format!(
            "{bank} {metric} {m:.2} in [{}, {}] {}{}",
            band.0,
            band.1,
            if ok { "ok" } else { "MISS" },
            if run.failures > 0 { format!(" ({} failed)", run.failures) } else { String::new() }
        ));
    }
    outcome(pass, format!("{BANK_TRIALS} trials/bank: {}", parts.join("; ")))
}

/// Criterion 6: near-noiseless, kernel-matched data at D2 geometry predicts almost perfectly.
fn noiseless_sanity() -> Outcome {
    let config = ExperimentConfig::default();
    let run = |system: CtTransferFunction| -> Vec<f64> {
        let spec = DataBankSpec { snr_db: 120.0, trials: 3, system, ..DataBankSpec::d2() };
        make_databank(&spec, BANK_SEED)
            .unwrap()
            .par_iter()
            .map(|t| match estimate_trial(&t.train_u, &t.train_y, &t.validation_u, t.horizon, &config) {
                Ok(e) => fit_y(&e.y_hat, t.validation_window()).unwrap_or(f64::NAN),
                Err(_) => f64::NAN,
            })
            .collect()
    };
    // Overdamped modes that the DC prior can represent; the benchmark system
    // is reported alongside but limited by prior mismatch, not noise.
    let matched = run(CtTransferFunction::new(vec![2.0], vec![1.0, 3.0, 2.0]).unwrap());
    let benchmark = run(DataBankSpec::d2().system);
    outcome(
        matched.iter().all(|&f| f > 99.0),
        format!(
            "SNR 120 dB, D2 geometry, kernel-matched 2/((s+1)(s+2)) FIT_y per trial {:.3?} (each > 99); benchmark system {:.2?} (not gated)",
            matched, benchmark
        ),
    )
}

/// Criterion 7: larger N and smaller T both help FIT_g.
fn qualitative_trends(banks: &mut Banks) -> Outcome {
    let d1 = banks.get("D1").fit_g.mean;
    let d3 = banks.get("D3").fit_g.mean;
    let d4 = banks.get("D4").fit_g.mean;
    outcome(
        d4 > d3 && d1 > d3,
        format!("mean FIT_g D4 {d4:.2} > D3 {d3:.2}: {}; D1 {d1:.2} > D3 {d3:.2}: {}", d4 > d3, d1 > d3),
    )
}

fn main() -> ExitCode {
    // libtest-style flags (e.g. `--nocapture`) are accepted and ignored.
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |id: u32| wanted.is_empty() || wanted.contains(&id);
    let mut banks = Banks(BTreeMap::new());
    let names = [
        "closed-form equivalence",
        "covariance-builder equivalence",
        "estimator algebra",
        "exact ZOH simulation",
        "benchmark reproduction",
        "noiseless sanity",
        "qualitative trends",
    ];
    let mut failed = 0;
    for (id, name) in (1u32..).zip(names) {
        if !run(id) {
            continue;
        }
        let started = Instant::now();
        let o = match id {
            1 => closed_form_equivalence(),
            2 => covariance_equivalence(),
            3 => estimator_algebra(),
            4 => exact_simulation(),
            5 => benchmark_reproduction(&mut banks),
            6 => noiseless_sanity(),
            _ => qualitative_trends(&mut banks),
        };
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} criterion {id} ({name}): {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            started.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failed} criteria failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
