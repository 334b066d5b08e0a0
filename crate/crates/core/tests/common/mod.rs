#![allow(dead_code)]

use ctkrm::{DcKernel, ImpulseKernel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// DC kernel that only exposes pointwise values, so every derived
/// quantity falls back to quadrature or truncated series.
pub struct Pointwise(pub DcKernel);

impl ImpulseKernel for Pointwise {
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

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_kernel(rng: &mut impl Rng, alpha: (f64, f64)) -> DcKernel {
    let a = rng.random_range(alpha.0..alpha.1);
    let b = a * rng.random_range(0.0..0.95);
    DcKernel::new(a, b, rng.random_range(0.5..3.0)).unwrap()
}

/// Largest entrywise difference scaled by the largest reference entry.
pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Adaptive Dormand–Prince 5(4) integration of `ẋ = f(t, x)` from `t0` to
/// `t1` with mixed absolute/relative error control.
pub fn dopri5(
    f: impl Fn(f64, &[f64], &mut [f64]),
    t0: f64,
    t1: f64,
    x: &mut [f64],
    rtol: f64,
    atol: f64,
) {
    const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let n = x.len();
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut x5 = vec![0.0; n];
    let mut t = t0;
    let mut h = ((t1 - t0) / 16.0).min(1e-3).max(1e-12);
    while t < t1 {
        if t + h > t1 {
            h = t1 - t;
        }
        for s in 0..7 {
            for i in 0..n {
                tmp[i] = x[i] + h * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>();
            }
            f(t + C[s] * h, &tmp, &mut k[s]);
        }
        let mut err = 0.0f64;
        for i in 0..n {
            x5[i] = x[i] + h * (0..7).map(|j| B5[j] * k[j][i]).sum::<f64>();
            let x4 = x[i] + h * (0..7).map(|j| B4[j] * k[j][i]).sum::<f64>();
            let sc = atol + rtol * x[i].abs().max(x5[i].abs());
            err = err.max(((x5[i] - x4) / sc).abs());
        }
        if err <= 1.0 {
            t += h;
            x.copy_from_slice(&x5);
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
}
