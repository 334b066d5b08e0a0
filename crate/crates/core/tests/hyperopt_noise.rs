mod common;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use ctkrm::covariance::{build, Combo};
use ctkrm::hyperopt::{optimize, OptimizerSettings};
use ctkrm::{generate_prbs, DcKernel, PastBehavior};

/// Data drawn from the prior itself: `y ~ N(0, Σ_y + σ²I)` at 10 dB.
#[test]
fn noise_variance_is_recovered_within_factor_three() {
    let k = DcKernel::new(0.8, 0.4, 50.0).unwrap();
    let ts = 0.05;
    let mut ratios = Vec::new();
    for seed in 0..20u64 {
        let mut r = common::rng(seed);
        let u = generate_prbs(10, 3, 200, seed + 1, ts).unwrap().with_past(PastBehavior::Za).unwrap();
        let pair = build(&u, k, Combo::ZohZa).unwrap();
        let n = u.len();
        let sigma = pair.sigma_y_matrix();
        let signal_var = sigma.diagonal().mean();
        let noise_var = signal_var / 10.0;
        let l = (sigma + DMatrix::identity(n, n) * (1e-10 * signal_var)).cholesky().unwrap();
        let z = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (l.l() * z)
            .iter()
            .map(|v| v + noise_var.sqrt() * r.sample::<f64, _>(StandardNormal))
            .collect();
        let settings = OptimizerSettings { n_starts: 5, seed, transient: false, ..Default::default() };
        let opt = optimize(&u, &y, &settings).unwrap();
        ratios.push(opt.best.sigma2 / noise_var);
    }
    assert!(ratios.iter().all(|r| (1.0 / 3.0..=3.0).contains(r)), "σ̂²/σ² per seed: {ratios:.3?}");
}
