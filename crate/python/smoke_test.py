"""Smoke test for the pyctkrm extension.

Build and run:
    cd crates/python && maturin develop --release
    python python/smoke_test.py
"""

import math

import pyctkrm


def main():
    k = pyctkrm.DcKernel(1.0, 0.5, 2.0)
    l1, l2, l3, l4 = k.lambda_constants(0.1, 5)
    assert abs(l4 - (2 * l1 - l2)) < 1e-12
    assert abs(k.value(0.3, 0.3) - 2.0 * math.exp(-0.6)) < 1e-12
    try:
        pyctkrm.DcKernel(1.0, 2.0, 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("beta > alpha must be rejected")

    trial = pyctkrm.make_trial("D3", seed=7, index=0)
    u, y = trial["train_u"], trial["train_y"]
    assert len(u) == 100 and u.past == "unknown"

    hp, obj = pyctkrm.optimize(u, y, n_starts=3, seed=1)
    assert math.isfinite(obj)
    assert abs(pyctkrm.neg_log_marginal(u, y, hp) - obj) < 1e-6 * abs(obj)

    est = pyctkrm.Estimate.fit(u, y, hp)
    grid = [0.01 * i for i in range(1, 1001)]
    fg = pyctkrm.fit_g(est.impulse(grid), pyctkrm.rao_garnier_impulse(grid))
    y_hat = est.predict(trial["validation_u"], trial["horizon"])
    fy = pyctkrm.fit_y(y_hat, trial["validation_y0"])
    print(f"{hp!r}\nFIT_g {fg:.2f}  FIT_y {fy:.2f}")
    assert fy > 0.0
    print("smoke test passed")


if __name__ == "__main__":
    main()
