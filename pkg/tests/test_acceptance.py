"""Acceptance suite: one test per criterion, each printing a pass/fail line.

The Monte-Carlo criteria (6-8, 10) run the full pipeline and take minutes;
everything else is fast.  Expected values follow the stated tolerances.
"""

import time

import numpy as np
import pytest

from pmle.basis import BasisSet, default_constraint_points, gram_matrix
from pmle.distributions import ErrorModel, TrueDistribution
from pmle.evaluation import Scenario, ise, run_scenario
from pmle.pipeline import (
    FitConfig,
    fit_density,
    initial_support,
    initialize_coeffs,
    stratified_subsample,
)
from pmle.solver import Objective, equality_nullspace
from pmle.theory import (
    bump_kernel,
    smoothness,
    sweep_convolution,
    sweep_kl_sup,
    sweep_kl_window,
    sweep_lipschitz,
    sweep_logratio,
    sweep_supnorm,
    theoretical_lambda,
)


def _report(name, passed, detail):
    print(f"\nACCEPTANCE {name}: {'PASS' if passed else 'FAIL'} ({detail})")
    assert passed, f"{name}: {detail}"


def test_criterion_1_kernel_identities():
    start = time.time()
    ok = True
    details = []
    for delta in (0.1, 1.0, 5.0):
        kernel = bump_kernel(delta, num=10_001)
        mass = float(np.trapezoid(kernel.values, kernel.grid))
        peak = float(kernel.values.max())
        psi = smoothness(kernel)
        rel = abs(psi - 24.0 * delta**-5) / (24.0 * delta**-5)
        ok &= abs(mass - 1.0) < 1e-9 and abs(peak - 1.0 / delta) < 1e-12 and rel < 1e-6
        details.append(f"delta={delta}: mass={mass:.2e}+, psi rel err={rel:.2e}")
    elapsed = time.time() - start
    _report("1 kernel identities", ok and elapsed < 1.0, f"{'; '.join(details)}; {elapsed:.2f}s")


def test_criterion_2_polynomial_gram_block():
    start = time.time()
    basis = BasisSet((0.0, 1.0), [0.5], ErrorModel.point_mass(0.0), [0.4], n_quad_nodes=512)
    gram = gram_matrix(basis)
    block = gram[1:4, 1:4]
    expected = np.array([[1, 1 / 2, 1 / 3], [1 / 2, 1 / 3, 1 / 4], [1 / 3, 1 / 4, 1 / 5]])
    inverse = np.array([[9, -36, 30], [-36, 192, -180], [30, -180, 180]])
    err_block = np.abs(block - expected).max()
    err_inv = np.abs(np.linalg.inv(block) - inverse).max()
    elapsed = time.time() - start
    _report(
        "2 polynomial gram block",
        err_block < 1e-9 and err_inv < 1e-6 and elapsed < 1.0,
        f"block err={err_block:.1e}, inverse err={err_inv:.1e}, {elapsed:.2f}s",
    )


def test_criterion_3_bridge_orthogonality():
    start = time.time()
    rng = np.random.default_rng(123)
    worst = 0.0
    for _ in range(50):
        lower = rng.uniform(-8.0, 4.0)
        upper = lower + rng.uniform(0.5, 12.0)
        x = rng.uniform(lower + 1e-3, upper - 1e-3)
        basis = BasisSet((lower, upper), [], ErrorModel.point_mass(0.0), [x], n_quad_nodes=2048)
        gram = gram_matrix(basis)
        worst = max(worst, abs(gram[3, 0]), abs(gram[3, 1]))
    elapsed = time.time() - start
    _report(
        "3 bridge orthogonality", worst < 1e-8 and elapsed < 5.0,
        f"worst |<b,1>|,|<b,x>| = {worst:.2e}, {elapsed:.1f}s",
    )


def test_criterion_4_bound_sweeps():
    start = time.time()
    rng = np.random.default_rng(2024)
    counts = {}
    ok = True
    for name, sweep, count in [
        ("supnorm", sweep_supnorm, 100),
        ("lipschitz", sweep_lipschitz, 100),
        ("convolution", sweep_convolution, 100),
        ("kl-window", sweep_kl_window, 100),
        ("kl-sup", sweep_kl_sup, 100),
        ("log-ratio", sweep_logratio, 100),
    ]:
        checks = sweep(count, rng)
        counts[name] = sum(c.holds for c in checks)
        ok &= counts[name] == count
    elapsed = time.time() - start
    _report(
        "4 appendix bound sweeps", ok and elapsed < 120.0,
        f"held {counts} of 100 each, {elapsed:.0f}s",
    )


def test_criterion_5_heuristic_gradients():
    start = time.time()
    rng = np.random.default_rng(11)
    truth = TrueDistribution("normal")
    y = np.sort(truth.sample(60, rng))
    error = ErrorModel.point_mass(0.0)
    support = initial_support(y, error, padding=0.2)
    idx = stratified_subsample(y, 20, np.random.default_rng(1))
    basis = BasisSet(
        support, y[idx], error, default_constraint_points(*support, 10), n_quad_nodes=1024
    )
    gram = gram_matrix(basis)
    likelihood = basis.response_rows(y)
    alpha0, nullspace = equality_nullspace(gram, len(idx))
    nonneg = np.arange(len(idx) + 3, basis.size)
    probe = Objective(gram, likelihood, 0.0, alpha0, nullspace, nonneg, 0.0)
    worst = 0.0
    for trial in range(5):
        beta = initialize_coeffs(y, basis, alpha0, nullspace, probe, gram=gram)
        beta = beta + 0.01 * np.random.default_rng(trial).standard_normal(len(beta))
        alpha = alpha0 + nullspace @ beta
        conv = likelihood @ alpha
        if conv.min() <= 0:
            continue
        grad_ll = (likelihood / conv[:, None]).sum(axis=0)
        grad_pen = 2.0 * (gram @ alpha)
        eps_ll, eps_pen = 1e-7, 1e-4
        for i in np.random.default_rng(100 + trial).choice(basis.size, 6, replace=False):
            step = np.zeros(basis.size)
            step[i] = eps_ll
            fd_ll = (
                np.log(likelihood @ (alpha + step)).sum()
                - np.log(likelihood @ (alpha - step)).sum()
            ) / (2 * eps_ll)
            step[i] = eps_pen
            fd_pen = (
                (alpha + step) @ gram @ (alpha + step) - (alpha - step) @ gram @ (alpha - step)
            ) / (2 * eps_pen)
            scale_ll = max(abs(fd_ll), 1e-6 * (1 + np.abs(grad_ll).max()))
            scale_pen = max(abs(fd_pen), 1e-6 * (1 + np.abs(grad_pen).max()))
            worst = max(worst, abs(fd_ll - grad_ll[i]) / scale_ll)
            worst = max(worst, abs(fd_pen - grad_pen[i]) / scale_pen)
    elapsed = time.time() - start
    _report(
        "5 heuristic gradient check", worst < 1e-5 and elapsed < 10.0,
        f"worst rel err={worst:.2e}, {elapsed:.1f}s",
    )


def test_criterion_6_no_noise_sanity():
    start = time.time()
    rng = np.random.default_rng(1)
    truth = TrueDistribution("normal")
    y = truth.sample(100, rng)
    est = fit_density(y, ErrorModel.point_mass(0.0), FitConfig(seed=1))
    score = ise(est, truth)
    integral = est.diagnostics["integral_before_normalization"]
    elapsed = time.time() - start
    _report(
        "6 no-noise sanity", score < 0.05 and 0.99 <= integral <= 1.01 and elapsed < 120.0,
        f"ISE={score:.4f}, integral={integral:.4f}, {elapsed:.0f}s",
    )


@pytest.mark.parametrize(
    "name,truth,n,c,ratio,low,high",
    [
        ("7a normal/normal n=100 C=0.5", "normal", 100, 0.5, 1e5, 0.004, 0.020),
        ("7b normal/normal n=30 C=1", "normal", 30, 1.0, 1e4, 0.012, 0.046),
        ("7c chisq/normal n=100 C=1", "chisq4", 100, 1.0, 1e5, 0.03, 0.13),
    ],
)
def test_criterion_7_mise_bands(name, truth, n, c, ratio, low, high):
    start = time.time()
    scenario = Scenario(truth, "normal", n, c, replicates=20, seed=0)
    result = run_scenario(scenario, FitConfig(heuristic_ratio=ratio))
    elapsed = time.time() - start
    _report(
        name,
        low <= result.mise <= high and elapsed < 1800.0,
        f"MISE={result.mise:.4f} (band [{low}, {high}]), se={result.se:.4f}, "
        f"failures={result.failures}, {elapsed:.0f}s",
    )


def test_criterion_8_mise_trend_in_n():
    start = time.time()
    small = run_scenario(Scenario("normal", "normal", 30, 0.5, 20, 0), FitConfig())
    large = run_scenario(Scenario("normal", "normal", 300, 0.5, 20, 0), FitConfig())
    elapsed = time.time() - start
    _report(
        "8 MISE decreases with n",
        large.mise < small.mise,
        f"MISE(n=300)={large.mise:.4f} < MISE(n=30)={small.mise:.4f}, {elapsed:.0f}s",
    )


def test_criterion_9_theorem_constants():
    import mpmath as mp

    mp.mp.dps = 30
    oracle = mp.mpf(2) ** mp.mpf("31/20") * mp.mpf(3) ** mp.mpf("-1/10") * mp.mpf(5) ** mp.mpf("3/20")
    lam_n, c1, _ = theoretical_lambda(100, 1.0, 1.0, 1.0)
    rel = abs(c1 - float(oracle)) / float(oracle)
    lam_2n, _, _ = theoretical_lambda(200, 1.0, 1.0, 1.0)
    expected_ratio = 2 ** (7 / 8) * (np.log(200) / np.log(100)) ** (1 / 8)
    ratio_exact = lam_2n / lam_n == pytest.approx(expected_ratio, rel=1e-15)
    _report(
        "9 penalty-rate constants", rel < 1e-12 and ratio_exact,
        f"C1 rel err={rel:.2e}, scaling ratio exact={ratio_exact}",
    )


def test_criterion_10_determinism_across_workers(tmp_path):
    from pmle.cli import main

    rng = np.random.default_rng(1)
    truth = TrueDistribution("normal")
    y = truth.sample(100, rng)
    data = tmp_path / "data.csv"
    data.write_text("\n".join(repr(float(v)) for v in y) + "\n")

    outputs = []
    for threads in (1, 2):
        out = tmp_path / f"fit-{threads}.json"
        code = main(
            ["fit", "--data", str(data), "--error-family", "point_mass",
             "--seed", "1", "--threads", str(threads), "--out", str(out)]
        )
        assert code == 0
        outputs.append(out.read_bytes())
    fit_identical = outputs[0] == outputs[1]

    mise_outputs = []
    for threads in (1, 2):
        out = tmp_path / f"mise-{threads}.csv"
        code = main(
            ["simulate", "--truth", "normal", "--error", "normal", "--n", "100",
             "--c", "0.5", "--replicates", "20", "--seed", "0",
             "--threads", str(threads), "--out", str(out)]
        )
        assert code == 0
        mise_outputs.append(out.read_bytes())
    sim_identical = mise_outputs[0] == mise_outputs[1]
    _report(
        "10 worker-count determinism",
        fit_identical and sim_identical,
        f"fit bytes identical={fit_identical}, simulate bytes identical={sim_identical}",
    )
