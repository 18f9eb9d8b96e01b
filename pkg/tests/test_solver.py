import numpy as np
import pytest

from pmle.basis import BasisSet, default_constraint_points, gram_matrix
from pmle.distributions import ErrorModel
from pmle.solver import (
    InfeasibleStartError,
    Objective,
    SimplexOptions,
    equality_nullspace,
    nelder_mead,
    penalized_nll,
)


@pytest.fixture
def small_problem():
    rng = np.random.default_rng(0)
    anchors = np.sort(rng.uniform(-0.6, 1.6, 8))
    basis = BasisSet(
        (-1.0, 2.0),
        anchors,
        ErrorModel("normal", scale=0.4),
        default_constraint_points(-1.0, 2.0, 5),
        n_quad_nodes=512,
    )
    gram = gram_matrix(basis)
    alpha0, nullspace = equality_nullspace(gram, basis.n_anchors)
    nonneg = np.arange(basis.n_anchors + 3, basis.size)
    return basis, gram, alpha0, nullspace, nonneg


def test_nullspace_particular_solution(small_problem):
    basis, gram, alpha0, nullspace, _ = small_problem
    n = basis.n_anchors
    rows = gram[[n, n + 1, n + 2]]
    np.testing.assert_allclose(rows @ alpha0, [0.0, 0.0, 2.0], atol=1e-10)


def test_nullspace_preserves_constraints(small_problem):
    basis, gram, alpha0, nullspace, _ = small_problem
    n = basis.n_anchors
    rows = gram[[n, n + 1, n + 2]]
    rng = np.random.default_rng(1)
    for _ in range(50):
        beta = rng.standard_normal(nullspace.shape[1])
        np.testing.assert_allclose(rows @ (alpha0 + nullspace @ beta), [0, 0, 2], atol=1e-8)


def test_nullspace_dimension_and_orthonormality(small_problem):
    basis, _, _, nullspace, _ = small_problem
    assert nullspace.shape == (basis.size, basis.size - 3)
    np.testing.assert_allclose(
        nullspace.T @ nullspace, np.eye(nullspace.shape[1]), atol=1e-10
    )


def test_nullspace_rank_deficiency_error():
    gram = np.zeros((6, 6))
    gram[3, 3] = 1.0  # rows 1..3 of the constraint block are dependent
    with pytest.raises(ValueError, match="rank deficient"):
        equality_nullspace(gram, 1)


def test_penalized_nll_zero_at_unit_densities(small_problem):
    basis, gram, alpha0, nullspace, nonneg = small_problem
    beta = np.zeros(nullspace.shape[1])
    alpha = alpha0 + nullspace @ beta
    # rows engineered so every convolved density is exactly 1
    row = alpha / float(alpha @ alpha)
    likelihood = np.tile(row, (4, 1))
    obj = Objective(gram, likelihood, 0.0, alpha0, nullspace, np.array([], int), 0.0)
    assert penalized_nll(obj, beta) == pytest.approx(0.0, abs=1e-12)


def test_penalty_is_additive(small_problem):
    basis, gram, alpha0, nullspace, nonneg = small_problem
    likelihood = gram[: basis.n_anchors]
    beta = np.zeros(nullspace.shape[1])
    base = Objective(gram, likelihood, 0.0, alpha0, nullspace, nonneg, 0.0)
    pen = Objective(gram, likelihood, 0.7, alpha0, nullspace, nonneg, 0.0)
    j0, j1 = penalized_nll(base, beta), penalized_nll(pen, beta)
    alpha = base.expand(beta)
    assert j1 - j0 == pytest.approx(0.7 * float(alpha @ gram @ alpha), abs=1e-10)


def test_nonpositive_convolved_density_is_infinite(small_problem):
    basis, gram, alpha0, nullspace, nonneg = small_problem
    beta = np.zeros(nullspace.shape[1])
    alpha = alpha0 + nullspace @ beta
    good = alpha / float(alpha @ alpha)
    bad = -0.1 * good  # this row's convolved density is exactly -0.1
    likelihood = np.vstack([np.tile(good, (3, 1)), bad])
    obj = Objective(gram, likelihood, 0.1, alpha0, nullspace, nonneg, 0.0)
    assert penalized_nll(obj, beta) == np.inf


def test_dimension_mismatch(small_problem):
    basis, gram, alpha0, nullspace, nonneg = small_problem
    obj = Objective(gram, gram[:2], 0.1, alpha0, nullspace, nonneg, 0.0)
    with pytest.raises(ValueError):
        penalized_nll(obj, np.zeros(3))


def test_nelder_mead_quadratic():
    result = nelder_mead(lambda x: (x[0] - 3.0) ** 2, np.array([0.0]))
    assert result.converged
    assert result.x[0] == pytest.approx(3.0, abs=1e-6)


def test_nelder_mead_rosenbrock():
    def rosen(x):
        return 100.0 * (x[1] - x[0] ** 2) ** 2 + (1.0 - x[0]) ** 2

    result = nelder_mead(
        rosen, np.array([-1.2, 1.0]), SimplexOptions(max_iterations=5000, f_tol=1e-16)
    )
    np.testing.assert_allclose(result.x, [1.0, 1.0], atol=1e-4)


def test_nelder_mead_iteration_budget():
    result = nelder_mead(
        lambda x: (x**2).sum(), np.full(4, 5.0), SimplexOptions(max_iterations=5)
    )
    assert result.iterations == 5
    assert not result.converged


def test_nelder_mead_infeasible_start():
    with pytest.raises(InfeasibleStartError):
        nelder_mead(lambda x: np.inf, np.zeros(2))


def test_nelder_mead_monotone_best_vertex():
    def bumpy(x):
        return float((x**2).sum() + np.sin(5 * x).sum())

    result = nelder_mead(bumpy, np.full(3, 2.0))
    history = np.array(result.history)
    assert np.all(np.diff(history) <= 1e-12)


def test_nelder_mead_never_worse_than_start():
    rng = np.random.default_rng(6)
    for _ in range(5):
        x0 = rng.uniform(-2, 2, size=4)
        f = lambda x: float(np.abs(x).sum() + 0.3 * np.cos(x).sum())
        result = nelder_mead(f, x0)
        assert result.fun <= f(x0) + 1e-12


def test_nelder_mead_tolerates_infinite_regions():
    def partial(x):
        if x[0] < -1.0:
            return np.inf
        return float((x[0] - 0.5) ** 2 + x[1] ** 2)

    result = nelder_mead(partial, np.array([0.0, 1.0]))
    np.testing.assert_allclose(result.x, [0.5, 0.0], atol=1e-5)


def test_nelder_mead_deterministic():
    f = lambda x: float((x**2).sum() + np.sin(3 * x).sum())
    a = nelder_mead(f, np.array([1.0, -2.0, 0.5]))
    b = nelder_mead(f, np.array([1.0, -2.0, 0.5]))
    assert np.array_equal(a.x, b.x) and a.fun == b.fun and a.iterations == b.iterations


def test_simplex_options_validation():
    with pytest.raises(ValueError):
        SimplexOptions(contraction=1.5)
    with pytest.raises(ValueError):
        SimplexOptions(expansion=0.5)


def test_barrier_reduces_violation(small_problem):
    basis, gram, alpha0, nullspace, nonneg = small_problem
    likelihood = gram[: basis.n_anchors]
    checked = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        beta0 = 0.02 * rng.standard_normal(nullspace.shape[1])
        probe = Objective(gram, likelihood, 0.05, alpha0, nullspace, nonneg, 0.0)
        if not np.isfinite(penalized_nll(probe, beta0)):
            continue

        def solve(weight):
            obj = Objective(gram, likelihood, 0.05, alpha0, nullspace, nonneg, weight)
            res = nelder_mead(lambda b: penalized_nll(obj, b), beta0)
            return obj.constraint_violation(obj.expand(res.x))

        assert solve(1e3) <= solve(1e2) + 1e-9
        checked += 1
        if checked == 5:
            break
    assert checked == 5
