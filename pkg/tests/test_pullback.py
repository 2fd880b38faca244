"""Pullback iteration: contraction, anchor independence, identities."""

import numpy as np
import pytest

from slowfastsde import (
    make_path,
    pullback_ensemble,
    pullback_solve,
    stability_probe,
    verify_random_periodicity,
)
from slowfastsde.errors import ConvergenceError

DT = 1e-3


def test_converges_at_geometric_rate(linear_system):
    # dY = -Y dt + dW contracts by e^{-1} per period, so successive iterate
    # differences decay with slope -1 per iterate
    est = pullback_solve(linear_system, np.zeros(1), np.array([3.0]),
                         make_path(10, DT, 1), k_max=30, tol=1e-10)
    assert est.converged
    assert est.k_used < 30
    assert -1.2 < est.rate_estimate < -0.8
    # differences shrink monotonically once the transient is gone
    tail = est.sup_diffs[2:]
    assert np.all(tail[1:] < tail[:-1])


def test_anchor_independence(ou_system):
    path = make_path(3, DT, 1)
    tol = 1e-9
    a = pullback_solve(ou_system, np.zeros(1), np.array([5.0]), path,
                       k_max=30, tol=tol)
    b = pullback_solve(ou_system, np.zeros(1), np.array([-4.0]), path,
                       k_max=30, tol=tol)
    assert a.converged and b.converged
    assert np.max(np.abs(a.values - b.values)) < 2.0 * tol


def test_nonconvergence_is_flagged_not_raised(ou_system):
    est = pullback_solve(ou_system, np.zeros(1), np.array([1.0]),
                         make_path(0, DT, 1), k_max=2, tol=1e-14)
    assert not est.converged
    assert est.k_used == 2
    assert est.values.shape == (1001, 1)
    assert np.all(np.isfinite(est.values))


def test_custom_section_grid_and_value_at(toy_system):
    path = make_path(5, DT, 1)
    grid = [0.0, 0.25, 0.5, 1.25]
    est = pullback_solve(toy_system, np.zeros(1), np.zeros(1), path,
                         k_max=25, tol=1e-8, r_grid=grid)
    assert est.values.shape == (4, 1)
    assert np.array_equal(est.value_at(0.25), est.values[1])
    with pytest.raises(ValueError):
        est.value_at(0.1)
    # section times past one period match the flow, not a copy of r mod tau
    full = pullback_solve(toy_system, np.zeros(1), np.zeros(1), path,
                          k_max=25, tol=1e-8, periods=2)
    assert abs(est.value_at(1.25)[0] - full.value_at(1.25)[0]) < 2e-8


def test_lifted_states_reduce_phase(toy_system):
    est = pullback_solve(toy_system, np.zeros(1), np.zeros(1),
                         make_path(5, DT, 1), k_max=20, tol=1e-7,
                         r_grid=[0.0, 0.75, 1.5])
    pts = est.lifted_states()
    assert [p.step for p in pts] == [0, 750, 500]
    assert np.array_equal(pts[2].y, est.values[2])


def test_input_validation(ou_system):
    path = make_path(0, DT, 1)
    with pytest.raises(ValueError):
        pullback_solve(ou_system, np.zeros(1), np.zeros(1), path,
                       k_max=1, tol=1e-6)
    with pytest.raises(ValueError):
        pullback_solve(ou_system, np.zeros(1), np.zeros(1), path,
                       k_max=10, tol=1e-6, r_grid=[-0.5])


def test_ensemble_matches_standalone_bit_for_bit(toy_system):
    paths = [make_path(100 + i, DT, 1) for i in range(4)]
    r = 0.25
    tol = 1e-6
    values, k_used, excluded = pullback_ensemble(
        toy_system, np.zeros(1), np.zeros(1), paths, r, k_max=20, tol=tol)
    assert not excluded.any()
    # per-sample freezing must not perturb the survivors' arithmetic
    assert len(set(k_used.tolist())) > 1
    for i, p in enumerate(paths):
        solo = pullback_solve(toy_system, np.zeros(1), np.zeros(1), p,
                              k_max=20, tol=tol, r_grid=[r])
        assert np.array_equal(values[i], solo.values[0])
        assert k_used[i] == solo.k_used


def test_ensemble_rejects_widespread_failure(ou_system):
    paths = [make_path(i, DT, 1) for i in range(5)]
    with pytest.raises(ConvergenceError):
        pullback_ensemble(ou_system, np.zeros(1), np.zeros(1), paths,
                          0.0, k_max=2, tol=1e-15)


def test_periodicity_identities_hold(ou_system):
    path = make_path(17, DT, 1)
    est = pullback_solve(ou_system, np.zeros(1), np.zeros(1), path,
                         k_max=30, tol=1e-9)
    report = verify_random_periodicity(est, ou_system, path, tol=1e-7)
    assert report.passed
    assert report.residual_shift <= 1e-7 + est.tol
    assert report.residual_flow <= 1e-7 + est.tol
    assert len(report.flow_samples) == 16


def test_forward_stability_contracts(linear_system):
    path = make_path(23, DT, 1)
    est = pullback_solve(linear_system, np.zeros(1), np.zeros(1), path,
                         k_max=30, tol=1e-10)
    report = stability_probe(linear_system, np.zeros(1), est,
                             perturbations=np.array([0.5, -0.25]),
                             path=path, horizon_periods=6)
    # dY = -Y: the noise cancels in the separation, which contracts by the
    # exact discrete factor (1 - dt)^steps each period
    assert report.distances.shape == (2, 7)
    factor = (1.0 - DT) ** 1000
    ratios = report.distances[:, 1:] / report.distances[:, :-1]
    assert np.allclose(ratios, factor, rtol=1e-9)
    assert np.allclose(report.slopes, 1000.0 * np.log1p(-DT), atol=1e-6)


def test_stability_perturbation_shape_checked(linear_system):
    est = pullback_solve(linear_system, np.zeros(1), np.zeros(1),
                         make_path(1, DT, 1), k_max=20, tol=1e-8)
    with pytest.raises(ValueError):
        stability_probe(linear_system, np.zeros(1), est,
                        perturbations=np.ones((2, 3)),
                        path=make_path(1, DT, 1), horizon_periods=3)
