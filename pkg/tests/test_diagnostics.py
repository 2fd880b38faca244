"""Coupling rates, dissipativity constants, brackets, semigroup probes."""

import numpy as np
import pytest

from slowfastsde import (
    LyapunovHandle,
    SlowFastSystem,
    VectorField,
    clipped_identity,
    coupling_rate,
    default_lyapunov,
    dissipativity_constants,
    hormander_rank,
    lie_bracket,
    linear_test,
    semigroup_continuity_probe,
    sigma_column_fields,
)
from slowfastsde.diagnostics import FD_SCALE

DT = 1e-3

# (1 - dt)^(tau/dt): per-period contraction factor of the discrete linear flow
DISCRETE_RATE = np.log1p(-DT) / DT


def test_coupling_rate_linear_is_the_discrete_rate(linear_system):
    report = coupling_rate(linear_system, np.zeros(1),
                           np.array([1.0]), np.array([-1.0]), T=20.0, dt=DT)
    # the separation obeys sep' = (1 - dt) sep exactly, so every windowed
    # slope equals 2 log(1 - dt)/dt and beta_hat is half of that
    assert abs(report.beta_hat - DISCRETE_RATE) < 1e-6
    assert report.converged
    assert report.truncated_at is None
    assert np.allclose(report.lam, 2.0 * DISCRETE_RATE, atol=1e-6)
    assert report.lambda_samples.shape == (len(report.t_centers), 2)


def test_coupling_rate_periodic_damping(ou_system):
    # separation under alpha(t) = 2 + cos(2 pi t) has
    # log V(t) = c - 4t - sin(2 pi t)/pi; a least-squares line over one
    # period sees the mean slope -4 plus the wiggle's projection 6/pi^2
    report = coupling_rate(ou_system, np.zeros(1),
                           np.array([0.5]), np.array([-0.5]), T=10.0, dt=DT)
    assert report.converged
    assert report.truncated_at is None
    expected = 0.5 * (-4.0 + 6.0 / np.pi**2)
    assert abs(report.beta_hat - expected) < 0.02
    # every window sees the same phase, so the slopes barely scatter
    assert report.lam.std() < 0.01
    assert report.beta_hat < -1.0


def test_coupling_rate_truncates_when_copies_merge(linear_system):
    # from a 1e-12 separation the copies shrink toward the ulp of an O(1)
    # state and eventually round to the same double; V then hits exact zero
    report = coupling_rate(linear_system, np.zeros(1),
                           np.array([1e-12]), np.array([0.0]), T=20.0, dt=DT)
    assert report.truncated_at is not None
    assert 5.0 < report.truncated_at < 20.0
    assert report.converged


def test_coupling_rate_instant_merge_is_signed_infinity(linear_system):
    # a sub-ulp separation is absorbed on the first update
    report = coupling_rate(linear_system, np.zeros(1),
                           np.array([1e-150]), np.array([0.0]), T=20.0, dt=DT)
    assert report.beta_hat == -np.inf
    assert report.truncated_at == DT
    assert report.converged


def test_coupling_rate_validation(linear_system):
    with pytest.raises(ValueError):
        coupling_rate(linear_system, np.zeros(1),
                      np.array([1.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        coupling_rate(linear_system, np.zeros(1),
                      np.array([1.0]), np.array([0.0]), T=1.5)


def test_lyapunov_handle_quartic(linear_system):
    quartic = LyapunovHandle(V=lambda t, y: np.sum(np.square(y), axis=-1) ** 2,
                             p=4.0, C=1.0)
    report = coupling_rate(linear_system, np.zeros(1),
                           np.array([1.0]), np.array([0.0]), V=quartic,
                           T=20.0, dt=DT)
    assert abs(report.beta_hat - 2.0 * DISCRETE_RATE) < 1e-6


def test_lyapunov_handle_validated(linear_system):
    shifted = LyapunovHandle(V=lambda t, y: np.sum(np.square(y), axis=-1) + 1.0)
    with pytest.raises(ValueError, match="V\\(t, 0\\)"):
        coupling_rate(linear_system, np.zeros(1),
                      np.array([1.0]), np.array([0.0]), V=shifted)
    wrong_power = LyapunovHandle(V=lambda t, y: np.sum(np.square(y), axis=-1),
                                 p=4.0)
    with pytest.raises(ValueError, match="envelope|probe points"):
        coupling_rate(linear_system, np.zeros(1),
                      np.array([1.0]), np.array([0.0]), V=wrong_power)


def test_dissipativity_constants_toy(toy_system):
    lo = np.array([0.0, -2.0])
    hi = np.array([0.0, 2.0])
    report = dissipativity_constants(toy_system, (lo, hi), n_pairs=400,
                                     n_phases=8, seed=3)
    # with x pinned at 0 the drift difference is exactly -(y - z), and the
    # constant diffusion cancels
    assert np.allclose(report.K_hat, 1.0, atol=1e-9)
    assert np.all(report.L_hat == 0.0)
    assert np.allclose(report.lam_hat, -1.0, atol=1e-9)
    assert report.n_pairs == 400
    assert len(report.t_grid) == 8


def test_dissipativity_sees_diffusion_lipschitz():
    system = SlowFastSystem(
        "statesig", 1, 1, 1, 1.0, 0.1,
        F=VectorField(lambda t, x, y: np.zeros_like(x), out_shape=(1,)),
        b=VectorField(lambda t, x, y: -y, out_shape=(1,)),
        sigma=VectorField(lambda t, x, y: 0.3 * y[..., None],
                          out_shape=(1, 1)),
    )
    lo = np.array([0.0, -2.0])
    hi = np.array([0.0, 2.0])
    report = dissipativity_constants(system, (lo, hi), n_pairs=300,
                                     n_phases=4, p=2.0, seed=1)
    assert np.allclose(report.L_hat, 0.3, atol=1e-9)
    assert np.allclose(report.K_hat, 1.0, atol=1e-9)
    assert np.allclose(report.lam_hat, -1.0 + 0.5 * 0.09, atol=1e-9)
    quartic = dissipativity_constants(system, (lo, hi), n_pairs=300,
                                      n_phases=4, p=4.0, seed=1)
    assert np.allclose(quartic.lam_hat, -1.0 + 1.5 * 0.09, atol=1e-9)


def test_dissipativity_validation(toy_system):
    lo = np.array([0.0, -2.0])
    hi = np.array([0.0, 2.0])
    with pytest.raises(ValueError, match="n_pairs"):
        dissipativity_constants(toy_system, (lo, hi), n_pairs=50)
    with pytest.raises(ValueError, match="length"):
        dissipativity_constants(toy_system, (lo[:1], hi[:1]), n_pairs=200)
    with pytest.raises(ValueError, match="extent"):
        dissipativity_constants(toy_system, (lo, lo), n_pairs=200)
    with pytest.raises(ValueError):
        dissipativity_constants(toy_system, (hi, lo), n_pairs=200)


def test_lie_bracket_linear_commutator():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0, 0.0], [1.0, 0.0]])
    F = lambda t, y: A @ y
    G = lambda t, y: B @ y
    y = np.array([1.0, 2.0])
    got = lie_bracket(F, G, 0.0, y)
    expected = (B @ A - A @ B) @ y
    assert np.max(np.abs(got - expected)) < 1e-8


def test_lie_bracket_quadratic_fields():
    # central differences are exact on quadratics
    F = lambda t, y: np.array([y[1] ** 2, 0.0])
    G = lambda t, y: np.array([0.0, y[0]])
    y = np.array([1.5, 2.0])
    got = lie_bracket(F, G, 0.0, y)
    assert np.max(np.abs(got - np.array([-6.0, 4.0]))) < 1e-9


def test_lie_bracket_constants_commute():
    F = lambda t, y: np.array([1.0, 0.0])
    G = lambda t, y: np.array([0.0, 2.0])
    assert np.max(np.abs(lie_bracket(F, G, 0.0, np.zeros(2)))) < 1e-12


def test_lie_bracket_antisymmetry(rng):
    def random_field(coeffs):
        c0, C1, Q = coeffs

        def field(t, y):
            quad = np.einsum("ijk,j,k->i", Q, y, y)
            return c0 + C1 @ y + quad

        return field

    for _ in range(30):
        mk = lambda: (rng.normal(size=2), rng.normal(size=(2, 2)),
                      0.5 * rng.normal(size=(2, 2, 2)))
        F = random_field(mk())
        G = random_field(mk())
        y = rng.normal(size=2)
        fg = lie_bracket(F, G, 0.0, y)
        gf = lie_bracket(G, F, 0.0, y)
        scale = 1.0 + np.max(np.abs(fg))
        assert np.max(np.abs(fg + gf)) < 2e-8 * scale


def test_hormander_full_rank_at_level_zero():
    fields = [lambda t, y: np.array([1.0, 0.0]),
              lambda t, y: np.array([0.0, 1.0])]
    assert hormander_rank(fields, 0.0, np.zeros(2), 3) == (2, 0)


def test_hormander_rank_fills_in_one_bracket():
    fields = [lambda t, y: np.array([1.0, 0.0]),
              lambda t, y: np.array([0.0, y[0]])]
    # at y = 0 the second column vanishes; [f1, f2] = (0, 1) restores rank 2
    assert hormander_rank(fields, 0.0, np.zeros(2), 3) == (2, 1)


def test_hormander_rank_can_stall():
    fields = [lambda t, y: np.array([1.0, 0.0])]
    rank, level = hormander_rank(fields, 0.0, np.zeros(2), 3)
    assert (rank, level) == (1, 3)
    shallow = hormander_rank(fields, 0.0, np.zeros(2), 0)
    assert shallow == (1, 0)
    with pytest.raises(ValueError):
        hormander_rank(fields, 0.0, np.zeros(2), -1)


def test_sigma_column_fields_wrap_the_diffusion(toy_system):
    cols = sigma_column_fields(toy_system, np.zeros(1))
    assert len(cols) == 1
    assert np.allclose(cols[0](0.3, np.array([2.0])), [1.0])
    assert hormander_rank(cols, 0.0, np.zeros(1), 2) == (1, 0)


def test_semigroup_probe_linear_pairs_are_deterministic(linear_system):
    factor = (1.0 - DT) ** 1000
    probe = semigroup_continuity_probe(
        linear_system, np.zeros(1), clipped_identity(),
        [((0.0, [0.5]), (0.0, [0.4])),
         ((0.0, [0.5]), (0.0, [0.49]))],
        t=1.0, n_samples=64, seed=5, dt=DT)
    # common noise cancels exactly for constant diffusion: every sample pair
    # differs by (y - z) * (1 - dt)^n, so the standard error vanishes
    assert np.allclose(probe.ratios, factor, atol=1e-12)
    assert np.all(probe.ses < 1e-12)
    assert not probe.inconclusive.any()
    assert np.allclose(probe.distances, [0.1, 0.01])


def test_semigroup_probe_phase_pairs(linear_system):
    probe = semigroup_continuity_probe(
        linear_system, np.zeros(1), clipped_identity(),
        [((0.0, [0.0]), (0.5, [0.0])),
         ((0.0, [0.3]), (0.0, [0.3]))],
        t=1.0, n_samples=128, seed=6, dt=DT)
    assert abs(probe.distances[0] - 0.5) < 1e-12
    assert np.isfinite(probe.ratios[0])
    # identical lifted points: zero distance short-circuits to zero ratio
    assert probe.distances[1] == 0.0
    assert probe.ratios[1] == 0.0


def test_semigroup_probe_horizon_validated(linear_system):
    with pytest.raises(ValueError):
        semigroup_continuity_probe(linear_system, np.zeros(1),
                                   clipped_identity(),
                                   [((0.0, [0.1]), (0.0, [0.2]))],
                                   t=0.0001, dt=DT)


def test_fd_scale_is_cuberoot_eps():
    assert FD_SCALE == float(np.finfo(float).eps) ** (1.0 / 3.0)
    assert 5e-6 < FD_SCALE < 7e-6


def test_default_lyapunov_is_squared_norm():
    handle = default_lyapunov()
    y = np.array([[3.0, 4.0]])
    assert np.allclose(handle.V(np.zeros(1), y), [25.0])
    assert handle.p == 2.0
