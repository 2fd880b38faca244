"""System catalog: coefficient values, validation, named construction."""

import numpy as np
import pytest

from slowfastsde import (
    ToyParams,
    build_system,
    linear_test,
    ou_periodic,
    polynomial_system,
    random_polynomial_system,
    toy_turbulence,
    validate_system,
)


def test_ou_default_coefficients(ou_system):
    x = np.array([0.0])
    y = np.array([2.0])
    # b(t, y) = -(2 + cos(2 pi t)) y + sin(2 pi t)
    assert np.allclose(ou_system.b(0.0, x, y), [-6.0])
    assert np.allclose(ou_system.b(0.25, x, y), [-4.0 + 1.0])
    assert np.allclose(ou_system.F(0.0, x, y), [2.0])
    assert np.allclose(ou_system.sigma(0.0, x, y), [[1.0]])
    assert ou_system.tau == 1.0 and ou_system.noise_dim == 1


def test_ou_custom_coefficients():
    sys2 = ou_periodic(alpha=lambda t: 3.0 + np.sin(np.pi * t),
                       beta=lambda t: np.cos(np.pi * t),
                       sigma=0.5, tau=2.0)
    y = np.array([1.0])
    assert np.allclose(sys2.b(0.5, np.zeros(1), y),
                       [-(3.0 + np.sin(0.5 * np.pi)) + np.cos(0.5 * np.pi)])
    assert np.allclose(sys2.sigma(0.0, np.zeros(1), y), [[0.5]])
    assert sys2.tau == 2.0


def test_toy_coefficients_and_damping(toy_system):
    x = np.array([2.0])
    y = np.array([3.0])
    # F = y^2 + alpha x + vartheta x^3 with alpha=-1, vartheta=-0.1
    assert np.allclose(toy_system.F(0.0, x, y), [9.0 - 2.0 - 0.8])
    # b = -(1 + x^2) y + cos(2 pi t)
    assert np.allclose(toy_system.b(0.0, x, y), [-15.0 + 1.0])
    assert np.allclose(toy_system.b(0.5, x, y), [-15.0 - 1.0])


def test_toy_params_routing():
    custom = ToyParams(alpha=0.5, beta=2.0, sigma=0.3)
    system = toy_turbulence(params=custom)
    assert np.allclose(system.sigma(0.0, np.zeros(1), np.zeros(1)), [[0.3]])
    by_kw = toy_turbulence(alpha=0.5, beta=2.0, sigma=0.3)
    y = np.array([1.5])
    assert np.allclose(system.b(0.2, np.ones(1), y),
                       by_kw.b(0.2, np.ones(1), y))
    with pytest.raises(ValueError):
        toy_turbulence(params=custom, alpha=0.5)


def test_toy_rejects_sign_indefinite_damping():
    with pytest.raises(ValueError):
        toy_turbulence(gamma_coeffs=(0.1, 0.0, -1.0))
    with pytest.raises(ValueError):
        toy_turbulence(gamma_coeffs=(-0.5, 0.0, 1.0))
    with pytest.raises(ValueError):
        toy_turbulence(gamma_coeffs=(1.0, 2.0))


def test_linear_test_coefficients(linear_system):
    y = np.array([4.0])
    assert np.allclose(linear_system.b(0.7, np.zeros(1), y), [-4.0])
    assert np.allclose(linear_system.F(0.0, np.zeros(1), y), [4.0])
    with pytest.raises(ValueError):
        linear_test(a=0.0)


def test_polynomial_system_values():
    system = polynomial_system(f_x=(1.0, 2.0), f_y=(0.0, 0.0, 1.0),
                               b_x=(0.5,), b_y=(0.0, -2.0),
                               c_cos=0.3, c_sin=0.1)
    x = np.array([2.0])
    y = np.array([3.0])
    assert np.allclose(system.F(0.0, x, y), [1.0 + 4.0 + 9.0])
    assert np.allclose(system.b(0.0, x, y), [0.5 - 6.0 + 0.3])
    assert np.allclose(system.b(0.25, x, y), [0.5 - 6.0 + 0.1])


def test_polynomial_periodic_sigma_batches():
    system = polynomial_system(f_x=(0.0,), f_y=(0.0, 1.0),
                               b_x=(0.0,), b_y=(0.0, -1.0),
                               sigma0=1.0, sigma_cos=0.4)
    val = system.sigma(0.0, np.zeros(1), np.zeros(1))
    assert np.allclose(val, [[1.4]])
    batch = system.sigma(0.5, np.zeros((6, 1)), np.zeros((6, 1)))
    assert batch.shape == (6, 1, 1)
    assert np.allclose(batch, 0.6)
    assert not system.sigma.constant


def test_polynomial_rejects_long_coefficients():
    with pytest.raises(ValueError):
        polynomial_system(f_x=(1.0, 0.0, 0.0, 0.0, 1.0), f_y=(0.0,),
                          b_x=(0.0,), b_y=(0.0, -1.0))


def test_random_systems_validate():
    for seed in range(8):
        system = random_polynomial_system(seed)
        assert validate_system(system)
        # stable draws have negative linear and cubic fast-drift coefficients
        y_big = np.array([5.0])
        y_neg = np.array([-5.0])
        x = np.zeros(1)
        assert system.b(0.0, x, y_big)[0] < 0
        assert system.b(0.0, x, y_neg)[0] > 0


def test_random_system_reproducible():
    a = random_polynomial_system(123)
    b = random_polynomial_system(123)
    y = np.array([0.7])
    t = 0.3
    assert np.array_equal(a.b(t, np.ones(1), y), b.b(t, np.ones(1), y))
    assert np.array_equal(a.F(t, np.ones(1), y), b.F(t, np.ones(1), y))


def test_build_system_by_name():
    system = build_system("toy_turbulence", {"sigma": 0.5}, epsilon=0.05)
    assert system.epsilon == 0.05
    assert np.allclose(system.sigma(0.0, np.zeros(1), np.zeros(1)), [[0.5]])
    assert build_system("linear_test", {"a": 2.0}).b(
        0.0, np.zeros(1), np.ones(1))[0] == -2.0
    assert build_system("ou_periodic").name == "ou_periodic"
    assert build_system("polynomial").name == "polynomial"
    with pytest.raises(ValueError, match="unknown system"):
        build_system("lorenz96")


def test_constant_sigma_broadcasts():
    system = linear_test(sigma=0.25)
    batch = system.sigma(0.0, np.zeros((7, 1)), np.zeros((7, 1)))
    assert batch.shape == (7, 1, 1)
    assert np.all(batch == 0.25)
    assert system.sigma.constant
