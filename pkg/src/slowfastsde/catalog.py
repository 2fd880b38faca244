"""Benchmark system constructors.

Three named systems plus a parametric polynomial family, all with scalar slow
and fast components.  These cover the regimes the verification machinery is
exercised on:

* ``ou_periodic``: fast Ornstein-Uhlenbeck dynamics with periodic drift
  coefficients; admits a closed-form random periodic solution (see
  :mod:`slowfastsde.benchmarks`), used for oracle-backed checks.
* ``toy_turbulence``: an energy-balance model (slow amplitude forced by the
  squared fast velocity, fast velocity with state-dependent damping gamma(x)
  and periodic forcing).  The averaged slow drift has a closed form.
* ``linear_test``: constant coefficients, for exactness and rate checks.
* polynomial family: random degree <= 3 coefficients for property tests.

All coefficient callables broadcast over a leading batch axis and accept the
time either as a scalar or as a column array of per-sample phases.
"""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly

from .sde_core import SlowFastSystem, VectorField, validate_system


def _const_sigma(value):
    mat = np.atleast_2d(np.asarray(value, dtype=float))

    def fn(t, x, y):
        if np.ndim(y) > 1:
            return np.broadcast_to(mat, y.shape[:-1] + mat.shape)
        return mat

    return VectorField(fn, out_shape=mat.shape, name="sigma_const", constant=True)


def ou_periodic(alpha=None, beta=None, sigma=1.0, tau=1.0, epsilon=0.1):
    """Fast Ornstein-Uhlenbeck system with periodic coefficients.

    The fast equation is dY = (-alpha(t) Y + beta(t)) dt + sigma dW with
    tau-periodic alpha, beta; the slow drift is F(x, y) = y.  Defaults are
    alpha(t) = 2 + cos(2 pi t), beta(t) = sin(2 pi t), sigma = 1, tau = 1.

    Args:
      alpha: vectorized callable t -> damping, tau-periodic, inf alpha > 0.
      beta: vectorized callable t -> forcing, tau-periodic.
      sigma: constant noise amplitude.
      tau: period.
      epsilon: time-scale parameter for coupled runs.

    Returns:
      SlowFastSystem with d = N = m = 1.
    """
    two_pi = 2.0 * np.pi / tau
    if alpha is None:
        alpha = lambda t: 2.0 + np.cos(two_pi * t)
    if beta is None:
        beta = lambda t: np.sin(two_pi * t)

    def b_fn(t, x, y):
        return -alpha(t) * y + beta(t)

    def F_fn(t, x, y):
        return y

    system = SlowFastSystem(
        name="ou_periodic", slow_dim=1, fast_dim=1, noise_dim=1,
        tau=float(tau), epsilon=float(epsilon),
        F=VectorField(F_fn, out_shape=(1,), name="F"),
        b=VectorField(b_fn, out_shape=(1,), name="b_ou"),
        sigma=_const_sigma(sigma),
    )
    validate_system(system, dt=tau / 1000.0)
    return system


@dataclass(frozen=True)
class ToyParams:
    """Parameters of the toy turbulence system.

    gamma_coeffs are ascending polynomial coefficients of the damping
    gamma(x); the default (1, 0, 1) is gamma(x) = 1 + x^2.
    """

    alpha: float = -1.0
    vartheta: float = -0.1
    beta: float = 1.0
    sigma: float = 1.0
    gamma_coeffs: tuple = (1.0, 0.0, 1.0)


def toy_turbulence(params=None, tau=1.0, epsilon=0.1, **overrides):
    """Energy-balance toy system.

    Slow drift F(x, y) = y^2 + alpha x + vartheta x^3; fast equation
    dY = (-gamma(x) Y + beta cos(2 pi t / tau)) dt + sigma dW.  The damping
    polynomial must be positive: even degree with positive leading
    coefficient and no real roots on the sampled range.

    Args:
      params: ToyParams, or None to build one from keyword overrides.
      tau: forcing period.
      epsilon: time-scale parameter.
      **overrides: individual ToyParams fields when params is None.

    Returns:
      SlowFastSystem with d = N = m = 1.

    Raises:
      ValueError: if gamma is not strictly positive.
    """
    if params is None:
        params = ToyParams(**overrides)
    elif overrides:
        raise ValueError("pass either params or keyword overrides, not both")
    coeffs = np.asarray(params.gamma_coeffs, dtype=float)
    if coeffs[-1] <= 0 or (len(coeffs) - 1) % 2 != 0:
        raise ValueError(
            "gamma_coeffs must have even degree and positive leading "
            "coefficient, got %s" % (list(coeffs),))
    probe = npoly.polyval(np.linspace(-20.0, 20.0, 4001), coeffs)
    if np.min(probe) <= 0:
        raise ValueError("gamma(x) must be strictly positive, got min %.3g"
                         % np.min(probe))

    two_pi = 2.0 * np.pi / tau
    al, th, be = params.alpha, params.vartheta, params.beta

    def F_fn(t, x, y):
        return y**2 + al * x + th * x**3

    def b_fn(t, x, y):
        return -npoly.polyval(x, coeffs) * y + be * np.cos(two_pi * t)

    system = SlowFastSystem(
        name="toy_turbulence", slow_dim=1, fast_dim=1, noise_dim=1,
        tau=float(tau), epsilon=float(epsilon),
        F=VectorField(F_fn, out_shape=(1,), name="F_toy"),
        b=VectorField(b_fn, out_shape=(1,), name="b_toy"),
        sigma=_const_sigma(params.sigma),
    )
    validate_system(system, dt=tau / 1000.0)
    return system


def linear_test(a=1.0, sigma=1.0, tau=1.0, epsilon=0.1):
    """Constant-coefficient system: dY = -a Y dt + sigma dW, F(x, y) = y."""
    if a <= 0:
        raise ValueError("damping a must be positive, got %g" % a)

    def b_fn(t, x, y):
        return -a * y

    def F_fn(t, x, y):
        return y

    system = SlowFastSystem(
        name="linear_test", slow_dim=1, fast_dim=1, noise_dim=1,
        tau=float(tau), epsilon=float(epsilon),
        F=VectorField(F_fn, out_shape=(1,), name="F"),
        b=VectorField(b_fn, out_shape=(1,), name="b_linear"),
        sigma=_const_sigma(sigma),
    )
    validate_system(system, dt=tau / 1000.0)
    return system


def polynomial_system(f_x, f_y, b_x, b_y, c_cos=0.0, c_sin=0.0,
                      sigma0=1.0, sigma_cos=0.0, tau=1.0, epsilon=0.1,
                      name="polynomial"):
    """Parametric scalar system with polynomial coefficients (degree <= 3).

    F(x, y) = f_x(x) + f_y(y);
    b(t, x, y) = b_x(x) + b_y(y) + c_cos cos(2 pi t/tau) + c_sin sin(2 pi t/tau);
    sigma(t) = sigma0 + sigma_cos cos(2 pi t/tau).

    Args:
      f_x, f_y, b_x, b_y: ascending coefficient sequences, length <= 4.
      c_cos, c_sin: periodic forcing amplitudes in the fast drift.
      sigma0, sigma_cos: diffusion amplitude and its periodic modulation.
      tau, epsilon, name: as in the other constructors.

    Returns:
      SlowFastSystem with d = N = m = 1.
    """
    parts = {}
    for label, c in (("f_x", f_x), ("f_y", f_y), ("b_x", b_x), ("b_y", b_y)):
        c = np.asarray(c, dtype=float)
        if c.ndim != 1 or len(c) > 4:
            raise ValueError("%s must be a coefficient sequence of degree <= 3" % label)
        parts[label] = c
    two_pi = 2.0 * np.pi / tau

    def F_fn(t, x, y):
        return npoly.polyval(x, parts["f_x"]) + npoly.polyval(y, parts["f_y"])

    def b_fn(t, x, y):
        forcing = c_cos * np.cos(two_pi * t) + c_sin * np.sin(two_pi * t)
        return (npoly.polyval(x, parts["b_x"]) + npoly.polyval(y, parts["b_y"])
                + forcing)

    if sigma_cos == 0.0:
        sigma_field = _const_sigma(sigma0)
    else:
        def sigma_fn(t, x, y):
            val = np.asarray(sigma0 + sigma_cos * np.cos(two_pi * t), dtype=float)
            if val.ndim == 0:
                mat = val.reshape(1, 1)
                if np.ndim(y) > 1:
                    return np.broadcast_to(mat, y.shape[:-1] + (1, 1))
                return mat
            # per-sample phases arrive as an (M, 1) column
            return val[..., None]
        sigma_field = VectorField(sigma_fn, out_shape=(1, 1), name="sigma_poly")

    system = SlowFastSystem(
        name=name, slow_dim=1, fast_dim=1, noise_dim=1,
        tau=float(tau), epsilon=float(epsilon),
        F=VectorField(F_fn, out_shape=(1,), name="F_poly"),
        b=VectorField(b_fn, out_shape=(1,), name="b_poly"),
        sigma=sigma_field,
    )
    validate_system(system, dt=tau / 1000.0)
    return system


def random_polynomial_system(seed, stable=True, tau=1.0, epsilon=0.1):
    """Draw a random polynomial system for property tests.

    With stable=True the fast drift gets a strictly negative linear and cubic
    y-coefficient, so the frozen-x dynamics is dissipative and pullback
    iterations contract.

    Args:
      seed: integer key for the coefficient draw.
      stable: force dissipative fast dynamics.

    Returns:
      SlowFastSystem
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    f_x = rng.uniform(-1, 1, size=3)
    f_y = rng.uniform(-1, 1, size=3)
    b_x = rng.uniform(-0.5, 0.5, size=2)
    b_y = rng.uniform(-0.5, 0.5, size=4)
    if stable:
        b_y[1] = -rng.uniform(1.0, 3.0)
        b_y[3] = -rng.uniform(0.1, 1.0)
        b_y[2] = 0.0
    c_cos, c_sin = rng.uniform(-1, 1, size=2)
    sigma0 = rng.uniform(0.3, 1.2)
    sigma_cos = rng.choice([0.0, rng.uniform(-0.2, 0.2)])
    return polynomial_system(f_x, f_y, b_x, b_y, c_cos, c_sin,
                             sigma0, sigma_cos, tau=tau, epsilon=epsilon,
                             name="polynomial[%d]" % (seed % 10_000))


_BUILDERS = {
    "ou_periodic": lambda params, tau, epsilon: ou_periodic(
        sigma=params.get("sigma", 1.0), tau=tau, epsilon=epsilon),
    "toy_turbulence": lambda params, tau, epsilon: toy_turbulence(
        params=ToyParams(
            alpha=params.get("alpha", -1.0),
            vartheta=params.get("vartheta", -0.1),
            beta=params.get("beta", 1.0),
            sigma=params.get("sigma", 1.0),
            gamma_coeffs=tuple(params.get("gamma_coeffs", (1.0, 0.0, 1.0))),
        ), tau=tau, epsilon=epsilon),
    "linear_test": lambda params, tau, epsilon: linear_test(
        a=params.get("a", 1.0), sigma=params.get("sigma", 1.0),
        tau=tau, epsilon=epsilon),
    "polynomial": lambda params, tau, epsilon: polynomial_system(
        f_x=params.get("f_x", (0.0,)), f_y=params.get("f_y", (0.0, 1.0)),
        b_x=params.get("b_x", (0.0,)), b_y=params.get("b_y", (0.0, -1.0)),
        c_cos=params.get("c_cos", 0.0), c_sin=params.get("c_sin", 0.0),
        sigma0=params.get("sigma0", 1.0), sigma_cos=params.get("sigma_cos", 0.0),
        tau=tau, epsilon=epsilon),
}


def build_system(name, params=None, tau=1.0, epsilon=0.1):
    """Construct a catalog system by name (used by the CLI config loader).

    Args:
      name: one of "ou_periodic", "toy_turbulence", "linear_test",
        "polynomial".
      params: mapping of constructor parameters (system-specific).
      tau, epsilon: grid period and time-scale parameter.

    Raises:
      ValueError: unknown name.
    """
    if name not in _BUILDERS:
        raise ValueError("unknown system %r (known: %s)"
                         % (name, ", ".join(sorted(_BUILDERS))))
    return _BUILDERS[name](dict(params or {}), float(tau), float(epsilon))
