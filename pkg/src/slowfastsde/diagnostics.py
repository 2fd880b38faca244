"""Runnable checks of the structural assumptions behind the averaging setup.

Four independent probes, each turning an analytic hypothesis on the fast
subsystem into a number with an error bar:

* coupling_rate: contraction of two copies of the fast flow driven by the
  same noise, measured through a Lyapunov function of the separation.  The
  long-run exponent beta_hat must be negative for a stable random periodic
  solution to exist.
* dissipativity_constants: empirical one-sided Lipschitz constant of the
  drift and Lipschitz constant of the diffusion columns on a sample box,
  combined into the contraction budget lambda(t).
* lie_bracket / hormander_rank: finite-difference Lie brackets of the
  diffusion columns at a frozen slow state, and the dimension of the span of
  their iterated brackets.  Full rank indicates a smooth transition law even
  when the diffusion is degenerate.
* semigroup_continuity_probe: Monte Carlo check that expectations of a
  bounded test function depend Lipschitz-continuously on the initial point.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.random import Generator, Philox

from .measures import CylinderMetric
from .noise import derive_seed, grid_steps, make_path
from .sde_core import LiftedState, _integrate_fast, simulate_fast

# Central-difference step scale, (machine epsilon)^(1/3).
FD_SCALE = float(np.finfo(float).eps) ** (1.0 / 3.0)


@dataclass(frozen=True)
class LyapunovHandle:
    """A Lyapunov function for separation decay, with its growth envelope.

    V maps (t, y) to a nonnegative scalar (vectorized: t of shape (n,) with
    y of shape (n, N) gives shape (n,)).  The envelope constants assert
    |y|^p <= V(t, y) <= C |y|^p, with V(t, 0) = 0 and V periodic in t.
    """

    V: Callable
    p: float = 2.0
    C: float = 1.0


def default_lyapunov():
    """Squared euclidean norm of the separation, V(t, y) = |y|^2."""
    return LyapunovHandle(V=lambda t, y: np.sum(np.square(y), axis=-1),
                          p=2.0, C=1.0)


def _check_lyapunov(handle, tau, dim):
    """Spot-check the envelope |y|^p <= V <= C|y|^p and V(t, 0) = 0."""
    rng = Generator(Philox(key=derive_seed("lyapunov-probe")))
    for t in (0.0, 0.37 * tau):
        zero = np.asarray(handle.V(np.array([t]), np.zeros((1, dim))))
        if not np.allclose(zero, 0.0, atol=1e-12):
            raise ValueError("Lyapunov handle violates V(t, 0) = 0")
        y = rng.normal(size=(8, dim)) * np.array([0.1, 1.0, 10.0, 1.0,
                                                  0.5, 2.0, 5.0, 0.01])[:, None]
        v = np.asarray(handle.V(np.full(8, t), y))
        yp = np.linalg.norm(y, axis=-1) ** handle.p
        if np.any(v < yp * (1 - 1e-9)) or np.any(v > handle.C * yp * (1 + 1e-9)):
            raise ValueError(
                "Lyapunov handle violates |y|^p <= V(t,y) <= C|y|^p on probe points")


@dataclass(frozen=True)
class ContractionReport:
    """Windowed contraction exponents of a synchronously coupled pair.

    Attributes
    ----------
    t_centers : ndarray
        Midpoints of the per-period fitting windows.
    lam : ndarray
        Windowed slope of log V(t, Y_t - Z_t) on each window.
    beta_hat : float
        Trapezoidal estimate of (1/2t) * integral of lam up to the largest
        horizon.  Negative values indicate contraction.
    converged : bool
        True when the half- and full-horizon estimates agree within 25%
        (or the separation hit exact zero, which counts as contraction).
    truncated_at : float or None
        Time at which the separation reached numerical zero, if it did.
    """

    t_centers: np.ndarray
    lam: np.ndarray
    beta_hat: float
    converged: bool
    truncated_at: Optional[float] = None

    @property
    def lambda_samples(self):
        """(t, lambda) pairs as a (n, 2) array."""
        return np.column_stack([self.t_centers, self.lam])


def coupling_rate(system, x_frozen, y0, z0, V=None, path=None, T=None,
                  dt=1e-3, seed=0):
    """Contraction rate of the fast flow from two starts under common noise.

    Both copies are driven by the same increments, so their separation obeys
    a pathwise ODE-like recursion; the windowed slope of log V(separation)
    estimates the contraction exponent lambda(t), and beta_hat averages it
    over the full horizon.

    Args:
      system: SlowFastSystem.
      x_frozen: frozen slow state, shape (d,).
      y0, z0: the two fast starts, shape (N,); must differ.
      V: LyapunovHandle (default: squared norm).
      path: increment stream; a fresh one from seed if omitted.
      T: horizon, at least 2*tau (default 20*tau).
      dt: step size used when path is omitted.
      seed: seed used when path is omitted.

    Returns:
      ContractionReport.
    """
    y0 = np.asarray(y0, dtype=float)
    z0 = np.asarray(z0, dtype=float)
    if np.array_equal(y0, z0):
        raise ValueError("coupling_rate needs two distinct starts, got y0 == z0")
    if V is None:
        V = default_lyapunov()
    _check_lyapunov(V, system.tau, system.fast_dim)
    if T is None:
        T = 20.0 * system.tau
    if T < 2.0 * system.tau:
        raise ValueError("horizon T=%g too short: need at least two periods" % T)
    if path is None:
        path = make_path(derive_seed(seed, "coupling"), dt, system.noise_dim)

    traj = simulate_fast(system, x_frozen, np.stack([y0, z0]), path, 0.0, T)
    sep = traj.states[:, 0, :] - traj.states[:, 1, :]
    times = traj.times
    v = np.asarray(V.V(times, sep), dtype=float)
    if v[0] <= 0.0:
        raise ValueError("V vanishes at the initial separation")

    truncated_at = None
    dead = np.flatnonzero(v <= 0.0)
    stop = len(v)
    if len(dead):
        stop = int(dead[0])
        truncated_at = float(times[stop])
    logv = np.log(v[:stop])
    times = times[:stop]

    tau_steps = system.tau_steps(path.dt)
    n_w = (len(logv) - 1) // tau_steps
    centers = []
    lams = []
    for i in range(n_w):
        sl = slice(i * tau_steps, (i + 1) * tau_steps + 1)
        tloc = times[sl]
        centers.append(0.5 * (tloc[0] + tloc[-1]))
        lams.append(np.polynomial.polynomial.polyfit(tloc, logv[sl], 1)[1])
    centers = np.asarray(centers)
    lams = np.asarray(lams)

    if n_w >= 2:
        beta_hat = float(np.trapezoid(lams, centers)
                         / (2.0 * (centers[-1] - centers[0])))
        half = max(2, n_w // 2)
        beta_half = float(np.trapezoid(lams[:half], centers[:half])
                          / (2.0 * (centers[half - 1] - centers[0])))
        converged = (beta_hat != 0.0
                     and abs(beta_hat - beta_half) <= 0.25 * abs(beta_hat))
    elif times[-1] > 0.0:
        beta_hat = float((logv[-1] - logv[0]) / (2.0 * times[-1]))
        converged = False
    else:
        # the copies merged on the very first step: contraction is faster
        # than one grid step can resolve
        beta_hat = float("-inf")
        converged = False
    if truncated_at is not None:
        converged = True
    return ContractionReport(t_centers=centers, lam=lams, beta_hat=beta_hat,
                             converged=converged, truncated_at=truncated_at)


@dataclass(frozen=True)
class DissipativityReport:
    """Empirical drift/diffusion constants on a sample box, per phase.

    lam is assembled as -K + ((p - 1) / 2) * N * L**2 at each phase, which
    must stay negative (on average over the period) for the contraction
    argument to go through.
    """

    t_grid: np.ndarray
    K_hat: np.ndarray
    L_hat: np.ndarray
    lam_hat: np.ndarray
    n_pairs: int
    p: float


def dissipativity_constants(system, sample_box, n_pairs, n_phases=16,
                            p=2.0, seed=0):
    """One-sided drift and diffusion Lipschitz constants on a box.

    Draws n_pairs pairs of points ((x, y), (x', z)) uniformly from the box
    and reports, on a grid of phases t,

      K_hat(t) = inf over pairs of -<b(t,x,y) - b(t,x',z), y - z>
                 / (|y - z|^2 + |x - x'|^2),
      L_hat(t) = sup over pairs and columns k of
                 |sigma_k(t,x,y) - sigma_k(t,x',z)| / (|y - z| + |x - x'|),

    and the combination lam_hat(t) = -K_hat + ((p-1)/2) * N * L_hat^2.

    The box is a (lo, hi) pair over the concatenated (x, y) coordinates;
    individual coordinates may be pinned (lo == hi), e.g. to freeze the slow
    state, but the box must have positive extent somewhere.

    Args:
      system: SlowFastSystem.
      sample_box: (lo, hi) arrays of length slow_dim + fast_dim.
      n_pairs: number of sampled pairs, at least 100.
      n_phases: number of equispaced phases in [0, tau).
      p: Lyapunov growth exponent used in the lambda formula.
      seed: seed for the pair draw.

    Returns:
      DissipativityReport.
    """
    lo, hi = (np.asarray(a, dtype=float) for a in sample_box)
    d, N = system.slow_dim, system.fast_dim
    if lo.shape != (d + N,) or hi.shape != (d + N,):
        raise ValueError("sample_box arrays must have length slow_dim + fast_dim")
    if np.any(hi < lo) or not np.any(hi > lo):
        raise ValueError("sample_box must satisfy lo <= hi with positive extent somewhere")
    if n_pairs < 100:
        raise ValueError("n_pairs must be at least 100, got %d" % n_pairs)

    rng = Generator(Philox(key=derive_seed(seed, "dissipativity")))
    u = lo + (hi - lo) * rng.random((n_pairs, d + N))
    w = lo + (hi - lo) * rng.random((n_pairs, d + N))
    xu, yu = u[:, :d], u[:, d:]
    xw, yw = w[:, :d], w[:, d:]
    dy = yu - yw
    dx = xu - xw
    den_b = np.sum(dy**2, axis=-1) + np.sum(dx**2, axis=-1)
    den_s = np.linalg.norm(dy, axis=-1) + np.linalg.norm(dx, axis=-1)
    keep = den_b > 0
    if not np.any(keep):
        raise ValueError("all sampled pairs coincide; widen the box")

    t_grid = system.tau * np.arange(n_phases) / n_phases
    K_hat = np.empty(n_phases)
    L_hat = np.empty(n_phases)
    for i, t in enumerate(t_grid):
        db = system.b(t, xu, yu) - system.b(t, xw, yw)
        quot = -np.sum(db * dy, axis=-1)[keep] / den_b[keep]
        K_hat[i] = quot.min()
        dsig = system.sigma(t, xu, yu) - system.sigma(t, xw, yw)
        col = np.linalg.norm(dsig, axis=-2).max(axis=-1)
        L_hat[i] = (col[keep] / den_s[keep]).max()
    lam_hat = -K_hat + 0.5 * (p - 1.0) * N * L_hat**2
    return DissipativityReport(t_grid=t_grid, K_hat=K_hat, L_hat=L_hat,
                               lam_hat=lam_hat, n_pairs=int(n_pairs), p=float(p))


def _jvp(field, t, y, v, h):
    """Central-difference directional derivative D_y field(t, y) . v."""
    nv = float(np.linalg.norm(v))
    if nv == 0.0:
        return np.zeros_like(np.asarray(field(t, y), dtype=float))
    delta = h / nv
    return (np.asarray(field(t, y + delta * v), dtype=float)
            - np.asarray(field(t, y - delta * v), dtype=float)) / (2.0 * delta)


def lie_bracket(Ffield, Gfield, t, y, h=None):
    """Lie bracket [F, G](t, y) = D_yG . F - D_yF . G by central differences.

    Fields are callables (t, y) -> (N,).  The default step is
    eps^(1/3) * max(1, |y|).

    Raises:
      ValueError: the bracket evaluated to a non-finite vector.
    """
    y = np.asarray(y, dtype=float)
    if h is None:
        h = FD_SCALE * max(1.0, float(np.linalg.norm(y)))
    fv = np.asarray(Ffield(t, y), dtype=float)
    gv = np.asarray(Gfield(t, y), dtype=float)
    out = _jvp(Gfield, t, y, fv, h) - _jvp(Ffield, t, y, gv, h)
    if not np.all(np.isfinite(out)):
        raise ValueError("Lie bracket evaluated to a non-finite vector")
    return out


def sigma_column_fields(system, x_frozen):
    """The diffusion columns y -> sigma_k(t, x_frozen, y) as (t, y) fields."""
    x_frozen = np.asarray(x_frozen, dtype=float)

    def make(k):
        return lambda t, y: np.asarray(
            system.sigma(t, x_frozen, np.asarray(y, dtype=float)),
            dtype=float)[..., k]

    return [make(k) for k in range(system.noise_dim)]


def hormander_rank(sigma_fields, t, y, max_level):
    """Rank of the span of iterated brackets of the diffusion columns.

    Level 0 is the columns themselves evaluated at (t, y); level l adds the
    brackets of every column with every level-(l-1) field.  The rank uses
    singular values with a relative threshold of 1e-8.

    Args:
      sigma_fields: list of callables (t, y) -> (N,).
      t: evaluation time.
      y: evaluation point, shape (N,).
      max_level: deepest bracket level to explore, >= 0.

    Returns:
      (rank, level): the first level at which the rank reached the state
      dimension, or (final rank, max_level) if it never did.
    """
    if max_level < 0:
        raise ValueError("max_level must be nonnegative")
    y = np.asarray(y, dtype=float)
    N = len(y)

    def rank_of(vectors):
        A = np.stack(vectors)
        s = np.linalg.svd(A, compute_uv=False)
        if s[0] == 0.0:
            return 0
        return int(np.sum(s > 1e-8 * s[0]))

    current = list(sigma_fields)
    vectors = [np.asarray(f(t, y), dtype=float) for f in current]
    r = rank_of(vectors)
    if r >= N:
        return N, 0
    for level in range(1, max_level + 1):
        nxt = []
        for base in sigma_fields:
            for fld in current:
                def bracket_field(tt, yy, a=base, b=fld):
                    return lie_bracket(a, b, tt, yy)
                nxt.append(bracket_field)
        vectors.extend(np.asarray(f(t, y), dtype=float) for f in nxt)
        r = rank_of(vectors)
        if r >= N:
            return N, level
        current = nxt
    return r, max_level


def clipped_identity(component=0, bound=5.0):
    """Bounded test function phi(s, y) = clip(y[component], -bound, bound)."""

    def phi(s, y):
        return np.clip(np.asarray(y, dtype=float)[..., component],
                       -bound, bound)

    return phi


@dataclass(frozen=True)
class SemigroupProbe:
    """Lipschitz ratios of the fast transition semigroup on test pairs.

    ratios[i] estimates |E phi(flow from pair[i][0]) - E phi(flow from
    pair[i][1])| divided by the cylinder distance of the pair; ses are the
    Monte Carlo standard errors on the same scale.  A ratio is inconclusive
    when its standard error exceeds it.
    """

    pairs: list
    distances: np.ndarray
    ratios: np.ndarray
    ses: np.ndarray
    inconclusive: np.ndarray


def semigroup_continuity_probe(system, x_frozen, phi, y_pairs, t,
                               n_samples=2048, seed=0, dt=1e-3):
    """Monte Carlo Lipschitz ratios of ybar -> E phi(fast flow at time t).

    Each pair is a ((s, y), (s', z)) pair of lifted starts given as
    (phase, point) tuples; both members are flowed for time t with the same
    noise realizations (one fresh stream per Monte Carlo sample), and the
    paired differences of phi give the ratio and its standard error.

    Args:
      system: SlowFastSystem.
      x_frozen: frozen slow state, shape (d,).
      phi: callable (end_phase, y_array) -> values, bounded.
      y_pairs: list of ((s, y), (s2, z)) with phases grid-aligned.
      t: flow horizon, at least dt.
      n_samples: Monte Carlo ensemble size per pair.
      seed: base seed; each pair uses an independent sub-stream.
      dt: step size.

    Returns:
      SemigroupProbe.
    """
    if t < dt:
        raise ValueError("horizon t=%g must be at least dt=%g" % (t, dt))
    x_frozen = np.asarray(x_frozen, dtype=float)
    tau = system.tau
    tau_steps = system.tau_steps(dt)
    n_steps = grid_steps(t, dt)
    metric = CylinderMetric(tau)
    P = len(y_pairs)
    distances = np.empty(P)
    ratios = np.empty(P)
    ses = np.empty(P)
    inconclusive = np.zeros(P, dtype=bool)
    for i, (a, bpt) in enumerate(y_pairs):
        s_a, y_a = a
        s_b, y_b = bpt
        y_a = np.asarray(y_a, dtype=float)
        y_b = np.asarray(y_b, dtype=float)
        pa = LiftedState(s=float(s_a) % tau, y=y_a, step=grid_steps(s_a, dt) % tau_steps)
        pb = LiftedState(s=float(s_b) % tau, y=y_b, step=grid_steps(s_b, dt) % tau_steps)
        dist = metric.distance(pa, pb)
        distances[i] = dist
        if dist < 1e-15:
            ratios[i] = 0.0
            ses[i] = 0.0
            continue
        paths = [make_path(derive_seed(seed, "semigroup", i, j), dt,
                           system.noise_dim) for j in range(n_samples)]
        ends = []
        for p0 in (pa, pb):
            y0 = np.broadcast_to(p0.y, (n_samples, system.fast_dim)).copy()
            yT, _ = _integrate_fast(system, x_frozen, y0, paths,
                                    n_steps=n_steps, noise_i0=0,
                                    phase_i0=p0.step)
            end_phase = ((p0.step + n_steps) % tau_steps) * dt
            ends.append(np.asarray(phi(end_phase, yT), dtype=float))
        diff = ends[0] - ends[1]
        ratios[i] = abs(float(np.mean(diff))) / dist
        ses[i] = float(np.std(diff, ddof=1)) / np.sqrt(n_samples) / dist
        inconclusive[i] = ses[i] >= ratios[i]
    return SemigroupProbe(pairs=list(y_pairs), distances=distances,
                          ratios=ratios, ses=ses, inconclusive=inconclusive)
