"""Pullback construction of random periodic solutions.

For a frozen slow state x, the fast equation with tau-periodic coefficients
has (under dissipativity) a random periodic solution S(r, omega): the limit,
as k grows, of flowing an anchor point from time -k*tau up to time r along
the *same* noise realization.  This module estimates S on a grid of section
times by brute-force pullback:

    iterate k:   value_k(r) = flow from (phase 0, y_init) at time -k*tau
                              to time r, driven by omega's increments

and stops when the sup over the r-grid of |value_k - value_{k-1}| falls
below a tolerance.  Each iterate re-simulates from scratch; the cost is
quadratic in the number of iterates but the iteration count is small for
contracting systems and no incremental state needs to be trusted.

The anchor sits at phase 0, so iterate k consumes increments at global
indices [-k*tau_steps, r_steps): successive iterates share all increments
except the freshly exposed oldest period, which is what makes the
convergence criterion meaningful.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError
from .noise import grid_steps
from .noise import shift as shift_path
from .sde_core import LiftedState, _integrate_fast

# Fraction of ensemble samples allowed to miss the pullback tolerance before
# the whole ensemble is rejected.
MAX_EXCLUDED_FRACTION = 0.10


@dataclass(frozen=True, eq=False)
class PeriodicSolutionEstimate:
    """Converged pullback values on a section grid.

    Attributes:
      x_frozen: slow state the fast equation was frozen at, shape (d,).
      r_grid: section times, shape (n_r,), ascending, within [0, periods*tau].
      values: pullback values, shape (n_r, N).
      k_used: number of pullback iterates performed.
      sup_diffs: sup over the r-grid of |iterate k - iterate k-1|, length k_used.
      rate_estimate: least-squares slope of log sup_diffs per iterate (one
        iterate spans one period), fitted on the trailing half; nan if fewer
        than two positive differences are available.
      converged: whether the tolerance was met within k_max.
      tol: sup-norm tolerance used.
      dt: grid step of the driving path.
      tau: coefficient period.
      y_init: anchor value at phase 0.
    """

    x_frozen: np.ndarray
    r_grid: np.ndarray
    values: np.ndarray
    k_used: int
    sup_diffs: np.ndarray
    rate_estimate: float
    converged: bool
    tol: float
    dt: float
    tau: float
    y_init: np.ndarray

    def value_at(self, r):
        """Value at a single section time (must be a point of r_grid)."""
        j = np.flatnonzero(np.isclose(self.r_grid, r, rtol=0.0, atol=1e-9 * max(1.0, abs(r))))
        if len(j) == 0:
            raise ValueError("r=%g is not on the estimate's section grid" % r)
        return self.values[j[0]]

    def lifted_states(self):
        """The estimate as LiftedState points (phase reduced mod tau)."""
        tau_steps = grid_steps(self.tau, self.dt)
        out = []
        for r, y in zip(self.r_grid, self.values):
            step = grid_steps(r, self.dt) % tau_steps
            out.append(LiftedState(step * self.dt, y, step))
        return out


def _fit_rate(sup_diffs):
    """Slope of log sup_diffs vs iterate index over the trailing half."""
    diffs = np.asarray(sup_diffs, dtype=float)
    k = np.arange(1, len(diffs) + 1)
    keep = diffs > 0
    diffs, k = diffs[keep], k[keep]
    if len(diffs) < 2:
        return float("nan")
    half = max(2, (len(diffs) + 1) // 2)
    diffs, k = diffs[-half:], k[-half:]
    slope, _ = np.polyfit(k, np.log(diffs), 1)
    return float(slope)


def pullback_solve(system, x_frozen, y_init, path, k_max, tol,
                   r_grid=None, periods=1):
    """Estimate the random periodic solution of the frozen-x fast equation.

    Args:
      system: SlowFastSystem.
      x_frozen: slow state to freeze, shape (d,).
      y_init: anchor fast state at phase 0, shape (N,).
      path: increment stream; iterate k reads indices [-k*tau_steps, r).
      k_max: maximum number of pullback iterates, >= 2.
      tol: convergence tolerance on the sup over the r-grid.
      r_grid: section times to record (grid-aligned, >= 0); defaults to every
        grid point of [0, periods*tau].
      periods: span of the default r_grid in periods.

    Returns:
      PeriodicSolutionEstimate; `converged` is False if k_max was exhausted
      (values then hold the last iterate, nothing is raised).

    Raises:
      GridAlignmentError: misaligned tau or r_grid entries.
      NumericalBlowupError: the flow left the sanity region.
    """
    dt = path.dt
    tau_steps = system.tau_steps(dt)
    if k_max < 2:
        raise ValueError("k_max must be at least 2, got %d" % k_max)
    if r_grid is None:
        r_grid = dt * np.arange(int(periods) * tau_steps + 1)
    r_grid = np.atleast_1d(np.asarray(r_grid, dtype=float))
    r_steps = np.array([grid_steps(r, dt) for r in r_grid], dtype=int)
    if np.any(r_steps < 0):
        raise ValueError("section times must be nonnegative")
    x_frozen = np.asarray(x_frozen, dtype=float)
    y_init = np.asarray(y_init, dtype=float)

    prev = None
    values = None
    sup_diffs = []
    k_used = 0
    converged = False
    for k in range(1, k_max + 1):
        start = -k * tau_steps
        _, rec = _integrate_fast(
            system, x_frozen, y_init, path, n_steps=int(r_steps.max()) - start,
            noise_i0=start, phase_i0=start, record_local=r_steps - start)
        values = rec
        k_used = k
        if prev is not None:
            sup_diffs.append(float(np.max(np.linalg.norm(values - prev, axis=-1))))
            if sup_diffs[-1] <= tol:
                converged = True
                break
        prev = values

    return PeriodicSolutionEstimate(
        x_frozen=x_frozen, r_grid=r_grid, values=values, k_used=k_used,
        sup_diffs=np.asarray(sup_diffs), rate_estimate=_fit_rate(sup_diffs),
        converged=converged, tol=float(tol), dt=dt, tau=system.tau,
        y_init=y_init)


def pullback_ensemble_multi(system, x_frozen, y_init, paths, r_targets,
                            target_of, k_max, tol):
    """Joint pullback iteration for an ensemble with per-sample section times.

    All samples iterate together (each against its own noise path); sample i
    converges when the value at *its* section time r_targets[target_of[i]]
    changes by at most tol between iterates, and is then dropped from further
    integration.  Dropping is sound because samples do not interact: the
    remaining samples' floating point work is unchanged.

    Args:
      system: SlowFastSystem.
      x_frozen: frozen slow state, shape (d,).
      y_init: anchor value shared by all samples, shape (N,).
      paths: list of M increment streams.
      r_targets: int array of section grid indices (>= 0), one per target.
      target_of: int array (M,) mapping each sample to its target index.
      k_max: iterate budget, >= 2.
      tol: per-sample convergence tolerance.

    Returns:
      (values, k_used, excluded):
        values (M, N) pullback values at each sample's own section,
        k_used (M,) iterate count per sample (k_max for excluded ones),
        excluded (M,) bool mask of non-converged samples.
    """
    dt = paths[0].dt
    tau_steps = system.tau_steps(dt)
    r_targets = np.asarray(r_targets, dtype=int)
    target_of = np.asarray(target_of, dtype=int)
    if np.any(r_targets < 0):
        raise ValueError("section times must be nonnegative")
    M = len(paths)
    N = system.fast_dim
    x_frozen = np.asarray(x_frozen, dtype=float)
    y0_one = np.asarray(y_init, dtype=float)

    values = np.empty((M, N))
    k_used = np.full(M, k_max, dtype=int)
    done = np.zeros(M, dtype=bool)
    active = np.arange(M)
    prev = None  # previous iterate's values for the active samples
    for k in range(1, k_max + 1):
        start = -k * tau_steps
        y0 = np.broadcast_to(y0_one, (len(active), N)).copy()
        _, rec = _integrate_fast(system, x_frozen, y0,
                                 [paths[i] for i in active],
                                 n_steps=int(r_targets.max()) - start,
                                 noise_i0=start, phase_i0=start,
                                 record_local=r_targets - start)
        cur = rec[target_of[active], np.arange(len(active))]
        if prev is not None:
            diff = np.linalg.norm(cur - prev, axis=-1)
            newly = diff <= tol
            idx = active[newly]
            values[idx] = cur[newly]
            k_used[idx] = k
            done[idx] = True
            values[active[~newly]] = cur[~newly]  # last iterate, if never converged
            active = active[~newly]
            prev = cur[~newly]
            if len(active) == 0:
                break
        else:
            values[active] = cur
            prev = cur
    excluded = ~done
    return values, k_used, excluded


def pullback_ensemble(system, x_frozen, y_init, paths, r, k_max, tol):
    """Pullback values at one section time across an ensemble of noise paths.

    Runs the pullback iteration jointly for all paths and tracks convergence
    per sample: a sample's value freezes at its first iterate whose change is
    within tol.  Samples that never meet the tolerance are flagged; if more
    than MAX_EXCLUDED_FRACTION of the ensemble fails, the whole ensemble is
    rejected.

    Args:
      system: SlowFastSystem.
      x_frozen: frozen slow state, shape (d,).
      y_init: anchor value shared by all samples, shape (N,).
      paths: list of M increment streams.
      r: section time (grid-aligned, >= 0).
      k_max: iterate budget.
      tol: per-sample convergence tolerance.

    Returns:
      (values, k_used, excluded):
        values (M, N) pullback values,
        k_used (M,) iterate count per sample (k_max for excluded ones),
        excluded (M,) bool mask of non-converged samples.

    Raises:
      ConvergenceError: more than MAX_EXCLUDED_FRACTION of samples failed.
    """
    dt = paths[0].dt
    r_steps = grid_steps(r, dt)
    values, k_used, excluded = pullback_ensemble_multi(
        system, x_frozen, y_init, paths, [r_steps],
        np.zeros(len(paths), dtype=int), k_max, tol)
    if excluded.mean() > MAX_EXCLUDED_FRACTION:
        raise ConvergenceError(
            "pullback ensemble: %d of %d samples missed tol=%g within k_max=%d"
            % (int(excluded.sum()), len(paths), tol, k_max))
    return values, k_used, excluded


@dataclass(frozen=True, eq=False)
class PeriodicityReport:
    """Residuals of the defining identities of a random periodic solution.

    residual_shift: sup over the section grid of
      |S(r + tau, omega) - S(r, shifted omega)|.
    residual_flow: sup over sampled (s, t) of
      |flow(t, shifted-by-s omega, S(s)) - S(s + t)|, with S(s) and S(s+t)
      independently converged so the residual reflects genuine truncation.
    passed: both residuals within tol + the pullback tolerance.
    """

    residual_shift: float
    residual_flow: float
    flow_samples: tuple
    tol: float
    passed: bool


def verify_random_periodicity(estimate, system, path, tol):
    """Check the periodic-shift and flow identities of a pullback estimate.

    Re-solves the pullback over two periods on the given path and on its
    one-period shift, then forms (a) the shift residual
    S(r+tau, omega) vs S(r, theta_tau omega) over the section grid and
    (b) flow residuals over a coarse (s, t) sample, each endpoint re-solved
    to its own convergence.

    Args:
      estimate: PeriodicSolutionEstimate whose settings (anchor, tol, k) are
        reused.
      system: the system the estimate was built from.
      path: the driving increment stream.
      tol: extra residual allowance; the report's pass flag compares the
        residuals against tol + estimate.tol.

    Returns:
      PeriodicityReport
    """
    dt = path.dt
    tau = system.tau
    tau_steps = system.tau_steps(dt)
    k_max = max(2 * estimate.k_used, 8)

    base = pullback_solve(system, estimate.x_frozen, estimate.y_init, path,
                          k_max, estimate.tol, periods=2)
    shifted = pullback_solve(system, estimate.x_frozen, estimate.y_init,
                             shift_path(path, tau), k_max, estimate.tol, periods=1)
    n_r = tau_steps + 1
    residual_shift = float(np.max(np.linalg.norm(
        base.values[tau_steps : tau_steps + n_r] - shifted.values, axis=-1)))

    quarters = tau_steps // 4
    solved = {}

    def point_value(steps):
        # each sample point converges on its own, so the flow residual sees
        # genuine truncation differences instead of the exact cocycle identity
        if steps not in solved:
            est = pullback_solve(system, estimate.x_frozen, estimate.y_init,
                                 path, k_max, estimate.tol, r_grid=[steps * dt])
            solved[steps] = est.values[0]
        return solved[steps]

    samples = []
    residual_flow = 0.0
    for s_steps in (0, quarters, 2 * quarters, 3 * quarters):
        for t_steps in (quarters, 2 * quarters, 3 * quarters, 4 * quarters):
            s_time = s_steps * dt
            t_time = t_steps * dt
            y_flowed, _ = _integrate_fast(
                system, estimate.x_frozen, point_value(s_steps),
                shift_path(path, s_time),
                n_steps=t_steps, noise_i0=0, phase_i0=s_steps)
            res = float(np.linalg.norm(y_flowed - point_value(s_steps + t_steps)))
            residual_flow = max(residual_flow, res)
            samples.append((s_time, t_time, res))

    bound = tol + estimate.tol
    return PeriodicityReport(
        residual_shift=residual_shift, residual_flow=residual_flow,
        flow_samples=tuple(samples), tol=float(tol),
        passed=(residual_shift <= bound and residual_flow <= bound))


@dataclass(frozen=True, eq=False)
class StabilityReport:
    """Forward contraction of perturbed starts toward the reference orbit.

    distances[p, k] is |flow(k tau, omega, S(0)+delta_p) - flow(k tau, omega, S(0))|;
    slopes[p] is the least-squares slope of log distance vs time k*tau over
    the entries above the numerical floor (nan if fewer than two remain).
    """

    perturbations: np.ndarray
    distances: np.ndarray
    slopes: np.ndarray
    floor: float


def stability_probe(system, x_frozen, estimate, perturbations, path,
                    horizon_periods):
    """Probe forward stability of a pullback estimate under perturbed starts.

    Flows S(0) + delta and the unperturbed S(0) forward along the same noise
    and records the separation at period marks.  The zero perturbation gives
    identically zero distances by construction (both runs share every
    floating point operation).

    Args:
      system: SlowFastSystem.
      x_frozen: frozen slow state (d,).
      estimate: PeriodicSolutionEstimate providing S(0).
      perturbations: array (P, N) or (P,) of start offsets.
      path: driving increment stream (read from local index 0).
      horizon_periods: number of periods to track.

    Returns:
      StabilityReport
    """
    dt = path.dt
    tau_steps = system.tau_steps(dt)
    N = system.fast_dim
    deltas = np.asarray(perturbations, dtype=float)
    if deltas.ndim == 1:
        deltas = deltas[:, None]
    if deltas.shape[1] != N:
        raise ValueError("perturbations must have %d columns, got %s"
                         % (N, deltas.shape))
    s0 = estimate.value_at(0.0)
    starts = np.vstack([s0[None, :], s0[None, :] + deltas])
    H = int(horizon_periods)
    marks = tau_steps * np.arange(H + 1)
    _, rec = _integrate_fast(system, x_frozen, starts, path,
                             n_steps=H * tau_steps, noise_i0=0, phase_i0=0,
                             record_local=marks)
    ref = rec[:, 0, :]
    dist = np.linalg.norm(rec[:, 1:, :] - ref[:, None, :], axis=-1).T  # (P, H+1)

    floor = max(2.0 * estimate.tol, 1e-14)
    slopes = np.full(len(deltas), np.nan)
    times = marks * dt
    for p in range(len(deltas)):
        keep = dist[p] > floor
        if keep.sum() >= 2:
            slopes[p], _ = np.polyfit(times[keep], np.log(dist[p][keep]), 1)
    return StabilityReport(perturbations=deltas, distances=dist,
                           slopes=slopes, floor=floor)
