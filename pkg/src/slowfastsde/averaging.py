"""Averaged slow dynamics: drift construction, ODE solve, error measurement.

The averaged drift Fbar(x) is built two independent ways and the toolkit
never merges them:

* ergodic route: the time average of F(x, Y_t) along one long frozen-x fast
  trajectory (Birkhoff average), with batch-means standard errors;
* measure route: the integral of F(x, .) against empirical periodic
  measures on a grid of sections, averaged over the period, with
  section-resampling standard errors.

Both feed AveragedDriftTable, whose evaluation rule is multilinear
interpolation between nodes.  solve_averaged_ode integrates the
deterministic slow equation dX = eps * Fbar(X) dt with a fixed-step
fourth-order scheme so its error is negligible against the stochastic
error being measured.

The block machinery of the averaging proof is runnable too:
hasminskii_partition splits [0, T/eps] into n(eps) blocks and
auxiliary_process freezes the slow state per block while restarting the
fast state from the true trajectory at each block boundary.

averaging_error_study measures sup |X - Xbar| over the full horizon for a
decreasing list of epsilons, with fast initial data drawn from the
time-averaged empirical periodic measure.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.random import Generator, Philox

from .errors import ExtrapolationError
from .noise import derive_seed, grid_steps, make_path
from .sde_core import Trajectory, _coupled_chunks, _integrate_fast, simulate_fast
from .measures import section_measures, time_average


def averaged_drift_ergodic(system, x, T_erg, burn_in, path):
    """Averaged slow drift at x from one long fast trajectory.

    Simulates the frozen-x fast subsystem on [0, T_erg], discards the
    burn-in, and averages F(x, Y_t) over the remaining steps.  F is treated
    as autonomous (it is evaluated at t = 0, matching the model class).  The
    standard error comes from 16 or more batch means.

    Args:
      system: SlowFastSystem.
      x: slow state, shape (d,).
      T_erg: trajectory length, > burn_in.
      burn_in: initial stretch to discard, >= 0.
      path: increment stream (its dt sets the grid).

    Returns:
      (value, se): arrays of shape (d,).
    """
    if not T_erg > burn_in >= 0:
        raise ValueError("need T_erg > burn_in >= 0, got (%g, %g)"
                         % (T_erg, burn_in))
    x = np.asarray(x, dtype=float)
    dt = path.dt
    traj = simulate_fast(system, x, np.zeros(system.fast_dim), path,
                         0.0, T_erg)
    skip = grid_steps(burn_in, dt)
    ys = traj.states[skip + 1:]
    vals = np.asarray(system.F(0.0, x, ys), dtype=float)

    n = len(vals)
    n_batches = max(16, min(64, n // 1000))
    if n < n_batches:
        raise ValueError("post-burn-in stretch too short for batch means")
    edge = (n // n_batches) * n_batches
    batches = vals[:edge].reshape(n_batches, -1, vals.shape[-1])
    batch_means = batches.mean(axis=1)
    value = vals.mean(axis=0)
    se = batch_means.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return value, se


def averaged_drift_measure(system, x, measures, n_boot=200):
    """Averaged slow drift at x from per-section empirical measures.

    Integrates F(x, .) against each section measure and averages the section
    integrals over the period; the standard error comes from bootstrap
    resampling of whole sections (which respects the dependence of atoms
    within a section).

    Args:
      system: SlowFastSystem.
      x: slow state, shape (d,).
      measures: nonempty list of EmpiricalMeasure covering an r-grid.
      n_boot: bootstrap resamples for the SE.

    Returns:
      (value, se): arrays of shape (d,).
    """
    if not measures:
        raise ValueError("averaged_drift_measure needs at least one section measure")
    x = np.asarray(x, dtype=float)
    per_section = np.stack([
        np.asarray(system.F(0.0, x, m.points), dtype=float).T @ m.weights
        for m in measures])
    value = per_section.mean(axis=0)
    S = len(measures)
    rng = Generator(Philox(key=derive_seed("drift-measure-bootstrap", S)))
    draws = rng.integers(0, S, size=(n_boot, S))
    boot_means = per_section[draws].mean(axis=1)
    se = boot_means.std(axis=0, ddof=1)
    return value, se


@dataclass(frozen=True)
class AveragedDriftTable:
    """Averaged drift sampled on a rectangular grid, with interpolation.

    grids is a tuple of strictly increasing 1-D arrays, one per slow
    dimension (one or two dimensions are supported); values and se have
    shape grid_shape + (d,).  evaluate() interpolates multilinearly and
    refuses to extrapolate.
    """

    grids: tuple
    values: np.ndarray
    se: np.ndarray
    method: str

    def __post_init__(self):
        if len(self.grids) not in (1, 2):
            raise ValueError("drift tables support one or two slow dimensions")
        for g in self.grids:
            if len(g) < 2 or np.any(np.diff(g) <= 0):
                raise ValueError("grid axes must be strictly increasing with >= 2 nodes")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("table values must be finite")

    def _locate(self, axis, q):
        g = self.grids[axis]
        if q < g[0] or q > g[-1]:
            raise ExtrapolationError(
                "query %g outside table range [%g, %g] on axis %d"
                % (q, g[0], g[-1], axis))
        i = min(int(np.searchsorted(g, q, side="right") - 1), len(g) - 2)
        w = (q - g[i]) / (g[i + 1] - g[i])
        return i, w

    def evaluate(self, x):
        """Interpolated drift at x, shape (d,)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if len(self.grids) == 1:
            i, w = self._locate(0, x[0])
            return (1 - w) * self.values[i] + w * self.values[i + 1]
        i, wi = self._locate(0, x[0])
        j, wj = self._locate(1, x[1])
        v = self.values
        return ((1 - wi) * (1 - wj) * v[i, j] + wi * (1 - wj) * v[i + 1, j]
                + (1 - wi) * wj * v[i, j + 1] + wi * wj * v[i + 1, j + 1])

    def max_adjacent_slope(self):
        """Largest finite-difference slope between adjacent nodes."""
        worst = 0.0
        for axis, g in enumerate(self.grids):
            dv = np.diff(self.values, axis=axis)
            dg = np.diff(g).reshape([-1 if a == axis else 1
                                     for a in range(len(self.grids))] + [1])
            worst = max(worst, float(np.max(np.linalg.norm(dv / dg, axis=-1))))
        return worst


def build_drift_table(system, x_grid, method, budgets):
    """Tabulate the averaged drift on a grid by one of three methods.

    Args:
      system: SlowFastSystem (d = 1 for the estimated methods).
      x_grid: strictly increasing 1-D array of slow grid nodes (d = 1), or a
        tuple of two such arrays for a closed-form table on a 2-D grid.
      method: "ergodic", "measure", or "closed-form".
      budgets: per-method settings.
        ergodic: T_erg, burn_in, and optionally dt (1e-3), seed (0).
        measure: n_sections, n_samples, and optionally dt, seed, k_max, tol.
        closed-form: fn, a callable x -> Fbar(x).

    Returns:
      AveragedDriftTable.
    """
    if isinstance(x_grid, tuple):
        grids = tuple(np.asarray(g, dtype=float) for g in x_grid)
    else:
        grids = (np.asarray(x_grid, dtype=float),)
    if len(grids[0]) == 0:
        raise ValueError("empty drift grid")

    if method == "closed-form":
        fn = budgets["fn"]
        if len(grids) == 1:
            pts = grids[0][:, None]
            values = np.stack([np.atleast_1d(np.asarray(fn(p), dtype=float))
                               for p in pts])
        else:
            values = np.stack([
                np.stack([np.atleast_1d(np.asarray(fn(np.array([a, b])), dtype=float))
                          for b in grids[1]])
                for a in grids[0]])
        return AveragedDriftTable(grids=grids, values=values,
                                  se=np.zeros_like(values), method=method)

    if len(grids) != 1 or system.slow_dim != 1:
        raise ValueError("estimated drift tables support one slow dimension")
    dt = budgets.get("dt", 1e-3)
    seed = budgets.get("seed", 0)
    values = []
    ses = []
    if method == "ergodic":
        T_erg, burn_in = budgets["T_erg"], budgets["burn_in"]
        for i, xv in enumerate(grids[0]):
            path = make_path(derive_seed(seed, "drift-ergodic", i), dt,
                             system.noise_dim)
            v, s = averaged_drift_ergodic(system, np.array([xv]), T_erg,
                                          burn_in, path)
            values.append(v)
            ses.append(s)
    elif method == "measure":
        for i, xv in enumerate(grids[0]):
            ms = section_measures(system, np.array([xv]),
                                  budgets["n_sections"], budgets["n_samples"],
                                  seed=derive_seed(seed, "drift-measure", i),
                                  k_max=budgets.get("k_max", 20),
                                  tol=budgets.get("tol", 1e-4), dt=dt)
            v, s = averaged_drift_measure(system, np.array([xv]), ms)
            values.append(v)
            ses.append(s)
    else:
        raise ValueError("unknown drift method %r" % (method,))
    return AveragedDriftTable(grids=grids, values=np.stack(values),
                              se=np.stack(ses), method=method)


def solve_averaged_ode(drift, x0, epsilon, T, dt=1e-3):
    """Integrate the averaged slow equation dX = eps * Fbar(X) dt on [0, T/eps].

    Uses the classical fixed-step fourth-order Runge-Kutta scheme, so the
    deterministic error is O(dt^4) and negligible against the Monte Carlo
    errors this reference is compared to.

    Args:
      drift: AveragedDriftTable or a callable x -> Fbar(x).
      x0: initial slow state, shape (d,).
      epsilon: time-scale parameter, > 0.
      T: slow horizon; T/epsilon must be grid-aligned.
      dt: step size.

    Returns:
      Trajectory on [0, T/epsilon].

    Raises:
      ExtrapolationError: a table query left the grid.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    f = drift.evaluate if isinstance(drift, AveragedDriftTable) else drift
    n = grid_steps(T / epsilon, dt)
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    states = np.empty((n + 1, len(x)))
    states[0] = x
    h = epsilon * dt
    for k in range(n):
        k1 = np.asarray(f(x), dtype=float)
        k2 = np.asarray(f(x + 0.5 * h * k1), dtype=float)
        k3 = np.asarray(f(x + 0.5 * h * k2), dtype=float)
        k4 = np.asarray(f(x + h * k3), dtype=float)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        states[k + 1] = x
    return Trajectory(0.0, dt, states)


@dataclass(frozen=True)
class PartitionScheme:
    """Block partition of [0, T/eps] used by the auxiliary construction.

    n blocks of length t_eps (the last block absorbs the grid remainder);
    n * t_eps * eps recovers T up to one grid cell.
    """

    epsilon: float
    T: float
    n: int
    t_eps: float
    dt: float


def hasminskii_partition(epsilon, T, dt=1e-3):
    """Block count n(eps) = ceil(1 / (eps * ln(1/eps)^(1/4))) and block length.

    The block length T/(eps*n) is rounded down to a grid multiple.

    Args:
      epsilon: in (0, 1/e), so the log root exceeds 1.
      T: slow horizon, > 0.
      dt: grid step.

    Returns:
      PartitionScheme.
    """
    if not 0.0 < epsilon < 1.0 / np.e:
        raise ValueError("epsilon must lie in (0, 1/e), got %g" % epsilon)
    if T <= 0:
        raise ValueError("T must be positive")
    n = int(np.ceil(1.0 / (epsilon * np.log(1.0 / epsilon) ** 0.25)))
    t_eps_steps = int(np.floor(T / (epsilon * n) / dt + 1e-12))
    if t_eps_steps < 1:
        raise ValueError("partition block shorter than one grid step")
    return PartitionScheme(epsilon=float(epsilon), T=float(T), n=n,
                           t_eps=t_eps_steps * dt, dt=float(dt))


def auxiliary_process(system, partition, x_traj, y_traj, path, s0=0.0):
    """Fast process with the slow state frozen per block, restarted each block.

    On block [j*t_eps, (j+1)*t_eps) the slow argument is frozen at the true
    slow state at the block's left endpoint and the fast state restarts from
    the true fast state there, driven by the same increments as the original
    run.  At every restart index the result equals the true fast trajectory
    exactly.

    Args:
      system: SlowFastSystem.
      partition: PartitionScheme (its dt must match the trajectories).
      x_traj, y_traj: slow and fast trajectories from the coupled run,
        covering [0, T/eps] on the same grid.
      path: the increment stream that drove the coupled run.
      s0: the coupled run's initial phase.

    Returns:
      Trajectory of the frozen-slow process on the same grid.
    """
    dt = path.dt
    if abs(partition.dt - dt) > 1e-15 or abs(x_traj.dt - dt) > 1e-15:
        raise ValueError("partition, trajectories, and path must share one dt")
    total = grid_steps(partition.T / partition.epsilon, dt)
    if len(y_traj.states) < total + 1 or len(x_traj.states) < total + 1:
        raise ValueError("trajectories must cover [0, T/eps]")
    t_eps_steps = grid_steps(partition.t_eps, dt)
    s0_steps = grid_steps(s0, dt) % system.tau_steps(dt)
    states = np.empty((total + 1,) + y_traj.states.shape[1:])
    states[0] = y_traj.states[0]
    lefts = [j * t_eps_steps for j in range(partition.n)]
    for j, left in enumerate(lefts):
        right = lefts[j + 1] if j + 1 < len(lefts) else total
        if right <= left:
            break
        _, rec = _integrate_fast(
            system, x_traj.states[left], y_traj.states[left], path,
            n_steps=right - left, noise_i0=left, phase_i0=s0_steps + left,
            record_local=np.arange(right - left + 1), t0_time=left * dt)
        states[left:right + 1] = rec
    return Trajectory(0.0, dt, states)


@dataclass(frozen=True)
class AveragingErrorReport:
    """Sup-norm slow error of one epsilon in the averaging error study.

    sup_errors[j] is sup over the grid of |X_t - Xbar_t| for Monte Carlo
    run j; decreasing_ok records whether the mean fell relative to the
    previous (larger) epsilon within twice the combined standard error
    (None for the first epsilon in the study).
    """

    epsilon: float
    sup_errors: np.ndarray
    mean: float
    se: float
    config: dict
    decreasing_ok: Optional[bool] = None

    def __post_init__(self):
        if np.any(self.sup_errors < 0):
            raise ValueError("sup-errors must be nonnegative")


def averaging_error_study(system, x0, epsilons, T, n_mc, drift,
                          seed=0, dt=1e-3, n_sections=10, n_samples=64,
                          k_max=20, tol=1e-4, y_init=None):
    """Sup-norm averaging error for a decreasing list of epsilons.

    For each epsilon, n_mc coupled slow-fast runs start from x0 with fast
    initial data (phase and value) drawn from the time-averaged empirical
    periodic measure at x0, and the running sup of |X - Xbar| against the
    fourth-order averaged reference is recorded per run.  The report chain
    flags any mean that failed to decrease beyond twice the combined
    standard error; no exception is raised for that.

    Args:
      system: SlowFastSystem (epsilon is overridden per study point).
      x0: initial slow state, shape (d,).
      epsilons: strictly decreasing positive values.
      T: slow horizon (each run covers [0, T/epsilon]).
      n_mc: Monte Carlo runs per epsilon, >= 30.
      drift: AveragedDriftTable or callable for the averaged reference.
      seed: master seed for initial draws and paths.
      dt: grid step.
      n_sections, n_samples, k_max, tol: budget of the initial-data measure.
      y_init: pullback anchor for the initial-data measure.

    Returns:
      list of AveragingErrorReport, in the epsilons' order.
    """
    epsilons = [float(e) for e in epsilons]
    if any(e <= 0 for e in epsilons):
        raise ValueError("epsilons must be positive")
    if any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise ValueError("epsilons must be strictly decreasing")
    if n_mc < 30:
        raise ValueError("n_mc must be at least 30, got %d" % n_mc)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))

    sections = section_measures(system, x0, n_sections, n_samples,
                                seed=derive_seed(seed, "study-measure"),
                                k_max=k_max, tol=tol, dt=dt, y_init=y_init)
    bar = time_average(sections)
    tau_steps = system.tau_steps(dt)

    reports = []
    prev = None
    for e_idx, eps in enumerate(epsilons):
        sys_eps = system.with_epsilon(eps)
        xbar = solve_averaged_ode(drift, x0, eps, T, dt).states
        rng = Generator(Philox(key=derive_seed(seed, "study-init", e_idx)))
        pick = rng.choice(bar.n_atoms, size=n_mc, p=bar.weights)
        s0_steps = np.array([grid_steps(s, dt) % tau_steps
                             for s in bar.phases[pick]])
        y_starts = bar.points[pick]
        paths = [make_path(derive_seed(seed, "study-mc", e_idx, j), dt,
                           system.noise_dim) for j in range(n_mc)]
        n = grid_steps(T / eps, dt)
        x_start = np.broadcast_to(x0, (n_mc, len(x0))).copy()
        sup_err = np.zeros(n_mc)
        for a, X_chunk, _ in _coupled_chunks(sys_eps, x_start, y_starts,
                                             paths, n, s0_steps):
            ref = xbar[a + 1:a + 1 + len(X_chunk)]
            gap = np.linalg.norm(X_chunk - ref[:, None, :], axis=-1)
            np.maximum(sup_err, gap.max(axis=0), out=sup_err)
        mean = float(sup_err.mean())
        se = float(sup_err.std(ddof=1) / np.sqrt(n_mc))
        ok = None
        if prev is not None:
            ok = bool(mean <= prev[0] + 2.0 * np.hypot(se, prev[1]))
        prev = (mean, se)
        reports.append(AveragingErrorReport(
            epsilon=eps, sup_errors=sup_err, mean=mean, se=se,
            config={"T": T, "n_mc": n_mc, "dt": dt, "seed": seed,
                    "n_sections": n_sections, "n_samples": n_samples,
                    "drift": getattr(drift, "method", "callable")},
            decreasing_ok=ok))
    return reports
