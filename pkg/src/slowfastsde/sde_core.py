"""Euler-Maruyama integration of slow-fast SDE systems on the time cylinder.

The systems handled here have a slow component X in R^d and a fast component
Y in R^N driven by m Brownian components,

    dX_t = eps * F(X_t, Y_t) dt
    dY_t = b(t, X_t, Y_t) dt + sum_k sigma_k(t, X_t, Y_t) dW^k_t

with b and sigma tau-periodic in t.  Because the coefficients only see t
through its phase, every integrator in this module evaluates them at the
*reduced* time ((i mod tau_steps) * dt) for step index i.  Two things follow:

* long-horizon runs never lose phase accuracy to floating point drift, and
* the discrete flow is an exact cocycle over the integer shift: composing a
  run of s steps with a run of t steps on the shifted noise reproduces the
  single run of s+t steps bit for bit.

The fast-with-frozen-slow subsystem (X pinned to a constant x) is the object
the pullback and measure machinery iterates; `lifted_flow` exposes it as a
skew-product flow on the cylinder [0, tau) x R^N with an integer phase
coordinate, so the phase is exact by construction.

States may carry a leading batch axis: all integrators accept y0 of shape
(N,) or (M, N) and either a single increment path (common noise across the
batch) or a list of M paths (independent noise).  Coefficient callables must
broadcast accordingly; `validate_system` probes for that.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import GridAlignmentError, NumericalBlowupError
from .noise import grid_steps

# Integration proceeds in chunks of at most this many steps: increments are
# materialized per chunk and the blowup guard runs at chunk boundaries.
CHUNK_STEPS = 1024

# States beyond this magnitude abort the run with NumericalBlowupError.
BLOWUP_THRESHOLD = 1e12


@dataclass(frozen=True)
class VectorField:
    """A coefficient field with metadata.

    The wrapped callable is always invoked as ``fn(t, x, y)`` and must
    vectorize over a leading batch axis of x/y (and over t given as a column
    array).  Fields that ignore some arguments simply drop them.

    Attributes:
      fn: callable (t, x, y) -> ndarray.
      out_shape: trailing shape of the output for unbatched input, e.g. (N,)
        for a drift or (N, m) for a diffusion matrix.
      name: label used in diagnostics.
      constant: True if fn's value is independent of (t, x, y); integrators
        then evaluate it once and use a fused noise product.
    """

    fn: Callable
    out_shape: tuple
    name: str = ""
    constant: bool = False

    def __call__(self, t, x, y):
        return self.fn(t, x, y)


@dataclass(frozen=True)
class SlowFastSystem:
    """Coefficient bundle for one slow-fast system.

    Attributes:
      name: catalog label.
      slow_dim: d, dimension of the slow state.
      fast_dim: N, dimension of the fast state.
      noise_dim: m, number of Brownian components.
      tau: period of b and sigma in t, > 0.
      epsilon: time-scale separation parameter in (0, 1).
      F: slow drift VectorField, output (d,).
      b: fast drift VectorField, output (N,), tau-periodic in t.
      sigma: fast diffusion VectorField, output (N, m), tau-periodic in t.
    """

    name: str
    slow_dim: int
    fast_dim: int
    noise_dim: int
    tau: float
    epsilon: float
    F: VectorField
    b: VectorField
    sigma: VectorField

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive, got %r" % (self.tau,))
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1), got %r" % (self.epsilon,))

    def tau_steps(self, dt):
        """Number of grid steps per period; raises if tau is not a multiple of dt."""
        k = grid_steps(self.tau, dt)
        if k < 1:
            raise GridAlignmentError("tau=%g below one grid step dt=%g" % (self.tau, dt))
        return k

    def with_epsilon(self, epsilon):
        """Copy of this system with a different time-scale parameter."""
        return SlowFastSystem(
            self.name, self.slow_dim, self.fast_dim, self.noise_dim,
            self.tau, float(epsilon), self.F, self.b, self.sigma,
        )


@dataclass(frozen=True, eq=False)
class LiftedState:
    """Point on the cylinder [0, tau) x R^N.

    The phase is stored twice: `s` as a float time and `step` as the exact
    integer grid index with s == step * dt.  All flow arithmetic uses `step`;
    `s` exists for reporting.
    """

    s: float
    y: np.ndarray
    step: int


def lifted_state(s, y, dt, tau):
    """Build a LiftedState with the phase normalized into [0, tau).

    Args:
      s: phase time, any grid-aligned real (reduced mod tau).
      y: fast state, array-like (N,).
      dt: grid step.
      tau: period, a multiple of dt.

    Returns:
      LiftedState
    """
    tau_steps = grid_steps(tau, dt)
    step = grid_steps(s, dt) % tau_steps
    return LiftedState(step * dt, np.asarray(y, dtype=float), step)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States on a uniform grid: states[j] is the state at time t0 + j*dt."""

    t0: float
    dt: float
    states: np.ndarray

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.states.shape[0])

    @property
    def final_state(self):
        return self.states[-1]

    def __len__(self):
        return self.states.shape[0]


def em_step(state, t, drift, diffusion, dW, dt):
    """One Euler-Maruyama step.

    Args:
      state: current state, shape (..., N).
      t: time passed to the coefficient callables.
      drift: callable (t, state) -> (..., N).
      diffusion: callable (t, state) -> (..., N, m).
      dW: Brownian increment, shape (..., m) or (m,).
      dt: step size.

    Returns:
      ndarray (..., N): state + drift*dt + diffusion @ dW.
    """
    state = np.asarray(state, dtype=float)
    return state + np.asarray(drift(t, state)) * dt + _apply_sigma(diffusion(t, state), dW)


def _apply_sigma(sig, dW):
    """Contract a diffusion matrix (..., N, m) against increments (..., m)."""
    return np.matmul(np.asarray(sig), np.asarray(dW)[..., None])[..., 0]


def _fetch_increments(paths, i0, i1):
    """Increments for [i0, i1): (steps, m) for one path, (steps, M, m) for a list."""
    if isinstance(paths, (list, tuple)):
        return np.stack([p.increments(i0, i1) for p in paths], axis=1)
    return paths.increments(i0, i1)


def _path_dt(paths):
    return paths[0].dt if isinstance(paths, (list, tuple)) else paths.dt


def _check_blowup(*states):
    for st in states:
        if not np.all(np.isfinite(st)) or np.max(np.abs(st)) > BLOWUP_THRESHOLD:
            return True
    return False


def _constant_sigma_matrix(system):
    """The (N, m) value of a constant diffusion field, else None."""
    if not system.sigma.constant:
        return None
    return np.asarray(
        system.sigma(0.0, np.zeros(system.slow_dim), np.zeros(system.fast_dim)),
        dtype=float)


def _phase_time(local, s0_steps, tau_steps, dt):
    """Reduced coefficient time for local step index `local`.

    Scalar s0_steps gives a scalar time; an (M,) array gives an (M, 1) column
    so the value broadcasts against batched states (M, N).
    """
    if np.ndim(s0_steps) == 0:
        return ((int(s0_steps) + local) % tau_steps) * dt
    return (((s0_steps + local) % tau_steps) * dt)[:, None]


def _integrate_fast(system, x, y, paths, n_steps, noise_i0, phase_i0,
                    record_local=None, t0_time=None):
    """Drive the frozen-slow fast recursion for n_steps EM steps.

    Noise is read at path indices noise_i0 + local; coefficients are read at
    phase ((phase_i0 + local) mod tau_steps) * dt.  phase_i0 may be an (M,)
    int array for per-sample phases.

    Args:
      system: SlowFastSystem.
      x: frozen slow state, shape (d,) or (M, d).
      y: initial fast state, shape (N,) or (M, N).
      paths: one path (common noise) or list of M paths.
      n_steps: number of EM steps, >= 0.
      noise_i0: global index of the first increment consumed.
      phase_i0: coefficient phase index of the first step.
      record_local: optional int array in [0, n_steps]; the state at each
        listed local index is stored (index 0 is the initial state).
      t0_time: wall-clock time of the initial state, used only in blowup
        reports (defaults to noise_i0 * dt).

    Returns:
      (y_final, recorded): final state and the stacked recorded states
      (len(record_local), ..., N), or None if record_local is None.

    Raises:
      NumericalBlowupError: if the state leaves the sanity region.
    """
    dt = _path_dt(paths)
    tau_steps = system.tau_steps(dt)
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if t0_time is None:
        t0_time = noise_i0 * dt

    rec = None
    rec_order = rec_sorted = None
    n_rec = 0
    rp = 0
    nxt = -1
    if record_local is not None:
        record_local = np.asarray(record_local, dtype=int)
        if len(record_local) and (record_local.min() < 0
                                  or record_local.max() > n_steps):
            raise ValueError("record_local indices must lie in [0, n_steps]")
        rec = np.empty((len(record_local),) + y.shape)
        rec_order = np.argsort(record_local, kind="stable")
        rec_sorted = record_local[rec_order]
        n_rec = len(rec_sorted)
        while rp < n_rec and rec_sorted[rp] == 0:
            rec[rec_order[rp]] = y
            rp += 1
        if rp < n_rec:
            nxt = int(rec_sorted[rp])

    sig_const = _constant_sigma_matrix(system)

    b_fn = system.b
    sigma_fn = system.sigma
    for a in range(0, n_steps, CHUNK_STEPS):
        bnd = min(a + CHUNK_STEPS, n_steps)
        dW = _fetch_increments(paths, noise_i0 + a, noise_i0 + bnd)
        y_start = y
        noise = np.matmul(dW, sig_const.T) if sig_const is not None else None
        for k in range(bnd - a):
            t = _phase_time(a + k, phase_i0, tau_steps, dt)
            if noise is not None:
                y = y + b_fn(t, x, y) * dt + noise[k]
            else:
                y = y + b_fn(t, x, y) * dt + _apply_sigma(sigma_fn(t, x, y), dW[k])
            if a + k + 1 == nxt:
                while rp < n_rec and rec_sorted[rp] == nxt:
                    rec[rec_order[rp]] = y
                    rp += 1
                nxt = int(rec_sorted[rp]) if rp < n_rec else -1
        if _check_blowup(y):
            _raise_at_first_bad_step(
                lambda yy, k: yy + b_fn(_phase_time(a + k, phase_i0, tau_steps, dt), x, yy) * dt
                + _apply_sigma(sigma_fn(_phase_time(a + k, phase_i0, tau_steps, dt), x, yy), dW[k]),
                y_start, bnd - a, t0_time + a * dt, dt)
    return y, rec


def _raise_at_first_bad_step(step_fn, y_start, n, t_start, dt):
    """Replay a tripped chunk stepwise to report the first bad state."""
    y = y_start
    for k in range(n):
        y = step_fn(y, k)
        if _check_blowup(y):
            raise NumericalBlowupError(t_start + (k + 1) * dt, y, BLOWUP_THRESHOLD)
    raise NumericalBlowupError(t_start + n * dt, y, BLOWUP_THRESHOLD)


def _coupled_chunks(system, x, y, paths, n_steps, s0_steps=0):
    """Yield post-step states of the coupled recursion in chunks.

    Yields (local_start, X_chunk, Y_chunk) where X_chunk[k] is the slow state
    after step local_start + k (i.e. at grid index local_start + k + 1), and
    likewise for Y_chunk.  Noise is read at path indices [0, n_steps);
    coefficients at phase ((s0_steps + local) mod tau_steps) * dt.

    The caller owns the initial state; chunks contain only post-step states.
    """
    dt = _path_dt(paths)
    tau_steps = system.tau_steps(dt)
    eps = system.epsilon
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    F_fn, b_fn, sigma_fn = system.F, system.b, system.sigma
    sig_const = _constant_sigma_matrix(system)

    for a in range(0, n_steps, CHUNK_STEPS):
        bnd = min(a + CHUNK_STEPS, n_steps)
        dW = _fetch_increments(paths, a, bnd)
        L = bnd - a
        X_chunk = np.empty((L,) + x.shape)
        Y_chunk = np.empty((L,) + y.shape)
        if sig_const is not None:
            noise = np.matmul(dW, sig_const.T)
        for k in range(L):
            t = _phase_time(a + k, s0_steps, tau_steps, dt)
            fx = F_fn(t, x, y)
            if sig_const is not None:
                y_new = y + b_fn(t, x, y) * dt + noise[k]
            else:
                y_new = y + b_fn(t, x, y) * dt + _apply_sigma(sigma_fn(t, x, y), dW[k])
            x = x + eps * fx * dt
            y = y_new
            X_chunk[k] = x
            Y_chunk[k] = y
        if _check_blowup(x, y):
            mags = np.maximum(np.abs(X_chunk).reshape(L, -1).max(axis=1),
                              np.abs(Y_chunk).reshape(L, -1).max(axis=1))
            bad = int(np.argmax(~np.isfinite(mags) | (mags > BLOWUP_THRESHOLD)))
            raise NumericalBlowupError((a + bad + 1) * dt,
                                       Y_chunk[bad], BLOWUP_THRESHOLD)
        yield a, X_chunk, Y_chunk


def simulate_fast(system, x_frozen, y0, path, t0, t1):
    """Simulate the fast subsystem with the slow state frozen.

    Integrates dY = b(t, x, Y) dt + sigma(t, x, Y) dW from t0 to t1 with the
    Euler-Maruyama scheme, consuming the path's increments at the absolute
    grid indices of [t0, t1) and evaluating coefficients at t reduced mod tau.

    Args:
      system: SlowFastSystem.
      x_frozen: slow state held fixed, shape (d,).
      y0: initial fast state at time t0, shape (N,).
      path: BrownianPath or shifted view with system.noise_dim components.
      t0, t1: grid-aligned times, t0 <= t1 (both may be negative).

    Returns:
      Trajectory with states[j] = Y at time t0 + j*dt, states shape
      (steps+1, N).

    Raises:
      GridAlignmentError: t0, t1, or tau off the grid.
      NumericalBlowupError: the state left the sanity region.
    """
    dt = path.dt
    i0 = grid_steps(t0, dt)
    i1 = grid_steps(t1, dt)
    if i1 < i0:
        raise ValueError("need t0 <= t1, got (%g, %g)" % (t0, t1))
    n = i1 - i0
    y0 = np.asarray(y0, dtype=float)
    _, rec = _integrate_fast(system, x_frozen, y0, path, n,
                             noise_i0=i0, phase_i0=i0,
                             record_local=np.arange(n + 1), t0_time=t0)
    return Trajectory(t0=i0 * dt, dt=dt, states=rec)


def simulate_slow_fast(system, x0, y0, path, T_over_eps, s0=0.0):
    """Simulate the coupled slow-fast pair on [0, T_over_eps].

    Integrates dX = eps*F(X, Y) dt, dY = b dt + sigma dW in the original time
    scale: over a horizon T/eps the slow component moves O(T) while the fast
    component keeps O(1) dynamics resolved by the grid step.

    Args:
      system: SlowFastSystem (eps read from system.epsilon).
      x0: initial slow state, shape (d,).
      y0: initial fast state, shape (N,).
      path: increment stream with system.noise_dim components.
      T_over_eps: horizon, a grid-aligned positive time.
      s0: initial phase of the fast clock (grid-aligned, default 0); the
        coefficients of step j are evaluated at (s0 + j*dt) mod tau.

    Returns:
      (slow, fast): two Trajectory objects on the same grid with t0=0.

    Raises:
      GridAlignmentError, NumericalBlowupError
    """
    dt = path.dt
    n = grid_steps(T_over_eps, dt)
    if n < 0:
        raise ValueError("horizon must be nonnegative, got %g" % T_over_eps)
    s0_steps = grid_steps(s0, dt) % system.tau_steps(dt)
    x = np.asarray(x0, dtype=float)
    y = np.asarray(y0, dtype=float)
    xs = np.empty((n + 1,) + x.shape)
    ys = np.empty((n + 1,) + y.shape)
    xs[0] = x
    ys[0] = y
    for a, X_chunk, Y_chunk in _coupled_chunks(system, x, y, path, n, s0_steps):
        xs[a + 1 : a + 1 + len(X_chunk)] = X_chunk
        ys[a + 1 : a + 1 + len(Y_chunk)] = Y_chunk
    return (Trajectory(0.0, dt, xs), Trajectory(0.0, dt, ys))


def lifted_flow(system, x_frozen, y0_lifted, path, t):
    """Apply the skew-product fast flow on the cylinder for duration t.

    From the lifted point (s, y) the flow advances the phase deterministically
    and drives y through the frozen-slow fast equation with coefficients read
    at phase s + u and noise read at the path's *local* indices [0, t/dt).
    Shift the path before calling to realize the flow at another noise origin;
    the cocycle identity

        flow(t + s, omega, p) == flow(t, shift(omega, s), flow(s, omega, p))

    then holds bit for bit, because both sides perform the identical sequence
    of floating point operations.

    Args:
      system: SlowFastSystem.
      x_frozen: frozen slow state, shape (d,).
      y0_lifted: LiftedState start point.
      path: increment stream; increments are consumed from local index 0.
      t: duration, a nonnegative grid-aligned time.

    Returns:
      LiftedState at phase (s + t) mod tau.
    """
    dt = path.dt
    tau_steps = system.tau_steps(dt)
    n = grid_steps(t, dt)
    if n < 0:
        raise ValueError("duration must be nonnegative, got %g" % t)
    step0 = int(y0_lifted.step) % tau_steps
    y_final, _ = _integrate_fast(system, x_frozen, y0_lifted.y, path, n,
                                 noise_i0=0, phase_i0=step0,
                                 t0_time=step0 * dt)
    step1 = (step0 + n) % tau_steps
    return LiftedState(step1 * dt, y_final, step1)


def validate_system(system, dt=1e-3, seed=0):
    """Probe a system's coefficient fields for shape, broadcast, and periodicity.

    Evaluates F, b, sigma at a few random points, unbatched and batched, and
    checks that b and sigma are tau-periodic in t at those points.

    Raises:
      ValueError: wrong output shapes or broken batch broadcasting.
      GridAlignmentError: tau not a multiple of dt.
    """
    system.tau_steps(dt)
    rng = np.random.Generator(np.random.Philox(key=seed))
    d, N, m = system.slow_dim, system.fast_dim, system.noise_dim
    x = rng.standard_normal(d)
    y = rng.standard_normal(N)
    xB = rng.standard_normal((5, d))
    yB = rng.standard_normal((5, N))
    for t in (0.0, 0.37 * system.tau, 0.91 * system.tau):
        for label, fld, shape in (("F", system.F, (d,)),
                                  ("b", system.b, (N,)),
                                  ("sigma", system.sigma, (N, m))):
            out = np.asarray(fld(t, x, y))
            if out.shape != shape:
                raise ValueError("%s: expected shape %s at unbatched input, got %s"
                                 % (label, shape, out.shape))
            outB = np.asarray(fld(t, xB, yB))
            if outB.shape != (5,) + shape:
                raise ValueError("%s: expected batched shape %s, got %s"
                                 % (label, (5,) + shape, outB.shape))
        for label, fld in (("b", system.b), ("sigma", system.sigma)):
            v0 = np.asarray(fld(t, x, y))
            v1 = np.asarray(fld(t + system.tau, x, y))
            if not np.allclose(v0, v1, rtol=1e-9, atol=1e-9):
                raise ValueError("%s is not tau-periodic in t (checked t=%g)" % (label, t))
    return True
