"""Empirical periodic measures on cylinder sections and their comparison.

A periodic measure assigns to each section time r the law of the random
periodic solution S(r, .): here that law is approximated by pulling back an
ensemble of independent noise realizations to the section (one atom per
realization).  The time-averaged measure concatenates equispaced sections
with equal mass.

Measures are compared in the bounded-Lipschitz distance

    d_BL(mu, nu) = sup { integral f d(mu - nu) : |f| <= 1, Lip(f) <= 1 },

computed *exactly* on finite supports by linear programming over the atom
values of f.  The ground metric is the cylinder metric
sqrt(d_circle(s, s')^2 + |y - y'|^2).

The Krylov-Bogolyubov check drives forward orbits from time-averaged initial
data and confirms that period-sampled occupation frequencies of a test set
converge to the measure's mass, which is the ergodicity property on the
Poincare section that the averaging principle rests on.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import ConvergenceError
from .noise import derive_seed, grid_steps, make_path
from .pullback import (MAX_EXCLUDED_FRACTION, pullback_ensemble,
                       pullback_ensemble_multi)
from .sde_core import LiftedState, _integrate_fast

# Largest per-measure support passed to the LP without subsampling.
BL_MAX_ATOMS = 512


@dataclass(frozen=True)
class CylinderMetric:
    """Product metric on [0, tau) x R^N with a circle distance in the phase."""

    tau: float

    def circle_distance(self, s0, s1):
        d = np.abs(np.asarray(s0, dtype=float) - np.asarray(s1, dtype=float)) % self.tau
        return np.minimum(d, self.tau - d)

    def distance(self, p, q):
        """Distance between two LiftedState points."""
        ds = self.circle_distance(p.s, q.s)
        return float(np.sqrt(ds**2 + np.sum((p.y - q.y) ** 2)))

    def pairwise(self, phases_a, points_a, phases_b, points_b):
        """Full distance matrix between two atom clouds, shape (na, nb)."""
        ds = self.circle_distance(phases_a[:, None], phases_b[None, :])
        dy2 = np.sum((points_a[:, None, :] - points_b[None, :, :]) ** 2, axis=-1)
        return np.sqrt(ds**2 + dy2)


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Weighted atoms on the cylinder.

    Attributes:
      phases: atom section times in [0, tau), shape (n,).
      points: atom fast states, shape (n, N).
      weights: nonnegative, summing to 1, shape (n,).
      tau: cylinder circumference.
      dt: grid step the atoms were generated on (phases are grid-aligned).
      x_frozen: slow state the generating fast equation was frozen at, or
        None for measures not produced by the pullback constructors.
    """

    phases: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    tau: float
    dt: float
    x_frozen: np.ndarray = None

    def __post_init__(self):
        n = len(self.phases)
        if self.points.shape[0] != n or self.weights.shape[0] != n or n == 0:
            raise ValueError("inconsistent or empty atom arrays")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")

    @property
    def n_atoms(self):
        return len(self.phases)

    @property
    def support(self):
        tau_steps = grid_steps(self.tau, self.dt)
        return [LiftedState(s, y, grid_steps(s, self.dt) % tau_steps)
                for s, y in zip(self.phases, self.points)]

    def mean(self):
        return self.weights @ self.points

    def var(self):
        mu = self.mean()
        return self.weights @ (self.points - mu) ** 2

    def mass(self, box):
        """Weighted mass of a CylinderBox."""
        return float(self.weights @ box.contains(self.phases, self.points))


@dataclass(frozen=True)
class CylinderBox:
    """Product test set [s_lo, s_hi) x prod_i [y_lo_i, y_hi_i) on the cylinder.

    Use +-inf bounds for half spaces; the phase interval must satisfy
    0 <= s_lo <= s_hi <= tau (no wraparound).
    """

    s_lo: float
    s_hi: float
    y_lo: tuple
    y_hi: tuple

    def contains(self, phases, points):
        lo = np.asarray(self.y_lo, dtype=float)
        hi = np.asarray(self.y_hi, dtype=float)
        mask = (np.asarray(phases) >= self.s_lo) & (np.asarray(phases) < self.s_hi)
        mask &= np.all(points >= lo, axis=-1) & np.all(points < hi, axis=-1)
        return mask


def _measure_paths(seed, label, n, dt, dims):
    return [make_path(derive_seed(seed, label, j), dt, dims) for j in range(n)]


def empirical_periodic_measure(system, x_frozen, r, n_samples, seed,
                               k_max=20, tol=1e-4, dt=1e-3, y_init=None):
    """Empirical law of the random periodic solution at one section time.

    Pulls back n_samples independent noise realizations to section r; the
    converged values become equally weighted atoms at phase r mod tau.
    Samples that miss the pullback tolerance are dropped and the mass is
    renormalized (more than 10% of them is an error).

    Args:
      system: SlowFastSystem.
      x_frozen: frozen slow state, shape (d,).
      r: section time, grid-aligned, >= 0.
      n_samples: ensemble size.
      seed: master seed; sample j uses derive_seed(seed, "measure-sample", j).
      k_max, tol: pullback iteration budget and tolerance.
      dt: grid step.
      y_init: pullback anchor (defaults to the origin).

    Returns:
      EmpiricalMeasure

    Raises:
      ConvergenceError: too many samples failed to converge.
    """
    if y_init is None:
        y_init = np.zeros(system.fast_dim)
    x_frozen = np.asarray(x_frozen, dtype=float)
    paths = _measure_paths(seed, "measure-sample", n_samples, dt, system.noise_dim)
    values, _, excluded = pullback_ensemble(system, x_frozen, y_init, paths,
                                            r, k_max, tol)
    keep = ~excluded
    pts = values[keep]
    tau_steps = system.tau_steps(dt)
    phase = (grid_steps(r, dt) % tau_steps) * dt
    n = len(pts)
    return EmpiricalMeasure(
        phases=np.full(n, phase), points=pts,
        weights=np.full(n, 1.0 / n), tau=system.tau, dt=dt, x_frozen=x_frozen)


def section_measures(system, x_frozen, n_sections, n_samples, seed,
                     k_max=20, tol=1e-4, dt=1e-3, y_init=None):
    """Section measures at n_sections equispaced times in [0, tau).

    Sections use independent sub-seeds, so their atoms are independent
    across sections; the pullback iteration itself runs jointly over the
    whole (section, sample) ensemble for speed, with per-sample convergence
    at that sample's own section time.  The atoms are bit-identical to what
    per-section `empirical_periodic_measure` calls with seeds
    derive_seed(seed, "section", j) would produce.

    Args:
      system, x_frozen, n_samples, seed, k_max, tol, dt, y_init: as in
        empirical_periodic_measure.
      n_sections: number of equispaced sections; must divide tau/dt.

    Returns:
      list of EmpiricalMeasure, one per section time j*tau/n_sections.

    Raises:
      ConvergenceError: some section lost more than 10% of its samples.
    """
    tau_steps = system.tau_steps(dt)
    S = int(n_sections)
    if tau_steps % S != 0:
        raise ValueError("n_sections=%d must divide tau/dt=%d" % (S, tau_steps))
    q = tau_steps // S
    if y_init is None:
        y_init = np.zeros(system.fast_dim)
    x_frozen = np.asarray(x_frozen, dtype=float)

    paths = []
    for s in range(S):
        sec_seed = derive_seed(seed, "section", s)
        for j in range(n_samples):
            paths.append(make_path(derive_seed(sec_seed, "measure-sample", j),
                                   dt, system.noise_dim))
    own_section = np.repeat(np.arange(S), n_samples)
    targets = q * np.arange(S)
    values, _, excluded = pullback_ensemble_multi(
        system, x_frozen, y_init, paths, targets, own_section, k_max, tol)

    out = []
    for s in range(S):
        block = slice(s * n_samples, (s + 1) * n_samples)
        bad = excluded[block]
        if bad.mean() > MAX_EXCLUDED_FRACTION:
            raise ConvergenceError(
                "section %d: %d of %d samples missed tol=%g within k_max=%d"
                % (s, int(bad.sum()), n_samples, tol, k_max))
        pts = values[block][~bad]
        n = len(pts)
        phase = targets[s] * dt
        out.append(EmpiricalMeasure(
            phases=np.full(n, phase), points=pts, weights=np.full(n, 1.0 / n),
            tau=system.tau, dt=dt, x_frozen=x_frozen))
    return out


def time_average(measures):
    """Equal-mass mixture of section measures (the time-averaged measure)."""
    if not measures:
        raise ValueError("need at least one section measure")
    tau, dt = measures[0].tau, measures[0].dt
    S = len(measures)
    phases = np.concatenate([m.phases for m in measures])
    points = np.concatenate([m.points for m in measures])
    weights = np.concatenate([m.weights / S for m in measures])
    return EmpiricalMeasure(phases=phases, points=points, weights=weights,
                            tau=tau, dt=dt)


def _subsampled_atoms(measure, max_atoms):
    n = measure.n_atoms
    if n <= max_atoms:
        return measure.phases, measure.points, measure.weights
    stride = int(np.ceil(n / max_atoms))
    idx = np.arange(0, n, stride)
    warnings.warn("bl_distance: support subsampled from %d to %d atoms"
                  % (n, len(idx)), stacklevel=3)
    w = measure.weights[idx]
    return measure.phases[idx], measure.points[idx], w / w.sum()


def bl_distance(mu, nu, metric=None, max_atoms=BL_MAX_ATOMS):
    """Exact bounded-Lipschitz distance between finite measures.

    Solves the linear program

        maximize   sum_i (mu_i - nu_i) f_i
        subject to |f_i| <= 1,  |f_i - f_j| <= d(p_i, p_j)

    over the combined support.  Pair constraints with d >= 2 are dropped:
    they are implied by the box bounds, so the optimum is unchanged.
    Supports larger than max_atoms are deterministically strided down with a
    warning (the result is then the distance of the subsampled measures).

    Args:
      mu, nu: EmpiricalMeasure on a common cylinder.
      metric: CylinderMetric (defaults to the measures' tau).
      max_atoms: per-measure support cap before subsampling.

    Returns:
      float

    Raises:
      ValueError: mismatched cylinders.
      RuntimeError: LP solver failure.
    """
    if abs(mu.tau - nu.tau) > 1e-12:
        raise ValueError("measures live on different cylinders")
    if metric is None:
        metric = CylinderMetric(mu.tau)
    ph_a, pt_a, w_a = _subsampled_atoms(mu, max_atoms)
    ph_b, pt_b, w_b = _subsampled_atoms(nu, max_atoms)
    phases = np.concatenate([ph_a, ph_b])
    points = np.vstack([pt_a, pt_b])
    signed = np.concatenate([w_a, -w_b])
    n = len(phases)

    D = metric.pairwise(phases, points, phases, points)
    iu, ju = np.triu_indices(n, 1)
    dvals = D[iu, ju]
    keep = dvals < 2.0
    iu, ju, dvals = iu[keep], ju[keep], dvals[keep]
    K = len(dvals)

    if K > 0:
        rows = np.repeat(np.arange(2 * K), 2)
        cols = np.concatenate([np.stack([iu, ju], axis=1).ravel(),
                               np.stack([iu, ju], axis=1).ravel()])
        data = np.concatenate([np.tile([1.0, -1.0], K), np.tile([-1.0, 1.0], K)])
        A_ub = sparse.csr_matrix((data, (rows, cols)), shape=(2 * K, n))
        b_ub = np.concatenate([dvals, dvals])
    else:
        # every pair is at least 2 apart: the box bounds alone are binding
        A_ub, b_ub = None, None

    res = linprog(c=-signed, A_ub=A_ub, b_ub=b_ub, bounds=(-1.0, 1.0),
                  method="highs")
    if res.status != 0:
        raise RuntimeError("bounded-Lipschitz LP failed: %s" % res.message)
    return max(0.0, float(-res.fun))


def evolve_measure(measure, system, periods, seed, x_frozen=None):
    """Push an empirical measure forward a whole number of periods.

    Each atom evolves under the frozen-x fast flow with its own fresh noise
    stream; phases are unchanged (the flow advances them by full periods).

    Args:
      measure: EmpiricalMeasure.
      system: SlowFastSystem.
      periods: number of periods to advance, >= 1.
      seed: master seed for the fresh streams.
      x_frozen: frozen slow state; defaults to the one recorded on the
        measure.

    Returns:
      EmpiricalMeasure with the same phases and weights.
    """
    if x_frozen is None:
        x_frozen = measure.x_frozen
    if x_frozen is None:
        raise ValueError("measure carries no frozen slow state; pass x_frozen")
    dt = measure.dt
    tau_steps = system.tau_steps(dt)
    n = measure.n_atoms
    paths = _measure_paths(seed, "evolve", n, dt, system.noise_dim)
    phase_steps = np.array([grid_steps(s, dt) % tau_steps for s in measure.phases])
    y_final, _ = _integrate_fast(system, np.asarray(x_frozen, dtype=float),
                                 measure.points, paths,
                                 n_steps=int(periods) * tau_steps,
                                 noise_i0=0, phase_i0=phase_steps)
    return EmpiricalMeasure(phases=measure.phases, points=y_final,
                            weights=measure.weights, tau=measure.tau, dt=dt,
                            x_frozen=np.asarray(x_frozen, dtype=float))


@dataclass(frozen=True, eq=False)
class KBCurve:
    """Krylov-Bogolyubov convergence curve per test set.

    curve[b, m-1] = | mean over orbits j, sections r, periods k < m of
                      1{orbit_j at time r + k tau in box_b} - mass_b |,
    where orbits start from atoms of the time-averaged measure and mass_b is
    the box's weight under it.  se combines the orbit spread with a
    section-bootstrap error of the mass; inconclusive[b] is set when even the
    m=1 discrepancy is below its standard error (nothing to resolve).
    """

    boxes: tuple
    ms: np.ndarray
    curve: np.ndarray
    se: np.ndarray
    masses: np.ndarray
    inconclusive: np.ndarray


def krylov_bogolyubov_curve(system, x_frozen, test_sets, m_max, seed,
                            n_orbits=256, n_sections=50, n_samples=64,
                            k_max=20, tol=1e-4, dt=1e-3):
    """Occupation-frequency convergence toward the time-averaged measure.

    Builds the time-averaged empirical measure from equispaced sections,
    starts n_orbits forward orbits from atoms drawn out of it (fresh noise),
    and for every test set compares the running occupation frequency sampled
    at section times r + k*tau against the measure's mass, averaging over
    sections before taking the absolute value.

    Args:
      system: SlowFastSystem.
      x_frozen: frozen slow state.
      test_sets: iterable of CylinderBox.
      m_max: largest period count of the Cesaro average.
      seed: master seed (sections, starts, and orbits derive from it).
      n_orbits: number of forward orbits.
      n_sections: equispaced sections (must divide tau/dt).
      n_samples: pullback ensemble size per section.
      k_max, tol, dt: pullback configuration.

    Returns:
      KBCurve
    """
    tau_steps = system.tau_steps(dt)
    S = int(n_sections)
    sections = section_measures(system, x_frozen, S, n_samples,
                                derive_seed(seed, "kb-measure"),
                                k_max=k_max, tol=tol, dt=dt)
    bar = time_average(sections)
    q = tau_steps // S

    rng = np.random.Generator(np.random.Philox(key=derive_seed(seed, "kb-starts")))
    J = int(n_orbits)
    pick = rng.choice(bar.n_atoms, size=J, p=bar.weights)
    y0 = bar.points[pick]
    start_steps = np.array([grid_steps(s, dt) for s in bar.phases[pick]])
    start_idx = start_steps // q  # section index of each orbit's start phase

    paths = _measure_paths(seed, "kb-orbit", J, dt, system.noise_dim)
    n_steps = m_max * tau_steps
    record = q * np.arange(m_max * S + 1)
    _, rec = _integrate_fast(system, np.asarray(x_frozen, dtype=float), y0,
                             paths, n_steps=n_steps, noise_i0=0,
                             phase_i0=start_steps, record_local=record)
    rec = rec.transpose(1, 0, 2)  # (J, records, N)

    # orbit j passes section i_s at local record offset ((i_s - start) mod S) + k*S
    sec_idx = np.arange(S)
    offs = (sec_idx[None, :] - start_idx[:, None]) % S          # (J, S)
    kk = np.arange(m_max)
    gather = offs[:, :, None] + kk[None, None, :] * S           # (J, S, m_max)
    ys = rec[np.arange(J)[:, None, None], gather]               # (J, S, m_max, N)
    r_phases = sec_idx * q * dt

    boxes = tuple(test_sets)
    ms = np.arange(1, m_max + 1)
    curve = np.empty((len(boxes), m_max))
    se = np.empty((len(boxes), m_max))
    masses = np.empty(len(boxes))
    inconclusive = np.zeros(len(boxes), dtype=bool)
    boot_rng = np.random.Generator(np.random.Philox(key=derive_seed(seed, "kb-boot")))
    sec_masses = np.empty((len(boxes), S))
    for b, box in enumerate(boxes):
        masses[b] = bar.mass(box)
        for s in range(S):
            sec_masses[b, s] = sections[s].mass(box)
        resample = boot_rng.integers(0, S, size=(200, S))
        se_mass = float(np.std(sec_masses[b][resample].mean(axis=1)))

        # phase factor: indicator of r in the box's phase interval
        phase_ok = (r_phases >= box.s_lo) & (r_phases < box.s_hi)
        lo = np.asarray(box.y_lo, dtype=float)
        hi = np.asarray(box.y_hi, dtype=float)
        y_ok = np.all(ys >= lo, axis=-1) & np.all(ys < hi, axis=-1)  # (J, S, m)
        hits = y_ok & phase_ok[None, :, None]
        g = np.cumsum(hits.mean(axis=1), axis=-1) / ms               # (J, m)
        diff = g.mean(axis=0) - masses[b]
        curve[b] = np.abs(diff)
        se_orbit = g.std(axis=0, ddof=1) / np.sqrt(J)
        se[b] = np.sqrt(se_orbit**2 + se_mass**2)
        inconclusive[b] = curve[b, 0] <= se[b, 0]
    return KBCurve(boxes=boxes, ms=ms, curve=curve, se=se, masses=masses,
                   inconclusive=inconclusive)


@dataclass(frozen=True, eq=False)
class LipschitzProbe:
    """d_BL between sections at nearby slow states, per consecutive pair."""

    x_values: np.ndarray
    distances: np.ndarray
    ratios: np.ndarray


def measure_lipschitz_probe(system, x_list, r, seed, n_samples=256,
                            k_max=20, tol=1e-4, dt=1e-3):
    """Continuity of the periodic measure in the frozen slow state.

    Builds the section-r measure for each x with *common random numbers*
    (sample j shares its noise stream across all x), so the reported
    d_BL(mu_x_i, mu_x_{i+1}) / |x_i - x_{i+1}| ratios estimate a local
    Lipschitz modulus rather than Monte Carlo noise.

    Args:
      system: SlowFastSystem.
      x_list: increasing sequence of slow states (scalars or (d,) arrays).
      r: section time.
      seed: master seed shared across x (this is the CRN coupling).
      n_samples, k_max, tol, dt: ensemble configuration.

    Returns:
      LipschitzProbe with distances[i] = d_BL between measures at x_i, x_{i+1}.
    """
    xs = [np.atleast_1d(np.asarray(x, dtype=float)) for x in x_list]
    if len(xs) < 2:
        raise ValueError("need at least two slow states")
    mus = [empirical_periodic_measure(system, x, r, n_samples, seed,
                                      k_max=k_max, tol=tol, dt=dt)
           for x in xs]
    dists = np.array([bl_distance(mus[i], mus[i + 1])
                      for i in range(len(xs) - 1)])
    gaps = np.array([np.linalg.norm(xs[i + 1] - xs[i])
                     for i in range(len(xs) - 1)])
    return LipschitzProbe(x_values=np.asarray(xs), distances=dists,
                          ratios=dists / gaps)


@dataclass(frozen=True, eq=False)
class SectionCheckReport:
    """One-period return statistics of a section measure's atoms."""

    fraction_in_hull: float
    hull_lo: np.ndarray
    hull_hi: np.ndarray
    n_atoms: int
    bandwidth: float


def poincare_section_check(measure, r, system, seed, bandwidth=6.0):
    """Evolve a section measure one period and test hull return.

    The hull is the per-dimension interval mean +- bandwidth * std of the
    atoms.  Each atom advances one period under fresh noise; the report gives
    the fraction of endpoints inside the hull.  The phase returns exactly by
    integer arithmetic, so only the fast state is tested.

    Args:
      measure: EmpiricalMeasure concentrated on section r.
      r: the section time (validated against the atom phases).
      system: SlowFastSystem.
      seed: seed for the fresh evolution noise.
      bandwidth: hull half-width in atom standard deviations.

    Returns:
      SectionCheckReport
    """
    tau_steps = system.tau_steps(measure.dt)
    phase = (grid_steps(r, measure.dt) % tau_steps) * measure.dt
    if not np.allclose(measure.phases, phase, atol=1e-9):
        raise ValueError("measure is not concentrated on section r=%g" % r)
    mean = measure.mean()
    sd = np.sqrt(measure.var())
    lo, hi = mean - bandwidth * sd, mean + bandwidth * sd
    evolved = evolve_measure(measure, system, periods=1, seed=seed)
    inside = np.all((evolved.points >= lo) & (evolved.points <= hi), axis=-1)
    frac = float(evolved.weights @ inside / evolved.weights.sum())
    return SectionCheckReport(fraction_in_hull=frac, hull_lo=lo, hull_hi=hi,
                              n_atoms=measure.n_atoms, bandwidth=bandwidth)
