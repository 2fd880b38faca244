"""Two-sided discrete Brownian increment streams.

Every stochastic computation in this package consumes noise through the
:class:`BrownianPath` interface: a doubly infinite sequence of i.i.d.
``N(0, dt)`` increment vectors indexed by the integers.  Increment ``i``
covers the grid cell ``[i*dt, (i+1)*dt)``, so negative indices reach into the
past, which is what pullback constructions iterate over.

Increments are a pure function of ``(seed, index, dims)``: they are generated
from a counter-based bit generator keyed by the seed, with the counter derived
from the index.  Querying any window, in any order, any number of times,
yields identical values; no state is kept beyond the seed itself.

The measure-preserving time shift acts on paths by index offset:
``shift(path, s)`` returns a view whose increment ``i`` is the base path's
increment ``i + s/dt``.  Shifts compose by integer addition and are exact.

Usage::

    path = make_path(seed=42, dt=1e-3, dims=1)
    dW = path.increments(-1000, 0)      # the 1000 increments before t=0
    shifted = shift(path, 0.5)          # view advanced by 500 steps
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import GridAlignmentError

# Increments are generated in fixed blocks of this many steps.  Each block is
# an independent keyed counter stream, so block b never consumes random words
# belonging to block b+1 regardless of how many draws the normal sampler uses.
BLOCK_STEPS = 1024

_UINT64 = 2**64
_ALIGN_RTOL = 1e-9


def grid_steps(t, dt):
    """Convert a time to an exact number of grid steps.

    Args:
      t: time offset, must be an integer multiple of `dt` up to relative
        tolerance 1e-9.
      dt: grid step, positive.

    Returns:
      int: round(t / dt)

    Raises:
      GridAlignmentError: if t is not grid aligned.
    """
    ratio = float(t) / float(dt)
    k = round(ratio)
    if abs(ratio - k) > _ALIGN_RTOL * max(1.0, abs(ratio)):
        raise GridAlignmentError(
            "time %.17g is not a multiple of dt=%.17g (ratio %.17g)" % (t, dt, ratio)
        )
    return int(k)


def derive_seed(*parts):
    """Derive a 64-bit sub-stream seed from namespace parts.

    Stable across runs and platforms: parts are type-tagged, joined, and
    hashed with SHA-256.  Use this to give every independent sampling stage
    its own stream, e.g. ``derive_seed(master, "measure-section", j)``.

    Args:
      *parts: ints and/or strings identifying the sub-stream.

    Returns:
      int in [0, 2**64).
    """
    if not parts:
        raise ValueError("derive_seed needs at least one part")
    tagged = "|".join("%s:%r" % (type(p).__name__, p) for p in parts)
    digest = hashlib.sha256(tagged.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid: cell i covers [i*dt, (i+1)*dt) in view coordinates.

    origin_index records where the view's t=0 sits in the coordinates of the
    underlying unshifted stream (0 for a freshly made path).
    """

    dt: float
    origin_index: int = 0


class BrownianPath:
    """Two-sided Brownian increment stream on a uniform grid.

    Attributes:
      seed: stream key.
      dt: grid step.
      dims: number of independent scalar components per increment.
      grid: the TimeGrid of this view.
    """

    def __init__(self, seed, dt, dims):
        if not isinstance(seed, (int, np.integer)):
            raise ValueError("seed must be an integer, got %r" % (seed,))
        if not 0 <= int(seed) < _UINT64:
            raise ValueError("seed must lie in [0, 2**64), got %d" % seed)
        if not (np.isfinite(dt) and dt > 0):
            raise ValueError("dt must be positive and finite, got %r" % (dt,))
        if not isinstance(dims, (int, np.integer)) or dims < 1:
            raise ValueError("dims must be a positive integer, got %r" % (dims,))
        self.seed = int(seed)
        self.dt = float(dt)
        self.dims = int(dims)
        self.grid = TimeGrid(self.dt, 0)
        self._sqrt_dt = np.sqrt(self.dt)

    def _block(self, b):
        # Counter layout: the top 64 bits hold the block index offset into the
        # non-negative half of the counter space, leaving 2**64 draws of
        # headroom per block (a block consumes ~2*BLOCK_STEPS*dims words).
        counter = (b + 2**63) << 64
        gen = np.random.Generator(np.random.Philox(key=self.seed, counter=counter))
        return gen.standard_normal((BLOCK_STEPS, self.dims))

    def increments(self, i0, i1):
        """Return increments for indices i0 <= i < i1 as an (i1-i0, dims) array.

        Each row is distributed N(0, dt * I) and is a pure function of
        (seed, index, dims).
        """
        i0 = int(i0)
        i1 = int(i1)
        if i1 < i0:
            raise ValueError("need i0 <= i1, got (%d, %d)" % (i0, i1))
        n = i1 - i0
        out = np.empty((n, self.dims))
        filled = 0
        b = i0 // BLOCK_STEPS
        while filled < n:
            block = self._block(b)
            lo = i0 + filled - b * BLOCK_STEPS
            take = min(BLOCK_STEPS - lo, n - filled)
            out[filled : filled + take] = block[lo : lo + take]
            filled += take
            b += 1
        out *= self._sqrt_dt
        return out

    def increment(self, i):
        """Return the single increment at index i, shape (dims,)."""
        return self.increments(i, i + 1)[0]


class ShiftedPath:
    """Index-offset view of a base path; increment i reads base increment i+offset."""

    def __init__(self, base, offset_steps):
        if isinstance(base, ShiftedPath):
            offset_steps += base.offset_steps
            base = base.base
        self.base = base
        self.offset_steps = int(offset_steps)
        self.dt = base.dt
        self.dims = base.dims
        self.seed = base.seed
        self.grid = TimeGrid(base.dt, base.grid.origin_index + self.offset_steps)

    def increments(self, i0, i1):
        return self.base.increments(i0 + self.offset_steps, i1 + self.offset_steps)

    def increment(self, i):
        return self.base.increment(i + self.offset_steps)


def make_path(seed, dt, dims):
    """Create a two-sided Brownian increment stream.

    Args:
      seed: integer stream key in [0, 2**64).
      dt: positive grid step.
      dims: number of scalar Brownian components.

    Returns:
      BrownianPath
    """
    return BrownianPath(seed, dt, dims)


def shift(path, s):
    """Shift a path in time by a grid-aligned amount.

    shift(path, s) realizes the measure-preserving shift by s: the returned
    view's increment at index i is the input's increment at i + s/dt.
    Composition collapses to a single offset, so
    ``shift(shift(p, a), b)`` equals ``shift(p, a + b)`` exactly.

    Args:
      path: BrownianPath or ShiftedPath.
      s: time shift, an integer multiple of path.dt (may be negative).

    Returns:
      ShiftedPath

    Raises:
      GridAlignmentError: if s is not a multiple of path.dt.
    """
    k = grid_steps(s, path.dt)
    return ShiftedPath(path, k)
