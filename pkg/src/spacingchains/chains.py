"""Spacing-chain samplers and particle positions.

Three samplers share one interface (:meth:`draw`): the grid sampler for
discretised Gibbs models, the exact Gaussian sampler for the harmonic
chain, and an i.i.d. renewal baseline. Each one draws many replicas at
once from a single generator so a block of replicas is reproducible from
its ``(seed, stream_id)`` key alone.

Spacings are rounded to multiples of ``2**-28`` so partial sums are exact
and ``x[j] - x[j-1] == z[j]`` holds bit for bit.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.signal import lfilter

from .errors import DomainError
from .models import HarmonicParams
from .rng import open_unit, stream
from .transfer import TransitionModel

__all__ = [
    "SpacingPath",
    "RenewalLaw",
    "Draw",
    "GridSampler",
    "HarmonicSampler",
    "IIDSampler",
    "sample_gibbs_path",
    "sample_harmonic_path",
    "sample_renewal_path",
    "dyadic",
    "positions",
    "autocorrelation",
    "batch_means_se",
]

_QUANTUM = 2.0 ** -28


def dyadic(z, upward=True):
    """Round spacings to the dyadic lattice ``2**-28 Z``."""
    scaled = np.asarray(z, dtype=float) / _QUANTUM
    return (np.ceil(scaled) if upward else np.rint(scaled)) * _QUANTUM


def positions(z):
    """Positions ``X_0 = 0, X_j = Z_1 + ... + Z_j`` along the last axis."""
    z = np.asarray(z, dtype=float)
    pad = np.zeros(z.shape[:-1] + (1,))
    return np.concatenate([pad, np.cumsum(z, axis=-1)], axis=-1)


@dataclass(eq=False)
class SpacingPath:
    """One simulated path: spacings ``z[0..n-1]`` and positions ``x[0..n]``.

    ``states[j]`` is the driving-chain state that emitted ``z[j]`` (for
    grid models with ``k = 1`` this is ``M_j``); it is ``None`` for the
    continuous samplers.
    """

    seed: int
    stream_id: int
    model_tag: str
    z: np.ndarray
    x: np.ndarray
    init_law: str
    states: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n(self):
        return self.z.size


class Draw(NamedTuple):
    z: np.ndarray  # (n_paths, n_steps)
    states: Optional[np.ndarray]  # (n_paths, n_blocks) or None
    anchor: Optional[np.ndarray]  # what a backward continuation conditions on


def _sample_categorical(rng, probs, size):
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    return np.minimum(np.searchsorted(cdf, open_unit(rng, size)), cdf.size - 1)


class GridSampler:
    """Inverse-CDF sampler for a :class:`TransitionModel`.

    Emitted spacings are jittered uniformly inside the quadrature cell of
    each node, which gives every spacing law a density.
    """

    def __init__(self, model: TransitionModel):
        self.model = model
        self.k = model.k
        self.n_states = model.n_states
        cdf = model.cdf
        self._cdf_rows = None
        # row i occupies (i, i + 1] in the flattened table
        self._cdf_flat = (cdf + np.arange(self.n_states)[:, None]).ravel()
        self._lo, self._width = model.block_cells()
        self._mean = model.emitted_mean()

    @property
    def mean_spacing(self):
        return self._mean

    @property
    def tag(self):
        return self.model.tag

    def initial_states(self, rng, n_paths, init):
        if isinstance(init, str) and init == "stationary":
            return _sample_categorical(rng, self.model.pi, n_paths)
        if isinstance(init, tuple) and init[0] == "nu":
            return _sample_categorical(rng, np.asarray(init[1], dtype=float), n_paths)
        if isinstance(init, tuple) and init[0] == "point":
            return np.full(n_paths, self.state_of(init[1]), dtype=np.intp)
        if isinstance(init, tuple) and init[0] == "state":
            return np.broadcast_to(np.asarray(init[1], dtype=np.intp), (n_paths,)).copy()
        raise DomainError(f"unsupported initial law {init!r}")

    def state_of(self, z0):
        """Grid state whose cell block contains the spacing block ``z0``."""
        z0 = np.atleast_1d(np.asarray(z0, dtype=float))
        if z0.size != self.k:
            raise DomainError(f"point mass needs {self.k} spacings")
        edges = self.model.grid.edges
        if np.any(z0 <= edges[0]) or np.any(z0 > edges[-1]):
            raise DomainError("point mass lies outside the grid support")
        idx = np.searchsorted(edges, z0, side="left") - 1
        return int(self.model.grid.flat_index(idx))

    def step(self, rng, states):
        """One transition from each state in ``states``."""
        u = open_unit(rng, states.size)
        n = self.n_states
        nxt = np.searchsorted(self._cdf_flat, states + u, side="left") - states * n
        return np.clip(nxt, 0, n - 1)

    def _chain(self, rng, first, n_blocks):
        n_paths = first.size
        if n_paths == 1:
            return self._chain_single(rng, int(first[0]), n_blocks)[None, :]
        out = np.empty((n_paths, n_blocks), dtype=np.intp)
        out[:, 0] = first
        for b in range(1, n_blocks):
            out[:, b] = self.step(rng, out[:, b - 1])
        return out

    def _chain_single(self, rng, s, n_blocks):
        if self._cdf_rows is None:
            self._cdf_rows = self.model.cdf.tolist()
        rows = self._cdf_rows
        u = open_unit(rng, n_blocks - 1).tolist()
        out = [s]
        last = self.n_states - 1
        for v in u:
            s = min(bisect_left(rows[s], v), last)
            out.append(s)
        return np.asarray(out, dtype=np.intp)

    def emit(self, rng, states, n_steps):
        u = open_unit(rng, states.shape + (self.k,))
        z = self._lo[states] + self._width[states] * u
        z = z.reshape(states.shape[0], -1)[:, :n_steps]
        return dyadic(z)

    def draw(self, rng, n_paths, n_steps, init="stationary"):
        n_blocks = -(-n_steps // self.k)
        first = self.initial_states(rng, n_paths, init)
        states = self._chain(rng, first, n_blocks)
        z = self.emit(rng, states, n_steps)
        return Draw(z, states, states[:, 0])

    def draw_backward(self, rng, anchor, n_steps):
        """Spacings ``Z_0, Z_-1, ...`` given the first forward block state.

        Uses reversibility: the block preceding ``b`` follows the chain
        from the reversed block ``s(b)``, emitted in reverse order.
        """
        rev = self.model.grid.reversal()
        first = self.step(rng, rev[np.asarray(anchor, dtype=np.intp)])
        return self.draw(rng, first.size, n_steps, init=("state", first))


class HarmonicSampler:
    """Exact AR(1) sampler for the harmonic chain."""

    def __init__(self, params: HarmonicParams):
        self.params = params

    @property
    def mean_spacing(self):
        return self.params.a

    @property
    def tag(self):
        return "harmonic"

    def draw(self, rng, n_paths, n_steps, init="stationary"):
        p = self.params
        if isinstance(init, str) and init == "stationary":
            z0 = p.a + p.stat_sd * rng.standard_normal(n_paths)
        elif isinstance(init, tuple) and init[0] == "point":
            z0 = np.full(n_paths, float(init[1]))
        elif isinstance(init, tuple) and init[0] == "state":
            z0 = np.broadcast_to(np.asarray(init[1], dtype=float), (n_paths,)).copy()
        else:
            raise DomainError(f"unsupported initial law {init!r}")
        noise = p.noise_sd * rng.standard_normal((n_paths, n_steps))
        dev, _ = lfilter([1.0], [1.0, -p.rho_ar], noise, axis=1,
                         zi=(p.rho_ar * (z0 - p.a))[:, None])
        z = dyadic(p.a + dev, upward=False)
        return Draw(z, None, z[:, 0])

    def draw_backward(self, rng, anchor, n_steps):
        # stationary Gaussian AR(1) is time-reversible
        return self.draw(rng, np.asarray(anchor).size, n_steps, init=("state", anchor))


@dataclass(frozen=True)
class RenewalLaw:
    """Named i.i.d. spacing law."""

    kind: str
    params: tuple

    def __post_init__(self):
        kind, par = self.kind, self.params
        if kind == "exponential":
            ok = len(par) == 1 and par[0] > 0
        elif kind == "shifted_exponential":
            ok = len(par) == 2 and par[0] >= 0 and par[1] > 0
        elif kind == "uniform":
            ok = len(par) == 2 and 0 <= par[0] < par[1]
        else:
            raise DomainError(f"unknown spacing law {kind!r}")
        if not ok or not all(np.isfinite(par)):
            raise DomainError(f"invalid parameters {par} for {kind}")

    @classmethod
    def exponential(cls, rate):
        return cls("exponential", (float(rate),))

    @classmethod
    def shifted_exponential(cls, r_hc, rate):
        return cls("shifted_exponential", (float(r_hc), float(rate)))

    @classmethod
    def uniform(cls, lo, hi):
        return cls("uniform", (float(lo), float(hi)))

    @property
    def mean(self):
        if self.kind == "exponential":
            return 1.0 / self.params[0]
        if self.kind == "shifted_exponential":
            return self.params[0] + 1.0 / self.params[1]
        return 0.5 * (self.params[0] + self.params[1])

    @property
    def var(self):
        if self.kind == "uniform":
            return (self.params[1] - self.params[0]) ** 2 / 12.0
        return 1.0 / self.params[-1] ** 2

    def sample(self, rng, size):
        u = open_unit(rng, size)
        if self.kind == "exponential":
            z = -np.log(u) / self.params[0]
        elif self.kind == "shifted_exponential":
            z = self.params[0] - np.log(u) / self.params[1]
        else:
            lo, hi = self.params
            z = hi - (hi - lo) * (1.0 - u)
        return dyadic(z)

    def label(self):
        return f"{self.kind}({', '.join(f'{v:g}' for v in self.params)})"


class IIDSampler:
    """Renewal baseline: i.i.d. spacings."""

    def __init__(self, law: RenewalLaw):
        self.law = law

    @property
    def mean_spacing(self):
        return self.law.mean

    @property
    def tag(self):
        return self.law.label()

    def draw(self, rng, n_paths, n_steps, init="stationary"):
        z = self.law.sample(rng, (n_paths, n_steps))
        return Draw(z, None, None)

    def draw_backward(self, rng, anchor, n_steps):
        n_paths = 1 if anchor is None else np.asarray(anchor).size
        return self.draw(rng, n_paths, n_steps)


def _init_label(init):
    if isinstance(init, str):
        return init
    if init[0] == "point":
        return f"point-mass({np.array2string(np.atleast_1d(init[1]), separator=',')})"
    return init[0]


def _make_path(seed, stream_id, tag, draw, init):
    z = draw.z[0]
    states = None if draw.states is None else draw.states[0]
    return SpacingPath(int(seed), int(stream_id), tag, z, positions(z), _init_label(init), states)


def _check_n(n):
    if int(n) != n or n < 1:
        raise DomainError("path length n must be a positive integer")
    return int(n)


def sample_gibbs_path(model: TransitionModel, n, init="stationary", seed=0, stream_id=0):
    """Sample ``n`` spacings from the grid chain of ``model``.

    ``init`` is ``"stationary"``, ``("point", z0)`` or ``("nu", weights)``.
    """
    n = _check_n(n)
    sampler = GridSampler(model)
    draw = sampler.draw(stream(seed, stream_id), 1, n, init)
    return _make_path(seed, stream_id, model.tag, draw, init)


def sample_harmonic_path(params: HarmonicParams, n, init="stationary", seed=0, stream_id=0):
    """Exact harmonic-chain path; ``init`` is ``"stationary"`` or ``("point", z0)``."""
    n = _check_n(n)
    draw = HarmonicSampler(params).draw(stream(seed, stream_id), 1, n, init)
    return _make_path(seed, stream_id, "harmonic", draw, init)


def sample_renewal_path(law: RenewalLaw, n, seed=0, stream_id=0):
    """Path with i.i.d. spacings drawn from ``law``."""
    n = _check_n(n)
    draw = IIDSampler(law).draw(stream(seed, stream_id), 1, n)
    return _make_path(seed, stream_id, law.label(), draw, "stationary")


def autocorrelation(z, max_lag):
    """Sample autocorrelations of ``z`` at lags ``1..max_lag``."""
    z = np.asarray(z, dtype=float) - np.mean(z)
    denom = float(z @ z)
    return np.array([float(z[:-j] @ z[j:]) / denom for j in range(1, max_lag + 1)])


def batch_means_se(values, n_batches=100):
    """Standard error of the mean of a correlated series by batch means."""
    values = np.asarray(values, dtype=float)
    m = values.size // n_batches
    if m < 2:
        raise DomainError("series too short for batch means")
    means = values[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))
