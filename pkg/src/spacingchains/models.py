"""Spacing models: hard-core finite-range pair potentials and the harmonic chain.

A :class:`PairPotential` describes ``v(r)`` on ``(r_hc, R]``; inside the core
the potential is infinite, which is encoded by raising :class:`DomainError`
rather than by an infinite float. Beyond ``R`` the potential is exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError

__all__ = [
    "PairPotential",
    "HarmonicParams",
    "make_square_well",
    "make_hard_rod",
    "make_tabulated",
    "make_potential",
    "potential_from_config",
    "harmonic_derive",
    "v_total",
    "minimal_block_m",
]


def minimal_block_m(r_hc, range_R):
    """Smallest ``m`` with ``range_R < (m + 1) * r_hc``."""
    m = max(1, math.floor(range_R / r_hc))
    while not range_R < (m + 1) * r_hc:
        m += 1
    while m > 1 and range_R < m * r_hc:
        m -= 1
    return m


@dataclass(frozen=True)
class PairPotential:
    """Hard-core, finite-range pair interaction.

    ``func`` is only ever called on arguments in ``(r_hc, range_R]``.
    ``breakpoints`` lists points where ``v`` jumps; quadrature panels are
    aligned with them.
    """

    r_hc: float
    range_R: float
    lower_bound: float
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    block_m: int = 1
    kind: str = "callable"
    params: dict = field(default_factory=dict, compare=False)
    breakpoints: tuple = ()

    @property
    def k(self):
        return self.block_m - 1 if self.block_m >= 2 else 1

    def eval(self, r):
        """Evaluate ``v`` at ``r``; zero beyond the range, error inside the core."""
        r = np.asarray(r, dtype=float)
        if np.any(r <= self.r_hc):
            raise DomainError(f"hard-core violation: spacing <= r_hc={self.r_hc}")
        out = np.zeros_like(r)
        inside = r <= self.range_R
        if np.any(inside):
            out[inside] = self.func(r[inside])
        return out if out.ndim else float(out)

    def _eval_unchecked(self, r):
        out = np.zeros_like(r)
        inside = r <= self.range_R
        if np.any(inside):
            out[inside] = self.func(r[inside])
        return out

    def with_block_m(self, block_m):
        """Return a copy using a larger block size (any larger ``m`` stays valid)."""
        m0 = minimal_block_m(self.r_hc, self.range_R)
        if block_m < m0:
            raise DomainError(f"block_m={block_m} below the minimal valid value {m0}")
        return PairPotential(self.r_hc, self.range_R, self.lower_bound, self.func,
                             int(block_m), self.kind, dict(self.params), self.breakpoints)

    def to_config(self):
        if self.kind == "callable":
            raise DomainError("closed-form callables cannot be serialised; tabulate first")
        out = {"kind": self.kind, **self.params}
        if self.block_m != minimal_block_m(self.r_hc, self.range_R):
            out["block_m"] = self.block_m
        return out

    def tabulate(self, n_points=2001):
        """Piecewise-linear table of this potential on ``(r_hc, R]``."""
        nodes = np.linspace(self.r_hc, self.range_R, n_points)
        nodes[0] = np.nextafter(self.r_hc, np.inf)
        return make_tabulated(self.r_hc, nodes, self.func(nodes), block_m=self.block_m)


def _check_lengths(r_hc, range_R):
    if not (np.isfinite(r_hc) and np.isfinite(range_R)):
        raise DomainError("r_hc and range_R must be finite")
    if r_hc <= 0:
        raise DomainError("r_hc must be positive")
    if range_R <= r_hc:
        raise DomainError(f"range_R={range_R} must exceed r_hc={r_hc}")


def _resolve_m(r_hc, range_R, block_m):
    m0 = minimal_block_m(r_hc, range_R)
    if block_m is None:
        return m0
    if block_m < m0:
        raise DomainError(f"block_m={block_m} below the minimal valid value {m0}")
    return int(block_m)


def make_square_well(r_hc, range_R, depth, block_m=None):
    """Square well: ``v = depth`` on ``(r_hc, range_R]`` and 0 beyond."""
    r_hc, range_R, depth = float(r_hc), float(range_R), float(depth)
    _check_lengths(r_hc, range_R)
    if not np.isfinite(depth):
        raise DomainError("depth must be finite")

    def func(r):
        return np.full_like(r, depth)

    return PairPotential(
        r_hc=r_hc,
        range_R=range_R,
        lower_bound=min(depth, 0.0),
        func=func,
        block_m=_resolve_m(r_hc, range_R, block_m),
        kind="square_well",
        params={"r_hc": r_hc, "range_R": range_R, "depth": depth},
        breakpoints=(range_R,) if depth != 0.0 else (),
    )


def make_hard_rod(r_hc, block_m=None):
    """Pure hard rods (Tonks gas): ``v`` vanishes outside the core.

    The range is nominal (``1.5 * r_hc``); it only fixes ``block_m = 1``.
    """
    r_hc = float(r_hc)
    range_R = 1.5 * r_hc
    _check_lengths(r_hc, range_R)
    return PairPotential(
        r_hc=r_hc,
        range_R=range_R,
        lower_bound=0.0,
        func=np.zeros_like,
        block_m=_resolve_m(r_hc, range_R, block_m),
        kind="hard_rod",
        params={"r_hc": r_hc},
    )


def make_tabulated(r_hc, nodes, values, block_m=None):
    """Piecewise-linear potential through ``(nodes, values)``; the last node is the range."""
    nodes = np.asarray(nodes, dtype=float)
    values = np.asarray(values, dtype=float)
    if nodes.ndim != 1 or nodes.shape != values.shape or nodes.size < 2:
        raise DomainError("nodes and values must be 1-D arrays of equal length >= 2")
    if np.any(np.diff(nodes) <= 0):
        raise DomainError("table nodes must be strictly increasing")
    if not np.all(np.isfinite(values)):
        raise DomainError("table values must be finite")
    r_hc = float(r_hc)
    range_R = float(nodes[-1])
    _check_lengths(r_hc, range_R)
    if nodes[0] > r_hc + 1e-12 * max(1.0, r_hc) or nodes[0] < r_hc:
        raise DomainError("first table node must sit at r_hc")

    def func(r):
        return np.interp(r, nodes, values)

    return PairPotential(
        r_hc=r_hc,
        range_R=range_R,
        lower_bound=float(values.min()),
        func=func,
        block_m=_resolve_m(r_hc, range_R, block_m),
        kind="table",
        params={"r_hc": r_hc, "nodes": nodes.tolist(), "values": values.tolist()},
        breakpoints=(range_R,) if values[-1] != 0.0 else (),
    )


def make_potential(r_hc, range_R, func, lower_bound=None, block_m=None, breakpoints=()):
    """Wrap a closed-form callable ``func`` defined on ``(r_hc, range_R]``.

    When ``lower_bound`` is omitted it is estimated on a dense grid.
    """
    r_hc, range_R = float(r_hc), float(range_R)
    _check_lengths(r_hc, range_R)
    if lower_bound is None:
        probe = np.linspace(r_hc, range_R, 4097)[1:]
        vals = np.asarray(func(probe), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise DomainError("potential must be finite on (r_hc, R]")
        lower_bound = float(vals.min())
    return PairPotential(r_hc, range_R, float(lower_bound), func,
                         _resolve_m(r_hc, range_R, block_m), "callable", {},
                         tuple(breakpoints))


_POTENTIAL_FIELDS = {
    "square_well": ("r_hc", "range_R", "depth"),
    "hard_rod": ("r_hc",),
    "table": ("r_hc", "nodes", "values"),
}


def potential_from_config(cfg):
    """Build a potential from a config mapping with ``kind`` and its fields."""
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    block_m = cfg.pop("block_m", None)
    if kind not in _POTENTIAL_FIELDS:
        raise DomainError(f"unknown potential kind {kind!r}")
    fields = _POTENTIAL_FIELDS[kind]
    unknown = sorted(set(cfg) - set(fields))
    if unknown:
        raise DomainError(f"unknown {kind} fields: {unknown}")
    missing = [f for f in fields if f not in cfg]
    if missing:
        raise DomainError(f"{kind} config missing fields: {missing}")
    builder = {"square_well": make_square_well, "hard_rod": make_hard_rod,
               "table": make_tabulated}[kind]
    return builder(*(cfg[f] for f in fields), block_m=block_m)


def v_total(potential, spacings, primed):
    """Block energies ``(V, W)`` for two adjacent blocks of ``k`` spacings.

    ``V`` is the interaction energy inside the first block (pairs spanning
    one to ``k`` consecutive spacings), without the pressure term.
    ``W`` couples the first block to the next one.
    """
    z = np.atleast_1d(np.asarray(spacings, dtype=float))
    zp = np.atleast_1d(np.asarray(primed, dtype=float))
    if z.shape != zp.shape or z.ndim != 1:
        raise DomainError("blocks must be 1-D and of equal length")
    if np.any(z <= potential.r_hc) or np.any(zp <= potential.r_hc):
        raise DomainError("hard-core violation: spacing <= r_hc")
    k = z.size
    csum = np.concatenate([[0.0], np.cumsum(z)])
    V = 0.0
    for i in range(k):
        for j in range(i + 1, k + 1):
            V += float(potential.eval(csum[j] - csum[i]))
    tails = csum[k] - csum[:k]  # z_i + ... + z_k for i = 1..k
    heads = np.cumsum(zp)  # z'_1 + ... + z'_j for j = 1..k
    W = float(np.sum(potential.eval(tails[:, None] + heads[None, :])))
    return V, W


@dataclass(frozen=True)
class HarmonicParams:
    """Harmonic chain with nearest (``k1``) and next-nearest (``k2``) springs."""

    k1: float
    k2: float
    a: float
    beta: float
    c: float = field(init=False)
    gamma: float = field(init=False)
    rho_ar: float = field(init=False)
    noise_sd: float = field(init=False)
    stat_sd: float = field(init=False)

    def __post_init__(self):
        for name in ("k1", "k2", "a", "beta"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise DomainError(f"{name} must be positive and finite, got {val}")
        s = 0.5 * self.k1 + self.k2
        # (s - k2)(s + k2) avoids cancellation for tiny k2
        c = math.sqrt((s - self.k2) * (s + self.k2))
        gamma = s + c
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "rho_ar", -self.k2 / gamma)
        object.__setattr__(self, "noise_sd", 1.0 / math.sqrt(self.beta * gamma))
        object.__setattr__(self, "stat_sd", 1.0 / math.sqrt(2.0 * self.beta * self.c))

    @property
    def stat_var(self):
        return self.stat_sd ** 2

    @property
    def long_run_var(self):
        """Limit of ``Var(X_n) / n`` for the stationary chain."""
        return self.stat_var * (1.0 + self.rho_ar) / (1.0 - self.rho_ar)

    def transition_density(self, z, z_next):
        """Density of the next spacing given the current one."""
        mean = self.a + self.rho_ar * (np.asarray(z) - self.a)
        u = (np.asarray(z_next) - mean) / self.noise_sd
        return np.exp(-0.5 * u * u) / (self.noise_sd * math.sqrt(2.0 * math.pi))

    def stationary_density(self, z):
        u = (np.asarray(z) - self.a) / self.stat_sd
        return np.exp(-0.5 * u * u) / (self.stat_sd * math.sqrt(2.0 * math.pi))


def harmonic_derive(k1, k2, a, beta):
    return HarmonicParams(float(k1), float(k2), float(a), float(beta))
