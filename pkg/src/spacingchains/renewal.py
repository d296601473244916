"""Monte Carlo renewal measure of the Markov random walk and its Blackwell limit.

``U(A x (t - q, t])`` is the expected number of indices ``n >= 0`` with
``M_n`` in ``A`` and ``X_n`` in the window. Windows are left-open so
adjacent windows never double count a point.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import stats

from .chains import positions
from .errors import DomainError, InsufficientDataError
from .rng import stream

__all__ = [
    "RenewalEstimate",
    "Deviation",
    "DecayFit",
    "estimate_renewal",
    "renewal_counts",
    "blackwell_gap",
    "fit_decay",
    "decreasing_within_noise",
    "run_blocks",
    "BLOCK_SIZE",
]

BLOCK_SIZE = 256


def run_blocks(func, n_items, threads=1, block=BLOCK_SIZE):
    """Apply ``func(block_index, size)`` over fixed-size blocks; results in block order.

    Blocks are defined independently of ``threads`` so the output never
    depends on the worker count.
    """
    sizes = [min(block, n_items - b * block) for b in range(-(-n_items // block))]
    if threads <= 1 or len(sizes) == 1:
        return [func(b, s) for b, s in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, range(len(sizes)), sizes))


def renewal_counts(x, t, q, weights=None):
    """Per-path counts of points in ``(t - q, t]`` for every ``t``.

    ``x`` has shape ``(n_paths, n_points)``; ``weights`` (same shape, 0/1)
    restricts the count to indices with ``M_n`` in ``A``.
    """
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    out = np.empty((x.shape[0], t.size))
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    for i, ti in enumerate(t):
        inside = (x > ti - q) & (x <= ti)
        out[:, i] = np.sum(inside * w, axis=1)
    return out


@dataclass(eq=False)
class RenewalEstimate:
    t: np.ndarray
    q: float
    u_hat: np.ndarray
    stderr: np.ndarray
    n_replicas: int
    init_law: str
    a_set: Optional[np.ndarray] = None

    @property
    def windows(self):
        return np.column_stack([self.t - self.q, self.t])


def _a_mask(sampler, a_set):
    if a_set is None:
        return None
    if getattr(sampler, "k", None) != 1:
        raise DomainError("state subsets A are only supported for grid chains with k = 1")
    mask = np.zeros(sampler.n_states, dtype=bool)
    mask[np.asarray(a_set, dtype=np.intp)] = True
    return mask


def estimate_renewal(sampler, t, q, n_replicas, seed=0, a_set=None, init="stationary",
                     threads=1, margin=20.0):
    """Estimate ``U_mu(A x (t - q, t])`` for each window end ``t``.

    ``sampler`` is any of the chain samplers; ``init`` is ``"stationary"``
    (``mu = pi``) or ``("nu", weights)``. Paths run until the position
    passes ``max(t) + margin * E[Z]``; a block that falls short is redrawn
    with twice the length.
    """
    t = np.asarray(t, dtype=float)
    if not q > 0:
        raise DomainError("window width q must be positive")
    if t.ndim != 1 or t.size == 0 or np.any(np.diff(t) <= 0):
        raise DomainError("t must be a non-empty increasing array")
    if n_replicas < 2:
        raise DomainError("need at least two replicas")
    mask = _a_mask(sampler, a_set)
    mean = sampler.mean_spacing
    horizon = float(t.max()) + margin * mean
    n_steps = max(8, int(math.ceil(max(horizon, 0.0) / mean * 1.25)) + 8)

    def block(b, size):
        steps = n_steps
        while True:
            rng = stream(seed, b)
            draw = sampler.draw(rng, size, steps, init)
            x = positions(draw.z)[:, :-1]  # X_0..X_{N-1}, each paired with M_n
            if np.min(x[:, -1]) >= horizon:
                break
            steps *= 2
        w = None
        if mask is not None:
            w = mask[draw.states[:, :x.shape[1]]]
        c = renewal_counts(x, t, q, w)
        return c.sum(axis=0), (c * c).sum(axis=0)

    parts = run_blocks(block, n_replicas, threads)
    s1 = np.sum([p[0] for p in parts], axis=0)
    s2 = np.sum([p[1] for p in parts], axis=0)
    u = s1 / n_replicas
    var = np.maximum(s2 / n_replicas - u * u, 0.0) * n_replicas / (n_replicas - 1)
    label = init if isinstance(init, str) else init[0]
    label = "pi" if label == "stationary" else label
    return RenewalEstimate(t, float(q), u, np.sqrt(var / n_replicas), int(n_replicas), label,
                           None if a_set is None else np.asarray(a_set))


class Deviation(NamedTuple):
    t: np.ndarray
    deviation: np.ndarray
    stderr: np.ndarray
    limit: float


def blackwell_gap(estimate, pi_A, mean_spacing):
    """Deviation of the estimate from ``pi(A) q / E_pi[Z]``."""
    if not mean_spacing > 0:
        raise DomainError("mean spacing must be positive")
    limit = pi_A * estimate.q / mean_spacing
    return Deviation(estimate.t, estimate.u_hat - limit, estimate.stderr, float(limit))


@dataclass(frozen=True)
class DecayFit:
    """Exponential decay fit ``|d(t)| ~ prefactor * exp(-rate * t)``.

    ``status`` is ``"fit"`` or ``"decay-below-noise"``; the latter means
    fewer than five bins rose above three standard errors.
    """

    rate: float
    prefactor: float
    window: tuple
    r_squared: float
    residual_floor: float
    rate_ci: tuple
    status: str
    n_bins: int

    @property
    def positive_or_below_noise(self):
        return self.status == "decay-below-noise" or self.rate > 0


def fit_decay(t, deviations, stderr, min_bins=5, k_sigma=3.0):
    """Least squares of ``log|deviation|`` on bins with ``|deviation| > k_sigma * stderr``."""
    t = np.asarray(t, dtype=float)
    d = np.abs(np.asarray(deviations, dtype=float))
    se = np.broadcast_to(np.asarray(stderr, dtype=float), d.shape)
    if t.shape != d.shape:
        raise DomainError("t and deviations must have the same shape")
    floor = float(np.median(se)) if se.size else 0.0
    use = (d > k_sigma * se) & (d > 0)
    n_use = int(use.sum())
    if n_use < min_bins:
        nan = float("nan")
        return DecayFit(nan, nan, (nan, nan), nan, floor, (nan, nan), "decay-below-noise", n_use)
    fit = stats.linregress(t[use], np.log(d[use]))
    half = 1.96 * fit.stderr
    rate = -float(fit.slope)
    return DecayFit(rate, float(math.exp(fit.intercept)), (float(t[use].min()), float(t[use].max())),
                    float(fit.rvalue ** 2), floor, (rate - half, rate + half), "fit", n_use)


def decreasing_within_noise(values, stderr, k_sigma=4.0):
    """True when ``|v_j| <= |v_i| + k_sigma * sqrt(se_i^2 + se_j^2)`` for all ``i < j``."""
    v = np.abs(np.asarray(values, dtype=float))
    se = np.broadcast_to(np.asarray(stderr, dtype=float), v.shape)
    comb = np.sqrt(se[:, None] ** 2 + se[None, :] ** 2)
    upper = np.triu(np.ones((v.size, v.size), dtype=bool), 1)
    return bool(np.all((v[None, :] <= v[:, None] + k_sigma * comb)[upper]))
