"""Second moments and covariances of interval counts of the stationary point process.

Two estimators of ``E[Phi(A) Phi(B + t)]``:

* palm-renewal: ``kappa * integral_A U(B + t - x) dx`` where ``U`` counts the
  points of the Palm sequence (``X_0 = 0``, both directions) and
  ``kappa = 1 / E[Z]``. The ``x``-integral is done exactly per replica as
  the overlap length ``|A & (B + t - X_n)|``.
* ergodic-average: a sweep over one long path, averaging the product of
  counts of translated windows over the shift ``s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .chains import positions
from .errors import DomainError, InsufficientDataError
from .renewal import DecayFit, fit_decay, run_blocks
from .rng import stream

__all__ = [
    "CovarianceCurve",
    "AlphaEstimate",
    "second_moment_palm",
    "second_moment_ergodic",
    "growth_rate_alpha",
    "fit_covariance_decay",
]


@dataclass(eq=False)
class CovarianceCurve:
    interval_A: tuple
    interval_B: tuple
    t: np.ndarray
    moment_hat: np.ndarray
    cov_hat: np.ndarray
    stderr: np.ndarray
    intensity_hat: float
    estimator: str


def _interval(iv, name):
    lo, hi = (float(v) for v in iv)
    if not hi > lo:
        raise DomainError(f"interval {name} must have positive length")
    return lo, hi


def _check_disjoint(A, B, t):
    for ti in t:
        if B[0] + ti < A[1] and A[0] < B[1] + ti:
            raise DomainError(f"A and B + t overlap at t = {ti}")


def _overlap_sums(X, A, B, t):
    """Per-path sums of ``|A & (B + t - X_n)|`` for every ``t``; ``X`` is ``(paths, points)``."""
    out = np.empty((X.shape[0], t.size))
    for i, ti in enumerate(t):
        lo = np.maximum(A[0], B[0] + ti - X)
        hi = np.minimum(A[1], B[1] + ti - X)
        out[:, i] = np.sum(np.clip(hi - lo, 0.0, None), axis=1)
    return out


def _min_spacing_positive(sampler):
    model = getattr(sampler, "model", None)
    if model is not None:
        return model.grid.edges[0] >= 0.0
    law = getattr(sampler, "law", None)
    return law is not None


def second_moment_palm(sampler, A, B, t, n_replicas, seed=0, threads=1, margin=20.0):
    """Palm-renewal estimate of ``E[Phi(A) Phi(B + t)]`` and the covariance.

    Requires ``A`` and ``B + t`` disjoint. The backward half of the Palm
    sequence (``n <= -1``) is drawn by reversing the chain from the
    starting state, which the reversibility of the models makes exact in
    law. For positive spacings it is skipped whenever no backward point
    can reach ``B + t - A``.
    """
    A = _interval(A, "A")
    B = _interval(B, "B")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    _check_disjoint(A, B, t)
    mean = sampler.mean_spacing
    kappa = 1.0 / mean
    reach_hi = float(np.max(B[1] + t - A[0]))
    reach_lo = float(np.min(B[0] + t - A[1]))
    fwd_target = reach_hi + margin * mean
    need_back = reach_lo <= 0.0 or not _min_spacing_positive(sampler)
    back_target = min(reach_lo, 0.0) - margin * mean
    n_fwd = max(8, int(math.ceil(max(fwd_target, 0.0) / mean * 1.25)) + 8)
    n_back = max(8, int(math.ceil(-back_target / mean * 1.25)) + 8)

    def block(b, size):
        nf, nb = n_fwd, n_back
        while True:
            rng = stream(seed, b)
            draw = sampler.draw(rng, size, nf)
            xf = positions(draw.z)[:, 1:]
            ok = np.min(xf[:, -1]) >= fwd_target
            xb = None
            if need_back:
                back = sampler.draw_backward(rng, draw.anchor, nb)
                xb = -np.cumsum(back.z, axis=1)
                ok = ok and np.max(xb[:, -1]) <= back_target
            if ok:
                break
            nf, nb = 2 * nf, 2 * nb
        c = _overlap_sums(xf, A, B, t)
        if xb is not None:
            c += _overlap_sums(xb, A, B, t)
        return c.sum(axis=0), (c * c).sum(axis=0)

    parts = run_blocks(block, n_replicas, threads)
    s1 = np.sum([p[0] for p in parts], axis=0)
    s2 = np.sum([p[1] for p in parts], axis=0)
    m = s1 / n_replicas
    var = np.maximum(s2 / n_replicas - m * m, 0.0) * n_replicas / (n_replicas - 1)
    moment = kappa * m
    se = kappa * np.sqrt(var / n_replicas)
    lenA, lenB = A[1] - A[0], B[1] - B[0]
    cov = moment - kappa * lenA * kappa * lenB
    return CovarianceCurve(A, B, t, moment, cov, se, kappa, "palm-renewal")


def _split_lengths(lo, hi, edges):
    """Lengths of ``[lo, hi]`` falling in each batch ``[edges[b], edges[b+1]]``.

    Intervals are assumed shorter than one batch, so each touches at most two.
    """
    n_b = edges.size - 1
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    b_lo = np.clip(np.searchsorted(edges, lo, side="right") - 1, 0, n_b - 1)
    cut = edges[b_lo + 1]
    first = np.minimum(hi, cut) - lo
    second = np.clip(hi - cut, 0.0, None)
    out = np.bincount(b_lo, weights=first, minlength=n_b)
    nxt = np.minimum(b_lo + 1, n_b - 1)
    out += np.bincount(nxt, weights=np.where(b_lo + 1 < n_b, second, 0.0), minlength=n_b)
    return out


def second_moment_ergodic(path_x, A, B, t, window_T=None, n_batches=30, margin=50.0):
    """Ergodic-average estimate over shifts ``s`` of one long path.

    ``path_x`` holds the point positions (a :class:`SpacingPath` is also
    accepted). Shifts are kept ``margin * E[Z]`` away from both path ends.
    Standard errors come from ``n_batches`` batch means over ``s``.
    """
    x = getattr(path_x, "x", path_x)
    x = np.sort(np.asarray(x, dtype=float))
    A = _interval(A, "A")
    B = _interval(B, "B")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if x.size < 100:
        raise InsufficientDataError("path too short for the ergodic estimator")
    mean = (x[-1] - x[0]) / (x.size - 1)
    s0 = x[0] + margin * mean - min(A[0], B[0] + t.min())
    s1 = x[-1] - margin * mean - max(A[1], B[1] + t.max())
    if window_T is not None:
        s1 = min(s1, s0 + float(window_T))
    span = max(A[1], B[1] + t.max()) - min(A[0], B[0] + t.min())
    if s1 - s0 < n_batches * max(span, 10.0 * mean):
        raise InsufficientDataError("simulated span too short for the requested windows")
    edges = np.linspace(s0, s1, n_batches + 1)
    blen = np.diff(edges)

    # s-intervals on which each point lies in A + s, resp. B + s
    a_lo = np.maximum(x - A[1], s0)
    a_hi = np.minimum(x - A[0], s1)
    b_lo_base, b_hi_base = x - B[1], x - B[0]
    mean_A = _split_lengths(a_lo, a_hi, edges) / blen

    n = x.size
    moments = np.empty((t.size, n_batches))
    means_B = np.empty((t.size, n_batches))
    for i, ti in enumerate(t):
        lo_b = np.maximum(b_lo_base - ti, s0)
        hi_b = np.minimum(b_hi_base - ti, s1)
        means_B[i] = _split_lengths(lo_b, hi_b, edges) / blen
        gap_lo = ti + B[0] - A[1]
        gap_hi = ti + B[1] - A[0]
        # index offsets d with x[i+d] - x[i] possibly in [gap_lo, gap_hi]
        j_lo = np.searchsorted(x, x + gap_lo, side="left") - np.arange(n)
        j_hi = np.searchsorted(x, x + gap_hi, side="right") - np.arange(n)
        d_min, d_max = int(j_lo.min()), int(j_hi.max())
        acc = np.zeros(n_batches)
        for d in range(d_min, d_max + 1):
            if d >= 0:
                ia, ib = np.arange(0, n - d), np.arange(d, n)
            else:
                ia, ib = np.arange(-d, n), np.arange(0, n + d)
            lo = np.maximum(a_lo[ia], lo_b[ib])
            hi = np.minimum(a_hi[ia], hi_b[ib])
            acc += _split_lengths(lo, hi, edges)
        moments[i] = acc / blen
    T = s1 - s0
    wts = blen / T
    moment = moments @ wts
    mA = float(mean_A @ wts)
    mB = means_B @ wts
    cov = moment - mA * mB
    batch_cov = moments - mean_A[None, :] * means_B
    se = batch_cov.std(axis=1, ddof=1) / math.sqrt(n_batches)
    intensity = mA / (A[1] - A[0])
    return CovarianceCurve(A, B, t, moment, cov, se, intensity, "ergodic-average")


def fit_covariance_decay(curve: CovarianceCurve) -> DecayFit:
    return fit_decay(curve.t, np.abs(curve.cov_hat), curve.stderr)


class AlphaEstimate(NamedTuple):
    delta: np.ndarray
    alpha_n: np.ndarray
    alpha_half: np.ndarray
    richardson: np.ndarray
    n: int
    n_replicas: int

    @property
    def convergence_gap(self):
        return self.alpha_n - self.alpha_half


def growth_rate_alpha(sampler, deltas, n, n_replicas, seed=0, threads=1):
    """Monte Carlo growth rate ``(1/n) log E exp(delta X_n)`` at ``n`` and ``n / 2``.

    The replica average is taken in log space, so no exponential ever
    overflows. ``richardson = 2 alpha_n - alpha_{n/2}`` removes the
    ``O(1/n)`` boundary term.
    """
    deltas = np.atleast_1d(np.asarray(deltas, dtype=float))
    if n < 2:
        raise DomainError("n must be at least 2")
    half = n // 2

    def block(b, size):
        draw = sampler.draw(stream(seed, b), size, n)
        x = np.cumsum(draw.z, axis=1)
        return x[:, half - 1], x[:, n - 1]

    parts = run_blocks(block, n_replicas, threads)
    xh = np.concatenate([p[0] for p in parts])
    xn = np.concatenate([p[1] for p in parts])
    log_r = math.log(n_replicas)
    a_n = np.array([0.0 if d == 0 else (logsumexp(d * xn) - log_r) / n for d in deltas])
    a_h = np.array([0.0 if d == 0 else (logsumexp(d * xh) - log_r) / half for d in deltas])
    return AlphaEstimate(deltas, a_n, a_h, 2.0 * a_n - a_h, int(n), int(n_replicas))
