"""Minorisation certificates and split-chain simulation on the grid chain.

A certificate ``(r, lam, R, nu)`` states ``P^r(x, j) >= lam * nu(j)`` for every
grid state ``x`` and every ``j``, with ``nu = pi(. & R) / pi(R)``. The split
chain flips a coin with success probability ``lam`` whenever the skeleton
chain sits in ``R``; on success (a "bell") the next skeleton state is drawn
from ``nu``, otherwise from the residual kernel.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy import stats

from .chains import GridSampler, SpacingPath, autocorrelation, positions
from .errors import CertificateError, DomainError, InsufficientDataError, SearchFailure
from .rng import open_unit, stream
from .transfer import TransitionModel, model_from_matrix

__all__ = [
    "MinorisationCert",
    "ProductForm",
    "RegenerationRecord",
    "TailFit",
    "WalkStats",
    "find_minorisation",
    "certificate_from_set",
    "verify_certificate",
    "simulate_split",
    "tau_tail_diagnostics",
    "embedded_walk_stats",
    "regeneration_state_test",
    "dcor_permutation_test",
    "log_mgf_halves",
    "iid_row_chain",
]

_SLACK = 1e-12


class ProductForm(NamedTuple):
    """Uniform increment law on ``[lo, hi]`` found by a histogram scan."""

    lo: float
    hi: float
    mass: float
    validated: bool


@dataclass(eq=False)
class MinorisationCert:
    r: int
    lambda_min: float
    regen_set: np.ndarray
    nu: np.ndarray
    pi_R: float
    product_form: Optional[ProductForm] = None
    power: np.ndarray = field(default=None, repr=False)

    def in_set(self, n_states):
        mask = np.zeros(n_states, dtype=bool)
        mask[self.regen_set] = True
        return mask


def _matrix_power(P, r):
    out = P
    for _ in range(r - 1):
        out = out @ P
    return out


def verify_certificate(model, cert):
    """Smallest entry of ``P^r - lam * nu``; raises if below ``-1e-12``."""
    Pr = cert.power if cert.power is not None else _matrix_power(model.matrix, cert.r)
    slack = float(np.min(Pr - cert.lambda_min * cert.nu[None, :]))
    if slack < -_SLACK:
        raise CertificateError(f"minorisation fails by {-slack:.3e}")
    return slack


def _nu_from_set(pi, regen_set):
    nu = np.zeros_like(pi)
    nu[regen_set] = pi[regen_set]
    pi_R = float(nu.sum())
    return nu / pi_R, pi_R


def certificate_from_set(model, regen_set, r=1):
    """Largest ``lam`` valid for a given set ``R`` and step ``r``."""
    regen_set = np.unique(np.asarray(regen_set, dtype=np.intp))
    if regen_set.size == 0:
        raise DomainError("regeneration set must be non-empty")
    Pr = _matrix_power(model.matrix, r)
    nu, pi_R = _nu_from_set(model.pi, regen_set)
    if pi_R <= 0:
        raise DomainError("regeneration set has zero stationary mass")
    lam = float(np.min(Pr[:, regen_set] / nu[regen_set][None, :]))
    lam = 1.0 if lam > 1.0 - 1e-12 else lam
    cert = MinorisationCert(r, lam, regen_set, nu, pi_R, None, Pr)
    verify_certificate(model, cert)
    return cert


def find_minorisation(model: TransitionModel, max_r=4, lambda_floor=0.01, scan_seed=0):
    """Search ``r = 1..max_r`` for a certificate with ``lam >= lambda_floor``.

    For each ``r`` the columns are ranked by ``c_j = min_x P^r(x, j) / pi_j``;
    any set ``R`` then has ``lam(R) = pi(R) * min_{j in R} c_j``, so the best
    set of each size is a prefix of this ranking. Among feasible prefixes
    the one maximising the regeneration rate ``lam * pi(R)`` is returned.
    """
    P = model.matrix
    pi = model.pi
    if np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-10:
        raise DomainError("transition rows are not stochastic")
    if max_r < 1:
        raise DomainError("max_r must be at least 1")
    positive = pi > 0
    best_lam = 0.0
    Pr = None
    for r in range(1, max_r + 1):
        Pr = P.copy() if Pr is None else Pr @ P
        ratio = np.zeros_like(pi)
        ratio[positive] = Pr[:, positive].min(axis=0) / pi[positive]
        order = np.argsort(-ratio, kind="stable")
        cum = np.cumsum(pi[order])
        lam = np.minimum(cum * ratio[order], 1.0)
        best_lam = max(best_lam, float(lam.max()))
        feasible = lam >= lambda_floor
        if not np.any(feasible):
            continue
        score = np.where(feasible, lam * cum, -np.inf)
        # scores equal up to rounding favour the larger set
        size = int(np.flatnonzero(score >= score.max() * (1.0 - 1e-12))[-1]) + 1
        regen_set = np.sort(order[:size])
        nu, pi_R = _nu_from_set(pi, regen_set)
        lam_r = float(np.min(Pr[:, regen_set] / nu[regen_set][None, :]))
        lam_r = 1.0 if lam_r > 1.0 - 1e-12 else min(lam_r, 1.0)
        cert = MinorisationCert(r, lam_r, regen_set, nu, pi_R, None, Pr)
        verify_certificate(model, cert)
        if r >= 2:
            cert.product_form = _scan_product_form(model, cert, scan_seed)
        return cert
    raise SearchFailure(
        f"no certificate with lambda >= {lambda_floor} for r <= {max_r} "
        f"(best lambda {best_lam:.3e})", best_lambda=best_lam)


class _Uniforms:
    """Buffered uniform draws from ``(0, 1]``."""

    def __init__(self, rng, chunk=8192):
        self.rng = rng
        self.chunk = chunk
        self.buf = []
        self.pos = 0

    def __call__(self):
        if self.pos == len(self.buf):
            self.buf = open_unit(self.rng, self.chunk).tolist()
            self.pos = 0
        v = self.buf[self.pos]
        self.pos += 1
        return v


def _cdf_rows(M):
    c = np.cumsum(M, axis=1)
    c /= c[:, -1:]
    c[:, -1] = 1.0
    return c.tolist()


@dataclass(eq=False)
class RegenerationRecord:
    """Regeneration times (in skeleton steps) and embedded-walk increments.

    ``tau[0] = 0``; ``y_increments[j-1] = X_{r tau_j} - X_{r tau_{j-1}}``.
    ``bells[n]`` is the coin outcome at skeleton step ``n``.
    """

    tau: np.ndarray
    y_increments: np.ndarray
    bells: np.ndarray
    skeleton_states: np.ndarray
    r: int
    lambda_min: float
    path_ref: tuple

    @property
    def n_cycles(self):
        return self.y_increments.size

    @property
    def gaps(self):
        return np.diff(self.tau)


def simulate_split(model, cert, n_cycles, seed=0, stream_id=0, init="stationary"):
    """Simulate the split chain until ``n_cycles`` regenerations have completed.

    Intermediate states of an ``r``-step skeleton move are filled in by
    sampling the bridge between its endpoints.
    """
    if n_cycles < 1:
        raise DomainError("n_cycles must be positive")
    n = model.n_states
    r = cert.r
    lam = cert.lambda_min
    Pr = cert.power if cert.power is not None else _matrix_power(model.matrix, r)
    if lam < 1.0:
        resid = Pr - lam * cert.nu[None, :]
        if np.min(resid) < -_SLACK:
            raise CertificateError(f"residual kernel has negative mass {np.min(resid):.3e}")
        resid = np.clip(resid, 0.0, None)
        sums = resid.sum(axis=1, keepdims=True)
        q_rows = _cdf_rows(np.where(sums > 0, resid, Pr))
    else:
        q_rows = None
    p_rows = _cdf_rows(Pr)
    nu_cdf = np.cumsum(cert.nu)
    nu_cdf /= nu_cdf[-1]
    nu_cdf = nu_cdf.tolist()
    in_R = cert.in_set(n).tolist()

    rng = stream(seed, stream_id)
    sampler = GridSampler(model)
    s = int(sampler.initial_states(rng, 1, init)[0])
    uni = _Uniforms(rng)
    last = n - 1
    skeleton = [s]
    bells = []
    tau = [0]
    while len(tau) <= n_cycles:
        bell = in_R[s] and (lam >= 1.0 or uni() <= lam)
        if bell:
            s = min(bisect_left(nu_cdf, uni()), last)
        elif in_R[s]:
            s = min(bisect_left(q_rows[s], uni()), last)
        else:
            s = min(bisect_left(p_rows[s], uni()), last)
        bells.append(bell)
        skeleton.append(s)
        if bell:
            tau.append(len(bells))
    skeleton = np.asarray(skeleton, dtype=np.intp)
    states = _fill_bridges(model.matrix, skeleton, r, rng) if r > 1 else skeleton[:-1]
    z = sampler.emit(rng, states[None, :], states.size * model.k)[0]
    x = positions(z)
    tau = np.asarray(tau, dtype=np.int64)
    xt = x[r * model.k * tau]
    path = SpacingPath(int(seed), int(stream_id), model.tag, z, x,
                       init if isinstance(init, str) else init[0], states)
    record = RegenerationRecord(tau, np.diff(xt), np.asarray(bells, dtype=bool), skeleton,
                                r, lam, (int(seed), int(stream_id)))
    return path, record


def _fill_bridges(P, skeleton, r, rng):
    """Full state sequence ``M_0..M_{r N - 1}`` through the skeleton points."""
    powers = [np.eye(P.shape[0])]
    for _ in range(r - 1):
        powers.append(powers[-1] @ P)
    n_steps = skeleton.size - 1
    out = np.empty(n_steps * r, dtype=np.intp)
    u = open_unit(rng, n_steps * (r - 1)).reshape(n_steps, max(r - 1, 1))
    for b in range(n_steps):
        cur, end = int(skeleton[b]), int(skeleton[b + 1])
        out[b * r] = cur
        for i in range(1, r):
            w = P[cur] * powers[r - i][:, end]
            c = np.cumsum(w)
            cur = int(min(np.searchsorted(c, u[b, i - 1] * c[-1]), c.size - 1))
            out[b * r + i] = cur
    return out


def _scan_product_form(model, cert, seed, n_cycles=4000, n_bins=40):
    """Histogram scan for an interval on which ``r``-step increments landing in ``R`` spread."""
    path, rec = simulate_split(model, cert, n_cycles, seed=seed, stream_id=2**32 - 1)
    r = cert.r * model.k
    xs = path.x[::r]
    inc = np.diff(xs)[: rec.skeleton_states.size - 1]
    land = cert.in_set(model.n_states)[rec.skeleton_states[1:inc.size + 1]]
    sel = inc[land]
    if sel.size < 50:
        return ProductForm(float("nan"), float("nan"), 0.0, False)
    hist, edges = np.histogram(sel, bins=n_bins)
    mode = int(np.argmax(hist))
    lo = hi = mode
    while lo > 0 and hist[lo - 1] >= 0.5 * hist[mode]:
        lo -= 1
    while hi < n_bins - 1 and hist[hi + 1] >= 0.5 * hist[mode]:
        hi += 1
    a, b = float(edges[lo]), float(edges[hi + 1])
    mass = float(np.mean((sel >= a) & (sel <= b)))
    starts = rec.skeleton_states[:inc.size][land]
    # every start-state class must put mass everywhere on the interval
    classes = np.array_split(np.argsort(starts, kind="stable"), 4)
    ok = all(np.all(np.histogram(sel[c], bins=hi - lo + 1, range=(a, b))[0] > 0)
             for c in classes if c.size)
    return ProductForm(a, b, mass, bool(ok))


class TailFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float
    rate: float
    rate_ci: tuple
    n_points: int
    degenerate: bool


def tau_tail_diagnostics(record, min_cycles=1000):
    """Least-squares fit of ``log P(tau_2 - tau_1 > n)`` against ``n``.

    Uses cycles after the first (started from ``nu``) and survival levels
    above ``10 / n_cycles``.
    """
    if record.n_cycles < min_cycles:
        raise InsufficientDataError(f"need at least {min_cycles} cycles, got {record.n_cycles}")
    gaps = record.gaps[1:]
    if np.all(gaps == gaps[0]):
        return TailFit(float("nan"), float("nan"), float("nan"), float("nan"),
                       (float("nan"), float("nan")), 0, True)
    n_max = int(gaps.max())
    ns = np.arange(1, n_max + 1)
    srt = np.sort(gaps)
    surv = 1.0 - np.searchsorted(srt, ns, side="right") / gaps.size
    keep = surv >= 10.0 / gaps.size
    if keep.sum() < 5:
        raise InsufficientDataError(f"only {int(keep.sum())} usable tail points (need 5)")
    fit = stats.linregress(ns[keep], np.log(surv[keep]))
    half = 1.96 * fit.stderr
    return TailFit(float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2),
                   float(-fit.slope), (float(-fit.slope - half), float(-fit.slope + half)),
                   int(keep.sum()), False)


class WalkStats(NamedTuple):
    n: int
    mean: float
    mean_se: float
    acf1: float
    acf2: float
    acf_halfwidth: float
    ks_stat: float
    ks_pvalue: float
    drift_target: Optional[float]
    drift_gap: Optional[float]
    drift_se: Optional[float]


def embedded_walk_stats(record, mean_spacing=None, min_increments=1000):
    """Summary of the embedded walk increments ``Y_2, Y_3, ...``.

    With ``mean_spacing`` (the stationary mean spacing) the drift identity
    ``E Y = r E_pi[Z] E_nu[tau]`` is checked through ``Y_j - r E_pi[Z] (tau_j - tau_{j-1})``,
    whose mean is zero.
    """
    y = record.y_increments[1:]
    if y.size < min_increments:
        raise InsufficientDataError(f"need {min_increments} increments, got {y.size}")
    n = y.size
    sd = float(np.std(y, ddof=1))
    if sd > 0:
        acf = autocorrelation(y, 2)
    else:
        acf = np.zeros(2)
    half = n // 2
    ks = stats.ks_2samp(y[:half], y[half:])
    target = gap = se = None
    if mean_spacing is not None:
        c = record.r * mean_spacing
        g = record.gaps[1:]
        d = y - c * g
        target = float(c * g.mean())
        gap = float(d.mean())
        se = float(d.std(ddof=1) / math.sqrt(n))
    return WalkStats(n, float(y.mean()), sd / math.sqrt(n), float(acf[0]), float(acf[1]),
                     1.96 / math.sqrt(n), float(ks.statistic), float(ks.pvalue),
                     target, gap, se)


def regeneration_state_test(record, cert):
    """Chi-square p-value of post-regeneration skeleton states against ``nu``."""
    idx = record.tau[1:]
    states = record.skeleton_states[idx]
    counts = np.bincount(states, minlength=cert.nu.size)[cert.regen_set]
    expected = cert.nu[cert.regen_set] * states.size
    # pool cells with small expectation, in decreasing expectation order
    order = np.argsort(-expected, kind="stable")
    obs_p, exp_p = [], []
    acc_o = acc_e = 0.0
    for j in order:
        acc_o += counts[j]
        acc_e += expected[j]
        if acc_e >= 5.0:
            obs_p.append(acc_o)
            exp_p.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0:
        if exp_p:
            obs_p[-1] += acc_o
            exp_p[-1] += acc_e
        else:
            obs_p.append(acc_o)
            exp_p.append(acc_e)
    if len(exp_p) < 2:
        return 1.0
    return float(stats.chisquare(obs_p, exp_p).pvalue)


def _centred_distances(v):
    d = np.abs(v[:, None] - v[None, :])
    return d - d.mean(axis=0)[None, :] - d.mean(axis=1)[:, None] + d.mean()


def dcor_permutation_test(x, y, n_perm=999, max_n=1000, seed=0):
    """Distance-covariance permutation test of independence; returns ``(dcov2, p)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rng = stream(seed, 0)
    if x.size > max_n:
        sel = np.sort(rng.choice(x.size, max_n, replace=False))
        x, y = x[sel], y[sel]
    A = _centred_distances(x)
    B = _centred_distances(y)
    stat = float(np.mean(A * B))
    hits = 0
    for _ in range(n_perm):
        p = rng.permutation(y.size)
        if np.mean(A * B[np.ix_(p, p)]) >= stat:
            hits += 1
    return stat, (hits + 1) / (n_perm + 1)


def log_mgf_halves(y, delta, n_boot=200, seed=0):
    """Log-MGF of ``y`` at ``delta`` on each half with bootstrap standard errors."""
    y = np.asarray(y, dtype=float)
    rng = stream(seed, 1)
    out = []
    for part in (y[: y.size // 2], y[y.size // 2:]):
        est = _log_mean_exp(delta * part)
        boot = [_log_mean_exp(delta * part[rng.integers(0, part.size, part.size)])
                for _ in range(n_boot)]
        out.append((est, float(np.std(boot, ddof=1))))
    return out


def _log_mean_exp(v):
    m = float(np.max(v))
    return m + math.log(float(np.mean(np.exp(v - m))))


def iid_row_chain(n_states=64, lam=0.3, seed=0):
    """Synthetic chain ``P = lam * nu + (1 - lam) * shift`` with uniform ``nu``.

    The shift is a cyclic permutation, so every column minimum of ``P``
    equals ``lam / n`` and the best certificate has exactly ``lam`` on the
    full state space.
    """
    from .transfer import gauss_legendre_grid

    if not 0 < lam < 1:
        raise DomainError("lam must be in (0, 1)")
    P = np.full((n_states, n_states), lam / n_states)
    P[np.arange(n_states), (np.arange(n_states) + 1) % n_states] += 1.0 - lam
    grid = gauss_legendre_grid(1.0, 3.0, n_states, order=min(16, n_states))
    return model_from_matrix(P, grid, pi=np.full(n_states, 1.0 / n_states), tag="iid-row")
