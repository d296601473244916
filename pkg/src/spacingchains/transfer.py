"""Discretised transfer operator, principal eigenpair and spacing transition kernel.

The operator acts on functions of a block of ``k`` spacings. It is
discretised by a Nyström rule on composite Gauss-Legendre panels over
``(r_hc, z_max]`` (tensor grid for ``k >= 2``). States are stored in
row-major order over the tensor grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union

import numpy as np
from scipy.special import roots_legendre

from .errors import ConvergenceError, DomainError, InconsistencyError, InfeasibleDensityError
from .models import HarmonicParams, PairPotential

__all__ = [
    "QuadratureGrid",
    "GridSpec",
    "PrincipalEigen",
    "TransitionModel",
    "MeanSpacing",
    "gauss_legendre_grid",
    "assemble_kernel",
    "principal_eigen",
    "build_transition",
    "gibbs_model",
    "gibbs_free_energy",
    "mean_spacing",
    "solve_pressure",
    "exp_moment_growth_bound",
    "harmonic_model",
    "model_from_matrix",
    "tv_distance_profile",
]

_MAX_K = 3


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Composite Gauss-Legendre rule on ``[lower, upper]``, tensorised ``k`` times.

    ``edges`` partitions the interval into cells of length equal to the
    quadrature weights; by the Gauss separation property each node lies in
    its own cell. The chain samplers jitter uniformly within these cells.
    """

    nodes: np.ndarray
    weights: np.ndarray
    lower: float
    upper: float
    k: int = 1
    edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 1 <= self.k <= _MAX_K:
            raise DomainError(f"block dimension k={self.k} not supported (1..{_MAX_K})")
        edges = self.lower + np.concatenate([[0.0], np.cumsum(self.weights)])
        edges[-1] = self.upper
        object.__setattr__(self, "edges", edges)

    @property
    def z_max(self):
        return self.upper

    @property
    def n(self):
        return self.nodes.size

    @property
    def n_states(self):
        return self.n ** self.k

    def multi_index(self, index):
        """Row-major multi-index (tuple of per-dimension node indices)."""
        return np.unravel_index(index, (self.n,) * self.k)

    def flat_index(self, multi):
        return np.ravel_multi_index(tuple(multi), (self.n,) * self.k)

    def state_nodes(self):
        """Array of shape ``(n_states, k)`` with the spacing block of every state."""
        idx = np.indices((self.n,) * self.k).reshape(self.k, -1).T
        return self.nodes[idx]

    def state_weights(self):
        w = self.weights
        out = w
        for _ in range(self.k - 1):
            out = np.multiply.outer(out, w).ravel()
        return out

    def reversal(self):
        """Permutation implementing ``s``: the state with the block order reversed."""
        idx = np.indices((self.n,) * self.k).reshape(self.k, -1)
        return np.ravel_multi_index(tuple(idx[::-1]), (self.n,) * self.k)

    def cell_midpoints(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def describe(self):
        return {"n_nodes": int(self.n), "k": int(self.k), "lower": float(self.lower),
                "z_max": float(self.upper)}


def gauss_legendre_grid(lower, upper, n_nodes, order=16, breakpoints=(), k=1):
    """Composite Gauss-Legendre grid with ``n_nodes // order`` panels.

    Panels are distributed over the segments cut by ``breakpoints`` in
    proportion to segment length (at least one panel per segment).
    """
    lower, upper = float(lower), float(upper)
    if not upper > lower:
        raise DomainError("grid upper bound must exceed lower bound")
    if n_nodes % order:
        raise DomainError(f"n_nodes={n_nodes} must be a multiple of the panel order {order}")
    n_panels = n_nodes // order
    cuts = [lower] + sorted(b for b in breakpoints if lower < b < upper) + [upper]
    lengths = np.diff(cuts)
    if n_panels < len(lengths):
        cuts, lengths = [lower, upper], np.array([upper - lower])
    alloc = np.maximum(1, np.floor(n_panels * lengths / lengths.sum()).astype(int))
    while alloc.sum() < n_panels:
        alloc[np.argmax(lengths / alloc)] += 1
    while alloc.sum() > n_panels:
        j = np.argmin(np.where(alloc > 1, lengths / alloc, np.inf))
        alloc[j] -= 1
    x, w = roots_legendre(order)
    nodes, weights = [], []
    for a, b, m in zip(cuts[:-1], cuts[1:], alloc):
        panel_edges = np.linspace(a, b, m + 1)
        for pa, pb in zip(panel_edges[:-1], panel_edges[1:]):
            half = 0.5 * (pb - pa)
            nodes.append(pa + half * (x + 1.0))
            weights.append(half * w)
    return QuadratureGrid(np.concatenate(nodes), np.concatenate(weights), lower, upper, k)


@dataclass(frozen=True)
class GridSpec:
    """Recipe for a grid whose truncation adapts to the pressure.

    The default truncation ``z_max = r_hc + 40 / (beta * p)`` keeps the
    neglected tail of ``exp(-beta p z)`` below ``e^-40``.
    """

    n_nodes: int = 256
    order: int = 16
    z_max: Optional[float] = None
    k: Optional[int] = None
    tail: float = 40.0

    def build(self, potential, beta, p):
        z_max = self.z_max
        if z_max is None:
            z_max = potential.r_hc + self.tail / (beta * p)
        k = potential.k if self.k is None else self.k
        return gauss_legendre_grid(potential.r_hc, z_max, self.n_nodes, self.order,
                                   potential.breakpoints, k)


GridLike = Union[QuadratureGrid, GridSpec]


def _resolve_grid(grid, potential, beta, p):
    if grid is None:
        grid = GridSpec()
    if isinstance(grid, GridSpec):
        return grid.build(potential, beta, p)
    return grid


def _check_params(beta, p):
    if not (beta > 0 and np.isfinite(beta)):
        raise DomainError("beta must be positive")
    if not (p > 0 and np.isfinite(p)):
        raise DomainError("pressure must be positive")


def _block_energies(potential, Z):
    """``V`` (without pressure), tails and heads of every block in ``Z``."""
    n_states, k = Z.shape
    csum = np.concatenate([np.zeros((n_states, 1)), np.cumsum(Z, axis=1)], axis=1)
    V = np.zeros(n_states)
    for i in range(k):
        for j in range(i + 1, k + 1):
            V += potential._eval_unchecked(csum[:, j] - csum[:, i])
    tails = csum[:, k:k + 1] - csum[:, :k]
    heads = csum[:, 1:]
    return V, tails, heads


def assemble_kernel(potential, beta, p, grid, pressure_offset=0.0):
    """Kernel matrix ``K[i, j] = exp(-beta (V_p(z_i)/2 + W(z_i; z_j) + V_p(z_j)/2))``.

    ``pressure_offset`` subtracts a constant from the block length in the
    pressure term, which rescales the kernel by ``exp(beta p offset)``
    without changing its eigenvectors.
    """
    _check_params(beta, p)
    if grid.k != potential.k:
        raise DomainError(f"grid dimension k={grid.k} does not match potential k={potential.k}")
    if grid.lower < potential.r_hc:
        raise DomainError("grid extends into the hard core")
    Z = grid.state_nodes()
    V, tails, heads = _block_energies(potential, Z)
    Vp = V + p * (Z.sum(axis=1) - pressure_offset)
    W = np.zeros((Z.shape[0], Z.shape[0]))
    for i in range(grid.k):
        for j in range(grid.k):
            W += potential._eval_unchecked(tails[:, i][:, None] + heads[:, j][None, :])
    return np.exp(-beta * (0.5 * Vp[:, None] + W + 0.5 * Vp[None, :]))


@dataclass(frozen=True, eq=False)
class PrincipalEigen:
    """Dominant eigenpair of the discretised operator.

    ``phi0`` and ``psi0 = phi0 o s`` are normalised so that their quadrature
    inner product is one. ``gap_ratio`` is the estimate of ``|lambda_1| / lambda_0``.
    ``lambda0`` belongs to the kernel as passed; ``log_lambda0`` adds back
    any rescaling applied when the kernel was assembled.
    """

    lambda0: float
    phi0: np.ndarray
    psi0: np.ndarray
    residual: float
    normalization: float
    lambda1: complex
    gap_ratio: float
    iterations: int
    log_scale: float = 0.0

    @property
    def log_lambda0(self):
        return math.log(self.lambda0) + self.log_scale


def principal_eigen(kernel, grid, tol=1e-12, max_iter=100_000, gap_iter=2000, log_scale=0.0):
    """Power iteration for the Nyström operator ``f -> sum_j K[:, j] w_j f_j``.

    Iterates on ``W^1/2 K W^1/2`` so the Euclidean norm is the quadrature
    norm. The eigenvalue is the Petrov-Galerkin quotient against the
    reversed iterate, which is the exact left eigenvector at convergence.
    """
    K = np.asarray(kernel, dtype=float)
    n = K.shape[0]
    if K.shape != (n, n) or n != grid.n_states:
        raise DomainError("kernel shape does not match the grid")
    if not np.all(np.isfinite(K)) or np.any(K < 0):
        raise DomainError("kernel must be finite and nonnegative")
    w = grid.state_weights()
    sw = np.sqrt(w)
    B = sw[:, None] * K * sw[None, :]
    rev = grid.reversal()

    y = sw / np.linalg.norm(sw)
    residual = np.inf
    lam = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        z = B @ y
        lam = float(y[rev] @ z) / float(y[rev] @ y)
        phi_scale = np.max(np.abs(y / sw))
        residual = float(np.max(np.abs((z - lam * y) / sw)) / (lam * phi_scale))
        y = z / np.linalg.norm(z)
        if residual <= tol:
            break
    else:
        raise ConvergenceError(
            f"power iteration did not reach residual {tol:g} in {max_iter} steps "
            f"(last residual {residual:.3e})", residual=residual, iterations=max_iter)

    # final quotient and residual on the accepted iterate
    z = B @ y
    lam = float(y[rev] @ z) / float(y[rev] @ y)
    phi = y / sw
    residual = float(np.max(np.abs((z - lam * y) / sw)) / (lam * np.max(np.abs(phi))))
    phi = phi if phi.sum() > 0 else -phi
    if np.any(phi <= 0):
        raise ConvergenceError("principal eigenfunction is not strictly positive",
                               residual=residual, iterations=it)
    norm = float(np.sum(w * phi * phi[rev]))
    phi = phi / math.sqrt(norm)
    psi = phi[rev]
    normalization = float(np.sum(w * phi * psi))

    lam1 = _second_eigenvalue(B, y, gap_iter)
    return PrincipalEigen(lam, phi, psi, residual, normalization, lam1,
                          float(abs(lam1) / lam), it, float(log_scale))


def _second_eigenvalue(B, y, n_iter, tol=1e-10):
    """Orthogonal iteration on a two-column block; returns the sub-dominant Ritz value."""
    n = B.shape[0]
    if n < 2:
        return 0.0
    v = np.cos(np.pi * (np.arange(n) + 0.5) / n)
    Q, _ = np.linalg.qr(np.column_stack([y, v]))
    prev = None
    for _ in range(n_iter):
        Zm = B @ Q
        Q, R = np.linalg.qr(Zm)
        T = Q.T @ B @ Q
        ev = np.linalg.eigvals(T)
        ev = ev[np.argsort(-np.abs(ev))]
        if prev is not None and abs(abs(ev[1]) - abs(prev)) <= tol * abs(ev[0]):
            prev = ev[1]
            break
        prev = ev[1]
    lam1 = complex(prev)
    return lam1.real if abs(lam1.imag) <= 1e-14 * abs(lam1) + 1e-300 else lam1


@dataclass(eq=False)
class TransitionModel:
    """Row-stochastic transition matrix between grid states, with stationary law."""

    matrix: np.ndarray
    pi: np.ndarray
    grid: QuadratureGrid
    beta: Optional[float] = None
    p: Optional[float] = None
    eigen: Optional[PrincipalEigen] = None
    row_deviation: float = 0.0
    tag: str = "grid"
    _cdf: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_states(self):
        return self.matrix.shape[0]

    @property
    def k(self):
        return self.grid.k

    @property
    def cdf(self):
        if self._cdf is None:
            c = np.cumsum(self.matrix, axis=1)
            c /= c[:, -1:]
            c[:, -1] = 1.0
            self._cdf = c
        return self._cdf

    def stationarity_error(self):
        return float(np.abs(self.pi @ self.matrix - self.pi).sum())

    def block_cells(self):
        """Per-state arrays ``(lo, width)`` of shape ``(n_states, k)`` for jittered emission."""
        idx = np.indices((self.grid.n,) * self.k).reshape(self.k, -1).T
        lo = self.grid.edges[:-1][idx]
        width = np.diff(self.grid.edges)[idx]
        return lo, width

    def node_mean(self):
        """``E_pi`` of the block-averaged spacing evaluated at the nodes."""
        return float(self.pi @ self.grid.state_nodes().mean(axis=1))

    def emitted_mean(self):
        """Exact mean spacing of the jittered emissions under ``pi``."""
        lo, width = self.block_cells()
        return float(self.pi @ (lo + 0.5 * width).mean(axis=1))

    def emitted_var(self):
        """Marginal variance of one jittered spacing under ``pi`` (component-averaged)."""
        lo, width = self.block_cells()
        m1 = lo + 0.5 * width
        m2 = (lo * lo + lo * width + width * width / 3.0)
        mean = float(self.pi @ m1.mean(axis=1))
        return float(self.pi @ m2.mean(axis=1)) - mean * mean


def build_transition(eigen, kernel, grid, beta=None, p=None, tol=1e-8):
    """Doob transform ``P(z_i -> z_j) = K_ij phi_j w_j / (lambda_0 phi_i)``.

    Rows are renormalised to sum to one; the largest correction is kept in
    ``row_deviation``.
    """
    if eigen.residual > tol:
        raise InconsistencyError(f"eigen residual {eigen.residual:.3e} exceeds {tol:g}")
    K = np.asarray(kernel, dtype=float)
    w = grid.state_weights()
    phi = eigen.phi0
    P = K * (phi * w)[None, :] / (eigen.lambda0 * phi[:, None])
    sums = P.sum(axis=1)
    dev = float(np.max(np.abs(sums - 1.0)))
    floor = max(eigen.residual, 1e-13)
    if dev > 100.0 * floor:
        raise InconsistencyError(
            f"row sums deviate from one by {dev:.3e} (> 100 x residual {floor:.1e})")
    P /= sums[:, None]
    pi = eigen.psi0 * phi * w
    pi /= pi.sum()
    return TransitionModel(P, pi, grid, beta, p, eigen, dev, tag="gibbs")


def _scaled_eigen(potential, beta, p, grid, tol=1e-12):
    # at high pressure exp(-beta p k r_hc) underflows; factor it out
    offset = grid.k * potential.r_hc if beta * p * grid.k * potential.r_hc > 300.0 else 0.0
    K = assemble_kernel(potential, beta, p, grid, pressure_offset=offset)
    return K, principal_eigen(K, grid, tol=tol, log_scale=-beta * p * offset)


def gibbs_model(potential, beta, p, grid=None, tol=1e-12):
    """Kernel, eigenpair and transition model in one call."""
    grid = _resolve_grid(grid, potential, beta, p)
    K, eig = _scaled_eigen(potential, beta, p, grid, tol)
    return build_transition(eig, K, grid, beta, p)


def _lambda0(potential, beta, p, grid, tol=1e-12):
    return _scaled_eigen(potential, beta, p, grid, tol)[1]


def gibbs_free_energy(potential, beta, p, grid=None):
    """``g(p) = (1/k) log lambda_0(p)``."""
    _check_params(beta, p)
    grid = _resolve_grid(grid, potential, beta, p)
    return _lambda0(potential, beta, p, grid).log_lambda0 / grid.k


class MeanSpacing(NamedTuple):
    finite_difference: float
    stationary: float
    residual: float


def mean_spacing(potential, beta, p, grid=None, rel_step=1e-4):
    """Mean spacing ``l(p) = -(1/beta) dg/dp`` computed two ways.

    Returns the central finite difference of the free energy and the
    stationary average of the block-averaged spacing; raises if they
    disagree by more than ``max(1e-6, 5 * residual)``.
    """
    _check_params(beta, p)
    grid = _resolve_grid(grid, potential, beta, p)
    h = rel_step * p
    e_plus = _lambda0(potential, beta, p + h, grid)
    e_minus = _lambda0(potential, beta, p - h, grid)
    g_plus = e_plus.log_lambda0 / grid.k
    g_minus = e_minus.log_lambda0 / grid.k
    ell_fd = -(g_plus - g_minus) / (2.0 * h * beta)
    model = gibbs_model(potential, beta, p, grid)
    ell_pi = model.node_mean()
    residual = max(model.eigen.residual, e_plus.residual, e_minus.residual)
    tol = max(1e-6, 5.0 * residual)
    if abs(ell_fd - ell_pi) > tol:
        raise InconsistencyError(
            f"mean spacing routes disagree: finite difference {ell_fd:.10g} vs "
            f"stationary {ell_pi:.10g} (tol {tol:.1e}); refine the grid")
    return MeanSpacing(ell_fd, ell_pi, residual)


def _ell(potential, beta, p, grid):
    return gibbs_model(potential, beta, p, _resolve_grid(grid, potential, beta, p)).node_mean()


def solve_pressure(potential, beta, target_intensity, grid=None, rtol=1e-10,
                   p_max=1e6, p_min=1e-8):
    """Pressure ``p`` with ``l(p) = 1 / target_intensity``, by bracketing and bisection."""
    rho = float(target_intensity)
    if not rho > 0:
        raise DomainError("target intensity must be positive")
    if rho >= 1.0 / potential.r_hc:
        raise InfeasibleDensityError(
            f"intensity {rho} is at or beyond close packing 1/r_hc = {1.0 / potential.r_hc}")
    target = 1.0 / rho
    lo = hi = 1.0
    ell = _ell(potential, beta, 1.0, grid)
    if ell > target:
        while ell > target:
            lo, hi = hi, 2.0 * hi
            if hi > p_max:
                raise InfeasibleDensityError(
                    f"pressure exceeds cap {p_max:g} before reaching intensity {rho} "
                    "(too close to close packing)")
            ell = _ell(potential, beta, hi, grid)
    else:
        while ell <= target:
            hi, lo = lo, 0.5 * lo
            if lo < p_min:
                raise InfeasibleDensityError(f"pressure fell below {p_min:g}")
            ell = _ell(potential, beta, lo, grid)
    # invariant: l(lo) > target >= l(hi)
    while hi - lo > rtol * lo:
        mid = 0.5 * (lo + hi)
        if _ell(potential, beta, mid, grid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def exp_moment_growth_bound(potential, beta, p, theta, grid=None):
    """Upper bound ``(1/k) log(lambda_0(p - 2 theta / beta) / lambda_0(p))``.

    Controls the growth rate of ``log E_pi exp(2 theta (Z_1 + ... + Z_n)) / n``:
    tilting every spacing by ``exp(2 theta z)`` is the same as lowering the
    pressure by ``2 theta / beta``, so ``theta`` must lie in ``(0, beta p / 2)``.
    Both eigenvalues are computed on the grid of the lower pressure.
    """
    _check_params(beta, p)
    if not 0 < theta < 0.5 * beta * p:
        raise DomainError(f"theta={theta} outside (0, beta*p/2 = {0.5 * beta * p})")
    p_low = p - 2.0 * theta / beta
    grid = _resolve_grid(grid, potential, beta, p_low)
    log_low = _lambda0(potential, beta, p_low, grid).log_lambda0
    log_p = _lambda0(potential, beta, p, grid).log_lambda0
    return (log_low - log_p) / grid.k


def _left_perron(P, start, tol=1e-14, max_iter=100_000):
    pi = start / start.sum()
    for _ in range(max_iter):
        nxt = pi @ P
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() <= tol:
            return nxt
        pi = nxt
    raise ConvergenceError("stationary vector did not converge")


def model_from_matrix(matrix, grid, pi=None, tag="grid"):
    """Wrap an arbitrary row-stochastic matrix on a grid as a :class:`TransitionModel`."""
    P = np.asarray(matrix, dtype=float)
    if P.shape != (grid.n_states, grid.n_states):
        raise DomainError("matrix shape does not match the grid")
    if np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-12:
        raise DomainError("matrix must be row-stochastic")
    if pi is None:
        pi = _left_perron(P, np.full(P.shape[0], 1.0 / P.shape[0]))
    pi = np.asarray(pi, dtype=float)
    return TransitionModel(P, pi / pi.sum(), grid, tag=tag)


def harmonic_model(params: HarmonicParams, n_nodes=256, width=8.0, order=16):
    """Harmonic chain discretised on ``a +- width * stat_sd``.

    Row ``i`` is the Gaussian transition density at the nodes times the
    quadrature weights, renormalised.
    """
    half = width * params.stat_sd
    grid = gauss_legendre_grid(params.a - half, params.a + half, n_nodes, order)
    z = grid.nodes
    P = params.transition_density(z[:, None], z[None, :]) * grid.weights[None, :]
    P /= P.sum(axis=1, keepdims=True)
    start = params.stationary_density(z) * grid.weights
    pi = _left_perron(P, start)
    return TransitionModel(P, pi, grid, beta=params.beta, tag="harmonic")


def tv_distance_profile(model, n_steps):
    """``max_x ||P^n(x, .) - pi||_TV`` for ``n = 1..n_steps``."""
    P = model.matrix
    Pn = np.eye(P.shape[0])
    out = np.empty(n_steps)
    for n in range(n_steps):
        Pn = Pn @ P
        out[n] = 0.5 * np.max(np.abs(Pn - model.pi[None, :]).sum(axis=1))
    return out
