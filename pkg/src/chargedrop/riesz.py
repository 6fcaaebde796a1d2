"""Riesz kernels, discrete sets and measures, and quadratic-form energies.

The kernel is ``|x - y|^{-(N - alpha)}``.  Sets are collections of cells
(center, volume); measures carry a density per unit volume, so the mass of
cell ``i`` is ``density[i] * weights[i]``.

Two kernel operators are provided.  :class:`KernelMatrix` stores the dense
symmetric matrix and works for any cell layout.  :class:`GridKernel` exploits
translation invariance on a uniform lattice and applies the same matrix by
zero-padded FFT convolution, which is what makes ~10^5 cells tractable.
"""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import fft


@dataclass(frozen=True)
class RieszParams:
    dimension: int = 2
    alpha: float = 1.0
    eps: float = 0.0

    def __post_init__(self):
        if int(self.dimension) != self.dimension or self.dimension < 2:
            raise ValueError(f"dimension must be an integer >= 2, got {self.dimension}")
        if not 0.0 < self.alpha < self.dimension:
            raise ValueError(f"alpha must lie in (0, N), got {self.alpha}")
        if self.eps < 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")

    @property
    def exponent(self) -> float:
        """Decay exponent N - alpha of the kernel."""
        return self.dimension - self.alpha

    def with_eps(self, eps: float) -> "RieszParams":
        return RieszParams(self.dimension, self.alpha, eps)


class SingularityError(ValueError):
    pass


class AssemblyError(ValueError):
    pass


def kernel_eval(x, y, params: RieszParams) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = float(np.linalg.norm(x - y))
    if r == 0.0:
        raise SingularityError("kernel evaluated at coincident points")
    return r ** (-params.exponent)


@dataclass(frozen=True, eq=False)
class DiscreteSet:
    """Quadrature cells of a set.

    ``lattice`` holds integer indices when the cells sit on the uniform grid
    ``x = h * (i + 1/2)``; it enables the FFT operator.  ``sizes`` holds a
    per-cell linear size for non-uniform (mapped) cells and defaults to
    ``cell_size``.
    """

    centers: np.ndarray
    weights: np.ndarray
    cell_size: float
    lattice: Optional[np.ndarray] = None
    sizes: Optional[np.ndarray] = None
    subpoints: Optional[np.ndarray] = None
    subweights: Optional[np.ndarray] = None
    anchors: Optional[np.ndarray] = None

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(centers) == 0:
            raise ValueError("empty set")
        if centers.shape[0] != weights.shape[0]:
            raise ValueError("centers and weights differ in length")
        if np.any(weights <= 0):
            raise ValueError("cell weights must be positive")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "weights", weights)
        if self.lattice is not None:
            lat = np.asarray(self.lattice, dtype=np.int64)
            if lat.shape != centers.shape:
                raise ValueError("lattice indices must match centers")
            object.__setattr__(self, "lattice", lat)
        if self.sizes is not None:
            object.__setattr__(self, "sizes", np.asarray(self.sizes, dtype=float).reshape(-1))
        if self.subpoints is not None:
            pts = np.asarray(self.subpoints, dtype=float)
            sw = np.asarray(self.subweights, dtype=float)
            if pts.shape[:1] != (len(weights),) or sw.shape != pts.shape[:2]:
                raise ValueError("subcell quadrature does not match the cells")
            object.__setattr__(self, "subpoints", pts)
            object.__setattr__(self, "subweights", sw / sw.sum(axis=1, keepdims=True))

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def dimension(self) -> int:
        return self.centers.shape[1]

    @property
    def total_volume(self) -> float:
        return float(np.sum(self.weights))

    def cell_sizes(self) -> np.ndarray:
        if self.sizes is not None:
            return self.sizes
        return np.full(self.n, self.cell_size)

    def check_distinct(self) -> None:
        keys = self.lattice if self.lattice is not None else self.centers
        if len(np.unique(keys, axis=0)) != self.n:
            raise AssemblyError("duplicate cell centers")


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    support: DiscreteSet
    density: np.ndarray

    def __post_init__(self):
        dens = np.asarray(self.density, dtype=float).reshape(-1)
        if dens.shape[0] != self.support.n:
            raise ValueError("density length does not match support")
        if np.any(dens < 0):
            raise ValueError("density must be nonnegative")
        object.__setattr__(self, "density", dens)

    @property
    def masses(self) -> np.ndarray:
        return self.density * self.support.weights

    @property
    def mass(self) -> float:
        return float(np.sum(self.masses))

    def scaled(self, c: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.support, c * self.density)

    @classmethod
    def uniform(cls, support: DiscreteSet) -> "DiscreteMeasure":
        """Normalized indicator chi_E / |E|."""
        return cls(support, np.full(support.n, 1.0 / support.total_volume))


# ----------------------------------------------------------------------------
# cell-pair averages of the kernel


def _poly_coeffs(linear):
    """Coefficients (in rho) of prod_k (a_k + b_k rho)."""
    coeffs = [np.ones_like(linear[0][0])]
    for a, b in linear:
        new = [np.zeros_like(coeffs[0]) for _ in range(len(coeffs) + 1)]
        for j, c in enumerate(coeffs):
            new[j] = new[j] + a * c
            new[j + 1] = new[j + 1] + b * c
        coeffs = new
    return coeffs


def _corner_box_integral(a, b, p, order, scale=None):
    """Integral of |scale * e|^{-p} * prod_k (a_k + b_k e_k) over [0, 1]^N.

    The singularity sits at the corner e = 0.  Each ray from the corner is
    integrated in closed form; the remaining integral over the far faces
    is smooth and done by tensor Gauss-Legendre.
    """
    N = len(a)
    x, w = leggauss(order)
    t = 0.5 * (x + 1.0)
    wt = 0.5 * w
    total = 0.0
    for j in range(N):
        # region where coordinate j is the largest: e = rho * v, v_j = 1
        if N == 1:
            grids, ws = [], np.ones(1)
        else:
            grids = list(np.meshgrid(*([t] * (N - 1)), indexing="ij"))
            ws = functools.reduce(np.multiply.outer, [wt] * (N - 1))
        one = np.ones_like(ws)
        v = grids[:j] + [one] + grids[j:]
        coeffs = _poly_coeffs([(a[k] * one, b[k] * v[k]) for k in range(N)])
        alpha = N - p
        inner = sum(c / (alpha + m) for m, c in enumerate(coeffs))
        sc = np.ones(N) if scale is None else np.asarray(scale, dtype=float)
        vnorm = np.sqrt(sum((sk * vk) ** 2 for sk, vk in zip(sc, v)))
        total += float(np.sum(ws * vnorm ** (-p) * inner))
    return total


@functools.lru_cache(maxsize=None)
def _cell_pair_mean_cached(delta: tuple, N: int, alpha: float, order: int) -> float:
    p = N - alpha
    delta = np.asarray(delta, dtype=float)
    xg, wg = leggauss(order)
    total = 0.0
    # e = delta + (u - v) ranges over prod [delta_k - 1, delta_k + 1]; split into unit boxes
    for lows in itertools.product(*[(dk - 1.0, dk) for dk in delta]):
        lows = np.asarray(lows)
        if np.all((lows == 0.0) | (lows == -1.0)):
            # the singular point e = 0 is a corner of this box; reflect so it sits at the origin
            a, b = [], []
            for k in range(N):
                sgn = 1.0 if lows[k] == 0.0 else -1.0
                # e_k = sgn * s with s in [0, 1]; the tent factor is linear in s on this box
                if lows[k] == delta[k] - 1.0:
                    a.append(1.0 - delta[k])
                    b.append(sgn)
                else:
                    a.append(1.0 + delta[k])
                    b.append(-sgn)
            total += _corner_box_integral(np.asarray(a), np.asarray(b), p, order)
        else:
            nodes = [lo + 0.5 * (xg + 1.0) for lo in lows]
            grids = np.meshgrid(*nodes, indexing="ij")
            W = functools.reduce(np.multiply.outer, [0.5 * wg] * N)
            dens = np.ones_like(W)
            for k in range(N):
                dens = dens * (1.0 - np.abs(grids[k] - delta[k]))
            r = np.sqrt(sum(g * g for g in grids))
            total += float(np.sum(W * dens * r ** (-p)))
    return total


def cell_pair_mean(delta, dimension: int, alpha: float, order: int = 48) -> float:
    """Mean of |x - y|^{-(N-alpha)} over x, y uniform in unit cells offset by ``delta``.

    ``delta`` is an integer offset vector; ``delta = 0`` gives the self-cell
    constant S(N, alpha).
    """
    key = tuple(sorted(abs(int(d)) for d in delta))
    if len(key) != dimension:
        raise ValueError("offset length must equal the dimension")
    return _cell_pair_mean_cached(key, int(dimension), float(alpha), int(order))


def self_cell_constant(dimension: int, alpha: float) -> float:
    """S(N, alpha): mean kernel over independent uniform pairs of a unit cell."""
    return cell_pair_mean((0,) * dimension, dimension, alpha)


@functools.lru_cache(maxsize=None)
def box_self_mean(sides: tuple, alpha: float, order: int = 48) -> float:
    """Mean of |x - y|^{-(N-alpha)} over independent uniform pairs in a box with the given sides."""
    N = len(sides)
    p = N - alpha
    ones = np.ones(N)
    return 2.0 ** N * _corner_box_integral(ones, -ones, p, order, scale=np.asarray(sides, dtype=float))


@functools.lru_cache(maxsize=None)
def disk_self_mean(alpha: float) -> float:
    """Mean of |x - y|^{-(2-alpha)} over independent uniform pairs in the unit disk."""
    from scipy import integrate

    # distance density of two uniform points in the unit disk
    dens = lambda d: 4 * d / np.pi * (np.arccos(d / 2) - d / 2 * np.sqrt(1 - d * d / 4))
    val, _ = integrate.quad(lambda d: d ** (alpha - 2) * dens(d), 0, 2, epsabs=0, epsrel=1e-12, limit=200)
    return val


def equivalent_size(self_term: np.ndarray, dimension: int, alpha: float) -> np.ndarray:
    """Cell size whose square-cell diagonal rule reproduces ``self_term``."""
    return (self_cell_constant(dimension, alpha) / np.asarray(self_term)) ** (1.0 / (dimension - alpha))


@functools.lru_cache(maxsize=None)
def ball_pair_constant(dimension: int, alpha: float, samples: int = 1_000_000, seed: int = 12345):
    """Monte Carlo estimate of c(N, alpha) = int_{B1 x B1} |x - y|^{alpha - N}.

    Returns ``(estimate, standard_error)``.
    """
    rng = np.random.default_rng(seed)
    N = dimension
    vol = np.pi ** (N / 2) / _gamma(N / 2 + 1)
    acc = []
    chunk = 200_000
    left = samples
    while left > 0:
        m = min(chunk, left)
        x = _uniform_ball(rng, m, N)
        y = _uniform_ball(rng, m, N)
        acc.append(np.linalg.norm(x - y, axis=1) ** (alpha - N))
        left -= m
    vals = np.concatenate(acc) * vol * vol
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals)))


def _gamma(x):
    from scipy.special import gamma

    return float(gamma(x))


def _uniform_ball(rng, m, N):
    g = rng.standard_normal((m, N))
    g /= np.linalg.norm(g, axis=1)[:, None]
    return g * rng.random(m)[:, None] ** (1.0 / N)


# ----------------------------------------------------------------------------
# kernel operators


@dataclass(eq=False)
class KernelMatrix:
    entries: np.ndarray
    diag_rule: str
    support: DiscreteSet = field(repr=False)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def apply(self, masses: np.ndarray) -> np.ndarray:
        """Potential ``u_i = sum_j K_ij q_j`` of the cell masses ``q``."""
        return self.entries @ masses


@dataclass(eq=False)
class GridKernel:
    """Toeplitz kernel on lattice cells, applied by FFT convolution."""

    support: DiscreteSet
    params: RieszParams
    near_field: int = 0

    def __post_init__(self):
        s = self.support
        if s.lattice is None:
            raise AssemblyError("GridKernel needs lattice indices")
        N = s.dimension
        h = s.cell_size
        lo = s.lattice.min(axis=0)
        self._idx = tuple((s.lattice - lo).T)
        self._box = tuple(int(m) for m in s.lattice.max(axis=0) - lo + 1)
        self._fft_shape = tuple(fft.next_fast_len(2 * m - 1, real=True) for m in self._box)
        offsets = []
        for L, m in zip(self._fft_shape, self._box):
            o = np.arange(L)
            offsets.append(np.where(o < L - (m - 1), o, o - L))
        grids = np.meshgrid(*offsets, indexing="ij")
        r = h * np.sqrt(sum(g.astype(float) ** 2 for g in grids))
        p = self.params.exponent
        with np.errstate(divide="ignore"):
            stencil = r ** (-p)
        rule = self.near_field
        for delta in itertools.product(range(-rule, rule + 1), repeat=N):
            if any(abs(d) >= m for d, m in zip(delta, self._box)):
                continue
            stencil[delta] = cell_pair_mean(delta, N, self.params.alpha) * h ** (-p)
        stencil[(0,) * N] = self_cell_constant(N, self.params.alpha) * h ** (-p)
        self._stencil_hat = fft.rfftn(stencil, self._fft_shape)
        self.diag_rule = "self-cell mean" if rule == 0 else f"cell-average within {rule} cells"
        self.diagonal_value = float(stencil[(0,) * N])

    @property
    def n(self) -> int:
        return self.support.n

    def apply(self, masses: np.ndarray) -> np.ndarray:
        box = np.zeros(self._box)
        box[self._idx] = masses
        out = fft.irfftn(fft.rfftn(box, self._fft_shape) * self._stencil_hat, self._fft_shape)
        return out[self._idx]


KernelOperator = Union[KernelMatrix, GridKernel]


def assemble_kernel_matrix(dset: DiscreteSet, params: RieszParams, near_field: int = 0) -> KernelMatrix:
    """Dense kernel matrix: exact kernel between centers, self-cell rule on the diagonal.

    With ``near_field > 0`` entries for nearby cells are replaced by cell-pair
    averages of the kernel: exact ones on lattices (offsets within
    ``near_field`` cells), sub-point quadrature for cells that carry
    ``subpoints`` (``anchors``, default centers, closer than ``near_field * cell_size``).
    """
    if dset.dimension != params.dimension:
        raise AssemblyError("set dimension does not match params")
    dset.check_distinct()
    X = dset.centers
    p = params.exponent
    K = np.empty((dset.n, dset.n))
    block = max(1, 4_000_000 // max(1, dset.n * dset.dimension))
    for start in range(0, dset.n, block):
        stop = min(dset.n, start + block)
        diff = X[start:stop, None, :] - X[None, :, :]
        K[start:stop] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(K, 1.0)
    K = K ** (-p)
    S = self_cell_constant(params.dimension, params.alpha)
    np.fill_diagonal(K, S * dset.cell_sizes() ** (-p))
    rule = "self-cell mean"
    if near_field > 0 and dset.lattice is None:
        if dset.subpoints is None:
            raise AssemblyError("near-field averaging needs lattice cells or subcell points")
        from scipy.spatial import cKDTree

        # neighbours are chosen on the anchor layout so the pair set does not move with mapped cells
        anchors = X if dset.anchors is None else dset.anchors
        pairs = cKDTree(anchors).query_pairs(near_field * dset.cell_size, output_type="ndarray")
        P, W = dset.subpoints, dset.subweights
        for chunk in np.array_split(pairs, max(1, len(pairs) // 20000)):
            if len(chunk) == 0:
                continue
            i, j = chunk[:, 0], chunk[:, 1]
            diff = P[i][:, :, None, :] - P[j][:, None, :, :]
            r = np.sqrt(np.einsum("mabk,mabk->mab", diff, diff))
            vals = np.einsum("ma,mab,mb->m", W[i], r ** (-p), W[j])
            K[i, j] = vals
            K[j, i] = vals
        rule = f"subcell average within {near_field} cell sizes"
    elif near_field > 0:
        h = dset.cell_size
        lat = dset.lattice
        for i in range(dset.n):
            off = lat - lat[i]
            close = np.nonzero(np.max(np.abs(off), axis=1) <= near_field)[0]
            for j in close:
                if j != i:
                    K[i, j] = cell_pair_mean(off[j], params.dimension, params.alpha) * h ** (-p)
        rule = f"cell-average within {near_field} cells"
    K = 0.5 * (K + K.T)
    return KernelMatrix(K, rule, dset)


def kernel_operator(dset: DiscreteSet, params: RieszParams, near_field: int = 0,
                    dense_limit: int = 1500) -> KernelOperator:
    """Pick the FFT operator for lattice sets above ``dense_limit`` cells, dense otherwise."""
    if dset.lattice is not None and dset.n > dense_limit:
        return GridKernel(dset, params, near_field)
    return assemble_kernel_matrix(dset, params, near_field)


def _check_support(mu: DiscreteMeasure, K: KernelOperator):
    if mu.support.n != K.n:
        raise ValueError(f"measure has {mu.support.n} cells, kernel has {K.n}")


def interaction_energy(mu: DiscreteMeasure, K: KernelOperator) -> float:
    _check_support(mu, K)
    q = mu.masses
    return float(np.dot(q, K.apply(q)))


def mutual_energy(mu: DiscreteMeasure, nu: DiscreteMeasure, K: Optional[KernelOperator] = None,
                  params: Optional[RieszParams] = None) -> float:
    """I_alpha(mu, nu).  Uses ``K`` when both live on its support, else a cross kernel."""
    if K is not None and mu.support is nu.support:
        _check_support(mu, K)
        return float(np.dot(mu.masses, K.apply(nu.masses)))
    if params is None:
        raise ValueError("params required for a cross kernel")
    X, Y = mu.support.centers, nu.support.centers
    if X.shape[1] != Y.shape[1]:
        raise ValueError("dimension mismatch")
    qx, qy = mu.masses, nu.masses
    total = 0.0
    block = max(1, 2_000_000 // max(1, len(Y)))
    for start in range(0, len(X), block):
        diff = X[start:start + block, None, :] - Y[None, :, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        if np.any(r == 0):
            raise SingularityError("measures share a cell center; use a common kernel")
        total += float(qx[start:start + block] @ (r ** (-params.exponent) @ qy))
    return total


def regularized_energy(mu: DiscreteMeasure, K: KernelOperator, eps: float) -> float:
    if eps < 0:
        raise ValueError("eps must be >= 0")
    return interaction_energy(mu, K) + eps * float(np.sum(mu.density ** 2 * mu.support.weights))


def rescale_energy(energy: float, t: float, params: RieszParams) -> float:
    """Energy of the set dilated by ``t``."""
    if t <= 0:
        raise ValueError("dilation factor must be positive")
    return t ** (-params.exponent) * energy
