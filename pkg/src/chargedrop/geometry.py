"""Shapes, their exact geometric functionals, and rasterization.

Planar shapes are star-shaped about ``center`` with boundary
``center + r(theta) (cos theta, sin theta)``, ``r = radius * (1 + phi)``.
Boundary integrals use composite Gauss-Legendre in theta.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import List, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.spatial.distance import pdist

from .riesz import DiscreteSet, box_self_mean, disk_self_mean, equivalent_size

W1INF_CAP = 0.5
CAP_SAMPLES = 4096
GAUSS_PER_PANEL = 8


class ShapeError(ValueError):
    pass


class ResolutionError(ValueError):
    pass


def _panel_rule(breaks: np.ndarray, order: int = GAUSS_PER_PANEL):
    x, w = leggauss(order)
    a, b = breaks[:-1, None], breaks[1:, None]
    nodes = 0.5 * (b - a) * x + 0.5 * (b + a)
    weights = 0.5 * (b - a) * w
    return nodes.ravel(), weights.ravel()


class StarShape:
    """Planar star-shaped set; subclasses provide ``phi`` and ``dphi``."""

    dimension = 2
    center: np.ndarray
    radius: float

    def phi(self, theta) -> np.ndarray:
        raise NotImplementedError

    def dphi(self, theta) -> np.ndarray:
        raise NotImplementedError

    def breakpoints(self) -> np.ndarray:
        return np.array([])

    def node_count(self) -> int:
        return 512

    def quadrature(self, nodes: int | None = None):
        n = nodes or self.node_count()
        panels = max(1, int(np.ceil(n / GAUSS_PER_PANEL)))
        br = np.linspace(0.0, 2 * np.pi, panels + 1)
        extra = np.mod(self.breakpoints(), 2 * np.pi)
        br = np.unique(np.concatenate([br, extra]))
        return _panel_rule(br)

    def radial(self, theta) -> np.ndarray:
        return self.radius * (1.0 + self.phi(theta))

    def boundary(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        r = self.radial(theta)
        return self.center + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)

    def contains(self, x) -> np.ndarray:
        d = np.atleast_2d(x) - self.center
        rho = np.hypot(d[:, 0], d[:, 1])
        return rho < self.radial(np.arctan2(d[:, 1], d[:, 0]))

    def w1inf_norm(self) -> float:
        th = np.linspace(0, 2 * np.pi, CAP_SAMPLES, endpoint=False)
        th = np.unique(np.concatenate([th, np.mod(self.breakpoints(), 2 * np.pi)]))
        return float(np.max(np.abs(self.phi(th))) + np.max(np.abs(self.dphi(th))))

    def _check_cap(self):
        if self.w1inf_norm() > W1INF_CAP:
            raise ShapeError(f"||phi||_W1inf = {self.w1inf_norm():.3g} exceeds the cap {W1INF_CAP}")


@dataclass(frozen=True, eq=False)
class Ball(StarShape):
    radius: float = 1.0
    center: np.ndarray = field(default_factory=lambda: np.zeros(2))
    dimension: int = 2

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        if c.shape == (2,) and self.dimension != 2:
            c = np.zeros(self.dimension)
        object.__setattr__(self, "center", c)
        if self.radius <= 0:
            raise ShapeError("radius must be positive")
        if c.shape != (self.dimension,):
            raise ShapeError("center dimension mismatch")

    def phi(self, theta):
        return np.zeros_like(np.asarray(theta, dtype=float))

    dphi = phi

    def contains(self, x):
        d = np.atleast_2d(x) - self.center
        return np.sum(d * d, axis=1) < self.radius ** 2


@dataclass(frozen=True, eq=False)
class FourierShape(StarShape):
    """phi = a0 + sum_k a_k cos(k theta) + b_k sin(k theta), k = 1..K."""

    a0: float = 0.0
    a: np.ndarray = field(default_factory=lambda: np.zeros(0))
    b: np.ndarray = field(default_factory=lambda: np.zeros(0))
    center: np.ndarray = field(default_factory=lambda: np.zeros(2))
    radius: float = 1.0
    check: bool = True

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(-1)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        K = max(len(a), len(b))
        a = np.pad(a, (0, K - len(a)))
        b = np.pad(b, (0, K - len(b)))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(2))
        if self.check:
            self._check_cap()

    @property
    def K(self) -> int:
        return len(self.a)

    def node_count(self) -> int:
        return max(512, 16 * self.K)

    def _modes(self, theta):
        theta = np.asarray(theta, dtype=float)
        k = np.arange(1, self.K + 1)
        return theta[..., None] * k, k

    def phi(self, theta):
        kt, _ = self._modes(theta)
        return self.a0 + np.cos(kt) @ self.a + np.sin(kt) @ self.b

    def dphi(self, theta):
        kt, k = self._modes(theta)
        return np.sin(kt) @ (-k * self.a) + np.cos(kt) @ (k * self.b)

    def coefficients(self) -> np.ndarray:
        return np.concatenate([[self.a0], self.a, self.b])

    def with_coefficients(self, vec, check: bool = True) -> "FourierShape":
        vec = np.asarray(vec, dtype=float)
        K = (len(vec) - 1) // 2
        return FourierShape(float(vec[0]), vec[1:K + 1], vec[K + 1:], self.center, self.radius, check)

    def to_dict(self) -> dict:
        return {"dimension": 2, "K": self.K, "a0": self.a0, "a": self.a.tolist(), "b": self.b.tolist(),
                "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class BumpShape(StarShape):
    """Ball of radius ``radius`` with a localized radial bump.

    phi(theta) = height * (1 - t^2)^3 for |t| < 1, t = wrap(theta - theta0) / half_width.
    The profile is C^2, so ``E symmetric-difference ball`` lies in the sector
    |theta - theta0| < half_width.  Negative height gives an inward dimple.
    """

    height: float
    theta0: float
    half_width: float
    radius: float = 1.0
    center: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(2))
        if not 0 < self.half_width <= np.pi:
            raise ShapeError("half_width must lie in (0, pi]")
        self._check_cap()

    def _t(self, theta):
        d = np.mod(np.asarray(theta, dtype=float) - self.theta0 + np.pi, 2 * np.pi) - np.pi
        return d / self.half_width

    def phi(self, theta):
        t = self._t(theta)
        return np.where(np.abs(t) < 1, self.height * (1 - t * t) ** 3, 0.0)

    def dphi(self, theta):
        t = self._t(theta)
        return np.where(np.abs(t) < 1, -6 * self.height * t * (1 - t * t) ** 2 / self.half_width, 0.0)

    def breakpoints(self):
        return np.array([self.theta0 - self.half_width, self.theta0, self.theta0 + self.half_width])

    def node_count(self) -> int:
        return 2048


@dataclass(frozen=True, eq=False)
class Square:
    """Axis-aligned square (cube for N = 3) with the given side."""

    side: float = 2.0
    center: np.ndarray = field(default_factory=lambda: np.zeros(2))
    dimension: int = 2

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        if c.shape == (2,) and self.dimension != 2:
            c = np.zeros(self.dimension)
        object.__setattr__(self, "center", c)
        if self.side <= 0:
            raise ShapeError("side must be positive")

    def contains(self, x):
        d = np.atleast_2d(x) - self.center
        return np.max(np.abs(d), axis=1) < 0.5 * self.side


Shape = Union[Ball, FourierShape, BumpShape, Square]


@dataclass(frozen=True, eq=False)
class GeneralizedSet:
    """Finite list of components, mutually at infinite distance."""

    components: Tuple[StarShape, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ShapeError("generalized set needs at least one component")
        object.__setattr__(self, "components", comps)

    @property
    def total_volume(self) -> float:
        return sum(volume(c) for c in self.components)

    def __len__(self):
        return len(self.components)


def unit_ball_volume(N: int) -> float:
    from scipy.special import gamma

    return float(np.pi ** (N / 2) / gamma(N / 2 + 1))


# ----------------------------------------------------------------------------
# functionals


def perimeter(shape, nodes: int | None = None) -> float:
    if isinstance(shape, GeneralizedSet):
        return sum(perimeter(c, nodes) for c in shape.components)
    if isinstance(shape, Ball):
        N = shape.dimension
        return N * unit_ball_volume(N) * shape.radius ** (N - 1)
    if isinstance(shape, Square):
        return 2 * shape.dimension * shape.side ** (shape.dimension - 1)
    if nodes is not None and isinstance(shape, FourierShape) and nodes < 2 * shape.K + 1:
        raise ResolutionError(f"{nodes} nodes cannot resolve {shape.K} modes")
    th, w = shape.quadrature(nodes)
    r = 1.0 + shape.phi(th)
    return shape.radius * float(np.sum(w * np.sqrt(r * r + shape.dphi(th) ** 2)))


def perimeter_gradient(shape: FourierShape) -> np.ndarray:
    """Derivative of the perimeter with respect to (a0, a_1..a_K, b_1..b_K)."""
    th, w = shape.quadrature()
    r = 1.0 + shape.phi(th)
    dp = shape.dphi(th)
    L = np.sqrt(r * r + dp * dp)
    k = np.arange(1, shape.K + 1)
    kt = th[:, None] * k
    ga0 = np.sum(w * r / L)
    ga = (w * r / L) @ np.cos(kt) + (w * dp / L) @ (-k * np.sin(kt))
    gb = (w * r / L) @ np.sin(kt) + (w * dp / L) @ (k * np.cos(kt))
    return shape.radius * np.concatenate([[ga0], ga, gb])


def volume(shape) -> float:
    if isinstance(shape, GeneralizedSet):
        return shape.total_volume
    if isinstance(shape, Ball):
        return unit_ball_volume(shape.dimension) * shape.radius ** shape.dimension
    if isinstance(shape, Square):
        return shape.side ** shape.dimension
    th, w = shape.quadrature()
    return 0.5 * shape.radius ** 2 * float(np.sum(w * (1.0 + shape.phi(th)) ** 2))


def barycenter(shape) -> np.ndarray:
    if isinstance(shape, (Ball, Square)):
        return shape.center.copy()
    th, w = shape.quadrature()
    r3 = (shape.radius * (1.0 + shape.phi(th))) ** 3
    m = np.array([np.sum(w * r3 * np.cos(th)), np.sum(w * r3 * np.sin(th))]) / 3.0
    return shape.center + m / volume(shape)


def dilate(shape, t: float):
    if t <= 0:
        raise ShapeError("dilation factor must be positive")
    if isinstance(shape, Square):
        return replace(shape, side=shape.side * t, center=shape.center * t)
    return replace(shape, radius=shape.radius * t, center=shape.center * t)


def normalize_volume(shape):
    """Dilate about the center so the volume is omega_N; folded into the coefficients for Fourier shapes."""
    if isinstance(shape, GeneralizedSet):
        raise ShapeError("normalize components individually")
    N = shape.dimension
    s = (unit_ball_volume(N) / volume(shape)) ** (1.0 / N)
    if isinstance(shape, FourierShape):
        s = s * shape.radius
        return FourierShape(s * (1.0 + shape.a0) - 1.0, s * shape.a, s * shape.b, shape.center, 1.0, shape.check)
    if isinstance(shape, Square):
        return replace(shape, side=shape.side * s)
    return replace(shape, radius=shape.radius * s)


def _reexpand(shape: FourierShape, shift: np.ndarray, nodes: int = 512) -> FourierShape:
    """Coefficients of the same boundary seen as a radial graph about ``center + shift``."""
    target = 2 * np.pi * np.arange(nodes) / nodes
    th = target.copy()
    # find theta with arg(P(theta) - shift) = target by Newton
    for _ in range(50):
        r = shape.radius * (1 + shape.phi(th))
        dr = shape.radius * shape.dphi(th)
        px, py = r * np.cos(th) - shift[0], r * np.sin(th) - shift[1]
        ang = np.arctan2(py, px)
        f = np.mod(ang - target + np.pi, 2 * np.pi) - np.pi
        dx = dr * np.cos(th) - r * np.sin(th)
        dy = dr * np.sin(th) + r * np.cos(th)
        dang = (px * dy - py * dx) / (px * px + py * py)
        step = f / dang
        th = th - step
        if np.max(np.abs(step)) < 1e-15:
            break
    r = shape.radius * (1 + shape.phi(th))
    rho = np.hypot(r * np.cos(th) - shift[0], r * np.sin(th) - shift[1]) / shape.radius - 1.0
    k = np.arange(1, shape.K + 1)
    a0 = float(np.mean(rho))
    a = 2.0 / nodes * (np.cos(target[:, None] * k).T @ rho)
    b = 2.0 / nodes * (np.sin(target[:, None] * k).T @ rho)
    return FourierShape(a0, a, b, shape.center + shift, shape.radius, shape.check)


def recenter_barycenter(shape, tol: float = 1e-10, max_steps: int = 50):
    """Re-express the shape about its barycenter and move that point to the origin."""
    if isinstance(shape, (Ball, Square)):
        return replace(shape, center=np.zeros(shape.dimension))
    if not isinstance(shape, FourierShape):
        raise ShapeError("recentering supports Fourier shapes")
    base = FourierShape(shape.a0, shape.a, shape.b, np.zeros(2), shape.radius, False)
    cur = base
    offset = np.zeros(2)
    for _ in range(max_steps):
        m = barycenter(cur) - cur.center
        if np.linalg.norm(m) <= tol:
            return FourierShape(cur.a0, cur.a, cur.b, np.zeros(2), cur.radius, shape.check)
        # moving the expansion point by m moves the relative barycenter by -m (Jacobian -I)
        offset = offset + m
        cur = _reexpand(base, offset)
    raise ShapeError("barycenter recentering did not converge")


def diameter(shape, samples: int = 512) -> float:
    if isinstance(shape, GeneralizedSet):
        return max(diameter(c, samples) for c in shape.components)
    if isinstance(shape, Ball):
        return 2.0 * shape.radius
    if isinstance(shape, Square):
        return shape.side * np.sqrt(shape.dimension)
    th = 2 * np.pi * np.arange(samples) / samples
    return float(np.max(pdist(shape.boundary(th))))


def deviation(shape) -> float:
    """max |r(theta)/radius - 1| over the boundary (0 for a ball)."""
    if isinstance(shape, Ball):
        return 0.0
    th = np.linspace(0, 2 * np.pi, CAP_SAMPLES, endpoint=False)
    return float(np.max(np.abs(shape.phi(th))))


# ----------------------------------------------------------------------------
# rasterization


def _bounding_radius(shape) -> float:
    if isinstance(shape, Ball):
        return shape.radius
    if isinstance(shape, Square):
        return 0.5 * shape.side * np.sqrt(shape.dimension)
    th = np.linspace(0, 2 * np.pi, CAP_SAMPLES, endpoint=False)
    return float(np.max(shape.radial(th)))


def rasterize(shape, h: float, min_cells: int = 100) -> DiscreteSet:
    """Cells of the global lattice ``x = h (i + 1/2)`` whose centers lie inside the shape."""
    return rasterize_union([shape], h, min_cells)


def rasterize_union(shapes: Sequence, h: float, min_cells: int = 100) -> DiscreteSet:
    if h <= 0:
        raise ResolutionError("h must be positive")
    N = shapes[0].dimension
    idx_all = []
    for shape in shapes:
        if shape.dimension != N:
            raise ShapeError("mixed dimensions")
        R = _bounding_radius(shape) * (1 + 1e-12)
        lo = np.floor((shape.center - R) / h - 0.5).astype(int)
        hi = np.ceil((shape.center + R) / h - 0.5).astype(int)
        axes = [np.arange(l, u + 1) for l, u in zip(lo, hi)]
        grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        inside = shape.contains(h * (grid + 0.5))
        idx_all.append(grid[inside])
    idx = np.concatenate(idx_all)
    idx = np.unique(idx, axis=0)
    if len(idx) < min_cells:
        raise ResolutionError(f"only {len(idx)} cells at h = {h}; need at least {min_cells}")
    return DiscreteSet(h * (idx + 0.5), np.full(len(idx), h ** N), h, lattice=idx)


def polar_ball_cells(n_cells: int, alpha: float, symmetry: int = 16, sub_order: int = 4) -> DiscreteSet:
    """Unit disk cut into rings of equal width, each ring into a multiple of ``symmetry`` sectors.

    The cell layout is invariant under rotation by 2 pi / symmetry, so sums of
    cos(k theta) over the cells vanish for 0 < k < symmetry.  The innermost
    cell is a disk.  Self-terms come from the exact pair mean of the disk or of
    the (radial x arc) rectangle, passed on as equivalent square sizes.  Each
    cell also carries a ``sub_order``^2 Gauss rule in (r, theta) for near-field
    averaging; the central disk gets the same number of equispaced angles at
    radius dr / sqrt(2), which keeps its rule rotation-symmetric.
    """
    J = max(2, int(round(np.sqrt(n_cells / np.pi))))
    dr = 1.0 / J
    xg, wg = leggauss(sub_order)
    xg, wg = 0.5 * xg, 0.5 * wg
    rows = []

    def sector(r_lo, r_hi, t_lo, t_hi):
        rr = 0.5 * (r_lo + r_hi) + (r_hi - r_lo) * xg
        tt = 0.5 * (t_lo + t_hi) + (t_hi - t_lo) * xg
        R, T = np.meshgrid(rr, tt, indexing="ij")
        Wt = np.outer(wg, wg) * R
        return np.stack([R * np.cos(T), R * np.sin(T)], axis=-1).reshape(-1, 2), Wt.ravel()

    q = sub_order * sub_order
    ang = 2 * np.pi * np.arange(q) / q
    pts = dr / np.sqrt(2) * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    wts = np.full(q, 1.0 / q)
    rows.append((np.zeros(2), np.pi * dr * dr, disk_self_mean(alpha) * dr ** (alpha - 2), pts, wts))
    for j in range(1, J):
        r = (j + 0.5) * dr
        M = symmetry * max(1, int(round(2 * np.pi * r / (symmetry * dr))))
        area = np.pi * ((r + dr / 2) ** 2 - (r - dr / 2) ** 2) / M
        self_term = box_self_mean((dr, 2 * np.pi * r / M), alpha)
        for m in range(M):
            t0, t1 = 2 * np.pi * m / M, 2 * np.pi * (m + 1) / M
            tm = 0.5 * (t0 + t1)
            pts, wts = sector(r - dr / 2, r + dr / 2, t0, t1)
            rows.append((np.array([r * np.cos(tm), r * np.sin(tm)]), area, self_term, pts, wts))
    centers = np.array([row[0] for row in rows])
    weights = np.array([row[1] for row in rows])
    sizes = equivalent_size(np.array([row[2] for row in rows]), 2, alpha)
    return DiscreteSet(centers, weights, dr, sizes=sizes,
                       subpoints=np.array([row[3] for row in rows]), subweights=np.array([row[4] for row in rows]))


def spacing_for_cells(shape, n_cells: int) -> float:
    """Grid spacing that puts about ``n_cells`` cells in the shape."""
    return (volume(shape) / n_cells) ** (1.0 / shape.dimension)


# ----------------------------------------------------------------------------
# sampling and I/O


def random_shape(rng: np.random.Generator, K: int, amplitude: float, normalize: bool = True) -> FourierShape:
    """Gaussian coefficients with std k^-2 (modes 2..K), rescaled to ||phi||_W1inf = amplitude.

    Mode 1 is left out because it is a translation to first order and recentering removes it.
    """
    if K < 2:
        raise ShapeError("need K >= 2")
    k = np.arange(1, K + 1, dtype=float)
    sd = np.where(k >= 2, k ** -2.0, 0.0)
    a = rng.standard_normal(K) * sd
    b = rng.standard_normal(K) * sd
    raw = FourierShape(0.0, a, b, check=False)
    s = amplitude / raw.w1inf_norm()
    shape = FourierShape(0.0, s * a, s * b)
    if normalize:
        shape = recenter_barycenter(normalize_volume(shape))
        shape = normalize_volume(shape)
    return shape


def shape_to_dict(shape) -> dict:
    if isinstance(shape, GeneralizedSet):
        return {"components": [shape_to_dict(c) for c in shape.components]}
    if isinstance(shape, Ball):
        return {"type": "ball", "dimension": shape.dimension, "radius": shape.radius,
                "center": shape.center.tolist()}
    if isinstance(shape, Square):
        return {"type": "square", "dimension": shape.dimension, "side": shape.side,
                "center": shape.center.tolist()}
    if isinstance(shape, FourierShape):
        return shape.to_dict()
    if isinstance(shape, BumpShape):
        return {"type": "bump", "dimension": 2, "height": shape.height, "theta0": shape.theta0,
                "half_width": shape.half_width, "radius": shape.radius, "center": shape.center.tolist()}
    raise ShapeError(f"cannot serialize {type(shape).__name__}")


def shape_from_dict(d) -> Union[Shape, GeneralizedSet]:
    if isinstance(d, list):
        return GeneralizedSet(tuple(shape_from_dict(c) for c in d))
    if "components" in d:
        return GeneralizedSet(tuple(shape_from_dict(c) for c in d["components"]))
    kind = d.get("type", "fourier")
    if kind == "ball":
        N = int(d.get("dimension", 2))
        return Ball(float(d.get("radius", 1.0)), np.asarray(d.get("center", np.zeros(N)), float), N)
    if kind == "square":
        N = int(d.get("dimension", 2))
        return Square(float(d.get("side", 2.0)), np.asarray(d.get("center", np.zeros(N)), float), N)
    if kind == "bump":
        return BumpShape(float(d["height"]), float(d["theta0"]), float(d["half_width"]),
                         float(d.get("radius", 1.0)), np.asarray(d.get("center", [0, 0]), float))
    if int(d.get("dimension", 2)) != 2:
        raise ShapeError("Fourier shapes are planar")
    a, b = d.get("a", []), d.get("b", [])
    if "K" in d and not (len(a) == len(b) == int(d["K"])):
        raise ShapeError("coefficient lists do not match K")
    return FourierShape(float(d.get("a0", 0.0)), a, b, np.asarray(d.get("center", [0, 0]), float),
                        float(d.get("radius", 1.0)))


def load_shape(path):
    with open(path) as fh:
        return shape_from_dict(json.load(fh))


def save_shape(shape, path) -> None:
    with open(path, "w") as fh:
        json.dump(shape_to_dict(shape), fh, indent=2)
