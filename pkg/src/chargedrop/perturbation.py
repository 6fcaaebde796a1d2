"""Nearly spherical sets as images of the ball under T(x) = (1 + phi(x/|x|)) x.

Also: the exact expansion of |T(x) - T(y)|^2, the kernel remainder, the radial
kernel integral F(theta), energy differences between a shape and the ball,
and the local integrability exponent of the ball's equilibrium density.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate

from .equilibrium import (
    EquilibriumResult,
    SolverError,
    equilibrium_ball_closed_form,
    solve_equilibrium,
)
from .geometry import (
    Ball,
    FourierShape,
    ShapeError,
    barycenter,
    perimeter,
    polar_ball_cells,
    rasterize,
    spacing_for_cells,
    volume,
)
from .riesz import (
    DiscreteMeasure,
    DiscreteSet,
    RieszParams,
    assemble_kernel_matrix,
    interaction_energy,
)
from .spectral import hs_seminorm

SMALL_CAP = 0.1
NEAR_FIELD = 2  # near-field radius, in ring widths, for polar reference cells


def _phi_at(points: np.ndarray, shape) -> np.ndarray:
    pts = np.atleast_2d(points)
    return shape.phi(np.arctan2(pts[:, 1], pts[:, 0]))


def _check_small(shape, cap: float = SMALL_CAP):
    if shape.w1inf_norm() > cap + 1e-12:
        raise ShapeError(f"needs ||phi||_W1inf <= {cap}")


def tmap(x, shape) -> np.ndarray:
    """(1 + phi(x/|x|)) x; the origin is fixed."""
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x)
    if np.any(np.sum(pts * pts, axis=1) > 1.0 + 1e-12):
        raise ValueError("points must lie in the closed unit ball")
    out = (1.0 + _phi_at(pts, shape))[:, None] * pts
    return out.reshape(x.shape)


def _pair_terms(x, y, shape):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    px, py = _phi_at(x, shape), _phi_at(y, shape)
    diff = x - y
    d2 = np.sum(diff * diff, axis=1)
    if np.any(d2 == 0):
        raise ValueError("coincident points")
    return x, y, px, py, diff, d2


def _image_difference(x, y, px, py, diff):
    # T(x) - T(y) = (1 + (px+py)/2)(x - y) + (px - py)(x + y)/2, avoiding cancellation
    return (1.0 + 0.5 * (px + py))[:, None] * diff + (0.5 * (px - py))[:, None] * (x + y)


def psi(x, y, shape) -> np.ndarray:
    """Correction term with |T(x) - T(y)|^2 = |x - y|^2 (1 + phi_x + phi_y + phi_x phi_y + psi)."""
    x, y, px, py, diff, d2 = _pair_terms(x, y, shape)
    D = px - py
    sum_sq = np.sum(x * x, axis=1) + np.sum(y * y, axis=1)
    diff_sq = np.sum(diff * (x + y), axis=1)  # |x|^2 - |y|^2
    return 0.5 * sum_sq * D * D / d2 + (diff_sq / d2) * (1.0 + 0.5 * (px + py)) * D


def square_identity_residual(x, y, shape) -> np.ndarray:
    """|T(x) - T(y)|^2 - |x - y|^2 (1 + phi_x + phi_y + phi_x phi_y + psi)."""
    x, y, px, py, diff, d2 = _pair_terms(x, y, shape)
    img = _image_difference(x, y, px, py, diff)
    lhs = np.sum(img * img, axis=1)
    return lhs - d2 * (1.0 + px + py + px * py + psi(x, y, shape))


@dataclass(frozen=True)
class ExpansionSample:
    x: np.ndarray
    y: np.ndarray
    phi_x: np.ndarray
    phi_y: np.ndarray
    psi: np.ndarray
    zeta: np.ndarray
    main_term: np.ndarray
    lhs: np.ndarray


def taylor_kernel_terms(x, y, shape, params: RieszParams, check: bool = True) -> ExpansionSample:
    """Kernel ratio |T(x)-T(y)|^{-p} |x-y|^p against its first-order expansion, p = N - alpha."""
    if check:
        _check_small(shape)
    x, y, px, py, diff, d2 = _pair_terms(x, y, shape)
    p = params.exponent
    img = _image_difference(x, y, px, py, diff)
    lhs = (np.sum(img * img, axis=1) / d2) ** (-p / 2)
    ps = psi(x, y, shape)
    main = (1 - 0.5 * p * px) * (1 - 0.5 * p * py) - 0.5 * p * ps
    return ExpansionSample(x, y, px, py, ps, lhs - main, main, lhs)


def zeta_bound_constant(sample: ExpansionSample) -> float:
    """Smallest C with |zeta| <= C (phi_x^2 + phi_y^2 + psi^2) on the sample."""
    den = sample.phi_x ** 2 + sample.phi_y ** 2 + sample.psi ** 2
    ok = den > 0
    if not np.any(ok):
        return 0.0
    return float(np.max(np.abs(sample.zeta[ok]) / den[ok]))


def random_ball_pairs(rng: np.random.Generator, m: int, N: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    def draw():
        g = rng.standard_normal((m, N))
        g /= np.linalg.norm(g, axis=1)[:, None]
        return g * rng.random(m)[:, None] ** (1.0 / N)

    return draw(), draw()


def sphere_distance_ratio(x, y) -> np.ndarray:
    """(|x|+|y|)/|x-y| divided by (1/|x/|x| - y/|y|| + 1)."""
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    nx, ny = np.linalg.norm(x, axis=1), np.linalg.norm(y, axis=1)
    chord = np.linalg.norm(x / nx[:, None] - y / ny[:, None], axis=1)
    return (nx + ny) / np.linalg.norm(x - y, axis=1) / (1.0 / chord + 1.0)


# ----------------------------------------------------------------------------
# F(theta)


def _graded(a: float, b: float, toward_a: bool, first: float, ratio: float = 0.35) -> np.ndarray:
    length = b - a
    if length <= 0:
        return np.array([a, b])
    widths = [0.0]
    x = first
    while x < length:
        widths.append(x)
        x /= ratio
    widths.append(length)
    pts = np.asarray(widths)
    return a + pts if toward_a else b - pts[::-1]


def _panels(breaks: np.ndarray, order: int):
    x, w = leggauss(order)
    A, B = breaks[:-1, None], breaks[1:, None]
    return (0.5 * (B - A) * x + 0.5 * (A + B)).ravel(), (0.5 * (B - A) * w).ravel()


def f_theta(theta: float, params: RieszParams, order: int = 12) -> float:
    """F(theta) = int_0^1 int_0^1 r^{N-1} s^{N-1} (1-r)^{-a/2} (1-s)^{-a/2} (|r-s|^2 + r s theta^2)^{-(N-a)/2}.

    After r = 1 - u^2, s = 1 - v^2 the endpoint singularities become u^{1-a};
    the ridge along v = u (width ~ theta^2 / (u + theta)) is resolved by
    panels graded geometrically toward it, the outer variable by panels
    graded toward u = 0.  ``order`` is the Gauss order per panel.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    N, a = params.dimension, params.alpha
    if not 0 < a < 2:
        raise ValueError("F(theta) needs 0 < alpha < 2")
    p = N - a
    U, WU = _panels(_graded(0.0, 1.0, True, 1e-6), order)
    total = 0.0
    for u, wu in zip(U, WU):
        first = max(min(0.025 * theta * theta / (u + theta), 0.05), 1e-14)
        br = [_graded(0.0, u, False, first), _graded(u, 1.0, True, first)]
        if u > 2e-6:
            br.append(_graded(0.0, u, True, 1e-6))
        V, WV = _panels(np.unique(np.concatenate(br)), order)
        r, s = 1.0 - u * u, 1.0 - V * V
        f = 4.0 * u ** (1 - a) * V ** (1 - a) * r ** (N - 1) * s ** (N - 1)
        f = f * ((r - s) ** 2 + r * s * theta * theta) ** (-p / 2)
        total += wu * float(np.sum(WV * f))
    return total


# ----------------------------------------------------------------------------
# measures carried by T


def ball_cells(n_cells: int, dimension: int = 2) -> DiscreteSet:
    ball = Ball(1.0, np.zeros(dimension), dimension)
    return rasterize(ball, spacing_for_cells(ball, n_cells))


def ball_reference_cells(n_cells: int, params: RieszParams) -> DiscreteSet:
    """Rotation-symmetric cells of the unit disk used for shape-vs-ball differences."""
    if params.dimension != 2:
        raise ValueError("polar cells are planar")
    return polar_ball_cells(n_cells, params.alpha)


def mapped_set(shape, ball_set: DiscreteSet) -> DiscreteSet:
    """Cells of the ball carried by T.

    det DT = (1 + phi)^N because the gradient of the 0-homogeneous extension
    is tangential; cell volumes integrate it over the subcell rule when there
    is one, else use the center value.  Sizes scale with the volume ratio.
    """
    stretch = 1.0 + _phi_at(ball_set.centers, shape)
    N = ball_set.dimension
    if ball_set.subpoints is None:
        return DiscreteSet(stretch[:, None] * ball_set.centers, ball_set.weights * stretch ** N,
                           ball_set.cell_size, sizes=ball_set.cell_sizes() * stretch)
    n, q, _ = ball_set.subpoints.shape
    flat = ball_set.subpoints.reshape(-1, N)
    sub_stretch = (1.0 + _phi_at(flat, shape)).reshape(n, q)
    jac = ball_set.subweights * sub_stretch ** N
    area_ratio = jac.sum(axis=1)
    return DiscreteSet(stretch[:, None] * ball_set.centers, ball_set.weights * area_ratio,
                       ball_set.cell_size, sizes=ball_set.cell_sizes() * area_ratio ** (1.0 / N),
                       subpoints=sub_stretch[:, :, None] * ball_set.subpoints, subweights=jac,
                       anchors=ball_set.centers if ball_set.anchors is None else ball_set.anchors)


def pushforward_measure(shape, ball_measure: DiscreteMeasure) -> DiscreteMeasure:
    """T # g: the same cell masses placed on the mapped cells."""
    c = ball_measure.support.centers
    if np.any(np.sum(c * c, axis=1) > 1.0 + 1e-12):
        raise ValueError("measure must be supported in the unit ball")
    target = mapped_set(shape, ball_measure.support)
    return DiscreteMeasure(target, ball_measure.masses / target.weights)


def pullback_measure(ball_set: DiscreteSet, mapped_measure: DiscreteMeasure) -> DiscreteMeasure:
    """g = T^{-1} # mu on the ball cells."""
    return DiscreteMeasure(ball_set, mapped_measure.masses / ball_set.weights)


def ball_density_measure(ball_set: DiscreteSet, params: RieszParams) -> DiscreteMeasure:
    """The closed-form ball equilibrium density sampled at cell centers, rescaled to unit mass."""
    prof = equilibrium_ball_closed_form(1.0, params)
    dens = prof(ball_set.centers)
    return DiscreteMeasure(ball_set, dens / float(np.dot(dens, ball_set.weights)))


def _near(dset: DiscreteSet) -> int:
    return NEAR_FIELD if dset.subpoints is not None else 0


def tmap_energy(shape, g: DiscreteMeasure, params: RieszParams) -> float:
    """int int dg_x dg_y / |T(x) - T(y)|^{N - alpha} for g on the ball cells."""
    push = pushforward_measure(shape, g)
    return interaction_energy(push, assemble_kernel_matrix(push.support, params, _near(push.support)))


def linearization_gap(shape, params: RieszParams, g: DiscreteMeasure, check: bool = True) -> Tuple[float, float]:
    """(|I(T#g) - I((1 - p/2 phi) g)|, [phi]^2_{H^{(2-alpha)/2}}); the modified measure is not renormalized."""
    if check:
        _check_small(shape)
    p = params.exponent
    mapped = tmap_energy(shape, g, params)
    weight = 1.0 - 0.5 * p * _phi_at(g.support.centers, shape)
    modified = DiscreteMeasure(g.support, weight * g.density)
    lin = interaction_energy(modified, assemble_kernel_matrix(g.support, params, _near(g.support)))
    s = (2.0 - params.alpha) / 2.0
    return abs(mapped - lin), hs_seminorm(shape, s)


def linearization_mass_drift(shape, params: RieszParams, g: DiscreteMeasure) -> float:
    weight = 1.0 - 0.5 * params.exponent * _phi_at(g.support.centers, shape)
    return float(np.sum(weight * g.masses)) - 1.0


@dataclass(frozen=True)
class StabilityRecord:
    dI: float
    dP: float
    ratio: float
    energy_ball: float
    energy_shape: float


class BallSolveCache:
    """Ball equilibria keyed by (n_cells, alpha, eps); reused across shapes of a sweep."""

    def __init__(self):
        self._store = {}
        self._lock = threading.Lock()

    def get(self, n_cells: int, params: RieszParams, tol: float):
        key = (n_cells, params.dimension, params.alpha, params.eps, tol)
        with self._lock:
            if key not in self._store:
                cells = ball_reference_cells(n_cells, params)
                res = solve_equilibrium(cells, params, tol=tol, near_field=NEAR_FIELD)
                if not res.converged:
                    raise SolverError("ball equilibrium did not converge")
                self._store[key] = (cells, res)
            return self._store[key]


_DEFAULT_CACHE = BallSolveCache()


def shape_equilibrium(shape, params: RieszParams, n_cells: int = 1500, tol: float = 1e-11,
                      cache: Optional[BallSolveCache] = None) -> Tuple[EquilibriumResult, EquilibriumResult]:
    """Equilibria of the ball cells and of their image under T (same cells, same ordering)."""
    cache = cache or _DEFAULT_CACHE
    cells, ball_res = cache.get(n_cells, params, tol)
    target = mapped_set(shape, cells)
    res = solve_equilibrium(target, params, tol=tol, near_field=NEAR_FIELD,
                            initial=ball_res.density * cells.weights / target.weights)
    if not res.converged:
        raise SolverError("shape equilibrium did not converge")
    return ball_res, res


def stability_gap(shape, params: RieszParams, n_cells: int = 1500, tol: float = 1e-11,
                  cache: Optional[BallSolveCache] = None, check: bool = True) -> StabilityRecord:
    """dI = I(B) - I(E) from solves on the ball cells and their T-images; dP = P(E) - P(B)."""
    if check:
        if not isinstance(shape, FourierShape) or shape.radius != 1.0:
            raise ShapeError("stability gap needs a unit-radius Fourier shape")
        _check_small(shape)
        if abs(volume(shape) - np.pi) > 1e-9 or np.linalg.norm(barycenter(shape)) > 1e-8:
            raise ShapeError("shape must be volume-normalized and centered")
    ball_res, res = shape_equilibrium(shape, params, n_cells, tol, cache)
    dI = ball_res.energy - res.energy
    dP = perimeter(shape) - 2.0 * np.pi
    ratio = dI / dP if dP > 0 else float("nan")
    return StabilityRecord(dI, dP, ratio, ball_res.energy, res.energy)


# ----------------------------------------------------------------------------
# integrability of the ball density near the boundary


def local_lp_mass(r: float, params: RieszParams) -> float:
    """(int_{B_r(x) cap B} mu_B^{2N/(N+1)})^{(N+1)/N} for x on the unit circle, N = 2."""
    if params.dimension != 2:
        raise ValueError("implemented for N = 2")
    if not 0 < r < 1:
        raise ValueError("need 0 < r < 1")
    N, a = 2, params.alpha
    q = 2 * N / (N + 1)
    c = equilibrium_ball_closed_form(1.0, params).constant

    def integrand(rho):
        cos_t = np.clip((rho * rho + 1 - r * r) / (2 * rho), -1.0, 1.0)
        return 2.0 * np.arccos(cos_t) * rho * c ** q * (1 + rho) ** (-a * q / 2)

    # (1 - rho^2)^{-a q/2} = (1 - rho)^{-a q/2} (1 + rho)^{-a q/2}; the first factor goes to the weight
    val, _ = integrate.quad(integrand, 1.0 - r, 1.0, weight="alg", wvar=(0.0, -a * q / 2),
                            epsabs=0, epsrel=1e-10, limit=200)
    return val ** ((N + 1) / N)


def mu_ball_integrability_exponent(params: RieszParams, x_on_boundary=(1.0, 0.0), r_grid=None) -> float:
    """Least-squares slope of log M(r) against log r; by symmetry independent of the boundary point."""
    if params.dimension != 2 or not 0 < params.alpha < 2:
        raise ValueError("needs N = 2 and 0 < alpha < 2")
    if abs(np.linalg.norm(x_on_boundary) - 1.0) > 1e-12:
        raise ValueError("x must lie on the unit circle")
    r_grid = np.logspace(-3, -1, 12) if r_grid is None else np.asarray(r_grid, dtype=float)
    if len(r_grid) < 2 or np.ptp(np.log(r_grid)) == 0:
        raise ValueError("degenerate fit")
    M = np.array([local_lp_mass(r, params) for r in r_grid])
    return float(np.polyfit(np.log(r_grid), np.log(M), 1)[0])
