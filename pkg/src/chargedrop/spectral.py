"""Fractional Sobolev seminorms of boundary functions on the unit circle.

[phi]^2_{H^s} = int int (phi(x) - phi(y))^2 / |x - y|^{1 + 2s}, x, y on the circle.
"""
from __future__ import annotations

import csv
import threading
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from scipy import special

from .geometry import BumpShape, FourierShape, ShapeError, barycenter, perimeter, volume

DEFAULT_NODES = 2048


def _check_s(s: float) -> None:
    if not 0.0 < s < 1.0:
        raise ValueError(f"s must lie in (0, 1), got {s}")


def spectral_derivative(values: np.ndarray) -> np.ndarray:
    n = len(values)
    k = np.fft.rfftfreq(n, 1.0 / n)
    if n % 2 == 0:
        k[-1] = 0.0
    return np.fft.irfft(1j * k * np.fft.rfft(values), n)


def hs_seminorm_direct(values, s: float, derivative=None) -> float:
    """Double trapezoid sum over equispaced samples on [0, 2 pi).

    The diagonal is dropped; for the near-diagonal the integrand behaves like
    phi'(x)^2 |t|^{1 - 2s}, and the punctured trapezoid misses
    -2 zeta(2s - 1) h^{2 - 2s} phi'(x)^2 per node, which is added back.
    """
    _check_s(s)
    f = np.asarray(values, dtype=float)
    n = len(f)
    if n < 512:
        raise ValueError("need at least 512 samples")
    h = 2 * np.pi / n
    dphi = spectral_derivative(f) if derivative is None else np.asarray(derivative, dtype=float)
    # sum_i (f_i - f_{i+m})^2 = 2 sum f^2 - 2 autocorrelation(m)
    F = np.fft.rfft(f)
    auto = np.fft.irfft(np.abs(F) ** 2, n)
    m = np.arange(1, n)
    diffs = 2.0 * auto[0] - 2.0 * auto[1:]
    chord = 2.0 * np.sin(0.5 * h * m)
    total = h * h * float(np.sum(np.maximum(diffs, 0.0) * chord ** (-(1.0 + 2.0 * s))))
    beta = 1.0 - 2.0 * s
    total += -2.0 * special.zeta(-beta) * h ** (2.0 + beta) * float(np.sum(dphi ** 2))
    return total


def sample_phi(shape, nodes: int = DEFAULT_NODES) -> Tuple[np.ndarray, np.ndarray]:
    th = 2 * np.pi * np.arange(nodes) / nodes
    return shape.phi(th), shape.dphi(th)


@dataclass(frozen=True)
class SeminormTable:
    s: float
    multipliers: np.ndarray
    provenance: str

    @property
    def K(self) -> int:
        return len(self.multipliers) - 1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["k", "m_k"])
            for k, m in enumerate(self.multipliers):
                out.writerow([k, repr(float(m))])


_TABLES: Dict[Tuple[int, float, int], SeminormTable] = {}
_TABLE_LOCK = threading.Lock()


def build_multiplier_table(K: int, s: float, nodes: int = DEFAULT_NODES) -> SeminormTable:
    """m_k(s) = [cos(k theta)]^2_{H^s} from the direct evaluator, cached per (K, s)."""
    _check_s(s)
    key = (int(K), float(s), int(nodes))
    with _TABLE_LOCK:
        if key in _TABLES:
            return _TABLES[key]
    th = 2 * np.pi * np.arange(nodes) / nodes
    m = np.zeros(K + 1)
    for k in range(1, K + 1):
        m[k] = hs_seminorm_direct(np.cos(k * th), s, -k * np.sin(k * th))
    table = SeminormTable(float(s), m, f"direct double trapezoid, {nodes} nodes")
    with _TABLE_LOCK:
        return _TABLES.setdefault(key, table)


def hs_seminorm_fourier(shape: FourierShape, table: SeminormTable, s: float | None = None) -> float:
    if s is not None and abs(s - table.s) > 1e-15:
        raise ValueError("table built for a different s")
    if shape.K > table.K:
        raise ValueError(f"table has modes up to {table.K}, shape needs {shape.K}")
    m = table.multipliers[1:shape.K + 1]
    return float(np.sum(m * (shape.a ** 2 + shape.b ** 2)))


def hs_seminorm(shape, s: float, nodes: int = DEFAULT_NODES) -> float:
    """Seminorm of a shape's phi: diagonal form for Fourier shapes, direct otherwise."""
    if isinstance(shape, FourierShape):
        return hs_seminorm_fourier(shape, build_multiplier_table(max(shape.K, 1), s))
    vals, der = sample_phi(shape, nodes)
    return hs_seminorm_direct(vals, s, der)


def dirichlet_energy(shape) -> float:
    """int phi'^2 d theta."""
    if isinstance(shape, FourierShape):
        k = np.arange(1, shape.K + 1)
        return float(np.pi * np.sum(k * k * (shape.a ** 2 + shape.b ** 2)))
    th, w = shape.quadrature()
    return float(np.sum(w * shape.dphi(th) ** 2))


@dataclass(frozen=True)
class EmbeddingChain:
    l2_mean_free: float
    hs: float
    hs_prime_scaled: float
    dirichlet: float
    C1: float
    C2: float

    @property
    def middle_holds(self) -> bool:
        return self.hs <= self.hs_prime_scaled * (1 + 1e-10) + 1e-300


def embedding_chain_report(shape, s: float, s_prime: float) -> EmbeddingChain:
    """The four quantities of the chain L2 <= H^s <= 2^{2(s'-s)} H^{s'} <= H^1 for phi."""
    if not 0 < s < s_prime < 1:
        raise ValueError("need 0 < s < s' < 1")
    if isinstance(shape, FourierShape):
        l2 = float(np.pi * np.sum(shape.a ** 2 + shape.b ** 2))
    else:
        th, w = shape.quadrature()
        ph = shape.phi(th)
        l2 = float(np.sum(w * (ph - np.sum(w * ph) / (2 * np.pi)) ** 2))
    hs = hs_seminorm(shape, s)
    hsp = hs_seminorm(shape, s_prime)
    dir_ = dirichlet_energy(shape)
    scaled = 2.0 ** (2 * (s_prime - s)) * hsp
    C1 = l2 / hs if hs > 0 else 0.0
    C2 = hsp / dir_ if dir_ > 0 else 0.0
    return EmbeddingChain(l2, hs, scaled, dir_, C1, C2)


def fuglede_deficit(shape, tol: float = 1e-8) -> Tuple[float, float]:
    """(P(E) - P(B), int |grad phi|^2) for a normalized, centered shape."""
    if abs(volume(shape) - np.pi) > tol:
        raise ShapeError("shape must be volume-normalized")
    if np.linalg.norm(barycenter(shape)) > tol:
        raise ShapeError("shape must have barycenter at the origin")
    if shape.w1inf_norm() > 0.1 + 1e-12:
        raise ShapeError("deficit check needs ||phi||_W1inf <= 0.1")
    return perimeter(shape) - 2 * np.pi, dirichlet_energy(shape)


def mean_phi_check(shape, tol: float = 1e-8) -> Tuple[float, float]:
    """(|int phi|, int phi^2) on the circle; at volume pi the first is half the second."""
    if abs(volume(shape) - np.pi) > tol:
        raise ShapeError("shape must be volume-normalized")
    th, w = shape.quadrature()
    ph = shape.phi(th)
    return abs(float(np.sum(w * ph))), float(np.sum(w * ph * ph))
