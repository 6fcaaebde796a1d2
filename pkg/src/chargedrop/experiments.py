"""Scenario runners: equilibrium validation, stability scans, nonexistence crossover, F(theta), descent."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .equilibrium import (
    SolverError,
    ball_energy,
    equilibrium_ball_closed_form,
    optimal_charge_split,
    solve_equilibrium,
)
from .functional import default_lambda
from .geometry import (
    Ball,
    FourierShape,
    ResolutionError,
    perimeter,
    perimeter_gradient,
    random_shape,
    rasterize,
    recenter_barycenter,
    normalize_volume,
    unit_ball_volume,
    volume,
)
from .perturbation import BallSolveCache, f_theta, shape_equilibrium, stability_gap
from .riesz import RieszParams, rescale_energy

EXPERIMENTS = ("equilibrium", "stability-scan", "nonexistence-scan", "ftheta", "descent")
EMPIRICAL_NOTE = "empirical threshold for the sampled family, not a proven constant"


class ConfigError(ValueError):
    pass


def package_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


@dataclass
class ExperimentConfig:
    experiment: str
    alpha: float = 1.0
    dimension: int = 2
    eps: float = 0.0
    Q_grid: List[float] = field(default_factory=lambda: [0.1, 1.0])
    resolution: float = 0.05
    sample_count: int = 10
    seed: int = 0
    output_path: str = "out"
    kmax: int = 3
    amplitude: float = 0.05
    amplitude_max: Optional[float] = None
    n_cells: int = 1500
    steps: int = 200
    theta_grid: Optional[List[float]] = None
    n_max: int = 10 ** 9
    workers: int = 1

    def __post_init__(self):
        self.validate()

    @property
    def params(self) -> RieszParams:
        return RieszParams(self.dimension, self.alpha, self.eps)

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if not 0 < self.alpha < 2 or self.dimension < 1 or self.eps < 0:
            raise ConfigError("need 0 < alpha < 2, dimension >= 1, eps >= 0")
        q = np.asarray(self.Q_grid, dtype=float)
        if q.size == 0 or np.any(q <= 0) or np.any(np.diff(q) <= 0):
            raise ConfigError("Q_grid must be strictly positive and strictly increasing")
        if self.sample_count < 1 or self.workers < 1 or self.steps < 0:
            raise ConfigError("sample_count and workers must be >= 1, steps >= 0")
        if self.resolution <= 0 or self.n_cells < 100:
            raise ConfigError("resolution must be positive and n_cells >= 100")
        if self.amplitude <= 0 or (self.amplitude_max is not None and self.amplitude_max < self.amplitude):
            raise ConfigError("bad amplitude range")
        if self.kmax < 2:
            raise ConfigError("kmax must be >= 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["Q_grid"] = [float(q) for q in self.Q_grid]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def sha256(self) -> str:
        d = self.to_dict()
        d.pop("workers")  # thread count does not change the data
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def header(self) -> str:
        return f"# chargedrop {package_version()} seed={self.seed} config_sha256={self.sha256()}"


def log_grid(q_min: float, q_max: float, count: int) -> List[float]:
    if not 0 < q_min < q_max or count < 2:
        raise ConfigError("need 0 < q_min < q_max and count >= 2")
    return [float(q) for q in np.geomspace(q_min, q_max, count)]


# ----------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, cfg: ExperimentConfig, columns: Sequence[str], rows: Sequence[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(cfg.header() + "\n")
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(columns)
        for row in rows:
            out.writerow([_fmt(v) for v in row])


def write_json(path, cfg: ExperimentConfig, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(cfg.header() + "\n")
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def read_csv(path) -> List[dict]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("".join(lines))))


def read_json(path) -> dict:
    with open(path) as fh:
        return json.loads("".join(ln for ln in fh if not ln.startswith("#")))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _ordered_map(fn: Callable, items: Sequence, workers: int) -> list:
    """map() over a thread pool; results come back in input order."""
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def sample_seeds(seed: int, count: int) -> List[int]:
    """One independent 63-bit seed per sample index, derived from the master seed."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(c.generate_state(1, np.uint64)[0] >> np.uint64(1)) for c in children]


def _sample_shape(cfg: ExperimentConfig, sample_seed: int):
    rng = np.random.default_rng(sample_seed)
    hi = cfg.amplitude_max if cfg.amplitude_max is not None else cfg.amplitude
    delta = float(rng.uniform(cfg.amplitude, hi)) if hi > cfg.amplitude else cfg.amplitude
    return delta, random_shape(rng, cfg.kmax, delta)


# ----------------------------------------------------------------------------
# equilibrium validation


def run_equilibrium_validation(cfg: ExperimentConfig, write: bool = True) -> dict:
    """Disk solves at h, h/2, h/4 against the closed-form ball measure."""
    p = cfg.params
    disk = Ball(1.0, dimension=p.dimension)
    oracle = ball_energy(1.0, p)
    prof = equilibrium_ball_closed_form(1.0, p)
    rows = []
    for level in range(3):
        h = cfg.resolution / 2 ** level
        dset = rasterize(disk, h)  # raises ResolutionError below 100 cells
        t0 = time.perf_counter()
        res = solve_equilibrium(dset, p, near_field=3)
        elapsed = time.perf_counter() - t0
        if not res.converged:
            raise SolverError(f"disk solve at h={h} did not converge (kkt {res.kkt_residual:.3g})")
        r = np.linalg.norm(dset.centers, axis=1)
        interior = r < 1.0 - 5 * h
        u = res.potential[interior]
        inner = r <= 0.9
        exact = prof(dset.centers[inner])
        w = dset.weights[inner]
        l1 = float(np.sum(w * np.abs(res.density[inner] - exact)) / np.sum(w * exact))
        rows.append([h, dset.n, res.energy, (res.energy - oracle) / oracle, float(u.std() / u.mean()), l1,
                     res.kkt_residual, res.iterations, elapsed])
    e = [row[2] for row in rows]
    cauchy_ok = abs(e[1] - e[2]) <= abs(e[0] - e[1])
    finest = rows[-1]
    report = {
        "experiment": "equilibrium",
        "oracle_energy": oracle,
        "oracle_is_pi_over_2": p.dimension == 2 and p.alpha == 1.0 and p.eps == 0.0,
        "energy_converging": bool(cauchy_ok),
        "convergence_flag": not cauchy_ok,
        "finest": {"n_cells": finest[1], "energy": finest[2], "relative_error": finest[3],
                   "potential_cv": finest[4], "density_l1": finest[5]},
        "checks": {
            "energy_within_1pct": abs(finest[3]) <= 0.01,
            "potential_cv_le_1e-2": finest[4] <= 1e-2,
            "density_l1_le_2pct": finest[5] <= 0.02,
        },
    }
    report["passed"] = all(report["checks"].values()) and cauchy_ok
    if write:
        out = Path(cfg.output_path)
        cols = ["h", "n_cells", "energy", "rel_error", "potential_cv", "density_l1", "kkt", "iterations", "seconds"]
        # timing is not reproducible, so it goes to the JSON report only
        write_csv(out / "equilibrium.csv", cfg, cols[:-1], [row[:-1] for row in rows])
        report["seconds"] = [row[-1] for row in rows]
        write_json(out / "equilibrium.json", cfg, report)
    return report


# ----------------------------------------------------------------------------
# stability scan

STABILITY_COLUMNS = ["sample_id", "seed", "alpha", "delta", "Q", "dP", "dI", "ratio", "gap", "sign"]


def _sign(x: float) -> int:
    return int(x > 0) - int(x < 0)


def stability_rows(dP: float, dI: float, Q_grid: Sequence[float], prefix: Sequence) -> List[list]:
    rows = []
    ratio = dI / dP if dP > 0 else float("nan")
    for Q in Q_grid:
        gap = dP - Q * Q * dI
        rows.append(list(prefix) + [Q, dP, dI, ratio, gap, _sign(gap)])
    return rows


def stability_summary(rows: Sequence[Sequence], Q_grid: Sequence[float]) -> dict:
    """Everything here is recomputed from the CSV columns."""
    by_sample: Dict[int, list] = {}
    for row in rows:
        by_sample.setdefault(int(row[0]), []).append(row)
    ratios = [float(r[0][7]) for r in by_sample.values()]
    flips = []
    for rs in by_sample.values():
        s = [int(r[9]) for r in rs]
        flips.append(sum(1 for a, b in zip(s, s[1:]) if a != b))
    ok = [all(int(r[9]) >= 0 for r in rows if float(r[4]) == Q) for Q in Q_grid]
    largest = None
    for Q, good in zip(Q_grid, ok):
        if not good:
            break
        largest = Q
    pos = [float(r[0][5]) / float(r[0][6]) for r in by_sample.values() if float(r[0][6]) > 0]
    return {
        "samples": len(by_sample),
        "max_ratio": max(ratios),
        "min_ratio": min(ratios),
        "max_sign_flips": max(flips),
        "largest_grid_Q_all_stable": largest,
        "threshold_Q": math.sqrt(min(pos)) if pos else math.inf,
        "threshold_note": EMPIRICAL_NOTE,
    }


def run_stability_scan(cfg: ExperimentConfig, write: bool = True, cache: Optional[BallSolveCache] = None) -> dict:
    p = cfg.params
    cache = cache or BallSolveCache()
    seeds = sample_seeds(cfg.seed, cfg.sample_count)

    def work(i):
        delta, shape = _sample_shape(cfg, seeds[i])
        rec = stability_gap(shape, p, n_cells=cfg.n_cells, cache=cache)
        return stability_rows(rec.dP, rec.dI, cfg.Q_grid, [i, seeds[i], p.alpha, delta])

    rows = [row for block in _ordered_map(work, range(cfg.sample_count), cfg.workers) for row in block]
    summary = {"experiment": "stability-scan", "alpha": p.alpha, **stability_summary(rows, cfg.Q_grid)}
    if write:
        out = Path(cfg.output_path)
        write_csv(out / "stability.csv", cfg, STABILITY_COLUMNS, rows)
        write_json(out / "stability.json", cfg, summary)
    summary["rows"] = rows
    return summary


# ----------------------------------------------------------------------------
# nonexistence crossover (N = 2)


@dataclass
class CrossoverReport:
    Q_star: Optional[float]
    Q_star_exact: float
    exponent_fit: float
    ball_exponent_fit: float
    table: List[list]
    note: str = EMPIRICAL_NOTE

    def to_dict(self) -> dict:
        return asdict(self)


def multiball_energy(n: int, Q: float, params: RieszParams, ball_unit: float) -> float:
    """n disjoint disks of radius n^{-1/2} at infinite separation: total volume pi."""
    r = 1.0 / math.sqrt(n)
    each = rescale_energy(ball_unit, r, params)
    split = optimal_charge_split([each] * n) if n <= 64 else None
    inter = split.total_energy if split is not None else each / n
    return 2 * math.pi * math.sqrt(n) + Q * Q * inter


def best_split(Q: float, params: RieszParams, ball_unit: float, n_max: int) -> int:
    """Integer minimizer of 2 pi sqrt(n) + Q^2 I n^{-alpha/2}; the map is unimodal in n."""
    a = params.alpha
    # stationary point of the continuous relaxation
    n_c = (Q * Q * ball_unit * a / (2 * math.pi)) ** (2.0 / (1.0 + a))
    cands = {1, max(1, math.floor(n_c)), max(1, math.ceil(n_c))}
    n = min(sorted(cands), key=lambda m: multiball_energy(m, Q, params, ball_unit))
    if n >= n_max:
        raise ConfigError(f"best n reached n_max={n_max}; widen the range")
    return n


def crossover_charge(params: RieszParams, ball_unit: float, n_limit: int = 10 ** 6) -> float:
    """Smallest Q at which some n >= 2 ties the ball: min_n 2 pi (sqrt n - 1) / (I (1 - n^{-alpha/2}))."""
    n = np.arange(2, n_limit, dtype=float)
    q2 = 2 * np.pi * (np.sqrt(n) - 1) / (ball_unit * (1 - n ** (-params.alpha / 2)))
    return float(np.sqrt(np.min(q2)))


def _loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def run_nonexistence_scan(cfg: ExperimentConfig, write: bool = True) -> CrossoverReport:
    p = cfg.params
    if p.dimension != 2 or not 0 < p.alpha <= 1:
        raise ConfigError("nonexistence scan needs N = 2 and 0 < alpha <= 1")
    unit = ball_energy(1.0, p)
    table = []
    for Q in cfg.Q_grid:
        n = best_split(Q, p, unit, cfg.n_max)
        table.append([Q, n, multiball_energy(1, Q, p, unit), multiball_energy(n, Q, p, unit)])
    q_star = next((row[0] for row in table if row[1] >= 2), None)
    Q = np.array([row[0] for row in table])
    top = Q >= Q[-1] / 10
    if top.sum() < 2:
        raise ConfigError("Q grid needs at least two points in its last decade")
    rep = CrossoverReport(
        q_star,
        crossover_charge(p, unit),
        _loglog_slope(Q[top], [row[3] for row, t in zip(table, top) if t]),
        _loglog_slope(Q[top], [row[2] for row, t in zip(table, top) if t]),
        table,
    )
    if write:
        out = Path(cfg.output_path)
        write_csv(out / "nonexistence.csv", cfg, ["Q", "best_n", "ball_energy", "multiball_energy"], table)
        write_json(out / "nonexistence.json", cfg, {"experiment": "nonexistence-scan", "alpha": p.alpha,
                                                    **{k: v for k, v in rep.to_dict().items() if k != "table"}})
    return rep


# ----------------------------------------------------------------------------
# F(theta)


def default_theta_grid() -> List[float]:
    return [float(t) for t in np.geomspace(1e-3, 2.0, 50)]


def run_ftheta(cfg: ExperimentConfig, write: bool = True) -> dict:
    p = cfg.params
    grid = cfg.theta_grid or default_theta_grid()
    N, a = p.dimension, p.alpha

    def work(theta):
        F = f_theta(theta, p)
        F2 = f_theta(theta, p, order=24)
        return [theta, F, theta ** (N - a - 1) * F, F2, abs(F2 - F) / abs(F)]

    rows = _ordered_map(work, grid, cfg.workers)
    scaled = np.array([r[2] for r in rows])
    ratio = float(scaled.max() / np.median(scaled))
    summary = {
        "experiment": "ftheta", "dimension": N, "alpha": a,
        "max_over_median": ratio, "bounded": ratio <= 3.0,
        "max_refinement_change": max(r[4] for r in rows),
        "F_monotone_decreasing": bool(np.all(np.diff([r[1] for r in rows]) < 0)),
    }
    if write:
        out = Path(cfg.output_path)
        write_csv(out / "ftheta.csv", cfg, ["theta", "F", "theta_power_F", "F_refined", "refinement_change"], rows)
        write_json(out / "ftheta.json", cfg, summary)
    summary["rows"] = rows
    return summary


# ----------------------------------------------------------------------------
# gradient descent toward the disk

FD_STEP = 1e-4
GRAD_TOL = 1e-5


class StepSizeError(RuntimeError):
    pass


def _free_index(K: int) -> np.ndarray:
    """Positions of a_k, b_k with k >= 2 in the (a0, a_1..a_K, b_1..b_K) vector."""
    k = np.arange(2, K + 1)
    return np.concatenate([k, K + k])


def _volume_gradient(shape: FourierShape) -> np.ndarray:
    th, w = shape.quadrature()
    r = 1.0 + shape.phi(th)
    k = np.arange(1, shape.K + 1)
    kt = th[:, None] * k
    return np.concatenate([[np.sum(w * r)], (w * r) @ np.cos(kt), (w * r) @ np.sin(kt)])


def _tidy(shape: FourierShape) -> FourierShape:
    shape = normalize_volume(recenter_barycenter(normalize_volume(shape)))
    return shape


class DescentProblem:
    """F = P + Q^2 I + Lambda |vol - omega_N| on Fourier shapes, I from the T-map solve on ball cells."""

    def __init__(self, params: RieszParams, Q: float, n_cells: int = 1500, cache: Optional[BallSolveCache] = None,
                 Lambda: Optional[float] = None):
        self.params = params
        self.Q = Q
        self.n_cells = n_cells
        self.cache = cache or BallSolveCache()
        self.Lambda = default_lambda(Q) if Lambda is None else Lambda

    def interaction(self, shape: FourierShape) -> float:
        return shape_equilibrium(shape, self.params, self.n_cells, cache=self.cache)[1].energy

    def energy(self, shape: FourierShape):
        P, I = perimeter(shape), self.interaction(shape)
        pen = self.Lambda * abs(volume(shape) - unit_ball_volume(2))
        return P + self.Q ** 2 * I + pen, P, I

    def gradient(self, shape: FourierShape) -> np.ndarray:
        """Reduced gradient in the free coefficients, with a0 slaved to the volume constraint."""
        idx = np.concatenate([[0], _free_index(shape.K)])
        c = shape.coefficients()
        gI = np.zeros(len(idx))
        for j, i in enumerate(idx):
            e = np.zeros_like(c)
            e[i] = FD_STEP
            plus = self.interaction(shape.with_coefficients(c + e, check=False))
            minus = self.interaction(shape.with_coefficients(c - e, check=False))
            gI[j] = (plus - minus) / (2 * FD_STEP)
        g = perimeter_gradient(shape)[idx] + self.Q ** 2 * gI
        gv = _volume_gradient(shape)[idx]
        # moving a free coefficient by 1 moves a0 by -gv_k / gv_0 at fixed volume
        return g[1:] - g[0] * gv[1:] / gv[0]


@dataclass
class DescentTrace:
    rows: List[list]
    shape: FourierShape
    converged: bool

    @property
    def energies(self) -> np.ndarray:
        return np.array([r[-6] for r in self.rows])


def descend(shape: FourierShape, problem: DescentProblem, steps: int = 200, tol: float = GRAD_TOL,
            label: Sequence = ()) -> DescentTrace:
    """Projected gradient with Barzilai-Borwein trial steps and Armijo backtracking."""
    shape = _tidy(shape)
    F, P, I = problem.energy(shape)
    g = problem.gradient(shape)
    idx = _free_index(shape.K)
    t = 1.0 / (3 * math.pi)  # inverse of the mode-2 perimeter curvature
    rows = [list(label) + [0, F, P, I, float(np.linalg.norm(g)), float(np.max(np.abs(shape.coefficients()))), 0.0]]
    converged = float(np.linalg.norm(g)) < tol
    for step in range(1, steps + 1):
        if converged:
            break
        c = shape.coefficients()
        while True:
            trial = c.copy()
            trial[idx] -= t * g
            try:
                cand = _tidy(shape.with_coefficients(trial))
            except ValueError:
                cand = None
            if cand is not None:
                Fc, Pc, Ic = problem.energy(cand)
                if Fc <= F - 1e-4 * t * float(g @ g):
                    break
            t *= 0.5
            if t < 1e-12:
                raise StepSizeError("backtracking exhausted without decrease")
        gc = problem.gradient(cand)
        s = cand.coefficients()[idx] - c[idx]
        y = gc - g
        sy = float(s @ y)
        t_next = float(s @ s) / sy if sy > 0 else 2 * t
        shape, F, P, I, g = cand, Fc, Pc, Ic, gc
        gn = float(np.linalg.norm(g))
        rows.append(list(label) + [step, F, P, I, gn, float(np.max(np.abs(shape.coefficients()))), t])
        converged = gn < tol
        t = t_next
    return DescentTrace(rows, shape, converged)


DESCENT_COLUMNS = ["sample_id", "seed", "step", "energy", "perimeter", "interaction", "grad_norm", "max_coef",
                   "step_size"]


def run_descent(cfg: ExperimentConfig, initial: Optional[Sequence[FourierShape]] = None, write: bool = True) -> dict:
    """Descent from each shape of a seeded family (or the given shapes), at Q = Q_grid[0]."""
    p = cfg.params
    if p.dimension != 2:
        raise ConfigError("descent runs on planar Fourier shapes")
    Q = cfg.Q_grid[0]
    cache = BallSolveCache()
    if initial is None:
        seeds = sample_seeds(cfg.seed, cfg.sample_count)
        shapes = [_sample_shape(cfg, s)[1] for s in seeds]
    else:
        seeds = [cfg.seed] * len(initial)
        shapes = list(initial)

    def work(i):
        problem = DescentProblem(p, Q, cfg.n_cells, cache)
        return descend(shapes[i], problem, cfg.steps, label=[i, seeds[i]])

    traces = _ordered_map(work, range(len(shapes)), cfg.workers)
    rows = [r for tr in traces for r in tr.rows]
    per = []
    for tr in traces:
        e = tr.energies
        per.append({
            "converged": tr.converged,
            "steps": len(tr.rows) - 1,
            "final_max_coef": tr.rows[-1][7],
            "final_grad_norm": tr.rows[-1][6],
            "monotone": bool(np.all(np.diff(e) <= 0)),
        })
    summary = {
        "experiment": "descent", "Q": Q, "alpha": p.alpha, "Lambda": default_lambda(Q),
        "all_converged": all(s["converged"] for s in per),
        "max_final_coef": max(s["final_max_coef"] for s in per),
        "all_monotone": all(s["monotone"] for s in per),
        "samples": per,
    }
    if write:
        out = Path(cfg.output_path)
        write_csv(out / "descent.csv", cfg, DESCENT_COLUMNS, rows)
        write_json(out / "descent.json", cfg, summary)
    summary["traces"] = traces
    return summary


RUNNERS = {
    "equilibrium": run_equilibrium_validation,
    "stability-scan": run_stability_scan,
    "nonexistence-scan": run_nonexistence_scan,
    "ftheta": run_ftheta,
    "descent": run_descent,
}
