"""Invariant suite behind ``chargedrop verify``: one line per check, nonzero exit on any failure."""
from __future__ import annotations

import math
import tempfile
import time
from pathlib import Path
from typing import Callable, List, Tuple

import numpy as np

from .equilibrium import ball_energy, optimal_charge_split, project_weighted_simplex, solve_equilibrium
from .experiments import (
    ExperimentConfig,
    log_grid,
    run_nonexistence_scan,
    run_stability_scan,
)
from .functional import (
    almost_minimality_probe,
    dimple_competitor,
    load_calibration,
    rieszbis_bounds_check,
    splitting_bound_check,
    total_energy,
)
from .geometry import (
    Ball,
    GeneralizedSet,
    Square,
    barycenter,
    perimeter,
    random_shape,
    rasterize,
    spacing_for_cells,
    volume,
)
from .perturbation import (
    f_theta,
    mu_ball_integrability_exponent,
    random_ball_pairs,
    square_identity_residual,
    stability_gap,
    taylor_kernel_terms,
    zeta_bound_constant,
)
from .riesz import RieszParams, kernel_eval, rescale_energy, self_cell_constant
from .spectral import build_multiplier_table, hs_seminorm_direct, hs_seminorm_fourier, sample_phi

Check = Tuple[str, Callable[[], Tuple[bool, str]]]


def _kernel_symmetry():
    rng = np.random.default_rng(1)
    x, y = rng.standard_normal((2, 50, 2))
    p = RieszParams(2, 0.7)
    err = max(abs(kernel_eval(a, b, p) - kernel_eval(b, a, p)) for a, b in zip(x, y))
    return err == 0.0, f"max asymmetry {err:.1e}"


def _self_cell():
    exact = 4 * math.log(1 + math.sqrt(2)) - 4 / 3 * (math.sqrt(2) - 1)
    err = abs(self_cell_constant(2, 1.0) - exact)
    return err < 1e-12, f"|S - closed form| = {err:.1e}"


def _disk_energy():
    p = RieszParams(2, 1.0)
    d = rasterize(Ball(), spacing_for_cells(Ball(), 5000))
    res = solve_equilibrium(d, p, near_field=3)
    rel = abs(res.energy - math.pi / 2) / (math.pi / 2)
    return res.converged and rel < 0.01 and res.kkt_residual < 1e-8, f"rel err {rel:.2e}, kkt {res.kkt_residual:.1e}"


def _uniqueness():
    p = RieszParams(2, 1.0, 0.05)
    d = rasterize(Square(1.5), 0.08)
    a = solve_equilibrium(d, p, tol=1e-12)
    b = solve_equilibrium(d, p, tol=1e-12, initial=np.random.default_rng(3))
    de = abs(a.energy - b.energy) / a.energy
    l1 = float(np.sum(d.weights * np.abs(a.density - b.density)))
    return de < 1e-8 and l1 < 1e-4, f"energy diff {de:.1e}, L1 {l1:.1e}"


def _scaling():
    p = RieszParams(2, 0.5)
    e1 = ball_energy(1.0, p)
    err = max(abs(rescale_energy(e1, t, p) - ball_energy(t, p)) / ball_energy(t, p) for t in (0.5, 2, 4))
    return err < 1e-10, f"max rel err {err:.1e}"


def _simplex():
    rng = np.random.default_rng(4)
    y, w = rng.standard_normal(200), rng.random(200) + 0.1
    x = project_weighted_simplex(y, w)
    return bool(np.all(x >= 0)) and abs(w @ x - 1) < 1e-12, f"mass {w @ x:.15f}"


def _charge_split():
    I = np.array([1.0, 2.0, 5.0])
    s = optimal_charge_split(I)
    base = float(np.sum(s.fractions ** 2 * I))
    rng = np.random.default_rng(5)
    worse = 0
    for _ in range(100):
        d = rng.standard_normal(3)
        d -= d.mean()
        q = s.fractions + 1e-3 * d
        worse += float(np.sum(q * q * I)) > base
    return worse == 100 and abs(base - s.total_energy) < 1e-14, f"{worse}/100 perturbations increase"


def _normalization():
    shape = random_shape(np.random.default_rng(6), 5, 0.08)
    dv = abs(volume(shape) - math.pi)
    db = float(np.linalg.norm(barycenter(shape)))
    return dv < 1e-10 and db < 1e-9 and perimeter(shape) > 2 * math.pi, f"|dvol| {dv:.1e}, |bary| {db:.1e}"


def _seminorm():
    shape = random_shape(np.random.default_rng(7), 6, 0.08)
    worst = 0.0
    for s in (0.25, 0.5, 0.75):
        a = hs_seminorm_fourier(shape, build_multiplier_table(6, s))
        vals, der = sample_phi(shape)
        b = hs_seminorm_direct(vals, s, der)
        worst = max(worst, abs(a - b) / b)
    return worst < 0.01, f"fourier vs direct {worst:.1e}"


def _square_identity():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(10):
        shape = random_shape(rng, 6, 0.1)
        x, y = random_ball_pairs(rng, 10_000)
        r = square_identity_residual(x, y, shape) / np.sum((x - y) ** 2, axis=1)
        worst = max(worst, float(np.max(np.abs(r))))
    return worst <= 1e-12, f"max residual / |x-y|^2 = {worst:.1e}"


def _zeta():
    rng = np.random.default_rng(9)
    p = RieszParams(2, 1.0)
    C = load_calibration()["zeta_constant"]
    shape = random_shape(rng, 6, 0.05)
    x, y = random_ball_pairs(rng, 10_000)
    c = zeta_bound_constant(taylor_kernel_terms(x, y, shape, p))
    return c <= C, f"C = {c:.3f} (ceiling {C:.3f})"


def _ftheta():
    p = RieszParams(2, 0.5)
    grid = np.geomspace(1e-3, 2.0, 12)
    v = np.array([t ** 0.5 * f_theta(t, p) for t in grid])
    return v.max() / np.median(v) <= 3.0, f"(2, 0.5) max/median {v.max() / np.median(v):.3f}"


def _integrability():
    s = mu_ball_integrability_exponent(RieszParams(2, 1.0))
    return abs(s - 2.0) < 0.1, f"slope {s:.4f}"


def _stability(quick: bool):
    def run():
        cal = load_calibration()["stability_ratio_ceiling"]
        msgs, ok = [], True
        for a in (0.5, 1.0):
            rng = np.random.default_rng(10)
            worst = 0.0
            for _ in range(3 if quick else 10):
                rec = stability_gap(random_shape(rng, 3, float(rng.uniform(0.01, 0.05))), RieszParams(2, a))
                worst = max(worst, rec.ratio)
                ok &= rec.dP > 0 and rec.dI > 0
            ok &= worst <= cal[str(a)]
            msgs.append(f"alpha {a}: {worst:.4f} <= {cal[str(a)]:.4f}")
        return ok, "; ".join(msgs)
    return run


def _assembly():
    p = RieszParams(2, 1.0)
    E = total_energy(Ball(1.1), 0.5, p, Lambda=3.0, n_cells=2000)
    re = E.perimeter + E.Q ** 2 * E.interaction + E.Lambda * abs(volume(Ball(1.1)) - math.pi)
    far = total_energy(GeneralizedSet((Ball(), Ball(center=np.array([10.0, 0.0])))), 1.0, p, n_cells=2000)
    one = total_energy(Ball(), 1.0, p, n_cells=2000)
    return abs(E.total - re) < 1e-12 and abs(far.interaction - one.interaction / 2) < 1e-12, "total and split"


def _splitting():
    p = RieszParams(2, 1.0)
    rec = splitting_bound_check(Ball(0.5), Ball(0.5, center=np.array([3.0, 0.0])), p, eps=0.1, n_cells=800)
    return rec.holds, f"slack {rec.slack:.3e}"


def _sandwich():
    rec = rieszbis_bounds_check(Ball(), RieszParams(2, 1.0), 0.1, n_cells=2000, mc_samples=200_000)
    return rec.holds, f"{rec.lower:.4f} <= {rec.energy:.4f} <= {rec.upper:.4f}"


def _almost_min():
    C = load_calibration()["almost_min_constant"]
    recs = [almost_minimality_probe(dimple_competitor(r), RieszParams(2, 1.0), 0.1, r, C) for r in (0.4, 0.2, 0.1)]
    return all(r.holds for r in recs), f"min slack {min(r.slack for r in recs):.2e}"


def _nonexistence():
    msgs, ok = [], True
    for a in (0.5, 1.0):
        cfg = ExperimentConfig("nonexistence-scan", alpha=a, Q_grid=log_grid(0.1, 1000, 81))
        rep = run_nonexistence_scan(cfg, write=False)
        target = 2 / (1 + a)
        ok &= abs(rep.exponent_fit - target) <= 0.05 * target and abs(rep.ball_exponent_fit - 2) <= 0.04
        msgs.append(f"alpha {a}: slope {rep.exponent_fit:.4f}")
    return ok, "; ".join(msgs)


def _determinism(workers: int):
    def run():
        outs = []
        with tempfile.TemporaryDirectory() as tmp:
            for k, w in enumerate(sorted({1, workers, 4})):
                cfg = ExperimentConfig("stability-scan", Q_grid=[0.5, 2.0, 8.0], sample_count=4, amplitude=0.02,
                                       amplitude_max=0.05, seed=11, workers=w, output_path=str(Path(tmp) / str(k)))
                run_stability_scan(cfg)
                text = (Path(cfg.output_path) / "stability.csv").read_bytes()
                outs.append(text.split(b"\n", 1)[1])  # the header carries the config hash
        return all(o == outs[0] for o in outs), f"{len(outs)} worker counts, data sections compared"
    return run


def checks(workers: int = 1, quick: bool = False) -> List[Check]:
    return [
        ("riesz: kernel symmetry", _kernel_symmetry),
        ("riesz: self-cell constant closed form", _self_cell),
        ("riesz: ball scaling law", _scaling),
        ("equilibrium: disk energy vs pi/2", _disk_energy),
        ("equilibrium: uniqueness across starts", _uniqueness),
        ("equilibrium: simplex projection", _simplex),
        ("equilibrium: charge split optimality", _charge_split),
        ("geometry: normalization and centering", _normalization),
        ("spectral: fourier vs direct seminorm", _seminorm),
        ("perturbation: square identity", _square_identity),
        ("perturbation: zeta bound", _zeta),
        ("perturbation: F(theta) bound at alpha 0.5", _ftheta),
        ("perturbation: integrability exponent", _integrability),
        ("perturbation: stability ratio ceiling", _stability(quick)),
        ("functional: assembly identity", _assembly),
        ("functional: splitting bound", _splitting),
        ("functional: riesz sandwich", _sandwich),
        ("functional: almost-minimality", _almost_min),
        ("experiments: nonexistence slopes", _nonexistence),
        ("experiments: determinism across workers", _determinism(workers)),
    ]


def run_all(workers: int = 1, quick: bool = False, stream=None) -> List[str]:
    """Run every check, print PASS/FAIL lines, and return the names that failed."""
    import sys

    stream = stream or sys.stdout
    failed = []
    for name, fn in checks(workers, quick):
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a violation too
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        status = "PASS" if ok else "FAIL"
        print(f"{status}  {name}  ({detail}; {time.perf_counter() - t0:.1f}s)", file=stream, flush=True)
        if not ok:
            failed.append(name)
    return failed
