import json
import math
import subprocess
import sys

import numpy as np
import pytest

from chargedrop import cli
from chargedrop.equilibrium import ball_energy
from chargedrop.experiments import (
    STABILITY_COLUMNS,
    ConfigError,
    ExperimentConfig,
    best_split,
    crossover_charge,
    log_grid,
    multiball_energy,
    read_csv,
    read_json,
    run_descent,
    run_ftheta,
    run_nonexistence_scan,
    run_stability_scan,
    sample_seeds,
    stability_summary,
)
from chargedrop.geometry import FourierShape
from chargedrop.riesz import RieszParams


class TestConfig:
    def test_unknown_experiment(self):
        with pytest.raises(ConfigError):
            ExperimentConfig("nope")

    @pytest.mark.parametrize("bad", [
        {"alpha": 2.0}, {"alpha": 0.0}, {"eps": -1.0}, {"Q_grid": []}, {"Q_grid": [1.0, 0.5]},
        {"Q_grid": [0.0, 1.0]}, {"sample_count": 0}, {"workers": 0}, {"n_cells": 10}, {"kmax": 1},
        {"amplitude": 0.05, "amplitude_max": 0.01},
    ])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            ExperimentConfig("stability-scan", **bad)

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"experiment": "ftheta", "colour": 1})

    def test_roundtrip(self):
        cfg = ExperimentConfig("descent", alpha=0.5, Q_grid=[0.2], seed=4)
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    def test_hash_ignores_workers(self):
        a = ExperimentConfig("ftheta", workers=1)
        b = ExperimentConfig("ftheta", workers=8)
        assert a.sha256() == b.sha256()
        assert a.sha256() != ExperimentConfig("ftheta", seed=1).sha256()

    def test_log_grid(self):
        g = log_grid(0.1, 10, 3)
        assert g == pytest.approx([0.1, 1.0, 10.0])
        with pytest.raises(ConfigError):
            log_grid(1, 0.1, 3)

    def test_seeds_reproducible(self):
        assert sample_seeds(3, 5) == sample_seeds(3, 5)
        assert sample_seeds(3, 5)[:3] == sample_seeds(3, 3)


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    out = tmp_path_factory.mktemp("stab")
    cfg = ExperimentConfig("stability-scan", Q_grid=log_grid(0.1, 10, 12), sample_count=6, amplitude=0.01,
                           amplitude_max=0.05, seed=2, output_path=str(out))
    return cfg, run_stability_scan(cfg), out


class TestStabilityScan:
    def test_header(self, run):
        cfg, _, out = run
        first = (out / "stability.csv").read_text().splitlines()[0]
        assert first == cfg.header() and cfg.sha256() in first and "seed=2" in first

    def test_columns(self, run):
        _, _, out = run
        rows = read_csv(out / "stability.csv")
        assert list(rows[0]) == STABILITY_COLUMNS and len(rows) == 6 * 12

    def test_sign_column(self, run):
        _, _, out = run
        for r in read_csv(out / "stability.csv"):
            gap = float(r["dP"]) - float(r["Q"]) ** 2 * float(r["dI"])
            assert float(r["gap"]) == pytest.approx(gap, rel=1e-12, abs=1e-15)
            assert int(r["sign"]) == (gap > 0) - (gap < 0)

    def test_summary_recomputable(self, run):
        cfg, summary, out = run
        rows = [[r[c] for c in STABILITY_COLUMNS] for r in read_csv(out / "stability.csv")]
        again = stability_summary(rows, cfg.Q_grid)
        on_disk = read_json(out / "stability.json")
        for k, v in again.items():
            assert on_disk[k] == pytest.approx(v) if isinstance(v, float) else on_disk[k] == v

    def test_single_flip(self, run):
        _, summary, _ = run
        assert summary["max_sign_flips"] <= 1
        assert summary["threshold_Q"] > 0 and "empirical" in summary["threshold_note"]

    def test_ceiling(self, run):
        from chargedrop.functional import load_calibration

        _, summary, _ = run
        assert summary["max_ratio"] <= load_calibration()["stability_ratio_ceiling"]["1.0"]


def test_stability_determinism_across_workers(tmp_path):
    data = []
    for w in (1, 4, 8):
        cfg = ExperimentConfig("stability-scan", Q_grid=[0.5, 2.0], sample_count=8, amplitude=0.02,
                               amplitude_max=0.05, seed=5, workers=w, output_path=str(tmp_path / str(w)))
        run_stability_scan(cfg)
        # the header hashes the output path, so compare the data sections
        data.append((tmp_path / str(w) / "stability.csv").read_bytes().split(b"\n", 1)[1])
    assert data[0] == data[1] == data[2]


class TestNonexistence:
    P = RieszParams(2, 1.0)

    def test_single_ball_row(self):
        unit = ball_energy(1.0, self.P)
        assert multiball_energy(1, 2.0, self.P, unit) == pytest.approx(2 * math.pi + 4 * unit)

    def test_best_split_brute_force(self):
        unit = ball_energy(1.0, self.P)
        for Q in log_grid(0.5, 200, 15):
            brute = min(range(1, 20000), key=lambda n: multiball_energy(n, Q, self.P, unit))
            assert best_split(Q, self.P, unit, 10 ** 9) == brute

    def test_crossover_is_tie(self):
        unit = ball_energy(1.0, self.P)
        q = crossover_charge(self.P, unit)
        diffs = [multiball_energy(n, q, self.P, unit) - multiball_energy(1, q, self.P, unit) for n in range(2, 50)]
        assert min(diffs) == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("alpha", [0.5, 1.0])
    def test_slopes(self, alpha, tmp_path):
        cfg = ExperimentConfig("nonexistence-scan", alpha=alpha, Q_grid=log_grid(0.1, 1000, 81), output_path=str(tmp_path))
        rep = run_nonexistence_scan(cfg)
        assert rep.exponent_fit == pytest.approx(2 / (1 + alpha), rel=0.05)
        assert rep.ball_exponent_fit == pytest.approx(2.0, rel=0.02)
        idx = [row[0] for row in rep.table].index(rep.Q_star)
        assert rep.table[idx][1] in (2, 3) and rep.table[idx - 1][1] == 1
        assert rep.Q_star >= rep.Q_star_exact
        rows = read_csv(tmp_path / "nonexistence.csv")
        assert float(rows[0]["ball_energy"]) == float(rows[0]["multiball_energy"])

    def test_alpha_range(self):
        with pytest.raises(ConfigError):
            run_nonexistence_scan(ExperimentConfig("nonexistence-scan", alpha=1.5), write=False)


def test_ftheta_small_grid(tmp_path):
    cfg = ExperimentConfig("ftheta", alpha=0.5, theta_grid=[0.01, 0.1, 1.0], output_path=str(tmp_path))
    s = run_ftheta(cfg)
    for r in read_csv(tmp_path / "ftheta.csv"):
        assert float(r["theta_power_F"]) == pytest.approx(float(r["theta"]) ** 0.5 * float(r["F"]), rel=1e-12)
    assert s["F_monotone_decreasing"] and s["max_refinement_change"] < 5e-3


class TestDescent:
    def test_disk_terminates_immediately(self, tmp_path):
        cfg = ExperimentConfig("descent", Q_grid=[0.1], output_path=str(tmp_path), n_cells=800)
        s = run_descent(cfg, initial=[FourierShape(0.0, np.zeros(3))])
        assert s["all_converged"] and s["samples"][0]["steps"] == 0

    def test_single_shape(self, tmp_path):
        cfg = ExperimentConfig("descent", Q_grid=[0.1], sample_count=1, amplitude=0.05, seed=3,
                               output_path=str(tmp_path), n_cells=800)
        s = run_descent(cfg)
        assert s["all_converged"] and s["all_monotone"] and s["max_final_coef"] <= 1e-3
        rows = read_csv(tmp_path / "descent.csv")
        e = [float(r["energy"]) for r in rows]
        assert all(b <= a for a, b in zip(e, e[1:]))


class TestCli:
    def test_usage_errors(self):
        assert cli.main(["bogus"]) == 2
        assert cli.main(["ftheta", "--no-such-flag"]) == 2

    def test_config_errors(self, tmp_path):
        assert cli.main(["ftheta", "--alpha", "3"]) == 3
        bad = tmp_path / "c.json"
        bad.write_text("{not json")
        assert cli.main(["ftheta", "--config", str(bad)]) == 3
        bad.write_text(json.dumps({"experiment": "descent"}))
        assert cli.main(["ftheta", "--config", str(bad)]) == 3

    def test_nonexistence_run(self, tmp_path, capsys):
        code = cli.main(["nonexistence-scan", "--alpha", "0.5", "--out", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "nonexistence.csv").exists() and (tmp_path / "nonexistence.json").exists()
        assert json.loads(capsys.readouterr().out)["Q_star"] > 0

    def test_flags_override_config(self, tmp_path):
        c = tmp_path / "c.json"
        c.write_text(json.dumps({"alpha": 0.5, "seed": 7}))
        args = cli.build_parser().parse_args(["stability-scan", "--config", str(c), "--seed", "9", "--q-count", "5"])
        cfg = cli.make_config("stability-scan", args)
        assert cfg.alpha == 0.5 and cfg.seed == 9 and len(cfg.Q_grid) == 5

    def test_console_script(self):
        out = subprocess.run([sys.executable, "-m", "chargedrop.cli", "verify", "--help"], capture_output=True)
        assert out.returncode == 0


def test_threshold_stable_under_doubling():
    q = []
    for n in (20, 40):
        cfg = ExperimentConfig("stability-scan", Q_grid=[1.0], sample_count=n, amplitude=0.05, seed=0)
        q.append(run_stability_scan(cfg, write=False)["threshold_Q"])
    assert abs(q[1] - q[0]) <= 0.1 * q[0]
