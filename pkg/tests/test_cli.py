import json

import numpy as np
import pytest

from cbfda.cli import main

BASE = {
    "grid": {"dim": 2, "n": 32},
    "model": {"mu": 0.1, "alpha": 0.0, "beta": 0.1, "varpi": 2.0,
              "forcing": {"kind": "none"}},
    "noise": {"kind": "additive", "epsilon": 0.01},
    "interpolant": {"kind": "spectral", "theta": 0.25},
    "assimilation": {"sigma": 1.0},
    "init": {"truth": {"kind": "random", "slope": -4.0, "rms": 0.1},
             "da": {"kind": "random", "slope": -4.0, "rms": 0.1}},
    "stepper": {"dt": 0.002, "t_end": 0.1, "record_stride": 5},
    "ensemble": {"n_members": 2},
    "master_seed": 42,
}


def write_config(tmp_path, name="run.json", **overrides):
    cfg = json.loads(json.dumps(BASE))
    for key, val in overrides.items():
        if isinstance(val, dict) and key in cfg:
            cfg[key].update(val)
        else:
            cfg[key] = val
    cfg.setdefault("output_dir", str(tmp_path / "out"))
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path, cfg


class TestCheck:
    def test_feasible_exits_zero(self, tmp_path, capsys):
        path, _ = write_config(tmp_path)
        assert main(["check", str(path)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["strongest"] is not None
        assert payload["version"]

    def test_inadmissible_regime_exits_one(self, tmp_path, capsys):
        path, _ = write_config(tmp_path, model={"varpi": 2.0}, grid={"dim": 3, "n": 16})
        assert main(["check", str(path)]) == 1
        err = capsys.readouterr().err
        assert "d=3" in err

    def test_sigma_above_upper_bound_exits_two(self, tmp_path):
        path, _ = write_config(tmp_path, assimilation={"sigma": 1e9})
        assert main(["check", str(path)]) == 2

    def test_coarse_theta_infeasible_exits_two(self, tmp_path):
        # widen theta until the window collapses below the required sigma
        path, _ = write_config(tmp_path, interpolant={"theta": 3.0},
                               assimilation={"sigma": 1.0})
        assert main(["check", str(path)]) == 2

    def test_missing_config(self, tmp_path):
        assert main(["check", str(tmp_path / "absent.json")]) == 1

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{not json")
        assert main(["check", str(p)]) == 1


class TestAssimilate:
    def test_run_produces_outputs(self, tmp_path):
        path, cfg = write_config(tmp_path)
        assert main(["assimilate", str(path)]) == 0
        out = tmp_path / "out"
        traj = out / "trajectory.csv"
        summary = json.loads((out / "summary.json").read_text())
        assert traj.exists()
        assert summary["config_echo"]["master_seed"] == 42
        assert summary["version"]
        first = traj.read_text().splitlines()[0]
        assert first.startswith("# version:")

    def test_null_control_flagged(self, tmp_path):
        path, _ = write_config(tmp_path, assimilation={"sigma": 0.0})
        assert main(["assimilate", str(path)]) == 0
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert "null control" in summary["guarantee"]

    def test_blowup_exit_code(self, tmp_path):
        path, _ = write_config(
            tmp_path,
            model={"mu": 0.01, "beta": 1e9, "varpi": 5.0},
            init={"truth": {"kind": "random", "rms": 0.5},
                  "da": {"kind": "random", "rms": 0.5}},
        )
        assert main(["assimilate", str(path)]) == 3
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert "error" in summary

    def test_output_dir_created(self, tmp_path):
        path, _ = write_config(tmp_path, output_dir=str(tmp_path / "deep" / "er"))
        assert main(["assimilate", str(path)]) == 0
        assert (tmp_path / "deep" / "er" / "trajectory.csv").exists()


class TestEnsemble:
    def test_two_member_smoke_within_budget(self, tmp_path):
        import time
        path, _ = write_config(tmp_path, stepper={"dt": 0.002, "t_end": 2.0,
                                                  "record_stride": 50})
        t0 = time.time()
        assert main(["ensemble", str(path)]) == 0
        assert time.time() - t0 < 60.0

    def test_smoke_and_determinism(self, tmp_path):
        path, _ = write_config(tmp_path, output_dir=str(tmp_path / "o1"))
        assert main(["ensemble", str(path)]) == 0
        path2, _ = write_config(tmp_path, name="run2.json", output_dir=str(tmp_path / "o2"))
        assert main(["ensemble", str(path2)]) == 0
        b1 = (tmp_path / "o1" / "ensemble.csv").read_bytes()
        b2 = (tmp_path / "o2" / "ensemble.csv").read_bytes()
        # identical seeds and config -> identical bytes modulo the echoed
        # output_dir inside the header comment
        data1 = b"\n".join(l for l in b1.split(b"\n") if not l.startswith(b"#"))
        data2 = b"\n".join(l for l in b2.split(b"\n") if not l.startswith(b"#"))
        assert data1 == data2
        summary = json.loads((tmp_path / "o1" / "summary.json").read_text())
        assert summary["n_excluded"] == 0


class TestEstimateC0:
    def test_volume_estimate(self, tmp_path, capsys):
        path, _ = write_config(tmp_path, interpolant={"kind": "volume",
                                                      "theta": 2 * np.pi / 8},
                               c0_estimate={"n_trials": 120})
        assert main(["estimate-c0", str(path)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["stored_c0"] == pytest.approx(1.5 * payload["raw_max_ratio"])

    def test_check_requires_c0_for_volume(self, tmp_path):
        path, _ = write_config(tmp_path, interpolant={"kind": "volume",
                                                      "theta": 2 * np.pi / 8})
        assert main(["check", str(path)]) == 1


class TestSimulateTruthAndFit:
    def test_truth_then_fit(self, tmp_path, capsys):
        path, _ = write_config(tmp_path)
        assert main(["simulate-truth", str(path)]) == 0
        csv = tmp_path / "out" / "truth.csv"
        assert csv.exists()
        assert main(["fit", str(csv), "--column", "zeta_l2sq"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["kind"] == "exponential"
        assert payload["rate"] > 0

    def test_fit_missing_column(self, tmp_path):
        path, _ = write_config(tmp_path)
        main(["simulate-truth", str(path)])
        assert main(["fit", str(tmp_path / "out" / "truth.csv"),
                     "--column", "nope"]) == 1
