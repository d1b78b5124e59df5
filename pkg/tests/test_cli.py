import csv
import hashlib
import json
import os

import numpy as np
import pytest

from rmsplit.cli import _parse_grid, main
from rmsplit.environment import deserialize


def run(args):
    return main(args)


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


class TestGrid:
    def test_geometric(self):
        assert _parse_grid("64:4096:x2") == [64, 128, 256, 512, 1024, 2048, 4096]
        assert _parse_grid("64:4096:x4") == [64, 256, 1024, 4096]

    def test_list(self):
        assert _parse_grid("64,256,1024") == [64, 256, 1024]

    def test_bad(self):
        from rmsplit.cli import ConfigError
        with pytest.raises(ConfigError):
            _parse_grid("64:128:2")


class TestGenEnvAndMass:
    def test_roundtrip_with_manifest(self, tmp_path):
        out = str(tmp_path / "env.bin")
        assert run(["gen-env", "--seed", "7", "--horizon", "48",
                    "--measure", "size-biased", "--out", out]) == 0
        env = deserialize(open(out, "rb").read())
        assert env.horizon == 48 and env.seed == 7
        man = read_json(out + ".manifest.json")
        with open(out, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        assert man["outputs"][out] == digest
        assert man["command"] == "gen-env"

    def test_mass_csv_conserves(self, tmp_path):
        env_path = str(tmp_path / "env.bin")
        run(["gen-env", "--seed", "7", "--horizon", "64", "--out", env_path])
        out = str(tmp_path / "mass.csv")
        assert run(["mass", "--env", env_path, "--t", "64", "--out", out]) == 0
        rows = list(csv.DictReader(open(out)))
        total = sum(float(r["p"]) for r in rows if r["t"] == "64")
        assert abs(total - 1.0) < 1e-9

    def test_mass_binary_rows(self, tmp_path):
        from rmsplit.mass import unpack_rows
        env_path = str(tmp_path / "env.bin")
        run(["gen-env", "--seed", "7", "--horizon", "16", "--out", env_path])
        out = str(tmp_path / "mass.bin")
        assert run(["mass", "--env", env_path, "--t", "16", "--format", "bin",
                    "--out", out]) == 0
        field = unpack_rows(open(out, "rb").read())
        assert abs(sum(field.rows[16]) - 1.0) < 1e-9

    def test_collision_needs_force(self, tmp_path):
        out = str(tmp_path / "env.bin")
        assert run(["gen-env", "--seed", "1", "--horizon", "4", "--out", out]) == 0
        assert run(["gen-env", "--seed", "1", "--horizon", "4", "--out", out]) == 2
        assert run(["gen-env", "--seed", "1", "--horizon", "4", "--out", out,
                    "--force"]) == 0

    def test_missing_required_is_config_error(self, tmp_path):
        assert run(["gen-env", "--seed", "1",
                    "--out", str(tmp_path / "e.bin")]) == 2

    def test_runtime_error_exit_code(self, tmp_path):
        out = str(tmp_path / "m.csv")
        assert run(["mass", "--env", str(tmp_path / "missing.bin"),
                    "--t", "4", "--out", out]) == 1


class TestWalkAndCouple:
    def test_walk_csv(self, tmp_path):
        out = str(tmp_path / "w.csv")
        assert run(["walk", "--seed", "3", "--n", "16", "--walks", "2",
                    "--out", out]) == 0
        rows = list(csv.DictReader(open(out)))
        assert len(rows) == 2 * 17
        assert {r["walk"] for r in rows} == {"0", "1"}

    def test_couple_json_and_paths(self, tmp_path):
        out = str(tmp_path / "d.json")
        paths = str(tmp_path / "p.csv")
        assert run(["couple", "--seed", "3", "--n", "32", "--pairs", "2",
                    "--out", out, "--paths-out", paths]) == 0
        d = read_json(out)
        assert len(d["records"]) == 2
        rec = d["records"][0]
        assert {"zero_count", "a_n", "max_hold", "excursions", "holds"} <= set(rec)
        rows = list(csv.DictReader(open(paths)))
        assert list(rows[0]) == ["i", "y_X", "y_Xt", "Y", "v_at_X"]
        assert len(rows) == 33
        for r in rows:
            assert int(r["Y"]) == int(r["y_X"]) - int(r["y_Xt"])


class TestReports:
    def test_moment_json_has_alpha(self, tmp_path):
        out = str(tmp_path / "m.json")
        assert run(["moment", "--seed", "5", "--replicates", "400",
                    "--grid", "16,32,64", "--threads", "1", "--out", out]) == 0
        d = read_json(out)
        assert "alpha" in d and len(d["m2_mean"]) == 3

    def test_zeros_with_ordering(self, tmp_path):
        out = str(tmp_path / "z.json")
        assert run(["zeros", "--seed", "5", "--replicates", "300",
                    "--moment-replicates", "400", "--grid", "16,64",
                    "--threads", "1", "--out", out]) == 0
        d = read_json(out)
        assert "ordering_holds" in d and "excursion_count_mean" in d

    def test_annealed_and_clt(self, tmp_path):
        a = str(tmp_path / "a.json")
        assert run(["annealed", "--seed", "5", "--n", "6", "--replicates",
                    "2000", "--threads", "1", "--out", a]) == 0
        assert read_json(a)["max_abs_z"] < 6

        c = str(tmp_path / "c.json")
        assert run(["clt", "--seed", "3", "--horizon", "256", "--out", c,
                    "--threads", "1"]) == 0
        d = read_json(c)
        assert "ks" in d and "sigma2" in d

    def test_tails_report(self, tmp_path):
        out = str(tmp_path / "t.json")
        assert run(["tails", "--seed", "5", "--n", "64", "--replicates",
                    "4000", "--hold-replicates", "64", "--threads", "1",
                    "--out", out]) == 0
        d = read_json(out)
        assert d["fit"]["b"] > 0
        assert d["tau0"]["survival"][0] <= 1.0


def test_mu_prints_exact_value(capsys):
    assert run(["mu", "--t", "2"]) == 0
    assert capsys.readouterr().out.strip() == "0.25"
    assert run(["mu", "--t", "1"]) == 0
    assert capsys.readouterr().out.strip() == "0"


class TestConfigFile:
    def test_config_supplies_and_flags_win(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 9, "horizon": 8}))
        out = str(tmp_path / "e1.bin")
        assert run(["gen-env", "--config", str(cfg), "--out", out]) == 0
        assert deserialize(open(out, "rb").read()).horizon == 8
        out2 = str(tmp_path / "e2.bin")
        assert run(["gen-env", "--config", str(cfg), "--horizon", "4",
                    "--out", out2]) == 0
        assert deserialize(open(out2, "rb").read()).horizon == 4

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 9, "horizont": 8}))
        assert run(["gen-env", "--config", str(cfg),
                    "--out", str(tmp_path / "e.bin")]) == 2

    def test_unreadable_config(self, tmp_path):
        assert run(["gen-env", "--config", str(tmp_path / "nope.json"),
                    "--out", str(tmp_path / "e.bin")]) == 2


def test_rms_threads_env_default(monkeypatch):
    from rmsplit.parallel import default_threads
    monkeypatch.setenv("RMS_THREADS", "3")
    assert default_threads() == 3
    monkeypatch.delenv("RMS_THREADS")
    assert default_threads() >= 1


def test_no_tmp_files_left(tmp_path):
    out = str(tmp_path / "env.bin")
    run(["gen-env", "--seed", "1", "--horizon", "8", "--out", out])
    leftovers = [p for p in os.listdir(tmp_path) if p.endswith(".tmp")]
    assert leftovers == []
