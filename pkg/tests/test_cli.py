import csv
import json

import numpy as np
import pytest

from pscd.cli import DEFAULTS, EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, _rejoin_negative_lists, blob_sha1, main


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


class TestHelpers:
    def test_blob_sha1_matches_git(self):
        # values from `git hash-object --stdin`
        assert blob_sha1(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"
        assert blob_sha1(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"

    def test_negative_lists(self):
        assert _rejoin_negative_lists(["landscape", "--gamma", "-0.5,0,1"]) == ["landscape", "--gamma=-0.5,0,1"]
        assert _rejoin_negative_lists(["train", "--seed", "-1"]) == ["train", "--seed", "-1"]

    def test_defaults_cover_all_commands(self):
        assert set(DEFAULTS) == {"train", "landscape", "contamination", "mmd-bench", "estimator-check",
                                 "sgd-convergence", "dump-dataset"}


class TestDumpDataset:
    def test_manifest_hashes(self, tmp_path):
        out = tmp_path / "d"
        assert main(["dump-dataset", "--dataset", "swissroll", "--n", "50", "--binary", "--out", str(out)]) == EXIT_OK
        m = manifest(out)
        assert m["command"] == "dump-dataset" and m["seed"] == 0
        paths = {a["path"] for a in m["artifacts"]}
        assert paths == {"dataset.csv", "dataset.bin"}
        for a in m["artifacts"]:
            assert a["sha1"] == blob_sha1((out / a["path"]).read_bytes())
        raw = (out / "dataset.bin").read_bytes()
        assert np.frombuffer(raw, "<f8").shape == (100,)
        assert (out / "dataset.csv").read_bytes().count(b"\r") == 0

    def test_config_then_flags(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"dataset": "rings", "n": 7}))
        out = tmp_path / "d"
        assert main(["dump-dataset", "--config", str(cfg), "--n", "3", "--out", str(out)]) == EXIT_OK
        m = manifest(out)
        assert m["config"]["dataset"] == "rings" and m["config"]["n"] == 3
        assert len(read_csv(out / "dataset.csv")) == 4


class TestExperiments:
    def test_estimator_check(self, tmp_path):
        out = tmp_path / "e"
        rc = main(["estimator-check", "--sizes", "1000,100000", "--trials", "4", "--out", str(out)])
        assert rc == EXIT_OK
        rows = read_csv(out / "estimator_check.csv")
        assert rows[0] == ["N", "error"]
        errs = [float(r[1]) for r in rows[1:]]
        assert errs[0] > 3 * errs[1]
        sc = read_csv(out / "sample_complexity.csv")
        assert sc[1][3] == "717765508434"

    def test_landscape_argmins_coincide(self, tmp_path):
        out = tmp_path / "l"
        assert main(["landscape", "--gamma", "-0.5,0,0.1,0.5,1,2", "--out", str(out)]) == EXIT_OK
        files = sorted(p.name for p in out.glob("landscape_gamma_*.csv"))
        assert len(files) == 6
        argmins = read_csv(out / "argmins.csv")[1:]
        assert {(float(r[1]), round(float(r[2]), 12)) for r in argmins} == {(0.5, 1.0)}
        assert len(manifest(out)["artifacts"]) == 7

    def test_contamination(self, tmp_path):
        out = tmp_path / "c"
        rc = main(["contamination", "--ratios", "0.1", "--gammas", "0,1", "--iterations", "600",
                   "--batch-size", "500", "--out", str(out)])
        assert rc == EXIT_OK
        rows = read_csv(out / "contamination.csv")
        assert rows[0] == ["ratio", "gamma", "kl", "mu", "sigma"]
        kl = {float(r[1]): float(r[2]) for r in rows[1:]}
        assert kl[0.0] >= 0.05 and kl[1.0] <= 0.01

    def test_sgd_reproducible(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["sgd-convergence", "--horizons", "16,64", "--trials", "5", "--seed", "3",
                         "--out", str(out)]) == EXIT_OK
        assert (a / "sgd_convergence.csv").read_bytes() == (b / "sgd_convergence.csv").read_bytes()
        assert manifest(a)["artifacts"] == manifest(b)["artifacts"]

    def test_train_1d(self, tmp_path):
        out = tmp_path / "t"
        assert main(["train", "--dataset", "contaminated", "--iterations", "40", "--n", "500",
                     "--out", str(out)]) == EXIT_OK
        assert read_csv(out / "trace.csv")[0] == ["iter", "grad_norm", "loss", "metric"]
        assert json.loads((out / "model.json").read_text())["kind"] == "gaussian"


class TestErrors:
    def test_bad_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        out = tmp_path / "o"
        assert main(["sgd-convergence", "--config", str(cfg), "--out", str(out)]) == EXIT_INVALID
        rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert rec["error"] == "pscd.cli.ConfigError"

    def test_unparseable_config(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("{not json")
        assert main(["dump-dataset", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_INVALID

    def test_invalid_value(self, tmp_path, capsys):
        out = tmp_path / "o"
        assert main(["dump-dataset", "--dataset", "spiral", "--out", str(out)]) == EXIT_INVALID
        rec = json.loads((out / "error.json").read_text())
        assert rec["error"] == "pscd.errors.InvalidSpec" and rec["raised_in"] == "pscd.datasets"

    def test_unknown_flag(self):
        assert main(["dump-dataset", "--colour", "red"]) == EXIT_INVALID

    def test_runtime_failure(self, tmp_path, capsys):
        out = tmp_path / "o"
        rc = main(["train", "--dataset", "mog1d", "--iterations", "20", "--lr", "1e6", "--batch-size", "8",
                   "--n", "100", "--out", str(out)])
        assert rc == EXIT_RUNTIME
        rec = json.loads((out / "error.json").read_text())
        assert rec["error"] in ("pscd.errors.NumericalError", "pscd.errors.DivergedChain")
