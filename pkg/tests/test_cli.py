"""Command-line driver: config validation, artifact layout, seed
determinism, crash isolation and exit codes."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

import alrite.cli as cli
from alrite.cli import (ALPHA_GRID, BATCH_GRID, BETA_GRID, LAMBDA_GRID,
                        LAYER_GRID, WIDTH_GRID, ConfigError, main,
                        member_seed, sample_hyperparams, validate_config)


SMALL_CONFIG = {
    "seed": 3,
    "dataset": {"kind": "ihdp_like", "n": 160, "d": 5, "noise_scale": 0.5},
    "split": {"test_fraction": 0.2, "val_fraction": 0.3},
    "search": {"l0": 2, "l1": 2, "epochs": 8, "layer_grid": [1],
               "width_grid": [20], "batch_grid": [50],
               "alpha_grid": [0.0, 1.0], "beta_grid": [0.0, 1.0]},
    "fit": {"hp0": {"epochs": 6, "embed_layers": 1, "head_layers": 1,
                    "batch_size": 50},
            "hp1": {"epochs": 6, "embed_layers": 1, "head_layers": 1,
                    "batch_size": 50}},
    "bounds": {"instances": 3, "n": 40, "d": 2},
}


def write_config(tmp_path, overrides=None):
    raw = json.loads(json.dumps(SMALL_CONFIG))
    for key, val in (overrides or {}).items():
        raw[key] = val
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return str(path)


def test_grid_constants_match_documented_domains():
    assert ALPHA_GRID[0] == 0.0 and len(ALPHA_GRID) == 10
    assert np.isclose(ALPHA_GRID[1], 1e-2) and np.isclose(ALPHA_GRID[-1], 1e2)
    assert BETA_GRID[0] == 0.0 and np.isclose(BETA_GRID[-1], 10.0)
    assert LAYER_GRID == (1, 2, 3, 4, 5)
    assert WIDTH_GRID == (20, 50, 100, 200)
    assert BATCH_GRID == (50, 100, 200, 500)
    assert len(LAMBDA_GRID) == 13
    assert np.isclose(LAMBDA_GRID[0], 1e-2) and np.isclose(LAMBDA_GRID[-1], 1e4)


@pytest.mark.parametrize("raw,fragment", [
    ({"seed": -1}, "seed"),
    ({"dataset": {"kind": "mystery"}}, "dataset.kind"),
    ({"dataset": {"kind": "csv"}}, "dataset.path"),
    ({"split": {"test_fraction": 1.5}}, "split.test_fraction"),
    ({"search": {"l0": 0}}, "search.l0"),
    ({"search": {"alpha_grid": [0.37]}}, "search.alpha_grid"),
    ({"selection": {"proxy": "magic"}}, "selection.proxy"),
    ({"ensemble": {"mode": "vote"}}, "ensemble.mode"),
    ({"surprise": 1}, "surprise"),
])
def test_validate_config_names_offending_field(raw, fragment):
    base = {"seed": 0, "dataset": {"kind": "ihdp_like"}}
    base.update(raw)
    with pytest.raises(ConfigError, match=fragment.replace(".", r"\.")):
        validate_config(base)


def test_validate_config_defaults():
    cfg = validate_config({"dataset": {"kind": "toy"}})
    assert cfg.seed == 0
    assert cfg.selection["proxy"] == "mu_risk"
    assert cfg.ensemble["mode"] == "top_k"


def test_member_seed_counter_based():
    assert member_seed(0, 1) == member_seed(0, 1)
    assert member_seed(0, 1) != member_seed(0, 2)
    assert member_seed(0, 1) != member_seed(1, 1)


def test_sample_hyperparams_respects_subgrids():
    rng = np.random.default_rng(0)
    search = {"alpha_grid": (0.0, 1.0), "beta_grid": (1.0,), "layer_grid": (1, 2),
              "width_grid": (20,), "batch_grid": (50,), "epochs": 5}
    for _ in range(20):
        hp = sample_hyperparams(rng, search)
        assert hp.alpha in (0.0, 1.0)
        assert hp.beta == 1.0
        assert hp.embed_layers in (1, 2) and hp.head_layers in (1, 2)
        assert hp.embed_width == 20 and hp.batch_size == 50 and hp.epochs == 5


def test_generate_writes_dataset_and_manifest(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["generate", "--config", cfg, "--out", str(out)]) == 0
    rows = (out / "dataset.csv").read_text().strip().split("\n")
    assert len(rows) == 161  # header + n
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["n"] == 160 and manifest["d"] == 5 and manifest["has_truth"]


def test_generate_byte_identical_reruns(tmp_path):
    cfg = write_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["generate", "--config", cfg, "--out", str(a)]) == 0
    assert main(["generate", "--config", cfg, "--out", str(b)]) == 0
    assert (a / "dataset.csv").read_bytes() == (b / "dataset.csv").read_bytes()


def test_generate_refuses_csv_kind(tmp_path):
    cfg = write_config(tmp_path, {"dataset": {"kind": "csv", "path": "x.csv"}})
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "r")]) == 1


def run_sweep(tmp_path, name, extra_args=()):
    cfg = write_config(tmp_path)
    out = tmp_path / name
    assert main(["generate", "--config", cfg, "--out", str(out)]) == 0
    assert main(["sweep", "--config", cfg, "--out", str(out), *extra_args]) == 0
    return cfg, out


def test_sweep_artifacts_and_candidate_count(tmp_path):
    _, out = run_sweep(tmp_path, "run")
    sweep = json.loads((out / "sweep.json").read_text())
    assert len(sweep["members"]) == 4
    assert sweep["n_candidates"] == 4  # 2x2 all pairs
    with open(out / "candidates.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["candidate_id", "i0", "i1"]
    assert len(rows) == 5
    # truth was available, so validation PEHE must be populated
    assert all(float(r[-1]) >= 0 for r in rows[1:])
    assert (out / "eta.json").exists() and (out / "split.json").exists()
    assert len(list((out / "models").glob("member_*.json"))) == 4


def test_sweep_master_seed_determinism(tmp_path):
    _, out_a = run_sweep(tmp_path, "a")
    _, out_b = run_sweep(tmp_path, "b")
    assert (out_a / "candidates.csv").read_bytes() == (out_b / "candidates.csv").read_bytes()
    assert (out_a / "sweep.json").read_bytes() == (out_b / "sweep.json").read_bytes()


def test_sweep_crash_isolation(tmp_path, monkeypatch):
    real = cli.train_pipeline

    def flaky(dataset, split_idx, role, hp, seed):
        if seed == member_seed(3, 1):  # first control-driven member
            raise RuntimeError("synthetic failure")
        return real(dataset, split_idx, role, hp, seed)

    monkeypatch.setattr(cli, "train_pipeline", flaky)
    cfg = write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["generate", "--config", cfg, "--out", str(out)]) == 0
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
    sweep = json.loads((out / "sweep.json").read_text())
    statuses = [m["status"] for m in sweep["members"]]
    assert statuses.count("failed") == 1
    failed = next(m for m in sweep["members"] if m["status"] == "failed")
    assert "synthetic failure" in failed["error"]
    assert sweep["n_candidates"] == 2  # 1 surviving control x 2 treatment


def test_select_and_ensemble_and_report(tmp_path):
    cfg, out = run_sweep(tmp_path, "run")
    assert main(["select", "--config", cfg, "--out", str(out)]) == 0
    sel = json.loads((out / "selection.json").read_text())
    assert sel["proxy"] == "mu_risk"
    with open(out / "candidates.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    col = rows[0].index("mu_risk")
    scores = [float(r[col]) for r in rows[1:]]
    assert sel["score"] == min(scores)

    assert main(["ensemble", "--config", cfg, "--out", str(out)]) == 0
    with open(out / "ensemble_curve.csv", newline="") as fh:
        curve = list(csv.reader(fh))
    assert curve[0] == ["candidate", "val_mu_risk", "test_pehe"]
    assert len(curve) == 3  # header + K in {1, 2}
    ens = json.loads((out / "ensemble.json").read_text())
    assert ens["mode"] == "top_k"

    assert main(["bounds", "--config", cfg, "--out", str(out)]) == 0
    assert main(["fit", "--config", cfg, "--out", str(out)]) == 0
    assert main(["evaluate", "--config", cfg, "--out", str(out)]) == 0
    ev = json.loads((out / "evaluation.json").read_text())
    assert "sqrt_pehe" in ev and "orpol" in ev

    assert main(["report", "--config", cfg, "--out", str(out)]) == 0
    digest = (out / "digest.txt").read_text()
    assert "missing" not in digest
    assert (out / "rank_agreement.csv").exists()
    assert (out / "selection_summary.csv").exists()


def test_report_flags_missing_artifacts(tmp_path):
    out = tmp_path / "empty"
    out.mkdir()
    assert main(["report", "--out", str(out)]) == 0
    digest = (out / "digest.txt").read_text()
    for artifact in ("manifest.json", "sweep.json", "evaluation.json",
                     "ensemble_curve.csv", "bounds.csv"):
        assert f"missing: {artifact}" in digest


def test_exit_codes(tmp_path):
    missing = str(tmp_path / "nope.json")
    assert main(["generate", "--config", missing, "--out", str(tmp_path / "r")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["generate", "--config", str(bad), "--out", str(tmp_path / "r")]) == 1
    cfg = write_config(tmp_path)
    # select before sweep: missing artifact is a runtime failure, not config
    assert main(["select", "--config", cfg, "--out", str(tmp_path / "void")]) == 2
    assert main(["evaluate", "--config", cfg, "--out", str(tmp_path / "void")]) == 2


def test_seed_override(tmp_path):
    cfg = write_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["generate", "--config", cfg, "--out", str(a), "--seed", "11"]) == 0
    assert main(["generate", "--config", cfg, "--out", str(b)]) == 0
    assert (a / "dataset.csv").read_bytes() != (b / "dataset.csv").read_bytes()
    assert json.loads((a / "manifest.json").read_text())["seed"] == 11
