"""Full-pipeline behavior: determinism, identities, report serialization."""

import copy
import json

import numpy as np
import pytest

from overunlearn.config import config_from_dict
from overunlearn.pipeline import run, run_seed
from overunlearn.report import (
    canonical_json,
    load_report,
    render_figures,
    report_csv_rows,
    strip_timing,
    write_report,
)


def quick_raw(**over):
    raw = {
        "name": "pipe",
        "dataset": {"kind": "blobs", "classes": 3, "train_per_class": 60,
                    "test_per_class": 40, "dim": 4, "separation": 3.0},
        "model": {"arch": "mlp", "hidden": [12]},
        "train": {"epochs": 8, "batch_size": 32, "learning_rate": 2e-3,
                  "early_stop_patience": 8},
        "unlearn": {"method": "gradient_overwrite", "tau": 5e-5, "iterations": 3},
        "attack": {"kind": "push-II", "eta": 0.02, "max_iters": 40,
                   "coords_per_iter": 4},
        "unlearned_class": 0,
        "unlearned_fraction": 0.3,
        "seeds": [0, 1],
    }
    for key, value in over.items():
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node[p]
        node[parts[-1]] = value
    return raw


@pytest.fixture(scope="module")
def quick_report():
    return run(config_from_dict(quick_raw()))


def test_run_reports_are_byte_identical_excluding_timing(quick_report):
    again = run(config_from_dict(quick_raw()))
    assert (canonical_json(strip_timing(quick_report))
            == canonical_json(strip_timing(again)))


def test_attack_none_gives_identical_alphas():
    report = run(config_from_dict(quick_raw(**{"attack.kind": "none"})))
    for entry in report["seeds"]:
        assert entry["alpha1"] == entry["alpha2"]
        assert not entry["over_unlearning"]
        assert entry["margin"] == 0.0


def test_report_schema_and_query_accounting(quick_report):
    assert quick_report["schema_version"] == 1
    for entry in quick_report["seeds"]:
        assert entry["attack_report"]["queries_total"] == entry["oracle_queries"]
        assert 0.0 <= entry["alpha1"] <= 1.0
        assert 0.0 <= entry["alpha2"] <= 1.0
        hist = entry["before"]["histogram_class_a"]
        assert sum(hist) == 40  # class-A test subset size


def test_report_round_trip(tmp_path, quick_report):
    paths = write_report(quick_report, tmp_path / "out")
    loaded = load_report(paths["json"])
    assert loaded == json.loads(canonical_json(quick_report))


def test_csv_degradation_matches_json(tmp_path, quick_report):
    rows = report_csv_rows(quick_report)
    by_seed = {e["seed"]: e for e in quick_report["seeds"]}
    assert len(rows) == len(quick_report["seeds"]) * 3
    for row in rows:
        entry = by_seed[row["seed"]]
        cls = row["class"]
        expect = (entry["honest"]["per_class"][cls]
                  - entry["attack"]["per_class"][cls])
        assert float(row["degradation"]) == expect
        assert float(row["honest_acc"]) == entry["honest"]["per_class"][cls]


def test_figures_rendered(tmp_path, quick_report):
    written = render_figures(quick_report, tmp_path / "figs")
    assert len(written) == 2
    for path in written:
        assert path.exists() and path.stat().st_size > 1000


def test_write_report_layout(tmp_path, quick_report):
    out = tmp_path / "run1"
    paths = write_report(quick_report, out)
    assert (out / "report.json").exists()
    assert (out / "report.csv").exists()
    assert (out / "figures" / "prediction_histogram.png").exists()
    assert (out / "figures" / "per_class_accuracy.png").exists()
    assert paths["json"].read_text().endswith("\n")


def test_run_seed_determinism_and_stealth_fields():
    cfg = config_from_dict(quick_raw(**{"attack.kind": "push-I"}))
    r1, _ = run_seed(cfg, 0)
    r2, _ = run_seed(cfg, 0)
    assert canonical_json(r1) == canonical_json(r2)
    assert r1["stealth"]["stealthy_label_rate"] == 1.0
    assert r1["stealth"]["l2_max"] <= cfg.attack.l2_budget


def test_blend_pipeline_records_stealth():
    cfg = config_from_dict(quick_raw(**{"attack.kind": "blend",
                                        "attack.lam": 0.5,
                                        "attack.donor_class": 1}))
    r, _ = run_seed(cfg, 0)
    assert r["attack_report"]["kind"] == "blend"
    assert r["stealth"]["stealthy_label_rate"] == 1.0
    assert r["oracle_queries"] == r["unlearned_count"]


def test_targeted_pipeline_runs():
    cfg = config_from_dict(quick_raw(**{"attack.kind": "push-targeted",
                                        "attack.target_class": 1,
                                        "attack.mode": "II"}))
    r, _ = run_seed(cfg, 0)
    assert r["attack_report"]["target_class"] == 1


def test_finetune_pipeline_runs():
    cfg = config_from_dict(quick_raw(**{"unlearn.method": "finetune",
                                        "unlearn.epochs": 2}))
    r, _ = run_seed(cfg, 0)
    assert 0.0 <= r["alpha2"] <= 1.0


def test_image_pipeline_reports_ssim():
    raw = quick_raw(**{"attack.kind": "push-I", "attack.eta": 0.15,
                       "attack.coords_per_iter": 32, "attack.max_iters": 60,
                       "unlearned_fraction": 0.2})
    raw["dataset"] = {"kind": "synth_images", "classes": 3, "train_per_class": 30,
                      "test_per_class": 10, "image_size": 12}
    r, _ = run_seed(config_from_dict(raw), 0)
    assert "ssim_mean" in r["stealth"]
    assert -1.0 <= r["stealth"]["ssim_mean"] <= 1.0
