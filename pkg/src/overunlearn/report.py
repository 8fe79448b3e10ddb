"""Report serialization (JSON + per-class CSV) and figure rendering."""

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402


def canonical_json(payload) -> str:
    """Stable serialization; identical payloads give identical bytes."""
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False)


def strip_timing(report: dict) -> dict:
    """The report minus its timing block (the deterministic payload)."""
    return {k: v for k, v in report.items() if k != "timing"}


def report_csv_rows(report: dict):
    """One row per (seed, class): accuracies plus the honest-minus-attack
    degradation, mirroring the JSON values exactly."""
    rows = []
    for entry in report["seeds"]:
        per_before = entry["before"]["per_class"]
        per_honest = entry["honest"]["per_class"]
        per_attack = entry["attack"]["per_class"]
        for cls in range(len(per_honest)):
            b, h, a = per_before[cls], per_honest[cls], per_attack[cls]
            rows.append({
                "seed": entry["seed"],
                "class": cls,
                "before_acc": "" if b is None else repr(b),
                "honest_acc": "" if h is None else repr(h),
                "attack_acc": "" if a is None else repr(a),
                "degradation": "" if (h is None or a is None) else repr(h - a),
            })
    return rows


def write_csv(report: dict, path) -> Path:
    path = Path(path)
    rows = report_csv_rows(report)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["seed", "class", "before_acc", "honest_acc",
                            "attack_acc", "degradation"])
        writer.writeheader()
        writer.writerows(rows)
    return path


def render_figures(report: dict, fig_dir) -> list:
    """Prediction-histogram and per-class-accuracy figures, one PNG each."""
    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    seeds = report["seeds"]
    class_a = report["config"]["unlearned_class"]
    n_classes = len(seeds[0]["honest"]["per_class"])
    written = []

    hist = {
        stage: np.mean([s[stage]["histogram_class_a"] for s in seeds], axis=0)
        for stage in ("before", "honest", "attack")
    }
    x = np.arange(n_classes)
    width = 0.27
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for i, (stage, counts) in enumerate(hist.items()):
        ax.bar(x + (i - 1) * width, counts, width, label=stage)
    ax.set_xlabel("predicted class")
    ax.set_ylabel(f"mean count over class-{class_a} test samples")
    ax.set_title(f"{report['name']}: predictions on class {class_a}")
    ax.set_xticks(x)
    ax.legend()
    fig.tight_layout()
    out = fig_dir / "prediction_histogram.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    written.append(out)

    def med(stage):
        vals = np.array([[np.nan if v is None else v for v in s[stage]["per_class"]]
                         for s in seeds])
        return np.nanmedian(vals, axis=0)

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(x - width / 2, med("honest"), width, label="honest unlearning")
    ax.bar(x + width / 2, med("attack"), width, label="malicious unlearning")
    ax.plot(x, med("before"), "k.--", label="before unlearning")
    ax.set_xlabel("class")
    ax.set_ylabel("median test accuracy")
    ax.set_ylim(0, 1.05)
    ax.set_title(f"{report['name']}: per-class accuracy")
    ax.set_xticks(x)
    ax.legend()
    fig.tight_layout()
    out = fig_dir / "per_class_accuracy.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    written.append(out)
    return written


def write_report(report: dict, out_dir) -> dict:
    """Write report.json, report.csv and figures/ under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"json": out_dir / "report.json", "csv": out_dir / "report.csv"}
    paths["json"].write_text(canonical_json(report) + "\n")
    write_csv(report, paths["csv"])
    paths["figures"] = render_figures(report, out_dir / "figures")
    return paths


def load_report(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing report file: {path}")
    return json.loads(path.read_text())
