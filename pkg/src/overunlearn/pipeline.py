"""End-to-end experiment pipeline: train, attack, unlearn, evaluate.

Every stage derives its RNG stream from the experiment seed, so a full run()
and the same stages invoked separately through the CLI produce identical
artifacts. All randomness flows through numpy Generators seeded here;
nothing touches global RNG state.
"""

import time

import numpy as np

from . import metrics
from .attacks import BlendParams, PushParams, craft_blended_request, craft_push_request
from .config import ConfigError, ExperimentConfig, config_to_dict
from .data import (
    Dataset,
    SplitSpec,
    affine_rescale,
    class_subset,
    draw_class_samples,
    load_cifar10,
    load_idx,
    split,
    synth_blobs,
    synth_images,
)
from .engine.layers import LayerSpec
from .engine.model import init_model
from .engine.train import TrainConfig, train
from .service import ServerHandle, UnlearnRequest
from .unlearn import FinetuneConfig, OverwriteConfig

SCHEMA_VERSION = 1

_STAGE_OFFSETS = {
    "dataset": 1,
    "dataset_test": 2,
    "split": 3,
    "model": 4,
    "train": 5,
    "draw": 6,
    "attack": 7,
    "unlearn": 8,
    "donor": 9,
}


def stage_seed(base_seed: int, stage: str) -> int:
    return base_seed * 100 + _STAGE_OFFSETS[stage]


# ---------------------------------------------------------------------------
# dataset / model construction
# ---------------------------------------------------------------------------

def build_dataset(dcfg, seed):
    """Returns (train_pool, test_set) for one experiment seed."""
    if dcfg.kind == "blobs":
        train = synth_blobs(dcfg.classes, dcfg.train_per_class, dcfg.dim,
                            dcfg.separation, stage_seed(seed, "dataset"))
        test = synth_blobs(dcfg.classes, dcfg.test_per_class, dcfg.dim,
                           dcfg.separation, stage_seed(seed, "dataset_test"))
        if dcfg.unit_box:
            # box_margin sigmas beyond the farthest centroid; tail samples clip
            bound = dcfg.separation + dcfg.box_margin
            train = affine_rescale(train, -bound, bound)
            test = affine_rescale(test, -bound, bound)
        return train, test
    if dcfg.kind == "synth_images":
        train = synth_images(dcfg.classes, dcfg.train_per_class, dcfg.image_size,
                             stage_seed(seed, "dataset"))
        test = synth_images(dcfg.classes, dcfg.test_per_class, dcfg.image_size,
                            stage_seed(seed, "dataset_test"))
        return train, test
    if dcfg.kind == "cifar10":
        parts = [load_cifar10(p) for p in dcfg.train_paths]
        feats = np.concatenate([p.features for p in parts])
        labels = np.concatenate([p.labels for p in parts])
        train = Dataset(feats, labels, 10, name="cifar10-train",
                        provenance="cifar10-binary")
        if not dcfg.test_path:
            raise ConfigError("dataset.test_path: required for cifar10")
        test = load_cifar10(dcfg.test_path)
        return (_cap_per_class(train, dcfg.max_per_class, seed),
                _cap_per_class(test, dcfg.max_per_class, seed))
    if dcfg.kind == "idx":
        train = load_idx(dcfg.images_path, dcfg.labels_path)
        if not (dcfg.test_images_path and dcfg.test_labels_path):
            raise ConfigError("dataset.test_images_path/test_labels_path: required for idx")
        test = load_idx(dcfg.test_images_path, dcfg.test_labels_path)
        return (_cap_per_class(train, dcfg.max_per_class, seed),
                _cap_per_class(test, dcfg.max_per_class, seed))
    raise ConfigError(f"dataset.kind: unknown kind {dcfg.kind!r}")


def _cap_per_class(ds, cap, seed):
    if not cap:
        return ds
    rng = np.random.default_rng(stage_seed(seed, "dataset"))
    keep = []
    for c in range(ds.class_count):
        idx = np.flatnonzero(ds.labels == c)
        rng.shuffle(idx)
        keep.extend(idx[:cap])
    return ds.subset(np.sort(np.asarray(keep)))


def build_layers(mcfg, input_shape, class_count):
    layers = []
    if mcfg.arch == "mlp":
        if len(input_shape) > 1:
            layers.append(LayerSpec("flatten"))
        for width in mcfg.hidden:
            layers.append(LayerSpec("dense", units=int(width)))
            layers.append(LayerSpec("relu"))
    elif mcfg.arch == "vgg_small":
        for _ in range(mcfg.blocks):
            layers += [LayerSpec("conv2d", filters=mcfg.filters, kernel_size=3),
                       LayerSpec("relu"),
                       LayerSpec("conv2d", filters=mcfg.filters, kernel_size=3),
                       LayerSpec("relu"),
                       LayerSpec("maxpool2d", pool_size=2)]
        layers += [LayerSpec("flatten"),
                   LayerSpec("dense", units=mcfg.dense_units),
                   LayerSpec("relu")]
    elif mcfg.arch == "resnet_small":
        layers += [LayerSpec("conv2d", filters=mcfg.filters, kernel_size=3),
                   LayerSpec("relu"),
                   LayerSpec("residual_block", filters=mcfg.filters),
                   LayerSpec("residual_block", filters=mcfg.filters),
                   LayerSpec("residual_block", filters=2 * mcfg.filters,
                             downsample=True),
                   LayerSpec("flatten"),
                   LayerSpec("dense", units=mcfg.dense_units),
                   LayerSpec("relu")]
    else:
        raise ConfigError(f"model.arch: unknown arch {mcfg.arch!r}")
    layers += [LayerSpec("dense", units=class_count), LayerSpec("softmax_output")]
    return layers


def train_model(cfg: ExperimentConfig, seed: int):
    """Dataset build + split + seeded training; returns (model, history, context)."""
    train_pool, test_set = build_dataset(cfg.dataset, seed)
    tr, val, _ = split(train_pool, SplitSpec(0.8, 0.2, rng_seed=stage_seed(seed, "split")))
    layers = build_layers(cfg.model, tr.feature_shape, train_pool.class_count)
    model = init_model(layers, tr.feature_shape, train_pool.class_count,
                       rng_seed=stage_seed(seed, "model"))
    tcfg = TrainConfig(epochs=cfg.train.epochs, batch_size=cfg.train.batch_size,
                       learning_rate=cfg.train.learning_rate,
                       early_stop_patience=cfg.train.early_stop_patience,
                       rng_seed=stage_seed(seed, "train"))
    trained, history = train(model, tr, val, tcfg)
    context = {"train": tr, "val": val, "test": test_set, "pool": train_pool}
    return trained, history, context


def draw_unlearn_set(cfg: ExperimentConfig, train_ds, seed: int) -> Dataset:
    members = class_subset(train_ds, cfg.unlearned_class)
    count = max(1, int(round(cfg.unlearned_fraction * len(members))))
    return draw_class_samples(train_ds, cfg.unlearned_class, count,
                              stage_seed(seed, "draw"))


def build_unlearn_config(cfg: ExperimentConfig, seed: int):
    u = cfg.unlearn
    if u.method == "gradient_overwrite":
        return OverwriteConfig(tau=u.tau, iterations=u.iterations,
                               noise_kind=u.noise_kind,
                               rng_seed=stage_seed(seed, "unlearn"))
    return FinetuneConfig(epochs=u.epochs, learning_rate=u.learning_rate,
                          rng_seed=stage_seed(seed, "unlearn"))


def build_push_params(cfg: ExperimentConfig, seed: int, targeted: bool) -> PushParams:
    a = cfg.attack
    return PushParams(c=a.c, k=a.k, eta=a.eta, h=a.h, max_iters=a.max_iters,
                      l2_budget=a.l2_budget, coords_per_iter=a.coords_per_iter,
                      target_class=a.target_class if targeted else None,
                      rng_seed=stage_seed(seed, "attack"))


def _donor_pool(cfg: ExperimentConfig, d_u, seed: int) -> Dataset:
    """Attacker-owned donor samples: a fresh draw from the donor class."""
    d = cfg.dataset
    count = cfg.attack.donor_count or len(d_u)
    if d.kind == "blobs":
        pool = synth_blobs(d.classes, max(count, 1), d.dim, d.separation,
                           stage_seed(seed, "donor"))
        if d.unit_box:
            bound = d.separation + d.box_margin
            pool = affine_rescale(pool, -bound, bound)
    elif d.kind == "synth_images":
        pool = synth_images(d.classes, max(count, 1), d.image_size,
                            stage_seed(seed, "donor"))
    else:
        raise ConfigError(
            "attack.kind: blend on file-backed datasets needs a synthetic donor "
            "source; use blobs or synth_images")
    donors = class_subset(pool, cfg.attack.donor_class)
    return donors


def craft_attack_request(cfg: ExperimentConfig, d_u: Dataset, oracle, seed: int):
    """Build the request the (possibly malicious) user submits; returns
    (request, attack_report_or_None)."""
    kind = cfg.attack.kind
    if kind == "none":
        return UnlearnRequest(d_u.features, d_u.labels, requester="honest"), None
    if kind == "blend":
        donors = _donor_pool(cfg, d_u, seed)
        params = BlendParams(lam=cfg.attack.lam, rng_seed=stage_seed(seed, "attack"))
        req = craft_blended_request(d_u, donors, params, oracle)
        report = {
            "kind": "blend",
            "lam": cfg.attack.lam,
            "donor_class": cfg.attack.donor_class,
            "samples": len(d_u),
            "queries_total": len(d_u),
            "stealthy_label_rate": 1.0,
            "l2_mean": float(np.mean(np.linalg.norm(
                (req.features - d_u.features).reshape(len(d_u), -1), axis=1))),
        }
        return req, report
    if kind in ("push-I", "push-II", "push-targeted"):
        targeted = kind == "push-targeted"
        mode = cfg.attack.mode if targeted else ("I" if kind == "push-I" else "II")
        params = build_push_params(cfg, seed, targeted)
        req, report = craft_push_request(d_u, oracle, params, mode)
        report["kind"] = kind
        return req, report
    raise ConfigError(f"attack.kind: unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# full run
# ---------------------------------------------------------------------------

def _eval_block(server: ServerHandle, class_a: int) -> dict:
    per_class = server.evaluate("per_class")
    return {
        "overall": server.evaluate("overall"),
        "per_class": [None if np.isnan(v) else float(v) for v in per_class],
        "class_a": server.evaluate(class_a),
        "histogram_class_a": [int(c) for c in server.test_class_histogram(class_a)],
    }


def _stealth_block(cfg, d_u, request, attack_report) -> dict:
    flat_ref = d_u.features.reshape(len(d_u), -1)
    flat_sub = request.features.reshape(len(request), -1)
    deltas = np.linalg.norm(flat_sub - flat_ref, axis=1)
    out = {
        "l2_mean": float(deltas.mean()),
        "l2_max": float(deltas.max()),
        "linf_max": float(np.abs(flat_sub - flat_ref).max()),
    }
    if attack_report is not None and "stealthy_label_rate" in attack_report:
        out["stealthy_label_rate"] = attack_report["stealthy_label_rate"]
    if d_u.features.ndim == 4:  # [N, H, W, C] images: perceptual similarity
        vals = [metrics.ssim(d_u.features[i], request.features[i])
                for i in range(len(d_u))]
        out["ssim_mean"] = float(np.mean(vals))
        out["ssim_min"] = float(np.min(vals))
    return out


def run_seed(cfg: ExperimentConfig, seed: int) -> dict:
    """One full pipeline pass; deterministic given (cfg, seed)."""
    t0 = time.perf_counter()
    model, history, ctx = train_model(cfg, seed)
    d_u = draw_unlearn_set(cfg, ctx["train"], seed)
    ucfg = build_unlearn_config(cfg, seed)
    server = ServerHandle(model, ctx["test"], cfg.unlearn.method, ucfg)
    class_a = cfg.unlearned_class

    before = _eval_block(server, class_a)

    honest_req = UnlearnRequest(d_u.features, d_u.labels, requester="honest")
    server_honest = server.submit_unlearn_request(honest_req)
    honest = _eval_block(server_honest, class_a)

    oracle = server.oracle()
    attack_req, attack_report = craft_attack_request(cfg, d_u, oracle, seed)
    server_attacked = server.submit_unlearn_request(attack_req)
    attacked = _eval_block(server_attacked, class_a)

    alpha1 = honest["class_a"]
    alpha2 = attacked["class_a"]
    detected, margin = metrics.over_unlearning_detected(alpha1, alpha2)

    if attack_report is not None:
        assert attack_report["queries_total"] == oracle.query_count, \
            "attack-reported query budget diverged from the oracle counter"

    result = {
        "seed": seed,
        "epochs_run": len(history),
        "unlearned_count": len(d_u),
        "before": before,
        "honest": honest,
        "attack": attacked,
        "alpha1": alpha1,
        "alpha2": alpha2,
        "margin": margin,
        "over_unlearning": bool(detected),
        "attack_report": _strip_per_sample(attack_report),
        "stealth": _stealth_block(cfg, d_u, attack_req, attack_report),
        "oracle_queries": oracle.query_count,
    }
    timing = {"wall_clock_s": time.perf_counter() - t0}
    return result, timing


def _strip_per_sample(report, keep=8):
    """Per-sample logs can be large; keep a deterministic prefix in the report."""
    if report is None:
        return None
    out = {k: v for k, v in report.items() if k != "per_sample"}
    if "per_sample" in report:
        out["per_sample_head"] = report["per_sample"][:keep]
    return out


def run(cfg: ExperimentConfig) -> dict:
    """Run all seeds; returns the nested report (timing kept in its own block)."""
    t0 = time.perf_counter()
    seed_results = []
    timings = []
    for seed in cfg.seeds:
        result, timing = run_seed(cfg, seed)
        seed_results.append(result)
        timings.append(timing)
    margins = [r["margin"] for r in seed_results]
    honest_drop = [r["before"]["overall"] - r["honest"]["overall"]
                   for r in seed_results]
    report = {
        "schema_version": SCHEMA_VERSION,
        "name": cfg.name,
        "config": config_to_dict(cfg),
        "seeds": seed_results,
        "summary": {
            "median_alpha1": float(np.median([r["alpha1"] for r in seed_results])),
            "median_alpha2": float(np.median([r["alpha2"] for r in seed_results])),
            "median_margin": float(np.median(margins)),
            "over_unlearning_seeds": int(sum(r["over_unlearning"] for r in seed_results)),
            "seed_count": len(seed_results),
            "median_honest_overall_drop": float(np.median(honest_drop)),
        },
        "timing": {
            "per_seed": timings,
            "total_wall_clock_s": time.perf_counter() - t0,
        },
    }
    return report
