"""Malicious-user toolkit: blending and boundary-pushing request crafting.

Everything here operates with exactly the attacker's knowledge: their own
samples, a black-box query oracle, and attack parameters. No import or call
path reaches model parameters; the only service-side name used is the
UnlearnRequest envelope that crafted requests are packed into.

Pushing minimizes a distortion-plus-margin objective
    ||x - x'||_2^2 + c * f(x')
by zeroth-order stochastic coordinate descent, where f is a log-softened
margin over the oracle's probability vector: for a target class t,
    f = max(max_{i != t} log p_i - log p_t, -k),
and for untargeted pushing (drive the sample off its own label y)
    f = max(log p_y - max_{i != y} log p_i, -k).
Gradient coordinates are estimated with forward differences from two oracle
queries each; iterates stay inside [0, 1]^d and inside an L2 ball of the
configured budget around the original sample.
"""

import numpy as np
from dataclasses import dataclass, field, replace as dc_replace

from .service import UnlearnRequest

PROB_FLOOR = 1e-12  # probabilities are clamped here before the log


@dataclass
class BlendParams:
    lam: float
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("blending ratio must lie in [0, 1]")


@dataclass
class PushParams:
    c: float = 1.0
    k: float = 0.0
    eta: float = 0.01
    h: float = 1e-4
    max_iters: int = 500
    l2_budget: float = 20.0
    coords_per_iter: int = 128
    target_class: int | None = None
    rng_seed: int = 0
    stop_on_flip: bool = True

    def validate(self):
        if self.c <= 0:
            raise ValueError("c must be positive")
        if self.k < 0:
            raise ValueError("margin k must be >= 0")
        if self.eta <= 0:
            raise ValueError("step size eta must be positive")
        if self.h <= 0:
            raise ValueError("finite-difference step h must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.l2_budget <= 0:
            raise ValueError("l2_budget must be positive")
        if self.coords_per_iter < 1:
            raise ValueError("coords_per_iter must be >= 1")


@dataclass
class PushIterate:
    x: np.ndarray
    label: int
    loss: float
    queries: int  # cumulative oracle queries when this iterate was recorded


@dataclass
class PushTrajectory:
    iterates: list
    true_label: int
    queries_used: int

    def labels(self):
        return [it.label for it in self.iterates]


@dataclass
class PushSelection:
    features: np.ndarray | None
    submitted_label: int | None
    index: int | None
    crossed: bool


def blend(x, x_b, lam):
    """Convex combination lam * x + (1 - lam) * x_b (elementwise)."""
    x = np.asarray(x, dtype=np.float64)
    x_b = np.asarray(x_b, dtype=np.float64)
    if x.shape != x_b.shape:
        raise ValueError(f"blend shapes differ: {x.shape} vs {x_b.shape}")
    return lam * x + (1.0 - lam) * x_b


def craft_blended_request(d_u, donors, params: BlendParams, oracle) -> UnlearnRequest:
    """Blend each unlearned sample with a seeded-cyclically-chosen donor.

    Submitted labels are the oracle's predictions on the blended features, so
    every label in the request matches the deployed model's output.
    """
    if len(donors) == 0:
        raise ValueError("donor set must be nonempty")
    order = np.random.default_rng(params.rng_seed).permutation(len(donors))
    feats = []
    labels = []
    for i in range(len(d_u)):
        donor = donors[int(order[i % len(order)])]
        mixed = blend(d_u[i].features, donor.features, params.lam)
        probs = oracle.query(mixed)
        feats.append(mixed)
        labels.append(int(np.argmax(probs)))
    return UnlearnRequest(np.stack(feats), np.asarray(labels), requester="blend")


def margin_loss(probs, true_label, target_class=None, k=0.0):
    """Log-softened margin over a probability vector (lower = closer to flip)."""
    logp = np.log(np.clip(np.asarray(probs, dtype=np.float64), PROB_FLOOR, None))
    if target_class is None:
        others = np.delete(logp, true_label)
        return float(max(logp[true_label] - others.max(), -k))
    others = np.delete(logp, target_class)
    return float(max(others.max() - logp[target_class], -k))


def forward_difference(fn, x, j, h):
    """(fn(x + h*e_j) - fn(x)) / h over the raveled coordinate j."""
    flat = np.asarray(x, dtype=np.float64).ravel().copy()
    base = fn(flat.reshape(np.shape(x)))
    flat[j] += h
    return (fn(flat.reshape(np.shape(x))) - base) / h


def estimate_coordinate_gradient(oracle, x_plus_delta, j, h,
                                 params: PushParams, true_label):
    """Finite-difference estimate of d(margin loss)/dx_j from two oracle queries."""
    if j >= np.size(x_plus_delta):
        raise ValueError(f"coordinate {j} out of range for dim {np.size(x_plus_delta)}")

    def f(v):
        return margin_loss(oracle.query(v), true_label, params.target_class, params.k)

    return float(forward_difference(f, x_plus_delta, j, h))


def _flipped(label, true_label, target_class):
    if target_class is None:
        return label != true_label
    return label == target_class


def zoo_push(sample, oracle, params: PushParams) -> PushTrajectory:
    """Push one sample toward (or across) the decision boundary.

    Per iteration: draw coords_per_iter coordinates without replacement,
    estimate each gradient at the current perturbation (two queries each),
    take the descent step, clip the iterate into [0, 1]^d, rescale the
    perturbation onto the L2 budget ball, then spend one query recording the
    oracle's label for the new iterate. Stops at max_iters or, when
    stop_on_flip is set, as soon as the recorded label flips.
    """
    params.validate()
    x0 = np.asarray(sample.features, dtype=np.float64).copy()
    if x0.min() < -1e-9 or x0.max() > 1 + 1e-9:
        raise ValueError("pushing expects features in [0, 1]")
    y = int(sample.label)
    shape = x0.shape
    flat0 = x0.ravel()
    dim = flat0.size

    def record(x_arr, queries):
        probs = oracle.query(x_arr)
        label = int(np.argmax(probs))
        f = margin_loss(probs, y, params.target_class, params.k)
        dist = float(((x_arr - x0) ** 2).sum())
        return PushIterate(x_arr.copy(), label, dist + params.c * f, queries)

    queries = 1
    iterates = [record(x0, queries)]
    delta = np.zeros(dim)
    rng = np.random.default_rng(params.rng_seed)
    n_coords = min(params.coords_per_iter, dim)

    for _ in range(params.max_iters):
        coords = rng.choice(dim, size=n_coords, replace=False)
        base = (flat0 + delta).reshape(shape)
        grads = np.empty(n_coords)
        for idx, j in enumerate(coords):
            grads[idx] = estimate_coordinate_gradient(
                oracle, base, int(j), params.h, params, y)
            queries += 2
        delta[coords] -= params.eta * grads
        # box first, then budget: both constraints hold afterwards because
        # scaling delta toward zero keeps the iterate on the segment between
        # x0 and the clipped point, and both endpoints lie in [0, 1]^d
        delta = np.clip(flat0 + delta, 0.0, 1.0) - flat0
        norm = float(np.linalg.norm(delta))
        if norm > params.l2_budget:
            delta *= params.l2_budget / norm
        queries += 1
        it = record((flat0 + delta).reshape(shape), queries)
        iterates.append(it)
        if params.stop_on_flip and _flipped(it.label, y, params.target_class):
            break
    return PushTrajectory(iterates, y, queries)


def select_pushing(traj: PushTrajectory, mode, true_label) -> PushSelection:
    """Pick the submitted sample from a trajectory.

    Mode "I": last iterate whose oracle label still equals the true label
    before the first flip (the final iterate if no flip happened; the
    original if the very first record was already off-label). Mode "II":
    first iterate whose oracle label differs from the true label, or an
    explicit no-crossing result.
    """
    if mode not in ("I", "II"):
        raise ValueError(f"mode must be 'I' or 'II', got {mode!r}")
    if not traj.iterates:
        raise ValueError("trajectory has no iterates")
    labels = traj.labels()
    first_flip = next((t for t, lab in enumerate(labels) if lab != true_label), None)
    if mode == "I":
        if first_flip is None:
            idx = len(labels) - 1
        elif first_flip == 0:
            idx = 0
        else:
            idx = first_flip - 1
        it = traj.iterates[idx]
        return PushSelection(it.x.copy(), it.label, idx, crossed=first_flip is not None)
    if first_flip is None:
        return PushSelection(None, None, None, crossed=False)
    it = traj.iterates[first_flip]
    return PushSelection(it.x.copy(), it.label, first_flip, crossed=True)


def craft_push_request(d_u, oracle, params: PushParams, mode):
    """Push every sample, select per the mode, and pack the request.

    Returns (UnlearnRequest, report). The report carries, per sample, the
    exact query count, the L2/Linf distortion of the submitted features,
    whether the trajectory crossed the boundary, and the selected iterate
    index. A mode-II sample with no crossing falls back to its final iterate
    (flagged crossed=False) instead of aborting the batch.
    """
    if len(d_u) == 0:
        raise ValueError("unlearned sample set must be nonempty")
    feats, labels, per_sample = [], [], []
    start_count = oracle.query_count
    for i in range(len(d_u)):
        sample = d_u[i]
        sub = dc_replace(params, rng_seed=params.rng_seed + i)
        traj = zoo_push(sample, oracle, sub)
        sel = select_pushing(traj, mode, sample.label)
        if sel.features is None:  # mode II, never crossed: submit final iterate
            last = traj.iterates[-1]
            sel = PushSelection(last.x.copy(), last.label,
                                len(traj.iterates) - 1, crossed=False)
        delta = sel.features.ravel() - np.asarray(sample.features, dtype=np.float64).ravel()
        feats.append(sel.features)
        labels.append(sel.submitted_label)
        per_sample.append({
            "queries": traj.queries_used,
            "l2": float(np.linalg.norm(delta)),
            "linf": float(np.abs(delta).max()) if delta.size else 0.0,
            "crossed": bool(sel.crossed),
            "selected_index": int(sel.index),
            "iterations": len(traj.iterates) - 1,
            "submitted_label": int(sel.submitted_label),
            "oracle_label": int(traj.iterates[sel.index].label),
            "true_label": int(sample.label),
        })
    report = {
        "mode": mode,
        "target_class": params.target_class,
        "samples": len(d_u),
        "queries_total": int(oracle.query_count - start_count),
        "crossings": sum(1 for p in per_sample if p["crossed"]),
        "l2_mean": float(np.mean([p["l2"] for p in per_sample])),
        "l2_max": float(np.max([p["l2"] for p in per_sample])),
        # submitted label == oracle prediction at the submitted iterate
        "stealthy_label_rate": float(np.mean([
            p["submitted_label"] == p["oracle_label"] for p in per_sample
        ])),
        "label_matches_true_rate": float(np.mean([
            p["submitted_label"] == p["true_label"] for p in per_sample
        ])),
        "per_sample": per_sample,
    }
    request = UnlearnRequest(np.stack(feats), np.asarray(labels, dtype=np.int64),
                             requester=f"push-{mode}")
    return request, report
