"""Server-side unlearning methods.

Three families:
  * gradient_overwrite — first-order update that overwrites the requested
    samples with noise samples carrying the same labels: the parameter delta
    is -tau * (sum-grad over noise batch - sum-grad over requested batch),
    applied for a configured number of iterations.
  * finetune_unlearn — the server randomly relabels the requested samples
    (never keeping the submitted label) and fine-tunes on them alone.
  * newton_unlearn — influence-style one-step removal for convex models:
    theta + H^-1 * sum-grad(unlearned), with H the Hessian of the regularized
    objective on the remaining data. Exact for quadratic losses.

All methods consume only the request samples, except newton_unlearn which
mathematically requires the remaining data for its Hessian.
"""

import numpy as np
from dataclasses import dataclass, replace as dc_replace

from .engine.model import backward, clone_params, loss_and_grads
from .engine.optim import adam_step, init_optimizer


class NumericalError(RuntimeError):
    """A linear solve failed even after damping."""


@dataclass
class OverwriteConfig:
    tau: float = 0.01
    iterations: int = 1
    noise_kind: str = "uniform01"
    rng_seed: int = 0

    def validate(self):
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.noise_kind not in ("uniform01", "gaussian_clipped"):
            raise ValueError(f"unknown noise_kind {self.noise_kind!r}")


@dataclass
class FinetuneConfig:
    epochs: int = 3
    learning_rate: float = 1e-3
    rng_seed: int = 0
    batch_size: int = 32

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _noise_like(features, kind, rng):
    if kind == "uniform01":
        return rng.uniform(0.0, 1.0, size=features.shape)
    # gaussian_clipped: mid-gray centered, clipped back into the pixel range
    return np.clip(rng.normal(0.5, 0.25, size=features.shape), 0.0, 1.0)


def _sum_grads(model, feats, labels):
    """Per-parameter gradients of the summed loss (engine uses batch means)."""
    grads = backward(model, feats, labels)
    n = float(len(feats))
    return [{k: g * n for k, g in layer.items()} for layer in grads]


def overwrite_delta(model, z_feats, z_labels, zhat_feats, zhat_labels, tau):
    """-tau * (sum-grad over replacement batch - sum-grad over requested batch)."""
    g_hat = _sum_grads(model, zhat_feats, zhat_labels)
    g = _sum_grads(model, z_feats, z_labels)
    return [{k: -tau * (gh[k] - gl[k]) for k in gh} for gh, gl in zip(g_hat, g)]


def gradient_overwrite(model, z, cfg: OverwriteConfig):
    """Overwrite-style unlearning of the request dataset `z`.

    Noise replacements are regenerated each iteration from cfg.rng_seed and
    carry the submitted labels. tau == 0 (or a replacement batch identical to
    the request) leaves the parameters bitwise unchanged.
    """
    cfg.validate()
    if len(z) == 0:
        raise ValueError("unlearn request must be nonempty")
    rng = np.random.default_rng(cfg.rng_seed)
    feats = np.ascontiguousarray(z.features, dtype=model.dtype)
    labels = np.asarray(z.labels, dtype=np.int64)
    out = model.copy()
    for _ in range(cfg.iterations):
        zhat = _noise_like(feats, cfg.noise_kind, rng).astype(model.dtype)
        delta = overwrite_delta(out, feats, labels, zhat, labels, cfg.tau)
        out = dc_replace(out, params=[
            {k: p + d[k] for k, p in layer.items()}
            for layer, d in zip(out.params, delta)
        ])
    return out


def finetune_unlearn(model, z, cfg: FinetuneConfig):
    """Relabel the request uniformly over the other classes, then fine-tune on it."""
    cfg.validate()
    if model.class_count < 2:
        raise ValueError("class_count must be >= 2")
    rng = np.random.default_rng(cfg.rng_seed)
    labels = np.asarray(z.labels, dtype=np.int64)
    draw = rng.integers(0, model.class_count - 1, size=len(labels))
    new_labels = draw + (draw >= labels)

    feats = np.ascontiguousarray(z.features, dtype=model.dtype)
    params = clone_params(model.params)
    work = dc_replace(model, params=params)
    opt = init_optimizer(params, "adam", cfg.learning_rate)
    n = len(feats)
    bs = min(cfg.batch_size, n)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            _, grads = loss_and_grads(work, feats[idx], new_labels[idx])
            params, opt = adam_step(params, grads, opt)
            work = dc_replace(work, params=params)
    return work


def relabel_for_finetune(labels, class_count, rng_seed):
    """The relabeling rule alone (uniform over classes != submitted label)."""
    rng = np.random.default_rng(rng_seed)
    labels = np.asarray(labels, dtype=np.int64)
    draw = rng.integers(0, class_count - 1, size=len(labels))
    return draw + (draw >= labels)


# ---------------------------------------------------------------------------
# Convex models and influence-style removal
# ---------------------------------------------------------------------------

@dataclass
class ConvexModel:
    weights: np.ndarray
    loss_kind: str = "ridge"      # "ridge" | "logistic"
    l2_strength: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.loss_kind not in ("ridge", "logistic"):
            raise ValueError(f"unknown convex loss {self.loss_kind!r}")
        if self.l2_strength < 0:
            raise ValueError("l2_strength must be >= 0")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")


def _convex_targets(cm, ds):
    if cm.loss_kind == "ridge":
        return ds.labels.astype(np.float64)
    labels = np.asarray(ds.labels)
    if labels.min() < 0 or labels.max() > 1:
        raise ValueError("logistic ConvexModel expects binary labels in {0, 1}")
    return labels.astype(np.float64)


def _flat_features(ds):
    return np.asarray(ds.features, dtype=np.float64).reshape(len(ds), -1)


def convex_grad_sum(cm: ConvexModel, ds):
    """Sum over samples of the per-sample loss gradient (regularizer excluded)."""
    x = _flat_features(ds)
    y = _convex_targets(cm, ds)
    if cm.loss_kind == "ridge":
        resid = x @ cm.weights - y
        return x.T @ resid
    p = 1.0 / (1.0 + np.exp(-(x @ cm.weights)))
    return x.T @ (p - y)


def convex_hessian(cm: ConvexModel, ds):
    """Hessian of the regularized objective restricted to `ds`."""
    x = _flat_features(ds)
    if cm.loss_kind == "ridge":
        h = x.T @ x
    else:
        p = 1.0 / (1.0 + np.exp(-(x @ cm.weights)))
        h = (x * (p * (1 - p))[:, None]).T @ x
    return h + cm.l2_strength * np.eye(x.shape[1])


def fit_ridge(ds, l2_strength) -> ConvexModel:
    """Closed-form least squares with 0.5 * l2 * ||w||^2 regularization."""
    x = _flat_features(ds)
    y = ds.labels.astype(np.float64)
    h = x.T @ x + l2_strength * np.eye(x.shape[1])
    w = np.linalg.solve(h, x.T @ y)
    return ConvexModel(w, "ridge", l2_strength)


def fit_logistic(ds, l2_strength, tol=1e-12, max_iter=100) -> ConvexModel:
    """Binary logistic regression fit by damped Newton iterations."""
    x = _flat_features(ds)
    y = ds.labels.astype(np.float64)
    w = np.zeros(x.shape[1])
    for _ in range(max_iter):
        cm = ConvexModel(w, "logistic", l2_strength)
        g = convex_grad_sum(cm, ds) + l2_strength * w
        if np.linalg.norm(g) < tol:
            break
        h = convex_hessian(cm, ds)
        w = w - np.linalg.solve(h, g)
    return ConvexModel(w, "logistic", l2_strength)


def newton_unlearn(cm: ConvexModel, d_u, d_r) -> ConvexModel:
    """One Newton step removing d_u's influence, using the Hessian on d_r.

    Damping (lambda = 1e-6 * trace(H) / dim) is applied only if the plain
    Hessian is numerically unusable, so well-posed quadratic problems keep
    their one-step exactness.
    """
    if d_u is None or len(d_u) == 0:
        return ConvexModel(cm.weights.copy(), cm.loss_kind, cm.l2_strength)
    h = convex_hessian(cm, d_r)
    delta = convex_grad_sum(cm, d_u)
    dim = h.shape[0]
    try:
        cond = np.linalg.cond(h)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e12:
        damp = 1e-6 * np.trace(h) / dim
        h = h + damp * np.eye(dim)
        try:
            cond = np.linalg.cond(h)
        except np.linalg.LinAlgError:
            cond = np.inf
        if not np.isfinite(cond) or cond > 1e14:
            raise NumericalError(
                f"Hessian on remaining data is singular after damping "
                f"(condition estimate {cond:.3e})"
            )
    step = np.linalg.solve(h, delta)
    return ConvexModel(cm.weights + step, cm.loss_kind, cm.l2_strength)
