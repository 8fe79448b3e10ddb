"""Three-entity service boundary: server owns the model and the test set,
users get a query oracle and may file unlearning requests.

The oracle answers single queries with probability vectors only and counts
every call. Nothing reachable from it exposes parameters, the architecture,
or the test set; evaluation results leave the server as aggregate figures.
"""

import json
from pathlib import Path

import numpy as np

from .data import Dataset, class_subset
from .engine.checkpoint import load_model, save_model
from .engine.model import forward, predict
from .unlearn import (
    FinetuneConfig,
    OverwriteConfig,
    finetune_unlearn,
    gradient_overwrite,
)

UNLEARN_METHODS = ("gradient_overwrite", "finetune")


class ConfigurationError(RuntimeError):
    """The server was asked to unlearn without a configured method."""


class RequestRejected(RuntimeError):
    """The server's label-consistency check refused the request."""


class UnlearnRequest:
    """A labeled sample set submitted for deletion."""

    def __init__(self, features, labels, requester="user"):
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if len(features) == 0:
            raise ValueError("unlearn request must be nonempty")
        if len(features) != len(labels):
            raise ValueError("feature/label count mismatch")
        if features.min() < -1e-9 or features.max() > 1 + 1e-9:
            raise ValueError("request features must lie in [0, 1]")
        self.features = features
        self.labels = labels
        self.requester = requester

    def __len__(self):
        return len(self.features)

    @property
    def samples(self):
        from .data import Sample
        return [Sample(self.features[i], int(self.labels[i])) for i in range(len(self))]


class QueryOracle:
    """Black-box prediction access: one probability vector per query."""

    def __init__(self, predict_fn, class_count):
        self._predict = predict_fn
        self._class_count = int(class_count)
        self._count = 0

    def query(self, x) -> np.ndarray:
        self._count += 1
        return self._predict(np.asarray(x, dtype=np.float64))

    @property
    def query_count(self) -> int:
        return self._count

    @property
    def class_count(self) -> int:
        return self._class_count


class ServerHandle:
    """Holds the deployed model privately; all public output is aggregate."""

    def __init__(self, model, test_set: Dataset, unlearn_method=None,
                 unlearn_config=None, verify_labels=False,
                 service_log=None, archive=None):
        if unlearn_method is not None and unlearn_method not in UNLEARN_METHODS:
            raise ValueError(f"unknown unlearn method {unlearn_method!r}")
        self._model = model
        self._test_set = test_set
        self._unlearn_method = unlearn_method
        self._unlearn_config = unlearn_config
        self._verify_labels = verify_labels
        self.service_log = list(service_log or [])
        self._archive = list(archive or [])

    @property
    def class_count(self):
        return self._model.class_count

    def oracle(self) -> QueryOracle:
        model = self._model  # bound at deployment time; later unlearning
                             # produces a new handle with its own oracle

        def predict_one(x):
            if x.shape != model.input_shape:
                from .engine.layers import ShapeMismatch
                raise ShapeMismatch(model.input_shape, x.shape, "oracle query")
            return forward(model, x[None])[0].copy()

        return QueryOracle(predict_one, model.class_count)

    def submit_unlearn_request(self, req: UnlearnRequest) -> "ServerHandle":
        """Apply the pre-selected unlearning method; returns the updated server.

        The previous model is archived on the new handle so before/after
        comparisons need no retraining.
        """
        if self._unlearn_method is None:
            raise ConfigurationError("server has no unlearning method configured")
        if self._verify_labels:
            preds = predict(self._model, req.features.astype(self._model.dtype))
            bad = np.flatnonzero(preds != req.labels)
            if len(bad):
                raise RequestRejected(
                    f"submitted label {req.labels[bad[0]]} != model prediction "
                    f"{preds[bad[0]]} for sample {bad[0]} "
                    f"({len(bad)} mismatches in total)"
                )
        z = Dataset(req.features, req.labels, self._model.class_count,
                    name="unlearn-request", provenance="derived")
        if self._unlearn_method == "gradient_overwrite":
            cfg = self._unlearn_config or OverwriteConfig()
            new_model = gradient_overwrite(self._model, z, cfg)
        else:
            cfg = self._unlearn_config or FinetuneConfig()
            new_model = finetune_unlearn(self._model, z, cfg)
        log = self.service_log + [{
            "kind": "unlearn_request",
            "ordinal": len(self.service_log),
            "requester": req.requester,
            "sample_count": len(req),
            "method": self._unlearn_method,
        }]
        return ServerHandle(new_model, self._test_set, self._unlearn_method,
                            self._unlearn_config, self._verify_labels,
                            service_log=log, archive=self._archive + [self._model])

    def evaluate(self, which="overall"):
        """Aggregate test accuracy: overall, per-class vector, or one class."""
        if self._test_set is None or len(self._test_set) == 0:
            raise ValueError("server has no test set to evaluate on")
        preds = predict(self._model, self._test_set.features.astype(self._model.dtype))
        correct = preds == self._test_set.labels
        if which == "overall":
            return float(correct.mean())
        if which == "per_class":
            out = np.zeros(self._model.class_count)
            for c in range(self._model.class_count):
                mask = self._test_set.labels == c
                out[c] = float(correct[mask].mean()) if mask.any() else float("nan")
            return out
        cls = int(which)
        mask = self._test_set.labels == cls
        if not mask.any():
            raise ValueError(f"test set has no samples of class {cls}")
        return float(correct[mask].mean())

    def test_class_histogram(self, cls: int):
        """Predicted-label counts over the test samples of one class."""
        subset = class_subset(self._test_set, cls)
        preds = predict(self._model, subset.features.astype(self._model.dtype))
        return np.bincount(preds, minlength=self._model.class_count)

    def previous_model_count(self) -> int:
        return len(self._archive)

    def archived_model(self, index=-1):
        """Operator-side access to an archived (pre-unlearning) model."""
        return self._archive[index]

    def deployed_model(self):
        """Operator-side access to the live model (never handed to attack code)."""
        return self._model

    def save(self, path) -> Path:
        path = Path(path)
        save_model(self._model, path / "model")
        meta = {
            "unlearn_method": self._unlearn_method,
            "verify_labels": self._verify_labels,
            "service_log": self.service_log,
        }
        (path / "service_log.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path, test_set, unlearn_config=None):
        path = Path(path)
        model = load_model(path / "model")
        meta = json.loads((path / "service_log.json").read_text())
        return cls(model, test_set, meta.get("unlearn_method"), unlearn_config,
                   meta.get("verify_labels", False),
                   service_log=meta.get("service_log", []))
