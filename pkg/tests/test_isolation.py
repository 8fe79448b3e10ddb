"""Threat-model isolation audit: attack code can only reach the query oracle.

Three layers of checking: the attack module's import surface, the attack
operations' signatures, and the runtime behavior of the oracle object that
attacks receive.
"""

import ast
import inspect
from pathlib import Path

import numpy as np

import overunlearn.attacks as attacks
from overunlearn.data import class_subset
from overunlearn.service import QueryOracle

from test_attacks import _train_blob_server

ATTACKS_SOURCE = Path(attacks.__file__)


def test_attack_module_import_surface():
    tree = ast.parse(ATTACKS_SOURCE.read_text())
    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            names = {a.name.split(".")[0] for a in node.names}
            assert names <= {"numpy"}, f"unexpected import {names}"
        elif isinstance(node, ast.ImportFrom):
            module = node.module or ""
            names = {a.name for a in node.names}
            if module in ("dataclasses", "numpy", "typing"):
                continue
            # the only service-side name attacks may touch is the request
            # envelope they hand back to the user
            assert module.endswith("service"), f"unexpected module {module}"
            assert names == {"UnlearnRequest"}, f"unexpected names {names}"


def test_attack_operation_signatures_are_black_box():
    allowed = {
        attacks.blend: {"x", "x_b", "lam"},
        attacks.craft_blended_request: {"d_u", "donors", "params", "oracle"},
        attacks.estimate_coordinate_gradient: {"oracle", "x_plus_delta", "j", "h",
                                               "params", "true_label"},
        attacks.zoo_push: {"sample", "oracle", "params"},
        attacks.select_pushing: {"traj", "mode", "true_label"},
        attacks.craft_push_request: {"d_u", "oracle", "params", "mode"},
    }
    for fn, expected in allowed.items():
        assert set(inspect.signature(fn).parameters) == expected
        for name in inspect.signature(fn).parameters:
            assert name not in ("model", "server", "params_server", "weights")


def test_oracle_surface_exposes_only_probabilities():
    server, tr, _ = _train_blob_server(seed=0, epochs=3)
    oracle = server.oracle()
    public = [n for n in dir(oracle) if not n.startswith("_")]
    assert sorted(public) == ["class_count", "query", "query_count"]
    out = oracle.query(tr.features[0])
    assert isinstance(out, np.ndarray)
    assert out.ndim == 1 and len(out) == oracle.class_count
    assert abs(out.sum() - 1.0) < 1e-9
    # no ModelState-typed attribute is reachable from the oracle object
    from overunlearn.engine.model import ModelState
    for name in vars(oracle):
        assert not isinstance(getattr(oracle, name), ModelState)


def test_query_budget_matches_oracle_counter_exactly():
    server, tr, _ = _train_blob_server(seed=1, epochs=10)
    d_u = class_subset(tr, 0).subset(np.arange(8))
    oracle = server.oracle()
    params = attacks.PushParams(eta=0.02, coords_per_iter=8, max_iters=60,
                                rng_seed=0)
    _, report = attacks.craft_push_request(d_u, oracle, params, "I")
    assert report["queries_total"] == oracle.query_count
    per_sample_total = sum(p["queries"] for p in report["per_sample"])
    assert per_sample_total == oracle.query_count
    # per-sample accounting: 1 initial probe + per iteration
    # 2 * coords_per_iter estimate queries + 1 label check
    for p in report["per_sample"]:
        assert p["queries"] == 1 + p["iterations"] * (2 * 8 + 1)


def test_oracle_counter_shared_across_attack_kinds():
    server, tr, _ = _train_blob_server(seed=2, epochs=5)
    d_u = class_subset(tr, 0).subset(np.arange(4))
    donors = class_subset(tr, 1)
    oracle = server.oracle()
    attacks.craft_blended_request(d_u, donors, attacks.BlendParams(lam=0.5), oracle)
    assert oracle.query_count == len(d_u)  # one label query per blended sample


def test_minimal_oracle_duck_type_suffices():
    # attacks run against any object with query(); proves no hidden reliance
    # on server internals
    class CountingUniform:
        def __init__(self, classes):
            self.query_count = 0
            self.class_count = classes

        def query(self, x):
            self.query_count += 1
            flat = np.asarray(x).ravel()
            logits = np.array([flat.sum(), -flat.sum(), 0.0])
            e = np.exp(logits - logits.max())
            return e / e.sum()

    from overunlearn.data import Sample
    oracle = CountingUniform(3)
    traj = attacks.zoo_push(Sample(np.full(4, 0.5), 0), oracle,
                            attacks.PushParams(max_iters=3, coords_per_iter=2,
                                               stop_on_flip=False))
    assert traj.queries_used == oracle.query_count
