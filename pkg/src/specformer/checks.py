"""Finite-difference suite covering every taped op and the assembled model."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import GradCheckReport, Tape, gradient_check
from .graph import SparseGraph, normalized_laplacian
from .linalg import symmetric_eig
from .model import ModelConfig, Specformer

__all__ = ["OP_CASES", "MODEL_CASES", "run_suite"]


def _weighted(out: ad.Var, seed: int) -> ad.Var:
    # random projection so every output entry contributes a distinct gradient
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return ad.sum_all(out * out.tape.constant(w))


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin, x)


def _op_cases(rng: np.random.Generator) -> dict[str, tuple[dict, Callable]]:
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal((4, 3))
    c = rng.standard_normal((3, 5))
    row = rng.standard_normal((1, 3))
    n, nb, h, dim = 5, 2, 4, 3

    def unary(fn):
        return {"a": a}, lambda t, p: _weighted(fn(p["a"]), 1)

    cases = {
        "add": ({"a": a, "b": b}, lambda t, p: _weighted(ad.add(p["a"], p["b"]), 1)),
        "sub": ({"a": a, "b": b}, lambda t, p: _weighted(ad.sub(p["a"], p["b"]), 1)),
        "mul": ({"a": a, "b": b}, lambda t, p: _weighted(ad.mul(p["a"], p["b"]), 1)),
        "scale": unary(lambda v: ad.scale(v, -1.7)),
        "matmul": ({"a": a, "c": c}, lambda t, p: _weighted(ad.matmul(p["a"], p["c"]), 1)),
        "transpose": unary(ad.transpose),
        "concat_cols": (
            {"a": a, "b": b},
            lambda t, p: _weighted(ad.concat_cols([p["a"], p["b"], p["a"]]), 1),
        ),
        "slice_cols": unary(lambda v: ad.slice_cols(v, 1, 3)),
        "broadcast_row": ({"row": row}, lambda t, p: _weighted(ad.broadcast_row(p["row"], 4), 1)),
        "relu": ({"a": _away_from_zero(rng, (4, 3))}, lambda t, p: _weighted(ad.relu(p["a"]), 1)),
        "tanh": unary(ad.tanh),
        "exp": unary(ad.exp),
        "sum_all": unary(lambda v: ad.sum_all(v * v)),
        "mean_all": unary(lambda v: ad.mean_all(v * v)),
        "softmax_rows": unary(ad.softmax_rows),
        "log_softmax_rows": unary(ad.log_softmax_rows),
        "layer_norm": unary(ad.layer_norm),
        "dropout": unary(lambda v: ad.dropout(v, 0.5, np.random.default_rng(7), True)),
    }

    s = rng.standard_normal((nb, n, n))
    conv_params = {
        "s0": s[0],
        "s1": s[1],
        "w1": rng.standard_normal((nb + 1, h)),
        "b1": rng.standard_normal((1, h)),
        "w2": rng.standard_normal((h, dim)),
        "b2": rng.standard_normal((1, dim)),
        "x": rng.standard_normal((n, dim)),
    }

    def conv(t, p):
        out = ad.mlp_basis_conv([p["s0"], p["s1"]], p["w1"], p["b1"], p["w2"], p["b2"], p["x"])
        return _weighted(out, 1)

    cases["mlp_basis_conv"] = (conv_params, conv)
    return cases


OP_CASES = tuple(_op_cases(np.random.default_rng(0)))

MODEL_CASES = {
    "specformer-small": dict(variant="small", d=16, heads=1),
    "specformer-small-mlp": dict(variant="small", d=4, heads=2, combination="mlp"),
    "specformer-medium": dict(variant="medium", d=4, heads=2, layers=2, decoder_activation="tanh"),
    "specformer-large": dict(variant="large", d=4, heads=2, layers=2, decoder_activation="relu"),
}


def _test_graph() -> SparseGraph:
    return SparseGraph.from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)])


def _model_case(config: ModelConfig, rng: np.random.Generator):
    eig = symmetric_eig(normalized_laplacian(_test_graph()))
    model = Specformer.init(config, rng)
    # nonzero biases keep relu units off their kinks
    params = {
        k: (rng.uniform(-0.5, 0.5, v.shape) if k.endswith((".b", ".b1", ".b2", ".bo", "b_lambda")) else v)
        for k, v in model.params.items()
    }
    x = rng.standard_normal((eig.n, config.in_dim))
    y = rng.standard_normal((eig.n, config.out_dim))

    def closure(tape: Tape, p):
        outs, _ = model.run(tape, p, eig, [x])
        diff = outs[0] - tape.constant(y)
        return ad.sum_all(diff * diff)

    return params, closure


def run_suite(
    seed: int = 0, h: float = 1e-5, tolerance: float = 1e-4, include_models: bool = True
) -> dict[str, GradCheckReport]:
    """Gradient-check every op (and optionally each model variant)."""
    rng = np.random.default_rng(seed)
    reports = {}
    for name, (params, closure) in _op_cases(rng).items():
        reports[name] = gradient_check(closure, params, h=h, tolerance=tolerance)
    if include_models:
        for name, kw in MODEL_CASES.items():
            params, closure = _model_case(ModelConfig(**kw), rng)
            reports[name] = gradient_check(closure, params, h=h, tolerance=tolerance)
    return reports
