"""The Specformer network: eigenvalue encoding, spectral Transformer, filter decoder,
learnable bases and channel-wise graph convolution.

Parameters live in a flat ``{dotted.name: 2-D float64 array}`` dict. The forward
pass is written against :mod:`specformer.autodiff` so one code path serves both
training and inference.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .linalg import EigenSystem

__all__ = [
    "VARIANTS",
    "ModelConfig",
    "SpectralFilterBank",
    "Specformer",
    "eigenvalue_encoding",
    "init_params",
    "param_count",
    "forward",
    "encoder_block",
    "decode_filters",
    "combine_bases",
    "build_bases_and_convolve",
    "edge_feature_layer",
    "fit_univariate_filter",
    "save_params",
    "load_params",
]

VARIANTS = ("small", "medium", "large")
ACTIVATIONS = ("none", "relu", "tanh")
COMBINATIONS = ("affine", "mlp")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "small"
    d: int = 16
    heads: int = 1
    layers: int = 1
    num_encoder_blocks: int = 1
    epsilon: float = 100.0
    decoder_activation: str = "none"
    residual: bool = True
    combination: str = "affine"
    combine_bias: bool = True
    transformer_dropout: float = 0.0
    feature_dropout: float = 0.0
    propagation_dropout: float = 0.0
    in_dim: int = 1
    out_dim: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.d <= 0 or self.d % 2:
            raise ValueError(f"hidden width d must be a positive even number, got {self.d}")
        if self.heads < 1 or self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.layers < 1 or self.num_encoder_blocks < 0:
            raise ValueError("need at least one convolution layer")
        if self.decoder_activation not in ACTIVATIONS:
            raise ValueError(f"decoder_activation must be one of {ACTIVATIONS}")
        if self.combination not in COMBINATIONS:
            raise ValueError(f"combination must be one of {COMBINATIONS}")
        for name in ("transformer_dropout", "feature_dropout", "propagation_dropout"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {p}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("in_dim and out_dim must be positive")

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    @property
    def mlp_hidden(self) -> int:
        return 2 * (self.heads + 1)

    def to_dict(self) -> dict:
        return asdict(self)

    def filter_prefix(self, layer: int) -> str:
        return f"filter{layer}." if self.variant == "large" else ""

    def combine_prefix(self, layer: int) -> str:
        return "combine0." if self.variant == "small" else f"combine{layer}."


# ---------------------------------------------------------------------------
# eigenvalue encoding
# ---------------------------------------------------------------------------


def eigenvalue_encoding(lambdas, d: int, epsilon: float) -> np.ndarray:
    """Rows ``[lam, sin(eps*lam/10000^(2i/d)), cos(...), ...]`` of width d + 1."""
    if d <= 0 or d % 2:
        raise ValueError(f"encoding width must be a positive even number, got {d}")
    lam = np.asarray(lambdas, dtype=np.float64).reshape(-1)
    freq = epsilon / np.power(10000.0, 2.0 * np.arange(d // 2) / d)
    phase = lam[:, None] * freq[None, :]
    out = np.empty((lam.shape[0], d + 1))
    out[:, 0] = lam
    out[:, 1::2] = np.sin(phase)
    out[:, 2::2] = np.cos(phase)
    return out


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def _param_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, int], str]]:
    d, m = config.d, config.heads
    shapes: list[tuple[str, tuple[int, int], str]] = []

    def add(name, shape, kind="weight"):
        shapes.append((name, shape, kind))

    add("in_proj.w", (config.in_dim, d))
    add("in_proj.b", (1, d), "zero")
    n_filter_sets = config.layers if config.variant == "large" else 1
    for layer in range(n_filter_sets):
        pre = config.filter_prefix(layer)
        add(pre + "eig_proj.w", (d + 1, d))
        add(pre + "eig_proj.b", (1, d), "zero")
        for b in range(config.num_encoder_blocks):
            blk = f"{pre}block{b}."
            add(blk + "ln1.scale", (1, d), "one")
            add(blk + "ln1.shift", (1, d), "zero")
            for w in ("wq", "wk", "wv", "wo"):
                add(blk + "attn." + w, (d, d))
            add(blk + "attn.bo", (1, d), "zero")
            add(blk + "ln2.scale", (1, d), "one")
            add(blk + "ln2.shift", (1, d), "zero")
            add(blk + "ffn.w1", (d, 2 * d))
            add(blk + "ffn.b1", (1, 2 * d), "zero")
            add(blk + "ffn.w2", (2 * d, d))
            add(blk + "ffn.b2", (1, d), "zero")
        add(pre + "decoder.ln.scale", (1, d), "one")
        add(pre + "decoder.ln.shift", (1, d), "zero")
        for w in ("wq", "wk", "wv"):
            add(pre + "decoder.attn." + w, (d, d))
        add(pre + "decoder.w_lambda", (config.head_dim, m))
        add(pre + "decoder.b_lambda", (1, m), "zero")
    n_combine = 1 if config.variant == "small" else config.layers
    for layer in range(n_combine):
        pre = f"combine{layer}."
        if config.combination == "affine":
            add(pre + "w", (m + 1, d))
            if config.combine_bias:
                add(pre + "b", (1, d), "zero")
        else:
            h = config.mlp_hidden
            add(pre + "w1", (m + 1, h))
            add(pre + "b1", (1, h), "zero")
            add(pre + "w2", (h, d))
            add(pre + "b2", (1, d), "zero")
    for layer in range(config.layers):
        add(f"conv{layer}.w", (d, d))
        add(f"conv{layer}.b", (1, d), "zero")
    add("out_proj.w", (d, config.out_dim))
    add("out_proj.b", (1, config.out_dim), "zero")
    return shapes


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, unit layer-norm scales.

    Random draws are taken in the fixed order of the parameter listing, so the
    result depends only on ``config`` and the generator state.
    """
    params = {}
    for name, shape, kind in _param_shapes(config):
        if kind == "zero":
            params[name] = np.zeros(shape)
        elif kind == "one":
            params[name] = np.ones(shape)
        else:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def param_count(params: Mapping[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


def save_params(path, params: Mapping[str, np.ndarray], config: Optional[ModelConfig] = None) -> None:
    doc = {
        "params": {
            name: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]}
            for name, v in params.items()
        }
    }
    if config is not None:
        doc["config"] = config.to_dict()
    Path(path).write_text(json.dumps(doc))


def load_params(path) -> tuple[dict[str, np.ndarray], Optional[ModelConfig]]:
    doc = json.loads(Path(path).read_text())
    params = {
        name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["params"].items()
    }
    config = ModelConfig(**doc["config"]) if "config" in doc else None
    return params, config


# ---------------------------------------------------------------------------
# building blocks on the tape
# ---------------------------------------------------------------------------


def _affine(x: Var, w: Var, b: Var) -> Var:
    return x @ w + ad.broadcast_row(b, x.shape[0])


def _layer_norm(x: Var, scale: Var, shift: Var) -> Var:
    rows = x.shape[0]
    return ad.layer_norm(x) * ad.broadcast_row(scale, rows) + ad.broadcast_row(shift, rows)


def _row(v: Var, k: int) -> Var:
    return ad.transpose(ad.slice_cols(ad.transpose(v), k, k + 1))


def _attention_heads(
    x: Var, wq: Var, wk: Var, wv: Var, heads: int, dropout_p: float, train: bool, rng
) -> tuple[list[Var], list[np.ndarray]]:
    q, k, v = x @ wq, x @ wk, x @ wv
    width = q.shape[1] // heads
    inv_sqrt = 1.0 / math.sqrt(width)
    outs, maps = [], []
    for h in range(heads):
        lo, hi = h * width, (h + 1) * width
        qh, kh, vh = ad.slice_cols(q, lo, hi), ad.slice_cols(k, lo, hi), ad.slice_cols(v, lo, hi)
        attn = ad.softmax_rows(ad.scale(qh @ ad.transpose(kh), inv_sqrt))
        maps.append(attn.value)
        attn = ad.dropout(attn, dropout_p, rng, train)
        outs.append(attn @ vh)
    return outs, maps


def encoder_block(
    z: Var,
    p: Mapping[str, Var],
    prefix: str,
    config: ModelConfig,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> tuple[Var, list[np.ndarray]]:
    """Pre-norm Transformer block: ``z + MHA(LN(z))`` then ``+ FFN(LN(.))``."""
    if z.shape[1] != config.d:
        raise ad.ShapeError(f"encoder_block: input width {z.shape[1]} != d={config.d}")
    pt = config.transformer_dropout
    h = _layer_norm(z, p[prefix + "ln1.scale"], p[prefix + "ln1.shift"])
    heads, maps = _attention_heads(
        h, p[prefix + "attn.wq"], p[prefix + "attn.wk"], p[prefix + "attn.wv"],
        config.heads, pt, train, rng,
    )
    merged = heads[0] if len(heads) == 1 else ad.concat_cols(heads)
    z = z + _affine(merged, p[prefix + "attn.wo"], p[prefix + "attn.bo"])
    h = _layer_norm(z, p[prefix + "ln2.scale"], p[prefix + "ln2.shift"])
    h = ad.relu(_affine(h, p[prefix + "ffn.w1"], p[prefix + "ffn.b1"]))
    h = ad.dropout(h, pt, rng, train)
    return z + _affine(h, p[prefix + "ffn.w2"], p[prefix + "ffn.b2"]), maps


@dataclass
class SpectralFilterBank:
    """Decoded per-head eigenvalues (each q x 1) plus the decoder attention maps."""

    new_eigenvalues: list[Var]
    attention: list[np.ndarray] = field(default_factory=list)

    def values(self) -> list[np.ndarray]:
        return [lam.value[:, 0].copy() for lam in self.new_eigenvalues]

    def mean_attention(self) -> np.ndarray:
        return np.mean(self.attention, axis=0)


def decode_filters(
    zhat: Var,
    p: Mapping[str, Var],
    prefix: str,
    config: ModelConfig,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> SpectralFilterBank:
    """One new eigenvalue vector per attention head: ``phi(Z_m W_lambda_m + b_m)``."""
    if zhat.shape[1] != config.d:
        raise ad.ShapeError(f"decode_filters: input width {zhat.shape[1]} != d={config.d}")
    pre = prefix + "decoder."
    h = _layer_norm(zhat, p[pre + "ln.scale"], p[pre + "ln.shift"])
    heads, maps = _attention_heads(
        h, p[pre + "attn.wq"], p[pre + "attn.wk"], p[pre + "attn.wv"],
        config.heads, config.transformer_dropout, train, rng,
    )
    q = zhat.shape[0]
    lambdas = []
    for m, zm in enumerate(heads):
        w = ad.slice_cols(p[pre + "w_lambda"], m, m + 1)
        b = ad.slice_cols(p[pre + "b_lambda"], m, m + 1)
        lam = zm @ w + ad.broadcast_row(b, q)
        if config.decoder_activation == "relu":
            lam = ad.relu(lam)
        elif config.decoder_activation == "tanh":
            lam = ad.tanh(lam)
        lambdas.append(lam)
    return SpectralFilterBank(lambdas, maps)


def spectral_filter_bank(
    tape: Tape,
    p: Mapping[str, Var],
    prefix: str,
    eigenvalues: np.ndarray,
    config: ModelConfig,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> SpectralFilterBank:
    """Encode the spectrum, run the encoder stack and decode the filters."""
    enc = tape.constant(eigenvalue_encoding(eigenvalues, config.d, config.epsilon))
    z = _affine(enc, p[prefix + "eig_proj.w"], p[prefix + "eig_proj.b"])
    for b in range(config.num_encoder_blocks):
        z, _ = encoder_block(z, p, f"{prefix}block{b}.", config, train, rng)
    return decode_filters(z, p, prefix, config, train, rng)


class _SpectralOperands:
    """Tape constants shared by every convolution against one eigensystem."""

    def __init__(self, tape: Tape, eig: EigenSystem):
        self.u = tape.constant(eig.eigenvectors)
        self.ut = tape.constant(eig.eigenvectors.T)
        self.n, self.q = eig.eigenvectors.shape
        self._ones_row = tape.constant(np.ones((1, self.n)))
        self._tape = tape
        self._spread: dict[int, Var] = {}

    def ones_row(self) -> Var:
        return self._ones_row

    def spread(self, lam: Var, width: int) -> Var:
        # q x 1 -> q x width by right-multiplying a constant ones row
        if width not in self._spread:
            self._spread[width] = self._tape.constant(np.ones((1, width)))
        return lam @ self._spread[width]

    def basis(self, lam: Var) -> Var:
        # n x n matrix U diag(lam) U^T, used by the materialized path only
        return (self.u * ad.broadcast_row(ad.transpose(lam), self.n)) @ self.ut


def combine_bases(
    lambdas: Sequence[Var],
    ops: _SpectralOperands,
    x,
    p: Mapping[str, Var],
    prefix: str,
    config: ModelConfig,
):
    """``X_hat[:, i] = S_hat[:, :, i] @ X[:, i]`` with ``S_hat = FFN([I || S_1 || ...])``.

    Affine combination uses the factorization
    ``sum_c W[c, i] C_c X_i + b_i 1 1^T X_i`` with ``S_m X = U diag(lam_m) U^T X``,
    so no n x n matrix is formed. The MLP combination streams the
    materialized basis through :func:`autodiff.mlp_basis_conv`.

    ``x`` may be a single n x d signal or a list of them; a list is pushed
    through the eigenbasis as one wide matrix and a list is returned.
    """
    batch = list(x) if isinstance(x, (list, tuple)) else [x]
    n, width = batch[0].shape
    for xs in batch:
        if xs.shape != (ops.n, width):
            raise ad.ShapeError(f"combine_bases: signal shape {xs.shape}, eigensystem has {ops.n} rows")
    if config.combination == "mlp":
        bases = [ops.basis(lam) for lam in lambdas]
        outs = [
            ad.mlp_basis_conv(
                bases, p[prefix + "w1"], p[prefix + "b1"], p[prefix + "w2"], p[prefix + "b2"], xs
            )
            for xs in batch
        ]
        return outs if isinstance(x, (list, tuple)) else outs[0]

    w = p[prefix + "w"]
    weights = [ad.broadcast_row(_row(w, c), n) for c in range(len(lambdas) + 1)]
    outs = [xs * weights[0] for xs in batch]
    if lambdas:
        wide = batch[0] if len(batch) == 1 else ad.concat_cols(batch)
        projected = ops.ut @ wide
        for m, lam in enumerate(lambdas):
            filtered = ops.u @ (projected * ops.spread(lam, wide.shape[1]))
            for k in range(len(batch)):
                part = filtered if len(batch) == 1 else ad.slice_cols(filtered, k * width, (k + 1) * width)
                outs[k] = outs[k] + part * weights[m + 1]
    if config.combine_bias:
        for k, xs in enumerate(batch):
            totals = (ops.ones_row() @ xs) * p[prefix + "b"]
            outs[k] = outs[k] + ad.broadcast_row(totals, n)
    return outs if isinstance(x, (list, tuple)) else outs[0]


def _graph_conv(
    x: Var,
    xhat: Var,
    p: Mapping[str, Var],
    layer: int,
    config: ModelConfig,
    train: bool,
    rng,
) -> Var:
    xhat = ad.dropout(xhat, config.propagation_dropout, rng, train)
    out = ad.relu(_affine(xhat, p[f"conv{layer}.w"], p[f"conv{layer}.b"]))
    return out + x if config.residual else out


class Specformer:
    """A configured network plus its parameters."""

    def __init__(self, config: ModelConfig, params: Mapping[str, np.ndarray]):
        expected = {name: shape for name, shape, _ in _param_shapes(config)}
        if set(expected) != set(params):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ValueError(f"parameter names do not match config (missing {missing}, extra {extra})")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ValueError(f"{name}: shape {params[name].shape} != expected {shape}")
        self.config = config
        self.params = {name: np.array(params[name], dtype=np.float64) for name in expected}

    @classmethod
    def init(cls, config: ModelConfig, rng) -> "Specformer":
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        return cls(config, init_params(config, rng))

    @property
    def num_params(self) -> int:
        return param_count(self.params)

    def save(self, path) -> None:
        save_params(path, self.params, self.config)

    @classmethod
    def load(cls, path) -> "Specformer":
        params, config = load_params(path)
        if config is None:
            raise ValueError(f"{path}: checkpoint carries no model config")
        return cls(config, params)

    # -- taped forward -----------------------------------------------------

    def filter_banks(
        self, tape: Tape, p: Mapping[str, Var], eig: EigenSystem, train: bool = False, rng=None
    ) -> list[SpectralFilterBank]:
        """One bank per filter set: a single bank unless the variant is large."""
        count = self.config.layers if self.config.variant == "large" else 1
        return [
            spectral_filter_bank(
                tape, p, self.config.filter_prefix(k), eig.eigenvalues, self.config, train, rng
            )
            for k in range(count)
        ]

    def run(
        self,
        tape: Tape,
        p: Mapping[str, Var],
        eig: EigenSystem,
        inputs: Sequence[np.ndarray],
        train: bool = False,
        rng: Optional[np.random.Generator] = None,
    ) -> tuple[list[Var], list[SpectralFilterBank]]:
        """Forward every signal in ``inputs`` through one shared set of filter banks.

        With dropout active, ``rng`` is consumed in a fixed order: filter banks
        first (encoder blocks, then decoder), then feature dropout for each
        input, then each layer's propagation dropout for each input.
        """
        cfg = self.config
        if train and rng is None and (
            cfg.transformer_dropout or cfg.feature_dropout or cfg.propagation_dropout
        ):
            raise ValueError("training with dropout needs an rng")
        banks = self.filter_banks(tape, p, eig, train, rng)
        ops = _SpectralOperands(tape, eig)
        xs = []
        for x_in in inputs:
            x_in = np.asarray(x_in, dtype=np.float64)
            if x_in.ndim == 1:
                x_in = x_in[:, None]
            if x_in.shape != (eig.n, cfg.in_dim):
                raise ad.ShapeError(f"input shape {x_in.shape} != {(eig.n, cfg.in_dim)}")
            x = ad.dropout(tape.constant(x_in), cfg.feature_dropout, rng, train)
            xs.append(_affine(x, p["in_proj.w"], p["in_proj.b"]))
        for layer in range(cfg.layers):
            bank = banks[layer if cfg.variant == "large" else 0]
            xhats = combine_bases(bank.new_eigenvalues, ops, xs, p, cfg.combine_prefix(layer), cfg)
            xs = [_graph_conv(x, xhat, p, layer, cfg, train, rng) for x, xhat in zip(xs, xhats)]
        outputs = [_affine(x, p["out_proj.w"], p["out_proj.b"]) for x in xs]
        return outputs, banks

    def predict(self, eig: EigenSystem, x) -> np.ndarray:
        """Eval-mode forward of a single input, as a plain array."""
        tape = Tape()
        outs, _ = self.run(tape, tape.params(self.params), eig, [x], train=False)
        return outs[0].value.copy()


def forward(
    eig: EigenSystem,
    x_in,
    config: ModelConfig,
    params: Mapping[str, np.ndarray],
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    model = Specformer(config, params)
    tape = Tape()
    outs, _ = model.run(tape, tape.params(model.params), eig, [x_in], mode == "train", rng)
    return outs[0].value.copy()


def build_bases_and_convolve(
    new_eigenvalues: Sequence[np.ndarray],
    eig: EigenSystem,
    x,
    layer_params: Mapping[str, np.ndarray],
    config: ModelConfig,
    layer: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Array-level convenience wrapper for one convolution layer.

    ``layer_params`` holds the combination weights under ``combine{k}.*`` and
    ``conv{layer}.w`` / ``conv{layer}.b``. Returns ``(X_hat, layer output)``.
    """
    tape = Tape()
    p = {k: tape.constant(v) for k, v in layer_params.items()}
    lams = [tape.constant(np.asarray(lam, dtype=np.float64).reshape(-1, 1)) for lam in new_eigenvalues]
    ops = _SpectralOperands(tape, eig)
    xv = tape.constant(np.asarray(x, dtype=np.float64))
    xhat = combine_bases(lams, ops, xv, p, config.combine_prefix(layer), config)
    out = _graph_conv(xv, xhat, p, layer, config, False, None)
    return xhat.value.copy(), out.value.copy()


# ---------------------------------------------------------------------------
# standalone operations
# ---------------------------------------------------------------------------


def edge_feature_layer(h, e, s) -> np.ndarray:
    """Broadcast node features onto edges, filter by ``s`` and sum over the first axis.

    ``h`` is n x d, ``e`` is n x n x d and ``s`` either n x n (shared by all
    channels) or n x n x d.
    """
    h = np.asarray(h, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    n, d = h.shape
    if e.shape != (n, n, d):
        raise ValueError(f"edge features must be {(n, n, d)}, got {e.shape}")
    if s.shape == (n, n):
        s = s[:, :, None]
    elif s.shape != (n, n, d):
        raise ValueError(f"basis must be {(n, n)} or {(n, n, d)}, got {s.shape}")
    mixed = h[None, :, :] + e
    return (s * mixed).sum(axis=0)


def _solve_exact_least_squares(grid: np.ndarray, values: np.ndarray, d: int, epsilon: float, digits: int):
    import mpmath

    ctx = mpmath.mp.clone()
    ctx.dps = digits
    freqs = [ctx.mpf(epsilon) / ctx.power(10000, ctx.mpf(2 * i) / d) for i in range(d // 2)]
    rows = []
    for lam in grid:
        lam = ctx.mpf(float(lam))
        row = [lam]
        for f in freqs:
            row += [ctx.sin(f * lam), ctx.cos(f * lam)]
        rows.append(row)
    width = d + 1
    gram = ctx.matrix(width, width)
    rhs = ctx.matrix(width, 1)
    for row, y in zip(rows, values):
        y = ctx.mpf(float(y))
        for i in range(width):
            rhs[i] += row[i] * y
            for j in range(i, width):
                gram[i, j] += row[i] * row[j]
    for i in range(width):
        for j in range(i):
            gram[i, j] = gram[j, i]
    w = ctx.lu_solve(gram, rhs)
    errors = [abs(sum(row[i] * w[i] for i in range(width)) - ctx.mpf(float(y))) for row, y in zip(rows, values)]
    return np.array([float(v) for v in w]), float(max(errors))


def fit_univariate_filter(
    target: Callable[[np.ndarray], np.ndarray],
    grid,
    d: int,
    epsilon: float,
    ridge: float = 1e-10,
    digits: Optional[int] = None,
) -> tuple[np.ndarray, float]:
    """Least-squares fit of ``encoding(lam) @ w`` to ``target`` on ``grid``.

    By default solves the ridge-regularized normal equations in float64.
    The encoding basis is very ill-conditioned (low-frequency channels are
    nearly polynomial), so float64 cannot reach the exact least-squares
    optimum for large ``d``. Passing ``digits`` solves the unregularized
    problem in extended precision with mpmath instead; the returned error is
    then measured at that precision. Returns the d + 1 weights (raw-eigenvalue
    channel first, rounded to float64) and the max absolute error on the grid.
    """
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    if grid.min() < 0.0 or grid.max() > 2.0:
        raise ValueError("fit grid must lie within [0, 2]")
    values = np.asarray(target(grid), dtype=np.float64).reshape(-1)
    if digits is not None:
        return _solve_exact_least_squares(grid, values, d, epsilon, digits)
    basis = eigenvalue_encoding(grid, d, epsilon)
    gram = basis.T @ basis + ridge * np.eye(d + 1)
    w = np.linalg.solve(gram, basis.T @ values)
    return w, float(np.abs(basis @ w - values).max())
