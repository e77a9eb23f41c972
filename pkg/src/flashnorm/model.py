"""Typed transformer fragments and a single flag-driven evaluator.

A :class:`Model` is an ordered chain of blocks. Each block carries booleans
describing which fusions have been applied to it, and :func:`forward`
evaluates exactly the datapath those flags describe. Unfused and fused
versions of a model therefore go through the same evaluator, which is what
the equivalence harness relies on.

Datapaths once the norm weights are merged (``g_merged``), with ``s`` the
per-token factor ``1/RMSe(x)`` (``1/RSSe(x)`` after the 1/n elimination):

* norm-linear: ``(x*s) W* + c``, or ``(x W*)*s + c`` when deferred
* ffn: ``s`` is applied at the outputs of Up and Gate; deferral moves one of
  those factors to the FFN output, the ReGLU/bilinear collapse replaces both
  with a single ``s**2`` at the output
* attention: ``s`` is applied at the outputs of Q, K and V; RoPE fusion moves
  it into the per-token cos/sin tables shared by all heads
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, ClassVar, Union

import numpy as np

from flashnorm.linalg import DTYPES, ShapeError, scale, sum_last, vec_mat
from flashnorm.norms import (
    NormKind,
    NormSpec,
    RopeParams,
    apply_norm,
    identity_act,
    mean_center,
    norm_denominator,
    permute,
    permute_g,
    relu,
    rmse,
    silu,
    sum_squares,
)

SCHEMA_VERSION = 1


class FlagError(ValueError):
    """A block's fusion flags describe a datapath that does not exist."""


class ModelFormatError(ValueError):
    """A model file or dict could not be turned into a valid model."""


class DegenerateInputError(ZeroDivisionError):
    """Input with zero energy reached an RMS divisor that has eps = 0."""


class FfnKind(str, enum.Enum):
    RELU = "relu"
    GLU = "glu"


class Activation(str, enum.Enum):
    SILU = "silu"
    RELU = "relu"
    LINEAR = "linear"


ACTIVATIONS = {
    Activation.SILU: silu,
    Activation.RELU: relu,
    Activation.LINEAR: identity_act,
}


@dataclass(frozen=True, eq=False)
class QKNorm:
    """Per-layer query/key RMSNorm weights, shared by every head."""

    gq: np.ndarray
    gk: np.ndarray
    eps: float = 0.0


@dataclass(frozen=True, eq=False)
class NormLinearBlock:
    norm: NormSpec | None
    W: np.ndarray
    c: np.ndarray | None = None
    g_merged: bool = False
    bias_folded: bool = False
    deferred: bool = False
    inv_n_eliminated: bool = False

    type: ClassVar[str] = "norm_linear"
    FLAGS: ClassVar[tuple[str, ...]] = ("g_merged", "bias_folded", "deferred", "inv_n_eliminated")

    @property
    def in_dim(self) -> int:
        return self.W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W.shape[1]

    def validate(self) -> None:
        if self.W.ndim != 2:
            raise ShapeError(f"W must be a matrix, got shape {self.W.shape}")
        if self.norm is not None and self.norm.dim != self.in_dim:
            raise ShapeError(f"W has {self.in_dim} rows but norm dim is {self.norm.dim}")
        if self.c is not None and self.c.shape != (self.out_dim,):
            raise ShapeError(f"bias c has shape {self.c.shape}, expected ({self.out_dim},)")
        norm = self.norm
        if norm is None:
            if any(getattr(self, f) for f in self.FLAGS):
                raise FlagError("a block without a norm cannot carry fusion flags")
            return
        if self.g_merged and (norm.g is not None or norm.b is not None):
            raise FlagError("g_merged requires the norm weights and bias to be gone")
        if self.bias_folded and norm.b is not None:
            raise FlagError("bias_folded but norm.b is still present")
        if self.deferred and not (self.g_merged and norm.kind is NormKind.RMSNORM):
            raise FlagError("deferred normalization needs g_merged and an RMSNorm")
        if self.inv_n_eliminated and norm.kind is not NormKind.RMSNORM:
            raise FlagError("inv_n_eliminated only applies to RMSNorm")


@dataclass(frozen=True, eq=False)
class FfnBlock:
    kind: FfnKind
    norm: NormSpec
    up: np.ndarray
    down: np.ndarray
    gate: np.ndarray | None = None
    activation: Activation | None = None
    g_merged: bool = False
    deferred_out: bool = False
    ms_collapsed: bool = False
    inv_n_eliminated: bool = False

    type: ClassVar[str] = "ffn"
    FLAGS: ClassVar[tuple[str, ...]] = ("g_merged", "deferred_out", "ms_collapsed", "inv_n_eliminated")

    def __post_init__(self):
        object.__setattr__(self, "kind", FfnKind(self.kind))
        if self.activation is not None:
            object.__setattr__(self, "activation", Activation(self.activation))

    @property
    def in_dim(self) -> int:
        return self.up.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.up.shape[1]

    @property
    def out_dim(self) -> int:
        return self.down.shape[1]

    def validate(self) -> None:
        n, f = self.up.shape
        if self.norm.dim != n:
            raise ShapeError(f"up has {n} rows but norm dim is {self.norm.dim}")
        if self.down.shape[0] != f:
            raise ShapeError(f"down has {self.down.shape[0]} rows, expected {f}")
        if self.kind is FfnKind.GLU:
            if self.gate is None or self.gate.shape != self.up.shape:
                raise ShapeError("a GLU FFN needs a gate matrix shaped like up")
            if self.activation is None:
                raise FlagError("a GLU FFN needs an activation")
        elif self.gate is not None or self.activation is not None:
            raise FlagError("a ReLU FFN has neither gate nor GLU activation")
        norm = self.norm
        if self.g_merged and (norm.g is not None or norm.b is not None):
            raise FlagError("g_merged requires the norm weights and bias to be gone")
        if (self.deferred_out or self.ms_collapsed) and not (
            self.g_merged and norm.kind is NormKind.RMSNORM
        ):
            raise FlagError("FFN deferral needs g_merged and an RMSNorm")
        if self.ms_collapsed:
            if self.activation not in (Activation.RELU, Activation.LINEAR):
                raise FlagError("ms_collapsed only holds for ReGLU and bilinear GLU")
            if self.deferred_out:
                raise FlagError("ms_collapsed and deferred_out are exclusive")
        if self.inv_n_eliminated and norm.kind is not NormKind.RMSNORM:
            raise FlagError("inv_n_eliminated only applies to RMSNorm")


@dataclass(frozen=True, eq=False)
class AttentionBlock:
    norm: NormSpec
    Wq: np.ndarray
    Wk: np.ndarray
    Wv: np.ndarray
    heads: int
    head_dim: int
    rope: RopeParams
    qk_norm: QKNorm | None = None
    g_merged: bool = False
    rope_fused: bool = False
    sqrt_h_fused: bool = False
    qk_rms_eliminated: bool = False
    qknorm_in_rope: bool = False
    inv_n_eliminated: bool = False

    type: ClassVar[str] = "attention"
    FLAGS: ClassVar[tuple[str, ...]] = (
        "g_merged",
        "rope_fused",
        "sqrt_h_fused",
        "qk_rms_eliminated",
        "qknorm_in_rope",
        "inv_n_eliminated",
    )

    @property
    def in_dim(self) -> int:
        return self.Wq.shape[0]

    @property
    def out_dim(self) -> int:
        h, H = self.head_dim, self.heads
        return 3 * h * H + H

    def validate(self) -> None:
        h, H = self.head_dim, self.heads
        if H < 1 or h < 2 or h % 2:
            raise ShapeError(f"need heads >= 1 and an even head_dim, got H={H}, h={h}")
        for name in ("Wq", "Wk", "Wv"):
            W = getattr(self, name)
            if W.shape != (self.norm.dim, h * H):
                raise ShapeError(f"{name} has shape {W.shape}, expected ({self.norm.dim}, {h * H})")
        if self.rope.head_dim != h:
            raise ShapeError(f"rope head_dim {self.rope.head_dim} != {h}")
        if self.qk_norm is not None:
            for name in ("gq", "gk"):
                if getattr(self.qk_norm, name).shape != (h,):
                    raise ShapeError(f"qk_norm.{name} must have length {h}")
        norm = self.norm
        if self.g_merged and (norm.g is not None or norm.b is not None):
            raise FlagError("g_merged requires the norm weights and bias to be gone")
        if self.rope_fused:
            if self.qk_norm is not None:
                raise FlagError("rope_fused is not defined together with QK-norm")
            if not (self.g_merged and norm.kind is NormKind.RMSNORM):
                raise FlagError("rope_fused needs g_merged and an RMSNorm")
        if self.sqrt_h_fused and not self.rope_fused:
            raise FlagError("sqrt_h_fused rides on the fused RoPE tables")
        if self.qk_rms_eliminated:
            if self.qk_norm is None:
                raise FlagError("qk_rms_eliminated needs a QK-norm")
            if not (self.g_merged and norm.kind is NormKind.RMSNORM):
                raise FlagError("qk_rms_eliminated needs g_merged and an RMSNorm")
        if self.qknorm_in_rope and not self.qk_rms_eliminated:
            raise FlagError("qknorm_in_rope needs qk_rms_eliminated")
        if self.inv_n_eliminated and norm.kind is not NormKind.RMSNORM:
            raise FlagError("inv_n_eliminated only applies to RMSNorm")


Block = Union[NormLinearBlock, FfnBlock, AttentionBlock]
BLOCK_TYPES = {cls.type: cls for cls in (NormLinearBlock, FfnBlock, AttentionBlock)}


@dataclass(frozen=True, eq=False)
class Model:
    blocks: tuple
    dim: int
    dtype: str = "f64"

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        self.validate()

    def validate(self) -> None:
        if self.dtype not in DTYPES:
            raise ModelFormatError(f"unknown dtype {self.dtype!r}")
        if not self.blocks:
            raise ModelFormatError("a model needs at least one block")
        width = self.dim
        for i, block in enumerate(self.blocks):
            try:
                block.validate()
            except ValueError as exc:
                raise type(exc)(f"block {i}: {exc}") from None
            if block.in_dim != width:
                raise ShapeError(f"block {i}: expects input dim {block.in_dim}, chain provides {width}")
            if isinstance(block, AttentionBlock) and i != len(self.blocks) - 1:
                raise ModelFormatError(f"block {i}: an attention block must be the last block")
            width = block.out_dim

    @property
    def out_dim(self) -> int:
        return self.blocks[-1].out_dim

    def with_blocks(self, blocks) -> "Model":
        return replace(self, blocks=tuple(blocks))

    def __eq__(self, other):
        if not isinstance(other, Model):
            return NotImplemented
        return to_dict(self) == to_dict(other)

    __hash__ = None


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True, eq=False)
class AttentionOutput:
    """Per-head post-RoPE queries/keys, normalized values and scaled scores.

    ``qk_prescaled`` is set when q and k already carry ``h**-1/4`` each (the
    1/sqrt(h) of the dot product was folded into the RoPE tables).
    """

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    scores: np.ndarray
    qk_prescaled: bool

    def flat(self) -> np.ndarray:
        """Concatenate q, k, v and scores, with q and k in the prescaled convention."""
        h = self.q.shape[-1]
        c = 1.0 if self.qk_prescaled else h**-0.25
        batch = self.q.shape[:-2]
        parts = [
            self.q.reshape(batch + (-1,)) * c,
            self.k.reshape(batch + (-1,)) * c,
            self.v,
            self.scores,
        ]
        return np.concatenate(parts, axis=-1)


def _inv_denominator(x, norm: NormSpec, inv_n: bool):
    d = np.asarray(norm_denominator(x, norm, inv_n))
    if np.any(d == 0):
        raise DegenerateInputError("input has zero energy and the norm has eps=0")
    return 1 / d


def _inv_mean_square(x, norm: NormSpec, inv_n: bool):
    ss = sum_squares(x)
    n = x.shape[-1]
    d = n * norm.eps + ss if inv_n else norm.eps + ss / n
    if np.any(d == 0):
        raise DegenerateInputError("input has zero energy and the norm has eps=0")
    return 1 / d


def _merged_input(x, norm: NormSpec, inv_n: bool):
    """Input to the merged linear layers and the per-token factor (None for DyT)."""
    if norm.kind is NormKind.DYT:
        return np.tanh(norm.alpha * x), None
    if norm.kind is NormKind.LAYERNORM:
        x = mean_center(x)
    return x, _inv_denominator(x, norm, inv_n)


def _scaled(a, s):
    return a if s is None else scale(a, s)


def _cast(a, dt):
    return None if a is None else np.asarray(a, dtype=dt)


def _eval_norm_linear(block: NormLinearBlock, x, dt):
    W = _cast(block.W, dt)
    norm = block.norm
    if norm is None:
        y = vec_mat(x, W)
    elif not block.g_merged:
        y = vec_mat(apply_norm(x, _cast_norm(norm, dt), block.inv_n_eliminated), W)
    else:
        xin, s = _merged_input(x, norm, block.inv_n_eliminated)
        if block.deferred:
            y = _scaled(vec_mat(xin, W), s)
        else:
            y = vec_mat(_scaled(xin, s), W)
    if block.c is not None:
        y = y + _cast(block.c, dt)
    return y


def _eval_ffn(block: FfnBlock, x, dt):
    up, down, gate = _cast(block.up, dt), _cast(block.down, dt), _cast(block.gate, dt)
    act = relu if block.kind is FfnKind.RELU else ACTIVATIONS[block.activation]
    norm = block.norm
    if not block.g_merged:
        xn = apply_norm(x, _cast_norm(norm, dt), block.inv_n_eliminated)
        u = vec_mat(xn, up)
        hidden = relu(u) if gate is None else act(vec_mat(xn, gate)) * u
        return vec_mat(hidden, down)

    xin, s = _merged_input(x, norm, block.inv_n_eliminated)
    u = vec_mat(xin, up)
    if block.kind is FfnKind.RELU:
        if block.deferred_out:
            return _scaled(vec_mat(relu(u), down), s)
        return vec_mat(relu(_scaled(u, s)), down)

    gt = vec_mat(xin, gate)
    if block.ms_collapsed:
        s2 = _inv_mean_square(xin, norm, block.inv_n_eliminated)
        return scale(vec_mat(act(gt) * u, down), s2)
    if block.deferred_out:
        return _scaled(vec_mat(act(_scaled(gt, s)) * u, down), s)
    return vec_mat(act(_scaled(gt, s)) * _scaled(u, s), down)


def _qk_normalize(t, g, eps, weights_in_rope: bool):
    d = np.asarray(rmse(t, eps))
    if np.any(d == 0):
        raise DegenerateInputError("zero-energy head vector with eps=0 in the QK-norm")
    t = t * (1 / d)[..., None]
    return t if weights_in_rope else t * g


def eval_attention(block: AttentionBlock, x, dtype: str = "f64") -> AttentionOutput:
    """Evaluate one attention block on a ``(B, n)`` batch of tokens."""
    dt = DTYPES[dtype]
    x = np.asarray(x, dtype=dt)
    H, h = block.heads, block.head_dim
    Wq, Wk, Wv = (_cast(getattr(block, w), dt) for w in ("Wq", "Wk", "Wv"))
    norm = block.norm
    cos, sin = block.rope.tables(dt)
    batch = x.shape[:-1]

    if not block.g_merged:
        xn = apply_norm(x, _cast_norm(norm, dt), block.inv_n_eliminated)
        q, k, v = vec_mat(xn, Wq), vec_mat(xn, Wk), vec_mat(xn, Wv)
        cos_q = cos_k = cos
        sin_q = sin_k = sin
    else:
        xin, s = _merged_input(x, norm, block.inv_n_eliminated)
        q, k = vec_mat(xin, Wq), vec_mat(xin, Wk)
        v = _scaled(vec_mat(xin, Wv), s)
        cos_q = cos_k = cos
        sin_q = sin_k = sin
        if block.rope_fused:
            t = s * h**-0.25 if block.sqrt_h_fused else s
            t = np.asarray(t)[..., None, None]
            cos_q = cos_k = cos * t
            sin_q = sin_k = sin * t
        elif not block.qk_rms_eliminated:
            q, k = _scaled(q, s), _scaled(k, s)

    q = q.reshape(batch + (H, h))
    k = k.reshape(batch + (H, h))
    qk = block.qk_norm
    if qk is not None:
        gq, gk = _cast(qk.gq, dt), _cast(qk.gk, dt)
        fused = block.qknorm_in_rope
        q = _qk_normalize(q, gq, qk.eps, fused)
        k = _qk_normalize(k, gk, qk.eps, fused)
        if fused:
            cos_q, sin_q = cos * gq, sin * permute_g(gq)
            cos_k, sin_k = cos * gk, sin * permute_g(gk)

    q = q * cos_q + permute(q) * sin_q
    k = k * cos_k + permute(k) * sin_k
    scores = sum_last(q * k)
    if not block.sqrt_h_fused:
        scores = scores * (1 / math.sqrt(h))
    return AttentionOutput(q, k, v, scores, qk_prescaled=block.sqrt_h_fused)


def _cast_norm(norm: NormSpec, dt) -> NormSpec:
    if dt is np.float64:
        return norm
    return replace(norm, g=_cast(norm.g, dt), b=_cast(norm.b, dt))


def eval_block(block: Block, x, dtype: str = "f64") -> np.ndarray:
    dt = DTYPES[dtype]
    x = np.asarray(x, dtype=dt)
    if isinstance(block, NormLinearBlock):
        return _eval_norm_linear(block, x, dt)
    if isinstance(block, FfnBlock):
        return _eval_ffn(block, x, dt)
    return eval_attention(block, x, dtype).flat()


def forward(model: Model, x) -> np.ndarray:
    """Run ``x`` (one token, or a ``(B, n)`` batch of independent tokens) through the chain.

    A trailing attention block contributes its q, k, v and scaled QK scores,
    flattened by :meth:`AttentionOutput.flat`.
    """
    dt = DTYPES[model.dtype]
    y = np.asarray(x, dtype=dt)
    if y.ndim not in (1, 2) or y.shape[-1] != model.dim:
        raise ShapeError(f"input shape {y.shape} does not match model dim {model.dim}")
    single = y.ndim == 1
    if single:
        y = y[None, :]
    for block in model.blocks:
        y = eval_block(block, y, model.dtype)
    return y[0] if single else y


# ---------------------------------------------------------------------------
# serialization


def _arr(a):
    return None if a is None else np.asarray(a).tolist()


def _norm_to_dict(norm: NormSpec | None):
    if norm is None:
        return None
    return {
        "kind": norm.kind.value,
        "dim": norm.dim,
        "eps": norm.eps,
        "alpha": norm.alpha,
        "g": _arr(norm.g),
        "b": _arr(norm.b),
    }


def block_to_dict(block: Block) -> dict:
    d: dict[str, Any] = {"type": block.type, "norm": _norm_to_dict(block.norm)}
    if isinstance(block, NormLinearBlock):
        d.update(W=_arr(block.W), c=_arr(block.c))
    elif isinstance(block, FfnBlock):
        d.update(
            kind=block.kind.value,
            activation=None if block.activation is None else block.activation.value,
            up=_arr(block.up),
            gate=_arr(block.gate),
            down=_arr(block.down),
        )
    else:
        qk = block.qk_norm
        d.update(
            heads=block.heads,
            head_dim=block.head_dim,
            Wq=_arr(block.Wq),
            Wk=_arr(block.Wk),
            Wv=_arr(block.Wv),
            rope={"thetas": _arr(block.rope.thetas), "position": block.rope.position},
            qk_norm=None if qk is None else {"gq": _arr(qk.gq), "gk": _arr(qk.gk), "eps": qk.eps},
        )
    d["flags"] = {f: bool(getattr(block, f)) for f in block.FLAGS}
    return d


def to_dict(model: Model) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "dtype": model.dtype,
        "dim": model.dim,
        "blocks": [block_to_dict(b) for b in model.blocks],
    }


def _vec(d, key, required=True):
    val = d.get(key)
    if val is None:
        if required:
            raise ModelFormatError(f"missing field {key!r}")
        return None
    arr = np.array(val, dtype=np.float64)
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise ModelFormatError(f"field {key!r} must be a finite vector")
    return arr


def _mat(d, key, required=True):
    val = d.get(key)
    if val is None:
        if required:
            raise ModelFormatError(f"missing field {key!r}")
        return None
    try:
        arr = np.array(val, dtype=np.float64)
    except ValueError:
        raise ModelFormatError(f"field {key!r} is a ragged matrix") from None
    if arr.ndim != 2 or not np.all(np.isfinite(arr)):
        raise ModelFormatError(f"field {key!r} must be a finite matrix")
    return arr


def _norm_from_dict(d):
    if d is None:
        return None
    kind = d.get("kind")
    if kind not in {k.value for k in NormKind}:
        raise ModelFormatError(f"unknown norm kind {kind!r}")
    return NormSpec(
        kind=NormKind(kind),
        dim=int(d["dim"]),
        eps=float(d.get("eps", 0.0)),
        alpha=float(d.get("alpha", 1.0)),
        g=_vec(d, "g", required=False),
        b=_vec(d, "b", required=False),
    )


def _flags(d, cls) -> dict:
    flags = d.get("flags", {})
    unknown = set(flags) - set(cls.FLAGS)
    if unknown:
        raise ModelFormatError(f"unknown flags {sorted(unknown)}")
    return {k: bool(v) for k, v in flags.items()}


def block_from_dict(d: dict) -> Block:
    btype = d.get("type")
    if btype not in BLOCK_TYPES:
        raise ModelFormatError(f"unknown block type {btype!r}")
    if btype == "norm_linear":
        return NormLinearBlock(
            norm=_norm_from_dict(d.get("norm")),
            W=_mat(d, "W"),
            c=_vec(d, "c", required=False),
            **_flags(d, NormLinearBlock),
        )
    norm = _norm_from_dict(d.get("norm"))
    if norm is None:
        raise ModelFormatError(f"a {btype} block needs a norm")
    if btype == "ffn":
        kind = d.get("kind")
        if kind not in {k.value for k in FfnKind}:
            raise ModelFormatError(f"unknown ffn kind {kind!r}")
        act = d.get("activation")
        if act is not None and act not in {a.value for a in Activation}:
            raise ModelFormatError(f"unknown activation {act!r}")
        return FfnBlock(
            kind=FfnKind(kind),
            norm=norm,
            up=_mat(d, "up"),
            down=_mat(d, "down"),
            gate=_mat(d, "gate", required=False),
            activation=act,
            **_flags(d, FfnBlock),
        )
    rope = d.get("rope") or {}
    qk = d.get("qk_norm")
    h = int(d["head_dim"])
    return AttentionBlock(
        norm=norm,
        Wq=_mat(d, "Wq"),
        Wk=_mat(d, "Wk"),
        Wv=_mat(d, "Wv"),
        heads=int(d["heads"]),
        head_dim=h,
        rope=RopeParams(h, _vec(rope, "thetas"), int(rope.get("position", 0))),
        qk_norm=None
        if qk is None
        else QKNorm(_vec(qk, "gq"), _vec(qk, "gk"), float(qk.get("eps", 0.0))),
        **_flags(d, AttentionBlock),
    )


def from_dict(data: dict) -> Model:
    if not isinstance(data, dict):
        raise ModelFormatError("top level must be a JSON object")
    if data.get("version") != SCHEMA_VERSION:
        raise ModelFormatError(f"unsupported schema version {data.get('version')!r}")
    raw_blocks = data.get("blocks")
    if not isinstance(raw_blocks, list):
        raise ModelFormatError("'blocks' must be a list")
    blocks = []
    for i, raw in enumerate(raw_blocks):
        try:
            if not isinstance(raw, dict):
                raise ModelFormatError("block must be a JSON object")
            blocks.append(block_from_dict(raw))
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"block {i}: {exc}") from None
    try:
        return Model(blocks, dim=int(data["dim"]), dtype=data.get("dtype", "f64"))
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"bad model header: {exc}") from None
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None


def save(model: Model, path) -> None:
    Path(path).write_text(json.dumps(to_dict(model)) + "\n")


def load(path) -> Model:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: malformed JSON: {exc}") from None
    return from_dict(data)


# ---------------------------------------------------------------------------
# generation

KINDS = (
    "norm-linear",
    "ffn-relu",
    "ffn-glu",
    "ffn-reglu",
    "ffn-bilinear",
    "attn",
    "attn-qknorm",
    "layernorm-retrofit",
)

_FFN_KINDS = {
    "ffn-relu": (FfnKind.RELU, None),
    "ffn-glu": (FfnKind.GLU, Activation.SILU),
    "ffn-reglu": (FfnKind.GLU, Activation.RELU),
    "ffn-bilinear": (FfnKind.GLU, Activation.LINEAR),
}


def generate(
    kind: str,
    n: int,
    f: int | None = None,
    h: int | None = None,
    heads: int | None = None,
    seed: int = 0,
    eps: float = 1e-5,
    norm: str = "rmsnorm",
    dtype: str = "f64",
) -> Model:
    """Build a deterministic random model.

    Draws come from ``numpy.random.default_rng(seed)`` in the order the tensors
    appear in the block (norm g, norm b, DyT alpha, then weight matrices and
    biases in field order). Weights and biases are uniform in [-1, 1], norm and
    QK-norm weights uniform in [0.5, 1.5].
    """
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}; choose from {', '.join(KINDS)}")
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)

    def w(*shape):
        return rng.uniform(-1.0, 1.0, size=shape)

    def gain(size):
        return rng.uniform(0.5, 1.5, size=size)

    def make_norm(nkind: str, with_bias: bool) -> NormSpec:
        nkind = NormKind(nkind)
        g = gain(n)
        b = w(n) if with_bias else None
        if nkind is NormKind.DYT:
            return NormSpec(nkind, n, alpha=float(rng.uniform(0.5, 1.5)), g=g, b=b)
        return NormSpec(nkind, n, eps=eps, g=g, b=b)

    if kind == "norm-linear":
        k = f or n
        nspec = make_norm(norm, with_bias=NormKind(norm) is not NormKind.RMSNORM)
        blocks = [NormLinearBlock(nspec, W=w(n, k), c=w(k))]
    elif kind in _FFN_KINDS:
        if not f or f < 1:
            raise ValueError(f"{kind} needs a positive hidden size f")
        fkind, act = _FFN_KINDS[kind]
        nspec = make_norm("rmsnorm", with_bias=False)
        up = w(n, f)
        gate = w(n, f) if fkind is FfnKind.GLU else None
        blocks = [FfnBlock(fkind, nspec, up=up, down=w(f, n), gate=gate, activation=act)]
    elif kind in ("attn", "attn-qknorm"):
        if not h or not heads or h % 2 or h < 2 or heads < 1:
            raise ValueError("attention needs an even head dim h and heads >= 1")
        nspec = make_norm("rmsnorm", with_bias=False)
        Wq, Wk, Wv = w(n, h * heads), w(n, h * heads), w(n, h * heads)
        position = int(rng.integers(0, 128))
        qk = None
        if kind == "attn-qknorm":
            qk = QKNorm(gain(h), gain(h), eps)
        blocks = [
            AttentionBlock(
                nspec, Wq, Wk, Wv, heads=heads, head_dim=h,
                rope=RopeParams.default(h, position), qk_norm=qk,
            )
        ]
    else:
        blocks = [NormLinearBlock(None, W=w(n, n), c=w(n))]
        for _ in range(2):
            nspec = make_norm("layernorm", with_bias=True)
            blocks.append(NormLinearBlock(nspec, W=w(n, n), c=w(n)))
    return Model(blocks, dim=n, dtype=dtype)

