"""Reference kernels: RMS variants, RMSNorm/LayerNorm/DyT, activations and RoPE.

All kernels reduce over the last axis, so a batch of row vectors works the
same way as a single vector.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from flashnorm.linalg import ShapeError, Tensor1, sum_last


class NormKind(str, enum.Enum):
    RMSNORM = "rmsnorm"
    LAYERNORM = "layernorm"
    DYT = "dyt"


@dataclass(frozen=True, eq=False)
class NormSpec:
    """One normalization instance.

    ``g`` and ``b`` are optional; absent weights act as ones and absent bias
    as zeros. ``eps`` is used by RMSNorm and LayerNorm, ``alpha`` only by DyT.
    """

    kind: NormKind
    dim: int
    eps: float = 0.0
    alpha: float = 1.0
    g: Tensor1 | None = None
    b: Tensor1 | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", NormKind(self.kind))
        if self.dim < 1:
            raise ValueError(f"norm dim must be positive, got {self.dim}")
        if self.eps < 0:
            raise ValueError(f"eps must be nonnegative, got {self.eps}")
        if self.kind is NormKind.DYT and self.eps != 0:
            raise ValueError("DyT carries no eps")
        for name in ("g", "b"):
            vec = getattr(self, name)
            if vec is not None and np.shape(vec) != (self.dim,):
                raise ShapeError(f"norm.{name} has shape {np.shape(vec)}, expected ({self.dim},)")

    @property
    def param_tensors(self) -> int:
        return int(self.g is not None) + int(self.b is not None)


@dataclass(frozen=True, eq=False)
class RopeParams:
    """Rotary embedding frequencies (one per pair) and the token position."""

    head_dim: int
    thetas: Tensor1
    position: int = 0

    def __post_init__(self):
        if self.head_dim < 2 or self.head_dim % 2:
            raise ValueError(f"head_dim must be even and positive, got {self.head_dim}")
        if np.shape(self.thetas) != (self.head_dim // 2,):
            raise ShapeError(f"thetas shape {np.shape(self.thetas)} != ({self.head_dim // 2},)")
        if not np.all(np.asarray(self.thetas) > 0):
            raise ValueError("thetas must be strictly positive")
        if self.position < 0:
            raise ValueError("position must be nonnegative")

    @classmethod
    def default(cls, head_dim: int, position: int = 0, base: float = 10000.0) -> "RopeParams":
        i = np.arange(head_dim // 2)
        thetas = base ** (-2.0 * i / head_dim)
        return cls(head_dim, thetas, position)

    def tables(self, dtype=np.float64) -> tuple[Tensor1, Tensor1]:
        """Return ``(cos, sin)`` with each angle repeated for both pair members."""
        angles = self.position * np.asarray(self.thetas, dtype=np.float64)
        cos = np.repeat(np.cos(angles), 2).astype(dtype)
        sin = np.repeat(np.sin(angles), 2).astype(dtype)
        return cos, sin


def sum_squares(a) -> np.ndarray:
    a = np.asarray(a)
    return sum_last(a * a)


def rms(a):
    a = np.asarray(a)
    return np.sqrt(sum_squares(a) / a.shape[-1])


def rmse(a, eps: float):
    a = np.asarray(a)
    return np.sqrt(eps + sum_squares(a) / a.shape[-1])


def mse(a, eps: float):
    """Mean square plus eps, i.e. ``rmse(a, eps) ** 2`` without the root."""
    a = np.asarray(a)
    return eps + sum_squares(a) / a.shape[-1]


def rss(a):
    return np.sqrt(sum_squares(a))


def rsse(a, eps: float, n: int | None = None):
    a = np.asarray(a)
    n = a.shape[-1] if n is None else n
    return np.sqrt(n * eps + sum_squares(a))


def mean_center(a) -> np.ndarray:
    a = np.asarray(a)
    mu = sum_last(a) / a.shape[-1]
    return a - np.asarray(mu)[..., None]


def relu(a) -> np.ndarray:
    a = np.asarray(a)
    return np.maximum(a, 0)


def silu(a) -> np.ndarray:
    a = np.asarray(a)
    return a / (1 + np.exp(-a))


def identity_act(a) -> np.ndarray:
    return np.asarray(a)


def norm_denominator(a, spec: NormSpec, inv_n: bool = False):
    """The per-vector divisor of an RMS-style norm: RMSe, or RSSe once 1/n is folded out."""
    if spec.kind is NormKind.DYT:
        raise ValueError("DyT has no RMS denominator")
    return rsse(a, spec.eps) if inv_n else rmse(a, spec.eps)


def apply_norm(a, spec: NormSpec, inv_n: bool = False) -> np.ndarray:
    """Evaluate the normalization described by ``spec``, weights and bias included.

    With ``inv_n`` the divisor is RSSe instead of RMSe; the caller is expected to
    have scaled ``g`` by sqrt(n) to keep the result unchanged.
    """
    a = np.asarray(a)
    if a.shape[-1] != spec.dim:
        raise ShapeError(f"apply_norm: input length {a.shape[-1]} != norm dim {spec.dim}")
    if spec.kind is NormKind.DYT:
        y = np.tanh(spec.alpha * a)
    else:
        if spec.kind is NormKind.LAYERNORM:
            a = mean_center(a)
        denom = norm_denominator(a, spec, inv_n)
        if np.any(denom == 0):
            raise ZeroDivisionError("zero-energy input with eps=0")
        y = a * (1 / np.asarray(denom))[..., None]
    if spec.g is not None:
        y = y * spec.g
    if spec.b is not None:
        y = y + spec.b
    return y


def _check_even(x, what: str) -> None:
    h = np.shape(x)[-1]
    if h % 2:
        raise ShapeError(f"{what}: length {h} is odd")


def permute(x) -> np.ndarray:
    """``(-x2, x1, -x4, x3, ...)``, the rotation partner used by RoPE."""
    x = np.asarray(x)
    _check_even(x, "permute")
    out = np.empty_like(x)
    out[..., 0::2] = -x[..., 1::2]
    out[..., 1::2] = x[..., 0::2]
    return out


def permute_g(g) -> np.ndarray:
    """Swap adjacent pairs without changing sign: ``(g2, g1, g4, g3, ...)``."""
    g = np.asarray(g)
    _check_even(g, "permute_g")
    out = np.empty_like(g)
    out[..., 0::2] = g[..., 1::2]
    out[..., 1::2] = g[..., 0::2]
    return out


def rope_apply(x, cos_tab, sin_tab) -> np.ndarray:
    x = np.asarray(x)
    _check_even(x, "rope_apply")
    h = x.shape[-1]
    if np.shape(cos_tab)[-1] != h or np.shape(sin_tab)[-1] != h:
        raise ShapeError(f"rope tables must have length {h}")
    return x * cos_tab + permute(x) * sin_tab


def rope_rotate(x, params: RopeParams) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != params.head_dim:
        raise ShapeError(f"rope: vector length {x.shape[-1]} != head_dim {params.head_dim}")
    cos, sin = params.tables(x.dtype)
    return rope_apply(x, cos, sin)

