"""Randomized equivalence checks and closed-form operation counts."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from flashnorm.linalg import ShapeError
from flashnorm.model import (
    AttentionBlock,
    Block,
    FfnBlock,
    FfnKind,
    Activation,
    Model,
    NormLinearBlock,
    forward,
)
from flashnorm.norms import NormKind, NormSpec, rms

INPUT_MODES = ("uniform", "heavy")
MIN_INPUT_RMS = 1e-6


@dataclass
class EquivalenceReport:
    trials: int
    max_rel_err: float
    max_abs_err: float
    worst_seed: int
    passed: bool
    tolerance: float

    def to_dict(self) -> dict:
        return asdict(self)


def draw_input(n: int, seed: int, mode: str = "uniform", require_energy: bool = False) -> np.ndarray:
    """One test vector, uniform in [-1, 1]^n.

    ``heavy`` additionally scales each element by ``10**u`` with ``u`` uniform in
    [-3, 3]. With ``require_energy`` vectors whose RMS is below 1e-6 are
    redrawn from the same generator.
    """
    if mode not in INPUT_MODES:
        raise ValueError(f"unknown input mode {mode!r}")
    rng = np.random.default_rng(seed)
    while True:
        x = rng.uniform(-1.0, 1.0, size=n)
        if mode == "heavy":
            x = x * 10.0 ** rng.uniform(-3.0, 3.0, size=n)
        if not require_energy or rms(x) >= MIN_INPUT_RMS:
            return x


def has_zero_eps_path(model: Model) -> bool:
    for block in model.blocks:
        norm = block.norm
        if norm is not None and norm.kind is not NormKind.DYT and norm.eps == 0:
            return True
        if isinstance(block, AttentionBlock) and block.qk_norm is not None and block.qk_norm.eps == 0:
            return True
    return False


def relative_errors(ya: np.ndarray, yb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row infinity-norm absolute and relative errors."""
    abs_err = np.max(np.abs(ya - yb), axis=-1)
    scale = np.maximum(np.max(np.abs(ya), axis=-1), 1e-30)
    return abs_err, abs_err / scale


def compare(
    model_a: Model,
    model_b: Model,
    trials: int = 100,
    tol: float = 1e-9,
    seed: int = 0,
    mode: str = "uniform",
) -> EquivalenceReport:
    """Evaluate both models on ``trials`` seeded inputs and report the worst error.

    Trial ``t`` uses the input ``draw_input(n, seed + t, mode)``; ``worst_seed`` is
    the seed of the trial with the largest relative error.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if trials < 1:
        raise ValueError("trials must be positive")
    if model_a.dim != model_b.dim or model_a.out_dim != model_b.out_dim:
        raise ShapeError(
            f"models differ in shape: {model_a.dim}->{model_a.out_dim} vs {model_b.dim}->{model_b.out_dim}"
        )
    need_energy = has_zero_eps_path(model_a) or has_zero_eps_path(model_b)
    X = np.stack([draw_input(model_a.dim, seed + t, mode, need_energy) for t in range(trials)])
    abs_err, rel_err = relative_errors(forward(model_a, X), forward(model_b, X))
    worst = int(np.argmax(rel_err))
    max_rel = float(rel_err[worst])
    return EquivalenceReport(
        trials=trials,
        max_rel_err=max_rel,
        max_abs_err=float(np.max(abs_err)),
        worst_seed=seed + worst,
        passed=bool(max_rel <= tol),
        tolerance=tol,
    )


# ---------------------------------------------------------------------------
# operation counts


@dataclass
class BlockCount:
    mults_per_token: int
    adds_per_token: int
    norm_param_tensors: int
    total_params: int
    mean_centering_ops: int


@dataclass
class OpCountReport:
    blocks: list[BlockCount] = field(default_factory=list)

    @property
    def mults_per_token(self) -> int:
        return sum(b.mults_per_token for b in self.blocks)

    @property
    def adds_per_token(self) -> int:
        return sum(b.adds_per_token for b in self.blocks)

    @property
    def norm_param_tensors(self) -> int:
        return sum(b.norm_param_tensors for b in self.blocks)

    @property
    def total_params(self) -> int:
        return sum(b.total_params for b in self.blocks)

    @property
    def mean_centering_ops(self) -> int:
        return sum(b.mean_centering_ops for b in self.blocks)

    def to_dict(self) -> dict:
        return {
            "blocks": [asdict(b) for b in self.blocks],
            "mults_per_token": self.mults_per_token,
            "adds_per_token": self.adds_per_token,
            "norm_param_tensors": self.norm_param_tensors,
            "total_params": self.total_params,
            "mean_centering_ops": self.mean_centering_ops,
        }


class _Tally:
    def __init__(self):
        self.mults = 0
        self.adds = 0
        self.centering = 0

    def matmul(self, rows: int, cols: int):
        self.mults += rows * cols
        self.adds += rows * cols

    def norm_front(self, norm: NormSpec, merged: bool):
        """Vector work at the norm itself, excluding the 1/RMS scaling multipliers."""
        n = norm.dim
        if norm.kind is NormKind.DYT:
            self.mults += n
        else:
            if norm.kind is NormKind.LAYERNORM:
                self.centering += 1
                self.adds += 2 * n
            self.mults += n
            self.adds += n
        if not merged:
            if norm.g is not None:
                self.mults += n
            if norm.b is not None:
                self.adds += n


def _size(*arrays) -> int:
    return sum(int(np.size(a)) for a in arrays if a is not None)


def _norm_params(norm: NormSpec | None) -> tuple[int, int]:
    if norm is None:
        return 0, 0
    extra = 1 if norm.kind is NormKind.DYT else 0
    return norm.param_tensors, _size(norm.g, norm.b) + extra


def count_block(block: Block) -> BlockCount:
    """Per-token multiply/add counts implied by a block's shapes and fusion flags.

    Scalar work (square roots, reciprocals, 1/n) is not counted. Each distinct
    multiplier in a vector scaling counts once, so scaling RoPE's cos/sin tables
    costs h/2 per table because entries come in repeated pairs.
    """
    t = _Tally()
    tensors, params = _norm_params(block.norm)
    norm = block.norm
    rms_style = norm is not None and norm.kind is not NormKind.DYT

    if isinstance(block, NormLinearBlock):
        n, k = block.W.shape
        t.matmul(n, k)
        if norm is not None:
            t.norm_front(norm, block.g_merged)
            if rms_style:
                t.mults += k if block.deferred else n
        if block.c is not None:
            t.adds += k
        params += _size(block.W, block.c)

    elif isinstance(block, FfnBlock):
        n, f = block.up.shape
        glu = block.kind is FfnKind.GLU
        t.matmul(n, f)
        t.matmul(f, n)
        if glu:
            t.matmul(n, f)
            t.mults += f
            if block.activation is Activation.SILU:
                t.mults += f
        t.norm_front(norm, block.g_merged)
        if rms_style:
            if not block.g_merged:
                t.mults += n
            elif block.ms_collapsed:
                t.mults += n
            elif block.deferred_out:
                t.mults += f + n if glu else n
            else:
                t.mults += 2 * f if glu else f
        params += _size(block.up, block.gate, block.down)

    else:
        n = block.in_dim
        h, H = block.head_dim, block.heads
        t.matmul(n, 3 * h * H)
        t.norm_front(norm, block.g_merged)
        if rms_style:
            if not block.g_merged:
                t.mults += n
            elif block.rope_fused:
                t.mults += h + h * H
            elif block.qk_rms_eliminated:
                t.mults += h * H
            else:
                t.mults += 3 * h * H
        qk = block.qk_norm
        if qk is not None:
            # sum of squares and 1/RMS scaling for q and k in every head
            t.mults += 4 * h * H
            t.adds += 2 * h * H
            if block.qknorm_in_rope:
                t.mults += 4 * h
            else:
                t.mults += 2 * h * H
            tensors += 2
            params += _size(qk.gq, qk.gk)
        # RoPE on q and k, then per-head dot products
        t.mults += 4 * h * H
        t.adds += 2 * h * H
        t.mults += h * H
        t.adds += h * H
        if not block.sqrt_h_fused:
            t.mults += H
        params += _size(block.Wq, block.Wk, block.Wv)

    return BlockCount(
        mults_per_token=t.mults,
        adds_per_token=t.adds,
        norm_param_tensors=tensors,
        total_params=params,
        mean_centering_ops=t.centering,
    )


def count_ops(model_or_block) -> OpCountReport:
    blocks = model_or_block.blocks if isinstance(model_or_block, Model) else (model_or_block,)
    return OpCountReport([count_block(b) for b in blocks])
