"""Normalization-fusion rewrite passes.

Every pass maps a block to an equivalent block and a :class:`PassReport`.
Applying a pass to its own output returns the block unchanged with a report
that touches nothing. A block outside a pass's domain, or in a state the pass
cannot start from, raises :class:`PassError`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from flashnorm.linalg import ShapeError, row_sums, sum_last, vec_mat
from flashnorm.model import (
    Activation,
    AttentionBlock,
    Block,
    FfnBlock,
    FfnKind,
    Model,
    NormLinearBlock,
)
from flashnorm.norms import NormKind
from flashnorm.verify import count_block


class PassError(ValueError):
    pass


@dataclass
class PassReport:
    pass_name: str
    blocks_touched: int = 0
    params_removed: int = 0
    multipliers_saved_per_token: int = 0
    notes: list[str] = field(default_factory=list)

    def absorb(self, other: "PassReport", prefix: str = "") -> None:
        self.blocks_touched += other.blocks_touched
        self.params_removed += other.params_removed
        self.multipliers_saved_per_token += other.multipliers_saved_per_token
        self.notes.extend(prefix + note for note in other.notes)

    def to_dict(self) -> dict:
        return asdict(self)


def _noop(name: str) -> PassReport:
    return PassReport(name)


def _report(name: str, before: list, after: list, saved: int | None = None, note: str | None = None) -> PassReport:
    cb = [count_block(b) for b in before]
    ca = [count_block(b) for b in after]
    if saved is None:
        saved = sum(c.mults_per_token for c in cb) - sum(c.mults_per_token for c in ca)
    removed = sum(c.total_params for c in cb) - sum(c.total_params for c in ca)
    return PassReport(name, 1, removed, saved, [note] if note else [])


def _need_norm(block: Block, name: str):
    if block.norm is None:
        raise PassError(f"{name}: block has no normalization")
    return block.norm


def _need_merged_rmsnorm(block: Block, name: str) -> None:
    norm = _need_norm(block, name)
    if norm.kind is NormKind.DYT:
        raise PassError(f"{name}: DyT is not scale-commutative, its tanh cannot be deferred")
    if norm.kind is NormKind.LAYERNORM:
        raise PassError(f"{name}: mean centering is not deferrable; retrofit the LayerNorm first")
    if not block.g_merged:
        raise PassError(f"{name}: run fuse_norm_weights first")


def _linear_fields(block: Block) -> tuple[str, ...]:
    """The matrices sitting directly behind the block's normalization."""
    if isinstance(block, NormLinearBlock):
        return ("W",)
    if isinstance(block, FfnBlock):
        return ("up",) if block.gate is None else ("up", "gate")
    return ("Wq", "Wk", "Wv")


# ---------------------------------------------------------------------------
# norm weights and bias


def fuse_norm_weights(block: Block) -> tuple[Block, PassReport]:
    """Merge g into the following linear layer(s): ``W*[i, j] = g[i] * W[i, j]``."""
    name = "fuse_norm_weights"
    norm = _need_norm(block, name)
    if block.g_merged:
        return block, _noop(name)
    if norm.b is not None:
        raise PassError(f"{name}: norm bias b is present; run eliminate_norm_bias first")
    updates = {}
    if norm.g is not None:
        for f in _linear_fields(block):
            updates[f] = norm.g[:, None] * getattr(block, f)
    new = replace(block, norm=replace(norm, g=None), g_merged=True, **updates)
    return new, _report(name, [block], [new])


def eliminate_norm_bias(block: Block) -> tuple[Block, PassReport]:
    """Move the norm bias behind the linear layer: ``c* = c + b W``."""
    name = "eliminate_norm_bias"
    norm = _need_norm(block, name)
    if norm.b is None:
        return block, _noop(name)
    if not isinstance(block, NormLinearBlock):
        raise PassError(f"{name}: {block.type} blocks have bias-free linear layers, nowhere to fold b")
    c = np.zeros(block.out_dim) if block.c is None else block.c
    new = replace(block, norm=replace(norm, b=None), c=c + vec_mat(norm.b, block.W), bias_folded=True)
    return new, _report(name, [block], [new])


def merge_mean_centering(V: np.ndarray, b_prev: np.ndarray | None = None):
    """Fold the mean subtraction that follows ``y = x V + b_prev`` into ``V`` and ``b_prev``.

    ``V*[i, j] = V[i, j] - s[i]/n`` with ``s`` the row sums of ``V`` and ``n`` its
    number of output columns; the bias is centered the same way.
    """
    V = np.asarray(V)
    if V.ndim != 2:
        raise ShapeError(f"merge_mean_centering: expected a matrix, got shape {V.shape}")
    n = V.shape[1]
    V_star = V - (row_sums(V) / n)[:, None]
    b_star = None
    if b_prev is not None:
        b_prev = np.asarray(b_prev)
        if b_prev.shape != (n,):
            raise ShapeError(f"merge_mean_centering: bias shape {b_prev.shape} != ({n},)")
        b_star = b_prev - sum_last(b_prev) / n
    return V_star, b_star


def merge_mean_centering_pair(prev: Block, block: Block) -> tuple[Block, Block, PassReport]:
    """Retrofit ``block``'s LayerNorm into an RMSNorm by centering ``prev``'s output layer."""
    name = "merge_mean_centering"
    norm = block.norm
    if norm is None or norm.kind is not NormKind.LAYERNORM:
        return prev, block, _noop(name)
    if isinstance(prev, NormLinearBlock):
        W, c = merge_mean_centering(prev.W, prev.c)
        new_prev = replace(prev, W=W, c=c)
    elif isinstance(prev, FfnBlock):
        down, _ = merge_mean_centering(prev.down)
        new_prev = replace(prev, down=down)
    else:
        raise PassError(f"{name}: the preceding {prev.type} block has no output linear layer")
    new_block = replace(block, norm=replace(norm, kind=NormKind.RMSNORM))
    return new_prev, new_block, _report(name, [prev, block], [new_prev, new_block])


def eliminate_inv_n(block: Block) -> tuple[Block, PassReport]:
    """Divide by RSS(e) instead of RMS(e) and fold sqrt(n) into the weights."""
    name = "eliminate_inv_n"
    norm = _need_norm(block, name)
    if block.inv_n_eliminated:
        return block, _noop(name)
    if norm.kind is not NormKind.RMSNORM:
        raise PassError(f"{name}: only RMSNorm has a 1/n inside its root")
    root_n = math.sqrt(norm.dim)
    if not block.g_merged:
        g = np.ones(norm.dim) if norm.g is None else norm.g
        new = replace(block, norm=replace(norm, g=root_n * g), inv_n_eliminated=True)
    else:
        updates = {f: root_n * getattr(block, f) for f in _linear_fields(block)}
        new = replace(block, inv_n_eliminated=True, **updates)
    return new, _report(name, [block], [new])


# ---------------------------------------------------------------------------
# deferral


def defer_normalization(block: Block) -> tuple[Block, PassReport]:
    """Scale by 1/RMS after the linear layer (before its bias) instead of before it."""
    name = "defer_normalization"
    if not isinstance(block, NormLinearBlock):
        raise PassError(f"{name}: {block.type} blocks use their own deferral passes")
    if block.deferred:
        return block, _noop(name)
    _need_merged_rmsnorm(block, name)
    new = replace(block, deferred=True)
    return new, _report(name, [block], [new])


def _need_ffn(block: Block, name: str) -> FfnBlock:
    if not isinstance(block, FfnBlock):
        raise PassError(f"{name}: expected an ffn block, got {block.type}")
    return block


def defer_ffn_relu(block: Block) -> tuple[Block, PassReport]:
    name = "defer_ffn_relu"
    block = _need_ffn(block, name)
    if block.kind is not FfnKind.RELU:
        raise PassError(f"{name}: GLU FFNs need defer_ffn_glu or collapse_reglu_scaling")
    if block.deferred_out:
        return block, _noop(name)
    _need_merged_rmsnorm(block, name)
    n, f = block.up.shape
    new = replace(block, deferred_out=True)
    return new, _report(name, [block], [new], saved=f - n)


def defer_ffn_glu(block: Block) -> tuple[Block, PassReport]:
    """Keep 1/RMS on the Gate path, move the Up-path factor to the FFN output."""
    name = "defer_ffn_glu"
    block = _need_ffn(block, name)
    if block.kind is not FfnKind.GLU:
        raise PassError(f"{name}: ReLU FFNs use defer_ffn_relu")
    if block.deferred_out:
        return block, _noop(name)
    if block.ms_collapsed:
        raise PassError(f"{name}: block already uses the collapsed 1/MS scaling")
    _need_merged_rmsnorm(block, name)
    n, f = block.up.shape
    new = replace(block, deferred_out=True)
    return new, _report(name, [block], [new], saved=f - n)


def collapse_reglu_scaling(block: Block) -> tuple[Block, PassReport]:
    """ReGLU / bilinear GLU: drop both input-side factors, scale the output by 1/MS."""
    name = "collapse_reglu_scaling"
    block = _need_ffn(block, name)
    if block.kind is not FfnKind.GLU or block.activation not in (Activation.RELU, Activation.LINEAR):
        raise PassError(f"{name}: only ReGLU and bilinear GLU commute with positive scaling")
    if block.ms_collapsed:
        return block, _noop(name)
    if block.deferred_out:
        raise PassError(f"{name}: block was already deferred by defer_ffn_glu")
    _need_merged_rmsnorm(block, name)
    n, f = block.up.shape
    new = replace(block, ms_collapsed=True)
    return new, _report(name, [block], [new], saved=2 * f - n)


# ---------------------------------------------------------------------------
# attention


def _need_attention(block: Block, name: str) -> AttentionBlock:
    if not isinstance(block, AttentionBlock):
        raise PassError(f"{name}: expected an attention block, got {block.type}")
    return block


def fuse_rope_scaling(block: Block, fold_sqrt_h: bool = False) -> tuple[Block, PassReport]:
    """Scale the shared cos/sin tables by 1/RMS instead of every head's q and k.

    With ``fold_sqrt_h`` the tables also carry ``h**-1/4`` so that the q.k
    product already includes the 1/sqrt(h) of scaled dot-product attention.
    """
    name = "fuse_rope_scaling"
    block = _need_attention(block, name)
    if block.qk_norm is not None:
        raise PassError(f"{name}: QK-norm blocks use eliminate_qk_rms and fuse_qknorm_rope")
    h, H = block.head_dim, block.heads
    if block.rope_fused:
        if block.sqrt_h_fused or not fold_sqrt_h:
            return block, _noop(name)
        new = replace(block, sqrt_h_fused=True)
        return new, _report(name, [block], [new], saved=H)
    _need_merged_rmsnorm(block, name)
    new = replace(block, rope_fused=True, sqrt_h_fused=fold_sqrt_h)
    saved = 2 * h * H - h + (H if fold_sqrt_h else 0)
    return new, _report(name, [block], [new], saved=saved)


def eliminate_qk_rms(block: Block) -> tuple[Block, PassReport]:
    """Skip 1/RMS(x) on the Q and K paths; the QK-norm's own RMS cancels it.

    Exact only when the QK-norm has eps = 0.
    """
    name = "eliminate_qk_rms"
    block = _need_attention(block, name)
    if block.qk_norm is None:
        raise PassError(f"{name}: block has no QK-norm")
    if block.qk_rms_eliminated:
        return block, _noop(name)
    _need_merged_rmsnorm(block, name)
    new = replace(block, qk_rms_eliminated=True)
    note = None if block.qk_norm.eps == 0 else "approximate: QK-norm eps > 0"
    return new, _report(name, [block], [new], note=note)


def fuse_qknorm_rope(block: Block) -> tuple[Block, PassReport]:
    """Apply the shared QK-norm weights through the RoPE tables: ``cos*g`` and ``sin*permute_g(g)``."""
    name = "fuse_qknorm_rope"
    block = _need_attention(block, name)
    if block.qk_norm is None:
        raise PassError(f"{name}: block has no QK-norm")
    if block.qknorm_in_rope:
        return block, _noop(name)
    if not block.qk_rms_eliminated:
        raise PassError(f"{name}: run eliminate_qk_rms first")
    for w in (block.qk_norm.gq, block.qk_norm.gk):
        if np.ndim(w) != 1:
            raise PassError(f"{name}: per-head QK-norm weights are not supported")
    new = replace(block, qknorm_in_rope=True)
    return new, _report(name, [block], [new])


# ---------------------------------------------------------------------------
# pipeline

BLOCK_PASSES = {
    "eliminate_norm_bias": eliminate_norm_bias,
    "fuse_norm_weights": fuse_norm_weights,
    "eliminate_inv_n": eliminate_inv_n,
    "defer_normalization": defer_normalization,
    "defer_ffn_relu": defer_ffn_relu,
    "defer_ffn_glu": defer_ffn_glu,
    "collapse_reglu_scaling": collapse_reglu_scaling,
    "fuse_rope_scaling": fuse_rope_scaling,
    "eliminate_qk_rms": eliminate_qk_rms,
    "fuse_qknorm_rope": fuse_qknorm_rope,
}
PASS_NAMES = ("merge_mean_centering", *BLOCK_PASSES)
CANONICAL_ORDER = (
    "eliminate_norm_bias",
    "merge_mean_centering",
    "fuse_norm_weights",
    "eliminate_inv_n",
    "block_specific",
)


def block_specific_passes(block: Block) -> tuple[str, ...]:
    """The deferral/fusion passes that finish off a block after its weights are merged."""
    if isinstance(block, NormLinearBlock):
        return ("defer_normalization",)
    if isinstance(block, FfnBlock):
        if block.kind is FfnKind.RELU:
            return ("defer_ffn_relu",)
        if block.activation in (Activation.RELU, Activation.LINEAR):
            return ("collapse_reglu_scaling",)
        return ("defer_ffn_glu",)
    if block.qk_norm is not None:
        return ("eliminate_qk_rms", "fuse_qknorm_rope")
    return ("fuse_rope_scaling",)


def _in_canonical_domain(name: str, block: Block) -> bool:
    """Whether the canonical pipeline should try ``name`` on ``block`` at all."""
    norm = block.norm
    if norm is None:
        return False
    if name in ("eliminate_inv_n", "block_specific"):
        return norm.kind is NormKind.RMSNORM
    return True


def parse_pass_list(spec) -> list[str]:
    """Accept ``"all"``, a comma-separated string, or a list of pass names."""
    if isinstance(spec, str):
        spec = [s.strip() for s in spec.split(",") if s.strip()]
    names = list(spec)
    if names == ["all"]:
        return ["all"]
    for n in names:
        if n not in PASS_NAMES:
            raise PassError(f"unknown pass {n!r}; known passes: all, {', '.join(PASS_NAMES)}")
    return names


def _apply_block_pass(name, blocks, reports, strict, canonical, fold_sqrt_h):
    out = []
    for i, block in enumerate(blocks):
        if canonical and not _in_canonical_domain(name, block):
            out.append(block)
            continue
        names = block_specific_passes(block) if name == "block_specific" else (name,)
        for pname in names:
            fn = BLOCK_PASSES[pname]
            try:
                if pname == "fuse_rope_scaling":
                    block, rep = fn(block, fold_sqrt_h=fold_sqrt_h)
                else:
                    block, rep = fn(block)
            except PassError as exc:
                if strict:
                    raise PassError(f"block {i}: {exc}") from None
                rep = PassReport(pname, notes=[f"skipped: {exc}"])
            reports.setdefault(pname, PassReport(pname)).absorb(rep, prefix=f"block {i}: ")
        out.append(block)
    return out


def _apply_merge_mean_centering(blocks, reports, strict):
    name = "merge_mean_centering"
    report = reports.setdefault(name, PassReport(name))
    blocks = list(blocks)
    for i, block in enumerate(blocks):
        if block.norm is None or block.norm.kind is not NormKind.LAYERNORM:
            continue
        try:
            if i == 0:
                raise PassError(f"{name}: no preceding linear layer to absorb the mean centering")
            blocks[i - 1], blocks[i], rep = merge_mean_centering_pair(blocks[i - 1], block)
        except PassError as exc:
            if strict:
                raise PassError(f"block {i}: {exc}") from None
            rep = PassReport(name, notes=[f"skipped: {exc}"])
        report.absorb(rep, prefix=f"block {i}: ")
    return blocks


def run_pipeline(
    model: Model,
    pass_list,
    strict: bool = False,
    fold_sqrt_h: bool = True,
) -> tuple[Model, list[PassReport]]:
    """Apply passes to every block of ``model`` in the given order.

    ``"all"`` expands to the canonical order and, for each block, only tries the
    passes that belong to its type. Inapplicable passes are recorded as skips in
    the report notes; with ``strict`` they raise instead. ``fold_sqrt_h`` is
    forwarded to :func:`fuse_rope_scaling`.
    """
    names = parse_pass_list(pass_list)
    canonical = names == ["all"]
    if canonical:
        names = list(CANONICAL_ORDER)
    reports: dict[str, PassReport] = {}
    blocks = list(model.blocks)
    for name in names:
        if name == "merge_mean_centering":
            blocks = _apply_merge_mean_centering(blocks, reports, strict)
        else:
            blocks = _apply_block_pass(name, blocks, reports, strict, canonical, fold_sqrt_h)
    return model.with_blocks(blocks), list(reports.values())
