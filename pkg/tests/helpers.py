"""Shared test fixtures: pass case table and a pure-Python reference evaluator.

The reference evaluator uses only ``math`` and lists, and writes RoPE as
explicit 2-D rotations of (x[2i], x[2i+1]) pairs, so it shares no code path
with the numpy evaluator under test.
"""

import math

import numpy as np

from flashnorm import model as M
from flashnorm.passes import run_pipeline

# pass name -> (generator kind, norm kind, prerequisite passes)
PASS_CASES = {
    "fuse_norm_weights": ("mixed", "rmsnorm", []),
    "defer_normalization": ("norm-linear", "rmsnorm", ["fuse_norm_weights"]),
    "eliminate_norm_bias": ("norm-linear", "layernorm", []),
    "merge_mean_centering": ("layernorm-retrofit", "layernorm", []),
    "defer_ffn_relu": ("ffn-relu", "rmsnorm", ["fuse_norm_weights"]),
    "defer_ffn_glu": ("ffn-glu", "rmsnorm", ["fuse_norm_weights"]),
    "collapse_reglu_scaling": ("ffn-reglu", "rmsnorm", ["fuse_norm_weights"]),
    "fuse_rope_scaling": ("attn", "rmsnorm", ["fuse_norm_weights"]),
    "eliminate_qk_rms": ("attn-qknorm", "rmsnorm", ["fuse_norm_weights"]),
    "fuse_qknorm_rope": ("attn-qknorm", "rmsnorm", ["fuse_norm_weights", "eliminate_qk_rms"]),
    "eliminate_inv_n": ("mixed", "rmsnorm", []),
}

MIXED_KINDS = ("norm-linear", "ffn-relu", "ffn-glu", "ffn-reglu", "ffn-bilinear", "attn", "attn-qknorm")


def random_shape(rng):
    """Dimensions in [4, 64] with h*H <= 64."""
    n = 2 * int(rng.integers(2, 33))
    f = int(rng.integers(4, 65))
    heads = int(rng.integers(1, 5))
    h = 2 * int(rng.integers(1, 64 // (2 * heads) + 1))
    return n, f, h, heads


def pass_case(name, seed, eps, rng=None):
    """Return (before, after) models for one randomized application of ``name``."""
    rng = np.random.default_rng([seed, 7]) if rng is None else rng
    kind, norm, pre = PASS_CASES[name]
    if kind == "mixed":
        kind = MIXED_KINDS[int(rng.integers(len(MIXED_KINDS)))]
    n, f, h, heads = random_shape(rng)
    model = M.generate(kind, n, f=f, h=h, heads=heads, seed=seed, eps=eps, norm=norm)
    if pre:
        model, _ = run_pipeline(model, pre, strict=True)
    after, _ = run_pipeline(model, [name], strict=True)
    return model, after


# ---------------------------------------------------------------------------
# reference evaluator (unfused datapaths only)


def _vm(x, W):
    return [sum(x[i] * W[i][j] for i in range(len(x))) for j in range(len(W[0]))]


def _ref_norm(x, norm):
    n = len(x)
    g = [1.0] * n if norm["g"] is None else norm["g"]
    b = [0.0] * n if norm["b"] is None else norm["b"]
    if norm["kind"] == "dyt":
        return [g[i] * math.tanh(norm["alpha"] * x[i]) + b[i] for i in range(n)]
    if norm["kind"] == "layernorm":
        mu = sum(x) / n
        x = [v - mu for v in x]
    r = math.sqrt(norm["eps"] + sum(v * v for v in x) / n)
    return [x[i] / r * g[i] + b[i] for i in range(n)]


def _silu(v):
    return v / (1 + math.exp(-v))


def _rotate(vec, thetas, m):
    out = []
    for i, th in enumerate(thetas):
        a, b = vec[2 * i], vec[2 * i + 1]
        c, s = math.cos(m * th), math.sin(m * th)
        out += [a * c - b * s, a * s + b * c]
    return out


def reference_block(d, x):
    """Evaluate an unfused block given as its JSON dict."""
    assert not any(d["flags"].values()), "reference covers unfused blocks only"
    if d["type"] == "norm_linear":
        xn = x if d["norm"] is None else _ref_norm(x, d["norm"])
        y = _vm(xn, d["W"])
        return y if d["c"] is None else [y[j] + d["c"][j] for j in range(len(y))]
    xn = _ref_norm(x, d["norm"])
    if d["type"] == "ffn":
        up = _vm(xn, d["up"])
        if d["kind"] == "relu":
            hidden = [max(0.0, v) for v in up]
        else:
            act = {"silu": _silu, "relu": lambda v: max(0.0, v), "linear": lambda v: v}[d["activation"]]
            gate = _vm(xn, d["gate"])
            hidden = [act(gate[j]) * up[j] for j in range(len(up))]
        return _vm(hidden, d["down"])
    H, h = d["heads"], d["head_dim"]
    q, k, v = _vm(xn, d["Wq"]), _vm(xn, d["Wk"]), _vm(xn, d["Wv"])
    qs, ks, scores = [], [], []
    for head in range(H):
        qh, kh = q[head * h:(head + 1) * h], k[head * h:(head + 1) * h]
        if d["qk_norm"] is not None:
            qk = d["qk_norm"]
            rq = math.sqrt(qk["eps"] + sum(t * t for t in qh) / h)
            rk = math.sqrt(qk["eps"] + sum(t * t for t in kh) / h)
            qh = [qh[i] / rq * qk["gq"][i] for i in range(h)]
            kh = [kh[i] / rk * qk["gk"][i] for i in range(h)]
        qh = _rotate(qh, d["rope"]["thetas"], d["rope"]["position"])
        kh = _rotate(kh, d["rope"]["thetas"], d["rope"]["position"])
        scores.append(sum(a * b for a, b in zip(qh, kh)) / math.sqrt(h))
        c = h ** -0.25
        qs += [t * c for t in qh]
        ks += [t * c for t in kh]
    return qs + ks + v + scores


def reference_forward(model, x):
    y = list(map(float, x))
    for block in M.to_dict(model)["blocks"]:
        y = reference_block(block, y)
    return np.array(y)
