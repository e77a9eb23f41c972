import json
import math
from dataclasses import replace

import numpy as np
import numpy.testing as npt
import pytest

from flashnorm import model as M
from flashnorm.linalg import ShapeError
from flashnorm.norms import NormKind, NormSpec, RopeParams
from flashnorm.passes import run_pipeline

from helpers import reference_forward


def _norm(n, **kw):
    return NormSpec(NormKind.RMSNORM, n, **kw)


def test_norm_linear_identity_unfused_and_deferred():
    block = M.NormLinearBlock(_norm(2, g=np.ones(2)), W=np.eye(2))
    unfused = M.Model([block], dim=2)
    deferred = M.Model([M.NormLinearBlock(_norm(2), W=np.eye(2), g_merged=True, deferred=True)], dim=2)
    npt.assert_array_equal(M.forward(unfused, [2.0, 2.0]), [1.0, 1.0])
    npt.assert_array_equal(M.forward(deferred, [2.0, 2.0]), [1.0, 1.0])


def test_ffn_relu_all_ones_fused_matches_hand_value():
    ones = np.ones((2, 2))
    block = M.FfnBlock(M.FfnKind.RELU, _norm(2, g=np.ones(2)), up=ones, down=ones)
    fused = replace(block, norm=_norm(2), g_merged=True, deferred_out=True)
    # x=[1,1] has rms 1: up -> [2,2], relu -> [2,2], down -> [4,4]
    npt.assert_array_equal(M.forward(M.Model([block], dim=2), [1.0, 1.0]), [4.0, 4.0])
    npt.assert_array_equal(M.forward(M.Model([fused], dim=2), [1.0, 1.0]), [4.0, 4.0])


def test_attention_zero_position_score():
    x = np.array([0.3, -1.2])
    block = M.AttentionBlock(
        _norm(2, g=np.ones(2)), np.eye(2), np.eye(2), np.eye(2),
        heads=1, head_dim=2, rope=RopeParams.default(2, 0),
    )
    out = M.eval_attention(block, x[None, :])
    r = math.sqrt((0.3**2 + 1.2**2) / 2)
    xhat = [0.3 / r, -1.2 / r]
    expected = (xhat[0] ** 2 + xhat[1] ** 2) / math.sqrt(2)
    assert out.scores[0, 0] == pytest.approx(expected, rel=1e-15)
    npt.assert_allclose(out.v[0], xhat, rtol=1e-15)


@pytest.mark.parametrize("kind", M.KINDS)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_unfused_forward_matches_reference(kind, seed):
    for norm in (["rmsnorm", "layernorm", "dyt"] if kind == "norm-linear" else ["rmsnorm"]):
        m = M.generate(kind, 6, f=10, h=4, heads=2, seed=seed, norm=norm)
        x = np.random.default_rng(seed).uniform(-1, 1, 6)
        npt.assert_allclose(M.forward(m, x), reference_forward(m, x), rtol=1e-12, atol=1e-12)


def test_attention_rope_matters_at_nonzero_position():
    m = M.generate("attn", 8, h=4, heads=2, seed=5)
    block = m.blocks[0]
    assert block.rope.position != 0
    at_zero = M.Model([replace(block, rope=RopeParams.default(4, 0))], dim=8)
    x = np.random.default_rng(0).uniform(-1, 1, 8)
    assert not np.allclose(M.forward(m, x), M.forward(at_zero, x))


def test_batched_forward_rows_match_single():
    m = M.generate("attn-qknorm", 8, h=4, heads=2, seed=3)
    X = np.random.default_rng(1).uniform(-1, 1, (6, 8))
    Y = M.forward(m, X)
    for i in range(6):
        assert Y[i].tolist() == M.forward(m, X[i]).tolist()


@pytest.mark.parametrize("kind", M.KINDS)
def test_forward_deterministic(kind):
    m = M.generate(kind, 8, f=12, h=4, heads=2, seed=9)
    x = np.random.default_rng(2).uniform(-1, 1, 8)
    assert M.forward(m, x).tobytes() == M.forward(m, x).tobytes()


@pytest.mark.parametrize("kind", M.KINDS)
def test_every_fused_state_is_total(kind):
    m = M.generate(kind, 8, f=12, h=4, heads=2, seed=4, eps=0.0)
    x = np.random.default_rng(3).uniform(-1, 1, 8)
    for passes in (["fuse_norm_weights"], "all"):
        fused, _ = run_pipeline(m, passes)
        assert np.all(np.isfinite(M.forward(fused, x)))


def test_degenerate_input_with_zero_eps():
    m = M.generate("norm-linear", 4, seed=0, eps=0.0)
    with pytest.raises(ZeroDivisionError):
        M.forward(m, np.zeros(4))
    fused, _ = run_pipeline(m, "all")
    with pytest.raises(M.DegenerateInputError):
        M.forward(fused, np.zeros(4))
    eps_model = M.generate("norm-linear", 4, seed=0, eps=1e-5)
    assert np.all(np.isfinite(M.forward(eps_model, np.zeros(4))))


def test_f32_mode():
    m = M.generate("ffn-glu", 8, f=16, seed=0, dtype="f32")
    y = M.forward(m, np.random.default_rng(0).uniform(-1, 1, 8))
    assert y.dtype == np.float32
    m64 = replace(m, dtype="f64")
    npt.assert_allclose(y, M.forward(m64, np.random.default_rng(0).uniform(-1, 1, 8)), rtol=1e-4, atol=1e-5)


# ---------------------------------------------------------------------------
# serialization


@pytest.mark.parametrize("kind", M.KINDS)
def test_save_load_roundtrip_bit_exact(kind, tmp_path):
    m = M.generate(kind, 8, f=12, h=4, heads=2, seed=42)
    fused, _ = run_pipeline(m, "all")
    for model in (m, fused):
        path = tmp_path / "m.json"
        M.save(model, path)
        loaded = M.load(path)
        assert loaded == model
        x = np.random.default_rng(0).uniform(-1, 1, 8)
        assert M.forward(loaded, x).tobytes() == M.forward(model, x).tobytes()


def test_schema_header():
    d = M.to_dict(M.generate("attn", 8, h=4, heads=2, seed=1))
    assert d["version"] == 1 and d["dtype"] == "f64" and d["dim"] == 8
    assert d["blocks"][0]["type"] == "attention"
    assert set(d["blocks"][0]["flags"]) == set(M.AttentionBlock.FLAGS)


def test_load_rejects_shape_mismatch_naming_block(tmp_path):
    d = M.to_dict(M.generate("norm-linear", 4, seed=0))
    d["blocks"][0]["W"] = np.ones((3, 4)).tolist()
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(d))
    with pytest.raises(ValueError, match="block 0"):
        M.load(path)


def test_load_rejects_unknown_kind(tmp_path):
    d = M.to_dict(M.generate("norm-linear", 4, seed=0))
    d["blocks"][0]["type"] = "conv"
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(d))
    with pytest.raises(M.ModelFormatError, match="block 0.*conv"):
        M.load(path)


def test_load_rejects_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(M.ModelFormatError, match="malformed"):
        M.load(path)


def test_load_rejects_inconsistent_flags():
    d = M.to_dict(M.generate("norm-linear", 4, seed=0))
    d["blocks"][0]["flags"]["deferred"] = True
    with pytest.raises(M.ModelFormatError, match="block 0.*g_merged"):
        M.from_dict(d)


def test_chain_dimension_check():
    a = M.NormLinearBlock(_norm(4), W=np.ones((4, 3)))
    b = M.NormLinearBlock(_norm(4), W=np.ones((4, 4)))
    with pytest.raises(ShapeError, match="block 1"):
        M.Model([a, b], dim=4)


# ---------------------------------------------------------------------------
# generation


def test_generate_deterministic():
    assert M.generate("ffn-reglu", 4, f=8, seed=1) == M.generate("ffn-reglu", 4, f=8, seed=1)
    assert M.generate("ffn-reglu", 4, f=8, seed=1) != M.generate("ffn-reglu", 4, f=8, seed=2)


def test_generate_attention_shapes():
    block = M.generate("attn", 8, h=4, heads=2, seed=7).blocks[0]
    assert block.Wq.shape == (8, 8)
    assert block.rope.head_dim == 4


@pytest.mark.parametrize("kind", M.KINDS)
def test_generate_ranges(kind):
    m = M.generate(kind, 16, f=20, h=4, heads=2, seed=11)
    for block in m.blocks:
        if block.norm is None:
            continue
        assert block.norm.eps == 1e-5
        assert np.all((block.norm.g >= 0.5) & (block.norm.g <= 1.5))
        for name in ("W", "up", "down", "gate", "Wq", "Wk", "Wv"):
            w = getattr(block, name, None)
            if w is not None:
                assert np.all(np.abs(w) <= 1)


def test_generate_rejects_bad_dims():
    with pytest.raises(ValueError):
        M.generate("attn", 8, h=3, heads=2)
    with pytest.raises(ValueError):
        M.generate("ffn-relu", 8)
    with pytest.raises(ValueError):
        M.generate("conv", 8)
