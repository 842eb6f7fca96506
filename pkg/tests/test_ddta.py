import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rkflow.ddta import (
    REGIONS,
    AttentionCache,
    CacheMissError,
    DDTAError,
    DecoupledAttention,
    ManipulationPlan,
    ResponseRecorder,
    aggregate_response_maps,
    bilinear_resize,
    cache_hook,
    decompose_attention,
    manipulate,
    recompose_attention,
)
from rkflow.velocity import ToyMMDiT, ToyMMDiTConfig
from rkflow.velocity.mmdit import softmax


def random_attention(rng, heads=2, n=7, d=3):
    m = softmax(rng.standard_normal((heads, n, n)))
    v = rng.standard_normal((heads, n, d))
    return m, v


def test_two_token_quadrants():
    m = np.array([[0.7, 0.3], [0.4, 0.6]])
    v = np.array([[1.0], [2.0]])
    d = decompose_attention(m, v, 1)
    assert (d.m_cc.item(), d.m_ci.item(), d.m_ic.item(), d.m_ii.item()) == (0.7, 0.3, 0.4, 0.6)


def test_identity_map_quadrants():
    m = np.eye(5)
    d = decompose_attention(m, np.zeros((5, 2)), 2)
    np.testing.assert_array_equal(d.m_cc, np.eye(2))
    np.testing.assert_array_equal(d.m_ii, np.eye(3))
    assert not d.m_ci.any() and not d.m_ic.any()


@pytest.mark.parametrize("n_c", [0, 7])
def test_split_out_of_range(n_c):
    m, v = random_attention(np.random.default_rng(0))
    with pytest.raises(DDTAError):
        decompose_attention(m, v, n_c)


def test_non_square_rejected():
    with pytest.raises(DDTAError):
        decompose_attention(np.ones((3, 4)), np.ones((3, 1)), 1)


def test_bad_quadrant_shape():
    with pytest.raises(DDTAError):
        DecoupledAttention(np.ones((2, 2)), np.ones((2, 3)), np.ones((2, 2)), np.ones((3, 3)), np.ones((2, 1)), np.ones((3, 1)))


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 9), st.integers(1, 3), st.data())
def test_bijection(n, heads, data):
    n_c = data.draw(st.integers(1, n - 1))
    m = data.draw(hnp.arrays(float, (heads, n, n), elements=st.floats(-1e3, 1e3)))
    v = data.draw(hnp.arrays(float, (heads, n, 2), elements=st.floats(-1e3, 1e3)))
    m2, v2 = recompose_attention(decompose_attention(m, v, n_c))
    assert m2.tobytes() == m.tobytes() and v2.tobytes() == v.tobytes()


def test_model_layer_zero_roundtrip():
    model = ToyMMDiT(ToyMMDiTConfig(l_multi=1, l_single=1))
    grabbed = []

    class Grab:
        def on_attention(self, block_kind, layer, dec):
            grabbed.append(dec)
            return dec

    z = np.random.default_rng(0).standard_normal(model.cfg.latent_shape)
    model(z, 0.5, hook=Grab())
    m, v = recompose_attention(grabbed[0])
    d2 = decompose_attention(m, v, model.cfg.n_text)
    for name in REGIONS:
        assert getattr(d2, name).tobytes() == getattr(grabbed[0], name).tobytes()


def test_row_stochastic_after_split():
    m, v = random_attention(np.random.default_rng(1))
    np.testing.assert_allclose(decompose_attention(m, v, 3).row_sums(), 1.0, atol=1e-12)


def test_single_quadrant_change_is_local():
    rng = np.random.default_rng(2)
    m, v = random_attention(rng)
    d = decompose_attention(m, v, 3)
    other = decompose_attention(*random_attention(rng), 3)
    out = manipulate(d, other, ManipulationPlan(ops={"m_ci": "replace"}))
    m2, v2 = recompose_attention(out)
    mask = np.zeros(m.shape, bool)
    mask[..., :3, 3:] = True
    np.testing.assert_array_equal(m2[~mask], m[~mask])
    np.testing.assert_array_equal(m2[mask], other.m_ci.reshape(-1))
    np.testing.assert_array_equal(v2, v)


def test_all_none_is_identity():
    rng = np.random.default_rng(3)
    cur = decompose_attention(*random_attention(rng), 2)
    cached = decompose_attention(*random_attention(rng), 2)
    out = manipulate(cur, cached, ManipulationPlan())
    for name in REGIONS:
        assert getattr(out, name) is getattr(cur, name)


def test_replace_with_self_is_identity():
    cur = decompose_attention(*random_attention(np.random.default_rng(4)), 2)
    out = manipulate(cur, cur, ManipulationPlan.uniform("replace"))
    for name in REGIONS:
        assert getattr(out, name).tobytes() == getattr(cur, name).tobytes()


def test_mean_scalar_region():
    cur = decompose_attention(np.array([[0.6, 0.4], [0.4, 0.6]]), np.ones((2, 1)), 1)
    cached = decompose_attention(np.array([[0.8, 0.2], [0.5, 0.5]]), np.ones((2, 1)), 1)
    out = manipulate(cur, cached, ManipulationPlan(ops={"m_ci": "mean"}))
    assert out.m_ci.item() == pytest.approx(0.3)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mean_symmetric(seed):
    rng = np.random.default_rng(seed)
    a = decompose_attention(*random_attention(rng), 3)
    b = decompose_attention(*random_attention(rng), 3)
    plan = ManipulationPlan.uniform("mean")
    ab, ba = manipulate(a, b, plan), manipulate(b, a, plan)
    for name in REGIONS:
        assert getattr(ab, name).tobytes() == getattr(ba, name).tobytes()


def test_manipulate_shape_mismatch_names_region():
    rng = np.random.default_rng(5)
    a = decompose_attention(*random_attention(rng, n=7), 3)
    b = decompose_attention(*random_attention(rng, n=8), 3)
    with pytest.raises(DDTAError, match="m_ci"):
        manipulate(a, b, ManipulationPlan(ops={"m_ci": "replace"}))


def test_plan_rejects_unknown():
    with pytest.raises(DDTAError):
        ManipulationPlan(ops={"m_xx": "replace"})
    with pytest.raises(DDTAError):
        ManipulationPlan(ops={"m_ci": "swap"})
    with pytest.raises(DDTAError):
        ManipulationPlan(blocks=("triple",))


def test_d_list_validation():
    with pytest.raises(DDTAError):
        ManipulationPlan(d_list=(0, 3)).validate_d_list(10)
    ManipulationPlan(d_list=(1, 10)).validate_d_list(10)


def test_default_plan():
    plan = ManipulationPlan.default()
    assert plan.ops == {"m_cc": "none", "m_ci": "replace", "m_ic": "replace", "m_ii": "none", "v_c": "none", "v_i": "mean"}
    assert plan.blocks == ("single",) and plan.d_list == (1,)


def test_cache_miss():
    with pytest.raises(CacheMissError):
        AttentionCache().get((1, "single", 0))


def test_cache_write_once():
    cache = AttentionCache()
    d = decompose_attention(*random_attention(np.random.default_rng(6)), 2)
    cache.store((1, "single", 0), d)
    with pytest.raises(DDTAError):
        cache.store((1, "single", 0), d)


def test_cache_spill_roundtrip(tmp_path):
    cache = AttentionCache()
    rng = np.random.default_rng(7)
    for key in [(3, "single", 1), (1, "multi", 0)]:
        cache.store(key, decompose_attention(*random_attention(rng), 2))
    cache.dump(tmp_path / "c.json")
    back = AttentionCache.load(tmp_path / "c.json")
    assert back.keys() == cache.keys()
    for key in cache.keys():
        for name in REGIONS:
            np.testing.assert_array_equal(getattr(back.get(key), name), getattr(cache.get(key), name))


def test_hook_scope():
    cache = AttentionCache()
    plan = ManipulationPlan(ops={"m_ci": "replace"}, blocks=("single",), layers=(1,))
    d = decompose_attention(*random_attention(np.random.default_rng(8)), 2)
    save = cache_hook(cache, 4, "save", plan)
    save.on_attention("multi", 1, d)
    save.on_attention("single", 0, d)
    save.on_attention("single", 1, d)
    assert cache.keys() == [(4, "single", 1)]
    manip = cache_hook(cache, 4, "manipulate", plan)
    assert manip.on_attention("single", 0, d) is d
    with pytest.raises(CacheMissError):
        cache_hook(cache, 5, "manipulate", plan).on_attention("single", 1, d)


def test_recorder_degenerate_single_block():
    rng = np.random.default_rng(9)
    d = decompose_attention(*random_attention(rng, heads=3, n=6), 2)
    rec = ResponseRecorder()
    rec.next_eval().on_attention("single", 0, d)
    maps = aggregate_response_maps(rec.records, [0, 1], 1, 1, (2, 2), (2, 2))
    expected = (d.m_ic + np.swapaxes(d.m_ci, -1, -2)).mean(axis=0)
    for m in maps:
        np.testing.assert_array_equal(m.grid_map, expected[:, m.word_index].reshape(2, 2))


def test_uniform_attention_gives_constant_maps():
    n_c, n_i = 2, 4
    m = np.full((1, n_c + n_i, n_c + n_i), 1 / (n_c + n_i))
    d = decompose_attention(m, np.zeros((1, n_c + n_i, 1)), n_c)
    rec = ResponseRecorder()
    for _ in range(3):
        h = rec.next_eval()
        h.on_attention("multi", 0, d)
        h.on_attention("single", 0, d)
    for rm in aggregate_response_maps(rec.records, [0, 1], 3, 2, (2, 2), (5, 5)):
        assert np.ptp(rm.resized) < 1e-15


def test_aggregate_counts_checked():
    with pytest.raises(DDTAError):
        aggregate_response_maps([[np.zeros((4, 2))]], [0], 2, 1, (2, 2), (4, 4))


def test_bilinear_corners_and_identity():
    img = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(bilinear_resize(img, 2, 3), img)
    up = bilinear_resize(img, 3, 5)
    assert up[0, 0] == img[0, 0] and up[-1, -1] == img[-1, -1] and up[0, -1] == img[0, -1]
    assert up[1, 2] == pytest.approx(img.mean())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_response_values_bounded(seed, steps):
    rng = np.random.default_rng(seed)
    rec = ResponseRecorder()
    for _ in range(steps):
        h = rec.next_eval()
        for layer in range(2):
            h.on_attention("single", layer, decompose_attention(*random_attention(rng, n=6), 2))
    for rm in aggregate_response_maps(rec.records, [0, 1], steps, 2, (2, 2), (7, 3)):
        assert rm.resized.shape == (7, 3)
        assert rm.resized.min() >= 0 and rm.resized.max() <= 2


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["replace", "mean"]), st.sampled_from(REGIONS[:4]))
def test_manipulated_row_sums_not_renormalized(seed, op, region):
    rng = np.random.default_rng(seed)
    cur = decompose_attention(*random_attention(rng), 3)
    cached = decompose_attention(*random_attention(rng), 3)
    sums = manipulate(cur, cached, ManipulationPlan(ops={region: op})).row_sums()
    assert sums.min() >= 0.0 and sums.max() <= 2.0 + 1e-12
