import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rkflow.ddta import decompose_attention
from rkflow.velocity import (
    ConstantField,
    FieldError,
    GaussToGaussField,
    LinearScalarField,
    LogisticField,
    TimePolyField,
    ToyMMDiT,
    ToyMMDiTConfig,
    estimate_lipschitz,
    make_analytic_field,
    toy_mmdit_new,
)
from rkflow.velocity.mmdit import PAD_ID, joint_attention

SMALL = ToyMMDiTConfig(l_multi=2, l_single=2)


@pytest.fixture(scope="module")
def model():
    return ToyMMDiT(SMALL)


@pytest.fixture(scope="module")
def latent():
    return np.random.default_rng(3).standard_normal(SMALL.latent_shape)


class Identity:
    def on_attention(self, block_kind, layer, decoupled):
        return decoupled


class RowSums:
    def __init__(self):
        self.sums = []

    def on_attention(self, block_kind, layer, decoupled):
        self.sums.append(decoupled.row_sums())
        return decoupled


def test_constant_eval():
    np.testing.assert_array_equal(ConstantField(2.0)(np.array([7.0, -3.0]), 0.3), [2.0, 2.0])


def test_linear_exact():
    assert LinearScalarField(1.0).exact_solution(1.0, 0.5) == pytest.approx(math.exp(0.5))


def test_time_poly_exact():
    f = TimePolyField([1.0, 2.0])
    assert f.exact_solution(0.0, 1.0) == pytest.approx(2.0)
    assert f(np.zeros(1), 0.5)[0] == pytest.approx(2.0)


def test_logistic_exact_matches_ode():
    f = LogisticField()
    z0, t, h = 0.2, 0.4, 1e-6
    d = (f.exact_solution(z0, t + h) - f.exact_solution(z0, t - h)) / (2 * h)
    assert d == pytest.approx(f(np.array([f.exact_solution(z0, t)]), t)[0], rel=1e-6)


@pytest.mark.parametrize("mu0, sigma0", [(0.0, 1.0), (1.0, 0.5), (-2.0, 2.0)])
def test_gauss_to_gauss_matches_monte_carlo(mu0, sigma0):
    rng = np.random.default_rng(11)
    n = 1_000_000
    z0 = mu0 + sigma0 * rng.standard_normal(n)
    z1 = rng.standard_normal(n)
    t = 0.5
    zt = t * z1 + (1 - t) * z0
    slope, intercept = np.polyfit(zt, z1 - z0, 1)
    f = GaussToGaussField(mu0, sigma0)
    probes = np.linspace(-2, 2, 9)
    np.testing.assert_allclose(f(probes, t), slope * probes + intercept, atol=2e-2)


@pytest.mark.parametrize("mu0, sigma0", [(0.0, 1.0), (1.0, 0.5)])
def test_gauss_to_gauss_exact_solution_solves_ode(mu0, sigma0):
    f = GaussToGaussField(mu0, sigma0)
    z0 = np.array([-1.0, 0.3, 2.0])
    for t in (0.2, 0.5, 0.8):
        h = 1e-6
        d = (f.exact_solution(z0, t + h) - f.exact_solution(z0, t - h)) / (2 * h)
        np.testing.assert_allclose(d, f(f.exact_solution(z0, t), t), rtol=1e-6, atol=1e-8)


def test_time_out_of_range():
    with pytest.raises(FieldError):
        ConstantField(1.0)(np.zeros(1), 1.5)


def test_unknown_analytic_kind():
    with pytest.raises(FieldError, match="linear_scalar"):
        make_analytic_field("quadratic")


def test_unexpected_parameter():
    with pytest.raises(FieldError):
        make_analytic_field("constant", lam=1.0)


def test_lipschitz_estimate_linear():
    est = estimate_lipschitz(LinearScalarField(-0.7), np.zeros(5), n_probes=50)
    assert est == pytest.approx(0.7, rel=1e-6)


def test_model_shape(model, latent):
    assert model(latent, 0.4).shape == SMALL.latent_shape


def test_model_determinism(latent):
    a = ToyMMDiT(SMALL)(latent, 0.3, guidance=2.0)
    b = ToyMMDiT(SMALL)(latent, 0.3, guidance=2.0)
    np.testing.assert_array_equal(a, b)


def test_seed_changes_weights(latent):
    other = ToyMMDiT(ToyMMDiTConfig(l_multi=2, l_single=2, seed=1))
    assert not np.array_equal(ToyMMDiT(SMALL)(latent, 0.3), other(latent, 0.3))


def test_hook_neutrality(model, latent):
    cond = model.embed_prompt([4, 5, 6])
    np.testing.assert_array_equal(model(latent, 0.6, cond), model(latent, 0.6, cond, hook=Identity()))


def test_row_stochastic_every_layer(model, latent):
    rec = RowSums()
    model(latent, 0.5, hook=rec)
    assert len(rec.sums) == model.n_blocks
    for sums in rec.sums:
        np.testing.assert_allclose(sums, 1.0, atol=1e-6)


def test_wrong_latent_shape(model):
    with pytest.raises(FieldError):
        model(np.zeros((4, 4, 4)), 0.5)


def test_embedding_deterministic(model):
    a = model.embed_prompt([1, 2, 3])
    b = model.embed_prompt([1, 2, 3])
    np.testing.assert_array_equal(a.vectors, b.vectors)
    assert a.tokens == b.tokens


def test_embedding_differs_in_one_row(model):
    a = model.embed_prompt([1, 2, 3]).vectors
    b = model.embed_prompt([1, 9, 3]).vectors
    changed = [i for i in range(a.shape[0]) if not np.array_equal(a[i], b[i])]
    assert changed == [1]


def test_embedding_padded(model):
    emb = model.embed_prompt([5])
    assert emb.tokens == (5,)
    assert emb.vectors.shape == (SMALL.n_text, SMALL.d_model)
    np.testing.assert_array_equal(emb.vectors[1], model.embed_table[PAD_ID])
    np.testing.assert_array_equal(emb.vectors[1], emb.vectors[-1])


def test_prompt_too_long(model):
    with pytest.raises(FieldError):
        model.embed_prompt(list(range(SMALL.n_text + 1)))


def test_bad_config():
    with pytest.raises(FieldError):
        ToyMMDiTConfig(d_model=30, n_heads=4)


def test_config_roundtrip():
    cfg = ToyMMDiTConfig(seed=9)
    assert ToyMMDiTConfig(**cfg.to_dict()) == cfg
    assert toy_mmdit_new(cfg).cfg == cfg


def test_concatenation_order_probe():
    # Zeroed text keys give equal logits over the text columns, so every row of
    # the text-key quadrants becomes flat while the image-key quadrants do not.
    rng = np.random.default_rng(0)
    n_c, n_i, heads, d = 3, 5, 2, 4
    q, k, v = (rng.standard_normal((heads, n_c + n_i, d)) for _ in range(3))
    k[:, :n_c] = 0.0
    rec = []

    class Grab:
        def on_attention(self, block_kind, layer, decoupled):
            rec.append(decoupled)
            return decoupled

    joint_attention(q, k, v, n_c, Grab())
    dec = rec[0]
    for region in (dec.m_cc, dec.m_ic):
        np.testing.assert_allclose(region, np.broadcast_to(region[..., :1], region.shape), rtol=1e-12)
    assert np.ptp(dec.m_ci, axis=-1).max() > 1e-3
    assert np.ptp(dec.m_ii, axis=-1).max() > 1e-3


def test_model_text_first(model, latent):
    seen = []

    class Sizes:
        def on_attention(self, block_kind, layer, decoupled):
            seen.append((block_kind, layer, decoupled.n_c, decoupled.n_i))
            return decoupled

    model(latent, 0.5, hook=Sizes())
    assert seen == [("multi", 0, 8, 64), ("multi", 1, 8, 64), ("single", 0, 8, 64), ("single", 1, 8, 64)]


def test_joint_attention_matches_direct():
    rng = np.random.default_rng(1)
    q, k, v = (rng.standard_normal((2, 6, 4)) for _ in range(3))
    logits = q @ np.swapaxes(k, -1, -2) / 2.0
    m = np.exp(logits - logits.max(-1, keepdims=True))
    m /= m.sum(-1, keepdims=True)
    np.testing.assert_allclose(joint_attention(q, k, v, 2), m @ v, rtol=1e-12)
    dec = decompose_attention(m, v, 2)
    np.testing.assert_allclose(dec.row_sums(), 1.0, atol=1e-12)


def test_model_lipschitz_estimate_positive(model, latent):
    est = estimate_lipschitz(model, latent, n_probes=20)
    assert 0 < est < 100


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.1, 1.1), st.floats(0.0, 5.0))
def test_model_finite_everywhere(t, g):
    m = ToyMMDiT(ToyMMDiTConfig(l_multi=1, l_single=1, grid_h=4, grid_w=4))
    z = np.random.default_rng(0).standard_normal(m.cfg.latent_shape)
    assert np.all(np.isfinite(m(z, t, guidance=g)))
