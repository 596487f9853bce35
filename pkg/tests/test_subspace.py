import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hshmm.errors import DimensionMismatchError, NumericalError
from hshmm.model import EtaBlocks, ParamLayout
from hshmm.subspace import (
    VariationalGaussian,
    blocks_to_params,
    clamp_log_cov,
    compose_subspace,
    decode_unit_params,
    init_language,
    init_posteriors,
    kl_diag_gaussian,
    kl_diag_gaussian_grad,
    log_softmax_weights,
    params_to_blocks,
    sample_posterior,
)

LAYOUT = ParamLayout(2)


def _hyper(seed, K=2, E=3, layout=LAYOUT):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((K + 1, layout.size, E)),
            rng.standard_normal((K + 1, layout.bias_size)))


# -- composition --------------------------------------------------------------

def test_zero_alpha_gives_the_bias_subspace():
    M, m = _hyper(0)
    W, b = compose_subspace(M, m, np.zeros(2))
    np.testing.assert_array_equal(W, M[0])
    np.testing.assert_array_equal(b, m[0])


def test_single_hyper_basis_with_zero_bias():
    M, m = _hyper(1, K=1)
    M[0] = 0
    W, _ = compose_subspace(M, m, np.array([1.0]))
    np.testing.assert_array_equal(W, M[1])


@settings(max_examples=25)
@given(st.integers(0, 2 ** 31))
def test_composition_is_affine_in_alpha(seed):
    M, m = _hyper(seed)
    alpha = np.random.default_rng(seed).standard_normal(2)
    W2, b2 = compose_subspace(M, m, 2 * alpha)
    W1, b1 = compose_subspace(M, m, alpha)
    M0, m0 = M.copy(), m.copy()
    M0[0] = 0
    m0[0] = 0
    Wl, bl = compose_subspace(M0, m0, alpha)
    np.testing.assert_allclose(W2 - W1, Wl, atol=1e-12)
    np.testing.assert_allclose(b2 - b1, bl, atol=1e-12)


def test_composition_shape_errors():
    M, m = _hyper(0)
    with pytest.raises(DimensionMismatchError):
        compose_subspace(M, m, np.zeros(3))
    with pytest.raises(DimensionMismatchError):
        compose_subspace(M, m[:2], np.zeros(2))


# -- the f mapping ------------------------------------------------------------

def test_zero_logits_give_uniform_weights():
    p = blocks_to_params(EtaBlocks(np.zeros((1, 4, 2)), np.zeros((1, 4, 2)), np.zeros((1, 3))))
    np.testing.assert_allclose(p.weights, 0.25, rtol=0, atol=1e-15)


def test_logits_ln2_give_04_02_02_02():
    logits = np.array([[np.log(2.0), 0.0, 0.0]])
    p = blocks_to_params(EtaBlocks(np.zeros((1, 4, 2)), np.zeros((1, 4, 2)), logits))
    # exp(ln 2) / (2 + 1 + 1 + 1)
    np.testing.assert_allclose(p.weights[0], [0.4, 0.2, 0.2, 0.2], rtol=0, atol=1e-15)


def test_zero_log_cov_gives_identity_and_raw_mean():
    v = np.arange(8.0).reshape(1, 4, 2)
    p = blocks_to_params(EtaBlocks(v, np.zeros((1, 4, 2)), np.zeros((1, 3))))
    np.testing.assert_array_equal(p.variances, 1.0)
    np.testing.assert_array_equal(p.means, v)


def test_decode_unit_params_from_subspace():
    M, m = _hyper(3)
    W, b = compose_subspace(M, m, np.array([0.3, -0.2]))
    e = np.random.default_rng(3).standard_normal((5, 3))
    p = decode_unit_params(W, b, e, LAYOUT)
    assert p.means.shape == (5, 3, 4, 2)
    np.testing.assert_allclose(p.weights.sum(-1), 1.0, rtol=0, atol=1e-12)
    assert np.all(p.variances > 0)


@settings(max_examples=50)
@given(st.integers(0, 2 ** 31), st.floats(0.1, 30))
def test_mixture_weights_normalized(seed, scale):
    logits = scale * np.random.default_rng(seed).standard_normal((7, 3, 3))
    w = np.exp(log_softmax_weights(logits))
    np.testing.assert_allclose(w.sum(-1), 1.0, rtol=0, atol=1e-12)


def test_log_cov_clamped_or_strict():
    lc = np.array([[[-40.0, 0.0], [0.0, 40.0]]])
    clipped, inside = clamp_log_cov(lc)
    assert clipped.min() == pytest.approx(np.log(1e-8))
    assert clipped.max() == pytest.approx(np.log(1e8))
    assert inside.tolist() == [[[False, True], [True, False]]]
    with pytest.raises(NumericalError, match=r"\(0, 0, 0\)"):
        clamp_log_cov(lc, strict=True)


def test_nan_log_cov_names_component():
    lc = np.zeros((2, 3, 1))
    lc[1, 2, 0] = np.nan
    with pytest.raises(NumericalError, match=r"\(1, 2, 0\)"):
        clamp_log_cov(lc)


def test_params_blocks_inverse():
    rng = np.random.default_rng(4)
    blocks = EtaBlocks(rng.standard_normal((2, 3, 4, 2)), rng.standard_normal((2, 3, 4, 2)),
                       rng.standard_normal((2, 3, 3)))
    back = params_to_blocks(blocks_to_params(blocks))
    for a, b in zip(blocks, back):
        np.testing.assert_allclose(a, b, atol=1e-12)


# -- variational Gaussians ----------------------------------------------------

def test_sample_with_zero_noise_is_mean():
    q = VariationalGaussian(np.arange(3.0), np.full(3, -2.0))
    np.testing.assert_array_equal(sample_posterior(q, np.zeros(3)), q.mean)


def test_sample_with_unit_variance_and_unit_noise():
    q = VariationalGaussian(np.arange(3.0), np.zeros(3))
    np.testing.assert_array_equal(sample_posterior(q, np.ones(3)), q.mean + 1)


def test_sample_variance_monte_carlo():
    n = 100_000
    q = VariationalGaussian(np.zeros(n), np.full(n, 0.7))
    draws = sample_posterior(q, np.random.default_rng(0).standard_normal(n))
    assert abs(draws.var() / np.exp(0.7) - 1) < 0.05


def test_sample_shape_mismatch():
    with pytest.raises(DimensionMismatchError):
        sample_posterior(VariationalGaussian(np.zeros(3), np.zeros(3)), np.zeros(2))


@pytest.mark.parametrize("mean, logvar, expected", [
    (0.0, 0.0, 0.0),
    (1.0, 0.0, 0.5),
    (0.0, 1.0, 0.5 * (np.e - 2.0)),
])
def test_kl_closed_form_values(mean, logvar, expected):
    q = VariationalGaussian(np.array([mean]), np.array([logvar]))
    assert kl_diag_gaussian(q, 1.0) == pytest.approx(expected, abs=1e-15)


@settings(max_examples=50)
@given(st.floats(-5, 5), st.floats(-6, 4), st.floats(0.1, 5))
def test_kl_non_negative_and_gradient(mean, logvar, sigma):
    q = VariationalGaussian(np.array([mean]), np.array([logvar]))
    assert kl_diag_gaussian(q, sigma) >= 0
    g_mean, g_logvar = kl_diag_gaussian_grad(q, sigma)
    h = 1e-6
    fd_m = (kl_diag_gaussian(VariationalGaussian(q.mean + h, q.logvar), sigma)
            - kl_diag_gaussian(VariationalGaussian(q.mean - h, q.logvar), sigma)) / (2 * h)
    fd_v = (kl_diag_gaussian(VariationalGaussian(q.mean, q.logvar + h), sigma)
            - kl_diag_gaussian(VariationalGaussian(q.mean, q.logvar - h), sigma)) / (2 * h)
    assert g_mean[0] == pytest.approx(fd_m, rel=1e-5, abs=1e-7)
    assert g_logvar[0] == pytest.approx(fd_v, rel=1e-5, abs=1e-7)


def test_kl_rejects_bad_sigma():
    with pytest.raises(ValueError):
        kl_diag_gaussian(VariationalGaussian(np.zeros(1), np.zeros(1)), 0.0)


# -- initialization -----------------------------------------------------------

def test_init_is_seeded():
    a = init_posteriors(7, LAYOUT, 4, 2, {"x": 3})
    b = init_posteriors(7, LAYOUT, 4, 2, {"x": 3})
    np.testing.assert_array_equal(a[0].bases.mean, b[0].bases.mean)
    np.testing.assert_array_equal(a[1]["x"].embeddings.mean, b[1]["x"].embeddings.mean)


def test_zero_init_scale_gives_zero_means():
    hyper, langs = init_posteriors(0, LAYOUT, 4, 2, {"x": ["a", "b"]}, init_scale=0.0)
    assert not hyper.bases.mean.any() and not hyper.biases.mean.any()
    assert not langs["x"].embeddings.mean.any()
    assert langs["x"].units == ["a", "b"]


def test_default_dimensions():
    hyper, _ = init_posteriors(0, ParamLayout(39))
    assert hyper.embedding_dim == 100
    assert hyper.n_hyper == 6
    assert hyper.bases.shape == (7, 945, 100)


def test_init_language_labels():
    lp = init_language(0, 2, 4, 3)
    assert lp.units == ["au0", "au1", "au2"]
    assert lp.alpha.shape == (2,)
