import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hshmm.errors import DataError, DimensionMismatchError
from hshmm.model import (
    EtaBlocks,
    ParamLayout,
    PhoneLoop,
    build_alignment_graph,
    build_phone_loop_graph,
    pack_eta,
    stick_breaking_expected_log_weights,
    unpack_eta,
    update_stick_breaking,
)


def test_layout_sizes():
    assert ParamLayout(2).size == 3 * (8 + 8 + 3) == 57
    assert ParamLayout(39).size == 945
    assert ParamLayout(2).bias_size == 3 * (2 + 2 + 3)


def test_bias_index_shares_entries_across_components():
    lay = ParamLayout(2, n_states=1, n_components=3)
    # means: (d0 d1) x 3 components, log-covs likewise, then 2 logits
    np.testing.assert_array_equal(lay.bias_index, [0, 1, 0, 1, 0, 1, 2, 3, 2, 3, 2, 3, 4, 5])


@settings(max_examples=30)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(1, 5), st.integers(0, 2 ** 31))
def test_pack_unpack_bijection(d, s, k, seed):
    lay = ParamLayout(d, s, k)
    eta = np.random.default_rng(seed).standard_normal((2, lay.size))
    blocks = unpack_eta(eta, lay)
    assert blocks.mean.shape == (2, s, k, d)
    assert blocks.logits.shape == (2, s, k - 1)
    np.testing.assert_array_equal(pack_eta(blocks, lay), eta)


def test_unpack_wrong_length():
    with pytest.raises(DimensionMismatchError):
        unpack_eta(np.zeros(56), ParamLayout(2))


def test_pack_wrong_shape():
    lay = ParamLayout(2)
    with pytest.raises(DimensionMismatchError):
        pack_eta(EtaBlocks(np.zeros((3, 4, 3)), np.zeros((3, 4, 2)), np.zeros((3, 3))), lay)


# -- stick breaking -----------------------------------------------------------

def test_single_stick_expected_log_weight():
    # psi(1) - psi(2) = -1
    got = stick_breaking_expected_log_weights(PhoneLoop(np.array([1.0]), np.array([1.0])))
    np.testing.assert_allclose(got, [-1.0], rtol=0, atol=1e-14)


def test_large_first_stick_concentrates_weight():
    loop = PhoneLoop(np.array([1e9, 1.0, 1.0]), np.array([1.0, 1.0, 1.0]))
    assert abs(stick_breaking_expected_log_weights(loop)[0]) < 1e-8


@settings(max_examples=30)
@given(st.integers(1, 50), st.floats(0.1, 10))
def test_expected_weights_are_subnormalized(u, gamma):
    rng = np.random.default_rng(u)
    loop = PhoneLoop(1 + 5 * rng.random(u), gamma + 5 * rng.random(u), gamma)
    assert np.exp(stick_breaking_expected_log_weights(loop)).sum() < 1.0


def test_zero_counts_give_prior():
    loop = update_stick_breaking(PhoneLoop.prior(4, 2.0), np.zeros(4))
    np.testing.assert_array_equal(loop.a, np.ones(4))
    np.testing.assert_array_equal(loop.b, np.full(4, 2.0))


@pytest.mark.parametrize("counts, a, b", [
    ([10, 0, 0], [11, 1, 1], [1, 1, 1]),
    ([2, 3], [3, 4], [4, 1]),
])
def test_stick_update_formula(counts, a, b):
    loop = update_stick_breaking(PhoneLoop.prior(len(counts), 1.0), np.array(counts, float))
    np.testing.assert_array_equal(loop.a, a)
    np.testing.assert_array_equal(loop.b, b)


def test_negative_counts_rejected():
    with pytest.raises(DataError):
        update_stick_breaking(PhoneLoop.prior(2), np.array([1.0, -1.0]))


def test_stick_kl_is_zero_at_prior_and_positive_elsewhere():
    assert PhoneLoop.prior(5, 1.5).kl_divergence() == pytest.approx(0.0, abs=1e-12)
    assert update_stick_breaking(PhoneLoop.prior(5), np.arange(5.0)).kl_divergence() > 0


def test_invalid_beta_parameters():
    with pytest.raises(ValueError):
        PhoneLoop(np.array([0.0]), np.array([1.0]))


# -- graphs -------------------------------------------------------------------

LAYOUT = ParamLayout(2)


def test_single_unit_loop():
    g = build_phone_loop_graph(1, LAYOUT, np.zeros(1))
    assert g.n_states == 3
    trans = np.exp(g.transition_matrix())
    # last state loops back to the first through the hub
    assert trans[2, 0] > 0
    np.testing.assert_allclose(np.exp(g.outgoing_log_mass()), 1.0, atol=1e-12)


def test_truncated_loop_has_300_states():
    g = build_phone_loop_graph(100, LAYOUT, np.full(100, -np.log(100)))
    assert g.n_states == 300


def test_loop_is_row_stochastic_with_normalized_weights():
    w = np.random.default_rng(0).dirichlet(np.ones(7))
    g = build_phone_loop_graph(7, LAYOUT, np.log(w))
    np.testing.assert_allclose(np.exp(g.outgoing_log_mass()), 1.0, atol=1e-10)
    np.testing.assert_allclose(np.exp(g.transition_matrix()).sum(1) + np.exp(g.log_exit),
                               np.where(g.hmm_states == 2, 1.5, 1.0), atol=1e-10)


def test_symmetric_units_give_symmetric_graph():
    g = build_phone_loop_graph(2, LAYOUT, np.log([0.5, 0.5]))
    trans = g.transition_matrix()
    perm = np.r_[3:6, 0:3]
    np.testing.assert_array_equal(trans, trans[np.ix_(perm, perm)])


def test_loop_rejects_non_finite_weights():
    with pytest.raises(DataError):
        build_phone_loop_graph(2, LAYOUT, np.array([0.0, np.nan]))


def test_one_token_alignment_chain():
    g = build_alignment_graph(["a"], {"a": 4}, LAYOUT)
    assert g.n_states == 3
    assert set(g.units) == {4}
    trans = g.transition_matrix()
    assert np.isfinite(trans[0, 1]) and np.isfinite(trans[1, 2])
    assert not np.isfinite(trans[1, 0]) and not np.isfinite(trans[0, 2])
    assert g.log_init[0] == 0 and np.all(np.isneginf(g.log_init[1:]))


def test_two_token_alignment_chain():
    g = build_alignment_graph(["a", "b"], {"a": 0, "b": 1}, LAYOUT)
    assert g.n_states == 6
    trans = g.transition_matrix()
    # states are 0-based: the 3rd state of "a" feeds the 1st state of "b"
    assert np.isfinite(trans[2, 3])
    assert not np.isfinite(trans[3, 2])
    np.testing.assert_allclose(np.exp(g.outgoing_log_mass()), 1.0, atol=1e-12)


def test_alignment_graph_errors():
    with pytest.raises(DataError):
        build_alignment_graph([], {}, LAYOUT)
    with pytest.raises(DataError, match="'zz'"):
        build_alignment_graph(["a", "zz"], {"a": 0}, LAYOUT)


def test_arcs_sorted_by_destination():
    g = build_phone_loop_graph(4, LAYOUT, np.zeros(4))
    key = g.arc_dst * g.n_states + g.arc_src
    assert np.all(np.diff(key) > 0)
