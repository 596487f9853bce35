import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_graph
from hshmm.decode import UnitTranscription, path_score, path_to_units, viterbi
from hshmm.errors import InfeasibleAlignmentError
from hshmm.model import ParamLayout, build_alignment_graph, build_phone_loop_graph
from hshmm.synth import brute_force_best_path, enumerate_paths


def test_one_state_graph_path():
    g = build_alignment_graph(["a"], {"a": 0}, ParamLayout(1, n_states=1))
    path, score = viterbi(g, np.random.default_rng(0).standard_normal((5, 1)))
    np.testing.assert_array_equal(path, np.zeros(5))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_viterbi_matches_enumeration(seed):
    graph, llh = random_graph(np.random.default_rng(seed))
    path, score = viterbi(graph, llh)
    ref_path, ref_score = brute_force_best_path(graph, llh)
    assert score == pytest.approx(ref_score, abs=1e-9)
    assert path_score(graph, llh, path) == pytest.approx(score, abs=1e-9)
    assert all(s <= score + 1e-9 for _, s in enumerate_paths(graph, llh))
    np.testing.assert_array_equal(path, ref_path)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(-100, 100))
def test_constant_shift_keeps_path(seed, c):
    graph, llh = random_graph(np.random.default_rng(seed))
    p1, _ = viterbi(graph, llh)
    p2, _ = viterbi(graph, llh + c)
    np.testing.assert_array_equal(p1, p2)


def test_ties_go_to_lowest_state():
    g = build_phone_loop_graph(2, ParamLayout(1, n_states=1), np.log([0.5, 0.5]))
    path, _ = viterbi(g, np.zeros((4, 2)))
    np.testing.assert_array_equal(path, [0, 0, 0, 0])


def test_infeasible_viterbi():
    g = build_alignment_graph(["a", "b"], {"a": 0, "b": 1}, ParamLayout(1))
    with pytest.raises(InfeasibleAlignmentError):
        viterbi(g, np.zeros((4, 6)))


LOOP = build_phone_loop_graph(5, ParamLayout(1), np.full(5, -np.log(5)))


def test_single_unit_path_is_one_segment():
    path = np.repeat([9, 10, 11], [3, 4, 3])       # unit 3, states 0..2, 10 frames
    t = path_to_units(path, LOOP, 10.0, "u")
    assert t.segments == [(0.0, 100.0, 3)]
    assert t.labelled() == [(0.0, 100.0, "au3")]


def test_unit_change_gives_boundary():
    g = build_phone_loop_graph(3, ParamLayout(1, n_states=1), np.zeros(3))
    t = path_to_units(np.array([1, 1, 2, 2]), g, 10.0)
    assert t.segments == [(0.0, 20.0, 1), (20.0, 40.0, 2)]


def test_reentry_of_same_unit_splits():
    # unit 1 (states 3, 4, 5) traversed twice back to back
    t = path_to_units(np.array([3, 4, 5, 3, 4, 5]), LOOP, 10.0)
    assert t.segments == [(0.0, 30.0, 1), (30.0, 60.0, 1)]


def test_self_loop_on_first_state_does_not_split():
    t = path_to_units(np.array([3, 3, 4, 5]), LOOP, 10.0)
    assert t.segments == [(0.0, 40.0, 1)]


def test_transcription_defaults():
    assert UnitTranscription("x").segments == []
