import numpy as np
import pytest

from hshmm.errors import DataError
from hshmm.features import load_manifest_data, read_alignments, read_manifest
from hshmm.model import ParamLayout, build_phone_loop_graph
from hshmm.synth import SynthSpec, brute_force_marginals, enumerate_paths, generate_corpus, write_corpus

SMALL = SynthSpec(n_utterances=8, seed=3)


def test_same_seed_same_corpus():
    a, b = generate_corpus(SMALL), generate_corpus(SMALL)
    for name in a.languages:
        for uid, fm in a.languages[name].features.items():
            np.testing.assert_array_equal(fm.frames, b.languages[name].features[uid].frames)
        assert a.languages[name].alignments == b.languages[name].alignments


def test_different_seed_differs():
    a = generate_corpus(SMALL)
    b = generate_corpus(SynthSpec(n_utterances=8, seed=4))
    assert not np.array_equal(a.bases, b.bases)


def test_language_names():
    assert SynthSpec().language_names() == ["src0", "src1", "target"]
    assert SynthSpec(source_languages=1, target=False).language_names() == ["src0"]


def test_one_unit_gives_one_label():
    c = generate_corpus(SynthSpec(n_units=1, n_utterances=5))
    labels = {lab for segs in c.target.alignments.values() for _, _, lab in segs}
    assert labels == {"p0"}


def test_alignments_tile_each_utterance():
    spec = SMALL
    c = generate_corpus(spec)
    for lc in c.languages.values():
        for uid, segs in lc.alignments.items():
            n = lc.features[uid].n_frames
            assert spec.min_frames <= n <= spec.max_frames
            assert segs[0][0] == 0 and segs[-1][1] == n * spec.frame_shift_ms
            assert all(a[1] == b[0] for a, b in zip(segs, segs[1:]))
            # every unit occupancy covers all of its states
            assert all(e - s >= spec.n_states * spec.frame_shift_ms for s, e, _ in segs)
            assert lc.transcripts[uid] == [lab for _, _, lab in segs]


def test_frame_mean_of_a_single_gaussian():
    # one unit, one state, one component: every frame is a draw from N(mu, Sigma)
    spec = SynthSpec(n_units=1, n_states=1, n_components=1, n_utterances=100, seed=5)
    c = generate_corpus(spec)
    x = np.concatenate([fm.frames for fm in c.target.features.values()])
    mu, var = c.target.params.means[0, 0, 0], c.target.params.variances[0, 0, 0]
    assert np.all(np.abs(x.mean(0) - mu) <= 3 * np.sqrt(var / len(x)))


def test_invalid_specs():
    with pytest.raises(DataError):
        generate_corpus(SynthSpec(n_units=0))
    with pytest.raises(DataError):
        generate_corpus(SynthSpec(min_frames=2))


def test_written_corpus_reads_back(tmp_path):
    c = generate_corpus(SMALL)
    manifests = write_corpus(c, tmp_path)
    assert set(manifests) == {"src0", "src1", "target"}
    feats, trans = load_manifest_data(read_manifest(manifests["src0"]))
    assert len(feats) == len(trans) == SMALL.n_utterances
    assert trans == c.languages["src0"].transcripts
    ali = read_alignments(tmp_path / "target.ali")
    assert ali == c.target.alignments
    assert (tmp_path / "truth.npz").exists() and (tmp_path / "spec.json").exists()


def test_enumeration_budget():
    g = build_phone_loop_graph(2, ParamLayout(1), np.log([0.5, 0.5]))
    with pytest.raises(ValueError, match="budget"):
        enumerate_paths(g, np.zeros((9, 6)))


def test_brute_force_marginals_normalized():
    g = build_phone_loop_graph(2, ParamLayout(1, n_states=1), np.log([0.3, 0.7]))
    post, logz = brute_force_marginals(g, np.zeros((4, 2)))
    np.testing.assert_allclose(post.sum(1), 1.0, atol=1e-12)
    # every path has probability mass 1 before exit; exit is the only loss
    assert np.isfinite(logz)
