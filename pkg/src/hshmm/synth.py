"""Seeded synthetic corpora drawn from the model's own generative story, and
exhaustive-enumeration oracles for small graphs.

A synthetic corpus shares one hyper-subspace across several languages. Each
language draws ``alpha`` and unit embeddings from their priors; frames are
produced by ancestral sampling (unit -> HMM state durations -> mixture
component -> Gaussian draw) and the exact frame alignment is recorded.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .features import (
    CorpusManifest,
    FeatureMatrix,
    ManifestEntry,
    write_alignments,
    write_feature_archive,
    write_manifest,
    write_transcripts,
)
from .inference import logsumexp
from .model import DecodingGraph, GaussianParams, ParamLayout
from .subspace import compose_subspace, decode_unit_params


@dataclass(frozen=True)
class SynthSpec:
    feature_dim: int = 2
    embedding_dim: int = 4
    n_hyper: int = 2
    n_units: int = 5
    n_states: int = 3
    n_components: int = 4
    source_languages: int = 2
    target: bool = True
    n_utterances: int = 200
    min_frames: int = 20
    max_frames: int = 60
    self_loop: float = 0.5
    prior_std: float = 1.0
    frame_shift_ms: float = 10.0
    seed: int = 0

    def language_names(self) -> list[str]:
        names = [f"src{i}" for i in range(self.source_languages)]
        return names + (["target"] if self.target else [])

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class LanguageCorpus:
    features: dict = field(default_factory=dict)        # id -> FeatureMatrix
    alignments: dict = field(default_factory=dict)      # id -> [(start_ms, end_ms, label)]
    transcripts: dict = field(default_factory=dict)     # id -> [label, ...]
    alpha: np.ndarray | None = None
    embeddings: np.ndarray | None = None
    params: GaussianParams | None = None


@dataclass
class SyntheticCorpus:
    spec: SynthSpec
    languages: dict
    bases: np.ndarray
    biases: np.ndarray

    @property
    def target(self) -> LanguageCorpus:
        return self.languages["target"]


def _durations(rng, n_states, self_loop):
    return rng.geometric(1.0 - self_loop, size=n_states)


def _composition(rng, total, parts):
    cuts = np.sort(rng.choice(np.arange(1, total), size=parts - 1, replace=False))
    return np.diff(np.r_[0, cuts, total])


def _sample_utterance(rng, params: GaussianParams, spec: SynthSpec):
    """Frames and (start_frame, end_frame, unit) segments for one utterance."""
    ns = spec.n_states
    length = int(rng.integers(spec.min_frames, spec.max_frames + 1))
    segments, state_seq = [], []
    remaining = length
    while remaining > 0:
        unit = int(rng.integers(spec.n_units))
        dur = _durations(rng, ns, spec.self_loop)
        if dur.sum() > remaining:
            dur = _composition(rng, remaining, ns) if remaining >= ns else None
        if dur is None:
            # Fewer frames left than states: lengthen the previous unit's last state.
            s, e, u = segments[-1]
            segments[-1] = (s, e + remaining, u)
            state_seq += [(u, ns - 1)] * remaining
            break
        left = remaining - int(dur.sum())
        if 0 < left < ns:
            dur[-1] += left
        start = length - remaining
        segments.append((start, start + int(dur.sum()), unit))
        for i, d in enumerate(dur):
            state_seq += [(unit, i)] * int(d)
        remaining = length - len(state_seq)

    x = np.empty((length, spec.feature_dim))
    for t, (u, i) in enumerate(state_seq):
        j = rng.choice(spec.n_components, p=params.weights[u, i])
        x[t] = params.means[u, i, j] + np.sqrt(params.variances[u, i, j]) * rng.standard_normal(
            spec.feature_dim)
    return x, segments


def generate_corpus(spec: SynthSpec = SynthSpec()) -> SyntheticCorpus:
    """Draw a corpus for every language named by ``spec``; bit-reproducible from the seed."""
    if spec.n_units < 1 or spec.feature_dim < 1:
        raise DataError("synthetic spec needs at least one unit and one feature dimension")
    if spec.min_frames < spec.n_states or spec.max_frames < spec.min_frames:
        raise DataError("invalid utterance length range")
    layout = ParamLayout(spec.feature_dim, spec.n_states, spec.n_components)
    rng = np.random.default_rng(spec.seed)
    sd = spec.prior_std
    bases = sd * rng.standard_normal((spec.n_hyper + 1, layout.size, spec.embedding_dim))
    biases = sd * rng.standard_normal((spec.n_hyper + 1, layout.bias_size))
    languages = {}
    for li, name in enumerate(spec.language_names()):
        lrng = np.random.default_rng([spec.seed, li])
        alpha = sd * lrng.standard_normal(spec.n_hyper)
        emb = sd * lrng.standard_normal((spec.n_units, spec.embedding_dim))
        W, b = compose_subspace(bases, biases, alpha)
        params = decode_unit_params(W, b, emb, layout)
        lc = LanguageCorpus(alpha=alpha, embeddings=emb, params=params)
        for n in range(spec.n_utterances):
            uid = f"{name}_{n:04d}"
            x, segs = _sample_utterance(lrng, params, spec)
            lc.features[uid] = FeatureMatrix(uid, x, spec.frame_shift_ms)
            lc.alignments[uid] = [(s * spec.frame_shift_ms, e * spec.frame_shift_ms, f"p{u}")
                                  for s, e, u in segs]
            lc.transcripts[uid] = [f"p{u}" for _, _, u in segs]
        languages[name] = lc
    return SyntheticCorpus(spec, languages, bases, biases)


def write_corpus(corpus: SyntheticCorpus, outdir) -> dict:
    """Write archives, alignments, transcripts and manifests; returns manifest paths."""
    os.makedirs(outdir, exist_ok=True)
    manifests = {}
    for name, lc in corpus.languages.items():
        ark = os.path.join(outdir, f"{name}.feats")
        trans = os.path.join(outdir, f"{name}.trans")
        write_feature_archive(lc.features, ark)
        write_alignments(lc.alignments, os.path.join(outdir, f"{name}.ali"))
        write_transcripts(lc.transcripts, trans)
        man = CorpusManifest([ManifestEntry(uid, ark, trans) for uid in lc.features])
        manifests[name] = os.path.join(outdir, f"{name}.tsv")
        write_manifest(man, manifests[name])
    with open(os.path.join(outdir, "spec.json"), "w", encoding="utf-8") as f:
        json.dump(corpus.spec.to_dict(), f, indent=2, sort_keys=True)
    truth = {"bases": corpus.bases, "biases": corpus.biases}
    for name, lc in corpus.languages.items():
        truth[f"{name}/alpha"] = lc.alpha
        truth[f"{name}/embeddings"] = lc.embeddings
    np.savez(os.path.join(outdir, "truth.npz"), **truth)
    return manifests


# ---------------------------------------------------------------------------
# Exhaustive enumeration oracles.

MAX_FRAMES = 8
MAX_STATES = 12


def enumerate_paths(graph: DecodingGraph, llh):
    """All admissible state paths with their log scores (depth-first, ascending states)."""
    llh = np.asarray(llh, dtype=np.float64)
    T, n = llh.shape
    if T > MAX_FRAMES or n > MAX_STATES:
        raise ValueError(f"enumeration budget exceeded ({T} frames, {n} states)")
    trans = graph.transition_matrix()
    succ = [[j for j in range(n) if np.isfinite(trans[i, j])] for i in range(n)]
    paths = []

    def extend(path, score):
        t = len(path)
        if t == T:
            end = score + graph.log_exit[path[-1]]
            if np.isfinite(end):
                paths.append((tuple(path), end))
            return
        for j in succ[path[-1]]:
            extend(path + [j], score + trans[path[-1], j] + llh[t, j])

    for i in range(n):
        if np.isfinite(graph.log_init[i]):
            extend([i], graph.log_init[i] + llh[0, i])
    return paths


def brute_force_marginals(graph: DecodingGraph, llh):
    """Exact ``(posteriors, log_marginal)`` by summing over every path."""
    llh = np.asarray(llh, dtype=np.float64)
    paths = enumerate_paths(graph, llh)
    if not paths:
        raise ValueError("no admissible path")
    scores = np.array([s for _, s in paths])
    logz = logsumexp(scores)
    post = np.zeros(llh.shape)
    frames = np.arange(llh.shape[0])
    for (path, _), w in zip(paths, np.exp(scores - logz)):
        post[frames, list(path)] += w
    return post, float(logz)


def brute_force_best_path(graph: DecodingGraph, llh):
    """Exact ``(best_path, score)``."""
    paths = enumerate_paths(graph, llh)
    if not paths:
        raise ValueError("no admissible path")
    best = max(range(len(paths)), key=lambda k: paths[k][1])
    return np.array(paths[best][0]), float(paths[best][1])
