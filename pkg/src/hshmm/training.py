"""Two-stage variational EM training and decoding drivers.

Stage 1 (:func:`train_supervised`) fits the hyper-subspace and the source
languages on forced-alignment graphs. Stage 2 (:func:`train_unsupervised`)
keeps the hyper-subspace posterior fixed and fits the target language's
embeddings and stick-breaking weights on a phone loop.

Each EM iteration draws one set of ``S`` noise vectors from a stream keyed by
``(seed, stage, iteration)`` (iteration 0 for every iteration when common
random numbers are on). The same draws serve the E-step and every M-step
gradient step, so the M-step objective is deterministic and the best iterate
is kept.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .decode import UnitTranscription, path_to_units, viterbi
from .errors import DataError, DimensionMismatchError, InfeasibleAlignmentError
from .inference import (
    AdamState,
    ElboReport,
    PosteriorSet,
    SufficientStats,
    accumulate_stats,
    adam_step,
    empirical_elbo,
    expected_log_likelihoods,
    forward_backward,
    frame_responsibilities,
    posterior_samples,
)
from .model import (
    DecodingGraph,
    ParamLayout,
    PhoneLoop,
    build_alignment_graph,
    build_phone_loop_graph,
    stick_breaking_expected_log_weights,
    update_stick_breaking,
)
from .subspace import (
    HyperSubspace,
    LanguageParams,
    PriorConfig,
    init_language,
    init_posteriors,
)

logger = logging.getLogger(__name__)

STAGE_CODES = {"supervised": 1, "unsupervised": 2}


@dataclass
class Utterance:
    utterance_id: str
    features: np.ndarray
    tokens: list | None = None

    def __post_init__(self):
        self.features = np.asarray(getattr(self.features, "frames", self.features),
                                   dtype=np.float64)

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]


@dataclass
class Checkpoint:
    """Everything needed to resume training or decode."""

    layout: ParamLayout
    hyper: HyperSubspace
    languages: dict
    config: RunConfig
    sticks: dict = field(default_factory=dict)
    stage: str = "supervised"
    target: str | None = None
    iteration: int = 0
    adam: AdamState | None = None
    history: list = field(default_factory=list)


def priors_from(config: RunConfig) -> PriorConfig:
    return PriorConfig(config.sigma_alpha, config.sigma_M, config.sigma_m, config.sigma_e)


def layout_from(config: RunConfig) -> ParamLayout:
    return ParamLayout(config.feature_dim, config.n_states, config.n_components)


def iteration_noise(post: PosteriorSet, config: RunConfig, stage: str, iteration: int):
    it = 0 if config.common_random_numbers else iteration
    rng = np.random.default_rng([config.seed, STAGE_CODES[stage], it])
    return post.draw_noise(rng, config.n_samples)


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def e_step(post: PosteriorSet, language: str, utterances, graphs, layout: ParamLayout,
           eps, config: RunConfig):
    """Statistics and summed log marginals for one language.

    Utterances whose graph admits no path are skipped with a warning.
    Results are reduced in utterance order regardless of thread count.
    """
    samples = posterior_samples(post, language, layout, eps, config.strict)
    n_units = post.languages[language].n_units

    def work(i):
        utt, graph = utterances[i], graphs[i]
        ell = expected_log_likelihoods(samples, utt.features, with_state=False)
        try:
            gamma, logz, entries = forward_backward(graph, graph.gather(ell.bound),
                                                    return_entries=True)
        except InfeasibleAlignmentError:
            return None
        counts = np.zeros(n_units)
        counts[:entries.size] = entries
        resp = frame_responsibilities(graph, gamma, ell, layout, n_units)
        return accumulate_stats(resp, utt.features, counts), logz

    stats = SufficientStats.zeros(n_units, layout)
    total = 0.0
    for utt, res in zip(utterances, _map(work, range(len(utterances)), config.threads)):
        if res is None:
            logger.warning("%s: infeasible alignment, skipped", utt.utterance_id)
            continue
        stats = stats + res[0]
        total += res[1]
    return stats, total


def kl_terms(post: PosteriorSet, priors: PriorConfig):
    mean, logvar = post.flat()
    s2 = post.prior_sigmas(priors) ** 2
    kl = 0.5 * (mean ** 2 / s2 + np.exp(logvar) / s2 - 1.0 - logvar + np.log(s2))
    n_hyper = post.offsets[2]
    return float(kl[n_hyper:].sum()), float(kl[:n_hyper].sum())


def m_step(post: PosteriorSet, stats: dict, layout: ParamLayout, priors: PriorConfig, eps,
           adam: AdamState, mask, config: RunConfig, kl_sticks: float = 0.0):
    """Adam ascent on the Monte-Carlo ELBO; keeps the best iterate.

    Only flat entries selected by ``mask`` move. Returns the Adam state and the
    best objective value.
    """
    mean, logvar = post.flat()
    n = mean.size
    params = np.concatenate([mean, logvar])
    full_mask = np.concatenate([mask, mask])
    sigmas = post.prior_sigmas(priors)
    best_val, best = -np.inf, params.copy()
    for step in range(config.gradient_steps + 1):
        report, g_mean, g_logvar = empirical_elbo(
            stats, post, layout, priors, eps, params[:n], params[n:],
            strict=config.strict, sigmas=sigmas, kl_sticks=kl_sticks)
        if report.total > best_val:
            best_val, best = report.total, params.copy()
        if step == config.gradient_steps:
            break
        grads = np.concatenate([g_mean, g_logvar])[full_mask]
        params[full_mask], adam = adam_step(params[full_mask], grads, adam, config.learning_rate)
    post.set_flat(best[:n], best[n:])
    return adam, best_val


def _report(iteration, llh: dict, kl_theta, kl_M, kl_sticks=0.0) -> ElboReport:
    total = sum(llh.values()) - kl_theta - kl_M - kl_sticks
    return ElboReport(total=total, llh=dict(llh), kl_theta=kl_theta, kl_M=kl_M,
                      kl_sticks=kl_sticks, iteration=iteration)


def _emit(report: ElboReport, history: list, log, started: float):
    rec = report.as_dict()
    rec["wall_time"] = time.perf_counter() - started
    if history and history[-1]["iteration"] == rec["iteration"]:
        history.pop()       # a resumed run re-evaluates the last iterate
    history.append(rec)
    logger.info("iteration %d elbo %.6g", report.iteration, report.total)
    if log is not None:
        log(rec)


# ---------------------------------------------------------------------------
# Stage 1.

def phone_inventory(utterances) -> list[str]:
    return sorted({tok for u in utterances for tok in (u.tokens or [])})


def train_supervised(corpora: dict, config: RunConfig, checkpoint: Checkpoint | None = None,
                     log=None, iterations: int | None = None) -> Checkpoint:
    """Fit the hyper-subspace and source-language posteriors on forced alignments.

    ``corpora`` maps language names to lists of :class:`Utterance` with
    tokens. Passing a stage-1 ``checkpoint`` resumes at its iteration.
    """
    corpora = {lang: list(utts) for lang, utts in corpora.items()}
    if not corpora or not any(corpora.values()):
        raise DataError("empty corpus")
    layout = layout_from(config)
    for lang, utts in corpora.items():
        for u in utts:
            if u.features.shape[1] != layout.feature_dim:
                raise DimensionMismatchError(
                    f"{u.utterance_id}: feature dim {u.features.shape[1]} != {layout.feature_dim}")
            if not u.tokens:
                raise DataError(f"{lang}/{u.utterance_id}: missing transcript")

    if checkpoint is None:
        inventories = {lang: phone_inventory(utts) for lang, utts in corpora.items()}
        hyper, langs = init_posteriors(config.seed, layout, config.embedding_dim, config.n_hyper,
                                       inventories, config.init_scale, config.init_logvar)
        checkpoint = Checkpoint(layout, hyper, langs, config, stage="supervised")
    elif checkpoint.stage != "supervised":
        raise DataError("can only resume stage 1 from a stage-1 checkpoint")

    post = PosteriorSet(checkpoint.hyper, checkpoint.languages)
    priors = priors_from(config)
    graphs, kept = {}, {}
    for lang, utts in corpora.items():
        lp = checkpoint.languages[lang]
        token_to_unit = {tok: i for i, tok in enumerate(lp.units)}
        graphs[lang], kept[lang] = [], []
        for u in utts:
            if u.n_frames < layout.n_states * len(u.tokens):
                logger.warning("%s: infeasible alignment (%d frames for %d tokens), skipped",
                               u.utterance_id, u.n_frames, len(u.tokens))
                continue
            graphs[lang].append(build_alignment_graph(u.tokens, token_to_unit, layout))
            kept[lang].append(u)
    if not any(kept.values()):
        raise DataError("no utterance admits a forced alignment")

    mask = np.ones(post.size, dtype=bool)
    adam = checkpoint.adam or AdamState.zeros(2 * post.size)
    n_iter = config.supervised_iterations if iterations is None else iterations
    started = time.perf_counter()
    for it in range(checkpoint.iteration, n_iter + 1):
        eps = iteration_noise(post, config, "supervised", it)
        stats, llh = {}, {}
        for lang in corpora:
            stats[lang], llh[lang] = e_step(post, lang, kept[lang], graphs[lang], layout, eps, config)
        kl_theta, kl_M = kl_terms(post, priors)
        _emit(_report(it, llh, kl_theta, kl_M), checkpoint.history, log, started)
        if it == n_iter:
            break
        adam, _ = m_step(post, stats, layout, priors, eps, adam, mask, config)
        checkpoint.iteration = it + 1
        checkpoint.adam = adam
    return checkpoint


# ---------------------------------------------------------------------------
# Stage 2.

def target_posterior_set(checkpoint: Checkpoint, target: str) -> PosteriorSet:
    return PosteriorSet(checkpoint.hyper, {target: checkpoint.languages[target]})


def train_unsupervised(target_utterances, checkpoint: Checkpoint, config: RunConfig,
                       target: str = "target", log=None,
                       iterations: int | None = None) -> Checkpoint:
    """Discover units on untranscribed data with the hyper-subspace frozen.

    A stage-1 checkpoint starts a new target language; a stage-2 checkpoint
    for the same target resumes.
    """
    utts = list(target_utterances)
    if not utts:
        raise DataError("empty corpus")
    layout = checkpoint.layout
    for u in utts:
        if u.features.shape[1] != layout.feature_dim:
            raise DimensionMismatchError(
                f"{u.utterance_id}: feature dim {u.features.shape[1]} does not match the "
                f"checkpoint ({layout.feature_dim})")

    if checkpoint.stage == "unsupervised" and checkpoint.target == target:
        start = checkpoint.iteration
    else:
        if target in checkpoint.languages:
            raise DataError(f"language {target!r} already exists in the checkpoint")
        lang = init_language([config.seed, STAGE_CODES["unsupervised"]], checkpoint.hyper.n_hyper,
                             checkpoint.hyper.embedding_dim, config.n_units,
                             config.init_scale, config.init_logvar)
        rng = np.random.default_rng([config.seed, 99])
        lang.embeddings.mean = config.unit_init_scale * rng.standard_normal(lang.embeddings.shape)
        checkpoint = Checkpoint(layout, checkpoint.hyper, {**checkpoint.languages, target: lang},
                                config, sticks={**checkpoint.sticks,
                                                target: PhoneLoop.prior(config.n_units,
                                                                        config.concentration)},
                                stage="unsupervised", target=target, iteration=0, adam=None,
                                history=[])
        start = 0

    post = target_posterior_set(checkpoint, target)
    priors = priors_from(config)
    mask = post.mask(["lang/"])
    adam = checkpoint.adam or AdamState.zeros(2 * int(mask.sum()))
    n_iter = config.unsupervised_iterations if iterations is None else iterations
    n_units = checkpoint.languages[target].n_units
    started = time.perf_counter()
    for it in range(start, n_iter + 1):
        eps = iteration_noise(post, config, "unsupervised", it)
        loop = checkpoint.sticks[target]
        graph = build_phone_loop_graph(n_units, layout, stick_breaking_expected_log_weights(loop))
        stats, llh = e_step(post, target, utts, [graph] * len(utts), layout, eps, config)
        kl_theta, kl_M = kl_terms(post, priors)
        _emit(_report(it, {target: llh}, kl_theta, kl_M, loop.kl_divergence()),
              checkpoint.history, log, started)
        if it == n_iter:
            break
        loop = update_stick_breaking(loop, stats.unit_counts)
        checkpoint.sticks[target] = loop
        adam, _ = m_step(post, {target: stats}, layout, priors, eps, adam, mask, config,
                         kl_sticks=loop.kl_divergence())
        checkpoint.iteration = it + 1
        checkpoint.adam = adam
    return checkpoint


# ---------------------------------------------------------------------------
# Decoding.

def decoding_graph(checkpoint: Checkpoint, language: str) -> DecodingGraph:
    n_units = checkpoint.languages[language].n_units
    if language in checkpoint.sticks:
        logw = stick_breaking_expected_log_weights(checkpoint.sticks[language])
    else:
        logw = np.full(n_units, -np.log(n_units))
    return build_phone_loop_graph(n_units, checkpoint.layout, logw)


def decode_corpus(checkpoint: Checkpoint, utterances, language: str | None = None,
                  config: RunConfig | None = None) -> dict[str, UnitTranscription]:
    """Viterbi unit transcriptions using expected log-likelihoods under fixed draws."""
    config = config or checkpoint.config
    language = language or checkpoint.target
    if language not in checkpoint.languages:
        raise DataError(f"no language {language!r} in checkpoint")
    layout = checkpoint.layout
    post = target_posterior_set(checkpoint, language)
    eps = post.draw_noise(np.random.default_rng(config.decode_seed), config.n_samples)
    samples = posterior_samples(post, language, layout, eps, config.strict)
    graph = decoding_graph(checkpoint, language)

    def work(utt):
        if utt.features.shape[1] != layout.feature_dim:
            raise DimensionMismatchError(f"{utt.utterance_id}: feature dim mismatch")
        ell = expected_log_likelihoods(samples, utt.features)
        path, _ = viterbi(graph, graph.gather(ell.state))
        return path_to_units(path, graph, config.frame_shift_ms, utt.utterance_id)

    return {u.utterance_id: t for u, t in zip(utterances, _map(work, utterances, config.threads))}
