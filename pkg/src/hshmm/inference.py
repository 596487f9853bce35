"""Variational EM building blocks.

E-step: sample-averaged emission log-likelihoods, log-domain forward-backward
over a :class:`~hshmm.model.DecodingGraph`, per-component responsibilities
and sufficient statistics.

M-step: the Monte-Carlo ELBO over reparameterized posterior samples and its
exact gradient w.r.t. every posterior mean and log-variance, followed by Adam
ascent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DataError, DimensionMismatchError, InfeasibleAlignmentError, NumericalError
from .model import DecodingGraph, EtaBlocks, GaussianParams, ParamLayout, pack_eta, unpack_eta
from .subspace import (
    HyperSubspace,
    LanguageParams,
    PriorConfig,
    VariationalGaussian,
    blocks_to_params,
    clamp_log_cov,
    compose_subspace,
    log_softmax_weights,
)

LOG_2PI = np.log(2.0 * np.pi)


def logsumexp(x, axis=None, keepdims=False):
    """Log-sum-exp that returns ``-inf`` for all ``-inf`` input without warnings."""
    x = np.asarray(x)
    mx = np.max(x, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - safe), axis=axis, keepdims=True)) + safe
    return out if keepdims else np.squeeze(out, axis=axis) if axis is not None else out.item()


# ---------------------------------------------------------------------------
# Posterior container with a flat view.

class PosteriorSet:
    """Hyper-subspace plus language posteriors, viewable as one flat ``(mean, logvar)``.

    Block order is fixed: bases, biases, then per language (insertion order)
    alpha and unit embeddings.
    """

    def __init__(self, hyper: HyperSubspace, languages: dict[str, LanguageParams]):
        self.hyper = hyper
        self.languages = dict(languages)
        self._index()

    def _index(self):
        self.names, self.shapes, self.offsets = [], [], [0]
        for name, q in self.blocks():
            self.names.append(name)
            self.shapes.append(q.shape)
            self.offsets.append(self.offsets[-1] + q.mean.size)

    def blocks(self):
        yield "hyper/bases", self.hyper.bases
        yield "hyper/biases", self.hyper.biases
        for lang, lp in self.languages.items():
            yield f"lang/{lang}/alpha", lp.alpha
            yield f"lang/{lang}/embeddings", lp.embeddings

    @property
    def size(self) -> int:
        return self.offsets[-1]

    def split(self, vec) -> dict[str, np.ndarray]:
        return {name: vec[self.offsets[i]:self.offsets[i + 1]].reshape(self.shapes[i])
                for i, name in enumerate(self.names)}

    def flat(self):
        blocks = [q for _, q in self.blocks()]
        return (np.concatenate([q.mean.ravel() for q in blocks]),
                np.concatenate([q.logvar.ravel() for q in blocks]))

    def set_flat(self, mean, logvar) -> None:
        means, logvars = self.split(mean), self.split(logvar)
        for name, q in self.blocks():
            q.mean = means[name].copy()
            q.logvar = logvars[name].copy()

    def mask(self, prefixes) -> np.ndarray:
        """Boolean flat mask selecting the blocks whose name starts with any prefix."""
        out = np.zeros(self.size, dtype=bool)
        for i, name in enumerate(self.names):
            if any(name.startswith(p) for p in prefixes):
                out[self.offsets[i]:self.offsets[i + 1]] = True
        return out

    def prior_sigmas(self, priors: PriorConfig) -> np.ndarray:
        sig = np.empty(self.size)
        for i, name in enumerate(self.names):
            if name == "hyper/bases":
                s = priors.sigma_M
            elif name == "hyper/biases":
                s = priors.sigma_m
            elif name.endswith("/alpha"):
                s = priors.sigma_alpha
            else:
                s = priors.sigma_e
            sig[self.offsets[i]:self.offsets[i + 1]] = s
        return sig

    def draw_noise(self, rng: np.random.Generator, n_samples: int) -> np.ndarray:
        return rng.standard_normal((n_samples, self.size))

    def sample(self, eps, mean=None, logvar=None) -> dict[str, np.ndarray]:
        if mean is None:
            mean, logvar = self.flat()
        return self.split(mean + np.exp(0.5 * logvar) * eps)


def language_params_sample(theta: dict, language: str, layout: ParamLayout,
                           strict: bool = False) -> GaussianParams:
    """Decode one language's unit GMMs from a flat-sample dictionary."""
    W, b = compose_subspace(theta["hyper/bases"], theta["hyper/biases"],
                            theta[f"lang/{language}/alpha"])
    e = theta[f"lang/{language}/embeddings"]
    eta = e @ W.T + b[layout.bias_index]
    return blocks_to_params(unpack_eta(eta, layout), strict)


def posterior_samples(post: PosteriorSet, language: str, layout: ParamLayout, eps,
                      strict: bool = False) -> list[GaussianParams]:
    mean, logvar = post.flat()
    return [language_params_sample(post.sample(e, mean, logvar), language, layout, strict)
            for e in np.atleast_2d(eps)]


# ---------------------------------------------------------------------------
# Expected log-likelihoods.

class ExpectedLLH(NamedTuple):
    """Per-frame emission scores for every (unit, state) pair.

    ``state[n, u * n_states + i]`` averages the log GMM density over the
    posterior samples. ``component[n, u * n_states + i, j]`` averages
    ``ln pi_j + ln N(x_n; mu_j, Sigma_j)``; :attr:`bound` is its log-sum over
    components, the variational lower bound on ``state`` used by the E-step.
    """

    state: np.ndarray | None
    component: np.ndarray

    @property
    def bound(self) -> np.ndarray:
        return _lse_last(self.component)

    def component_responsibilities(self) -> np.ndarray:
        c = self.component
        r = np.exp(c - c.max(axis=-1, keepdims=True))
        return r / r.sum(axis=-1, keepdims=True)


def _lse_last(x):
    """Log-sum-exp over the last axis for arrays with a finite maximum."""
    mx = x.max(axis=-1)
    return mx + np.log(np.exp(x - mx[..., None]).sum(axis=-1))


def _stack_samples(samples):
    shape = samples[0].means.shape
    for p in samples:
        if p.means.shape != shape:
            raise DimensionMismatchError("parameter samples do not share a layout")
    U, S, K, D = shape
    mu = np.stack([p.means.reshape(U * S, K, D) for p in samples])
    var = np.stack([p.variances.reshape(U * S, K, D) for p in samples])
    logw = np.stack([p.log_weights().reshape(U * S, K) for p in samples])
    return mu, var, logw


def component_log_joint(params, x) -> np.ndarray:
    """``ln pi + ln N(x; mu, Sigma)``.

    A single :class:`GaussianParams` gives shape ``(n_frames, U * n_states, K)``;
    a list of them adds a sample axis after the frame axis.
    """
    single = isinstance(params, GaussianParams)
    mu, var, logw = _stack_samples([params] if single else list(params))
    D = mu.shape[-1]
    prec = 1.0 / var
    diff2 = (x[:, None, None, None, :] - mu[None]) ** 2
    quad = np.einsum("nsckd,sckd->nsck", diff2, prec)
    lognorm = -0.5 * (D * LOG_2PI + np.log(var).sum(-1))
    out = (logw + lognorm)[None] - 0.5 * quad
    return out[:, 0] if single else out


def expected_log_likelihoods(samples, features, with_state: bool = True) -> ExpectedLLH:
    """Average the emission log-likelihoods of ``features`` over posterior samples."""
    if isinstance(samples, GaussianParams):
        samples = [samples]
    if len(samples) < 1:
        raise ValueError("need at least one parameter sample")
    x = np.asarray(getattr(features, "frames", features), dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite feature values")
    if x.ndim != 2 or x.shape[1] != samples[0].means.shape[-1]:
        raise DimensionMismatchError(
            f"feature dim {x.shape[-1]} != model dim {samples[0].means.shape[-1]}")
    lj = component_log_joint(list(samples), x)
    state = _lse_last(lj).mean(axis=1) if with_state else None
    return ExpectedLLH(state, lj.mean(axis=1))


# ---------------------------------------------------------------------------
# Forward-backward.

class _ArcIndex:
    """Arc groupings for vectorized segment reductions."""

    def __init__(self, graph: DecodingGraph):
        self.src, self.dst, self.logp = graph.arc_src, graph.arc_dst, graph.arc_logp
        # Arcs arrive sorted by (dst, src).
        if self.dst.size:
            self.dst_starts = np.flatnonzero(np.r_[True, self.dst[1:] != self.dst[:-1]])
            self.dst_ids = self.dst[self.dst_starts]
            order = np.lexsort((self.dst, self.src))
            self.b_src, self.b_dst, self.b_logp = self.src[order], self.dst[order], self.logp[order]
            self.src_starts = np.flatnonzero(np.r_[True, self.b_src[1:] != self.b_src[:-1]])
            self.src_ids = self.b_src[self.src_starts]


def _check_llh(graph, llh):
    llh = np.asarray(llh, dtype=np.float64)
    if llh.ndim != 2 or llh.shape[1] != graph.n_states:
        raise DimensionMismatchError(
            f"llh must be n_frames x {graph.n_states}, got {llh.shape}")
    if llh.shape[0] < 1:
        raise DataError("need at least one frame")
    if np.any(np.isnan(llh)) or np.any(llh == np.inf):
        raise NumericalError("llh contains NaN or +inf")
    return llh


def forward_backward(graph: DecodingGraph, llh, return_entries: bool = False):
    """State posteriors and log marginal likelihood of ``llh`` under ``graph``.

    Returns ``(posteriors, log_marginal)``; with ``return_entries`` also the
    expected number of entries into each unit (indexed by unit id).
    """
    llh = _check_llh(graph, llh)
    T, n = llh.shape
    arcs = _ArcIndex(graph)
    hub = graph.hub_out is not None
    log_exit = graph.log_exit

    alpha = np.empty((T, n))
    hubs = np.full(T, -np.inf)
    alpha[0] = graph.log_init + llh[0]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = np.full(n, -np.inf)
        if arcs.dst.size:
            acc[arcs.dst_ids] = np.logaddexp.reduceat(prev[arcs.src] + arcs.logp, arcs.dst_starts)
        if hub:
            hubs[t - 1] = logsumexp(prev + log_exit)
            acc = np.logaddexp(acc, hubs[t - 1] + graph.hub_out)
        alpha[t] = acc + llh[t]
    log_marginal = logsumexp(alpha[-1] + log_exit)
    if not np.isfinite(log_marginal):
        raise InfeasibleAlignmentError("infeasible alignment: no admissible path")

    beta = np.empty((T, n))
    beta[-1] = log_exit
    for t in range(T - 2, -1, -1):
        nxt = llh[t + 1] + beta[t + 1]
        acc = np.full(n, -np.inf)
        if arcs.dst.size:
            acc[arcs.src_ids] = np.logaddexp.reduceat(arcs.b_logp + nxt[arcs.b_dst], arcs.src_starts)
        if hub:
            acc = np.logaddexp(acc, log_exit + logsumexp(graph.hub_out + nxt))
        beta[t] = acc

    posteriors = np.exp(alpha + beta - log_marginal)
    if not return_entries:
        return posteriors, log_marginal

    n_units = int(graph.units.max()) + 1
    entries = np.zeros(n_units)
    first = np.exp(graph.log_init + llh[0] + beta[0] - log_marginal)
    np.add.at(entries, graph.units, first)
    if hub and T > 1:
        inner = hubs[:-1, None] + graph.hub_out[None, :] + llh[1:] + beta[1:] - log_marginal
        np.add.at(entries, graph.units, np.exp(inner).sum(axis=0))
    return posteriors, log_marginal, entries


# ---------------------------------------------------------------------------
# Sufficient statistics.

@dataclass
class SufficientStats:
    """Per-component zeroth, first and (diagonal) second order statistics.

    ``zeroth`` has shape ``(U, n_states, K)``; ``first`` and ``second`` add a
    trailing feature axis. ``unit_counts`` holds expected unit entries.
    """

    zeroth: np.ndarray
    first: np.ndarray
    second: np.ndarray
    unit_counts: np.ndarray = None

    def __post_init__(self):
        if self.unit_counts is None:
            self.unit_counts = np.zeros(self.zeroth.shape[0])

    @classmethod
    def zeros(cls, n_units: int, layout: ParamLayout) -> "SufficientStats":
        s, k, d = layout.n_states, layout.n_components, layout.feature_dim
        return cls(np.zeros((n_units, s, k)), np.zeros((n_units, s, k, d)),
                   np.zeros((n_units, s, k, d)), np.zeros(n_units))

    def __add__(self, other: "SufficientStats") -> "SufficientStats":
        return SufficientStats(self.zeroth + other.zeroth, self.first + other.first,
                               self.second + other.second, self.unit_counts + other.unit_counts)

    merge = __add__


def accumulate_stats(responsibilities, features, unit_counts=None) -> SufficientStats:
    """Statistics from responsibilities of shape ``(n_frames, U, n_states, K)``."""
    gamma = np.asarray(responsibilities, dtype=np.float64)
    x = np.asarray(getattr(features, "frames", features), dtype=np.float64)
    if gamma.ndim != 4 or gamma.shape[0] != x.shape[0]:
        raise DimensionMismatchError("responsibilities must be (n_frames, U, n_states, K)")
    if np.any(gamma < 0):
        raise DataError("negative responsibility")
    U = gamma.shape[1]
    flat = gamma.reshape(gamma.shape[0], -1)
    zeroth = flat.sum(axis=0).reshape(gamma.shape[1:])
    first = (flat.T @ x).reshape(gamma.shape[1:] + (x.shape[1],))
    second = (flat.T @ (x * x)).reshape(gamma.shape[1:] + (x.shape[1],))
    counts = np.zeros(U) if unit_counts is None else np.asarray(unit_counts, dtype=np.float64)
    return SufficientStats(zeroth, first, second, counts)


def frame_responsibilities(graph: DecodingGraph, posteriors, ell: ExpectedLLH,
                           layout: ParamLayout, n_units: int) -> np.ndarray:
    """Per-frame component responsibilities, shape ``(n_frames, U, n_states, K)``."""
    T = posteriors.shape[0]
    table = np.zeros((T, n_units * layout.n_states))
    np.add.at(table, (slice(None), graph.emissions), posteriors)
    resp = table[:, :, None] * ell.component_responsibilities()
    return resp.reshape(T, n_units, layout.n_states, layout.n_components)


# ---------------------------------------------------------------------------
# Empirical ELBO and its gradient.

@dataclass
class ElboReport:
    total: float
    llh: dict = field(default_factory=dict)
    kl_theta: float = 0.0
    kl_M: float = 0.0
    kl_sticks: float = 0.0
    iteration: int = 0

    def parts_sum(self) -> float:
        return sum(self.llh.values()) - self.kl_theta - self.kl_M - self.kl_sticks

    def as_dict(self) -> dict:
        return {"iteration": self.iteration, "elbo": self.total, "llh": dict(self.llh),
                "kl_theta": self.kl_theta, "kl_M": self.kl_M, "kl_sticks": self.kl_sticks}


def gaussian_data_term(blocks: EtaBlocks, stats: SufficientStats, strict: bool = False):
    """Expected complete-data log-likelihood of the statistics and its gradient.

    With ``Lambda = exp(-log_cov)`` and ``mu = exp(log_cov) * mean``, each
    component contributes::

        N (ln pi - 1/2 sum(log_cov) - 1/2 mu' Lambda mu - D/2 ln 2 pi)
        + phi' Lambda mu - 1/2 sum(Phi * Lambda)

    Returns ``(value, EtaBlocks of gradients)``.
    """
    hmu, hcov, logits = blocks
    hcov, inside = clamp_log_cov(hcov, strict)
    var = np.exp(hcov)
    prec = np.exp(-hcov)
    logw = log_softmax_weights(logits)
    N, phi, Phi = stats.zeroth, stats.first, stats.second
    D = hmu.shape[-1]
    hmu2var = hmu * hmu * var
    per_comp = (N * (logw - 0.5 * hcov.sum(-1) - 0.5 * hmu2var.sum(-1) - 0.5 * D * LOG_2PI)
                + (phi * hmu).sum(-1) - 0.5 * (Phi * prec).sum(-1))
    if not np.all(np.isfinite(per_comp)):
        idx = tuple(int(i) for i in np.argwhere(~np.isfinite(per_comp))[0])
        raise NumericalError(f"non-finite ELBO term at component index {idx}")
    Nd = N[..., None]
    g_mean = phi - Nd * hmu * var
    g_cov = np.where(inside, 0.5 * (Phi * prec - Nd - Nd * hmu2var), 0.0)
    g_logits = (N - N.sum(-1, keepdims=True) * np.exp(logw))[..., :-1]
    return float(per_comp.sum()), EtaBlocks(g_mean, g_cov, g_logits)


def empirical_elbo(stats: dict, post: PosteriorSet, layout: ParamLayout, priors: PriorConfig,
                   eps, mean=None, logvar=None, strict: bool = False,
                   sigmas=None, kl_sticks: float = 0.0):
    """Monte-Carlo ELBO over the samples ``mean + exp(logvar/2) * eps[s]``.

    ``stats`` maps language name to :class:`SufficientStats`. Returns
    ``(ElboReport, grad_mean, grad_logvar)``, gradients as flat vectors in
    :class:`PosteriorSet` order.
    """
    if mean is None:
        mean, logvar = post.flat()
    eps = np.atleast_2d(eps)
    S = eps.shape[0]
    if S < 1 or eps.shape[1] != post.size:
        raise DimensionMismatchError(f"noise must be (S, {post.size})")
    if sigmas is None:
        sigmas = post.prior_sigmas(priors)
    std = np.exp(0.5 * logvar)
    bidx = layout.bias_index
    off = dict(zip(post.names, zip(post.offsets[:-1], post.offsets[1:])))

    llh = {lang: 0.0 for lang in stats}
    g_theta_sum = np.zeros(post.size)
    g_logvar = np.zeros(post.size)
    for s in range(S):
        theta_flat = mean + std * eps[s]
        theta = post.split(theta_flat)
        M, m = theta["hyper/bases"], theta["hyper/biases"]
        g = np.zeros(post.size)
        gM = g[slice(*off["hyper/bases"])].reshape(M.shape)
        gm = g[slice(*off["hyper/biases"])].reshape(m.shape)
        for lang, st in stats.items():
            alpha = theta[f"lang/{lang}/alpha"]
            e = theta[f"lang/{lang}/embeddings"]
            W, b = compose_subspace(M, m, alpha)
            eta = e @ W.T + b[bidx]
            value, gblocks = gaussian_data_term(unpack_eta(eta, layout), st, strict)
            llh[lang] += value / S
            g_eta = pack_eta(gblocks, layout)
            gW = g_eta.T @ e
            gb = np.bincount(bidx, weights=g_eta.sum(axis=0), minlength=layout.bias_size)
            g[slice(*off[f"lang/{lang}/embeddings"])] = (g_eta @ W).ravel()
            g[slice(*off[f"lang/{lang}/alpha"])] = (
                np.tensordot(M[1:], gW, axes=([1, 2], [0, 1])) + m[1:] @ gb)
            gM[0] += gW
            gM[1:] += alpha[:, None, None] * gW[None]
            gm[0] += gb
            gm[1:] += alpha[:, None] * gb[None]
        g_theta_sum += g
        g_logvar += g * 0.5 * std * eps[s]
    g_mean = g_theta_sum / S
    g_logvar /= S

    s2 = sigmas * sigmas
    var = np.exp(logvar)
    kl = 0.5 * (mean ** 2 / s2 + var / s2 - 1.0 - logvar + np.log(s2))
    hyper_mask = np.zeros(post.size, dtype=bool)
    hyper_mask[off["hyper/bases"][0]:off["hyper/biases"][1]] = True
    kl_M = float(kl[hyper_mask].sum())
    kl_theta = float(kl[~hyper_mask].sum())
    g_mean -= mean / s2
    g_logvar -= 0.5 * (var / s2 - 1.0)

    total = sum(llh.values()) - kl_theta - kl_M - kl_sticks
    if not np.isfinite(total):
        raise NumericalError("non-finite ELBO")
    report = ElboReport(total=total, llh=llh, kl_theta=kl_theta, kl_M=kl_M, kl_sticks=kl_sticks)
    return report, g_mean, g_logvar


# ---------------------------------------------------------------------------
# Adam (ascent).

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state: AdamState, lr: float = 5e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam step in the gradient (ascent) direction."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise DimensionMismatchError("Adam parameter, gradient and state shapes differ")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    return params + lr * mhat / (np.sqrt(vhat) + eps), AdamState(m, v, t)
