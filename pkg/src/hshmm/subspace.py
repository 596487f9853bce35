"""Hierarchical subspace: Gaussian posteriors, composition and the map to GMM parameters.

A language ``lam`` owns an embedding ``alpha`` (length ``K_h``) and one
embedding per unit (length ``E``). Its subspace is composed from the shared
bases::

    W = M[0] + sum_k alpha[k] * M[k + 1]        (P x E)
    b = m[0] + sum_k alpha[k] * m[k + 1]        (bias_size)

and unit ``u`` gets ``eta = W @ e_u + b[bias_index]`` which :func:`decode_blocks`
turns into mixture weights, diagonal covariances and means.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, NumericalError
from .model import EtaBlocks, GaussianParams, ParamLayout, unpack_eta

LOG_VAR_MIN = np.log(1e-8)
LOG_VAR_MAX = np.log(1e8)
DEFAULT_INIT_LOGVAR = np.log(1e-2)


@dataclass
class VariationalGaussian:
    """Diagonal Gaussian with mean ``mean`` and log-variance ``logvar``."""

    mean: np.ndarray
    logvar: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.logvar = np.asarray(self.logvar, dtype=np.float64)
        if self.mean.shape != self.logvar.shape:
            raise DimensionMismatchError(
                f"mean shape {self.mean.shape} != log-variance shape {self.logvar.shape}")

    @property
    def shape(self):
        return self.mean.shape

    @property
    def variance(self) -> np.ndarray:
        return np.exp(self.logvar)

    def copy(self) -> "VariationalGaussian":
        return VariationalGaussian(self.mean.copy(), self.logvar.copy())


def sample_posterior(q: VariationalGaussian, eps) -> np.ndarray:
    """Reparameterized draw ``mean + exp(logvar / 2) * eps``."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != q.mean.shape:
        raise DimensionMismatchError(f"noise shape {eps.shape} != posterior shape {q.mean.shape}")
    return q.mean + np.exp(0.5 * q.logvar) * eps


def kl_diag_gaussian(q: VariationalGaussian, sigma: float = 1.0) -> float:
    """KL(q || N(0, sigma^2 I))."""
    if sigma <= 0:
        raise ValueError("prior standard deviation must be positive")
    s2 = sigma * sigma
    kl = 0.5 * (q.mean ** 2 / s2 + np.exp(q.logvar) / s2 - 1.0 - q.logvar + np.log(s2))
    return float(kl.sum())


def kl_diag_gaussian_grad(q: VariationalGaussian, sigma: float = 1.0):
    """Gradients of :func:`kl_diag_gaussian` w.r.t. ``(mean, logvar)``."""
    s2 = sigma * sigma
    return q.mean / s2, 0.5 * (np.exp(q.logvar) / s2 - 1.0)


@dataclass(frozen=True)
class PriorConfig:
    sigma_alpha: float = 1.0
    sigma_M: float = 1.0
    sigma_m: float = 1.0
    sigma_e: float = 1.0


@dataclass
class HyperSubspace:
    """Posteriors over bases ``M[0..K_h]`` (``P x E`` each) and biases ``m[0..K_h]``."""

    bases: VariationalGaussian
    biases: VariationalGaussian

    def __post_init__(self):
        if self.bases.mean.ndim != 3 or self.biases.mean.ndim != 2:
            raise DimensionMismatchError("bases must be (K_h+1, P, E), biases (K_h+1, bias_size)")
        if self.bases.shape[0] != self.biases.shape[0] or self.bases.shape[0] < 2:
            raise DimensionMismatchError("need K_h >= 1 and matching basis/bias counts")

    @property
    def n_hyper(self) -> int:
        return self.bases.shape[0] - 1

    @property
    def embedding_dim(self) -> int:
        return self.bases.shape[2]

    def copy(self) -> "HyperSubspace":
        return HyperSubspace(self.bases.copy(), self.biases.copy())


@dataclass
class LanguageParams:
    """Posteriors over one language's embedding and its unit embeddings."""

    alpha: VariationalGaussian
    embeddings: VariationalGaussian
    units: list = field(default_factory=list)

    def __post_init__(self):
        if self.alpha.mean.ndim != 1 or self.embeddings.mean.ndim != 2:
            raise DimensionMismatchError("alpha must be 1-d and embeddings (U, E)")
        if not self.units:
            self.units = [f"au{u}" for u in range(self.embeddings.shape[0])]
        if len(self.units) != self.embeddings.shape[0]:
            raise DimensionMismatchError("one unit label per embedding required")

    @property
    def n_units(self) -> int:
        return self.embeddings.shape[0]

    def copy(self) -> "LanguageParams":
        return LanguageParams(self.alpha.copy(), self.embeddings.copy(), list(self.units))


def compose_subspace(M, m, alpha):
    """Language subspace ``(W, b)`` from basis/bias samples and an ``alpha`` sample."""
    M = np.asarray(M, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if M.ndim != 3 or m.ndim != 2 or M.shape[0] != m.shape[0]:
        raise DimensionMismatchError("bases must be (K+1, P, E) and biases (K+1, Pb)")
    if alpha.shape != (M.shape[0] - 1,):
        raise DimensionMismatchError(f"alpha must have length {M.shape[0] - 1}")
    W = M[0] + np.tensordot(alpha, M[1:], axes=1)
    b = m[0] + alpha @ m[1:]
    return W, b


def unit_eta(W, b, e, layout: ParamLayout) -> np.ndarray:
    """``eta`` for every row of ``e`` (shape ``(U, E)`` or ``(E,)``)."""
    e = np.asarray(e, dtype=np.float64)
    if e.shape[-1] != W.shape[1]:
        raise DimensionMismatchError(f"embedding length {e.shape[-1]} != {W.shape[1]}")
    if W.shape[0] != layout.size or b.shape[-1] != layout.bias_size:
        raise DimensionMismatchError("subspace does not match the parameter layout")
    return e @ W.T + b[layout.bias_index]


def clamp_log_cov(log_cov, strict: bool = False):
    """Clamp log-covariances to ``[ln 1e-8, ln 1e8]``; ``strict`` raises instead."""
    bad = (log_cov < LOG_VAR_MIN) | (log_cov > LOG_VAR_MAX) | ~np.isfinite(log_cov)
    if strict and np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise NumericalError(f"covariance out of range at component index {idx}")
    if np.any(np.isnan(log_cov)):
        idx = tuple(int(i) for i in np.argwhere(np.isnan(log_cov))[0])
        raise NumericalError(f"non-finite covariance at component index {idx}")
    return np.clip(log_cov, LOG_VAR_MIN, LOG_VAR_MAX), ~bad


def log_softmax_weights(logits) -> np.ndarray:
    """Log mixture weights from ``K - 1`` free logits (last logit fixed to 0)."""
    full = np.concatenate([logits, np.zeros(logits.shape[:-1] + (1,))], axis=-1)
    mx = full.max(axis=-1, keepdims=True)
    return full - (mx + np.log(np.exp(full - mx).sum(axis=-1, keepdims=True)))


def blocks_to_params(blocks: EtaBlocks, strict: bool = False) -> GaussianParams:
    log_cov, _ = clamp_log_cov(blocks.log_cov, strict)
    variances = np.exp(log_cov)
    return GaussianParams(
        means=variances * blocks.mean,
        variances=variances,
        weights=np.exp(log_softmax_weights(blocks.logits)),
    )


def decode_unit_params(W, b, e, layout: ParamLayout, strict: bool = False) -> GaussianParams:
    """Apply ``f`` to ``W e + b``: softmax weights, exp covariances, scaled means."""
    e = np.atleast_2d(e)
    return blocks_to_params(unpack_eta(unit_eta(W, b, e, layout), layout), strict)


def params_to_blocks(params: GaussianParams) -> EtaBlocks:
    """Inverse of :func:`blocks_to_params`."""
    log_cov = np.log(params.variances)
    logw = np.log(params.weights)
    return EtaBlocks(params.means / params.variances, log_cov, logw[..., :-1] - logw[..., -1:])


def init_posteriors(seed, layout: ParamLayout, embedding_dim: int = 100, n_hyper: int = 6,
                    languages: dict | None = None, init_scale: float = 0.1,
                    init_logvar: float = DEFAULT_INIT_LOGVAR):
    """Random posteriors: means ~ N(0, init_scale^2), log-variances constant.

    ``languages`` maps a language name to its unit count or unit label list.
    Returns ``(HyperSubspace, {name: LanguageParams})``.
    """
    rng = np.random.default_rng(seed)
    languages = languages or {}
    P, Pb, E, K = layout.size, layout.bias_size, embedding_dim, n_hyper

    def vg(shape):
        return VariationalGaussian(init_scale * rng.standard_normal(shape),
                                   np.full(shape, float(init_logvar)))

    hyper = HyperSubspace(vg((K + 1, P, E)), vg((K + 1, Pb)))
    langs = {}
    for name in languages:
        spec = languages[name]
        labels = list(spec) if not isinstance(spec, (int, np.integer)) else []
        n_units = len(labels) if labels else int(spec)
        langs[name] = LanguageParams(vg((K,)), vg((n_units, E)), labels)
    return hyper, langs


def init_language(seed, n_hyper: int, embedding_dim: int, units, init_scale: float = 0.1,
                  init_logvar: float = DEFAULT_INIT_LOGVAR) -> LanguageParams:
    rng = np.random.default_rng(seed)
    labels = list(units) if not isinstance(units, (int, np.integer)) else []
    n_units = len(labels) if labels else int(units)
    alpha = VariationalGaussian(init_scale * rng.standard_normal(n_hyper),
                                np.full(n_hyper, float(init_logvar)))
    emb = VariationalGaussian(init_scale * rng.standard_normal((n_units, embedding_dim)),
                              np.full((n_units, embedding_dim), float(init_logvar)))
    return LanguageParams(alpha, emb, labels)
