"""HMM structures: parameter layout, GMM parameters, phone loop and decoding graphs.

Every acoustic unit is a left-to-right HMM (3 states by default) whose
states emit with a diagonal-covariance GMM. The per-unit parameter vector
``eta`` stacks, for each state, the ``K`` mean blocks, the ``K``
log-covariance blocks and ``K - 1`` weight logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import betaln, digamma

from .errors import DataError, DimensionMismatchError

SELF_LOOP_LOGP = np.log(0.5)
FORWARD_LOGP = np.log(0.5)


@dataclass(frozen=True)
class ParamLayout:
    """Index map between the flat vector ``eta`` and structured GMM/HMM blocks.

    ``size`` is the length of ``eta`` (rows of the subspace matrices).
    ``bias_size`` is the length of the bias vectors: biases are indexed per
    state only and shared by the state's mixture components, so each state
    contributes ``D`` mean-bias, ``D`` covariance-bias and ``K - 1`` logit
    entries. ``bias_index[p]`` gives the bias entry used by ``eta[p]``.
    """

    feature_dim: int
    n_states: int = 3
    n_components: int = 4

    def __post_init__(self):
        if min(self.feature_dim, self.n_states, self.n_components) < 1:
            raise ValueError("layout dimensions must be positive")

    @property
    def state_size(self) -> int:
        d, k = self.feature_dim, self.n_components
        return 2 * k * d + (k - 1)

    @property
    def size(self) -> int:
        return self.n_states * self.state_size

    @property
    def bias_state_size(self) -> int:
        return 2 * self.feature_dim + self.n_components - 1

    @property
    def bias_size(self) -> int:
        return self.n_states * self.bias_state_size

    @property
    def mean_slice(self) -> slice:
        return slice(0, self.n_components * self.feature_dim)

    @property
    def cov_slice(self) -> slice:
        kd = self.n_components * self.feature_dim
        return slice(kd, 2 * kd)

    @property
    def logit_slice(self) -> slice:
        kd = self.n_components * self.feature_dim
        return slice(2 * kd, 2 * kd + self.n_components - 1)

    @property
    def bias_index(self) -> np.ndarray:
        d, k = self.feature_dim, self.n_components
        per_state = np.concatenate([
            np.tile(np.arange(d), k),
            d + np.tile(np.arange(d), k),
            2 * d + np.arange(k - 1),
        ])
        offsets = self.bias_state_size * np.arange(self.n_states)
        return (offsets[:, None] + per_state[None, :]).ravel()


class EtaBlocks(NamedTuple):
    """Structured view of ``eta``: the quantities ``f`` acts on.

    ``mean`` and ``log_cov`` have shape ``(..., n_states, K, D)``,
    ``logits`` has shape ``(..., n_states, K - 1)``.
    """

    mean: np.ndarray
    log_cov: np.ndarray
    logits: np.ndarray


def unpack_eta(eta, layout: ParamLayout) -> EtaBlocks:
    eta = np.asarray(eta, dtype=np.float64)
    if eta.shape[-1] != layout.size:
        raise DimensionMismatchError(
            f"eta has length {eta.shape[-1]}, layout expects {layout.size}")
    lead = eta.shape[:-1]
    s, k, d = layout.n_states, layout.n_components, layout.feature_dim
    per_state = eta.reshape(lead + (s, layout.state_size))
    mean = per_state[..., layout.mean_slice].reshape(lead + (s, k, d))
    log_cov = per_state[..., layout.cov_slice].reshape(lead + (s, k, d))
    logits = per_state[..., layout.logit_slice]
    return EtaBlocks(mean, log_cov, logits)


def pack_eta(blocks: EtaBlocks, layout: ParamLayout) -> np.ndarray:
    s, k, d = layout.n_states, layout.n_components, layout.feature_dim
    mean = np.asarray(blocks.mean, dtype=np.float64)
    log_cov = np.asarray(blocks.log_cov, dtype=np.float64)
    logits = np.asarray(blocks.logits, dtype=np.float64)
    if mean.shape[-3:] != (s, k, d) or log_cov.shape[-3:] != (s, k, d) \
            or logits.shape[-2:] != (s, k - 1):
        raise DimensionMismatchError("eta blocks do not match the layout")
    lead = mean.shape[:-3]
    per_state = np.concatenate([
        mean.reshape(lead + (s, k * d)),
        log_cov.reshape(lead + (s, k * d)),
        logits,
    ], axis=-1)
    return per_state.reshape(lead + (layout.size,))


@dataclass
class GaussianParams:
    """GMM emission parameters for a batch of units.

    Shapes: ``means`` and ``variances`` ``(U, n_states, K, D)``,
    ``weights`` ``(U, n_states, K)``.
    """

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray

    @property
    def n_units(self) -> int:
        return self.means.shape[0]

    def log_weights(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.weights)

    def subset(self, units) -> "GaussianParams":
        return GaussianParams(self.means[units], self.variances[units], self.weights[units])


# ---------------------------------------------------------------------------
# Truncated Dirichlet-process phone loop.

@dataclass
class PhoneLoop:
    """Stick-breaking posteriors ``Beta(a_u, b_u)`` over ``U`` truncated sticks."""

    a: np.ndarray
    b: np.ndarray
    concentration: float = 1.0

    @classmethod
    def prior(cls, n_units: int, concentration: float = 1.0) -> "PhoneLoop":
        if n_units < 1:
            raise ValueError("truncation must be at least 1")
        if concentration <= 0:
            raise ValueError("concentration must be positive")
        return cls(np.ones(n_units), np.full(n_units, float(concentration)), concentration)

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.a.shape != self.b.shape or self.a.ndim != 1:
            raise ValueError("stick parameters must be matching 1-d arrays")
        if np.any(self.a <= 0) or np.any(self.b <= 0):
            raise ValueError("Beta parameters must be positive")

    @property
    def n_units(self) -> int:
        return self.a.size

    def kl_divergence(self) -> float:
        """Sum over sticks of KL(Beta(a, b) || Beta(1, concentration))."""
        a, b = self.a, self.b
        a0, b0 = 1.0, self.concentration
        kl = (betaln(a0, b0) - betaln(a, b)
              + (a - a0) * digamma(a) + (b - b0) * digamma(b)
              + (a0 - a + b0 - b) * digamma(a + b))
        return float(kl.sum())


def stick_breaking_expected_log_weights(loop: PhoneLoop) -> np.ndarray:
    """E[ln w_u] under the mean-field stick posteriors."""
    a, b = loop.a, loop.b
    total = digamma(a + b)
    log_v = digamma(a) - total
    log_1mv = digamma(b) - total
    return log_v + np.concatenate([[0.0], np.cumsum(log_1mv)[:-1]])


def update_stick_breaking(loop: PhoneLoop, expected_unit_counts) -> PhoneLoop:
    counts = np.asarray(expected_unit_counts, dtype=np.float64)
    if counts.shape != (loop.n_units,):
        raise DimensionMismatchError(
            f"expected {loop.n_units} unit counts, got shape {counts.shape}")
    if np.any(counts < 0):
        raise DataError("unit counts must be non-negative")
    tail = np.concatenate([np.cumsum(counts[::-1])[::-1][1:], [0.0]])
    return PhoneLoop(1.0 + counts, loop.concentration + tail, loop.concentration)


# ---------------------------------------------------------------------------
# Decoding graphs.

@dataclass(frozen=True)
class DecodingGraph:
    """Log-domain state graph over emitting HMM states.

    Arcs are stored as parallel arrays. A unit leaves through its last state
    with probability ``exp(log_exit)``; in a phone loop the exit feeds a
    non-emitting hub from which unit ``v`` is entered with ``exp(hub_out[v])``.
    A path must start with ``log_init`` and end by taking ``log_exit``.

    ``emissions[s]`` is the column of the per-unit state log-likelihood
    table (``unit * n_states + hmm_state``) scoring graph state ``s``.
    """

    units: np.ndarray
    hmm_states: np.ndarray
    emissions: np.ndarray
    log_init: np.ndarray
    arc_src: np.ndarray
    arc_dst: np.ndarray
    arc_logp: np.ndarray
    log_exit: np.ndarray
    hub_out: np.ndarray | None = None

    @property
    def n_states(self) -> int:
        return self.units.size

    @property
    def log_final(self) -> np.ndarray:
        return self.log_exit

    def transition_matrix(self) -> np.ndarray:
        """Dense ``n x n`` log transition matrix (arcs plus hub paths)."""
        n = self.n_states
        trans = np.full((n, n), -np.inf)
        np.logaddexp.at(trans, (self.arc_src, self.arc_dst), self.arc_logp)
        if self.hub_out is not None:
            trans = np.logaddexp(trans, self.log_exit[:, None] + self.hub_out[None, :])
        return trans

    def outgoing_log_mass(self) -> np.ndarray:
        """Per-state log of total outgoing probability.

        Hub traffic is counted once, as the exit probability, so a phone
        loop is row-stochastic exactly when its entry weights sum to one.
        """
        n = self.n_states
        mass = np.full(n, -np.inf)
        np.logaddexp.at(mass, self.arc_src, self.arc_logp)
        return np.logaddexp(mass, self.log_exit)

    def gather(self, unit_state_llh: np.ndarray) -> np.ndarray:
        """Map an ``n_frames x (U * n_states)`` table onto graph states."""
        return unit_state_llh[:, self.emissions]


def _unit_chain(n_states: int):
    src = [i for i in range(n_states)] + [i for i in range(n_states - 1)]
    dst = [i for i in range(n_states)] + [i + 1 for i in range(n_states - 1)]
    logp = [SELF_LOOP_LOGP] * n_states + [FORWARD_LOGP] * (n_states - 1)
    return src, dst, logp


def _sorted_graph(units, hmm_states, n_states, log_init, src, dst, logp, log_exit, hub_out):
    src, dst, logp = map(np.asarray, (src, dst, logp))
    order = np.lexsort((src, dst))
    units = np.asarray(units, dtype=np.int64)
    hmm_states = np.asarray(hmm_states, dtype=np.int64)
    return DecodingGraph(
        units=units,
        hmm_states=hmm_states,
        emissions=units * n_states + hmm_states,
        log_init=np.asarray(log_init, dtype=np.float64),
        arc_src=src[order].astype(np.int64),
        arc_dst=dst[order].astype(np.int64),
        arc_logp=logp[order].astype(np.float64),
        log_exit=np.asarray(log_exit, dtype=np.float64),
        hub_out=None if hub_out is None else np.asarray(hub_out, dtype=np.float64),
    )


def build_phone_loop_graph(n_units: int, layout: ParamLayout,
                           expected_log_unit_weights) -> DecodingGraph:
    """Phone loop over ``n_units`` units; unit ``u`` is entered with its log weight."""
    if n_units < 1:
        raise ValueError("phone loop needs at least one unit")
    logw = np.asarray(expected_log_unit_weights, dtype=np.float64)
    if logw.shape != (n_units,):
        raise DimensionMismatchError(f"expected {n_units} unit weights, got {logw.shape}")
    if not np.all(np.isfinite(logw)):
        raise DataError("unit log weights must be finite")
    ns = layout.n_states
    csrc, cdst, clogp = _unit_chain(ns)
    src, dst, logp = [], [], []
    for u in range(n_units):
        src += [u * ns + i for i in csrc]
        dst += [u * ns + i for i in cdst]
        logp += clogp
    units = np.repeat(np.arange(n_units), ns)
    hmm_states = np.tile(np.arange(ns), n_units)
    entry = np.full(n_units * ns, -np.inf)
    entry[hmm_states == 0] = logw
    log_exit = np.where(hmm_states == ns - 1, FORWARD_LOGP, -np.inf)
    return _sorted_graph(units, hmm_states, ns, entry, src, dst, logp, log_exit, entry.copy())


def build_alignment_graph(transcript, token_to_unit: dict, layout: ParamLayout) -> DecodingGraph:
    """Left-to-right concatenation of the transcript tokens' HMMs."""
    tokens = list(transcript)
    if not tokens:
        raise DataError("cannot build an alignment graph for an empty transcript")
    missing = [t for t in tokens if t not in token_to_unit]
    if missing:
        raise DataError(f"token {missing[0]!r} has no unit")
    ns = layout.n_states
    csrc, cdst, clogp = _unit_chain(ns)
    n = ns * len(tokens)
    src, dst, logp = [], [], []
    for t in range(len(tokens)):
        src += [t * ns + i for i in csrc]
        dst += [t * ns + i for i in cdst]
        logp += clogp
        if t + 1 < len(tokens):
            src.append(t * ns + ns - 1)
            dst.append((t + 1) * ns)
            logp.append(FORWARD_LOGP)
    units = np.repeat([token_to_unit[t] for t in tokens], ns)
    hmm_states = np.tile(np.arange(ns), len(tokens))
    log_init = np.full(n, -np.inf)
    log_init[0] = 0.0
    log_exit = np.full(n, -np.inf)
    log_exit[-1] = FORWARD_LOGP
    return _sorted_graph(units, hmm_states, ns, log_init, src, dst, logp, log_exit, None)
