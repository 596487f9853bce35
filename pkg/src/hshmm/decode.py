"""Viterbi decoding on expected log-likelihoods and conversion to unit segments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleAlignmentError
from .inference import _ArcIndex, _check_llh
from .model import DecodingGraph


@dataclass
class UnitTranscription:
    utterance_id: str
    segments: list = field(default_factory=list)  # (start_ms, end_ms, unit_id)

    def labelled(self, prefix: str = "au"):
        return [(s, e, f"{prefix}{u}") for s, e, u in self.segments]


def _argmax_first(values):
    """Index of the maximum, lowest index on ties."""
    return int(np.argmax(values))


def viterbi(graph: DecodingGraph, llh):
    """Best state path and its log score; ties go to the lowest state index."""
    llh = _check_llh(graph, llh)
    T, n = llh.shape
    arcs = _ArcIndex(graph)
    hub = graph.hub_out is not None
    big = np.iinfo(np.int64).max
    logp = arcs.logp
    if hub and arcs.dst.size:
        # an arc and an exit-hub-entry route between the same pair of states
        # are one transition of the state sequence, so their mass adds
        logp = np.logaddexp(logp, graph.log_exit[arcs.src] + graph.hub_out[arcs.dst])

    delta = np.empty((T, n))
    back = np.full((T, n), -1, dtype=np.int64)
    delta[0] = graph.log_init + llh[0]
    for t in range(1, T):
        prev = delta[t - 1]
        best = np.full(n, -np.inf)
        arg = np.full(n, big, dtype=np.int64)
        if arcs.dst.size:
            vals = prev[arcs.src] + logp
            seg_max = np.maximum.reduceat(vals, arcs.dst_starts)
            rep = np.repeat(seg_max, np.diff(np.r_[arcs.dst_starts, vals.size]))
            cand = np.where((vals == rep) & np.isfinite(vals), arcs.src, big)
            best[arcs.dst_ids] = seg_max
            arg[arcs.dst_ids] = np.minimum.reduceat(cand, arcs.dst_starts)
        if hub:
            exit_scores = prev + graph.log_exit
            h = _argmax_first(exit_scores)
            hub_vals = exit_scores[h] + graph.hub_out
            take = (hub_vals > best) | ((hub_vals == best) & (h < arg) & np.isfinite(hub_vals))
            best = np.where(take, hub_vals, best)
            arg = np.where(take, h, arg)
        delta[t] = best + llh[t]
        back[t] = np.where(np.isfinite(best), arg, -1)

    final = delta[-1] + graph.log_exit
    last = _argmax_first(final)
    score = float(final[last])
    if not np.isfinite(score):
        raise InfeasibleAlignmentError("infeasible graph/frame combination: no admissible path")
    path = np.empty(T, dtype=np.int64)
    path[-1] = last
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, score


def path_score(graph: DecodingGraph, llh, path) -> float:
    """Sum of initial, transition, emission and exit terms along ``path``."""
    llh = np.asarray(llh, dtype=np.float64)
    trans = graph.transition_matrix()
    path = np.asarray(path)
    score = graph.log_init[path[0]] + llh[np.arange(len(path)), path].sum()
    score += trans[path[:-1], path[1:]].sum()
    return float(score + graph.log_exit[path[-1]])


def path_to_units(path, graph: DecodingGraph, frame_shift_ms: float = 10.0,
                  utterance_id: str = "") -> UnitTranscription:
    """Merge consecutive frames of one unit traversal into a time-stamped segment.

    A new segment starts whenever the unit changes or the unit's first state is
    entered from any other state (exit followed by re-entry of the same unit).
    """
    path = np.asarray(path)
    if path.size == 0:
        raise ValueError("empty path")
    units = graph.units[path]
    states = graph.hmm_states[path]
    starts = [0]
    for t in range(1, path.size):
        restart = states[t] == 0 and path[t] != path[t - 1]
        if units[t] != units[t - 1] or restart:
            starts.append(t)
    bounds = starts + [path.size]
    segs = [(bounds[i] * frame_shift_ms, bounds[i + 1] * frame_shift_ms, int(units[bounds[i]]))
            for i in range(len(starts))]
    return UnitTranscription(utterance_id, segs)
