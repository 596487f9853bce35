"""Inference on a tiny phone loop, checked against exhaustive path enumeration."""

import numpy as np

from hshmm.decode import path_to_units, viterbi
from hshmm.inference import forward_backward
from hshmm.model import ParamLayout, build_phone_loop_graph
from hshmm.synth import brute_force_best_path, brute_force_marginals

rng = np.random.default_rng(1)
layout = ParamLayout(feature_dim=1)          # 3-state left-to-right units
graph = build_phone_loop_graph(2, layout, np.log([0.4, 0.6]))
llh = 2.0 * rng.standard_normal((6, graph.n_states))

post, logz = forward_backward(graph, llh)
ref_post, ref_logz = brute_force_marginals(graph, llh)
print(f"log marginal: recursion {logz:.12f}, enumeration {ref_logz:.12f}")
print(f"largest posterior difference: {np.abs(post - ref_post).max():.2e}")
print("rows sum to one:", np.allclose(post.sum(1), 1.0, atol=1e-12))

path, score = viterbi(graph, llh)
best, best_score = brute_force_best_path(graph, llh)
print("viterbi path  ", path.tolist(), f"{score:.6f}")
print("enumerated best", best.tolist(), f"{best_score:.6f}")
print("as unit segments:", path_to_units(path, graph).labelled())
