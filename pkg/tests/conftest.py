import numpy as np
import pytest

from hshmm.inference import PosteriorSet, SufficientStats
from hshmm.model import ParamLayout, build_alignment_graph, build_phone_loop_graph
from hshmm.subspace import PriorConfig, VariationalGaussian, init_posteriors


def tiny_model(seed, D=2, E=3, K_h=2, U=2, n_frames=40, scale=0.4):
    """A small posterior with random statistics and fixed noise for gradient checks."""
    layout = ParamLayout(D)
    rng = np.random.default_rng(seed)
    hyper, langs = init_posteriors(seed, layout, E, K_h, {"x": U}, init_scale=scale,
                                   init_logvar=np.log(0.05))
    for _, q in PosteriorSet(hyper, langs).blocks():
        q.logvar = q.logvar + 0.5 * rng.standard_normal(q.shape)
    post = PosteriorSet(hyper, langs)
    resp = rng.dirichlet(np.ones(U * 3 * 4), size=n_frames).reshape(n_frames, U, 3, 4)
    x = rng.standard_normal((n_frames, D))
    flat = resp.reshape(n_frames, -1)
    stats = SufficientStats(flat.sum(0).reshape(U, 3, 4), (flat.T @ x).reshape(U, 3, 4, D),
                            (flat.T @ (x * x)).reshape(U, 3, 4, D))
    eps = rng.standard_normal((3, post.size))
    return post, layout, {"x": stats}, eps, PriorConfig()


def random_graph(rng, max_units=3, n_frames=None):
    """A random phone loop or alignment chain and a matching llh matrix."""
    layout = ParamLayout(1, n_states=int(rng.integers(1, 4)))
    if rng.random() < 0.5:
        U = int(rng.integers(1, max_units + 1))
        w = rng.dirichlet(np.ones(U))
        graph = build_phone_loop_graph(U, layout, np.log(w))
    else:
        n_tok = int(rng.integers(1, 3))
        toks = [f"t{i}" for i in rng.integers(0, max_units, size=n_tok)]
        graph = build_alignment_graph(toks, {f"t{i}": i for i in range(max_units)}, layout)
    shortest = graph.n_states if graph.hub_out is None else layout.n_states
    T = n_frames or int(rng.integers(shortest, 7))
    llh = 3 * rng.standard_normal((T, graph.n_states))
    return graph, llh


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def gaussian(mean, logvar):
    return VariationalGaussian(np.asarray(mean, float), np.asarray(logvar, float))


ACCEPTANCE = []


def record_criterion(number, name, ok, detail=""):
    """Store one acceptance verdict; printed in the terminal summary."""
    ACCEPTANCE.append((number, name, bool(ok), detail))
    print(f"criterion {number} {name}: {'PASS' if ok else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {name} {detail}")
