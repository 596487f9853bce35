"""Two-stage discovery on a small synthetic corpus.

Stage 1 learns the hyper-subspace from two transcribed source languages.
Stage 2 freezes it and discovers units in an untranscribed target language.
The printout compares the discovered segmentation against the generator's
true alignments, and against decoding with the generator's own parameters,
which bounds what any fit can reach. Takes under a minute.
"""

import numpy as np

from hshmm.checkpoint import hyper_block_digest
from hshmm.config import RunConfig
from hshmm.metrics import evaluate
from hshmm.synth import SynthSpec, generate_corpus
from hshmm.subspace import HyperSubspace, LanguageParams, VariationalGaussian
from hshmm.training import (
    Checkpoint,
    Utterance,
    decode_corpus,
    layout_from,
    train_supervised,
    train_unsupervised,
)

spec = SynthSpec(n_utterances=60, prior_std=0.8, seed=0)
corpus = generate_corpus(spec)
cfg = RunConfig(feature_dim=spec.feature_dim, embedding_dim=spec.embedding_dim,
                n_hyper=spec.n_hyper, n_units=10, supervised_iterations=10,
                unsupervised_iterations=20, gradient_steps=200, n_samples=3,
                unit_init_scale=0.1)


def utterances(name, transcribed):
    lc = corpus.languages[name]
    return [Utterance(u, fm.frames, lc.transcripts[u] if transcribed else None)
            for u, fm in lc.features.items()]


def show(rec):
    print(f"  iteration {rec['iteration']:3d}  elbo {rec['elbo']:.6g}")


print("stage 1 (supervised, source languages)")
stage1 = train_supervised({n: utterances(n, True) for n in ("src0", "src1")}, cfg, log=show)
for name in ("src0", "src1"):
    print(f"  {name}: alpha {np.round(stage1.languages[name].alpha.mean, 3)} "
          f"(true {np.round(corpus.languages[name].alpha, 3)})")

print("stage 2 (unsupervised, target language)")
target = utterances("target", False)
stage2 = train_unsupervised(target, stage1, cfg, log=show)
print("  hyper-subspace untouched:", hyper_block_digest(stage1) == hyper_block_digest(stage2))

hyp = {uid: t.labelled() for uid, t in decode_corpus(stage2, target).items()}
used = sorted({lab for segs in hyp.values() for _, _, lab in segs})
res = evaluate(corpus.target.alignments, hyp)
print(f"units used: {len(used)} of {cfg.n_units}")
print(f"NMI {res['nmi']:.1f}, boundary F {res['fscore']:.3f}")

# Oracle: point-mass posteriors at the generator's parameters.
def point(a):
    return VariationalGaussian(np.asarray(a, float), np.full(np.shape(a), -60.0))


truth = Checkpoint(layout_from(cfg), HyperSubspace(point(corpus.bases), point(corpus.biases)),
                   {"target": LanguageParams(point(corpus.target.alpha),
                                             point(corpus.target.embeddings))},
                   cfg.replace(n_units=spec.n_units), stage="unsupervised", target="target")
oracle = {uid: t.labelled() for uid, t in decode_corpus(truth, target).items()}
res = evaluate(corpus.target.alignments, oracle)
print(f"decoding with the true parameters: NMI {res['nmi']:.1f}, boundary F {res['fscore']:.3f}")
