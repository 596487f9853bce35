"""Evaluation: frame NMI and boundary F-score on a hand-made example."""

from hshmm.metrics import boundary_fscore, evaluate, frame_confusion, nmi

ref = {"utt": [(0, 100, "a"), (100, 200, "b"), (200, 300, "a"), (300, 500, "c")]}
hyp = {"utt": [(0, 110, "au3"), (110, 205, "au1"), (205, 400, "au3"), (400, 500, "au7")]}

conf = frame_confusion(ref, hyp)
print("reference labels ", conf.ref_labels)
print("hypothesis labels", conf.hyp_labels)
print(conf.counts)
print(f"NMI {nmi(conf.counts):.2f}")
p, r, f = boundary_fscore(ref, hyp, tolerance_ms=20.0)
print(f"boundaries within 20 ms: precision {p:.3f}, recall {r:.3f}, F {f:.3f}")
print(evaluate(ref, hyp))
