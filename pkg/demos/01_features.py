"""Features: MFCCs with deltas from a synthetic two-tone waveform, through a binary archive."""

import os
import tempfile

import numpy as np

from hshmm.features import extract_features, read_feature_archive, write_feature_archive

sr = 16000
t = np.arange(sr) / sr
# half a second at 300 Hz, then half a second at 1200 Hz
wave = np.where(t < 0.5, np.sin(2 * np.pi * 300 * t), np.sin(2 * np.pi * 1200 * t))
wave += 0.01 * np.random.default_rng(0).standard_normal(t.size)

fm = extract_features(wave, sr, utterance_id="tones")
print(f"{fm.n_frames} frames of dimension {fm.dim} at {fm.frame_shift_ms} ms")

# The tone change shows up as a jump in the static cepstra and a spike in the deltas.
static, delta = fm.frames[:, :13], fm.frames[:, 13:26]
jump = np.abs(np.diff(static, axis=0)).sum(1)
print("largest cepstral jump at frame", int(jump.argmax()) + 1, "(tone switch at 0.5 s)")
print("delta energy peaks at frame", int(np.abs(delta).sum(1).argmax()))

with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "demo.feats")
    write_feature_archive({"tones": fm}, path)
    back = read_feature_archive(path)["tones"]
    print("archive round-trip identical:", np.array_equal(back.frames, fm.frames))
