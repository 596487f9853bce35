"""Binary model checkpoints.

Layout (little-endian)::

    b"HSHM" | version u8 | header length u32 | UTF-8 JSON header | float64 arrays

The JSON header carries layout constants, the run configuration, training
state and an ordered list of ``(name, shape)`` array descriptors; the arrays
follow back to back in that order.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .config import RunConfig
from .errors import ArchiveError, BadMagicError, DataError, TruncatedRecordError
from .inference import AdamState
from .model import ParamLayout, PhoneLoop
from .subspace import HyperSubspace, LanguageParams, VariationalGaussian
from .training import Checkpoint

MAGIC = b"HSHM"
VERSION = 1
HYPER_PREFIX = "hyper/"


def _arrays(ck: Checkpoint):
    """Ordered ``(name, array)`` pairs; hyper-subspace arrays come first."""
    yield "hyper/bases/mean", ck.hyper.bases.mean
    yield "hyper/bases/logvar", ck.hyper.bases.logvar
    yield "hyper/biases/mean", ck.hyper.biases.mean
    yield "hyper/biases/logvar", ck.hyper.biases.logvar
    for name, lp in ck.languages.items():
        for block in ("alpha", "embeddings"):
            q = getattr(lp, block)
            yield f"lang/{name}/{block}/mean", q.mean
            yield f"lang/{name}/{block}/logvar", q.logvar
    for name, loop in ck.sticks.items():
        yield f"sticks/{name}/a", loop.a
        yield f"sticks/{name}/b", loop.b
    if ck.adam is not None:
        yield "adam/m", ck.adam.m
        yield "adam/v", ck.adam.v


def _raw(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def to_bytes(ck: Checkpoint) -> bytes:
    arrays = list(_arrays(ck))
    header = {
        "layout": {"feature_dim": ck.layout.feature_dim, "n_states": ck.layout.n_states,
                   "n_components": ck.layout.n_components},
        "config": ck.config.to_dict(),
        "stage": ck.stage,
        "target": ck.target,
        "iteration": ck.iteration,
        "adam_t": None if ck.adam is None else ck.adam.t,
        "languages": [{"name": n, "units": list(lp.units)} for n, lp in ck.languages.items()],
        "sticks": {n: loop.concentration for n, loop in ck.sticks.items()},
        "history": ck.history,
        "arrays": [[name, list(np.shape(a))] for name, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, bytes([VERSION]), struct.pack("<I", len(blob)), blob]
    parts += [_raw(a) for _, a in arrays]
    return b"".join(parts)


def from_bytes(data: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(data) < 9 or data[:4] != MAGIC:
        raise BadMagicError(f"{source}: bad magic (not a model checkpoint)")
    if data[4] != VERSION:
        raise ArchiveError(f"{source}: unsupported checkpoint version {data[4]}")
    (hlen,) = struct.unpack_from("<I", data, 5)
    if 9 + hlen > len(data):
        raise TruncatedRecordError(f"{source}: truncated checkpoint header")
    try:
        header = json.loads(data[9:9 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ArchiveError(f"{source}: corrupt checkpoint header ({err})") from None

    arrays, pos = {}, 9 + hlen
    for name, shape in header["arrays"]:
        count = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * count > len(data):
            raise TruncatedRecordError(f"{source}: truncated array {name!r}")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(
            shape).astype(np.float64)
        pos += 8 * count
    if pos != len(data):
        raise ArchiveError(f"{source}: {len(data) - pos} trailing bytes")

    def vg(prefix):
        try:
            return VariationalGaussian(arrays[f"{prefix}/mean"], arrays[f"{prefix}/logvar"])
        except KeyError:
            raise ArchiveError(f"{source}: missing block {prefix!r}") from None

    layout = ParamLayout(**header["layout"])
    hyper = HyperSubspace(vg("hyper/bases"), vg("hyper/biases"))
    languages = {}
    for entry in header["languages"]:
        n = entry["name"]
        languages[n] = LanguageParams(vg(f"lang/{n}/alpha"), vg(f"lang/{n}/embeddings"),
                                      entry["units"])
    sticks = {n: PhoneLoop(arrays[f"sticks/{n}/a"], arrays[f"sticks/{n}/b"], conc)
              for n, conc in header["sticks"].items()}
    adam = None
    if header["adam_t"] is not None:
        adam = AdamState(arrays["adam/m"], arrays["adam/v"], int(header["adam_t"]))
    try:
        config = RunConfig.from_dict(header["config"])
    except TypeError as err:
        raise DataError(f"{source}: bad stored config ({err})") from None
    return Checkpoint(layout, hyper, languages, config, sticks=sticks, stage=header["stage"],
                      target=header["target"], iteration=int(header["iteration"]), adam=adam,
                      history=header["history"])


def save_checkpoint(ck: Checkpoint, path) -> None:
    with open(path, "wb") as f:
        f.write(to_bytes(ck))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        return from_bytes(f.read(), str(path))


def hyper_block_bytes(ck: Checkpoint) -> bytes:
    """Serialized hyper-subspace posterior (bases and biases, means and log-variances)."""
    return b"".join(_raw(a) for name, a in _arrays(ck) if name.startswith(HYPER_PREFIX))


def hyper_block_digest(ck) -> str:
    """SHA-256 hex digest of :func:`hyper_block_bytes`; accepts a checkpoint or a path."""
    if not isinstance(ck, Checkpoint):
        ck = load_checkpoint(ck)
    return hashlib.sha256(hyper_block_bytes(ck)).hexdigest()
