"""Self-describing binary checkpoint container.

Layout (all integers little-endian):
    magic "PDRLM1" | u32 format version | config blob |
    model params | head flag + head params | optimizer flag + JSON blob |
    sha256 of everything before it

Each parameter blob carries name, decay flag, shape, and float64
little-endian payload, so load(save(x)) reproduces x bitwise. Saves are
atomic (temp file + rename).
"""

import hashlib
import io
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .config import parse_config
from .model import LstmLayer, ModelParams, Param, PastDecodeHead

MAGIC = b"PDRLM1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_blob(fh, param):
    name = param.name.encode("utf-8")
    fh.write(struct.pack("<H", len(name)))
    fh.write(name)
    fh.write(struct.pack("<B", 1 if param.decay else 0))
    fh.write(struct.pack("<B", param.data.ndim))
    for dim in param.data.shape:
        fh.write(struct.pack("<Q", dim))
    payload = np.ascontiguousarray(param.data, dtype="<f8").tobytes()
    fh.write(struct.pack("<Q", len(payload)))
    fh.write(payload)


def _read_blob(fh):
    name = _take(fh, struct.unpack("<H", _take(fh, 2))[0]).decode("utf-8")
    decay = struct.unpack("<B", _take(fh, 1))[0] == 1
    ndim = struct.unpack("<B", _take(fh, 1))[0]
    shape = tuple(struct.unpack("<Q", _take(fh, 8))[0] for _ in range(ndim))
    nbytes = struct.unpack("<Q", _take(fh, 8))[0]
    data = np.frombuffer(_take(fh, nbytes), dtype="<f8").reshape(shape).copy()
    return Param(name, data, decay=decay)


def _take(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint file")
    return buf


def head_payload_size(head):
    """Exact on-disk byte count of the head's parameter blobs."""
    fh = io.BytesIO()
    for p in head.all():
        _write_blob(fh, p)
    return fh.tell()


def optimizer_blob(state):
    return json.dumps(
        {"mode": state.mode, "lr": state.lr,
         "weight_decay": state.weight_decay, "clip": state.clip,
         "nonmono": state.nonmono, "step": state.step,
         "avg_start": state.avg_start, "avg_steps": state.avg_steps,
         "val_history": state.val_history},
        sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, config_txt, params, head=None, optim=None):
    """optim may be an OptimizerState or an already-serialized dict."""
    fh = io.BytesIO()
    fh.write(MAGIC)
    fh.write(struct.pack("<I", VERSION))
    cfg = config_txt.encode("utf-8")
    fh.write(struct.pack("<Q", len(cfg)))
    fh.write(cfg)
    blobs = params.all()
    fh.write(struct.pack("<I", len(blobs)))
    for p in blobs:
        _write_blob(fh, p)
    if head is not None:
        fh.write(struct.pack("<B", 1))
        for p in head.all():
            _write_blob(fh, p)
    else:
        fh.write(struct.pack("<B", 0))
    if optim is not None:
        blob = optim if isinstance(optim, bytes) else (
            json.dumps(optim, sort_keys=True, separators=(",", ":"))
            .encode("utf-8") if isinstance(optim, dict)
            else optimizer_blob(optim))
        fh.write(struct.pack("<B", 1))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
    else:
        fh.write(struct.pack("<B", 0))
    body = fh.getvalue()
    digest = hashlib.sha256(body).digest()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as out:
        out.write(body)
        out.write(digest)
    os.replace(tmp, path)


@dataclass
class CheckpointData:
    config: object          # RunConfig parsed from the embedded text
    config_txt: str         # the exact embedded text
    params: ModelParams
    head: PastDecodeHead    # None for an inference (stripped) checkpoint
    optim: dict             # None when absent


def _assemble(blobs):
    by_name = {p.name: p for p in blobs}
    layers = []
    for li in range(len(blobs)):
        if f"lstm{li}.w_in" not in by_name:
            break
        layers.append(LstmLayer(by_name[f"lstm{li}.w_in"],
                                by_name[f"lstm{li}.w_rec"],
                                by_name[f"lstm{li}.bias"]))
    try:
        return ModelParams(by_name["embedding"], layers, by_name["dec_bias"],
                           by_name.get("decoder"))
    except KeyError as exc:
        raise CheckpointError(f"missing parameter {exc}") from exc


def load_checkpoint(path):
    raw = open(path, "rb").read()
    if len(raw) < len(MAGIC) + 4 + 32:
        raise CheckpointError("truncated checkpoint file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch: checkpoint is corrupt")
    fh = io.BytesIO(body)
    if _take(fh, len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version = struct.unpack("<I", _take(fh, 4))[0]
    if version != VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {version} "
            f"(this build reads version {VERSION})")
    cfg_len = struct.unpack("<Q", _take(fh, 8))[0]
    config_txt = _take(fh, cfg_len).decode("utf-8")
    count = struct.unpack("<I", _take(fh, 4))[0]
    params = _assemble([_read_blob(fh) for _ in range(count)])
    head = None
    if struct.unpack("<B", _take(fh, 1))[0] == 1:
        proj, proj_bias, out_bias = (_read_blob(fh) for _ in range(3))
        head = PastDecodeHead(proj, proj_bias, out_bias)
    optim = None
    if struct.unpack("<B", _take(fh, 1))[0] == 1:
        blob_len = struct.unpack("<Q", _take(fh, 8))[0]
        optim = json.loads(_take(fh, blob_len).decode("utf-8"))
    if fh.read(1):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return CheckpointData(parse_config(config_txt, where=str(path)),
                          config_txt, params, head, optim)


def strip_checkpoint(in_path, out_path):
    """Remove the past-decode head; idempotent, everything else is
    preserved byte for byte."""
    data = load_checkpoint(in_path)
    optim = None
    if data.optim is not None:
        optim = json.dumps(data.optim, sort_keys=True,
                           separators=(",", ":")).encode("utf-8")
    save_checkpoint(out_path, data.config_txt, data.params, head=None,
                    optim=optim)
    return data.head is not None
