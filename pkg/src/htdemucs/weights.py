"""Weight container.

Layout::

    b"HTDW" | u32 LE manifest length | manifest (UTF-8 JSON) | blob

The manifest carries ``format_version``, the model ``config``, one entry per
parameter (``name``, ``shape``, ``offset``, ``nbytes``) and ``sha256`` of the
blob. The blob is the concatenation of little-endian float32 arrays.
"""
import hashlib
import json
import struct

import numpy as np

from .errors import ConfigError, CorruptionError, FormatError
from .unet import HTDemucs, ModelConfig

MAGIC = b"HTDW"
FORMAT_VERSION = 1


def encode(config: dict, state: dict) -> bytes:
    entries, blobs, offset = [], [], 0
    for name, arr in state.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    blob = b"".join(blobs)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "params": entries,
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    text = json.dumps(manifest, indent=1, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(text)) + text + blob


def decode(buf: bytes):
    if buf[:4] != MAGIC:
        raise FormatError("not a weight container")
    (n,) = struct.unpack_from("<I", buf, 4)
    try:
        manifest = json.loads(buf[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"unreadable manifest: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {manifest.get('format_version')}")
    blob = buf[8 + n:]
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise CorruptionError("weight blob checksum mismatch")
    state = {}
    for e in manifest["params"]:
        raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
        state[e["name"]] = np.frombuffer(raw, dtype="<f4").reshape(e["shape"]).astype(np.float32)
    return manifest, state


def save_weights(model: HTDemucs, path):
    with open(path, "wb") as f:
        f.write(encode(model.cfg.to_dict(), model.state_dict()))


def load_weights(path, config: ModelConfig = None) -> HTDemucs:
    """Rebuild the model from the container. If ``config`` is given it must
    equal the stored one."""
    with open(path, "rb") as f:
        manifest, state = decode(f.read())
    stored = ModelConfig.from_dict(manifest["config"])
    if config is not None and config != stored:
        raise ConfigError("weight file config does not match the requested config")
    model = HTDemucs(stored)
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"weights do not fit the stored config: {exc}") from exc
    return model
