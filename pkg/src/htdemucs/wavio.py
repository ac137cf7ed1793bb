"""RIFF/WAVE reader and writer: PCM-16, PCM-24 and float-32, mono or stereo.

PCM is scaled by ``1 / 2**(bits - 1)`` so integer full scale maps to [-1, 1).
Writing PCM clips to that range and rounds to nearest.
"""
import struct

import numpy as np

from .dsp import AudioClip
from .errors import FormatError

WAVE_FORMAT_PCM = 1
WAVE_FORMAT_IEEE_FLOAT = 3
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


def _chunks(buf):
    pos = 12
    while pos + 8 <= len(buf):
        cid, size = struct.unpack_from("<4sI", buf, pos)
        body = buf[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise IOError(f"truncated WAV chunk {cid!r}: {len(body)} of {size} bytes")
        yield cid, body
        pos += 8 + size + (size & 1)


def decode_wav(buf) -> AudioClip:
    if len(buf) < 12 or buf[:4] != b"RIFF" or buf[8:12] != b"WAVE":
        raise FormatError("not a RIFF/WAVE file")
    fmt = None
    data = None
    for cid, body in _chunks(buf):
        if cid == b"fmt ":
            if len(body) < 16:
                raise IOError("truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body)
            if fmt[0] == WAVE_FORMAT_EXTENSIBLE and len(body) >= 26:
                sub = struct.unpack_from("<H", body, 24)[0]
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            data = body
    if fmt is None:
        raise FormatError("missing fmt chunk")
    if data is None:
        raise IOError("missing data chunk")
    tag, channels, rate, _, block_align, bits = fmt
    if channels not in (1, 2):
        raise FormatError(f"unsupported channel count {channels}")
    if len(data) % block_align:
        raise IOError("data chunk is not a whole number of frames")

    if tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float32)
    elif tag == WAVE_FORMAT_PCM and bits == 16:
        samples = np.frombuffer(data, dtype="<i2").astype(np.float32) / 32768.0
    elif tag == WAVE_FORMAT_PCM and bits == 24:
        raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        samples = ints.astype(np.float32) / float(1 << 23)
    else:
        raise FormatError(f"unsupported codec: format tag {tag}, {bits} bits")
    return AudioClip(samples.reshape(-1, channels).T.copy(), rate)


def encode_wav(clip: AudioClip, subtype="float32") -> bytes:
    x = np.asarray(clip.samples, dtype=np.float64).T  # [frames, channels]
    channels = x.shape[1]
    if subtype == "float32":
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
        payload = np.asarray(clip.samples, dtype="<f4").T.tobytes()
    elif subtype in ("pcm16", "pcm24"):
        tag, bits = WAVE_FORMAT_PCM, 16 if subtype == "pcm16" else 24
        full = float(1 << (bits - 1))
        ints = np.clip(np.round(x * full), -full, full - 1).astype(np.int32)
        if bits == 16:
            payload = ints.astype("<i2").tobytes()
        else:
            b = np.ascontiguousarray(ints, dtype="<i4").view(np.uint8).reshape(-1, 4)[:, :3]
            payload = b.tobytes()
    else:
        raise FormatError(f"unsupported subtype {subtype!r}")
    block_align = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, clip.sample_rate,
                      clip.sample_rate * block_align, block_align, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


def load_audio(path) -> AudioClip:
    with open(path, "rb") as f:
        return decode_wav(f.read())


def save_audio(clip: AudioClip, path, subtype="float32"):
    with open(path, "wb") as f:
        f.write(encode_wav(clip, subtype))
