"""Binary checkpoints and flat ``key = value`` config files.

Checkpoint layout (all integers little-endian)::

    magic        8 bytes   b"MICKCKPT"
    version      u8        1
    config       u32 length + UTF-8 JSON (sorted keys)
    vocab        u32 length + UTF-8 JSON {"mode": ..., "tokens": [...]}
    block count  u32
    per block    u16 name length + UTF-8 name, u8 ndim, ndim x u32 dims,
                 prod(dims) x float64 payload
    checksum     32 bytes  SHA-256 of every preceding byte
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import Vocab
from .trainer import TrainConfig

MAGIC = b"MICKCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    vocab: Vocab
    params: dict[str, np.ndarray]


def _blob(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


def dumps_checkpoint(cfg: TrainConfig, vocab: Vocab, params: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<B", VERSION)]
    parts.append(_blob(json.dumps(cfg.to_dict(), sort_keys=True).encode()))
    vocab_doc = {"mode": vocab.mode, "tokens": list(vocab.id_to_token)}
    parts.append(_blob(json.dumps(vocab_doc, ensure_ascii=False).encode()))
    parts.append(struct.pack("<I", len(params)))
    for name, arr in params.items():
        arr = np.asarray(arr, dtype=np.float64)
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f8").tobytes(order="C"))
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def loads_checkpoint(raw: bytes) -> Checkpoint:
    if len(raw) < len(MAGIC) + 1 + 32 or raw[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch: checkpoint is corrupt")
    if body[8] != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {body[8]}")
    pos = 9

    def take(n):
        nonlocal pos
        if pos + n > len(body):
            raise CheckpointError("truncated checkpoint")
        chunk = body[pos:pos + n]
        pos += n
        return chunk

    def blob():
        (n,) = struct.unpack("<I", take(4))
        return take(n)

    cfg = TrainConfig.from_dict(json.loads(blob()))
    vdoc = json.loads(blob())
    vocab = Vocab(tuple(vdoc["tokens"]), vdoc["mode"])
    (count,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    if pos != len(body):
        raise CheckpointError("trailing bytes after parameter blocks")
    return Checkpoint(cfg, vocab, params)


def save_checkpoint(path, cfg: TrainConfig, vocab: Vocab, params: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps_checkpoint(cfg, vocab, params))


def load_checkpoint(path) -> Checkpoint:
    return loads_checkpoint(Path(path).read_bytes())


# --- config files ---------------------------------------------------------------

_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def parse_value(key: str, text: str):
    """Convert ``text`` to the type of :class:`TrainConfig` field ``key``."""
    defaults = {f.name: f.default for f in fields(TrainConfig)}
    if key not in defaults:
        raise ValueError(f"unknown config key {key!r}")
    text = text.strip()
    if key == "phase_episodes":
        if text.lower() in ("", "none", "auto"):
            return None
        parts = [p for p in text.replace(",", " ").split() if p]
        return tuple(int(p) for p in parts)
    default = defaults[key]
    try:
        if isinstance(default, bool):
            return _BOOL[text.lower()]
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except (KeyError, ValueError):
        raise ValueError(f"bad value for {key}: {text!r}") from None
    return text


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = parse_value(key, value)
    return out


def load_config(path, overrides: Mapping | None = None) -> TrainConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return TrainConfig.from_dict(values)


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ", ".join(map(str, v))
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
