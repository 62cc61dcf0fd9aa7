"""Embedding text files and model checkpoints.

Embedding files use the common word2vec text layout: a ``V d`` header, then
``token v1 ... vd`` per line.

Checkpoints are a single file::

    uint64 LE   n = byte length of the metadata
    n bytes     UTF-8 JSON metadata (version, config, vocabularies, manifest)
    payload     float32 LE tensors, row-major, in manifest order
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .align import EmbeddingSpace
from .corpus import Vocabulary
from .model import ModelConfig, ModelParams, assemble_params

FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")
_FLOAT = np.dtype("<f4")


class FormatError(ValueError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


def export_embeddings(space: EmbeddingSpace, path: str | os.PathLike) -> None:
    """Write ``space`` with 9 significant digits per value."""
    if not len(space):
        raise FormatError("refusing to export an empty embedding space")
    for tok in space.tokens:
        if not tok or any(ch.isspace() for ch in tok):
            raise FormatError(f"token {tok!r} cannot be written: empty or contains whitespace")
    v, d = space.matrix.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{v} {d}\n")
        for tok, row in zip(space.tokens, space.matrix):
            fh.write(tok + " " + " ".join(format(float(x), ".9g") for x in row) + "\n")


def import_embeddings(path: str | os.PathLike, lang: str = "") -> EmbeddingSpace:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(f"{path}:1: header must be 'V d'")
        try:
            v, d = int(header[0]), int(header[1])
        except ValueError:
            raise FormatError(f"{path}:1: header must be two integers") from None
        tokens: list[str] = []
        seen: set[str] = set()
        matrix = np.empty((v, d), dtype=np.float64)
        n = 0
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if parts == [""]:
                continue
            if n >= v:
                raise FormatError(f"{path}:{lineno}: more rows than the {v} declared in the header")
            if len(parts) != d + 1:
                raise FormatError(f"{path}:{lineno}: expected {d} values, got {len(parts) - 1}")
            tok = parts[0]
            if tok in seen:
                raise FormatError(f"{path}:{lineno}: duplicate token {tok!r}")
            try:
                matrix[n] = [float(x) for x in parts[1:]]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric value") from None
            seen.add(tok)
            tokens.append(tok)
            n += 1
    if n != v:
        raise FormatError(f"{path}: header declares {v} rows, found {n}")
    return EmbeddingSpace(lang, tokens, matrix)


@dataclass
class Checkpoint:
    params: ModelParams
    epoch: int = 0
    seed: int = 0
    extra: dict[str, Any] = field(default_factory=dict)


def _vocab_meta(v: Vocabulary) -> dict:
    return {"tokens": list(v.tokens), "counts": list(v.counts), "min_count": v.min_count}


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    params = ckpt.params
    cfg = asdict(params.config)
    cfg["languages"] = list(cfg["languages"])
    named = list(params.named_parameters())
    meta = {
        "format_version": FORMAT_VERSION,
        "config": cfg,
        "languages": list(params.config.languages),
        "vocabularies": {lang: _vocab_meta(params.vocabs[lang]) for lang in params.config.languages},
        "tensors": [{"name": name, "shape": list(t.shape)} for name, t in named],
        "progress": {"epoch": ckpt.epoch, "seed": ckpt.seed},
        "extra": ckpt.extra,
    }
    blob = json.dumps(meta, ensure_ascii=False, sort_keys=True).encode("utf-8")
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_LEN.pack(len(blob)))
        fh.write(blob)
        for _, t in named:
            fh.write(np.ascontiguousarray(t.data, dtype=_FLOAT).tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike, dtype: str | None = None) -> Checkpoint:
    """Read a checkpoint; tensors are cast to ``dtype`` (default: the saved config's)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _LEN.size:
        raise TruncatedError(f"{path}: truncated header")
    (n,) = _LEN.unpack_from(raw)
    if len(raw) < _LEN.size + n:
        raise TruncatedError(f"{path}: truncated metadata")
    try:
        meta = json.loads(raw[_LEN.size : _LEN.size + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable metadata ({exc})") from exc
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: checkpoint format version {version!r}, this build reads {FORMAT_VERSION}")

    cfg = dict(meta["config"])
    if dtype is not None:
        cfg["dtype"] = dtype
    config = ModelConfig(**cfg)
    vocabs = {
        lang: Vocabulary(lang, tuple(v["tokens"]), tuple(v["counts"]), v.get("min_count", 1))
        for lang, v in meta["vocabularies"].items()
    }

    manifest = meta["tensors"]
    sizes = [int(np.prod(m["shape"])) for m in manifest]
    expected = _LEN.size + n + _FLOAT.itemsize * sum(sizes)
    if len(raw) < expected:
        raise TruncatedError(f"{path}: truncated payload ({len(raw)} of {expected} bytes)")
    if len(raw) > expected:
        raise FormatError(f"{path}: {len(raw) - expected} trailing bytes after payload")
    arrays = {}
    offset = _LEN.size + n
    for m, size in zip(manifest, sizes):
        arrays[m["name"]] = np.frombuffer(raw, dtype=_FLOAT, count=size, offset=offset).reshape(m["shape"])
        offset += size * _FLOAT.itemsize
    # assemble_params checks every manifest shape against config + vocabularies
    params = assemble_params(config, vocabs, arrays)
    progress = meta.get("progress", {})
    return Checkpoint(params, epoch=progress.get("epoch", 0), seed=progress.get("seed", 0), extra=meta.get("extra", {}))
