"""Binary embedding store and CSV score export.

Store layout (little-endian)::

    b"TFEB" | u32 version | u32 dim | u32 count
    | count x (u16 len, source_id utf-8, u16 len, class_id utf-8, dim x float32)
    | u32 CRC32 of everything before it
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._binio import Reader, pack_string, seal, unseal, write_atomic
from .evaluation import ScoreSet, TtaEmbedding

MAGIC = b"TFEB"
VERSION = 1


@dataclass
class EmbeddingStore:
    dim: int
    entries: list = field(default_factory=list)  # list[TtaEmbedding]

    def __post_init__(self):
        entries = []
        seen = set()
        for e in self.entries:
            values = np.asarray(e[0], dtype=np.float32)
            if values.shape != (self.dim,):
                raise ValueError(f"entry {e[1]!r} has length {values.shape}, store dim is {self.dim}")
            if e[1] in seen:
                raise ValueError(f"duplicate source_id {e[1]!r}")
            seen.add(e[1])
            entries.append(TtaEmbedding(values, str(e[1]), str(e[2])))
        self.entries = entries

    @classmethod
    def from_embeddings(cls, embeddings) -> "EmbeddingStore":
        embeddings = list(embeddings)
        if not embeddings:
            raise ValueError("cannot infer dim from an empty embedding list")
        return cls(len(embeddings[0].values), embeddings)

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return (
            self.dim == other.dim
            and len(self.entries) == len(other.entries)
            and all(
                a.source_id == b.source_id and a.class_id == b.class_id and a.values.tobytes() == b.values.tobytes()
                for a, b in zip(self.entries, other.entries)
            )
        )


def write_store(store: EmbeddingStore, path) -> None:
    parts = [MAGIC, struct.pack("<III", VERSION, store.dim, len(store.entries))]
    for e in store.entries:
        parts.append(pack_string(e.source_id))
        parts.append(pack_string(e.class_id))
        parts.append(np.ascontiguousarray(e.values, dtype="<f4").tobytes())
    write_atomic(path, seal(b"".join(parts)))


def read_store(path) -> EmbeddingStore:
    blob = Path(path).read_bytes()
    r = Reader(unseal(blob, MAGIC, VERSION, "embedding store"), "embedding store")
    dim, count = r.unpack("<II")
    entries = []
    for _ in range(count):
        source_id = r.string()
        class_id = r.string()
        values = np.frombuffer(r.take(4 * dim), dtype="<f4").astype(np.float32)
        entries.append(TtaEmbedding(values, source_id, class_id))
    r.done()
    return EmbeddingStore(dim, entries)


def export_scores(scores: ScoreSet, path) -> None:
    """``label,score`` CSV: the genuine block, then the impostor block, input order."""
    lines = ["label,score"]
    lines += [f"genuine,{float(s)!r}" for s in scores.genuine]
    lines += [f"impostor,{float(s)!r}" for s in scores.impostor]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def import_scores(path) -> ScoreSet:
    genuine, impostor = [], []
    for row in Path(path).read_text(encoding="utf-8").splitlines()[1:]:
        if not row:
            continue
        label, value = row.split(",")
        if label == "genuine":
            genuine.append(float(value))
        elif label == "impostor":
            impostor.append(float(value))
        else:
            raise ValueError(f"unknown score label {label!r}")
    return ScoreSet(np.array(genuine), np.array(impostor))
