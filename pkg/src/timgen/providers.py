"""Per-item modality embedding sources.

Stand-ins for pretrained text/image/video/audio encoders: a deterministic
hash-seeded mock, and a lookup table read from a tab-separated file.
"""

from __future__ import annotations

import enum
from pathlib import Path
from typing import Mapping, Optional, Protocol

import numpy as np

from .numerics import derive_seed


class ModalityKind(str, enum.Enum):
    TEXT = "text"
    IMAGE = "img"
    VIDEO = "video"
    AUDIO = "audio"


MODALITIES: tuple[str, ...] = tuple(k.value for k in ModalityKind)


class EmbeddingParseError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


class EmbeddingProvider(Protocol):
    dims: Mapping[str, int]

    def get(self, item_id: str, kind: str) -> Optional[np.ndarray]:
        """Embedding for ``(item_id, kind)``, or None when the item lacks that modality."""


def _kind(kind) -> str:
    return ModalityKind(kind).value


class MockProvider:
    """Unit-norm pseudo-embeddings seeded by a hash of (seed, item, modality)."""

    def __init__(self, seed: int, dims: Mapping[str, int]):
        self.seed = int(seed)
        self.dims = {_kind(k): int(v) for k, v in dims.items()}

    def get(self, item_id: str, kind) -> np.ndarray:
        kind = _kind(kind)
        rng = np.random.default_rng(derive_seed(self.seed, "mock", item_id, kind))
        v = rng.standard_normal(self.dims[kind])
        return v / np.linalg.norm(v)


def mock_provider(seed: int, dims: Mapping[str, int]) -> MockProvider:
    return MockProvider(seed, dims)


class TableProvider:
    """Lookup-backed provider; absent entries are missing, not zero."""

    def __init__(self, table: Mapping[tuple[str, str], np.ndarray], dims: Mapping[str, int]):
        self.table = dict(table)
        self.dims = dict(dims)

    def get(self, item_id: str, kind) -> Optional[np.ndarray]:
        v = self.table.get((item_id, _kind(kind)))
        return None if v is None else v.copy()

    def items(self) -> list[str]:
        return sorted({item for item, _ in self.table})


def file_provider(path, dims: Optional[Mapping[str, int]] = None) -> TableProvider:
    """Read ``item_id<TAB>kind<TAB>v1,...,vd`` lines.

    When ``dims`` is given every row must match it; otherwise the first row
    of each kind fixes that kind's dimension.
    """
    path = Path(path)
    expected = {} if dims is None else {_kind(k): int(v) for k, v in dims.items()}
    table: dict[tuple[str, str], np.ndarray] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise EmbeddingParseError(path, lineno, f"expected 3 tab-separated fields, got {len(parts)}")
            item_id, kind, values = parts
            try:
                kind = _kind(kind)
            except ValueError:
                raise EmbeddingParseError(path, lineno, f"unknown modality {kind!r}") from None
            try:
                vec = np.array([float(x) for x in values.split(",")], dtype=np.float64)
            except ValueError as exc:
                raise EmbeddingParseError(path, lineno, f"bad float: {exc}") from None
            if not np.all(np.isfinite(vec)):
                raise EmbeddingParseError(path, lineno, "non-finite value")
            want = expected.setdefault(kind, vec.size)
            if vec.size != want:
                raise EmbeddingParseError(path, lineno, f"{kind} row has dimension {vec.size}, expected {want}")
            if (item_id, kind) in table:
                raise EmbeddingParseError(path, lineno, f"duplicate entry for ({item_id}, {kind})")
            table[(item_id, kind)] = vec
    return TableProvider(table, expected)


def write_table(path, rows) -> None:
    """Write ``(item_id, kind, vector)`` rows in the embedding-table format."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for item_id, kind, vec in rows:
            values = ",".join(repr(float(x)) for x in vec)
            fh.write(f"{item_id}\t{_kind(kind)}\t{values}\n")
