"""On-disk formats: metrics CSV, binary archive snapshot and model checkpoint.

Archive snapshot layout (all little-endian)::

    magic  b"QDFA"          4 bytes
    version                u32
    kind                   u8   (0 grid, 1 unstructured)
    d_current              f64  (NaN for grids)
    centers                matrix section
    member count           u64
    per member:
        cell               i64  (-1 when unassigned)
        generation         i64
        fitness            f64
        genome             vector section
        raw_bd             vector section
        latent_bd          vector section
        ground_truth_bd    vector section

A vector section is a u64 count followed by that many f64 values; a count of
``2**64 - 1`` marks a missing vector. A matrix section is two u64 (rows,
columns) followed by the values row-major.
"""
from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from ..containers import GridContainer, Individual, UnstructuredArchive
from ..metrics import MetricsRecord
from ..vqvae import Architecture, VqVaeModel

MAGIC = b"QDFA"
VERSION = 1
GRID, UNSTRUCTURED = 0, 1
_MISSING = 2**64 - 1
_F64 = np.dtype("<f8")


class SnapshotError(ValueError):
    """A snapshot file that is truncated or not an archive snapshot."""


# ------------------------------------------------------------------ archive


@dataclass
class ArchiveSnapshot:
    kind: int
    centers: np.ndarray
    members: list[Individual]
    d_current: float = float("nan")
    extra: dict = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ArchiveSnapshot):
            return NotImplemented
        return encode_snapshot(self) == encode_snapshot(other)


def snapshot_of(archive) -> ArchiveSnapshot:
    if isinstance(archive, GridContainer):
        return ArchiveSnapshot(GRID, archive.centers.copy(), archive.members())
    if isinstance(archive, UnstructuredArchive):
        return ArchiveSnapshot(UNSTRUCTURED, archive.descriptors().copy(), archive.members(), archive.d_current)
    raise TypeError(f"cannot snapshot {type(archive).__name__}")


def _vector(buf: io.BytesIO, v) -> None:
    if v is None:
        buf.write(struct.pack("<Q", _MISSING))
        return
    a = np.ascontiguousarray(np.asarray(v, dtype=np.float64).reshape(-1), dtype=_F64)
    buf.write(struct.pack("<Q", a.size))
    buf.write(a.tobytes())


def encode_snapshot(snap: ArchiveSnapshot) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IBd", VERSION, snap.kind, snap.d_current))
    c = np.ascontiguousarray(np.asarray(snap.centers, dtype=np.float64), dtype=_F64)
    if c.ndim != 2:
        c = c.reshape(len(c), -1)
    buf.write(struct.pack("<QQ", *c.shape))
    buf.write(c.tobytes())
    buf.write(struct.pack("<Q", len(snap.members)))
    for m in snap.members:
        buf.write(struct.pack("<qqd", -1 if m.cell is None else int(m.cell), int(m.generation), m.fitness))
        for v in (m.genome, m.raw_bd, m.latent_bd, m.ground_truth_bd):
            _vector(buf, v)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise SnapshotError("snapshot is truncated")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def array(self, n: int) -> np.ndarray:
        end = self.pos + 8 * n
        if end > len(self.data):
            raise SnapshotError("snapshot is truncated")
        a = np.frombuffer(self.data, dtype=_F64, count=n, offset=self.pos).astype(np.float64)
        self.pos = end
        return a

    def vector(self):
        (n,) = self.take("<Q")
        return None if n == _MISSING else self.array(n)


def decode_snapshot(data: bytes) -> ArchiveSnapshot:
    if data[:4] != MAGIC:
        raise SnapshotError("not an archive snapshot (bad magic)")
    r = _Reader(data)
    r.pos = 4
    version, kind, d_current = r.take("<IBd")
    if version != VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    rows, cols = r.take("<QQ")
    centers = r.array(rows * cols).reshape(rows, cols)
    (count,) = r.take("<Q")
    members = []
    for _ in range(count):
        cell, generation, fitness = r.take("<qqd")
        genome, raw, latent, gt = (r.vector() for _ in range(4))
        members.append(Individual(genome, fitness, raw, latent, gt, None if cell < 0 else cell, generation))
    if r.pos != len(data):
        raise SnapshotError("trailing bytes after the last member")
    return ArchiveSnapshot(kind, centers, members, d_current)


def write_archive(path: str | Path, archive) -> ArchiveSnapshot:
    snap = archive if isinstance(archive, ArchiveSnapshot) else snapshot_of(archive)
    Path(path).write_bytes(encode_snapshot(snap))
    return snap


def read_archive(path: str | Path) -> ArchiveSnapshot:
    return decode_snapshot(Path(path).read_bytes())


# -------------------------------------------------------------------- model


def save_model(path: str | Path, model: VqVaeModel) -> None:
    np.savez(
        path,
        flat=model.flat_parameters(),
        codebook=model.codebook_array,
        input_shift=model.input_shift,
        input_scale=model.input_scale,
        architecture=np.array(json.dumps(model.arch.to_dict(), sort_keys=True)),
    )


def load_model(path: str | Path) -> VqVaeModel:
    with np.load(path, allow_pickle=False) as f:
        arch = Architecture.from_dict(json.loads(str(f["architecture"])))
        model = VqVaeModel(arch)
        model.load_flat_parameters(f["flat"], f["codebook"])
        model.input_shift = f["input_shift"].copy()
        model.input_scale = f["input_scale"].copy()
    return model


# ------------------------------------------------------------------ metrics


class MetricsWriter:
    """Streams metric rows to CSV, flushing each row so a crash keeps a partial file."""

    def __init__(self, path: str | Path):
        self._fh = open(path, "w", newline="")
        self._csv = csv.writer(self._fh, lineterminator="\n")
        self._csv.writerow(MetricsRecord.CSV_FIELDS)
        self._fh.flush()

    def write(self, rec: MetricsRecord) -> None:
        self._csv.writerow(rec.row())
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Header and a float matrix of a metrics CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty metrics file")
    header, body = rows[0], rows[1:]
    return header, np.array([[float(x) for x in r] for r in body], dtype=np.float64).reshape(len(body), len(header))


def write_json(path: str | Path, obj: dict) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def iter_rows(records: Iterable[MetricsRecord]) -> list[list[str]]:
    return [r.row() for r in records]
