"""On-disk formats: weight containers, mesh topology text, prediction records.

The weight container is a little-endian binary stream of self-describing
named entries with a trailing CRC32; there is no entry-count field, readers
consume entries until only the checksum remains. Topology uses a line-based
text format so meshes diff cleanly. Prediction records are JSON lines with
sorted keys and no timing fields, so identical predictions serialize to
identical bytes.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor_core import INT8_MAX, TensorError
from .topology import MeshLevel, MeshTopology, TopologyError, UpsampleMatrix

MAGIC = b"SPLW"
CONTAINER_VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("int8"), 2: np.dtype("<f8"), 3: np.dtype("<i4")}
_CODE_FOR_KIND = {np.dtype("float32"): 0, np.dtype("int8"): 1,
                  np.dtype("float64"): 2, np.dtype("int32"): 3}

WeightStore = dict[str, np.ndarray]


class ContainerError(ValueError):
    """Base error for weight-container parsing."""


class MagicError(ContainerError):
    """The stream does not start with the container magic."""


class VersionError(ContainerError):
    """The container version is not supported by this reader."""


class ChecksumError(ContainerError):
    """The trailing CRC32 does not match the stream contents."""


def serialize_store(store: WeightStore) -> bytes:
    """Encode a name -> array mapping; entries keep insertion order."""
    parts = [MAGIC, struct.pack("<H", CONTAINER_VERSION)]
    for name, arr in store.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODE_FOR_KIND:
            raise ContainerError(f"{name}: unsupported dtype {arr.dtype}")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", _CODE_FOR_KIND[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPE_CODES[_CODE_FOR_KIND[arr.dtype]]).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def deserialize_store(blob: bytes) -> WeightStore:
    """Decode a container; raises a named error for each failure mode."""
    if len(blob) < 10:
        raise ContainerError("container truncated before header")
    if blob[:4] != MAGIC:
        raise MagicError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != CONTAINER_VERSION:
        raise VersionError(f"unsupported container version {version}")
    (stated,) = struct.unpack_from("<I", blob, len(blob) - 4)
    actual = zlib.crc32(blob[:-4])
    if stated != actual:
        raise ChecksumError(f"checksum mismatch: stored {stated:#010x}, computed {actual:#010x}")
    store: WeightStore = {}
    pos = 6
    end = len(blob) - 4
    while pos < end:
        if pos + 2 > end:
            raise ContainerError("container truncated inside entry header")
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        if pos + name_len + 2 > end:
            raise ContainerError("container truncated inside entry name")
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        code, ndim = struct.unpack_from("<BB", blob, pos)
        pos += 2
        if code not in _DTYPE_CODES:
            raise ContainerError(f"{name}: unknown dtype code {code}")
        if pos + 4 * ndim > end:
            raise ContainerError(f"{name}: container truncated inside shape")
        shape = struct.unpack_from(f"<{ndim}I", blob, pos) if ndim else ()
        pos += 4 * ndim
        dtype = _DTYPE_CODES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        if pos + nbytes > end:
            raise ContainerError(f"{name}: container truncated inside payload")
        arr = np.frombuffer(blob, dtype=dtype, count=max(1, int(np.prod(shape, dtype=np.int64))),
                            offset=pos).reshape(shape).copy()
        store[name] = arr
        pos += nbytes
    return store


def save_store(path: str | Path, store: WeightStore) -> None:
    Path(path).write_bytes(serialize_store(store))


def load_store(path: str | Path) -> WeightStore:
    return deserialize_store(Path(path).read_bytes())


def quantize_store(store: WeightStore) -> WeightStore:
    """Int8-quantize every rank >= 2 float weight, per output channel.

    Each quantized tensor becomes an int8 entry plus a float32 ``<name>.scale``
    companion holding one scale per leading-axis slice. Biases and other
    rank < 2 entries stay float32; zero points are implicitly 0 (symmetric).
    """
    out: WeightStore = {}
    for name, arr in store.items():
        arr = np.asarray(arr)
        if arr.ndim >= 2 and arr.dtype.kind == "f":
            absmax = np.abs(arr).reshape(arr.shape[0], -1).max(axis=1)
            scale = (absmax / INT8_MAX).astype(np.float32)
            scale[scale == 0] = 1.0
            q = np.clip(np.rint(arr / scale.reshape((-1,) + (1,) * (arr.ndim - 1))),
                        -INT8_MAX, INT8_MAX).astype(np.int8)
            out[name] = q
            out[f"{name}.scale"] = scale
        else:
            out[name] = arr.astype(np.float32) if arr.dtype.kind == "f" else arr
    return out


def dequantize_store(store: WeightStore) -> WeightStore:
    """Inverse of :func:`quantize_store` up to quantization rounding."""
    out: WeightStore = {}
    for name, arr in store.items():
        if name.endswith(".scale"):
            continue
        arr = np.asarray(arr)
        if arr.dtype == np.int8:
            scale = store.get(f"{name}.scale")
            if scale is None:
                raise ContainerError(f"{name}: int8 entry has no companion scale")
            mult = np.asarray(scale, np.float32).reshape((-1,) + (1,) * (arr.ndim - 1))
            out[name] = arr.astype(np.float32) * mult
        else:
            out[name] = arr
    return out


def store_nbytes(store: WeightStore) -> int:
    return len(serialize_store(store))


# ---------------------------------------------------------------------------
# Topology text format
# ---------------------------------------------------------------------------

TOPOLOGY_HEADER = "splite-topology 1"


def save_topology(path: str | Path, topo: MeshTopology) -> None:
    lines = [TOPOLOGY_HEADER, f"levels {len(topo.levels)}"]
    for i, level in enumerate(topo.levels):
        has_pos = 1 if level.positions is not None else 0
        lines.append(f"level {i} {level.vertex_count} {len(level.faces)} {has_pos}")
        for a, b, c in level.faces:
            lines.append(f"f {a} {b} {c}")
        if has_pos:
            for x, y, z in level.positions:
                lines.append(f"p {float(x)!r} {float(y)!r} {float(z)!r}")
    for i, up in enumerate(topo.upsamples):
        lines.append(f"upsample {i} {up.shape[0]} {up.shape[1]} {len(up.values)}")
        for r, c, w in zip(up.rows, up.cols, up.values):
            lines.append(f"e {r} {c} {float(w)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def _topo_fail(line_no: int, message: str) -> TopologyError:
    return TopologyError(f"line {line_no}: {message}")


def load_topology(path: str | Path) -> MeshTopology:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or lines[0].strip() != TOPOLOGY_HEADER:
        raise TopologyError(f"not a topology file: expected header {TOPOLOGY_HEADER!r}")
    pos = 1

    def fields(expect_tag: str) -> tuple[int, list[str]]:
        nonlocal pos
        if pos >= len(lines):
            raise _topo_fail(len(lines), f"unexpected end of file, wanted {expect_tag!r}")
        parts = lines[pos].split()
        if not parts or parts[0] != expect_tag:
            raise _topo_fail(pos + 1, f"expected {expect_tag!r} line, got {lines[pos]!r}")
        pos += 1
        return pos, parts[1:]

    _, rest = fields("levels")
    num_levels = int(rest[0])
    levels = []
    for i in range(num_levels):
        line_no, rest = fields("level")
        if int(rest[0]) != i:
            raise _topo_fail(line_no, f"level index {rest[0]}, expected {i}")
        vcount, fcount, has_pos = int(rest[1]), int(rest[2]), int(rest[3])
        faces = np.empty((fcount, 3), np.int32)
        for f in range(fcount):
            line_no, rest = fields("f")
            faces[f] = [int(x) for x in rest[:3]]
            if faces[f].min() < 0 or faces[f].max() >= vcount:
                raise _topo_fail(line_no, f"level {i} face {f}: vertex index out of range")
        positions = None
        if has_pos:
            positions = np.empty((vcount, 3), np.float32)
            for v in range(vcount):
                _, rest = fields("p")
                positions[v] = [float(x) for x in rest[:3]]
        levels.append(MeshLevel(vertex_count=vcount, faces=faces, positions=positions))
    upsamples = []
    for i in range(max(0, num_levels - 1)):
        line_no, rest = fields("upsample")
        if int(rest[0]) != i:
            raise _topo_fail(line_no, f"upsample index {rest[0]}, expected {i}")
        rows_n, cols_n, nnz = int(rest[1]), int(rest[2]), int(rest[3])
        rows = np.empty(nnz, np.int32)
        cols = np.empty(nnz, np.int32)
        values = np.empty(nnz, np.float32)
        for e in range(nnz):
            _, rest = fields("e")
            rows[e], cols[e], values[e] = int(rest[0]), int(rest[1]), float(rest[2])
        up = UpsampleMatrix(shape=(rows_n, cols_n), rows=rows, cols=cols, values=values)
        up.validate(context=f"upsample {i}")
        upsamples.append(up)
    return MeshTopology(levels=tuple(levels), upsamples=tuple(upsamples))


# ---------------------------------------------------------------------------
# Prediction records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PredictionRecord:
    """One image's outputs. Deliberately excludes timings so bytes are stable."""

    image: str
    input_sparsity: float
    landmarks_px: list  # (K, 2) pixel positions
    confidence: list  # (K,)
    joints_3d: list  # (K, 3) camera-space metres
    mesh_vertices: int

    def to_json(self) -> str:
        payload = {
            "image": self.image,
            "input_sparsity": float(self.input_sparsity),
            "landmarks_px": [[float(a), float(b)] for a, b in self.landmarks_px],
            "confidence": [float(c) for c in self.confidence],
            "joints_3d": [[float(x), float(y), float(z)] for x, y, z in self.joints_3d],
            "mesh_vertices": int(self.mesh_vertices),
        }
        return json.dumps(payload, sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "PredictionRecord":
        d = json.loads(line)
        try:
            return PredictionRecord(
                image=d["image"], input_sparsity=d["input_sparsity"],
                landmarks_px=d["landmarks_px"], confidence=d["confidence"],
                joints_3d=d["joints_3d"], mesh_vertices=d["mesh_vertices"],
            )
        except KeyError as exc:
            raise TensorError(f"prediction record missing field {exc.args[0]!r}") from None


def write_records(path: str | Path, records: list[PredictionRecord]) -> None:
    Path(path).write_text("".join(r.to_json() + "\n" for r in records))


def read_records(path: str | Path) -> list[PredictionRecord]:
    return [PredictionRecord.from_json(line)
            for line in Path(path).read_text().splitlines() if line.strip()]
