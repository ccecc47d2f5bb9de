"""Georeferenced feature database: build, match, serialize.

Database entries pair a descriptor with a 2-D geodetic ground position.
Positions are quantized to a map-pixel grid (the `stride`) when the
database is built, mirroring how features are extracted from a raster map
at fixed spacing rather than at exact landmark locations.

Binary file layout (all little-endian, no padding):

    magic            8 bytes  b"GFMAPDB\\0"
    version          uint32   currently 1
    descriptor_dim   uint32
    entry_count      uint64
    stride_px        uint32
    resolution_m     float64
    map_width_px     uint32
    map_height_px    uint32
    entries          entry_count records of (2 + descriptor_dim) float64:
                     east, north, descriptor components

float64 storage makes load(save(db)) bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .frames import MapGeometry, map_pixel_to_geodetic
from .simulation import NoiseConfig, WorldModel, synthesize_descriptor

__all__ = [
    "MapFeatureDB",
    "MatchSet",
    "MapDbFormatError",
    "build_map_db",
    "match_descriptors",
    "save_db",
    "load_db",
]

_MAGIC = b"GFMAPDB\x00"
_VERSION = 1
_HEADER = struct.Struct("<8sIIQIdII")

_MATCH_BLOCK = 256  # queries per cdist block, bounds the distance-matrix size


class MapDbFormatError(ValueError):
    """Raised when a database file fails an integrity check."""


@dataclass(frozen=True)
class MapFeatureDB:
    """Descriptor-indexed map: positions (M, 2) geodetic meters, descriptors (M, d)."""

    geom: MapGeometry
    stride_px: int
    positions: np.ndarray
    descriptors: np.ndarray

    def __post_init__(self):
        pos = np.ascontiguousarray(np.asarray(self.positions, dtype=np.float64).reshape(-1, 2))
        desc = np.ascontiguousarray(np.asarray(self.descriptors, dtype=np.float64))
        if desc.ndim != 2 or desc.shape[0] != pos.shape[0]:
            raise ValueError("positions and descriptors must have matching entry counts")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "descriptors", desc)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def descriptor_dim(self) -> int:
        return self.descriptors.shape[1]


@dataclass(frozen=True)
class MatchSet:
    """Best database match per query feature; arrays are index-aligned.

    Each query index appears at most once. Ties on distance resolve to the
    lowest map index.
    """

    query_indices: np.ndarray
    map_indices: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "query_indices", np.asarray(self.query_indices, dtype=np.int64))
        object.__setattr__(self, "map_indices", np.asarray(self.map_indices, dtype=np.int64))
        object.__setattr__(self, "distances", np.asarray(self.distances, dtype=np.float64))

    def __len__(self) -> int:
        return self.query_indices.shape[0]


def build_map_db(world: WorldModel, stride_px: int, noise: NoiseConfig, rng) -> MapFeatureDB:
    """Extract a feature database from the world.

    One entry per landmark, in landmark order: the landmark's map pixel is
    snapped to the nearest stride-grid node (quantization <= stride/2 px
    per axis), converted back to geodetic meters, and paired with a
    noise-perturbed copy of the landmark descriptor. `noise.distractor_count`
    additional entries with random unit descriptors at random grid nodes are
    appended after the landmarks.
    """
    if stride_px <= 0:
        raise ValueError("stride must be positive")
    if world.landmark_count == 0:
        raise ValueError("cannot build a database from an empty world")
    geom = world.geom
    px = np.stack(
        [world.positions[:, 0] / geom.resolution, -world.positions[:, 1] / geom.resolution],
        axis=1,
    )
    snapped = np.round(px / stride_px) * stride_px
    snapped[:, 0] = np.clip(snapped[:, 0], 0, (geom.width_px // stride_px) * stride_px)
    snapped[:, 1] = np.clip(snapped[:, 1], 0, (geom.height_px // stride_px) * stride_px)
    positions = map_pixel_to_geodetic(snapped, geom)

    if noise.descriptor_sigma > 0.0:
        descriptors = np.array(
            [synthesize_descriptor(d, noise.descriptor_sigma, rng) for d in world.descriptors]
        )
    else:
        descriptors = world.descriptors.copy()

    if noise.distractor_count > 0:
        grid_u = rng.integers(0, geom.width_px // stride_px + 1, size=noise.distractor_count) * stride_px
        grid_v = rng.integers(0, geom.height_px // stride_px + 1, size=noise.distractor_count) * stride_px
        d_pos = map_pixel_to_geodetic(np.stack([grid_u, grid_v], axis=1).astype(float), geom)
        d_desc = rng.normal(size=(noise.distractor_count, world.descriptor_dim))
        d_desc /= np.linalg.norm(d_desc, axis=1, keepdims=True)
        positions = np.vstack([positions, d_pos])
        descriptors = np.vstack([descriptors, d_desc])

    return MapFeatureDB(geom, stride_px, positions, descriptors)


def match_descriptors(descriptors, db: MapFeatureDB, ratio: float = 0.8) -> MatchSet:
    """Exact nearest-neighbor match of query descriptors against the database.

    Euclidean distance, computed exhaustively (blockwise). A Lowe ratio
    test keeps a match only when best < ratio * second_best, strictly;
    ratio = 1 disables the test, as does a single-entry database.
    Empty query or empty database yields an empty MatchSet.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    q = np.asarray(descriptors, dtype=np.float64)
    if q.ndim == 1:
        q = q.reshape(1, -1)
    n = q.shape[0]
    if n == 0 or len(db) == 0:
        return MatchSet(np.zeros(0), np.zeros(0), np.zeros(0))
    if q.shape[1] != db.descriptor_dim:
        raise ValueError(f"query dim {q.shape[1]} != db dim {db.descriptor_dim}")

    best_idx = np.empty(n, dtype=np.int64)
    best_d = np.empty(n)
    second_d = np.full(n, np.inf)
    two = len(db) >= 2
    for start in range(0, n, _MATCH_BLOCK):
        stop = min(start + _MATCH_BLOCK, n)
        d2 = cdist(q[start:stop], db.descriptors, "sqeuclidean")
        idx = np.argmin(d2, axis=1)  # first occurrence == lowest map index
        best_idx[start:stop] = idx
        best_d[start:stop] = np.sqrt(np.maximum(d2[np.arange(len(idx)), idx], 0.0))
        if two:
            part = np.partition(d2, 1, axis=1)
            second_d[start:stop] = np.sqrt(np.maximum(part[:, 1], 0.0))

    if ratio < 1.0 and two:
        keep = best_d < ratio * second_d
    else:
        keep = np.ones(n, dtype=bool)
    qi = np.nonzero(keep)[0]
    return MatchSet(qi, best_idx[qi], best_d[qi])


def save_db(db: MapFeatureDB, path) -> None:
    """Write the fixed-layout binary format described in the module docstring."""
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        db.descriptor_dim,
        len(db),
        db.stride_px,
        db.geom.resolution,
        db.geom.width_px,
        db.geom.height_px,
    )
    payload = np.hstack([db.positions, db.descriptors]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes(order="C"))


def load_db(path) -> MapFeatureDB:
    """Read a database written by save_db, verifying every header field."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise MapDbFormatError(f"truncated header: {len(raw)} bytes, need {_HEADER.size}")
    magic, version, dim, count, stride, resolution, width, height = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise MapDbFormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise MapDbFormatError(f"unsupported version {version}")
    if dim == 0:
        raise MapDbFormatError("descriptor_dim is zero")
    if stride == 0:
        raise MapDbFormatError("stride_px is zero")
    expected = _HEADER.size + count * (2 + dim) * 8
    if len(raw) != expected:
        raise MapDbFormatError(
            f"entry payload size mismatch: file has {len(raw)} bytes, "
            f"entry_count={count} descriptor_dim={dim} implies {expected}"
        )
    try:
        geom = MapGeometry(resolution, width, height)
    except ValueError as e:
        raise MapDbFormatError(f"bad map geometry: {e}") from e
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(count, 2 + dim)
    return MapFeatureDB(geom, stride, data[:, :2].copy(), data[:, 2:].copy())
