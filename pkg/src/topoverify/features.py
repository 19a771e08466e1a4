"""Feature sets, feature file I/O, and descriptor matching.

Two on-disk forms are accepted wherever a feature set is read:

* text: a header line ``image_id width height count dim`` followed by one line
  per keypoint, ``x y scale orientation d_1 ... d_D``;
* binary: magic ``TPFV1``, little-endian ``u32`` count and dim, then per record
  four ``float32`` (x, y, scale, orientation) and ``D`` ``float32`` descriptor
  entries.

The binary form carries neither the image id nor the image extent. The id is
taken from the file stem and the extent, unless given, from the keypoints.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .geometry import Patch

BINARY_MAGIC = b"TPFV1"
DEFAULT_RATIO = 0.8


class FeatureFormatError(ValueError):
    """A feature file does not follow either accepted layout."""


class DimensionError(FeatureFormatError):
    """Descriptor lengths disagree within a file or with its header."""


class InsufficientFeaturesError(ValueError):
    """Too few keypoints in the second set for a ratio test."""


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    orientation: float


@dataclass(frozen=True)
class Match:
    idx1: int
    idx2: int
    distance: float
    ratio: float


@dataclass
class FeatureSet:
    """Keypoints and descriptors of one image, stored column-wise.

    Attributes:
        image_id: Identifier, no whitespace.
        width, height: Image extent in pixels.
        xy: (N, 2) keypoint locations.
        scale: (N,) characteristic radii.
        orientation: (N,) angles in radians.
        descriptors: (N, D) descriptor matrix.
    """

    image_id: str
    width: float
    height: float
    xy: np.ndarray
    scale: np.ndarray
    orientation: np.ndarray
    descriptors: np.ndarray

    def __post_init__(self) -> None:
        self.xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        n = len(self.xy)
        self.scale = np.asarray(self.scale, dtype=float).reshape(n)
        self.orientation = np.asarray(self.orientation, dtype=float).reshape(n)
        d = np.asarray(self.descriptors, dtype=float)
        if d.size == 0:
            d = d.reshape(n, d.shape[-1] if d.ndim == 2 else 0)
        self.descriptors = d
        self.validate()

    def validate(self) -> None:
        n = len(self.xy)
        if self.descriptors.ndim != 2 or len(self.descriptors) != n:
            raise DimensionError(
                f"{self.image_id}: {n} keypoints but descriptor array of shape {self.descriptors.shape}"
            )
        if not (self.width > 0 and self.height > 0):
            raise FeatureFormatError(f"{self.image_id}: image extent must be positive")
        bad = ~np.isfinite(self.xy).all(axis=1)
        bad |= (self.xy[:, 0] < 0) | (self.xy[:, 1] < 0)
        bad |= (self.xy[:, 0] > self.width) | (self.xy[:, 1] > self.height)
        bad |= ~(self.scale > 0) | ~np.isfinite(self.scale) | ~np.isfinite(self.orientation)
        bad |= ~np.isfinite(self.descriptors).all(axis=1)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise FeatureFormatError(f"{self.image_id}: invalid keypoint record {i}")

    def __len__(self) -> int:
        return len(self.xy)

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]

    def keypoint(self, i: int) -> Keypoint:
        return Keypoint(
            float(self.xy[i, 0]), float(self.xy[i, 1]), float(self.scale[i]), float(self.orientation[i])
        )

    def subset(self, idx: np.ndarray) -> FeatureSet:
        idx = np.asarray(idx, dtype=int)
        return FeatureSet(
            self.image_id,
            self.width,
            self.height,
            self.xy[idx],
            self.scale[idx],
            self.orientation[idx],
            self.descriptors[idx],
        )

    def crop(self, bbox: tuple[float, float, float, float]) -> FeatureSet:
        """Keep keypoints strictly inside ``(x_min, y_min, x_max, y_max)``."""
        x0, y0, x1, y1 = bbox
        x, y = self.xy[:, 0], self.xy[:, 1]
        keep = (x > x0) & (x < x1) & (y > y0) & (y < y1)
        return self.subset(np.flatnonzero(keep))

    def translated(self, dx: float, dy: float) -> FeatureSet:
        return FeatureSet(
            self.image_id,
            self.width,
            self.height,
            self.xy + np.array([dx, dy]),
            self.scale,
            self.orientation,
            self.descriptors,
        )


# --------------------------------------------------------------------------
# File I/O
# --------------------------------------------------------------------------


def _fmt(v: float) -> str:
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


def load_features(
    path: str | Path, width: float | None = None, height: float | None = None
) -> FeatureSet:
    """Read a feature file in either text or binary form.

    `width` and `height` are only consulted for binary files, which do not
    record the image extent; when omitted the extent is the ceiling of the
    largest keypoint coordinate (at least 1 pixel).
    """
    path = Path(path)
    raw = path.read_bytes()
    if raw.startswith(BINARY_MAGIC):
        return _load_binary(raw, path.stem, width, height)
    return _load_text(raw, path)


def _load_text(raw: bytes, path: Path) -> FeatureSet:
    try:
        lines = raw.decode("ascii").splitlines()
    except UnicodeDecodeError as exc:
        raise FeatureFormatError(f"{path}: not a text feature file") from exc
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise FeatureFormatError(f"{path}: missing header line")
    head = lines[0].split()
    if len(head) != 5:
        raise FeatureFormatError(f"{path}: header must be 'image_id width height count dim'")
    image_id = head[0]
    try:
        width, height = float(head[1]), float(head[2])
        count, dim = int(head[3]), int(head[4])
    except ValueError as exc:
        raise FeatureFormatError(f"{path}: malformed header {lines[0]!r}") from exc
    if len(lines) - 1 != count:
        raise FeatureFormatError(f"{path}: header declares {count} records, found {len(lines) - 1}")
    rows = np.empty((count, 4 + dim), dtype=float)
    for i, ln in enumerate(lines[1:]):
        parts = ln.split()
        if len(parts) != 4 + dim:
            raise DimensionError(
                f"{path}: record {i} has {len(parts) - 4} descriptor entries, expected {dim}"
            )
        try:
            rows[i] = [float(p) for p in parts]
        except ValueError as exc:
            raise FeatureFormatError(f"{path}: record {i} is not numeric") from exc
    try:
        return FeatureSet(image_id, width, height, rows[:, :2], rows[:, 2], rows[:, 3], rows[:, 4:])
    except FeatureFormatError as exc:
        raise type(exc)(f"{path}: {exc}") from exc


def _load_binary(raw: bytes, stem: str, width: float | None, height: float | None) -> FeatureSet:
    off = len(BINARY_MAGIC)
    if len(raw) < off + 8:
        raise FeatureFormatError(f"{stem}: truncated binary header")
    count, dim = struct.unpack_from("<II", raw, off)
    off += 8
    expected = count * (4 + dim) * 4
    if len(raw) - off != expected:
        raise FeatureFormatError(
            f"{stem}: binary payload is {len(raw) - off} bytes, expected {expected} "
            f"for {count} records of dim {dim}"
        )
    rows = np.frombuffer(raw, dtype="<f4", offset=off).reshape(count, 4 + dim).astype(float)
    xy = rows[:, :2]
    if width is None:
        width = max(1.0, math.ceil(float(xy[:, 0].max()))) if count else 1.0
    if height is None:
        height = max(1.0, math.ceil(float(xy[:, 1].max()))) if count else 1.0
    return FeatureSet(stem, width, height, xy, rows[:, 2], rows[:, 3], rows[:, 4:])


def save_features(fs: FeatureSet, path: str | Path, binary: bool = False) -> None:
    path = Path(path)
    if binary:
        body = np.hstack(
            [fs.xy, fs.scale[:, None], fs.orientation[:, None], fs.descriptors]
        ).astype("<f4")
        path.write_bytes(BINARY_MAGIC + struct.pack("<II", len(fs), fs.dim) + body.tobytes())
        return
    out = [f"{fs.image_id} {_fmt(fs.width)} {_fmt(fs.height)} {len(fs)} {fs.dim}"]
    for i in range(len(fs)):
        vals = [fs.xy[i, 0], fs.xy[i, 1], fs.scale[i], fs.orientation[i], *fs.descriptors[i]]
        out.append(" ".join(_fmt(v) for v in vals))
    path.write_text("\n".join(out) + "\n")


# --------------------------------------------------------------------------
# Matching
# --------------------------------------------------------------------------


def _two_nearest(d1: np.ndarray, d2: np.ndarray):
    """Nearest index, nearest distance, and second-nearest distance for each row of d1.

    Ties resolve to the lowest index in d2. Second distance is inf when d2 has one row.
    """
    dist = cdist(d1, d2)
    nn = np.argmin(dist, axis=1)
    rows = np.arange(len(d1))
    first = dist[rows, nn]
    if dist.shape[1] < 2:
        return nn, first, np.full(len(d1), np.inf)
    dist[rows, nn] = np.inf
    second = dist.min(axis=1)
    return nn, first, second


def _ratios(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(second > 0, first / second, 1.0)
    return np.where(np.isinf(second), 0.0, r)


def ratio_test_match(
    p1: FeatureSet, p2: FeatureSet, ratio_threshold: float = DEFAULT_RATIO
) -> list[Match]:
    """Nearest-neighbour matching with the nearest/second-nearest distance ratio test.

    Every keypoint of `p1` yields at most one match, kept when its ratio is at
    most `ratio_threshold`. Output is sorted by ``idx1``.
    """
    if not 0 < ratio_threshold <= 1:
        raise ValueError(f"ratio threshold must lie in (0, 1], got {ratio_threshold}")
    if len(p2) < 2:
        raise InsufficientFeaturesError(
            f"ratio test needs at least 2 keypoints in the second set, got {len(p2)}"
        )
    if len(p1) == 0:
        return []
    if p1.dim != p2.dim:
        raise DimensionError(f"descriptor dimensions differ: {p1.dim} vs {p2.dim}")
    nn, first, second = _two_nearest(p1.descriptors, p2.descriptors)
    ratio = _ratios(first, second)
    keep = np.flatnonzero(ratio <= ratio_threshold)
    return [Match(int(i), int(nn[i]), float(first[i]), float(ratio[i])) for i in keep]


def restricted_nn(p1: FeatureSet, r1: Patch, p2: FeatureSet, r2: Patch):
    """Array form of `restricted_match`: (idx1, idx2, distance, ratio) arrays."""
    in1 = np.flatnonzero(r1.contains(p1.xy))
    in2 = np.flatnonzero(r2.contains(p2.xy))
    if len(in1) == 0 or len(in2) == 0:
        empty = np.zeros(0, dtype=int)
        return empty, empty, np.zeros(0), np.zeros(0)
    nn, first, second = _two_nearest(p1.descriptors[in1], p2.descriptors[in2])
    return in1, in2[nn], first, _ratios(first, second)


def restricted_match(p1: FeatureSet, r1: Patch, p2: FeatureSet, r2: Patch) -> list[Match]:
    """Match each keypoint of `p1` inside `r1` to its nearest neighbour among the
    keypoints of `p2` inside `r2`. No ratio test is applied."""
    i1, i2, dist, ratio = restricted_nn(p1, r1, p2, r2)
    return [Match(int(a), int(b), float(d), float(r)) for a, b, d, r in zip(i1, i2, dist, ratio)]
