"""Spatial verification baseline: one similarity hypothesis per tentative match,
scored by the number of matches it carries to within `epsilon` pixels."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .features import DEFAULT_RATIO, FeatureSet, Match, ratio_test_match


class InvalidKeypointError(ValueError):
    pass


@dataclass(frozen=True)
class SpatialConfig:
    epsilon: float = 8.0
    max_hypotheses: int = 1000
    clamp_rotation: bool = False

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_hypotheses < 1:
            raise ValueError(f"max_hypotheses must be at least 1, got {self.max_hypotheses}")


@dataclass(frozen=True)
class AffineHypothesis:
    """Row-major 3x3 transform acting on column vectors ``(x, y, 1)``."""

    m: np.ndarray
    source_match: int | None = None

    def __post_init__(self) -> None:
        m = np.asarray(self.m, dtype=float)
        if m.shape != (3, 3) or not np.isfinite(m).all():
            raise ValueError("hypothesis matrix must be a finite 3x3 array")
        if not np.allclose(m[2], [0.0, 0.0, 1.0]):
            raise ValueError("hypothesis matrix must have last row [0, 0, 1]")
        if abs(np.linalg.det(m[:2, :2])) <= 1e-12:
            raise ValueError("hypothesis matrix is singular")
        object.__setattr__(self, "m", m)

    def apply(self, xy: np.ndarray) -> np.ndarray:
        return xy @ self.m[:2, :2].T + self.m[:2, 2]

    @classmethod
    def identity(cls) -> AffineHypothesis:
        return cls(np.eye(3), None)


@dataclass
class SpResult:
    best: AffineHypothesis
    inlier_count: int
    inlier_matches: list[Match]


def hypothesis_from_match(
    match: Match, p1: FeatureSet, p2: FeatureSet, index: int | None = None, clamp_rotation: bool = False
) -> AffineHypothesis:
    """Similarity transform carrying keypoint ``idx1`` onto keypoint ``idx2``.

    Scale is the ratio of keypoint scales, rotation the orientation difference
    (zero when `clamp_rotation`), translation whatever maps the two locations.
    """
    k1 = p1.keypoint(match.idx1)
    k2 = p2.keypoint(match.idx2)
    if not (k1.scale > 0 and k2.scale > 0):
        raise InvalidKeypointError(f"match {match} references a keypoint with zero scale")
    s = k2.scale / k1.scale
    theta = 0.0 if clamp_rotation else k2.orientation - k1.orientation
    c, sn = s * math.cos(theta), s * math.sin(theta)
    tx = k2.x - (c * k1.x - sn * k1.y)
    ty = k2.y - (sn * k1.x + c * k1.y)
    return AffineHypothesis(np.array([[c, -sn, tx], [sn, c, ty], [0.0, 0.0, 1.0]]), index)


def _residuals(h: AffineHypothesis, matches: list[Match], p1: FeatureSet, p2: FeatureSet) -> np.ndarray:
    i1 = np.fromiter((m.idx1 for m in matches), dtype=int, count=len(matches))
    i2 = np.fromiter((m.idx2 for m in matches), dtype=int, count=len(matches))
    return np.linalg.norm(h.apply(p1.xy[i1]) - p2.xy[i2], axis=1)


def count_inliers(
    h: AffineHypothesis, matches: list[Match], p1: FeatureSet, p2: FeatureSet, epsilon: float
) -> tuple[int, list[Match]]:
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not matches:
        return 0, []
    inl = _residuals(h, matches, p1, p2) < epsilon
    kept = [m for m, ok in zip(matches, inl) if ok]
    return len(kept), kept


def _batch_counts(mats: np.ndarray, src: np.ndarray, dst: np.ndarray, eps: float) -> np.ndarray:
    # mats: (H, 3, 3); src/dst: (M, 2)
    proj = np.einsum("hij,mj->hmi", mats[:, :2, :2], src) + mats[:, None, :2, 2]
    return (np.linalg.norm(proj - dst[None], axis=2) < eps).sum(axis=1)


def spatial_verify(
    p1: FeatureSet,
    p2: FeatureSet,
    cfg: SpatialConfig | None = None,
    ratio_threshold: float = DEFAULT_RATIO,
    matches: list[Match] | None = None,
    threads: int = 1,
) -> SpResult:
    """Exhaustive single-correspondence RANSAC.

    Hypotheses are taken from the ratio-test matches in ascending ratio order,
    at most ``cfg.max_hypotheses`` of them. The winner is the hypothesis with
    the most inliers; ties go to the lowest generating match index.
    """
    cfg = cfg or SpatialConfig()
    if matches is None:
        matches = ratio_test_match(p1, p2, ratio_threshold) if len(p1) and len(p2) >= 2 else []
    if not matches:
        return SpResult(AffineHypothesis.identity(), 0, [])

    order = sorted(range(len(matches)), key=lambda i: (matches[i].ratio, i))[: cfg.max_hypotheses]
    hyps = [hypothesis_from_match(matches[i], p1, p2, i, cfg.clamp_rotation) for i in order]
    i1 = np.array([m.idx1 for m in matches])
    i2 = np.array([m.idx2 for m in matches])
    src, dst = p1.xy[i1], p2.xy[i2]
    mats = np.stack([h.m for h in hyps])

    # chunk so the (H, M, 2) intermediate stays small
    chunk = max(1, 2_000_000 // (2 * len(matches)))
    starts = range(0, len(hyps), chunk)
    work = lambda s: _batch_counts(mats[s : s + chunk], src, dst, cfg.epsilon)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    counts = np.concatenate(parts)

    best_count = counts.max()
    best = min(h.source_match for h, c in zip(hyps, counts) if c == best_count)
    h = hyps[order.index(best)]
    n, inliers = count_inliers(h, matches, p1, p2, cfg.epsilon)
    return SpResult(h, n, inliers)
