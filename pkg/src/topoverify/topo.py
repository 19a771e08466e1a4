"""Topological verification of an image pair.

Every ratio-test match seeds a pair of corresponding patches. Starting from
the seed, a region of patch pairs is grown: the saccade step proposes
neighbouring patches that intersect exactly one verified patch, and the fovea
step accepts a proposal when its keypoints, matched only against the
corresponding patch in the other image, land in the corresponding cells of a
coarse sub-patch grid. A region is valid when

1. every member pair passed the fovea test,
2. two members overlap in image 1 exactly when they overlap in image 2,
3. the members form one connected cluster in image 1.

The size of the largest region is the similarity score of the pair.
"""

from __future__ import annotations

import heapq
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .features import DEFAULT_RATIO, FeatureSet, Match, ratio_test_match, restricted_nn
from .geometry import EDGE_TOL, Patch, bounding_patch, overlaps_many, patches_array, union_area
from .spatial import SpatialConfig, spatial_verify

METRICS = ("pairs", "keypoints", "area")
ADJUST_MARGIN = 0.05
# per-axis scale changes a single patch pair may imply
MAP_SCALE_LIMITS = (0.2, 5.0)
# regions at least this large make later seeds inside them redundant
SKIP_REGION_SIZE = 4

# neighbour offsets in lattice steps, row-major so proposal order is fixed
_OFFSETS = [(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dx, dy) != (0, 0)]


@dataclass(frozen=True)
class TopoConfig:
    patch_fraction: float = 1.0 / 8.0
    alpha: float = 0.2
    grid: int = 3
    overlap_step: float = 0.5
    max_hypotheses: int = 1000
    min_keypoints_per_patch: int = 4
    metric: str = "pairs"
    skip_covered_seeds: bool = True
    sp_filter: bool = False

    def __post_init__(self) -> None:
        if not 0 < self.patch_fraction < 1:
            raise ValueError(f"patch_fraction must lie in (0, 1), got {self.patch_fraction}")
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.grid < 1:
            raise ValueError(f"grid must be at least 1, got {self.grid}")
        if not 0 < self.overlap_step < 1:
            raise ValueError(f"overlap_step must lie in (0, 1), got {self.overlap_step}")
        if self.max_hypotheses < 1:
            raise ValueError(f"max_hypotheses must be at least 1, got {self.max_hypotheses}")
        if self.min_keypoints_per_patch < 0:
            raise ValueError("min_keypoints_per_patch must be non-negative")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")


@dataclass(frozen=True)
class PatchPair:
    """Corresponding patches in image 1 and image 2.

    `r2` is the patch in image 2, after adjustment once the pair has been
    verified. `window` is the search region in image 2 the fovea test used.
    `r1_mapped` is where the matched keypoints put `r1` in image 2; the saccade
    step extrapolates from it, falling back to `r2`.
    """

    r1: Patch
    r2: Patch
    score: float | None = None
    window: Patch | None = None
    r1_mapped: Patch | None = None


@dataclass
class GrowthState:
    verified: list[PatchPair] = field(default_factory=list)
    frontier: list[PatchPair] = field(default_factory=list)
    # r1 centers ever proposed, including ones already popped and rejected
    seen: list[tuple[float, float]] = field(default_factory=list)


@dataclass(frozen=True)
class FoveaOutcome:
    r2: Patch
    score: float
    verified: bool
    r1_mapped: Patch | None = None
    idx1: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    idx2: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    distance: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ratio: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass(frozen=True)
class TraceEntry:
    r1: Patch
    window: Patch
    r2: Patch
    score: float
    accepted: bool
    reason: str


@dataclass
class HomeomorphismRegion:
    pairs: list[PatchPair] = field(default_factory=list)
    matched_keypoints: list[Match] = field(default_factory=list)
    seed: int | None = None
    image_size: tuple[float, float] = (1.0, 1.0)
    trace: list[TraceEntry] = field(default_factory=list)

    def covers(self, xy: tuple[float, float]) -> bool:
        return _covers(_r1_bounds(self), xy)


def _r1_bounds(region: HomeomorphismRegion) -> np.ndarray:
    return np.array([p.r1.bounds for p in region.pairs], dtype=float).reshape(-1, 4)


def _covers(bounds: np.ndarray, xy: tuple[float, float]) -> bool:
    x, y = xy
    b = bounds
    t = EDGE_TOL
    return bool(((b[:, 0] - t <= x) & (x <= b[:, 2] + t) & (b[:, 1] - t <= y) & (y <= b[:, 3] + t)).any())


@dataclass
class TpResult:
    best: HomeomorphismRegion
    score: float
    metric: str = "pairs"
    all_regions: list[HomeomorphismRegion] | None = None


@dataclass(frozen=True)
class ValidityReport:
    ok: bool
    condition: int | None = None
    pairs: tuple[int, ...] = ()
    message: str = ""

    def __bool__(self) -> bool:
        return self.ok


FoveaFn = Callable[[Patch, Patch], FoveaOutcome]


# --------------------------------------------------------------------------
# Hypotheses
# --------------------------------------------------------------------------


def hypothesis_order(matches: list[Match], cap: int) -> list[int]:
    """Indices of the first `cap` matches by ascending ratio, ties by index."""
    return sorted(range(len(matches)), key=lambda i: (matches[i].ratio, i))[:cap]


def seed_pair(match: Match, p1: FeatureSet, p2: FeatureSet, cfg: TopoConfig) -> PatchPair:
    half = cfg.patch_fraction * min(p1.width, p1.height) / 2.0
    k1, k2 = p1.keypoint(match.idx1), p2.keypoint(match.idx2)
    s = k2.scale / k1.scale
    r1 = Patch(k1.x, k1.y, half, half)
    r2 = Patch(k2.x, k2.y, half * s, half * s)
    return PatchPair(r1, r2, None, r2, None)


def build_hypotheses(
    matches: list[Match], p1: FeatureSet, p2: FeatureSet, cfg: TopoConfig
) -> list[PatchPair]:
    """One seed patch pair per match, at most ``cfg.max_hypotheses`` in ascending ratio order.

    Each seed is a pure translation plus scale: `r1` is centred on the image-1
    keypoint with side ``patch_fraction * min(width, height)``, `r2` is centred
    on the image-2 keypoint and scaled by the keypoint scale ratio.
    """
    return [seed_pair(matches[i], p1, p2, cfg) for i in hypothesis_order(matches, cfg.max_hypotheses)]


# --------------------------------------------------------------------------
# Saccade
# --------------------------------------------------------------------------


def _inside(c: tuple[float, float], bounds: tuple[float, float]) -> bool:
    return 0.0 < c[0] < bounds[0] and 0.0 < c[1] < bounds[1]


def saccade(
    state: GrowthState,
    cfg: TopoConfig,
    bounds1: tuple[float, float],
    bounds2: tuple[float, float],
    generators: list[PatchPair] | None = None,
) -> list[PatchPair]:
    """Propose candidate pairs around verified pairs.

    Each generating pair offers its eight lattice neighbours, one step
    (``overlap_step`` of the patch side) away on each axis. The image-2 window
    of a neighbour extrapolates the generating pair's local mapping, `r1` onto
    `r1_mapped` (or onto `r2` when no mapping was fitted): the neighbour's offset
    is scaled per axis by that pair's size ratio.

    A candidate is dropped when its `r1` intersects zero or several verified
    `r1`, when its center lies within half a step of a verified or already
    proposed center, or when either center falls outside its image.
    """
    if not state.verified:
        raise ValueError("saccade needs at least one verified pair")
    gens = state.verified if generators is None else generators
    verified1 = patches_array(p.r1 for p in state.verified)
    known = [p.r1.center for p in state.verified]
    known += [p.r1.center for p in state.frontier]
    known += state.seen
    known_arr = np.asarray(known, dtype=float).reshape(-1, 2)
    out: list[PatchPair] = []
    fresh: list[tuple[float, float]] = []

    for g in gens:
        r1 = g.r1
        step_x = cfg.overlap_step * 2.0 * r1.half_w
        step_y = cfg.overlap_step * 2.0 * r1.half_h
        src = g.r1
        dst = g.r1_mapped or g.r2
        sx, sy = dst.half_w / src.half_w, dst.half_h / src.half_h
        for dx, dy in _OFFSETS:
            c1 = (r1.cx + dx * step_x, r1.cy + dy * step_y)
            c2 = (dst.cx + (c1[0] - src.cx) * sx, dst.cy + (c1[1] - src.cy) * sy)
            if not (_inside(c1, bounds1) and _inside(c2, bounds2)):
                continue
            cand1 = Patch(c1[0], c1[1], r1.half_w, r1.half_h)
            if int(overlaps_many(cand1, verified1).sum()) != 1:
                continue
            pool = np.vstack([known_arr, np.asarray(fresh, dtype=float).reshape(-1, 2)])
            if len(pool):
                near = (np.abs(pool[:, 0] - c1[0]) < step_x / 2) & (np.abs(pool[:, 1] - c1[1]) < step_y / 2)
                if near.any():
                    continue
            window = Patch(c2[0], c2[1], r1.half_w * sx, r1.half_h * sy)
            out.append(PatchPair(cand1, window, None, window, None))
            fresh.append(c1)
    return out


# --------------------------------------------------------------------------
# Fovea
# --------------------------------------------------------------------------


def adjust_patch(
    r1: Patch,
    r2: Patch,
    matches: list[Match],
    p2: FeatureSet,
    min_keypoints: int = 4,
    margin: float = ADJUST_MARGIN,
) -> Patch:
    """Bounding rectangle of the matched image-2 keypoints, grown by `margin`.

    With fewer than `min_keypoints` matches `r2` is returned unchanged.
    """
    if len(matches) < max(1, min_keypoints):
        return r2
    return bounding_patch(p2.xy[[m.idx2 for m in matches]], margin)


def _cells(xy: np.ndarray, frame: Patch, grid: int) -> np.ndarray:
    x0, y0, _, _ = frame.bounds
    u = np.floor((xy[:, 0] - x0) / (2.0 * frame.half_w) * grid).astype(int)
    v = np.floor((xy[:, 1] - y0) / (2.0 * frame.half_h) * grid).astype(int)
    return np.clip(v, 0, grid - 1) * grid + np.clip(u, 0, grid - 1)


def subpatch_score(pts1: np.ndarray, frame1: Patch, pts2: np.ndarray, frame2: Patch, grid: int) -> float:
    """Mean, over occupied cells of `frame1`, of the fraction of its points whose
    partners fall in the same cell of `frame2`."""
    if len(pts1) == 0:
        return 0.0
    k1 = _cells(pts1, frame1, grid)
    k2 = _cells(pts2, frame2, grid)
    n = np.bincount(k1, minlength=grid * grid)
    hit = np.bincount(k1, weights=(k1 == k2).astype(float), minlength=grid * grid)
    occ = n > 0
    return float(np.mean(hit[occ] / n[occ]))


def _axis_fit(u: np.ndarray, v: np.ndarray) -> tuple[float, float] | None:
    """Theil-Sen fit v ~ a * u + b; None when the points do not spread along u."""
    du = u[:, None] - u[None, :]
    dv = v[:, None] - v[None, :]
    ok = np.triu(np.abs(du) > 1.0, 1)
    if ok.sum() < 2:
        return None
    a = float(np.median(dv[ok] / du[ok]))
    if not MAP_SCALE_LIMITS[0] <= a <= MAP_SCALE_LIMITS[1]:
        return None
    return a, float(np.median(v - a * u))


def map_patch(r1: Patch, pts1: np.ndarray, pts2: np.ndarray) -> Patch | None:
    """Image of `r1` under a per-axis scale-and-shift fitted to matched points."""
    if len(pts1) < 3:
        return None
    fx = _axis_fit(pts1[:, 0], pts2[:, 0])
    fy = _axis_fit(pts1[:, 1], pts2[:, 1])
    if fx is None or fy is None:
        return None
    (ax, bx), (ay, by) = fx, fy
    return Patch(ax * r1.cx + bx, ay * r1.cy + by, ax * r1.half_w, ay * r1.half_h)


def _cell_hits(pts1, frame1, pts2, frame2, grid):
    return _cells(pts1, frame1, grid) == _cells(pts2, frame2, grid)


def fovea_outcome(r1: Patch, r2: Patch, p1: FeatureSet, p2: FeatureSet, cfg: TopoConfig) -> FoveaOutcome:
    i1, i2, dist, ratio = restricted_nn(p1, r1, p2, r2)
    if len(i1) == 0:
        return FoveaOutcome(r2, 0.0, False)
    pts1, pts2 = p1.xy[i1], p2.xy[i2]
    frame1 = bounding_patch(pts1, ADJUST_MARGIN)
    frame2 = bounding_patch(pts2, ADJUST_MARGIN)
    score = subpatch_score(pts1, frame1, pts2, frame2, cfg.grid)
    enough = len(i1) >= max(1, cfg.min_keypoints_per_patch)
    r2_adj = frame2 if enough else r2
    verified = enough and score >= cfg.alpha
    mapped = None
    if verified:
        hit = _cell_hits(pts1, frame1, pts2, frame2, cfg.grid)
        mapped = map_patch(r1, pts1[hit], pts2[hit])
    return FoveaOutcome(r2_adj, score, verified, mapped, i1, i2, dist, ratio)


def fovea(
    r1: Patch, r2: Patch, p1: FeatureSet, p2: FeatureSet, cfg: TopoConfig
) -> tuple[Patch, float, bool]:
    """Verify one candidate pair.

    Keypoints of `r1` are matched only against keypoints of `r2`; `r2` is then
    shrunk to the matched keypoints. Both sides are cut into ``grid x grid``
    cells (laid over the extents of the matched keypoints) and each occupied
    image-1 cell scores the fraction of its keypoints whose partner sits in the
    same cell on the other side. The pair is accepted when the mean cell score
    reaches ``cfg.alpha`` and at least ``cfg.min_keypoints_per_patch``
    keypoints were matched.

    Returns:
        (adjusted r2, score in [0, 1], verified flag)
    """
    out = fovea_outcome(r1, r2, p1, p2, cfg)
    return out.r2, out.score, out.verified


# --------------------------------------------------------------------------
# Region growth
# --------------------------------------------------------------------------


def grow_region(
    seed: PatchPair,
    p1: FeatureSet,
    p2: FeatureSet,
    cfg: TopoConfig,
    fovea_fn: FoveaFn | None = None,
    seed_index: int | None = None,
) -> HomeomorphismRegion:
    """Grow the region of verified patch pairs reachable from `seed`.

    Each proposed candidate is fovea-tested as soon as it is proposed; the
    ones that pass wait in a frontier that hands out the highest fovea score
    first, ties in proposal order. A popped candidate is still refused if its
    adjusted `r2` would break the overlap correspondence with any current
    member. Popping best-first means a lower `alpha` only appends pairs after
    the ones a higher `alpha` accepts, so region size never shrinks as
    `alpha` drops.

    `fovea_fn` replaces the fovea test, e.g. with memoised decisions.
    """
    bounds1 = (p1.width, p1.height)
    bounds2 = (p2.width, p2.height)
    F = fovea_fn or (lambda a, b: fovea_outcome(a, b, p1, p2, cfg))
    region = HomeomorphismRegion(seed=seed_index, image_size=bounds1)
    window0 = seed.window or seed.r2

    out = F(seed.r1, window0)
    region.trace.append(
        TraceEntry(seed.r1, window0, out.r2, out.score, out.verified, "seed" if out.verified else "fovea")
    )
    if not out.verified:
        return region

    first = PatchPair(seed.r1, out.r2, out.score, window0, out.r1_mapped)
    state = GrowthState([first], [], [seed.r1.center])
    r1s = [first.r1]
    r2s = [first.r2]
    hits = [(out.idx1, out.idx2, out.distance, out.ratio)]
    heap: list = []
    counter = 0

    def propose(gen: PatchPair) -> None:
        nonlocal counter
        new = saccade(state, cfg, bounds1, bounds2, [gen])
        state.seen.extend(c.r1.center for c in new)
        for cand in new:
            res = F(cand.r1, cand.r2)
            if not res.verified:
                region.trace.append(TraceEntry(cand.r1, cand.r2, res.r2, res.score, False, "fovea"))
                continue
            heapq.heappush(heap, (-res.score, counter, cand, res))
            counter += 1

    propose(first)
    while heap:
        _, _, cand, res = heapq.heappop(heap)
        o1 = overlaps_many(cand.r1, patches_array(r1s))
        o2 = overlaps_many(res.r2, patches_array(r2s))
        if (o1 != o2).any():
            region.trace.append(TraceEntry(cand.r1, cand.r2, res.r2, res.score, False, "topology"))
            continue
        pair = PatchPair(cand.r1, res.r2, res.score, cand.r2, res.r1_mapped)
        region.trace.append(TraceEntry(cand.r1, cand.r2, res.r2, res.score, True, "accepted"))
        state.verified.append(pair)
        r1s.append(pair.r1)
        r2s.append(pair.r2)
        hits.append((res.idx1, res.idx2, res.distance, res.ratio))
        propose(pair)

    region.pairs = state.verified
    region.matched_keypoints = _collect_matches(hits)
    return region


def _collect_matches(hits) -> list[Match]:
    seen: set[int] = set()
    out: list[Match] = []
    for i1, i2, dist, ratio in hits:
        for a, b, d, r in zip(i1, i2, dist, ratio):
            if int(a) not in seen:
                seen.add(int(a))
                out.append(Match(int(a), int(b), float(d), float(r)))
    return out


# --------------------------------------------------------------------------
# Scoring and validity
# --------------------------------------------------------------------------


def hr_score(region: HomeomorphismRegion, metric: str = "pairs") -> float:
    """Region size: pair count, distinct matched keypoints, or covered fraction of image 1."""
    if metric == "pairs":
        return float(len(region.pairs))
    if metric == "keypoints":
        return float(len(region.matched_keypoints))
    if metric == "area":
        w, h = region.image_size
        return union_area(p.r1 for p in region.pairs) / (w * h)
    raise ValueError(f"unknown metric {metric!r}")


def check_hr_validity(region: HomeomorphismRegion, alpha: float = 0.2) -> ValidityReport:
    """Exhaustively test the three region conditions; report the first violation."""
    pairs = region.pairs
    for i, p in enumerate(pairs):
        if p.score is None or p.score < alpha:
            return ValidityReport(False, 1, (i,), f"pair {i} score {p.score} below {alpha}")
    a1 = patches_array(p.r1 for p in pairs)
    a2 = patches_array(p.r2 for p in pairs)
    adj = []
    for i, p in enumerate(pairs):
        o1 = overlaps_many(p.r1, a1)
        o2 = overlaps_many(p.r2, a2)
        for j in range(i + 1, len(pairs)):
            if o1[j] != o2[j]:
                return ValidityReport(
                    False, 2, (i, j), f"pairs {i},{j}: image-1 overlap {bool(o1[j])}, image-2 overlap {bool(o2[j])}"
                )
        o1[i] = False
        adj.append(np.flatnonzero(o1))
    if len(pairs) > 1:
        reached = {0}
        todo = [0]
        while todo:
            for j in adj[todo.pop()]:
                if int(j) not in reached:
                    reached.add(int(j))
                    todo.append(int(j))
        if len(reached) != len(pairs):
            missing = min(set(range(len(pairs))) - reached)
            return ValidityReport(False, 3, (0, missing), f"pair {missing} is not connected to pair 0")
    return ValidityReport(True)


# --------------------------------------------------------------------------
# Pair verification
# --------------------------------------------------------------------------


def topo_verify(
    p1: FeatureSet,
    p2: FeatureSet,
    cfg: TopoConfig | None = None,
    ratio_threshold: float = DEFAULT_RATIO,
    threads: int = 1,
    keep_regions: bool = False,
    matches: list[Match] | None = None,
    sp_cfg: SpatialConfig | None = None,
) -> TpResult:
    """Score an image pair by its largest region.

    Seeds are grown in ascending ratio order. With ``cfg.skip_covered_seeds`` a
    seed whose image-1 keypoint already lies inside an earlier region of at
    least four pairs is skipped. With ``cfg.sp_filter`` only matches that are
    inliers of the best spatial hypothesis seed regions. The best region wins
    by score, ties going to the lowest seed match index. `threads` changes
    only the wall-clock time, never the result.
    """
    cfg = cfg or TopoConfig()
    if matches is None:
        matches = ratio_test_match(p1, p2, ratio_threshold) if len(p1) and len(p2) >= 2 else []
    candidates = list(range(len(matches)))
    if cfg.sp_filter and matches:
        sp = spatial_verify(p1, p2, sp_cfg, matches=matches)
        keep = {(m.idx1, m.idx2) for m in sp.inlier_matches}
        candidates = [i for i in candidates if (matches[i].idx1, matches[i].idx2) in keep]
    order = sorted(candidates, key=lambda i: (matches[i].ratio, i))[: cfg.max_hypotheses]

    def grow(i: int) -> HomeomorphismRegion:
        return grow_region(seed_pair(matches[i], p1, p2, cfg), p1, p2, cfg, seed_index=i)

    regions: list[HomeomorphismRegion] = []
    covering: list[np.ndarray] = []

    def skipped(i: int) -> bool:
        if not cfg.skip_covered_seeds:
            return False
        xy = tuple(p1.xy[matches[i].idx1])
        return any(_covers(b, xy) for b in covering)

    def accept(region: HomeomorphismRegion) -> None:
        regions.append(region)
        if len(region.pairs) >= SKIP_REGION_SIZE:
            covering.append(_r1_bounds(region))

    if threads <= 1:
        for i in order:
            if not skipped(i):
                accept(grow(i))
    else:
        # speculative batches: grow every seed not yet known to be covered,
        # then replay the skip rule in seed order so the outcome is sequential
        with ThreadPoolExecutor(threads) as ex:
            pos = 0
            while pos < len(order):
                batch = [i for i in order[pos : pos + 2 * threads]]
                pos += len(batch)
                todo = [i for i in batch if not skipped(i)]
                grown = dict(zip(todo, ex.map(grow, todo)))
                for i in batch:
                    if i in grown and not skipped(i):
                        accept(grown[i])

    if not regions:
        empty = HomeomorphismRegion(image_size=(p1.width, p1.height))
        return TpResult(empty, 0.0, cfg.metric, [] if keep_regions else None)
    scores = [hr_score(r, cfg.metric) for r in regions]
    top = max(scores)
    best = min((r for r, s in zip(regions, scores) if s == top), key=lambda r: r.seed)
    return TpResult(best, top, cfg.metric, regions if keep_regions else None)


# --------------------------------------------------------------------------
# Overlay
# --------------------------------------------------------------------------


def _rect(p: Patch | None):
    return None if p is None else [round(v, 6) for v in p.bounds]


def overlay_dict(result: TpResult, p1: FeatureSet, p2: FeatureSet) -> dict:
    """JSON-ready description of the best region.

    Rectangles are ``[x_min, y_min, x_max, y_max]``. `pairs` lists the
    accepted patches; `trace` lists every fovea evaluation in order, accepted
    or not, so the growth can be replayed step by step.
    """
    region = result.best
    return {
        "image1": {"id": p1.image_id, "width": p1.width, "height": p1.height},
        "image2": {"id": p2.image_id, "width": p2.width, "height": p2.height},
        "metric": result.metric,
        "score": result.score,
        "seed_match": region.seed,
        "pairs": [
            {
                "r1": _rect(p.r1),
                "window": _rect(p.window),
                "r2": _rect(p.r2),
                "score": None if p.score is None else round(p.score, 6),
            }
            for p in region.pairs
        ],
        "trace": [
            {
                "step": k,
                "r1": _rect(t.r1),
                "window": _rect(t.window),
                "r2": _rect(t.r2),
                "score": round(t.score, 6),
                "accepted": t.accepted,
                "reason": t.reason,
            }
            for k, t in enumerate(region.trace)
        ],
        "matches": [
            {
                "idx1": m.idx1,
                "idx2": m.idx2,
                "xy1": [round(float(v), 6) for v in p1.xy[m.idx1]],
                "xy2": [round(float(v), 6) for v in p2.xy[m.idx2]],
            }
            for m in region.matched_keypoints
        ],
    }


def write_overlay(path: str | Path, result: TpResult, p1: FeatureSet, p2: FeatureSet) -> None:
    Path(path).write_text(json.dumps(overlay_dict(result, p1, p2), indent=1, sort_keys=True) + "\n")
