from __future__ import annotations

import dataclasses
from functools import lru_cache
from pathlib import Path

import numpy as np
from topoverify.features import FeatureSet, save_features
from topoverify.geometry import Patch
from topoverify.synth import SynthSpec, generate
from topoverify.topo import FoveaOutcome, PatchPair, TopoConfig, fovea_outcome

FIXTURES = Path(__file__).parent / "fixtures"

# Hand-computed APs of fixtures/toy_ranking.txt against toy_ground_truth.json.
#   q1 medium: a x [j] b y, positives {a, b}   -> (1/1 + 2/3) / 2 = 5/6
#   q1 hard:   [a] x [j] b y, positives {b}     -> (1/2) / 1      = 1/2
#   q2 medium: z c w d, positives {c, d}        -> (1/2 + 2/4) / 2 = 1/2
#   q2 hard:   no hard positives                -> excluded
#   q3 both:   e [k] u f, positives {e, f, g}   -> (1/1 + 2/3 + 0) / 3 = 5/9
TOY_AP = {
    "medium": {"q1": 5 / 6, "q2": 1 / 2, "q3": 5 / 9},
    "hard": {"q1": 1 / 2, "q3": 5 / 9},
}
TOY_MAP = {"medium": (5 / 6 + 1 / 2 + 5 / 9) / 3, "hard": (1 / 2 + 5 / 9) / 2}


def small_spec(regime: str, seed: int, **kw) -> SynthSpec:
    """Desk-sized synthetic problem: 256 px images, a few hundred keypoints."""
    params = dict(
        keypoint_count=300,
        image_size=(256, 256),
        scale_range=(0.8, 1.1),
        clutter_fraction=0.3,
        descriptor_noise=(0.3, 1.5),
        position_noise=1.0,
        object_margin=16,
        pattern_period=24,
        trap_spacing=40,
        trap_count=10,
    )
    params.update(kw)
    return SynthSpec(seed=seed, regime=regime, **params)


@lru_cache(maxsize=None)
def cached_pair(regime: str, seed: int):
    return generate(small_spec(regime, seed))


def feature_set(xy, desc=None, width=100.0, height=100.0, scale=2.0, image_id="t") -> FeatureSet:
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    n = len(xy)
    if desc is None:
        desc = np.eye(max(n, 2))[:n]
    return FeatureSet(image_id, width, height, xy, np.full(n, scale), np.zeros(n), desc)


class MemoFovea:
    """Fovea decisions computed once at alpha 0 and re-thresholded on demand.

    Keyed by the r1 centre, so two growth runs from the same seed see the
    same outcome for the same candidate regardless of alpha.
    """

    def __init__(self, p1: FeatureSet, p2: FeatureSet, cfg: TopoConfig):
        self.p1, self.p2 = p1, p2
        self.cfg = dataclasses.replace(cfg, alpha=0.0)
        self.cache: dict[tuple[float, float], FoveaOutcome] = {}

    def outcome(self, r1: Patch, window: Patch) -> FoveaOutcome:
        key = (round(r1.cx, 6), round(r1.cy, 6))
        if key not in self.cache:
            self.cache[key] = fovea_outcome(r1, window, self.p1, self.p2, self.cfg)
        return self.cache[key]

    def at(self, alpha: float):
        def f(r1: Patch, window: Patch) -> FoveaOutcome:
            o = self.outcome(r1, window)
            return dataclasses.replace(o, verified=bool(o.verified and o.score >= alpha))

        return f


def lattice_problem(rng: np.random.Generator):
    """Random accept mask over a lattice of patches in 120 px images.

    Returns the seed pair, the mask keyed by lattice offset, a fovea function
    honouring the mask, both image extents, and the config. Patches are a
    third of the image, stepped at half their side, so the reachable lattice
    has at most 5 positions per axis.
    """
    w = h = 120.0
    cfg = TopoConfig(patch_fraction=1 / 3, skip_covered_seeds=False)
    half = w / 6
    step = half
    i0, j0 = rng.integers(1, 6, 2)
    s = float(rng.uniform(0.7, 1.3))
    r1 = Patch(i0 * step, j0 * step, half, half)
    r2 = Patch(r1.cx * s, r1.cy * s, half * s, half * s)
    seed = PatchPair(r1, r2, None, r2, None)
    density = rng.uniform(0.3, 0.9)
    mask = {(i, j): bool(rng.random() < density) for i in range(-6, 7) for j in range(-6, 7)}
    mask[(0, 0)] = True

    def fovea_fn(a: Patch, window: Patch) -> FoveaOutcome:
        ij = (round((a.cx - r1.cx) / step), round((a.cy - r1.cy) / step))
        ok = mask.get(ij, False)
        p2 = Patch(r2.cx + ij[0] * step * s, r2.cy + ij[1] * step * s, r2.half_w, r2.half_h)
        return FoveaOutcome(p2, 1.0 if ok else 0.0, ok, p2)

    bounds1 = (w, h)
    # a hair larger than the scaled image so edge centres stay strictly inside
    bounds2 = (w * s + 1e-9, h * s + 1e-9)
    return seed, mask, fovea_fn, bounds1, bounds2, cfg


def empty_set(width: float, height: float) -> FeatureSet:
    return FeatureSet("empty", width, height, np.zeros((0, 2)), [], [], np.zeros((0, 4)))


def r1_centres(pairs) -> set[tuple[float, float]]:
    return {(round(p.r1.cx, 6), round(p.r1.cy, 6)) for p in pairs}


def toy_store(root: Path) -> tuple[Path, Path]:
    """Five-candidate feature store whose third candidate shares the query's object.

    Writes ``<root>/store/{q,c1..c5}.txt`` and ``<root>/ranking.txt`` with the
    initial order ``c1 c2 c3 c4 c5``; the other candidates come from unrelated
    seeds. Returns (store directory, ranking file).
    """
    store = root / "store"
    store.mkdir(parents=True, exist_ok=True)
    spec = dict(keypoint_count=150, image_size=(160, 160), pattern_period=16)
    query = generate(small_spec("planar", 500, **spec))
    sets = {"q": query.a, "c3": query.b}
    for name, (regime, seed) in zip(
        ("c1", "c2", "c4", "c5"), [("planar", 501), ("multiplane", 502), ("repeated", 503), ("planar", 504)]
    ):
        sets[name] = generate(small_spec(regime, seed, **spec)).b
    for name, fs in sets.items():
        fs.image_id = name
        save_features(fs, store / f"{name}.txt")
    ranking = root / "ranking.txt"
    ranking.write_text("q: c1 c2 c3 c4 c5\n")
    return store, ranking

