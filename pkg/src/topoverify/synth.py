"""Synthetic correspondence problems with known ground truth, and a brute-force
region oracle.

Three regimes:

planar
    One global transform (similarity, optionally anisotropic) maps the object
    keypoints of image `a` into image `b`.
multiplane
    The object is cut into vertical strips. Each strip has its own affine map
    and neighbouring maps agree on the shared edge, so the object folds
    without tearing: adjacency survives but no single affine fits.
repeated
    Part of the object is a periodic lattice repeating a small motif of
    descriptors. Image `b` additionally holds a compact decoy carrying clean
    copies of the motif descriptors, which lures global ratio-test matching
    away from the lattice. A third image, `distractor`, is unrelated to `a`
    except for a sparse scatter of `a`'s descriptors placed by one similarity
    transform: many consistent tentative matches, none with a consistent
    neighbourhood.

Randomness comes from numpy's PCG64 bit generator seeded with `SynthSpec.seed`
(``numpy.random.Generator(numpy.random.PCG64(seed))``), so fixtures are
reproducible bit for bit.

Descriptors are random unit vectors; in 32 or more dimensions their pairwise
distances concentrate around sqrt(2), which keeps nearest-neighbour behaviour
predictable. A perturbed copy ``normalize(v + sigma * g)`` with ``g`` a
unit-variance Gaussian scaled by ``1/sqrt(D)`` lies at distance
``sqrt(2 - 2 / sqrt(1 + sigma^2))`` from the original.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .features import FeatureSet, save_features
from .geometry import Patch, overlaps_many, patches_array
from .topo import PatchPair, check_hr_validity, HomeomorphismRegion

REGIMES = ("planar", "multiplane", "repeated")
MAX_ORACLE_LATTICE = 64


class SynthParameterError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 7
    regime: str = "planar"
    keypoint_count: int = 64
    image_size: tuple[int, int] = (512, 512)
    # transform parameters
    scale_range: tuple[float, float] = (1.0, 1.0)
    anisotropy_range: tuple[float, float] = (1.0, 1.0)
    translation_range: float = 0.0
    plane_count: int = 2
    foreshortening_range: tuple[float, float] = (0.5, 0.7)
    pattern_period: float = 40.0
    # appearance parameters
    corruption_rate: float = 0.0
    clutter_fraction: float = 0.0
    descriptor_dim: int = 32
    descriptor_noise: tuple[float, float] = (0.0, 0.0)
    position_noise: float = 0.0  # jitter radius in image b, pixels, at most 1
    orientation_noise: float = 0.0
    scale_noise: float = 0.0
    object_margin: float = 32.0
    # repeated regime
    motif_size: int = 4
    lattice_fraction: float = 0.3
    lattice_noise: float = 0.8
    trap_count: int = 40
    trap_spacing: float = 72.0

    def validate(self) -> None:
        if self.regime not in REGIMES:
            raise SynthParameterError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if not 0 <= self.corruption_rate < 1:
            raise SynthParameterError(f"corruption_rate must lie in [0, 1), got {self.corruption_rate}")
        if self.keypoint_count < 8:
            raise SynthParameterError(f"keypoint_count must be at least 8, got {self.keypoint_count}")
        w, h = self.image_size
        if w <= 2 * self.object_margin or h <= 2 * self.object_margin:
            raise SynthParameterError("object margin leaves no room inside the image")
        for name in ("scale_range", "anisotropy_range", "foreshortening_range", "descriptor_noise"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise SynthParameterError(f"{name} must be (low, high), got {(lo, hi)}")
        if self.scale_range[0] <= 0 or self.anisotropy_range[0] <= 0 or self.foreshortening_range[0] <= 0:
            raise SynthParameterError("scale factors must be positive")
        if self.descriptor_noise[0] < 0 or self.clutter_fraction < 0 or self.position_noise < 0:
            raise SynthParameterError("noise levels must be non-negative")
        if self.position_noise > 1.0:
            # true correspondences must stay within a pixel of their mapped location
            raise SynthParameterError(f"position_noise is capped at 1 pixel, got {self.position_noise}")
        if self.regime == "multiplane" and self.plane_count < 2:
            raise SynthParameterError("multiplane regime needs plane_count >= 2")
        if self.regime == "repeated" and (self.pattern_period <= 0 or self.motif_size < 1):
            raise SynthParameterError("repeated regime needs a positive pattern period and motif")
        if self.descriptor_dim < 2:
            raise SynthParameterError("descriptor_dim must be at least 2")


@dataclass
class SynthPair:
    spec: SynthSpec
    a: FeatureSet
    b: FeatureSet
    true_correspondences: np.ndarray  # (K, 2) index pairs a -> b
    transforms: list[np.ndarray]  # one 3x3 matrix per plane
    plane_of: np.ndarray  # (K,) plane index of each correspondence
    overlap_polygon: list[tuple[float, float]]  # image-1 region with counterparts
    corrupted: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))  # a indices
    lattice: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))  # a indices on the lattice
    decoy: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))  # b indices of the decoy
    distractor: FeatureSet | None = None
    trap_correspondences: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))
    trap_transform: np.ndarray | None = None

    def partner_of(self) -> dict[int, int]:
        return {int(i): int(j) for i, j in self.true_correspondences}


# Frozen fixture families. Every regime shares the geometry and keypoint
# density; the repeated family degrades image b's descriptors hard enough
# that few true correspondences survive the global ratio test, while
# matching restricted to a patch still finds them.
_FAMILY_BASE = dict(
    keypoint_count=800,
    image_size=(512, 512),
    scale_range=(0.8, 1.1),
    translation_range=20.0,
    clutter_fraction=0.2,
    descriptor_dim=128,
    descriptor_noise=(0.8, 2.0),
    position_noise=1.0,
    orientation_noise=0.01,
    scale_noise=0.05,
)
_FAMILY_OVERRIDES = {
    "multiplane": dict(foreshortening_range=(0.4, 0.55)),
    "repeated": dict(descriptor_noise=(2.0, 3.0)),
}


def family_spec(regime: str, seed: int, **overrides) -> SynthSpec:
    """Spec of the frozen fixture family for `regime`, with optional field overrides."""
    if regime not in REGIMES:
        raise SynthParameterError(f"regime must be one of {REGIMES}, got {regime!r}")
    params = {**_FAMILY_BASE, **_FAMILY_OVERRIDES.get(regime, {}), **overrides}
    return SynthSpec(seed=seed, regime=regime, **params)


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------


def _unit(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _perturb(rng: np.random.Generator, v: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    g = rng.standard_normal(v.shape) / np.sqrt(v.shape[1])
    out = v + np.asarray(sigma, dtype=float).reshape(-1, 1) * g
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def _jitter(rng: np.random.Generator, radius: float, shape) -> np.ndarray:
    """Gaussian offsets with per-axis sigma `radius`, shortened to length at most `radius`."""
    g = rng.normal(0.0, radius, shape)
    norm = np.linalg.norm(g, axis=1, keepdims=True)
    return g * np.minimum(1.0, radius / np.maximum(norm, 1e-300))


def _apply(m: np.ndarray, xy: np.ndarray) -> np.ndarray:
    return xy @ m[:2, :2].T + m[:2, 2]


def _affine(ax: float, ay: float, tx: float, ty: float) -> np.ndarray:
    return np.array([[ax, 0.0, tx], [0.0, ay, ty], [0.0, 0.0, 1.0]])


def _place(rng, spec: SynthSpec, box, ax_span: float, ay: float):
    """Translation putting the mapped object box inside image b, jittered by translation_range."""
    w, h = spec.image_size
    x0, y0, x1, y1 = box
    mw, mh = ax_span, (y1 - y0) * ay
    if mw > w - 2 or mh > h - 2:
        raise SynthParameterError("transformed object does not fit in image b")
    cx = (w - mw) / 2 + rng.uniform(-spec.translation_range, spec.translation_range)
    cy = (h - mh) / 2 + rng.uniform(-spec.translation_range, spec.translation_range)
    left = float(np.clip(cx, 1.0, w - 1.0 - mw))
    top = float(np.clip(cy, 1.0, h - 1.0 - mh))
    return left, top


# --------------------------------------------------------------------------
# Generation
# --------------------------------------------------------------------------


def generate(spec: SynthSpec) -> SynthPair:
    """Build a synthetic pair; bit-deterministic in ``spec.seed``."""
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    w, h = spec.image_size
    m = spec.object_margin
    box = (m, m, w - m, h - m)
    n = spec.keypoint_count
    d = spec.descriptor_dim

    # object keypoints in image a
    lattice_idx = np.zeros(0, dtype=int)
    motif = None
    if spec.regime == "repeated":
        xy_a, lattice_idx, motif_id = _repeated_layout(rng, spec, box)
        motif = _unit(rng, spec.motif_size, d)
        desc_a = _unit(rng, n, d)
        desc_a[lattice_idx] = _perturb(rng, motif[motif_id], np.full(len(lattice_idx), 0.05))
    else:
        xy_a = np.column_stack([rng.uniform(box[0], box[2], n), rng.uniform(box[1], box[3], n)])
        desc_a = _unit(rng, n, d)
    scale_a = np.exp(rng.uniform(np.log(2.0), np.log(6.0), n))
    ori_a = rng.uniform(-np.pi, np.pi, n)

    # geometry a -> b
    s = rng.uniform(*spec.scale_range)
    an = rng.uniform(*spec.anisotropy_range)
    ax, ay = s * an, s
    if spec.regime == "multiplane":
        edges = np.linspace(box[0], box[2], spec.plane_count + 1)
        slopes = [ax] + [ax * rng.uniform(*spec.foreshortening_range) for _ in range(spec.plane_count - 1)]
        span = float(sum(sl * (edges[k + 1] - edges[k]) for k, sl in enumerate(slopes)))
        left, top = _place(rng, spec, box, span, ay)
        transforms = []
        x_img = left
        for k, sl in enumerate(slopes):
            transforms.append(_affine(sl, ay, x_img - sl * edges[k], top - ay * box[1]))
            x_img += sl * (edges[k + 1] - edges[k])
        plane = np.clip(np.searchsorted(edges, xy_a[:, 0], side="right") - 1, 0, spec.plane_count - 1)
    else:
        left, top = _place(rng, spec, box, (box[2] - box[0]) * ax, ay)
        transforms = [_affine(ax, ay, left - ax * box[0], top - ay * box[1])]
        plane = np.zeros(n, dtype=int)

    xy_b = np.empty_like(xy_a)
    det = np.empty(n)
    for k, t in enumerate(transforms):
        sel = plane == k
        xy_b[sel] = _apply(t, xy_a[sel])
        det[sel] = abs(np.linalg.det(t[:2, :2]))
    if spec.position_noise > 0:
        xy_b += _jitter(rng, spec.position_noise, xy_b.shape)
    xy_b = np.clip(xy_b, 0.0, [w, h])
    scale_b = scale_a * np.sqrt(det)
    if spec.scale_noise > 0:
        scale_b = scale_b * np.exp(rng.normal(0.0, spec.scale_noise, n))
    ori_b = ori_a + (rng.normal(0.0, spec.orientation_noise, n) if spec.orientation_noise > 0 else 0.0)

    sigma = rng.uniform(*spec.descriptor_noise, n)
    if spec.regime == "repeated":
        sigma[lattice_idx] = spec.lattice_noise
    desc_b = _perturb(rng, desc_a, sigma) if np.any(sigma > 0) else desc_a.copy()
    n_corrupt = int(round(spec.corruption_rate * n))
    corrupted = np.sort(rng.choice(n, n_corrupt, replace=False)) if n_corrupt else np.zeros(0, dtype=int)
    desc_b[corrupted] = _unit(rng, n_corrupt, d)

    # decoy: clean motif copies in a compact cluster of image b
    extra_b = []
    if spec.regime == "repeated":
        k = spec.motif_size
        c = rng.uniform([m, m], [w - m, h - m])
        dxy = c + rng.uniform(-spec.pattern_period, spec.pattern_period, (k, 2))
        extra_b.append(
            (np.clip(dxy, 0, [w, h]), np.exp(rng.uniform(np.log(2.0), np.log(6.0), k)),
             rng.uniform(-np.pi, np.pi, k), _perturb(rng, motif, np.full(k, 0.02)), "decoy")
        )

    # clutter without counterparts
    n_clutter = int(round(spec.clutter_fraction * n))
    clutter_a = _clutter(rng, n_clutter, spec)
    clutter_b = _clutter(rng, n_clutter, spec)
    extra_b.append((*clutter_b, "clutter"))

    a = FeatureSet(
        "a",
        w,
        h,
        np.vstack([xy_a, clutter_a[0]]),
        np.concatenate([scale_a, clutter_a[1]]),
        np.concatenate([ori_a, clutter_a[2]]),
        np.vstack([desc_a, clutter_a[3]]),
    )

    parts_xy = [xy_b] + [e[0] for e in extra_b]
    parts_s = [scale_b] + [e[1] for e in extra_b]
    parts_o = [ori_b] + [e[2] for e in extra_b]
    parts_d = [desc_b] + [e[3] for e in extra_b]
    total_b = sum(len(p) for p in parts_xy)
    perm = rng.permutation(total_b)  # perm[new] = old
    where = np.empty(total_b, dtype=int)
    where[perm] = np.arange(total_b)  # where[old] = new
    b = FeatureSet(
        "b",
        w,
        h,
        np.vstack(parts_xy)[perm],
        np.concatenate(parts_s)[perm],
        np.concatenate(parts_o)[perm],
        np.vstack(parts_d)[perm],
    )
    corr = np.column_stack([np.arange(n), where[:n]])
    decoy = np.zeros(0, dtype=int)
    if spec.regime == "repeated":
        decoy = np.sort(where[n : n + spec.motif_size])

    pair = SynthPair(
        spec=spec,
        a=a,
        b=b,
        true_correspondences=corr,
        transforms=transforms,
        plane_of=plane,
        overlap_polygon=[(box[0], box[1]), (box[2], box[1]), (box[2], box[3]), (box[0], box[3])],
        corrupted=corrupted,
        lattice=lattice_idx,
        decoy=decoy,
    )
    if spec.regime == "repeated":
        _add_distractor(rng, spec, pair, lattice_idx)
    return pair


def _clutter(rng, count: int, spec: SynthSpec):
    w, h = spec.image_size
    return (
        np.column_stack([rng.uniform(0, w, count), rng.uniform(0, h, count)]),
        np.exp(rng.uniform(np.log(2.0), np.log(6.0), count)),
        rng.uniform(-np.pi, np.pi, count),
        _unit(rng, count, spec.descriptor_dim),
    )


def _repeated_layout(rng, spec: SynthSpec, box):
    """Object layout with a lattice block; returns positions, lattice indices, motif ids."""
    n = spec.keypoint_count
    k = spec.motif_size
    period = spec.pattern_period
    cells = max(1, int(round(spec.lattice_fraction * n / k)))
    nx = int(np.ceil(np.sqrt(cells)))
    ny = int(np.ceil(cells / nx))
    bw, bh = nx * period, ny * period
    if bw > box[2] - box[0] or bh > box[3] - box[1] or cells * k > n:
        raise SynthParameterError("lattice block does not fit in the object")
    bx = rng.uniform(box[0], box[2] - bw)
    by = rng.uniform(box[1], box[3] - bh)
    offsets = rng.uniform(0.15 * period, 0.85 * period, (k, 2))
    lat = []
    motif_id = []
    for c in range(cells):
        i, j = c % nx, c // nx
        lat.append(np.array([bx + i * period, by + j * period]) + offsets)
        motif_id.extend(range(k))
    # jitter keeps copies off exact lattice multiples, which would otherwise
    # sit on patch borders whenever the period divides the saccade stride
    lat_xy = np.vstack(lat) + rng.uniform(-0.05 * period, 0.05 * period, (cells * k, 2))
    n_free = n - len(lat_xy)
    free = []
    while len(free) < n_free:
        p = rng.uniform([box[0], box[1]], [box[2], box[3]], (n_free, 2))
        keep = ~((p[:, 0] >= bx) & (p[:, 0] <= bx + bw) & (p[:, 1] >= by) & (p[:, 1] <= by + bh))
        free.extend(p[keep])
    xy = np.vstack([np.asarray(free[:n_free]).reshape(-1, 2), lat_xy])
    lattice_idx = np.arange(n_free, n)
    return xy, lattice_idx, np.asarray(motif_id)


def _add_distractor(rng, spec: SynthSpec, pair: SynthPair, lattice_idx: np.ndarray) -> None:
    a = pair.a
    w, h = spec.image_size
    n = spec.keypoint_count
    free = np.setdiff1d(np.arange(n), lattice_idx)
    chosen: list[int] = []
    for i in rng.permutation(free):
        if len(chosen) == spec.trap_count:
            break
        if chosen:
            dist = np.abs(a.xy[chosen] - a.xy[i]).max(axis=1)
            if dist.min() < spec.trap_spacing:
                continue
        chosen.append(int(i))
    chosen_arr = np.asarray(chosen, dtype=int)

    s = rng.uniform(0.9, 1.1)
    shift = rng.uniform(-spec.translation_range, spec.translation_range, 2)
    centre = np.array([w / 2.0, h / 2.0])
    t = centre + shift - s * centre
    trap_m = _affine(s, s, t[0], t[1])
    trap_xy = np.clip(_apply(trap_m, a.xy[chosen_arr]), 0.0, [w, h])
    if spec.position_noise > 0:
        trap_xy = np.clip(trap_xy + _jitter(rng, spec.position_noise, trap_xy.shape), 0.0, [w, h])
    trap_scale = a.scale[chosen_arr] * s
    trap_ori = a.orientation[chosen_arr] + (
        rng.normal(0.0, spec.orientation_noise, len(chosen_arr)) if spec.orientation_noise > 0 else 0.0
    )
    trap_desc = _perturb(rng, a.descriptors[chosen_arr], np.full(len(chosen_arr), 0.05))

    n_clutter = int(round((1.0 + spec.clutter_fraction) * n)) - len(chosen_arr)
    cl = _clutter(rng, max(n_clutter, 0), spec)
    xy = np.vstack([trap_xy, cl[0]])
    total = len(xy)
    perm = rng.permutation(total)
    where = np.empty(total, dtype=int)
    where[perm] = np.arange(total)
    pair.distractor = FeatureSet(
        "distractor",
        w,
        h,
        xy[perm],
        np.concatenate([trap_scale, cl[1]])[perm],
        np.concatenate([trap_ori, cl[2]])[perm],
        np.vstack([trap_desc, cl[3]])[perm],
    )
    pair.trap_correspondences = np.column_stack([chosen_arr, where[: len(chosen_arr)]]).reshape(-1, 2)
    pair.trap_transform = trap_m


# --------------------------------------------------------------------------
# Fixture emission
# --------------------------------------------------------------------------


def ground_truth_dict(pair: SynthPair) -> dict:
    spec = asdict(pair.spec)
    return {
        "spec": spec,
        "rng": "numpy PCG64",
        "correspondences": pair.true_correspondences.tolist(),
        "plane_of": pair.plane_of.tolist(),
        "transforms": [t.tolist() for t in pair.transforms],
        "overlap_polygon": [list(p) for p in pair.overlap_polygon],
        "corrupted": pair.corrupted.tolist(),
        "lattice": pair.lattice.tolist(),
        "decoy": pair.decoy.tolist(),
        "trap_correspondences": pair.trap_correspondences.tolist(),
        "trap_transform": None if pair.trap_transform is None else pair.trap_transform.tolist(),
    }


def write_fixture(pair: SynthPair, out_dir: str | Path, prefix: str = "", binary: bool = False) -> list[Path]:
    """Write the feature files and the JSON ground-truth sidecar; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = ".tpf" if binary else ".txt"
    written = []
    sets = [("a", pair.a), ("b", pair.b)]
    if pair.distractor is not None:
        sets.append(("distractor", pair.distractor))
    for name, fs in sets:
        p = out / f"{prefix}{name}{ext}"
        save_features(fs, p, binary=binary)
        written.append(p)
    gt = out / f"{prefix}ground_truth.json"
    gt.write_text(json.dumps(ground_truth_dict(pair), indent=1, sort_keys=True) + "\n")
    written.append(gt)
    return written


# --------------------------------------------------------------------------
# Brute-force region oracle
# --------------------------------------------------------------------------


def brute_force_region(
    seed: PatchPair,
    fovea_decisions,
    bounds1: tuple[float, float],
    bounds2: tuple[float, float],
    overlap_step: float = 0.5,
) -> set[PatchPair]:
    """Largest connected set of accepted lattice pairs containing the seed.

    The candidate lattice is every position reachable from the seed in whole
    steps of ``overlap_step`` times the patch side whose centres lie strictly
    inside both images. The image-2 patch of a lattice position is the seed's
    `r2` translated and scaled the way the seed maps `r1`. `fovea_decisions`
    maps a lattice offset ``(i, j)`` to accept/reject (a dict or a callable).

    Every accepted position is tested against every other for overlap, and
    the component of the seed is collected breadth-first. The result is
    checked against the region conditions before returning.
    """
    decide = fovea_decisions if callable(fovea_decisions) else (lambda ij: bool(fovea_decisions.get(ij, False)))
    r1, r2 = seed.r1, seed.r2
    sx, sy = r2.half_w / r1.half_w, r2.half_h / r1.half_h
    step_x = overlap_step * 2.0 * r1.half_w
    step_y = overlap_step * 2.0 * r1.half_h

    def inside(x, y, b):
        return 0.0 < x < b[0] and 0.0 < y < b[1]

    # lattice extent along each axis
    span = {}
    for axis, (c, step, c2, s2, lim1, lim2) in enumerate(
        [(r1.cx, step_x, r2.cx, sx, bounds1[0], bounds2[0]), (r1.cy, step_y, r2.cy, sy, bounds1[1], bounds2[1])]
    ):
        lo = int(np.floor(-c / step)) - 1
        hi = int(np.ceil((lim1 - c) / step)) + 1
        ok = [i for i in range(lo, hi + 1) if 0 < c + i * step < lim1 and 0 < c2 + i * step * s2 < lim2]
        span[axis] = ok
    if len(span[0]) > MAX_ORACLE_LATTICE or len(span[1]) > MAX_ORACLE_LATTICE:
        raise ValueError("lattice larger than 64x64; the brute-force oracle is desk-scale only")

    if not decide((0, 0)):
        return set()

    nodes = []
    for j in span[1]:
        for i in span[0]:
            if (i, j) == (0, 0) or decide((i, j)):
                p1 = Patch(r1.cx + i * step_x, r1.cy + j * step_y, r1.half_w, r1.half_h)
                p2 = Patch(r2.cx + i * step_x * sx, r2.cy + j * step_y * sy, r2.half_w, r2.half_h)
                if inside(p1.cx, p1.cy, bounds1) and inside(p2.cx, p2.cy, bounds2):
                    nodes.append(((i, j), p1, p2))
    arr = patches_array(p for _, p, _ in nodes)
    start = next(k for k, (ij, _, _) in enumerate(nodes) if ij == (0, 0))
    comp = {start}
    queue = deque([start])
    while queue:
        k = queue.popleft()
        for nb in np.flatnonzero(overlaps_many(nodes[k][1], arr)):
            if int(nb) not in comp:
                comp.add(int(nb))
                queue.append(int(nb))

    result = {PatchPair(nodes[k][1], nodes[k][2], 1.0) for k in sorted(comp)}
    report = check_hr_validity(HomeomorphismRegion(pairs=sorted(result, key=lambda p: (p.r1.cy, p.r1.cx))), 0.0)
    if not report.ok:
        raise AssertionError(f"oracle region violates condition {report.condition}: {report.message}")
    return result
