from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import cached_pair, empty_set, lattice_problem, r1_centres, small_spec
from topoverify.features import load_features, ratio_test_match
from topoverify.geometry import Patch
from topoverify.synth import (
    REGIMES,
    SynthParameterError,
    SynthSpec,
    brute_force_region,
    family_spec,
    generate,
    write_fixture,
)
from topoverify.topo import PatchPair, grow_region


def residuals(pair) -> np.ndarray:
    """Distance of every image-b partner from its image-a keypoint mapped by its plane."""
    i, j = pair.true_correspondences.T
    out = np.empty(len(i))
    for k, t in enumerate(pair.transforms):
        sel = pair.plane_of == k
        proj = pair.a.xy[i[sel]] @ t[:2, :2].T + t[:2, 2]
        out[sel] = np.linalg.norm(proj - pair.b.xy[j[sel]], axis=1)
    return out


def affine_from(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    a = np.hstack([src, np.ones((len(src), 1))])
    sol, *_ = np.linalg.lstsq(a, dst, rcond=None)
    m = np.eye(3)
    m[:2, :] = sol.T
    return m


def best_affine_fraction(pair, tol=4.0, trials=500) -> float:
    """Largest fraction of correspondences any tried affine carries within `tol`.

    Candidates: the least-squares fit to everything, each plane's own
    transform, and affines through random triples of correspondences.
    """
    i, j = pair.true_correspondences.T
    src, dst = pair.a.xy[i], pair.b.xy[j]
    cands = [affine_from(src, dst), *pair.transforms]
    rng = np.random.default_rng(0)
    for _ in range(trials):
        k = rng.choice(len(src), 3, replace=False)
        cands.append(affine_from(src[k], dst[k]))
    best = 0.0
    for m in cands:
        proj = src @ m[:2, :2].T + m[:2, 2]
        best = max(best, float(np.mean(np.linalg.norm(proj - dst, axis=1) < tol)))
    return best


@pytest.mark.parametrize("regime", REGIMES)
def test_generation_is_bit_deterministic(regime):
    one, two = generate(small_spec(regime, 9)), generate(small_spec(regime, 9))
    for name in ("xy", "scale", "orientation", "descriptors"):
        assert np.array_equal(getattr(one.a, name), getattr(two.a, name))
        assert np.array_equal(getattr(one.b, name), getattr(two.b, name))
    assert np.array_equal(one.true_correspondences, two.true_correspondences)
    other = generate(small_spec(regime, 10))
    assert not np.array_equal(one.a.xy, other.a.xy)


@pytest.mark.parametrize(
    "kw",
    [
        dict(regime="spherical"),
        dict(corruption_rate=1.0),
        dict(keypoint_count=7),
        dict(regime="multiplane", plane_count=1),
        dict(position_noise=1.5),
        dict(scale_range=(2.0, 1.0)),
        dict(image_size=(60, 60)),
    ],
)
def test_invalid_spec(kw):
    with pytest.raises(SynthParameterError):
        generate(SynthSpec(**kw))


def test_identity_planar_regime_copies_image():
    pair = generate(SynthSpec(seed=7, regime="planar"))
    i, j = pair.true_correspondences.T
    np.testing.assert_array_equal(pair.a.xy[i], pair.b.xy[j])
    np.testing.assert_array_equal(pair.a.descriptors[i], pair.b.descriptors[j])
    assert len(pair.a) == len(pair.b) == 64


@pytest.mark.parametrize("regime", REGIMES)
def test_correspondences_within_a_pixel(regime):
    pair = generate(family_spec(regime, 2))
    assert residuals(pair).max() <= 1.0 + 1e-9


def test_multiplane_defeats_single_affine():
    for seed in range(3):
        pair = generate(family_spec("multiplane", seed))
        assert len(pair.transforms) == 2
        assert best_affine_fraction(pair) < 0.8
        for k in range(2):
            assert residuals(pair)[pair.plane_of == k].max() <= 1.0 + 1e-9


def test_multiplane_planes_agree_on_shared_edge():
    pair = generate(family_spec("multiplane", 0, plane_count=3))
    x0, x1 = pair.overlap_polygon[0][0], pair.overlap_polygon[1][0]
    edges = np.linspace(x0, x1, 4)[1:-1]
    for k, e in enumerate(edges):
        left, right = pair.transforms[k], pair.transforms[k + 1]
        p = np.array([e, 100.0, 1.0])
        np.testing.assert_allclose(left @ p, right @ p, atol=1e-9)


def test_repeated_lures_ratio_test_to_wrong_lattice_copies():
    pair = generate(family_spec("repeated", 0))
    partner = pair.partner_of()
    lattice = set(pair.lattice.tolist())
    wrong = sum(
        1 for m in ratio_test_match(pair.a, pair.b) if m.idx1 in lattice and partner[m.idx1] != m.idx2
    )
    assert wrong >= 0.2 * pair.spec.keypoint_count


def test_repeated_regime_builds_trap_image():
    pair = cached_pair("repeated", 2)
    assert pair.distractor is not None
    assert len(pair.trap_correspondences) > 0
    t = pair.trap_transform
    i, j = pair.trap_correspondences.T
    proj = pair.a.xy[i] @ t[:2, :2].T + t[:2, 2]
    assert np.linalg.norm(proj - pair.distractor.xy[j], axis=1).max() <= 1.0 + 1e-9


def test_clean_planar_correspondences_survive_ratio_test():
    pair = generate(SynthSpec(seed=3, regime="planar", keypoint_count=200, scale_range=(0.9, 1.1),
                              translation_range=10, descriptor_noise=(0.0, 0.2)))
    got = {(m.idx1, m.idx2) for m in ratio_test_match(pair.a, pair.b, 0.8)}
    assert {(int(i), int(j)) for i, j in pair.true_correspondences} <= got


def test_corruption_fraction_recorded():
    pair = generate(small_spec("planar", 1, corruption_rate=0.25))
    assert len(pair.corrupted) == 75
    assert len(set(pair.corrupted.tolist())) == 75


def test_family_is_frozen():
    spec = family_spec("repeated", 4)
    assert (spec.keypoint_count, spec.image_size, spec.descriptor_dim) == (800, (512, 512), 128)
    assert spec.descriptor_noise == (2.0, 3.0)
    assert family_spec("multiplane", 4).foreshortening_range == (0.4, 0.55)
    assert family_spec("planar", 4, keypoint_count=100).keypoint_count == 100
    with pytest.raises(SynthParameterError):
        family_spec("cubic", 1)


@pytest.mark.parametrize("regime", REGIMES)
def test_write_fixture(tmp_path, regime):
    pair = generate(small_spec(regime, 6, keypoint_count=40))
    paths = write_fixture(pair, tmp_path, prefix="x_")
    names = sorted(p.name for p in paths)
    expected = ["x_a.txt", "x_b.txt", "x_ground_truth.json"]
    if regime == "repeated":
        expected.insert(2, "x_distractor.txt")
    assert names == expected
    gt = json.loads((tmp_path / "x_ground_truth.json").read_text())
    assert gt["rng"] == "numpy PCG64"
    assert gt["correspondences"] == pair.true_correspondences.tolist()
    assert len(gt["transforms"]) == len(pair.transforms)
    back = load_features(tmp_path / "x_b.txt")
    np.testing.assert_array_equal(back.xy, pair.b.xy)
    again = tmp_path / "again"
    write_fixture(generate(small_spec(regime, 6, keypoint_count=40)), again, prefix="x_")
    for p in paths:
        assert p.read_bytes() == (again / p.name).read_bytes()


# -- brute-force oracle -----------------------------------------------------


def three_by_three_seed() -> PatchPair:
    # 40 px images, 20 px patches, 10 px steps: centres 10, 20, 30 per axis
    r = Patch(20, 20, 10, 10)
    return PatchPair(r, r)


def test_oracle_all_accept_saturates():
    out = brute_force_region(three_by_three_seed(), lambda ij: True, (40, 40), (40, 40))
    assert r1_centres(out) == {(x, y) for x in (10.0, 20.0, 30.0) for y in (10.0, 20.0, 30.0)}


def test_oracle_all_reject_is_empty():
    assert brute_force_region(three_by_three_seed(), {}, (40, 40), (40, 40)) == set()


def test_oracle_refuses_large_lattices():
    seed = PatchPair(Patch(500, 500, 2, 2), Patch(500, 500, 2, 2))
    with pytest.raises(ValueError, match="64"):
        brute_force_region(seed, lambda ij: True, (1000, 1000), (1000, 1000))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_oracle_agrees_with_growth(seed):
    s, mask, fovea_fn, b1, b2, cfg = lattice_problem(np.random.default_rng(seed))
    grown = grow_region(s, empty_set(*b1), empty_set(*b2), cfg, fovea_fn=fovea_fn)
    assert r1_centres(grown.pairs) == r1_centres(brute_force_region(s, mask, b1, b2))
