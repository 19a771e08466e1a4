"""Command-line entry point: ``topoverify {verify-pair,rerank,eval,synth}``.

Every option may also come from a ``--config`` file of ``key = value`` lines
(keys are option names with dashes or underscores, ``#`` starts a comment).
Options given on the command line win over the file.

Exit codes: 0 success, 2 usage or input error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .features import DEFAULT_RATIO, FeatureFormatError, load_features, ratio_test_match
from .retrieval import (
    PROTOCOLS,
    SCORERS,
    FeatureStore,
    GroundTruth,
    MissingGroundTruthError,
    RetrievalFormatError,
    format_eval_csv,
    format_rankings,
    load_ground_truth,
    load_rankings,
    map_eval,
    rerank,
)
from .spatial import SpatialConfig, spatial_verify
from .synth import REGIMES, SynthParameterError, SynthSpec, family_spec, generate, write_fixture
from .topo import METRICS, TopoConfig, check_hr_validity, topo_verify, write_overlay

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVARIANT = 3


class InvariantViolation(RuntimeError):
    pass


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

_TOPO = TopoConfig()
_SP = SpatialConfig()


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_matching(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("matching")
    g.add_argument("--ratio-threshold", type=float, default=DEFAULT_RATIO, help="ratio test threshold")


def _add_topo(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("topological verification")
    g.add_argument("--patch-fraction", type=float, default=_TOPO.patch_fraction,
                   help="patch side as a fraction of the smaller image dimension")
    g.add_argument("--alpha", type=float, default=_TOPO.alpha, help="fovea acceptance threshold")
    g.add_argument("--grid", type=int, default=_TOPO.grid, help="sub-patch grid order")
    g.add_argument("--overlap-step", type=float, default=_TOPO.overlap_step,
                   help="saccade stride as a fraction of the patch side")
    g.add_argument("--max-hypotheses", type=int, default=_TOPO.max_hypotheses,
                   help="seed matches grown per pair")
    g.add_argument("--min-keypoints-per-patch", type=int, default=_TOPO.min_keypoints_per_patch,
                   help="matched keypoints a patch pair needs to verify")
    g.add_argument("--metric", choices=METRICS, default=_TOPO.metric, help="region size measure")
    g.add_argument("--skip-covered-seeds", type=_bool, default=_TOPO.skip_covered_seeds,
                   help="skip seeds inside an earlier region of at least 4 pairs")
    g.add_argument("--sp-filter", type=_bool, default=_TOPO.sp_filter,
                   help="seed only from inliers of the best spatial hypothesis")


def _add_spatial(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("spatial verification")
    g.add_argument("--epsilon", type=float, default=_SP.epsilon, help="inlier distance in pixels")
    g.add_argument("--sp-max-hypotheses", type=int, default=_SP.max_hypotheses,
                   help="single-match hypotheses scored per pair")
    g.add_argument("--clamp-rotation", type=_bool, default=_SP.clamp_rotation,
                   help="ignore keypoint orientation when forming hypotheses")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="key = value file with option defaults")
    p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="topoverify", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    subs: dict[str, argparse.ArgumentParser] = {}

    p = sub.add_parser("verify-pair", formatter_class=fmt, help="score one image pair with SP and TP")
    p.add_argument("features1", type=Path, help="feature file of image 1")
    p.add_argument("features2", type=Path, help="feature file of image 2")
    p.add_argument("--overlay", type=Path, default=None, help="write the best region as JSON here")
    _add_common(p)
    _add_matching(p)
    _add_topo(p)
    _add_spatial(p)
    subs["verify-pair"] = p

    p = sub.add_parser("rerank", formatter_class=fmt, help="rerank the top of every ranked list")
    p.add_argument("--ranking", type=Path, required=True, help="initial ranking file")
    p.add_argument("--store", type=Path, required=True, help="directory of <image_id>.txt/.tpf feature files")
    p.add_argument("--output", type=Path, required=True, help="reranked ranking file to write")
    p.add_argument("--ground-truth", type=Path, default=None, help="ground truth JSON, used only for query boxes")
    p.add_argument("--k", type=int, default=100, help="candidates re-scored per query")
    p.add_argument("--scorer", choices=SCORERS, default="tp", help="pair verifier")
    _add_common(p)
    _add_matching(p)
    _add_topo(p)
    _add_spatial(p)
    subs["rerank"] = p

    p = sub.add_parser("eval", formatter_class=fmt, help="mean average precision of a ranking")
    p.add_argument("--ranking", type=Path, required=True, help="ranking file")
    p.add_argument("--ground-truth", type=Path, required=True, help="ground truth JSON")
    p.add_argument("--protocol", choices=PROTOCOLS, default="medium", help="evaluation protocol")
    p.add_argument("--output", type=Path, default=None, help="CSV file to write; stdout when omitted")
    _add_common(p)
    subs["eval"] = p

    p = sub.add_parser("synth", formatter_class=fmt, help="write a synthetic fixture pair with ground truth")
    d = SynthSpec()
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--regime", default=d.regime, help=f"one of {', '.join(REGIMES)}")
    p.add_argument("--seed", type=int, default=d.seed, help="RNG seed")
    p.add_argument("--family", type=_bool, default=False,
                   help="start from the frozen fixture family of the regime instead of the plain defaults")
    p.add_argument("--keypoint-count", type=int, default=None,
                   help=f"object keypoints per image (plain default {d.keypoint_count})")
    p.add_argument("--image-size", type=int, nargs=2, default=None, metavar=("W", "H"),
                   help=f"image extent (plain default {d.image_size[0]} {d.image_size[1]})")
    p.add_argument("--scale-range", type=float, nargs=2, default=None, metavar=("LO", "HI"),
                   help=f"global scale range (plain default {d.scale_range[0]} {d.scale_range[1]})")
    p.add_argument("--anisotropy-range", type=float, nargs=2, default=None, metavar=("LO", "HI"),
                   help=f"x/y scale ratio range (plain default {d.anisotropy_range[0]} {d.anisotropy_range[1]})")
    p.add_argument("--translation-range", type=float, default=None,
                   help=f"placement jitter in pixels (plain default {d.translation_range})")
    p.add_argument("--plane-count", type=int, default=None, help=f"multiplane strips (plain default {d.plane_count})")
    p.add_argument("--pattern-period", type=float, default=None,
                   help=f"repeated lattice period in pixels (plain default {d.pattern_period})")
    p.add_argument("--corruption-rate", type=float, default=None,
                   help=f"fraction of image-b descriptors replaced (plain default {d.corruption_rate})")
    p.add_argument("--clutter-fraction", type=float, default=None,
                   help=f"extra unmatched keypoints per object keypoint (plain default {d.clutter_fraction})")
    p.add_argument("--descriptor-dim", type=int, default=None,
                   help=f"descriptor length (plain default {d.descriptor_dim})")
    p.add_argument("--descriptor-noise", type=float, nargs=2, default=None, metavar=("LO", "HI"),
                   help=f"image-b descriptor noise range (plain default {d.descriptor_noise[0]} {d.descriptor_noise[1]})")
    p.add_argument("--position-noise", type=float, default=None,
                   help=f"image-b keypoint jitter in pixels (plain default {d.position_noise})")
    p.add_argument("--binary", type=_bool, default=False, help="write binary feature files")
    p.add_argument("--prefix", default="", help="file name prefix")
    _add_common(p)
    subs["synth"] = p
    return parser, subs


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


def read_config(path: Path) -> dict[str, str]:
    """Parse ``key = value`` lines; keys are normalised to underscores."""
    out: dict[str, str] = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _apply_config(parser: argparse.ArgumentParser, sub: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    values = read_config(args.config)
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, text in values.items():
        act = actions.get(key)
        if act is None or not act.option_strings:
            raise UsageError(f"{args.config}: unknown option {key!r} for {args.command}")
        parts = text.split() if act.nargs not in (None, "?") else [text]
        try:
            conv = [act.type(v) if act.type else v for v in parts]
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"{args.config}: bad value for {key}: {exc}") from exc
        value = conv if act.nargs not in (None, "?") else conv[0]
        if act.choices is not None and value not in act.choices:
            raise UsageError(f"{args.config}: {key} must be one of {list(act.choices)}")
        defaults[key] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def topo_config(args: argparse.Namespace) -> TopoConfig:
    return TopoConfig(
        patch_fraction=args.patch_fraction,
        alpha=args.alpha,
        grid=args.grid,
        overlap_step=args.overlap_step,
        max_hypotheses=args.max_hypotheses,
        min_keypoints_per_patch=args.min_keypoints_per_patch,
        metric=args.metric,
        skip_covered_seeds=args.skip_covered_seeds,
        sp_filter=args.sp_filter,
    )


def spatial_config(args: argparse.Namespace) -> SpatialConfig:
    return SpatialConfig(epsilon=args.epsilon, max_hypotheses=args.sp_max_hypotheses, clamp_rotation=args.clamp_rotation)


def _check_common(args: argparse.Namespace) -> None:
    if args.threads < 1:
        raise UsageError(f"--threads must be at least 1, got {args.threads}")
    if hasattr(args, "ratio_threshold") and not 0 < args.ratio_threshold <= 1:
        raise UsageError(f"--ratio-threshold must lie in (0, 1], got {args.ratio_threshold}")


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def _fmt_score(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def cmd_verify_pair(args: argparse.Namespace, out=None) -> int:
    out = out or sys.stdout
    tcfg, scfg = topo_config(args), spatial_config(args)
    p1 = load_features(args.features1)
    p2 = load_features(args.features2)
    matches = ratio_test_match(p1, p2, args.ratio_threshold) if len(p1) and len(p2) >= 2 else []
    sp = spatial_verify(p1, p2, scfg, matches=matches, threads=args.threads)
    tp = topo_verify(p1, p2, tcfg, threads=args.threads, matches=matches, sp_cfg=scfg)
    report = check_hr_validity(tp.best, tcfg.alpha)
    if not report.ok:
        raise InvariantViolation(f"best region fails condition {report.condition}: {report.message}")
    lines = [
        f"image1 {p1.image_id} {len(p1)}",
        f"image2 {p2.image_id} {len(p2)}",
        f"matches {len(matches)}",
        f"sp_inliers {sp.inlier_count}",
        f"tp_score {_fmt_score(tp.score)}",
        f"tp_metric {tp.metric}",
        f"tp_pairs {len(tp.best.pairs)}",
        f"tp_seed {'none' if tp.best.seed is None else tp.best.seed}",
    ]
    out.write("\n".join(lines) + "\n")
    if args.overlay is not None:
        write_overlay(args.overlay, tp, p1, p2)
    return EXIT_OK


def cmd_rerank(args: argparse.Namespace, err=None) -> int:
    err = err or sys.stderr
    tcfg, scfg = topo_config(args), spatial_config(args)
    if args.k < 0:
        raise UsageError(f"--k must be non-negative, got {args.k}")
    store = FeatureStore(args.store)
    lists = load_rankings(args.ranking)
    gt = load_ground_truth(args.ground_truth) if args.ground_truth else GroundTruth()
    result = []
    for rl in lists:
        query = store(rl.query_id)
        if query is None:
            err.write(f"skipped query {rl.query_id}: no feature file\n")
            result.append(rl)
            continue
        bbox = gt.queries[rl.query_id].bbox if rl.query_id in gt else None
        rr = rerank(query, rl, store, args.k, args.scorer, bbox, args.threads, tcfg, scfg, args.ratio_threshold)
        for img in rr.skipped:
            err.write(f"skipped {rl.query_id} {img}: no feature file\n")
        result.append(rr.ranked)
    args.output.write_text(format_rankings(result))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, out=None) -> int:
    out = out or sys.stdout
    lists = load_rankings(args.ranking)
    gt = load_ground_truth(args.ground_truth)
    res = map_eval(lists, gt, args.protocol)
    text = format_eval_csv(res)
    if args.output is not None:
        args.output.write_text(text)
        out.write(text.splitlines()[-1] + "\n")
    else:
        out.write(text)
    return EXIT_OK


_SYNTH_FIELDS = (
    "keypoint_count", "image_size", "scale_range", "anisotropy_range", "translation_range", "plane_count",
    "pattern_period", "corruption_rate", "clutter_fraction", "descriptor_dim", "descriptor_noise", "position_noise",
)


def cmd_synth(args: argparse.Namespace, out=None) -> int:
    out = out or sys.stdout
    if args.regime not in REGIMES:
        raise UsageError(f"--regime must be one of {REGIMES}, got {args.regime!r}")
    given = {f: getattr(args, f) for f in _SYNTH_FIELDS if getattr(args, f) is not None}
    given = {k: tuple(v) if isinstance(v, list) else v for k, v in given.items()}
    if args.family:
        spec = family_spec(args.regime, args.seed, **given)
    else:
        spec = SynthSpec(seed=args.seed, regime=args.regime, **given)
    pair = generate(spec)
    for path in write_fixture(pair, args.out, args.prefix, args.binary):
        out.write(f"wrote {path}\n")
    return EXIT_OK


COMMANDS = {"verify-pair": cmd_verify_pair, "rerank": cmd_rerank, "eval": cmd_eval, "synth": cmd_synth}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config(parser, subs[args.command], argv)
        _check_common(args)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    except (InvariantViolation, AssertionError) as exc:
        print(f"topoverify: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except MissingGroundTruthError as exc:
        print(f"topoverify: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FeatureFormatError, RetrievalFormatError, SynthParameterError, UsageError, ValueError) as exc:
        print(f"topoverify: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
