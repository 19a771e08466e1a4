"""Reranking of retrieval shortlists and Medium/Hard mAP evaluation.

File formats:

* ground truth: JSON ``{"queries": [{"id", "bbox"?, "easy", "hard", "junk"}]}``
  with ``bbox = [x_min, y_min, x_max, y_max]`` in query-image pixels;
* ranking: one text line per query, ``query_id: img1 img2 ...``, best first;
* evaluation output: CSV ``query_id,ap`` rows, then ``mAP <protocol> <value>``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .features import DEFAULT_RATIO, FeatureFormatError, FeatureSet, load_features
from .spatial import SpatialConfig, spatial_verify
from .topo import TopoConfig, topo_verify

PROTOCOLS = ("medium", "hard")
SCORERS = ("tp", "sp")
FEATURE_SUFFIXES = (".txt", ".tpf")


class UndefinedQueryError(ValueError):
    """Average precision asked for a query without positives."""


class MissingGroundTruthError(KeyError):
    def __init__(self, query_id: str):
        super().__init__(query_id)
        self.query_id = query_id

    def __str__(self) -> str:
        return f"no ground truth for query {self.query_id!r}"


class RetrievalFormatError(ValueError):
    """Malformed ground-truth or ranking file."""


@dataclass(frozen=True)
class QueryTruth:
    query_id: str
    easy: frozenset[str]
    hard: frozenset[str]
    junk: frozenset[str]
    bbox: tuple[float, float, float, float] | None = None

    def __post_init__(self) -> None:
        clash = (self.easy & self.hard) | (self.easy & self.junk) | (self.hard & self.junk)
        if clash:
            raise RetrievalFormatError(
                f"query {self.query_id}: ids listed under two labels: {sorted(clash)}"
            )
        if self.bbox is not None:
            x0, y0, x1, y1 = self.bbox
            if not (x1 > x0 and y1 > y0):
                raise RetrievalFormatError(f"query {self.query_id}: empty bbox {self.bbox}")

    def labels(self, protocol: str) -> tuple[frozenset[str], frozenset[str]]:
        """(positives, junk) under `protocol`."""
        protocol = check_protocol(protocol)
        if protocol == "medium":
            return self.easy | self.hard, self.junk
        return self.hard, self.junk | self.easy


@dataclass
class GroundTruth:
    queries: dict[str, QueryTruth] = field(default_factory=dict)

    def __getitem__(self, query_id: str) -> QueryTruth:
        try:
            return self.queries[query_id]
        except KeyError:
            raise MissingGroundTruthError(query_id) from None

    def __contains__(self, query_id: str) -> bool:
        return query_id in self.queries


@dataclass
class RankedList:
    """Candidates best first; `scores`, when present, align with `candidates`."""

    query_id: str
    candidates: list[str]
    scores: list[float] | None = None

    def __post_init__(self) -> None:
        if self.scores is not None:
            if len(self.scores) != len(self.candidates):
                raise ValueError("scores and candidates differ in length")
            if any(b > a for a, b in zip(self.scores, self.scores[1:])):
                raise ValueError(f"scores of {self.query_id} are not non-increasing")


@dataclass
class RerankResult:
    ranked: RankedList
    scores: dict[str, float]
    skipped: list[str]


@dataclass
class MapResult:
    protocol: str
    mean_ap: float
    per_query: list[tuple[str, float]]
    excluded: list[str]


def check_protocol(protocol: str) -> str:
    p = protocol.lower()
    if p not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")
    return p


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------


def average_precision(ranked: Iterable[str], positives: Iterable[str], junk: Iterable[str] = ()) -> float:
    """Mean, over all positives, of the precision at the rank where each is retrieved.

    Junk ids are dropped before ranks are counted. Positives never retrieved
    contribute zero; repeated ids count at their first occurrence only.

    Raises:
        UndefinedQueryError: `positives` is empty.
    """
    pos = set(positives)
    if not pos:
        raise UndefinedQueryError("average precision is undefined without positives")
    junk = set(junk)
    seen: set[str] = set()
    rank = 0
    found = 0
    total = 0.0
    for img in ranked:
        if img in junk or img in seen:
            continue
        seen.add(img)
        rank += 1
        if img in pos:
            found += 1
            total += found / rank
    return total / len(pos)


def map_eval(results: Iterable[RankedList], gt: GroundTruth, protocol: str) -> MapResult:
    """Mean AP over the queries in `results` under the Medium or Hard protocol.

    Queries with no positives under the protocol are excluded from the mean.
    The mean is NaN when every query is excluded.

    Raises:
        MissingGroundTruthError: a ranked query has no ground-truth entry.
    """
    protocol = check_protocol(protocol)
    per_query: list[tuple[str, float]] = []
    excluded: list[str] = []
    for rl in results:
        pos, junk = gt[rl.query_id].labels(protocol)
        if not pos:
            excluded.append(rl.query_id)
            continue
        per_query.append((rl.query_id, average_precision(rl.candidates, pos, junk)))
    # math.fsum keeps the mean independent of query order
    mean = math.fsum(ap for _, ap in per_query) / len(per_query) if per_query else float("nan")
    return MapResult(protocol, mean, per_query, excluded)


# --------------------------------------------------------------------------
# Reranking
# --------------------------------------------------------------------------


Scorer = Callable[[FeatureSet, FeatureSet], float]


class FeatureStore:
    """Resolves image ids to feature files ``<root>/<id>.txt`` or ``<root>/<id>.tpf``.

    Loaded sets are cached. An id without a readable file resolves to None.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise FileNotFoundError(f"feature store {self.root} is not a directory")
        self._cache: dict[str, FeatureSet | None] = {}

    def path_of(self, image_id: str) -> Path | None:
        for suffix in FEATURE_SUFFIXES:
            p = self.root / f"{image_id}{suffix}"
            if p.is_file():
                return p
        return None

    def __call__(self, image_id: str) -> FeatureSet | None:
        if image_id not in self._cache:
            p = self.path_of(image_id)
            self._cache[image_id] = load_features(p) if p is not None else None
        return self._cache[image_id]


def make_scorer(
    kind: str,
    topo_cfg: TopoConfig | None = None,
    sp_cfg: SpatialConfig | None = None,
    ratio_threshold: float = DEFAULT_RATIO,
) -> Scorer:
    if kind == "tp":
        return lambda q, c: float(topo_verify(q, c, topo_cfg, ratio_threshold, sp_cfg=sp_cfg).score)
    if kind == "sp":
        return lambda q, c: float(
            spatial_verify(q, c, sp_cfg, ratio_threshold).inlier_count if len(c) >= 2 else 0
        )
    raise ValueError(f"scorer must be one of {SCORERS}, got {kind!r}")


def rerank(
    query: FeatureSet,
    initial: RankedList,
    store: Callable[[str], FeatureSet | None] | Mapping[str, FeatureSet],
    k: int,
    scorer: str | Scorer = "tp",
    bbox: tuple[float, float, float, float] | None = None,
    threads: int = 1,
    topo_cfg: TopoConfig | None = None,
    sp_cfg: SpatialConfig | None = None,
    ratio_threshold: float = DEFAULT_RATIO,
) -> RerankResult:
    """Re-score the first `k` candidates against `query` and reorder them.

    The re-scored block is sorted by score, highest first, ties keeping the
    initial order. Candidates the store cannot resolve are reported as
    skipped and keep their initial position; everything past rank `k` is
    left untouched.
    """
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    if isinstance(store, Mapping):
        mapping = store
        store = mapping.get
    score_fn = make_scorer(scorer, topo_cfg, sp_cfg, ratio_threshold) if isinstance(scorer, str) else scorer
    if bbox is not None:
        query = query.crop(bbox)

    head = initial.candidates[:k]
    tail = initial.candidates[k:]
    resolved: list[tuple[int, str, FeatureSet]] = []
    skipped: list[str] = []
    for rank, img in enumerate(head):
        fs = _resolve(store, img)
        if fs is None:
            skipped.append(img)
        else:
            resolved.append((rank, img, fs))

    work = lambda item: score_fn(query, item[2])
    if threads > 1 and len(resolved) > 1:
        with ThreadPoolExecutor(threads) as ex:
            values = list(ex.map(work, resolved))
    else:
        values = [work(item) for item in resolved]

    order = sorted(range(len(resolved)), key=lambda i: (-values[i], resolved[i][0]))
    free = [rank for rank, _, _ in resolved]  # slots left to re-scored candidates
    new_head = list(head)
    for slot, i in zip(free, order):
        new_head[slot] = resolved[i][1]
    scores = {img: float(v) for (_, img, _), v in zip(resolved, values)}
    return RerankResult(RankedList(initial.query_id, new_head + tail), scores, skipped)


def _resolve(store, img: str) -> FeatureSet | None:
    try:
        return store(img)
    except (OSError, FeatureFormatError, KeyError):
        return None


# --------------------------------------------------------------------------
# File I/O
# --------------------------------------------------------------------------


def _ids(entry: dict, key: str, qid: str) -> frozenset[str]:
    vals = entry.get(key, [])
    if not isinstance(vals, list) or not all(isinstance(v, str) for v in vals):
        raise RetrievalFormatError(f"query {qid}: {key!r} must be a list of image ids")
    return frozenset(vals)


def parse_ground_truth(data: dict) -> GroundTruth:
    if not isinstance(data, dict) or not isinstance(data.get("queries"), list):
        raise RetrievalFormatError("ground truth must be an object with a 'queries' list")
    gt = GroundTruth()
    for n, entry in enumerate(data["queries"]):
        if not isinstance(entry, dict) or not isinstance(entry.get("id"), str):
            raise RetrievalFormatError(f"query entry {n} lacks a string 'id'")
        qid = entry["id"]
        if qid in gt.queries:
            raise RetrievalFormatError(f"query {qid} listed twice")
        bbox = entry.get("bbox")
        if bbox is not None:
            if not (isinstance(bbox, list) and len(bbox) == 4):
                raise RetrievalFormatError(f"query {qid}: bbox must be [x_min, y_min, x_max, y_max]")
            bbox = tuple(float(v) for v in bbox)
        gt.queries[qid] = QueryTruth(
            qid, _ids(entry, "easy", qid), _ids(entry, "hard", qid), _ids(entry, "junk", qid), bbox
        )
    return gt


def load_ground_truth(path: str | Path) -> GroundTruth:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise RetrievalFormatError(f"{path}: not valid JSON ({exc})") from exc
    return parse_ground_truth(data)


def parse_rankings(text: str) -> list[RankedList]:
    out: list[RankedList] = []
    seen: set[str] = set()
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        qid, sep, rest = line.partition(":")
        qid = qid.strip()
        if not sep or not qid or any(ch.isspace() for ch in qid):
            raise RetrievalFormatError(f"ranking line {n}: expected 'query_id: img1 img2 ...'")
        if qid in seen:
            raise RetrievalFormatError(f"ranking line {n}: query {qid} listed twice")
        seen.add(qid)
        out.append(RankedList(qid, rest.split()))
    return out


def load_rankings(path: str | Path) -> list[RankedList]:
    return parse_rankings(Path(path).read_text())


def format_rankings(lists: Iterable[RankedList]) -> str:
    return "".join(f"{rl.query_id}: {' '.join(rl.candidates)}\n" for rl in lists)


def write_rankings(path: str | Path, lists: Iterable[RankedList]) -> None:
    Path(path).write_text(format_rankings(lists))


def format_eval_csv(result: MapResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["query_id", "ap"])
    for qid, ap in result.per_query:
        w.writerow([qid, repr(ap)])
    buf.write(f"mAP {result.protocol} {result.mean_ap!r}\n")
    return buf.getvalue()
