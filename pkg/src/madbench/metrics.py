"""Detection performance indicators.

Scores are morphing-likelihood values in [0, 1], higher = more likely
morph. An attempt is classified as a morphing attack when its score is
at or above the detection threshold t, so over the threshold sweep

    apcer(t) = |{m in M : m < t}| / |M|   (attacks called bona fide)
    bpcer(t) = |{b in B : b >= t}| / |B|  (bona fide called attacks)

apcer is nondecreasing and bpcer nonincreasing in t. The sweep runs
over all distinct scores plus -inf/+inf sentinels, which pins the DET
endpoints at (0, 1) and (1, 0).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

HISTOGRAM_BINS = 20

#: APCER ceilings for the BPCER_N operating points.
BPCER_OPERATING_POINTS = {"bpcer10": 0.10, "bpcer20": 0.05, "bpcer100": 0.01}


class MetricError(ValueError):
    pass


def _as_arrays(bona_fide, morph) -> tuple[np.ndarray, np.ndarray]:
    b = np.asarray(bona_fide, dtype=float)
    m = np.asarray(morph, dtype=float)
    if b.size == 0 or m.size == 0:
        raise MetricError("both score classes must be nonempty")
    if not (np.isfinite(b).all() and np.isfinite(m).all()):
        raise MetricError("scores must be finite")
    return b, m


def threshold_sweep(bona_fide, morph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (thresholds, apcer, bpcer) over all distinct scores plus sentinels."""
    b, m = _as_arrays(bona_fide, morph)
    ts = np.unique(np.concatenate([b, m]))
    ts = np.concatenate([[-np.inf], ts, [np.inf]])
    b_sorted = np.sort(b)
    m_sorted = np.sort(m)
    apcer = np.searchsorted(m_sorted, ts, side="left") / m.size
    bpcer = (b.size - np.searchsorted(b_sorted, ts, side="left")) / b.size
    return ts, apcer, bpcer


def rates_at(bona_fide, morph, t: float) -> tuple[float, float]:
    """(apcer, bpcer) at a single threshold."""
    b, m = _as_arrays(bona_fide, morph)
    apcer = float(np.count_nonzero(m < t)) / m.size
    bpcer = float(np.count_nonzero(b >= t)) / b.size
    return apcer, bpcer


def eer(bona_fide, morph) -> float:
    """Equal-error rate.

    Picks the sweep threshold minimizing |apcer - bpcer|; ties resolved
    by lower combined error, then lower threshold. Returns the midpoint
    (apcer + bpcer) / 2 at the chosen threshold.
    """
    _, apcer, bpcer = threshold_sweep(bona_fide, morph)
    diff = np.abs(apcer - bpcer)
    comb = apcer + bpcer
    # lexsort keys are compared last-first; index order breaks remaining ties
    order = np.lexsort((np.arange(diff.size), comb, diff))
    k = order[0]
    return float((apcer[k] + bpcer[k]) / 2.0)


def bpcer_at_apcer(bona_fide, morph, apcer_max: float) -> float:
    """Lowest BPCER among thresholds with APCER <= apcer_max.

    The -inf sentinel (apcer 0, bpcer 1) is always feasible, so the
    value is well defined and at most 1.
    """
    _, apcer, bpcer = threshold_sweep(bona_fide, morph)
    feasible = bpcer[apcer <= apcer_max]
    return float(feasible.min())


def det_curve(bona_fide, morph) -> list[tuple[float, float]]:
    """DET points (apcer, bpcer), one per sweep threshold, deduplicated,
    ordered by apcer ascending (bpcer ties descend with sweep order)."""
    _, apcer, bpcer = threshold_sweep(bona_fide, morph)
    points: list[tuple[float, float]] = []
    for a, b in zip(apcer.tolist(), bpcer.tolist()):
        if not points or points[-1] != (a, b):
            points.append((a, b))
    return points


def rejection_rates(records) -> tuple[float, float]:
    """(rej_nbfra, rej_nmra): per-class fraction of rejected attempts.

    ``records`` is an iterable of (label, rejected) pairs with label
    'bona_fide' or 'morph'.
    """
    counts = {"bona_fide": [0, 0], "morph": [0, 0]}
    for label, rejected in records:
        cell = counts[label]
        cell[0] += 1
        if rejected:
            cell[1] += 1
    nb, rb = counts["bona_fide"]
    nm, rm = counts["morph"]
    return (rb / nb if nb else 0.0, rm / nm if nm else 0.0)


@dataclass(frozen=True)
class SubsetDeviation:
    """Percent EER deviation of a subset against the overall set.

    ``deviation_pct`` is None when the overall EER is zero (undefined).
    """

    attribute: str
    value: str
    eer_subset: float
    eer_overall: float
    deviation_pct: float | None
    n_morph: int = 0

    def as_dict(self) -> dict:
        return {
            "attribute": self.attribute,
            "value": self.value,
            "eer_subset": self.eer_subset,
            "eer_overall": self.eer_overall,
            "deviation_pct": self.deviation_pct,
            "n_morph": self.n_morph,
        }


def subset_deviation(
    eer_overall: float,
    eer_subset: float,
    attribute: str = "",
    value: str = "",
    n_morph: int = 0,
) -> SubsetDeviation:
    """Percent deviation (eer_s - eer_o) / eer_o * 100; negative = easier subset."""
    if eer_overall == 0.0:
        dev = None
    else:
        dev = (eer_subset - eer_overall) / eer_overall * 100.0
    return SubsetDeviation(attribute, value, eer_subset, eer_overall, dev, n_morph)


@dataclass
class ResultBundle:
    """Full indicator set computed from one benchmark run."""

    benchmark_id: str
    algorithm: str
    eer: float
    bpcer10: float
    bpcer20: float
    bpcer100: float
    rej_nbfra: float
    rej_nmra: float
    det_points: list[tuple[float, float]]
    score_histograms: dict[str, list[int]]
    subset_deviations: list[SubsetDeviation] = field(default_factory=list)

    def rates(self) -> dict[str, float]:
        return {
            "eer": self.eer,
            "bpcer10": self.bpcer10,
            "bpcer20": self.bpcer20,
            "bpcer100": self.bpcer100,
            "rej_nbfra": self.rej_nbfra,
            "rej_nmra": self.rej_nmra,
        }

    def validate(self) -> None:
        for name, value in self.rates().items():
            if not (0.0 <= value <= 1.0):
                raise MetricError(f"{name} out of [0,1]: {value}")
        prev = None
        for a, b in self.det_points:
            if prev is not None and (a < prev[0] or b > prev[1]):
                raise MetricError("det_points not weakly monotone")
            prev = (a, b)

    def to_json(self) -> str:
        doc = {
            "v": 1,
            "benchmark_id": self.benchmark_id,
            "algorithm": self.algorithm,
            **self.rates(),
            "det_points": [[a, b] for a, b in self.det_points],
            "score_histograms": self.score_histograms,
            "subset_deviations": [d.as_dict() for d in self.subset_deviations],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ResultBundle":
        doc = json.loads(text)
        devs = [
            SubsetDeviation(
                d["attribute"],
                d["value"],
                d["eer_subset"],
                d["eer_overall"],
                d["deviation_pct"],
                d["n_morph"],
            )
            for d in doc["subset_deviations"]
        ]
        return cls(
            benchmark_id=doc["benchmark_id"],
            algorithm=doc["algorithm"],
            eer=doc["eer"],
            bpcer10=doc["bpcer10"],
            bpcer20=doc["bpcer20"],
            bpcer100=doc["bpcer100"],
            rej_nbfra=doc["rej_nbfra"],
            rej_nmra=doc["rej_nmra"],
            det_points=[(a, b) for a, b in doc["det_points"]],
            score_histograms=doc["score_histograms"],
            subset_deviations=devs,
        )


def split_scores(score_records, benchmark):
    """Split score records by ground-truth label, excluding rejects.

    Returns (bona_fide_scores, morph_scores, rej_nbfra, rej_nmra).
    Raises if any benchmark attempt lacks an outcome.
    """
    by_id = {rec.attempt_id: rec for rec in score_records}
    missing = [a.attempt_id for a in benchmark.attempts if a.attempt_id not in by_id]
    if missing:
        raise MetricError(f"missing outcomes for attempts: {', '.join(missing[:10])}")
    b_scores: list[float] = []
    m_scores: list[float] = []
    labelled = []
    for att in benchmark.attempts:
        rec = by_id[att.attempt_id]
        labelled.append((att.label, rec.rejected))
        if rec.rejected:
            continue
        (b_scores if att.label == "bona_fide" else m_scores).append(rec.score)
    rej_b, rej_m = rejection_rates(labelled)
    return b_scores, m_scores, rej_b, rej_m


def default_subset_plan(dataset, benchmark) -> list[tuple[str, str]]:
    """All (attribute, value) combinations observed among morph suspects."""
    from . import datamodel

    seen: dict[tuple[str, str], None] = {}
    for att in benchmark.attempts:
        if att.label != "morph":
            continue
        image = dataset.images[att.suspect]
        for attr in datamodel.SUBSET_ATTRIBUTES:
            value = datamodel.morph_attribute(dataset, image, attr)
            if value is None:
                continue
            values = sorted(value) if isinstance(value, frozenset) else [value]
            for v in values:
                seen[(attr, str(v))] = None
    return list(seen)


def build_result_bundle(
    score_records,
    dataset,
    benchmark,
    subset_plan=None,
    algorithm: str = "",
) -> ResultBundle:
    """Compute the full indicator set for a completed benchmark run.

    Rejected attempts are excluded from all rate denominators and
    reported through the REJ indicators. Subset deviations are listed
    sorted by deviation ascending (undefined ones last).
    """
    from . import datamodel

    b_scores, m_scores, rej_b, rej_m = split_scores(score_records, benchmark)
    overall = eer(b_scores, m_scores)
    bundle = ResultBundle(
        benchmark_id=benchmark.benchmark_id,
        algorithm=algorithm,
        eer=overall,
        bpcer10=bpcer_at_apcer(b_scores, m_scores, BPCER_OPERATING_POINTS["bpcer10"]),
        bpcer20=bpcer_at_apcer(b_scores, m_scores, BPCER_OPERATING_POINTS["bpcer20"]),
        bpcer100=bpcer_at_apcer(b_scores, m_scores, BPCER_OPERATING_POINTS["bpcer100"]),
        rej_nbfra=rej_b,
        rej_nmra=rej_m,
        det_points=det_curve(b_scores, m_scores),
        score_histograms={
            "bona_fide": score_histogram(b_scores),
            "morph": score_histogram(m_scores),
        },
    )
    if subset_plan is None:
        subset_plan = default_subset_plan(dataset, benchmark)
    by_id = {rec.attempt_id: rec for rec in score_records}
    devs: list[SubsetDeviation] = []
    for attr, value in subset_plan:
        try:
            subset = datamodel.filter_subset(dataset, benchmark.attempts, [(attr, value)])
        except datamodel.DegenerateSubsetError:
            continue
        sb: list[float] = []
        sm: list[float] = []
        for att in subset:
            rec = by_id[att.attempt_id]
            if rec.rejected:
                continue
            (sb if att.label == "bona_fide" else sm).append(rec.score)
        if not sb or not sm:
            continue
        devs.append(
            subset_deviation(overall, eer(sb, sm), attribute=attr, value=value, n_morph=len(sm))
        )
    devs.sort(key=lambda d: (d.deviation_pct is None, d.deviation_pct or 0.0, d.attribute, d.value))
    bundle.subset_deviations = devs
    bundle.validate()
    return bundle


def score_histogram(scores) -> list[int]:
    hist, _ = np.histogram(np.asarray(scores, dtype=float), bins=HISTOGRAM_BINS, range=(0.0, 1.0))
    return hist.astype(int).tolist()


def det_curve_csv(points) -> str:
    lines = ["apcer,bpcer"]
    for a, b in points:
        lines.append(f"{a:.6f},{b:.6f}")
    return "\n".join(lines) + "\n"


def deviation_table_csv(rows: list[dict], algorithms: list[str]) -> str:
    """Subset-deviation table, one row per subset, sorted by mean deviation.

    ``rows`` entries carry attribute, value and a per-algorithm mapping of
    deviation percents (None = undefined, rendered as empty).
    """

    def fmt(x: float | None) -> str:
        return "" if x is None else f"{x:.2f}%"

    def mean_dev(row: dict) -> float:
        vals = [row["devs"].get(a) for a in algorithms]
        vals = [v for v in vals if v is not None]
        return sum(vals) / len(vals) if vals else math.inf

    header = ["attribute", "subset", "mean_dev"] + algorithms
    lines = [",".join(header)]
    for row in sorted(rows, key=lambda r: (mean_dev(r), r["attribute"], r["value"])):
        md = mean_dev(row)
        cells = [row["attribute"], row["value"], fmt(None if math.isinf(md) else md)]
        cells += [fmt(row["devs"].get(a)) for a in algorithms]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
