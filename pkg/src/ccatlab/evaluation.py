"""Two-stage robustness evaluation with a reject option.

Stage one picks a confidence threshold on held-out correctly classified
clean examples so that at least the target fraction of them is kept.
Stage two computes confidence-thresholded test error, robust test error,
detection FPR, and ROC AUC over per-example worst-case attack outcomes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .attacks import AttackOutcome, worst_case_merge
from .net import Network, predict


@dataclass
class EvalRecord:
    example_id: int
    y: int
    clean_label: int
    clean_conf: float
    adv_label: int | None = None
    adv_conf: float | None = None
    has_adv: bool = False
    attack_name: str | None = None


@dataclass
class ThresholdReport:
    tau: float
    target_tpr: float
    achieved_tpr: float
    holdout_size: int


class MetricResult(NamedTuple):
    value: float
    empty_denominator: bool = False


def select_threshold(confidences: Sequence[float], target_tpr: float) -> ThresholdReport:
    """Largest observed confidence keeping at least target_tpr of the list.

    tau is the ceil(target_tpr * M)-th largest confidence, so no
    interpolation is involved and the achieved TPR is at least the target.
    """
    confs = np.asarray(list(confidences), dtype=np.float64)
    if confs.size == 0:
        raise ValueError("cannot select a threshold from an empty holdout")
    if not 0.0 < target_tpr <= 1.0:
        raise ValueError("target_tpr must be in (0, 1]")
    m = confs.size
    # Small backoff so e.g. 0.9 * 10 does not ceil to 10 from rounding up.
    rank = max(1, min(m, math.ceil(target_tpr * m - 1e-12)))
    tau = float(np.sort(confs)[::-1][rank - 1])
    achieved = float((confs >= tau).sum() / m)
    return ThresholdReport(tau=tau, target_tpr=target_tpr, achieved_tpr=achieved, holdout_size=m)


def conf_thresholded_te(records: Sequence[EvalRecord], tau: float) -> MetricResult:
    """Error rate among clean predictions that pass the threshold."""
    num = den = 0
    for r in records:
        if r.clean_conf >= tau:
            den += 1
            if r.clean_label != r.y:
                num += 1
    if den == 0:
        return MetricResult(0.0, True)
    return MetricResult(num / den, False)


def _require_adv(r: EvalRecord):
    if r.adv_label is None or r.adv_conf is None:
        raise ValueError(f"record {r.example_id} promises adversarial fields but has none")


def conf_thresholded_rte(records: Sequence[EvalRecord], tau: float) -> MetricResult:
    """Robust test error restricted to examples that pass thresholding.

    Counts an example as an error if either its clean prediction or its
    worst-case adversarial prediction is wrong and accepted; the
    denominator counts examples where either prediction is accepted.
    At tau = 0 this is the standard robust test error.
    """
    num = den = 0
    for r in records:
        clean_pass = r.clean_conf >= tau
        clean_bad = clean_pass and r.clean_label != r.y
        adv_pass = adv_bad = False
        if r.has_adv:
            _require_adv(r)
            adv_pass = r.adv_conf >= tau
            adv_bad = adv_pass and r.adv_label != r.y
        if clean_pass or adv_pass:
            den += 1
        if clean_bad or adv_bad:
            num += 1
    if den == 0:
        return MetricResult(0.0, True)
    return MetricResult(num / den, False)


def fpr_at_threshold(records: Sequence[EvalRecord], tau: float) -> MetricResult:
    """Fraction of successful attacks on correctly classified examples whose
    adversarial confidence passes the threshold."""
    num = den = 0
    for r in records:
        if r.clean_label != r.y or not r.has_adv:
            continue
        _require_adv(r)
        if r.adv_label == r.y:
            continue  # unsuccessful attacks are never negatives
        den += 1
        if r.adv_conf >= tau:
            num += 1
    if den == 0:
        return MetricResult(0.0, True)
    return MetricResult(num / den, False)


def roc_auc(positives: Sequence[float], negatives: Sequence[float]) -> float:
    """P(pos > neg) + 0.5 * P(pos == neg) over all pairs, via midranks."""
    pos = np.asarray(list(positives), dtype=np.float64)
    neg = np.asarray(list(negatives), dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("roc_auc needs non-empty positives and negatives")
    combined = np.concatenate([pos, neg])
    order = np.argsort(combined, kind="stable")
    ranks = np.empty(combined.size, dtype=np.float64)
    sorted_vals = combined[order]
    i = 0
    while i < sorted_vals.size:
        j = i
        while j + 1 < sorted_vals.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # midrank, 1-based
        i = j + 1
    n_pos, n_neg = pos.size, neg.size
    wins = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(wins / (n_pos * n_neg))


def detection_sets(records: Sequence[EvalRecord]):
    """Positives are clean confidences of correctly classified records;
    negatives are adversarial confidences of successful attacks on them."""
    positives, negatives = [], []
    for r in records:
        if r.clean_label != r.y:
            continue
        positives.append(r.clean_conf)
        if r.has_adv and r.adv_label is not None and r.adv_label != r.y:
            negatives.append(r.adv_conf)
    return positives, negatives


BatchAttack = Callable[[Network, np.ndarray, np.ndarray, Sequence[int]], list[AttackOutcome]]


def build_eval_records(
    net: Network,
    inputs: np.ndarray,
    labels: np.ndarray,
    attack_suite: Sequence[tuple[str, BatchAttack]],
    example_ids: Sequence[int] | None = None,
) -> list[EvalRecord]:
    """Clean predictions plus the per-example worst case across all attacks."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    labels = np.asarray(labels, dtype=int)
    n = inputs.shape[0]
    ids = list(range(n)) if example_ids is None else list(example_ids)
    clean_labels, clean_confs, _ = predict(net, inputs)

    per_example: list[list[tuple[str, AttackOutcome]]] = [[] for _ in range(n)]
    for name, attack in attack_suite:
        outcomes = attack(net, inputs, labels, ids)
        for i, o in enumerate(outcomes):
            per_example[i].append((name, o))

    records = []
    for i in range(n):
        rec = EvalRecord(
            example_id=ids[i],
            y=int(labels[i]),
            clean_label=int(clean_labels[i]),
            clean_conf=float(clean_confs[i]),
        )
        if per_example[i]:
            merged = worst_case_merge([o for _, o in per_example[i]])
            rec.adv_label = merged.adv_label
            rec.adv_conf = merged.adv_confidence
            rec.has_adv = True
            rec.attack_name = next(nm for nm, o in per_example[i] if o is merged)
        records.append(rec)
    return records


RECORD_FIELDS = ["example_id", "y", "clean_label", "clean_conf", "adv_label", "adv_conf", "attack_name"]


def write_records_csv(records: Sequence[EvalRecord], path: str):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(RECORD_FIELDS)
        for r in records:
            writer.writerow(
                [
                    r.example_id,
                    r.y,
                    r.clean_label,
                    format(r.clean_conf, ".17g"),
                    "" if r.adv_label is None else r.adv_label,
                    "" if r.adv_conf is None else format(r.adv_conf, ".17g"),
                    r.attack_name or "",
                ]
            )


def read_records_csv(path: str) -> list[EvalRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        for row in reader:
            has_adv = row["adv_label"] != "" and row["adv_conf"] != ""
            records.append(
                EvalRecord(
                    example_id=int(row["example_id"]),
                    y=int(row["y"]),
                    clean_label=int(row["clean_label"]),
                    clean_conf=float(row["clean_conf"]),
                    adv_label=int(row["adv_label"]) if has_adv else None,
                    adv_conf=float(row["adv_conf"]) if has_adv else None,
                    has_adv=has_adv,
                    attack_name=row["attack_name"] or None,
                )
            )
    return records


def metrics_summary(
    rte_records: Sequence[EvalRecord],
    te_records: Sequence[EvalRecord],
    holdout_confidences: Sequence[float],
    target_tpr: float,
) -> dict:
    """The metrics document: threshold, TPR, TE, RTE, FPR, AUC, counts."""
    report = select_threshold(holdout_confidences, target_tpr)
    te = conf_thresholded_te(te_records, report.tau)
    rte = conf_thresholded_rte(rte_records, report.tau)
    fpr = fpr_at_threshold(rte_records, report.tau)
    positives, negatives = detection_sets(rte_records)
    auc = roc_auc(positives, negatives) if positives and negatives else None
    return {
        "tau": report.tau,
        "tpr": report.achieved_tpr,
        "te_tau": te.value,
        "rte_tau": rte.value,
        "fpr": fpr.value,
        "auc": auc,
        "n_records": len(rte_records),
    }
