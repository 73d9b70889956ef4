"""Evaluation: rank/linear correlations, paired-listening accuracy, reports.

Correlations are computed from their definitions (Pearson on values, Pearson
on average ranks for the rank variant) so they double as oracles for any
downstream tooling.  Paired-comparison accuracy divides correct answers by
pairs-per-cell times the number of distinct subjects found in the data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .datastore import CorpusManifest
from .errors import InvalidInputError, UndefinedMetricError
from .quality import predict_mos
from .signal import read_wav

PAIR_ANSWERS = ("first", "second", "both", "none")
PAIR_KINDS = ("Mask", "Enhanced")


def pcc(a, b) -> float:
    """Pearson correlation coefficient."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise InvalidInputError("need two equal-length sequences of at least 2 points")
    am, bm = a - a.mean(), b - b.mean()
    va, vb = np.sum(am * am), np.sum(bm * bm)
    if va == 0.0 or vb == 0.0:
        raise UndefinedMetricError("zero variance input")
    return float(np.sum(am * bm) / np.sqrt(va * vb))


def srcc(a, b) -> float:
    """Spearman rank correlation with average-rank tie handling."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise InvalidInputError("need two equal-length sequences of at least 2 points")
    ra = scipy.stats.rankdata(a, method="average")
    rb = scipy.stats.rankdata(b, method="average")
    if np.all(ra == ra[0]) or np.all(rb == rb[0]):
        raise UndefinedMetricError("all-tied sequence has no rank ordering")
    return pcc(ra, rb)


@dataclass(frozen=True)
class PairResponse:
    pair_id: str
    mask_type: str          # C1: n95 | cotton | plastic
    pair_kind: str          # C2: Mask | Enhanced
    subject_id: str
    answer: str             # first | second | both | none
    correct: bool

    def __post_init__(self):
        if self.answer not in PAIR_ANSWERS:
            raise InvalidInputError(f"answer must be one of {PAIR_ANSWERS}")
        if self.pair_kind not in PAIR_KINDS:
            raise InvalidInputError(f"pair_kind must be one of {PAIR_KINDS}")


def paired_accuracy(responses) -> dict:
    """Per-(mask_type, pair_kind) accuracy table.

    accuracy = correct / (distinct pairs in the cell x distinct subjects over
    the whole response set); cells with no pairs are simply absent.
    """
    responses = list(responses)
    subjects = {r.subject_id for r in responses}
    n_subjects = len(subjects)
    cells = {}
    for r in responses:
        key = (r.mask_type, r.pair_kind)
        cell = cells.setdefault(key, {"pairs": set(), "correct": 0, "responses": 0})
        cell["pairs"].add(r.pair_id)
        cell["responses"] += 1
        cell["correct"] += int(r.correct)
    out = {}
    for key, cell in cells.items():
        denom = len(cell["pairs"]) * n_subjects
        out[key] = {
            "accuracy": cell["correct"] / denom if denom else 0.0,
            "pairs": len(cell["pairs"]),
            "responses": cell["responses"],
            "correct": cell["correct"],
        }
    return out


def overall_accuracy(table) -> float:
    """Pair-count weighted mean over cells; equals pooled correct/total
    because every cell is normalized by the same subject count."""
    total = 0.0
    weight = 0.0
    for c in table.values():
        total += c["accuracy"] * c["pairs"]
        weight += c["pairs"]
    return total / weight if weight else 0.0


@dataclass
class ConditionReport:
    condition: str
    masked_mean: float | None
    enhanced_mean: float | None
    count: int


def evaluate_checkpoint(enhancer, predictor, manifest: CorpusManifest,
                        split="test", clamp=(1.0, 5.0)) -> list:
    """Mean predicted quality per condition, masked row vs enhanced row.

    ``enhancer`` provides .enhance(waveform); ``predictor`` provides
    .predict_mos(waveform).  Displayed scores are clamped to the rating scale.
    """
    rows = []
    entries = manifest.by_split(split) or manifest.entries
    conditions = sorted({e.condition for e in entries if e.condition != "clean"})
    for condition in conditions:
        masked_scores, enhanced_scores = [], []
        for e in entries:
            if e.condition != condition:
                continue
            w = read_wav(e.path)
            masked_scores.append(predict_mos(w, predictor).utterance_score)
            enhanced_scores.append(predict_mos(enhancer.enhance(w), predictor).utterance_score)
        if not masked_scores:
            continue
        lo, hi = clamp
        rows.append(ConditionReport(
            condition=condition,
            masked_mean=float(np.clip(np.mean(masked_scores), lo, hi)),
            enhanced_mean=float(np.clip(np.mean(enhanced_scores), lo, hi)),
            count=len(masked_scores),
        ))
    return rows


def report_to_text(rows, fmt="table") -> str:
    if fmt == "json":
        return json.dumps([r.__dict__ for r in rows], indent=1, sort_keys=True)
    lines = ["condition\tcount\tmasked\tenhanced"]
    for r in rows:
        lines.append(f"{r.condition}\t{r.count}\t{r.masked_mean:.3f}\t{r.enhanced_mean:.3f}")
    return "\n".join(lines)


def count_parameters(checkpoint_or_net) -> int:
    """Total scalar parameter count of a model or model checkpoint."""
    if hasattr(checkpoint_or_net, "param_count"):
        return checkpoint_or_net.param_count()
    params = checkpoint_or_net.params
    return int(sum(v.size for k, v in params.items() if not k.startswith("feat.")))
