"""Grounding, captioning and QA metrics.

Thresholds are strict: a box pair counts only when its IoU *exceeds* the
threshold. BLEU smoothing is off unless requested; with ``smooth=True``
the 2- to 4-gram precisions become ``(hits + 1) / (total + 1)``.
"""

import json
import math
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ParseError
from .graph import aabb_iou
from .scene import AxisAlignedBox

FLOAT_DIGITS = 10


@dataclass(frozen=True)
class GroundingPrediction:
    query_id: str
    pred_boxes: tuple
    gt_boxes: tuple


@dataclass(frozen=True)
class CaptionPair:
    candidate: list
    references: list

    @classmethod
    def from_strings(cls, candidate, references):
        return cls(tokenize(candidate), [tokenize(r) for r in references])


def tokenize(text):
    return text.lower().split()


def acc_at_iou(preds, threshold):
    """Fraction of single-box predictions whose IoU with the ground truth
    exceeds ``threshold``. ``preds`` holds (pred_box, gt_box) pairs or
    GroundingPrediction records with one box each."""
    hits = 0
    total = 0
    for p in preds:
        if isinstance(p, GroundingPrediction):
            if len(p.pred_boxes) != 1 or len(p.gt_boxes) != 1:
                raise ValueError(f"query {p.query_id}: accuracy needs exactly one box each")
            pred, gt = p.pred_boxes[0], p.gt_boxes[0]
        else:
            pred, gt = p
        total += 1
        hits += aabb_iou(pred, gt) > threshold
    return hits / total if total else 0.0


def iou_matrix(a_boxes, b_boxes):
    return np.array([[aabb_iou(a, b) for b in b_boxes] for a in a_boxes]).reshape(len(a_boxes), len(b_boxes))


def match_boxes(pred_boxes, gt_boxes, threshold):
    """One-to-one matching that maximizes the number of pairs above
    ``threshold``, then their summed IoU. Returns a list of (pred, gt) index pairs."""
    if not pred_boxes or not gt_boxes:
        return []
    iou = iou_matrix(pred_boxes, gt_boxes)
    good = iou > threshold
    # Count dominates: the IoU sum of any matching is below min(n, m) + 1.
    big = min(iou.shape) + 1.0
    weight = np.where(good, big + iou, 0.0)
    rows, cols = linear_sum_assignment(weight, maximize=True)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if good[r, c]]


def f1_at_iou(pred_boxes, gt_boxes, threshold):
    """(precision, recall, f1). Both lists empty scores (1, 1, 1); one empty scores 0."""
    if not pred_boxes and not gt_boxes:
        return 1.0, 1.0, 1.0
    if not pred_boxes or not gt_boxes:
        return 0.0, 0.0, 0.0
    tp = len(match_boxes(pred_boxes, gt_boxes, threshold))
    precision = tp / len(pred_boxes)
    recall = tp / len(gt_boxes)
    if tp == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(pair, smooth=False):
    cand = pair.candidate
    refs = pair.references
    if not cand or not refs:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        counts = _ngrams(cand, n)
        max_ref = Counter()
        for r in refs:
            for g, c in _ngrams(r, n).items():
                max_ref[g] = max(max_ref[g], c)
        hits = sum(min(c, max_ref[g]) for g, c in counts.items())
        total = max(len(cand) - n + 1, 0)
        if smooth and n >= 2:
            hits, total = hits + 1, total + 1
        if hits == 0:
            return 0.0
        log_sum += math.log(hits / total)
    c = len(cand)
    r = min((len(ref) for ref in refs), key=lambda L: (abs(L - c), L))
    bp = math.exp(min(0.0, 1.0 - r / c))
    return bp * math.exp(log_sum / 4)


def normalize_answer(text):
    text = " ".join(text.lower().split())
    if text.endswith("."):
        text = text[:-1].rstrip()
    return text


def exact_match(candidate, references):
    cand = normalize_answer(candidate)
    return int(any(cand == normalize_answer(r) for r in references))


# -- JSONL evaluation ----------------------------------------------------------

def _round(x):
    return round(float(x), FLOAT_DIGITS)


def _boxes(raw, where):
    try:
        return tuple(AxisAlignedBox.from_array(b) for b in raw)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad box list: {exc}", location=where) from None


def read_records(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(exc.msg, location=f"line {lineno} column {exc.colno}") from None
            if not isinstance(rec, dict) or "id" not in rec:
                raise ParseError("record needs an id", location=f"line {lineno}")
            rec["_line"] = lineno
            records.append(rec)
    return records


def evaluate_records(records, thresholds=(0.25, 0.5), smooth=False):
    """Aggregate metrics plus per-query diagnostics, ready for ``metrics.json``."""
    per_query = []
    acc_hits = {t: [] for t in thresholds}
    f1s = {t: [] for t in thresholds}
    bleus, ems = [], []
    for rec in records:
        qid = str(rec["id"])
        where = f"line {rec.get('_line', '?')}"
        if "pred_boxes" in rec or "gt_boxes" in rec:
            pred = _boxes(rec.get("pred_boxes", []), where)
            gt = _boxes(rec.get("gt_boxes", []), where)
            diag = {"id": qid, "type": "grounding"}
            if len(pred) == 1 and len(gt) == 1:
                iou = aabb_iou(pred[0], gt[0])
                diag["iou"] = _round(iou)
                for t in thresholds:
                    acc_hits[t].append(iou > t)
            for t in thresholds:
                p, r, f = f1_at_iou(list(pred), list(gt), t)
                f1s[t].append(f)
                diag[f"f1@{t}"] = _round(f)
            per_query.append(diag)
        elif "candidate" in rec:
            refs = rec.get("references") or []
            if not isinstance(refs, list):
                raise ParseError("references must be a list", location=where)
            b = bleu4(CaptionPair.from_strings(rec["candidate"], refs), smooth=smooth)
            em = exact_match(rec["candidate"], refs)
            bleus.append(b)
            ems.append(em)
            per_query.append({"id": qid, "type": "caption", "bleu4": _round(b), "em": em})
        else:
            raise ParseError("record is neither a grounding nor a caption query", location=where)

    summary = {}
    for t in thresholds:
        if acc_hits[t]:
            summary[f"acc@{t}"] = _round(sum(acc_hits[t]) / len(acc_hits[t]))
        if f1s[t]:
            summary[f"f1@{t}"] = _round(sum(f1s[t]) / len(f1s[t]))
    if bleus:
        summary["bleu4"] = _round(sum(bleus) / len(bleus))
        summary["em"] = _round(sum(ems) / len(ems))
    summary["n_queries"] = len(per_query)
    return {"metrics": summary, "per_query": per_query,
            "settings": {"thresholds": list(thresholds), "bleu_smoothing": smooth}}


def dump_metrics(result):
    return json.dumps(result, indent=1, sort_keys=True) + "\n"
