"""Chance-corrected inter-rater agreement statistics.

Implements the weighted multi-rater coefficient (AC2 family) and the
two-rater weighted kappa over ordinal rating matrices, plus the facet
machinery that slices score records by metric, language, and pipeline and
compares human raters with each other or with one judge at a time.

Ratings are categories 1..q; missing ratings are allowed (an item only needs
one rating to inform prevalence, and two to inform observed agreement).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np


class AgreementError(Exception):
    pass


class DegenerateMatrix(AgreementError):
    pass


class UndefinedCoefficient(AgreementError):
    pass


@dataclass
class WeightScheme:
    kind: str
    matrix: np.ndarray  # q x q, symmetric, unit diagonal, values in [0, 1]

    @property
    def q(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, q: int = 5) -> "WeightScheme":
        return cls(kind="identity", matrix=np.eye(q))

    @classmethod
    def linear(cls, q: int = 5) -> "WeightScheme":
        k = np.arange(q)[:, None]
        l = np.arange(q)[None, :]
        return cls(kind="linear", matrix=1.0 - np.abs(k - l) / (q - 1))

    @classmethod
    def quadratic(cls, q: int = 5) -> "WeightScheme":
        k = np.arange(q)[:, None]
        l = np.arange(q)[None, :]
        return cls(kind="quadratic", matrix=1.0 - ((k - l) / (q - 1)) ** 2)


@dataclass
class RaterMatrix:
    """Items x raters table of categorical ratings in 1..q (None = missing)."""

    items: list[str]
    raters: list[str]
    ratings: list[list[Optional[int]]]
    q: int = 5

    def __post_init__(self):
        if len(self.ratings) != len(self.items):
            raise ValueError("one rating row per item required")
        for row in self.ratings:
            if len(row) != len(self.raters):
                raise ValueError("one rating column per rater required")
            for value in row:
                if value is not None and not 1 <= value <= self.q:
                    raise ValueError(f"rating {value} outside 1..{self.q}")
            if all(value is None for value in row):
                raise ValueError("every item needs at least one rating")

    def counts(self) -> np.ndarray:
        """Per-item category counts r_ik, shape (n_items, q)."""
        out = np.zeros((len(self.items), self.q))
        for i, row in enumerate(self.ratings):
            for value in row:
                if value is not None:
                    out[i, value - 1] += 1
        return out


def gwet_ac2(m: RaterMatrix, w: Optional[WeightScheme] = None) -> float:
    """Weighted chance-corrected multi-rater agreement.

    Observed agreement averages, over items with at least two ratings, the
    weighted share of agreeing rater pairs; chance agreement is built from
    overall category prevalence, scaled by the total weight mass.
    """
    w = w or WeightScheme.linear(m.q)
    if w.q != m.q:
        raise ValueError("weight scheme size does not match category count")
    counts = m.counts()
    r_i = counts.sum(axis=1)
    multi = r_i >= 2
    if not multi.any():
        raise DegenerateMatrix("need at least one item with two or more ratings")

    weighted_counts = counts @ w.matrix.T  # r*_ik = sum_l w_kl r_il
    num = (counts[multi] * (weighted_counts[multi] - 1)).sum(axis=1)
    den = r_i[multi] * (r_i[multi] - 1)
    pa = float(np.mean(num / den))

    prevalence = (counts / r_i[:, None]).mean(axis=0)  # pi_k over all items
    t_w = float(w.matrix.sum())
    pe = t_w / (m.q * (m.q - 1)) * float((prevalence * (1 - prevalence)).sum())
    if abs(1 - pe) < 1e-12:
        raise UndefinedCoefficient("chance agreement is 1")
    return (pa - pe) / (1 - pe)


def gwet_ac1_unweighted(m: RaterMatrix) -> float:
    """Separately coded unweighted variant, used as an oracle: with identity
    weights the weighted coefficient must reduce to this exactly."""
    counts = m.counts()
    r_i = counts.sum(axis=1)
    multi = r_i >= 2
    if not multi.any():
        raise DegenerateMatrix("need at least one item with two or more ratings")
    pa_terms = []
    for i in np.flatnonzero(multi):
        agree = sum(c * (c - 1) for c in counts[i])
        pa_terms.append(agree / (r_i[i] * (r_i[i] - 1)))
    pa = sum(pa_terms) / len(pa_terms)
    prevalence = (counts / r_i[:, None]).mean(axis=0)
    pe = sum(p * (1 - p) for p in prevalence) / (m.q - 1)
    if abs(1 - pe) < 1e-12:
        raise UndefinedCoefficient("chance agreement is 1")
    return (pa - pe) / (1 - pe)


def weighted_kappa(m: RaterMatrix, w: Optional[WeightScheme] = None) -> float:
    """Two-rater weighted kappa: one minus the ratio of observed to
    chance-expected disagreement weight, chance taken from the two raters'
    marginal distributions."""
    w = w or WeightScheme.linear(m.q)
    if len(m.raters) != 2:
        raise DegenerateMatrix("weighted kappa requires exactly two raters")
    pairs = [(row[0], row[1]) for row in m.ratings]
    if any(a is None or b is None for a, b in pairs):
        raise DegenerateMatrix("weighted kappa requires complete ratings")
    n = len(pairs)
    v = 1.0 - w.matrix  # disagreement weights
    observed = sum(v[a - 1, b - 1] for a, b in pairs) / n

    p1 = np.zeros(m.q)
    p2 = np.zeros(m.q)
    for a, b in pairs:
        p1[a - 1] += 1
        p2[b - 1] += 1
    p1 /= n
    p2 /= n
    chance = float(p1 @ v @ p2)
    if chance < 1e-12:
        raise UndefinedCoefficient("no chance-expected disagreement")
    return 1.0 - observed / chance


def median_low(values: list[int]) -> int:
    """Median taking the lower of the two middle values on even counts."""
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


# --------------------------------------------------------------------------
# Facet-level agreement over score records


def _facet_key(record, pair_meta: dict, facet: list[str]) -> Optional[tuple]:
    key = []
    for name in facet:
        if name == "metric":
            key.append(record.metric)
        else:
            meta = pair_meta.get(record.pair_id)
            if meta is None:
                return None
            key.append(getattr(meta, name if name != "topic" else "topic_label") or "")
    return tuple(key)


def facet_agreement(
    records: list,
    facet: list[str],
    comparison: str,
    pairs: Optional[dict] = None,
    q: int = 5,
    weights: Optional[WeightScheme] = None,
) -> list[dict]:
    """Per-facet agreement rows.

    comparison="human_human": one multi-rater matrix per cell over the human
    records. comparison="llm_vs_human": per judge per cell, a two-rater
    matrix of (judge score, per-item lower-median human score); both the
    weighted multi-rater coefficient and weighted kappa are reported.
    """
    if comparison not in ("human_human", "llm_vs_human"):
        raise ValueError(f"unknown comparison {comparison!r}")
    weights = weights or WeightScheme.linear(q)
    pair_meta = pairs or {}

    cells: dict[tuple, list] = {}
    for record in records:
        key = _facet_key(record, pair_meta, facet)
        if key is None:
            continue
        cells.setdefault(key, []).append(record)

    rows = []
    for key in sorted(cells):
        cell_records = cells[key]
        humans = [r for r in cell_records if r.rater_kind == "human"]
        if comparison == "human_human":
            matrix = _human_matrix(humans, q)
            if matrix is None:
                continue
            try:
                value = gwet_ac2(matrix, weights)
            except AgreementError:
                continue
            rows.append(
                dict(zip(facet, key))
                | {"judge": "", "n_items": len(matrix.items), "ac2": value, "weighted_kappa": None}
            )
        else:
            llm_by_judge: dict[str, dict[str, int]] = {}
            for r in cell_records:
                if r.rater_kind == "llm":
                    llm_by_judge.setdefault(r.rater_id, {})[r.pair_id] = r.score
            human_scores: dict[str, list[int]] = {}
            for r in humans:
                human_scores.setdefault(r.pair_id, []).append(r.score)
            for judge in sorted(llm_by_judge):
                judged = llm_by_judge[judge]
                item_ids = sorted(set(judged) & set(human_scores))
                if not item_ids:
                    continue
                matrix = RaterMatrix(
                    items=item_ids,
                    raters=[judge, "human_median"],
                    ratings=[
                        [judged[pid], median_low(human_scores[pid])] for pid in item_ids
                    ],
                    q=q,
                )
                try:
                    ac2 = gwet_ac2(matrix, weights)
                except AgreementError:
                    ac2 = None
                try:
                    kappa = weighted_kappa(matrix, weights)
                except AgreementError:
                    kappa = None
                if ac2 is None and kappa is None:
                    continue
                rows.append(
                    dict(zip(facet, key))
                    | {
                        "judge": judge,
                        "n_items": len(item_ids),
                        "ac2": ac2,
                        "weighted_kappa": kappa,
                    }
                )
    return rows


def _human_matrix(records: list, q: int) -> Optional[RaterMatrix]:
    by_item: dict[str, dict[str, int]] = {}
    raters: set[str] = set()
    for r in records:
        by_item.setdefault(r.pair_id, {})[r.rater_id] = r.score
        raters.add(r.rater_id)
    if not by_item or len(raters) < 2:
        return None
    rater_ids = sorted(raters)
    items = sorted(by_item)
    ratings = [[by_item[item].get(rid) for rid in rater_ids] for item in items]
    return RaterMatrix(items=items, raters=rater_ids, ratings=ratings, q=q)


def facet_rows_to_csv(rows: list[dict], facet: list[str]) -> str:
    header = facet + ["judge", "n_items", "ac2", "weighted_kappa"]
    lines = [",".join(header)]
    for row in rows:
        cells = [str(row[name]) for name in facet] + [str(row["judge"]), str(row["n_items"])]
        for column in ("ac2", "weighted_kappa"):
            value = row[column]
            cells.append("" if value is None else f"{value:.3f}")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def facet_rows_to_json(rows: list[dict]) -> str:
    return json.dumps(rows, ensure_ascii=False, indent=2) + "\n"
