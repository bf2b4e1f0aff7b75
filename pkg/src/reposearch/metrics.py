"""Ranking metrics for localization output and the nDCG@k trajectory reward.

All metrics use binary relevance: an item is relevant iff it is in the
ground-truth set. Ranks are 1-based; discounts use log base 2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DuplicateItems, EmptyGroundTruth, MalformedIdentifier, UnmatchedQuery
from .identifiers import FunctionIdentifier, canonical, normalize_identifier

LEVELS = ("file", "function")
REPORT_RECALL_KS = (1, 3, 5)


def _check_k(k: int) -> None:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")


def _require(relevant) -> None:
    if not relevant:
        raise EmptyGroundTruth("ground-truth set is empty")


def dcg_at_k(ranked: Sequence, relevant, k: int) -> float:
    _check_k(k)
    return sum(1.0 / math.log2(i + 1) for i, item in enumerate(ranked[:k], 1) if item in relevant)


def idcg_at_k(relevant, k: int) -> float:
    _check_k(k)
    return sum(1.0 / math.log2(i + 1) for i in range(1, min(k, len(relevant)) + 1))


def ndcg_at_k(ranked: Sequence, relevant, k: int) -> float:
    _check_k(k)
    _require(relevant)
    return dcg_at_k(ranked, relevant, k) / idcg_at_k(relevant, k)


def recall_at_k(ranked: Sequence, relevant, k: int) -> float:
    _check_k(k)
    _require(relevant)
    return len(set(ranked[:k]) & set(relevant)) / len(relevant)


def average_precision(ranked: Sequence, relevant) -> float:
    _require(relevant)
    hits, total = 0, 0.0
    for i, item in enumerate(ranked, 1):
        if item in relevant:
            hits += 1
            total += hits / i
    return total / len(relevant)


def reciprocal_rank(ranked: Sequence, relevant) -> float:
    _require(relevant)
    for i, item in enumerate(ranked, 1):
        if item in relevant:
            return 1.0 / i
    return 0.0


# --------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class GroundTruth:
    query_id: str
    functions: frozenset[str] = frozenset()
    files: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "functions", frozenset(self.functions))
        object.__setattr__(self, "files", frozenset(self.files))
        missing = {FunctionIdentifier.parse(f).relative_path for f in self.functions} - self.files
        if missing:
            raise ValueError(f"function files missing from file set: {sorted(missing)}")

    @classmethod
    def build(cls, query_id: str, functions: Iterable[str] = (), files: Iterable[str] = ()) -> "GroundTruth":
        """Normalize identifiers and add every function's file to ``files``."""
        funcs = {str(FunctionIdentifier.parse(f)) for f in functions}
        paths = {_as_path(f) for f in files} | {FunctionIdentifier.parse(f).relative_path for f in funcs}
        return cls(query_id, frozenset(funcs), frozenset(paths))

    def at(self, level: str) -> frozenset[str]:
        if level not in LEVELS:
            raise ValueError(f"level must be one of {LEVELS}")
        return self.functions if level == "function" else self.files

    def to_dict(self) -> dict:
        return {"query_id": self.query_id, "files": sorted(self.files), "functions": sorted(self.functions)}

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruth":
        return cls.build(str(data["query_id"]), data.get("functions", []), data.get("files", []))


def _as_path(raw: str) -> str:
    ident = normalize_identifier(raw)
    if isinstance(ident, FunctionIdentifier):
        raise MalformedIdentifier(f"expected a file path, got {raw!r}")
    return ident


@dataclass(frozen=True)
class RankedPrediction:
    query_id: str
    level: str
    items: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        if self.level not in LEVELS:
            raise ValueError(f"level must be one of {LEVELS}")
        if len(set(self.items)) != len(self.items):
            raise DuplicateItems(f"duplicate items in prediction for {self.query_id}")


@dataclass(frozen=True)
class Prediction:
    """Both ranked lists for one query, as stored in predictions JSONL."""

    query_id: str
    files: tuple[str, ...] = ()
    functions: tuple[str, ...] = ()

    def ranked(self, level: str) -> RankedPrediction:
        items = self.functions if level == "function" else self.files
        if level == "file" and not items and self.functions:
            from .agent_loop import derive_file_ranking

            items = tuple(derive_file_ranking(self.functions))
        return RankedPrediction(self.query_id, level, items)

    def to_dict(self) -> dict:
        return {"query_id": self.query_id, "files": list(self.files), "functions": list(self.functions)}


# --------------------------------------------------------------------------
# reports


@dataclass
class MetricReport:
    level: str
    k: int
    rows: list[dict] = field(default_factory=list)
    aggregates: dict[str, float] = field(default_factory=dict)
    query_count: int = 0
    skipped: list[str] = field(default_factory=list)

    @property
    def columns(self) -> list[str]:
        return [f"recall@{r}" for r in REPORT_RECALL_KS] + ["ap", "rr", f"ndcg@{self.k}"]

    @property
    def aggregate_names(self) -> list[str]:
        return [f"Recall@{r}" for r in REPORT_RECALL_KS] + ["MAP", "MRR", f"nDCG@{self.k}"]

    def to_dict(self) -> dict:
        from . import __version__

        return {
            "version": __version__,
            "level": self.level,
            "k": self.k,
            "query_count": self.query_count,
            "skipped_count": len(self.skipped),
            "skipped": list(self.skipped),
            "aggregates": dict(self.aggregates),
            "rows": [dict(r) for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        names = self.aggregate_names
        width = max(len(n) for n in names) + 2
        lines = [
            f"level={self.level}  queries={self.query_count}  skipped={len(self.skipped)}",
            "".join(n.rjust(width) for n in names),
            "".join(f"{self.aggregates[n]:.5f}".rjust(width) for n in names),
        ]
        return "\n".join(lines)


def _ranked_items(pred, level: str) -> tuple[str, ...]:
    if isinstance(pred, RankedPrediction):
        if pred.level != level:
            raise ValueError(f"prediction {pred.query_id} is {pred.level}-level, report is {level}-level")
        return pred.items
    return pred.ranked(level).items


def evaluate(predictions: Sequence, truths: Sequence[GroundTruth], level: str = "function", k: int = 5) -> MetricReport:
    """Per-query metrics and their means at one level.

    Queries whose ground truth is empty at ``level`` are skipped. A truth
    with no matching prediction is scored as an empty ranking.
    """
    _check_k(k)
    if level not in LEVELS:
        raise ValueError(f"level must be one of {LEVELS}")
    truth_by_id = {t.query_id: t for t in truths}
    missing = {p.query_id for p in predictions} - set(truth_by_id)
    if missing:
        raise UnmatchedQuery(missing)
    pred_by_id = {p.query_id: p for p in predictions}

    report = MetricReport(level=level, k=k)
    for truth in truths:
        relevant = truth.at(level)
        if not relevant:
            report.skipped.append(truth.query_id)
            continue
        pred = pred_by_id.get(truth.query_id)
        ranked = [canonical(x) for x in _ranked_items(pred, level)] if pred is not None else []
        row = {"query_id": truth.query_id}
        for r in REPORT_RECALL_KS:
            row[f"recall@{r}"] = recall_at_k(ranked, relevant, r)
        row["ap"] = average_precision(ranked, relevant)
        row["rr"] = reciprocal_rank(ranked, relevant)
        row[f"ndcg@{k}"] = ndcg_at_k(ranked, relevant, k)
        report.rows.append(row)

    report.query_count = len(report.rows)
    for name, col in zip(report.aggregate_names, report.columns):
        values = [row[col] for row in report.rows]
        report.aggregates[name] = sum(values) / len(values) if values else 0.0
    return report


def trajectory_reward(trajectory, truth: GroundTruth, k: int = 5, level: str = "function") -> float:
    """nDCG@k of the trajectory's final answer; stored on the trajectory."""
    relevant = truth.at(level)
    _require(relevant)
    answer = trajectory.final_answer
    if answer is None:
        reward = 0.0
    else:
        items = answer.function_strings if level == "function" else list(answer.ranked_files)
        reward = ndcg_at_k(items, relevant, k)
    trajectory.reward = reward
    return reward


# --------------------------------------------------------------------------
# JSONL files


def _jsonl(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    yield lineno, json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc


def load_predictions(path: str | Path) -> list[Prediction]:
    """Read predictions JSONL; duplicate items (after normalization) are rejected."""
    out = []
    for lineno, data in _jsonl(path):
        try:
            functions = [canonical(f) for f in data.get("functions", [])]
            if any(not isinstance(normalize_identifier(f), FunctionIdentifier) for f in functions):
                raise MalformedIdentifier("function entries need 'path::name'")
            files = [_as_path(f) for f in data.get("files", [])]
        except MalformedIdentifier as exc:
            raise MalformedIdentifier(f"{path}:{lineno}: {exc}") from exc
        for name, items in (("functions", functions), ("files", files)):
            if len(set(items)) != len(items):
                raise DuplicateItems(f"{path}:{lineno}: duplicate entries in '{name}'")
        out.append(Prediction(str(data["query_id"]), tuple(files), tuple(functions)))
    return out


def load_truths(path: str | Path) -> list[GroundTruth]:
    out = []
    seen = set()
    for lineno, data in _jsonl(path):
        try:
            truth = GroundTruth.from_dict(data)
        except (MalformedIdentifier, KeyError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
        if truth.query_id in seen:
            raise ValueError(f"{path}:{lineno}: duplicate query_id {truth.query_id!r}")
        seen.add(truth.query_id)
        out.append(truth)
    return out


def write_jsonl(path: str | Path, records: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
            n += 1
    return n
