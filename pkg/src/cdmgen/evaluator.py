"""Scoring generated documents: key existence, type conformance, coverage.

Two structural metrics walk the generated tree against the schema index:
syntactical correctness is the share of generated key occurrences whose
paths exist, schema adherence the share whose paths exist *and* whose
values match the declared kind. Both count per occurrence, so repeated
array elements weigh repeatedly. Semantic coverage delegates the
contract-vs-document comparison to a guided model prompt that returns
captured / uncaptured / extraneous item lists, folded into one weighted
percentage.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

from . import prompts, treeops
from .errors import (
    CycleDetected,
    DegenerateDenominator,
    EmptyDocument,
    EmptyGroup,
    ListParseFailure,
    NoStructuredPayload,
)
from .gateway import PromptBundle, extract_structured
from .schema_index import PropertyDef, SchemaIndex

DEFAULT_MU = 0.3
DEFAULT_EPSILON = 0.1

METRICS = ("syntactical_correctness", "schema_adherence", "coverage_score")


@dataclass(frozen=True)
class CoverageLists:
    captured: tuple[str, ...]
    uncaptured: tuple[str, ...]
    extraneous: tuple[str, ...]

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.captured), len(self.uncaptured), len(self.extraneous)


@dataclass(frozen=True)
class CoverageWeights:
    mu: float = DEFAULT_MU
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        for name, value in (("mu", self.mu), ("epsilon", self.epsilon)):
            if not math.isfinite(value) or not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be a finite number in [0, 1]")


@dataclass
class EvaluationReport:
    syntactical_correctness: float
    schema_adherence: float
    per_path_detail: list[dict]
    lists: Optional[CoverageLists] = None
    coverage_score: Optional[float] = None

    def to_dict(self) -> dict:
        payload = {
            "syntactical_correctness": self.syntactical_correctness,
            "schema_adherence": self.schema_adherence,
            "coverage_score": self.coverage_score,
            "per_path_detail": self.per_path_detail,
        }
        if self.lists is not None:
            payload["lists"] = {
                "captured": list(self.lists.captured),
                "uncaptured": list(self.lists.uncaptured),
                "extraneous": list(self.lists.extraneous),
            }
        return payload

    @classmethod
    def from_dict(cls, payload: Mapping) -> "EvaluationReport":
        lists = None
        if payload.get("lists") is not None:
            raw = payload["lists"]
            lists = CoverageLists(
                captured=tuple(raw.get("captured", ())),
                uncaptured=tuple(raw.get("uncaptured", ())),
                extraneous=tuple(raw.get("extraneous", ())),
            )
        return cls(
            syntactical_correctness=payload["syntactical_correctness"],
            schema_adherence=payload["schema_adherence"],
            per_path_detail=list(payload.get("per_path_detail", [])),
            lists=lists,
            coverage_score=payload.get("coverage_score"),
        )


# ---------------------------------------------------------------------------
# structural metrics


def syntactical_correctness(doc: dict, index: SchemaIndex) -> tuple[float, list[dict]]:
    """Percentage of generated key occurrences whose paths exist in the schema."""
    occurrences = _key_occurrences(doc)
    detail = []
    hits = 0
    for path, _ in occurrences:
        exists = _path_ok(index, path)
        hits += exists
        detail.append({"path": path, "exists": exists})
    return 100.0 * hits / len(occurrences), detail


def schema_adherence(doc: dict, index: SchemaIndex) -> tuple[float, list[dict]]:
    """Percentage of key occurrences whose path exists and value kind conforms."""
    occurrences = _key_occurrences(doc)
    detail = []
    hits = 0
    for path, value in occurrences:
        prop = _property_at(index, path)
        adheres = prop is not None and _value_conforms(prop, value)
        hits += adheres
        detail.append({"path": path, "adheres": adheres})
    return 100.0 * hits / len(occurrences), detail


def evaluate_document(doc: dict, index: SchemaIndex) -> EvaluationReport:
    """Both structural metrics with a merged per-path detail."""
    syntactical, exists_detail = syntactical_correctness(doc, index)
    adherence, adheres_detail = schema_adherence(doc, index)
    merged = [
        {"path": a["path"], "exists": a["exists"], "adheres": b["adheres"]}
        for a, b in zip(exists_detail, adheres_detail)
    ]
    return EvaluationReport(
        syntactical_correctness=syntactical,
        schema_adherence=adherence,
        per_path_detail=merged,
    )


def _key_occurrences(doc: dict) -> list[tuple[str, object]]:
    if not isinstance(doc, dict) or not doc:
        raise EmptyDocument("document contains no keys")
    return list(treeops.iter_key_paths(doc))


def _path_ok(index: SchemaIndex, path: str) -> bool:
    return _property_at(index, path) is not None


def _property_at(index: SchemaIndex, path: str) -> Optional[PropertyDef]:
    try:
        exists, prop = index.lookup(path)
    except CycleDetected:
        return None
    return prop if exists else None


def _value_conforms(prop: PropertyDef, value) -> bool:
    if prop.kind in ("object-ref", "inline-object"):
        return isinstance(value, dict)
    if prop.kind == "array-of-ref":
        return isinstance(value, list) and all(isinstance(v, dict) for v in value)
    if prop.kind == "array-of-scalar":
        return isinstance(value, list) and all(
            _scalar_conforms(prop, v) for v in value
        )
    return _scalar_conforms(prop, value)


def _scalar_conforms(prop: PropertyDef, value) -> bool:
    scalar = prop.scalar_type
    if scalar == "boolean":
        return isinstance(value, bool)
    if scalar in ("number", "integer"):
        if isinstance(value, bool):
            return False
        return isinstance(value, (int, float)) if scalar == "number" else isinstance(value, int)
    if not isinstance(value, str):
        return False
    if scalar == "date":
        return bool(treeops.DATE_RE.match(value))
    if scalar == "enum":
        return value in (prop.enum_values or ())
    return True


# ---------------------------------------------------------------------------
# semantic coverage


def coverage_prompt(contract_text: str, doc: dict) -> PromptBundle:
    user_text = "\n\n".join(
        [
            prompts.load("coverage_instructions.txt"),
            f"Contract description:\n{contract_text}",
            "Structured representation:\n" + json.dumps(doc, indent=2, ensure_ascii=False),
        ]
    )
    return PromptBundle(system_text=prompts.load("coverage_system.txt"), user_text=user_text)


def coverage_retry_prompt(first: PromptBundle) -> PromptBundle:
    return replace(first, user_text=first.user_text + "\n\n" + prompts.load("coverage_retry.txt"))


def coverage_lists(contract_text: str, doc: dict, gateway) -> CoverageLists:
    """Run the guided three-list comparison and parse the reply.

    A reply that fails to parse or lacks one of the lists is re-asked once
    before :class:`ListParseFailure` (or :class:`NoStructuredPayload`)
    surfaces.
    """
    if not contract_text or not contract_text.strip():
        raise ValueError("contract_text must be non-empty")
    if not doc:
        raise ValueError("document must be non-empty")
    first = coverage_prompt(contract_text, doc)
    try:
        return _parse_lists(gateway.complete(first).text)
    except (ListParseFailure, NoStructuredPayload):
        return _parse_lists(gateway.complete(coverage_retry_prompt(first)).text)


def _parse_lists(text: str) -> CoverageLists:
    payload = extract_structured(text)
    lists = {}
    for name in ("captured", "uncaptured", "extraneous"):
        if name not in payload or not isinstance(payload[name], list):
            raise ListParseFailure(f"reply is missing the {name!r} list")
        items = [str(item).strip() for item in payload[name]]
        lists[name] = tuple(item for item in items if item)
    return CoverageLists(**lists)


def coverage_score(lists: CoverageLists, weights: CoverageWeights = CoverageWeights()) -> float:
    """Weighted capture percentage: C*100 / (C + mu*U + epsilon*E)."""
    captured, uncaptured, extraneous = lists.counts
    if captured == uncaptured == extraneous == 0:
        raise DegenerateDenominator("all three coverage lists are empty")
    denominator = captured + weights.mu * uncaptured + weights.epsilon * extraneous
    if denominator <= 0:
        raise DegenerateDenominator("coverage denominator is zero under these weights")
    return captured * 100.0 / denominator


# ---------------------------------------------------------------------------
# aggregation


def aggregate(
    groups: Mapping[str, Sequence[EvaluationReport]],
) -> dict[str, dict[str, Optional[dict]]]:
    """Mean and population standard deviation per metric, per group.

    Adds a ``combined`` row computed over the union of all groups. Raises
    :class:`EmptyGroup` when the mapping is empty or any group has no
    reports.
    """
    if not groups:
        raise EmptyGroup("no groups to aggregate")
    rows: dict[str, dict[str, Optional[dict]]] = {}
    for group, reports in groups.items():
        if not reports:
            raise EmptyGroup(f"group {group!r} has no reports")
        rows[group] = _stats_row(reports)
    everything = [report for reports in groups.values() for report in reports]
    rows["combined"] = _stats_row(everything)
    return rows


def _stats_row(reports: Sequence[EvaluationReport]) -> dict[str, Optional[dict]]:
    row: dict[str, Optional[dict]] = {"count": {"n": len(reports)}}
    for metric in METRICS:
        values = [
            getattr(report, metric)
            for report in reports
            if getattr(report, metric) is not None
        ]
        if not values:
            row[metric] = None
            continue
        row[metric] = {
            "mean": statistics.fmean(values),
            "stddev": statistics.pstdev(values),
            "n": len(values),
        }
    return row
