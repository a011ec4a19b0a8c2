"""Template population: depth-bounded task selection, prompting, validation.

A template is decomposed into the maximal substructures whose depth stays
within a threshold; each substructure becomes one model call with a
context-rich prompt (contract text, traversal path, object definition,
optionally retrieved reference chunks). Replies are validated against the
substructure's exact shape and repaired through bounded re-prompting; a
substructure that never validates keeps its placeholders so one bad reply
cannot corrupt the document. Grafting the validated fragments back and
removing unfilled placeholders yields the final representation.

Direct single-prompt generation (the non-template baseline) lives here too.
"""

from __future__ import annotations

import copy
import json
import logging
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field, replace
from typing import Any, Optional

from . import prompts, treeops
from .errors import GenerationIncomplete, NoStructuredPayload, ProviderUnavailable
from .gateway import PromptBundle, extract_structured, prompt_hash
from .knowledge_base import Chunk, KnowledgeBase, retrieve
from .template_builder import Template

logger = logging.getLogger(__name__)

DEFAULT_DEPTH_THRESHOLD = 4


@dataclass
class PopulationConfig:
    depth_threshold: int = DEFAULT_DEPTH_THRESHOLD
    use_rag: bool = False
    retry_limit: int = 2
    k_chunks: int = 3
    max_inflight: int = 4

    def __post_init__(self):
        if self.depth_threshold < 1:
            raise ValueError("depth_threshold must be >= 1")
        if self.retry_limit < 0:
            raise ValueError("retry_limit must be >= 0")


@dataclass
class DepthAnnotatedNode:
    """One template node with its subtree depth and structural address.

    ``path`` is the normalized dot-path (array elements share their array's
    path); ``segments`` is the exact address including list indices, used
    for grafting. Annotation entries are neither children nor counted in
    depth.
    """

    name: str
    path: str
    segments: tuple
    depth: int
    children: list["DepthAnnotatedNode"]
    fragment: Any


@dataclass
class PopulationTask:
    """A maximal substructure of bounded depth plus its prompt context."""

    target_path: str
    segments: tuple
    target_subtree: Any
    object_definition: str
    traversal_context: list[str]
    depth: int
    retrieved_chunks: list[Chunk] = field(default_factory=list)
    unwrap_key: Optional[str] = None


@dataclass(frozen=True)
class Mismatch:
    path: str
    kind: str  # "missing_key" | "extra_key" | "type_clash" | "unparseable" | "truncated"
    detail: str

    def to_dict(self) -> dict:
        return {"path": self.path, "kind": self.kind, "detail": self.detail}


@dataclass
class ShapeReport:
    mismatches: list[Mismatch]

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def to_payload(self) -> list[dict]:
        return [m.to_dict() for m in self.mismatches]


@dataclass
class PopulatedDocument:
    tree: dict
    provenance: dict[str, dict]
    contract_type: str


# ---------------------------------------------------------------------------
# depth annotation and task selection


def compute_depths(template: Template) -> DepthAnnotatedNode:
    """Annotate every template node with its subtree depth.

    Leaves have depth 1; containers are one more than their deepest child;
    empty containers count 1. The returned root is the anonymous template
    container at path ``""``.
    """
    return _annotate_node("", "", (), template.tree)


def _annotate_node(name, path, segments, fragment) -> DepthAnnotatedNode:
    children: list[DepthAnnotatedNode] = []
    if isinstance(fragment, dict):
        for key, value in treeops.data_items(fragment):
            child_path = f"{path}.{key}" if path else key
            children.append(_annotate_node(key, child_path, segments + (key,), value))
    elif isinstance(fragment, list):
        for i, value in enumerate(fragment):
            children.append(_annotate_node(name, path, segments + (i,), value))
    depth = 1 + max((c.depth for c in children), default=0) if children else 1
    return DepthAnnotatedNode(
        name=name,
        path=path,
        segments=segments,
        depth=depth,
        children=children,
        fragment=fragment,
    )


def select_tasks(annotated: DepthAnnotatedNode, d: int) -> list[PopulationTask]:
    """Emit the maximal subtrees of depth <= ``d``, top down.

    A node within the bound becomes one task and is not descended into;
    deeper nodes are split through their children. The resulting tasks are
    disjoint and jointly cover every leaf of the template.
    """
    if d < 1:
        raise ValueError("depth threshold must be >= 1")
    tasks: list[PopulationTask] = []
    _select(annotated, d, tasks)
    return tasks


def _select(node: DepthAnnotatedNode, d: int, out: list[PopulationTask]) -> None:
    if node.depth <= d:
        out.append(_task_from_node(node))
        return
    for child in node.children:
        _select(child, d, out)


def _task_from_node(node: DepthAnnotatedNode) -> PopulationTask:
    subtree = copy.deepcopy(node.fragment)
    unwrap_key = None
    if not isinstance(subtree, dict):
        # Leaf and whole-array tasks are presented wrapped under their field
        # name so the model can reply with a JSON object.
        unwrap_key = node.name
        subtree = {node.name: subtree}
    return PopulationTask(
        target_path=node.path,
        segments=node.segments,
        target_subtree=subtree,
        object_definition=_definition_of(node.fragment),
        traversal_context=node.path.split(".")[:-1] if node.path else [],
        depth=node.depth,
        unwrap_key=unwrap_key,
    )


def _definition_of(fragment) -> str:
    if isinstance(fragment, dict):
        return treeops.node_annotation(fragment)
    if isinstance(fragment, list) and fragment and isinstance(fragment[0], dict):
        return treeops.node_annotation(fragment[0])
    return ""


# ---------------------------------------------------------------------------
# prompt construction


def build_prompt(
    task: PopulationTask, contract_text: str, cfg: PopulationConfig
) -> PromptBundle:
    """Deterministic prompt: instructions, contract, path, definition,
    placeholder structure, then retrieved reference chunks when RAG is on."""
    sections = [prompts.load("populate_instructions.txt")]
    sections.append(f"Contract description:\n{contract_text}")
    context = ".".join(task.traversal_context)
    sections.append(f"Location in the document: {context if context else 'document root'}")
    if task.object_definition:
        sections.append(f"Object definition: {task.object_definition}")
    sections.append(
        "Structure to populate:\n"
        + json.dumps(task.target_subtree, indent=2, ensure_ascii=False)
    )
    if cfg.use_rag and task.retrieved_chunks:
        bodies = "\n\n".join(chunk.body for chunk in task.retrieved_chunks)
        sections.append(f"Reference examples from similar contracts:\n{bodies}")
    return PromptBundle(
        system_text=prompts.load("populate_system.txt"),
        user_text="\n\n".join(sections),
    )


def repair_prompt(original: PromptBundle, report: ShapeReport) -> PromptBundle:
    """Follow-up prompt: the original request plus the mismatch report.

    Built from the original (not the previous follow-up) so repeated
    identical failures produce identical prompts.
    """
    addendum = (
        "\n\n"
        + prompts.load("repair_followup.txt")
        + "\n"
        + json.dumps(report.to_payload(), indent=2, ensure_ascii=False)
    )
    return replace(original, user_text=original.user_text + addendum)


def task_query(task: PopulationTask) -> str:
    """Retrieval query: the task's field names, definition, and path."""
    names: list[str] = []
    _collect_names(task.target_subtree, names)
    parts = names
    if task.object_definition:
        parts = parts + [task.object_definition]
    if task.traversal_context:
        parts = parts + [".".join(task.traversal_context)]
    return " ".join(parts)


def _collect_names(value, out: list[str]) -> None:
    if isinstance(value, dict):
        for key, child in treeops.data_items(value):
            if key not in out:
                out.append(key)
            _collect_names(child, out)
    elif isinstance(value, list):
        for child in value:
            _collect_names(child, out)


# ---------------------------------------------------------------------------
# shape validation


def validate_shape(input_subtree, output) -> ShapeReport:
    """Check that ``output`` mirrors the placeholder structure exactly.

    Object key sets must match (annotations excluded), arrays must carry at
    least one element each matching the single prototype, and every leaf
    must hold a value of its placeholder's kind. Never raises; all problems
    come back in the report.
    """
    mismatches: list[Mismatch] = []
    _check_shape(input_subtree, output, "", mismatches)
    return ShapeReport(mismatches=mismatches)


def _check_shape(inp, out, path, issues: list[Mismatch]) -> None:
    label = path or "(root)"
    if isinstance(inp, dict):
        if not isinstance(out, dict):
            issues.append(Mismatch(label, "type_clash", f"expected an object, got {_kind(out)}"))
            return
        expected = dict(treeops.data_items(inp))
        for key in expected:
            if key not in out:
                issues.append(Mismatch(_join(path, key), "missing_key", "required key absent"))
        for key in out:
            if key not in expected:
                issues.append(Mismatch(_join(path, key), "extra_key", "key not in structure"))
        for key, proto in expected.items():
            if key in out:
                _check_shape(proto, out[key], _join(path, key), issues)
        return
    if isinstance(inp, list):
        if not isinstance(out, list):
            issues.append(Mismatch(label, "type_clash", f"expected an array, got {_kind(out)}"))
            return
        if not inp:
            return
        if not out:
            issues.append(Mismatch(label, "type_clash", "array must contain at least one element"))
            return
        prototype = inp[0]
        for element in out:
            _check_shape(prototype, element, path, issues)
        return
    _check_leaf(inp, out, label, issues)


def _check_leaf(placeholder, out, label, issues: list[Mismatch]) -> None:
    if isinstance(placeholder, bool):
        if not isinstance(out, bool):
            issues.append(Mismatch(label, "type_clash", f"expected a boolean, got {_kind(out)}"))
    elif isinstance(placeholder, (int, float)):
        if isinstance(out, bool) or not isinstance(out, (int, float)):
            issues.append(Mismatch(label, "type_clash", f"expected a number, got {_kind(out)}"))
    elif placeholder == treeops.DATE_TOKEN:
        if not isinstance(out, str) or (
            out != treeops.DATE_TOKEN and not treeops.DATE_RE.match(out)
        ):
            issues.append(
                Mismatch(label, "type_clash", "expected a YYYY-MM-DD date or the placeholder")
            )
    else:
        if not isinstance(out, str):
            issues.append(Mismatch(label, "type_clash", f"expected a string, got {_kind(out)}"))


def _kind(value) -> str:
    if isinstance(value, dict):
        return "an object"
    if isinstance(value, list):
        return "an array"
    if isinstance(value, bool):
        return "a boolean"
    if isinstance(value, (int, float)):
        return "a number"
    if value is None:
        return "null"
    return "a string"


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


# ---------------------------------------------------------------------------
# population run


@dataclass
class _TaskOutcome:
    task: PopulationTask
    tree: Optional[Any]
    record: dict


def populate(
    template: Template,
    contract_text: str,
    kb: Optional[KnowledgeBase],
    gateway,
    cfg: PopulationConfig,
) -> PopulatedDocument:
    """Fill a template from contract text, one validated task at a time.

    Each selected substructure is prompted, parsed, and shape-checked; a
    mismatching reply triggers a follow-up carrying the validation report,
    up to ``cfg.retry_limit`` re-prompts. Exhausted tasks keep their
    placeholders and are recorded as failures. A provider outage aborts the
    run, attaching the partial provenance to the raised error.
    """
    if cfg.use_rag and kb is None:
        raise ValueError("use_rag requires a knowledge base")
    if not treeops.data_items(template.tree):
        return PopulatedDocument(tree={}, provenance={}, contract_type=template.contract_type)

    tasks = select_tasks(compute_depths(template), cfg.depth_threshold)
    if cfg.use_rag:
        for task in tasks:
            task.retrieved_chunks = retrieve(kb, task_query(task), cfg.k_chunks)

    outcomes = _run_tasks(tasks, contract_text, gateway, cfg)

    # Annotations are removed from the template copy up front: validated
    # replies never carry them, and stripping afterwards would also delete
    # genuine data fields named "description" that a reply filled with text.
    doc = treeops.strip_annotations(template.tree)
    provenance: dict[str, dict] = {}
    for outcome in outcomes:
        if outcome.tree is not None:
            doc = _graft(doc, outcome.task.segments, outcome.tree)
        key = outcome.task.target_path or "(root)"
        while key in provenance:
            key += "+"
        provenance[key] = outcome.record
    return PopulatedDocument(
        tree=doc,
        provenance=provenance,
        contract_type=template.contract_type,
    )


def _run_tasks(tasks, contract_text, gateway, cfg) -> list[_TaskOutcome]:
    if cfg.max_inflight <= 1 or len(tasks) <= 1:
        outcomes = []
        for task in tasks:
            try:
                outcomes.append(_run_one(task, contract_text, gateway, cfg))
            except ProviderUnavailable as exc:
                raise ProviderUnavailable(
                    str(exc), provenance={o.task.target_path: o.record for o in outcomes}
                ) from exc
        return outcomes

    with ThreadPoolExecutor(max_workers=cfg.max_inflight) as pool:
        futures = [pool.submit(_run_one, task, contract_text, gateway, cfg) for task in tasks]
        wait(futures, return_when=FIRST_EXCEPTION)
        outcomes: list[_TaskOutcome] = []
        partial: dict[str, dict] = {}
        failure: Optional[ProviderUnavailable] = None
        for future in futures:
            exc = future.exception()
            if exc is None:
                outcome = future.result()
                outcomes.append(outcome)
                partial[outcome.task.target_path] = outcome.record
            elif isinstance(exc, ProviderUnavailable) and failure is None:
                failure = exc
            elif not isinstance(exc, ProviderUnavailable):
                raise exc
        if failure is not None:
            raise ProviderUnavailable(str(failure), provenance=partial) from failure
        return outcomes


def _run_one(task: PopulationTask, contract_text, gateway, cfg) -> _TaskOutcome:
    original = build_prompt(task, contract_text, cfg)
    base_hash = prompt_hash(original)
    current = original
    last_report: Optional[ShapeReport] = None
    attempts = 0
    while attempts <= cfg.retry_limit:
        attempts += 1
        completion = gateway.complete(current)
        report, parsed = _assess(task, completion)
        if report.ok:
            result = parsed[task.unwrap_key] if task.unwrap_key else parsed
            logger.info(
                "task=%s attempts=%d status=ok", task.target_path or "(root)", attempts
            )
            return _TaskOutcome(
                task=task,
                tree=result,
                record={"prompt_hash": base_hash, "attempts": attempts, "failed": False},
            )
        last_report = report
        if attempts <= cfg.retry_limit:
            current = repair_prompt(original, report)
    logger.info(
        "task=%s attempts=%d status=failed", task.target_path or "(root)", attempts
    )
    return _TaskOutcome(
        task=task,
        tree=None,
        record={
            "prompt_hash": base_hash,
            "attempts": attempts,
            "failed": True,
            "mismatches": last_report.to_payload() if last_report else [],
        },
    )


def _assess(task: PopulationTask, completion) -> tuple[ShapeReport, Optional[dict]]:
    label = task.target_path or "(root)"
    if completion.finish_reason == "length":
        return ShapeReport([Mismatch(label, "truncated", "output was cut off")]), None
    try:
        parsed = extract_structured(completion.text)
    except NoStructuredPayload as exc:
        return ShapeReport([Mismatch(label, "unparseable", str(exc))]), None
    return validate_shape(task.target_subtree, parsed), parsed


def _graft(doc, segments: tuple, value):
    if not segments:
        return value
    node = doc
    for segment in segments[:-1]:
        node = node[segment]
    node[segments[-1]] = value
    return doc


# ---------------------------------------------------------------------------
# cleaning


def clean(doc):
    """Remove unfilled content: empty strings, date placeholders, empty
    containers — applied at fixpoint, so the result is idempotent under a
    second pass. Accepts a :class:`PopulatedDocument` or a bare tree."""
    tree = doc.tree if isinstance(doc, PopulatedDocument) else doc
    return _clean(tree)


def _clean(value):
    if isinstance(value, dict):
        out = {}
        for key, child in value.items():
            kept = _clean(child)
            if not _removable(kept):
                out[key] = kept
        return out
    if isinstance(value, list):
        return [kept for kept in (_clean(v) for v in value) if not _removable(kept)]
    return value


def _removable(value) -> bool:
    if value == "" or value == treeops.DATE_TOKEN:
        return True
    if isinstance(value, (dict, list)) and not value:
        return True
    return False


# ---------------------------------------------------------------------------
# direct generation baseline


def baseline_generate(
    contract_text: str,
    kb: Optional[KnowledgeBase],
    gateway,
    cfg: PopulationConfig,
) -> dict:
    """Generate a whole document from one prompt, without a template.

    Optionally augments the prompt with chunks retrieved against the
    contract text itself. Truncated output surfaces as
    :class:`GenerationIncomplete`; unparseable output as
    :class:`NoStructuredPayload`.
    """
    if cfg.use_rag and kb is None:
        raise ValueError("use_rag requires a knowledge base")
    sections = [prompts.load("baseline_instructions.txt")]
    sections.append(f"Contract description:\n{contract_text}")
    if cfg.use_rag:
        chunks = retrieve(kb, contract_text, cfg.k_chunks)
        bodies = "\n\n".join(chunk.body for chunk in chunks)
        sections.append(f"Reference examples from similar contracts:\n{bodies}")
    bundle = PromptBundle(
        system_text=prompts.load("baseline_system.txt"),
        user_text="\n\n".join(sections),
    )
    completion = gateway.complete(bundle)
    if completion.finish_reason == "length":
        raise GenerationIncomplete("model output was truncated before the document closed")
    return extract_structured(completion.text)
