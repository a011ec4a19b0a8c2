"""Deriving minimal population templates from a schema corpus plus examples.

The derivation has two inputs: the resolved schema graph and the set of
dot-paths actually used by real example instances. The schema is traversed
from the root; a property is kept only when its path is a prefix of (or
equal to) some example key, referenced objects are expanded recursively,
arrays carry a single prototype element, leaves receive typed placeholders,
and object nodes are annotated with the description of the schema that
defines them. Empty structures are pruned away at fixpoint, so the result
is the smallest schema-conformant skeleton that covers the examples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Any

from . import treeops
from .errors import CycleDetected, EmptyExampleDir, MalformedDocument
from .schema_index import PropertyDef, SchemaIndex

# Placeholder values by scalar type. Strings and enums use the empty string,
# dates a fixed lexical token, numbers zero, booleans false.
SCALAR_PLACEHOLDERS = {
    "string": "",
    "enum": "",
    "date": treeops.DATE_TOKEN,
    "number": 0,
    "integer": 0,
    "boolean": False,
}


@dataclass(frozen=True)
class KeyPathSet:
    """Normalized leaf paths flattened out of example instances."""

    paths: frozenset[str]
    source_count: int

    @cached_property
    def _prefixes(self) -> frozenset[str]:
        closure = set()
        for key in self.paths:
            segments = key.split(".")
            for i in range(1, len(segments) + 1):
                closure.add(".".join(segments[:i]))
        return frozenset(closure)

    def covers(self, path: str) -> bool:
        """True when ``path`` equals a key or is a proper prefix of one."""
        return path in self._prefixes

    def __len__(self) -> int:
        return len(self.paths)


@dataclass
class Template:
    """A pruned tree of placeholder fields ready for population."""

    tree: dict
    contract_type: str
    schema_root: str

    def to_text(self) -> str:
        payload = {
            "contract_type": self.contract_type,
            "schema_root": self.schema_root,
            "tree": self.tree,
        }
        return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Template":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            tree=payload["tree"],
            contract_type=payload.get("contract_type", ""),
            schema_root=payload.get("schema_root", ""),
        )


def flatten_examples(example_dir) -> KeyPathSet:
    """Union of dot-separated leaf paths over every example in a directory.

    Array indices contribute no segment, so ``a[0].b`` and ``a[3].b`` both
    flatten to ``a.b``. Raises :class:`EmptyExampleDir` when no ``.json``
    files are present and :class:`MalformedDocument` naming the first file
    that fails to parse.
    """
    base = Path(example_dir)
    files = sorted(base.rglob("*.json")) if base.is_dir() else []
    if not files:
        raise EmptyExampleDir(f"no example files found in {example_dir}")
    paths: set[str] = set()
    for file in files:
        try:
            parsed = json.loads(file.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise MalformedDocument(file.name, exc.pos, exc.msg) from exc
        paths.update(path for path, _ in treeops.iter_leaf_paths(parsed))
    return KeyPathSet(paths=frozenset(paths), source_count=len(files))


def build_template(index: SchemaIndex, keys: KeyPathSet, contract_type: str) -> Template:
    """Traverse the schema from its root, keeping only example-covered paths.

    Keys that name nothing in the schema contribute nothing. The returned
    tree is already pruned; field order follows schema declaration order so
    identical inputs serialize identically.
    """
    if not keys.paths:
        raise ValueError("key path set is empty; need at least one example key")
    tree = _traverse(index, index.root_id, "", keys, depth=0)
    return Template(tree=prune_empty(tree), contract_type=contract_type, schema_root=index.root_id)


def _traverse(index: SchemaIndex, doc_id: str, prefix: str, keys: KeyPathSet, depth: int) -> dict:
    if depth > index.max_path_depth:
        raise CycleDetected(
            f"schema traversal exceeded {index.max_path_depth} levels at {prefix!r}"
        )
    doc = index.doc(doc_id)
    children: dict[str, Any] = {}
    for name, prop in doc.properties.items():
        path = f"{prefix}.{name}" if prefix else name
        if not keys.covers(path):
            continue
        if prop.kind == "object-ref" or prop.kind == "inline-object":
            children[name] = _traverse(index, prop.ref_target, path, keys, depth + 1)
        elif prop.kind == "array-of-ref":
            children[name] = [_traverse(index, prop.ref_target, path, keys, depth + 1)]
        else:
            children[name] = _placeholder(prop)
    return _annotate(children, doc.description)


def _placeholder(prop: PropertyDef):
    value = SCALAR_PLACEHOLDERS[prop.scalar_type]
    if prop.kind == "array-of-scalar":
        # One prototype element, mirroring referenced arrays; a bare [] would
        # be pruned and the example-covered key lost.
        return [value]
    return value


def _annotate(children: dict, description) -> dict:
    """Attach a document description ahead of the data fields.

    When the data itself contains a field named ``description``, the
    annotation moves to ``_template_description`` so real data is never
    shadowed.
    """
    if not description:
        return children
    key = treeops.DESCRIPTION_KEY
    if key in children:
        key = treeops.FALLBACK_DESCRIPTION_KEY
    return {key: description, **children}


def prune_empty(tree):
    """Remove empty objects and arrays (annotations discounted) at fixpoint.

    Scalar placeholders are leaves, not empty structures, and survive. An
    object left with only its description annotation counts as empty. A
    single bottom-up pass reaches the fixpoint because emptiness only
    propagates upward; the operation is idempotent.
    """
    pruned = _prune(tree)
    return pruned if isinstance(pruned, dict) else {}


def _prune(value):
    if isinstance(value, dict):
        out = {}
        data_count = 0
        for key, child in value.items():
            if treeops.is_annotation(key, child):
                out[key] = child
                continue
            kept = _prune(child)
            if _is_empty_container(kept):
                continue
            out[key] = kept
            data_count += 1
        return out if data_count else {}
    if isinstance(value, list):
        kept = [_prune(v) for v in value]
        return [v for v in kept if not _is_empty_container(v)]
    return value


def _is_empty_container(value) -> bool:
    if isinstance(value, dict):
        return not any(not treeops.is_annotation(k, v) for k, v in value.items())
    if isinstance(value, list):
        return not value
    return False


def template_stats(template: Template) -> dict[str, int]:
    """Leaf count, maximum depth, and object count of a template.

    Depth follows the population convention (leaf = 1, container = 1 + max
    child depth); the anonymous root container is not itself counted, so an
    empty template reports zeros and a single root-level leaf reports depth 1.
    """
    tree = template.tree
    leaf_count = sum(1 for _ in treeops.iter_leaf_paths(tree))
    if not treeops.data_items(tree):
        return {"leaf_count": 0, "max_depth": 0, "object_count": 0}
    max_depth = treeops.subtree_depth(tree) - 1
    return {
        "leaf_count": leaf_count,
        "max_depth": max_depth,
        "object_count": _count_objects(tree, is_root=True),
    }


def _count_objects(value, is_root: bool = False) -> int:
    if isinstance(value, dict):
        own = 0 if is_root else 1
        return own + sum(_count_objects(v) for _, v in treeops.data_items(value))
    if isinstance(value, list):
        return sum(_count_objects(v) for v in value)
    return 0
