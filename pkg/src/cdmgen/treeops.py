"""Low-level helpers for the nested dict/list trees used throughout cdmgen.

Templates and populated documents are plain JSON-style trees. Object nodes
may carry one annotation entry (``description`` or ``_template_description``)
that is metadata, not data; every helper here skips annotations consistently
so depth, leaf and key enumeration agree across modules.
"""

from __future__ import annotations

import re
from typing import Any, Iterator

DESCRIPTION_KEY = "description"
FALLBACK_DESCRIPTION_KEY = "_template_description"

DATE_TOKEN = "YYYY-MM-DD"
DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")

# Scalar placeholder values a template leaf may hold. The date token doubles
# as a string, so annotation detection must exclude it explicitly.
SCALAR_PLACEHOLDERS = ("", DATE_TOKEN, 0, False)


def is_annotation(key: str, value: Any) -> bool:
    """True when ``key: value`` is a description annotation, not data.

    A genuine data field named ``description`` only ever holds a placeholder
    (its annotation is displaced to ``_template_description``), so a
    non-placeholder string under ``description`` is always an annotation.
    """
    if key == FALLBACK_DESCRIPTION_KEY:
        return True
    if key != DESCRIPTION_KEY:
        return False
    return isinstance(value, str) and value != "" and value != DATE_TOKEN


def data_items(node: dict) -> list[tuple[str, Any]]:
    """Key/value pairs of a dict node with annotations removed."""
    return [(k, v) for k, v in node.items() if not is_annotation(k, v)]


def node_annotation(node: dict) -> str:
    """The description annotation carried by an object node, or ``""``."""
    value = node.get(FALLBACK_DESCRIPTION_KEY)
    if isinstance(value, str):
        return value
    value = node.get(DESCRIPTION_KEY)
    if isinstance(value, str) and is_annotation(DESCRIPTION_KEY, value):
        return value
    return ""


def strip_annotations(value: Any) -> Any:
    """Deep copy of ``value`` with every annotation entry removed."""
    if isinstance(value, dict):
        return {k: strip_annotations(v) for k, v in data_items(value)}
    if isinstance(value, list):
        return [strip_annotations(v) for v in value]
    return value


def subtree_depth(value: Any) -> int:
    """Depth of a template fragment: leaf = 1, container = 1 + max(children).

    Empty containers count as depth 1; annotation entries are invisible.
    """
    if isinstance(value, dict):
        children = data_items(value)
        if not children:
            return 1
        return 1 + max(subtree_depth(v) for _, v in children)
    if isinstance(value, list):
        if not value:
            return 1
        return 1 + max(subtree_depth(v) for v in value)
    return 1


def iter_leaf_paths(value: Any, prefix: str = "") -> Iterator[tuple[str, Any]]:
    """Yield (normalized dot-path, leaf value) for every leaf of a tree.

    Array indices contribute no path segment, matching the key-flattening
    convention used for schema lookups. Empty containers are themselves
    leaves. Annotations are skipped.
    """
    if isinstance(value, dict):
        children = data_items(value)
        if not children:
            if prefix:
                yield prefix, value
            return
        for key, child in children:
            path = f"{prefix}.{key}" if prefix else key
            yield from iter_leaf_paths(child, path)
    elif isinstance(value, list):
        if not value:
            if prefix:
                yield prefix, value
            return
        for element in value:
            yield from iter_leaf_paths(element, prefix)
    else:
        if prefix:
            yield prefix, value


def iter_key_paths(value: Any, prefix: str = "") -> Iterator[tuple[str, Any]]:
    """Yield (normalized dot-path, value) for every key occurrence in a tree.

    Each dict key at every level yields once per occurrence, so repeated
    array elements are counted repeatedly. Array indices are normalized away.
    Unlike :func:`iter_leaf_paths`, annotations are *not* skipped: generated
    documents carry no annotations, and any echoed annotation key must be
    scored like every other generated key.
    """
    if isinstance(value, dict):
        for key, child in value.items():
            path = f"{prefix}.{key}" if prefix else key
            yield path, child
            yield from iter_key_paths(child, path)
    elif isinstance(value, list):
        for element in value:
            yield from iter_key_paths(element, prefix)


def normalize_path(path: str) -> str:
    """Strip numeric array-index segments from a dot-path."""
    return ".".join(seg for seg in path.split(".") if not seg.isdigit())
