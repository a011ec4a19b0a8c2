"""Loading and querying a directory of interlinked JSON schema files.

A schema corpus is a directory of ``.json`` documents that reference each
other by relative file path via ``$ref``. This module resolves the whole
graph once, normalizes every property into a :class:`PropertyDef`, and
answers "does this dot-path exist, and what lives there?" queries with array
indices stripped.

Supported schema keywords: ``properties``, ``items``, ``$ref``,
``description``, ``enum``, ``format``, ``type``, and the composites
``allOf`` / ``anyOf`` / ``oneOf`` (read as the union of member properties).
Anything else is ignored.
"""

from __future__ import annotations

import json
import posixpath
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import CycleDetected, MalformedDocument, MissingRoot, UnresolvedRef

SCALAR_TYPES = ("string", "number", "integer", "boolean", "date", "enum")
_JSON_SCALARS = {"string", "number", "integer", "boolean"}
_DATE_WORD = re.compile(r"\bdate\b", re.IGNORECASE)

DEFAULT_MAX_PATH_DEPTH = 64


@dataclass(frozen=True)
class PropertyDef:
    """One normalized property of a schema document.

    ``kind`` is one of ``scalar``, ``object-ref``, ``array-of-ref``,
    ``array-of-scalar``, ``inline-object``. Reference kinds always carry a
    ``ref_target`` (inline objects point at a synthesized internal document);
    scalar kinds always carry a ``scalar_type``. ``choice_group`` records
    which ``oneOf``/``anyOf`` alternative contributed the property, when any.
    """

    name: str
    kind: str
    ref_target: Optional[str] = None
    scalar_type: Optional[str] = None
    description: Optional[str] = None
    enum_values: Optional[tuple[str, ...]] = None
    choice_group: Optional[str] = None

    def __post_init__(self):
        if self.kind in ("object-ref", "array-of-ref") and not self.ref_target:
            raise ValueError(f"{self.name}: {self.kind} requires a ref_target")
        if self.kind in ("scalar", "array-of-scalar") and self.scalar_type not in SCALAR_TYPES:
            raise ValueError(f"{self.name}: {self.kind} requires a scalar_type")


@dataclass(frozen=True)
class SchemaDocument:
    """A parsed schema file (or synthesized inline object) and its properties."""

    id: str
    properties: dict[str, PropertyDef]
    description: Optional[str] = None


@dataclass
class SchemaIndex:
    """Immutable resolved view of a schema directory.

    ``documents`` holds one entry per ``.json`` file, keyed by the file's
    path relative to the directory root. Inline objects live in a separate
    internal table so document counts reflect files on disk. ``reachable``
    flags which files the root actually links to; unreachable files are kept
    so paths from example data that bypass the root can still be scored.

    The path table is a lazy memo over :meth:`lookup`; it is bounded by the
    set of distinct normalized paths ever queried.
    """

    root_id: str
    documents: dict[str, SchemaDocument]
    reachable: frozenset[str]
    max_path_depth: int = DEFAULT_MAX_PATH_DEPTH
    _inline: dict[str, SchemaDocument] = field(default_factory=dict, repr=False)
    _path_table: dict[str, Optional[PropertyDef]] = field(
        default_factory=dict, repr=False, compare=False
    )

    def doc(self, doc_id: str) -> SchemaDocument:
        if doc_id in self.documents:
            return self.documents[doc_id]
        return self._inline[doc_id]

    def lookup(self, path: str) -> tuple[bool, Optional[PropertyDef]]:
        """Whether ``path`` names a property reachable from the root schema.

        Numeric segments are stripped before the walk; the result is memoized
        per normalized path. Raises :class:`CycleDetected` when the walk
        would exceed ``max_path_depth`` segments and ``ValueError`` on an
        empty path.
        """
        if not path or not path.strip("."):
            raise ValueError("path must be a non-empty dot-separated string")
        segments = [seg for seg in path.split(".") if seg and not seg.isdigit()]
        if not segments:
            return False, None
        if len(segments) > self.max_path_depth:
            raise CycleDetected(
                f"path has {len(segments)} segments, exceeding the depth guard "
                f"of {self.max_path_depth}"
            )
        normalized = ".".join(segments)
        if normalized in self._path_table:
            hit = self._path_table[normalized]
            return hit is not None, hit

        prop: Optional[PropertyDef] = None
        doc_id = self.root_id
        for i, segment in enumerate(segments):
            properties = self.doc(doc_id).properties
            prop = properties.get(segment)
            if prop is None:
                self._path_table[normalized] = None
                return False, None
            if i < len(segments) - 1:
                if prop.ref_target is None:
                    self._path_table[normalized] = None
                    return False, None
                doc_id = prop.ref_target
        self._path_table[normalized] = prop
        return True, prop


def path_exists(index: SchemaIndex, path: str) -> tuple[bool, Optional[PropertyDef]]:
    """Functional alias for :meth:`SchemaIndex.lookup`."""
    return index.lookup(path)


def resolve_ref(index: SchemaIndex, from_doc: str, ref_text: str) -> str:
    """Canonical document id for a ``$ref`` written inside ``from_doc``.

    Relative paths are normalized against the referencing document's
    directory; a ``#fragment`` suffix is discarded and a pure-fragment ref
    resolves to the referencing document itself.
    """
    target = _normalize_ref(from_doc, ref_text)
    if target not in index.documents:
        raise UnresolvedRef(ref_text, from_doc)
    return target


def _normalize_ref(from_doc: str, ref_text: str) -> str:
    file_part = ref_text.split("#", 1)[0].strip()
    if not file_part:
        return from_doc
    base = posixpath.dirname(from_doc)
    return posixpath.normpath(posixpath.join(base, file_part))


def load_schema_dir(schema_dir, root_file) -> SchemaIndex:
    """Load every ``.json`` file under ``schema_dir`` and resolve references.

    ``root_file`` may be an absolute path, a path relative to ``schema_dir``,
    or a bare filename within it. Every reference reachable from the root
    must resolve; files the root never links to are loaded and flagged
    unreachable.
    """
    base = Path(schema_dir)
    if not base.is_dir():
        raise MissingRoot(f"schema directory {base} does not exist")
    root_id = _root_id_for(base, Path(root_file))

    raw_docs: dict[str, dict] = {}
    for file in sorted(base.rglob("*.json")):
        doc_id = file.relative_to(base).as_posix()
        text = file.read_text(encoding="utf-8")
        try:
            parsed = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(doc_id, exc.pos, exc.msg) from exc
        if not isinstance(parsed, dict):
            raise MalformedDocument(doc_id, 0, "top-level value is not an object")
        raw_docs[doc_id] = parsed

    if root_id not in raw_docs:
        raise MissingRoot(f"root schema file {root_id!r} not found in {base}")

    return _IndexBuilder(raw_docs, root_id).build()


def _root_id_for(base: Path, root: Path) -> str:
    if root.is_absolute():
        return root.resolve().relative_to(base.resolve()).as_posix()
    candidate = base / root
    if candidate.exists():
        return root.as_posix()
    return root.name


class _IndexBuilder:
    """Two-pass construction: parse all files, then classify every property."""

    def __init__(self, raw_docs: dict[str, dict], root_id: str):
        self.raw = raw_docs
        self.root_id = root_id
        self.documents: dict[str, SchemaDocument] = {}
        self.inline: dict[str, SchemaDocument] = {}
        self.ref_edges: dict[str, set[str]] = {doc_id: set() for doc_id in raw_docs}

    def build(self) -> SchemaIndex:
        for doc_id in self.raw:
            properties = self._build_properties(doc_id)
            self.documents[doc_id] = SchemaDocument(
                id=doc_id,
                properties=properties,
                description=self._description(self.raw[doc_id]),
            )
        reachable = self._reachable_from_root()
        return SchemaIndex(
            root_id=self.root_id,
            documents=self.documents,
            reachable=frozenset(reachable),
            _inline=self.inline,
        )

    # -- property collection ------------------------------------------------

    def _build_properties(self, doc_id: str) -> dict[str, PropertyDef]:
        merged: dict[str, PropertyDef] = {}
        for name, raw_prop, group in self._raw_properties(doc_id, frozenset()):
            if name in merged:
                continue
            merged[name] = self._classify(doc_id, name, raw_prop, group)
        return merged

    def _raw_properties(self, doc_id: str, visiting: frozenset[str]):
        """Yield (name, raw property, choice group) in declaration order.

        A document's own ``properties`` come first, then properties pulled in
        from composite members. Revisited documents in one composite chain
        are skipped (union semantics make the revisit a no-op).
        """
        if doc_id in visiting:
            return
        visiting = visiting | {doc_id}
        raw = self.raw[doc_id]
        for name, raw_prop in raw.get("properties", {}).items():
            yield name, raw_prop, None
        for keyword in ("allOf", "anyOf", "oneOf"):
            members = raw.get(keyword)
            if not isinstance(members, list):
                continue
            for i, member in enumerate(members):
                if not isinstance(member, dict):
                    continue
                group = f"{keyword}[{i}]" if keyword in ("anyOf", "oneOf") else None
                if "$ref" in member:
                    target = self._resolve(doc_id, member["$ref"], f"{doc_id}#{keyword}[{i}]")
                    for name, raw_prop, inner in self._raw_properties(target, visiting):
                        yield name, raw_prop, group or inner
                else:
                    for name, raw_prop in member.get("properties", {}).items():
                        yield name, raw_prop, group

    # -- classification -----------------------------------------------------

    def _classify(self, doc_id: str, name: str, raw_prop, group) -> PropertyDef:
        where = f"{doc_id}#{name}"
        if not isinstance(raw_prop, dict):
            raw_prop = {}
        description = self._description(raw_prop)

        if "$ref" in raw_prop:
            target = self._resolve(doc_id, raw_prop["$ref"], where)
            return self._ref_property(name, target, description, group)

        items = raw_prop.get("items")
        if raw_prop.get("type") == "array" or isinstance(items, dict):
            return self._array_property(doc_id, name, raw_prop, description, group, where)

        if "properties" in raw_prop or raw_prop.get("type") == "object":
            target = self._register_inline(doc_id, name, raw_prop)
            return PropertyDef(
                name=name,
                kind="inline-object",
                ref_target=target,
                description=description,
                choice_group=group,
            )

        scalar_type, enum_values = self._scalar_type(raw_prop)
        return PropertyDef(
            name=name,
            kind="scalar",
            scalar_type=scalar_type,
            description=description,
            enum_values=enum_values,
            choice_group=group,
        )

    def _ref_property(self, name, target, description, group) -> PropertyDef:
        final = self._chase_alias(target)
        raw_target = self.raw[final]
        if self._is_scalar_doc(final, frozenset()):
            scalar_type, enum_values = self._scalar_type(raw_target)
            return PropertyDef(
                name=name,
                kind="scalar",
                scalar_type=scalar_type,
                description=description or self._description(raw_target),
                enum_values=enum_values,
                choice_group=group,
            )
        return PropertyDef(
            name=name,
            kind="object-ref",
            ref_target=final,
            description=description,
            choice_group=group,
        )

    def _array_property(self, doc_id, name, raw_prop, description, group, where) -> PropertyDef:
        items = raw_prop.get("items")
        items = items if isinstance(items, dict) else {}
        if "$ref" in items:
            target = self._chase_alias(self._resolve(doc_id, items["$ref"], where))
            if self._is_scalar_doc(target, frozenset()):
                scalar_type, enum_values = self._scalar_type(self.raw[target])
                return PropertyDef(
                    name=name,
                    kind="array-of-scalar",
                    scalar_type=scalar_type,
                    description=description,
                    enum_values=enum_values,
                    choice_group=group,
                )
            return PropertyDef(
                name=name,
                kind="array-of-ref",
                ref_target=target,
                description=description,
                choice_group=group,
            )
        if "properties" in items or items.get("type") == "object":
            target = self._register_inline(doc_id, f"{name}[]", items)
            return PropertyDef(
                name=name,
                kind="array-of-ref",
                ref_target=target,
                description=description,
                choice_group=group,
            )
        scalar_type, enum_values = self._scalar_type(items)
        return PropertyDef(
            name=name,
            kind="array-of-scalar",
            scalar_type=scalar_type,
            description=description,
            enum_values=enum_values,
            choice_group=group,
        )

    def _register_inline(self, doc_id: str, name: str, raw_prop: dict) -> str:
        inline_id = f"{doc_id}::{name}"
        if inline_id not in self.inline:
            # Reserve the slot first: a self-referential inline object would
            # otherwise recurse through _classify forever.
            self.inline[inline_id] = SchemaDocument(inline_id, {})
            properties = {
                child: self._classify(doc_id, child, raw_child, None)
                for child, raw_child in raw_prop.get("properties", {}).items()
            }
            self.inline[inline_id] = SchemaDocument(
                id=inline_id,
                properties=properties,
                description=self._description(raw_prop),
            )
        return inline_id

    # -- small helpers ------------------------------------------------------

    def _resolve(self, from_doc: str, ref_text, where: str) -> str:
        if not isinstance(ref_text, str) or not ref_text:
            raise UnresolvedRef(str(ref_text), where)
        target = _normalize_ref(from_doc, ref_text)
        if target not in self.raw:
            raise UnresolvedRef(ref_text, where)
        self.ref_edges.setdefault(from_doc, set()).add(target)
        return target

    def _chase_alias(self, doc_id: str) -> str:
        """Follow documents whose whole body is a single ``$ref``."""
        seen = [doc_id]
        while set(self.raw[doc_id].keys()) == {"$ref"}:
            doc_id = self._resolve(doc_id, self.raw[doc_id]["$ref"], doc_id)
            if doc_id in seen:
                raise CycleDetected(f"$ref alias cycle through {' -> '.join(seen)}")
            seen.append(doc_id)
        return doc_id

    def _is_scalar_doc(self, doc_id: str, visiting: frozenset[str]) -> bool:
        """A referenced document that defines a scalar value, not an object."""
        if doc_id in visiting:
            return False
        raw = self.raw[doc_id]
        if "properties" in raw:
            return False
        for keyword in ("allOf", "anyOf", "oneOf"):
            for member in raw.get(keyword, []) or []:
                if isinstance(member, dict) and "properties" in member:
                    return False
                if isinstance(member, dict) and "$ref" in member:
                    target = _normalize_ref(doc_id, member["$ref"])
                    if target in self.raw and not self._is_scalar_doc(
                        target, visiting | {doc_id}
                    ):
                        return False
        return "enum" in raw or raw.get("type") in _JSON_SCALARS

    @staticmethod
    def _description(raw: dict) -> Optional[str]:
        value = raw.get("description")
        return value if isinstance(value, str) and value else None

    @staticmethod
    def _scalar_type(raw: dict) -> tuple[str, Optional[tuple[str, ...]]]:
        enum = raw.get("enum")
        if isinstance(enum, list) and enum:
            return "enum", tuple(str(v) for v in enum)
        declared = raw.get("type")
        fmt = raw.get("format")
        description = raw.get("description") or ""
        if declared in ("string", None):
            if fmt == "date":
                return "date", None
            if fmt is None and _DATE_WORD.search(description):
                return "date", None
        if declared in ("number", "integer", "boolean"):
            return declared, None
        return "string", None

    def _reachable_from_root(self) -> set[str]:
        seen = {self.root_id}
        frontier = [self.root_id]
        while frontier:
            doc_id = frontier.pop()
            for target in self.ref_edges.get(doc_id, ()):
                if target in self.raw and target not in seen:
                    seen.add(target)
                    frontier.append(target)
        return seen
