"""Exception types shared across the cdmgen pipeline.

Every domain failure raised by this package derives from ``CdmgenError`` so
callers (and the CLI exit-code mapping) can catch one base class. Transport
and parsing errors carry enough context to locate the offending file, path,
or prompt.
"""

from __future__ import annotations


class CdmgenError(Exception):
    """Base class for all domain errors raised by cdmgen."""


# ---------------------------------------------------------------------------
# schema loading / lookup


class MissingRoot(CdmgenError):
    """The declared root schema file is absent from the schema directory."""


class UnresolvedRef(CdmgenError):
    """A schema reference names a document that does not exist.

    ``referencing_path`` identifies where the dangling reference was written
    (``<document id>#<property>`` or a dot-path during traversal).
    """

    def __init__(self, ref_text: str, referencing_path: str = ""):
        self.ref_text = ref_text
        self.referencing_path = referencing_path
        where = f" (referenced from {referencing_path})" if referencing_path else ""
        super().__init__(f"unresolved schema reference {ref_text!r}{where}")


class MalformedDocument(CdmgenError):
    """A schema or example file failed to parse."""

    def __init__(self, file: str, offset: int, detail: str):
        self.file = file
        self.offset = offset
        super().__init__(f"{file}: parse failure at byte offset {offset}: {detail}")


class CycleDetected(CdmgenError):
    """Reference resolution exceeded the configured depth guard."""


# ---------------------------------------------------------------------------
# examples / knowledge base


class EmptyExampleDir(CdmgenError):
    """An example directory contains no example files."""


class DimensionMismatch(CdmgenError):
    """An embedding provider returned vectors of inconsistent length."""


# ---------------------------------------------------------------------------
# providers


class ProviderUnavailable(CdmgenError):
    """The completion or embedding provider could not be reached.

    When raised mid-run by the populator, ``provenance`` carries the partial
    per-task records collected before the abort.
    """

    def __init__(self, detail: str, provenance: dict | None = None):
        self.provenance = provenance or {}
        super().__init__(detail)


class AuthFailure(CdmgenError):
    """The provider rejected or could not resolve the configured credential."""


class Timeout(CdmgenError):
    """A provider call exceeded its configured timeout after all retries."""


class NoStructuredPayload(CdmgenError):
    """No balanced, parseable JSON object could be extracted from model text."""


class GenerationIncomplete(CdmgenError):
    """Direct generation was truncated before producing a complete document."""


# ---------------------------------------------------------------------------
# evaluation


class EmptyDocument(CdmgenError):
    """The document under evaluation contains no keys."""


class ListParseFailure(CdmgenError):
    """The coverage reply is missing one of the three required lists."""


class DegenerateDenominator(CdmgenError):
    """Coverage score is undefined because all three counts are zero."""


class EmptyGroup(CdmgenError):
    """An aggregation group contains no reports."""
