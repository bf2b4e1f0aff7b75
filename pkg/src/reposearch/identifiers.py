"""Canonical ``path::Qualified.name`` identifiers for functions and methods."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import MalformedIdentifier

SEPARATOR = "::"


def is_valid_qualified_name(name: str) -> bool:
    """``name`` or ``Class.name``, each part a Python identifier."""
    parts = name.split(".")
    return 1 <= len(parts) <= 2 and all(p.isidentifier() for p in parts)


def normalize_path(raw: str) -> str:
    path = raw.strip().replace("\\", "/")
    while path.startswith("./"):
        path = path[2:]
    path = path.lstrip("/")
    path = re.sub(r"/{2,}", "/", path)
    if not path or path.endswith("/"):
        raise MalformedIdentifier(f"bad path: {raw!r}")
    if any(part in ("..", ".") for part in path.split("/")):
        raise MalformedIdentifier(f"path may not contain '.' or '..' segments: {raw!r}")
    return path


@dataclass(frozen=True, order=True)
class FunctionIdentifier:
    relative_path: str
    qualified_name: str

    def __post_init__(self):
        if not is_valid_qualified_name(self.qualified_name):
            raise MalformedIdentifier(f"bad qualified name: {self.qualified_name!r}")

    def __str__(self) -> str:
        return f"{self.relative_path}{SEPARATOR}{self.qualified_name}"

    @classmethod
    def parse(cls, raw: str) -> "FunctionIdentifier":
        ident = normalize_identifier(raw)
        if not isinstance(ident, FunctionIdentifier):
            raise MalformedIdentifier(f"expected 'path::name', got {raw!r}")
        return ident


def normalize_identifier(raw: str) -> FunctionIdentifier | str:
    """Canonicalize a model- or human-written identifier.

    Accepts ``path::name``, ``path:name`` and ``path name``; backslashes become
    slashes and leading ``./`` is dropped. Text with no name part is returned
    as a normalized file path.
    """
    if not isinstance(raw, str):
        raise MalformedIdentifier(f"identifier must be text, got {type(raw).__name__}")
    text = raw.strip()
    if not text:
        raise MalformedIdentifier("empty identifier")

    if SEPARATOR in text:
        path, _, name = text.partition(SEPARATOR)
    elif ":" in text:
        path, _, name = text.rpartition(":")
    elif len(text.split()) == 2:
        path, name = text.split()
    elif len(text.split()) > 2:
        raise MalformedIdentifier(f"cannot split {raw!r} into path and name")
    else:
        return normalize_path(text)

    path, name = path.strip(), name.strip()
    if not path or not name:
        raise MalformedIdentifier(f"missing path or name in {raw!r}")
    return FunctionIdentifier(normalize_path(path), name)


def canonical(raw: str) -> str:
    """String form of :func:`normalize_identifier`, used for set membership."""
    return str(normalize_identifier(raw))
