"""Static index of a Python repository snapshot.

The index records every source file, its module-level imports and the
classes, functions and methods it defines, with 1-based inclusive line spans
and verbatim source text. It is built once and then only queried.
"""

from __future__ import annotations

import ast
import difflib
import fnmatch
import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping

from . import __version__
from .errors import (
    CacheCorrupt,
    EmptyRepository,
    EntityNotFound,
    FileNotInIndex,
    InvalidQualifiedName,
    RootNotFound,
)
from .identifiers import is_valid_qualified_name

FORMAT_NAME = "reposearch-index"
FORMAT_VERSION = 1

KINDS = ("class", "function", "method")

DEFAULT_EXCLUDE_DIRS = (
    "__pycache__",
    "node_modules",
    "venv",
    "build",
    "dist",
    "site-packages",
)

# Python's tokenizer treats only these as line breaks (unlike str.splitlines).
_LINE_RE = re.compile(r"[^\r\n]*(?:\r\n|\r|\n)|[^\r\n]+\Z")

_COMPOUND_FIELDS = ("body", "orelse", "finalbody", "handlers", "cases")


@dataclass(frozen=True)
class IndexConfig:
    include: tuple[str, ...] = ("*.py",)
    exclude_dirs: tuple[str, ...] = DEFAULT_EXCLUDE_DIRS
    exclude_globs: tuple[str, ...] = ()
    revision_tag: str | None = None
    root_label: str | None = None


@dataclass(frozen=True)
class ImportRecord:
    raw_text: str
    imported_symbols: tuple[str, ...]
    source_module: str
    line: int


@dataclass(frozen=True)
class CodeEntity:
    kind: str
    qualified_name: str
    relative_path: str
    start_line: int
    end_line: int
    source_text: str

    @property
    def identifier(self) -> str:
        return f"{self.relative_path}::{self.qualified_name}"

    @property
    def class_name(self) -> str | None:
        return self.qualified_name.split(".")[0] if self.kind == "method" else None


@dataclass(frozen=True)
class SourceFileRecord:
    relative_path: str
    line_count: int
    imports: tuple[ImportRecord, ...] = ()
    entity_names: tuple[str, ...] = ()
    parse_error: str | None = None
    duplicate_names: tuple[str, ...] = ()

    @property
    def has_parse_error(self) -> bool:
        return self.parse_error is not None


def split_lines(text: str) -> list[str]:
    """Split keeping line terminators, using Python's notion of a line."""
    return _LINE_RE.findall(text)


# --------------------------------------------------------------------------
# extraction


@dataclass
class _FileParse:
    record: SourceFileRecord
    entities: list[CodeEntity]
    shadows: dict[str, list[tuple[int, int]]]


def _span_start(node: ast.AST) -> int:
    decorators = getattr(node, "decorator_list", None) or []
    return min([node.lineno] + [d.lineno for d in decorators])


def _child_blocks(node: ast.AST) -> Iterator[list[ast.stmt]]:
    for name in _COMPOUND_FIELDS:
        value = getattr(node, name, None)
        if not value:
            continue
        if name in ("handlers", "cases"):
            for sub in value:
                yield sub.body
        else:
            yield value


def _collect_definitions(tree: ast.Module) -> list[tuple[str, str, ast.AST]]:
    """(kind, qualified name, node) for every def/class, in source order.

    Nested functions and definitions under control flow get their flat name;
    functions directly inside a class body (control flow included) are methods.
    """
    found: list[tuple[str, str, ast.AST]] = []

    def visit(stmts: Iterable[ast.stmt], cls: str | None) -> None:
        for node in stmts:
            if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
                if cls is not None:
                    found.append(("method", f"{cls}.{node.name}", node))
                else:
                    found.append(("function", node.name, node))
                visit(node.body, None)
            elif isinstance(node, ast.ClassDef):
                found.append(("class", node.name, node))
                visit(node.body, node.name)
            else:
                for block in _child_blocks(node):
                    visit(block, cls)

    visit(tree.body, None)
    found.sort(key=lambda item: (_span_start(item[2]), item[2].col_offset))
    return found


def _collect_imports(tree: ast.Module, source: str, lines: list[str]) -> list[ImportRecord]:
    records: list[ImportRecord] = []

    def visit(stmts: Iterable[ast.stmt]) -> None:
        for node in stmts:
            if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
                continue
            if isinstance(node, (ast.Import, ast.ImportFrom)):
                raw = ast.get_source_segment(source, node)
                if not raw:
                    raw = "".join(lines[node.lineno - 1 : node.end_lineno]).strip()
                symbols = tuple(alias.asname or alias.name for alias in node.names)
                if isinstance(node, ast.ImportFrom):
                    module = "." * node.level + (node.module or "")
                else:
                    module = ""
                records.append(ImportRecord(raw, symbols, module, node.lineno))
            else:
                for block in _child_blocks(node):
                    visit(block)

    visit(tree.body)
    records.sort(key=lambda r: r.line)
    return records


def _decode(data: bytes) -> tuple[str, str | None]:
    try:
        return data.decode("utf-8"), None
    except UnicodeDecodeError as exc:
        return data.decode("latin-1"), f"UnicodeDecodeError: {exc.reason}"


def _parse_file(relative_path: str, data: bytes) -> _FileParse:
    text, error = _decode(data)
    lines = split_lines(text)
    tree = None
    if error is None:
        try:
            tree = ast.parse(text.lstrip("\ufeff"), filename=relative_path)
        except (SyntaxError, ValueError, RecursionError, MemoryError) as exc:
            error = f"{type(exc).__name__}: {exc}"

    if tree is None:
        record = SourceFileRecord(relative_path, len(lines), parse_error=error)
        return _FileParse(record, [], {})

    entities: list[CodeEntity] = []
    shadows: dict[str, list[tuple[int, int]]] = {}
    seen: set[str] = set()
    for kind, qname, node in _collect_definitions(tree):
        start, end = _span_start(node), node.end_lineno
        if qname in seen:
            shadows.setdefault(qname, []).append((start, end))
            continue
        seen.add(qname)
        source_text = "".join(lines[start - 1 : end])
        entities.append(CodeEntity(kind, qname, relative_path, start, end, source_text))

    imports = _collect_imports(tree, text.lstrip("\ufeff"), lines)
    record = SourceFileRecord(
        relative_path=relative_path,
        line_count=len(lines),
        imports=tuple(imports),
        entity_names=tuple(e.qualified_name for e in entities),
        duplicate_names=tuple(sorted(shadows)),
    )
    return _FileParse(record, entities, shadows)


# --------------------------------------------------------------------------
# the index


@dataclass(frozen=True)
class RepoIndex:
    root_label: str
    files: tuple[SourceFileRecord, ...]
    entity_table: Mapping[tuple[str, str], CodeEntity]
    revision_tag: str
    shadow_spans: Mapping[tuple[str, str], tuple[tuple[int, int], ...]] = field(
        default_factory=dict, repr=False
    )

    def __post_init__(self):
        object.__setattr__(self, "entity_table", MappingProxyType(dict(self.entity_table)))
        object.__setattr__(self, "shadow_spans", MappingProxyType(dict(self.shadow_spans)))
        by_path = {f.relative_path: f for f in self.files}
        per_file: dict[str, list[CodeEntity]] = {p: [] for p in by_path}
        for (path, _), entity in self.entity_table.items():
            per_file[path].append(entity)
        for ents in per_file.values():
            ents.sort(key=lambda e: (e.start_line, e.qualified_name))
        object.__setattr__(self, "_by_path", by_path)
        object.__setattr__(self, "_per_file", {p: tuple(v) for p, v in per_file.items()})

    # basic accessors ---------------------------------------------------

    @property
    def paths(self) -> list[str]:
        return [f.relative_path for f in self.files]

    def has_file(self, path: str) -> bool:
        return path in self._by_path

    def file(self, path: str) -> SourceFileRecord:
        try:
            return self._by_path[path]
        except KeyError:
            raise FileNotInIndex(path) from None

    def entities(self, path: str | None = None) -> tuple[CodeEntity, ...]:
        if path is None:
            return tuple(e for p in self.paths for e in self._per_file[p])
        self.file(path)
        return self._per_file[path]

    def get(self, path: str, qualified_name: str) -> CodeEntity | None:
        return self.entity_table.get((path, qualified_name))

    @property
    def entity_count(self) -> int:
        return len(self.entity_table)

    # queries -------------------------------------------------------------

    def render_structure(self, max_depth: int = 8) -> str:
        """Indented tree of directories and indexed files.

        Directories at ``max_depth`` are collapsed to ``name/ ...`` with the
        number of files beneath them.
        """
        if max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        tree: dict = {}
        for path in self.paths:
            node = tree
            *dirs, name = path.split("/")
            for d in dirs:
                node = node.setdefault(d + "/", {})
            node[name] = None

        def count(node: dict) -> int:
            return sum(1 if child is None else count(child) for child in node.values())

        out: list[str] = []

        def walk(node: dict, depth: int) -> None:
            indent = "    " * (depth - 1)
            for name in sorted(node):
                child = node[name]
                if child is None:
                    out.append(indent + name)
                elif depth >= max_depth:
                    n = count(child)
                    out.append(f"{indent}{name} ... ({n} file{'s' if n != 1 else ''})")
                else:
                    out.append(indent + name)
                    walk(child, depth + 1)

        walk(tree, 1)
        return "\n".join(out)

    def imports_of(self, path: str) -> list[ImportRecord]:
        return list(self.file(path).imports)

    def resolve_entity(self, path: str, qualified_name: str, kind: str | None = None) -> CodeEntity:
        """Look up one entity; ``kind`` optionally restricts the match.

        Raises EntityNotFound carrying up to five near-miss suggestions.
        """
        if not is_valid_qualified_name(qualified_name):
            raise InvalidQualifiedName(f"not a valid name: {qualified_name!r}")
        self.file(path)
        entity = self.entity_table.get((path, qualified_name))
        if entity is not None and (kind is None or entity.kind == kind):
            return entity
        raise EntityNotFound(path, qualified_name, self._suggest(path, qualified_name, kind))

    def _suggest(self, path: str, qname: str, kind: str | None) -> list[str]:
        here = self._per_file[path]
        suggestions: list[str] = []

        exact = self.entity_table.get((path, qname))
        if exact is not None:
            suggestions.append(f"{exact.qualified_name} ({exact.kind})")

        if "." in qname:
            cls, member = qname.split(".")
            members = [e.qualified_name for e in here if e.class_name == cls]
            short = [m.split(".")[1] for m in members]
            close = difflib.get_close_matches(member, short, n=5, cutoff=0.5)
            suggestions += [f"{cls}.{m}" for m in close]
            suggestions += members
            if kind == "method" and (path, member) in self.entity_table:
                suggestions.append(member)
        else:
            candidates = [e.qualified_name for e in here if kind is None or e.kind == kind]
            suggestions += difflib.get_close_matches(qname, candidates, n=5, cutoff=0.6)
            suggestions += [e.qualified_name for e in here if e.qualified_name.endswith("." + qname)]

        for other in self.paths:
            if other != path and (other, qname) in self.entity_table:
                suggestions.append(f"{other}::{qname}")

        seen: set[str] = set()
        unique = [s for s in suggestions if not (s in seen or seen.add(s))]
        return unique[:5]

    def entities_overlapping(self, path: str, line_start: int, line_end: int) -> list[CodeEntity]:
        """Functions and methods whose span meets ``[line_start, line_end]``.

        A class is reported only when none of the functions inside it is hit,
        so edits to class-level statements still map to something.
        """
        if not 1 <= line_start <= line_end:
            raise ValueError(f"bad line range {line_start}-{line_end}")
        ents = self.entities(path)

        def spans(e: CodeEntity) -> list[tuple[int, int]]:
            return [(e.start_line, e.end_line), *self.shadow_spans.get((path, e.qualified_name), ())]

        def hit(e: CodeEntity) -> bool:
            return any(s <= line_end and e_ >= line_start for s, e_ in spans(e))

        funcs = [e for e in ents if e.kind != "class" and hit(e)]
        result = list(funcs)
        for cls in ents:
            if cls.kind != "class" or not hit(cls):
                continue
            cls_spans = spans(cls)
            inside = [
                f
                for f in funcs
                if any(cs <= fs and fe <= ce for cs, ce in cls_spans for fs, fe in spans(f))
            ]
            if not inside:
                result.append(cls)
        result.sort(key=lambda e: (e.start_line, e.qualified_name))
        return result

    # persistence -----------------------------------------------------------

    def to_payload(self) -> dict:
        return {
            "root_label": self.root_label,
            "revision_tag": self.revision_tag,
            "files": [
                {
                    "relative_path": f.relative_path,
                    "line_count": f.line_count,
                    "imports": [
                        [i.raw_text, list(i.imported_symbols), i.source_module, i.line] for i in f.imports
                    ],
                    "entity_names": list(f.entity_names),
                    "parse_error": f.parse_error,
                    "duplicate_names": list(f.duplicate_names),
                }
                for f in self.files
            ],
            "entities": [
                [e.kind, e.qualified_name, e.relative_path, e.start_line, e.end_line, e.source_text]
                for e in self.entities()
            ],
            "shadow_spans": [
                [path, name, [list(s) for s in spans]]
                for (path, name), spans in sorted(self.shadow_spans.items())
            ],
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "RepoIndex":
        files = tuple(
            SourceFileRecord(
                relative_path=f["relative_path"],
                line_count=f["line_count"],
                imports=tuple(ImportRecord(r, tuple(s), m, ln) for r, s, m, ln in f["imports"]),
                entity_names=tuple(f["entity_names"]),
                parse_error=f["parse_error"],
                duplicate_names=tuple(f["duplicate_names"]),
            )
            for f in payload["files"]
        )
        table = {}
        for kind, qname, path, start, end, text in payload["entities"]:
            table[(path, qname)] = CodeEntity(kind, qname, path, start, end, text)
        shadows = {(p, n): tuple(tuple(s) for s in spans) for p, n, spans in payload["shadow_spans"]}
        return cls(payload["root_label"], files, table, payload["revision_tag"], shadows)

    def save(self, path: str | os.PathLike) -> None:
        persist_index(self, path)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RepoIndex":
        return load_index(path)


# --------------------------------------------------------------------------
# construction


def _matches(path: str, config: IndexConfig) -> bool:
    name = path.rsplit("/", 1)[-1]
    if not any(fnmatch.fnmatchcase(name, pat) or fnmatch.fnmatchcase(path, pat) for pat in config.include):
        return False
    return not any(fnmatch.fnmatchcase(path, pat) for pat in config.exclude_globs)


def _walk_sources(root: Path, config: IndexConfig) -> list[str]:
    found: list[str] = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = sorted(
            d
            for d in dirnames
            if not d.startswith(".") and d not in config.exclude_dirs and not d.endswith(".egg-info")
        )
        rel_dir = Path(dirpath).relative_to(root).as_posix()
        for name in filenames:
            if name.startswith("."):
                continue
            rel = name if rel_dir == "." else f"{rel_dir}/{name}"
            if _matches(rel, config) and os.path.isfile(os.path.join(dirpath, name)):
                found.append(rel)
    return sorted(found)


def content_revision_tag(sources: Mapping[str, bytes]) -> str:
    digest = hashlib.sha256()
    for path in sorted(sources):
        digest.update(path.encode("utf-8") + b"\0")
        digest.update(hashlib.sha256(sources[path]).digest())
    return "sha256:" + digest.hexdigest()[:16]


def index_from_sources(
    sources: Mapping[str, bytes | str],
    root_label: str = "repo",
    revision_tag: str | None = None,
) -> RepoIndex:
    """Build an index from an in-memory ``{relative_path: content}`` mapping."""
    data = {p: (c.encode("utf-8") if isinstance(c, str) else c) for p, c in sources.items()}
    for path in data:
        if path.startswith("/") or "\\" in path or ".." in path.split("/"):
            raise ValueError(f"bad relative path: {path!r}")
    if not data:
        raise EmptyRepository(f"no source files in {root_label}")
    parsed = [_parse_file(path, data[path]) for path in sorted(data)]
    table = {(e.relative_path, e.qualified_name): e for p in parsed for e in p.entities}
    shadows = {
        (p.record.relative_path, name): tuple(spans) for p in parsed for name, spans in p.shadows.items()
    }
    return RepoIndex(
        root_label=root_label,
        files=tuple(p.record for p in parsed),
        entity_table=table,
        revision_tag=revision_tag or content_revision_tag(data),
        shadow_spans=shadows,
    )


def build_index(repo_root: str | os.PathLike, config: IndexConfig | None = None) -> RepoIndex:
    config = config or IndexConfig()
    root = Path(repo_root)
    if not root.is_dir():
        raise RootNotFound(f"repository root not found: {repo_root}")
    paths = _walk_sources(root, config)
    if not paths:
        raise EmptyRepository(f"no files matching {list(config.include)} under {root}")
    sources = {p: (root / p).read_bytes() for p in paths}
    return index_from_sources(
        sources,
        root_label=config.root_label or root.resolve().name,
        revision_tag=config.revision_tag,
    )


# --------------------------------------------------------------------------
# cache file


def _checksum(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(blob.encode("utf-8")).hexdigest()


def persist_index(index: RepoIndex, path: str | os.PathLike) -> None:
    payload = index.to_payload()
    document = {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "revision_tag": index.revision_tag,
        "checksum": _checksum(payload),
        "payload": payload,
    }
    target = Path(path)
    tmp = target.with_name(target.name + ".tmp")
    tmp.write_text(json.dumps(document, ensure_ascii=False, sort_keys=True), encoding="utf-8")
    os.replace(tmp, target)


def load_index(path: str | os.PathLike) -> RepoIndex:
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CacheCorrupt(f"{path}: unreadable index cache ({exc})") from exc
    if not isinstance(document, dict) or document.get("format") != FORMAT_NAME:
        raise CacheCorrupt(f"{path}: not an index cache")
    if document.get("format_version") != FORMAT_VERSION:
        raise CacheCorrupt(
            f"{path}: format version {document.get('format_version')!r}, expected {FORMAT_VERSION}"
        )
    payload = document.get("payload")
    if not isinstance(payload, dict) or document.get("checksum") != _checksum(payload):
        raise CacheCorrupt(f"{path}: checksum mismatch")
    try:
        return RepoIndex.from_payload(payload)
    except (KeyError, TypeError, ValueError) as exc:
        raise CacheCorrupt(f"{path}: malformed payload ({exc})") from exc
