"""The six repository search tools and their call/response envelope.

Calls travel from the model as one fenced block holding a flat JSON object::

    ```json
    {"tool": "SearchClassMethod", "args": {"file": "pkg/b.py", "class": "C", "method": "m"}}
    ```

Every failure is turned into an instructive observation instead of an
exception, so an episode can always continue.
"""

from __future__ import annotations

import difflib
import json
import time
from dataclasses import dataclass, field

from .errors import EntityNotFound, FileNotInIndex, InvalidQualifiedName
from .repo_index import CodeEntity, RepoIndex

GRAMMAR_VERSION = 1

TOOL_PARAMS: dict[str, tuple[str, ...]] = {
    "GetRepoStructure": (),
    "GetImportOfFile": ("file",),
    "SearchClass": ("file", "class"),
    "SearchFunction": ("file", "function"),
    "SearchClassMethod": ("file", "class", "method"),
    "Exit": (),
}

TOOL_DESCRIPTIONS: dict[str, tuple[str, str]] = {
    "GetRepoStructure": ("Get the repository file structure.", "The repository file structure."),
    "GetImportOfFile": ("Get the imports of given file.", "The imports of file."),
    "SearchClass": ("Search for the content of class in the file.", "Code content of the searched class."),
    "SearchFunction": (
        "Search for the content of function in the file.",
        "Code content of the searched function.",
    ),
    "SearchClassMethod": (
        "Search for the content of method in the class of file.",
        "Code content of the searched method.",
    ),
    "Exit": ("Exit if you have found all the information needed.", "-"),
}

_EXAMPLE_ARGS = {
    "GetImportOfFile": {"file": "pkg/module.py"},
    "SearchClass": {"file": "pkg/module.py", "class": "Parser"},
    "SearchFunction": {"file": "pkg/module.py", "function": "load_config"},
    "SearchClassMethod": {"file": "pkg/module.py", "class": "Parser", "method": "parse"},
}


@dataclass(frozen=True)
class ToolSettings:
    structure_depth: int = 8
    max_observation_lines: int = 400


@dataclass(frozen=True)
class ToolCall:
    tool_name: str
    arguments: dict[str, str] = field(default_factory=dict)
    turn_index: int = 1

    def to_dict(self) -> dict:
        return {"tool": self.tool_name, "args": dict(self.arguments), "turn_index": self.turn_index}

    @classmethod
    def from_dict(cls, data: dict) -> "ToolCall":
        return cls(data["tool"], dict(data.get("args") or {}), data.get("turn_index", 1))


@dataclass(frozen=True)
class Verdict:
    valid: bool
    reason: str = "ok"
    message: str = ""
    suggestions: tuple[str, ...] = ()


@dataclass(frozen=True)
class ToolResult:
    status: str
    observation: str
    valid_call: bool
    elapsed: float = field(default=0.0, compare=False)
    exit: bool = False

    def to_dict(self) -> dict:
        # elapsed is wall-clock noise and stays out of persisted records
        return {
            "status": self.status,
            "observation": self.observation,
            "valid_call": self.valid_call,
            "exit": self.exit,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ToolResult":
        return cls(data["status"], data["observation"], data["valid_call"], exit=data.get("exit", False))


def _lookup(index: RepoIndex, path: str, qname: str, kind: str) -> tuple[CodeEntity | None, Verdict]:
    try:
        return index.resolve_entity(path, qname, kind=kind), Verdict(True)
    except FileNotInIndex as exc:
        return None, _file_missing(index, exc.path)
    except InvalidQualifiedName:
        return None, Verdict(False, "bad_name", f"'{qname}' is not a valid {kind} name")
    except EntityNotFound as exc:
        return None, Verdict(
            False,
            f"{kind}_not_found",
            f"{kind} '{qname}' not found in file '{path}'",
            tuple(exc.suggestions),
        )


def _file_missing(index: RepoIndex, path: str) -> Verdict:
    close = difflib.get_close_matches(path, index.paths, n=5, cutoff=0.75)
    tails = [p for p in index.paths if path and (p.endswith("/" + path) or p.rsplit("/", 1)[-1] == path)]
    seen: set[str] = set()
    suggestions = tuple(s for s in tails + close if not (s in seen or seen.add(s)))[:5]
    return Verdict(False, "file_not_found", f"file '{path}' not found in repository", suggestions)


def _check(call: ToolCall, index: RepoIndex) -> tuple[CodeEntity | None, Verdict]:
    params = TOOL_PARAMS.get(call.tool_name)
    if params is None:
        return None, Verdict(
            False,
            "unknown_tool",
            f"unknown tool '{call.tool_name}'; available tools: {', '.join(TOOL_PARAMS)}",
        )
    got = set(call.arguments)
    if got != set(params):
        expected = ", ".join(params) or "no arguments"
        detail = []
        if set(params) - got:
            detail.append("missing " + ", ".join(sorted(set(params) - got)))
        if got - set(params):
            detail.append("unexpected " + ", ".join(sorted(got - set(params))))
        return None, Verdict(
            False,
            "arity",
            f"{call.tool_name} takes ({expected}); {'; '.join(detail)}",
        )
    bad = [k for k, v in call.arguments.items() if not isinstance(v, str) or not v.strip()]
    if bad:
        return None, Verdict(False, "bad_argument", f"argument(s) {', '.join(sorted(bad))} must be non-empty strings")

    args = {k: v.strip() for k, v in call.arguments.items()}
    name = call.tool_name
    if name in ("GetRepoStructure", "Exit"):
        return None, Verdict(True)
    if not index.has_file(args["file"]):
        return None, _file_missing(index, args["file"])
    if name == "GetImportOfFile":
        return None, Verdict(True)
    if name == "SearchClass":
        return _lookup(index, args["file"], args["class"], "class")
    if name == "SearchFunction":
        return _lookup(index, args["file"], args["function"], "function")
    # SearchClassMethod
    if "." in args["class"] or "." in args["method"]:
        return None, Verdict(False, "bad_name", "class and method must be plain names, not dotted paths")
    entity, verdict = _lookup(index, args["file"], args["class"], "class")
    if not verdict.valid:
        return None, verdict
    return _lookup(index, args["file"], f"{args['class']}.{args['method']}", "method")


def validate_call(call: ToolCall, index: RepoIndex) -> Verdict:
    """Classify a call as valid (existing tool, right arguments, names present)."""
    return _check(call, index)[1]


def truncate_lines(text: str, budget: int) -> str:
    lines = text.splitlines()
    if budget <= 0 or len(lines) <= budget:
        return text
    head = budget // 2
    tail = budget - head
    omitted = len(lines) - budget
    return "\n".join(lines[:head] + [f"... [{omitted} lines omitted] ..."] + lines[-tail:])


def _render_entity(entity: CodeEntity, settings: ToolSettings) -> str:
    header = (
        f"# {entity.relative_path}::{entity.qualified_name} "
        f"({entity.kind}, lines {entity.start_line}-{entity.end_line})"
    )
    body = truncate_lines(entity.source_text.rstrip("\r\n"), settings.max_observation_lines)
    return f"{header}\n{body}"


def _render_imports(index: RepoIndex, path: str) -> str:
    records = index.imports_of(path)
    if not records:
        return f"file '{path}' has no module-level imports"
    lines = [f"Imports of '{path}':"]
    for rec in records:
        lines.append(f"L{rec.line}: {rec.raw_text}")
    return "\n".join(lines)


def _error_text(verdict: Verdict) -> str:
    text = verdict.message
    if verdict.suggestions:
        text += "\nDid you mean: " + ", ".join(verdict.suggestions)
    return text


def dispatch(call: ToolCall, index: RepoIndex, settings: ToolSettings | None = None) -> ToolResult:
    settings = settings or ToolSettings()
    started = time.perf_counter()
    entity, verdict = _check(call, index)
    if not verdict.valid:
        return ToolResult("error", _error_text(verdict), False, time.perf_counter() - started)

    name = call.tool_name
    if name == "Exit":
        observation = ""
    elif name == "GetRepoStructure":
        observation = index.render_structure(settings.structure_depth)
    elif name == "GetImportOfFile":
        observation = _render_imports(index, call.arguments["file"].strip())
    else:
        observation = _render_entity(entity, settings)
    return ToolResult("ok", observation, True, time.perf_counter() - started, exit=name == "Exit")


def tool_catalog() -> str:
    """Fixed description of the tools and the call syntax, for the system prompt."""
    lines = ["You can use the following repository search tools:", ""]
    for n, (name, params) in enumerate(TOOL_PARAMS.items(), 1):
        desc, output = TOOL_DESCRIPTIONS[name]
        lines.append(f"{n}. {name}({', '.join(params)})")
        lines.append(f"   Description: {desc}")
        lines.append(f"   Output: {output}")
    lines += [
        "",
        "To call a tool, reply with exactly one fenced block containing a single JSON object",
        'with the keys "tool" and "args" (all argument values are strings). One tool call per reply.',
        "",
        "Examples:",
    ]
    for name in ("GetRepoStructure", "SearchClassMethod", "Exit"):
        args = _EXAMPLE_ARGS.get(name, {})
        lines += ["```json", json.dumps({"tool": name, "args": args}), "```"]
    lines += [
        "",
        "File paths are relative to the repository root and use forward slashes.",
    ]
    return "\n".join(lines)


def success_rate(results) -> float:
    """Fraction of tool calls that named an existing tool with valid parameters."""
    results = list(results)
    if not results:
        return 0.0
    return sum(1 for r in results if r.valid_call) / len(results)
