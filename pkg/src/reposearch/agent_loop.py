"""Multi-turn localization episodes: thought, tool call, observation, until Exit."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import __version__
from .backends import ModelBackend
from .errors import MalformedIdentifier
from .identifiers import FunctionIdentifier, normalize_identifier
from .repo_index import RepoIndex
from .search_tools import ToolCall, ToolResult, ToolSettings, dispatch, tool_catalog

log = logging.getLogger(__name__)

TERMINATIONS = ("exit_tool", "budget_exhausted", "parse_failure_limit")
MAX_CONSECUTIVE_PARSE_FAILURES = 3

ANSWER_INSTRUCTIONS = """\
When you have gathered enough context, call the Exit tool. Then (in the same
reply or the next one) give your final answer as one fenced block containing a
JSON object with two lists, most likely location first:

```json
{"files": ["path/to/file.py"], "functions": ["path/to/file.py::function_name", "path/to/file.py::ClassName.method_name"]}
```

Functions are written as "<file path>::<name>" for module-level functions and
"<file path>::<ClassName>.<method>" for methods."""

SYSTEM_PREAMBLE = """\
You are an issue localization assistant. Given an issue report for a Python
repository, find the files and functions that must be modified to resolve it.
Before each tool call, briefly explain your reasoning."""

EXIT_ACK = "Exit acknowledged. Reply now with the final answer block only."
FORCE_ANSWER = "The tool-call budget is exhausted. Reply now with the final answer block only."
CORRECTION = (
    "Your reply could not be parsed ({error}). Reply with one fenced JSON block: "
    'either a tool call {{"tool": ..., "args": {{...}}}} or the final answer '
    '{{"files": [...], "functions": [...]}}.'
)


def system_prompt() -> str:
    return f"{SYSTEM_PREAMBLE}\n\n{tool_catalog()}\n\n{ANSWER_INSTRUCTIONS}"


@dataclass(frozen=True)
class EpisodeBudget:
    max_turns: int = 20
    max_observation_lines: int = 400
    max_total_response_chars: int = 200_000

    def __post_init__(self):
        for name in ("max_turns", "max_observation_lines", "max_total_response_chars"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


# --------------------------------------------------------------------------
# answers


def dedupe(items: Iterable) -> list:
    seen = set()
    return [x for x in items if not (x in seen or seen.add(x))]


def derive_file_ranking(
    ranked_functions: Sequence[FunctionIdentifier | str],
    explicit_files: Sequence[str] | None = None,
) -> list[str]:
    """Files in order of first appearance among the functions.

    An explicit file list wins; derived files missing from it are appended.
    """
    derived = []
    for fn in ranked_functions:
        ident = fn if isinstance(fn, FunctionIdentifier) else FunctionIdentifier.parse(fn)
        derived.append(ident.relative_path)
    return dedupe(list(explicit_files or []) + derived)


@dataclass(frozen=True)
class LocalizationResult:
    ranked_functions: tuple[FunctionIdentifier, ...] = ()
    ranked_files: tuple[str, ...] = ()
    rejected: tuple[str, ...] = ()

    @classmethod
    def from_raw(cls, functions: Sequence[str], files: Sequence[str] = ()) -> "LocalizationResult":
        """Normalize, deduplicate and derive files from model-written lists.

        Identifiers absent from the index are kept; only syntactically
        malformed ones are dropped (and remembered in ``rejected``).
        """
        funcs, explicit, rejected = [], [], []
        for raw in functions:
            try:
                ident = normalize_identifier(raw)
            except MalformedIdentifier:
                rejected.append(raw)
                continue
            if isinstance(ident, FunctionIdentifier):
                funcs.append(ident)
            else:
                rejected.append(raw)
        for raw in files:
            try:
                ident = normalize_identifier(raw)
            except MalformedIdentifier:
                rejected.append(raw)
                continue
            explicit.append(ident.relative_path if isinstance(ident, FunctionIdentifier) else ident)
        funcs = dedupe(funcs)
        return cls(tuple(funcs), tuple(derive_file_ranking(funcs, dedupe(explicit))), tuple(rejected))

    @property
    def function_strings(self) -> list[str]:
        return [str(f) for f in self.ranked_functions]

    def to_dict(self) -> dict:
        return {"functions": self.function_strings, "files": list(self.ranked_files)}

    @classmethod
    def from_dict(cls, data: dict) -> "LocalizationResult":
        return cls(
            tuple(FunctionIdentifier.parse(f) for f in data.get("functions", [])),
            tuple(data.get("files", [])),
        )


# --------------------------------------------------------------------------
# parsing model turns

_FENCE_RE = re.compile(r"```(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class ParsedTurn:
    kind: str  # tool_call | final_answer | unparseable
    thought: str = ""
    call: ToolCall | None = None
    answer: dict | None = None
    error: str = ""


def _block_json(raw: str):
    body = raw.strip()
    if not body.startswith("{") and not body.startswith("["):
        # drop the info string (```json)
        body = body.split("\n", 1)[1] if "\n" in body else ""
    return json.loads(body)


def _classify(obj) -> tuple[str, object]:
    if not isinstance(obj, dict):
        return "error", "block is not a JSON object"
    if "tool" in obj:
        extra = set(obj) - {"tool", "args"}
        if extra:
            return "error", f"unexpected keys {sorted(extra)} in tool call"
        args = obj.get("args", {})
        if args is None:
            args = {}
        if not isinstance(obj["tool"], str) or not isinstance(args, dict):
            return "error", '"tool" must be a string and "args" an object'
        if not all(isinstance(v, str) for v in args.values()):
            return "error", "all tool arguments must be strings"
        return "call", ToolCall(obj["tool"], dict(args))
    if "functions" in obj or "files" in obj:
        funcs, files = obj.get("functions", []), obj.get("files", [])
        if not isinstance(funcs, list) or not isinstance(files, list):
            return "error", '"files" and "functions" must be lists'
        if not all(isinstance(x, str) for x in funcs + files):
            return "error", "answer entries must be strings"
        return "answer", {"functions": funcs, "files": files}
    return "error", 'JSON object has neither "tool" nor "functions"/"files"'


def parse_model_turn(text: str) -> ParsedTurn:
    """Split a model reply into its thought and one tool call or final answer.

    A reply carrying both an answer and a tool call is a final answer; the
    call is still reported so an accompanying Exit can be recorded.
    """
    text = text or ""
    blocks = _FENCE_RE.findall(text)
    thought = _FENCE_RE.sub("", text).strip()
    if not blocks:
        return ParsedTurn("unparseable", thought, error="no fenced JSON block found")

    call, answer, errors = None, None, []
    for raw in blocks:
        try:
            obj = _block_json(raw)
        except json.JSONDecodeError as exc:
            errors.append(f"invalid JSON: {exc.msg}")
            continue
        tag, value = _classify(obj)
        if tag == "call" and call is None:
            call = value
        elif tag == "answer" and answer is None:
            answer = value
        elif tag == "error":
            errors.append(value)

    if answer is not None:
        return ParsedTurn("final_answer", thought, call=call, answer=answer)
    if call is not None:
        return ParsedTurn("tool_call", thought, call=call)
    return ParsedTurn("unparseable", thought, error="; ".join(errors))


# --------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class Step:
    thought: str
    call: ToolCall
    result: ToolResult

    def to_dict(self) -> dict:
        return {"thought": self.thought, "call": self.call.to_dict(), "result": self.result.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "Step":
        return cls(data["thought"], ToolCall.from_dict(data["call"]), ToolResult.from_dict(data["result"]))


@dataclass
class Trajectory:
    query_id: str
    messages: list[dict] = field(default_factory=list)
    steps: list[Step] = field(default_factory=list)
    final_answer: LocalizationResult | None = None
    termination: str = "parse_failure_limit"
    reward: float | None = None
    backend: str = ""

    @property
    def tool_success_rate(self) -> float:
        if not self.steps:
            return 0.0
        return sum(s.result.valid_call for s in self.steps) / len(self.steps)

    def to_dict(self) -> dict:
        return {
            "version": __version__,
            "query_id": self.query_id,
            "backend": self.backend,
            "messages": [dict(m) for m in self.messages],
            "steps": [s.to_dict() for s in self.steps],
            "final_answer": self.final_answer.to_dict() if self.final_answer else None,
            "termination": self.termination,
            "reward": self.reward,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        answer = data.get("final_answer")
        return cls(
            query_id=data["query_id"],
            messages=[dict(m) for m in data["messages"]],
            steps=[Step.from_dict(s) for s in data["steps"]],
            final_answer=LocalizationResult.from_dict(answer) if answer is not None else None,
            termination=data["termination"],
            reward=data.get("reward"),
            backend=data.get("backend", ""),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True)


def write_trajectories(path: str | Path, trajectories: Iterable[Trajectory]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajectories:
            fh.write(traj.to_json() + "\n")
            n += 1
    return n


def read_trajectories(path: str | Path) -> list[Trajectory]:
    with open(path, encoding="utf-8") as fh:
        return [Trajectory.from_dict(json.loads(line)) for line in fh if line.strip()]


# --------------------------------------------------------------------------
# the loop


def run_episode(
    issue_text: str,
    index: RepoIndex,
    backend: ModelBackend,
    budget: EpisodeBudget | None = None,
    query_id: str = "",
    seed: int | None = None,
    structure_depth: int = 8,
) -> Trajectory:
    if not issue_text or not issue_text.strip():
        raise ValueError("issue_text must be non-empty")
    budget = budget or EpisodeBudget()
    settings = ToolSettings(structure_depth=structure_depth, max_observation_lines=budget.max_observation_lines)

    traj = Trajectory(query_id=query_id, backend=getattr(backend, "name", type(backend).__name__))
    messages = traj.messages
    messages.append({"role": "system", "content": system_prompt()})
    messages.append({"role": "user", "content": issue_text})

    response_chars = 0
    failures = 0
    exited = False

    def ask() -> ParsedTurn:
        nonlocal response_chars
        text = backend.complete([dict(m) for m in messages], seed=seed)
        text = text if isinstance(text, str) else ""
        messages.append({"role": "assistant", "content": text})
        response_chars += len(text)
        return parse_model_turn(text)

    def record(parsed: ParsedTurn, call: ToolCall) -> ToolResult:
        call = replace(call, turn_index=len(traj.steps) + 1)
        result = dispatch(call, index, settings)
        traj.steps.append(Step(parsed.thought, call, result))
        return result

    while True:
        if not exited and (len(traj.steps) >= budget.max_turns or response_chars >= budget.max_total_response_chars):
            messages.append({"role": "user", "content": FORCE_ANSWER})
            parsed = ask()
            if parsed.answer is not None:
                traj.final_answer = LocalizationResult.from_raw(parsed.answer["functions"], parsed.answer["files"])
            traj.termination = "budget_exhausted"
            break

        parsed = ask()

        if parsed.kind == "final_answer":
            if parsed.call is not None and parsed.call.tool_name == "Exit" and not exited:
                record(parsed, parsed.call)
            traj.final_answer = LocalizationResult.from_raw(parsed.answer["functions"], parsed.answer["files"])
            traj.termination = "exit_tool"
            break

        if parsed.kind == "tool_call" and not exited:
            failures = 0
            result = record(parsed, parsed.call)
            if result.exit:
                exited = True
                messages.append({"role": "tool", "content": EXIT_ACK})
            else:
                messages.append({"role": "tool", "content": result.observation})
            continue

        failures += 1
        if failures >= MAX_CONSECUTIVE_PARSE_FAILURES:
            traj.termination = "parse_failure_limit"
            break
        error = "a tool call after Exit" if parsed.kind == "tool_call" else parsed.error
        messages.append({"role": "user", "content": CORRECTION.format(error=error)})

    return traj


@dataclass(frozen=True)
class EpisodeFailure:
    position: int
    query_id: str
    error: str


@dataclass
class BatchResult:
    trajectories: list[Trajectory]
    failures: list[EpisodeFailure]

    def __iter__(self):
        return iter(self.trajectories)

    def __len__(self):
        return len(self.trajectories)


def _fields(example) -> tuple[str, str]:
    if isinstance(example, dict):
        return str(example["query_id"]), example.get("query") or example["issue_text"]
    return str(example.query_id), example.query


def batch_run(
    examples: Sequence,
    index_provider: RepoIndex | Callable[[object], RepoIndex],
    backend: ModelBackend,
    budget: EpisodeBudget | None = None,
    parallelism: int = 1,
    seed: int | None = None,
    structure_depth: int = 8,
) -> BatchResult:
    """Run one episode per example with at most ``parallelism`` in flight.

    Output order follows input order. A failing episode is recorded in
    ``failures`` and does not stop the batch.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    examples = list(examples)

    def provide(example) -> RepoIndex:
        return index_provider if isinstance(index_provider, RepoIndex) else index_provider(example)

    def one(example) -> Trajectory:
        query_id, text = _fields(example)
        return run_episode(text, provide(example), backend, budget, query_id, seed, structure_depth)

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = [pool.submit(one, ex) for ex in examples]

    trajectories, failures = [], []
    for pos, (example, fut) in enumerate(zip(examples, futures)):
        exc = fut.exception()
        if exc is None:
            trajectories.append(fut.result())
        else:
            qid = _fields(example)[0] if example is not None else str(pos)
            log.warning("episode %s failed: %s", qid, exc)
            failures.append(EpisodeFailure(pos, qid, f"{type(exc).__name__}: {exc}"))
    return BatchResult(trajectories, failures)
