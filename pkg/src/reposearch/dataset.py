"""Localization examples from (issue, pull request) pairs, and training exports.

Pipeline: repository filter -> issue filter -> patch filter -> ground truth
from the golden patch -> examples. Sampled trajectories are then passed
through a rejection filter and exported as SFT lines; examples are exported
as RL lines.
"""

from __future__ import annotations

import fnmatch
import io
import json
import subprocess
import tarfile
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import __version__
from .agent_loop import Trajectory
from .diffs import FilePatch, apply_diff, parse_unified_diff
from .errors import MalformedDiff, RepoSearchError, RevisionMismatch, UnmatchedQuery
from .metrics import GroundTruth, ndcg_at_k
from .repo_index import IndexConfig, RepoIndex, index_from_sources

SCHEMA_VERSION = 1

DEFAULT_LICENSES = frozenset(
    {
        "mit",
        "apache-2.0",
        "bsd-2-clause",
        "bsd-3-clause",
        "isc",
        "mpl-2.0",
        "lgpl-2.1",
        "lgpl-3.0",
        "gpl-2.0",
        "gpl-3.0",
        "agpl-3.0",
        "unlicense",
        "psf-2.0",
        "zlib",
        "0bsd",
    }
)


@dataclass(frozen=True)
class Verdict:
    keep: bool
    reason: str = "ok"

    def __bool__(self) -> bool:
        return self.keep


# --------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class RepoMeta:
    name: str
    issue_count: int
    pr_count: int
    star_count: int
    license_id: str | None = None

    def __post_init__(self):
        if min(self.issue_count, self.pr_count, self.star_count) < 0:
            raise ValueError("counts must be non-negative")


@dataclass(frozen=True)
class IssueRecord:
    issue_id: str
    title: str
    body: str
    linked_pr_id: str | None = None
    repo: str = ""

    @property
    def query(self) -> str:
        return f"{self.title.strip()}\n\n{self.body.strip()}".strip()


@dataclass(frozen=True)
class ChangedPath:
    path: str
    old_path: str | None
    new_path: str | None
    added: tuple[tuple[int, int], ...]
    deleted: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class PatchRecord:
    pr_id: str
    unified_diff: str
    repo: str = ""
    base_revision: str = ""
    head_revision: str = ""

    @cached_property
    def file_patches(self) -> list[FilePatch]:
        return parse_unified_diff(self.unified_diff)

    @property
    def changed_paths(self) -> list[ChangedPath]:
        return [
            ChangedPath(
                fp.path,
                fp.old_path,
                fp.new_path,
                tuple(fp.added_ranges()),
                tuple(fp.deleted_ranges()),
            )
            for fp in self.file_patches
        ]


@dataclass(frozen=True)
class LocalizationExample:
    query_id: str
    query: str
    ground_truth: GroundTruth
    repo: str = ""
    issue_id: str = ""
    pr_id: str = ""
    pre_revision: str = ""
    post_revision: str = ""

    def __post_init__(self):
        if not self.ground_truth.files:
            raise ValueError(f"{self.query_id}: ground truth has no files")

    def to_dict(self) -> dict:
        gt = self.ground_truth.to_dict()
        return {
            "schema_version": SCHEMA_VERSION,
            "query_id": self.query_id,
            "query": self.query,
            "files": gt["files"],
            "functions": gt["functions"],
            "provenance": {
                "repo": self.repo,
                "issue_id": self.issue_id,
                "pr_id": self.pr_id,
                "pre_revision": self.pre_revision,
                "post_revision": self.post_revision,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LocalizationExample":
        prov = data.get("provenance", {})
        return cls(
            query_id=str(data["query_id"]),
            query=data["query"],
            ground_truth=GroundTruth.build(str(data["query_id"]), data.get("functions", []), data.get("files", [])),
            **{k: prov.get(k, "") for k in ("repo", "issue_id", "pr_id", "pre_revision", "post_revision")},
        )


# --------------------------------------------------------------------------
# filters


@dataclass(frozen=True)
class RepoFilterConfig:
    min_issues: int = 1000
    min_prs: int = 1000
    min_stars: int = 100
    licenses: frozenset[str] = DEFAULT_LICENSES
    excluded: frozenset[str] = frozenset()


def filter_repo(meta: RepoMeta, config: RepoFilterConfig | None = None) -> Verdict:
    config = config or RepoFilterConfig()
    if meta.name in config.excluded or meta.name.lower() in {e.lower() for e in config.excluded}:
        return Verdict(False, "leakage")
    if meta.issue_count < config.min_issues:
        return Verdict(False, "issue_count")
    if meta.pr_count < config.min_prs:
        return Verdict(False, "pr_count")
    if meta.star_count < config.min_stars:
        return Verdict(False, "star_count")
    allowed = {lic.lower() for lic in config.licenses}
    if not meta.license_id or meta.license_id.lower() not in allowed:
        return Verdict(False, "license")
    return Verdict(True)


@dataclass(frozen=True)
class IssueFilterConfig:
    min_chars: int = 100
    excluded: frozenset[str] = frozenset()


def filter_issue(issue: IssueRecord, config: IssueFilterConfig | None = None) -> Verdict:
    config = config or IssueFilterConfig()
    if issue.issue_id in config.excluded or f"{issue.repo}#{issue.issue_id}" in config.excluded:
        return Verdict(False, "leakage")
    if len(issue.title) + len(issue.body) < config.min_chars:
        return Verdict(False, "too_short")
    if not issue.linked_pr_id:
        return Verdict(False, "unlinked")
    return Verdict(True)


@dataclass(frozen=True)
class SourceMatcher:
    patterns: tuple[str, ...] = ("*.py",)
    exclude_tests: bool = True
    test_dirs: tuple[str, ...] = ("test", "tests", "testing")
    test_files: tuple[str, ...] = ("test_*.py", "*_test.py", "conftest.py")

    def is_test(self, path: str) -> bool:
        *dirs, name = path.split("/")
        return any(d in self.test_dirs for d in dirs) or any(fnmatch.fnmatchcase(name, p) for p in self.test_files)

    def __call__(self, path: str | None) -> bool:
        if not path:
            return False
        name = path.rsplit("/", 1)[-1]
        if not any(fnmatch.fnmatchcase(name, p) or fnmatch.fnmatchcase(path, p) for p in self.patterns):
            return False
        return not (self.exclude_tests and self.is_test(path))

    def index_config(self) -> IndexConfig:
        return IndexConfig(include=self.patterns)


def filter_patch(patch: PatchRecord, source_matcher: SourceMatcher | None = None) -> Verdict:
    matcher = source_matcher or SourceMatcher()
    patches = patch.file_patches  # raises MalformedDiff
    if any(matcher(p.old_path) or matcher(p.new_path) for p in patches if not p.binary):
        return Verdict(True)
    return Verdict(False, "no_source_changes")


# --------------------------------------------------------------------------
# ground truth


def _overlaps(index: RepoIndex, path: str, ranges, line_count_label: str) -> set[str]:
    if not ranges:
        return set()
    if not index.has_file(path):
        raise RevisionMismatch(f"{path} missing from the {line_count_label} index")
    limit = index.file(path).line_count
    found = set()
    for start, end in ranges:
        if end > limit:
            raise RevisionMismatch(
                f"{path}: changed line {end} beyond {line_count_label} length {limit}"
            )
        found |= {e.identifier for e in index.entities_overlapping(path, start, end)}
    return found


def ground_truth_from_diff(
    pre_index: RepoIndex,
    post_index: RepoIndex,
    patch: PatchRecord,
    source_matcher: SourceMatcher | None = None,
    query_id: str = "",
) -> GroundTruth:
    """Files and functions touched by the patch.

    Deleted lines are mapped on the pre-image index, added lines on the
    post-image index, and the two function sets are unioned.
    """
    matcher = source_matcher or SourceMatcher()
    files: set[str] = set()
    functions: set[str] = set()
    for fp in patch.file_patches:
        if fp.binary:
            continue
        old_ok, new_ok = matcher(fp.old_path), matcher(fp.new_path)
        if not (old_ok or new_ok):
            continue
        if fp.old_path and old_ok:
            functions |= _overlaps(pre_index, fp.old_path, fp.deleted_ranges(), "pre-image")
        if fp.new_path and new_ok:
            functions |= _overlaps(post_index, fp.new_path, fp.added_ranges(), "post-image")
        files.add(fp.new_path if new_ok else fp.old_path)
    return GroundTruth.build(query_id, functions, files)


# --------------------------------------------------------------------------
# building examples from pairs


def git_sources(repo_path: str | Path, revision: str, matcher: SourceMatcher | None = None) -> dict[str, bytes]:
    """Source files of one git revision, read with ``git archive``."""
    matcher = matcher or SourceMatcher(exclude_tests=False)
    try:
        blob = subprocess.run(
            ["git", "-C", str(repo_path), "archive", "--format=tar", revision],
            check=True,
            capture_output=True,
        ).stdout
    except (OSError, subprocess.CalledProcessError) as exc:
        stderr = getattr(exc, "stderr", b"") or b""
        raise RevisionMismatch(f"cannot read revision {revision!r}: {stderr.decode(errors='replace').strip()}") from exc
    sources = {}
    with tarfile.open(fileobj=io.BytesIO(blob)) as tar:
        for member in tar.getmembers():
            if member.isfile() and matcher(member.name) and not any(
                part.startswith(".") for part in member.name.split("/")
            ):
                sources[member.name] = tar.extractfile(member).read()
    return sources


@dataclass
class GitIndexProvider:
    """Pre/post indexes for a patch from a local clone.

    The pre-image is the patch's base revision. The post-image is its head
    revision when given, otherwise the base with the patch applied.
    """

    repo_path: str | Path
    matcher: SourceMatcher = field(default_factory=lambda: SourceMatcher(exclude_tests=False))
    _cache: dict = field(default_factory=dict, repr=False)

    def __call__(self, patch: PatchRecord) -> tuple[RepoIndex, RepoIndex]:
        if not patch.base_revision:
            raise RevisionMismatch(f"PR {patch.pr_id} has no base revision")
        label = patch.repo or Path(self.repo_path).name
        key = patch.base_revision
        if key not in self._cache:
            self._cache[key] = git_sources(self.repo_path, patch.base_revision, self.matcher)
        pre_sources = self._cache[key]
        if patch.head_revision:
            post_sources = git_sources(self.repo_path, patch.head_revision, self.matcher)
            post_tag = patch.head_revision
        else:
            post_sources = apply_diff(pre_sources, patch.file_patches, include=self.matcher)
            post_tag = f"{patch.base_revision}+pr{patch.pr_id}"
        return (
            index_from_sources(pre_sources, root_label=label, revision_tag=patch.base_revision),
            index_from_sources(post_sources, root_label=label, revision_tag=post_tag),
        )


@dataclass
class BuildResult:
    examples: list[LocalizationExample] = field(default_factory=list)
    audit: list[dict] = field(default_factory=list)


def build_examples(
    pairs: Iterable[tuple[IssueRecord, PatchRecord]],
    index_provider: Callable[[PatchRecord], tuple[RepoIndex, RepoIndex]],
    repo_meta: dict[str, RepoMeta] | None = None,
    repo_config: RepoFilterConfig | None = None,
    issue_config: IssueFilterConfig | None = None,
    source_matcher: SourceMatcher | None = None,
) -> BuildResult:
    """Run the filters and ground-truth extraction; every drop is audited."""
    matcher = source_matcher or SourceMatcher()
    result = BuildResult()
    repo_verdicts: dict[str, Verdict] = {}

    def drop(stage: str, issue: IssueRecord, patch: PatchRecord, reason: str) -> None:
        result.audit.append(
            {"stage": stage, "repo": issue.repo, "issue_id": issue.issue_id, "pr_id": patch.pr_id, "reason": reason}
        )

    for issue, patch in pairs:
        if repo_meta is not None:
            if issue.repo not in repo_verdicts:
                meta = repo_meta.get(issue.repo)
                repo_verdicts[issue.repo] = filter_repo(meta, repo_config) if meta else Verdict(False, "no_metadata")
            verdict = repo_verdicts[issue.repo]
            if not verdict:
                drop("repo", issue, patch, verdict.reason)
                continue
        verdict = filter_issue(issue, issue_config)
        if not verdict:
            drop("issue", issue, patch, verdict.reason)
            continue
        try:
            verdict = filter_patch(patch, matcher)
        except MalformedDiff as exc:
            drop("patch", issue, patch, f"malformed_diff: {exc}")
            continue
        if not verdict:
            drop("patch", issue, patch, verdict.reason)
            continue
        query_id = f"{issue.repo}#{issue.issue_id}" if issue.repo else issue.issue_id
        try:
            pre, post = index_provider(patch)
            truth = ground_truth_from_diff(pre, post, patch, matcher, query_id=query_id)
        except RepoSearchError as exc:
            drop("ground_truth", issue, patch, f"{type(exc).__name__}: {exc}")
            continue
        if not truth.files:
            drop("ground_truth", issue, patch, "empty")
            continue
        result.examples.append(
            LocalizationExample(
                query_id=query_id,
                query=issue.query,
                ground_truth=truth,
                repo=issue.repo,
                issue_id=issue.issue_id,
                pr_id=patch.pr_id,
                pre_revision=pre.revision_tag,
                post_revision=post.revision_tag,
            )
        )
    return result


# --------------------------------------------------------------------------
# rejection sampling


@dataclass(frozen=True)
class RejectionPolicy:
    """Which sampled trajectories survive.

    ``any_hit``: at least one ground-truth item anywhere in the answer.
    ``top_k``: at least one hit in the first ``k``.
    ``reward``: nDCG@k of the answer is at least ``threshold``.
    """

    kind: str = "any_hit"
    k: int = 5
    threshold: float = 0.5
    level: str = "function"

    def __post_init__(self):
        if self.kind not in ("any_hit", "top_k", "reward"):
            raise ValueError(f"unknown policy {self.kind!r}")

    def describe(self) -> dict:
        return {"policy": self.kind, "k": self.k, "threshold": self.threshold, "level": self.level}

    def judge(self, trajectory: Trajectory, truth: GroundTruth) -> Verdict:
        relevant = truth.at(self.level)
        if not relevant:
            return Verdict(False, "empty_ground_truth")
        if trajectory.final_answer is None:
            return Verdict(False, "no_answer")
        answer = trajectory.final_answer
        items = answer.function_strings if self.level == "function" else list(answer.ranked_files)
        if self.kind == "any_hit":
            return Verdict(True, "hit") if any(x in relevant for x in items) else Verdict(False, "no_hit")
        if self.kind == "top_k":
            ok = any(x in relevant for x in items[: self.k])
            return Verdict(True, f"hit@{self.k}") if ok else Verdict(False, f"no_hit@{self.k}")
        score = ndcg_at_k(items, relevant, self.k)
        if score >= self.threshold:
            return Verdict(True, f"ndcg@{self.k}={score:.4f}")
        return Verdict(False, f"ndcg@{self.k}={score:.4f}<{self.threshold}")


@dataclass
class RejectionResult:
    header: dict
    kept: list[Trajectory]
    dropped: list[Trajectory]
    verdicts: list[dict]


def rejection_filter(
    trajectories: Sequence[Trajectory],
    truths: Sequence[GroundTruth],
    policy: RejectionPolicy | None = None,
) -> RejectionResult:
    policy = policy or RejectionPolicy()
    by_id = {t.query_id: t for t in truths}
    missing = {t.query_id for t in trajectories} - set(by_id)
    if missing:
        raise UnmatchedQuery(missing)
    kept, dropped, verdicts = [], [], []
    for pos, traj in enumerate(trajectories):
        verdict = policy.judge(traj, by_id[traj.query_id])
        (kept if verdict.keep else dropped).append(traj)
        verdicts.append({"position": pos, "query_id": traj.query_id, "kept": verdict.keep, "reason": verdict.reason})
    header = {"version": __version__, **policy.describe(), "total": len(trajectories), "kept": len(kept)}
    return RejectionResult(header, kept, dropped, verdicts)


# --------------------------------------------------------------------------
# exports


def _write(path: str | Path, rows: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
            n += 1
    return n


def sft_record(trajectory: Trajectory) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "query_id": trajectory.query_id,
        "messages": [{"role": m["role"], "content": m["content"]} for m in trajectory.messages],
        "final_answer": trajectory.final_answer.to_dict(),
        "termination": trajectory.termination,
        "reward": trajectory.reward,
    }


def export_sft(trajectories: Iterable[Trajectory], path: str | Path) -> int:
    """One line per trajectory carrying its full transcript; returns the line count."""
    trajectories = list(trajectories)
    for t in trajectories:
        if t.final_answer is None:
            raise ValueError(f"trajectory {t.query_id} has no final answer")
    return _write(path, (sft_record(t) for t in trajectories))


def export_rl(examples: Iterable[LocalizationExample], path: str | Path) -> int:
    rows = (
        {
            "schema_version": SCHEMA_VERSION,
            "version": __version__,
            "query_id": ex.query_id,
            "query": ex.query,
            "ground_truth": {
                "files": sorted(ex.ground_truth.files),
                "functions": sorted(ex.ground_truth.functions),
            },
            "repo": ex.repo,
            "pre_revision": ex.pre_revision,
        }
        for ex in examples
    )
    return _write(path, rows)


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_examples(path: str | Path, examples: Iterable[LocalizationExample]) -> int:
    return _write(path, (ex.to_dict() for ex in examples))


def read_examples(path: str | Path) -> list[LocalizationExample]:
    return [LocalizationExample.from_dict(row) for row in read_jsonl(path)]
