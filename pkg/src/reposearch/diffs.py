"""Unified-diff parsing and application.

Line numbers are 1-based: deleted lines are counted in the pre-image,
added lines in the post-image.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from .errors import MalformedDiff, RevisionMismatch
from .repo_index import split_lines

_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")
_GIT_HEADER_RE = re.compile(r"^diff --git (?:a/)?(\S+) (?:b/)?(\S+)$")


@dataclass
class Hunk:
    old_start: int
    old_len: int
    new_start: int
    new_len: int
    lines: list[str] = field(default_factory=list)

    def numbered(self) -> tuple[list[int], list[int]]:
        """(deleted pre-image line numbers, added post-image line numbers)."""
        old, new = self.old_start, self.new_start
        deleted, added = [], []
        for line in self.lines:
            tag = line[:1]
            if tag == "-":
                deleted.append(old)
                old += 1
            elif tag == "+":
                added.append(new)
                new += 1
            elif tag in (" ", ""):
                old += 1
                new += 1
        return deleted, added


@dataclass
class FilePatch:
    old_path: str | None
    new_path: str | None
    hunks: list[Hunk] = field(default_factory=list)
    binary: bool = False

    @property
    def path(self) -> str:
        return self.new_path if self.new_path is not None else self.old_path

    @property
    def status(self) -> str:
        if self.old_path is None:
            return "added"
        if self.new_path is None:
            return "deleted"
        if self.old_path != self.new_path:
            return "renamed"
        return "modified"

    def deleted_lines(self) -> list[int]:
        return [n for h in self.hunks for n in h.numbered()[0]]

    def added_lines(self) -> list[int]:
        return [n for h in self.hunks for n in h.numbered()[1]]

    def deleted_ranges(self) -> list[tuple[int, int]]:
        return to_ranges(self.deleted_lines())

    def added_ranges(self) -> list[tuple[int, int]]:
        return to_ranges(self.added_lines())


def to_ranges(numbers: Iterable[int]) -> list[tuple[int, int]]:
    """Collapse line numbers into sorted inclusive ``(start, end)`` runs."""
    ranges: list[list[int]] = []
    for n in sorted(set(numbers)):
        if ranges and n == ranges[-1][1] + 1:
            ranges[-1][1] = n
        else:
            ranges.append([n, n])
    return [(a, b) for a, b in ranges]


def _strip_path(raw: str) -> str | None:
    path = raw.split("\t", 1)[0].strip()
    if path.startswith('"') and path.endswith('"'):
        path = path[1:-1]
    if path == "/dev/null":
        return None
    if path[:2] in ("a/", "b/"):
        path = path[2:]
    return path


def parse_unified_diff(text: str) -> list[FilePatch]:
    if not isinstance(text, str) or not text.strip():
        raise MalformedDiff("empty diff")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    patches: list[FilePatch] = []
    current: FilePatch | None = None
    i = 0
    while i < len(lines):
        line = lines[i].rstrip("\r")
        if line.startswith("diff --git "):
            m = _GIT_HEADER_RE.match(line)
            old, new = (m.group(1), m.group(2)) if m else (None, None)
            current = FilePatch(old, new)
            patches.append(current)
        elif line.startswith("--- ") and i + 1 < len(lines) and lines[i + 1].startswith("+++ "):
            old, new = _strip_path(line[4:]), _strip_path(lines[i + 1].rstrip("\r")[4:])
            if current is None or current.hunks:
                current = FilePatch(old, new)
                patches.append(current)
            else:
                current.old_path, current.new_path = old, new
            i += 1
        elif current is not None and line.startswith("new file mode"):
            current.old_path = None
        elif current is not None and line.startswith("deleted file mode"):
            current.new_path = None
        elif current is not None and line.startswith("rename from "):
            current.old_path = line[len("rename from ") :]
        elif current is not None and line.startswith("rename to "):
            current.new_path = line[len("rename to ") :]
        elif current is not None and (line.startswith("Binary files") or line == "GIT binary patch"):
            current.binary = True
        elif line.startswith("@@"):
            m = _HUNK_RE.match(line)
            if m is None:
                raise MalformedDiff(f"line {i + 1}: bad hunk header {line!r}")
            if current is None:
                raise MalformedDiff(f"line {i + 1}: hunk before any file header")
            hunk = Hunk(
                int(m.group(1)),
                int(m.group(2)) if m.group(2) is not None else 1,
                int(m.group(3)),
                int(m.group(4)) if m.group(4) is not None else 1,
            )
            old_left, new_left = hunk.old_len, hunk.new_len
            while old_left > 0 or new_left > 0:
                i += 1
                if i >= len(lines):
                    raise MalformedDiff(f"hunk at {m.group(0)} ends early")
                body = lines[i]
                tag = body[:1]
                if tag == "\\":
                    hunk.lines.append(body)
                    continue
                if tag in (" ", ""):
                    old_left -= 1
                    new_left -= 1
                elif tag == "-":
                    old_left -= 1
                elif tag == "+":
                    new_left -= 1
                else:
                    raise MalformedDiff(f"line {i + 1}: unexpected {body!r} inside hunk")
                if old_left < 0 or new_left < 0:
                    raise MalformedDiff(f"line {i + 1}: hunk longer than its header says")
                hunk.lines.append(body)
            if i + 1 < len(lines) and lines[i + 1].startswith("\\"):
                i += 1
                hunk.lines.append(lines[i])
            current.hunks.append(hunk)
        i += 1

    if not patches:
        raise MalformedDiff("no file headers found")
    for p in patches:
        if p.old_path is None and p.new_path is None:
            raise MalformedDiff("file patch without any path")
    return patches


# --------------------------------------------------------------------------
# applying


def _same(a: str, b: str) -> bool:
    return a.rstrip("\r\n") == b.rstrip("\r\n")


def apply_file_patch(old_text: str, patch: FilePatch) -> str:
    """Apply one file's hunks to its pre-image text."""
    old = split_lines(old_text)
    out: list[str] = []
    pos = 0
    for hunk in patch.hunks:
        start = hunk.old_start if hunk.old_len == 0 else hunk.old_start - 1
        if start < pos or start > len(old):
            raise RevisionMismatch(f"{patch.path}: hunk @{hunk.old_start} out of bounds")
        out.extend(old[pos:start])
        pos = start
        last_tag = None
        for line in hunk.lines:
            tag, content = line[:1], line[1:]
            if tag == "\\":
                if last_tag in ("+", " ") and out:
                    out[-1] = out[-1].rstrip("\r\n")
                continue
            if tag in (" ", "", "-"):
                if pos >= len(old) or not _same(old[pos], content):
                    raise RevisionMismatch(f"{patch.path}: context mismatch at line {pos + 1}")
                if tag != "-":
                    out.append(old[pos])
                pos += 1
            elif tag == "+":
                out.append(content + "\n")
            last_tag = tag if tag else " "
    out.extend(old[pos:])
    return "".join(out)


def apply_diff(
    sources: Mapping[str, bytes | str],
    patches: Iterable[FilePatch],
    include: Callable[[str], bool] | None = None,
) -> dict[str, str]:
    """Post-image of a file mapping under a parsed diff.

    Binary patches, and patches whose paths fail ``include``, are skipped.
    """
    result = {p: (c.decode("utf-8", "replace") if isinstance(c, bytes) else c) for p, c in sources.items()}
    for patch in patches:
        if patch.binary:
            continue
        if include is not None and not any(include(p) for p in (patch.old_path, patch.new_path) if p):
            continue
        if patch.old_path is None:
            result[patch.new_path] = apply_file_patch("", patch)
            continue
        if patch.old_path not in result:
            raise RevisionMismatch(f"{patch.old_path}: not present in pre-image")
        text = result.pop(patch.old_path)
        if patch.new_path is not None:
            result[patch.new_path] = apply_file_patch(text, patch)
    return result
