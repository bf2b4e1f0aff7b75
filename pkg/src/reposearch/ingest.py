"""Loading (issue, pull request) pairs from local dumps or the GitHub REST API.

Remote responses are cached on disk keyed by URL, so a rerun over the same
cache needs no network and yields identical pairs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
from pathlib import Path
from typing import Callable, Iterator

import httpx

from .dataset import IssueRecord, PatchRecord
from .errors import AuthFailure, SourceUnavailable

log = logging.getLogger(__name__)

# GitHub's closing keywords, e.g. "Fixes #123"
_CLOSES_RE = re.compile(r"\b(?:close[sd]?|fix(?:e[sd])?|resolve[sd]?)\s*:?\s+#(\d+)\b", re.IGNORECASE)


def linked_issue_numbers(text: str) -> list[str]:
    seen: list[str] = []
    for num in _CLOSES_RE.findall(text or ""):
        if num not in seen:
            seen.append(num)
    return seen


def _pair_from_row(row: dict) -> tuple[IssueRecord, PatchRecord]:
    if "problem_statement" in row:
        # SWE-bench style record
        repo = row.get("repo", "")
        qid = str(row.get("instance_id") or row.get("issue_id"))
        issue = IssueRecord(qid, "", row["problem_statement"], qid, repo)
        patch = PatchRecord(qid, row["patch"], repo, row.get("base_commit", ""), row.get("head_commit", ""))
        return issue, patch
    repo = row.get("repo", "")
    pr_id = row.get("pr_id")
    issue = IssueRecord(
        issue_id=str(row["issue_id"]),
        title=row.get("title") or "",
        body=row.get("body") or "",
        linked_pr_id=str(pr_id) if pr_id not in (None, "") else None,
        repo=repo,
    )
    patch = PatchRecord(
        pr_id=str(pr_id or ""),
        unified_diff=row.get("diff") or row.get("patch") or "",
        repo=repo,
        base_revision=row.get("base_revision", "") or row.get("base_commit", ""),
        head_revision=row.get("head_revision", ""),
    )
    return issue, patch


def pair_to_row(issue: IssueRecord, patch: PatchRecord) -> dict:
    return {
        "repo": issue.repo,
        "issue_id": issue.issue_id,
        "title": issue.title,
        "body": issue.body,
        "pr_id": issue.linked_pr_id,
        "diff": patch.unified_diff,
        "base_revision": patch.base_revision,
        "head_revision": patch.head_revision,
    }


def load_pairs(path: str | Path) -> list[tuple[IssueRecord, PatchRecord]]:
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise SourceUnavailable(f"{path}: {exc}") from exc
    pairs = []
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                pairs.append(_pair_from_row(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise SourceUnavailable(f"{path}:{lineno}: bad pair record ({exc})") from exc
    return pairs


class GitHubSource:
    """Merged pull requests of one repository paired with the issues they close.

    The token is read from ``token_env``; 401 raises AuthFailure. When the
    rate limit is exhausted the client sleeps until the reset time.
    """

    def __init__(
        self,
        repo: str,
        cache_dir: str | Path,
        api_url: str = "https://api.github.com",
        token_env: str = "GITHUB_TOKEN",
        client: httpx.Client | None = None,
        max_pages: int | None = None,
        per_page: int = 100,
        offline: bool = False,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.time,
        max_rate_waits: int = 3,
    ):
        self.repo = repo
        self.cache_dir = Path(cache_dir)
        self.api_url = api_url.rstrip("/")
        self.token_env = token_env
        self.client = client or httpx.Client(timeout=60.0, follow_redirects=True)
        self.max_pages = max_pages
        self.per_page = per_page
        self.offline = offline
        self.sleep = sleep
        self.clock = clock
        self.max_rate_waits = max_rate_waits

    # http --------------------------------------------------------------

    def _cache_path(self, url: str, accept: str) -> Path:
        key = hashlib.sha256(f"{accept} {url}".encode()).hexdigest()
        return self.cache_dir / key[:2] / f"{key}.json"

    def _headers(self, accept: str) -> dict:
        headers = {"Accept": accept, "User-Agent": "reposearch-ingest"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _wait_for_reset(self, resp: httpx.Response) -> None:
        reset = resp.headers.get("X-RateLimit-Reset")
        retry_after = resp.headers.get("Retry-After")
        if retry_after is not None:
            delay = float(retry_after)
        elif reset is not None:
            delay = max(0.0, float(reset) - self.clock()) + 1.0
        else:
            delay = 60.0
        log.warning("rate limited; sleeping %.0fs", delay)
        self.sleep(delay)

    def get(self, url: str, accept: str = "application/vnd.github+json") -> dict:
        """Cached GET returning ``{"body": ..., "next": next-page URL or None}``."""
        path = self._cache_path(url, accept)
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))
        if self.offline:
            raise SourceUnavailable(f"offline and not cached: {url}")

        for _ in range(self.max_rate_waits + 1):
            try:
                resp = self.client.get(url, headers=self._headers(accept))
            except httpx.HTTPError as exc:
                raise SourceUnavailable(f"{url}: {exc}") from exc
            if resp.status_code == 401:
                raise AuthFailure(f"{url}: 401 unauthorized (check ${self.token_env})")
            limited = resp.status_code == 429 or (
                resp.status_code == 403 and resp.headers.get("X-RateLimit-Remaining") == "0"
            )
            if limited:
                self._wait_for_reset(resp)
                continue
            break
        else:
            raise SourceUnavailable(f"{url}: still rate limited after {self.max_rate_waits} waits")

        if resp.status_code >= 400:
            raise SourceUnavailable(f"{url}: HTTP {resp.status_code}")
        body = resp.text if "diff" in accept else resp.json()
        record = {"body": body, "next": resp.links.get("next", {}).get("url")}
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(record, sort_keys=True), encoding="utf-8")
        if resp.headers.get("X-RateLimit-Remaining") == "0":
            self._wait_for_reset(resp)
        return record

    # pairs ---------------------------------------------------------------

    def pull_requests(self) -> Iterator[dict]:
        url = f"{self.api_url}/repos/{self.repo}/pulls?state=closed&per_page={self.per_page}&page=1"
        pages = 0
        while url and (self.max_pages is None or pages < self.max_pages):
            record = self.get(url)
            pages += 1
            yield from record["body"]
            url = record["next"]

    def pairs(self) -> Iterator[tuple[IssueRecord, PatchRecord]]:
        for pr in self.pull_requests():
            if not pr.get("merged_at"):
                continue
            numbers = linked_issue_numbers(f"{pr.get('title') or ''}\n{pr.get('body') or ''}")
            if not numbers:
                continue
            pr_id = str(pr["number"])
            diff = None
            for num in numbers:
                issue = self.get(f"{self.api_url}/repos/{self.repo}/issues/{num}")["body"]
                if "pull_request" in issue:
                    continue
                if diff is None:
                    diff = self.get(
                        f"{self.api_url}/repos/{self.repo}/pulls/{pr_id}", accept="application/vnd.github.v3.diff"
                    )["body"]
                yield (
                    IssueRecord(str(num), issue.get("title") or "", issue.get("body") or "", pr_id, self.repo),
                    # post-image comes from applying the diff to base, which also checks context
                    PatchRecord(pr_id, diff, self.repo, (pr.get("base") or {}).get("sha", "")),
                )


def ingest_issue_pr_pairs(source) -> list[tuple[IssueRecord, PatchRecord]]:
    """Normalized pairs from a local JSONL path or a GitHubSource."""
    if isinstance(source, GitHubSource):
        return list(source.pairs())
    return load_pairs(source)
