"""Command-line driver.

Exit codes: 0 success, 1 task-level failure (unmatched queries, failed
episodes), 2 environment or input failure. Settings resolve as
flag > ``REPOSEARCH_*`` environment variable > ``--config`` JSON > default.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .agent_loop import (
    EpisodeBudget,
    Trajectory,
    batch_run,
    read_trajectories,
    run_episode,
    write_trajectories,
)
from .backends import ChatCompletionsBackend, ScriptedBackend
from .errors import (
    BackendUnavailable,
    CacheCorrupt,
    DuplicateItems,
    EmptyRepository,
    MalformedIdentifier,
    RepoSearchError,
    RootNotFound,
    SourceUnavailable,
    UnmatchedQuery,
)
from .metrics import Prediction, evaluate, load_predictions, load_truths, trajectory_reward, write_jsonl
from .repo_index import IndexConfig, RepoIndex, build_index, load_index, persist_index

log = logging.getLogger("reposearch")

# name -> (default, type); env var is REPOSEARCH_<NAME>
SETTINGS = {
    "backend": ("scripted", str),
    "base_url": ("http://localhost:8000/v1", str),
    "model": ("default", str),
    "temperature": (0.0, float),
    "api_key_env": ("OPENAI_API_KEY", str),
    "max_attempts": (3, int),
    "max_turns": (20, int),
    "max_observation_lines": (400, int),
    "structure_depth": (8, int),
    "parallelism": (1, int),
    "seed": (None, int),
    "k": (5, int),
    "level": ("function", str),
    "policy": ("any_hit", str),
    "threshold": (0.5, float),
    "min_issue_chars": (100, int),
}

SECRET_MARKERS = ("key", "token", "secret", "password")


class InputError(Exception):
    """Bad or missing user input; exit code 2."""


def resolve_settings(args: argparse.Namespace) -> dict:
    file_cfg: dict = {}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
    settings = {}
    for name, (default, typ) in SETTINGS.items():
        value = getattr(args, name, None)
        if value is None:
            env = os.environ.get(f"REPOSEARCH_{name.upper()}")
            if env is not None:
                value = env
            elif name in file_cfg:
                value = file_cfg[name]
            else:
                value = default
        if value is not None:
            try:
                value = typ(value)
            except (TypeError, ValueError) as exc:
                raise InputError(f"bad value for {name}: {value!r}") from exc
        settings[name] = value
    return settings


def redacted(settings: dict) -> dict:
    out = {}
    for name, value in settings.items():
        if any(m in name for m in SECRET_MARKERS) and not name.endswith("_env"):
            value = "***"
        out[name] = value
    env_name = settings.get("api_key_env")
    if env_name:
        out["api_key"] = "<set>" if os.environ.get(env_name) else "<unset>"
    return out


def _announce(args, settings: dict) -> None:
    print(json.dumps({"reposearch": __version__, "command": args.command, **redacted(settings)}, sort_keys=True),
          file=sys.stderr)


def make_backend(settings: dict, script: str | None, id_to_text: dict | None = None):
    if settings["backend"] == "scripted":
        if not script:
            raise InputError("--backend scripted needs --script FILE")
        try:
            turns = json.loads(Path(script).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read script {script}: {exc}") from exc
        if isinstance(turns, dict) and id_to_text:
            turns = {id_to_text.get(k, k): v for k, v in turns.items()}
        return ScriptedBackend(turns)
    if settings["backend"] == "http":
        return ChatCompletionsBackend(
            settings["base_url"],
            settings["model"],
            temperature=settings["temperature"],
            api_key_env=settings["api_key_env"],
            max_attempts=settings["max_attempts"],
        )
    raise InputError(f"unknown backend {settings['backend']!r}")


def _budget(settings: dict) -> EpisodeBudget:
    return EpisodeBudget(max_turns=settings["max_turns"], max_observation_lines=settings["max_observation_lines"])


def _load_index(path: str) -> RepoIndex:
    try:
        return load_index(path)
    except OSError as exc:
        raise InputError(f"cannot read index {path}: {exc}") from exc


# --------------------------------------------------------------------------
# commands


def cmd_index(args, settings) -> int:
    config = IndexConfig(include=tuple(args.include or ("*.py",)), revision_tag=args.revision_tag)
    index = build_index(args.repo, config)
    try:
        persist_index(index, args.out)
    except OSError as exc:
        raise InputError(f"cannot write index cache {args.out}: {exc}") from exc
    broken = sum(f.has_parse_error for f in index.files)
    print(f"{len(index.files)} files, {index.entity_count} entities")
    if broken:
        print(f"{broken} file(s) failed to parse", file=sys.stderr)
    return 0


def cmd_localize(args, settings) -> int:
    index = _load_index(args.index)
    try:
        issue = Path(args.issue).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read issue {args.issue}: {exc}") from exc
    backend = make_backend(settings, args.script)
    traj = run_episode(
        issue,
        index,
        backend,
        _budget(settings),
        query_id=args.query_id or Path(args.issue).stem,
        seed=settings["seed"],
        structure_depth=settings["structure_depth"],
    )
    if args.out:
        write_trajectories(args.out, [traj])
    if args.predictions_out:
        write_jsonl(args.predictions_out, [_prediction(traj).to_dict()])
    if traj.final_answer:
        for fn in traj.final_answer.function_strings:
            print(fn)
    print(f"termination: {traj.termination}; steps: {len(traj.steps)}", file=sys.stderr)
    return 0


def _prediction(traj: Trajectory) -> Prediction:
    answer = traj.final_answer
    if answer is None:
        return Prediction(traj.query_id)
    return Prediction(traj.query_id, tuple(answer.ranked_files), tuple(answer.function_strings))


def _read_examples(path: str) -> list[dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read examples {path}: {exc}") from exc
    for row in rows:
        if "query_id" not in row or "query" not in row:
            raise InputError(f"{path}: every example needs query_id and query")
    return rows


def cmd_sample(args, settings) -> int:
    examples = _read_examples(args.examples)
    if args.index:
        provider = _load_index(args.index)
    elif args.index_dir:
        cache = {}

        def provider(example):
            key = example.get("provenance", {}).get("pre_revision") or example["query_id"]
            candidates = [Path(args.index_dir) / f"{key}.json", Path(args.index_dir) / f"{example['query_id']}.json"]
            for cand in candidates:
                if cand.exists():
                    if cand not in cache:
                        cache[cand] = load_index(cand)
                    return cache[cand]
            raise CacheCorrupt(f"no index for {example['query_id']} in {args.index_dir}")
    else:
        raise InputError("sample needs --index or --index-dir")
    backend = make_backend(settings, args.script, {e["query_id"]: e["query"] for e in examples})
    result = batch_run(
        examples,
        provider,
        backend,
        _budget(settings),
        parallelism=settings["parallelism"],
        seed=settings["seed"],
        structure_depth=settings["structure_depth"],
    )
    n = write_trajectories(args.out, result.trajectories)
    if args.predictions_out:
        write_jsonl(args.predictions_out, [_prediction(t).to_dict() for t in result.trajectories])
    print(f"{n} trajectories written, {len(result.failures)} failed")
    for f in result.failures:
        print(f"failed: {f.query_id}: {f.error}", file=sys.stderr)
    return 1 if result.failures else 0


def _read_trajs(path: str) -> list[Trajectory]:
    try:
        return read_trajectories(path)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise InputError(f"cannot read trajectories {path}: {exc}") from exc


def _read_truths(path: str):
    try:
        return load_truths(path)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read ground truth {path}: {exc}") from exc


def cmd_reward(args, settings) -> int:
    trajs = _read_trajs(args.trajectories)
    truths = {t.query_id: t for t in _read_truths(args.truths)}
    missing = {t.query_id for t in trajs} - set(truths)
    if missing:
        raise UnmatchedQuery(missing)
    rewards = [trajectory_reward(t, truths[t.query_id], settings["k"], settings["level"]) for t in trajs]
    write_trajectories(args.out, trajs)
    mean = sum(rewards) / len(rewards) if rewards else 0.0
    print(f"{len(rewards)} trajectories, mean nDCG@{settings['k']} reward {mean:.5f}")
    return 0


def cmd_filter(args, settings) -> int:
    from .dataset import RejectionPolicy, export_sft, rejection_filter

    trajs = _read_trajs(args.trajectories)
    truths = _read_truths(args.truths)
    try:
        policy = RejectionPolicy(settings["policy"], settings["k"], settings["threshold"], settings["level"])
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    result = rejection_filter(trajs, truths, policy)
    write_trajectories(args.out, result.kept)
    if args.audit:
        write_jsonl(args.audit, [{"header": result.header}] + result.verdicts)
    if args.sft:
        n = export_sft(result.kept, args.sft)
        print(f"SFT lines: {n}", file=sys.stderr)
    print(f"kept {len(result.kept)} of {len(trajs)} ({json.dumps(result.header, sort_keys=True)})")
    return 0


def _read_predictions(path: str) -> list[Prediction]:
    try:
        with open(path, encoding="utf-8") as fh:
            first = next((line for line in fh if line.strip()), "")
        if first and "messages" in json.loads(first):
            return [_prediction(t) for t in read_trajectories(path)]
        return load_predictions(path)
    except (DuplicateItems, MalformedIdentifier) as exc:
        raise InputError(str(exc)) from exc
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot read predictions {path}: {exc}") from exc


def cmd_evaluate(args, settings) -> int:
    predictions = _read_predictions(args.predictions)
    truths = _read_truths(args.truths)
    levels = ["file", "function"] if settings["level"] == "both" else [settings["level"]]
    reports = [evaluate(predictions, truths, level, settings["k"]) for level in levels]
    for report in reports:
        print(report.to_table())
    if args.json:
        doc = reports[0].to_dict() if len(reports) == 1 else {r.level: r.to_dict() for r in reports}
        Path(args.json).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
    return 0


def cmd_build_dataset(args, settings) -> int:
    from .dataset import (
        GitIndexProvider,
        IssueFilterConfig,
        RepoFilterConfig,
        RepoMeta,
        SourceMatcher,
        build_examples,
        export_rl,
        write_examples,
    )
    from .ingest import load_pairs

    pairs = load_pairs(args.pairs)
    excluded = frozenset()
    if args.exclude_list:
        try:
            lines = Path(args.exclude_list).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise InputError(f"cannot read exclusion list: {exc}") from exc
        excluded = frozenset(line.strip() for line in lines if line.strip() and not line.startswith("#"))
    repo_meta = None
    if args.repo_meta:
        try:
            with open(args.repo_meta, encoding="utf-8") as fh:
                metas = [RepoMeta(**json.loads(line)) for line in fh if line.strip()]
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise InputError(f"cannot read repo metadata: {exc}") from exc
        repo_meta = {m.name: m for m in metas}
    repo_config = RepoFilterConfig(excluded=excluded)
    if args.license:
        repo_config = RepoFilterConfig(licenses=frozenset(args.license), excluded=excluded)
    matcher = SourceMatcher(patterns=tuple(args.source_glob or ("*.py",)), exclude_tests=not args.include_tests)
    result = build_examples(
        pairs,
        GitIndexProvider(args.git_repo),
        repo_meta=repo_meta,
        repo_config=repo_config,
        issue_config=IssueFilterConfig(min_chars=settings["min_issue_chars"], excluded=excluded),
        source_matcher=matcher,
    )
    n = write_examples(args.out, result.examples)
    if args.audit:
        write_jsonl(args.audit, result.audit)
    if args.rl:
        export_rl(result.examples, args.rl)
    print(f"{n} examples from {len(pairs)} pairs, {len(result.audit)} dropped")
    return 0


def cmd_ingest(args, settings) -> int:
    from .ingest import GitHubSource, ingest_issue_pr_pairs, pair_to_row

    if args.github:
        source = GitHubSource(
            args.github,
            cache_dir=args.cache_dir,
            api_url=args.api_url,
            max_pages=args.max_pages,
            offline=args.offline,
        )
    elif args.local:
        source = args.local
    else:
        raise InputError("ingest needs --local FILE or --github OWNER/REPO")
    pairs = ingest_issue_pr_pairs(source)
    n = write_jsonl(args.out, (pair_to_row(i, p) for i, p in pairs))
    print(f"{n} pairs")
    return 0


# --------------------------------------------------------------------------
# parser


def _backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=["scripted", "http"])
    p.add_argument("--base-url", dest="base_url")
    p.add_argument("--model")
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-attempts", dest="max_attempts", type=int)
    p.add_argument("--max-turns", dest="max_turns", type=int)
    p.add_argument("--max-observation-lines", dest="max_observation_lines", type=int)
    p.add_argument("--structure-depth", dest="structure_depth", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--script", help="JSON list of canned turns for the scripted backend")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reposearch", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="JSON file with shared settings")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build and persist a repository index")
    p.add_argument("repo")
    p.add_argument("--out", required=True)
    p.add_argument("--include", action="append", help="file glob (repeatable, default *.py)")
    p.add_argument("--revision-tag", dest="revision_tag")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("localize", help="run one episode on an issue")
    p.add_argument("--issue", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--query-id", dest="query_id")
    p.add_argument("--out", help="trajectory JSONL")
    p.add_argument("--predictions-out", dest="predictions_out")
    _backend_flags(p)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("sample", help="run episodes over an examples file")
    p.add_argument("--examples", required=True)
    p.add_argument("--index")
    p.add_argument("--index-dir", dest="index_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--predictions-out", dest="predictions_out")
    p.add_argument("--parallelism", type=int)
    _backend_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("reward", help="score trajectories with nDCG@k")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--truths", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--level", choices=["file", "function"])
    p.set_defaults(func=cmd_reward)

    p = sub.add_parser("filter", help="rejection-sample trajectories")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--truths", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--audit")
    p.add_argument("--sft")
    p.add_argument("--policy", choices=["any_hit", "top_k", "reward"])
    p.add_argument("--k", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--level", choices=["file", "function"])
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("evaluate", help="Recall@k, MAP, MRR and nDCG@k")
    p.add_argument("--predictions", required=True)
    p.add_argument("--truths", required=True)
    p.add_argument("--level", choices=["file", "function", "both"])
    p.add_argument("--k", type=int)
    p.add_argument("--json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("build-dataset", help="examples from issue/PR pairs")
    p.add_argument("--pairs", required=True)
    p.add_argument("--git-repo", dest="git_repo", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--audit")
    p.add_argument("--rl")
    p.add_argument("--repo-meta", dest="repo_meta")
    p.add_argument("--license", action="append", help="allowed license id (repeatable)")
    p.add_argument("--min-issue-chars", dest="min_issue_chars", type=int)
    p.add_argument("--source-glob", dest="source_glob", action="append")
    p.add_argument("--include-tests", dest="include_tests", action="store_true")
    p.add_argument("--exclude-list", dest="exclude_list")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("ingest", help="collect issue/PR pairs")
    p.add_argument("--local")
    p.add_argument("--github")
    p.add_argument("--api-url", dest="api_url", default="https://api.github.com")
    p.add_argument("--cache-dir", dest="cache_dir", default=".reposearch-cache")
    p.add_argument("--max-pages", dest="max_pages", type=int)
    p.add_argument("--offline", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        settings = resolve_settings(args)
        _announce(args, settings)
        return args.func(args, settings)
    except UnmatchedQuery as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InputError, RootNotFound, EmptyRepository, CacheCorrupt, BackendUnavailable, SourceUnavailable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RepoSearchError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
