"""End-to-end run over the bundled fixture repository with a scripted backend.

Indexes the repo, samples one episode per query, scores rewards, applies the
rejection filter and evaluates the answers. Everything lands in --out.

    python scripts/run_fixture_pipeline.py --out runs/fixture --parallelism 4
"""

import argparse
import json
from pathlib import Path

from reposearch.agent_loop import EpisodeBudget, batch_run, write_trajectories
from reposearch.backends import ScriptedBackend
from reposearch.dataset import RejectionPolicy, export_sft, rejection_filter
from reposearch.metrics import GroundTruth, Prediction, evaluate, trajectory_reward, write_jsonl
from reposearch.repo_index import build_index, persist_index

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"

# (issue text, ground truth, ranked answer the scripted model gives)
QUERIES = {
    "checkout-budget": (
        "checkout() raises CheckoutError even when the cart total with tax is under the budget.",
        ["shop/services/checkout.py::checkout"],
        ["shop/services/checkout.py::checkout", "shop/pricing.py::with_tax"],
    ),
    "tax-rounding": (
        "round_price truncates instead of rounding, so 0.125 becomes 0.12 after tax.",
        ["shop/pricing.py::round_price"],
        ["shop/pricing.py::with_tax", "shop/pricing.py::round_price"],
    ),
    "gateway-retry": (
        "Gateway.charge never retries although Gateway.retries is set to 3.",
        ["shop/services/payments.py::Gateway.charge"],
        ["shop/services/payments.py::FakeGateway._post"],
    ),
    "slug-spaces": (
        "slugify keeps leading spaces because the later definition shadows the real one.",
        ["shop/utils/strings.py::slugify"],
        ["shop/utils/strings.py::slugify"],
    ),
}


def script_for(answer: list[str]) -> list[str]:
    first_file = answer[0].split("::")[0]

    def block(obj):
        return "```json\n" + json.dumps(obj) + "\n```"

    return [
        "Start with the layout.\n" + block({"tool": "GetRepoStructure", "args": {}}),
        f"Check what {first_file} imports.\n" + block({"tool": "GetImportOfFile", "args": {"file": first_file}}),
        "Enough context.\n" + block({"tool": "Exit", "args": {}}),
        block({"functions": answer}),
    ]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--repo", default=str(FIXTURES / "shop_repo"))
    parser.add_argument("--out", default="runs/fixture")
    parser.add_argument("--parallelism", type=int, default=1)
    parser.add_argument("--policy", default="any_hit", choices=["any_hit", "top_k", "reward"])
    args = parser.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = build_index(args.repo)
    persist_index(index, out / "index.json")

    examples = [{"query_id": qid, "query": text} for qid, (text, _, _) in QUERIES.items()]
    truths = [GroundTruth.build(qid, truth) for qid, (_, truth, _) in QUERIES.items()]
    backend = ScriptedBackend({text: script_for(ans) for text, _, ans in QUERIES.values()})

    result = batch_run(examples, index, backend, EpisodeBudget(max_turns=10), parallelism=args.parallelism, seed=0)
    by_id = {t.query_id: t for t in truths}
    for traj in result.trajectories:
        trajectory_reward(traj, by_id[traj.query_id])
    write_trajectories(out / "trajectories.jsonl", result.trajectories)

    filtered = rejection_filter(result.trajectories, truths, RejectionPolicy(args.policy))
    n_sft = export_sft(filtered.kept, out / "sft.jsonl")

    preds = [Prediction(t.query_id, tuple(t.final_answer.ranked_files), tuple(t.final_answer.function_strings))
             for t in result.trajectories]
    write_jsonl(out / "predictions.jsonl", [p.to_dict() for p in preds])
    for level in ("file", "function"):
        report = evaluate(preds, truths, level)
        (out / f"report_{level}.json").write_text(report.to_json())
        print(report.to_table())

    print(f"{index.entity_count} entities indexed; {len(result.trajectories)} episodes, "
          f"{len(result.failures)} failed; kept {len(filtered.kept)} ({n_sft} SFT lines) -> {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
