import json
from pathlib import Path

FIXTURES = Path(__file__).parent / "fixtures"


def call(tool, thought="", **args):
    return f"{thought}\n```json\n{json.dumps({'tool': tool, 'args': args})}\n```"


def answer(functions, files=None, thought=""):
    body = {"functions": functions}
    if files is not None:
        body["files"] = files
    return f"{thought}\n```json\n{json.dumps(body)}\n```"


def transcripts() -> dict:
    return json.loads((FIXTURES / "transcripts.json").read_text(encoding="utf-8"))
