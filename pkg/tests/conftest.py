import json
import sys
from pathlib import Path

import pytest

from reposearch.repo_index import build_index

FIXTURES = Path(__file__).parent / "fixtures"
# the fixture repositories carry their own test files
collect_ignore_glob = ["fixtures/*"]
sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def tiny_index():
    return build_index(FIXTURES / "tiny_repo")


@pytest.fixture(scope="session")
def shop_index():
    return build_index(FIXTURES / "shop_repo")


@pytest.fixture(scope="session")
def shop_manifest() -> dict:
    return json.loads((FIXTURES / "shop_manifest.json").read_text(encoding="utf-8"))


def pytest_terminal_summary(terminalreporter):
    results = sys.modules.get("test_acceptance")
    lines = getattr(results, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
