import json
import os
import time

import pytest

from reposearch.errors import (
    CacheCorrupt,
    EmptyRepository,
    EntityNotFound,
    FileNotInIndex,
    InvalidQualifiedName,
    RootNotFound,
)
from reposearch.repo_index import (
    IndexConfig,
    RepoIndex,
    build_index,
    index_from_sources,
    load_index,
    persist_index,
    split_lines,
)


def _entities(index, path):
    return sorted([e.kind, e.qualified_name, e.start_line, e.end_line] for e in index.entities(path))


def _file_lines(root, path):
    # independent of the indexer's splitter
    with open(os.path.join(root, path), "rb") as fh:
        return fh.read().decode("utf-8").splitlines(keepends=True)


def test_tiny_counts(tiny_index):
    assert sorted(tiny_index.paths) == ["a.py", "pkg/b.py"]
    assert sorted(e.identifier for e in tiny_index.entities()) == ["a.py::f", "pkg/b.py::C", "pkg/b.py::C.m"]


def test_tiny_imports(tiny_index):
    recs = tiny_index.imports_of("a.py")
    assert [r.raw_text for r in recs] == ["import os", "from x.y import z"]
    assert recs[1].source_module == "x.y"
    assert recs[1].imported_symbols == ("z",)
    assert tiny_index.imports_of("pkg/b.py") == []


def test_manifest_files(shop_index, shop_manifest):
    assert sorted(shop_index.paths) == sorted(shop_manifest["files"])
    for path in shop_manifest["excluded"]:
        assert not shop_index.has_file(path)


def test_manifest_entities_and_spans(shop_index, shop_manifest):
    for path, entry in shop_manifest["files"].items():
        assert _entities(shop_index, path) == sorted(entry["entities"]), path
        rec = shop_index.file(path)
        assert rec.line_count == entry["line_count"], path
        assert rec.has_parse_error == entry["parse_error"], path
        assert [[i.line, i.raw_text] for i in rec.imports] == entry["imports"], path
    expected_count = sum(len(s["entities"]) for s in shop_manifest["files"].values())
    assert shop_index.entity_count == expected_count


def test_manifest_source_text(shop_index, shop_manifest, fixtures_dir):
    root = fixtures_dir / "shop_repo"
    for path, entry in shop_manifest["files"].items():
        lines = _file_lines(root, path)
        for kind, name, start, end in entry["entities"]:
            entity = shop_index.get(path, name)
            assert entity.source_text == "".join(lines[start - 1 : end]), f"{path}::{name}"


def test_manifest_shadows(shop_index, shop_manifest):
    for path, entry in shop_manifest["files"].items():
        for name, start, end in entry.get("shadows", []):
            assert (start, end) in shop_index.shadow_spans[(path, name)]
            assert name in shop_index.file(path).duplicate_names


def test_decorated_span_starts_at_decorator(shop_index):
    rate = shop_index.get("shop/services/shipping.py", "rate")
    assert rate.source_text.startswith("@memo\n@functools.lru_cache")


def test_parse_error_file_is_kept(shop_index):
    rec = shop_index.file("shop/broken.py")
    assert rec.parse_error
    assert shop_index.entities("shop/broken.py") == ()


def test_split_lines_matches_python_on_mixed_endings():
    text = "a\r\nb\rc\nd"
    assert split_lines(text) == ["a\r\n", "b\r", "c\n", "d"]
    assert split_lines("") == []


def test_render_structure(tiny_index, shop_index):
    assert tiny_index.render_structure() == "a.py\npkg/\n    b.py"
    collapsed = shop_index.render_structure(max_depth=2)
    assert "    db/ ... (3 files)" in collapsed.splitlines()
    assert "shop/" in collapsed.splitlines()
    with pytest.raises(ValueError):
        shop_index.render_structure(0)


def test_resolve_entity(tiny_index):
    assert tiny_index.resolve_entity("pkg/b.py", "C.m").kind == "method"
    with pytest.raises(FileNotInIndex):
        tiny_index.resolve_entity("nope.py", "f")
    with pytest.raises(InvalidQualifiedName):
        tiny_index.resolve_entity("a.py", "a.b.c")
    with pytest.raises(EntityNotFound) as info:
        tiny_index.resolve_entity("pkg/b.py", "C.n")
    assert "C.m" in info.value.suggestions
    with pytest.raises(EntityNotFound) as info:
        tiny_index.resolve_entity("pkg/b.py", "C", kind="function")
    assert "C (class)" in info.value.suggestions


def test_suggest_other_file(shop_index):
    with pytest.raises(EntityNotFound) as info:
        shop_index.resolve_entity("shop/cli.py", "with_tax")
    assert "shop/pricing.py::with_tax" in info.value.suggestions


def test_entities_overlapping(tiny_index, shop_index):
    names = lambda ents: [e.qualified_name for e in ents]  # noqa: E731
    assert names(tiny_index.entities_overlapping("pkg/b.py", 7, 7)) == ["C.m"]
    # a class-level statement maps to the class
    assert names(tiny_index.entities_overlapping("pkg/b.py", 4, 4)) == ["C"]
    # blank line between definitions
    assert tiny_index.entities_overlapping("a.py", 7, 8) == []
    # nested function: both spans meet the line
    assert names(shop_index.entities_overlapping("shop/pricing.py", 15, 15)) == ["round_price", "_floor"]
    # the shadowed duplicate maps to the canonical entity
    assert names(shop_index.entities_overlapping("shop/utils/strings.py", 12, 12)) == ["slugify"]
    with pytest.raises(ValueError):
        tiny_index.entities_overlapping("a.py", 3, 2)


def test_persist_roundtrip(shop_index, tmp_path):
    path = tmp_path / "idx.json"
    persist_index(shop_index, path)
    loaded = load_index(path)
    assert loaded.to_payload() == shop_index.to_payload()
    assert loaded.render_structure() == shop_index.render_structure()
    for entity in shop_index.entities():
        assert loaded.resolve_entity(entity.relative_path, entity.qualified_name) == entity
    assert RepoIndex.load(path).revision_tag == shop_index.revision_tag


@pytest.mark.parametrize(
    "mutate",
    [
        lambda doc: "not json{",
        lambda doc: json.dumps({**doc, "format": "other"}),
        lambda doc: json.dumps({**doc, "format_version": 99}),
        lambda doc: json.dumps({**doc, "payload": {**doc["payload"], "root_label": "tampered"}}),
        lambda doc: json.dumps({k: v for k, v in doc.items() if k != "payload"}),
    ],
)
def test_corrupt_cache(tiny_index, tmp_path, mutate):
    path = tmp_path / "idx.json"
    persist_index(tiny_index, path)
    doc = json.loads(path.read_text())
    path.write_text(mutate(doc))
    with pytest.raises(CacheCorrupt):
        load_index(path)


def test_revision_tag_tracks_content(tmp_path):
    (tmp_path / "a.py").write_text("def f():\n    pass\n")
    first = build_index(tmp_path).revision_tag
    assert build_index(tmp_path).revision_tag == first
    (tmp_path / "a.py").write_text("def f():\n    return 1\n")
    assert build_index(tmp_path).revision_tag != first
    assert build_index(tmp_path, IndexConfig(revision_tag="v1")).revision_tag == "v1"


def test_missing_root_and_empty(tmp_path):
    with pytest.raises(RootNotFound):
        build_index(tmp_path / "nope")
    (tmp_path / "notes.txt").write_text("x")
    with pytest.raises(EmptyRepository):
        build_index(tmp_path)
    with pytest.raises(EmptyRepository):
        index_from_sources({})


def test_index_from_sources_matches_disk(fixtures_dir):
    root = fixtures_dir / "tiny_repo"
    sources = {p: (root / p).read_bytes() for p in ("a.py", "pkg/b.py")}
    mem = index_from_sources(sources, root_label="tiny_repo")
    disk = build_index(root)
    assert [e for e in mem.entities()] == [e for e in disk.entities()]


def test_bom_and_latin1(tmp_path):
    (tmp_path / "bom.py").write_bytes("\ufeffdef f():\n    pass\n".encode("utf-8"))
    (tmp_path / "bad.py").write_bytes(b"x = '\xff'\ndef g():\n    pass\n")
    index = build_index(tmp_path)
    assert index.get("bom.py", "f").start_line == 1
    assert index.file("bad.py").parse_error


def _make_repo(root, n_files):
    for i in range(n_files):
        d = root / f"pkg{i % 10}"
        d.mkdir(exist_ok=True)
        body = "\n\n".join(
            f"class K{j}:\n    def m{j}(self, x):\n        return x + {j}\n\n\ndef f{j}(y):\n    return y * {j}"
            for j in range(10)
        )
        (d / f"mod{i}.py").write_text(f"import os\nfrom typing import Any\n\n\n{body}\n")


def test_hundred_file_repo_is_fast(tmp_path):
    _make_repo(tmp_path, 100)
    started = time.perf_counter()
    index = build_index(tmp_path)
    assert time.perf_counter() - started < 5
    assert len(index.files) == 100
    assert index.entity_count == 100 * 30
