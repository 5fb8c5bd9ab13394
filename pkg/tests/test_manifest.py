from __future__ import annotations

import json

from jndscope import __version__
from jndscope.core import sha256_file
from jndscope.manifest import MANIFEST_FILE, hash_inputs, package_versions, write_manifest


def test_package_versions_include_self():
    versions = package_versions()
    assert versions["jndscope"] == __version__
    assert "torch" in versions


def test_hash_inputs_walks_directories(tmp_path):
    (tmp_path / "data" / "nested").mkdir(parents=True)
    (tmp_path / "data" / "a.txt").write_text("a")
    (tmp_path / "data" / "nested" / "b.txt").write_text("b")
    hashes = hash_inputs([tmp_path / "data"], base=tmp_path)
    assert list(hashes) == ["data/a.txt", "data/nested/b.txt"]
    assert hashes["data/a.txt"] == sha256_file(tmp_path / "data" / "a.txt")


def test_rerun_rewrites_identical_bytes(tmp_path):
    (tmp_path / "index.json").write_text("{}")
    kwargs = dict(config={"lr": 1e-4}, seeds={"train": 0}, inputs=[tmp_path / "index.json"])
    path = write_manifest(tmp_path, "train", **kwargs)
    first = path.read_bytes()
    write_manifest(tmp_path, "train", **kwargs)
    assert path.read_bytes() == first


def test_commands_are_merged(tmp_path):
    write_manifest(tmp_path, "prepare", config={"seed": 1}, seeds={"synthetic": 1})
    write_manifest(tmp_path, "evaluate", config={}, seeds={})
    manifest = json.loads((tmp_path / MANIFEST_FILE).read_text())
    assert sorted(manifest["commands"]) == ["evaluate", "prepare"]
    assert manifest["commands"]["prepare"]["seeds"] == {"synthetic": 1}
    assert manifest["versions"]["jndscope"] == __version__
