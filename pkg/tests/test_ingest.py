from __future__ import annotations

import shutil

import numpy as np
import pytest

from jndscope.core import CodecSpec, build_ladder, rung_filename
from jndscope.gev import GEVParams, gev_sample
from jndscope.ingest import (
    INDEX_FILE,
    DatasetIndex,
    DatasetLayout,
    DatasetRecord,
    LayoutError,
    Texture,
    generate_synthetic,
    load_dataset,
    materialize_ladder,
    oracle_target,
    prepare_ladders,
    resolve_targets,
    rung_psnrs,
)

SMALL_CODEC = CodecSpec(level_range=(1, 5))


def _write_mcl(root, noise_image, ids=("a", "b"), skip_level=None):
    (root / "references").mkdir(parents=True)
    rows = ["image_id,samples,jnd"]
    for seed, image_id in enumerate(ids):
        image = noise_image(16, 16, seed=seed)
        image.write_png(root / "references" / f"{image_id}.png")
        ladder = build_ladder(image, SMALL_CODEC)
        distorted = root / "distorted" / image_id
        distorted.mkdir(parents=True)
        for level, rung in ladder:
            if level != skip_level:
                rung.write_png(distorted / f"{image_id}_{level}.png")
        rows.append(f"{image_id},2;3 3,")
    (root / "jnd.csv").write_text("\n".join(rows) + "\n")


def _write_konjnd(root, noise_image, codecs=("JPEG", "JPEG")):
    (root / "images").mkdir(parents=True)
    rows = ["image_id,codec,samples,jnd"]
    for seed, codec in enumerate(codecs):
        image_id = f"k{seed}"
        noise_image(16, 16, seed=seed).write_png(root / "images" / f"{image_id}.png")
        rows.append(f"{image_id},{codec},,{seed + 2}")
    (root / "annotations.csv").write_text("\n".join(rows) + "\n")


class TestSynthetic:
    def test_records_follow_texture_cycle(self, synthetic_index):
        assert synthetic_index.ids == ["syn0000", "syn0001", "syn0002", "syn0003"]
        assert [r.texture for r in synthetic_index.records] == [
            Texture.GRADIENT,
            Texture.TEXTURE,
            Texture.TEXT,
            Texture.FLAT,
        ]
        assert (synthetic_index.root / INDEX_FILE).is_file()

    def test_targets_match_psnr_oracle(self, synthetic_index):
        for record in synthetic_index.records:
            ladder = materialize_ladder(synthetic_index, record)
            assert oracle_target(ladder, record.oracle_threshold_db) == record.jnd_target
            psnrs = rung_psnrs(ladder)
            assert psnrs[record.jnd_target] > record.oracle_threshold_db

    def test_deterministic_for_a_seed(self, tmp_path):
        a = generate_synthetic(3, 2, 32, tmp_path / "a")
        b = generate_synthetic(3, 2, 32, tmp_path / "b", workers=2)
        assert a.records == b.records
        for image_id in a.ids:
            assert (tmp_path / "a" / image_id / "ladder.json").read_bytes() == (
                tmp_path / "b" / image_id / "ladder.json"
            ).read_bytes()

    @pytest.mark.parametrize(("count", "size"), [(0, 64), (2, 16)])
    def test_rejects_bad_arguments(self, tmp_path, count, size):
        with pytest.raises(ValueError):
            generate_synthetic(0, count, size, tmp_path)


class TestIndex:
    def test_save_and_load(self, tmp_path):
        index = DatasetIndex(records=[DatasetRecord(image_id="x", jnd_samples=[3, 4])])
        index.with_root(tmp_path).save()
        loaded = DatasetIndex.load(tmp_path)
        assert loaded.records == index.records
        assert loaded.root == tmp_path

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            DatasetIndex(
                records=[
                    DatasetRecord(image_id="x", jnd_target=1),
                    DatasetRecord(image_id="x", jnd_target=2),
                ]
            )

    def test_record_needs_annotation(self):
        with pytest.raises(ValueError):
            DatasetRecord(image_id="x")
        with pytest.raises(ValueError):
            DatasetRecord(image_id="x", jnd_target=101)

    def test_subset_and_get(self, synthetic_index):
        subset = synthetic_index.subset(["syn0002", "syn0000"])
        assert subset.ids == ["syn0000", "syn0002"]
        assert subset.root == synthetic_index.root
        with pytest.raises(KeyError):
            subset.get("syn0001")

    def test_missing_index_file(self, tmp_path):
        with pytest.raises(LayoutError) as excinfo:
            DatasetIndex.load(tmp_path)
        assert excinfo.value.paths == [str(tmp_path / INDEX_FILE)]


class TestLoadDataset:
    def test_ladder_dir(self, synthetic_index):
        index = load_dataset(synthetic_index.root, "LADDER_DIR")
        assert index.ids == synthetic_index.ids
        assert [r.jnd_target for r in index.records] == [
            r.jnd_target for r in synthetic_index.records
        ]

    def test_ladder_dir_reports_tampered_ladder(self, synthetic_index, tmp_path):
        root = tmp_path / "copy"
        shutil.copytree(synthetic_index.root, root)
        (root / "syn0001" / rung_filename(50)).unlink()
        with pytest.raises(LayoutError) as excinfo:
            load_dataset(root, DatasetLayout.LADDER_DIR)
        assert len(excinfo.value.paths) == 1
        assert "syn0001" in excinfo.value.paths[0]

    def test_mcl_jci(self, tmp_path, noise_image):
        _write_mcl(tmp_path, noise_image)
        index = load_dataset(tmp_path, "MCL_JCI", codec=SMALL_CODEC)
        assert index.ids == ["a", "b"]
        assert index.records[0].jnd_samples == [2, 3, 3]
        ladder = materialize_ladder(index, index.records[1])
        assert [level for level, _ in ladder] == [1, 2, 3, 4, 5]

    def test_mcl_jci_lists_missing_levels(self, tmp_path, noise_image):
        _write_mcl(tmp_path, noise_image, skip_level=4)
        with pytest.raises(LayoutError) as excinfo:
            load_dataset(tmp_path, "MCL_JCI", codec=SMALL_CODEC)
        assert len(excinfo.value.paths) == 2
        assert all(path.endswith("*_4") for path in excinfo.value.paths)

    def test_konjnd(self, tmp_path, noise_image):
        _write_konjnd(tmp_path, noise_image)
        index = load_dataset(tmp_path, "KONJND_1K", codec=SMALL_CODEC)
        assert [r.jnd_target for r in index.records] == [2, 3]
        assert len(materialize_ladder(index, index.records[0])) == 5

    def test_konjnd_rejects_codecs_without_adapter(self, tmp_path, noise_image):
        _write_konjnd(tmp_path, noise_image, codecs=("JPEG", "BPG"))
        with pytest.raises(LayoutError) as excinfo:
            load_dataset(tmp_path, "KONJND_1K", codec=SMALL_CODEC)
        assert excinfo.value.paths == [f"{tmp_path / 'images' / 'k1.png'} (codec BPG has no shipped adapter)"]

    def test_missing_root(self, tmp_path):
        with pytest.raises(LayoutError):
            load_dataset(tmp_path / "absent", "MCL_JCI")


class TestTargets:
    def test_resolve_targets(self):
        samples = np.rint(gev_sample(GEVParams(50.0, 8.0, 0.1), 300, seed=0)).astype(int)
        index = DatasetIndex(
            records=[
                DatasetRecord(image_id="fit", jnd_samples=np.clip(samples, 1, 100).tolist()),
                DatasetRecord(image_id="flat", jnd_samples=[7] * 6),
                DatasetRecord(image_id="given", jnd_target=12, jnd_samples=[1, 2]),
            ]
        )
        resolved, rows = resolve_targets(index)
        assert [row["image_id"] for row in rows] == ["fit", "flat"]
        assert 45 <= resolved.get("fit").jnd_target <= 60
        assert "mu" in rows[0] and "mu" not in rows[1]
        assert resolved.get("flat").jnd_target == 7
        assert resolved.get("given").jnd_target == 12

    def test_prepare_ladders(self, tmp_path, noise_image):
        _write_konjnd(tmp_path / "raw", noise_image)
        index = load_dataset(tmp_path / "raw", "KONJND_1K", codec=SMALL_CODEC)
        events = []
        prepared = prepare_ladders(
            index,
            tmp_path / "ladders",
            workers=2,
            progress_callback=lambda stage, position, total, image_id: events.append(
                (stage, image_id)
            ),
        )
        assert prepared.layout is DatasetLayout.LADDER_DIR
        assert sorted(events) == [("end", "k0"), ("end", "k1"), ("start", "k0"), ("start", "k1")]
        reloaded = load_dataset(tmp_path / "ladders", "LADDER_DIR")
        assert [r.jnd_target for r in reloaded.records] == [2, 3]
        assert DatasetIndex.load(tmp_path / "ladders").ids == ["k0", "k1"]
