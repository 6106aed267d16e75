import json
from pathlib import Path

import numpy as np
import pytest

from hiddenemo import formats
from hiddenemo.datamodel import (
    DatasetManifest,
    IngestionError,
    Label,
    SampleRecord,
    ValidationError,
    load_manifest,
    split_train_val,
    write_manifest,
)


def _write_sample(root: Path, sid: str, frames: int = 30, label="win"):
    formats.write_keypoints(root / f"{sid}.kp", np.full((frames, 137, 2), 0.5, dtype=np.float32))
    formats.write_visual(root / f"{sid}.npy", np.zeros((frames, 4), dtype=np.float32))
    (root / f"{sid}.txt").write_text("hello there\n")
    return {"sample_id": sid, "keypoint_path": f"{sid}.kp", "visual_path": f"{sid}.npy",
            "text_path": f"{sid}.txt", "label": label, "label_source": "gold", "frame_count": frames}


def _manifest_file(root: Path, rows) -> Path:
    p = root / "manifest.jsonl"
    p.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return p


def _records(n_win, n_loss):
    recs = []
    for i in range(n_win + n_loss):
        lab = Label.WIN if i < n_win else Label.LOSS
        recs.append(SampleRecord(f"s{i:03d}", Path("k"), Path("v"), Path("t"), lab, "gold", 10))
    return DatasetManifest(recs, "train")


def test_label_indices():
    assert Label.LOSS.index == 0 and Label.WIN.index == 1
    assert Label.from_index(1) is Label.WIN
    assert Label.WIN.flipped() is Label.LOSS


def test_load_two_records(tmp_path):
    rows = [_write_sample(tmp_path, "a"), _write_sample(tmp_path, "b", label="loss")]
    m = load_manifest(_manifest_file(tmp_path, rows))
    assert m.ids == ["a", "b"]
    assert m.by_id("b").label is Label.LOSS
    assert m.class_prior == 0.5


def test_missing_keypoint_file_names_sample(tmp_path):
    rows = [_write_sample(tmp_path, "a"), _write_sample(tmp_path, "b")]
    (tmp_path / "b.kp").unlink()
    with pytest.raises(IngestionError, match="'b'"):
        load_manifest(_manifest_file(tmp_path, rows))


def test_duplicate_id_rejected(tmp_path):
    row = _write_sample(tmp_path, "a")
    with pytest.raises(ValidationError, match="duplicate"):
        load_manifest(_manifest_file(tmp_path, [row, row]))


def test_frame_count_mismatch_is_ingestion_error(tmp_path):
    row = _write_sample(tmp_path, "a", frames=30)
    row["frame_count"] = 31
    with pytest.raises(IngestionError, match="frame_count"):
        load_manifest(_manifest_file(tmp_path, [row]))


def test_class_prior_thirty_of_forty():
    assert _records(30, 10).class_prior == pytest.approx(0.75, abs=1e-9)


def test_pseudo_without_label_rejected():
    with pytest.raises(ValidationError):
        SampleRecord("x", Path("k"), Path("v"), Path("t"), None, "pseudo", 5)


def test_round_trip(tmp_path):
    rows = [_write_sample(tmp_path, f"s{i}", label=("win", "loss", "none")[i % 3]) for i in range(5)]
    m = load_manifest(_manifest_file(tmp_path, rows), split="test")
    out = tmp_path / "sub" / "again.jsonl"
    write_manifest(m, out)
    m2 = load_manifest(out)
    assert m2.split == "test"
    assert [r.sample_id for r in m2] == m.ids
    for a, b in zip(m.records, m2.records):
        assert a.label == b.label and a.frame_count == b.frame_count
        assert Path(a.keypoint_path).resolve() == Path(b.keypoint_path).resolve()


def test_loading_is_read_only(tmp_path):
    rows = [_write_sample(tmp_path, "a")]
    before = {p.name: (p.stat().st_mtime_ns, p.read_bytes()) for p in tmp_path.iterdir()}
    load_manifest(_manifest_file(tmp_path, rows))
    after = {p.name: (p.stat().st_mtime_ns, p.read_bytes()) for p in tmp_path.iterdir() if p.name in before}
    assert before == after


def test_split_forty_records():
    # 30 win / 10 loss at f=0.2: val 8 = 6 win + 2 loss, train 24 win + 8 loss
    train, val = split_train_val(_records(30, 10), 0.2, 7)
    assert len(train) == 32 and len(val) == 8
    count = lambda m, lab: sum(r.label is lab for r in m.records)
    assert (count(train, Label.WIN), count(train, Label.LOSS)) == (24, 8)
    assert (count(val, Label.WIN), count(val, Label.LOSS)) == (6, 2)
    assert set(train.ids).isdisjoint(val.ids)
    assert sorted(train.ids + val.ids) == sorted(_records(30, 10).ids)


def test_split_smallest_case():
    train, val = split_train_val(_records(1, 1), 0.5, 0)
    assert len(train) == 1 and len(val) == 1
    assert train.records[0].label != val.records[0].label


def test_split_deterministic_and_seed_sensitive():
    m = _records(30, 10)
    a = split_train_val(m, 0.25, 3)[1].ids
    assert a == split_train_val(m, 0.25, 3)[1].ids
    assert any(split_train_val(m, 0.25, s)[1].ids != a for s in range(4, 10))


@pytest.mark.parametrize("n_win,n_loss,f", [(30, 10, 0.15), (7, 3, 0.3), (50, 17, 0.25), (9, 2, 0.5)])
def test_split_preserves_ratio_within_one(n_win, n_loss, f):
    train, val = split_train_val(_records(n_win, n_loss), f, 1)
    for lab, n in ((Label.WIN, n_win), (Label.LOSS, n_loss)):
        k = sum(r.label is lab for r in val.records)
        assert abs(k - n * f) <= 1


def test_split_errors():
    with pytest.raises(ValidationError):
        split_train_val(_records(3, 1), 0.0, 0)
    with pytest.raises(ValidationError):
        split_train_val(_records(1, 0), 0.5, 0)
