import numpy as np
import pytest

from hierpool.errors import DatasetError
from hierpool.synth import (Dataset, SynthConfig, class_names, generate, make_clip, read_dataset,
                            write_dataset)

SMALL = SynthConfig(n_clips=40, frames_per_clip=25, feature_dim=4, n_classes=3, min_duration=2,
                    max_duration=10, seed=3)


def test_default_split_sizes():
    assert SynthConfig().split_sizes() == (600, 100, 100)


def test_bag_rule_single_event():
    clip = make_clip("c", np.zeros((125, 4)), [(2, 10, 21)], 4)
    assert clip.weak_labels.tolist() == [0, 0, 1, 0]


def test_bag_rule_every_generated_clip():
    ds = generate(SMALL)
    for clip in ds.clips:
        present = {c for c, _, _ in clip.events}
        assert set(np.flatnonzero(clip.weak_labels)) == present


def test_event_features_carry_class_mean():
    cfg = SynthConfig(n_clips=200, noise=0.0, min_duration=10, max_duration=60, seed=1)
    ds = generate(cfg)
    for clip in ds.clips[:20]:
        covered = np.zeros(cfg.frames_per_clip, bool)
        for _, on, off in clip.events:
            covered[on:off] = True
        assert np.all(clip.features[~covered] == 0)
        assert np.all(np.linalg.norm(clip.features[covered], axis=1) > 0)


def test_zero_event_rate():
    ds = generate(SynthConfig(n_clips=16, event_rate=0.0, seed=1))
    assert all(c.weak_labels.sum() == 0 for c in ds.clips)
    assert ds.reference_events() == []


def test_deterministic():
    assert generate(SMALL) == generate(SMALL)
    assert generate(SMALL) != generate(SynthConfig(**{**SMALL.__dict__, "seed": 4}))


def test_split_disjoint():
    ds = generate(SMALL)
    ids = {s: {c.id for c in ds.split(s)} for s in ("train", "val", "test")}
    assert not ids["train"] & ids["val"] and not ids["train"] & ids["test"] and not ids["val"] & ids["test"]
    assert sum(len(v) for v in ids.values()) == len(ds.clips)


@pytest.mark.parametrize("kw", [
    {"max_duration": 200},
    {"min_duration": 0},
    {"noise": -1.0},
    {"event_rate": -0.5},
    {"split_fractions": (0.5, 0.3, 0.3)},
])
def test_invalid_config(kw):
    with pytest.raises(ValueError):
        SynthConfig(**kw)


def test_class_names():
    assert class_names(2) == ["train_horn", "car_alarm"]
    assert class_names(6)[-1] == "class_5"


def test_round_trip(tmp_path):
    ds = generate(SMALL)
    write_dataset(ds, tmp_path)
    back = read_dataset(tmp_path)
    assert back == ds
    assert back.reference_events("test") == ds.reference_events("test")


def test_files_byte_identical(tmp_path):
    write_dataset(generate(SMALL), tmp_path / "a")
    write_dataset(generate(SMALL), tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_feature_file_layout(tmp_path):
    ds = generate(SMALL)
    write_dataset(ds, tmp_path)
    data = (tmp_path / "train.milp").read_bytes()
    assert data[:4] == b"MILP" and data[4] == 1
    n, d = np.frombuffer(data[5:13], "<u4")
    assert (n, d) == (25, 4)
    first = np.frombuffer(data[13:13 + 4 * n * d], "<f4").reshape(n, d)
    assert np.array_equal(first, ds.split("train")[0].features)


def test_empty_dataset(tmp_path):
    ds = Dataset([], class_names(3))
    write_dataset(ds, tmp_path)
    assert (tmp_path / "train.milp").read_bytes() == b"MILP\x01"
    back = read_dataset(tmp_path)
    assert back.clips == [] and back.arrays("train") == (None, None)


def test_truncated_file_rejected(tmp_path):
    write_dataset(generate(SMALL), tmp_path)
    path = tmp_path / "train.milp"
    path.write_bytes(path.read_bytes()[:-7])
    with pytest.raises(DatasetError, match="checksum"):
        read_dataset(tmp_path)


def test_truncated_file_rejected_without_manifest_check(tmp_path):
    from hierpool.synth import read_features
    write_dataset(generate(SMALL), tmp_path)
    path = tmp_path / "val.milp"
    path.write_bytes(path.read_bytes()[:-7])
    with pytest.raises(DatasetError, match="truncated"):
        read_features(path)


def test_checksum_mismatch(tmp_path):
    write_dataset(generate(SMALL), tmp_path)
    ref = tmp_path / "strong_ref.tsv"
    ref.write_text(ref.read_text().replace("\t", " ", 1))
    with pytest.raises(DatasetError, match="checksum"):
        read_dataset(tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(DatasetError):
        read_dataset(tmp_path)


def test_event_out_of_range():
    with pytest.raises(ValueError):
        make_clip("c", np.zeros((10, 2)), [(0, 5, 11)], 2)
