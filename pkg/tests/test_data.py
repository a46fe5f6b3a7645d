"""Sequence file format and synthetic data generator tests."""

import numpy as np
import pytest

from skelact.data import (
    JOINT_NAMES_13,
    SequenceFormatError,
    SkeletonSequence,
    label_vocabulary,
    load_dataset,
    load_sequence,
    synth_class_names,
    synthesize_dataset,
    synthesize_sequence,
    write_sequence,
)
from skelact.metrics import segment


def test_round_trip_is_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    seq = synthesize_sequence(rng, classes=3, noise=0.05, image_features=True)
    p1 = tmp_path / "a.seq"
    p2 = tmp_path / "b.seq"
    write_sequence(seq, str(p1))
    loaded = load_sequence(str(p1))
    assert np.array_equal(loaded.joints, seq.joints)
    assert loaded.labels == seq.labels
    assert np.array_equal(loaded.image_features, seq.image_features)
    assert loaded.joint_names == seq.joint_names
    write_sequence(loaded, str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def _write(tmp_path, text):
    p = tmp_path / "bad.seq"
    p.write_text(text)
    return str(p)


_HEADER = "version 1\njoints 2\nnames a b\n"


def test_wrong_coordinate_count_names_the_line(tmp_path):
    path = _write(tmp_path, _HEADER + "frame 0,0 0 0 1 1\n")  # 5 coords, needs 6
    with pytest.raises(SequenceFormatError) as err:
        load_sequence(path)
    assert ":4:" in str(err.value)


def test_nonincreasing_frame_index_rejected(tmp_path):
    path = _write(
        tmp_path,
        _HEADER + "frame 0,0 0 0 1 1 1\nframe 0,0 0 0 1 1 1\n",
    )
    with pytest.raises(SequenceFormatError) as err:
        load_sequence(path)
    assert ":5:" in str(err.value)


def test_bad_number_and_unknown_header_rejected(tmp_path):
    with pytest.raises(SequenceFormatError):
        load_sequence(_write(tmp_path, _HEADER + "frame 0,0 0 zero 1 1 1\n"))
    with pytest.raises(SequenceFormatError):
        load_sequence(_write(tmp_path, "version 1\nbananas 4\n"))
    with pytest.raises(SequenceFormatError):
        load_sequence(_write(tmp_path, "version 99\njoints 2\nframe 0,0 0 0 1 1 1\n"))
    with pytest.raises(SequenceFormatError):
        load_sequence(_write(tmp_path, _HEADER))  # no frames


def test_sequence_with_13_joints_feeds_the_default_hierarchy(tmp_path):
    from skelact.graph import default_hierarchy

    seq = synthesize_sequence(np.random.default_rng(1), classes=2, noise=0.0)
    assert seq.joint_count == default_hierarchy().node_counts[0]
    assert seq.joint_names == JOINT_NAMES_13


def test_generation_is_seed_deterministic(tmp_path):
    a = synthesize_dataset(classes=3, sequences=4, noise=0.1, seed=7)
    b = synthesize_dataset(classes=3, sequences=4, noise=0.1, seed=7)
    c = synthesize_dataset(classes=3, sequences=4, noise=0.1, seed=8)
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.joints, sb.joints)
        assert sa.labels == sb.labels
    assert any(not np.array_equal(sa.joints, sc.joints) for sa, sc in zip(a, c))


def test_zero_noise_classes_depth1_separable():
    # the left wrist height alone must classify every frame at noise 0
    data = synthesize_dataset(classes=2, sequences=6, noise=0.0, seed=2)
    vocab = label_vocabulary(data)
    names = synth_class_names(2)
    heights = {0: [], 1: []}
    for seq in data:
        for t, label in enumerate(seq.labels):
            k = names.index(label)
            heights[k].append(seq.joints[t, 7, 1])  # l_wrist y
    assert max(heights[0]) < min(heights[1]) or max(heights[1]) < min(heights[0])


def test_segment_boundaries_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(10):
        seq = synthesize_sequence(rng, classes=4, noise=0.1, min_segments=2, max_segments=5)
        names = synth_class_names(4)
        ids = np.array([names.index(l) for l in seq.labels])
        segs = segment(ids)
        assert np.array_equal(segs.expand(), ids)
        # adjacent segments always carry different classes
        assert all(a != b for a, b in zip(segs.labels, segs.labels[1:]))


def test_load_dataset_sorted_and_vocabulary(tmp_path):
    data = synthesize_dataset(classes=3, sequences=3, noise=0.05, seed=4)
    for i, seq in enumerate(data):
        write_sequence(seq, str(tmp_path / f"seq{i:02d}.seq"))
    loaded = load_dataset(str(tmp_path))
    assert [s.name for s in loaded] == sorted(s.name for s in loaded)
    vocab = label_vocabulary(loaded)
    assert vocab == sorted(set(vocab))
    assert set(vocab) <= set(synth_class_names(3))


def test_image_features_consistent_dimension_enforced(tmp_path):
    text = (
        "version 1\njoints 1\n"
        "frame 0,0 0 0,lab,0.5 0.5\n"
        "frame 1,0 0 0,lab,0.5\n"
    )
    with pytest.raises(SequenceFormatError) as err:
        load_sequence(_write(tmp_path, text))
    assert "image feature" in str(err.value)
