import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbpa.errors import ContractError, FormatError, GenerationError
from pbpa.geometry import PAIRS
from pbpa.synthdata import (
    CATALOGUE,
    GenConfig,
    active_parts,
    generate_dataset,
    generate_scene,
    person_labels,
    read_dataset,
    write_dataset,
)

CFG = GenConfig()


@pytest.fixture(scope="module")
def sample():
    return [generate_scene(s) for s in range(300)]


def test_same_seed_same_scene():
    a, b = generate_scene(42), generate_scene(42)
    assert a == b
    assert a.image.tobytes() == b.image.tobytes()
    assert generate_scene(43) != a


def test_scene_shapes(sample):
    for s in sample:
        assert s.image.shape == (3, 64, 64) and s.image.dtype == np.float32
        assert 1 <= len(s.persons) <= 3
        assert 0 <= len(s.objects) <= 4
        assert s.labels.shape == (12,) and s.labels.dtype == np.uint8


def test_boxes_inside_canvas(sample):
    for s in sample:
        for b in [p.box for p in s.persons] + list(s.objects):
            assert not b.empty
            assert b.r >= 0 and b.c >= 0 and b.r1 <= 64 and b.c1 <= 64


def test_labels_match_geometry_and_or_over_persons(sample):
    for s in sample:
        per = np.array([person_labels(p.keypoints, s.objects, CFG) for p in s.persons])
        np.testing.assert_array_equal(s.labels, per.any(axis=0).astype(np.uint8))


def test_planted_pairs_hold(sample):
    for s in sample:
        assert sorted(c for c, _, _ in s.planted) == list(np.nonzero(s.labels)[0])
        for c, person, pair in s.planted:
            assert pair == CATALOGUE[c].pair_index
            assert person_labels(s.persons[person].keypoints, s.objects, CFG)[c]


def test_active_parts_are_the_satisfied_pairs(sample):
    for s in sample:
        for p in s.persons:
            lab = person_labels(p.keypoints, s.objects, CFG)
            want = {i for c in np.nonzero(lab)[0] for i in PAIRS[CATALOGUE[c].pair_index]}
            assert active_parts(p.keypoints, s.objects, CFG) == want


def test_no_objects_means_no_touch_classes(sample):
    touch = [c for c, spec in enumerate(CATALOGUE) if spec.needs_object]
    assert touch
    bare = [s for s in sample if not s.objects]
    assert bare
    for s in bare:
        assert not s.labels[touch].any()
        for p in s.persons:
            assert not person_labels(p.keypoints, [], CFG)[touch].any()


def test_positive_rates_in_band():
    labels = generate_dataset(0, 10000, CFG).labels()
    rates = labels.mean(axis=0)
    assert ((rates >= 0.1) & (rates <= 0.6)).all(), rates


def test_touch_classes_need_objects():
    with pytest.raises(GenerationError, match="hold-left"):
        generate_scene(0, GenConfig(max_objects=0))
    # Without the object classes zero objects is fine.
    generate_scene(0, GenConfig(max_objects=0, n_classes=3))


def test_config_validation():
    with pytest.raises(ContractError):
        GenConfig(n_classes=0)
    with pytest.raises(ContractError):
        GenConfig(n_classes=13)
    with pytest.raises(ContractError):
        GenConfig(enact_prob=1.5)
    assert GenConfig().digest() == GenConfig().digest()
    assert GenConfig(noise=0.05).digest() != GenConfig().digest()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**63 - 1))
def test_generation_is_pure(seed):
    assert generate_scene(seed) == generate_scene(seed)


# -- dataset files -----------------------------------------------------------


def test_round_trip_100(tmp_path):
    path = tmp_path / "d.pbpd"
    mem = generate_dataset(500, 100, CFG)
    written = generate_dataset(500, 100, CFG, path=path)
    back = read_dataset(path)
    assert back == mem == written
    for a, b in zip(back.scenes, mem.scenes):
        assert a.image.tobytes() == b.image.tobytes()
    write_dataset(tmp_path / "again.pbpd", back.scenes, CFG)
    assert (tmp_path / "again.pbpd").read_bytes() == path.read_bytes()


def test_single_record(tmp_path):
    path = tmp_path / "one.pbpd"
    d = generate_dataset(7, 1, CFG, path=path)
    back = read_dataset(path)
    assert len(back) == 1 and back == d
    assert back.cfg_digest == CFG.digest()
    assert [tuple(p) for p in back.class_pairs] == [spec.pair for spec in CATALOGUE]


def test_header_layout(tmp_path):
    path = tmp_path / "d.pbpd"
    generate_dataset(0, 3, CFG, path=path)
    raw = path.read_bytes()
    assert raw[:4] == b"PBPD"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:12], "little") == 3
    assert int.from_bytes(raw[12:16], "little") == 12


def test_disjoint_seeds_share_no_images():
    train = generate_dataset(0, 200, CFG)
    test = generate_dataset(100000, 100, CFG)
    seen = {s.image.tobytes() for s in train}
    assert not any(s.image.tobytes() in seen for s in test)


def test_bad_files(tmp_path):
    path = tmp_path / "d.pbpd"
    generate_dataset(0, 2, CFG, path=path)
    raw = path.read_bytes()
    for name, blob in [("magic", b"XXXX" + raw[4:]), ("trunc", raw[:-10]), ("tail", raw + b"\0")]:
        p = tmp_path / name
        p.write_bytes(blob)
        with pytest.raises(FormatError):
            read_dataset(p)


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        generate_dataset(0, 1, CFG, path=tmp_path / "missing" / "d.pbpd")


def test_empty_dataset_rejected():
    with pytest.raises(ContractError):
        generate_dataset(0, 0, CFG)
