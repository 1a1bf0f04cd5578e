import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbpa import autograd as ag
from pbpa.attention import rescale, select_top_k
from pbpa.autograd import Tensor
from pbpa.checks import miniature_scene
from pbpa.errors import ContractError, FormatError, NumericError
from pbpa.geometry import BoundingBox, Keypoints
from pbpa.model import (
    Model,
    ModelConfig,
    average_precision,
    batch_indices,
    batch_loss,
    evaluate_map,
    forward_person,
    inspect_attention,
    load_checkpoint,
    lr_at,
    mean_average_precision,
    mil_aggregate,
    plan_scene,
    read_checkpoint,
    save_checkpoint,
    train,
    train_step,
    weighted_bce_loss,
)
from pbpa.synthdata import GenConfig, Person, Scene, generate_dataset, generate_scene


def small_cfg(**kw):
    base = dict(channels=(4, 6, 6), hidden=16, head_hidden=8, k=6, steps=20, batch_size=4)
    base.update(kw)
    return ModelConfig(**base)


def wake_local(model, seed=0):
    """Give the head random weights on the local branch, which start at zero."""
    rows = model.params["head.0.W"].data[model.cfg.hidden:]
    rows[:] = np.random.default_rng(seed).normal(0.0, 0.3, rows.shape)
    return model


@pytest.fixture(scope="module")
def tiny_data():
    return generate_dataset(0, 24, GenConfig())


def _fmap(cfg, rng):
    return Tensor(np.abs(rng.normal(size=(cfg.channels[-1], cfg.fmap_size, cfg.fmap_size))))


# -- config ---------------------------------------------------------------


def test_config_limits():
    with pytest.raises(ContractError):
        ModelConfig(k=46)
    ModelConfig(k=55, attention_mode="pairs+parts")
    with pytest.raises(ContractError):
        ModelConfig(k=56, attention_mode="pairs+parts")
    with pytest.raises(ContractError):
        ModelConfig(max_humans=0)
    with pytest.raises(ContractError):
        ModelConfig(max_objects=0)
    with pytest.raises(ContractError):
        ModelConfig(object_mode="loose")


def test_lr_schedule():
    cfg = ModelConfig(steps=300)
    assert lr_at(cfg, 0) == 1e-2
    assert lr_at(cfg, 199) == 1e-2
    assert lr_at(cfg, 200) == pytest.approx(1e-3)


def test_batch_indices_cover_each_epoch():
    cfg = ModelConfig(batch_size=8, seed=3)
    n = 40
    idx = np.concatenate([batch_indices(cfg, n, s) for s in range(5)])
    assert sorted(idx) == list(range(n))
    np.testing.assert_array_equal(batch_indices(cfg, n, 7), batch_indices(cfg, n, 7))


# -- forward ---------------------------------------------------------------


def test_zero_feature_map_gives_sigmoid_of_final_bias():
    cfg = small_cfg()
    m = Model(cfg)
    m.params["head.1.b"].data[:] = np.linspace(-2, 2, cfg.n_classes)
    scene = generate_scene(5)
    fmap = Tensor(np.zeros((cfg.channels[-1], cfg.fmap_size, cfg.fmap_size)))
    scores, _ = forward_person(m, fmap, scene.persons[0], scene.objects)
    expect = 1.0 / (1.0 + np.exp(-m.params["head.1.b"].data))
    np.testing.assert_allclose(scores.data, expect, rtol=0, atol=1e-15)


def _shifted_keypoints(person, rng):
    pts = person.keypoints.points + rng.uniform(-3, 3, person.keypoints.points.shape)
    return Person(keypoints=Keypoints(pts), box=person.box)


def test_local_branch_starts_silent():
    on = Model(small_cfg())
    assert not on.params["head.0.W"].data[on.cfg.hidden:].any()
    assert on.params["head.0.W"].data[:on.cfg.hidden].any()
    assert (on.params["score.W"].data >= 0).all()


def test_attention_off_ignores_pair_geometry():
    rng = np.random.default_rng(0)
    scene = generate_scene(11)
    moved = _shifted_keypoints(scene.persons[0], rng)
    off = Model(small_cfg(attention_mode="off"))
    fmap = _fmap(off.cfg, rng)
    a, st_ = forward_person(off, fmap, scene.persons[0], scene.objects)
    b, _ = forward_person(off, fmap, moved, scene.objects)
    assert st_ is None
    np.testing.assert_array_equal(a.data, b.data)
    on = wake_local(Model(small_cfg()))
    a, _ = forward_person(on, fmap, scene.persons[0], scene.objects)
    b, _ = forward_person(on, fmap, moved, scene.objects)
    assert not np.array_equal(a.data, b.data)


def test_duplicate_persons_score_identically():
    scene = generate_scene(4)
    p = scene.persons[0]
    dup = Scene(image=scene.image, persons=[p, p, p], objects=scene.objects, labels=scene.labels, seed=scene.seed)
    m = Model(small_cfg())
    pred = m.forward(dup.image[None], [plan_scene(dup, m.cfg)])
    s = pred.person_scores.data
    np.testing.assert_array_equal(s[0], s[1])
    np.testing.assert_array_equal(s[0], s[2])


def test_batched_forward_matches_forward_person(tiny_data):
    m = Model(small_cfg())
    scenes = tiny_data.scenes[:3]
    pred = m.forward(np.stack([s.image for s in scenes]), [plan_scene(s, m.cfg) for s in scenes])
    fmaps = m.backbone(Tensor(np.stack([s.image for s in scenes]).astype(np.float64))).data
    row = 0
    for b, s in enumerate(scenes):
        for p in s.persons[: m.cfg.max_humans]:
            one, _ = forward_person(m, Tensor(fmaps[b]), p, s.objects)
            np.testing.assert_allclose(pred.person_scores.data[row], one.data, rtol=1e-12, atol=1e-14)
            row += 1


def test_image_scores_are_max_over_persons(tiny_data):
    m = Model(small_cfg())
    scenes = tiny_data.scenes[:6]
    pred = m.forward(np.stack([s.image for s in scenes]), [plan_scene(s, m.cfg) for s in scenes])
    start = 0
    for b, n in enumerate(pred.segments):
        np.testing.assert_array_equal(pred.image_scores.data[b], pred.person_scores.data[start:start + n].max(axis=0))
        start += n


def test_missing_objects_are_zero_padded():
    # Scores with no objects must equal scores where every object ROI pools zeros.
    cfg = small_cfg()
    m = Model(cfg)
    scene = generate_scene(4)
    rng = np.random.default_rng(1)
    fmap = _fmap(cfg, rng)
    a, _ = forward_person(m, fmap, scene.persons[0], [])
    w = m.params["global.0.W"].data
    per_roi = cfg.channels[-1] * cfg.roi_pool ** 2
    w[2 * per_roi:] += rng.normal(size=w[2 * per_roi:].shape)  # object slots only
    b, _ = forward_person(m, fmap, scene.persons[0], [])
    np.testing.assert_array_equal(a.data, b.data)


def test_empty_person_box_rejected():
    m = Model(small_cfg())
    scene = generate_scene(4)
    bad = Person(keypoints=scene.persons[0].keypoints, box=BoundingBox.make_empty())
    with pytest.raises(ContractError):
        forward_person(m, _fmap(m.cfg, np.random.default_rng(0)), bad, scene.objects)


def test_unselected_pair_perturbation_leaves_local_branch_unchanged():
    rng = np.random.default_rng(2)
    m = Model(small_cfg())
    pairs = Tensor(np.abs(rng.normal(size=(1, 45, 54))))
    s = ag.sigmoid(Tensor(rng.normal(size=(1, 45))))
    phi = select_top_k(s, m.cfg.k)
    base = m._mlp(ag.reshape(rescale(pairs, s, phi), (1, -1)), "local").data
    dropped = np.setdiff1d(np.arange(45), phi[0])
    pert = pairs.data.copy()
    pert[0, dropped] += rng.normal(size=(len(dropped), 54))
    out = m._mlp(ag.reshape(rescale(Tensor(pert), s, phi), (1, -1)), "local").data
    np.testing.assert_array_equal(base, out)


def test_every_parameter_gets_a_finite_gradient(tiny_data):
    m = wake_local(Model(small_cfg()))
    scenes = tiny_data.scenes[:4]
    loss, _ = batch_loss(m, scenes, [plan_scene(s, m.cfg) for s in scenes])
    ag.backward(loss)
    for name, p in m.params.items():
        assert p.grad is not None, name
        assert np.isfinite(p.grad).all(), name
        assert np.abs(p.grad).sum() > 0, name


# -- MIL -------------------------------------------------------------------


def test_mil_examples():
    x = Tensor(np.array([[0.2, 0.9], [0.7, 0.1]]))
    np.testing.assert_array_equal(mil_aggregate(x).data, [0.7, 0.9])
    one = Tensor(np.array([[0.3, 0.4, 0.5]]))
    np.testing.assert_array_equal(mil_aggregate(one).data, one.data[0])
    with pytest.raises(ContractError):
        mil_aggregate(Tensor(np.zeros((0, 3))))


def test_mil_tie_goes_to_first_person():
    x = Tensor(np.full((3, 2), 0.5), requires_grad=True)
    ag.backward(ag.sum(mil_aggregate(x)))
    np.testing.assert_array_equal(x.grad, [[1, 1], [0, 0], [0, 0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31))
def test_mil_gradient_sparsity(P, C, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(P, C)), requires_grad=True)
    w = rng.uniform(0.5, 2.0, C)
    ag.backward(ag.sum(ag.mul(mil_aggregate(x), Tensor(w))))
    assert ((x.grad != 0).sum(axis=0) == 1).all()
    np.testing.assert_array_equal(x.grad[x.data.argmax(axis=0), np.arange(C)], w)


# -- loss ------------------------------------------------------------------


def test_bce_hand_values():
    half = Tensor(np.array([0.5]))
    assert abs(float(weighted_bce_loss(half, [1]).data) - 10 * math.log(2)) < 1e-12
    assert abs(float(weighted_bce_loss(half, [0]).data) - math.log(2)) < 1e-12


def test_bce_near_perfect_prediction_is_near_zero():
    y = np.array([1, 0, 1])
    yhat = Tensor(np.where(y == 1, 1.0, 0.0))
    loss = float(weighted_bce_loss(yhat, y).data)
    assert 0 <= loss < 1e-5  # clamp at 1e-7 leaves -10*log(1-1e-7) per positive


def test_bce_clamps_instead_of_overflowing():
    loss = float(weighted_bce_loss(Tensor(np.array([0.0])), [1]).data)
    assert loss == pytest.approx(-10 * math.log(1e-7))


def test_bce_rejects_soft_labels():
    with pytest.raises(ContractError):
        weighted_bce_loss(Tensor(np.array([0.5, 0.5])), [1, 0.5])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31))
def test_bce_nonnegative(C, seed):
    rng = np.random.default_rng(seed)
    yhat = Tensor(rng.uniform(0, 1, C))
    y = rng.integers(0, 2, C)
    assert float(weighted_bce_loss(yhat, y).data) >= 0


# -- training --------------------------------------------------------------


def test_zero_learning_rate_keeps_parameters(tiny_data):
    m = Model(small_cfg())
    before = {n: p.data.copy() for n, p in m.params.items()}
    scenes = tiny_data.scenes[:4]
    train_step(m, scenes, [plan_scene(s, m.cfg) for s in scenes], lr=0.0)
    for n, p in m.params.items():
        assert p.data.tobytes() == before[n].tobytes(), n


def test_training_is_deterministic(tiny_data):
    a = train(Model(small_cfg(steps=6)), tiny_data)
    b = train(Model(small_cfg(steps=6)), tiny_data)
    assert a == b


def test_training_resumes_mid_run(tiny_data):
    full = train(Model(small_cfg(steps=6)), tiny_data)
    m = Model(small_cfg(steps=6))
    first = train(m, tiny_data, steps=3)
    rest = train(m, tiny_data, start_step=3)
    assert first + rest == full


def test_single_scene_overfit():
    scene = generate_scene(1)
    assert scene.labels.any()
    m = Model(ModelConfig())
    plan = [plan_scene(scene, m.cfg)]
    losses = [train_step(m, [scene], plan, lr=1e-2) for _ in range(200)]
    final, _ = batch_loss(m, [scene], plan)
    assert float(final.data) < 0.05
    assert losses[0] > 1.0


def test_non_finite_loss_names_the_scene(tiny_data):
    m = Model(small_cfg())
    m.params["head.1.b"].data[:] = np.nan
    s = tiny_data.scenes[3]
    with pytest.raises(NumericError, match=str(s.seed)):
        train_step(m, [s], [plan_scene(s, m.cfg)], lr=1e-2)


def test_empty_batch_rejected():
    with pytest.raises(ContractError):
        train_step(Model(small_cfg()), [], [], lr=1e-2)


# -- evaluation ------------------------------------------------------------


def test_ap_examples():
    assert average_precision([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert average_precision([0.9, 0.1], [0, 1]) == 0.5
    # positives at ranks 1 and 3: (1/1 + 2/3) / 2
    assert average_precision([0.9, 0.5, 0.4], [1, 0, 1]) == pytest.approx(5 / 6)
    with pytest.raises(ContractError):
        average_precision([0.3, 0.2], [0, 0])


def test_ap_tie_broken_by_index():
    assert average_precision([0.5, 0.5], [0, 1]) == 0.5
    assert average_precision([0.5, 0.5], [1, 0]) == 1.0


def test_ap_of_random_scores_is_positive_rate():
    rng = np.random.default_rng(0)
    for rate in (0.1, 0.3, 0.5):
        labels = rng.random(20000) < rate
        ap = average_precision(rng.random(20000), labels)
        assert abs(ap - labels.mean()) < 0.05


def test_map_skips_classes_without_positives():
    scores = np.array([[0.9, 0.2, 0.1], [0.1, 0.8, 0.3]])
    labels = np.array([[1, 0, 0], [0, 1, 0]])
    m, aps = mean_average_precision(scores, labels)
    assert m == 1.0 and np.isnan(aps[2])
    with pytest.raises(ContractError):
        mean_average_precision(scores, np.zeros_like(labels))


def test_inspect_constant_scores_picks_lowest_indices(tiny_data):
    m = Model(small_cfg())
    m.params["score.W"].data[:] = 0.0
    rep = inspect_attention(m, tiny_data)
    k = m.cfg.k
    for c, cnt in rep.counts.items():
        npos = int(tiny_data.labels()[:, c].sum())
        np.testing.assert_array_equal(cnt[:k], npos)
        assert not cnt[k:].any()
        assert rep.top[c] == list(range(5))


def test_inspect_omits_classes_without_positives(tiny_data):
    labels = tiny_data.labels()
    empty = [c for c in range(labels.shape[1]) if not labels[:, c].any()]
    scenes = [s for s in tiny_data.scenes if not s.labels[0]]
    sub = type(tiny_data)(tiny_data.cfg_digest, tiny_data.n_classes, tiny_data.image_size,
                          tiny_data.class_pairs, scenes)
    rep = inspect_attention(Model(small_cfg()), sub)
    assert 0 in rep.omitted and 0 not in rep.counts
    assert set(empty) <= set(rep.omitted)


def test_inspect_needs_attention_branch(tiny_data):
    with pytest.raises(ContractError):
        inspect_attention(Model(small_cfg(attention_mode="off")), tiny_data)


# -- checkpoints -----------------------------------------------------------


def test_checkpoint_round_trip_is_bit_identical(tmp_path, tiny_data):
    cfg = small_cfg(steps=3)
    m = Model(cfg)
    train(m, tiny_data)
    path = tmp_path / "m.pbpa"
    save_checkpoint(path, m, extra={"meta.step": np.array([3.0])})
    m2, extra = load_checkpoint(path, cfg)
    assert extra["meta.step"].tolist() == [3.0]
    for n, p in m.params.items():
        assert p.data.tobytes() == m2.params[n].data.tobytes()
    a, _ = evaluate_map(m, tiny_data)
    b, _ = evaluate_map(m2, tiny_data)
    assert a == b
    s1, _, _ = m.predict(tiny_data)
    s2, _, _ = m2.predict(tiny_data)
    assert s1.tobytes() == s2.tobytes()


def test_checkpoint_layout(tmp_path):
    m = Model(small_cfg())
    path = tmp_path / "m.pbpa"
    save_checkpoint(path, m)
    raw = path.read_bytes()
    assert raw[:4] == b"PBPA"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:12], "little") == len(m.params)
    assert set(read_checkpoint(path)) == set(m.params)


def test_checkpoint_errors(tmp_path):
    m = Model(small_cfg())
    path = tmp_path / "m.pbpa"
    save_checkpoint(path, m)
    raw = path.read_bytes()
    (tmp_path / "trunc.pbpa").write_bytes(raw[:-5])
    with pytest.raises(FormatError):
        read_checkpoint(tmp_path / "trunc.pbpa")
    (tmp_path / "magic.pbpa").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        read_checkpoint(tmp_path / "magic.pbpa")
    with pytest.raises(FormatError):
        load_checkpoint(path, small_cfg(hidden=17))


def test_miniature_scene_forward():
    rng = np.random.default_rng(0)
    cfg = ModelConfig(image_size=8, n_classes=2, channels=(3, 4, 4), hidden=6, head_hidden=5, k=4, max_objects=2)
    scene = miniature_scene(rng)
    pred = Model(cfg).forward(scene.image[None], [plan_scene(scene, cfg)])
    assert pred.image_scores.shape == (1, 2)
    assert ((pred.image_scores.data > 0) & (pred.image_scores.data < 1)).all()
