"""Timelines, sample extraction, file formats, checkpoints."""

import json
import os

import numpy as np
import pytest

from anticipation.errors import (ContractError, DataError, DimensionError,
                                 ParseError)
from anticipation.features import (ActionAnnotation, DetectionRecord,
                                   FeatureTimeline, build_object_timeline,
                                   build_samples, extract_anticipation_sample,
                                   extract_early_recognition_sample,
                                   load_annotations, load_checkpoint,
                                   load_detections, load_timeline,
                                   load_timeline_csv, object_feature,
                                   save_annotations, save_checkpoint,
                                   save_detections, save_timeline)
from anticipation.model import ModelConfig, RUModel


def _timeline(n=10, d=3, seed=0, video="v0", modality="app"):
    rng = np.random.default_rng(seed)
    return FeatureTimeline(video_id=video, modality=modality,
                           timestamps=0.25 * np.arange(1, n + 1),
                           vectors=rng.normal(size=(n, d)).astype(np.float32))


def _annotation(video="v0", start=2.0, end=3.0, verb=1, noun=0, action=2):
    return ActionAnnotation(video_id=video, start_s=start, end_s=end,
                            verb_class=verb, noun_class=noun, action_class=action)


# ---------------------------------------------------------------------------
# timeline container


def test_timeline_validation():
    with pytest.raises(DataError):
        FeatureTimeline("v", "m", np.array([1.0, 1.0]), np.zeros((2, 3)))
    with pytest.raises(DataError):
        FeatureTimeline("v", "m", np.array([2.0, 1.0]), np.zeros((2, 3)))
    with pytest.raises(DimensionError):
        FeatureTimeline("v", "m", np.array([1.0]), np.zeros((2, 3)))
    with pytest.raises(DataError):
        FeatureTimeline("v", "m", np.zeros(0), np.zeros((0, 3)))


def test_nearest_row_interior_and_tie():
    tl = _timeline(4)  # timestamps 0.25 0.5 0.75 1.0
    assert tl.nearest_row(0.55) == (1, False)
    assert tl.nearest_row(0.70) == (2, False)
    # exact midpoint ties resolve to the earlier row
    assert tl.nearest_row(0.625) == (1, False)
    assert tl.nearest_row(0.25) == (0, False)


def test_nearest_row_clamps_outside_span():
    tl = _timeline(4)
    assert tl.nearest_row(0.1) == (0, True)
    assert tl.nearest_row(5.0) == (3, True)


# ---------------------------------------------------------------------------
# sample extraction


def test_anticipation_sample_times():
    cfg = ModelConfig(modality_dims=(3,), n_actions=4, s_enc=2, s_ant=3,
                      modality_names=("app",))
    tl = _timeline(20)
    ann = _annotation(start=4.0, end=5.0)
    sample = extract_anticipation_sample({"app": tl}, ann, cfg)
    # targets 4.0 - 0.25*(6-t) for t=1..5 -> 2.75 3.0 3.25 3.5 3.75
    expected_rows = [10, 11, 12, 13, 14]
    np.testing.assert_array_equal(
        np.asarray(sample.features[0]),
        tl.vectors[expected_rows].astype(np.float64))
    assert sample.n_clamped == 0
    assert sample.protocol == "anticipation"
    assert sample.sample_id == "v0:4.000"


def test_anticipation_sample_clamps_before_video_start():
    cfg = ModelConfig(modality_dims=(3,), n_actions=4, s_enc=2, s_ant=3,
                      modality_names=("app",))
    sample = extract_anticipation_sample({"app": _timeline(20)},
                                         _annotation(start=0.5, end=1.0), cfg)
    assert sample.n_clamped > 0


def test_early_recognition_sample_times():
    cfg = ModelConfig(modality_dims=(3,), n_actions=4, s_enc=0, s_ant=4,
                      modality_names=("app",))
    tl = _timeline(20)
    ann = _annotation(start=2.0, end=3.0)
    sample = extract_early_recognition_sample({"app": tl}, ann, cfg)
    # targets 2.0 + 1.0*k/4 -> 2.25 2.5 2.75 3.0 -> rows 8 9 10 11
    np.testing.assert_array_equal(np.asarray(sample.features[0]),
                                  tl.vectors[[8, 9, 10, 11]].astype(np.float64))
    assert sample.protocol == "early_recognition"


def test_early_recognition_requires_no_encoder_prefix():
    cfg = ModelConfig(modality_dims=(3,), n_actions=4, s_enc=2, s_ant=3,
                      modality_names=("app",))
    with pytest.raises(ContractError):
        extract_early_recognition_sample({"app": _timeline()}, _annotation(), cfg)


def test_build_samples_unknown_video():
    cfg = ModelConfig(modality_dims=(3,), n_actions=4, modality_names=("app",))
    with pytest.raises(DataError):
        build_samples({"v0": {"app": _timeline()}},
                      [_annotation(video="missing")], cfg)


def test_extract_checks_timeline_dim():
    cfg = ModelConfig(modality_dims=(7,), n_actions=4, modality_names=("app",))
    with pytest.raises(DataError):
        extract_anticipation_sample({"app": _timeline(d=3)}, _annotation(), cfg)


# ---------------------------------------------------------------------------
# object modality aggregation


def test_object_feature_sums_scores_per_class():
    dets = [DetectionRecord("v", 1.0, 2, 0.5), DetectionRecord("v", 1.0, 2, 0.25),
            DetectionRecord("v", 1.0, 0, 0.9)]
    vec = object_feature(dets, 4)
    np.testing.assert_allclose(vec, [0.9, 0.0, 0.75, 0.0])
    with pytest.raises(DataError):
        object_feature([DetectionRecord("v", 1.0, 5, 0.5)], 4)


def test_build_object_timeline_grid_and_zero_rows():
    grid = np.array([0.25, 0.5, 0.75])
    dets = [DetectionRecord("v", 0.5, 1, 0.8), DetectionRecord("v", 0.5, 0, 0.3)]
    tl = build_object_timeline(dets, grid, 3, "v", "obj")
    np.testing.assert_array_equal(tl.timestamps, grid)
    np.testing.assert_allclose(tl.vectors[0], 0.0)
    np.testing.assert_allclose(tl.vectors[1], [0.3, 0.8, 0.0], atol=1e-7)
    np.testing.assert_allclose(tl.vectors[2], 0.0)
    with pytest.raises(DataError):
        build_object_timeline([DetectionRecord("v", 0.51, 1, 0.8)], grid, 3,
                              "v", "obj")


# ---------------------------------------------------------------------------
# file round trips


def test_timeline_binary_roundtrip_bit_exact(tmp_path):
    tl = _timeline(n=17, d=5, seed=3)
    path = os.path.join(tmp_path, "v0_app.ruft")
    save_timeline(tl, path)
    back = load_timeline(path)
    assert back.video_id == tl.video_id and back.modality == tl.modality
    np.testing.assert_array_equal(back.timestamps, tl.timestamps)
    np.testing.assert_array_equal(back.vectors, tl.vectors)
    assert back.vectors.dtype == np.float32


def test_timeline_csv_roundtrip_bit_exact(tmp_path):
    tl = _timeline(n=9, d=4, seed=5)
    path = os.path.join(tmp_path, "v0_app.csv")
    save_timeline(tl, path)
    back = load_timeline_csv(path, "v0", "app")
    np.testing.assert_array_equal(back.timestamps, tl.timestamps)
    np.testing.assert_array_equal(back.vectors, tl.vectors)


def test_timeline_binary_rejects_truncation_and_garbage(tmp_path):
    tl = _timeline()
    path = os.path.join(tmp_path, "t.ruft")
    save_timeline(tl, path)
    blob = open(path, "rb").read()
    trunc = os.path.join(tmp_path, "trunc.ruft")
    with open(trunc, "wb") as f:
        f.write(blob[:-7])
    with pytest.raises(ParseError):
        load_timeline(trunc)
    bad = os.path.join(tmp_path, "bad.ruft")
    with open(bad, "wb") as f:
        f.write(b"NOPE" + blob[4:])
    with pytest.raises(ParseError):
        load_timeline(bad)


def test_annotations_roundtrip(tmp_path):
    anns = [_annotation(start=1.0, end=2.5, verb=0, noun=1, action=3),
            _annotation(video="v1", start=0.125, end=9.875, verb=2, noun=0, action=5)]
    path = os.path.join(tmp_path, "ann.csv")
    save_annotations(anns, path)
    back = load_annotations(path)
    assert back == anns
    # class range validation at load time
    with pytest.raises(DataError):
        load_annotations(path, n_actions=3)


def test_annotations_bad_row(tmp_path):
    path = os.path.join(tmp_path, "ann.csv")
    save_annotations([_annotation()], path)
    lines = open(path).read().splitlines()
    lines.append("v0,notanumber,3.0,0,0,0")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    with pytest.raises(ParseError):
        load_annotations(path)


def test_detections_roundtrip(tmp_path):
    dets = [DetectionRecord("v0", 0.25, 3, 0.75, (0.1, 0.2, 0.3, 0.4)),
            DetectionRecord("v1", 1.5, 0, 1.0)]
    path = os.path.join(tmp_path, "det.csv")
    save_detections(dets, path)
    assert load_detections(path) == dets


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    cfg = ModelConfig(modality_dims=(4, 3), n_actions=5, s_enc=2, s_ant=3,
                      hidden=6, dropout_p=0.25, modality_names=("app", "obj"))
    model = RUModel(cfg, rng=np.random.default_rng(8))
    model.stages_done[0].update({"scp", "branch"})
    path = os.path.join(tmp_path, "m.ruck")
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert back.config == cfg
    assert back.arch == model.arch
    assert back.default_fusion == model.default_fusion
    assert back.stages_done == model.stages_done
    for (na, pa), (nb, pb) in zip(model.named_parameters(),
                                  back.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)


def test_checkpoint_forward_identical_after_reload(tmp_path):
    cfg = ModelConfig(modality_dims=(4, 3), n_actions=5, s_enc=2, s_ant=3,
                      hidden=6, dropout_p=0.0)
    model = RUModel(cfg, rng=np.random.default_rng(1))

    class _S:
        features = [np.random.default_rng(2).normal(size=(cfg.n_steps, d))
                    for d in cfg.modality_dims]
    path = os.path.join(tmp_path, "m.ruck")
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    a = model.forward([_S()], training=False)
    b = back.forward([_S()], training=False)
    for oa, ob in zip(a, b):
        np.testing.assert_array_equal(oa.fused_scores.data, ob.fused_scores.data)


def test_checkpoint_rejects_corruption(tmp_path):
    cfg = ModelConfig(modality_dims=(3,), n_actions=4, hidden=4, dropout_p=0.0)
    model = RUModel(cfg, rng=np.random.default_rng(0))
    path = os.path.join(tmp_path, "m.ruck")
    save_checkpoint(model, path)
    blob = open(path, "rb").read()
    for mutant in (blob[:-9], blob + b"xx", b"JUNK" + blob[4:]):
        bad = os.path.join(tmp_path, "bad.ruck")
        with open(bad, "wb") as f:
            f.write(mutant)
        with pytest.raises(ParseError):
            load_checkpoint(bad)


def test_annotation_and_detection_validation():
    with pytest.raises(DataError):
        ActionAnnotation("v", 2.0, 2.0, 0, 0, 0)
    with pytest.raises(DataError):
        ActionAnnotation("v", 1.0, 2.0, -1, 0, 0)
    with pytest.raises(DataError):
        DetectionRecord("v", 1.0, 0, 1.5)
    with pytest.raises(DataError):
        DetectionRecord("v", 1.0, -2, 0.5)
