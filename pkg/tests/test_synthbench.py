import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from climrt.synthbench import experiments as ex
from climrt.synthbench.metrics import center_errors, overlaps, precision_at, precision_curve, success_auc
from climrt.synthbench.ope import OracleTracker, StaticTracker, evaluate, mean_iou, run_ope, run_sequence
from climrt.synthbench.scene import (
    OccluderEvent,
    SceneConfig,
    SceneConfigError,
    generate_sequence,
    random_scene,
    square_triplets,
)
from climrt.synthbench.seqio import find_sequences, load_annotation, load_sequence, read_trajectory, save_sequence, write_trajectory
from climrt.tracker.geometry import BBox
from climrt.tracker.model import VARIANTS, TrackerConfig, init_climrt

TINY = dict(template_size=16, search_size=32, backbone_widths=(4, 4, 4, 4, 4), climnet_widths=(4, 4, 4, 4), token_dim=4, heads=2, head_width=4)


def rand_xywh(rng, n, spread=60.0):
    xy = rng.uniform(0, spread, (n, 2))
    wh = rng.uniform(1, 30, (n, 2))
    return [tuple(v) for v in np.hstack([xy, wh])]


def short_sequences(n=2, length=4):
    return [generate_sequence(random_scene(np.random.default_rng([7, i]), length=length, frame_size=(64, 64)), seed=i) for i in range(n)]


# ---------------------------------------------------------------- scene generation


@pytest.mark.trivial
def test_zero_velocity_constant_box():
    frames, ann = generate_sequence(SceneConfig(velocity=(0.0, 0.0), length=5))
    assert len(frames) == len(ann) == 5
    assert all(b == ann.boxes[0] for b in ann.boxes)


@pytest.mark.trivial
def test_linear_motion():
    cfg = SceneConfig(velocity=(2.0, 0.0), length=11)
    _, ann = generate_sequence(cfg)
    x0 = ann.boxes[0].xywh()[0]
    assert ann.boxes[10].xywh()[0] == pytest.approx(x0 + 20, abs=1e-12)


@pytest.mark.trivial
def test_same_seed_is_bit_identical():
    cfg = random_scene(np.random.default_rng(3))
    a, ann_a = generate_sequence(cfg, seed=9)
    b, ann_b = generate_sequence(cfg, seed=9)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert ann_a.boxes == ann_b.boxes


def test_aspect_modulation_preserves_area():
    _, ann = generate_sequence(SceneConfig(aspect_amplitude=0.35, velocity=(0.5, 0.0), length=20))
    areas = [b.w * b.h for b in ann.boxes]
    np.testing.assert_allclose(areas, areas[0], rtol=1e-12)
    assert ann.aspect_change.any()


def test_occluder_sets_flag():
    ev = OccluderEvent(3, 6, 36.0, 6.0)
    frames, ann = generate_sequence(SceneConfig(velocity=(0.0, 0.0), occluders=(ev,), length=8))
    assert list(ann.occluded) == [False] * 3 + [True] * 3 + [False] * 2
    np.testing.assert_allclose(frames[4][:, 37], 0.15, atol=1 / 255)


def test_invalid_configs():
    with pytest.raises(SceneConfigError):
        generate_sequence(SceneConfig(velocity=(10.0, 0.0), length=30))
    with pytest.raises(SceneConfigError):
        generate_sequence(SceneConfig(length=0))
    with pytest.raises(SceneConfigError):
        generate_sequence(SceneConfig(aspect_amplitude=1.0))


@given(st.integers(0, 10_000))
def test_pixels_match_annotation(seed):
    cfg = random_scene(np.random.default_rng(seed), length=6, frame_size=(64, 64))
    frames, ann = generate_sequence(cfg, seed=seed)
    color = np.round(np.array(cfg.target_color) * 255) / 255
    for frame, box, occ in zip(frames, ann.boxes, ann.occluded):
        if occ:
            continue
        x1, y1, x2, y2 = (int(np.ceil(v - 0.5)) for v in box.corners())
        interior = frame[y1:y2, x1:x2]
        hit = np.all(np.abs(interior - color) < 1e-6, axis=-1)
        assert hit.mean() >= 0.5


def test_square_triplets_middle_is_midpoint():
    a, m, b = square_triplets(20, 32, seed=1)
    assert a.shape == m.shape == b.shape == (20, 3, 32, 32)
    for i in range(20):
        masks = [np.any(f[i] != 0.2, axis=0) for f in (a, m, b)]
        centres = [np.argwhere(mk).mean(0) for mk in masks]
        np.testing.assert_allclose(centres[1], (centres[0] + centres[2]) / 2)


# ---------------------------------------------------------------- metrics


@pytest.mark.trivial
def test_precision_examples(rng):
    gt = rand_xywh(rng, 10)
    assert precision_at(gt, gt) == 1.0
    far = [(x + 100, y, w, h) for x, y, w, h in gt]
    assert precision_at(far, gt) == 0.0
    with pytest.raises(ValueError):
        precision_at(gt[:3], gt)


def test_precision_hand_built_ten_frames():
    gt = [(0.0, 0.0, 10.0, 10.0)] * 10
    offsets = [0, 5, 19.9, 20, 20.1, 30, 0, 14.1, 25, 100]
    res = [(d, 0.0, 10.0, 10.0) for d in offsets]
    assert precision_at(res, gt) == 0.6


@pytest.mark.trivial
def test_success_examples(rng):
    gt = rand_xywh(rng, 10)
    curve, auc = success_auc(gt, gt)
    assert np.all(curve[:-1] == 1.0) and curve[-1] == 0.0
    assert abs(1.0 - auc) <= 1 / 21 + 1e-9
    disjoint = [(x + 500, y, w, h) for x, y, w, h in gt]
    curve, auc = success_auc(disjoint, gt)
    assert auc == 0.0 and curve[0] == 0.0


@pytest.mark.parametrize("seed", range(100))
def test_precision_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 30))
    gt, res = rand_xywh(rng, n), rand_xywh(rng, n)
    thr = float(rng.uniform(0, 60))
    assert abs(precision_at(res, gt, thr) - oracles.precision(res, gt, thr)) <= 1e-5


@pytest.mark.parametrize("seed", range(100))
def test_success_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 30))
    gt = rand_xywh(rng, n, spread=20.0)
    res = [(x + rng.normal(0, 3), y + rng.normal(0, 3), w * rng.uniform(0.7, 1.3), h) for x, y, w, h in gt]
    curve, auc = success_auc(res, gt)
    ref_curve, ref_auc = oracles.success(res, gt)
    assert np.abs(curve - np.array(ref_curve)).max() <= 1e-5
    assert abs(auc - ref_auc) <= 1e-5


@given(st.integers(0, 10_000))
def test_metric_curves_are_monotone(seed):
    rng = np.random.default_rng(seed)
    gt, res = rand_xywh(rng, 12, 30.0), rand_xywh(rng, 12, 30.0)
    assert np.all(np.diff(precision_curve(res, gt)) >= 0)
    assert np.all(np.diff(success_auc(res, gt)[0]) <= 0)
    ious = overlaps(res, gt)
    assert np.all((ious >= 0) & (ious <= 1))
    assert np.all(center_errors(res, gt) >= 0)


# ---------------------------------------------------------------- OPE


@pytest.mark.trivial
def test_oracle_tracker_hits_analytic_maximum():
    seqs = short_sequences(3, 6)
    report, trajs = run_ope(OracleTracker, seqs)
    assert report.precision == 1.0
    assert abs(1.0 - report.auc) <= 1 / 21 + 1e-9
    assert report.frames == 18 and report.sequences == 3 and report.failures == 0
    assert all(mean_iou(t, ann) == pytest.approx(1.0, abs=1e-12) for t, (_, ann) in zip(trajs, seqs))


@pytest.mark.trivial
def test_static_tracker_is_dominated():
    seqs = [generate_sequence(SceneConfig(velocity=(1.5, 0.5), length=20), seed=0)]
    oracle, _ = run_ope(OracleTracker, seqs)
    static, _ = run_ope(StaticTracker, seqs)
    assert static.auc < oracle.auc


def test_failing_frames_repeat_last_box():
    class Flaky(StaticTracker):
        def update(self, frame):
            raise RuntimeError("boom")

    frames, ann = short_sequences(1, 4)[0]
    res = run_sequence(Flaky(), frames, ann)
    assert res.failures == [1, 2, 3]
    assert res.trajectory == [ann.boxes[0]] * 4


def test_report_recomputes_from_dumped_trajectory(tmp_path):
    seqs = short_sequences(2, 5)
    report, trajs = run_ope(StaticTracker, seqs)
    reloaded = []
    for i, traj in enumerate(trajs):
        write_trajectory(tmp_path / f"{i}.txt", traj)
        reloaded.append(read_trajectory(tmp_path / f"{i}.txt"))
    again = evaluate(reloaded, [ann for _, ann in seqs])
    assert again.to_text() == report.to_text()
    prec = np.mean([precision_at(t, ann.boxes) for t, (_, ann) in zip(reloaded, seqs)])
    assert report.precision == pytest.approx(prec, abs=1e-5)


def test_parallel_evaluation_matches_serial():
    seqs = short_sequences(3, 4)
    a, ta = run_ope(StaticTracker, seqs, jobs=1)
    b, tb = run_ope(StaticTracker, seqs, jobs=3)
    assert a.to_text() == b.to_text() and ta == tb


def test_report_text_excludes_timing_by_default():
    report, _ = run_ope(OracleTracker, short_sequences(1, 3))
    assert "fps" not in report.to_text()
    assert "fps=" in report.to_text(timing=True)
    assert report.success_csv().splitlines()[0] == "threshold,success"
    assert len(report.success_csv().splitlines()) == 22


def test_sequence_directory_round_trip(tmp_path):
    frames, ann = short_sequences(1, 3)[0]
    save_sequence(tmp_path / "s", frames, ann)
    loaded, ann2 = load_sequence(tmp_path / "s")
    assert all(np.array_equal(a, b) for a, b in zip(frames, loaded))
    np.testing.assert_allclose([b.xywh() for b in ann2.boxes], [b.xywh() for b in ann.boxes], atol=1e-4)
    assert find_sequences(tmp_path) == [tmp_path / "s"]
    (tmp_path / "bad.txt").write_text("1,2,3\n")
    with pytest.raises(ValueError):
        load_annotation(tmp_path / "bad.txt")
    with pytest.raises(FileNotFoundError):
        find_sequences(tmp_path / "s" / "nothing")


# ---------------------------------------------------------------- sweep / ablation


def tiny(variant="ClimNet+LCT"):
    return init_climrt(TrackerConfig(**TINY, variant=variant), seed=0)


@pytest.mark.trivial
def test_sweep_emits_configured_rows():
    seqs = short_sequences(1, 4)
    rows = ex.sweep_m(tiny(), seqs)
    assert [r[0] for r in rows] == [1, 2, 3, 4, 5]
    assert all(0 <= p <= 1 and 0 <= s <= 1 for _, p, s in rows)
    assert [r[0] for r in ex.sweep_m(tiny(), seqs, m_values=(3, 1))] == [1, 3]
    assert len(ex.sweep_text(rows).splitlines()) == 7
    assert ex.sweep_csv(rows).count("\n") == 6


@pytest.mark.trivial
def test_ablation_rows_and_baseline_delta():
    seqs = short_sequences(1, 4)
    rows = ex.run_ablation({v: tiny(v) for v in VARIANTS}, seqs)
    assert [r.variant for r in rows] == list(VARIANTS)
    assert rows[0].d_precision == 0.0 and rows[0].d_success == 0.0
    assert len(ex.ablation_csv(rows).splitlines()) == 6
    with pytest.raises(ex.MissingWeightsError):
        ex.run_ablation({"Baseline": tiny("Baseline")}, seqs)


def test_reference_metadata_is_table_shaped():
    assert set(ex.REFERENCE_ABLATION) == set(VARIANTS)
    assert ex.REFERENCE_ABLATION["ClimNet+LCT"] == (0.770, 3.8, 0.588, 3.2)
    assert ex.REFERENCE_M_BEST["m"] == 1
