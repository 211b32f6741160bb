import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ampose.data import (
    DataError,
    Dataset,
    PinholeCamera,
    PoseSample,
    bone_lengths,
    convert_records,
    denormalize_2d,
    load_dataset,
    normalize_2d,
    root_relative_3d,
    save_dataset,
    synth_dataset,
)
from ampose.skeleton import load_skeleton

H36M = load_skeleton("h36m17")


class TestNormalize:
    def test_centre(self):
        np.testing.assert_array_equal(normalize_2d([[500, 300]], 1000, 600), [[0.0, 0.0]])

    def test_corner(self):
        np.testing.assert_allclose(normalize_2d([[0, 0]], 1000, 600), [[-1.0, -0.6]])

    def test_worked_example(self):
        np.testing.assert_allclose(normalize_2d([[250, 300]], 1000, 1000), [[-0.5, -0.4]], atol=1e-15)

    @pytest.mark.parametrize("w, h", [(0, 10), (10, -1)])
    def test_bad_size(self, w, h):
        with pytest.raises(DataError):
            normalize_2d([[1, 1]], w, h)

    @settings(max_examples=100)
    @given(arrays(np.float64, (4, 2), elements=st.floats(-5000, 5000)), st.floats(1, 4000), st.floats(1, 4000))
    def test_round_trip(self, px, w, h):
        back = denormalize_2d(normalize_2d(px, w, h), w, h)
        assert np.max(np.abs(back - px)) < 1e-12 * max(1.0, np.abs(px).max(), w, h)


class TestRootRelative:
    def test_root_zero_and_idempotent(self, rng):
        p = rng.normal(scale=500, size=(17, 3))
        r = root_relative_3d(p, 0)
        np.testing.assert_array_equal(r[0], 0.0)
        np.testing.assert_array_equal(root_relative_3d(r, 0), r)

    def test_distances_preserved(self, rng):
        p = rng.normal(scale=500, size=(17, 3))
        r = root_relative_3d(p, 4)
        d0 = np.linalg.norm(p[:, None] - p[None], axis=-1)
        d1 = np.linalg.norm(r[:, None] - r[None], axis=-1)
        np.testing.assert_allclose(d0, d1, rtol=0, atol=1e-12)

    def test_bad_root(self):
        with pytest.raises(DataError, match="out of range"):
            root_relative_3d(np.zeros((3, 3)), 3)


def write_lines(path, recs):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in recs))


def valid_record(rng, j=17):
    p3 = rng.normal(size=(j, 3))
    p3[0] = 0.0
    return {"pose2d": rng.normal(size=2 * j).tolist(), "pose3d": p3.reshape(-1).tolist()}


class TestLoad:
    def test_three_records(self, tmp_path, rng):
        write_lines(tmp_path / "d.jsonl", [valid_record(rng) for _ in range(3)])
        assert len(load_dataset(tmp_path / "d.jsonl", H36M)) == 3

    def test_wrong_joint_count_names_index(self, tmp_path, rng):
        write_lines(tmp_path / "d.jsonl", [valid_record(rng), valid_record(rng, 16)])
        with pytest.raises(DataError, match=r"record 1: .*16 joints"):
            load_dataset(tmp_path / "d.jsonl", H36M)

    def test_malformed(self, tmp_path, rng):
        write_lines(tmp_path / "d.jsonl", [valid_record(rng), "{not json"])
        with pytest.raises(DataError, match="record 1: malformed"):
            load_dataset(tmp_path / "d.jsonl", H36M)

    def test_non_finite(self, tmp_path, rng):
        rec = valid_record(rng)
        rec["pose2d"][3] = float("nan")
        (tmp_path / "d.jsonl").write_text(json.dumps(rec) + "\n")
        with pytest.raises(DataError, match="record 0: .*non-finite"):
            load_dataset(tmp_path / "d.jsonl", H36M)

    def test_not_root_relative(self, tmp_path, rng):
        rec = valid_record(rng)
        rec["pose3d"][0] = 1.0
        write_lines(tmp_path / "d.jsonl", [rec])
        with pytest.raises(DataError, match="root-relative"):
            load_dataset(tmp_path / "d.jsonl", H36M)

    def test_missing_3d(self, tmp_path, rng):
        rec = valid_record(rng)
        del rec["pose3d"]
        write_lines(tmp_path / "d.jsonl", [rec])
        with pytest.raises(DataError, match="missing 'pose3d'"):
            load_dataset(tmp_path / "d.jsonl", H36M)
        assert load_dataset(tmp_path / "d.jsonl", H36M, require_3d=False)[0].pose3d is None

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_dataset(tmp_path / "x.jsonl", H36M)

    def test_round_trip_bit_exact(self, tmp_path):
        data = synth_dataset(5, 20, H36M)
        save_dataset(data, tmp_path / "d.jsonl")
        back = load_dataset(tmp_path / "d.jsonl", H36M)
        assert back.inputs().tobytes() == data.inputs().tobytes()
        assert back.targets().tobytes() == data.targets().tobytes()
        assert back[3].meta == data[3].meta


class TestConvert:
    def test_convert(self, tmp_path, rng):
        xyz = rng.normal(scale=300, size=(17, 3)) + 4000
        px = rng.uniform(0, 1000, size=(17, 2))
        rec = {"keypoints2d_px": px.reshape(-1).tolist(), "joints3d_mm": xyz.reshape(-1).tolist(), "width": 1000, "height": 1002}
        write_lines(tmp_path / "raw.jsonl", [rec])
        data = convert_records(tmp_path / "raw.jsonl", H36M)
        np.testing.assert_allclose(data[0].pose2d, normalize_2d(px, 1000, 1002))
        np.testing.assert_array_equal(data[0].pose3d[0], 0.0)

    def test_convert_error_index(self, tmp_path):
        write_lines(tmp_path / "raw.jsonl", [{"width": 1}])
        with pytest.raises(DataError, match="record 0"):
            convert_records(tmp_path / "raw.jsonl", H36M)


class TestSynth:
    def test_deterministic(self):
        a, b = synth_dataset(7, 10, H36M), synth_dataset(7, 10, H36M)
        assert a.inputs().tobytes() == b.inputs().tobytes()
        assert a.targets().tobytes() == b.targets().tobytes()
        assert not np.array_equal(a.targets(), synth_dataset(8, 10, H36M).targets())

    @pytest.mark.parametrize("name", ["h36m17", "h36m16"])
    def test_invariants(self, name):
        skel = load_skeleton(name)
        data = synth_dataset(1, 100, skel)
        assert len(data) == 100
        y, x = data.targets(), data.inputs()
        assert y.shape == (100, skel.num_joints, 3) and x.shape == (100, skel.num_joints, 2)
        assert np.all(np.isfinite(y)) and np.all(np.isfinite(x))
        np.testing.assert_array_equal(y[:, skel.root], 0.0)
        lengths = bone_lengths(y, skel.edges)
        assert np.max(np.abs(lengths - lengths[0])) < 1e-9
        assert 1400 < np.ptp(y[..., 1], axis=1).max() < 2000  # roughly human height

    def test_reprojection(self):
        cam = PinholeCamera()
        data = synth_dataset(2, 50, H36M, cam)
        for s in data.samples:
            px = cam.project(s.pose3d + np.array(s.meta["root_cam"]))
            assert np.max(np.abs(normalize_2d(px, cam.width, cam.height) - s.pose2d)) < 1e-9

    def test_bad_count(self):
        with pytest.raises(DataError):
            synth_dataset(0, 0, H36M)


def test_targets_require_3d():
    ds = Dataset(H36M, [PoseSample(np.zeros((17, 2)), None)])
    with pytest.raises(DataError):
        ds.targets()
