"""Pair mining tests: subdivision, matching, cropping, manifests, keypoints."""

import numpy as np
import pytest
from PIL import Image
from scipy.ndimage import gaussian_filter

from refinpaint.keypoints import Keypoint, detect_and_describe, match_knn
from refinpaint.pairs import (ImagePairRecord, PairRejected, crop_pair,
                              mine_pairs, read_manifest, subdivide,
                              write_manifest)


def smooth_texture(seed, size=160):
    rng = np.random.default_rng(seed)
    base = gaussian_filter(rng.normal(size=(size, size)), 3.0)
    base = (base - base.min()) / (base.max() - base.min())
    return (base * 255).astype(np.uint8)


class TestSubdivide:
    def test_512_gives_five_256_views(self):
        img = np.arange(512 * 512 * 3, dtype=np.uint8).reshape(512, 512, 3)
        subs = subdivide(img)
        assert len(subs) == 5
        assert all(s.shape == (256, 256, 3) for s in subs)

    def test_quadrants_tile_the_image(self):
        img = np.random.default_rng(0).integers(0, 255, (8, 8), dtype=np.uint8)
        q = subdivide(img)
        top = np.concatenate([q[0], q[1]], axis=1)
        bottom = np.concatenate([q[2], q[3]], axis=1)
        assert np.array_equal(np.concatenate([top, bottom], axis=0), img)

    def test_center_view_spans_the_middle(self):
        img = np.random.default_rng(1).integers(0, 255, (8, 12), dtype=np.uint8)
        center = subdivide(img)[4]
        assert np.array_equal(center, img[2:6, 3:9])

    def test_degenerate_2x2(self):
        img = np.arange(4, dtype=np.uint8).reshape(2, 2)
        subs = subdivide(img)
        assert all(s.shape == (1, 1) for s in subs)

    def test_odd_dims_rejected(self):
        with pytest.raises(ValueError, match="even"):
            subdivide(np.zeros((5, 6), dtype=np.uint8))


class TestMatchKnn:
    def test_clear_winner_accepted(self):
        a = np.array([[1.0, 0.0]])
        b = np.array([[1.0, 0.0], [0.0, 1.0]])
        matches = match_knn(a, b, ratio_threshold=0.7)
        assert matches == [(0, 0, 0.0)]

    def test_ambiguous_rejected(self):
        a = np.array([[0.5, 0.5]])
        b = np.array([[1.0, 0.0], [0.0, 1.0]])   # equidistant: ratio 1.0
        assert match_knn(a, b, ratio_threshold=0.7) == []

    def test_half_ratio_boundary_is_strict(self):
        a = np.array([[0.0]])
        b = np.array([[0.7], [1.0]])   # ratio exactly 0.7
        assert match_knn(a, b, ratio_threshold=0.7) == []
        assert len(match_knn(a, b, ratio_threshold=0.71)) == 1

    def test_single_candidate_uses_absolute_threshold(self):
        a = np.array([[0.0, 0.0]])
        near = np.array([[0.3, 0.0]])
        far = np.array([[0.9, 0.0]])
        assert len(match_knn(a, near, absolute_threshold=0.5)) == 1
        assert match_knn(a, far, absolute_threshold=0.5) == []

    def test_self_match_set(self):
        rng = np.random.default_rng(2)
        d = rng.normal(size=(5, 8))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        matches = match_knn(d, d, ratio_threshold=0.7)
        assert [(ia, ib) for ia, ib, _ in matches] == [(i, i) for i in range(5)]

    def test_cross_check_removes_asymmetric_matches(self):
        a = np.array([[0.0], [0.05]])
        b = np.array([[0.0], [1.0]])
        plain = match_knn(a, b, ratio_threshold=0.9)
        checked = match_knn(a, b, ratio_threshold=0.9, cross_check=True)
        assert len(checked) <= len(plain)
        for ia, ib, _ in checked:
            assert np.abs(a[ia] - b[ib]).sum() <= np.abs(a - b[ib]).sum(axis=1).min() + 1e-12

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            match_knn(np.zeros((0, 4)), np.zeros((3, 4)))


def fake_kp(y, x):
    return Keypoint(y=float(y), x=float(x), scale=1.0, orientation=0.0,
                    descriptor=np.zeros(128))


class TestCropPair:
    def test_centers_follow_matched_centroids(self):
        rng = np.random.default_rng(3)
        img_a = rng.integers(0, 255, (100, 100, 3), dtype=np.uint8)
        img_b = rng.integers(0, 255, (100, 100, 3), dtype=np.uint8)
        kps_a = [fake_kp(40, 50), fake_kp(44, 54), fake_kp(36, 46), fake_kp(40, 50)]
        kps_b = [fake_kp(60, 30), fake_kp(64, 34), fake_kp(56, 26), fake_kp(60, 30)]
        matches = [(i, i, 0.1) for i in range(4)]
        ca, cb, centers = crop_pair(img_a, img_b, matches, kps_a, kps_b, crop_size=32)
        assert (centers["cy_in"], centers["cx_in"]) == (40, 50)
        assert (centers["cy_ref"], centers["cx_ref"]) == (60, 30)
        assert np.array_equal(ca, img_a[24:56, 34:66])
        assert np.array_equal(cb, img_b[44:76, 14:46])

    def test_centers_clamped_to_keep_crop_inside(self):
        rng = np.random.default_rng(4)
        img = rng.integers(0, 255, (64, 64, 3), dtype=np.uint8)
        kps = [fake_kp(1, 1)] * 4
        matches = [(i, i, 0.1) for i in range(4)]
        ca, cb, centers = crop_pair(img, img, matches, kps, kps, crop_size=32)
        assert ca.shape == (32, 32, 3)
        assert centers["cy_in"] >= 16 and centers["cx_in"] >= 16

    def test_too_few_matches_rejected(self):
        img = np.zeros((64, 64, 3), dtype=np.uint8)
        with pytest.raises(PairRejected, match="matches"):
            crop_pair(img, img, [(0, 0, 0.1)], [fake_kp(2, 2)], [fake_kp(2, 2)],
                      crop_size=32)

    def test_small_image_rejected(self):
        img = np.zeros((16, 16, 3), dtype=np.uint8)
        kps = [fake_kp(4, 4)] * 4
        matches = [(i, i, 0.1) for i in range(4)]
        with pytest.raises(PairRejected, match="smaller"):
            crop_pair(img, img, matches, kps, kps, crop_size=32)


class TestKeypoints:
    def test_uniform_image_yields_no_keypoints(self):
        assert detect_and_describe(np.full((96, 96), 128, dtype=np.uint8)) == []

    def test_detection_is_deterministic(self):
        img = smooth_texture(5)
        a = detect_and_describe(img)
        b = detect_and_describe(img)
        assert len(a) == len(b)
        for ka, kb in zip(a, b):
            assert (ka.y, ka.x) == (kb.y, kb.x)
            assert np.array_equal(ka.descriptor, kb.descriptor)

    def test_descriptors_are_unit_norm(self):
        for kp in detect_and_describe(smooth_texture(6)):
            assert np.linalg.norm(kp.descriptor) == pytest.approx(1.0, abs=1e-8)
            assert kp.descriptor.shape == (128,)

    def test_shift_invariance_of_positions_and_descriptors(self):
        img = smooth_texture(7, size=160)
        dy, dx = 3, 5
        shifted = np.roll(img, (dy, dx), axis=(0, 1))
        kps_a = detect_and_describe(img)
        kps_b = detect_and_describe(shifted)
        assert kps_a and kps_b
        matches = match_knn(np.stack([k.descriptor for k in kps_a]),
                            np.stack([k.descriptor for k in kps_b]),
                            ratio_threshold=0.8)
        assert len(matches) >= 3
        dys, dxs, cosines = [], [], []
        for ia, ib, _ in matches:
            dys.append(kps_b[ib].y - kps_a[ia].y)
            dxs.append(kps_b[ib].x - kps_a[ia].x)
            cosines.append(float(kps_a[ia].descriptor @ kps_b[ib].descriptor))
        assert abs(np.median(dys) - dy) <= 1.0
        assert abs(np.median(dxs) - dx) <= 1.0
        assert np.median(cosines) >= 0.95


class TestManifest:
    def test_record_json_roundtrip(self):
        rec = ImagePairRecord(input="input/a.png", reference="reference/a.png",
                              matches=7, cx_in=10, cy_in=20, cx_ref=30, cy_ref=40)
        assert ImagePairRecord.from_json(rec.to_json()) == rec

    def test_write_read_roundtrip(self, tmp_path):
        recs = [ImagePairRecord(input=f"input/{i}.png", reference=f"reference/{i}.png",
                                matches=i + 4, cx_in=i, cy_in=i, cx_ref=i, cy_ref=i)
                for i in range(3)]
        path = tmp_path / "manifest.jsonl"
        write_manifest(recs, path)
        assert read_manifest(path) == recs


class TestMinePairs:
    def _write_corpus(self, root, shift):
        (root / "a").mkdir(parents=True)
        (root / "b").mkdir(parents=True)
        for i in range(2):
            img = smooth_texture(20 + i, size=160)
            Image.fromarray(img).save(root / "a" / f"img{i}.png")
            Image.fromarray(np.roll(img, shift, axis=(0, 1))).save(root / "b" / f"img{i}.png")

    def test_end_to_end_on_shifted_corpus(self, tmp_path):
        self._write_corpus(tmp_path, shift=(2, 3))
        records, rejected = mine_pairs(tmp_path / "a", tmp_path / "b",
                                       tmp_path / "out", crop_size=48,
                                       min_matches=4, ratio_threshold=0.8)
        assert len(records) >= 1
        for rec in records:
            crop = np.asarray(Image.open(tmp_path / "out" / rec.input))
            assert crop.shape == (48, 48, 3)
            assert rec.matches >= 4
        assert read_manifest(tmp_path / "out" / "manifest.jsonl") == records

    def test_mining_is_deterministic(self, tmp_path):
        self._write_corpus(tmp_path, shift=(2, 3))
        r1, _ = mine_pairs(tmp_path / "a", tmp_path / "b", tmp_path / "o1",
                           crop_size=48, ratio_threshold=0.8)
        r2, _ = mine_pairs(tmp_path / "a", tmp_path / "b", tmp_path / "o2",
                           crop_size=48, ratio_threshold=0.8)
        assert r1 == r2
