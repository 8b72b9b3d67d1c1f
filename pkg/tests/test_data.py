import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from liqa.data.augment import AugmentConfig, AugmentParams, apply, augment, warp
from liqa.data.clahe import clahe, equalize_hist
from liqa.data.dataset import build_dataset, generate_dataset, load_split
from liqa.data.manifest import (DatasetManifest, FrameRecord, apply_split, filter_sweeps,
                                largest_remainder, leakage, split_patients)
from liqa.data.pgm import PGMError, read_pgm, write_pgm
from liqa.data.phantom import PhantomGeometry, frame_mask, plan_patient, render_frame
from liqa.data.preprocess import pad_to_square, preprocess, preprocess_mask


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- PGM ------------------------------------------------------------------

def test_pgm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (7, 11), dtype=np.uint8)
    write_pgm(tmp_path / "a.pgm", img)
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), img)
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n11 7\n255\n")


def test_pgm_comments_and_errors(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x05\xff")
    np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), [[5, 255]])
    (tmp_path / "p2.pgm").write_bytes(b"P2\n1 1\n255\n7\n")
    with pytest.raises(PGMError):
        read_pgm(tmp_path / "p2.pgm")
    with pytest.raises(PGMError):
        write_pgm(tmp_path / "x.pgm", np.full((2, 2), 300))


# -- preprocessing --------------------------------------------------------

def test_pad_to_square():
    img = np.ones((100, 80), dtype=np.uint8)
    sq = pad_to_square(img)
    assert sq.shape == (100, 100)
    assert sq[:, :10].sum() == 0 and sq[:, 90:].sum() == 0 and sq[:, 10:90].all()
    odd = pad_to_square(np.ones((4, 1)))
    np.testing.assert_array_equal(odd.sum(axis=0), [0, 4, 0, 0])   # 1 left, 2 right
    square = np.arange(9).reshape(3, 3)
    assert pad_to_square(square) is square


@pytest.mark.parametrize("v", [0, 1, 77, 255])
def test_constant_image_stays_constant(v):
    out = preprocess(np.full((30, 30), v, dtype=np.uint8), size=17)
    np.testing.assert_allclose(out, v / 255.0, rtol=1e-6)
    assert out.dtype == np.float32 and out.shape == (17, 17)


def test_preprocess_mask_binary(rng):
    m = (rng.uniform(size=(56, 72)) > 0.7).astype(np.uint8) * 255
    out = preprocess_mask(m, 64)
    assert set(np.unique(out)) <= {0, 1}


# -- CLAHE ----------------------------------------------------------------

@pytest.mark.parametrize("v", [0, 40, 255])
def test_clahe_constant_unchanged(v):
    img = np.full((32, 48), v, dtype=np.uint8)
    np.testing.assert_array_equal(clahe(img), img)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(8, 40), st.integers(8, 40))
def test_clahe_unclipped_single_tile_is_global_he(seed, h, w):
    img = np.random.default_rng(seed).integers(0, 256, (h, w)).astype(np.uint8)
    np.testing.assert_array_equal(clahe(img, clip_limit=math.inf, tiles=(1, 1)), equalize_hist(img))


def test_clahe_range_shape_and_contrast(rng):
    img = np.clip(rng.normal(100, 8, (45, 61)), 0, 255).astype(np.uint8)
    out = clahe(img)
    assert out.shape == img.shape and out.dtype == np.uint8
    assert out.std() > img.std()


# -- augmentation ----------------------------------------------------------

def test_identity_params_are_exact(rng):
    img = rng.integers(0, 256, (24, 24), dtype=np.uint8)
    mask = np.where(rng.uniform(size=(24, 24)) > 0.5, 255, 0).astype(np.uint8)
    a, m = apply(img, mask, AugmentParams.identity())
    np.testing.assert_array_equal(a, img)
    np.testing.assert_array_equal(m, mask)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_augmented_mask_stays_binary_and_matches_image_geometry(seed):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, (32, 32), dtype=np.uint8)
    mask = np.zeros((32, 32), dtype=np.uint8)
    mask[8:20, 10:25] = 255
    (a, m), (b, n) = augment(img, mask, seed, ("P0000", 0, 1))
    for out in (m, n):
        assert set(np.unique(out)) <= {0, 255}
    # The mask path applies the same affine as the image path.
    p = AugmentParams(rotation=0.2, shift=(1.5, -2.0), zoom=1.05)
    via_image = np.where(warp(mask, p, order=0) > 127, 255, 0)
    _, via_mask = apply(mask, mask, AugmentParams(rotation=0.2, shift=(1.5, -2.0), zoom=1.05))
    np.testing.assert_array_equal(via_image, via_mask)


def test_augment_is_order_independent(rng):
    img = rng.integers(0, 256, (20, 20), dtype=np.uint8)
    mask = np.zeros_like(img)
    first = augment(img, mask, 3, ("P0001", 2, 5))
    augment(img, mask, 3, ("P0009", 1, 1))          # unrelated call in between
    again = augment(img, mask, 3, ("P0001", 2, 5))
    for (a, m), (b, n) in zip(first, again):
        assert a.tobytes() == b.tobytes() and m.tobytes() == n.tobytes()
    assert len(first) == AugmentConfig().versions == 2


# -- phantom / manifest ----------------------------------------------------

def test_phantom_label_matches_mask():
    geo = PhantomGeometry()
    plans = plan_patient(0, "P0000", geo)
    assert 1 <= sum(p.window_start >= 0 for p in plans) <= 3
    for s, plan in enumerate(plans):
        if plan.window_start < 0:
            continue
        for f in range(plan.window_start - 2, plan.window_start + plan.window_length + 2):
            if not 0 <= f < geo.frames_per_sweep:
                continue
            img, mask = render_frame(0, "P0000", s, f, plan, geo)
            assert img.shape == mask.shape == (geo.height, geo.width)
            assert set(np.unique(mask)) <= {0, 255}
            inside = plan.window_start <= f < plan.window_start + plan.window_length
            assert bool(mask.any()) == inside == bool(frame_mask(plan, f, geo).any())


def test_generate_counts_and_determinism(tmp_path):
    a = generate_dataset(2, seed=5, out_dir=tmp_path / "a")
    b = generate_dataset(2, seed=5, out_dir=tmp_path / "b", workers=2)
    assert len(a) == 2 * 6 * 140
    assert digest(tmp_path / "a" / "manifest.raw.jsonl") == digest(tmp_path / "b" / "manifest.raw.jsonl")
    for rec in a.records[::97]:
        assert digest(tmp_path / "a" / rec.image_path) == digest(tmp_path / "b" / rec.image_path)
        assert rec.label == int(read_pgm(tmp_path / "a" / rec.mask_path).any())
    assert all(r.frame_index < 140 for r in a.records)


def test_labels_only_mode_matches_rendered(tmp_path):
    full = generate_dataset(1, seed=2, out_dir=tmp_path / "f")
    fast = generate_dataset(1, seed=2, out_dir=tmp_path / "q", write_images=False)
    assert [r.label for r in full.records] == [r.label for r in fast.records]


def _rec(pid, sweep, frame, label, split=None):
    return FrameRecord(pid, sweep, "transverse", frame, f"{pid}{sweep}{frame}.pgm", "m.pgm", label,
                       split=split)


def test_filter_keeps_whole_positive_sweeps():
    recs = [_rec("A", 0, f, int(f == 70)) for f in range(140)] + [_rec("A", 1, f, 0) for f in range(140)]
    m = DatasetManifest(recs, {})
    out = filter_sweeps(m)
    assert len(out) == 140 and {r.sweep_id for r in out.records} == {0}
    assert out.prevalence > m.prevalence
    assert out.metadata["sweeps_dropped"] == 1
    assert out.records == recs[:140]


def test_manifest_uniqueness_and_round_trip(tmp_path):
    recs = [_rec("A", 0, 0, 1, "train"), _rec("A", 0, 1, 0, "train")]
    m = DatasetManifest(recs, {"seed": 1})
    m.write(tmp_path / "m.jsonl")
    back = DatasetManifest.read(tmp_path / "m.jsonl")
    assert back.records == recs and back.metadata["seed"] == 1
    first = (tmp_path / "m.jsonl").read_text().splitlines()[0]
    assert '"type": "metadata"' in first or '"type":"metadata"' in first
    with pytest.raises(ValueError):
        DatasetManifest(recs + [recs[0]], {})
    with pytest.raises(ValueError):
        _rec("A", 0, 140, 0)


def test_largest_remainder():
    assert largest_remainder(300, (0.7, 0.1, 0.2)) == [210, 30, 60]
    assert largest_remainder(10, (0.7, 0.1, 0.2)) == [7, 1, 2]
    assert largest_remainder(60, (0.7, 0.1, 0.2)) == [42, 6, 12]
    assert sum(largest_remainder(7, (0.7, 0.1, 0.2))) == 7


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 120), st.integers(0, 1000))
def test_split_is_leak_free(n, seed):
    patients = [f"P{i:04d}" for i in range(n)]
    assignment = split_patients(patients, seed=seed)
    assert sorted(assignment) == patients
    recs = [_rec(p, s, 0, 0) for p in patients for s in range(2)]
    m = apply_split(DatasetManifest(recs, {}), assignment)
    assert not leakage(m)
    counts = [sum(v == s for v in assignment.values()) for s in ("train", "val", "test")]
    assert counts == largest_remainder(n, (0.7, 0.1, 0.2))


def test_split_errors():
    with pytest.raises(ValueError):
        split_patients(["a", "b"], seed=0)
    with pytest.raises(ValueError):
        split_patients(["a", "b", "c"], ratios=(0.5, 0.5, 0.5))


def test_build_small_dataset(tmp_path):
    res = build_dataset(tmp_path, n_patients=4, seed=11, ratios=(0.5, 0.25, 0.25))
    final = res.final
    train_orig = [r for r in final.records if r.split == "train" and r.aug_version == 0]
    train_all = [r for r in final.records if r.split == "train"]
    assert len(train_all) == 3 * len(train_orig)
    assert not leakage(final)
    assert final.prevalence >= res.raw.prevalence
    frames = load_split(tmp_path, "train", size=32)
    assert frames.images.shape == (len(train_all), 1, 32, 32)
    assert frames.images.min() >= 0 and frames.images.max() <= 1
    np.testing.assert_array_equal(frames.labels, frames.masks.reshape(len(frames), -1).any(1))
    assert len(load_split(tmp_path, "val", size=32)) == sum(r.split == "val" for r in final.records)
