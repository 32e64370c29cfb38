import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from rectnet.lung_seg import segment_lungs
from rectnet.sampler import (AUGMENT_OPS, DatasetConfig, DatasetManifest, GridSpec, StackSource, augment,
                             augment_array, bilinear_matrix, build_dataset, extract_stack, normalize_hu,
                             sample_grid, sample_nodule_voxels)
from rectnet.volume_io import NoduleAnnotation, Volume


def _vol(data, spacing=(0.7, 0.7, 1.25)):
    data = np.asarray(data, dtype=np.int16)
    nz, ny, nx = data.shape
    return Volume((nx, ny, nz), spacing, data)


def _cube_nodule(nid=1, corner=(10, 10, 2), side=(4, 67, 1)):
    x0, y0, z0 = corner
    sx, sy, sz = side
    g = np.stack(np.meshgrid(np.arange(sx), np.arange(sy), np.arange(sz), indexing="ij"), -1).reshape(-1, 3)
    return NoduleAnnotation(nid, g + [x0, y0, z0])


# -- grid ---------------------------------------------------------------------------

def test_grid_counts_on_full_slice():
    full = np.ones((1, 512, 512), bool)
    assert len(sample_grid(full, grid=GridSpec(25))) == 441
    assert len(sample_grid(full, grid=GridSpec(4))) == 16384


def test_grid_on_empty_mask():
    assert sample_grid(np.zeros((2, 30, 30), bool)).shape == (0, 3)


def test_grid_rejects_nonpositive_multiplier():
    with pytest.raises(ValueError):
        GridSpec(0)


def test_grid_anchored_at_origin():
    pts = sample_grid(np.ones((1, 10, 10), bool), grid=GridSpec(4))
    assert {tuple(p) for p in pts.tolist()} == {(x, y, 0) for x in (0, 4, 8) for y in (0, 4, 8)}


@given(arrays(bool, st.tuples(st.integers(1, 3), st.integers(1, 20), st.integers(1, 20))), st.integers(1, 6))
def test_grid_points_are_exactly_masked_lattice(mask, step):
    pts = sample_grid(mask, grid=GridSpec(step))
    assert mask[pts[:, 2], pts[:, 1], pts[:, 0]].all()
    assert (pts[:, 0] % step == 0).all() and (pts[:, 1] % step == 0).all()
    assert len(pts) == mask[:, ::step, ::step].sum()
    keys = pts[:, 2] * 10_000 + pts[:, 1] * 100 + pts[:, 0]
    assert (np.diff(keys) > 0).all()


# -- positives ----------------------------------------------------------------------

def test_positive_rate_half_of_268():
    ann = _cube_nodule()
    assert len(ann.voxels) == 268
    assert len(sample_nodule_voxels([ann], 0.5, seed=3)) == 134


def test_positive_rate_one_takes_all():
    ann = _cube_nodule()
    assert np.array_equal(sample_nodule_voxels([ann], 1.0), ann.voxels)


def test_positive_empty_annotations():
    assert sample_nodule_voxels([], 0.5).shape == (0, 3)


@pytest.mark.parametrize("rate", [0.0, -0.1, 1.5])
def test_positive_rate_out_of_range(rate):
    with pytest.raises(ValueError):
        sample_nodule_voxels([_cube_nodule()], rate)


@given(st.floats(0.01, 1.0), st.integers(0, 10_000))
def test_positive_subset_is_seeded_and_inside(rate, seed):
    ann = _cube_nodule()
    a = sample_nodule_voxels([ann], rate, seed=seed)
    b = sample_nodule_voxels([ann], rate, seed=seed)
    assert np.array_equal(a, b)
    keys = {tuple(v) for v in ann.voxels.tolist()}
    assert all(tuple(v) in keys for v in a.tolist())
    assert len({tuple(v) for v in a.tolist()}) == len(a) == round(rate * 268)


# -- stacks -------------------------------------------------------------------------

def test_normalization_window():
    assert np.allclose(normalize_hu([-2000, -1000, -300, 400, 3000]), [0, 0, 0.5, 1, 1])


def test_stack_shape_at_mid_volume(rng):
    vol = _vol(rng.integers(-1000, 400, size=(12, 64, 64)))
    s = extract_stack(vol, (32, 32, 6), k=3, M=50)
    assert s.patches.shape == (7, 50, 50)
    assert 0 <= s.patches.min() and s.patches.max() <= 1


def test_stack_matches_direct_crop(rng):
    data = rng.integers(-1000, 400, size=(9, 70, 70))
    s = extract_stack(_vol(data), (35, 30, 4), k=3, M=50)
    want = normalize_hu(data[1:8, 30 - 25:30 + 25, 35 - 25:35 + 25])
    assert np.array_equal(s.patches, want)


def test_stack_replicates_edge_slices(rng):
    data = rng.integers(-1000, 400, size=(5, 40, 40))
    p = extract_stack(_vol(data), (20, 20, 0), k=3, M=20).patches
    for j in range(4):
        assert np.array_equal(p[j], p[3])
    assert np.array_equal(p[4], normalize_hu(data[1, 10:30, 10:30]))


def test_stack_pads_with_air():
    data = np.full((3, 20, 20), 400)
    p = extract_stack(_vol(data), (0, 0, 1), k=1, M=10).patches
    assert (p[:, :5, :] == 0).all() and (p[:, :, :5] == 0).all()
    assert (p[:, 5:, 5:] == 1).all()


def test_air_volume_gives_zero_patches():
    p = extract_stack(_vol(np.full((4, 30, 30), -1000)), (15, 15, 2), k=3, M=50, scale_M=80).patches
    assert p.shape == (7, 50, 50) and (p == 0).all()


@pytest.mark.parametrize("center", [(-1, 0, 0), (0, 30, 0), (0, 0, 4)])
def test_stack_center_outside_raises(center):
    with pytest.raises(ValueError):
        extract_stack(_vol(np.zeros((4, 30, 30))), center, k=1, M=10)


def _bilinear_oracle(img, M):
    """Pixel-centre aligned bilinear resize with clamped edges, one output pixel at a time."""
    S = img.shape[0]
    out = np.zeros((M, M))
    for i in range(M):
        for j in range(M):
            y = min(max((i + 0.5) * S / M - 0.5, 0), S - 1)
            x = min(max((j + 0.5) * S / M - 0.5, 0), S - 1)
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, S - 1), min(x0 + 1, S - 1)
            wy, wx = y - y0, x - x0
            out[i, j] = ((1 - wy) * (1 - wx) * img[y0, x0] + (1 - wy) * wx * img[y0, x1]
                         + wy * (1 - wx) * img[y1, x0] + wy * wx * img[y1, x1])
    return out


def test_downscale_matches_bilinear_oracle(rng):
    data = rng.integers(-1000, 400, size=(3, 100, 100))
    s = extract_stack(_vol(data), (50, 50, 1), k=1, M=50, scale_M=80)
    for t in range(3):
        crop = normalize_hu(data[t, 10:90, 10:90]).astype(np.float64)
        assert np.allclose(s.patches[t], _bilinear_oracle(crop, 50), atol=1e-5)


@given(st.integers(2, 40), st.integers(1, 40))
def test_bilinear_rows_are_convex_weights(src, dst):
    A = bilinear_matrix(src, dst)
    assert (A >= 0).all() and np.allclose(A.sum(axis=1), 1)


# -- augmentation -------------------------------------------------------------------

@pytest.fixture
def stack(rng):
    return extract_stack(_vol(rng.integers(-1000, 400, size=(7, 40, 40))), (20, 20, 3), k=3, M=12, label=1)


def test_flip_twice_is_identity(stack):
    assert np.array_equal(augment(augment(stack, "flip_h"), "flip_h").patches, stack.patches)
    assert np.array_equal(augment(augment(stack, "flip_v"), "flip_v").patches, stack.patches)


def test_rot90_four_times_is_identity(stack):
    s = stack
    for _ in range(4):
        s = augment(s, "rot90")
    assert np.array_equal(s.patches, stack.patches)


def test_rot180_is_both_flips(stack):
    both = augment(augment(stack, "flip_h"), "flip_v")
    assert np.array_equal(augment(stack, "rot180").patches, both.patches)
    assert np.array_equal(augment(augment(stack, "rot90"), "rot180").patches, augment(stack, "rot270").patches)


@pytest.mark.parametrize("op", AUGMENT_OPS)
def test_augment_preserves_label_scale_and_values(stack, op):
    out = augment(stack, op)
    assert out.label == stack.label and out.scale == stack.scale and out.center == stack.center
    for a, b in zip(out.patches, stack.patches):
        assert np.array_equal(np.sort(a, axis=None), np.sort(b, axis=None))


def test_augment_applies_same_transform_to_every_patch(stack):
    out = augment(stack, "rot90")
    for a, b in zip(out.patches, stack.patches):
        assert np.array_equal(a, np.rot90(b))


def test_unknown_augmentation():
    with pytest.raises(ValueError):
        augment_array(np.zeros((1, 2, 2)), "shear")


# -- manifests ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_dataset():
    from rectnet.phantom import generate_phantom, random_phantom_spec
    vols, anns, masks = {}, {}, {}
    for i in range(2):
        vol, _, a = generate_phantom(random_phantom_spec(40 + i, "desk", n_nodules=1))
        vols[f"v{i}"], anns[f"v{i}"], masks[f"v{i}"] = vol, a, segment_lungs(vol)
    return vols, anns, masks


def _cfg(**kw):
    base = dict(k=3, patch_size=20, scales=(20, 32), grid_mult=8, pos_rate=0.2, seed=5)
    base.update(kw)
    return DatasetConfig(**base)


def test_manifest_labels_and_arithmetic(small_dataset):
    vols, anns, masks = small_dataset
    cfg = _cfg()
    m = build_dataset(vols, anns, masks, cfg)
    pos_keys = {(vid, tuple(v)) for vid, a in anns.items() for n in a for v in n.voxels.tolist()}
    for e in m.entries:
        assert e.label == int((e.volume, e.center) in pos_keys)
        x, y, z = e.center
        assert masks[e.volume].data[z, y, x]
        assert e.aug == "none" or e.label == 1
    centers = {(e.volume, e.center, e.label) for e in m.entries}
    n_pos = sum(lab for *_, lab in centers)
    n_neg = len(centers) - n_pos
    assert m.counts == {0: n_neg * 2, 1: n_pos * 2 * (1 + len(AUGMENT_OPS))}
    assert n_pos > 0


def test_manifest_is_deterministic_and_round_trips(small_dataset, tmp_path):
    vols, anns, masks = small_dataset
    a = build_dataset(vols, anns, masks, _cfg())
    b = build_dataset(vols, anns, masks, _cfg())
    assert a.entries == b.entries
    a.save(tmp_path / "m.jsonl")
    back = DatasetManifest.load(tmp_path / "m.jsonl")
    assert back.entries == a.entries and back.config == a.config
    c = build_dataset(vols, anns, masks, _cfg(seed=6))
    assert c.entries != a.entries


def test_manifest_rejects_tampered_counts(small_dataset, tmp_path):
    vols, anns, masks = small_dataset
    build_dataset(vols, anns, masks, _cfg()).save(tmp_path / "m.jsonl")
    lines = (tmp_path / "m.jsonl").read_text().splitlines()
    (tmp_path / "m.jsonl").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ValueError):
        DatasetManifest.load(tmp_path / "m.jsonl")


def test_no_annotations_gives_all_negatives(small_dataset):
    vols, _, masks = small_dataset
    m = build_dataset(vols, {}, masks, _cfg())
    assert m.counts[1] == 0 and m.counts[0] == len(m.entries) > 0


def test_stack_source_applies_augmentation(small_dataset):
    vols, anns, masks = small_dataset
    m = build_dataset(vols, anns, masks, _cfg())
    src = StackSource(m, vols)
    i = next(i for i, e in enumerate(m.entries) if e.aug == "rot90")
    e = m.entries[i]
    raw = extract_stack(vols[e.volume], e.center, 3, 20, e.scale).patches
    got = src.stacks([i])[0]
    assert got.shape == (7, 20, 20)
    assert np.allclose(got, np.rot90(raw, axes=(-2, -1)))
    assert np.allclose(src.center_patches([i])[0, 0], got[3])


def test_dataset_config_validation():
    with pytest.raises(ValueError):
        DatasetConfig(patch_size=50, scales=(40,))
    with pytest.raises(ValueError):
        DatasetConfig(augment_ops=("shear",))
