import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stsg.data import (FLUID, FLUID_BAND, MAGIC, BadMagicError, DatasetFormatError, GenerationError,
                       LabelValueError, SynthConfig, TruncatedDataError, decode_dataset, encode_dataset,
                       expected_file_size, generate_dataset, generate_sample, image_to_pgm_values,
                       labels_from_boundaries, load_dataset, overlay, pgm_to_image, read_pgm, read_ppm,
                       save_dataset, split_indices, write_pgm, write_ppm)


@pytest.fixture(scope="module")
def small():
    return generate_dataset(SynthConfig(n_samples=12, size=32, data_seed=5))


def test_shapes_and_ranges(small):
    assert small.images.shape == (12, 1, 32, 32) and small.images.dtype == np.float32
    assert small.labels.shape == (12, 32, 32) and small.labels.dtype == np.uint8
    assert small.images.min() >= 0 and small.images.max() <= 1
    assert small.labels.max() <= FLUID


def test_layers_ordered_top_to_bottom(small):
    # without fluid, labels are nondecreasing down every column
    layers = np.where(small.labels == FLUID, FLUID_BAND, small.labels).astype(int)
    assert (np.diff(layers, axis=1) >= 0).all()
    for lab in layers:
        assert set(np.unique(lab)) == set(range(8))


def test_fluid_only_inside_its_band():
    cfg = SynthConfig(n_samples=1, size=32, blob_min=3, blob_max=3)
    s = generate_sample(cfg, 0)
    rows, cols = np.nonzero(s.labels == FLUID)
    assert s.blobs == 3 and len(rows) > 0
    for r, c in zip(rows, cols):
        column = s.labels[:, c]
        above = column[:r][column[:r] != FLUID]
        assert above.max() <= FLUID_BAND


def test_labels_from_boundaries_counts_crossings():
    bounds = np.array([[1.0, 1.0], [2.0, 3.0]])
    np.testing.assert_array_equal(labels_from_boundaries(bounds, 4), [[0, 0], [1, 1], [2, 1], [2, 2]])


def test_generation_is_deterministic():
    cfg = SynthConfig(n_samples=3, size=32, data_seed=9)
    a, b = generate_dataset(cfg), generate_dataset(cfg)
    assert encode_dataset(a) == encode_dataset(b)
    c = generate_dataset(SynthConfig(n_samples=3, size=32, data_seed=10))
    assert encode_dataset(a) != encode_dataset(c)


def test_sample_independent_of_count():
    a = generate_dataset(SynthConfig(n_samples=2, size=32))
    b = generate_dataset(SynthConfig(n_samples=5, size=32))
    np.testing.assert_array_equal(a.images, b.images[:2])


def test_impossible_geometry_raises():
    with pytest.raises(GenerationError):
        generate_sample(SynthConfig(size=16, thick_min=0.3, thick_max=0.3), 0)


def test_validation():
    with pytest.raises(ValueError):
        generate_dataset(SynthConfig(n_samples=0))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 500), st.sampled_from([(0.6, 0.2, 0.2), (0.8, 0.1, 0.1), (1.0, 0.0, 0.0)]))
def test_split_partitions(n, fractions):
    parts = split_indices(n, fractions)
    np.testing.assert_array_equal(np.concatenate(parts), np.arange(n))


def test_split_sizes_default():
    tr, va, te = split_indices(200)
    assert (len(tr), len(va), len(te)) == (120, 40, 40)


def test_file_roundtrip_bitwise(small, tmp_path):
    path = tmp_path / "d.bin"
    save_dataset(path, small)
    blob = path.read_bytes()
    assert blob.startswith(MAGIC) and len(blob) == expected_file_size(12, 32)
    back = load_dataset(path)
    np.testing.assert_array_equal(back.images, small.images)
    np.testing.assert_array_equal(back.labels, small.labels)
    assert encode_dataset(back) == blob


def test_decode_errors(small):
    blob = encode_dataset(small)
    with pytest.raises(BadMagicError):
        decode_dataset(b"X" + blob[1:])
    with pytest.raises(TruncatedDataError):
        decode_dataset(blob[:-1])
    with pytest.raises(DatasetFormatError):
        decode_dataset(blob + b"\0")
    bad = bytearray(blob)
    bad[-1] = 9
    with pytest.raises(LabelValueError):
        decode_dataset(bytes(bad))


def test_pgm_ppm_roundtrip(tmp_path, rng):
    values = rng.integers(0, 256, size=(5, 7)).astype(np.uint8)
    write_pgm(tmp_path / "a.pgm", values)
    got, maxval = read_pgm(tmp_path / "a.pgm")
    np.testing.assert_array_equal(got, values)
    assert maxval == 255
    rgb = rng.integers(0, 256, size=(4, 3, 3)).astype(np.uint8)
    write_ppm(tmp_path / "a.ppm", rgb)
    np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), rgb)


def test_image_pgm_quantization(rng):
    img = rng.random((4, 4)).astype(np.float32)
    back = pgm_to_image(image_to_pgm_values(img), 255)
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-7


def test_overlay_leaves_background_gray():
    img = np.full((2, 2), 0.5)
    labels = np.array([[0, 1], [8, 0]])
    out = overlay(img, labels)
    assert out.shape == (2, 2, 3)
    assert (out[0, 0] == 128).all() and not (out[0, 1] == 128).all()
