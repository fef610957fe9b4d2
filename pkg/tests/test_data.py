import hashlib

import numpy as np
import pytest
from PIL import Image

from gtsa.data import Dataset, load_dataset, read_image, standardize, synth_image, synthetic_dataset, write_png


def test_synth_deterministic():
    assert synth_image(7, 64).tobytes() == synth_image(7, 64).tobytes()


def test_synth_distinct_over_100_seeds():
    hashes = {hashlib.sha256(synth_image(s, 32).tobytes()).hexdigest() for s in range(100)}
    assert len(hashes) == 100


@pytest.mark.parametrize("size", [32, 48, 64])
def test_synth_format(size):
    img = synth_image(0, size)
    assert img.shape == (size, size, 3) and img.dtype == np.uint8


def test_synth_min_size():
    with pytest.raises(ValueError):
        synth_image(0, 16)


def test_synth_has_vertical_structure():
    # the sky/ground gradient gives scenes a canonical "up"
    top = np.mean([synth_image(s, 64)[:8].mean() for s in range(20)])
    bottom = np.mean([synth_image(s, 64)[-8:].mean() for s in range(20)])
    assert abs(top - bottom) > 10


def test_synthetic_dataset():
    d = synthetic_dataset(5, 32, seed=2)
    assert len(d) == 5
    np.testing.assert_array_equal(d[3], synth_image(2 * 1_000_003 + 3, 32))
    with pytest.raises(ValueError):
        Dataset([])


def test_standardize_shapes():
    rect = np.random.default_rng(0).integers(0, 256, size=(30, 50, 3), dtype=np.uint8)
    out = standardize(rect, 32)
    assert out.shape == (32, 32, 3) and out.dtype == np.uint8
    flat = np.full((40, 80, 3), 77, np.uint8)
    assert np.all(standardize(flat, 32) == 77)


def _write_dir(tmp_path, n=8):
    for i in reversed(range(n)):
        write_png(tmp_path / f"img_{i:02d}.png", synth_image(i, 40))
    return tmp_path


def test_load_sorted(tmp_path):
    d = load_dataset(_write_dir(tmp_path), 32)
    assert len(d) == 8
    assert d.names == sorted(d.names) == [f"img_{i:02d}.png" for i in range(8)]
    again = load_dataset(tmp_path, 32)
    assert d.names == again.names
    assert all(np.array_equal(a, b) for a, b in zip(d, again))


def test_png_round_trip(tmp_path):
    img = synth_image(3, 32)
    write_png(tmp_path / "a.png", img)
    np.testing.assert_array_equal(read_image(tmp_path / "a.png"), img)


def test_ppm(tmp_path):
    img = synth_image(4, 32)
    Image.fromarray(img).save(tmp_path / "a.ppm")
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6")
    np.testing.assert_array_equal(load_dataset(tmp_path, 32)[0], img)


def test_non_image_names_file(tmp_path):
    _write_dir(tmp_path, 2)
    (tmp_path / "notes.txt").write_text("not an image")
    with pytest.raises(ValueError, match="notes.txt"):
        load_dataset(tmp_path, 32)


def test_empty_and_missing(tmp_path):
    with pytest.raises(ValueError):
        load_dataset(tmp_path, 32)
    with pytest.raises(ValueError):
        load_dataset(tmp_path / "nope", 32)
