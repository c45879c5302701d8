import numpy as np
import pytest

from otre import imagekit as ik
from otre.errors import CorruptData, MissingFile, ShapeMismatch, UnsupportedFormat

from testutil import smooth_image


def test_load_white_and_black_pixel(tmp_path):
    from PIL import Image

    for value, expect in ((255, 1.0), (0, 0.0)):
        p = tmp_path / f"px{value}.png"
        Image.fromarray(np.full((1, 1, 3), value, dtype=np.uint8)).save(p)
        img = ik.load_image(p)
        assert img.shape == (3, 1, 1)
        assert np.all(img == expect)


def test_save_load_roundtrip_bitwise(tmp_path, rng):
    # any 8-bit image: save -> reload reproduces the quantized values exactly
    for seed in range(5):
        u8 = np.random.default_rng(seed).integers(0, 256, (3, 17, 23), dtype=np.uint8)
        img = u8 / 255.0
        p = tmp_path / f"r{seed}.png"
        ik.save_image(img, p)
        back = ik.load_image(p)
        assert np.array_equal(np.round(back * 255).astype(np.uint8), u8)
        assert np.array_equal(back, img)


def test_grayscale_load(tmp_path):
    from PIL import Image

    p = tmp_path / "g.png"
    Image.fromarray(np.arange(64, dtype=np.uint8).reshape(8, 8), mode="L").save(p)
    img = ik.load_image(p)
    assert img.shape == (1, 8, 8)
    assert img.max() <= 1.0


def test_load_errors(tmp_path):
    with pytest.raises(MissingFile):
        ik.load_image(tmp_path / "nope.png")
    bad = tmp_path / "notes.txt"
    bad.write_text("hello")
    with pytest.raises(UnsupportedFormat):
        ik.load_image(bad)
    garbage = tmp_path / "fake.png"
    garbage.write_bytes(b"this is not a png")
    with pytest.raises(CorruptData):
        ik.load_image(garbage)


def test_validate_image_rejects_bad_shapes():
    with pytest.raises(ShapeMismatch):
        ik.validate_image(np.zeros((2, 8, 8)))
    with pytest.raises(CorruptData):
        ik.validate_image(np.full((1, 4, 4), np.nan))
    with pytest.raises(CorruptData):
        ik.validate_image(np.full((1, 4, 4), 1.5))


class TestPreprocess:
    def test_identity_on_target_size(self):
        img = smooth_image(3, side=256)
        out = ik.preprocess(img, 256)
        assert np.array_equal(out, img)

    def test_idempotent(self):
        img = smooth_image(4, side=300)
        once = ik.preprocess(img, 256)
        twice = ik.preprocess(once, 256)
        assert np.array_equal(once, twice)

    def test_wide_image_center_crop(self):
        img = np.zeros((1, 256, 512))
        img[:, :, 128:384] = 0.75  # central square
        out = ik.preprocess(img, 256)
        assert out.shape == (1, 256, 256)
        assert np.all(out == 0.75)

    def test_constant_preserved_through_resize(self):
        img = np.full((3, 300, 300), 0.5)
        out = ik.preprocess(img, 256)
        assert out.shape == (3, 256, 256)
        assert np.allclose(out, 0.5, atol=1e-12)

    def test_odd_crop_tie_toward_top_left(self):
        img = np.zeros((1, 5, 4))
        img[0, 0, :] = 1.0  # top row should survive a 5->4 crop
        out = ik.preprocess(img, 4)
        assert out[0, 0].max() > 0.0
