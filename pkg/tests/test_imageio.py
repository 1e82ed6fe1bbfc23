import numpy as np
import pytest

from epitome.core import EpitomeSet
from epitome.imageio import ImageFormatError, parse_pgm, read_image, render_epitome, to_uint8, write_image


def test_pgm_payload():
    assert parse_pgm(b"P5\n2 2\n255\n" + bytes([0, 128, 255, 7])).tolist() == [[0, 128], [255, 7]]


def test_pgm_header_comments():
    raw = b"P5\n# made by hand\n3 1\n# depth\n255\n" + bytes([1, 2, 3])
    assert parse_pgm(raw).tolist() == [[1, 2, 3]]


@pytest.mark.parametrize("raw,match", [
    (b"P5\n2 2\n65535\n" + bytes(8), "maxval"),
    (b"P2\n1 1\n255\n0", "P5"),
    (b"P5\n2 2\n255\n" + bytes(3), "payload"),
    (b"P5\n2 x\n255\n", "header"),
])
def test_malformed_pgm(raw, match):
    with pytest.raises(ImageFormatError, match=match):
        parse_pgm(raw)


@pytest.mark.parametrize("suffix", [".pgm", ".png"])
def test_round_trip(tmp_path, rng, suffix):
    img = rng.integers(0, 256, size=(7, 11)).astype(np.float64)
    path = tmp_path / f"img{suffix}"
    write_image(img, path)
    np.testing.assert_array_equal(read_image(path), img)


def test_write_clips_and_rounds(tmp_path):
    path = tmp_path / "c.pgm"
    write_image(np.array([[-3.0, 12.5, 12.49, 300.0]]), path)
    assert read_image(path).tolist() == [[0, 12, 12, 255]]


def test_unknown_format(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"GIF89a")
    with pytest.raises(ImageFormatError):
        read_image(path)


def test_to_uint8():
    assert to_uint8(np.array([-1.0, 0.5, 254.6])).tolist() == [0, 0, 255]


class TestRender:
    def test_affine_endpoints(self):
        out = render_epitome(EpitomeSet(np.array([[-1.0, 1.0], [1.0, -1.0]])))
        assert out.tolist() == [[0, 255], [255, 0]]

    def test_constant_is_mid_gray(self):
        assert np.all(render_epitome(EpitomeSet(np.full((1, 5, 5), 0.3))) == 128)

    def test_grid_of_four(self, rng):
        out = render_epitome(EpitomeSet(rng.random((4, 25, 25))))
        assert out.shape == (51, 51)
        assert np.all(out[25, :] == 255) and np.all(out[:, 25] == 255)

    def test_uneven_grid(self, rng):
        assert render_epitome(EpitomeSet(rng.random((3, 4, 5)))).shape == (9, 11)
