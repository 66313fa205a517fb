import numpy as np
import pytest

from hsille.errors import DataError
from hsille.render import RenderPalette, read_pnm, render_classmap, render_grayscale, write_pgm


def test_grayscale_levels(tmp_path):
    h = np.array([[0.0, 0.25, 1.0], [0.5, 1 / 510, 0.999]])
    gray = render_grayscale(h, tmp_path / "h.pgm")
    np.testing.assert_array_equal(gray, [[0, 64, 255], [128, 1, 255]])
    np.testing.assert_array_equal(read_pnm(tmp_path / "h.pgm"), gray)
    assert (tmp_path / "h.pgm").read_bytes().startswith(b"P5\n3 2\n255\n")


def test_grayscale_rejects_out_of_range(tmp_path):
    with pytest.raises(DataError):
        render_grayscale(np.array([[1.1]]), tmp_path / "x.pgm")
    with pytest.raises(DataError):
        render_grayscale(np.array([[np.nan]]), tmp_path / "x.pgm")


def test_classmap_colors_and_clutter(tmp_path):
    palette = RenderPalette.from_colors([(255, 0, 0), (0, 255, 0)])
    labels = np.array([[1, 2], [0, 2]])
    clutter = np.array([[False, True], [False, False]])
    rgb = render_classmap(labels, clutter, palette, tmp_path / "c.ppm")
    expected = [[[255, 0, 0], [0, 0, 0]], [[0, 0, 0], [0, 255, 0]]]
    np.testing.assert_array_equal(rgb, expected)
    np.testing.assert_array_equal(read_pnm(tmp_path / "c.ppm"), expected)


def test_classmap_missing_palette_entry(tmp_path):
    palette = RenderPalette.from_colors([(1, 2, 3)])
    with pytest.raises(DataError, match="label 2"):
        render_classmap(np.array([[1, 2]]), None, palette, tmp_path / "c.ppm")


def test_pnm_header_comments(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x07\x09")
    np.testing.assert_array_equal(read_pnm(path), [[7, 9]])
    with pytest.raises(DataError):
        write_pgm(path, np.zeros(3))
