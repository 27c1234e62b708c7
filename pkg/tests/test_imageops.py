import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radial_canon.errors import NonSquareImage, UnreadableFile
from radial_canon.imageops import Image, optimal_padding, pad, read_png, rotate, shift, write_png

from conftest import blob_image, padded_blob


def smallest_containing_padding(width: int) -> int:
    # pixel squares: the far corner of a W-wide image sits W/sqrt(2) from the
    # center; the padded half-width is W/2 + delta
    delta = 0
    while width / math.sqrt(2.0) > width / 2.0 + delta + 1e-12:
        delta += 1
    return delta


class TestOptimalPadding:
    def test_zero_width(self):
        assert optimal_padding(0) == 0

    @pytest.mark.parametrize("width,expected", [(128, 27), (100, 21)])
    def test_known_values(self, width, expected):
        assert optimal_padding(width) == expected

    @pytest.mark.parametrize("width", range(0, 300))
    def test_matches_search_oracle(self, width):
        assert optimal_padding(width) == smallest_containing_padding(width)

    @pytest.mark.parametrize("width", [8, 31, 64, 100, 128])
    def test_corner_containment_on_degree_grid(self, width):
        d = optimal_padding(width)
        n = width + 2 * d
        c = (n - 1) / 2.0
        corners = np.array([(d, d), (d, d + width - 1), (d + width - 1, d), (d + width - 1, d + width - 1)], float)
        for deg in list(range(360)) + [45.0]:
            t = math.radians(deg)
            rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
            moved = (corners - c) @ rot.T + c
            assert moved.min() >= 0 and moved.max() <= n - 1


class TestPad:
    def test_zero_mode(self):
        img = np.full((2, 2, 1), 0.8)
        out = pad(img, 1)
        assert out.data.shape == (4, 4, 1)
        assert np.all(out.data[1:3, 1:3] == 0.8)
        border = out.data.copy()
        border[1:3, 1:3] = 0
        assert np.all(border == 0)
        assert out.pad == 1

    def test_corner_color_mode(self):
        out = pad(np.full((2, 2, 1), 0.5), 1, mode="corner_color")
        assert np.all(out.data == 0.5)

    def test_size_arithmetic(self):
        assert pad(np.zeros((128, 128, 3)), 27).data.shape == (182, 182, 3)

    def test_negative_delta(self):
        with pytest.raises(ValueError):
            pad(np.zeros((2, 2)), -1)


class TestRotate:
    def test_zero_angle_identity(self):
        img = blob_image(17, 0)
        assert np.array_equal(rotate(img, 0.0).data, img)

    def test_non_square_rejected(self):
        with pytest.raises(NonSquareImage):
            rotate(np.zeros((4, 5)), 10.0)

    @pytest.mark.parametrize("size", [7, 8])
    def test_four_quarter_turns_nearest_exact(self, size, rng):
        img = rng.uniform(size=(size, size, 2))
        out = img
        for _ in range(4):
            out = rotate(out, 90.0, interp="nearest").data
        assert np.array_equal(out, img)

    @pytest.mark.parametrize("size", [7, 8])
    def test_quarter_turn_is_pixel_permutation(self, size, rng):
        img = rng.uniform(size=(size, size, 1))
        out = rotate(img, 90.0, interp="nearest").data
        assert np.array_equal(np.sort(out.ravel()), np.sort(img.ravel()))

    def test_positive_angle_turns_up_into_right(self):
        img = np.zeros((9, 9, 1))
        img[2, 4] = 1.0  # two pixels above the center
        out = rotate(img, 90.0, interp="nearest").data
        assert out[4, 6, 0] == 1.0

    def test_bilinear_round_trip(self):
        img = padded_blob(64, 3)
        back = rotate(rotate(img, 120.0), 240.0).data
        assert np.mean(np.abs(back - img)) <= 0.02

    @pytest.mark.parametrize("theta", [17.0, 45.0, 133.0])
    def test_mass_preserved_after_padding(self, theta):
        img = padded_blob(48, 5)
        out = rotate(img, theta).data
        assert abs(out.sum() - img.sum()) / img.sum() < 0.01

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.0, 359.999), st.integers(3, 20))
    def test_values_stay_in_unit_range(self, theta, size):
        img = np.random.default_rng(size).uniform(size=(size, size, 1))
        out = rotate(img, theta).data
        assert out.shape == img.shape
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_shift_moves_content():
    img = np.zeros((5, 5, 1))
    img[2, 2] = 1
    out = shift(img, 1, -2).data
    assert out[0, 3, 0] == 1 and out.sum() == 1


def test_image_coerces_gray():
    assert Image(np.zeros((3, 3))).data.shape == (3, 3, 1)


class TestPng:
    def test_round_trip_and_normalization(self, tmp_path):
        arr = np.zeros((4, 4, 3))
        arr[0, 0] = 1.0
        write_png(tmp_path / "a.png", arr)
        back = read_png(tmp_path / "a.png").data
        assert back[0, 0, 0] == 1.0 and back.shape == (4, 4, 3)

    def test_unreadable(self, tmp_path):
        p = tmp_path / "bad.png"
        p.write_bytes(b"not a png")
        with pytest.raises(UnreadableFile):
            read_png(p)
