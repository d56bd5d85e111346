"""Alphabet construction, Gray mapping and hard slicing."""

import numpy as np
import pytest

from gridce.errors import ConfigurationError
from gridce.qam import build_qam_alphabet


class TestAlphabetConstruction:
    def test_4qam_points(self):
        """Q=4 must be the four unit-magnitude corners (+-1 +-j)/sqrt(2)."""
        alph = build_qam_alphabet(4)
        expected = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)
        assert sorted(np.round(alph.points, 12), key=lambda z: (z.real, z.imag)) == \
            sorted(np.round(expected, 12), key=lambda z: (z.real, z.imag))

    def test_16qam_grid(self):
        """Q=16 is the {+-1, +-3}^2 grid scaled by 1/sqrt(10)."""
        alph = build_qam_alphabet(16)
        levels = np.unique(np.round(alph.points.real * np.sqrt(10)))
        np.testing.assert_array_equal(levels, [-3, -1, 1, 3])

    @pytest.mark.parametrize("order", [4, 16, 64])
    def test_unit_average_energy(self, order):
        alph = build_qam_alphabet(order)
        assert abs(np.mean(np.abs(alph.points) ** 2) - 1.0) < 1e-12

    @pytest.mark.parametrize("order", [4, 16, 64])
    def test_symmetric_about_origin(self, order):
        pts = build_qam_alphabet(order).points
        negated = sorted(-pts, key=lambda z: (z.real, z.imag))
        original = sorted(pts, key=lambda z: (z.real, z.imag))
        np.testing.assert_allclose(negated, original, atol=1e-12)

    @pytest.mark.parametrize("order", [2, 8, 32, 12, 0])
    def test_non_square_orders_rejected(self, order):
        with pytest.raises(ConfigurationError):
            build_qam_alphabet(order)


class TestGrayMapping:
    @pytest.mark.parametrize("order", [4, 16, 64])
    def test_adjacent_points_differ_by_one_bit(self, order):
        """Nearest horizontal/vertical neighbors differ in exactly one bit."""
        alph = build_qam_alphabet(order)
        m = round(order ** 0.5)
        step = 2.0 / np.sqrt(2.0 * (m * m - 1) / 3.0)
        for v in range(order):
            p = alph.points[v]
            for delta in (step, step * 1j):
                q = p + delta
                dist = np.abs(alph.points - q)
                if dist.min() > 1e-9:
                    continue  # off the grid edge
                w = int(np.argmin(dist))
                assert bin(v ^ w).count("1") == 1

    def test_bits_round_trip(self):
        alph = build_qam_alphabet(16)
        idx = np.arange(16)
        bits = alph.bits_from_indices(idx)
        np.testing.assert_array_equal(alph.indices_from_bits(bits), idx)

    def test_documented_4qam_table(self):
        """The module docstring's 4-QAM table: bit b1 drives I, b0 drives Q."""
        alph = build_qam_alphabet(4)
        s = 1 / np.sqrt(2)
        np.testing.assert_allclose(alph.points[0b00], (-1 - 1j) * s, atol=1e-12)
        np.testing.assert_allclose(alph.points[0b01], (-1 + 1j) * s, atol=1e-12)
        np.testing.assert_allclose(alph.points[0b10], (1 - 1j) * s, atol=1e-12)
        np.testing.assert_allclose(alph.points[0b11], (1 + 1j) * s, atol=1e-12)


class TestSlicing:
    def test_points_map_to_themselves(self):
        alph = build_qam_alphabet(16)
        np.testing.assert_array_equal(
            alph.nearest_indices(alph.points), np.arange(16)
        )

    def test_nearest_point_example(self):
        """0.9 + 0.8j slices to (1+j)/sqrt(2) at Q=4."""
        alph = build_qam_alphabet(4)
        sliced = alph.slice(np.array([0.9 + 0.8j]))
        np.testing.assert_allclose(sliced, [(1 + 1j) / np.sqrt(2)], atol=1e-12)

    def test_idempotent(self):
        alph = build_qam_alphabet(16)
        rng = np.random.default_rng(0)
        x = rng.normal(size=100) + 1j * rng.normal(size=100)
        once = alph.slice(x)
        np.testing.assert_array_equal(alph.slice(once), once)

    def test_tie_breaks_lexicographically(self):
        """The origin is equidistant from all 4-QAM points; the winner is the
        lexicographically smallest (real, imag) point."""
        alph = build_qam_alphabet(4)
        sliced = alph.slice(np.array([0.0 + 0.0j]))[0]
        assert sliced == min(alph.points, key=lambda z: (z.real, z.imag))
