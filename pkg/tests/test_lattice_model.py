import json

import numpy as np
import pytest

from lattice_scatter.band_structure import TorusGrid
from lattice_scatter.lattice_model import (
    DecayBoundError,
    HoppingKernel,
    ShortRangePart,
    bracket,
    build_potential,
    build_symbol,
    preset,
    preset_names,
    smooth_extension,
    validate_selfadjoint,
)


def random_selfadjoint_kernel(rng, d=2, n=3, radius=2):
    entries = {}
    for off in np.ndindex(*(2 * radius + 1,) * d):
        off = tuple(o - radius for o in off)
        if off in entries:
            continue
        m = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        if all(o == 0 for o in off):
            m = m + m.conj().T
        entries[off] = m
        entries[tuple(-o for o in off)] = m.conj().T
    return HoppingKernel(d, n, entries)


class TestSelfAdjoint:
    def test_real_symmetric_chain(self):
        assert validate_selfadjoint(HoppingKernel(1, 1, {(1,): 1.0, (-1,): 1.0}))

    def test_imaginary_symmetric_chain_is_not(self):
        assert not validate_selfadjoint(HoppingKernel(1, 1, {(1,): 1j, (-1,): 1j}))

    def test_hexagonal_preset(self):
        assert validate_selfadjoint(preset("hexagonal"))

    @pytest.mark.parametrize("name", preset_names())
    def test_all_presets(self, name):
        assert preset(name).is_self_adjoint()

    def test_unknown_preset(self):
        with pytest.raises(KeyError):
            preset("honeycomb-xyz")

    def test_empty_kernel_rejected(self):
        with pytest.raises(ValueError):
            HoppingKernel(1, 1, {(1,): 0.0})


class TestSymbol:
    def test_chain_symbol(self):
        grid = TorusGrid(1, 64)
        h = build_symbol(preset("square1d"), grid)
        np.testing.assert_allclose(h[..., 0, 0], 2 * np.cos(grid.axis()), atol=1e-14)

    def test_hexagonal_offdiagonal(self):
        grid = TorusGrid(2, 16)
        h = build_symbol(preset("hexagonal"), grid)
        xi = grid.points()
        g = 1 + np.exp(-1j * xi[..., 0]) + np.exp(-1j * xi[..., 1])
        np.testing.assert_allclose(h[..., 0, 1], g, atol=1e-14)
        np.testing.assert_allclose(h[..., 1, 0], np.conj(g), atol=1e-14)
        np.testing.assert_allclose(h[..., 0, 0], 0, atol=1e-14)
        np.testing.assert_allclose(h[..., 1, 1], 0, atol=1e-14)

    def test_random_kernel_matches_direct_sum(self, rng):
        k = random_selfadjoint_kernel(rng)
        xi = rng.uniform(-np.pi, np.pi, size=(7, 2))
        direct = np.zeros((7, 3, 3), complex)
        for off, mat in k.entries.items():
            direct += np.exp(-1j * xi @ np.array(off))[:, None, None] * mat
        np.testing.assert_allclose(k.symbol_at(xi), direct, atol=1e-12)
        np.testing.assert_allclose(k.symbol_at(xi), np.conj(np.swapaxes(k.symbol_at(xi), -1, -2)), atol=1e-12)

    def test_grid_too_coarse(self):
        k = HoppingKernel(1, 1, {(3,): 1.0, (-3,): 1.0})
        with pytest.raises(ValueError):
            build_symbol(k, TorusGrid(1, 6))

    def test_apply_box_is_the_fourier_multiplier(self, rng):
        from lattice_scatter.pdo_calculus import apply_multiplier, box_frequencies

        k = random_selfadjoint_kernel(rng, d=2, n=2, radius=1)
        L = 6
        u = rng.standard_normal((13, 13, 2)) + 1j * rng.standard_normal((13, 13, 2))
        field = k.symbol_at(box_frequencies(2, L))
        np.testing.assert_allclose(k.apply_box(u), apply_multiplier(field, u), atol=1e-12)

    def test_json_round_trip(self):
        k = preset("kagome")
        back = HoppingKernel.from_dict(json.loads(k.to_json()))
        assert set(back.entries) == set(k.entries)
        for off in k.entries:
            np.testing.assert_array_equal(back.entries[off], k.entries[off])


class TestPotential:
    def test_closed_form_is_valid(self):
        pot = build_potential(1.0, 0.5)
        assert pot.constants["C_long(0,)"] == pytest.approx(1.0)

    def test_slow_short_range_part_rejected(self):
        x = np.arange(-64, 65)
        table = bracket(x[:, None]) ** -1.0
        with pytest.raises(DecayBoundError) as info:
            build_potential(0.0, 0.5, short=ShortRangePart("table", values=table[:, None]))
        assert info.value.alpha == (0,)
        assert abs(info.value.x[0]) > 32

    def test_first_difference_at_ten(self):
        pot = build_potential(1.0, 0.5)
        diff = abs(pot.long_values(np.array([[10]]))[0] - pot.long_values(np.array([[9]]))[0])
        assert diff == pytest.approx(0.0168702914, rel=1e-8)
        assert diff <= pot.constants["C_long(1,)"] * 1.25 * bracket(np.array([10.0])) ** -1.5

    def test_alternating_short_range_accepted(self):
        pot = build_potential(0.0, 0.5, short=ShortRangePart("alternating", 0.3, 1.5))
        vals = pot.on_box(3)[:, 0]
        np.testing.assert_allclose(vals, 0.3 * bracket(np.arange(-3, 4)[:, None]) ** -1.5
                                   * (-1.0) ** np.arange(-3, 4), atol=1e-15)

    def test_random_short_range_is_seeded(self):
        a = build_potential(0.0, 0.5, short=ShortRangePart("random", 0.1, 2.0, seed=4)).on_box(8)
        b = build_potential(0.0, 0.5, short=ShortRangePart("random", 0.1, 2.0, seed=4)).on_box(8)
        np.testing.assert_array_equal(a, b)

    def test_serialization(self):
        from lattice_scatter.lattice_model import Potential

        pot = build_potential(0.2, 0.5, short=ShortRangePart("alternating", 0.3, 1.5))
        back = Potential.from_dict(json.loads(pot.to_json()))
        np.testing.assert_array_equal(back.on_box(10), pot.on_box(10))

    def test_invalid_rho(self):
        with pytest.raises(ValueError):
            build_potential(1.0, -0.5)


class TestSmoothExtension:
    def test_closed_form_extension(self):
        ext = smooth_extension(build_potential(0.2, 0.5))
        x = np.array([[0.3], [7.25], [-40.5]])
        np.testing.assert_allclose(ext.value(x), 0.2 * bracket(x) ** -0.5, rtol=1e-14)
        h = 1e-5
        fd = (ext.value(x + h) - ext.value(x - h)) / (2 * h)
        np.testing.assert_allclose(ext.gradient(x)[..., 0], fd, rtol=1e-7)

    def test_zero_extension(self):
        ext = smooth_extension(build_potential(0.0, 0.5))
        assert ext.is_zero
        np.testing.assert_array_equal(ext.gradient(np.array([[1.5]])), 0)

    def test_tabulated_bracket_inverse(self):
        x = np.arange(-64, 65)
        ext = smooth_extension(build_potential(1.0, 1.0, long_table=bracket(x[:, None]) ** -1.0))
        val = float(ext.value(np.array([[5.5]]))[0])
        # a symmetric bump inside one cell reproduces the linear interpolant
        assert val == pytest.approx(0.5 * (26 ** -0.5 + 37 ** -0.5), abs=1e-12)
        assert val == pytest.approx(0.180258, abs=1e-6)
        # lattice points agree with the table up to the mollification error,
        # which is controlled by the local second difference of the table
        grid = np.arange(-20, 21)[:, None].astype(float)
        err = np.abs(ext.value(grid) - bracket(grid) ** -1.0)
        second = np.abs(bracket(grid + 1) ** -1.0 - 2 * bracket(grid) ** -1.0 + bracket(grid - 1) ** -1.0)
        assert np.all(err <= 0.25 * second + 1e-12)

    def test_tabulated_derivative_bounds(self):
        x = np.arange(-64, 65)
        ext = smooth_extension(build_potential(1.0, 1.0, long_table=bracket(x[:, None]) ** -1.0))
        pts = np.linspace(2, 60, 40)[:, None]
        g = np.abs(ext.gradient(pts)[..., 0]) * bracket(pts) ** 2
        assert np.max(g) < 2.0
