import numpy as np
import pytest

from lattice_scatter.band_structure import TorusGrid, compute_bands, window_margin
from lattice_scatter.lattice_model import build_symbol, preset
from lattice_scatter.modifiers import (
    CutoffSet,
    IsozakiKitadaModifier,
    axis_momentum,
    build_cutoffs,
    build_modifier,
    build_sum,
    energy_cutoff,
    outgoing_packet,
    smooth_step,
    smooth_step_derivative,
    verify_modifier_properties,
)
from lattice_scatter.pdo_calculus import SymbolField, box_coords, box_frequencies, fourier, inverse_fourier, quantize
from lattice_scatter.pdo_calculus import quantize_adjoint


@pytest.fixture(scope="module")
def hex_two_band():
    kernel = preset("hexagonal")
    grid = TorusGrid(2, 64)
    bands = compute_bands(build_symbol(kernel, grid), grid, kernel=kernel)
    window = window_margin(bands, [(-2.5, -1.5), (1.5, 2.5)])
    cut = build_cutoffs(2.0, window, bands)
    return {"bands": bands, "cutoffs": cut, "J": [build_modifier(k, 1, None, cut, 12) for k in cut.bands]}


class TestCutoffs:
    def test_smooth_step(self):
        t = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
        np.testing.assert_allclose(smooth_step(t), [0, 0, 0.5, 1, 1])
        h = 1e-6
        s = np.linspace(0.05, 0.95, 19)
        fd = (smooth_step(s + h) - smooth_step(s - h)) / (2 * h)
        np.testing.assert_allclose(smooth_step_derivative(s), fd, rtol=1e-6, atol=1e-9)

    def test_sigma_partition(self):
        theta = np.linspace(-1, 1, 201)
        np.testing.assert_allclose(CutoffSet.sigma_plus(theta) ** 2 + CutoffSet.sigma_minus(theta) ** 2, 1, atol=1e-15)
        np.testing.assert_allclose(CutoffSet.sigma_plus(theta[theta <= -0.5]), 0, atol=1e-15)
        np.testing.assert_allclose(CutoffSet.sigma_minus(theta[theta >= 0.5]), 0, atol=1e-15)

    def test_eta(self, cutoffs05):
        r = np.array([[0.0], [4.0], [-3.0], [8.0], [-20.0]])
        np.testing.assert_allclose(cutoffs05.eta(r), [0, 0, 0, 1, 1])

    def test_chi_plateau_and_support(self, cutoffs05):
        e = np.array([0.2, 0.25, 0.5, 1.0, 1.5, 1.75, 1.8])
        np.testing.assert_allclose(cutoffs05.chi_energy(e), [0, 0, 1, 1, 1, 0, 0])
        # the wider cutoff is 1 wherever chi is nonzero
        assert np.all(cutoffs05.chi_tilde_energy(np.linspace(0.25, 1.75, 31)) == 1)

    def test_energy_cutoff_union(self):
        vals = energy_cutoff([-2, 0, 2], [(-2.5, -1.5), (1.5, 2.5)], [(-3, -1), (1, 3)])
        np.testing.assert_allclose(vals, [1, 0, 1])

    def test_hexagonal_single_band_window(self):
        kernel = preset("hexagonal")
        grid = TorusGrid(2, 64)
        bands = compute_bands(build_symbol(kernel, grid), grid, kernel=kernel)
        cut = build_cutoffs(2.0, window_margin(bands, [(1.5, 2.5)]), bands)
        assert cut.bands == [1]

    def test_invalid_radius(self, chain):
        with pytest.raises(ValueError):
            build_cutoffs(0.0, chain["window"], chain["bands"])


class TestModifierOperator:
    def test_trivial_phase_is_quantized_symbol(self, hex_two_band, rng):
        J = hex_two_band["J"][1]
        u = rng.standard_normal((25, 25, 2)) + 1j * rng.standard_normal((25, 25, 2))
        s = SymbolField(lambda x, xi: J.symbol(x, xi), d=2, n=2)
        np.testing.assert_allclose(J.apply(u), quantize(s, u), atol=1e-12)
        np.testing.assert_allclose(J.apply_adjoint(u), quantize_adjoint(s, u), atol=1e-12)

    def test_adjoint_pairing(self, chain, phase05, cutoffs05, rng):
        J = build_modifier(0, 1, phase05, cutoffs05, 64)
        worst = 0.0
        for _ in range(20):
            u = rng.standard_normal((129, 1)) + 1j * rng.standard_normal((129, 1))
            v = rng.standard_normal((129, 1)) + 1j * rng.standard_normal((129, 1))
            worst = max(worst, abs(np.vdot(v, J.apply(u)) - np.vdot(J.apply_adjoint(v), u)))
        assert worst < 1e-10

    def test_chunked_kernel_matches_cached(self, phase05, cutoffs05, rng):
        u = rng.standard_normal((129, 1)) + 1j * rng.standard_normal((129, 1))
        cached = build_modifier(0, -1, phase05.with_sign(-1), cutoffs05, 64)
        chunked = build_modifier(0, -1, phase05.with_sign(-1), cutoffs05, 64, memory_budget=1)
        np.testing.assert_allclose(chunked.apply(u), cached.apply(u), atol=1e-13)
        np.testing.assert_allclose(chunked.apply_adjoint(u), cached.apply_adjoint(u), atol=1e-13)

    def test_vanishes_near_origin(self, hex_two_band, rng):
        J = hex_two_band["J"][0]
        x = box_coords(2, 12)
        inside = np.linalg.norm(x, axis=-1) <= hex_two_band["cutoffs"].R
        v = np.zeros((25, 25, 2), complex)
        v[inside] = 1.0
        assert np.max(np.abs(J.apply_adjoint(v))) == 0.0
        u = rng.standard_normal((25, 25, 2)) + 0j
        assert np.max(np.abs(J.apply(u)[inside])) == 0.0

    def test_projector_absorption(self, hex_two_band, rng):
        J0, J1 = hex_two_band["J"]
        ev = hex_two_band["bands"].evaluator
        u = rng.standard_normal((25, 25, 2)) + 1j * rng.standard_normal((25, 25, 2))
        P1 = ev.projector(1, box_frequencies(2, 12))
        P1u = inverse_fourier(np.einsum("...ab,...b->...a", P1, fourier(u)))
        np.testing.assert_allclose(J1.apply(P1u), J1.apply(u), atol=1e-12)
        assert np.max(np.abs(J0.apply(P1u))) < 1e-12

    def test_cross_band_products_vanish(self, hex_two_band, rng):
        J0, J1 = hex_two_band["J"]
        u = rng.standard_normal((25, 25, 2)) + 1j * rng.standard_normal((25, 25, 2))
        u /= np.linalg.norm(u)
        assert np.linalg.norm(J0.apply(J1.apply_adjoint(u))) < 1e-10
        assert np.linalg.norm(J1.apply(J0.apply_adjoint(u))) < 1e-10

    def test_state_outside_window_is_annihilated(self, chain, phase05, cutoffs05):
        J = build_modifier(0, 1, phase05, cutoffs05, 64)
        p = outgoing_packet(chain["ev"], 0, 64, [20], [0.0], width=6.0)  # energy near 2
        assert np.linalg.norm(J.apply(p)) < 1e-5

    def test_validation(self, chain, phase05):
        small = build_cutoffs(0.5, chain["window"], chain["bands"])
        with pytest.raises(ValueError, match="radius"):
            build_modifier(0, 1, phase05, small, 64)
        with pytest.raises(ValueError):
            build_modifier(0, 0, None, small, 64)

    def test_sum_requires_common_sign(self, cutoffs05):
        with pytest.raises(ValueError):
            build_sum([build_modifier(0, 1, None, cutoffs05, 8), build_modifier(0, -1, None, cutoffs05, 8)])

    def test_axis_momentum(self, chain):
        q = axis_momentum(chain["ev"], 0, 1.0, 1)
        assert q[0] == pytest.approx(-np.pi / 3, abs=1e-12)
        with pytest.raises(ValueError):
            axis_momentum(chain["ev"], 0, 3.0, 1)


@pytest.fixture(scope="module")
def report(phase05, cutoffs05):
    def make(L):
        return [build_modifier(0, 1, phase05, cutoffs05, L)], [build_modifier(0, 1, None, cutoffs05, L)]

    return verify_modifier_properties(make, L_values=(64, 128, 256))


class TestProperties:
    def test_difference_from_trivial_phase_is_uniform(self, report):
        assert report["item2_spread"] < 0.25

    def test_weighted_bounds(self, report):
        assert report["item3"][1] < 1.5
        assert report["item3"][2] < 3.0

    def test_commutator_is_compact_scale(self, report):
        assert report["item4"] < 1.0

    def test_hexagonal_cross_band_item(self, hex_two_band):
        cut = hex_two_band["cutoffs"]

        def make(L):
            return [build_modifier(k, 1, None, cut, L) for k in cut.bands], \
                [build_modifier(k, 1, None, cut, L) for k in cut.bands]

        rep = verify_modifier_properties(make, L_values=(8, 12), iters=5)
        assert rep["item5"] < 1e-10
        assert max(rep["item2"].values()) < 1e-12


class TestEstimator:
    def test_fit_transform(self, chain, long_range, rng):
        est = IsozakiKitadaModifier(sign=1, L=32, R=4.0).fit(chain["ev"], long_range["ext"], chain["window"],
                                                              chain["bands"])
        u = rng.standard_normal((65, 1)) + 0j
        v = rng.standard_normal((65, 1)) + 0j
        out = est.transform([u, v])
        assert len(out) == 2
        assert abs(np.vdot(v, est.transform(u)) - np.vdot(est.adjoint_transform(v), u)) < 1e-12
        assert est.get_params()["sign"] == 1
