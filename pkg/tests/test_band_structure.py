import numpy as np
import pytest

from lattice_scatter.band_structure import (
    BandStructure,
    TorusGrid,
    ThresholdError,
    compute_bands,
    detect_thresholds,
    fermi_surface,
    spectral_filter,
    window_margin,
)
from lattice_scatter.lattice_model import build_symbol, preset


def bands_for(name, M):
    kernel = preset(name)
    grid = TorusGrid(kernel.d, M)
    return compute_bands(build_symbol(kernel, grid), grid, kernel=kernel)


class TestInvariants:
    @pytest.mark.parametrize("name", ["square1d", "hexagonal", "kagome"])
    def test_projector_identities(self, name):
        inv = bands_for(name, 256 if name == "square1d" else 64).check_invariants()
        for key in ("idempotency", "hermiticity", "eigen_equation", "resolution_of_identity"):
            assert inv[key] < 1e-12, key

    def test_chain_velocity(self, chain):
        b = chain["bands"]
        np.testing.assert_allclose(b.velocities[:, 0, 0], -2 * np.sin(b.grid.axis()), atol=1e-14)
        assert b.velocity_fd_error() < 1e-3

    def test_hexagonal_velocity_fd_near_cones(self):
        # the worst node sits next to a Dirac cone, where the band curvature is large
        assert bands_for("hexagonal", 128).velocity_fd_error() < 0.05


class TestThresholds:
    @pytest.mark.parametrize("name, expected", [
        ("square1d", [-2.0, 2.0]),
        ("square", [-4.0, 0.0, 4.0]),
        ("triangular", [-3.0, -2.0, 6.0]),
        ("hexagonal", [-3.0, -1.0, 0.0, 1.0, 3.0]),
        ("kagome", [-2.0, 0.0, 1.0, 2.0, 4.0]),
    ])
    def test_presets(self, name, expected):
        thr = detect_thresholds(bands_for(name, 256 if name == "square1d" else 64))
        np.testing.assert_allclose(thr, expected, atol=1e-6)


class TestFermiSurface:
    def test_chain_at_one(self, chain):
        fs = fermi_surface(chain["bands"], 1.0)
        np.testing.assert_allclose(np.sort(fs.points[:, 0]), [-np.pi / 3, np.pi / 3], atol=1e-12)
        np.testing.assert_allclose(fs.speed, np.sqrt(3), atol=1e-12)

    def test_chain_at_zero(self, chain):
        fs = fermi_surface(chain["bands"], 0.0)
        np.testing.assert_allclose(np.sort(fs.points[:, 0]), [-np.pi / 2, np.pi / 2], atol=1e-12)

    def test_outside_spectrum_is_empty(self, chain):
        assert len(fermi_surface(chain["bands"], 3.0)) == 0

    def test_hexagonal_residual(self, hexagonal):
        fs = fermi_surface(hexagonal["bands"], 2.0)
        assert len(fs) > 100
        lam = hexagonal["ev"].bands(fs.points)[np.arange(len(fs)), fs.band]
        assert np.max(np.abs(lam - 2.0)) < 1e-12


class TestWindow:
    def test_chain_margin(self, chain):
        w = chain["window"]
        assert w.margin == pytest.approx(0.5)
        assert w.enlarged == ((0.25, 1.75),)
        assert w.v_min == pytest.approx(np.sqrt(7) / 2, abs=1e-10)

    def test_threshold_inside_rejected(self, chain):
        with pytest.raises(ThresholdError):
            window_margin(chain["bands"], [(1.9, 2.1)], chain["thresholds"])

    def test_union_of_intervals(self, hexagonal):
        w = window_margin(hexagonal["bands"], [(-2.5, -1.5), (1.5, 2.5)], hexagonal["thresholds"])
        assert w.margin == pytest.approx(0.5)
        assert bool(w.contains(2.0)) and not bool(w.contains(0.0))

    def test_estimator(self):
        est = BandStructure(resolution=256).fit(preset("square1d"))
        np.testing.assert_allclose(est.thresholds_, [-2, 2], atol=1e-9)
        assert est.window((0.5, 1.5)).margin == pytest.approx(0.5)
        assert est.get_params()["resolution"] == 256


class TestSpectralFilter:
    def test_constant_one_is_identity(self, hexagonal):
        f = spectral_filter(hexagonal["bands"], np.ones_like)
        np.testing.assert_allclose(f, np.broadcast_to(np.eye(2), f.shape), atol=1e-12)

    def test_multiplicative(self, hexagonal):
        b = hexagonal["bands"]
        f = spectral_filter(b, lambda e: np.exp(-e ** 2))
        g = spectral_filter(b, np.cos)
        fg = spectral_filter(b, lambda e: np.exp(-e ** 2) * np.cos(e))
        np.testing.assert_allclose(f @ g, fg, atol=1e-12)

    def test_reproduces_symbol(self, hexagonal):
        b = hexagonal["bands"]
        np.testing.assert_allclose(spectral_filter(b, lambda e: e), b.evaluator.symbol(b.grid.points()), atol=1e-12)

    def test_threshold_guard(self, chain):
        with pytest.raises(ThresholdError):
            spectral_filter(chain["bands"], np.ones_like, chain["thresholds"])
        bump = lambda e: np.where(np.abs(e) < 1.5, 1.0, 0.0)  # noqa: E731
        spectral_filter(chain["bands"], bump, chain["thresholds"])
