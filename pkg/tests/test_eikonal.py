import numpy as np
import pytest

from lattice_scatter.band_structure import BandEvaluator
from lattice_scatter.eikonal import (
    ConeRegion,
    EikonalPhase,
    cosine,
    hamilton_flow,
    ray_integral,
    solve_phase,
    verify_phase,
)
from lattice_scatter.lattice_model import build_potential, preset, smooth_extension


@pytest.fixture(scope="module")
def inverse_square():
    return smooth_extension(build_potential(1.0, 2.0))


class TestRayIntegral:
    def test_closed_form(self, inverse_square):
        assert ray_integral(inverse_square, [10.0], [1.0]) == pytest.approx(np.pi / 2 - np.arctan(10), abs=1e-12)

    def test_speed_scaling(self, inverse_square):
        assert ray_integral(inverse_square, [10.0], [2.0]) == pytest.approx(0.5 * (np.pi / 2 - np.arctan(10)))

    def test_incoming_sign(self, inverse_square):
        assert ray_integral(inverse_square, [-10.0], [1.0], sign=-1) == pytest.approx(-(np.pi / 2 - np.arctan(10)))

    def test_divergent_rejected(self, long_range):
        with pytest.raises(ValueError):
            ray_integral(long_range["ext"], [10.0], [1.0])


class TestCone:
    def test_cosine(self):
        assert cosine([1.0, 0.0], [0.0, 2.0]) == 0.0
        assert cosine([3.0], [-1.0]) == -1.0
        assert cosine([0.0], [1.0]) == 0.0

    def test_contains(self):
        reg = ConeRegion(0, 5.0, epsilon=0.5, sign=-1)
        assert reg.contains([-6.0], [1.0]) and not reg.contains([6.0], [1.0]) and not reg.contains([-4.0], [1.0])

    @pytest.mark.parametrize("kw", [{"R": 0.0}, {"R": 1.0, "epsilon": 2.5}, {"R": 1.0, "sign": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ConeRegion(0, **kw)


class TestHamiltonFlow:
    def test_energy_conservation_is_second_order(self, chain, long_range):
        args = (chain["ev"], 0, long_range["ext"], [30.0], [-np.pi / 3])
        coarse = hamilton_flow(*args, T=50, dt=2e-2).energy_drift
        fine = hamilton_flow(*args, T=50, dt=1e-2).energy_drift
        assert fine < 1e-8
        assert coarse / fine == pytest.approx(4.0, rel=0.1)

    def test_free_flow_is_straight(self, chain):
        zero = smooth_extension(build_potential(0.0, 0.5))
        tr = hamilton_flow(chain["ev"], 0, zero, [0.0], [-np.pi / 2], T=5, dt=0.1)
        np.testing.assert_allclose(tr.x[-1], [10.0], atol=1e-12)
        assert tr.energy_drift < 1e-14


class TestPhase:
    def test_fixed_R_converges_quickly(self, chain, long_range):
        ph = solve_phase(chain["ev"], 0, long_range["ext"], ConeRegion(0, 20.0), window=chain["window"])
        assert ph.iterations <= 12
        assert ph.residual < 1e-8

    def test_auto_R(self, phase05):
        assert phase05.R == 1.0
        assert phase05.iterations <= 20

    def test_verification(self, phase05):
        rep = verify_phase(phase05)
        assert rep.passed
        assert rep.max_residual < 1e-8
        assert abs(rep.u_exponent - 0.5) <= 0.15 and abs(rep.grad_exponent + 0.5) <= 0.15

    def test_eikonal_equation_directly(self, chain, long_range, phase05):
        xi = np.linspace(-2.0, -0.9, 7)
        for x in (12.0, 80.0, -40.0):
            X = np.full_like(xi, x)
            lam = chain["ev"].band(0, (xi + phase05.grad_x(X, xi))[:, None])
            vt = long_range["ext"].value(X[:, None])
            np.testing.assert_allclose(lam + vt, chain["ev"].band(0, xi[:, None]), atol=1e-8)

    def test_odd_in_x_and_sign_relation(self, phase05):
        xi = np.array([-np.pi / 3])
        for x in (50.0, 17.0):
            up = phase05.u(np.array([x]), xi)
            assert phase05.u(np.array([-x]), xi) == pytest.approx(-up, rel=1e-12)
            assert phase05.with_sign(-1).u(np.array([-x]), xi) == pytest.approx(-up, rel=1e-12)

    def test_zero_potential_is_trivial(self):
        ev = BandEvaluator(preset("square"))
        ph = solve_phase(ev, 0, smooth_extension(build_potential(0.0, 0.5, d=2)))
        assert ph.trivial
        assert ph.u(np.array([[3.0, 4.0]]), np.array([[0.1, 0.2]])) == 0.0
        assert verify_phase(ph).passed

    def test_higher_dimension_long_range_not_implemented(self):
        ev = BandEvaluator(preset("square"))
        with pytest.raises(NotImplementedError):
            solve_phase(ev, 0, smooth_extension(build_potential(0.2, 0.5, d=2)))

    def test_estimator(self, chain, long_range):
        est = EikonalPhase(k=0, R=20.0).fit(chain["ev"], long_range["ext"], chain["window"])
        assert est.report_.passed
        assert est.phase_.R == 20.0
