import numpy as np
import pytest

from lattice_scatter.lattice_model import bracket, preset
from lattice_scatter.pdo_calculus import (
    LatticeState,
    SymbolField,
    adjoint_defect,
    apply_multiplier,
    box_frequencies,
    composition_remainder,
    fourier,
    grid_norm,
    inverse_fourier,
    kato_time_smoothness,
    operator_norm,
    quantize,
    quantize_adjoint,
)


def decaying(power, fn_xi, name):
    return SymbolField(lambda x, xi: bracket(x) ** -power * fn_xi(xi[..., 0]), order=power, name=name)


A = decaying(0.5, np.cos, "a")
B = decaying(0.5, lambda t: np.sin(2 * t), "b")


class TestFourier:
    def test_delta_is_constant(self):
        u = LatticeState.delta(1, 1, 16, [0]).values
        np.testing.assert_allclose(fourier(u), (2 * np.pi) ** -0.5, atol=1e-15)

    def test_round_trip_and_plancherel(self, rng):
        u = LatticeState.random(2, 2, 7, seed=rng).values
        uh = fourier(u)
        np.testing.assert_allclose(inverse_fourier(uh), u, atol=1e-13)
        assert grid_norm(uh) == pytest.approx(np.linalg.norm(u), rel=1e-13)

    def test_chain_multiplier_is_the_hopping(self, rng):
        u = LatticeState.random(1, 1, 20, seed=rng).values
        field = 2 * np.cos(box_frequencies(1, 20)[..., 0])[..., None, None]
        np.testing.assert_allclose(apply_multiplier(field, u), preset("square1d").apply_box(u), atol=1e-12)


class TestLatticeState:
    def test_bytes_round_trip(self, rng, tmp_path):
        s = LatticeState.random(2, 3, 4, seed=rng)
        s.save(tmp_path / "s.bin")
        np.testing.assert_array_equal(LatticeState.load(tmp_path / "s.bin").values, s.values)

    def test_real_payload(self):
        s = LatticeState.delta(1, 2, 3, [1], component=1)
        assert len(s.to_bytes()) == 32 + 8 * 14
        np.testing.assert_array_equal(LatticeState.from_bytes(s.to_bytes()).values, s.values)

    def test_truncated_payload(self):
        with pytest.raises(ValueError):
            LatticeState.from_bytes(LatticeState.delta(1, 1, 3, [0]).to_bytes()[:-8])

    def test_boundary_mass(self):
        assert LatticeState.delta(1, 1, 20, [19]).boundary_mass == 1.0
        assert LatticeState.delta(1, 1, 20, [0]).boundary_mass == 0.0


class TestQuantize:
    def test_multiplier_shortcut_matches_dense(self, rng):
        u = LatticeState.random(1, 1, 15, seed=rng).values
        fast = quantize(SymbolField.multiplier(lambda xi: 2 * np.cos(xi[..., 0])), u)
        dense = quantize(SymbolField(lambda x, xi: 2 * np.cos(xi[..., 0]) + 0 * x[..., 0]), u)
        np.testing.assert_allclose(fast, dense, atol=1e-12)
        np.testing.assert_allclose(fast, preset("square1d").apply_box(u), atol=1e-12)

    def test_position_is_multiplication(self, rng):
        u = LatticeState.random(1, 1, 15, seed=rng).values
        out = quantize(SymbolField.position(lambda x: x[..., 0] ** 2), u)
        np.testing.assert_allclose(out[:, 0], np.arange(-15, 16) ** 2 * u[:, 0], atol=1e-12)

    def test_separable_matches_dense(self, rng):
        u = LatticeState.random(1, 1, 15, seed=rng).values
        terms = [(lambda x: bracket(x) ** -0.5, lambda xi: np.cos(xi[..., 0]))]
        np.testing.assert_allclose(quantize(SymbolField.separable(terms), u), quantize(A, u), atol=1e-12)

    def test_matrix_valued_dense(self, rng):
        u = LatticeState.random(1, 2, 8, seed=rng).values
        mat = np.array([[0, 1], [1, 0]])
        a = SymbolField(lambda x, xi: np.cos(xi[..., 0])[..., None, None] * mat + 0 * x[..., :1, None], n=2)
        expected = np.stack([0.5 * (np.roll(u[:, 1], 1) + np.roll(u[:, 1], -1)),
                             0.5 * (np.roll(u[:, 0], 1) + np.roll(u[:, 0], -1))], axis=-1)
        np.testing.assert_allclose(quantize(a, u), expected, atol=1e-12)

    def test_adjoint_pairing(self, rng):
        u = LatticeState.random(1, 1, 12, seed=rng).values
        v = LatticeState.random(1, 1, 12, seed=rng).values
        lhs = np.vdot(v, quantize(A, u))
        rhs = np.vdot(quantize_adjoint(A, v), u)
        assert abs(lhs - rhs) < 1e-12

    def test_operator_norm_of_multiplier(self):
        a = SymbolField.multiplier(lambda xi: 2 * np.cos(xi[..., 0]))
        # the periodic box contains xi = 0, where |2 cos| attains 2
        norm = operator_norm(lambda v: quantize(a, v), lambda v: quantize_adjoint(a, v), (41, 1), iters=200)
        assert norm == pytest.approx(2.0, rel=1e-3)
        assert norm <= 2.0 + 1e-12


class TestCalculus:
    @pytest.mark.parametrize("M, bound", [(0, -2.0), (1, -3.0)])
    def test_composition_remainder_decay(self, M, bound):
        res = composition_remainder(A, B, M)
        assert res["slope"] <= bound + 0.1
        assert all(np.diff(res["norms"]) < 0)

    @pytest.mark.parametrize("M, bound", [(0, -1.5), (1, -2.5)])
    def test_adjoint_remainder_decay(self, M, bound):
        assert adjoint_defect(A, M=M)["slope"] <= bound + 0.1

    def test_composition_exact_with_multiplier_on_the_right(self):
        b = SymbolField.multiplier(lambda xi: np.cos(xi[..., 0]))
        res = composition_remainder(A, b, 0)
        assert max(res["norms"]) < 1e-13


class TestKato:
    def test_zero_operator(self):
        u = LatticeState.delta(1, 1, 10, [0]).values
        res = kato_time_smoothness(lambda v: 0 * v, lambda v, t: v, u, T=5)
        assert res["running"][-1] == 0.0

    def test_identity_gives_time(self):
        from lattice_scatter.propagation import EvolutionEngine

        eng = EvolutionEngine(preset("square1d"), 30)
        u = LatticeState.delta(1, 1, 30, [0]).values
        res = kato_time_smoothness(lambda v: v, lambda v, t: eng.evolve_free(v, t, check=False), u, T=4,
                                   checkpoints=[1, 2])
        assert res["running"][-1] == pytest.approx(4.0, rel=1e-12)
        np.testing.assert_allclose(res["values"], [1, 2], rtol=1e-12)
