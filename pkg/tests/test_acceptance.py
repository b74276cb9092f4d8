"""Acceptance suite: one printed PASS/FAIL line per criterion.

The long-range scenario (square1d, c = 0.2, rho = 0.5, window (0.5, 1.5),
L = 2048) is run once through the experiment runner; criteria 2, 3 and 5-9
read its result document. Criterion 11 repeats the run in a fresh directory
without the artifact cache and compares the metrics.
"""
import json
import time

import numpy as np
import pytest

from lattice_scatter.band_structure import TorusGrid, compute_bands, window_margin
from lattice_scatter.lattice_model import bracket, build_symbol, preset
from lattice_scatter.modifiers import build_cutoffs, build_modifier, verify_modifier_properties
from lattice_scatter.pdo_calculus import SymbolField, adjoint_defect, composition_remainder
from lattice_scatter.runner import parse_config, run_experiments

LONG_RANGE = {
    "lattice": {"preset": "square1d"},
    "potential": {"c": 0.2, "rho": 0.5},
    "window": [0.5, 1.5],
    "grid": {"L": 2048},
    "experiments": ["bands", {"name": "thresholds", "expected": [-2, 2]}, "phase", "modifier-checks", "cook",
                    "waveop", "mismatch", {"name": "mourre", "expected": 3.5}, "radiation", "lap"],
    "seed": 7,
}

SHORT_RANGE = {
    "lattice": {"preset": "square1d"},
    "potential": {"c": 0.0, "rho": 0.5, "short": {"kind": "alternating", "amplitude": 0.3, "exponent": 1.5}},
    "window": [0.5, 1.5],
    "grid": {"L": 2048},
    "experiments": [{"name": "waveop", "modifier": "identity", "isometry_tol": 0.01}],
    "seed": 7,
}


def verdict(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {number:2d} {'PASS' if ok else 'FAIL'}: {title} -- {detail}")
    assert ok, f"criterion {number} ({title}): {detail}"


def timed_run(doc, out, cache=True):
    t0 = time.perf_counter()
    res = run_experiments(parse_config(doc), out=str(out), cache=cache)
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def long_run(tmp_path_factory):
    return timed_run(LONG_RANGE, tmp_path_factory.mktemp("long") / "out", cache=False)[0]


def cost(res, *names):
    t = res["timings"]
    return sum(t.get(n, 0.0) for n in names)


ARTIFACTS = ("artifact:bands", "artifact:thresholds", "artifact:phase", "artifact:modifiers", "artifact:engine")


def test_criterion_01_thresholds(capsys, tmp_path):
    exps = lambda expected: ["bands", {"name": "thresholds", "expected": expected, "tol": 1e-3}]  # noqa: E731
    t0 = time.perf_counter()
    hexa, _ = timed_run({"lattice": {"preset": "hexagonal"}, "potential": {"c": 0.0, "rho": 0.5},
                         "window": [1.5, 2.5], "experiments": exps([-3, -1, 0, 1, 3])}, tmp_path / "hex")
    chain, _ = timed_run({"lattice": {"preset": "square1d"}, "potential": {"c": 0.0, "rho": 0.5},
                          "window": [0.5, 1.5], "experiments": exps([-2, 2])}, tmp_path / "chain")
    elapsed = time.perf_counter() - t0
    th_hex = hexa["experiments"]["thresholds"]["metrics"]["thresholds"]
    th_chain = chain["experiments"]["thresholds"]["metrics"]["thresholds"]
    err_hex = float(np.max(np.abs(np.array(th_hex) - [-3, -1, 0, 1, 3]))) if len(th_hex) == 5 else np.inf
    err_chain = float(np.max(np.abs(np.array(th_chain) - [-2, 2]))) if len(th_chain) == 2 else np.inf
    ok = err_hex < 1e-3 and err_chain < 1e-9 and elapsed < 10
    verdict(capsys, 1, "band/threshold oracle", ok,
            f"hexagonal err {err_hex:.2e}, square1d err {err_chain:.2e}, {elapsed:.1f}s")


def test_criterion_02_mourre(capsys, long_run):
    c = long_run["experiments"]["mourre"]["metrics"]["c_star"]
    t = cost(long_run, "mourre")
    verdict(capsys, 2, "free Mourre constant", abs(c - 3.5) <= 0.01 and t < 5, f"c* = {c:.6f}, {t:.2f}s")


def test_criterion_03_eikonal(capsys, long_run):
    m = long_run["experiments"]["phase"]["metrics"]["band0"]
    t = cost(long_run, "artifact:phase", "phase")
    ok = (m["max_residual"] < 1e-8 and m["max_hessian_defect"] < 0.5 and abs(m["u_exponent"] - 0.5) <= 0.15
          and t < 120)
    verdict(capsys, 3, "eikonal quality", ok,
            f"R = {m['metadata']['R']}, residual {m['max_residual']:.1e}, hessian defect "
            f"{m['max_hessian_defect']:.3f}, exponent {m['u_exponent']:.3f}, {t:.1f}s")


def test_criterion_04_calculus(capsys):
    t0 = time.perf_counter()
    a = SymbolField(lambda x, xi: bracket(x) ** -0.5 * np.cos(xi[..., 0]), order=0.5, name="a")
    b = SymbolField(lambda x, xi: bracket(x) ** -0.5 * np.sin(2 * xi[..., 0]), order=0.5, name="b")
    comp = {M: composition_remainder(a, b, M)["slope"] for M in (0, 1)}
    adj = adjoint_defect(a)["slope"]

    kernel = preset("hexagonal")
    grid = TorusGrid(2, 64)
    bands = compute_bands(build_symbol(kernel, grid), grid, kernel=kernel)
    cut = build_cutoffs(2.0, window_margin(bands, [(-2.5, -1.5), (1.5, 2.5)]), bands)

    def make(L):
        Js = [build_modifier(k, 1, None, cut, L) for k in cut.bands]
        return Js, Js

    cross = verify_modifier_properties(make, L_values=(12,), iters=3)["item5"]
    elapsed = time.perf_counter() - t0
    # the composition of orders 0.5 + 0.5 leaves a remainder of order 1 + (M + 1)
    ok = (comp[0] <= -(1 + 1) + 0.3 and comp[1] <= -(1 + 2) + 0.3 and adj <= -(0.5 + 1) + 0.3
          and cross < 1e-10 and len(cut.bands) == 2 and elapsed < 120)
    verdict(capsys, 4, "operator-calculus orders", ok,
            f"composition slopes {comp[0]:.2f} (M=0), {comp[1]:.2f} (M=1); adjoint slope {adj:.2f}; "
            f"cross-band residual {cross:.1e}; {elapsed:.1f}s")


def test_criterion_05_cook(capsys, long_run):
    s = long_run["experiments"]["cook"]["metrics"]["slope"]
    t = cost(long_run, *ARTIFACTS, "cook")
    verdict(capsys, 5, "Cook integrand decay", s <= -1.2 and t < 600, f"slope {s:.2f}, {t:.0f}s")


def test_criterion_06_wave_operator(capsys, long_run):
    m = long_run["experiments"]["waveop"]["metrics"]
    t = cost(long_run, *ARTIFACTS, "waveop")
    ok = (m["gaps_decreasing"] and abs(m["isometry"] - 1) <= 0.02 and m["intertwining"] <= 5 * m["gaps"][-1]
          and abs(m["decomposition"] - 1) <= 0.02 and t < 900)
    verdict(capsys, 6, "wave-operator convergence and isometry", ok,
            f"gaps {[f'{g:.1e}' for g in m['gaps']]}, isometry {m['isometry']:.4f}, intertwining "
            f"{m['intertwining']:.1e}, decomposition {m['decomposition']:.4f}, {t:.0f}s")


def test_criterion_07_mismatch(capsys, long_run):
    s = long_run["experiments"]["mismatch"]["metrics"]["slope"]
    t = cost(long_run, *ARTIFACTS, "mismatch")
    verdict(capsys, 7, "mismatch vanishing", s <= -3 and t < 300, f"slope {s:.2f}, {t:.0f}s")


def test_criterion_08_radiation(capsys, long_run):
    r = long_run["experiments"]["radiation"]["metrics"]["increment_ratio"]
    t = cost(long_run, *ARTIFACTS, "radiation")
    verdict(capsys, 8, "radiation estimate trend", r < 0.7 and t < 600, f"increment ratio {r:.3f}, {t:.0f}s")


def test_criterion_09_limiting_absorption(capsys, long_run):
    m = long_run["experiments"]["lap"]["metrics"]
    t = cost(long_run, "lap")
    ok = m["max_flatness"] < 1.1 and m["free_crosscheck"] < 0.01 and t < 600
    verdict(capsys, 9, "limiting absorption flatness", ok,
            f"flatness {m['max_flatness']:.4f} (free {max(m['free_flatness']):.4f}), "
            f"Fourier cross-check {m['free_crosscheck']:.1e}, {t:.1f}s")


def test_criterion_10_short_range(capsys, tmp_path):
    res, elapsed = timed_run(SHORT_RANGE, tmp_path / "short")
    m = res["experiments"]["waveop"]["metrics"]
    ok = m["gaps_decreasing"] and abs(m["isometry"] - 1) <= 0.01 and elapsed < 600
    verdict(capsys, 10, "short-range sanity with J = Id", ok,
            f"gaps {[f'{g:.1e}' for g in m['gaps']]}, isometry {m['isometry']:.5f}, {elapsed:.0f}s")


def test_criterion_11_determinism(capsys, long_run, tmp_path):
    again, _ = timed_run(LONG_RANGE, tmp_path / "again", cache=False)
    first = json.dumps(long_run["experiments"], sort_keys=True)
    second = json.dumps(again["experiments"], sort_keys=True)
    differing = sorted(k for k in long_run["experiments"]
                       if json.dumps(long_run["experiments"][k], sort_keys=True)
                       != json.dumps(again["experiments"].get(k), sort_keys=True))
    verdict(capsys, 11, "determinism", first == second,
            "identical metrics across two runs" if first == second else f"differing experiments: {differing}")
