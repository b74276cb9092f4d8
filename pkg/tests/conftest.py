"""Shared fixtures: the 1D free band with a rho = 1/2 long-range potential, and the hexagonal lattice."""
import numpy as np
import pytest

from lattice_scatter.band_structure import BandEvaluator, TorusGrid, compute_bands, detect_thresholds, window_margin
from lattice_scatter.eikonal import solve_phase
from lattice_scatter.lattice_model import build_potential, preset, smooth_extension
from lattice_scatter.modifiers import build_cutoffs


@pytest.fixture(scope="session")
def chain():
    kernel = preset("square1d")
    bands = compute_bands(kernel, TorusGrid(1, 256))
    thresholds = detect_thresholds(bands)
    window = window_margin(bands, [(0.5, 1.5)], thresholds)
    return {"kernel": kernel, "ev": BandEvaluator(kernel), "bands": bands, "thresholds": thresholds,
            "window": window}


@pytest.fixture(scope="session")
def long_range():
    pot = build_potential(0.2, 0.5, d=1, n=1)
    return {"pot": pot, "ext": smooth_extension(pot)}


@pytest.fixture(scope="session")
def phase05(chain, long_range):
    return solve_phase(chain["ev"], 0, long_range["ext"], window=chain["window"])


@pytest.fixture(scope="session")
def cutoffs05(chain):
    return build_cutoffs(4.0, chain["window"], chain["bands"])


@pytest.fixture(scope="session")
def hexagonal():
    kernel = preset("hexagonal")
    bands = compute_bands(kernel, TorusGrid(2, 128))
    thresholds = detect_thresholds(bands)
    return {"kernel": kernel, "ev": BandEvaluator(kernel), "bands": bands, "thresholds": thresholds}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
