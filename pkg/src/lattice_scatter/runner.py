"""Configuration parsing and the experiment runner.

A run is described by one JSON document. Experiments declare their
dependencies on shared artifacts (bands, thresholds, phase, modifiers,
engine); the runner orders them topologically, caches the expensive
artifacts on disk under a content hash, writes ``result.json`` plus
``curves/*.csv`` and reports an exit status (0 all pass, 1 any failure,
2 configuration error).
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import os
import pickle
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from graphlib import TopologicalSorter
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from .band_structure import (
    BandEvaluator,
    ThresholdError,
    TorusGrid,
    compute_bands,
    default_resolution,
    detect_thresholds,
    window_margin,
)
from .lattice_model import HoppingKernel, Potential, ShortRangePart, build_potential, preset, preset_names

__all__ = ["ConfigError", "ExperimentConfig", "ExperimentError", "parse_config", "load_config", "run_experiments",
           "EXPERIMENTS", "DEFAULTS"]

EXPERIMENTS = ("bands", "thresholds", "phase", "modifier-checks", "cook", "waveop", "mismatch", "mourre",
               "radiation", "lap")

# artifacts each experiment needs; artifacts depend on each other as listed in _ARTIFACT_DEPS
_NEEDS = {
    "bands": ["bands"],
    "thresholds": ["thresholds"],
    "phase": ["phase"],
    "modifier-checks": ["phase"],
    "cook": ["modifiers", "engine"],
    "waveop": ["modifiers", "engine"],
    "mismatch": ["modifiers", "engine"],
    "mourre": ["thresholds"],
    "radiation": ["modifiers", "engine"],
    "lap": ["thresholds"],
}
_ARTIFACT_DEPS = {"bands": [], "thresholds": ["bands"], "phase": ["thresholds"], "modifiers": ["phase"],
                  "engine": ["thresholds"]}

DEFAULTS: dict = {
    "bands": {"fd_tol": 0.05},
    "thresholds": {"expected": None, "tol": 1e-3},
    "phase": {"max_residual": 1e-8, "max_hessian_defect": 0.5, "exponent_tol": 0.15},
    "modifier-checks": {"L_values": [128, 256, 512], "max_spread": 0.25, "max_cross": 1e-10, "pairs": 20,
                        "max_pairing": 1e-10, "x0s": [16, 32, 64, 128], "slope_slack": 0.3, "iters": 30},
    "cook": {"times": [10, 15, 20, 30, 40, 50, 60, 70, 80, 90, 100], "fit_range": [10, 100], "max_slope": -1.2},
    "waveop": {"checkpoints": [25, 50, 75, 100], "isometry_tol": 0.02, "intertwining_factor": 5.0,
               "decomposition_tol": 0.02, "modifier": "ik"},
    "mismatch": {"times": [20, 30, 40, 50, 60, 70, 80, 90, 100], "fit_range": [20, 100], "max_slope": -3.0},
    "mourre": {"psi": "sharp", "expected": None, "tol": 0.01},
    "radiation": {"T": 160.0, "dt": 1.0, "k": None, "j": 0, "max_ratio": 0.7},
    "lap": {"L": 1024, "lams": [1.0], "epss": [0.1, 0.05, 0.02, 0.01], "s": 1.0, "max_flatness": 1.1,
            "max_crosscheck": 0.01, "iters": 50},
}


class ConfigError(ValueError):
    """Invalid configuration; carries the offending ``field`` and source ``line`` when known."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        where = []
        if field:
            where.append(f"field '{field}'")
        if line:
            where.append(f"line {line}")
        super().__init__(f"{message}" + (f" ({', '.join(where)})" if where else ""))
        self.field = field
        self.line = line


class ExperimentError(RuntimeError):
    """A module error raised inside an experiment, tagged with the experiment name."""


@dataclass(eq=False)
class ExperimentConfig:
    """Validated run configuration.

    Attributes
    ----------
    kernel : HoppingKernel
    potential : Potential
    gamma : list of (a, b)
    M : int
        Band-grid resolution.
    L : int
        Box half-width for propagation.
    phase : dict
        ``tol``, ``max_iter``, optional ``R``.
    cutoff_R : float or None
        Cutoff radius (defaults to ``max(phase R, 4)``).
    packet : dict
        ``x0``, ``width``, optional ``xi0`` (first-axis momentum).
    experiments : list of (name, params)
    output : str
    seed : int
    raw : dict
        The document as given (echoed into the result).
    """

    kernel: HoppingKernel
    potential: Potential
    gamma: list
    M: int
    L: int
    phase: dict
    cutoff_R: Optional[float]
    packet: dict
    experiments: list
    output: str
    seed: int
    raw: dict
    thresholds: list = field(default_factory=list)
    window: Any = None
    bands: Any = None


def _line_of(text: str, key: str) -> Optional[int]:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _get(doc: dict, path: str, text: str, *, required: bool = True, default=None):
    cur: Any = doc
    for part in path.split("."):
        if not isinstance(cur, dict) or part not in cur:
            if required:
                parent = path.rsplit(".", 1)[0] if "." in path else None
                raise ConfigError(f"missing required field '{path}'", path,
                                  _line_of(text, parent.split(".")[-1]) if parent else None)
            return default
        cur = cur[part]
    return cur


def _number(val, path, text, *, positive=False, allow_none=False):
    if val is None and allow_none:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not np.isfinite(val):
        raise ConfigError(f"'{path}' must be a finite number, got {val!r}", path, _line_of(text, path.split(".")[-1]))
    if positive and val <= 0:
        raise ConfigError(f"'{path}' must be positive, got {val!r}", path, _line_of(text, path.split(".")[-1]))
    return float(val)


def _int(val, path, text, minimum=1):
    if isinstance(val, bool) or not isinstance(val, int) or val < minimum:
        raise ConfigError(f"'{path}' must be an integer >= {minimum}, got {val!r}", path,
                          _line_of(text, path.split(".")[-1]))
    return int(val)


def parse_config(source, *, validate: bool = True) -> ExperimentConfig:
    """Parse and validate a JSON configuration.

    Parameters
    ----------
    source : str, Path or dict
        Path to a JSON file, or an already-loaded document.
    validate : bool
        Detect thresholds and check the window against them (needed before
        any propagation runs).

    Raises
    ------
    ConfigError
        Unknown preset, malformed or missing field, or a window touching a
        threshold; the message names the field and, for files, the line.
    """
    if isinstance(source, dict):
        doc, text, base = copy.deepcopy(source), json.dumps(source, indent=2), Path.cwd()
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text()
        base = path.parent
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON: {exc.msg}", None, exc.lineno) from exc
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a JSON object")

    lattice = _get(doc, "lattice", text)
    if not isinstance(lattice, dict):
        raise ConfigError("'lattice' must be an object with 'preset' or 'kernel_file'", "lattice",
                          _line_of(text, "lattice"))
    if "preset" in lattice:
        try:
            kernel = preset(lattice["preset"])
        except KeyError:
            raise ConfigError(f"unknown preset {lattice['preset']!r}; available: {', '.join(preset_names())}",
                              "lattice.preset", _line_of(text, "preset")) from None
    elif "kernel_file" in lattice:
        kpath = Path(lattice["kernel_file"])
        kpath = kpath if kpath.is_absolute() else base / kpath
        try:
            kernel = HoppingKernel.from_dict(json.loads(kpath.read_text()))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"cannot load kernel file {kpath}: {exc}", "lattice.kernel_file",
                              _line_of(text, "kernel_file")) from exc
    else:
        raise ConfigError("'lattice' needs 'preset' or 'kernel_file'", "lattice", _line_of(text, "lattice"))

    seed = _int(doc.get("seed", 0), "seed", text, minimum=0)
    pdoc = _get(doc, "potential", text)
    c = _number(_get(doc, "potential.c", text), "potential.c", text)
    rho = _number(_get(doc, "potential.rho", text), "potential.rho", text, positive=True)
    short_doc = dict(pdoc.get("short") or {})
    if short_doc.get("kind") == "random" and short_doc.get("seed") is None:
        short_doc["seed"] = seed
    try:
        short = ShortRangePart.from_dict(short_doc)
        potential = build_potential(c, rho, d=kernel.d, n=kernel.n, long_table=pdoc.get("long_table"), short=short)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid potential: {exc}", "potential", _line_of(text, "potential")) from exc

    gamma = _get(doc, "window", text)
    try:
        gamma = [tuple(map(float, iv)) for iv in (gamma if np.ndim(gamma) == 2 else [gamma])]
        if any(len(iv) != 2 or not iv[0] < iv[1] for iv in gamma):
            raise ValueError
    except (TypeError, ValueError):
        raise ConfigError(f"'window' must be [a, b] or a list of [a, b] with a < b, got {doc['window']!r}",
                          "window", _line_of(text, "window")) from None

    grid = doc.get("grid", {})
    M = _int(grid.get("M", default_resolution(kernel.d)), "grid.M", text, minimum=8)
    L = _int(grid.get("L", 2048), "grid.L", text)
    phase = {"tol": 1e-8, "max_iter": 40, "R": None, **doc.get("phase", {})}
    _number(phase["tol"], "phase.tol", text, positive=True)
    _int(phase["max_iter"], "phase.max_iter", text)
    _number(phase["R"], "phase.R", text, positive=True, allow_none=True)
    cutoff_R = _number(doc.get("cutoff_R"), "cutoff_R", text, positive=True, allow_none=True)
    packet = {"x0": 0.0, "width": 10.0, "xi0": None, **doc.get("packet", {})}
    _number(packet["width"], "packet.width", text, positive=True)

    exps = _get(doc, "experiments", text)
    if not isinstance(exps, list) or not exps:
        raise ConfigError("'experiments' must be a non-empty list", "experiments", _line_of(text, "experiments"))
    experiments = []
    for i, e in enumerate(exps):
        name, params = (e, {}) if isinstance(e, str) else (e.get("name") if isinstance(e, dict) else None,
                                                            {k: v for k, v in e.items() if k != "name"}
                                                            if isinstance(e, dict) else {})
        if name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {name!r}; available: {', '.join(EXPERIMENTS)}",
                              f"experiments[{i}]", _line_of(text, "experiments"))
        unknown = set(params) - set(DEFAULTS[name])
        if unknown:
            raise ConfigError(f"unknown parameters {sorted(unknown)} for experiment {name!r}",
                              f"experiments[{i}]", _line_of(text, sorted(unknown)[0]))
        experiments.append((name, {**DEFAULTS[name], **params}))

    cfg = ExperimentConfig(kernel, potential, gamma, M, L, phase, cutoff_R, packet, experiments,
                           str(doc.get("output", "out")), seed, doc)
    if validate:
        _validate_window(cfg, text)
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config(path)


def _validate_window(cfg: ExperimentConfig, text: str) -> None:
    bands = compute_bands(cfg.kernel, TorusGrid(cfg.kernel.d, cfg.M))
    ths = detect_thresholds(bands)
    try:
        cfg.window = window_margin(bands, cfg.gamma, ths)
    except (ThresholdError, ValueError) as exc:
        raise ConfigError(f"window rejected: {exc}", "window", _line_of(text, "window")) from exc
    cfg.bands = bands
    cfg.thresholds = [float(t) for t in ths]


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


def _hash(*parts) -> str:
    h = hashlib.sha256()
    h.update(__version__.encode())
    for p in parts:
        h.update(json.dumps(p, sort_keys=True, default=str).encode())
    return h.hexdigest()[:24]


class _Cache:
    """On-disk pickle cache of intermediate artifacts, keyed by content hash."""

    def __init__(self, root: Optional[Path]):
        self.root = root
        if root is not None:
            root.mkdir(parents=True, exist_ok=True)

    def get(self, kind: str, key: str):
        if self.root is None:
            return None
        path = self.root / f"{kind}-{key}.pkl"
        if path.is_file():
            with open(path, "rb") as fh:
                return pickle.load(fh)
        return None

    def put(self, kind: str, key: str, obj) -> None:
        if self.root is None:
            return
        tmp = self.root / f".{kind}-{key}.tmp"
        with open(tmp, "wb") as fh:
            pickle.dump(obj, fh, protocol=pickle.HIGHEST_PROTOCOL)
        os.replace(tmp, self.root / f"{kind}-{key}.pkl")


def _flag(value, threshold, op: str) -> dict:
    ops = {"<": lambda a, b: a < b, "<=": lambda a, b: a <= b, ">": lambda a, b: a > b, "==": lambda a, b: a == b}
    ok = bool(value is not None and not (isinstance(value, float) and np.isnan(value)) and ops[op](value, threshold))
    return {"value": value, "threshold": threshold, "op": op, "pass": ok}


def _clean(obj):
    """Convert numpy scalars and arrays to plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


class _Run:
    def __init__(self, cfg: ExperimentConfig, cache_dir: Optional[Path]):
        self.cfg = cfg
        self.cache = _Cache(cache_dir)
        self.art: dict = {}
        self.timings: dict = {}

    # -- artifacts ----------------------------------------------------------------
    def _key(self, *extra):
        cfg = self.cfg
        return _hash(cfg.kernel.to_dict(), cfg.potential.to_dict(), cfg.gamma, cfg.M, *extra)

    def build(self, name: str) -> None:
        t0 = time.perf_counter()
        getattr(self, "_build_" + name)()
        self.timings["artifact:" + name] = time.perf_counter() - t0

    def _build_bands(self):
        cfg = self.cfg
        if cfg.bands is None:
            cfg.bands = compute_bands(cfg.kernel, TorusGrid(cfg.kernel.d, cfg.M))
        self.art["bands"] = cfg.bands

    def _build_thresholds(self):
        cfg = self.cfg
        if cfg.window is None:
            _validate_window(cfg, json.dumps(cfg.raw))
        self.art["thresholds"] = cfg.thresholds
        self.art["window"] = cfg.window

    def _build_phase(self):
        from .eikonal import ConeRegion, solve_phase
        from .lattice_model import smooth_extension

        cfg = self.cfg
        key = self._key("phase", cfg.phase)
        phases = self.cache.get("phase", key)
        if phases is None:
            ev = BandEvaluator(cfg.kernel)
            ext = smooth_extension(cfg.potential)
            phases = {}
            for k in self._active_bands():
                region = ConeRegion(k, cfg.phase["R"]) if cfg.phase.get("R") else None
                phases[k] = solve_phase(ev, k, ext, region, window=cfg.window, tol=cfg.phase["tol"],
                                        max_iter=cfg.phase["max_iter"])
            self.cache.put("phase", key, phases)
        self.art["phases"] = phases

    def _active_bands(self):
        from .modifiers import build_cutoffs

        return build_cutoffs(1.0, self.cfg.window, self.art["bands"]).bands

    def _cutoff_R(self):
        if self.cfg.cutoff_R is not None:
            return self.cfg.cutoff_R
        return max([p.R for p in self.art["phases"].values()] + [4.0])

    def _build_modifiers(self):
        from .modifiers import build_cutoffs, build_modifier, build_sum

        cfg = self.cfg
        phases = self.art["phases"]
        cut = build_cutoffs(self._cutoff_R(), cfg.window, self.art["bands"])
        key = self._key("tables", cfg.phase, cfg.L)
        tables = self.cache.get("tables", key)
        if tables is not None:
            for k, store in tables.items():
                phases[k].__dict__["_table_cache"] = store
        mods = {}
        for sign in (1, -1):
            parts = [build_modifier(k, sign, phases[k].with_sign(sign), cut, cfg.L) for k in cut.bands]
            for J in parts:  # share the phase tables between signs
                J.phase.__dict__["_table_cache"] = phases[J.k].__dict__.setdefault("_table_cache", {})
                J._kernel()
            mods[sign] = build_sum(parts)
        if tables is None:
            self.cache.put("tables", key, {k: p.__dict__.get("_table_cache", {}) for k, p in phases.items()})
        self.art["cutoffs"] = cut
        self.art["J"] = mods

    def _build_engine(self):
        from .propagation import EvolutionEngine

        cfg = self.cfg
        eng = EvolutionEngine.from_potential(cfg.kernel, cfg.potential, cfg.L)
        if eng.potential is not None and eng.full_method == "exact":
            key = self._key("eigh", cfg.L)
            eig = self.cache.get("eigh", key)
            if eig is None:
                eig = eng._full_eig()
                self.cache.put("eigh", key, eig)
            eng._cache["full"] = eig
        self.art["engine"] = eng

    # -- packet ----------------------------------------------------------------
    def packet(self):
        from .modifiers import axis_momentum
        from .propagation import gaussian_packet

        cfg = self.cfg
        ev = BandEvaluator(cfg.kernel)
        a, b = cfg.gamma[0]
        bands = self.art.get("cutoffs").bands if "cutoffs" in self.art else self._active_bands()
        k = bands[0]
        if cfg.packet.get("xi0") is None:
            q = axis_momentum(ev, k, 0.5 * (a + b), 1)
        else:
            q = np.r_[cfg.packet["xi0"], np.zeros(cfg.kernel.d - 1)]
        vec = None
        if cfg.kernel.n > 1:
            vec = ev.eigensystem(q[None, :])[1][0, :, k]
        x0 = np.r_[cfg.packet["x0"], np.zeros(cfg.kernel.d - 1)]
        u = gaussian_packet(cfg.kernel.d, cfg.kernel.n, cfg.L, x0, q, cfg.packet["width"], vec)
        psi = _window_psi(cfg.gamma)
        return u, psi

    # -- experiments ---------------------------------------------------------------
    def run(self, name: str, p: dict) -> dict:
        return getattr(self, "_exp_" + name.replace("-", "_"))(p)

    def _exp_bands(self, p):
        b = self.art["bands"]
        inv = b.check_invariants()
        fd = b.velocity_fd_error()
        lo, hi = b.spectrum_range()
        metrics = {"resolution": b.grid.resolution, "spectrum": [lo, hi], "invariants": inv, "velocity_fd_error": fd}
        flags = {"velocity_fd": _flag(fd, p["fd_tol"], "<")}
        for key, val in inv.items():
            if key != "velocity_fd" and isinstance(val, (float, int)) and not isinstance(val, bool):
                flags[f"invariant:{key}"] = _flag(float(val), 1e-10, "<")
        curves = {"bands": _band_rows(b)}
        return {"metrics": metrics, "flags": flags, "curves": curves}

    def _exp_thresholds(self, p):
        ths = self.art["thresholds"]
        win = self.art["window"]
        metrics = {"thresholds": ths, "window": win.to_dict()}
        flags = {}
        if p["expected"] is not None:
            exp = sorted(p["expected"])
            err = max((min(abs(t - e) for t in ths) for e in exp), default=0.0) if ths else float("inf")
            flags["matches_expected"] = _flag(float(err), p["tol"], "<=")
            flags["count"] = _flag(len(ths), len(exp), "==")
        return {"metrics": metrics, "flags": flags}

    def _exp_phase(self, p):
        from .eikonal import verify_phase

        rho = self.cfg.potential.rho
        metrics, flags = {}, {}
        for k, ph in self.art["phases"].items():
            if ph.trivial:
                metrics[f"band{k}"] = {"trivial": True, "R": ph.R}
                continue
            rep = verify_phase(ph, raise_on_failure=False)
            d = rep.to_dict()
            metrics[f"band{k}"] = {**d, "metadata": ph.metadata()}
            flags[f"band{k}:residual"] = _flag(d["max_residual"], p["max_residual"], "<")
            flags[f"band{k}:hessian"] = _flag(d["max_hessian_defect"], p["max_hessian_defect"], "<")
            flags[f"band{k}:exponent"] = _flag(abs(d["u_exponent"] - (1 - rho)), p["exponent_tol"], "<=")
        return {"metrics": metrics, "flags": flags}

    def _exp_modifier_checks(self, p):
        from .modifiers import (build_cutoffs, build_modifier, leading_symbol_defect,
                                verify_modifier_properties)
        from .propagation import EvolutionEngine

        cfg = self.cfg
        phases = self.art["phases"]
        cut = build_cutoffs(self._cutoff_R(), cfg.window, self.art["bands"])

        def make(L):
            Js = [build_modifier(k, 1, phases[k].with_sign(1), cut, L) for k in cut.bands]
            Ss = [build_modifier(k, 1, None, cut, L) for k in cut.bands]
            return Js, Ss

        rep = verify_modifier_properties(make, p["L_values"], rho=cfg.potential.rho, iters=p["iters"],
                                         seed=cfg.seed)
        L0 = p["L_values"][0]
        rng = np.random.default_rng(cfg.seed)
        Js, _ = make(L0)
        shape = (2 * L0 + 1,) * cfg.kernel.d + (cfg.kernel.n,)
        pairing = 0.0
        for _ in range(p["pairs"]):
            u = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
            v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
            for J in Js:
                pairing = max(pairing, abs(np.vdot(v, J.apply(u)) - np.vdot(J.apply_adjoint(v), u))
                              / (np.linalg.norm(u) * np.linalg.norm(v)))
        metrics = {"item2": rep["item2"], "item2_spread": rep["item2_spread"], "item3": rep["item3"],
                   "item4": rep["item4"], "item5": rep["item5"], "adjoint_pairing": pairing}
        flags = {"item2_spread": _flag(rep["item2_spread"], p["max_spread"], "<="),
                 "adjoint_pairing": _flag(float(pairing), p["max_pairing"], "<")}
        if len(Js) > 1:
            flags["item5"] = _flag(rep["item5"], p["max_cross"], "<")
        if cfg.kernel.d == 1:
            Lb = max(p["x0s"]) * 2 + 64
            eng = EvolutionEngine.from_potential(cfg.kernel, cfg.potential, Lb)
            J = build_modifier(Js[0].k, 1, phases[Js[0].k].with_sign(1), cut, Lb)
            lead = leading_symbol_defect(J, eng.apply_H, eng.apply_H0, p["x0s"])
            target = -min(1 + cfg.potential.rho, 2.0) + p["slope_slack"]
            metrics["leading_symbol"] = lead
            flags["leading_symbol_slope"] = _flag(lead["slope"], target, "<=")
        return {"metrics": metrics, "flags": flags}

    def _exp_cook(self, p):
        from .propagation import cook_integrand_curve

        u, psi = self.packet()
        res = cook_integrand_curve(self.art["J"][1], u, p["times"], self.art["engine"], psi, tuple(p["fit_range"]))
        return {"metrics": {"slope": res["slope"], "values": res["values"], "times": res["times"]},
                "flags": {"slope": _flag(res["slope"], p["max_slope"], "<=")},
                "curves": {"cook": [("t", "norm")] + list(zip(res["times"], res["values"]))}}

    def _exp_mismatch(self, p):
        from .propagation import mismatch_decay

        u, psi = self.packet()
        res = mismatch_decay(self.art["J"][-1], u, p["times"], self.art["engine"], psi, tuple(p["fit_range"]))
        return {"metrics": {"slope": res["slope"], "values": res["values"], "times": res["times"]},
                "flags": {"slope": _flag(res["slope"], p["max_slope"], "<=")},
                "curves": {"mismatch": [("t", "norm")] + list(zip(res["times"], res["values"]))}}

    def _exp_waveop(self, p):
        from .propagation import IdentityModifier, wave_operator_estimate

        u, psi = self.packet()
        if p["modifier"] == "identity":
            Jp, Jm = IdentityModifier(), None
        else:
            Jp, Jm = self.art["J"][1], self.art["J"][-1]
        res = wave_operator_estimate(Jp, u, p["checkpoints"], self.art["engine"], psi, Jm)
        tol = p["isometry_tol"]
        flags = {"gaps_decreasing": _flag(res["gaps_decreasing"], True, "=="),
                 "isometry": _flag(abs(res["isometry"] - 1), tol, "<="),
                 "intertwining": _flag(res["intertwining"], p["intertwining_factor"] * res["gaps"][-1], "<=")}
        if "decomposition" in res:
            flags["decomposition"] = _flag(abs(res["decomposition"] - 1), p["decomposition_tol"], "<=")
        rows = [("T", "gap")] + list(zip(res["checkpoints"][1:], res["gaps"]))
        return {"metrics": res, "flags": flags, "curves": {"waveop_gaps": rows}}

    def _exp_mourre(self, p):
        from .propagation import mourre_check

        psi = None if p["psi"] == "sharp" else _window_psi(self.cfg.gamma)
        res = mourre_check(self.art["bands"], self.cfg.gamma, psi, thresholds=self.art["thresholds"])
        flags = {"positive": _flag(res["c_star"], 0.0, ">")}
        if p["expected"] is not None:
            flags["expected"] = _flag(abs(res["c_star"] - p["expected"]), p["tol"], "<=")
        return {"metrics": res, "flags": flags}

    def _exp_radiation(self, p):
        from .propagation import RadiationField, radiation_integral

        u, psi = self.packet()
        eng = self.art["engine"]
        cut = self.art["cutoffs"]
        k = cut.bands[0] if p["k"] is None else p["k"]
        filt = "full" if eng.potential is None or eng.full_method == "exact" else "free"
        res = radiation_integral(RadiationField(cut, k, p["j"]), u, p["T"], eng, psi, dt=p["dt"], filter=filt)
        metrics = {"increment_ratio": res["increment_ratio"], "total": res["total"], "filter": filt}
        rows = [("t", "integrand", "running")] + list(zip(res["times"], res["integrand"], res["running"]))
        return {"metrics": metrics, "flags": {"increment_ratio": _flag(res["increment_ratio"], p["max_ratio"], "<")},
                "curves": {"radiation": rows}}

    def _exp_lap(self, p):
        from .propagation import EvolutionEngine, lap_scan

        eng = EvolutionEngine.from_potential(self.cfg.kernel, self.cfg.potential, p["L"])
        res = lap_scan(eng, p["lams"], p["epss"], s=p["s"], iters=p["iters"], seed=self.cfg.seed)
        flags = {"flatness": _flag(res["max_flatness"], p["max_flatness"], "<"),
                 "free_crosscheck": _flag(res["free_crosscheck"], p["max_crosscheck"], "<")}
        rows = [("lambda", "eps", "norm", "free_norm")]
        for i, lam in enumerate(res["lams"]):
            for j, eps in enumerate(res["epss"]):
                rows.append((lam, eps, res["table"][i][j], res["free_table"][i][j]))
        return {"metrics": res, "flags": flags, "curves": {"lap": rows}}


def _window_psi(gamma):
    from .propagation import psi_bump

    parts = [psi_bump(a, b) for a, b in gamma]
    return parts[0] if len(parts) == 1 else (lambda E: sum(f(E) for f in parts))


def _band_rows(b):
    pts = b.grid.points().reshape(-1, b.d)
    lam = b.lambdas.reshape(-1, b.n)
    head = tuple(f"xi{j + 1}" for j in range(b.d)) + tuple(f"lambda{k}" for k in range(b.n))
    return [head] + [tuple(p) + tuple(l) for p, l in zip(pts, lam)]


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(rows[0])
        for r in rows[1:]:
            w.writerow([f"{v:.17g}" if isinstance(v, (float, np.floating)) else v for v in r])


def run_experiments(cfg: ExperimentConfig, *, out: Optional[str] = None, seed: Optional[int] = None,
                    threads: int = 1, cache: bool = True, raise_errors: bool = False) -> dict:
    """Run the configured experiments and write ``result.json`` and ``curves/*.csv``.

    Parameters
    ----------
    cfg : ExperimentConfig
    out : str, optional
        Output directory (overrides the config).
    seed : int, optional
        Overrides the config seed.
    threads : int
        Independent experiments run concurrently up to this many at a time.
    cache : bool
        Use the on-disk artifact cache under ``<out>/cache``.
    raise_errors : bool
        Re-raise module errors as :class:`ExperimentError` instead of
        recording them as failed experiments.

    Returns
    -------
    dict
        The result document; ``result["passed"]`` is the overall verdict.
    """
    if seed is not None:
        cfg.seed = int(seed)
    outdir = Path(out or cfg.output)
    (outdir / "curves").mkdir(parents=True, exist_ok=True)
    run = _Run(cfg, outdir / "cache" if cache else None)
    t_start = time.perf_counter()

    needed = {a for name, _ in cfg.experiments for a in _NEEDS[name]}
    closure, stack = set(), list(needed)
    while stack:
        a = stack.pop()
        if a not in closure:
            closure.add(a)
            stack.extend(_ARTIFACT_DEPS[a])
    order = list(TopologicalSorter({a: _ARTIFACT_DEPS[a] for a in closure}).static_order())

    results: dict = {}
    failed_artifacts: dict = {}
    for a in order:
        if any(d in failed_artifacts for d in _ARTIFACT_DEPS[a]):
            failed_artifacts[a] = f"dependency failed: {[d for d in _ARTIFACT_DEPS[a] if d in failed_artifacts]}"
            continue
        try:
            run.build(a)
        except Exception as exc:  # noqa: BLE001 - recorded with context
            if raise_errors:
                raise ExperimentError(f"artifact '{a}': {type(exc).__name__}: {exc}") from exc
            failed_artifacts[a] = f"{type(exc).__name__}: {exc}"

    def one(item):
        i, (name, params) = item
        label = name if [n for n, _ in cfg.experiments].count(name) == 1 else f"{name}#{i}"
        missing = [a for a in _NEEDS[name] if a in failed_artifacts]
        t0 = time.perf_counter()
        if missing:
            res = {"error": f"artifact failure: {failed_artifacts[missing[0]]}", "flags": {}}
        else:
            try:
                res = run.run(name, params)
            except Exception as exc:  # noqa: BLE001
                if raise_errors:
                    raise ExperimentError(f"experiment '{label}': {type(exc).__name__}: {exc}") from exc
                res = {"error": f"{type(exc).__name__}: {exc}", "flags": {}}
        res["params"] = params
        return label, res, time.perf_counter() - t0

    items = list(enumerate(cfg.experiments))
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(one, items))
    else:
        outs = [one(it) for it in items]

    # single writer: everything below runs on the calling thread
    timings = dict(run.timings)
    for label, res, dt in outs:
        curves = res.pop("curves", {}) or {}
        for cname, rows in curves.items():
            _write_csv(outdir / "curves" / f"{label.replace('#', '_')}_{cname}.csv", rows)
        res["curves"] = sorted(f"{label.replace('#', '_')}_{c}.csv" for c in curves)
        res["passed"] = ("error" not in res) and all(f["pass"] for f in res["flags"].values())
        results[label] = _clean(res)
        timings[label] = dt
    timings["total"] = time.perf_counter() - t_start
    doc = {
        "version": __version__,
        "config": _clean(cfg.raw),
        "seed": cfg.seed,
        "experiments": results,
        "artifact_errors": failed_artifacts,
        "passed": all(r["passed"] for r in results.values()),
        "timings": timings,
    }
    with open(outdir / "result.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    return doc
