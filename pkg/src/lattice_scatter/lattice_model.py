"""Lattices, hopping kernels and potentials.

A lattice Hamiltonian ``H = H0 + V`` on ``l^2(Z^d; C^n)`` is described by

* a :class:`HoppingKernel` -- a finitely supported map ``x -> f(x)`` of
  ``n x n`` matrices, so that ``(H0 u)(x) = sum_y f(x - y) u(y)`` and the
  symbol is ``H0(xi) = sum_x exp(-i x.xi) f(x)``;
* a :class:`Potential` -- a long-range part ``c <x>^{-rho}`` (optionally
  tabulated near the origin) plus a short-range part bounded by
  ``C <x>^{-1-rho}``;
* a :class:`SmoothExtension` of the long-range part to ``R^d`` which feeds
  the eikonal solver.

All objects are immutable after construction and serialize to JSON.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Optional

import numpy as np

from ._validation import check_positive_float, check_positive_int

__all__ = [
    "bracket",
    "HoppingKernel",
    "validate_selfadjoint",
    "PRESETS",
    "preset",
    "preset_names",
    "build_symbol",
    "DecayBoundError",
    "ShortRangePart",
    "Potential",
    "build_potential",
    "SmoothExtension",
    "smooth_extension",
]


def bracket(x, axis=-1):
    """Japanese bracket ``<x> = sqrt(1 + |x|^2)`` along ``axis``.

    Scalars and 1D arrays of scalars (``d == 1`` without a trailing axis) are
    accepted when ``axis is None``.
    """
    x = np.asarray(x, dtype=float)
    if axis is None:
        return np.sqrt(1.0 + x * x)
    return np.sqrt(1.0 + np.sum(x * x, axis=axis))


def _lattice_ball(d: int, radius: int) -> np.ndarray:
    """Integer points with Euclidean norm <= radius, shape (P, d)."""
    axis = np.arange(-radius, radius + 1)
    pts = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return pts[np.sum(pts * pts, axis=1) <= radius * radius]


# ---------------------------------------------------------------------------
# Hopping kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HoppingKernel:
    """Finitely supported matrix-valued convolution kernel on ``Z^d``.

    Parameters
    ----------
    d : int
        Spatial dimension.
    n : int
        Internal (orbital) dimension.
    entries : mapping
        ``{offset tuple: (n, n) complex array}``. Zero matrices are dropped.
    name : str, optional
        Preset name, used only for display and provenance.
    """

    d: int
    n: int
    entries: Mapping[tuple, np.ndarray]
    name: str = "custom"

    def __post_init__(self):
        d = check_positive_int(self.d, "d")
        n = check_positive_int(self.n, "n")
        clean = {}
        for off, mat in dict(self.entries).items():
            off = tuple(int(o) for o in np.atleast_1d(off))
            if len(off) != d:
                raise ValueError(f"offset {off} has length {len(off)}, expected d={d}")
            mat = np.array(mat, dtype=complex).reshape(n, n) if np.ndim(mat) else np.full((n, n), mat, complex)
            if not np.all(np.isfinite(mat)):
                raise ValueError(f"kernel entry at {off} is not finite")
            if np.any(mat != 0):
                mat.setflags(write=False)
                clean[off] = mat
        if not clean:
            raise ValueError("hopping kernel has empty support")
        object.__setattr__(self, "entries", dict(sorted(clean.items())))

    # -- basic properties ----------------------------------------------------
    @property
    def support_radius(self) -> int:
        """Largest ``|x|_inf`` over offsets carrying a nonzero matrix."""
        return max(max(abs(o) for o in off) for off in self.entries)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.array(list(self.entries), dtype=int).reshape(-1, self.d)

    @cached_property
    def matrices(self) -> np.ndarray:
        return np.stack([self.entries[o] for o in self.entries])

    def is_self_adjoint(self, atol: float = 1e-12) -> bool:
        """True iff ``conj(f_jk(-x)) == f_kj(x)`` for every offset."""
        for off, mat in self.entries.items():
            mirror = self.entries.get(tuple(-o for o in off))
            if mirror is None or not np.allclose(mirror.conj().T, mat, atol=atol, rtol=0):
                return False
        return True

    # -- symbol ---------------------------------------------------------------
    def symbol_at(self, xi) -> np.ndarray:
        """Evaluate ``H0(xi)`` at points of shape ``(..., d)``; returns ``(..., n, n)``."""
        xi = np.asarray(xi, dtype=float)
        phases = np.exp(-1j * np.tensordot(xi, self.offsets.T, axes=([-1], [0])))
        return np.tensordot(phases, self.matrices, axes=([-1], [0]))

    def symbol_gradient(self, xi) -> np.ndarray:
        """Termwise derivative ``d H0 / d xi_j`` at ``(..., d)``; returns ``(..., d, n, n)``."""
        xi = np.asarray(xi, dtype=float)
        phases = np.exp(-1j * np.tensordot(xi, self.offsets.T, axes=([-1], [0])))
        # d/dxi_j exp(-i x.xi) = -i x_j exp(-i x.xi)
        weighted = -1j * phases[..., None, :] * self.offsets.T
        return np.tensordot(weighted, self.matrices, axes=([-1], [0]))

    def apply_box(self, values: np.ndarray) -> np.ndarray:
        """Apply ``H0`` to a periodic box array of shape ``(N,)*d + (n,)``."""
        out = np.zeros_like(values, dtype=complex)
        axes = tuple(range(self.d))
        for off, mat in self.entries.items():
            # (H0 u)(x) = sum_y f(y) u(x - y)
            out += np.roll(values, shift=off, axis=axes) @ mat.T
        return out

    # -- serialization ----------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "n": self.n,
            "name": self.name,
            "entries": [
                {
                    "offset": list(off),
                    "matrix": [[float(z.real), float(z.imag)] for z in mat.ravel()],
                }
                for off, mat in self.entries.items()
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "HoppingKernel":
        try:
            d, n = int(doc["d"]), int(doc["n"])
            entries = {}
            for item in doc["entries"]:
                pairs = np.asarray(item["matrix"], dtype=float)
                if pairs.shape != (n * n, 2):
                    raise ValueError(f"matrix at offset {item['offset']} must be {n * n} [re, im] pairs")
                entries[tuple(item["offset"])] = (pairs[:, 0] + 1j * pairs[:, 1]).reshape(n, n)
        except KeyError as exc:
            raise ValueError(f"kernel document is missing field {exc.args[0]!r}") from None
        return cls(d, n, entries, name=doc.get("name", "custom"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "HoppingKernel":
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        return f"HoppingKernel(name={self.name!r}, d={self.d}, n={self.n}, offsets={len(self.entries)})"


def _hermitian_kernel(d, n, half: dict, name: str) -> HoppingKernel:
    """Complete ``half`` with its adjoint mirror ``f(-x) = f(x)^*``."""
    entries: dict = {}
    for off, mat in half.items():
        mat = np.asarray(mat, dtype=complex)
        entries[off] = entries.get(off, 0) + mat
        mirror = tuple(-o for o in off)
        entries[mirror] = entries.get(mirror, 0) + mat.conj().T
    return HoppingKernel(d, n, entries, name=name)


def _unit(n, j, k):
    m = np.zeros((n, n), complex)
    m[j, k] = 1.0
    return m


def _square1d():
    return _hermitian_kernel(1, 1, {(1,): [[1.0]]}, "square1d")


def _square():
    return _hermitian_kernel(2, 1, {(1, 0): [[1.0]], (0, 1): [[1.0]]}, "square")


def _triangular():
    return _hermitian_kernel(2, 1, {(1, 0): [[1.0]], (0, 1): [[1.0]], (1, -1): [[1.0]]}, "triangular")


def _hexagonal():
    # h_12(xi) = 1 + e^{-i xi_1} + e^{-i xi_2}
    entries: dict = {}
    for off in [(0, 0), (1, 0), (0, 1)]:
        entries[off] = entries.get(off, 0) + _unit(2, 0, 1)
        mirror = (-off[0], -off[1])
        entries[mirror] = entries.get(mirror, 0) + _unit(2, 1, 0)
    return HoppingKernel(2, 2, entries, name="hexagonal")


def _kagome():
    # h_12 = 1 + e^{-i xi_1}, h_13 = 1 + e^{-i xi_2}, h_23 = 1 + e^{-i(xi_2 - xi_1)}
    entries: dict = {}

    def add(off, j, k):
        entries[off] = entries.get(off, 0) + _unit(3, j, k)
        mirror = tuple(-o for o in off)
        entries[mirror] = entries.get(mirror, 0) + _unit(3, k, j)

    for off, (j, k) in [
        ((0, 0), (0, 1)), ((1, 0), (0, 1)),
        ((0, 0), (0, 2)), ((0, 1), (0, 2)),
        ((0, 0), (1, 2)), ((-1, 1), (1, 2)),
    ]:
        add(off, j, k)
    return HoppingKernel(2, 3, entries, name="kagome")


PRESETS = {
    "square1d": _square1d,
    "square": _square,
    "triangular": _triangular,
    "hexagonal": _hexagonal,
    "kagome": _kagome,
}


def validate_selfadjoint(kernel: HoppingKernel, atol: float = 1e-12) -> bool:
    """``conj(f(-x))^T == f(x)`` for all offsets, i.e. ``H0`` is self-adjoint."""
    return kernel.is_self_adjoint(atol)


def preset_names() -> list[str]:
    return list(PRESETS)


def preset(name: str) -> HoppingKernel:
    """Return the named lattice preset.

    Raises
    ------
    KeyError
        If ``name`` is not a known preset.
    """
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown lattice preset {name!r}; choose from {preset_names()}") from None


def build_symbol(kernel: HoppingKernel, grid) -> np.ndarray:
    """Sample ``H0(xi)`` on every node of ``grid``.

    Parameters
    ----------
    kernel : HoppingKernel
    grid : TorusGrid
        Any object exposing ``d``, ``resolution`` and ``points()``.

    Returns
    -------
    ndarray of shape ``grid.shape + (n, n)``.
    """
    if grid.d != kernel.d:
        raise ValueError(f"grid dimension {grid.d} does not match kernel dimension {kernel.d}")
    need = 2 * kernel.support_radius + 1
    if grid.resolution < need:
        raise ValueError(f"grid resolution {grid.resolution} too small; need >= {need}")
    return kernel.symbol_at(grid.points())


# ---------------------------------------------------------------------------
# Potentials
# ---------------------------------------------------------------------------


class DecayBoundError(ValueError):
    """A sampled decay bound failed.

    Attributes
    ----------
    x : tuple
        Offending lattice point.
    alpha : tuple
        Multi-index of the difference derivative that violated the bound.
    """

    def __init__(self, message, x=None, alpha=None):
        super().__init__(message)
        self.x = x
        self.alpha = alpha


def _multi_indices(d, max_order):
    out = []
    for order in range(max_order + 1):
        for alpha in itertools.product(range(order + 1), repeat=d):
            if sum(alpha) == order:
                out.append(alpha)
    return out


def _assert_bound(points, ratio, radius, what, alpha, slack=1.25):
    """Estimate ``C = sup ratio`` on the inner half ball and assert on the full ball.

    Returns the estimated constant.
    """
    r = np.sqrt(np.sum(points.astype(float) ** 2, axis=1))
    inner = r <= radius / 2
    const = float(np.max(ratio[inner])) if np.any(inner) else 0.0
    limit = slack * const + 1e-300
    bad = np.nonzero(ratio > limit * (1 + 1e-12))[0]
    if bad.size:
        worst = bad[np.argmax(ratio[bad])]
        x = tuple(int(v) for v in points[worst])
        raise DecayBoundError(
            f"{what}: bound violated at x={x} (alpha={alpha}); "
            f"ratio {ratio[worst]:.4g} exceeds {slack} x inner-ball constant {const:.4g}",
            x=x,
            alpha=alpha,
        )
    return const


@dataclass(frozen=True, eq=False)
class ShortRangePart:
    """Short-range potential ``V_S: Z^d -> R^n``.

    ``kind`` selects the family:

    ``"none"``
        identically zero;
    ``"alternating"``
        ``amplitude * <x>^{-exponent} * (-1)^{x_1 + ... + x_d}`` on every
        component;
    ``"random"``
        ``amplitude * <x>^{-exponent} * U(x)`` with ``U`` i.i.d. uniform on
        ``[-1, 1]`` drawn from ``seed`` on the ball ``|x|_inf <= radius`` and
        zero outside;
    ``"table"``
        explicit ``values`` of shape ``(2*radius+1,)*d + (n,)``, zero outside.
    """

    kind: str = "none"
    amplitude: float = 0.0
    exponent: float = 1.5
    seed: int = 0
    radius: int = 64
    values: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("none", "alternating", "random", "table"):
            raise ValueError(f"unknown short-range kind {self.kind!r}")
        if self.kind == "table" and self.values is None:
            raise ValueError("short-range kind 'table' requires values")

    def _table(self, d, n):
        if self.kind == "table":
            tab = np.asarray(self.values, dtype=float)
            expected = (2 * self.radius + 1,) * d + (n,)
            if tab.shape != expected:
                raise ValueError(f"short-range table has shape {tab.shape}, expected {expected}")
            return tab
        rng = np.random.default_rng(self.seed)
        shape = (2 * self.radius + 1,) * d + (n,)
        return rng.uniform(-1.0, 1.0, size=shape)

    def evaluate(self, x: np.ndarray, n: int) -> np.ndarray:
        """Values at integer points ``x`` of shape ``(..., d)``; returns ``(..., n)``."""
        x = np.asarray(x)
        d = x.shape[-1]
        out_shape = x.shape[:-1] + (n,)
        if self.kind == "none" or self.amplitude == 0 and self.kind != "table":
            return np.zeros(out_shape)
        if self.kind == "alternating":
            sign = 1 - 2 * (np.sum(x, axis=-1) % 2)
            base = self.amplitude * bracket(x) ** (-self.exponent) * sign
            return np.repeat(base[..., None], n, axis=-1)
        tab = self._table(d, n)
        inside = np.all(np.abs(x) <= self.radius, axis=-1)
        idx = np.clip(x + self.radius, 0, 2 * self.radius)
        vals = tab[tuple(idx[..., j] for j in range(d))]
        if self.kind == "random":
            vals = self.amplitude * bracket(x)[..., None] ** (-self.exponent) * vals
        return np.where(inside[..., None], vals, 0.0)

    def to_dict(self) -> dict:
        doc = {"kind": self.kind, "amplitude": self.amplitude, "exponent": self.exponent,
               "seed": self.seed, "radius": self.radius}
        if self.kind == "table":
            doc["values"] = np.asarray(self.values).tolist()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ShortRangePart":
        doc = dict(doc)
        if "values" in doc and doc["values"] is not None:
            doc["values"] = np.asarray(doc["values"], dtype=float)
        return cls(**doc)


@dataclass(frozen=True, eq=False)
class Potential:
    """Multiplicative potential ``V = V_long * Id + V_S``.

    Parameters
    ----------
    d, n : int
        Dimension and number of components.
    c : float
        Amplitude of the closed-form long-range family ``c <x>^{-rho}``.
    rho : float
        Decay exponent, ``rho > 0``.
    long_table : ndarray, optional
        Tabulated override of the long-range part on ``|x|_inf <= R_t``
        (shape ``(2 R_t + 1,)*d``); the closed form is used outside.
    short : ShortRangePart
        Short-range component.
    constants : dict
        Decay constants estimated by :func:`build_potential` (diagnostics,
        not inputs).
    """

    d: int
    n: int
    c: float
    rho: float
    long_table: Optional[np.ndarray] = None
    short: ShortRangePart = field(default_factory=ShortRangePart)
    constants: dict = field(default_factory=dict)

    @property
    def is_zero(self) -> bool:
        return self.c == 0 and self.long_table is None and (
            self.short.kind == "none" or (self.short.kind != "table" and self.short.amplitude == 0))

    @property
    def table_radius(self) -> int:
        return 0 if self.long_table is None else (np.shape(self.long_table)[0] - 1) // 2

    def long_values(self, x) -> np.ndarray:
        """Long-range part at integer points ``(..., d)``."""
        x = np.asarray(x)
        out = self.c * bracket(x) ** (-self.rho)
        if self.long_table is not None:
            rt = self.table_radius
            inside = np.all(np.abs(x) <= rt, axis=-1)
            idx = np.clip(x + rt, 0, 2 * rt)
            tab = np.asarray(self.long_table)[tuple(idx[..., j] for j in range(self.d))]
            out = np.where(inside, tab, out)
        return out

    def short_values(self, x) -> np.ndarray:
        return self.short.evaluate(np.asarray(x), self.n)

    def values(self, x) -> np.ndarray:
        """Full potential at integer points ``(..., d)``; returns ``(..., n)``."""
        return self.long_values(x)[..., None] + self.short_values(x)

    def on_box(self, L: int) -> np.ndarray:
        """Potential on ``{-L..L}^d``; shape ``(2L+1,)*d + (n,)``."""
        from .pdo_calculus import box_coords

        return self.values(box_coords(self.d, L))

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "n": self.n,
            "c": self.c,
            "rho": self.rho,
            "long_table": None if self.long_table is None else np.asarray(self.long_table).tolist(),
            "short": self.short.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict, *, check_radius: int = 64) -> "Potential":
        try:
            return build_potential(
                c=doc["c"], rho=doc["rho"], d=doc.get("d", 1), n=doc.get("n", 1),
                long_table=doc.get("long_table"),
                short=ShortRangePart.from_dict(doc.get("short", {})),
                check_radius=check_radius,
            )
        except KeyError as exc:
            raise ValueError(f"potential document is missing field {exc.args[0]!r}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _backward_difference(values_fn, pts, alpha):
    """``(prod_j nabla_j^{alpha_j}) V`` at ``pts`` with ``nabla_j V = V(x) - V(x - e_j)``."""
    d = pts.shape[1]
    out = 0.0
    for shifts in itertools.product(*[range(a + 1) for a in alpha]):
        coef = 1.0
        for a, s in zip(alpha, shifts):
            coef *= (-1) ** s * _binom(a, s)
        out = out + coef * values_fn(pts - np.array(shifts).reshape(1, d))
    return out


def _binom(a, s):
    from math import comb

    return comb(a, s)


def build_potential(
    c: float = 0.0,
    rho: float = 0.5,
    *,
    d: int = 1,
    n: int = 1,
    long_table=None,
    short: Optional[ShortRangePart] = None,
    check_radius: int = 64,
) -> Potential:
    """Build a :class:`Potential` and run its decay checks.

    The checks use the lattice ball ``|x| <= check_radius``: each decay
    constant is estimated as the supremum over the inner half ball and then
    asserted (with 25% slack) on the full ball. A profile whose normalized
    ratio keeps growing -- i.e. one decaying more slowly than declared --
    is rejected.

    Raises
    ------
    DecayBoundError
        With the offending ``x`` and multi-index ``alpha``.
    """
    rho = check_positive_float(rho, "rho")
    if not np.isfinite(c):
        raise ValueError("c must be finite")
    d = check_positive_int(d, "d")
    n = check_positive_int(n, "n")
    short = short if short is not None else ShortRangePart()
    if long_table is not None:
        long_table = np.asarray(long_table, dtype=float)
        if long_table.ndim != d or len(set(long_table.shape)) != 1 or long_table.shape[0] % 2 == 0:
            raise ValueError(f"long_table must have shape (2R+1,)*{d}")
        long_table.setflags(write=False)
    pot = Potential(d, n, float(c), rho, long_table, short)

    pts = _lattice_ball(d, check_radius)
    w = bracket(pts)
    constants = {}
    for alpha in _multi_indices(d, 2):
        diff = np.abs(_backward_difference(pot.long_values, pts, alpha))
        ratio = diff * w ** (rho + sum(alpha))
        constants[f"C_long{alpha}"] = _assert_bound(pts, ratio, check_radius, "long-range part", alpha)
    vs = np.max(np.abs(pot.short_values(pts)), axis=-1)
    constants["C_short"] = _assert_bound(pts, vs * w ** (1 + rho), check_radius, "short-range part", (0,) * d)
    pot.constants.update(constants)
    return pot


# ---------------------------------------------------------------------------
# Smooth extension to R^d
# ---------------------------------------------------------------------------


def _bump_rule(d: int, radius: float = 0.5, nodes: int = 24):
    """Quadrature rule for the normalized bump ``exp(-1/(1-|y/r|^2))`` on the ball.

    Returns nodes ``(Q, d)``, weights ``(Q,)`` and weight gradients ``(Q, d)``
    (the gradient of the normalized bump, multiplied by the cell weights).
    """
    g, gw = np.polynomial.legendre.leggauss(nodes if d == 1 else max(8, nodes // 2))
    grids = np.meshgrid(*([g] * d), indexing="ij")
    y = np.stack([gr.ravel() for gr in grids], axis=-1) * radius
    cell = np.prod(np.stack(np.meshgrid(*([gw] * d), indexing="ij"), -1).reshape(-1, d), axis=1) * radius**d
    s = np.sum(y * y, axis=1) / radius**2
    inside = s < 1
    y, cell, s = y[inside], cell[inside], s[inside]
    bump = np.exp(-1.0 / (1.0 - s))
    norm = np.sum(bump * cell)
    # d/dy exp(-1/(1-s)) = exp(...) * (-1/(1-s)^2) * 2y/r^2
    dbump = bump[:, None] * (-2.0 * y / radius**2) / (1.0 - s)[:, None] ** 2
    return y, bump * cell / norm, dbump * cell[:, None] / norm


@dataclass(frozen=True, eq=False)
class SmoothExtension:
    """Smooth extension ``V~`` of the long-range part to ``R^d``.

    For a purely closed-form potential the extension is the same formula.
    With a tabulated override the multilinear interpolant of the lattice
    values is mollified by a normalized bump of radius 1/2.
    """

    potential: Potential
    constants: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.potential.d

    @property
    def rho(self) -> float:
        return self.potential.rho

    @property
    def is_zero(self) -> bool:
        return self.potential.c == 0 and self.potential.long_table is None

    @cached_property
    def _rule(self):
        return _bump_rule(self.d)

    def _interp(self, x):
        """Multilinear interpolation of the lattice long-range values."""
        x = np.asarray(x, dtype=float)
        base = np.floor(x)
        frac = x - base
        out = 0.0
        for corner in itertools.product((0, 1), repeat=self.d):
            corner = np.array(corner)
            w = np.prod(np.where(corner == 1, frac, 1 - frac), axis=-1)
            out = out + w * self.potential.long_values((base + corner).astype(int))
        return out

    def _as_points(self, x):
        x = np.asarray(x, dtype=float)
        if self.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            return x[..., None], True
        return x, False

    def value(self, x) -> np.ndarray:
        """``V~(x)`` for ``x`` of shape ``(..., d)`` (or plain scalars in 1D)."""
        x, squeeze = self._as_points(x)
        pot = self.potential
        if pot.long_table is None:
            return pot.c * bracket(x) ** (-pot.rho)
        y, w, _ = self._rule
        vals = self._interp(x[..., None, :] - y)
        return np.sum(vals * w, axis=-1)

    def gradient(self, x) -> np.ndarray:
        """``grad V~(x)``; shape ``(..., d)``."""
        x, squeeze = self._as_points(x)
        pot = self.potential
        if pot.long_table is None:
            r2 = np.sum(x * x, axis=-1, keepdims=True)
            g = -pot.c * pot.rho * x * (1 + r2) ** (-pot.rho / 2 - 1)
        else:
            y, _, dw = self._rule
            vals = self._interp(x[..., None, :] - y)
            # d/dx int I(x - y) b(y) dy = int I(x - y) grad b(y) dy
            g = np.einsum("...q,qd->...d", vals, dw)
        return g[..., 0] if squeeze else g

    def hessian(self, x) -> np.ndarray:
        """Second derivatives; shape ``(..., d, d)``."""
        x, squeeze = self._as_points(x)
        pot = self.potential
        if pot.long_table is None:
            r2 = np.sum(x * x, axis=-1)[..., None, None]
            eye = np.eye(self.d)
            outer = x[..., :, None] * x[..., None, :]
            hess = -pot.c * pot.rho * ((1 + r2) ** (-pot.rho / 2 - 1) * eye
                                       - (pot.rho + 2) * outer * (1 + r2) ** (-pot.rho / 2 - 2))
        else:
            h = 1e-4
            cols = []
            for j in range(self.d):
                e = np.zeros(self.d)
                e[j] = h
                cols.append((self.gradient(x + e) - self.gradient(x - e)) / (2 * h))
            hess = np.stack(cols, axis=-1)
        return hess[..., 0, 0] if squeeze else hess


def smooth_extension(pot: Potential, *, check_radius: float = 64.0) -> SmoothExtension:
    """Build the smooth extension of ``pot``'s long-range part and check it.

    The derivative bounds ``|grad^a V~(x)| <= C'_a <x>^{-rho-|a|}`` for
    ``|a| <= 2`` are sampled on radial lines (and a coarse grid in ``d >= 2``)
    up to ``check_radius``, with constants estimated on the inner half.

    Raises
    ------
    DecayBoundError
        On derivative-bound failure.
    """
    ext = SmoothExtension(pot)
    if ext.is_zero:
        ext.constants.update({"C0": 0.0, "C1": 0.0, "C2": 0.0})
        return ext
    d = pot.d
    radii = np.linspace(0.0, check_radius, 257)
    dirs = [np.eye(d)[j] for j in range(d)] + ([np.ones(d) / np.sqrt(d)] if d > 1 else []) + [-np.eye(d)[0]]
    pts = np.concatenate([radii[:, None] * u[None, :] for u in dirs])
    w = bracket(pts)
    mags = [np.abs(ext.value(pts)),
            np.linalg.norm(ext.gradient(pts), axis=-1),
            np.linalg.norm(ext.hessian(pts), axis=(-2, -1))]
    for order, mag in enumerate(mags):
        ratio = mag * w ** (pot.rho + order)
        ext.constants[f"C{order}"] = _assert_bound(pts, ratio, check_radius, "smooth extension", (order,))
    return ext
