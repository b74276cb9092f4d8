"""Pseudodifference operators on ``Z^d x T^d``.

Conventions
-----------
* Fourier transform ``F u(xi) = (2 pi)^{-d/2} sum_x exp(-i x.xi) u(x)``.
* On the box ``{-L..L}^d`` the transform is evaluated on the matched grid of
  ``N = 2L + 1`` nodes ``xi_m = 2 pi m / N`` (``m = -L..L``), where it is
  exactly invertible. The quadrature weight is ``(2 pi / N)^d``, so
  ``||u||^2 = (2 pi / N)^d sum_m |F u(xi_m)|^2``.
* Quantization ``a(x, D) u(x) = (2 pi)^{-d/2} int exp(i x.xi) a(x, xi) F u(xi) dxi``
  by the trapezoid rule on the same grid.
* Backward differences ``nabla_j b(x) = b(x) - b(x - e_j)``.

Arrays of shape ``(N,)*d + (n,)`` and :class:`LatticeState` objects are
accepted interchangeably; functions return the same kind they receive.
"""
from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass
from functools import cached_property
from math import factorial
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from ._validation import check_random_state, check_state_array

__all__ = [
    "box_coords",
    "box_frequencies",
    "LatticeState",
    "fourier",
    "inverse_fourier",
    "grid_norm",
    "apply_multiplier",
    "SymbolField",
    "quantize",
    "quantize_adjoint",
    "compose_symbols",
    "adjoint_symbol",
    "composition_remainder",
    "adjoint_defect",
    "fit_slope",
    "operator_norm",
    "kato_time_smoothness",
    "symbol_seminorms",
]


# ---------------------------------------------------------------------------
# Box geometry and states
# ---------------------------------------------------------------------------


def box_coords(d: int, L: int) -> np.ndarray:
    """Integer coordinates of ``{-L..L}^d``; shape ``(2L+1,)*d + (d,)``."""
    ax = np.arange(-L, L + 1)
    return np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1)


def box_frequencies(d: int, L: int) -> np.ndarray:
    """Box-matched torus nodes ``2 pi m / (2L+1)``; shape ``(2L+1,)*d + (d,)``."""
    ax = 2 * np.pi * np.arange(-L, L + 1) / (2 * L + 1)
    return np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1)


def _box_shape(values: np.ndarray):
    """Infer ``(d, n, L)`` from an array of shape ``(N,)*d + (n,)``."""
    shape = values.shape
    if len(shape) < 2:
        raise ValueError(f"state array must have shape (N,)*d + (n,), got {shape}")
    d = len(shape) - 1
    N = shape[0]
    if any(s != N for s in shape[:d]) or N % 2 == 0:
        raise ValueError(f"state array must have shape (2L+1,)*d + (n,), got {shape}")
    return d, shape[-1], (N - 1) // 2


@dataclass(frozen=True, eq=False)
class LatticeState:
    """A ``C^n``-valued function on the box ``{-L..L}^d``.

    Parameters
    ----------
    values : ndarray, shape ``(2L+1,)*d + (n,)``
    """

    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=complex)
        _box_shape(vals)
        check_state_array(vals, *(_box_shape(vals)[:2]), _box_shape(vals)[2])
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, d: int, n: int, L: int) -> "LatticeState":
        return cls(np.zeros((2 * L + 1,) * d + (n,), dtype=complex))

    @classmethod
    def delta(cls, d: int, n: int, L: int, x0, component: int = 0) -> "LatticeState":
        vals = np.zeros((2 * L + 1,) * d + (n,), dtype=complex)
        idx = tuple(int(c) + L for c in np.atleast_1d(x0)) + (component,)
        vals[idx] = 1.0
        return cls(vals)

    @classmethod
    def random(cls, d: int, n: int, L: int, seed=None) -> "LatticeState":
        rng = check_random_state(seed)
        shape = (2 * L + 1,) * d + (n,)
        return cls(rng.standard_normal(shape) + 1j * rng.standard_normal(shape))

    @property
    def d(self) -> int:
        return self.values.ndim - 1

    @property
    def n(self) -> int:
        return self.values.shape[-1]

    @property
    def L(self) -> int:
        return (self.values.shape[0] - 1) // 2

    @cached_property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    @cached_property
    def boundary_mass(self) -> float:
        """Fraction of ``||u||^2`` carried by the outer 10% shell of the box."""
        return boundary_mass(self.values)

    def coords(self) -> np.ndarray:
        return box_coords(self.d, self.L)

    def normalized(self) -> "LatticeState":
        return LatticeState(self.values / self.norm)

    def __add__(self, other):
        return LatticeState(self.values + _values(other))

    def __sub__(self, other):
        return LatticeState(self.values - _values(other))

    def __mul__(self, scalar):
        return LatticeState(self.values * scalar)

    __rmul__ = __mul__

    def inner(self, other) -> complex:
        """``<self, other> = sum self * conj(other)``."""
        return complex(np.vdot(_values(other), self.values))

    # -- binary layout ---------------------------------------------------------
    _HEADER = struct.Struct("<4q")

    def to_bytes(self) -> bytes:
        """Header ``(d, n, L, complex_flag)`` as little-endian int64, then float64 values.

        Values are row-major over ``(x_1, ..., x_d, component)``; complex data
        is stored as interleaved ``(re, im)`` pairs, real data (flag 0) as
        real parts only.
        """
        is_complex = bool(np.any(self.values.imag != 0))
        head = self._HEADER.pack(self.d, self.n, self.L, int(is_complex))
        data = self.values if is_complex else self.values.real
        arr = np.ascontiguousarray(data).view(np.float64) if is_complex else np.ascontiguousarray(data, dtype=np.float64)
        return head + arr.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "LatticeState":
        d, n, L, flag = cls._HEADER.unpack_from(blob)
        shape = (2 * L + 1,) * d + (n,)
        raw = np.frombuffer(blob, dtype="<f8", offset=cls._HEADER.size)
        count = int(np.prod(shape)) * (2 if flag else 1)
        if raw.size != count:
            raise ValueError(f"state payload has {raw.size} floats, expected {count}")
        vals = raw.view(np.complex128) if flag else raw.astype(complex)
        return cls(vals.reshape(shape))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "LatticeState":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def boundary_mass(values: np.ndarray) -> float:
    """Fraction of ``sum |u|^2`` on sites with ``max_j |x_j| > 0.9 L``."""
    d, n, L = _box_shape(values)
    total = float(np.sum(np.abs(values) ** 2))
    if total == 0:
        return 0.0
    x = box_coords(d, L)
    shell = np.max(np.abs(x), axis=-1) > 0.9 * L
    return float(np.sum(np.abs(values[shell]) ** 2) / total)


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, LatticeState) else np.asarray(u)


def _rewrap(template, values):
    return LatticeState(values) if isinstance(template, LatticeState) else values


# ---------------------------------------------------------------------------
# Fourier transform and multipliers
# ---------------------------------------------------------------------------


def fourier(state) -> np.ndarray:
    """``F u`` on the box-matched grid; shape ``(N,)*d + (n,)``."""
    u = _values(state)
    d, _, _ = _box_shape(u)
    axes = tuple(range(d))
    return np.fft.fftshift(np.fft.fftn(np.fft.ifftshift(u, axes=axes), axes=axes), axes=axes) / (2 * np.pi) ** (d / 2)


def inverse_fourier(uhat, *, like=None):
    """Inverse of :func:`fourier`.

    Raises
    ------
    ValueError
        If the grid does not have the odd box-matched resolution.
    """
    uhat = np.asarray(uhat)
    d, _, _ = _box_shape(uhat)
    axes = tuple(range(d))
    u = np.fft.fftshift(np.fft.ifftn(np.fft.ifftshift(uhat, axes=axes), axes=axes), axes=axes) * (2 * np.pi) ** (d / 2)
    return _rewrap(like, u) if like is not None else u


def grid_norm(uhat) -> float:
    """``L^2(T^d)`` norm of grid samples with the trapezoid weight ``(2 pi / N)^d``."""
    uhat = np.asarray(uhat)
    d, _, _ = _box_shape(uhat)
    N = uhat.shape[0]
    return float(np.sqrt((2 * np.pi / N) ** d * np.sum(np.abs(uhat) ** 2)))


def _apply_field(field, vec):
    field = np.asarray(field)
    if field.ndim == vec.ndim - 1:  # scalar field
        return field[..., None] * vec
    return np.einsum("...ab,...b->...a", field, vec)


def apply_multiplier(field, state):
    """Fourier multiplier ``F^* a(xi) F u``.

    Parameters
    ----------
    field : ndarray or callable
        Samples on the box-matched grid, shape ``(N,)*d`` (scalar) or
        ``(N,)*d + (n, n)``; or a callable of the frequency array
        ``(N,)*d + (d,)`` returning such samples.
    state : LatticeState or ndarray
    """
    u = _values(state)
    d, n, L = _box_shape(u)
    if callable(field):
        field = field(box_frequencies(d, L))
    field = np.asarray(field)
    if field.shape[:d] != u.shape[:d]:
        raise ValueError(f"multiplier sampled on {field.shape[:d]}, state lives on {u.shape[:d]}")
    return _rewrap(state, inverse_fourier(_apply_field(field, fourier(u))))


# ---------------------------------------------------------------------------
# Symbols
# ---------------------------------------------------------------------------


def _as_matrix(val, n, shape):
    val = np.asarray(val)
    if val.shape == shape + (n, n):
        return val
    if val.shape == shape:
        return val[..., None, None] * np.eye(n)
    return np.broadcast_to(val, shape + (n, n)) if val.ndim >= 2 and val.shape[-2:] == (n, n) \
        else np.broadcast_to(val, shape)[..., None, None] * np.eye(n)


class SymbolField:
    """Matrix-valued symbol ``a(x, xi)`` on ``Z^d x T^d`` (or ``R^d x T^d``).

    Parameters
    ----------
    fn : callable
        ``fn(x, xi)`` with broadcastable ``x`` of shape ``(..., d)`` and ``xi``
        of shape ``(..., d)``; returns ``(..., n, n)`` or a scalar array
        ``(...)`` (interpreted as a multiple of the identity).
    d, n : int
    order : float
        Declared symbol order ``m``: ``nabla_x^alpha d_xi^beta a = O(<x>^{-m-|alpha|})``.
    x_dependent, xi_dependent : bool
        Structural hints used for exact shortcuts.
    support : str or int
        ``"global"`` or a box radius outside which the symbol vanishes in ``x``.
    terms : list of (callable, callable), optional
        Separable representation ``sum_j b_j(x) c_j(xi)`` used by the fast
        quantization path; each factor returns scalars or ``(n, n)`` matrices.
    """

    def __init__(self, fn: Callable, d: int = 1, n: int = 1, *, order: float = 0.0,
                 x_dependent: bool = True, xi_dependent: bool = True, support="global",
                 terms: Optional[list] = None, name: str = "a"):
        self.fn = fn
        self.d = d
        self.n = n
        self.order = order
        self.x_dependent = x_dependent
        self.xi_dependent = xi_dependent
        self.support = support
        self.terms = terms
        self.name = name

    # -- constructors ----------------------------------------------------------
    @classmethod
    def multiplier(cls, fn_xi: Callable, d: int = 1, n: int = 1, order: float = 0.0, name="a(xi)"):
        """Symbol independent of ``x``."""
        one = lambda x: 1.0  # noqa: E731
        return cls(lambda x, xi: fn_xi(xi), d, n, order=order, x_dependent=False,
                   terms=[(one, fn_xi)], name=name)

    @classmethod
    def position(cls, fn_x: Callable, d: int = 1, n: int = 1, order: float = 0.0, name="a(x)"):
        """Symbol independent of ``xi`` (a multiplication operator)."""
        one = lambda xi: 1.0  # noqa: E731
        return cls(lambda x, xi: fn_x(x), d, n, order=order, xi_dependent=False,
                   terms=[(fn_x, one)], name=name)

    @classmethod
    def separable(cls, terms, d: int = 1, n: int = 1, order: float = 0.0, name="a"):
        """``sum_j b_j(x) c_j(xi)``."""
        terms = list(terms)

        def fn(x, xi):
            shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(xi)[:-1])
            out = 0.0
            for bx, cxi in terms:
                out = out + _as_matrix(bx(x), n, np.shape(x)[:-1]) @ _as_matrix(cxi(xi), n, np.shape(xi)[:-1]) \
                    if n > 1 else out + np.asarray(bx(x)) * np.asarray(cxi(xi))
            return np.broadcast_to(out, shape + ((n, n) if n > 1 else ()))

        return cls(fn, d, n, order=order, terms=terms, name=name)

    # -- evaluation -------------------------------------------------------------
    def __call__(self, x, xi) -> np.ndarray:
        """Evaluate; always returns ``(..., n, n)``."""
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], xi.shape[:-1])
        val = np.asarray(self.fn(x, xi))
        if val.ndim >= 2 and val.shape[-2:] == (self.n, self.n) and (self.n > 1 or val.shape[:-2] == shape):
            return np.broadcast_to(val, shape + (self.n, self.n))
        return np.broadcast_to(val, shape)[..., None, None] * np.eye(self.n)

    # -- algebra ---------------------------------------------------------------
    def _combine(self, other, op, name):
        if not isinstance(other, SymbolField):
            c = other
            return SymbolField(lambda x, xi: op(self(x, xi), c), self.d, self.n, order=self.order,
                               x_dependent=self.x_dependent, xi_dependent=self.xi_dependent, name=name)
        return SymbolField(lambda x, xi: op(self(x, xi), other(x, xi)), self.d, self.n,
                           order=max(self.order, other.order),
                           x_dependent=self.x_dependent or other.x_dependent,
                           xi_dependent=self.xi_dependent or other.xi_dependent, name=name)

    def __add__(self, other):
        return self._combine(other, np.add, f"({self.name}+{getattr(other, 'name', other)})")

    def __sub__(self, other):
        return self._combine(other, np.subtract, f"({self.name}-{getattr(other, 'name', other)})")

    def __matmul__(self, other):
        out = self._combine(other, np.matmul, f"{self.name}{other.name}")
        out.order = self.order + other.order
        return out

    def scale(self, c) -> "SymbolField":
        return self._combine(c, np.multiply, f"{c}*{self.name}")

    def conj_transpose(self) -> "SymbolField":
        """Pointwise adjoint ``a(x, xi)^*``."""
        return SymbolField(lambda x, xi: np.conj(np.swapaxes(self(x, xi), -1, -2)), self.d, self.n,
                           order=self.order, x_dependent=self.x_dependent, xi_dependent=self.xi_dependent,
                           name=f"{self.name}*")

    def shift_x(self, offset) -> "SymbolField":
        """``(x, xi) -> a(x - offset, xi)``."""
        off = np.asarray(offset, dtype=float)
        return SymbolField(lambda x, xi: self(np.asarray(x, float) - off, xi), self.d, self.n,
                           order=self.order, x_dependent=self.x_dependent, xi_dependent=self.xi_dependent)

    def __repr__(self):
        return f"SymbolField({self.name}, d={self.d}, n={self.n}, order={self.order})"


# ---------------------------------------------------------------------------
# Quantization
# ---------------------------------------------------------------------------

_CHUNK_BUDGET = 4_000_000  # complex entries per evaluation block


def quantize(a: SymbolField, state, *, chunk: Optional[int] = None):
    """``a(x, D) u`` by trapezoid quadrature on the box-matched grid.

    Uses the multiplier or multiplication shortcut when the symbol depends
    on only one variable, and the separable representation when available.
    """
    u = _values(state)
    d, n, L = _box_shape(u)
    x = box_coords(d, L)
    xi = box_frequencies(d, L)
    if not a.xi_dependent:
        return _rewrap(state, _apply_field(a(x, np.zeros(d)), u))
    uhat = fourier(u)
    if not a.x_dependent:
        return _rewrap(state, inverse_fourier(_apply_field(a(np.zeros(d), xi), uhat)))
    if a.terms is not None:
        out = 0.0
        for bx, cxi in a.terms:
            inner = inverse_fourier(_apply_field(_as_matrix(cxi(xi), n, xi.shape[:-1]) if n > 1
                                                 else np.broadcast_to(cxi(xi), xi.shape[:-1]), uhat))
            bxv = _as_matrix(bx(x), n, x.shape[:-1]) if n > 1 else np.broadcast_to(bx(x), x.shape[:-1])
            out = out + _apply_field(bxv, inner)
        return _rewrap(state, np.asarray(out, dtype=complex))
    # dense path: for each block of x rows sum over all frequencies
    Nx = x.shape[:-1]
    xf = x.reshape(-1, d).astype(float)
    kf = xi.reshape(-1, d)
    uh = uhat.reshape(-1, n)
    nodes = kf.shape[0]
    weight = (2 * np.pi) ** (-d / 2) * (2 * np.pi / (2 * L + 1)) ** d
    chunk = chunk or max(1, _CHUNK_BUDGET // (nodes * n * n))
    out = np.empty((xf.shape[0], n), dtype=complex)
    for s in range(0, xf.shape[0], chunk):
        xb = xf[s : s + chunk]
        sym = a(xb[:, None, :], kf[None, :, :])  # (c, nodes, n, n)
        ph = np.exp(1j * xb @ kf.T)  # (c, nodes)
        out[s : s + chunk] = weight * np.einsum("cm,cmab,mb->ca", ph, sym, uh)
    return _rewrap(state, out.reshape(Nx + (n,)))


def quantize_adjoint(a: SymbolField, state, *, chunk: Optional[int] = None):
    """Exact Hilbert-space adjoint ``a(x, D)^* v`` of the quadrature operator."""
    v = _values(state)
    d, n, L = _box_shape(v)
    x = box_coords(d, L)
    xi = box_frequencies(d, L)
    if not a.xi_dependent:
        sym = np.conj(np.swapaxes(a(x, np.zeros(d)), -1, -2))
        return _rewrap(state, _apply_field(sym, v))
    if not a.x_dependent:
        sym = np.conj(np.swapaxes(a(np.zeros(d), xi), -1, -2))
        return _rewrap(state, inverse_fourier(_apply_field(sym, fourier(v))))
    xf = x.reshape(-1, d).astype(float)
    kf = xi.reshape(-1, d)
    vf = v.reshape(-1, n)
    nodes = kf.shape[0]
    chunk = chunk or max(1, _CHUNK_BUDGET // (nodes * n * n))
    ghat = np.zeros((nodes, n), dtype=complex)
    for s in range(0, xf.shape[0], chunk):
        xb = xf[s : s + chunk]
        sym = a(xb[:, None, :], kf[None, :, :])
        ph = np.exp(-1j * xb @ kf.T)
        ghat += np.einsum("cm,cmba,cb->ma", ph, np.conj(sym), vf[s : s + chunk])
    ghat *= (2 * np.pi) ** (-d / 2)
    return _rewrap(state, inverse_fourier(ghat.reshape(xi.shape[:-1] + (n,))))


# ---------------------------------------------------------------------------
# Symbol calculus
# ---------------------------------------------------------------------------


def _fd_weights(order: int, half: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Central finite-difference weights for the ``order``-th derivative."""
    offs = np.arange(-half, half + 1, dtype=float)
    V = np.vander(offs, increasing=True).T  # rows: powers 0..2h
    rhs = np.zeros(offs.size)
    rhs[order] = factorial(order)
    return offs, np.linalg.solve(V, rhs)


def _stirling1(k: int) -> np.ndarray:
    """Signed Stirling numbers: ``z (z-1) ... (z-k+1) = sum_p s[p] z^p``."""
    coeffs = np.array([1.0])
    for j in range(k):
        coeffs = np.convolve(coeffs, [-j, 1.0])
    return coeffs


def _xi_derivative(a: SymbolField, beta: Sequence[int], h: float = 0.02) -> SymbolField:
    """``d_xi^beta a`` by high-order central differences (or exactly zero)."""
    beta = tuple(int(b) for b in beta)
    if sum(beta) == 0:
        return a
    if not a.xi_dependent:
        return SymbolField(lambda x, xi: 0.0, a.d, a.n, x_dependent=False, xi_dependent=False)
    d = a.d
    stencils = [_fd_weights(b) if b else (np.zeros(1), np.ones(1)) for b in beta]

    def fn(x, xi):
        xi = np.asarray(xi, dtype=float)
        out = 0.0
        for combo in itertools.product(*[range(len(s[0])) for s in stencils]):
            w = 1.0
            shift = np.zeros(d)
            for j, c in enumerate(combo):
                shift[j] = stencils[j][0][c] * h
                w *= stencils[j][1][c]
            if w == 0:
                continue
            out = out + w * a(x, xi + shift)
        return out / h ** sum(beta)

    return SymbolField(fn, d, a.n, order=a.order, x_dependent=a.x_dependent, name=f"d^{beta}{a.name}")


def _falling_derivative(a: SymbolField, alpha: Sequence[int]) -> SymbolField:
    """``prod_j (i d_{xi_j})(i d_{xi_j} - 1)...(i d_{xi_j} - alpha_j + 1) a``.

    On the Fourier side in ``xi`` this multiplies the kernel coefficient at
    offset ``z`` by the falling factorial of ``z`` -- the exact lattice
    counterpart of ``D_xi^alpha``.
    """
    alpha = tuple(int(v) for v in alpha)
    if sum(alpha) == 0:
        return a
    if not a.xi_dependent:
        return SymbolField(lambda x, xi: 0.0, a.d, a.n, x_dependent=False, xi_dependent=False)
    pieces = []
    polys = [_stirling1(k) for k in alpha]
    for powers in itertools.product(*[range(len(p)) for p in polys]):
        coef = np.prod([polys[j][p] for j, p in enumerate(powers)]) * (1j) ** sum(powers)
        if coef != 0:
            pieces.append((coef, _xi_derivative(a, powers)))

    def fn(x, xi):
        return sum(c * f(x, xi) for c, f in pieces)

    return SymbolField(fn, a.d, a.n, order=a.order, x_dependent=a.x_dependent, name=f"ff{alpha}{a.name}")


def _backward_diff(b: SymbolField, alpha: Sequence[int]) -> SymbolField:
    """``nabla_x^alpha b`` with ``nabla_j b(x) = b(x) - b(x - e_j)``."""
    alpha = tuple(int(v) for v in alpha)
    if sum(alpha) == 0:
        return b
    if not b.x_dependent:
        return SymbolField(lambda x, xi: 0.0, b.d, b.n, x_dependent=False, xi_dependent=False)
    from math import comb

    shifts = []
    for beta in itertools.product(*[range(a + 1) for a in alpha]):
        c = np.prod([(-1) ** bj * comb(aj, bj) for aj, bj in zip(alpha, beta)])
        shifts.append((c, np.array(beta, dtype=float)))

    def fn(x, xi):
        x = np.asarray(x, dtype=float)
        return sum(c * b(x - s, xi) for c, s in shifts)

    return SymbolField(fn, b.d, b.n, order=b.order + sum(alpha), xi_dependent=b.xi_dependent,
                       name=f"nabla{alpha}{b.name}")


def _multi_indices(d: int, M: int):
    for order in range(M + 1):
        for alpha in itertools.product(range(order + 1), repeat=d):
            if sum(alpha) == order:
                yield alpha


def compose_symbols(a: SymbolField, b: SymbolField, M: int) -> SymbolField:
    """Truncated symbol of ``a(x, D) b(x, D)``.

    ``c_M = sum_{|alpha| <= M} (-1)^{|alpha|} / alpha! (i d_xi)^{(alpha)} a . nabla_x^alpha b``

    where ``(i d_xi)^{(k)}`` is the falling factorial of ``i d_xi`` and
    ``nabla`` the backward difference. This is the exact lattice form of the
    expansion: the remainder ``a(x,D) b(x,D) - c_M(x,D)`` involves
    ``nabla^{M+1} b`` only.
    """
    if a.d != b.d or a.n != b.n:
        raise ValueError("symbols must share d and n")
    parts = []
    for alpha in _multi_indices(a.d, M):
        if sum(alpha) and (not a.xi_dependent or not b.x_dependent):
            continue
        coef = (-1) ** sum(alpha) / np.prod([factorial(k) for k in alpha])
        parts.append((coef, _falling_derivative(a, alpha), _backward_diff(b, alpha)))

    def fn(x, xi):
        return sum(c * (fa(x, xi) @ fb(x, xi)) for c, fa, fb in parts)

    return SymbolField(fn, a.d, a.n, order=a.order + b.order,
                       x_dependent=a.x_dependent or b.x_dependent,
                       xi_dependent=a.xi_dependent or b.xi_dependent, name=f"({a.name}#{b.name})_{M}")


def adjoint_symbol(a: SymbolField, M: int = 0) -> SymbolField:
    """Symbol of ``a(x, D)^*`` truncated at order ``M``.

    ``b_M = sum_{|alpha| <= M} (-1)^{|alpha|} / alpha! (i d_xi)^{(alpha)} nabla_x^alpha a^*``.
    ``M = 0`` returns the leading term ``a^*``; for symbols that are
    trigonometric polynomials of degree ``<= M + 1`` in ``xi`` per axis the
    series terminates and is exact.
    """
    astar = a.conj_transpose()
    if M == 0 or not (a.x_dependent and a.xi_dependent):
        return astar
    parts = []
    for alpha in _multi_indices(a.d, M):
        coef = (-1) ** sum(alpha) / np.prod([factorial(k) for k in alpha])
        parts.append((coef, _falling_derivative(_backward_diff(astar, alpha), alpha)))

    def fn(x, xi):
        return sum(c * f(x, xi) for c, f in parts)

    return SymbolField(fn, a.d, a.n, order=a.order, name=f"adj_{M}({a.name})")


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


def fit_slope(xs, ys) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    ok = (xs > 0) & (ys > 0)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(xs[ok]), np.log(ys[ok]), 1)[0])


def _probe_points(d, x0s):
    return [np.array([x0] + [0] * (d - 1)) for x0 in x0s]


def composition_remainder(a: SymbolField, b: SymbolField, M: int, x0s=(8, 16, 32, 64), L: int = 256) -> dict:
    """Measure ``||(a(x,D) b(x,D) - c_M(x,D)) delta_{x0}||`` for ``x0`` along ``e_1``.

    Returns
    -------
    dict with ``x0``, ``norms`` and the fitted log-log ``slope`` against ``<x0>``.
    """
    c = compose_symbols(a, b, M)
    norms = []
    for x0 in _probe_points(a.d, x0s):
        delta = LatticeState.delta(a.d, a.n, L, x0).values
        lhs = quantize(a, quantize(b, delta))
        rhs = quantize(c, delta)
        norms.append(float(np.linalg.norm(lhs - rhs)))
    weights = np.sqrt(1.0 + np.asarray(x0s, float) ** 2)
    return {"x0": list(x0s), "norms": norms, "slope": fit_slope(weights, norms), "M": M}


def adjoint_defect(a: SymbolField, x0s=(8, 16, 32, 64), L: int = 256, M: int = 0) -> dict:
    """Measure ``||(a(x,D)^* - b_M(x,D)) delta_{x0}||`` and its ``<x0>`` slope."""
    b = adjoint_symbol(a, M)
    norms = []
    for x0 in _probe_points(a.d, x0s):
        delta = LatticeState.delta(a.d, a.n, L, x0).values
        norms.append(float(np.linalg.norm(quantize_adjoint(a, delta) - quantize(b, delta))))
    weights = np.sqrt(1.0 + np.asarray(x0s, float) ** 2)
    return {"x0": list(x0s), "norms": norms, "slope": fit_slope(weights, norms), "M": M}


def operator_norm(apply: Callable, apply_adjoint: Callable, shape, iters: int = 50, seed=0) -> float:
    """Estimate ``||A||`` by power iteration on ``A^* A`` from a seeded random start."""
    rng = check_random_state(seed)
    v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = apply_adjoint(apply(v))
        est = float(np.linalg.norm(w))
        if est == 0:
            return 0.0
        v = w / est
    return float(np.sqrt(est))


def kato_time_smoothness(B: Callable, evolve: Callable, u, T: float, dt: float = 0.5,
                         checkpoints: Optional[Sequence[float]] = None) -> dict:
    """Running integral ``int_0^t ||B e^{-isH} u||^2 ds`` by the trapezoid rule.

    Parameters
    ----------
    B : callable
        State-to-state operator.
    evolve : callable
        ``evolve(u, t)`` returning ``e^{-itH} u``.
    u : state, normalized
    T, dt : float
        Horizon and sampling step (``T / dt`` is rounded up).
    checkpoints : sequence of float, optional
        Times at which to report the running integral (interpolated).
    """
    steps = max(1, int(np.ceil(T / dt)))
    times = np.linspace(0.0, T, steps + 1)
    vals = np.array([np.linalg.norm(_values(B(evolve(u, t)))) ** 2 for t in times])
    running = cumulative_trapezoid(vals, times, initial=0.0)
    out = {"times": times, "integrand": vals, "running": running}
    if checkpoints is not None:
        out["checkpoints"] = list(checkpoints)
        out["values"] = np.interp(checkpoints, times, running).tolist()
    return out


def symbol_seminorms(a: SymbolField, x_samples, xi_samples, max_order: int = 2) -> dict:
    """Sampled seminorms ``sup <x>^{m+|alpha|} |nabla_x^alpha d_xi^beta a|``.

    Parameters
    ----------
    a : SymbolField
    x_samples : array ``(P, d)``
    xi_samples : array ``(Q, d)``
    max_order : int
        Bound on ``|alpha|`` and ``|beta|`` separately.

    Returns
    -------
    dict keyed by ``(alpha, beta)`` strings.
    """
    x = np.asarray(x_samples, dtype=float)
    xi = np.asarray(xi_samples, dtype=float)
    w = np.sqrt(1.0 + np.sum(x * x, axis=-1))
    out = {}
    for alpha in _multi_indices(a.d, max_order):
        da = _backward_diff(a, alpha)
        for beta in _multi_indices(a.d, max_order):
            f = _xi_derivative(da, beta)
            vals = np.linalg.norm(f(x[:, None, :], xi[None, :, :]), ord=2, axis=(-2, -1))
            out[f"{alpha}|{beta}"] = float(np.max(vals * (w[:, None] ** (a.order + sum(alpha)))))
    return out
