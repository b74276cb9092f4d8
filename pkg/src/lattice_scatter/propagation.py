"""Time evolution and the scattering experiments.

The box ``{-L..L}^d`` is periodic. The free evolution is exact in Fourier
(nodewise exponential of the Hermitian symbol). The full evolution uses a
dense eigendecomposition when the dimension is small and a Chebyshev
expansion with Bessel coefficients otherwise. Every evolved state is
checked against a boundary-mass alarm so that wraparound never silently
contaminates a measurement.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import jv

from ._validation import check_positive_int, check_random_state
from .band_structure import BandData, BandEvaluator, ThresholdError, fermi_surface
from .lattice_model import HoppingKernel, Potential, bracket
from .modifiers import CutoffSet
from .pdo_calculus import (
    SymbolField,
    _box_shape,
    _values,
    boundary_mass,
    box_coords,
    box_frequencies,
    fit_slope,
    fourier,
    inverse_fourier,
    operator_norm,
    quantize,
)

__all__ = [
    "BoundaryAlarm",
    "psi_bump",
    "sharp_indicator",
    "gaussian_packet",
    "hamiltonian_matrix",
    "EvolutionEngine",
    "IdentityModifier",
    "ConjugateOperator",
    "mourre_check",
    "RadiationField",
    "radiation_integral",
    "lap_scan",
    "free_resolvent_norm",
    "cook_integrand_curve",
    "mismatch_decay",
    "wave_operator_estimate",
    "centroid_velocity",
]


class BoundaryAlarm(RuntimeError):
    """An evolved state put more than the allowed mass into the boundary shell."""

    def __init__(self, message, mass=None, time=None):
        super().__init__(message)
        self.mass = mass
        self.time = time


# ---------------------------------------------------------------------------
# Energy filters and packets
# ---------------------------------------------------------------------------


def psi_bump(a: float, b: float) -> Callable:
    """Smooth bump ``exp(1 - 1/(1 - t^4))`` on ``(a, b)``, ``t = (2E - a - b)/(b - a)``; peak value 1."""
    if not b > a:
        raise ValueError("need a < b")

    def psi(E):
        t = (2 * np.asarray(E, dtype=float) - a - b) / (b - a)
        inside = np.abs(t) < 1
        t4 = np.where(inside, t**4, 0.0)
        return np.where(inside, np.exp(1.0 - 1.0 / (1.0 - t4)), 0.0)

    psi.support = (a, b)
    return psi


def sharp_indicator(a: float, b: float) -> Callable:
    """Indicator of ``[a, b]`` (for the sharp Mourre minimization)."""

    def psi(E):
        E = np.asarray(E, dtype=float)
        return ((E >= a) & (E <= b)).astype(float)

    psi.support = (a, b)
    psi.sharp = True
    return psi


def gaussian_packet(d: int, n: int, L: int, x0=0.0, xi0=0.0, width: float = 10.0, vec=None) -> np.ndarray:
    """Normalized ``exp(-|x - x0|^2 / (4 width^2) + i x.xi0) vec`` on the box."""
    x = box_coords(d, L).astype(float)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (d,))
    xi0 = np.broadcast_to(np.asarray(xi0, dtype=float), (d,))
    env = np.exp(-np.sum((x - x0) ** 2, axis=-1) / (4 * width**2) + 1j * (x @ xi0))
    vec = np.ones(n) / np.sqrt(n) if vec is None else np.asarray(vec)
    u = env[..., None] * vec
    return u / np.linalg.norm(u)


def centroid_velocity(times, states) -> float:
    """Slope of the first-coordinate centroid ``sum x_1 |u|^2 / sum |u|^2`` against time."""
    cents = []
    for u in states:
        u = _values(u)
        d, n, L = _box_shape(u)
        x = box_coords(d, L)[..., 0]
        w = np.sum(np.abs(u) ** 2, axis=-1)
        cents.append(float(np.sum(x * w) / np.sum(w)))
    return float(np.polyfit(np.asarray(times, float), cents, 1)[0])


# ---------------------------------------------------------------------------
# Evolution
# ---------------------------------------------------------------------------


def _shift_matrix(N: int, s: int) -> sp.csr_matrix:
    # (P u)(x) = u(x - s) on Z / N Z
    rows = np.arange(N)
    return sp.csr_matrix((np.ones(N), (rows, (rows - s) % N)), shape=(N, N))


def hamiltonian_matrix(kernel: HoppingKernel, L: int, potential: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """Sparse periodic ``H0 (+ V)`` on the box, site-major ordering ``site * n + orbital``."""
    N = 2 * L + 1
    H = None
    for off, mat in kernel.entries.items():
        P = sp.csr_matrix(np.ones((1, 1)))
        for s in off:
            P = sp.kron(P, _shift_matrix(N, s), format="csr")
        term = sp.kron(P, sp.csr_matrix(mat), format="csr")
        H = term if H is None else H + term
    if potential is not None:
        H = H + sp.diags(np.asarray(potential, dtype=float).ravel())
    return H.tocsr()


@dataclass(eq=False)
class EvolutionEngine:
    """Free and full propagators on the periodic box.

    Parameters
    ----------
    kernel : HoppingKernel
    L : int
    potential : ndarray, optional
        Diagonal potential values of shape ``(2L+1,)*d + (n,)``; ``None`` means ``V = 0``.
    method : {"auto", "exact", "chebyshev"}
        ``auto`` uses the dense eigendecomposition up to ``exact_max_dim``.
    alarm : float
        Allowed fraction of ``||u||^2`` in the outer 10% shell.
    strict : bool
        Raise :class:`BoundaryAlarm` on violation; otherwise record it in ``flags``.
    """

    kernel: HoppingKernel
    L: int
    potential: Optional[np.ndarray] = None
    method: str = "auto"
    exact_max_dim: int = 4097
    alarm: float = 1e-6
    strict: bool = True
    cheb_tol: float = 1e-15
    flags: list = field(default_factory=list)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        check_positive_int(self.L, "L")
        if self.method not in ("auto", "exact", "chebyshev"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.potential is not None:
            self.potential = np.asarray(self.potential, dtype=float)
            if self.potential.shape != self.shape:
                raise ValueError(f"potential shape {self.potential.shape} != box shape {self.shape}")

    @classmethod
    def from_potential(cls, kernel: HoppingKernel, potential: Optional[Potential], L: int, **kw) -> "EvolutionEngine":
        vals = None if potential is None or potential.is_zero else potential.on_box(L)
        return cls(kernel, L, vals, **kw)

    @property
    def d(self) -> int:
        return self.kernel.d

    @property
    def n(self) -> int:
        return self.kernel.n

    @property
    def shape(self) -> tuple:
        return (2 * self.L + 1,) * self.d + (self.n,)

    @property
    def dim(self) -> int:
        return int(np.prod(self.shape))

    @property
    def full_method(self) -> str:
        if self.method != "auto":
            return self.method
        return "exact" if self.dim <= self.exact_max_dim else "chebyshev"

    # -- operators ---------------------------------------------------------------
    def apply_H0(self, u):
        return self.kernel.apply_box(_values(u))

    def apply_H(self, u):
        u = _values(u)
        out = self.kernel.apply_box(u)
        if self.potential is not None:
            out = out + self.potential * u
        return out

    def matrix(self) -> sp.csr_matrix:
        if "H" not in self._cache:
            self._cache["H"] = hamiltonian_matrix(self.kernel, self.L, self.potential)
        return self._cache["H"]

    def spectral_bounds(self) -> tuple[float, float]:
        """Gershgorin interval for ``H``."""
        H = self.matrix().tocsr()
        diag = H.diagonal().real
        radius = np.asarray(abs(H).sum(axis=1)).ravel() - np.abs(diag)
        return float(np.min(diag - radius)), float(np.max(diag + radius))

    def _free_eig(self):
        if "free" not in self._cache:
            xi = box_frequencies(self.d, self.L)
            sym = self.kernel.symbol_at(xi)
            if self.n == 1:
                self._cache["free"] = (sym[..., 0, 0].real[..., None], None)
            else:
                E, Q = np.linalg.eigh(sym)
                self._cache["free"] = (E, Q)
        return self._cache["free"]

    def _full_eig(self):
        if "full" not in self._cache:
            if self.dim > self.exact_max_dim and self.method != "exact":
                raise ValueError(f"dense eigendecomposition needs dim <= {self.exact_max_dim}, got {self.dim}")
            E, Q = sla.eigh(self.matrix().toarray())
            self._cache["full"] = (E, Q)
        return self._cache["full"]

    def _free_multiplier(self, u, fn):
        E, Q = self._free_eig()
        uh = fourier(_values(u))
        if Q is None:
            return inverse_fourier(fn(E) * uh)
        coef = np.einsum("...ba,...b->...a", Q.conj(), uh)
        return inverse_fourier(np.einsum("...ab,...b->...a", Q, fn(E) * coef))

    def _full_function(self, u, fn):
        E, Q = self._full_eig()
        v = _values(u).reshape(-1)
        return (Q @ (fn(E) * (Q.conj().T @ v))).reshape(self.shape)

    def check_boundary(self, u, time=None, context: str = "", reference: Optional[float] = None) -> float:
        """Boundary-shell mass as a fraction of ``||u||^2`` (or of ``reference^2`` when larger).

        A reference norm keeps tiny byproduct states (e.g. the mismatch part
        of a modifier) from tripping the alarm through their own scale.
        """
        mass = boundary_mass(_values(u))
        if reference is not None:
            own = float(np.sum(np.abs(_values(u)) ** 2))
            if reference**2 > own:
                mass *= own / reference**2
        if mass > self.alarm:
            msg = f"boundary mass {mass:.3g} > {self.alarm:g}" + (f" at t={time}" if time is not None else "")
            msg += f" ({context})" if context else ""
            if self.strict:
                raise BoundaryAlarm(msg, mass, time)
            self.flags.append(msg)
        return mass

    # -- propagators -------------------------------------------------------------
    def evolve_free(self, u, t: float, check: bool = True, reference: Optional[float] = None):
        """``exp(-i t H0) u``."""
        out = self._free_multiplier(u, lambda E: np.exp(-1j * t * E))
        if check:
            self.check_boundary(out, t, "free evolution", reference)
        return out

    def filter_free(self, u, psi: Callable):
        """``psi(H0) u``."""
        return self._free_multiplier(u, lambda E: psi(E))

    def filter_full(self, u, psi: Callable):
        """``psi(H) u`` (exact eigendecomposition only)."""
        return self._full_function(u, psi)

    def evolve_full(self, u, t: float, check: bool = True, reference: Optional[float] = None):
        """``exp(-i t H) u``."""
        if self.potential is None and self.method == "auto":
            out = self._free_multiplier(u, lambda E: np.exp(-1j * t * E))
        elif self.full_method == "exact":
            out = self._full_function(u, lambda E: np.exp(-1j * t * E))
        else:
            out = self._chebyshev(u, t)
        if check:
            self.check_boundary(out, t, "full evolution", reference)
        return out

    def _chebyshev(self, u, t: float):
        lo, hi = self.spectral_bounds()
        alpha, beta = 0.5 * (hi - lo), 0.5 * (hi + lo)
        H = self.matrix()
        v = _values(u).reshape(-1).astype(complex)
        z = alpha * abs(t)
        K = int(z + 10 * max(z, 1) ** (1 / 3) + 40)
        ks = np.arange(K + 1)
        coef = jv(ks, z) * (-1j * np.sign(t)) ** ks
        coef[1:] *= 2
        # trim the negligible tail
        big = np.nonzero(np.abs(coef) > self.cheb_tol)[0]
        K = int(big[-1]) if big.size else 0

        def Ht(w):
            return (H @ w - beta * w) / alpha

        T0, T1 = v, Ht(v)
        out = coef[0] * T0 + (coef[1] * T1 if K >= 1 else 0)
        for k in range(2, K + 1):
            T0, T1 = T1, 2 * Ht(T1) - T0
            out = out + coef[k] * T1
        return (np.exp(-1j * t * beta) * out).reshape(self.shape)

    def unitarity_defect(self, u, t: float, full: bool = True) -> float:
        w = self.evolve_full(u, t, check=False) if full else self.evolve_free(u, t, check=False)
        return abs(np.linalg.norm(w) / np.linalg.norm(_values(u)) - 1.0)


# ---------------------------------------------------------------------------
# Modifiers in the experiments
# ---------------------------------------------------------------------------


class IdentityModifier:
    """``J = Id`` (short-range scattering)."""

    sign = 1

    def apply(self, u):
        return _values(u)

    def apply_adjoint(self, u):
        return _values(u)

    def metadata(self) -> dict:
        return {"kind": "identity"}


def _as_list(times):
    return [float(t) for t in times]


def cook_integrand_curve(J, u, times: Sequence[float], engine: EvolutionEngine, psi: Optional[Callable] = None,
                         fit_range=(10.0, 100.0)) -> dict:
    """``||(H J - J H0) exp(-i t H0) psi(H0) u||`` at each ``t``, with the log-log tail slope."""
    v = engine.filter_free(u, psi) if psi is not None else _values(u)
    vals = []
    for t in times:
        w = engine.evolve_free(v, t)
        vals.append(float(np.linalg.norm(engine.apply_H(J.apply(w)) - J.apply(engine.apply_H0(w)))))
    ts = np.asarray(times, float)
    sel = (ts >= fit_range[0]) & (ts <= fit_range[1])
    return {"times": _as_list(times), "values": vals, "slope": fit_slope(ts[sel], np.asarray(vals)[sel]),
            "fit_range": list(fit_range)}


def mismatch_decay(J, u, times: Sequence[float], engine: EvolutionEngine, psi: Optional[Callable] = None,
                   fit_range=(20.0, 100.0)) -> dict:
    """``||J exp(-i t H0) psi(H0) u||`` (``J`` of the opposite sign) with the tail slope."""
    v = engine.filter_free(u, psi) if psi is not None else _values(u)
    vals = [float(np.linalg.norm(J.apply(engine.evolve_free(v, t)))) for t in times]
    ts = np.asarray(times, float)
    sel = (ts >= fit_range[0]) & (ts <= fit_range[1])
    return {"times": _as_list(times), "values": vals, "slope": fit_slope(ts[sel], np.asarray(vals)[sel]),
            "fit_range": list(fit_range)}


def wave_operator_estimate(J, u, checkpoints: Sequence[float], engine: EvolutionEngine,
                           psi: Optional[Callable] = None, J_opposite=None) -> dict:
    """``W(T) u = exp(iTH) J exp(-iTH0) u`` at increasing checkpoints.

    Returns
    -------
    dict with ``gaps`` (Cauchy gaps between consecutive checkpoints),
    ``gaps_decreasing``, ``isometry`` (``||W(T_m) u|| / ||u||``),
    ``intertwining`` (``||(H W(T_m) - W(T_m) H0) u||``) and, when
    ``J_opposite`` is given, ``decomposition``
    (``(||W_+ u||^2 + ||W_- u||^2) / ||u||^2`` at ``T_m``).
    """
    T = list(checkpoints)
    if any(b <= a for a, b in zip(T, T[1:])):
        raise ValueError("checkpoints must increase")
    v = engine.filter_free(u, psi) if psi is not None else _values(u)
    nu = float(np.linalg.norm(v))
    W = [engine.evolve_full(J.apply(engine.evolve_free(v, t)), -t, reference=nu) for t in T]
    gaps = [float(np.linalg.norm(b - a)) for a, b in zip(W, W[1:])]
    Tm = T[-1]
    H0v = engine.apply_H0(v)
    WH0 = engine.evolve_full(J.apply(engine.evolve_free(H0v, Tm)), -Tm, reference=float(np.linalg.norm(H0v)))
    inter = float(np.linalg.norm(engine.apply_H(W[-1]) - WH0))
    out = {"checkpoints": T, "gaps": gaps, "gaps_decreasing": bool(all(b < a for a, b in zip(gaps, gaps[1:]))),
           "isometry": float(np.linalg.norm(W[-1]) / nu), "intertwining": inter, "norm": nu}
    if J_opposite is not None:
        Wo = engine.evolve_full(J_opposite.apply(engine.evolve_free(v, Tm)), -Tm, reference=nu)
        out["decomposition"] = float((np.linalg.norm(W[-1]) ** 2 + np.linalg.norm(Wo) ** 2) / nu**2)
    return out


# ---------------------------------------------------------------------------
# Mourre estimate
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ConjugateOperator:
    """``A = sum_k P_k chi_k(D) (x.grad lambda_k(D) + grad lambda_k(D).x) P_k chi_k(D)`` on the box."""

    cutoffs: CutoffSet
    L: int
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def evaluator(self) -> BandEvaluator:
        return self.cutoffs.evaluator

    def _fields(self):
        if "fields" not in self._cache:
            ev = self.evaluator
            xi = box_frequencies(ev.d, self.L)
            out = []
            for k in self.cutoffs.bands:
                B = self.cutoffs.chi(k, xi)[..., None, None] * ev.projector(k, xi)
                out.append((B, ev.velocity(k, xi)))
            self._cache["fields"] = out
        return self._cache["fields"]

    def apply(self, u):
        u = _values(u)
        d, n, L = _box_shape(u)
        x = box_coords(d, L).astype(float)

        def mult(field_, w):
            return inverse_fourier(np.einsum("...ab,...b->...a", field_, fourier(w)))

        def scal(f, w):
            return inverse_fourier(f[..., None] * fourier(w))

        out = np.zeros_like(u, dtype=complex)
        for B, v in self._fields():
            w = mult(B, u)
            acc = np.zeros_like(w)
            for j in range(d):
                acc += x[..., j, None] * scal(v[..., j], w) + scal(v[..., j], x[..., j, None] * w)
            out += mult(B, acc)
        return out


def mourre_check(bands: BandData, gamma, psi: Optional[Callable] = None, *, cutoffs: Optional[CutoffSet] = None,
                 engine: Optional[EvolutionEngine] = None, n_eigs: int = 5, psi_tol: float = 1e-6,
                 thresholds: Optional[Sequence[float]] = None) -> dict:
    """Free Mourre constant and, optionally, the perturbed form on a small box.

    The free form reduces nodewise to ``2 |grad lambda_k|^2 psi(lambda_k)^2``,
    so ``c* = min 2 |grad lambda_k|^2`` over nodes with ``psi > psi_tol``.
    With a sharp ``psi`` (the default) the level sets of the window
    endpoints are added to the grid nodes so the minimum is attained exactly.

    With ``engine`` and ``cutoffs`` the lowest eigenvalues of
    ``psi(H) i[H, A] psi(H)`` on the engine box are reported; the compact
    error term is not small on a finite box, so these are diagnostics only.

    Raises
    ------
    ThresholdError
        If the window touches a threshold.
    """
    from ._validation import check_intervals

    intervals = check_intervals(gamma if np.ndim(gamma) == 2 else [gamma])
    lo, hi = intervals[0][0], intervals[-1][1]
    ths = thresholds
    if ths is None:
        from .band_structure import detect_thresholds

        ths = detect_thresholds(bands)
    for t in ths:
        for a, b in intervals:
            if a - 1e-9 <= t <= b + 1e-9:
                raise ThresholdError(f"window ({a}, {b}) touches threshold {t:.6g}")
    if psi is None:
        psi = sharp_indicator(lo, hi) if len(intervals) == 1 else (
            lambda E: sum(sharp_indicator(a, b)(E) for a, b in intervals))
        psi.sharp = True
    sharp = getattr(psi, "sharp", False)
    vals = []
    for k in range(bands.n):
        lam = bands.lambdas[..., k].reshape(-1)
        mask = psi(lam) > psi_tol
        speed2 = np.sum(bands.velocities[..., k, :].reshape(-1, bands.d) ** 2, axis=-1)
        if np.any(mask):
            vals.append(2 * speed2[mask].min())
    if sharp:
        for a, b in intervals:
            for E in (a, b):
                fs = fermi_surface(bands, E)
                vals.extend((2 * fs.speed**2).tolist())
    out = {"c_star": float(min(vals)) if vals else 0.0, "window": [list(iv) for iv in intervals]}
    if engine is not None and cutoffs is not None:
        A = ConjugateOperator(cutoffs, engine.L)
        dim = engine.dim
        Hm = engine.matrix().toarray()
        I = np.eye(dim).reshape((dim,) + engine.shape)
        Am = np.stack([A.apply(I[i]).reshape(-1) for i in range(dim)], axis=1)
        comm = 1j * (Hm @ Am - Am @ Hm)
        E, Q = engine._full_eig()
        P = (Q * psi(E)) @ Q.conj().T
        form = P @ comm @ P
        form = 0.5 * (form + form.conj().T)
        eig = np.linalg.eigvalsh(form)
        out["perturbed_lowest"] = [float(e) for e in eig[:n_eigs]]
        out["perturbed_note"] = "finite-box form; includes the compact term, which is not small"
    return out


# ---------------------------------------------------------------------------
# Radiation estimate
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class RadiationField:
    """``(d_j lambda_k(D) - <x>^{-2} x_j <x, grad lambda_k(D)>) P_k(D) chi_k(D)`` as a separable symbol."""

    cutoffs: CutoffSet
    k: int
    j: int = 0

    @property
    def evaluator(self) -> BandEvaluator:
        return self.cutoffs.evaluator

    def symbol(self) -> SymbolField:
        ev, k, j = self.evaluator, self.k, self.j
        d, n = ev.d, ev.n

        def base(xi):
            return self.cutoffs.chi(k, xi)[..., None, None] * ev.projector(k, xi) if n > 1 else self.cutoffs.chi(k, xi)

        def cfac(i):
            def c(xi):
                v = ev.velocity(k, xi)[..., i]
                b = base(xi)
                return v[..., None, None] * b if n > 1 else v * b
            return c

        def bfac(i):
            def b(x):
                x = np.asarray(x, dtype=float)
                return -x[..., j] * x[..., i] / bracket(x) ** 2
            return b

        terms = [(lambda x: np.ones(np.shape(x)[:-1]), cfac(j))] + [(bfac(i), cfac(i)) for i in range(d)]

        def fn(x, xi):
            x = np.asarray(x, dtype=float)
            v = ev.velocity(k, xi)
            b = base(xi)
            w = bracket(x) ** -2
            sc = v[..., j] - w * x[..., j] * np.sum(x * v, axis=-1)
            return sc[..., None, None] * b if n > 1 else sc * b

        return SymbolField(fn, d, n, order=0.0, terms=terms, name=f"radiation[k={k},j={j}]")

    def apply(self, u):
        return quantize(self.symbol(), _values(u))


def radiation_integral(fieldop: RadiationField, u, T: float, engine: EvolutionEngine, psi: Optional[Callable] = None,
                       dt: float = 0.5, filter: str = "full") -> dict:
    """Running ``int_0^T ||<x>^{-1/2} R e^{-itH} psi(H) u||^2 dt`` (trapezoid).

    ``filter="full"`` applies ``psi(H)`` through the exact eigendecomposition;
    ``"free"`` uses ``psi(H0)``. The convergence diagnostic is the ratio of
    the increment over ``[T/2, T]`` to that over ``[T/4, T/2]``.
    """
    d, L = engine.d, engine.L
    w = bracket(box_coords(d, L)) ** -0.5
    v = _values(u)
    if psi is not None:
        v = engine.filter_full(v, psi) if filter == "full" else engine.filter_free(v, psi)
    sym = fieldop.symbol()
    times = np.arange(0.0, T + 0.5 * dt, dt)
    vals = []
    for t in times:
        wt = engine.evolve_full(v, t) if t > 0 else v
        vals.append(float(np.sum(np.abs(w[..., None] * quantize(sym, wt)) ** 2)))
    vals = np.asarray(vals)
    from scipy.integrate import cumulative_trapezoid

    run = cumulative_trapezoid(vals, times, initial=0.0)

    def at(s):
        return float(np.interp(s, times, run))

    inc_late = at(T) - at(T / 2)
    inc_early = at(T / 2) - at(T / 4)
    ratio = inc_late / inc_early if inc_early > 0 else 0.0
    return {"times": times.tolist(), "integrand": vals.tolist(), "running": run.tolist(),
            "increment_ratio": float(ratio), "total": float(run[-1])}


# ---------------------------------------------------------------------------
# Limiting absorption
# ---------------------------------------------------------------------------


def free_resolvent_norm(kernel: HoppingKernel, L: int, z: complex, s: float, iters: int = 50, seed=0) -> float:
    """``||<x>^{-s} (H0 - z)^{-1} <x>^{-s}||`` with the resolvent applied nodewise in Fourier."""
    xi = box_frequencies(kernel.d, L)
    sym = kernel.symbol_at(xi)
    n = kernel.n
    inv = np.linalg.inv(sym - z * np.eye(n))
    invh = np.linalg.inv(sym - np.conj(z) * np.eye(n))
    w = bracket(box_coords(kernel.d, L))[..., None] ** -s

    def R(field_, v):
        return inverse_fourier(np.einsum("...ab,...b->...a", field_, fourier(v)))

    shape = xi.shape[:-1] + (n,)
    return operator_norm(lambda v: w * R(inv, w * v), lambda v: w * R(invh, w * v), shape, iters, seed)


def lap_scan(engine: EvolutionEngine, lams: Sequence[float], epss: Sequence[float], s: float = 1.0,
             sign: int = 1, iters: int = 50, seed=0, free_check: bool = True,
             eigenvalues: Optional[Sequence[float]] = None, guard: float = 0.02) -> dict:
    """Table of ``||<x>^{-s} (H - lambda -+ i eps)^{-1} <x>^{-s}||``.

    Each resolvent is applied through a sparse LU factorization; the norm
    comes from power iteration. ``eigenvalues`` (e.g. from a small-box
    spectrum) removes grid energies within ``guard`` of them.

    Returns
    -------
    dict with ``table[i][j]`` for ``lams[i]``, ``epss[j]``, per-energy
    flatness ratios ``max/min`` over ``eps``, and with ``free_check`` the
    same table for ``V = 0`` from the sparse solver and from the explicit
    Fourier resolvent, with their largest relative difference.

    Raises
    ------
    ValueError
        If ``s <= 1/2`` or some ``eps < 10 / L``.
    RuntimeError
        If a factorization fails.
    """
    if not s > 0.5:
        raise ValueError("weights <x>^{-s} need s > 1/2")
    eps_min = 10.0 / engine.L
    if min(epss) < eps_min - 1e-15:
        raise ValueError(f"eps must be >= 10/L = {eps_min:g}")
    lams = [float(l) for l in lams]
    if eigenvalues is not None:
        lams = [l for l in lams if np.min(np.abs(np.asarray(eigenvalues) - l)) > guard]
    w = bracket(box_coords(engine.d, engine.L)).reshape(-1).repeat(engine.n) ** -s

    def table_for(H):
        I = sp.identity(H.shape[0], format="csc", dtype=complex)
        rows = []
        for lam in lams:
            row = []
            for eps in epss:
                z = lam + 1j * sign * eps
                try:
                    lu = spla.splu((H - z * I).tocsc())
                except RuntimeError as exc:  # pragma: no cover - singular only at exact eigenvalues
                    raise RuntimeError(f"resolvent factorization failed at z={z}: {exc}") from exc
                rng = check_random_state(seed)
                v = rng.standard_normal(H.shape[0]) + 0j
                v /= np.linalg.norm(v)
                est = 0.0
                for _ in range(iters):
                    y = w * lu.solve(w * v)
                    y = w * lu.solve(w * y, trans="H")
                    est = float(np.linalg.norm(y))
                    v = y / est
                row.append(float(np.sqrt(est)))
            rows.append(row)
        return rows

    table = table_for(engine.matrix())
    flat = [max(r) / min(r) for r in table]
    out = {"lams": lams, "epss": list(epss), "s": s, "table": table, "flatness": flat,
           "max_flatness": float(max(flat)) if flat else float("nan")}
    if free_check:
        free = EvolutionEngine(engine.kernel, engine.L)
        ftab = table_for(free.matrix())
        fourier_tab = [[free_resolvent_norm(engine.kernel, engine.L, lam + 1j * sign * eps, s, iters, seed)
                        for eps in epss] for lam in lams]
        diff = max(abs(a - b) / b for ra, rb in zip(ftab, fourier_tab) for a, b in zip(ra, rb))
        out.update({"free_table": ftab, "free_fourier_table": fourier_tab, "free_crosscheck": float(diff),
                    "free_flatness": [max(r) / min(r) for r in ftab]})
    return out
