"""Classical flow and eikonal phase functions.

For a band ``lambda_k`` and a smooth long-range potential ``V~`` we need
phases ``phi(x, xi) = x.xi + u(x, xi)`` solving

    lambda_k(grad_x phi(x, xi)) + V~(x) = lambda_k(xi)

on the outgoing/incoming cones ``{|x| > R, +-cos(x, grad lambda_k(xi)) > 1 - eps}``.

In one dimension the equation is solved exactly along the line: with
``v = lambda_k'(xi)`` the gradient ``w = d_x u`` satisfies the pointwise
fixed-point equation

    w = -(V~(x) + lambda_k(xi + w) - lambda_k(xi) - v w) / v,

which is iterated (Picard) to convergence, and ``u`` is recovered by
Gauss-Legendre quadrature of ``w`` from the cone apex ``sign(x) R``. For
``rho <= 1`` the plain ray integral ``int_0^inf V~(x + s v) ds`` diverges;
anchoring ``u`` at ``|x| = R`` is the renormalization that keeps every
derivative identical to the ray construction (they differ by an
``x``-independent function of ``xi``).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate
from sklearn.base import BaseEstimator

from .band_structure import BandEvaluator, EnergyWindow, TorusGrid, default_resolution
from .lattice_model import SmoothExtension
from .pdo_calculus import fit_slope

__all__ = [
    "cosine",
    "ConeRegion",
    "Trajectory",
    "DegeneracyError",
    "PhaseError",
    "PhaseVerificationError",
    "hamilton_flow",
    "ray_integral",
    "PhaseFunction",
    "solve_phase",
    "PhaseReport",
    "verify_phase",
    "EikonalPhase",
]

DEFAULT_EPSILON = 1.75  # region {+-cos > -3/4}, covering the support of sigma_+-


class DegeneracyError(RuntimeError):
    """A trajectory or phase left the non-degenerate chart of its band."""


class PhaseError(RuntimeError):
    """Phase iteration failed; carries the last residual."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class PhaseVerificationError(AssertionError):
    """A phase invariant failed; ``report`` lists the worst sample."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


def cosine(x, v, floor: float = 1e-14) -> np.ndarray:
    """``x.v / (|x| |v|)``, set to 0 where ``|x| |v| < floor``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    num = np.sum(x * v, axis=-1)
    den = np.linalg.norm(x, axis=-1) * np.linalg.norm(v, axis=-1)
    return np.where(den < floor, 0.0, num / np.where(den < floor, 1.0, den))


@dataclass(frozen=True)
class ConeRegion:
    """Outgoing (``sign=+1``) or incoming (``sign=-1``) region of band ``k``.

    ``{(x, xi): |x| > R, sign * cos(x, grad lambda_k(xi)) > 1 - epsilon}``.
    """

    k: int
    R: float
    epsilon: float = DEFAULT_EPSILON
    sign: int = 1

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("R must be positive")
        if not 0 < self.epsilon < 2:
            raise ValueError("epsilon must lie in (0, 2)")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    def contains(self, x, v) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (np.linalg.norm(x, axis=-1) > self.R) & (self.sign * cosine(x, v) > 1 - self.epsilon)


# ---------------------------------------------------------------------------
# Hamilton flow
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    x: np.ndarray  # (T, d)
    xi: np.ndarray  # (T, d)
    energy: np.ndarray  # (T,)

    @property
    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energy - self.energy[0])))


def _wrap(xi):
    return (np.asarray(xi) + np.pi) % (2 * np.pi) - np.pi


def _check_chart(ev: BandEvaluator, k: int, xi):
    if ev.n == 1:
        return
    lam = ev.bands(xi)
    gaps = []
    if k > 0:
        gaps.append(lam[..., k] - lam[..., k - 1])
    if k < ev.n - 1:
        gaps.append(lam[..., k + 1] - lam[..., k])
    if np.min(gaps) < ev.gap_tol:
        raise DegeneracyError(f"band {k} is degenerate at xi={np.round(xi, 6).tolist()}")


def hamilton_flow(ev: BandEvaluator, k: int, ext: SmoothExtension, x0, xi0, T: float, dt: float = 1e-2) -> Trajectory:
    """Integrate ``x' = grad lambda_k(xi)``, ``xi' = -grad V~(x)`` by Strang splitting.

    Kick-drift-kick (leapfrog) steps of size ``dt`` up to time ``T``; second
    order and symplectic. ``xi`` is wrapped to ``[-pi, pi)^d``.

    Raises
    ------
    DegeneracyError
        If the trajectory meets a degenerate point of band ``k``.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    xi = np.atleast_1d(np.asarray(xi0, dtype=float)).copy()
    steps = int(round(T / dt))
    xs, xis = np.empty((steps + 1, x.size)), np.empty((steps + 1, x.size))
    xs[0], xis[0] = x, xi
    grad = lambda y: np.atleast_1d(ext.gradient(y[None, :] if ext.d > 1 else y))[..., :].reshape(-1)  # noqa: E731
    _check_chart(ev, k, xi)
    for i in range(steps):
        xi = xi - 0.5 * dt * grad(x)
        x = x + dt * ev.velocity(k, xi[None, :])[0]
        xi = _wrap(xi - 0.5 * dt * grad(x))
        _check_chart(ev, k, xi)
        xs[i + 1], xis[i + 1] = x, xi
    energy = ev.band(k, xis) + np.asarray(ext.value(xs)).reshape(-1)
    return Trajectory(np.linspace(0.0, steps * dt, steps + 1), xs, xis, energy)


# ---------------------------------------------------------------------------
# Ray integrals
# ---------------------------------------------------------------------------


def ray_integral(ext: SmoothExtension, x, v, sign: int = 1, r_tail: float = 1e3) -> float:
    """``sign * int_0^inf V~(x + sign s v) ds`` for a single point.

    The integral is computed by adaptive quadrature up to the parameter
    where ``|x + s v| = r_tail`` and by the closed-form tail series of
    ``c <r>^{-rho}`` beyond. Only convergent for ``rho > 1``.

    Raises
    ------
    ValueError
        If ``rho <= 1`` (the tail diverges).
    """
    pot = ext.potential
    if ext.is_zero:
        return 0.0
    if pot.rho <= 1:
        raise ValueError("ray integral diverges for rho <= 1; use the renormalized phase")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    speed = float(np.linalg.norm(v))
    unit = sign * v / speed
    # s_max: |x + s v_hat| = r_tail along the ray (distance along the unit direction)
    b = float(x @ unit)
    c0 = float(x @ x) - r_tail**2
    t_max = max(0.0, -b + np.sqrt(max(b * b - c0, 0.0)))
    f = lambda t: float(np.asarray(ext.value((x + t * unit)[None, :] if ext.d > 1 else x + t * unit)).ravel()[0])  # noqa: E731
    head, _ = integrate.quad(f, 0.0, t_max, limit=400, epsabs=1e-14, epsrel=1e-12)
    # along a ray far out, |x + t u| = sqrt(r^2 + p^2) with p the perpendicular offset;
    # the tail integrand is c (1 + p^2 + r^2)^{-rho/2} in the radial parameter r
    p2 = float(x @ x) - b * b
    a2 = 1.0 + max(p2, 0.0)
    r_par = b + t_max  # parallel coordinate at the start of the tail
    k = np.arange(0, 12)
    # (a2 + r^2)^{-rho/2} = r^{-rho} sum_k binom(-rho/2, k) a2^k r^{-2k}
    gen_binom = np.cumprod(np.concatenate([[1.0], (-pot.rho / 2 - k[:-1]) / (k[:-1] + 1)]))
    tail = pot.c * np.sum(gen_binom * a2**k * r_par ** (1 - pot.rho - 2 * k) / (pot.rho + 2 * k - 1))
    return sign * (head + tail) / speed


# ---------------------------------------------------------------------------
# Phase functions
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(eq=False)
class PhaseFunction:
    """Phase ``phi(x, xi) = x.xi + u(x, xi)`` for band ``k``.

    The same correction ``u`` serves both cones in one dimension; ``region``
    records the cone (and ``R``) on which the eikonal equation is certified.

    Attributes
    ----------
    evaluator : BandEvaluator
    k : int
    ext : SmoothExtension
    region : ConeRegion
    tol : float
        Eikonal tolerance.
    max_iter : int
    iterations : int
        Sweeps used on the sample set.
    residual_history : list of float
        Sup residual after each sweep.
    xi_spacing : float
        Step of the centered ``xi`` differences for ``grad_xi u``.
    """

    evaluator: BandEvaluator
    k: int
    ext: SmoothExtension
    region: ConeRegion
    tol: float = 1e-8
    max_iter: int = 40
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    xi_spacing: float = 2 * np.pi / 256
    xi_samples: Optional[np.ndarray] = None

    @property
    def d(self) -> int:
        return self.evaluator.d

    @property
    def R(self) -> float:
        return self.region.R

    @property
    def trivial(self) -> bool:
        return self.ext.is_zero

    @property
    def residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else 0.0

    def with_sign(self, sign: int) -> "PhaseFunction":
        """Same phase certified on the opposite cone (1D: identical function)."""
        reg = ConeRegion(self.k, self.R, self.region.epsilon, sign)
        return PhaseFunction(self.evaluator, self.k, self.ext, reg, self.tol, self.max_iter,
                             self.iterations, list(self.residual_history), self.xi_spacing, self.xi_samples)

    # -- pointwise gradient -----------------------------------------------------
    def _lam(self, xi):
        return self.evaluator.band(self.k, np.asarray(xi)[..., None])

    def _vel(self, xi):
        return self.evaluator.velocity(self.k, np.asarray(xi)[..., None])[..., 0]

    def _picard(self, y, xi, sweeps: Optional[int] = None, tol: float = 1e-14, limit: int = 200):
        """Iterate the gradient fixed point at broadcast ``(y, xi)`` (1D)."""
        y, xi = np.broadcast_arrays(np.asarray(y, float), np.asarray(xi, float))
        V = np.asarray(self.ext.value(y[..., None]))
        lam0 = self._lam(xi)
        v = self._vel(xi)
        w = np.zeros(y.shape)
        n_iter = sweeps or limit
        for it in range(n_iter):
            w_new = -(V + self._lam(xi + w) - lam0 - v * w) / v
            delta = np.max(np.abs(w_new - w)) if w.size else 0.0
            w = w_new
            if sweeps is None and delta <= tol * max(1.0, float(np.max(np.abs(w))) if w.size else 1.0):
                break
        else:
            if sweeps is None:
                raise PhaseError(f"gradient iteration did not converge (last update {delta:.3g})",
                                 residual=delta, iterations=n_iter)
        return w

    def _trivial_shape(self, x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        if self.d == 1 and x.ndim and x.shape[-1] == 1:
            x = x[..., 0]
        if self.d == 1 and xi.ndim and xi.shape[-1] == 1:
            xi = xi[..., 0]
        if self.d > 1:
            return np.broadcast_shapes(x.shape[:-1], xi.shape[:-1])
        return np.broadcast_shapes(x.shape, xi.shape)

    def grad_x(self, x, xi) -> np.ndarray:
        """``d_x u`` (1D: arrays broadcast; ``x`` may be scalar-shaped)."""
        if self.trivial:
            shape = self._trivial_shape(x, xi)
            return np.zeros(shape + ((self.d,) if self.d > 1 else ()))
        return self._picard(self._scalar(x), self._scalar(xi))

    def _scalar(self, a):
        a = np.asarray(a, dtype=float)
        if self.d == 1 and a.ndim >= 1 and a.shape[-1] == 1:
            return a[..., 0]
        if self.d > 1:
            raise NotImplementedError("point evaluation of nontrivial phases is implemented in one dimension")
        return a

    # -- values -----------------------------------------------------------------
    def u(self, x, xi) -> np.ndarray:
        """Correction ``u(x, xi)``, anchored at ``u(+-R, xi) = 0`` (0 for ``|x| < R``)."""
        if self.trivial:
            return np.zeros(self._trivial_shape(x, xi))
        x, xi = np.broadcast_arrays(self._scalar(x), self._scalar(xi))
        out = np.zeros(x.shape)
        anchor = np.sign(x) * self.R
        active = np.abs(x) > self.R
        if not np.any(active):
            return out
        xa, xia, aa = x[active], xi[active], anchor[active]
        length = xa - aa
        panels = np.ceil(np.abs(length)).astype(int)
        P = int(panels.max())
        j = np.arange(P)
        # panel endpoints from the anchor toward x, last panel truncated at x
        lo = aa[:, None] + np.sign(length)[:, None] * j[None, :]
        hi = aa[:, None] + np.sign(length)[:, None] * np.minimum(j[None, :] + 1, np.abs(length)[:, None])
        valid = j[None, :] < panels[:, None]
        hi = np.where(valid, hi, lo)
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        nodes = mid[..., None] + half[..., None] * _GL_NODES
        w = self._picard(nodes, xia[:, None, None])
        out[active] = np.sum(np.sum(w * _GL_WEIGHTS, axis=-1) * half, axis=-1)
        return out

    def phi(self, x, xi) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        if self.d == 1:
            return self._scalar(x) * self._scalar(xi) + self.u(x, xi)
        return np.sum(x * xi, axis=-1) + self.u(x, xi)

    def grad_xi(self, x, xi, h: Optional[float] = None) -> np.ndarray:
        """``d_xi u`` by centered differences with spacing ``h`` (default: grid spacing)."""
        h = h or self.xi_spacing
        if self.trivial:
            shape = self._trivial_shape(x, xi)
            return np.zeros(shape + ((self.d,) if self.d > 1 else ()))
        xi = self._scalar(xi)
        return (self.u(x, xi + h) - self.u(x, xi - h)) / (2 * h)

    def residual_at(self, x, xi) -> np.ndarray:
        """Eikonal residual ``|lambda_k(xi + d_x u) + V~(x) - lambda_k(xi)|``."""
        if self.trivial:
            return np.zeros(self._trivial_shape(x, xi))
        x, xi = np.broadcast_arrays(self._scalar(x), self._scalar(xi))
        w = self.grad_x(x, xi)
        return np.abs(self._lam(xi + w) + np.asarray(self.ext.value(x[..., None])) - self._lam(xi))

    def mixed_hessian_defect(self, x, xi, h: float = 1e-5) -> np.ndarray:
        """``|d_x d_xi phi - 1|`` by a centered ``xi`` difference of the exact ``d_x u``."""
        if self.trivial:
            return np.zeros(self._trivial_shape(x, xi))
        x, xi = np.broadcast_arrays(self._scalar(x), self._scalar(xi))
        return np.abs(self.grad_x(x, xi + h) - self.grad_x(x, xi - h)) / (2 * h)

    # -- lattice tables ------------------------------------------------------------
    def table(self, L: int, xis, chunk: int = 128) -> np.ndarray:
        """``u(x, xi)`` on the integer box ``x = -L..L`` for each ``xi``; shape ``(2L+1, K)``.

        Cumulative Gauss-Legendre sums over unit panels; exact agreement with
        :meth:`u` at integer points.
        """
        xis = np.asarray(xis, dtype=float).reshape(-1)
        out = np.zeros((2 * L + 1, xis.size))
        if self.trivial or xis.size == 0:
            return out
        if self.d != 1:
            raise NotImplementedError("lattice tables for nontrivial phases are implemented in one dimension")
        R = self.R
        start = int(np.ceil(R))
        if start > L:
            return out
        # first (possibly fractional) panel [R, start] then unit panels [j, j+1]
        edges = np.concatenate([[R] if start > R else [], np.arange(start, L + 1, dtype=float)])
        lo, hi = edges[:-1], edges[1:]
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        nodes = mid[:, None] + half[:, None] * _GL_NODES  # (P, 8)
        for s in range(0, xis.size, chunk):
            k = xis[s : s + chunk]
            for sgn in (1, -1):
                w = self._picard(sgn * nodes[:, :, None], k[None, None, :])
                seg = sgn * np.einsum("pqk,q->pk", w, _GL_WEIGHTS) * half[:, None]
                cum = np.cumsum(seg, axis=0)
                # values at integer points start..L (skip the fractional edge)
                vals = cum[-(L - start + 1):] if start > R else np.vstack([np.zeros((1, k.size)), cum])
                idx = L + sgn * np.arange(start, L + 1)
                out[idx, s : s + chunk] = vals
        return out

    def to_csv(self, path, xs, xis) -> None:
        """Write ``x, xi, u, d_x u, residual`` for every pair of samples."""
        X, K = np.meshgrid(np.asarray(xs, float), np.asarray(xis, float), indexing="ij")
        u = self.u(X, K)
        g = self.grad_x(X, K)
        r = self.residual_at(X, K)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x", "xi", "u", "grad_x_u", "residual"])
            for row in zip(X.ravel(), K.ravel(), u.ravel(), np.ravel(g), np.ravel(r)):
                wr.writerow([f"{v:.15g}" for v in row])

    def metadata(self) -> dict:
        return {"k": self.k, "R": self.R, "epsilon": self.region.epsilon, "sign": self.region.sign,
                "tol": self.tol, "iterations": self.iterations, "residual": self.residual}


def _xi_samples(ev: BandEvaluator, k: int, window: Optional[EnergyWindow], resolution: int,
                v_floor: float = 1e-3) -> np.ndarray:
    grid = TorusGrid(ev.d, resolution)
    xi = grid.points().reshape(-1, ev.d)
    lam = ev.band(k, xi)
    v = np.linalg.norm(ev.velocity(k, xi), axis=-1)
    keep = v > v_floor
    if window is not None:
        inside = np.zeros(lam.shape, dtype=bool)
        for a, b in window.enlarged:
            inside |= (lam >= a) & (lam <= b)
        keep &= inside
    return xi[keep]


def _sweep(phase: PhaseFunction, xs, xis, max_iter: int, tol: float):
    """Global Picard sweeps on the sample set; returns residual history."""
    X, K = np.meshgrid(xs, xis, indexing="ij")
    V = np.asarray(phase.ext.value(X[..., None]))
    lam0 = phase._lam(K)
    v = phase._vel(K)
    w = np.zeros(X.shape)
    history = []
    for it in range(1, max_iter + 1):
        w = -(V + phase._lam(K + w) - lam0 - v * w) / v
        # chart check: the shifted momentum must keep the group velocity's direction
        if np.any(np.sign(phase._vel(K + w)) != np.sign(v)):
            raise PhaseError("xi + grad_x u left the band chart", residual=np.inf, iterations=it)
        res = float(np.max(np.abs(phase._lam(K + w) + V - lam0)))
        history.append(res)
        if res < tol:
            return history, True
        if not np.isfinite(res):
            break
    return history, False


def solve_phase(ev: BandEvaluator, k: int, ext: SmoothExtension, region: Optional[ConeRegion] = None, *,
                window: Optional[EnergyWindow] = None, tol: float = 1e-8, max_iter: int = 40,
                resolution: Optional[int] = None, x_max: float = 320.0, auto_iter: int = 20,
                R_candidates: Sequence[float] = tuple(2.0**j for j in range(11))) -> PhaseFunction:
    """Construct the phase for band ``k`` by Picard iteration.

    Parameters
    ----------
    ev : BandEvaluator
    k : int
    ext : SmoothExtension
    region : ConeRegion, optional
        If omitted, ``R`` is chosen as the smallest of ``R_candidates`` for
        which the iteration converges within ``auto_iter`` sweeps.
    window : EnergyWindow, optional
        Restricts the ``xi`` samples to the enlarged window.
    tol, max_iter : float, int
        Eikonal tolerance and sweep limit.

    Raises
    ------
    PhaseError
        On non-convergence (with the last residual) or if ``xi + grad_x u``
        leaves the band chart.
    NotImplementedError
        For nonzero potentials in dimension ``d >= 2``.
    """
    M = resolution or default_resolution(ev.d)
    spacing = 2 * np.pi / M
    if ext.is_zero:
        reg = region or ConeRegion(k, R_candidates[0])
        return PhaseFunction(ev, k, ext, reg, tol, max_iter, 1, [0.0], spacing)
    if ev.d != 1:
        raise NotImplementedError("nonzero long-range phases are implemented for d = 1")
    xis = _xi_samples(ev, k, window, M)[:, 0]
    if xis.size == 0:
        raise PhaseError("no xi samples: the window does not meet band %d" % k)

    def attempt(R, limit):
        xs = np.concatenate([np.geomspace(R * (1 + 1e-9), max(x_max, 8 * R), 48)])
        xs = np.concatenate([xs, -xs])
        reg = region if region is not None else ConeRegion(k, R)
        phase = PhaseFunction(ev, k, ext, reg, tol, max_iter, 0, [], spacing, xis)
        history, ok = _sweep(phase, xs, xis, limit, tol)
        phase.iterations = len(history)
        phase.residual_history = history
        return phase, ok

    if region is not None:
        phase, ok = attempt(region.R, max_iter)
        if not ok:
            raise PhaseError(f"phase iteration did not converge in {max_iter} sweeps "
                             f"(last residual {phase.residual:.3g})", phase.residual, phase.iterations)
        return phase
    last = None
    for R in R_candidates:
        try:
            phase, ok = attempt(R, auto_iter)
        except PhaseError as exc:
            last = exc
            continue
        if ok:
            return phase
        last = PhaseError(f"R={R}: residual {phase.residual:.3g} after {auto_iter} sweeps", phase.residual, auto_iter)
    raise PhaseError(f"no R in {list(R_candidates)} gives convergence: {last}")


@dataclass
class PhaseReport:
    max_residual: float
    max_hessian_defect: float
    u_exponent: float
    grad_exponent: float
    u_target: float
    grad_target: float
    exponent_deviation: float
    worst_sample: dict
    passed: bool
    checks: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: (v if not isinstance(v, np.generic) else v.item()) for k, v in self.__dict__.items()}


def verify_phase(phase: PhaseFunction, xi_samples=None, x_range=None, n_radial: int = 16,
                 exponent_tol: float = 0.15, hessian_bound: float = 0.5, raise_on_failure: bool = False) -> PhaseReport:
    """Check residual, mixed Hessian and decay exponents of a phase.

    Exponents are fitted per ``xi`` sample along the radial line inside the
    phase's cone over ``|x|`` in ``x_range``; the reported exponent is the one
    deviating most from its target. ``u`` vanishes at ``|x| = R``, so the
    default range ``(max(20, 8R), 16 max(20, 8R))`` starts well beyond it.
    """
    rho = phase.ext.rho
    if x_range is None:
        start = max(20.0, 8.0 * phase.R)
        x_range = (start, 16.0 * start)
    if phase.trivial:
        report = PhaseReport(0.0, 0.0, float("nan"), float("nan"), 1 - rho, -rho, 0.0, {}, True,
                             {"residual": True, "hessian": True, "exponent": True})
        return report
    if xi_samples is None:
        if phase.xi_samples is None:
            raise ValueError("phase carries no sample set; pass xi_samples")
        xi_samples = phase.xi_samples[:: max(1, phase.xi_samples.size // 24)]
    xis = np.asarray(xi_samples, dtype=float).reshape(-1)
    radii = np.geomspace(x_range[0], x_range[1], n_radial)
    v = phase._vel(xis)
    X = phase.region.sign * np.sign(v)[None, :] * radii[:, None]  # inside the cone
    K = np.broadcast_to(xis[None, :], X.shape)
    res = phase.residual_at(X, K)
    hess = phase.mixed_hessian_defect(X, K)
    u = np.abs(phase.u(X, K))
    g = np.abs(phase.grad_x(X, K))
    w = np.sqrt(1 + radii**2)
    u_exp = np.array([fit_slope(w, u[:, j]) for j in range(xis.size)])
    g_exp = np.array([fit_slope(w, g[:, j]) for j in range(xis.size)])
    dev_u = np.abs(u_exp - (1 - rho))
    dev_g = np.abs(g_exp + rho)
    ju, jg = int(np.nanargmax(dev_u)), int(np.nanargmax(dev_g))
    worst = np.unravel_index(int(np.argmax(res)), res.shape)
    checks = {"residual": bool(res.max() < phase.tol), "hessian": bool(hess.max() < hessian_bound),
              "exponent": bool(max(dev_u[ju], dev_g[jg]) <= exponent_tol)}
    report = PhaseReport(
        max_residual=float(res.max()),
        max_hessian_defect=float(hess.max()),
        u_exponent=float(u_exp[ju]),
        grad_exponent=float(g_exp[jg]),
        u_target=1 - rho,
        grad_target=-rho,
        exponent_deviation=float(max(dev_u[ju], dev_g[jg])),
        worst_sample={"x": float(X[worst]), "xi": float(K[worst]), "residual": float(res[worst])},
        passed=all(checks.values()),
        checks=checks,
    )
    if raise_on_failure and not report.passed:
        failed = [k for k, ok in checks.items() if not ok]
        raise PhaseVerificationError(f"phase invariants failed: {failed}; worst sample {report.worst_sample}", report)
    return report


class EikonalPhase(BaseEstimator):
    """Estimator-style wrapper: ``EikonalPhase(k=0).fit(evaluator, ext, window)``.

    Attributes
    ----------
    phase_ : PhaseFunction
    report_ : PhaseReport
    """

    def __init__(self, k: int = 0, R: Optional[float] = None, tol: float = 1e-8, max_iter: int = 40,
                 resolution: Optional[int] = None):
        self.k = k
        self.R = R
        self.tol = tol
        self.max_iter = max_iter
        self.resolution = resolution

    def fit(self, evaluator: BandEvaluator, ext: SmoothExtension, window: Optional[EnergyWindow] = None):
        region = ConeRegion(self.k, self.R) if self.R is not None else None
        self.phase_ = solve_phase(evaluator, self.k, ext, region, window=window, tol=self.tol,
                                  max_iter=self.max_iter, resolution=self.resolution)
        self.report_ = verify_phase(self.phase_)
        return self
