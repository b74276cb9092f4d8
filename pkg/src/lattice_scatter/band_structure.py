"""Band structure of the symbol ``H0(xi)`` on the torus.

The symbol is diagonalized node by node on a :class:`TorusGrid`. Bands are
ordered by sorting; eigenvalue clusters closer than ``gap_tol`` are treated
as one degenerate level and represented through their spectral projector,
never through individual eigenvectors, so no gauge choice leaks into the
results. Off-grid evaluations (Newton refinement, Fermi-surface secants,
the eikonal solver) go through :class:`BandEvaluator`, which works directly
from the hopping kernel.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize
from sklearn.base import BaseEstimator

from ._validation import check_intervals, check_positive_int
from .lattice_model import HoppingKernel, build_symbol

__all__ = [
    "TorusGrid",
    "BandEvaluator",
    "BandData",
    "compute_bands",
    "detect_thresholds",
    "FermiSurface",
    "fermi_surface",
    "spectral_filter",
    "EnergyWindow",
    "ThresholdError",
    "window_margin",
    "BandStructure",
    "default_resolution",
]


def default_resolution(d: int) -> int:
    """Default torus resolution: 256 points per axis in 1D, 128 otherwise."""
    return 256 if d == 1 else 128


class ThresholdError(ValueError):
    """An energy window touches (or contains) a threshold energy."""


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the torus ``[-pi, pi)^d``.

    Parameters
    ----------
    d : int
        Dimension.
    resolution : int
        Points per axis. Must be even for the standard grid.
    box_matched : bool, default False
        If true, use the grid matched to a lattice box of half-width ``L``:
        ``resolution = 2L + 1`` nodes ``2 pi m / (2L+1)``, ``m = -L..L``. This
        is the grid on which the discrete Fourier transform is exact.
    """

    d: int
    resolution: int
    box_matched: bool = False

    def __post_init__(self):
        check_positive_int(self.d, "d")
        check_positive_int(self.resolution, "resolution", minimum=2)
        if self.box_matched and self.resolution % 2 == 0:
            raise ValueError("a box-matched grid needs an odd resolution 2L+1")
        if not self.box_matched and self.resolution % 2:
            raise ValueError("torus grid resolution must be even")

    @classmethod
    def for_box(cls, d: int, L: int) -> "TorusGrid":
        return cls(d, 2 * L + 1, box_matched=True)

    @property
    def shape(self) -> tuple:
        return (self.resolution,) * self.d

    @property
    def spacing(self) -> float:
        return 2 * np.pi / self.resolution

    @property
    def size(self) -> int:
        return self.resolution**self.d

    def axis(self) -> np.ndarray:
        M = self.resolution
        if self.box_matched:
            L = (M - 1) // 2
            return 2 * np.pi * np.arange(-L, L + 1) / M
        return -np.pi + 2 * np.pi * np.arange(M) / M

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (d,)``."""
        ax = self.axis()
        return np.stack(np.meshgrid(*([ax] * self.d), indexing="ij"), axis=-1)


def _wrap(xi):
    return (np.asarray(xi) + np.pi) % (2 * np.pi) - np.pi


def _clusters(lam: np.ndarray, gap_tol: float):
    """Cluster labels for sorted eigenvalues along the last axis.

    Returns ``(head, label)``: ``head[..., k]`` is True when ``k`` starts a new
    cluster, ``label[..., k]`` is the index of the first band in ``k``'s
    cluster.
    """
    n = lam.shape[-1]
    head = np.ones(lam.shape, dtype=bool)
    if n > 1:
        head[..., 1:] = np.diff(lam, axis=-1) >= gap_tol
    idx = np.broadcast_to(np.arange(n), lam.shape)
    label = np.maximum.accumulate(np.where(head, idx, 0), axis=-1)
    return head, label


class BandEvaluator:
    """Evaluate bands, projectors and velocities of a kernel at arbitrary ``xi``.

    Parameters
    ----------
    kernel : HoppingKernel
    gap_tol : float, default 1e-6
        Eigenvalues closer than this are grouped into one level.
    """

    def __init__(self, kernel: HoppingKernel, gap_tol: float = 1e-6):
        self.kernel = kernel
        self.gap_tol = gap_tol

    @property
    def d(self) -> int:
        return self.kernel.d

    @property
    def n(self) -> int:
        return self.kernel.n

    def symbol(self, xi):
        return self.kernel.symbol_at(xi)

    def eigensystem(self, xi):
        """Sorted eigenvalues ``(..., n)`` and eigenvectors ``(..., n, n)``."""
        H = self.kernel.symbol_at(xi)
        if self.n == 1:
            return H[..., 0].real, np.ones(H.shape, dtype=complex)
        lam, vec = np.linalg.eigh(H)
        return lam, vec

    def bands(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if self.n == 1:
            return self.kernel.symbol_at(xi)[..., 0, 0].real[..., None]
        return np.linalg.eigvalsh(self.kernel.symbol_at(xi))

    def band(self, k: int, xi) -> np.ndarray:
        return self.bands(xi)[..., k]

    def full(self, xi):
        """Eigenvalues, projectors, velocities and degeneracy flags at ``xi``.

        Returns
        -------
        lam : (..., n)
        proj : (..., n, n, n)
            ``proj[..., k, :, :]`` projects onto the eigenvalue cluster that
            contains ``lam[..., k]``.
        vel : (..., n, d)
            ``trace(P dH P) / rank(P)`` per band.
        degenerate : (..., n) bool
        """
        xi = np.asarray(xi, dtype=float)
        dH = self.kernel.symbol_gradient(xi)  # (..., d, n, n)
        lam, vec = self.eigensystem(xi)
        n = self.n
        if n == 1:
            proj = np.ones(lam.shape + (1, 1), dtype=complex)
            vel = dH[..., :, 0, 0].real[..., None, :]
            return lam, proj, vel, np.zeros(lam.shape, dtype=bool)
        head, label = _clusters(lam, self.gap_tol)
        # rank-one pieces v_j v_j^*
        pieces = vec.swapaxes(-1, -2)[..., :, :, None] * vec.swapaxes(-1, -2).conj()[..., :, None, :]
        # diagonal velocity matrix elements <v_j, dH v_j>
        diag = np.einsum("...aj,...dab,...bj->...jd", vec.conj(), dH, vec).real
        proj = np.zeros(lam.shape + (n, n), dtype=complex)
        vel = np.zeros(lam.shape + (self.d,))
        rank = np.zeros(lam.shape)
        for k in range(n):
            member = label == label[..., k : k + 1]  # (..., n): bands in k's cluster
            proj[..., k, :, :] = np.einsum("...j,...jab->...ab", member, pieces)
            rank[..., k] = member.sum(-1)
            vel[..., k, :] = np.einsum("...j,...jd->...d", member, diag) / rank[..., k, None]
        return lam, proj, vel, rank > 1

    def velocity(self, k: int, xi) -> np.ndarray:
        """Group velocity ``grad lambda_k`` at ``xi``; shape ``(..., d)``."""
        xi = np.asarray(xi, dtype=float)
        if self.n == 1:
            return self.kernel.symbol_gradient(xi)[..., :, 0, 0].real
        return self.full(xi)[2][..., k, :]

    def projector(self, k: int, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if self.n == 1:
            return np.ones(xi.shape[:-1] + (1, 1), dtype=complex)
        return self.full(xi)[1][..., k, :, :]

    def gap(self, k: int, xi) -> np.ndarray:
        """``lambda_{k+1} - lambda_k`` at ``xi``."""
        lam = self.bands(xi)
        return lam[..., k + 1] - lam[..., k]


@dataclass(frozen=True, eq=False)
class BandData:
    """Band structure sampled on a torus grid.

    Attributes
    ----------
    grid : TorusGrid
    lambdas : ndarray, ``grid.shape + (n,)``
        Sorted eigenvalues.
    projectors : ndarray, ``grid.shape + (n, n, n)``
    velocities : ndarray, ``grid.shape + (n, d)``
    degenerate : ndarray of bool, ``grid.shape + (n,)``
    evaluator : BandEvaluator
        Off-grid evaluation of the same symbol.
    """

    grid: TorusGrid
    lambdas: np.ndarray
    projectors: np.ndarray
    velocities: np.ndarray
    degenerate: np.ndarray
    evaluator: BandEvaluator

    @property
    def n(self) -> int:
        return self.lambdas.shape[-1]

    @property
    def d(self) -> int:
        return self.grid.d

    @property
    def speeds(self) -> np.ndarray:
        return np.linalg.norm(self.velocities, axis=-1)

    def spectrum_range(self) -> tuple[float, float]:
        return float(self.lambdas.min()), float(self.lambdas.max())

    def heads(self) -> np.ndarray:
        """True where a band starts a new eigenvalue cluster."""
        return _clusters(self.lambdas, self.evaluator.gap_tol)[0]

    def check_invariants(self, atol: float = 1e-10) -> dict:
        """Measure projector, eigen-equation, resolution-of-identity and velocity errors."""
        H = self.evaluator.symbol(self.grid.points())
        P = self.projectors
        lam = self.lambdas
        idem = np.max(np.abs(P @ P - P))
        herm = np.max(np.abs(P - np.conj(np.swapaxes(P, -1, -2))))
        eig = np.max(np.abs(H[..., None, :, :] @ P - lam[..., None, None] * P))
        heads = self.heads()
        ident = np.max(np.abs(np.einsum("...k,...kab->...ab", heads, P) - np.eye(self.n)))
        return {"idempotency": float(idem), "hermiticity": float(herm),
                "eigen_equation": float(eig), "resolution_of_identity": float(ident),
                "velocity_fd": self.velocity_fd_error()}

    def velocity_fd_error(self) -> float:
        """Max difference between velocities and centered grid differences.

        Nodes where the band or either neighbor is flagged degenerate are
        skipped.
        """
        h = self.grid.spacing
        worst = 0.0
        # bands are only smooth away from (near-)touchings: skip nodes whose gap
        # to an adjacent band is within a few grid cells of closing
        near = self.degenerate.copy()
        if self.n > 1:
            gaps = np.diff(self.lambdas, axis=-1)
            vmax = float(self.speeds.max())
            small = gaps < 4 * h * vmax
            near[..., :-1] |= small
            near[..., 1:] |= small
        for j in range(self.d):
            fwd = np.roll(self.lambdas, -1, axis=j)
            bwd = np.roll(self.lambdas, 1, axis=j)
            fd = (fwd - bwd) / (2 * h)
            ok = ~(near | np.roll(near, -1, axis=j) | np.roll(near, 1, axis=j))
            err = np.abs(fd - self.velocities[..., j])[ok]
            if err.size:
                worst = max(worst, float(err.max()))
        return worst

    def to_csv(self, path) -> None:
        """Write one row per node and band: xi components, k, lambda, |grad lambda|, degenerate."""
        pts = self.grid.points().reshape(-1, self.d)
        lam = self.lambdas.reshape(-1, self.n)
        spd = self.speeds.reshape(-1, self.n)
        deg = self.degenerate.reshape(-1, self.n)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"xi{j + 1}" for j in range(self.d)] + ["k", "lambda", "speed", "degenerate"])
            for p in range(pts.shape[0]):
                for k in range(self.n):
                    w.writerow([f"{v:.12g}" for v in pts[p]] + [k, f"{lam[p, k]:.15g}", f"{spd[p, k]:.12g}", int(deg[p, k])])


def _kernel_from_samples(symbol: np.ndarray, grid: TorusGrid, tol: float = 1e-13) -> HoppingKernel:
    """Recover the hopping kernel of a trigonometric-polynomial symbol from samples."""
    d = grid.d
    n = symbol.shape[-1]
    M = grid.resolution
    axes = tuple(range(d))
    samples = np.fft.ifftshift(symbol, axes=axes) if grid.box_matched else symbol
    coef = np.fft.ifftn(samples, axes=axes)
    freqs = np.fft.fftfreq(M, 1.0 / M).astype(int)
    entries = {}
    grids = np.meshgrid(*([freqs] * d), indexing="ij")
    offs = np.stack([g.ravel() for g in grids], axis=-1)
    flat = coef.reshape(-1, n, n)
    scale = max(np.max(np.abs(flat)), 1e-300)
    for off, mat in zip(offs, flat):
        if np.max(np.abs(mat)) <= tol * scale:
            continue
        x = tuple(int(v) for v in off)
        if grid.box_matched:
            m = mat
        else:
            # nodes start at -pi: samples carry an extra (-1)^{x_1+...+x_d}
            m = mat * (-1) ** (sum(x) % 2)
        entries[x] = m
    return HoppingKernel(d, n, entries, name="sampled")


def compute_bands(symbol, grid: TorusGrid, *, kernel: Optional[HoppingKernel] = None,
                  gap_tol: float = 1e-6) -> BandData:
    """Diagonalize the symbol field at every node of ``grid``.

    Parameters
    ----------
    symbol : ndarray, ``grid.shape + (n, n)``, or HoppingKernel
        Sampled Hermitian symbol. A kernel may be passed directly.
    grid : TorusGrid
    kernel : HoppingKernel, optional
        Exact kernel for off-grid evaluation and termwise velocity
        differentiation. If omitted it is recovered from the samples (exact for
        trigonometric polynomials resolved by the grid).
    gap_tol : float
        Eigenvalue clustering tolerance.
    """
    if isinstance(symbol, HoppingKernel):
        kernel = symbol
        symbol = build_symbol(kernel, grid)
    symbol = np.asarray(symbol, dtype=complex)
    if symbol.shape[: grid.d] != grid.shape:
        raise ValueError(f"symbol shape {symbol.shape} does not match grid {grid.shape}")
    if kernel is None:
        kernel = _kernel_from_samples(symbol, grid)
    ev = BandEvaluator(kernel, gap_tol)
    lam, proj, vel, deg = ev.full(grid.points())
    for arr in (lam, proj, vel, deg):
        arr.setflags(write=False)
    return BandData(grid, lam, proj, vel, deg, ev)


# ---------------------------------------------------------------------------
# Thresholds
# ---------------------------------------------------------------------------


def _neighbor_offsets(d):
    offs = np.array(np.meshgrid(*([[-1, 0, 1]] * d), indexing="ij")).reshape(d, -1).T
    return [tuple(o) for o in offs if any(o)]


def _local_minima(field: np.ndarray, d: int) -> np.ndarray:
    mask = np.ones(field.shape, dtype=bool)
    for off in _neighbor_offsets(d):
        mask &= field <= np.roll(field, off, axis=tuple(range(d)))
    return mask


def _newton_critical(ev: BandEvaluator, k: int, xi0: np.ndarray, h_grid: float,
                     tol: float = 1e-12, max_iter: int = 60, fd_step: float = 1e-5):
    """Vectorized Newton iteration for ``grad lambda_k = 0`` from ``xi0`` (P, d)."""
    d = xi0.shape[1]
    xi = xi0.copy()
    for _ in range(max_iter):
        g = ev.velocity(k, xi)
        if np.all(np.linalg.norm(g, axis=1) < tol):
            break
        hess = np.empty((xi.shape[0], d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = fd_step
            hess[:, :, j] = (ev.velocity(k, xi + e) - ev.velocity(k, xi - e)) / (2 * fd_step)
        hess = 0.5 * (hess + hess.swapaxes(1, 2))
        step = (np.linalg.pinv(hess) @ g[..., None])[..., 0]
        # damp steps that leave the starting cell neighbourhood
        norm = np.linalg.norm(step, axis=1, keepdims=True)
        step = np.where(norm > 2 * h_grid, step * (2 * h_grid) / np.maximum(norm, 1e-300), step)
        xi = xi - step
    g = np.linalg.norm(ev.velocity(k, xi), axis=1)
    return xi, g


def detect_thresholds(bands: BandData, tol: float = 1e-6, tol_E: float = 1e-6,
                      newton_tol: float = 1e-12) -> np.ndarray:
    """Threshold energies: critical values and band-crossing energies.

    Candidates are grid nodes where ``|grad lambda_k|`` is below ``tol`` or is
    a local minimum over neighbouring nodes; each is refined by Newton's
    method on ``grad lambda_k = 0`` (Hessian by finite differences of the
    exact velocity). Band crossings are local minima of the gap to the next
    band that branch (their neighbours are non-degenerate); they are refined
    by minimizing the gap. Energies are deduplicated within ``tol_E``.

    Returns
    -------
    ndarray
        Sorted threshold energies.
    """
    ev = bands.evaluator
    d, n = bands.d, bands.n
    h = bands.grid.spacing
    pts = bands.grid.points()
    energies: list = []
    dH_scale = float(np.max(np.abs(ev.kernel.offsets)) * np.sum(np.abs(ev.kernel.matrices)))

    speeds = bands.speeds
    for k in range(n):
        spd = speeds[..., k]
        lam_k = bands.lambdas[..., k]
        flat = spd < tol
        energies.extend(lam_k[flat & ~bands.degenerate[..., k]].tolist())
        cand = _local_minima(spd, d) & ~flat & ~bands.degenerate[..., k]
        if np.any(cand):
            xi, g = _newton_critical(ev, k, pts[cand], h, tol=newton_tol)
            ok = g < max(newton_tol * 1e3, 1e-9)
            if np.any(ok):
                # reject solutions that ran into a degenerate point
                if n > 1:
                    lam_all = ev.bands(xi[ok])
                    gaps = np.full(lam_all.shape[0], np.inf)
                    if k > 0:
                        gaps = np.minimum(gaps, lam_all[:, k] - lam_all[:, k - 1])
                    if k < n - 1:
                        gaps = np.minimum(gaps, lam_all[:, k + 1] - lam_all[:, k])
                    energies.extend(lam_all[gaps >= ev.gap_tol, k].tolist())
                else:
                    energies.extend(ev.band(k, xi[ok]).tolist())

    # band crossings
    for k in range(n - 1):
        gap = bands.lambdas[..., k + 1] - bands.lambdas[..., k]
        small = gap < 4 * h * dH_scale
        cand = _local_minima(gap, d) & small
        # persistent (non-branching) degeneracy: every neighbour degenerate too
        persistent = gap < ev.gap_tol
        for off in _neighbor_offsets(d):
            persistent &= np.roll(gap, off, axis=tuple(range(d))) < ev.gap_tol
        cand &= ~persistent
        for xi0 in pts[cand]:
            res = optimize.minimize(lambda z: float(ev.gap(k, z)), xi0, method="Nelder-Mead",
                                    options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
            if res.fun < ev.gap_tol:
                lam = ev.bands(res.x)
                energies.append(0.5 * (lam[k] + lam[k + 1]))

    if not energies:
        return np.array([])
    e = np.sort(np.asarray(energies))
    groups = [[e[0]]]
    for v in e[1:]:
        if v - groups[-1][-1] <= tol_E:
            groups[-1].append(v)
        else:
            groups.append([v])
    return np.array([np.median(g) for g in groups])


# ---------------------------------------------------------------------------
# Fermi surfaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FermiSurface:
    """Sampled level set ``{xi : lambda_k(xi) = energy}``."""

    energy: float
    points: np.ndarray  # (P, d)
    band: np.ndarray  # (P,)
    speed: np.ndarray  # (P,)

    def __len__(self):
        return self.points.shape[0]

    def to_csv(self, path) -> None:
        d = self.points.shape[1] if self.points.ndim == 2 else 1
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"xi{j + 1}" for j in range(d)] + ["k", "speed"])
            for p, k, s in zip(self.points, self.band, self.speed):
                w.writerow([f"{v:.15g}" for v in p] + [int(k), f"{s:.12g}"])


def fermi_surface(bands: BandData, energy: float, tol: float = 1e-13, max_iter: int = 100) -> FermiSurface:
    """Locate ``lambda_k(xi) = energy`` along grid edges.

    Every edge whose endpoints fall on opposite sides of the level is refined
    by a safeguarded secant (Illinois) iteration on the exact band function.
    An energy outside the spectrum gives an empty surface.
    """
    ev = bands.evaluator
    d = bands.d
    h = bands.grid.spacing
    pts = bands.grid.points()
    out_pts, out_k = [], []
    for k in range(bands.n):
        f = bands.lambdas[..., k] - energy
        pos = f >= 0
        for j in range(d):
            nxt = np.roll(pos, -1, axis=j)
            edge = pos != nxt
            if not np.any(edge):
                continue
            start = pts[edge]
            e = np.zeros(d)
            e[j] = h
            a = np.zeros(start.shape[0])
            b = np.ones(start.shape[0])
            fa = f[edge]
            fb = np.roll(f, -1, axis=j)[edge]
            side = np.zeros(start.shape[0], dtype=int)
            for _ in range(max_iter):
                s = np.where(fb != fa, (a * fb - b * fa) / np.where(fb != fa, fb - fa, 1.0), 0.5 * (a + b))
                fs = ev.band(k, start + s[:, None] * e) - energy
                left = np.sign(fs) == np.sign(fa)
                # Illinois modification keeps the bracket shrinking on both sides
                a = np.where(left, s, a)
                fa_new = np.where(left, fs, fa)
                b = np.where(left, b, s)
                fb_new = np.where(left, fb, fs)
                fb_new = np.where(left & (side == 1), fb_new * 0.5, fb_new)
                fa_new = np.where(~left & (side == -1), fa_new * 0.5, fa_new)
                side = np.where(left, 1, -1)
                fa, fb = fa_new, fb_new
                if np.all(np.abs(fs) < tol) or np.all(np.abs(b - a) < 1e-15):
                    break
            s = np.where(np.abs(fa) < np.abs(fb), a, b)
            out_pts.append(_wrap(start + s[:, None] * e))
            out_k.append(np.full(start.shape[0], k))
    if not out_pts:
        return FermiSurface(float(energy), np.zeros((0, d)), np.zeros(0, int), np.zeros(0))
    P = np.concatenate(out_pts)
    K = np.concatenate(out_k)
    speed = np.array([np.linalg.norm(ev.velocity(int(k), p[None])[0]) for p, k in zip(P, K)]) if bands.n > 1 \
        else np.linalg.norm(ev.velocity(0, P), axis=-1)
    return FermiSurface(float(energy), P, K, speed)


# ---------------------------------------------------------------------------
# Spectral filters and energy windows
# ---------------------------------------------------------------------------


def spectral_filter(bands: BandData, psi: Callable, thresholds: Optional[Sequence[float]] = None) -> np.ndarray:
    """Matrix field ``sum_k P_k(xi) psi(lambda_k(xi))`` over distinct eigenvalue clusters.

    Parameters
    ----------
    bands : BandData
    psi : callable
        Vectorized real function of energy.
    thresholds : sequence of float, optional
        If given, ``psi`` must vanish at every threshold.

    Raises
    ------
    ThresholdError
        If ``psi`` does not vanish at a threshold.
    """
    if thresholds is not None:
        vals = np.asarray(psi(np.asarray(thresholds, dtype=float)))
        if np.any(np.abs(vals) > 0):
            bad = np.asarray(thresholds)[np.abs(vals) > 0]
            raise ThresholdError(f"filter support touches threshold(s) {bad.tolist()}")
    heads = bands.heads()
    weights = np.where(heads, psi(bands.lambdas), 0.0)
    return np.einsum("...k,...kab->...ab", weights, bands.projectors)


@dataclass(frozen=True)
class EnergyWindow:
    """Non-threshold energy window.

    Attributes
    ----------
    intervals : tuple of (a, b)
        The window ``Gamma`` (union of open intervals).
    margin : float
        Distance from the closure of ``Gamma`` to the nearest threshold.
    enlarged : tuple of (a, b)
        The intermediate window ``I``: each interval widened by ``margin/2``.
    v_min : float
        Smallest group speed over the Fermi variety of the closure of ``Gamma``.
    thresholds : tuple of float
    """

    intervals: tuple
    margin: float
    enlarged: tuple
    v_min: float
    thresholds: tuple = field(default=())

    @property
    def lo(self) -> float:
        return self.intervals[0][0]

    @property
    def hi(self) -> float:
        return self.intervals[-1][1]

    def contains(self, energy) -> np.ndarray:
        energy = np.asarray(energy, dtype=float)
        out = np.zeros(energy.shape, dtype=bool)
        for a, b in self.intervals:
            out |= (energy > a) & (energy < b)
        return out

    def to_dict(self) -> dict:
        return {"intervals": [list(i) for i in self.intervals], "margin": self.margin,
                "enlarged": [list(i) for i in self.enlarged], "v_min": self.v_min,
                "thresholds": list(self.thresholds)}


def window_margin(bands: BandData, gamma, thresholds: Optional[Sequence[float]] = None) -> EnergyWindow:
    """Validate an energy window against thresholds and measure its margin.

    Parameters
    ----------
    bands : BandData
    gamma : (a, b) or list of (a, b)
    thresholds : sequence of float, optional
        Computed with :func:`detect_thresholds` if omitted.

    Raises
    ------
    ThresholdError
        If the closure of ``gamma`` contains a threshold.
    """
    intervals = check_intervals(gamma, "gamma")
    if thresholds is None:
        thresholds = detect_thresholds(bands)
    thr = np.asarray(thresholds, dtype=float)
    margin = np.inf
    for a, b in intervals:
        inside = thr[(thr >= a) & (thr <= b)]
        if inside.size:
            raise ThresholdError(f"window ({a}, {b}) contains threshold(s) {inside.tolist()}")
        if thr.size:
            margin = min(margin, float(np.min(np.minimum(np.abs(thr - a), np.abs(thr - b)))))
    enlarged = tuple((a - margin / 2, b + margin / 2) for a, b in intervals)

    v_min = np.inf
    speeds = bands.speeds
    for a, b in intervals:
        inside = (bands.lambdas >= a) & (bands.lambdas <= b)
        if np.any(inside):
            v_min = min(v_min, float(speeds[inside].min()))
        for endpoint in (a, b):
            fs = fermi_surface(bands, endpoint)
            if len(fs):
                v_min = min(v_min, float(fs.speed.min()))
    return EnergyWindow(intervals, float(margin), enlarged, float(v_min), tuple(float(t) for t in thr))


class BandStructure(BaseEstimator):
    """Estimator-style front end: ``BandStructure().fit(kernel)``.

    Parameters
    ----------
    resolution : int, optional
        Torus points per axis; defaults to 256 in 1D and 128 otherwise.
    gap_tol : float, default 1e-6
    threshold_tol : float, default 1e-6

    Attributes
    ----------
    grid_ : TorusGrid
    bands_ : BandData
    thresholds_ : ndarray
    """

    def __init__(self, resolution: Optional[int] = None, gap_tol: float = 1e-6, threshold_tol: float = 1e-6):
        self.resolution = resolution
        self.gap_tol = gap_tol
        self.threshold_tol = threshold_tol

    def fit(self, kernel: HoppingKernel, y=None):
        M = self.resolution or default_resolution(kernel.d)
        self.grid_ = TorusGrid(kernel.d, M)
        self.bands_ = compute_bands(build_symbol(kernel, self.grid_), self.grid_, kernel=kernel, gap_tol=self.gap_tol)
        self.thresholds_ = detect_thresholds(self.bands_, tol=self.threshold_tol, tol_E=self.threshold_tol)
        return self

    def window(self, gamma) -> EnergyWindow:
        """Validated :class:`EnergyWindow` for ``gamma`` using the fitted thresholds."""
        return window_margin(self.bands_, gamma, self.thresholds_)
