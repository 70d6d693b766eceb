"""Sylvester equations ``K0 X - X K1 = Y`` and Riesz spectral projectors.

Two independent routes are provided: an eigenbasis formula (exact up to
rounding) and a resolvent contour integral over a rectangle, evaluated with
composite Gauss-Legendre quadrature.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContourError, GapError, QuadratureError

PANEL_NODES = 32
QUAD_RTOL = 1e-11
QUAD_CAP = 1024
HERMITIAN_TOL = 1e-10


def _check_hermitian(name: str, K: np.ndarray):
    scale = max(1.0, float(np.max(np.abs(K), initial=0.0)))
    if np.max(np.abs(K - K.conj().T), initial=0.0) > HERMITIAN_TOL * scale:
        raise ValueError(f"{name} is not Hermitian")


@dataclass(frozen=True)
class SylvesterProblem:
    """Data of ``K0 X - X K1 = Y`` with ``spec(K0)`` below ``spec(K1)``."""

    K0: np.ndarray
    K1: np.ndarray
    Y: np.ndarray
    delta: float

    def __post_init__(self):
        K0 = np.atleast_2d(np.asarray(self.K0, dtype=complex))
        K1 = np.atleast_2d(np.asarray(self.K1, dtype=complex))
        Y = np.atleast_2d(np.asarray(self.Y, dtype=complex))
        if K0.shape[0] != K0.shape[1] or K1.shape[0] != K1.shape[1]:
            raise ValueError("K0 and K1 must be square")
        if Y.shape != (K0.shape[0], K1.shape[0]):
            raise ValueError("Y has incompatible shape")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        object.__setattr__(self, "K0", K0)
        object.__setattr__(self, "K1", K1)
        object.__setattr__(self, "Y", Y)

    def residual(self, X: np.ndarray) -> float:
        return float(np.linalg.norm(self.K0 @ X - X @ self.K1 - self.Y, 2))


def _spectra(prob: SylvesterProblem):
    _check_hermitian("K0", prob.K0)
    _check_hermitian("K1", prob.K1)
    lam, V = np.linalg.eigh(prob.K0)
    mu, W = np.linalg.eigh(prob.K1)
    return lam, V, mu, W


def _check_separation(lam, mu, delta):
    # spec(K1) must stay outside [min spec(K0) - delta, max spec(K0) + delta]
    lo, hi = lam.min() - delta, lam.max() + delta
    tol = 1e-12 * max(1.0, float(np.max(np.abs(mu))))
    bad = mu[(mu > lo + tol) & (mu < hi - tol)]
    if bad.size:
        raise GapError(
            f"spectra not separated by delta={delta}: spec(K0) in [{lam.min():.6g}, {lam.max():.6g}], "
            f"spec(K1) has {bad[0]:.6g}")


def solve_sylvester_eigen(prob: SylvesterProblem) -> np.ndarray:
    """Solve in the eigenbases: ``X_ij = (v_i* Y w_j) / (lam_i - mu_j)``.

    Raises
    ------
    GapError
        if ``|lam_i - mu_j| < delta / 2`` for some pair.
    """
    lam, V, mu, W = _spectra(prob)
    diff = lam[:, None] - mu[None, :]
    if np.min(np.abs(diff)) < prob.delta / 2:
        raise GapError(f"eigenvalue pair closer than delta/2={prob.delta / 2}")
    core = (V.conj().T @ prob.Y @ W) / diff
    return V @ core @ W.conj().T


@dataclass(frozen=True)
class Contour:
    """Counterclockwise rectangle ``[a_left, a_right] x [-half_height, half_height]``.

    Each side is split into Gauss-Legendre panels no longer than
    ``panel_length`` (if given), so that eigenvalues at distance ``delta/2``
    from the boundary are resolved independently of the spectral scale.
    """

    a_left: float
    a_right: float
    half_height: float
    n_quad: int = 64
    panel_length: float | None = None

    def __post_init__(self):
        if not (self.a_right > self.a_left and self.half_height > 0):
            raise ContourError("degenerate rectangle")
        if self.n_quad < 1:
            raise ContourError("n_quad must be positive")
        if self.panel_length is not None and not self.panel_length > 0:
            raise ContourError("panel_length must be positive")

    @classmethod
    def around(cls, lo: float, hi: float, delta: float, n_quad: int = 64) -> "Contour":
        """Rectangle with margin ``delta/2`` around ``[lo, hi]``, half-height ``(hi - lo)/2 + delta``.

        The geometry scales with the data, and panels are at most ``delta`` long.
        """
        return cls(lo - delta / 2, hi + delta / 2, (hi - lo) / 2 + delta, n_quad, delta)

    def validate(self, inside, outside, delta: float):
        inside = np.atleast_1d(inside)
        outside = np.atleast_1d(outside)
        if inside.size and (inside.min() <= self.a_left or inside.max() >= self.a_right):
            raise ContourError("contour does not enclose the selected spectrum")
        for ev in outside:
            dist = max(self.a_left - ev, ev - self.a_right)
            if dist < delta / 2 - 1e-12:
                raise ContourError(f"excluded eigenvalue {ev:.6g} within delta/2 of the contour")

    def nodes(self, n_per_branch: int):
        """Quadrature nodes ``z`` and weights ``w`` (``w`` includes ``dz``).

        ``n_per_branch`` sets the node budget of the longest side; shorter
        panel limits can raise the count.
        """
        k = min(n_per_branch, PANEL_NODES)
        t, wt = np.polynomial.legendre.leggauss(k)
        a, b, c = self.a_left, self.a_right, self.half_height
        corners = [complex(a, -c), complex(b, -c), complex(b, c), complex(a, c), complex(a, -c)]
        zs, ws_all = [], []
        for p, q in zip(corners[:-1], corners[1:]):
            n_panels = max(1, -(-n_per_branch // PANEL_NODES))
            if self.panel_length is not None:
                n_panels = max(n_panels, int(np.ceil(abs(q - p) / self.panel_length)))
            edges = np.linspace(0.0, 1.0, n_panels + 1)
            s = ((edges[:-1] + edges[1:]) / 2)[:, None] + (np.diff(edges) / 2)[:, None] * t[None, :]
            ws = (np.diff(edges) / 2)[:, None] * wt[None, :]
            zs.append(p + (q - p) * s.ravel())
            ws_all.append((q - p) * ws.ravel())
        return np.concatenate(zs), np.concatenate(ws_all)


def _resolvents(K: np.ndarray, z: np.ndarray) -> np.ndarray:
    n = K.shape[0]
    eye = np.eye(n)
    mats = K[None, :, :] - z[:, None, None] * eye[None]
    return np.linalg.solve(mats, np.broadcast_to(eye, mats.shape))


def _refine(integrate, n0: int, scale: float):
    n = max(n0, 1)
    prev = integrate(n)
    while True:
        n_next = 2 * n
        if n_next > QUAD_CAP:
            raise QuadratureError(f"contour quadrature not converged at {n} nodes per branch")
        cur = integrate(n_next)
        if np.max(np.abs(cur - prev)) <= QUAD_RTOL * max(scale, np.max(np.abs(cur)), 1e-300):
            return cur
        prev, n = cur, n_next


def solve_sylvester_contour(prob: SylvesterProblem, contour: Contour | None = None,
                            n_quad: int = 64) -> np.ndarray:
    """Contour-integral solution of ``K0 X - X K1 = Y``.

    ``X = (1/2 pi i) * oint (K0 - z)^-1 Y (K1 - z)^-1 dz`` over a counterclockwise
    loop that encloses ``spec(K0)`` and excludes ``spec(K1)``.  Both matrices are
    shifted by a common constant so that ``spec(K0)`` starts at ``delta/2``; the
    solution does not depend on the shift.  The quadrature is refined by
    doubling from ``contour.n_quad`` nodes per branch.
    """
    lam, _, mu, _ = _spectra(prob)
    _check_separation(lam, mu, prob.delta)
    shift = lam.min() - prob.delta / 2
    K0 = prob.K0 - shift * np.eye(len(lam))
    K1 = prob.K1 - shift * np.eye(len(mu))
    lam, mu = lam - shift, mu - shift
    if contour is None:
        contour = Contour.around(lam.min(), lam.max(), prob.delta, n_quad)
    else:
        contour = Contour(contour.a_left - shift, contour.a_right - shift,
                          contour.half_height, contour.n_quad, contour.panel_length)
    contour.validate(lam, mu, prob.delta)
    Y = prob.Y
    if not np.any(Y):
        return np.zeros_like(Y)

    def integrate(n):
        z, w = contour.nodes(n)
        R0 = _resolvents(K0, z)
        R1 = _resolvents(K1, z)
        vals = R0 @ Y[None] @ R1
        return np.tensordot(w, vals, axes=(0, 0)) / (2j * np.pi)

    return _refine(integrate, contour.n_quad, float(np.max(np.abs(Y))) / max(prob.delta, 1e-300))


def riesz_projector(K: np.ndarray, window, delta: float, n_quad: int = 64) -> np.ndarray:
    """Spectral projector of a Hermitian ``K`` onto eigenvalues in ``window``.

    Computed as ``-(1/2 pi i) * oint (K - z)^-1 dz`` on a rectangle around the
    eigenvalues that fall in ``window``.
    """
    K = np.atleast_2d(np.asarray(K, dtype=complex))
    _check_hermitian("K", K)
    lo, hi = float(window[0]), float(window[1])
    ev = np.linalg.eigvalsh(K)
    inside = ev[(ev >= lo) & (ev <= hi)]
    outside = ev[(ev < lo) | (ev > hi)]
    n = K.shape[0]
    if inside.size == 0:
        return np.zeros((n, n), dtype=complex)
    if outside.size and np.min(np.abs(inside[:, None] - outside[None, :])) <= delta:
        raise GapError(f"eigenvalues in {window} not separated by delta={delta}")
    shift = inside.min() - delta / 2
    Ks = K - shift * np.eye(n)
    contour = Contour.around(inside.min() - shift, inside.max() - shift, delta, n_quad)
    contour.validate(inside - shift, outside - shift, delta)

    def integrate(m):
        z, w = contour.nodes(m)
        return -np.tensordot(w, _resolvents(Ks, z), axes=(0, 0)) / (2j * np.pi)

    P = _refine(integrate, n_quad, 1.0)
    return (P + P.conj().T) / 2


def solve_sylvester_batch(K0: np.ndarray, K1: np.ndarray, Y: np.ndarray, delta: float) -> np.ndarray:
    """Eigenbasis solve of many independent problems stacked on leading axes."""
    lam, V = np.linalg.eigh(K0)
    mu, W = np.linalg.eigh(K1)
    diff = lam[..., :, None] - mu[..., None, :]
    if np.min(np.abs(diff)) < delta / 2:
        raise GapError(f"eigenvalue pair closer than delta/2={delta / 2} in batch")
    core = (np.conj(np.swapaxes(V, -1, -2)) @ Y @ W) / diff
    return V @ core @ np.conj(np.swapaxes(W, -1, -2))


def solve_sylvester_contour_batch(K0: np.ndarray, K1: np.ndarray, Y: np.ndarray, delta: float,
                                  n_quad: int = 64) -> np.ndarray:
    """Contour solve node by node (reference route, slower than the eigen batch)."""
    lead = K0.shape[:-2]
    out = np.empty(Y.shape, dtype=complex)
    for idx in np.ndindex(*lead):
        prob = SylvesterProblem(K0[idx], K1[idx], Y[idx], delta)
        out[idx] = solve_sylvester_contour(prob, n_quad=n_quad)
    return out
