"""Spectral comparisons, quasimode residuals and functional-calculus checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .fitting import SlopeFit, slope_fit
from .quantize import QuantizedOperator


@dataclass
class SpectrumReport:
    """Index-matched eigenvalues of two operator families over an h sweep."""

    h_values: list
    full: list
    effective: list
    windows: list
    count_mismatch: list
    metadata: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)

    @property
    def differences(self) -> list:
        out = []
        for f, e in zip(self.full, self.effective):
            n = min(len(f), len(e))
            out.append(np.abs(np.asarray(f[:n]) - np.asarray(e[:n])))
        return out

    def max_differences(self) -> np.ndarray:
        return np.array([d.max() if d.size else np.nan for d in self.differences])

    def monotone_below(self) -> float | None:
        """Largest h below which the maximal paired difference decreases with h."""
        h = np.asarray(self.h_values)
        d = self.max_differences()
        order = np.argsort(h)
        h, d = h[order], d[order]
        thresh = None
        for k in range(1, len(h)):
            if d[k] <= d[k - 1]:
                thresh = thresh if thresh is not None else h[k - 1]
                break
            thresh = h[k]
        return float(thresh) if thresh is not None else None

    def to_dict(self) -> dict:
        return {
            "h_values": [float(h) for h in self.h_values],
            "full": [[float(np.real(v)) for v in f] for f in self.full],
            "effective": [[float(np.real(v)) for v in e] for e in self.effective],
            "windows": [[float(a), float(b)] for a, b in self.windows],
            "count_mismatch": [bool(c) for c in self.count_mismatch],
            "max_difference": [float(v) for v in self.max_differences()],
            "fits": {k: v.to_dict() for k, v in self.fits.items()},
            "metadata": self.metadata,
        }


def compare_spectra(h_values: Sequence[float], full_eigs: Sequence, eff_eigs: Sequence,
                    window: Callable[[float], tuple[float, float]], *,
                    metadata: dict | None = None, **fit_kw) -> SpectrumReport:
    """Pair sorted eigenvalues inside ``window(h)`` and fit the decay of their differences.

    A count mismatch in the window is recorded and the comparison continues
    with the smaller count.
    """
    fulls, effs, wins, mism = [], [], [], []
    for h, f, e in zip(h_values, full_eigs, eff_eigs):
        lo, hi = window(h)
        f = np.sort(np.real(np.asarray(f)))
        e = np.sort(np.real(np.asarray(e)))
        f = f[(f >= lo) & (f <= hi)]
        e = e[(e >= lo) & (e <= hi)]
        mism.append(len(f) != len(e))
        n = min(len(f), len(e))
        fulls.append(f[:n])
        effs.append(e[:n])
        wins.append((lo, hi))
    rep = SpectrumReport(list(h_values), fulls, effs, wins, mism, dict(metadata or {}))
    d = rep.max_differences()
    if np.all(np.isfinite(d)):
        rep.fits["eigenvalue_difference"] = slope_fit(h_values, d, label="eigenvalue_difference",
                                                      **fit_kw)
    return rep


def quasimode_residual(op, psi: np.ndarray, mu: complex) -> float:
    """``||(op - mu) psi|| / ||psi||``."""
    M = op.matrix if isinstance(op, QuantizedOperator) else np.asarray(op)
    psi = np.asarray(psi)
    nrm = np.linalg.norm(psi)
    if nrm == 0:
        raise ValueError("zero vector")
    return float(np.linalg.norm(M @ psi - mu * psi) / nrm)


def smooth_bump(lo: float, hi: float) -> Callable[[np.ndarray], np.ndarray]:
    """``C^inf`` profile equal to 1 at the centre of ``(lo, hi)`` and 0 outside."""
    if not hi > lo:
        raise ValueError("empty support")
    c, r = (lo + hi) / 2, (hi - lo) / 2

    def chi(t):
        s = (np.asarray(t, float) - c) / r
        out = np.zeros_like(s)
        inside = np.abs(s) < 1
        out[inside] = np.exp(1 - 1 / (1 - s[inside] ** 2))
        return out

    chi.support = (lo, hi)
    return chi


def _lowrank_norm(B: np.ndarray, C: np.ndarray) -> float:
    """Spectral norm of ``B @ C`` for tall ``B`` and wide ``C``."""
    _, Rb = np.linalg.qr(B)
    _, Rc = np.linalg.qr(C.conj().T)
    return float(np.linalg.norm(Rb @ Rc.conj().T, 2))


@dataclass(frozen=True)
class FunctionalCalculusDefects:
    commutator: float
    range_inclusion: float | None
    rank: int


def functional_calculus_defects(eigvals: np.ndarray, eigvecs: np.ndarray, Pi: np.ndarray,
                                chi: Callable, *, range_check: bool = True) -> FunctionalCalculusDefects:
    """``||[chi(H), Pi]||`` and ``||Pi chi(H) - chi(H)||`` from the eigenpairs in supp chi.

    ``eigvecs`` must contain (at least) every eigenvector whose eigenvalue lies
    in the support of ``chi``; ``chi(H) = V diag(chi(lambda)) V*`` is then exact.
    """
    w = np.asarray(eigvals)
    c = chi(np.real(w))
    keep = c != 0
    V = eigvecs[:, keep]
    c = c[keep]
    if V.shape[1] == 0:
        return FunctionalCalculusDefects(0.0, 0.0 if range_check else None, 0)
    PV = Pi @ V
    VhP = V.conj().T @ Pi
    B = np.hstack([V, PV])
    C = np.vstack([c[:, None] * VhP, -c[:, None] * V.conj().T])
    comm = _lowrank_norm(B, C)
    rng = None
    if range_check:
        rng = float(np.linalg.norm((PV - V) * c[None, :], 2))
    return FunctionalCalculusDefects(comm, rng, int(V.shape[1]))


def functional_calculus_check(h_values: Sequence[float], defects: Sequence[FunctionalCalculusDefects],
                              **fit_kw) -> tuple[SlopeFit, SlopeFit | None]:
    """Decay slopes of the commutator and range-inclusion defects over an h sweep."""
    comm = slope_fit(h_values, [d.commutator for d in defects], label="chi_commutator", **fit_kw)
    if any(d.range_inclusion is None for d in defects):
        return comm, None
    rng = slope_fit(h_values, [d.range_inclusion for d in defects], label="chi_range", **fit_kw)
    return comm, rng


def exact_projector_check(H: np.ndarray, window, chi: Callable) -> FunctionalCalculusDefects:
    """Functional-calculus defects against the exact spectral projector of ``H`` (should vanish)."""
    w, V = sla.eigh(H)
    sel = (w >= window[0]) & (w <= window[1])
    P = V[:, sel] @ V[:, sel].conj().T
    return functional_calculus_defects(w, V, P, chi)
