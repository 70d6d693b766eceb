"""Log-log decay-order fits for defect tables."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FloorError

ABS_FLOOR = 1e-13


@dataclass(frozen=True)
class SlopeFit:
    """Least-squares fit ``log defect = slope * log h + intercept``.

    ``used`` flags the points that entered the fit; points at or below the
    numerical floor are excluded.  ``saturated`` is set when every point sits
    at the floor, in which case slope and intercept are ``inf`` / ``nan``.
    """

    slope: float
    intercept: float
    r_squared: float
    h_values: tuple
    defects: tuple
    used: tuple
    floor: tuple
    saturated: bool = False
    label: str = ""

    @property
    def h_range(self) -> tuple[float, float]:
        return (min(self.h_values), max(self.h_values))

    @property
    def floor_flag(self) -> bool:
        return not all(self.used)

    def passes(self, threshold: float) -> bool:
        return self.saturated or self.slope >= threshold

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "slope": _num(self.slope),
            "intercept": _num(self.intercept),
            "r_squared": _num(self.r_squared),
            "h_values": [float(h) for h in self.h_values],
            "defects": [float(d) for d in self.defects],
            "used": [bool(u) for u in self.used],
            "floor": [float(f) for f in self.floor],
            "saturated": bool(self.saturated),
        }


def _num(v: float):
    v = float(v)
    return v if np.isfinite(v) else str(v)


def slope_fit(h_values, defects, floor=None, *, min_points: int = 5, min_decades: float = 1.8,
              label: str = "") -> SlopeFit:
    """Fit the decay order of ``defects`` against ``h_values``.

    Parameters
    ----------
    h_values, defects : sequences of positive numbers of equal length.
    floor : scalar or per-point numerical floor; points with
        ``defect <= floor`` are dropped.  Defaults to an absolute ``1e-13``.
    min_points, min_decades : requirements on the h sweep.

    Raises
    ------
    ValueError
        on too few points, a too narrow h range, or negative defects.
    FloorError
        never; an all-floor table is returned with ``saturated=True``.
    """
    h = np.asarray(h_values, dtype=float)
    d = np.asarray(defects, dtype=float)
    if h.shape != d.shape or h.ndim != 1:
        raise ValueError("h_values and defects must be 1-D of equal length")
    if len(h) < min_points:
        raise ValueError(f"need at least {min_points} points, got {len(h)}")
    if np.any(h <= 0) or np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("h must be positive and defects finite and non-negative")
    span = np.log10(h.max() / h.min())
    if span < min_decades - 1e-9:
        raise ValueError(f"h range spans {span:.2f} decades, need {min_decades}")
    fl = np.broadcast_to(np.asarray(ABS_FLOOR if floor is None else floor, dtype=float), h.shape)
    used = d > fl
    common = dict(h_values=tuple(h.tolist()), defects=tuple(d.tolist()),
                  used=tuple(bool(u) for u in used), floor=tuple(fl.tolist()), label=label)
    if used.sum() < 2:
        return SlopeFit(float("inf"), float("nan"), float("nan"), saturated=True, **common)
    lx, ly = np.log(h[used]), np.log(d[used])
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ np.array([slope, intercept])
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit(float(slope), float(intercept), float(r2), **common)


def require_unsaturated(fit: SlopeFit):
    if fit.saturated:
        raise FloorError(f"all defects of '{fit.label}' sit at the numerical floor")
    return fit


def power_fit(x, y) -> tuple[float, float]:
    """Exponent and prefactor of ``y ~ C x**p`` by log-log least squares."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    p, c = np.polyfit(lx, ly, 1)
    return float(p), float(np.exp(c))
