"""Time series of navigation states shared by the truth, INS, and filter paths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geomag import EARTH_RADIUS_M


@dataclass
class PoseSeries:
    """Sampled position/velocity/attitude history on a common time base.

    Attitude quaternions are body-to-NED, shape (N, 4). Latitude/longitude in
    radians, altitude in meters, velocity in m/s (NED).
    """

    t: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    alt: np.ndarray
    vn: np.ndarray
    ve: np.ndarray
    vd: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        n = self.t.shape[0]
        for name in ("lat", "lon", "alt", "vn", "ve", "vd"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
        if self.q.shape != (n, 4):
            raise ValueError(f"q must have shape ({n}, 4)")

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def speed(self) -> np.ndarray:
        return np.sqrt(self.vn**2 + self.ve**2 + self.vd**2)

    def path_length_m(self) -> float:
        """Horizontal ground distance along the series."""
        dn = np.diff(self.lat) * EARTH_RADIUS_M
        de = np.diff(self.lon) * EARTH_RADIUS_M * np.cos(self.lat[:-1])
        return float(np.sum(np.hypot(dn, de)))


def horizontal_error_m(series: PoseSeries, truth: PoseSeries) -> np.ndarray:
    """Per-sample horizontal distance between two series on the same time base."""
    if len(series) != len(truth):
        raise ValueError("series must share a time base")
    dn = (series.lat - truth.lat) * EARTH_RADIUS_M
    de = (series.lon - truth.lon) * EARTH_RADIUS_M * np.cos(truth.lat)
    return np.hypot(dn, de)
