"""Core geomagnetic field synthesis and temporal disturbance modelling.

The core field is evaluated from Schmidt semi-normalized spherical-harmonic
coefficients on a spherical Earth (radius 6,371,200 m), with linear secular
variation from the model epoch. Time-dependent effects (diurnal ionospheric
variation, space-weather disturbances) are modelled as additive offsets on
the scalar channel only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelInvalidError, ParseError

# Reference sphere radius for field synthesis (geomagnetic convention), meters.
EARTH_RADIUS_M = 6_371_200.0

_MIN_ALTITUDE_M = -10_000.0


def wrap_longitude(lon: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.fmod(lon + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class GeoPosition:
    """Platform position: geodetic latitude/longitude in radians, altitude in meters.

    Longitude is wrapped to (-pi, pi] on construction. A spherical Earth is
    assumed throughout, so geodetic and geocentric latitude coincide.
    """

    latitude: float
    longitude: float
    altitude: float = 0.0

    def __post_init__(self):
        if not (-math.pi / 2.0 <= self.latitude <= math.pi / 2.0):
            raise ValueError(f"latitude {self.latitude} outside [-pi/2, pi/2]")
        if self.altitude <= _MIN_ALTITUDE_M:
            raise ValueError(f"altitude {self.altitude} below {_MIN_ALTITUDE_M} m")
        object.__setattr__(self, "longitude", wrap_longitude(self.longitude))


@dataclass(frozen=True)
class FieldVector:
    """Magnetic field vector in the local north/east/down frame, nT."""

    north: float
    east: float
    down: float

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.north, self.east, self.down)):
            raise ValueError("field components must be finite")

    def magnitude(self) -> float:
        return math.sqrt(self.north**2 + self.east**2 + self.down**2)

    def as_array(self) -> np.ndarray:
        return np.array([self.north, self.east, self.down])


class SphericalHarmonicModel:
    """Schmidt semi-normalized spherical-harmonic field model.

    Coefficient arrays are indexed ``[n, m]`` with shape
    ``(max_degree + 1, max_degree + 1)``; entries with ``m > n`` and the whole
    ``n = 0`` row must be zero. Secular variation is linear in time.

    Parameters
    ----------
    epoch : float
        Decimal year the coefficients are referenced to.
    g, h : ndarray
        Gauss coefficients in nT.
    g_dot, h_dot : ndarray, optional
        Secular variation in nT/year; zero when omitted.
    """

    def __init__(self, epoch, g, h, g_dot=None, h_dot=None):
        g = np.asarray(g, dtype=float)
        h = np.asarray(h, dtype=float)
        if g.shape != h.shape or g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ModelInvalidError("g and h must be square arrays of equal shape")
        n_max = g.shape[0] - 1
        if n_max < 1:
            raise ModelInvalidError("model must contain at least degree 1")
        g_dot = np.zeros_like(g) if g_dot is None else np.asarray(g_dot, dtype=float)
        h_dot = np.zeros_like(h) if h_dot is None else np.asarray(h_dot, dtype=float)
        for name, arr in (("g", g), ("h", h), ("g_dot", g_dot), ("h_dot", h_dot)):
            if arr.shape != g.shape:
                raise ModelInvalidError(f"{name} shape mismatch")
            if not np.all(np.isfinite(arr)):
                raise ModelInvalidError(f"{name} contains non-finite coefficients")
        mask = np.triu(np.ones_like(g, dtype=bool), k=1)  # m > n region
        mask[0, :] = True
        for name, arr in (("g", g), ("h", h), ("g_dot", g_dot), ("h_dot", h_dot)):
            if np.any(arr[mask] != 0.0):
                raise ModelInvalidError(f"{name} has entries with m > n or n = 0")
        if np.any(h[:, 0] != 0.0) or np.any(h_dot[:, 0] != 0.0):
            raise ModelInvalidError("h(n, 0) must be zero")
        self.epoch = float(epoch)
        self.max_degree = n_max
        self.g = g
        self.h = h
        self.g_dot = g_dot
        self.h_dot = h_dot

    @classmethod
    def axial_dipole(cls, g10: float, epoch: float = 2025.0) -> "SphericalHarmonicModel":
        """Model with a single g(1,0) coefficient."""
        g = np.zeros((2, 2))
        g[1, 0] = g10
        return cls(epoch, g, np.zeros((2, 2)))

    def coefficients_at(self, epoch: float) -> tuple[np.ndarray, np.ndarray]:
        """Gauss coefficients propagated linearly to ``epoch``."""
        dt = float(epoch) - self.epoch
        if not (0.0 <= dt <= 10.0):
            raise ValueError(
                f"epoch {epoch} outside supported range "
                f"[{self.epoch}, {self.epoch + 10.0}]"
            )
        return self.g + dt * self.g_dot, self.h + dt * self.h_dot


@dataclass
class TemporalModel:
    """Additive scalar-channel disturbances: diurnal sinusoid plus an injected series.

    The disturbance series is linearly interpolated between samples and
    contributes zero outside its time support unless ``extrapolate`` is set,
    in which case the edge values are held.
    """

    diurnal_amplitude: float = 0.0
    diurnal_phase: float = 0.0
    diurnal_period: float = 86_400.0
    disturbance_times: np.ndarray | None = None
    disturbance_values: np.ndarray | None = None
    extrapolate: bool = False

    def __post_init__(self):
        if self.diurnal_amplitude < 0.0:
            raise ValueError("diurnal amplitude must be >= 0")
        if self.diurnal_period <= 0.0:
            raise ValueError("diurnal period must be > 0")
        if (self.disturbance_times is None) != (self.disturbance_values is None):
            raise ValueError("disturbance times and values must be given together")
        if self.disturbance_times is not None:
            t = np.asarray(self.disturbance_times, dtype=float)
            v = np.asarray(self.disturbance_values, dtype=float)
            if t.shape != v.shape or t.ndim != 1:
                raise ValueError("disturbance series must be matching 1-D arrays")
            if t.size and np.any(np.diff(t) <= 0.0):
                raise ValueError("disturbance timestamps must be strictly increasing")
            self.disturbance_times = t
            self.disturbance_values = v


ZERO_TEMPORAL = TemporalModel()


def temporal_offset(model: TemporalModel, t):
    """Scalar field offset (nT) at time ``t`` seconds since scenario start.

    Accepts a scalar or an array of times; total function, never raises for
    ``t >= 0``.
    """
    t_arr = np.asarray(t, dtype=float)
    out = model.diurnal_amplitude * np.sin(
        2.0 * math.pi * t_arr / model.diurnal_period + model.diurnal_phase
    )
    if model.disturbance_times is not None and model.disturbance_times.size:
        times, values = model.disturbance_times, model.disturbance_values
        interp = np.interp(t_arr, times, values)
        if not model.extrapolate:
            inside = (t_arr >= times[0]) & (t_arr <= times[-1])
            interp = np.where(inside, interp, 0.0)
        out = out + interp
    if np.ndim(t) == 0:
        return float(out)
    return out


def _legendre_schmidt(n_max: int, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Schmidt semi-normalized associated Legendre functions and d/dtheta.

    Returns arrays of shape ``(n_max + 1, n_max + 1, len(theta))`` indexed
    ``[n, m]``. Standard stable recursion in colatitude.
    """
    theta = np.atleast_1d(theta)
    sin_t = np.sin(theta)
    cos_t = np.cos(theta)
    shape = (n_max + 1, n_max + 1, theta.size)
    p = np.zeros(shape)
    dp = np.zeros(shape)
    p[0, 0] = 1.0

    # Unnormalized recursion (Wertz form), Schmidt factors applied afterwards.
    for n in range(1, n_max + 1):
        for m in range(0, n + 1):
            if n == m:
                p[n, n] = sin_t * p[n - 1, n - 1]
                dp[n, n] = sin_t * dp[n - 1, n - 1] + cos_t * p[n - 1, n - 1]
            elif n == 1:
                p[n, m] = cos_t * p[n - 1, m]
                dp[n, m] = cos_t * dp[n - 1, m] - sin_t * p[n - 1, m]
            else:
                k = ((n - 1) ** 2 - m**2) / ((2.0 * n - 1.0) * (2.0 * n - 3.0))
                p[n, m] = cos_t * p[n - 1, m] - k * p[n - 2, m]
                dp[n, m] = cos_t * dp[n - 1, m] - sin_t * p[n - 1, m] - k * dp[n - 2, m]

    norm = np.ones((n_max + 1, n_max + 1))
    for n in range(1, n_max + 1):
        norm[n, 0] = norm[n - 1, 0] * (2.0 * n - 1.0) / n
        for m in range(1, n + 1):
            factor = (n - m + 1.0) * (2.0 if m == 1 else 1.0) / (n + m)
            norm[n, m] = norm[n, m - 1] * math.sqrt(factor)
    p *= norm[:, :, None]
    dp *= norm[:, :, None]
    return p, dp


def synthesize_core_field_arrays(
    model: SphericalHarmonicModel,
    latitude: np.ndarray,
    longitude: np.ndarray,
    altitude: np.ndarray,
    epoch: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized core-field synthesis over arrays of positions.

    Parameters are broadcast 1-D arrays (radians, radians, meters). Returns
    ``(north, east, down)`` component arrays in nT.
    """
    lat = np.atleast_1d(np.asarray(latitude, dtype=float))
    lon = np.atleast_1d(np.asarray(longitude, dtype=float))
    alt = np.broadcast_to(np.asarray(altitude, dtype=float), lat.shape)
    g, h = model.coefficients_at(epoch)
    n_max = model.max_degree

    r = EARTH_RADIUS_M + alt
    theta = math.pi / 2.0 - lat
    sin_t = np.sin(theta)
    # Guard the 1/sin(theta) term at the poles; m = 0 terms are unaffected
    # and m >= 1 Legendre functions vanish there at least linearly.
    sin_t_safe = np.where(np.abs(sin_t) < 1e-12, 1e-12, sin_t)

    p, dp = _legendre_schmidt(n_max, theta)

    b_r = np.zeros_like(lat)
    b_theta = np.zeros_like(lat)
    b_phi = np.zeros_like(lat)
    ratio = EARTH_RADIUS_M / r
    for n in range(1, n_max + 1):
        radial = ratio ** (n + 2)
        for m in range(0, n + 1):
            cos_m = np.cos(m * lon)
            sin_m = np.sin(m * lon)
            gc = g[n, m]
            hc = h[n, m]
            if gc == 0.0 and hc == 0.0:
                continue
            angular = gc * cos_m + hc * sin_m
            b_r += radial * (n + 1) * angular * p[n, m]
            b_theta -= radial * angular * dp[n, m]
            if m > 0:
                b_phi += radial * m * (gc * sin_m - hc * cos_m) * p[n, m] / sin_t_safe
    return -b_theta, b_phi, -b_r


def synthesize_core_field(
    model: SphericalHarmonicModel, pos: GeoPosition, epoch: float
) -> FieldVector:
    """Core field B = -grad(V) at one position, local north/east/down, nT."""
    north, east, down = synthesize_core_field_arrays(
        model,
        np.array([pos.latitude]),
        np.array([pos.longitude]),
        np.array([pos.altitude]),
        epoch,
    )
    return FieldVector(float(north[0]), float(east[0]), float(down[0]))


def load_harmonic_coefficients(text: str) -> SphericalHarmonicModel:
    """Parse a coefficient file.

    Format: optional ``#`` comment lines, a header ``SHMODEL <epoch>
    <max_degree>``, then one record per line ``n m g h [g_dot h_dot]``
    (nT, nT/yr). Missing secular-variation columns default to zero.
    """
    header = None
    records: dict[tuple[int, int], tuple[float, float, float, float]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if header is None:
            parts = line.split()
            if len(parts) != 3 or parts[0] != "SHMODEL":
                raise ParseError("expected header 'SHMODEL <epoch> <max_degree>'", lineno)
            try:
                epoch = float(parts[1])
                max_degree = int(parts[2])
            except ValueError as exc:
                raise ParseError(f"bad header value: {exc}", lineno) from exc
            header = (epoch, max_degree)
            continue
        parts = line.split()
        if len(parts) not in (4, 6):
            raise ParseError(f"expected 4 or 6 fields, got {len(parts)}", lineno)
        try:
            n = int(parts[0])
            m = int(parts[1])
            values = [float(v) for v in parts[2:]]
        except ValueError as exc:
            raise ParseError(f"bad numeric field: {exc}", lineno) from exc
        if len(values) == 2:
            values += [0.0, 0.0]
        if n < 1 or m < 0 or m > n:
            raise ParseError(f"invalid degree/order ({n},{m})", lineno)
        if n > header[1]:
            raise ParseError(
                f"degree {n} exceeds header max_degree {header[1]}", lineno
            )
        if (n, m) in records:
            raise ParseError(f"duplicate entry ({n},{m})", lineno)
        if m == 0 and (values[1] != 0.0 or values[3] != 0.0):
            raise ParseError("h(n,0) must be zero", lineno)
        records[(n, m)] = tuple(values)
    if header is None:
        raise ParseError("missing SHMODEL header")
    if not records:
        raise ModelInvalidError("coefficient body is empty")
    _, max_degree = header
    size = max_degree + 1
    g = np.zeros((size, size))
    h = np.zeros((size, size))
    g_dot = np.zeros((size, size))
    h_dot = np.zeros((size, size))
    for (n, m), (gv, hv, gd, hd) in records.items():
        g[n, m] = gv
        h[n, m] = hv
        g_dot[n, m] = gd
        h_dot[n, m] = hd
    return SphericalHarmonicModel(header[0], g, h, g_dot, h_dot)


def write_harmonic_coefficients(model: SphericalHarmonicModel) -> str:
    """Serialize a model in the format accepted by ``load_harmonic_coefficients``."""
    lines = [f"SHMODEL {model.epoch:.6g} {model.max_degree}"]
    for n in range(1, model.max_degree + 1):
        for m in range(0, n + 1):
            g, h = model.g[n, m], model.h[n, m]
            gd, hd = model.g_dot[n, m], model.h_dot[n, m]
            if g == 0.0 and h == 0.0 and gd == 0.0 and hd == 0.0:
                continue
            lines.append(f"{n} {m} {g:.10g} {h:.10g} {gd:.10g} {hd:.10g}")
    return "\n".join(lines) + "\n"
