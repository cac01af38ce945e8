"""Crustal anomaly grids and the map stack used for matching.

Grids are regular in latitude/longitude, stored row-major with row 0 at the
southern edge, and are immutable after construction. Altitude continuation is
done in the wavenumber domain (gain ``exp(-|k| dz)`` upward) after mean
removal, with mirror padding and a cosine taper over the pad band to suppress
wrap-around. Continued grids are cached per 100 m altitude band.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CoverageError, ParseError
from .geomag import (
    EARTH_RADIUS_M,
    GeoPosition,
    SphericalHarmonicModel,
    TemporalModel,
    synthesize_core_field,
    temporal_offset,
)


@dataclass(frozen=True)
class AnomalyGrid:
    """Regular lat/lon grid of crustal anomaly values (nT) at one altitude.

    ``values[i, j]`` sits at latitude ``origin_lat + i * d_lat`` and longitude
    ``origin_lon + j * d_lon`` (radians). Higher ``priority`` wins when grids
    overlap in a stack.
    """

    origin_lat: float
    origin_lon: float
    d_lat: float
    d_lon: float
    values: np.ndarray
    reference_altitude: float = 0.0
    name: str = "grid"
    priority: int = 0
    low_confidence_border_cells: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.ndim != 2 or values.shape[0] < 2 or values.shape[1] < 2:
            raise ValueError("grid must be 2-D with at least 2 rows and columns")
        if self.d_lat <= 0.0 or self.d_lon <= 0.0:
            raise ValueError("cell sizes must be positive")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        values.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def max_lat(self) -> float:
        return self.origin_lat + (self.n_rows - 1) * self.d_lat

    @property
    def max_lon(self) -> float:
        return self.origin_lon + (self.n_cols - 1) * self.d_lon

    def covers(self, pos: GeoPosition) -> bool:
        return (
            self.origin_lat <= pos.latitude <= self.max_lat
            and self.origin_lon <= pos.longitude <= self.max_lon
        )

    def cell_size_m(self) -> tuple[float, float]:
        """(north, east) cell extent in meters at the grid's mid latitude."""
        mid_lat = 0.5 * (self.origin_lat + self.max_lat)
        return self.d_lat * EARTH_RADIUS_M, self.d_lon * EARTH_RADIUS_M * math.cos(mid_lat)


_EDGE_EPS = 1e-9  # cells of slack at the outer boundary


def _fractional_index(grid: AnomalyGrid, lats, lons):
    u = (np.asarray(lats, dtype=float) - grid.origin_lat) / grid.d_lat
    v = (np.asarray(lons, dtype=float) - grid.origin_lon) / grid.d_lon
    return u, v


def interpolate_many(grid: AnomalyGrid, lats, lons) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized bilinear interpolation.

    Returns ``(values, valid)`` where ``valid`` marks points inside the grid;
    values at invalid points are 0.
    """
    u, v = _fractional_index(grid, lats, lons)
    valid = (
        (u >= -_EDGE_EPS)
        & (u <= grid.n_rows - 1 + _EDGE_EPS)
        & (v >= -_EDGE_EPS)
        & (v <= grid.n_cols - 1 + _EDGE_EPS)
    )
    u = np.clip(u, 0.0, grid.n_rows - 1)
    v = np.clip(v, 0.0, grid.n_cols - 1)
    i = np.minimum(u.astype(int), grid.n_rows - 2)
    j = np.minimum(v.astype(int), grid.n_cols - 2)
    fu = u - i
    fv = v - j
    g = grid.values
    vals = (
        (1 - fu) * (1 - fv) * g[i, j]
        + (1 - fu) * fv * g[i, j + 1]
        + fu * (1 - fv) * g[i + 1, j]
        + fu * fv * g[i + 1, j + 1]
    )
    return np.where(valid, vals, 0.0), valid


def grid_interpolate(grid: AnomalyGrid, pos: GeoPosition) -> float:
    """Bilinear interpolation at one position; exact at grid nodes."""
    vals, valid = interpolate_many(
        grid, np.array([pos.latitude]), np.array([pos.longitude])
    )
    if not valid[0]:
        raise CoverageError(
            f"position ({pos.latitude:.6f}, {pos.longitude:.6f}) outside grid "
            f"'{grid.name}'"
        )
    return float(vals[0])


def grid_gradient(grid: AnomalyGrid, pos: GeoPosition) -> tuple[float, float]:
    """Anomaly gradient (d/d_north, d/d_east) in nT per meter.

    Central finite differences of the bilinear surface with a half-cell step,
    converted with local meridian/parallel arc lengths. Requires the position
    at least one cell inside the boundary.
    """
    u, v = _fractional_index(grid, pos.latitude, pos.longitude)
    if not (1.0 - _EDGE_EPS <= u <= grid.n_rows - 2 + _EDGE_EPS):
        raise CoverageError(f"too close to the north/south edge of '{grid.name}'")
    if not (1.0 - _EDGE_EPS <= v <= grid.n_cols - 2 + _EDGE_EPS):
        raise CoverageError(f"too close to the east/west edge of '{grid.name}'")
    h_lat = 0.5 * grid.d_lat
    h_lon = 0.5 * grid.d_lon
    lats = np.array(
        [pos.latitude + h_lat, pos.latitude - h_lat, pos.latitude, pos.latitude]
    )
    lons = np.array(
        [pos.longitude, pos.longitude, pos.longitude + h_lon, pos.longitude - h_lon]
    )
    vals, valid = interpolate_many(grid, lats, lons)
    if not np.all(valid):
        raise CoverageError(f"gradient stencil leaves grid '{grid.name}'")
    d_north = (vals[0] - vals[1]) / (2.0 * h_lat * EARTH_RADIUS_M)
    d_east = (vals[2] - vals[3]) / (
        2.0 * h_lon * EARTH_RADIUS_M * math.cos(pos.latitude)
    )
    return d_north, d_east


def _pad_taper(resid: np.ndarray) -> tuple[np.ndarray, int, int]:
    """Mirror-pad by ~10% of each dimension and cosine-taper the pad band."""
    pad_r = max(8, int(round(0.1 * resid.shape[0])))
    pad_c = max(8, int(round(0.1 * resid.shape[1])))
    padded = np.pad(resid, ((pad_r, pad_r), (pad_c, pad_c)), mode="reflect")
    w_r = np.ones(padded.shape[0])
    w_c = np.ones(padded.shape[1])
    ramp_r = 0.5 * (1.0 - np.cos(np.pi * (np.arange(pad_r) + 0.5) / pad_r))
    ramp_c = 0.5 * (1.0 - np.cos(np.pi * (np.arange(pad_c) + 0.5) / pad_c))
    w_r[:pad_r] = ramp_r
    w_r[-pad_r:] = ramp_r[::-1]
    w_c[:pad_c] = ramp_c
    w_c[-pad_c:] = ramp_c[::-1]
    return padded * np.outer(w_r, w_c), pad_r, pad_c


def _wavenumbers(shape: tuple[int, int], dx: float, dy: float):
    ky = 2.0 * np.pi * np.fft.fftfreq(shape[0], d=dy)
    kx = 2.0 * np.pi * np.fft.rfftfreq(shape[1], d=dx)
    return np.sqrt(ky[:, None] ** 2 + kx[None, :] ** 2)


def _apply_continuation(grid: AnomalyGrid, gain_fn) -> np.ndarray:
    dy, dx = grid.cell_size_m()
    mean = grid.values.mean()
    padded, pad_r, pad_c = _pad_taper(grid.values - mean)
    k = _wavenumbers(padded.shape, dx, dy)
    spectrum = np.fft.rfft2(padded) * gain_fn(k)
    out = np.fft.irfft2(spectrum, s=padded.shape)
    return out[pad_r : pad_r + grid.n_rows, pad_c : pad_c + grid.n_cols] + mean


def upward_continue(grid: AnomalyGrid, dz: float) -> AnomalyGrid:
    """Continue the grid up by ``dz`` meters (wavenumber gain exp(-|k| dz)).

    The mean (DC) value is preserved exactly; the outer ~10% border is flagged
    low-confidence because of edge treatment.
    """
    if dz < 0.0:
        raise ValueError("dz must be >= 0; use downward_continue to go down")
    values = _apply_continuation(grid, lambda k: np.exp(-k * dz))
    border = max(grid.n_rows, grid.n_cols) // 10
    return replace(
        grid,
        values=values,
        reference_altitude=grid.reference_altitude + dz,
        low_confidence_border_cells=border,
    )


def downward_continue(grid: AnomalyGrid, dz: float, cutoff: float = 0.5) -> AnomalyGrid:
    """Continue the grid down by ``dz`` meters, stabilized above a cutoff.

    The amplifying gain exp(+|k| dz) applies below ``cutoff`` (fraction of the
    maximum wavenumber present); above it the response is cosine-rolled to
    zero. The result is approximate by construction.
    """
    if dz < 0.0:
        raise ValueError("dz must be >= 0")
    if not (0.0 < cutoff <= 1.0):
        raise ValueError("cutoff must be in (0, 1]")

    def gain(k: np.ndarray) -> np.ndarray:
        k_max = k.max()
        k_cut = cutoff * k_max
        g = np.exp(np.minimum(k, k_cut) * dz)
        if k_cut < k_max:
            frac = np.clip((k - k_cut) / (k_max - k_cut), 0.0, 1.0)
            g = np.where(k <= k_cut, g, g * np.cos(0.5 * np.pi * frac) ** 2)
        return g

    values = _apply_continuation(grid, gain)
    border = max(grid.n_rows, grid.n_cols) // 10
    return replace(
        grid,
        values=values,
        reference_altitude=grid.reference_altitude - dz,
        low_confidence_border_cells=border,
    )


class MapStack:
    """Prioritized anomaly layers over a core-field model with temporal effects.

    The highest-priority layer covering a query point answers it. Continued
    versions of each layer are cached in ``band_height_m`` altitude bands.
    Layers are immutable; the continuation cache is guarded by a lock so the
    stack can be shared between reader threads.
    """

    def __init__(
        self,
        layers,
        core: SphericalHarmonicModel,
        temporal: TemporalModel | None = None,
        downward_cutoff: float = 0.5,
        band_height_m: float = 100.0,
    ):
        layers = list(layers)
        if not layers:
            raise ValueError("a map stack needs at least one layer")
        names = [g.name for g in layers]
        if len(set(names)) != len(names):
            raise ValueError(f"layer names must be unique, got {names}")
        self.layers = sorted(layers, key=lambda g: (-g.priority, g.name))
        self.core = core
        self.temporal = temporal if temporal is not None else TemporalModel()
        self.downward_cutoff = downward_cutoff
        self.band_height_m = band_height_m
        self._cache: dict[tuple[str, int], AnomalyGrid] = {}
        self._cache_lock = threading.Lock()

    def layer_at_altitude(self, layer: AnomalyGrid, altitude: float) -> AnomalyGrid:
        """The layer continued to the altitude band containing ``altitude``."""
        band = int(round((altitude - layer.reference_altitude) / self.band_height_m))
        if band == 0:
            return layer
        key = (layer.name, band)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        dz = band * self.band_height_m
        if dz > 0:
            continued = upward_continue(layer, dz)
        else:
            continued = downward_continue(layer, -dz, self.downward_cutoff)
        with self._cache_lock:
            return self._cache.setdefault(key, continued)

    def covering_layer(self, pos: GeoPosition) -> AnomalyGrid:
        for layer in self.layers:
            if layer.covers(pos):
                return layer
        raise CoverageError(
            f"no layer covers ({pos.latitude:.6f}, {pos.longitude:.6f})"
        )


def map_scalar(
    stack: MapStack, pos: GeoPosition, t: float, epoch: float,
    with_temporal: bool = True,
) -> tuple[float, str]:
    """Total scalar map field (nT) at a position and time.

    Core-field magnitude plus the anomaly from the highest-priority covering
    layer (continued to the query altitude) plus the temporal offset. Returns
    the value and the name of the layer that answered. ``with_temporal=False``
    leaves the temporal prediction out (a consumer may track it as a bias
    instead).
    """
    layer = stack.covering_layer(pos)
    continued = stack.layer_at_altitude(layer, pos.altitude)
    anomaly = grid_interpolate(continued, pos)
    core = synthesize_core_field(stack.core, pos, epoch).magnitude()
    value = core + anomaly
    if with_temporal:
        value += temporal_offset(stack.temporal, t)
    return value, layer.name


def map_scalar_gradient(
    stack: MapStack, pos: GeoPosition, epoch: float
) -> tuple[float, float]:
    """Gradient of the scalar map field w.r.t. north/east displacement, nT/m.

    Sum of the anomaly-layer gradient and the core-magnitude gradient (the
    latter by central differences over one anomaly cell).
    """
    layer = stack.covering_layer(pos)
    continued = stack.layer_at_altitude(layer, pos.altitude)
    g_n, g_e = grid_gradient(continued, pos)

    h_lat = continued.d_lat
    h_lon = continued.d_lon
    lat_hi = min(pos.latitude + h_lat, math.pi / 2)
    lat_lo = max(pos.latitude - h_lat, -math.pi / 2)
    core_n = (
        synthesize_core_field(
            stack.core, GeoPosition(lat_hi, pos.longitude, pos.altitude), epoch
        ).magnitude()
        - synthesize_core_field(
            stack.core, GeoPosition(lat_lo, pos.longitude, pos.altitude), epoch
        ).magnitude()
    ) / ((lat_hi - lat_lo) * EARTH_RADIUS_M)
    core_e = (
        synthesize_core_field(
            stack.core, GeoPosition(pos.latitude, pos.longitude + h_lon, pos.altitude), epoch
        ).magnitude()
        - synthesize_core_field(
            stack.core, GeoPosition(pos.latitude, pos.longitude - h_lon, pos.altitude), epoch
        ).magnitude()
    ) / (2.0 * h_lon * EARTH_RADIUS_M * math.cos(pos.latitude))
    return g_n + core_n, g_e + core_e


def level_layers(stack: MapStack) -> MapStack:
    """DC-offset levelling: shift each lower-priority layer so its mean over
    the overlap with higher-priority coverage matches the reference mean.

    Layers without overlap are left unchanged. Returns a new stack; the input
    is not modified.
    """
    levelled: list[AnomalyGrid] = []
    for layer in stack.layers:
        if not levelled:
            levelled.append(layer)
            continue
        lat_nodes = layer.origin_lat + layer.d_lat * np.arange(layer.n_rows)
        lon_nodes = layer.origin_lon + layer.d_lon * np.arange(layer.n_cols)
        lat_mesh, lon_mesh = np.meshgrid(lat_nodes, lon_nodes, indexing="ij")
        lats = lat_mesh.ravel()
        lons = lon_mesh.ravel()
        own = layer.values.ravel()
        ref_vals = np.zeros_like(own)
        covered = np.zeros(own.shape, dtype=bool)
        for higher in levelled:
            vals, valid = interpolate_many(higher, lats, lons)
            take = valid & ~covered
            ref_vals[take] = vals[take]
            covered |= valid
        if not covered.any():
            levelled.append(layer)
            continue
        offset = ref_vals[covered].mean() - own[covered].mean()
        levelled.append(replace(layer, values=layer.values + offset))
    return MapStack(
        levelled,
        stack.core,
        stack.temporal,
        downward_cutoff=stack.downward_cutoff,
        band_height_m=stack.band_height_m,
    )


_HEADER_KEYS = (
    "ncols",
    "nrows",
    "xllcorner",
    "yllcorner",
    "cellsize",
    "NODATA_value",
    "REF_ALT_M",
)


def load_grid_ascii(text: str, name: str = "grid", priority: int = 0) -> AnomalyGrid:
    """Parse an ESRI-ASCII-style grid with a reference-altitude extension.

    Header lines (in order): ncols, nrows, xllcorner, yllcorner, cellsize,
    NODATA_value, REF_ALT_M; corners and cellsize in degrees. Data rows run
    north to south. Full border rows/columns of nodata are cropped; any other
    nodata cell is an error.
    """
    lines = text.splitlines()
    header: dict[str, float] = {}
    idx = 0
    for key in _HEADER_KEYS:
        while idx < len(lines) and not lines[idx].strip():
            idx += 1
        if idx >= len(lines):
            raise ParseError(f"missing header key '{key}'", idx + 1)
        parts = lines[idx].split()
        if len(parts) != 2 or parts[0] != key:
            raise ParseError(f"expected header '{key} <value>', got {lines[idx]!r}", idx + 1)
        try:
            header[key] = float(parts[1])
        except ValueError as exc:
            raise ParseError(f"bad value for '{key}': {exc}", idx + 1) from exc
        idx += 1
    n_cols = int(header["ncols"])
    n_rows = int(header["nrows"])
    rows: list[list[float]] = []
    for lineno in range(idx, len(lines)):
        line = lines[lineno].strip()
        if not line:
            continue
        try:
            row = [float(v) for v in line.split()]
        except ValueError as exc:
            raise ParseError(f"bad data value: {exc}", lineno + 1) from exc
        if len(row) != n_cols:
            raise ParseError(
                f"expected {n_cols} values per row, got {len(row)}", lineno + 1
            )
        rows.append(row)
    if len(rows) != n_rows:
        raise ParseError(f"expected {n_rows} data rows, got {len(rows)}")
    values = np.array(rows[::-1])  # file is north-to-south; row 0 is south
    nodata = header["NODATA_value"]
    mask = values == nodata
    if mask.any():
        values, mask, row0, col0 = _crop_nodata_border(values, mask)
        if mask.any():
            i, j = np.argwhere(mask)[0]
            raise ParseError(
                f"nodata cell inside the data region at row {i + row0}, "
                f"col {j + col0} (south-origin indices)"
            )
    else:
        row0 = col0 = 0
    return AnomalyGrid(
        origin_lat=math.radians(header["yllcorner"]) + row0 * math.radians(header["cellsize"]),
        origin_lon=math.radians(header["xllcorner"]) + col0 * math.radians(header["cellsize"]),
        d_lat=math.radians(header["cellsize"]),
        d_lon=math.radians(header["cellsize"]),
        values=values,
        reference_altitude=header["REF_ALT_M"],
        name=name,
        priority=priority,
    )


def _crop_nodata_border(values: np.ndarray, mask: np.ndarray):
    row0 = col0 = 0
    while values.shape[0] > 2 and mask[0].all():
        values, mask = values[1:], mask[1:]
        row0 += 1
    while values.shape[0] > 2 and mask[-1].all():
        values, mask = values[:-1], mask[:-1]
    while values.shape[1] > 2 and mask[:, 0].all():
        values, mask = values[:, 1:], mask[:, 1:]
        col0 += 1
    while values.shape[1] > 2 and mask[:, -1].all():
        values, mask = values[:, :-1], mask[:, :-1]
    return values, mask, row0, col0


def write_grid_ascii(grid: AnomalyGrid, nodata: float = -9999.0) -> str:
    """Serialize a grid in the format accepted by ``load_grid_ascii``."""
    if grid.d_lat != grid.d_lon:
        raise ValueError("ASCII grid format requires square cells")
    lines = [
        f"ncols {grid.n_cols}",
        f"nrows {grid.n_rows}",
        f"xllcorner {math.degrees(grid.origin_lon):.12g}",
        f"yllcorner {math.degrees(grid.origin_lat):.12g}",
        f"cellsize {math.degrees(grid.d_lat):.12g}",
        f"NODATA_value {nodata:.10g}",
        f"REF_ALT_M {grid.reference_altitude:.10g}",
    ]
    for row in grid.values[::-1]:
        lines.append(" ".join(f"{v:.10g}" for v in row))
    return "\n".join(lines) + "\n"
