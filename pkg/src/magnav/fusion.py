"""Navigation-and-map-matching engine.

An augmented error-state extended Kalman filter jointly estimates the INS
position/velocity errors, a heading error, the 18 platform signature
coefficients, a scalar field bias, and the wind, from scalar+vector
magnetometer streams matched against the map stack. Denoising and matching
happen in the same measurement update: the scalar innovation is formed
against map-plus-platform-model, so the coefficient states absorb platform
interference while the position states absorb map mismatch.

Sign convention: position/velocity error states are INS minus truth, so the
corrected solution is the INS estimate minus the estimated error.

Magnetic corrections are applied to the reported solution only once a
confidence gate opens (coefficient covariance contracted and a minimum
settling time elapsed); a warm start from a prior mission's coefficient
snapshot opens the gate immediately.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    CoverageError,
    FilterDivergedError,
    NotConvergedError,
    WarmStartError,
)
from .geomag import EARTH_RADIUS_M, GeoPosition
from .maps import MapStack, map_scalar, map_scalar_gradient
from .platform import TL_DIM, TlCoefficients, tl_regressors

logger = logging.getLogger(__name__)

STATE_DIM = 26
SNAPSHOT_SCHEMA_VERSION = 1

# State vector layout
POS = slice(0, 2)     # position error north/east, m (INS minus truth)
VEL = slice(2, 4)     # velocity error north/east, m/s
PSI = 4               # heading error, rad
COEF = slice(5, 23)   # platform signature coefficients
BIAS = 23             # scalar field bias, nT
WIND = slice(24, 26)  # wind north/east, m/s

POSITION_SIGMA_ENVELOPE_M = 4000.0


@dataclass(frozen=True)
class CoefficientSnapshot:
    """Converged platform-signature estimate recycled between missions."""

    coefficients: np.ndarray  # (18,)
    covariance: np.ndarray  # (18, 18)
    vehicle_id: str
    timestamp: float

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        p = np.asarray(self.covariance, dtype=float)
        if c.shape != (TL_DIM,) or p.shape != (TL_DIM, TL_DIM):
            raise ValueError("snapshot shape mismatch")
        eigvals = np.linalg.eigvalsh(0.5 * (p + p.T))
        if eigvals.min() <= 0:
            raise ValueError("snapshot covariance must be positive definite")
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "covariance", p)

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": SNAPSHOT_SCHEMA_VERSION,
                "vehicle_id": self.vehicle_id,
                "timestamp": self.timestamp,
                "coefficients": self.coefficients.tolist(),
                "covariance": self.covariance.tolist(),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "CoefficientSnapshot":
        data = json.loads(text)
        if data.get("schema_version") != SNAPSHOT_SCHEMA_VERSION:
            raise WarmStartError(
                f"snapshot schema {data.get('schema_version')!r} not supported"
            )
        return cls(
            np.array(data["coefficients"], dtype=float),
            np.array(data["covariance"], dtype=float),
            str(data["vehicle_id"]),
            float(data["timestamp"]),
        )


@dataclass(frozen=True)
class StartMode:
    """Cold start (learn coefficients online) or warm start from a snapshot."""

    kind: str = "cold"
    snapshot: CoefficientSnapshot | None = None
    fallback_to_cold: bool = False

    def __post_init__(self):
        if self.kind not in ("cold", "warm"):
            raise ValueError(f"unknown start mode {self.kind!r}")
        if self.kind == "warm" and self.snapshot is None:
            raise ValueError("warm start requires a snapshot")

    @classmethod
    def cold(cls) -> "StartMode":
        return cls("cold")

    @classmethod
    def warm(cls, snapshot: CoefficientSnapshot, fallback_to_cold: bool = False) -> "StartMode":
        return cls("warm", snapshot, fallback_to_cold)


@dataclass
class FilterConfig:
    """Tuning knobs for the fusion filter. Defaults suit the shipped presets."""

    vehicle_id: str = "vehicle"
    # cold-start prior sigmas; permanent spans the 100-1000x interference scale
    sigma_permanent: float = 300.0  # nT
    sigma_induced: float = 0.01
    sigma_eddy: float = 0.01  # s
    sigma_bias: float = 150.0  # nT
    sigma_velocity: float = 1.0  # m/s
    sigma_psi: float = math.radians(0.2)
    sigma_wind: float = 10.0  # m/s
    # process noise densities (units per sqrt(s))
    q_position: float = 1e-3
    q_velocity: float = 2e-3
    q_psi: float = 1e-6
    q_permanent: float = 0.005
    q_induced: float = 2e-7
    q_eddy: float = 2e-7
    q_bias: float = 0.02
    q_wind: float = 0.005
    # measurement model
    map_noise_nT: float = 2.0
    gate_sigma: float = 5.0
    rejection_inflation: float = 1.2
    rejections_before_inflation: int = 10
    coverage_inflation: float = 1.01
    # confidence gate
    gate_trace_fraction: float = 0.05
    gate_min_time_s: float = 60.0
    # sensor mounting offset from the INS reference, body frame, m
    lever_arm_body: tuple[float, float, float] = (0.0, 0.0, 0.0)
    use_temporal_prediction: bool = False
    check_covariance: bool = False


@dataclass
class InnovationRecord:
    t: float
    innovation: float
    sigma: float
    accepted: bool
    layer: str


@dataclass
class NavSolution:
    position: GeoPosition
    sigma_north: float
    sigma_east: float
    corrected: bool


class FusionFilter:
    """Sequential error-state filter; one instance per run (single writer)."""

    def __init__(
        self,
        config: FilterConfig,
        initial_position: GeoPosition,
        initial_position_sigma: float,
        mode: StartMode,
        measurement_noise_rms: float,
        epoch: float = 2025.0,
    ):
        self.config = config
        self.epoch = epoch
        self.measurement_noise_rms = measurement_noise_rms
        self.warnings: list[str] = []
        if initial_position_sigma > POSITION_SIGMA_ENVELOPE_M:
            msg = (
                f"initial position sigma {initial_position_sigma:.0f} m exceeds "
                f"the supported {POSITION_SIGMA_ENVELOPE_M:.0f} m envelope"
            )
            logger.warning(msg)
            self.warnings.append(msg)

        self.mean = np.zeros(STATE_DIM)
        cov = np.zeros((STATE_DIM, STATE_DIM))
        cov[0, 0] = cov[1, 1] = initial_position_sigma**2
        cov[2, 2] = cov[3, 3] = config.sigma_velocity**2
        cov[PSI, PSI] = config.sigma_psi**2
        coef_prior = np.concatenate(
            [
                np.full(3, config.sigma_permanent**2),
                np.full(6, config.sigma_induced**2),
                np.full(9, config.sigma_eddy**2),
            ]
        )
        cov[COEF, COEF] = np.diag(coef_prior)
        cov[BIAS, BIAS] = config.sigma_bias**2
        cov[24, 24] = cov[25, 25] = config.sigma_wind**2

        if mode.kind == "warm":
            snap = mode.snapshot
            if snap.vehicle_id != config.vehicle_id:
                if not mode.fallback_to_cold:
                    raise WarmStartError(
                        f"snapshot vehicle {snap.vehicle_id!r} does not match "
                        f"{config.vehicle_id!r}"
                    )
                msg = (
                    f"warm-start snapshot for {snap.vehicle_id!r} rejected; "
                    "falling back to cold start"
                )
                logger.warning(msg)
                self.warnings.append(msg)
                mode = StartMode.cold()
        self.start_kind = mode.kind
        if mode.kind == "warm":
            self.mean[COEF] = mode.snapshot.coefficients
            cov[COEF, COEF] = mode.snapshot.covariance
            self.gate_open = True
            self.gate_open_time: float | None = 0.0
        else:
            self.gate_open = False
            self.gate_open_time = None

        self.covariance = cov
        self.initial_coef_trace = float(np.trace(cov[COEF, COEF]))
        self.t = 0.0
        self.consecutive_rejections = 0
        self.innovation_log: list[InnovationRecord] = []
        self.coverage_gaps = 0
        self._last_ins_velocity = np.zeros(2)
        self._last_ins_heading = 0.0
        self._prev_vector: np.ndarray | None = None
        self._prev_vector_t: float | None = None

    # -- helpers -----------------------------------------------------------

    @property
    def coefficients(self) -> TlCoefficients:
        return TlCoefficients.from_vector(self.mean[COEF])

    def corrected_position(self, ins_position: GeoPosition, apply: bool | None = None) -> GeoPosition:
        """INS position minus the estimated position error (when applied)."""
        if apply is None:
            apply = self.gate_open
        if not apply:
            return ins_position
        lat = ins_position.latitude - self.mean[0] / EARTH_RADIUS_M
        lon = ins_position.longitude - self.mean[1] / (
            EARTH_RADIUS_M * math.cos(ins_position.latitude)
        )
        return GeoPosition(lat, lon, ins_position.altitude)

    def _check_finite(self):
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.covariance))):
            raise FilterDivergedError(f"non-finite filter state at t={self.t:.1f}s")

    def _symmetrize(self):
        self.covariance = 0.5 * (self.covariance + self.covariance.T)
        if self.config.check_covariance:
            asym = np.abs(self.covariance - self.covariance.T).max()
            eigmin = np.linalg.eigvalsh(self.covariance).min()
            if asym > 1e-9 or eigmin <= 0:
                raise FilterDivergedError(
                    f"covariance invariant broken: asym={asym:.2e} eigmin={eigmin:.2e}"
                )

    def _maybe_open_gate(self):
        if self.gate_open:
            return
        trace_c = float(np.trace(self.covariance[COEF, COEF]))
        if (
            trace_c < self.config.gate_trace_fraction * self.initial_coef_trace
            and self.t >= self.config.gate_min_time_s
        ):
            self.gate_open = True
            self.gate_open_time = self.t
            logger.info("confidence gate opened at t=%.1f s", self.t)

    # -- operations ---------------------------------------------------------

    def predict(self, ins_velocity, ins_heading: float, dt: float):
        """Propagate the error state: position error integrates velocity error;
        everything else random-walks."""
        if not (0.0 < dt <= 1.0):
            raise ValueError(f"dt must be in (0, 1] s, got {dt}")
        cfg = self.config
        self._last_ins_velocity = np.asarray(ins_velocity, dtype=float)[:2]
        self._last_ins_heading = float(ins_heading)

        self.mean[POS] += self.mean[VEL] * dt
        f = np.eye(STATE_DIM)
        f[0, 2] = f[1, 3] = dt
        q = np.zeros(STATE_DIM)
        q[0] = q[1] = cfg.q_position**2 * dt
        q[2] = q[3] = cfg.q_velocity**2 * dt
        q[PSI] = cfg.q_psi**2 * dt
        q[5:8] = cfg.q_permanent**2 * dt
        q[8:14] = cfg.q_induced**2 * dt
        q[14:23] = cfg.q_eddy**2 * dt
        q[BIAS] = cfg.q_bias**2 * dt
        q[24] = q[25] = cfg.q_wind**2 * dt
        self.covariance = f @ self.covariance @ f.T + np.diag(q)
        self.t += dt
        self._symmetrize()
        self._check_finite()

    def _sensor_position(self, vehicle: GeoPosition, heading_est: float) -> GeoPosition:
        lx, ly, _ = self.config.lever_arm_body
        if lx == 0.0 and ly == 0.0:
            return vehicle
        off_n = lx * math.cos(heading_est) - ly * math.sin(heading_est)
        off_e = lx * math.sin(heading_est) + ly * math.cos(heading_est)
        return GeoPosition(
            vehicle.latitude + off_n / EARTH_RADIUS_M,
            vehicle.longitude + off_e / (EARTH_RADIUS_M * math.cos(vehicle.latitude)),
            vehicle.altitude,
        )

    def _predicted_scalar(
        self, stack: MapStack, ins_position: GeoPosition, regressors: np.ndarray,
        psi: float, t: float,
    ) -> tuple[float, str, tuple[float, float]]:
        vehicle = self.corrected_position(ins_position, apply=True)
        heading_est = self._last_ins_heading - psi
        sensor_pos = self._sensor_position(vehicle, heading_est)
        map_val, layer = map_scalar(
            stack, sensor_pos, t, self.epoch,
            with_temporal=self.config.use_temporal_prediction,
        )
        grad = map_scalar_gradient(stack, sensor_pos, self.epoch)
        predicted = map_val + float(regressors @ self.mean[COEF]) + self.mean[BIAS]
        return predicted, layer, grad

    def update_magnetic(
        self,
        scalar_meas: float,
        vector_meas: np.ndarray,
        stack: MapStack,
        ins_position: GeoPosition,
        t: float,
    ) -> InnovationRecord:
        """Scalar-magnetometer update against the map stack.

        The vector magnetometer supplies the body-frame field direction for
        the platform regressors (its rate from first differences between
        updates). Innovations outside the gate are rejected with bookkeeping
        only; coverage gaps skip the update and inflate position uncertainty.
        """
        cfg = self.config
        vector_meas = np.asarray(vector_meas, dtype=float)
        if self._prev_vector is not None and t > self._prev_vector_t:
            rate = (vector_meas - self._prev_vector) / (t - self._prev_vector_t)
        else:
            rate = np.zeros(3)
        self._prev_vector = vector_meas
        self._prev_vector_t = t

        regressors = tl_regressors(vector_meas, rate)
        try:
            predicted, layer, grad = self._predicted_scalar(
                stack, ins_position, regressors, self.mean[PSI], t
            )
        except CoverageError:
            self.coverage_gaps += 1
            self.covariance[POS, POS] *= cfg.coverage_inflation
            self._symmetrize()
            record = InnovationRecord(t, math.nan, math.nan, False, "")
            self.innovation_log.append(record)
            return record

        h = np.zeros(STATE_DIM)
        h[0] = -grad[0]
        h[1] = -grad[1]
        h[COEF] = regressors
        h[BIAS] = 1.0
        lx, ly, _ = cfg.lever_arm_body
        if lx != 0.0 or ly != 0.0:
            # numeric sensitivity of the prediction to the heading error state
            d_psi = 1e-4
            up, _, _ = self._predicted_scalar(
                stack, ins_position, regressors, self.mean[PSI] + d_psi, t
            )
            dn, _, _ = self._predicted_scalar(
                stack, ins_position, regressors, self.mean[PSI] - d_psi, t
            )
            h[PSI] = (up - dn) / (2.0 * d_psi)

        y = scalar_meas - predicted
        r = self.measurement_noise_rms**2 + cfg.map_noise_nT**2
        s = float(h @ self.covariance @ h) + r
        sigma = math.sqrt(s)
        accepted = abs(y) <= cfg.gate_sigma * sigma
        record = InnovationRecord(t, y, sigma, accepted, layer)
        self.innovation_log.append(record)

        if not accepted:
            self.consecutive_rejections += 1
            if self.consecutive_rejections >= cfg.rejections_before_inflation:
                self.covariance[POS, POS] *= cfg.rejection_inflation
                self._symmetrize()
                self.consecutive_rejections = 0
            return record

        self.consecutive_rejections = 0
        k = (self.covariance @ h) / s
        self.mean = self.mean + k * y
        ikh = np.eye(STATE_DIM) - np.outer(k, h)
        self.covariance = ikh @ self.covariance @ ikh.T + np.outer(k, k) * r
        self._symmetrize()
        self._check_finite()
        self._maybe_open_gate()
        return record

    def update_aiding(self, mode_kind: str, measurement, noise_rms: float):
        """Velocity aiding inside the fusion filter (same stream the aided INS
        baseline consumes). ``velocity_3d`` observes the INS velocity error
        directly; ``airspeed`` observes |ground velocity - wind|."""
        if mode_kind == "none":
            return
        if mode_kind == "velocity_3d":
            z = self._last_ins_velocity - np.asarray(measurement, dtype=float)[:2]
            for axis in range(2):
                h = np.zeros(STATE_DIM)
                h[2 + axis] = 1.0
                y = z[axis] - self.mean[2 + axis]
                s = float(h @ self.covariance @ h) + noise_rms**2
                k = (self.covariance @ h) / s
                self.mean = self.mean + k * y
                ikh = np.eye(STATE_DIM) - np.outer(k, h)
                self.covariance = (
                    ikh @ self.covariance @ ikh.T + np.outer(k, k) * noise_rms**2
                )
        elif mode_kind == "airspeed":
            rel = self._last_ins_velocity - self.mean[VEL] - self.mean[WIND]
            norm = float(np.linalg.norm(rel))
            if norm < 1.0:
                return
            u = rel / norm
            h = np.zeros(STATE_DIM)
            h[VEL] = -u
            h[WIND] = -u
            r = noise_rms**2 + 0.01**2
            y = float(measurement) - norm
            s = float(h @ self.covariance @ h) + r
            k = (self.covariance @ h) / s
            self.mean = self.mean + k * y
            ikh = np.eye(STATE_DIM) - np.outer(k, h)
            self.covariance = ikh @ self.covariance @ ikh.T + np.outer(k, k) * r
        else:
            raise ValueError(f"unknown aiding kind {mode_kind!r}")
        self._symmetrize()
        self._check_finite()

    def solution(self, ins_position: GeoPosition) -> NavSolution:
        """MagNav-corrected position (raw INS until the gate opens)."""
        pos = self.corrected_position(ins_position)
        return NavSolution(
            position=pos,
            sigma_north=math.sqrt(self.covariance[0, 0]),
            sigma_east=math.sqrt(self.covariance[1, 1]),
            corrected=self.gate_open,
        )

    def export_snapshot(self, vehicle_id: str | None = None, override: bool = False) -> CoefficientSnapshot:
        """Freeze the coefficient block for a later warm start."""
        if not self.gate_open and not override:
            raise NotConvergedError(
                "confidence gate is closed; coefficient estimate not converged"
            )
        return CoefficientSnapshot(
            coefficients=self.mean[COEF].copy(),
            covariance=self.covariance[COEF, COEF].copy(),
            vehicle_id=vehicle_id if vehicle_id is not None else self.config.vehicle_id,
            timestamp=self.t,
        )
