"""Strapdown INS simulation: IMU error injection, mechanization, and aiding.

The IMU error model follows the usual decomposition: initial bias (drawn once,
uniform within the spec bound), a bias random walk sized to reach the
bias-instability figure after one hour, white noise set by the random-walk
coefficients (VRW/ARW), and a fixed per-axis scale error. Mechanization is
local-level NED with constant gravity; Schuler/Coriolis/earth-rate terms are
off by default (desk-scale flights) and available behind a flag.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._quat import quat_from_rotvec, rot_matrices, rotvec_from_quat
from .geomag import EARTH_RADIUS_M, GeoPosition
from .platform import BodyAttitude
from .series import PoseSeries

logger = logging.getLogger(__name__)

GRAVITY = 9.80665  # m/s^2
EARTH_RATE = 7.292115e-5  # rad/s, used only when earth_rotation is enabled

_SQRT_HOUR = 60.0  # sqrt-seconds per sqrt-hour
_BIAS_WALK_HORIZON_S = 3600.0  # bias random walk reaches the instability figure here


@dataclass(frozen=True)
class ImuSpec:
    """IMU error budget. Units follow data-sheet conventions.

    ``velocity_random_walk``/``angle_random_walk`` drive the white-noise
    simulation; the equivalent ``*_noise_density`` figures are kept for
    reference and used only when the random-walk figure is zero (the two are
    redundant descriptions of the same noise).
    """

    accel_bias_instability: float = 0.0  # g
    accel_initial_bias: float = 0.0  # g, uniform bound
    accel_noise_density: float = 0.0  # g/sqrt(Hz)
    velocity_random_walk: float = 0.0  # m/s/sqrt(hr)
    gyro_bias_instability: float = 0.0  # deg/hr
    gyro_initial_bias: float = 0.0  # deg/hr, uniform bound
    angle_random_walk: float = 0.0  # deg/sqrt(hr)
    accel_scale_error_ppm: float = 0.0
    gyro_scale_error_ppm: float = 0.0
    sample_rate: float = 50.0  # Hz

    def __post_init__(self):
        values = [
            self.accel_bias_instability, self.accel_initial_bias,
            self.accel_noise_density, self.velocity_random_walk,
            self.gyro_bias_instability, self.gyro_initial_bias,
            self.angle_random_walk, self.accel_scale_error_ppm,
            self.gyro_scale_error_ppm,
        ]
        if any(v < 0 for v in values):
            raise ValueError("IMU spec values must be >= 0")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be > 0")

    def accel_white_sigma(self, dt: float) -> float:
        """Per-sample accelerometer white noise std, m/s^2."""
        if self.velocity_random_walk > 0.0:
            return self.velocity_random_walk / _SQRT_HOUR / math.sqrt(dt)
        return self.accel_noise_density * GRAVITY / math.sqrt(dt)

    def gyro_white_sigma(self, dt: float) -> float:
        """Per-sample gyroscope white noise std, rad/s."""
        if self.angle_random_walk > 0.0:
            return math.radians(self.angle_random_walk) / _SQRT_HOUR / math.sqrt(dt)
        return math.radians(self.accel_noise_density) / math.sqrt(dt)


def strategic_grade(sample_rate: float = 50.0) -> ImuSpec:
    """Strategic-grade IMU preset used for the INS comparisons."""
    return ImuSpec(
        accel_bias_instability=7e-6,
        accel_initial_bias=100e-6,
        accel_noise_density=30e-6,
        velocity_random_walk=0.017,
        gyro_bias_instability=0.001,
        gyro_initial_bias=0.01,
        angle_random_walk=0.001,
        accel_scale_error_ppm=340.0,
        gyro_scale_error_ppm=80.0,
        sample_rate=sample_rate,
    )


@dataclass
class InsState:
    """Mechanized navigation state at one instant."""

    position: GeoPosition
    velocity: np.ndarray  # (3,) NED m/s
    attitude: BodyAttitude
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=float)
        if np.linalg.norm(self.velocity) >= 400.0:
            raise ValueError("velocity outside the simulation envelope (400 m/s)")


@dataclass(frozen=True)
class AidingMode:
    """INS velocity aiding configuration.

    ``kind`` is one of ``none``, ``airspeed``, ``velocity_3d``. For airspeed,
    the measurement is |ground velocity - wind|; the wind is the configured
    bias plus a slow random walk.
    """

    kind: str = "none"
    noise_rms: float = 0.0
    wind_north: float = 0.0
    wind_east: float = 0.0
    wind_walk_rms: float = 0.005  # m/s per sqrt(s)

    def __post_init__(self):
        if self.kind not in ("none", "airspeed", "velocity_3d"):
            raise ValueError(f"unknown aiding kind {self.kind!r}")
        if self.noise_rms < 0 or self.wind_walk_rms < 0:
            raise ValueError("noise terms must be >= 0")


def corrupt_imu(
    truth_accel: np.ndarray,
    truth_gyro: np.ndarray,
    spec: ImuSpec,
    rng: np.random.Generator,
    vibration_multiplier: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Apply the IMU error model to truth specific force and angular rate.

    Inputs are (N, 3) body-frame arrays at ``spec.sample_rate``. The
    vibration multiplier scales the white-noise terms only (ground-vehicle
    scenarios).
    """
    truth_accel = np.asarray(truth_accel, dtype=float)
    truth_gyro = np.asarray(truth_gyro, dtype=float)
    n = truth_accel.shape[0]
    dt = 1.0 / spec.sample_rate

    accel_bias0 = rng.uniform(-1.0, 1.0, 3) * spec.accel_initial_bias * GRAVITY
    gyro_bias0 = rng.uniform(-1.0, 1.0, 3) * math.radians(spec.gyro_initial_bias) / 3600.0
    accel_scale = 1.0 + rng.uniform(-1.0, 1.0, 3) * spec.accel_scale_error_ppm * 1e-6
    gyro_scale = 1.0 + rng.uniform(-1.0, 1.0, 3) * spec.gyro_scale_error_ppm * 1e-6

    walk_sigma_a = spec.accel_bias_instability * GRAVITY * math.sqrt(dt / _BIAS_WALK_HORIZON_S)
    walk_sigma_g = (
        math.radians(spec.gyro_bias_instability) / 3600.0
        * math.sqrt(dt / _BIAS_WALK_HORIZON_S)
    )
    accel_walk = np.cumsum(rng.normal(0.0, walk_sigma_a, (n, 3)), axis=0)
    gyro_walk = np.cumsum(rng.normal(0.0, walk_sigma_g, (n, 3)), axis=0)

    white_a = rng.normal(0.0, spec.accel_white_sigma(dt) * vibration_multiplier, (n, 3))
    white_g = rng.normal(0.0, spec.gyro_white_sigma(dt) * vibration_multiplier, (n, 3))

    accel = truth_accel * accel_scale + accel_bias0 + accel_walk + white_a
    gyro = truth_gyro * gyro_scale + gyro_bias0 + gyro_walk + white_g
    return accel, gyro


def derive_imu_increments(truth: PoseSeries) -> tuple[np.ndarray, np.ndarray]:
    """Invert the mechanization: body specific force and angular rate that
    reproduce a truth series exactly under ``ins_mechanize``."""
    dt = truth.dt
    n = len(truth)
    q = truth.q
    gyro = np.empty((n - 1, 3))
    for k in range(n - 1):
        a = q[k]
        b = q[k + 1]
        # conj(q_k) * q_{k+1}
        dq = np.array(
            [
                a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3],
                a[0] * b[1] - a[1] * b[0] - a[2] * b[3] + a[3] * b[2],
                a[0] * b[2] + a[1] * b[3] - a[2] * b[0] - a[3] * b[1],
                a[0] * b[3] - a[1] * b[2] + a[2] * b[1] - a[3] * b[0],
            ]
        )
        gyro[k] = rotvec_from_quat(dq) / dt
    vel = np.column_stack([truth.vn, truth.ve, truth.vd])
    a_ned = np.diff(vel, axis=0) / dt
    f_ned = a_ned - np.array([0.0, 0.0, GRAVITY])
    rot = rot_matrices(q[:-1])  # body->NED at interval start
    accel = np.einsum("nji,nj->ni", rot, f_ned)
    return accel, gyro


def ins_mechanize(
    accel: np.ndarray,
    gyro: np.ndarray,
    initial: InsState,
    dt: float,
    earth_rotation: bool = False,
) -> PoseSeries:
    """Integrate measured increments into a navigation solution.

    ``accel``/``gyro`` are (N, 3) body-frame measurements; the output has
    N + 1 samples starting at the initial state. Local-level NED frame,
    constant gravity; the ``earth_rotation`` flag adds Coriolis and transport
    rate (and with them Schuler dynamics) at the cost of a slow path.
    """
    accel = np.asarray(accel, dtype=float)
    gyro = np.asarray(gyro, dtype=float)
    n = accel.shape[0] + 1
    if earth_rotation:
        return _mechanize_full(accel, gyro, initial, dt)

    q = np.empty((n, 4))
    q[0] = initial.attitude.q_body_to_ned
    qw, qx, qy, qz = q[0]
    gx_l, gy_l, gz_l = (gyro[:, 0] * dt).tolist(), (gyro[:, 1] * dt).tolist(), (gyro[:, 2] * dt).tolist()
    max_drift = 0.0
    for k in range(n - 1):
        rx, ry, rz = gx_l[k], gy_l[k], gz_l[k]
        angle = math.sqrt(rx * rx + ry * ry + rz * rz)
        if angle < 1e-12:
            dw, dx, dy, dz = 1.0, 0.5 * rx, 0.5 * ry, 0.5 * rz
        else:
            half = 0.5 * angle
            s = math.sin(half) / angle
            dw, dx, dy, dz = math.cos(half), rx * s, ry * s, rz * s
        nw = qw * dw - qx * dx - qy * dy - qz * dz
        nx = qw * dx + qx * dw + qy * dz - qz * dy
        ny = qw * dy - qx * dz + qy * dw + qz * dx
        nz = qw * dz + qx * dy - qy * dx + qz * dw
        norm2 = nw * nw + nx * nx + ny * ny + nz * nz
        drift = abs(norm2 - 1.0)
        if drift > max_drift:
            max_drift = drift
        inv = 1.0 / math.sqrt(norm2)
        qw, qx, qy, qz = nw * inv, nx * inv, ny * inv, nz * inv
        q[k + 1, 0] = qw
        q[k + 1, 1] = qx
        q[k + 1, 2] = qy
        q[k + 1, 3] = qz
    if max_drift > 1e-6:
        logger.warning("attitude norm drift %.2e exceeded 1e-6; renormalized", max_drift)

    f_ned = np.einsum("nij,nj->ni", rot_matrices(q[:-1]), accel)
    a_ned = f_ned + np.array([0.0, 0.0, GRAVITY])

    vel = np.empty((n, 3))
    vel[0] = initial.velocity
    vel[1:] = initial.velocity + np.cumsum(a_ned * dt, axis=0)

    # Trapezoid-consistent position step: p_{k+1} = p_k + v_k dt + a_k dt^2 / 2
    disp = vel[:-1] * dt + 0.5 * a_ned * dt * dt
    north = np.concatenate([[0.0], np.cumsum(disp[:, 0])])
    down = np.concatenate([[0.0], np.cumsum(disp[:, 2])])
    lat = initial.position.latitude + north / EARTH_RADIUS_M
    d_lon = disp[:, 1] / (EARTH_RADIUS_M * np.cos(lat[:-1]))
    lon = initial.position.longitude + np.concatenate([[0.0], np.cumsum(d_lon)])
    alt = initial.position.altitude - down
    t = np.arange(n) * dt
    return PoseSeries(t, lat, lon, alt, vel[:, 0], vel[:, 1], vel[:, 2], q)


def _mechanize_full(accel, gyro, initial, dt):
    """Slow path with earth rate, transport rate, and Coriolis terms."""
    n = accel.shape[0] + 1
    q = np.empty((n, 4))
    q[0] = initial.attitude.q_body_to_ned
    lat = np.empty(n)
    lon = np.empty(n)
    alt = np.empty(n)
    vel = np.empty((n, 3))
    lat[0] = initial.position.latitude
    lon[0] = initial.position.longitude
    alt[0] = initial.position.altitude
    vel[0] = initial.velocity
    g_ned = np.array([0.0, 0.0, GRAVITY])
    from ._quat import quat_multiply, quat_normalize, rot_matrix

    for k in range(n - 1):
        phi = lat[k]
        v = vel[k]
        omega_ie = EARTH_RATE * np.array([math.cos(phi), 0.0, -math.sin(phi)])
        omega_en = np.array(
            [
                v[1] / EARTH_RADIUS_M,
                -v[0] / EARTH_RADIUS_M,
                -v[1] * math.tan(phi) / EARTH_RADIUS_M,
            ]
        )
        c_bn = rot_matrix(q[k])
        omega_body = gyro[k] - c_bn.T @ (omega_ie + omega_en)
        q[k + 1] = quat_normalize(
            quat_multiply(q[k], quat_from_rotvec(omega_body * dt))
        )
        a = c_bn @ accel[k] - np.cross(2.0 * omega_ie + omega_en, v) + g_ned
        vel[k + 1] = v + a * dt
        lat[k + 1] = phi + (v[0] * dt + 0.5 * a[0] * dt * dt) / EARTH_RADIUS_M
        lon[k + 1] = lon[k] + (v[1] * dt + 0.5 * a[1] * dt * dt) / (
            EARTH_RADIUS_M * math.cos(phi)
        )
        alt[k + 1] = alt[k] - (v[2] * dt + 0.5 * a[2] * dt * dt)
    t = np.arange(n) * dt
    return PoseSeries(t, lat, lon, alt, vel[:, 0], vel[:, 1], vel[:, 2], q)


def generate_wind_series(
    mode: AidingMode, t: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """True wind (N, 2) north/east: constant bias plus a slow random walk."""
    n = t.shape[0]
    wind = np.tile([mode.wind_north, mode.wind_east], (n, 1))
    if mode.wind_walk_rms > 0.0 and n > 1:
        dt = float(t[1] - t[0])
        steps = rng.normal(0.0, mode.wind_walk_rms * math.sqrt(dt), (n - 1, 2))
        wind[1:] += np.cumsum(steps, axis=0)
    return wind


def aid_ins(
    ins: PoseSeries,
    mode: AidingMode,
    truth: PoseSeries,
    rng: np.random.Generator,
    update_hz: float = 1.0,
    process_accel_noise: float = 2.0e-3,
) -> PoseSeries:
    """Velocity-aid an INS solution with an error-state Kalman filter.

    The filter estimates [dp_n, dp_e, dv_n, dv_e] (+ wind north/east for
    airspeed aiding) where d means INS-minus-truth, observing either the full
    velocity or the airspeed magnitude. Returns the corrected series;
    ``mode.kind == "none"`` returns the input untouched.
    """
    if mode.kind == "none":
        return ins
    if len(ins) != len(truth):
        raise ValueError("ins and truth series must share a time base")
    n = len(ins)
    dt = ins.dt
    stride = max(1, int(round(1.0 / (update_hz * dt))))
    epochs = np.arange(stride, n, stride)

    wind_true = generate_wind_series(mode, truth.t, rng)
    nx = 6 if mode.kind == "airspeed" else 4
    x = np.zeros(nx)
    p = np.zeros((nx, nx))
    p[0, 0] = p[1, 1] = 10.0**2
    p[2, 2] = p[3, 3] = 0.5**2
    if nx == 6:
        p[4, 4] = p[5, 5] = 10.0**2

    seg_p = [x[0:2].copy()]
    seg_v = [x[2:4].copy()]
    seg_t = [float(ins.t[0])]

    q_vel = (process_accel_noise**2)
    last_t = float(ins.t[0])
    for idx in epochs:
        t_now = float(ins.t[idx])
        step = t_now - last_t
        # propagate: dp integrates dv; dv (and wind) random walk
        x[0:2] += x[2:4] * step
        f = np.eye(nx)
        f[0, 2] = f[1, 3] = step
        q = np.zeros((nx, nx))
        q[2, 2] = q[3, 3] = q_vel * step
        q[0, 0] = q[1, 1] = 1e-6 * step
        if nx == 6:
            q[4, 4] = q[5, 5] = (mode.wind_walk_rms**2) * step
        p = f @ p @ f.T + q
        last_t = t_now

        v_ins = np.array([ins.vn[idx], ins.ve[idx]])
        v_truth = np.array([truth.vn[idx], truth.ve[idx]])
        if mode.kind == "velocity_3d":
            z = v_ins - (v_truth + rng.normal(0.0, mode.noise_rms, 2))
            h = np.zeros((2, nx))
            h[0, 2] = h[1, 3] = 1.0
            r = np.eye(2) * mode.noise_rms**2
            y = z - h @ x
            s = h @ p @ h.T + r
            k_gain = p @ h.T @ np.linalg.inv(s)
            x = x + k_gain @ y
            p = (np.eye(nx) - k_gain @ h) @ p
        else:  # airspeed
            rel_true = v_truth - wind_true[idx]
            meas = np.linalg.norm(rel_true) + rng.normal(0.0, mode.noise_rms)
            rel_est = v_ins - x[2:4] - x[4:6]
            norm = np.linalg.norm(rel_est)
            if norm < 1.0:
                continue  # direction ill-defined at near-zero airspeed
            u = rel_est / norm
            h = np.zeros((1, nx))
            h[0, 2:4] = -u
            h[0, 4:6] = -u
            r = mode.noise_rms**2 + 0.01**2
            y = meas - norm
            s = float((h @ p @ h.T)[0, 0]) + r
            k_gain = (p @ h.T / s).ravel()
            x = x + k_gain * y
            p = (np.eye(nx) - np.outer(k_gain, h)) @ p
        p = 0.5 * (p + p.T)
        seg_p.append(x[0:2].copy())
        seg_v.append(x[2:4].copy())
        seg_t.append(t_now)

    # Piecewise-linear reconstruction of the position correction per sample.
    sample_seg = np.searchsorted(np.array(seg_t), ins.t, side="right") - 1
    seg_p_arr = np.array(seg_p)
    seg_v_arr = np.array(seg_v)
    seg_t_arr = np.array(seg_t)
    elapsed = ins.t - seg_t_arr[sample_seg]
    dp = seg_p_arr[sample_seg] + seg_v_arr[sample_seg] * elapsed[:, None]

    lat = ins.lat - dp[:, 0] / EARTH_RADIUS_M
    lon = ins.lon - dp[:, 1] / (EARTH_RADIUS_M * np.cos(ins.lat))
    return PoseSeries(
        ins.t.copy(), lat, lon, ins.alt.copy(),
        ins.vn - seg_v_arr[sample_seg][:, 0],
        ins.ve - seg_v_arr[sample_seg][:, 1],
        ins.vd.copy(), ins.q.copy(),
    )
