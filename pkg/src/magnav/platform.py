"""Platform magnetic interference and magnetometer simulation.

The vehicle's magnetic signature is an 18-term coefficient set (3 permanent,
6 induced, 9 eddy) whose scalar effect is the projection of the interference
vector onto the field direction. Scalar and vector magnetometer readings are
simulated from a truth field, an attitude, and a sensor noise specification;
onboard vs outboard mounting differs only through the sensor spec.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._quat import euler_from_quat, quat_normalize, rot_matrix, rotate_to_body_many
from .errors import DegenerateFieldError, SingularSystemError
from .geomag import FieldVector

TL_DIM = 18
TL_SCHEMA_VERSION = 1

# Minimum field magnitude for a well-defined direction, nT.
_MIN_FIELD_NT = 1000.0


@dataclass(frozen=True)
class TlCoefficients:
    """Platform signature coefficients.

    ``permanent`` is in nT, ``induced`` is the dimensionless upper triangle
    (xx, xy, xz, yy, yz, zz) of a symmetric matrix, ``eddy`` is a full 3x3
    row-major block in seconds acting on the body-frame field rate. The
    canonical serialization is the 18-vector
    ``[permanent | induced | eddy]`` in that order.
    """

    permanent: np.ndarray
    induced: np.ndarray
    eddy: np.ndarray

    def __post_init__(self):
        for name, arr, size in (
            ("permanent", self.permanent, 3),
            ("induced", self.induced, 6),
            ("eddy", self.eddy, 9),
        ):
            a = np.asarray(arr, dtype=float)
            if a.shape != (size,):
                raise ValueError(f"{name} must have shape ({size},)")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} must be finite")
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def zero(cls) -> "TlCoefficients":
        return cls(np.zeros(3), np.zeros(6), np.zeros(9))

    @classmethod
    def from_vector(cls, v) -> "TlCoefficients":
        v = np.asarray(v, dtype=float)
        if v.shape != (TL_DIM,):
            raise ValueError(f"coefficient vector must have shape ({TL_DIM},)")
        return cls(v[0:3].copy(), v[3:9].copy(), v[9:18].copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.permanent, self.induced, self.eddy])

    def induced_matrix(self) -> np.ndarray:
        xx, xy, xz, yy, yz, zz = self.induced
        return np.array([[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]])

    def eddy_matrix(self) -> np.ndarray:
        return self.eddy.reshape(3, 3)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": TL_SCHEMA_VERSION,
            "coefficients": self.as_vector().tolist(),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "TlCoefficients":
        if data.get("schema_version") != TL_SCHEMA_VERSION:
            raise ValueError(
                f"unsupported coefficient schema {data.get('schema_version')!r}"
            )
        return cls.from_vector(np.array(data["coefficients"], dtype=float))


@dataclass(frozen=True)
class MagSensorSpec:
    """Magnetometer noise/bandwidth description.

    ``extra_noise_rms`` is the magnetic environment term that distinguishes an
    onboard mounting from an outboard one; it adds in quadrature with the
    intrinsic white noise ``noise_density * sqrt(bandwidth)``. Sampling below
    the Nyquist rate of the bandwidth is allowed; the simulation draws white
    noise per sample, which models the aliased wide-band noise.
    """

    noise_density: float = 8.0e-5  # nT/sqrt(Hz)
    bandwidth: float = 250.0  # Hz
    sample_rate: float = 250.0  # Hz
    heading_error_amplitude: float = 0.0  # nT, scalar sensors
    misalignment: tuple[float, float, float] = (0.0, 0.0, 0.0)  # rad, vector sensors
    extra_noise_rms: float = 0.0  # nT

    def __post_init__(self):
        if self.noise_density < 0 or self.extra_noise_rms < 0:
            raise ValueError("noise terms must be >= 0")
        if self.bandwidth <= 0 or self.sample_rate <= 0:
            raise ValueError("bandwidth and sample rate must be > 0")
        if any(abs(a) >= 0.1 for a in self.misalignment):
            raise ValueError("misalignment angles must satisfy |angle| < 0.1 rad")

    def white_noise_rms(self) -> float:
        return self.noise_density * math.sqrt(self.bandwidth)

    def total_noise_rms(self) -> float:
        return math.hypot(self.white_noise_rms(), self.extra_noise_rms)


class BodyAttitude:
    """Vehicle attitude: unit quaternion mapping local-level NED to body."""

    def __init__(self, q_ned_to_body):
        q = np.asarray(q_ned_to_body, dtype=float)
        if q.shape != (4,):
            raise ValueError("quaternion must have 4 components")
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {norm} too far from 1")
        self.q = quat_normalize(q)

    @classmethod
    def from_euler(cls, roll: float, pitch: float, yaw: float) -> "BodyAttitude":
        from ._quat import quat_conjugate, quat_from_euler

        return cls(quat_conjugate(quat_from_euler(roll, pitch, yaw)))

    @property
    def q_body_to_ned(self) -> np.ndarray:
        from ._quat import quat_conjugate

        return quat_conjugate(self.q)

    def matrix_ned_to_body(self) -> np.ndarray:
        return rot_matrix(self.q_body_to_ned).T

    def to_body(self, v_ned: np.ndarray) -> np.ndarray:
        return self.matrix_ned_to_body() @ np.asarray(v_ned, dtype=float)

    def to_ned(self, v_body: np.ndarray) -> np.ndarray:
        return self.matrix_ned_to_body().T @ np.asarray(v_body, dtype=float)

    @property
    def heading(self) -> float:
        return euler_from_quat(self.q_body_to_ned)[2]


def tl_regressors_many(field_body: np.ndarray, field_rate_body: np.ndarray) -> np.ndarray:
    """Regressor rows for (N, 3) body-frame fields and field rates -> (N, 18).

    Order: unit-direction components (3); direction x field upper triangle
    (xx, xy, xz, yy, yz, zz) where off-diagonal entries carry both symmetric
    contributions (6); direction (x) field-rate outer product, row-major (9).
    """
    B = np.atleast_2d(np.asarray(field_body, dtype=float))
    Bdot = np.atleast_2d(np.asarray(field_rate_body, dtype=float))
    mag = np.linalg.norm(B, axis=1)
    if np.any(mag <= _MIN_FIELD_NT):
        raise DegenerateFieldError(
            f"field magnitude {mag.min():.1f} nT too small for a stable direction"
        )
    b = B / mag[:, None]
    out = np.empty((B.shape[0], TL_DIM))
    out[:, 0:3] = b
    out[:, 3] = b[:, 0] * B[:, 0]
    out[:, 4] = b[:, 0] * B[:, 1] + b[:, 1] * B[:, 0]
    out[:, 5] = b[:, 0] * B[:, 2] + b[:, 2] * B[:, 0]
    out[:, 6] = b[:, 1] * B[:, 1]
    out[:, 7] = b[:, 1] * B[:, 2] + b[:, 2] * B[:, 1]
    out[:, 8] = b[:, 2] * B[:, 2]
    out[:, 9:18] = (b[:, :, None] * Bdot[:, None, :]).reshape(-1, 9)
    return out


def tl_regressors(field_body, field_rate_body) -> np.ndarray:
    """18-element regressor vector for one body-frame field/field-rate pair."""
    return tl_regressors_many(field_body, field_rate_body)[0]


def scalar_perturbation(coeffs: TlCoefficients, regressors: np.ndarray) -> float:
    """Scalar interference (nT): dot of the coefficient vector with regressors."""
    return float(np.dot(coeffs.as_vector(), np.asarray(regressors, dtype=float)))


def interference_vector(
    coeffs: TlCoefficients, field_body: np.ndarray, field_rate_body: np.ndarray
) -> np.ndarray:
    """Body-frame interference vector p + M_ind B + M_eddy Bdot (nT)."""
    B = np.asarray(field_body, dtype=float)
    Bdot = np.asarray(field_rate_body, dtype=float)
    return coeffs.permanent + coeffs.induced_matrix() @ B + coeffs.eddy_matrix() @ Bdot


def misalignment_matrix(angles) -> np.ndarray:
    """Small mounting-misalignment rotation, composed Rx(a) Ry(b) Rz(c)."""
    a, b, c = angles
    ca, sa = math.cos(a), math.sin(a)
    cb, sb = math.cos(b), math.sin(b)
    cc, sc = math.cos(c), math.sin(c)
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rz = np.array([[cc, -sc, 0], [sc, cc, 0], [0, 0, 1]])
    return rx @ ry @ rz


def simulate_scalar_measurement(
    truth_field: FieldVector,
    attitude: BodyAttitude,
    field_rate_body: np.ndarray,
    coeffs: TlCoefficients,
    spec: MagSensorSpec,
    temporal: float,
    rng: np.random.Generator,
    exact_contamination: bool = False,
) -> float:
    """One scalar magnetometer reading (nT).

    Truth total intensity plus the platform interference (first-order
    projection by default, exact vector sum when ``exact_contamination``),
    the temporal offset, a heading-dependent error, and white noise draws for
    the intrinsic sensor and the mounting environment.
    """
    b_body = attitude.to_body(truth_field.as_array())
    if exact_contamination:
        d = interference_vector(coeffs, b_body, field_rate_body)
        base = float(np.linalg.norm(b_body + d))
    else:
        regs = tl_regressors(b_body, field_rate_body)
        base = truth_field.magnitude() + scalar_perturbation(coeffs, regs)
    base += temporal
    base += spec.heading_error_amplitude * math.sin(2.0 * attitude.heading)
    base += rng.normal(0.0, spec.white_noise_rms())
    base += rng.normal(0.0, spec.extra_noise_rms)
    return base


def simulate_vector_measurement(
    truth_field: FieldVector,
    attitude: BodyAttitude,
    spec: MagSensorSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """One vector magnetometer reading in the body frame (nT)."""
    b_body = attitude.to_body(truth_field.as_array())
    measured = misalignment_matrix(spec.misalignment) @ b_body
    measured = measured + rng.normal(0.0, spec.white_noise_rms(), size=3)
    measured = measured + rng.normal(0.0, spec.extra_noise_rms, size=3)
    return measured


def simulate_scalar_series(
    field_ned: np.ndarray,
    q_body_to_ned: np.ndarray,
    coeffs: TlCoefficients,
    spec: MagSensorSpec,
    temporal: np.ndarray,
    dt: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Vectorized scalar magnetometer stream over an (N, 3)/(N, 4) series.

    The eddy field rate comes from first differences of the body-frame truth
    field at the sample rate (zero at the first sample).
    """
    from ._quat import yaw_from_quats

    b_body = rotate_to_body_many(q_body_to_ned, field_ned)
    rate = np.zeros_like(b_body)
    rate[1:] = np.diff(b_body, axis=0) / dt
    regs = tl_regressors_many(b_body, rate)
    base = np.linalg.norm(field_ned, axis=1) + regs @ coeffs.as_vector()
    base = base + np.asarray(temporal, dtype=float)
    heading = yaw_from_quats(q_body_to_ned)
    base = base + spec.heading_error_amplitude * np.sin(2.0 * heading)
    n = base.shape[0]
    base = base + rng.normal(0.0, spec.white_noise_rms(), size=n)
    base = base + rng.normal(0.0, spec.extra_noise_rms, size=n)
    return base


def simulate_vector_series(
    field_ned: np.ndarray,
    q_body_to_ned: np.ndarray,
    spec: MagSensorSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """Vectorized vector magnetometer stream (body frame, nT)."""
    b_body = rotate_to_body_many(q_body_to_ned, field_ned)
    measured = b_body @ misalignment_matrix(spec.misalignment).T
    measured = measured + rng.normal(0.0, spec.white_noise_rms(), size=b_body.shape)
    measured = measured + rng.normal(0.0, spec.extra_noise_rms, size=b_body.shape)
    return measured


def fit_tl_batch(
    regressors: np.ndarray, residuals: np.ndarray, ridge: float = 0.0
) -> tuple[TlCoefficients, float]:
    """Batch ridge least-squares over (N, 18) regressors and scalar residuals.

    This is the offline oracle the online filter is compared against, not a
    product path. Returns the coefficients and the post-fit residual RMS.
    With ``ridge == 0`` a rank-deficient system (e.g. straight-and-level-only
    data) raises ``SingularSystemError``.
    """
    A = np.asarray(regressors, dtype=float)
    y = np.asarray(residuals, dtype=float)
    if A.ndim != 2 or A.shape[1] != TL_DIM:
        raise ValueError(f"regressors must be (N, {TL_DIM})")
    if A.shape[0] < TL_DIM:
        raise ValueError(f"need at least {TL_DIM} samples, got {A.shape[0]}")
    if ridge < 0.0:
        raise ValueError("ridge must be >= 0")
    if ridge == 0.0 and np.linalg.matrix_rank(A) < TL_DIM:
        raise SingularSystemError(
            "regressor matrix is rank deficient; use ridge > 0"
        )
    # Augmented system rather than normal equations: keeps the conditioning
    # of A instead of squaring it.
    a_aug = np.vstack([A, math.sqrt(ridge) * np.eye(TL_DIM)])
    y_aug = np.concatenate([y, np.zeros(TL_DIM)])
    coeffs, *_ = np.linalg.lstsq(a_aug, y_aug, rcond=None)
    rms = float(np.sqrt(np.mean((y - A @ coeffs) ** 2)))
    return TlCoefficients.from_vector(coeffs), rms
