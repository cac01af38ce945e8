"""Quaternion helpers.

Quaternions are ``[w, x, y, z]`` arrays. Attitude quaternions here rotate
body-frame vectors into the local-level NED frame (``v_ned = q * v_b * q'``);
Euler angles follow the aerospace 3-2-1 (yaw, pitch, roll) convention with
heading measured from north toward east.
"""

from __future__ import annotations

import math

import numpy as np


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q)


def quat_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Body-to-NED quaternion from 3-2-1 Euler angles (radians)."""
    cr, sr = math.cos(roll / 2), math.sin(roll / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    qz = np.array([cy, 0.0, 0.0, sy])
    qy = np.array([cp, 0.0, sp, 0.0])
    qx = np.array([cr, sr, 0.0, 0.0])
    return quat_multiply(quat_multiply(qz, qy), qx)


def euler_from_quat(q: np.ndarray) -> tuple[float, float, float]:
    """(roll, pitch, yaw) from a body-to-NED quaternion."""
    w, x, y, z = q
    roll = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    s = 2.0 * (w * y - z * x)
    pitch = math.asin(max(-1.0, min(1.0, s)))
    yaw = math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    return roll, pitch, yaw


def quat_from_rotvec(v: np.ndarray) -> np.ndarray:
    """Quaternion for a rotation vector (axis * angle, radians)."""
    angle = math.sqrt(v[0] ** 2 + v[1] ** 2 + v[2] ** 2)
    if angle < 1e-12:
        return np.array([1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]])
    half = 0.5 * angle
    s = math.sin(half) / angle
    return np.array([math.cos(half), v[0] * s, v[1] * s, v[2] * s])


def rotvec_from_quat(q: np.ndarray) -> np.ndarray:
    """Rotation vector of a (near-unit) quaternion."""
    w = max(-1.0, min(1.0, float(q[0])))
    vec = np.asarray(q[1:4], dtype=float)
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        return 2.0 * vec
    angle = 2.0 * math.atan2(norm, w)
    return vec * (angle / norm)


def rot_matrix(q: np.ndarray) -> np.ndarray:
    """Body-to-NED direction cosine matrix of a body-to-NED quaternion."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rot_matrices(q: np.ndarray) -> np.ndarray:
    """Vectorized ``rot_matrix`` for an (N, 4) quaternion array -> (N, 3, 3)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((q.shape[0], 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def rotate_to_body_many(q: np.ndarray, v_ned: np.ndarray) -> np.ndarray:
    """Rotate (N, 3) NED vectors into the body frame given (N, 4) attitudes."""
    return np.einsum("nji,nj->ni", rot_matrices(q), v_ned)


def rotate_to_ned_many(q: np.ndarray, v_body: np.ndarray) -> np.ndarray:
    """Rotate (N, 3) body vectors into NED given (N, 4) attitudes."""
    return np.einsum("nij,nj->ni", rot_matrices(q), v_body)


def yaw_from_quats(q: np.ndarray) -> np.ndarray:
    """Vectorized heading extraction from (N, 4) body-to-NED quaternions."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.arctan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
