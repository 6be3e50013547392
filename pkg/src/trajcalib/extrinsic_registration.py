"""Rigid 3D registration of time-aligned point correspondences.

The closed form minimizes the summed squared point-to-point error via
centroid subtraction and an orthogonal decomposition of the cross
covariance, with the reflection case corrected so a proper rotation is
always returned.  An iterative refinement over a minimal rotation
parameterization is provided for callers that later add weighting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, InsufficientCorrespondencesError
from .temporal_align import CorrespondencePair

COLLINEARITY_FLOOR = 1e-6


@dataclass(eq=False)
class RigidTransform:
    """Rotation and translation mapping sensor-2 coordinates into sensor-1."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        if self.rotation.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.all(np.isfinite(self.rotation)) or not np.all(
            np.isfinite(self.translation)
        ):
            raise ValueError("transform entries must be finite")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"rotation is not orthonormal (|R'R - I| = {err:.2e})")
        det = np.linalg.det(self.rotation)
        if abs(det - 1.0) > 1e-9:
            raise ValueError(f"rotation must be proper (det = {det:.12f})")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(rotation=np.eye(3), translation=np.zeros(3))

    def inverse(self) -> "RigidTransform":
        return RigidTransform(
            rotation=self.rotation.T, translation=-self.rotation.T @ self.translation
        )

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )


@dataclass(eq=False)
class RegistrationResult:
    """Estimated transform with fit quality and geometry diagnostics.

    ``euler_zyx`` reports the rotation as intrinsic Z-Y-X angles in
    degrees; the matrix remains the stored representation.
    ``collinearity`` is the ratio of the second-largest to largest
    singular value of the centered anchor cloud (zero for collinear
    geometry, where the rotation is unidentifiable).
    """

    transform: RigidTransform
    euler_zyx: np.ndarray
    rms_residual: float
    n_pairs: int
    collinearity: float

    def __eq__(self, other):
        if not isinstance(other, RegistrationResult):
            return NotImplemented
        return (
            self.transform == other.transform
            and np.array_equal(self.euler_zyx, other.euler_zyx)
            and self.rms_residual == other.rms_residual
            and self.n_pairs == other.n_pairs
            and self.collinearity == other.collinearity
        )


def apply_transform(transform: RigidTransform, point) -> np.ndarray:
    """Map a point (or (N, 3) stack of points) through R p + t."""
    p = np.asarray(point, dtype=float)
    return p @ transform.rotation.T + transform.translation


def euler_zyx_degrees(rotation: np.ndarray) -> np.ndarray:
    """Intrinsic Z-Y-X (yaw, pitch, roll) angles of a rotation matrix, degrees."""
    r = np.asarray(rotation, dtype=float)
    pitch = np.arcsin(np.clip(-r[2, 0], -1.0, 1.0))
    if abs(r[2, 0]) < 1.0 - 1e-12:
        yaw = np.arctan2(r[1, 0], r[0, 0])
        roll = np.arctan2(r[2, 1], r[2, 2])
    else:
        # Gimbal lock: pitch at +-90 deg leaves only yaw - roll observable.
        yaw = np.arctan2(-r[0, 1], r[1, 1])
        roll = 0.0
    return np.degrees(np.array([yaw, pitch, roll]))


def rotation_from_euler_zyx(angles_deg) -> np.ndarray:
    """Rotation matrix from intrinsic Z-Y-X angles in degrees."""
    yaw, pitch, roll = np.radians(np.asarray(angles_deg, dtype=float))
    cz, sz = np.cos(yaw), np.sin(yaw)
    cy, sy = np.cos(pitch), np.sin(pitch)
    cx, sx = np.cos(roll), np.sin(roll)
    rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    return rz @ ry @ rx


def _point_arrays(pairs: list[CorrespondencePair]):
    if len(pairs) < 3:
        raise InsufficientCorrespondencesError(
            f"registration needs at least 3 pairs, got {len(pairs)}"
        )
    anchor = np.array([p.anchor_state.position for p in pairs])
    other = np.array([p.other_state.position for p in pairs])
    return anchor, other


def _collinearity(anchor_points: np.ndarray) -> float:
    centered = anchor_points - anchor_points.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] <= 0.0:
        return 0.0
    return float(sv[1] / sv[0])


def _result(rotation, translation, anchor, other) -> RegistrationResult:
    residual = anchor - other @ rotation.T - translation
    rms = float(np.sqrt(np.mean(np.sum(residual**2, axis=1))))
    return RegistrationResult(
        transform=RigidTransform(rotation=rotation, translation=translation),
        euler_zyx=euler_zyx_degrees(rotation),
        rms_residual=rms,
        n_pairs=len(anchor),
        collinearity=_collinearity(anchor),
    )


def register(pairs: list[CorrespondencePair]) -> RegistrationResult:
    """Closed-form least-squares rigid alignment of the paired positions.

    Returns the transform mapping other-sensor points onto anchor points.
    Raises for fewer than three pairs or (near-)collinear anchor geometry.
    """
    anchor, other = _point_arrays(pairs)
    collin = _collinearity(anchor)
    if collin < COLLINEARITY_FLOOR:
        raise DegenerateGeometryError(
            f"anchor points are collinear (singular value ratio {collin:.2e} "
            f"< {COLLINEARITY_FLOOR:.0e}); rotation is not identifiable"
        )
    centroid_a = anchor.mean(axis=0)
    centroid_b = other.mean(axis=0)
    h = (other - centroid_b).T @ (anchor - centroid_a)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rotation = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    translation = centroid_a - rotation @ centroid_b
    return _result(rotation, translation, anchor, other)


def _hat(v: np.ndarray) -> np.ndarray:
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )


def _exp_so3(phi: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(phi)
    if angle < 1e-12:
        return np.eye(3) + _hat(phi)
    axis = phi / angle
    k = _hat(axis)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def refine(pairs: list[CorrespondencePair], init: RigidTransform) -> RegistrationResult:
    """Levenberg-Marquardt polish of the registration cost from ``init``.

    Parameterizes the update as a right rotation increment plus a
    translation; only improving steps are accepted, so the result never
    costs more than the initialization.
    """
    anchor, other = _point_arrays(pairs)
    rotation = init.rotation.copy()
    translation = init.translation.copy()

    def cost_of(rot, tr):
        res = anchor - other @ rot.T - tr
        return float(np.sum(res**2)), res

    cost, res = cost_of(rotation, translation)
    lam = 1e-6
    for _ in range(100):
        rotated = other @ rotation.T  # d(R b)/d phi = -R [b]x for R exp(phi^)
        jac = np.empty((len(anchor), 3, 6))
        for i in range(len(anchor)):
            jac[i, :, 0:3] = rotation @ _hat(other[i])
            jac[i, :, 3:6] = -np.eye(3)
        j2 = jac.reshape(-1, 6)
        r2 = res.reshape(-1)
        g = j2.T @ r2
        h = j2.T @ j2

        accepted = False
        for _ in range(25):
            try:
                step = np.linalg.solve(h + lam * np.diag(np.diag(h)) + 1e-300 * np.eye(6), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            rot_new = rotation @ _exp_so3(step[0:3])
            tr_new = translation + step[3:6]
            cost_new, res_new = cost_of(rot_new, tr_new)
            if cost_new <= cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        converged = cost - cost_new <= 1e-14 * max(cost, 1e-300) or np.linalg.norm(step) < 1e-13
        rotation, translation, cost, res = rot_new, tr_new, cost_new, res_new
        lam = max(lam * 0.1, 1e-15)
        if converged:
            break

    # Re-orthonormalize against accumulated floating-point drift.
    u, _, vt = np.linalg.svd(rotation)
    rotation = u @ np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt))]) @ vt
    return _result(rotation, translation, anchor, other)
