"""Rigid/similarity transform algebra, point-set registration and camera placement.

Conventions:
  * Quaternions are (w, x, y, z), unit norm, canonicalized to w >= 0 on
    construction so that equal rotations compare equal.
  * A ``RigidTransform`` maps points by ``p' = R @ p + t``.
  * Tangent vectors are (rotational, translational) pairs; ``exp`` uses the
    full SE(3) exponential (the V-matrix couples rotation and translation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


class DegenerateGeometryError(ValueError):
    """Raised when a point configuration cannot determine a transform."""


class NoConsensusError(RuntimeError):
    """Raised when RANSAC finds no model with enough inliers."""


def _normalize_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).reshape(4)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("zero-norm quaternion")
    q = q / n
    # Canonical double-cover representative: w >= 0, ties broken on the
    # first nonzero vector component.
    if q[0] < 0 or (q[0] == 0 and _first_nonzero_sign(q[1:]) < 0):
        q = -q
    return q


def _first_nonzero_sign(v: np.ndarray) -> float:
    for x in v:
        if x != 0:
            return math.copysign(1.0, x)
    return 1.0


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


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array(
        [
            [1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy)],
            [2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx)],
            [2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    # Shepperd's method: pick the largest diagonal combination for stability.
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    return _normalize_quat(q)


def _hat(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]], dtype=np.float64)


@dataclass(frozen=True)
class RigidTransform:
    """An SE(3) element: unit quaternion rotation plus translation in meters."""

    quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "quat", _normalize_quat(self.quat))
        object.__setattr__(self, "trans", np.asarray(self.trans, dtype=np.float64).reshape(3))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform()

    @staticmethod
    def from_matrix(R: np.ndarray, t: np.ndarray) -> "RigidTransform":
        return RigidTransform(matrix_to_quat(R), t)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to a (3,) point or (N, 3) point array."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation_matrix.T + self.trans

    def inverse(self) -> "RigidTransform":
        R = self.rotation_matrix
        return RigidTransform(
            np.array([self.quat[0], -self.quat[1], -self.quat[2], -self.quat[3]]),
            -R.T @ self.trans,
        )

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def almost_equal(self, other: "RigidTransform", tol: float = 1e-9) -> bool:
        return pose_distance(self, other, rot_weight=1.0) < tol

    def as_dict(self) -> dict:
        return {"quat": self.quat.tolist(), "trans": self.trans.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "RigidTransform":
        return RigidTransform(np.asarray(d["quat"]), np.asarray(d["trans"]))


@dataclass(frozen=True)
class SimilarityTransform:
    """A Sim(3) element: positive scale on top of a rigid transform."""

    scale: float
    rigid: RigidTransform

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    def apply(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return self.scale * (p @ self.rigid.rotation_matrix.T) + self.rigid.trans

    def inverse(self) -> "SimilarityTransform":
        R = self.rigid.rotation_matrix
        inv_scale = 1.0 / self.scale
        return SimilarityTransform(
            inv_scale,
            RigidTransform(
                np.array([self.rigid.quat[0], *(-self.rigid.quat[1:])]),
                -inv_scale * (R.T @ self.rigid.trans),
            ),
        )

    def __matmul__(self, other: "SimilarityTransform") -> "SimilarityTransform":
        # (s1, R1, t1) o (s2, R2, t2): p -> s1 R1 (s2 R2 p + t2) + t1
        q = quat_multiply(self.rigid.quat, other.rigid.quat)
        t = self.scale * (other.rigid.trans @ self.rigid.rotation_matrix.T) + self.rigid.trans
        return SimilarityTransform(self.scale * other.scale, RigidTransform(q, t))

    def apply_pose(self, pose: RigidTransform) -> RigidTransform:
        """Map a camera-to-world pose through this frame change (scale acts on position only)."""
        R = quat_multiply(self.rigid.quat, pose.quat)
        return RigidTransform(R, self.apply(pose.trans))


@dataclass(frozen=True)
class TangentVector6:
    """Tangent-space coordinates at a pose: rotation (rad) and translation (m) parts."""

    rot: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rot", np.asarray(self.rot, dtype=np.float64).reshape(3))
        object.__setattr__(self, "trans", np.asarray(self.trans, dtype=np.float64).reshape(3))

    @staticmethod
    def from_array(v: np.ndarray) -> "TangentVector6":
        v = np.asarray(v, dtype=np.float64).reshape(6)
        return TangentVector6(v[:3], v[3:])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.rot, self.trans])


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Composition: (a o b)(p) = a(b(p))."""
    q = quat_multiply(a.quat, b.quat)
    t = a.apply(b.trans)
    return RigidTransform(q, t)


def exp(v: TangentVector6) -> RigidTransform:
    """SE(3) exponential map."""
    w = v.rot
    theta = np.linalg.norm(w)
    K = _hat(w)
    if theta < 1e-8:
        # Second-order Taylor keeps exp/log consistent through zero.
        R = np.eye(3) + K + 0.5 * (K @ K)
        V = np.eye(3) + 0.5 * K + (K @ K) / 6.0
    else:
        s, c = math.sin(theta), math.cos(theta)
        R = np.eye(3) + (s / theta) * K + ((1 - c) / theta**2) * (K @ K)
        V = np.eye(3) + ((1 - c) / theta**2) * K + ((theta - s) / theta**3) * (K @ K)
    return RigidTransform(matrix_to_quat(R), V @ v.trans)


def log(T: RigidTransform) -> TangentVector6:
    """SE(3) logarithm; inverse of :func:`exp` for rotation angle < pi.

    At angle exactly pi the branch follows the canonical quaternion (w >= 0),
    so the returned rotation vector has magnitude <= pi.
    """
    w_q = np.clip(T.quat[0], -1.0, 1.0)
    theta = 2.0 * math.acos(w_q)
    vec = T.quat[1:]
    s = np.linalg.norm(vec)
    if s < 1e-12 or theta < 1e-12:
        w = np.zeros(3)
        theta = 0.0
    else:
        w = vec / s * theta
    K = _hat(w)
    if theta < 1e-8:
        Vinv = np.eye(3) - 0.5 * K + (K @ K) / 12.0
    else:
        half = 0.5 * theta
        cot_term = (1.0 - half * math.cos(half) / math.sin(half)) / theta**2
        Vinv = np.eye(3) - 0.5 * K + cot_term * (K @ K)
    return TangentVector6(w, Vinv @ T.trans)


def rotation_angle(a: RigidTransform, b: RigidTransform) -> float:
    """Geodesic angle between the two rotations, in radians (in [0, pi]).

    Uses the quaternion chord (4 asin(|qa -/+ qb| / 2)), which stays accurate
    near zero where acos of the dot product loses ~8 digits.
    """
    chord = min(float(np.linalg.norm(a.quat - b.quat)), float(np.linalg.norm(a.quat + b.quat)))
    return 4.0 * math.asin(min(1.0, 0.5 * chord))


def pose_distance(a: RigidTransform, b: RigidTransform, rot_weight: float = 0.1) -> float:
    """Translation distance plus ``rot_weight`` (m/rad) times the geodesic angle."""
    if rot_weight < 0:
        raise ValueError("rot_weight must be >= 0")
    return float(np.linalg.norm(a.trans - b.trans)) + rot_weight * rotation_angle(a, b)


@dataclass(frozen=True)
class CorrespondenceSet:
    """Matched point pairs with pixel locations and confidences.

    3D points are expressed in whatever frames the producing matcher
    documents (camera frames for depth-lifted matches).
    """

    points_a: np.ndarray  # (N, 3) m
    points_b: np.ndarray  # (N, 3) m
    pixels_a: np.ndarray  # (N, 2) px
    pixels_b: np.ndarray  # (N, 2) px
    confidence: np.ndarray  # (N,) in [0, 1]
    source: str = "oracle"

    def __post_init__(self):
        for name in ("points_a", "points_b", "pixels_a", "pixels_b", "confidence"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = len(self)
        if self.points_a.shape != (n, 3) or self.points_b.shape != (n, 3):
            raise ValueError("points must be (N, 3)")
        if self.pixels_a.shape != (n, 2) or self.pixels_b.shape != (n, 2):
            raise ValueError("pixels must be (N, 2)")
        if n and (self.confidence.min() < 0 or self.confidence.max() > 1):
            raise ValueError("confidences must lie in [0, 1]")

    def __len__(self) -> int:
        return self.points_a.shape[0] if self.points_a.ndim == 2 else 0

    def subset(self, mask: np.ndarray) -> "CorrespondenceSet":
        return CorrespondenceSet(
            self.points_a[mask],
            self.points_b[mask],
            self.pixels_a[mask],
            self.pixels_b[mask],
            self.confidence[mask],
            self.source,
        )

    @staticmethod
    def from_points(points_a, points_b, confidence=None, source="oracle") -> "CorrespondenceSet":
        points_a = np.asarray(points_a, dtype=np.float64)
        n = points_a.shape[0]
        if confidence is None:
            confidence = np.ones(n)
        return CorrespondenceSet(points_a, points_b, np.zeros((n, 2)), np.zeros((n, 2)), confidence, source)


def umeyama_align(src: np.ndarray, dst: np.ndarray) -> SimilarityTransform:
    """Least-squares Sim(3) mapping src points onto dst points (SVD closed form).

    Requires at least 3 non-collinear pairs. Planar sets are fine; the
    reflection branch keeps the rotation proper.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("src/dst must be matching (N, 3) arrays")
    n = src.shape[0]
    if n < 3:
        raise DegenerateGeometryError(f"need >= 3 point pairs, got {n}")

    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    src_c = src - mu_src
    dst_c = dst - mu_dst

    cov = dst_c.T @ src_c / n
    U, S, Vt = np.linalg.svd(cov)
    # Collinear sources leave the rotation underdetermined.
    if S[1] < 1e-12 * max(S[0], 1e-300):
        raise DegenerateGeometryError("point set is collinear or degenerate")

    d = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        d[2] = -1.0
    R = U @ np.diag(d) @ Vt

    var_src = (src_c**2).sum() / n
    scale = float(np.dot(S, d) / var_src)
    if not scale > 0:
        raise DegenerateGeometryError("non-positive scale; source variance degenerate")
    t = mu_dst - scale * (R @ mu_src)
    return SimilarityTransform(scale, RigidTransform.from_matrix(R, t))


def _fit_se3(pa: np.ndarray, pb: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Raw weighted Kabsch on (N, 3) arrays; returns (R, t)."""
    mu_a = w @ pa
    mu_b = w @ pb
    a_c = pa - mu_a
    b_c = pb - mu_b
    cov = (b_c * w[:, None]).T @ a_c
    U, S, Vt = np.linalg.svd(cov)
    if S[1] < 1e-12 * max(S[0], 1e-300):
        raise DegenerateGeometryError("correspondences are collinear or degenerate")
    d = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        d[2] = -1.0
    R = U @ np.diag(d) @ Vt
    t = mu_b - R @ mu_a
    return R, t


def procrustes_se3(c: CorrespondenceSet, weights: np.ndarray | None = None) -> RigidTransform:
    """Weighted least-squares SE(3) (unit scale) mapping points_a onto points_b."""
    n = len(c)
    if n < 3:
        raise DegenerateGeometryError(f"need >= 3 point pairs, got {n}")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(n)
        if w.min() < 0:
            raise ValueError("weights must be non-negative")
    wsum = w.sum()
    if wsum <= 0:
        raise DegenerateGeometryError("all weights are zero")
    R, t = _fit_se3(c.points_a, c.points_b, w / wsum)
    return RigidTransform.from_matrix(R, t)


def ransac_procrustes(
    c: CorrespondenceSet,
    iterations: int = 512,
    inlier_threshold: float = 0.01,
    min_inliers: int = 3,
    seed: int = 0,
) -> tuple[RigidTransform, np.ndarray]:
    """RANSAC around :func:`procrustes_se3` with 3-point samples.

    Sampling is index-based from a generator seeded with ``seed`` and a fixed
    iteration count, so results are deterministic for a given input order.
    The winning model is refit on its full inlier set.
    """
    n = len(c)
    if n < 3:
        raise DegenerateGeometryError(f"need >= 3 correspondences, got {n}")
    rng = np.random.default_rng(seed)
    samples = rng.random((iterations, n)).argsort(axis=1)[:, :3]

    pa, pb = c.points_a, c.points_b
    w3 = np.full(3, 1.0 / 3.0)
    best_count = -1
    best_mask = None
    for idx in samples:
        try:
            R, t = _fit_se3(pa[idx], pb[idx], w3)
        except DegenerateGeometryError:
            continue
        residuals = np.linalg.norm(pa @ R.T + t - pb, axis=1)
        mask = residuals < inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask

    if best_mask is None or best_count < max(min_inliers, 3):
        raise NoConsensusError(
            f"no consensus: best sample had {max(best_count, 0)} inliers, need {min_inliers}"
        )

    # Refit on the consensus set, then report inliers of the refit model.
    wn = np.full(int(best_mask.sum()), 1.0 / int(best_mask.sum()))
    R, t = _fit_se3(pa[best_mask], pb[best_mask], wn)
    residuals = np.linalg.norm(pa @ R.T + t - pb, axis=1)
    inlier_mask = residuals < inlier_threshold
    if int(inlier_mask.sum()) >= 3 and not np.array_equal(inlier_mask, best_mask):
        wn = np.full(int(inlier_mask.sum()), 1.0 / int(inlier_mask.sum()))
        R, t = _fit_se3(pa[inlier_mask], pb[inlier_mask], wn)
        residuals = np.linalg.norm(pa @ R.T + t - pb, axis=1)
        inlier_mask = residuals < inlier_threshold
    return RigidTransform.from_matrix(R, t), inlier_mask


def fibonacci_hemisphere(
    n: int,
    center: np.ndarray,
    radius: float,
    elevation_range: tuple[float, float] = (0.0, math.pi / 2),
    up: np.ndarray = (0.0, 0.0, 1.0),
) -> np.ndarray:
    """Low-discrepancy points on a spherical band around ``up``.

    Elevation is the angle above the plane orthogonal to ``up``. Sample i=0
    sits at the top of the band and i=n-1 at the bottom (so n=1 returns the
    single top-of-band point); azimuths advance by the golden angle.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not radius > 0:
        raise ValueError("radius must be positive")
    lo, hi = float(elevation_range[0]), float(elevation_range[1])
    if not (0.0 <= lo < hi <= math.pi / 2 + 1e-12):
        raise ValueError("need 0 <= lo < hi <= pi/2")
    center = np.asarray(center, dtype=np.float64).reshape(3)
    up = np.asarray(up, dtype=np.float64).reshape(3)
    up = up / np.linalg.norm(up)
    e1 = _any_orthonormal(up)
    e2 = np.cross(up, e1)

    i = np.arange(n, dtype=np.float64)
    frac = i / (n - 1) if n > 1 else np.zeros(1)
    z = math.sin(hi) - frac * (math.sin(hi) - math.sin(lo))  # sin(elevation)
    rho = np.sqrt(np.clip(1.0 - z**2, 0.0, 1.0))
    az = GOLDEN_ANGLE * i
    dirs = (
        rho[:, None] * np.cos(az)[:, None] * e1
        + rho[:, None] * np.sin(az)[:, None] * e2
        + z[:, None] * up
    )
    return center + radius * dirs


def _any_orthonormal(u: np.ndarray) -> np.ndarray:
    ref = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    v = np.cross(u, ref)
    return v / np.linalg.norm(v)


def look_at(eye: np.ndarray, target: np.ndarray, up: np.ndarray = (0.0, 0.0, 1.0)) -> RigidTransform:
    """World-to-camera transform with camera +z pointing from eye to target.

    Camera axes follow the pinhole convention used by the renderer: +x right,
    +y down, +z forward. Raises if ``up`` is parallel to the gaze direction.
    """
    eye = np.asarray(eye, dtype=np.float64).reshape(3)
    target = np.asarray(target, dtype=np.float64).reshape(3)
    up = np.asarray(up, dtype=np.float64).reshape(3)
    fwd = target - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("eye and target coincide")
    fwd = fwd / n
    right = np.cross(fwd, up)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        raise ValueError("up vector is parallel to the gaze direction")
    right = right / rn
    down = np.cross(fwd, right)  # completes right-handed (x, y, z) = (right, down, fwd)
    R = np.stack([right, down, fwd])
    return RigidTransform(matrix_to_quat(R), -R @ eye)


def camera_position(world_to_cam: RigidTransform) -> np.ndarray:
    """Camera center in world coordinates."""
    R = world_to_cam.rotation_matrix
    return -R.T @ world_to_cam.trans


def random_rigid_transform(rng: np.random.Generator, max_trans: float = 1.0) -> RigidTransform:
    """Uniform random rotation (quaternion on S^3) and bounded translation."""
    q = rng.normal(size=4)
    t = rng.uniform(-max_trans, max_trans, size=3)
    return RigidTransform(q, t)
