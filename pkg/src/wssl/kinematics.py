"""Serial-link kinematics for all-revolute arms.

Standard (distal) Denavit-Hartenberg forward kinematics, the geometric
Jacobian in the base frame, first-order differential motion between poses
and a damped-least-squares inverse kinematics solver.

Every routine is written against stacks of problems (leading batch axis) and
uses only elementwise arithmetic, so the result for one problem does not
depend on what else shares its batch.  The scalar functions are thin
wrappers over the batched kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "DHRow",
    "Manipulator",
    "Pose",
    "IKSettings",
    "IKBatchResult",
    "dh_transform",
    "forward_kinematics",
    "rpy_to_rotation",
    "jacobian",
    "differential_motion",
    "inverse_kinematics",
    "fk_batch",
    "jacobian_batch",
    "differential_motion_batch",
    "solve_ik_batch",
]


@dataclass(frozen=True)
class DHRow:
    theta_offset: float = 0.0
    d: float = 0.0
    a: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        vals = (self.theta_offset, self.d, self.a, self.alpha)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"DH row entries must be finite, got {vals}")


@dataclass(frozen=True)
class Manipulator:
    """An all-revolute serial-link arm given by its ordered DH rows."""

    rows: tuple

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        if len(self.rows) < 1:
            raise ValueError("a manipulator needs at least one joint")

    @classmethod
    def from_arrays(cls, d, a, alpha, theta_offset=None) -> "Manipulator":
        d, a, alpha = (np.asarray(v, dtype=float).ravel() for v in (d, a, alpha))
        if theta_offset is None:
            theta_offset = np.zeros_like(d)
        theta_offset = np.asarray(theta_offset, dtype=float).ravel()
        if not (len(d) == len(a) == len(alpha) == len(theta_offset)):
            raise ValueError("DH columns must have equal length")
        return cls(tuple(DHRow(float(t), float(dd), float(aa), float(al))
                         for t, dd, aa, al in zip(theta_offset, d, a, alpha)))

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def dh(self) -> np.ndarray:
        """(n, 4) array with columns theta_offset, d, a, alpha."""
        return np.array([[r.theta_offset, r.d, r.a, r.alpha] for r in self.rows])

    @property
    def reach_bound(self) -> float:
        return float(sum(abs(r.a) + abs(r.d) for r in self.rows))

    def scaled(self, s: float) -> "Manipulator":
        return Manipulator(tuple(DHRow(r.theta_offset, r.d * s, r.a * s, r.alpha)
                                 for r in self.rows))

    # plain-text table: one "theta_offset d a alpha" row per line
    def to_table(self) -> str:
        return "".join(f"{r.theta_offset!r} {r.d!r} {r.a!r} {r.alpha!r}\n" for r in self.rows)

    @classmethod
    def from_table(cls, text: str) -> "Manipulator":
        rows = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"line {lineno}: expected 4 DH values, got {len(parts)}")
            rows.append(DHRow(*(float(p) for p in parts)))
        return cls(tuple(rows))

    def to_dict(self) -> dict:
        return {"rows": [[r.theta_offset, r.d, r.a, r.alpha] for r in self.rows]}

    @classmethod
    def from_dict(cls, data: dict) -> "Manipulator":
        if set(data) != {"rows"}:
            raise ValueError(f"manipulator config takes exactly the key 'rows', got {sorted(data)}")
        rows = []
        for row in data["rows"]:
            if isinstance(row, dict):
                unknown = set(row) - {"theta_offset", "d", "a", "alpha"}
                if unknown:
                    raise ValueError(f"unknown DH keys {sorted(unknown)}")
                rows.append(DHRow(**{k: float(v) for k, v in row.items()}))
            else:
                if len(row) != 4:
                    raise ValueError("each DH row needs 4 values: theta_offset d a alpha")
                rows.append(DHRow(*(float(v) for v in row)))
        return cls(tuple(rows))


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "rotation", R)

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, 3].copy(), T[:3, :3].copy())

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.position
        return T

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return (np.abs(R.T @ R - np.eye(3)).max() <= tol
                and abs(np.linalg.det(R) - 1.0) <= tol)


@dataclass
class IKSettings:
    """Parameters of the damped-least-squares solver.

    ``mask`` weights the six components of the differential motion
    (x, y, z, rx, ry, rz); all ones by default.  A zero weight removes a
    component from both the error norm and the Jacobian, which is how a
    position-only target is posed for arms with fewer than six joints.
    """

    tolerance: float = 1e-4
    lambda0: float = 0.1
    r_max: int = 50
    i_max: int = 500
    q0: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be > 0")
        if int(self.r_max) < 1:
            raise ValueError("r_max must be >= 1")
        if int(self.i_max) < 1:
            raise ValueError("i_max must be >= 1")
        self.r_max = int(self.r_max)
        self.i_max = int(self.i_max)
        if self.q0 is not None:
            self.q0 = np.asarray(self.q0, dtype=float).ravel()
            if not np.all(np.isfinite(self.q0)):
                raise ValueError("q0 must be finite")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=float).reshape(6)
            if np.any(self.mask < 0) or not np.any(self.mask > 0):
                raise ValueError("mask weights must be >= 0 and not all zero")

    def start(self, n: int) -> np.ndarray:
        if self.q0 is None:
            return np.zeros(n)
        if len(self.q0) != n:
            raise ValueError(f"q0 has {len(self.q0)} entries, manipulator has {n} joints")
        return self.q0

    def weights(self) -> np.ndarray:
        return np.ones(6) if self.mask is None else self.mask

    def scaled(self, s: float) -> "IKSettings":
        return IKSettings(self.tolerance * s, self.lambda0, self.r_max, self.i_max,
                          self.q0, self.mask)

    def to_dict(self) -> dict:
        out = {"tolerance": self.tolerance, "lambda0": self.lambda0,
               "r_max": self.r_max, "i_max": self.i_max}
        if self.q0 is not None:
            out["q0"] = [float(v) for v in self.q0]
        if self.mask is not None:
            out["mask"] = [float(v) for v in self.mask]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "IKSettings":
        unknown = set(data) - {"tolerance", "lambda0", "r_max", "i_max", "q0", "mask"}
        if unknown:
            raise ValueError(f"unknown IK settings keys {sorted(unknown)}")
        return cls(**data)


# ---------------------------------------------------------------------------
# batched primitives


def _bmm(A, B):
    # fixed-order reduction; a problem's result is independent of batch size
    return (A[..., :, :, None] * B[..., None, :, :]).sum(axis=-2)


def _dh_stack(theta, d, a, alpha):
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    T = np.zeros(np.shape(theta) + (4, 4))
    T[..., 0, 0] = ct
    T[..., 0, 1] = -st * ca
    T[..., 0, 2] = st * sa
    T[..., 0, 3] = a * ct
    T[..., 1, 0] = st
    T[..., 1, 1] = ct * ca
    T[..., 1, 2] = -ct * sa
    T[..., 1, 3] = a * st
    T[..., 2, 1] = sa
    T[..., 2, 2] = ca
    T[..., 2, 3] = d
    T[..., 3, 3] = 1.0
    return T


def fk_frames_batch(dh, q):
    """All joint frames T_0 .. T_n for a stack of arms.

    dh: (B, n, 4) with columns theta_offset, d, a, alpha; q: (B, n).
    Returns (B, n + 1, 4, 4); frame 0 is the base.
    """
    dh = np.asarray(dh, dtype=float)
    q = np.asarray(q, dtype=float)
    B, n = q.shape
    A = _dh_stack(dh[..., 0] + q, dh[..., 1], dh[..., 2], dh[..., 3])
    frames = np.empty((B, n + 1, 4, 4))
    frames[:, 0] = np.eye(4)
    for i in range(n):
        frames[:, i + 1] = _bmm(frames[:, i], A[:, i])
    return frames


def fk_batch(dh, q):
    """End-effector transforms (B, 4, 4)."""
    return fk_frames_batch(dh, q)[:, -1]


def jacobian_batch(dh, q, frames=None):
    """Geometric base-frame Jacobians (B, 6, n)."""
    if frames is None:
        frames = fk_frames_batch(dh, q)
    n = frames.shape[1] - 1
    z = frames[:, :n, :3, 2]
    p = frames[:, :n, :3, 3]
    pe = frames[:, n, :3, 3][:, None, :]
    lin = np.cross(z, pe - p)
    return np.concatenate([lin, z], axis=2).transpose(0, 2, 1)


def differential_motion_batch(p_cur, R_cur, p_tgt, R_tgt):
    """(B, 6) pose error taking the current pose to the target.

    Translation part is the position difference.  Rotation part is the
    axis-angle vector of R_tgt R_cur^T; it agrees with the skew-extraction
    vex(R_tgt R_cur^T - I) to first order but keeps growing with the angle
    up to pi, so DLS steps stay descent directions for large errors.
    """
    M = _bmm(R_tgt, np.swapaxes(R_cur, -1, -2))
    e = np.empty(p_cur.shape[:-1] + (6,))
    e[..., :3] = p_tgt - p_cur
    v = np.empty(p_cur.shape[:-1] + (3,))
    v[..., 0] = 0.5 * (M[..., 2, 1] - M[..., 1, 2])
    v[..., 1] = 0.5 * (M[..., 0, 2] - M[..., 2, 0])
    v[..., 2] = 0.5 * (M[..., 1, 0] - M[..., 0, 1])
    s = np.sqrt((v * v).sum(axis=-1))
    c = np.clip(0.5 * (M[..., 0, 0] + M[..., 1, 1] + M[..., 2, 2] - 1.0), -1.0, 1.0)
    theta = np.arctan2(s, c)
    regular = s > 1e-7
    scale = np.where(regular, theta / np.where(regular, s, 1.0), 1.0)
    rot = scale[..., None] * v
    half_turn = ~regular & (c < 0)
    if np.any(half_turn):
        # axis from (M + I) / 2 = u u^T at theta = pi
        Bm = 0.5 * (M[half_turn] + np.eye(3))
        k = np.argmax(np.diagonal(Bm, axis1=-2, axis2=-1), axis=-1)
        col = Bm[np.arange(len(k)), :, k]
        u = col / np.sqrt(col[np.arange(len(k)), k])[:, None]
        rot[half_turn] = theta[half_turn][:, None] * u
    e[..., 3:] = rot
    return e


@dataclass
class IKBatchResult:
    q: np.ndarray            # (B, n) final joint configuration (meaningful where success)
    success: np.ndarray      # (B,) bool
    iterations: np.ndarray   # (B,) loop count at exit
    error_norm: np.ndarray   # (B,) weighted |e| at exit
    history: Optional[list] = field(default=None, repr=False)


def solve_ik_batch(dh, p_tgt, R_tgt, settings: IKSettings, record: bool = False) -> IKBatchResult:
    """Damped-least-squares IK for a stack of (arm, target) problems.

    Per problem: start at q0 with damping lambda0; each loop stops with
    success once |e| <= tolerance, otherwise takes the step
    dq = (J^T J + lambda^2 I)^-1 J^T e, solved by Cholesky.  A step that
    lowers |e| is accepted and halves lambda (rejection counter reset);
    otherwise lambda doubles and the rejection counter grows.  The solve
    fails once the counter exceeds r_max or after i_max + 1 loops.  A
    numerically non-positive Cholesky pivot counts as a rejection.

    dh: (B, n, 4) or (n, 4); p_tgt: (B, 3); R_tgt: (B, 3, 3).  With
    ``record`` the error norm after each accepted step (starting with the
    initial error) is returned per problem in ``history``.
    """
    from . import _ikcore

    dh = np.asarray(dh, dtype=float)
    if dh.ndim == 2:
        dh = dh[None]
    p_tgt = np.asarray(p_tgt, dtype=float).reshape(-1, 3)
    R_tgt = np.asarray(R_tgt, dtype=float).reshape(-1, 3, 3)
    B = max(dh.shape[0], p_tgt.shape[0], R_tgt.shape[0])
    n = dh.shape[1]
    try:
        dh = np.ascontiguousarray(np.broadcast_to(dh, (B, n, 4)))
        p_tgt = np.ascontiguousarray(np.broadcast_to(p_tgt, (B, 3)))
        R_tgt = np.ascontiguousarray(np.broadcast_to(R_tgt, (B, 3, 3)))
    except ValueError:
        raise ValueError("arm, position and rotation stacks have incompatible lengths") from None
    q0 = np.ascontiguousarray(settings.start(n), dtype=float)
    w = np.ascontiguousarray(settings.weights(), dtype=float)
    args = (w, float(settings.tolerance), float(settings.lambda0),
            int(settings.r_max), int(settings.i_max), q0)

    q_out = np.empty((B, n))
    success = np.zeros(B, dtype=np.bool_)
    iters = np.zeros(B, dtype=np.int64)
    err = np.zeros(B)
    history = None
    if record:
        history = []
        buf = np.empty(settings.i_max + 2)
        for b in range(B):
            ok, it, en, nh = _ikcore.solve_traced(dh[b], p_tgt[b], R_tgt[b], *args, q_out[b], buf)
            success[b], iters[b], err[b] = ok, it, en
            history.append(buf[:nh].tolist())
    elif B:
        _ikcore.solve_many(dh, p_tgt, R_tgt, *args, q_out, success, iters, err)
    return IKBatchResult(q_out, success, iters, err, history)


# ---------------------------------------------------------------------------
# single-problem interface


def dh_transform(row: DHRow, q_i: float) -> np.ndarray:
    """Rz(theta_offset + q) . Tz(d) . Tx(a) . Rx(alpha) as a 4x4 matrix."""
    return _dh_stack(np.float64(row.theta_offset + q_i), np.float64(row.d),
                     np.float64(row.a), np.float64(row.alpha))


def _as_q(m: Manipulator, q) -> np.ndarray:
    q = np.asarray(q, dtype=float).ravel()
    if q.shape[0] != m.n:
        raise ValueError(f"joint vector has {q.shape[0]} entries, manipulator has {m.n} joints")
    return q


def forward_kinematics(m: Manipulator, q) -> Pose:
    q = _as_q(m, q)
    return Pose.from_matrix(fk_batch(m.dh[None], q[None])[0])


def jacobian(m: Manipulator, q) -> np.ndarray:
    q = _as_q(m, q)
    return jacobian_batch(m.dh[None], q[None])[0]


def rpy_to_rotation(n_i: Sequence[float]) -> np.ndarray:
    """R = Rx(roll) Ry(pitch) Rz(yaw)."""
    r, p, y = (float(v) for v in n_i)
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return Rx @ Ry @ Rz


def rpy_to_rotation_batch(rpy) -> np.ndarray:
    rpy = np.asarray(rpy, dtype=float)
    cr, sr = np.cos(rpy[..., 0]), np.sin(rpy[..., 0])
    cp, sp = np.cos(rpy[..., 1]), np.sin(rpy[..., 1])
    cy, sy = np.cos(rpy[..., 2]), np.sin(rpy[..., 2])
    R = np.empty(rpy.shape[:-1] + (3, 3))
    R[..., 0, 0] = cp * cy
    R[..., 0, 1] = -cp * sy
    R[..., 0, 2] = sp
    R[..., 1, 0] = cr * sy + sr * sp * cy
    R[..., 1, 1] = cr * cy - sr * sp * sy
    R[..., 1, 2] = -sr * cp
    R[..., 2, 0] = sr * sy - cr * sp * cy
    R[..., 2, 1] = sr * cy + cr * sp * sy
    R[..., 2, 2] = cr * cp
    return R


def differential_motion(current: Pose, target: Pose) -> np.ndarray:
    return differential_motion_batch(current.position[None], current.rotation[None],
                                     target.position[None], target.rotation[None])[0]


def inverse_kinematics(m: Manipulator, xi: Pose, settings: Optional[IKSettings] = None,
                       history: Optional[list] = None) -> Optional[np.ndarray]:
    """Joint configuration reaching ``xi``, or None when the solver gives up.

    If ``history`` is a list, the error norm after every accepted step
    (starting with the initial error) is appended to it.
    """
    settings = settings or IKSettings()
    res = solve_ik_batch(m.dh[None], xi.position[None], xi.rotation[None], settings,
                         record=history is not None)
    if history is not None:
        history.extend(res.history[0])
    if not res.success[0]:
        return None
    q = res.q[0]
    e = settings.weights() * differential_motion(forward_kinematics(m, q), xi)
    assert np.linalg.norm(e) <= settings.tolerance, "IK returned a configuration outside tolerance"
    return q
