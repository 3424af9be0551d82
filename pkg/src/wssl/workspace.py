"""Voxel scopes and binary workspace maps.

A scope stores one coordinate vector per axis; every combination of their
entries is a grid node.  In constant-orientation mode the node coordinates
are positions and ``n_i`` is a fixed roll-pitch-yaw orientation; in
orientation mode the node coordinates are roll-pitch-yaw angles and ``n_i``
is a fixed position.  A node is set in the bit tensor when the numerical IK
solver reaches its pose.

Node indices on the public interface are 1-based.
"""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .kinematics import (IKSettings, Manipulator, Pose, rpy_to_rotation,
                         rpy_to_rotation_batch, solve_ik_batch)

__all__ = [
    "Mode",
    "Scope",
    "BitTensor",
    "build_scope",
    "node_pose",
    "discretize_workspace",
    "label_nodes",
    "flatten",
    "unflatten",
    "slice_output",
]

DEFAULT_CHUNK = 16384


class Mode(str, Enum):
    CONSTANT_ORIENTATION = "cow"
    ORIENTATION = "ow"


def _axis(lo: float, hi: float, step: float) -> np.ndarray:
    count = int(np.floor((hi - lo) / step + 0.5)) + 1
    if count > 1 and lo + (count - 1) * step > hi + 1e-9 * step:
        count -= 1
    return lo + step * np.arange(count)


@dataclass(frozen=True)
class Scope:
    n_x: np.ndarray
    n_y: np.ndarray
    n_z: np.ndarray
    n_i: np.ndarray
    mode: Mode = Mode.CONSTANT_ORIENTATION

    def __post_init__(self):
        for name in ("n_x", "n_y", "n_z"):
            v = np.asarray(getattr(self, name), dtype=float).ravel()
            if v.size < 1:
                raise ValueError(f"{name} is empty")
            if v.size > 1 and not np.all(np.diff(v) > 0):
                raise ValueError(f"{name} must be strictly increasing")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "n_i", np.asarray(self.n_i, dtype=float).reshape(3))
        object.__setattr__(self, "mode", Mode(self.mode))

    @property
    def dims(self) -> tuple:
        return (self.n_x.size, self.n_y.size, self.n_z.size)

    @property
    def size(self) -> int:
        lx, ly, lz = self.dims
        return lx * ly * lz

    def with_fixed(self, n_i) -> "Scope":
        return Scope(self.n_x, self.n_y, self.n_z, n_i, self.mode)

    def scaled(self, s: float) -> "Scope":
        """Scale the Cartesian part of the scope by ``s``."""
        if self.mode is Mode.CONSTANT_ORIENTATION:
            return Scope(self.n_x * s, self.n_y * s, self.n_z * s, self.n_i, self.mode)
        return Scope(self.n_x, self.n_y, self.n_z, self.n_i * s, self.mode)

    def grid(self) -> np.ndarray:
        """(N, 3) node coordinates in flatten order (x outermost, z innermost)."""
        gx, gy, gz = np.meshgrid(self.n_x, self.n_y, self.n_z, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    def node_poses(self):
        """Positions (N, 3) and rotations (N, 3, 3) of every node, flatten order."""
        g = self.grid()
        if self.mode is Mode.CONSTANT_ORIENTATION:
            R = np.broadcast_to(rpy_to_rotation(self.n_i), (len(g), 3, 3))
            return g, R
        return np.broadcast_to(self.n_i, (len(g), 3)), rpy_to_rotation_batch(g)

    def full_vector(self) -> np.ndarray:
        """Concatenation n_x, n_y, n_z, n_i."""
        return np.concatenate([self.n_x, self.n_y, self.n_z, self.n_i])

    def to_dict(self) -> dict:
        return {"n_x": self.n_x.tolist(), "n_y": self.n_y.tolist(), "n_z": self.n_z.tolist(),
                "n_i": self.n_i.tolist(), "mode": self.mode.value}

    @classmethod
    def from_dict(cls, data: dict) -> "Scope":
        """Accepts explicit vectors or range form (range_min, range_max, delta)."""
        keys = set(data)
        if {"range_min", "range_max", "delta"} <= keys:
            unknown = keys - {"range_min", "range_max", "delta", "n_i", "mode"}
            if unknown:
                raise ValueError(f"unknown scope keys {sorted(unknown)}")
            return build_scope(data["range_min"], data["range_max"], data["delta"],
                               data.get("n_i", (0.0, 0.0, 0.0)), data.get("mode", "cow"))
        unknown = keys - {"n_x", "n_y", "n_z", "n_i", "mode"}
        if unknown:
            raise ValueError(f"unknown scope keys {sorted(unknown)}")
        missing = {"n_x", "n_y", "n_z", "n_i"} - keys
        if missing:
            raise ValueError(f"scope is missing {sorted(missing)}")
        return cls(data["n_x"], data["n_y"], data["n_z"], data["n_i"], data.get("mode", "cow"))


def build_scope(range_min: Sequence[float], range_max: Sequence[float], delta,
                n_i: Sequence[float] = (0.0, 0.0, 0.0), mode=Mode.CONSTANT_ORIENTATION) -> Scope:
    lo = np.asarray(range_min, dtype=float).reshape(3)
    hi = np.asarray(range_max, dtype=float).reshape(3)
    step = np.broadcast_to(np.asarray(delta, dtype=float), (3,))
    if not np.all(np.isfinite(step)) or np.any(step <= 0):
        raise ValueError(f"delta must be positive, got {step.tolist()}")
    if np.any(hi < lo):
        raise ValueError("range_max must not be below range_min")
    axes = [_axis(lo[k], hi[k], step[k]) for k in range(3)]
    return Scope(*axes, n_i=n_i, mode=mode)


def node_pose(scope: Scope, i: int, j: int, k: int) -> Pose:
    lx, ly, lz = scope.dims
    if not (1 <= i <= lx and 1 <= j <= ly and 1 <= k <= lz):
        raise IndexError(f"node ({i}, {j}, {k}) outside grid {scope.dims}")
    node = np.array([scope.n_x[i - 1], scope.n_y[j - 1], scope.n_z[k - 1]])
    if scope.mode is Mode.CONSTANT_ORIENTATION:
        return Pose(node, rpy_to_rotation(scope.n_i))
    return Pose(scope.n_i, rpy_to_rotation(node))


@dataclass(frozen=True)
class BitTensor:
    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits).astype(bool)
        if b.ndim != 3:
            raise ValueError("bit tensor must be 3-D")
        object.__setattr__(self, "bits", b)

    @property
    def dims(self) -> tuple:
        return self.bits.shape

    def __eq__(self, other):
        return isinstance(other, BitTensor) and np.array_equal(self.bits, other.bits)

    def to_text(self) -> str:
        return "".join("1" if b else "0" for b in flatten(self)) + "\n"

    @classmethod
    def from_text(cls, text: str, dims) -> "BitTensor":
        s = text.strip()
        if set(s) - {"0", "1"}:
            raise ValueError("bit text may only contain 0 and 1")
        return unflatten(np.frombuffer(s.encode(), dtype=np.uint8) - ord("0"), dims)

    def to_csv(self, scope: Scope) -> str:
        if scope.dims != self.dims:
            raise ValueError("scope and tensor dimensions differ")
        if scope.mode is Mode.CONSTANT_ORIENTATION:
            header = "x,y,z,bit"
        else:
            header = "roll,pitch,yaw,bit"
        buf = io.StringIO()
        buf.write(header + "\n")
        for (u, v, w), b in zip(scope.grid(), flatten(self)):
            buf.write(f"{float(u)!r},{float(v)!r},{float(w)!r},{int(b)}\n")
        return buf.getvalue()


def flatten(P: BitTensor) -> np.ndarray:
    # C order: c = ((i-1) * l_y + (j-1)) * l_z + (k-1)
    return P.bits.reshape(-1).astype(np.uint8)


def unflatten(y, dims) -> BitTensor:
    y = np.asarray(y).ravel()
    dims = tuple(int(d) for d in dims)
    if y.size != int(np.prod(dims)):
        raise ValueError(f"vector of length {y.size} does not fit dims {dims}")
    return BitTensor(y.reshape(dims).astype(bool))


def slice_output(y, lo: int, hi: int) -> np.ndarray:
    """Elements lo..hi inclusive, 1-based."""
    y = np.asarray(y)
    if not (1 <= lo <= hi <= len(y)):
        raise IndexError(f"slice [{lo}, {hi}] outside 1..{len(y)}")
    return y[lo - 1:hi]


def _prefilter_margin(ik: IKSettings) -> Optional[float]:
    w = ik.weights()[:3]
    if np.any(w <= 0):
        return None
    return ik.tolerance / float(w.min())


def label_nodes(dh, positions, rotations, ik: IKSettings, prefilter: bool = True,
                threads: int = 1, chunk: int = DEFAULT_CHUNK) -> np.ndarray:
    """Reachability of many (arm, node pose) pairs.

    dh: (M, n, 4) arm stack; positions: (M, N, 3); rotations: (M, N, 3, 3).
    Returns a (M, N) bool array.  With ``prefilter`` a node farther from the
    base than the arm's reach bound (plus tolerance) is marked 0 without
    running IK; the solver could not succeed there.
    """
    dh = np.asarray(dh, dtype=float)
    M, n, _ = dh.shape
    positions = np.broadcast_to(np.asarray(positions, dtype=float), (M,) + np.shape(positions)[-2:])
    N = positions.shape[1]
    rotations = np.broadcast_to(np.asarray(rotations, dtype=float), (M, N, 3, 3))
    out = np.zeros((M, N), dtype=bool)

    arm_idx, node_idx = np.meshgrid(np.arange(M), np.arange(N), indexing="ij")
    arm_idx, node_idx = arm_idx.ravel(), node_idx.ravel()
    margin = _prefilter_margin(ik) if prefilter else None
    if margin is not None:
        reach = np.abs(dh[..., 1]).sum(axis=1) + np.abs(dh[..., 2]).sum(axis=1)
        dist = np.sqrt((positions[arm_idx, node_idx] ** 2).sum(axis=1))
        todo = dist <= reach[arm_idx] + margin
        arm_idx, node_idx = arm_idx[todo], node_idx[todo]

    starts = range(0, len(arm_idx), chunk)

    def run(s):
        a, k = arm_idx[s:s + chunk], node_idx[s:s + chunk]
        res = solve_ik_batch(dh[a], positions[a, k], rotations[a, k], ik)
        return a, k, res.success

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(s) for s in starts]
    for a, k, ok in results:
        out[a, k] = ok
    return out


def discretize_workspace(m: Manipulator, scope: Scope, ik: Optional[IKSettings] = None,
                         prefilter: bool = True, threads: int = 1) -> BitTensor:
    ik = ik or IKSettings()
    pos, rot = scope.node_poses()
    bits = label_nodes(m.dh[None], pos[None], rot[None], ik, prefilter=prefilter, threads=threads)
    return unflatten(bits[0], scope.dims)
