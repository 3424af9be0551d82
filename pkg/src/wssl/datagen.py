"""Sampled manipulators, workspace labels and dataset files.

An input vector stacks the DH columns and the scope,
``[r_d, r_a, r_alpha, n_x, n_y, n_z, n_i]``.  A :class:`DistributionSpec`
tags every element as uniform or fixed; the fixed elements are dropped from
the stored inputs and the label vector may be cut down to a slice of the
flattened bit tensor.

Each sample draws from its own stream ``SeedSequence(seed, spawn_key=(i,))``
so a dataset is a pure function of (descriptor, seed, n) regardless of how
the work is chunked.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np

from .kinematics import IKSettings, Manipulator, rpy_to_rotation_batch
from .workspace import Mode, Scope, discretize_workspace, flatten, label_nodes

__all__ = [
    "Uniform",
    "Dirac",
    "DistributionSpec",
    "SubspaceDescriptor",
    "Dataset",
    "spherical_wrist_spec",
    "sample_manipulator",
    "generate_dataset",
    "split_dataset",
    "save_dataset",
    "load_dataset",
    "MAGIC",
]

MAGIC = b"WSSL1"
SPHERICAL_WRIST_TWIST = (math.pi / 2, 0.0, -math.pi / 2, math.pi / 2, -math.pi / 2, 0.0)


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
            raise ValueError(f"Uniform needs finite lo < hi, got ({self.lo}, {self.hi})")

    def to_dict(self):
        return {"uniform": [self.lo, self.hi]}


@dataclass(frozen=True)
class Dirac:
    value: float

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("Dirac value must be finite")

    def to_dict(self):
        return {"dirac": self.value}


Tag = Union[Uniform, Dirac]


def _tag_from(obj) -> Tag:
    if isinstance(obj, (Uniform, Dirac)):
        return obj
    if isinstance(obj, (int, float)):
        return Dirac(float(obj))
    if isinstance(obj, dict) and len(obj) == 1:
        (kind, val), = obj.items()
        if kind == "dirac":
            return Dirac(float(val))
        if kind == "uniform":
            lo, hi = val
            return Uniform(float(lo), float(hi))
    raise ValueError(f"cannot read distribution tag {obj!r}")


@dataclass(frozen=True)
class DistributionSpec:
    """Per-element distribution of the input vector.

    The grid coordinates come from ``scope`` and are always fixed (an
    equi-spaced grid cannot be resampled elementwise); the three entries of
    ``n_i`` carry their own tags.
    """

    r_d: tuple
    r_a: tuple
    r_alpha: tuple
    scope: Scope
    n_i: tuple = (Dirac(0.0), Dirac(0.0), Dirac(0.0))
    beta: Optional[float] = None

    def __post_init__(self):
        for name in ("r_d", "r_a", "r_alpha", "n_i"):
            object.__setattr__(self, name, tuple(_tag_from(t) for t in getattr(self, name)))
        if not (len(self.r_d) == len(self.r_a) == len(self.r_alpha)) or not self.r_d:
            raise ValueError("r_d, r_a and r_alpha need the same nonzero length")
        if len(self.n_i) != 3:
            raise ValueError("n_i needs three tags")

    @property
    def dof(self) -> int:
        return len(self.r_d)

    @property
    def tags(self) -> list:
        grid = [Dirac(float(v)) for v in
                np.concatenate([self.scope.n_x, self.scope.n_y, self.scope.n_z])]
        return [*self.r_d, *self.r_a, *self.r_alpha, *grid, *self.n_i]

    @property
    def input_length(self) -> int:
        return 3 * self.dof + sum(self.scope.dims) + 3

    @cached_property
    def free_indices(self) -> np.ndarray:
        return np.array([k for k, t in enumerate(self.tags) if isinstance(t, Uniform)], dtype=int)

    @property
    def label_length(self) -> int:
        return self.scope.size

    @cached_property
    def _bounds(self):
        tags = self.tags
        lo = np.array([t.value if isinstance(t, Dirac) else t.lo for t in tags])
        hi = np.array([t.value if isinstance(t, Dirac) else t.hi for t in tags])
        return lo, hi

    def contains(self, x, atol: float = 0.0) -> bool:
        """Whether a full input vector lies in the support of this spec."""
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.input_length:
            return False
        lo, hi = self._bounds
        return bool(np.all((x >= lo - atol) & (x <= hi + atol)))

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "mode": self.scope.mode.value,
            "r_d": [t.to_dict() for t in self.r_d],
            "r_a": [t.to_dict() for t in self.r_a],
            "r_alpha": [t.to_dict() for t in self.r_alpha],
            "n_x": self.scope.n_x.tolist(),
            "n_y": self.scope.n_y.tolist(),
            "n_z": self.scope.n_z.tolist(),
            "n_i": [t.to_dict() for t in self.n_i],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DistributionSpec":
        allowed = {"beta", "mode", "r_d", "r_a", "r_alpha", "n_x", "n_y", "n_z", "n_i", "scope"}
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown distribution keys {sorted(unknown)}")
        n_i = [_tag_from(t) for t in data.get("n_i", [0.0, 0.0, 0.0])]
        fixed_i = [t.value if isinstance(t, Dirac) else 0.0 for t in n_i]
        if "scope" in data:
            scope = Scope.from_dict({**data["scope"], "n_i": fixed_i,
                                     "mode": data.get("mode", data["scope"].get("mode", "cow"))})
        else:
            scope = Scope(data["n_x"], data["n_y"], data["n_z"], fixed_i, data.get("mode", "cow"))
        return cls(data["r_d"], data["r_a"], data["r_alpha"], scope, tuple(n_i), data.get("beta"))


def spherical_wrist_spec(beta: float = 0.5, scope: Optional[Scope] = None,
                         n_i: Sequence = (0.0, 0.0, 0.0)) -> DistributionSpec:
    """6-DOF spherical-wrist family: d3, d4, a2, a3 uniform on (0, beta).

    Without an explicit scope the grid is [-2 beta, 2 beta]^3 with spacing
    beta (constant orientation).
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    U = Uniform(0.0, float(beta))
    r_d = (Dirac(0.0), Dirac(0.0), U, U, Dirac(0.0), Dirac(0.0))
    r_a = (Dirac(0.0), U, U, Dirac(0.0), Dirac(0.0), Dirac(0.0))
    r_alpha = tuple(Dirac(v) for v in SPHERICAL_WRIST_TWIST)
    tags = tuple(_tag_from(t) for t in n_i)
    if scope is None:
        from .workspace import build_scope
        scope = build_scope([-2 * beta] * 3, [2 * beta] * 3, beta)
    fixed_i = [t.value if isinstance(t, Dirac) else 0.0 for t in tags]
    scope = scope.with_fixed(fixed_i)
    return DistributionSpec(r_d, r_a, r_alpha, scope, tags, float(beta))


@dataclass(frozen=True)
class SubspaceDescriptor:
    """A subspace: input distribution, output slice and a stable id.

    ``output_slice`` is a 1-based inclusive (lo, hi) pair into the flattened
    label vector; None keeps every node.
    """

    id: str
    spec: DistributionSpec
    output_slice: Optional[tuple] = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("descriptor id must be non-empty")
        total = self.spec.label_length
        if self.output_slice is None:
            object.__setattr__(self, "output_slice", (1, total))
        lo, hi = (int(v) for v in self.output_slice)
        if not (1 <= lo <= hi <= total):
            raise ValueError(f"output slice ({lo}, {hi}) outside 1..{total}")
        object.__setattr__(self, "output_slice", (lo, hi))

    @property
    def free_indices(self) -> np.ndarray:
        return self.spec.free_indices

    @property
    def input_dim(self) -> int:
        return len(self.free_indices)

    @property
    def output_dim(self) -> int:
        lo, hi = self.output_slice
        return hi - lo + 1

    def expand(self, X) -> np.ndarray:
        """Full input vectors from rows holding only the free elements."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        base = np.array([t.value if isinstance(t, Dirac) else np.nan for t in self.spec.tags])
        full = np.tile(base, (X.shape[0], 1))
        full[:, self.free_indices] = X
        return full

    def to_dict(self) -> dict:
        return {"id": self.id, "spec": self.spec.to_dict(),
                "output_slice": list(self.output_slice)}

    @classmethod
    def from_dict(cls, data: dict) -> "SubspaceDescriptor":
        unknown = set(data) - {"id", "spec", "output_slice"}
        if unknown:
            raise ValueError(f"unknown descriptor keys {sorted(unknown)}")
        sl = data.get("output_slice")
        return cls(str(data["id"]), DistributionSpec.from_dict(data["spec"]),
                   tuple(sl) if sl is not None else None)


def _draw(tags, rng) -> np.ndarray:
    out = np.empty(len(tags))
    for k, t in enumerate(tags):
        out[k] = rng.uniform(t.lo, t.hi) if isinstance(t, Uniform) else t.value
    return out


def sample_manipulator(spec: DistributionSpec, rng: np.random.Generator):
    """Draw one arm; returns (Manipulator, full input vector).

    Only uniform elements consume random numbers, in input-vector order.
    """
    n = spec.dof
    dh_part = _draw([*spec.r_d, *spec.r_a, *spec.r_alpha], rng)
    n_i = _draw(spec.n_i, rng)
    m = Manipulator.from_arrays(dh_part[:n], dh_part[n:2 * n], dh_part[2 * n:])
    s = spec.scope
    x = np.concatenate([dh_part, s.n_x, s.n_y, s.n_z, n_i])
    return m, x


def sample_stream(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    descriptor: SubspaceDescriptor
    seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.uint8)
        if self.X.ndim != 2 or self.Y.ndim != 2 or self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("X and Y must be 2-D with equal row counts")

    def __len__(self):
        return self.X.shape[0]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.X[rows], self.Y[rows], self.descriptor, self.seed, dict(self.meta))

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = [f"x_{k}" for k in range(self.X.shape[1])] + [f"y_{k}" for k in range(self.Y.shape[1])]
        buf.write(",".join(cols) + "\n")
        for x, y in zip(self.X, self.Y):
            buf.write(",".join([repr(float(v)) for v in x] + [str(int(v)) for v in y]) + "\n")
        return buf.getvalue()


def _node_poses_for(spec: DistributionSpec, full: np.ndarray):
    """Node positions and rotations for each row of full input vectors."""
    s = spec.scope
    g = s.grid()
    n_i = full[:, -3:]
    M = full.shape[0]
    if s.mode is Mode.CONSTANT_ORIENTATION:
        pos = np.broadcast_to(g, (M,) + g.shape)
        rot = rpy_to_rotation_batch(n_i)[:, None, :, :]
        rot = np.broadcast_to(rot, (M, len(g), 3, 3))
    else:
        pos = np.broadcast_to(n_i[:, None, :], (M, len(g), 3))
        rot = np.broadcast_to(rpy_to_rotation_batch(g), (M, len(g), 3, 3))
    return pos, rot


def label_inputs(desc: SubspaceDescriptor, full: np.ndarray, ik: IKSettings,
                 threads: int = 1, max_nodes: int = 1 << 18) -> np.ndarray:
    """Sliced labels (rows, output_dim) for full input vectors."""
    spec = desc.spec
    n = spec.dof
    lo, hi = desc.output_slice
    N = spec.label_length
    rows_per = max(1, max_nodes // N)
    out = np.empty((full.shape[0], hi - lo + 1), dtype=np.uint8)
    for s in range(0, full.shape[0], rows_per):
        part = full[s:s + rows_per]
        dh = np.stack([np.zeros((len(part), n)), part[:, :n], part[:, n:2 * n],
                       part[:, 2 * n:3 * n]], axis=-1)
        pos, rot = _node_poses_for(spec, part)
        # only the sliced nodes are ever needed
        bits = label_nodes(dh, pos[:, lo - 1:hi], rot[:, lo - 1:hi], ik, threads=threads)
        out[s:s + rows_per] = bits
    return out


def generate_dataset(n: int, desc: SubspaceDescriptor, ik: Optional[IKSettings] = None,
                     seed: int = 0, threads: int = 1, check_fraction: float = 0.01) -> Dataset:
    """Sample ``n`` arms from the descriptor's distribution and label their workspaces.

    A ``check_fraction`` of rows (at least one) is relabeled through
    :func:`discretize_workspace` one arm at a time and must match.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    ik = ik or IKSettings()
    full = np.empty((n, desc.spec.input_length))
    for i in range(n):
        _, full[i] = sample_manipulator(desc.spec, sample_stream(seed, i))
    Y = label_inputs(desc, full, ik, threads=threads)
    X = full[:, desc.free_indices]

    if check_fraction > 0:
        k = max(1, int(math.ceil(check_fraction * n)))
        check_rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0, 1)))
        rows = check_rng.choice(n, size=min(k, n), replace=False)
        for r in rows:
            y_ref = relabel(desc, full[r], ik)
            if not np.array_equal(y_ref, Y[r]):
                raise RuntimeError(f"label check failed on row {r}")
    return Dataset(X, Y, desc, int(seed), {"n": n})


def relabel(desc: SubspaceDescriptor, x_full, ik: IKSettings) -> np.ndarray:
    """Label one full input vector through the single-arm workspace path."""
    spec = desc.spec
    n = spec.dof
    x_full = np.asarray(x_full, dtype=float)
    m = Manipulator.from_arrays(x_full[:n], x_full[n:2 * n], x_full[2 * n:3 * n])
    scope = spec.scope.with_fixed(x_full[-3:])
    y = flatten(discretize_workspace(m, scope, ik))
    lo, hi = desc.output_slice
    return y[lo - 1:hi]


def split_dataset(d: Dataset, ratios=(0.7, 0.15, 0.15), seed: int = 0):
    """Random (train, validation, test) partition.

    Validation and test get floor(ratio * n) rows, train takes the rest.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    n = len(d)
    n_val = int(math.floor(ratios[1] * n + 1e-9))
    n_test = int(math.floor(ratios[2] * n + 1e-9))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"{n} samples cannot fill a {ratios} split")
    perm = np.random.default_rng(np.random.SeedSequence(int(seed))).permutation(n)
    return (d.subset(perm[:n_train]), d.subset(perm[n_train:n_train + n_val]),
            d.subset(perm[n_train + n_val:]))


# ---------------------------------------------------------------------------
# WSSL1 container
#
#   b"WSSL1\n"
#   one line of compact JSON: descriptor, seed, n, x_cols, y_cols, grid dims
#   X: n * x_cols little-endian float64, row-major
#   Y: n rows of packed bits (MSB first), each row padded to a byte boundary


def dumps_dataset(d: Dataset) -> bytes:
    header = {
        "descriptor": d.descriptor.to_dict(),
        "seed": d.seed,
        "n": len(d),
        "x_cols": d.X.shape[1],
        "y_cols": d.Y.shape[1],
        "grid": list(d.descriptor.spec.scope.dims),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    x = d.X.astype("<f8").tobytes(order="C")
    y = np.packbits(d.Y.astype(np.uint8), axis=1).tobytes() if len(d) else b""
    return MAGIC + b"\n" + head + b"\n" + x + y


def loads_dataset(blob: bytes) -> Dataset:
    if not blob.startswith(MAGIC + b"\n"):
        raise ValueError("not a WSSL1 dataset")
    rest = blob[len(MAGIC) + 1:]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl].decode())
    body = rest[nl + 1:]
    n, xc, yc = header["n"], header["x_cols"], header["y_cols"]
    xbytes = n * xc * 8
    row_bytes = (yc + 7) // 8
    if len(body) != xbytes + n * row_bytes:
        raise ValueError("WSSL1 payload size does not match header")
    X = np.frombuffer(body[:xbytes], dtype="<f8").reshape(n, xc).astype(np.float64)
    packed = np.frombuffer(body[xbytes:], dtype=np.uint8).reshape(n, row_bytes)
    Y = np.unpackbits(packed, axis=1, count=yc)
    desc = SubspaceDescriptor.from_dict(header["descriptor"])
    return Dataset(X, Y, desc, header["seed"], {"n": n})


def save_dataset(d: Dataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_dataset(d))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        return loads_dataset(fh.read())
