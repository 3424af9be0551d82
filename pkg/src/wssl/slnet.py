"""Feedforward networks with per-subspace parameter sets.

The network is a stack of tanh layers followed by an affine output layer,
written directly in numpy.  Training is full batch: every epoch is one
gradient evaluation over the whole training split and one optimizer step.
A :class:`SubspaceBank` keeps one parameter set per subspace descriptor
behind a shared hidden architecture and dispatches queries by linear search.
"""

from __future__ import annotations

import base64
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "NetArchitecture",
    "ParameterSet",
    "Loss",
    "Optimizer",
    "TrainConfig",
    "TrainLog",
    "Metrics",
    "RpropState",
    "TrainingDiverged",
    "SubspaceBank",
    "init_parameters",
    "forward",
    "loss",
    "gradient",
    "rprop_update",
    "train",
    "threshold_filter",
    "evaluate",
    "bank_predict",
    "subspace_nll_check",
]


class Loss(str, Enum):
    MSE = "mse"
    MAE = "mae"
    CROSS_ENTROPY = "cross_entropy"


class Optimizer(str, Enum):
    RPROP = "rprop"
    GD = "gd"
    VARIABLE_LR_GD = "gda"


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class NetArchitecture:
    input_dim: int
    hidden_sizes: tuple
    output_dim: int

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden_sizes):
            raise ValueError("all layer sizes must be >= 1")

    @property
    def layer_sizes(self) -> list:
        return [self.input_dim, *self.hidden_sizes, self.output_dim]

    @property
    def n_layers(self) -> int:
        return len(self.hidden_sizes) + 1


@dataclass
class ParameterSet:
    """Weights W[j] with shape (fan_out, fan_in) and biases b[j]."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def copy(self) -> "ParameterSet":
        return ParameterSet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b.ravel()])
                               for w, b in zip(self.weights, self.biases)])

    def unflat(self, vec) -> "ParameterSet":
        vec = np.asarray(vec, dtype=float)
        ws, bs, k = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(vec[k:k + w.size].reshape(w.shape).copy())
            k += w.size
            bs.append(vec[k:k + b.size].copy())
            k += b.size
        if k != vec.size:
            raise ValueError("flat vector length does not match parameter shapes")
        return ParameterSet(ws, bs)

    def equals(self, other: "ParameterSet") -> bool:
        return (len(self.weights) == len(other.weights)
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
                and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases)))

    def matches(self, arch: NetArchitecture) -> bool:
        sizes = arch.layer_sizes
        return (len(self.weights) == arch.n_layers
                and all(w.shape == (sizes[j + 1], sizes[j]) for j, w in enumerate(self.weights))
                and all(b.shape == (sizes[j + 1],) for j, b in enumerate(self.biases)))


def init_parameters(arch: NetArchitecture, seed: int = 0) -> ParameterSet:
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    sizes = arch.layer_sizes
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return ParameterSet(ws, bs)


def _check_input(arch: NetArchitecture, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != arch.input_dim:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {arch.input_dim}")
    return x


def _activations(params: ParameterSet, X: np.ndarray) -> list:
    hs = [X]
    last = len(params.weights) - 1
    for j, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = hs[-1] @ W.T + b
        hs.append(z if j == last else np.tanh(z))
    return hs


def forward(arch: NetArchitecture, params: ParameterSet, x) -> np.ndarray:
    """Network output for one input (d,) or a batch (B, d)."""
    x = _check_input(arch, x)
    single = x.ndim == 1
    out = _activations(params, np.atleast_2d(x))[-1]
    return out[0] if single else out


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _log_sigmoid(z):
    # log(sigma(z)) without overflow
    return -np.logaddexp(0.0, -z)


def loss(kind, y_hat, y) -> float:
    kind = Loss(kind)
    y_hat = np.asarray(y_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if y_hat.shape != y.shape:
        raise ValueError(f"shape mismatch {y_hat.shape} vs {y.shape}")
    if kind is Loss.MSE:
        return float(np.mean((y - y_hat) ** 2))
    if kind is Loss.MAE:
        return float(np.mean(np.abs(y - y_hat)))
    return float(np.mean(-(y * _log_sigmoid(y_hat) + (1 - y) * _log_sigmoid(-y_hat))))


def _loss_grad_output(kind: Loss, y_hat, y):
    scale = 1.0 / y_hat.size
    if kind is Loss.MSE:
        return 2.0 * (y_hat - y) * scale
    if kind is Loss.MAE:
        return np.sign(y_hat - y) * scale
    return (_sigmoid(y_hat) - y) * scale


def loss_and_gradient(arch: NetArchitecture, params: ParameterSet, X, Y, kind=Loss.MSE,
                      l2: float = 0.0) -> Tuple[float, ParameterSet]:
    """Batch-mean loss plus l2 * |theta|^2 / 2, and its exact gradient."""
    kind = Loss(kind)
    X = np.atleast_2d(_check_input(arch, X))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    hs = _activations(params, X)
    value = loss(kind, hs[-1], Y)
    delta = _loss_grad_output(kind, hs[-1], Y)
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for j in range(len(params.weights) - 1, -1, -1):
        gw[j] = delta.T @ hs[j]
        gb[j] = delta.sum(axis=0)
        if j > 0:
            delta = (delta @ params.weights[j]) * (1.0 - hs[j] ** 2)
    if l2:
        sq = sum(float((w * w).sum()) + float((b * b).sum())
                 for w, b in zip(params.weights, params.biases))
        value += 0.5 * l2 * sq
        gw = [g + l2 * w for g, w in zip(gw, params.weights)]
        gb = [g + l2 * b for g, b in zip(gb, params.biases)]
    return value, ParameterSet(gw, gb)


def gradient(arch: NetArchitecture, params: ParameterSet, X, Y, kind=Loss.MSE,
             l2: float = 0.0) -> ParameterSet:
    return loss_and_gradient(arch, params, X, Y, kind, l2)[1]


@dataclass
class TrainConfig:
    optimizer: Optimizer = Optimizer.RPROP
    loss: Loss = Loss.MSE
    epochs: int = 300
    l2: float = 0.0
    eta_plus: float = 1.2
    eta_minus: float = 0.5
    delta0: float = 0.07
    delta_min: float = 1e-9
    delta_max: float = 50.0
    learning_rate: float = 0.01
    lr_increase: float = 1.05
    lr_decrease: float = 0.7
    max_loss_increase: float = 1.04
    seed: int = 0

    def __post_init__(self):
        self.optimizer = Optimizer(self.optimizer)
        self.loss = Loss(self.loss)
        if int(self.epochs) < 0:
            raise ValueError("epochs must be >= 0")
        self.epochs = int(self.epochs)
        if self.l2 < 0:
            raise ValueError("l2 coefficient must be >= 0")
        if not (self.eta_plus > 1 > self.eta_minus > 0):
            raise ValueError("need eta_plus > 1 > eta_minus > 0")
        if not (0 < self.delta_min <= self.delta0 <= self.delta_max):
            raise ValueError("need 0 < delta_min <= delta0 <= delta_max")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["optimizer"] = self.optimizer.value
        d["loss"] = self.loss.value
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training keys {sorted(unknown)}")
        return cls(**data)


@dataclass
class RpropState:
    step: np.ndarray
    prev_grad: np.ndarray

    @classmethod
    def start(cls, size: int, delta0: float) -> "RpropState":
        return cls(np.full(size, float(delta0)), np.zeros(size))


def rprop_update(state: RpropState, grad, eta_plus=1.2, eta_minus=0.5,
                 delta_min=1e-9, delta_max=50.0):
    """One sign-based Rprop step without weight backtracking.

    Returns (new_state, parameter_delta).  Where the gradient sign flipped the
    step shrinks, the component does not move and its stored gradient is
    zeroed so the next step is neither a grow nor a shrink.
    """
    g = np.asarray(grad, dtype=float).copy()
    if g.shape != state.step.shape:
        raise ValueError("gradient and state shapes differ")
    prod = g * state.prev_grad
    step = state.step.copy()
    grow = prod > 0
    shrink = prod < 0
    step[grow] = np.minimum(step[grow] * eta_plus, delta_max)
    step[shrink] = np.maximum(step[shrink] * eta_minus, delta_min)
    g[shrink] = 0.0
    return RpropState(step, g), -np.sign(g) * step


@dataclass
class TrainLog:
    loss: list = field(default_factory=list)
    gradient_norm_history: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,loss,grad_norm,val_loss\n")
        for k, (l, g, v) in enumerate(zip(self.loss, self.gradient_norm_history, self.val_loss), 1):
            buf.write(f"{k},{float(l)!r},{float(g)!r},{float(v)!r}\n")
        return buf.getvalue()


def train(arch: NetArchitecture, train_xy, val_xy, config: Optional[TrainConfig] = None,
          init: Optional[ParameterSet] = None, callback: Optional[Callable] = None):
    """Full-batch training; returns (best-validation parameters, TrainLog).

    ``train_xy`` and ``val_xy`` are (X, Y) pairs.  The initial parameters
    take part in the best-validation selection, so ``epochs=0`` hands them
    back unchanged.
    """
    config = config or TrainConfig()
    X, Y = (np.asarray(v, dtype=float) for v in train_xy)
    Xv, Yv = (np.asarray(v, dtype=float) for v in val_xy)
    if Y.shape[1] != arch.output_dim:
        raise ValueError(f"labels have {Y.shape[1]} columns, network outputs {arch.output_dim}")
    params = init.copy() if init is not None else init_parameters(arch, config.seed)
    if not params.matches(arch):
        raise ValueError("initial parameters do not fit the architecture")
    kind, l2 = config.loss, config.l2

    def val_loss(p):
        return loss(kind, forward(arch, p, Xv), Yv)

    best, best_val = params.copy(), val_loss(params)
    log = TrainLog()
    theta = params.flat()
    rprop = RpropState.start(theta.size, config.delta0)
    lr = config.learning_rate

    for epoch in range(1, config.epochs + 1):
        value, grad = loss_and_gradient(arch, params, X, Y, kind, l2)
        g = grad.flat()
        if not (np.isfinite(value) and np.all(np.isfinite(g))):
            raise TrainingDiverged(epoch)
        if config.optimizer is Optimizer.RPROP:
            rprop, delta = rprop_update(rprop, g, config.eta_plus, config.eta_minus,
                                        config.delta_min, config.delta_max)
            theta = theta + delta
        elif config.optimizer is Optimizer.GD:
            theta = theta - lr * g
        else:
            cand = theta - lr * g
            new_value = loss_and_gradient(arch, params.unflat(cand), X, Y, kind, l2)[0]
            if new_value > value * config.max_loss_increase:
                lr *= config.lr_decrease
            else:
                if new_value < value:
                    lr *= config.lr_increase
                theta = cand
        params = params.unflat(theta)
        v = val_loss(params)
        if not np.isfinite(v):
            raise TrainingDiverged(epoch)
        log.loss.append(float(value))
        log.gradient_norm_history.append(float(np.linalg.norm(g)))
        log.val_loss.append(float(v))
        if v < best_val:
            best, best_val, log.best_epoch = params.copy(), v, epoch
        if callback is not None:
            callback(epoch, value, v)
    return best, log


def threshold_filter(y_hat, tau: float = 0.5) -> np.ndarray:
    return (np.asarray(y_hat) >= tau).astype(np.uint8)


def _prf(tp, fp, fn):
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.divide(tp, tp + fp, dtype=float)
        r = np.divide(tp, tp + fn, dtype=float)
        f = np.divide(2 * p * r, p + r)
    return p, r, f


@dataclass
class Metrics:
    precision: float
    recall: float
    f_measure: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    sample_f_mean: float = float("nan")
    sample_f_std: float = float("nan")
    gradient_norm_history: list = field(default_factory=list)

    def report(self) -> str:
        return (f"precision {self.precision:.4f}\nrecall {self.recall:.4f}\n"
                f"f_measure {self.f_measure:.4f}\n"
                f"sample_f {self.sample_f_mean:.4f} +- {self.sample_f_std:.4f}\n"
                f"tp {self.tp}\nfp {self.fp}\nfn {self.fn}\n")


def evaluate(predictions, labels) -> Metrics:
    """Micro-averaged precision, recall and F-measure; 0/0 gives NaN.

    Per-sample F-measures are also summarised (mean and standard deviation
    over samples where F is defined).
    """
    P = np.atleast_2d(np.asarray(predictions)).astype(bool)
    L = np.atleast_2d(np.asarray(labels)).astype(bool)
    if P.shape != L.shape:
        raise ValueError(f"shape mismatch {P.shape} vs {L.shape}")
    tp = int((P & L).sum())
    fp = int((P & ~L).sum())
    fn = int((~P & L).sum())
    p, r, f = _prf(tp, fp, fn)
    _, _, fs = _prf((P & L).sum(1), (P & ~L).sum(1), (~P & L).sum(1))
    fs = fs[np.isfinite(fs)]
    mean = float(fs.mean()) if fs.size else float("nan")
    std = float(fs.std()) if fs.size else float("nan")
    return Metrics(float(p), float(r), float(f), tp, fp, fn, mean, std)


# ---------------------------------------------------------------------------
# subspace bank


@dataclass
class BankEntry:
    descriptor: object
    arch: NetArchitecture
    params: ParameterSet


class SubspaceBank:
    """Parameter sets for several subspaces over one hidden architecture.

    Entries share ``hidden_sizes``; their input and output widths follow
    their descriptors.  Layer ``j`` weights of all entries are available as
    a stacked tensor ``weight_tensor(j)[:, :, i]`` wherever shapes agree.
    """

    def __init__(self, hidden_sizes: Sequence[int]):
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.entries: List[BankEntry] = []

    @property
    def ids(self) -> list:
        return [e.descriptor.id for e in self.entries]

    def architecture_for(self, descriptor) -> NetArchitecture:
        return NetArchitecture(descriptor.input_dim, self.hidden_sizes, descriptor.output_dim)

    def put(self, descriptor, params: ParameterSet) -> int:
        """Insert or replace the entry for ``descriptor.id``; returns its index."""
        arch = self.architecture_for(descriptor)
        if not params.matches(arch):
            raise ValueError(f"parameters do not fit {arch}")
        entry = BankEntry(descriptor, arch, params.copy())
        for k, e in enumerate(self.entries):
            if e.descriptor.id == descriptor.id:
                self.entries[k] = entry
                return k
        self.entries.append(entry)
        return len(self.entries) - 1

    def lookup(self, query) -> int:
        """Index of the first entry matching an id or a full input vector."""
        for k, e in enumerate(self.entries):
            if isinstance(query, str):
                if e.descriptor.id == query:
                    return k
            elif e.descriptor.spec.contains(query):
                return k
        raise KeyError(f"no stored subspace matches {query!r}; stored ids: {self.ids}")

    def weight_tensor(self, j: int) -> np.ndarray:
        ws = [e.params.weights[j] for e in self.entries]
        if len({w.shape for w in ws}) != 1:
            raise ValueError(f"layer {j} weights differ in shape across entries")
        return np.stack(ws, axis=2)

    def bias_matrix(self, j: int) -> np.ndarray:
        bs = [e.params.biases[j] for e in self.entries]
        if len({b.shape for b in bs}) != 1:
            raise ValueError(f"layer {j} biases differ in shape across entries")
        return np.stack(bs, axis=1)

    # SLBANK1: a "SLBANK1" line, then one JSON document with base64
    # little-endian float64 blobs for every weight matrix and bias vector.
    def dumps(self) -> bytes:
        def blob(a):
            return {"shape": list(a.shape),
                    "data": base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode()}

        doc = {
            "hidden_sizes": list(self.hidden_sizes),
            "hidden_activation": "tanh",
            "output_activation": "affine",
            "entries": [{
                "descriptor": e.descriptor.to_dict(),
                "input_dim": e.arch.input_dim,
                "output_dim": e.arch.output_dim,
                "weights": [blob(w) for w in e.params.weights],
                "biases": [blob(b) for b in e.params.biases],
            } for e in self.entries],
        }
        return b"SLBANK1\n" + json.dumps(doc, sort_keys=True, indent=1).encode() + b"\n"

    @classmethod
    def loads(cls, data: bytes) -> "SubspaceBank":
        from .datagen import SubspaceDescriptor

        if not data.startswith(b"SLBANK1\n"):
            raise ValueError("not an SLBANK1 model file")
        doc = json.loads(data[len(b"SLBANK1\n"):].decode())

        def unblob(b):
            raw = np.frombuffer(base64.b64decode(b["data"]), dtype="<f8")
            return raw.reshape(b["shape"]).astype(np.float64)

        bank = cls(doc["hidden_sizes"])
        for e in doc["entries"]:
            desc = SubspaceDescriptor.from_dict(e["descriptor"])
            params = ParameterSet([unblob(w) for w in e["weights"]], [unblob(b) for b in e["biases"]])
            bank.put(desc, params)
        return bank

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "SubspaceBank":
        with open(path, "rb") as fh:
            return cls.loads(fh.read())


def bank_predict(bank: SubspaceBank, query, x=None, tau: float = 0.5) -> np.ndarray:
    """Bits predicted by the first entry matching ``query``.

    ``query`` is a descriptor id (then ``x`` holds the free inputs, one row or
    a batch) or a full input vector, in which case the free elements are
    taken from it and ``x`` is ignored.
    """
    k = bank.lookup(query)
    e = bank.entries[k]
    if not isinstance(query, str):
        x = np.asarray(query, dtype=float)[e.descriptor.free_indices]
    return threshold_filter(forward(e.arch, e.params, x), tau)


def subspace_nll_check(arch: NetArchitecture, params: ParameterSet, n_draws: int, seed: int = 0,
                     target: Optional[Callable] = None):
    """Monte-Carlo comparison of subspace-averaged and full Gaussian NLL.

    With x ~ N(0, I) and per-sample loss
    L = -log N(y; a(x), I) = (m/2) log(2 pi) + |y - a(x)|^2 / 2,
    ``lhs`` averages the loss over subspaces whose first input is fixed to a
    draw beta ~ N(0, 1) (the other inputs drawn within the subspace) and
    ``rhs`` averages over the full input distribution.  Independent draws
    are used for the two sides.  ``target`` maps inputs to y (default zero).
    Returns (lhs, rhs, stderr of lhs - rhs).
    """
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    n, m = arch.input_dim, arch.output_dim
    const = 0.5 * m * math.log(2 * math.pi)

    def nll(X):
        a = forward(arch, params, X)
        y = np.zeros_like(a) if target is None else np.asarray(target(X), dtype=float).reshape(a.shape)
        return const + 0.5 * ((y - a) ** 2).sum(axis=1)

    beta = rng.standard_normal(n_draws)
    Xs = np.column_stack([beta, rng.standard_normal((n_draws, n - 1))])
    Xf = rng.standard_normal((n_draws, n))
    ls, lf = nll(Xs), nll(Xf)
    stderr = math.sqrt(ls.var(ddof=1) / n_draws + lf.var(ddof=1) / n_draws) if n_draws > 1 else float("nan")
    return float(ls.mean()), float(lf.mean()), stderr
