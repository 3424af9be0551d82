"""Desk-scale experiments shared by the ``repro`` command and the test suite."""

from __future__ import annotations

import math
import os
import platform
import statistics
import time
from typing import Optional

import numpy as np

from .datagen import (SubspaceDescriptor, generate_dataset, load_dataset, sample_manipulator,
                      sample_stream, save_dataset, spherical_wrist_spec, split_dataset)
from .kinematics import IKSettings, Manipulator, fk_batch, solve_ik_batch
from .slnet import (Loss, NetArchitecture, Optimizer, SubspaceBank, TrainConfig, bank_predict,
                    evaluate, forward, threshold_filter, train)
from .workspace import build_scope, discretize_workspace, flatten

ACCURACY_SAMPLES = 6000
ACCURACY_HIDDEN = (40, 40)
ACCURACY_EPOCHS = 300


def accuracy_descriptor(beta: float = 0.5) -> SubspaceDescriptor:
    """Spherical-wrist arms, constant orientation I, grid [-1, 1]^3 step 0.5."""
    scope = build_scope([-2 * beta] * 3, [2 * beta] * 3, beta)
    return SubspaceDescriptor(f"spherical-wrist-cow-b{beta:g}-d{beta:g}",
                              spherical_wrist_spec(beta, scope))


def accuracy_dataset(path: Optional[str] = None, n: int = ACCURACY_SAMPLES, seed: int = 2024,
                     threads: int = 1):
    """Generate (or reuse from ``path``) the learning-accuracy dataset."""
    desc = accuracy_descriptor()
    if path and os.path.exists(path):
        d = load_dataset(path)
        if d.seed == seed and len(d) == n and d.descriptor.to_dict() == desc.to_dict():
            return d
    d = generate_dataset(n, desc, IKSettings(), seed=seed, threads=threads)
    if path:
        save_dataset(d, path)
    return d


def train_and_score(dataset, optimizer=Optimizer.RPROP, loss=Loss.MSE, seed: int = 0,
                    epochs: int = ACCURACY_EPOCHS, hidden=ACCURACY_HIDDEN, split_seed: int = 0):
    tr, va, te = split_dataset(dataset, (0.7, 0.15, 0.15), seed=split_seed)
    arch = NetArchitecture(tr.X.shape[1], hidden, tr.Y.shape[1])
    params, log = train(arch, (tr.X, tr.Y), (va.X, va.Y),
                        TrainConfig(optimizer=optimizer, loss=loss, epochs=epochs, seed=seed))
    metrics = evaluate(threshold_filter(forward(arch, params, te.X)), te.Y)
    return arch, params, log, metrics


def f_limit(m) -> float:
    """2TP / (2TP + FP + FN): the F-measure with 0/0 precision read as its limit."""
    denom = 2 * m.tp + m.fp + m.fn
    return 2 * m.tp / denom if denom else float("nan")


def optimizer_ordering(dataset, seeds=range(5), epochs: int = ACCURACY_EPOCHS):
    rows = []
    for s in seeds:
        _, _, _, mr = train_and_score(dataset, Optimizer.RPROP, seed=s, epochs=epochs)
        _, _, _, mg = train_and_score(dataset, Optimizer.GD, seed=s, epochs=epochs)
        rows.append({"seed": s, "rprop_f": mr.f_measure, "gd_f": mg.f_measure,
                     "rprop_f_limit": f_limit(mr), "gd_f_limit": f_limit(mg),
                     "rprop_wins": beats(mr.f_measure, mg.f_measure)})
    return rows


def beats(f_a: float, f_b: float) -> bool:
    """Strict ordering of F-measures where an undefined (NaN) F loses to any defined one."""
    if math.isnan(f_a):
        return False
    if math.isnan(f_b):
        return True
    return f_a > f_b


def random_spherical_wrist(seed: int, beta: float = 0.5) -> Manipulator:
    m, _ = sample_manipulator(spherical_wrist_spec(beta), sample_stream(seed, 0))
    return m


def ik_roundtrip(n: int = 500, seed: int = 7, beta: float = 0.5, ik: Optional[IKSettings] = None):
    """Fraction of random (arm, q*) pairs whose FK pose the solver recovers."""
    ik = ik or IKSettings()
    spec = spherical_wrist_spec(beta)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    dh = np.empty((n, 6, 4))
    for k in range(n):
        m, _ = sample_manipulator(spec, rng)
        dh[k] = m.dh
    q_star = rng.uniform(-np.pi, np.pi, size=(n, 6))
    T = fk_batch(dh, q_star)
    res = solve_ik_batch(dh, T[:, :3, 3], T[:, :3, :3], ik)
    return {"trials": n, "successes": int(res.success.sum()),
            "rate": float(res.success.mean()), "q": res.q, "success": res.success,
            "targets": T, "dh": dh}


def annulus_agreement(delta: float = 0.1, ik: Optional[IKSettings] = None, a=(1.0, 1.0)):
    """Planar 2R position workspace on the z = 0 plane against |p| in [|a1 - a2|, a1 + a2]."""
    ik = ik or IKSettings(mask=[1, 1, 1, 0, 0, 0])
    m = Manipulator.from_arrays([0.0, 0.0], list(a), [0.0, 0.0])
    r_out = abs(a[0]) + abs(a[1])
    r_in = abs(abs(a[0]) - abs(a[1]))
    half = r_out + 2 * delta
    scope = build_scope([-half, -half, 0.0], [half, half, 0.0], delta)
    bits = flatten(discretize_workspace(m, scope, ik)).astype(bool)
    r = np.linalg.norm(scope.grid(), axis=1)
    truth = (r >= r_in) & (r <= r_out)
    agree = bits == truth
    return {"nodes": int(bits.size), "agreement": float(agree.mean()),
            "mismatch_radii": r[~agree].tolist(), "bits": bits, "truth": truth}


def hardware() -> dict:
    return {"platform": platform.platform(), "processor": platform.processor() or platform.machine(),
            "python": platform.python_version(), "cpus": os.cpu_count()}


def time_calls(fn, k: int) -> list:
    out = []
    for _ in range(k):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return out


def benchmark(bank: SubspaceBank, manipulator: Manipulator, scope, k: int = 5,
              ik: Optional[IKSettings] = None, query=None):
    """Wall time of classical discretization against bank prediction."""
    if k < 1:
        raise ValueError("repetitions must be >= 1")
    ik = ik or IKSettings()
    dh = manipulator.dh
    full = np.concatenate([dh[:, 1], dh[:, 2], dh[:, 3], scope.full_vector()])
    if query is None:
        query, x = full, None
    else:
        # an explicit id: take the entry's free inputs from this arm and scope
        spec = bank.entries[bank.lookup(query)].descriptor.spec
        if spec.input_length != full.size:
            raise ValueError(f"entry {query!r} expects {spec.input_length} inputs, "
                             f"arm and scope give {full.size}")
        x = full[spec.free_indices]
    bank_predict(bank, query, x)  # warm up dispatch
    classical = time_calls(lambda: discretize_workspace(manipulator, scope, ik), k)
    learned = time_calls(lambda: bank_predict(bank, query, x), k)
    mc, ml = statistics.mean(classical), statistics.mean(learned)
    return {
        "classical": classical, "learned": learned,
        "classical_mean": mc, "classical_std": statistics.pstdev(classical),
        "learned_mean": ml, "learned_std": statistics.pstdev(learned),
        "speedup": mc / ml, "nodes": scope.size, "hardware": hardware(),
    }


def runtime_setup(workdir: str, n: int = 20, epochs: int = 30, seed: int = 11, threads: int = 1):
    """A bank with one full 21^3 spherical-wrist entry and a member of its family.

    The entry is trained briefly on a small dataset; only its prediction time
    matters for the comparison.
    """
    beta = 0.5
    scope = build_scope([-1.0] * 3, [1.0] * 3, 0.1)
    desc = SubspaceDescriptor("spherical-wrist-cow-b0.5-d0.1", spherical_wrist_spec(beta, scope))
    bank_path = os.path.join(workdir, "runtime_bank.slbank")
    if os.path.exists(bank_path):
        bank = SubspaceBank.load(bank_path)
    else:
        d = generate_dataset(n, desc, IKSettings(), seed=seed, threads=threads, check_fraction=0)
        arch = NetArchitecture(desc.input_dim, ACCURACY_HIDDEN, desc.output_dim)
        params, _ = train(arch, (d.X, d.Y), (d.X, d.Y), TrainConfig(epochs=epochs, seed=seed))
        bank = SubspaceBank(ACCURACY_HIDDEN)
        bank.put(desc, params)
        bank.save(bank_path)
    arm = Manipulator.from_arrays([0, 0, 0.15, 0.45, 0, 0], [0, 0.45, 0.05, 0, 0, 0],
                                  [math.pi / 2, 0, -math.pi / 2, math.pi / 2, -math.pi / 2, 0])
    return bank, arm, scope
