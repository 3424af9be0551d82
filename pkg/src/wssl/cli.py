"""``wssl`` command line.

    wssl generate|workspace|train|eval|bench|repro --config PATH [--seed N] [--threads N]

Configs are JSON files; unknown keys are rejected before any work starts.
Exit status is 0 on success, 2 for invalid configuration or inputs and 3
for failures while running.  Errors go to stderr as ``error: ...`` lines.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import experiments
from .datagen import (SubspaceDescriptor, generate_dataset, load_dataset, save_dataset,
                      spherical_wrist_spec, split_dataset)
from .kinematics import IKSettings, Manipulator
from .slnet import (NetArchitecture, SubspaceBank, TrainConfig, TrainingDiverged, evaluate,
                    forward, threshold_filter, train)
from .workspace import Scope, discretize_workspace, flatten


class ConfigError(ValueError):
    pass


def _keys(cfg: dict, required=(), optional=(), where="config"):
    if not isinstance(cfg, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(cfg) - set(required) - set(optional)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(cfg)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


def _wrap(where, fn, *args):
    try:
        return fn(*args)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _descriptor(cfg: dict) -> SubspaceDescriptor:
    """Either a full descriptor or a spherical-wrist family shorthand."""
    if "spec" in cfg:
        return _wrap("descriptor", SubspaceDescriptor.from_dict, cfg)
    _keys(cfg, ("id",), ("family", "beta", "scope", "n_i", "output_slice"), "descriptor")
    if cfg.get("family", "spherical_wrist") != "spherical_wrist":
        raise ConfigError(f"descriptor.family: unsupported family {cfg['family']!r}")
    beta = cfg.get("beta", 0.5)
    scope = _scope(cfg["scope"]) if "scope" in cfg else None
    spec = _wrap("descriptor", spherical_wrist_spec, beta, scope, cfg.get("n_i", (0.0, 0.0, 0.0)))
    sl = cfg.get("output_slice")
    return _wrap("descriptor", SubspaceDescriptor, cfg["id"], spec, tuple(sl) if sl else None)


def _scope(cfg: dict) -> Scope:
    if "delta" in cfg:
        delta = np.broadcast_to(np.asarray(cfg["delta"], dtype=float), (3,))
        if np.any(~(delta > 0)):
            raise ConfigError(f"scope.delta: must be positive, got {delta.tolist()}")
    return _wrap("scope", Scope.from_dict, cfg)


def _ik(cfg) -> IKSettings:
    return _wrap("ik", IKSettings.from_dict, cfg or {})


def _manipulator(cfg: dict, base: str) -> Manipulator:
    if "manipulator_table" in cfg:
        path = os.path.join(base, cfg["manipulator_table"])
        if not os.path.exists(path):
            raise ConfigError(f"manipulator_table: no such file {path}")
        with open(path) as fh:
            return _wrap("manipulator_table", Manipulator.from_table, fh.read())
    if "manipulator" not in cfg:
        raise ConfigError("config needs 'manipulator' or 'manipulator_table'")
    return _wrap("manipulator", Manipulator.from_dict, cfg["manipulator"])


def _path(base: str, p: str) -> str:
    return p if os.path.isabs(p) else os.path.join(base, p)


def _existing(base: str, p: str, field: str) -> str:
    full = _path(base, p)
    if not os.path.exists(full):
        raise ConfigError(f"{field}: no such file {full}")
    return full


def _write(path: str, data, mode="w"):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, mode) as fh:
        fh.write(data)


# ---------------------------------------------------------------------------


def cmd_generate(cfg, base, seed, threads):
    _keys(cfg, ("output", "n", "descriptor"), ("seed", "ik", "csv", "check_fraction"))
    n = cfg["n"]
    if not isinstance(n, int) or n < 1:
        raise ConfigError("n: must be a positive integer")
    desc = _descriptor(cfg["descriptor"])
    ik = _ik(cfg.get("ik"))
    seed = cfg.get("seed", 0) if seed is None else seed
    t0 = time.perf_counter()
    d = generate_dataset(n, desc, ik, seed=seed, threads=threads,
                         check_fraction=cfg.get("check_fraction", 0.01))
    elapsed = time.perf_counter() - t0
    out = _path(base, cfg["output"])
    save_dataset(d, out)
    if "csv" in cfg:
        _write(_path(base, cfg["csv"]), d.to_csv())
    print(f"wrote {out}")
    print(f"n {len(d)}")
    print(f"inputs {d.X.shape[1]}")
    print(f"labels {d.Y.shape[1]}")
    print(f"positive_rate {float(d.Y.mean()):.4f}")
    print(f"elapsed_s {elapsed:.2f}")


def cmd_workspace(cfg, base, seed, threads):
    _keys(cfg, ("scope",), ("manipulator", "manipulator_table", "ik", "bits_output",
                            "csv_output", "prefilter"))
    m = _manipulator(cfg, base)
    scope = _scope(cfg["scope"])
    ik = _ik(cfg.get("ik"))
    t0 = time.perf_counter()
    P = discretize_workspace(m, scope, ik, prefilter=cfg.get("prefilter", True), threads=threads)
    elapsed = time.perf_counter() - t0
    if "bits_output" in cfg:
        _write(_path(base, cfg["bits_output"]), P.to_text())
    if "csv_output" in cfg:
        _write(_path(base, cfg["csv_output"]), P.to_csv(scope))
    y = flatten(P)
    print(f"nodes {y.size}")
    print(f"reachable {int(y.sum())}")
    print(f"elapsed_s {elapsed:.3f}")


def cmd_train(cfg, base, seed, threads):
    _keys(cfg, ("dataset", "bank", "hidden_sizes"), ("log", "train", "split", "output_dim"))
    d = load_dataset(_existing(base, cfg["dataset"], "dataset"))
    tcfg = dict(cfg.get("train", {}))
    if seed is not None:
        tcfg["seed"] = seed
    tconf = _wrap("train", TrainConfig.from_dict, tcfg)
    split = cfg.get("split", {})
    _keys(split, (), ("ratios", "seed"), "split")
    desc = d.descriptor
    if "output_dim" in cfg and cfg["output_dim"] != d.Y.shape[1]:
        raise ConfigError(f"output_dim: config says {cfg['output_dim']}, dataset has {d.Y.shape[1]}")
    bank_path = _path(base, cfg["bank"])
    if os.path.exists(bank_path):
        bank = SubspaceBank.load(bank_path)
        if tuple(bank.hidden_sizes) != tuple(cfg["hidden_sizes"]):
            raise ConfigError(f"hidden_sizes: bank uses {list(bank.hidden_sizes)}")
    else:
        bank = SubspaceBank(cfg["hidden_sizes"])
    tr, va, _ = _wrap("split", split_dataset, d, split.get("ratios", (0.7, 0.15, 0.15)),
                      split.get("seed", 0))
    arch = _wrap("hidden_sizes", NetArchitecture, d.X.shape[1], tuple(cfg["hidden_sizes"]),
                 d.Y.shape[1])
    params, log = train(arch, (tr.X, tr.Y), (va.X, va.Y), tconf)
    idx = bank.put(desc, params)
    bank.save(bank_path)
    if "log" in cfg:
        _write(_path(base, cfg["log"]), log.to_csv())
    print(f"entry {idx + 1} {desc.id}")
    print(f"epochs {len(log.loss)}")
    print(f"best_epoch {log.best_epoch}")


def cmd_eval(cfg, base, seed, threads):
    _keys(cfg, ("bank", "dataset"), ("descriptor_id", "split", "tau", "report", "predictions"))
    bank = SubspaceBank.load(_existing(base, cfg["bank"], "bank"))
    d = load_dataset(_existing(base, cfg["dataset"], "dataset"))
    desc_id = cfg.get("descriptor_id", d.descriptor.id)
    try:
        entry = bank.entries[bank.lookup(desc_id)]
    except KeyError as exc:
        raise ConfigError(f"descriptor_id: {exc.args[0]}") from None
    if entry.descriptor.id != d.descriptor.id and "descriptor_id" not in cfg:
        raise ConfigError("dataset descriptor differs from bank entry")
    if "split" in cfg:
        _keys(cfg["split"], (), ("ratios", "seed"), "split")
        _, _, d = _wrap("split", split_dataset, d, cfg["split"].get("ratios", (0.7, 0.15, 0.15)),
                        cfg["split"].get("seed", 0))
    if d.X.shape[1] != entry.arch.input_dim or d.Y.shape[1] != entry.arch.output_dim:
        raise ConfigError(f"dataset shape {d.X.shape[1]}->{d.Y.shape[1]} does not fit entry "
                          f"{entry.arch.input_dim}->{entry.arch.output_dim}")
    tau = cfg.get("tau", 0.5)
    pred = threshold_filter(forward(entry.arch, entry.params, d.X), tau)
    m = evaluate(pred, d.Y)
    text = f"descriptor {entry.descriptor.id}\nsamples {len(d)}\n" + m.report()
    if "report" in cfg:
        _write(_path(base, cfg["report"]), text)
    if "predictions" in cfg:
        _write(_path(base, cfg["predictions"]),
               "".join("".join("1" if b else "0" for b in row) + "\n" for row in pred))
    print(text, end="")


def cmd_bench(cfg, base, seed, threads):
    _keys(cfg, ("bank", "scope"), ("manipulator", "manipulator_table", "repetitions", "ik",
                                   "descriptor_id", "report"))
    k = cfg.get("repetitions", 5)
    if not isinstance(k, int) or k < 1:
        raise ConfigError("repetitions: must be a positive integer")
    bank = SubspaceBank.load(_existing(base, cfg["bank"], "bank"))
    m = _manipulator(cfg, base)
    scope = _scope(cfg["scope"])
    query = cfg.get("descriptor_id")
    try:
        res = experiments.benchmark(bank, m, scope, k, _ik(cfg.get("ik")), query)
    except KeyError as exc:
        raise ConfigError(f"bank: {exc.args[0]}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    lines = ["method,repetition,seconds"]
    lines += [f"classical,{i + 1},{t!r}" for i, t in enumerate(res["classical"])]
    lines += [f"learned,{i + 1},{t!r}" for i, t in enumerate(res["learned"])]
    summary = (f"nodes {res['nodes']}\n"
               f"classical_s {res['classical_mean']:.6g} +- {res['classical_std']:.3g}\n"
               f"learned_s {res['learned_mean']:.6g} +- {res['learned_std']:.3g}\n"
               f"speedup {res['speedup']:.1f}\n"
               + "".join(f"hw_{key} {v}\n" for key, v in res["hardware"].items()))
    if "report" in cfg:
        _write(_path(base, cfg["report"]), "\n".join(lines) + "\n")
    print("\n".join(lines))
    print(summary, end="")


PRESETS = ("accuracy", "optimizers", "runtime", "ik", "annulus")


def cmd_repro(cfg, base, seed, threads):
    _keys(cfg, ("preset",), ("workdir", "seed"))
    preset = cfg["preset"]
    names = PRESETS if preset == "all" else (preset,)
    if any(p not in PRESETS for p in names):
        raise ConfigError(f"preset: expected one of {list(PRESETS) + ['all']}, got {preset!r}")
    workdir = _path(base, cfg.get("workdir", "wssl-repro"))
    os.makedirs(workdir, exist_ok=True)
    data_seed = cfg.get("seed", 2024) if seed is None else seed
    ds_path = os.path.join(workdir, "accuracy.wssl")
    for name in names:
        t0 = time.perf_counter()
        if name == "accuracy":
            d = experiments.accuracy_dataset(ds_path, seed=data_seed, threads=threads)
            _, _, _, m = experiments.train_and_score(d)
            print(f"accuracy f_measure {m.f_measure:.4f} precision {m.precision:.4f} "
                  f"recall {m.recall:.4f} gate>=0.90 {'PASS' if m.f_measure >= 0.90 else 'FAIL'}")
        elif name == "optimizers":
            d = experiments.accuracy_dataset(ds_path, seed=data_seed, threads=threads)
            rows = experiments.optimizer_ordering(d)
            for r in rows:
                print(f"optimizers seed {r['seed']} rprop_f {r['rprop_f']:.4f} gd_f {r['gd_f']:.4f} "
                      f"gd_f_limit {r['gd_f_limit']:.4f} rprop_wins {r['rprop_wins']}")
            wins = sum(r["rprop_wins"] for r in rows)
            print(f"optimizers rprop_wins {wins}/5 gate>=4 {'PASS' if wins >= 4 else 'FAIL'}")
        elif name == "runtime":
            bank, arm, scope = experiments.runtime_setup(workdir, threads=threads)
            r = experiments.benchmark(bank, arm, scope, k=5)
            print(f"runtime classical_s {r['classical_mean']:.4g} learned_s {r['learned_mean']:.4g} "
                  f"speedup {r['speedup']:.1f} gate>=100 {'PASS' if r['speedup'] >= 100 else 'FAIL'}")
        elif name == "ik":
            r = experiments.ik_roundtrip()
            print(f"ik rate {r['rate']:.4f} gate>=0.99 {'PASS' if r['rate'] >= 0.99 else 'FAIL'}")
        elif name == "annulus":
            r = experiments.annulus_agreement()
            print(f"annulus agreement {r['agreement']:.4f} gate>=0.98 "
                  f"{'PASS' if r['agreement'] >= 0.98 else 'FAIL'}")
        print(f"{name} elapsed_s {time.perf_counter() - t0:.1f}")


COMMANDS = {
    "generate": cmd_generate,
    "workspace": cmd_workspace,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "repro": cmd_repro,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="wssl", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    args = parser.parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if not os.path.exists(args.config):
            raise ConfigError(f"config: no such file {args.config}")
        with open(args.config) as fh:
            try:
                cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config: invalid JSON ({exc})") from None
        base = os.path.dirname(os.path.abspath(args.config))
        COMMANDS[args.command](cfg, base, args.seed, args.threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
