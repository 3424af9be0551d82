"""Learn the workspace map of a family of spherical-wrist arms.

Only d3, d4, a2 and a3 vary (uniform on [0, 0.5]), so the network sees four
inputs and predicts 125 reachability bits on a 5 x 5 x 5 grid.

Run:  python3 demos/02_learn_a_subspace.py
"""

import time

import numpy as np

from wssl import (SubspaceBank, SubspaceDescriptor, TrainConfig, NetArchitecture, bank_predict,
                  build_scope, discretize_workspace, evaluate, flatten, forward, generate_dataset,
                  spherical_wrist_spec, split_dataset, threshold_filter, train)
from wssl.datagen import sample_manipulator, sample_stream

scope = build_scope([-1, -1, -1], [1, 1, 1], 0.5)
desc = SubspaceDescriptor("spherical-wrist", spherical_wrist_spec(0.5, scope))
print("free inputs", desc.free_indices.tolist(), "outputs", desc.output_dim)

t0 = time.perf_counter()
data = generate_dataset(1500, desc, seed=1)
print(f"1500 arms labelled in {time.perf_counter() - t0:.1f} s, positive rate {data.Y.mean():.3f}")

tr, va, te = split_dataset(data, (0.7, 0.15, 0.15), seed=0)
arch = NetArchitecture(desc.input_dim, (40, 40), desc.output_dim)
params, log = train(arch, (tr.X, tr.Y), (va.X, va.Y), TrainConfig(epochs=200))
print(f"train loss {log.loss[0]:.4f} -> {log.loss[-1]:.4f}, best epoch {log.best_epoch}")

m = evaluate(threshold_filter(forward(arch, params, te.X)), te.Y)
print(m.report())

# store it and ask the bank about a fresh arm
bank = SubspaceBank((40, 40))
bank.put(desc, params)
arm, x = sample_manipulator(desc.spec, sample_stream(99, 0))
predicted = bank_predict(bank, x)
actual = flatten(discretize_workspace(arm, scope))
print("fresh arm: bits wrong", int(np.sum(predicted != actual)), "of", actual.size)
