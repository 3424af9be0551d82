"""Classical discretization against a bank lookup on a 9261-node grid.

The bank entry is trained only briefly; the point is the cost of a query,
not its accuracy.

Run:  python3 demos/03_runtime_comparison.py
"""

import tempfile

from wssl import experiments

with tempfile.TemporaryDirectory() as work:
    bank, arm, scope = experiments.runtime_setup(work)
    r = experiments.benchmark(bank, arm, scope, k=5)

print("nodes", r["nodes"])
print(f"classical {r['classical_mean']:.3f} s +- {r['classical_std']:.3f}")
print(f"learned   {r['learned_mean'] * 1e3:.3f} ms +- {r['learned_std'] * 1e3:.3f}")
print(f"speedup   {r['speedup']:.0f}x")
for key, value in r["hardware"].items():
    print(f"{key:10s}{value}")
