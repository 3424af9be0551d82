"""Constant-orientation workspace of a six-joint arm, computed node by node.

Run:  python3 demos/01_classical_workspace.py [out.csv]
"""

import math
import sys
import time

import numpy as np

from wssl import IKSettings, Manipulator, build_scope, discretize_workspace, flatten, forward_kinematics

# a PUMA-like arm: shoulder offset, two long links, spherical wrist
arm = Manipulator.from_arrays(
    d=[0, 0, 0.15, 0.45, 0, 0],
    a=[0, 0.45, 0.05, 0, 0, 0],
    alpha=[math.pi / 2, 0, -math.pi / 2, math.pi / 2, -math.pi / 2, 0],
)
print(arm.to_table())
print("reach bound", arm.reach_bound)

# home pose
home = forward_kinematics(arm, np.zeros(6))
print("home position", np.round(home.position, 4))

# a 21 x 21 x 21 grid on [-1, 1]^3, tool frame aligned with the base
scope = build_scope([-1, -1, -1], [1, 1, 1], 0.1)
print("nodes", scope.size)

t0 = time.perf_counter()
P = discretize_workspace(arm, scope, IKSettings())
print(f"labelled in {time.perf_counter() - t0:.2f} s, {int(P.bits.sum())} reachable")

# z = 0 slice as text art
k = int(np.argmin(np.abs(scope.n_z)))
for i in range(scope.dims[0]):
    print("".join("#" if b else "." for b in P.bits[i, :, k]))

y = flatten(P)
print("first reachable node (1-based):", int(np.argmax(y)) + 1)

if len(sys.argv) > 1:
    with open(sys.argv[1], "w") as fh:
        fh.write(P.to_csv(scope))
    print("wrote", sys.argv[1])
