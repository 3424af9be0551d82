"""Compiled damped-least-squares IK loop.

One problem at a time, scalar arithmetic only; the batch driver just loops.
The numpy routines in ``kinematics`` are the reference these are tested
against.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _fk_frames(dh, q, frames):
    n = q.shape[0]
    for r in range(4):
        for c in range(4):
            frames[0, r, c] = 1.0 if r == c else 0.0
    for j in range(n):
        th = dh[j, 0] + q[j]
        d = dh[j, 1]
        a = dh[j, 2]
        al = dh[j, 3]
        ct = math.cos(th)
        st = math.sin(th)
        ca = math.cos(al)
        sa = math.sin(al)
        # columns of the DH link transform
        A00, A01, A02, A03 = ct, -st * ca, st * sa, a * ct
        A10, A11, A12, A13 = st, ct * ca, -ct * sa, a * st
        A21, A22, A23 = sa, ca, d
        for r in range(3):
            p0 = frames[j, r, 0]
            p1 = frames[j, r, 1]
            p2 = frames[j, r, 2]
            p3 = frames[j, r, 3]
            frames[j + 1, r, 0] = p0 * A00 + p1 * A10
            frames[j + 1, r, 1] = p0 * A01 + p1 * A11 + p2 * A21
            frames[j + 1, r, 2] = p0 * A02 + p1 * A12 + p2 * A22
            frames[j + 1, r, 3] = p0 * A03 + p1 * A13 + p2 * A23 + p3
        frames[j + 1, 3, 0] = 0.0
        frames[j + 1, 3, 1] = 0.0
        frames[j + 1, 3, 2] = 0.0
        frames[j + 1, 3, 3] = 1.0


@njit(cache=True, nogil=True)
def _pose_error(T, pt, Rt, w, e):
    """Weighted pose error into e; returns its norm."""
    for r in range(3):
        e[r] = pt[r] - T[r, 3]
    # M = Rt @ Rc^T
    M = np.empty((3, 3))
    for r in range(3):
        for c in range(3):
            M[r, c] = Rt[r, 0] * T[c, 0] + Rt[r, 1] * T[c, 1] + Rt[r, 2] * T[c, 2]
    v0 = 0.5 * (M[2, 1] - M[1, 2])
    v1 = 0.5 * (M[0, 2] - M[2, 0])
    v2 = 0.5 * (M[1, 0] - M[0, 1])
    s = math.sqrt(v0 * v0 + v1 * v1 + v2 * v2)
    c = 0.5 * (M[0, 0] + M[1, 1] + M[2, 2] - 1.0)
    c = min(1.0, max(-1.0, c))
    theta = math.atan2(s, c)
    if s > 1e-7:
        f = theta / s
        e[3] = f * v0
        e[4] = f * v1
        e[5] = f * v2
    elif c >= 0:
        e[3] = v0
        e[4] = v1
        e[5] = v2
    else:
        k = 0
        for i in range(1, 3):
            if M[i, i] > M[k, k]:
                k = i
        bkk = math.sqrt(0.5 * (M[k, k] + 1.0))
        for i in range(3):
            bik = 0.5 * (M[i, k] + (1.0 if i == k else 0.0))
            e[3 + i] = theta * bik / bkk
    tot = 0.0
    for r in range(6):
        e[r] *= w[r]
        tot += e[r] * e[r]
    return math.sqrt(tot)


@njit(cache=True, nogil=True)
def _solve_one(dh, pt, Rt, w, tol, lam0, r_max, i_max, q0, q_out, hist):
    """Returns (success, iterations, error_norm, n_hist)."""
    n = q0.shape[0]
    frames = np.empty((n + 1, 4, 4))
    frames_n = np.empty((n + 1, 4, 4))
    q = q0.copy()
    qn = np.empty(n)
    e = np.empty(6)
    en = np.empty(6)
    J = np.empty((6, n))
    A = np.empty((n, n))
    L = np.zeros((n, n))
    g = np.empty(n)
    y = np.empty(n)
    dq = np.empty(n)

    _fk_frames(dh, q, frames)
    enorm = _pose_error(frames[n], pt, Rt, w, e)
    lam = lam0
    it = 0
    rej = 0
    nh = 0
    if hist.shape[0] > 0:
        hist[0] = enorm
        nh = 1
    ok = False
    while it <= i_max:
        it += 1
        if enorm <= tol:
            ok = True
            break
        # weighted geometric Jacobian at q
        pe0 = frames[n, 0, 3]
        pe1 = frames[n, 1, 3]
        pe2 = frames[n, 2, 3]
        for j in range(n):
            z0 = frames[j, 0, 2]
            z1 = frames[j, 1, 2]
            z2 = frames[j, 2, 2]
            d0 = pe0 - frames[j, 0, 3]
            d1 = pe1 - frames[j, 1, 3]
            d2 = pe2 - frames[j, 2, 3]
            J[0, j] = w[0] * (z1 * d2 - z2 * d1)
            J[1, j] = w[1] * (z2 * d0 - z0 * d2)
            J[2, j] = w[2] * (z0 * d1 - z1 * d0)
            J[3, j] = w[3] * z0
            J[4, j] = w[4] * z1
            J[5, j] = w[5] * z2
        lam2 = lam * lam
        for r in range(n):
            s = 0.0
            for k in range(6):
                s += J[k, r] * e[k]
            g[r] = s
            for c in range(n):
                s = 0.0
                for k in range(6):
                    s += J[k, r] * J[k, c]
                A[r, c] = s
            A[r, r] += lam2
        # Cholesky; a non-positive pivot rejects the step
        pd = True
        for j in range(n):
            s = A[j, j]
            for k in range(j):
                s -= L[j, k] * L[j, k]
            if not s > 0.0:
                pd = False
                break
            L[j, j] = math.sqrt(s)
            for i in range(j + 1, n):
                s = A[i, j]
                for k in range(j):
                    s -= L[i, k] * L[j, k]
                L[i, j] = s / L[j, j]
        accept = False
        if pd:
            for i in range(n):
                s = g[i]
                for k in range(i):
                    s -= L[i, k] * y[k]
                y[i] = s / L[i, i]
            for i in range(n - 1, -1, -1):
                s = y[i]
                for k in range(i + 1, n):
                    s -= L[k, i] * dq[k]
                dq[i] = s / L[i, i]
            for i in range(n):
                qn[i] = q[i] + dq[i]
            _fk_frames(dh, qn, frames_n)
            nn = _pose_error(frames_n[n], pt, Rt, w, en)
            accept = nn < enorm
        if accept:
            for i in range(n):
                q[i] = qn[i]
            for r in range(6):
                e[r] = en[r]
            enorm = nn
            frames, frames_n = frames_n, frames
            lam = lam * 0.5
            rej = 0
            if nh < hist.shape[0]:
                hist[nh] = enorm
                nh += 1
        else:
            lam = lam * 2.0
            rej += 1
            if rej > r_max:
                break
    for i in range(n):
        q_out[i] = q[i]
    return ok, it, enorm, nh


@njit(cache=True, nogil=True)
def solve_many(dh, pt, Rt, w, tol, lam0, r_max, i_max, q0, q_out, success, iters, err):
    hist = np.empty(0)
    for b in range(dh.shape[0]):
        ok, it, en, _ = _solve_one(dh[b], pt[b], Rt[b], w, tol, lam0, r_max, i_max, q0,
                                   q_out[b], hist)
        success[b] = ok
        iters[b] = it
        err[b] = en


@njit(cache=True, nogil=True)
def solve_traced(dh, pt, Rt, w, tol, lam0, r_max, i_max, q0, q_out, hist):
    return _solve_one(dh, pt, Rt, w, tol, lam0, r_max, i_max, q0, q_out, hist)
