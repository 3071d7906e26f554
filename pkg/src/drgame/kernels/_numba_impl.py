"""numba twins of the kernels in ``_numpy_impl``."""
import numpy as np
from numba import njit


@njit(cache=True)
def minimax(H):
    n, ka, kb = H.shape
    infsup = np.empty(n)
    supinf = np.empty(n)
    ustar = np.empty(n, dtype=np.int64)
    vstar = np.empty(n, dtype=np.int64)
    colmin = np.empty(kb)
    for s in range(n):
        best = np.inf
        best_a = 0
        for a in range(ka):
            m = H[s, a, 0]
            for b in range(1, kb):
                if H[s, a, b] > m:
                    m = H[s, a, b]
            if m < best:
                best = m
                best_a = a
        infsup[s] = best
        ustar[s] = best_a
        best_b = 0
        m = H[s, best_a, 0]
        for b in range(1, kb):
            if H[s, best_a, b] > m:
                m = H[s, best_a, b]
                best_b = b
        vstar[s] = best_b
        for b in range(kb):
            colmin[b] = H[s, 0, b]
        for a in range(1, ka):
            for b in range(kb):
                if H[s, a, b] < colmin[b]:
                    colmin[b] = H[s, a, b]
        m = colmin[0]
        for b in range(1, kb):
            if colmin[b] > m:
                m = colmin[b]
        supinf[s] = m
    return infsup, supinf, ustar, vstar


@njit(cache=True)
def split_minimax(A, B):
    n, ka = A.shape
    kb = B.shape[1]
    infsup = np.empty(n)
    supinf = np.empty(n)
    ustar = np.empty(n, dtype=np.int64)
    vstar = np.empty(n, dtype=np.int64)
    colmin = np.empty(kb)
    for s in range(n):
        best = np.inf
        best_a = 0
        for a in range(ka):
            m = A[s, a] + B[s, 0]
            for b in range(1, kb):
                h = A[s, a] + B[s, b]
                if h > m:
                    m = h
            if m < best:
                best = m
                best_a = a
        infsup[s] = best
        ustar[s] = best_a
        best_b = 0
        m = A[s, best_a] + B[s, 0]
        for b in range(1, kb):
            h = A[s, best_a] + B[s, b]
            if h > m:
                m = h
                best_b = b
        vstar[s] = best_b
        for b in range(kb):
            colmin[b] = A[s, 0] + B[s, b]
        for a in range(1, ka):
            for b in range(kb):
                h = A[s, a] + B[s, b]
                if h < colmin[b]:
                    colmin[b] = h
        m = colmin[0]
        for b in range(1, kb):
            if colmin[b] > m:
                m = colmin[b]
        supinf[s] = m
    return infsup, supinf, ustar, vstar


@njit(cache=True)
def settle_payoffs(running, fire_min, fire_max, upper, lower, terminal, dt):
    M, N = running.shape
    run = np.zeros(M)
    up = np.zeros(M)
    lo = np.zeros(M)
    term = np.zeros(M)
    tau = np.full(M, N, dtype=np.int64)
    sig = np.full(M, N, dtype=np.int64)
    for p in range(M):
        for i in range(N):
            if fire_min[p, i]:
                tau[p] = i
                break
        for i in range(N):
            if fire_max[p, i]:
                sig[p] = i
                break
        k = min(tau[p], sig[p])
        acc = 0.0
        for i in range(k):
            acc += running[p, i] * dt
        run[p] = acc
        if tau[p] < sig[p]:
            up[p] = upper[p, tau[p]]
        elif sig[p] < N:
            lo[p] = lower[p, sig[p]]
        if k == N:
            term[p] = terminal[p]
    return run, up, lo, term, tau, sig
