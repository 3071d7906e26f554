"""Pure-numpy versions of the hot kernels.

Every function here has a twin of the same name and signature in
``_numba_impl``; results agree exactly for the integer outputs and to
round-off for the floating ones.
"""
import numpy as np


def minimax(H):
    """Exhaustive inf-sup / sup-inf scan of a batch of payoff matrices.

    ``H`` has shape (n, Ka, Kb); rows index the minimizer's grid, columns
    the maximizer's. Ties go to the lowest index.
    """
    n = H.shape[0]
    rowmax = H.max(axis=2)
    ustar = rowmax.argmin(axis=1)
    infsup = rowmax[np.arange(n), ustar]
    vstar = H[np.arange(n), ustar].argmax(axis=1)
    supinf = H.min(axis=1).max(axis=1)
    return infsup, supinf, ustar.astype(np.int64), vstar.astype(np.int64)


def split_minimax(A, B):
    """``minimax`` for matrices of the form H[a, b] = A[a] + B[b]."""
    return minimax(A[:, :, None] + B[:, None, :])


def settle_payoffs(running, fire_min, fire_max, upper, lower, terminal, dt):
    """Per-path decomposition of the stopped game payoff.

    ``running`` is (M, N) running cost at the left grid points; the fire
    masks and obstacle values are (M, N+1). Returns the running, upper,
    lower and terminal parts plus the minimizer and maximizer stop indices.
    """
    M, N = running.shape
    tau = np.where(fire_min[:, :N].any(axis=1), fire_min[:, :N].argmax(axis=1), N)
    sig = np.where(fire_max[:, :N].any(axis=1), fire_max[:, :N].argmax(axis=1), N)
    k = np.minimum(tau, sig)
    rows = np.arange(M)

    csum = np.concatenate([np.zeros((M, 1)), np.cumsum(running * dt, axis=1)], axis=1)
    run = csum[rows, k]

    up = np.where((tau < sig), upper[rows, tau.clip(max=N)], 0.0)
    lo = np.where((sig <= tau) & (sig < N), lower[rows, sig.clip(max=N)], 0.0)
    term = np.where(k == N, terminal, 0.0)
    return run, up, lo, term, tau.astype(np.int64), sig.astype(np.int64)
