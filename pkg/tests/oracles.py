"""Reference computations that share no code with the package."""

import math

import numpy as np


def expm_ss(A, order=18):
    """Matrix exponential by scaling and squaring with a truncated Taylor series."""
    A = np.asarray(A, dtype=float)
    norm = np.abs(A).sum(axis=0).max()
    s = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0 else 0
    B = A / 2.0 ** s
    term = np.eye(len(A))
    out = np.eye(len(A))
    for k in range(1, order + 1):
        term = term @ B / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def central_jacobian(fun, x, step=1e-5):
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = step
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * step))
    return np.column_stack(cols)


def rk4_fixed(fun, y0, t0, tf, steps=2000):
    """Plain classical RK4 with a uniform grid; returns the final state."""
    y = np.array(y0, dtype=float)
    h = (tf - t0) / steps
    t = t0
    for _ in range(steps):
        k1 = fun(t, y)
        k2 = fun(t + h / 2, y + h / 2 * k1)
        k3 = fun(t + h / 2, y + h / 2 * k2)
        k4 = fun(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


def lyapunov_solve(A, Q):
    """Solve ``A^T P + P A = -Q`` through the Kronecker form."""
    n = len(A)
    I = np.eye(n)
    K = np.kron(I, A.T) + np.kron(A.T, I)
    P = np.linalg.solve(K, -np.asarray(Q, dtype=float).reshape(-1, order="F"))
    P = P.reshape(n, n, order="F")
    return 0.5 * (P + P.T)
