"""Reference computations that avoid the package's own eigenbasis machinery."""
import math

import numpy as np
from scipy.linalg import expm

_Y, _WY = np.polynomial.legendre.leggauss(400)
_Y, _WY = 0.5 * _Y, 0.5 * _WY
_B = np.exp(-1.0 / (1.0 - 4.0 * _Y ** 2))
_N0 = float(np.dot(_WY, _B * _B))


def autocorr_time_weight(t, gamma):
    """w(t) = gamma |b_hat(gamma t)|^2 / (2 pi N0) for the bump b on [-1/2, 1/2]."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty(len(t))
    for i in range(0, len(t), 2048):
        B = np.cos(np.outer(gamma * t[i:i + 2048], _Y)) @ (_WY * _B)
        out[i:i + 2048] = gamma * B ** 2 / (2 * math.pi * _N0)
    return out


def gl_panels(a, b, panels, deg=40):
    x, w = np.polynomial.legendre.leggauss(deg)
    edges = np.linspace(a, b, panels + 1)
    ts = np.concatenate([0.5 * (lo + hi) + 0.5 * (hi - lo) * x for lo, hi in zip(edges[:-1], edges[1:])])
    ws = np.concatenate([0.5 * (hi - lo) * w for lo, hi in zip(edges[:-1], edges[1:])])
    return ts, ws


def tail_weight(ts, gamma, T, panels=150):
    """int_t^T w(s) ds for each t in [0, T], panel by panel with Gauss-Legendre."""
    x, w = np.polynomial.legendre.leggauss(40)
    edges = np.linspace(0.0, T, panels + 1)
    pint = np.array([0.5 * (hi - lo) * np.dot(w, autocorr_time_weight(0.5 * (lo + hi) + 0.5 * (hi - lo) * x, gamma))
                     for lo, hi in zip(edges[:-1], edges[1:])])
    beyond = np.concatenate([np.cumsum(pint[::-1])[::-1][1:], [0.0]])
    out = np.empty(len(ts))
    for i, t in enumerate(ts):
        p = min(int(t / (T / panels)), panels - 1)
        hi = edges[p + 1]
        s = 0.5 * (t + hi) + 0.5 * (hi - t) * x
        out[i] = 0.5 * (hi - t) * np.dot(w, autocorr_time_weight(s, gamma)) + beyond[p]
    return out


def time_domain_F_G(H, probes, gamma, T=300.0, panels=150):
    """F(A) = int w(t) tau_t(A) dt and G(A) = int W(t) tau_t(A) dt, W(t) = -sgn(t) int_|t|^inf w.

    tau_t(A) = e^{itH} A e^{-itH} from Pade matrix exponentials.
    """
    ts, ws = gl_panels(0.0, T, panels)
    wt = autocorr_time_weight(ts, gamma)
    Wt = tail_weight(ts, gamma, T, panels)
    A = np.asarray(probes, dtype=complex)
    F = np.zeros(A.shape, dtype=complex)
    G = np.zeros(A.shape, dtype=complex)
    for t, q, a, b in zip(ts, ws, wt, Wt):
        U = expm(1j * t * H)
        plus = U @ A @ U.conj().T
        minus = U.conj().T @ A @ U
        F += q * a * (plus + minus)
        G -= q * b * (plus - minus)
    return F, G


def brute_partial_trace(A, keep, n_sites, d):
    """Normalized partial trace with little-endian site order, via einsum on a reshaped tensor."""
    T = A.reshape([d] * (2 * n_sites))
    # axis i of the row block is site n_sites-1-i
    letters = "abcdefghijklmnopqrstuvwxyz"
    rows = list(letters[:n_sites])
    cols = list(letters[n_sites:2 * n_sites])
    traced = [s for s in range(n_sites) if s not in keep]
    for s in traced:
        cols[n_sites - 1 - s] = rows[n_sites - 1 - s]
    out_rows = [rows[n_sites - 1 - s] for s in sorted(keep, reverse=True)]
    out_cols = [cols[n_sites - 1 - s] for s in sorted(keep, reverse=True)]
    spec = "".join(rows) + "".join(cols) + "->" + "".join(out_rows) + "".join(out_cols)
    D = d ** len(keep)
    return np.einsum(spec, T).reshape(D, D) / d ** len(traced)


def kron_sites(ops_by_site, n_sites, d):
    """Tensor product with site 0 least significant; missing sites get the identity."""
    M = np.ones((1, 1))
    for s in range(n_sites):
        M = np.kron(ops_by_site.get(s, np.eye(d)), M)
    return M
