"""Benchmark beamformers: MRT, IMT, CBF, WMMSE, per-cell DL and time sharing.

Closed-form schemes work on a batch of samples at once: ``H`` (S, M, n_t, MK),
``G`` (S, M, n_t, M) in, beams (S, M, n_t, K) out.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .channel import NetworkConfig, steering_vector

log = logging.getLogger(__name__)


class BaselineKind(str, enum.Enum):
    WMMSE = "WMMSE"
    MRT = "MRT"
    IMT = "IMT"
    CBF = "CBF"
    PER_CELL_DL = "PerCellDL"
    TIME_SHARING = "TimeSharing"


def _own_cols(H, cfg):
    """Serving-cell channels h_{m,m,k}: (..., M, n_t, K)."""
    K = cfg.K
    return np.stack([H[..., m, :, m * K:(m + 1) * K] for m in range(cfg.M)], axis=-3)


def _unit_columns(X, p_t, K):
    nrm = np.linalg.norm(X, axis=-2, keepdims=True)
    if np.any(nrm == 0):
        raise ValueError("zero channel: beam direction undefined")
    return np.sqrt(p_t / K) * X / nrm


def mrt(H, cfg: NetworkConfig):
    """w_{m,k} = sqrt(P/K) h_{m,m,k} / ||h_{m,m,k}||."""
    return _unit_columns(_own_cols(H, cfg), cfg.p_t, cfg.K)


def cbf(theta, cfg: NetworkConfig):
    """Every beam of BS m points at its target: sqrt(P/K) a(theta_m) / sqrt(n_t)."""
    a = steering_vector(np.asarray(theta), cfg.n_t) / np.sqrt(cfg.n_t)  # (..., M, n_t)
    W = np.repeat(a[..., None], cfg.K, axis=-1)
    return np.sqrt(cfg.p_t / cfg.K) * W


def interfered_channels(H_m, G_m, m: int, cfg: NetworkConfig):
    """Stack of every channel BS ``m`` leaks into: other cells' users and BSs."""
    K = cfg.K
    keep_h = [c for c in range(cfg.M * cfg.K) if c // K != m]
    keep_g = [n for n in range(cfg.M) if n != m]
    return np.concatenate([H_m[..., keep_h], G_m[..., keep_g]], axis=-1)


def imt(H, G, cfg: NetworkConfig, tol: float = 1e-10):
    """MRT beams projected onto the null space of the interfered channels.

    Returns ``(W, fallback)``; ``fallback[s, m]`` flags samples where the
    channels span the whole antenna space and the least-leakage subspace
    (smallest singular values) was used instead.
    """
    H = np.asarray(H)
    G = np.asarray(G)
    squeeze = H.ndim == 3
    if squeeze:
        H, G = H[None], G[None]
    S = H.shape[0]
    own = _own_cols(H, cfg)
    W = np.empty(own.shape, dtype=np.complex128)
    fallback = np.zeros((S, cfg.M), dtype=bool)
    for s in range(S):
        for m in range(cfg.M):
            C = interfered_channels(H[s, m], G[s, m], m, cfg)
            if C.shape[1] == 0:
                P = np.eye(cfg.n_t)
            else:
                U, sv, _ = np.linalg.svd(C, full_matrices=True)
                rank = int(np.sum(sv > tol * max(sv[0], 1e-300)))
                if rank < cfg.n_t:
                    N = U[:, rank:]
                else:
                    fallback[s, m] = True
                    N = U[:, -max(1, cfg.n_t // 2):]
                P = N @ N.conj().T
            X = P @ own[s, m]
            nrm = np.linalg.norm(X, axis=0)
            nrm = np.where(nrm > 0, nrm, 1.0)
            W[s, m] = np.sqrt(cfg.p_t / cfg.K) * X / nrm
    if squeeze:
        return W[0], fallback[0]
    return W, fallback


# ---------------------------------------------------------------------------
# WMMSE
# ---------------------------------------------------------------------------

class BisectionError(RuntimeError):
    pass


@dataclass
class WmmseLog:
    rates: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def _power_solve(A, B, p_t, tol=1e-10, max_iter=200):
    """Solve W = (A + mu I)^-1 B with the smallest mu >= 0 meeting ||W||_F^2 <= p_t."""
    lam, U = np.linalg.eigh(A)
    lam = np.maximum(lam, 0.0)
    c = np.sum(np.abs(U.conj().T @ B) ** 2, axis=1)

    def power(mu):
        return float(np.sum(c / (lam + mu) ** 2))

    if lam.min() > 1e-14 * max(lam.max(), 1.0) and power(0.0) <= p_t:
        return U @ ((U.conj().T @ B) / lam[:, None]), 0.0
    lo, hi = 0.0, max(1e-12, np.sqrt(np.sum(c) / p_t))
    while power(hi) > p_t:
        hi *= 2.0
        if hi > 1e300:
            raise BisectionError("could not bracket the power multiplier")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if power(mid) > p_t:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(hi, 1e-300):
            break
    else:
        raise BisectionError(f"bisection did not converge: bracket [{lo}, {hi}], power {power(hi)}")
    mu = hi
    return U @ ((U.conj().T @ B) / (lam + mu)[:, None]), mu


def wmmse(H, cfg: NetworkConfig, max_iters: int = 100, tol: float = 1e-6,
          W0=None, bisect_tol: float = 1e-10):
    """Multi-cell WMMSE for the sum communication rate of one sample.

    ``H`` is (M, n_t, MK).  Starts from MRT unless ``W0`` is given; any start is
    rescaled to full per-BS power first, so only its direction matters.  Stops
    when the sum rate changes by less than ``tol`` or after ``max_iters`` iterations.
    """
    M, K = cfg.M, cfg.K
    W = mrt(H, cfg) if W0 is None else np.array(W0, dtype=np.complex128)
    nrm = np.sqrt(np.sum(np.abs(W) ** 2, axis=(-2, -1), keepdims=True))
    if np.any(nrm == 0):
        raise ValueError("initial beamformer of some BS is all zero")
    W = W * np.sqrt(cfg.p_t) / nrm
    hist = WmmseLog()

    def sum_rate(W):
        return float(np.sum(np.log2(1.0 + metrics.comm_sinr_all(H, W, cfg))))

    hist.rates.append(sum_rate(W))
    # amp[n, m, k, i] = h_{n,m,k}^H w_{n,i}
    for it in range(max_iters):
        amp = np.einsum("ntc,nti->nci", H.conj(), W).reshape(M, M, K, K)
        J = np.sum(np.abs(amp) ** 2, axis=(0, 3)) + cfg.sigma_c2             # (M, K)
        desired = np.stack([np.diagonal(amp[m, m]) for m in range(M)])      # (M, K)
        u = desired / J
        v = 1.0 / np.maximum(1.0 - np.real(np.conj(u) * desired), 1e-300)
        wt = v * np.abs(u) ** 2                                             # (M, K)
        W_new = np.empty_like(W)
        for m in range(M):
            Hm = H[m]                                                       # (n_t, MK)
            A = (Hm * wt.reshape(-1)) @ Hm.conj().T
            B = Hm[:, m * K:(m + 1) * K] * (v[m] * u[m])
            W_new[m], _ = _power_solve(A, B, cfg.p_t, tol=bisect_tol)
        W = W_new
        r = sum_rate(W)
        hist.rates.append(r)
        hist.iterations = it + 1
        if abs(r - hist.rates[-2]) < tol:
            hist.converged = True
            break
    return W, hist


def wmmse_batch(H, cfg: NetworkConfig, max_iters: int = 100, tol: float = 1e-6):
    W = np.empty((H.shape[0], cfg.M, cfg.n_t, cfg.K), dtype=np.complex128)
    for s in range(H.shape[0]):
        W[s], _ = wmmse(H[s], cfg, max_iters, tol)
    return W


# ---------------------------------------------------------------------------
# time sharing
# ---------------------------------------------------------------------------

def time_sharing_curve(corner_comm, corner_sense, n: int = 11):
    """Points ``lam*corner_comm + (1-lam)*corner_sense`` for lam on [0, 1]; (n, 2)."""
    lam = np.linspace(0.0, 1.0, n)[:, None]
    return lam * np.asarray(corner_comm, float) + (1.0 - lam) * np.asarray(corner_sense, float)


def above_segment(point, corner_comm, corner_sense) -> float:
    """Signed distance of ``(R_c, R_s)`` from the time-sharing line.

    Positive means the point lies on the far side from the origin (beyond the
    segment, i.e. it dominates some time-sharing mixture).
    """
    p = np.asarray(point, float)
    a = np.asarray(corner_comm, float)
    b = np.asarray(corner_sense, float)
    d = b - a
    n = np.array([-d[1], d[0]])
    nn = np.linalg.norm(n)
    if nn == 0:
        return float(np.linalg.norm(p - a))
    n = n / nn
    # orient the normal away from the origin
    if np.dot(n, a) < 0:
        n = -n
    return float(np.dot(p - a, n))
