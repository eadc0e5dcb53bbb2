"""ISAC metrics and training losses.

Two independent evaluation paths exist:

* plain numpy on complex arrays (reporting, baselines), batched over any
  leading sample axes;
* tape expressions on (real, imag) beamformer nodes (training).

Array layout: ``H`` is ``(..., M, n_t, M*K)``, ``G`` is ``(..., M, n_t, M)``
(see :mod:`fedisac.channel`), beams ``W`` are ``(..., M, n_t, K)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .channel import ChannelSample, NetworkConfig, steering_vector


@dataclass
class Beamformer:
    W: np.ndarray  # (n_t, K)
    owner: int

    def power(self) -> float:
        return float(np.sum(np.abs(self.W) ** 2))


@dataclass
class NetworkState:
    sample: ChannelSample
    W: np.ndarray  # (M, n_t, K)
    cfg: NetworkConfig

    def __post_init__(self):
        c = self.cfg
        if self.W.shape != (c.M, c.n_t, c.K):
            raise ValueError(f"beam shape {self.W.shape} != {(c.M, c.n_t, c.K)}")

    @property
    def beams(self) -> list[Beamformer]:
        return [Beamformer(self.W[m], m) for m in range(self.cfg.M)]


# ---------------------------------------------------------------------------
# plain path
# ---------------------------------------------------------------------------

def comm_power(H, W):
    """``P[..., m, c, k] = |h_{m,c}^H w_{m,k}|^2``."""
    return np.abs(np.einsum("...mtc,...mtk->...mck", H.conj(), W)) ** 2


def sense_power(G, W):
    """``Q[..., m, n, k] = |g_{m,n}^H w_{m,k}|^2``."""
    return np.abs(np.einsum("...mtn,...mtk->...mnk", G.conj(), W)) ** 2


def _blocks(P, M, K):
    """(..., M_tx, M*K, K) -> (..., M_tx, M_rx, K_user, K_beam)."""
    return P.reshape(P.shape[:-2] + (M, K, K))


def comm_sinr_all(H, W, cfg: NetworkConfig):
    M, K = cfg.M, cfg.K
    T = _blocks(comm_power(H, W), M, K)
    eye = np.eye(K, dtype=bool)
    cross = ~np.eye(M, dtype=bool)
    own = np.stack([T[..., m, m, :, :] for m in range(M)], axis=-3)  # (..., M, K, K)
    sig = np.sum(np.where(eye, own, 0.0), axis=-1)
    intra = np.sum(np.where(eye, 0.0, own), axis=-1)
    ici = np.sum(np.where(cross[:, :, None, None], T, 0.0), axis=(-4, -1))  # (..., M_rx, K)
    return sig / (intra + ici + cfg.sigma_c2)


def _sense_totals(G, W, M):
    Q = np.sum(sense_power(G, W), axis=-1)           # (..., M_tx, M_rx)
    cross = ~np.eye(M, dtype=bool)
    return np.diagonal(Q, axis1=-2, axis2=-1), np.where(cross, Q, 0.0)


def sensing_sinr_all(G, W, cfg: NetworkConfig):
    echo, Qx = _sense_totals(G, W, cfg.M)
    return cfg.n_r * echo / (np.sum(Qx, axis=-2) + cfg.sigma_s2)


def cil_all(H, W, cfg: NetworkConfig):
    """Communication leakage of each BS onto other cells' users, (..., M)."""
    M, K = cfg.M, cfg.K
    T = _blocks(comm_power(H, W), M, K)
    mask = ~np.eye(M, dtype=bool)
    return np.sum(np.where(mask[:, :, None, None], T, 0.0), axis=(-3, -2, -1))


def sil_all(G, W, cfg: NetworkConfig):
    return np.sum(_sense_totals(G, W, cfg.M)[1], axis=-1)


def rates(H, G, W, cfg: NetworkConfig):
    """Per-sample ``(R_c, R_s)`` in bits/s/Hz."""
    rc = np.sum(np.log2(1.0 + comm_sinr_all(H, W, cfg)), axis=(-2, -1))
    rs = np.sum(np.log2(1.0 + sensing_sinr_all(G, W, cfg)), axis=-1)
    return rc, rs


def evaluate(H, G, W, cfg: NetworkConfig) -> dict:
    """Test-set means of the reported metrics."""
    rc, rs = rates(H, G, W, cfg)
    return {
        "rc": float(np.mean(rc)),
        "rs": float(np.mean(rs)),
        "cil": float(np.mean(np.sum(cil_all(H, W, cfg), axis=-1))),
        "sil": float(np.mean(np.sum(sil_all(G, W, cfg), axis=-1))),
    }


def comm_sinr(state: NetworkState, m: int, k: int) -> float:
    c = state.cfg
    if not (0 <= m < c.M and 0 <= k < c.K):
        raise IndexError(f"user ({m}, {k}) out of range")
    return float(comm_sinr_all(state.sample.H, state.W, c)[m, k])


def sensing_sinr(state: NetworkState, m: int) -> float:
    if not 0 <= m < state.cfg.M:
        raise IndexError(f"BS {m} out of range")
    return float(sensing_sinr_all(state.sample.G, state.W, state.cfg)[m])


def sum_comm_rate(state: NetworkState) -> float:
    return float(rates(state.sample.H, state.sample.G, state.W, state.cfg)[0])


def sum_radar_rate(state: NetworkState) -> float:
    return float(rates(state.sample.H, state.sample.G, state.W, state.cfg)[1])


def cil(state: NetworkState, m: int) -> float:
    return float(cil_all(state.sample.H, state.W, state.cfg)[m])


def sil(state: NetworkState, m: int) -> float:
    return float(sil_all(state.sample.G, state.W, state.cfg)[m])


def vfl_loss_value(H, G, W, cfg: NetworkConfig, rho: float) -> float:
    rc, rs = rates(H, G, W, cfg)
    return float(np.mean(-(rho * rc + (1.0 - rho) * rs)))


def hfl_loss_value(H_m, G_m, W_m, m: int, cfg: NetworkConfig, rho: float,
                   alpha: float, beta: float) -> float:
    """Plain evaluation of the local leakage loss of BS ``m``, batch-averaged.

    ``H_m`` is ``(..., n_t, M*K)``, ``G_m`` ``(..., n_t, M)``, ``W_m`` ``(..., n_t, K)``.
    """
    K = cfg.K
    P = np.abs(np.einsum("...tc,...tk->...ck", H_m.conj(), W_m)) ** 2   # (..., MK, K)
    own = P[..., m * K:(m + 1) * K, :]
    eye = np.eye(K, dtype=bool)
    sig = np.sum(np.where(eye, own, 0.0), axis=-1)
    intra = np.sum(np.where(eye, 0.0, own), axis=-1)
    leak = np.sum(np.delete(P, np.s_[m * K:(m + 1) * K], axis=-2), axis=-2)  # per beam k
    lc = -np.sum(np.log2(1.0 + sig / (intra + cfg.sigma_c2)) - alpha * leak, axis=-1)
    Q = np.abs(np.einsum("...tn,...tk->...nk", G_m.conj(), W_m)) ** 2   # (..., M, K)
    echo = np.sum(Q[..., m, :], axis=-1)
    sil_m = np.sum(np.delete(Q, m, axis=-2), axis=(-2, -1))
    ls = -(np.log2(1.0 + cfg.n_r * echo / cfg.sigma_s2) - beta * sil_m)
    return float(np.mean(rho * lc + (1.0 - rho) * ls))


# ---------------------------------------------------------------------------
# graph path
# ---------------------------------------------------------------------------

def _cpower(C: np.ndarray, Wr: nx.Var, Wi: nx.Var) -> nx.Var:
    """|C^H W|^2 for a constant complex ``C`` (B, n_t, X) and W = Wr + j Wi (B, n_t, K)."""
    CrT = np.swapaxes(C.real, -1, -2)
    CiT = np.swapaxes(C.imag, -1, -2)
    re = nx.matmul(CrT, Wr) + nx.matmul(CiT, Wi)
    im = nx.matmul(CrT, Wi) - nx.matmul(CiT, Wr)
    return nx.abs2(re, im)


def vfl_global_loss(H, G, Wr: list, Wi: list, cfg: NetworkConfig, rho: float) -> nx.Var:
    """Batch mean of ``-(rho*R_c + (1-rho)*R_s)`` over all M beamformer branches.

    ``H`` (B, M, n_t, MK) and ``G`` (B, M, n_t, M) are constants; ``Wr[m]``,
    ``Wi[m]`` are (B, n_t, K) nodes of one tape.
    """
    M, K = cfg.M, cfg.K
    eye = np.eye(K)
    Pc = [_cpower(H[:, n], Wr[n], Wi[n]) for n in range(M)]   # (B, MK, K)
    Ps = [_cpower(G[:, n], Wr[n], Wi[n]) for n in range(M)]   # (B, M, K)
    rc = rs = None
    for m in range(M):
        rows = (slice(None), slice(m * K, (m + 1) * K), slice(None))
        own = Pc[m][rows]
        sig = nx.sum(own * eye, axis=2)
        den = nx.sum(own * (1.0 - eye), axis=2) + cfg.sigma_c2
        for n in range(M):
            if n != m:
                den = den + nx.sum(Pc[n][rows], axis=2)
        r = nx.sum(nx.log2(1.0 + sig / den), axis=1)
        rc = r if rc is None else rc + r

        echo = nx.sum(Ps[m][:, m, :], axis=1) * float(cfg.n_r)
        den_s = None
        for n in range(M):
            if n != m:
                t = nx.sum(Ps[n][:, m, :], axis=1)
                den_s = t if den_s is None else den_s + t
        den_s = cfg.sigma_s2 if den_s is None else den_s + cfg.sigma_s2
        r = nx.log2(1.0 + echo / den_s)
        rs = r if rs is None else rs + r
    return nx.mean(-(rho * rc + (1.0 - rho) * rs))


def hfl_local_loss(H_m, G_m, Wr: nx.Var, Wi: nx.Var, m: int, cfg: NetworkConfig,
                   rho: float, alpha: float, beta: float) -> nx.Var:
    """Batch mean of BS ``m``'s leakage-penalised loss; reads only ``H_m``, ``G_m``.

    Intra-cell interference stays in the SINR denominator, inter-cell
    interference is replaced by the leakage penalties.
    """
    M, K = cfg.M, cfg.K
    eye = np.eye(K)
    P = _cpower(H_m, Wr, Wi)                               # (B, MK, K)
    own = P[:, m * K:(m + 1) * K, :]
    sig = nx.sum(own * eye, axis=2)
    intra = nx.sum(own * (1.0 - eye), axis=2)
    rate_c = nx.log2(1.0 + sig / (intra + cfg.sigma_c2))
    other = np.ones(M * K)
    other[m * K:(m + 1) * K] = 0.0
    leak = nx.sum(P * other[:, None], axis=1)              # (B, K) per beam
    lc = -nx.sum(rate_c - alpha * leak, axis=1)

    Q = _cpower(G_m, Wr, Wi)                               # (B, M, K)
    echo = nx.sum(Q[:, m, :], axis=1)
    mask = np.ones(M)
    mask[m] = 0.0
    sil_m = nx.sum(nx.sum(Q, axis=2) * mask, axis=1)
    ls = -(nx.log2(1.0 + echo * (cfg.n_r / cfg.sigma_s2)) - beta * sil_m)
    return nx.mean(rho * lc + (1.0 - rho) * ls)


# ---------------------------------------------------------------------------
# beampattern
# ---------------------------------------------------------------------------

def beampattern(W: np.ndarray, grid, normalize: bool = True) -> np.ndarray:
    """Transmit power towards each angle, ``sum_k |a(theta)^H w_k|^2``.

    Returned in dB relative to the peak when ``normalize`` is set.
    """
    W = np.asarray(W)
    A = steering_vector(np.asarray(grid, dtype=np.float64).reshape(-1), W.shape[-2])
    p = np.sum(np.abs(A.conj() @ W) ** 2, axis=-1)
    if not normalize:
        return p
    p = np.maximum(p, 1e-300)
    return 10.0 * np.log10(p / p.max())
