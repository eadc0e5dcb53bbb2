"""Vertical and horizontal federated training of the per-BS beamforming networks.

The server is simulated in-process, but every exchange goes through the byte
encodings below so that the overhead ledger counts what actually moves.

Wire layout of every message (little endian)::

    tag      4 bytes   b"VUP1" | b"VFB1" | b"MDL1"
    bs       u16       sender / recipient BS (0xFFFF = server broadcast)
    round    u32
    ndim...  per message, documented on each class
    payload  float64 values; complex numbers as interleaved (re, im)

Only payload bytes are counted as exchanged bits; headers are excluded, in
line with counting model parameters or channel coefficients.
"""
from __future__ import annotations

import csv
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import beamnet, metrics
from . import numerics as nx
from .channel import Dataset, NetworkConfig

BROADCAST = 0xFFFF


# ---------------------------------------------------------------------------
# configuration and ledger
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 1e-3
    optimizer: str = "adam"
    weight_decay: float = 1e-6
    batch: int = 64
    epochs: int = 20            # VFL / per-cell passes over the training set
    rounds: int = 200           # HFL global rounds
    local_steps: int = 5        # HFL local iterations per round (E)
    hidden: tuple = (512, 512, 512, 512)
    dropout_p: float = 0.15
    anneal_frac: float = 0.1    # leakage weights ramp from 0 over this share of training
    seed: int = 0

    def optimizer_state(self) -> nx.OptimizerState:
        return nx.OptimizerState(kind=self.optimizer, lr=self.lr, weight_decay=self.weight_decay)


@dataclass
class OverheadLedger:
    """Counters of exchanged data.

    ``complex_up`` follows the per-iteration convention of the overhead table
    ((M+1) K n_t values per BS and VFL iteration); ``complex_up_literal`` and
    ``bits_*`` count serialized payloads exactly.
    """
    complex_up: int = 0
    complex_up_literal: int = 0
    complex_down_literal: int = 0
    bits_up: int = 0
    bits_down: int = 0
    rounds: int = 0
    flops: dict = field(default_factory=dict)

    def add(self, other: "OverheadLedger") -> None:
        self.complex_up += other.complex_up
        self.complex_up_literal += other.complex_up_literal
        self.complex_down_literal += other.complex_down_literal
        self.bits_up += other.bits_up
        self.bits_down += other.bits_down
        self.rounds += other.rounds
        for k, v in other.flops.items():
            self.flops[k] = self.flops.get(k, 0.0) + v

    def snapshot(self) -> dict:
        return {
            "complex_up": self.complex_up,
            "complex_up_literal": self.complex_up_literal,
            "complex_down_literal": self.complex_down_literal,
            "bits_up": self.bits_up,
            "bits_down": self.bits_down,
            "rounds": self.rounds,
        }


def overhead_table(M: int, K: int, n_t: int, T: int, B: int) -> dict:
    """Closed-form communication overhead of each scheme."""
    return {
        "wmmse_deploy_complex": M * M * K * n_t,
        "vfl_train_complex": (M * M + M) * T * K * n_t,
        "vfl_per_bs_iteration_complex": (M + 1) * K * n_t,
        "vfl_literal_per_bs_sample_complex": (M * K + M + K) * n_t,
        "hfl_train_bits": 2 * M * B * T,
    }


def rounds_bound_note() -> str:
    return ("HFL rounds to reach accuracy eps scale as "
            "O[(1/eps)((1 + 1/K) E G^2 + (Gamma + G^2)/E + G^2)]; reported only, never used.")


# ---------------------------------------------------------------------------
# messages
# ---------------------------------------------------------------------------

def _pack_complex(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<c16").tobytes()


def _header(tag: bytes, bs: int, rnd: int) -> bytes:
    return struct.pack("<4sHI", tag, bs, rnd)


def _read_header(buf: bytes, tag: bytes):
    t, bs, rnd = struct.unpack_from("<4sHI", buf, 0)
    if t != tag:
        raise ValueError(f"expected message {tag!r}, got {t!r}")
    return bs, rnd, 10


@dataclass
class VflUpload:
    """BS -> server.  After the header: ``B, n_t, K, n_h, n_g`` as u32, then the
    sample ids (B x u64), then W (B, n_t, K), H_m (B, n_t, n_h), G_m (B, n_t, n_g)
    as complex payload."""
    bs: int
    round: int
    sample_ids: np.ndarray
    W: np.ndarray
    H: np.ndarray
    G: np.ndarray
    TAG = b"VUP1"

    def to_bytes(self) -> bytes:
        B, n_t, K = self.W.shape
        head = _header(self.TAG, self.bs, self.round)
        head += struct.pack("<5I", B, n_t, K, self.H.shape[2], self.G.shape[2])
        head += np.asarray(self.sample_ids, dtype="<u8").tobytes()
        return head + _pack_complex(self.W) + _pack_complex(self.H) + _pack_complex(self.G)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "VflUpload":
        bs, rnd, off = _read_header(buf, cls.TAG)
        B, n_t, K, n_h, n_g = struct.unpack_from("<5I", buf, off)
        off += 20
        ids = np.frombuffer(buf, dtype="<u8", count=B, offset=off).astype(np.int64)
        off += 8 * B
        arrs = []
        for cols in (K, n_h, n_g):
            n = B * n_t * cols
            arrs.append(np.frombuffer(buf, dtype="<c16", count=n, offset=off)
                        .reshape(B, n_t, cols).astype(np.complex128))
            off += 16 * n
        if off != len(buf):
            raise ValueError("malformed VFL upload")
        return cls(bs, rnd, ids, *arrs)

    @property
    def payload_complex(self) -> int:
        return self.W.size + self.H.size + self.G.size


@dataclass
class VflFeedback:
    """server -> BS.  After the header: ``B, n_t, K`` as u32, then the loss
    (float64) and dL/dW as complex (dL/dRe W + j dL/dIm W), shape (B, n_t, K)."""
    bs: int
    round: int
    loss: float
    grad: np.ndarray
    TAG = b"VFB1"

    def to_bytes(self) -> bytes:
        head = _header(self.TAG, self.bs, self.round) + struct.pack("<3I", *self.grad.shape)
        return head + struct.pack("<d", self.loss) + _pack_complex(self.grad)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "VflFeedback":
        bs, rnd, off = _read_header(buf, cls.TAG)
        shape = struct.unpack_from("<3I", buf, off)
        off += 12
        (loss,) = struct.unpack_from("<d", buf, off)
        off += 8
        g = np.frombuffer(buf, dtype="<c16", offset=off).reshape(shape).astype(np.complex128)
        return cls(bs, rnd, loss, g)


@dataclass
class ModelMessage:
    """Model parameters in either direction.  After the header: the number of
    tensors (u32), then per tensor ``ndim`` (u8) and its dims (u32 each), then
    all unmasked float64 values layer by layer (weights then biases).  The mask
    is shared state: both ends hold the pruning mask of the global model."""
    bs: int
    round: int
    params: list
    masks: Optional[list] = None
    TAG = b"MDL1"

    def _values(self):
        vals = []
        for i, p in enumerate(self.params):
            if self.masks is not None and i % 2 == 0:
                vals.append(p[self.masks[i // 2]])
            else:
                vals.append(p.ravel())
        return np.concatenate(vals)

    def to_bytes(self) -> bytes:
        head = _header(self.TAG, self.bs, self.round) + struct.pack("<I", len(self.params))
        for p in self.params:
            head += struct.pack("<B", p.ndim) + struct.pack(f"<{p.ndim}I", *p.shape)
        return head + np.ascontiguousarray(self._values(), dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, buf: bytes, masks: Optional[list] = None) -> "ModelMessage":
        bs, rnd, off = _read_header(buf, cls.TAG)
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        shapes = []
        for _ in range(n):
            (nd,) = struct.unpack_from("<B", buf, off)
            off += 1
            shapes.append(struct.unpack_from(f"<{nd}I", buf, off))
            off += 4 * nd
        vals = np.frombuffer(buf, dtype="<f8", offset=off).astype(np.float64)
        params, pos = [], 0
        for i, shape in enumerate(shapes):
            if masks is not None and i % 2 == 0:
                mk = masks[i // 2]
                p = np.zeros(shape)
                cnt = int(mk.sum())
                p[mk] = vals[pos:pos + cnt]
            else:
                cnt = int(np.prod(shape))
                p = vals[pos:pos + cnt].reshape(shape).copy()
            pos += cnt
            params.append(p)
        if pos != vals.size:
            raise ValueError("model message payload size mismatch")
        return cls(bs, rnd, params, masks)

    def payload_bits(self) -> int:
        return 64 * int(self._values().size)


# ---------------------------------------------------------------------------
# shared training pieces
# ---------------------------------------------------------------------------

def leakage_ramp(progress: float, anneal_frac: float) -> float:
    """Linear ramp 0 -> 1 over the first ``anneal_frac`` of training."""
    if anneal_frac <= 0:
        return 1.0
    return float(min(1.0, max(0.0, progress / anneal_frac)))


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def apply_update(model: beamnet.MlpModel, opt: nx.OptimizerState, grads) -> None:
    model.set_params(nx.optimizer_step(opt, model.params(), grads))


def _surrogate_backward(rec: beamnet.ForwardRecord, grad: np.ndarray):
    """Backpropagate an upstream dL/dW (complex packing) through a BS-local tape."""
    s = nx.sum(rec.Wr * grad.real) + nx.sum(rec.Wi * grad.imag)
    return nx.backward(rec.tape, s)


def local_loss_step(model, opt, H_m, G_m, m, cfg, rho, alpha, beta, rng,
                    per_cell: bool = False) -> float:
    """One gradient step of BS ``m`` on its local leakage loss."""
    rec = beamnet.forward(model, H_m, G_m, m, cfg, rng=rng, per_cell=per_cell)
    loss = metrics.hfl_local_loss(H_m, G_m, rec.Wr, rec.Wi, m, cfg, rho, alpha, beta)
    grads = nx.backward(rec.tape, loss)
    apply_update(model, opt, grads[:len(model.params())])
    return float(loss.value)


def _batches(n: int, batch: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    return [perm[i:i + batch] for i in range(0, n, batch)]


class TrainLog:
    """Append-only CSV training log."""
    COLUMNS = ["round", "loss", "rc", "rs", "complex_up", "complex_up_literal",
               "bits_up", "bits_down", "wall_time"]

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.rows: list[dict] = []
        if self.path and not self.path.exists():
            with open(self.path, "w", newline="") as f:
                csv.writer(f).writerow(self.COLUMNS)

    def append(self, **row) -> None:
        self.rows.append(row)
        if self.path:
            with open(self.path, "a", newline="") as f:
                csv.writer(f).writerow([row.get(c, "") for c in self.COLUMNS])


# ---------------------------------------------------------------------------
# VFL
# ---------------------------------------------------------------------------

class VflServer:
    """Collects one upload per BS, evaluates the global loss, emits gradients."""

    def __init__(self, cfg: NetworkConfig, rho: float):
        self.cfg = cfg
        self.rho = rho
        self.inbox: dict[int, VflUpload] = {}
        self.last_rates = (np.nan, np.nan)

    def receive(self, raw: bytes) -> None:
        msg = VflUpload.from_bytes(raw)
        if msg.bs in self.inbox:
            raise RuntimeError(f"duplicate upload from BS {msg.bs}")
        self.inbox[msg.bs] = msg

    def ready(self) -> bool:
        return len(self.inbox) == self.cfg.M

    def aggregate(self) -> list[bytes]:
        cfg = self.cfg
        if not self.ready():
            raise RuntimeError("aggregate called before all uploads arrived")
        ups = [self.inbox[m] for m in range(cfg.M)]
        self.inbox = {}
        ids = ups[0].sample_ids
        rnd = ups[0].round
        for u in ups[1:]:
            if u.round != rnd or not np.array_equal(u.sample_ids, ids):
                raise ValueError("misaligned VFL uploads: sample indices or rounds differ")
        H = np.stack([u.H for u in ups], axis=1)
        G = np.stack([u.G for u in ups], axis=1)
        tape = nx.Tape()
        Wr = [tape.leaf(u.W.real) for u in ups]
        Wi = [tape.leaf(u.W.imag) for u in ups]
        loss = metrics.vfl_global_loss(H, G, Wr, Wi, cfg, self.rho)
        grads = nx.backward(tape, loss)
        W = np.stack([u.W for u in ups], axis=1)
        rc, rs = metrics.rates(H, G, W, cfg)
        self.last_rates = (float(rc.mean()), float(rs.mean()))
        M = cfg.M
        return [VflFeedback(m, rnd, float(loss.value), grads[m] + 1j * grads[M + m]).to_bytes()
                for m in range(M)]


@dataclass
class VflSession:
    cfg: NetworkConfig
    train: TrainConfig
    rho: float
    models: list
    opts: list
    server: VflServer
    ledger: OverheadLedger = field(default_factory=OverheadLedger)
    T: int = 0
    rngs: list = field(default_factory=list)


def new_vfl_session(cfg: NetworkConfig, train: TrainConfig, rho: Optional[float] = None) -> VflSession:
    rho = cfg.rho if rho is None else rho
    models = [beamnet.init_model(cfg, train.hidden, seed=train.seed * 1000 + m, dropout_p=train.dropout_p)
              for m in range(cfg.M)]
    return VflSession(cfg, train, rho, models, [train.optimizer_state() for _ in models],
                      VflServer(cfg, rho), rngs=[_stream(train.seed, 1, m) for m in range(cfg.M)])


def vfl_round(session: VflSession, data: Dataset, idx) -> tuple[float, OverheadLedger]:
    """One VFL iteration on the aligned minibatch ``idx``."""
    cfg = session.cfg
    idx = np.asarray(idx)
    if data.config.M != cfg.M or data.config.n_t != cfg.n_t or data.config.K != cfg.K:
        raise ValueError("dataset dimensions do not match the session")
    delta = OverheadLedger(rounds=1)
    records = []
    for m, model in enumerate(session.models):
        H_m, G_m = data.H[idx, m], data.G[idx, m]
        rec = beamnet.forward(model, H_m, G_m, m, cfg, rng=session.rngs[m])
        records.append(rec)
        up = VflUpload(m, session.T, idx, rec.W, H_m, G_m)
        raw = up.to_bytes()
        session.server.receive(raw)
        delta.complex_up += (cfg.M + 1) * cfg.K * cfg.n_t
        delta.complex_up_literal += up.payload_complex
        delta.bits_up += 128 * up.payload_complex
    feedback = [VflFeedback.from_bytes(b) for b in session.server.aggregate()]
    for m, (model, rec, fb) in enumerate(zip(session.models, records, feedback)):
        delta.complex_down_literal += fb.grad.size
        delta.bits_down += 128 * fb.grad.size + 64
        grads = _surrogate_backward(rec, fb.grad)
        apply_update(model, session.opts[m], grads[:len(model.params())])
    session.T += 1
    session.ledger.add(delta)
    return feedback[0].loss, delta


def monolithic_vfl_grads(models, H, G, cfg: NetworkConfig, rho: float, rngs=None):
    """Reference: the global loss on one tape spanning all M networks.

    Returns the parameter gradients of every model (list of lists).
    """
    tape = nx.Tape()
    Wr, Wi, n_params = [], [], []
    for m, model in enumerate(models):
        start = len(tape.leaves)
        rec = beamnet.forward(model, H[:, m], G[:, m], m, cfg,
                              rng=None if rngs is None else rngs[m], tape=tape)
        n_params.append((start, len(tape.leaves)))
        Wr.append(rec.Wr)
        Wi.append(rec.Wi)
    loss = metrics.vfl_global_loss(H, G, Wr, Wi, cfg, rho)
    grads = nx.backward(tape, loss)
    return [grads[a:b] for a, b in n_params], float(loss.value)


def train_vfl(data: Dataset, train: TrainConfig, rho: Optional[float] = None,
              cfg: Optional[NetworkConfig] = None, log: Optional[TrainLog] = None,
              on_epoch: Optional[Callable] = None) -> VflSession:
    cfg = cfg or data.config
    session = new_vfl_session(cfg, train, rho)
    order_rng = _stream(train.seed, 2)
    t0 = time.perf_counter()
    for epoch in range(train.epochs):
        losses = []
        for idx in _batches(len(data), train.batch, order_rng):
            loss, _ = vfl_round(session, data, idx)
            losses.append(loss)
        if log is not None:
            rc, rs = session.server.last_rates
            log.append(round=session.T, loss=float(np.mean(losses)), rc=rc, rs=rs,
                       wall_time=round(time.perf_counter() - t0, 3), **session.ledger.snapshot())
        if on_epoch:
            on_epoch(epoch, session)
    for model in session.models:
        model.eval()
    return session


# ---------------------------------------------------------------------------
# HFL
# ---------------------------------------------------------------------------

def fedavg(replicas: list) -> beamnet.MlpModel:
    """Elementwise mean of all parameter tensors.

    A weight stays pruned only if every replica has it pruned.
    """
    if not replicas:
        raise ValueError("fedavg needs at least one replica")
    dims = replicas[0].layer_dims
    for r in replicas[1:]:
        if r.layer_dims != dims:
            raise ValueError("architecture mismatch between replicas")
    params = []
    for i in range(len(replicas[0].params())):
        stack = np.stack([r.params()[i] for r in replicas])
        # where every replica agrees the mean is that value, kept exactly
        agree = np.all(stack == stack[0], axis=0)
        params.append(np.where(agree, stack[0], np.mean(stack, axis=0)))
    n = len(replicas)
    out = replicas[0].copy()
    masks = [r.masks for r in replicas if r.masks is not None]
    if len(masks) == n:
        out.masks = [np.logical_or.reduce([mk[i] for mk in masks]) for i in range(len(masks[0]))]
    else:
        out.masks = None
    out.set_params(params)
    return out


@dataclass
class HflSession:
    cfg: NetworkConfig
    train: TrainConfig
    rho: float
    alpha: float
    beta: float
    global_model: beamnet.MlpModel
    replicas: list
    opts: list
    ledger: OverheadLedger = field(default_factory=OverheadLedger)
    T: int = 0
    rngs: list = field(default_factory=list)
    touched: list = field(default_factory=list)   # (bs, array id) reads, for locality checks


def new_hfl_session(cfg: NetworkConfig, train: TrainConfig, rho=None, alpha=None, beta=None) -> HflSession:
    rho = cfg.rho if rho is None else rho
    a0, b0 = cfg.leakage_weights()
    alpha = a0 if alpha is None else alpha
    beta = b0 if beta is None else beta
    g = beamnet.init_model(cfg, train.hidden, seed=train.seed * 1000 + 999, dropout_p=train.dropout_p)
    return HflSession(cfg, train, rho, alpha, beta, g, [g.copy() for _ in range(cfg.M)],
                      [train.optimizer_state() for _ in range(cfg.M)],
                      rngs=[_stream(train.seed, 3, m) for m in range(cfg.M)])


class LocalData:
    """A BS's private dataset.  Records which BS read it."""

    def __init__(self, H_m, G_m, owner: int, audit: Optional[list] = None):
        self._H, self._G = H_m, G_m
        self.owner = owner
        self.audit = audit

    def __len__(self):
        return self._H.shape[0]

    def read(self, reader: int, idx):
        if self.audit is not None:
            self.audit.append((reader, self.owner))
        return self._H[idx], self._G[idx]


def hfl_local_epoch(replica, opt, local: LocalData, m: int, cfg: NetworkConfig, rho: float,
                    alpha: float, beta: float, steps: int, batch: int,
                    rng: np.random.Generator) -> list[float]:
    """``steps`` minibatch gradient steps of BS ``m`` on its own data only."""
    if len(local) == 0:
        raise ValueError("empty local dataset")
    losses = []
    for _ in range(steps):
        idx = rng.choice(len(local), size=min(batch, len(local)), replace=False)
        H_m, G_m = local.read(m, idx)
        losses.append(local_loss_step(replica, opt, H_m, G_m, m, cfg, rho, alpha, beta, rng))
    return losses


def hfl_round(session: HflSession, locals_: list, ramp: float = 1.0) -> tuple[float, OverheadLedger]:
    """Broadcast, E local iterations per BS, upload, FedAvg."""
    cfg = session.cfg
    delta = OverheadLedger(rounds=1)
    masks = session.global_model.masks
    down = ModelMessage(BROADCAST, session.T, session.global_model.params(), masks)
    raw_down = down.to_bytes()
    uploads, losses = [], []
    for m in range(cfg.M):
        delta.bits_down += down.payload_bits()
        replica = session.global_model.copy()
        replica.train()
        replica.set_params(ModelMessage.from_bytes(raw_down, masks).params)
        session.replicas[m] = replica
        ls = hfl_local_epoch(replica, session.opts[m], locals_[m], m, cfg, session.rho,
                             ramp * session.alpha, ramp * session.beta,
                             session.train.local_steps, session.train.batch, session.rngs[m])
        losses += ls
        up = ModelMessage(m, session.T, replica.params(), masks)
        uploads.append(up.to_bytes())
        delta.bits_up += up.payload_bits()
    received = []
    for raw in uploads:
        r = session.global_model.copy()
        r.set_params(ModelMessage.from_bytes(raw, masks).params)
        received.append(r)
    if received:
        session.global_model = fedavg(received)
    session.T += 1
    session.ledger.add(delta)
    return float(np.mean(losses)) if losses else float("nan"), delta


def train_hfl(data: Dataset, train: TrainConfig, rho=None, alpha=None, beta=None,
              cfg: Optional[NetworkConfig] = None, log: Optional[TrainLog] = None,
              audit: Optional[list] = None) -> HflSession:
    cfg = cfg or data.config
    session = new_hfl_session(cfg, train, rho, alpha, beta)
    locals_ = [LocalData(*data.local(m), owner=m, audit=audit) for m in range(cfg.M)]
    t0 = time.perf_counter()
    for r in range(train.rounds):
        ramp = leakage_ramp(r / max(1, train.rounds), train.anneal_frac)
        loss, _ = hfl_round(session, locals_, ramp)
        if log is not None:
            log.append(round=session.T, loss=loss, wall_time=round(time.perf_counter() - t0, 3),
                       **session.ledger.snapshot())
    session.global_model.eval()
    return session


# ---------------------------------------------------------------------------
# per-cell training (no leakage terms, serving-cell inputs only)
# ---------------------------------------------------------------------------

def train_per_cell(data: Dataset, train: TrainConfig, rho=None,
                   cfg: Optional[NetworkConfig] = None) -> list:
    cfg = cfg or data.config
    rho = cfg.rho if rho is None else rho
    models = []
    for m in range(cfg.M):
        model = beamnet.init_model(cfg, train.hidden, seed=train.seed * 1000 + 500 + m,
                                   dropout_p=train.dropout_p)
        opt = train.optimizer_state()
        rng = _stream(train.seed, 4, m)
        H_m, G_m = data.local(m)
        for _ in range(train.epochs):
            for idx in _batches(len(data), train.batch, rng):
                local_loss_step(model, opt, H_m[idx], G_m[idx], m, cfg, rho, 0.0, 0.0, rng,
                                per_cell=True)
        models.append(model.eval())
    return models


# ---------------------------------------------------------------------------
# complexity
# ---------------------------------------------------------------------------

WMMSE_COMPLEX_OP_FLOPS = 8


def estimate_complexity(cfg: NetworkConfig, hidden=(512, 512, 512, 512), phase: str = "forward",
                        wmmse_iters: int = 100) -> float:
    """Flop counts with explicit constants.

    forward  = 2 (MK + M + K) n_t d_H + 2 N_H d_H^2 + (N_H + 1) d_H + (M + 1) K n_t
    training = 3 * forward
    wmmse    = 8 L (K^2 n_t^2 + K n_t^3)
    """
    M, K, n_t = cfg.M, cfg.K, cfg.n_t
    n_h, d_h = len(hidden), hidden[0]
    fwd = (2 * (M * K + M + K) * n_t * d_h + 2 * n_h * d_h ** 2
           + (n_h + 1) * d_h + (M + 1) * K * n_t)
    if phase == "forward":
        return float(fwd)
    if phase == "training":
        return 3.0 * fwd
    if phase == "wmmse":
        return float(WMMSE_COMPLEX_OP_FLOPS * wmmse_iters * (K ** 2 * n_t ** 2 + K * n_t ** 3))
    raise ValueError(f"unknown phase {phase!r}")
