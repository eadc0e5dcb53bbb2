"""Beamforming MLP: channel encoding, forward pass on a tape, pruning, checkpoints."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numerics as nx
from .channel import NetworkConfig

CKPT_MAGIC = b"FISACMD\x00"
CKPT_VERSION = 1


class DegenerateOutput(ValueError):
    """The network produced an all-zero beamformer, so power scaling is undefined."""


# ---------------------------------------------------------------------------
# input encoding
# ---------------------------------------------------------------------------

def serving_first(H_m, G_m, m: int, M: int, K: int):
    """Reorder BS ``m``'s columns so its own cell comes first, then cells m+1, m+2, ..."""
    order = [(m + j) % M for j in range(M)]
    hcols = np.concatenate([np.arange(n * K, (n + 1) * K) for n in order])
    return H_m[..., hcols], G_m[..., order]


def canonical_phase(X):
    """Rotate every column so its entry on the reference antenna is real and >= 0.

    All losses depend on channels only through ``|c^H w|``, which a common phase
    on a column does not change, so this removes a nuisance input dimension.
    """
    ref = X[..., :1, :]
    mag = np.abs(ref)
    rot = np.where(mag > 0, np.conj(ref) / np.where(mag > 0, mag, 1.0), 1.0)
    return X * rot


def encode_input(H_m, G_m) -> np.ndarray:
    """``[Re H, Im H, Re G, Im G]``, each matrix flattened column by column.

    Accepts single matrices or batches (leading axis); output length
    ``2 * n_t * (cols(H) + cols(G))``.
    """
    H_m = np.asarray(H_m)
    G_m = np.asarray(G_m)
    if H_m.shape[:-1] != G_m.shape[:-1]:
        raise ValueError(f"H {H_m.shape} and G {G_m.shape} disagree on antenna count")
    lead = H_m.shape[:-2]

    def flat(a):
        return np.swapaxes(a, -1, -2).reshape(lead + (-1,))

    return np.concatenate([flat(H_m.real), flat(H_m.imag), flat(G_m.real), flat(G_m.imag)], axis=-1)


def decode_input(x, n_t: int, n_hcols: int, n_gcols: int):
    x = np.asarray(x, dtype=np.float64)
    lead = x.shape[:-1]
    nh, ng = n_t * n_hcols, n_t * n_gcols
    if x.shape[-1] != 2 * (nh + ng):
        raise ValueError("encoded length does not match dims")

    def unflat(v, cols):
        return np.swapaxes(v.reshape(lead + (cols, n_t)), -1, -2)

    H = unflat(x[..., :nh], n_hcols) + 1j * unflat(x[..., nh:2 * nh], n_hcols)
    G = unflat(x[..., 2 * nh:2 * nh + ng], n_gcols) + 1j * unflat(x[..., 2 * nh + ng:], n_gcols)
    return H, G


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass
class MlpModel:
    layer_dims: list
    weights: list
    biases: list
    masks: Optional[list] = None
    leaky_slope: float = nx.LEAKY_SLOPE
    dropout_p: float = 0.15
    mode: str = "train"
    seed: int = 0
    lineage: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer count mismatch")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[i], self.layer_dims[i + 1]) or b.shape != (self.layer_dims[i + 1],):
                raise ValueError(f"layer {i} has shapes {w.shape}, {b.shape}")

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_params(self, params) -> None:
        self.weights = [np.array(p, dtype=np.float64) for p in params[0::2]]
        self.biases = [np.array(p, dtype=np.float64) for p in params[1::2]]
        self.apply_masks()

    def apply_masks(self) -> None:
        if self.masks is not None:
            for w, mk in zip(self.weights, self.masks):
                w[~mk] = 0.0

    def copy(self) -> "MlpModel":
        return MlpModel(list(self.layer_dims), [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases],
                        None if self.masks is None else [mk.copy() for mk in self.masks],
                        self.leaky_slope, self.dropout_p, self.mode, self.seed, list(self.lineage))

    def eval(self) -> "MlpModel":
        self.mode = "eval"
        return self

    def train(self) -> "MlpModel":
        self.mode = "train"
        return self


def model_dims(cfg: NetworkConfig, hidden=(512, 512, 512, 512)) -> list:
    d_in = 2 * cfg.n_t * (cfg.M * cfg.K + cfg.M)
    return [d_in, *hidden, 2 * cfg.n_t * cfg.K]


def init_model(cfg: NetworkConfig, hidden=(512, 512, 512, 512), seed: int = 0,
               dropout_p: float = 0.15, leaky_slope: float = nx.LEAKY_SLOPE) -> MlpModel:
    """Kaiming-uniform weights (fan-in), zero biases."""
    dims = model_dims(cfg, hidden)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / d_in)
        weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return MlpModel(dims, weights, biases, None, leaky_slope, dropout_p, "train", seed, [seed])


@dataclass
class ForwardRecord:
    tape: nx.Tape
    Wr: nx.Var          # (B, n_t, K)
    Wi: nx.Var
    W: np.ndarray       # (B, n_t, K) complex, after normalization
    pre_norm: np.ndarray  # (B, 2*n_t*K) raw output layer


def forward(model: MlpModel, H_m, G_m, m: int, cfg: NetworkConfig,
            rng: Optional[np.random.Generator] = None, tape: Optional[nx.Tape] = None,
            per_cell: bool = False) -> ForwardRecord:
    """Run BS ``m``'s network on a batch of local channels.

    ``H_m`` is (B, n_t, M*K) and ``G_m`` (B, n_t, M).  With ``per_cell`` only
    the serving cell's columns are kept; the rest of the input is zero.
    The parameters become the first leaves of ``tape`` in ``model.params()`` order.
    """
    H_m = np.asarray(H_m)
    G_m = np.asarray(G_m)
    if H_m.ndim == 2:
        H_m, G_m = H_m[None], G_m[None]
    if H_m.shape[1:] != (cfg.n_t, cfg.M * cfg.K) or G_m.shape[1:] != (cfg.n_t, cfg.M):
        raise ValueError(f"channel dims {H_m.shape[1:]}, {G_m.shape[1:]} do not match config")
    Hs, Gs = serving_first(H_m, G_m, m, cfg.M, cfg.K)
    if per_cell:
        Hs = Hs.copy()
        Gs = Gs.copy()
        Hs[..., cfg.K:] = 0.0
        Gs[..., 1:] = 0.0
    x = features(encode_input(canonical_phase(Hs), canonical_phase(Gs)), cfg)
    if x.shape[1] != model.layer_dims[0]:
        raise ValueError(f"input width {x.shape[1]} != model input {model.layer_dims[0]}")

    tape = tape or nx.Tape()
    leaves = [tape.leaf(p) for p in model.params()]
    h = tape.const(x)
    n_layers = len(model.weights)
    train = model.mode == "train" and model.dropout_p > 0
    if train and rng is None:
        raise ValueError("train-mode forward with dropout needs an rng")
    for i in range(n_layers):
        h = nx.matmul(h, leaves[2 * i]) + leaves[2 * i + 1]
        if i < n_layers - 1:
            h = nx.leaky_relu(h, model.leaky_slope)
            if train:
                keep = rng.random(h.shape) >= model.dropout_p
                h = h * (keep / (1.0 - model.dropout_p))
    out = h
    sq = np.sum(out.value ** 2, axis=1)
    if np.any(sq == 0.0):
        raise DegenerateOutput("degenerate output: all-zero beamformer before normalization")
    scale = nx.sqrt(nx.reciprocal(nx.sum(out * out, axis=1)) * cfg.p_t)
    outn = out * nx.reshape(scale, (-1, 1))
    o = nx.reshape(outn, (-1, cfg.n_t, cfg.K, 2))
    Wr = o[:, :, :, 0]
    Wi = o[:, :, :, 1]
    return ForwardRecord(tape, Wr, Wi, Wr.value + 1j * Wi.value, out.value.copy())


def features(x: np.ndarray, cfg: NetworkConfig) -> np.ndarray:
    """Compress the dynamic range of an encoded input, column by column.

    A channel column of norm ``r`` keeps its direction and gets norm
    ``log1p(r / n_t**0.5)``; zero columns stay zero.
    """
    lead = x.shape[:-1]
    nh = cfg.M * cfg.K
    # blocks are [Re H | Im H | Re G | Im G], each a run of n_t-long columns
    flat = x.reshape(lead + (-1, cfg.n_t))
    re = np.concatenate([flat[..., :nh, :], flat[..., 2 * nh:2 * nh + cfg.M, :]], axis=-2)
    im = np.concatenate([flat[..., nh:2 * nh, :], flat[..., 2 * nh + cfg.M:, :]], axis=-2)
    r = np.sqrt(np.sum(re ** 2 + im ** 2, axis=-1, keepdims=True))
    safe = np.where(r > 0, r, 1.0)
    g = np.where(r > 0, np.log1p(r / np.sqrt(cfg.n_t)) / safe, 0.0)
    re, im = re * g, im * g
    out = np.concatenate([re[..., :nh, :], im[..., :nh, :], re[..., nh:, :], im[..., nh:, :]], axis=-2)
    return out.reshape(lead + (-1,))


def predict(model: MlpModel, H_m, G_m, m: int, cfg: NetworkConfig, batch: int = 1024,
            per_cell: bool = False) -> np.ndarray:
    """Eval-mode beamformers for every sample, (S, n_t, K) complex."""
    mode = model.mode
    model.mode = "eval"
    try:
        outs = [forward(model, H_m[i:i + batch], G_m[i:i + batch], m, cfg, per_cell=per_cell).W
                for i in range(0, len(H_m), batch)]
    finally:
        model.mode = mode
    return np.concatenate(outs, axis=0)


# ---------------------------------------------------------------------------
# pruning and size
# ---------------------------------------------------------------------------

def prune(model: MlpModel, factor: float) -> MlpModel:
    """Global unstructured magnitude pruning of all weight matrices (biases exempt).

    The ``round(factor * n)`` smallest-magnitude weights (ties broken by position)
    are masked; earlier masks are kept.  Returns a new model.
    """
    if not 0.0 <= factor <= 1.0:
        raise ValueError("pruning factor must lie in [0, 1]")
    out = model.copy()
    if factor == 0.0:
        return out
    flat = np.concatenate([np.abs(w).ravel() for w in out.weights])
    n_prune = int(round(factor * flat.size))
    order = np.argsort(flat, kind="stable")
    keep = np.ones(flat.size, dtype=bool)
    keep[order[:n_prune]] = False
    masks, start = [], 0
    for w in out.weights:
        mk = keep[start:start + w.size].reshape(w.shape)
        start += w.size
        masks.append(mk)
    if out.masks is not None:
        masks = [a & b for a, b in zip(masks, out.masks)]
    out.masks = masks
    out.apply_masks()
    return out


def parameter_count(model: MlpModel) -> int:
    n_w = sum(int(w.size if model.masks is None else mk.sum())
              for w, mk in zip(model.weights, model.masks or model.weights))
    return n_w + sum(b.size for b in model.biases)


def parameter_bits(model: MlpModel) -> int:
    return 64 * parameter_count(model)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_model(model: MlpModel, path) -> None:
    """magic(8) | version(u8) | header_len(u32 LE) | JSON header |
    weights then biases per layer as LE float64 | packed masks (if any)."""
    header = {
        "layer_dims": list(map(int, model.layer_dims)),
        "leaky_slope": model.leaky_slope,
        "dropout_p": model.dropout_p,
        "has_masks": model.masks is not None,
        "seed": int(model.seed),
        "lineage": list(model.lineage),
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<BI", CKPT_VERSION, len(hb)))
        f.write(hb)
        for p in model.params():
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
        if model.masks is not None:
            for mk in model.masks:
                f.write(np.packbits(mk.ravel(), bitorder="little").tobytes())


def load_model(path) -> MlpModel:
    with open(path, "rb") as f:
        if f.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        version, n = struct.unpack("<BI", f.read(5))
        if version != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        h = json.loads(f.read(n))
        dims = h["layer_dims"]
        params = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            for shape in ((d_in, d_out), (d_out,)):
                nbytes = 8 * int(np.prod(shape))
                raw = f.read(nbytes)
                if len(raw) != nbytes:
                    raise ValueError("checkpoint truncated")
                params.append(np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64))
        masks = None
        if h["has_masks"]:
            masks = []
            for d_in, d_out in zip(dims[:-1], dims[1:]):
                nb = (d_in * d_out + 7) // 8
                bits = np.unpackbits(np.frombuffer(f.read(nb), dtype=np.uint8), bitorder="little")
                masks.append(bits[:d_in * d_out].astype(bool).reshape(d_in, d_out))
        if f.read(1):
            raise ValueError("trailing bytes in checkpoint")
    return MlpModel(dims, params[0::2], params[1::2], masks, h["leaky_slope"], h["dropout_p"],
                    "eval", h["seed"], h["lineage"])
