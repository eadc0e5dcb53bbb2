"""Scenario geometry, Rician channel draws and per-BS channel datasets.

Storage conventions (all complex128):

* ``H[m]`` is ``n_t x (M*K)``; column ``n*K + k`` is ``h_{m,n,k}``, the channel
  from BS ``m`` to user ``k`` of cell ``n``.  Received amplitude is ``h^H w``.
* ``G[m]`` is ``n_t x M``; column ``n != m`` is the equivalent interference
  channel ``g_{m,n}`` from BS ``m`` into BS ``n``'s sensing receiver; column
  ``m`` is ``alpha_m * a(theta_m)`` with ``alpha_m`` real and positive.

Path loss is referenced to the median user distance ``d_med`` of the user
annulus, so the mean intended-link gain of a median user is one and
``SNR = p_t / sigma^2``.
"""
from __future__ import annotations

import dataclasses
import io
import json
import struct
from dataclasses import dataclass

import numpy as np

DATASET_MAGIC = b"FISACDS\x00"
DATASET_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    M: int = 3                  # cells / BSs
    K: int = 2                  # users per cell
    n_t: int = 6                # transmit antennas
    n_r: int = 6                # receive antennas
    p_t: float = 1.0            # per-BS power budget
    sigma_c2: float = 1e-2      # user noise variance
    sigma_s2: float = 1e-2      # sensing receiver noise variance
    cell_radius: float = 500.0  # m
    guard_radius: float = 10.0  # m, users and targets keep this far from their BS
    pl_comm_exp: float = 3.6
    pl_sense_exp: float = 2.0
    rician_factor: float = 3.0  # linear LoS/NLoS power ratio
    rcs: float = 1.0
    rho: float = 0.5
    alpha: float = 0.1          # CIL weight, in units of 1/sigma_c2
    beta: float = 0.1           # SIL weight, in units of 1/sigma_s2
    boresight_offset: float = 0.0  # rad, array rotation added to every BS

    def __post_init__(self):
        for name in ("M", "K", "n_t", "n_r"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.p_t <= 0:
            raise ValueError("p_t must be positive")
        if self.sigma_c2 <= 0 or self.sigma_s2 <= 0:
            raise ValueError("noise variances must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("leakage weights must be non-negative")
        if not 0 < self.guard_radius < self.cell_radius:
            raise ValueError("need 0 < guard_radius < cell_radius")

    @property
    def snr_db(self) -> float:
        return 10.0 * np.log10(self.p_t / self.sigma_c2)

    def with_snr(self, snr_db: float) -> "NetworkConfig":
        s2 = self.p_t / 10.0 ** (snr_db / 10.0)
        return dataclasses.replace(self, sigma_c2=s2, sigma_s2=s2)

    def replace(self, **kw) -> "NetworkConfig":
        return dataclasses.replace(self, **kw)

    def leakage_weights(self) -> tuple[float, float]:
        """Absolute (alpha, beta) used by the local leakage losses."""
        return self.alpha / self.sigma_c2, self.beta / self.sigma_s2

    @property
    def d_ref(self) -> float:
        """Median distance of a point uniform on the user annulus."""
        return float(np.sqrt(0.5 * (self.cell_radius ** 2 + self.guard_radius ** 2)))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown NetworkConfig fields: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def steering_vector(theta, n: int) -> np.ndarray:
    """Half-wavelength ULA response, entry i = exp(j*pi*i*sin(theta)).

    Scalar ``theta`` gives an ``n x 1`` matrix; an array of angles gives shape
    ``theta.shape + (n,)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    th = np.asarray(theta, dtype=np.float64)
    a = np.exp(1j * np.pi * np.sin(th)[..., None] * np.arange(n))
    return a[:, None] if th.ndim == 0 else a


def bs_layout(cfg: NetworkConfig) -> tuple[np.ndarray, np.ndarray]:
    """BS positions (M, 2) on a regular polygon with inter-site distance
    2*cell_radius, and each array's boresight angle (facing the centroid)."""
    if cfg.M == 1:
        return np.zeros((1, 2)), np.array([cfg.boresight_offset])
    side = 2.0 * cfg.cell_radius
    r = side / (2.0 * np.sin(np.pi / cfg.M))
    ang = 2.0 * np.pi * np.arange(cfg.M) / cfg.M
    pos = r * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    boresight = np.angle(-pos[:, 0] - 1j * pos[:, 1]) + cfg.boresight_offset
    return pos, boresight


def _wrap(x):
    return np.angle(np.exp(1j * x))


def relative_geometry(bs_pos, boresight, pts):
    """Distance and boresight-relative angle from every BS to every point.

    ``pts`` has shape (..., 2); returns arrays of shape (M,) + pts.shape[:-1].
    """
    d = pts[None, ...] - bs_pos.reshape((-1,) + (1,) * (pts.ndim - 1) + (2,))
    dist = np.hypot(d[..., 0], d[..., 1])
    ang = np.arctan2(d[..., 1], d[..., 0])
    return dist, _wrap(ang - boresight.reshape((-1,) + (1,) * (pts.ndim - 1)))


def _annulus_radius(rng, cfg, size):
    u = rng.uniform(cfg.guard_radius ** 2, cfg.cell_radius ** 2, size=size)
    return np.sqrt(u)


def draw_positions(cfg: NetworkConfig, rng: np.random.Generator):
    """Users uniform over each cell's annulus, one target per cell.

    Returns ``(users, targets, theta)``: user positions (M, K, 2) in the plane,
    target positions (M, 2), and target angles (M,) relative to the serving
    array boresight, uniform on [-pi/2, pi/2].
    """
    bs_pos, boresight = bs_layout(cfg)
    r = _annulus_radius(rng, cfg, (cfg.M, cfg.K))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=(cfg.M, cfg.K))
    users = bs_pos[:, None, :] + r[..., None] * np.stack([np.cos(phi), np.sin(phi)], -1)
    theta = rng.uniform(-np.pi / 2, np.pi / 2, size=cfg.M)
    rt = _annulus_radius(rng, cfg, cfg.M)
    ta = theta + boresight
    targets = bs_pos + rt[:, None] * np.stack([np.cos(ta), np.sin(ta)], -1)
    return users, targets, theta


def comm_path_loss(cfg: NetworkConfig, d):
    return (np.asarray(d) / cfg.d_ref) ** (-cfg.pl_comm_exp)


def sense_path_loss(cfg: NetworkConfig, d):
    """One-way sensing path loss; the target echo uses its square."""
    return (np.asarray(d) / cfg.d_ref) ** (-cfg.pl_sense_exp)


def rician(cfg: NetworkConfig, gain, angle, rng: np.random.Generator) -> np.ndarray:
    """Rician vectors with LoS along ``angle``; shape ``angle.shape + (n_t,)``."""
    angle = np.asarray(angle, dtype=np.float64)
    kappa = cfg.rician_factor
    shape = angle.shape + (cfg.n_t,)
    nlos = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    if np.isinf(kappa):
        mix = steering_vector(angle, cfg.n_t)
    else:
        mix = (np.sqrt(kappa / (1 + kappa)) * steering_vector(angle, cfg.n_t)
               + np.sqrt(1 / (1 + kappa)) * nlos)
    return np.sqrt(np.asarray(gain))[..., None] * mix


def gen_comm_channel(cfg: NetworkConfig, distance: float, rng: np.random.Generator,
                     angle: float = 0.0) -> np.ndarray:
    """A single ``n_t x 1`` user channel at ``distance`` metres."""
    if distance <= 0:
        raise ValueError("distance must be positive")
    return rician(cfg, comm_path_loss(cfg, distance), angle, rng).reshape(-1, 1)


def gen_sensing_channels(cfg: NetworkConfig, targets, theta, rngs) -> np.ndarray:
    """Sensing channel matrices of every BS, shape (M, n_t, M).

    ``rngs`` is one generator per BS (the cross-BS fading of ``G[m]`` is drawn
    from ``rngs[m]``).
    """
    bs_pos, boresight = bs_layout(cfg)
    G = np.empty((cfg.M, cfg.n_t, cfg.M), dtype=np.complex128)
    for m in range(cfg.M):
        d_t = np.hypot(*(targets[m] - bs_pos[m]))
        G[m, :, m] = (np.sqrt(cfg.rcs) * sense_path_loss(cfg, d_t)
                      * steering_vector(theta[m], cfg.n_t)[:, 0])
        others = [n for n in range(cfg.M) if n != m]
        if others:
            d_bs, ang_bs = relative_geometry(bs_pos[m:m + 1], boresight[m:m + 1], bs_pos[others])
            G[m][:, others] = rician(cfg, sense_path_loss(cfg, d_bs[0]), ang_bs[0], rngs[m]).T
    return G


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

@dataclass
class ChannelSample:
    H: np.ndarray      # (M, n_t, M*K)
    G: np.ndarray      # (M, n_t, M)
    theta: np.ndarray  # (M,)


@dataclass
class Dataset:
    H: np.ndarray      # (S, M, n_t, M*K)
    G: np.ndarray      # (S, M, n_t, M)
    theta: np.ndarray  # (S, M)
    config: NetworkConfig
    seed: int

    def __post_init__(self):
        c = self.config
        S = self.H.shape[0]
        if self.H.shape != (S, c.M, c.n_t, c.M * c.K):
            raise ValueError(f"H shape {self.H.shape} inconsistent with config")
        if self.G.shape != (S, c.M, c.n_t, c.M) or self.theta.shape != (S, c.M):
            raise ValueError("G/theta shape inconsistent with config")

    def __len__(self):
        return self.H.shape[0]

    def sample(self, i: int) -> ChannelSample:
        return ChannelSample(self.H[i], self.G[i], self.theta[i])

    def subset(self, idx) -> "Dataset":
        return Dataset(self.H[idx], self.G[idx], self.theta[idx], self.config, self.seed)

    def local(self, m: int):
        """BS ``m``'s own view: (H_m, G_m) arrays over all samples."""
        return self.H[:, m], self.G[:, m]


def sample_streams(seed: int, i: int, M: int):
    """Independent Philox streams for sample ``i``: one for geometry and one per BS."""
    geo = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(i, M))))
    per_bs = [np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(i, m))))
              for m in range(M)]
    return geo, per_bs


def draw_sample(cfg: NetworkConfig, seed: int, i: int, theta=None) -> ChannelSample:
    """Sample ``i`` of the dataset identified by ``(cfg, seed)``.

    ``theta`` optionally pins the target angles (used for beampattern scenes).
    """
    geo, per_bs = sample_streams(seed, i, cfg.M)
    bs_pos, boresight = bs_layout(cfg)
    users, targets, th = draw_positions(cfg, geo)
    if theta is not None:
        th = np.asarray(theta, dtype=np.float64).copy()
        dist_t = np.hypot(*(targets - bs_pos).T)
        ta = th + boresight
        targets = bs_pos + dist_t[:, None] * np.stack([np.cos(ta), np.sin(ta)], -1)
    dist, ang = relative_geometry(bs_pos, boresight, users.reshape(-1, 2))
    H = np.empty((cfg.M, cfg.n_t, cfg.M * cfg.K), dtype=np.complex128)
    for m in range(cfg.M):
        H[m] = rician(cfg, comm_path_loss(cfg, dist[m]), ang[m], per_bs[m]).T
    # the per-BS streams continue into the sensing draws
    G = gen_sensing_channels(cfg, targets, th, per_bs)
    return ChannelSample(H, G, th)


def generate_dataset(cfg: NetworkConfig, n_samples: int, seed: int, theta=None) -> Dataset:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    H = np.empty((n_samples, cfg.M, cfg.n_t, cfg.M * cfg.K), dtype=np.complex128)
    G = np.empty((n_samples, cfg.M, cfg.n_t, cfg.M), dtype=np.complex128)
    th = np.empty((n_samples, cfg.M))
    for i in range(n_samples):
        s = draw_sample(cfg, seed, i, theta)
        H[i], G[i], th[i] = s.H, s.G, s.theta
    return Dataset(H, G, th, cfg, seed)


def save_dataset(ds: Dataset, path) -> None:
    """Layout: magic(8) | version(u8) | header_len(u32 LE) | JSON header |
    H, G as little-endian interleaved (re, im) float64 | theta as LE float64."""
    c = ds.config
    header = {
        "config": c.to_dict(),
        "seed": int(ds.seed),
        "n_samples": len(ds),
        "dims": {"M": c.M, "K": c.K, "n_t": c.n_t, "n_r": c.n_r},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<BI", DATASET_VERSION, len(hb)))
        f.write(hb)
        for arr, dt in ((ds.H, "<c16"), (ds.G, "<c16"), (ds.theta, "<f8")):
            f.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def read_dataset_header(path) -> dict:
    with open(path, "rb") as f:
        return _read_header(f)


def _read_header(f) -> dict:
    magic = f.read(len(DATASET_MAGIC))
    if magic != DATASET_MAGIC:
        raise ValueError(f"not a dataset file (magic {magic!r})")
    version, n = struct.unpack("<BI", f.read(5))
    if version != DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    return json.loads(f.read(n))


def load_dataset(path, expect: NetworkConfig | None = None) -> Dataset:
    with open(path, "rb") as f:
        header = _read_header(f)
        payload = f.read()
    cfg = NetworkConfig.from_dict(header["config"])
    if expect is not None:
        for k in ("M", "K", "n_t", "n_r"):
            if getattr(expect, k) != getattr(cfg, k):
                raise ValueError(f"dataset {k}={getattr(cfg, k)} but expected {getattr(expect, k)}")
    S = header["n_samples"]
    shapes = [((S, cfg.M, cfg.n_t, cfg.M * cfg.K), "<c16"),
              ((S, cfg.M, cfg.n_t, cfg.M), "<c16"),
              ((S, cfg.M), "<f8")]
    buf = io.BytesIO(payload)
    arrays = []
    for shape, dt in shapes:
        nbytes = int(np.prod(shape)) * np.dtype(dt).itemsize
        raw = buf.read(nbytes)
        if len(raw) != nbytes:
            raise ValueError("dataset file truncated")
        arrays.append(np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt[1:]))
    if buf.read(1):
        raise ValueError("trailing bytes in dataset file")
    return Dataset(arrays[0], arrays[1], arrays[2], cfg, header["seed"])

