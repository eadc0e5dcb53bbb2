import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from fedisac import channel as ch
from fedisac.channel import NetworkConfig


def test_steering_examples():
    assert np.array_equal(ch.steering_vector(0.7, 1), np.ones((1, 1)))
    assert np.allclose(ch.steering_vector(0.0, 4), np.ones((4, 1)))
    assert np.allclose(ch.steering_vector(np.pi / 2, 2)[:, 0], [1, -1], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(-np.pi, np.pi), st.integers(1, 32))
def test_steering_unit_modulus(theta, n):
    a = ch.steering_vector(theta, n)
    assert a.shape == (n, 1)
    assert np.allclose(np.abs(a), 1.0, atol=1e-14)
    assert abs(np.vdot(a, a).real - n) < 1e-12


def test_steering_rejects_empty():
    with pytest.raises(ValueError):
        ch.steering_vector(0.0, 0)


def test_positions_statistics():
    cfg = NetworkConfig()
    rng = np.random.Generator(np.random.Philox(5))
    n = 20000
    thetas, dists, phis = [], [], []
    bs, _ = ch.bs_layout(cfg)
    for _ in range(n):
        users, _, th = ch.draw_positions(cfg, rng)
        thetas.append(th)
        d = users - bs[:, None, :]
        dists.append(np.hypot(d[..., 0], d[..., 1]))
        phis.append(np.arctan2(d[..., 1], d[..., 0]))
    th = np.concatenate(thetas)
    # mean of U[-pi/2, pi/2] is 0 with std pi/sqrt(12)
    se = (np.pi / np.sqrt(12)) / np.sqrt(th.size)
    assert abs(th.mean()) < 3 * se
    assert th.min() >= -np.pi / 2 and th.max() <= np.pi / 2
    d = np.concatenate(dists).ravel()
    assert d.min() >= cfg.guard_radius and d.max() <= cfg.cell_radius
    counts, _ = np.histogram(np.concatenate(phis).ravel(), bins=24, range=(-np.pi, np.pi))
    assert stats.chisquare(counts).pvalue > 0.01


def test_kappa_inf_is_deterministic_los():
    cfg = NetworkConfig(rician_factor=np.inf)
    h1 = ch.gen_comm_channel(cfg, 100.0, np.random.default_rng(0), angle=0.3)
    h2 = ch.gen_comm_channel(cfg, 100.0, np.random.default_rng(1), angle=0.3)
    assert np.allclose(h1, h2)
    a = ch.steering_vector(0.3, cfg.n_t)
    assert np.allclose(h1, np.sqrt(ch.comm_path_loss(cfg, 100.0)) * a)


def test_comm_channel_power_and_kfactor():
    cfg = NetworkConfig()
    rng = np.random.Generator(np.random.Philox(9))
    d = 200.0
    n = 100000
    h = ch.rician(cfg, ch.comm_path_loss(cfg, d), np.full(n, 0.4), rng)
    pl = ch.comm_path_loss(cfg, d)
    assert abs(np.mean(np.sum(np.abs(h) ** 2, axis=1)) / (cfg.n_t * pl) - 1) < 0.01
    # moment-method K-factor of entry 0
    p = np.abs(h[:, 0]) ** 2
    m2, m4 = p.mean(), (p ** 2).mean()
    r = np.sqrt(2 * m2 ** 2 - m4)
    k_hat = r / (m2 - r)
    assert abs(k_hat / cfg.rician_factor - 1) < 0.05


def test_comm_channel_bad_distance():
    with pytest.raises(ValueError):
        ch.gen_comm_channel(NetworkConfig(), 0.0, np.random.default_rng(0))


def test_sensing_channels():
    cfg = NetworkConfig()
    rng = np.random.Generator(np.random.Philox(3))
    users, targets, th = ch.draw_positions(cfg, rng)
    n = 20000
    bs, _ = ch.bs_layout(cfg)
    acc = np.zeros((cfg.M, cfg.M))
    for i in range(n):
        rngs = [np.random.Generator(np.random.Philox(np.random.SeedSequence(i, spawn_key=(m,))))
                for m in range(cfg.M)]
        G = ch.gen_sensing_channels(cfg, targets, th, rngs)
        acc += np.sum(np.abs(G) ** 2, axis=1)
    acc /= n
    for m in range(cfg.M):
        dt = np.hypot(*(targets[m] - bs[m]))
        alpha2 = cfg.rcs * ch.sense_path_loss(cfg, dt) ** 2
        assert acc[m, m] == pytest.approx(alpha2 * cfg.n_t, rel=1e-12)
        for k in range(cfg.M):
            if k != m:
                dmn = np.hypot(*(bs[m] - bs[k]))
                assert abs(acc[m, k] / (ch.sense_path_loss(cfg, dmn) * cfg.n_t) - 1) < 0.01


def test_dataset_dims_and_determinism():
    cfg = NetworkConfig(M=2, K=3, n_t=4)
    a = ch.generate_dataset(cfg, 5, seed=11)
    b = ch.generate_dataset(cfg, 5, seed=11)
    assert a.H.shape == (5, 2, 4, 6) and a.G.shape == (5, 2, 4, 2)
    assert a.H.tobytes() == b.H.tobytes() and a.G.tobytes() == b.G.tobytes()
    c = ch.generate_dataset(cfg, 5, seed=12)
    assert not np.array_equal(a.H, c.H)
    # sample i does not depend on how many samples are drawn
    assert np.array_equal(ch.generate_dataset(cfg, 2, seed=11).H, a.H[:2])


def test_dataset_roundtrip(tmp_path):
    cfg = NetworkConfig()
    ds = ch.generate_dataset(cfg, 7, seed=3)
    p = tmp_path / "d.bin"
    ch.save_dataset(ds, p)
    back = ch.load_dataset(p, expect=cfg)
    for x, y in ((ds.H, back.H), (ds.G, back.G), (ds.theta, back.theta)):
        assert x.tobytes() == y.tobytes()
    assert back.config == cfg and back.seed == 3
    hdr = ch.read_dataset_header(p)
    assert hdr["dims"] == {"M": 3, "K": 2, "n_t": 6, "n_r": 6}


def test_dataset_load_errors(tmp_path):
    ds = ch.generate_dataset(NetworkConfig(), 3, seed=3)
    p = tmp_path / "d.bin"
    ch.save_dataset(ds, p)
    with pytest.raises(ValueError, match="n_t"):
        ch.load_dataset(p, expect=NetworkConfig(n_t=8))
    raw = p.read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-5])
    with pytest.raises(ValueError, match="truncated"):
        ch.load_dataset(tmp_path / "t.bin")
    (tmp_path / "x.bin").write_bytes(raw + b"\0")
    with pytest.raises(ValueError, match="trailing"):
        ch.load_dataset(tmp_path / "x.bin")
    (tmp_path / "m.bin").write_bytes(b"NOTADATA" + raw[8:])
    with pytest.raises(ValueError, match="magic"):
        ch.load_dataset(tmp_path / "m.bin")


def test_pinned_theta():
    cfg = NetworkConfig()
    th = np.deg2rad([15.0, -20.0, 40.0])
    ds = ch.generate_dataset(cfg, 3, seed=1, theta=th)
    assert np.allclose(ds.theta, th)
    for s in range(3):
        for m in range(3):
            g = ds.G[s, m, :, m]
            a = ch.steering_vector(th[m], cfg.n_t)[:, 0]
            assert abs(abs(np.vdot(a, g)) - np.linalg.norm(a) * np.linalg.norm(g)) < 1e-12


def test_snr_normalization():
    cfg = NetworkConfig().with_snr(25.0)
    assert cfg.snr_db == pytest.approx(25.0)
    assert cfg.sigma_c2 == cfg.sigma_s2
    assert ch.comm_path_loss(cfg, cfg.d_ref) == pytest.approx(1.0)


def test_config_validation_and_dict():
    with pytest.raises(ValueError):
        NetworkConfig(M=0)
    with pytest.raises(ValueError):
        NetworkConfig(rho=1.5)
    with pytest.raises(ValueError):
        NetworkConfig.from_dict({"bogus": 1})
    c = NetworkConfig(n_t=8)
    assert NetworkConfig.from_dict(c.to_dict()) == c


def test_generation_speed():
    import time
    t = time.perf_counter()
    ch.generate_dataset(NetworkConfig(), 2000, seed=0)
    # 20,000 samples must fit in 60 s; a tenth of them in a tenth of the time
    assert time.perf_counter() - t < 6.0
