import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedisac import beamnet, federate, metrics
from fedisac import numerics as nx
from fedisac.channel import NetworkConfig, generate_dataset
from conftest import rand_c

TOY = (12, 12)


def toy_train(**kw):
    base = dict(hidden=TOY, dropout_p=0.0, batch=8, epochs=1, rounds=2, local_steps=2, lr=1e-2)
    base.update(kw)
    return federate.TrainConfig(**base)


def test_message_roundtrips(rng):
    up = federate.VflUpload(2, 7, np.arange(4), rand_c(rng, 4, 6, 2), rand_c(rng, 4, 6, 6),
                            rand_c(rng, 4, 6, 3))
    back = federate.VflUpload.from_bytes(up.to_bytes())
    assert back.bs == 2 and back.round == 7
    for a, b in ((up.W, back.W), (up.H, back.H), (up.G, back.G), (up.sample_ids, back.sample_ids)):
        assert np.array_equal(a, b)
    assert up.payload_complex == 4 * 6 * (2 + 6 + 3)
    fb = federate.VflFeedback(1, 3, -2.5, rand_c(rng, 4, 6, 2))
    fb2 = federate.VflFeedback.from_bytes(fb.to_bytes())
    assert fb2.loss == -2.5 and np.array_equal(fb.grad, fb2.grad)
    with pytest.raises(ValueError):
        federate.VflFeedback.from_bytes(up.to_bytes())
    model = beamnet.prune(beamnet.init_model(NetworkConfig(), TOY, seed=1), 0.4)
    msg = federate.ModelMessage(0, 1, model.params(), model.masks)
    got = federate.ModelMessage.from_bytes(msg.to_bytes(), model.masks)
    assert all(np.array_equal(a, b) for a, b in zip(model.params(), got.params))
    assert msg.payload_bits() == beamnet.parameter_bits(model)


def test_vfl_split_matches_monolithic():
    cfg = NetworkConfig(M=2, K=1, n_t=3, sigma_c2=0.1, sigma_s2=0.1)
    ds = generate_dataset(cfg, 6, seed=4)
    for dropout in (0.0, 0.3):
        tr = toy_train(dropout_p=dropout)
        s = federate.new_vfl_session(cfg, tr, rho=0.4)
        idx = np.arange(6)
        seeds = [np.random.default_rng(10 + m) for m in range(2)]
        s.rngs = [np.random.default_rng(10 + m) for m in range(2)]
        ref, _ = federate.monolithic_vfl_grads(s.models, ds.H[idx], ds.G[idx], cfg, 0.4, seeds)
        recs, fbs = [], None
        for m, model in enumerate(s.models):
            rec = beamnet.forward(model, ds.H[idx, m], ds.G[idx, m], m, cfg, rng=s.rngs[m])
            recs.append(rec)
            s.server.receive(federate.VflUpload(m, 0, idx, rec.W, ds.H[idx, m], ds.G[idx, m]).to_bytes())
        fbs = [federate.VflFeedback.from_bytes(b) for b in s.server.aggregate()]
        for m in range(2):
            got = federate._surrogate_backward(recs[m], fbs[m].grad)
            for a, b in zip(got, ref[m]):
                assert np.max(np.abs(a - b)) <= 1e-10


def test_vfl_zero_lr_and_ledger():
    cfg = NetworkConfig()
    ds = generate_dataset(cfg, 16, seed=1)
    s = federate.new_vfl_session(cfg, toy_train(lr=0.0, weight_decay=0.0))
    before = [m.params() for m in s.models]
    T = 3
    for t in range(T):
        federate.vfl_round(s, ds, np.arange(8))
    for b, m in zip(before, s.models):
        assert all(np.array_equal(x, y) for x, y in zip(b, m.params()))
    assert s.ledger.rounds == T
    assert s.ledger.complex_up == 3 * T * 48
    assert s.ledger.complex_up == federate.overhead_table(3, 2, 6, T, 0)["vfl_train_complex"]
    assert s.ledger.complex_up_literal == 3 * T * 8 * 66


def test_vfl_misaligned_uploads(rng):
    cfg = NetworkConfig(M=2, K=1, n_t=3)
    server = federate.VflServer(cfg, 0.5)
    W, H, G = rand_c(rng, 2, 3, 1), rand_c(rng, 2, 3, 2), rand_c(rng, 2, 3, 2)
    server.receive(federate.VflUpload(0, 0, np.array([0, 1]), W, H, G).to_bytes())
    with pytest.raises(RuntimeError):
        server.receive(federate.VflUpload(0, 0, np.array([0, 1]), W, H, G).to_bytes())
    server.receive(federate.VflUpload(1, 0, np.array([0, 2]), W, H, G).to_bytes())
    with pytest.raises(ValueError, match="misaligned"):
        server.aggregate()


def test_vfl_dims_mismatch():
    s = federate.new_vfl_session(NetworkConfig(), toy_train())
    with pytest.raises(ValueError):
        federate.vfl_round(s, generate_dataset(NetworkConfig(n_t=4), 4, seed=0), np.arange(4))


def test_vfl_single_cell_is_centralized():
    cfg = NetworkConfig(M=1, sigma_c2=0.1, sigma_s2=0.1)
    ds = generate_dataset(cfg, 16, seed=2)
    tr = toy_train()
    s = federate.new_vfl_session(cfg, tr, rho=0.7)
    ref = s.models[0].copy()
    opt = tr.optimizer_state()
    for t in range(3):
        idx = np.arange(8) + 4 * t
        federate.vfl_round(s, ds, idx)
        rec = beamnet.forward(ref, ds.H[idx, 0], ds.G[idx, 0], 0, cfg)
        loss = metrics.vfl_global_loss(ds.H[idx], ds.G[idx], [rec.Wr], [rec.Wi], cfg, 0.7)
        federate.apply_update(ref, opt, nx.backward(rec.tape, loss))
    for a, b in zip(ref.params(), s.models[0].params()):
        assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_fedavg_examples():
    cfg = NetworkConfig()
    a = beamnet.init_model(cfg, TOY, seed=1)
    same = federate.fedavg([a.copy() for _ in range(3)])
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.params(), same.params()))
    neg = a.copy()
    neg.set_params([-p for p in a.params()])
    assert all(not p.any() for p in federate.fedavg([a, neg]).params())
    reps = [beamnet.init_model(cfg, TOY, seed=s) for s in (2, 3, 4)]
    for i in range(len(a.params())):
        reps[0].biases[i // 2] += 0.1 * (i + 1) if i % 2 else 0
    avg = federate.fedavg(reps)
    for i, p in enumerate(avg.params()):
        oracle = np.mean(np.stack([r.params()[i] for r in reps]), axis=0)
        assert np.array_equal(p, oracle)
    again = federate.fedavg([avg.copy() for _ in range(3)])
    assert all(np.array_equal(x, y) for x, y in zip(avg.params(), again.params()))


def test_fedavg_masks_and_mismatch():
    cfg = NetworkConfig()
    a = beamnet.prune(beamnet.init_model(cfg, TOY, seed=1), 0.5)
    b = beamnet.prune(beamnet.init_model(cfg, TOY, seed=2), 0.5)
    avg = federate.fedavg([a, b])
    for ma, mb, mo in zip(a.masks, b.masks, avg.masks):
        assert np.array_equal(mo, ma | mb)
    with pytest.raises(ValueError, match="architecture"):
        federate.fedavg([a, beamnet.init_model(cfg, (8,), seed=0)])
    with pytest.raises(ValueError):
        federate.fedavg([])


def test_hfl_local_epoch_single_step_oracle():
    cfg = NetworkConfig(sigma_c2=0.1, sigma_s2=0.1)
    ds = generate_dataset(cfg, 1, seed=5)
    model = beamnet.init_model(cfg, TOY, seed=3, dropout_p=0.0)
    ref = model.copy()
    local = federate.LocalData(*ds.local(1), owner=1)
    opt = nx.OptimizerState(kind="sgd", lr=0.05)
    federate.hfl_local_epoch(model, opt, local, 1, cfg, 0.5, 0.2, 0.3, steps=1, batch=4,
                             rng=np.random.default_rng(0))
    rec = beamnet.forward(ref, ds.H[:, 1], ds.G[:, 1], 1, cfg)
    loss = metrics.hfl_local_loss(ds.H[:, 1], ds.G[:, 1], rec.Wr, rec.Wi, 1, cfg, 0.5, 0.2, 0.3)
    g = nx.backward(rec.tape, loss)
    for p, q, gg in zip(model.params(), ref.params(), g):
        assert np.array_equal(p, q - 0.05 * gg)
    # zero steps leaves the replica untouched
    before = model.copy()
    federate.hfl_local_epoch(model, opt, local, 1, cfg, 0.5, 0.2, 0.3, steps=0, batch=4,
                             rng=np.random.default_rng(0))
    assert all(np.array_equal(x, y) for x, y in zip(before.params(), model.params()))


def test_local_loss_decreases_on_fixed_batch():
    cfg = NetworkConfig().with_snr(20)
    ds = generate_dataset(cfg, 16, seed=6)
    H_m, G_m = ds.local(0)
    drops = 0
    for trial in range(5):
        model = beamnet.init_model(cfg, TOY, seed=trial, dropout_p=0.0)
        opt = nx.OptimizerState(kind="sgd", lr=1e-3)
        a, b = cfg.leakage_weights()
        first = metrics.hfl_loss_value(H_m, G_m, beamnet.predict(model, H_m, G_m, 0, cfg), 0, cfg, 0.5, a, b)
        for _ in range(10):
            federate.local_loss_step(model, opt, H_m, G_m, 0, cfg, 0.5, a, b, None)
        last = metrics.hfl_loss_value(H_m, G_m, beamnet.predict(model, H_m, G_m, 0, cfg), 0, cfg, 0.5, a, b)
        drops += last < first
    assert drops >= 4


def test_hfl_round_ledger_locality_and_e0():
    cfg = NetworkConfig()
    ds = generate_dataset(cfg, 24, seed=3)
    audit = []
    tr = toy_train(rounds=3)
    s = federate.train_hfl(ds, tr, rho=0.5, audit=audit)
    B = beamnet.parameter_bits(s.global_model)
    assert s.ledger.bits_up + s.ledger.bits_down == 2 * cfg.M * B * 3
    assert federate.overhead_table(cfg.M, cfg.K, cfg.n_t, 3, B)["hfl_train_bits"] == 2 * cfg.M * B * 3
    assert audit and all(reader == owner for reader, owner in audit)
    assert {owner for _, owner in audit} == {0, 1, 2}

    s0 = federate.new_hfl_session(cfg, toy_train(local_steps=0))
    before = s0.global_model.copy()
    locals_ = [federate.LocalData(*ds.local(m), owner=m) for m in range(cfg.M)]
    federate.hfl_round(s0, locals_)
    assert all(np.array_equal(x, y) for x, y in zip(before.params(), s0.global_model.params()))


def test_hfl_single_cell_is_local_training():
    cfg = NetworkConfig(M=1)
    ds = generate_dataset(cfg, 16, seed=8)
    tr = toy_train(rounds=3, anneal_frac=0.0)
    s = federate.train_hfl(ds, tr, rho=0.5)
    ref = federate.new_hfl_session(cfg, tr, rho=0.5)
    model, opt, rng = ref.global_model.copy(), ref.opts[0], ref.rngs[0]
    local = federate.LocalData(*ds.local(0), owner=0)
    for _ in range(3):
        federate.hfl_local_epoch(model, opt, local, 0, cfg, 0.5, ref.alpha, ref.beta, 2, 8, rng)
    assert all(np.array_equal(x, y) for x, y in zip(model.params(), s.global_model.params()))


def test_leakage_ramp():
    assert federate.leakage_ramp(0.0, 0.1) == 0.0
    assert federate.leakage_ramp(0.05, 0.1) == pytest.approx(0.5)
    assert federate.leakage_ramp(0.5, 0.1) == 1.0
    assert federate.leakage_ramp(0.0, 0.0) == 1.0


def test_complexity_examples():
    cfg = NetworkConfig()
    fwd = federate.estimate_complexity(cfg, phase="forward")
    assert 2 * 4 * 512 ** 2 == 2097152
    assert fwd == 2 * (6 + 3 + 2) * 6 * 512 + 2097152 + 5 * 512 + 4 * 2 * 6
    assert federate.estimate_complexity(cfg, phase="training") == 3 * fwd
    big = federate.estimate_complexity(cfg, hidden=(1024,) * 4)
    assert big == 2 * 11 * 6 * 1024 + 4 * 2097152 + 5 * 1024 + 48
    one = NetworkConfig(M=1, K=1)
    assert federate.estimate_complexity(one, phase="forward") == 3 * 6 * 512 * 2 + 2097152 + 5 * 512 + 2 * 6
    assert federate.estimate_complexity(cfg, phase="wmmse", wmmse_iters=10) == 8 * 10 * (4 * 36 + 2 * 216)
    with pytest.raises(ValueError):
        federate.estimate_complexity(cfg, phase="bogus")


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(1, 64), st.integers(1, 10 ** 5),
       st.integers(1, 10 ** 8))
def test_overhead_table_formulas(M, K, n_t, T, B):
    tab = federate.overhead_table(M, K, n_t, T, B)
    assert tab["vfl_train_complex"] == M * tab["vfl_per_bs_iteration_complex"] * T
    assert tab["hfl_train_bits"] == 2 * M * B * T
    assert tab["wmmse_deploy_complex"] == M * M * K * n_t


def test_train_log(tmp_path):
    cfg = NetworkConfig()
    ds = generate_dataset(cfg, 16, seed=1)
    log = federate.TrainLog(tmp_path / "log.csv")
    federate.train_vfl(ds, toy_train(epochs=2), log=log)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0].split(",") == federate.TrainLog.COLUMNS
    assert len(lines) == 3
