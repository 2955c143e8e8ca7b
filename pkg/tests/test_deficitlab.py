import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import binomtest

from critfusion import rsv
from critfusion.deficitlab import net as nn
from critfusion.deficitlab import sweeps
from critfusion.deficitlab.deficits import DeficitSchedule, apply_blur, apply_dissociation
from critfusion.deficitlab.task import TaskSpec, generate_task, read_dataset_csv, write_dataset_csv
from critfusion.deficitlab.train import LabConfig, OptimConfig, run, train, usable_information
from oracles import central_difference


def linear_probe_accuracy(x_train, y_train, x_test, y_test, epochs=300, lr=0.5):
    """Multinomial logistic regression fitted by full-batch gradient descent."""
    C = int(max(y_train.max(), y_test.max())) + 1
    mu, sd = x_train.mean(0), x_train.std(0) + 1e-12
    xt, xs = (x_train - mu) / sd, (x_test - mu) / sd
    W = np.zeros((xt.shape[1], C))
    b = np.zeros(C)
    onehot = np.eye(C)[y_train]
    for _ in range(epochs):
        logits = xt @ W + b
        p = np.exp(logits - logits.max(1, keepdims=True))
        p /= p.sum(1, keepdims=True)
        g = (p - onehot) / len(xt)
        W -= lr * xt.T @ g
        b -= lr * g.sum(0)
    return float(np.mean(np.argmax(xs @ W + b, 1) == y_test)), float(np.mean(np.argmax(xt @ W + b, 1) == y_train))


class TestTask:
    def test_class_count_must_match_bits(self):
        with pytest.raises(ValueError, match="not expressible"):
            TaskSpec(class_count=6)

    def test_view_dim_checked(self):
        with pytest.raises(ValueError, match="too small"):
            TaskSpec(view_dim=7)

    def test_shapes_and_labels(self):
        data = generate_task(TaskSpec(n_train=100, n_test=50))
        assert data.train.view_a.shape == (100, 24)
        assert data.test.labels.shape == (50,)
        assert data.train.labels.max() < 8
        assert np.array_equal(data.train.labels, data.train.bits @ (1 << np.arange(3)))

    def test_synergy_only_single_view_at_chance(self):
        spec = TaskSpec(class_count=2, unique_a_bits=0, unique_b_bits=0, synergy_bits=1,
                        noise_std=0.3, n_train=4000, n_test=4000, seed=3)
        d = generate_task(spec)
        for view in ("view_a", "view_b"):
            acc, _ = linear_probe_accuracy(getattr(d.train, view), d.train.labels, getattr(d.test, view), d.test.labels)
            assert abs(acc - 0.5) <= 0.03
        # marginal of each synergy channel is independent of the bit
        for view in (d.train.view_a, d.train.view_b):
            for bit in (0, 1):
                m = view[d.train.labels == bit][:, 0].mean()
                assert abs(m) < 0.05

    def test_common_only_single_view_suffices(self):
        spec = TaskSpec(class_count=4, common_bits=2, unique_a_bits=0, unique_b_bits=0, synergy_bits=0,
                        noise_std=0.5, n_train=3000, n_test=3000, seed=4)
        d = generate_task(spec)
        acc_a, _ = linear_probe_accuracy(d.train.view_a, d.train.labels, d.test.view_a, d.test.labels)
        acc_b, _ = linear_probe_accuracy(d.train.view_b, d.train.labels, d.test.view_b, d.test.labels)
        both = lambda s: np.concatenate([s.view_a, s.view_b], 1)
        acc_ab, _ = linear_probe_accuracy(both(d.train), d.train.labels, both(d.test), d.test.labels)
        assert abs(acc_a - acc_ab) <= 0.03
        assert abs(acc_b - acc_ab) <= 0.03

    def test_unique_only_noiseless_separable(self):
        spec = TaskSpec(class_count=4, synergy_bits=0, noise_std=0.0, n_train=500, n_test=100)
        d = generate_task(spec)
        both = lambda s: np.concatenate([s.view_a, s.view_b], 1)
        _, train_acc = linear_probe_accuracy(both(d.train), d.train.labels, both(d.test), d.test.labels)
        assert train_acc == 1.0

    def test_csv_roundtrip(self, tmp_path):
        spec = TaskSpec(n_train=20, n_test=10)
        d = generate_task(spec)
        write_dataset_csv(d.train, spec, tmp_path / "train.csv")
        back = read_dataset_csv(tmp_path / "train.csv", spec)
        assert np.array_equal(back.labels, d.train.labels)
        assert np.array_equal(back.bits, d.train.bits)
        np.testing.assert_allclose(back.view_a, d.train.view_a, rtol=1e-8)
        header = (tmp_path / "train.csv").read_text().splitlines()[0].split(",")
        assert header[:4] == ["label", "bit0_unique_a", "bit1_unique_b", "bit2_synergy"]


class TestBlur:
    def test_identity(self):
        v = np.random.default_rng(0).normal(size=(5, 4))
        assert np.array_equal(apply_blur(v, 1.0, 0.0), v)

    def test_zero_gain_is_pure_noise(self):
        v = np.ones((2000, 3)) * 5
        out = apply_blur(v, 0.0, 1.0, seed=1)
        assert abs(out.mean()) < 0.1
        out2 = apply_blur(-v, 0.0, 1.0, seed=1)
        assert np.array_equal(out, out2)

    def test_snr_reduction(self):
        signal = np.random.default_rng(2).choice([-1.0, 1.0], size=200_000)
        noise_std = 1.0
        clean = signal + noise_std * np.random.default_rng(3).standard_normal(signal.size)
        blurred = apply_blur(clean, 0.25, 0.0)
        snr = lambda x, s: np.var(np.polyfit(s, x, 1)[0] * s) / np.var(x - np.polyfit(s, x, 1)[0] * s)
        # attenuation plus noise matched to the original noise level
        out = apply_blur(signal, 0.25, 0.0) + noise_std * np.random.default_rng(4).standard_normal(signal.size)
        assert snr(clean, signal) / snr(out, signal) == pytest.approx(16.0, rel=0.05)
        assert np.allclose(blurred, 0.25 * clean)

    def test_bad_gain(self):
        with pytest.raises(ValueError):
            apply_blur(np.zeros(3), 1.5, 0.0)


class TestDissociation:
    def _batch(self, n=8):
        rng = np.random.default_rng(0)
        return nn.Batch(rng.normal(size=(n, 3)), rng.normal(size=(n, 3)), np.arange(n) % 4)

    def test_identity_permutation(self):
        b = self._batch()
        out = apply_dissociation(b, seed=0, perm=np.arange(8))
        assert np.array_equal(out.view_a, b.view_a) and np.array_equal(out.view_b, b.view_b)
        assert np.array_equal(out.labels, b.labels)
        assert set(out.label_side) <= {0, 1}

    def test_batch_of_one_rejected(self):
        with pytest.raises(ValueError):
            apply_dissociation(self._batch(1), seed=0)

    def test_labels_follow_side(self):
        b = self._batch(64)
        rng = np.random.default_rng(5)
        out = apply_dissociation(b, rng)
        for i in range(64):
            if out.label_side[i] == 0:
                assert out.labels[i] == b.labels[i]
            else:
                j = np.flatnonzero((b.view_b == out.view_b[i]).all(1))[0]
                assert out.labels[i] == b.labels[j]

    def test_breaks_synergy_pairing(self):
        spec = TaskSpec(n_train=10_000, n_test=10, noise_std=0.0)
        d = generate_task(spec)
        syn = spec.channel_dim  # first synergy coordinate, after the unique slot
        b = nn.Batch(d.train.view_a, d.train.view_b, d.train.labels)
        out = apply_dissociation(b, seed=1)
        r = np.corrcoef(out.view_a[:, syn], out.view_b[:, syn])[0, 1]
        assert abs(r) < 0.05
        sides = int(out.label_side.sum())
        assert binomtest(sides, out.label_side.size, 0.5).pvalue > 0.001
        assert np.array_equal(np.abs(out.view_a[:, syn]), np.abs(out.view_b[:, syn]))


def small_net(seed=0, n_blocks=2, **kw):
    spec = nn.NetSpec(encoder_width=6, trunk_width=5, n_blocks=n_blocks, **kw)
    return nn.PathwayNet.init(4, 3, spec, seed)


def small_batch(seed=0, n=7, sides=True):
    rng = np.random.default_rng(seed)
    return nn.Batch(rng.normal(size=(n, 4)), rng.normal(size=(n, 4)), rng.integers(0, 3, n),
                    rng.integers(0, 2, n) if sides else None)


class TestForward:
    def test_zero_weights(self):
        net = small_net()
        for v in net.params.values():
            v[:] = 0
        out = nn.forward(net, *small_batch()[:2] if False else (small_batch().view_a, small_batch().view_b))
        assert np.all(out["logits"] == 0)
        loss, _ = nn.cross_entropy(out["logits"], small_batch().labels)
        assert loss == pytest.approx(math.log(3), abs=1e-15)

    def test_zero_view_b_additive(self):
        net = small_net()
        net.params["enc_b.b"][:] = np.abs(net.params["enc_b.b"]) + 0.1
        b = small_batch()
        out = nn.forward(net, b.view_a, np.zeros_like(b.view_b))
        expect = out["h_a"] + np.maximum(net.params["enc_b.b"], 0)
        np.testing.assert_array_equal(out["xs"][0], expect)

    def test_duplicate_sample(self):
        net = small_net()
        b = small_batch()
        x = nn.forward(net, b.view_a[[0, 0]], b.view_b[[0, 0]])["logits"]
        assert np.array_equal(x[0], x[1])


MODES = [("normal", 0.0), ("dissociation", 0.0), ("normal", 0.7), ("dissociation", 0.3)]


@pytest.mark.parametrize("mode,lam", MODES)
@pytest.mark.parametrize("activation", ["relu", "linear"])
def test_gradients_match_finite_differences(mode, lam, activation):
    net = small_net(seed=1, n_blocks=2, trunk_activation=activation)
    batch = small_batch(seed=2)
    _, grads = nn.loss_and_gradients(net, batch, mode, lam)
    fun = lambda: nn.loss_and_gradients(net, batch, mode, lam)[0]
    rng = np.random.default_rng(3)
    keys = sorted(net.params)
    checked = 0
    while checked < 100:
        k = keys[rng.integers(len(keys))]
        idx = tuple(rng.integers(s) for s in net.params[k].shape)
        fd = central_difference(fun, net.params, k, idx)
        g = grads[k][idx]
        assert abs(fd - g) <= 1e-4 * max(abs(fd), abs(g)) + 1e-9, (k, idx, fd, g)
        checked += 1


def test_zero_lambda_equals_normal_loss():
    net, batch = small_net(), small_batch()
    for mode in ("normal", "dissociation"):
        a = nn.loss_and_gradients(net, batch, mode, 0.0)
        b = nn.loss_and_gradients(net, batch, mode)
        assert a[0] == b[0]
        assert all(np.array_equal(a[1][k], b[1][k]) for k in a[1])


def test_dissociation_needs_markers():
    with pytest.raises(ValueError, match="label-side"):
        nn.loss_and_gradients(small_net(), small_batch(sides=False), "dissociation")


def test_overfit_small_batch():
    net = nn.PathwayNet.init(4, 3, nn.NetSpec(encoder_width=32, trunk_width=32, n_blocks=2), 0)
    batch = small_batch(seed=5, n=16, sides=False)
    for _ in range(3000):
        loss, g = nn.loss_and_gradients(net, batch)
        for k in g:
            net.params[k] -= 0.1 * g[k]
    loss, g = nn.loss_and_gradients(net, batch)
    gnorm = math.sqrt(sum(float(np.sum(v * v)) for v in g.values()))
    assert loss < 1e-3 and gnorm < 1e-3


def test_fusion_symmetry():
    net = small_net(seed=4)
    batch = small_batch(seed=6)
    swapped = nn.Batch(batch.view_b, batch.view_a, batch.labels, 1 - batch.label_side)
    for mode, lam in MODES:
        a = nn.loss_and_gradients(net, batch, mode, lam)[0]
        b = nn.loss_and_gradients(net.swapped(), swapped, mode, lam)[0]
        assert abs(a - b) <= 1e-9


def quick_config(**kw):
    task = TaskSpec(n_train=512, n_test=320)
    base = LabConfig(task=task, optim=OptimConfig(lr=0.05, lr_decay=0.97), epochs=6,
                     rsv=rsv.RSVConfig(8, 64))
    return replace(base, **kw)


class TestTrain:
    def test_baseline_learns_default_task(self):
        cfg = LabConfig(optim=OptimConfig(lr=0.05, lr_decay=0.97))
        rec = run(cfg, DeficitSchedule(), seed=0)
        assert rec.final_test_acc > 0.95
        assert len(rec.test_acc) == cfg.epochs == len(rec.train_loss)

    def test_zero_length_window_is_control(self):
        cfg = quick_config()
        a = run(cfg, DeficitSchedule(), seed=3)
        for kind in ("blur", "dissociation"):
            b = run(cfg, DeficitSchedule.initial(kind, 0), seed=3)
            assert a.test_loss == b.test_loss and a.train_acc == b.train_acc
            assert np.array_equal(a.rsv_values, b.rsv_values)

    def test_seed_determinism(self):
        cfg = quick_config(mask_prob=0.1, recon_lambda=0.1)
        sched = DeficitSchedule.sliding("dissociation", 1, 2)
        a, b = run(cfg, sched, seed=7), run(cfg, sched, seed=7)
        assert a.test_loss == b.test_loss and a.rsv == b.rsv and a.usable_info == b.usable_info

    def test_window_exactness(self):
        cfg = quick_config()
        data = generate_task(cfg.task)
        logs = {}
        for name, sched in (("ctrl", DeficitSchedule()), ("def", DeficitSchedule.sliding("blur", 3, 2))):
            seen = []
            net = nn.PathwayNet.init(24, 8, cfg.net, 0)
            train(net, data, sched, cfg, seed=0,
                  grad_hook=lambda e, s, g: seen.append((e, {k: v.copy() for k, v in g.items()})))
            logs[name] = seen
        for (e1, g1), (e2, g2) in zip(logs["ctrl"], logs["def"]):
            assert e1 == e2
            if e1 < 3:
                assert all(np.array_equal(g1[k], g2[k]) for k in g1)
        diff_in_window = [e for (e, g1), (_, g2) in zip(logs["ctrl"], logs["def"])
                          if not np.array_equal(g1["enc_b.W"], g2["enc_b.W"])]
        assert min(diff_in_window) == 3

    def test_window_must_fit(self):
        with pytest.raises(ValueError, match="exceeds"):
            run(quick_config(), DeficitSchedule.initial("blur", 10), seed=0)

    def test_full_dissociation_on_synergy_task_stays_at_chance(self):
        task = TaskSpec(class_count=2, unique_a_bits=0, unique_b_bits=0, synergy_bits=1,
                        noise_std=0.5, n_train=1024, n_test=2000)
        cfg = LabConfig(task=task, optim=OptimConfig(lr=0.05, lr_decay=0.97), epochs=20, rsv=rsv.RSVConfig(8, 64))
        rec = run(cfg, DeficitSchedule.initial("dissociation", 20), seed=1)
        assert abs(rec.final_test_acc - 0.5) <= 0.05

    def test_divergence_aborts(self):
        # a linear trunk cannot die like ReLUs, so a huge step overflows
        cfg = quick_config(optim=OptimConfig(lr=1e12), net=nn.NetSpec(trunk_activation="linear"))
        rec = run(cfg, DeficitSchedule(), seed=0)
        assert rec.failed and "non-finite" in rec.failure
        assert len(rec.test_acc) < cfg.epochs

    def test_momentum_runs(self):
        rec = run(quick_config(optim=OptimConfig(lr=0.02, momentum=0.9)), DeficitSchedule(), seed=0)
        assert not rec.failed and rec.final_test_acc > 0.3


class TestUsableInformation:
    def test_untrained_near_zero(self):
        cfg = quick_config()
        data = generate_task(cfg.task)
        net = nn.PathwayNet.init(24, 8, nn.NetSpec(init_gain=0.05), 0)
        assert abs(usable_information(net, data)) < 0.1

    def test_both_masked_near_zero(self):
        cfg = quick_config(mask_prob=0.1, epochs=10)
        rec = run(cfg, DeficitSchedule(), seed=0)
        data = generate_task(cfg.task)
        assert abs(usable_information(rec.net, data, "both")) < 0.1
        assert rec.usable_info["both"] > rec.usable_info["a_alone"] > 0

    def test_bad_mask(self):
        with pytest.raises(ValueError):
            usable_information(small_net(), generate_task(quick_config().task), "c")


class TestSweeps:
    def test_derived_seeds(self):
        assert sweeps.replicate_seeds(0, 4) == [0, 1, 2, 3]
        assert sweeps.replicate_seeds(8, 3) == [8, 9, 10]

    def test_depth_must_be_positive(self):
        with pytest.raises(ValueError, match=">= 1"):
            sweeps.depth_sweep(quick_config(), [0, 1], DeficitSchedule(), [0])

    def test_window_must_fit(self):
        with pytest.raises(ValueError, match="exceeds"):
            sweeps.critical_period_sweep(quick_config(), sweeps.sliding_windows("blur", [4], 4), [0])

    def test_zero_length_window_has_no_impairment(self):
        table = sweeps.critical_period_sweep(quick_config(), sweeps.initial_windows("dissociation", [0, 2]), [0, 1],
                                             post_epochs=2)
        zero = [r for r in table.rows if r["length"] == 0]
        assert len(zero) == 2 and all(r["impairment"] == 0.0 for r in zero)
        # one control per (epochs, depth, seed): lengths 0 and 2 give 2 and 4 epochs
        assert sorted((c.seed, len(c.test_acc)) for c in table.controls) == [(0, 2), (0, 4), (1, 2), (1, 4)]

    def test_workers_do_not_change_results(self):
        cfg, wins = quick_config(epochs=3), sweeps.initial_windows("blur", [1])
        one = sweeps.critical_period_sweep(cfg, wins, [0, 1], jobs=1)
        two = sweeps.critical_period_sweep(cfg, wins, [0, 1], jobs=2)
        assert one.rows == two.rows
