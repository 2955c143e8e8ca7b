"""Minibatch SGD with deficit windows, per-epoch metrics and final probes."""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import rsv
from .deficits import DeficitSchedule, apply_blur, apply_dissociation
from .net import DISSOCIATION, NORMAL, Batch, NetSpec, PathwayNet, evaluate, forward, loss_and_gradients
from .task import TaskData, TaskSpec, generate_task


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.05
    momentum: float = 0.0
    lr_decay: float = 0.97  # per-epoch factor; 1.0 for a fixed rate
    batch_size: int = 64

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** epoch


@dataclass(frozen=True)
class LabConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    net: NetSpec = field(default_factory=NetSpec)
    optim: OptimConfig = field(default_factory=OptimConfig)
    epochs: int = 60
    recon_lambda: float = 0.0
    mask_prob: float = 0.0  # train-time per-pathway masking, for usable-information runs
    rsv: rsv.RSVConfig = field(default_factory=rsv.RSVConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.recon_lambda < 0:
            raise ValueError("recon_lambda must be >= 0")
        if not 0.0 <= self.mask_prob < 1.0:
            raise ValueError("mask_prob must be in [0, 1)")


@dataclass
class RunRecord:
    config: dict
    seed: int
    schedule: dict
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    test_loss: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)
    rsv: dict | None = None
    usable_info: dict | None = None
    failed: bool = False
    failure: str | None = None
    wall_clock: float = 0.0
    rsv_values: np.ndarray | None = field(default=None, repr=False)
    rsv_dead: np.ndarray | None = field(default=None, repr=False)
    net: PathwayNet | None = field(default=None, repr=False)

    @property
    def final_test_acc(self) -> float:
        return self.test_acc[-1] if self.test_acc else float("nan")

    def metric_rows(self):
        """``(epoch, split, loss, accuracy)`` rows."""
        for e in range(len(self.test_acc)):
            yield e, "train", self.train_loss[e], self.train_acc[e]
            yield e, "test", self.test_loss[e], self.test_acc[e]


def _streams(seed: int):
    # independent streams so a deficit cannot perturb shuffling or masking
    return (
        np.random.default_rng([seed, 1]),
        np.random.default_rng([seed, 2]),
        np.random.default_rng([seed, 3]),
    )


def train(net, data, schedule, config, seed=0, epochs=None, grad_hook=None) -> RunRecord:
    """Train ``net`` in place and return its record.

    Inside the deficit window, batches are blurred or dissociated; outside it
    the fused head sees clean, correctly paired views.  ``grad_hook(epoch,
    step, grads)`` is called after every gradient evaluation.  A non-finite
    loss ends training and flags the record as failed.
    """
    # overflow on the way to divergence is expected and handled below
    with np.errstate(over="ignore", invalid="ignore"):
        return _train(net, data, schedule, config, seed, epochs, grad_hook)


def _train(
    net: PathwayNet,
    data: TaskData,
    schedule: DeficitSchedule,
    config: LabConfig,
    seed: int = 0,
    epochs: int | None = None,
    grad_hook=None,
) -> RunRecord:
    epochs = config.epochs if epochs is None else epochs
    schedule.check_within(epochs)
    opt = config.optim
    shuffle_rng, deficit_rng, mask_rng = _streams(seed)
    record = RunRecord(config=config_dict(config, epochs), seed=seed, schedule=asdict(schedule))
    velocity = net.zeros_like() if opt.momentum > 0 else None
    tr = data.train
    n = len(tr)
    t_start = time.perf_counter()
    step = 0
    for epoch in range(epochs):
        lr = opt.lr_at(epoch)
        order = shuffle_rng.permutation(n)
        deficit = schedule.active(epoch)
        for lo in range(0, n - opt.batch_size + 1, opt.batch_size):
            idx = order[lo:lo + opt.batch_size]
            batch = Batch(tr.view_a[idx], tr.view_b[idx], tr.labels[idx])
            mode = NORMAL
            if deficit and schedule.kind == "blur":
                if schedule.pathway == "b":
                    batch.view_b = apply_blur(batch.view_b, schedule.gain, schedule.noise_std, deficit_rng)
                else:
                    batch.view_a = apply_blur(batch.view_a, schedule.gain, schedule.noise_std, deficit_rng)
            elif deficit and schedule.kind == "dissociation":
                batch = apply_dissociation(batch, deficit_rng)
                mode = DISSOCIATION
            if config.mask_prob > 0:
                keep_a = mask_rng.random(len(idx)) >= config.mask_prob
                keep_b = mask_rng.random(len(idx)) >= config.mask_prob
                batch.view_a = batch.view_a * keep_a[:, None]
                batch.view_b = batch.view_b * keep_b[:, None]
            loss, grads = loss_and_gradients(net, batch, mode, config.recon_lambda)
            if grad_hook is not None:
                grad_hook(epoch, step, grads)
            if not math.isfinite(loss):
                record.failed = True
                record.failure = f"non-finite loss at epoch {epoch}, step {step}"
                record.wall_clock = time.perf_counter() - t_start
                record.net = net
                return record
            p = net.params
            if velocity is None:
                for k, g in grads.items():
                    p[k] -= lr * g
            else:
                for k, g in grads.items():
                    v = velocity[k]
                    v *= opt.momentum
                    v += g
                    p[k] -= lr * v
            step += 1
        l_tr, a_tr = evaluate(net, tr.view_a, tr.view_b, tr.labels)
        l_te, a_te = evaluate(net, data.test.view_a, data.test.view_b, data.test.labels)
        if not (math.isfinite(l_tr) and math.isfinite(l_te)):
            record.failed = True
            record.failure = f"non-finite evaluation loss at epoch {epoch}"
            break
        record.train_loss.append(l_tr)
        record.train_acc.append(a_tr)
        record.test_loss.append(l_te)
        record.test_acc.append(a_te)
    record.wall_clock = time.perf_counter() - t_start
    record.net = net
    return record


def usable_information(net: PathwayNet, data: TaskData, mask_pathway: str = "none") -> float:
    """``log2 C`` minus the fused head's test cross-entropy in bits.

    ``mask_pathway`` zeroes view ``a``, ``b``, ``both`` or ``none`` at
    evaluation.  May be negative.
    """
    if mask_pathway not in ("none", "a", "b", "both"):
        raise ValueError(f"mask_pathway must be none|a|b|both, got {mask_pathway!r}")
    a, b = data.test.view_a, data.test.view_b
    if mask_pathway in ("a", "both"):
        a = np.zeros_like(a)
    if mask_pathway in ("b", "both"):
        b = np.zeros_like(b)
    ce_nats, _ = evaluate(net, a, b, data.test.labels)
    return math.log2(net.class_count) - ce_nats / math.log(2)


def net_probe(net: PathwayNet):
    return lambda a, b: forward(net, a, b)["z"]


def rsv_of_net(net: PathwayNet, data: TaskData, config: rsv.RSVConfig) -> rsv.RSVDistribution:
    return rsv.rsv_distribution(net_probe(net), data.test.view_a, data.test.view_b, config)


def finalize(record: RunRecord, data: TaskData, config: LabConfig, with_usable_info: bool = True) -> RunRecord:
    """Attach the RSV summary of ``z`` and usable information per pathway."""
    net = record.net
    if record.failed or net is None:
        return record
    dist = rsv_of_net(net, data, config.rsv)
    record.rsv_values = dist.values
    record.rsv_dead = dist.dead
    try:
        pol = rsv.polarization_index(dist)
        record.rsv = {"mean_abs": pol.mean_abs, "frac_polarized": pol.frac_polarized, "mean": pol.mean,
                      "dead_fraction": float(dist.dead.mean()), "counts": dist.counts.tolist()}
    except ValueError:
        record.rsv = {"mean_abs": float("nan"), "frac_polarized": float("nan"), "mean": float("nan"),
                      "dead_fraction": 1.0, "counts": dist.counts.tolist()}
    if with_usable_info:
        record.usable_info = {
            "both": usable_information(net, data, "none"),
            "a_alone": usable_information(net, data, "b"),
            "b_alone": usable_information(net, data, "a"),
        }
    return record


def run(config: LabConfig, schedule: DeficitSchedule, seed: int, epochs: int | None = None,
        data: TaskData | None = None) -> RunRecord:
    """Generate the task, initialise a net from ``seed``, train and finalise."""
    data = generate_task(config.task) if data is None else data
    net = PathwayNet.init(config.task.view_dim, config.task.class_count, config.net, seed)
    record = train(net, data, schedule, config, seed, epochs)
    return finalize(record, data, config)


def config_dict(config: LabConfig, epochs: int | None = None) -> dict:
    d = asdict(config)
    if epochs is not None:
        d["epochs"] = epochs
    return d


def with_depth(config: LabConfig, n_blocks: int) -> LabConfig:
    return replace(config, net=replace(config.net, n_blocks=n_blocks))
