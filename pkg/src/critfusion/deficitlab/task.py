"""Synthetic two-view classification task with controlled information content.

The label is a little-endian bit string.  Each bit belongs to one component:

* common bits appear, with the same sign, in both views;
* unique-A / unique-B bits appear in one view only;
* synergy bits are hidden: a fair sign ``r`` is drawn per sample and view A
  carries ``r * eps`` while view B carries ``r * eps * (2s - 1)``.  Either
  view alone is independent of ``s``; the product of the two reveals it.

Every component bit occupies ``channel_dim`` consecutive coordinates of a
view (the same value repeated); remaining coordinates carry noise only.  Both
views use the same slot layout, so the task is symmetric under swapping views
(and swapping the unique-A / unique-B bit counts).
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class TaskSpec:
    class_count: int = 8
    common_bits: int = 0
    unique_a_bits: int = 1
    unique_b_bits: int = 1
    synergy_bits: int = 1
    channel_dim: int = 4
    view_dim: int = 24
    common_strength: float = 1.0
    unique_strength: float = 1.0
    synergy_strength: float = 1.0
    noise_std: float = 0.5
    n_train: int = 2048
    n_test: int = 1024
    seed: int = 0

    def __post_init__(self):
        bits = self.total_bits
        for name in ("common_bits", "unique_a_bits", "unique_b_bits", "synergy_bits"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if 2 ** bits != self.class_count:
            raise ValueError(
                f"class_count {self.class_count} is not expressible by {bits} label bits "
                f"(common {self.common_bits}, unique-A {self.unique_a_bits}, "
                f"unique-B {self.unique_b_bits}, synergy {self.synergy_bits}); need 2**bits"
            )
        for name in ("common_strength", "unique_strength", "synergy_strength", "noise_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.channel_dim < 1:
            raise ValueError("channel_dim must be >= 1")
        if self.slots_per_view * self.channel_dim > self.view_dim:
            raise ValueError(
                f"view_dim {self.view_dim} too small for {self.slots_per_view} slots of width {self.channel_dim}"
            )
        if self.n_train < 2 or self.n_test < 2:
            raise ValueError("n_train and n_test must be >= 2")

    @property
    def total_bits(self) -> int:
        return self.common_bits + self.unique_a_bits + self.unique_b_bits + self.synergy_bits

    @property
    def slots_per_view(self) -> int:
        return self.common_bits + max(self.unique_a_bits, self.unique_b_bits) + self.synergy_bits

    def components(self) -> list[str]:
        """Component name for each label bit, least significant first."""
        return (
            ["common"] * self.common_bits
            + ["unique_a"] * self.unique_a_bits
            + ["unique_b"] * self.unique_b_bits
            + ["synergy"] * self.synergy_bits
        )


@dataclass
class MultiViewData:
    view_a: np.ndarray  # (n, d)
    view_b: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,)
    bits: np.ndarray  # (n, total_bits) provenance
    signs: np.ndarray  # (n, synergy_bits) hidden synergy signs

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, idx) -> "MultiViewData":
        return MultiViewData(self.view_a[idx], self.view_b[idx], self.labels[idx], self.bits[idx], self.signs[idx])

    def swapped(self) -> "MultiViewData":
        return MultiViewData(self.view_b, self.view_a, self.labels, self.bits, self.signs)


@dataclass
class TaskData:
    spec: TaskSpec
    train: MultiViewData
    test: MultiViewData


def _sample(spec: TaskSpec, n: int, rng: np.random.Generator) -> MultiViewData:
    d, w = spec.view_dim, spec.channel_dim
    bits = rng.integers(0, 2, size=(n, spec.total_bits))
    signs = rng.choice(np.array([-1.0, 1.0]), size=(n, spec.synergy_bits))
    a = np.zeros((n, d))
    b = np.zeros((n, d))
    pm = 2.0 * bits - 1.0
    col = 0

    def put(view, slot, values):
        view[:, slot * w:(slot + 1) * w] = values[:, None]

    slot = 0
    for _ in range(spec.common_bits):
        put(a, slot, spec.common_strength * pm[:, col])
        put(b, slot, spec.common_strength * pm[:, col])
        slot += 1
        col += 1
    first_unique = slot
    for i in range(spec.unique_a_bits):
        put(a, first_unique + i, spec.unique_strength * pm[:, col])
        col += 1
    for i in range(spec.unique_b_bits):
        put(b, first_unique + i, spec.unique_strength * pm[:, col])
        col += 1
    slot = first_unique + max(spec.unique_a_bits, spec.unique_b_bits)
    for i in range(spec.synergy_bits):
        r = signs[:, i]
        put(a, slot, spec.synergy_strength * r)
        put(b, slot, spec.synergy_strength * r * pm[:, col])
        slot += 1
        col += 1
    a += spec.noise_std * rng.standard_normal((n, d))
    b += spec.noise_std * rng.standard_normal((n, d))
    labels = (bits * (1 << np.arange(spec.total_bits))).sum(axis=1).astype(np.int64)
    return MultiViewData(a, b, labels, bits.astype(np.int64), signs)


def generate_task(spec: TaskSpec) -> TaskData:
    rng = np.random.default_rng([spec.seed, 11])
    train = _sample(spec, spec.n_train, rng)
    test = _sample(spec, spec.n_test, rng)
    return TaskData(spec, train, test)


def write_dataset_csv(data: MultiViewData, spec: TaskSpec, path: str | Path) -> None:
    """One row per sample: label, provenance bits, synergy signs, view_a..., view_b..."""
    comps = spec.components()
    header = (
        ["label"]
        + [f"bit{i}_{c}" for i, c in enumerate(comps)]
        + [f"sign{i}" for i in range(spec.synergy_bits)]
        + [f"a{i}" for i in range(spec.view_dim)]
        + [f"b{i}" for i in range(spec.view_dim)]
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(data)):
            w.writerow(
                [int(data.labels[i])]
                + [int(x) for x in data.bits[i]]
                + [int(x) for x in data.signs[i]]
                + [f"{x:.9g}" for x in data.view_a[i]]
                + [f"{x:.9g}" for x in data.view_b[i]]
            )


def read_dataset_csv(path: str | Path, spec: TaskSpec) -> MultiViewData:
    nb, ns, d = spec.total_bits, spec.synergy_bits, spec.view_dim
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    labels = raw[:, 0].astype(np.int64)
    bits = raw[:, 1:1 + nb].astype(np.int64)
    signs = raw[:, 1 + nb:1 + nb + ns]
    a = raw[:, 1 + nb + ns:1 + nb + ns + d]
    b = raw[:, 1 + nb + ns + d:1 + nb + ns + 2 * d]
    return MultiViewData(a, b, labels, bits, signs)


def spec_dict(spec: TaskSpec) -> dict:
    return asdict(spec)
