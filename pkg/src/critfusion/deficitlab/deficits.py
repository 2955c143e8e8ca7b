"""Input deficits: blur (attenuation plus noise) and view dissociation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .net import Batch

KINDS = ("none", "blur", "dissociation")


@dataclass(frozen=True)
class DeficitSchedule:
    """A deficit active on epochs ``[start, start + length)``.

    An initial window has ``start = 0``; a sliding window moves ``start``.
    """

    kind: str = "none"
    start: int = 0
    length: int = 0
    pathway: str = "b"  # blur target
    gain: float = 0.25
    noise_std: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"deficit kind must be one of {KINDS}, got {self.kind!r}")
        if self.start < 0 or self.length < 0:
            raise ValueError("deficit window start and length must be >= 0")
        if self.pathway not in ("a", "b"):
            raise ValueError("blur pathway must be 'a' or 'b'")
        if not 0.0 <= self.gain <= 1.0:
            raise ValueError("blur gain must be in [0, 1]")
        if self.noise_std < 0:
            raise ValueError("blur noise_std must be >= 0")

    @classmethod
    def initial(cls, kind: str, t0: int, **kw) -> "DeficitSchedule":
        return cls(kind=kind, start=0, length=t0, **kw)

    @classmethod
    def sliding(cls, kind: str, start: int, length: int, **kw) -> "DeficitSchedule":
        return cls(kind=kind, start=start, length=length, **kw)

    @property
    def end(self) -> int:
        return self.start + self.length

    def active(self, epoch: int) -> bool:
        return self.kind != "none" and self.start <= epoch < self.end

    def check_within(self, epochs: int) -> None:
        if self.kind != "none" and self.end > epochs:
            raise ValueError(f"deficit window [{self.start}, {self.end}) exceeds {epochs} epochs")

    def label(self) -> str:
        if self.kind == "none" or self.length == 0:
            return "none"
        return f"{self.kind}@{self.start}+{self.length}"


def apply_blur(view: np.ndarray, gain: float, noise_std: float, seed=None) -> np.ndarray:
    """``gain * view`` plus fresh N(0, noise_std^2) noise.

    ``seed`` may be an int, a seed sequence or a ``Generator``.
    """
    if not 0.0 <= gain <= 1.0:
        raise ValueError("gain must be in [0, 1]")
    view = np.asarray(view, dtype=float)
    out = gain * view
    if noise_std > 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        out = out + noise_std * rng.standard_normal(view.shape)
    return out


def apply_dissociation(batch: Batch, seed=None, perm: np.ndarray | None = None) -> Batch:
    """Re-pair view B with a uniformly permuted batch and pick each label side.

    Sample ``i`` keeps its own view A and receives view B of sample
    ``perm[i]``; with probability 1/2 its label becomes that B donor's label
    (``label_side`` 1), else it keeps A's label (``label_side`` 0).
    """
    n = batch.labels.shape[0]
    if n < 2:
        raise ValueError("dissociation needs a batch of at least 2 samples")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if perm is None:
        perm = rng.permutation(n)
    side = rng.integers(0, 2, size=n)
    labels = np.where(side == 1, batch.labels[perm], batch.labels)
    return Batch(batch.view_a, batch.view_b[perm], labels, side)
