"""Discrete gradient descent on linear chains ``y = W_D ... W_1 x``.

The objective is the whitened-input MSE written through the cross-correlation
matrix, ``L(W) = 1/2 tr(W W^T) - tr(W sigma^T) + const``, so a training
"dataset" is just a ``sigma``.  Switching ``sigma`` mid-run models temporary
sensor deficits.  Time in recorded output is ``eta * step``; with that clock
the continuous-time limit has ``tau = 1``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lindyn import CrossCorrelation, as_sigma, decompose

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, step: int, partial: "Trajectory | None" = None):
        super().__init__(f"simulation diverged at step {step}")
        self.step = step
        self.partial = partial


@dataclass
class LinearChain:
    layers: list[np.ndarray]  # W_1 first

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a chain needs at least one layer")
        for i in range(1, len(self.layers)):
            if self.layers[i].shape[1] != self.layers[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i + 1} expects {self.layers[i].shape[1]} inputs, "
                    f"layer {i} produces {self.layers[i - 1].shape[0]}"
                )

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def n_inputs(self) -> int:
        return self.layers[0].shape[1]

    @property
    def n_outputs(self) -> int:
        return self.layers[-1].shape[0]

    def product(self) -> np.ndarray:
        W = self.layers[0].copy()
        for L in self.layers[1:]:
            W = L @ W
        return W

    def copy(self) -> "LinearChain":
        return LinearChain([L.copy() for L in self.layers])


def init_chain(
    n_inputs: int,
    n_outputs: int,
    hidden_width: int,
    depth: int,
    init: str = "small-random",
    seed: int = 0,
    scale: float = 1e-3,
    a0=1e-4,
    sigma=None,
) -> LinearChain:
    """Build a chain.

    ``small-random`` draws every entry i.i.d. from N(0, scale^2).  ``spectral``
    (depth 2 only) aligns the chain with the SVD of ``sigma`` so that
    ``W_2 W_1 = U diag(a0) V^T`` exactly.
    """
    if min(n_inputs, n_outputs, hidden_width, depth) < 1:
        raise ValueError("dimensions and depth must be positive")
    if init == "small-random":
        rng = np.random.default_rng(seed)
        dims = [n_inputs] + [hidden_width] * (depth - 1) + [n_outputs]
        return LinearChain([scale * rng.standard_normal((dims[i + 1], dims[i])) for i in range(depth)])
    if init == "spectral":
        if depth != 2:
            raise ValueError(f"spectral init is defined for depth 2 only, got depth {depth}")
        if sigma is None:
            raise ValueError("spectral init needs sigma")
        modes = decompose(sigma)
        sig = as_sigma(sigma)
        if sig.shape != (n_outputs, n_inputs):
            raise ValueError(f"sigma shape {sig.shape} does not match ({n_outputs}, {n_inputs})")
        r = modes.n_modes
        if hidden_width < r:
            raise ValueError(f"hidden_width {hidden_width} below the {r} modes of sigma")
        a0v = np.broadcast_to(np.asarray(a0, dtype=float), (r,))
        root = np.sqrt(a0v)
        W1 = np.zeros((hidden_width, n_inputs))
        W2 = np.zeros((n_outputs, hidden_width))
        W1[:r] = root[:, None] * modes.right_vectors.T
        W2[:, :r] = modes.left_vectors * root
        return LinearChain([W1, W2])
    raise ValueError(f"unknown init {init!r}")


def loss(chain: LinearChain, sigma) -> float:
    """``1/2 tr(W W^T) - tr(W sigma^T)`` (constant term dropped)."""
    W = chain.product()
    m = as_sigma(sigma).matrix
    return 0.5 * float(np.sum(W * W)) - float(np.sum(W * m))


def gradient(chain: LinearChain, sigma) -> list[np.ndarray]:
    """Exact per-layer gradient ``(W_D..W_{i+1})^T (W - sigma) (W_{i-1}..W_1)^T``."""
    m = as_sigma(sigma).matrix
    layers = chain.layers
    if m.shape != (chain.n_outputs, chain.n_inputs):
        raise ValueError(f"sigma shape {m.shape} does not match chain ({chain.n_outputs}, {chain.n_inputs})")
    D = len(layers)
    # below[i] = W_i ... W_1 (identity for i = 0); above[i] = W_D ... W_{i+1}
    below = [np.eye(chain.n_inputs)]
    for L in layers:
        below.append(L @ below[-1])
    above = [None] * (D + 1)
    above[D] = np.eye(chain.n_outputs)
    for i in range(D - 1, -1, -1):
        above[i] = above[i + 1] @ layers[i]
    residual = below[D] - m
    return [above[i + 1].T @ residual @ below[i].T for i in range(D)]


@dataclass(frozen=True)
class PhaseSchedule:
    phases: tuple[tuple[CrossCorrelation, tuple[int, int]], ...]

    def __post_init__(self):
        phases = tuple((as_sigma(s), (int(a), int(b))) for s, (a, b) in self.phases)
        if not phases:
            raise ValueError("schedule needs at least one phase")
        start = 0
        for _, (a, b) in phases:
            if a != start or b <= a:
                raise ValueError(f"phase ranges must be contiguous and non-empty starting at 0; got [{a}, {b})")
            start = b
        shapes = {s.shape for s, _ in phases}
        if len(shapes) != 1:
            raise ValueError(f"all phases must share one sigma shape, got {sorted(shapes)}")
        object.__setattr__(self, "phases", phases)

    @classmethod
    def constant(cls, sigma, total_steps: int) -> "PhaseSchedule":
        return cls(((as_sigma(sigma), (0, total_steps)),))

    @property
    def total_steps(self) -> int:
        return self.phases[-1][1][1]

    def sigma_at(self, step: int) -> CrossCorrelation:
        for s, (a, b) in self.phases:
            if a <= step < b:
                return s
        raise IndexError(step)


@dataclass(frozen=True)
class SimConfig:
    eta: float = 1e-3
    total_steps: int = 10_000
    record_stride: int = 10
    init: str = "small-random"
    scale: float = 1e-3
    a0: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.total_steps < 1 or self.record_stride < 1:
            raise ValueError("total_steps and record_stride must be positive")


@dataclass
class Trajectory:
    steps: np.ndarray
    eta: float
    products: np.ndarray  # (R, n_outputs, n_inputs)
    losses: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.eta * self.steps

    def column_norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.products ** 2, axis=1))

    def rows(self, variant: str = "sim"):
        norms = self.column_norms()
        for r, t in enumerate(self.times):
            for k in range(norms.shape[1]):
                yield float(t), k, float(norms[r, k]), variant


def simulate(chain: LinearChain, schedule: PhaseSchedule, config: SimConfig) -> Trajectory:
    """Plain full-batch gradient descent, switching sigma at phase boundaries.

    The chain passed in is not modified.  Records the product (and loss under
    the phase's sigma) at step 0 and every ``record_stride`` steps, plus the
    final step.
    """
    chain = chain.copy()
    smax = max(float(np.linalg.svd(s.matrix, compute_uv=False)[0]) for s, _ in schedule.phases)
    if config.eta * smax >= 1:
        warnings.warn(f"eta * s_max = {config.eta * smax:.3g} >= 1; gradient descent may be unstable", stacklevel=2)
    steps, prods, losses = [], [], []

    def record(step: int, sig):
        steps.append(step)
        prods.append(chain.product())
        losses.append(loss(chain, sig))

    total = schedule.total_steps
    for sig, (a, b) in schedule.phases:
        for step in range(a, b):
            if step % config.record_stride == 0:
                record(step, sig)
            # overflow just before divergence is expected; detected below
            with np.errstate(over="ignore", invalid="ignore"):
                grads = gradient(chain, sig)
                for L, g in zip(chain.layers, grads):
                    L -= config.eta * g
            if not all(np.all(np.isfinite(L)) for L in chain.layers):
                partial = Trajectory(np.array(steps), config.eta, np.array(prods), np.array(losses))
                raise DivergenceError(step + 1, partial)
    record(total, schedule.phases[-1][0])
    return Trajectory(np.array(steps), config.eta, np.array(prods), np.array(losses))


def mode_strengths(traj: Trajectory, sigma) -> np.ndarray:
    """Diagonal projections ``u_a^T W v_a`` per recorded step, shape ``(R, r)``."""
    modes = decompose(sigma)
    return np.einsum("ia,tij,ja->ta", modes.left_vectors, traj.products, modes.right_vectors)


def onset_times(norms: np.ndarray, steps: Sequence, fraction: float = 0.5) -> dict[int, float | None]:
    """First recorded step where each column norm reaches ``fraction`` of its final value.

    ``norms`` is ``(R, n_sources)``; sources whose final norm is below 1e-9
    map to ``None``.
    """
    norms = np.asarray(norms, dtype=float)
    steps = np.asarray(steps)
    if norms.ndim != 2 or norms.shape[0] == 0:
        raise ValueError("trajectory must be a non-empty (records, sources) array")
    if norms.shape[0] != steps.shape[0]:
        raise ValueError("steps and norms lengths differ")
    out: dict[int, float | None] = {}
    for k in range(norms.shape[1]):
        final = norms[-1, k]
        if final < 1e-9:
            out[k] = None
            continue
        hit = np.flatnonzero(norms[:, k] >= fraction * final)
        out[k] = steps[hit[0]].item()
    return out


def trajectory_onsets(traj: Trajectory, fraction: float = 0.5) -> dict[int, float | None]:
    return onset_times(traj.column_norms(), traj.steps, fraction)
