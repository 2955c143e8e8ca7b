"""Closed-form learning dynamics of shallow and two-layer linear networks.

With whitened inputs the product weight of a two-layer linear network,
started from a spectrally aligned small initialisation, evolves mode by mode
along the SVD of the input-output cross-correlation matrix ``sigma``::

    W(t) = sum_a a_a(t) u_a v_a^T
    a(t) = s e^{2st/tau} / (e^{2st/tau} - 1 + s/a0)

A single-layer network instead relaxes every entry independently towards
``sigma``.  Everything here is a pure function of its inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

ZERO_MODE_TOL = 1e-12
DEFAULT_TAU = 100.0
DEFAULT_A0 = 1e-4

Model = Literal["deep", "shallow"]


@dataclass(frozen=True)
class CrossCorrelation:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise ValueError(f"cross-correlation must be a non-empty 2-D matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            bad = np.argwhere(~np.isfinite(m))[0]
            raise ValueError(f"cross-correlation has a non-finite entry at {tuple(int(i) for i in bad)}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def n_outputs(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.matrix.shape[1]


def as_sigma(sigma) -> CrossCorrelation:
    return sigma if isinstance(sigma, CrossCorrelation) else CrossCorrelation(sigma)


@dataclass(frozen=True)
class SpectralModes:
    left_vectors: np.ndarray  # (n_outputs, r), columns u_a
    singular_values: np.ndarray  # (r,), non-increasing
    right_vectors: np.ndarray  # (n_inputs, r), columns v_a
    active: np.ndarray  # (r,) bool, s_a above rank_tol

    @property
    def rank(self) -> int:
        return int(self.active.sum())

    @property
    def n_modes(self) -> int:
        return self.singular_values.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T


def _sign_fix(U: np.ndarray, V: np.ndarray) -> None:
    for a in range(U.shape[1]):
        nz = np.flatnonzero(np.abs(U[:, a]) > 1e-12)
        if nz.size and U[nz[0], a] < 0:
            U[:, a] *= -1.0
            V[:, a] *= -1.0


def decompose(sigma, rank_tol: float = 1e-10, tie_tol: float = 1e-10) -> SpectralModes:
    """Thin SVD of ``sigma`` with a deterministic sign and ordering convention.

    The first entry of each left vector with magnitude above 1e-12 is made
    positive.  Modes whose singular values agree within ``tie_tol`` (relative
    to the largest) are ordered by descending lexicographic order of their
    sign-fixed left vectors.
    """
    m = as_sigma(sigma).matrix
    U, s, Vt = np.linalg.svd(m, full_matrices=False)
    U = U.copy()
    V = Vt.T.copy()
    _sign_fix(U, V)

    scale = max(float(s[0]) if s.size else 0.0, 1.0)
    order = list(range(s.size))
    i = 0
    while i < len(order):
        j = i + 1
        while j < len(order) and abs(s[order[i]] - s[order[j]]) <= tie_tol * scale:
            j += 1
        if j - i > 1:
            block = order[i:j]
            block.sort(key=lambda a: tuple(np.round(U[:, a], 12)), reverse=True)
            order[i:j] = block
        i = j
    U, s, V = U[:, order], s[order], V[:, order]
    s = np.maximum(s, 0.0)
    for arr in (U, s, V):
        arr.setflags(write=False)
    active = s > rank_tol
    active.setflags(write=False)
    return SpectralModes(U, s, V, active)


def mode_strength(s_alpha: float, a0_alpha: float, tau: float, t):
    """Strength of one SVD mode at time ``t`` (scalar or array of times).

    Evaluated in the logistic form ``s / (1 + (s/a0 - 1) e^{-2st/tau})`` so
    large ``t`` cannot overflow; for ``s <= 1e-12`` the ``s -> 0`` limit
    ``a0 / (1 + 2 a0 t / tau)`` is returned.
    """
    if not a0_alpha > 0:
        raise ValueError(f"initial mode strength must be > 0, got {a0_alpha}")
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    if s_alpha < 0:
        raise ValueError(f"singular value must be >= 0, got {s_alpha}")
    t = np.asarray(t, dtype=float)
    if s_alpha <= ZERO_MODE_TOL:
        out = a0_alpha / (1.0 + 2.0 * a0_alpha * t / tau)
    else:
        x = 2.0 * s_alpha * t / tau
        # 1 + (s/a0 - 1) e^{-x} written as a sum of non-negative terms
        denom = -np.expm1(-x) + (s_alpha / a0_alpha) * np.exp(-x)
        out = s_alpha / denom
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DynamicsParams:
    tau: float = DEFAULT_TAU
    a0: np.ndarray | float = DEFAULT_A0
    time_grid: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 2000.0, 401))
    w0: np.ndarray | None = None  # shallow-model initial weights; zeros when None

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        a0 = np.atleast_1d(np.asarray(self.a0, dtype=float))
        if np.any(a0 <= 0) or not np.all(np.isfinite(a0)):
            raise ValueError("every initial mode strength must be finite and > 0")
        grid = np.asarray(self.time_grid, dtype=float)
        if grid.ndim != 1 or grid.size == 0 or np.any(grid < 0) or np.any(np.diff(grid) <= 0):
            raise ValueError("time_grid must be a non-empty, strictly increasing sequence of times >= 0")
        object.__setattr__(self, "time_grid", grid)

    def a0_vector(self, n_modes: int) -> np.ndarray:
        a0 = np.atleast_1d(np.asarray(self.a0, dtype=float))
        if a0.size == 1:
            return np.full(n_modes, float(a0[0]))
        if a0.size != n_modes:
            raise ValueError(f"a0 has {a0.size} entries but there are {n_modes} modes")
        return a0

    def inconsistent_modes(self, modes: SpectralModes) -> np.ndarray:
        """Active modes whose a0 is not below every active singular value."""
        a0 = self.a0_vector(modes.n_modes)
        if not modes.active.any():
            return np.zeros(modes.n_modes, dtype=bool)
        smin = modes.singular_values[modes.active].min()
        return modes.active & (a0 >= smin)


def _mode_strengths(modes: SpectralModes, params: DynamicsParams, t) -> np.ndarray:
    a0 = params.a0_vector(modes.n_modes)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros((t.size, modes.n_modes))
    for a in np.flatnonzero(modes.active):
        out[:, a] = mode_strength(float(modes.singular_values[a]), float(a0[a]), params.tau, t)
    return out


def weight_matrix_at(modes: SpectralModes, params: DynamicsParams, t: float) -> np.ndarray:
    """Product weight ``sum_a a_a(t) u_a v_a^T`` over the active modes."""
    a = _mode_strengths(modes, params, t)[0]
    return (modes.left_vectors * a) @ modes.right_vectors.T


def shallow_weight_at(sigma, tau: float, t, w0=None) -> np.ndarray:
    """Entrywise relaxation ``sigma + (w0 - sigma) e^{-t/tau}``."""
    m = as_sigma(sigma).matrix
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    w0 = np.zeros_like(m) if w0 is None else np.asarray(w0, dtype=float)
    if w0.shape != m.shape:
        raise ValueError(f"w0 shape {w0.shape} does not match sigma shape {m.shape}")
    return m + (w0 - m) * np.exp(-float(t) / tau)


def counterfactual_drop(sigma, k: int) -> CrossCorrelation:
    """Copy of ``sigma`` with input column ``k`` zeroed (shape kept)."""
    m = as_sigma(sigma).matrix
    if not 0 <= k < m.shape[1]:
        raise IndexError(f"source index {k} out of range for {m.shape[1]} inputs")
    out = m.copy()
    out[:, k] = 0.0
    return CrossCorrelation(out)


@dataclass(frozen=True)
class SourceTrajectory:
    source_index: int
    times: np.ndarray
    weight_norm: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.weight_norm):
            raise ValueError("times and weight_norm lengths differ")


def weight_path(sigma, params: DynamicsParams, model: Model = "deep") -> np.ndarray:
    """``W(t)`` for every time in the grid, shape ``(T, n_outputs, n_inputs)``."""
    sig = as_sigma(sigma)
    grid = params.time_grid
    if model == "deep":
        modes = decompose(sig)
        a = _mode_strengths(modes, params, grid)
        return np.einsum("ia,ta,ja->tij", modes.left_vectors, a, modes.right_vectors)
    if model == "shallow":
        m = sig.matrix
        w0 = np.zeros_like(m) if params.w0 is None else np.asarray(params.w0, dtype=float)
        if w0.shape != m.shape:
            raise ValueError(f"w0 shape {w0.shape} does not match sigma shape {m.shape}")
        decay = np.exp(-grid / params.tau)
        return m[None] + (w0 - m)[None] * decay[:, None, None]
    raise ValueError(f"model must be 'deep' or 'shallow', got {model!r}")


def source_trajectories(sigma, params: DynamicsParams, model: Model = "deep") -> list[SourceTrajectory]:
    """Per-input-column Euclidean norm of ``W(t)`` over the time grid."""
    path = weight_path(sigma, params, model)
    norms = np.sqrt(np.sum(path * path, axis=1))  # (T, n_inputs)
    return [
        SourceTrajectory(k, params.time_grid, norms[:, k].copy())
        for k in range(norms.shape[1])
    ]


def half_final_onset(times: np.ndarray, values: np.ndarray, fraction: float = 0.5) -> float | None:
    """First time the value reaches ``fraction`` of its final value."""
    final = values[-1]
    if final < 1e-9:
        return None
    hit = np.flatnonzero(values >= fraction * final)
    return float(times[hit[0]])


@dataclass(frozen=True)
class CounterfactualReport:
    model: str
    dropped: int
    full: list[SourceTrajectory]
    dropped_run: list[SourceTrajectory]
    max_abs_diff: dict[int, float]
    onset_full: dict[int, float | None]
    onset_dropped: dict[int, float | None]

    def onset_delta(self, k: int) -> float | None:
        a, b = self.onset_full[k], self.onset_dropped[k]
        return None if a is None or b is None else b - a

    def rows(self):
        """CSV rows ``(time, source_index, weight_norm, variant)``."""
        for variant, trajs in (("full", self.full), ("dropped", self.dropped_run)):
            for tr in trajs:
                for t, w in zip(tr.times, tr.weight_norm):
                    yield float(t), tr.source_index, float(w), variant


def compare_counterfactual(sigma, k: int, params: DynamicsParams, model: Model = "deep") -> CounterfactualReport:
    """Full run versus a run with source ``k`` disabled from ``t = 0``."""
    sig = as_sigma(sigma)
    post = counterfactual_drop(sig, k)
    full = source_trajectories(sig, params, model)
    dropped = source_trajectories(post, params, model)
    survivors = [j for j in range(sig.n_inputs) if j != k]
    diff = {j: float(np.max(np.abs(full[j].weight_norm - dropped[j].weight_norm))) for j in survivors}
    on_full = {j: half_final_onset(full[j].times, full[j].weight_norm) for j in survivors}
    on_drop = {j: half_final_onset(dropped[j].times, dropped[j].weight_norm) for j in survivors}
    return CounterfactualReport(model, k, full, dropped, diff, on_full, on_drop)


def trajectory_table(trajs: Sequence[SourceTrajectory], variant: str):
    for tr in trajs:
        for t, w in zip(tr.times, tr.weight_norm):
            yield float(t), tr.source_index, float(w), variant
