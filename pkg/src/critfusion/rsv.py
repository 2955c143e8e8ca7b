"""Source Variance and Relative Source Variance of representation units.

``SV_i(A, b)`` is the variance of unit ``i`` as source ``a`` varies with ``b``
held fixed; ``RSV_i = (SV_i(A, b) - SV_i(B, a)) / (SV_i(A, b) + SV_i(B, a))``
lies in [-1, 1], with +1 meaning the unit listens to ``a`` only.

A probe is any callable ``probe(a_batch, b_batch) -> (n, units)`` array.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import softmax

Probe = Callable[[np.ndarray, np.ndarray], np.ndarray]

HIST_BINS = 41
POLARIZED_ABS = 0.9


@dataclass(frozen=True)
class RSVConfig:
    fixed_sample_count: int = 32  # K
    variation_sample_count: int = 256  # M
    seed: int = 0
    dead_unit_epsilon: float = 1e-12

    def __post_init__(self):
        if self.fixed_sample_count < 1:
            raise ValueError("fixed_sample_count must be >= 1")
        if self.variation_sample_count < 2:
            raise ValueError("variation_sample_count must be >= 2")


@dataclass(frozen=True)
class RSVDistribution:
    values: np.ndarray  # (units, K)
    dead: np.ndarray  # (units, K) bool
    bin_edges: np.ndarray
    counts: np.ndarray

    @property
    def live_values(self) -> np.ndarray:
        return self.values[~self.dead]

    @property
    def unit_count(self) -> int:
        return self.values.shape[0]

    def unit_means(self) -> np.ndarray:
        """Mean RSV per unit over its non-dead fixed pairs (NaN if all dead)."""
        live = ~self.dead
        n = live.sum(axis=1)
        tot = np.where(live, self.values, 0.0).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n > 0, tot / np.maximum(n, 1), np.nan)


def histogram(values: np.ndarray, bins: int = HIST_BINS) -> tuple[np.ndarray, np.ndarray]:
    """Uniform bins on [-1, 1] whose centres include 0 and +-1."""
    half = 1.0 / (bins - 1)
    edges = np.linspace(-1.0 - half, 1.0 + half, bins + 1)
    counts, _ = np.histogram(np.clip(values, -1.0, 1.0), bins=edges)
    return edges, counts


def make_distribution(values: np.ndarray, dead: np.ndarray) -> RSVDistribution:
    values = np.asarray(values, dtype=float)
    dead = np.asarray(dead, dtype=bool)
    edges, counts = histogram(values[~dead])
    return RSVDistribution(values, dead, edges, counts)


def source_variance(probe: Probe, fixed_b, a_samples) -> np.ndarray:
    """Unbiased per-unit variance of ``probe(a, fixed_b)`` over ``a_samples``.

    Swap the probe's arguments (and pass a fixed ``a`` with ``b`` samples) for
    the symmetric quantity.
    """
    a_samples = np.asarray(a_samples, dtype=float)
    if a_samples.ndim == 1:
        a_samples = a_samples[:, None]
    m = a_samples.shape[0]
    if m < 2:
        raise ValueError(f"need at least 2 variation samples, got {m}")
    fixed_b = np.atleast_1d(np.asarray(fixed_b, dtype=float))
    b = np.broadcast_to(fixed_b, (m,) + fixed_b.shape)
    acts = np.asarray(probe(a_samples, b), dtype=float)
    # shifting by the first draw keeps constant units at exactly zero
    return (acts - acts[0]).var(axis=0, ddof=1)


def rsv_pair(sv_a, sv_b, epsilon: float = 1e-12):
    """``(sv_a - sv_b) / (sv_a + sv_b)`` and a dead flag; works elementwise.

    Dead units (``sv_a + sv_b < epsilon``) get RSV 0 with the flag set.
    """
    sv_a = np.asarray(sv_a, dtype=float)
    sv_b = np.asarray(sv_b, dtype=float)
    if np.any(sv_a < 0) or np.any(sv_b < 0):
        raise ValueError("source variances must be non-negative")
    total = sv_a + sv_b
    dead = total < epsilon
    with np.errstate(invalid="ignore", divide="ignore"):
        value = np.where(dead, 0.0, (sv_a - sv_b) / np.where(dead, 1.0, total))
    if value.ndim == 0:
        return float(value), bool(dead)
    return value, dead


def _draw_indices(n_pool: int, config: RSVConfig) -> tuple[np.ndarray, list[np.ndarray]]:
    K, M = config.fixed_sample_count, config.variation_sample_count
    if n_pool < K + M:
        raise ValueError(f"pools need at least K + M = {K} + {M} = {K + M} rows, got {n_pool}")
    perm = np.random.default_rng([config.seed, 0]).permutation(n_pool)
    fixed, rest = perm[:K], perm[K:]
    variation = []
    for j in range(K):
        rng = np.random.default_rng([config.seed, 1, j])
        variation.append(rest[rng.choice(rest.size, size=M, replace=False)])
    return fixed, variation


def _as_rows(pool) -> np.ndarray:
    pool = np.asarray(pool, dtype=float)
    return pool[:, None] if pool.ndim == 1 else pool


def rsv_values(probe: Probe, fixed_a, fixed_b, a_var, b_var, epsilon: float = 1e-12):
    """RSV per unit for one fixed pair given the two variation sample sets.

    ``a_var`` are the draws of ``a`` used with ``fixed_b`` held; ``b_var`` the
    draws of ``b`` used with ``fixed_a`` held.
    """
    sv_a = source_variance(probe, fixed_b, a_var)
    sv_b = source_variance(lambda b, a: probe(a, b), fixed_a, b_var)
    return rsv_pair(sv_a, sv_b, epsilon)


def rsv_distribution(probe: Probe, a_pool, b_pool, config: RSVConfig = RSVConfig()) -> RSVDistribution:
    """RSV of every unit at K fixed ``(a_j, b_j)`` pairs.

    Pairs share row indices across the two pools (the j-th fixed ``a`` with
    the j-th fixed ``b``) and each pair's M variation rows are drawn without
    replacement from the non-fixed rows, with the same indices for both
    sources.  Swapping probe arguments and pools therefore negates every
    value exactly.
    """
    a_pool, b_pool = _as_rows(a_pool), _as_rows(b_pool)
    n = min(a_pool.shape[0], b_pool.shape[0])
    fixed, variation = _draw_indices(n, config)
    cols, deads = [], []
    for j in range(config.fixed_sample_count):
        idx = variation[j]
        v, d = rsv_values(
            probe, a_pool[fixed[j]], b_pool[fixed[j]], a_pool[idx], b_pool[idx], config.dead_unit_epsilon
        )
        cols.append(np.atleast_1d(v))
        deads.append(np.atleast_1d(d))
    return make_distribution(np.stack(cols, axis=1), np.stack(deads, axis=1))


@dataclass(frozen=True)
class Polarization:
    mean_abs: float
    frac_polarized: float
    mean: float


def polarization_index(dist: RSVDistribution, threshold: float = POLARIZED_ABS) -> Polarization:
    """Mean ``|RSV|`` and fraction of ``|RSV| > threshold`` over live values."""
    live = dist.live_values
    if live.size == 0:
        raise ValueError("every unit is dead; polarization is undefined")
    mag = np.abs(live)
    return Polarization(float(mag.mean()), float(np.mean(mag > threshold)), float(live.mean()))


def generalized_rsv(sv_vector) -> np.ndarray:
    """Softmax over a unit's n source variances (n-source normalisation).

    Unlike the two-source ratio this is not scale invariant and does not
    reduce to it at n = 2.
    """
    sv = np.asarray(sv_vector, dtype=float)
    if sv.ndim != 1 or sv.size < 2:
        raise ValueError("need a vector of at least 2 source variances")
    if not np.all(np.isfinite(sv)):
        raise ValueError("source variances must be finite")
    return softmax(sv)


# Linear-Gaussian generative model -----------------------------------------------------


@dataclass(frozen=True)
class SyntheticRSVModel:
    """Units ``z_i = w_i x_a + (1 - w_i) x_b`` with ``x_a = x_0 + n_a``, ``x_b = x_0 + n_b``.

    A ``mixing`` fraction of units use the reversed combination
    ``w_i x_b + (1 - w_i) x_a``.  ``weights`` overrides the Beta draws.
    """

    alpha: float = 1.0
    beta: float = 20.0
    sigma0: float = 1.0
    sigma_a: float = 1.0
    sigma_b: float = 1.0
    unit_count: int = 2000
    mixing: float = 0.5
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("Beta shape parameters must be positive")
        if min(self.sigma0, self.sigma_a, self.sigma_b) <= 0:
            raise ValueError("standard deviations must be positive")
        if not 0.0 <= self.mixing <= 1.0:
            raise ValueError("mixing must be in [0, 1]")
        if self.weights is not None and len(self.weights) != self.unit_count:
            raise ValueError("weights length must equal unit_count")

    def unit_weights(self, seed: int) -> tuple[np.ndarray, np.ndarray]:
        """Effective weight on ``x_a`` per unit and the reversed-unit mask."""
        rng = np.random.default_rng([seed, 7])
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
        else:
            w = rng.beta(self.alpha, self.beta, size=self.unit_count)
        n_rev = int(round(self.mixing * self.unit_count))
        reversed_ = np.zeros(self.unit_count, dtype=bool)
        reversed_[self.unit_count - n_rev:] = True
        return np.where(reversed_, 1.0 - w, w), reversed_

    def probe(self, w_on_a: np.ndarray) -> Probe:
        w = np.asarray(w_on_a, dtype=float)

        def f(a, b):
            return a[:, :1] * w + b[:, :1] * (1.0 - w)

        return f

    def sample_pair(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        x0 = self.sigma0 * rng.standard_normal(n)
        return x0 + self.sigma_a * rng.standard_normal(n), x0 + self.sigma_b * rng.standard_normal(n)

    def sample_a_given_b(self, rng: np.random.Generator, b: float, n: int) -> np.ndarray:
        """Draws from ``p(x_a | x_b = b)`` via the posterior of ``x_0``."""
        s0, sb = self.sigma0 ** 2, self.sigma_b ** 2
        x0 = s0 * b / (s0 + sb) + np.sqrt(s0 * sb / (s0 + sb)) * rng.standard_normal(n)
        return x0 + self.sigma_a * rng.standard_normal(n)

    def sample_b_given_a(self, rng: np.random.Generator, a: float, n: int) -> np.ndarray:
        s0, sa = self.sigma0 ** 2, self.sigma_a ** 2
        x0 = s0 * a / (s0 + sa) + np.sqrt(s0 * sa / (s0 + sa)) * rng.standard_normal(n)
        return x0 + self.sigma_b * rng.standard_normal(n)


def synthetic_closed_form_sv(w: float, sigma0: float = 1.0, sigma_a: float = 1.0, sigma_b: float = 1.0):
    """Exact conditional variances of ``z = x_0 + w n_a + (1 - w) n_b``.

    Returns ``(sv_given_a, sv_given_b)`` = ``Var(z | x_a)``, ``Var(z | x_b)``.
    ``sv_given_b`` is the variance left when ``b`` is held, i.e. the
    source variance due to ``a``.
    """
    if min(sigma0, sigma_a, sigma_b) <= 0:
        raise ValueError("standard deviations must be positive")
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"w must lie in [0, 1], got {w}")
    s0, sa, sb = sigma0 ** 2, sigma_a ** 2, sigma_b ** 2
    var_z = s0 + w * w * sa + (1 - w) ** 2 * sb
    cov_a = s0 + w * sa
    cov_b = s0 + (1 - w) * sb
    # clamp rounding noise around exact zeros (w in {0, 1})
    sv_given_a = max(var_z - cov_a ** 2 / (s0 + sa), 0.0)
    sv_given_b = max(var_z - cov_b ** 2 / (s0 + sb), 0.0)
    return sv_given_a, sv_given_b


def synthetic_closed_form_rsv(w: float, sigma0: float = 1.0, sigma_a: float = 1.0, sigma_b: float = 1.0) -> float:
    sv_given_a, sv_given_b = synthetic_closed_form_sv(w, sigma0, sigma_a, sigma_b)
    return rsv_pair(sv_given_b, sv_given_a)[0]


def sample_synthetic_model(model: SyntheticRSVModel, config: RSVConfig = RSVConfig()) -> RSVDistribution:
    """Monte Carlo RSV of the generative model, sampling each source from
    its conditional distribution given the held source."""
    w, _ = model.unit_weights(config.seed)
    probe = model.probe(w)
    K, M = config.fixed_sample_count, config.variation_sample_count
    fixed_a, fixed_b = model.sample_pair(np.random.default_rng([config.seed, 0]), K)
    cols, deads = [], []
    for j in range(K):
        rng = np.random.default_rng([config.seed, 1, j])
        a_var = model.sample_a_given_b(rng, fixed_b[j], M)
        b_var = model.sample_b_given_a(rng, fixed_a[j], M)
        v, d = rsv_values(probe, fixed_a[j], fixed_b[j], a_var, b_var, config.dead_unit_epsilon)
        cols.append(np.atleast_1d(v))
        deads.append(np.atleast_1d(d))
    return make_distribution(np.stack(cols, axis=1), np.stack(deads, axis=1))


def _shifted_variance(acts: np.ndarray) -> np.ndarray:
    # acts: (..., M, units); same shift as source_variance
    return (acts - acts[..., :1, :]).var(axis=-2, ddof=1)


def collect_activations(probe: Probe, a_pool, b_pool, config: RSVConfig = RSVConfig()):
    """Activations behind :func:`rsv_distribution`, each of shape ``(K, M, units)``.

    The first array varies ``a`` with the fixed ``b`` held, the second varies
    ``b`` with the fixed ``a`` held.
    """
    a_pool, b_pool = _as_rows(a_pool), _as_rows(b_pool)
    n = min(a_pool.shape[0], b_pool.shape[0])
    fixed, variation = _draw_indices(n, config)
    vary_a, vary_b = [], []
    M = config.variation_sample_count
    for j in range(config.fixed_sample_count):
        idx = variation[j]
        b_fixed = np.broadcast_to(b_pool[fixed[j]], (M,) + b_pool.shape[1:])
        a_fixed = np.broadcast_to(a_pool[fixed[j]], (M,) + a_pool.shape[1:])
        vary_a.append(np.asarray(probe(a_pool[idx], b_fixed), dtype=float).reshape(M, -1))
        vary_b.append(np.asarray(probe(a_fixed, b_pool[idx]), dtype=float).reshape(M, -1))
    return np.stack(vary_a), np.stack(vary_b)


def rsv_from_activations(vary_a, vary_b, epsilon: float = 1e-12) -> RSVDistribution:
    """RSV from pre-computed activations of shape ``(K, M, units)``."""
    vary_a = np.asarray(vary_a, dtype=float)
    vary_b = np.asarray(vary_b, dtype=float)
    if vary_a.shape != vary_b.shape or vary_a.ndim != 3:
        raise ValueError(f"activation arrays must share a (K, M, units) shape, got {vary_a.shape} and {vary_b.shape}")
    if vary_a.shape[1] < 2:
        raise ValueError("need at least 2 variation samples")
    sv_a = _shifted_variance(vary_a)  # (K, units)
    sv_b = _shifted_variance(vary_b)
    values, dead = rsv_pair(sv_a.T, sv_b.T, epsilon)
    return make_distribution(values, dead)


def write_activation_dump(path, vary_a, vary_b) -> None:
    """CSV dump: a ``unit_count,K,M`` header line and its values, then one
    row per ``(role, fixed, sample)`` with role ``a`` (A varies) or ``b``.
    """
    vary_a = np.asarray(vary_a, dtype=float)
    vary_b = np.asarray(vary_b, dtype=float)
    K, M, N = vary_a.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["unit_count", "K", "M"])
        w.writerow([N, K, M])
        w.writerow(["role", "fixed", "sample"] + [f"u{i}" for i in range(N)])
        for role, acts in (("a", vary_a), ("b", vary_b)):
            for k in range(K):
                for m in range(M):
                    w.writerow([role, k, m] + [repr(float(x)) for x in acts[k, m]])


def read_activation_dump(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        head = next(rows)
        if [h.strip() for h in head] != ["unit_count", "K", "M"]:
            raise ValueError(f"{path}: first line must be 'unit_count,K,M'")
        N, K, M = (int(x) for x in next(rows))
        next(rows)
        out = {"a": np.full((K, M, N), np.nan), "b": np.full((K, M, N), np.nan)}
        for line in rows:
            if not line:
                continue
            role, k, m = line[0], int(line[1]), int(line[2])
            if role not in out or len(line) != 3 + N:
                raise ValueError(f"{path}: malformed row for role {role!r}")
            out[role][k, m] = [float(x) for x in line[3:]]
    if np.isnan(out["a"]).any() or np.isnan(out["b"]).any():
        raise ValueError(f"{path}: dump is missing rows")
    return out["a"], out["b"]
