"""Two-pathway network with additive fusion and hand-written backprop.

::

    h_a = relu(W_ea a + b_ea)        h_b = relu(W_eb b + b_eb)
    x_0 = h_a + h_b
    x_l = act(W_l x_{l-1} + b_l)     l = 1..n_blocks,  z = x_L
    logits = W_h z + b_h             (fused head; per-view heads alike)
    recon_b = W_da h_a + b_da        recon_a = W_db h_b + b_db

All arrays are float64; parameters live in a flat ``dict`` so optimisers and
gradient checks can iterate over them uniformly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax

NORMAL = "normal"
DISSOCIATION = "dissociation"


@dataclass(frozen=True)
class NetSpec:
    encoder_width: int = 64
    trunk_width: int = 64
    n_blocks: int = 2
    trunk_activation: str = "relu"
    init_gain: float = 0.5  # scale on He initialisation

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.encoder_width < 1 or self.trunk_width < 1:
            raise ValueError("layer widths must be positive")
        if self.trunk_activation not in ("relu", "linear"):
            raise ValueError("trunk_activation must be 'relu' or 'linear'")


class PathwayNet:
    def __init__(self, params: dict[str, np.ndarray], spec: NetSpec):
        self.params = params
        self.spec = spec

    @classmethod
    def init(cls, view_dim: int, class_count: int, spec: NetSpec = NetSpec(), seed: int = 0) -> "PathwayNet":
        rng = np.random.default_rng([seed, 101])
        He, Ht, g = spec.encoder_width, spec.trunk_width, spec.init_gain

        def layer(fan_out, fan_in, relu=True):
            std = g * np.sqrt((2.0 if relu else 1.0) / fan_in)
            return std * rng.standard_normal((fan_out, fan_in)), np.zeros(fan_out)

        p: dict[str, np.ndarray] = {}
        p["enc_a.W"], p["enc_a.b"] = layer(He, view_dim)
        p["enc_b.W"], p["enc_b.b"] = layer(He, view_dim)
        fan_in = He
        for l in range(spec.n_blocks):
            p[f"trunk{l}.W"], p[f"trunk{l}.b"] = layer(Ht, fan_in, spec.trunk_activation == "relu")
            fan_in = Ht
        for h in ("head", "head_a", "head_b"):
            p[f"{h}.W"], p[f"{h}.b"] = layer(class_count, Ht, relu=False)
        p["dec_a.W"], p["dec_a.b"] = layer(view_dim, He, relu=False)
        p["dec_b.W"], p["dec_b.b"] = layer(view_dim, He, relu=False)
        return cls(p, spec)

    def copy(self) -> "PathwayNet":
        return PathwayNet({k: v.copy() for k, v in self.params.items()}, self.spec)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    @property
    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    @property
    def class_count(self) -> int:
        return self.params["head.b"].shape[0]

    def swapped(self) -> "PathwayNet":
        """Same network with the two pathways' roles exchanged."""
        p = dict(self.params)
        swap = {"enc_a": "enc_b", "enc_b": "enc_a", "head_a": "head_b", "head_b": "head_a",
                "dec_a": "dec_b", "dec_b": "dec_a"}
        out = {}
        for k, v in p.items():
            stem, leaf = k.split(".")
            out[f"{swap.get(stem, stem)}.{leaf}"] = v.copy()
        return PathwayNet(out, self.spec)


def forward(net: PathwayNet, view_a: np.ndarray, view_b: np.ndarray) -> dict[str, np.ndarray]:
    """Activations for a batch; ``z`` is the last trunk activation."""
    p = net.params
    view_a = np.atleast_2d(view_a)
    view_b = np.atleast_2d(view_b)
    pre_a = view_a @ p["enc_a.W"].T + p["enc_a.b"]
    pre_b = view_b @ p["enc_b.W"].T + p["enc_b.b"]
    h_a = np.maximum(pre_a, 0.0)
    h_b = np.maximum(pre_b, 0.0)
    xs = [h_a + h_b]
    pres = []
    relu = net.spec.trunk_activation == "relu"
    for l in range(net.spec.n_blocks):
        pre = xs[-1] @ p[f"trunk{l}.W"].T + p[f"trunk{l}.b"]
        pres.append(pre)
        xs.append(np.maximum(pre, 0.0) if relu else pre)
    z = xs[-1]
    return {
        "view_a": view_a,
        "view_b": view_b,
        "pre_a": pre_a,
        "pre_b": pre_b,
        "h_a": h_a,
        "h_b": h_b,
        "xs": xs,
        "pres": pres,
        "z": z,
        "logits": z @ p["head.W"].T + p["head.b"],
        "logits_a": z @ p["head_a.W"].T + p["head_a.b"],
        "logits_b": z @ p["head_b.W"].T + p["head_b.b"],
    }


def representation(net: PathwayNet, view_a: np.ndarray, view_b: np.ndarray) -> np.ndarray:
    return forward(net, view_a, view_b)["z"]


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy (nats) and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    logp = log_softmax(logits, axis=1)
    idx = np.arange(n)
    loss = -float(logp[idx, labels].mean())
    g = np.exp(logp)
    g[idx, labels] -= 1.0
    return loss, g / n


@dataclass
class Batch:
    view_a: np.ndarray
    view_b: np.ndarray
    labels: np.ndarray
    label_side: np.ndarray | None = None  # 0 = label from A's donor, 1 = from B's donor


def loss_and_gradients(
    net: PathwayNet,
    batch: Batch,
    mode: str = NORMAL,
    recon_lambda: float = 0.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Training loss and exact gradients for every parameter.

    ``mode`` is ``normal`` (fused head) or ``dissociation`` (per-view head
    chosen by each sample's label side).  A positive ``recon_lambda`` adds
    ``recon_lambda * (MSE(recon_b, view_b) + MSE(recon_a, view_a))``.
    """
    if mode not in (NORMAL, DISSOCIATION):
        raise ValueError(f"unknown mode {mode!r}")
    p = net.params
    f = forward(net, batch.view_a, batch.view_b)
    z = f["z"]
    n = z.shape[0]
    grads = {}
    g_z = np.zeros_like(z)
    if mode == NORMAL:
        loss, g = cross_entropy(f["logits"], batch.labels)
        grads["head.W"] = g.T @ z
        grads["head.b"] = g.sum(axis=0)
        g_z += g @ p["head.W"]
        for h in ("head_a", "head_b"):
            grads[f"{h}.W"] = np.zeros_like(p[f"{h}.W"])
            grads[f"{h}.b"] = np.zeros_like(p[f"{h}.b"])
    else:
        if batch.label_side is None:
            raise ValueError("dissociation mode needs per-sample label-side markers")
        side = np.asarray(batch.label_side)
        loss = 0.0
        grads["head.W"] = np.zeros_like(p["head.W"])
        grads["head.b"] = np.zeros_like(p["head.b"])
        for s, h, key in ((0, "head_a", "logits_a"), (1, "head_b", "logits_b")):
            sel = side == s
            k = int(sel.sum())
            if k == 0:
                grads[f"{h}.W"] = np.zeros_like(p[f"{h}.W"])
                grads[f"{h}.b"] = np.zeros_like(p[f"{h}.b"])
                continue
            part, g = cross_entropy(f[key][sel], batch.labels[sel])
            w = k / n
            loss += w * part
            g = g * w
            grads[f"{h}.W"] = g.T @ z[sel]
            grads[f"{h}.b"] = g.sum(axis=0)
            g_z[sel] += g @ p[f"{h}.W"]

    g_ha = np.zeros_like(f["h_a"])
    g_hb = np.zeros_like(f["h_b"])
    if recon_lambda > 0:
        for dec, h, target, g_h in (("dec_a", "h_a", f["view_b"], g_ha), ("dec_b", "h_b", f["view_a"], g_hb)):
            pred = f[h] @ p[f"{dec}.W"].T + p[f"{dec}.b"]
            err = pred - target
            loss += recon_lambda * float(np.mean(err * err))
            g = recon_lambda * 2.0 * err / err.size
            grads[f"{dec}.W"] = g.T @ f[h]
            grads[f"{dec}.b"] = g.sum(axis=0)
            g_h += g @ p[f"{dec}.W"]
    else:
        for dec in ("dec_a", "dec_b"):
            grads[f"{dec}.W"] = np.zeros_like(p[f"{dec}.W"])
            grads[f"{dec}.b"] = np.zeros_like(p[f"{dec}.b"])

    relu = net.spec.trunk_activation == "relu"
    g_x = g_z
    for l in range(net.spec.n_blocks - 1, -1, -1):
        g_pre = g_x * (f["pres"][l] > 0) if relu else g_x
        grads[f"trunk{l}.W"] = g_pre.T @ f["xs"][l]
        grads[f"trunk{l}.b"] = g_pre.sum(axis=0)
        g_x = g_pre @ p[f"trunk{l}.W"]
    g_ha += g_x
    g_hb += g_x
    for enc, pre, g_h, x in (("enc_a", "pre_a", g_ha, f["view_a"]), ("enc_b", "pre_b", g_hb, f["view_b"])):
        g_pre = g_h * (f[pre] > 0)
        grads[f"{enc}.W"] = g_pre.T @ x
        grads[f"{enc}.b"] = g_pre.sum(axis=0)
    return loss, grads


def predict(net: PathwayNet, view_a: np.ndarray, view_b: np.ndarray) -> np.ndarray:
    return forward(net, view_a, view_b)["logits"]


def evaluate(net: PathwayNet, view_a: np.ndarray, view_b: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Fused-head cross-entropy (nats) and accuracy."""
    logits = predict(net, view_a, view_b)
    loss, _ = cross_entropy(logits, labels)
    acc = float(np.mean(np.argmax(logits, axis=1) == labels))
    return loss, acc
