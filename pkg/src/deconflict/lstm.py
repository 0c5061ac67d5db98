"""Recurrent sequence labeler mapping difference trajectories to side decisions.

A stack of LSTM layers (any depth; desk-scale default is one layer of 32
units) processes the per-step position difference z_k between the two
vehicles, followed by a time-distributed affine layer and a softmax over
the six separation sides.  Training minimizes per-step categorical
cross-entropy on side labels produced by the exact solver, with Adam.

Everything is plain numpy: the forward pass, full backpropagation through
time, and the optimizer are written out explicitly so the gradients can be
verified against finite differences parameter-by-parameter (see
``gradient_check``).  Inputs are scaled by 1/delta before entering the net;
the scale is stored with the weights so inference is self-contained.

Gate layout inside each layer's fused parameter block: [input, forget,
cell, output], each of width H.  Initialization is uniform in
(-1/sqrt(H), 1/sqrt(H)) with zero biases except the forget gate at +1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .milp import DecisionSequence

NUM_SIDES = 6
INPUT_DIM = 3


class DivergedLoss(RuntimeError):
    """Training produced a non-finite loss; aborted."""


@dataclass
class TrainConfig:
    epochs: int = 80
    batch_size: int = 128
    learning_rate: float = 1e-3
    hidden_size: int = 32
    layer_count: int = 1
    seed: int = 0
    val_fraction: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self):
        if min(self.epochs, self.batch_size, self.hidden_size, self.layer_count) < 1:
            raise ValueError("epochs, batch_size, hidden_size, layer_count must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


# The configuration used at full experiment scale; kept as a preset, not
# the default, because it only pays off with >10k training sequences.
FULL_SCALE = TrainConfig(epochs=2000, batch_size=2000, hidden_size=128, layer_count=3)


@dataclass
class NetWeights:
    """All parameters plus the input scale; a plain container."""

    layers: List[Dict[str, np.ndarray]]  # per layer: W (in,4H), U (H,4H), b (4H,)
    out_w: np.ndarray                    # (H, 6)
    out_b: np.ndarray                    # (6,)
    input_scale: float                   # applied to raw z before the net

    @property
    def hidden_size(self) -> int:
        return self.layers[0]["U"].shape[0]

    @property
    def layer_count(self) -> int:
        return len(self.layers)


def init_weights(config: TrainConfig, input_scale: float,
                 rng: Optional[np.random.Generator] = None) -> NetWeights:
    rng = rng or np.random.default_rng(config.seed)
    h = config.hidden_size
    bound = 1.0 / np.sqrt(h)
    layers = []
    in_dim = INPUT_DIM
    for _ in range(config.layer_count):
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0  # forget gate bias
        layers.append({
            "W": rng.uniform(-bound, bound, size=(in_dim, 4 * h)),
            "U": rng.uniform(-bound, bound, size=(h, 4 * h)),
            "b": b,
        })
        in_dim = h
    return NetWeights(
        layers=layers,
        out_w=rng.uniform(-bound, bound, size=(h, NUM_SIDES)),
        out_b=np.zeros(NUM_SIDES),
        input_scale=input_scale,
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def forward(weights: NetWeights, z: np.ndarray, cache: Optional[dict] = None) -> np.ndarray:
    """Class probabilities (B, T, 6) for raw difference sequences (B, T, 3)."""
    x = np.asarray(z, dtype=float) * weights.input_scale
    if x.ndim == 2:
        x = x[None]
    b, t, _ = x.shape
    if cache is not None:
        cache["x"] = x
        cache["layers"] = []
    for layer in weights.layers:
        h_dim = layer["U"].shape[0]
        h_prev = np.zeros((b, h_dim))
        c_prev = np.zeros((b, h_dim))
        hs = np.empty((t, b, h_dim))
        if cache is not None:
            rec = {"i": np.empty((t, b, h_dim)), "f": np.empty((t, b, h_dim)),
                   "g": np.empty((t, b, h_dim)), "o": np.empty((t, b, h_dim)),
                   "c": np.empty((t, b, h_dim)), "x_in": x}
        pre_w = x @ layer["W"] + layer["b"]  # (B, T, 4H) batched input part
        for step in range(t):
            a = pre_w[:, step] + h_prev @ layer["U"]
            i = _sigmoid(a[:, :h_dim])
            f = _sigmoid(a[:, h_dim:2 * h_dim])
            g = np.tanh(a[:, 2 * h_dim:3 * h_dim])
            o = _sigmoid(a[:, 3 * h_dim:])
            c_prev = f * c_prev + i * g
            h_prev = o * np.tanh(c_prev)
            hs[step] = h_prev
            if cache is not None:
                rec["i"][step] = i; rec["f"][step] = f
                rec["g"][step] = g; rec["o"][step] = o
                rec["c"][step] = c_prev
        x = hs.transpose(1, 0, 2)
        if cache is not None:
            rec["h"] = hs
            cache["layers"].append(rec)
    logits = x @ weights.out_w + weights.out_b
    logits -= logits.max(axis=-1, keepdims=True)
    exp = np.exp(logits)
    probs = exp / exp.sum(axis=-1, keepdims=True)
    if cache is not None:
        cache["top"] = x
        cache["probs"] = probs
    return probs


def loss_and_gradients(weights: NetWeights, z: np.ndarray,
                       labels: np.ndarray) -> Tuple[float, dict]:
    """Mean per-step cross-entropy and gradients for every parameter.

    labels hold side indices 1..6, shaped (B, T).
    """
    cache: dict = {}
    probs = forward(weights, z, cache)
    b, t, _ = probs.shape
    lab = np.asarray(labels, dtype=int) - 1
    if lab.ndim == 1:
        lab = lab[None]
    picked = probs[np.arange(b)[:, None], np.arange(t)[None, :], lab]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))

    dlogits = probs.copy()
    dlogits[np.arange(b)[:, None], np.arange(t)[None, :], lab] -= 1.0
    dlogits /= b * t

    grads = {"out_w": cache["top"].reshape(-1, weights.hidden_size).T
             @ dlogits.reshape(-1, NUM_SIDES),
             "out_b": dlogits.sum(axis=(0, 1)),
             "layers": []}
    dh_top = (dlogits @ weights.out_w.T).transpose(1, 0, 2)  # (T, B, H)

    dx_next = dh_top
    for li in range(len(weights.layers) - 1, -1, -1):
        layer = weights.layers[li]
        rec = cache["layers"][li]
        h_dim = layer["U"].shape[0]
        x_in = rec["x_in"]  # (B, T, in_dim)
        in_dim = x_in.shape[2]
        d_w = np.zeros_like(layer["W"])
        d_u = np.zeros_like(layer["U"])
        d_b = np.zeros_like(layer["b"])
        dx_in = np.empty((t, b, in_dim))
        dh_rec = np.zeros((b, h_dim))
        dc = np.zeros((b, h_dim))
        for step in range(t - 1, -1, -1):
            dh = dx_next[step] + dh_rec
            i, f, g, o, c = (rec[k][step] for k in ("i", "f", "g", "o", "c"))
            tanh_c = np.tanh(c)
            do = dh * tanh_c
            dc = dc + dh * o * (1.0 - tanh_c ** 2)
            c_prev = rec["c"][step - 1] if step > 0 else np.zeros_like(c)
            df = dc * c_prev
            di = dc * g
            dg = dc * i
            da = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g ** 2),
                do * o * (1.0 - o),
            ], axis=1)
            h_prev = rec["h"][step - 1] if step > 0 else np.zeros_like(c)
            d_w += x_in[:, step].T @ da
            d_u += h_prev.T @ da
            d_b += da.sum(axis=0)
            dx_in[step] = da @ layer["W"].T
            dh_rec = da @ layer["U"].T
            dc = dc * f
        grads["layers"].insert(0, {"W": d_w, "U": d_u, "b": d_b})
        dx_next = dx_in
    return loss, grads


def _param_items(weights: NetWeights):
    for li, layer in enumerate(weights.layers):
        for key in ("W", "U", "b"):
            yield (f"layer{li}.{key}", layer[key])
    yield ("out_w", weights.out_w)
    yield ("out_b", weights.out_b)


def _grad_items(grads: dict):
    for li, layer in enumerate(grads["layers"]):
        for key in ("W", "U", "b"):
            yield (f"layer{li}.{key}", layer[key])
    yield ("out_w", grads["out_w"])
    yield ("out_b", grads["out_b"])


def gradient_check(weights: NetWeights, z: np.ndarray, labels: np.ndarray,
                   step: float = 1e-4) -> float:
    """Max relative error of analytic gradients vs central finite differences."""
    _, grads = loss_and_gradients(weights, z, labels)
    analytic = dict(_grad_items(grads))
    worst = 0.0
    for name, param in _param_items(weights):
        flat = param.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            hi, _ = loss_and_gradients(weights, z, labels)
            flat[idx] = orig - step
            lo, _ = loss_and_gradients(weights, z, labels)
            flat[idx] = orig
            numeric = (hi - lo) / (2 * step)
            a = analytic[name].ravel()[idx]
            denom = max(abs(numeric), abs(a), 1e-8)
            worst = max(worst, abs(numeric - a) / denom)
    return worst


@dataclass
class TrainReport:
    epoch_losses: List[float] = field(default_factory=list)
    train_accuracy: float = 0.0
    val_accuracy: float = 0.0
    config: Optional[TrainConfig] = None


def per_step_accuracy(weights: NetWeights, z: np.ndarray, labels: np.ndarray) -> float:
    probs = forward(weights, z)
    pred = np.argmax(probs, axis=-1) + 1
    lab = np.asarray(labels, dtype=int)
    if lab.ndim == 1:
        lab = lab[None]
    return float(np.mean(pred == lab))


def train(z: np.ndarray, labels: np.ndarray, config: TrainConfig,
          input_scale: float,
          weights: Optional[NetWeights] = None) -> Tuple[NetWeights, TrainReport]:
    """Fit the net on (B, T, 3) difference sequences with side labels (B, T).

    Passing ``weights`` resumes from them instead of a fresh initialization.
    """
    config.validate()
    z = np.asarray(z, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if z.ndim != 3 or z.shape[0] == 0:
        raise ValueError("need a non-empty (B, T, 3) training array")
    rng = np.random.default_rng(config.seed)
    if weights is None:
        weights = init_weights(config, input_scale, rng)

    n = z.shape[0]
    perm = rng.permutation(n)
    n_val = int(round(n * config.val_fraction))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if train_idx.size == 0:
        train_idx, val_idx = perm, perm[:0]

    moments = {name: (np.zeros_like(p), np.zeros_like(p))
               for name, p in _param_items(weights)}
    t_adam = 0
    report = TrainReport(config=config)
    for _ in range(config.epochs):
        order = rng.permutation(train_idx.size)
        epoch_loss = 0.0
        batches = 0
        for lo in range(0, order.size, config.batch_size):
            sel = train_idx[order[lo: lo + config.batch_size]]
            loss, grads = loss_and_gradients(weights, z[sel], labels[sel])
            if not np.isfinite(loss):
                raise DivergedLoss(
                    f"non-finite loss at epoch {len(report.epoch_losses)} "
                    f"(seed {config.seed}, lr {config.learning_rate})")
            epoch_loss += loss
            batches += 1
            t_adam += 1
            grad_map = dict(_grad_items(grads))
            for name, param in _param_items(weights):
                m, v = moments[name]
                gr = grad_map[name]
                m *= config.adam_beta1
                m += (1 - config.adam_beta1) * gr
                v *= config.adam_beta2
                v += (1 - config.adam_beta2) * gr * gr
                m_hat = m / (1 - config.adam_beta1 ** t_adam)
                v_hat = v / (1 - config.adam_beta2 ** t_adam)
                param -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        report.epoch_losses.append(epoch_loss / max(batches, 1))
    report.train_accuracy = per_step_accuracy(weights, z[train_idx], labels[train_idx])
    report.val_accuracy = per_step_accuracy(weights, z[val_idx], labels[val_idx]) \
        if val_idx.size else float("nan")
    return weights, report


def infer(weights: NetWeights, z_sequence: np.ndarray) -> DecisionSequence:
    """Deterministic per-step argmax decisions for one raw difference sequence."""
    z = np.asarray(z_sequence, dtype=float)
    if z.ndim != 2 or z.shape[1] != INPUT_DIM:
        raise ValueError("expected a (K, 3) difference sequence")
    probs = forward(weights, z[None])[0]
    return DecisionSequence(np.argmax(probs, axis=1) + 1)


# --- weights container --------------------------------------------------------

_FORMAT_VERSION = 1


def save_weights(path, weights: NetWeights) -> None:
    payload = {
        "format_version": _FORMAT_VERSION,
        "hidden_size": weights.hidden_size,
        "layer_count": weights.layer_count,
        "input_scale": weights.input_scale,
        "layers": [{k: layer[k].tolist() for k in ("W", "U", "b")}
                   for layer in weights.layers],
        "out_w": weights.out_w.tolist(),
        "out_b": weights.out_b.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_weights(path) -> NetWeights:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != _FORMAT_VERSION:
        raise ValueError(f"unsupported weights format {payload.get('format_version')!r}")
    layers = [{k: np.asarray(layer[k], dtype=float) for k in ("W", "U", "b")}
              for layer in payload["layers"]]
    return NetWeights(
        layers=layers,
        out_w=np.asarray(payload["out_w"], dtype=float),
        out_b=np.asarray(payload["out_b"], dtype=float),
        input_scale=float(payload["input_scale"]),
    )
