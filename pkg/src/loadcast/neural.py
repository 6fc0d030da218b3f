"""From-scratch quantile LSTM: stacked gated cells, inter-layer relu and
dropout, a three-quantile dense head, pinball objective, Adam updates,
backpropagation through time and patience-based early stopping.

Gate internals are the standard sigmoid/tanh equations; the configured
output activation (relu by default) applies to a block's hidden states as
they are handed to the next stage, not inside the recurrence. All math is
float64 so analytic gradients can be checked against central finite
differences tightly.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .features import WindowTensor
from .metrics import ForecastDistribution, QUANTILE_LEVELS, pinball_grad, pinball_loss
from .series import ScalerParams, unscale_array

logger = logging.getLogger(__name__)

GATES = ("i", "f", "o", "g")


class NeuralModelError(ValueError):
    """Raised on shape mismatches and invalid training configs."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss."""


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class LstmLayerParams:
    """One layer's weights: per gate an input matrix W (n_in x n_hidden),
    a recurrent matrix U (n_hidden x n_hidden) and a bias vector."""

    W: dict[str, np.ndarray]
    U: dict[str, np.ndarray]
    b: dict[str, np.ndarray]

    @property
    def n_in(self) -> int:
        return self.W["i"].shape[0]

    @property
    def n_hidden(self) -> int:
        return self.W["i"].shape[1]


@dataclass
class QuantileLstmModel:
    layer1: LstmLayerParams
    layer2: LstmLayerParams
    head_W: np.ndarray  # (hidden2, n_quantiles)
    head_b: np.ndarray
    dropout_rate: float = 0.2
    quantiles: tuple[float, ...] = QUANTILE_LEVELS
    output_activation: str = "relu"  # "relu" or "linear", applied between blocks
    seed: int = 0

    def parameters(self) -> dict[str, np.ndarray]:
        """Flat name -> array view of every trainable tensor."""
        out: dict[str, np.ndarray] = {}
        for tag, layer in (("l1", self.layer1), ("l2", self.layer2)):
            for gate in GATES:
                out[f"{tag}.W_{gate}"] = layer.W[gate]
                out[f"{tag}.U_{gate}"] = layer.U[gate]
                out[f"{tag}.b_{gate}"] = layer.b[gate]
        out["head.W"] = self.head_W
        out["head.b"] = self.head_b
        return out

    @property
    def n_features(self) -> int:
        return self.layer1.n_in


def _init_layer(n_in: int, n_hidden: int, rng: np.random.Generator) -> LstmLayerParams:
    scale = 1.0 / np.sqrt(n_hidden)
    W = {g: rng.uniform(-scale, scale, size=(n_in, n_hidden)) for g in GATES}
    U = {g: rng.uniform(-scale, scale, size=(n_hidden, n_hidden)) for g in GATES}
    b = {g: np.zeros(n_hidden) for g in GATES}
    b["f"] += 1.0  # open forget gates at the start
    return LstmLayerParams(W, U, b)


def init_model(
    n_features: int,
    hidden: tuple[int, int] = (100, 50),
    dropout_rate: float = 0.2,
    quantiles: tuple[float, ...] = QUANTILE_LEVELS,
    output_activation: str = "relu",
    seed: int = 0,
) -> QuantileLstmModel:
    """Fresh model, weights uniform in +-1/sqrt(n_hidden), forget bias +1."""
    if not all(0 < a < b < 1 for a, b in zip(quantiles, quantiles[1:])):
        raise NeuralModelError("quantiles must be strictly increasing in (0, 1)")
    if output_activation not in ("relu", "linear"):
        raise NeuralModelError(f"unknown output activation {output_activation!r}")
    rng = np.random.default_rng(seed)
    layer1 = _init_layer(n_features, hidden[0], rng)
    layer2 = _init_layer(hidden[0], hidden[1], rng)
    scale = 1.0 / np.sqrt(hidden[1])
    head_W = rng.uniform(-scale, scale, size=(hidden[1], len(quantiles)))
    head_b = np.zeros(len(quantiles))
    return QuantileLstmModel(
        layer1, layer2, head_W, head_b, dropout_rate, tuple(quantiles),
        output_activation, seed,
    )


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------


def lstm_cell_forward(
    x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray, params: LstmLayerParams
) -> tuple[np.ndarray, np.ndarray, dict]:
    """One step of the gated cell on a (batch, n_in) input.

    i = sigmoid(x W_i + h U_i + b_i), f and o likewise, g = tanh(...);
    c = f*c_prev + i*g; h = o*tanh(c).
    """
    gates = {
        gate: x @ params.W[gate] + h_prev @ params.U[gate] + params.b[gate]
        for gate in GATES
    }
    i = _sigmoid(gates["i"])
    f = _sigmoid(gates["f"])
    o = _sigmoid(gates["o"])
    g = np.tanh(gates["g"])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    cache = {"x": x, "h_prev": h_prev, "c_prev": c_prev, "i": i, "f": f, "o": o,
             "g": g, "c": c, "tanh_c": tc}
    return h, c, cache


def _layer_forward(layer: LstmLayerParams, X: np.ndarray) -> tuple[np.ndarray, list[dict]]:
    """Run a layer over a (batch, T, n_in) sequence, returning all hidden states."""
    batch, T, _ = X.shape
    h = np.zeros((batch, layer.n_hidden))
    c = np.zeros((batch, layer.n_hidden))
    H = np.empty((batch, T, layer.n_hidden))
    caches = []
    for t in range(T):
        h, c, cache = lstm_cell_forward(X[:, t, :], h, c, layer)
        H[:, t, :] = h
        caches.append(cache)
    return H, caches


def forward(
    model: QuantileLstmModel,
    windows: np.ndarray,
    train_mode: bool = False,
    dropout_seed: int | None = None,
) -> tuple[np.ndarray, dict]:
    """Full forward pass on (batch, T, n_features) windows.

    Layer 1 runs over every step; its activated per-step outputs pass
    through dropout (train mode only, inverted scaling), then layer 2; the
    head reads layer 2's final activated (and, in train mode, dropped-out)
    hidden state. Eval mode is deterministic.
    """
    if windows.ndim == 2:
        windows = windows[None, :, :]
    if windows.shape[2] != model.n_features:
        raise NeuralModelError(
            f"window has {windows.shape[2]} features, model expects {model.n_features}"
        )
    batch, T, _ = windows.shape
    use_dropout = train_mode and model.dropout_rate > 0.0
    if use_dropout:
        if dropout_seed is None:
            raise NeuralModelError("train-mode forward needs a dropout seed")
        rng = np.random.default_rng(dropout_seed)
        keep = 1.0 - model.dropout_rate

    H1, caches1 = _layer_forward(model.layer1, windows)
    A1 = np.maximum(H1, 0.0) if model.output_activation == "relu" else H1
    if use_dropout:
        mask1 = (rng.random(A1.shape) < keep) / keep
    else:
        mask1 = None
    D1 = A1 * mask1 if mask1 is not None else A1

    H2, caches2 = _layer_forward(model.layer2, D1)
    h2_last = H2[:, -1, :]
    A2 = np.maximum(h2_last, 0.0) if model.output_activation == "relu" else h2_last
    if use_dropout:
        mask2 = (rng.random(A2.shape) < keep) / keep
    else:
        mask2 = None
    D2 = A2 * mask2 if mask2 is not None else A2

    q = D2 @ model.head_W + model.head_b
    caches = {
        "windows": windows, "H1": H1, "caches1": caches1, "mask1": mask1,
        "D1": D1, "H2": H2, "caches2": caches2, "h2_last": h2_last,
        "mask2": mask2, "D2": D2,
    }
    return q, caches


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


def _layer_backward(
    layer: LstmLayerParams, caches: list[dict], dH: np.ndarray
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """BPTT through one layer. dH is (batch, T, n_hidden) upstream gradient
    on every hidden state; returns (dX, parameter gradients)."""
    batch, T, _ = dH.shape
    grads = {f"W_{g}": np.zeros_like(layer.W[g]) for g in GATES}
    grads |= {f"U_{g}": np.zeros_like(layer.U[g]) for g in GATES}
    grads |= {f"b_{g}": np.zeros_like(layer.b[g]) for g in GATES}
    dX = np.empty((batch, T, layer.n_in))

    dh_next = np.zeros((batch, layer.n_hidden))
    dc_next = np.zeros((batch, layer.n_hidden))
    for t in range(T - 1, -1, -1):
        cache = caches[t]
        dh = dH[:, t, :] + dh_next
        i, f, o, g = cache["i"], cache["f"], cache["o"], cache["g"]
        tc = cache["tanh_c"]
        do = dh * tc
        dc = dh * o * (1.0 - tc**2) + dc_next
        df = dc * cache["c_prev"]
        di = dc * g
        dg = dc * i
        dc_next = dc * f
        da = {
            "i": di * i * (1.0 - i),
            "f": df * f * (1.0 - f),
            "o": do * o * (1.0 - o),
            "g": dg * (1.0 - g**2),
        }
        x = cache["x"]
        h_prev = cache["h_prev"]
        dx = np.zeros((batch, layer.n_in))
        dh_prev = np.zeros((batch, layer.n_hidden))
        for gate in GATES:
            grads[f"W_{gate}"] += x.T @ da[gate]
            grads[f"U_{gate}"] += h_prev.T @ da[gate]
            grads[f"b_{gate}"] += da[gate].sum(axis=0)
            dx += da[gate] @ layer.W[gate].T
            dh_prev += da[gate] @ layer.U[gate].T
        dX[:, t, :] = dx
        dh_next = dh_prev
    return dX, grads


def backward(
    model: QuantileLstmModel, caches: dict, dq: np.ndarray
) -> dict[str, np.ndarray]:
    """Gradients of every parameter given d(loss)/d(head outputs).

    Replays the dropout masks and activation gating recorded by the
    matching forward pass; relu takes subgradient 0 at exactly zero.
    """
    D2 = caches["D2"]
    grads: dict[str, np.ndarray] = {
        "head.W": D2.T @ dq,
        "head.b": dq.sum(axis=0),
    }
    dD2 = dq @ model.head_W.T
    dA2 = dD2 * caches["mask2"] if caches["mask2"] is not None else dD2
    if model.output_activation == "relu":
        dh2_last = dA2 * (caches["h2_last"] > 0)
    else:
        dh2_last = dA2

    dH2 = np.zeros_like(caches["H2"])
    dH2[:, -1, :] = dh2_last
    dD1, grads2 = _layer_backward(model.layer2, caches["caches2"], dH2)
    dA1 = dD1 * caches["mask1"] if caches["mask1"] is not None else dD1
    if model.output_activation == "relu":
        dH1 = dA1 * (caches["H1"] > 0)
    else:
        dH1 = dA1
    _, grads1 = _layer_backward(model.layer1, caches["caches1"], dH1)

    for name, g in grads1.items():
        grads[f"l1.{name}"] = g
    for name, g in grads2.items():
        grads[f"l2.{name}"] = g
    return grads


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def quantile_loss_and_grad(
    q: np.ndarray, y: np.ndarray, quantiles: tuple[float, ...] = QUANTILE_LEVELS
) -> tuple[float, np.ndarray]:
    """Mean pinball loss over samples and quantile heads, and its gradient
    with respect to the head outputs."""
    if q.shape != (len(y), len(quantiles)):
        raise NeuralModelError(f"head outputs {q.shape} do not match {len(y)} targets")
    losses = np.column_stack([pinball_loss(y, q[:, j], tau) for j, tau in enumerate(quantiles)])
    dq = np.column_stack([pinball_grad(y, q[:, j], tau) for j, tau in enumerate(quantiles)])
    n = q.size
    return float(losses.sum() / n), dq / n


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState
) -> AdamState:
    """One bias-corrected Adam update, in place on the parameter arrays."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, theta in params.items():
        g = grads[name]
        if theta.shape != g.shape:
            raise NeuralModelError(f"gradient shape mismatch for {name}")
        m = state.m.setdefault(name, np.zeros_like(theta))
        v = state.v.setdefault(name, np.zeros_like(theta))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g**2
        theta -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 50
    patience: int = 5
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0


@dataclass(frozen=True)
class TrainHistory:
    train_loss: tuple[float, ...]
    val_loss: tuple[float, ...]
    best_epoch: int  # 1-based


def _epoch_loss(model: QuantileLstmModel, tensors: WindowTensor) -> float:
    q, _ = forward(model, tensors.data, train_mode=False)
    loss, _ = quantile_loss_and_grad(q, tensors.targets[:, 0], model.quantiles)
    return loss


def train(
    model: QuantileLstmModel,
    tensors: WindowTensor,
    val_tensors: WindowTensor,
    config: TrainConfig = TrainConfig(),
) -> tuple[QuantileLstmModel, TrainHistory]:
    """Minimise the averaged pinball loss with Adam and early stopping.

    Tracks validation loss per epoch, stops after ``patience`` epochs
    without improvement and restores the best epoch's parameters. A
    non-finite loss aborts with TrainingDiverged.
    """
    if tensors.n_samples == 0 or val_tensors.n_samples == 0:
        raise NeuralModelError("train and validation tensors must be non-empty")
    rng = np.random.default_rng(config.seed)
    state = AdamState(learning_rate=config.learning_rate)
    params = model.parameters()

    best_val = np.inf
    best_epoch = 0
    best_params: dict[str, np.ndarray] | None = None
    train_hist: list[float] = []
    val_hist: list[float] = []

    y_all = tensors.targets[:, 0]
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(tensors.n_samples)
        epoch_total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            seed = int(rng.integers(0, 2**31 - 1))
            q, caches = forward(model, tensors.data[idx], train_mode=True, dropout_seed=seed)
            loss, dq = quantile_loss_and_grad(q, y_all[idx], model.quantiles)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}")
            epoch_total += loss * len(idx)
            grads = backward(model, caches, dq)
            adam_step(params, grads, state)

        train_loss = epoch_total / tensors.n_samples
        val_loss = _epoch_loss(model, val_tensors)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        train_hist.append(train_loss)
        val_hist.append(val_loss)
        logger.info("epoch %3d  train %.6f  val %.6f", epoch, train_loss, val_loss)

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}
        elif epoch - best_epoch >= config.patience:
            logger.info("early stop at epoch %d (best %d)", epoch, best_epoch)
            break

    if best_params is not None:
        for name, arr in params.items():
            arr[...] = best_params[name]
    return model, TrainHistory(tuple(train_hist), tuple(val_hist), best_epoch)


def predict_quantiles(
    model: QuantileLstmModel,
    tensors: WindowTensor,
    scaler: ScalerParams | None = None,
    target_channel: str | int = 0,
) -> ForecastDistribution:
    """Eval-mode forward, inverse min-max scaling back to watts, and
    non-crossing repair by per-row sorting."""
    q, _ = forward(model, tensors.data, train_mode=False)
    if scaler is not None:
        ch = (
            scaler.channel_names.index(target_channel)
            if isinstance(target_channel, str)
            else target_channel
        )
        q = unscale_array(q, scaler.mins[ch], scaler.maxs[ch])
    q = np.sort(q, axis=1)
    return ForecastDistribution(tensors.target_timestamps, q[:, 0], q[:, 1], q[:, 2])


# ---------------------------------------------------------------------------
# Checkpoints and history
# ---------------------------------------------------------------------------


def save_checkpoint(
    model: QuantileLstmModel, path_prefix: str, scaler: ScalerParams | None = None
) -> None:
    """JSON header with shapes/metadata (and the scaler used in training)
    plus a flat float64 little-endian binary of all parameters in sorted
    name order."""
    params = model.parameters()
    names = sorted(params)
    header = {
        "n_features": model.n_features,
        "hidden": [model.layer1.n_hidden, model.layer2.n_hidden],
        "dropout_rate": model.dropout_rate,
        "quantiles": list(model.quantiles),
        "output_activation": model.output_activation,
        "seed": model.seed,
        "scaler": None
        if scaler is None
        else {
            "channel_names": list(scaler.channel_names),
            "mins": scaler.mins.tolist(),
            "maxs": scaler.maxs.tolist(),
        },
        "param_order": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    with open(f"{path_prefix}.json", "w", encoding="utf-8") as fh:
        json.dump(header, fh, sort_keys=True, indent=1)
    flat = np.concatenate([params[n].ravel() for n in names])
    flat.astype("<f8").tofile(f"{path_prefix}.bin")


def load_checkpoint(path_prefix: str) -> tuple[QuantileLstmModel, ScalerParams | None]:
    with open(f"{path_prefix}.json", encoding="utf-8") as fh:
        header = json.load(fh)
    model = init_model(
        n_features=header["n_features"],
        hidden=tuple(header["hidden"]),
        dropout_rate=header["dropout_rate"],
        quantiles=tuple(header["quantiles"]),
        output_activation=header["output_activation"],
        seed=header["seed"],
    )
    flat = np.fromfile(f"{path_prefix}.bin", dtype="<f8")
    params = model.parameters()
    offset = 0
    for entry in header["param_order"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape))
        params[entry["name"]][...] = flat[offset : offset + size].reshape(shape)
        offset += size
    if offset != flat.size:
        raise NeuralModelError("checkpoint parameter count mismatch")
    scaler = None
    if header.get("scaler"):
        sc = header["scaler"]
        scaler = ScalerParams(
            np.asarray(sc["mins"], dtype=float),
            np.asarray(sc["maxs"], dtype=float),
            tuple(sc["channel_names"]),
        )
    return model, scaler


def history_to_csv(history: TrainHistory, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for i, (tr, vl) in enumerate(zip(history.train_loss, history.val_loss), start=1):
            writer.writerow([i, repr(tr), repr(vl)])
