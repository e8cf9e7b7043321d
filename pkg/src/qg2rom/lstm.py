"""From-scratch LSTM surrogate for modal-coefficient time series.

Gated cell mathematics, stacked layers, backpropagation through time, Adam
with decoupled weight decay, min-max input scaling, lookback-window dataset
construction, and recursive multistep prediction. Everything is float64
numpy and deterministic for a given seed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError, TrainingError, UsageError
from .pod import CoefficientSeries

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

MODEL_MAGIC = b"QGLSTM01"


@dataclass(frozen=True)
class LstmConfig:
    layers: int = 1
    cells: int = 100
    batch_size: int = 8
    epochs: int = 500
    validation_fraction: float = 0.2
    learning_rate: float = 1e-2
    dropout: float = 0.0
    weight_decay: float = 1e-5
    lookback: int = 10
    seed: int = 0

    def validate(self):
        if self.layers < 1 or self.cells < 1:
            raise DomainError("need at least one layer and one cell")
        if not 0 <= self.validation_fraction < 1:
            raise DomainError(f"validation fraction {self.validation_fraction} outside [0, 1)")
        if self.lookback < 1:
            raise DomainError("lookback window must be >= 1")
        if self.learning_rate <= 0:
            raise DomainError("learning rate must be positive")
        if not 0 <= self.dropout < 1:
            raise DomainError(f"dropout probability {self.dropout} outside [0, 1)")

    @classmethod
    def q_defaults(cls, lookback=10, seed=0):
        """Vorticity-model hyperparameters: one wide layer, no dropout."""
        return cls(layers=1, cells=100, batch_size=8, epochs=500, learning_rate=1e-2,
                   weight_decay=1e-5, dropout=0.0, lookback=lookback, seed=seed)

    @classmethod
    def psi_defaults(cls, lookback=10, seed=0):
        """Stream-function-model hyperparameters: three layers with dropout."""
        return cls(layers=3, cells=50, batch_size=16, epochs=500, learning_rate=1e-2,
                   weight_decay=1e-5, dropout=0.1, lookback=lookback, seed=seed)


@dataclass
class CellWeights:
    """Per-layer gate weights mapping [h_prev, x] to the cell width."""

    W_i: np.ndarray
    W_f: np.ndarray
    W_o: np.ndarray
    W_c: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray

    def tensors(self):
        return [self.W_i, self.W_f, self.W_o, self.W_c,
                self.b_i, self.b_f, self.b_o, self.b_c]


@dataclass
class MinMaxScaler:
    """Per-feature affine map of the training range onto [-1, 1]."""

    mins: np.ndarray
    maxs: np.ndarray

    @classmethod
    def fit(cls, rows: np.ndarray) -> "MinMaxScaler":
        if rows.size == 0:
            raise DomainError("cannot fit a scaler on an empty dataset")
        return cls(rows.min(axis=0).astype(float), rows.max(axis=0).astype(float))

    def _span(self):
        return self.maxs - self.mins

    def apply(self, x: np.ndarray) -> np.ndarray:
        span = self._span()
        out = np.zeros_like(np.asarray(x, dtype=float))
        nz = span != 0
        out[..., nz] = 2.0 * (x[..., nz] - self.mins[nz]) / span[nz] - 1.0
        return out

    def invert(self, x: np.ndarray) -> np.ndarray:
        span = self._span()
        out = np.broadcast_to(self.mins, np.asarray(x).shape).astype(float).copy()
        nz = span != 0
        out[..., nz] = (np.asarray(x, dtype=float)[..., nz] + 1.0) / 2.0 * span[nz] + self.mins[nz]
        return out

    def slice(self, start: int) -> "MinMaxScaler":
        return MinMaxScaler(self.mins[start:], self.maxs[start:])


@dataclass
class WindowDataset:
    """Lookback windows (newest row first) and next-step coefficient targets."""

    inputs: np.ndarray        # (P, lookback, D) with D = param_dim + 1 + n_modes
    targets: np.ndarray       # (P, n_modes)
    block_ids: np.ndarray     # (P,)
    param_dim: int
    n_modes: int

    def __post_init__(self):
        if len(self.inputs) != len(self.targets):
            raise DomainError("one target per input window required")


def build_windows(coeffs: CoefficientSeries, lookback: int) -> WindowDataset:
    """One (window, target) pair per admissible step of each parameter block.

    Windows never straddle parameter blocks; each block contributes
    N_t - lookback pairs.
    """
    if lookback < 1:
        raise DomainError("lookback window must be >= 1")
    nt = len(coeffs.times)
    n_modes = coeffs.matrix.shape[0]
    pdim = coeffs.params.shape[1] if coeffs.params.size else 0
    inputs, targets, blocks = [], [], []
    for k in range(coeffs.n_blocks):
        if nt <= lookback:
            raise DomainError(f"parameter block {k} has {nt} steps, "
                              f"needs more than lookback={lookback}")
        mu = coeffs.params[k] if coeffs.params.shape[0] else np.empty(0)
        block = coeffs.block(k)
        rows = np.column_stack([np.tile(mu, (nt, 1)), coeffs.times, block.T])
        for p in range(lookback - 1, nt - 1):
            inputs.append(rows[p - lookback + 1:p + 1][::-1])   # newest first
            targets.append(block[:, p + 1])
            blocks.append(k)
    return WindowDataset(np.array(inputs), np.array(targets), np.array(blocks),
                         param_dim=pdim, n_modes=n_modes)


@dataclass
class LstmModel:
    config: LstmConfig
    cells: list            # CellWeights per layer
    W_out: np.ndarray
    b_out: np.ndarray
    scaler: MinMaxScaler | None
    param_dim: int
    n_modes: int
    history: list = dc_field(default_factory=list)   # (epoch, train_mse, val_mse)

    def parameters(self):
        out = []
        for cw in self.cells:
            out.extend(cw.tensors())
        out.extend([self.W_out, self.b_out])
        return out

    def target_scaler(self) -> MinMaxScaler:
        if self.scaler is None:
            raise UsageError("model has no fitted scaler")
        return self.scaler.slice(self.param_dim + 1)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def init_model(config: LstmConfig, param_dim: int, n_modes: int,
               rng: np.random.Generator) -> LstmModel:
    """Uniform +-1/sqrt(fan_in) weights; forget-gate biases start at one."""
    config.validate()
    input_dim = param_dim + 1 + n_modes
    cells = []
    d = input_dim
    for _ in range(config.layers):
        h = config.cells
        bound = 1.0 / np.sqrt(h + d)
        def mat():
            return rng.uniform(-bound, bound, size=(h, h + d))
        cells.append(CellWeights(mat(), mat(), mat(), mat(),
                                 np.zeros(h), np.ones(h), np.zeros(h), np.zeros(h)))
        d = h
    bound = 1.0 / np.sqrt(config.cells)
    W_out = rng.uniform(-bound, bound, size=(n_modes, config.cells))
    return LstmModel(config, cells, W_out, np.zeros(n_modes), None, param_dim, n_modes)


def cell_forward(x, h_prev, c_prev, w: CellWeights):
    """Single gated-cell update; returns (h, c).

    Gates are sigmoids of affine maps of [h_prev, x]; the cell state is
    f*c_prev + i*tanh-candidate and the output is o*tanh(c).
    """
    x = np.atleast_2d(x)
    h_prev = np.atleast_2d(h_prev)
    c_prev = np.atleast_2d(c_prev)
    if x.shape[0] != h_prev.shape[0] or w.W_i.shape[1] != h_prev.shape[1] + x.shape[1]:
        raise DomainError("cell_forward shape mismatch")
    z = np.hstack([h_prev, x])
    i = _sigmoid(z @ w.W_i.T + w.b_i)
    f = _sigmoid(z @ w.W_f.T + w.b_f)
    o = _sigmoid(z @ w.W_o.T + w.b_o)
    g = np.tanh(z @ w.W_c.T + w.b_c)
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


def _layer_forward(X, w: CellWeights, keep_cache):
    """Run one layer over a (B, T, D) sequence; returns (H_seq, cache)."""
    B, T, _ = X.shape
    H = w.b_i.size
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    H_seq = np.empty((B, T, H))
    cache = [] if keep_cache else None
    for t in range(T):
        z = np.hstack([h, X[:, t]])
        i = _sigmoid(z @ w.W_i.T + w.b_i)
        f = _sigmoid(z @ w.W_f.T + w.b_f)
        o = _sigmoid(z @ w.W_o.T + w.b_o)
        g = np.tanh(z @ w.W_c.T + w.b_c)
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        H_seq[:, t] = h
        if keep_cache:
            cache.append((z, i, f, o, g, c_prev, tc))
    return H_seq, cache


def _forward_scaled(model: LstmModel, X_scaled, training=False, rng=None):
    """Network pass on scaled windows, oldest row first.

    Returns predictions (scaled space) and the caches needed for BPTT.
    """
    seqs = []
    caches = []
    masks = []
    cur = X_scaled
    p = model.config.dropout
    for li, cw in enumerate(model.cells):
        H_seq, cache = _layer_forward(cur, cw, keep_cache=True)
        seqs.append(cur)
        caches.append(cache)
        if li < len(model.cells) - 1:
            if training and p > 0:
                mask = (rng.random(H_seq.shape) >= p) / (1.0 - p)
            else:
                mask = None
            masks.append(mask)
            cur = H_seq if mask is None else H_seq * mask
        else:
            cur = H_seq
    h_last = cur[:, -1]
    pred = h_last @ model.W_out.T + model.b_out
    return pred, (seqs, caches, masks, h_last)


def _layer_backward(w: CellWeights, X, cache, dH_seq):
    """BPTT through one layer; returns (grads dict, dX)."""
    B, T, D = X.shape
    H = w.b_i.size
    dW = {k: np.zeros_like(getattr(w, k)) for k in
          ("W_i", "W_f", "W_o", "W_c", "b_i", "b_f", "b_o", "b_c")}
    dX = np.zeros_like(X)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        z, i, f, o, g, c_prev, tc = cache[t]
        dh = dH_seq[:, t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        df = dc * c_prev
        di = dc * g
        dg = dc * i
        dc_next = dc * f
        pi = di * i * (1.0 - i)
        pf = df * f * (1.0 - f)
        po = do * o * (1.0 - o)
        pg = dg * (1.0 - g * g)
        dW["W_i"] += pi.T @ z
        dW["W_f"] += pf.T @ z
        dW["W_o"] += po.T @ z
        dW["W_c"] += pg.T @ z
        dW["b_i"] += pi.sum(axis=0)
        dW["b_f"] += pf.sum(axis=0)
        dW["b_o"] += po.sum(axis=0)
        dW["b_c"] += pg.sum(axis=0)
        dz = pi @ w.W_i + pf @ w.W_f + po @ w.W_o + pg @ w.W_c
        dh_next = dz[:, :H]
        dX[:, t] = dz[:, H:]
    return dW, dX


def _backward_scaled(model: LstmModel, fwd, dpred):
    """Gradients of every parameter for a given dLoss/dpred."""
    seqs, caches, masks, h_last = fwd
    dW_out = dpred.T @ h_last
    db_out = dpred.sum(axis=0)
    B, T, _ = seqs[0].shape
    H = model.config.cells
    dH_top = np.zeros((B, T, H))
    dH_top[:, -1] = dpred @ model.W_out
    grads_per_layer = [None] * len(model.cells)
    dH = dH_top
    for li in range(len(model.cells) - 1, -1, -1):
        gd, dX = _layer_backward(model.cells[li], seqs[li], caches[li], dH)
        grads_per_layer[li] = gd
        if li > 0:
            mask = masks[li - 1]
            dH = dX if mask is None else dX * mask
    flat = []
    for gd in grads_per_layer:
        flat.extend([gd["W_i"], gd["W_f"], gd["W_o"], gd["W_c"],
                     gd["b_i"], gd["b_f"], gd["b_o"], gd["b_c"]])
    flat.extend([dW_out, db_out])
    return flat


@dataclass
class AdamState:
    m: list
    v: list

    @classmethod
    def like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr, weight_decay, t):
    """Classical Adam with bias correction and decoupled weight decay.

    Updates the parameter arrays in place; each tensor carries its own
    moment estimates.
    """
    if t < 1:
        raise DomainError("Adam step count starts at 1")
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m[...] = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
        v[...] = ADAM_BETA2 * v + (1 - ADAM_BETA2) * g * g
        mhat = m / (1 - ADAM_BETA1**t)
        vhat = v / (1 - ADAM_BETA2**t)
        p -= lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
        if weight_decay:
            p -= lr * weight_decay * p
    return params


def fit_scaler(dataset: WindowDataset, train_idx=None) -> MinMaxScaler:
    """Min-max scaler fitted on the rows of the training windows only."""
    idx = np.arange(len(dataset.inputs)) if train_idx is None else train_idx
    rows = dataset.inputs[idx].reshape(-1, dataset.inputs.shape[-1])
    return MinMaxScaler.fit(rows)


def _split_chronological(dataset: WindowDataset, fraction: float):
    """Last `fraction` of the pairs of each block held out for validation."""
    train_idx, val_idx = [], []
    for k in np.unique(dataset.block_ids):
        idx = np.flatnonzero(dataset.block_ids == k)
        n_val = int(np.floor(fraction * len(idx)))
        if n_val > 0:
            train_idx.extend(idx[:-n_val])
            val_idx.extend(idx[-n_val:])
        else:
            train_idx.extend(idx)
    return np.array(train_idx, dtype=int), np.array(val_idx, dtype=int)


def _scaled_pairs(model, dataset, idx):
    X = model.scaler.apply(dataset.inputs[idx])[:, ::-1, :]   # oldest row first
    Y = model.target_scaler().apply(dataset.targets[idx])
    return np.ascontiguousarray(X), Y


def _mse(pred, target):
    d = pred - target
    return float(np.mean(d * d))


def train(dataset: WindowDataset, config: LstmConfig) -> LstmModel:
    """Mini-batch BPTT training; deterministic for a given (seed, dataset)."""
    config.validate()
    if len(dataset.inputs) == 0:
        raise DomainError("empty dataset")
    rng = np.random.default_rng(config.seed)
    model = init_model(config, dataset.param_dim, dataset.n_modes, rng)
    train_idx, val_idx = _split_chronological(dataset, config.validation_fraction)
    model.scaler = fit_scaler(dataset, train_idx)
    X_train, Y_train = _scaled_pairs(model, dataset, train_idx)
    X_val, Y_val = _scaled_pairs(model, dataset, val_idx) if len(val_idx) else (None, None)
    params = model.parameters()
    state = AdamState.like(params)
    n = len(train_idx)
    t_adam = 0
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        sq_sum = 0.0
        for start in range(0, n, config.batch_size):
            sel = perm[start:start + config.batch_size]
            xb, yb = X_train[sel], Y_train[sel]
            pred, fwd = _forward_scaled(model, xb, training=True, rng=rng)
            diff = pred - yb
            sq_sum += float(np.sum(diff * diff))
            dpred = 2.0 * diff / diff.size
            grads = _backward_scaled(model, fwd, dpred)
            t_adam += 1
            adam_step(params, grads, state, config.learning_rate,
                      config.weight_decay, t_adam)
        train_mse = sq_sum / (n * dataset.n_modes)
        if not np.isfinite(train_mse):
            raise TrainingError(f"training loss diverged at epoch {epoch}", epoch=epoch)
        if X_val is not None:
            val_pred, _ = _forward_scaled(model, X_val, training=False)
            val_mse = _mse(val_pred, Y_val)
        else:
            val_mse = float("nan")
        model.history.append((epoch, train_mse, val_mse))
    return model


def network_forward(model: LstmModel, window: np.ndarray) -> np.ndarray:
    """Coefficient prediction from one raw lookback window (newest row first)."""
    if model.scaler is None:
        raise UsageError("model has no fitted scaler; train or load it first")
    window = np.asarray(window, dtype=float)
    if window.shape != (model.config.lookback, model.param_dim + 1 + model.n_modes):
        raise DomainError(f"window shape {window.shape} does not match the model")
    X = model.scaler.apply(window)[::-1][None, :, :]
    pred, _ = _forward_scaled(model, np.ascontiguousarray(X), training=False)
    return model.target_scaler().invert(pred[0])


def predict_recursive(model: LstmModel, seed_window: np.ndarray, n_steps: int,
                      time_increment: float, mu=()) -> CoefficientSeries:
    """March forward feeding each prediction back into the window."""
    if n_steps <= 0:
        raise DomainError(f"n_steps must be positive, got {n_steps}")
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    window = np.array(seed_window, dtype=float)
    preds = np.empty((model.n_modes, n_steps))
    times = np.empty(n_steps)
    t = window[0, model.param_dim]
    for k in range(n_steps):
        alpha = network_forward(model, window)
        t = t + time_increment
        preds[:, k] = alpha
        times[k] = t
        new_row = np.concatenate([mu, [t], alpha])
        window = np.vstack([new_row, window[:-1]])
    params = mu.reshape(1, -1) if mu.size else np.empty((1, 0))
    return CoefficientSeries("q1", times, params, preds)


def gradient_check(model: LstmModel, window: np.ndarray, target: np.ndarray,
                   fd_step: float = 1e-6) -> float:
    """Max relative discrepancy of BPTT gradients vs central finite differences.

    Works in scaled space; intended for small models only.
    """
    if model.scaler is None:
        raise UsageError("model has no fitted scaler")
    X = np.ascontiguousarray(model.scaler.apply(np.asarray(window, dtype=float))[::-1][None])
    Y = model.target_scaler().apply(np.asarray(target, dtype=float))[None]

    def loss():
        pred, fwd = _forward_scaled(model, X, training=False)
        return _mse(pred, Y), pred, fwd

    base, pred, fwd = loss()
    dpred = 2.0 * (pred - Y) / Y.size
    analytic = _backward_scaled(model, fwd, dpred)
    worst = 0.0
    for p, g in zip(model.parameters(), analytic):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + fd_step
            lp, _, _ = loss()
            flat[j] = orig - fd_step
            lm, _, _ = loss()
            flat[j] = orig
            fd = (lp - lm) / (2 * fd_step)
            denom = max(abs(gflat[j]), abs(fd), 1e-6)
            worst = max(worst, abs(gflat[j] - fd) / denom)
    return worst


def save_model(model: LstmModel, path) -> None:
    """JSON header (config, scaler, shapes) followed by a binary64 payload."""
    params = model.parameters()
    header = {
        "config": model.config.__dict__,
        "param_dim": model.param_dim,
        "n_modes": model.n_modes,
        "scaler": None if model.scaler is None else
            {"mins": model.scaler.mins.tolist(), "maxs": model.scaler.maxs.tolist()},
        "shapes": [list(p.shape) for p in params],
        "history": model.history,
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_model(path) -> LstmModel:
    with open(path, "rb") as fh:
        if fh.read(len(MODEL_MAGIC)) != MODEL_MAGIC:
            raise FormatError(f"{path} is not a saved LSTM model", offset=0)
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        payload = fh.read()
    config = LstmConfig(**header["config"])
    rng = np.random.default_rng(0)
    model = init_model(config, header["param_dim"], header["n_modes"], rng)
    params = model.parameters()
    offset = 0
    for p, shape in zip(params, header["shapes"]):
        n = int(np.prod(shape))
        if len(payload) < (offset + n) * 8:
            raise FormatError("truncated weight payload",
                              offset=len(MODEL_MAGIC) + 8 + hlen + offset * 8)
        chunk = np.frombuffer(payload, dtype="<f8", count=n, offset=offset * 8)
        p[...] = chunk.reshape(shape)
        offset += n
    sc = header["scaler"]
    model.scaler = None if sc is None else MinMaxScaler(np.array(sc["mins"]), np.array(sc["maxs"]))
    model.history = [tuple(h) for h in header["history"]]
    return model


def export_history_csv(model: LstmModel, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_mse,val_mse\n")
        for epoch, tr, va in model.history:
            fh.write(f"{epoch},{tr:.17g},{va:.17g}\n")


def model_digest(model: LstmModel) -> str:
    import hashlib

    h = hashlib.sha256()
    for p in model.parameters():
        h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return h.hexdigest()
