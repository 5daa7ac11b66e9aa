"""Two-layer LSTM classifier written directly in numpy, with exact BPTT.

Gate blocks inside each stacked weight matrix are ordered (forget, input,
output, candidate).  Every layer matrix has shape ``(4 * hidden, hidden + input)``
and multiplies the concatenation ``[h_prev, x_t]``.  The first ``hidden``
columns therefore act on the recurrent state.

Right-padded timesteps (index 0 in character mode) leave both the hidden and
cell state untouched, so padding never changes a prediction or a gradient.
"""
from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .container import load_arrays, save_arrays
from .errors import ConfigError, NonFiniteActivation, NonFiniteUpdate, SchemaMismatch, ShapeMismatch, SingleClassError
from .optim import OptimizerConfig, clip_global_norm, init_state, optimizer_step
from .tfidf import PAD_INDEX, PRINTABLE_ALPHABET

logger = logging.getLogger(__name__)

GATES = ("f", "i", "o", "c")
Params = dict[str, np.ndarray]


def sigmoid(z):
    # tanh form never overflows, in float32 or float64
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class NetConfig:
    input_mode: str = "chars"           # "chars": index sequences; "values": one number per step
    vocab_size: int = len(PRINTABLE_ALPHABET) + 2
    embed_dim: int = 32
    hidden: int = 128
    num_layers: int = 2
    dense: tuple[int, ...] = (64, 16)
    dropout: float = 0.5

    def __post_init__(self):
        if self.input_mode not in ("chars", "values"):
            raise ConfigError(f"input_mode must be 'chars' or 'values', got {self.input_mode!r}")
        if self.num_layers < 1 or self.hidden < 1 or self.embed_dim < 1:
            raise ConfigError("num_layers, hidden and embed_dim must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        object.__setattr__(self, "dense", tuple(int(d) for d in self.dense))

    @property
    def input_dim(self) -> int:
        return self.embed_dim if self.input_mode == "chars" else 1


@dataclass(frozen=True)
class TrainSchedule:
    batch_size: int = 32
    max_epochs: int | None = None       # caps OptimizerConfig.epochs when set
    patience: int = 10
    min_delta: float = 1e-4
    val_fraction: float = 0.1
    seed: int = 0
    clip_norm: float = 5.0
    dtype: str = "float32"
    bucket: bool = True                 # group similar lengths into a batch

    def __post_init__(self):
        if not 0.0 < self.val_fraction <= 0.5:
            raise ConfigError(f"val_fraction must lie in (0, 0.5], got {self.val_fraction}")
        if self.batch_size < 1 or self.patience < 1:
            raise ConfigError("batch_size and patience must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")


def gate(params: Params, layer: int, name: str, part: str = "W") -> np.ndarray:
    """View of one gate block, e.g. ``gate(p, 1, "f")`` is the layer-1 forget-gate matrix."""
    block = params[f"l{layer}.{part}"]
    hidden = block.shape[0] // 4
    k = GATES.index(name)
    return block[k * hidden:(k + 1) * hidden]


def init_params(cfg: NetConfig, seed: int, dtype=np.float64) -> Params:
    rng = np.random.default_rng(seed)

    def glorot(shape, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=shape)

    H = cfg.hidden
    p: Params = {}
    if cfg.input_mode == "chars":
        p["embed"] = glorot((cfg.vocab_size, cfg.embed_dim), cfg.vocab_size, cfg.embed_dim)
    in_dim = cfg.input_dim
    for layer in range(1, cfg.num_layers + 1):
        W = np.vstack([glorot((H, H + in_dim), H + in_dim, H) for _ in GATES])
        b = np.zeros(4 * H)
        b[:H] = 1.0     # forget-gate bias
        p[f"l{layer}.W"], p[f"l{layer}.b"] = W, b
        in_dim = H
    prev = H
    for k, width in enumerate(cfg.dense, start=1):
        p[f"d{k}.W"] = glorot((width, prev), prev, width)
        p[f"d{k}.b"] = np.zeros(width)
        prev = width
    p["out.W"] = glorot((1, prev), prev, 1)
    p["out.b"] = np.zeros(1)
    return {k: v.astype(dtype) for k, v in p.items()}


def check_params(cfg: NetConfig, params: Params) -> None:
    expected = init_params(cfg, 0, np.float64)
    if set(expected) != set(params):
        raise ShapeMismatch(f"parameter names {sorted(params)} do not match the network layout")
    for name, ref in expected.items():
        if params[name].shape != ref.shape:
            raise ShapeMismatch(f"{name}: expected shape {ref.shape}, got {params[name].shape}")


def cell_forward(x_t, h_prev, c_prev, W, b):
    """One LSTM step for a batch (rows) or a single vector.

    Returns ``(h_t, c_t, cache)`` where cache holds the gate activations.
    """
    x_t, h_prev, c_prev = np.atleast_2d(x_t), np.atleast_2d(h_prev), np.atleast_2d(c_prev)
    H = h_prev.shape[1]
    if W.shape != (4 * H, H + x_t.shape[1]) or b.shape != (4 * H,):
        raise ShapeMismatch(f"W {W.shape} / b {b.shape} inconsistent with hidden {H}, input {x_t.shape[1]}")
    z = np.concatenate([h_prev, x_t], axis=1) @ W.T + b
    f = sigmoid(z[:, :H])
    i = sigmoid(z[:, H:2 * H])
    o = sigmoid(z[:, 2 * H:3 * H])
    c_hat = np.tanh(z[:, 3 * H:])
    c_t = f * c_prev + i * c_hat
    tanh_c = np.tanh(c_t)
    h_t = o * tanh_c
    if not np.all(np.isfinite(h_t)):
        raise NonFiniteActivation("non-finite hidden state")
    return h_t, c_t, {"f": f, "i": i, "o": o, "c_hat": c_hat, "tanh_c": tanh_c}


# --- batched forward / backward --------------------------------------------

def _prepare_inputs(cfg: NetConfig, seqs: np.ndarray):
    """Return (timestep inputs or indices, mask (B,T)) trimmed to the longest real row."""
    seqs = np.asarray(seqs)
    if seqs.ndim != 2:
        raise ShapeMismatch(f"expected a (batch, time) array, got shape {seqs.shape}")
    if cfg.input_mode == "chars":
        mask = seqs != PAD_INDEX
        lengths = mask.sum(axis=1)
        T = int(lengths.max(initial=0))
        return seqs[:, :T].astype(np.int64), mask[:, :T]
    return seqs, np.ones(seqs.shape, dtype=bool)


@dataclass
class ForwardCache:
    inputs: np.ndarray
    mask: np.ndarray
    layers: list[dict]
    drop_mask: np.ndarray | None
    dense_in: list[np.ndarray]
    dense_pre: list[np.ndarray]
    logit: np.ndarray
    prob: np.ndarray


def _run_layer(x_seq, mask, W, b, dtype):
    """x_seq: (T, B, I). Returns (outputs (T,B,H), cache)."""
    T, B, _ = x_seq.shape
    H = W.shape[0] // 4
    W_h, W_x = W[:, :H], W[:, H:]
    xproj = x_seq @ W_x.T + b if T else np.zeros((0, B, 4 * H), dtype=dtype)
    h = np.zeros((B, H), dtype=dtype)
    c = np.zeros((B, H), dtype=dtype)
    hs = np.zeros((T, B, H), dtype=dtype)
    h_prev_all = np.zeros((T, B, H), dtype=dtype)
    c_prev_all = np.zeros((T, B, H), dtype=dtype)
    gates = np.zeros((T, B, 4 * H), dtype=dtype)
    tanh_c_all = np.zeros((T, B, H), dtype=dtype)
    m_all = mask.T[:, :, None].astype(dtype)        # (T, B, 1)
    for t in range(T):
        z = xproj[t] + h @ W_h.T
        g = gates[t]
        g[:, :3 * H] = sigmoid(z[:, :3 * H])
        g[:, 3 * H:] = np.tanh(z[:, 3 * H:])
        c_new = g[:, :H] * c + g[:, H:2 * H] * g[:, 3 * H:]
        tanh_c = np.tanh(c_new)
        h_new = g[:, 2 * H:3 * H] * tanh_c
        h_prev_all[t], c_prev_all[t], tanh_c_all[t] = h, c, tanh_c
        m = m_all[t]
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
        hs[t] = h
    return hs, {"x": x_seq, "h_prev": h_prev_all, "c_prev": c_prev_all, "gates": gates,
                "tanh_c": tanh_c_all, "m": m_all, "h_last": h}


def forward(cfg: NetConfig, params: Params, seqs: np.ndarray, train_mode: bool = False,
            dropout_seed: int | None = None) -> tuple[np.ndarray, ForwardCache]:
    """Phishing probabilities for a batch of sequences, plus the BPTT cache."""
    dtype = params["out.W"].dtype
    inputs, mask = _prepare_inputs(cfg, seqs)
    B, T = inputs.shape
    if cfg.input_mode == "chars":
        emb = params["embed"]
        if T and inputs.max() >= emb.shape[0]:
            raise ShapeMismatch(f"index {int(inputs.max())} outside embedding table of {emb.shape[0]}")
        x_seq = emb[inputs.T]                                   # (T, B, E)
    else:
        x_seq = inputs.T[:, :, None].astype(dtype)               # (T, B, 1)

    layers = []
    drop_mask = None
    for layer in range(1, cfg.num_layers + 1):
        hs, cache = _run_layer(x_seq, mask, params[f"l{layer}.W"], params[f"l{layer}.b"], dtype)
        layers.append(cache)
        x_seq = hs
        if layer == 1 and cfg.num_layers > 1 and train_mode and cfg.dropout > 0:
            keep = 1.0 - cfg.dropout
            rng = np.random.default_rng(dropout_seed)
            drop_mask = ((rng.random(hs.shape) < keep) / keep).astype(dtype)
            x_seq = hs * drop_mask
    a = layers[-1]["h_last"]
    dense_in, dense_pre = [], []
    for k in range(1, len(cfg.dense) + 1):
        dense_in.append(a)
        pre = a @ params[f"d{k}.W"].T + params[f"d{k}.b"]
        dense_pre.append(pre)
        a = np.maximum(pre, 0.0)
    dense_in.append(a)
    logit = (a @ params["out.W"].T + params["out.b"])[:, 0]
    prob = sigmoid(logit)
    if not np.all(np.isfinite(prob)):
        raise NonFiniteActivation("non-finite output probability")
    return prob, ForwardCache(inputs, mask, layers, drop_mask, dense_in, dense_pre, logit, prob)


def bce_loss(logit: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy computed from logits."""
    logit = np.asarray(logit, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, logit) - np.asarray(y, dtype=np.float64) * logit))


def _layer_backward(cache, W, dhs, dh_last):
    """BPTT through one layer. ``dhs`` (T,B,H) are gradients on each emitted h (may be None).

    Returns (dW, db, dx_seq).
    """
    x, gates, m_all = cache["x"], cache["gates"], cache["m"]
    T, B, _ = x.shape
    H = W.shape[0] // 4
    W_h = W[:, :H]
    dtype = W.dtype
    dZ = np.zeros((T, B, 4 * H), dtype=dtype)
    dh = dh_last.copy()
    dc = np.zeros((B, H), dtype=dtype)
    for t in range(T - 1, -1, -1):
        if dhs is not None:
            dh = dh + dhs[t]
        m = m_all[t]
        g = gates[t]
        f, i, o, c_hat = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        tanh_c = cache["tanh_c"][t]
        dh_new = m * dh
        dc_new = m * dc + dh_new * o * (1.0 - tanh_c * tanh_c)
        dz = dZ[t]
        dz[:, :H] = dc_new * cache["c_prev"][t] * f * (1.0 - f)
        dz[:, H:2 * H] = dc_new * c_hat * i * (1.0 - i)
        dz[:, 2 * H:3 * H] = dh_new * tanh_c * o * (1.0 - o)
        dz[:, 3 * H:] = dc_new * i * (1.0 - c_hat * c_hat)
        dc = dc_new * f + (1.0 - m) * dc
        dh = dz @ W_h + (1.0 - m) * dh
    flat_dz = dZ.reshape(T * B, 4 * H)
    hx = np.concatenate([cache["h_prev"], x], axis=2).reshape(T * B, H + x.shape[2])
    dW = flat_dz.T @ hx
    db = flat_dz.sum(axis=0)
    dx = dZ @ W[:, H:]
    return dW, db, dx


def backward(cfg: NetConfig, params: Params, cache: ForwardCache, y: np.ndarray) -> Params:
    """Gradients of the mean binary cross-entropy with respect to every parameter."""
    y = np.asarray(y, dtype=cache.prob.dtype)
    B = len(y)
    grads: Params = {}
    d_logit = ((cache.prob - y) / B)[:, None]
    a = cache.dense_in[-1]
    grads["out.W"] = d_logit.T @ a
    grads["out.b"] = d_logit.sum(axis=0)
    da = d_logit @ params["out.W"]
    for k in range(len(cfg.dense), 0, -1):
        dpre = da * (cache.dense_pre[k - 1] > 0)
        grads[f"d{k}.W"] = dpre.T @ cache.dense_in[k - 1]
        grads[f"d{k}.b"] = dpre.sum(axis=0)
        da = dpre @ params[f"d{k}.W"]
    dh_last = da
    dhs = None
    for layer in range(cfg.num_layers, 0, -1):
        W = params[f"l{layer}.W"]
        dW, db, dx = _layer_backward(cache.layers[layer - 1], W, dhs, dh_last)
        grads[f"l{layer}.W"], grads[f"l{layer}.b"] = dW, db
        if layer == 2 and cache.drop_mask is not None:
            dx = dx * cache.drop_mask
        dhs = dx
        dh_last = np.zeros_like(dh_last, shape=(B, cfg.hidden))
    if cfg.input_mode == "chars":
        d_embed = np.zeros_like(params["embed"])
        T = cache.inputs.shape[1]
        if T:
            np.add.at(d_embed, cache.inputs.T.reshape(-1), dhs.reshape(T * B, -1))
        grads["embed"] = d_embed
    return {k: grads[k] for k in params}


# --- training ----------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("epoch\ttrain_loss\tval_loss\ttrain_acc\tval_acc\n")
            for r in self.records:
                fh.write(f"{r.epoch}\t{r.train_loss!r}\t{r.val_loss!r}\t{r.train_acc!r}\t{r.val_acc!r}\n")


@dataclass
class LstmModel:
    cfg: NetConfig
    params: Params
    log: TrainingLog = field(default_factory=TrainingLog)

    def predict_proba(self, seqs: np.ndarray, batch_size: int = 256) -> np.ndarray:
        return premier_prediction(self.cfg, self.params, seqs, batch_size)


def _lengths(cfg: NetConfig, seqs: np.ndarray) -> np.ndarray:
    if cfg.input_mode == "chars":
        return (np.asarray(seqs) != PAD_INDEX).sum(axis=1)
    return np.full(len(seqs), np.asarray(seqs).shape[1])


def _batches(order: np.ndarray, lengths: np.ndarray, batch_size: int, bucket: bool,
             rng: np.random.Generator) -> list[np.ndarray]:
    if not bucket:
        return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    pool = batch_size * 8
    batches = []
    for start in range(0, len(order), pool):
        chunk = order[start:start + pool]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches.extend(chunk[i:i + batch_size] for i in range(0, len(chunk), batch_size))
    return [batches[i] for i in rng.permutation(len(batches))]


def premier_prediction(cfg: NetConfig, params: Params, seqs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Inference-mode probabilities, one per row of ``seqs``."""
    seqs = np.asarray(seqs)
    out = np.empty(len(seqs), dtype=np.float64)
    if not len(seqs):
        return out
    order = np.argsort(_lengths(cfg, seqs), kind="stable")
    for start in range(0, len(order), batch_size):
        rows = order[start:start + batch_size]
        out[rows], _ = forward(cfg, params, seqs[rows], train_mode=False)
    return out


def _split_validation(y: np.ndarray, fraction: float, rng: np.random.Generator):
    perm = rng.permutation(len(y))
    n_val = max(1, int(round(fraction * len(y))))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train_phase2(seqs: np.ndarray, y: np.ndarray, cfg: NetConfig, opt: OptimizerConfig,
                 sched: TrainSchedule = TrainSchedule()) -> LstmModel:
    """Mini-batch BPTT with early stopping on validation loss; returns the best-epoch weights."""
    seqs = np.asarray(seqs)
    y = np.asarray(y).astype(np.int64)
    if len(seqs) != len(y) or len(y) == 0:
        raise ShapeMismatch(f"{len(seqs)} sequences but {len(y)} labels")
    if set(np.unique(y).tolist()) != {0, 1}:
        raise SingleClassError("LSTM training needs both classes")
    dtype = np.dtype(sched.dtype)
    rng = np.random.default_rng(sched.seed)
    params = init_params(cfg, int(rng.integers(2 ** 62)), dtype)
    state = init_state(opt, params)
    train_idx, val_idx = _split_validation(y, sched.val_fraction, rng)
    lengths = _lengths(cfg, seqs)
    epochs = opt.epochs if sched.max_epochs is None else min(opt.epochs, sched.max_epochs)

    log = TrainingLog()
    best_loss, best_params, wait = np.inf, {k: v.copy() for k, v in params.items()}, 0
    for epoch in range(1, epochs + 1):
        order = train_idx[rng.permutation(len(train_idx))]
        loss_sum = correct = seen = 0.0
        for batch_no, rows in enumerate(_batches(order, lengths, sched.batch_size, sched.bucket, rng)):
            prob, cache = forward(cfg, params, seqs[rows], train_mode=True,
                                  dropout_seed=int(rng.integers(2 ** 62)))
            grads = backward(cfg, params, cache, y[rows])
            try:
                clip_global_norm(grads, sched.clip_norm)
                optimizer_step(opt, params, grads, state)
            except NonFiniteUpdate as exc:
                raise NonFiniteUpdate(f"epoch {epoch}, batch {batch_no}: {exc}") from exc
            loss_sum += bce_loss(cache.logit, y[rows]) * len(rows)
            correct += float(np.sum((prob >= 0.5) == (y[rows] == 1)))
            seen += len(rows)
        val_prob = premier_prediction(cfg, params, seqs[val_idx])
        val_logit = np.log(np.clip(val_prob, 1e-15, 1.0)) - np.log(np.clip(1.0 - val_prob, 1e-15, 1.0))
        record = EpochRecord(epoch, loss_sum / seen, bce_loss(val_logit, y[val_idx]), correct / seen,
                             float(np.mean((val_prob >= 0.5) == (y[val_idx] == 1))))
        log.records.append(record)
        logger.debug("epoch %d train_loss %.4f val_loss %.4f val_acc %.4f",
                     epoch, record.train_loss, record.val_loss, record.val_acc)
        if record.val_loss < best_loss - sched.min_delta:
            best_loss, wait, log.best_epoch = record.val_loss, 0, epoch
            best_params = {k: v.copy() for k, v in params.items()}
        else:
            wait += 1
            if wait >= sched.patience:
                log.stopped_early = True
                break
    return LstmModel(cfg, best_params, log)


# --- persistence ---------------------------------------------------------------

def save_model(model: LstmModel, stem: str | Path, stamp: str = "") -> None:
    cfg = asdict(model.cfg)
    cfg["dense"] = list(cfg["dense"])
    meta = {"format": "lstm-params/1", "net": cfg, "alphabet": PRINTABLE_ALPHABET, "stamp": stamp,
            "best_epoch": model.log.best_epoch}
    save_arrays(stem, model.params, meta)


def load_model(stem: str | Path) -> tuple[LstmModel, str]:
    arrays, meta = load_arrays(stem)
    if meta.get("format") != "lstm-params/1":
        raise SchemaMismatch(f"{stem}: not an LSTM parameter container")
    if meta.get("alphabet") != PRINTABLE_ALPHABET:
        raise SchemaMismatch(f"{stem}: alphabet differs from this build")
    net = dict(meta["net"])
    net["dense"] = tuple(net["dense"])
    cfg = NetConfig(**net)
    check_params(cfg, arrays)
    return LstmModel(cfg, arrays), meta.get("stamp", "")


def values_as_sequences(X: np.ndarray) -> np.ndarray:
    """Numeric feature rows become one-value-per-timestep sequences."""
    return np.asarray(X, dtype=np.float64)


def stack_params(named: Mapping[str, np.ndarray], names: Sequence[str]) -> np.ndarray:
    return np.concatenate([named[n].ravel() for n in names])
