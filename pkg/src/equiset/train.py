"""Synthetic signal-set classification: data, Adam, training, comparison.

Each sample is a set of n noisy copies of one periodic signal (sine,
rectangular or saw-tooth) on a fixed time grid; the task is 3-way signal-type
classification.  Noise is Gaussian with standard deviation sigma_mult times
the signal amplitude, so individual measurements are far below the noise
floor and averaging across the set is essential.
"""

from __future__ import annotations

import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .dss import CircConv, FullDense, LayerConfig, Model, ModelConfig
from .tensor import ParamStore, backward, softmax_probs, softmax_xent

CLASS_NAMES = ("sine", "rectangular", "sawtooth")


# -------------------------------------------------------------------- dataset

@dataclass(frozen=True)
class DatasetSpec:
    train_count: int
    val_count: int
    test_count: int
    n: int = 25
    T: int = 100
    sigma_mult: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if min(self.train_count, self.val_count, self.test_count) <= 0:
            raise ValueError("sample counts must be positive")


@dataclass(frozen=True)
class Dataset:
    measurements: np.ndarray  # (count, n, T)
    labels: np.ndarray  # (count,) in {0, 1, 2}

    def __len__(self):
        return self.labels.size

    def subset(self, idx) -> "Dataset":
        return Dataset(self.measurements[idx], self.labels[idx])


def _clean_signal(kind, freq, amp, phase, shift, t):
    arg = freq * t + phase
    if kind == 0:
        return amp * np.sin(arg) + shift
    if kind == 1:
        return amp * np.sign(np.sin(arg)) + shift
    # saw-tooth ramping -amp..amp once per period
    frac = (arg / (2 * np.pi)) % 1.0
    return amp * (2.0 * frac - 1.0) + shift


def _gen_split(rng, count, n, T, sigma_mult):
    t = 2.0 * np.pi * np.arange(T) / T
    X = np.empty((count, n, T))
    y = np.empty(count, dtype=np.int64)
    for i in range(count):
        kind = int(rng.integers(0, 3))
        freq = rng.uniform(1.0, 10.0)
        amp = rng.uniform(1.0, 10.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        shift = rng.uniform(-5.0, 5.0)
        clean = _clean_signal(kind, freq, amp, phase, shift, t)
        X[i] = clean + rng.normal(0.0, sigma_mult * amp, size=(n, T))
        y[i] = kind
    return Dataset(X, y)


def gen_signal_dataset(spec: DatasetSpec):
    """Reproducible (train, val, test) splits from one seed."""
    rng = np.random.default_rng(spec.seed)
    return tuple(
        _gen_split(rng, c, spec.n, spec.T, spec.sigma_mult)
        for c in (spec.train_count, spec.val_count, spec.test_count)
    )


DATASET_MAGIC = b"EQDS"


def save_dataset(ds: Dataset, path) -> None:
    c, n, T = ds.measurements.shape
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<III", c, n, T))
        fh.write(ds.measurements.astype("<f8").tobytes())
        fh.write(ds.labels.astype("<i8").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        if fh.read(4) != DATASET_MAGIC:
            raise ValueError(f"{path}: not a dataset cache file")
        c, n, T = struct.unpack("<III", fh.read(12))
        X = np.frombuffer(fh.read(8 * c * n * T), dtype="<f8").reshape(c, n, T)
        y = np.frombuffer(fh.read(8 * c), dtype="<i8")
    return Dataset(X.copy(), y.copy())


# ----------------------------------------------------------------------- adam

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, store: ParamStore) -> None:
    """Bias-corrected Adam update in place; clears gradients."""
    for name, t in store.items():
        if t.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, t in sorted(store.items()):
        g = t.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        mhat = state.m[name] / c1
        vhat = state.v[name] / c2
        t.data = t.data - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    store.zero_grad()


# ------------------------------------------------------------------- training

@dataclass
class Metrics:
    train_loss: list
    val_accuracy: list
    test_accuracy: float
    seconds: float
    seed: int
    epochs_ran: int


class DivergenceError(RuntimeError):
    def __init__(self, epoch):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


def model_input(model: Model, measurements: np.ndarray) -> np.ndarray:
    """(count, n, T) measurements to the model's (count, n, f, d) layout.

    Signal models see one channel of d = T positions; DeepSets models see the
    T samples as plain features with d = 1.
    """
    if model.config.d == 1:
        return measurements[:, :, :, None]
    return measurements[:, :, None, :]


def evaluate(model: Model, ds: Dataset, batch: int = 128) -> float:
    """Argmax-class accuracy; no gradient recording."""
    hits = 0
    X = model_input(model, ds.measurements)
    for lo in range(0, len(ds), batch):
        logits = model(X[lo : lo + batch]).data
        hits += int((softmax_probs(logits).argmax(axis=1) == ds.labels[lo : lo + batch]).sum())
    return hits / len(ds)


def train_model(
    model: Model,
    data,
    epochs: int = 30,
    lr: float = 1e-3,
    batch: int = 64,
    seed: int = 0,
    patience: int = 8,
    verbose: bool = False,
) -> Metrics:
    """Mini-batch Adam with validation-based early stopping.

    Restores the checkpoint with the best validation accuracy before the
    final test evaluation.
    """
    train, val, test = data
    rng = np.random.default_rng(seed)
    state = AdamState(lr=lr)
    t0 = time.time()
    X = model_input(model, train.measurements)
    losses, val_accs = [], []
    best_acc, best_state, since_best = -1.0, model.snapshot(), 0
    epochs_ran = 0
    for epoch in range(epochs):
        order = rng.permutation(len(train))
        epoch_loss = 0.0
        for lo in range(0, len(train), batch):
            idx = order[lo : lo + batch]
            model.store.zero_grad()
            loss = softmax_xent(model(X[idx], training=True), train.labels[idx])
            if not np.isfinite(loss.item()):
                raise DivergenceError(epoch)
            backward(loss)
            adam_step(state, model.store)
            epoch_loss += loss.item() * idx.size
        epochs_ran = epoch + 1
        losses.append(epoch_loss / len(train))
        acc = evaluate(model, val)
        val_accs.append(acc)
        if verbose:
            print(f"epoch {epoch:3d}  loss {losses[-1]:.4f}  val {acc:.3f}")
        if acc > best_acc:
            best_acc, best_state, since_best = acc, model.snapshot(), 0
        else:
            since_best += 1
            if since_best >= patience:
                break
    model.restore(best_state)
    return Metrics(
        train_loss=losses,
        val_accuracy=val_accs,
        test_accuracy=evaluate(model, test),
        seconds=time.time() - t0,
        seed=seed,
        epochs_ran=epochs_ran,
    )


# ------------------------------------------------------------- model builders

METHODS = ("dss_sum", "dss_max", "siamese_ds", "deepsets")

METHOD_LR = {
    "dss_sum": 2e-3,
    "dss_max": 2e-3,
    "siamese_ds": 2e-3,
    "deepsets": 5e-3,
}

# (epochs, patience) overrides: the flat-vector baseline needs a longer
# budget to converge; convolutional models plateau within a few epochs.
METHOD_SCHEDULE = {
    "deepsets": (30, 6),
}


def build_method_model(method: str, n: int, T: int, seed: int) -> Model:
    """Desk-scale architectures, roughly a quarter of the original widths."""
    conv = CircConv(5)
    if method in ("dss_sum", "dss_max"):
        kind = method
        layers = (
            LayerConfig(kind, conv, 1, 12, use_norm=True, pool=True),
            LayerConfig(kind, conv, 12, 12, use_norm=True, pool=True),
            LayerConfig(kind, conv, 12, 8, use_norm=True, collapse_d=True),
        )
    elif method == "siamese_ds":
        layers = (
            LayerConfig("siamese", conv, 1, 14, use_norm=True, pool=True),
            LayerConfig("siamese", conv, 14, 14, use_norm=True, pool=True,
                        collapse_d=True),
            LayerConfig("deepsets", FullDense(), 14, 10, use_norm=True),
        )
    elif method == "deepsets":
        # elements as plain T-dimensional feature vectors: d = 1, f = T
        cfg = ModelConfig(
            (
                LayerConfig("deepsets", FullDense(), T, 64, use_norm=True),
                LayerConfig("deepsets", FullDense(), 64, 64, use_norm=True),
                LayerConfig("deepsets", FullDense(), 64, 32, use_norm=True),
            ),
            {"type": "invariant", "mlp": [32], "classes": 3},
            n=n,
            d=1,
        )
        return Model(cfg, seed=seed)
    else:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    cfg = ModelConfig(
        layers, {"type": "invariant", "mlp": [32], "classes": 3}, n=n, d=T
    )
    return Model(cfg, seed=seed)


# ----------------------------------------------------------------- comparison

CSV_HEADER = "method,train_size,seed,test_accuracy,epochs_ran,seconds"


def run_comparison(
    train_sizes,
    methods,
    seeds,
    n: int = 25,
    T: int = 100,
    sigma_mult: float = 3.0,
    epochs: int = 10,
    batch: int = 64,
    val_count: int = 300,
    test_count: int = 600,
    lr_override: float | None = None,
    verbose: bool = False,
):
    """Train every (size, method, seed) cell on disjoint fresh splits.

    Returns CSV rows (list of dicts) in deterministic cell-key order.
    """
    rows = []
    cells = sorted(
        (m, int(s), int(sd)) for m in methods for s in train_sizes for sd in seeds
    )
    for method, size, seed in cells:
        spec = DatasetSpec(size, val_count, test_count, n=n, T=T,
                           sigma_mult=sigma_mult, seed=seed)
        data = gen_signal_dataset(spec)
        model = build_method_model(method, n, T, seed=seed)
        lr = lr_override if lr_override is not None else METHOD_LR.get(method, 1e-3)
        cell_epochs, cell_patience = METHOD_SCHEDULE.get(method, (epochs, 3))
        metrics = train_model(
            model, data, epochs=cell_epochs, lr=lr, batch=batch, seed=seed,
            patience=cell_patience, verbose=verbose,
        )
        rows.append(
            {
                "method": method,
                "train_size": size,
                "seed": seed,
                "test_accuracy": metrics.test_accuracy,
                "epochs_ran": metrics.epochs_ran,
                "seconds": metrics.seconds,
            }
        )
        if verbose:
            print(
                f"{method:12s} size={size:5d} seed={seed} "
                f"acc={metrics.test_accuracy:.3f} ({metrics.seconds:.0f}s)"
            )
    return rows


def rows_to_csv(rows) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(
            f"{r['method']},{r['train_size']},{r['seed']},"
            f"{r['test_accuracy']:.4f},{r['epochs_ran']},{r['seconds']:.2f}"
        )
    return "\n".join(lines) + "\n"


def worker_count() -> int:
    cap = os.environ.get("EQUISET_THREADS")
    if cap:
        return max(1, int(cap))
    return 1
