"""Minibatch training with early stopping, plus finite-difference gradient checks.

Both model families share the same loop shape: seeded shuffle, synchronous
minibatch gradient steps (gradients taken at the batch-start parameters),
one full train-loss / validation-RMSE measurement per epoch, and a stop when
the validation RMSE change between adjacent epochs falls below the tolerance.
The parameters from the best validation epoch are what training returns.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import Entries
from .errors import ConfigError, DataError, DivergenceError
from .model import NlrModel, init_nlr_model, require_min_rank

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# gradient tensors in the order the batch kernels return them
PARAM_NAMES = ("S", "U", "V", "encoder_w", "encoder_b",
               "conv3_k", "conv3_b", "conv2_k", "conv2_b",
               "conv1_k", "conv1_b", "head_w", "head_b")

TRACE_HEADER = ["epoch", "train_loss", "val_rmse"]


@dataclass
class TrainConfig:
    rank: int = 10
    window: int = 3
    channels: tuple[int, int, int] = (16, 8, 4)
    learning_rate: float = 1e-3
    epochs: int = 1000
    tolerance: float = 1e-5
    batch_size: int = 128
    l2: float = 0.0
    seed: int = 0
    optimizer: str = "adam"
    nonneg: bool = False

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.rank < 1:
            raise ConfigError(f"rank must be positive, got {self.rank}")
        if self.window < 1:
            raise ConfigError(f"window must be positive, got {self.window}")
        if len(self.channels) != 3 or min(self.channels) < 1:
            raise ConfigError(f"channels must be three positive widths, got {self.channels}")
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        # tolerance may be inf (stop after the first epoch) but never negative
        if math.isnan(self.tolerance) or self.tolerance < 0:
            raise ConfigError(f"tolerance must be >= 0, got {self.tolerance}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be positive, got {self.batch_size}")
        if not (math.isfinite(self.l2) and self.l2 >= 0):
            raise ConfigError(f"l2 penalty must be >= 0, got {self.l2}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")

    def validate_for_nlr(self) -> None:
        require_min_rank(self.rank)
        if self.nonneg:
            raise ConfigError("nonneg projection is only supported for the cp model")

    def as_dict(self) -> dict:
        return {
            "rank": self.rank, "window": self.window, "channels": list(self.channels),
            "learning_rate": self.learning_rate, "epochs": self.epochs,
            "tolerance": self.tolerance, "batch_size": self.batch_size,
            "l2": self.l2, "seed": self.seed, "optimizer": self.optimizer,
            "nonneg": self.nonneg,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        raw["channels"] = tuple(raw.get("channels", (16, 8, 4)))
        return cls(**raw)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_rmse: float


@dataclass
class TrainTrace:
    """Per-epoch loss/validation history with the stop decision.

    Epoch 0 is the untrained model; records start at epoch 1. ``best_epoch``
    is 0 when no epoch improved on the initial validation RMSE.
    """

    initial_train_loss: float
    initial_val_rmse: float
    records: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = "cap"  # cap | tolerance | divergence
    best_epoch: int = 0
    best_val_rmse: float = float("inf")

    @property
    def epochs_run(self) -> int:
        return len(self.records)

    def val_sequence(self) -> list[float]:
        return [self.initial_val_rmse] + [r.val_rmse for r in self.records]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_HEADER)
            writer.writerow([0, repr(self.initial_train_loss), repr(self.initial_val_rmse)])
            for rec in self.records:
                writer.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_rmse)])

    def summary(self) -> dict:
        final_loss = self.records[-1].train_loss if self.records else self.initial_train_loss
        return {
            "epochs_run": self.epochs_run,
            "stop_reason": self.stop_reason,
            "best_epoch": self.best_epoch,
            "best_val_rmse": self.best_val_rmse,
            "initial_val_rmse": self.initial_val_rmse,
            "final_train_loss": final_loss,
        }


# ---------------------------------------------------------------------------
# optimizers


class SgdOptimizer:
    def __init__(self, learning_rate: float, params: dict):
        self.learning_rate = learning_rate

    def step(self, params: dict, grads: dict) -> None:
        for name, p in params.items():
            p -= self.learning_rate * grads[name]


class AdamOptimizer:
    def __init__(self, learning_rate: float, params: dict):
        self.learning_rate = learning_rate
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - ADAM_BETA1 ** self.t
        c2 = 1.0 - ADAM_BETA2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * (g * g)
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def make_optimizer(config: TrainConfig, params: dict):
    if config.optimizer == "adam":
        return AdamOptimizer(config.learning_rate, params)
    return SgdOptimizer(config.learning_rate, params)


# ---------------------------------------------------------------------------
# loss and gradients


def rmse_of(pred: np.ndarray, target: np.ndarray) -> float:
    d = pred - target
    return float(np.sqrt(np.mean(d * d)))


def check_unit_range(entries: Entries, label: str) -> None:
    if len(entries) and (entries.x.min() < 0.0 or entries.x.max() > 1.0):
        bad = int(np.argmax((entries.x < 0.0) | (entries.x > 1.0)))
        raise DataError(
            f"{label} targets must lie in [0, 1] after normalization; "
            f"entry {bad} has value {entries.x[bad]!r}")


def l2_term(params: dict, l2: float) -> float:
    if l2 == 0.0:
        return 0.0
    return 0.5 * l2 * sum(float(np.sum(p * p)) for p in params.values())


def nlr_loss(model: NlrModel, entries: Entries, l2: float = 0.0) -> float:
    """Half sum of squared residuals plus the quadratic penalty on every tensor."""
    z = model.predict_batch(entries.i, entries.j, entries.k)
    finite = np.isfinite(z)
    if not finite.all():
        n = int(np.argmin(finite))
        raise DivergenceError(
            f"non-finite prediction at entry (i={entries.i[n]}, j={entries.j[n]}, "
            f"k={entries.k[n]})", epoch=None, learning_rate=None)
    r = z - entries.x
    return 0.5 * float(r @ r) + l2_term(model.params(), l2)


def nlr_backward(model: NlrModel, entries: Entries, l2: float = 0.0):
    """Loss and its gradient for every parameter tensor, as a name-keyed dict."""
    out = kernels.nlr_residual_grads(*model.kernel_args(),
                                     entries.i, entries.j, entries.k, entries.x)
    sse = out[0]
    grads = {name: np.asarray(g, dtype=np.float64)
             for name, g in zip(PARAM_NAMES, out[1:])}
    loss = 0.5 * float(sse)
    if l2 > 0.0:
        for name, p in model.params().items():
            grads[name] = grads[name] + l2 * p
        loss += l2_term(model.params(), l2)
    return loss, grads


def _raise_divergence(message: str, epoch: int, config: TrainConfig,
                      trace: TrainTrace) -> None:
    trace.stop_reason = "divergence"
    raise DivergenceError(
        f"{message} (epoch {epoch}, learning rate {config.learning_rate})",
        epoch=epoch, learning_rate=config.learning_rate, trace=trace)


def train_nlr(train: Entries, val: Entries, dims,
              config: TrainConfig) -> tuple[NlrModel, TrainTrace]:
    """Adam/SGD minibatch training of the nonlinear model.

    Returns the parameters from the epoch with the lowest validation RMSE
    (epoch 0, the untrained model, included) together with the full trace.
    """
    config.validate_for_nlr()
    if len(train) == 0:
        raise DataError("training set is empty")
    if len(val) == 0:
        raise DataError("validation set is empty")
    check_unit_range(train, "training")
    check_unit_range(val, "validation")

    rng = np.random.default_rng(config.seed)
    model = init_nlr_model(dims, config.rank, config.window, config.channels, rng)
    params = model.params()
    opt = make_optimizer(config, params)
    n = len(train)

    initial_loss = nlr_loss(model, train, config.l2)
    initial_val = rmse_of(model.predict_batch(val.i, val.j, val.k), val.x)
    trace = TrainTrace(initial_loss, initial_val,
                       best_epoch=0, best_val_rmse=initial_val)
    best_model = model.copy()
    prev_val = initial_val

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = train.take(order[start:start + config.batch_size])
            out = kernels.nlr_residual_grads(*model.kernel_args(),
                                             batch.i, batch.j, batch.k, batch.x)
            grads = {name: np.asarray(g, dtype=np.float64)
                     for name, g in zip(PARAM_NAMES, out[1:])}
            if config.l2 > 0.0:
                # spread the full-batch penalty across batches so one epoch of
                # gradients sums to the gradient of the epoch objective
                scale = config.l2 * len(batch) / n
                for name, p in params.items():
                    grads[name] = grads[name] + scale * p
            opt.step(params, grads)

        try:
            train_loss = nlr_loss(model, train, config.l2)
            val_rmse = rmse_of(model.predict_batch(val.i, val.j, val.k), val.x)
        except DivergenceError as err:
            _raise_divergence(str(err), epoch, config, trace)
        if not (math.isfinite(train_loss) and math.isfinite(val_rmse)):
            _raise_divergence("non-finite training loss", epoch, config, trace)

        trace.records.append(EpochRecord(epoch, train_loss, val_rmse))
        if val_rmse < trace.best_val_rmse:
            trace.best_epoch = epoch
            trace.best_val_rmse = val_rmse
            best_model = model.copy()
        if abs(val_rmse - prev_val) < config.tolerance:
            trace.stop_reason = "tolerance"
            break
        prev_val = val_rmse

    return best_model, trace


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradcheckReport:
    max_rel_err: dict[str, float]
    failed: list[str]
    threshold: float

    @property
    def passed(self) -> bool:
        return not self.failed

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values())

    def failed_groups(self) -> list[str]:
        groups = []
        for name in self.failed:
            base, _, suffix = name.rpartition("_")
            group = base if suffix in ("k", "b", "w") and base else name
            if group not in groups:
                groups.append(group)
        return groups

    def lines(self) -> list[str]:
        out = []
        for name, err in self.max_rel_err.items():
            mark = "FAIL" if name in self.failed else "ok"
            out.append(f"{name:>10s}  max rel err {err:.3e}  {mark}")
        if self.passed:
            out.append(f"PASS (max rel err {self.worst:.3e})")
        else:
            out.append("FAIL " + " ".join(self.failed_groups()))
        return out


def finite_difference_grads(loss_fn, params: dict, step: float) -> dict:
    """Central-difference gradient of loss_fn for every scalar in params."""
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            f_plus = loss_fn()
            p[idx] = orig - step
            f_minus = loss_fn()
            p[idx] = orig
            g[idx] = (f_plus - f_minus) / (2.0 * step)
        out[name] = g
    return out


def relative_errors(analytic: dict, numeric: dict, skip_below: float = 1e-8) -> dict:
    """Per-tensor max of |a-n|/max(|a|,|n|), skipping entries tiny on both sides."""
    out = {}
    for name, a in analytic.items():
        n = numeric[name]
        a = np.atleast_1d(a)
        n = np.atleast_1d(n)
        scale = np.maximum(np.abs(a), np.abs(n))
        keep = scale >= skip_below
        out[name] = float((np.abs(a - n)[keep] / scale[keep]).max()) if keep.any() else 0.0
    return out


def corrupt_grads(grads: dict, label: str) -> None:
    """Deliberately break the gradient group named by label (for self-test)."""
    hit = [n for n in grads if n == label or n.startswith(label + "_")]
    if not hit:
        raise ConfigError(
            f"unknown gradient group {label!r}; valid groups: "
            + " ".join(sorted({g.rpartition('_')[0] or g for g in grads})))
    for name in hit:
        grads[name] = -grads[name] + 1e-3


def _randomize_for_gradcheck(model: NlrModel, rng: np.random.Generator) -> None:
    """Move every parameter to a generic O(1) point.

    The training init keeps factors in (0, 0.1] and biases at zero, which puts
    conv preactivations within a finite-difference step of the ReLU kink; the
    check must run where the loss is smooth in a +-step neighborhood.
    """
    p = model.params()
    for name in ("S", "U", "V"):
        p[name][...] = rng.uniform(0.2, 1.0, p[name].shape)
    p["encoder_w"][...] = rng.uniform(-0.6, 0.6, p["encoder_w"].shape)
    p["encoder_b"][...] = rng.uniform(-0.05, 0.2, p["encoder_b"].shape)
    for name in ("conv3_k", "conv2_k", "conv1_k"):
        p[name][...] = rng.uniform(-0.5, 0.5, p[name].shape)
    for name in ("conv3_b", "conv2_b", "conv1_b"):
        p[name][...] = rng.uniform(-0.1, 0.1, p[name].shape)
    p["head_w"][...] = rng.uniform(-1.0, 1.0, p["head_w"].shape)
    p["head_b"][...] = rng.uniform(-0.5, 0.5)


def gradcheck(rank: int = 7, window: int = 2, channels=(2, 2, 2),
              dims=(5, 4, 9), n_entries: int = 5, l2: float = 0.0,
              step: float = 1e-5, threshold: float = 1e-4,
              seed: int = 0, corrupt: str | None = None) -> GradcheckReport:
    """Compare analytic gradients against central differences on a tiny model."""
    rng = np.random.default_rng(seed)
    model = init_nlr_model(dims, rank, window, channels, rng)
    _randomize_for_gradcheck(model, rng)
    cube = int(np.prod(dims))
    flat = rng.choice(cube, size=n_entries, replace=False)
    ii, jj, kk = np.unravel_index(flat, dims)
    entries = Entries(ii.astype(np.intp), jj.astype(np.intp), kk.astype(np.intp),
                      rng.uniform(0.05, 0.95, n_entries))

    _, analytic = nlr_backward(model, entries, l2)
    if corrupt is not None:
        corrupt_grads(analytic, corrupt)
    params = model.params()
    numeric = finite_difference_grads(lambda: nlr_loss(model, entries, l2), params, step)
    errs = relative_errors(analytic, numeric)
    failed = [name for name, err in errs.items() if err >= threshold]
    return GradcheckReport(errs, failed, threshold)
