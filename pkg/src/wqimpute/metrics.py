"""Evaluation reports and the synthetic benchmark generator."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .data import SparseTensor
from .errors import ConfigError, DataError
from .kernels.numpy_backend import sigmoid

# causal smoothing taps for the nonlinear generator: current slot gets the
# largest weight, two slots back the smallest
SMOOTH_TAPS = (0.2, 0.3, 0.5)
# steep enough that the squashed cube has high multilinear rank
NONLINEAR_GAIN = 3.0


@dataclass(frozen=True)
class EvalReport:
    """RMSE/MAE over one evaluation set, with enough context to read it alone."""

    rmse: float
    mae: float
    count: int
    model_kind: str
    split_name: str
    scale: str  # "normalized" or "raw"

    def metrics_line(self) -> str:
        return f"RMSE {self.rmse:.4f}, MAE {self.mae:.4f}"

    def text_block(self) -> str:
        return "\n".join([
            f"model {self.model_kind}, split {self.split_name}, "
            f"{self.count} entries ({self.scale} scale)",
            self.metrics_line(),
        ])

    def csv_line(self) -> str:
        return ",".join([self.model_kind, self.split_name, self.scale,
                         str(self.count), repr(self.rmse), repr(self.mae)])


EVAL_CSV_HEADER = "model,split,scale,count,rmse,mae"


def score(targets: np.ndarray, predictions: np.ndarray, model_kind: str = "cp",
          split_name: str = "test", scale: str = "normalized") -> EvalReport:
    """RMSE and MAE of predictions against targets (order-independent)."""
    targets = np.asarray(targets, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    if targets.shape != predictions.shape or targets.ndim != 1:
        raise DataError(
            f"targets and predictions must be equal-length vectors, "
            f"got {targets.shape} and {predictions.shape}")
    if len(targets) == 0:
        raise DataError("cannot score an empty evaluation set")
    d = predictions - targets
    rmse = float(np.sqrt(np.mean(d * d)))
    mae = float(np.mean(np.abs(d)))
    return EvalReport(rmse=rmse, mae=mae, count=len(targets),
                      model_kind=model_kind, split_name=split_name, scale=scale)


class SynthOracle:
    """Ground truth behind a synthetic tensor; answers any cell, observed or not."""

    def __init__(self, dense: np.ndarray):
        dense = np.asarray(dense, dtype=np.float64)
        dense.setflags(write=False)
        self._dense = dense

    @property
    def dims(self) -> tuple[int, int, int]:
        return self._dense.shape

    def value(self, i: int, j: int, k: int) -> float:
        n_i, n_j, n_k = self._dense.shape
        if not (0 <= i < n_i and 0 <= j < n_j and 0 <= k < n_k):
            raise DataError(f"index ({i}, {j}, {k}) out of range for dims {self.dims}")
        return float(self._dense[i, j, k])

    def dense(self) -> np.ndarray:
        return self._dense


def _smooth_causal(V: np.ndarray) -> np.ndarray:
    """Blend each time-slot embedding with its two predecessors (zero-padded)."""
    out = SMOOTH_TAPS[2] * V.copy()
    out[1:] += SMOOTH_TAPS[1] * V[:-1]
    out[2:] += SMOOTH_TAPS[0] * V[:-2]
    return out


def synth_generate(dims, rank: int, observed_fraction: float = 0.3,
                   noise: float = 0.0, nonlinear: bool = False,
                   seed: int = 0) -> tuple[SparseTensor, SynthOracle]:
    """Build a synthetic sparse tensor plus the oracle that generated it.

    Linear mode: trilinear combination of uniform factors, scaled by the cube
    maximum into [0, 1]. Nonlinear mode: the time factors are causally
    smoothed first and the combination is squashed through a standardized
    sigmoid, giving structure a plain low-rank fit cannot express.

    round(observed_fraction * |cube|) distinct cells are sampled without
    replacement; Gaussian noise (clipped back to [0, 1]) is added only when
    noise > 0, so noiseless observations equal the oracle exactly.
    """
    n_i, n_j, n_k = dims
    if min(dims) < 1:
        raise ConfigError(f"dims must be positive, got {dims}")
    if rank < 1:
        raise ConfigError(f"rank must be positive, got {rank}")
    if not 0.0 < observed_fraction <= 1.0:
        raise ConfigError(f"observed fraction must be in (0, 1], got {observed_fraction}")
    if noise < 0.0:
        raise ConfigError(f"noise must be >= 0, got {noise}")

    rng = np.random.default_rng(seed)
    S = rng.uniform(0.0, 1.0, (n_i, rank))
    U = rng.uniform(0.0, 1.0, (n_j, rank))
    V = rng.uniform(0.0, 1.0, (n_k, rank))

    if nonlinear:
        lin = np.einsum("ir,jr,kr->ijk", S, U, _smooth_causal(V))
        std = lin.std()
        if std == 0.0:
            raise ConfigError("degenerate synthetic cube: constant interactions")
        dense = sigmoid(NONLINEAR_GAIN * (lin - lin.mean()) / std)
    else:
        lin = np.einsum("ir,jr,kr->ijk", S, U, V)
        peak = lin.max()
        if peak == 0.0:
            raise ConfigError("degenerate synthetic cube: all-zero interactions")
        dense = lin / peak

    cube = n_i * n_j * n_k
    n_obs = int(round(observed_fraction * cube))
    flat = rng.choice(cube, size=n_obs, replace=False)
    ii, jj, kk = np.unravel_index(flat, dims)
    values = dense[ii, jj, kk]
    if noise > 0.0:
        values = np.clip(values + rng.normal(0.0, noise, n_obs), 0.0, 1.0)

    start = datetime(2020, 1, 1)
    tensor = SparseTensor(
        dims=(n_i, n_j, n_k),
        i=ii.astype(np.intp), j=jj.astype(np.intp), k=kk.astype(np.intp),
        values=np.asarray(values, dtype=np.float64),
        station_ids=tuple(f"st{n:03d}" for n in range(n_i)),
        parameter_names=tuple(f"param{n:02d}" for n in range(n_j)),
        time_stamps=tuple((start + timedelta(hours=n)).isoformat() for n in range(n_k)),
    )
    return tensor, SynthOracle(dense)
