"""CP low-rank baseline: trilinear reconstruction and its minibatch training.

The predicted value of cell (i, j, k) is the rank-R inner product
sum_r S[i,r] * U[j,r] * V[k,r]; the loss is half the sum of squared
residuals over observed cells plus an optional quadratic penalty on the
three factor matrices.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .data import Entries
from .errors import DataError
from .model import FactorModel, init_factor_model
from .training import (EpochRecord, GradcheckReport, TrainConfig, TrainTrace,
                       _raise_divergence, check_unit_range, finite_difference_grads,
                       l2_term, make_optimizer, relative_errors, rmse_of)

CP_DEFAULT_LR = 1e-2
CP_DEFAULT_L2 = 0.02


def cpd_predict(model: FactorModel, i: int, j: int, k: int) -> float:
    """Trilinear score of a single cell."""
    n_i, n_j, n_k = model.dims
    if not (0 <= i < n_i and 0 <= j < n_j and 0 <= k < n_k):
        raise DataError(f"index ({i}, {j}, {k}) out of range for dims {model.dims}")
    return float(np.sum(model.S[i] * model.U[j] * model.V[k]))


def cp_predict_batch(model: FactorModel, ii, jj, kk) -> np.ndarray:
    return kernels.cp_predict(model.S, model.U, model.V, ii, jj, kk)


def cp_loss(model: FactorModel, entries: Entries, l2: float = 0.0) -> float:
    r = cp_predict_batch(model, entries.i, entries.j, entries.k) - entries.x
    return 0.5 * float(r @ r) + l2_term(_params(model), l2)


def cp_grads(model: FactorModel, entries: Entries, l2: float = 0.0):
    """Loss and gradients for the three factor matrices."""
    sse, d_s, d_u, d_v = kernels.cp_residual_grads(
        model.S, model.U, model.V, entries.i, entries.j, entries.k, entries.x)
    grads = {"S": d_s, "U": d_u, "V": d_v}
    loss = 0.5 * float(sse)
    if l2 > 0.0:
        for name, p in _params(model).items():
            grads[name] = grads[name] + l2 * p
        loss += l2_term(_params(model), l2)
    return loss, grads


def _params(model: FactorModel) -> dict[str, np.ndarray]:
    return {"S": model.S, "U": model.U, "V": model.V}


def cp_gradcheck(rank: int = 3, dims=(4, 3, 5), n_entries: int = 6,
                 l2: float = 0.0, step: float = 1e-5, threshold: float = 1e-4,
                 seed: int = 0) -> GradcheckReport:
    """Central-difference check of cp_grads at a generic random point."""
    rng = np.random.default_rng(seed)
    model = FactorModel(
        S=rng.uniform(0.2, 1.0, (dims[0], rank)),
        U=rng.uniform(0.2, 1.0, (dims[1], rank)),
        V=rng.uniform(0.2, 1.0, (dims[2], rank)),
    )
    cube = int(np.prod(dims))
    flat = rng.choice(cube, size=n_entries, replace=False)
    ii, jj, kk = np.unravel_index(flat, dims)
    entries = Entries(ii.astype(np.intp), jj.astype(np.intp), kk.astype(np.intp),
                      rng.uniform(0.05, 0.95, n_entries))
    _, analytic = cp_grads(model, entries, l2)
    numeric = finite_difference_grads(
        lambda: cp_loss(model, entries, l2), _params(model), step)
    errs = relative_errors(analytic, numeric)
    failed = [name for name, err in errs.items() if err >= threshold]
    return GradcheckReport(errs, failed, threshold)


def cp_train(train: Entries, val: Entries, dims,
             config: TrainConfig) -> tuple[FactorModel, TrainTrace]:
    """Minibatch training of the factor matrices.

    Mirrors the nonlinear loop: seeded shuffles, per-epoch validation RMSE,
    tolerance-based early stop, and best-validation-epoch parameters returned.
    With ``config.nonneg`` the factors are projected onto [0, inf) after
    every batch update.
    """
    if len(train) == 0:
        raise DataError("training set is empty")
    if len(val) == 0:
        raise DataError("validation set is empty")
    check_unit_range(train, "training")
    check_unit_range(val, "validation")

    rng = np.random.default_rng(config.seed)
    model = init_factor_model(dims, config.rank, rng)
    params = _params(model)
    opt = make_optimizer(config, params)
    n = len(train)

    initial_loss = cp_loss(model, train, config.l2)
    initial_val = rmse_of(cp_predict_batch(model, val.i, val.j, val.k), val.x)
    trace = TrainTrace(initial_loss, initial_val,
                       best_epoch=0, best_val_rmse=initial_val)
    best_model = model.copy()
    prev_val = initial_val

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = train.take(order[start:start + config.batch_size])
            _, d_s, d_u, d_v = kernels.cp_residual_grads(
                model.S, model.U, model.V, batch.i, batch.j, batch.k, batch.x)
            grads = {"S": d_s, "U": d_u, "V": d_v}
            if config.l2 > 0.0:
                scale = config.l2 * len(batch) / n
                for name, p in params.items():
                    grads[name] = grads[name] + scale * p
            opt.step(params, grads)
            if config.nonneg:
                for p in params.values():
                    np.maximum(p, 0.0, out=p)

        train_loss = cp_loss(model, train, config.l2)
        val_rmse = rmse_of(cp_predict_batch(model, val.i, val.j, val.k), val.x)
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
