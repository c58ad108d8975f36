"""Mini-batch training with early stopping.

A batch is every window from a group of 32 surgeries, shuffled within the
group. Gradients for one batch are accumulated over fixed-size microbatches
(each term pre-scaled by the full-batch denominators, so the parameter update
is the exact full-batch update independent of the microbatch size), followed
by a single Adam step.

The tracked objective is the mean prediction loss plus the aux weight times
the mean forecast and reconstruction losses; truncated-future windows are
excluded from the forecast mean. Early stopping watches the validation
prediction loss (the forecast+reconstruction mean for the predictor-free
variant) and restores the best parameters afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import rng as rng_mod
from .data import DataError, PreparedSurgery, window_matrix
from .model import DesatModel, batch_losses, joint_loss
from .optim import Adam


class NumericError(RuntimeError):
    """Training hit a non-finite loss; diagnostics were dumped if configured."""


@dataclass
class TrainConfig:
    epochs: int = 80
    patience: int = 10
    batch_surgeries: int = 32
    microbatch: int = 512
    lr: float = 1e-3
    verbose: bool = False
    diagnostics_dir: str | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.patience < 1:
            raise ValueError("epochs and patience must be >= 1")
        if self.batch_surgeries < 1 or self.microbatch < 1:
            raise ValueError("batch_surgeries and microbatch must be >= 1")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    pred_loss: float
    forecast_loss: float
    recon_loss: float
    val_loss: float


HISTORY_HEADER = "epoch,train_loss,pred_loss,forecast_loss,recon_loss,val_pred_loss"


def history_csv(history) -> str:
    lines = [HISTORY_HEADER]
    for h in history:
        lines.append(f"{h.epoch},{h.train_loss:.8g},{h.pred_loss:.8g},"
                     f"{h.forecast_loss:.8g},{h.recon_loss:.8g},{h.val_loss:.8g}")
    return "\n".join(lines) + "\n"


def _stack_batch(prepared: list[PreparedSurgery], window: int):
    xs, ys, ms, us, trs = [], [], [], [], []
    for ps in prepared:
        xs.append(window_matrix(ps.x, window))
        ys.append(ps.y)
        ms.append(ps.m)
        us.append(ps.u)
        trs.append(ps.truncated)
    return (np.concatenate(xs), np.concatenate(ys).astype(np.float64),
            np.concatenate(ms).astype(np.float64), np.concatenate(us),
            np.concatenate(trs).astype(bool))


def _loss_sums(model: DesatModel, x, y, m, u, tr, microbatch: int,
               training: bool, drop_rng, scale=None, leaves=None):
    """Accumulate per-branch loss sums over microbatches.

    With ``scale`` = (n, n_forecast, n_recon_elems) the scaled joint loss is
    also backpropagated per microbatch, accumulating exact full-batch
    gradients into ``leaves``.
    """
    n = x.shape[0]
    sums = {"pred": 0.0, "forecast": 0.0, "recon": 0.0, "n": 0, "n_f": 0, "n_r": 0}
    for lo in range(0, n, microbatch):
        sl = slice(lo, lo + microbatch)
        xc = np.ascontiguousarray(x[sl])
        losses = batch_losses(model, xc, y[sl], m[sl], u[sl], tr[sl],
                              training=training, drop_rng=drop_rng)
        if scale is not None:
            n_all, nf_all, nr_all = scale
            micro = joint_loss(losses.pred_sum * (1.0 / n_all),
                               losses.forecast_sum * (1.0 / max(nf_all, 1)),
                               losses.recon_sum * (1.0 / nr_all),
                               model.cfg.aux_weight)
            if not np.isfinite(micro.data):
                raise _numeric_abort(model, xc, y[sl], m[sl], u[sl])
            ad.backward(micro, leaves=leaves or ())
        for key, t in (("pred", losses.pred_sum), ("forecast", losses.forecast_sum),
                       ("recon", losses.recon_sum)):
            v = float(t.data) if isinstance(t, ad.Tensor) else float(t)
            if not np.isfinite(v):
                raise _numeric_abort(model, xc, y[sl], m[sl], u[sl])
            sums[key] += v
        sums["n"] += losses.n_samples
        sums["n_f"] += losses.n_forecast
        sums["n_r"] += losses.n_recon_elems
    return sums


def _numeric_abort(model: DesatModel, x, y, m, u) -> NumericError:
    out_dir = getattr(model, "_diagnostics_dir", None)
    where = ""
    if out_dir:
        path = Path(out_dir) / "nan_batch.npz"
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, x=x, y=y, m=m, u=u,
                 **{f"param_{i}": p.data for i, (_, p) in enumerate(model.parameters())})
        where = f"; offending batch dumped to {path}"
    return NumericError(f"non-finite loss during training{where}")


def _means(sums) -> tuple[float, float, float]:
    pred = sums["pred"] / max(sums["n"], 1)
    forecast = sums["forecast"] / max(sums["n_f"], 1)
    recon = sums["recon"] / max(sums["n_r"], 1)
    return pred, forecast, recon


def validation_loss(model: DesatModel, prepared: list[PreparedSurgery],
                    microbatch: int = 2048) -> float:
    """Early-stopping metric: mean masked prediction loss, or the mean
    forecast+reconstruction loss when the variant has no predictor."""
    x, y, m, u, tr = _stack_batch(prepared, model.cfg.window)
    with ad.no_grad():
        sums = _loss_sums(model, x, y, m, u, tr, microbatch, False, None)
    pred, forecast, recon = _means(sums)
    if model.predictor is None:
        return forecast + recon
    return pred


def train_model(model: DesatModel, train_set: list[PreparedSurgery],
                val_set: list[PreparedSurgery], tcfg: TrainConfig) -> list[EpochStats]:
    """Train in place; returns per-epoch history with the best weights restored."""
    if not train_set:
        raise DataError("training set is empty")
    if not val_set:
        raise DataError("validation set is empty")
    model._diagnostics_dir = tcfg.diagnostics_dir
    cfg = model.cfg
    params = model.tensors()
    opt = Adam(params, lr=tcfg.lr)
    shuffle_rng = rng_mod.stream(cfg.seed, "shuffle")
    drop_rng = rng_mod.stream(cfg.seed, "dropout")

    best_val = np.inf
    best_state = model.state_arrays()
    best_epoch = 0
    bad_epochs = 0
    history: list[EpochStats] = []

    for epoch in range(1, tcfg.epochs + 1):
        order = shuffle_rng.permutation(len(train_set))
        epoch_sums = {"pred": 0.0, "forecast": 0.0, "recon": 0.0, "n": 0, "n_f": 0, "n_r": 0}
        for lo in range(0, len(order), tcfg.batch_surgeries):
            group = [train_set[i] for i in order[lo:lo + tcfg.batch_surgeries]]
            x, y, m, u, tr = _stack_batch(group, cfg.window)
            perm = shuffle_rng.permutation(x.shape[0])
            x, y, m, u, tr = x[perm], y[perm], m[perm], u[perm], tr[perm]
            scale = (x.shape[0], int((~tr).sum()), x.size)
            opt.zero_grad()
            sums = _loss_sums(model, x, y, m, u, tr, tcfg.microbatch,
                              True, drop_rng, scale=scale, leaves=params)
            opt.step()
            for k in epoch_sums:
                epoch_sums[k] += sums[k]

        pred, forecast, recon = _means(epoch_sums)
        train_loss = (0.0 if model.predictor is None else pred) \
            + cfg.aux_weight * (forecast + recon)
        val = validation_loss(model, val_set)
        history.append(EpochStats(epoch, train_loss, pred, forecast, recon, val))
        if tcfg.verbose:
            print(f"epoch {epoch:3d}  train {train_loss:.5f}  pred {pred:.5f}  "
                  f"forecast {forecast:.5f}  recon {recon:.5f}  val {val:.5f}",
                  flush=True)

        if val < best_val - 1e-12:
            best_val = val
            best_state = model.state_arrays()
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= tcfg.patience:
                break

    model.load_arrays(best_state)
    model._best_epoch = best_epoch
    return history
