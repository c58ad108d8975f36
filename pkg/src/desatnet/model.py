"""The joint desaturation model: encoder, reconstructor, forecaster, predictor.

A window of vitals is rewritten step-by-step by a memory attention layer,
encoded by a dilated causal stack into a latent vector z, and mapped by a
fully connected transition block to a state vector p shared by all heads:

- the reconstructor tiles z across the window and decodes it back to the
  input (regularization by reconstruction),
- the forecaster tiles p, decodes per-step label scores, and scores future
  low-SpO2 label paths with a linear-chain CRF,
- the predictor turns p into the probability that an event starts within the
  labeling horizon.

Variants: ``full`` (everything), ``mem_minus`` (memory attention swapped for
two stacked per-step linear layers), ``f_minus`` (no forecaster),
``r_plus_f`` (no predictor; alarms come from decoded forecasts).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import rng as rng_mod
from .autodiff import ShapeError, Tensor
from .crf import CrfChain, crf_nll, crf_viterbi
from .data import window_matrix
from .layers import FcBlock, Linear, MemoryBank, TcnStack

VARIANTS = ("full", "mem_minus", "f_minus", "r_plus_f")
OUTCOMES = ("general", "persistent")

_OUTCOME_DEFAULTS = {
    # outcome: (window, lead offset past horizon, aux loss weight, min event run)
    "general": (16, 1, 0.01, 1),
    "persistent": (32, 5, 0.1, 5),
}


class ConfigError(ValueError):
    """Invalid model configuration."""


@dataclass
class ModelConfig:
    """Resolved hyperparameters; zero/negative sentinels pick outcome defaults."""

    outcome: str = "general"
    variant: str = "full"
    n_channels: int = 18
    window: int = 0
    horizon: int = 5
    lead: int = 0
    memory_size: int = 128
    filters: int = 64
    kernel_size: int = 3
    dilations: tuple = (2, 4, 8)
    hidden: int = 128
    aux_weight: float = -1.0
    dropout: float = 0.2
    min_run: int = 0
    spo2_threshold: float = 90.0
    seed: int = 0

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise ConfigError(f"outcome must be one of {OUTCOMES}, got {self.outcome!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        w_def, lead_off, aux_def, run_def = _OUTCOME_DEFAULTS[self.outcome]
        if self.window <= 0:
            self.window = w_def
        if self.lead <= 0:
            self.lead = self.horizon + lead_off
        if self.aux_weight < 0:
            self.aux_weight = aux_def
        if self.min_run <= 0:
            self.min_run = run_def
        self.dilations = tuple(int(d) for d in self.dilations)
        self.window = int(self.window)
        self.lead = int(self.lead)
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.window < 2:
            raise ConfigError("window must be >= 2")
        if not 1 <= self.lead < self.window:
            raise ConfigError(f"lead must be in [1, window), got lead={self.lead} "
                              f"window={self.window}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        for name in ("n_channels", "memory_size", "filters", "kernel_size", "hidden", "min_run"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d


@dataclass
class ForwardOut:
    z: Tensor
    p: Tensor
    xhat: Tensor
    emissions: Optional[Tensor]
    yhat: Optional[Tensor]


class DesatModel:
    """Parameter container plus forward passes for every branch."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        V, F, H, K = cfg.n_channels, cfg.filters, cfg.hidden, cfg.kernel_size

        def init(tag):
            return rng_mod.stream(cfg.seed, "init", tag)

        if cfg.variant == "mem_minus":
            self.memory = None
            self.mem_fc1 = Linear(init("mem_fc1"), V, H)
            self.mem_fc2 = Linear(init("mem_fc2"), H, V)
        else:
            self.memory = MemoryBank(init("memory"), cfg.memory_size, V)
            self.mem_fc1 = self.mem_fc2 = None
        self.encoder = TcnStack(init("encoder"), V, F, K, cfg.dilations, cfg.dropout)
        self.recon_tcn = TcnStack(init("recon_tcn"), F, F, K, cfg.dilations, cfg.dropout)
        self.recon_head = Linear(init("recon_head"), F, V)
        self.transition = FcBlock(init("transition"), F, H, F)
        if cfg.variant == "f_minus":
            self.forecast_tcn = None
            self.emit_head = None
            self.crf = None
        else:
            self.forecast_tcn = TcnStack(init("forecast_tcn"), F, F, K, cfg.dilations, cfg.dropout)
            self.emit_head = Linear(init("emit_head"), F, 2)
            self.crf = CrfChain(2)
        self.predictor = None if cfg.variant == "r_plus_f" else FcBlock(init("predictor"), F, H, 2)

        named = []
        if self.memory is not None:
            named.extend((f"memory.{n}", p) for n, p in self.memory.params())
        else:
            named.extend((f"mem_fc1.{n}", p) for n, p in self.mem_fc1.params())
            named.extend((f"mem_fc2.{n}", p) for n, p in self.mem_fc2.params())
        named.extend((f"encoder.{n}", p) for n, p in self.encoder.params())
        named.extend((f"recon_tcn.{n}", p) for n, p in self.recon_tcn.params())
        named.extend((f"recon_head.{n}", p) for n, p in self.recon_head.params())
        named.extend((f"transition.{n}", p) for n, p in self.transition.params())
        if self.forecast_tcn is not None:
            named.extend((f"forecast_tcn.{n}", p) for n, p in self.forecast_tcn.params())
            named.extend((f"emit_head.{n}", p) for n, p in self.emit_head.params())
            named.extend((f"crf.{n}", p) for n, p in self.crf.params())
        if self.predictor is not None:
            named.extend((f"predictor.{n}", p) for n, p in self.predictor.params())
        self._named_params = named

    # -- parameter registry ---------------------------------------------------

    def parameters(self) -> list:
        return list(self._named_params)

    def tensors(self) -> list:
        return [p for _, p in self._named_params]

    def state_arrays(self) -> dict:
        return {name: p.data.copy() for name, p in self._named_params}

    def load_arrays(self, arrays: dict) -> None:
        names = {name for name, _ in self._named_params}
        missing = names - arrays.keys()
        if missing:
            raise ShapeError(f"missing parameter arrays: {sorted(missing)[:3]}...")
        for name, p in self._named_params:
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != p.data.shape:
                raise ShapeError(f"{name}: shape {a.shape} != expected {p.data.shape}")
            p.data = a.copy()

    # -- forward passes ---------------------------------------------------------

    def _check_input(self, x) -> Tensor:
        x = ad._wrap(x)
        if x.shape[-2] != self.cfg.n_channels:
            raise ShapeError(f"expected {self.cfg.n_channels} channels, got {x.shape[-2]}")
        if x.shape[-1] != self.cfg.window:
            raise ShapeError(f"expected window {self.cfg.window}, got {x.shape[-1]}")
        return x

    def encode(self, x, training: bool = False, drop_rng=None) -> Tensor:
        x = self._check_input(x)
        if self.memory is not None:
            h = self.memory.encode(x)
        else:
            h = self.mem_fc2.channels(self.mem_fc1.channels(x))
        _, z = self.encoder.encode(h, training=training, rng=drop_rng)
        return z

    def reconstruct(self, z: Tensor, training: bool = False, drop_rng=None) -> Tensor:
        tiled = ad.tile_steps(z, self.cfg.window)
        h = self.recon_tcn(tiled, training=training, rng=drop_rng)
        return self.recon_head.channels(h)

    def transition_state(self, z: Tensor) -> Tensor:
        return self.transition(z)

    def forecast_emissions(self, p: Tensor, training: bool = False, drop_rng=None) -> Tensor:
        if self.forecast_tcn is None:
            raise ConfigError("variant f_minus has no forecaster")
        tiled = ad.tile_steps(p, self.cfg.window)
        h = self.forecast_tcn(tiled, training=training, rng=drop_rng)
        return self.emit_head.channels(h)

    def predict_prob(self, p: Tensor) -> Tensor:
        if self.predictor is None:
            raise ConfigError("variant r_plus_f has no predictor")
        probs = ad.softmax(self.predictor(p), axis=-1)
        return probs[..., 1]

    def forward(self, x, training: bool = False, drop_rng=None) -> ForwardOut:
        z = self.encode(x, training, drop_rng)
        xhat = self.reconstruct(z, training, drop_rng)
        p = self.transition_state(z)
        emissions = None if self.forecast_tcn is None else self.forecast_emissions(p, training, drop_rng)
        yhat = None if self.predictor is None else self.predict_prob(p)
        return ForwardOut(z=z, p=p, xhat=xhat, emissions=emissions, yhat=yhat)


# -- losses -------------------------------------------------------------------


def masked_bce(yhat: Tensor, y, m) -> Tensor:
    """Sum of cross-entropy over the batch with in-event samples masked.

    Both the prediction and the target are multiplied by the mask, so masked
    samples contribute H(0, 0) = 0 and exactly zero gradient.
    """
    y = np.asarray(y, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    return ad.binary_cross_entropy(yhat * Tensor(m), y * m).sum()


def joint_loss(pred_loss, forecast_loss, recon_loss, aux_weight: float):
    """Prediction loss plus aux_weight times the two decoder losses."""
    if aux_weight < 0:
        raise ConfigError(f"aux weight must be >= 0, got {aux_weight}")
    return pred_loss + aux_weight * (ad._wrap(forecast_loss) + ad._wrap(recon_loss))


@dataclass
class BatchLosses:
    """Per-branch loss sums plus the element counts used to average them."""

    pred_sum: Tensor
    forecast_sum: Tensor
    recon_sum: Tensor
    n_samples: int
    n_forecast: int
    n_recon_elems: int


def batch_losses(model: DesatModel, x, y, m, u, truncated,
                 training: bool = False, drop_rng=None) -> BatchLosses:
    """Forward all branches on one batch of windows and sum each loss.

    Truncated-future rows are dropped from the forecast term only. Absent
    branches contribute constant zero.
    """
    out = model.forward(x, training=training, drop_rng=drop_rng)
    n = out.z.shape[0] if out.z.ndim > 1 else 1
    diff = out.xhat - np.asarray(x, dtype=np.float64)
    recon = (diff * diff).sum()

    if out.yhat is not None:
        pred = masked_bce(out.yhat, y, m)
    else:
        pred = Tensor(0.0)

    n_forecast = 0
    forecast = Tensor(0.0)
    if out.emissions is not None:
        keep = np.flatnonzero(~np.asarray(truncated, dtype=bool))
        n_forecast = keep.size
        if n_forecast:
            emis = ad.take_rows(out.emissions, keep)
            forecast = crf_nll(emis, np.asarray(u)[keep].astype(np.intp), model.crf)

    return BatchLosses(pred_sum=pred, forecast_sum=forecast, recon_sum=recon,
                       n_samples=n, n_forecast=n_forecast,
                       n_recon_elems=int(np.asarray(x).size))


# -- streaming inference --------------------------------------------------------


def _iter_window_chunks(model: DesatModel, x: np.ndarray, chunk: int):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != model.cfg.n_channels:
        raise ShapeError(f"expected ({model.cfg.n_channels}, T) vitals, got {x.shape}")
    mats = window_matrix(x, model.cfg.window)
    T = x.shape[1]
    for lo in range(0, T, chunk):
        yield np.ascontiguousarray(mats[lo:lo + chunk])


def infer_stream(model: DesatModel, x: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Per-minute event probability over a whole preprocessed surgery."""
    if model.predictor is None:
        raise ConfigError("variant r_plus_f has no predictor; use detect_from_forecast")
    scores = []
    with ad.no_grad():
        for xc in _iter_window_chunks(model, x, chunk):
            out = model.forward(xc, training=False)
            scores.append(out.yhat.data)
    return np.concatenate(scores)


def latent_stream(model: DesatModel, x: np.ndarray, chunk: int = 1024):
    """Per-minute latent (z, p) pairs over a whole preprocessed surgery."""
    zs, ps = [], []
    with ad.no_grad():
        for xc in _iter_window_chunks(model, x, chunk):
            z = model.encode(xc, training=False)
            p = model.transition_state(z)
            zs.append(z.data)
            ps.append(p.data)
    return np.concatenate(zs), np.concatenate(ps)


def _has_run(rows: np.ndarray, min_run: int) -> np.ndarray:
    """Row-wise: does a run of >= min_run ones appear?"""
    hit = np.zeros(rows.shape[0], dtype=bool)
    streak = np.zeros(rows.shape[0], dtype=np.int64)
    for k in range(rows.shape[1]):
        streak = np.where(rows[:, k] == 1, streak + 1, 0)
        hit |= streak >= min_run
    return hit


def forecast_paths(model: DesatModel, x: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Viterbi-decoded (T, window) label paths, one row per minute."""
    paths = []
    with ad.no_grad():
        for xc in _iter_window_chunks(model, x, chunk):
            z = model.encode(xc, training=False)
            p = model.transition_state(z)
            emis = model.forecast_emissions(p, training=False)
            paths.append(crf_viterbi(emis.data, model.crf))
    return np.concatenate(paths)


def alarms_from_paths(paths: np.ndarray, lead: int, min_run: int) -> np.ndarray:
    """Alarm iff the strictly-future tail of a decoded path holds a long-enough run."""
    return _has_run(paths[:, paths.shape[1] - lead:], min_run).astype(np.int8)


def detect_from_forecast(model: DesatModel, x: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Per-minute alarms from decoded future label paths (r_plus_f variant).

    For each minute, Viterbi-decode the forecast window and alarm iff the
    strictly-future positions (the trailing ``lead`` labels) contain a run of
    ones at least the outcome's minimum event length.
    """
    if model.cfg.variant != "r_plus_f":
        raise ConfigError(f"detect_from_forecast needs variant r_plus_f, "
                          f"got {model.cfg.variant!r}")
    paths = forecast_paths(model, x, chunk)
    return alarms_from_paths(paths, model.cfg.lead, model.cfg.min_run)
