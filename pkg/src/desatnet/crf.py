"""Linear-chain CRF over per-step label scores.

A sequence of emission scores (one score per label per step) is combined with
a learned label-transition table and start scores. The log-partition runs the
forward algorithm in log space, training minimizes the negative
log-likelihood of gold label paths, and decoding is Viterbi with ties broken
toward label 0 at every step.

Emissions are laid out (S, W) for one sequence or (B, S, W) batched: label
axis before time, matching how the upstream network emits scores per step.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


class CrfChain:
    """Transition table (S, S) indexed [from, to] plus start scores (S,)."""

    def __init__(self, n_labels: int = 2):
        if n_labels < 1:
            raise ShapeError("CRF needs at least one label")
        self.n_labels = n_labels
        self.trans = Tensor(np.zeros((n_labels, n_labels)), requires_grad=True)
        self.start = Tensor(np.zeros(n_labels), requires_grad=True)

    def params(self):
        yield "trans", self.trans
        yield "start", self.start


def _as_batch(emissions: Tensor) -> tuple[Tensor, bool]:
    if emissions.ndim == 2:
        return ad.reshape(emissions, (1,) + emissions.shape), True
    if emissions.ndim == 3:
        return emissions, False
    raise ShapeError(f"emissions must be (S,W) or (B,S,W), got {emissions.shape}")


def _check_steps(w: int) -> None:
    if w < 1:
        raise ShapeError("CRF needs at least one time step")


def crf_log_partition(emissions: Tensor, chain: CrfChain) -> Tensor:
    """log of the summed exp-score over all label paths.

    Returns a scalar for (S, W) input, a (B,) tensor for batched input.
    """
    emissions = ad._wrap(emissions)
    batched, squeeze = _as_batch(emissions)
    S, W = batched.shape[1], batched.shape[2]
    if S != chain.n_labels:
        raise ShapeError(f"emissions have {S} labels, chain expects {chain.n_labels}")
    _check_steps(W)
    # alpha[b, s] = log sum of scores of all prefixes ending in label s
    alpha = batched[:, :, 0] + ad.reshape(chain.start, (1, S))
    trans = ad.reshape(chain.trans, (1, S, S))
    for w in range(1, W):
        prev = ad.reshape(alpha, (alpha.shape[0], S, 1))
        alpha = ad.log_sum_exp(prev + trans, axis=1) + batched[:, :, w]
    log_z = ad.log_sum_exp(alpha, axis=1)
    return log_z[0] if squeeze else log_z


def crf_sequence_score(emissions: Tensor, labels, chain: CrfChain) -> Tensor:
    """Path score: start + per-step emissions + pairwise transitions.

    ``labels`` is (W,) or (B, W) integers in [0, S). Returns scalar or (B,).
    """
    emissions = ad._wrap(emissions)
    batched, squeeze = _as_batch(emissions)
    B, S, W = batched.shape
    _check_steps(W)
    labels = np.asarray(labels, dtype=np.intp)
    if labels.ndim == 1:
        labels = labels[None, :]
    if labels.shape != (B, W):
        raise ShapeError(f"labels shape {labels.shape} does not match emissions {(B, W)}")
    if labels.min() < 0 or labels.max() >= S:
        raise ShapeError(f"labels must lie in [0, {S})")

    rows = np.arange(B)[:, None]
    emit_idx = (rows * S + labels) * W + np.arange(W)[None, :]
    score = ad.take_flat(batched, emit_idx).sum(axis=1)
    score = score + ad.take_flat(chain.start, labels[:, 0])
    if W > 1:
        trans_idx = labels[:, :-1] * S + labels[:, 1:]
        score = score + ad.take_flat(chain.trans, trans_idx).sum(axis=1)
    return score[0] if squeeze else score


def crf_nll(emissions: Tensor, labels, chain: CrfChain) -> Tensor:
    """Negative log-likelihood of the gold paths, summed over the batch."""
    log_z = crf_log_partition(emissions, chain)
    score = crf_sequence_score(emissions, labels, chain)
    nll = log_z - score
    return nll if nll.ndim == 0 else nll.sum()


def crf_viterbi(emissions, chain: CrfChain) -> np.ndarray:
    """Maximum-score label path(s); (W,) for one sequence, (B, W) batched.

    The DP runs backward (best completion score per label per step) and the
    path is rebuilt front to back with first-index argmax, so among equally
    scoring paths the one preferring label 0 at the earliest steps wins.
    """
    data = emissions.data if isinstance(emissions, Tensor) else np.asarray(emissions, dtype=np.float64)
    squeeze = data.ndim == 2
    if squeeze:
        data = data[None]
    if data.ndim != 3:
        raise ShapeError(f"emissions must be (S,W) or (B,S,W), got {data.shape}")
    B, S, W = data.shape
    if S != chain.n_labels:
        raise ShapeError(f"emissions have {S} labels, chain expects {chain.n_labels}")
    _check_steps(W)
    trans = chain.trans.data
    # beta[w][b, s] = best score of a suffix starting at step w in label s
    beta = np.empty((W, B, S))
    beta[W - 1] = data[:, :, W - 1]
    for w in range(W - 2, -1, -1):
        beta[w] = data[:, :, w] + (trans[None, :, :] + beta[w + 1][:, None, :]).max(axis=2)
    path = np.empty((B, W), dtype=np.intp)
    path[:, 0] = (chain.start.data[None, :] + beta[0]).argmax(axis=1)
    for w in range(1, W):
        step = trans[path[:, w - 1], :] + beta[w]
        path[:, w] = step.argmax(axis=1)
    return path[0] if squeeze else path
