"""Slow reference implementations used to cross-check the library.

Everything here is written the naive way on purpose: explicit Python
loops, exhaustive enumeration, no shared code with the package under
test. Tests compare the fast vectorized implementations against these.
"""

import itertools
import math

import numpy as np


# ---------------------------------------------------------------------------
# linear algebra and convolution


def matmul_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop 2-D matrix product."""
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def conv_causal_oracle(x: np.ndarray, w: np.ndarray, b=None, dilation: int = 1) -> np.ndarray:
    """Direct-summation dilated causal convolution for one (C, T) series.

    Taps reaching before t=0 contribute zero.
    """
    c_in, t_len = x.shape
    f, c_in2, k = w.shape
    assert c_in == c_in2
    out = np.zeros((f, t_len))
    for fo in range(f):
        for t in range(t_len):
            s = 0.0
            for c in range(c_in):
                for tap in range(k):
                    src = t - (k - 1 - tap) * dilation
                    if src >= 0:
                        s += w[fo, c, tap] * x[c, src]
            if b is not None:
                s += b[fo]
            out[fo, t] = s
    return out


def numeric_grad(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar f() w.r.t. arr, edited in place."""
    g = np.zeros_like(arr, dtype=float)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        hi = f()
        flat[i] = keep - h
        lo = f()
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * h)
    return g


def probe_grad(f, arr: np.ndarray, idx: tuple, h: float = 1e-5) -> float:
    """Central difference of scalar f() along one coordinate of arr."""
    keep = arr[idx]
    arr[idx] = keep + h
    hi = f()
    arr[idx] = keep - h
    lo = f()
    arr[idx] = keep
    return (hi - lo) / (2.0 * h)


# ---------------------------------------------------------------------------
# linear-chain CRF by exhaustive enumeration


def crf_path_score(emis: np.ndarray, trans: np.ndarray, start: np.ndarray, path) -> float:
    """Unnormalized log score of one label path. emis is (S, W)."""
    w = emis.shape[1]
    s = start[path[0]] + emis[path[0], 0]
    for t in range(1, w):
        s += trans[path[t - 1], path[t]] + emis[path[t], t]
    return float(s)


def crf_enum_logz(emis: np.ndarray, trans: np.ndarray, start: np.ndarray) -> float:
    """log of the sum over all S^W paths of exp(score)."""
    n_s, w = emis.shape
    scores = [crf_path_score(emis, trans, start, p)
              for p in itertools.product(range(n_s), repeat=w)]
    m = max(scores)
    return m + math.log(sum(math.exp(s - m) for s in scores))

def crf_enum_best(emis: np.ndarray, trans: np.ndarray, start: np.ndarray) -> np.ndarray:
    """Highest-scoring path; ties resolved to the lexicographically
    smallest path because itertools.product yields them in that order
    and only strictly better scores replace the incumbent."""
    n_s, w = emis.shape
    best, best_score = None, -math.inf
    for p in itertools.product(range(n_s), repeat=w):
        s = crf_path_score(emis, trans, start, p)
        if s > best_score + 1e-12:
            best, best_score = p, s
    return np.array(best, dtype=np.int64)


# ---------------------------------------------------------------------------
# event labeling


def events_oracle(spo2: np.ndarray, threshold: float = 90.0, min_run: int = 1):
    """Maximal runs of spo2 <= threshold lasting at least min_run minutes."""
    events = []
    t, n = 0, len(spo2)
    while t < n:
        if spo2[t] <= threshold:
            start = t
            while t < n and spo2[t] <= threshold:
                t += 1
            if t - start >= min_run:
                events.append((start, t - 1))
        else:
            t += 1
    return events


def labels_oracle(spo2: np.ndarray, horizon: int, threshold: float = 90.0,
                  min_run: int = 1):
    """Per-minute label and mask check, one minute at a time.

    y[t] = 1 iff some event starts at s with s - horizon <= t <= s - 1.
    m[t] = 0 iff t falls inside an event; masked minutes carry y = 0.
    """
    n = len(spo2)
    events = events_oracle(spo2, threshold, min_run)
    y = np.zeros(n)
    m = np.ones(n)
    for t in range(n):
        for s, e in events:
            if s <= t <= e:
                m[t] = 0.0
        for s, _ in events:
            if s - horizon <= t <= s - 1:
                y[t] = 1.0
    y[m == 0.0] = 0.0
    return y, m


def impute_oracle(values: np.ndarray, observed: np.ndarray, max_gap: int = 20,
                  spo2_row: int = 0, artifact_floor: float = 60.0):
    """Forward scan carry-forward fill, channel by channel."""
    v = values.copy()
    obs = observed.copy()
    obs[spo2_row] = obs[spo2_row] & (values[spo2_row] >= artifact_floor)
    n_ch, t_len = v.shape
    out = np.zeros_like(v)
    for c in range(n_ch):
        last_val, last_t = None, None
        for t in range(t_len):
            if obs[c, t]:
                last_val, last_t = v[c, t], t
                out[c, t] = v[c, t]
            elif last_t is not None and t - last_t <= max_gap:
                out[c, t] = last_val
            else:
                out[c, t] = 0.0
    return out


def window_targets_oracle(spo2_low: np.ndarray, window: int, lead: int):
    """Future low-SpO2 instance sequences, element by element."""
    t_len = len(spo2_low)
    u = np.zeros((t_len, window))
    truncated = np.zeros(t_len, dtype=bool)
    for t in range(t_len):
        for k in range(window):
            tau = t - window + 1 + k + lead
            if 0 <= tau < t_len:
                u[t, k] = spo2_low[tau]
            else:
                truncated[t] = True
    return u, truncated


# ---------------------------------------------------------------------------
# classification metrics


def roc_oracle(scores: np.ndarray, labels: np.ndarray) -> float:
    """O(n^2) pairwise probability that a positive outranks a negative."""
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def ap_oracle(scores: np.ndarray, labels: np.ndarray) -> float:
    """Step-interpolated average precision via per-threshold set counts."""
    n_pos = float(labels.sum())
    thresholds = sorted(set(scores.tolist()), reverse=True)
    ap, prev_recall = 0.0, 0.0
    for th in thresholds:
        fired = scores >= th
        tp = float((labels[fired] == 1).sum())
        precision = tp / float(fired.sum())
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def threshold_oracle(scores: np.ndarray, labels: np.ndarray, target: float) -> float:
    """Largest candidate threshold whose sensitivity meets the target."""
    pos = scores[labels == 1]
    best = None
    for th in sorted(set(pos.tolist()), reverse=True):
        sens = float((pos >= th).sum()) / len(pos)
        if sens >= target:
            best = th
            break
    return best


def alarms_oracle(scores: np.ndarray, threshold: float, total_minutes: int) -> float:
    """Count crossings one by one, then rescale to a 10 hour rate."""
    n = 0
    for s in scores:
        if s >= threshold:
            n += 1
    return n * 600.0 / total_minutes
