"""Interpretable per-patient features from vital-sign grids.

The catalog is fixed and versioned: 16 statistics per channel (intra-signal)
and 3 per unordered channel pair (inter-signal), 110 columns in total for five
channels. Intra columns are named ``<channel>__<feature>`` and inter columns
``<chanA>x<chanB>__<feature>``, channels in canonical order.

All standard deviations are population (``ddof=0``). Statistics that would
divide by a vanishing spread (below ``EPS``) return 0 instead of NaN.

The helpers below reduce over the last axis, so they accept a single series
of shape ``(T,)`` as well as stacked arrays such as ``(n, channels, T)``.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .model import CHANNELS, MIN_HOURS, N_CHANNELS, Cohort, FeatureMatrix, VitalChannel

logger = logging.getLogger(__name__)

EPS = 1e-12
CATALOG_VERSION = "v1"

INTRA_FEATURES = (
    "mean", "std", "min", "max", "median", "iqr", "skew", "kurtosis",
    "slope", "intercept", "acf1", "abs_energy", "mean_abs_change",
    "mean_crossings", "first", "last",
)
INTER_FEATURES = ("pearson", "max_ncc", "ncc_shift")
CHANNEL_PAIRS = tuple(combinations(range(N_CHANNELS), 2))


def intra_names(channel):
    return [f"{channel.code}__{f}" for f in INTRA_FEATURES]


def inter_names(chan_a, chan_b):
    return [f"{chan_a.code}x{chan_b.code}__{f}" for f in INTER_FEATURES]


FEATURE_NAMES = tuple(
    [n for c in CHANNELS for n in intra_names(c)]
    + [n for a, b in CHANNEL_PAIRS for n in inter_names(CHANNELS[a], CHANNELS[b])]
)


def znorm(x):
    """Zero-mean, unit population-std along the last axis; constant -> zeros."""
    x = np.asarray(x, dtype=float)
    mu = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    centered = x - mu
    safe = np.where(sd > EPS, sd, 1.0)
    return np.where(sd > EPS, centered / safe, 0.0)


def shift_order(n):
    """Shifts in tie-break priority: 0, -1, 1, -2, 2, ..., -(n-1), n-1."""
    out = [0]
    for w in range(1, n):
        out += [-w, w]
    return np.array(out)


def cross_products(x, y):
    """Non-circular lagged dot products ``sum_t x[t] * y[t - w]``.

    Returns an array whose last axis runs over :func:`shift_order` of the
    series length; out-of-range terms contribute zero.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[-1]
    shifts = shift_order(n)
    out = np.empty(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]) + (len(shifts),))
    for i, w in enumerate(shifts):
        if w >= 0:
            out[..., i] = np.sum(x[..., w:] * y[..., : n - w], axis=-1)
        else:
            out[..., i] = np.sum(x[..., : n + w] * y[..., -w:], axis=-1)
    return out


def _intra_block(x):
    """(..., T) -> (..., 16) in INTRA_FEATURES order."""
    n = x.shape[-1]
    mean = x.mean(axis=-1)
    centered = x - mean[..., None]
    m2 = np.mean(centered**2, axis=-1)
    std = np.sqrt(m2)
    flat = std < EPS
    safe_m2 = np.where(flat, 1.0, m2)
    skew = np.where(flat, 0.0, np.mean(centered**3, axis=-1) / safe_m2**1.5)
    kurt = np.where(flat, 0.0, np.mean(centered**4, axis=-1) / safe_m2**2 - 3.0)

    t = np.arange(n, dtype=float)
    tc = t - t.mean()
    slope = np.sum(centered * tc, axis=-1) / np.sum(tc * tc)
    intercept = mean - slope * t.mean()

    denom = np.sum(centered**2, axis=-1)
    num = np.sum(centered[..., :-1] * centered[..., 1:], axis=-1)
    acf1 = np.where(denom < EPS, 0.0, num / np.where(denom < EPS, 1.0, denom))

    q25, med, q75 = np.percentile(x, [25, 50, 75], axis=-1)
    above = x > mean[..., None]
    crossings = np.count_nonzero(above[..., 1:] != above[..., :-1], axis=-1)

    return np.stack(
        [
            mean, std, x.min(axis=-1), x.max(axis=-1), med, q75 - q25, skew, kurt,
            slope, intercept, acf1, np.sum(x**2, axis=-1),
            np.mean(np.abs(np.diff(x, axis=-1)), axis=-1),
            crossings.astype(float), x[..., 0], x[..., -1],
        ],
        axis=-1,
    )


def _inter_block(a, b):
    """(..., T) pair -> (..., 3) in INTER_FEATURES order."""
    n = a.shape[-1]
    ca = a - a.mean(axis=-1, keepdims=True)
    cb = b - b.mean(axis=-1, keepdims=True)
    sa = np.sqrt(np.mean(ca**2, axis=-1))
    sb = np.sqrt(np.mean(cb**2, axis=-1))
    flat = (sa < EPS) | (sb < EPS)
    denom = np.where(flat, 1.0, n * sa * sb)
    pearson = np.where(flat, 0.0, np.sum(ca * cb, axis=-1) / denom)
    pearson = np.clip(pearson, -1.0, 1.0)

    ncc = cross_products(znorm(a), znorm(b)) / n
    best = np.argmax(ncc, axis=-1)
    max_ncc = np.take_along_axis(ncc, best[..., None], axis=-1)[..., 0]
    shift = shift_order(n)[best].astype(float)
    return np.stack([pearson, max_ncc, shift], axis=-1)


def _check_series(x, n_hours_min=MIN_HOURS):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] < n_hours_min:
        raise ValueError(f"need at least {n_hours_min} hours, got {x.shape[-1]}")
    return x


def extract_intra(series, channel: VitalChannel):
    """The 16 intra-signal statistics of one channel, keyed by column name."""
    x = _check_series(series.channel(channel))
    return dict(zip(intra_names(channel), _intra_block(x).tolist()))


def extract_inter(series, chan_a: VitalChannel, chan_b: VitalChannel):
    """Pearson correlation, max normalized cross-correlation and its shift.

    ``ncc_shift`` is the lag ``w`` maximizing ``sum_t a[t] * b[t - w] / T``
    over the z-normed channels; ties go to the smallest ``|w|``, negative
    first.
    """
    a = _check_series(series.channel(chan_a))
    b = _check_series(series.channel(chan_b))
    return dict(zip(inter_names(chan_a, chan_b), _inter_block(a, b).tolist()))


def extract_grids(grids):
    """Feature rows for a stack of grids, ``(n, channels, T) -> (n, 110)``."""
    grids = _check_series(grids)
    if grids.ndim != 3 or grids.shape[1] != N_CHANNELS:
        raise ValueError(f"expected (n, {N_CHANNELS}, T) grids, got {grids.shape}")
    n = grids.shape[0]
    intra = _intra_block(grids).reshape(n, -1)
    inter = np.concatenate(
        [_inter_block(grids[:, i], grids[:, j]) for i, j in CHANNEL_PAIRS], axis=1
    )
    return np.concatenate([intra, inter], axis=1)


def assemble_matrix(cohort: Cohort, n_workers=1, chunk_size=512):
    """Extract the full catalog for every patient, rows in cohort order.

    Each worker fills a preassigned slice of rows, so the result does not
    depend on ``n_workers``.
    """
    grids = cohort.grids()
    n = grids.shape[0]
    out = np.empty((n, len(FEATURE_NAMES)))
    bounds = [(i, min(i + chunk_size, n)) for i in range(0, n, chunk_size)]

    def work(span):
        lo, hi = span
        out[lo:hi] = extract_grids(grids[lo:hi])

    if n_workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            list(pool.map(work, bounds))
    else:
        for span in bounds:
            work(span)
    return FeatureMatrix(cohort.patient_ids, FEATURE_NAMES, out)


def clean_features(matrix: FeatureMatrix):
    """Drop non-finite and zero-variance columns.

    Returns the cleaned matrix and a list of ``(name, reason)`` for dropped
    columns.
    """
    v = matrix.values
    keep, dropped = [], []
    for j, name in enumerate(matrix.feature_names):
        col = v[:, j]
        if not np.all(np.isfinite(col)):
            dropped.append((name, "non-finite"))
        elif col.size == 0 or col.std() < EPS:
            dropped.append((name, "zero variance"))
        else:
            keep.append(j)
    names = [matrix.feature_names[j] for j in keep]
    stats = None if matrix.column_stats is None else matrix.column_stats[keep]
    return FeatureMatrix(matrix.patient_ids, names, v[:, keep], stats), dropped


def column_stats(values):
    values = np.asarray(values, dtype=float)
    return np.column_stack([values.mean(axis=0), values.std(axis=0)])


def apply_stats(values, stats):
    """``(values - mean) / std`` per column; zero-std columns map to 0."""
    stats = np.asarray(stats, dtype=float)
    mean, std = stats[:, 0], stats[:, 1]
    safe = np.where(std > EPS, std, 1.0)
    return np.where(std > EPS, (np.asarray(values, dtype=float) - mean) / safe, 0.0)


def normalize_features(matrix: FeatureMatrix):
    """Z-score every column and record the ``(mean, std)`` used."""
    stats = column_stats(matrix.values)
    return FeatureMatrix(
        matrix.patient_ids, matrix.feature_names, apply_stats(matrix.values, stats), stats
    )


def select_features(matrix: FeatureMatrix, max_abs_corr=0.9, top_n=None, dispersion=None):
    """Greedy correlation pruning over columns in their given order.

    A column is kept iff its absolute Pearson correlation with every column
    kept so far is at most ``max_abs_corr``. With ``top_n``, the kept list is
    cut to the ``top_n`` columns of largest ``dispersion`` (defaults to the
    pre-normalization std in ``column_stats``), ties broken by name; the
    survivors keep their original order.
    """
    if not 0.0 < max_abs_corr <= 1.0:
        raise ValueError(f"max_abs_corr must lie in (0, 1], got {max_abs_corr}")
    if top_n is not None and top_n < 1:
        raise ValueError("top_n must be a positive integer")
    v = matrix.values
    centered = v - v.mean(axis=0)
    norms = np.sqrt(np.sum(centered**2, axis=0))
    unit = centered / np.where(norms > EPS, norms, 1.0)
    kept = []
    for j in range(v.shape[1]):
        if norms[j] <= EPS:
            continue
        if kept:
            r = np.abs(unit[:, kept].T @ unit[:, j])
            if np.any(r > max_abs_corr):
                continue
        kept.append(j)
    names = [matrix.feature_names[j] for j in kept]
    if top_n is not None and len(names) > top_n:
        if dispersion is None:
            if matrix.column_stats is None:
                dispersion = v.std(axis=0)
            else:
                dispersion = matrix.column_stats[:, 1]
        disp = np.asarray(dispersion, dtype=float)
        ranked = sorted(kept, key=lambda j: (-disp[j], matrix.feature_names[j]))
        chosen = set(ranked[:top_n])
        names = [matrix.feature_names[j] for j in kept if j in chosen]
    return names


class VitalFeatureExtractor(BaseEstimator, TransformerMixin):
    """Transformer from ``(n, channels, T)`` grids (or a Cohort) to the
    fixed 110-column catalog. Stateless apart from recording the names."""

    def __init__(self, n_workers=1):
        self.n_workers = n_workers

    def fit(self, X, y=None):
        self.feature_names_out_ = np.array(FEATURE_NAMES, dtype=object)
        self.n_features_out_ = len(FEATURE_NAMES)
        return self

    def transform(self, X):
        check_is_fitted(self, "feature_names_out_")
        if isinstance(X, Cohort):
            return assemble_matrix(X, self.n_workers).values
        return extract_grids(X)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "feature_names_out_")
        return self.feature_names_out_.copy()


class FeaturePreprocessor(BaseEstimator, TransformerMixin):
    """Clean, z-score and select feature columns, freezing every choice at fit.

    Fitted attributes: ``dropped_`` (name, reason) pairs, ``stats_`` for the
    cleaned columns, ``selected_features_`` and ``selected_stats_``.
    ``transform`` expects a :class:`FeatureMatrix` carrying at least the
    selected names and returns the normalized selected columns.
    """

    def __init__(self, max_abs_corr=0.9, top_n=None):
        self.max_abs_corr = max_abs_corr
        self.top_n = top_n

    def fit(self, X, y=None):
        cleaned, self.dropped_ = clean_features(X)
        normed = normalize_features(cleaned)
        self.stats_ = normed.column_stats
        self.selected_features_ = select_features(normed, self.max_abs_corr, self.top_n)
        idx = [cleaned.feature_names.index(n) for n in self.selected_features_]
        self.selected_stats_ = self.stats_[idx]
        logger.info(
            "features: %d extracted, %d dropped, %d selected",
            len(X.feature_names), len(self.dropped_), len(self.selected_features_),
        )
        return self

    def transform(self, X):
        check_is_fitted(self, "selected_features_")
        sub = X.columns(self.selected_features_)
        return FeatureMatrix(
            sub.patient_ids, sub.feature_names,
            apply_stats(sub.values, self.selected_stats_), self.selected_stats_,
        )


def write_feature_matrix(matrix: FeatureMatrix, path, stats_path=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", *matrix.feature_names])
        for pid, row in zip(matrix.patient_ids, matrix.values):
            w.writerow([pid, *(repr(float(v)) for v in row)])
    if stats_path is not None and matrix.column_stats is not None:
        with open(stats_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "mean", "std"])
            for name, (m, s) in zip(matrix.feature_names, matrix.column_stats):
                w.writerow([name, repr(float(m)), repr(float(s))])


def read_feature_matrix(path, stats_path=None):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[0] != "patient_id":
        raise ValueError(f"{path}: first column must be patient_id")
    ids = [r[0] for r in body]
    values = np.array([[float(v) for v in r[1:]] for r in body]).reshape(len(body), len(header) - 1)
    stats = None
    if stats_path is not None:
        with open(stats_path, newline="", encoding="utf-8") as fh:
            srows = list(csv.reader(fh))
        if srows[0] != ["feature", "mean", "std"]:
            raise ValueError(f"{stats_path}: expected header feature,mean,std")
        if [r[0] for r in srows[1:]] != header[1:]:
            raise ValueError(f"{stats_path}: feature order does not match {path}")
        stats = np.array([[float(r[1]), float(r[2])] for r in srows[1:]])
    return FeatureMatrix(ids, header[1:], values, stats)
