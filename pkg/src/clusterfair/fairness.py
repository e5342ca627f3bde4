"""Worst-case interventional unfairness penalty.

Predictions are embedded with random Fourier features.  Each candidate
adjustment set gets IPW-weighted group embeddings, the groups are compared to
their barycenter, and candidates are combined with a mellowmax.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import pdist
from scipy.special import logsumexp, ndtri, softmax

from .exceptions import EmptyGroupError, IdentificationError

logger = logging.getLogger(__name__)

DEFAULT_MULTIPLIERS = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0)
LAMBDA_GRID = tuple(float(v) for v in range(0, 21, 2))
PROPENSITY_FLOOR = 1e-6


@dataclass(frozen=True)
class PenaltyConfig:
    lam: float = 0.0
    mellowmax_omega: float = 10.0
    clip_quantile: float = 1.0
    d_rff: int = 128
    multipliers: tuple[float, ...] = DEFAULT_MULTIPLIERS
    propensity_floor: float = PROPENSITY_FLOOR
    feature_dtype: str = "float64"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.mellowmax_omega <= 0:
            raise ValueError("mellowmax_omega must be positive")
        if not 0 < self.clip_quantile <= 1:
            raise ValueError("clip_quantile must lie in (0, 1]")
        if self.d_rff < 1 or not self.multipliers:
            raise ValueError("need d_rff >= 1 and at least one bandwidth multiplier")
        if self.feature_dtype not in ("float32", "float64"):
            raise ValueError("feature_dtype must be float32 or float64")


def median_heuristic(points, max_points: int = 3000) -> float:
    """Lower median of pairwise Euclidean distances; 1.0 if that median is zero.

    More than ``max_points`` points are thinned to an evenly spaced subsample.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] < 2:
        raise ValueError("median heuristic needs at least two points")
    if pts.shape[0] > max_points:
        pts = pts[np.linspace(0, pts.shape[0] - 1, max_points).astype(int)]
    dist = pdist(pts)
    k = (dist.size - 1) // 2
    med = np.partition(dist, k)[k]
    return float(med) if med > 0 else 1.0


@dataclass(frozen=True)
class RffMap:
    """Random Fourier features for a sum of Gaussian kernels.

    Block ``b`` uses bandwidth ``multipliers[b] * bandwidth``; frequencies are
    the shared standard-normal draws divided by that bandwidth.
    """

    base_frequencies: np.ndarray   # (n_blocks, d_rff, out_dim)
    phases: np.ndarray             # (n_blocks, d_rff)
    bandwidth: float = 1.0
    multipliers: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.base_frequencies.ndim != 3 or self.base_frequencies.shape[:2] != self.phases.shape:
            raise ValueError("frequency and phase shapes disagree")
        if self.base_frequencies.shape[0] != len(self.multipliers):
            raise ValueError("one frequency block per multiplier")

    @classmethod
    def draw(cls, d_rff: int, rng: np.random.Generator, out_dim: int = 1,
             bandwidth: float = 1.0, multipliers=DEFAULT_MULTIPLIERS) -> "RffMap":
        """Stratified normal frequencies with phases in quadrature pairs.

        Each frequency is marginally standard normal and each phase uniform.
        Stratifying the frequencies and pairing phase b with b + pi/2 on a
        shared frequency cancels the cos(w(y + y') + 2b) noise term of the
        kernel estimate.  An odd ``d_rff`` leaves one unpaired feature.
        """
        k = len(multipliers)
        half = d_rff // 2
        strata = (rng.permuted(np.tile(np.arange(half), (k, out_dim, 1)), axis=2)
                  + rng.random((k, out_dim, half))) / max(half, 1)
        freqs = ndtri(strata).transpose(0, 2, 1)                        # (k, half, out_dim)
        phases = rng.uniform(0.0, 2 * np.pi, (k, half))
        freqs = np.concatenate([freqs, freqs, rng.standard_normal((k, d_rff - 2 * half, out_dim))], axis=1)
        phases = np.concatenate([phases, phases + np.pi / 2,
                                 rng.uniform(0.0, 2 * np.pi, (k, d_rff - 2 * half))], axis=1)
        return cls(freqs, phases, float(bandwidth), tuple(float(m) for m in multipliers))

    @property
    def d_rff(self) -> int:
        return self.phases.shape[1]

    @property
    def out_dim(self) -> int:
        return self.base_frequencies.shape[2]

    @property
    def n_features(self) -> int:
        return self.phases.size

    @property
    def frequencies(self) -> np.ndarray:
        """Flattened (n_features, out_dim) frequency matrix."""
        scale = np.asarray(self.multipliers)[:, None, None] * self.bandwidth
        return (self.base_frequencies / scale).reshape(-1, self.out_dim)

    def with_bandwidth(self, bandwidth: float) -> "RffMap":
        return replace(self, bandwidth=float(bandwidth))


def _as_points(y, out_dim: int) -> tuple[np.ndarray, bool]:
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        if out_dim == 1:
            return y[:, None], False
        return y[None, :], True
    return y, False


def rff_features(y, rff: RffMap) -> np.ndarray:
    """sqrt(2/d_rff) * cos(w.y + b), concatenated over bandwidth blocks."""
    pts, single = _as_points(y, rff.out_dim)
    if pts.shape[1] != rff.out_dim:
        raise ValueError(f"expected {rff.out_dim}-dimensional points, got {pts.shape[1]}")
    feats = np.sqrt(2.0 / rff.d_rff) * np.cos(pts @ rff.frequencies.T + rff.phases.ravel())
    return feats[0] if single else feats


@dataclass(frozen=True)
class GroupIndex:
    """Joint (sensitive, admissible) values observed in training data.

    ``codes[i]`` is the group of row ``i``; ``a_of[g]`` and ``xad_of[g]`` index
    the sensitive and admissible value of group ``g``.
    """

    values: tuple[tuple[tuple[float, ...], tuple[float, ...]], ...]
    a_of: np.ndarray
    xad_of: np.ndarray
    codes: np.ndarray = field(repr=False)

    @classmethod
    def from_columns(cls, a_values, xad_values=None) -> "GroupIndex":
        a_values = np.asarray(a_values, dtype=float).reshape(len(a_values), -1)
        if xad_values is None:
            xad_values = np.zeros((a_values.shape[0], 0))
        xad_values = np.asarray(xad_values, dtype=float).reshape(len(a_values), -1)
        keys = [(tuple(a), tuple(x)) for a, x in zip(a_values, xad_values)]
        values = tuple(sorted(set(keys)))
        lookup = {v: g for g, v in enumerate(values)}
        a_levels = sorted({a for a, _ in values})
        x_levels = sorted({x for _, x in values})
        return cls(
            values,
            np.array([a_levels.index(a) for a, _ in values]),
            np.array([x_levels.index(x) for _, x in values]),
            np.array([lookup[k] for k in keys]),
        )

    @property
    def n_groups(self) -> int:
        return len(self.values)

    @property
    def n_a(self) -> int:
        return int(self.a_of.max()) + 1

    @property
    def n_xad(self) -> int:
        return int(self.xad_of.max()) + 1

    def encode(self, a_values, xad_values=None) -> np.ndarray:
        """Group codes for new rows; unseen combinations get -1."""
        a_values = np.asarray(a_values, dtype=float).reshape(len(a_values), -1)
        if xad_values is None:
            xad_values = np.zeros((a_values.shape[0], 0))
        xad_values = np.asarray(xad_values, dtype=float).reshape(len(a_values), -1)
        lookup = {v: g for g, v in enumerate(self.values)}
        return np.array([lookup.get((tuple(a), tuple(x)), -1) for a, x in zip(a_values, xad_values)])

    def empty_groups(self, codes) -> list[int]:
        present = set(np.asarray(codes).tolist())
        return [g for g in range(self.n_groups) if g not in present]


def ipw_weights(group_codes, group: int, propensity, clip_quantile: float = 1.0,
                floor: float = PROPENSITY_FLOOR) -> np.ndarray:
    """Self-normalized inverse propensity weights of ``group`` over a batch.

    ``propensity[i]`` is the fitted probability that row ``i`` belongs to
    ``group`` given its adjustment columns.  Out-of-group rows get weight 0 and
    the weights average to 1 over the batch.
    """
    codes = np.asarray(group_codes)
    prop = np.asarray(propensity, dtype=float)
    if codes.shape != prop.shape:
        raise ValueError("group codes and propensities must align")
    inside = codes == group
    if not inside.any():
        raise EmptyGroupError(f"group {group} has no rows in the batch")
    floored = prop < floor
    if floored[inside].any():
        logger.debug("%d propensities floored at %g", int(floored[inside].sum()), floor)
    w = np.where(inside, 1.0 / np.maximum(prop, floor), 0.0)
    if clip_quantile < 1:
        w = np.minimum(w, np.quantile(w[inside], clip_quantile))
    return w * (w.size / w.sum())


def weighted_embedding(predictions, weights, rff: RffMap) -> np.ndarray:
    """(1/n) * sum_i w_i * phi(prediction_i)."""
    w = np.asarray(weights, dtype=float)
    feats = rff_features(predictions, rff)
    feats = feats if feats.ndim == 2 else feats[None, :]
    if feats.shape[0] != w.shape[0]:
        raise ValueError("weights and predictions must have the same length")
    if not w.any():
        raise EmptyGroupError("all weights are zero")
    return w @ feats / w.shape[0]


def mellowmax(values, omega: float) -> float:
    """log(mean(exp(omega * v))) / omega."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("mellowmax of an empty list")
    if omega <= 0:
        raise ValueError("omega must be positive")
    return float((logsumexp(omega * v) - np.log(v.size)) / omega)


def barycenter_value(embeddings: np.ndarray, xad_of: np.ndarray) -> float:
    """Sum over admissible values of sum_a ||mu_a - barycenter||^2."""
    total = 0.0
    for x in np.unique(xad_of):
        block = embeddings[xad_of == x]
        total += float(((block - block.mean(axis=0)) ** 2).sum())
    return total


def pairwise_value(embeddings: np.ndarray) -> float:
    """Sum over ordered pairs of ||mu_a - mu_b||^2 (quadratic in groups)."""
    diff = embeddings[:, None, :] - embeddings[None, :, :]
    return float((diff ** 2).sum())


@dataclass(frozen=True)
class PenaltyResult:
    value: float
    gradient: np.ndarray          # d value / d predictions, same shape as predictions
    candidate_values: np.ndarray  # inner value per candidate
    softmax_weights: np.ndarray
    skipped_groups: tuple[int, ...]
    ops: int                      # multiply-adds spent on the weighted embeddings


def penalty(predictions, group_codes, groups: GroupIndex, propensities, rff: RffMap,
            cfg: PenaltyConfig) -> PenaltyResult:
    """Mellowmax over candidates of the IPW barycenter discrepancy.

    ``propensities`` is an (n, M) array: column ``m`` holds each row's fitted
    probability of its own group under candidate ``m``'s adjustment columns.
    The gradient treats the RFF bandwidth and the weights as constants.
    """
    pred = np.asarray(predictions, dtype=float)
    pts = pred[:, None] if pred.ndim == 1 else pred
    codes = np.asarray(group_codes)
    prop = np.asarray(propensities, dtype=float)
    if prop.ndim == 1:
        prop = prop[:, None]
    n, M = prop.shape
    if M == 0:
        raise IdentificationError("no completed adjustment candidates")
    if pts.shape[0] != n or codes.shape[0] != n:
        raise ValueError("predictions, group codes and propensities must align")

    present = np.array(sorted(set(codes.tolist()) - {-1}), dtype=int)
    skipped = tuple(g for g in range(groups.n_groups) if g not in set(present.tolist()))
    if skipped:
        logger.debug("skipping %d empty groups in this batch", len(skipped))
    G = present.size

    inv = 1.0 / np.maximum(prop, cfg.propensity_floor)            # (n, M)
    member = codes[None, :] == present[:, None]                    # (G, n)
    W = member[None, :, :] * inv.T[:, None, :]                     # (M, G, n)
    if cfg.clip_quantile < 1:
        for m in range(M):
            for g in range(G):
                row = W[m, g]
                cap = np.quantile(row[member[g]], cfg.clip_quantile)
                np.minimum(row, cap, out=row)
    W *= n / W.sum(axis=2, keepdims=True)

    # float32 trig is several times faster; float64 is kept for gradient checks
    dt = np.dtype(cfg.feature_dtype)
    freqs = rff.frequencies.astype(dt)                             # (D, out)
    pts_d = pts.astype(dt)
    arg = pts_d[:, :1] * freqs[:, 0] if pts.shape[1] == 1 else pts_d @ freqs.T
    arg += rff.phases.ravel().astype(dt)
    scale = dt.type(np.sqrt(2.0 / rff.d_rff))
    phi = np.cos(arg)                                              # (n, D), unscaled
    D = phi.shape[1]
    flat_W = W.reshape(M * G, n).astype(dt)
    mu = (flat_W @ phi).astype(float).reshape(M, G, D) * (float(scale) / n)
    ops = M * G * n * D

    xad = groups.xad_of[present]
    diff = np.empty_like(mu)
    for x in np.unique(xad):
        sel = xad == x
        diff[:, sel] = mu[:, sel] - mu[:, sel].mean(axis=1, keepdims=True)
    values = (diff ** 2).sum(axis=(1, 2))
    value = mellowmax(values, cfg.mellowmax_omega)
    s = softmax(cfg.mellowmax_omega * values)

    # d value / d mu[m, g] = s_m * 2 * diff[m, g]; deviations sum to zero per block.
    dmu = (2.0 * s[:, None, None] * diff).reshape(M * G, D).astype(dt)
    dphi = flat_W.T @ dmu                                          # (n, D)
    dphi *= np.sin(arg)
    dpts = (dphi @ freqs).astype(float) * (-float(scale) / n)      # (n, out)
    grad = dpts[:, 0] if pred.ndim == 1 else dpts
    return PenaltyResult(value, grad, values, s, skipped, ops)
