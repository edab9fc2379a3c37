"""2-D filter coordinates: exact t-SNE and a PCA baseline.

The t-SNE implementation is the exact O(n^2) variant: Gaussian input
affinities calibrated per point to a target perplexity, a Student-t output
kernel, and gradient descent on KL(P || Q) with momentum, adaptive gains and
early exaggeration.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np
from scipy.spatial.distance import pdist, squareform

log = logging.getLogger(__name__)

MAX_HALVINGS = 64
MAX_POINTS = 10_000
_MAX_EXPANSIONS = 64
_BLOCK_ROWS = 1024


class AffinityError(RuntimeError):
    """Bandwidth search failed for a row."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class EmbeddingError(RuntimeError):
    """The optimizer produced a non-finite gradient."""

    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class TsneParams:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    momentum_early: float = 0.5
    momentum_late: float = 0.8
    momentum_switch: int = 250
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    seed: int = 0
    init_std: float = 1e-4
    log_every: int = 100

    def check(self, n_points: int) -> None:
        if not self.perplexity > 1:
            raise ValueError("perplexity must exceed 1")
        if self.perplexity >= n_points:
            raise ValueError(f"perplexity {self.perplexity} must be below the point count {n_points}")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        for m in (self.momentum_early, self.momentum_late):
            if not 0 <= m < 1:
                raise ValueError("momentum must lie in [0, 1)")
        if self.exaggeration < 1:
            raise ValueError("exaggeration factor must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class AffinityMatrix:
    P: np.ndarray  # symmetric joint probabilities, sums to 1
    conditional: np.ndarray  # row i holds p_{j|i}
    sigmas: np.ndarray
    perplexities: np.ndarray  # achieved exp(H_i) per row
    saturated: np.ndarray  # rows where the target perplexity is unreachable


@dataclass(frozen=True, eq=False)
class FilterEmbedding:
    coords: np.ndarray
    method: str  # "tsne" or "pca"
    final_objective: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_points(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True, eq=False)
class PcaResult:
    embedding: FilterEmbedding
    components: np.ndarray  # (k, features), orthonormal rows
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    mean: np.ndarray


# -- affinities -------------------------------------------------------------------

def squared_distances(X: np.ndarray) -> np.ndarray:
    # pdist keeps exact zeros for duplicate rows and exact symmetry
    return squareform(pdist(np.asarray(X, dtype=np.float64), "sqeuclidean"))


def _row_stats(log_Dm: np.ndarray, logb: np.ndarray, self_cols: np.ndarray):
    """Entropy (nats) and normalized rows for a block of shifted distances.

    Works in log space: beta * d = exp(log beta + log d), so zero distances
    give exactly 0 and huge bandwidths underflow the weight instead of
    overflowing beta.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        E = np.exp(logb[:, None] + log_Dm)
        W = np.exp(-E)
        W[np.arange(len(logb)), self_cols] = 0.0
        WE = np.where(W > 0, W * E, 0.0)
    S = W.sum(axis=1)  # >= 1: the nearest neighbour sits at shifted distance 0
    H = np.log(S) + WE.sum(axis=1) / S
    return H, W / S[:, None]


def _calibrate_block(Dm, self_cols, target, perplexity, tol, row_offset):
    b, n = Dm.shape
    beta = np.zeros(b)
    out = np.zeros((b, n))
    achieved = np.zeros(b)

    others = np.ones((b, n), dtype=bool)
    others[np.arange(b), self_cols] = False
    n_min = ((Dm == 0.0) & others).sum(axis=1)
    log_hi_limit = np.log(n_min)  # entropy as beta -> inf
    log_lo_limit = np.log(n - 1)  # entropy at beta = 0

    # Rows whose target lies outside the reachable entropy range take the
    # corresponding limit distribution.
    high = log_hi_limit >= target
    low = ~high & (log_lo_limit <= target)
    for mask, inf_beta in ((high, True), (low, False)):
        rows = np.flatnonzero(mask)
        if rows.size == 0:
            continue
        W = ((Dm[rows] == 0.0) if inf_beta else np.ones((rows.size, n), dtype=bool)) & others[rows]
        counts = W.sum(axis=1)
        out[rows] = W / counts[:, None]
        achieved[rows] = counts
        beta[rows] = np.inf if inf_beta else 0.0

    active = np.flatnonzero(~(high | low))
    if active.size:
        positive = np.where(Dm[active] > 0, Dm[active], np.nan)
        logb = -np.log(np.nanmean(positive, axis=1))
        # the self column is negative after the shift; it is zeroed in _row_stats
        with np.errstate(divide="ignore", invalid="ignore"):
            log_Dm = np.log(Dm)
        lo = np.full(active.size, -np.inf)
        hi = np.full(active.size, np.inf)
        halvings = np.zeros(active.size, dtype=int)
        expansions = np.zeros(active.size, dtype=int)
        todo = np.ones(active.size, dtype=bool)
        while todo.any():
            idx = np.flatnonzero(todo)
            rows = active[idx]
            H, rowp = _row_stats(log_Dm[rows], logb[idx], self_cols[rows])
            perp = np.exp(H)
            done = np.abs(perp - perplexity) <= tol
            out[rows[done]] = rowp[done]
            achieved[rows[done]] = perp[done]
            beta[rows[done]] = np.exp(logb[idx[done]])
            todo[idx[done]] = False
            idx, H = idx[~done], H[~done]
            if idx.size == 0:
                break
            up = H > target  # too flat: sharpen
            lo[idx[up]] = logb[idx[up]]
            hi[idx[~up]] = logb[idx[~up]]
            bracketed = np.isfinite(lo[idx]) & np.isfinite(hi[idx])
            halvings[idx[bracketed]] += 1
            expansions[idx[~bracketed]] += 1
            step = 2.0 ** np.minimum(expansions[idx], 60)
            logb[idx] = np.where(
                bracketed,
                0.5 * (lo[idx] + hi[idx]),
                np.where(up, logb[idx] + step, logb[idx] - step),
            )
            bad = (halvings[idx] > MAX_HALVINGS) | (expansions[idx] > _MAX_EXPANSIONS)
            if bad.any():
                row = int(active[idx[np.argmax(bad)]]) + row_offset
                raise AffinityError(row, f"bandwidth search did not converge after {MAX_HALVINGS} halvings")
    return out, beta, achieved


def conditional_probabilities(
    D2: np.ndarray, perplexity: float, tol: float = 1e-5
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-calibrated p_{j|i} from squared distances.

    Returns (conditional matrix, precisions beta_i = 1 / (2 sigma_i^2),
    achieved perplexities).
    """
    n = D2.shape[0]
    target = np.log(perplexity)
    cond = np.empty_like(D2, dtype=np.float64)
    betas = np.empty(n)
    achieved = np.empty(n)
    for start in range(0, n, _BLOCK_ROWS):
        stop = min(n, start + _BLOCK_ROWS)
        block = D2[start:stop].copy()
        self_cols = np.arange(start, stop)
        block[np.arange(stop - start), self_cols] = np.inf
        block -= block.min(axis=1, keepdims=True)
        block[np.arange(stop - start), self_cols] = 0.0
        c, b, a = _calibrate_block(block, self_cols, target, perplexity, tol, start)
        cond[start:stop], betas[start:stop], achieved[start:stop] = c, b, a
    return cond, betas, achieved


def conditional_affinities(X: np.ndarray, perplexity: float, tol: float = 1e-5) -> AffinityMatrix:
    """Symmetrized input affinities p_ij = (p_{j|i} + p_{i|j}) / 2n."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 3:
        raise ValueError("need at least 3 points")
    if not 0 < perplexity < n:
        raise ValueError(f"perplexity must lie in (0, {n})")
    cond, betas, achieved = conditional_probabilities(squared_distances(X), perplexity, tol)
    P = (cond + cond.T) / (2.0 * n)
    with np.errstate(divide="ignore"):
        sigmas = np.sqrt(1.0 / (2.0 * betas))
    saturated = np.abs(achieved - perplexity) > tol
    if saturated.any():
        log.warning(
            "%d of %d rows cannot reach perplexity %g (duplicate-heavy input); "
            "those rows use the limiting distribution",
            int(saturated.sum()), n, perplexity,
        )
    return AffinityMatrix(P=P, conditional=cond, sigmas=sigmas, perplexities=achieved, saturated=saturated)


# -- objective ----------------------------------------------------------------------

def _student_t(Y: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", Y, Y)
    D = sq[:, None] + sq[None, :] - 2.0 * (Y @ Y.T)
    np.maximum(D, 0.0, out=D)
    num = 1.0 / (1.0 + D)
    np.fill_diagonal(num, 0.0)
    return num


def _kl(P: np.ndarray, Q: np.ndarray) -> float:
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / np.maximum(Q[mask], np.finfo(float).tiny))))


def kl_divergence(P: np.ndarray, Y: np.ndarray) -> float:
    num = _student_t(Y)
    return _kl(P, num / num.sum())


def kl_gradient(P: np.ndarray, Y: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(P || Q) and its gradient with respect to the embedding ``Y``.

    dC/dy_i = 4 sum_j (p_ij - q_ij)(y_i - y_j)(1 + |y_i - y_j|^2)^-1
    """
    num = _student_t(Y)
    Q = num / num.sum()
    PQ = (P - Q) * num
    grad = 4.0 * (PQ.sum(axis=1)[:, None] * Y - PQ @ Y)
    return _kl(P, Q), grad


@numba.njit(cache=True)
def _fused_gradient(P, Y, scale, grad):  # pragma: no cover - compiled
    """Gradient of KL(scale * P || Q) into ``grad``; returns the normalizer Z.

    Fixed loop order keeps the floating-point summation deterministic.
    """
    n = Y.shape[0]
    Z = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            dx = Y[i, 0] - Y[j, 0]
            dy = Y[i, 1] - Y[j, 1]
            Z += 2.0 / (1.0 + dx * dx + dy * dy)
    for i in range(n):
        g0 = 0.0
        g1 = 0.0
        for j in range(n):
            if i == j:
                continue
            dx = Y[i, 0] - Y[j, 0]
            dy = Y[i, 1] - Y[j, 1]
            num = 1.0 / (1.0 + dx * dx + dy * dy)
            m = (scale * P[i, j] - num / Z) * num
            g0 += m * dx
            g1 += m * dy
        grad[i, 0] = 4.0 * g0
        grad[i, 1] = 4.0 * g1
    return Z


@numba.njit(cache=True)
def _fused_kl(P, Y):  # pragma: no cover - compiled
    n = Y.shape[0]
    Z = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            dx = Y[i, 0] - Y[j, 0]
            dy = Y[i, 1] - Y[j, 1]
            Z += 2.0 / (1.0 + dx * dx + dy * dy)
    kl = 0.0
    for i in range(n):
        for j in range(n):
            p = P[i, j]
            if i == j or p <= 0.0:
                continue
            dx = Y[i, 0] - Y[j, 0]
            dy = Y[i, 1] - Y[j, 1]
            q = 1.0 / ((1.0 + dx * dx + dy * dy) * Z)
            kl += p * np.log(p / max(q, 1e-300))
    return kl


def optimizer_gradient(P: np.ndarray, Y: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Compiled gradient used inside the optimizer loop (2-D embeddings)."""
    grad = np.empty_like(Y)
    _fused_gradient(np.ascontiguousarray(P), np.ascontiguousarray(Y), float(scale), grad)
    return grad


# -- t-SNE --------------------------------------------------------------------------

def tsne(X: np.ndarray, params: TsneParams = TsneParams(), affinities: AffinityMatrix | None = None) -> FilterEmbedding:
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 3:
        raise ValueError("t-SNE needs at least 3 points")
    if n > MAX_POINTS:
        raise ValueError(f"exact t-SNE is capped at {MAX_POINTS} points, got {n}")
    params.check(n)
    aff = affinities or conditional_affinities(X, params.perplexity)
    P = aff.P

    rng = np.random.default_rng(params.seed)
    Y = rng.normal(0.0, params.init_std, size=(n, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    history: list[tuple[int, float]] = []
    kl_after_exaggeration = None
    n_exag = min(params.exaggeration_iters, params.iterations)

    P = np.ascontiguousarray(P)
    grad = np.empty_like(Y)
    for it in range(params.iterations):
        scale = params.exaggeration if it < n_exag else 1.0
        _fused_gradient(P, Y, scale, grad)
        if not np.isfinite(grad).all():
            raise EmbeddingError(it, "non-finite gradient")
        if it % params.log_every == 0:
            kl = float(_fused_kl(P, Y))
            history.append((it, kl))
            log.debug("t-SNE iteration %d: KL %.6f", it, kl)

        momentum = params.momentum_early if it < params.momentum_switch else params.momentum_late
        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - params.learning_rate * gains * grad
        Y = Y + update
        Y -= Y.mean(axis=0)

        if it + 1 == n_exag:
            kl_after_exaggeration = float(_fused_kl(P, Y))

    final_kl = float(_fused_kl(P, Y))
    history.append((params.iterations, final_kl))
    if not np.isfinite(Y).all():
        raise EmbeddingError(params.iterations, "non-finite coordinates")
    if kl_after_exaggeration is not None and final_kl > kl_after_exaggeration:
        log.warning(
            "final KL %.6f exceeds the post-exaggeration KL %.6f", final_kl, kl_after_exaggeration
        )
    return FilterEmbedding(
        coords=Y,
        method="tsne",
        final_objective=final_kl,
        diagnostics={
            "kl_history": history,
            "kl_after_exaggeration": kl_after_exaggeration,
            "saturated_rows": int(aff.saturated.sum()),
            "params": params.to_dict(),
        },
    )


# -- PCA ------------------------------------------------------------------------------

def pca(X: np.ndarray, k: int = 2) -> PcaResult:
    """Project onto the top-``k`` principal axes via SVD of the centered data.

    Each component is signed so that its largest-magnitude loading is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be positive")
    if k > X.shape[1]:
        raise ValueError(f"k={k} exceeds the {X.shape[1]} available columns")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    if k > len(S):
        raise ValueError(f"k={k} exceeds the rank bound {len(S)} of a {X.shape} matrix")
    comps = Vt[:k].copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    var = S**2 / max(X.shape[0] - 1, 1)
    total = var.sum()
    ratio = var / total if total > 0 else np.zeros_like(var)
    coords = Xc @ comps.T
    emb = FilterEmbedding(
        coords=coords,
        method="pca",
        final_objective=float(ratio[:k].sum()),
        diagnostics={"explained_variance_ratio": ratio[:k].tolist()},
    )
    return PcaResult(
        embedding=emb,
        components=comps,
        explained_variance=var[:k],
        explained_variance_ratio=ratio[:k],
        mean=mean,
    )


def export_embedding(emb: FilterEmbedding, ids: Sequence[str], path: str | Path, delimiter: str = ",") -> None:
    dims = emb.coords.shape[1]
    header = ["id", "x", "y"][: 1 + min(dims, 2)] + [f"c{d + 1}" for d in range(2, dims)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(header)
        for pid, row in zip(ids, emb.coords):
            writer.writerow([pid, *(f"{v:.6f}" for v in row)])


def export_kl_log(emb: FilterEmbedding, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,kl\n")
        for it, kl in emb.diagnostics.get("kl_history", []):
            fh.write(f"{it},{kl:.8f}\n")
