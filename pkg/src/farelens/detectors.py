"""Four unsupervised anomaly scorers over the standardized feature matrix.

All detectors emit higher-is-more-anomalous scores of length n_stations and
are deterministic given their configuration. The isolation forest derives a
per-tree seed from (seed, tree index) and operates in station-id order, so
its output is independent of input row order like the other three.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.linalg import cho_factor, cho_solve

from .errors import ConfigError, InsufficientDataError
from .features import FeatureMatrix

EULER_GAMMA = 0.5772156649

METHOD_IFOREST = "iforest"
METHOD_LOF = "lof"
METHOD_OCSVM = "ocsvm"
METHOD_MAHALANOBIS = "mahalanobis"
METHODS: tuple[str, ...] = (METHOD_IFOREST, METHOD_LOF, METHOD_OCSVM, METHOD_MAHALANOBIS)

_LRD_CAP = 1e12


@dataclass(slots=True)
class IForestConfig:
    n_trees: int = 100
    subsample: int = 256  # effective size is min(subsample, N)
    seed: int = 0


@dataclass(slots=True)
class LofConfig:
    k: int = 20  # effective k is min(k, N - 1)


@dataclass(slots=True)
class OcsvmConfig:
    nu: float = 0.1
    gamma: float | None = None  # None -> 1 / (d * median pairwise sq dist)
    tol: float = 1e-6
    max_iter: int = 100_000


@dataclass(slots=True)
class MahalanobisConfig:
    shrinkage: float = 0.1  # blend toward trace-scaled identity


@dataclass(slots=True)
class DetectorConfig:
    iforest: IForestConfig = field(default_factory=IForestConfig)
    lof: LofConfig = field(default_factory=LofConfig)
    ocsvm: OcsvmConfig = field(default_factory=OcsvmConfig)
    mahalanobis: MahalanobisConfig = field(default_factory=MahalanobisConfig)


@dataclass(slots=True)
class DetectorScores:
    method: str
    scores: np.ndarray
    diagnostics: dict


def average_path_length(n: float) -> float:
    """Expected unsuccessful-search path length in a BST of n points."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1.0) + EULER_GAMMA) - 2.0 * (n - 1.0) / n


@njit(cache=True)
def _c_factor(n: float) -> float:
    if n <= 1.0:
        return 0.0
    if n == 2.0:
        return 1.0
    return 2.0 * (math.log(n - 1.0) + EULER_GAMMA) - 2.0 * (n - 1.0) / n


@njit(cache=True)
def _tree_paths(X, build_idx, uniforms, depth_cap, paths):
    """Grow one random tree over build_idx and add every point's path length.

    Build and query index pools are partitioned in place node by node; query
    points reaching a leaf receive leaf depth plus the subtree-size
    adjustment. `uniforms` is a pre-drawn random stream consumed in order.
    """
    n, d = X.shape
    psi = build_idx.shape[0]
    build = build_idx.copy()
    query = np.arange(n)

    cap = 4 * psi + 64
    st_blo = np.empty(cap, dtype=np.int64)
    st_bhi = np.empty(cap, dtype=np.int64)
    st_qlo = np.empty(cap, dtype=np.int64)
    st_qhi = np.empty(cap, dtype=np.int64)
    st_dep = np.empty(cap, dtype=np.int64)
    sp = 0
    st_blo[0], st_bhi[0], st_qlo[0], st_qhi[0], st_dep[0] = 0, psi, 0, n, 0
    sp = 1
    k = 0
    n_u = uniforms.shape[0]

    while sp > 0:
        sp -= 1
        blo, bhi = st_blo[sp], st_bhi[sp]
        qlo, qhi = st_qlo[sp], st_qhi[sp]
        depth = st_dep[sp]
        nb = bhi - blo

        make_leaf = nb <= 1 or depth >= depth_cap
        feat = -1
        fmin = 0.0
        fmax = 0.0
        if not make_leaf:
            for _ in range(d):
                if k >= n_u:
                    break
                f = int(uniforms[k] * d)
                if f >= d:
                    f = d - 1
                k += 1
                lo = X[build[blo], f]
                hi = lo
                for i in range(blo + 1, bhi):
                    v = X[build[i], f]
                    if v < lo:
                        lo = v
                    elif v > hi:
                        hi = v
                if hi > lo:
                    feat = f
                    fmin = lo
                    fmax = hi
                    break
            if feat < 0 or k >= n_u:
                make_leaf = True

        if make_leaf:
            adj = _c_factor(float(nb))
            for i in range(qlo, qhi):
                paths[query[i]] += depth + adj
            continue

        split = fmin + uniforms[k] * (fmax - fmin)
        k += 1

        # two-pointer partition: x < split goes left
        i, j = blo, bhi - 1
        while i <= j:
            if X[build[i], feat] < split:
                i += 1
            else:
                tmp = build[i]
                build[i] = build[j]
                build[j] = tmp
                j -= 1
        bmid = i

        i, j = qlo, qhi - 1
        while i <= j:
            if X[query[i], feat] < split:
                i += 1
            else:
                tmp = query[i]
                query[i] = query[j]
                query[j] = tmp
                j -= 1
        qmid = i

        st_blo[sp], st_bhi[sp], st_qlo[sp], st_qhi[sp], st_dep[sp] = blo, bmid, qlo, qmid, depth + 1
        sp += 1
        st_blo[sp], st_bhi[sp], st_qlo[sp], st_qhi[sp], st_dep[sp] = bmid, bhi, qmid, qhi, depth + 1
        sp += 1


def isolation_forest(matrix: FeatureMatrix, config: IForestConfig | None = None,
                     ) -> DetectorScores:
    """Random-partition isolation scores in (0, 1), deterministic per seed."""
    config = config or IForestConfig()
    order = np.argsort(np.asarray(matrix.stations))
    X = np.ascontiguousarray(matrix.values[order], dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise InsufficientDataError("isolation forest needs at least 2 stations")

    psi = min(config.subsample, n)
    depth_cap = math.ceil(math.log2(psi)) if psi > 1 else 0
    paths = np.zeros(n, dtype=np.float64)
    for t in range(config.n_trees):
        rng = np.random.default_rng([config.seed, t])
        build_idx = np.sort(rng.choice(n, size=psi, replace=False)).astype(np.int64)
        uniforms = rng.random(8 * psi + 16)
        _tree_paths(X, build_idx, uniforms, depth_cap, paths)

    mean_path = paths / config.n_trees
    scores_sorted = np.power(2.0, -mean_path / average_path_length(psi))
    scores = np.empty(n, dtype=np.float64)
    scores[order] = scores_sorted
    return DetectorScores(
        method=METHOD_IFOREST,
        scores=scores,
        diagnostics={"n_trees": config.n_trees, "subsample": psi,
                     "depth_cap": depth_cap, "seed": config.seed},
    )


def lof(matrix: FeatureMatrix, config: LofConfig | None = None) -> DetectorScores:
    """Local outlier factor with tie-inclusive neighborhoods.

    Points sitting on at least k exact duplicates get LOF 1 by convention;
    local reachability densities are capped so scores stay finite.
    """
    config = config or LofConfig()
    X = matrix.values
    n = X.shape[0]
    k = min(config.k, n - 1)
    if n <= k or k < 1:
        raise InsufficientDataError(f"lof needs more than k={config.k} stations, got {n}")

    sq = np.sum(X * X, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (X @ X.T), 0.0)
    dist = np.sqrt(d2)
    np.fill_diagonal(dist, np.inf)

    sorted_dist = np.sort(dist, axis=1)
    k_dist = sorted_dist[:, k - 1]
    neighbor_masks = dist <= k_dist[:, None]  # ties included

    lrd = np.empty(n, dtype=np.float64)
    for p in range(n):
        nb = np.nonzero(neighbor_masks[p])[0]
        reach = np.maximum(k_dist[nb], dist[p, nb])
        mean_reach = reach.mean()
        lrd[p] = _LRD_CAP if mean_reach <= 0.0 else min(1.0 / mean_reach, _LRD_CAP)

    scores = np.empty(n, dtype=np.float64)
    for p in range(n):
        if k_dist[p] <= 0.0:
            scores[p] = 1.0
            continue
        nb = np.nonzero(neighbor_masks[p])[0]
        scores[p] = np.mean(lrd[nb]) / lrd[p]
    return DetectorScores(
        method=METHOD_LOF,
        scores=scores,
        diagnostics={"k": k},
    )


def _rbf_kernel(X: np.ndarray, gamma: float) -> np.ndarray:
    sq = np.sum(X * X, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (X @ X.T), 0.0)
    return np.exp(-gamma * d2)


def resolve_gamma(X: np.ndarray, gamma: float | None) -> float:
    """Auto gamma: inverse of dimension times median pairwise squared distance."""
    if gamma is not None:
        if gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {gamma}")
        return gamma
    n, d = X.shape
    sq = np.sum(X * X, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (X @ X.T), 0.0)
    iu = np.triu_indices(n, k=1)
    med = float(np.median(d2[iu])) if iu[0].size else 0.0
    return 1.0 / (d * med) if med > 0 else 1.0 / d


def one_class_svm(matrix: FeatureMatrix, config: OcsvmConfig | None = None,
                  ) -> DetectorScores:
    """Origin-separating boundary via pairwise coordinate descent on the dual.

    Minimizes 0.5 * a'Ka subject to sum(a) = 1 and 0 <= a_i <= 1/(nu*N),
    stopping when the largest KKT violation drops below tol. Non-convergence
    is reported through diagnostics, not raised.
    """
    config = config or OcsvmConfig()
    if not (0.0 < config.nu <= 1.0):
        raise ConfigError(f"nu must be in (0, 1], got {config.nu}")
    X = matrix.values
    n = X.shape[0]
    if n < 2:
        raise InsufficientDataError("one-class svm needs at least 2 stations")

    gamma = resolve_gamma(X, config.gamma)
    K = _rbf_kernel(X, gamma)
    box = 1.0 / (config.nu * n)

    alpha = np.zeros(n, dtype=np.float64)
    m = int(math.floor(config.nu * n))
    alpha[:m] = box
    if m < n:
        alpha[m] = 1.0 - m * box
    grad = K @ alpha

    eps = box * 1e-9
    violation = np.inf
    iterations = 0
    for iterations in range(1, config.max_iter + 1):
        up = alpha < box - eps
        down = alpha > eps
        gi = np.where(up, grad, np.inf)
        gj = np.where(down, grad, -np.inf)
        i = int(np.argmin(gi))
        j = int(np.argmax(gj))
        violation = float(gj[j] - gi[i])
        if violation < config.tol:
            break
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if eta <= 1e-12:
            eta = 1e-12
        step = min(violation / eta, box - alpha[i], alpha[j])
        alpha[i] += step
        alpha[j] -= step
        grad += step * (K[:, i] - K[:, j])
    converged = violation < config.tol

    margin = (alpha > eps) & (alpha < box - eps)
    if np.any(margin):
        rho = float(grad[margin].mean())
    else:
        support = alpha > eps
        rho = float(grad[support].mean()) if np.any(support) else float(grad.mean())

    scores = rho - grad  # -f(x) for training points
    return DetectorScores(
        method=METHOD_OCSVM,
        scores=scores,
        diagnostics={
            "gamma": gamma,
            "nu": config.nu,
            "n_support": int(np.sum(alpha > eps)),
            "kkt_violation": violation,
            "iterations": iterations,
            "converged": converged,
            "convergence_warning": not converged,
            "alpha_sum": float(alpha.sum()),
            "alpha": alpha,
            "rho": rho,
        },
    )


def mahalanobis(matrix: FeatureMatrix, config: MahalanobisConfig | None = None,
                ) -> DetectorScores:
    """Shrunk-covariance Mahalanobis distance from the multivariate mean."""
    config = config or MahalanobisConfig()
    lam = config.shrinkage
    if not (0.0 <= lam <= 1.0):
        raise ConfigError(f"shrinkage must be in [0, 1], got {lam}")
    X = matrix.values
    n, d = X.shape
    if n < 2:
        raise InsufficientDataError("mahalanobis needs at least 2 stations")

    mu = X.mean(axis=0)
    centered = X - mu
    cov = (centered.T @ centered) / n  # population covariance
    trace = float(np.trace(cov))
    if trace <= 0.0:
        return DetectorScores(
            method=METHOD_MAHALANOBIS,
            scores=np.zeros(n, dtype=np.float64),
            diagnostics={"shrinkage": lam, "degenerate": True, "condition_number": 1.0},
        )
    shrunk = (1.0 - lam) * cov + lam * (trace / d) * np.eye(d)
    factor = cho_factor(shrunk, lower=True)
    solved = cho_solve(factor, centered.T)
    scores = np.sqrt(np.maximum(np.einsum("ij,ji->i", centered, solved), 0.0))
    cond = float(np.linalg.cond(shrunk))
    return DetectorScores(
        method=METHOD_MAHALANOBIS,
        scores=scores,
        diagnostics={"shrinkage": lam, "degenerate": False, "condition_number": cond},
    )


def run_all(matrix: FeatureMatrix, config: DetectorConfig | None = None,
            ) -> list[DetectorScores]:
    """Run all four detectors in the canonical method order."""
    config = config or DetectorConfig()
    return [
        isolation_forest(matrix, config.iforest),
        lof(matrix, config.lof),
        one_class_svm(matrix, config.ocsvm),
        mahalanobis(matrix, config.mahalanobis),
    ]
