"""Normality models fitted online to the selected training subset.

Two model families: a shrinkage-regularized multivariate Gaussian scored by
Mahalanobis distance, and a nu-one-class SVM with an RBF kernel solved by
pairwise dual coordinate updates.  Both expose the same "higher score means
more anomalous" orientation so thresholding is uniform.
"""

import json
import struct
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .errors import (
    DimMismatch,
    EmptyTraining,
    ModelError,
    ModelLoadError,
    NonFiniteInput,
    TooFewSamples,
)

MODEL_MAGIC = b"NMDL"


def _check_samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise DimMismatch(f"samples must be an N x C matrix, got shape {x.shape}")
    if x.shape[0] < 2:
        raise TooFewSamples(f"need at least 2 samples, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("samples contain NaN or infinity")
    return x


# --- multivariate Gaussian ---------------------------------------------------

@dataclass
class MvgModel:
    mean: np.ndarray         # (C,)
    covariance: np.ndarray   # (C, C) after shrinkage
    cholesky_factor: np.ndarray  # lower triangular L with L @ L.T = covariance
    shrinkage: float

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_mvg(samples, shrinkage: float = 0.01) -> MvgModel:
    """Mean and shrunk covariance of the sample matrix.

    The raw covariance is the 1/N maximum-likelihood estimate; shrinking it
    toward (tr/C)*I keeps the Cholesky factorization viable when the
    selected subset is small relative to the feature dimension.
    """
    x = _check_samples(samples)
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError(f"shrinkage must be in [0, 1], got {shrinkage}")
    n, c = x.shape
    mean = x.mean(axis=0)
    centered = x - mean
    raw = centered.T @ centered / n
    trace = np.trace(raw)
    if trace <= 0.0:
        target = np.eye(c) * 1e-6
    else:
        target = np.eye(c) * (trace / c)
    cov = (1.0 - shrinkage) * raw + shrinkage * target
    cov = (cov + cov.T) / 2.0
    try:
        chol = cholesky(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise ModelError(f"covariance is not positive definite: {exc}") from exc
    return MvgModel(mean=mean, covariance=cov, cholesky_factor=chol, shrinkage=shrinkage)


def mahalanobis(model: MvgModel, x) -> np.ndarray:
    """Mahalanobis distance of one vector or a batch of row vectors.

    Solved against the Cholesky factor; the covariance is never inverted.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise DimMismatch(f"expected vectors of dim {model.dim}, got shape {x.shape}")
    z = solve_triangular(model.cholesky_factor, (x - model.mean).T, lower=True)
    d = np.sqrt(np.einsum("ij,ij->j", z, z))
    return float(d[0]) if single else d


# --- one-class SVM -----------------------------------------------------------

def rbf_kernel(x, y, gamma: float):
    """exp(-gamma * squared Euclidean distance), elementwise over rows."""
    if gamma <= 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[1] != y.shape[1]:
        raise DimMismatch(f"dims differ: {x.shape[1]} vs {y.shape[1]}")
    sq = (
        np.sum(x * x, axis=1)[:, None]
        + np.sum(y * y, axis=1)[None, :]
        - 2.0 * (x @ y.T)
    )
    np.maximum(sq, 0.0, out=sq)
    k = np.exp(-gamma * sq)
    if k.size == 1:
        return float(k[0, 0])
    return k


@dataclass
class OcsvmModel:
    support_vectors: np.ndarray   # (S, C)
    alphas: np.ndarray            # (S,) dual coefficients, all > 1e-8
    rho: float
    gamma: float
    nu: float
    converged: bool = True
    n_iter: int = 0

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]


def _auto_gamma(x: np.ndarray) -> float:
    c = x.shape[1]
    mean_var = float(x.var(axis=0).mean())
    return 1.0 / max(c * mean_var, 1e-12)


def fit_ocsvm(samples, nu: float = 0.05, gamma="auto", tol: float = 1e-4,
              cap: int = 20000, seed: int = 0) -> OcsvmModel:
    """Solve the nu-one-class dual by maximal-violating-pair updates.

    Minimizes 0.5 * a' Q a subject to 0 <= a_i <= 1/(nu*n) and sum(a) = 1,
    with Q the RBF Gram matrix.  Each step picks the most violating pair and
    moves mass between them; this is monotone in the objective, so hitting
    the iteration cap still leaves the best iterate found (flagged via
    ``converged=False`` plus a warning, not an exception).
    """
    x = _check_samples(samples)
    if not 0.0 < nu <= 1.0:
        raise ValueError(f"nu must be in (0, 1], got {nu}")
    if x.shape[0] > cap:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(x.shape[0], size=cap, replace=False))
        x = x[keep]
    n = x.shape[0]
    if gamma == "auto":
        gamma = _auto_gamma(x)
    gamma = float(gamma)
    if gamma <= 0.0:
        raise ValueError(f"gamma must be positive, got {gamma}")

    q = rbf_kernel(x, x, gamma)
    box = 1.0 / (nu * n)

    # start feasible the way LIBSVM does: fill the first floor(nu*n) entries
    # to the box, park the remainder on the next one
    alpha = np.zeros(n)
    n_full = int(nu * n)
    alpha[:n_full] = box
    if n_full < n:
        alpha[n_full] = 1.0 - n_full * box

    grad = q @ alpha
    max_iter = 100 * n
    it = 0
    converged = False
    while it < max_iter:
        can_up = alpha < box - 1e-12
        can_down = alpha > 1e-12
        if not can_up.any() or not can_down.any():
            converged = True  # box fully saturated (nu = 1); nothing can move
            break
        up_idx = np.where(can_up)[0]
        down_idx = np.where(can_down)[0]
        i = up_idx[np.argmin(grad[up_idx])]
        j = down_idx[np.argmax(grad[down_idx])]
        if grad[j] - grad[i] < tol:
            converged = True
            break
        quad = max(q[i, i] + q[j, j] - 2.0 * q[i, j], 1e-12)
        t = min((grad[j] - grad[i]) / quad, box - alpha[i], alpha[j])
        alpha[i] += t
        alpha[j] -= t
        grad += t * (q[:, i] - q[:, j])
        it += 1
    if not converged:
        warnings.warn(
            f"one-class SVM stopped at the {max_iter}-iteration cap; "
            "returning the best iterate",
            stacklevel=2,
        )

    free = (alpha > 1e-8) & (alpha < box - 1e-8)
    if free.any():
        rho = float(grad[free].mean())
    else:
        # no free support vectors: take the midpoint of the feasible interval
        lo = grad[alpha < box - 1e-12]
        hi = grad[alpha > 1e-12]
        rho = float((lo.min() + hi.max()) / 2.0) if lo.size and hi.size else float(grad.mean())

    sv = alpha > 1e-8
    return OcsvmModel(
        support_vectors=x[sv].copy(),
        alphas=alpha[sv].copy(),
        rho=rho,
        gamma=gamma,
        nu=nu,
        converged=converged,
        n_iter=it,
    )


def ocsvm_score(model: OcsvmModel, x) -> float | np.ndarray:
    """Decision deviation rho - sum(a_i K(sv_i, x)): positive outside the
    learned region, negative strictly inside."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.dim:
        raise DimMismatch(f"expected vectors of dim {model.dim}, got shape {x.shape}")
    k = np.atleast_2d(rbf_kernel(model.support_vectors, x, model.gamma))
    s = model.rho - model.alphas @ k
    return float(s[0]) if single else s


# --- scoring and thresholding ------------------------------------------------

@dataclass
class ScoreMap:
    grid: np.ndarray      # (H', W') scores
    image_score: float    # max over the grid


@dataclass
class Threshold:
    tau: float
    margin: float
    source_model: str


def model_scores(model, vectors: np.ndarray) -> np.ndarray:
    """Anomaly scores of an (N, C) batch under either model kind."""
    if isinstance(model, MvgModel):
        return np.asarray(mahalanobis(model, vectors))
    if isinstance(model, OcsvmModel):
        return np.asarray(ocsvm_score(model, vectors))
    raise ModelError(f"unknown model type {type(model).__name__}")


def _fm_vectors(fm: np.ndarray) -> np.ndarray:
    fm = np.asarray(fm, dtype=np.float64)
    if fm.ndim != 3:
        raise DimMismatch(f"feature map must be (C, H, W), got shape {fm.shape}")
    c = fm.shape[0]
    return fm.reshape(c, -1).T


def score_map(model, fm: np.ndarray) -> ScoreMap:
    """Score every grid location of a feature map."""
    fm = np.asarray(fm)
    vecs = _fm_vectors(fm)
    scores = model_scores(model, vecs).reshape(fm.shape[1], fm.shape[2])
    return ScoreMap(grid=scores, image_score=float(scores.max()))


def adaptive_threshold(model, training_maps, margin: float = 1.0) -> Threshold:
    """tau = margin times the largest score any training location receives.

    With margin 1.0 every image the model was fitted on scores at or below
    tau by construction, so the training set itself raises no alarms.
    """
    if margin < 1.0:
        raise ValueError(f"margin must be >= 1.0, got {margin}")
    maps = list(training_maps)
    if not maps:
        raise EmptyTraining("adaptive threshold needs at least one training map")
    worst = -np.inf
    for fm in maps:
        worst = max(worst, float(model_scores(model, _fm_vectors(fm)).max()))
    kind = "mvg" if isinstance(model, MvgModel) else "ocsvm"
    return Threshold(tau=margin * worst, margin=margin, source_model=kind)


# --- serialization (debugging aid) -------------------------------------------

def save_model(model, path):
    """JSON header describing the model, then little-endian f64 payload."""
    if isinstance(model, MvgModel):
        header = {"kind": "mvg", "dim": model.dim, "shrinkage": model.shrinkage}
        payload = [model.mean, model.covariance.ravel()]
    elif isinstance(model, OcsvmModel):
        header = {
            "kind": "ocsvm",
            "dim": model.dim,
            "n_support": int(model.support_vectors.shape[0]),
            "rho": model.rho,
            "gamma": model.gamma,
            "nu": model.nu,
            "converged": model.converged,
        }
        payload = [model.support_vectors.ravel(), model.alphas]
    else:
        raise ModelError(f"unknown model type {type(model).__name__}")
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in payload:
            fh.write(np.asarray(arr, dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MODEL_MAGIC:
            raise ModelLoadError(f"{path} is not a serialized model (bad magic)")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        body = fh.read()
    kind = header.get("kind")
    dim = int(header.get("dim", 0))
    if kind == "mvg":
        need = dim + dim * dim
        vals = np.frombuffer(body, dtype="<f8", count=need)
        mean = vals[:dim].copy()
        cov = vals[dim:].reshape(dim, dim).copy()
        chol = cholesky(cov, lower=True)
        return MvgModel(mean=mean, covariance=cov, cholesky_factor=chol,
                        shrinkage=float(header.get("shrinkage", 0.0)))
    if kind == "ocsvm":
        ns = int(header["n_support"])
        vals = np.frombuffer(body, dtype="<f8", count=ns * dim + ns)
        sv = vals[: ns * dim].reshape(ns, dim).copy()
        alphas = vals[ns * dim :].copy()
        return OcsvmModel(
            support_vectors=sv, alphas=alphas, rho=float(header["rho"]),
            gamma=float(header["gamma"]), nu=float(header["nu"]),
            converged=bool(header.get("converged", True)),
        )
    raise ModelLoadError(f"unknown model kind {kind!r} in {path}")
