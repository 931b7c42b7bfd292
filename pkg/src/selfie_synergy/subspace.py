"""
PCA conditioning, regularized CCA and the per-image synergy feature
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as la

from .errors import ArgumentError, SingularCovarianceError

STD_FLOOR = 1e-8
SYNERGY_EPS = 1e-10


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (p, c), rows orthonormal
    explained_variance: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.components.shape[1]

    @property
    def dims(self) -> int:
        return self.components.shape[0]


@dataclass(frozen=True)
class CcaModel:
    x_mean: np.ndarray
    y_mean: np.ndarray
    A: np.ndarray  # (c', k)
    B: np.ndarray  # (d', k)
    correlations: np.ndarray
    ridge: float

    @property
    def k(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension zero-mean, unit-variance scaling frozen on training rows"""
    mean: np.ndarray
    std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return standardizer_apply(self, values)


SynergyStandardizer = Standardizer


def _sign_by_largest(vectors: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude entry is positive"""
    pivot = np.argmax(np.abs(vectors), axis=1)
    signs = np.sign(vectors[np.arange(len(vectors)), pivot])
    signs[signs == 0] = 1.0
    return vectors * signs[:, None]


def pca_fit(X: np.ndarray, p: int) -> PcaModel:
    """
    Fit a p-component PCA

    Args:
        X: Data matrix of shape (n, c)
        p: Number of retained components, 1 <= p <= min(n - 1, c)

    Returns:
        Fitted PcaModel with components sorted by explained variance
    """
    n, c = X.shape
    if n < 2 or not 1 <= p <= min(n - 1, c):
        raise ArgumentError(f"PCA needs 1 <= p <= min(n-1, c) = {min(n - 1, c)}, got p={p}")
    mean = X.mean(axis=0)
    centered = X - mean
    # thin SVD of the centered data diagonalizes whichever of X'X and XX' is smaller
    _, singular, vt = la.svd(centered, full_matrices=False)
    variance = singular ** 2 / (n - 1)
    components = _sign_by_largest(vt[:p])
    return PcaModel(mean=mean, components=components, explained_variance=variance[:p])


def pca_project(model: PcaModel, x: np.ndarray) -> np.ndarray:
    """Coordinates of one vector (or rows of a matrix) in the PCA basis"""
    if np.shape(x)[-1] != model.input_dim:
        raise ArgumentError(f"expected length {model.input_dim}, got {np.shape(x)[-1]}")
    return (x - model.mean) @ model.components.T


def pca_reconstruct(model: PcaModel, z: np.ndarray) -> np.ndarray:
    """Map PCA coordinates back to the input space"""
    return z @ model.components + model.mean


def _inverse_sqrt(cov: np.ndarray, ridge: float, view: str) -> np.ndarray:
    evals, evecs = la.eigh(cov)
    tol = max(evals.max(), 0.0) * cov.shape[0] * np.finfo(float).eps
    if evals.min() <= tol:
        if ridge == 0:
            raise SingularCovarianceError(view)
        evals = np.maximum(evals, tol)
    return (evecs / np.sqrt(evals)) @ evecs.T


def cca_fit(X: np.ndarray, Y: np.ndarray, k: int, ridge: float = 1e-3) -> CcaModel:
    """
    Regularized canonical correlation analysis

    Args:
        X: First view, shape (n, c')
        Y: Second view, shape (n, d')
        k: Number of canonical modes to keep
        ridge: Diagonal loading added to both auto-covariances

    Returns:
        CcaModel whose weights maximize corr(XA_i, YB_i) mode by mode
    """
    n = X.shape[0]
    if Y.shape[0] != n:
        raise ArgumentError(f"views have different sample counts: {n} vs {Y.shape[0]}")
    if n < 3:
        raise ArgumentError(f"CCA needs at least 3 samples, got {n}")
    if not 1 <= k <= min(X.shape[1], Y.shape[1]):
        raise ArgumentError(f"k={k} exceeds min view dimension {min(X.shape[1], Y.shape[1])}")
    if ridge < 0:
        raise ArgumentError(f"ridge must be non-negative, got {ridge}")

    x_mean, y_mean = X.mean(axis=0), Y.mean(axis=0)
    xc, yc = X - x_mean, Y - y_mean
    sxx = xc.T @ xc / (n - 1) + ridge * np.eye(X.shape[1])
    syy = yc.T @ yc / (n - 1) + ridge * np.eye(Y.shape[1])
    sxy = xc.T @ yc / (n - 1)

    wx = _inverse_sqrt(sxx, ridge, "X")
    wy = _inverse_sqrt(syy, ridge, "Y")
    u, d, vt = la.svd(wx @ sxy @ wy, full_matrices=False)
    A = wx @ u[:, :k]
    B = wy @ vt[:k].T

    # first nonzero entry of each A column positive; B follows so corr stays >= 0
    for i in range(k):
        nonzero = np.flatnonzero(np.abs(A[:, i]) > 0)
        if nonzero.size and A[nonzero[0], i] < 0:
            A[:, i] = -A[:, i]
            B[:, i] = -B[:, i]
    correlations = np.clip(d[:k], 0.0, 1.0)
    return CcaModel(x_mean=x_mean, y_mean=y_mean, A=A, B=B,
                    correlations=correlations, ridge=float(ridge))


def cca_project(model: CcaModel, gamma: np.ndarray, tau: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Canonical variates U = (γ' - x_mean)A and V = (τ' - y_mean)B"""
    if np.shape(gamma)[-1] != model.A.shape[0] or np.shape(tau)[-1] != model.B.shape[0]:
        raise ArgumentError(
            f"expected views of length {model.A.shape[0]} and {model.B.shape[0]}, "
            f"got {np.shape(gamma)[-1]} and {np.shape(tau)[-1]}"
        )
    return (gamma - model.x_mean) @ model.A, (tau - model.y_mean) @ model.B


def synergy(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """
    Unit-normalized difference of paired canonical variates

    Works on single vectors or row-wise on matrices. A difference with
    norm below 1e-10 maps to the zero vector.
    """
    if np.shape(U) != np.shape(V):
        raise ArgumentError(f"U and V shapes differ: {np.shape(U)} vs {np.shape(V)}")
    diff = np.asarray(U, dtype=np.float64) - V
    norm = np.linalg.norm(diff, axis=-1, keepdims=True)
    safe = np.where(norm < SYNERGY_EPS, 1.0, norm)
    return np.where(norm < SYNERGY_EPS, 0.0, diff / safe)


def standardizer_fit(S_set: np.ndarray) -> Standardizer:
    """Column means and population standard deviations with a 1e-8 floor"""
    if S_set.shape[0] < 2:
        raise ArgumentError(f"standardizer needs at least 2 rows, got {S_set.shape[0]}")
    return Standardizer(mean=S_set.mean(axis=0),
                        std=np.maximum(S_set.std(axis=0), STD_FLOOR))


def standardizer_apply(std: Standardizer, S_raw: np.ndarray) -> np.ndarray:
    return (S_raw - std.mean) / std.std


@dataclass(frozen=True)
class SynergyModel:
    """Frozen chain γ, τ → (optional PCA) → CCA → synergy → standardized S"""
    cca: CcaModel
    standardizer: Standardizer
    pca_x: Optional[PcaModel] = None
    pca_y: Optional[PcaModel] = None

    def raw_synergy(self, hog: np.ndarray, lbp: np.ndarray) -> np.ndarray:
        gamma = pca_project(self.pca_x, hog) if self.pca_x is not None else hog
        tau = pca_project(self.pca_y, lbp) if self.pca_y is not None else lbp
        U, V = cca_project(self.cca, gamma, tau)
        return synergy(U, V)

    def transform(self, hog: np.ndarray, lbp: np.ndarray) -> np.ndarray:
        return standardizer_apply(self.standardizer, self.raw_synergy(hog, lbp))


def fit_synergy_model(hog: np.ndarray, lbp: np.ndarray, k: int, ridge: float,
                      pca_dims: Optional[int] = None) -> SynergyModel:
    """
    Fit the full synergy chain on training rows only

    Args:
        hog: HOG descriptors, shape (n, c)
        lbp: LBP descriptors, shape (n, d)
        k: Canonical modes
        ridge: CCA regularization
        pca_dims: Per-view PCA width, or None to skip PCA

    Returns:
        SynergyModel ready to map any image's descriptors to S
    """
    pca_x = pca_y = None
    gamma, tau = hog, lbp
    if pca_dims:
        n = hog.shape[0]
        pca_x = pca_fit(hog, min(pca_dims, n - 1, hog.shape[1]))
        pca_y = pca_fit(lbp, min(pca_dims, n - 1, lbp.shape[1]))
        gamma, tau = pca_project(pca_x, hog), pca_project(pca_y, lbp)
    cca = cca_fit(gamma, tau, k, ridge)
    U, V = cca_project(cca, gamma, tau)
    standardizer = standardizer_fit(synergy(U, V))
    return SynergyModel(cca=cca, standardizer=standardizer, pca_x=pca_x, pca_y=pca_y)
