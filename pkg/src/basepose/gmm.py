"""Gaussian mixtures over poses: parameter container, exact log density,
and sampling.

Covariances are carried as lower Cholesky factors with strictly positive
diagonals, so every mixture is positive definite by construction. All
mixture arithmetic is float64 regardless of the model compute dtype.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch
from .geometry import Pose, wrap_angle

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GmmParams:
    """weights (K,) on the simplex, means (K, d), chol (K, d, d) lower."""

    weights: np.ndarray
    means: np.ndarray
    chol: np.ndarray

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.means = np.ascontiguousarray(self.means, dtype=np.float64)
        self.chol = np.ascontiguousarray(self.chol, dtype=np.float64)
        k, d = self.means.shape
        if self.weights.shape != (k,):
            raise ValueError("weights must have shape (K,)")
        if self.chol.shape != (k, d, d):
            raise ValueError("chol must have shape (K, d, d)")
        if (self.weights < 0).any() or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")
        for l in self.chol:
            if (np.diag(l) <= 0).any():
                raise ValueError("Cholesky diagonals must be strictly positive")
            if np.abs(np.triu(l, 1)).max(initial=0.0) != 0.0:
                raise ValueError("Cholesky factors must be lower triangular")

    @property
    def n_kernels(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def covariances(self) -> np.ndarray:
        return np.einsum("kij,klj->kil", self.chol, self.chol)


def _pose_vector(gmm: GmmParams, p) -> np.ndarray:
    vec = p.as_array() if isinstance(p, Pose) else np.asarray(p, dtype=np.float64)
    if vec.shape != (gmm.dim,):
        raise DimensionMismatch(
            f"pose has dimension {vec.shape}, mixture expects ({gmm.dim},)"
        )
    return vec


def component_log_probs(gmm: GmmParams, x: np.ndarray) -> np.ndarray:
    """Per-component log N(x; mu_k, L_k L_k^T) for x of shape (n, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n, d = x.shape
    out = np.empty((n, gmm.n_kernels), dtype=np.float64)
    for k in range(gmm.n_kernels):
        l = gmm.chol[k]
        z = solve_triangular(l, (x - gmm.means[k]).T, lower=True).T
        out[:, k] = (
            -0.5 * d * LOG_2PI
            - np.log(np.diag(l)).sum()
            - 0.5 * np.einsum("ij,ij->i", z, z)
        )
    return out


def gmm_log_prob_batch(gmm: GmmParams, x: np.ndarray) -> np.ndarray:
    """log sum_k w_k N(x_i; mu_k, Sigma_k) for x of shape (n, d)."""
    comp = component_log_probs(gmm, x)
    with np.errstate(divide="ignore"):
        logw = np.where(gmm.weights > 0.0, np.log(gmm.weights), -np.inf)
    a = comp + logw
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def gmm_log_prob(gmm: GmmParams, p) -> float:
    """Mixture log density at one pose (or raw pose vector)."""
    return float(gmm_log_prob_batch(gmm, _pose_vector(gmm, p)[None, :])[0])


def gmm_responsibilities(gmm: GmmParams, x: np.ndarray) -> np.ndarray:
    """Posterior component probabilities r_{ik} for x of shape (n, d)."""
    comp = component_log_probs(gmm, x)
    with np.errstate(divide="ignore"):
        logw = np.where(gmm.weights > 0.0, np.log(gmm.weights), -np.inf)
    a = comp + logw
    a -= a.max(axis=1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)


def gmm_sample_n(gmm: GmmParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n pose vectors; theta (column 2) is canonicalized."""
    comp = rng.choice(gmm.n_kernels, size=n, p=gmm.weights)
    z = rng.standard_normal((n, gmm.dim))
    x = gmm.means[comp] + np.einsum("nij,nj->ni", gmm.chol[comp], z)
    x[:, 2] = wrap_angle(x[:, 2])
    return x


def gmm_sample(gmm: GmmParams, seed_or_rng) -> Pose:
    """Draw one pose: pick a component by weight, then mu_k + L_k z."""
    rng = (
        seed_or_rng
        if isinstance(seed_or_rng, np.random.Generator)
        else np.random.default_rng(seed_or_rng)
    )
    vec = gmm_sample_n(gmm, 1, rng)[0]
    if gmm.dim == 4 and vec[3] < 0.0:
        vec[3] = 0.0
    return Pose.from_array(vec)
