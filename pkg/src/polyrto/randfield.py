"""Karhunen-Loève discretization of 1-D random load fields.

The correlation operator is sampled on a uniform grid along the loaded
edge and decomposed as a plain symmetric matrix (no quadrature weights).
Realizations are ``mean + sum_n sqrt(lam_n) phi_n xi_n``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CorrelationModel:
    """``constant``: R = sigma_f; ``exponential``: R = sigma_f exp(-|x - x'| / l_corr).

    ``sigma_f`` is the value that appears in front of the kernel, so it has
    variance units; the pointwise standard deviation is ``sqrt(sigma_f)``.
    """

    kind: str
    sigma_f: float
    grid: np.ndarray
    l_corr: float | None = None
    mean: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "exponential"):
            raise ValueError(f"unknown correlation kind {self.kind!r}")
        if not self.sigma_f > 0:
            raise ValueError("sigma_f must be positive")
        if self.kind == "exponential" and not (self.l_corr is not None and self.l_corr > 0):
            raise ValueError("exponential kernel needs l_corr > 0")
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=float))

    @classmethod
    def on_segment(cls, kind, sigma_f, start, stop, n_points, l_corr=None, mean=1.0):
        return cls(kind, sigma_f, np.linspace(start, stop, n_points), l_corr, mean)

    def mean_values(self):
        return np.full(len(self.grid), float(self.mean))


def correlation_matrix(model: CorrelationModel) -> np.ndarray:
    x = model.grid
    if model.kind == "constant":
        return np.full((len(x), len(x)), model.sigma_f)
    return model.sigma_f * np.exp(-np.abs(x[:, None] - x[None, :]) / model.l_corr)


def correlation_from_samples(realizations, mean) -> np.ndarray:
    """``(1/M) U U^T`` from zero-mean realizations stored column-wise (n x M)."""
    U = np.asarray(realizations, dtype=float)
    M = U.shape[1]
    if M < 2:
        raise ValueError("need at least two realizations")
    U = U - np.asarray(mean, dtype=float).reshape(-1, 1)
    return U @ U.T / M


@dataclass(frozen=True)
class KlBasis:
    eigenvalues: np.ndarray      # all eigenvalues, descending
    vectors: np.ndarray          # retained eigenvectors, one per column
    nu_kl: int
    energy: np.ndarray           # cumulative energy ratio, energy[k] for k+1 modes

    @property
    def retained(self):
        return self.eigenvalues[:self.nu_kl]

    def covariance(self):
        """Covariance ``Phi Lambda Phi^T`` of the truncated expansion."""
        return (self.vectors * self.retained) @ self.vectors.T

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mode", "eigenvalue", "energy"])
            for k, (lam, en) in enumerate(zip(self.eigenvalues, self.energy), start=1):
                w.writerow([k, repr(float(lam)), repr(float(en))])


def kl_decompose(R, tau=0.9, nu_kl=None, sym_tol=1e-10) -> KlBasis:
    """Full symmetric eigendecomposition and energy truncation.

    ``nu_kl`` pins the number of modes; otherwise the smallest count whose
    energy ratio reaches ``tau`` is kept.
    """
    R = np.asarray(R, dtype=float)
    scale = max(np.abs(R).max(), 1e-300)
    if np.abs(R - R.T).max() > sym_tol * scale:
        raise ValueError("correlation matrix is not symmetric")
    lam, vec = np.linalg.eigh(0.5 * (R + R.T))
    lam, vec = lam[::-1], vec[:, ::-1]
    if lam[-1] < -sym_tol * max(lam[0], 1e-300):
        raise ValueError(f"correlation matrix has a negative eigenvalue {lam[-1]:.3e}")
    lam = np.maximum(lam, 0.0)
    total = lam.sum()
    if total <= 0:
        raise ValueError("correlation matrix has no energy")
    energy = np.minimum(np.cumsum(lam) / total, 1.0)
    if nu_kl is None:
        if not 0 < tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        nu_kl = int(np.searchsorted(energy, tau - 1e-12) + 1)
    if not 1 <= nu_kl <= len(lam):
        raise ValueError("nu_kl out of range")
    # fix eigenvector signs so the output is reproducible across LAPACK builds
    v = vec[:, :nu_kl]
    flip = np.sign(v[np.argmax(np.abs(v), axis=0), np.arange(nu_kl)])
    v = v * np.where(flip == 0, 1.0, flip)
    return KlBasis(lam, v, nu_kl, energy)


def kl_realize(basis: KlBasis, mean, xi) -> np.ndarray:
    """Field values on the grid for germ values ``xi`` (length nu_kl, or rows of them)."""
    xi = np.asarray(xi, dtype=float)
    modes = basis.vectors * np.sqrt(basis.retained)
    mean = np.asarray(mean, dtype=float)
    if xi.ndim == 1:
        return mean + modes @ xi
    return mean[None, :] + xi @ modes.T
