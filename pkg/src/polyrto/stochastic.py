"""Germs, orthonormal polynomial chaos bases, collocation grids and estimators.

The germ is a vector of independent standardized variables: uniform
variables live on ``[-1, 1]`` (Legendre basis), Gaussian and Gumbel
variables are driven by a standard normal (Hermite basis).  Compliance
statistics are estimated either from a polynomial chaos regression on a
tensor Gauss grid or by plain Monte Carlo.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import special
from scipy.linalg import solve_triangular

EULER_GAMMA = 0.5772156649015329


class AliasingWarning(RuntimeWarning):
    """Negative variance estimate from an under-resolved expansion."""


class RankDeficientError(ValueError):
    pass


@dataclass(frozen=True)
class RandomVariableSpec:
    """One random input: ``uniform(lo, hi)``, ``normal(mean, std)`` or ``gumbel(mean, std)``."""

    kind: str
    a: float
    b: float
    meaning: str = ""

    def __post_init__(self):
        if self.kind not in ("uniform", "normal", "gumbel"):
            raise ValueError(f"unknown distribution {self.kind!r}")
        if self.kind == "uniform" and not self.a <= self.b:
            raise ValueError("uniform needs lo <= hi")
        if self.kind != "uniform" and not self.b > 0:
            raise ValueError("standard deviation must be positive")

    @classmethod
    def uniform(cls, lo, hi, meaning=""):
        return cls("uniform", float(lo), float(hi), meaning)

    @classmethod
    def normal(cls, mean, std, meaning=""):
        return cls("normal", float(mean), float(std), meaning)

    @classmethod
    def gumbel(cls, mean, std, meaning=""):
        return cls("gumbel", float(mean), float(std), meaning)

    @property
    def family(self):
        return "legendre" if self.kind == "uniform" else "hermite"

    @property
    def mean(self):
        return 0.5 * (self.a + self.b) if self.kind == "uniform" else self.a

    @property
    def std(self):
        if self.kind == "uniform":
            return (self.b - self.a) / math.sqrt(12.0)
        return self.b

    @property
    def gumbel_scale(self):
        return self.b * math.sqrt(6.0) / math.pi

    @property
    def gumbel_loc(self):
        return self.a - EULER_GAMMA * self.gumbel_scale

    def to_physical(self, xi):
        xi = np.asarray(xi, dtype=float)
        if self.kind == "uniform":
            return self.a + (self.b - self.a) * (xi + 1.0) / 2.0
        if self.kind == "normal":
            return self.a + self.b * xi
        # isoprobabilistic map: Gumbel quantile of the normal CDF
        return self.gumbel_loc - self.gumbel_scale * np.log(-special.log_ndtr(xi))

    def standardize(self, u):
        """Map uniform(0, 1) draws to the standardized germ variable."""
        if self.kind == "uniform":
            return 2.0 * u - 1.0
        return special.ndtri(u)


@dataclass(frozen=True)
class Germ:
    specs: tuple

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        if not self.specs:
            raise ValueError("germ needs at least one random variable")

    @property
    def dim(self):
        return len(self.specs)

    @property
    def families(self):
        return tuple(s.family for s in self.specs)

    def to_physical(self, xi):
        xi = np.atleast_2d(xi)
        return np.stack([s.to_physical(xi[:, k]) for k, s in enumerate(self.specs)], axis=1)

    def nominal(self):
        return np.array([s.mean for s in self.specs])


# --------------------------------------------------------------------------
# Bases

@dataclass(frozen=True)
class PcBasis:
    nu_rv: int
    order: int
    indices: np.ndarray

    @property
    def size(self):
        return len(self.indices)


def multi_indices(nu_rv: int, p_pc: int) -> PcBasis:
    """Total-degree multi-indices in graded lexicographic order."""
    if nu_rv < 1 or p_pc < 0:
        raise ValueError("need nu_rv >= 1 and p_pc >= 0")
    idx = [a for a in itertools.product(range(p_pc + 1), repeat=nu_rv) if sum(a) <= p_pc]
    idx.sort(key=lambda a: (sum(a), tuple(-v for v in a)))
    out = np.array(idx, dtype=np.int64).reshape(-1, nu_rv)
    out.setflags(write=False)
    return PcBasis(nu_rv, p_pc, out)


def basis_size(nu_rv, p_pc):
    return math.comb(nu_rv + p_pc, p_pc)


def orthonormal_1d(family: str, degree: int, x) -> np.ndarray:
    """Values of the orthonormal polynomials 0..degree at ``x``; shape ``(*x.shape, degree+1)``."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (degree + 1,))
    out[..., 0] = 1.0
    if degree == 0:
        return out
    if family == "legendre":
        # P_{n+1} = ((2n+1) x P_n - n P_{n-1}) / (n+1), normalized by sqrt(2n+1)
        p_prev, p = np.ones_like(x), x.copy()
        out[..., 1] = math.sqrt(3.0) * p
        for n in range(1, degree):
            p_prev, p = p, ((2 * n + 1) * x * p - n * p_prev) / (n + 1)
            out[..., n + 1] = math.sqrt(2 * n + 3) * p
    elif family == "hermite":
        # He_{n+1} = x He_n - n He_{n-1}, normalized by sqrt(n!)
        h_prev, h = np.ones_like(x), x.copy()
        out[..., 1] = h
        for n in range(1, degree):
            h_prev, h = h, x * h - n * h_prev
            out[..., n + 1] = h / math.sqrt(math.factorial(n + 1))
    else:
        raise ValueError(f"unknown polynomial family {family!r}")
    return out


def eval_basis(basis: PcBasis, germ: Germ, xi) -> np.ndarray:
    """``psi_n(xi)`` for every basis function; shape ``(n_points, basis.size)``."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if xi.shape[1] != basis.nu_rv or germ.dim != basis.nu_rv:
        raise ValueError("germ dimension does not match the basis")
    out = np.ones((len(xi), basis.size))
    for k, fam in enumerate(germ.families):
        table = orthonormal_1d(fam, basis.order, xi[:, k])
        out *= table[:, basis.indices[:, k]]
    return out


# --------------------------------------------------------------------------
# Collocation grids

def gauss_rule_1d(family: str, n: int):
    """Gauss nodes and probability weights for the germ family."""
    if n < 1:
        raise ValueError("need at least one node per dimension")
    if family == "legendre":
        x, w = np.polynomial.legendre.leggauss(n)
        return x, w / 2.0
    if family == "hermite":
        x, w = np.polynomial.hermite_e.hermegauss(n)
        return x, w / math.sqrt(2.0 * math.pi)
    raise ValueError(f"unknown polynomial family {family!r}")


class CollocationGrid:
    """Tensor grid of 1-D Gauss nodes; points are materialized on demand.

    Points are ordered with the last dimension varying fastest.
    """

    def __init__(self, germ: Germ, nodes_per_dim: int):
        if nodes_per_dim < 1:
            raise ValueError("nodes_per_dim must be >= 1")
        self.germ = germ
        self.nodes_per_dim = nodes_per_dim
        rules = [gauss_rule_1d(f, nodes_per_dim) for f in germ.families]
        self.nodes_1d = [r[0] for r in rules]
        self.weights_1d = [r[1] for r in rules]

    @property
    def count(self):
        return self.nodes_per_dim ** self.germ.dim

    def __len__(self):
        return self.count

    def points_at(self, index):
        sub = np.unravel_index(np.asarray(index), (self.nodes_per_dim,) * self.germ.dim)
        return np.stack([self.nodes_1d[k][s] for k, s in enumerate(sub)], axis=-1)

    def weights_at(self, index):
        sub = np.unravel_index(np.asarray(index), (self.nodes_per_dim,) * self.germ.dim)
        w = np.ones(np.shape(index))
        for k, s in enumerate(sub):
            w = w * self.weights_1d[k][s]
        return w

    @cached_property
    def points(self):
        return self.points_at(np.arange(self.count))

    @cached_property
    def weights(self):
        """Tensor Gauss probability weights (not the regression weights)."""
        return self.weights_at(np.arange(self.count))

    def physical_points(self, index=None):
        xi = self.points if index is None else self.points_at(index)
        return self.germ.to_physical(xi)

    def chunks(self, size):
        for start in range(0, self.count, size):
            idx = np.arange(start, min(start + size, self.count))
            yield idx, self.points_at(idx)


def gauss_grid(germ: Germ, nodes_per_dim: int) -> CollocationGrid:
    return CollocationGrid(germ, nodes_per_dim)


# --------------------------------------------------------------------------
# Regression

DIRECT_LIMIT = 20_000_000
CHUNK = 16_384


class PcExpansion:
    """Least-squares polynomial chaos fit on a collocation grid.

    By default the residual is weighted by the Gauss probability weights, so
    that the quadrature estimators reproduce the coefficient-based mean and
    variance for any response in the basis span; ``weighted=False`` gives the
    plain ``(Psi^T Psi)^-1 Psi^T`` fit.  ``weights`` is the first row of the
    pseudoinverse, so ``weights @ C`` equals the fitted zeroth coefficient.
    """

    def __init__(self, basis: PcBasis, grid: CollocationGrid, weighted=True, rank_tol=1e-10):
        if grid.count < basis.size:
            raise RankDeficientError(
                f"{grid.count} collocation points for {basis.size} basis functions; "
                "use more nodes per dimension")
        self.basis, self.grid = basis, grid
        self.germ = grid.germ
        self.weighted = weighted
        self.direct = grid.count * basis.size <= DIRECT_LIMIT
        if self.direct:
            self.Psi = eval_basis(basis, self.germ, grid.points)
            Q, R = np.linalg.qr(self._row_scale(np.arange(grid.count))[:, None] * self.Psi)
            self._Q = Q
        else:
            self.Psi = None
            R = self._tsqr()
        d = np.abs(np.diag(R))
        if d.min() <= rank_tol * d.max():
            raise RankDeficientError(
                "regression matrix is rank deficient; use more nodes per dimension "
                f"(at least {basis.order + 1} per dimension for order {basis.order})")
        self._R = R

    def _row_scale(self, idx):
        if not self.weighted:
            return np.ones(len(idx))
        return np.sqrt(self.grid.weights_at(idx))

    def _scaled_chunks(self):
        for idx, pts in self.grid.chunks(CHUNK):
            s = self._row_scale(idx)
            yield idx, s, s[:, None] * eval_basis(self.basis, self.germ, pts)

    def _tsqr(self):
        Rs = [np.linalg.qr(A, mode="r") for _, _, A in self._scaled_chunks()]
        return np.linalg.qr(np.vstack(Rs), mode="r")

    def _rinv_rt(self, v):
        y = solve_triangular(self._R, v, trans="T")
        return solve_triangular(self._R, y)

    @cached_property
    def pinv(self):
        """Pseudoinverse mapping responses to coefficients (direct path only)."""
        if not self.direct:
            raise MemoryError("pseudoinverse not materialized for large grids")
        s = self._row_scale(np.arange(self.grid.count))
        return solve_triangular(self._R, self._Q.T) * s

    @cached_property
    def weights(self):
        if self.direct:
            return self.pinv[0].copy()
        e0 = np.zeros(self.basis.size)
        e0[0] = 1.0
        a = self._rinv_rt(e0)
        W = np.empty(self.grid.count)
        for idx, s, A in self._scaled_chunks():
            W[idx] = s * (A @ a)
        return W

    def fit(self, responses):
        U = np.asarray(responses, dtype=float)
        if U.shape[0] != self.grid.count:
            raise ValueError("one response per collocation point required")
        if self.direct:
            return self.pinv @ U
        rhs = np.zeros((self.basis.size,) + U.shape[1:])
        for idx, s, A in self._scaled_chunks():
            rhs += A.T @ (s.reshape((-1,) + (1,) * (U.ndim - 1)) * U[idx])
        return self._rinv_rt(rhs)

    def residual(self, responses, coefficients):
        if not self.direct:
            raise MemoryError("residual not materialized for large grids")
        return np.asarray(responses) - self.Psi @ coefficients

    def predict(self, coefficients, xi):
        return eval_basis(self.basis, self.germ, xi) @ coefficients


def fit_pce(grid: CollocationGrid, responses, basis: PcBasis, weighted=True):
    return PcExpansion(basis, grid, weighted=weighted).fit(responses)


# --------------------------------------------------------------------------
# Estimators

def gpc_mean(coefficients) -> float:
    return float(np.asarray(coefficients)[0])


def gpc_mean_quadrature(W, responses):
    return np.asarray(W) @ np.asarray(responses)


def gpc_std(coefficients) -> float:
    c = np.asarray(coefficients, dtype=float)
    return float(np.sqrt(np.sum(c[1:] ** 2)))


def gpc_std_quadrature(W, responses, mean):
    C = np.asarray(responses, dtype=float)
    if C.size and C.max() == C.min():
        return 0.0
    # centered form: equals sum W C^2 - mean^2 when sum W = 1 and mean = W C,
    # without the cancellation that leaves ~sqrt(eps)*mean for nearly
    # deterministic responses
    radicand = float(np.asarray(W) @ (C - mean) ** 2)
    if radicand < 0:
        # roundoff on an exactly constant response is not aliasing
        if radicand < -1e-12 * max(mean * mean, 1e-300):
            warnings.warn("negative variance estimate clamped to zero; "
                          "the expansion order may be too low", AliasingWarning, stacklevel=2)
        return 0.0
    return math.sqrt(radicand)


def gpc_sensitivity_mean(W, gradients):
    """``sum_j W_j dC_j``; ``gradients`` has shape ``(n_elements, n_points)``."""
    return np.asarray(gradients) @ np.asarray(W)


def gpc_sensitivity_std(W, responses, gradients, mean, std, grad_mean):
    G = np.asarray(gradients)
    if std <= 0:
        return np.zeros(G.shape[0])
    W = np.asarray(W)
    return (G @ (W * np.asarray(responses)) - mean * np.asarray(grad_mean)) / std


@dataclass
class McStats:
    mean: float
    std: float
    grad_mean: np.ndarray | None = None
    grad_std: np.ndarray | None = None


def mc_estimators(samples, gradients=None) -> McStats:
    """Sample mean, unbiased standard deviation and their design sensitivities."""
    C = np.asarray(samples, dtype=float)
    n = len(C)
    mu = float(C.sum() / n)
    if n < 2:
        raise ValueError("need at least two samples for a standard deviation")
    sigma = 0.0 if C.max() == C.min() else float(np.sqrt(np.sum((C - mu) ** 2) / (n - 1)))
    if gradients is None:
        return McStats(mu, sigma)
    G = np.asarray(gradients)
    gmu = G.sum(axis=1) / n
    if sigma > 0:
        gsig = (G @ C - n * mu * gmu) / ((n - 1) * sigma)
    else:
        gsig = np.zeros_like(gmu)
    return McStats(mu, sigma, gmu, gsig)


def sample_germ(germ: Germ, count: int, seed: int) -> np.ndarray:
    """Standardized germ realizations from a Philox counter-based stream."""
    gen = np.random.Generator(np.random.Philox(key=seed))
    u = gen.random((count, germ.dim))
    # keep inverse-CDF arguments strictly inside (0, 1)
    u = np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).eps)
    return np.stack([s.standardize(u[:, k]) for k, s in enumerate(germ.specs)], axis=1)
