import csv

import numpy as np
import pytest

from polyrto.randfield import (CorrelationModel, correlation_from_samples, correlation_matrix,
                               kl_decompose, kl_realize)

SPAN = 120.0
SIGMA_F = 0.09


def exponential(l_corr=120.0, n=200, sigma_f=SIGMA_F):
    return CorrelationModel.on_segment("exponential", sigma_f, 0.0, SPAN, n, l_corr)


def constant(n=200, sigma_f=SIGMA_F):
    return CorrelationModel.on_segment("constant", sigma_f, 0.0, SPAN, n)


# --------------------------------------------------------------------------
# correlation matrices

def test_constant_matrix_rank_one():
    R = correlation_matrix(constant(20))
    assert np.all(R == SIGMA_F)
    assert np.linalg.matrix_rank(R) == 1


def test_exponential_matrix_properties():
    R = correlation_matrix(exponential())
    assert np.array_equal(R, R.T)
    assert np.all(np.diag(R) == SIGMA_F)
    assert np.linalg.eigvalsh(R).min() > -1e-12
    far = correlation_matrix(exponential(l_corr=1e6 * SPAN))
    assert np.max(np.abs(far - SIGMA_F)) < 1e-6


def test_model_validation():
    with pytest.raises(ValueError):
        CorrelationModel.on_segment("exponential", SIGMA_F, 0, 1, 5)
    with pytest.raises(ValueError):
        CorrelationModel.on_segment("constant", 0.0, 0, 1, 5)
    with pytest.raises(ValueError):
        CorrelationModel.on_segment("gaussian", 1.0, 0, 1, 5, 1.0)


def test_correlation_from_samples_examples():
    mean = np.array([1.0, 2.0, 3.0])
    same = np.tile(mean[:, None], (1, 4))
    assert np.array_equal(correlation_from_samples(same, mean), np.zeros((3, 3)))
    v = np.array([0.5, -1.0, 2.0])
    R = correlation_from_samples(np.stack([mean + v, mean - v], axis=1), mean)
    assert np.allclose(R, np.outer(v, v))
    with pytest.raises(ValueError):
        correlation_from_samples(mean[:, None], mean)


def test_correlation_from_samples_oracle():
    R = correlation_matrix(exponential())
    lam, vec = np.linalg.eigh(R)
    A = vec * np.sqrt(np.maximum(lam, 0.0))
    rng = np.random.default_rng(11)
    mean = np.ones(len(R))
    U = mean[:, None] + A @ rng.standard_normal((len(R), 10_000))
    Rh = correlation_from_samples(U, mean)
    assert np.max(np.abs(Rh - R) / R) < 0.05


# --------------------------------------------------------------------------
# decomposition

def test_constant_kernel_single_mode():
    for tau in (0.5, 0.9, 1.0):
        kl = kl_decompose(correlation_matrix(constant()), tau)
        assert kl.nu_kl == 1
        assert kl.energy[0] == pytest.approx(1.0, abs=1e-12)


def test_identity_kernel_half_energy():
    assert kl_decompose(np.eye(10), 0.5).nu_kl == 5


def test_exponential_bridge_modes():
    kl = kl_decompose(correlation_matrix(exponential()), nu_kl=7)
    assert kl.nu_kl == 7
    # energy of seven modes for l_corr = span; tau at that level selects 7 modes
    assert kl.energy[6] == pytest.approx(0.9689, abs=5e-4)
    assert kl_decompose(correlation_matrix(exponential()), kl.energy[6]).nu_kl == 7
    assert kl_decompose(correlation_matrix(exponential()), 0.9).nu_kl == 3


def test_eigen_invariants():
    R = correlation_matrix(exponential(l_corr=30.0))
    kl = kl_decompose(R, 0.95)
    lam = kl.eigenvalues
    assert np.all(np.diff(lam) <= 0) and lam.min() >= 0
    assert abs(lam.sum() - np.trace(R)) < 1e-8 * np.trace(R)
    assert np.allclose(kl.vectors.T @ kl.vectors, np.eye(kl.nu_kl), atol=1e-8)
    assert np.all(np.diff(kl.energy) >= -1e-15)
    assert kl.energy[-1] == pytest.approx(1.0, abs=1e-12)
    assert kl.energy[kl.nu_kl - 1] >= 0.95 > kl.energy[kl.nu_kl - 2]


def test_energy_reaches_one_at_rank():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((12, 4))
    kl = kl_decompose(B @ B.T, 1.0)
    assert kl.energy[3] == pytest.approx(1.0, abs=1e-10)
    assert kl.energy[2] < 1.0


def test_truncation_error_bound_and_monotone():
    R = correlation_matrix(exponential(l_corr=40.0, n=120))
    full = kl_decompose(R, nu_kl=len(R))
    const = np.sqrt(np.trace(R) / full.eigenvalues[0])
    errs = []
    for nu in range(1, 30):
        kl = kl_decompose(R, nu_kl=nu)
        err = np.linalg.norm(R - kl.covariance()) / np.linalg.norm(R)
        assert err <= np.sqrt(max(1 - kl.energy[nu - 1], 0.0)) * const + 1e-12
        errs.append(err)
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_decompose_errors():
    R = correlation_matrix(exponential(n=10))
    bad = R.copy()
    bad[0, 1] += 1e-3
    with pytest.raises(ValueError, match="symmetric"):
        kl_decompose(bad)
    with pytest.raises(ValueError, match="negative"):
        kl_decompose(np.diag([1.0, 0.5, -0.1]))
    # tiny negative roundoff is clamped
    kl = kl_decompose(np.diag([1.0, 0.5, -1e-14]))
    assert kl.eigenvalues[-1] == 0.0


def test_sign_convention_reproducible():
    R = correlation_matrix(exponential())
    a, b = kl_decompose(R, nu_kl=7), kl_decompose(R.copy(), nu_kl=7)
    assert np.array_equal(a.vectors, b.vectors)
    k = np.argmax(np.abs(a.vectors), axis=0)
    assert np.all(a.vectors[k, np.arange(7)] > 0)


def test_csv_dump(tmp_path):
    kl = kl_decompose(correlation_matrix(exponential(n=20)), nu_kl=3)
    kl.to_csv(tmp_path / "kl.csv")
    rows = list(csv.reader(open(tmp_path / "kl.csv")))
    assert rows[0] == ["mode", "eigenvalue", "energy"]
    assert len(rows) == 21
    assert float(rows[-1][2]) == pytest.approx(1.0)


# --------------------------------------------------------------------------
# synthesis

def test_realize_mean_and_linearity():
    model = exponential()
    kl = kl_decompose(correlation_matrix(model), nu_kl=7)
    mu = model.mean_values()
    assert np.array_equal(kl_realize(kl, mu, np.zeros(7)), mu)
    a, b = np.arange(7) / 7.0, np.ones(7)
    lhs = kl_realize(kl, mu, 2 * a - b) - mu
    rhs = 2 * (kl_realize(kl, mu, a) - mu) - (kl_realize(kl, mu, b) - mu)
    assert np.allclose(lhs, rhs, atol=1e-14)


def test_constant_kernel_realization():
    model = constant()
    kl = kl_decompose(correlation_matrix(model))
    field = kl_realize(kl, model.mean_values(), [1.0])
    # uniform shift by the pointwise standard deviation sqrt(sigma_f)
    assert np.allclose(field, 1.0 + np.sqrt(SIGMA_F), atol=1e-12)


def test_synthesized_covariance_and_uncorrelated_coordinates():
    model = exponential()
    kl = kl_decompose(correlation_matrix(model), nu_kl=7)
    mu = model.mean_values()
    xi = np.random.default_rng(5).standard_normal((100_000, 7))
    U = kl_realize(kl, mu, xi)
    cov = correlation_from_samples(U.T, mu)
    target = kl.covariance()
    assert np.max(np.abs(cov - target) / np.abs(target)) < 0.03
    # recovered KL coordinates are uncorrelated with unit variance
    rec = (U - mu) @ kl.vectors / np.sqrt(kl.retained)
    assert np.max(np.abs(np.corrcoef(rec.T) - np.eye(7))) < 0.02
    assert np.allclose(rec, xi, atol=1e-8)
