import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyncut.spectral import (
    AugmentedSpectralMoments,
    FrequencyGrid,
    SpectralError,
    build_basis,
    default_grid,
    fit_moments,
    fit_spectral_covariance,
    fit_spectral_mean,
    imaginary_residual,
    psd_project,
    reconstruct,
    reconstruct_many,
    sample_moments,
    stationary_grid,
)

from oracles import dense_moments_lstsq, ols_harmonic_fit, raw_correlation_moments


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


# grid and basis -------------------------------------------------------------

def test_default_grid_examples():
    g = default_grid(252, 2)
    np.testing.assert_allclose(g.omegas, [2 * np.pi / 252, 4 * np.pi / 252])
    assert g.include_dc
    np.testing.assert_allclose(default_grid(4, 2).omegas, [np.pi / 2, np.pi])


@pytest.mark.parametrize("period, h", [(4, 3), (1, 1), (10, 0)])
def test_default_grid_bounds(period, h):
    with pytest.raises(SpectralError):
        default_grid(period, h)


@pytest.mark.parametrize("omegas", [(0.0,), (-0.1,), (0.5, 0.3), (0.2, 0.2), (4.0,)])
def test_grid_rejects_bad_frequencies(omegas):
    with pytest.raises(SpectralError):
        FrequencyGrid(omegas)


def test_empty_grid_without_dc_rejected():
    with pytest.raises(SpectralError):
        FrequencyGrid((), include_dc=False)


def test_basis_example_quarter_wave():
    b = build_basis(FrequencyGrid((np.pi / 2,), include_dc=False), 1)
    np.testing.assert_allclose(b(1), (1 / np.sqrt(2)) * np.array([[1j, -1j]]), atol=1e-15)


def test_basis_at_origin_is_real_and_flat():
    g = default_grid(252, 3)
    phi = build_basis(g, 2)(0)
    expected = np.kron(np.full((1, g.n_blocks), 1 / np.sqrt(6)), np.eye(2))
    np.testing.assert_allclose(phi, expected, atol=0)


def test_basis_shape():
    assert build_basis(FrequencyGrid((0.1, 0.2), include_dc=False), 3)(5).shape == (3, 12)
    assert build_basis(FrequencyGrid((0.1, 0.2)), 3)(5).shape == (3, 15)


def test_basis_conjugate_pairing():
    g = FrequencyGrid((0.3, 1.1, np.pi))
    phi = g.phasors(np.arange(-5, 20))
    perm = g.conjugate_permutation()
    np.testing.assert_array_equal(phi[:, perm], phi.conj())


def test_basis_needs_assets():
    with pytest.raises(SpectralError):
        build_basis(default_grid(10, 1), 0)


# mean ------------------------------------------------------------------------

def test_constant_returns_dc_only():
    x = np.full((30, 3), 0.004)
    m = fit_spectral_mean(x, build_basis(stationary_grid(), 3))
    np.testing.assert_allclose(m, 0.004)


def test_cosine_mean_recovered():
    P, T, a = 21, 21 * 12, 0.03
    w = 2 * np.pi / P
    t = np.arange(T)
    x = np.zeros((T, 3))
    x[:, 1] = a * np.cos(w * t)
    g = default_grid(P, 1)
    mean = fit_spectral_mean(x, build_basis(g, 3))
    m_t = np.real(g.phasors(t) @ mean.reshape(g.n_blocks, 3))
    oracle = np.column_stack([ols_harmonic_fit(x[:, i], g.omegas) for i in range(3)])
    assert np.abs(m_t - oracle).max() < 1e-10
    assert np.abs(m_t - x).max() < 1e-10


def test_zero_returns_zero_mean():
    m = fit_spectral_mean(np.zeros((17, 2)), build_basis(default_grid(12, 2), 2))
    np.testing.assert_array_equal(m, 0)


def test_mean_dimension_mismatch():
    with pytest.raises(SpectralError):
        fit_spectral_mean(np.zeros((5, 2)), build_basis(default_grid(4, 1), 3))


def test_mean_conjugate_pairing_exact():
    rng = np.random.default_rng(3)
    g = default_grid(10, 3)
    m = fit_spectral_mean(rng.standard_normal((37, 4)), build_basis(g, 4)).reshape(g.n_blocks, 4)
    np.testing.assert_array_equal(m[g.conjugate_permutation()], m.conj())


# covariance ------------------------------------------------------------------

@pytest.mark.parametrize("omegas, include_dc", [((0.4, 1.3), True), ((2 * np.pi / 7,), False), ((0.9, np.pi), True)])
def test_matches_dense_least_squares(omegas, include_dc):
    rng = np.random.default_rng(11)
    x = rng.standard_normal((40, 2)) * 0.01
    grid = FrequencyGrid(omegas, include_dc)
    moments = fit_moments(x, grid)
    mean_o, cov_o, phis = dense_moments_lstsq(x, omegas, include_dc)
    np.testing.assert_allclose(moments.mean, mean_o, atol=1e-12)
    np.testing.assert_allclose(moments.covariance, cov_o, atol=1e-12 * np.abs(cov_o).max())
    for t in (0, 7, 39, 250):
        phi = phis[t] if t < len(phis) else build_basis(grid, 2)(t)
        expected = (phi @ cov_o @ phi.conj().T).real
        _, R = reconstruct(moments, t)
        np.testing.assert_allclose(R, expected, atol=1e-12 * np.abs(expected).max())


def test_raw_moments_without_gram_correction():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((25, 3))
    omegas = (0.5, 2.0)
    grid = FrequencyGrid(omegas)
    basis = build_basis(grid, 3)
    mean = fit_spectral_mean(x, basis, gram_correction=False)
    moments = fit_spectral_covariance(x, basis, mean, gram_correction=False)
    mean_o, cov_o = raw_correlation_moments(x, omegas, True)
    np.testing.assert_allclose(mean, mean_o, atol=1e-14)
    np.testing.assert_allclose(moments.covariance, cov_o, atol=1e-13)


def test_stationary_reduction():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((300, 5)) @ rng.standard_normal((5, 5)) * 0.01 + 0.001
    moments = fit_moments(x, stationary_grid())
    mu, S = sample_moments(x)
    oracle_S = np.cov(x, rowvar=False, bias=True)
    np.testing.assert_allclose(S, oracle_S, rtol=1e-12)
    for t in (0, 17, 299, 5000, -3):
        m, R = reconstruct(moments, t)
        assert rel(m, mu) < 1e-12
        assert rel(R, oracle_S) < 1e-12


def test_single_observation():
    x = np.array([[0.01, -0.02, 0.005]])
    moments = fit_moments(x, default_grid(8, 2))
    C = moments.covariance
    np.testing.assert_allclose(C, C.conj().T, atol=0)
    assert np.linalg.matrix_rank(C, tol=1e-10 * max(np.abs(C).max(), 1e-300)) <= 1


def test_covariance_dimension_mismatch():
    basis = build_basis(default_grid(8, 1), 2)
    with pytest.raises(SpectralError):
        fit_spectral_covariance(np.zeros((10, 2)), basis, np.zeros(3))


def _moments_random(seed=0, T=120, n=3, period=12, h=2, cross=True):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((T, n)) * 0.01
    return x, fit_moments(x, default_grid(period, h), cross_frequency=cross)


def test_hermitian_and_augmented_symmetry():
    _, m = _moments_random()
    C = m.covariance
    f, n = m.n_blocks, m.n_assets
    np.testing.assert_array_equal(C, C.conj().T)
    perm = m.grid.conjugate_permutation()
    C4 = C.reshape(f, n, f, n)
    np.testing.assert_allclose(C4[perm][:, :, perm], C4.conj(), atol=0)
    k = m.grid.n_freq
    upper_left = C4[:k, :, :k, :]
    lower_right = C4[k:2 * k, :, k:2 * k, :]
    assert np.linalg.norm(lower_right - upper_left.conj()) == 0


def test_cross_frequency_blocks_zeroed():
    _, m = _moments_random(cross=False)
    f, n = m.n_blocks, m.n_assets
    idx = m.grid.block_frequency_index()
    C4 = m.covariance.reshape(f, n, f, n)
    for a in range(f):
        for b in range(f):
            if idx[a] != idx[b]:
                assert np.all(C4[a, :, b, :] == 0)


def test_realness():
    _, m = _moments_random(seed=4)
    assert imaginary_residual(m, np.arange(-50, 400)).max() < 1e-9


def test_parseval_energy():
    T, period = 240, 24
    x, m = _moments_random(seed=9, T=T, period=period, h=3)
    grid = m.grid
    phi = grid.phasors(np.arange(T))
    s = x - np.real(phi @ m.mean.reshape(grid.n_blocks, m.n_assets))
    _, R = reconstruct_many(m, np.arange(T))
    lhs = np.trace(R, axis1=1, axis2=2).mean()
    rhs = (s ** 2).sum(axis=1).mean()
    assert abs(lhs - rhs) / rhs < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.floats(-50, 50).filter(lambda a: abs(a) > 1e-3), st.integers(0, 1000))
def test_estimator_linearity(alpha, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((48, 2))
    g = default_grid(12, 2)
    m1 = fit_moments(x, g)
    m2 = fit_moments(alpha * x, g)
    np.testing.assert_allclose(m2.mean, alpha * m1.mean, atol=1e-12 * abs(alpha))
    np.testing.assert_allclose(m2.covariance, alpha**2 * m1.covariance, atol=1e-12 * alpha**2)


def test_periodic_extrapolation():
    _, m = _moments_random(seed=2, period=12, h=3)
    for t in (5, 130, 1000):
        m1, R1 = reconstruct(m, t)
        m2, R2 = reconstruct(m, t + 12)
        np.testing.assert_allclose(m2, m1, atol=1e-12 * np.abs(m1).max())
        np.testing.assert_allclose(R2, R1, atol=1e-12 * np.abs(R1).max())


def test_zero_moments_reconstruct_zero():
    g = default_grid(10, 2)
    width = g.n_blocks * 3
    m = AugmentedSpectralMoments(np.zeros(width, complex), np.zeros((width, width), complex), g, 3, 10)
    mu, R = reconstruct(m, 42, psd_repair=True)
    np.testing.assert_array_equal(mu, 0)
    np.testing.assert_array_equal(R, 0)


def test_broken_symmetry_raises():
    _, m = _moments_random()
    bad = m.covariance.copy()
    bad[0, 1] += 1j * np.abs(bad).max()
    broken = AugmentedSpectralMoments(m.mean, bad, m.grid, m.n_assets, m.n_train)
    with pytest.raises(SpectralError, match="imaginary residual"):
        reconstruct(broken, 3)


def test_psd_repair():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((5, 5))
    A = A + A.T
    P = psd_project(A)
    assert np.linalg.eigvalsh(P).min() >= -1e-12
    np.testing.assert_allclose(P, P.T, atol=0)
    G = rng.standard_normal((5, 5))
    S = G @ G.T
    assert psd_project(S) is S


def test_reconstruction_repaired_is_psd():
    # short sample, many harmonics -> indefinite raw reconstructions
    _, m = _moments_random(seed=8, T=30, n=4, period=10, h=5)
    _, raw = reconstruct_many(m, np.arange(60))
    _, fixed = reconstruct_many(m, np.arange(60), psd_repair=True)
    assert np.linalg.eigvalsh(raw).min() < 0
    assert np.linalg.eigvalsh(fixed).min() >= -1e-12


def test_planted_covariance_small_ensemble():
    from dyncut.synth import block_covariance, generate_returns, two_regime

    model = two_regime(block_covariance(3, [[0, 1]], 0.6), block_covariance(3, [[1, 2]], 0.6), 50)
    errs = []
    g = default_grid(50, 1)
    for seed in range(4):
        x = generate_returns(model, 2000, seed=seed)
        _, R = reconstruct_many(fit_moments(x, g), np.arange(2000))
        truth = model(np.arange(2000))
        errs.append(np.mean(np.linalg.norm(R - truth, axis=(1, 2)) / np.linalg.norm(truth, axis=(1, 2))))
    assert np.mean(errs) < 0.2


# serialization ---------------------------------------------------------------

@pytest.mark.parametrize("suffix", [".json", ".bin"])
def test_round_trip(tmp_path, suffix):
    _, m = _moments_random()
    m.tickers = ("a", "b", "c")
    path = tmp_path / f"m{suffix}"
    m.save(path)
    back = AugmentedSpectralMoments.load(path)
    np.testing.assert_array_equal(back.mean, m.mean)
    np.testing.assert_array_equal(back.covariance, m.covariance)
    assert back.grid == m.grid and back.tickers == m.tickers and back.n_train == m.n_train
    m.save(tmp_path / f"again{suffix}")
    assert (tmp_path / f"again{suffix}").read_bytes() == path.read_bytes()


def test_truncated_binary(tmp_path):
    _, m = _moments_random()
    path = tmp_path / "m.bin"
    m.save(path)
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(SpectralError, match="truncated"):
        AugmentedSpectralMoments.load(path)
