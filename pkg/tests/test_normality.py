import numpy as np
import pytest

from adws.errors import DimMismatch, EmptyTraining, NonFiniteInput, TooFewSamples
from adws.normality import (
    MvgModel,
    OcsvmModel,
    ScoreMap,
    adaptive_threshold,
    fit_mvg,
    fit_ocsvm,
    load_model,
    mahalanobis,
    ocsvm_score,
    rbf_kernel,
    save_model,
    score_map,
)


def random_spd(rng, c):
    a = rng.normal(size=(c, c))
    return a @ a.T + c * np.eye(c)


def mvg_from(mean, cov, shrinkage=0.0):
    from scipy.linalg import cholesky

    cov = np.asarray(cov, dtype=np.float64)
    return MvgModel(
        mean=np.asarray(mean, dtype=np.float64),
        covariance=cov,
        cholesky_factor=cholesky(cov, lower=True),
        shrinkage=shrinkage,
    )


# --- fit_mvg ------------------------------------------------------------------


def test_mean_is_midpoint():
    m = fit_mvg(np.array([[0.0, 0.0], [2.0, 2.0]]))
    assert m.mean == pytest.approx([1.0, 1.0])


def test_shrunk_covariance_hand_computed():
    # raw covariance of {(0,0),(2,2)} under the 1/N rule is [[1,1],[1,1]];
    # trace 2 over dim 2 gives an identity target, so with lambda=0.01 the
    # shrunk matrix is 0.99*raw + 0.01*I
    m = fit_mvg(np.array([[0.0, 0.0], [2.0, 2.0]]), shrinkage=0.01)
    assert m.covariance == pytest.approx(np.array([[1.0, 0.99], [0.99, 1.0]]))


def test_recovers_known_gaussian():
    rng = np.random.default_rng(11)
    mean = np.array([1.0, -2.0, 0.5])
    cov = np.array([[1.0, 0.3, 0.0], [0.3, 2.0, -0.4], [0.0, -0.4, 0.5]])
    x = rng.multivariate_normal(mean, cov, size=10_000)
    m = fit_mvg(x, shrinkage=0.0)
    assert m.mean == pytest.approx(mean, abs=0.05)
    assert m.covariance == pytest.approx(cov, abs=0.05)


def test_cholesky_reproduces_covariance():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(60, 8))
    m = fit_mvg(x)
    rebuilt = m.cholesky_factor @ m.cholesky_factor.T
    assert np.allclose(rebuilt, m.covariance, rtol=1e-7)
    assert np.allclose(m.covariance, m.covariance.T, atol=1e-9)


def test_constant_samples_fall_back_to_scaled_identity():
    x = np.ones((5, 3))
    m = fit_mvg(x, shrinkage=0.01)
    assert np.all(np.isfinite(m.cholesky_factor))
    assert mahalanobis(m, np.ones(3)) == pytest.approx(0.0)


def test_fit_mvg_input_validation():
    with pytest.raises(TooFewSamples):
        fit_mvg(np.zeros((1, 3)))
    with pytest.raises(NonFiniteInput):
        fit_mvg(np.array([[0.0, np.nan], [1.0, 2.0]]))
    with pytest.raises(DimMismatch):
        fit_mvg(np.zeros(5))


# --- mahalanobis ---------------------------------------------------------------


def test_distance_at_mean_is_zero():
    m = fit_mvg(np.random.default_rng(0).normal(size=(50, 4)))
    assert mahalanobis(m, m.mean) == pytest.approx(0.0, abs=1e-12)


def test_identity_covariance_is_euclidean():
    m = mvg_from(np.zeros(2), np.eye(2))
    assert mahalanobis(m, np.array([3.0, 4.0])) == pytest.approx(5.0, abs=1e-12)


def test_matches_explicit_inverse_oracle():
    rng = np.random.default_rng(123)
    for _ in range(100):
        c = int(rng.integers(2, 17))
        cov = random_spd(rng, c)
        mean = rng.normal(size=c)
        m = mvg_from(mean, cov)
        x = rng.normal(size=c) * 3
        want = float(np.sqrt((x - mean) @ np.linalg.inv(cov) @ (x - mean)))
        got = mahalanobis(m, x)
        assert got == pytest.approx(want, rel=1e-8)


def test_affine_invariance():
    rng = np.random.default_rng(77)
    x = rng.normal(size=(300, 5))
    m = fit_mvg(x, shrinkage=0.0)
    for _ in range(50):
        a = rng.normal(size=(5, 5)) + 5 * np.eye(5)
        b = rng.normal(size=5)
        m2 = fit_mvg(x @ a.T + b, shrinkage=0.0)
        pt = rng.normal(size=5)
        d1 = mahalanobis(m, pt)
        d2 = mahalanobis(m2, a @ pt + b)
        assert d2 == pytest.approx(d1, rel=1e-6)


def test_dim_mismatch():
    m = mvg_from(np.zeros(3), np.eye(3))
    with pytest.raises(DimMismatch):
        mahalanobis(m, np.zeros(4))


# --- rbf kernel ------------------------------------------------------------------


def test_kernel_of_identical_points_is_one():
    x = np.array([1.0, 2.0, 3.0])
    assert rbf_kernel(x, x, gamma=0.5) == pytest.approx(1.0)


def test_kernel_analytic_value():
    x = np.zeros(4)
    y = np.zeros(4)
    y[0] = 1.0
    assert rbf_kernel(x, y, gamma=1.0) == pytest.approx(np.exp(-1.0))


def test_kernel_limit_small_gamma():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=4), rng.normal(size=4)
    assert rbf_kernel(x, y, gamma=1e-12) == pytest.approx(1.0, abs=1e-9)


def test_kernel_dim_mismatch():
    with pytest.raises(DimMismatch):
        rbf_kernel(np.zeros(3), np.zeros(4), gamma=1.0)


# --- one-class SVM ----------------------------------------------------------------


def _qp_oracle(q, nu, n, iters=3_000):
    """Dense accelerated projected-gradient solve of the same dual,
    independent of the SMO implementation under test."""
    box = 1.0 / (nu * n)

    def project(v):
        # Euclidean projection onto {0 <= a <= box, sum(a) = 1} by bisection
        lo = v.min() - box - 1.0
        hi = v.max() + 1.0
        for _ in range(60):
            mid = (lo + hi) / 2
            s = np.clip(v - mid, 0.0, box).sum()
            if s > 1.0:
                lo = mid
            else:
                hi = mid
        return np.clip(v - (lo + hi) / 2, 0.0, box)

    alpha = project(np.full(n, 1.0 / n))
    lr = 1.0 / (np.linalg.eigvalsh(q).max() + 1e-12)
    y = alpha.copy()
    t = 1.0
    for _ in range(iters):
        nxt = project(y - lr * (q @ y))
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        y = nxt + ((t - 1.0) / t_next) * (nxt - alpha)
        alpha, t = nxt, t_next
    return alpha


def test_two_points_nu_one_forces_uniform():
    m = fit_ocsvm(np.array([[0.0, 0.0], [1.0, 1.0]]), nu=1.0, gamma=1.0)
    assert m.alphas == pytest.approx([0.5, 0.5])


def test_dual_feasibility():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(80, 3))
    m = fit_ocsvm(x, nu=0.2, gamma=0.7)
    box = 1.0 / (0.2 * 80)
    assert m.alphas.sum() == pytest.approx(1.0, abs=1e-6)
    assert np.all(m.alphas > 1e-8)
    assert np.all(m.alphas <= box + 1e-12)
    assert m.converged


def test_smo_matches_projected_gradient_oracle():
    rng = np.random.default_rng(31)
    from adws.normality import rbf_kernel as k

    for trial in range(5):
        x = rng.normal(size=(20, 2))
        nu = 0.3
        gamma = 0.8
        q = k(x, x, gamma)
        m = fit_ocsvm(x, nu=nu, gamma=gamma)
        alpha_full = np.zeros(20)
        # reconstruct the full alpha vector from support vectors by matching rows
        used = set()
        for sv, a in zip(m.support_vectors, m.alphas):
            for i in range(20):
                if i not in used and np.allclose(x[i], sv):
                    alpha_full[i] = a
                    used.add(i)
                    break
        obj_smo = 0.5 * alpha_full @ q @ alpha_full
        alpha_oracle = _qp_oracle(q, nu, 20)
        obj_oracle = 0.5 * alpha_oracle @ q @ alpha_oracle
        assert obj_smo <= obj_oracle + 1e-3, f"trial {trial}"


def test_kkt_conditions_at_convergence():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(100, 2))
    nu, gamma, tol = 0.15, 0.5, 1e-4
    m = fit_ocsvm(x, nu=nu, gamma=gamma, tol=tol)
    box = 1.0 / (nu * len(x))
    scores = np.array([ocsvm_score(m, sv) for sv in m.support_vectors])
    free = (m.alphas > 1e-8) & (m.alphas < box - 1e-8)
    assert np.all(np.abs(scores[free]) <= 10 * tol)
    at_box = m.alphas >= box - 1e-8
    assert np.all(scores[at_box] >= -10 * tol)


def test_nu_property():
    rng = np.random.default_rng(100)
    x = rng.normal(size=(200, 2))
    nu = 0.1
    m = fit_ocsvm(x, nu=nu, gamma="auto")
    scores = np.array([ocsvm_score(m, xi) for xi in x])
    violators = float(np.mean(scores > 1e-7))
    sv_fraction = len(m.alphas) / len(x)
    assert violators <= nu + 0.03
    assert sv_fraction >= nu - 0.03


def test_score_at_free_support_vector_is_near_zero():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(120, 2))
    tol = 1e-4
    m = fit_ocsvm(x, nu=0.2, gamma=1.0, tol=tol)
    box = 1.0 / (0.2 * 120)
    free = (m.alphas > 1e-8) & (m.alphas < box - 1e-8)
    assert free.any()
    s = ocsvm_score(m, m.support_vectors[np.argmax(free)])
    assert abs(s) <= 10 * tol


def test_score_far_from_data_approaches_rho():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(50, 2))
    m = fit_ocsvm(x, nu=0.1, gamma=1.0)
    far = np.array([1e3, -1e3])
    assert ocsvm_score(m, far) == pytest.approx(m.rho, abs=1e-9)


def test_inliers_score_below_outliers():
    rng = np.random.default_rng(21)
    train = rng.normal(size=(150, 2))
    m = fit_ocsvm(train, nu=0.1, gamma="auto")
    inliers = rng.normal(size=(50, 2)) * 0.5
    outliers = rng.normal(size=(50, 2)) * 0.5 + 8.0
    si = np.array([ocsvm_score(m, p) for p in inliers])
    so = np.array([ocsvm_score(m, p) for p in outliers])
    wins = np.mean(so[None, :] > si[:, None])
    assert wins >= 0.95


def test_subsampling_cap_is_deterministic():
    rng = np.random.default_rng(33)
    x = rng.normal(size=(500, 2))
    m1 = fit_ocsvm(x, nu=0.1, cap=100, seed=5)
    m2 = fit_ocsvm(x, nu=0.1, cap=100, seed=5)
    assert np.array_equal(m1.support_vectors, m2.support_vectors)
    assert np.array_equal(m1.alphas, m2.alphas)
    assert m1.rho == m2.rho


def test_fit_ocsvm_validation():
    with pytest.raises(TooFewSamples):
        fit_ocsvm(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        fit_ocsvm(np.zeros((5, 2)), nu=0.0)
    with pytest.raises(NonFiniteInput):
        fit_ocsvm(np.array([[np.inf, 0.0], [0.0, 1.0]]))


# --- score maps and threshold -----------------------------------------------------


def test_score_map_all_mean_is_zero():
    m = mvg_from(np.ones(4), np.eye(4))
    fm = np.ones((4, 3, 3), dtype=np.float32)
    sm = score_map(m, fm)
    assert sm.grid == pytest.approx(np.zeros((3, 3)), abs=1e-12)
    assert sm.image_score == 0.0


def test_score_map_max_at_perturbed_location():
    m = mvg_from(np.zeros(4), np.eye(4))
    fm = np.zeros((4, 5, 5), dtype=np.float32)
    fm[:, 2, 3] = 2.0
    sm = score_map(m, fm)
    assert np.unravel_index(np.argmax(sm.grid), sm.grid.shape) == (2, 3)
    assert sm.image_score == pytest.approx(4.0)  # sqrt(4 * 2^2)


def test_score_map_matches_per_vector_oracle():
    rng = np.random.default_rng(55)
    x = rng.normal(size=(100, 8))
    m = fit_mvg(x)
    fm = rng.normal(size=(8, 6, 7)).astype(np.float32)
    sm = score_map(m, fm)
    for i in range(6):
        for j in range(7):
            want = mahalanobis(m, fm[:, i, j].astype(np.float64))
            assert sm.grid[i, j] == pytest.approx(want, rel=1e-10)
    assert sm.image_score == sm.grid.max()


def test_adaptive_threshold_is_max_of_training_scores():
    # identity-covariance model at the origin: a location's score is just its
    # Euclidean norm, so three single-location maps give scores 1.2, 3.4, 2.2
    m = mvg_from(np.zeros(2), np.eye(2))
    maps = []
    for v in (1.2, 3.4, 2.2):
        fm = np.zeros((2, 1, 1), dtype=np.float32)
        fm[0, 0, 0] = v
        maps.append(fm)
    th = adaptive_threshold(m, maps, margin=1.0)
    assert th.tau == pytest.approx(3.4)
    th2 = adaptive_threshold(m, maps, margin=1.1)
    assert th2.tau == pytest.approx(3.74)


def test_adaptive_threshold_empty_raises():
    m = mvg_from(np.zeros(2), np.eye(2))
    with pytest.raises(EmptyTraining):
        adaptive_threshold(m, [])


def test_margin_below_one_rejected():
    m = mvg_from(np.zeros(2), np.eye(2))
    with pytest.raises(ValueError):
        adaptive_threshold(m, [np.zeros((2, 2, 2), dtype=np.float32)], margin=0.9)


def test_training_locations_never_exceed_tau():
    rng = np.random.default_rng(66)
    maps = [rng.normal(size=(6, 4, 4)).astype(np.float32) for _ in range(5)]
    vecs = np.concatenate([f.reshape(6, -1).T for f in maps])
    m = fit_mvg(vecs)
    th = adaptive_threshold(m, maps, margin=1.0)
    for fm in maps:
        assert score_map(m, fm).image_score <= th.tau + 1e-12


# --- serialization -----------------------------------------------------------------


def test_mvg_round_trip(tmp_path):
    m = fit_mvg(np.random.default_rng(1).normal(size=(40, 6)))
    path = tmp_path / "m.model"
    save_model(m, path)
    back = load_model(path)
    assert isinstance(back, MvgModel)
    assert back.mean == pytest.approx(m.mean)
    assert back.covariance == pytest.approx(m.covariance)
    x = np.random.default_rng(2).normal(size=6)
    assert mahalanobis(back, x) == pytest.approx(mahalanobis(m, x))


def test_ocsvm_round_trip(tmp_path):
    m = fit_ocsvm(np.random.default_rng(3).normal(size=(60, 3)), nu=0.2)
    path = tmp_path / "o.model"
    save_model(m, path)
    back = load_model(path)
    assert isinstance(back, OcsvmModel)
    x = np.random.default_rng(4).normal(size=3)
    assert ocsvm_score(back, x) == pytest.approx(ocsvm_score(m, x))
