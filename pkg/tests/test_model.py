import numpy as np
import pytest

from rampreg.model import (DesignSpec, DistributionSpec, assemble_instance,
                           generate_coefficients, generate_design,
                           generate_errors, load_instance, save_instance,
                           simulate_instance)

GAUSS = DistributionSpec("gaussian", mean=0.0, sd=1.0)
MIX = DistributionSpec("gaussian_mixture", weights=(0.5, 0.5), means=(0.0, 5.0),
                       sds=(1.0, 3.0), target_sd=0.2)


class TestGenerateDesign:
    def test_iid_column_variances(self):
        X = generate_design(DesignSpec(4, 2, 0.0, seed=1))
        assert X.shape == (4, 2)
        # MC sanity only: entries are N(0, 1/4)
        X_big = generate_design(DesignSpec(500, 200, 0.0, seed=1))
        assert np.var(X_big) == pytest.approx(1 / 500, rel=0.05)
        assert np.mean(X_big) == pytest.approx(0.0, abs=3 / np.sqrt(500 * 200 * 500) ** 0.5)

    def test_toeplitz_adjacent_correlation(self):
        X = generate_design(DesignSpec(60, 2000, 0.3, seed=5))
        cors = [np.corrcoef(X[:, j], X[:, j + 1])[0, 1] for j in range(1999)]
        assert np.mean(cors) == pytest.approx(0.3, abs=0.02)
        np.testing.assert_allclose(X.var(axis=0, ddof=1), 1 / 60, rtol=1e-10)
        np.testing.assert_allclose(X.mean(axis=0), 0.0, atol=1e-15)

    def test_seeded_determinism(self):
        a = generate_design(DesignSpec(30, 20, 0.2, seed=42))
        b = generate_design(DesignSpec(30, 20, 0.2, seed=42))
        np.testing.assert_array_equal(a, b)

    def test_rejects_bad_sigma(self):
        with pytest.raises(ValueError):
            DesignSpec(10, 10, 1.0, seed=0)
        with pytest.raises(ValueError):
            DesignSpec(10, 10, -0.1, seed=0)


class TestGenerateCoefficients:
    def test_zero_sparsity(self):
        np.testing.assert_array_equal(generate_coefficients(10, 0, GAUSS, 3),
                                      np.zeros(10))

    def test_dirac_support(self):
        beta = generate_coefficients(500, 5, DistributionSpec("dirac_pm1"), 11)
        nz = beta[beta != 0]
        assert len(nz) == 5
        assert set(np.unique(nz)) <= {-1.0, 1.0}
        assert np.count_nonzero(beta) == 5

    def test_gaussian_values_sd(self):
        vals = []
        for seed in range(200):
            beta = generate_coefficients(500, 50, GAUSS, seed)
            vals.append(beta[beta != 0])
        assert np.std(np.concatenate(vals)) == pytest.approx(1.0, rel=0.03)

    def test_exact_support_size_always(self):
        for seed in range(20):
            s = seed % 8
            beta = generate_coefficients(40, s, GAUSS, seed)
            assert np.count_nonzero(beta) == s

    def test_rejects_s_too_large(self):
        with pytest.raises(ValueError):
            generate_coefficients(5, 6, GAUSS, 0)


class TestGenerateErrors:
    def test_mixture_rescaled_exactly(self):
        eps = generate_errors(250, MIX, 7)
        assert np.std(eps, ddof=1) == pytest.approx(0.2, abs=1e-14)
        assert np.mean(eps) == pytest.approx(0.0, abs=1e-14)

    def test_student_t_target(self):
        eps = generate_errors(100, DistributionSpec("student_t", df=3, target_sd=0.03), 9)
        assert np.std(eps, ddof=1) == pytest.approx(0.03, abs=1e-15)

    def test_point_mass_warns_and_skips(self):
        with pytest.warns(UserWarning):
            eps = generate_errors(50, DistributionSpec("point_mass", value=0.0,
                                                       target_sd=1.0), 2)
        np.testing.assert_array_equal(eps, np.zeros(50))

    def test_n_too_small_for_rescale(self):
        with pytest.raises(ValueError):
            generate_errors(1, MIX, 0)


class TestAssembleInstance:
    def test_unit_beta_picks_column(self):
        X = np.array([[2.0, 0.0], [0.0, 3.0], [1.0, 1.0]])
        inst = assemble_instance(X, np.array([1.0, 0.0]), np.zeros(3))
        np.testing.assert_array_equal(inst.Y, X[:, 0])

    def test_zero_beta_gives_eps(self):
        X = np.ones((4, 2))
        eps = np.array([0.1, -0.2, 0.3, 0.0])
        inst = assemble_instance(X, np.zeros(2), eps)
        np.testing.assert_array_equal(inst.Y, eps)

    def test_paper_sim_shape(self):
        inst = simulate_instance(DesignSpec(250, 500, 0.0, seed=0), s=5,
                                 coef_dist=DistributionSpec("dirac_pm1"),
                                 error_dist=MIX)
        assert inst.delta == pytest.approx(0.5)
        assert inst.s_hint == 5
        resid = inst.Y - inst.X @ inst.beta_true - inst.eps
        assert np.max(np.abs(resid)) <= 1e-12 * max(1.0, np.max(np.abs(inst.Y)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            assemble_instance(np.ones((3, 2)), np.ones(3), np.zeros(3))


class TestDistributionSpec:
    def test_mixture_weights_validated(self):
        with pytest.raises(ValueError):
            DistributionSpec("gaussian_mixture", weights=(0.5, 0.6),
                             means=(0, 1), sds=(1, 1))

    def test_density_integrates(self):
        xs = np.linspace(-30, 30, 20001)
        for spec in (GAUSS, DistributionSpec("student_t", df=3), MIX):
            total = np.trapezoid(spec.density(xs), xs)
            assert total == pytest.approx(1.0, abs=1e-3)

    def test_quantile_inverts_cdf(self):
        for spec in (GAUSS, MIX, DistributionSpec("student_t", df=3, target_sd=0.2)):
            for q in (0.25, 0.5, 0.75):
                assert spec.cdf(spec.quantile(q)) == pytest.approx(q, abs=1e-9)

    def test_standardized_sd(self):
        # population law after standardization has sd = target_sd
        rng = np.random.default_rng(0)
        raw = MIX.sample(200_000, rng)
        scaled = (raw - MIX.pop_mean()) * (0.2 / MIX.pop_sd())
        assert np.std(scaled) == pytest.approx(0.2, rel=0.01)

    def test_round_trip(self):
        for spec in (GAUSS, MIX, DistributionSpec("dirac_pm1"),
                      DistributionSpec("point_mass", value=2.0)):
            assert DistributionSpec.from_dict(spec.to_dict()) == spec


def test_instance_round_trip(tmp_path):
    inst = simulate_instance(DesignSpec(20, 30, 0.1, seed=3), s=4,
                             coef_dist=DistributionSpec("dirac_pm1"),
                             error_dist=DistributionSpec("gaussian", target_sd=0.2),
                             seed=12)
    save_instance(inst, tmp_path / "inst")
    loaded = load_instance(tmp_path / "inst")
    np.testing.assert_array_equal(loaded.X, inst.X)
    np.testing.assert_array_equal(loaded.Y, inst.Y)
    np.testing.assert_array_equal(loaded.beta_true, inst.beta_true)
    assert loaded.s_hint == inst.s_hint
    assert loaded.meta["seed"] == 12


def test_replay_identical():
    kw = dict(s=3, coef_dist=GAUSS,
              error_dist=DistributionSpec("student_t", df=3, target_sd=0.2), seed=5)
    a = simulate_instance(DesignSpec(15, 25, 0.0, seed=1), **kw)
    b = simulate_instance(DesignSpec(15, 25, 0.0, seed=1), **kw)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.Y, b.Y)
