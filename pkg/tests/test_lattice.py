import itertools
import math

import numpy as np
import pytest

from domainuq.errors import DimensionZero, LambdaOutOfRange, NotPrime, UnsupportedAlpha
from domainuq.lattice import (
    LatticeRule,
    alpha_from_p,
    build_spod_params,
    cbc_construct,
    error_bound_constant,
    korobov_kernel,
    lattice_points,
    product_weight_params,
    read_generating_vector,
    set_weight,
    worst_case_error_sq,
    write_cbc_csv,
    write_generating_vector,
    _scores_fft,
    _scores_naive,
)
from domainuq.random_field import BSequence, FieldSpec, b_sequence


def e2(rule, params):
    return worst_case_error_sq(rule, params).e_squared


def _brute_force_e2(rule, params):
    """Sum over nonempty u and m_u in {1:alpha}^|u| of Gamma(|m|) prod gamma * mean_k prod omega."""
    n, alpha = rule.n, params.alpha
    k = np.arange(n)
    terms = []
    for size in range(1, rule.s + 1):
        for u in itertools.combinations(range(rule.s), size):
            kernel = np.ones(n)
            for j in u:
                kernel = kernel * korobov_kernel(alpha, (k * rule.z[j] % n) / n)
            mean = math.fsum(kernel) / n
            for ms in itertools.product(range(1, alpha + 1), repeat=size):
                w = params.order_factor[sum(ms)] * math.prod(params.gamma_jm[j, m - 1] for j, m in zip(u, ms))
                terms.append(w * mean)
    return math.fsum(terms)


@pytest.fixture
def desk_params():
    spec = FieldSpec(2.1, 1.0, 5)
    return build_spod_params(b_sequence(spec), alpha=2, weight_amplitude=1e-6)


@pytest.fixture
def rich_params():
    # weights of order one so every subset contributes visibly
    b = BSequence(b=(0.3, 0.2, 0.1), xi_b=0.6)
    return build_spod_params(b, alpha=2, weight_amplitude=0.05)


class TestKernel:
    def test_examples(self):
        assert korobov_kernel(2, 0.0) == pytest.approx(math.pi**2 / 3, rel=1e-15)
        assert korobov_kernel(2, 0.5) == pytest.approx(-math.pi**2 / 6, rel=1e-15)
        assert korobov_kernel(4, 0.0) == pytest.approx(math.pi**4 / 45, rel=1e-15)

    @pytest.mark.parametrize("alpha", [2, 4, 6])
    def test_matches_fourier_series(self, alpha):
        x = np.linspace(0, 1, 41, endpoint=False)
        h = np.arange(1, 200001, dtype=float)[:, None]
        series = (2 * np.cos(2 * np.pi * h * x[None, :]) / h**alpha).sum(axis=0)
        tol = 2 * 200000.0 ** (1 - alpha) / (alpha - 1) + 1e-12
        np.testing.assert_allclose(korobov_kernel(alpha, x), series, atol=tol)

    @pytest.mark.parametrize("alpha", [0, 1, 3, 8])
    def test_unsupported(self, alpha):
        with pytest.raises(UnsupportedAlpha):
            korobov_kernel(alpha, 0.1)

    def test_alpha_from_p(self):
        assert alpha_from_p(0.9) == 2
        assert alpha_from_p(0.4) == 4  # floor(2.5)+1 = 3 rounded up
        assert alpha_from_p(0.3) == 4

    @pytest.mark.parametrize("n", [7, 19, 101])
    def test_zero_mean_identity(self, n):
        mean = math.fsum(korobov_kernel(2, np.arange(n) / n)) / n
        assert mean == pytest.approx(math.pi**2 / (3 * n**2), rel=1e-12)


class TestPoints:
    def test_examples(self):
        np.testing.assert_array_equal(lattice_points(LatticeRule(2, (1,))), [[0.5], [0.0]])
        pts = lattice_points(LatticeRule(5, (1, 2)))
        np.testing.assert_allclose(pts[0], [0.2, 0.4])
        np.testing.assert_array_equal(pts[-1], [0, 0])

    def test_grid_and_permutation(self):
        rule = LatticeRule(37, (1, 5, 11))
        pts = lattice_points(rule)
        assert np.all(np.abs(pts * 37 - np.round(pts * 37)) < 1e-12)
        for j in range(3):
            assert sorted(np.round(pts[:, j] * 37).astype(int)) == list(range(37))

    def test_validation(self):
        with pytest.raises(NotPrime):
            LatticeRule(9, (1,))
        with pytest.raises(ValueError):
            LatticeRule(7, (7,))


class TestSpodParams:
    def test_tables(self):
        b = BSequence(b=(0.5, 0.25), xi_b=0.9)
        p = build_spod_params(b, alpha=2, d=2)
        assert p.c_tilde == pytest.approx(4 * (2 + 0.9) ** 2 * (1 + 0.9) ** 3, rel=1e-15)
        beta1 = (2 + math.sqrt(2)) * (1 + math.sqrt(3)) * 0.5
        assert p.beta[0] == pytest.approx(beta1, rel=1e-15)
        assert p.gamma_jm[0, 0] == pytest.approx(p.c_tilde**2 * beta1, rel=1e-14)
        # S(2,2) = 1, 2! = 2
        assert p.gamma_jm[0, 1] == pytest.approx(p.c_tilde**2 * 2 * beta1**2, rel=1e-14)
        assert list(p.order_factor[:3]) == [1.0, 2.0, 6.0]

    def test_rho_and_sigma(self):
        b = BSequence(b=(0.5,), xi_b=0.5)
        p = build_spod_params(b, sigma_min=0.5, rho=4.0, d=2)
        assert p.beta[0] == pytest.approx((2 + math.sqrt(2)) * 4.0 * 0.5)
        assert p.c_tilde == pytest.approx(4 * 2.5**2 * 1.5**3 / 0.5**6)

    def test_weight_amplitude_matches_field_amplitude(self):
        unit = b_sequence(FieldSpec(2.1, 1.0, 4))
        scaled = b_sequence(FieldSpec(2.1, 1e-3, 4))
        a = build_spod_params(unit, weight_amplitude=1e-3)
        c = build_spod_params(scaled)
        np.testing.assert_allclose(a.gamma_jm, c.gamma_jm, rtol=1e-12)

    def test_set_weights_positive(self, desk_params):
        for size in range(1, 4):
            for u in itertools.combinations(range(1, 6), size):
                assert set_weight(desk_params, u) > 0

    def test_set_weight_by_enumeration(self, rich_params):
        u = (1, 3)
        expected = sum(
            rich_params.order_factor[m1 + m2] * rich_params.gamma_jm[0, m1 - 1] * rich_params.gamma_jm[2, m2 - 1]
            for m1 in (1, 2)
            for m2 in (1, 2)
        )
        assert set_weight(rich_params, u) == pytest.approx(expected, rel=1e-14)


class TestWorstCaseError:
    @pytest.mark.parametrize("n", [7, 19, 37])
    def test_brute_force(self, rich_params, n):
        rng = np.random.default_rng(n)
        for s in (1, 2, 3):
            for _ in range(3):
                rule = LatticeRule(n, tuple(int(v) for v in rng.integers(1, n, s)))
                expected = _brute_force_e2(rule, rich_params)
                assert e2(rule, rich_params) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("n", [7, 37, 101])
    def test_one_dimension(self, rich_params, n):
        gamma1 = set_weight(rich_params, (1,))
        for z in (1, 2, n - 1):
            assert e2(LatticeRule(n, (z,)), rich_params) == pytest.approx(gamma1 * math.pi**2 / (3 * n**2), rel=1e-12)

    def test_dual_lattice_sum(self):
        # product weights, alpha = 2, s = 2: e^2 = sum over the dual lattice of prod gamma_j/|h_j|^2
        params = product_weight_params([0.7, 0.4])
        rule = LatticeRule(13, (1, 5))
        g1 = params.order_factor[1] * 0.7
        g2 = params.order_factor[1] * 0.4
        g12 = params.order_factor[2] * 0.7 * 0.4
        H = 3000
        h = np.arange(-H, H + 1)
        h = h[h != 0]
        one = 2 * sum(1.0 / v**2 for v in range(13, 13 * 2000, 13))
        w1 = g1 * one
        w2 = g2 * one
        # pairs (h1, h2), both nonzero, with h1 + 5 h2 = 0 mod 13
        h2 = np.arange(-H, H + 1)
        h2 = h2[h2 != 0]
        total = 0.0
        for r in range(13):
            sel1 = h[(h % 13) == r]
            sel2 = h2[((5 * h2) % 13) == (-r) % 13]
            total += (1.0 / sel1**2).sum() * (1.0 / sel2**2).sum()
        expected = w1 + w2 + g12 * total
        assert e2(rule, params) == pytest.approx(expected, rel=1e-3)

    def test_zero_weights(self):
        params = product_weight_params([0.0, 0.0])
        assert e2(LatticeRule(11, (1, 3)), params) == 0.0

    def test_constant_integrated_exactly(self):
        rule = LatticeRule(31, (1, 12))
        weights = np.full(rule.n, 1.0 / rule.n)
        assert math.fsum(weights) == pytest.approx(1.0, abs=1e-15)
        assert lattice_points(rule).shape == (31, 2)


class TestCbc:
    @pytest.mark.parametrize("n", [37, 101, 1009])
    def test_one_dimension_picks_one(self, desk_params, n):
        for method in ("fft", "naive"):
            assert cbc_construct(n, 1, desk_params, method=method).z == (1,)

    def test_fft_matches_naive_scores(self, rich_params):
        rng = np.random.default_rng(3)
        for n in (13, 101, 409):
            q = rng.standard_normal(n)
            from sympy import primitive_root

            fast = _scores_fft(2, n, q, int(primitive_root(n)))
            np.testing.assert_allclose(fast, _scores_naive(2, n, q), atol=1e-12 * np.abs(q).sum())

    @pytest.mark.parametrize("n", [37, 101, 251])
    def test_fft_matches_naive_vector(self, rich_params, n):
        fast = cbc_construct(n, 3, rich_params, method="fft")
        slow = cbc_construct(n, 3, rich_params, method="naive")
        assert fast.z == slow.z
        np.testing.assert_allclose(fast.e2_history, slow.e2_history, rtol=1e-12)

    def test_beats_random_vectors(self):
        params = product_weight_params([1.0, 0.5])
        rule = cbc_construct(37, 2, params)
        rng = np.random.default_rng(11)
        cbc_e2 = e2(rule, params)
        for _ in range(50):
            other = LatticeRule(37, tuple(int(v) for v in rng.integers(1, 37, 2)))
            assert cbc_e2 <= e2(other, params) * (1 + 1e-12)

    @pytest.mark.parametrize("n,s", [(37, 2), (101, 3), (53, 3)])
    def test_last_component_optimal(self, rich_params, n, s):
        rule = cbc_construct(n, s, rich_params)
        best = e2(rule, rich_params)
        for z in range(1, n):
            alt = LatticeRule(n, rule.z[:-1] + (z,))
            assert best <= e2(alt, rich_params) * (1 + 1e-12)

    def test_history_matches_recursion(self, rich_params):
        rule = cbc_construct(101, 3, rich_params)
        for j in range(1, 4):
            assert rule.e2_history[j - 1] == pytest.approx(e2(LatticeRule(101, rule.z[:j]), rich_params), rel=1e-14)

    def test_zero_weight_dimensions_do_not_increase(self):
        params = product_weight_params([1.0, 0.5, 0.0, 0.0])
        rule = cbc_construct(61, 4, params)
        assert rule.e2_history[2] == rule.e2_history[1] == rule.e2_history[3]

    def test_errors(self, desk_params):
        with pytest.raises(NotPrime):
            cbc_construct(100, 2, desk_params)
        with pytest.raises(DimensionZero):
            cbc_construct(101, 0, desk_params)

    def test_history_decreasing_in_n(self, rich_params):
        vals = [cbc_construct(n, 3, rich_params).e2_history[-1] for n in (101, 409, 1601)]
        assert vals[0] > vals[1] > vals[2]


class TestBoundConstant:
    def test_single_weight(self):
        params = product_weight_params([0.3])
        gamma = params.order_factor[1] * 0.3
        for lam in (0.6, 0.8, 1.0):
            from domainuq.random_field import zeta

            expected = gamma**lam * 2 * zeta(2 * lam)
            assert error_bound_constant(params, lam, 1) == pytest.approx(expected, rel=1e-12)
            assert error_bound_constant(params, lam, 1, mode="exact") == pytest.approx(expected, rel=1e-12)

    def test_basel_factor(self):
        params = product_weight_params([1.0])
        assert error_bound_constant(params, 1.0, 1) == pytest.approx(2.0 * math.pi**2 / 3, rel=1e-12)

    def test_exact_at_lambda_one(self, rich_params):
        # at lambda = 1 the recursion and subset enumeration coincide
        assert error_bound_constant(rich_params, 1.0) == pytest.approx(
            error_bound_constant(rich_params, 1.0, mode="exact"), rel=1e-12
        )

    def test_spod_bounds_exact(self, rich_params):
        for lam in (0.55, 0.7, 0.9):
            assert error_bound_constant(rich_params, lam) >= error_bound_constant(rich_params, lam, mode="exact")

    def test_monotone_in_s(self, rich_params):
        vals = [error_bound_constant(rich_params, 0.75, s) for s in (1, 2, 3)]
        assert vals[0] <= vals[1] <= vals[2]

    def test_lambda_range(self, rich_params):
        for lam in (0.5, 0.2, 1.01):
            with pytest.raises(LambdaOutOfRange):
                error_bound_constant(rich_params, lam)

    def test_cbc_within_bound(self, rich_params):
        rule = cbc_construct(101, 3, rich_params)
        for lam in (0.6, 0.8, 1.0):
            bound = (error_bound_constant(rich_params, lam, mode="exact") / 100) ** (1 / lam)
            assert rule.e2_history[-1] <= bound


class TestFiles:
    def test_roundtrip(self, tmp_path, rich_params):
        rule = cbc_construct(101, 3, rich_params)
        path = tmp_path / "z.txt"
        write_generating_vector(path, rule, 2)
        assert path.read_text().splitlines()[0] == "101 3 2"
        loaded, alpha = read_generating_vector(path)
        assert loaded == rule and alpha == 2

    def test_rejects_bad_files(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("11 2 2\n3\n")
        with pytest.raises(ValueError):
            read_generating_vector(path)
        path.write_text("11 1 2\n11\n")
        with pytest.raises(ValueError):
            read_generating_vector(path)
        path.write_text("12 1 2\n5\n")
        with pytest.raises(NotPrime):
            read_generating_vector(path)

    def test_csv(self, tmp_path, rich_params):
        rule = cbc_construct(37, 2, rich_params)
        path = tmp_path / "cbc.csv"
        write_cbc_csv(path, rule)
        lines = path.read_text().splitlines()
        assert lines[0] == "j,z_j,e2_after_j"
        assert lines[1].startswith("1,1,")
