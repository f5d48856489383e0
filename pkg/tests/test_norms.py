import math

import numpy as np
import pytest

from dyadiclab.core import CubeId, DyadicModel, StepFunction, haar_function, random_step_function
from dyadiclab.norms import (SWEEP_HEADER, ConvergenceError, bloom_constant, bloom_nu, composition_operator,
                             fit_exponent, identity_operator, martingale_operator, operator_norm_lp,
                             operator_norm_p2, operator_norm_svd, paraproduct_operator, sharpness_sweep,
                             sparse_operator_op, square_function_norm_sq, sweep_row, verify_bloom_sparse_bound,
                             verify_paraproduct_bloom_bound)
from dyadiclab.paraproducts import composition, paraproduct_gamma, paraproduct_pi, paraproduct_pi_star
from dyadiclab.sparse import SparseCollection, random_sparse, sparse_bmo_function, sparse_operator, tau_sequence
from dyadiclab.weights import Weight, ap_value, power_weight, random_weight

ROOT = CubeId(0, (0,))


def cells(model, values):
    return Weight(StepFunction(model, values))


class TestOperators:
    @pytest.mark.parametrize("kind,fn", [("Pi", paraproduct_pi), ("PiStar", paraproduct_pi_star)])
    def test_kernel_matches_direct(self, rng, kind, fn):
        m = DyadicModel(2, 3)
        b, f = random_step_function(m, rng), random_step_function(m, rng)
        assert np.allclose(paraproduct_operator(kind, b)(f).values, fn(b, f).values, atol=1e-12)

    def test_matrix_matches_direct(self, rng):
        m = DyadicModel(2, 2)
        b, f = random_step_function(m, rng), random_step_function(m, rng)
        op = paraproduct_operator("Gamma", b)
        assert np.allclose(op.matrix @ f.values, paraproduct_gamma(b, f).values, atol=1e-12)
        assert np.allclose(op.matrix, op.matrix.T, atol=1e-12)

    def test_transpose(self, rng):
        m = DyadicModel(1, 4)
        b = random_step_function(m, rng)
        op = paraproduct_operator("Pi", b)
        assert np.allclose(op.transpose().matrix, paraproduct_operator("PiStar", b).matrix, atol=1e-12)

    def test_sparse_and_martingale(self, rng):
        m = DyadicModel(1, 5)
        s = random_sparse(m, rng, 2.0)
        w = random_weight(m, rng)
        f = random_step_function(m, rng)
        assert np.allclose(sparse_operator_op(s, w)(f).values, sparse_operator(s, f, w).values, atol=1e-12)
        op = martingale_operator(tau_sequence(s, exact=False))
        assert np.allclose(op.matrix, op.matrix.T, atol=1e-12)

    def test_composition(self, rng):
        m = DyadicModel(1, 4)
        a, b, f = (random_step_function(m, rng) for _ in range(3))
        op = composition_operator(a, b)
        assert np.allclose(op(f).values, composition(a, b, f).values, atol=1e-12)
        assert np.allclose(op.transpose().matrix, op.matrix.T, atol=1e-12)


class TestExactP2:
    def test_identity(self, rng):
        m = DyadicModel(1, 4)
        w = random_weight(m, rng)
        assert operator_norm_p2(identity_operator(m), w, w).value == pytest.approx(1.0, rel=1e-10)

    def test_averaging_projection(self):
        m = DyadicModel(2, 2)
        op = sparse_operator_op(SparseCollection(m, [CubeId(0, (0, 0))]))
        assert operator_norm_p2(op).value == pytest.approx(1.0, rel=1e-10)

    def test_haar_symbol(self):
        m = DyadicModel(1, 2)
        op = paraproduct_operator("Pi", haar_function(m, ROOT, (0,)))
        assert operator_norm_svd(op) == pytest.approx(1.0, rel=1e-12)
        assert operator_norm_p2(op).value == pytest.approx(1.0, rel=1e-10)

    def test_frozen_unweighted(self):
        # reference: dense matrix from the brute-force paraproduct, then SVD
        m = DyadicModel(1, 3)
        op = paraproduct_operator("Pi", StepFunction(m, [1, 3, 2, 0, -1, 4, 2, 2]))
        assert operator_norm_p2(op).value == pytest.approx(2.5070620526847502, rel=1e-9)

    def test_frozen_weighted(self):
        m = DyadicModel(1, 3)
        op = paraproduct_operator("Pi", StepFunction(m, [1, 3, 2, 0, -1, 4, 2, 2]))
        mu = cells(m, [1, 2, 1, 3, 1, 1, 2, 1])
        lam = cells(m, [2, 1, 1, 1, 3, 1, 1, 2])
        assert operator_norm_p2(op, mu, lam).value == pytest.approx(3.6098278819379934, rel=1e-9)

    def test_frozen_gamma(self):
        m = DyadicModel(2, 2)
        b = StepFunction(m, [(i * 7) % 5 - 2 for i in range(16)])
        assert operator_norm_p2(paraproduct_operator("Gamma", b)).value == pytest.approx(1.3430703308172545, rel=1e-9)

    @pytest.mark.parametrize("n,depth", [(1, 5), (2, 2)])
    def test_svd_agreement(self, rng, n, depth):
        m = DyadicModel(n, depth)
        for kind in ("Pi", "PiStar"):
            for _ in range(5):
                op = paraproduct_operator(kind, random_step_function(m, rng))
                mu, lam = random_weight(m, rng), random_weight(m, rng)
                assert operator_norm_p2(op, mu, lam).value == pytest.approx(operator_norm_svd(op, mu, lam), rel=1e-8)

    def test_zero_operator(self):
        m = DyadicModel(1, 3)
        assert operator_norm_p2(paraproduct_operator("Pi", StepFunction.constant(m, 1.0))).value == 0.0

    def test_iteration_cap(self, rng):
        m = DyadicModel(1, 6)
        op = paraproduct_operator("Pi", random_step_function(m, rng))
        with pytest.raises(ConvergenceError):
            operator_norm_p2(op, tol=1e-16, max_iter=2, block=1)


class TestLp:
    @pytest.mark.parametrize("p", [1.5, 3.0])
    def test_identity(self, rng, p):
        m = DyadicModel(1, 4)
        w = random_weight(m, rng)
        assert operator_norm_lp(identity_operator(m), w, w, p).value == pytest.approx(1.0, rel=1e-9)

    def test_agrees_at_two(self, rng):
        m = DyadicModel(1, 4)
        op = paraproduct_operator("Pi", random_step_function(m, rng))
        mu, lam = random_weight(m, rng), random_weight(m, rng)
        assert operator_norm_lp(op, mu, lam, 2.0).value == pytest.approx(operator_norm_svd(op, mu, lam), rel=1e-6)

    @pytest.mark.parametrize("p", [1.5, 3.0])
    def test_positive_operator_starts(self, rng, p):
        m = DyadicModel(1, 5)
        op = sparse_operator_op(random_sparse(m, rng, 2.0), random_weight(m, rng))
        mu, lam = random_weight(m, rng), random_weight(m, rng)
        pos = operator_norm_lp(op, mu, lam, p, nonnegative_starts=True).value
        free = operator_norm_lp(op, mu, lam, p).value
        assert pos == pytest.approx(free, rel=1e-6)

    def test_lower_bound_of_matrix_norm(self, rng):
        # the p-norm of a nonnegative matrix is attained on nonnegative vectors; compare with brute force
        m = DyadicModel(1, 2)
        op = sparse_operator_op(SparseCollection(m, [ROOT, CubeId(1, (0,))]))
        a = op.matrix
        xs = np.abs(rng.standard_normal((20000, 4)))
        p = 3.0
        brute = np.max(np.sum(np.abs(xs @ a.T) ** p, 1) ** (1 / p) / np.sum(xs**p, 1) ** (1 / p))
        est = operator_norm_lp(op, p=p).value
        assert brute <= est * (1 + 1e-9)
        assert est == pytest.approx(brute, rel=1e-2)


class TestBloom:
    def test_trivial(self):
        m = DyadicModel(1, 3)
        one = Weight.unit(m)
        rep = verify_bloom_sparse_bound(SparseCollection(m, [ROOT]), one, one, 2.0)
        assert rep.ok
        assert rep.checks[0].lhs == pytest.approx(1.0)
        assert rep.checks[0].rhs == pytest.approx(4.0)

    def test_unit_weights_constant(self):
        # characteristics equal 1, leaving Lambda^(p+p'-2) p p'
        assert bloom_constant(2.0, 3.0, 1.0, 1.0) == pytest.approx(2.0 ** (1.5 + 3 - 2) * 3 * 1.5)

    def test_random(self, rng):
        m = DyadicModel(1, 7)
        for i in range(10):
            s = random_sparse(m, rng, 2.0)
            mu = power_weight(m, float(rng.uniform(-0.9, 0.9)))
            lam = mu.power(-1.0) if i % 2 else random_weight(m, rng)
            rep = verify_bloom_sparse_bound(s, mu, lam, 2.0)
            assert rep.ok
            assert rep.checks[0].rhs == pytest.approx(float(s.carleson) ** 2 * 4 * ap_value(mu, 2) * ap_value(lam, 2))

    def test_one_weight_shape(self, rng):
        m = DyadicModel(1, 6)
        w = power_weight(m, 0.6)
        rep = verify_bloom_sparse_bound(random_sparse(m, rng, 2.0), w, w, 2.0)
        assert rep.ok
        assert rep.meta["mu_char"] == rep.meta["lam_char"]

    def test_paraproduct_ratio(self, rng):
        m = DyadicModel(1, 6)
        mu, lam = power_weight(m, 0.5), random_weight(m, rng)
        nu = bloom_nu(mu, lam, 2.0)
        assert verify_paraproduct_bloom_bound(nu.density, mu, lam).ok
        b = sparse_bmo_function(random_sparse(m, rng, 2.0), nu)
        assert verify_paraproduct_bloom_bound(b, mu, lam).ok


class TestSweep:
    def test_zero_alpha(self):
        row = sweep_row(0.0, 6)
        assert row.ap_char == pytest.approx(1.0)
        assert row.bmo_w == pytest.approx(0.0, abs=1e-12)
        assert row.norm_pi == pytest.approx(0.0, abs=1e-9)
        assert row.bounds_ok

    def test_square_function_unit(self):
        m = DyadicModel(1, 5)
        assert square_function_norm_sq(Weight.unit(m)).value == pytest.approx(1.0, rel=1e-9)

    def test_rows_and_monotone(self):
        res = sharpness_sweep([0.3, -0.3, 0.6, -0.6, 0.8, -0.8], 10)
        assert len(res.rows) == 6 and res.ok
        for sign in (1, -1):
            chars = [r.ap_char for r in sorted(res.rows, key=lambda r: abs(r.alpha)) if r.alpha * sign > 0]
            assert chars == sorted(chars) and len(set(chars)) == 3
        lines = res.to_csv().splitlines()
        assert lines[0] == SWEEP_HEADER and len(lines) == 7
        assert math.isfinite(res.fit["residual"])

    def test_fit(self):
        x = [1, 2, 4, 8]
        fit = fit_exponent(x, [3 * v**2 for v in x])
        assert fit["slope"] == pytest.approx(2.0)
        assert fit["intercept"] == pytest.approx(math.log(3))
        assert fit["residual"] == pytest.approx(0.0, abs=1e-12)
