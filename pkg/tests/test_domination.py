import numpy as np
import pytest

from dyadiclab.core import CubeId, DyadicModel, StepFunction, haar_function, random_step_function
from dyadiclab.domination import (TAGS, dominate_bilinear, dominate_paraproduct, epsilon_for, maximal_cubes_in,
                                  oscillation_domination)
from dyadiclab.sparse import random_sparse, sparse_bmo_function
from dyadiclab.suites import depth_stability
from dyadiclab.weights import Weight, power_weight

ROOT = CubeId(0, (0,))


def sparse_symbol(model, rng, alpha=0.5):
    w = power_weight(model, alpha)
    s = random_sparse(model, rng, 2.0)
    b = sparse_bmo_function(s, w) + StepFunction(model, 0.1 * rng.standard_normal(model.num_cells))
    return b, w


class TestHelpers:
    @pytest.mark.parametrize("lam,eps", [(2.0, 0.5), (4.0, 0.75), (1.25, 0.2)])
    def test_epsilon(self, lam, eps):
        assert epsilon_for(lam) == pytest.approx(eps)

    def test_maximal_cubes(self):
        mask = np.array([True, True, False, True])
        assert sorted(maximal_cubes_in(mask, 1)) == [(1, (0,)), (2, (3,))]


class TestParaproductDomination:
    def test_constant_symbol(self, rng):
        m = DyadicModel(1, 6)
        res = dominate_paraproduct(StepFunction.constant(m, 3.0), Weight.unit(m), random_step_function(m, rng))
        assert res.collection.cubes == [ROOT]
        assert res.ok and np.all(res.lhs == 0)

    def test_zero_f(self, rng):
        m = DyadicModel(1, 6)
        res = dominate_paraproduct(random_step_function(m, rng), Weight.unit(m), StepFunction.zeros(m))
        assert res.collection.cubes == [ROOT]
        assert res.ok and np.all(res.lhs == 0) and np.all(res.rhs == 0)

    def test_sparse_symbol_input(self, rng):
        m = DyadicModel(1, 8)
        for _ in range(10):
            b, w = sparse_symbol(m, rng)
            res = dominate_paraproduct(b, w, random_step_function(m, rng))
            assert res.ok, [c.name for c in res.report.failures]
            assert res.measured_carleson <= 2 + 1e-12
            assert np.isfinite(res.empirical_constant)
            assert all(nd.child_measure <= 0.5 * float(nd.cube.volume) + 1e-15 for nd in res.nodes)
            assert np.all(res.lhs <= res.rhs * (1 + 1e-9) + 1e-12)

    def test_tags(self, rng):
        m = DyadicModel(1, 8)
        b, w = sparse_symbol(m, rng)
        res = dominate_paraproduct(b, w, random_step_function(m, rng))
        for nd in res.nodes:
            assert set(nd.tag_counts) <= set(TAGS)

    def test_local_root(self, rng):
        m = DyadicModel(1, 8)
        b, w = sparse_symbol(m, rng)
        q0 = CubeId(2, (3,))
        res = dominate_paraproduct(b, w, random_step_function(m, rng), q0)
        assert res.ok
        assert all(q0.contains(c) for c in res.collection.cubes)

    def test_two_dimensions(self, rng):
        m = DyadicModel(2, 5)
        for _ in range(3):
            b, w = sparse_symbol(m, rng, alpha=-0.4)
            assert dominate_paraproduct(b, w, random_step_function(m, rng)).ok

    @pytest.mark.parametrize("lam", [1.5, 3.0])
    def test_other_lambda(self, rng, lam):
        m = DyadicModel(1, 8)
        b, w = sparse_symbol(m, rng)
        res = dominate_paraproduct(b, w, random_step_function(m, rng), lam=lam)
        assert res.ok and res.measured_carleson <= lam + 1e-12

    def test_serialization(self, rng):
        m = DyadicModel(1, 6)
        b, w = sparse_symbol(m, rng)
        res = dominate_paraproduct(b, w, random_step_function(m, rng))
        data = res.to_json()
        assert data["measured_carleson"] == res.measured_carleson
        assert res.pointwise_csv().splitlines()[0] == "cell_index,lhs,rhs"


class TestOscillation:
    def test_constant(self):
        m = DyadicModel(1, 6)
        res = oscillation_domination(StepFunction.constant(m, 2.0), Weight.unit(m))
        assert res.ok and res.collection.cubes == [ROOT]

    def test_sparse_bmo_function(self, rng):
        m = DyadicModel(1, 8)
        s = random_sparse(m, rng, 2.0)
        res = oscillation_domination(sparse_bmo_function(s, exact=False), Weight.unit(m))
        assert res.ok and np.isfinite(res.empirical_constant)

    def test_weight_as_symbol(self):
        m = DyadicModel(1, 8)
        w = power_weight(m, 0.5)
        assert oscillation_domination(w.density, w).ok


class TestBilinear:
    def test_constant_symbol(self, rng):
        m = DyadicModel(1, 6)
        f, g = random_step_function(m, rng), random_step_function(m, rng)
        res = dominate_bilinear(StepFunction.constant(m, 1.0), random_step_function(m, rng), Weight.unit(m), f, g)
        assert res.ok and res.lhs[0] == 0

    def test_single_term(self):
        m = DyadicModel(1, 2)
        h = haar_function(m, ROOT, (0,))
        one = StepFunction.constant(m, 1.0)
        res = dominate_bilinear(h, h, Weight.unit(m), one, one)
        assert res.collection.cubes == [ROOT]
        assert res.lhs[0] == pytest.approx(1.0)
        assert res.nodes[0].e_measure == 0
        assert res.ok

    def test_random(self, rng):
        for n, depth in [(1, 8), (2, 4)]:
            m = DyadicModel(n, depth)
            for _ in range(5):
                b, w = sparse_symbol(m, rng)
                a = random_step_function(m, rng)
                f, g = random_step_function(m, rng), random_step_function(m, rng)
                res = dominate_bilinear(a, b, w, f, g)
                assert res.ok, [c.name for c in res.report.failures]
                assert res.measured_carleson <= 2 + 1e-12


class TestDepthStability:
    @pytest.mark.parametrize("algorithm", ["paraproduct", "bilinear"])
    def test_within_factor_two(self, algorithm):
        out = depth_stability(7, algorithm=algorithm)
        consts = [r.empirical_constant for r in out.values()]
        assert all(r.ok for r in out.values())
        assert max(consts) <= 2 * min(consts)
