import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracle
from conftest import cubes, models, step_functions, to_list
from dyadiclab.core import (CubeId, DyadicModel, HaarSpectrum, ModelError, StepFunction, analyze,
                            haar_function, haar_gram, haar_sign_on, random_step_function, synthesize)

ROOT = CubeId(0, (0,))
LEFT = CubeId(1, (0,))


class TestCubes:
    def test_geometry(self):
        q = CubeId(2, (1, 3))
        assert q.side == Fraction(1, 4)
        assert q.volume == Fraction(1, 16)
        assert q.parent() == CubeId(1, (0, 1))
        assert q.bounds() == [(Fraction(1, 4), Fraction(1, 2)), (Fraction(3, 4), Fraction(1))]
        assert len(q.children()) == 4
        assert all(q.strictly_contains(c) for c in q.children())

    def test_json_round_trip(self):
        q = CubeId(3, (5,))
        assert CubeId.from_json(json.loads(json.dumps(q.to_json()))) == q

    @pytest.mark.parametrize("bad", [CubeId(3, (0,)), CubeId(1, (2,)), CubeId(1, (0, 0))])
    def test_check_cube_rejects(self, m12, bad):
        with pytest.raises(ModelError):
            m12.check_cube(bad)

    def test_model_guards(self):
        with pytest.raises(ModelError):
            DyadicModel(0, 2)
        with pytest.raises(ModelError):
            DyadicModel(1, 0)


class TestHaarFunction:
    def test_root(self, m12):
        assert to_list(haar_function(m12, ROOT, (0,), exact=True)) == [-1, -1, 1, 1]

    def test_left_half(self, m12):
        h = haar_function(m12, LEFT, (0,))
        assert np.allclose(h.values, [-np.sqrt(2), np.sqrt(2), 0, 0], rtol=0, atol=1e-15)

    def test_sign_on_quarters(self):
        assert haar_sign_on(ROOT, (0,), CubeId(2, (0,))) == -1
        assert haar_sign_on(ROOT, (0,), CubeId(2, (3,))) == 1

    @given(st.data())
    def test_mean_zero(self, data):
        m = data.draw(models())
        q = data.draw(cubes(m, m.depth - 1))
        sig = data.draw(st.sampled_from(oracle.Model(m.n, m.depth).sigs()))
        assert abs(haar_function(m, q, sig).integral()) < 1e-12

    def test_irrational_normalization_refused(self):
        with pytest.raises(ModelError):
            haar_function(DyadicModel(1, 2), LEFT, (0,), exact=True)

    @pytest.mark.parametrize("n,depth", [(1, 3), (2, 2)])
    def test_orthonormal(self, n, depth):
        g = haar_gram(DyadicModel(n, depth), exact=False)
        assert np.allclose(g, np.eye(len(g)), atol=1e-12)


class TestAnalyze:
    def test_half_indicator(self, m12):
        spec = analyze(StepFunction(m12, [1, 1, 0, 0], exact=True))
        assert spec.mean == Fraction(1, 2)
        assert spec.coefficient(ROOT, (0,)) == Fraction(-1, 2)
        assert spec.scaled_coefficient(LEFT, (0,)) == 0
        assert spec.scaled_coefficient(CubeId(1, (1,)), (0,)) == 0

    def test_constant(self, m12):
        spec = analyze(StepFunction.constant(m12, Fraction(7, 3), exact=True))
        assert spec.mean == Fraction(7, 3)
        assert all(c == 0 for _, _, c in spec.items())

    def test_synthesize_single_coefficient(self, m12):
        spec = HaarSpectrum.from_coefficients(m12, {(ROOT, (0,)): 1}, exact=True)
        assert to_list(synthesize(spec)) == [-1, -1, 1, 1]

    def test_empty_spectrum(self, m12):
        spec = HaarSpectrum.from_coefficients(m12, {}, exact=True)
        assert to_list(synthesize(spec)) == [0, 0, 0, 0]

    @given(st.data())
    def test_round_trip_exact(self, data):
        m = data.draw(models())
        f = data.draw(step_functions(m))
        assert synthesize(analyze(f)).equals(f)

    @given(st.data())
    def test_spectrum_round_trip(self, data):
        m = data.draw(models())
        f = data.draw(step_functions(m))
        spec = analyze(f)
        again = analyze(synthesize(spec))
        assert again.mean == spec.mean
        assert all((a == b).all() for a, b in zip(again.scaled, spec.scaled))

    @given(st.data())
    def test_coefficients_match_integrals(self, data):
        m = data.draw(models())
        f = data.draw(step_functions(m))
        om = oracle.Model(m.n, m.depth)
        spec = analyze(f)
        for (k, pos) in om.cubes(m.depth - 1):
            for sig in om.sigs():
                assert spec.scaled_coefficient(CubeId(k, pos), sig) == oracle.scaled(om, to_list(f), (k, pos), sig)

    @given(st.data())
    def test_plancherel(self, data):
        m = data.draw(models())
        f = data.draw(step_functions(m))
        assert analyze(f).energy() == (f * f).integral()

    def test_average_reconstruction(self, rng):
        # <f>_Q = <f>_root + sum over strict ancestors P of Q of (f, h_P) h_P on Q
        m = DyadicModel(1, 3)
        f = random_step_function(m, rng, exact=True)
        spec = analyze(f)
        for q in m.all_cubes():
            total = spec.mean
            for k in range(q.level):
                p = q.ancestor(k)
                total += spec.scaled_coefficient(p, (0,)) * haar_sign_on(p, (0,), q)
            assert total == f.average(q)

    def test_float_round_trip(self, rng):
        f = random_step_function(DyadicModel(2, 4), rng)
        assert synthesize(analyze(f)).max_abs_diff(f) < 1e-12


class TestStepFunction:
    def test_wrong_length(self, m12):
        with pytest.raises(ModelError):
            StepFunction(m12, [1, 2, 3])

    def test_restrict_and_average(self, m12):
        f = StepFunction(m12, [1, 2, 3, 4], exact=True)
        assert to_list(f.restrict(LEFT)) == [1, 2, 0, 0]
        assert f.average(LEFT) == Fraction(3, 2)
        assert f.integral() == Fraction(5, 2)

    def test_refine_keeps_averages(self, m12):
        f = StepFunction(m12, [1, 2, 3, 4], exact=True)
        g = f.refine(2)
        assert g.model.depth == 4
        assert all(g.average(q) == f.average(q) for q in m12.all_cubes())

    def test_serialization(self, m12):
        f = StepFunction(m12, [Fraction(1, 3), 2, -1, 0], exact=True)
        assert StepFunction.from_json(json.loads(f.dumps())).equals(f)
        assert StepFunction.from_csv(m12, f.to_csv(), exact=True).equals(f)
