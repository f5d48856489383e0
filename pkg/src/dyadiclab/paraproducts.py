"""Paraproducts, their maximal truncation, the dyadic square function and the
exact finite-model decompositions.

Everything is evaluated on scaled Haar coefficients d_Q = (f, h_Q)/sqrt|Q|,
for which (b, h_Q) <f>_Q h_Q = d^b_Q <f>_Q s_Q on Q and
(b, h_Q)(f, h_Q) 1_Q/|Q| = d^b_Q d^f_Q 1_Q, with s_Q the +-1 sign pattern.
These stay rational for rational inputs, so every identity is exact.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from . import grid
from .core import CubeId, HaarSpectrum, ModelError, StepFunction, analyze, synthesize
from .report import VerificationReport
from .sparse import SparseCollection, martingale_transform, sparse_bmo_function, sparse_operator, tau_sequence
from .weights import Weight


class ParaproductKind(str, enum.Enum):
    PI = "Pi"
    PI_STAR = "PiStar"
    GAMMA = "Gamma"


def _zero(exact: bool):
    return Fraction(0) if exact else 0.0


def _check_pair(b: StepFunction, f: StepFunction) -> None:
    if b.model != f.model:
        raise ModelError("functions live on different models")
    if b.exact != f.exact:
        raise ModelError("mixed exact and float arguments")


def _restricted_scaled(f: StepFunction, base: Optional[CubeId]) -> list[np.ndarray]:
    spec = analyze(f)
    if base is None or base == f.model.root:
        return spec.scaled
    f.model.check_cube(base)
    return spec.restricted(base).scaled


def _from_level_scalars(model, levels: list[np.ndarray], exact: bool) -> StepFunction:
    """Cells of sum_k sum_{Q at level k} c_Q 1_Q."""
    total = np.full(model.shape, _zero(exact), dtype=object if exact else float)
    for arr in levels:
        total = total + grid.level_pattern_to_cells(arr, model.n, model.depth)
    return StepFunction._wrap(model, total)


def paraproduct_pi(b: StepFunction, f: StepFunction, base: Optional[CubeId] = None) -> StepFunction:
    """Pi_{b,base} f = sum_{Q inside base} sum_eps (b, h_Q^eps) <f>_Q h_Q^eps."""
    _check_pair(b, f)
    db = _restricted_scaled(b, base)
    fm = f.level_means
    scaled = [d * fm[k][None, ...] for k, d in enumerate(db)]
    return synthesize(HaarSpectrum(f.model, _zero(f.exact), scaled))


def paraproduct_pi_star(b: StepFunction, f: StepFunction, base: Optional[CubeId] = None) -> StepFunction:
    """Pi*_{b,base} f = sum_{Q inside base} sum_eps (b, h_Q^eps)(f, h_Q^eps) 1_Q/|Q|."""
    _check_pair(b, f)
    db = _restricted_scaled(b, base)
    df = analyze(f).scaled
    return _from_level_scalars(f.model, [(x * y).sum(axis=0) for x, y in zip(db, df)], f.exact)


def paraproduct_gamma(b: StepFunction, f: StepFunction, base: Optional[CubeId] = None) -> StepFunction:
    """Gamma_{b,base} f = sum over eps != eta of (b, h_Q^eps)(f, h_Q^eta) h_Q^eps h_Q^eta.

    The product of two Haar functions is formed as the literal cellwise
    product of their sign patterns.
    """
    _check_pair(b, f)
    model = f.model
    n = model.n
    if n < 2:
        raise ModelError("Gamma paraproduct needs dimension n >= 2")
    db = _restricted_scaled(b, base)
    df = analyze(f).scaled
    sigs = grid.signatures(n)
    pats = [grid.interleave(grid.sign_pattern(s), n) for s in sigs]
    total = np.full(model.shape, _zero(f.exact), dtype=object if f.exact else float)
    for k in range(model.depth):
        acc = None
        for i in range(len(sigs)):
            for j in range(len(sigs)):
                if i == j:
                    continue
                coeff = db[k][i] * df[k][j]
                term = grid.expand(coeff, n) * (pats[i] * pats[j])
                acc = term if acc is None else acc + term
        total = total + grid.upsample(grid.collapse(acc, n), n, model.side // 2 ** (k + 1))
    return StepFunction._wrap(model, total)


def paraproduct(kind, b: StepFunction, f: StepFunction, base: Optional[CubeId] = None) -> StepFunction:
    kind = ParaproductKind(kind)
    if kind is ParaproductKind.PI:
        return paraproduct_pi(b, f, base)
    if kind is ParaproductKind.PI_STAR:
        return paraproduct_pi_star(b, f, base)
    return paraproduct_gamma(b, f, base)


def composition(a: StepFunction, b: StepFunction, f: StepFunction) -> StepFunction:
    """Pi*_a Pi_b f = sum_Q sum_eps (a, h_Q^eps)(b, h_Q^eps) <f>_Q 1_Q/|Q|."""
    _check_pair(a, f)
    _check_pair(b, f)
    da, dbb = analyze(a).scaled, analyze(b).scaled
    fm = f.level_means
    return _from_level_scalars(f.model, [(x * y).sum(axis=0) * fm[k] for k, (x, y) in enumerate(zip(da, dbb))],
                               f.exact)


def _compare(report: VerificationReport, name: str, lhs: StepFunction, rhs: StepFunction, tol: float) -> None:
    err = lhs.max_abs_diff(rhs)
    ok = (err == 0) if lhs.exact else float(err) <= tol
    report.add(name, ok, error=err)


def product_decomposition_check(b: StepFunction, f: StepFunction, tol: float = 1e-10) -> VerificationReport:
    """bf = <b><f> + Pi_b f + Pi*_b f + Pi_f b (+ Gamma_b f when n >= 2).

    The constant term carries the product of root means, which a finite
    model with a nonzero mean cannot avoid.
    """
    _check_pair(b, f)
    model = f.model
    mean_term = StepFunction.constant(model, b.average(model.root) * f.average(model.root), f.exact)
    parts = {
        "mean": mean_term,
        "Pi_b f": paraproduct_pi(b, f),
        "Pi*_b f": paraproduct_pi_star(b, f),
        "Pi_f b": paraproduct_pi(f, b),
    }
    if model.n >= 2:
        parts["Gamma_b f"] = paraproduct_gamma(b, f)
    rhs = parts["mean"]
    for key in list(parts)[1:]:
        rhs = rhs + parts[key]
    rep = VerificationReport("product decomposition", meta={"n": model.n, "depth": model.depth, "exact": f.exact})
    _compare(rep, "bf", b * f, rhs, tol)
    return rep


def spm_decomposition_check(s: SparseCollection, w: Optional[Weight], f: StepFunction,
                            tol: float = 1e-10) -> VerificationReport:
    """A_S^w f = Pi_B f + Pi*_B f + T_tau f + <B><f> (+ Gamma_B f when n >= 2), B = b_S^w."""
    model = f.model
    big_b = sparse_bmo_function(s, w, exact=f.exact)
    tau = tau_sequence(s, w, exact=f.exact)
    lhs = sparse_operator(s, f, w)
    rhs = paraproduct_pi(big_b, f) + paraproduct_pi_star(big_b, f) + martingale_transform(tau, f)
    if model.n >= 2:
        rhs = rhs + paraproduct_gamma(big_b, f)
    correction = big_b.average(model.root) * f.average(model.root)
    rhs = rhs + StepFunction.constant(model, correction, f.exact)
    rep = VerificationReport("sparse operator decomposition", meta={"n": model.n, "depth": model.depth})
    _compare(rep, "A_S^w f", lhs, rhs, tol)
    rep.add("mean correction", True, lhs=correction)
    return rep


def haar_differences_on_cells(f: StepFunction) -> list[np.ndarray]:
    """Per level k, cells of sum_{Q at level k} sum_eps (f, h_Q^eps) h_Q^eps."""
    model = f.model
    return [grid.difference_on_cells(d, model.n, model.depth) for d in analyze(f).scaled]


@dataclass
class HaarMultiplier:
    """Symbols phi_J on cells, one array per level; phi_J is read on the cells of J."""

    model: object
    symbols: list[np.ndarray]

    def apply(self, f: StepFunction) -> StepFunction:
        """sum_J phi_J (f, h_J) h_J."""
        total = np.full(self.model.shape, _zero(f.exact), dtype=object if f.exact else float)
        for phi, delta in zip(self.symbols, haar_differences_on_cells(f)):
            total = total + phi * delta
        return StepFunction._wrap(self.model, total)


def blasco_multiplier(b: StepFunction) -> HaarMultiplier:
    """phi_J = (b - <b>_J) 1_J, so that the multiplier equals Pi_b + Pi*_b (+ Gamma_b) on mean-zero f."""
    model = b.model
    means = b.level_means
    return HaarMultiplier(model, [b.grid - grid.level_pattern_to_cells(means[k], model.n, model.depth)
                                  for k in range(model.depth)])


def haar_multiplier_form(s: SparseCollection, w: Optional[Weight] = None, exact: Optional[bool] = None) -> HaarMultiplier:
    """phi_J = (b_S^w - <b_S^w>_J) 1_J + (tau_S^w)_J."""
    big_b = sparse_bmo_function(s, w, exact=exact)
    tau = tau_sequence(s, w, exact=big_b.exact)
    base = blasco_multiplier(big_b)
    model = s.model
    symbols = [phi + grid.level_pattern_to_cells(tau.levels[k], model.n, model.depth)
               for k, phi in enumerate(base.symbols)]
    return HaarMultiplier(model, symbols)


def pi_level_terms(b: StepFunction, f: StepFunction, base: Optional[CubeId] = None) -> list[np.ndarray]:
    """Per level k, cells of sum_{Q at level k inside base} (b, h_Q) <f>_Q h_Q."""
    db = _restricted_scaled(b, base)
    fm = f.level_means
    model = f.model
    return [grid.difference_on_cells(d * fm[k][None, ...], model.n, model.depth) for k, d in enumerate(db)]


def maximal_truncation(b: StepFunction, f: StepFunction, base: Optional[CubeId] = None) -> StepFunction:
    """Pi^>_b f(x) = max over P containing x of |sum_{base >= Q > P} (b, h_Q) <f>_Q h_Q(x)|.

    P ranges over the model cubes inside ``base``; P = base gives the empty
    sum.  The result vanishes off ``base``.
    """
    _check_pair(b, f)
    model = f.model
    base = base or model.root
    terms = pi_level_terms(b.to_float(), f.to_float(), base)
    prefix = np.zeros(model.shape)
    best = np.zeros(model.shape)
    for k in range(base.level, model.depth):
        prefix = prefix + terms[k]
        best = np.maximum(best, np.abs(prefix))
    best = best * model.level_mask(base, model.depth)
    return StepFunction._wrap(model, best)


@dataclass
class SquareFunctionResult:
    square: StepFunction       # (S f)^2, exact for exact f
    energy: object             # sum_I (f, h_I)^2 <w>_I
    integral: object           # int (S f)^2 w, computed independently

    @property
    def pointwise(self) -> StepFunction:
        return StepFunction._wrap(self.square.model, np.sqrt(grid.to_float(self.square.grid)))

    @property
    def identity_holds(self) -> bool:
        if self.square.exact:
            return self.energy == self.integral
        return abs(self.energy - self.integral) <= 1e-10 * max(1.0, abs(self.energy))


def square_function(f: StepFunction, w: Optional[Weight] = None) -> SquareFunctionResult:
    """S f = (sum_I sum_eps (f, h_I^eps)^2 1_I/|I|)^(1/2) and its L^2(w) energy."""
    model = f.model
    df = analyze(f).scaled
    sq_levels = [(d * d).sum(axis=0) for d in df]
    square = _from_level_scalars(model, sq_levels, f.exact)
    wm = w.level_means if w is not None else None
    energy = _zero(f.exact)
    for k, a in enumerate(sq_levels):
        vol = Fraction(1, 2 ** (model.n * k))
        wk = wm[k] if wm is not None else 1
        s = (a * wk).sum()
        energy = energy + (s * vol if f.exact else float(s) * float(vol))
    dens = w.density if w is not None else StepFunction.constant(model, 1, f.exact)
    integral = (square * dens).integral()
    return SquareFunctionResult(square, energy, integral)
