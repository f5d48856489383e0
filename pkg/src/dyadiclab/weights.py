"""A_p weights, weighted averages, maximal functions, BMO norms and the
stopping-cube selector used by every decomposition."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping, Optional

import numpy as np

from . import grid
from .core import CubeId, DyadicModel, ModelError, StepFunction


class Weight:
    """A strictly positive step function with cached cube averages."""

    def __init__(self, density: StepFunction):
        vals = density.values
        if any(v <= 0 for v in vals) if density.exact else bool(np.any(vals <= 0)):
            raise ModelError("weight values must be strictly positive")
        self.density = density
        self.model = density.model

    @classmethod
    def unit(cls, model: DyadicModel, exact: bool = False) -> "Weight":
        return cls(StepFunction.constant(model, 1, exact))

    @property
    def exact(self) -> bool:
        return self.density.exact

    @property
    def values(self) -> np.ndarray:
        return self.density.values

    @property
    def level_means(self) -> list[np.ndarray]:
        return self.density.level_means

    def average(self, cube: CubeId):
        return self.density.average(cube)

    def mass(self, cube: CubeId):
        """w(Q) = <w>_Q |Q|."""
        avg = self.average(cube)
        return avg * cube.volume if self.exact else float(avg) * float(cube.volume)

    def power(self, t: float) -> "Weight":
        return Weight(StepFunction(self.model, grid.to_float(self.density.grid) ** t))

    def conjugate(self, p: float) -> "Weight":
        """w' = w^(1 - p') for the Hoelder conjugate p'."""
        return self.power(1.0 - conjugate_exponent(p))

    def to_float(self) -> "Weight":
        return self if not self.exact else Weight(self.density.to_float())

    def refine(self, extra_levels: int) -> "Weight":
        return Weight(self.density.refine(extra_levels))


def conjugate_exponent(p: float) -> float:
    if p <= 1:
        raise ModelError("exponent must exceed 1")
    return p / (p - 1.0)


def _means_float(w: Weight | StepFunction) -> list[np.ndarray]:
    return [grid.to_float(a) for a in w.level_means]


def _argmax_cube(levels: list[np.ndarray]) -> tuple[float, CubeId]:
    best, where = -np.inf, None
    for k, arr in enumerate(levels):
        idx = np.unravel_index(int(np.argmax(arr)), arr.shape)
        if arr[idx] > best:
            best, where = float(arr[idx]), CubeId(k, idx)
    return best, where


@dataclass(frozen=True)
class ApCharacteristic:
    p: float
    value: float
    argmax_cube: CubeId
    conjugate_value: float

    @property
    def conjugate_exponent(self) -> float:
        return conjugate_exponent(self.p)


def ap_characteristic(w: Weight, p: float, check_duality: bool = True) -> ApCharacteristic:
    """max over model cubes of <w>_Q <w'>_Q^(p-1).

    The conjugate characteristic [w']_{A_p'} is computed independently and,
    with ``check_duality``, compared against [w]^(1/(p-1)).
    """
    if not p > 1:
        raise ModelError("A_p needs p > 1")
    w_f = w.to_float()
    wc = w_f.conjugate(p)
    mw, mc = _means_float(w_f), _means_float(wc)
    prods = [a * b ** (p - 1.0) for a, b in zip(mw, mc)]
    value, cube = _argmax_cube(prods)
    pc = conjugate_exponent(p)
    conj_prods = [b * a ** (pc - 1.0) for a, b in zip(mw, mc)]
    conj_value, _ = _argmax_cube(conj_prods)
    if check_duality:
        expected = value ** (1.0 / (p - 1.0))
        if abs(conj_value - expected) > 1e-10 * expected:
            raise ArithmeticError(f"conjugate characteristic {conj_value} != {expected}")
    return ApCharacteristic(p, value, cube, conj_value)


def ap_value(w: Weight, p: float) -> float:
    return ap_characteristic(w, p, check_duality=False).value


def _weight_means(w: Optional[Weight], f: StepFunction) -> list[np.ndarray]:
    if w is None:
        return [np.ones((2**k,) * f.model.n) for k in range(f.model.depth + 1)]
    return w.level_means


def weighted_average(w: Weight, f: StepFunction, cube: CubeId):
    """E_Q^w f = (1/w(Q)) int_Q f dw."""
    return (f * w.density).average(cube) / w.average(cube)


def weighted_maximal(w: Weight, f: StepFunction) -> StepFunction:
    """M_w f(x): max of E_Q^w |f| over model cubes Q containing x."""
    fw = abs(f) * w.density
    num, den = fw.level_means, w.level_means
    depth, n = f.model.depth, f.model.n
    out = None
    for k in range(depth + 1):
        ratio = num[k] / den[k]
        cells = grid.level_pattern_to_cells(ratio, n, depth)
        out = cells if out is None else np.maximum(out, cells)
    return StepFunction._wrap(f.model, out)


def dyadic_maximal(f: StepFunction, base: Optional[CubeId] = None) -> StepFunction:
    """M f(x): max of <|f|>_Q over model cubes Q containing x (inside ``base``)."""
    model = f.model
    base = base or model.root
    sub = grid.sub_block(abs(f).grid, model.n, base.level, base.pos)
    means = grid.level_means(sub, model.n)
    rel_depth = model.depth - base.level
    out = None
    for arr in means:
        cells = grid.level_pattern_to_cells(arr, model.n, rel_depth)
        out = cells if out is None else np.maximum(out, cells)
    full = np.zeros(model.shape, dtype=out.dtype)
    if out.dtype == object:
        full[...] = Fraction(0)
    full[grid.sub_slices(model.side, base.level, base.pos)] = out
    return StepFunction._wrap(model, full)


def lq_norm(f: StepFunction, q: float, w: Optional[Weight] = None) -> float:
    vals = np.abs(grid.to_float(f.values))
    dens = np.ones_like(vals) if w is None else grid.to_float(w.values)
    return float((np.sum(vals**q * dens) / f.model.num_cells) ** (1.0 / q))


def oscillation_levels(b: StepFunction) -> list[np.ndarray]:
    """Per level, (1/|Q|) int_Q |b - <b>_Q| for every cube."""
    model, n = b.model, b.model.n
    means = b.level_means
    out = []
    for k in range(model.depth + 1):
        up = grid.level_pattern_to_cells(means[k], n, model.depth)
        dev = np.abs(b.grid - up) if not b.exact else np.vectorize(abs, otypes=[object])(b.grid - up)
        out.append(grid.block_mean(dev, n, 2**k))
    return out


def bmo_levels(b: StepFunction, w: Optional[Weight] = None) -> list[np.ndarray]:
    osc = oscillation_levels(b)
    if w is None:
        return osc
    return [o / wm for o, wm in zip(osc, w.level_means)]


def bmo_norm(b: StepFunction, w: Optional[Weight] = None, base: Optional[CubeId] = None):
    """max over model cubes (inside ``base`` when given) of (1/w(Q)) int_Q |b - <b>_Q|.

    ``w=None`` is the unit weight.  Exact when b and w are exact.
    """
    levels = bmo_levels(b, w)
    best = None
    for k, arr in enumerate(levels):
        if base is not None:
            if k < base.level:
                continue
            arr = arr[b.model.level_mask(base, k)]
        m = max(arr.reshape(-1)) if b.exact else float(np.max(arr))
        best = m if best is None or m > best else best
    return best


def bmo_argmax(b: StepFunction, w: Optional[Weight] = None) -> CubeId:
    levels = [grid.to_float(a) for a in bmo_levels(b, w)]
    return _argmax_cube(levels)[1]


def stopping_cubes_array(g: np.ndarray, n: int, threshold) -> list[tuple[int, tuple[int, ...]]]:
    """Maximal strict subcubes of the array's root with average > threshold.

    Returns (relative level, relative position) pairs.  ``g`` holds the cells
    of the base cube; levels are relative to it.
    """
    means = grid.level_means(g, n)
    depth = len(means) - 1
    covered = np.zeros((1,) * n, dtype=bool)
    found = []
    for k in range(1, depth + 1):
        covered = grid.upsample(covered, n, 2)
        hit = (means[k] > threshold) & ~covered
        if hit.any():
            for idx in zip(*np.nonzero(hit)):
                found.append((k, tuple(int(i) for i in idx)))
            covered = covered | hit
    return found


def _to_global(base: CubeId, rel_level: int, rel_pos: tuple[int, ...]) -> CubeId:
    return CubeId(base.level + rel_level,
                  tuple(p * 2**rel_level + r for p, r in zip(base.pos, rel_pos)))


def stopping_cubes(base: CubeId, g: StepFunction, threshold) -> set[CubeId]:
    """Maximal cubes R strictly inside ``base`` with <g>_R > threshold."""
    if threshold <= 0:
        raise ModelError("threshold must be positive")
    g.model.check_cube(base)
    sub = g.on_cube(base)
    return {_to_global(base, k, pos) for k, pos in stopping_cubes_array(sub, g.model.n, threshold)}


def check_antichain(cubes: Iterable[CubeId]) -> None:
    cubes = sorted(cubes)
    for i, a in enumerate(cubes):
        for b in cubes[i + 1:]:
            if a.intersects(b):
                raise ModelError(f"stopping cubes {a} and {b} overlap")


def bmo_good_function(b: StepFunction, base: CubeId, stop: Iterable[CubeId]) -> StepFunction:
    """a = 1_base b - sum_R (b - <b>_R) 1_R over the stopping cubes R.

    Inside each stopping cube ``a`` is the constant <b>_R, so every Haar
    coefficient of ``b`` on cubes inside the stopping region is removed while
    those on cubes not contained in it are kept.
    """
    stop = list(stop)
    check_antichain(stop)
    for r in stop:
        if not base.contains(r):
            raise ModelError(f"stopping cube {r} is not inside {base}")
    out = b.restrict(base).grid.copy()
    for r in stop:
        sl = grid.sub_slices(b.model.side, r.level, r.pos)
        out[sl] = b.average(r)
    return StepFunction._wrap(b.model, out)


# weight generators ---------------------------------------------------------


def _power_cell_averages(side: int, alpha: float) -> np.ndarray:
    """Exact averages of x^alpha over [j/side, (j+1)/side)."""
    a = np.arange(side) / side
    b = (np.arange(side) + 1) / side
    return (b ** (alpha + 1) - a ** (alpha + 1)) / ((alpha + 1) * (b - a))


def power_weight(model: DyadicModel, alpha: float) -> Weight:
    """w(x) = prod_i x_i^alpha with exact cell averages as values."""
    if not -0.95 < alpha < 0.95:
        raise ModelError("power weight exponent must lie in (-0.95, 0.95)")
    one = _power_cell_averages(model.side, alpha)
    vals = np.ones(model.shape)
    for i in range(model.n):
        shape = [1] * model.n
        shape[i] = model.side
        vals = vals * one.reshape(shape)
    return Weight(StepFunction(model, vals))


def random_weight(model: DyadicModel, seed: int | np.random.Generator, log_amplitude: float = 1.0,
                  exact: bool = False) -> Weight:
    """Independent log-uniform cell values exp(U(-A, A))."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    vals = np.exp(rng.uniform(-log_amplitude, log_amplitude, model.num_cells))
    if exact:
        vals = [Fraction(v).limit_denominator(1000) for v in vals]
    return Weight(StepFunction(model, vals, exact))


def weight_from_spec(model: DyadicModel, spec: Mapping, exact: bool = False,
                     rng: Optional[np.random.Generator] = None) -> Weight:
    """Build a weight from a JSON generator description."""
    kind = spec.get("kind")
    if kind == "constant":
        return Weight(StepFunction.constant(model, spec.get("value", 1), exact))
    if kind == "power":
        w = power_weight(model, float(spec["alpha"]))
        return Weight(w.density.to_exact()) if exact else w
    if kind == "cells":
        vals = spec["values"]
        vals = [Fraction(v) for v in vals] if exact else [float(v) for v in vals]
        return Weight(StepFunction(model, vals, exact))
    if kind == "random":
        seed = spec.get("seed")
        src = np.random.default_rng(seed) if seed is not None else (rng or np.random.default_rng())
        return random_weight(model, src, float(spec.get("log_amplitude", 1.0)), exact)
    raise ModelError(f"unknown weight kind {kind!r}")


@dataclass
class BloomTriple:
    """mu, lambda in A_p and the intermediary nu = mu^(1/p) lambda^(-1/p)."""

    mu: Weight
    lam: Weight
    p: float

    @cached_property
    def nu(self) -> Weight:
        m = grid.to_float(self.mu.values)
        l = grid.to_float(self.lam.values)
        return Weight(StepFunction(self.mu.model, m ** (1.0 / self.p) * l ** (-1.0 / self.p)))

    def holder_slack(self) -> float:
        """min over cubes of <mu>^(1/p) <lam'>^(1/p') / <nu> (>= 1 by Hoelder)."""
        p = self.p
        pc = conjugate_exponent(p)
        mu_m = _means_float(self.mu.to_float())
        lc_m = _means_float(self.lam.to_float().conjugate(p))
        nu_m = _means_float(self.nu)
        return float(min(np.min(a ** (1 / p) * b ** (1 / pc) / c) for a, b, c in zip(mu_m, lc_m, nu_m)))
