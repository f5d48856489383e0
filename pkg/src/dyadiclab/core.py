"""The finite dyadic universe: cubes, step functions and Haar analysis.

The model is the unit cube ``[0,1)^n`` cut ``D`` times.  Cells (level-``D``
cubes) are stored as an ``n``-dimensional array of side ``2**D``; the flat
cell order is row-major with the first coordinate varying slowest, so cell
``(p_1, ..., p_n)`` has flat index ``sum_i p_i * 2**(D*(n-1-i))``.

Haar coefficients are kept in *scaled* form ``d_Q^eps = (f, h_Q^eps)/sqrt|Q|``
which equals the average of ``f`` against the +-1 sign pattern of
``h_Q^eps``.  Scaled coefficients of a rational function are rational, so
every identity built on them can be checked with zero residual even though
``1/sqrt|Q|`` itself may be irrational.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import grid

Signature = tuple[int, ...]


class ModelError(ValueError):
    """Raised for cubes, signatures or values that do not fit the model."""


@dataclass(frozen=True, order=True)
class CubeId:
    level: int
    pos: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "pos", tuple(int(p) for p in self.pos))

    @property
    def n(self) -> int:
        return len(self.pos)

    @property
    def side(self) -> Fraction:
        return Fraction(1, 2**self.level)

    @property
    def volume(self) -> Fraction:
        return Fraction(1, 2 ** (self.n * self.level))

    def parent(self) -> "CubeId":
        if self.level == 0:
            raise ModelError("the root has no parent")
        return CubeId(self.level - 1, tuple(p // 2 for p in self.pos))

    def ancestor(self, level: int) -> "CubeId":
        if level > self.level:
            raise ModelError("ancestor level below the cube")
        shift = self.level - level
        return CubeId(level, tuple(p >> shift for p in self.pos))

    def children(self) -> list["CubeId"]:
        return [
            CubeId(self.level + 1, tuple(2 * p + b for p, b in zip(self.pos, bits)))
            for bits in itertools.product((0, 1), repeat=self.n)
        ]

    def contains(self, other: "CubeId") -> bool:
        """Non-strict containment."""
        if other.level < self.level:
            return False
        return other.ancestor(self.level) == self

    def strictly_contains(self, other: "CubeId") -> bool:
        return other.level > self.level and self.contains(other)

    def intersects(self, other: "CubeId") -> bool:
        return self.contains(other) or other.contains(self)

    def bounds(self) -> list[tuple[Fraction, Fraction]]:
        s = self.side
        return [(p * s, (p + 1) * s) for p in self.pos]

    def to_json(self) -> dict:
        return {"level": self.level, "pos": list(self.pos)}

    @classmethod
    def from_json(cls, obj: Mapping) -> "CubeId":
        return cls(int(obj["level"]), tuple(obj["pos"]))

    def __str__(self) -> str:
        return f"Q{self.level}{list(self.pos)}"


@dataclass(frozen=True)
class DyadicModel:
    n: int
    depth: int

    def __post_init__(self):
        if self.n < 1:
            raise ModelError("dimension must be positive")
        if self.depth < 1:
            raise ModelError("depth must be positive")

    @property
    def side(self) -> int:
        return 2**self.depth

    @property
    def num_cells(self) -> int:
        return 2 ** (self.n * self.depth)

    @property
    def cell_volume(self) -> Fraction:
        return Fraction(1, self.num_cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.n

    @property
    def root(self) -> CubeId:
        return CubeId(0, (0,) * self.n)

    def cubes(self, level: int) -> Iterator[CubeId]:
        for pos in itertools.product(range(2**level), repeat=self.n):
            yield CubeId(level, pos)

    def all_cubes(self, max_level: int | None = None) -> Iterator[CubeId]:
        top = self.depth if max_level is None else max_level
        for k in range(top + 1):
            yield from self.cubes(k)

    def check_cube(self, cube: CubeId) -> CubeId:
        if cube.n != self.n:
            raise ModelError(f"cube {cube} has dimension {cube.n}, model has {self.n}")
        if not 0 <= cube.level <= self.depth:
            raise ModelError(f"cube level {cube.level} outside [0, {self.depth}]")
        if any(not 0 <= p < 2**cube.level for p in cube.pos):
            raise ModelError(f"cube position {cube.pos} outside level {cube.level}")
        return cube

    def cell_of_index(self, index: int) -> CubeId:
        return CubeId(self.depth, np.unravel_index(index, self.shape))

    def level_mask(self, cube: CubeId, level: int) -> np.ndarray:
        """Boolean level-``level`` array marking cubes contained in ``cube``."""
        out = np.zeros((2**level,) * self.n, dtype=bool)
        if level < cube.level:
            return out
        out[grid.sub_slices(2**level, cube.level, cube.pos)] = True
        return out

    def to_json(self) -> dict:
        return {"n": self.n, "depth": self.depth}


def cancellative_signatures(n: int) -> list[Signature]:
    return grid.signatures(n)


def check_signature(sig: Sequence[int], n: int, allow_noncancellative: bool = False) -> Signature:
    sig = tuple(int(e) for e in sig)
    if len(sig) != n or any(e not in (0, 1) for e in sig):
        raise ModelError(f"bad signature {sig} for dimension {n}")
    if all(sig) and not allow_noncancellative:
        raise ModelError("the all-ones signature is not cancellative")
    return sig


def _coerce(values, exact: bool) -> np.ndarray:
    if exact:
        return grid.to_exact(values)
    return grid.to_float(values)


class StepFunction:
    """A real function constant on the cells of a model.

    ``exact=True`` stores :class:`~fractions.Fraction` values; otherwise
    float64.  Instances are treated as immutable.
    """


    def __init__(self, model: DyadicModel, values, exact: bool = False):
        arr = np.asarray(values) if not isinstance(values, np.ndarray) else values
        if arr.size != model.num_cells:
            raise ModelError(f"expected {model.num_cells} values, got {arr.size}")
        arr = arr.reshape(model.shape)
        self.model = model
        self._values = _coerce(arr, exact)
        self._values.setflags(write=False)

    @classmethod
    def _wrap(cls, model: DyadicModel, arr: np.ndarray) -> "StepFunction":
        obj = cls.__new__(cls)
        obj.model = model
        obj._values = arr.reshape(model.shape)
        obj._values.setflags(write=False)
        return obj

    @classmethod
    def constant(cls, model: DyadicModel, c, exact: bool = False) -> "StepFunction":
        return cls(model, np.full(model.num_cells, c, dtype=object if exact else float), exact)

    @classmethod
    def zeros(cls, model: DyadicModel, exact: bool = False) -> "StepFunction":
        return cls.constant(model, 0, exact)

    @classmethod
    def indicator(cls, model: DyadicModel, cube: CubeId, exact: bool = False) -> "StepFunction":
        model.check_cube(cube)
        arr = model.level_mask(cube, model.depth).astype(np.int64)
        return cls(model, arr, exact)

    @property
    def exact(self) -> bool:
        return self._values.dtype == object

    @property
    def values(self) -> np.ndarray:
        """Cell values in row-major order (a read-only flat view)."""
        return self._values.reshape(-1)

    @property
    def grid(self) -> np.ndarray:
        return self._values

    def to_float(self) -> "StepFunction":
        return self if not self.exact else StepFunction._wrap(self.model, grid.to_float(self._values))

    def to_exact(self) -> "StepFunction":
        return self if self.exact else StepFunction._wrap(self.model, grid.to_exact(self._values))

    def _other(self, other):
        if isinstance(other, StepFunction):
            if other.model != self.model:
                raise ModelError("step functions live on different models")
            if self.exact != other.exact:
                raise ModelError("cannot mix exact and float step functions")
            return other._values
        return other

    def __add__(self, other):
        return StepFunction._wrap(self.model, self._values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return StepFunction._wrap(self.model, self._values - self._other(other))

    def __rsub__(self, other):
        return StepFunction._wrap(self.model, self._other(other) - self._values)

    def __mul__(self, other):
        return StepFunction._wrap(self.model, self._values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return StepFunction._wrap(self.model, -self._values)

    def __abs__(self):
        return StepFunction._wrap(self.model, np.abs(self._values) if not self.exact
                                  else np.vectorize(abs, otypes=[object])(self._values))

    def equals(self, other: "StepFunction") -> bool:
        return bool(np.all(self._values == self._other(other)))

    def max_abs_diff(self, other: "StepFunction"):
        diff = self._values - self._other(other)
        if self.exact:
            return max((abs(v) for v in diff.reshape(-1)), default=Fraction(0))
        return float(np.max(np.abs(diff)))

    def integral(self):
        s = self._values.sum()
        return s * self.model.cell_volume if self.exact else float(s) / self.model.num_cells

    @cached_property
    def level_means(self) -> list[np.ndarray]:
        return grid.level_means(self._values, self.model.n)

    def average(self, cube: CubeId):
        self.model.check_cube(cube)
        return self.level_means[cube.level][cube.pos]

    def restrict(self, cube: CubeId) -> "StepFunction":
        """Multiply by the indicator of ``cube``."""
        mask = self.model.level_mask(cube, self.model.depth)
        zero = Fraction(0) if self.exact else 0.0
        return StepFunction._wrap(self.model, np.where(mask, self._values, zero))

    def on_cube(self, cube: CubeId) -> np.ndarray:
        return grid.sub_block(self._values, self.model.n, cube.level, cube.pos)

    def refine(self, extra_levels: int) -> "StepFunction":
        """The same function on a model ``extra_levels`` deeper."""
        m = DyadicModel(self.model.n, self.model.depth + extra_levels)
        return StepFunction._wrap(m, grid.upsample(self._values, self.model.n, 2**extra_levels))

    def __repr__(self):
        mode = "exact" if self.exact else "float"
        return f"StepFunction(n={self.model.n}, D={self.model.depth}, {mode})"

    # serialization ---------------------------------------------------------

    def _value_strings(self) -> list[str]:
        if self.exact:
            return [f"{v.numerator}/{v.denominator}" for v in self.values]
        return [repr(float(v)) for v in self.values]

    def to_csv(self) -> str:
        lines = ["cell_index,value"]
        lines += [f"{i},{s}" for i, s in enumerate(self._value_strings())]
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {
            "model": self.model.to_json(),
            "mode": "rational" if self.exact else "float",
            "values": self._value_strings() if self.exact else [float(v) for v in self.values],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "StepFunction":
        model = DyadicModel(int(obj["model"]["n"]), int(obj["model"]["depth"]))
        exact = obj.get("mode", "float") == "rational"
        vals = [Fraction(v) for v in obj["values"]] if exact else [float(v) for v in obj["values"]]
        return cls(model, vals, exact)

    @classmethod
    def from_csv(cls, model: DyadicModel, text: str, exact: bool = False) -> "StepFunction":
        rows = [ln for ln in text.strip().splitlines()[1:] if ln.strip()]
        vals = [None] * model.num_cells
        for ln in rows:
            i, v = ln.split(",")
            vals[int(i)] = Fraction(v) if exact else float(v)
        if any(v is None for v in vals):
            raise ModelError("CSV does not cover every cell")
        return cls(model, vals, exact)

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def sqrt_volume(cube: CubeId):
    """sqrt|Q| as a Fraction when rational, else as a float."""
    e = cube.n * cube.level
    if e % 2 == 0:
        return Fraction(1, 2 ** (e // 2))
    return math.sqrt(float(cube.volume))


@dataclass
class HaarSpectrum:
    """Haar data of a step function.

    ``scaled[k]`` has shape ``(2**n - 1,) + (2**k,)*n`` and holds
    ``(f, h_Q^eps)/sqrt|Q|`` for each level-``k`` cube and cancellative
    signature (signatures in :func:`cancellative_signatures` order).
    """

    model: DyadicModel
    mean: object
    scaled: list[np.ndarray] = field(repr=False)

    @property
    def exact(self) -> bool:
        return bool(self.scaled) and self.scaled[0].dtype == object

    def _index(self, cube: CubeId, sig: Sequence[int]) -> tuple:
        self.model.check_cube(cube)
        if cube.level >= self.model.depth:
            raise ModelError("cube has no Haar function at this depth")
        sig = check_signature(sig, self.model.n)
        j = cancellative_signatures(self.model.n).index(sig)
        return (cube.level, (j,) + cube.pos)

    def scaled_coefficient(self, cube: CubeId, sig: Sequence[int]):
        k, idx = self._index(cube, sig)
        return self.scaled[k][idx]

    def coefficient(self, cube: CubeId, sig: Sequence[int]):
        """The Haar coefficient (f, h_Q^eps); a float unless sqrt|Q| is rational."""
        d = self.scaled_coefficient(cube, sig)
        r = sqrt_volume(cube)
        if isinstance(r, Fraction) and isinstance(d, Fraction):
            return d * r
        return float(d) * float(r)

    def items(self) -> Iterator[tuple[CubeId, Signature, object]]:
        sigs = cancellative_signatures(self.model.n)
        for k, arr in enumerate(self.scaled):
            for pos in itertools.product(range(2**k), repeat=self.model.n):
                for j, sig in enumerate(sigs):
                    yield CubeId(k, pos), sig, arr[(j,) + pos]

    def energy(self):
        """<f>_root^2 + sum (f, h_Q^eps)^2, the Plancherel right-hand side."""
        total = self.mean * self.mean
        for k, arr in enumerate(self.scaled):
            vol = Fraction(1, 2 ** (self.model.n * k))
            s = (arr * arr).sum()
            total = total + (s * vol if self.exact else float(s) * float(vol))
        return total

    def restricted(self, base: CubeId, keep_mean: bool = False) -> "HaarSpectrum":
        """Zero every coefficient whose cube is not contained in ``base``."""
        out = []
        for k, arr in enumerate(self.scaled):
            mask = self.model.level_mask(base, k)
            zero = Fraction(0) if self.exact else 0.0
            out.append(np.where(mask[None, ...], arr, zero))
        mean = self.mean if keep_mean else (Fraction(0) if self.exact else 0.0)
        return HaarSpectrum(self.model, mean, out)

    @classmethod
    def from_coefficients(cls, model: DyadicModel, coeffs: Mapping, mean=0, exact: bool = False) -> "HaarSpectrum":
        """Build from a ``{(cube, sig): (f, h_Q^sig)}`` mapping."""
        sigs = cancellative_signatures(model.n)
        dtype = object if exact else float
        zero = Fraction(0) if exact else 0.0
        scaled = [np.full((len(sigs),) + (2**k,) * model.n, zero, dtype=dtype) for k in range(model.depth)]
        for (cube, sig), c in coeffs.items():
            model.check_cube(cube)
            if cube.level >= model.depth:
                raise ModelError("cube has no Haar function at this depth")
            sig = check_signature(sig, model.n)
            r = sqrt_volume(cube)
            if exact:
                if not isinstance(r, Fraction):
                    raise ModelError(f"coefficient on {cube} is not representable exactly; pass scaled values")
                d = Fraction(c) / r
            else:
                d = float(c) / float(r)
            scaled[cube.level][(sigs.index(sig),) + cube.pos] = d
        mean = Fraction(mean) if exact else float(mean)
        return cls(model, mean, scaled)


def analyze(f: StepFunction) -> HaarSpectrum:
    means = f.level_means
    return HaarSpectrum(f.model, means[0].reshape(()).item(), grid.haar_differences(means, f.model.n))


def synthesize(spec: HaarSpectrum) -> StepFunction:
    if len(spec.scaled) != spec.model.depth:
        raise ModelError("spectrum carries coefficients on level-D cubes or misses levels")
    mean = np.array(spec.mean, dtype=object) if spec.exact else np.array(float(spec.mean))
    cells = grid.synthesize_levels(mean, spec.scaled, spec.model.n)
    return StepFunction._wrap(spec.model, cells)


def haar_sign_on(cube: CubeId, sig: Sequence[int], sub: CubeId) -> int:
    """The +-1 value of sqrt|Q| h_Q^sig on a strict subcube."""
    if not cube.strictly_contains(sub):
        raise ModelError(f"{sub} is not strictly inside {cube}")
    child = sub.ancestor(cube.level + 1)
    bits = tuple(c - 2 * p for c, p in zip(child.pos, cube.pos))
    return int(grid.sign_pattern(tuple(sig))[bits])


def haar_constant_on(cube: CubeId, sig: Sequence[int], sub: CubeId):
    """h_Q^sig(P): the constant value of the Haar function on P strictly inside Q."""
    sig = check_signature(sig, cube.n, allow_noncancellative=True)
    s = haar_sign_on(cube, sig, sub)
    r = sqrt_volume(cube)
    return Fraction(s) / r if isinstance(r, Fraction) else s / r


def haar_pattern(model: DyadicModel, cube: CubeId, sig: Sequence[int]) -> np.ndarray:
    """Integer array of sqrt|Q| h_Q^sig on the cells (+-1 on Q, 0 off Q)."""
    model.check_cube(cube)
    if cube.level >= model.depth:
        raise ModelError("cube has no Haar function at this depth")
    sig = check_signature(sig, model.n, allow_noncancellative=True)
    out = np.zeros(model.shape, dtype=np.int64)
    pat = grid.upsample(grid.sign_pattern(sig), model.n, 2 ** (model.depth - cube.level - 1))
    out[grid.sub_slices(model.side, cube.level, cube.pos)] = pat
    return out


def haar_function(model: DyadicModel, cube: CubeId, sig: Sequence[int], exact: bool = False) -> StepFunction:
    """The tensor-product Haar function h_Q^sig sampled on the cells.

    The all-ones signature gives the non-cancellative 1_Q/sqrt|Q|.  In exact
    mode the values must be rational, which requires n * level to be even.
    """
    pat = haar_pattern(model, cube, sig)
    r = sqrt_volume(cube)
    if exact:
        if not isinstance(r, Fraction):
            raise ModelError(f"1/sqrt|Q| is irrational for {cube}; use float mode")
        return StepFunction(model, grid.to_exact(pat) / r, exact=True)
    return StepFunction(model, pat / float(r))


def haar_gram(model: DyadicModel, exact: bool = True) -> np.ndarray:
    """Gram matrix of all cancellative Haar functions below level D.

    Entries are (s_P, s_Q) / sqrt(|P||Q|) where s are the sign patterns; the
    off-diagonal numerators are integers so exact mode is truly exact.
    """
    funcs = [(c, s) for c in model.all_cubes(model.depth - 1) for s in cancellative_signatures(model.n)]
    pats = np.array([haar_pattern(model, c, s).reshape(-1) for c, s in funcs], dtype=np.int64)
    num = pats @ pats.T  # integer inner products in units of cell volume
    vol = [c.volume for c, _ in funcs]
    size = len(funcs)
    if exact:
        gram = np.empty((size, size), dtype=object)
        for i in range(size):
            for j in range(size):
                prod = vol[i] * vol[j]
                if num[i, j] == 0:
                    gram[i, j] = Fraction(0)
                else:
                    # (s_P, s_Q) = num * cell_volume; divide by sqrt(|P||Q|)
                    val = Fraction(int(num[i, j])) * model.cell_volume
                    root = _exact_sqrt(prod)
                    gram[i, j] = val / root if root is not None else float(val) / math.sqrt(prod)
        return gram
    cv = float(model.cell_volume)
    norms = np.sqrt(np.array([float(v) for v in vol]))
    return num * cv / np.outer(norms, norms)


def _exact_sqrt(q: Fraction):
    a, b = math.isqrt(q.numerator), math.isqrt(q.denominator)
    if a * a == q.numerator and b * b == q.denominator:
        return Fraction(a, b)
    return None


def mesh_product(f: StepFunction, g: StepFunction) -> StepFunction:
    return f * g


def random_step_function(model: DyadicModel, rng: np.random.Generator, exact: bool = False,
                         low: int = -8, high: int = 8, denom: int = 4) -> StepFunction:
    """Random values; exact mode draws small rationals num/den."""
    if exact:
        nums = rng.integers(low, high + 1, size=model.num_cells)
        dens = rng.integers(1, denom + 1, size=model.num_cells)
        return StepFunction(model, [Fraction(int(a), int(b)) for a, b in zip(nums, dens)], exact=True)
    return StepFunction(model, rng.standard_normal(model.num_cells))


def cube_cells(model: DyadicModel, cube: CubeId) -> Iterable[int]:
    mask = model.level_mask(cube, model.depth).reshape(-1)
    return np.flatnonzero(mask)
