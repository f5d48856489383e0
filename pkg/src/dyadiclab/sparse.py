"""Sparse collections, Carleson packing, sparse BMO functions, sparse
operators and the martingale-transform symbol tau."""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np

from . import grid
from .core import CubeId, DyadicModel, HaarSpectrum, ModelError, StepFunction, analyze, synthesize
from .weights import Weight


class SparseCollection:
    """A finite set of model cubes stored as one boolean mask per level."""

    def __init__(self, model: DyadicModel, cubes: Iterable[CubeId] = ()):
        self.model = model
        self.masks = [np.zeros((2**k,) * model.n, dtype=bool) for k in range(model.depth + 1)]
        for c in cubes:
            model.check_cube(c)
            self.masks[c.level][c.pos] = True
        for m in self.masks:
            m.setflags(write=False)

    @classmethod
    def from_masks(cls, model: DyadicModel, masks: Sequence[np.ndarray]) -> "SparseCollection":
        obj = cls(model)
        obj.masks = [np.array(m, dtype=bool).reshape((2**k,) * model.n) for k, m in enumerate(masks)]
        for m in obj.masks:
            m.setflags(write=False)
        return obj

    @property
    def cubes(self) -> list[CubeId]:
        out = []
        for k, m in enumerate(self.masks):
            out.extend(CubeId(k, tuple(int(i) for i in idx)) for idx in zip(*np.nonzero(m)))
        return out

    def __len__(self) -> int:
        return int(sum(int(m.sum()) for m in self.masks))

    def __contains__(self, cube: CubeId) -> bool:
        return cube.level < len(self.masks) and bool(self.masks[cube.level][cube.pos])

    def __iter__(self):
        return iter(self.cubes)

    def union(self, other: "SparseCollection") -> "SparseCollection":
        return SparseCollection.from_masks(self.model, [a | b for a, b in zip(self.masks, other.masks)])

    def issubset(self, other: "SparseCollection") -> bool:
        return all(not np.any(a & ~b) for a, b in zip(self.masks, other.masks))

    @property
    def max_level(self) -> int:
        levels = [k for k, m in enumerate(self.masks) if m.any()]
        return max(levels) if levels else -1

    @cached_property
    def packing_levels(self) -> list[np.ndarray]:
        """Per cube Q: sum of |P| over P in S with P inside Q, in cell-volume units."""
        n, depth = self.model.n, self.model.depth
        out: list[np.ndarray] = [None] * (depth + 1)
        below = np.zeros((2**depth,) * n, dtype=np.int64)
        for k in range(depth, -1, -1):
            if k < depth:
                below = grid.block_sum(out[k + 1], n, 2**k)
            out[k] = below + self.masks[k].astype(np.int64) * 2 ** (n * (depth - k))
        return out

    @cached_property
    def carleson(self) -> Fraction:
        """Exact max over Q in S of (1/|Q|) sum_{P in S, P inside Q} |P|."""
        if len(self) == 0:
            raise ModelError("Carleson constant of an empty collection")
        n, depth = self.model.n, self.model.depth
        best = Fraction(0)
        for k, (pack, mask) in enumerate(zip(self.packing_levels, self.masks)):
            if mask.any():
                m = int(pack[mask].max())
                best = max(best, Fraction(m, 2 ** (n * (depth - k))))
        return best

    def children_of(self, cube: CubeId) -> list[CubeId]:
        """ch_S(Q): maximal cubes of S strictly inside Q."""
        n, depth = self.model.n, self.model.depth
        covered = np.zeros((1,) * n, dtype=bool)
        out = []
        for k in range(cube.level + 1, depth + 1):
            covered = grid.upsample(covered, n, 2)
            local = grid.sub_block(self.masks[k], n, cube.level, cube.pos)
            hit = local & ~covered
            rel = k - cube.level
            for idx in zip(*np.nonzero(hit)):
                out.append(CubeId(k, tuple(p * 2**rel + int(i) for p, i in zip(cube.pos, idx))))
            covered = covered | hit
        return out

    def generations(self, q0: CubeId) -> list[list[CubeId]]:
        """S_1 = ch_S(Q0), S_k = union of ch_S over S_{k-1}; stops at the first empty one."""
        if q0 not in self:
            raise ModelError(f"{q0} is not in the collection")
        gens = []
        current = [q0]
        while True:
            nxt = [c for q in current for c in self.children_of(q)]
            if not nxt:
                return gens
            gens.append(nxt)
            current = nxt

    def to_json(self) -> list:
        return [c.to_json() for c in self.cubes]

    @classmethod
    def from_json(cls, model: DyadicModel, obj: Sequence) -> "SparseCollection":
        return cls(model, [CubeId.from_json(o) for o in obj])

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    def __repr__(self) -> str:
        return f"SparseCollection({len(self)} cubes, n={self.model.n}, D={self.model.depth})"


def carleson_constant(s: SparseCollection) -> Fraction:
    return s.carleson


def _volume_of(cubes: Iterable[CubeId]) -> Fraction:
    return sum((c.volume for c in cubes), Fraction(0))


@dataclass(frozen=True)
class GenerationReport:
    generations: list[list[CubeId]]
    measures: list[Fraction]
    weighted_sum: Fraction
    bound: Fraction

    @property
    def ok(self) -> bool:
        return self.weighted_sum <= self.bound


def generations(s: SparseCollection, q0: CubeId) -> GenerationReport:
    """Generations below Q0 with the nesting and sum k|S_k| <= Lambda^2 |S_1| checks."""
    gens = s.generations(q0)
    for prev, cur in zip([[q0]] + gens, gens):
        for c in cur:
            if not any(p.strictly_contains(c) for p in prev):
                raise ArithmeticError(f"{c} is not nested in the previous generation")
    measures = [_volume_of(g) for g in gens]
    weighted = sum((Fraction(k + 1) * m for k, m in enumerate(measures)), Fraction(0))
    lam = s.carleson
    bound = lam * lam * (measures[0] if measures else Fraction(0))
    return GenerationReport(gens, measures, weighted, bound)


def _zero_like(exact: bool):
    return Fraction(0) if exact else 0.0


def _weight_level_means(model: DyadicModel, w: Optional[Weight], exact: bool) -> list:
    if w is None:
        one = Fraction(1) if exact else 1.0
        return [one] * (model.depth + 1)
    return w.level_means


def sparse_bmo_function(s: SparseCollection, w: Optional[Weight] = None, exact: Optional[bool] = None) -> StepFunction:
    """b_S^w = sum_{Q in S} <w>_Q 1_Q (unit weight gives the overlap count b_S)."""
    model = s.model
    if exact is None:
        exact = True if w is None else w.exact
    wm = _weight_level_means(model, w, exact)
    total = None
    for k, mask in enumerate(s.masks):
        term = grid.level_pattern_to_cells(mask.astype(np.int64) * wm[k], model.n, model.depth)
        total = term if total is None else total + term
    arr = grid.to_exact(total) if exact else grid.to_float(total)
    return StepFunction._wrap(model, arr)


def sparse_haar_function(s: SparseCollection) -> StepFunction:
    """b~_S = sum over Q in S and every cancellative eps of sqrt|Q| h_Q^eps."""
    model = s.model
    if s.masks[model.depth].any():
        raise ModelError("level-D cubes carry no Haar functions")
    nsig = 2**model.n - 1
    scaled = [np.broadcast_to(s.masks[k].astype(object), (nsig,) + s.masks[k].shape) * Fraction(1)
              for k in range(model.depth)]
    spec = HaarSpectrum(model, Fraction(0), [np.array(a, dtype=object) for a in scaled])
    return synthesize(spec)


def sparse_operator(s: SparseCollection, f: StepFunction, w: Optional[Weight] = None) -> StepFunction:
    """A_S^w f = sum_{Q in S} <w>_Q <f>_Q 1_Q."""
    model = s.model
    wm = _weight_level_means(model, w, f.exact)
    fm = f.level_means
    total = None
    for k, mask in enumerate(s.masks):
        level = np.where(mask, fm[k] * wm[k], _zero_like(f.exact))
        term = grid.level_pattern_to_cells(level, model.n, model.depth)
        total = term if total is None else total + term
    return StepFunction._wrap(model, total)


def sparse_bilinear_form(s: SparseCollection, f: StepFunction, g: StepFunction, w: Optional[Weight] = None):
    """(A_S^w f, g) = sum_{Q in S} <w>_Q <f>_Q <g>_Q |Q|."""
    model = s.model
    wm = _weight_level_means(model, w, f.exact)
    fm, gm = f.level_means, g.level_means
    total = _zero_like(f.exact)
    for k, mask in enumerate(s.masks):
        if not mask.any():
            continue
        vals = (fm[k] * gm[k] * wm[k])[mask].sum()
        vol = Fraction(1, 2 ** (model.n * k))
        total = total + (vals * vol if f.exact else float(vals) * float(vol))
    return total


@dataclass(frozen=True)
class TauSequence:
    """(tau_S^w)_J for every model cube J, one array per level."""

    model: DyadicModel
    levels: list

    def value(self, cube: CubeId):
        return self.levels[cube.level][cube.pos]

    @property
    def exact(self) -> bool:
        return self.levels[0].dtype == object

    def max(self):
        return max(a.max() for a in self.levels)


def tau_sequence(s: SparseCollection, w: Optional[Weight] = None, exact: Optional[bool] = None) -> TauSequence:
    """(tau_S^w)_J = (1/|J|) sum_{I in S, I strictly inside J} w(I)."""
    model = s.model
    n, depth = model.n, model.depth
    if exact is None:
        exact = True if w is None else w.exact
    wm = _weight_level_means(model, w, exact)
    inclusive: list = [None] * (depth + 1)
    strict: list = [None] * (depth + 1)
    for k in range(depth, -1, -1):
        if k == depth:
            strict[k] = np.full((2**k,) * n, _zero_like(exact), dtype=object if exact else float)
        else:
            # child masses normalized by |J|
            strict[k] = grid.block_mean(inclusive[k + 1], n, 2**k)
        inclusive[k] = np.where(s.masks[k], wm[k], _zero_like(exact)) + strict[k]
    levels = [grid.to_exact(a) if exact else grid.to_float(a) for a in strict]
    return TauSequence(model, levels)


def martingale_transform(tau: TauSequence, f: StepFunction) -> StepFunction:
    """T_tau f = sum_J tau_J sum_eps (f, h_J^eps) h_J^eps."""
    spec = analyze(f)
    scaled = []
    for k, d in enumerate(spec.scaled):
        t = tau.levels[k]
        if f.exact and t.dtype != object:
            raise ModelError("exact f needs an exact tau sequence")
        scaled.append(d * t[None, ...] if f.exact else d * grid.to_float(t)[None, ...])
    return synthesize(HaarSpectrum(f.model, _zero_like(f.exact), scaled))


# generators ----------------------------------------------------------------


def random_sparse(model: DyadicModel, rng: np.random.Generator, target: float = 2.0,
                  probability: Optional[float] = None, include_root: bool = True,
                  max_level: Optional[int] = None, max_tries: int = 50) -> SparseCollection:
    """Random collection with Carleson constant at most ``target``.

    Candidate cubes are drawn independently per level; a candidate is kept
    only when every already-kept ancestor stays within its packing budget.
    The finished collection is re-checked and resampled if it fails.
    """
    if target < 1:
        raise ModelError("Carleson target must be at least 1")
    depth, n = model.depth, model.n
    top = depth if max_level is None else max_level
    if probability is None:
        probability = min(1.0, max(target - 1.0, 0.0) / max(top, 1))
    lam = Fraction(target).limit_denominator(10**9)
    if lam > Fraction(target):
        lam = Fraction(int(target * 10**9), 10**9)
    for _ in range(max_tries):
        masks = [np.zeros((2**k,) * n, dtype=bool) for k in range(depth + 1)]
        pack = [np.zeros((2**k,) * n, dtype=object) for k in range(depth + 1)]
        for k in range(top + 1):
            draw = rng.random((2**k,) * n) < probability
            if k == 0 and include_root:
                draw[...] = True
            vol = Fraction(1, 2 ** (n * k))
            for idx in zip(*np.nonzero(draw)):
                idx = tuple(int(i) for i in idx)
                ancestors = [(j, tuple(p >> (k - j) for p in idx)) for j in range(k)]
                anc_in = [(j, a) for j, a in ancestors if masks[j][a]]
                if all((pack[j][a] or 0) + vol <= lam * Fraction(1, 2 ** (n * j)) for j, a in anc_in):
                    masks[k][idx] = True
                    pack[k][idx] = vol
                    for j, a in anc_in:
                        pack[j][a] = (pack[j][a] or 0) + vol
        s = SparseCollection.from_masks(model, masks)
        if len(s) and s.carleson <= lam:
            return s
    raise ModelError("could not draw a collection within the Carleson target")


def chain_sparse(model: DyadicModel, length: Optional[int] = None) -> SparseCollection:
    """Nested chain root > first child > first grandchild > ... (packing near 2^n/(2^n-1))."""
    length = model.depth + 1 if length is None else length
    return SparseCollection(model, [CubeId(k, (0,) * model.n) for k in range(min(length, model.depth + 1))])
