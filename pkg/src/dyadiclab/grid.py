"""Array primitives for the dyadic mesh.

Every function here works on numpy arrays whose trailing ``n`` axes hold a
level-``k`` grid of side ``2**k`` (cells at the finest level, block averages
at coarser ones).  Any leading axes are treated as batch axes, which lets the
norm code push whole blocks of vectors through an operator at once.

Arrays of dtype ``object`` hold :class:`fractions.Fraction` values; all
helpers keep such arrays exact.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np


def is_exact(a: np.ndarray) -> bool:
    return a.dtype == object


def side_of(a: np.ndarray) -> int:
    return a.shape[-1]


def lead_shape(a: np.ndarray, n: int) -> tuple[int, ...]:
    return a.shape[: a.ndim - n]


def scale(a: np.ndarray, num: int, den: int = 1) -> np.ndarray:
    """Multiply by num/den, exactly for object arrays."""
    if is_exact(a):
        return a * Fraction(num, den)
    return a * (num / den)


def to_blocks(a: np.ndarray, n: int, q: int) -> np.ndarray:
    """View ``a[..., s, ..., s]`` as ``a[..., q, m, q, m, ...]`` with m = s // q."""
    lead = lead_shape(a, n)
    m = side_of(a) // q
    return a.reshape(lead + (q, m) * n)


def inner_axes(a_ndim_lead: int, n: int) -> tuple[int, ...]:
    return tuple(a_ndim_lead + 2 * i + 1 for i in range(n))


def block_sum(a: np.ndarray, n: int, q: int) -> np.ndarray:
    """Sum over each of the q**n blocks; result has side q."""
    lead = lead_shape(a, n)
    if side_of(a) == q:
        return a.copy()
    b = to_blocks(a, n, q)
    return b.sum(axis=inner_axes(len(lead), n))


def block_mean(a: np.ndarray, n: int, q: int) -> np.ndarray:
    m = side_of(a) // q
    return scale(block_sum(a, n, q), 1, m**n)


def upsample(a: np.ndarray, n: int, factor: int) -> np.ndarray:
    """Piecewise-constant refinement of the trailing n axes by ``factor``."""
    if factor == 1:
        return a
    out = a
    for ax in range(a.ndim - n, a.ndim):
        out = np.repeat(out, factor, axis=ax)
    return out


def level_means(values: np.ndarray, n: int) -> list[np.ndarray]:
    """Averages at every level 0..D, index k holding the side-2**k grid."""
    depth = int(side_of(values)).bit_length() - 1
    out = [None] * (depth + 1)
    out[depth] = values
    for k in range(depth - 1, -1, -1):
        out[k] = block_mean(out[k + 1], n, 2**k)
    return out


def signatures(n: int) -> list[tuple[int, ...]]:
    """The 2**n - 1 cancellative signatures in lexicographic order."""
    return [s for s in itertools.product((0, 1), repeat=n) if not all(s)]


def all_signatures(n: int) -> list[tuple[int, ...]]:
    return list(itertools.product((0, 1), repeat=n))


def sign_pattern(sig: tuple[int, ...]) -> np.ndarray:
    """Values of sqrt|Q| h_Q^sig on the 2**n children of Q, shape (2,)*n.

    Coordinate i contributes -1 on the left half and +1 on the right half when
    sig[i] == 0, and +1 on both halves when sig[i] == 1.
    """
    n = len(sig)
    out = np.ones((2,) * n, dtype=np.int64)
    for i, e in enumerate(sig):
        if e == 0:
            shape = [1] * n
            shape[i] = 2
            out = out * np.array([-1, 1]).reshape(shape)
    return out


def interleave(pattern: np.ndarray, n: int) -> np.ndarray:
    """Reshape a (2,)*n child pattern to broadcast against (q, 2, q, 2, ...)."""
    return pattern.reshape((1, 2) * n)


def expand(a: np.ndarray, n: int) -> np.ndarray:
    """Reshape ``a[..., q, ..., q]`` to ``a[..., q, 1, q, 1, ...]``."""
    lead = lead_shape(a, n)
    q = side_of(a)
    return a.reshape(lead + (q, 1) * n)


def collapse(a: np.ndarray, n: int) -> np.ndarray:
    """Inverse of the (q, 2, q, 2, ...) view: back to side 2q."""
    lead = a.shape[: a.ndim - 2 * n]
    q = a.shape[-2]
    return a.reshape(lead + (2 * q,) * n)


def haar_differences(means: list[np.ndarray], n: int) -> list[np.ndarray]:
    """Scaled Haar coefficients per level.

    Entry k has shape ``lead + (2**n - 1,) + (2**k,)*n`` and holds
    ``<f s_Q^eps>_Q = (f, h_Q^eps) / sqrt|Q|`` for every level-k cube Q.
    """
    sigs = signatures(n)
    depth = len(means) - 1
    out = []
    for k in range(depth):
        child = means[k + 1]
        lead = lead_shape(child, n)
        blocks = to_blocks(child, n, 2**k)
        axes = inner_axes(len(lead), n)
        per_sig = []
        for sig in sigs:
            pat = interleave(sign_pattern(sig), n)
            per_sig.append(scale((blocks * pat).sum(axis=axes), 1, 2**n))
        out.append(np.stack(per_sig, axis=len(lead)))
    return out


def synthesize_levels(mean: np.ndarray, diffs: list[np.ndarray], n: int) -> np.ndarray:
    """Cell values from a root mean and per-level scaled coefficients."""
    sigs = signatures(n)
    lead = np.shape(mean)
    cur = np.asarray(mean).reshape(lead + (1,) * n)
    if diffs and diffs[0].dtype == object and cur.dtype != object:
        cur = cur.astype(object)
    for k, d in enumerate(diffs):
        q = 2**k
        acc = expand(cur, n) * np.ones((1, 2) * n, dtype=np.int64)
        for j, sig in enumerate(sigs):
            dj = np.take(d, j, axis=len(lead))
            acc = acc + expand(dj, n) * interleave(sign_pattern(sig), n)
        cur = collapse(acc, n)
        assert side_of(cur) == 2 * q
    return cur


def level_pattern_to_cells(level_values: np.ndarray, n: int, depth: int) -> np.ndarray:
    """Broadcast a per-cube array at some level down to the cells."""
    q = side_of(level_values)
    return upsample(level_values, n, (2**depth) // q)


def difference_on_cells(d: np.ndarray, n: int, depth: int) -> np.ndarray:
    """Cell values of sum_eps d_eps s^eps for one level's coefficient array.

    ``d`` has shape ``lead + (2**n - 1,) + (q,)*n``.
    """
    sigs = signatures(n)
    lead_len = d.ndim - n - 1
    q = side_of(d)
    acc = None
    for j, sig in enumerate(sigs):
        dj = np.take(d, j, axis=lead_len)
        term = expand(dj, n) * interleave(sign_pattern(sig), n)
        acc = term if acc is None else acc + term
    return upsample(collapse(acc, n), n, (2**depth) // (2 * q))


def to_exact(a) -> np.ndarray:
    arr = np.asarray(a)
    out = np.empty(arr.shape, dtype=object)
    flat = out.reshape(-1)
    for i, v in enumerate(arr.reshape(-1)):
        flat[i] = v if isinstance(v, Fraction) else Fraction(v)
    return out


def to_float(a) -> np.ndarray:
    arr = np.asarray(a)
    if arr.dtype == object:
        return np.array([float(v) for v in arr.reshape(-1)], dtype=float).reshape(arr.shape)
    return arr.astype(float)


def sub_block(values: np.ndarray, n: int, level: int, pos: tuple[int, ...]) -> np.ndarray:
    """Cells of the cube (level, pos) as a side 2**(D - level) array."""
    m = side_of(values) >> level
    idx = tuple(slice(p * m, (p + 1) * m) for p in pos)
    return values[(Ellipsis,) + idx]


def sub_slices(side: int, level: int, pos: tuple[int, ...]) -> tuple[slice, ...]:
    m = side >> level
    return tuple(slice(p * m, (p + 1) * m) for p in pos)
