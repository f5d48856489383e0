"""Weighted operator norms on the finite model and the experiments built on
them.

Operators act on cell vectors.  Because all cells have the same volume the
Lebesgue adjoint of an operator is its matrix transpose, and the weighted
norm ||T : L^p(mu) -> L^p(lam)|| equals the l^p norm of
diag(lam)^(1/p) T diag(mu)^(-1/p); the cell volume cancels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg as sla

from . import grid
from .core import CubeId, DyadicModel, ModelError, StepFunction, analyze
from .report import VerificationReport
from .sparse import SparseCollection, TauSequence
from .weights import Weight, ap_value, bmo_norm, conjugate_exponent, power_weight

ArrayOp = Callable[[np.ndarray], np.ndarray]


# batched kernels: X has shape (B,) + (side,)*n --------------------------------


def _scaled_float(f: StepFunction, base: Optional[CubeId] = None) -> list[np.ndarray]:
    spec = analyze(f.to_float())
    if base is not None and base != f.model.root:
        spec = spec.restricted(base)
    return spec.scaled


def _pi_kernel(db: list[np.ndarray], n: int) -> ArrayOp:
    def apply(x: np.ndarray) -> np.ndarray:
        fm = grid.level_means(x, n)
        coeffs = [d[None, ...] * fm[k][:, None, ...] for k, d in enumerate(db)]
        return grid.synthesize_levels(np.zeros(x.shape[0]), coeffs, n)
    return apply


def _pi_star_kernel(db: list[np.ndarray], n: int) -> ArrayOp:
    def apply(x: np.ndarray) -> np.ndarray:
        dx = grid.haar_differences(grid.level_means(x, n), n)
        depth = len(db)
        out = np.zeros(x.shape)
        for k, d in enumerate(db):
            lvl = (d[None, ...] * dx[k]).sum(axis=1)
            out += grid.level_pattern_to_cells(lvl, n, depth)
        return out
    return apply


def _gamma_kernel(db: list[np.ndarray], n: int) -> ArrayOp:
    sigs = grid.signatures(n)
    pats = [grid.interleave(grid.sign_pattern(s), n) for s in sigs]

    def apply(x: np.ndarray) -> np.ndarray:
        dx = grid.haar_differences(grid.level_means(x, n), n)
        depth = len(db)
        out = np.zeros(x.shape)
        for k in range(depth):
            acc = 0.0
            for i in range(len(sigs)):
                for j in range(len(sigs)):
                    if i != j:
                        coeff = db[k][i][None, ...] * dx[k][:, j]
                        acc = acc + grid.expand(coeff, n) * (pats[i] * pats[j])
            out += grid.upsample(grid.collapse(acc, n), n, 2 ** (depth - k - 1))
        return out
    return apply


def _multiplier_kernel(tau_levels: list[np.ndarray], n: int) -> ArrayOp:
    """sum_J tau_J (f, h_J) h_J over all cancellative signatures."""
    def apply(x: np.ndarray) -> np.ndarray:
        dx = grid.haar_differences(grid.level_means(x, n), n)
        coeffs = [d * t[None, None, ...] for d, t in zip(dx, tau_levels)]
        return grid.synthesize_levels(np.zeros(x.shape[0]), coeffs, n)
    return apply


def _sparse_kernel(masks: list[np.ndarray], wm: list[np.ndarray], n: int) -> ArrayOp:
    def apply(x: np.ndarray) -> np.ndarray:
        fm = grid.level_means(x, n)
        depth = len(masks) - 1
        out = np.zeros(x.shape)
        for k, m in enumerate(masks):
            if m.any():
                out += grid.level_pattern_to_cells(np.where(m, wm[k], 0.0)[None, ...] * fm[k], n, depth)
        return out
    return apply


def _composition_kernel(da: list[np.ndarray], db: list[np.ndarray], n: int) -> ArrayOp:
    sym = [(x * y).sum(axis=0) for x, y in zip(da, db)]

    def apply(x: np.ndarray) -> np.ndarray:
        fm = grid.level_means(x, n)
        out = np.zeros(x.shape)
        for k, s in enumerate(sym):
            out += grid.level_pattern_to_cells(s[None, ...] * fm[k], n, len(sym))
        return out
    return apply


# operators -------------------------------------------------------------------


class LinearOperator:
    """A matrix-free operator on the cells of a model with a lazily built dense matrix."""

    def __init__(self, model: DyadicModel, apply: ArrayOp, apply_t: Optional[ArrayOp] = None,
                 name: str = "T", symmetric: bool = False, positive: bool = False):
        self.model = model
        self._apply = apply
        self._apply_t = apply if symmetric else apply_t
        self.name = name
        self.symmetric = symmetric
        self.positive = positive
        self._matrix: Optional[np.ndarray] = None

    def _grid(self, v: np.ndarray) -> np.ndarray:
        return v.reshape((-1,) + self.model.shape)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        """Apply to vectors stored as rows of ``v`` (shape (B, N) or (N,))."""
        flat = np.atleast_2d(v)
        out = self._apply(self._grid(flat)).reshape(flat.shape)
        return out if v.ndim == 2 else out[0]

    def rmatvec(self, v: np.ndarray) -> np.ndarray:
        if self._apply_t is None:
            return self.matrix.T @ v if v.ndim == 1 else v @ self.matrix
        flat = np.atleast_2d(v)
        out = self._apply_t(self._grid(flat)).reshape(flat.shape)
        return out if v.ndim == 2 else out[0]

    def __call__(self, f: StepFunction) -> StepFunction:
        return StepFunction._wrap(self.model, self.matvec(grid.to_float(f.values)).reshape(self.model.shape))

    @property
    def matrix(self) -> np.ndarray:
        """Dense matrix; column j is the image of the j-th cell indicator."""
        if self._matrix is None:
            num = self.model.num_cells
            cols = np.empty((num, num))
            step = 256
            for s in range(0, num, step):
                e = np.zeros((min(step, num - s), num))
                e[np.arange(e.shape[0]), np.arange(s, s + e.shape[0])] = 1.0
                cols[s:s + e.shape[0]] = self.matvec(e)
            self._matrix = cols.T
        return self._matrix

    def transpose(self) -> "LinearOperator":
        if self.symmetric:
            return self
        if self._apply_t is None:
            mat = self.matrix.T
            return LinearOperator.from_matrix(self.model, mat, name=f"{self.name}^T")
        return LinearOperator(self.model, self._apply_t, self._apply, name=f"{self.name}^T")

    @classmethod
    def from_matrix(cls, model: DyadicModel, mat: np.ndarray, name: str = "M") -> "LinearOperator":
        mat = np.asarray(mat, dtype=float)
        op = cls(model, lambda x: (x.reshape(x.shape[0], -1) @ mat.T).reshape(x.shape),
                 lambda x: (x.reshape(x.shape[0], -1) @ mat).reshape(x.shape), name=name)
        op._matrix = mat
        return op


def identity_operator(model: DyadicModel) -> LinearOperator:
    return LinearOperator(model, lambda x: x.copy(), name="I", symmetric=True, positive=True)


def paraproduct_operator(kind: str, b: StepFunction, base: Optional[CubeId] = None) -> LinearOperator:
    n = b.model.n
    db = _scaled_float(b, base)
    if kind == "Pi":
        return LinearOperator(b.model, _pi_kernel(db, n), _pi_star_kernel(db, n), name="Pi_b")
    if kind == "PiStar":
        return LinearOperator(b.model, _pi_star_kernel(db, n), _pi_kernel(db, n), name="Pi*_b")
    if kind == "Gamma":
        if n < 2:
            raise ModelError("Gamma paraproduct needs dimension n >= 2")
        return LinearOperator(b.model, _gamma_kernel(db, n), name="Gamma_b", symmetric=True)
    raise ModelError(f"unknown paraproduct kind {kind!r}")


def sparse_operator_op(s: SparseCollection, w: Optional[Weight] = None) -> LinearOperator:
    model = s.model
    wm = [np.ones((2**k,) * model.n) for k in range(model.depth + 1)] if w is None else \
        [grid.to_float(a) for a in w.level_means]
    return LinearOperator(model, _sparse_kernel(s.masks, wm, model.n), name="A_S", symmetric=True, positive=True)


def martingale_operator(tau: TauSequence) -> LinearOperator:
    lv = [grid.to_float(a) for a in tau.levels[:-1]]
    return LinearOperator(tau.model, _multiplier_kernel(lv, tau.model.n), name="T_tau", symmetric=True)


def composition_operator(a: StepFunction, b: StepFunction) -> LinearOperator:
    n = a.model.n
    op = LinearOperator(a.model, _composition_kernel(_scaled_float(a), _scaled_float(b), n), name="Pi*_a Pi_b")
    op._apply_t = _composition_kernel(_scaled_float(b), _scaled_float(a), n)
    return op


# norms -----------------------------------------------------------------------


@dataclass
class NormEstimate:
    p: float
    value: float
    method: str
    iterations: int = 0
    residual: float = 0.0
    vector: Optional[np.ndarray] = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {"p": self.p, "value": self.value, "method": self.method,
                "iterations": self.iterations, "residual": self.residual}


class ConvergenceError(RuntimeError):
    pass


def _weight_vec(w: Optional[Weight], model: DyadicModel) -> np.ndarray:
    return np.ones(model.num_cells) if w is None else grid.to_float(w.values)


def _scaled_operator(op: LinearOperator, mu: Optional[Weight], lam: Optional[Weight], p: float):
    m = _weight_vec(mu, op.model) ** (-1.0 / p)
    l = _weight_vec(lam, op.model) ** (1.0 / p)

    def fwd(v):
        return op.matvec(v * m) * l

    def bwd(v):
        return op.rmatvec(v * l) * m

    return fwd, bwd


def _start_block(num: int, size: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    block = rng.standard_normal((size, num))
    block[0] = 1.0
    return block


def operator_norm_p2(op: LinearOperator, mu: Optional[Weight] = None, lam: Optional[Weight] = None,
                     tol: float = 1e-10, max_iter: int = 10000, block: int = 8, seed: int = 0) -> NormEstimate:
    """||T : L^2(mu) -> L^2(lam)|| by block power iteration on A^T A with Rayleigh-Ritz.

    Converged when the top Ritz pair has relative residual at most ``tol``.
    """
    fwd, bwd = _scaled_operator(op, mu, lam, 2.0)
    num = op.model.num_cells
    size = min(block, num)
    q, _ = np.linalg.qr(_start_block(num, size, seed).T)
    resid = np.inf
    for it in range(1, max_iter + 1):
        z = bwd(fwd(q.T)).T                      # (num, size)
        h = q.T @ z
        vals, vecs = np.linalg.eigh((h + h.T) / 2)
        top = vals[-1]
        if top <= 0:
            return NormEstimate(2.0, 0.0, "exact_p2", it, 0.0, q[:, 0])
        v = q @ vecs[:, -1]
        r = z @ vecs[:, -1] - top * v
        resid = float(np.linalg.norm(r) / top)
        if resid <= tol:
            return NormEstimate(2.0, math.sqrt(top), "exact_p2", it, resid, v)
        q, _ = np.linalg.qr(z @ vecs[:, ::-1])
    raise ConvergenceError(f"power iteration stopped at residual {resid:.3e} after {max_iter} steps")


def operator_norm_svd(op: LinearOperator, mu: Optional[Weight] = None, lam: Optional[Weight] = None) -> float:
    """Largest singular value of the dense weighted matrix (the oracle)."""
    m = _weight_vec(mu, op.model) ** -0.5
    l = _weight_vec(lam, op.model) ** 0.5
    a = l[:, None] * op.matrix * m[None, :]
    return float(sla.svdvals(a)[0])


def _psi(y: np.ndarray, p: float) -> np.ndarray:
    return np.sign(y) * np.abs(y) ** (p - 1.0)


def _lp(v: np.ndarray, p: float) -> float:
    return float(np.sum(np.abs(v) ** p) ** (1.0 / p))


def operator_norm_lp(op: LinearOperator, mu: Optional[Weight] = None, lam: Optional[Weight] = None,
                     p: float = 2.0, starts: int = 6, max_iter: int = 10000, tol: float = 1e-13,
                     seed: int = 0, nonnegative_starts: bool = False, random_trials: int = 200) -> NormEstimate:
    """Lower-bound estimate of ||T : L^p(mu) -> L^p(lam)||.

    Nonlinear power iteration x <- psi_p'(A^T psi_p(A x)) normalized in l^p
    from several starts (the all-ones vector first), cross-checked against a
    random-search lower bound.  The larger of the two is returned.
    """
    if not p > 1:
        raise ModelError("exponent must exceed 1")
    pc = conjugate_exponent(p)
    fwd, bwd = _scaled_operator(op, mu, lam, p)
    num = op.model.num_cells
    rng = np.random.default_rng(seed)
    best, best_vec, best_it, best_res = 0.0, None, 0, 0.0
    for s in range(starts):
        x = np.ones(num) if s == 0 else rng.standard_normal(num)
        if nonnegative_starts:
            x = np.abs(x)
        x = x / _lp(x, p)
        val, res, it = 0.0, np.inf, 0
        for it in range(1, max_iter + 1):
            y = fwd(x)
            new_val = _lp(y, p)
            if new_val == 0:
                break
            z = _psi(bwd(_psi(y, p)), pc)
            nz = _lp(z, p)
            if nz == 0:
                break
            x = z / nz
            res = abs(new_val - val) / new_val
            val = new_val
            if res <= tol:
                break
        val = max(val, _lp(fwd(x), p))
        if val > best:
            best, best_vec, best_it, best_res = val, x, it, res
    rand = random_lower_bound(fwd, num, p, random_trials, rng, nonnegative_starts)
    method = "nonlinear_power"
    if rand > best:
        best, method = rand, "random_lower_bound"
    return NormEstimate(p, best, method, best_it, float(best_res), best_vec)


def random_lower_bound(fwd, num: int, p: float, trials: int, rng: np.random.Generator,
                       nonnegative: bool = False) -> float:
    if trials <= 0:
        return 0.0
    x = rng.standard_normal((trials, num))
    if nonnegative:
        x = np.abs(x)
    y = fwd(x)
    return float(np.max(np.sum(np.abs(y) ** p, axis=1) ** (1 / p) / np.sum(np.abs(x) ** p, axis=1) ** (1 / p)))


def operator_norm(op: LinearOperator, mu: Optional[Weight] = None, lam: Optional[Weight] = None,
                  p: float = 2.0, **kw) -> NormEstimate:
    if p == 2.0:
        return operator_norm_p2(op, mu, lam, **kw)
    return operator_norm_lp(op, mu, lam, p, **kw)


# verification ----------------------------------------------------------------


def bloom_constant(lam_carleson: float, p: float, mu_char: float, lam_char: float) -> float:
    """Lambda^(p'+p-2) p p' [mu]^(1/(p-1)) [lam] as the bound for the Bloom sparse operator."""
    pc = conjugate_exponent(p)
    return lam_carleson ** (pc + p - 2) * p * pc * mu_char ** (1.0 / (p - 1.0)) * lam_char


def bloom_nu(mu: Weight, lam: Weight, p: float) -> Weight:
    m, l = grid.to_float(mu.values), grid.to_float(lam.values)
    return Weight(StepFunction(mu.model, m ** (1.0 / p) * l ** (-1.0 / p)))


def verify_bloom_sparse_bound(s: SparseCollection, mu: Weight, lam: Weight, p: float = 2.0,
                              rtol: float = 1e-9, **kw) -> VerificationReport:
    """||A_S^nu : L^p(mu) -> L^p(lam)|| against the explicit Carleson/A_p constant."""
    nu = bloom_nu(mu, lam, p)
    op = sparse_operator_op(s, nu)
    est = operator_norm(op, mu, lam, p, **kw)
    carleson = float(s.carleson)
    mu_c, lam_c = ap_value(mu, p), ap_value(lam, p)
    bound = bloom_constant(carleson, p, mu_c, lam_c)
    pc = conjugate_exponent(p)
    alt = carleson ** (pc + p - 2) * pc * pc * ap_value(mu.conjugate(p), pc) * lam_c
    rep = VerificationReport("Bloom sparse bound", meta={"p": p, "carleson": carleson, "mu_char": mu_c,
                                                          "lam_char": lam_c, "method": est.method,
                                                          "residual": est.residual, "alt_bound": alt})
    rep.add("norm <= bound", est.value <= bound * (1 + rtol), lhs=est.value, rhs=bound,
            slack=bound / est.value if est.value > 0 else math.inf)
    return rep


def verify_paraproduct_bloom_bound(b: StepFunction, mu: Weight, lam: Weight, p: float = 2.0, **kw) -> VerificationReport:
    """Report ||Pi_b||/(||b||_BMO(nu) [mu]^(1/(p-1)) [lam]); only finiteness is asserted."""
    nu = bloom_nu(mu, lam, p)
    bn = float(bmo_norm(b.to_float(), nu))
    if bn == 0:
        raise ModelError("BMO norm zero")
    est = operator_norm(paraproduct_operator("Pi", b), mu, lam, p, **kw)
    scale = bn * ap_value(mu, p) ** (1.0 / (p - 1.0)) * ap_value(lam, p)
    ratio = est.value / scale
    rep = VerificationReport("paraproduct Bloom bound", meta={"p": p, "norm": est.value, "bmo_nu": bn,
                                                               "nu_char": ap_value(nu, 2.0), "method": est.method})
    rep.add("ratio finite", math.isfinite(ratio), lhs=ratio)
    return rep


def square_function_norm_sq(w: Weight, **kw) -> NormEstimate:
    """||S : L^2(w) -> L^2(w)||^2 as the top eigenvalue of diag(w)^(-1/2) T diag(w)^(-1/2).

    T is the Haar multiplier with symbol <w>_I, so that (f, T f) = ||S f||^2_{L^2(w)}.
    """
    model = w.model
    tau = TauSequence(model, [grid.to_float(a) for a in w.level_means])
    op = martingale_operator(tau)
    # singular value of a PSD map = its top eigenvalue
    est = operator_norm_p2(op, w, w.power(-1.0), **kw)
    return est


@dataclass
class SweepRow:
    alpha: float
    ap_char: float
    norm_pi: float
    norm_square: float
    bmo_w: float
    bounds_ok: bool
    checks: dict = field(default_factory=dict)

    def csv(self) -> str:
        return f"{self.alpha!r},{self.ap_char!r},{self.norm_pi!r},{self.norm_square!r},{self.bmo_w!r},{str(self.bounds_ok).lower()}"


SWEEP_HEADER = "alpha,ap_char,norm_pi,norm_square,bmo_w,bounds_ok"


def sweep_row(alpha: float, depth: int, n: int = 1, delta: float = 1e-8, **kw) -> SweepRow:
    model = DyadicModel(n, depth)
    w = power_weight(model, alpha)
    w_inv = w.power(-1.0)
    char = ap_value(w, 2.0)
    norm_pi = operator_norm_p2(paraproduct_operator("Pi", w.density), w, w_inv, **kw).value
    ns2 = square_function_norm_sq(w, **kw).value
    bmo_w = float(bmo_norm(w.density, w))
    checks = {
        "bmo_w <= 2": bmo_w <= 2.0 * (1 + 1e-12),
        "bmo_w <= 2 norm_pi": bmo_w <= 2.0 * norm_pi * (1 + 1e-12),
        "N_S^2 <= 1 + 2 N_Pi": ns2 <= (1 + 2 * norm_pi) * (1 + delta),
    }
    return SweepRow(alpha, char, norm_pi, math.sqrt(ns2), bmo_w, all(checks.values()), checks)


def fit_exponent(x: Sequence[float], y: Sequence[float]) -> dict:
    """Least-squares slope of log y against log x, with residual and a 95% band."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    keep = (x > 0) & (y > 0)
    lx, ly = np.log(x[keep]), np.log(y[keep])
    if len(lx) < 2 or np.ptp(lx) == 0:
        return {"slope": float("nan"), "intercept": float("nan"), "residual": float("nan"), "stderr": float("nan")}
    design = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, *_ = np.linalg.lstsq(design, ly, rcond=None)
    fitted = design @ coef
    rss = float(np.sum((ly - fitted) ** 2))
    dof = max(len(lx) - 2, 1)
    stderr = math.sqrt(rss / dof / float(np.sum((lx - lx.mean()) ** 2)))
    return {"slope": float(coef[0]), "intercept": float(coef[1]), "residual": math.sqrt(rss / len(lx)),
            "stderr": stderr, "band95": [float(coef[0] - 1.96 * stderr), float(coef[0] + 1.96 * stderr)]}


@dataclass
class SweepResult:
    rows: list[SweepRow]
    fit: dict

    @property
    def ok(self) -> bool:
        return all(r.bounds_ok for r in self.rows)

    @property
    def char_span(self) -> float:
        chars = [r.ap_char for r in self.rows]
        return max(chars) / min(chars) if chars else float("nan")

    def to_csv(self) -> str:
        return "\n".join([SWEEP_HEADER] + [r.csv() for r in self.rows]) + "\n"

    def summary(self) -> dict:
        return {"rows": len(self.rows), "all_rows_ok": self.ok, "ap_char_span": self.char_span,
                "fit": self.fit, "report_only": True}


def sharpness_sweep(alphas: Sequence[float], depth: int, n: int = 1, **kw) -> SweepResult:
    for a in alphas:
        if not -0.95 < a < 0.95:
            raise ModelError(f"alpha {a} outside (-0.95, 0.95)")
    rows = [sweep_row(float(a), depth, n, **kw) for a in alphas]
    fit = fit_exponent([r.ap_char for r in rows], [r.norm_pi for r in rows])
    return SweepResult(rows, fit)
