"""The canonical verification suites driven by the CLI and the acceptance tests.

Every suite takes a validated configuration dictionary and draws all of its
randomness from one generator seeded by ``cfg["seed"]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional

import numpy as np

from . import grid
from .core import (CubeId, DyadicModel, ModelError, StepFunction, analyze, haar_function,
                   random_step_function, synthesize)
from .domination import DominationResult, dominate_bilinear, dominate_paraproduct, oscillation_domination
from .norms import (NormEstimate, SweepResult, composition_operator, identity_operator, martingale_operator,
                    operator_norm_lp, operator_norm_p2, operator_norm_svd, paraproduct_operator,
                    sharpness_sweep, sparse_operator_op, verify_bloom_sparse_bound)
from .paraproducts import (blasco_multiplier, composition, haar_multiplier_form, paraproduct_gamma,
                           paraproduct_pi, paraproduct_pi_star, product_decomposition_check,
                           spm_decomposition_check, square_function)
from .report import VerificationReport, environment
from .sparse import (SparseCollection, TauSequence, chain_sparse, generations, martingale_transform, random_sparse,
                     sparse_bmo_function, sparse_haar_function, sparse_operator, tau_sequence)
from .weights import (BloomTriple, Weight, ap_value, bmo_norm, lq_norm, power_weight, random_weight,
                      weight_from_spec, weighted_maximal)

FLOAT_TOL = 1e-10
BOUND_RTOL = 1e-9


def model_of(cfg: Mapping) -> DyadicModel:
    return DyadicModel(int(cfg["model"]["n"]), int(cfg["model"]["D"]))


def rng_of(cfg: Mapping) -> np.random.Generator:
    return np.random.default_rng(int(cfg.get("seed", 0)))


def is_exact(cfg: Mapping) -> bool:
    return cfg.get("mode", "float") == "rational"


def _new_report(title: str, cfg: Mapping) -> VerificationReport:
    return VerificationReport(title, meta={"seed": cfg.get("seed", 0), "model": dict(cfg["model"]),
                                           "mode": cfg.get("mode"), "environment": environment()})


# builders --------------------------------------------------------------------


def build_weights(cfg: Mapping, model: DyadicModel, rng: np.random.Generator, exact: bool = False) -> dict[str, Weight]:
    out: dict[str, Weight] = {}
    specs = dict(cfg.get("weights", {}))
    pending = [k for k, v in specs.items() if v.get("kind") != "inverse"]
    for name in pending:
        out[name] = weight_from_spec(model, specs[name], exact=exact, rng=rng)
    for name, spec in specs.items():
        if spec.get("kind") == "inverse":
            if spec["of"] not in out:
                raise ModelError(f"weights.{name}: unknown weight {spec['of']!r}")
            out[name] = out[spec["of"]].power(-1.0)
    return out


def build_sparse(cfg: Mapping, model: DyadicModel, rng: np.random.Generator) -> SparseCollection:
    spec = cfg.get("sparse", {"kind": "random", "target_lambda": 2.0})
    kind = spec["kind"]
    if kind == "explicit":
        return SparseCollection(model, [CubeId.from_json(c) for c in spec["cubes"]])
    if kind == "chain":
        return chain_sparse(model, spec.get("length"))
    src = np.random.default_rng(spec["seed"]) if "seed" in spec else rng
    return random_sparse(model, src, float(spec.get("target_lambda", 2.0)))


def _parse_value(v, exact: bool):
    return Fraction(v) if exact else float(Fraction(v)) if isinstance(v, str) else float(v)


def build_function(spec: Mapping, model: DyadicModel, rng: np.random.Generator, exact: bool,
                   weights: Mapping[str, Weight], sparse: Optional[SparseCollection]) -> StepFunction:
    kind = spec["kind"]
    if kind == "random":
        src = np.random.default_rng(spec["seed"]) if "seed" in spec else rng
        if "sigma" in spec:
            if exact:
                raise ModelError("lognormal functions are only available in float mode")
            return heavy_tailed(model, src, float(spec["sigma"]))
        return random_step_function(model, src, exact)
    if kind == "cells":
        return StepFunction(model, [_parse_value(v, exact) for v in spec["values"]], exact)
    if kind == "constant":
        return StepFunction.constant(model, _parse_value(spec["value"], exact), exact)
    if kind == "weight":
        w = weights[spec["name"]]
        return w.density.to_exact() if exact else w.density.to_float()
    if kind == "haar":
        cube = CubeId.from_json(spec["cube"])
        sig = tuple(spec.get("sig", [0] * model.n))
        return haar_function(model, cube, sig, exact)
    if kind == "sparse_bmo":
        if sparse is None:
            raise ModelError("sparse_bmo function needs a sparse collection")
        w = weights.get(spec["weight"]) if "weight" in spec else None
        b = sparse_bmo_function(sparse, w, exact=exact)
        noise = float(spec.get("noise", 0.0))
        if noise > 0:
            if exact:
                raise ModelError("noise is only available in float mode")
            b = b + StepFunction(model, noise * rng.standard_normal(model.num_cells))
        return b
    raise ModelError(f"unknown function kind {kind!r}")


# helpers ---------------------------------------------------------------------


def heavy_tailed(model: DyadicModel, rng: np.random.Generator, sigma: float = 2.0) -> StepFunction:
    """Random signs times lognormal magnitudes exp(sigma Z)."""
    signs = rng.choice([-1.0, 1.0], size=model.num_cells)
    return StepFunction(model, signs * np.exp(sigma * rng.standard_normal(model.num_cells)))


def _inner(f: StepFunction, g: StepFunction):
    return (f * g).integral()


def _same(rep: VerificationReport, name: str, lhs, rhs, exact: bool) -> None:
    if isinstance(lhs, StepFunction):
        err = lhs.max_abs_diff(rhs)
        scale = max(1.0, float(np.max(np.abs(grid.to_float(lhs.values)))))
    else:
        err = abs(lhs - rhs)
        scale = max(1.0, abs(float(lhs)))
    ok = err == 0 if exact else float(err) <= FLOAT_TOL * scale
    rep.add(name, ok, error=err, kind="exact")


def _bound(rep: VerificationReport, name: str, lhs: float, rhs: float, rtol: float = BOUND_RTOL) -> None:
    lhs, rhs = float(lhs), float(rhs)
    rep.add(name, lhs <= rhs * (1 + rtol) + 1e-300, lhs=lhs, rhs=rhs, kind="bound")


def _random_cube(model: DyadicModel, rng: np.random.Generator, max_level: Optional[int] = None) -> CubeId:
    top = model.depth if max_level is None else max_level
    k = int(rng.integers(0, top + 1))
    return CubeId(k, tuple(int(x) for x in rng.integers(0, 2**k, size=model.n)))


def _below_depth(s: SparseCollection) -> SparseCollection:
    masks = [m.copy() for m in s.masks]
    masks[-1][...] = False
    if not any(m.any() for m in masks):
        masks[0][...] = True
    return SparseCollection.from_masks(s.model, masks)


# identities ------------------------------------------------------------------


def identity_draw(model: DyadicModel, rng: np.random.Generator, exact: bool, label: str = "") -> VerificationReport:
    """One draw of every exact identity of the laboratory."""
    rep = VerificationReport(f"identities {label}".strip())
    b = random_step_function(model, rng, exact)
    f = random_step_function(model, rng, exact)
    g = random_step_function(model, rng, exact)
    s = random_sparse(model, rng, float(rng.uniform(1.5, 3.0)))
    w = random_weight(model, rng, 1.0, exact=exact)
    zero_mean = f - StepFunction.constant(model, f.average(model.root), exact)

    _same(rep, "analyze/synthesize round trip", synthesize(analyze(f)), f, exact)
    _same(rep, "Plancherel", analyze(f).energy(), _inner(f, f), exact)
    rep.extend(product_decomposition_check(b, f), prefix="product decomposition")
    rep.extend(spm_decomposition_check(s, w, f), prefix="sparse operator decomposition (weighted)")
    rep.extend(spm_decomposition_check(s, None, f), prefix="sparse operator decomposition (unit)")
    _same(rep, "Haar multiplier form on mean-zero f", haar_multiplier_form(s, w, exact=exact).apply(zero_mean),
          sparse_operator(s, zero_mean, w), exact)
    blasco = paraproduct_pi(b, zero_mean) + paraproduct_pi_star(b, zero_mean)
    if model.n >= 2:
        blasco = blasco + paraproduct_gamma(b, zero_mean)
    _same(rep, "Blasco multiplier on mean-zero f", blasco_multiplier(b).apply(zero_mean), blasco, exact)

    st = _below_depth(s)
    bt = sparse_haar_function(st)
    if not exact:
        bt = bt.to_float()
    comp = composition(bt, bt, f)
    scale = Fraction(1, 2**model.n - 1) if exact else 1.0 / (2**model.n - 1)
    _same(rep, "sparse operator as paraproduct composition", sparse_operator(st, f), comp * StepFunction.constant(model, scale, exact), exact)
    _same(rep, "composition formula equals composed operators", comp, paraproduct_pi_star(bt, paraproduct_pi(bt, f)), exact)
    _same(rep, "composition symmetry", composition(b, g, f), composition(g, b, f), exact)

    sq = square_function(f, w)
    _same(rep, "square function energy", sq.energy, sq.integral, exact)

    q = _random_cube(model, rng)
    one_q = StepFunction.indicator(model, q, exact)
    osc = (b - StepFunction.constant(model, b.average(q), exact)).restrict(q)
    _same(rep, "oscillation identity", (paraproduct_pi(b, one_q) - paraproduct_pi_star(b, one_q)).restrict(q), osc, exact)
    one = StepFunction.constant(model, 1, exact)
    _same(rep, "local paraproduct of 1", paraproduct_pi(b, one, q), osc, exact)

    _same(rep, "Pi/Pi* adjointness", _inner(paraproduct_pi(b, f), g), _inner(f, paraproduct_pi_star(b, g)), exact)
    if model.n >= 2:
        _same(rep, "Gamma self-adjointness", _inner(paraproduct_gamma(b, f), g), _inner(f, paraproduct_gamma(b, g)), exact)
    tau = tau_sequence(s, w, exact=exact)
    _same(rep, "martingale transform self-adjointness", _inner(martingale_transform(tau, f), g),
          _inner(f, martingale_transform(tau, g)), exact)
    return rep


def run_identities(cfg: Mapping) -> VerificationReport:
    model = model_of(cfg)
    rng = rng_of(cfg)
    exact = is_exact(cfg)
    rep = _new_report("identities", cfg)
    for i in range(int(cfg.get("draws", 50))):
        rep.extend(identity_draw(model, rng, exact), prefix=f"draw {i}")
    rep.meta["max_residual"] = max((float(c.error) for c in rep.checks if c.error is not None), default=0.0)
    return rep


# bounds ----------------------------------------------------------------------


def _draw_weight(model: DyadicModel, rng: np.random.Generator) -> Weight:
    if rng.random() < 0.5:
        return power_weight(model, float(rng.uniform(-0.9, 0.9)))
    return random_weight(model, rng, float(rng.uniform(0.2, 2.0)))


def bounds_draw(model: DyadicModel, rng: np.random.Generator, index: int) -> VerificationReport:
    """One draw of every explicit-constant inequality."""
    tag = f"draw {index}"
    rep = VerificationReport(tag)
    if index % 10 == 9:
        s = chain_sparse(model)
    else:
        s = random_sparse(model, rng, float(rng.uniform(1.2, 3.0)))
    lam_c = float(s.carleson)
    w = _draw_weight(model, rng)
    p = float(rng.uniform(1.2, 4.0))
    q = float(rng.uniform(1.2, 4.0))
    w_char = ap_value(w, p)

    b_s = sparse_bmo_function(s, exact=False)
    _bound(rep, f"{tag}: BMO norm of b_S <= Lambda", bmo_norm(b_s), lam_c)
    b_sw = sparse_bmo_function(s, w)
    _bound(rep, f"{tag}: weighted BMO norm of b_S^w <= 2 [w]_Ap Lambda^p", bmo_norm(b_sw, w), 2 * w_char * lam_c**p)

    st = _below_depth(s)
    bt = sparse_haar_function(st).to_float()
    _bound(rep, f"{tag}: BMO norm of b~_S <= sqrt((2^n - 1) Lambda)", bmo_norm(bt),
           math.sqrt((2**model.n - 1) * float(st.carleson)))

    tau_w = tau_sequence(s, w)
    ratio = max(float(np.max(t / grid.to_float(wm))) for t, wm in zip(tau_w.levels, w.level_means))
    _bound(rep, f"{tag}: tau^w_J <= [w]_Ap Lambda^p <w>_J", ratio, w_char * lam_c**p)
    tau_u = tau_sequence(s, exact=False)
    _bound(rep, f"{tag}: tau_J <= Lambda", float(tau_u.max()), lam_c)

    f = random_step_function(model, rng)
    mf = weighted_maximal(w, f)
    qc = q / (q - 1)
    _bound(rep, f"{tag}: weighted maximal function on L^q(w) <= q'", lq_norm(mf, q, w), qc * lq_norm(f, q, w))
    _bound(rep, f"{tag}: weight in its own BMO <= 2", bmo_norm(w.density, w), 2.0)

    mu, lam = _draw_weight(model, rng), _draw_weight(model, rng)
    slack = BloomTriple(mu, lam, p).holder_slack()
    _bound(rep, f"{tag}: Hoelder bound for the Bloom intermediary", 1.0, slack)

    if model.root in s:
        gen = generations(s, model.root)
        _bound(rep, f"{tag}: sum k |S_k| <= Lambda^2 |S_1|", gen.weighted_sum, gen.bound)

    # report-only Haar coefficient constant for weighted BMO
    bn = float(bmo_norm(b_sw, w))
    if bn > 0:
        c = max(float(np.max(np.abs(d) / (grid.to_float(wm)[None, ...] * bn)))
                for d, wm in zip(analyze(b_sw).scaled, w.level_means))
        rep.add(f"{tag}: Haar coefficient constant", math.isfinite(c), lhs=c, kind="report-only")
    return rep


def bloom_draw(model: DyadicModel, rng: np.random.Generator, index: int) -> VerificationReport:
    """Bloom sparse bound at p = 2 with an exact norm; every third draw uses (w, w^-1)."""
    s = random_sparse(model, rng, float(rng.uniform(1.2, 3.0)))
    if index % 3 == 0:
        mu = power_weight(model, float(rng.uniform(-0.9, 0.9)))
        lam = mu.power(-1.0)
    else:
        mu, lam = _draw_weight(model, rng), _draw_weight(model, rng)
    rep = verify_bloom_sparse_bound(s, mu, lam, 2.0)
    rep.title = f"bloom {index}"
    return rep


def run_bounds(cfg: Mapping) -> VerificationReport:
    model = model_of(cfg)
    rng = rng_of(cfg)
    rep = _new_report("bounds", cfg)
    for i in range(int(cfg.get("draws", 200))):
        rep.extend(bounds_draw(model, rng, i))
    for i in range(int(cfg.get("operation", {}).get("bloom_draws", 0))):
        rep.extend(bloom_draw(model, rng, i), prefix=f"bloom {i}")
    rep.meta["slack"] = rep.slack_summary()
    return rep


# domination ------------------------------------------------------------------


@dataclass
class DominateOutcome:
    report: VerificationReport
    results: list[DominationResult] = field(default_factory=list)


def _dominate_once(cfg: Mapping, model: DyadicModel, rng: np.random.Generator) -> DominationResult:
    op = cfg.get("operation", {})
    algorithm = op.get("algorithm", "paraproduct")
    lam = float(op.get("lambda", 2.0))
    q0 = CubeId.from_json(op["q0"]) if "q0" in op else model.root
    model.check_cube(q0)
    weights = build_weights(cfg, model, rng)
    w = weights.get("w") or Weight.unit(model)
    s = build_sparse(cfg, model, rng)
    fns = dict(cfg.get("functions", {}))
    get = lambda name, default: build_function(fns.get(name, default), model, rng, False, weights, s)
    b = get("b", {"kind": "random"})
    if algorithm == "oscillation":
        return oscillation_domination(b, w, q0, lam)
    f = get("f", {"kind": "random"})
    if algorithm == "bilinear":
        a = get("a", {"kind": "random"})
        g = get("g", {"kind": "random"})
        return dominate_bilinear(a, b, w, f, g, q0, lam)
    return dominate_paraproduct(b, w, f, q0, lam)


def run_dominate(cfg: Mapping) -> DominateOutcome:
    model = model_of(cfg)
    rng = rng_of(cfg)
    rep = _new_report("dominate", cfg)
    out = DominateOutcome(rep)
    runs = int(cfg.get("operation", {}).get("runs", 1))
    for i in range(runs):
        res = _dominate_once(cfg, model, rng)
        out.results.append(res)
        rep.extend(res.report, prefix=f"run {i}")
    rep.meta["runs"] = [{"carleson": r.measured_carleson, "empirical_constant": r.empirical_constant,
                         "chain_constant": r.chain_constant, "nodes": len(r.nodes),
                         "recursion_depth": r.recursion_depth} for r in out.results]
    return out


def depth_stability(seed: int, coarse_depth: int = 6, depths=(6, 8, 10), lam: float = 2.0,
                    algorithm: str = "paraproduct", n: int = 1, sigma: float = 2.0) -> dict:
    """Empirical constants for the same coarse data refined to several depths."""
    rng = np.random.default_rng(seed)
    coarse = DyadicModel(n, coarse_depth)
    w = power_weight(coarse, float(rng.uniform(-0.8, 0.8)))
    s = random_sparse(coarse, rng, 2.0)
    b = sparse_bmo_function(s, w) + StepFunction(coarse, 0.1 * rng.standard_normal(coarse.num_cells))
    f = heavy_tailed(coarse, rng, sigma)
    a = StepFunction(coarse, rng.standard_normal(coarse.num_cells))
    g = heavy_tailed(coarse, rng, sigma)
    out = {}
    for d in depths:
        k = d - coarse_depth
        wd = Weight(w.density.refine(k))
        bd, fd, ad, gd = (x.refine(k) for x in (b, f, a, g))
        if algorithm == "bilinear":
            res = dominate_bilinear(ad, bd, wd, fd, gd, lam=lam)
        else:
            res = dominate_paraproduct(bd, wd, fd, lam=lam)
        out[d] = res
    return out


# sharpness -------------------------------------------------------------------


def run_sharpness(cfg: Mapping) -> tuple[VerificationReport, SweepResult]:
    model = model_of(cfg)
    alphas = cfg.get("operation", {}).get("alphas", [0.3, -0.3])
    sweep = sharpness_sweep(alphas, model.depth, model.n)
    rep = _new_report("sharpness", cfg)
    for row in sweep.rows:
        for name, ok in row.checks.items():
            rep.add(f"alpha {row.alpha}: {name}", ok, kind="bound")
    rep.add("A_2 characteristic increases with |alpha|", _monotone(sweep), kind="report-only")
    rep.meta["summary"] = sweep.summary()
    return rep, sweep


def _monotone(sweep: SweepResult) -> bool:
    """Within each sign of alpha, [w] strictly increases with |alpha|."""
    for sign in (1, -1):
        rows = sorted((r for r in sweep.rows if r.alpha * sign > 0), key=lambda r: abs(r.alpha))
        if any(b.ap_char <= a.ap_char for a, b in zip(rows, rows[1:])):
            return False
    return True


# norms -----------------------------------------------------------------------


def build_operator(cfg: Mapping, model: DyadicModel, rng: np.random.Generator, weights: Mapping[str, Weight]):
    op = cfg.get("operation", {})
    kind = op.get("operator", "Pi")
    fns = dict(cfg.get("functions", {}))
    s = build_sparse(cfg, model, rng) if kind in ("sparse",) or "sparse" in cfg else None
    sym_name = op.get("symbol", "b")
    if kind == "identity":
        return identity_operator(model)
    if kind in ("Pi", "PiStar", "Gamma"):
        b = build_function(fns.get(sym_name, {"kind": "random"}), model, rng, False, weights, s)
        return paraproduct_operator(kind, b)
    if kind == "sparse":
        return sparse_operator_op(s, weights.get("nu"))
    if kind == "composition":
        a = build_function(fns.get("a", {"kind": "random"}), model, rng, False, weights, s)
        b = build_function(fns.get(sym_name, {"kind": "random"}), model, rng, False, weights, s)
        return composition_operator(a, b)
    if kind == "square":
        w = weights.get("mu") or Weight.unit(model)
        return martingale_operator(TauSequence(model, [grid.to_float(x) for x in w.level_means]))
    raise ModelError(f"unknown operator {kind!r}")


def run_norm(cfg: Mapping) -> tuple[VerificationReport, NormEstimate]:
    model = model_of(cfg)
    rng = rng_of(cfg)
    weights = build_weights(cfg, model, rng)
    mu = weights.get("mu")
    lam = weights.get("lambda")
    op_cfg = cfg.get("operation", {})
    p = float(op_cfg.get("p", 2.0))
    method = op_cfg.get("method", "auto")
    operator = build_operator(cfg, model, rng, weights)
    rep = _new_report("norm", cfg)
    if method == "svd":
        if p != 2.0:
            raise ModelError("the SVD oracle is only available at p = 2")
        est = NormEstimate(2.0, operator_norm_svd(operator, mu, lam), "svd")
    elif p == 2.0 and method in ("auto", "power"):
        est = operator_norm_p2(operator, mu, lam)
    else:
        est = operator_norm_lp(operator, mu, lam, p)
    rep.add("estimate finite", math.isfinite(est.value), lhs=est.value, kind="report-only")
    rep.meta["estimate"] = est.to_json()
    rep.meta["operator"] = operator.name
    return rep, est
