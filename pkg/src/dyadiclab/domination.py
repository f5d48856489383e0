"""Constructive sparse domination of restricted paraproducts and of the
bilinear form of paraproduct compositions.

Each recursion node works on the cells of its cube as a model of its own:
scaled Haar coefficients, averages and BMO norms over subcubes are
unchanged by that rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import grid
from .core import CubeId, DyadicModel, ModelError, StepFunction, analyze
from .paraproducts import maximal_truncation, paraproduct_pi
from .report import VerificationReport
from .sparse import SparseCollection, sparse_bilinear_form, sparse_operator
from .weights import Weight, bmo_good_function, bmo_norm, dyadic_maximal, stopping_cubes_array

TAGS = ("1a", "1b", "2a", "2b.i", "2b.ii")
RTOL = 1e-9


def epsilon_for(lam: float) -> float:
    if not lam > 1:
        raise ModelError("Carleson target must exceed 1")
    return (lam - 1.0) / lam


# cube bookkeeping on a node's local grid -------------------------------------


def maximal_cubes_in(mask: np.ndarray, n: int) -> list[tuple[int, tuple[int, ...]]]:
    """Maximal strict subcubes of the array's root made entirely of True cells."""
    side = mask.shape[-1]
    depth = side.bit_length() - 1
    covered = np.zeros((1,) * n, dtype=bool)
    out = []
    counts = mask.astype(np.int64)
    for k in range(1, depth + 1):
        covered = grid.upsample(covered, n, 2)
        full = grid.block_sum(counts, n, 2**k) == (side // 2**k) ** n
        hit = full & ~covered
        for idx in zip(*np.nonzero(hit)):
            out.append((k, tuple(int(i) for i in idx)))
        covered = covered | hit
    return out


def cover_levels(cubes: list[tuple[int, tuple[int, ...]]], n: int, side: int) -> np.ndarray:
    """Per cell, the level of the (disjoint) cube containing it, or -1."""
    out = np.full((side,) * n, -1, dtype=np.int64)
    for k, pos in cubes:
        out[grid.sub_slices(side, k, pos)] = k
    return out


def cube_masks(cubes: list[tuple[int, tuple[int, ...]]], n: int, side: int) -> list[np.ndarray]:
    """Per level, which cubes lie inside one of the given disjoint cubes."""
    cell = cover_levels(cubes, n, side) >= 0
    depth = side.bit_length() - 1
    return [grid.block_sum(cell.astype(np.int64), n, 2**k) == (side // 2**k) ** n for k in range(depth + 1)]


def _pi_masked(db: list[np.ndarray], fm: list[np.ndarray], keep: list[np.ndarray], n: int, depth: int) -> np.ndarray:
    """Cells of sum over kept cubes Q of (b, h_Q) <f>_Q h_Q."""
    total = np.zeros((2**depth,) * n)
    for k, d in enumerate(db):
        coeff = np.where(keep[k][None, ...], d * fm[k][None, ...], 0.0)
        total = total + grid.difference_on_cells(coeff, n, depth)
    return total


def _to_global(base: CubeId, rel_level: int, rel_pos: tuple[int, ...]) -> CubeId:
    return CubeId(base.level + rel_level, tuple(p * 2**rel_level + r for p, r in zip(base.pos, rel_pos)))


def _local(fn: StepFunction, cube: CubeId) -> StepFunction:
    sub = DyadicModel(fn.model.n, fn.model.depth - cube.level)
    return StepFunction._wrap(sub, np.array(grid.to_float(fn.on_cube(cube))))


# results ---------------------------------------------------------------------


@dataclass
class NodeDiagnostics:
    cube: CubeId
    depth: int
    c0: float = 0.0
    good_bmo: float = 0.0
    good_bmo_bound: float = 0.0
    e_measure: float = 0.0
    f_measure: float = 0.0
    child_measure: float = 0.0
    epsilon: float = 0.0
    children: int = 0
    recursion_ratio: float = 0.0
    tag_counts: dict = field(default_factory=dict)
    local_constant: float = 0.0
    leaf_reason: Optional[str] = None

    def to_json(self) -> dict:
        out = dict(self.__dict__)
        out["cube"] = self.cube.to_json()
        return out


@dataclass
class DominationResult:
    collection: SparseCollection
    target_lambda: float
    measured_carleson: float
    empirical_constant: float
    recursion_depth: int
    nodes: list[NodeDiagnostics]
    report: VerificationReport
    chain_constant: float = 0.0
    lhs: Optional[np.ndarray] = None
    rhs: Optional[np.ndarray] = None

    @property
    def ok(self) -> bool:
        return self.report.ok

    @property
    def per_level(self) -> dict[int, dict]:
        out: dict[int, dict] = {}
        for nd in self.nodes:
            row = out.setdefault(nd.cube.level, {"nodes": 0, "max_c0": 0.0, "max_child_fraction": 0.0})
            row["nodes"] += 1
            row["max_c0"] = max(row["max_c0"], nd.c0)
            frac = nd.child_measure / float(nd.cube.volume)
            row["max_child_fraction"] = max(row["max_child_fraction"], frac)
        return out

    def to_json(self) -> dict:
        return {
            "target_lambda": self.target_lambda,
            "measured_carleson": self.measured_carleson,
            "empirical_constant": self.empirical_constant,
            "chain_constant": self.chain_constant,
            "recursion_depth": self.recursion_depth,
            "collection": self.collection.to_json(),
            "per_level": {str(k): v for k, v in sorted(self.per_level.items())},
            "nodes": [nd.to_json() for nd in self.nodes],
            "report": self.report.to_json(),
        }

    def pointwise_csv(self) -> str:
        rows = ["cell_index,lhs,rhs"]
        for i, (l, r) in enumerate(zip(self.lhs.reshape(-1), self.rhs.reshape(-1))):
            rows.append(f"{i},{l!r},{r!r}")
        return "\n".join(rows) + "\n"


def _select_c0(ratio: np.ndarray, eps: float) -> float:
    """Smallest attained ratio c with #{ratio > c} <= floor((eps/2) * #cells)."""
    flat = np.sort(ratio.reshape(-1))[::-1]
    k_max = int(np.floor(eps / 2.0 * flat.size))
    return float(flat[min(k_max, flat.size - 1)])


# paraproduct domination ------------------------------------------------------


def _paraproduct_node(b: StepFunction, w: Weight, f: StepFunction, node: CubeId, eps: float,
                      rep: VerificationReport) -> tuple[NodeDiagnostics, list[CubeId]]:
    model = b.model
    n = model.n
    if node.level == model.depth:
        return NodeDiagnostics(node, node.level, epsilon=eps, leaf_reason="cell"), []
    bl, fl = _local(b, node), _local(f, node)
    wl = Weight(_local(w.density, node))
    sub = bl.model
    side, depth = sub.side, sub.depth
    nd = NodeDiagnostics(node, node.level, epsilon=eps)
    abs_f = abs(fl)
    f_avg = float(abs_f.average(sub.root))
    if f_avg == 0.0:
        nd.leaf_reason = "f vanishes"
        return nd, []
    if np.ptp(bl.grid) == 0:
        # every paraproduct term below this node vanishes
        nd.leaf_reason = "symbol constant"
        return nd, []

    w_avg = float(wl.average(sub.root))
    e_cubes = stopping_cubes_array(wl.density.grid, n, (2.0 / eps) * w_avg)
    e_cube_ids = [_to_global(sub.root, k, p) for k, p in e_cubes]
    a = bmo_good_function(bl, sub.root, e_cube_ids)
    a_norm = float(bmo_norm(a))
    nd.good_bmo = a_norm

    # F from the maximal truncation of Pi_a and the local maximal function
    m_ratio = dyadic_maximal(fl).grid / f_avg
    ratio = m_ratio
    if a_norm > 0:
        trunc = maximal_truncation(a, fl).grid
        ratio = np.maximum(ratio, trunc / (a_norm * f_avg))
    c0 = _select_c0(ratio, eps)
    nd.c0 = c0
    in_f = ratio > c0
    f_cubes = maximal_cubes_in(in_f, n)
    e_cells = cover_levels(e_cubes, n, side)
    in_e = e_cells >= 0
    g_cubes = maximal_cubes_in(in_e | in_f, n)
    nd.e_measure = float(in_e.mean()) * float(node.volume)
    nd.f_measure = float(in_f.mean()) * float(node.volume)
    g_cells = cover_levels(g_cubes, n, side)
    nd.child_measure = float((g_cells >= 0).mean()) * float(node.volume)
    nd.children = len(g_cubes)

    tag = f"node {node}"
    rep.add(f"{tag}: E packing", nd.e_measure < eps / 2 * float(node.volume) or not e_cubes,
            lhs=nd.e_measure, rhs=eps / 2 * float(node.volume))
    rep.add(f"{tag}: F packing", nd.f_measure <= eps / 2 * float(node.volume) + 1e-15,
            lhs=nd.f_measure, rhs=eps / 2 * float(node.volume))
    rep.add(f"{tag}: child packing", nd.child_measure <= eps * float(node.volume) + 1e-15,
            lhs=nd.child_measure, rhs=eps * float(node.volume))

    # exact splitting 1_Q Pi_{b,Q} f = Pi_a f + sum_{R in E} Pi_{b,R} f
    db = analyze(bl).scaled
    fm = fl.level_means
    pi_full = paraproduct_pi(bl, fl).grid
    pi_a = paraproduct_pi(a, fl).grid
    inside_e = _pi_masked(db, fm, cube_masks(e_cubes, n, side), n, depth)
    scale = max(1.0, float(np.max(np.abs(pi_full))))
    err = float(np.max(np.abs(pi_full - pi_a - inside_e)))
    rep.add(f"{tag}: good/bad splitting", err <= RTOL * scale, error=err)

    # recursion inequality with the dimensional factor 2^n
    children_part = np.abs(_pi_masked(db, fm, cube_masks(g_cubes, n, side), n, depth))
    head = (2**n) * c0 * a_norm * f_avg
    lhs = np.abs(pi_full)
    excess = lhs - head - children_part
    ok = bool(np.all(excess <= RTOL * (head + children_part + 1.0)))
    denom = head if head > 0 else 1.0
    nd.recursion_ratio = float(np.max((lhs - children_part) / denom)) if head > 0 else 0.0
    rep.add(f"{tag}: recursion inequality", ok, error=float(np.max(excess)))
    if head > 0:
        nd.local_constant = (2**n) * c0 * a_norm / w_avg

    # case tree: every cell gets exactly one tag and the claimed R_0 lies in G
    f_cells = cover_levels(f_cubes, n, side)
    tags = np.full(in_f.shape, "", dtype=object)
    tags[~in_f & in_e] = "1a"
    tags[~in_f & ~in_e] = "1b"
    p_lvl = f_cells
    case2 = in_f
    p_hits_e = np.zeros_like(in_f)
    for k, pos in f_cubes:
        sl = grid.sub_slices(side, k, pos)
        p_hits_e[sl] = in_e[sl].any()
    tags[case2 & ~p_hits_e] = "2a"
    inside_s0 = case2 & p_hits_e & (e_cells >= 0) & (e_cells <= p_lvl)
    tags[inside_s0] = "2b.ii"
    tags[case2 & p_hits_e & ~inside_s0] = "2b.i"
    nd.tag_counts = {t: int(np.sum(tags == t)) for t in TAGS}
    rep.add(f"{tag}: case tags partition", sum(nd.tag_counts.values()) == tags.size and not np.any(tags == ""))
    r0_ok = np.ones(in_f.shape, dtype=bool)
    r0_ok[tags == "1a"] = (g_cells == e_cells)[tags == "1a"]
    sel = (tags == "2a") | (tags == "2b.i")
    r0_ok[sel] = (g_cells == f_cells)[sel]
    sel = tags == "2b.ii"
    r0_ok[sel] = (g_cells == e_cells)[sel]
    rep.add(f"{tag}: R0 in G", bool(np.all(r0_ok)))

    return nd, [_to_global(node, k, p) for k, p in g_cubes]


def dominate_paraproduct(b: StepFunction, w: Weight, f: StepFunction, q0: Optional[CubeId] = None,
                         lam: float = 2.0, max_nodes: int = 200000) -> DominationResult:
    """Build S(Q0) with Carleson constant at most ``lam`` and verify the pointwise bound."""
    eps = epsilon_for(lam)
    model = b.model
    q0 = q0 or model.root
    model.check_cube(q0)
    b, f = b.to_float(), f.to_float()
    w = w.to_float()
    rep = VerificationReport("paraproduct domination", meta={"n": model.n, "depth": model.depth, "lambda": lam})
    nodes: list[NodeDiagnostics] = []
    stack = [q0]
    chosen = []
    while stack:
        node = stack.pop()
        chosen.append(node)
        nd, kids = _paraproduct_node(b, w, f, node, eps, rep)
        nodes.append(nd)
        stack.extend(reversed(kids))
        if len(nodes) > max_nodes:
            raise RuntimeError("recursion did not terminate")
    coll = SparseCollection(model, chosen)
    carleson = float(coll.carleson)
    rep.add("Carleson constant", carleson <= lam + 1e-12, lhs=carleson, rhs=lam)

    pi = paraproduct_pi(b, f, q0).grid
    b_norm = float(bmo_norm(b, w, base=q0))
    sparse = sparse_operator(coll, abs(f), w).grid
    rhs_unit = b_norm * sparse
    lhs = np.abs(pi)
    pos = rhs_unit > 0
    rep.add("zero sparse side forces zero paraproduct", bool(np.all(lhs[~pos] <= 1e-12)))
    c_emp = float(np.max(lhs[pos] / rhs_unit[pos])) if pos.any() else 0.0
    rep.add("empirical constant finite", bool(np.isfinite(c_emp)), lhs=c_emp)
    chain = max([nd.local_constant for nd in nodes] + [0.0]) / b_norm if b_norm > 0 else 0.0
    rep.add("empirical constant within recursion chain bound", c_emp <= chain * (1 + RTOL) + 1e-12,
            lhs=c_emp, rhs=chain)
    depth = max(nd.cube.level for nd in nodes) - q0.level
    return DominationResult(coll, lam, carleson, c_emp, depth, nodes, rep, chain, lhs, c_emp * rhs_unit)


def oscillation_domination(b: StepFunction, w: Weight, q0: Optional[CubeId] = None, lam: float = 2.0) -> DominationResult:
    """Dominate |b - <b>_Q0| 1_Q0 by a multiple of ||b||_BMO(w) b^w_S through Pi_{b,Q0} 1."""
    model = b.model
    q0 = q0 or model.root
    one = StepFunction.constant(model, 1.0)
    res = dominate_paraproduct(b, w, one, q0, lam)
    bf = b.to_float()
    osc = (bf - StepFunction.constant(model, float(bf.average(q0)))).restrict(q0)
    pi = paraproduct_pi(bf, one, q0)
    err = float(osc.max_abs_diff(pi))
    res.report.add("Pi_{b,Q0} 1 equals the local oscillation", err <= 1e-10 * max(1.0, float(np.max(np.abs(osc.values)))),
                   error=err)
    return res


# bilinear domination ---------------------------------------------------------


def _bilinear_node(a: StepFunction, b: StepFunction, w: Weight, f: StepFunction, g: StepFunction,
                   node: CubeId, eps: float, rep: VerificationReport) -> tuple[NodeDiagnostics, list[CubeId], float]:
    n = a.model.n
    if node.level == a.model.depth:
        return NodeDiagnostics(node, node.level, epsilon=eps, leaf_reason="cell"), [], 0.0
    al, bl, fl, gl = (_local(x, node) for x in (a, b, f, g))
    wl = Weight(_local(w.density, node))
    sub = al.model
    side, depth = sub.side, sub.depth
    nd = NodeDiagnostics(node, node.level, epsilon=eps)
    af, ag = abs(fl), abs(gl)
    fa, ga, wa = (float(x.average(sub.root)) for x in (af, ag, wl.density))
    if fa == 0.0 or ga == 0.0:
        nd.leaf_reason = "f or g vanishes"
        return nd, [], 0.0
    if np.ptp(al.grid) == 0 or np.ptp(bl.grid) == 0:
        nd.leaf_reason = "symbol constant"
        return nd, [], 0.0
    thr = 3.0 / eps
    e1 = stopping_cubes_array(af.grid, n, thr * fa)
    e2 = stopping_cubes_array(ag.grid, n, thr * ga)
    e3 = stopping_cubes_array(wl.density.grid, n, thr * wa)
    b_tilde = bmo_good_function(bl, sub.root, [_to_global(sub.root, k, p) for k, p in e3])
    nd.good_bmo = float(bmo_norm(b_tilde))
    union = (cover_levels(e1, n, side) >= 0) | (cover_levels(e2, n, side) >= 0) | (cover_levels(e3, n, side) >= 0)
    e_cubes = maximal_cubes_in(union, n)
    nd.e_measure = float(union.mean()) * float(node.volume)
    nd.child_measure = nd.e_measure
    nd.children = len(e_cubes)
    tag = f"node {node}"
    for name, coll in (("E1", e1), ("E2", e2), ("E3", e3)):
        meas = float((cover_levels(coll, n, side) >= 0).mean())
        rep.add(f"{tag}: {name} packing", meas <= eps / 3 + 1e-15, lhs=meas, rhs=eps / 3)
    rep.add(f"{tag}: child packing", nd.child_measure <= eps * float(node.volume) + 1e-15,
            lhs=nd.child_measure, rhs=eps * float(node.volume))

    # sum over Q inside the node, split into Q not inside E and the E subtrees
    da, db = analyze(al).scaled, analyze(bl).scaled
    dbt = analyze(b_tilde).scaled
    fm, gm = fl.level_means, gl.level_means
    afm, agm = af.level_means, ag.level_means
    inside = cube_masks(e_cubes, n, side)
    full_sum = 0.0
    bad_sum = 0.0
    local_abs = 0.0
    coeff_ok = True
    for k in range(depth):
        vol = 2.0 ** (-n * k)
        prod = (da[k] * db[k]).sum(axis=0) * fm[k] * gm[k] * vol
        full_sum += float(prod.sum())
        bad_sum += float(prod[inside[k]].sum())
        keep = ~inside[k]
        local_abs += float(((np.abs(da[k]) * np.abs(db[k])).sum(axis=0) * afm[k] * agm[k] * vol)[keep].sum())
        coeff_ok &= bool(np.allclose(db[k][:, keep], dbt[k][:, keep], rtol=0, atol=1e-12))
    rep.add(f"{tag}: b~ coefficients agree outside E3", coeff_ok)
    a_norm = float(bmo_norm(al))
    scale_term = a_norm * fa * ga * wa * float(node.volume)
    # every Q outside E sees averages at most 3/eps times the node averages
    rep.add(f"{tag}: averages controlled outside E", _averages_controlled(afm, agm, inside, thr * fa, thr * ga))
    nd.local_constant = local_abs / scale_term if scale_term > 0 else (0.0 if local_abs == 0 else np.inf)
    good_part = full_sum - bad_sum
    rep.add(f"{tag}: local sum bounded by its absolute series", abs(good_part) <= local_abs * (1 + RTOL) + 1e-15,
            lhs=abs(good_part), rhs=local_abs)
    return nd, [_to_global(node, k, p) for k, p in e_cubes], local_abs


def _averages_controlled(afm, agm, inside, tf, tg) -> bool:
    for k in range(1, len(inside)):
        keep = ~inside[k]
        if np.any(afm[k][keep] > tf * (1 + 1e-12)) or np.any(agm[k][keep] > tg * (1 + 1e-12)):
            return False
    return True


def dominate_bilinear(a: StepFunction, b: StepFunction, w: Weight, f: StepFunction, g: StepFunction,
                      q0: Optional[CubeId] = None, lam: float = 2.0, max_nodes: int = 200000) -> DominationResult:
    """Sparse bound for sum_{Q inside Q0} (a, h_Q)(b, h_Q) <f>_Q <g>_Q."""
    eps = epsilon_for(lam)
    model = a.model
    q0 = q0 or model.root
    model.check_cube(q0)
    a, b, f, g = (x.to_float() for x in (a, b, f, g))
    w = w.to_float()
    rep = VerificationReport("bilinear domination", meta={"n": model.n, "depth": model.depth, "lambda": lam})
    nodes, chosen, stack = [], [], [q0]
    total_abs = 0.0
    while stack:
        node = stack.pop()
        chosen.append(node)
        nd, kids, local_abs = _bilinear_node(a, b, w, f, g, node, eps, rep)
        total_abs += local_abs
        nodes.append(nd)
        stack.extend(reversed(kids))
        if len(nodes) > max_nodes:
            raise RuntimeError("recursion did not terminate")
    coll = SparseCollection(model, chosen)
    carleson = float(coll.carleson)
    rep.add("Carleson constant", carleson <= lam + 1e-12, lhs=carleson, rhs=lam)

    da, db = analyze(a).scaled, analyze(b).scaled
    fm, gm = f.level_means, g.level_means
    lhs = 0.0
    for k in range(model.depth):
        if k < q0.level:
            continue
        mask = model.level_mask(q0, k)
        vol = 2.0 ** (-model.n * k)
        lhs += float(((da[k] * db[k]).sum(axis=0) * fm[k] * gm[k] * vol)[mask].sum())
    lhs = abs(lhs)
    rep.add("triangle inequality over the recursion", lhs <= total_abs * (1 + RTOL) + 1e-15, lhs=lhs, rhs=total_abs)
    a_norm = float(bmo_norm(a, base=q0))
    b_norm = float(bmo_norm(b, w, base=q0))
    form = float(sparse_bilinear_form(coll, abs(f), abs(g), w))
    denom = a_norm * b_norm * form
    if denom > 0:
        c_emp = lhs / denom
    else:
        rep.add("zero right side forces zero left side", lhs <= 1e-12, lhs=lhs)
        c_emp = 0.0
    rep.add("empirical constant finite", bool(np.isfinite(c_emp)), lhs=c_emp)
    chain = 0.0
    if a_norm > 0 and b_norm > 0:
        # local BMO norms never exceed the norm over D(Q0)
        chain = max([nd.local_constant for nd in nodes] + [0.0]) / b_norm
        rep.add("empirical constant within node constants", c_emp <= chain * (1 + RTOL) + 1e-15, lhs=c_emp, rhs=chain)
    depth = max(nd.cube.level for nd in nodes) - q0.level
    return DominationResult(coll, lam, carleson, c_emp, depth, nodes, rep, chain,
                            np.array([lhs]), np.array([c_emp * denom]))
