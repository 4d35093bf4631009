"""Ladder graphs, the truncated resolvent equation and the constant K_xy.

For one component of the inner sites (S0 minus the neighbourhoods of x and
y) the ladder has a column per anchor v and a row per level l = 1..L.
Horizontal rates couple v_l to v_{l+1}; vertical rates couple v_l to w_l
through the trace of the two-site slice chain U_l on the anchor singletons.
The resolvent (f - L) g0 = h is solved per component and g = g0 / lambda^l.

Level-l slice rates behave like m^l and the ladder rates like (m/lambda^2)^l,
so everything is carried in log domain.  Slice traces and harmonic
extensions are obtained by exact electrical reduction: the split states of
each pair form a series chain, then non-anchor singletons are removed by
Kron reduction.  build_slice/slice_trace give the explicit chain for checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import logsumexp

from .errors import BadLambda, Diverged
from .graph_model import Component, ContractedGraph
from .potential_theory import ReversibleChain, harmonic_extension, trace_rates

NEG_INF = -np.inf
DEFAULT_DEPTH = 80
MAX_DEPTH = 640
DEPTH_TOL = 1e-8
SPREAD_TOL = 1e-4


def _logaddexp_all(values) -> float:
    values = [v for v in values if v > NEG_INF]
    if not values:
        return NEG_INF
    return float(logsumexp(values))


# ---------------------------------------------------------------------------
# explicit slice chain


@dataclass
class SliceChain:
    """Two-site slice U_l of a component with its symmetric rates."""

    level: int
    vertices: tuple[int, ...]
    states: list  # ("site", v) or ("split", v, w, k): k particles on v, l-k on w
    chain: ReversibleChain

    def singleton(self, v: int) -> int:
        return self.states.index(("site", v))

    def split(self, v: int, w: int, k: int) -> int:
        if k == self.level:
            return self.singleton(v)
        if k == 0:
            return self.singleton(w)
        if v > w:
            v, w, k = w, v, self.level - k
        return self.states.index(("split", v, w, k))


def _adjacent_pairs(graph, vertices):
    c = graph.conductances
    vs = sorted(vertices)
    return [(v, w, float(c[v, w])) for i, v in enumerate(vs) for w in vs[i + 1:] if c[v, w] > 0]


def build_slice(graph, component: Component | tuple, level: int) -> SliceChain:
    """Enumerate U_l (singletons plus split states of adjacent pairs) and its rates."""
    if level < 1:
        raise ValueError("slice level must be at least 1")
    verts = tuple(sorted(component.vertices if isinstance(component, Component) else component))
    m = graph.measure
    states = [("site", v) for v in verts]
    pairs = _adjacent_pairs(graph, verts)
    for v, w, _ in pairs:
        states.extend(("split", v, w, k) for k in range(1, level))
    index = {s: i for i, s in enumerate(states)}

    def at(v, w, k):
        if k == level:
            return index[("site", v)]
        if k == 0:
            return index[("site", w)]
        return index[("split", v, w, k)]

    rows, cols, vals = [], [], []
    for v, w, c in pairs:
        for k in range(1, level + 1):
            rate = m[v] ** (k - 1) * m[w] ** (level - k) * c
            a, b = at(v, w, k), at(v, w, k - 1)
            rows += [a, b]
            cols += [b, a]
            vals += [rate, rate]
    n = len(states)
    R = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    chain = ReversibleChain.from_rates(R, np.full(n, 1.0 / n), check=False)
    return SliceChain(level=level, vertices=verts, states=states, chain=chain)


def slice_trace(sl: SliceChain, anchors) -> np.ndarray:
    """Trace rates r^l(sigma^v, sigma^w) on the anchor singletons (dense, zero diagonal)."""
    anchors = list(anchors)
    if len(anchors) <= 1:
        return np.zeros((len(anchors), len(anchors)))
    idx = [sl.singleton(v) for v in anchors]
    order = np.argsort(idx)
    tr = trace_rates(sl.chain, idx)
    # trace_rates orders W increasingly; map back to the anchor order
    R = tr.rates.toarray()
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    return R[np.ix_(inv, inv)]


def slice_extension(sl: SliceChain, anchors, values) -> np.ndarray:
    """Harmonic extension of anchor values to U_l via the generic solver."""
    idx = [sl.singleton(v) for v in anchors]
    order = np.argsort(idx)
    return harmonic_extension(sl.chain, np.asarray(idx)[order], np.asarray(values, float)[order])


# ---------------------------------------------------------------------------
# log-domain electrical reduction of the slices


class SliceNetwork:
    """Exact series/Kron reduction of the slices of one component, in log domain."""

    def __init__(self, graph, component: Component):
        self.graph = graph
        self.component = component
        self.vertices = tuple(sorted(component.vertices))
        self.anchors = component.anchors
        self.pairs = _adjacent_pairs(graph, self.vertices)
        self.log_m = np.log(graph.measure)
        self._pos = {v: i for i, v in enumerate(self.vertices)}
        self._levels: dict[int, tuple] = {}

    def _series_log_resistance(self, v, w, level):
        """Cumulative log resistances from sigma^w (k=0) to sigma_k^{vw}, k = 0..l, without 1/c."""
        k = np.arange(1, level + 1)
        terms = -(k - 1) * self.log_m[v] - (level - k) * self.log_m[w]
        cum = np.logaddexp.accumulate(terms)
        return np.concatenate([[NEG_INF], cum])

    def reduce(self, level: int):
        """(log trace matrix on anchors, elimination record) at level l."""
        if level in self._levels:
            return self._levels[level]
        n = len(self.vertices)
        LC = np.full((n, n), NEG_INF)
        for v, w, c in self.pairs:
            lr = self._series_log_resistance(v, w, level)[-1]
            i, j = self._pos[v], self._pos[w]
            LC[i, j] = LC[j, i] = np.log(c) - lr
        alive = [self._pos[v] for v in self.vertices]
        anchor_pos = {self._pos[a] for a in self.anchors}
        record = []
        for u in [p for p in list(alive) if p not in anchor_pos]:
            alive.remove(u)
            nb = [p for p in alive if LC[u, p] > NEG_INF]
            logdeg = _logaddexp_all(LC[u, nb])
            record.append((u, {p: LC[u, p] - logdeg for p in nb}))
            for a_i, p in enumerate(nb):
                for q in nb[a_i + 1:]:
                    val = LC[p, u] + LC[u, q] - logdeg
                    LC[p, q] = LC[q, p] = np.logaddexp(LC[p, q], val)
            LC[u, :] = NEG_INF
            LC[:, u] = NEG_INF
        idx = [self._pos[a] for a in self.anchors]
        log_trace = LC[np.ix_(idx, idx)].copy()
        np.fill_diagonal(log_trace, NEG_INF)
        self._levels[level] = (log_trace, record)
        return self._levels[level]

    def log_trace(self, level: int) -> np.ndarray:
        return self.reduce(level)[0]

    def extend(self, level: int, anchor_values) -> dict:
        """Singleton values of the harmonic extension, keyed by site."""
        _, record = self.reduce(level)
        vals = {self._pos[a]: float(x) for a, x in zip(self.anchors, anchor_values)}
        for u, weights in reversed(record):
            vals[u] = float(sum(np.exp(lw) * vals[p] for p, lw in weights.items()))
        return {self.vertices[p]: x for p, x in vals.items()}

    def split_value(self, level: int, singles: dict, v: int, w: int, k: int) -> float:
        """Harmonic extension at sigma_k^{vw} from the singleton values."""
        if k == level:
            return singles[v]
        if k == 0:
            return singles[w]
        lr = self._series_log_resistance(v, w, level)
        frac = np.exp(lr[k] - lr[-1])
        return singles[w] + (singles[v] - singles[w]) * frac


# ---------------------------------------------------------------------------
# ladder chain and resolvent


def legal_lambda_range(contracted: ContractedGraph) -> tuple[float, float]:
    m = contracted.graph.measure
    s_zero = [v for v in range(contracted.graph.n) if v not in (contracted.x, contracted.y)]
    m_star = max(m[v] for v in s_zero)
    return float(np.sqrt(m_star)), 1.0


def default_lambda(contracted: ContractedGraph) -> float:
    lo, hi = legal_lambda_range(contracted)
    return 0.5 * (lo + hi)


def check_lambda(contracted: ContractedGraph, lam: float) -> float:
    lo, hi = legal_lambda_range(contracted)
    if not (lo < lam < hi):
        raise BadLambda(f"lambda={lam} outside ({lo:.6g}, {hi})")
    return float(lam)


@dataclass
class LadderChain:
    """Truncated ladder of one component; rates and driving functions in log domain."""

    component: Component
    anchors: tuple[int, ...]
    depth: int
    lam: float
    s_x: np.ndarray  # per anchor, sum over N_x of c_av/(1-m_a)
    s_all: np.ndarray  # same over N_x and N_y
    log_m: np.ndarray  # per anchor
    log_horizontal: np.ndarray  # (anchor, l) for the edge v_l -- v_{l+1}, l = 1..L-1
    log_vertical: np.ndarray  # (l, anchor, anchor), l = 1..L, lambda^{-2l} r^l
    log_f: np.ndarray  # (anchor, l)
    log_h: np.ndarray  # (anchor, l)
    log_rhat: np.ndarray  # (l, anchor, anchor), untouched trace rates

    @property
    def size(self) -> int:
        return len(self.anchors) * self.depth

    def unknown(self, i: int, level: int) -> int:
        return i * self.depth + level - 1

    @property
    def horizontal(self) -> np.ndarray:
        return np.exp(self.log_horizontal)

    @property
    def vertical(self) -> np.ndarray:
        return np.exp(self.log_vertical)

    @property
    def f_l(self) -> np.ndarray:
        return np.exp(self.log_f)

    @property
    def h_l(self) -> np.ndarray:
        return np.exp(self.log_h)


def build_ladder(contracted: ContractedGraph, j: int, depth: int, lam: float,
                 network: SliceNetwork | None = None) -> LadderChain:
    if depth < 2:
        raise ValueError("ladder depth must be at least 2")
    lam = check_lambda(contracted, lam)
    comp = contracted.components[j]
    network = network or SliceNetwork(contracted.graph, comp)
    anchors = comp.anchors
    m = contracted.graph.measure
    s_x = np.array([contracted.side_weight(v, "x") for v in anchors])
    s_all = np.array([contracted.side_weight(v, "both") for v in anchors])
    log_m = np.log(np.array([m[v] for v in anchors]))
    L, ll = depth, np.log(lam)
    levels = np.arange(1, L + 1)
    with np.errstate(divide="ignore"):
        log_sx = np.log(s_x)
        log_s = np.log(s_all)

    lh = (levels[None, :-1] * log_m[:, None] - (2 * levels[None, :-1] + 1) * ll + log_s[:, None])
    rhat = np.stack([network.log_trace(l) for l in levels])
    lv = rhat - 2 * levels[:, None, None] * ll

    mm = np.exp(log_m)[:, None]
    lf = np.empty((len(anchors), L))
    lf[:, 0] = np.log(1 / lam ** 2 - mm[:, 0] / lam ** 3 + mm[:, 0] / lam ** 2) + log_s
    mid = levels[1:-1]
    lf[:, 1:-1] = (np.log((1 / lam - 1) * (1 - mm / lam)) + (mid[None, :] - 1) * log_m[:, None]
                   - (2 * mid[None, :] - 1) * ll + log_s[:, None])
    lf[:, -1] = np.log(1 / lam - 1) + (L - 1) * log_m - (2 * L - 1) * ll + log_s

    lhv = np.empty((len(anchors), L))
    lhv[:, :-1] = (np.log(1 - mm) + (levels[None, :-1] - 1) * log_m[:, None]
                   - levels[None, :-1] * ll + log_sx[:, None])
    lhv[:, -1] = (L - 1) * log_m - L * ll + log_sx
    return LadderChain(component=comp, anchors=anchors, depth=L, lam=lam, s_x=s_x, s_all=s_all,
                       log_m=log_m, log_horizontal=lh, log_vertical=lv, log_f=lf, log_h=lhv,
                       log_rhat=rhat)


@dataclass
class ResolventSolution:
    ladder: LadderChain
    network: SliceNetwork
    g: np.ndarray  # (anchor, l) for l = 0..L, column 0 is the convention g(v_0) = 0
    residual: float  # max |(f - L) g0 - h| / max h, in raw units
    scaled_residual: float  # same after the diagonal rescaling used by the solver
    _ext: dict = field(default_factory=dict, repr=False)

    @property
    def depth(self) -> int:
        return self.ladder.depth

    @property
    def anchors(self) -> tuple[int, ...]:
        return self.ladder.anchors

    @property
    def g0(self) -> np.ndarray:
        levels = np.arange(self.depth + 1)
        return self.g * self.ladder.lam ** levels[None, :]

    def g_at(self, v: int, level: int) -> float:
        return float(self.g[self.anchors.index(v), level])

    def singles(self, level: int) -> dict:
        """g_hat_l on all singleton states sigma^v of the component."""
        if level == 0:
            return {v: 0.0 for v in self.network.vertices}
        if level not in self._ext:
            self._ext[level] = self.network.extend(level, self.g[:, level])
        return self._ext[level]

    def ghat(self, level: int, v: int, w: int | None = None, k: int | None = None) -> float:
        """g_hat_l at sigma^v, or at sigma_k^{vw} (k particles on v) when w is given."""
        if level == 0:
            return 0.0
        if level > self.depth:
            raise ValueError(f"level {level} beyond ladder depth {self.depth}")
        singles = self.singles(level)
        if w is None:
            return singles[v]
        return self.network.split_value(level, singles, v, w, k)


def _scaled_system(lad: LadderChain):
    """(f - L) with rows scaled by lambda^l / m_v^{l-1} and unknowns g = g0 / lambda^l."""
    L, nA = lad.depth, len(lad.anchors)
    ll = np.log(lad.lam)
    levels = np.arange(1, L + 1)
    log_row = levels[None, :] * ll - (levels[None, :] - 1) * lad.log_m[:, None]
    log_col = np.repeat(levels[None, :] * ll, nA, axis=0)
    rows, cols, logs = [], [], []
    diag_terms = [[lad.log_f[i, l]] for i in range(nA) for l in range(L)]

    def edge(i, li, k, lk, lr):
        a, b = lad.unknown(i, li), lad.unknown(k, lk)
        rows.append(a)
        cols.append(b)
        logs.append(lr + log_row[i, li - 1] + log_col[k, lk - 1])
        diag_terms[a].append(lr)

    for i in range(nA):
        for l in range(1, L):
            lr = lad.log_horizontal[i, l - 1]
            edge(i, l, i, l + 1, lr)
            edge(i, l + 1, i, l, lr)
    for l in range(1, L + 1):
        for i in range(nA):
            for k in range(nA):
                lr = lad.log_vertical[l - 1, i, k]
                if i != k and lr > NEG_INF:
                    edge(i, l, k, l, lr)
    n = lad.size
    diag = np.array([_logaddexp_all(t) for t in diag_terms])
    flat_row = log_row.reshape(-1)
    flat_col = log_col.reshape(-1)
    M = sp.csr_matrix((-np.exp(logs), (rows, cols)), shape=(n, n))
    M = M + sp.diags(np.exp(diag + flat_row + flat_col))
    with np.errstate(over="ignore"):
        rhs = np.exp(lad.log_h.reshape(-1) + flat_row)
    return sp.csr_matrix(M), rhs, flat_row


def solve_resolvent(contracted: ContractedGraph, j: int, depth: int, lam: float,
                    network: SliceNetwork | None = None, order=None) -> ResolventSolution:
    """Solve (f^L - L^L) g0 = h^L on the ladder of component j.

    ``order`` optionally permutes the equations before the solve.
    """
    network = network or SliceNetwork(contracted.graph, contracted.components[j])
    lad = build_ladder(contracted, j, depth, lam, network)
    M, rhs, log_row = _scaled_system(lad)
    if order is not None:
        order = np.asarray(order)
        z = spla.spsolve(M[order].tocsc(), rhs[order])
    else:
        z = spla.spsolve(M.tocsc(), rhs)
    z = np.atleast_1d(z)
    res_scaled = M @ z - rhs
    log_h = lad.log_h.reshape(-1)
    h_max = float(np.exp(log_h.max())) if np.isfinite(log_h.max()) else 0.0
    raw = np.abs(res_scaled) * np.exp(-log_row)
    residual = float(raw.max() / h_max) if h_max > 0 else float(raw.max())
    scaled = float(np.abs(res_scaled).max() / max(np.abs(rhs).max(), 1e-300))
    g = np.zeros((len(lad.anchors), depth + 1))
    g[:, 1:] = z.reshape(len(lad.anchors), depth)
    return ResolventSolution(ladder=lad, network=network, g=g, residual=residual, scaled_residual=scaled)


# ---------------------------------------------------------------------------
# the constant


@dataclass
class KConstant:
    value: float
    lam: float
    depth: int
    full_formula: float  # 1/(6K) by the four-sum definition
    simplified_x: float
    simplified_y: float
    spread: float
    solutions: list = field(default_factory=list, repr=False)
    identity_residuals: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "value": self.value, "lambda": self.lam, "depth": self.depth,
            "full_formula": self.full_formula, "simplified_x": self.simplified_x,
            "simplified_y": self.simplified_y, "spread": self.spread,
            "identity_residuals": self.identity_residuals,
        }


def direct_term(contracted: ContractedGraph) -> float:
    g = contracted.graph
    c, m = g.conductances, g.measure
    return float(sum(c[a, b] / ((1 - m[a]) * (1 - m[b]))
                     for a in contracted.nbr_x for b in contracted.nbr_y))


def k_sums(contracted: ContractedGraph, solutions) -> tuple[float, float, float]:
    """(four-sum, x-side single sum, y-side single sum) for 1/(6K) at finite depth."""
    base = direct_term(contracted)
    m = contracted.graph.measure
    full, sx, sy = base, base, base
    for sol in solutions:
        L = sol.depth
        levels = np.arange(L)
        for i, v in enumerate(sol.anchors):
            mv = m[v] ** levels
            step = sol.g[i, 1:] - sol.g[i, :-1]  # g(v_{l+1}) - g(v_l), l = 0..L-1
            wx = contracted.side_weight(v, "x")
            wy = contracted.side_weight(v, "y")
            if wx > 0:
                full += wx * float(np.sum(mv * (1 - step) ** 2))
                sx += wx * float(np.sum(mv * (1 - step)))
            if wy > 0:
                full += wy * float(np.sum(mv * step ** 2))
                sy += wy * float(np.sum(mv * step))
        rh = np.exp(sol.ladder.log_rhat)  # (l, i, k)
        nA = len(sol.anchors)
        for i in range(nA):
            for k in range(i + 1, nA):
                diff = sol.g[k, 1:] - sol.g[i, 1:]
                full += float(np.sum(rh[:, i, k] * diff ** 2))
    return full, sx, sy


def _solve_all(contracted, depth, lam):
    return [solve_resolvent(contracted, j, depth, lam) for j in range(len(contracted.components))]


def compute_Kxy(contracted: ContractedGraph, lam: float | None = None, depth: int | None = None,
                max_depth: int = MAX_DEPTH, tol: float = DEPTH_TOL,
                spread_tol: float = SPREAD_TOL) -> KConstant:
    """K_xy from the truncated resolvent.

    With ``depth`` given the ladder is solved once at that depth; otherwise the
    depth starts at 80 and doubles until 1/(6K) changes by less than ``tol``
    relative or ``max_depth`` is reached.
    """
    lam = check_lambda(contracted, default_lambda(contracted) if lam is None else lam)
    if depth is not None:
        sols = _solve_all(contracted, depth, lam)
        sums = k_sums(contracted, sols)
    else:
        depth = DEFAULT_DEPTH
        sols = _solve_all(contracted, depth, lam)
        sums = k_sums(contracted, sols)
        while depth < max_depth:
            nxt = _solve_all(contracted, 2 * depth, lam)
            nsums = k_sums(contracted, nxt)
            change = abs(nsums[0] - sums[0]) / abs(nsums[0])
            depth, sols, sums = 2 * depth, nxt, nsums
            if change < tol:
                break
    full, sx, sy = sums
    spread = max(abs(full - sx), abs(full - sy), abs(sx - sy)) / abs(full)
    if spread > spread_tol:
        raise Diverged(f"K formulas disagree by {spread:.3e} at depth {depth}")
    report = verify_g_identities(contracted, sols)
    return KConstant(value=1.0 / (6.0 * full), lam=lam, depth=depth, full_formula=full,
                     simplified_x=sx, simplified_y=sy, spread=spread, solutions=sols,
                     identity_residuals={k: v for k, v in report.items() if k != "per_level"})


# ---------------------------------------------------------------------------
# identities satisfied by g


def balance_residuals(contracted: ContractedGraph, sol: ResolventSolution) -> np.ndarray:
    """Per (anchor, level) residual of the lambda-free balance identities, divided by m_v^{l-1}."""
    lad = sol.ladder
    L, nA = lad.depth, len(lad.anchors)
    m = np.exp(lad.log_m)
    out = np.zeros((nA, L))
    for i in range(nA):
        for l in range(1, L + 1):
            g = sol.g[i]
            val = (lad.s_x[i] * ((1 - m[i]) if l < L else 1.0)
                   + lad.s_all[i] * (g[l - 1] - g[l]))
            if l < L:
                val += lad.s_all[i] * m[i] * (g[l + 1] - g[l])
            for k in range(nA):
                if k != i and lad.log_rhat[l - 1, i, k] > NEG_INF:
                    w = np.exp(lad.log_rhat[l - 1, i, k] - (l - 1) * lad.log_m[i])
                    val += w * (sol.g[k, l] - g[l])
            out[i, l - 1] = val
    return out


def cross_residuals(contracted: ContractedGraph, solutions) -> np.ndarray:
    """Per level l, x-side flux minus y-side flux (both sides carry m^{l-1})."""
    m = contracted.graph.measure
    if not solutions:
        return np.zeros(0)
    L = solutions[0].depth
    out = np.zeros(L)
    for l in range(1, L + 1):
        lhs = rhs = 0.0
        for sol in solutions:
            for i, v in enumerate(sol.anchors):
                g = sol.g[i]
                lhs += contracted.side_weight(v, "x") * m[v] ** (l - 1) * (1 + g[l - 1] - g[l])
                rhs += contracted.side_weight(v, "y") * m[v] ** (l - 1) * (g[l] - g[l - 1])
        out[l - 1] = lhs - rhs
    return out


def partial_sums(contracted: ContractedGraph, solutions) -> dict:
    """Per anchor, the truncated single-sum series of the x side and y side."""
    m = contracted.graph.measure
    out = {}
    for sol in solutions:
        levels = np.arange(sol.depth)
        for i, v in enumerate(sol.anchors):
            step = sol.g[i, 1:] - sol.g[i, :-1]
            mv = m[v] ** levels
            out[v] = (float(np.sum(mv * (1 - step))), float(np.sum(mv * step)))
    return out


def verify_g_identities(contracted: ContractedGraph, solutions, depths=None, lam=None) -> dict:
    """Residuals of the balance identities, the cross identity and (optionally) depth convergence."""
    bal = max((float(np.abs(balance_residuals(contracted, s)).max()) for s in solutions), default=0.0)
    cross = cross_residuals(contracted, solutions)
    report = {
        "solver_residual": max((s.residual for s in solutions), default=0.0),
        "balance": bal,
        "cross": float(np.abs(cross).max(initial=0.0)),
        "per_level": cross.tolist(),
    }
    if depths and solutions:
        lam = solutions[0].ladder.lam if lam is None else lam
        seq = [partial_sums(contracted, _solve_all(contracted, L, lam)) for L in depths]
        diffs = []
        for a, b in zip(seq, seq[1:]):
            diffs.append(max((max(abs(a[v][0] - b[v][0]), abs(a[v][1] - b[v][1])) for v in a), default=0.0))
        report["depth_differences"] = diffs
    return report
