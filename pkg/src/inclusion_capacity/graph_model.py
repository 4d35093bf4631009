"""Site geometry of the underlying walk and its metastable decomposition.

A geometry is a finite set of sites with jump rates r(x, y) of a reversible
random walk.  From it we derive the max-normalised stationary measure m,
the conductances c_xy = m_x r(x, y), the condensing set S* = {m = 1}, the
two coarser partitions of S* that become connected on the second and third
time scales, and the contracted graph used by the ladder construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .errors import AssumptionViolated, NoPath, NotIrreducible, NotReversible, ParseError

STAR_TOL = 1e-12
NEAR_STAR_TOL = 1e-6


@dataclass(frozen=True)
class SiteGraph:
    sites: tuple[str, ...]
    rates: np.ndarray  # r(x, y), dense, zero diagonal
    measure: np.ndarray  # m_x with max exactly 1

    @property
    def n(self) -> int:
        return len(self.sites)

    @property
    def conductances(self) -> np.ndarray:
        c = self.measure[:, None] * self.rates
        return 0.5 * (c + c.T)

    @property
    def adjacency(self) -> np.ndarray:
        return self.rates > 0

    def index(self, name: str) -> int:
        try:
            return self.sites.index(name)
        except ValueError as exc:
            raise ParseError(f"unknown site {name!r}") from exc

    def neighbours(self, v: int) -> list[int]:
        return [int(w) for w in np.flatnonzero(self.rates[v] > 0)]

    def to_json(self) -> dict:
        rates = [[self.sites[i], self.sites[j], float(self.rates[i, j])]
                 for i in range(self.n) for j in range(self.n) if self.rates[i, j] > 0]
        measure = [[s, float(m)] for s, m in zip(self.sites, self.measure)]
        return {"sites": list(self.sites), "rates": rates, "measure": measure}


def walk_stationary_measure(rates: np.ndarray) -> np.ndarray:
    """Solve pi Q = 0 with a normalisation row appended; returns pi with max 1."""
    rates = np.asarray(rates, dtype=float)
    n = rates.shape[0]
    q = rates - np.diag(rates.sum(axis=1))
    system = np.vstack([q.T, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    return pi / pi.max()


def _check_irreducible(rates: np.ndarray) -> None:
    ncomp, _ = connected_components(csr_matrix(rates > 0), directed=True, connection="strong")
    if ncomp != 1:
        raise NotIrreducible(f"walk splits into {ncomp} strongly connected classes")


def build_site_graph(sites: Sequence[str], rates, measure=None) -> SiteGraph:
    """Validate a geometry and attach its max-normalised reversible measure.

    ``rates`` is either a dense |S|x|S| array or a mapping (x, y) -> r with
    site names as keys.  When ``measure`` is given it is checked against
    detailed balance, otherwise it is computed from the balance equations.
    Either way the result must satisfy detailed balance.
    """
    sites = tuple(str(s) for s in sites)
    if len(set(sites)) != len(sites):
        raise ParseError("duplicate site names")
    n = len(sites)
    if n < 1:
        raise ParseError("empty site list")
    pos = {s: i for i, s in enumerate(sites)}
    if isinstance(rates, Mapping):
        r = np.zeros((n, n))
        for (x, y), val in rates.items():
            if x not in pos or y not in pos:
                raise ParseError(f"rate refers to unknown site ({x}, {y})")
            r[pos[x], pos[y]] = float(val)
    else:
        r = np.array(rates, dtype=float)
        if r.shape != (n, n):
            raise ParseError(f"rate matrix has shape {r.shape}, expected {(n, n)}")
    if not np.all(np.isfinite(r)) or np.any(r < 0):
        raise ParseError("rates must be finite and nonnegative")
    if np.any(np.diag(r) != 0):
        raise ParseError("rates must have zero diagonal")
    if n > 1:
        _check_irreducible(r)

    if measure is None:
        m = walk_stationary_measure(r) if n > 1 else np.ones(1)
        tol = 1e-10
    else:
        if isinstance(measure, Mapping):
            m = np.array([float(measure[s]) for s in sites])
        else:
            m = np.array(measure, dtype=float)
        if m.shape != (n,) or np.any(m <= 0) or not np.all(np.isfinite(m)):
            raise ParseError("measure must be positive and finite on every site")
        m = m / m.max()
        tol = 1e-10
    c = m[:, None] * r
    scale = max(c.max(), 1e-300)
    if np.max(np.abs(c - c.T)) > tol * scale:
        raise NotReversible("detailed balance m_x r(x,y) = m_y r(y,x) fails")
    m = m / m.max()
    m[np.argmax(m)] = 1.0
    return SiteGraph(sites=sites, rates=r, measure=m)


def load_site_graph(path) -> SiteGraph:
    """Read the JSON geometry format ``{"sites", "rates", "measure"?}``."""
    try:
        with open(path) as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read graph file {path}: {exc}") from exc
    return site_graph_from_dict(spec)


def site_graph_from_dict(spec: dict) -> SiteGraph:
    if not isinstance(spec, dict) or "sites" not in spec or "rates" not in spec:
        raise ParseError("graph spec needs 'sites' and 'rates'")
    try:
        rates = {}
        for x, y, val in spec["rates"]:
            rates[(str(x), str(y))] = float(val)
        measure = None
        if spec.get("measure") is not None:
            measure = {str(x): float(val) for x, val in spec["measure"]}
    except (TypeError, ValueError) as exc:
        raise ParseError(f"malformed rate or measure entry: {exc}") from exc
    sites = [str(s) for s in spec["sites"]]
    if measure is not None and set(measure) != set(sites):
        raise ParseError("measure must list every site exactly once")
    return build_site_graph(sites, rates, measure)


# ---------------------------------------------------------------------------
# metastable hierarchy


@dataclass(frozen=True)
class MetastableHierarchy:
    s_star: tuple[int, ...]
    s_zero: tuple[int, ...]
    level2: tuple[tuple[int, ...], ...]
    level3: tuple[tuple[int, ...], ...]
    rij: dict = field(default_factory=dict)  # (i, j) -> R_ij over level2 blocks
    r2nd: dict = field(default_factory=dict)
    m_star: float = float("nan")
    m_star_star: float = float("nan")
    near_degenerate: tuple[int, ...] = ()

    @property
    def kappa2(self) -> int:
        return len(self.level2)

    @property
    def kappa3(self) -> int:
        return len(self.level3)

    def level3_of(self, site: int) -> int:
        for i, block in enumerate(self.level3):
            if site in block:
                return i
        raise KeyError(site)


def _components(vertices: Sequence[int], linked) -> list[tuple[int, ...]]:
    """Connected components of ``vertices`` under the symmetric predicate ``linked``."""
    vertices = list(vertices)
    seen: set[int] = set()
    comps = []
    for v in vertices:
        if v in seen:
            continue
        stack, comp = [v], []
        seen.add(v)
        while stack:
            u = stack.pop()
            comp.append(u)
            for w in vertices:
                if w not in seen and linked(u, w):
                    seen.add(w)
                    stack.append(w)
        comps.append(tuple(sorted(comp)))
    comps.sort(key=min)
    return comps


def adaptive_simpson(f, a: float, b: float, atol: float = 1e-10, max_depth: int = 40) -> float:
    """Adaptive Simpson quadrature with Richardson correction."""

    def simpson(fa, fm, fb, lo, hi):
        return (hi - lo) / 6.0 * (fa + 4.0 * fm + fb)

    def rec(lo, hi, fa, fm, fb, whole, tol, depth):
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, lo, mid)
        right = simpson(fm, frm, fb, mid, hi)
        delta = left + right - whole
        if depth <= 0 or abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        return (rec(lo, mid, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(mid, hi, fm, frm, fb, right, 0.5 * tol, depth - 1))

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    return rec(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), atol, max_depth)


def compute_Rij(g: SiteGraph, block_i: Sequence[int], block_j: Sequence[int],
                s_zero: Sequence[int] | None = None, atol: float = 1e-10) -> float:
    """Second-scale resistance between two level-two blocks (+inf if not at distance 2)."""
    if s_zero is None:
        s_zero = [v for v in range(g.n) if g.measure[v] < 1 - STAR_TOL]
    triples = [(g.rates[x, a], g.rates[y, a], g.measure[a])
               for x in block_i for y in block_j for a in s_zero
               if g.rates[x, a] > 0 and g.rates[y, a] > 0]
    if not triples:
        return float("inf")
    rx = np.array([t[0] for t in triples])
    ry = np.array([t[1] for t in triples])
    ma = np.array([t[2] for t in triples])

    def integrand(t):
        inner = 1.0 / ((1.0 - ma) * ((1.0 - t) / rx + t / ry))
        return 1.0 / inner.sum()

    return adaptive_simpson(integrand, 0.0, 1.0, atol=atol, max_depth=40)


def metastable_hierarchy(g: SiteGraph) -> MetastableHierarchy:
    m = g.measure
    s_star = tuple(int(v) for v in np.flatnonzero(m >= 1 - STAR_TOL))
    s_zero = tuple(int(v) for v in np.flatnonzero(m < 1 - STAR_TOL))
    near = tuple(int(v) for v in s_zero if m[v] >= 1 - NEAR_STAR_TOL)
    adj = g.adjacency

    level2 = _components(s_star, lambda u, w: bool(adj[u, w]))

    def distance_two(bi, bj):
        return any(adj[x, a] and adj[y, a] for x in bi for y in bj for a in s_zero)

    merged = _components(range(len(level2)), lambda i, j: distance_two(level2[i], level2[j]))
    level3 = tuple(tuple(sorted(v for i in grp for v in level2[i])) for grp in merged)
    level3 = tuple(sorted(level3, key=min))

    rij, r2nd = {}, {}
    for i in range(len(level2)):
        for j in range(len(level2)):
            if i == j:
                continue
            if j < i:
                rij[(i, j)] = rij[(j, i)]
            else:
                rij[(i, j)] = compute_Rij(g, level2[i], level2[j], s_zero)
            r2nd[(i, j)] = 0.0 if np.isinf(rij[(i, j)]) else 1.0 / (len(level2[i]) * rij[(i, j)])
    m_zero = m[list(s_zero)] if s_zero else np.array([])
    return MetastableHierarchy(
        s_star=s_star,
        s_zero=s_zero,
        level2=tuple(level2),
        level3=level3,
        rij=rij,
        r2nd=r2nd,
        m_star=float(m_zero.max()) if s_zero else float("nan"),
        m_star_star=float(m_zero.min()) if s_zero else float("nan"),
        near_degenerate=near,
    )


# ---------------------------------------------------------------------------
# contracted graph for a pair of condensing sites


@dataclass(frozen=True)
class Component:
    vertices: tuple[int, ...]  # inner sites of this component
    anchors_x: tuple[int, ...]
    anchors_y: tuple[int, ...]

    @property
    def anchors(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.anchors_x) | set(self.anchors_y)))


@dataclass(frozen=True)
class ContractedGraph:
    graph: SiteGraph
    x: int
    y: int
    nbr_x: tuple[int, ...]  # sites of S0 adjacent to x
    nbr_y: tuple[int, ...]
    inner: tuple[int, ...]  # S0 minus both neighbourhoods
    anchors_x: tuple[int, ...]
    anchors_y: tuple[int, ...]
    xy_edge: bool  # some site next to x touches some site next to y
    components: tuple[Component, ...]

    @property
    def vertices(self) -> tuple[int, ...]:
        return (self.x,) + self.inner + (self.y,)

    def component_of(self, v: int) -> int:
        for j, comp in enumerate(self.components):
            if v in comp.vertices:
                return j
        raise KeyError(v)

    def side_weight(self, v: int, side: str = "both") -> float:
        """sum over a in the chosen neighbourhoods of c_av / (1 - m_a)."""
        g = self.graph
        c = g.conductances
        pool = {"x": self.nbr_x, "y": self.nbr_y, "both": self.nbr_x + self.nbr_y}[side]
        return float(sum(c[a, v] / (1.0 - g.measure[a]) for a in pool))


def contract_graph(g: SiteGraph, x: int, y: int, hierarchy: MetastableHierarchy | None = None) -> ContractedGraph:
    """Contract x with its S0-neighbours and y with its S0-neighbours."""
    hierarchy = hierarchy or metastable_hierarchy(g)
    if set(hierarchy.s_star) != {x, y}:
        raise AssumptionViolated("the construction needs S* to be exactly the chosen pair")
    adj = g.adjacency
    if adj[x, y]:
        raise AssumptionViolated("x and y are adjacent")
    s_zero = hierarchy.s_zero
    nbr_x = tuple(a for a in s_zero if adj[x, a])
    nbr_y = tuple(b for b in s_zero if adj[y, b])
    if set(nbr_x) & set(nbr_y):
        raise AssumptionViolated("x and y are at graph distance two")
    if not nbr_x or not nbr_y:
        raise AssumptionViolated("x or y has no neighbour in S0")
    inner = tuple(v for v in s_zero if v not in nbr_x and v not in nbr_y)
    anchors_x = tuple(v for v in inner if any(adj[a, v] for a in nbr_x))
    anchors_y = tuple(v for v in inner if any(adj[b, v] for b in nbr_y))
    xy_edge = any(adj[a, b] for a in nbr_x for b in nbr_y)
    comps = []
    for verts in _components(inner, lambda u, w: bool(adj[u, w])):
        comps.append(Component(
            vertices=verts,
            anchors_x=tuple(v for v in verts if v in anchors_x),
            anchors_y=tuple(v for v in verts if v in anchors_y),
        ))
    return ContractedGraph(
        graph=g, x=x, y=y, nbr_x=nbr_x, nbr_y=nbr_y, inner=inner,
        anchors_x=anchors_x, anchors_y=anchors_y, xy_edge=xy_edge,
        components=tuple(comps),
    )


def shortest_site_path(g: SiteGraph, x: int, y: int) -> list[int]:
    """Shortest path x -> y in the site graph, ties broken lexicographically."""
    hops = shortest_path(csr_matrix(g.adjacency.astype(float)), unweighted=True, indices=[y])[0]
    if not np.isfinite(hops[x]):
        raise NoPath(f"no path between {g.sites[x]} and {g.sites[y]}")
    path = [x]
    while path[-1] != y:
        v = path[-1]
        path.append(min(w for w in g.neighbours(v) if hops[w] == hops[v] - 1))
    return path
