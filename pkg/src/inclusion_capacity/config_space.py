"""Configuration space of the inclusion process and its product measure.

Configurations are occupation vectors eta with sum N.  They are indexed in
colexicographic order of their stars-and-bars bar positions, which gives a
closed-form rank.  A particle at x jumps to y at rate eta_x (d + eta_y) r(x, y)
and the reversible measure is proportional to prod_x w(eta_x) m_x^{eta_x} with
w(n) = Gamma(d + n) / (n! Gamma(d)).  Weights are kept in log domain.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import SpaceTooLarge
from .graph_model import MetastableHierarchy, SiteGraph

DEFAULT_BUDGET = 5_000_000


def space_size(n_sites: int, n_particles: int) -> int:
    return comb(n_particles + n_sites - 1, n_sites - 1)


def log_w(n_particles: int, d: float) -> np.ndarray:
    """log w(n) for n = 0..N, with w(n) = Gamma(d+n)/(n! Gamma(d))."""
    n = np.arange(n_particles + 1, dtype=float)
    return gammaln(d + n) - gammaln(n + 1.0) - gammaln(d)


def _compositions(n_sites: int, total: int) -> np.ndarray:
    """All occupation vectors of length n_sites summing to total (unordered)."""
    if n_sites == 1:
        return np.array([[total]], dtype=np.int32)
    partial = np.arange(total + 1, dtype=np.int32)[:, None]
    for _ in range(n_sites - 2):
        used = partial.sum(axis=1)
        reps = total - used + 1
        base = np.repeat(partial, reps, axis=0)
        starts = np.cumsum(reps) - reps
        col = np.arange(base.shape[0], dtype=np.int64) - np.repeat(starts, reps)
        partial = np.hstack([base, col.astype(np.int32)[:, None]])
    last = total - partial.sum(axis=1)
    return np.hstack([partial, last[:, None].astype(np.int32)])


class Ranker:
    """Colex rank of occupation vectors via the combinatorial number system."""

    def __init__(self, n_sites: int, n_particles: int):
        self.n_sites = n_sites
        self.n_particles = n_particles
        top = n_particles + n_sites
        table = np.zeros((top + 1, n_sites + 1), dtype=np.int64)
        for p in range(top + 1):
            for k in range(min(p, n_sites) + 1):
                table[p, k] = comb(p, k)
        self._binom = table

    def rank(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(states)
        # bar i sits at position (eta_0 + ... + eta_i) + i
        bars = np.cumsum(states[:, :-1], axis=1) + np.arange(self.n_sites - 1)
        ranks = np.zeros(states.shape[0], dtype=np.int64)
        for i in range(self.n_sites - 1):
            ranks += self._binom[bars[:, i], i + 1]
        return ranks


@dataclass
class ConfigSpace:
    graph: SiteGraph
    n_particles: int
    d_n: float
    states: np.ndarray  # (|H_N|, |S|) int32, row k has colex rank k
    ranker: Ranker

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def index(self, eta) -> int:
        eta = np.asarray(eta, dtype=np.int64)
        if eta.sum() != self.n_particles or np.any(eta < 0):
            raise ValueError(f"not a configuration with {self.n_particles} particles: {eta}")
        return int(self.ranker.rank(eta[None, :])[0])

    def indices(self, etas: np.ndarray) -> np.ndarray:
        return self.ranker.rank(np.asarray(etas))

    def xi(self, site: int) -> int:
        """Index of the fully condensed configuration at ``site``."""
        eta = np.zeros(self.graph.n, dtype=np.int64)
        eta[site] = self.n_particles
        return self.index(eta)

    def moves(self):
        """Yield (x, y, src, dst, rate) per ordered site pair with r(x, y) > 0."""
        r = self.graph.rates
        d = self.d_n
        for x in range(self.graph.n):
            for y in range(self.graph.n):
                if r[x, y] <= 0:
                    continue
                src = np.flatnonzero(self.states[:, x] > 0)
                tgt = self.states[src].astype(np.int64)
                rate = tgt[:, x] * (d + tgt[:, y]) * r[x, y]
                tgt[:, x] -= 1
                tgt[:, y] += 1
                yield x, y, src, self.ranker.rank(tgt), rate

    def edge_arrays(self):
        """Concatenated directed edges (src, dst, rate)."""
        srcs, dsts, rates = [], [], []
        for _, _, s, t, rate in self.moves():
            srcs.append(s)
            dsts.append(t)
            rates.append(rate)
        return np.concatenate(srcs), np.concatenate(dsts), np.concatenate(rates)


def enumerate_space(g: SiteGraph, n_particles: int, d_n: float, budget: int = DEFAULT_BUDGET) -> ConfigSpace:
    if n_particles < 1:
        raise ValueError("need at least one particle")
    if not d_n > 0:
        raise ValueError("d_N must be positive")
    size = space_size(g.n, n_particles)
    if size > budget:
        raise SpaceTooLarge(size, budget)
    ranker = Ranker(g.n, n_particles)
    states = _compositions(g.n, n_particles)
    order = np.argsort(ranker.rank(states), kind="stable")
    return ConfigSpace(graph=g, n_particles=n_particles, d_n=float(d_n),
                       states=np.ascontiguousarray(states[order]), ranker=ranker)


@dataclass
class MeasureTable:
    log_w: np.ndarray
    log_weights: np.ndarray  # unnormalised log prod w(eta_x) m_x^eta_x
    log_z: float

    @property
    def log_mu(self) -> np.ndarray:
        return self.log_weights - self.log_z

    @property
    def mu(self) -> np.ndarray:
        return np.exp(self.log_mu)


def stationary_measure(cs: ConfigSpace) -> MeasureTable:
    lw = log_w(cs.n_particles, cs.d_n)
    log_m = np.log(cs.graph.measure)
    st = cs.states
    logs = lw[st].sum(axis=1) + st @ log_m
    return MeasureTable(log_w=lw, log_weights=logs, log_z=float(logsumexp(logs)))


def detailed_balance_residual(cs: ConfigSpace, mt: MeasureTable, sample: int | None = 1000,
                              seed: int = 0) -> float:
    """max |log mu(eta) + log r(eta,zeta) - log mu(zeta) - log r(zeta,eta)| over edges."""
    src, dst, rate = cs.edge_arrays()
    if sample is not None and sample < src.size:
        pick = np.random.default_rng(seed).choice(src.size, sample, replace=False)
        src, dst, rate = src[pick], dst[pick], rate[pick]
    st = cs.states
    worst = 0.0
    r = cs.graph.rates
    for x in range(cs.graph.n):
        for y in range(cs.graph.n):
            if r[x, y] <= 0:
                continue
            sel = (st[src, x] - st[dst, x] == 1) & (st[dst, y] - st[src, y] == 1)
            if not sel.any():
                continue
            back = st[dst[sel], y] * (cs.d_n + st[dst[sel], x]) * r[y, x]
            res = (mt.log_weights[src[sel]] + np.log(rate[sel])
                   - mt.log_weights[dst[sel]] - np.log(back))
            worst = max(worst, float(np.max(np.abs(res))))
    return worst


def condensation_profile(cs: ConfigSpace, mt: MeasureTable, hierarchy: MetastableHierarchy) -> dict:
    """mu_N(xi^x) for each condensing site plus the remaining mass."""
    log_mu = mt.log_mu
    out = {}
    total = 0.0
    for x in hierarchy.s_star:
        p = float(np.exp(log_mu[cs.xi(x)]))
        out[cs.graph.sites[x]] = p
        total += p
    out["remainder"] = max(0.0, 1.0 - total)
    return out


def scaled_partition(cs: ConfigSpace, mt: MeasureTable) -> float:
    """N Z_N / d_N, which tends to |S*|."""
    return float(cs.n_particles * np.exp(mt.log_z) / cs.d_n)


def config_chain(cs: ConfigSpace, mt: MeasureTable | None = None):
    """The inclusion process as a ReversibleChain with exact conductances mu(eta) r(eta, zeta)."""
    import scipy.sparse as sp

    from .potential_theory import ReversibleChain

    if mt is None:
        mt = stationary_measure(cs)
    src, dst, rate = cs.edge_arrays()
    cond = np.exp(mt.log_mu[src]) * rate
    C = sp.csr_matrix((cond, (src, dst)), shape=(cs.size, cs.size))
    # each unordered pair appears twice; average the two directions against round-off
    C = sp.csr_matrix(0.5 * (C + C.T))
    return ReversibleChain.from_conductance(C, mt.log_mu)
