"""Continuous-time simulation of the inclusion process on an enumerated space.

Each replica draws from its own Philox stream keyed by (seed, replica), so
results do not depend on the order replicas are run in.  Holding times are
exponential with the total exit rate, and the next configuration is chosen
proportionally to the individual rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .config_space import ConfigSpace, config_chain, stationary_measure
from .errors import EventCapExceeded
from .potential_theory import mean_hitting_time

DEFAULT_MAX_EVENTS = 10**9
_BATCH = 4096


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    replicas: int = 1000
    max_events: int = DEFAULT_MAX_EVENTS

    def __post_init__(self):
        if self.replicas < 1:
            raise ValueError("need at least one replica")
        if self.max_events < 1:
            raise ValueError("max_events must be positive")

    def rng(self, replica: int) -> np.random.Generator:
        key = np.random.SeedSequence([int(self.seed) & (2**64 - 1), int(replica)])
        return np.random.Generator(np.random.Philox(key))


@dataclass
class HittingSample:
    times: np.ndarray
    events: np.ndarray
    exact_reference: float | None = None

    @property
    def mean(self) -> float:
        return float(np.mean(self.times))

    @property
    def stderr(self) -> float:
        if self.times.size < 2:
            return float("nan")
        return float(np.std(self.times, ddof=1) / math.sqrt(self.times.size))


class _Stream:
    """Batched exponential and uniform draws from one generator."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self._refill()

    def _refill(self):
        self.exp = self.rng.standard_exponential(_BATCH)
        self.uni = self.rng.random(_BATCH)
        self.pos = 0

    def next(self) -> tuple[float, float]:
        if self.pos == _BATCH:
            self._refill()
        e, u = self.exp[self.pos], self.uni[self.pos]
        self.pos += 1
        return e, u


@dataclass
class JumpTable:
    """Rows of the rate matrix as cumulative sums, ready for sampling."""

    indptr: np.ndarray
    targets: np.ndarray
    cumrates: np.ndarray
    total: np.ndarray = field(init=False)

    def __post_init__(self):
        ends = self.indptr[1:] - 1
        self.total = np.where(self.indptr[1:] > self.indptr[:-1], self.cumrates[np.maximum(ends, 0)], 0.0)

    @classmethod
    def from_space(cls, cs: ConfigSpace) -> "JumpTable":
        src, dst, rate = cs.edge_arrays()
        R = sp.csr_matrix((rate, (src, dst)), shape=(cs.size, cs.size))
        R.sum_duplicates()
        R.sort_indices()
        cum = np.empty_like(R.data)
        for i in range(cs.size):
            lo, hi = R.indptr[i], R.indptr[i + 1]
            cum[lo:hi] = np.cumsum(R.data[lo:hi])
        return cls(indptr=R.indptr, targets=R.indices, cumrates=cum)

    def step(self, state: int, u: float) -> int:
        lo, hi = self.indptr[state], self.indptr[state + 1]
        k = lo + int(np.searchsorted(self.cumrates[lo:hi], u * self.total[state], side="right"))
        return int(self.targets[min(k, hi - 1)])


def _target_mask(cs: ConfigSpace, targets) -> np.ndarray:
    mask = np.zeros(cs.size, dtype=bool)
    if callable(targets):
        mask[:] = np.asarray(targets(cs.states), dtype=bool)
    else:
        items = list(targets)
        if not items:
            raise ValueError("empty target set")
        for t in items:
            mask[int(t) if np.isscalar(t) else cs.index(t)] = True
    if not mask.any():
        raise ValueError("empty target set")
    return mask


def _run_one(table: JumpTable, start: int, mask: np.ndarray, stream: _Stream, max_events: int):
    state, t, events = start, 0.0, 0
    while not mask[state]:
        if events >= max_events:
            raise EventCapExceeded(f"no hit after {max_events} events")
        e, u = stream.next()
        t += e / table.total[state]
        state = table.step(state, u)
        events += 1
    return t, events


def simulate_until(cs: ConfigSpace, eta0, targets, cfg: SimConfig, table: JumpTable | None = None) -> HittingSample:
    """Hitting time of ``targets`` (configurations, indices or a predicate on states) from eta0."""
    table = table or JumpTable.from_space(cs)
    mask = _target_mask(cs, targets)
    start = int(eta0) if np.isscalar(eta0) else cs.index(eta0)
    times = np.empty(cfg.replicas)
    events = np.empty(cfg.replicas, dtype=np.int64)
    for r in range(cfg.replicas):
        times[r], events[r] = _run_one(table, start, mask, _Stream(cfg.rng(r)), cfg.max_events)
    return HittingSample(times=times, events=events)


def empirical_vs_magic(cs: ConfigSpace, x, targets, cfg: SimConfig, mt=None, sigmas: float = 3.0) -> dict:
    """Simulated mean hitting time against the capacity formula for E_x[T_B]."""
    mt = mt or stationary_measure(cs)
    chain = config_chain(cs, mt)
    mask = _target_mask(cs, targets)
    start = int(x) if np.isscalar(x) else cs.index(x)
    magic, direct = mean_hitting_time(chain, start, np.flatnonzero(mask))
    sample = simulate_until(cs, start, np.flatnonzero(mask), cfg)
    sample.exact_reference = magic
    gap = abs(sample.mean - magic)
    se = sample.stderr
    ok = gap == 0.0 if not np.isfinite(se) or se == 0.0 else gap <= sigmas * se
    return {"mean": sample.mean, "stderr": se, "magic": magic, "direct": direct,
            "gap": gap, "replicas": cfg.replicas, "passed": bool(ok), "sample": sample}


def d_schedule(n_particles: int, c: float) -> float:
    """d_N = c / log(N + e)."""
    return c / math.log(n_particles + math.e)


def timescale_census(cs: ConfigSpace, hierarchy, x: int, alpha: float, cfg: SimConfig,
                     table: JumpTable | None = None) -> dict:
    """Law of the condensate reached at time alpha, started from xi^x.

    The projection sends xi^s to the site s of S* and everything else to
    "outside".  Also returns the mean fraction of [0, alpha] spent outside
    the condensed configurations.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    table = table or JumpTable.from_space(cs)
    names = cs.graph.sites
    xi = {cs.xi(s): names[s] for s in hierarchy.s_star}
    start = cs.xi(x)
    counts = {names[s]: 0 for s in hierarchy.s_star}
    counts["outside"] = 0
    frac = np.empty(cfg.replicas)
    for r in range(cfg.replicas):
        stream = _Stream(cfg.rng(r))
        state, t, away, events = start, 0.0, 0.0, 0
        while True:
            if events >= cfg.max_events:
                raise EventCapExceeded(f"census replica {r} exceeded {cfg.max_events} events")
            e, u = stream.next()
            hold = e / table.total[state]
            stop = t + hold >= alpha
            dt = alpha - t if stop else hold
            if state not in xi:
                away += dt
            if stop:
                break
            t += hold
            state = table.step(state, u)
            events += 1
        counts[xi.get(state, "outside")] += 1
        frac[r] = away / alpha
    law = {k: v / cfg.replicas for k, v in counts.items()}
    return {"alpha": alpha, "law": law, "outside_fraction": float(frac.mean()),
            "outside_fraction_stderr": float(frac.std(ddof=1) / math.sqrt(cfg.replicas)) if cfg.replicas > 1 else float("nan")}
