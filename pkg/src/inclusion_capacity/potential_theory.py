"""Potential theory for finite reversible Markov chains.

Dirichlet forms, equilibrium potentials and capacities, flows with the
Thomson principle, trace chains, harmonic extensions and mean hitting times.
Everything is expressed through the symmetric conductance matrix
C(v, w) = pi(v) R(v, w), which is what the solvers actually need.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NotAFlow, SingularSystem

DIRECT_LIMIT = 20_000
CG_RTOL = 1e-10


@dataclass
class ReversibleChain:
    """Chain given by its stationary law and sparse rate matrix."""

    pi: np.ndarray
    rates: sp.csr_matrix
    log_pi: np.ndarray | None = None
    _cond: sp.csr_matrix | None = field(default=None, repr=False)

    @classmethod
    def from_rates(cls, rates, pi=None, check: bool = True) -> "ReversibleChain":
        R = sp.csr_matrix(rates, dtype=float)
        R.setdiag(0.0)
        R.eliminate_zeros()
        if pi is None:
            pi = stationary_distribution(R)
        pi = np.asarray(pi, dtype=float)
        pi = pi / pi.sum()
        chain = cls(pi=pi, rates=R)
        if check:
            c = chain.conductance
            asym = abs(c - c.T).max() if c.nnz else 0.0
            if asym > 1e-12 * max(abs(c).max(), 1e-300) * 10:
                raise ValueError(f"chain is not reversible (asymmetry {asym:.3e})")
        return chain

    @classmethod
    def from_conductance(cls, cond: sp.spmatrix, log_pi: np.ndarray) -> "ReversibleChain":
        """Build from symmetric conductances and an (unnormalised) log measure.

        The conductance matrix may be rescaled by any positive constant;
        only ratios matter for potentials while capacities scale with it.
        """
        cond = sp.csr_matrix(cond)
        log_pi = np.asarray(log_pi, dtype=float)
        shift = log_pi.max()
        pi = np.exp(log_pi - shift)
        scale = pi.sum()
        pi /= scale
        rates = sp.diags(1.0 / pi) @ cond
        chain = cls(pi=pi, rates=sp.csr_matrix(rates), log_pi=log_pi - shift - np.log(scale))
        chain._cond = cond
        return chain

    @property
    def size(self) -> int:
        return self.pi.size

    @property
    def conductance(self) -> sp.csr_matrix:
        if self._cond is None:
            self._cond = sp.csr_matrix(sp.diags(self.pi) @ self.rates)
        return self._cond

    def generator(self) -> sp.csr_matrix:
        out = self.rates.sum(axis=1).A1
        return sp.csr_matrix(self.rates - sp.diags(out))

    def apply_generator(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        return self.rates @ f - self.rates.sum(axis=1).A1 * f


def stationary_distribution(R: sp.spmatrix) -> np.ndarray:
    R = sp.csr_matrix(R, dtype=float)
    n = R.shape[0]
    Q = (R - sp.diags(R.sum(axis=1).A1)).toarray()
    system = np.vstack([Q.T, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    return pi / pi.sum()


def _as_index(states: Iterable[int] | int, n: int) -> np.ndarray:
    idx = np.atleast_1d(np.asarray(list(states) if not np.isscalar(states) else [states], dtype=np.int64))
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError("state index out of range")
    return np.unique(idx)


# ---------------------------------------------------------------------------
# Dirichlet form


def dirichlet_form(chain: ReversibleChain, f: np.ndarray) -> float:
    """(1/2) sum_{v,w} pi(v) R(v,w) (f(w) - f(v))^2."""
    C = sp.coo_matrix(chain.conductance)
    f = np.asarray(f, dtype=float)
    diff = f[C.col] - f[C.row]
    return 0.5 * float(np.sum(C.data * diff * diff))


def dirichlet_pairing(chain: ReversibleChain, f: np.ndarray) -> float:
    """<f, -L f>_pi, the generator form of the Dirichlet form."""
    f = np.asarray(f, dtype=float)
    return float(-np.sum(chain.pi * f * chain.apply_generator(f)))


# ---------------------------------------------------------------------------
# linear solves


@dataclass
class SolveInfo:
    method: str
    residual: float
    iterations: int = 0


def _laplacian(cond: sp.csr_matrix) -> sp.csr_matrix:
    deg = np.asarray(cond.sum(axis=1)).ravel()
    return sp.csr_matrix(sp.diags(deg) - cond)


def solve_dirichlet_problem(cond: sp.csr_matrix, boundary: np.ndarray, values: np.ndarray,
                            rhs_extra: np.ndarray | None = None, rtol: float = CG_RTOL,
                            direct_limit: int = DIRECT_LIMIT) -> tuple[np.ndarray, SolveInfo]:
    """Solve (Laplacian u)(v) = rhs_extra(v) off ``boundary`` with u = values on it.

    The Laplacian is built from the symmetric conductances, so the restricted
    system is symmetric positive definite whenever every interior component
    touches the boundary.  Small systems use a sparse LU factorisation, large
    ones conjugate gradients preconditioned by smoothed-aggregation AMG after
    a symmetric diagonal rescaling.  The capacity is a Dirichlet energy, so its
    error is quadratic in the potential error and rtol=1e-10 is plenty.
    """
    n = cond.shape[0]
    boundary = np.asarray(boundary, dtype=np.int64)
    mask = np.ones(n, dtype=bool)
    mask[boundary] = False
    interior = np.flatnonzero(mask)
    u = np.zeros(n)
    u[boundary] = values
    if interior.size == 0:
        return u, SolveInfo("none", 0.0)
    lap = _laplacian(cond)
    A = lap[interior][:, interior].tocsr()
    b = -(lap[interior][:, boundary] @ np.asarray(values, dtype=float))
    if rhs_extra is not None:
        b = b + rhs_extra[interior]
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SingularSystem("interior state without conductance to the rest of the chain")
    s = 1.0 / np.sqrt(diag)
    S = sp.diags(s)
    As = sp.csr_matrix(S @ A @ S)
    bs = s * b
    if interior.size <= direct_limit:
        try:
            ys = spla.spsolve(As.tocsc(), bs)
        except RuntimeError as exc:  # pragma: no cover - singular factorisation
            raise SingularSystem(str(exc)) from exc
        if not np.all(np.isfinite(ys)):
            raise SingularSystem("direct solve produced non-finite values")
        method, iters = "direct", 0
    else:
        import pyamg

        # after rescaling, constants on the unscaled system become 1/s: hand that
        # near-null vector to the aggregation so coarse levels can represent it
        ml = pyamg.smoothed_aggregation_solver(As, B=(1.0 / s)[:, None], symmetry="symmetric",
                                               max_coarse=500,
                                               presmoother=("gauss_seidel", {"sweep": "forward"}),
                                               postsmoother=("gauss_seidel", {"sweep": "backward"}))
        M = ml.aspreconditioner(cycle="V")
        count = [0]

        def cb(_):
            count[0] += 1

        ys, info = spla.cg(As, bs, rtol=rtol, atol=0.0, M=M, maxiter=5000, callback=cb)
        if info != 0:
            raise SingularSystem(f"conjugate gradients did not converge (info={info})")
        method, iters = "amg-cg", count[0]
    res = np.linalg.norm(As @ ys - bs) / max(np.linalg.norm(bs), 1e-300)
    u[interior] = s * ys
    return u, SolveInfo(method, float(res), iters)


# ---------------------------------------------------------------------------
# equilibrium potential and capacity


@dataclass
class PotentialSolution:
    h: np.ndarray
    cap: float
    residual: float
    method: str = "direct"


def equilibrium_potential(chain: ReversibleChain, A, B, **solver) -> PotentialSolution:
    A = _as_index(A, chain.size)
    B = _as_index(B, chain.size)
    if A.size == 0 or B.size == 0 or np.intersect1d(A, B).size:
        raise ValueError("A and B must be disjoint and nonempty")
    boundary = np.concatenate([A, B])
    values = np.concatenate([np.ones(A.size), np.zeros(B.size)])
    h, info = solve_dirichlet_problem(chain.conductance, boundary, values, **solver)
    np.clip(h, 0.0, 1.0, out=h)
    return PotentialSolution(h=h, cap=dirichlet_form(chain, h), residual=info.residual, method=info.method)


def capacity(chain: ReversibleChain, A, B, **solver) -> float:
    return equilibrium_potential(chain, A, B, **solver).cap


def equilibrium_flux(chain: ReversibleChain, A, sol: PotentialSolution) -> float:
    """sum_{a in A} sum_w pi(a) R(a,w) (h(a) - h(w)), another expression of the capacity."""
    A = _as_index(A, chain.size)
    C = chain.conductance[A]
    return float(np.sum(C.multiply(sol.h[A][:, None] - sol.h[None, :]).sum()))


# ---------------------------------------------------------------------------
# flows


class FlowField:
    """Antisymmetric edge function stored once per unordered edge (i < j)."""

    def __init__(self, n: int, rows=None, cols=None, vals=None):
        self.n = n
        rows = np.asarray([] if rows is None else rows, dtype=np.int64)
        cols = np.asarray([] if cols is None else cols, dtype=np.int64)
        vals = np.asarray([] if vals is None else vals, dtype=float)
        if np.any(rows == cols):
            raise NotAFlow("flow on a loop", vertex=int(rows[rows == cols][0]))
        flip = rows > cols
        lo = np.where(flip, cols, rows)
        hi = np.where(flip, rows, cols)
        v = np.where(flip, -vals, vals)
        M = sp.coo_matrix((v, (lo, hi)), shape=(n, n)).tocsr()
        M.sum_duplicates()
        self.upper = M  # value of phi(i, j) for i < j

    @classmethod
    def from_matrix(cls, phi: sp.spmatrix, check: bool = True, tol: float = 0.0) -> "FlowField":
        """From a full matrix phi(v, w); antisymmetry is verified."""
        phi = sp.csr_matrix(phi)
        if check:
            gap = abs(phi + phi.T)
            worst = gap.max() if gap.nnz else 0.0
            if worst > tol:
                coo = sp.coo_matrix(gap)
                k = int(np.argmax(coo.data))
                raise NotAFlow(f"antisymmetry broken by {worst:.3e}", vertex=int(coo.row[k]))
        upper = sp.triu(phi, k=1).tocoo()
        return cls(phi.shape[0], upper.row, upper.col, upper.data)

    def as_matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.upper - self.upper.T)

    def divergence(self) -> np.ndarray:
        U = self.upper
        return np.asarray(U.sum(axis=1)).ravel() - np.asarray(U.sum(axis=0)).ravel()

    def max_abs(self) -> float:
        return float(abs(self.upper).max()) if self.upper.nnz else 0.0

    def __add__(self, other: "FlowField") -> "FlowField":
        out = FlowField(self.n)
        out.upper = sp.csr_matrix(self.upper + other.upper)
        return out

    def __mul__(self, k: float) -> "FlowField":
        out = FlowField(self.n)
        out.upper = sp.csr_matrix(self.upper * k)
        return out

    __rmul__ = __mul__


def flow_divergence(phi: FlowField, v: int) -> float:
    return float(phi.divergence()[v])


def check_support(chain: ReversibleChain, phi: FlowField) -> None:
    U = sp.coo_matrix(phi.upper)
    nz = U.data != 0
    if not nz.any():
        return
    cond = chain.conductance
    allowed = np.asarray(cond[U.row[nz], U.col[nz]]).ravel() > 0
    if not np.all(allowed):
        k = int(np.flatnonzero(~allowed)[0])
        raise NotAFlow("flow on a pair without a transition", vertex=int(U.row[nz][k]))


def flow_norm(chain: ReversibleChain, phi: FlowField) -> float:
    """||phi||^2 = (1/2) sum phi(v,w)^2 / (pi(v) R(v,w)) over ordered pairs."""
    check_support(chain, phi)
    U = sp.coo_matrix(phi.upper)
    if U.nnz == 0:
        return 0.0
    c = np.asarray(chain.conductance[U.row, U.col]).ravel()
    return float(np.sum(U.data ** 2 / c))


def validate_flow(phi: FlowField, A, B, rel_tol: float = 1e-12) -> float:
    """Value gamma of a flow from A to B; raises NotAFlow otherwise."""
    div = phi.divergence()
    A = _as_index(A, phi.n)
    B = _as_index(B, phi.n)
    gamma = float(div[A].sum())
    scale = max(phi.max_abs(), 1e-300)
    mask = np.ones(phi.n, dtype=bool)
    mask[A] = False
    mask[B] = False
    if mask.any():
        inner = np.abs(div[mask])
        k = int(np.argmax(inner))
        if inner[k] > rel_tol * scale:
            raise NotAFlow(f"divergence {inner[k]:.3e} at interior state",
                           vertex=int(np.flatnonzero(mask)[k]))
    if abs(div[B].sum() + gamma) > rel_tol * scale * max(1, A.size + B.size):
        raise NotAFlow("inflow into B does not match outflow from A")
    return gamma


def harmonic_flow(chain: ReversibleChain, h: np.ndarray) -> FlowField:
    C = sp.triu(chain.conductance, k=1).tocoo()
    return FlowField(chain.size, C.row, C.col, C.data * (h[C.row] - h[C.col]))


def thomson_bound(chain: ReversibleChain, phi: FlowField, A, B, rel_tol: float = 1e-12) -> float:
    gamma = validate_flow(phi, A, B, rel_tol=rel_tol)
    norm = flow_norm(chain, phi)
    if norm == 0:
        return 0.0
    return gamma * gamma / norm


# ---------------------------------------------------------------------------
# trace chain and harmonic extension


def hitting_distribution(chain: ReversibleChain, W) -> np.ndarray:
    """Matrix P[v, k] = P_v[first visit to W happens at W[k]] for all v."""
    W = _as_index(W, chain.size)
    n = chain.size
    out = np.zeros((n, W.size))
    for k in range(W.size):
        values = np.zeros(W.size)
        values[k] = 1.0
        u, _ = solve_dirichlet_problem(chain.conductance, W, values)
        out[:, k] = u
    return out


def trace_rates(chain: ReversibleChain, W) -> ReversibleChain:
    """Trace chain on W: R^W(w,w') = R(w,w') + sum_{v not in W} R(w,v) P_v[T_W = T_w']."""
    W = _as_index(W, chain.size)
    if W.size == chain.size:
        return ReversibleChain.from_rates(chain.rates, chain.pi, check=False)
    P = hitting_distribution(chain, W)
    R = chain.rates.toarray() if chain.size <= 5000 else chain.rates
    RW = np.asarray(R[W][:, W] if not sp.issparse(R) else R[W][:, W].toarray()).copy()
    outside = np.setdiff1d(np.arange(chain.size), W)
    rows = np.asarray(R[W][:, outside] if not sp.issparse(R) else R[W][:, outside].toarray())
    RW += rows @ P[outside]
    np.fill_diagonal(RW, 0.0)
    pi = chain.pi[W] / chain.pi[W].sum()
    # symmetrise the conductances to remove solver round-off
    cond = pi[:, None] * RW
    cond = 0.5 * (cond + cond.T)
    return ReversibleChain.from_rates(cond / pi[:, None], pi, check=False)


def harmonic_extension(chain: ReversibleChain, W, g) -> np.ndarray:
    W = _as_index(W, chain.size)
    g = np.asarray(g, dtype=float)
    u, _ = solve_dirichlet_problem(chain.conductance, W, g)
    return u


def mean_rate(chain: ReversibleChain, A, B) -> float:
    """R(A, B) = sum_{v in A} pi(v)/pi(A) sum_{w in B} R(v, w)."""
    A = _as_index(A, chain.size)
    B = _as_index(B, chain.size)
    sub = chain.rates[A][:, B]
    return float(np.sum(chain.pi[A] * np.asarray(sub.sum(axis=1)).ravel()) / chain.pi[A].sum())


# ---------------------------------------------------------------------------
# hitting times


def mean_hitting_time_direct(chain: ReversibleChain, B) -> np.ndarray:
    """E_v[T_B] for all v from L E = -1 off B, E = 0 on B."""
    B = _as_index(B, chain.size)
    # pi-weighted form: sum_w C(v,w)(E(v)-E(w)) = pi(v)
    u, _ = solve_dirichlet_problem(chain.conductance, B, np.zeros(B.size), rhs_extra=chain.pi)
    return u


def mean_hitting_time(chain: ReversibleChain, v: int, B) -> tuple[float, float]:
    """(magic formula, direct solve) values of E_v[T_B]."""
    B = _as_index(B, chain.size)
    if v in set(B.tolist()):
        return 0.0, 0.0
    sol = equilibrium_potential(chain, [v], B)
    magic = float(np.sum(chain.pi * sol.h) / sol.cap)
    direct = float(mean_hitting_time_direct(chain, B)[v])
    return magic, direct
