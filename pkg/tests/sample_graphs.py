"""Hand-built geometries shared by the tests."""

from inclusion_capacity.graph_model import build_site_graph


def from_conductances(names, measure, edges):
    """Reversible walk with the given measure and symmetric conductances c_xy."""
    rates = {}
    for u, v, c in edges:
        rates[(u, v)] = c / measure[u]
        rates[(v, u)] = c / measure[v]
    return build_site_graph(list(names), rates)


def path5(m=0.5):
    """x - a - b - c - y with unit conductances and m = 1/2 on the middle."""
    return from_conductances(
        "xabcy", dict(x=1, a=m, b=m, c=m, y=1),
        [("x", "a", 1), ("a", "b", 1), ("b", "c", 1), ("c", "y", 1)])


def path4():
    """x - a - c - y: no inner sites after contraction."""
    return from_conductances(
        "xacy", dict(x=1, a=.5, c=.4, y=1),
        [("x", "a", 1), ("a", "c", 1.3), ("c", "y", .7)])


def path6():
    return from_conductances(
        "xabcdy", dict(x=1, a=.5, b=.3, c=.6, d=.45, y=1),
        [("x", "a", 1), ("a", "b", 1), ("b", "c", 2), ("c", "d", 1), ("d", "y", 1.5)])


def nine_site():
    """Two x-neighbours, a four-site inner component with a cycle, one y-neighbour."""
    names = ["x", "a1", "a2", "b1", "b2", "b3", "b4", "c1", "y"]
    m = dict(x=1, a1=.5, a2=.4, b1=.6, b2=.3, b3=.55, b4=.2, c1=.45, y=1)
    edges = [("x", "a1", 1), ("x", "a2", 2), ("a1", "b1", 1.5), ("a2", "b2", 1), ("b1", "b3", 1),
             ("b2", "b3", .7), ("b3", "b4", 1.2), ("b4", "c1", 1), ("b1", "b2", .5),
             ("c1", "y", 1), ("a1", "a2", 1)]
    return from_conductances(names, m, edges)


def three_site(m_a=0.5):
    return from_conductances("xay", dict(x=1, a=m_a, y=1), [("x", "a", 1), ("a", "y", 1)])


# 5x5 grid with a sparse edge set; ten condensing sites forming five
# nearest-neighbour blocks which merge into three blocks at distance two.
GRID_EDGES = [
    ((-2, -2), (-2, -1)), ((-2, -2), (-1, -2)), ((-2, -1), (-2, 0)), ((-2, -1), (-1, -1)),
    ((-2, 0), (-2, 1)), ((-2, 0), (-1, 0)), ((-2, 1), (-2, 2)), ((-2, 1), (-1, 1)),
    ((-2, 2), (-1, 2)), ((-1, -2), (-1, -1)), ((-1, -2), (0, -2)), ((-1, -1), (-1, 0)),
    ((-1, -1), (0, -1)), ((-1, 0), (-1, 1)), ((-1, 0), (0, 0)), ((-1, 2), (0, 2)),
    ((0, -2), (1, -2)), ((0, -1), (0, 0)), ((0, -1), (1, -1)), ((0, 0), (0, 1)),
    ((0, 1), (1, 1)), ((0, 2), (1, 2)), ((1, -2), (2, -2)), ((1, 0), (1, 1)),
    ((1, 0), (2, 0)), ((1, 1), (1, 2)), ((1, 1), (2, 1)), ((1, 2), (2, 2)),
    ((2, -2), (2, -1)), ((2, -1), (2, 0)), ((2, 1), (2, 2)),
]
GRID_STAR = [(-2, 2), (1, 2), (2, 2), (-2, 1), (1, 0), (-2, -1), (-1, -1), (-2, -2), (-1, -2), (2, -2)]


def grid_name(p):
    return f"{p[0]},{p[1]}"


def grid25():
    pts = [(i, j) for j in range(2, -3, -1) for i in range(-2, 3)]
    m = {}
    for k, p in enumerate(pts):
        m[grid_name(p)] = 1.0 if p in GRID_STAR else 0.3 + 0.02 * k
    edges = [(grid_name(p), grid_name(q), 1.0 + 0.1 * ((p[0] + q[1]) % 3)) for p, q in GRID_EDGES]
    return from_conductances([grid_name(p) for p in pts], m, edges)


def random_reversible_chain(seed, n=6, p_edge=0.5):
    """Connected random chain: spanning path plus random extra edges, random pi."""
    import numpy as np

    from inclusion_capacity.potential_theory import ReversibleChain

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    C = np.zeros((n, n))
    for a, b in zip(perm, perm[1:]):
        C[a, b] = C[b, a] = rng.uniform(0.2, 2.0)
    for a in range(n):
        for b in range(a + 1, n):
            if C[a, b] == 0 and rng.random() < p_edge:
                C[a, b] = C[b, a] = rng.uniform(0.2, 2.0)
    pi = rng.uniform(0.5, 2.0, n)
    pi /= pi.sum()
    return ReversibleChain.from_rates(C / pi[:, None], pi), C, pi


def nine_site_low():
    """nine_site with the middle measure scaled so that max m on S0 is 1/2."""
    names = ["x", "a1", "a2", "b1", "b2", "b3", "b4", "c1", "y"]
    base = dict(x=1, a1=.5, a2=.4, b1=.6, b2=.3, b3=.55, b4=.2, c1=.45, y=1)
    m = {k: (v if k in ("x", "y") else v * 0.5 / 0.6) for k, v in base.items()}
    edges = [("x", "a1", 1), ("x", "a2", 2), ("a1", "b1", 1.5), ("a2", "b2", 1), ("b1", "b3", 1),
             ("b2", "b3", .7), ("b3", "b4", 1.2), ("b4", "c1", 1), ("b1", "b2", .5),
             ("c1", "y", 1), ("a1", "a2", 1)]
    return from_conductances(names, m, edges)


def hierarchy_library():
    """Ten geometries covering every combination of block merges we care about."""
    star = from_conductances("abcde", dict(a=.4, b=1, c=1, d=1, e=1),
                             [("a", k, 1.0 + 0.3 * i) for i, k in enumerate("bcde")])
    triangle = from_conductances("xyz", dict(x=1, y=1, z=1), [("x", "y", 1), ("y", "z", 2), ("x", "z", 1)])
    pair_then_far = from_conductances("xyabz", dict(x=1, y=1, a=.5, b=.7, z=1),
                                      [("x", "y", 1), ("y", "a", 1), ("a", "b", 1), ("b", "z", 1)])
    hexagon = from_conductances("xaybzc", dict(x=1, a=.3, y=1, b=.6, z=1, c=.2),
                                [("x", "a", 1), ("a", "y", 1), ("y", "b", 1), ("b", "z", 1),
                                 ("z", "c", 1), ("c", "x", 1)])
    chain_of_blocks = from_conductances(
        ["x1", "x2", "a", "y1", "b", "c", "w"], {"x1": 1, "x2": 1, "a": .5, "y1": 1, "b": .2, "c": .9, "w": 1},
        [("x1", "x2", 1), ("x2", "a", 1), ("a", "y1", 2), ("y1", "b", 1), ("b", "c", 1), ("c", "w", 1)])
    return {
        "path5": path5(), "three_site": three_site(), "grid25": grid25(),
        "triangle": triangle, "star": star, "pair_then_far": pair_then_far,
        "nine_site": nine_site(), "hexagon": hexagon, "chain_of_blocks": chain_of_blocks,
        "path6": path6(),
    }


HIERARCHY_COUNTS = {  # (kappa2, kappa3) read off the drawings by hand
    "path5": (2, 2), "three_site": (2, 1), "grid25": (5, 3), "triangle": (1, 1), "star": (4, 1),
    "pair_then_far": (2, 2), "nine_site": (2, 2), "hexagon": (3, 1), "chain_of_blocks": (3, 2),
    "path6": (2, 2),
}
