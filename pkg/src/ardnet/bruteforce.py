"""Naive reference implementations for small graphs.

Deliberately independent of gstats: dense Floyd-Warshall distances,
explicit path enumeration for betweenness and diffusion walks, and direct
eigendecompositions. Only usable at toy sizes; the `check` subcommand and
the test suite compare gstats against these.
"""

from __future__ import annotations

import itertools

import numpy as np

from .netgen import Graph


def floyd_warshall(g: Graph) -> np.ndarray:
    n = g.n
    D = np.full((n, n), np.inf)
    np.fill_diagonal(D, 0.0)
    for i, j in g.edges:
        D[i, j] = D[j, i] = 1.0
    for k in range(n):
        for i in range(n):
            for j in range(n):
                if D[i, k] + D[k, j] < D[i, j]:
                    D[i, j] = D[i, k] + D[k, j]
    return D


def components(g: Graph) -> list[set[int]]:
    seen: set[int] = set()
    comps = []
    adj = {i: set() for i in range(g.n)}
    for i, j in g.edges:
        adj[int(i)].add(int(j))
        adj[int(j)].add(int(i))
    for start in range(g.n):
        if start in seen:
            continue
        comp = {start}
        stack = [start]
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if w not in comp:
                    comp.add(w)
                    stack.append(w)
        seen |= comp
        comps.append(comp)
    return comps


def giant_component(g: Graph) -> set[int]:
    comps = components(g)
    best_size = max(len(c) for c in comps)
    candidates = [c for c in comps if len(c) == best_size]
    return min(candidates, key=min)


def degree_density(g: Graph) -> np.ndarray:
    deg = np.zeros(g.n)
    for i, j in g.edges:
        deg[i] += 1
        deg[j] += 1
    return deg / g.n


def betweenness_by_path_enumeration(g: Graph) -> np.ndarray:
    """Raw betweenness: for each pair, the share of geodesics through i."""
    n = g.n
    D = floyd_warshall(g)
    A = np.zeros((n, n), dtype=bool)
    for i, j in g.edges:
        A[i, j] = A[j, i] = True

    def geodesics(s, t):
        if not np.isfinite(D[s, t]):
            return []
        paths = []
        stack = [(s, (s,))]
        while stack:
            v, path = stack.pop()
            if v == t:
                paths.append(path)
                continue
            for w in range(n):
                if A[v, w] and D[s, w] == len(path) and D[w, t] == D[s, t] - len(path):
                    stack.append((w, path + (w,)))
        return paths

    raw = np.zeros(n)
    for s in range(n):
        for t in range(s + 1, n):
            paths = geodesics(s, t)
            if not paths:
                continue
            for v in range(n):
                if v == s or v == t:
                    continue
                through = sum(1 for p in paths if v in p[1:-1])
                raw[v] += through / len(paths)
    return raw


def eigenvector_centrality_dense(g: Graph) -> tuple[float, np.ndarray]:
    """(lambda1, unit nonnegative eigenvector over the giant component nodes)."""
    giant = sorted(giant_component(g))
    A = np.zeros((len(giant), len(giant)))
    pos = {v: idx for idx, v in enumerate(giant)}
    for i, j in g.edges:
        if int(i) in pos and int(j) in pos:
            A[pos[int(i)], pos[int(j)]] = A[pos[int(j)], pos[int(i)]] = 1.0
    if len(giant) == 1:
        return 0.0, np.zeros(1)
    w, V = np.linalg.eigh(A)
    vec = V[:, -1]
    vec = np.abs(vec) / np.linalg.norm(vec)
    return float(w[-1]), vec


def local_clustering(g: Graph) -> np.ndarray:
    A = np.zeros((g.n, g.n), dtype=bool)
    for i, j in g.edges:
        A[i, j] = A[j, i] = True
    out = np.zeros(g.n)
    for i in range(g.n):
        nbrs = [j for j in range(g.n) if A[i, j]]
        d = len(nbrs)
        if d < 2:
            continue
        linked = sum(1 for a in nbrs for b in nbrs if a != b and A[a, b])
        out[i] = linked / (d * (d - 1))
    return out


def support_pairs(g: Graph) -> dict[tuple[int, int], float]:
    A = np.zeros((g.n, g.n), dtype=bool)
    for i, j in g.edges:
        A[i, j] = A[j, i] = True
    out = {}
    for i, j in g.edges:
        i, j = int(i), int(j)
        out[(i, j)] = float(any(A[i, k] and A[j, k] for k in range(g.n)))
    return out


def diffusion_centrality_walks(g: Graph, q: float, T: int) -> np.ndarray:
    """DC by explicit walk enumeration: sum over walks of length t <= T of q^t."""
    n = g.n
    A = np.zeros((n, n), dtype=bool)
    for i, j in g.edges:
        A[i, j] = A[j, i] = True
    dc = np.zeros(n)
    for i in range(n):
        total = 0.0
        frontier = {(i,): 1.0}
        for t in range(1, T + 1):
            nxt: dict[tuple, float] = {}
            for walk, cnt in frontier.items():
                v = walk[-1]
                for w in range(n):
                    if A[v, w]:
                        nxt[walk + (w,)] = cnt
            total += q**t * sum(nxt.values())
            frontier = nxt
            if not frontier:
                break
        dc[i] = total
    return dc


def transitivity(g: Graph) -> float | None:
    n = g.n
    A = np.zeros((n, n), dtype=bool)
    for i, j in g.edges:
        A[i, j] = A[j, i] = True
    triangles = 0
    for a, b, c in itertools.combinations(range(n), 3):
        if A[a, b] and A[b, c] and A[a, c]:
            triangles += 1
    wedges = 0
    for center in range(n):
        nbrs = [j for j in range(n) if A[center, j]]
        wedges += len(nbrs) * (len(nbrs) - 1) // 2
    if wedges == 0:
        return None
    return 3.0 * triangles / wedges


def graph_summary_values(g: Graph) -> dict[str, float | None]:
    D = floyd_warshall(g)
    n = g.n
    giant = sorted(giant_component(g))
    fin = []
    for i in giant:
        for j in giant:
            if i != j and np.isfinite(D[i, j]):
                fin.append(D[i, j])
    diameter = max(fin) if fin else None
    all_fin = [D[i, j] for i in range(n) for j in range(n) if i != j and np.isfinite(D[i, j])]
    apl = float(np.mean(all_fin)) if all_fin else None
    prox = 0.0
    if n > 1:
        acc = [1.0 / D[i, j] if np.isfinite(D[i, j]) else 0.0
               for i in range(n) for j in range(n) if i != j]
        prox = float(np.mean(acc))
    comps = components(g)
    lam, _ = eigenvector_centrality_dense(g)
    local = local_clustering(g)
    deg = (degree_density(g) * n).astype(int)
    has = deg >= 2
    return {
        "diameter": diameter,
        "avg_path_length": apl,
        "avg_proximity": prox,
        "giant_share": len(giant) / n,
        "n_components": float(len(comps)),
        "max_eigenvalue": lam,
        "transitivity": transitivity(g),
        "clustering_local_mean": float(local[has].mean()) if has.any() else None,
    }


def fiedler_cut_dense(g: Graph) -> tuple[float, float] | None:
    """(cross/within, cross/total) from a dense Laplacian eigendecomposition."""
    giant = sorted(giant_component(g))
    if len(giant) < 3:
        return None
    pos = {v: idx for idx, v in enumerate(giant)}
    m = len(giant)
    A = np.zeros((m, m))
    for i, j in g.edges:
        if int(i) in pos and int(j) in pos:
            A[pos[int(i)], pos[int(j)]] = A[pos[int(j)], pos[int(i)]] = 1.0
    L = np.diag(A.sum(axis=1)) - A
    w, V = np.linalg.eigh(L)
    vec = V[:, 1]
    posmask = vec >= 0.0
    cross = within = 0
    for a in range(m):
        for b in range(a + 1, m):
            if A[a, b]:
                if posmask[a] != posmask[b]:
                    cross += 1
                else:
                    within += 1
    total = cross + within
    ratio = cross / within if within else np.inf
    return ratio, cross / total if total else 0.0


def enumerate_graphs(n: int):
    """All simple graphs on n labeled nodes (use only for tiny n)."""
    pairs = list(itertools.combinations(range(n), 2))
    for bits in range(1 << len(pairs)):
        edges = [pairs[b] for b in range(len(pairs)) if bits >> b & 1]
        yield Graph(n, np.array(edges, dtype=np.int64).reshape(-1, 2))


def random_graph(n: int, rng) -> Graph:
    pairs = list(itertools.combinations(range(n), 2))
    p = rng.uniform(0.2, 0.8)
    edges = [pr for pr in pairs if rng.random() < p]
    return Graph(n, np.array(edges, dtype=np.int64).reshape(-1, 2))


# ---------------------------------------------------------------- comparison

SPECTRAL_TOL = 1e-8


def _fiedler_well_posed(g: Graph) -> bool:
    """Sign cuts are only comparable when the Fiedler pair is unambiguous."""
    giant = sorted(giant_component(g))
    if len(giant) < 3:
        return False
    pos = {v: idx for idx, v in enumerate(giant)}
    m = len(giant)
    A = np.zeros((m, m))
    for i, j in g.edges:
        if int(i) in pos and int(j) in pos:
            A[pos[int(i)], pos[int(j)]] = A[pos[int(j)], pos[int(i)]] = 1.0
    L = np.diag(A.sum(axis=1)) - A
    w, V = np.linalg.eigh(L)
    if w[2] - w[1] < 1e-6:
        return False
    return bool(np.min(np.abs(V[:, 1])) > 1e-6)


def compare_all(g: Graph, rng=None) -> list[str]:
    """Run every statistic against its oracle; return mismatch descriptions."""
    from . import gstats

    errs: list[str] = []
    ga = gstats.GraphAnalysis(g)

    def close(a, b, tol=0.0):
        return abs(a - b) <= tol

    D_oracle = floyd_warshall(g)
    D_fast = ga.distances
    if not np.array_equal(np.where(np.isfinite(D_oracle), D_oracle, -1),
                          np.where(np.isfinite(D_fast), D_fast, -1)):
        errs.append("distance matrix mismatch")

    if not np.array_equal(gstats.degree_density(g).values, degree_density(g)):
        errs.append("degree_density mismatch")

    bt = gstats.betweenness_centrality(g, ga).values
    raw = betweenness_by_path_enumeration(g)
    norm = (g.n - 1) * (g.n - 2) / 2.0 if g.n >= 3 else 1.0
    if np.max(np.abs(bt - raw / norm)) > 1e-12:
        errs.append("betweenness mismatch")

    lam_o, vec_o = eigenvector_centrality_dense(g)
    ec = gstats.eigenvector_centrality(g, ga)
    lam_f, _, _ = ga.leading_eigenpair()
    if abs(lam_f - lam_o) > SPECTRAL_TOL:
        errs.append(f"max eigenvalue mismatch ({lam_f} vs {lam_o})")
    giant = sorted(giant_component(g))
    if g.edge_count and np.max(np.abs(ec.values[giant] - vec_o)) > SPECTRAL_TOL:
        errs.append("eigenvector centrality mismatch")

    if np.max(np.abs(gstats.local_clustering(g, ga).values - local_clustering(g))) > 1e-12:
        errs.append("local clustering mismatch")

    node_sup, pair_sup = gstats.support_share(g, ga)
    oracle_sup = support_pairs(g)
    for key, val in zip(pair_sup.keys, pair_sup.values):
        if oracle_sup[key] != val:
            errs.append(f"support mismatch at edge {key}")
            break

    if g.edge_count:
        dc = gstats.diffusion_centrality(g, q=0.4, T=3, analysis=ga).values
        if np.max(np.abs(dc - diffusion_centrality_walks(g, 0.4, 3))) > 1e-9:
            errs.append("diffusion centrality mismatch")

    summary = gstats.graph_summary(g, ga)
    oracle = graph_summary_values(g)
    for key in gstats.GRAPH_SUMMARY_KEYS:
        want = oracle[key]
        got = summary.value(key)
        flagged = key in summary.flags
        if want is None:
            if not flagged:
                errs.append(f"{key}: oracle undefined but gstats gave {got}")
            continue
        tol = SPECTRAL_TOL if key == "max_eigenvalue" else 1e-12
        if not close(got, want, tol):
            errs.append(f"{key}: {got} vs oracle {want}")

    if _fiedler_well_posed(g):
        fc = gstats.fiedler_cut_share(g, ga)
        want = fiedler_cut_dense(g)
        ratio_o, share_o = want
        if np.isfinite(ratio_o):
            if abs(fc.value("fiedler_cut_ratio") - ratio_o) > SPECTRAL_TOL:
                errs.append("fiedler cut ratio mismatch")
        elif "fiedler_cut_ratio" not in fc.flags:
            errs.append("fiedler cut ratio should be flagged infinite")
        if abs(fc.value("fiedler_cut_share_total") - share_o) > SPECTRAL_TOL:
            errs.append("fiedler cut share mismatch")

    return errs


def run_suite(seed: int = 0, exhaustive_max: int = 4, samples_per_n: int = 300) -> tuple[int, list[str]]:
    """Compare gstats with the oracles on every graph with n <= exhaustive_max
    plus seeded random graphs at n = 5 and 6. Returns (checked, failures)."""
    rng = np.random.default_rng(seed)
    checked = 0
    failures: list[str] = []
    for n in range(2, exhaustive_max + 1):
        for g in enumerate_graphs(n):
            checked += 1
            for e in compare_all(g):
                failures.append(f"n={n} edges={g.edges.tolist()}: {e}")
    for n in (5, 6):
        for _ in range(samples_per_n):
            g = random_graph(n, rng)
            checked += 1
            for e in compare_all(g):
                failures.append(f"n={n} edges={g.edges.tolist()}: {e}")
    return checked, failures
