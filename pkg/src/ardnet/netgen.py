"""Latent-surface formation model: parameters, link probabilities, graphs.

A dyad (i, j) links independently with probability
Lambda(nu_i + nu_j + offset - zeta * d(z_i, z_j)), where Lambda is either
the logistic function or a capped exponential. The offset makes the
proportionality constant explicit and is what degree calibration adjusts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import (
    CalibrationError,
    ConfigError,
    InvalidInputError,
    ParameterizationError,
)
from .geometry import Surface

LOGISTIC = "logistic"
EXPONENTIAL = "exponential"

# exponential link must keep every dyad strictly below 1
EXP_CAP = np.log(1.0 - 1e-6)
# clamp exponents so the logistic never underflows to exactly 0 or 1
EXP_CLIP = 700.0


def link_value(x, kind: str):
    """Apply the link function to an exponent array."""
    x = np.clip(x, -EXP_CLIP, EXP_CLIP)
    if kind == LOGISTIC:
        return 1.0 / (1.0 + np.exp(-x))
    if kind == EXPONENTIAL:
        return np.exp(x)
    raise ConfigError(f"unknown link kind {kind!r}")


def link_derivative(x, kind: str):
    x = np.clip(x, -EXP_CLIP, EXP_CLIP)
    if kind == LOGISTIC:
        p = 1.0 / (1.0 + np.exp(-x))
        return p * (1.0 - p)
    if kind == EXPONENTIAL:
        return np.exp(x)
    raise ConfigError(f"unknown link kind {kind!r}")


@dataclass
class ModelParams:
    """Full generative parameter vector for one network."""

    nu: np.ndarray                 # per-node effects, length n
    z: np.ndarray                  # latent positions, (n, ambient_dim)
    zeta: float                    # distance weight, > 0 (0 allowed: distance off)
    offset: float                  # global intercept
    surface: Surface
    link_kind: str = LOGISTIC

    def __post_init__(self):
        self.nu = np.asarray(self.nu, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        if self.nu.ndim != 1 or self.z.ndim != 2 or self.nu.shape[0] != self.z.shape[0]:
            raise InvalidInputError("nu and z must be a length-n vector and an (n, d) array")
        if self.n < 2:
            raise InvalidInputError("need at least two nodes")
        if self.zeta < 0:
            raise InvalidInputError("zeta must be nonnegative")
        if self.link_kind not in (LOGISTIC, EXPONENTIAL):
            raise ConfigError(f"unknown link kind {self.link_kind!r}")
        self.surface.check_coords(self.z)

    @property
    def n(self) -> int:
        return self.nu.shape[0]

    def exponent_matrix(self) -> np.ndarray:
        D = geometry.pairwise_distances(self.z, self.surface)
        return self.nu[:, None] + self.nu[None, :] + self.offset - self.zeta * D

    def validate_cap(self) -> None:
        """Exponential link: every dyad probability must stay below 1."""
        if self.link_kind != EXPONENTIAL:
            return
        E = self.exponent_matrix()
        iu = np.triu_indices(self.n, k=1)
        vals = E[iu]
        worst = np.argmax(vals)
        if vals[worst] > EXP_CAP:
            i, j = iu[0][worst], iu[1][worst]
            raise ParameterizationError(
                f"exponential link reaches {np.exp(vals[worst]):.6g} >= 1-1e-6 at dyad ({i}, {j})"
            )

    def probability_matrix(self) -> np.ndarray:
        """Dense symmetric link-probability matrix with a zero diagonal."""
        self.validate_cap()
        P = link_value(self.exponent_matrix(), self.link_kind)
        np.fill_diagonal(P, 0.0)
        return P

    def expected_mean_degree(self) -> float:
        return float(self.probability_matrix().sum() / self.n)


def link_probability(theta: ModelParams, i: int, j: int) -> float:
    """Probability that nodes i and j link."""
    if i == j:
        raise InvalidInputError("link probability is undefined for i == j")
    d = geometry.geodesic_distance(theta.z[i], theta.z[j], theta.surface)
    x = theta.nu[i] + theta.nu[j] + theta.offset - theta.zeta * d
    if theta.link_kind == EXPONENTIAL and x > EXP_CAP:
        raise ParameterizationError(
            f"exponential link reaches {np.exp(x):.6g} >= 1-1e-6 at dyad ({i}, {j})"
        )
    return float(link_value(x, theta.link_kind))


def calibrate_offset(theta: ModelParams, target_mean_degree: float,
                     lo: float = -50.0, hi: float = 50.0, tol: float = 1e-6) -> float:
    """Offset giving the requested expected mean degree, by bisection.

    Both links are strictly increasing in the offset, so the root is unique.
    Returns the offset; the caller decides whether to install it.
    """
    n = theta.n
    if not 0 < target_mean_degree < n - 1:
        raise InvalidInputError("target mean degree must lie in (0, n-1)")
    base = theta.exponent_matrix() - theta.offset
    iu = np.triu_indices(n, k=1)
    dyads = base[iu]

    def mean_degree(alpha):
        p = link_value(dyads + alpha, theta.link_kind)
        if theta.link_kind == EXPONENTIAL:
            p = np.minimum(p, 1.0)
        return 2.0 * p.sum() / n

    flo, fhi = mean_degree(lo), mean_degree(hi)
    if not flo <= target_mean_degree <= fhi:
        raise CalibrationError(
            f"target mean degree {target_mean_degree} outside achievable range "
            f"[{flo:.6g}, {fhi:.6g}] for offset in [{lo}, {hi}]"
        )
    a, b = lo, hi
    mid = 0.5 * (a + b)
    for _ in range(200):
        mid = 0.5 * (a + b)
        f = mean_degree(mid)
        if abs(f - target_mean_degree) <= tol:
            return mid
        if f < target_mean_degree:
            a = mid
        else:
            b = mid
    raise CalibrationError("bisection failed to reach the requested tolerance")


@dataclass(frozen=True)
class GenConfig:
    """How to draw i.i.d. node parameters for one network."""

    nu_mean: float = -2.0
    nu_sd: float = 0.5
    nu_lo: float = -3.0
    nu_hi: float = -1.0
    z_mode: str = "uniform"        # "uniform" | "vmf_mixture"
    z_centers: int = 4             # mixture components for vmf_mixture
    z_concentration: float = 4.0
    zeta: float = 1.0
    zeta_range: tuple[float, float] | None = None  # draw uniform if set
    link_kind: str = LOGISTIC
    surface: Surface = field(default_factory=Surface.sphere)
    target_mean_degree: float | None = None        # calibrate offset if set
    offset: float = 0.0

    def __post_init__(self):
        if self.nu_sd < 0:
            raise ConfigError("nu_sd must be nonnegative")
        if self.nu_lo > self.nu_hi:
            raise ConfigError("nu truncation interval is empty")
        if self.z_mode not in ("uniform", "vmf_mixture"):
            raise ConfigError(f"unknown z_mode {self.z_mode!r}")
        if self.z_mode == "vmf_mixture" and self.z_centers < 1:
            raise ConfigError("vmf_mixture needs at least one center")
        if self.zeta_range is not None and self.zeta_range[0] > self.zeta_range[1]:
            raise ConfigError("zeta_range is empty")


def _truncated_normal(mean, sd, lo, hi, size, rng) -> np.ndarray:
    if sd == 0.0:
        val = min(max(mean, lo), hi)
        return np.full(size, val)
    out = np.empty(size)
    filled = 0
    while filled < size:
        draw = rng.normal(mean, sd, size=2 * (size - filled) + 8)
        draw = draw[(draw >= lo) & (draw <= hi)][: size - filled]
        out[filled : filled + draw.size] = draw
        filled += draw.size
    return out


def sample_parameters(n: int, config: GenConfig, rng: np.random.Generator) -> ModelParams:
    """Draw i.i.d. (nu_i, z_i), set zeta, and calibrate the offset if requested."""
    if n < 2:
        raise InvalidInputError("need at least two nodes")
    nu = _truncated_normal(config.nu_mean, config.nu_sd, config.nu_lo, config.nu_hi, n, rng)
    surf = config.surface
    if config.z_mode == "uniform":
        z = np.asarray(geometry.sample_uniform(surf, rng, size=n))
    else:
        centers = np.asarray(geometry.sample_uniform(surf, rng, size=config.z_centers))
        which = rng.integers(0, config.z_centers, size=n)
        z = np.empty((n, surf.ambient_dim))
        for c in range(config.z_centers):
            mask = which == c
            if mask.any():
                z[mask] = geometry.sample_vmf(
                    geometry.Point(centers[c]), config.z_concentration, rng, size=int(mask.sum())
                )
    zeta = config.zeta
    if config.zeta_range is not None:
        zeta = float(rng.uniform(*config.zeta_range))
    theta = ModelParams(nu=nu, z=z, zeta=zeta, offset=config.offset,
                        surface=surf, link_kind=config.link_kind)
    if config.target_mean_degree is not None:
        theta.offset = calibrate_offset(theta, config.target_mean_degree)
    theta.validate_cap()
    return theta


class Graph:
    """Undirected simple graph with adjacency-list and dense row views."""

    __slots__ = ("n", "edges", "_indptr", "_indices", "_dense", "_degree")

    def __init__(self, n: int, edges: np.ndarray):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            lo = edges.min(axis=1)
            hi = edges.max(axis=1)
            if np.any(lo == hi):
                raise InvalidInputError("self-loops are not allowed")
            if lo.min() < 0 or hi.max() >= n:
                raise InvalidInputError("edge endpoint out of range")
            edges = np.stack([lo, hi], axis=1)
            order = np.lexsort((edges[:, 1], edges[:, 0]))
            edges = edges[order]
            if edges.shape[0] > 1 and np.any(np.all(np.diff(edges, axis=0) == 0, axis=1)):
                raise InvalidInputError("duplicate edges are not allowed")
        self.n = int(n)
        self.edges = edges
        self._indptr = None
        self._indices = None
        self._dense = None
        self._degree = None

    @property
    def edge_count(self) -> int:
        return self.edges.shape[0]

    def density(self) -> float:
        if self.n < 2:
            return 0.0
        return 2.0 * self.edge_count / (self.n * (self.n - 1))

    def degrees(self) -> np.ndarray:
        if self._degree is None:
            deg = np.zeros(self.n, dtype=np.int64)
            if self.edges.size:
                np.add.at(deg, self.edges[:, 0], 1)
                np.add.at(deg, self.edges[:, 1], 1)
            self._degree = deg
        return self._degree

    def _build_csr(self):
        both = np.concatenate([self.edges, self.edges[:, ::-1]], axis=0) if self.edges.size \
            else np.empty((0, 2), dtype=np.int64)
        order = np.lexsort((both[:, 1], both[:, 0]))
        both = both[order]
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.add.at(indptr, both[:, 0] + 1, 1)
        np.cumsum(indptr, out=indptr)
        self._indptr = indptr
        self._indices = both[:, 1].copy()

    @property
    def indptr(self) -> np.ndarray:
        if self._indptr is None:
            self._build_csr()
        return self._indptr

    @property
    def indices(self) -> np.ndarray:
        if self._indices is None:
            self._build_csr()
        return self._indices

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def adjacency(self) -> np.ndarray:
        """Dense boolean adjacency; rows give O(1) edge queries."""
        if self._dense is None:
            A = np.zeros((self.n, self.n), dtype=bool)
            if self.edges.size:
                A[self.edges[:, 0], self.edges[:, 1]] = True
                A[self.edges[:, 1], self.edges[:, 0]] = True
            self._dense = A
        return self._dense

    def has_edge(self, i: int, j: int) -> bool:
        return bool(self.adjacency()[i, j])

    def to_text(self) -> str:
        lines = [f"n {self.n}"]
        lines.extend(f"{i} {j}" for i, j in self.edges)
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "Graph":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("n "):
            raise InvalidInputError("edge list must start with a 'n <count>' header")
        n = int(lines[0].split()[1])
        edges = []
        for ln in lines[1:]:
            i, j = ln.split()
            edges.append((int(i), int(j)))
        return Graph(n, np.array(edges, dtype=np.int64).reshape(-1, 2))

    def permuted(self, perm: np.ndarray) -> "Graph":
        """Graph with node i relabeled to perm[i]."""
        perm = np.asarray(perm, dtype=np.int64)
        if self.edges.size == 0:
            return Graph(self.n, self.edges)
        return Graph(self.n, perm[self.edges])


def sample_graph(theta: ModelParams, rng: np.random.Generator) -> Graph:
    """One Bernoulli realization of the formation model."""
    P = theta.probability_matrix()
    return sample_graph_from_probabilities(P, rng)


def sample_graph_from_probabilities(P: np.ndarray, rng: np.random.Generator) -> Graph:
    n = P.shape[0]
    iu = np.triu_indices(n, k=1)
    u = rng.random(iu[0].size)
    hit = u < P[iu]
    edges = np.stack([iu[0][hit], iu[1][hit]], axis=1)
    return Graph(n, edges)
