"""Trait assignment and Aggregated Relational Data construction.

ARD row i holds, for each trait k, the number of i's edges into the trait
group G_k. Traits can be placed independently of latent positions
("uniform") or clustered around trait centers on the surface so that group
membership carries geometric information ("clustered", the default).
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import ConfigError, EstimationError, InvalidInputError
from .geometry import Surface
from .netgen import Graph

PARTITION = "partition"
OVERLAPPING = "overlapping"

MIN_TRAITS = 4  # the estimation theory needs K > 3


@dataclass(frozen=True)
class TraitConfig:
    mode: str = PARTITION          # partition | overlapping
    placement: str = "clustered"   # clustered | uniform
    concentration: float = 4.0     # per-trait vMF concentration tau_k
    max_redraws: int = 100


@dataclass
class TraitAssignment:
    """Node -> trait membership plus the geometry used to generate it."""

    K: int
    members: list[np.ndarray]          # node indices per trait
    mode: str
    centers: np.ndarray | None = None         # (K, d) trait centers
    concentrations: np.ndarray | None = None  # (K,)
    labels: np.ndarray | None = None           # partition mode: node -> trait

    def __post_init__(self):
        if self.K <= 3:
            raise ConfigError("need more than three traits (K > 3)")
        if len(self.members) != self.K:
            raise InvalidInputError("membership list length must equal K")
        for g in self.members:
            if g.size == 0:
                raise InvalidInputError("every trait group must be nonempty")

    @property
    def sizes(self) -> np.ndarray:
        return np.array([g.size for g in self.members], dtype=np.int64)

    def indicator(self, n: int) -> np.ndarray:
        """(n, K) 0/1 membership matrix."""
        M = np.zeros((n, self.K), dtype=np.int64)
        for k, g in enumerate(self.members):
            M[g, k] = 1
        return M

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("node,trait\n")
        for k, g in enumerate(self.members):
            for node in g:
                buf.write(f"{node},{k}\n")
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str, K: int | None = None, mode: str = PARTITION) -> "TraitAssignment":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != "node,trait":
            raise InvalidInputError("trait file must start with a 'node,trait' header")
        pairs = [tuple(int(x) for x in ln.split(",")) for ln in lines[1:]]
        kmax = max(k for _, k in pairs) + 1 if pairs else 0
        K = kmax if K is None else K
        members = [[] for _ in range(K)]
        for node, k in pairs:
            members[k].append(node)
        return TraitAssignment(K=K, members=[np.array(sorted(m), dtype=np.int64) for m in members],
                               mode=mode)


def assign_traits(z: np.ndarray, K: int, config: TraitConfig, rng: np.random.Generator,
                  surface: Surface | None = None) -> TraitAssignment:
    """Assign each node to trait group(s).

    Clustered placement draws trait centers uniformly on the surface and
    weights node i's membership in trait k proportional to
    exp(tau_k * <mu_k, z_i>). Partition mode draws one trait per node from
    those weights (the nearest-center assignment is the high-concentration
    limit); overlapping mode includes each trait independently with the
    normalized weight. Uniform placement ignores positions entirely.
    """
    if K <= 3:
        raise ConfigError("need more than three traits (K > 3)")
    z = np.asarray(z, dtype=float)
    n = z.shape[0]
    if surface is None:
        surface = Surface.sphere(z.shape[1] - 1)

    for attempt in range(config.max_redraws):
        if config.placement == "uniform":
            centers = None
            taus = None
            weights = np.full((n, K), 1.0 / K)
        elif config.placement == "clustered":
            if surface.kind != geometry.SPHERICAL:
                raise ConfigError("clustered trait placement requires a spherical surface")
            centers = np.asarray(geometry.sample_uniform(surface, rng, size=K))
            taus = np.full(K, float(config.concentration))
            logits = taus[None, :] * (z @ centers.T)
            logits -= logits.max(axis=1, keepdims=True)
            weights = np.exp(logits)
            weights /= weights.sum(axis=1, keepdims=True)
        else:
            raise ConfigError(f"unknown trait placement {config.placement!r}")

        if config.mode == PARTITION:
            u = rng.random((n, 1))
            labels = (weights.cumsum(axis=1) < u).sum(axis=1)
            labels = np.minimum(labels, K - 1)
            members = [np.flatnonzero(labels == k) for k in range(K)]
        elif config.mode == OVERLAPPING:
            inc = rng.random((n, K)) < weights
            labels = None
            members = [np.flatnonzero(inc[:, k]) for k in range(K)]
        else:
            raise ConfigError(f"unknown trait mode {config.mode!r}")

        if all(m.size > 0 for m in members):
            return TraitAssignment(K=K, members=members, mode=config.mode,
                                   centers=centers, concentrations=taus, labels=labels)
    raise EstimationError(f"failed to draw nonempty trait groups in {config.max_redraws} attempts")


def sample_respondents(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform simple random sample of m respondents, sorted."""
    if not 1 <= m <= n:
        raise InvalidInputError(f"respondent count {m} outside [1, {n}]")
    return np.sort(rng.choice(n, size=m, replace=False))


@dataclass
class ARDMatrix:
    """Counts y[i, k] = number of edges from respondent i into trait group k."""

    respondents: np.ndarray     # m node indices (ordered)
    counts: np.ndarray          # (m, K) nonnegative integers

    def __post_init__(self):
        self.respondents = np.asarray(self.respondents, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.respondents.shape[0]:
            raise InvalidInputError("counts must be an (m, K) matrix matching respondents")
        if np.any(self.counts < 0):
            raise InvalidInputError("ARD counts must be nonnegative")

    @property
    def m(self) -> int:
        return self.respondents.shape[0]

    @property
    def K(self) -> int:
        return self.counts.shape[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("respondent," + ",".join(f"k{k}" for k in range(self.K)) + "\n")
        for i, row in zip(self.respondents, self.counts):
            buf.write(str(i) + "," + ",".join(str(c) for c in row) + "\n")
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str) -> "ARDMatrix":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("respondent,"):
            raise InvalidInputError("ARD file must start with a 'respondent,k0,...' header")
        K = len(lines[0].split(",")) - 1
        resp, rows = [], []
        for ln in lines[1:]:
            parts = ln.split(",")
            if len(parts) != K + 1:
                raise InvalidInputError("ARD row width does not match header")
            resp.append(int(parts[0]))
            rows.append([int(x) for x in parts[1:]])
        return ARDMatrix(np.array(resp), np.array(rows))


def build_ard(g: Graph, traits: TraitAssignment, respondents: np.ndarray) -> ARDMatrix:
    """Exact ARD counts from a realized graph (self never counted)."""
    respondents = np.asarray(respondents, dtype=np.int64)
    if respondents.size and (respondents.min() < 0 or respondents.max() >= g.n):
        raise InvalidInputError("respondent index out of range")
    for grp in traits.members:
        if grp.size and (grp.min() < 0 or grp.max() >= g.n):
            raise InvalidInputError("trait member index out of range")
    M = traits.indicator(g.n)
    A = g.adjacency()
    counts = A[respondents].astype(np.int64) @ M
    return ARDMatrix(respondents=respondents, counts=counts)
