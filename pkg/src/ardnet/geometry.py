"""Points, distances, samplers, and isometries on constant-curvature surfaces.

Three geometries are supported: the sphere S^p (curvature > 0, points stored
as unit vectors in R^{p+1}), Euclidean space R^p, and the hyperboloid model
of hyperbolic space (curvature < 0, points on the upper sheet of
<x,x>_M = -1 in Minkowski space R^{p,1} with signature (-,+,...,+)).

All samplers take an explicit numpy Generator; everything here is pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, UnsupportedOperationError

SPHERICAL = "spherical"
EUCLIDEAN = "euclidean"
HYPERBOLIC = "hyperbolic"

# Inner products this far outside [-1, 1] are treated as data errors rather
# than floating-point noise.
CLAMP_TOL = 1e-9
POINT_TOL = 1e-12


@dataclass(frozen=True)
class Surface:
    """A simply connected constant-curvature surface M^p(kappa)."""

    kind: str
    dim: int
    curvature: float

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidInputError(f"surface dimension must be >= 1, got {self.dim}")
        if self.kind == SPHERICAL and not self.curvature > 0:
            raise InvalidInputError("spherical surface requires curvature > 0")
        if self.kind == EUCLIDEAN and self.curvature != 0:
            raise InvalidInputError("euclidean surface requires curvature == 0")
        if self.kind == HYPERBOLIC and not self.curvature < 0:
            raise InvalidInputError("hyperbolic surface requires curvature < 0")
        if self.kind not in (SPHERICAL, EUCLIDEAN, HYPERBOLIC):
            raise InvalidInputError(f"unknown surface kind {self.kind!r}")

    @staticmethod
    def sphere(dim: int = 2, curvature: float = 1.0) -> "Surface":
        return Surface(SPHERICAL, dim, curvature)

    @staticmethod
    def euclidean(dim: int = 2) -> "Surface":
        return Surface(EUCLIDEAN, dim, 0.0)

    @staticmethod
    def hyperbolic(dim: int = 2, curvature: float = -1.0) -> "Surface":
        return Surface(HYPERBOLIC, dim, curvature)

    @property
    def ambient_dim(self) -> int:
        """Length of coordinate vectors representing points."""
        return self.dim if self.kind == EUCLIDEAN else self.dim + 1

    def check_coords(self, coords: np.ndarray) -> None:
        coords = np.asarray(coords, dtype=float)
        if coords.shape[-1] != self.ambient_dim:
            raise InvalidInputError(
                f"expected coordinate length {self.ambient_dim}, got {coords.shape[-1]}"
            )
        if self.kind == SPHERICAL:
            nrm = np.linalg.norm(coords, axis=-1)
            if not np.all(np.abs(nrm - 1.0) <= 1e-9):
                raise InvalidInputError("spherical point is not on the unit sphere")
        elif self.kind == HYPERBOLIC:
            q = minkowski_dot(coords, coords)
            if not (np.all(np.abs(q + 1.0) <= 1e-9) and np.all(coords[..., 0] > 0)):
                raise InvalidInputError("hyperbolic point is not on the upper hyperboloid sheet")


@dataclass(frozen=True)
class Point:
    """A point on a surface; coordinates in the surface's ambient space."""

    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))

    def __eq__(self, other):
        return isinstance(other, Point) and np.array_equal(self.coords, other.coords)


@dataclass(frozen=True)
class Isometry:
    """A distance-preserving linear map; translation only in the Euclidean case."""

    matrix: np.ndarray
    translation: np.ndarray | None = field(default=None)


def minkowski_dot(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """<x,y>_M = -x0*y0 + sum_i xi*yi (broadcasts over leading axes)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.sum(x * y, axis=-1) - 2.0 * x[..., 0] * y[..., 0]


def _coords(a) -> np.ndarray:
    return a.coords if isinstance(a, Point) else np.asarray(a, dtype=float)


def clamp_unit(t, tol: float = CLAMP_TOL):
    """Clamp an inner product into [-1, 1]; error beyond `tol` outside."""
    t = np.asarray(t, dtype=float)
    if np.any(t > 1.0 + tol) or np.any(t < -1.0 - tol):
        raise InvalidInputError("inner product outside [-1, 1] beyond tolerance")
    return np.clip(t, -1.0, 1.0)


def geodesic_distance(a, b, s: Surface) -> float:
    """Geodesic distance between two points of `s`."""
    x, y = _coords(a), _coords(b)
    if x.shape != y.shape or x.shape[-1] != s.ambient_dim:
        raise InvalidInputError("dimension mismatch between points and surface")
    if np.array_equal(x, y):
        return 0.0
    if s.kind == EUCLIDEAN:
        return float(np.linalg.norm(x - y))
    if s.kind == SPHERICAL:
        t = clamp_unit(np.dot(x, y))
        return float(np.arccos(t) / np.sqrt(s.curvature))
    # hyperbolic: -<x,y>_M >= 1 on the hyperboloid
    q = -minkowski_dot(x, y)
    if q < 1.0 - CLAMP_TOL:
        raise InvalidInputError("Minkowski product outside hyperboloid domain")
    return float(np.arccosh(max(q, 1.0)) / np.sqrt(-s.curvature))


def distance_matrix(X: np.ndarray, Y: np.ndarray, s: Surface) -> np.ndarray:
    """Pairwise geodesic distances between coordinate rows of X and Y."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if s.kind == EUCLIDEAN:
        diff = X[:, None, :] - Y[None, :, :]
        return np.linalg.norm(diff, axis=-1)
    if s.kind == SPHERICAL:
        t = np.clip(X @ Y.T, -1.0, 1.0)
        return np.arccos(t) / np.sqrt(s.curvature)
    g = X @ Y.T - 2.0 * np.outer(X[:, 0], Y[:, 0])
    return np.arccosh(np.maximum(-g, 1.0)) / np.sqrt(-s.curvature)


def pairwise_distances(X: np.ndarray, s: Surface) -> np.ndarray:
    """Full symmetric distance matrix with an exactly-zero diagonal."""
    D = distance_matrix(X, X, s)
    np.fill_diagonal(D, 0.0)
    return D


def project(v, s: Surface) -> Point:
    """Nearest point of `s` to an ambient vector (retraction for gradient steps)."""
    v = _coords(v)
    if v.shape[-1] != s.ambient_dim:
        raise InvalidInputError("dimension mismatch")
    if s.kind == EUCLIDEAN:
        return Point(v.copy())
    if s.kind == SPHERICAL:
        nrm = np.linalg.norm(v)
        if nrm == 0.0:
            raise InvalidInputError("cannot project the zero vector onto the sphere")
        return Point(v / nrm)
    q = -minkowski_dot(v, v)
    if q <= 0.0:
        raise InvalidInputError("vector is not timelike; cannot project onto hyperboloid")
    w = v / np.sqrt(q)
    if w[0] < 0:
        w = -w
    return Point(w)


def hyperboloid_lift(u) -> Point:
    """Lift a vector u in R^p to the upper hyperboloid sheet: (sqrt(1+|u|^2), u)."""
    u = np.asarray(u, dtype=float)
    return Point(np.concatenate(([np.sqrt(1.0 + u @ u)], u)))


def sample_uniform(s: Surface, rng: np.random.Generator, size: int | None = None,
                   extent: float = 1.0):
    """Uniform draw(s): sphere via normalized Gaussians, Euclidean over the
    box [-extent, extent]^p, hyperbolic over the intrinsic ball of radius
    `extent` (density proportional to the volume element sinh^{p-1})."""
    n = 1 if size is None else size
    if s.kind == SPHERICAL:
        g = rng.standard_normal((n, s.ambient_dim))
        X = g / np.linalg.norm(g, axis=1, keepdims=True)
    elif s.kind == EUCLIDEAN:
        X = rng.uniform(-extent, extent, size=(n, s.dim))
    else:
        X = _sample_hyperbolic_ball(s, rng, n, extent)
    if size is None:
        return Point(X[0])
    return X


def _sample_hyperbolic_ball(s: Surface, rng, n: int, radius: float) -> np.ndarray:
    p = s.dim
    tmax = radius * np.sqrt(-s.curvature)
    # rejection against the uniform proposal on [0, tmax]
    t = np.empty(n)
    filled = 0
    peak = np.sinh(tmax) ** (p - 1) if p > 1 else 1.0
    while filled < n:
        cand = rng.uniform(0.0, tmax, size=2 * (n - filled) + 8)
        if p > 1:
            keep = rng.uniform(0.0, peak, size=cand.size) < np.sinh(cand) ** (p - 1)
            cand = cand[keep]
        take = cand[: n - filled]
        t[filled : filled + take.size] = take
        filled += take.size
    g = rng.standard_normal((n, p))
    u = g / np.linalg.norm(g, axis=1, keepdims=True)
    return np.concatenate([np.cosh(t)[:, None], np.sinh(t)[:, None] * u], axis=1)


def _vmf_radial(concentration: float, m: int, rng, n: int) -> np.ndarray:
    """Rejection sampler for the cosine of the polar angle of vMF on S^m."""
    if concentration == 0.0:
        return 1.0 - 2.0 * rng.beta(m / 2.0, m / 2.0, size=n)
    b = m / (np.sqrt(4.0 * concentration**2 + m**2) + 2.0 * concentration)
    x0 = (1.0 - b) / (1.0 + b)
    c = concentration * x0 + m * np.log(1.0 - x0**2)
    out = np.empty(n)
    filled = 0
    while filled < n:
        want = n - filled
        z = rng.beta(m / 2.0, m / 2.0, size=2 * want + 8)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(size=w.size)
        ok = concentration * w + m * np.log1p(-x0 * w) - c >= np.log(u)
        w = w[ok][:want]
        out[filled : filled + w.size] = w
        filled += w.size
    return out


def sample_vmf(center, concentration: float, rng: np.random.Generator,
               size: int | None = None):
    """von Mises-Fisher draw(s) on the sphere around `center`.

    Radial component by the standard rejection scheme, tangent direction
    uniform in the orthogonal complement of the center.
    """
    if concentration < 0:
        raise InvalidInputError("vMF concentration must be nonnegative")
    mu = _coords(center)
    d = mu.shape[-1]
    if d < 2:
        raise UnsupportedOperationError("vMF sampling requires an embedded sphere (dim >= 1)")
    nrm = np.linalg.norm(mu)
    if not np.isfinite(nrm) or abs(nrm - 1.0) > 1e-6:
        raise InvalidInputError("vMF center must be a unit vector")
    n = 1 if size is None else size
    w = _vmf_radial(float(concentration), d - 1, rng, n)
    g = rng.standard_normal((n, d))
    g -= np.outer(g @ mu, mu)
    gn = np.linalg.norm(g, axis=1, keepdims=True)
    # a zero tangent seed has probability zero; regenerate defensively
    bad = gn[:, 0] == 0.0
    while np.any(bad):
        g[bad] = rng.standard_normal((int(bad.sum()), d))
        g[bad] -= np.outer(g[bad] @ mu, mu)
        gn = np.linalg.norm(g, axis=1, keepdims=True)
        bad = gn[:, 0] == 0.0
    v = g / gn
    X = w[:, None] * mu + np.sqrt(np.maximum(1.0 - w**2, 0.0))[:, None] * v
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    if size is None:
        return Point(X[0])
    return X


def vmf_point(center, concentration: float, rng: np.random.Generator) -> Point:
    """Single vMF draw (requires a spherical embedding)."""
    return sample_vmf(center, concentration, rng)


def _haar_orthogonal(d: int, rng) -> np.ndarray:
    """Haar-distributed orthogonal matrix: QR of a Gaussian with sign correction."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def random_isometry(s: Surface, rng: np.random.Generator) -> Isometry:
    """A random isometry of the surface."""
    if s.kind == SPHERICAL:
        return Isometry(_haar_orthogonal(s.ambient_dim, rng))
    if s.kind == EUCLIDEAN:
        return Isometry(_haar_orthogonal(s.dim, rng), rng.standard_normal(s.dim))
    # hyperbolic: spatial rotation composed with a boost along the first axis
    p = s.dim
    rot = np.eye(p + 1)
    rot[1:, 1:] = _haar_orthogonal(p, rng)
    rap = rng.normal(0.0, 0.5)
    boost = np.eye(p + 1)
    boost[0, 0] = boost[1, 1] = np.cosh(rap)
    boost[0, 1] = boost[1, 0] = np.sinh(rap)
    rot2 = np.eye(p + 1)
    rot2[1:, 1:] = _haar_orthogonal(p, rng)
    return Isometry(rot2 @ boost @ rot)


def apply_isometry(T: Isometry, x):
    """Apply an isometry to a Point (returns Point) or coordinate array."""
    c = _coords(x)
    out = c @ T.matrix.T
    if T.translation is not None:
        out = out + T.translation
    if isinstance(x, Point):
        return Point(out)
    return out


def invert_isometry(T: Isometry) -> Isometry:
    # matrix inverse (not transpose: Lorentz maps are not orthogonal)
    Minv = np.linalg.inv(T.matrix)
    if T.translation is None:
        return Isometry(Minv)
    return Isometry(Minv, -(Minv @ T.translation))
