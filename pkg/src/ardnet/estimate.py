"""Poisson maximum-likelihood recovery of formation-model parameters from ARD.

The rate for respondent i and trait k is
    lambda_ik = N_k * (1/Q) * sum_q Lambda(nu_i + nu_bar + alpha - zeta * d(z_i, w_q)),
a Monte Carlo average over Q vMF(mu_k, tau_k) draws w_q. The draws are
parameterized in the frame of (mu_k, z_i): a radial cosine from the vMF
inverse CDF (closed form on S^2) and an antithetic azimuth pair, driven by
uniforms fixed per fit (common random numbers). The rate therefore depends
on positions only through <z_i, mu_k>, making the objective a fixed smooth
function that is exactly invariant under joint isometries of z and mu, and
differentiable in every parameter including tau.

Estimation is supported on the unit 2-sphere.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from . import geometry, rng as rngmod, textio
from .ard import ARDMatrix
from .errors import (
    AlignmentError,
    ConfigError,
    EstimationError,
    InvalidInputError,
    NumericalDomainError,
)
from .geometry import Isometry, Surface
from .netgen import LOGISTIC, ModelParams, link_value

TCLIP = 1.0 - 1e-12       # keep <z, mu> strictly inside (-1, 1)
S_FLOOR = 1e-14           # floor for 1 - s^2 in derivative denominators
U_CLIP = 1e-6             # radial uniforms kept inside [U_CLIP, 1 - U_CLIP]


# ------------------------------------------------------------- quadrature


@dataclass(frozen=True)
class Quadrature:
    """Common random numbers for the per-trait vMF expectation."""

    seed: int
    q_total: int                 # effective draw count (even)
    u: np.ndarray                # (K, Q/2) radial uniforms
    cos_phi: np.ndarray          # (K, Q/2) azimuth cosines

    @staticmethod
    def make(seed: int, K: int, q: int) -> "Quadrature":
        if q < 1:
            raise ConfigError("integration draw count Q must be >= 1")
        qh = (q + 1) // 2
        u = np.empty((K, qh))
        cp = np.empty((K, qh))
        for k in range(K):
            gen = rngmod.derive(seed, rngmod.DOMAIN_QUAD, k)
            u[k] = np.clip(gen.uniform(size=qh), U_CLIP, 1.0 - U_CLIP)
            cp[k] = np.cos(gen.uniform(0.0, 2.0 * np.pi, size=qh))
        return Quadrature(seed=seed, q_total=2 * qh, u=u, cos_phi=cp)


def _radial_cosine(tau: float, u: np.ndarray):
    """Inverse-CDF vMF radial cosine on S^2 and its tau-derivative."""
    if tau == 0.0:
        w = 2.0 * u - 1.0
        dw = 2.0 * u * (1.0 - u)
        return w, dw
    a = (1.0 - u) * math.expm1(-2.0 * tau)
    log_s = np.log1p(a)
    w = 1.0 + log_s / tau
    s = 1.0 + a
    ds = -2.0 * (1.0 - u) * math.exp(-2.0 * tau)
    dw = (-log_s / tau + ds / s) / tau
    return w, dw


# ------------------------------------------------------------- model


@dataclass
class ArdModel:
    """Estimable ARD rate model on the unit 2-sphere."""

    nu: np.ndarray               # (m,) respondent effects
    z: np.ndarray                # (m, 3) respondent positions
    zeta: float
    offset: float
    mu: np.ndarray               # (K, 3) trait centers
    tau: np.ndarray              # (K,) trait concentrations >= 0
    trait_sizes: np.ndarray      # (K,) known group sizes N_k
    nu_bar: float                # configured population mean of nu
    quad: Quadrature
    link_kind: str = LOGISTIC
    surface: Surface = field(default_factory=Surface.sphere)
    respondents: np.ndarray | None = None

    def __post_init__(self):
        self.nu = np.asarray(self.nu, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        self.tau = np.asarray(self.tau, dtype=float)
        self.trait_sizes = np.asarray(self.trait_sizes, dtype=float)
        if self.surface.kind != geometry.SPHERICAL or self.surface.ambient_dim != 3:
            raise ConfigError("ARD estimation is supported on the unit 2-sphere")
        if self.z.shape != (self.nu.shape[0], 3) or self.mu.shape != (self.K, 3):
            raise InvalidInputError("position array shapes do not match the model")
        if np.any(self.tau < 0):
            raise InvalidInputError("trait concentrations must be nonnegative")
        if self.zeta < 0:
            raise InvalidInputError("zeta must be nonnegative")
        self.surface.check_coords(self.z)
        self.surface.check_coords(self.mu)

    @property
    def m(self) -> int:
        return self.nu.shape[0]

    @property
    def K(self) -> int:
        return self.tau.shape[0]

    def rate_matrix(self) -> np.ndarray:
        lam, _ = _forward(self.nu, self.z, self.zeta, self.offset, self.mu, self.tau,
                          self.trait_sizes, self.nu_bar, self.link_kind, self.quad,
                          want_cache=False)
        return lam

    def implied_link_probabilities(self) -> np.ndarray:
        """Respondent-dyad link probabilities implied by the fit.

        One nu_bar is added back because the rate parameterization absorbs
        the alter-side mean effect into the offset.
        """
        D = geometry.pairwise_distances(self.z, self.surface)
        E = self.nu[:, None] + self.nu[None, :] + self.offset + self.nu_bar - self.zeta * D
        P = link_value(E, self.link_kind)
        np.fill_diagonal(P, 0.0)
        return P

    def canonical(self) -> "ArdModel":
        """Representative with the gauge fixed: mu_1 at the north pole, mu_2
        on the x>0 half of the y=0 great circle, mu_3 with y >= 0."""
        T = _gauge_isometry(self.mu)
        return replace(self, z=self.z @ T.T, mu=self.mu @ T.T)


def _rotation_taking(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rotation matrix sending unit vector a to unit vector b."""
    c = float(a @ b)
    if c > 1.0 - 1e-14:
        return np.eye(3)
    if c < -1.0 + 1e-14:
        # 180 degrees about any axis perpendicular to a
        axis = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(axis) < 1e-8:
            axis = np.cross(a, [0.0, 1.0, 0.0])
        axis /= np.linalg.norm(axis)
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    v = np.cross(a, b)
    vx = np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
    return np.eye(3) + vx + vx @ vx / (1.0 + c)


def _gauge_isometry(mu: np.ndarray) -> np.ndarray:
    R1 = _rotation_taking(mu[0], np.array([0.0, 0.0, 1.0]))
    mu1 = mu @ R1.T
    T = R1
    if mu.shape[0] > 1:
        x, y = mu1[1, 0], mu1[1, 1]
        if x * x + y * y > 1e-20:
            ang = math.atan2(y, x)
            c, s = math.cos(-ang), math.sin(-ang)
            R2 = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
            mu1 = mu1 @ R2.T
            T = R2 @ T
    if mu.shape[0] > 2 and mu1[2, 1] < 0:
        R3 = np.diag([1.0, -1.0, 1.0])
        T = R3 @ T
    return T


# ------------------------------------------------------------- rates & likelihood


def _forward(nu, z, zeta, offset, mu, tau, sizes, nu_bar, link_kind, quad, want_cache):
    """Rate matrix (m, K); with want_cache=True also per-trait arrays for
    the gradient pass."""
    m = nu.shape[0]
    K = tau.shape[0]
    base = nu + nu_bar + offset
    lam = np.empty((m, K))
    cache = [] if want_cache else None
    t_all = np.clip(z @ mu.T, -TCLIP, TCLIP)
    for k in range(K):
        wh, dwh = _radial_cosine(float(tau[k]), quad.u[k])
        w = np.concatenate([wh, wh])
        cp = np.concatenate([quad.cos_phi[k], -quad.cos_phi[k]])
        sw = np.sqrt(np.maximum(1.0 - w * w, 0.0))
        tk = t_all[:, k]
        r = np.sqrt(1.0 - tk * tk)
        s = tk[:, None] * w[None, :] + r[:, None] * (sw * cp)[None, :]
        np.clip(s, -1.0, 1.0, out=s)
        d = np.arccos(s)
        a = base[:, None] - zeta * d
        vals = link_value(a, link_kind)
        lam[:, k] = sizes[k] * vals.mean(axis=1)
        if want_cache:
            cache.append((w, cp, sw, dwh, tk, r, s, d, vals))
    return lam, cache


def expected_rate(model: ArdModel, i: int, k: int) -> float:
    """lambda_ik for one respondent/trait cell."""
    if not 0 <= i < model.m or not 0 <= k < model.K:
        raise InvalidInputError("respondent or trait index out of range")
    return float(model.rate_matrix()[i, k])


def _check_dims(model: ArdModel, Y: ARDMatrix):
    if Y.m != model.m or Y.K != model.K:
        raise InvalidInputError("model dimensions do not match the ARD matrix")


def ard_log_likelihood(model: ArdModel, Y: ARDMatrix) -> float:
    """(1/(m^2 K)) sum_ik [-lambda + y log lambda - log(y!)]."""
    _check_dims(model, Y)
    lam = model.rate_matrix()
    if np.any(lam <= 0.0) or not np.all(np.isfinite(lam)):
        raise NumericalDomainError("nonpositive Poisson rate")
    y = Y.counts
    scale = 1.0 / (model.m**2 * model.K)
    return float(scale * np.sum(-lam + y * np.log(lam) - gammaln(y + 1.0)))


@dataclass
class LikelihoodGradient:
    nu: np.ndarray       # (m,)
    z: np.ndarray        # (m, 3), tangent to the sphere at each z_i
    zeta: float
    offset: float
    mu: np.ndarray       # (K, 3), tangent at each mu_k
    tau: np.ndarray      # (K,)


def likelihood_gradient(model: ArdModel, Y: ARDMatrix) -> LikelihoodGradient:
    """Exact analytic gradient of ard_log_likelihood."""
    _check_dims(model, Y)
    _, g = _value_and_gradient(model.nu, model.z, model.zeta, model.offset, model.mu,
                               model.tau, model.trait_sizes, model.nu_bar,
                               model.link_kind, model.quad, Y.counts)
    return g


def _value_and_gradient(nu, z, zeta, offset, mu, tau, sizes, nu_bar, link_kind, quad, y):
    m, K = y.shape
    lam, cache = _forward(nu, z, zeta, offset, mu, tau, sizes, nu_bar, link_kind, quad,
                          want_cache=True)
    if np.any(lam <= 0.0) or not np.all(np.isfinite(lam)):
        raise NumericalDomainError("nonpositive Poisson rate")
    scale = 1.0 / (m * m * K)
    value = float(scale * np.sum(-lam + y * np.log(lam) - gammaln(y + 1.0)))

    q_total = quad.q_total
    coef = (y / lam - 1.0) * sizes[None, :] * (scale / q_total)   # (m, K)
    g_nu = np.zeros(m)
    g_z = np.zeros((m, 3))
    g_mu = np.zeros((K, 3))
    g_tau = np.zeros(K)
    g_alpha = 0.0
    g_zeta = 0.0
    qh = q_total // 2
    for k in range(K):
        w, cp, sw, dwh, tk, r, s, d, vals = cache[k]
        if link_kind == LOGISTIC:
            dvals = vals * (1.0 - vals)
        else:
            dvals = vals
        Ga = coef[:, k][:, None] * dvals
        g_nu += Ga.sum(axis=1)
        g_alpha += float(Ga.sum())
        g_zeta -= float((Ga * d).sum())
        inv = 1.0 / np.sqrt(np.maximum(1.0 - s * s, S_FLOOR))
        Gs = Ga * (zeta * inv)
        B = sw * cp                                   # (Q,)
        dsdt = w[None, :] - (tk / r)[:, None] * B[None, :]
        gt = (Gs * dsdt).sum(axis=1)                  # (m,)
        g_z += gt[:, None] * mu[k][None, :]
        g_mu[k] = z.T @ gt
        # ds/dw = t - w * r * cp / sqrt(1 - w^2)
        with np.errstate(divide="ignore", invalid="ignore"):
            wc = np.where(sw > 0, w * cp / np.where(sw > 0, sw, 1.0), 0.0)
        dsdw = tk[:, None] - r[:, None] * wc[None, :]
        gw = (Gs * dsdw).sum(axis=0)                  # (Q,)
        g_tau[k] = float((gw[:qh] + gw[qh:]) @ dwh)

    g_z -= (g_z * z).sum(axis=1, keepdims=True) * z
    g_mu -= (g_mu * mu).sum(axis=1, keepdims=True) * mu
    grad = LikelihoodGradient(nu=g_nu, z=g_z, zeta=g_zeta, offset=g_alpha, mu=g_mu,
                              tau=g_tau)
    return value, grad


# ------------------------------------------------------------- fitting


@dataclass(frozen=True)
class FitConfig:
    link_kind: str = LOGISTIC
    q_draws: int = 256
    restarts: int = 5
    max_iter: int = 5000
    grad_tol: float = 1e-6
    armijo_c: float = 1e-4
    nu_bar: float = 0.0
    zeta_init: float = 1.0
    tau_init: float = 4.0
    estimate_tau: bool = True
    threads: int = 1
    # compact parameter space: the consistency theory assumes the optimizer
    # searches a known compact set, and without one the small-sample MLE can
    # escape along semi-saturated overfit ridges (huge zeta/tau, nu spread).
    # Bounds are wide relative to realistic social networks.
    nu_cap: float = 4.0
    zeta_bounds: tuple[float, float] = (1e-3, 6.0)
    tau_bounds: tuple[float, float] = (1e-3, 50.0)
    offset_cap: float = 60.0

    def __post_init__(self):
        if self.q_draws < 1:
            raise ConfigError("integration draw count Q must be >= 1")
        if self.restarts < 1:
            raise ConfigError("need at least one restart")


@dataclass
class FitReport:
    model: ArdModel
    loglik: float
    grad_norm: float
    iterations: int
    restarts_used: int
    converged: bool
    seed: int
    config_hash: str = ""

    def to_text(self) -> str:
        m = self.model
        pairs = {
            "format": "ardnet-fitreport-1",
            "seed": self.seed,
            "config_hash": self.config_hash,
            "converged": self.converged,
            "loglik": self.loglik,
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "restarts_used": self.restarts_used,
            "m": m.m,
            "K": m.K,
            "q_draws": m.quad.q_total,
            "link_kind": m.link_kind,
            "nu_bar": m.nu_bar,
            "zeta": m.zeta,
            "offset": m.offset,
            "tau": m.tau,
            "trait_sizes": m.trait_sizes,
            "respondents": m.respondents if m.respondents is not None else [],
            "nu": m.nu,
            "z": m.z.ravel(),
            "mu": m.mu.ravel(),
        }
        return textio.dump_kv(pairs)

    @staticmethod
    def from_text(text: str) -> "FitReport":
        kv = textio.parse_kv(text)
        if kv.get("format") != "ardnet-fitreport-1":
            raise InvalidInputError("not a fit report file")

        def vec(key):
            raw = kv[key].strip()
            return np.array([float(x) for x in raw.split(",")]) if raw else np.empty(0)

        m = int(kv["m"])
        K = int(kv["K"])
        seed = int(kv["seed"])
        quad = Quadrature.make(seed, K, int(kv["q_draws"]))
        resp = vec("respondents").astype(np.int64)
        model = ArdModel(
            nu=vec("nu"), z=vec("z").reshape(m, 3), zeta=float(kv["zeta"]),
            offset=float(kv["offset"]), mu=vec("mu").reshape(K, 3), tau=vec("tau"),
            trait_sizes=vec("trait_sizes"), nu_bar=float(kv["nu_bar"]), quad=quad,
            link_kind=kv["link_kind"], respondents=resp if resp.size else None,
        )
        return FitReport(
            model=model, loglik=float(kv["loglik"]), grad_norm=float(kv["grad_norm"]),
            iterations=int(kv["iterations"]), restarts_used=int(kv["restarts_used"]),
            converged=kv["converged"] == "true", seed=seed,
            config_hash=kv.get("config_hash", ""),
        )


class _Packed:
    """Flat-vector view of the free parameters for the optimizer."""

    def __init__(self, m, K, cfg: FitConfig):
        self.m, self.K = m, K
        self.estimate_tau = cfg.estimate_tau
        self.size = m + 3 * m + 2 + 3 * K + K
        lo = np.full(self.size, -np.inf)
        hi = np.full(self.size, np.inf)
        lo[:m] = -cfg.nu_cap
        hi[:m] = cfg.nu_cap
        lo[4 * m] = math.log(cfg.zeta_bounds[0])
        hi[4 * m] = math.log(cfg.zeta_bounds[1])
        lo[4 * m + 1] = -cfg.offset_cap
        hi[4 * m + 1] = cfg.offset_cap
        lo[4 * m + 2 + 3 * K :] = math.log(cfg.tau_bounds[0])
        hi[4 * m + 2 + 3 * K :] = math.log(cfg.tau_bounds[1])
        self.lower, self.upper = lo, hi

    def pack(self, nu, z, zeta, alpha, mu, tau):
        return np.concatenate([nu, z.ravel(), [math.log(max(zeta, 1e-300)), alpha],
                               mu.ravel(), np.log(np.maximum(tau, 1e-300))])

    def unpack(self, x):
        m, K = self.m, self.K
        nu = x[:m]
        z = x[m : 4 * m].reshape(m, 3)
        zeta = math.exp(x[4 * m])
        alpha = x[4 * m + 1]
        mu = x[4 * m + 2 : 4 * m + 2 + 3 * K].reshape(K, 3)
        tau = np.exp(x[4 * m + 2 + 3 * K :])
        return nu, z, zeta, alpha, mu, tau

    def retract(self, x):
        m, K = self.m, self.K
        out = np.clip(x, self.lower, self.upper)
        nu = out[:m]
        shift = nu.mean()
        nu -= shift
        out[4 * m + 1] = min(max(out[4 * m + 1] + shift, self.lower[4 * m + 1]),
                             self.upper[4 * m + 1])
        z = out[m : 4 * m].reshape(m, 3)
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        mu = out[4 * m + 2 : 4 * m + 2 + 3 * K].reshape(K, 3)
        mu /= np.linalg.norm(mu, axis=1, keepdims=True)
        return out

    def project_grad(self, x, g):
        """Zero minimization-gradient components blocked by active bounds."""
        eps = 1e-12
        blocked_lo = (x <= self.lower + eps) & (g > 0)
        blocked_hi = (x >= self.upper - eps) & (g < 0)
        out = g.copy()
        out[blocked_lo | blocked_hi] = 0.0
        return out

    def pack_grad(self, g: LikelihoodGradient, zeta, tau):
        gn = g.nu - g.nu.mean()       # gauge: sum(nu) fixed at 0
        gtau = g.tau * tau if self.estimate_tau else np.zeros_like(tau)
        return np.concatenate([gn, g.z.ravel(), [g.zeta * zeta, g.offset],
                               g.mu.ravel(), gtau])

    def chain_grad(self, x_raw, g):
        """Gradient of f(retract(x)) at an arbitrary x, given the packed
        gradient g at the retracted point (exact retraction chain rule)."""
        m, K = self.m, self.K
        out = g.copy()
        out[:m] += g[4 * m + 1] / m   # offset absorbs the nu level shift
        zr = np.linalg.norm(x_raw[m : 4 * m].reshape(m, 3), axis=1)
        out[m : 4 * m] = (g[m : 4 * m].reshape(m, 3) / zr[:, None]).ravel()
        mu_block = slice(4 * m + 2, 4 * m + 2 + 3 * K)
        mr = np.linalg.norm(x_raw[mu_block].reshape(K, 3), axis=1)
        out[mu_block] = (g[mu_block].reshape(K, 3) / mr[:, None]).ravel()
        return out


def _fibonacci_sphere(count: int) -> np.ndarray:
    """Near-uniform covering of the unit sphere."""
    i = np.arange(count) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / count)
    golden = np.pi * (1.0 + np.sqrt(5.0))
    theta = golden * i
    return np.stack([np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta),
                     np.cos(phi)], axis=1)


def _grid_place_nodes(y, sizes, nu, alpha, mu, tau, zeta, nu_bar, link_kind, quad,
                      grid) -> np.ndarray:
    """Per-node global placement: maximize each respondent's own Poisson
    terms over a fixed sphere covering, holding the rest of the model.
    Rate tables are precomputed at a few effect levels and each respondent
    scores against the table nearest its own effect."""
    levels = np.unique(np.quantile(nu, [0.05, 0.25, 0.5, 0.75, 0.95]))
    tables = []
    for lv in levels:
        lam, _ = _forward(np.full(grid.shape[0], lv), grid, zeta, alpha, mu, tau,
                          sizes, nu_bar, link_kind, quad, want_cache=False)
        lam = np.maximum(lam, 1e-300)
        tables.append((np.log(lam), lam.sum(axis=1)))
    which = np.argmin(np.abs(nu[:, None] - levels[None, :]), axis=1)
    best = np.empty(y.shape[0], dtype=np.int64)
    for i in range(y.shape[0]):
        loglam, lamsum = tables[which[i]]
        best[i] = int(np.argmax(loglam @ y[i] - lamsum))
    return grid[best]


def _grid_place_centers(y, sizes, nu, alpha, z, tau, zeta, nu_bar, link_kind, quad,
                        grid) -> np.ndarray:
    """Per-trait global placement of centers over a sphere covering, holding
    positions: maximize each trait column's Poisson terms."""
    m = z.shape[0]
    G = grid.shape[0]
    tau_bar = float(np.mean(tau))
    wh, _ = _radial_cosine(tau_bar, quad.u[0])
    w = np.concatenate([wh, wh])
    cp = np.concatenate([quad.cos_phi[0], -quad.cos_phi[0]])
    sw = np.sqrt(np.maximum(1.0 - w * w, 0.0))
    base = nu + nu_bar + alpha
    mean_link = np.empty((m, G))
    t_all = np.clip(z @ grid.T, -TCLIP, TCLIP)
    r_all = np.sqrt(1.0 - t_all * t_all)
    chunk = max(1, int(2e6 // (m * w.size)) or 1)
    for g0 in range(0, G, chunk):
        g1 = min(G, g0 + chunk)
        t = t_all[:, g0:g1, None]
        r = r_all[:, g0:g1, None]
        s = t * w[None, None, :] + r * (sw * cp)[None, None, :]
        np.clip(s, -1.0, 1.0, out=s)
        a = base[:, None, None] - zeta * np.arccos(s)
        mean_link[:, g0:g1] = link_value(a, link_kind).mean(axis=2)
    mean_link = np.maximum(mean_link, 1e-300)
    loglam = np.log(mean_link)
    lamsum = mean_link.sum(axis=0)
    mu = np.empty((y.shape[1], 3))
    for k in range(y.shape[1]):
        scores = y[:, k] @ loglam - sizes[k] * lamsum + y[:, k].sum() * math.log(sizes[k])
        mu[k] = grid[int(np.argmax(scores))]
    return mu


def _spectral_init(y: np.ndarray, sizes: np.ndarray, cfg: FitConfig, gen):
    """Warm start pieces: trait centers from a spectral embedding of the
    column-normalized count correlations, effects from log row sums.
    Positions come from the grid placement that the caller alternates
    against these centers."""
    m, K = y.shape
    X = y / np.maximum(sizes[None, :], 1.0)
    C = np.corrcoef(X, rowvar=False)
    C = np.where(np.isfinite(C), C, 0.0)
    np.fill_diagonal(C, 1.0)
    evals, evecs = np.linalg.eigh(C)
    E = evecs[:, -3:] * np.sqrt(np.maximum(evals[-3:], 1e-12))[None, :]
    mu = _normalize_rows(E, gen)
    nu = np.log(y.sum(axis=1) + 1.0)
    nu -= nu.mean()
    tau = np.full(K, cfg.tau_init)
    return nu, mu, cfg.zeta_init, tau


def _normalize_rows(X, gen):
    X = np.asarray(X, dtype=float).copy()
    nrm = np.linalg.norm(X, axis=1)
    bad = nrm < 1e-12
    if bad.any():
        X[bad] = gen.standard_normal((int(bad.sum()), X.shape[1]))
        nrm = np.linalg.norm(X, axis=1)
    return X / nrm[:, None]


def _match_total_offset(nu, z, zeta, mu, tau, sizes, nu_bar, link_kind, quad, y):
    """Offset such that the total expected count matches the observed total."""
    target = float(y.sum())
    if target <= 0:
        return -5.0

    def total(alpha):
        lam, _ = _forward(nu, z, zeta, alpha, mu, tau, sizes, nu_bar, link_kind, quad,
                          want_cache=False)
        return float(lam.sum())

    lo, hi = -30.0, 30.0
    if total(lo) > target:
        return lo
    if total(hi) < target:
        return hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if total(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _polish_lbfgs(x, f, objective, packed, cfg, budget):
    """Quasi-Newton tail polish when plain projected ascent stalls above the
    gradient tolerance. The retraction lives inside the objective, so the
    manifold constraints hold at every evaluated point; the result is only
    accepted if the objective did not get worse."""
    from scipy.optimize import minimize

    def fun(xr):
        fv, gv = objective(packed.retract(xr))
        return fv, packed.chain_grad(xr, gv)

    bounds = list(zip(np.where(np.isinf(packed.lower), None, packed.lower),
                      np.where(np.isinf(packed.upper), None, packed.upper)))
    # L-BFGS-B's gtol is a sup-norm; make it imply our l2 tolerance
    gtol = cfg.grad_tol / (4.0 * math.sqrt(packed.size))
    res = minimize(fun, x, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": budget, "ftol": 1e-18, "gtol": gtol,
                            "maxcor": 25})
    xr = packed.retract(res.x)
    fv, gv = objective(xr)
    if fv <= f:
        return xr, fv, gv, int(res.nit)
    return None


def _run_spg(x0, objective, packed, cfg):
    """Monotone spectral projected gradient ascent (Armijo backtracking),
    with a quasi-Newton polish on whatever iteration budget is left."""
    x = packed.retract(x0)
    f, g = objective(x)               # minimizing f = -loglik
    pg = packed.project_grad(x, g)
    gnorm = float(np.linalg.norm(pg))
    step = 1.0 / max(gnorm, 1e-8)
    iters = 0
    stall = 0
    spg_cap = max(min(cfg.max_iter, 200), cfg.max_iter // 3)
    converged = gnorm <= cfg.grad_tol
    while not converged and iters < spg_cap:
        iters += 1
        d = -pg
        gd = float(g @ d)
        t = step
        accepted = False
        f_new = g_new = None
        for trial in range(60):
            xt = packed.retract(x + t * d)
            if trial == 0:
                # the BB step is usually accepted outright; evaluate the
                # gradient alongside so acceptance costs one pass
                ft, gt = objective(xt)
            else:
                ft, gt = objective(xt, value_only=True), None
            if np.isfinite(ft) and ft <= f + cfg.armijo_c * t * gd:
                accepted = True
                f_new, g_new = ft, gt
                break
            t *= 0.5
        if not accepted:
            break
        if g_new is None:
            f_new, g_new = objective(xt)
        s = xt - x
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 1e-18:
            step = float(np.clip((s @ s) / sy, 1e-10, 1e10))
        else:
            step = min(t * 4.0, 1e10)
        if f - f_new <= 1e-15 * max(1.0, abs(f)):
            stall += 1
            if stall >= 25:
                x, f, g = xt, f_new, g_new
                pg = packed.project_grad(x, g)
                gnorm = float(np.linalg.norm(pg))
                break
        else:
            stall = 0
        x, f, g = xt, f_new, g_new
        pg = packed.project_grad(x, g)
        gnorm = float(np.linalg.norm(pg))
        converged = gnorm <= cfg.grad_tol
    if not converged and iters < cfg.max_iter:
        polished = _polish_lbfgs(x, f, objective, packed, cfg, cfg.max_iter - iters)
        if polished is not None:
            x, f, g, extra = polished
            iters += extra
            gnorm = float(np.linalg.norm(packed.project_grad(x, g)))
            converged = gnorm <= cfg.grad_tol
    return x, -f, gnorm, iters, converged


def fit_mle(Y: ARDMatrix, trait_sizes: np.ndarray, config: FitConfig,
            rng: np.random.Generator, initial: ArdModel | None = None) -> FitReport:
    """Best-of-restarts maximum-likelihood fit from ARD alone.

    `initial` overrides the spectral warm start of the first restart.
    """
    y = Y.counts
    m, K = y.shape
    if m < 10:
        raise InvalidInputError("need at least 10 respondents to fit")
    if K <= 3:
        raise InvalidInputError("need more than three traits (K > 3)")
    sizes = np.asarray(trait_sizes, dtype=float)
    if sizes.shape != (K,):
        raise InvalidInputError("trait size vector does not match the ARD matrix")
    if not y.any():
        raise EstimationError("ARD matrix is all zeros; nothing to fit")

    seed = int(rng.integers(1 << 62))
    quad = Quadrature.make(seed, K, config.q_draws)
    lgam = gammaln(y + 1.0)
    scale = 1.0 / (m * m * K)
    const = float(scale * lgam.sum())
    packed = _Packed(m, K, config)

    def objective(x, value_only=False):
        nu, z, zeta, alpha, mu, tau = packed.unpack(x)
        if value_only:
            lam, _ = _forward(nu, z, zeta, alpha, mu, tau, sizes, config.nu_bar,
                              config.link_kind, quad, want_cache=False)
            if np.any(lam <= 0.0) or not np.all(np.isfinite(lam)):
                return np.inf
            val = float(scale * np.sum(-lam + y * np.log(lam))) - const
            return -val
        val, grad = _value_and_gradient(nu, z, zeta, alpha, mu, tau, sizes,
                                        config.nu_bar, config.link_kind, quad, y)
        return -val, -packed.pack_grad(grad, zeta, tau)

    grid = _fibonacci_sphere(256)

    def make_start(r: int) -> np.ndarray:
        gen = rngmod.derive(seed, rngmod.DOMAIN_RESTART, r)
        if r == 0 and initial is not None:
            nu = initial.nu - initial.nu.mean()
            z, mu, tau = initial.z, initial.mu, initial.tau
            zeta = max(initial.zeta, 1e-8)
            alpha = initial.offset + initial.nu.mean()
            return packed.pack(nu, z, zeta, alpha, mu, tau)
        nu, mu, zeta, tau = _spectral_init(y, sizes, config, gen)
        if r > 0:
            nu = nu + gen.normal(0.0, 0.3, size=m)
            nu -= nu.mean()
            # odd restarts perturb the spectral centers, even ones start fresh
            if r % 2 == 1:
                mu = _normalize_rows(mu + 0.4 * gen.standard_normal(mu.shape), gen)
            else:
                mu = _normalize_rows(gen.standard_normal(mu.shape), gen)
            zeta = float(zeta * math.exp(gen.normal(0.0, 0.3)))
            tau = tau * np.exp(gen.normal(0.0, 0.3, size=K))
        # alternating global placement: nodes given centers, centers given
        # nodes, with the offset rebalanced after each move
        alpha = -2.0
        z = None
        for cycle in range(2):
            z = _grid_place_nodes(y, sizes, nu, alpha, mu, tau, zeta, config.nu_bar,
                                  config.link_kind, quad, grid)
            alpha = _match_total_offset(nu, z, zeta, mu, tau, sizes, config.nu_bar,
                                        config.link_kind, quad, y)
            mu = _grid_place_centers(y, sizes, nu, alpha, z, tau, zeta, config.nu_bar,
                                     config.link_kind, quad, grid)
            alpha = _match_total_offset(nu, z, zeta, mu, tau, sizes, config.nu_bar,
                                        config.link_kind, quad, y)
        z = _grid_place_nodes(y, sizes, nu, alpha, mu, tau, zeta, config.nu_bar,
                              config.link_kind, quad, grid)
        return packed.pack(nu, z, zeta, alpha, mu, tau)

    def run(r: int):
        return _run_spg(make_start(r), objective, packed, cfg=config)

    if config.threads > 1 and config.restarts > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as ex:
            results = list(ex.map(run, range(config.restarts)))
    else:
        results = [run(r) for r in range(config.restarts)]

    best = max(range(config.restarts), key=lambda r: (results[r][1], -r))
    x, loglik, gnorm, iters, converged = results[best]
    nu, z, zeta, alpha, mu, tau = packed.unpack(x)
    model = ArdModel(nu=nu, z=z, zeta=zeta, offset=alpha, mu=mu, tau=tau,
                     trait_sizes=sizes, nu_bar=config.nu_bar, quad=quad,
                     link_kind=config.link_kind,
                     respondents=np.asarray(Y.respondents, dtype=np.int64)).canonical()
    return FitReport(model=model, loglik=loglik, grad_norm=gnorm, iterations=iters,
                     restarts_used=config.restarts, converged=converged, seed=seed)


# ------------------------------------------------------------- alignment & metrics


def align_isometry(fitted: np.ndarray, true: np.ndarray) -> tuple[Isometry, np.ndarray]:
    """Orthogonal Procrustes: the orthogonal map (reflections permitted)
    minimizing sum_i |T(fitted_i) - true_i|^2, via SVD of the cross-covariance."""
    fitted = np.asarray(fitted, dtype=float)
    true = np.asarray(true, dtype=float)
    if fitted.shape != true.shape or fitted.ndim != 2:
        raise InvalidInputError("point sets must have identical (n, d) shapes")
    n, d = fitted.shape
    if n < d:
        raise AlignmentError(f"need at least {d} points to align in dimension {d}")
    M = fitted.T @ true
    U, _, Vt = np.linalg.svd(M)
    T = Vt.T @ U.T
    return Isometry(T), fitted @ T.T


@dataclass
class RecoveryMetrics:
    link_rmse: float
    distance_correlation: float
    zeta_rel_error: float
    nu_rmse: float
    flags: dict = field(default_factory=dict)


def recovery_error(fit: FitReport, truth: ModelParams, respondents=None) -> RecoveryMetrics:
    """Recovery metrics of a fit against the generating parameters."""
    model = fit.model
    resp = model.respondents if respondents is None else np.asarray(respondents)
    if resp is None or resp.size != model.m:
        raise InvalidInputError("fit does not record its respondents")
    if resp.max() >= truth.n:
        raise InvalidInputError("respondent index outside the generating model")

    flags: dict = {}
    P_hat = model.implied_link_probabilities()
    z_true = truth.z[resp]
    D_true = geometry.pairwise_distances(z_true, truth.surface)
    E_true = (truth.nu[resp][:, None] + truth.nu[resp][None, :] + truth.offset
              - truth.zeta * D_true)
    P_true = link_value(E_true, truth.link_kind)
    np.fill_diagonal(P_true, 0.0)
    iu = np.triu_indices(model.m, k=1)
    link_rmse = float(np.sqrt(np.mean((P_hat[iu] - P_true[iu]) ** 2)))

    D_hat = geometry.pairwise_distances(model.z, model.surface)
    dh, dt = D_hat[iu], D_true[iu]
    if dh.std() < 1e-12 or dt.std() < 1e-12:
        corr = float("nan")
        flags["distance_correlation"] = "degenerate"
    else:
        corr = float(np.corrcoef(dh, dt)[0, 1])

    if truth.zeta > 0:
        zerr = abs(model.zeta - truth.zeta) / truth.zeta
    else:
        zerr = abs(model.zeta)
        flags["zeta_rel_error"] = "absolute_error_zeta_zero"

    nu_hat = model.nu - model.nu.mean()
    nu_true = truth.nu[resp] - truth.nu[resp].mean()
    nu_rmse = float(np.sqrt(np.mean((nu_hat - nu_true) ** 2)))
    return RecoveryMetrics(link_rmse=link_rmse, distance_correlation=corr,
                           zeta_rel_error=zerr, nu_rmse=nu_rmse, flags=flags)


def gauge_fixed_truth(theta: ModelParams, centers: np.ndarray, concentrations: np.ndarray,
                      trait_sizes: np.ndarray, respondents: np.ndarray,
                      config: FitConfig, seed: int = 0) -> ArdModel:
    """The generating parameters expressed as a gauge-fixed ArdModel.

    nu_bar is set to the respondents' empirical mean effect so the implied
    dyad probabilities reproduce the truth exactly.
    """
    resp = np.asarray(respondents, dtype=np.int64)
    nu = theta.nu[resp]
    shift = nu.mean()
    quad = Quadrature.make(seed, len(trait_sizes), config.q_draws)
    model = ArdModel(
        nu=nu - shift, z=theta.z[resp], zeta=theta.zeta, offset=theta.offset + shift,
        mu=np.asarray(centers, dtype=float), tau=np.asarray(concentrations, dtype=float),
        trait_sizes=trait_sizes, nu_bar=shift, quad=quad, link_kind=theta.link_kind,
        respondents=resp,
    )
    return model.canonical()
