"""Core model: state containers, likelihoods, priors, covariance reconstruction.

The sampling model for an observation y_i in R^P with K features and M
eigencomponents is

    y_i | Theta ~ N( sum_k Z_ik (nu_k + sum_m chi_im phi_km), sigma2 I_P ),

with chi_im iid N(0, 1).  Integrating chi out gives the marginal

    y_i ~ N( sum_k Z_ik nu_k,
             sum_k sum_k' Z_ik Z_ik' sum_m phi_km phi_k'm^T + sigma2 I_P ).

Memberships z_i live on the simplex; each feature k carries a mean nu_k in
R^P and loading vectors phi_km in R^P whose outer products build the
cross-covariance structure between features.

Shape conventions used throughout the package:

    y     (N, P)      observations
    nu    (K, P)      feature means
    phi   (K, P, M)   feature loadings per eigencomponent
    chi   (N, M)      per-observation latent scores
    z     (N, K)      memberships, rows on the simplex
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from .errors import DimensionError, DomainError, NumericalError

logger = logging.getLogger(__name__)

# Memberships are clamped to this open box before Dirichlet density
# evaluation so boundary values cannot produce -inf via log(0).
Z_CLAMP = 1e-12

# One-shot jitter scale for a failed covariance factorization.
JITTER_REL = 1e-10

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# containers


@dataclass
class Dataset:
    """Observation matrix plus optional column labels.

    y : (N, P) float array, finite entries.
    """

    y: np.ndarray
    columns: list[str] | None = None

    def __post_init__(self) -> None:
        self.y = np.asarray(self.y, dtype=np.float64)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    def validate(self) -> None:
        if self.y.ndim != 2:
            raise DimensionError(f"y must be 2-d, got ndim={self.y.ndim}")
        if self.n < 1 or self.p < 1:
            raise DimensionError(f"need N >= 1 and P >= 1, got shape {self.y.shape}")
        if not np.all(np.isfinite(self.y)):
            bad = np.argwhere(~np.isfinite(self.y))[0]
            raise DomainError(f"non-finite entry at row {bad[0]}, column {bad[1]}")
        if self.columns is not None and len(self.columns) != self.p:
            raise DimensionError(
                f"{len(self.columns)} column labels for P={self.p} columns"
            )


@dataclass(frozen=True)
class ModelDims:
    """Number of features K and eigencomponents M."""

    K: int
    M: int

    def validate(self, p: int) -> None:
        if self.K < 2:
            raise DimensionError(f"K must be >= 2, got {self.K}")
        if not 1 <= self.M <= self.K * p:
            raise DimensionError(f"M must be in [1, K*P]={self.K * p}, got {self.M}")


@dataclass
class PriorConfig:
    """Hyperparameters of the priors and the MH proposal scales.

    Gamma(a, b) is shape-rate everywhere; IG(a, b) has density
    b^a / Gamma(a) x^{-a-1} exp(-b / x).
    """

    alpha: float = 1.0        # tau_k ~ IG(alpha, beta), prior scale of nu
    beta: float = 1.0
    alpha0: float = 1.0       # sigma2 ~ IG(alpha0, beta0)
    beta0: float = 1.0
    nu_gamma: float = 3.0     # gamma_kpm ~ Gamma(nu_gamma/2, nu_gamma/2)
    alpha1: float = 2.0       # a1_k ~ Gamma(alpha1, beta1)
    beta1: float = 1.0
    alpha2: float = 3.0       # a2_k ~ Gamma(alpha2, beta2); alpha2 > beta2 keeps E[delta] > 1
    beta2: float = 1.0
    c: float | np.ndarray = 1.0   # pi ~ Dirichlet(c), scalar broadcasts
    b: float = 1.0            # alpha3 ~ Exponential(rate b)
    # MH proposal scales
    eps1: float = 0.5         # a1 proposal variance = eps1 / beta1
    eps2: float = 0.5         # a2 proposal variance = eps2 / beta2
    a_z: float = 100.0        # z proposal Dir(a_z * z_i)
    a_pi: float = 100.0       # pi proposal Dir(a_pi * pi)
    sigma2_alpha3: float = 0.1  # alpha3 truncated-normal proposal variance

    def c_vector(self, k: int) -> np.ndarray:
        c = np.asarray(self.c, dtype=np.float64)
        if c.ndim == 0:
            return np.full(k, float(c))
        if c.shape != (k,):
            raise DimensionError(f"c has shape {c.shape}, expected ({k},)")
        return c

    def validate(self, k: int | None = None) -> None:
        scalars = {
            "alpha": self.alpha, "beta": self.beta,
            "alpha0": self.alpha0, "beta0": self.beta0,
            "nu_gamma": self.nu_gamma,
            "alpha1": self.alpha1, "beta1": self.beta1,
            "alpha2": self.alpha2, "beta2": self.beta2,
            "b": self.b, "eps1": self.eps1, "eps2": self.eps2,
            "a_z": self.a_z, "a_pi": self.a_pi,
            "sigma2_alpha3": self.sigma2_alpha3,
        }
        for name, v in scalars.items():
            if not (np.isfinite(v) and v > 0):
                raise DomainError(f"prior hyperparameter {name} must be positive, got {v}")
        c = np.asarray(self.c, dtype=np.float64)
        if np.any(c <= 0) or not np.all(np.isfinite(c)):
            raise DomainError("Dirichlet concentration c must be positive")
        if k is not None:
            self.c_vector(k)
        if self.alpha2 <= self.beta2:
            logger.warning(
                "alpha2 <= beta2: shrinkage increments have prior mean <= 1, "
                "eigencomponent variances need not decay"
            )


@dataclass
class ShrinkageHyperState:
    """Local/global shrinkage state for the loadings.

    gamma     (K, P, M)  local precisions
    delta     (K, M)     multiplicative increments
    tau_tilde (K, M)     cumulative products tau_tilde[k, m] = prod_{j<=m} delta[k, j]
    a1, a2    (K,)       per-feature shape parameters of the delta priors
    """

    gamma: np.ndarray
    delta: np.ndarray
    tau_tilde: np.ndarray
    a1: np.ndarray
    a2: np.ndarray

    def refresh_tau_tilde(self) -> None:
        self.tau_tilde = np.cumprod(self.delta, axis=1)

    def copy(self) -> "ShrinkageHyperState":
        return ShrinkageHyperState(
            gamma=self.gamma.copy(), delta=self.delta.copy(),
            tau_tilde=self.tau_tilde.copy(), a1=self.a1.copy(), a2=self.a2.copy(),
        )

    def validate(self) -> None:
        k, p, m = self.gamma.shape
        if self.delta.shape != (k, m) or self.tau_tilde.shape != (k, m):
            raise DimensionError("delta/tau_tilde shapes inconsistent with gamma")
        if self.a1.shape != (k,) or self.a2.shape != (k,):
            raise DimensionError("a1/a2 must have one entry per feature")
        for name, arr in (("gamma", self.gamma), ("delta", self.delta),
                          ("a1", self.a1), ("a2", self.a2)):
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise DomainError(f"shrinkage state {name} must be positive and finite")
        expected = np.cumprod(self.delta, axis=1)
        if not np.allclose(self.tau_tilde, expected, rtol=1e-12, atol=0.0):
            raise DomainError("tau_tilde inconsistent with cumulative products of delta")


@dataclass
class ModelState:
    """One full parameter state of the model."""

    nu: np.ndarray        # (K, P)
    phi: np.ndarray       # (K, P, M)
    chi: np.ndarray       # (N, M)
    z: np.ndarray         # (N, K)
    pi: np.ndarray        # (K,)
    alpha3: float
    sigma2: float
    tau: np.ndarray       # (K,)
    shrink: ShrinkageHyperState

    @property
    def dims(self) -> ModelDims:
        return ModelDims(K=self.nu.shape[0], M=self.phi.shape[2])

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def p(self) -> int:
        return self.nu.shape[1]

    def copy(self) -> "ModelState":
        return ModelState(
            nu=self.nu.copy(), phi=self.phi.copy(), chi=self.chi.copy(),
            z=self.z.copy(), pi=self.pi.copy(), alpha3=float(self.alpha3),
            sigma2=float(self.sigma2), tau=self.tau.copy(), shrink=self.shrink.copy(),
        )

    def validate(self) -> None:
        k, p = self.nu.shape
        n, m = self.chi.shape
        if self.phi.shape != (k, p, m):
            raise DimensionError(f"phi shape {self.phi.shape}, expected {(k, p, m)}")
        if self.z.shape != (n, k):
            raise DimensionError(f"z shape {self.z.shape}, expected {(n, k)}")
        if self.pi.shape != (k,) or self.tau.shape != (k,):
            raise DimensionError("pi/tau must have one entry per feature")
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise DomainError(f"sigma2 must be positive, got {self.sigma2}")
        if not (np.isfinite(self.alpha3) and self.alpha3 > 0):
            raise DomainError(f"alpha3 must be positive, got {self.alpha3}")
        if np.any(self.tau <= 0) or not np.all(np.isfinite(self.tau)):
            raise DomainError("tau must be positive and finite")
        if np.any(self.pi <= 0) or abs(self.pi.sum() - 1.0) > 1e-10:
            raise DomainError("pi must be positive and sum to 1")
        if n > 0:
            if np.any(self.z < 0):
                raise DomainError("z entries must be nonnegative")
            if np.max(np.abs(self.z.sum(axis=1) - 1.0)) > 1e-10:
                raise DomainError("z rows must sum to 1")
        for name, arr in (("nu", self.nu), ("phi", self.phi), ("chi", self.chi)):
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} contains non-finite entries")
        self.shrink.validate()
        if self.shrink.gamma.shape != (k, p, m):
            raise DimensionError("shrinkage state shape inconsistent with phi")


# ---------------------------------------------------------------------------
# density helpers (log space, fully normalized)


def log_normal_iso(x: np.ndarray, mean: np.ndarray, var: float) -> float:
    """Sum of N(mean, var) log densities over all entries of x."""
    x = np.asarray(x, dtype=np.float64)
    d = x.size
    return float(-0.5 * d * (LOG_2PI + math.log(var))
                 - 0.5 * np.sum((x - mean) ** 2) / var)


def log_gamma_pdf(x, shape, rate) -> float:
    """Summed Gamma(shape, rate) log density; -inf off the support."""
    x = np.asarray(x, dtype=np.float64)
    shape = np.broadcast_to(np.asarray(shape, dtype=np.float64), x.shape)
    rate = np.broadcast_to(np.asarray(rate, dtype=np.float64), x.shape)
    if np.any(x <= 0):
        return -np.inf
    return float(np.sum(shape * np.log(rate) - gammaln(shape)
                        + (shape - 1.0) * np.log(x) - rate * x))

def log_invgamma_pdf(x, shape, rate) -> float:
    """Summed IG(shape, rate) log density; -inf off the support."""
    x = np.asarray(x, dtype=np.float64)
    shape = np.broadcast_to(np.asarray(shape, dtype=np.float64), x.shape)
    rate = np.broadcast_to(np.asarray(rate, dtype=np.float64), x.shape)
    if np.any(x <= 0):
        return -np.inf
    return float(np.sum(shape * np.log(rate) - gammaln(shape)
                        - (shape + 1.0) * np.log(x) - rate / x))


def log_dirichlet_pdf(x: np.ndarray, conc: np.ndarray) -> float:
    """Dirichlet(conc) log density of one point x on the simplex."""
    x = np.asarray(x, dtype=np.float64)
    conc = np.asarray(conc, dtype=np.float64)
    if np.any(x <= 0) or np.any(x >= 1) or abs(x.sum() - 1.0) > 1e-8:
        return -np.inf
    return float(gammaln(conc.sum()) - np.sum(gammaln(conc))
                 + np.sum((conc - 1.0) * np.log(x)))


# ---------------------------------------------------------------------------
# likelihoods


def mean_matrix(st: ModelState) -> np.ndarray:
    """Conditional mean of every observation, shape (N, P).

    Row i is sum_k Z_ik nu_k + sum_m chi_im (sum_k Z_ik phi_km).
    """
    base = st.z @ st.nu
    if st.phi.shape[2] > 0 and st.n > 0:
        load = np.einsum("ik,kpm->ipm", st.z, st.phi)   # (N, P, M)
        base = base + np.einsum("im,ipm->ip", st.chi, load)
    return base


def loglik_conditional_rows(ds: Dataset, st: ModelState) -> np.ndarray:
    """Per-observation conditional log likelihood, shape (N,)."""
    if ds.y.shape != (st.n, st.p):
        raise DimensionError(
            f"data shape {ds.y.shape} does not match state ({st.n}, {st.p})"
        )
    if st.sigma2 <= 0:
        raise DomainError(f"sigma2 must be positive, got {st.sigma2}")
    resid = ds.y - mean_matrix(st)
    p = st.p
    return (-0.5 * p * (LOG_2PI + math.log(st.sigma2))
            - 0.5 * np.sum(resid ** 2, axis=1) / st.sigma2)


def loglik_conditional(ds: Dataset, st: ModelState) -> float:
    """Total log likelihood of the data given the full state, chi included."""
    return float(np.sum(loglik_conditional_rows(ds, st)))


def _chol_logdet_quad(s: np.ndarray, r: np.ndarray, i: int) -> tuple[float, float]:
    """Cholesky log determinant and quadratic form r^T s^{-1} r for one matrix.

    Applies the one-shot jitter policy on failure; a second failure is a
    numerical error naming the offending observation.
    """
    try:
        low = np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        jitter = JITTER_REL * np.trace(s) / s.shape[0]
        try:
            low = np.linalg.cholesky(s + jitter * np.eye(s.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"marginal covariance of observation {i} is not positive definite "
                f"even after jitter {jitter:.3e}"
            ) from exc
    half = np.linalg.solve(low, r)
    return 2.0 * float(np.sum(np.log(np.diag(low)))), float(half @ half)


def loglik_marginal_rows(ds: Dataset, st: ModelState) -> np.ndarray:
    """Per-observation marginal log likelihood (chi integrated out), shape (N,).

    Covariance of row i is A_i A_i^T + sigma2 I with A_i = sum_k Z_ik phi_k,
    assembled with sigma2 already on the diagonal before factorization.
    """
    if ds.y.shape != (st.n, st.p):
        raise DimensionError(
            f"data shape {ds.y.shape} does not match state ({st.n}, {st.p})"
        )
    if st.sigma2 <= 0:
        raise DomainError(f"sigma2 must be positive, got {st.sigma2}")
    n, p = ds.y.shape
    resid = ds.y - st.z @ st.nu
    a = np.einsum("ik,kpm->ipm", st.z, st.phi)          # (N, P, M)
    covs = a @ a.transpose(0, 2, 1) + st.sigma2 * np.eye(p)
    out = np.empty(n)
    try:
        lows = np.linalg.cholesky(covs)
        halves = np.linalg.solve(lows, resid[:, :, None])[:, :, 0]
        logdets = 2.0 * np.sum(np.log(np.diagonal(lows, axis1=1, axis2=2)), axis=1)
        quads = np.sum(halves ** 2, axis=1)
        out = -0.5 * (p * LOG_2PI + logdets + quads)
    except np.linalg.LinAlgError:
        for i in range(n):
            logdet, quad = _chol_logdet_quad(covs[i], resid[i], i)
            out[i] = -0.5 * (p * LOG_2PI + logdet + quad)
    return out


def loglik_marginal(ds: Dataset, st: ModelState) -> float:
    """Total marginal log likelihood of the data, chi integrated out."""
    return float(np.sum(loglik_marginal_rows(ds, st)))


def log_prior(st: ModelState, cfg: PriorConfig) -> float:
    """Joint log prior density of the state, fully normalized.

    Support violations return -inf (and are logged) rather than raising.
    """
    sh = st.shrink
    k, p, m = st.phi.shape

    for name, ok in (
        ("sigma2", np.isfinite(st.sigma2) and st.sigma2 > 0),
        ("alpha3", np.isfinite(st.alpha3) and st.alpha3 > 0),
        ("tau", bool(np.all(st.tau > 0))),
        ("gamma", bool(np.all(sh.gamma > 0))),
        ("delta", bool(np.all(sh.delta > 0))),
        ("a1", bool(np.all(sh.a1 > 0))),
        ("a2", bool(np.all(sh.a2 > 0))),
    ):
        if not ok:
            logger.warning("log_prior: %s outside its support", name)
            return -np.inf

    total = 0.0

    # loadings given local and cumulative shrinkage; the precision form
    # stays finite where 1/precision or phi**2 would overflow
    phi_prec = sh.gamma * sh.tau_tilde[:, None, :]              # (K, P, M)
    total += float(np.sum(-0.5 * (LOG_2PI - np.log(phi_prec))
                          - 0.5 * (np.sqrt(phi_prec) * st.phi) ** 2))
    total += log_gamma_pdf(sh.gamma, cfg.nu_gamma / 2.0, cfg.nu_gamma / 2.0)

    # shrinkage increments and their shapes
    total += log_gamma_pdf(sh.delta[:, 0], sh.a1, 1.0)
    if m > 1:
        total += log_gamma_pdf(sh.delta[:, 1:], sh.a2[:, None], 1.0)
    total += log_gamma_pdf(sh.a1, cfg.alpha1, cfg.beta1)
    total += log_gamma_pdf(sh.a2, cfg.alpha2, cfg.beta2)

    # feature means and their scales
    total += float(np.sum(-0.5 * (LOG_2PI + np.log(st.tau[:, None]))
                          - 0.5 * st.nu ** 2 / st.tau[:, None]))
    total += log_invgamma_pdf(st.tau, cfg.alpha, cfg.beta)

    total += log_invgamma_pdf(st.sigma2, cfg.alpha0, cfg.beta0)

    # latent scores
    total += log_normal_iso(st.chi, 0.0, 1.0)

    # memberships, weights, concentration
    conc = st.alpha3 * st.pi
    pi_ld = log_dirichlet_pdf(st.pi, cfg.c_vector(k))
    if not np.isfinite(pi_ld):
        logger.warning("log_prior: pi outside the simplex interior")
        return -np.inf
    total += pi_ld
    if st.n > 0:
        z = np.clip(st.z, Z_CLAMP, 1.0 - Z_CLAMP)
        total += float(st.n * (gammaln(conc.sum()) - np.sum(gammaln(conc)))
                       + np.sum((conc - 1.0) * np.log(z)))
    total += math.log(cfg.b) - cfg.b * st.alpha3

    return total


# ---------------------------------------------------------------------------
# covariance reconstruction


@dataclass
class CovarianceSummary:
    """Cross-covariance blocks, their stacked matrix, and its eigenstructure.

    cross[k, k'] is the P x P block sum_m phi_km phi_k'm^T; stacked is the
    (K P) x (K P) matrix of all blocks, with feature k occupying rows
    k*P:(k+1)*P.  Eigenvalues are sorted nonincreasing and eigenvector
    columns match that order.
    """

    cross: np.ndarray         # (K, K, P, P)
    stacked: np.ndarray       # (K*P, K*P)
    eigenvalues: np.ndarray   # (K*P,) nonincreasing
    eigenvectors: np.ndarray  # (K*P, K*P) orthonormal columns
    _z: np.ndarray = field(repr=False, default=None)
    _sigma2: float = field(repr=False, default=0.0)
    _cache: dict = field(repr=False, default_factory=dict)

    def marginal_of(self, i: int) -> np.ndarray:
        """P x P marginal covariance of observation i (cached)."""
        if i not in self._cache:
            z = self._z[i]
            k = z.shape[0]
            p = self.cross.shape[2]
            s = np.einsum("k,l,klpq->pq", z, z, self.cross)
            self._cache[i] = s + self._sigma2 * np.eye(p)
        return self._cache[i]


def reconstruct_covariance(st: ModelState, rank: int | None = None) -> CovarianceSummary:
    """Rebuild the cross-covariance structure implied by the loadings.

    With rank r given, the stacked matrix is replaced by its best rank-r
    approximation (leading eigenpairs) and the blocks are re-sliced from it.
    """
    k, p, m = st.phi.shape
    flat = st.phi.reshape(k * p, m)
    stacked = flat @ flat.T
    w, v = np.linalg.eigh(stacked)
    order = np.argsort(w)[::-1]
    w = w[order]
    v = v[:, order]
    if rank is not None:
        if not 1 <= rank <= k * p:
            raise DimensionError(f"rank must be in [1, K*P]={k * p}, got {rank}")
        stacked = (v[:, :rank] * w[:rank]) @ v[:, :rank].T
    cross = np.empty((k, k, p, p))
    for a in range(k):
        for b in range(k):
            cross[a, b] = stacked[a * p:(a + 1) * p, b * p:(b + 1) * p]
    return CovarianceSummary(
        cross=cross, stacked=stacked, eigenvalues=w, eigenvectors=v,
        _z=st.z.copy(), _sigma2=float(st.sigma2),
    )


# ---------------------------------------------------------------------------
# draws


def prior_draw(n_obs: int, p: int, dims: ModelDims, cfg: PriorConfig,
               rng: np.random.Generator) -> ModelState:
    """Draw a full state from the priors (used for chain starts and checks)."""
    k, m = dims.K, dims.M
    a1 = rng.gamma(cfg.alpha1, 1.0 / cfg.beta1, size=k)
    a2 = rng.gamma(cfg.alpha2, 1.0 / cfg.beta2, size=k)
    delta = np.empty((k, m))
    delta[:, 0] = rng.gamma(a1, 1.0)
    if m > 1:
        delta[:, 1:] = rng.gamma(np.broadcast_to(a2[:, None], (k, m - 1)), 1.0)
    # gamma draws with shape far below one can underflow to exactly zero,
    # which would put a zero precision (and an inf phi) in the state
    tiny = np.finfo(float).tiny
    delta = np.maximum(delta, tiny)
    tau_tilde = np.maximum(np.cumprod(delta, axis=1), tiny)
    gamma = rng.gamma(cfg.nu_gamma / 2.0, 2.0 / cfg.nu_gamma, size=(k, p, m))
    phi = rng.normal(size=(k, p, m)) / np.sqrt(gamma * tau_tilde[:, None, :])
    tau = cfg.beta / rng.gamma(cfg.alpha, 1.0, size=k)
    nu = rng.normal(size=(k, p)) * np.sqrt(tau)[:, None]
    sigma2 = cfg.beta0 / rng.gamma(cfg.alpha0, 1.0)
    pi = rng.dirichlet(cfg.c_vector(k))
    alpha3 = rng.exponential(1.0 / cfg.b)
    z = rng.dirichlet(alpha3 * pi, size=n_obs) if n_obs else np.empty((0, k))
    z = np.clip(z, Z_CLAMP, 1.0 - Z_CLAMP)
    z /= z.sum(axis=1, keepdims=True) if n_obs else 1.0
    chi = rng.normal(size=(n_obs, m))
    return ModelState(nu=nu, phi=phi, chi=chi, z=z, pi=pi, alpha3=float(alpha3),
                      sigma2=float(sigma2), tau=tau,
                      shrink=ShrinkageHyperState(gamma=gamma, delta=delta,
                                                 tau_tilde=tau_tilde, a1=a1, a2=a2))


def simulate_data(st: ModelState, rng: np.random.Generator) -> Dataset:
    """Draw y | Theta from the conditional sampling model."""
    noise = rng.normal(size=(st.n, st.p)) * math.sqrt(st.sigma2)
    return Dataset(y=mean_matrix(st) + noise)


def permute_features(st: ModelState, perm: np.ndarray) -> ModelState:
    """Relabel features by perm: new feature j is old feature perm[j]."""
    perm = np.asarray(perm)
    sh = st.shrink
    return ModelState(
        nu=st.nu[perm], phi=st.phi[perm], chi=st.chi.copy(),
        z=st.z[:, perm], pi=st.pi[perm], alpha3=float(st.alpha3),
        sigma2=float(st.sigma2), tau=st.tau[perm],
        shrink=ShrinkageHyperState(
            gamma=sh.gamma[perm], delta=sh.delta[perm],
            tau_tilde=sh.tau_tilde[perm], a1=sh.a1[perm], a2=sh.a2[perm],
        ),
    )
