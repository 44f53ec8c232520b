"""Synthetic data recipes and the recovery metrics used to score fits.

Two stock recipes ship here: a two-feature setup whose loadings are built
inside the orthogonal complement of the feature means, and a three-feature
setup with freely drawn loadings used for feature-count selection studies.
A third generator draws from the natural-parameter mixing model in which
each observation's precision is the membership-weighted sum of feature
precisions; it exists for side-by-side comparisons.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, DomainError
from .model import Dataset, ModelState, ShrinkageHyperState, simulate_data

_PIVOT_TOL = 1e-12


@dataclass
class SimRecipe:
    """Everything needed to draw one synthetic (data, truth) pair."""

    n: int
    p: int
    k: int
    m: int
    mean_var: float                                # nu_k ~ N(0, mean_var I)
    phi_scales: tuple[float, ...]                  # per-m loading variances
    z_mixture: list[tuple[float, tuple[float, ...]]]  # (weight, concentrations)
    sigma2: float
    orthogonalize_phi: bool = False

    def validate(self) -> None:
        if min(self.n, self.p, self.k, self.m) < 1:
            raise ConfigError("recipe sizes must all be >= 1")
        if self.mean_var <= 0:
            raise ConfigError(f"mean_var must be positive, got {self.mean_var}")
        if len(self.phi_scales) != self.m:
            raise ConfigError(
                f"phi_scales has {len(self.phi_scales)} entries, expected m={self.m}"
            )
        if any(s <= 0 for s in self.phi_scales):
            raise ConfigError("phi_scales must be positive")
        if self.sigma2 < 0:
            raise ConfigError(f"sigma2 must be >= 0, got {self.sigma2}")
        weights = [w for w, _ in self.z_mixture]
        if not weights or abs(sum(weights) - 1.0) > 1e-12:
            raise ConfigError("mixture weights must sum to 1")
        if any(w < 0 for w in weights):
            raise ConfigError("mixture weights must be nonnegative")
        for _, conc in self.z_mixture:
            if len(conc) != self.k:
                raise ConfigError(
                    f"mixture concentrations need {self.k} entries, got {len(conc)}"
                )
            if any(c <= 0 for c in conc):
                raise ConfigError("mixture concentrations must be positive")
        if self.orthogonalize_phi and self.k >= self.p:
            raise ConfigError(
                "orthogonalized loadings need k < p to leave a complement"
            )


def ss1_recipe(n: int = 250) -> SimRecipe:
    """Two features in 10 dimensions, loadings orthogonal to the means."""
    return SimRecipe(
        n=n, p=10, k=2, m=4, mean_var=9.0,
        phi_scales=(1.0, 0.49, 0.25, 0.09),
        z_mixture=[(0.3, (10.0, 1.0)), (0.3, (1.0, 10.0)), (0.4, (1.0, 1.0))],
        sigma2=0.01, orthogonalize_phi=True,
    )


def ss2_recipe() -> SimRecipe:
    """Three features in 20 dimensions with freely drawn loadings."""
    return SimRecipe(
        n=200, p=20, k=3, m=3, mean_var=10.0,
        phi_scales=(1.0, 0.5, 0.2),
        z_mixture=[(0.2, (10.0, 1.0, 1.0)), (0.2, (1.0, 10.0, 1.0)),
                   (0.6, (1.0, 1.0, 1.0))],
        sigma2=0.01,
    )


def orthogonal_complement_basis(nu: np.ndarray) -> np.ndarray:
    """Orthonormal rows spanning the complement of the rows of nu.

    Gram-Schmidt over the identity columns with largest-residual pivoting,
    so the result is deterministic in nu alone.
    """
    k, p = nu.shape
    basis: list[np.ndarray] = []
    for row in nu:
        v = row.astype(np.float64).copy()
        for b in basis:
            v -= (v @ b) * b
        norm = np.linalg.norm(v)
        if norm < _PIVOT_TOL:
            raise DomainError("mean vectors are linearly dependent")
        basis.append(v / norm)
    cand = np.eye(p)
    out: list[np.ndarray] = []
    while len(out) < p - k:
        resid = cand.copy()
        for b in basis + out:
            resid -= np.outer(resid @ b, b)
        norms = np.linalg.norm(resid, axis=1)
        pick = int(np.argmax(norms))
        if norms[pick] < _PIVOT_TOL:
            raise DomainError("could not complete the orthogonal basis")
        out.append(resid[pick] / norms[pick])
    return np.vstack(out)


def draw_memberships(recipe: SimRecipe, rng: np.random.Generator
                     ) -> tuple[np.ndarray, np.ndarray]:
    """(z, component labels): each row picks a mixture component, then a
    Dirichlet draw from it."""
    weights = np.array([w for w, _ in recipe.z_mixture])
    labels = rng.choice(len(weights), size=recipe.n, p=weights)
    z = np.empty((recipe.n, recipe.k))
    for j, (_, conc) in enumerate(recipe.z_mixture):
        rows = labels == j
        if rows.any():
            z[rows] = rng.dirichlet(conc, size=int(rows.sum()))
    return z, labels


def generate_from_recipe(recipe: SimRecipe, seed: int
                         ) -> tuple[Dataset, ModelState]:
    """Draw one (data, ground-truth state) pair; deterministic under seed."""
    recipe.validate()
    rng = np.random.default_rng(seed)
    n, p, k, m = recipe.n, recipe.p, recipe.k, recipe.m

    nu = rng.normal(size=(k, p)) * np.sqrt(recipe.mean_var)
    scales = np.sqrt(np.asarray(recipe.phi_scales))
    if recipe.orthogonalize_phi:
        basis = orthogonal_complement_basis(nu)      # (p-k, p)
        q = rng.normal(size=(k, m, p - k)) * scales[None, :, None]
        phi = np.einsum("kmj,jp->kpm", q, basis)
    else:
        phi = rng.normal(size=(k, p, m)) * scales[None, None, :]
    chi = rng.normal(size=(n, m))
    z, _ = draw_memberships(recipe, rng)

    truth = ModelState(
        nu=nu, phi=phi, chi=chi, z=z, pi=np.full(k, 1.0 / k), alpha3=1.0,
        sigma2=float(recipe.sigma2), tau=np.full(k, recipe.mean_var),
        shrink=ShrinkageHyperState(
            gamma=np.ones((k, p, m)), delta=np.ones((k, m)),
            tau_tilde=np.ones((k, m)), a1=np.ones(k), a2=np.ones(k),
        ),
    )
    ds = simulate_data(truth, rng)
    return ds, truth


def generate_ss1(n: int = 250, seed: int = 0) -> tuple[Dataset, ModelState]:
    return generate_from_recipe(ss1_recipe(n), seed)


def generate_ss2(seed: int = 0) -> tuple[Dataset, ModelState]:
    return generate_from_recipe(ss2_recipe(), seed)


def heller_moments(nus: np.ndarray, covs: np.ndarray, z: np.ndarray,
                   cross: np.ndarray | None = None
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Observation mean and covariance for one membership row z.

    Without cross terms this is the natural-parameter model: the precision
    is the membership-weighted sum of feature precisions.  With cross given,
    the mean mixes linearly and the covariance is the quadratic form over
    the feature and cross-feature blocks.
    """
    k, p = nus.shape
    if z.shape != (k,):
        raise DimensionError(f"z must have shape ({k},), got {z.shape}")
    if cross is None:
        prec = np.zeros((p, p))
        h = np.zeros(p)
        for j in range(k):
            cj_inv = np.linalg.inv(covs[j])
            prec += z[j] * cj_inv
            h += z[j] * (cj_inv @ nus[j])
        cov = np.linalg.inv(prec)
        return cov @ h, cov
    mean = z @ nus
    cov = np.einsum("k,l,klpq->pq", z, z, cross_blocks(covs, cross))
    return mean, cov


def cross_blocks(covs: np.ndarray, cross: np.ndarray) -> np.ndarray:
    """(K, K, P, P) block table: diagonal from covs, off-diagonal from cross."""
    k, p, _ = covs.shape
    if cross.shape != (k, k, p, p):
        raise DimensionError(
            f"cross must have shape ({k}, {k}, {p}, {p}), got {cross.shape}"
        )
    blocks = cross.copy()
    for j in range(k):
        blocks[j, j] = covs[j]
    return blocks


def generate_heller(nus: np.ndarray, covs: np.ndarray, z_draws: np.ndarray,
                    seed: int = 0, cross: np.ndarray | None = None) -> Dataset:
    """Draw y_i ~ N(mean_i, cov_i) from heller_moments at each z row."""
    nus = np.asarray(nus, dtype=np.float64)
    covs = np.asarray(covs, dtype=np.float64)
    z_draws = np.asarray(z_draws, dtype=np.float64)
    n, k = z_draws.shape
    if nus.shape[0] != k or covs.shape[0] != k:
        raise DimensionError("nus, covs, and z_draws disagree on K")
    rng = np.random.default_rng(seed)
    p = nus.shape[1]
    y = np.empty((n, p))
    for i in range(n):
        mean, cov = heller_moments(nus, covs, z_draws[i], cross=cross)
        y[i] = rng.multivariate_normal(mean, cov, method="cholesky")
    return Dataset(y=y)


def rse(truth: np.ndarray, estimate: np.ndarray) -> float:
    """Relative squared error in percent: norm of the gap over norm of truth."""
    truth = np.asarray(truth, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if truth.shape != estimate.shape:
        raise DimensionError(
            f"shape mismatch: {truth.shape} vs {estimate.shape}"
        )
    denom = np.linalg.norm(truth)
    if denom == 0.0:
        raise DomainError("truth has zero norm; relative error is undefined")
    return float(np.linalg.norm(truth - estimate) / denom * 100.0)


def rmse(truth: np.ndarray, estimate: np.ndarray) -> float:
    truth = np.asarray(truth, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if truth.shape != estimate.shape:
        raise DimensionError(
            f"shape mismatch: {truth.shape} vs {estimate.shape}"
        )
    return float(np.sqrt(np.mean((truth - estimate) ** 2)))
