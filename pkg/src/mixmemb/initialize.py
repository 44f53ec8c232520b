"""Two-stage multiple start search for a good chain starting state.

Stage 1 repeatedly runs a short sampler restricted to the mean and
allocation blocks (nu, tau, z, pi, alpha3) with the factor structure held
at zero, and keeps the restart with the highest conditional log likelihood.
Stage 2 repeatedly runs the complementary blocks conditioned on the stage-1
winner's (nu, z) and again keeps the best restart.  Data is standardized
internally; the returned state is mapped back to the raw scale.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .io import StandardizeRecord, destandardize_loadings, destandardize_mean
from .io import standardize as _standardize
from .model import (
    Dataset,
    ModelDims,
    ModelState,
    PriorConfig,
    loglik_conditional,
    prior_draw,
)
from .sampler import _STREAM_INIT, BLOCK_ORDER, SweepPlan, sweep

logger = logging.getLogger(__name__)

STAGE1_BLOCKS = ("nu", "tau", "z", "pi", "alpha3")
STAGE2_BLOCKS = tuple(b for b in BLOCK_ORDER if b not in ("nu", "z"))


@dataclass
class MsaConfig:
    """Restart counts and short-run lengths for the two stages."""

    n_try1: int = 10
    n_try2: int = 10
    n_mcmc1: int = 100
    n_mcmc2: int = 100

    def validate(self) -> None:
        for name in ("n_try1", "n_try2", "n_mcmc1", "n_mcmc2"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"MsaConfig.{name} must be an integer >= 1, got {v!r}")


def fit_nu_z(ds: Dataset, cfg: PriorConfig, dims: ModelDims, n_iter: int,
             seed: int) -> tuple[ModelState, float]:
    """Short restricted run over (nu, tau, z, pi, alpha3) with phi = chi = 0."""
    if n_iter < 0:
        raise ConfigError(f"n_iter must be >= 0, got {n_iter}")
    plan = SweepPlan(seed=seed, blocks=STAGE1_BLOCKS)
    st = prior_draw(ds.n, ds.p, dims, cfg, plan.rng(_STREAM_INIT, iteration=0))
    st.phi[:] = 0.0
    st.chi[:] = 0.0
    for _ in range(n_iter):
        st = sweep(ds, st, cfg, plan)
    return st, loglik_conditional(ds, st)


def fit_theta(partial: ModelState, ds: Dataset, cfg: PriorConfig,
              dims: ModelDims, n_iter: int, seed: int) -> tuple[ModelState, float]:
    """Short run over every block except (nu, z), held at the supplied values."""
    if n_iter < 0:
        raise ConfigError(f"n_iter must be >= 0, got {n_iter}")
    if partial.n != ds.n or partial.p != ds.p or partial.dims != dims:
        raise DimensionError("partial state does not match the data and dims")
    plan = SweepPlan(seed=seed, blocks=STAGE2_BLOCKS)
    st = prior_draw(ds.n, ds.p, dims, cfg, plan.rng(_STREAM_INIT, iteration=0))
    st.nu = partial.nu.copy()
    st.z = partial.z.copy()
    for _ in range(n_iter):
        st = sweep(ds, st, cfg, plan)
    return st, loglik_conditional(ds, st)


def _restart_seed(seed: int, stage: int, index: int) -> int:
    # independent of the restart counts, so enlarging n_try1 or n_try2 only
    # adds candidates and never perturbs existing ones
    ss = np.random.SeedSequence(seed, spawn_key=(stage, index))
    return int(ss.generate_state(1)[0])


def _destandardize_state(st: ModelState, rec: StandardizeRecord) -> ModelState:
    out = st.copy()
    out.nu = destandardize_mean(st.nu, rec)
    out.phi = destandardize_loadings(st.phi, rec)
    # isotropic noise cannot carry a per-column scale; spherical average
    out.sigma2 = float(st.sigma2 * np.mean(rec.scale ** 2))
    return out


def multi_start(ds: Dataset, cfg: PriorConfig, dims: ModelDims,
                msa: MsaConfig | None = None, seed: int = 0, *,
                standardize: bool = True,
                details: dict | None = None) -> ModelState:
    """Best-of-restarts initial state; ties go to the lowest restart index."""
    msa = msa if msa is not None else MsaConfig()
    msa.validate()
    ds.validate()
    dims.validate(ds.p)

    work, rec = (ds, None)
    if standardize:
        work, rec = _standardize(ds)

    best_ll1 = -np.inf
    best1: ModelState | None = None
    idx1 = -1
    for t in range(msa.n_try1):
        st, ll = fit_nu_z(work, cfg, dims, msa.n_mcmc1,
                          _restart_seed(seed, 1, t))
        if ll > best_ll1:
            best_ll1, best1, idx1 = ll, st, t
    logger.debug("stage 1 winner: restart %d, loglik %.4f", idx1, best_ll1)

    best_ll2 = -np.inf
    best2: ModelState | None = None
    idx2 = -1
    for t in range(msa.n_try2):
        st, ll = fit_theta(best1, work, cfg, dims, msa.n_mcmc2,
                           _restart_seed(seed, 2, t))
        if ll > best_ll2:
            best_ll2, best2, idx2 = ll, st, t
    logger.debug("stage 2 winner: restart %d, loglik %.4f", idx2, best_ll2)

    if details is not None:
        details.update(stage1_index=idx1, stage1_loglik=best_ll1,
                       stage2_index=idx2, stage2_loglik=best_ll2,
                       standardized=standardize)
    if rec is not None:
        return _destandardize_state(best2, rec)
    return best2
