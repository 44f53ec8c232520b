"""MCMC kernels: Gibbs blocks, MH blocks, sweeps, tempered transitions.

Every full-conditional below is derived from the model in `model.py`.  Data
precision terms carry an inverse-temperature factor beta so the same kernels
drive both plain sweeps (beta = 1) and tempered ladders; priors are never
tempered (one documented variant for the nu block sits behind
SamplerOptions.temper_nu_prior).

Randomness is counter-based: every block of every sweep draws from a fresh
generator keyed by (seed, sweep index, block index), so any rung of a
tempered ladder can be replayed exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, log_ndtr, ndtr, ndtri

from .errors import ConfigError, DomainError, NumericalError
from .io import ChainStore
from .model import (
    Z_CLAMP,
    Dataset,
    ModelDims,
    ModelState,
    PriorConfig,
    loglik_conditional,
    mean_matrix,
    prior_draw,
)

logger = logging.getLogger(__name__)

# Fixed block update order of one sweep.
BLOCK_ORDER = ("nu", "phi", "chi", "sigma2", "tau", "delta", "gamma",
               "a1", "a2", "z", "pi", "alpha3")

# Reserved stream indices outside the block range.
_STREAM_INIT = 100
_STREAM_MIX = 101
_STREAM_ACCEPT = 102


@dataclass
class SamplerOptions:
    """Switches for documented sampler variants."""

    orthogonal_phi: bool = False     # constrain stacked loadings to stay mutually orthogonal
    temper_nu_prior: bool = False    # put beta on the nu prior term instead of its data term


@dataclass
class MhStats:
    """Acceptance bookkeeping per MH block."""

    counts: dict = field(default_factory=dict)

    def add(self, block: str, accepted: int, proposed: int = 1) -> None:
        acc, tot = self.counts.get(block, (0, 0))
        self.counts[block] = (acc + accepted, tot + proposed)

    def rate(self, block: str) -> float:
        acc, tot = self.counts.get(block, (0, 0))
        return acc / tot if tot else float("nan")

    def as_dict(self) -> dict:
        return {k: {"accepted": a, "proposed": t, "rate": (a / t if t else None)}
                for k, (a, t) in sorted(self.counts.items())}


@dataclass
class SweepPlan:
    """Block schedule and replayable random streams for a chain.

    blocks must be a subset of BLOCK_ORDER; the fixed global order is always
    preserved and each block runs exactly once per sweep.
    """

    seed: int
    blocks: tuple = BLOCK_ORDER
    iteration: int = 0
    stats: MhStats = field(default_factory=MhStats)

    def __post_init__(self) -> None:
        unknown = [b for b in self.blocks if b not in BLOCK_ORDER]
        if unknown:
            raise ConfigError(f"unknown sweep blocks {unknown}")
        if len(set(self.blocks)) != len(self.blocks):
            raise ConfigError("sweep blocks must be unique")
        self.blocks = tuple(b for b in BLOCK_ORDER if b in self.blocks)

    def rng(self, stream: int, iteration: int | None = None) -> np.random.Generator:
        it = self.iteration if iteration is None else iteration
        seq = np.random.SeedSequence(self.seed, spawn_key=(it, stream))
        return np.random.default_rng(seq)

    def block_rng(self, block: str) -> np.random.Generator:
        return self.rng(BLOCK_ORDER.index(block))


def _truncnorm_draw(rng: np.random.Generator, mean: float, sd: float) -> float:
    """Inverse-CDF draw from N(mean, sd^2) truncated to (0, inf)."""
    lo = ndtr(-mean / sd)
    u = rng.uniform()
    return mean + sd * float(ndtri(lo + u * (1.0 - lo)))


# ---------------------------------------------------------------------------
# Gibbs blocks: conditional parameters exposed separately from the draws so
# tests can integrate the densities directly.


def phi_conditional(ds: Dataset, st: ModelState, k: int, m: int,
                    beta: float = 1.0, mean: np.ndarray | None = None):
    """Mean and (diagonal) variance of phi_km | rest, both shape (P,)."""
    if mean is None:
        mean = mean_matrix(st)
    coeff = st.z[:, k] * st.chi[:, m]                       # (N,)
    resid = ds.y - mean + coeff[:, None] * st.phi[k, :, m]
    scale = beta / st.sigma2
    prior_prec = st.shrink.tau_tilde[k, m] * st.shrink.gamma[k, :, m]
    prec = scale * float(coeff @ coeff) + prior_prec        # (P,)
    if not np.all(np.isfinite(prec)) or np.any(prec <= 0):
        raise NumericalError(f"phi ({k},{m}) conditional precision not positive")
    var = 1.0 / prec
    return var * (scale * (resid.T @ coeff)), var


def gibbs_phi(ds: Dataset, st: ModelState, k: int, m: int,
              beta: float, rng: np.random.Generator,
              mean: np.ndarray | None = None) -> np.ndarray:
    """Draw phi_km from its full conditional; updates st (and mean) in place."""
    mu, var = phi_conditional(ds, st, k, m, beta, mean)
    new = mu + np.sqrt(var) * rng.normal(size=st.p)
    if mean is not None:
        coeff = st.z[:, k] * st.chi[:, m]
        mean += coeff[:, None] * (new - st.phi[k, :, m])
    st.phi[k, :, m] = new
    return new


def gibbs_phi_orthogonal(ds: Dataset, st: ModelState, k: int, m: int,
                         beta: float, rng: np.random.Generator,
                         mean: np.ndarray | None = None) -> np.ndarray:
    """Draw phi_km subject to mutual orthogonality of the stacked loadings.

    The stacked vectors Phi_m = (phi_1m, ..., phi_Km) must satisfy
    Phi_m^T Phi_n = 0 for n != m.  For the block phi_km this is the linear
    system  phi_kn^T phi_km = -sum_{k' != k} phi_k'm^T phi_k'n  over n != m.
    An unconstrained draw x ~ N(mu, V) is projected onto the constraint set
    with  x - V L (L^T V L)^{-1} (L^T x + c),  which has exactly the law of
    the conditional given the constraints.  With M = 1 there is no
    constraint and the kernel reduces to the unconstrained one.
    """
    mu, var = phi_conditional(ds, st, k, m, beta, mean)
    x = mu + np.sqrt(var) * rng.normal(size=st.p)
    others = [n for n in range(st.dims.M) if n != m]
    if others:
        low = st.phi[k][:, others]                          # (P, M-1)
        cross = np.einsum("jp,jpn->n", np.delete(st.phi[:, :, m], k, axis=0),
                          np.delete(st.phi[:, :, :], k, axis=0)[:, :, others])
        vl = var[:, None] * low
        gram = low.T @ vl
        try:
            w = np.linalg.solve(gram, low.T @ x + cross)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"orthogonality constraints for phi ({k},{m}) are rank deficient"
            ) from exc
        x = x - vl @ w
    if mean is not None:
        coeff = st.z[:, k] * st.chi[:, m]
        mean += coeff[:, None] * (x - st.phi[k, :, m])
    st.phi[k, :, m] = x
    return x


def nu_conditional(ds: Dataset, st: ModelState, k: int, beta: float = 1.0,
                   mean: np.ndarray | None = None,
                   temper_nu_prior: bool = False):
    """Mean (P,) and scalar variance of nu_k | rest."""
    if mean is None:
        mean = mean_matrix(st)
    resid = ds.y - mean + st.z[:, k][:, None] * st.nu[k]
    zsq = float(st.z[:, k] @ st.z[:, k])
    if temper_nu_prior:
        # documented variant: beta lands on the prior precision instead
        prec = beta / st.tau[k] + zsq / st.sigma2
    else:
        prec = 1.0 / st.tau[k] + beta * zsq / st.sigma2
    if not (np.isfinite(prec) and prec > 0):
        raise NumericalError(f"nu {k} conditional precision not positive")
    b = (beta / st.sigma2) * (resid.T @ st.z[:, k])
    return b / prec, 1.0 / prec


def gibbs_nu(ds: Dataset, st: ModelState, k: int, beta: float,
             rng: np.random.Generator, mean: np.ndarray | None = None,
             temper_nu_prior: bool = False) -> np.ndarray:
    mu, var = nu_conditional(ds, st, k, beta, mean, temper_nu_prior)
    new = mu + math.sqrt(var) * rng.normal(size=st.p)
    if mean is not None:
        mean += st.z[:, k][:, None] * (new - st.nu[k])
    st.nu[k] = new
    return new


def chi_conditional(ds: Dataset, st: ModelState, m: int, beta: float = 1.0,
                    mean: np.ndarray | None = None):
    """Means and variances of chi_im | rest for all i, each shape (N,)."""
    if mean is None:
        mean = mean_matrix(st)
    a_m = st.z @ st.phi[:, :, m]                            # (N, P)
    resid = ds.y - mean + st.chi[:, m][:, None] * a_m
    scale = beta / st.sigma2
    prec = 1.0 + scale * np.sum(a_m * a_m, axis=1)
    var = 1.0 / prec
    return var * (scale * np.sum(a_m * resid, axis=1)), var


def gibbs_chi(ds: Dataset, st: ModelState, m: int, beta: float,
              rng: np.random.Generator,
              mean: np.ndarray | None = None) -> np.ndarray:
    mu, var = chi_conditional(ds, st, m, beta, mean)
    new = mu + np.sqrt(var) * rng.normal(size=st.n)
    if mean is not None:
        a_m = st.z @ st.phi[:, :, m]
        mean += (new - st.chi[:, m])[:, None] * a_m
    st.chi[:, m] = new
    return new


def sigma2_conditional(ds: Dataset, st: ModelState, cfg: PriorConfig,
                       beta: float = 1.0, mean: np.ndarray | None = None):
    """Shape and rate of the inverse-gamma conditional of sigma2."""
    if mean is None:
        mean = mean_matrix(st)
    ss = float(np.sum((ds.y - mean) ** 2))
    return cfg.alpha0 + beta * st.n * st.p / 2.0, cfg.beta0 + beta * ss / 2.0


def gibbs_sigma2(ds: Dataset, st: ModelState, cfg: PriorConfig, beta: float,
                 rng: np.random.Generator,
                 mean: np.ndarray | None = None) -> float:
    shape, rate = sigma2_conditional(ds, st, cfg, beta, mean)
    st.sigma2 = float(rate / rng.gamma(shape))
    return st.sigma2


def tau_conditional(st: ModelState, cfg: PriorConfig, k: int):
    """Shape and rate of the inverse-gamma conditional of tau_k."""
    return cfg.alpha + st.p / 2.0, cfg.beta + float(st.nu[k] @ st.nu[k]) / 2.0


def gibbs_tau(st: ModelState, cfg: PriorConfig, k: int,
              rng: np.random.Generator) -> float:
    shape, rate = tau_conditional(st, cfg, k)
    st.tau[k] = float(rate / rng.gamma(shape))
    return st.tau[k]


def delta_conditional(st: ModelState, k: int, i: int):
    """Shape and rate of delta_ki | rest, using the current other increments."""
    sh = st.shrink
    p, m = st.phi.shape[1], st.phi.shape[2]
    s = np.sum(sh.gamma[k] * st.phi[k] ** 2, axis=0)        # (M,) sum over rows
    d = sh.delta[k].copy()
    d[i] = 1.0
    prods = np.cumprod(d)
    shape = (sh.a1[k] if i == 0 else sh.a2[k]) + p * (m - i) / 2.0
    rate = 1.0 + 0.5 * float(s[i:] @ prods[i:])
    return shape, rate


def gibbs_delta(st: ModelState, cfg: PriorConfig, k: int,
                rng: np.random.Generator) -> np.ndarray:
    """Sequentially redraw all shrinkage increments of feature k."""
    for i in range(st.dims.M):
        shape, rate = delta_conditional(st, k, i)
        st.shrink.delta[k, i] = rng.gamma(shape, 1.0 / rate)
    st.shrink.tau_tilde[k] = np.cumprod(st.shrink.delta[k])
    return st.shrink.delta[k]


def gamma_conditional(st: ModelState, cfg: PriorConfig, k: int):
    """Shape (scalar) and rate (P, M) of the local precision conditionals."""
    shape = (cfg.nu_gamma + 1.0) / 2.0
    rate = (st.phi[k] ** 2 * st.shrink.tau_tilde[k][None, :] + cfg.nu_gamma) / 2.0
    return shape, rate


def gibbs_gamma(st: ModelState, cfg: PriorConfig, k: int,
                rng: np.random.Generator) -> np.ndarray:
    shape, rate = gamma_conditional(st, cfg, k)
    st.shrink.gamma[k] = rng.gamma(shape, 1.0 / rate)
    return st.shrink.gamma[k]


# ---------------------------------------------------------------------------
# MH blocks


def a1_log_target(st: ModelState, cfg: PriorConfig, k: int, a: float) -> float:
    """Unnormalized log conditional of a1_k (prior x Gamma(a, 1) on delta_k1)."""
    if a <= 0:
        return -np.inf
    return (-gammaln(a) + (a - 1.0) * math.log(st.shrink.delta[k, 0])
            + (cfg.alpha1 - 1.0) * math.log(a) - cfg.beta1 * a)


def a2_log_target(st: ModelState, cfg: PriorConfig, k: int, a: float) -> float:
    """Unnormalized log conditional of a2_k over increments 2..M."""
    if a <= 0:
        return -np.inf
    m = st.dims.M
    tail = st.shrink.delta[k, 1:]
    return (-(m - 1) * gammaln(a) + (a - 1.0) * float(np.sum(np.log(tail)))
            + (cfg.alpha2 - 1.0) * math.log(a) - cfg.beta2 * a)


def _mh_positive_scalar(cur: float, sd: float, log_target, rng) -> tuple[float, bool]:
    """One truncated-normal random-walk MH step on (0, inf)."""
    prop = _truncnorm_draw(rng, cur, sd)
    if not (np.isfinite(prop) and prop > 0):
        return cur, False
    logr = (log_target(prop) - log_target(cur)
            + log_ndtr(cur / sd) - log_ndtr(prop / sd))
    if math.log(rng.uniform()) < logr:
        return prop, True
    return cur, False


def mh_a1(st: ModelState, cfg: PriorConfig, k: int,
          rng: np.random.Generator) -> tuple[float, bool]:
    sd = math.sqrt(cfg.eps1 / cfg.beta1)
    new, acc = _mh_positive_scalar(st.shrink.a1[k], sd,
                                   lambda a: a1_log_target(st, cfg, k, a), rng)
    st.shrink.a1[k] = new
    return new, acc


def mh_a2(st: ModelState, cfg: PriorConfig, k: int,
          rng: np.random.Generator) -> tuple[float, bool]:
    sd = math.sqrt(cfg.eps2 / cfg.beta2)
    new, acc = _mh_positive_scalar(st.shrink.a2[k], sd,
                                   lambda a: a2_log_target(st, cfg, k, a), rng)
    st.shrink.a2[k] = new
    return new, acc


def z_log_target(ds: Dataset, st: ModelState, cfg: PriorConfig, i: int,
                 z_row: np.ndarray, beta: float = 1.0) -> float:
    """Unnormalized log conditional of membership row i at value z_row."""
    zc = np.clip(z_row, Z_CLAMP, 1.0 - Z_CLAMP)
    u_i = st.nu + np.einsum("m,kpm->kp", st.chi[i], st.phi)     # (K, P)
    mean_i = z_row @ u_i
    conc = st.alpha3 * st.pi
    return float(((conc - 1.0) * np.log(zc)).sum()
                 - beta / (2.0 * st.sigma2) * np.sum((ds.y[i] - mean_i) ** 2))


def mh_z(ds: Dataset, st: ModelState, cfg: PriorConfig, beta: float,
         rng: np.random.Generator, rows: np.ndarray | None = None,
         mean: np.ndarray | None = None) -> tuple[int, int]:
    """Row-wise Dirichlet random-walk MH on the memberships.

    Rows are conditionally independent so all proposals are drawn and
    accepted in one vectorized pass.  Returns (accepted, auto-rejected).
    Degenerate proposals (a coordinate at 0 or 1, or a non-finite value)
    are auto-rejected and counted.
    """
    idx = np.arange(st.n) if rows is None else np.atleast_1d(rows)
    if idx.size == 0:
        return 0, 0
    if mean is None:
        mean = mean_matrix(st)
    z = st.z[idx]                                           # (R, K)
    u_mat = st.nu[None, :, :] + np.einsum("im,kpm->ikp", st.chi[idx], st.phi)
    g = rng.gamma(np.maximum(cfg.a_z * z, 1e-300))
    gsum = g.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        prop = g / gsum
    ok = (np.isfinite(prop).all(axis=1) & (prop > 0.0).all(axis=1)
          & (prop < 1.0).all(axis=1))
    n_degen = int(np.sum(~ok))
    prop[~ok] = z[~ok]

    zc = np.clip(z, Z_CLAMP, 1.0 - Z_CLAMP)
    pc = np.clip(prop, Z_CLAMP, 1.0 - Z_CLAMP)
    conc = st.alpha3 * st.pi
    cur_mean = mean[idx]
    prop_mean = np.einsum("ik,ikp->ip", prop, u_mat)
    scale = beta / (2.0 * st.sigma2)
    logr = (
        ((conc - 1.0) * (np.log(pc) - np.log(zc))).sum(axis=1)
        + scale * (np.sum((ds.y[idx] - cur_mean) ** 2, axis=1)
                   - np.sum((ds.y[idx] - prop_mean) ** 2, axis=1))
        # proposal correction Q(z | z') / Q(z' | z)
        + (gammaln(cfg.a_z * zc) - gammaln(cfg.a_z * pc)).sum(axis=1)
        + ((cfg.a_z * pc - 1.0) * np.log(zc)
           - (cfg.a_z * zc - 1.0) * np.log(pc)).sum(axis=1)
    )
    accept = ok & (np.log(rng.uniform(size=idx.size)) < logr)
    rows_acc = idx[accept]
    st.z[rows_acc] = prop[accept]
    mean[rows_acc] = prop_mean[accept]
    return int(accept.sum()), n_degen


def pi_log_target(st: ModelState, cfg: PriorConfig, pi: np.ndarray) -> float:
    """Unnormalized log conditional of the population weights."""
    if np.any(pi <= 0) or np.any(pi >= 1):
        return -np.inf
    k = pi.shape[0]
    conc = st.alpha3 * pi
    total = float(((cfg.c_vector(k) - 1.0) * np.log(pi)).sum())
    if st.n > 0:
        zc = np.clip(st.z, Z_CLAMP, 1.0 - Z_CLAMP)
        s = np.log(zc).sum(axis=0)
        total += float(st.n * (gammaln(st.alpha3) - gammaln(conc).sum())
                       + ((conc - 1.0) * s).sum())
    return total


def mh_pi(st: ModelState, cfg: PriorConfig,
          rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    prop = rng.dirichlet(cfg.a_pi * st.pi)
    if not (np.all(np.isfinite(prop)) and np.all(prop > 0) and np.all(prop < 1)):
        return st.pi, False
    logr = (
        pi_log_target(st, cfg, prop) - pi_log_target(st, cfg, st.pi)
        + float(log_dirichlet_kernel(st.pi, cfg.a_pi * prop)
                - log_dirichlet_kernel(prop, cfg.a_pi * st.pi))
    )
    if math.log(rng.uniform()) < logr:
        st.pi = prop
        return prop, True
    return st.pi, False


def log_dirichlet_kernel(x: np.ndarray, conc: np.ndarray) -> float:
    """Full Dirichlet(conc) log density at x (normalizer included)."""
    return float(gammaln(conc.sum()) - gammaln(conc).sum()
                 + ((conc - 1.0) * np.log(x)).sum())


def alpha3_log_target(st: ModelState, cfg: PriorConfig, a: float) -> float:
    """Unnormalized log conditional of the concentration scale alpha3."""
    if a <= 0:
        return -np.inf
    total = -cfg.b * a
    if st.n > 0:
        conc = a * st.pi
        zc = np.clip(st.z, Z_CLAMP, 1.0 - Z_CLAMP)
        s = np.log(zc).sum(axis=0)
        total += float(st.n * (gammaln(a) - gammaln(conc).sum())
                       + ((conc - 1.0) * s).sum())
    return total


def mh_alpha3(st: ModelState, cfg: PriorConfig,
              rng: np.random.Generator) -> tuple[float, bool]:
    sd = math.sqrt(cfg.sigma2_alpha3)
    new, acc = _mh_positive_scalar(st.alpha3, sd,
                                   lambda a: alpha3_log_target(st, cfg, a), rng)
    st.alpha3 = float(new)
    return st.alpha3, acc


# ---------------------------------------------------------------------------
# sweeps


def sweep(ds: Dataset, st: ModelState, cfg: PriorConfig, plan: SweepPlan,
          beta: float = 1.0, options: SamplerOptions | None = None) -> ModelState:
    """One full update pass over the plan's blocks; returns a new state."""
    opts = options or SamplerOptions()
    out = st.copy()
    k_n, m_n = out.dims.K, out.dims.M
    mean = mean_matrix(out)

    for block in plan.blocks:
        rng = plan.block_rng(block)
        if block == "nu":
            for k in range(k_n):
                gibbs_nu(ds, out, k, beta, rng, mean, opts.temper_nu_prior)
        elif block == "phi":
            draw = gibbs_phi_orthogonal if opts.orthogonal_phi else gibbs_phi
            for k in range(k_n):
                for m in range(m_n):
                    draw(ds, out, k, m, beta, rng, mean)
        elif block == "chi":
            for m in range(m_n):
                gibbs_chi(ds, out, m, beta, rng, mean)
        elif block == "sigma2":
            gibbs_sigma2(ds, out, cfg, beta, rng, mean)
        elif block == "tau":
            for k in range(k_n):
                gibbs_tau(out, cfg, k, rng)
        elif block == "delta":
            for k in range(k_n):
                gibbs_delta(out, cfg, k, rng)
        elif block == "gamma":
            for k in range(k_n):
                gibbs_gamma(out, cfg, k, rng)
        elif block == "a1":
            for k in range(k_n):
                _, acc = mh_a1(out, cfg, k, rng)
                plan.stats.add("a1", int(acc))
        elif block == "a2":
            for k in range(k_n):
                _, acc = mh_a2(out, cfg, k, rng)
                plan.stats.add("a2", int(acc))
        elif block == "z":
            n_acc, n_degen = mh_z(ds, out, cfg, beta, rng, mean=mean)
            plan.stats.add("z", n_acc, out.n)
            if n_degen:
                plan.stats.add("z_degenerate", n_degen, n_degen)
        elif block == "pi":
            _, acc = mh_pi(out, cfg, rng)
            plan.stats.add("pi", int(acc))
        elif block == "alpha3":
            _, acc = mh_alpha3(out, cfg, rng)
            plan.stats.add("alpha3", int(acc))

    plan.iteration += 1
    return out


# ---------------------------------------------------------------------------
# tempered transitions


@dataclass
class TemperSchedule:
    """Inverse-temperature ladder beta_0 = 1 <= ... <= beta_{n_temps}.

    mix_prob is the per-iteration probability that run_chain attempts a
    tempered transition instead of a plain sweep.
    """

    betas: np.ndarray
    mix_prob: float = 0.1

    def __post_init__(self) -> None:
        self.betas = np.asarray(self.betas, dtype=np.float64)

    @property
    def n_temps(self) -> int:
        return self.betas.shape[0] - 1

    def validate(self) -> None:
        if self.betas.ndim != 1 or self.betas.shape[0] < 2:
            raise ConfigError("ladder needs at least two levels")
        if self.betas[0] != 1.0:
            raise ConfigError(f"ladder must start at 1, got {self.betas[0]}")
        if np.any(np.diff(self.betas) < 0):
            raise ConfigError("ladder must be nondecreasing")
        if not 0.0 <= self.mix_prob <= 1.0:
            raise ConfigError(f"mix_prob must be in [0, 1], got {self.mix_prob}")

    @classmethod
    def geometric(cls, n_temps: int = 10, beta_max: float = 8.0,
                  mix_prob: float = 0.1) -> "TemperSchedule":
        """beta_h = beta_max^(h / n_temps), h = 0..n_temps."""
        if n_temps < 1:
            raise ConfigError(f"n_temps must be >= 1, got {n_temps}")
        if beta_max < 1.0:
            raise ConfigError(f"beta_max must be >= 1, got {beta_max}")
        h = np.arange(n_temps + 1)
        return cls(betas=beta_max ** (h / n_temps), mix_prob=mix_prob)


def tempered_transition(ds: Dataset, st: ModelState, cfg: PriorConfig,
                        plan: SweepPlan, sched: TemperSchedule,
                        options: SamplerOptions | None = None,
                        keep_path: bool = False):
    """One tempered-transition proposal: up the ladder, once at the top, down.

    Runs sweeps at beta_1, ..., beta_{N}, beta_N, beta_{N-1}, ..., beta_1 and
    accepts the final state with log probability

        sum_{h=0}^{N-1} (beta_{h+1} - beta_h) (ll_h - ll_{2N-h}),

    where ll_h is the conditional log likelihood of the h-th ladder state.
    Pairs rung h on the way up with its mirror 2N-h on the way down; a
    constant ladder gives exactly 0, i.e. certain acceptance.

    Returns (state, accepted, diag); diag carries the per-rung log
    likelihoods, the log acceptance ratio, and optionally the rung states.
    """
    sched.validate()
    betas = sched.betas
    n_t = sched.n_temps
    it0 = plan.iteration
    ladder = list(betas[1:]) + list(betas[n_t:0:-1])

    cur = st
    lls = [loglik_conditional(ds, st)]
    path = [st] if keep_path else None
    for b in ladder:
        cur = sweep(ds, cur, cfg, plan, beta=float(b), options=options)
        lls.append(loglik_conditional(ds, cur))
        if keep_path:
            path.append(cur)

    log_acc = 0.0
    for h in range(n_t):
        log_acc += (betas[h + 1] - betas[h]) * (lls[h] - lls[2 * n_t - h])

    rng = plan.rng(_STREAM_ACCEPT, iteration=it0)
    accepted = math.log(rng.uniform()) < log_acc
    diag = {"log_accept": float(log_acc), "rung_logliks": lls,
            "betas": betas.copy(), "path": path}
    out = cur if accepted else st
    plan.stats.add("temper", int(accepted))
    return out, accepted, diag


# ---------------------------------------------------------------------------
# chain driver


def _first_nonfinite_block(st: ModelState) -> str:
    arrays = {
        "nu": st.nu, "phi": st.phi, "chi": st.chi, "z": st.z, "pi": st.pi,
        "tau": st.tau, "gamma": st.shrink.gamma, "delta": st.shrink.delta,
        "a1": st.shrink.a1, "a2": st.shrink.a2,
        "alpha3": np.asarray(st.alpha3), "sigma2": np.asarray(st.sigma2),
    }
    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            return name
    return "loglik"


def run_chain(ds: Dataset, cfg: PriorConfig, dims: ModelDims,
              sched: TemperSchedule | None = None, n_iter: int = 1000,
              thin: int = 1, seed: int = 0, init: ModelState | None = None,
              options: SamplerOptions | None = None) -> ChainStore:
    """Run one MCMC chain and return the stored draws.

    Iterations alternate plain sweeps with tempered transitions according to
    sched.mix_prob (independent coin flips).  Every thin-th state is stored
    together with its conditional log likelihood, giving floor(n_iter/thin)
    records.  A fresh start is drawn from the priors when init is None.
    """
    ds.validate()
    dims.validate(ds.p)
    cfg.validate(dims.K)
    if n_iter < 1:
        raise ConfigError(f"n_iter must be >= 1, got {n_iter}")
    if thin < 1:
        raise ConfigError(f"thin must be >= 1, got {thin}")
    if sched is not None:
        sched.validate()

    plan = SweepPlan(seed=seed)
    if init is None:
        state = prior_draw(ds.n, ds.p, dims, cfg, plan.rng(_STREAM_INIT, iteration=0))
    else:
        if init.n != ds.n or init.p != ds.p or init.dims != dims:
            raise ConfigError("init state does not match data shape or dims")
        state = init.copy()

    store = ChainStore.empty(dims=dims, n=ds.n, p=ds.p, seed=seed,
                             n_iter=n_iter, thin=thin)
    for it in range(n_iter):
        tempered = False
        if sched is not None and sched.n_temps >= 1 and sched.mix_prob > 0:
            mix_rng = plan.rng(_STREAM_MIX, iteration=it)
            tempered = mix_rng.uniform() < sched.mix_prob
        if tempered:
            state, _, _ = tempered_transition(ds, state, cfg, plan, sched, options)
        else:
            state = sweep(ds, state, cfg, plan, beta=1.0, options=options)
        ll = loglik_conditional(ds, state)
        if not np.isfinite(ll):
            raise NumericalError(
                f"non-finite log likelihood at iteration {it} "
                f"(offending block: {_first_nonfinite_block(state)})"
            )
        if (it + 1) % thin == 0:
            store.append(state, ll)

    store.meta["mh"] = plan.stats.as_dict()
    store.finalize()
    return store
