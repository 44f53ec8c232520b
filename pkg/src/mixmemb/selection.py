"""Information criteria (BIC, AIC, DIC) and elbow data for choosing K.

BIC here is on the 2*loglik - penalty scale, so larger is better; AIC and
DIC are on the deviance scale, so smaller is better.  The plug-in estimate
behind BIC/AIC evaluates the conditional density at the posterior mean of
each observation's mean vector together with the posterior mean noise
variance, sidestepping the label and rescale ambiguity of per-parameter
means.  DIC is the multimodality-robust variant built from the Monte Carlo
predictive density; both of its terms integrate the factor scores out.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DimensionError
from .io import ChainStore
from .model import (
    LOG_2PI,
    Dataset,
    loglik_conditional_rows,
    loglik_marginal_rows,
    mean_matrix,
)


def param_count(n: int, p: int, k: int, m: int) -> int:
    """Number of free parameters at the given sizes."""
    for name, v in (("n", n), ("p", p), ("k", k), ("m", m)):
        if not isinstance(v, (int, np.integer)) or v < 1:
            raise ConfigError(f"{name} must be an integer >= 1, got {v!r}")
    return (n + p) * k + 2 * m * k * p + 4 * k + (n + k) * m + 2


def _check_pair(chain: ChainStore, ds: Dataset) -> int:
    if ds.n != chain.n or ds.p != chain.p:
        raise DimensionError(
            f"data is {ds.n} x {ds.p} but the chain was fit on "
            f"{chain.n} x {chain.p}"
        )
    r = chain.n_records
    if r == 0:
        raise ConfigError("cannot evaluate information criteria on an empty chain")
    return r


def plugin_loglik(chain: ChainStore, ds: Dataset) -> float:
    """Conditional log density at the posterior-mean observation means."""
    r_total = _check_pair(chain, ds)
    mean_bar = np.zeros((ds.n, ds.p))
    for st in chain.states():
        mean_bar += mean_matrix(st)
    mean_bar /= r_total
    sigma2_bar = float(chain.block("sigma2").mean())
    resid = ds.y - mean_bar
    ss = float(np.sum(resid * resid))
    return (-0.5 * ds.n * ds.p * (LOG_2PI + math.log(sigma2_bar))
            - ss / (2.0 * sigma2_bar))


def bic_from_loglik(loglik: float, d: int, n: int) -> float:
    return 2.0 * loglik - d * math.log(n)


def aic_from_loglik(loglik: float, d: int) -> float:
    return -2.0 * loglik + 2.0 * d


def bic(chain: ChainStore, ds: Dataset) -> float:
    d = param_count(chain.n, chain.p, chain.dims.K, chain.dims.M)
    return bic_from_loglik(plugin_loglik(chain, ds), d, chain.n)


def aic(chain: ChainStore, ds: Dataset) -> float:
    d = param_count(chain.n, chain.p, chain.dims.K, chain.dims.M)
    return aic_from_loglik(plugin_loglik(chain, ds), d)


def dic(chain: ChainStore, ds: Dataset, use_marginal: bool = True) -> float:
    """-4 E[log f(Y|draws)] + 2 log fhat(Y), fhat = per-draw density average.

    use_marginal=False switches both terms to the conditional density that
    keeps the factor scores in the conditioning set.
    """
    r_total = _check_pair(chain, ds)
    rows_fn = loglik_marginal_rows if use_marginal else loglik_conditional_rows
    ll_rows = np.empty((r_total, ds.n))
    for r, st in enumerate(chain.states()):
        ll_rows[r] = rows_fn(ds, st)
    e_term = float(ll_rows.sum(axis=1).mean())
    log_fhat = logsumexp(ll_rows, axis=0) - math.log(r_total)
    return -4.0 * e_term + 2.0 * float(log_fhat.sum())


@dataclass
class IcReport:
    """Criteria for one fitted chain."""

    k: int
    d: int
    bic: float
    aic: float
    dic: float
    mean_loglik: float

    def to_dict(self) -> dict:
        return {"k": self.k, "d": self.d, "bic": self.bic, "aic": self.aic,
                "dic": self.dic, "mean_loglik": self.mean_loglik}


def ic_report(chain: ChainStore, ds: Dataset) -> IcReport:
    _check_pair(chain, ds)
    d = param_count(chain.n, chain.p, chain.dims.K, chain.dims.M)
    ll = plugin_loglik(chain, ds)
    return IcReport(
        k=chain.dims.K, d=d,
        bic=bic_from_loglik(ll, d, chain.n),
        aic=aic_from_loglik(ll, d),
        dic=dic(chain, ds),
        mean_loglik=float(chain.logliks.mean()),
    )


def elbow_data(reports: list[IcReport]) -> list[tuple[int, float]]:
    """(K, mean stored log-likelihood) rows for the elbow plot, sorted by K.

    Reports sharing a K (replicate fits) are averaged.  No automatic elbow
    detection: the bend is judged by eye.
    """
    if not reports:
        raise ConfigError("elbow_data needs at least one report")
    by_k: dict[int, list[float]] = {}
    for rep in reports:
        by_k.setdefault(rep.k, []).append(rep.mean_loglik)
    return [(k, float(np.mean(v))) for k, v in sorted(by_k.items())]
