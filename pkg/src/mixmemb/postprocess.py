"""Chain post-processing: membership rescaling, relabeling, summaries.

Membership values are only identified up to an invertible mixing of the
features, so raw draws can be hard to read.  Rescaling pins the two-feature
case so that each feature has at least one pure observation.  Relabeling
undoes label switching across draws.  Summaries reduce a chain to medians,
central 95% intervals, and reconstructed covariance structure.
"""

import json
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .errors import ConfigError, NumericalError
from .io import ChainStore, _jsonify
from .model import ModelState, permute_features, reconstruct_covariance

RESCALE_SINGULAR_TOL = 1e-10


@dataclass
class RescaleResult:
    """Transformed draw: T mixes features so each has a pure observation."""

    T: np.ndarray       # (K, K), rows are the extreme membership rows
    z_t: np.ndarray     # (N, K)
    nu_t: np.ndarray    # (K, P)
    phi_t: np.ndarray   # (K, P, M)

    def apply(self, st: ModelState) -> ModelState:
        """Copy of st carrying the transformed (z, nu, phi)."""
        out = st.copy()
        out.z = self.z_t.copy()
        out.nu = self.nu_t.copy()
        out.phi = self.phi_t.copy()
        return out


def membership_rescale(draw: ModelState) -> RescaleResult:
    """Remix two features so each column of z attains 1 at some row.

    T collects the z rows holding the per-column maxima; the data means
    stay fixed because z T^-1 (T nu) = z nu, and likewise per loading
    column, so the conditional likelihood is unchanged.
    """
    k = draw.z.shape[1]
    if k != 2:
        raise ConfigError(
            f"membership rescaling is defined for K=2 features, got K={k}"
        )
    rows = np.argmax(draw.z, axis=0)
    T = draw.z[rows].copy()
    # for K=2 the determinant is the column-1 spread between the two rows
    det = T[0, 0] * T[1, 1] - T[0, 1] * T[1, 0]
    if rows[0] == rows[1] or abs(det) < RESCALE_SINGULAR_TOL:
        raise NumericalError(
            "membership transform is singular: one row attains both column "
            "maxima (memberships never separate); relabel the chain before "
            "rescaling"
        )
    z_t = np.linalg.solve(T.T, draw.z.T).T
    # exact arithmetic keeps rows on the simplex; trim float dust
    z_t = np.clip(z_t, 0.0, 1.0)
    z_t /= z_t.sum(axis=1, keepdims=True)
    nu_t = T @ draw.nu
    phi_t = np.einsum("kl,lpm->kpm", T, draw.phi)
    return RescaleResult(T=T, z_t=z_t, nu_t=nu_t, phi_t=phi_t)


def relabel(chain: ChainStore) -> ChainStore:
    """Align feature labels across draws.

    Each draw gets the permutation whose nu lies closest (in squared
    distance) to the running mean of the already-aligned nu draws; every
    per-feature block is permuted together, so each draw's likelihood is
    untouched.
    """
    k = chain.dims.K
    if k > 8:
        raise ConfigError(f"relabeling enumerates K! permutations; K={k} > 8")
    perms = [np.asarray(p) for p in permutations(range(k))]
    out = chain.like_empty()
    logliks = chain.logliks
    ref = None
    switched = 0
    for r, st in enumerate(chain.states()):
        if ref is None:
            best = 0
        else:
            costs = [float(np.sum((st.nu[p] - ref) ** 2)) for p in perms]
            best = int(np.argmin(costs))
        if best != 0:
            st = permute_features(st, perms[best])
            switched += 1
        ref = st.nu if ref is None else ref + (st.nu - ref) / (r + 1)
        out.append(st, float(logliks[r]))
    out.finalize()
    out.meta["relabel"] = {"switched": switched, "n_draws": chain.n_records}
    return out


@dataclass
class BlockSummary:
    """Elementwise posterior median and central 95% interval."""

    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def validate(self) -> None:
        if not (np.all(self.lower <= self.median)
                and np.all(self.median <= self.upper)):
            raise NumericalError("interval bounds out of order")

    def to_dict(self) -> dict:
        return {"median": self.median, "lower": self.lower,
                "upper": self.upper}


@dataclass
class FitReport:
    """Posterior summaries of one chain."""

    params: dict[str, BlockSummary]   # per stored block, plus "loglik"
    cov_median: np.ndarray            # (K, K, P, P) cross-covariance blocks
    eigenvalues: BlockSummary         # stacked-matrix spectrum over draws
    eigenvectors: np.ndarray          # (K*P, M) of the median stacked matrix
    n_draws: int
    mh: dict | None = None
    ic: dict | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "n_draws": self.n_draws,
            "params": {k: v.to_dict() for k, v in self.params.items()},
            "cov_median": self.cov_median,
            "eigenvalues": self.eigenvalues.to_dict(),
            "eigenvectors": self.eigenvectors,
        }
        if self.mh is not None:
            d["mh"] = self.mh
        if self.ic is not None:
            d["ic"] = self.ic
        d.update(self.extra)
        return d

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), default=_jsonify, sort_keys=True,
                          indent=indent)


def summarize(chain: ChainStore) -> FitReport:
    """Medians, 95% intervals, and covariance reconstructions for a chain."""
    recs = chain.records if chain.records is not None else None
    if recs is None or recs.shape[0] == 0:
        chain.finalize()
        recs = chain.records
    if recs.shape[0] == 0:
        raise ConfigError("cannot summarize an empty chain")

    qs = np.quantile(recs, [0.025, 0.5, 0.975], axis=0)
    params: dict[str, BlockSummary] = {}
    for name, offset, shape in chain.layout():
        size = int(np.prod(shape, dtype=int)) if shape else 1
        sl = slice(offset, offset + size)
        summ = BlockSummary(median=qs[1, sl].reshape(shape),
                            lower=qs[0, sl].reshape(shape),
                            upper=qs[2, sl].reshape(shape))
        summ.validate()
        params[name] = summ

    k, p, m = chain.dims.K, chain.p, chain.dims.M
    r_total = recs.shape[0]
    cross = np.empty((r_total, k, k, p, p))
    evals = np.empty((r_total, k * p))
    for r, st in enumerate(chain.states()):
        cov = reconstruct_covariance(st)
        cross[r] = cov.cross
        evals[r] = cov.eigenvalues
    cov_q = np.quantile(cross, 0.5, axis=0)
    ev_q = np.quantile(evals, [0.025, 0.5, 0.975], axis=0)
    eig = BlockSummary(median=ev_q[1], lower=ev_q[0], upper=ev_q[2])
    eig.validate()

    stacked_median = cov_q.transpose(0, 2, 1, 3).reshape(k * p, k * p)
    w, v = np.linalg.eigh(stacked_median)
    order = np.argsort(w)[::-1]
    vectors = v[:, order[:m]]

    return FitReport(params=params, cov_median=cov_q, eigenvalues=eig,
                     eigenvectors=vectors, n_draws=r_total,
                     mh=chain.meta.get("mh"))
