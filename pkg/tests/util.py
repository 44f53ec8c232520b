"""Shared helpers for the test suite."""

import numpy as np

from mixmemb.model import Dataset, ModelState, ShrinkageHyperState


def make_state(rng, n=4, p=3, k=2, m=2, sigma2=None):
    """Random valid ModelState with consistent shrinkage products."""
    a1 = rng.uniform(1.0, 3.0, size=k)
    a2 = rng.uniform(1.0, 3.0, size=k)
    delta = rng.uniform(0.5, 2.0, size=(k, m))
    gamma = rng.uniform(0.5, 2.0, size=(k, p, m))
    z = rng.dirichlet(np.ones(k), size=n) if n else np.empty((0, k))
    return ModelState(
        nu=rng.normal(size=(k, p)),
        phi=rng.normal(size=(k, p, m)),
        chi=rng.normal(size=(n, m)),
        z=z,
        pi=rng.dirichlet(np.ones(k)),
        alpha3=float(rng.uniform(0.5, 3.0)),
        sigma2=float(sigma2 if sigma2 is not None else rng.uniform(0.3, 2.0)),
        tau=rng.uniform(0.5, 2.0, size=k),
        shrink=ShrinkageHyperState(
            gamma=gamma, delta=delta, tau_tilde=np.cumprod(delta, axis=1),
            a1=a1, a2=a2,
        ),
    )


def make_dataset(rng, st):
    """Data drawn loosely around the state's mean surface."""
    from mixmemb.model import mean_matrix

    y = mean_matrix(st) + rng.normal(size=(st.n, st.p))
    return Dataset(y=y)


def batch_mean_se(series, n_batches=50):
    """Standard error of the mean via batch means (autocorrelation-robust)."""
    series = np.asarray(series, dtype=np.float64)
    size = series.shape[0] // n_batches
    batches = series[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return batches.std(ddof=1) / np.sqrt(n_batches)


def geweke_zscores(n, p, dims, cfg, transition, funcs, rounds, seed,
                   forward_draws=None):
    """Successive-conditional consistency check of a transition kernel.

    Compares moments of functions of the state between (a) independent prior
    draws and (b) a chain that alternates data simulation with the supplied
    transition(ds, st) kernel.  If the kernel leaves the prior-predictive
    joint invariant, every z-score is O(1).

    Returns {name: (forward_mean, chain_mean, zscore)}.
    """
    from mixmemb.model import prior_draw, simulate_data

    forward_draws = forward_draws or rounds
    rng_f = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    fwd = {name: np.empty(forward_draws) for name in funcs}
    for r in range(forward_draws):
        st = prior_draw(n, p, dims, cfg, rng_f)
        for name, fn in funcs.items():
            fwd[name][r] = fn(st)

    rng_d = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))
    st = prior_draw(n, p, dims, cfg, rng_d)
    chain = {name: np.empty(rounds) for name in funcs}
    for r in range(rounds):
        ds = simulate_data(st, rng_d)
        st = transition(ds, st)
        for name, fn in funcs.items():
            chain[name][r] = fn(st)

    out = {}
    for name in funcs:
        mf, mc = fwd[name].mean(), chain[name].mean()
        se_f = fwd[name].std(ddof=1) / np.sqrt(forward_draws)
        se_c = batch_mean_se(chain[name])
        z = (mf - mc) / np.sqrt(se_f ** 2 + se_c ** 2)
        out[name] = (mf, mc, z)
    return out


def standard_geweke_funcs():
    """First and second moments of nu, sigma2, and delta entries."""
    funcs = {
        "nu_mean": lambda st: st.nu.mean(),
        "nu_sq_mean": lambda st: (st.nu ** 2).mean(),
        "nu_00": lambda st: st.nu[0, 0],
        "nu_00_sq": lambda st: st.nu[0, 0] ** 2,
        "nu_12": lambda st: st.nu[1, 2],
        "sigma2": lambda st: st.sigma2,
        "sigma2_sq": lambda st: st.sigma2 ** 2,
        "delta_mean": lambda st: st.shrink.delta.mean(),
        "delta_sq_mean": lambda st: (st.shrink.delta ** 2).mean(),
        "delta_00": lambda st: st.shrink.delta[0, 0],
        "delta_11": lambda st: st.shrink.delta[1, 1],
    }
    return funcs


def dense_marginal_cov(st, i):
    """Marginal covariance of observation i assembled by explicit loops."""
    k, p, m = st.phi.shape
    cov = np.zeros((p, p))
    for a in range(k):
        for b in range(k):
            for mm in range(m):
                cov += st.z[i, a] * st.z[i, b] * np.outer(st.phi[a, :, mm],
                                                          st.phi[b, :, mm])
    return cov + st.sigma2 * np.eye(p)
