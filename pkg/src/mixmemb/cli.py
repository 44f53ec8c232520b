"""Command line driver: fit, select, simulate, summarize, rescale.

Run configuration comes from an optional JSON file of flat dotted keys
("dims.k", "run.n_iter", "prior.alpha0", ...) with command line flags
winning on conflict.  Exit codes: 0 success, 2 config error, 3 data
error, 4 numerical failure.
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .initialize import MsaConfig, multi_start
from .io import (
    ChainStore,
    StandardizeRecord,
    destandardize_mean,
    load_csv,
    save_csv,
    standardize,
)
from .model import Dataset, ModelDims, PriorConfig
from .postprocess import FitReport, membership_rescale, relabel, summarize
from .sampler import SamplerOptions, TemperSchedule, run_chain
from .selection import elbow_data, ic_report
from .simulate import generate_ss1, generate_ss2


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """Resolved settings for one fit (or one fit per K under select)."""

    data: str = ""
    out: str = ""
    k: int = 2
    m: int = 2
    n_iter: int = 1000
    thin: int = 1
    seed: int = 0
    standardize: bool = True
    orthogonal_phi: bool = False
    rescale: bool = False
    relabel: bool = False
    temper_levels: int = 0          # 0 disables tempered transitions
    temper_beta_max: float = 8.0
    temper_mix_prob: float = 0.1
    prior: dict = field(default_factory=dict)
    msa: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.thin < 1:
            raise ConfigError(f"thin must be >= 1, got {self.thin}")
        if self.n_iter < self.thin:
            raise ConfigError(
                f"n_iter must be >= thin, got n_iter={self.n_iter} thin={self.thin}"
            )
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got k={self.k}")
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got m={self.m}")
        if self.temper_levels < 0:
            raise ConfigError(
                f"temper_levels must be >= 0, got {self.temper_levels}"
            )

    def snapshot(self) -> dict:
        """Content-determining settings; paths stay out so equal runs into
        different directories still produce identical chain files."""
        return {
            "k": self.k, "m": self.m, "n_iter": self.n_iter, "thin": self.thin,
            "seed": self.seed, "standardize": self.standardize,
            "orthogonal_phi": self.orthogonal_phi, "rescale": self.rescale,
            "relabel": self.relabel, "temper_levels": self.temper_levels,
            "temper_beta_max": self.temper_beta_max,
            "temper_mix_prob": self.temper_mix_prob,
            "prior": dict(self.prior), "msa": dict(self.msa),
        }


_PRIOR_KEYS = {f.name for f in fields(PriorConfig)}
_MSA_KEYS = {f.name for f in fields(MsaConfig)}

_SCALAR_KEYS = {
    "data": ("data", str),
    "out": ("out", str),
    "dims.k": ("k", int),
    "dims.m": ("m", int),
    "run.n_iter": ("n_iter", int),
    "run.thin": ("thin", int),
    "run.seed": ("seed", int),
    "flags.standardize": ("standardize", bool),
    "flags.orthogonal_phi": ("orthogonal_phi", bool),
    "flags.rescale": ("rescale", bool),
    "flags.relabel": ("relabel", bool),
    "temper.levels": ("temper_levels", int),
    "temper.beta_max": ("temper_beta_max", float),
    "temper.mix_prob": ("temper_mix_prob", float),
}


def config_from_keys(raw: dict) -> RunConfig:
    """Build a RunConfig from a flat dict of dotted keys."""
    cfg = RunConfig()
    for key, value in raw.items():
        if key in _SCALAR_KEYS:
            attr, typ = _SCALAR_KEYS[key]
            if typ is bool:
                if not isinstance(value, bool):
                    raise ConfigError(f"config key {key!r} must be a boolean")
                setattr(cfg, attr, value)
            else:
                try:
                    setattr(cfg, attr, typ(value))
                except (TypeError, ValueError) as exc:
                    raise ConfigError(
                        f"config key {key!r} has unusable value {value!r}"
                    ) from exc
            continue
        group, _, name = key.partition(".")
        if group == "prior" and name in _PRIOR_KEYS:
            cfg.prior[name] = value
        elif group == "msa" and name in _MSA_KEYS:
            cfg.msa[name] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return cfg


def config_from_file(path: str) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return config_from_keys(raw)


_FLAG_ATTRS = [
    ("data", "data"), ("out", "out"), ("k", "k"), ("m", "m"),
    ("iters", "n_iter"), ("thin", "thin"), ("seed", "seed"),
    ("temper_levels", "temper_levels"),
    ("temper_beta_max", "temper_beta_max"),
    ("orthogonal_phi", "orthogonal_phi"),
    ("rescale", "rescale"), ("relabel", "relabel"),
]


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the JSON config file, then explicit flags."""
    cfg = config_from_file(args.config) if args.config else RunConfig()
    for flag, attr in _FLAG_ATTRS:
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, attr, value)
    if getattr(args, "no_standardize", None):
        cfg.standardize = False
    cfg.validate()
    return cfg


def prior_from_config(cfg: RunConfig) -> PriorConfig:
    prior = PriorConfig(**cfg.prior)
    return prior


def msa_from_config(cfg: RunConfig) -> MsaConfig:
    msa = MsaConfig(**cfg.msa)
    msa.validate()
    return msa


def schedule_from_config(cfg: RunConfig) -> TemperSchedule | None:
    if cfg.temper_levels < 1:
        return None
    return TemperSchedule.geometric(
        n_temps=cfg.temper_levels, beta_max=cfg.temper_beta_max,
        mix_prob=cfg.temper_mix_prob,
    )


# ---------------------------------------------------------------------------
# shared pipeline pieces


def _load_data(cfg: RunConfig) -> Dataset:
    if not cfg.data:
        raise ConfigError("a data path is required (--data or the 'data' key)")
    return load_csv(cfg.data, has_header=_sniff_header(cfg.data))


def _sniff_header(path: str) -> bool:
    """True when the first CSV row has a cell that does not parse as float."""
    try:
        with open(path, newline="") as fh:
            first = next(csv.reader(fh), None)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not first:
        return False
    for cell in first:
        try:
            float(cell)
        except ValueError:
            return True
    return False


def _out_dir(cfg: RunConfig) -> Path:
    if not cfg.out:
        raise ConfigError("an output directory is required (--out or the 'out' key)")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fit_chain(work: Dataset, cfg: RunConfig, k: int, seed: int,
               rec: StandardizeRecord | None) -> ChainStore:
    """Initialize via restarts and run one chain on (already prepared) data."""
    dims = ModelDims(K=k, M=cfg.m)
    prior = prior_from_config(cfg)
    init = multi_start(work, prior, dims, msa_from_config(cfg), seed=seed,
                       standardize=False)
    options = SamplerOptions(orthogonal_phi=cfg.orthogonal_phi)
    chain = run_chain(work, prior, dims, sched=schedule_from_config(cfg),
                      n_iter=cfg.n_iter, thin=cfg.thin, seed=seed, init=init,
                      options=options)
    chain.meta["run"] = {**cfg.snapshot(), "k": k, "seed": seed}
    if rec is not None:
        chain.meta["standardize"] = rec.to_dict()
    if cfg.relabel:
        chain = relabel(chain)
    if cfg.rescale:
        chain = rescale_chain(chain)
    return chain


def rescale_chain(chain: ChainStore) -> ChainStore:
    """Rescale every stored draw; draws with a singular transform are dropped."""
    out = chain.like_empty()
    logliks = chain.logliks
    applied = 0
    skipped = 0
    for r, st in enumerate(chain.states()):
        try:
            result = membership_rescale(st)
        except NumericalError:
            skipped += 1
            continue
        out.append(result.apply(st), float(logliks[r]))
        applied += 1
    if applied == 0:
        raise NumericalError("membership rescaling failed on every stored draw")
    out.meta["rescale"] = {"applied": applied, "skipped": skipped}
    out.finalize()
    return out


def _write_report(out: Path, report: FitReport,
                  rec: StandardizeRecord | None) -> None:
    (out / "report.json").write_text(report.to_json(indent=2) + "\n")
    _write_means_csv(out / "means.csv", report, rec)
    _write_membership_csv(out / "membership.csv", report)


def _write_means_csv(path: Path, report: FitReport,
                     rec: StandardizeRecord | None) -> None:
    """Feature mean point estimates and intervals, in raw data units.

    De-standardization is affine with positive slope per coordinate, so the
    quantiles map through exactly.
    """
    nu = report.params["nu"]
    median, lower, upper = nu.median, nu.lower, nu.upper
    if rec is not None:
        median = destandardize_mean(median, rec)
        lower = destandardize_mean(lower, rec)
        upper = destandardize_mean(upper, rec)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "coordinate", "median", "lower", "upper"])
        k, p = median.shape
        for i in range(k):
            for j in range(p):
                writer.writerow([
                    i, j, repr(float(median[i, j])),
                    repr(float(lower[i, j])), repr(float(upper[i, j])),
                ])


def _write_membership_csv(path: Path, report: FitReport) -> None:
    z = report.params["z"]
    n, k = z.median.shape
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["obs"]
        for j in range(k):
            header += [f"z{j}_median", f"z{j}_lower", f"z{j}_upper"]
        writer.writerow(header)
        for i in range(n):
            row: list = [i]
            for j in range(k):
                row += [repr(float(z.median[i, j])), repr(float(z.lower[i, j])),
                        repr(float(z.upper[i, j]))]
            writer.writerow(row)


def _standardize_record(chain: ChainStore) -> StandardizeRecord | None:
    raw = chain.meta.get("standardize")
    return StandardizeRecord.from_dict(raw) if raw else None


# ---------------------------------------------------------------------------
# commands


def cmd_fit(cfg: RunConfig) -> int:
    ds = _load_data(cfg)
    out = _out_dir(cfg)
    if cfg.standardize:
        work, rec = standardize(ds)
    else:
        work, rec = ds, None
    chain = _fit_chain(work, cfg, cfg.k, cfg.seed, rec)
    chain.save(out / "chain")
    _write_report(out, summarize(chain), rec)
    return 0


def cmd_select(cfg: RunConfig, ks: list[int]) -> int:
    if not ks:
        raise ConfigError("select needs at least one K value")
    if any(k < 2 for k in ks):
        raise ConfigError(f"every K must be >= 2, got {sorted(ks)}")
    ks = sorted(set(ks))
    ds = _load_data(cfg)
    out = _out_dir(cfg)
    if cfg.standardize:
        work, rec = standardize(ds)
    else:
        work, rec = ds, None

    def fit_one(k: int):
        # per-K seeds derive from the run seed so the thread schedule
        # cannot change any chain
        seed_k = int(np.random.SeedSequence(cfg.seed, spawn_key=(k,))
                     .generate_state(1)[0])
        chain = _fit_chain(work, cfg, k, seed_k, rec)
        chain.save(out / f"chain_k{k}")
        return ic_report(chain, work)

    workers = os.environ.get("MIXMEMB_THREADS")
    max_workers = min(len(ks), int(workers) if workers else (os.cpu_count() or 1))
    if max_workers < 1:
        raise ConfigError(f"MIXMEMB_THREADS must be >= 1, got {workers}")
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        reports = list(pool.map(fit_one, ks))

    with (out / "ic.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "d", "bic", "aic", "dic", "mean_loglik"])
        for r in reports:
            writer.writerow([r.k, r.d, repr(r.bic), repr(r.aic), repr(r.dic),
                             repr(r.mean_loglik)])
    with (out / "elbow.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "mean_loglik"])
        for k, ll in elbow_data(reports):
            writer.writerow([k, repr(ll)])
    return 0


def cmd_simulate(recipe: str, n: int, seed: int, out_path: str) -> int:
    if recipe == "ss1":
        ds, truth = generate_ss1(n=n, seed=seed)
    elif recipe == "ss2":
        ds, truth = generate_ss2(seed=seed)
    else:
        raise ConfigError(f"unknown recipe {recipe!r}")
    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)
    ds.columns = [f"y{j + 1}" for j in range(ds.p)]
    save_csv(ds, out / "data.csv")
    truth_doc = {
        "recipe": recipe, "seed": seed,
        "nu": truth.nu.tolist(), "phi": truth.phi.tolist(),
        "chi": truth.chi.tolist(), "z": truth.z.tolist(),
        "sigma2": truth.sigma2,
    }
    (out / "truth.json").write_text(
        json.dumps(truth_doc, sort_keys=True, indent=2) + "\n"
    )
    return 0


def cmd_summarize(chain_path: str, out_path: str, *, do_relabel: bool = False,
                  do_rescale: bool = False) -> int:
    chain = ChainStore.load(chain_path)
    if do_relabel:
        chain = relabel(chain)
    if do_rescale:
        chain = rescale_chain(chain)
    out = Path(out_path)
    out.mkdir(parents=True, exist_ok=True)
    _write_report(out, summarize(chain), _standardize_record(chain))
    return 0


def cmd_rescale(chain_path: str, out_prefix: str) -> int:
    chain = ChainStore.load(chain_path)
    rescale_chain(chain).save(out_prefix)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_run_flags(sp: argparse.ArgumentParser, *, many_k: bool) -> None:
    sp.add_argument("--config", help="JSON config file with flat dotted keys")
    sp.add_argument("--data", help="input CSV path")
    sp.add_argument("--out", help="output directory")
    if many_k:
        sp.add_argument("--k", type=int, nargs="+",
                        help="feature counts to compare")
    else:
        sp.add_argument("--k", type=int, help="number of features")
    sp.add_argument("--m", type=int, help="number of eigencomponents")
    sp.add_argument("--iters", type=int, help="MCMC iterations")
    sp.add_argument("--thin", type=int, help="store every thin-th draw")
    sp.add_argument("--seed", type=int, help="RNG seed")
    sp.add_argument("--temper-levels", type=int, dest="temper_levels",
                    help="tempering ladder size (0 disables)")
    sp.add_argument("--temper-beta-max", type=float, dest="temper_beta_max",
                    help="largest inverse-temperature scale")
    sp.add_argument("--orthogonal-phi", action="store_true", default=None,
                    dest="orthogonal_phi",
                    help="keep stacked loadings mutually orthogonal")
    sp.add_argument("--rescale", action="store_true", default=None,
                    help="rescale memberships after sampling (K=2 only)")
    sp.add_argument("--relabel", action="store_true", default=None,
                    help="fix label switching after sampling")
    sp.add_argument("--no-standardize", action="store_true", default=None,
                    dest="no_standardize",
                    help="fit the raw data without standardizing columns")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixmemb",
        description="Mixed membership model fitting and model selection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit one model and write summaries")
    _add_run_flags(fit, many_k=False)

    sel = sub.add_parser("select", help="fit several K and compare ICs")
    _add_run_flags(sel, many_k=True)

    sim = sub.add_parser("simulate", help="write a synthetic dataset")
    sim.add_argument("--recipe", required=True, choices=("ss1", "ss2"))
    sim.add_argument("--n", type=int, default=250,
                     help="sample size (ss1 only)")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True, help="output directory")

    summ = sub.add_parser("summarize", help="summarize a saved chain")
    summ.add_argument("--chain", required=True,
                      help="chain path prefix (without .bin/.json)")
    summ.add_argument("--out", required=True, help="output directory")
    summ.add_argument("--relabel", action="store_true")
    summ.add_argument("--rescale", action="store_true")

    res = sub.add_parser("rescale", help="rescale a saved chain's draws")
    res.add_argument("--chain", required=True,
                     help="chain path prefix (without .bin/.json)")
    res.add_argument("--out", required=True, help="output path prefix")

    return parser


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "fit":
        return cmd_fit(resolve_config(args))
    if args.command == "select":
        ks = args.k
        args.k = None                       # keep resolve_config scalar-only
        cfg = resolve_config(args)
        return cmd_select(cfg, ks if ks is not None else [cfg.k])
    if args.command == "simulate":
        return cmd_simulate(args.recipe, args.n, args.seed, args.out)
    if args.command == "summarize":
        return cmd_summarize(args.chain, args.out, do_relabel=args.relabel,
                             do_rescale=args.rescale)
    if args.command == "rescale":
        return cmd_rescale(args.chain, args.out)
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
