"""Data loading, standardization, and chain persistence.

Chains are stored as flat float64 records, one per saved iteration, in a
raw little-endian binary file next to a JSON sidecar holding the header
(dimensions, seed, schema version, block layout).  The format is
deterministic: identical chains produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError
from .model import Dataset, ModelDims, ModelState, ShrinkageHyperState

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# CSV input


def load_csv(path: str | Path, has_header: bool = True) -> Dataset:
    """Read an N x P numeric matrix from an RFC-4180 CSV file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in csv.reader(text.splitlines()) if r]
    if not rows:
        raise DataError(f"{path} is empty")
    columns = None
    start = 0
    if has_header:
        columns = [c.strip() for c in rows[0]]
        start = 1
        if len(rows) == 1:
            raise DataError(f"{path} has a header but no data rows")
    width = len(rows[start])
    data = np.empty((len(rows) - start, width))
    for r, row in enumerate(rows[start:], start=start):
        if len(row) != width:
            raise DataError(
                f"{path}: row {r + 1} has {len(row)} cells, expected {width}"
            )
        for c, cell in enumerate(row):
            try:
                data[r - start, c] = float(cell)
            except ValueError as exc:
                raise DataError(
                    f"{path}: non-numeric cell at row {r + 1}, column {c + 1}: "
                    f"{cell!r}"
                ) from exc
    ds = Dataset(y=data, columns=columns)
    ds.validate()
    return ds


def save_csv(ds: Dataset, path: str | Path) -> Path:
    """Write a Dataset back to CSV; a header row only if columns are named."""
    ds.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        if ds.columns is not None:
            writer.writerow(ds.columns)
        for row in ds.y:
            writer.writerow([repr(float(v)) for v in row])
    return path


# ---------------------------------------------------------------------------
# standardization


@dataclass
class StandardizeRecord:
    """Per-column center and scale used to standardize a dataset."""

    center: np.ndarray   # (P,)
    scale: np.ndarray    # (P,)

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizeRecord":
        return cls(center=np.asarray(d["center"], dtype=np.float64),
                   scale=np.asarray(d["scale"], dtype=np.float64))


def standardize(ds: Dataset) -> tuple[Dataset, StandardizeRecord]:
    """Center and scale each column to mean 0 and unit variance."""
    ds.validate()
    center = ds.y.mean(axis=0)
    scale = ds.y.std(axis=0)
    flat = np.flatnonzero(scale == 0.0)
    if flat.size:
        raise DataError(f"column {flat[0] + 1} is constant and cannot be scaled")
    out = Dataset(y=(ds.y - center) / scale, columns=ds.columns)
    return out, StandardizeRecord(center=center, scale=scale)


def destandardize_mean(nu: np.ndarray, rec: StandardizeRecord) -> np.ndarray:
    """Map feature means (..., P) back to the raw data scale.

    Valid because memberships sum to 1 across features, so the per-column
    center distributes into every feature mean.
    """
    return rec.center + rec.scale * nu


def destandardize_loadings(phi: np.ndarray, rec: StandardizeRecord) -> np.ndarray:
    """Map loadings (K, P, M) or (P, M) back to the raw data scale."""
    if phi.ndim == 2:
        return rec.scale[:, None] * phi
    return rec.scale[None, :, None] * phi


def destandardize_cov(cov: np.ndarray, rec: StandardizeRecord) -> np.ndarray:
    """Map P x P covariance blocks (trailing two axes) back to the raw scale."""
    return cov * np.outer(rec.scale, rec.scale)


# ---------------------------------------------------------------------------
# chain storage


def _block_shapes(dims: ModelDims, n: int, p: int) -> list[tuple[str, tuple[int, ...]]]:
    k, m = dims.K, dims.M
    return [
        ("nu", (k, p)),
        ("phi", (k, p, m)),
        ("chi", (n, m)),
        ("z", (n, k)),
        ("pi", (k,)),
        ("alpha3", ()),
        ("sigma2", ()),
        ("tau", (k,)),
        ("gamma", (k, p, m)),
        ("delta", (k, m)),
        ("a1", (k,)),
        ("a2", (k,)),
    ]


@dataclass
class ChainStore:
    """Stored MCMC draws: one flat float64 record per saved iteration.

    The final entry of each record is the conditional log likelihood of the
    stored state.
    """

    dims: ModelDims
    n: int
    p: int
    seed: int
    n_iter: int
    thin: int
    records: np.ndarray | None = None      # (R, record_len) after finalize
    meta: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION
    _pending: list = field(default_factory=list, repr=False)

    @classmethod
    def empty(cls, dims: ModelDims, n: int, p: int, seed: int,
              n_iter: int, thin: int) -> "ChainStore":
        return cls(dims=dims, n=n, p=p, seed=seed, n_iter=n_iter, thin=thin)

    # -- layout ------------------------------------------------------------

    def layout(self) -> list[tuple[str, int, tuple[int, ...]]]:
        """(name, offset, shape) for each block within one record."""
        out = []
        offset = 0
        for name, shape in _block_shapes(self.dims, self.n, self.p):
            out.append((name, offset, shape))
            offset += int(np.prod(shape, dtype=int))
        out.append(("loglik", offset, ()))
        return out

    @property
    def record_len(self) -> int:
        name, offset, shape = self.layout()[-1]
        return offset + 1

    @property
    def n_records(self) -> int:
        if self.records is not None:
            return self.records.shape[0]
        return len(self._pending)

    # -- build -------------------------------------------------------------

    def _flatten(self, st: ModelState, loglik: float) -> np.ndarray:
        sh = st.shrink
        parts = [st.nu, st.phi, st.chi, st.z, st.pi,
                 np.asarray(st.alpha3), np.asarray(st.sigma2), st.tau,
                 sh.gamma, sh.delta, sh.a1, sh.a2, np.asarray(loglik)]
        return np.concatenate([np.asarray(a, dtype=np.float64).ravel()
                               for a in parts])

    def append(self, st: ModelState, loglik: float) -> None:
        if st.n != self.n or st.p != self.p or st.dims != self.dims:
            raise DimensionError("state shape does not match this chain store")
        self._pending.append(self._flatten(st, loglik))

    def finalize(self) -> None:
        new = (np.vstack(self._pending) if self._pending
               else np.empty((0, self.record_len)))
        if self.records is not None and self.records.size:
            self.records = np.vstack([self.records, new])
        else:
            self.records = new
        self._pending = []

    # -- access ------------------------------------------------------------

    def _require_records(self) -> np.ndarray:
        if self.records is None:
            self.finalize()
        return self.records

    def block(self, name: str) -> np.ndarray:
        """All draws of one block, shape (R,) + block shape."""
        recs = self._require_records()
        for bname, offset, shape in self.layout():
            if bname == name:
                size = int(np.prod(shape, dtype=int)) if shape else 1
                flat = recs[:, offset:offset + size]
                return flat.reshape((recs.shape[0],) + shape)
        raise KeyError(name)

    @property
    def logliks(self) -> np.ndarray:
        return self.block("loglik")

    def state_at(self, r: int) -> ModelState:
        """Rebuild the full ModelState of record r."""
        delta = self.block("delta")[r]
        return ModelState(
            nu=self.block("nu")[r].copy(), phi=self.block("phi")[r].copy(),
            chi=self.block("chi")[r].copy(), z=self.block("z")[r].copy(),
            pi=self.block("pi")[r].copy(), alpha3=float(self.block("alpha3")[r]),
            sigma2=float(self.block("sigma2")[r]), tau=self.block("tau")[r].copy(),
            shrink=ShrinkageHyperState(
                gamma=self.block("gamma")[r].copy(), delta=delta.copy(),
                tau_tilde=np.cumprod(delta, axis=1),
                a1=self.block("a1")[r].copy(), a2=self.block("a2")[r].copy(),
            ),
        )

    def states(self):
        # pull each block once; per-record state_at would re-slice the
        # whole column block every call
        blocks = {name: self.block(name) for name, _, _ in self.layout()
                  if name != "loglik"}
        for r in range(self.n_records):
            delta = blocks["delta"][r]
            yield ModelState(
                nu=blocks["nu"][r].copy(), phi=blocks["phi"][r].copy(),
                chi=blocks["chi"][r].copy(), z=blocks["z"][r].copy(),
                pi=blocks["pi"][r].copy(), alpha3=float(blocks["alpha3"][r]),
                sigma2=float(blocks["sigma2"][r]), tau=blocks["tau"][r].copy(),
                shrink=ShrinkageHyperState(
                    gamma=blocks["gamma"][r].copy(), delta=delta.copy(),
                    tau_tilde=np.cumprod(delta, axis=1),
                    a1=blocks["a1"][r].copy(), a2=blocks["a2"][r].copy(),
                ),
            )

    def like_empty(self) -> "ChainStore":
        """Fresh store with the same header, ready for modified draws."""
        out = ChainStore(dims=self.dims, n=self.n, p=self.p, seed=self.seed,
                         n_iter=self.n_iter, thin=self.thin,
                         meta=dict(self.meta))
        return out

    # -- persistence ---------------------------------------------------------

    def _header(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "k": self.dims.K, "m": self.dims.M,
            "n": self.n, "p": self.p,
            "seed": self.seed, "n_iter": self.n_iter, "thin": self.thin,
            "n_records": self.n_records, "record_len": self.record_len,
            "layout": [{"name": n_, "offset": o, "shape": list(s)}
                       for n_, o, s in self.layout()],
            "meta": self.meta,
        }

    def save(self, prefix: str | Path) -> tuple[Path, Path]:
        """Write <prefix>.bin and <prefix>.json; returns both paths."""
        recs = self._require_records()
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        bin_path = prefix.with_suffix(".bin")
        json_path = prefix.with_suffix(".json")
        bin_path.write_bytes(np.ascontiguousarray(recs, dtype="<f8").tobytes())
        json_path.write_text(json.dumps(self._header(), sort_keys=True,
                                        separators=(",", ":"), default=_jsonify)
                             + "\n")
        return bin_path, json_path

    @classmethod
    def load(cls, prefix: str | Path) -> "ChainStore":
        prefix = Path(prefix)
        json_path = prefix.with_suffix(".json")
        bin_path = prefix.with_suffix(".bin")
        try:
            header = json.loads(json_path.read_text())
        except OSError as exc:
            raise DataError(f"cannot read chain header {json_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"corrupt chain header {json_path}: {exc}") from exc
        if header.get("schema_version") != SCHEMA_VERSION:
            raise DataError(
                f"unsupported chain schema {header.get('schema_version')!r}"
            )
        try:
            raw = bin_path.read_bytes()
        except OSError as exc:
            raise DataError(f"cannot read chain data {bin_path}: {exc}") from exc
        dims = ModelDims(K=header["k"], M=header["m"])
        store = cls(dims=dims, n=header["n"], p=header["p"], seed=header["seed"],
                    n_iter=header["n_iter"], thin=header["thin"],
                    meta=header.get("meta", {}))
        expected = header["n_records"] * store.record_len * 8
        if len(raw) != expected:
            raise DataError(
                f"{bin_path}: {len(raw)} bytes, expected {expected} "
                f"({header['n_records']} records of {store.record_len} values)"
            )
        store.records = np.frombuffer(raw, dtype="<f8").reshape(
            header["n_records"], store.record_len
        ).copy()
        return store

    def to_csv(self, path: str | Path) -> Path:
        """Flat CSV export: one row per record, one column per scalar."""
        recs = self._require_records()
        names: list[str] = []
        for bname, _, shape in self.layout():
            if not shape:
                names.append(bname)
            else:
                for idx in np.ndindex(shape):
                    names.append(bname + "_" + "_".join(map(str, idx)))
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for row in recs:
                writer.writerow([repr(float(v)) for v in row])
        return path


def _jsonify(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)!r}")
