"""Shared data containers, seeding, CSV ingestion and JSON report output."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

ROLES = ("y", "a", "z", "w", "x")


class IccError(Exception):
    """Base class for analysis errors raised by this package."""


class GateError(IccError):
    """A workflow gate (rank ladder, relevance screen, support check) failed."""


class RelevanceError(IccError):
    """Instruments carry no usable variation conditional on the control."""


class CompletenessError(IccError):
    """A conditional distribution is not rich enough to identify the target."""


class DegenerateControlError(IccError):
    """The requested control collapses (zero loadings or singular Gram)."""


class StrongRelevanceError(IccError):
    """The contrast representer is not attainable: alpha not in range."""


def _as_2d(arr, name: str) -> np.ndarray:
    a = np.asarray(arr, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{name} must be 1- or 2-dimensional, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class Dataset:
    """Rectangular numeric data with role-tagged blocks.

    y is the outcome (n,), a the treatment block (n, d_A), z the instrument
    block (n, d_Z), w the proxy block (n, d_W) and x optional exogenous
    covariates (n, d_X).  w and x may have zero columns; y, a and z may not.
    All entries must be finite.
    """

    y: np.ndarray
    a: np.ndarray
    z: np.ndarray
    w: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    x: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        n = y.shape[0]
        a = _as_2d(self.a, "a")
        z = _as_2d(self.z, "z")
        w = np.asarray(self.w, dtype=float)
        if w.size == 0:
            w = np.empty((n, 0))
        w = _as_2d(w, "w")
        x = np.asarray(self.x, dtype=float)
        if x.size == 0:
            x = np.empty((n, 0))
        x = _as_2d(x, "x")
        for name, blk in (("a", a), ("z", z), ("w", w), ("x", x)):
            if blk.shape[0] != n:
                raise ValueError(f"block {name} has {blk.shape[0]} rows, y has {n}")
        if a.shape[1] == 0 or z.shape[1] == 0:
            raise ValueError("a and z must each have at least one column")
        for name, blk in (("y", y), ("a", a), ("z", z), ("w", w), ("x", x)):
            if blk.size and not np.isfinite(blk).all():
                raise ValueError(f"block {name} contains non-finite values")
        d_tot = a.shape[1] + z.shape[1] + w.shape[1] + x.shape[1]
        if n <= d_tot + 1:
            raise ValueError(f"need n > {d_tot + 1} rows, got {n}")
        for blk in (y, a, z, w, x):
            blk.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d_a(self) -> int:
        return self.a.shape[1]

    @property
    def d_z(self) -> int:
        return self.z.shape[1]

    @property
    def d_w(self) -> int:
        return self.w.shape[1]

    @property
    def d_x(self) -> int:
        return self.x.shape[1]

    def take(self, idx) -> "Dataset":
        """Row subset / resample (used by bootstrap loops)."""
        return Dataset(self.y[idx], self.a[idx], self.z[idx], self.w[idx], self.x[idx])


@dataclass(frozen=True)
class SeedSpec:
    """Deterministic seeding: a master seed plus a stream id.

    Replicate b of any Monte Carlo loop draws from the entropy tuple
    (master_seed, stream_id, b), so runs are reproducible bit for bit and
    independent of execution order or worker count.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0 or v >= 2**64:
                raise ValueError(f"{name} must be an integer in [0, 2^64), got {v!r}")

    def rng(self, *extra: int) -> np.random.Generator:
        return np.random.default_rng([int(self.master_seed), int(self.stream_id), *map(int, extra)])

    def replicate(self, b: int) -> "SeedSpec":
        # fold the replicate index into the stream; children stay disjoint
        return SeedSpec(self.master_seed, (int(self.stream_id) << 20) ^ (b + 1))

    def to_dict(self) -> dict:
        return {"master_seed": int(self.master_seed), "stream_id": int(self.stream_id)}


@dataclass(frozen=True)
class LoadResult:
    """A parsed Dataset plus bookkeeping from listwise deletion."""

    dataset: Dataset
    n_read: int
    n_dropped: int
    columns: dict


def load_csv(path, schema: dict) -> LoadResult:
    """Read an RFC-4180 CSV with header into a Dataset.

    schema maps column name -> role, one of y/a/z/w/x/ignore
    (case-insensitive).  Rows with a missing value in any used column are
    dropped listwise and counted in the result.  Column order within a role
    follows the file's column order.
    """
    frame = pd.read_csv(path, encoding="utf-8")
    norm = {}
    for col, role in schema.items():
        r = str(role).strip().lower()
        if r not in ROLES and r != "ignore":
            raise ValueError(f"unknown role {role!r} for column {col!r}")
        norm[col] = r
    missing = [c for c in norm if c not in frame.columns]
    if missing:
        raise ValueError(f"schema names absent from file: {missing}")
    unassigned = [c for c in frame.columns if c not in norm]
    if unassigned:
        raise ValueError(f"columns without a role: {unassigned}")

    by_role = {r: [c for c in frame.columns if norm[c] == r] for r in ROLES}
    if len(by_role["y"]) != 1:
        raise ValueError(f"exactly one outcome column required, got {by_role['y']}")
    for r in ("a", "z"):
        if not by_role[r]:
            raise ValueError(f"role {r!r} has zero columns")

    used = [c for c in frame.columns if norm[c] != "ignore"]
    sub = frame[used]
    for col in used:
        if not pd.api.types.is_numeric_dtype(sub[col]):
            coerced = pd.to_numeric(sub[col], errors="coerce")
            bad = coerced.isna() & sub[col].notna()
            if bad.any():
                raise ValueError(f"non-numeric value in column {col!r} at row {int(bad.idxmax())}")
            sub = sub.assign(**{col: coerced})
    keep = sub.notna().all(axis=1)
    n_read = len(sub)
    sub = sub.loc[keep]

    def block(cols):
        if not cols:
            return np.empty((len(sub), 0))
        return sub[cols].to_numpy(dtype=float)

    ds = Dataset(
        y=block(by_role["y"]).reshape(-1),
        a=block(by_role["a"]),
        z=block(by_role["z"]),
        w=block(by_role["w"]),
        x=block(by_role["x"]),
    )
    return LoadResult(dataset=ds, n_read=n_read, n_dropped=int(n_read - keep.sum()),
                      columns={r: list(by_role[r]) for r in ROLES})


def save_csv(dataset: Dataset, path) -> dict:
    """Write a Dataset to CSV with role-prefixed headers; returns the schema."""
    cols, data = [], []
    cols.append("y")
    data.append(dataset.y)
    for prefix, blk in (("a", dataset.a), ("z", dataset.z), ("w", dataset.w), ("x", dataset.x)):
        for j in range(blk.shape[1]):
            cols.append(f"{prefix}{j + 1}")
            data.append(blk[:, j])
    frame = pd.DataFrame(dict(zip(cols, data)))
    frame.to_csv(path, index=False)
    schema = {c: ("y" if c == "y" else c[0]) for c in cols}
    return schema


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if obj is None or isinstance(obj, str):
        return obj
    if dataclasses.is_dataclass(obj):
        d = {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        d.setdefault("kind", _kind_name(type(obj).__name__))
        return d
    raise TypeError(f"cannot serialize {type(obj)!r}")


def _kind_name(cls_name: str) -> str:
    out = []
    for ch in cls_name:
        if ch.isupper() and out:
            out.append("_")
        out.append(ch.lower())
    return "".join(out)


def report_dict(result, seed: SeedSpec | None = None) -> dict:
    """Normalize a result object into a JSON-ready dict with a kind tag."""
    d = _jsonable(result)
    if not isinstance(d, dict):
        raise TypeError("report payload must serialize to an object")
    if "kind" not in d:
        d["kind"] = _kind_name(type(result).__name__)
    if seed is not None and "seed" not in d:
        d["seed"] = seed.to_dict()
    return d


def write_report(result, path, seed: SeedSpec | None = None) -> dict:
    """Serialize a result to pretty-printed JSON.

    Serialization is canonical (sorted keys, fixed separators, repr floats),
    so re-serializing a parsed report is byte-identical.
    """
    d = result if isinstance(result, dict) else report_dict(result, seed)
    d = _jsonable(d)
    text = json.dumps(d, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return d


def read_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("ICC_WORKERS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items, workers: int | None = None):
    """Map fn over items, optionally with a process pool.

    Results keep item order, and every item carries its own seed, so the
    output is identical for any worker count.
    """
    items = list(items)
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    import multiprocessing as mp

    try:
        with mp.get_context("fork").Pool(processes=min(workers, len(items))) as pool:
            return pool.map(fn, items)
    except (OSError, ValueError):
        return [fn(it) for it in items]
