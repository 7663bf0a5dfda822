"""Data model for sparse longitudinal mediation data and CSV ingestion.

A dataset holds one :class:`Subject` per individual: a scalar exposure, a
mediator vector, a covariate vector, and an irregular sequence of
``(time, outcome)`` observations.  The on-disk format is a single long
(tidy) CSV in which the per-subject attributes are repeated on every row.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import ValidationError

__all__ = [
    "Subject",
    "LongitudinalDataset",
    "CsvSchema",
    "load_long_csv",
    "write_long_csv",
    "normalize_times",
]


def _frozen_array(values, name: str, ndim: int = 1) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"non-finite value in {name}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Subject:
    """One individual: exposure ``x``, mediators ``m``, covariates ``z``,
    and the observed outcome trajectory ``(t, y)``."""

    id: str
    x: float
    m: np.ndarray
    z: np.ndarray
    t: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        x = float(self.x)
        if not np.isfinite(x):
            raise ValidationError(f"non-finite exposure for subject {self.id}")
        object.__setattr__(self, "x", x)
        for name in ("m", "z", "t", "y"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name), f"{name} of subject {self.id}"))
        if self.t.size < 1:
            raise ValidationError(f"subject {self.id} has no observations")
        if self.t.size != self.y.size:
            raise ValidationError(f"subject {self.id}: {self.t.size} times but {self.y.size} outcomes")
        if np.any(np.diff(self.t) <= 0):
            raise ValidationError(f"subject {self.id}: times must be strictly increasing")

    @property
    def n_obs(self) -> int:
        return int(self.t.size)

    def equals(self, other: "Subject") -> bool:
        return (
            self.id == other.id
            and self.x == other.x
            and all(np.array_equal(getattr(self, f), getattr(other, f)) for f in "mzty")
        )


@dataclass(frozen=True, eq=False)
class LongitudinalDataset:
    """Immutable collection of subjects sharing mediator/covariate layouts.

    ``time_map`` is the affine map ``(offset, scale)`` taking the stored
    times back to the original scale: ``original = offset + scale * t``.
    """

    subjects: tuple
    mediator_names: tuple = ()
    covariate_names: tuple = ()
    time_domain: tuple = (0.0, 1.0)
    time_map: tuple = (0.0, 1.0)

    def __post_init__(self):
        subjects = tuple(self.subjects)
        object.__setattr__(self, "subjects", subjects)
        if len(subjects) < 2:
            raise ValidationError(f"need at least 2 subjects, got {len(subjects)}")
        p, q = subjects[0].m.size, subjects[0].z.size
        ids = set()
        for s in subjects:
            if s.m.size != p or s.z.size != q:
                raise ValidationError(f"subject {s.id}: mediator/covariate lengths differ from ({p}, {q})")
            if s.id in ids:
                raise ValidationError(f"duplicate subject id {s.id}")
            ids.add(s.id)
        med = tuple(self.mediator_names) or tuple(f"M{k + 1}" for k in range(p))
        cov = tuple(self.covariate_names) or tuple(f"Z{l + 1}" for l in range(q))
        if len(med) != p or len(cov) != q:
            raise ValidationError("name lists do not match mediator/covariate counts")
        object.__setattr__(self, "mediator_names", med)
        object.__setattr__(self, "covariate_names", cov)
        lo, hi = (float(v) for v in self.time_domain)
        if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
            raise ValidationError(f"invalid time domain ({lo}, {hi})")
        object.__setattr__(self, "time_domain", (lo, hi))
        object.__setattr__(self, "time_map", tuple(float(v) for v in self.time_map))
        for s in subjects:
            if s.t[0] < lo or s.t[-1] > hi:
                raise ValidationError(f"subject {s.id}: times outside domain [{lo}, {hi}]")

    # -- array views ---------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def p(self) -> int:
        return self.subjects[0].m.size

    @property
    def q(self) -> int:
        return self.subjects[0].z.size

    @cached_property
    def x(self) -> np.ndarray:
        return np.array([s.x for s in self.subjects])

    @cached_property
    def M(self) -> np.ndarray:
        return np.array([s.m for s in self.subjects]).reshape(self.n, self.p)

    @cached_property
    def Z(self) -> np.ndarray:
        return np.array([s.z for s in self.subjects]).reshape(self.n, self.q)

    @cached_property
    def n_obs(self) -> np.ndarray:
        return np.array([s.n_obs for s in self.subjects])

    @property
    def times(self) -> list:
        return [s.t for s in self.subjects]

    @property
    def outcomes(self) -> list:
        return [s.y for s in self.subjects]

    def to_original_time(self, t):
        offset, scale = self.time_map
        return offset + scale * np.asarray(t, dtype=float)

    # -- derived datasets -----------------------------------------------
    def _replace(self, subjects) -> "LongitudinalDataset":
        return LongitudinalDataset(
            tuple(subjects), self.mediator_names, self.covariate_names, self.time_domain, self.time_map
        )

    def subset(self, indices: Iterable[int]) -> "LongitudinalDataset":
        return self._replace(self.subjects[i] for i in indices)

    def with_mediator(self, k: int, values) -> "LongitudinalDataset":
        """Copy with mediator column ``k`` replaced by ``values`` (one per subject)."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n,):
            raise ValidationError(f"expected {self.n} mediator values, got shape {values.shape}")
        out = []
        for s, v in zip(self.subjects, values):
            m = s.m.copy()
            m[k] = v
            out.append(Subject(s.id, s.x, m, s.z, s.t, s.y))
        return self._replace(out)

    def equals(self, other: "LongitudinalDataset") -> bool:
        return (
            self.n == other.n
            and self.mediator_names == other.mediator_names
            and self.covariate_names == other.covariate_names
            and self.time_domain == other.time_domain
            and self.time_map == other.time_map
            and all(a.equals(b) for a, b in zip(self.subjects, other.subjects))
        )


def normalize_times(ds: LongitudinalDataset) -> LongitudinalDataset:
    """Map the observed time range affinely onto [0, 1].

    The inverse map is composed into ``ds.time_map`` so effects can be
    reported on the original scale.  Idempotent.
    """
    lo = min(float(s.t[0]) for s in ds.subjects)
    hi = max(float(s.t[-1]) for s in ds.subjects)
    if not hi > lo:
        raise ValidationError("cannot normalize times: all observation times are identical")
    width = hi - lo
    subjects = [Subject(s.id, s.x, s.m, s.z, (s.t - lo) / width, s.y) for s in ds.subjects]
    offset, scale = ds.time_map
    return LongitudinalDataset(
        tuple(subjects),
        ds.mediator_names,
        ds.covariate_names,
        (0.0, 1.0),
        (offset + scale * lo, scale * width),
    )


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------


@dataclass
class CsvSchema:
    """Column mapping for the long CSV format.

    Either list the mediator columns explicitly or give a prefix; every
    column starting with ``mediator_prefix`` is then taken, in file order.
    """

    subject: str = "id"
    time: str = "time"
    outcome: str = "y"
    exposure: str = "x"
    mediators: Sequence[str] = field(default_factory=list)
    covariates: Sequence[str] = field(default_factory=list)
    mediator_prefix: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "CsvSchema":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown schema keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "CsvSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def resolve_mediators(self, columns: Sequence[str]) -> list:
        if self.mediators:
            return list(self.mediators)
        if self.mediator_prefix:
            return [c for c in columns if c.startswith(self.mediator_prefix)]
        return []


def load_long_csv(path, schema: CsvSchema | dict | None = None, time_domain=None) -> LongitudinalDataset:
    """Read a long-format CSV into a validated :class:`LongitudinalDataset`.

    Rows of a subject may appear in any order; times are sorted.  Exposure,
    mediator and covariate columns must be constant within a subject.  The
    time domain defaults to the observed time range.
    """
    if schema is None:
        schema = CsvSchema()
    elif isinstance(schema, dict):
        schema = CsvSchema.from_dict(schema)
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    df = pd.read_csv(path, encoding="utf-8", float_precision="round_trip", dtype={schema.subject: str})

    mediators = schema.resolve_mediators(df.columns)
    covariates = list(schema.covariates)
    required = [schema.subject, schema.time, schema.outcome, schema.exposure, *mediators, *covariates]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise ValidationError(f"missing column(s): {', '.join(missing)}")
    if df[schema.subject].isna().any():
        raise ValidationError(f"missing value in column {schema.subject}")

    numeric = required[1:]
    for col in numeric:
        values = pd.to_numeric(df[col], errors="coerce").to_numpy(dtype=float)
        if not np.all(np.isfinite(values)):
            bad = df.loc[~np.isfinite(values), schema.subject].iloc[0]
            raise ValidationError(f"non-finite value in column {col} (subject {bad})")
        df[col] = values

    dup = df.duplicated([schema.subject, schema.time])
    if dup.any():
        row = df.loc[dup].iloc[0]
        raise ValidationError(f"duplicate (subject, time) pair: ({row[schema.subject]}, {row[schema.time]})")

    labels = {schema.exposure: "exposure"}
    labels.update({c: f"mediator {c}" for c in mediators})
    labels.update({c: f"covariate {c}" for c in covariates})

    subjects = []
    for sid, g in df.groupby(schema.subject, sort=False):
        for col, label in labels.items():
            if g[col].nunique() > 1:
                raise ValidationError(f"non-constant {label} for subject {sid}")
        g = g.sort_values(schema.time, kind="mergesort")
        first = g.iloc[0]
        subjects.append(
            Subject(
                id=sid,
                x=first[schema.exposure],
                m=first[mediators].to_numpy(dtype=float) if mediators else np.zeros(0),
                z=first[covariates].to_numpy(dtype=float) if covariates else np.zeros(0),
                t=g[schema.time].to_numpy(dtype=float),
                y=g[schema.outcome].to_numpy(dtype=float),
            )
        )
    if time_domain is None:
        t_all = df[schema.time].to_numpy(dtype=float)
        lo, hi = float(t_all.min()), float(t_all.max())
        time_domain = (lo, hi if hi > lo else lo + 1.0)
    return LongitudinalDataset(tuple(subjects), tuple(mediators), tuple(covariates), tuple(time_domain))


def write_long_csv(ds: LongitudinalDataset, path, schema: CsvSchema | None = None) -> CsvSchema:
    """Write ``ds`` in long format; floats use shortest round-trip repr.

    Times are written on the stored (possibly normalized) scale.  Returns the
    schema that reads the file back.
    """
    schema = schema or CsvSchema(mediators=list(ds.mediator_names), covariates=list(ds.covariate_names))
    mediators = list(schema.mediators) or list(ds.mediator_names)
    covariates = list(schema.covariates) or list(ds.covariate_names)
    n_obs = ds.n_obs
    rows = {
        schema.subject: np.repeat([s.id for s in ds.subjects], n_obs),
        schema.time: np.concatenate(ds.times),
        schema.outcome: np.concatenate(ds.outcomes),
        schema.exposure: np.repeat(ds.x, n_obs),
    }
    for k, name in enumerate(mediators):
        rows[name] = np.repeat(ds.M[:, k], n_obs)
    for l, name in enumerate(covariates):
        rows[name] = np.repeat(ds.Z[:, l], n_obs)
    pd.DataFrame(rows).to_csv(path, index=False, encoding="utf-8")
    return CsvSchema(schema.subject, schema.time, schema.outcome, schema.exposure, mediators, covariates)
