"""Trial data containers, CSV ingestion and landmark filtering.

A :class:`Dataset` is stored column-wise (numpy arrays) so the fitting code
can work on it directly; :class:`Subject` is the per-row view.

Conventions
-----------
* ``arm`` is 1 for the experimental arm and 0 for control.
* Strata are coded ``1..J``. A stratum value is only present for treated
  subjects whose status was observed (``missing == False``).
* The post-landmark measure ``b`` is present for every treated subject and
  absent for every control.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .exceptions import (
    DegenerateStratum,
    InconsistentMissingness,
    InvalidSubject,
    InvalidValue,
    MissingColumn,
    WrongEndpointKind,
)


class Arm(IntEnum):
    CONTROL = 0
    EXPERIMENTAL = 1


class Endpoint(str, Enum):
    BINARY = "binary"
    TIME_TO_EVENT = "tte"


@dataclass(frozen=True)
class BinaryOutcome:
    y: int


@dataclass(frozen=True)
class SurvivalOutcome:
    time: float
    event: bool


@dataclass(frozen=True)
class Subject:
    id: str
    arm: Arm
    stratum: int | None
    missing_flag: bool | None
    post_measure: int | None
    covariates: tuple[float, ...]
    outcome: BinaryOutcome | SurvivalOutcome

    def __post_init__(self):
        if self.arm == Arm.CONTROL:
            if self.stratum is not None or self.post_measure is not None:
                raise InvalidSubject(
                    f"{self.id}: control subjects carry no stratum or post-landmark measure")
            if self.missing_flag is not None:
                raise InvalidSubject(f"{self.id}: missing flag is not applicable to controls")
        else:
            if self.missing_flag is None:
                raise InvalidSubject(f"{self.id}: treated subjects need a missing flag")
            if self.missing_flag and self.stratum is not None:
                raise InvalidSubject(f"{self.id}: stratum recorded although flagged missing")
            if not self.missing_flag and self.stratum is None:
                raise InvalidSubject(f"{self.id}: stratum absent although not flagged missing")
            if self.post_measure is None:
                raise InvalidSubject(f"{self.id}: treated subjects need a post-landmark measure")
        if isinstance(self.outcome, SurvivalOutcome) and not self.outcome.time > 0:
            raise InvalidSubject(f"{self.id}: survival time must be positive")


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated, immutable trial dataset.

    Build one with :meth:`from_subjects` or :meth:`from_arrays`; the raw
    constructor expects arrays that already follow the column conventions
    in the module docstring.
    """

    ids: np.ndarray
    arm: np.ndarray
    stratum: np.ndarray  # 0 where absent
    missing: np.ndarray  # False for controls
    b: np.ndarray  # 0 for controls
    X: np.ndarray
    covariate_names: tuple[str, ...]
    num_strata: int
    endpoint: Endpoint
    y: np.ndarray | None = None
    time: np.ndarray | None = None
    event: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.ids)
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[0] != n:
            raise InvalidSubject("covariate matrix must be n x K")
        if X.shape[1] != len(self.covariate_names):
            raise InvalidSubject("covariate_names does not match covariate matrix width")
        if not np.all(np.isfinite(X)):
            raise InvalidSubject("covariates must be finite")
        arm = np.asarray(self.arm, dtype=np.int8)
        stratum = np.asarray(self.stratum, dtype=np.int64)
        missing = np.asarray(self.missing, dtype=bool)
        b = np.asarray(self.b, dtype=np.int64)
        for name, arr in (("arm", arm), ("stratum", stratum), ("missing", missing), ("b", b)):
            if arr.shape != (n,):
                raise InvalidSubject(f"{name} must have length {n}")
        if not np.isin(arm, (0, 1)).all():
            raise InvalidSubject("arm must be 0 or 1")
        if self.num_strata < 2:
            raise InvalidSubject("at least two strata are required")
        treated = arm == 1
        if (stratum[~treated] != 0).any() or (b[~treated] != 0).any() or missing[~treated].any():
            raise InvalidSubject("control subjects carry no stratum, missing flag or b")
        obs = treated & ~missing
        if ((stratum[obs] < 1) | (stratum[obs] > self.num_strata)).any():
            raise InvalidSubject(f"observed strata must lie in 1..{self.num_strata}")
        if (stratum[treated & missing] != 0).any():
            raise InvalidSubject("stratum recorded for a subject flagged missing")
        endpoint = Endpoint(self.endpoint)
        if endpoint is Endpoint.BINARY:
            if self.y is None:
                raise InvalidSubject("binary endpoint needs y")
            y = np.asarray(self.y, dtype=np.int8)
            if y.shape != (n,) or not np.isin(y, (0, 1)).all():
                raise InvalidSubject("y must be a 0/1 vector")
            object.__setattr__(self, "y", _frozen(y))
            object.__setattr__(self, "time", None)
            object.__setattr__(self, "event", None)
        else:
            if self.time is None or self.event is None:
                raise InvalidSubject("time-to-event endpoint needs time and event")
            time = np.asarray(self.time, dtype=float)
            event = np.asarray(self.event, dtype=bool)
            if time.shape != (n,) or event.shape != (n,):
                raise InvalidSubject("time/event must have length n")
            if not (np.isfinite(time).all() and (time > 0).all()):
                raise InvalidSubject("survival times must be positive and finite")
            object.__setattr__(self, "time", _frozen(time))
            object.__setattr__(self, "event", _frozen(event))
            object.__setattr__(self, "y", None)
        ids = np.asarray(self.ids).astype(str)
        object.__setattr__(self, "ids", _frozen(ids, dtype=object))
        object.__setattr__(self, "arm", _frozen(arm))
        object.__setattr__(self, "stratum", _frozen(stratum))
        object.__setattr__(self, "missing", _frozen(missing))
        object.__setattr__(self, "b", _frozen(b))
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "endpoint", endpoint)

    # -- constructors ---------------------------------------------------

    @classmethod
    def from_arrays(cls, *, arm, stratum, missing, b, X, covariate_names, num_strata,
                    endpoint, y=None, time=None, event=None, ids=None) -> "Dataset":
        n = len(arm)
        if ids is None:
            ids = np.char.add("s", np.arange(1, n + 1).astype(str))
        return cls(ids=ids, arm=arm, stratum=stratum, missing=missing, b=b, X=X,
                   covariate_names=tuple(covariate_names), num_strata=int(num_strata),
                   endpoint=Endpoint(endpoint), y=y, time=time, event=event)

    @classmethod
    def from_subjects(cls, subjects: Sequence[Subject], covariate_names: Sequence[str],
                      num_strata: int | None = None) -> "Dataset":
        subjects = list(subjects)
        if not subjects:
            raise InvalidSubject("dataset needs at least one subject")
        k = len(covariate_names)
        if any(len(s.covariates) != k for s in subjects):
            raise InvalidSubject("covariate vector length differs between subjects")
        kinds = {type(s.outcome) for s in subjects}
        if len(kinds) != 1:
            raise InvalidSubject("all subjects must share the endpoint kind")
        binary = kinds.pop() is BinaryOutcome
        strata = [s.stratum or 0 for s in subjects]
        if num_strata is None:
            num_strata = max(2, max(strata))
        kw = {}
        if binary:
            kw["y"] = [s.outcome.y for s in subjects]
        else:
            kw["time"] = [s.outcome.time for s in subjects]
            kw["event"] = [s.outcome.event for s in subjects]
        return cls.from_arrays(
            ids=[s.id for s in subjects],
            arm=[int(s.arm) for s in subjects],
            stratum=strata,
            missing=[bool(s.missing_flag) for s in subjects],
            b=[s.post_measure or 0 for s in subjects],
            X=np.array([s.covariates for s in subjects], dtype=float).reshape(len(subjects), k),
            covariate_names=covariate_names,
            num_strata=num_strata,
            endpoint=Endpoint.BINARY if binary else Endpoint.TIME_TO_EVENT,
            **kw,
        )

    # -- views ------------------------------------------------------------

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i: int) -> Subject:
        treated = self.arm[i] == 1
        miss = bool(self.missing[i])
        if self.endpoint is Endpoint.BINARY:
            outcome = BinaryOutcome(int(self.y[i]))
        else:
            outcome = SurvivalOutcome(float(self.time[i]), bool(self.event[i]))
        return Subject(
            id=str(self.ids[i]),
            arm=Arm(int(self.arm[i])),
            stratum=int(self.stratum[i]) if treated and not miss else None,
            missing_flag=miss if treated else None,
            post_measure=int(self.b[i]) if treated else None,
            covariates=tuple(float(v) for v in self.X[i]),
            outcome=outcome,
        )

    def __iter__(self) -> Iterator[Subject]:
        for i in range(len(self)):
            yield self[i]

    @property
    def subjects(self) -> list[Subject]:
        return list(self)

    @property
    def treated(self) -> np.ndarray:
        return self.arm == 1

    @property
    def control(self) -> np.ndarray:
        return self.arm == 0

    @property
    def observed(self) -> np.ndarray:
        """Treated subjects with a recorded stratum."""
        return (self.arm == 1) & ~self.missing

    @property
    def b_levels(self) -> tuple[int, ...]:
        return tuple(int(v) for v in np.unique(self.b[self.treated]))

    def outcome_columns(self) -> dict:
        if self.endpoint is Endpoint.BINARY:
            return {"y": self.y}
        return {"time": self.time, "event": self.event}

    def take(self, idx) -> "Dataset":
        """Subset (or reorder) subjects by integer index or boolean mask."""
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        cols = {k: v[idx] for k, v in self.outcome_columns().items()}
        return Dataset(ids=self.ids[idx], arm=self.arm[idx], stratum=self.stratum[idx],
                       missing=self.missing[idx], b=self.b[idx], X=self.X[idx],
                       covariate_names=self.covariate_names, num_strata=self.num_strata,
                       endpoint=self.endpoint, **cols)

    def replace(self, **changes) -> "Dataset":
        kw = dict(ids=self.ids, arm=self.arm, stratum=self.stratum, missing=self.missing,
                  b=self.b, X=self.X, covariate_names=self.covariate_names,
                  num_strata=self.num_strata, endpoint=self.endpoint, **self.outcome_columns())
        kw.update(changes)
        return Dataset(**kw)

    def select_covariates(self, names: Sequence[str]) -> "Dataset":
        pos = self.covariate_index(names)
        return self.replace(X=self.X[:, pos], covariate_names=tuple(names))

    def covariate_index(self, names: Sequence[str] | None) -> list[int]:
        if names is None:
            return list(range(len(self.covariate_names)))
        lookup = {c: i for i, c in enumerate(self.covariate_names)}
        try:
            return [lookup[c] for c in names]
        except KeyError as exc:
            raise MissingColumn(exc.args[0]) from None

    def validate_coverage(self):
        """Check the dataset-level requirements used by the estimators.

        Both arms must be present and every stratum level must be seen among
        treated subjects with an observed stratum.
        """
        if not self.treated.any() or not self.control.any():
            raise DegenerateStratum("both arms need at least one subject")
        seen = set(np.unique(self.stratum[self.observed]).tolist())
        absent = [a for a in range(1, self.num_strata + 1) if a not in seen]
        if absent:
            raise DegenerateStratum(f"strata {absent} never observed among treated subjects")


@dataclass(frozen=True)
class Partition:
    observed: dict[int, np.ndarray]  # stratum -> indices of E_Oa
    missing: np.ndarray  # indices of E_M
    control: np.ndarray  # indices of C


def partition(ds: Dataset) -> Partition:
    obs = ds.observed
    return Partition(
        observed={a: np.flatnonzero(obs & (ds.stratum == a)) for a in range(1, ds.num_strata + 1)},
        missing=np.flatnonzero(ds.treated & ds.missing),
        control=np.flatnonzero(ds.control),
    )


def apply_landmark(ds: Dataset, landmark_time: float) -> tuple[Dataset, int]:
    """Drop subjects whose event or censoring happened before the landmark.

    Remaining times stay on the original scale.
    """
    if ds.endpoint is not Endpoint.TIME_TO_EVENT:
        raise WrongEndpointKind("landmark filtering needs a time-to-event endpoint")
    if not landmark_time > 0:
        raise ValueError("landmark_time must be positive")
    keep = ds.time >= landmark_time
    excluded = int((~keep).sum())
    if excluded == 0:
        return ds, 0
    return ds.take(keep), excluded


# -- CSV ---------------------------------------------------------------------

@dataclass(frozen=True)
class CsvSchema:
    """Column-name mapping for :func:`ingest_csv` / :func:`emit_csv`."""

    covariates: tuple[str, ...] | None = None  # None: every column not otherwise mapped
    endpoint: Endpoint | None = None  # None: inferred from header
    id: str = "id"
    arm: str = "arm"
    stratum: str = "stratum"
    missing: str = "missing"
    b: str = "b"
    y: str = "y"
    time: str = "time"
    event: str = "event"
    missing_token: str = ""
    num_strata: int | None = None


def _is_missing(value, schema):
    v = value.strip()
    return v == "" or v == schema.missing_token


def _parse_int(value, row, column, allowed=None):
    try:
        f = float(value)
    except ValueError:
        raise InvalidValue(row, column, value, "not a number") from None
    if not f.is_integer():
        raise InvalidValue(row, column, value, "not an integer")
    v = int(f)
    if allowed is not None and v not in allowed:
        raise InvalidValue(row, column, value, f"expected one of {sorted(allowed)}")
    return v


def _parse_float(value, row, column):
    try:
        f = float(value)
    except ValueError:
        raise InvalidValue(row, column, value, "not a number") from None
    if not math.isfinite(f):
        raise InvalidValue(row, column, value, "not finite")
    return f


def ingest_csv(path, schema: CsvSchema | None = None) -> Dataset:
    """Read and validate a trial CSV.

    Row numbers in error messages count the header as row 1.
    """
    schema = schema or CsvSchema()
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        endpoint = schema.endpoint
        if endpoint is None:
            endpoint = Endpoint.BINARY if schema.y in header else Endpoint.TIME_TO_EVENT
        endpoint = Endpoint(endpoint)
        outcome_cols = [schema.y] if endpoint is Endpoint.BINARY else [schema.time, schema.event]
        fixed = [schema.id, schema.arm, schema.stratum, schema.missing, schema.b]
        for col in fixed + outcome_cols:
            if col not in header:
                raise MissingColumn(col)
        if schema.covariates is None:
            taken = set(fixed) | {schema.y, schema.time, schema.event}
            covariates = tuple(c for c in header if c not in taken)
        else:
            covariates = tuple(schema.covariates)
            for col in covariates:
                if col not in header:
                    raise MissingColumn(col)
        subjects = []
        for rownum, rec in enumerate(reader, start=2):
            subjects.append(_row_to_subject(rec, rownum, schema, covariates, endpoint))
    ds = Dataset.from_subjects(subjects, covariates, num_strata=schema.num_strata)
    ds.validate_coverage()
    return ds


def _row_to_subject(rec, row, schema, covariates, endpoint):
    arm = _parse_int(rec[schema.arm], row, schema.arm, allowed={0, 1})
    s_raw, m_raw, b_raw = rec[schema.stratum], rec[schema.missing], rec[schema.b]
    if arm == 0:
        if not _is_missing(s_raw, schema):
            raise InconsistentMissingness(row, "control row has a stratum value")
        if not _is_missing(b_raw, schema):
            raise InconsistentMissingness(row, "control row has a post-landmark measure")
        if not _is_missing(m_raw, schema):
            raise InconsistentMissingness(row, "control row has a missing flag")
        stratum = missing = b = None
    else:
        if _is_missing(m_raw, schema):
            raise InconsistentMissingness(row, "treated row lacks the missing flag")
        missing = bool(_parse_int(m_raw, row, schema.missing, allowed={0, 1}))
        if missing and not _is_missing(s_raw, schema):
            raise InconsistentMissingness(row, "stratum given although flagged missing")
        if not missing and _is_missing(s_raw, schema):
            raise InconsistentMissingness(row, "stratum empty although not flagged missing")
        stratum = None if missing else _parse_int(s_raw, row, schema.stratum)
        if stratum is not None and stratum < 1:
            raise InvalidValue(row, schema.stratum, s_raw, "strata are numbered from 1")
        if _is_missing(b_raw, schema):
            raise InconsistentMissingness(row, "treated row lacks the post-landmark measure")
        b = _parse_int(b_raw, row, schema.b)
    x = tuple(_parse_float(rec[c], row, c) for c in covariates)
    if endpoint is Endpoint.BINARY:
        outcome = BinaryOutcome(_parse_int(rec[schema.y], row, schema.y, allowed={0, 1}))
    else:
        t = _parse_float(rec[schema.time], row, schema.time)
        if t <= 0:
            raise InvalidValue(row, schema.time, rec[schema.time], "must be positive")
        e = _parse_int(rec[schema.event], row, schema.event, allowed={0, 1})
        outcome = SurvivalOutcome(t, bool(e))
    try:
        return Subject(id=rec[schema.id], arm=Arm(arm), stratum=stratum, missing_flag=missing,
                       post_measure=b, covariates=x, outcome=outcome)
    except InvalidSubject as exc:
        raise InconsistentMissingness(row, str(exc)) from None


def emit_csv(ds: Dataset, path, schema: CsvSchema | None = None):
    """Write ``ds`` in the layout :func:`ingest_csv` reads back."""
    schema = schema or CsvSchema()
    tok = schema.missing_token
    header = [schema.id, schema.arm, schema.stratum, schema.missing, schema.b,
              *ds.covariate_names]
    if ds.endpoint is Endpoint.BINARY:
        header.append(schema.y)
    else:
        header += [schema.time, schema.event]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s in ds:
            row = [s.id, int(s.arm),
                   tok if s.stratum is None else s.stratum,
                   tok if s.missing_flag is None else int(s.missing_flag),
                   tok if s.post_measure is None else s.post_measure,
                   *(repr(v) for v in s.covariates)]
            if isinstance(s.outcome, BinaryOutcome):
                row.append(s.outcome.y)
            else:
                row += [repr(s.outcome.time), int(s.outcome.event)]
            w.writerow(row)
