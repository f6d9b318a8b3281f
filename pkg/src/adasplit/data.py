"""Domain data model: trial data, subgroup partitions, fold state, configuration.

A :class:`Dataset` holds the covariate matrix ``x``, observed outcomes ``y``,
binary treatment assignments ``z`` and the per-unit design probabilities
``e`` (all 1/2 for the standard Bernoulli design). Assignments may be masked
(NaN) for units whose treatment is unknown; every other field must be finite.

Core types are immutable after construction and safe to share across
workers. :class:`FoldState` is the one mutable object and is only touched
inside the single-threaded selection loop.
"""

import csv
import dataclasses
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ValidationError


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """One experimental sample: covariates, outcomes, assignments, design."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        z = np.asarray(self.z, dtype=float).ravel()
        e = np.asarray(self.e, dtype=float).ravel()
        n = x.shape[0]
        if n < 1 or x.shape[1] < 1:
            raise ValidationError("n >= 1 and d >= 1 required")
        if y.shape[0] != n or z.shape[0] != n or e.shape[0] != n:
            raise ValidationError(
                f"length mismatch: x has {n} rows, y {y.shape[0]}, "
                f"z {z.shape[0]}, e {e.shape[0]}"
            )
        if not np.all(np.isfinite(x)):
            raise ValidationError("non-finite covariate value")
        if not np.all(np.isfinite(y)):
            raise ValidationError("non-finite outcome value")
        observed = ~np.isnan(z)
        if not np.all(np.isin(z[observed], (0.0, 1.0))):
            raise ValidationError("non-binary assignment")
        if not np.all((e > 0.0) & (e < 1.0)):
            raise ValidationError("design probability outside (0, 1)")
        object.__setattr__(self, "x", _readonly(x))
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "z", _readonly(z))
        object.__setattr__(self, "e", _readonly(e))

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def d(self):
        return self.x.shape[1]

    @classmethod
    def from_arrays(cls, x, y, z, e=None):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if e is None:
            e = np.full(x.shape[0], 0.5)
        return cls(x=x, y=y, z=z, e=e)

    def equals(self, other):
        return (
            np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.z, other.z, equal_nan=True)
            and np.array_equal(self.e, other.e)
        )


def validate_dataset(raw):
    """Validate tabular records into a :class:`Dataset`.

    ``raw`` may be an existing :class:`Dataset` (re-validated and returned
    as an equal copy, so the operation is idempotent), a mapping with keys
    ``x``, ``y``, ``z`` and optionally ``e``, or a sequence of row mappings
    with keys ``x1..xd``, ``y``, ``z``.
    """
    if isinstance(raw, Dataset):
        return Dataset.from_arrays(raw.x, raw.y, raw.z, raw.e)
    if isinstance(raw, dict):
        try:
            return Dataset.from_arrays(raw["x"], raw["y"], raw["z"], raw.get("e"))
        except KeyError as exc:
            raise ValidationError(f"missing column(s): [{exc.args[0]!r}]")
    rows = list(raw)
    if not rows:
        raise ValidationError("n >= 1 required")
    names = _covariate_names(rows[0].keys())
    try:
        x = np.array([[row[c] for c in names] for row in rows], dtype=float)
        y = np.array([row["y"] for row in rows], dtype=float)
        z = np.array([row["z"] for row in rows], dtype=float)
    except KeyError as exc:
        raise ValidationError(f"missing column(s): [{exc.args[0]!r}]")
    return Dataset.from_arrays(x, y, z)


def _covariate_names(keys):
    """The contiguous x1..xd column names present in ``keys``."""
    xs = sorted(
        (int(m.group(1)) for k in keys if (m := re.fullmatch(r"x(\d+)", k))),
    )
    if not xs or xs != list(range(1, len(xs) + 1)):
        raise ValidationError("covariate columns must be named x1..xd with no gaps")
    return [f"x{i}" for i in xs]


@dataclass(frozen=True)
class SubgroupPartition:
    """K disjoint, exhaustive, nonempty index sets over the n units."""

    groups: tuple

    def __post_init__(self):
        groups = tuple(np.sort(np.asarray(g, dtype=int).ravel()) for g in self.groups)
        if not groups:
            raise ValidationError("at least one subgroup required")
        for g in groups:
            if g.size == 0:
                raise ValidationError("empty subgroup")
        n = sum(g.size for g in groups)
        merged = np.concatenate(groups)
        if np.unique(merged).size != merged.size:
            raise ValidationError("subgroups overlap")
        if not np.array_equal(np.sort(merged), np.arange(n)):
            raise ValidationError("subgroups do not cover all units exactly")
        for g in groups:
            g.setflags(write=False)
        object.__setattr__(self, "groups", groups)

    @property
    def k(self):
        return len(self.groups)

    @property
    def n(self):
        return sum(g.size for g in self.groups)

    def labels(self):
        """Per-unit subgroup index (0-based)."""
        lab = np.empty(self.n, dtype=int)
        for k, g in enumerate(self.groups):
            lab[g] = k
        return lab

    @classmethod
    def from_labels(cls, labels):
        labels = np.asarray(labels)
        values = np.unique(labels)
        return cls(tuple(np.flatnonzero(labels == v) for v in values))


def partition_by_quantiles(dataset, column, cuts):
    """Split units by empirical quantiles of one covariate column.

    Quantiles use the inverted-CDF convention: the cut at fraction ``c`` is
    the smallest order statistic whose empirical CDF is at least ``c``.
    A unit equal to a cut value goes to the lower group.
    """
    cuts = tuple(float(c) for c in cuts)
    if any(not 0.0 < c < 1.0 for c in cuts):
        raise ValidationError("quantile cuts must lie strictly in (0, 1)")
    if any(b <= a for a, b in zip(cuts, cuts[1:])):
        raise ValidationError("quantile cuts must be strictly increasing")
    if not 0 <= column < dataset.d:
        raise ValidationError(f"column index {column} out of range for d={dataset.d}")
    v = dataset.x[:, column]
    n = v.size
    order_stats = np.sort(v)
    bounds = [order_stats[math.ceil(c * n) - 1] for c in cuts]
    edges = np.concatenate(([-np.inf], bounds, [np.inf]))
    groups = []
    for k in range(len(cuts) + 1):
        g = np.flatnonzero((v > edges[k]) & (v <= edges[k + 1]))
        if g.size == 0:
            raise ValidationError(f"quantile cut produces empty subgroup {k + 1}")
        groups.append(g)
    return SubgroupPartition(tuple(groups))


class FoldState:
    """Mutable nuisance/inference split over a fixed partition.

    The nuisance fold I and the per-subgroup inference folds J_k are
    derived from a single membership mask, so the disjointness and coverage
    invariants hold by construction and the inference proportions pi_k are
    exact after every mutation.
    """

    def __init__(self, partition, nuisance_mask=None):
        self.partition = partition
        n = partition.n
        if nuisance_mask is None:
            nuisance_mask = np.zeros(n, dtype=bool)
        self._mask = np.array(nuisance_mask, dtype=bool)
        if self._mask.shape != (n,):
            raise ValidationError("nuisance mask length mismatch")

    @property
    def nuisance_mask(self):
        return self._mask.copy()

    @property
    def nuisance(self):
        return np.flatnonzero(self._mask)

    def inference(self, k):
        g = self.partition.groups[k]
        return g[~self._mask[g]]

    def inference_all(self):
        return np.flatnonzero(~self._mask)

    @property
    def proportions(self):
        return np.array(
            [1.0 - self._mask[g].mean() for g in self.partition.groups]
        )

    def move_to_nuisance(self, j):
        if self._mask[j]:
            raise ValidationError(f"unit {j} already in the nuisance fold")
        self._mask[j] = True

    def snapshot(self):
        return FoldSnapshot(
            nuisance=tuple(int(i) for i in self.nuisance),
            inference=tuple(
                tuple(int(i) for i in self.inference(k))
                for k in range(self.partition.k)
            ),
            proportions=tuple(float(p) for p in self.proportions),
        )


@dataclass(frozen=True)
class FoldSnapshot:
    """Immutable record of a fold assignment, for reports."""

    nuisance: tuple
    inference: tuple
    proportions: tuple


# Configuration ---------------------------------------------------------------

_CONFIG_FIELDS = (
    "p_init", "rho", "eps_l", "n0", "mc_draws", "alpha", "q",
    "knn_k", "ridge_lambda", "lambda_imputed", "delta_clip", "seed",
    "refit_every",
)


@dataclass(frozen=True)
class AdaSplitConfig:
    """Tuning parameters for the adaptive splitting procedure."""

    p_init: float = 0.05
    rho: float = 0.5
    eps_l: float = 0.01
    n0: int = 50
    mc_draws: int = 1000
    alpha: float = 0.2
    q: float = 0.2
    knn_k: int = 10
    ridge_lambda: float = 1e-8
    lambda_imputed: float = 1.0
    delta_clip: float = 1e-6
    seed: int = 0
    refit_every: int = 1

    def __post_init__(self):
        if not 0.0 < self.p_init < 1.0:
            raise ConfigError("p_init must lie in (0, 1)")
        if not 0.0 < self.rho < 1.0:
            raise ConfigError("rho must lie in (0, 1)")
        if not self.eps_l > 0.0:
            raise ConfigError("eps_l must be positive")
        if self.n0 < 1:
            raise ConfigError("n0 must be >= 1")
        if self.mc_draws < 1:
            raise ConfigError("mc_draws must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if not 0.0 < self.q < 1.0:
            raise ConfigError("q must lie in (0, 1)")
        if self.knn_k < 1:
            raise ConfigError("knn_k must be >= 1")
        if self.ridge_lambda < 0.0:
            raise ConfigError("ridge_lambda must be >= 0")
        if self.lambda_imputed < 0.0:
            raise ConfigError("lambda_imputed must be >= 0")
        if not 0.0 < self.delta_clip < 0.5:
            raise ConfigError("delta_clip must lie in (0, 0.5)")
        if self.refit_every < 1:
            raise ConfigError("refit_every must be >= 1")

    @classmethod
    def from_dict(cls, values):
        unknown = set(values) - set(_CONFIG_FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in values:
                continue
            v = values[f.name]
            target = type(f.default)
            try:
                if target is int:
                    if isinstance(v, float) and not v.is_integer():
                        raise ValueError
                    kwargs[f.name] = int(v)
                else:
                    kwargs[f.name] = float(v)
            except (TypeError, ValueError):
                raise ConfigError(f"config key {f.name!r}: bad value {v!r}")
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            try:
                values = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"malformed config JSON: {exc}")
        if not isinstance(values, dict):
            raise ConfigError("config JSON must be an object")
        return cls.from_dict(values)

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **kwargs):
        return dataclasses.replace(self, **kwargs)


@dataclass(frozen=True)
class AnalysisReport:
    """Result of one analysis: p-values, rejections, folds, diagnostics."""

    pvalues: tuple
    rejected: tuple
    folds: FoldSnapshot | None
    iterations: int
    cate_coefficients: tuple | None
    diagnostics: dict = field(default_factory=dict)
    method: str = "adasplit"
    config: AdaSplitConfig | None = None

    @staticmethod
    def _jsonable(value):
        """Strict-JSON-safe copy: NaN becomes null, infinities become strings."""
        if isinstance(value, float):
            if math.isnan(value):
                return None
            if math.isinf(value):
                return "inf" if value > 0 else "-inf"
            return value
        if isinstance(value, (np.floating, np.integer)):
            return AnalysisReport._jsonable(float(value))
        if isinstance(value, dict):
            return {k: AnalysisReport._jsonable(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [AnalysisReport._jsonable(v) for v in value]
        return value

    def to_json_dict(self):
        folds = None
        if self.folds is not None:
            folds = {
                "nuisance": list(self.folds.nuisance),
                "inference": [list(g) for g in self.folds.inference],
                "proportions": list(self.folds.proportions),
            }
        return {
            "schema": 1,
            "method": self.method,
            "pvalues": list(self.pvalues),
            "rejected": list(self.rejected),
            "folds": folds,
            "iterations": self.iterations,
            "cate_coefficients": (
                None if self.cate_coefficients is None else list(self.cate_coefficients)
            ),
            "diagnostics": self._jsonable(self.diagnostics),
            "config": None if self.config is None else self.config.to_dict(),
        }

    def to_json(self):
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)


# CSV ingestion ---------------------------------------------------------------

def read_dataset_csv(path, subgroup_column="subgroup"):
    """Strictly parse a trial CSV into a dataset plus optional subgroup labels.

    Expected header: ``x1,...,xd,y,z`` with an optional integer subgroup
    column (named ``subgroup`` unless overridden). Any non-numeric cell is an
    error naming the offending row and column; nothing is coerced silently.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError("empty file: n >= 1 required")
        header = [h.strip() for h in header]
        names = _covariate_names(header)
        required = set(names) | {"y", "z"}
        missing = required - set(header)
        if missing:
            raise ValidationError(f"missing column(s): {sorted(missing)}")
        extra = set(header) - required - {subgroup_column}
        if extra:
            raise ValidationError(f"unexpected column(s): {sorted(extra)}")
        if len(set(header)) != len(header):
            raise ValidationError("duplicate column names")
        col = {name: header.index(name) for name in header}
        has_subgroup = subgroup_column in col

        x_rows, y_rows, z_rows, labels = [], [], [], []
        for r, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(f"row {r}: expected {len(header)} cells, got {len(row)}")
            x_rows.append([_cell(row, col[c], r, c, float) for c in names])
            y_rows.append(_cell(row, col["y"], r, "y", float))
            z_rows.append(_cell(row, col["z"], r, "z", float))
            if has_subgroup:
                labels.append(_cell(row, col[subgroup_column], r, subgroup_column, int))
    if not x_rows:
        raise ValidationError("empty file: n >= 1 required")
    dataset = Dataset.from_arrays(np.array(x_rows), y_rows, z_rows)
    return dataset, (np.array(labels, dtype=int) if has_subgroup else None)


def _cell(row, idx, r, name, kind):
    text = row[idx].strip()
    try:
        return kind(text)
    except ValueError:
        raise ValidationError(f"row {r}, column {name}: could not parse {text!r}")


def write_dataset_csv(path, dataset, subgroup_labels=None):
    """Inverse of :func:`read_dataset_csv`, used by the simulation lab."""
    header = [f"x{i + 1}" for i in range(dataset.d)] + ["y", "z"]
    if subgroup_labels is not None:
        header.append("subgroup")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.x[i]]
            row.append(repr(float(dataset.y[i])))
            row.append(str(int(dataset.z[i])))
            if subgroup_labels is not None:
                row.append(str(int(subgroup_labels[i])))
            writer.writerow(row)
