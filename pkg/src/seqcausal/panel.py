"""Observed panel: loading, validation and stratum statistics.

Units are collapsed into full cells (see :mod:`seqcausal.keys`) once, at
construction.  All stratum counts, proportions and means are then sums over
cells, so every derived quantity is an exact function of the cell table.
"""

from __future__ import annotations

import csv
import io
import math
import os
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import errors
from .keys import (
    Cell,
    FullHistory,
    FullHistoryWithTreatment,
    Markov,
    MarkovWithTreatment,
    StratumKey,
    interleave,
)

__all__ = [
    "Skeleton",
    "PanelData",
    "Proportions",
    "PanelSchema",
    "load_panel",
    "stratum_count",
    "proportion",
    "stratum_mean_outcome",
    "treatment_strata",
    "as_proportions",
]


class Proportions:
    """Frozen cell weights with prefix sums; the package's proportion oracle.

    Weights are usually integer counts, in which case every conditional
    proportion is a ratio of two exact integers.
    """

    def __init__(self, weights: Mapping[Cell, float]):
        cells = sorted(c for c, w in weights.items() if w > 0)
        if not cells:
            raise errors.EmptyPanel("no cell has positive weight")
        lengths = {len(c) for c in cells}
        if len(lengths) != 1 or lengths.pop() % 2 == 0:
            raise ValueError("cells must share one odd token length 2T-1")
        self._cells = tuple(cells)
        self._weights = {c: weights[c] for c in cells}
        self.T = (len(cells[0]) + 1) // 2
        prefix = {}
        for c, w in self._weights.items():
            for i in range(len(c) + 1):
                p = c[:i]
                prefix[p] = prefix.get(p, 0) + w
        self._prefix = prefix

    @property
    def cells(self) -> tuple[Cell, ...]:
        return self._cells

    @property
    def total(self):
        return self._prefix[()]

    def cell_weight(self, cell: Cell):
        return self._weights.get(tuple(cell), 0)

    def weight(self, prefix: Sequence) -> float:
        """Total weight of cells starting with ``prefix`` (0 if none)."""
        return self._prefix.get(tuple(prefix), 0)

    def count(self, key) -> float:
        """Total weight of cells matched by any stratum key."""
        if isinstance(key, (Markov, MarkovWithTreatment)):
            return sum(w for c, w in self._weights.items() if key.matches(c))
        return self.weight(key.tokens)

    def conditional(self, event: Sequence, given: Sequence) -> float:
        """``pr(event | given)`` for token prefixes, ``event`` extending ``given``."""
        event, given = tuple(event), tuple(given)
        if event[: len(given)] != given:
            raise ValueError("event prefix must extend the conditioning prefix")
        g = self.weight(given)
        if g <= 0:
            raise errors.MissingProportion(f"conditioning stratum {given!r} is empty")
        return self.weight(event) / g

    def next_tokens(self, prefix: Sequence) -> list:
        """Observed values of the variable following ``prefix``, sorted."""
        prefix = tuple(prefix)
        n = len(prefix)
        return sorted({c[n] for c in self._cells if c[:n] == prefix})

    def next_distribution(self, prefix: Sequence) -> list[tuple[object, float]]:
        """``[(value, pr(value | prefix)), ...]`` over observed values."""
        prefix = tuple(prefix)
        g = self.weight(prefix)
        if g <= 0:
            raise errors.MissingProportion(f"conditioning stratum {prefix!r} is empty")
        return [(v, self.weight(prefix + (v,)) / g) for v in self.next_tokens(prefix)]

    def prefixes(self, length: int) -> list[tuple]:
        return sorted(p for p in self._prefix if len(p) == length)


def as_proportions(source) -> Proportions:
    if isinstance(source, Proportions):
        return source
    if hasattr(source, "proportions"):
        return source.proportions()
    return Proportions(source)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Treatments and covariates of ``N`` units, without outcomes.

    ``covariates[t-1]`` is an ``(N, d_t)`` integer array for ``t = 1..T-1``.
    """

    treatments: np.ndarray
    covariates: tuple[np.ndarray, ...]
    treatment_arity: tuple[int, ...] = ()
    covariate_arity: tuple[tuple[int, ...], ...] = ()
    unit_ids: Optional[tuple] = None

    def __post_init__(self):
        z = np.asarray(self.treatments)
        if z.ndim != 2 or z.shape[0] == 0 or z.shape[1] == 0:
            raise errors.EmptyPanel("panel needs at least one unit and one treatment time")
        if not np.issubdtype(z.dtype, np.integer):
            raise errors.NonIntegerTreatment("treatments must be integers")
        n, T = z.shape
        covs = tuple(np.asarray(c).reshape(n, -1) for c in self.covariates)
        if len(covs) != T - 1:
            raise errors.MissingColumn(f"expected {T - 1} covariate blocks, got {len(covs)}")
        for c in covs:
            if c.size and not np.issubdtype(c.dtype, np.integer):
                raise errors.NonIntegerTreatment("covariates must be integers")
        if (z < 0).any() or any((c < 0).any() for c in covs):
            raise errors.OutOfRangeValue("levels must be non-negative")
        t_ar = tuple(int(v) for v in z.max(axis=0))
        c_ar = tuple(tuple(int(v) for v in c.max(axis=0)) if c.size else () for c in covs)
        if self.treatment_arity:
            if len(self.treatment_arity) != T or any(
                o > d for o, d in zip(t_ar, self.treatment_arity)
            ):
                raise errors.OutOfRangeValue(
                    f"treatment levels {t_ar} exceed declared arity {self.treatment_arity}"
                )
            t_ar = tuple(int(v) for v in self.treatment_arity)
        if self.covariate_arity:
            if len(self.covariate_arity) != T - 1 or any(
                len(o) != len(d) or any(a > b for a, b in zip(o, d))
                for o, d in zip(c_ar, self.covariate_arity)
            ):
                raise errors.OutOfRangeValue(
                    f"covariate levels {c_ar} exceed declared arity {self.covariate_arity}"
                )
            c_ar = tuple(tuple(int(v) for v in d) for d in self.covariate_arity)
        if self.unit_ids is not None and len(self.unit_ids) != n:
            raise ValueError("unit_ids length differs from number of units")
        object.__setattr__(self, "treatments", _readonly(z.astype(np.int64)))
        object.__setattr__(self, "covariates", tuple(_readonly(c.astype(np.int64)) for c in covs))
        object.__setattr__(self, "treatment_arity", t_ar)
        object.__setattr__(self, "covariate_arity", c_ar)

    @property
    def n_units(self) -> int:
        return self.treatments.shape[0]

    @property
    def T(self) -> int:
        return self.treatments.shape[1]

    @property
    def covariate_dims(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.covariates)

    def unit_cell(self, i: int) -> Cell:
        z = self.treatments[i]
        x = [tuple(int(v) for v in c[i]) for c in self.covariates]
        return interleave([int(v) for v in z], x)

    @cached_property
    def _cell_table(self):
        parts = [self.treatments] + list(self.covariates)
        rows = np.concatenate([p for p in parts if p.shape[1]], axis=1)
        uniq, index = np.unique(rows, axis=0, return_inverse=True)
        dims = self.covariate_dims
        cells = []
        for row in uniq:
            z = [int(v) for v in row[: self.T]]
            x, pos = [], self.T
            for d in dims:
                x.append(tuple(int(v) for v in row[pos : pos + d]))
                pos += d
            cells.append(interleave(z, x))
        order = sorted(range(len(cells)), key=lambda k: cells[k])
        rank = np.empty(len(cells), dtype=np.int64)
        rank[order] = np.arange(len(cells))
        cells = tuple(cells[k] for k in order)
        index = rank[np.asarray(index).reshape(-1)]
        counts = np.bincount(index, minlength=len(cells))
        index.setflags(write=False)
        counts.setflags(write=False)
        return cells, index, counts

    @property
    def cells(self) -> tuple[Cell, ...]:
        """Occupied full cells in canonical order."""
        return self._cell_table[0]

    @property
    def cell_index(self) -> np.ndarray:
        """Position in :attr:`cells` of each unit's cell."""
        return self._cell_table[1]

    @property
    def cell_counts(self) -> np.ndarray:
        return self._cell_table[2]

    @cached_property
    def _mask_cache(self) -> dict:
        return {}

    @cached_property
    def _proportions(self) -> Proportions:
        return Proportions({c: int(n) for c, n in zip(self.cells, self.cell_counts)})

    def proportions(self) -> Proportions:
        return self._proportions

    def with_outcome(self, y) -> "PanelData":
        return PanelData(self, y)


@dataclass(frozen=True, eq=False)
class PanelData:
    """Immutable ``N x (z_1..z_T, x_1..x_{T-1}, y)`` panel."""

    skeleton: Skeleton
    outcome: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.outcome, dtype=float).reshape(-1)
        if y.shape[0] != self.skeleton.n_units:
            raise ValueError("outcome length differs from number of units")
        if not np.isfinite(y).all():
            raise errors.NonFiniteOutcome("outcome contains NaN or infinite values")
        object.__setattr__(self, "outcome", _readonly(y))

    @classmethod
    def from_arrays(cls, treatments, covariates, outcome, **kwargs) -> "PanelData":
        return cls(Skeleton(np.asarray(treatments), tuple(covariates), **kwargs), outcome)

    def __getattr__(self, name):
        # delegate n_units, T, treatments, covariates, cells... to the skeleton
        if name.startswith("__") or name == "skeleton":
            raise AttributeError(name)
        return getattr(self.skeleton, name)

    def proportions(self) -> Proportions:
        return self.skeleton.proportions()

    @cached_property
    def cell_sums(self) -> np.ndarray:
        s = np.bincount(self.skeleton.cell_index, weights=self.outcome, minlength=len(self.cells))
        s.setflags(write=False)
        return s

    @cached_property
    def cell_means(self) -> dict[Cell, float]:
        return {c: s / n for c, s, n in zip(self.cells, self.cell_sums, self.cell_counts)}

    def pooled_variance(self) -> float:
        """Within-full-cell residual variance (saturated-model ``sigma^2``)."""
        means = self.cell_sums / self.cell_counts
        resid = self.outcome - means[self.skeleton.cell_index]
        dof = self.n_units - len(self.cells)
        if dof <= 0:
            raise errors.EstimationError("no residual degrees of freedom to estimate the variance")
        return float(resid @ resid / dof)


def _match_mask(panel, key) -> np.ndarray:
    skel = panel.skeleton if isinstance(panel, PanelData) else panel
    cache = skel._mask_cache
    m = cache.get(key)
    if m is None:
        m = np.fromiter((key.matches(c) for c in skel.cells), dtype=bool, count=len(skel.cells))
        cache[key] = m
    return m


def stratum_count(panel, key: StratumKey) -> int:
    """Number of units whose record falls in ``key``."""
    return int(panel.cell_counts[_match_mask(panel, key)].sum())


def proportion(panel, event: StratumKey, given: StratumKey) -> float:
    """Conditional proportion of stratum ``event`` within stratum ``given``."""
    g = _match_mask(panel, given)
    n_given = int(panel.cell_counts[g].sum())
    if n_given == 0:
        raise errors.EmptyConditioningStratum(f"conditioning stratum {given} is empty")
    both = int(panel.cell_counts[g & _match_mask(panel, event)].sum())
    return both / n_given


def stratum_mean_outcome(panel: PanelData, key: StratumKey) -> tuple[float, int]:
    """Mean outcome over a stratum and its size."""
    m = _match_mask(panel, key)
    n = int(panel.cell_counts[m].sum())
    if n == 0:
        raise errors.EmptyStratum(f"stratum {key} has no units")
    return float(panel.cell_sums[m].sum() / n), n


def treatment_strata(props, mode: str = "full", active: bool = True) -> list:
    """Observed treatment strata in canonical order.

    ``mode`` is ``"full"`` for :class:`FullHistoryWithTreatment` keys or
    ``"markov"`` for :class:`MarkovWithTreatment` keys.  With ``active`` only
    strata with ``z_t > 0`` are returned.
    """
    props = as_proportions(props)
    keys = set()
    for t in range(1, props.T + 1):
        for p in props.prefixes(2 * t - 1):
            if active and p[-1] == 0:
                continue
            if mode == "full":
                keys.add(FullHistoryWithTreatment.from_tokens(p))
            elif mode == "markov":
                keys.add(MarkovWithTreatment.of_cell(p, t))
            else:
                raise ValueError(f"unknown mode {mode!r}")
    return sorted(keys)


# --------------------------------------------------------------------------
# CSV ingestion

_Z_COL = re.compile(r"^z(\d+)$")
_X_COL = re.compile(r"^x(\d+)_(\d+)$")


@dataclass(frozen=True)
class PanelSchema:
    """Optional column declaration for :func:`load_panel`.

    Anything left unset is inferred from the header and data.
    """

    T: Optional[int] = None
    covariate_dims: Optional[tuple[int, ...]] = None
    treatment_arity: tuple[int, ...] = ()
    covariate_arity: tuple[tuple[int, ...], ...] = ()
    unit_id: Optional[str] = "unit_id"
    outcome: str = "y"

    @classmethod
    def from_dict(cls, d: Mapping) -> "PanelSchema":
        known = {"T", "covariate_dims", "treatment_arity", "covariate_arity", "unit_id", "outcome"}
        extra = set(d) - known
        if extra:
            raise errors.ValidationError(f"unknown schema keys: {sorted(extra)}")
        d = dict(d)
        for k in ("covariate_dims", "treatment_arity"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        if d.get("covariate_arity") is not None:
            d["covariate_arity"] = tuple(tuple(v) for v in d["covariate_arity"])
        return cls(**d)


def _parse_level(text: str, col: str, row: int) -> int:
    s = text.strip()
    try:
        v = int(s)
    except ValueError:
        raise errors.NonIntegerTreatment(
            f"row {row}, column {col}: {text!r} is not an integer level"
        ) from None
    if v < 0:
        raise errors.OutOfRangeValue(f"row {row}, column {col}: negative level {v}")
    return v


def _open_text(source):
    if isinstance(source, os.PathLike) or (isinstance(source, str) and "\n" not in source):
        return open(source, newline="", encoding="utf-8")
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"), newline="")
    if isinstance(source, str):
        return io.StringIO(source, newline="")
    if isinstance(source, io.BufferedIOBase) or hasattr(source, "mode") and "b" in source.mode:
        return io.TextIOWrapper(source, encoding="utf-8", newline="")
    return source


def load_panel(source, schema: Optional[PanelSchema] = None) -> PanelData:
    """Read a panel from CSV.

    ``source`` is a path, CSV text, bytes or an open file.  The header must
    contain ``z1..zT``, ``x{t}_{j}`` for each covariate component and ``y``;
    ``unit_id`` is optional and column order is free.
    """
    schema = schema or PanelSchema()
    fh = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            header = []
        if not any(header):
            raise errors.EmptyPanel("CSV has no header row")
        rows = [r for r in reader if any(cell.strip() for cell in r)]
    finally:
        if fh is not source:
            fh.close()

    col = {name: i for i, name in enumerate(header)}
    z_cols = sorted(int(m.group(1)) for m in map(_Z_COL.match, header) if m)
    T = schema.T or (max(z_cols) if z_cols else 0)
    if T < 1:
        raise errors.MissingColumn("no treatment columns z1..zT in header")
    for t in range(1, T + 1):
        if f"z{t}" not in col:
            raise errors.MissingColumn(f"missing treatment column z{t}")
    if schema.outcome not in col:
        raise errors.MissingColumn(f"missing outcome column {schema.outcome}")
    x_found: dict[int, set] = {}
    for m in map(_X_COL.match, header):
        if m:
            x_found.setdefault(int(m.group(1)), set()).add(int(m.group(2)))
    if schema.covariate_dims is not None:
        dims = tuple(schema.covariate_dims)
        if len(dims) != T - 1:
            raise errors.ValidationError(f"schema declares {len(dims)} covariate times, need {T - 1}")
    else:
        dims = tuple(max(x_found.get(t, {0})) for t in range(1, T))
    for t, d in enumerate(dims, start=1):
        for j in range(1, d + 1):
            if f"x{t}_{j}" not in col:
                raise errors.MissingColumn(f"missing covariate column x{t}_{j}")
    stray = [t for t in x_found if t >= T]
    if stray:
        raise errors.ValidationError(f"covariate columns after the last treatment: x{stray[0]}_*")
    if not rows:
        raise errors.EmptyPanel("CSV has a header but no data rows")

    n = len(rows)
    z = np.empty((n, T), dtype=np.int64)
    covs = [np.empty((n, d), dtype=np.int64) for d in dims]
    y = np.empty(n, dtype=float)
    ids = [] if schema.unit_id and schema.unit_id in col else None
    for r, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise errors.ValidationError(f"row {r} has {len(row)} cells, header has {len(header)}")
        for t in range(1, T + 1):
            z[r - 2, t - 1] = _parse_level(row[col[f"z{t}"]], f"z{t}", r)
        for t, d in enumerate(dims, start=1):
            for j in range(1, d + 1):
                name = f"x{t}_{j}"
                covs[t - 1][r - 2, j - 1] = _parse_level(row[col[name]], name, r)
        text = row[col[schema.outcome]].strip()
        try:
            v = float(text)
        except ValueError:
            raise errors.NonFiniteOutcome(f"row {r}: outcome {text!r} is not a number") from None
        if not math.isfinite(v):
            raise errors.NonFiniteOutcome(f"row {r}: outcome {text!r} is not finite")
        y[r - 2] = v
        if ids is not None:
            ids.append(row[col[schema.unit_id]].strip())

    skel = Skeleton(
        z,
        tuple(covs),
        treatment_arity=tuple(schema.treatment_arity),
        covariate_arity=tuple(schema.covariate_arity),
        unit_ids=tuple(ids) if ids is not None else None,
    )
    return PanelData(skel, y)


def write_panel(panel: PanelData, path) -> None:
    """Write a panel in the CSV layout read by :func:`load_panel`."""
    header = ["unit_id"] + [f"z{t}" for t in range(1, panel.T + 1)]
    for t, d in enumerate(panel.covariate_dims, start=1):
        header += [f"x{t}_{j}" for j in range(1, d + 1)]
    header.append("y")
    ids = panel.unit_ids or tuple(str(i + 1) for i in range(panel.n_units))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(panel.n_units):
            row = [ids[i]] + [int(v) for v in panel.treatments[i]]
            for c in panel.covariates:
                row += [int(v) for v in c[i]]
            row.append(repr(float(panel.outcome[i])))
            w.writerow(row)
