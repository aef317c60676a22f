"""Experiment logs and coalition algebra.

A coalition is a plain ``int`` bitmask: bit ``l`` set means experiment ``l``
is active, and ``0`` is the control group (no experiment active).
"""

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyTable,
    IndexOutOfRange,
    InvalidTreatmentBit,
    MalformedRow,
    TooManyExperiments,
)

DEFAULT_MAX_EXACT_L = 15
BASELINE = 0


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def members(mask: int) -> list[int]:
    """Experiment indices active in ``mask``, ascending."""
    out = []
    l = 0
    while mask:
        if mask & 1:
            out.append(l)
        mask >>= 1
        l += 1
    return out


def from_members(indices: Iterable[int]) -> int:
    mask = 0
    for l in indices:
        mask |= 1 << l
    return mask


def is_subset(sub: int, sup: int) -> bool:
    return sub & ~sup == 0


def subsets(mask: int) -> list[int]:
    """All submasks of ``mask`` in ascending order, starting with 0."""
    out = []
    s = 0
    while True:
        out.append(s)
        if s == mask:
            return out
        s = ((s | ~mask) + 1) & mask


def format_coalition(mask: int) -> str:
    if mask == BASELINE:
        return "{}"
    return "{" + ",".join(str(l) for l in members(mask)) + "}"


@dataclass(frozen=True)
class ExperimentSet:
    count: int
    labels: tuple = ()

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("need at least one experiment")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"exp_{l}" for l in range(self.count)))
        elif len(self.labels) != self.count:
            raise ValueError(f"expected {self.count} labels, got {len(self.labels)}")

    @property
    def grand(self) -> int:
        return (1 << self.count) - 1


def power_set(experiments, max_l: int = DEFAULT_MAX_EXACT_L) -> list[int]:
    """All ``2**L`` coalitions in ascending mask order.

    ``experiments`` may be an :class:`ExperimentSet` or a plain count.
    """
    L = experiments.count if isinstance(experiments, ExperimentSet) else int(experiments)
    if L > max_l:
        raise TooManyExperiments(
            f"L={L} exceeds the exact-enumeration maximum {max_l}", experiments=L, maximum=max_l
        )
    return list(range(1 << L))


@dataclass(frozen=True, eq=False)
class ObservationTable:
    """Immutable experiment log.

    ``treatments`` holds one coalition mask per row. Arrays are made
    read-only on construction so tables can be shared between workers.
    """

    outcomes: np.ndarray
    weights: np.ndarray
    treatments: np.ndarray
    covariates: np.ndarray
    experiments: ExperimentSet = field(default=None)

    def __post_init__(self):
        y = np.asarray(self.outcomes, dtype=float).reshape(-1)
        n = y.shape[0]
        w = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=float).reshape(-1)
        t = np.asarray(self.treatments, dtype=np.int64).reshape(-1)
        x = self.covariates
        x = np.zeros((n, 0)) if x is None else np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(n, -1)
        if n == 0:
            raise EmptyTable("table has no rows")
        if w.shape[0] != n or t.shape[0] != n or x.shape[0] != n:
            raise DimensionMismatch("outcomes, weights, treatments and covariates differ in length")
        if not np.all(np.isfinite(y)):
            raise MalformedRow("outcomes must be finite")
        if not np.all(np.isfinite(x)):
            raise MalformedRow("covariates must be finite")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise MalformedRow("weights must be finite and strictly positive")
        experiments = self.experiments
        if experiments is None:
            experiments = ExperimentSet(max(1, int(t.max()).bit_length()))
        elif isinstance(experiments, int):
            experiments = ExperimentSet(experiments)
        if np.any(t < 0) or np.any(t > experiments.grand):
            raise InvalidTreatmentBit(f"treatment masks must lie in [0, {experiments.grand}]")
        for name, arr in (("outcomes", y), ("weights", w), ("treatments", t), ("covariates", x)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "experiments", experiments)

    @property
    def n(self) -> int:
        return self.outcomes.shape[0]

    @property
    def L(self) -> int:
        return self.experiments.count

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def observed(self) -> list[int]:
        """Coalitions with at least one row, ascending."""
        return [int(t) for t in np.unique(self.treatments)]

    def counts(self) -> dict[int, int]:
        vals, cnt = np.unique(self.treatments, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, cnt)}

    def take(self, index: np.ndarray) -> "ObservationTable":
        return ObservationTable(
            self.outcomes[index],
            self.weights[index],
            self.treatments[index],
            self.covariates[index],
            self.experiments,
        )

    def with_treatments(self, treatments, experiments) -> "ObservationTable":
        return ObservationTable(self.outcomes, self.weights, treatments, self.covariates, experiments)

    def treatment_bits(self) -> np.ndarray:
        """``(n, L)`` 0/1 matrix, column ``l`` is experiment ``l``."""
        return (self.treatments[:, None] >> np.arange(self.L)) & 1


def indicator(table: ObservationTable, T: int) -> np.ndarray:
    """D_i(T): 1 where the row received exactly coalition ``T``."""
    if T < 0 or T > table.experiments.grand:
        raise IndexOutOfRange(f"coalition {T} invalid for L={table.L}", coalition=T)
    return (table.treatments == T).astype(np.int64)


def marginal_collapse(table: ObservationTable, l: int) -> ObservationTable:
    """Project onto experiment ``l`` as a single binary treatment."""
    if not 0 <= l < table.L:
        raise IndexOutOfRange(f"experiment {l} out of range for L={table.L}", experiment=l)
    collapsed = (table.treatments >> l) & 1
    label = table.experiments.labels[l]
    return table.with_treatments(collapsed, ExperimentSet(1, (label,)))


def _header(L: int, d: int, with_weights: bool = True) -> list[str]:
    cols = ["y"] + (["w"] if with_weights else [])
    return cols + [f"t_{l}" for l in range(L)] + [f"x_{j}" for j in range(d)]


def parse_table(
    source,
    experiments: Optional[int] = None,
    covariate_dim: Optional[int] = None,
    labels: Sequence[str] = (),
) -> ObservationTable:
    """Read the CSV log format ``y,w,t_0..t_{L-1},x_0..x_{d-1}``.

    ``source`` is a text stream or a string. When ``experiments`` or
    ``covariate_dim`` is ``None`` it is inferred from the header.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise EmptyTable("input has no header") from None

    t_cols = [h for h in header if h.startswith("t_")]
    x_cols = [h for h in header if h.startswith("x_")]
    L = len(t_cols) if experiments is None else experiments
    d = len(x_cols) if covariate_dim is None else covariate_dim
    has_w = "w" in header
    expected = _header(L, d, has_w)
    if header != expected:
        raise MalformedRow(f"header {header} does not match expected {expected}", row=0)
    if L < 1:
        raise MalformedRow("header declares no treatment columns", row=0)

    width = len(expected)
    t_start = 2 if has_w else 1
    rows = []
    for lineno, row in enumerate(reader, start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != width:
            raise MalformedRow(f"row {lineno}: expected {width} columns, got {len(row)}", row=lineno)
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise MalformedRow(f"row {lineno}: non-numeric cell", row=lineno) from None
        rows.append(vals)
        for l in range(L):
            if vals[t_start + l] not in (0.0, 1.0):
                raise InvalidTreatmentBit(
                    f"row {lineno}: t_{l}={row[t_start + l]} is not 0 or 1", row=lineno, experiment=l
                )
    if not rows:
        raise EmptyTable("table has no data rows")

    arr = np.array(rows, dtype=float)
    y = arr[:, 0]
    w = arr[:, 1] if has_w else np.ones(len(rows))
    bits = arr[:, t_start : t_start + L].astype(np.int64)
    masks = (bits << np.arange(L)).sum(axis=1)
    x = arr[:, t_start + L :]
    try:
        return ObservationTable(y, w, masks, x, ExperimentSet(L, tuple(labels)))
    except MalformedRow as exc:
        raise MalformedRow(f"invalid values: {exc}") from None


def serialize_table(table: ObservationTable, sink=None) -> Optional[str]:
    """Write ``table`` in the CSV log format; returns the text if ``sink`` is None."""
    buf = io.StringIO() if sink is None else sink
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_header(table.L, table.d))
    bits = table.treatment_bits()
    for i in range(table.n):
        writer.writerow(
            [repr(float(table.outcomes[i])), repr(float(table.weights[i]))]
            + [str(int(b)) for b in bits[i]]
            + [repr(float(v)) for v in table.covariates[i]]
        )
    if sink is None:
        return buf.getvalue()
    return None


def read_table(path, experiments=None, covariate_dim=None, labels=()) -> ObservationTable:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_table(fh, experiments, covariate_dim, labels)


def write_table(table: ObservationTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        serialize_table(table, fh)
