"""Summarized per-variant association data.

A :class:`SummarySet` holds, for each candidate instrument, the estimated
association with the exposure and with the outcome together with their
standard errors. Routines here cover CSV ingestion/serialization, orientation
of variants so exposure associations are non-negative, and per-variant ratio
estimates with delta-method variances.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .exceptions import CsvParseError, DegenerateInstrumentError

CSV_COLUMNS = ("id", "beta_x", "se_x", "beta_y", "se_y")


@dataclass(frozen=True)
class VariantAssociation:
    """Summary statistics for one genetic variant.

    Parameters
    ----------
    id : str
        Variant identifier, unique within a set.
    beta_x, se_x : float
        Association with the exposure and its standard error.
    beta_y, se_y : float
        Association with the outcome and its standard error.
    """

    id: str
    beta_x: float
    se_x: float
    beta_y: float
    se_y: float

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValueError(f"variant id must be a non-empty string, got {self.id!r}")
        for name in ("beta_x", "se_x", "beta_y", "se_y"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"variant {self.id!r}: {name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        if self.se_x <= 0.0:
            raise ValueError(f"variant {self.id!r}: se_x must be > 0, got {self.se_x!r}")
        if self.se_y <= 0.0:
            raise ValueError(f"variant {self.id!r}: se_y must be > 0, got {self.se_y!r}")


@dataclass(frozen=True)
class SummarySet:
    """An ordered collection of variant associations.

    ``harmonized`` records that every exposure association has been oriented
    to be non-negative (see :func:`harmonize`).
    """

    variants: tuple[VariantAssociation, ...]
    harmonized: bool = False

    def __post_init__(self):
        variants = tuple(self.variants)
        object.__setattr__(self, "variants", variants)
        if not variants:
            raise ValueError("a summary set needs at least one variant")
        seen = set()
        for v in variants:
            if v.id in seen:
                raise ValueError(f"duplicate variant id {v.id!r}")
            seen.add(v.id)
        if self.harmonized and any(v.beta_x < 0.0 for v in variants):
            raise ValueError("harmonized set contains a negative exposure association")

    def __len__(self) -> int:
        return len(self.variants)

    @property
    def j(self) -> int:
        """Number of variants."""
        return len(self.variants)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(v.id for v in self.variants)

    @property
    def beta_x(self) -> np.ndarray:
        return np.array([v.beta_x for v in self.variants])

    @property
    def se_x(self) -> np.ndarray:
        return np.array([v.se_x for v in self.variants])

    @property
    def beta_y(self) -> np.ndarray:
        return np.array([v.beta_y for v in self.variants])

    @property
    def se_y(self) -> np.ndarray:
        return np.array([v.se_y for v in self.variants])

    @classmethod
    def from_arrays(cls, beta_x, se_x, beta_y, se_y, ids=None,
                    harmonized: bool = False) -> "SummarySet":
        """Build a set from parallel sequences; ids default to v1, v2, ..."""
        beta_x = np.asarray(beta_x, dtype=float)
        se_x = np.asarray(se_x, dtype=float)
        beta_y = np.asarray(beta_y, dtype=float)
        se_y = np.asarray(se_y, dtype=float)
        sizes = {arr.shape for arr in (beta_x, se_x, beta_y, se_y)}
        if len(sizes) != 1 or beta_x.ndim != 1:
            raise ValueError("beta_x, se_x, beta_y, se_y must be equal-length 1-d sequences")
        if ids is None:
            ids = [f"v{i + 1}" for i in range(beta_x.size)]
        variants = tuple(
            VariantAssociation(str(i), bx, sx, by, sy)
            for i, bx, sx, by, sy in zip(ids, beta_x, se_x, beta_y, se_y)
        )
        return cls(variants, harmonized=harmonized)


@dataclass(frozen=True)
class RatioEstimates:
    """Per-variant ratio estimates and their delta-method variances."""

    theta: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        variance = np.asarray(self.variance, dtype=float)
        theta.setflags(write=False)
        variance.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "variance", variance)
        if theta.shape != variance.shape:
            raise ValueError("theta and variance must have the same length")
        if not np.all(np.isfinite(theta)) or not np.all(variance > 0):
            raise ValueError("ratio estimates must be finite with positive variances")


def harmonize(s: SummarySet) -> SummarySet:
    """Orient each variant so its exposure association is non-negative.

    Flips the sign of both associations wherever ``beta_x < 0``; a zero
    exposure association counts as positive and is left untouched. Standard
    errors are unchanged. Idempotent.
    """
    flipped = tuple(
        v if v.beta_x >= 0.0 else replace(v, beta_x=-v.beta_x, beta_y=-v.beta_y)
        for v in s.variants
    )
    return SummarySet(flipped, harmonized=True)


def ratio_estimates(s: SummarySet) -> RatioEstimates:
    """Per-variant ratio estimates beta_y / beta_x.

    The variance is the first-order delta-method value se_y**2 / beta_x**2,
    which ignores uncertainty in the exposure association. A variant with
    ``beta_x == 0`` has no ratio and raises :class:`DegenerateInstrumentError`.
    """
    for v in s.variants:
        if v.beta_x == 0.0:
            raise DegenerateInstrumentError(
                f"variant {v.id!r} has a zero exposure association; no ratio estimate exists"
            )
    beta_x = s.beta_x
    theta = s.beta_y / beta_x
    variance = (s.se_y / beta_x) ** 2
    return RatioEstimates(theta, variance)


def read_csv(source: str | Path | IO[str]) -> SummarySet:
    """Read a summary set from CSV with header ``id,beta_x,se_x,beta_y,se_y``.

    Errors carry the 1-based row number of the offending line. The header row
    must match the schema exactly (order included).
    """
    if hasattr(source, "read"):
        return _parse_csv(source)
    with open(source, newline="", encoding="utf-8") as fh:
        return _parse_csv(fh)


def _parse_csv(fh: IO[str]) -> SummarySet:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise CsvParseError("empty input: header row is missing") from None
    header = [col.strip() for col in header]
    if header != list(CSV_COLUMNS):
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise CsvParseError(f"row 1: missing column(s) {', '.join(missing)}")
        extra = [c for c in header if c not in CSV_COLUMNS]
        if extra:
            raise CsvParseError(f"row 1: unexpected column(s) {', '.join(extra)}")
        raise CsvParseError(
            f"row 1: columns must appear in the order {','.join(CSV_COLUMNS)}"
        )
    variants: list[VariantAssociation] = []
    seen: set[str] = set()
    for row in reader:
        row_num = reader.line_num
        if not row:
            continue
        if len(row) != len(CSV_COLUMNS):
            raise CsvParseError(f"row {row_num}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
        vid = row[0].strip()
        values = []
        for name, cell in zip(CSV_COLUMNS[1:], row[1:]):
            try:
                value = float(cell)
            except ValueError:
                raise CsvParseError(
                    f"row {row_num}: non-numeric value {cell.strip()!r} for {name}"
                ) from None
            values.append(value)
        if vid in seen:
            raise CsvParseError(f"row {row_num}: duplicate variant id {vid!r}")
        try:
            variant = VariantAssociation(vid, *values)
        except ValueError as exc:
            raise CsvParseError(f"row {row_num}: {exc}") from None
        seen.add(vid)
        variants.append(variant)
    if not variants:
        raise CsvParseError("no variants: input has a header but no data rows")
    return SummarySet(tuple(variants))


def write_csv(s: SummarySet, dest: str | Path | IO[str]) -> None:
    """Write a summary set as CSV; numbers round-trip through :func:`read_csv`."""
    if hasattr(dest, "write"):
        _write_csv(s, dest)
        return
    with open(dest, "w", newline="", encoding="utf-8") as fh:
        _write_csv(s, fh)


def _write_csv(s: SummarySet, fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for v in s.variants:
        writer.writerow([v.id, repr(v.beta_x), repr(v.se_x), repr(v.beta_y), repr(v.se_y)])
