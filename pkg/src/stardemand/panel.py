"""Zone-indexed demand panels, temporal splits and standardization.

A panel is a k x T matrix of per-zone demand on a uniform time grid.
All types here are immutable after construction and safe to share across
workers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

# How the values of a panel are to be interpreted.
KIND_RAW = "raw"                  # non-negative integer counts
KIND_REAL = "real"                # unconstrained reals (e.g. synthetic data)
KIND_STANDARDIZED = "standardized"

_KINDS = (KIND_RAW, KIND_REAL, KIND_STANDARDIZED)


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DemandPanel:
    """k x T matrix of per-zone demand on a uniform bin grid.

    ``values[i, t]`` is the demand in zone ``zone_ids[i]`` during bin ``t``.
    Bin 0 starts at ``origin``; each bin spans ``bin_minutes`` minutes.
    """

    zone_ids: tuple[str, ...]
    values: np.ndarray
    bin_minutes: int = 15
    origin: datetime | None = None
    kind: str = KIND_RAW

    @property
    def k(self) -> int:
        return len(self.zone_ids)

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def zone_index(self, zone_id: str) -> int:
        return self.zone_ids.index(zone_id)

    def with_values(self, values: np.ndarray, kind: str | None = None) -> "DemandPanel":
        """Copy of this panel with replaced values (shape must match)."""
        if values.shape != self.values.shape:
            raise DataError("replacement values have mismatched shape")
        return DemandPanel(
            zone_ids=self.zone_ids,
            values=_frozen(values),
            bin_minutes=self.bin_minutes,
            origin=self.origin,
            kind=self.kind if kind is None else kind,
        )


def make_panel(
    zone_ids: Sequence[str],
    values: Iterable[Iterable[float]] | np.ndarray,
    bin_minutes: int = 15,
    origin: datetime | None = None,
    kind: str = KIND_RAW,
) -> DemandPanel:
    """Validate inputs and build an immutable demand panel.

    Raises DataError on ragged rows, duplicate zone ids, or (in raw mode)
    negative or non-integer counts.
    """
    zone_ids = tuple(str(z) for z in zone_ids)
    if len(zone_ids) == 0:
        raise DataError("panel needs at least one zone")
    if len(set(zone_ids)) != len(zone_ids):
        raise DataError("duplicate zone ids")
    if bin_minutes <= 0:
        raise DataError("bin_minutes must be positive")
    if kind not in _KINDS:
        raise DataError(f"unknown panel kind {kind!r}")

    if not isinstance(values, np.ndarray):
        rows = [list(r) for r in values]
        lengths = {len(r) for r in rows}
        if len(lengths) > 1:
            raise DataError("ragged rows: all zones must cover the same bins")
        values = np.array(rows, dtype=float)
    else:
        values = np.array(values, dtype=float)
    if values.ndim != 2:
        raise DataError("values must be a 2-D zone x bin matrix")
    if values.shape[0] != len(zone_ids):
        raise DataError("row count does not match zone count")
    if values.shape[1] < 1:
        raise DataError("panel needs at least one time bin")
    if not np.all(np.isfinite(values)):
        raise DataError("panel values must be finite")

    if kind == KIND_RAW:
        if np.any(values < 0):
            raise DataError("negative counts in raw panel")
        if np.any(values != np.round(values)):
            raise DataError("non-integer counts in raw panel")

    return DemandPanel(
        zone_ids=zone_ids,
        values=_frozen(values),
        bin_minutes=bin_minutes,
        origin=origin,
        kind=kind,
    )


@dataclass(frozen=True)
class SplitSpec:
    """Three-part temporal split 0 < t1 < t2 < t_end (bin indices).

    Bins [0, t1) train, [t1, t2) validate, [t2, t_end) test.
    """

    t1: int
    t2: int
    t_end: int

    def __post_init__(self):
        if not (0 < self.t1 < self.t2 < self.t_end):
            raise DataError(
                f"invalid split ({self.t1}, {self.t2}, {self.t_end}): "
                "need 0 < t1 < t2 < t_end"
            )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split(panel: DemandPanel, t2_fraction: float, t1_fraction_of_t2: float) -> SplitSpec:
    """Split a panel's time axis into train / validation / test parts.

    t2 = round(t2_fraction * T), t1 = round(t1_fraction_of_t2 * t2),
    rounding half-up, then clamped to the legal range.
    """
    if not (0 < t2_fraction < 1 and 0 < t1_fraction_of_t2 < 1):
        raise DataError("split fractions must lie in (0, 1)")
    T = panel.T
    t2 = min(max(_round_half_up(t2_fraction * T), 2), T - 1)
    t1 = min(max(_round_half_up(t1_fraction_of_t2 * t2), 1), t2 - 1)
    return SplitSpec(t1=t1, t2=t2, t_end=T)


@dataclass(frozen=True)
class ModelOrder:
    """Time-lag order p and spatial-lag order eta (both >= 1)."""

    p: int
    eta: int

    def __post_init__(self):
        if self.p < 1:
            raise DataError("p must be >= 1")
        if self.eta < 1:
            raise DataError("eta must be >= 1")


@dataclass(frozen=True)
class Standardization:
    """Per-zone mean/sd computed on a stated index range (population sd)."""

    mean: np.ndarray
    sd: np.ndarray
    fit_range: tuple[int, int]

    def apply(self, panel: DemandPanel) -> DemandPanel:
        vals = (panel.values - self.mean[:, None]) / self.sd[:, None]
        return panel.with_values(vals, kind=KIND_STANDARDIZED)

    def invert(self, panel: DemandPanel, kind: str = KIND_REAL) -> DemandPanel:
        vals = panel.values * self.sd[:, None] + self.mean[:, None]
        return panel.with_values(vals, kind=kind)

    def invert_values(self, values: np.ndarray) -> np.ndarray:
        """Undo standardization on a k x n array of (predicted) values."""
        return values * self.sd[:, None] + self.mean[:, None]


def standardize(
    panel: DemandPanel, fit_range: tuple[int, int]
) -> tuple[DemandPanel, Standardization]:
    """Standardize each zone to zero mean / unit sd over ``fit_range``.

    ``fit_range`` is a half-open (start, end) index range; statistics use
    the population (1/n) sd convention. Zones with zero variance over the
    range are an error.
    """
    start, end = fit_range
    if not (0 <= start < end <= panel.T):
        raise DataError(f"bad fit range {fit_range}")
    window = panel.values[:, start:end]
    mean = window.mean(axis=1)
    sd = window.std(axis=1)  # population convention
    bad = np.flatnonzero(sd <= 0)
    if bad.size:
        names = ", ".join(panel.zone_ids[i] for i in bad[:5])
        raise DataError(f"zero-variance zones over fit range: {names}")
    std = Standardization(mean=_frozen(mean), sd=_frozen(sd), fit_range=(start, end))
    return std.apply(panel), std


# -- CSV serialization --------------------------------------------------

def write_panel_csv(panel: DemandPanel, path) -> None:
    """Write `zone_id,bin_0,...,bin_{T-1}` rows, one per zone."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["zone_id"] + [f"bin_{t}" for t in range(panel.T)])
        for zid, row in zip(panel.zone_ids, panel.values):
            w.writerow([zid] + [_fmt(v) for v in row])


def _fmt(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def read_panel_csv(path, bin_minutes: int = 15, origin: datetime | None = None,
                   kind: str | None = None) -> DemandPanel:
    """Read a panel written by :func:`write_panel_csv`.

    ``kind`` defaults to raw when all values are non-negative integers,
    real otherwise.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "zone_id":
        raise DataError(f"{path}: not a panel CSV (missing zone_id header)")
    zone_ids = []
    data = []
    for r in rows[1:]:
        if not r:
            continue
        zone_ids.append(r[0])
        try:
            data.append([float(x) for x in r[1:]])
        except ValueError as e:
            raise DataError(f"{path}: bad value in row {r[0]}: {e}") from None
    if not data:
        raise DataError(f"{path}: empty panel")
    arr_rows = {len(r) for r in data}
    if len(arr_rows) > 1:
        raise DataError(f"{path}: ragged rows")
    arr = np.array(data, dtype=float)
    if kind is None:
        raw_like = np.all(arr >= 0) and np.all(arr == np.round(arr))
        kind = KIND_RAW if raw_like else KIND_REAL
    return make_panel(zone_ids, arr, bin_minutes=bin_minutes, origin=origin, kind=kind)
