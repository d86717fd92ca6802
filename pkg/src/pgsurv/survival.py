"""Quartile discretisation of survival times and Harrell's C-index."""
from dataclasses import dataclass

import numpy as np


class DegenerateCohortError(ValueError):
    pass


class NoComparablePairsError(ValueError):
    pass


@dataclass(frozen=True)
class BinEdges:
    cuts: tuple  # three strictly ascending cut points (months)

    def __post_init__(self):
        c = self.cuts
        if len(c) != 3 or not (c[0] < c[1] < c[2]):
            raise DegenerateCohortError(f"bin edges must be 3 strictly ascending values, got {c}")


@dataclass(frozen=True)
class SurvivalRecord:
    patient_id: str
    os_months: float
    event: int  # 1 = death observed

    def __post_init__(self):
        if not np.isfinite(self.os_months) or self.os_months <= 0:
            raise ValueError(f"{self.patient_id}: os_months must be finite and > 0, got {self.os_months}")
        if self.event not in (0, 1):
            raise ValueError(f"{self.patient_id}: event must be 0 or 1, got {self.event}")


def fit_bin_edges(records):
    """Quartiles (linear interpolation) of the uncensored event times."""
    times = np.array([r.os_months for r in records if r.event == 1], dtype=np.float64)
    if len(times) < 4 or len(np.unique(times)) < 4:
        raise DegenerateCohortError(
            f"need >= 4 distinct uncensored times to fit quartile bins, got {len(np.unique(times))}")
    cuts = np.percentile(np.sort(times), [25.0, 50.0, 75.0])
    return BinEdges(tuple(float(c) for c in cuts))


def assign_bin(os_months, edges):
    """Half-open intervals [t_r, t_{r+1}); below the first cut is bin 0."""
    return int(np.searchsorted(np.asarray(edges.cuts), os_months, side="right"))


def assign_bins(times, edges):
    return np.searchsorted(np.asarray(edges.cuts), np.asarray(times, dtype=np.float64), side="right")


def c_index(risks, times, events):
    """Harrell's C-index.

    A pair (i, j) is comparable when ``events[i] == 1`` and ``times[i] < times[j]``;
    it is concordant when ``risks[i] > risks[j]``, and tied risks count one half.
    """
    risks = np.asarray(risks, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events).astype(bool)
    if not (len(risks) == len(times) == len(events)):
        raise ValueError(f"length mismatch: {len(risks)} risks, {len(times)} times, {len(events)} events")
    comparable = events[:, None] & (times[:, None] < times[None, :])
    n_pairs = int(comparable.sum())
    if n_pairs == 0:
        raise NoComparablePairsError("no comparable pairs: C-index undefined")
    diff = risks[:, None] - risks[None, :]
    concordant = int((comparable & (diff > 0)).sum())
    tied = int((comparable & (diff == 0)).sum())
    return (concordant + 0.5 * tied) / n_pairs


def c_index_records(risks, records):
    return c_index(risks, [r.os_months for r in records], [r.event for r in records])
