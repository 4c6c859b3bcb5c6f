"""Raster, stats and plot-data files."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


class RasterError(ValueError):
    pass


def sort_spikes(spikes: np.ndarray) -> np.ndarray:
    spikes = np.asarray(spikes, dtype=np.int64).reshape(-1, 2)
    return spikes[np.lexsort((spikes[:, 1], spikes[:, 0]))]


def write_raster(path: str | Path, spikes: np.ndarray, dt: float) -> None:
    """One ``time_ms id`` line per spike, sorted by (time, id)."""
    spikes = sort_spikes(spikes)
    with open(path, "w") as fh:
        fh.write("# time_ms id\n")
        for s, i in spikes:
            fh.write(f"{s * dt:.6f} {i}\n")


def read_raster(path: str | Path, dt: float) -> np.ndarray:
    """Back to ``(step, id)`` rows; rejects unsorted or malformed files."""
    rows = []
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise RasterError(f"{path}:{ln}: expected 'time_ms id'")
            try:
                rows.append((int(round(float(parts[0]) / dt)), int(parts[1])))
            except ValueError:
                raise RasterError(f"{path}:{ln}: malformed line {line!r}") from None
    spikes = np.array(rows, dtype=np.int64).reshape(-1, 2)
    if spikes.shape[0] > 1:
        order = np.lexsort((spikes[:, 1], spikes[:, 0]))
        if not np.array_equal(order, np.arange(spikes.shape[0])) or \
                np.any(np.all(np.diff(spikes, axis=0) == 0, axis=1)):
            raise RasterError(f"{path}: raster is not strictly sorted by (time, id)")
    return spikes


def write_stats_csv(path: str | Path, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    keys = list(rows[0])
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=keys)
        wr.writeheader()
        wr.writerows(rows)


def read_stats_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def split_by_area(spikes: np.ndarray, area_of: np.ndarray, n_areas: int) -> list[np.ndarray]:
    """Spike rows of each area; together they partition the input exactly."""
    spikes = sort_spikes(spikes)
    tags = area_of[spikes[:, 1]] if spikes.size else np.zeros(0, dtype=np.int64)
    return [spikes[tags == a] for a in range(n_areas)]


def area_rate_series(spikes: np.ndarray, area_of: np.ndarray, n_areas: int, dt: float,
                     n_steps: int, bin_ms: float = 5.0) -> tuple[np.ndarray, np.ndarray]:
    """Population rate (Hz) of each area in bins of ``bin_ms``; returns (bin starts, rates)."""
    bin_steps = max(1, int(round(bin_ms / dt)))
    n_bins = max(1, -(-n_steps // bin_steps))
    sizes = np.bincount(area_of, minlength=n_areas).astype(np.float64)
    rates = np.zeros((n_bins, n_areas))
    for a, sp in enumerate(split_by_area(spikes, area_of, n_areas)):
        counts = np.bincount(sp[:, 0] // bin_steps, minlength=n_bins)[:n_bins]
        rates[:, a] = counts / max(sizes[a], 1.0) / (bin_steps * dt * 1e-3)
    return np.arange(n_bins) * bin_steps * dt, rates


def write_raster_data(out_dir: str | Path, spikes: np.ndarray, area_of: np.ndarray,
                      area_names: list[str], dt: float, n_steps: int,
                      bin_ms: float = 5.0) -> list[Path]:
    """Per-area rasters plus one binned rate table, ready for plotting."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, sp in zip(area_names, split_by_area(spikes, area_of, len(area_names))):
        p = out / f"raster_{name}.txt"
        write_raster(p, sp, dt)
        written.append(p)
    t, rates = area_rate_series(spikes, area_of, len(area_names), dt, n_steps, bin_ms)
    p = out / "area_rates.csv"
    with open(p, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["time_ms"] + list(area_names))
        for ti, row in zip(t, rates):
            wr.writerow([f"{ti:.6f}"] + [f"{x:.6f}" for x in row])
    written.append(p)
    return written


def first_divergence(a: np.ndarray, b: np.ndarray) -> tuple[int, int] | None:
    """First (step, id) at which two sorted spike logs differ, or None if equal.

    The reported row is the earlier of the two mismatching rows.
    """
    a, b = sort_spikes(a), sort_spikes(b)
    n = min(a.shape[0], b.shape[0])
    diff = np.flatnonzero(np.any(a[:n] != b[:n], axis=1))
    if diff.size:
        i = diff[0]
        ra, rb = tuple(a[i]), tuple(b[i])
        return tuple(int(x) for x in min(ra, rb))
    if a.shape[0] != b.shape[0]:
        longer = a if a.shape[0] > b.shape[0] else b
        return tuple(int(x) for x in longer[n])
    return None
