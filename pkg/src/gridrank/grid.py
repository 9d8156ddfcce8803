"""Gridded spatiotemporal event data: model, windowing, synthetic generation, I/O.

A dataset is an M x N cell grid observed over T equal-length periods with
three feature groups (per-period, per-cell, per-cell-per-period) and a
non-negative risk score per cell and period. Locations are indexed
row-major: ``location = row * cols + col``, fixed across the whole
package.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError


def location_id(row: int, col: int, cols: int) -> int:
    """Row-major flat index of a cell."""
    return row * cols + col


def location_rc(location: int, cols: int) -> tuple[int, int]:
    """Inverse of :func:`location_id`."""
    return divmod(location, cols)


def cell_coordinates(rows: int, cols: int) -> np.ndarray:
    """(S, 2) array of (row, col) cell centers in row-major location order."""
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    return np.stack([rr.reshape(-1), cc.reshape(-1)], axis=1).astype(np.float64)


@dataclass(frozen=True)
class Window:
    """One forecasting instance: inputs [target - length, target), predict target."""

    target: int
    length: int

    def __post_init__(self):
        if self.length < 1:
            raise DataError(f"window length must be >= 1, got {self.length}")
        if self.target - self.length < 0:
            raise DataError(f"window target {self.target} needs {self.length} preceding periods")

    def inputs(self) -> range:
        return range(self.target - self.length, self.target)


@dataclass(eq=False)
class StGrid:
    """Immutable-by-convention container for one gridded dataset.

    temporal: (T, d_t), spatial: (rows, cols, d_s),
    spatiotemporal: (rows, cols, T, d_st), risk: (rows, cols, T).
    """

    rows: int
    cols: int
    periods: int
    temporal: np.ndarray
    spatial: np.ndarray
    spatiotemporal: np.ndarray
    risk: np.ndarray
    normalization: dict = field(default_factory=dict)
    attrs: dict = field(default_factory=dict, repr=False)

    @property
    def n_locations(self) -> int:
        return self.rows * self.cols

    @property
    def d_t(self) -> int:
        return self.temporal.shape[1]

    @property
    def d_s(self) -> int:
        return self.spatial.shape[2]

    @property
    def d_st(self) -> int:
        return self.spatiotemporal.shape[3]

    def risk_by_location(self) -> np.ndarray:
        """Risk reshaped to (S, T), row-major locations."""
        return self.risk.reshape(self.n_locations, self.periods)

    def spatiotemporal_at(self, t: int) -> np.ndarray:
        """(S, d_st) slice of the spatiotemporal features at period t."""
        return self.spatiotemporal[:, :, t, :].reshape(self.n_locations, self.d_st)

    def spatial_flat(self) -> np.ndarray:
        return self.spatial.reshape(self.n_locations, self.d_s)

    def validate(self) -> "StGrid":
        if min(self.rows, self.cols, self.periods) < 1:
            raise DataError(f"invalid dimensions rows={self.rows} cols={self.cols} periods={self.periods}")
        expected = {
            "f_t": (self.temporal, (self.periods, self.temporal.shape[-1]), ("T", "d_t")),
            "f_s": (self.spatial, (self.rows, self.cols, self.spatial.shape[-1]), ("rows", "cols", "d_s")),
            "f_st": (self.spatiotemporal,
                     (self.rows, self.cols, self.periods, self.spatiotemporal.shape[-1]),
                     ("rows", "cols", "T", "d_st")),
            "y": (self.risk, (self.rows, self.cols, self.periods), ("rows", "cols", "T")),
        }
        for name, (arr, shape, axes) in expected.items():
            if arr.shape != shape:
                axis = next((axes[i] for i, (g, e) in enumerate(zip(arr.shape, shape)) if g != e), "rank")
                raise DataError(f"dimension mismatch in {name}: shape {arr.shape}, expected {shape} (axis {axis})")
            _require_finite(name, arr)
        if np.any(self.risk < 0):
            where = np.argwhere(self.risk < 0)[0]
            raise DataError(f"negative risk at (row={where[0]}, col={where[1]}, t={where[2]})")
        if not np.any(self.risk > 0):
            raise DataError("risk is zero everywhere; dataset carries no ranking signal")
        return self


def _require_finite(name: str, arr: np.ndarray) -> None:
    if np.all(np.isfinite(arr)):
        return
    where = np.argwhere(~np.isfinite(arr))[0]
    coords = ", ".join(str(int(v)) for v in where)
    raise DataError(f"non-finite value in {name} at ({coords})")


def windows(grid: StGrid, length: int) -> list[Window]:
    """All forecasting windows of the grid: targets length .. T-1 in order."""
    if length >= grid.periods:
        raise DataError(f"window length {length} must be shorter than the study period {grid.periods}")
    return [Window(target=t, length=length) for t in range(length, grid.periods)]


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SyntheticTruth:
    """Planted structure behind a synthetic grid, for oracle tests."""

    rate: np.ndarray           # (rows, cols, T) Poisson intensity
    centers: np.ndarray        # (n_hotspots, 2) float (row, col)
    widths: np.ndarray
    amplitudes: np.ndarray
    group: np.ndarray          # +1 / -1 modulation phase per hotspot
    base: np.ndarray           # (rows, cols) static intensity


def _smooth_field(rng, rows: int, cols: int, passes: int = 3) -> np.ndarray:
    z = rng.normal(size=(rows, cols))
    for _ in range(passes):
        padded = np.pad(z, 1, mode="edge")
        z = (padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2]
             + padded[1:-1, 2:] + padded[1:-1, 1:-1]) / 5.0
    return z


def _scale_unit(arr: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi > lo:
        return (arr - lo) / (hi - lo)
    return np.zeros_like(arr)


def generate_synthetic(seed: int, rows: int = 8, cols: int = 8, periods: int = 120,
                       n_hotspots: int = 3, *, d_t: int = 4, d_s: int = 6, d_st: int = 3,
                       train_fraction: float = 0.75, base_rate: float = 0.06,
                       amplitude: float = 1.0, return_truth: bool = False):
    """Deterministic synthetic dataset with recoverable top-K structure.

    Plants ``n_hotspots`` Gaussian intensity bumps whose activity swings
    with a weekly on/off phase (alternating between hotspots), plus a
    periodic holiday damping. Risk is Poisson around that rate, so the
    true ranking is known up to sampling noise. Features expose the
    ingredients: weekly/holiday calendar channels, per-group hotspot
    intensity maps, and traffic-like spatiotemporal channels.
    """
    if rows < 4 or cols < 4 or periods < 30 or n_hotspots < 1:
        raise DataError(f"invalid dimensions: need rows,cols >= 4, periods >= 30, hotspots >= 1; "
                        f"got {rows}x{cols}x{periods}, {n_hotspots} hotspots")
    if min(d_t, d_s, d_st) < 1:
        raise DataError("feature widths must be positive")
    rng = np.random.default_rng(seed)

    rr, cc = np.meshgrid(np.arange(rows, dtype=float), np.arange(cols, dtype=float), indexing="ij")
    centers = []
    for _ in range(n_hotspots):
        candidate = None
        for _attempt in range(200):
            candidate = rng.uniform([0.5, 0.5], [rows - 0.5, cols - 0.5])
            if all(np.hypot(*(candidate - c)) >= 2.2 for c in centers):
                break
        centers.append(candidate)
    centers = np.asarray(centers)
    widths = rng.uniform(0.9, 1.6, size=n_hotspots)
    amplitudes = rng.uniform(2.5, 3.5, size=n_hotspots) * amplitude
    group = np.array([1.0 if k % 2 == 0 else -1.0 for k in range(n_hotspots)])

    bumps = np.stack([
        amplitudes[k] * np.exp(-((rr - centers[k, 0]) ** 2 + (cc - centers[k, 1]) ** 2) / (2.0 * widths[k] ** 2))
        for k in range(n_hotspots)
    ])
    bump_total = bumps.sum(axis=0)
    base = base_rate + bump_total
    phase = (group[:, None, None] * bumps).sum(axis=0) / (bump_total + 1e-9)

    day = np.arange(periods)
    weekend = np.isin(day % 7, (4, 5, 6))
    swing = np.where(weekend, 1.0, -1.0)
    holiday = (day % 29) == 7
    damping = np.where(holiday, 0.5, 1.0)

    modulation = np.exp(1.1 * phase[:, :, None] * swing[None, None, :])
    rate = np.minimum(base[:, :, None] * modulation * damping[None, None, :], 6.0)
    risk = np.minimum(rng.poisson(rate), 12).astype(np.float64)

    # temporal channels: weekly phase, weekend and holiday flags, then noise
    temporal_channels = [
        np.sin(2.0 * np.pi * day / 7.0),
        np.cos(2.0 * np.pi * day / 7.0),
        weekend.astype(float),
        holiday.astype(float),
    ]
    while len(temporal_channels) < d_t:
        temporal_channels.append(rng.normal(size=periods))
    temporal = np.stack(temporal_channels[:d_t], axis=1)

    # spatial channels: per-group hotspot intensity, base field, proximity, noise
    even_field = bumps[group > 0].sum(axis=0) if np.any(group > 0) else np.zeros((rows, cols))
    odd_field = bumps[group < 0].sum(axis=0) if np.any(group < 0) else np.zeros((rows, cols))
    nearest = np.min(np.stack([
        np.hypot(rr - centers[k, 0], cc - centers[k, 1]) for k in range(n_hotspots)
    ]), axis=0)
    spatial_channels = [even_field, odd_field, base, -nearest]
    while len(spatial_channels) < d_s:
        spatial_channels.append(_smooth_field(rng, rows, cols))
    spatial = np.stack(spatial_channels[:d_s], axis=2)

    # spatiotemporal channels: traffic proxy, phase-aligned swing, AR noise
    traffic = np.sqrt(rate) * np.exp(rng.normal(0.0, 0.3, size=rate.shape))
    aligned = phase[:, :, None] * swing[None, None, :] + rng.normal(0.0, 0.3, size=rate.shape)
    noise = rng.normal(size=rate.shape)
    ar = np.empty_like(noise)
    ar[:, :, 0] = noise[:, :, 0]
    for t in range(1, periods):
        ar[:, :, t] = 0.7 * ar[:, :, t - 1] + noise[:, :, t]
    st_channels = [traffic, aligned, ar]
    while len(st_channels) < d_st:
        st_channels.append(rng.normal(size=rate.shape))
    st = np.stack(st_channels[:d_st], axis=3)

    # normalize features to [0, 1] with training-split statistics
    train_end = max(2, int(round(train_fraction * periods)))
    train_end = min(train_end, periods - 1)
    normalization = {"f_t": [], "f_s": [], "f_st": [], "train_end": train_end}
    for j in range(temporal.shape[1]):
        lo, hi = float(temporal[:train_end, j].min()), float(temporal[:train_end, j].max())
        temporal[:, j] = _scale_unit(temporal[:, j], lo, hi)
        normalization["f_t"].append({"min": lo, "max": hi})
    for j in range(spatial.shape[2]):
        lo, hi = float(spatial[:, :, j].min()), float(spatial[:, :, j].max())
        spatial[:, :, j] = _scale_unit(spatial[:, :, j], lo, hi)
        normalization["f_s"].append({"min": lo, "max": hi})
    for j in range(st.shape[3]):
        lo, hi = float(st[:, :, :train_end, j].min()), float(st[:, :, :train_end, j].max())
        st[:, :, :, j] = _scale_unit(st[:, :, :, j], lo, hi)
        normalization["f_st"].append({"min": lo, "max": hi})

    grid = StGrid(rows=rows, cols=cols, periods=periods, temporal=temporal,
                  spatial=spatial, spatiotemporal=st, risk=risk,
                  normalization=normalization).validate()
    if return_truth:
        truth = SyntheticTruth(rate=rate, centers=centers, widths=widths,
                               amplitudes=amplitudes, group=group, base=base)
        return grid, truth
    return grid


# ---------------------------------------------------------------------------
# manifest I/O

MANIFEST_NAME = "manifest.json"
_FILES = {"f_t": "f_t.csv", "f_s": "f_s.csv", "f_st": "f_st.csv", "y": "y.csv"}


def _fmt(value: float) -> str:
    return repr(float(value))


def save_grid(grid: StGrid, directory) -> Path:
    """Write manifest + CSV tensors; returns the manifest path.

    Floats are written with shortest round-trip repr so that
    ``load_grid(save_grid(g))`` is bit-exact.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    with open(directory / _FILES["f_t"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"f{j}" for j in range(grid.d_t)])
        for t in range(grid.periods):
            writer.writerow([t] + [_fmt(v) for v in grid.temporal[t]])

    with open(directory / _FILES["f_s"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col"] + [f"f{j}" for j in range(grid.d_s)])
        for r in range(grid.rows):
            for c in range(grid.cols):
                writer.writerow([r, c] + [_fmt(v) for v in grid.spatial[r, c]])

    with open(directory / _FILES["f_st"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "t"] + [f"f{j}" for j in range(grid.d_st)])
        for r in range(grid.rows):
            for c in range(grid.cols):
                for t in range(grid.periods):
                    writer.writerow([r, c, t] + [_fmt(v) for v in grid.spatiotemporal[r, c, t]])

    with open(directory / _FILES["y"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "t", "y"])
        for r in range(grid.rows):
            for c in range(grid.cols):
                for t in range(grid.periods):
                    writer.writerow([r, c, t, _fmt(grid.risk[r, c, t])])

    manifest = {
        "M": grid.rows, "N": grid.cols, "T": grid.periods,
        "d_t": grid.d_t, "d_s": grid.d_s, "d_st": grid.d_st,
        "files": dict(_FILES),
        "normalization": grid.normalization,
    }
    path = directory / MANIFEST_NAME
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def _read_rows(path: Path, expected_header: list[str]) -> list[list[str]]:
    if not path.exists():
        raise DataError(f"missing file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"empty CSV: {path}") from None
        if header != expected_header:
            raise DataError(f"bad header in {path.name}: {header}, expected {expected_header}")
        return [row for row in reader if row]


def _parse_float(text: str, path: Path) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"unparseable value {text!r} in {path.name}") from None


def load_grid(manifest_path) -> StGrid:
    """Load and validate a dataset from its manifest."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataError(f"missing file: {manifest_path}")
    with open(manifest_path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed manifest {manifest_path}: {exc}") from None
    for key in ("M", "N", "T", "d_t", "d_s", "d_st", "files"):
        if key not in manifest:
            raise DataError(f"manifest missing key {key!r}")
    rows, cols, periods = int(manifest["M"]), int(manifest["N"]), int(manifest["T"])
    d_t, d_s, d_st = int(manifest["d_t"]), int(manifest["d_s"]), int(manifest["d_st"])
    base = manifest_path.parent
    files = manifest["files"]

    def axis_check(name: str, keys: np.ndarray, sizes: dict[str, int]) -> None:
        for axis_pos, (axis, size) in enumerate(sizes.items()):
            seen = keys[:, axis_pos]
            if seen.size and (seen.min() < 0 or seen.max() >= size):
                raise DataError(f"dimension mismatch in {name}: axis {axis} index "
                                f"{int(seen.max())} outside [0, {size})")

    # temporal
    path = base / files["f_t"]
    records = _read_rows(path, ["t"] + [f"f{j}" for j in range(d_t)])
    temporal = np.full((periods, d_t), np.nan)
    visited = np.zeros(periods, dtype=bool)
    keys = np.array([[int(r[0])] for r in records]) if records else np.empty((0, 1), int)
    axis_check("f_t", keys, {"T": periods})
    for record in records:
        t = int(record[0])
        temporal[t] = [_parse_float(v, path) for v in record[1:]]
        visited[t] = True
    if not visited.all():
        raise DataError(f"dimension mismatch in f_t: axis T has {int(visited.sum())} rows, expected {periods}")

    # spatial
    path = base / files["f_s"]
    records = _read_rows(path, ["row", "col"] + [f"f{j}" for j in range(d_s)])
    spatial = np.full((rows, cols, d_s), np.nan)
    visited = np.zeros((rows, cols), dtype=bool)
    keys = np.array([[int(r[0]), int(r[1])] for r in records]) if records else np.empty((0, 2), int)
    axis_check("f_s", keys, {"rows": rows, "cols": cols})
    for record in records:
        r, c = int(record[0]), int(record[1])
        spatial[r, c] = [_parse_float(v, path) for v in record[2:]]
        visited[r, c] = True
    if not visited.all():
        raise DataError(f"dimension mismatch in f_s: {int(visited.sum())} cells, expected {rows * cols}")

    # spatiotemporal + risk share key layout
    def load_keyed(name: str, width: int) -> np.ndarray:
        p = base / files[name]
        header = ["row", "col", "t"] + ([f"f{j}" for j in range(width)] if name == "f_st" else ["y"])
        recs = _read_rows(p, header)
        out = np.full((rows, cols, periods, width), np.nan)
        seen = np.zeros((rows, cols, periods), dtype=bool)
        ks = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in recs]) if recs else np.empty((0, 3), int)
        axis_check(name, ks, {"rows": rows, "cols": cols, "T": periods})
        for rec in recs:
            r, c, t = int(rec[0]), int(rec[1]), int(rec[2])
            out[r, c, t] = [_parse_float(v, p) for v in rec[3:]]
            seen[r, c, t] = True
        if not seen.all():
            missing = np.argwhere(~seen)[0]
            raise DataError(f"dimension mismatch in {name}: missing record at "
                            f"(row={missing[0]}, col={missing[1]}, t={missing[2]}); axis T expected {periods}")
        return out

    st = load_keyed("f_st", d_st)
    risk = load_keyed("y", 1)[:, :, :, 0]

    grid = StGrid(rows=rows, cols=cols, periods=periods, temporal=temporal,
                  spatial=spatial, spatiotemporal=st, risk=risk,
                  normalization=manifest.get("normalization", {}))
    return grid.validate()
