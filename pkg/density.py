"""
Density - Gaussian kernel density surfaces and hotspot polygons

Surfaces are evaluated at cell centers of a regular planar grid. The Gaussian
kernel is separable, so each grid block is a product of per-axis kernel
matrices; work is split into fixed row blocks and point chunks so the summation
order never depends on how many workers run.
"""

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from shapely.geometry import box, mapping
from shapely.ops import unary_union

from errors import ConfigError, DataValidationError, NumericalError

logger = logging.getLogger(__name__)

ROW_BLOCK = 64
POINT_CHUNK = 4096

# cells per bandwidth below which a cell-center sum misses kernel mass
MIN_CELLS_PER_BANDWIDTH = 2.0
MASS_RANGE = (0.95, 1.0 + 1e-9)
MAX_GRID_CELLS = 25_000_000


@dataclass(frozen=True)
class GridSpec:
    """Regular grid; cell (row, col) spans [x0 + col*c, x0 + (col+1)*c) x [y0 + row*c, ...)"""
    x0: float
    y0: float
    cell_size: float
    n_cols: int
    n_rows: int

    def __post_init__(self):
        if self.cell_size <= 0 or self.n_cols < 1 or self.n_rows < 1:
            raise DataValidationError(f"Invalid grid {self}", code="invalid_grid")

    @property
    def x_centers(self) -> np.ndarray:
        return self.x0 + (np.arange(self.n_cols) + 0.5) * self.cell_size

    @property
    def y_centers(self) -> np.ndarray:
        return self.y0 + (np.arange(self.n_rows) + 0.5) * self.cell_size

    @property
    def x1(self) -> float:
        return self.x0 + self.n_cols * self.cell_size

    @property
    def y1(self) -> float:
        return self.y0 + self.n_rows * self.cell_size

    def covers(self, points: np.ndarray) -> bool:
        return bool(np.all((points[:, 0] >= self.x0) & (points[:, 0] <= self.x1)
                           & (points[:, 1] >= self.y0) & (points[:, 1] <= self.y1)))

    def cell_box(self, row: int, col: int):
        x = self.x0 + col * self.cell_size
        y = self.y0 + row * self.cell_size
        return box(x, y, x + self.cell_size, y + self.cell_size)


@dataclass
class DensitySurface:
    """Density per square meter at cell centers, values[row, col]"""
    grid: GridSpec
    values: np.ndarray
    bandwidth: float
    point_count: int

    @property
    def origin(self) -> Tuple[float, float]:
        return self.grid.x0, self.grid.y0

    @property
    def cell_size(self) -> float:
        return self.grid.cell_size

    @property
    def n_cols(self) -> int:
        return self.grid.n_cols

    @property
    def n_rows(self) -> int:
        return self.grid.n_rows

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_size * self.cell_size)


@dataclass
class HotspotSet:
    quantile: float
    threshold: float
    bandwidth: float
    cells: List[Tuple[int, int]] = field(default_factory=list)
    polygons: List[Any] = field(default_factory=list)
    cell_counts: List[int] = field(default_factory=list)
    peaks: List[float] = field(default_factory=list)

    def features(self, direction: str) -> List[Dict[str, Any]]:
        return [
            {
                "type": "Feature",
                "geometry": mapping(polygon),
                "properties": {
                    "direction": direction,
                    "quantile": self.quantile,
                    "bandwidth": self.bandwidth,
                    "component": k,
                    "cell_count": self.cell_counts[k],
                    "peak_density": self.peaks[k],
                },
            }
            for k, polygon in enumerate(self.polygons)
        ]


def _as_points(points: Sequence[Tuple[float, float]]) -> np.ndarray:
    array = np.asarray(points, dtype=float).reshape(-1, 2)
    if array.shape[0] == 0:
        raise DataValidationError("Density estimation needs at least one point", code="empty_input")
    if not np.all(np.isfinite(array)):
        raise NumericalError("Point coordinates must be finite", code="non_finite_features")
    return array


def silverman_bandwidth(points: Sequence[Tuple[float, float]]) -> float:
    """Rule-of-thumb bandwidth h = n^(-1/6) * sqrt((var_x + var_y) / 2)"""
    array = _as_points(points)
    n = array.shape[0]
    if n < 2:
        raise NumericalError("Bandwidth rule needs at least 2 points; supply a bandwidth", code="coincident_points")
    spread = 0.5 * (float(np.var(array[:, 0], ddof=1)) + float(np.var(array[:, 1], ddof=1)))
    if spread <= 0.0:
        raise NumericalError("All points coincide; supply a bandwidth", code="coincident_points")
    h = n ** (-1.0 / 6.0) * math.sqrt(spread)
    logger.debug(f"Silverman bandwidth {h:.3f} for {n} points")
    return h


def grid_for_points(points: Sequence[Tuple[float, float]], cell_size: float, pad: float) -> GridSpec:
    """Grid aligned to multiples of cell_size, padded by pad around the bounding box"""
    array = _as_points(points)
    if cell_size <= 0 or pad < 0:
        raise DataValidationError("cell_size must be positive and pad non-negative", code="invalid_grid")
    x0 = math.floor((float(array[:, 0].min()) - pad) / cell_size) * cell_size
    y0 = math.floor((float(array[:, 1].min()) - pad) / cell_size) * cell_size
    x1 = math.ceil((float(array[:, 0].max()) + pad) / cell_size) * cell_size
    y1 = math.ceil((float(array[:, 1].max()) + pad) / cell_size) * cell_size
    n_cols = max(1, int(round((x1 - x0) / cell_size)))
    n_rows = max(1, int(round((y1 - y0) / cell_size)))
    return GridSpec(x0=x0, y0=y0, cell_size=cell_size, n_cols=n_cols, n_rows=n_rows)


def _axis_kernel(centers: np.ndarray, coords: np.ndarray, bandwidth: float, cutoff: Optional[float]) -> np.ndarray:
    d = centers[:, None] - coords[None, :]
    k = np.exp(-(d * d) / (2.0 * bandwidth * bandwidth))
    if cutoff is not None:
        k[np.abs(d) > cutoff * bandwidth] = 0.0
    return k


def kde(
    points: Sequence[Tuple[float, float]],
    bandwidth: float,
    grid: GridSpec,
    cutoff_bandwidths: Optional[float] = None,
    n_jobs: int = 1
) -> DensitySurface:
    """
    Gaussian KDE value(g) = (1/n) sum_i exp(-|g - p_i|^2 / 2h^2) / (2 pi h^2)

    cutoff_bandwidths drops kernel contributions beyond that many bandwidths
    along either axis (6 loses under 1e-8 of kernel mass).
    """
    array = _as_points(points)
    if not (bandwidth > 0 and math.isfinite(bandwidth)):
        raise NumericalError(f"Bandwidth must be positive, got {bandwidth}", code="invalid_bandwidth")
    if not grid.covers(array):
        raise DataValidationError("Grid does not cover every point", code="grid_coverage")

    n = array.shape[0]
    norm = 1.0 / (n * 2.0 * math.pi * bandwidth * bandwidth)
    kx_chunks = [
        _axis_kernel(grid.x_centers, array[s:s + POINT_CHUNK, 0], bandwidth, cutoff_bandwidths)
        for s in range(0, n, POINT_CHUNK)
    ]
    y_centers = grid.y_centers

    def block(start: int) -> np.ndarray:
        rows = y_centers[start:start + ROW_BLOCK]
        out = np.zeros((rows.size, grid.n_cols), dtype=float)
        for c, s in enumerate(range(0, n, POINT_CHUNK)):
            ky = _axis_kernel(rows, array[s:s + POINT_CHUNK, 1], bandwidth, cutoff_bandwidths)
            out += ky @ kx_chunks[c].T
        return out

    starts = list(range(0, grid.n_rows, ROW_BLOCK))
    if n_jobs > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            blocks = list(pool.map(block, starts))
    else:
        blocks = [block(s) for s in starts]

    values = np.vstack(blocks) * norm
    np.maximum(values, 0.0, out=values)
    surface = DensitySurface(grid=grid, values=values, bandwidth=bandwidth, point_count=n)
    logger.info(f"KDE over {n} points on {grid.n_rows}x{grid.n_cols} grid "
                f"(h={bandwidth:.1f}, mass={surface.mass():.4f})")
    return surface


def cell_size_for_bandwidth(cell_size: float, bandwidth: float) -> float:
    """Configured cell size, shrunk to bandwidth/2 when the kernel is narrower than two cells"""
    return min(cell_size, bandwidth / MIN_CELLS_PER_BANDWIDTH)


def surface_for_points(
    points: Sequence[Tuple[float, float]],
    bandwidth: float,
    cell_size: float,
    pad_bandwidths: float = 4.0,
    cutoff_bandwidths: Optional[float] = None,
    n_jobs: int = 1
) -> DensitySurface:
    """
    KDE on a padded grid fine enough for the bandwidth, with a mass check

    Raises NumericalError (mass_out_of_range) when the surface does not hold
    between 0.95 and 1 of the kernel mass, and grid_too_large when the refined
    grid would exceed MAX_GRID_CELLS.
    """
    if not (bandwidth > 0 and math.isfinite(bandwidth)):
        raise NumericalError(f"Bandwidth must be positive, got {bandwidth}", code="invalid_bandwidth")
    cell = cell_size_for_bandwidth(cell_size, bandwidth)
    if cell < cell_size:
        logger.info(f"Cell size {cell_size:g} m refined to {cell:g} m for bandwidth {bandwidth:.1f} m")
    grid = grid_for_points(points, cell, pad_bandwidths * bandwidth)
    if grid.n_rows * grid.n_cols > MAX_GRID_CELLS:
        raise NumericalError(
            f"Grid of {grid.n_rows}x{grid.n_cols} cells at {cell:g} m exceeds {MAX_GRID_CELLS}; "
            f"raise the bandwidth", code="grid_too_large")

    surface = kde(points, bandwidth, grid, cutoff_bandwidths=cutoff_bandwidths, n_jobs=n_jobs)
    mass = surface.mass()
    low, high = MASS_RANGE
    if not low <= mass <= high:
        raise NumericalError(f"Surface mass {mass:.4f} outside [{low}, 1]", code="mass_out_of_range",
                             details={"mass": mass, "cell_size": cell, "bandwidth": bandwidth})
    return surface


def hotspots(surface: DensitySurface, quantile: float = 0.95) -> HotspotSet:
    """
    Cells at or above the quantile of positive-density cells, merged into
    polygons over 4-connected components
    """
    if not 0.0 <= quantile < 1.0:
        raise ConfigError(f"Hotspot quantile must be in [0, 1), got {quantile}", code="invalid_quantile")
    values = surface.values
    positive = values[values > 0.0]
    if positive.size == 0:
        raise NumericalError("Density surface is zero everywhere", code="degenerate_surface")

    threshold = float(np.quantile(positive, quantile))
    selected = (values >= threshold) & (values > 0.0)
    labels, n_components = ndimage.label(selected)

    result = HotspotSet(quantile=quantile, threshold=threshold, bandwidth=surface.bandwidth)
    rows, cols = np.nonzero(selected)
    result.cells = [(int(r), int(c)) for r, c in zip(rows, cols)]
    for component in range(1, n_components + 1):
        comp_rows, comp_cols = np.nonzero(labels == component)
        polygon = unary_union([surface.grid.cell_box(int(r), int(c)) for r, c in zip(comp_rows, comp_cols)])
        result.polygons.append(polygon)
        result.cell_counts.append(int(comp_rows.size))
        result.peaks.append(float(values[comp_rows, comp_cols].max()))

    logger.info(f"Hotspots at q={quantile}: {len(result.cells)} cells in {n_components} polygons")
    return result


def write_surface_csv(surface: DensitySurface, path: str):
    xs = surface.grid.x_centers
    ys = surface.grid.y_centers
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["x", "y", "density"])
        for r in range(surface.n_rows):
            for c in range(surface.n_cols):
                writer.writerow([repr(float(xs[c])), repr(float(ys[r])), repr(float(surface.values[r, c]))])


def hotspots_geojson(sets: Dict[str, HotspotSet]) -> Dict[str, Any]:
    features: List[Dict[str, Any]] = []
    for direction in sorted(sets):
        features.extend(sets[direction].features(direction))
    return {"type": "FeatureCollection", "features": features}


def write_hotspots_geojson(sets: Dict[str, HotspotSet], path: str, extra: Optional[Dict[str, Any]] = None):
    document = hotspots_geojson(sets)
    if extra:
        document["properties"] = extra
    with open(path, "w") as f:
        json.dump(document, f, indent=1, sort_keys=True)
