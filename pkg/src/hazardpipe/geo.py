"""Spatial aggregation of validated hazards: grid binning, kernel smoothing,
hotspot site extraction, and GeoJSON export.

The grid is a local equirectangular tiling of the configured region; at
island scale the distortion is negligible and the arithmetic stays exact
enough to test directly.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Optional, Sequence

from .core import GeoPoint, HazardPipeError, utc_now

EARTH_RADIUS_M = 6371008.8
METERS_PER_DEGREE = 2 * math.pi * EARTH_RADIUS_M / 360.0


class DegenerateRegion(HazardPipeError):
    """Region bbox has no area or covers no grid."""


def haversine(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters."""
    lat1, lat2 = math.radians(a.lat), math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class Region:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise DegenerateRegion(
                f"empty bbox ({self.lat_min},{self.lon_min})..({self.lat_max},{self.lon_max})"
            )

    @property
    def center_lat(self) -> float:
        return (self.lat_min + self.lat_max) / 2.0

    def contains(self, point: GeoPoint) -> bool:
        return (
            self.lat_min <= point.lat <= self.lat_max
            and self.lon_min <= point.lon <= self.lon_max
        )


@dataclass(frozen=True)
class GridCell:
    cell_id: tuple[int, int]
    bounds: tuple[float, float, float, float]  # lat_min, lat_max, lon_min, lon_max
    count: int
    smoothed: float

    @property
    def center(self) -> GeoPoint:
        return GeoPoint(
            (self.bounds[0] + self.bounds[1]) / 2.0,
            (self.bounds[2] + self.bounds[3]) / 2.0,
        )


@dataclass(frozen=True)
class HotspotSite:
    id: str
    member_cells: tuple[GridCell, ...]
    centroid: GeoPoint
    total_count: int
    discovered_at: datetime


@dataclass
class Grid:
    """Sparse count grid over a region at roughly resolution_m cell edge."""

    region: Region
    resolution_m: float
    n_rows: int
    n_cols: int
    counts: dict[tuple[int, int], int] = field(default_factory=dict)
    smoothed: dict[tuple[int, int], float] = field(default_factory=dict)
    overflow: int = 0  # points outside the region

    @classmethod
    def for_region(cls, region: Region, resolution_m: float) -> "Grid":
        if resolution_m <= 0:
            raise DegenerateRegion(f"resolution {resolution_m} must be positive")
        height_m = (region.lat_max - region.lat_min) * METERS_PER_DEGREE
        width_m = (
            (region.lon_max - region.lon_min)
            * METERS_PER_DEGREE
            * math.cos(math.radians(region.center_lat))
        )
        if width_m <= 0:
            raise DegenerateRegion("region collapses at this latitude")
        n_rows = max(1, math.ceil(height_m / resolution_m))
        n_cols = max(1, math.ceil(width_m / resolution_m))
        return cls(region=region, resolution_m=resolution_m, n_rows=n_rows, n_cols=n_cols)

    def cell_of(self, point: GeoPoint) -> Optional[tuple[int, int]]:
        """(row, col) of the containing cell, or None when outside the region."""
        if not self.region.contains(point):
            return None
        r = self.region
        row = int((point.lat - r.lat_min) / (r.lat_max - r.lat_min) * self.n_rows)
        col = int((point.lon - r.lon_min) / (r.lon_max - r.lon_min) * self.n_cols)
        return (min(row, self.n_rows - 1), min(col, self.n_cols - 1))

    def cell_bounds(self, cell: tuple[int, int]) -> tuple[float, float, float, float]:
        r = self.region
        dlat = (r.lat_max - r.lat_min) / self.n_rows
        dlon = (r.lon_max - r.lon_min) / self.n_cols
        row, col = cell
        return (
            r.lat_min + row * dlat,
            r.lat_min + (row + 1) * dlat,
            r.lon_min + col * dlon,
            r.lon_min + (col + 1) * dlon,
        )

    def cells(self) -> list[GridCell]:
        """Materialized non-empty cells (by count or smoothed mass)."""
        ids = sorted(set(self.counts) | set(self.smoothed))
        return [
            GridCell(
                cell_id=cid,
                bounds=self.cell_bounds(cid),
                count=self.counts.get(cid, 0),
                smoothed=self.smoothed.get(cid, float(self.counts.get(cid, 0))),
            )
            for cid in ids
        ]


def bin_points(points: Iterable[GeoPoint], region: Region, resolution_m: float = 250.0) -> Grid:
    """Count points per grid cell; outside points land in the overflow tally."""
    grid = Grid.for_region(region, resolution_m)
    for point in points:
        cell = grid.cell_of(point)
        if cell is None:
            grid.overflow += 1
        else:
            grid.counts[cell] = grid.counts.get(cell, 0) + 1
    return grid


def smooth(grid: Grid, kernel_radius_cells: int = 1) -> Grid:
    """Spread each cell's count over its Chebyshev neighborhood.

    Weight for offset (dr, dc) is 1 / (1 + dr^2 + dc^2); radius 0 keeps the
    raw counts.
    """
    if kernel_radius_cells < 0:
        raise HazardPipeError("kernel radius must be >= 0")
    grid.smoothed = {}
    if kernel_radius_cells == 0:
        grid.smoothed = {cid: float(c) for cid, c in grid.counts.items()}
        return grid
    radius = kernel_radius_cells
    for (row, col), count in grid.counts.items():
        for dr in range(-radius, radius + 1):
            for dc in range(-radius, radius + 1):
                target = (row + dr, col + dc)
                if not (0 <= target[0] < grid.n_rows and 0 <= target[1] < grid.n_cols):
                    continue
                weight = 1.0 / (1.0 + dr * dr + dc * dc)
                grid.smoothed[target] = grid.smoothed.get(target, 0.0) + count * weight
    return grid


def extract_sites(
    grid: Grid,
    site_threshold: float = 3.0,
    now: Optional[datetime] = None,
) -> list[HotspotSite]:
    """Group above-threshold cells into 4-connected hotspot sites.

    Site centroids are count-weighted means of member cell centers. A
    component whose raw counts sum below the threshold is halo-only noise
    and is dropped, keeping the total_count >= site_threshold invariant.
    """
    now = now or utc_now()
    hot = {cid for cid, v in grid.smoothed.items() if v >= site_threshold}
    seen: set[tuple[int, int]] = set()
    sites: list[HotspotSite] = []
    for start in sorted(hot):
        if start in seen:
            continue
        component = []
        stack = [start]
        seen.add(start)
        while stack:
            cell = stack.pop()
            component.append(cell)
            row, col = cell
            for neighbor in ((row - 1, col), (row + 1, col), (row, col - 1), (row, col + 1)):
                if neighbor in hot and neighbor not in seen:
                    seen.add(neighbor)
                    stack.append(neighbor)
        component.sort()
        members = tuple(
            GridCell(
                cell_id=cid,
                bounds=grid.cell_bounds(cid),
                count=grid.counts.get(cid, 0),
                smoothed=grid.smoothed[cid],
            )
            for cid in component
        )
        total = sum(m.count for m in members)
        if total < site_threshold:
            continue
        weight_sum = float(total)
        lat = sum(m.center.lat * m.count for m in members) / weight_sum
        lon = sum(m.center.lon * m.count for m in members) / weight_sum
        sites.append(
            HotspotSite(
                id=f"site-{component[0][0]}-{component[0][1]}",
                member_cells=members,
                centroid=GeoPoint(lat, lon),
                total_count=total,
                discovered_at=now,
            )
        )
    return sites


def _cell_polygon(cell: GridCell) -> list[list[float]]:
    lat0, lat1, lon0, lon1 = cell.bounds
    return [
        [lon0, lat0],
        [lon1, lat0],
        [lon1, lat1],
        [lon0, lat1],
        [lon0, lat0],
    ]


def export_geojson(
    cells: Sequence[GridCell] = (),
    sites: Sequence[HotspotSite] = (),
) -> dict:
    """RFC 7946 FeatureCollection: cells as Polygons, sites as Points."""
    features = []
    for cell in cells:
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [_cell_polygon(cell)]},
                "properties": {
                    "cell_id": list(cell.cell_id),
                    "count": cell.count,
                    "smoothed": cell.smoothed,
                },
            }
        )
    for site in sites:
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "Point",
                    "coordinates": [site.centroid.lon, site.centroid.lat],
                },
                "properties": {
                    "site_id": site.id,
                    "total_count": site.total_count,
                    "n_cells": len(site.member_cells),
                },
            }
        )
    return {"type": "FeatureCollection", "features": features}


def export_geojson_str(cells: Sequence[GridCell] = (), sites: Sequence[HotspotSite] = ()) -> str:
    return json.dumps(export_geojson(cells, sites), sort_keys=True)
