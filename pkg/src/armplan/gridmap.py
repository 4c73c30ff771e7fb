"""Scene ingestion, voxel occupancy, and Euclidean distance fields.

The perception stand-in is purely geometric: z-threshold filtering above the
table plane, solid-extrusion occlusion completion down to the table, then
voxelization and an exact Euclidean distance transform for planning queries.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import yaml
from scipy import ndimage

from .geometry import ObstacleSphere


class OutOfBounds(ValueError):
    pass


@dataclass(frozen=True)
class VoxelGrid:
    origin: np.ndarray      # (3,) m, low corner of voxel (0,0,0)
    resolution: float       # m per voxel
    occupancy: np.ndarray   # bool, shape dims

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        if self.resolution <= 0:
            raise ValueError("resolution must be > 0")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.occupancy.shape


@dataclass(frozen=True)
class DistanceField:
    origin: np.ndarray
    resolution: float
    distances: np.ndarray  # float64, same lattice as the source grid, m

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.distances.shape


def filter_above_table(cloud: np.ndarray, table_z: float, eps: float = 0.0) -> np.ndarray:
    """Keep points strictly above table_z + eps (removes table plane and
    background below it)."""
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    return cloud[cloud[:, 2] > table_z + eps]


def complete_occlusion(cloud: np.ndarray, table_z: float, resolution: float) -> np.ndarray:
    """Solid-extrusion completion: for each occupied (x, y) column at voxel
    resolution, fill from the table plane up to the column's max observed z.
    The input points are always retained (superset)."""
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(cloud) == 0:
        return cloud.copy()
    cols = np.floor(cloud[:, :2] / resolution).astype(np.int64)
    filled = [cloud]
    # max observed z per column
    col_max: dict[tuple[int, int], float] = {}
    for (cx, cy), z in zip(map(tuple, cols), cloud[:, 2]):
        if (cx, cy) not in col_max or z > col_max[(cx, cy)]:
            col_max[(cx, cy)] = z
    for (cx, cy), zmax in col_max.items():
        n = int(np.ceil((zmax - table_z) / resolution))
        if n <= 0:
            continue
        x = (cx + 0.5) * resolution
        y = (cy + 0.5) * resolution
        zs = table_z + (np.arange(n) + 0.5) * resolution
        pts = np.column_stack([np.full(n, x), np.full(n, y), zs])
        filled.append(pts)
    return np.vstack(filled)


def voxelize(cloud: np.ndarray, origin, resolution: float, dims) -> tuple[VoxelGrid, int]:
    """Bin points into a dense occupancy lattice with half-open voxel
    intervals [origin + i*res, origin + (i+1)*res). Returns the grid plus a
    count of ignored out-of-bounds points."""
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    origin = np.asarray(origin, dtype=float)
    dims = tuple(int(d) for d in dims)
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    occ = np.zeros(dims, dtype=bool)
    dropped = 0
    if len(cloud):
        idx = np.floor((cloud - origin) / resolution).astype(np.int64)
        inb = np.all((idx >= 0) & (idx < np.array(dims)), axis=1)
        dropped = int(np.sum(~inb))
        idx = idx[inb]
        occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return VoxelGrid(origin=origin, resolution=resolution, occupancy=occ), dropped


def voxelize_spheres(spheres, origin, resolution: float, dims) -> VoxelGrid:
    """Occupancy from analytic spheres: a voxel is occupied iff its center
    lies inside any sphere."""
    origin = np.asarray(origin, dtype=float)
    dims = tuple(int(d) for d in dims)
    occ = np.zeros(dims, dtype=bool)
    axes = [origin[k] + (np.arange(dims[k]) + 0.5) * resolution for k in range(3)]
    X, Y, Z = np.meshgrid(*axes, indexing="ij")
    for s in spheres:
        occ |= ((X - s.center[0]) ** 2 + (Y - s.center[1]) ** 2
                + (Z - s.center[2]) ** 2) <= s.radius ** 2
    return VoxelGrid(origin=origin, resolution=resolution, occupancy=occ)


def compute_edf(grid: VoxelGrid) -> DistanceField:
    """Exact Euclidean distance (m) to the nearest occupied voxel center.
    An all-free grid yields +inf everywhere."""
    if not grid.occupancy.any():
        d = np.full(grid.dims, np.inf)
    else:
        d = ndimage.distance_transform_edt(~grid.occupancy, sampling=grid.resolution)
    return DistanceField(origin=grid.origin, resolution=grid.resolution, distances=d)


def _cell_coords(field: DistanceField, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Voxel-center-based interpolation cell: integer base index and fractional
    offset, clamped so all 8 corners are valid lattice nodes."""
    u = (p - field.origin) / field.resolution - 0.5
    dims = np.array(field.dims)
    i = np.floor(u).astype(np.int64)
    i = np.clip(i, 0, dims - 2)
    f = np.clip(u - i, 0.0, 1.0)
    return i, f


def _lerp(a, b, t):
    """Linear blend that keeps 0 * inf from poisoning exact-endpoint queries
    on an all-free (everywhere-infinite) field."""
    with np.errstate(invalid="ignore"):
        return np.where(t == 0.0, a, np.where(t == 1.0, b, a * (1.0 - t) + b * t))


def query_distance(field: DistanceField, p) -> float:
    """Trilinear interpolation of the 8 voxel distances surrounding p."""
    p = np.asarray(p, dtype=float)
    lo = field.origin
    hi = field.origin + np.array(field.dims) * field.resolution
    if np.any(p < lo) or np.any(p > hi):
        raise OutOfBounds(f"point {p} outside grid bounds")
    i, f = _cell_coords(field, p)
    d = field.distances[i[0]:i[0] + 2, i[1]:i[1] + 2, i[2]:i[2] + 2]
    cx = _lerp(d[0], d[1], f[0])
    cy = _lerp(cx[0], cx[1], f[1])
    return float(_lerp(cy[0], cy[1], f[2]))


def query_distance_grad(field: DistanceField, p) -> tuple[float, np.ndarray]:
    """Trilinear value and its (piecewise-constant-per-cell) analytic gradient."""
    p = np.asarray(p, dtype=float)
    i, f = _cell_coords(field, p)
    d = field.distances[i[0]:i[0] + 2, i[1]:i[1] + 2, i[2]:i[2] + 2]
    if np.isinf(d).all():
        return float("inf"), np.zeros(3)
    fx, fy, fz = f
    # interpolate down axis by axis, keeping partials
    c00 = d[0, 0] * (1 - fx) + d[1, 0] * fx  # (2,) over z at y=0
    c01 = d[0, 1] * (1 - fx) + d[1, 1] * fx
    gx00 = d[1, 0] - d[0, 0]
    gx01 = d[1, 1] - d[0, 1]
    c0 = c00 * (1 - fy) + c01 * fy
    gx0 = gx00 * (1 - fy) + gx01 * fy
    gy0 = c01 - c00
    val = c0[0] * (1 - fz) + c0[1] * fz
    gx = gx0[0] * (1 - fz) + gx0[1] * fz
    gy = gy0[0] * (1 - fz) + gy0[1] * fz
    gz = c0[1] - c0[0]
    return float(val), np.array([gx, gy, gz]) / field.resolution


def query_distance_many(field: DistanceField, pts: np.ndarray) -> np.ndarray:
    """Vectorized trilinear query; out-of-bounds points return -inf so callers
    can treat them as unusable."""
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    lo = field.origin
    hi = field.origin + np.array(field.dims) * field.resolution
    inb = np.all((pts >= lo) & (pts <= hi), axis=1)
    out = np.full(len(pts), -np.inf)
    if not inb.any():
        return out
    p = pts[inb]
    u = (p - field.origin) / field.resolution - 0.5
    dims = np.array(field.dims)
    i = np.clip(np.floor(u).astype(np.int64), 0, dims - 2)
    f = np.clip(u - i, 0.0, 1.0)
    d = field.distances
    ix, iy, iz = i[:, 0], i[:, 1], i[:, 2]
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    c00 = _lerp(d[ix, iy, iz], d[ix + 1, iy, iz], fx)
    c10 = _lerp(d[ix, iy + 1, iz], d[ix + 1, iy + 1, iz], fx)
    c01 = _lerp(d[ix, iy, iz + 1], d[ix + 1, iy, iz + 1], fx)
    c11 = _lerp(d[ix, iy + 1, iz + 1], d[ix + 1, iy + 1, iz + 1], fx)
    c0 = _lerp(c00, c10, fy)
    c1 = _lerp(c01, c11, fy)
    out[inb] = _lerp(c0, c1, fz)
    return out


def query_occupied(grid: VoxelGrid, p) -> bool:
    """Occupancy of the voxel containing p; out-of-grid points count as free."""
    idx = np.floor((np.asarray(p, dtype=float) - grid.origin) / grid.resolution).astype(np.int64)
    if np.any(idx < 0) or np.any(idx >= np.array(grid.dims)):
        return False
    return bool(grid.occupancy[idx[0], idx[1], idx[2]])


def query_occupied_many(grid: VoxelGrid, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    idx = np.floor((pts - grid.origin) / grid.resolution).astype(np.int64)
    inb = np.all((idx >= 0) & (idx < np.array(grid.dims)), axis=1)
    out = np.zeros(len(pts), dtype=bool)
    ii = idx[inb]
    out[inb] = grid.occupancy[ii[:, 0], ii[:, 1], ii[:, 2]]
    return out


# ---------------------------------------------------------------------------
# file I/O

def load_ply(path) -> np.ndarray:
    """ASCII PLY with x y z vertex properties."""
    with open(path) as f:
        line = f.readline().strip()
        if line != "ply":
            raise ValueError("not a PLY file")
        n_vertices = 0
        while True:
            line = f.readline()
            if not line:
                raise ValueError("unterminated PLY header")
            line = line.strip()
            if line.startswith("element vertex"):
                n_vertices = int(line.split()[-1])
            if line == "end_header":
                break
        pts = np.loadtxt(f, max_rows=n_vertices, ndmin=2)
    return pts[:, :3].astype(float)


def load_xyz_csv(path) -> np.ndarray:
    """CSV with one x,y,z row per point; a non-numeric header row is skipped."""
    rows = []
    with open(path) as f:
        for row in csv.reader(f):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row[:3]])
            except ValueError:
                continue  # header
    return np.array(rows, dtype=float).reshape(-1, 3)


def load_scene(path) -> list[ObstacleSphere]:
    """Obstacle list from YAML: obstacles: [{center: [x,y,z], radius: r}, ...]."""
    with open(path) as f:
        doc = yaml.safe_load(f)
    return [ObstacleSphere(center=np.array(o["center"], dtype=float), radius=float(o["radius"]))
            for o in doc.get("obstacles", [])]


def dump_occupancy(grid: VoxelGrid, path) -> None:
    """Raw occupancy dump: text header line 'nx ny nz ox oy oz res' then
    row-major bytes (1 occupied / 0 free)."""
    with open(path, "wb") as f:
        hdr = "{} {} {} {} {} {} {}\n".format(*grid.dims, *grid.origin, grid.resolution)
        f.write(hdr.encode())
        f.write(np.ascontiguousarray(grid.occupancy, dtype=np.uint8).tobytes())


def load_occupancy(path) -> VoxelGrid:
    with open(path, "rb") as f:
        hdr = f.readline().split()
        dims = tuple(int(v) for v in hdr[:3])
        origin = np.array([float(v) for v in hdr[3:6]])
        res = float(hdr[6])
        occ = np.frombuffer(f.read(), dtype=np.uint8).reshape(dims).astype(bool)
    return VoxelGrid(origin=origin, resolution=res, occupancy=occ)
