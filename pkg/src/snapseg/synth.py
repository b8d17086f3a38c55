"""Synthetic labeled scenes for benchmarks and tests.

Six classes on a square ground plane: terrain (0), vegetation blobs (1),
building boxes (2), thin free-standing walls (3), floating scatter (4),
and car-sized boxes (5). Surfaces are sampled uniformly by area with
deterministic counts, n = round(area * density), then perturbed by
Gaussian jitter, so one seed always yields one exact point count.
"""

import dataclasses
import hashlib

import numpy as np

from .scene_io import PointCloud

CLASS_NAMES = ("terrain", "vegetation", "building", "hardscape", "scatter", "car")

PALETTE = (
    (85, 170, 170),   # terrain
    (60, 170, 60),    # vegetation
    (230, 200, 60),   # building
    (230, 140, 40),   # hardscape
    (200, 60, 200),   # scatter
    (220, 50, 50),    # car
)


@dataclasses.dataclass
class SceneSpec:
    """Flat scalar knobs; round-trips through key=value text exactly."""

    seed: int = 0
    extent: float = 80.0
    jitter_sigma: float = 0.02
    terrain_density: float = 20.0
    building_count: int = 3
    building_min_size: float = 10.0
    building_max_size: float = 14.0
    building_min_height: float = 8.0
    building_max_height: float = 14.0
    building_density: float = 16.0
    vegetation_count: int = 10
    vegetation_min_radius: float = 2.0
    vegetation_max_radius: float = 2.6
    vegetation_density: float = 40.0
    vegetation_fuzz: float = 0.25
    wall_count: int = 6
    wall_min_length: float = 8.0
    wall_max_length: float = 14.0
    wall_min_height: float = 1.8
    wall_max_height: float = 2.6
    wall_thickness: float = 0.2
    wall_density: float = 24.0
    car_count: int = 5
    car_density: float = 24.0
    scatter_points: int = 2000
    scatter_height: float = 4.0
    falloff_enabled: bool = False
    falloff_radius: float = 30.0


def save_spec(spec, path):
    with open(path, "w") as fh:
        for f in dataclasses.fields(spec):
            fh.write(f"{f.name}={getattr(spec, f.name)}\n")


def load_spec(path):
    values = {}
    types = {f.name: f.type for f in dataclasses.fields(SceneSpec)}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in types:
                raise ValueError(f"{path}:{lineno}: unknown field {key!r}")
            t = types[key]
            raw = raw.strip()
            if t == "bool" or t is bool:
                values[key] = raw.lower() in ("true", "1", "yes")
            elif t == "int" or t is int:
                values[key] = int(raw)
            else:
                values[key] = float(raw)
    return SceneSpec(**values)


def _sample_face(rng, origin, u, v, density):
    area = float(np.linalg.norm(np.cross(u, v)))
    n = int(round(area * density))
    if n == 0:
        return np.empty((0, 3))
    r = rng.random((n, 2))
    return np.asarray(origin) + r[:, :1] * np.asarray(u) + r[:, 1:] * np.asarray(v)


def _box_faces(x0, y0, z0, x1, y1, z1):
    dx, dy, dz = x1 - x0, y1 - y0, z1 - z0
    return [
        ((x0, y0, z0), (dx, 0, 0), (0, 0, dz)),
        ((x0, y1, z0), (dx, 0, 0), (0, 0, dz)),
        ((x0, y0, z0), (0, dy, 0), (0, 0, dz)),
        ((x1, y0, z0), (0, dy, 0), (0, 0, dz)),
        ((x0, y0, z1), (dx, 0, 0), (0, dy, 0)),
    ]


def _sample_box(rng, x0, y0, z0, x1, y1, z1, density):
    parts = [
        _sample_face(rng, o, u, v, density)
        for o, u, v in _box_faces(x0, y0, z0, x1, y1, z1)
    ]
    return np.concatenate(parts) if parts else np.empty((0, 3))


def _clear_of(footprints, cx, cy, radius):
    for fx, fy, fr in footprints:
        if (cx - fx) ** 2 + (cy - fy) ** 2 < (radius + fr) ** 2:
            return False
    return True


def _place(rng, extent, footprints, radius, margin=2.0, tries=100):
    """Rejection-place a circular footprint; accept the last try regardless."""
    cx = cy = extent / 2.0
    for _ in range(tries):
        cx = radius + rng.random() * (extent - 2 * radius)
        cy = radius + rng.random() * (extent - 2 * radius)
        if _clear_of(footprints, cx, cy, radius + margin):
            break
    footprints.append((cx, cy, radius))
    return cx, cy


def generate(spec):
    """Build the labeled PointCloud a SceneSpec describes."""
    rng = np.random.default_rng(spec.seed)
    ex = float(spec.extent)
    parts = []
    footprints = []

    n_terrain = int(round(ex * ex * spec.terrain_density))
    terrain = np.zeros((n_terrain, 3))
    terrain[:, :2] = rng.random((n_terrain, 2)) * ex
    parts.append((terrain, 0))

    buildings = []
    for _ in range(spec.building_count):
        sx = spec.building_min_size + rng.random() * (
            spec.building_max_size - spec.building_min_size
        )
        sy = spec.building_min_size + rng.random() * (
            spec.building_max_size - spec.building_min_size
        )
        h = spec.building_min_height + rng.random() * (
            spec.building_max_height - spec.building_min_height
        )
        r = float(np.hypot(sx, sy) / 2.0)
        cx, cy = _place(rng, ex, footprints, r)
        pts = _sample_box(
            rng, cx - sx / 2, cy - sy / 2, 0.0, cx + sx / 2, cy + sy / 2, h,
            spec.building_density,
        )
        buildings.append(pts)
    if buildings:
        parts.append((np.concatenate(buildings), 2))

    blobs = []
    for _ in range(spec.vegetation_count):
        r = spec.vegetation_min_radius + rng.random() * (
            spec.vegetation_max_radius - spec.vegetation_min_radius
        )
        cx, cy = _place(rng, ex, footprints, r, margin=1.0)
        cz = r + 0.6  # canopy floats a little above the ground
        area = 4.0 * np.pi * r * r
        n = int(round(area * spec.vegetation_density))
        dirs = rng.standard_normal((n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = r * (1.0 + spec.vegetation_fuzz * rng.standard_normal(n))
        blobs.append(np.array([cx, cy, cz]) + dirs * radii[:, None])
    if blobs:
        parts.append((np.concatenate(blobs), 1))

    walls = []
    for _ in range(spec.wall_count):
        length = spec.wall_min_length + rng.random() * (
            spec.wall_max_length - spec.wall_min_length
        )
        h = spec.wall_min_height + rng.random() * (
            spec.wall_max_height - spec.wall_min_height
        )
        cx, cy = _place(rng, ex, footprints, length / 2.0, margin=1.0)
        theta = rng.random() * np.pi
        u = np.array([np.cos(theta), np.sin(theta), 0.0]) * length
        nvec = np.array([-np.sin(theta), np.cos(theta), 0.0])
        base = np.array([cx, cy, 0.0]) - u / 2.0
        half_t = spec.wall_thickness / 2.0
        for side in (-1.0, 1.0):
            walls.append(_sample_face(
                rng, base + side * half_t * nvec, u, (0.0, 0.0, h),
                spec.wall_density,
            ))
    if walls:
        parts.append((np.concatenate(walls), 3))

    if spec.scatter_points:
        sc = np.empty((int(spec.scatter_points), 3))
        sc[:, :2] = rng.random((int(spec.scatter_points), 2)) * ex
        sc[:, 2] = 0.5 + rng.random(int(spec.scatter_points)) * spec.scatter_height
        parts.append((sc, 4))

    cars = []
    for _ in range(spec.car_count):
        s = 0.9 + rng.random() * 0.2
        lx, ly, lz = 4.2 * s, 1.8 * s, 1.5 * s
        r = float(np.hypot(lx, ly) / 2.0)
        cx, cy = _place(rng, ex, footprints, r, margin=1.0)
        cars.append(_sample_box(
            rng, cx - lx / 2, cy - ly / 2, 0.25, cx + lx / 2, cy + ly / 2,
            0.25 + lz, spec.car_density,
        ))
    if cars:
        parts.append((np.concatenate(cars), 5))

    positions = np.concatenate([p for p, _ in parts])
    labels = np.concatenate([
        np.full(p.shape[0], cid, dtype=np.int64) for p, cid in parts
    ])
    positions = positions + rng.normal(0.0, spec.jitter_sigma, positions.shape)

    if spec.falloff_enabled:
        center = np.array([ex / 2.0, ex / 2.0])
        d = np.linalg.norm(positions[:, :2] - center, axis=1)
        keep_p = 1.0 / (1.0 + (d / spec.falloff_radius) ** 2)
        keep = rng.random(positions.shape[0]) < keep_p
        positions, labels = positions[keep], labels[keep]

    return PointCloud(positions, labels, len(CLASS_NAMES), CLASS_NAMES)


def scene_digest(cloud):
    """sha256 over coordinates and labels; equal scenes hash equal."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(cloud.positions).tobytes())
    if cloud.labels is not None:
        h.update(np.ascontiguousarray(cloud.labels).tobytes())
    return h.hexdigest()
