"""Triangle meshes: OBJ parsing, normalization, and view-driven rotation.

Meshes are plain vertex/face arrays.  Only the geometry subset of Wavefront
OBJ is understood (`v` and `f` records); faces with more than three vertices
are fan-triangulated at load time so everything downstream sees triangles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .codes import ViewCode
from .errors import DegenerateMesh, EmptyMesh, IndexOutOfRange, MalformedRecord

MIN_FACE_AREA = 1e-9


@dataclass(frozen=True)
class TriangleMesh:
    """Immutable triangle mesh: (V, 3) float64 vertices, (F, 3) int64 faces."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"faces must be (F, 3), got {f.shape}")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def vertex_count(self) -> int:
        return self.vertices.shape[0]

    @property
    def face_count(self) -> int:
        return self.faces.shape[0]

    def face_areas(self) -> np.ndarray:
        tri = self.vertices[self.faces]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def validate(self):
        """Check the structural invariants (indices in range, no zero-area faces)."""
        if self.face_count == 0:
            raise EmptyMesh("mesh has no faces")
        if self.faces.min(initial=0) < 0 or self.faces.max(initial=-1) >= self.vertex_count:
            raise IndexOutOfRange(
                f"face index out of range for {self.vertex_count} vertices"
            )
        areas = self.face_areas()
        if np.any(areas <= MIN_FACE_AREA):
            bad = int(np.argmin(areas))
            raise DegenerateMesh(f"face {bad} has area {areas[bad]:.3e}")


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera on the +z axis, y up, principal point in pixels."""

    image_width: int = 64
    image_height: int = 64
    focal_length: float = 48.0
    principal_point: tuple[float, float] = (32.0, 32.0)
    camera_distance: float = 3.0
    near: float = 1.0
    far: float = 5.0

    def __post_init__(self):
        if not (0.0 < self.near < self.far):
            raise ValueError(f"need 0 < near < far, got {self.near}, {self.far}")
        if self.camera_distance <= 1.0:
            raise ValueError("camera_distance must exceed 1.0 (unit mesh radius)")
        px, py = self.principal_point
        if not (0.0 <= px <= self.image_width and 0.0 <= py <= self.image_height):
            raise ValueError("principal point outside the image rectangle")


def load_obj(path) -> TriangleMesh:
    """Parse the v/f subset of a Wavefront OBJ file.

    Indices are 1-based (negative indices count from the end); polygons with
    more than three vertices are fan-triangulated.  Normals, texture
    coordinates, and materials are ignored.
    """
    path = Path(path)
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MalformedRecord(path, line_no, raw.rstrip("\n"))
                try:
                    vertices.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise MalformedRecord(path, line_no, raw.rstrip("\n")) from None
            elif tag == "f":
                try:
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                except ValueError:
                    raise MalformedRecord(path, line_no, raw.rstrip("\n")) from None
                if len(idx) < 3:
                    raise MalformedRecord(path, line_no, raw.rstrip("\n"))
                resolved = []
                for i in idx:
                    if i == 0:
                        raise MalformedRecord(path, line_no, raw.rstrip("\n"))
                    resolved.append(i - 1 if i > 0 else len(vertices) + i)
                for a, b in zip(resolved[1:-1], resolved[2:]):
                    faces.append([resolved[0], a, b])
            elif tag in ("vn", "vt", "s", "o", "g", "usemtl", "mtllib"):
                continue
            else:
                raise MalformedRecord(path, line_no, raw.rstrip("\n"))
    if not faces:
        raise EmptyMesh(f"{path}: no faces")
    farr = np.asarray(faces, dtype=np.int64)
    if farr.min() < 0 or farr.max() >= len(vertices):
        raise IndexOutOfRange(
            f"{path}: face references vertex {farr.max() + 1} of {len(vertices)}"
        )
    mesh = TriangleMesh(np.asarray(vertices, dtype=np.float64), farr)
    mesh.validate()
    return mesh


def save_obj(mesh: TriangleMesh, path) -> None:
    """Write a mesh back out as `v`/`f` records (1-based indices)."""
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def normalize_mesh(mesh: TriangleMesh) -> TriangleMesh:
    """Center the bounding box at the origin and scale the largest extent to 2.

    The result fits [-1, 1]^3 with at least one axis touching the bounds.
    """
    if mesh.vertex_count == 0:
        raise EmptyMesh("cannot normalize an empty mesh")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise DegenerateMesh("mesh has zero extent along all axes")
    center = (hi + lo) / 2.0
    scaled = (mesh.vertices - center) * (2.0 / extent)
    return replace(mesh, vertices=scaled)


def rotation_from_view(view: ViewCode) -> np.ndarray:
    """Rotation matrix for a view code: yaw about +y first, then pitch about +x."""
    ct, st = math.cos(view.azimuth), math.sin(view.azimuth)
    cp, sp = math.cos(view.elevation), math.sin(view.elevation)
    yaw = np.array([[ct, 0.0, st], [0.0, 1.0, 0.0], [-st, 0.0, ct]])
    pitch = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    return pitch @ yaw


def _box(center, half, start_index):
    cx, cy, cz = center
    hx, hy, hz = half
    verts = np.array(
        [
            [cx - hx, cy - hy, cz - hz],
            [cx + hx, cy - hy, cz - hz],
            [cx + hx, cy + hy, cz - hz],
            [cx - hx, cy + hy, cz - hz],
            [cx - hx, cy - hy, cz + hz],
            [cx + hx, cy - hy, cz + hz],
            [cx + hx, cy + hy, cz + hz],
            [cx - hx, cy + hy, cz + hz],
        ]
    )
    quads = [
        (0, 1, 2, 3),  # back (-z)
        (5, 4, 7, 6),  # front (+z)
        (4, 0, 3, 7),  # left
        (1, 5, 6, 2),  # right
        (3, 2, 6, 7),  # top
        (4, 5, 1, 0),  # bottom
    ]
    return verts, _quads_to_outward_faces(verts, quads, start_index)


def _wedge(x0, x1, y0, y1, z_back, z_front, z_peak, start_index):
    """Closed cabin prism: rectangular base, sloped windshield toward +z."""
    verts = np.array(
        [
            [x0, y0, z_back],   # 0 base back-left
            [x1, y0, z_back],   # 1 base back-right
            [x1, y0, z_front],  # 2 base front-right
            [x0, y0, z_front],  # 3 base front-left
            [x0, y1, z_back],   # 4 roof back-left
            [x1, y1, z_back],   # 5 roof back-right
            [x1, y1, z_peak],   # 6 roof front-right
            [x0, y1, z_peak],   # 7 roof front-left
        ]
    )
    quads = [
        (0, 1, 5, 4),  # back wall
        (3, 2, 1, 0),  # base
        (4, 5, 6, 7),  # roof
        (2, 3, 7, 6),  # windshield slope
        (0, 4, 7, 3),  # left wall
        (1, 2, 6, 5),  # right wall
    ]
    return verts, _quads_to_outward_faces(verts, quads, start_index)


def _quads_to_outward_faces(verts, quads, start_index):
    """Split quads into triangles wound so normals point away from the centroid."""
    center = verts.mean(axis=0)
    faces = []
    for quad in quads:
        for tri in ((quad[0], quad[1], quad[2]), (quad[0], quad[2], quad[3])):
            p0, p1, p2 = (verts[i] for i in tri)
            normal = np.cross(p1 - p0, p2 - p0)
            if np.dot(normal, (p0 + p1 + p2) / 3.0 - center) < 0:
                tri = (tri[0], tri[2], tri[1])
            faces.append([i + start_index for i in tri])
    return faces


@lru_cache(maxsize=256)
def _car_mesh_cached(seed, dims_key):
    rng = np.random.default_rng(seed)
    (l_lo, l_hi), (w_lo, w_hi), (h_lo, h_hi) = dims_key
    length = rng.uniform(l_lo, l_hi)
    width = rng.uniform(w_lo, w_hi)
    height = rng.uniform(h_lo, h_hi)

    body_h = 0.45 * height
    # Body box: forward axis +z, up +y, ground plane at y = 0.
    v_body, f_body = _box(
        (0.0, body_h / 2.0, 0.0), (width / 2.0, body_h / 2.0, length / 2.0), 0
    )
    # Cabin sits rear of center and slopes toward the front, so the
    # silhouette differs front vs back and yaw is visually unambiguous.
    cab_w = 0.82 * width
    cab_back = -0.46 * length
    cab_front = 0.22 * length
    cab_peak = 0.02 * length
    v_cab, f_cab = _wedge(
        -cab_w / 2.0, cab_w / 2.0, body_h * 0.98, height,
        cab_back, cab_front, cab_peak, 8,
    )
    # Hood block at the very front, lower than the body roofline, to break
    # the remaining front/back symmetry of the box outline.
    v_hood, f_hood = _box(
        (0.0, body_h * 0.55, 0.44 * length),
        (0.34 * width, body_h * 0.18, 0.07 * length),
        16,
    )
    mesh = TriangleMesh(
        np.concatenate([v_body, v_cab, v_hood], axis=0),
        np.asarray(f_body + f_cab + f_hood, dtype=np.int64),
    )
    mesh = normalize_mesh(mesh)
    mesh.validate()
    return mesh


def procedural_car_mesh(
    seed: int,
    length_range: tuple[float, float] = (1.8, 2.3),
    width_range: tuple[float, float] = (0.78, 0.95),
    height_range: tuple[float, float] = (0.55, 0.72),
) -> TriangleMesh:
    """Deterministic boxy car (body + cabin wedge + hood), normalized.

    The same seed and jitter ranges always return the identical mesh.
    """
    for lo, hi in (length_range, width_range, height_range):
        if not (0.0 < lo <= hi):
            raise ValueError("jitter ranges must be positive and ordered")
    key = (tuple(length_range), tuple(width_range), tuple(height_range))
    return _car_mesh_cached(int(seed), key)
