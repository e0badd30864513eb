"""Depth rendering of triangle meshes under a view code.

Two renderers share one projection model (pinhole camera on the +z axis):

* :func:`render_depth_hard` -- classic z-buffer rasterization, used as the
  reference for tests and for composition, where no gradients are needed.
* :func:`render_depth_soft` / :func:`soft_depth_image` -- a soft rasterizer
  whose output is differentiable w.r.t. the view angles.  Pixel coverage is
  a sigmoid of the signed pixel-to-edge distance (in pixels) and the depth
  per pixel is a softmin over candidate faces; both temperatures are tied to
  one `sharpness` knob, so the soft image converges to the hard one away
  from silhouette edges as sharpness grows.

Background pixels are exactly 0; hit pixels carry depth in model units
within [near, far].  For network input, depths are affinely remapped so
that nearer surfaces are larger and background stays 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from .codes import ViewCode
from .errors import DegenerateView
from .mesh3d import CameraModel, TriangleMesh, rotation_from_view

_FACE_CHUNK = 512
_BG_LOGIT = -1e9


@dataclass(frozen=True)
class DepthMap:
    """Single-channel depth image; 0 marks background, else model units."""

    values: np.ndarray
    near: float
    far: float

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float32))
        if v.ndim != 2:
            raise ValueError(f"depth values must be 2-D, got {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def normalized(self) -> np.ndarray:
        """Map nonzero depths to (0, 1] with nearer = larger; background 0."""
        return normalize_depth(self.values, self.near, self.far)


def normalize_depth(values, near: float, far: float):
    """Affine depth-to-unit mapping (far -> ~0, near -> 1), works on numpy or torch."""
    if isinstance(values, torch.Tensor):
        scaled = (far - values) / (far - near)
        return torch.where(
            values > 0, scaled.clamp(min=1e-4, max=1.0), torch.zeros_like(scaled)
        )
    values = np.asarray(values, dtype=np.float32)
    scaled = (far - values) / (far - near)
    return np.where(values > 0, np.clip(scaled, 1e-4, 1.0), 0.0).astype(np.float32)


def silhouette_mask(depth: DepthMap) -> np.ndarray:
    """Binary mask of rendered pixels (depth > 0)."""
    return (depth.values > 0).astype(np.float32)


def _pixel_centers(camera: CameraModel) -> np.ndarray:
    xs = np.arange(camera.image_width, dtype=np.float64) + 0.5
    ys = np.arange(camera.image_height, dtype=np.float64) + 0.5
    u, v = np.meshgrid(xs, ys)
    return np.stack([u.ravel(), v.ravel()], axis=1)


def _project_vertices(mesh: TriangleMesh, view: ViewCode, camera: CameraModel):
    rot = rotation_from_view(view)
    cam = mesh.vertices @ rot.T
    cam = cam + np.array([0.0, 0.0, camera.camera_distance])
    z = cam[:, 2]
    px, py = camera.principal_point
    safe_z = np.where(np.abs(z) < 1e-9, 1e-9, z)
    u = px + camera.focal_length * cam[:, 0] / safe_z
    v = py - camera.focal_length * cam[:, 1] / safe_z
    return np.stack([u, v], axis=1), z


def render_depth_hard(mesh: TriangleMesh, view: ViewCode, camera: CameraModel) -> DepthMap:
    """Z-buffer rasterization: nearest hit per pixel center, 0 where none."""
    screen, z = _project_vertices(mesh, view, camera)
    pixels = _pixel_centers(camera)
    n_pix = pixels.shape[0]
    best = np.full(n_pix, np.inf)

    faces = mesh.faces
    for start in range(0, faces.shape[0], _FACE_CHUNK):
        f = faces[start : start + _FACE_CHUNK]
        tz = z[f]  # (F, 3)
        keep = np.all(tz > 1e-6, axis=1)
        if not np.any(keep):
            continue
        f = f[keep]
        tz = tz[keep]
        tri = screen[f]  # (F, 3, 2)

        a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
        # Edge functions; w_a pairs with vertex a (opposite edge b->c), etc.
        p = pixels[None, :, :]  # (1, P, 2)
        w_a = _cross2(c - b, p - b[:, None, :])
        w_b = _cross2(a - c, p - c[:, None, :])
        w_c = _cross2(b - a, p - a[:, None, :])
        area2 = _cross2(b - a, (c - a)[:, None, :])[:, 0]  # (F,)
        nz = np.abs(area2) > 1e-12
        if not np.any(nz):
            continue
        w_a, w_b, w_c = w_a[nz], w_b[nz], w_c[nz]
        area2 = area2[nz]
        tz = tz[nz]

        sgn = np.sign(area2)[:, None]
        inside = (w_a * sgn >= 0) & (w_b * sgn >= 0) & (w_c * sgn >= 0)

        la = w_a / area2[:, None]
        lb = w_b / area2[:, None]
        lc = w_c / area2[:, None]
        zinv = la / tz[:, 0:1] + lb / tz[:, 1:2] + lc / tz[:, 2:3]
        with np.errstate(divide="ignore", over="ignore"):
            depth = 1.0 / zinv
        valid = inside & (depth >= camera.near) & (depth <= camera.far)
        depth = np.where(valid, depth, np.inf)
        best = np.minimum(best, depth.min(axis=0))

    out = np.where(np.isfinite(best), best, 0.0).reshape(
        camera.image_height, camera.image_width
    )
    return DepthMap(out.astype(np.float32), camera.near, camera.far)


def _cross2(e, d):
    # e: (F, 2) edge vectors, d: (F, P, 2) pixel offsets -> (F, P)
    return e[:, None, 0] * d[..., 1] - e[:, None, 1] * d[..., 0]


def _raster_topology(vertices: np.ndarray, faces: np.ndarray):
    """Group faces into coplanar edge-connected patches.

    Returns (seam_mask (F, 3), patch_id (F,), n_patches).  A seam is an edge
    shared with a coplanar neighbor: a tessellation artifact, not a surface
    boundary.  Patches are rasterized as units so that coverage and depth
    stay continuous across seams.
    """
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64)
    n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    n = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
    edge_map: dict[frozenset, list[tuple[int, int]]] = {}
    for fi, (a, b, c) in enumerate(f):
        for k, (p, q) in enumerate(((a, b), (b, c), (c, a))):
            edge_map.setdefault(frozenset((int(p), int(q))), []).append((fi, k))

    parent = list(range(f.shape[0]))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    seam = np.zeros((f.shape[0], 3), dtype=bool)
    for members in edge_map.values():
        if len(members) < 2:
            continue
        for fi, ki in members:
            for fj, _ in members:
                if fj != fi and abs(float(n[fi] @ n[fj])) > 1.0 - 1e-4:
                    seam[fi, ki] = True
                    ra, rb = find(fi), find(fj)
                    if ra != rb:
                        parent[ra] = rb
    roots = [find(i) for i in range(f.shape[0])]
    ids = {}
    patch_id = np.empty(f.shape[0], dtype=np.int64)
    for i, r in enumerate(roots):
        patch_id[i] = ids.setdefault(r, len(ids))
    return seam, patch_id, len(ids)


def _rotation_batch(angles: torch.Tensor) -> torch.Tensor:
    """Differentiable (B, 3, 3) rotation stack: pitch(el) @ yaw(az)."""
    az, el = angles[:, 0], angles[:, 1]
    ct, st = torch.cos(az), torch.sin(az)
    cp, sp = torch.cos(el), torch.sin(el)
    zero = torch.zeros_like(ct)
    one = torch.ones_like(ct)
    yaw = torch.stack(
        [ct, zero, st, zero, one, zero, -st, zero, ct], dim=1
    ).reshape(-1, 3, 3)
    pitch = torch.stack(
        [one, zero, zero, zero, cp, -sp, zero, sp, cp], dim=1
    ).reshape(-1, 3, 3)
    return pitch @ yaw


def soft_depth_image(
    vertices: torch.Tensor,
    faces: np.ndarray,
    angles: torch.Tensor,
    camera: CameraModel,
    sharpness: float = 50.0,
    cull_backfaces: bool = False,
) -> torch.Tensor:
    """Differentiable batched soft depth render.

    Args:
        vertices: (V, 3) or (B, V, 3) float tensor in model units.
        faces: (F, 3) integer array, shared across the batch.
        angles: (B, 2) tensor of (azimuth, elevation); gradients flow to it.
        camera: projection model.
        sharpness: edge-sigmoid and depth-softmin temperature, > 0.
        cull_backfaces: drop camera-averted faces; only valid for closed
            meshes with consistent outward winding (the procedural car is).

    Returns:
        (B, H, W) depth tensor; background exactly 0 when no face survives
        culling, asymptotically 0 elsewhere outside the silhouette.
    """
    if sharpness <= 0:
        raise ValueError("sharpness must be positive")
    if angles.ndim != 2 or angles.shape[1] != 2:
        raise ValueError(f"angles must be (B, 2), got {tuple(angles.shape)}")
    batch = angles.shape[0]
    dtype = angles.dtype if angles.dtype in (torch.float32, torch.float64) else torch.float32
    if vertices.ndim == 2:
        vertices = vertices.unsqueeze(0).expand(batch, -1, -1)
    verts = vertices.to(dtype)

    rot = _rotation_batch(angles.to(dtype))
    cam = torch.einsum("bij,bvj->bvi", rot, verts)
    cam = cam + cam.new_tensor([0.0, 0.0, camera.camera_distance])
    z_all = cam[..., 2]
    safe_z = torch.where(z_all.abs() < 1e-9, torch.full_like(z_all, 1e-9), z_all)
    px, py = camera.principal_point
    u = px + camera.focal_length * cam[..., 0] / safe_z
    v = py - camera.focal_length * cam[..., 1] / safe_z
    screen = torch.stack([u, v], dim=-1)  # (B, V, 2)

    f_idx = torch.as_tensor(np.asarray(faces, dtype=np.int64))
    tri = screen[:, f_idx]  # (B, F, 3, 2)
    tz = z_all[:, f_idx]  # (B, F, 3)

    in_range = (tz > camera.near).all(dim=-1) & (tz < camera.far).all(dim=-1)
    margin = max(4.0, 40.0 / sharpness)
    on_screen = (
        (tri[..., 0].amax(dim=-1) > -margin)
        & (tri[..., 0].amin(dim=-1) < camera.image_width + margin)
        & (tri[..., 1].amax(dim=-1) > -margin)
        & (tri[..., 1].amin(dim=-1) < camera.image_height + margin)
    )
    face_ok = in_range & on_screen  # (B, F)
    if cull_backfaces:
        with torch.no_grad():
            tv = cam[:, f_idx]  # (B, F, 3, 3)
            normal = torch.cross(tv[:, :, 1] - tv[:, :, 0], tv[:, :, 2] - tv[:, :, 0], dim=-1)
            centroid = tv.mean(dim=2)
            face_ok = face_ok & ((normal * centroid).sum(-1) < 0)
    if not bool(face_ok.any()):
        return verts.new_zeros(batch, camera.image_height, camera.image_width)

    # Restrict rasterization to the window actually covered by live faces
    # (plus the sigmoid margin); everything outside is exactly background.
    with torch.no_grad():
        live = face_ok.unsqueeze(-1).expand(-1, -1, 3)
        us = tri[..., 0][live]
        vs = tri[..., 1][live]
        c0 = int(max(0.0, np.floor(float(us.min()) - margin)))
        c1 = int(min(camera.image_width, np.ceil(float(us.max()) + margin)))
        r0 = int(max(0.0, np.floor(float(vs.min()) - margin)))
        r1 = int(min(camera.image_height, np.ceil(float(vs.max()) + margin)))
    if c0 >= c1 or r0 >= r1:
        return verts.new_zeros(batch, camera.image_height, camera.image_width)

    full = _pixel_centers(camera).reshape(camera.image_height, camera.image_width, 2)
    pix = torch.as_tensor(full[r0:r1, c0:c1].reshape(-1, 2), dtype=dtype)  # (P, 2)
    p = pix[None, None, :, :]  # (1, 1, P, 2)

    a, b, c = tri[:, :, 0], tri[:, :, 1], tri[:, :, 2]

    def cross2(e, d):
        return e[..., 0] * d[..., 1] - e[..., 1] * d[..., 0]

    w_a = cross2((c - b)[:, :, None, :], p - b[:, :, None, :])
    w_b = cross2((a - c)[:, :, None, :], p - c[:, :, None, :])
    w_c = cross2((b - a)[:, :, None, :], p - a[:, :, None, :])
    area2 = cross2(b - a, c - a)[:, :, None]  # (B, F, 1)
    sgn = torch.sign(area2)
    inside = (w_a * sgn >= 0) & (w_b * sgn >= 0) & (w_c * sgn >= 0)

    seam, patch_np, n_patch = _raster_topology(
        vertices[0].detach().cpu().numpy(), np.asarray(faces, dtype=np.int64)
    )
    seam_t = torch.as_tensor(seam)
    d2 = None
    for k, (eA, eB) in enumerate(((a, b), (b, c), (c, a))):
        edge = (eB - eA)[:, :, None, :]
        rel = p - eA[:, :, None, :]
        t = (rel * edge).sum(-1) / (edge * edge).sum(-1).clamp(min=1e-12)
        t = t.clamp(0.0, 1.0)
        diff = rel - t.unsqueeze(-1) * edge
        d2_e = (diff * diff).sum(-1)
        if bool(seam_t[:, k].any()):
            d2_e = d2_e.masked_fill(seam_t[None, :, k, None], 1e8)
        d2 = d2_e if d2 is None else torch.minimum(d2, d2_e)

    # Plane depth by unclamped barycentric interpolation; coplanar patch
    # members reproduce the same depth field, so it is seam-continuous.
    # Out-of-plane-horizon values saturate and are clamped to the patch's
    # vertex depth range below.
    safe_area = torch.where(area2.abs() < 1e-12, torch.full_like(area2, 1e-12), area2)
    lam = torch.stack([w_a, w_b, w_c], dim=-1) / safe_area.unsqueeze(-1)
    zinv = (lam / tz.clamp(min=1e-6).unsqueeze(2)).sum(dim=-1)
    z_face = 1.0 / zinv.clamp(min=1.0 / (4.0 * camera.far))  # (B, F, P)

    n_pix = p.shape[2]
    patch = torch.as_tensor(patch_np)
    idx_f = patch[None, :, None].expand(batch, -1, n_pix)
    idx_f1 = patch[None, :, None].expand(batch, -1, 1)

    def patch_reduce(src, reduce, fill):
        out = src.new_full((batch, n_patch, src.shape[2]), fill)
        return out.scatter_reduce(
            1, idx_f if src.shape[2] == n_pix else idx_f1, src, reduce, include_self=True
        )

    inside_p = patch_reduce(inside.to(p.dtype), "amax", 0.0) > 0.5
    d2_p = patch_reduce(d2, "amin", 1e8)
    z_lo = patch_reduce(tz.amin(-1, keepdim=True), "amin", float(camera.far))
    z_hi = patch_reduce(tz.amax(-1, keepdim=True), "amax", float(camera.near))
    z_p = patch_reduce(z_face, "amin", 4.0 * camera.far)
    z_p = torch.minimum(torch.maximum(z_p, z_lo), z_hi)
    area_p = patch_reduce(area2.abs(), "sum", 0.0)
    ok_p = patch_reduce(face_ok.to(p.dtype).unsqueeze(-1), "amax", 0.0) > 0.5

    dist = torch.sqrt(d2_p + 1e-12)
    signed = torch.where(inside_p, dist, -dist)  # (B, K, P), pixel units

    # Smooth area gate: patches collapsing toward edge-on fade out before
    # the inside-test orientation flips.  Scaled so a fully gated patch can
    # never outbid a real surface in the depth softmin, at any sharpness.
    gate_mult = max(1.0, sharpness * (camera.far - camera.near) / 12.0)
    area_gate = F.logsigmoid((area_p - 9.0) / 0.75) * gate_mult  # px^2 scale
    log_w = (F.logsigmoid(sharpness * signed) + area_gate).clamp(max=-1e-9)
    log_not_w = torch.log1p(-torch.exp(log_w))

    dead = ~ok_p
    log_w = log_w.masked_fill(dead, _BG_LOGIT)
    log_not_w = log_not_w.masked_fill(dead, 0.0)
    z_p = z_p.masked_fill(dead, 1.0)

    weights = torch.softmax(log_w - sharpness * z_p, dim=1)
    z_soft = (weights * z_p).sum(dim=1)  # (B, P)
    alpha = 1.0 - torch.exp(log_not_w.sum(dim=1))
    depth = alpha * z_soft
    # Rows whose every face was culled must be exactly zero.
    any_face = face_ok.any(dim=1).float().unsqueeze(-1)
    depth = depth * any_face
    window = depth.reshape(batch, r1 - r0, c1 - c0)
    return F.pad(
        window, (c0, camera.image_width - c1, r0, camera.image_height - r1)
    )


def _mesh_tensors(mesh: TriangleMesh):
    return torch.as_tensor(mesh.vertices, dtype=torch.float32), mesh.faces


def render_depth_soft(
    mesh: TriangleMesh,
    view: ViewCode,
    camera: CameraModel,
    sharpness: float = 50.0,
) -> DepthMap:
    """Soft render returned as a plain DepthMap (no gradient tracking)."""
    verts, faces = _mesh_tensors(mesh)
    angles = torch.tensor([[view.azimuth, view.elevation]], dtype=torch.float32)
    with torch.no_grad():
        img = soft_depth_image(verts, faces, angles, camera, sharpness)
    return DepthMap(img[0].numpy(), camera.near, camera.far)


def view_gradient(
    loss_fn,
    mesh: TriangleMesh,
    view: ViewCode,
    camera: CameraModel,
    sharpness: float = 50.0,
) -> tuple[float, float]:
    """Gradient of a scalar loss of the soft depth image w.r.t. the two angles.

    `loss_fn` receives the (H, W) torch depth tensor and must return a scalar
    tensor built from differentiable ops.  Raises :class:`DegenerateView`
    when the hard silhouette covers less than 1% of the frame, where edge
    gradients carry almost no signal.
    """
    hard = render_depth_hard(mesh, view, camera)
    frac = float(silhouette_mask(hard).mean())
    if frac < 0.01:
        raise DegenerateView(f"silhouette covers {frac * 100.0:.2f}% of the frame")
    verts = torch.as_tensor(mesh.vertices, dtype=torch.float64)
    angles = torch.tensor(
        [[view.azimuth, view.elevation]], dtype=torch.float64, requires_grad=True
    )
    img = soft_depth_image(verts, mesh.faces, angles, camera, sharpness)
    loss = loss_fn(img[0])
    grad = torch.autograd.grad(loss, angles)[0][0]
    return float(grad[0]), float(grad[1])


def interior_mask(
    depth: DepthMap,
    margin: int = 2,
    jump_frac: float = 0.04,
    curv_frac: float = 0.01,
) -> np.ndarray:
    """Pixels at least `margin` px from silhouette and surface-edge structure.

    Excluded structure: the coverage boundary, internal occlusion jumps
    (first difference above `jump_frac` of the depth range), and creases or
    grazing strips (second difference above `curv_frac` of the range), all
    dilated by `margin`.  What remains are interiors of smooth surfaces,
    where the soft render must converge to the hard one.
    """
    vals = depth.values
    cov = vals > 0
    rng = depth.far - depth.near
    jump = np.zeros_like(cov)
    kinks = np.zeros_like(cov)
    for axis in (0, 1):
        d = np.diff(vals, axis=axis)
        both = cov[:-1, :] & cov[1:, :] if axis == 0 else cov[:, :-1] & cov[:, 1:]
        big = (np.abs(d) > jump_frac * rng) & both
        if axis == 0:
            jump[:-1, :] |= big
            jump[1:, :] |= big
        else:
            jump[:, :-1] |= big
            jump[:, 1:] |= big
        dd = np.abs(np.diff(d, axis=axis))
        if axis == 0:
            slope = np.minimum(np.abs(d[:-1, :]), np.abs(d[1:, :]))
            triple = cov[:-2, :] & cov[1:-1, :] & cov[2:, :]
        else:
            slope = np.minimum(np.abs(d[:, :-1]), np.abs(d[:, 1:]))
            triple = cov[:, :-2] & cov[:, 1:-1] & cov[:, 2:]
        kink = (dd > np.maximum(curv_frac * rng, 0.5 * slope)) & triple
        if axis == 0:
            kinks[1:-1, :] |= kink
        else:
            kinks[:, 1:-1] |= kink
    structure = np.ones((3, 3), dtype=bool)
    core = ndimage.binary_erosion(cov, structure=structure, iterations=margin)
    # Occlusion edges bleed proportionally to their depth jump; creases and
    # grazing strips only sub-pixel, so one ring suffices for them.
    bad = ndimage.binary_dilation(jump, structure=structure, iterations=margin)
    bad |= ndimage.binary_dilation(kinks, structure=structure, iterations=1)
    return (core & ~bad).astype(bool)


def write_pfm(path, depth: DepthMap) -> None:
    """Persist as grayscale PFM, little-endian (scale -1.0), bottom row first."""
    vals = depth.values.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{depth.width} {depth.height}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.flipud(vals).tobytes())


def read_pfm(path, near: float, far: float) -> DepthMap:
    """Read a grayscale PFM written by :func:`write_pfm`."""
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header != b"Pf":
            raise ValueError(f"not a grayscale PFM: header {header!r}")
        width, height = (int(x) for x in fh.readline().split())
        scale = float(fh.readline())
        count = width * height
        data = np.frombuffer(fh.read(count * 4), dtype="<f4" if scale < 0 else ">f4")
        if data.size != count:
            raise ValueError("truncated PFM payload")
    vals = np.flipud(data.reshape(height, width)).copy()
    return DepthMap(vals, near, far)
