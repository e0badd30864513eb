"""Procedural road scenes with analytically known ground-truth views.

Each scene is a 128x128 background (sky, ground plane, road stripe drawn
under a fixed pitched camera) with a shaded car pasted into a square
embedding region on the road.  The road heading equals the car's azimuth,
so the background alone determines the pose the view generator must learn
to read out.

Directory layout:
    out_dir/manifest.json
    out_dir/scenes/<id>/background.png        composited scene
    out_dir/scenes/<id>/background_clean.png  plate before the car paste
    out_dir/scenes/<id>/object.png            crop of the embedding region
    out_dir/scenes/<id>/meta.json             region, gt view, style, seeds
"""

from __future__ import annotations

import colorsys
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .codes import ViewCode, wrap_angle
from .errors import (
    ChecksumMismatch,
    EmptyDataset,
    MissingFile,
    SchemaVersionMismatch,
)
from .mesh3d import CameraModel, procedural_car_mesh
from .projector import render_depth_hard, silhouette_mask

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SceneParams:
    """Knobs of the scene generator; all randomness keyed off per-scene seeds."""

    image_size: int = 128
    focal_length: float = 110.0
    camera_height: float = 1.5
    camera_pitch: float = 0.12
    yaw_range: tuple[float, float] = (-1.2, 1.2)
    road_half_width: float = 1.7
    road_anchor_z: float = 6.0
    region_min: int = 26
    region_max: int = 54
    car_distance_range: tuple[float, float] = (4.6, 8.5)
    hue_range: tuple[float, float] = (0.0, 1.0)
    sat_range: tuple[float, float] = (0.35, 0.9)
    mesh_seeds: int = 100

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SceneRecord:
    """One synthetic training scene, fully deterministic per seed."""

    scene_id: str
    background: np.ndarray  # (H, W, 3) uint8, car composited
    background_clean: np.ndarray  # (H, W, 3) uint8, before the paste
    region: tuple[int, int, int, int]  # x0, y0, width, height
    gt_view: ViewCode
    object_crop: np.ndarray  # (h, w, 3) uint8, equals background[region]
    style_hue: float
    style_sat: float
    mesh_seed: int


def _ground_rays(params: SceneParams):
    """Per-pixel ground-plane hits (gx, gz) and a below-horizon mask."""
    n = params.image_size
    c = n / 2.0
    xs = (np.arange(n) + 0.5 - c) / params.focal_length
    ys = (np.arange(n) + 0.5 - c) / params.focal_length
    u, v = np.meshgrid(xs, ys)
    # Camera pitched down by `camera_pitch`; rays in world coords (y up).
    cp, sp = np.cos(params.camera_pitch), np.sin(params.camera_pitch)
    ry = -v * cp - 1.0 * sp
    rz = -v * (-sp) + 1.0 * cp
    rx = u
    below = ry < -1e-6
    t = np.where(below, params.camera_height / np.maximum(-ry, 1e-9), 0.0)
    gx = rx * t
    gz = np.where(below, rz * t, 1e9)  # sky pixels land past every cutoff
    return gx, gz, below


def road_mask(params: SceneParams, yaw: float) -> np.ndarray:
    """Boolean mask of road-stripe pixels for a given heading."""
    gx, gz, below = _ground_rays(params)
    lat = gx * np.cos(yaw) - (gz - params.road_anchor_z) * np.sin(yaw)
    return below & (np.abs(lat) < params.road_half_width) & (gz < 60.0)


def _paint_background(params: SceneParams, yaw: float, rng) -> np.ndarray:
    n = params.image_size
    img = np.zeros((n, n, 3), dtype=np.float32)
    gx, gz, below = _ground_rays(params)

    sky_top = np.array([0.45, 0.62, 0.86]) + rng.uniform(-0.05, 0.05, 3)
    sky_bot = np.array([0.72, 0.80, 0.92]) + rng.uniform(-0.04, 0.04, 3)
    rows = np.linspace(0.0, 1.0, n)[:, None]
    sky = sky_top[None, None, :] * (1 - rows[..., None]) + sky_bot[None, None, :] * rows[..., None]
    img[:] = sky

    g_hue = rng.uniform(0.18, 0.34)
    g_sat = rng.uniform(0.25, 0.55)
    g_val = rng.uniform(0.45, 0.6)
    ground = np.array(colorsys.hsv_to_rgb(g_hue, g_sat, g_val), dtype=np.float32)
    # fade with distance toward the horizon for depth cueing
    dist = np.clip(gz / 40.0, 0.0, 1.0)
    gcol = ground[None, None, :] * (1 - 0.5 * dist[..., None]) + sky_bot[None, None, :] * (
        0.5 * dist[..., None]
    )
    img[below] = gcol[below]

    road = road_mask(params, yaw)
    road_val = rng.uniform(0.22, 0.3)
    img[road] = np.array([road_val, road_val, road_val + 0.01])

    # dashed center line: direction texture along the stripe
    lat = gx * np.cos(yaw) - (gz - params.road_anchor_z) * np.sin(yaw)
    s_along = gx * np.sin(yaw) + (gz - params.road_anchor_z) * np.cos(yaw)
    dashes = road & (np.abs(lat) < 0.12) & ((s_along % 2.4) < 1.3)
    img[dashes] = np.array([0.82, 0.82, 0.78])

    # shoulder lines
    shoulder = below & (np.abs(np.abs(lat) - params.road_half_width) < 0.1) & (gz < 60.0)
    img[shoulder] = np.array([0.7, 0.7, 0.68])
    return np.clip(img, 0.0, 1.0)


def _shade_car(mesh, view: ViewCode, camera: CameraModel, hue: float, sat: float):
    """Lambertian render of the car: (64, 64, 3) float RGB and alpha mask."""
    depth = render_depth_hard(mesh, view, camera)
    alpha = silhouette_mask(depth)
    # Per-pixel normals from depth gradients are noisy at this size; use a
    # cheap two-light shading driven by the depth field instead.
    vals = depth.values
    h, w = vals.shape
    gy, gx = np.gradient(np.where(vals > 0, vals, np.nan))
    gy = np.nan_to_num(gy, nan=0.0)
    gx = np.nan_to_num(gx, nan=0.0)
    slope = np.sqrt(gx * gx + gy * gy)
    facing = 1.0 / (1.0 + 14.0 * slope)  # 1 on camera-facing, drops on grazing
    zn = np.where(vals > 0, (camera.far - vals) / (camera.far - camera.near), 0.0)
    shade = 0.35 + 0.5 * facing + 0.25 * (zn - 0.5) - 0.35 * gy * 8.0
    shade = np.clip(shade, 0.12, 1.0)
    base = np.array(colorsys.hsv_to_rgb(hue, sat, 0.85), dtype=np.float32)
    rgb = base[None, None, :] * shade[..., None]
    return np.clip(rgb, 0.0, 1.0), alpha


def _paste(img: np.ndarray, tile_rgb: np.ndarray, tile_alpha: np.ndarray, region):
    x0, y0, w, h = region
    rgb = Image.fromarray((tile_rgb * 255.0 + 0.5).astype(np.uint8))
    a = Image.fromarray((tile_alpha * 255.0 + 0.5).astype(np.uint8))
    rgb = np.asarray(rgb.resize((w, h), Image.BILINEAR), dtype=np.float32) / 255.0
    a = np.asarray(a.resize((w, h), Image.BILINEAR), dtype=np.float32) / 255.0
    hard = (a >= 0.5)[..., None]
    patch = img[y0 : y0 + h, x0 : x0 + w, :]
    img[y0 : y0 + h, x0 : x0 + w, :] = np.where(hard, rgb, patch)


def generate_scene(seed: int, params: SceneParams = SceneParams()) -> SceneRecord:
    """Deterministic scene: background, pasted car, region, ground truth."""
    rng = np.random.default_rng(np.random.SeedSequence([77, int(seed)]))
    yaw = wrap_angle(float(rng.uniform(*params.yaw_range)))
    gt = ViewCode(yaw, params.camera_pitch)
    bg = _paint_background(params, yaw, rng)

    mesh_seed = int(rng.integers(0, params.mesh_seeds))
    hue = float(rng.uniform(*params.hue_range))
    sat = float(rng.uniform(*params.sat_range))

    # car ground position along the road centerline
    n = params.image_size
    c = n / 2.0
    for _ in range(32):
        z_car = float(rng.uniform(*params.car_distance_range))
        t_along = z_car - params.road_anchor_z
        gx = np.sin(yaw) * t_along + float(rng.uniform(-0.5, 0.5))
        gz = params.road_anchor_z + np.cos(yaw) * t_along
        # project the ground point into the image
        cp, sp = np.cos(params.camera_pitch), np.sin(params.camera_pitch)
        yrel = -params.camera_height
        yc = yrel * cp + gz * sp
        zc = -yrel * sp + gz * cp
        if zc <= 0.5:
            continue
        u = c + params.focal_length * gx / zc
        v = c - params.focal_length * yc / zc
        side = int(round(params.focal_length * 2.55 / zc))
        side = int(np.clip(side, params.region_min, params.region_max))
        x0 = int(round(u - side / 2.0))
        y0 = int(round(v - side * 0.62))
        if 1 <= x0 and x0 + side < n - 1 and 1 <= y0 and y0 + side < n - 1:
            region = (x0, y0, side, side)
            break
    else:
        region = (int(c) - 16, int(c), 32, 32)

    clean = (np.clip(bg, 0, 1) * 255.0 + 0.5).astype(np.uint8)
    mesh = procedural_car_mesh(mesh_seed)
    tile, alpha = _shade_car(mesh, gt, CameraModel(), hue, sat)
    composited = clean.astype(np.float32) / 255.0
    _paste(composited, tile, alpha, region)
    final = (np.clip(composited, 0, 1) * 255.0 + 0.5).astype(np.uint8)

    x0, y0, w, h = region
    crop = final[y0 : y0 + h, x0 : x0 + w, :].copy()
    return SceneRecord(
        scene_id=f"{seed:06d}",
        background=final,
        background_clean=clean,
        region=region,
        gt_view=gt,
        object_crop=crop,
        style_hue=hue,
        style_sat=sat,
        mesh_seed=mesh_seed,
    )


def region_mask(region, image_size: int) -> np.ndarray:
    """(1, H, W) float32 box mask."""
    x0, y0, w, h = region
    m = np.zeros((1, image_size, image_size), dtype=np.float32)
    m[0, y0 : y0 + h, x0 : x0 + w] = 1.0
    return m


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _save_png(path: Path, arr: np.ndarray):
    Image.fromarray(arr).save(path, format="PNG")


def generate_dataset(n: int, seed: int, params: SceneParams, out_dir) -> Path:
    """Write n scenes plus a manifest; byte-identical for identical inputs."""
    if n < 1:
        raise ValueError("need at least one scene")
    out = Path(out_dir)
    scenes_dir = out / "scenes"
    scenes_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n):
        sub_seed = seed * 100003 + i
        rec = generate_scene(sub_seed, params)
        d = scenes_dir / rec.scene_id
        d.mkdir(parents=True, exist_ok=True)
        _save_png(d / "background.png", rec.background)
        _save_png(d / "background_clean.png", rec.background_clean)
        _save_png(d / "object.png", rec.object_crop)
        meta = {
            "region": list(rec.region),
            "gt_azimuth": rec.gt_view.azimuth,
            "gt_elevation": rec.gt_view.elevation,
            "style_hue": rec.style_hue,
            "style_sat": rec.style_sat,
            "mesh_seed": rec.mesh_seed,
            "seed": sub_seed,
        }
        (d / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
        entry = {"id": rec.scene_id, "dir": f"scenes/{rec.scene_id}", "files": {}}
        for name in ("background.png", "background_clean.png", "object.png", "meta.json"):
            entry["files"][name] = _sha256(d / name)
        entries.append(entry)
    manifest = {
        "version": SCHEMA_VERSION,
        "count": n,
        "seed": seed,
        "params": params.as_dict(),
        "scenes": entries,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return path


class SceneDataset:
    """Lazy dataset over a generated directory; validates on access."""

    def __init__(self, manifest_path):
        self.root = Path(manifest_path).parent
        try:
            manifest = json.loads(Path(manifest_path).read_text())
        except FileNotFoundError:
            raise MissingFile(f"manifest not found: {manifest_path}") from None
        if manifest.get("version") != SCHEMA_VERSION:
            raise SchemaVersionMismatch(
                f"dataset version {manifest.get('version')!r}, expected {SCHEMA_VERSION}"
            )
        if manifest["count"] < 1 or not manifest["scenes"]:
            raise EmptyDataset("manifest lists no scenes")
        self.manifest = manifest
        self.params = SceneParams(
            **{k: tuple(v) if isinstance(v, list) else v for k, v in manifest["params"].items()}
        )
        self._cache: dict[int, SceneRecord] = {}

    def __len__(self):
        return self.manifest["count"]

    def _load_png(self, entry, name) -> np.ndarray:
        path = self.root / entry["dir"] / name
        if not path.exists():
            raise MissingFile(f"scene {entry['id']}: missing {name}")
        if _sha256(path) != entry["files"][name]:
            raise ChecksumMismatch(f"scene {entry['id']}: {name} checksum mismatch")
        return np.asarray(Image.open(path).convert("RGB"))

    def __getitem__(self, i: int) -> SceneRecord:
        if i in self._cache:
            return self._cache[i]
        entry = self.manifest["scenes"][i]
        meta_path = self.root / entry["dir"] / "meta.json"
        if not meta_path.exists():
            raise MissingFile(f"scene {entry['id']}: missing meta.json")
        if _sha256(meta_path) != entry["files"]["meta.json"]:
            raise ChecksumMismatch(f"scene {entry['id']}: meta.json checksum mismatch")
        meta = json.loads(meta_path.read_text())
        bg = self._load_png(entry, "background.png")
        clean = self._load_png(entry, "background_clean.png")
        crop = self._load_png(entry, "object.png")
        region = tuple(meta["region"])
        x0, y0, w, h = region
        if not np.array_equal(bg[y0 : y0 + h, x0 : x0 + w], crop):
            raise ChecksumMismatch(
                f"scene {entry['id']}: object crop does not match its region"
            )
        rec = SceneRecord(
            scene_id=entry["id"],
            background=bg,
            background_clean=clean,
            region=region,
            gt_view=ViewCode(meta["gt_azimuth"], meta["gt_elevation"]),
            object_crop=crop,
            style_hue=meta["style_hue"],
            style_sat=meta["style_sat"],
            mesh_seed=meta["mesh_seed"],
        )
        self._cache[i] = rec
        return rec


def load_dataset(manifest_path) -> SceneDataset:
    return SceneDataset(manifest_path)
