"""Software rasterizer: perspective projection, z-buffer, flat shading.

The world-to-camera rotation is the shared viewpoint rotation composed
with one fixed axis adapter, so a render's orientation is an exact
function of its label. The camera always looks at the object origin from
the label-determined direction at the sampled distance, which keeps the
object centered regardless of viewpoint.

Camera frame: x right, y down (image rows), z forward into the scene.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import ViewpointLabel, rotation_from_viewpoint
from .meshes import ObjectSpec, face_normals

# Maps object axes to camera axes at the identity viewpoint: the camera
# sits on the -Y side (facing the vehicle's front) with +Z up on screen.
AXIS_ADAPTER = np.array([
    [1.0, 0.0, 0.0],
    [0.0, 0.0, -1.0],
    [0.0, 1.0, 0.0],
])

FOCAL_FACTOR = 1.0      # focal length in pixels = FOCAL_FACTOR * image size
VISIBILITY_EPS = 1e-3   # fraction of the object's depth range

BACKGROUND_FACE = -1
OCCLUDER_FACE = -2


@dataclass(frozen=True)
class CameraRanges:
    """Sampling ranges for camera extrinsics (degrees / bounding radii)."""

    elevation_min: float = -10.0
    elevation_max: float = 60.0
    tilt_sigma: float = 5.0
    tilt_max: float = 15.0
    distance_min: float = 2.6
    distance_max: float = 3.6

    def validate(self) -> None:
        if self.elevation_max < self.elevation_min:
            raise ValueError("camera.elevation range is empty")
        if self.distance_max < self.distance_min or self.distance_min <= 1.0:
            raise ValueError("camera.distance band must be > 1 bounding radius and non-empty")
        if self.tilt_sigma < 0 or self.tilt_max < 0:
            raise ValueError("camera.tilt parameters must be >= 0")


@dataclass
class RenderedSample:
    """One rendered frame plus everything derived from it."""

    image: np.ndarray                       # (s, s, 3) floats in [0, 1]
    viewpoint: ViewpointLabel
    visible_keypoints: list[tuple[str, int, int]]   # (name, x, y) pixels
    extrinsics: np.ndarray                  # 3x3 world-to-camera rotation
    distance: float                         # camera distance in world units
    face_ids: np.ndarray | None = None      # (s, s) int32 face id per pixel
    object_bbox: tuple[int, int, int, int] | None = None  # x0, y0, x1, y1 exclusive


def world_to_camera(view: ViewpointLabel) -> np.ndarray:
    return AXIS_ADAPTER @ rotation_from_viewpoint(view)


def sample_camera(rng: np.random.Generator, ranges: CameraRanges | None = None,
                  n_bins: int = 24) -> tuple[ViewpointLabel, float]:
    """Draw a viewpoint label and a camera distance (in bounding radii)."""
    ranges = ranges or CameraRanges()
    ranges.validate()
    az = rng.uniform(0.0, 360.0)
    el = rng.uniform(ranges.elevation_min, ranges.elevation_max)
    while True:
        ti = rng.normal(0.0, ranges.tilt_sigma) if ranges.tilt_sigma > 0 else 0.0
        if abs(ti) <= ranges.tilt_max:
            break
    dist = rng.uniform(ranges.distance_min, ranges.distance_max)
    return ViewpointLabel(az, el, ti, n_bins), dist


def sample_light(rng: np.random.Generator) -> np.ndarray:
    """Unit direction of light travel, always with a downward component."""
    azim = rng.uniform(0.0, 2.0 * np.pi)
    alt = rng.uniform(np.pi / 8, np.pi / 2.2)
    return np.array([np.cos(azim) * np.cos(alt), np.sin(azim) * np.cos(alt), -np.sin(alt)])


def _value_noise(rng: np.random.Generator, s: int, cells: int) -> np.ndarray:
    """Bilinearly upsampled random grid; one octave of low-frequency noise."""
    coarse = rng.uniform(0.0, 1.0, size=(cells + 1, cells + 1, 3))
    t = np.linspace(0.0, cells, s, endpoint=False)
    i0 = np.floor(t).astype(int)
    f = t - i0
    i1 = np.minimum(i0 + 1, cells)
    a = coarse[np.ix_(i0, i0)]
    bx = coarse[np.ix_(i0, i1)]
    by = coarse[np.ix_(i1, i0)]
    bxy = coarse[np.ix_(i1, i1)]
    fx = f[None, :, None]
    fy = f[:, None, None]
    return (a * (1 - fx) * (1 - fy) + bx * fx * (1 - fy)
            + by * (1 - fx) * fy + bxy * fx * fy)


def make_background(seed: int, s: int, textured: bool = False) -> np.ndarray:
    rng = np.random.default_rng(seed)
    img = 0.25 + 0.5 * _value_noise(rng, s, 4)
    if textured:
        img = 0.55 * img + 0.3 * _value_noise(rng, s, 11) + 0.15 * _value_noise(rng, s, 23)
    return np.clip(img, 0.0, 1.0)


@dataclass(frozen=True)
class Occluder:
    """Screen-space rectangle at a fixed camera depth (fraction of distance)."""

    x0: float
    y0: float
    w: float
    h: float
    depth_frac: float
    color: tuple[float, float, float]


def sample_occluders(rng: np.random.Generator, count: int) -> list[Occluder]:
    occs = []
    for _ in range(count):
        occs.append(Occluder(
            x0=rng.uniform(0.0, 0.85),
            y0=rng.uniform(0.0, 0.85),
            w=rng.uniform(0.08, 0.3),
            h=rng.uniform(0.08, 0.3),
            depth_frac=rng.uniform(0.4, 0.7),
            color=tuple(rng.uniform(0.1, 0.9, size=3)),
        ))
    return occs


def render(spec: ObjectSpec, view: ViewpointLabel, light_dir, background_seed: int,
           *, distance: float | None = None, image_size: int = 64,
           textured_background: bool = False, occluders: list[Occluder] | None = None,
           noise_sigma: float = 0.0, noise_rng: np.random.Generator | None = None) -> RenderedSample:
    """Rasterize one view of an object over a procedural background.

    ``distance`` is in units of the object's bounding radius. A keypoint is
    reported visible when its projection lands inside the frame and its
    camera depth beats the z-buffer within a small epsilon of the object's
    depth range.
    """
    s = image_size
    r = spec.bounding_radius
    d = (distance if distance is not None else 3.0) * r
    if d <= r:
        raise ValueError(f"camera distance {d:.3f} puts the object behind or around the camera")
    m = world_to_camera(view)
    light = np.asarray(light_dir, dtype=np.float64)
    light = light / np.linalg.norm(light)

    cam = spec.vertices @ m.T
    cam[:, 2] += d
    if np.any(cam[:, 2] <= 0):
        raise ValueError("degenerate camera: object extends behind the image plane")
    f_px = FOCAL_FACTOR * s
    u = s / 2.0 + f_px * cam[:, 0] / cam[:, 2]
    v = s / 2.0 + f_px * cam[:, 1] / cam[:, 2]

    img = make_background(background_seed, s, textured=textured_background)
    zbuf = np.full((s, s), np.inf)
    fids = np.full((s, s), BACKGROUND_FACE, dtype=np.int32)

    normals_world = face_normals(spec)
    shade = 0.35 + 0.65 * np.maximum(0.0, -(normals_world @ light))

    # no back-face culling: wheel discs are single-sided, and for closed
    # parts the z-buffer discards back faces anyway
    for t_idx in range(len(spec.triangles)):
        ia, ib, ic = spec.triangles[t_idx]
        _fill_triangle(img, zbuf, fids,
                       (u[ia], v[ia], cam[ia, 2]), (u[ib], v[ib], cam[ib, 2]),
                       (u[ic], v[ic], cam[ic, 2]),
                       spec.face_colors[spec.tri_face[t_idx]] * shade[t_idx],
                       int(spec.tri_face[t_idx]))

    for occ in occluders or []:
        zo = occ.depth_frac * d
        x0 = int(occ.x0 * s)
        y0 = int(occ.y0 * s)
        x1 = min(s, x0 + max(1, int(occ.w * s)))
        y1 = min(s, y0 + max(1, int(occ.h * s)))
        patch = zbuf[y0:y1, x0:x1]
        mask = zo < patch
        patch[mask] = zo
        img[y0:y1, x0:x1][mask] = occ.color
        fids[y0:y1, x0:x1][mask] = OCCLUDER_FACE

    z_near, z_far = float(np.min(cam[:, 2])), float(np.max(cam[:, 2]))
    eps = VISIBILITY_EPS * max(z_far - z_near, 1e-9)
    visible: list[tuple[str, int, int]] = []
    kp_cam = spec.keypoints @ m.T
    kp_cam[:, 2] += d
    # depth test at the keypoint's exact projected position: the z-buffer
    # sampled at pixel centers is too coarse for an epsilon this tight
    tri = spec.triangles
    tu, tv, tz = u[tri], v[tri], cam[:, 2][tri]
    den = (tv[:, 1] - tv[:, 2]) * (tu[:, 0] - tu[:, 2]) + (tu[:, 2] - tu[:, 1]) * (tv[:, 0] - tv[:, 2])
    ok = np.abs(den) > 1e-12
    for k, name in enumerate(spec.keypoint_names):
        kz = kp_cam[k, 2]
        kx = s / 2.0 + f_px * kp_cam[k, 0] / kz
        ky = s / 2.0 + f_px * kp_cam[k, 1] / kz
        px, py = int(np.floor(kx)), int(np.floor(ky))
        if not (0 <= px < s and 0 <= py < s):
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            l0 = ((tv[:, 1] - tv[:, 2]) * (kx - tu[:, 2]) + (tu[:, 2] - tu[:, 1]) * (ky - tv[:, 2])) / den
            l1 = ((tv[:, 2] - tv[:, 0]) * (kx - tu[:, 2]) + (tu[:, 0] - tu[:, 2]) * (ky - tv[:, 2])) / den
        l2 = 1.0 - l0 - l1
        hit = ok & (l0 >= -1e-9) & (l1 >= -1e-9) & (l2 >= -1e-9)
        depth = np.inf
        if hit.any():
            inv_z = (l0 / tz[:, 0] + l1 / tz[:, 1] + l2 / tz[:, 2])[hit]
            inv_z = inv_z[inv_z > 0]
            if inv_z.size:
                depth = float(1.0 / inv_z.max())
        for occ in occluders or []:
            if occ.x0 * s <= kx < occ.x0 * s + max(1, int(occ.w * s)) and \
               occ.y0 * s <= ky < occ.y0 * s + max(1, int(occ.h * s)):
                depth = min(depth, occ.depth_frac * d)
        if kz <= depth + eps:
            visible.append((name, px, py))

    if noise_sigma > 0:
        nrng = noise_rng or np.random.default_rng(background_seed + 1)
        img = img + nrng.normal(0.0, noise_sigma, size=img.shape)
    img = np.clip(img, 0.0, 1.0)

    obj = np.argwhere(fids >= 0)
    bbox = None
    if obj.size:
        y0b, x0b = obj.min(axis=0)
        y1b, x1b = obj.max(axis=0) + 1
        bbox = (int(x0b), int(y0b), int(x1b), int(y1b))

    return RenderedSample(image=img, viewpoint=view, visible_keypoints=visible,
                          extrinsics=m, distance=d, face_ids=fids, object_bbox=bbox)


def _fill_triangle(img, zbuf, fids, p0, p1, p2, color, face_id) -> None:
    s = img.shape[0]
    xs = np.array([p0[0], p1[0], p2[0]])
    ys = np.array([p0[1], p1[1], p2[1]])
    zs = np.array([p0[2], p1[2], p2[2]])
    x_lo = max(int(np.floor(xs.min())), 0)
    x_hi = min(int(np.ceil(xs.max())) + 1, s)
    y_lo = max(int(np.floor(ys.min())), 0)
    y_hi = min(int(np.ceil(ys.max())) + 1, s)
    if x_lo >= x_hi or y_lo >= y_hi:
        return
    px, py = np.meshgrid(np.arange(x_lo, x_hi) + 0.5, np.arange(y_lo, y_hi) + 0.5)
    d = (ys[1] - ys[2]) * (xs[0] - xs[2]) + (xs[2] - xs[1]) * (ys[0] - ys[2])
    if abs(d) < 1e-12:
        return
    l0 = ((ys[1] - ys[2]) * (px - xs[2]) + (xs[2] - xs[1]) * (py - ys[2])) / d
    l1 = ((ys[2] - ys[0]) * (px - xs[2]) + (xs[0] - xs[2]) * (py - ys[2])) / d
    l2 = 1.0 - l0 - l1
    inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
    if not inside.any():
        return
    # perspective-correct depth: interpolate 1/z in screen space
    inv_z = l0 / zs[0] + l1 / zs[1] + l2 / zs[2]
    with np.errstate(divide="ignore"):
        z = np.where(inv_z > 0, 1.0 / inv_z, np.inf)
    win = zbuf[y_lo:y_hi, x_lo:x_hi]
    upd = inside & (z < win)
    win[upd] = z[upd]
    img[y_lo:y_hi, x_lo:x_hi][upd] = np.clip(color, 0.0, 1.0)
    fids[y_lo:y_hi, x_lo:x_hi][upd] = face_id


def crop_jitter(sample: RenderedSample, rng: np.random.Generator, out_size: int,
                max_jitter: float = 0.15, min_box_px: int = 8) -> RenderedSample:
    """Crop the object with a jittered bounding box and resample to out_size.

    Each box edge moves independently by up to ``max_jitter`` of the box
    size; boxes that collapse below ``min_box_px`` are re-drawn. Keypoints
    are remapped affinely and dropped when they leave the crop.
    """
    if sample.object_bbox is None:
        raise ValueError("sample has no object pixels to crop")
    s = sample.image.shape[0]
    bx0, by0, bx1, by1 = sample.object_bbox
    bw, bh = bx1 - bx0, by1 - by0
    for _ in range(32):
        jx = rng.uniform(-max_jitter, max_jitter, size=2) * bw if max_jitter > 0 else (0.0, 0.0)
        jy = rng.uniform(-max_jitter, max_jitter, size=2) * bh if max_jitter > 0 else (0.0, 0.0)
        x0 = max(0.0, bx0 + jx[0])
        x1 = min(float(s), bx1 + jx[1])
        y0 = max(0.0, by0 + jy[0])
        y1 = min(float(s), by1 + jy[1])
        if x1 - x0 >= min_box_px and y1 - y0 >= min_box_px:
            break
    else:
        x0, y0, x1, y1 = float(bx0), float(by0), float(bx1), float(by1)

    w, h = x1 - x0, y1 - y0
    out = _bilinear_crop(sample.image, x0, y0, w, h, out_size)
    sx, sy = out_size / w, out_size / h
    kept = []
    for name, kx, ky in sample.visible_keypoints:
        nx = (kx + 0.5 - x0) * sx - 0.5
        ny = (ky + 0.5 - y0) * sy - 0.5
        nxi, nyi = int(round(nx)), int(round(ny))
        if 0 <= nxi < out_size and 0 <= nyi < out_size:
            kept.append((name, nxi, nyi))
    return replace(sample, image=out, visible_keypoints=kept,
                   face_ids=None, object_bbox=(0, 0, out_size, out_size))


def _bilinear_crop(img: np.ndarray, x0: float, y0: float, w: float, h: float, out: int) -> np.ndarray:
    s = img.shape[0]
    sx = x0 + (np.arange(out) + 0.5) * (w / out) - 0.5
    sy = y0 + (np.arange(out) + 0.5) * (h / out) - 0.5
    x_lo = np.clip(np.floor(sx).astype(int), 0, s - 1)
    y_lo = np.clip(np.floor(sy).astype(int), 0, s - 1)
    x_hi = np.minimum(x_lo + 1, s - 1)
    y_hi = np.minimum(y_lo + 1, s - 1)
    fx = np.clip(sx - x_lo, 0.0, 1.0)[None, :, None]
    fy = np.clip(sy - y_lo, 0.0, 1.0)[:, None, None]
    a = img[np.ix_(y_lo, x_lo)]
    b = img[np.ix_(y_lo, x_hi)]
    c = img[np.ix_(y_hi, x_lo)]
    e = img[np.ix_(y_hi, x_hi)]
    return a * (1 - fx) * (1 - fy) + b * fx * (1 - fy) + c * (1 - fx) * fy + e * fx * fy
