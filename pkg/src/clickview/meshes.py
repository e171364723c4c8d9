"""Parametric vehicle-like meshes with named surface keypoints.

Three built-in object classes (bus, car, motorcycle) stand in for scanned
CAD models. Canonical frame: the vehicle faces -Y, +X is its left side,
+Z is up. Every mesh is geometrically and chromatically symmetric under
x -> -x, so telling left from right (and, for the bus, front from back)
genuinely requires the keypoint signal rather than appearance.

Keypoints sit exactly on mesh triangles (corners, face centers, disc
hubs). Each class carries a left/right mirror table used by horizontal
flip augmentation; the table is an involution that fixes only centerline
keypoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ObjectSpec:
    name: str
    vertices: np.ndarray          # (n, 3)
    triangles: np.ndarray         # (m, 3) vertex indices, outward winding
    tri_face: np.ndarray          # (m,) logical face id per triangle
    face_colors: np.ndarray       # (n_faces, 3) RGB in [0, 1]
    keypoint_names: tuple[str, ...]
    keypoints: np.ndarray         # (k, 3) canonical positions
    mirror_table: dict[str, str]  # left/right pairing, involution
    front_face_ids: tuple[int, ...] = field(default_factory=tuple)

    @property
    def bounding_radius(self) -> float:
        return float(np.max(np.linalg.norm(self.vertices, axis=1)))

    def keypoint_index(self, name: str) -> int:
        return self.keypoint_names.index(name)


class _Builder:
    def __init__(self):
        self.verts: list[tuple[float, float, float]] = []
        self.tris: list[tuple[int, int, int]] = []
        self.tri_face: list[int] = []
        self.colors: list[tuple[float, float, float]] = []

    def _vertex(self, p) -> int:
        self.verts.append(tuple(float(c) for c in p))
        return len(self.verts) - 1

    def _face(self, color) -> int:
        self.colors.append(tuple(color))
        return len(self.colors) - 1

    def quad(self, p0, p1, p2, p3, color) -> int:
        """Planar quad with outward winding p0->p1->p2->p3 (counterclockwise
        seen from outside); split along the p0-p2 diagonal."""
        fid = self._face(color)
        i0, i1, i2, i3 = (self._vertex(p) for p in (p0, p1, p2, p3))
        self.tris += [(i0, i1, i2), (i0, i2, i3)]
        self.tri_face += [fid, fid]
        return fid

    def box(self, lo, hi, colors) -> dict[str, int]:
        """Axis-aligned box; colors keyed by face {'+x','-x','+y','-y','+z','-z'}."""
        x0, y0, z0 = lo
        x1, y1, z1 = hi
        fids = {}
        fids["-y"] = self.quad((x0, y0, z0), (x1, y0, z0), (x1, y0, z1), (x0, y0, z1), colors["-y"])
        fids["+y"] = self.quad((x0, y1, z0), (x0, y1, z1), (x1, y1, z1), (x1, y1, z0), colors["+y"])
        fids["+x"] = self.quad((x1, y0, z0), (x1, y1, z0), (x1, y1, z1), (x1, y0, z1), colors["+x"])
        fids["-x"] = self.quad((x0, y0, z0), (x0, y0, z1), (x0, y1, z1), (x0, y1, z0), colors["-x"])
        fids["+z"] = self.quad((x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1), colors["+z"])
        fids["-z"] = self.quad((x0, y0, z0), (x0, y1, z0), (x1, y1, z0), (x1, y0, z0), colors["-z"])
        return fids

    def disc(self, center, radius: float, axis_sign: float, color, segments: int = 10) -> int:
        """Circular fan in a plane of constant x, facing +x or -x."""
        fid = self._face(color)
        cx, cy, cz = center
        ci = self._vertex(center)
        ring = []
        for k in range(segments):
            a = 2.0 * np.pi * k / segments
            ring.append(self._vertex((cx, cy + radius * np.cos(a), cz + radius * np.sin(a))))
        for k in range(segments):
            a, b = ring[k], ring[(k + 1) % segments]
            tri = (ci, a, b) if axis_sign > 0 else (ci, b, a)
            self.tris.append(tri)
            self.tri_face.append(fid)
        return fid

    def wheel(self, center, radius: float, axis_sign: float, rim_color, hub_color) -> None:
        """Side-facing wheel: rim disc plus a smaller hub disc floating just
        outside it. Distinct hub colors make individual wheels identifiable
        up close, which is what keypoint-guided attention feeds on."""
        cx, cy, cz = center
        self.disc(center, radius, axis_sign, rim_color)
        self.disc((cx + 0.012 * axis_sign, cy, cz), 0.55 * radius, axis_sign, hub_color)

    def finish(self, name, kp_names, kps, mirror, front_face_ids=()) -> ObjectSpec:
        return ObjectSpec(
            name=name,
            vertices=np.array(self.verts, dtype=np.float64),
            triangles=np.array(self.tris, dtype=np.int64),
            tri_face=np.array(self.tri_face, dtype=np.int64),
            face_colors=np.array(self.colors, dtype=np.float64),
            keypoint_names=tuple(kp_names),
            keypoints=np.array(kps, dtype=np.float64),
            mirror_table=dict(mirror),
            front_face_ids=tuple(front_face_ids),
        )


def lr_mirror_table(names) -> dict[str, str]:
    table = {}
    for n in names:
        if n.startswith("left_"):
            table[n] = "right_" + n[5:]
        elif n.startswith("right_"):
            table[n] = "left_" + n[6:]
        else:
            table[n] = n
    return table


def make_bus() -> ObjectSpec:
    """Elongated box whose shape is fore-aft and left-right symmetric.

    Appearance cues live at the parts, not the silhouette: front wheels
    carry bright hubs and the front face a dim windshield band, so front
    and back are only distinguishable from small local evidence.
    """
    b = _Builder()
    body = (0.78, 0.80, 0.86)
    roof = (0.88, 0.90, 0.94)
    belly = (0.25, 0.26, 0.28)
    rim = (0.12, 0.12, 0.13)
    hub_front = (0.92, 0.78, 0.25)
    hub_back = (0.20, 0.20, 0.22)
    glass = (0.40, 0.46, 0.58)
    hw, hl = 0.6, 1.8   # half width (x), half length (y)
    z0, z1 = 0.35, 1.75
    b.box((-hw, -hl, z0), (hw, hl, z1),
          {"+x": body, "-x": body, "+y": body, "-y": body, "+z": roof, "-z": belly})
    # windshield band floats a hair off the front face (no z-fighting)
    yw = -hl - 0.004
    b.quad((-0.5, yw, 1.25), (0.5, yw, 1.25), (0.5, yw, 1.65), (-0.5, yw, 1.65), glass)
    wy, wr, wz = 1.2, 0.35, 0.35
    for sx in (1.0, -1.0):
        for sy, hub in ((-1.0, hub_front), (1.0, hub_back)):
            b.wheel((sx * (hw + 0.04), sy * wy, wz), wr, sx, rim, hub)
    names = []
    kps = []
    for end, sy in (("front", -1.0), ("back", 1.0)):
        for side, sx in (("left", 1.0), ("right", -1.0)):
            for level, z in (("lower", z0), ("upper", z1)):
                names.append(f"{side}_{end}_{level}_corner")
                kps.append((sx * hw, sy * hl, z))
    for side, sx in (("left", 1.0), ("right", -1.0)):
        for end, sy in (("front", -1.0), ("back", 1.0)):
            names.append(f"{side}_{end}_wheel")
            kps.append((sx * (hw + 0.052), sy * wy, wz))  # on the hub disc
    return b.finish("bus", names, kps, lr_mirror_table(names))


def make_car() -> ObjectSpec:
    """Box body plus an off-center cabin wedge; the windshield slope is the
    only appearance cue separating front from back."""
    b = _Builder()
    body = (0.72, 0.30, 0.28)
    glass = (0.55, 0.62, 0.72)
    belly = (0.22, 0.20, 0.20)
    wheel = (0.10, 0.10, 0.11)
    hw, hl = 0.7, 1.6
    z0, z1 = 0.30, 0.85
    b.box((-hw, -hl, z0), (hw, hl, z1),
          {"+x": body, "-x": body, "+y": body, "-y": body, "+z": body, "-z": belly})
    # cabin: sloped front (windshield) and back, narrower than the body
    cw = 0.55
    yb0, yb1 = -0.70, 1.10     # base extent on the roof
    yt0, yt1 = -0.25, 0.80     # top extent (front slope longer than rear)
    zt = 1.35
    b.quad((-cw, yb0, z1), (cw, yb0, z1), (cw, yt0, zt), (-cw, yt0, zt), glass)   # windshield
    b.quad((-cw, yt1, zt), (cw, yt1, zt), (cw, yb1, z1), (-cw, yb1, z1), glass)   # rear window
    b.quad((-cw, yt0, zt), (cw, yt0, zt), (cw, yt1, zt), (-cw, yt1, zt), glass)   # cabin roof
    b.quad((cw, yb0, z1), (cw, yb1, z1), (cw, yt1, zt), (cw, yt0, zt), glass)     # left side
    b.quad((-cw, yb0, z1), (-cw, yt0, zt), (-cw, yt1, zt), (-cw, yb1, z1), glass)  # right side
    wy, wr, wz = 1.15, 0.30, 0.30
    for sx in (1.0, -1.0):
        for sy in (-1.0, 1.0):
            b.disc((sx * (hw + 0.04), sy * wy, wz), wr, sx, wheel)
    names = [
        "left_front_wheel", "left_back_wheel", "right_front_wheel", "right_back_wheel",
        "left_front_light", "right_front_light",
        "left_front_windshield", "right_front_windshield",
        "left_back_trunk", "right_back_trunk",
        "left_back_windshield", "right_back_windshield",
    ]
    kps = [
        (hw + 0.04, -wy, wz), (hw + 0.04, wy, wz), (-(hw + 0.04), -wy, wz), (-(hw + 0.04), wy, wz),
        (0.45, -hl, 0.70), (-0.45, -hl, 0.70),
        (cw, yt0, zt), (-cw, yt0, zt),
        (hw, hl, z1), (-hw, hl, z1),
        (cw, yt1, zt), (-cw, yt1, zt),
    ]
    return b.finish("car", names, kps, lr_mirror_table(names))


def make_motorcycle() -> ObjectSpec:
    """Slim two-wheeler: center spine, head tube, handlebar, side-facing wheels."""
    b = _Builder()
    frame = (0.30, 0.32, 0.38)
    tank = (0.60, 0.42, 0.20)
    wheel = (0.10, 0.10, 0.11)
    grip = (0.55, 0.55, 0.58)
    hx = 0.12
    b.box((-hx, -0.9, 0.5), (hx, 0.9, 0.9),
          {"+x": frame, "-x": frame, "+y": frame, "-y": frame, "+z": tank, "-z": frame})
    b.box((-0.08, -0.75, 0.9), (0.08, -0.60, 1.05),
          {"+x": frame, "-x": frame, "+y": frame, "-y": frame, "+z": frame, "-z": frame})
    b.box((-0.45, -0.78, 1.05), (0.45, -0.70, 1.12),
          {"+x": grip, "-x": grip, "+y": grip, "-y": grip, "+z": grip, "-z": grip})
    for sy in (-0.85, 0.85):
        for sx in (0.06, -0.06):
            b.disc((sx, sy, 0.35), 0.35, np.sign(sx), wheel)
    names = [
        "seat_back", "seat_front", "head_center", "headlight_center",
        "left_back_wheel", "left_front_wheel", "left_handle_end",
        "right_back_wheel", "right_front_wheel", "right_handle_end",
    ]
    kps = [
        (0.0, 0.75, 0.9), (0.0, 0.0, 0.9), (0.0, -0.675, 1.05), (0.0, -0.75, 0.975),
        (0.06, 0.85, 0.35), (0.06, -0.85, 0.35), (0.45, -0.74, 1.085),
        (-0.06, 0.85, 0.35), (-0.06, -0.85, 0.35), (-0.45, -0.74, 1.085),
    ]
    return b.finish("motorcycle", names, kps, lr_mirror_table(names))


def make_probe_cuboid() -> ObjectSpec:
    """Convex test cuboid with a uniquely marked front face.

    Used by visibility and label-consistency checks: 6 face-center
    keypoints (each on exactly one face) plus 8 corner keypoints.
    """
    b = _Builder()
    plain = (0.6, 0.6, 0.6)
    mark = (0.95, 0.15, 0.10)
    lo = (-0.5, -0.9, -0.4)
    hi = (0.5, 0.9, 0.4)
    fids = b.box(lo, hi, {"+x": plain, "-x": plain, "+y": plain, "-y": mark,
                          "+z": plain, "-z": plain})
    names, kps = [], []
    centers = {
        "front_center": ((lo[0] + hi[0]) / 2, lo[1], (lo[2] + hi[2]) / 2),
        "back_center": ((lo[0] + hi[0]) / 2, hi[1], (lo[2] + hi[2]) / 2),
        "left_center": (hi[0], (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2),
        "right_center": (lo[0], (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2),
        "top_center": ((lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, hi[2]),
        "bottom_center": ((lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, lo[2]),
    }
    for n, p in centers.items():
        names.append(n)
        kps.append(p)
    for end, y in (("front", lo[1]), ("back", hi[1])):
        for side, x in (("left", hi[0]), ("right", lo[0])):
            for level, z in (("lower", lo[2]), ("upper", hi[2])):
                names.append(f"{side}_{end}_{level}")
                kps.append((x, y, z))
    return b.finish("probe_cuboid", names, kps, lr_mirror_table(names),
                    front_face_ids=(fids["-y"],))


_FACTORIES = {"bus": make_bus, "car": make_car, "motorcycle": make_motorcycle}


def object_classes() -> tuple[str, ...]:
    return tuple(_FACTORIES)


def get_object_spec(name: str) -> ObjectSpec:
    if name == "probe_cuboid":
        return make_probe_cuboid()
    if name not in _FACTORIES:
        raise ValueError(f"unknown object class {name!r}; have {sorted(_FACTORIES)}")
    return _FACTORIES[name]()


def keypoint_registry(classes=None) -> dict[str, tuple[str, ...]]:
    """Ordered keypoint class names per object class."""
    classes = object_classes() if classes is None else tuple(classes)
    return {c: get_object_spec(c).keypoint_names for c in classes}


def global_keypoint_index(registry: dict[str, tuple[str, ...]], obj_class: str, kp_name: str) -> int:
    """Index of a keypoint class in the one-hot space spanning all classes."""
    offset = 0
    for c, names in registry.items():
        if c == obj_class:
            return offset + names.index(kp_name)
        offset += len(names)
    raise ValueError(f"unknown object class {obj_class!r}")


def total_keypoint_classes(registry: dict[str, tuple[str, ...]]) -> int:
    return sum(len(v) for v in registry.values())


def face_normals(spec: ObjectSpec) -> np.ndarray:
    """Unit outward normal per triangle."""
    v = spec.vertices
    t = spec.triangles
    n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    return n / np.linalg.norm(n, axis=1, keepdims=True)
