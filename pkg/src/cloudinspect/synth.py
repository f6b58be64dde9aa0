"""Synthetic reference/current scenes with known defects and misalignment.

Shapes are unions of axis-aligned boxes and cylinders. Their surfaces are
sampled with a jittered grid laid over every face: one uniformly placed
candidate per cell, kept when it falls on the face. That gives exactly
``density * area`` points in expectation, a uniform distribution over the
surface and no large sampling holes, which is the behaviour of a dense
reconstruction. Faces hidden inside the union are sampled too; removing a
part therefore exposes the surface underneath, as a real removal would.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .geometry import (
    PointCloud,
    SimilarityTransform,
    apply_points,
    rotation_about_axis,
)
from .metrics import GroundTruth
from .spatial import KdTree

# noise sigma as a fraction of the clean reference's median point spacing
DEFAULT_NOISE_FRACTION = 0.2

_AXES = {"x": 0, "y": 1, "z": 2}

_STREAM_REFERENCE = 1
_STREAM_CURRENT = 2
_STREAM_NOISE_REFERENCE = 3
_STREAM_NOISE_CURRENT = 4


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    center: tuple
    size: tuple

    def area(self) -> float:
        a, b, c = self.size
        return 2.0 * (a * b + b * c + a * c)

    def faces(self):
        """(origin, edge_u, edge_v) for each of the six faces."""
        c = np.asarray(self.center, dtype=np.float64)
        s = np.asarray(self.size, dtype=np.float64)
        lo = c - s / 2
        out = []
        for axis in range(3):
            u, v = [a for a in range(3) if a != axis]
            eu = np.zeros(3)
            ev = np.zeros(3)
            eu[u] = s[u]
            ev[v] = s[v]
            for side in (0.0, 1.0):
                origin = lo.copy()
                origin[axis] += side * s[axis]
                out.append((origin, eu, ev))
        return out

    def to_dict(self) -> dict:
        return {"type": "box", "center": list(self.center), "size": list(self.size)}


@dataclass(frozen=True)
class Cylinder:
    center: tuple
    radius: float
    height: float
    axis: str = "z"

    def area(self) -> float:
        return 2.0 * math.pi * self.radius * (self.radius + self.height)

    def to_dict(self) -> dict:
        return {
            "type": "cylinder",
            "center": list(self.center),
            "radius": self.radius,
            "height": self.height,
            "axis": self.axis,
        }


Primitive = Union[Box, Cylinder]


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    def contains(self, pts: np.ndarray) -> np.ndarray:
        d = pts - np.asarray(self.center, dtype=np.float64)
        return (d * d).sum(axis=1) <= self.radius**2

    def to_dict(self) -> dict:
        return {"type": "sphere", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class BoxRegion:
    min_corner: tuple
    max_corner: tuple

    def contains(self, pts: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.min_corner, dtype=np.float64)
        hi = np.asarray(self.max_corner, dtype=np.float64)
        return np.all((pts >= lo) & (pts <= hi), axis=1)

    def to_dict(self) -> dict:
        return {"type": "box", "min_corner": list(self.min_corner), "max_corner": list(self.max_corner)}


Region = Union[Sphere, BoxRegion]


@dataclass(frozen=True)
class DefectSpec:
    kind: str  # remove_region | translate_region | rotate_region
    region: Region
    translation: Optional[tuple] = None
    axis: Optional[tuple] = None
    angle_degrees: Optional[float] = None
    pivot: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("remove_region", "translate_region", "rotate_region"):
            raise SynthError(f"unknown defect kind {self.kind!r}")
        if self.kind == "translate_region" and self.translation is None:
            raise SynthError("translate_region needs a translation")
        if self.kind == "rotate_region" and (
            self.axis is None or self.angle_degrees is None or self.pivot is None
        ):
            raise SynthError("rotate_region needs axis, angle_degrees and pivot")

    def move(self, pts: np.ndarray) -> np.ndarray:
        if self.kind == "translate_region":
            return pts + np.asarray(self.translation, dtype=np.float64)
        r = rotation_about_axis(self.axis, math.radians(self.angle_degrees))
        p = np.asarray(self.pivot, dtype=np.float64)
        return (pts - p) @ r.T + p

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "region": self.region.to_dict()}
        for key in ("translation", "axis", "angle_degrees", "pivot"):
            value = getattr(self, key)
            if value is not None:
                d[key] = list(value) if isinstance(value, tuple) else value
        return d


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple
    sampling_density: float
    defects: tuple = ()
    misalignment: SimilarityTransform = field(default_factory=SimilarityTransform.identity)
    noise_sigma: Optional[float] = None  # None: a fraction of the median spacing
    seed: int = 0
    shared_sampling: bool = False
    name: str = "custom"

    def __post_init__(self):
        if not self.sampling_density > 0:
            raise SynthError("sampling_density must be positive")
        if self.noise_sigma is not None and self.noise_sigma < 0:
            raise SynthError("noise_sigma must be non-negative")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "primitives": [p.to_dict() for p in self.primitives],
            "sampling_density": self.sampling_density,
            "defects": [d.to_dict() for d in self.defects],
            "misalignment": self.misalignment.to_dict(),
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
            "shared_sampling": self.shared_sampling,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(
            primitives=tuple(_primitive_from_dict(p) for p in d["primitives"]),
            sampling_density=float(d["sampling_density"]),
            defects=tuple(_defect_from_dict(x) for x in d.get("defects", [])),
            misalignment=SimilarityTransform.from_dict(d["misalignment"])
            if d.get("misalignment")
            else SimilarityTransform.identity(),
            noise_sigma=d.get("noise_sigma"),
            seed=int(d.get("seed", 0)),
            shared_sampling=bool(d.get("shared_sampling", False)),
            name=d.get("name", "custom"),
        )


def _tup(v):
    return None if v is None else tuple(float(x) for x in v)


def _primitive_from_dict(d: dict) -> Primitive:
    if d["type"] == "box":
        return Box(_tup(d["center"]), _tup(d["size"]))
    if d["type"] == "cylinder":
        return Cylinder(_tup(d["center"]), float(d["radius"]), float(d["height"]), d.get("axis", "z"))
    raise SynthError(f"unknown primitive type {d['type']!r}")


def _region_from_dict(d: dict) -> Region:
    if d["type"] == "sphere":
        return Sphere(_tup(d["center"]), float(d["radius"]))
    if d["type"] == "box":
        return BoxRegion(_tup(d["min_corner"]), _tup(d["max_corner"]))
    raise SynthError(f"unknown region type {d['type']!r}")


def _defect_from_dict(d: dict) -> DefectSpec:
    return DefectSpec(
        kind=d["kind"],
        region=_region_from_dict(d["region"]),
        translation=_tup(d.get("translation")),
        axis=_tup(d.get("axis")),
        angle_degrees=d.get("angle_degrees"),
        pivot=_tup(d.get("pivot")),
    )


@dataclass(frozen=True)
class DefectScene:
    reference: PointCloud
    current: PointCloud
    truth: GroundTruth
    generator_misalignment: SimilarityTransform
    spec: SceneSpec
    noise_sigma: float


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, stream])


def _jittered_uv(rng, width: float, length: float, density: float) -> np.ndarray:
    """Uniform points on a ``width x length`` rectangle, one candidate per cell."""
    h = 1.0 / math.sqrt(density)
    nu = max(1, math.ceil(width / h))
    nv = max(1, math.ceil(length / h))
    iu, iv = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    jitter = rng.random((nu * nv, 2))
    uv = (np.column_stack([iu.ravel(), iv.ravel()]) + jitter) * h
    keep = (uv[:, 0] <= width) & (uv[:, 1] <= length)
    return uv[keep]


def _sample_box(rng, box: Box, density: float) -> list:
    out = []
    for origin, eu, ev in box.faces():
        w, l = np.linalg.norm(eu), np.linalg.norm(ev)
        if w == 0 or l == 0:
            continue
        uv = _jittered_uv(rng, w, l, density)
        out.append(origin + np.outer(uv[:, 0] / w, eu) + np.outer(uv[:, 1] / l, ev))
    return out


def _sample_cylinder(rng, cyl: Cylinder, density: float) -> list:
    axis = _AXES[cyl.axis]
    u, v = [a for a in range(3) if a != axis]
    c = np.asarray(cyl.center, dtype=np.float64)
    out = []
    if cyl.height > 0 and cyl.radius > 0:
        uv = _jittered_uv(rng, 2 * math.pi * cyl.radius, cyl.height, density)
        theta = uv[:, 0] / cyl.radius
        p = np.tile(c, (len(uv), 1))
        p[:, u] += cyl.radius * np.cos(theta)
        p[:, v] += cyl.radius * np.sin(theta)
        p[:, axis] += uv[:, 1] - cyl.height / 2
        out.append(p)
    if cyl.radius > 0:
        for side in (-0.5, 0.5):
            uv = _jittered_uv(rng, 2 * cyl.radius, 2 * cyl.radius, density) - cyl.radius
            uv = uv[(uv * uv).sum(axis=1) <= cyl.radius**2]
            p = np.tile(c, (len(uv), 1))
            p[:, u] += uv[:, 0]
            p[:, v] += uv[:, 1]
            p[:, axis] += side * cyl.height
            out.append(p)
    return out


def surface_area(primitives) -> float:
    return float(sum(p.area() for p in primitives))


def sample_surface(primitives, density: float, seed: int = 0) -> PointCloud:
    """Area-uniform sample of every primitive's surface."""
    if isinstance(primitives, (Box, Cylinder)):
        primitives = [primitives]
    for p in primitives:
        if isinstance(p, Box) and min(p.size) < 0:
            raise SynthError("box sizes must be non-negative")
        if isinstance(p, Cylinder) and (p.radius < 0 or p.height < 0):
            raise SynthError("cylinder radius and height must be non-negative")
    if not density > 0:
        raise SynthError("sampling density must be positive")
    if surface_area(primitives) <= 0:
        raise SynthError("degenerate shape")
    rng = _rng(seed, 0)
    chunks = []
    for p in primitives:
        if isinstance(p, Box):
            chunks.extend(_sample_box(rng, p, density))
        else:
            chunks.extend(_sample_cylinder(rng, p, density))
    pts = np.concatenate(chunks) if chunks else np.zeros((0, 3))
    if len(pts) == 0:
        raise SynthError("degenerate shape")
    return PointCloud(pts)


def select(cloud: PointCloud, region: Region) -> np.ndarray:
    return region.contains(cloud.points)


def apply_defects(cloud: PointCloud, defects) -> tuple[PointCloud, np.ndarray]:
    """Inject defects; returns the new cloud and a per-point defect id.

    Ids are defect positions in ``defects`` and ``-1`` marks clean points.
    Every selection is evaluated on the input cloud, so defects do not
    compound. Removed points vanish; moved points keep their order.
    """
    pts = cloud.points.copy()
    ids = np.full(len(pts), -1, dtype=np.int64)
    removed = np.zeros(len(pts), dtype=bool)
    for k, defect in enumerate(defects):
        sel = select(cloud, defect.region)
        if not np.any(sel):
            raise SynthError(f"defect selects no points (defect {k})")
        ids[sel] = k
        if defect.kind == "remove_region":
            removed |= sel
        else:
            pts[sel] = defect.move(cloud.points[sel])
    keep = ~removed
    out = PointCloud(
        pts[keep],
        None if cloud.colors is None else cloud.colors[keep],
        None if cloud.labels is None else cloud.labels[keep],
    )
    return out, ids[keep]


def generate(spec: SceneSpec) -> DefectScene:
    ref_clean = sample_surface(spec.primitives, spec.sampling_density, _seed(spec, _STREAM_REFERENCE))
    if spec.shared_sampling:
        cur_base = ref_clean
    else:
        cur_base = sample_surface(spec.primitives, spec.sampling_density, _seed(spec, _STREAM_CURRENT))

    ref_ids = np.full(len(ref_clean), -1, dtype=np.int64)
    for k, defect in enumerate(spec.defects):
        # removed and moved parts both vacate their reference location
        ref_ids[select(ref_clean, defect.region)] = k
    cur_clean, cur_ids = apply_defects(cur_base, spec.defects)

    sigma = spec.noise_sigma
    if sigma is None:
        spacing = float(np.median(KdTree(ref_clean).nearest_other_distances()))
        sigma = DEFAULT_NOISE_FRACTION * spacing
    ref_pts = ref_clean.points
    cur_pts = cur_clean.points
    if sigma > 0:
        ref_pts = ref_pts + _rng(spec.seed, _STREAM_NOISE_REFERENCE).normal(0, sigma, ref_pts.shape)
        cur_pts = cur_pts + _rng(spec.seed, _STREAM_NOISE_CURRENT).normal(0, sigma, cur_pts.shape)
    cur_pts = apply_points(spec.misalignment, cur_pts)

    truth = GroundTruth(ref_ids >= 0, cur_ids >= 0, ref_ids, cur_ids)
    return DefectScene(
        reference=PointCloud(ref_pts),
        current=PointCloud(cur_pts),
        truth=truth,
        generator_misalignment=spec.misalignment,
        spec=spec,
        noise_sigma=float(sigma),
    )


def _seed(spec: SceneSpec, stream: int) -> int:
    return int(_rng(spec.seed, stream).integers(0, 2**31 - 1))


# ---------------------------------------------------------------------------
# presets


def tower_primitives() -> tuple:
    """Stepped tower with a side bracket and a hinged hammer; centred near the origin."""
    return (
        Box((0.0, 0.0, -0.9), (1.2, 0.9, 0.6)),  # base
        Box((0.1, -0.05, -0.2), (0.8, 0.6, 0.8)),  # middle
        Box((0.15, 0.0, 0.45), (0.5, 0.4, 0.5)),  # top
        Cylinder((0.15, 0.0, 0.9), 0.08, 0.4),  # mast
        Box((0.7, -0.05, -0.1), (0.2, 0.3, 0.2)),  # bracket on the +x face
        Box((-0.45, 0.0, 0.0), (0.1, 0.08, 0.5)),  # hammer handle
        Box((-0.45, 0.0, 0.3), (0.14, 0.3, 0.12)),  # hammer head
    )


def tower_defects() -> tuple:
    return (
        # top box and mast removed
        DefectSpec("remove_region", BoxRegion((-0.11, -0.21, 0.21), (0.41, 0.21, 1.11))),
        # bracket shifted along +y
        DefectSpec(
            "translate_region",
            BoxRegion((0.59, -0.21, -0.21), (0.81, 0.11, 0.01)),
            translation=(0.0, 0.4, 0.0),
        ),
        # hammer swung about its lower end
        DefectSpec(
            "rotate_region",
            BoxRegion((-0.53, -0.16, -0.26), (-0.37, 0.16, 0.37)),
            axis=(0.0, 1.0, 0.0),
            angle_degrees=-60.0,
            pivot=(-0.45, 0.0, -0.25),
        ),
    )


def shiba_primitives() -> tuple:
    """Blocky dog: body, head, ears, four legs and a long tail along -x."""
    return (
        Box((0.0, 0.0, 0.0), (1.0, 0.5, 0.45)),  # body
        Box((0.6, 0.0, 0.3), (0.35, 0.4, 0.35)),  # head
        Box((0.6, -0.12, 0.52), (0.1, 0.08, 0.1)),  # ear
        Box((0.6, 0.12, 0.52), (0.1, 0.08, 0.1)),  # ear
        Box((0.35, -0.17, -0.4), (0.12, 0.12, 0.35)),
        Box((0.35, 0.17, -0.4), (0.12, 0.12, 0.35)),
        Box((-0.35, -0.17, -0.4), (0.12, 0.12, 0.35)),
        Box((-0.35, 0.17, -0.4), (0.12, 0.12, 0.35)),
        Box((-0.85, 0.0, 0.15), (0.7, 0.1, 0.1)),  # tail
    )


def shiba_defects() -> tuple:
    return (DefectSpec("remove_region", BoxRegion((-1.21, -0.06, 0.09), (-0.505, 0.06, 0.21))),)


def chair_primitives() -> tuple:
    legs = tuple(
        Cylinder((x, y, -0.45), 0.04, 0.9) for x in (-0.4, 0.4) for y in (-0.4, 0.4)
    )
    return legs + (
        Box((0.0, 0.0, 0.05), (0.95, 0.95, 0.1)),  # seat
        Box((-0.45, 0.0, 0.6), (0.08, 0.95, 1.0)),  # backrest
        Box((0.4, -0.45, 0.2), (0.05, 0.05, 0.2)),  # armrest posts
        Box((0.4, 0.45, 0.2), (0.05, 0.05, 0.2)),
        Box((0.0, -0.45, 0.33), (0.8, 0.1, 0.06)),  # left armrest
        Box((0.0, 0.45, 0.33), (0.8, 0.1, 0.06)),  # right armrest
    )


def chair_defects() -> tuple:
    return (
        DefectSpec(
            "translate_region",
            BoxRegion((-0.405, 0.39, 0.295), (0.405, 0.51, 0.365)),
            translation=(0.0, 0.0, 0.25),
        ),
    )


PRESETS = {
    # name: (primitives, defects, target point count, default misalignment)
    "tower": (tower_primitives, tower_defects, 20000, (12.0, (0.3, 0.5, 0.8), (0.1, -0.05, 0.05), 1.0)),
    "shiba-tail": (shiba_primitives, shiba_defects, 15000, (8.0, (0.0, 0.0, 1.0), (0.05, 0.1, 0.0), 1.0)),
    "chair-armrest": (chair_primitives, chair_defects, 20000, (10.0, (1.0, 0.2, 0.3), (-0.1, 0.05, 0.1), 1.0)),
}


def preset(
    name: str,
    seed: int = 0,
    points: Optional[int] = None,
    misalignment: Optional[SimilarityTransform] = None,
    defects: bool = True,
    noise_sigma: Optional[float] = None,
    shared_sampling: bool = False,
) -> SceneSpec:
    """Scene spec for a bundled preset; ``points`` sets the expected cloud size."""
    try:
        make_prims, make_defects, default_points, mis = PRESETS[name]
    except KeyError:
        raise SynthError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    prims = make_prims()
    density = (points or default_points) / surface_area(prims)
    if misalignment is None:
        angle, axis, t, s = mis
        misalignment = SimilarityTransform(rotation_about_axis(axis, math.radians(angle)), t, s)
    return SceneSpec(
        primitives=prims,
        sampling_density=density,
        defects=make_defects() if defects else (),
        misalignment=misalignment,
        noise_sigma=noise_sigma,
        seed=seed,
        shared_sampling=shared_sampling,
        name=name,
    )
