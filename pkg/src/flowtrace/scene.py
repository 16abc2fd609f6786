"""Scene configuration: an INI-style text format with one section per entity,
validation with field-precise errors, serialization, and camera ray setup.

Example:

    [scene]
    seed = 7

    [envmap]
    constant = 1.0 1.0 1.0
    learnable = false

    [material shiny]
    albedo = 0.8 0.6 0.2
    metallic = 0.9
    roughness = 0.3

    [sphere main]
    center = 0 0 0
    radius = 1.0
    material = shiny

    [camera front]
    position = 0 -3 0.5
    look_at = 0 0 0
    up = 0 0 1
    vfov = 40
    width = 128
    height = 128

Primitives may reference a named material or the literal `learnable`, which
routes them to the trainable material field.
"""

import configparser
import io
import os
from dataclasses import dataclass, field

import numpy as np

from flowtrace import lighting, pfm
from flowtrace.brdf import Material
from flowtrace.errors import SceneParseError, SceneValidationError
from flowtrace.geom import Geometry, Rays, normalize

LEARNABLE = "learnable"
MAX_RESOLUTION = 512


@dataclass
class CameraConfig:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    vfov: float  # vertical field of view, degrees
    width: int
    height: int


@dataclass
class EnvSpec:
    kind: str  # "constant" | "path" | "lobes"
    constant: np.ndarray | None = None
    path: str | None = None
    lobes: list = field(default_factory=list)  # (direction, rgb, sharpness)
    ambient: np.ndarray | None = None  # constant floor under the lobes
    width: int = 64
    height: int = 32
    learnable: bool = False


@dataclass
class SceneConfig:
    seed: int = 0
    name: str = "scene"
    envmap: EnvSpec = field(default_factory=lambda: EnvSpec("constant", np.ones(3)))
    materials: dict = field(default_factory=dict)  # name -> Material
    spheres: list = field(default_factory=list)  # (center, radius, material_ref)
    planes: list = field(default_factory=list)  # (point, normal, material_ref)
    cameras: list = field(default_factory=list)
    indirect_enabled: bool = False
    base_dir: str = "."


def _floats(section: str, key: str, raw: str, n: int) -> np.ndarray:
    parts = raw.split()
    if len(parts) != n:
        raise SceneParseError(f"[{section}] {key}: expected {n} numbers, got {raw!r}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as e:
        raise SceneParseError(f"[{section}] {key}: {e}") from None


def _scalar(section: str, key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise SceneParseError(f"[{section}] {key}: not a number: {raw!r}") from None


def _boolean(section: str, key: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise SceneParseError(f"[{section}] {key}: not a boolean: {raw!r}")


def parse_scene(path: str) -> SceneConfig:
    """Parse and validate a scene file. Raises SceneParseError on malformed
    input and SceneValidationError on semantic problems (with the offending
    section/field named)."""
    cp = configparser.ConfigParser()
    try:
        read = cp.read(path)
    except configparser.Error as e:
        raise SceneParseError(str(e)) from None
    if not read:
        raise SceneParseError(f"cannot read scene file {path}")
    return _scene_from_parser(cp, os.path.dirname(os.path.abspath(path)))


def parse_scene_text(text: str, base_dir: str = ".") -> SceneConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise SceneParseError(str(e)) from None
    return _scene_from_parser(cp, base_dir)


def _scene_from_parser(cp: configparser.ConfigParser, base_dir: str) -> SceneConfig:
    cfg = SceneConfig(base_dir=base_dir)
    lobes = {}
    for section in cp.sections():
        items = dict(cp[section])
        head, _, label = section.partition(" ")
        if section == "scene":
            cfg.seed = int(_scalar(section, "seed", items.get("seed", "0")))
            cfg.name = items.get("name", "scene")
        elif section == "envmap":
            env = cfg.envmap
            env.learnable = _boolean(section, "learnable", items.get("learnable", "false"))
            env.width = int(_scalar(section, "width", items.get("width", "64")))
            env.height = int(_scalar(section, "height", items.get("height", "32")))
            if "path" in items:
                env.kind = "path"
                env.path = items["path"]
            elif "constant" in items:
                env.kind = "constant"
                env.constant = _floats(section, "constant", items["constant"], 3)
            else:
                env.kind = "lobes"
                if "ambient" in items:
                    env.ambient = _floats(section, "ambient", items["ambient"], 3)
        elif head == "lobe":
            lobes[label] = (
                _floats(section, "direction", items["direction"], 3),
                _floats(section, "color", items["color"], 3),
                _scalar(section, "sharpness", items.get("sharpness", "10")),
            )
        elif head == "material":
            if not label:
                raise SceneParseError(f"[{section}]: material needs a name")
            cfg.materials[label] = Material(
                albedo=_floats(section, "albedo", items.get("albedo", "0.5 0.5 0.5"), 3),
                metallic=_scalar(section, "metallic", items.get("metallic", "0")),
                roughness=_scalar(section, "roughness", items.get("roughness", "0.5")),
            )
        elif head == "sphere":
            cfg.spheres.append(
                (
                    _floats(section, "center", items["center"], 3),
                    _scalar(section, "radius", items["radius"]),
                    items.get("material", LEARNABLE).strip(),
                )
            )
        elif head == "plane":
            cfg.planes.append(
                (
                    _floats(section, "point", items["point"], 3),
                    _floats(section, "normal", items["normal"], 3),
                    items.get("material", LEARNABLE).strip(),
                )
            )
        elif head == "camera":
            cfg.cameras.append(
                CameraConfig(
                    position=_floats(section, "position", items["position"], 3),
                    look_at=_floats(section, "look_at", items["look_at"], 3),
                    up=_floats(section, "up", items.get("up", "0 0 1"), 3),
                    vfov=_scalar(section, "vfov", items.get("vfov", "40")),
                    width=int(_scalar(section, "width", items.get("width", "128"))),
                    height=int(_scalar(section, "height", items.get("height", "128"))),
                )
            )
        elif section == "indirect":
            cfg.indirect_enabled = _boolean(section, "enabled", items.get("enabled", "false"))
        else:
            raise SceneParseError(f"unknown section [{section}]")
    if lobes:
        cfg.envmap.lobes = [lobes[k] for k in sorted(lobes)]
    validate_scene(cfg)
    return cfg


def validate_scene(cfg: SceneConfig):
    if not cfg.spheres and not cfg.planes:
        raise SceneValidationError("scene has no primitives")
    if not cfg.cameras:
        raise SceneValidationError("scene has no cameras")
    for kind, prims in (("sphere", cfg.spheres), ("plane", cfg.planes)):
        for i, prim in enumerate(prims):
            ref = prim[2]
            if ref != LEARNABLE and ref not in cfg.materials:
                raise SceneValidationError(
                    f"{kind} {i}: unknown material reference {ref!r}"
                )
    for i, (_, radius, _) in enumerate(cfg.spheres):
        if radius <= 0:
            raise SceneValidationError(f"sphere {i}: radius must be > 0")
    for i, (_, n, _) in enumerate(cfg.planes):
        if np.linalg.norm(n) < 1e-9:
            raise SceneValidationError(f"plane {i}: zero normal")
    for i, cam in enumerate(cfg.cameras):
        if not (0.0 < cam.vfov < 180.0):
            raise SceneValidationError(f"camera {i}: vfov out of range")
        if cam.width * cam.height == 0 or max(cam.width, cam.height) > MAX_RESOLUTION:
            raise SceneValidationError(
                f"camera {i}: resolution must be within {MAX_RESOLUTION}^2"
            )
    env = cfg.envmap
    if env.kind == "constant" and np.any(env.constant < 0):
        raise SceneValidationError("envmap constant must be nonnegative")
    if env.height < 2 or env.width < 4:
        raise SceneValidationError("envmap resolution must be at least 2x4")


def _fmt(v) -> str:
    if isinstance(v, np.ndarray):
        return " ".join(repr(float(c)) for c in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_scene(cfg: SceneConfig) -> str:
    """Emit a scene file that parses back to an equal config."""
    out = io.StringIO()

    def sec(section, **kv):
        out.write(f"[{section}]\n")
        for k, v in kv.items():
            out.write(f"{k} = {_fmt(v)}\n")
        out.write("\n")

    sec("scene", seed=cfg.seed, name=cfg.name)
    env = cfg.envmap
    if env.kind == "constant":
        sec("envmap", constant=env.constant, learnable=env.learnable,
            width=env.width, height=env.height)
    elif env.kind == "path":
        sec("envmap", path=env.path, learnable=env.learnable,
            width=env.width, height=env.height)
    else:
        kv = dict(learnable=env.learnable, width=env.width, height=env.height)
        if env.ambient is not None:
            kv["ambient"] = env.ambient
        sec("envmap", **kv)
        for i, (d, c, s) in enumerate(env.lobes):
            sec(f"lobe {i}", direction=d, color=c, sharpness=s)
    for name, mat in cfg.materials.items():
        sec(f"material {name}", albedo=mat.albedo, metallic=mat.metallic,
            roughness=mat.roughness)
    for i, (c, r, m) in enumerate(cfg.spheres):
        sec(f"sphere {i}", center=c, radius=r, material=m)
    for i, (p, n, m) in enumerate(cfg.planes):
        sec(f"plane {i}", point=p, normal=n, material=m)
    for i, cam in enumerate(cfg.cameras):
        sec(f"camera {i}", position=cam.position, look_at=cam.look_at, up=cam.up,
            vfov=cam.vfov, width=cam.width, height=cam.height)
    sec("indirect", enabled=cfg.indirect_enabled)
    return out.getvalue()


def scene_equal(a: SceneConfig, b: SceneConfig) -> bool:
    return serialize_scene(a) == serialize_scene(b)


# ---------------------------------------------------------------------------
# derived runtime objects
# ---------------------------------------------------------------------------


def build_geometry(cfg: SceneConfig):
    """Geometry arrays plus per-primitive material routing.

    Returns (Geometry, fixed material arrays (albedo, metallic, roughness)
    indexed by material slot, learnable mask per primitive). Learnable
    primitives get slot -1.
    """
    names = sorted(cfg.materials)
    slot = {n: i for i, n in enumerate(names)}
    mats = [cfg.materials[n] for n in names]
    albedo = np.array([m.albedo for m in mats]) if mats else np.zeros((0, 3))
    metallic = np.array([m.metallic for m in mats])
    roughness = np.array([m.roughness for m in mats])

    mat_ids = []
    learnable = []
    for _, _, ref in cfg.spheres:
        learnable.append(ref == LEARNABLE)
        mat_ids.append(-1 if ref == LEARNABLE else slot[ref])
    for _, _, ref in cfg.planes:
        learnable.append(ref == LEARNABLE)
        mat_ids.append(-1 if ref == LEARNABLE else slot[ref])

    geo = Geometry(
        sphere_center=np.array([c for c, _, _ in cfg.spheres]).reshape(-1, 3),
        sphere_radius=np.array([r for _, r, _ in cfg.spheres]),
        plane_point=np.array([p for p, _, _ in cfg.planes]).reshape(-1, 3),
        plane_normal=np.array(
            [normalize(np.asarray(n, dtype=np.float64)) for _, n, _ in cfg.planes]
        ).reshape(-1, 3),
        material_id=np.array(mat_ids, dtype=np.int32),
    )
    return geo, (albedo, metallic, roughness), np.array(learnable, dtype=bool)


def build_envmap(cfg: SceneConfig) -> lighting.EnvMap:
    env = cfg.envmap
    if env.kind == "constant":
        return lighting.EnvMap.constant(env.constant, env.height, env.width, env.learnable)
    if env.kind == "path":
        tex = pfm.read_pfm(os.path.join(cfg.base_dir, env.path))
        return lighting.EnvMap.from_texels(tex, env.learnable)
    return lighting.envmap_from_lobes(env.height, env.width, env.lobes, env.learnable,
                                      ambient=env.ambient)


def scene_bounds(cfg: SceneConfig, margin: float = 0.25):
    """Axis-aligned box around all spheres (planes are unbounded and only
    contribute through the camera-visible region, which spheres dominate in
    these scenes)."""
    pts = []
    for c, r, _ in cfg.spheres:
        pts.append(np.asarray(c) - r)
        pts.append(np.asarray(c) + r)
    for p, _, _ in cfg.planes:
        pts.append(np.asarray(p, dtype=np.float64))
    for cam in cfg.cameras:
        pts.append(np.asarray(cam.look_at, dtype=np.float64))
    pts = np.array(pts)
    lo = pts.min(axis=0) - margin
    hi = pts.max(axis=0) + margin
    return lo, hi


def camera_rays(cam: CameraConfig) -> Rays:
    """Pinhole rays through pixel centers, row-major pixel order."""
    fwd = normalize(cam.look_at - cam.position)
    right = normalize(np.cross(fwd, cam.up))
    up = np.cross(right, fwd)
    tan_half = np.tan(np.deg2rad(cam.vfov) / 2.0)
    aspect = cam.width / cam.height
    j = (np.arange(cam.width) + 0.5) / cam.width * 2.0 - 1.0
    i = 1.0 - (np.arange(cam.height) + 0.5) / cam.height * 2.0
    ii, jj = np.meshgrid(i, j, indexing="ij")
    d = (
        fwd[None, None]
        + (jj * aspect * tan_half)[..., None] * right
        + (ii * tan_half)[..., None] * up
    ).reshape(-1, 3)
    d = normalize(d)
    o = np.broadcast_to(cam.position, d.shape).copy()
    return Rays(origin=o, direction=d, t_min=1e-6, t_max=np.inf)
