"""Full-frame rendering on top of the estimators: primary rays, material
routing, env backdrop for misses, and companion variance images.
"""

import numpy as np

from flowtrace import estimator as est, lighting, scene as scn
from flowtrace import geom

CHUNK = 4096


def render_camera(
    model,
    cam: scn.CameraConfig,
    cfg: est.SamplerConfig,
    seed: int,
    spp: int = 1,
    iteration: int = 0,
    spec_snap=None,
    diff_snap=None,
):
    """Render one view; returns (rgb image, supplement-variance image).

    spp multiplies every per-ray sample budget (strata get distinct stream
    ids per repeat and the repeats are averaged). Misses show the environment
    backdrop and carry zero variance.
    """
    rays = scn.camera_rays(cam)
    hits = geom.intersect(rays, model.geometry)
    h, w = cam.height, cam.width
    img = np.zeros((h * w, 3))
    var = np.zeros(h * w)
    miss = ~hits.valid
    if miss.any():
        img[miss] = lighting.env_lookup(model.envmap, rays.direction[miss])
    idx_all = np.nonzero(hits.valid)[0]
    light_fn = model.light_fn()
    for start in range(0, idx_all.size, CHUNK):
        idx = idx_all[start : start + CHUNK]
        x = hits.position[idx]
        frame = geom.build_frame(hits.normal[idx])
        prim = hits.prim_id[idx]
        a, m, r = model.material_at(prim, x)
        ctx = est.ShadingContext(
            position=x, frame=frame, w_o=-rays.direction[idx],
            albedo=a, metallic=m, roughness=r, prim_id=prim,
        )
        rgb_acc = np.zeros((idx.size, 3))
        var_acc = np.zeros(idx.size)
        for rep in range(spp):
            streams = est.StreamSpec(seed=seed, pixel_ids=idx,
                                     iteration=iteration * spp + rep)
            spec = est.estimate_specular(ctx, light_fn, cfg, streams,
                                         specular_flow=spec_snap)
            diff = est.estimate_diffuse(ctx, light_fn, cfg, streams,
                                        diffuse_flow=diff_snap)
            full = est.combine(diff, spec)
            rgb_acc += full.rgb
            var_acc += full.supp_var
        img[idx] = rgb_acc / spp
        var[idx] = var_acc / spp
    return img.reshape(h, w, 3), var.reshape(h, w)


def render_references(model, cfg_scene: scn.SceneConfig, seed: int,
                      n_diffuse: int = 512, n_specular: int = 256):
    """Ground-truth-quality renders of every camera with the pre-defined
    samplers (used to build training references and relighting targets)."""
    cfg = est.SamplerConfig(specular="ggx", diffuse="cosine",
                            n_s=n_specular, n_d_cos=n_diffuse)
    # keep reference streams disjoint from training streams (different seed)
    return [
        render_camera(model, cam, cfg, seed=seed + 7_777_777 + i)[0]
        for i, cam in enumerate(cfg_scene.cameras)
    ]
