"""Command-line tool: render, train, variance-report, relight, gradcheck.

Outputs are linear-radiance PFMs with PPM previews; every command honors
--seed and reproduces its outputs bit-exactly on rerun. Exit codes: 0 ok,
2 configuration error, 3 numeric failure.
"""

import argparse
import csv
import os
import sys

import numpy as np

from flowtrace import checkpoint as ckpt
from flowtrace import estimator as est
from flowtrace import lighting, pfm, render, scene as scn, train as tr
from flowtrace.errors import (
    CheckpointVersionError,
    DimensionMismatch,
    NumericFailure,
    SceneParseError,
    SceneValidationError,
)

VARIANCE_SCALE = 1000.0  # variance images are scaled for visibility


def _sampler_cfg(args) -> est.SamplerConfig:
    use_flow = args.sampler == "flow"
    return est.SamplerConfig(
        specular="flow" if use_flow else "ggx",
        diffuse="mis" if use_flow else "cosine",
        n_s=args.n_specular,
        n_d_flow=args.n_diffuse_flow,
        n_d_cos=args.n_diffuse_cos,
    )


def _build_state(cfg, args, references=None) -> tr.TrainState:
    model = tr.Model(cfg, flow_domain=args.flow_domain)
    refs = references
    if refs is None:
        refs = [np.zeros((c.height, c.width, 3)) for c in cfg.cameras]
    data = tr.TrainData(cfg, model.geometry, refs)
    schedule = tr.Schedule(
        n_warmup=args.n_warmup, n_ce=args.n_ce, n_update=args.n_update,
        total_iters=args.iters,
    )
    return tr.TrainState(
        model=model, schedule=schedule, weights=tr.LossWeights(),
        cfg=_sampler_cfg(args), data=data,
        seed=args.seed if args.seed is not None else cfg.seed,
        batch_size=args.batch,
    )


def _load_into_state(args, cfg) -> tr.TrainState:
    state = _build_state(cfg, args)
    if args.checkpoint:
        ckpt.load_checkpoint(args.checkpoint, state)
        if state.iteration >= state.schedule.n_warmup:
            tr.snapshot_update(state)
    return state


def _write_images(out: str, img: np.ndarray, var: np.ndarray | None):
    pfm.write_pfm(out, img)
    pfm.write_ppm(os.path.splitext(out)[0] + ".ppm", img)
    if var is not None:
        base, ext = os.path.splitext(out)
        vimg = np.repeat((var * VARIANCE_SCALE)[..., None], 3, axis=2)
        pfm.write_pfm(base + ".var" + ext, vimg)
        pfm.write_ppm(base + ".var.ppm", vimg)


def cmd_render(args) -> int:
    cfg = scn.parse_scene(args.scene)
    state = _load_into_state(args, cfg)
    seed = args.seed if args.seed is not None else cfg.seed
    cam = cfg.cameras[args.camera]
    img, var = render.render_camera(
        state.model, cam, _sampler_cfg(args), seed=seed, spp=args.spp,
        spec_snap=state.spec_snap, diff_snap=state.diff_snap,
    )
    _write_images(args.out, img, var)
    print(f"wrote {args.out} ({cam.width}x{cam.height}, spp={args.spp})")
    return 0


def cmd_train(args) -> int:
    cfg = scn.parse_scene(args.scene)
    seed = args.seed if args.seed is not None else cfg.seed
    if args.references:
        refs = [
            pfm.read_pfm(os.path.join(args.references, f"view{i:02d}.pfm"))
            for i in range(len(cfg.cameras))
        ]
    else:
        # self-supervised fixture path: render references from the scene's
        # own fixed materials (useful for sampler-learning runs)
        gt = tr.Model(cfg, flow_domain=args.flow_domain)
        refs = render.render_references(gt, cfg, seed)
    state = _build_state(cfg, args, references=refs)
    log_path = args.out + ".metrics.csv"
    with open(log_path, "w", newline="") as fh:
        writer = None
        for _ in range(state.schedule.total_iters):
            metrics = tr.train_step(state)
            if writer is None:
                writer = csv.DictWriter(fh, fieldnames=list(metrics))
                writer.writeheader()
            writer.writerow(metrics)
    ckpt.save_checkpoint(args.out, state)
    print(f"wrote {args.out} and {log_path}")
    return 0


def cmd_variance_report(args) -> int:
    cfg = scn.parse_scene(args.scene)
    state = _load_into_state(args, cfg)
    seed = args.seed if args.seed is not None else cfg.seed
    cam = cfg.cameras[args.camera]
    rows = []
    notes = []
    for sampler in args.samplers.split(","):
        for n in [int(v) for v in args.n_list.split(",")]:
            if n < 2:
                notes.append(f"skipped {sampler} N={n}: variance needs N >= 2")
                continue
            vals = []
            for run in range(args.runs):
                cfg_s = est.SamplerConfig(
                    specular="flow" if sampler == "flow" else "ggx",
                    diffuse="cosine",
                    n_s=n,
                    n_d_cos=max(2, args.n_diffuse_cos),
                )
                _, var = render.render_camera(
                    state.model, cam, cfg_s, seed=seed + run,
                    spec_snap=state.spec_snap, diff_snap=None,
                )
                vals.append(float(var.mean()))
            rows.append((sampler, n, float(np.mean(vals)), float(np.std(vals))))
    width = max(len(r[0]) for r in rows) if rows else 8
    print(f"{'sampler':<{width}}  {'N':>6}  {'mean-var':>18}  {'std':>18}")
    for sampler, n, mean, std in rows:
        print(f"{sampler:<{width}}  {n:>6}  {mean:>18.12e}  {std:>18.12e}")
    for note in notes:
        print(f"note: {note}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sampler", "n", "mean_variance", "std_variance"])
            w.writerows(rows)
    return 0


def cmd_relight(args) -> int:
    cfg = scn.parse_scene(args.scene)
    state = _load_into_state(args, cfg)
    seed = args.seed if args.seed is not None else cfg.seed
    # swap in the new environment, then render with high-count baselines
    if args.envmap:
        state.model.envmap = lighting.EnvMap.from_texels(
            pfm.read_pfm(args.envmap), learnable=False
        )
    elif args.envmap_scene:
        state.model.envmap = scn.build_envmap(scn.parse_scene(args.envmap_scene))
    cam = cfg.cameras[args.camera]
    cfg_s = est.SamplerConfig(
        specular="ggx", diffuse="cosine", n_s=args.n_specular, n_d_cos=args.n_diffuse_cos
    )
    img, _ = render.render_camera(state.model, cam, cfg_s, seed=seed, spp=args.spp)
    _write_images(args.out, img, None)
    print(f"wrote {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from flowtrace import gradcheck

    worst = gradcheck.run_all(seed=args.seed or 0, verbose=True)
    print(f"worst relative error: {worst:.3e}")
    return 0 if worst < 1e-3 else 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowtrace")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scene=True):
        if scene:
            sp.add_argument("--scene", required=True)
        sp.add_argument("--checkpoint", default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--sampler", choices=["predefined", "flow"], default="predefined")
        sp.add_argument("--flow-domain", choices=["incident", "half"], default="half")
        sp.add_argument("--n-specular", type=int, default=128)
        sp.add_argument("--n-diffuse-flow", type=int, default=64)
        sp.add_argument("--n-diffuse-cos", type=int, default=512)
        sp.add_argument("--n-warmup", type=int, default=1000)
        sp.add_argument("--n-ce", type=int, default=500)
        sp.add_argument("--n-update", type=int, default=1000)
        sp.add_argument("--iters", type=int, default=5000)
        sp.add_argument("--batch", type=int, default=512)
        sp.add_argument("--camera", type=int, default=0)

    sp = sub.add_parser("render", help="render a linear PFM plus variance image")
    common(sp)
    sp.add_argument("--spp", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_render)

    sp = sub.add_parser("train", help="run the two-phase schedule")
    common(sp)
    sp.add_argument("--references", default=None,
                    help="directory of view%%02d.pfm reference images")
    sp.add_argument("--out", required=True, help="output checkpoint (.npz)")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("variance-report", help="mean sample variance per sampler/N")
    common(sp)
    sp.add_argument("--samplers", default="predefined,flow")
    sp.add_argument("--n-list", default="32,64,128")
    sp.add_argument("--runs", type=int, default=3)
    sp.add_argument("--out", default=None, help="CSV output path")
    sp.set_defaults(fn=cmd_variance_report)

    sp = sub.add_parser("relight", help="render fitted materials under a new envmap")
    common(sp)
    sp.add_argument("--envmap", default=None, help="PFM environment map")
    sp.add_argument("--envmap-scene", default=None,
                    help="scene file whose envmap section to use")
    sp.add_argument("--spp", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_relight)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (SceneParseError, SceneValidationError, CheckpointVersionError,
            DimensionMismatch, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
