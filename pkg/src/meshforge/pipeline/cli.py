"""``meshforge`` command line.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..errors import ConfigError, NumericError, SceneError
from ..scene_io import export_image, load_scene
from .config import OptimConfig, load_config

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("meshforge")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _config(args) -> OptimConfig:
    cfg = load_config(args.config) if args.config else OptimConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg.validate()


def _require(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise ConfigError(f"--{n} is required for '{args.command}'")


def cmd_synth(args) -> int:
    from .synthetic import make_synthetic_scene

    _require(args, "scene")
    make_synthetic_scene(
        args.scene, base=args.base, texture_pattern=args.texture, env_pattern=args.env,
        n_views=args.views, W=args.width, H=args.height, seed=args.seed or 0, n_heldout=args.heldout,
    )
    print(f"wrote synthetic scene to {args.scene}")
    return EXIT_OK


def cmd_init(args) -> int:
    from .model import ModelState
    from .optimize import export_run, initialize, new_state, save_state

    _require(args, "scene", "out")
    cfg = _config(args)
    scene = load_scene(args.scene)
    pts = initialize(scene, cfg)
    state: ModelState = new_state(scene, cfg, pts)
    out = Path(args.out)
    save_state(state, out / "init")
    export_run(state, out / "init_export", name="init")
    print(f"initialized {len(pts)} points ({cfg.init_mode}); state in {out / 'init'}")
    return EXIT_OK


def cmd_optimize(args) -> int:
    from .optimize import optimize

    _require(args, "scene", "out")
    cfg = _config(args)
    scene = load_scene(args.scene)

    def progress(stage, epoch, row, elapsed):
        print(f"[{stage}] epoch {epoch:4d}  L_c={row[1]:.5f} L_s={row[2]:.5f} "
              f"L_d={row[3]:.5f} total={row[4]:.5f}  ({elapsed:.0f}s)", flush=True)

    art = optimize(scene, cfg, args.out, progress=None if args.quiet else progress)
    print(f"finished {art.report['epochs']} epochs in {art.report['runtime_s']:.1f}s; outputs in {args.out}")
    return EXIT_OK


def _state_dir(out: Path) -> Path:
    for name in ("final", "init"):
        if (out / name / "state.json").exists():
            return out / name
    raise SceneError(f"no run state found under {out} (expected final/ or init/)")


def cmd_render(args) -> int:
    from .optimize import load_state, render_view

    _require(args, "scene", "out")
    out = Path(args.out)
    state = load_state(_state_dir(out))
    scene = load_scene(args.scene)
    dest = out / "renders"
    dest.mkdir(parents=True, exist_ok=True)
    idx = range(len(scene.views)) if args.view is None else [args.view]
    for i in idx:
        png, _ = export_image(render_view(state, scene.views[i]), dest / f"view_{i:03d}")
        print(png)
    return EXIT_OK


def cmd_export(args) -> int:
    from .optimize import export_run, load_state

    _require(args, "out")
    out = Path(args.out)
    state = load_state(_state_dir(out))
    path = export_run(state, out / "export")
    print(path)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .optimize import evaluate, load_state

    _require(args, "scene", "out")
    out = Path(args.out)
    state = load_state(_state_dir(out))
    report = evaluate(state, args.scene, n_samples=args.samples, seed=args.seed or 0)
    (out / "report.json").write_text(json.dumps(report, indent=1))
    for k, v in report.items():
        if isinstance(v, float):
            print(f"{k}: {v:.6g}")
    if not all(np.isfinite(v) for v in report.values() if isinstance(v, float)):
        raise NumericError("evaluation produced non-finite values")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "init": cmd_init,
    "optimize": cmd_optimize,
    "render": cmd_render,
    "export": cmd_export,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="meshforge", description="Multi-view textured mesh recovery.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="plain-text key = value run configuration")
    p.add_argument("--scene", help="dataset directory (synth: where to write it)")
    p.add_argument("--out", help="run directory")
    p.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--quiet", action="store_true", help="no per-epoch progress")
    g = p.add_argument_group("synth")
    g.add_argument("--base", default="bumpy_sphere", choices=["sphere", "bumpy_sphere", "cube", "two_blobs"])
    g.add_argument("--texture", default="smooth", choices=["smooth", "constant"])
    g.add_argument("--env", default="sky", choices=["sky", "uniform"])
    g.add_argument("--views", type=int, default=24)
    g.add_argument("--width", type=int, default=256)
    g.add_argument("--height", type=int, default=256)
    g.add_argument("--heldout", type=int, default=4)
    g = p.add_argument_group("render / eval")
    g.add_argument("--view", type=int, help="render only this view index")
    g.add_argument("--samples", type=int, default=100000, help="Chamfer samples per mesh")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SceneError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
