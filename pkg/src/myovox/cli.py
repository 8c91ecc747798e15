"""Batch entry point: solve | extract | fibers | render | serve.

Exit codes: 0 ok, 2 input problem, 3 solver failure, 4 structural violation.
"""

import argparse
import sys

from .errors import ParseError, SketchError, SolverError, StructuralError, TraceError

EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_STRUCTURAL = 4


def build_parser():
    p = argparse.ArgumentParser(prog="myovox",
                                description="Volumetric muscle modelling pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="scene config JSON")
        sp.add_argument("--out", help="override output directory")
        sp.add_argument("--alpha", type=float, help="override solve alpha")
        sp.add_argument("--d-fat", type=float, dest="d_fat",
                        help="override fat tissue value at the skin")
        sp.add_argument("--eps", type=float,
                        help="override envelope eps (relative)")

    for name in ("solve", "extract", "fibers", "render"):
        common(sub.add_parser(name))

    serve = sub.add_parser("serve")
    common(serve)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8008)
    serve.add_argument("--ui-dir", default=None,
                       help="static studio files to serve at /")
    return p


def load_config(args):
    from .sceneio import SceneConfig
    config = SceneConfig.load(args.config)
    if args.out:
        config.data["output_dir"] = args.out
    if args.alpha is not None:
        config.data["solve"]["alpha"] = args.alpha
    if args.d_fat is not None:
        config.data["solve"]["d_fat"] = args.d_fat
    if args.eps is not None:
        config.data["eps"]["envelope_rel"] = args.eps
    return config


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        from . import pipeline
        if args.command == "solve":
            pipeline.run_solve(config)
        elif args.command == "extract":
            pipeline.run_extract(config)
        elif args.command == "fibers":
            labeled, meshes, _ = pipeline.run_extract(config)
            pipeline.run_fibers(config, labeled=labeled, meshes=meshes)
        elif args.command == "render":
            pipeline.run_render(config)
        elif args.command == "serve":
            import uvicorn
            from .service import build_app
            app = build_app(config, ui_dir=args.ui_dir)
            uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
        return 0
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ParseError, SketchError, TraceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except StructuralError as exc:
        print(f"structural error: {exc}", file=sys.stderr)
        return EXIT_STRUCTURAL
    except Exception as exc:  # jsonschema and friends count as input errors
        if type(exc).__module__.startswith("jsonschema"):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        raise


if __name__ == "__main__":
    sys.exit(main())
