"""Command-line entry point: ``lingopt <command> [flags]``.

Exit codes: 0 success, 1 internal error, 2 usage error, 3 backend error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .backend import BackendServer, ScriptedBackend, ToyBackend, open_backend
from .backend.base import Backend, ImageRef
from .backend.http import ENV_URL
from .errors import BackendError, CheckpointError, LingoptError, PipelineError, ShapeError
from .evalharness import (
    EvalConfig,
    EvalReport,
    diff_reports,
    evaluate,
    load_catalog,
    load_dataset,
    loop_modes,
    run_ablation_grid,
    standard_modes,
)
from .pipeline import PipelineConfig, RoundsMode, optimize
from .scoring import Instruction, compute_ias

log = logging.getLogger("lingopt")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_BACKEND = 0, 1, 2, 3


class UsageError(Exception):
    pass


# flag name -> (config section, key)
CONFIG_KEYS = {
    "backend": ("backend", "backend"),
    "rounds_mode": ("pipeline", "mode"),
    "rounds": ("pipeline", "rounds"),
    "guard": ("pipeline", "guard"),
    "decimals": ("pipeline", "decimals"),
    "mode": ("eval", "mode"),
    "metric": ("eval", "metric"),
    "template": ("eval", "template"),
    "parallelism": ("eval", "parallelism"),
    "steps": ("train", "steps"),
    "warmup": ("train", "warmup"),
    "peak_lr": ("train", "peak_lr"),
    "floor_lr": ("train", "floor_lr"),
    "batch_size": ("train", "batch_size"),
}

DEFAULTS = {
    "rounds_mode": "standard_1r",
    "rounds": 1,
    "guard": False,
    "decimals": 4,
    "mode": "generation",
    "metric": "accuracy",
    "template": "<Image>Question: {} \\n Short answer:",
    "parallelism": 1,
    "steps": 2000,
    "warmup": 100,
    "peak_lr": 1e-2,
    "floor_lr": 0.0,
    "batch_size": 16,
}


def _apply_config(args: argparse.Namespace) -> None:
    """Fill flags left unset from the config file, then from the defaults."""
    parser = configparser.ConfigParser(interpolation=None)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    for name, (section, key) in CONFIG_KEYS.items():
        if not hasattr(args, name) or getattr(args, name) is not None:
            continue
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            default = DEFAULTS.get(name)
            try:
                if isinstance(default, bool):
                    value = raw.strip().lower() in ("1", "true", "yes", "on")
                elif isinstance(default, int):
                    value = int(raw)
                elif isinstance(default, float):
                    value = float(raw)
                else:
                    value = raw
            except ValueError as exc:
                raise UsageError(f"config [{section}] {key}: {exc}") from exc
            setattr(args, name, value)
        elif name in DEFAULTS:
            setattr(args, name, DEFAULTS[name])
    if hasattr(args, "template") and args.template is not None:
        args.template = args.template.replace("\\n", "\n")


def _backend(args) -> Backend:
    spec = args.backend or (f"http:{os.environ[ENV_URL]}" if os.environ.get(ENV_URL) else None)
    if not spec:
        raise UsageError("a backend is required: --backend toy:<ckpt> or http:<url>")
    try:
        backend = open_backend(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    except (OSError, CheckpointError) as exc:
        raise BackendError(f"cannot open backend {spec}: {exc}") from exc
    if isinstance(backend, ToyBackend):
        backend.seed = args.seed
    return backend


def _image(arg: Optional[str]) -> Optional[ImageRef]:
    """A readable grid file becomes an inline image; anything else is a reference."""
    if arg is None:
        return None
    path = Path(arg)
    if path.is_file():
        from .toymodel.image import ImageGrid

        try:
            return ImageRef.inline(ImageGrid.load(path))
        except (OSError, CheckpointError, ShapeError, ValueError) as exc:
            raise BackendError(f"cannot read image {arg}: {exc}") from exc
    return ImageRef.ref(arg)


def _pipeline_config(args) -> PipelineConfig:
    try:
        return PipelineConfig(
            rounds_mode=RoundsMode(args.rounds_mode),
            rounds=args.rounds,
            guard_fallback=args.guard,
            score_decimals=args.decimals,
        )
    except (ValueError, LingoptError) as exc:
        raise UsageError(str(exc)) from exc


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_healthy(backend: Backend) -> None:
    status = backend.healthcheck()
    if not status.ok:
        raise BackendError(f"backend unavailable: {status.detail or status.status}")


def cmd_optimize(args) -> int:
    cfg = _pipeline_config(args)
    with _backend(args) as backend:
        _require_healthy(backend)
        out = _out_dir(args)
        echo = {"backend": args.backend, "image": args.image, "seed": args.seed, "pipeline": cfg.to_dict()}
        (out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        image = _image(args.image)
        try:
            final, trace = optimize(backend, image, Instruction(args.instruction), cfg)
        except PipelineError as exc:
            if exc.trace is not None:
                exc.trace.write(out / "trace.jsonl")
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_BACKEND
    trace.write(out / "trace.jsonl")
    print(final.text)
    return EXIT_OK


def cmd_score(args) -> int:
    with _backend(args) as backend:
        _require_healthy(backend)
        image = _image(args.image)
        for text in args.instructions:
            print(f"{text}\t{compute_ias(backend, image, text):.6f}")
    return EXIT_OK


def _training_data(args):
    from .toydata import toy_records, toy_vocabulary, training_examples
    from .toymodel.image import ImageGrid
    from .toymodel.train import TrainExample

    if not args.data:
        records = toy_records()
        return training_examples(records), toy_vocabulary(records)
    records = load_dataset(args.data)
    base = Path(args.data).parent
    examples = []
    for ex, rec in zip(training_examples(records), records):
        img = ex.image
        if img is None and rec.image is not None:
            path = Path(rec.image.value)
            img = ImageGrid.load(path if path.is_absolute() else base / path)
        examples.append(TrainExample(img, ex.prompt, ex.target))
    return examples, toy_vocabulary(records)


def cmd_init_toy(args) -> int:
    from .toydata import toy_vocabulary
    from .toymodel import checkpoint, init_params, uniform_params
    from .toymodel.vocab import SPECIALS, Vocabulary

    vocab = Vocabulary(list(SPECIALS)) if args.vocab == "specials" else toy_vocabulary()
    make = uniform_params if args.uniform else init_params
    params = make(vocab, seed=args.seed)
    out = _out_dir(args)
    checkpoint.save(params, out / "toy.ckpt")
    print(out / "toy.ckpt")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    from .toymodel import checkpoint, init_params
    from .toymodel.model import ALIGNMENT_TENSORS
    from .toymodel.train import TrainSchedule, train

    examples, vocab = _training_data(args)
    params = init_params(vocab, seed=args.seed)
    if args.alignment_only:
        params.freeze_all_but(ALIGNMENT_TENSORS)
    if args.freeze:
        params.set_trainable([n.strip() for n in args.freeze.split(",") if n.strip()], False)
    try:
        sched = TrainSchedule(
            total_steps=args.steps,
            warmup_steps=args.warmup,
            peak_lr=args.peak_lr,
            floor_lr=args.floor_lr,
            batch_size=args.batch_size,
            seed=args.seed,
        )
    except LingoptError as exc:
        raise UsageError(str(exc)) from exc
    result = train(examples, params, sched, log_every=200 if args.verbose else 0)
    out = _out_dir(args)
    checkpoint.save(result.params, out / "toy.ckpt")
    with open(out / "loss_trace.tsv", "w", encoding="utf-8") as fh:
        result.write_trace(fh)
    print(f"final_loss\t{result.final_loss:.6f}")
    return EXIT_OK


def _eval_config(args, **extra) -> EvalConfig:
    template = args.template
    catalog = load_catalog()
    if template in catalog:
        template = catalog[template]
    try:
        return EvalConfig(
            mode=args.mode,
            metric=args.metric,
            initial_instruction_template=template,
            parallelism=args.parallelism,
            **extra,
        )
    except LingoptError as exc:
        raise UsageError(str(exc)) from exc


def cmd_eval(args) -> int:
    records = load_dataset(args.data)
    cfg = _eval_config(args, pipeline_enabled=args.aio, pipeline=_pipeline_config(args))
    with _backend(args) as backend:
        _require_healthy(backend)
        report = evaluate(backend, records, cfg)
    report.write(_out_dir(args) / "report.jsonl")
    print(f"{report.metric}\t{report.value:.6f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    records = load_dataset(args.data)
    modes = standard_modes() + loop_modes(args.loop_rounds)
    with _backend(args) as backend:
        _require_healthy(backend)
        grid = run_ablation_grid(backend, records, modes, _eval_config(args))
    grid.write(_out_dir(args))
    for mode in modes:
        report = grid.reports.get(mode.name)
        value = f"{report.value:.6f}" if report else "failed"
        print(f"{mode.name}\t{value}")
    return EXIT_OK if grid.complete else EXIT_INTERNAL


def cmd_diff(args) -> int:
    flips = diff_reports(EvalReport.read(args.before), EvalReport.read(args.after))
    for flip in flips:
        print(json.dumps(flip, sort_keys=True))
    return EXIT_OK


def cmd_stub_server(args) -> int:
    if args.script:
        backend: Backend = ScriptedBackend.from_file(args.script)
    elif args.backend:
        backend = _backend(args)
    else:
        raise UsageError("stub-server needs --script or --backend")
    server = BackendServer(backend, args.host, args.port)
    print(server.url, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server._httpd.server_close()
    return EXIT_OK


def cmd_make_toy_data(args) -> int:
    from .toydata import write_toy_data

    paths = write_toy_data(_out_dir(args))
    print(paths["dataset"])
    return EXIT_OK


def _common(p: argparse.ArgumentParser, backend: bool = False, out_required: bool = True) -> None:
    p.add_argument("--config", help="key=value config file with [section] headers; flags override it")
    p.add_argument("--seed", type=int, default=7, help="random seed (default: 7)")
    p.add_argument("--out", required=out_required, help="directory for every file the command writes")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    if backend:
        p.add_argument("--backend", help="toy:<checkpoint> or http:<url> (env LINGOPT_BACKEND_URL)")


def _pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rounds-mode", dest="rounds_mode", choices=[m.value for m in RoundsMode],
                   help="comparison rounds mode (default: standard_1r)")
    p.add_argument("--rounds", type=int, help="rounds for rewriting_xr / loop_xr, 1-4 (default: 1)")
    p.add_argument("--guard", action="store_true", default=None,
                   help="return the lowest-IAS instruction seen instead of the last one")
    p.add_argument("--decimals", type=int, help="score decimals in the comparison prompt (default: 4)")


def _eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="line-delimited JSON dataset")
    p.add_argument("--mode", choices=["generation", "ranking"], help="evaluation mode (default: generation)")
    p.add_argument("--metric", choices=["accuracy", "mrr"], help="headline metric (default: accuracy)")
    p.add_argument("--template", help="catalog name or literal template with {} slots")
    p.add_argument("--parallelism", type=int, help="records evaluated concurrently (default: 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lingopt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lingopt {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("optimize", help="optimize one instruction for an image")
    _common(p, backend=True)
    p.add_argument("--image", help="grid file or image reference understood by the backend")
    p.add_argument("instruction", help="initial instruction text")
    _pipeline_flags(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("score", help="print the IAS of each instruction")
    _common(p, backend=True, out_required=False)
    p.add_argument("--image", help="grid file or image reference understood by the backend")
    p.add_argument("instructions", nargs="+", help="instruction texts")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("init-toy", help="write an untrained toy checkpoint")
    _common(p)
    p.add_argument("--uniform", action="store_true", help="zero output head: uniform next-token distribution")
    p.add_argument("--vocab", choices=["toy", "specials"], default="toy",
                   help="built-in corpus vocabulary or only the 4 special tokens")
    p.set_defaults(func=cmd_init_toy)

    p = sub.add_parser("train-toy", help="train the toy model and write a checkpoint")
    _common(p)
    p.add_argument("--data", help="dataset to train on (default: built-in toy corpus)")
    p.add_argument("--steps", type=int, help="optimizer steps (default: 2000)")
    p.add_argument("--warmup", type=int, help="linear warmup steps (default: 100)")
    p.add_argument("--peak-lr", dest="peak_lr", type=float, help="learning rate after warmup (default: 0.01)")
    p.add_argument("--floor-lr", dest="floor_lr", type=float, help="starting and final learning rate (default: 0)")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="examples per step (default: 16)")
    p.add_argument("--freeze", help="comma-separated tensor names to keep frozen")
    p.add_argument("--alignment-only", dest="alignment_only", action="store_true",
                   help="train only patch_embed and the alignment projections")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("eval", help="zero-shot evaluation, writes report.jsonl")
    _common(p, backend=True)
    _eval_flags(p)
    p.add_argument("--aio", action="store_true", help="optimize each instruction before answering")
    _pipeline_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="AIO off / rewrite-only / full plus loop rounds 1..N")
    _common(p, backend=True)
    _eval_flags(p)
    p.add_argument("--loop-rounds", dest="loop_rounds", type=int, default=4,
                   help="largest loop_xr round count (default: 4)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("diff", help="list records whose correctness flipped between two reports")
    _common(p, out_required=False)
    p.add_argument("before", help="baseline report")
    p.add_argument("after", help="comparison report")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("stub-server", help="serve a fixture script (or a backend) over HTTP until SIGINT")
    _common(p, backend=True, out_required=False)
    p.add_argument("--script", help="JSON fixture script for the scripted stub")
    p.add_argument("--host", default="127.0.0.1", help="bind address (default: 127.0.0.1)")
    p.add_argument("--port", type=int, default=8765, help="port, 0 for any free one (default: 8765)")
    p.set_defaults(func=cmd_stub_server)

    p = sub.add_parser("make-toy-data", help="write the built-in toy dataset and image files")
    _common(p)
    p.set_defaults(func=cmd_make_toy_data)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        _apply_config(args)
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lingopt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BackendError as exc:
        print(f"lingopt: backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except LingoptError as exc:
        print(f"lingopt: error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except OSError as exc:
        # an explicitly given path that cannot be read or written
        print(f"lingopt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        log.debug("unhandled error", exc_info=True)
        print(f"lingopt: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
