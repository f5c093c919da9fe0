"""Command-line entry point.

Exit codes: 0 success, 1 partial or runtime failure, 2 usage/configuration
error. With ``--json`` every failure is also written to stderr as one JSON
object per line.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .benchmark_builder import (
    BENCHMARK_IMAGES,
    build_benchmark,
    read_answers,
    read_benchmark,
    sample_images,
    write_benchmark,
)
from .chat_backend import make_backend
from .coco_ingest import (
    build_contexts,
    parse_caption_file,
    parse_instance_file,
    parse_keypoint_file,
    read_contexts,
    write_contexts,
)
from .config import RunConfig, load_config
from .dataset_assembler import assemble, stats, stats_rows, write_train_config
from .errors import ConfigError, PoseForgeError
from .generation import KIND_ALIASES, generate_samples
from .judge_evaluator import (
    MEAN_OF_RATIOS,
    RATIO_OF_MEANS,
    evaluate,
    format_table,
    format_tsv,
)
from .overlay_render import OverlayStyle, render_overlay
from .prompt_builder import load_assets
from .sample_factory import write_samples

log = logging.getLogger("poseforge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Per-invocation state: config, diagnostics and the run-log record."""

    def __init__(self, args, cfg: RunConfig):
        self.args = args
        self.cfg = cfg
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []
        self.partial = False

    def diag(self, level: str, message: str, **extra):
        if self.args.json:
            rec = {"level": level, "command": self.args.command, "message": message, **extra}
            print(json.dumps(rec, ensure_ascii=False), file=sys.stderr)
        else:
            print(f"{level}: {message}", file=sys.stderr)

    def backend(self, kind: str):
        return make_backend(
            kind,
            cache_dir=self.cfg.cache_dir,
            endpoint=self.cfg.endpoint,
            max_attempts=self.cfg.max_attempts,
            requests_per_minute=self.cfg.requests_per_minute,
        )

    def assets(self):
        return load_assets(self.cfg.assets_dir)

    def append_log(self, code: int):
        rec = {
            "time": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "version": __version__,
            "command": self.args.command,
            "exit_code": code,
            "config_sha256": self.cfg.digest(),
            "inputs": {str(p): _sha256(p) for p in self.inputs if Path(p).is_file()},
            "outputs": {str(p): _sha256(p) for p in self.outputs if Path(p).is_file()},
        }
        path = Path(self.cfg.run_log)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("a", encoding="utf-8") as f:
            f.write(json.dumps(rec) + "\n")


# subcommands

def cmd_ingest(run: Run):
    a = run.args
    run.inputs += [a.captions, a.keypoints] + ([a.instances] if a.instances else [])
    captions = parse_caption_file(a.captions)
    keypoints = parse_keypoint_file(a.keypoints)
    instances = parse_instance_file(a.instances) if a.instances else None
    min_kp = a.min_keypoints if a.min_keypoints is not None else run.cfg.min_labeled_keypoints
    contexts = build_contexts(captions, keypoints, min_kp, run.cfg.precision, instances)
    write_contexts(contexts, a.out)
    run.outputs.append(a.out)
    print(f"{len(contexts)} contexts written to {a.out}")


def cmd_generate(run: Run):
    a, cfg = run.args, run.cfg
    run.inputs.append(a.contexts)
    contexts = read_contexts(a.contexts)
    outcome = generate_samples(
        contexts,
        a.kind,
        run.backend(a.backend),
        model_name=cfg.model_name,
        temperature=cfg.temperature_generate,
        max_output_tokens=cfg.max_output_tokens,
        global_seed=cfg.global_seed,
        assets=run.assets(),
        precision=cfg.precision,
        max_in_flight=cfg.max_in_flight,
        multi_message=a.multi_message,
    )
    write_samples(outcome.samples, a.out)
    run.outputs.append(a.out)
    print(f"{len(outcome.samples)} {KIND_ALIASES[a.kind]} samples written to {a.out}")
    if outcome.failures:
        run.partial = True
        for image_id, reason in sorted(outcome.failures.items()):
            run.diag("error", f"image {image_id}: {reason}", image_id=image_id)
        run.diag("error", f"{len(outcome.failures)} images failed", failed_request_ids=outcome.failed_request_ids)


def cmd_assemble(run: Run):
    a, cfg = run.args, run.cfg
    run.inputs += a.inputs + (a.merge or [])
    assets = run.assets()
    out, manifest = assemble(
        a.inputs,
        a.out,
        global_seed=cfg.global_seed,
        precision=cfg.precision,
        asset_hashes=assets.hashes,
        model_name=cfg.model_name,
        temperature=cfg.temperature_generate,
        merge=a.merge or (),
    )
    run.outputs.append(out)
    print(json.dumps({"dataset": str(out), "total": manifest.total, "counts": manifest.counts}))


def cmd_stats(run: Run):
    a = run.args
    run.inputs.append(a.dataset)
    report = stats(a.dataset)
    print(json.dumps(report, indent=2))
    if a.report_dir:
        from .plotting import plot_kind_split

        d = Path(a.report_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "stats.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
        (d / "stats.tsv").write_text("\n".join("\t".join(map(str, r)) for r in stats_rows(report)) + "\n", encoding="utf-8")
        plot_kind_split(report, d / "kind_split.png")
        run.outputs += [d / "stats.json", d / "stats.tsv", d / "kind_split.png"]


def cmd_bench_build(run: Run):
    a, cfg = run.args, run.cfg
    run.inputs.append(a.contexts)
    contexts = read_contexts(a.contexts)
    sampled = sample_images(contexts, a.n, cfg.global_seed)
    items = build_benchmark(
        sampled,
        run.backend(a.backend),
        model_name=cfg.model_name,
        temperature=cfg.temperature_generate,
        max_output_tokens=cfg.max_output_tokens,
        global_seed=cfg.global_seed,
        assets=run.assets(),
        precision=cfg.precision,
        max_in_flight=cfg.max_in_flight,
    )
    write_benchmark(items, a.out)
    run.outputs.append(a.out)
    print(f"{len(items)} benchmark items for {len(sampled)} images written to {a.out}")


def cmd_bench_eval(run: Run):
    a, cfg = run.args, run.cfg
    run.inputs += [a.benchmark, *a.answers]
    items = read_benchmark(a.benchmark)
    backend = run.backend(a.backend)
    assets = run.assets()
    method = MEAN_OF_RATIOS if a.mean_of_ratios else RATIO_OF_MEANS
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for path in a.answers:
        name = Path(path).stem
        report = evaluate(
            items,
            read_answers(path),
            backend,
            model_name=cfg.model_name,
            temperature=cfg.temperature_judge,
            max_output_tokens=cfg.max_output_tokens,
            assets=assets,
            method=method,
            swap=a.swap,
            max_in_flight=cfg.max_in_flight,
            candidate=name,
        )
        target = out / f"report_{name}.json"
        target.write_text(report.dumps() + "\n", encoding="utf-8")
        run.outputs.append(target)
        rows.append((name, report.per_kind_relative, report.overall))
        if report.failures:
            run.partial = True
            for item_id, reason in sorted(report.failures.items()):
                run.diag("error", f"{name}: {item_id}: {reason}", candidate=name, item_id=item_id)
    table = format_table(rows)
    (out / "scores.txt").write_text(table, encoding="utf-8")
    (out / "scores.tsv").write_text(format_tsv(rows), encoding="utf-8")
    run.outputs += [out / "scores.txt", out / "scores.tsv"]
    if not a.no_figure:
        from .plotting import plot_relative_scores

        run.outputs.append(plot_relative_scores(rows, out / "scores.png"))
    print(table, end="")


def cmd_render(run: Run):
    a = run.args
    run.inputs.append(a.contexts)
    contexts = {c.image_id: c for c in read_contexts(a.contexts)}
    if a.image_id not in contexts:
        raise PoseForgeError(f"image {a.image_id} not in {a.contexts}")
    style = OverlayStyle(marker_radius=a.radius, box_stroke_width=a.stroke, show_labels=a.labels)
    Path(a.out).write_text(render_overlay(contexts[a.image_id], style), encoding="utf-8")
    run.outputs.append(a.out)
    print(f"overlay written to {a.out}")


def cmd_train_config(run: Run):
    run.outputs.append(write_train_config(run.args.out))
    print(f"training config written to {run.args.out}")


COMMANDS = {
    "ingest": cmd_ingest,
    "generate": cmd_generate,
    "assemble": cmd_assemble,
    "stats": cmd_stats,
    "bench-build": cmd_bench_build,
    "bench-eval": cmd_bench_eval,
    "render": cmd_render,
    "train-config": cmd_train_config,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override global_seed")
    common.add_argument("--precision", type=int, help="override coordinate precision")
    common.add_argument("--model", dest="model_name", help="override model_name")
    common.add_argument("--cache-dir", help="override cache_dir")
    common.add_argument("--assets-dir", help="override assets_dir")
    common.add_argument("--max-in-flight", type=int, help="override max_in_flight")
    common.add_argument("--run-log", help="override run_log")
    common.add_argument("--json", action="store_true", help="machine-readable diagnostics on stderr")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="poseforge", description="Keypoint-integrated instruction data and benchmark tooling.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", parents=[common], help="COCO annotations -> contexts file")
    s.add_argument("--captions", required=True)
    s.add_argument("--keypoints", required=True)
    s.add_argument("--instances", help="instance annotations; adds non-person object boxes")
    s.add_argument("--min-keypoints", type=int, help="override min_labeled_keypoints")
    s.add_argument("--out", required=True)

    s = sub.add_parser("generate", parents=[common], help="contexts -> instruction samples")
    s.add_argument("--contexts", required=True)
    s.add_argument("--kind", required=True, choices=["conversation", "detail", "reasoning"])
    s.add_argument("--backend", choices=["live", "mock"], default="mock")
    s.add_argument("--multi-message", action="store_true", help="send each person's context as its own message")
    s.add_argument("--out", required=True)

    s = sub.add_parser("assemble", parents=[common], help="samples files -> dataset + manifest")
    s.add_argument("--inputs", nargs="+", required=True)
    s.add_argument("--merge", nargs="*", help="external datasets (JSON arrays) appended after generated samples")
    s.add_argument("--out", required=True)

    s = sub.add_parser("stats", parents=[common], help="dataset statistics")
    s.add_argument("--dataset", required=True)
    s.add_argument("--report-dir", help="also write stats.json, stats.tsv and kind_split.png here")

    s = sub.add_parser("bench-build", parents=[common], help="sample images and build benchmark items")
    s.add_argument("--contexts", required=True)
    s.add_argument("--n", type=int, default=BENCHMARK_IMAGES)
    s.add_argument("--backend", choices=["live", "mock"], default="mock")
    s.add_argument("--out", required=True)

    s = sub.add_parser("bench-eval", parents=[common], help="judge candidate answers")
    s.add_argument("--benchmark", required=True)
    s.add_argument("--answers", nargs="+", required=True, help="one JSON-lines file per candidate")
    s.add_argument("--backend", choices=["live", "mock"], default="mock")
    s.add_argument("--mean-of-ratios", action="store_true")
    s.add_argument("--swap", action="store_true", help="judge both answer orders and average")
    s.add_argument("--no-figure", action="store_true")
    s.add_argument("--out-dir", required=True)

    s = sub.add_parser("render", parents=[common], help="SVG overlay for one image")
    s.add_argument("--contexts", required=True)
    s.add_argument("--image-id", type=int, required=True)
    s.add_argument("--labels", action="store_true")
    s.add_argument("--radius", type=float, default=4.0)
    s.add_argument("--stroke", type=float, default=2.0)
    s.add_argument("--out", required=True)

    s = sub.add_parser("train-config", parents=[common], help="write the fine-tuning hyperparameters")
    s.add_argument("--out", required=True)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"poseforge: error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = {
        "global_seed": args.seed,
        "precision": args.precision,
        "model_name": args.model_name,
        "cache_dir": args.cache_dir,
        "assets_dir": args.assets_dir,
        "max_in_flight": args.max_in_flight,
        "run_log": args.run_log,
    }
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as e:
        if args.json:
            print(json.dumps({"level": "error", "command": args.command, "message": str(e), "kind": "config"}), file=sys.stderr)
        else:
            print(f"poseforge: config error: {e}", file=sys.stderr)
        return 2

    r = Run(args, cfg)
    try:
        COMMANDS[args.command](r)
        code = 1 if r.partial else 0
    except ConfigError as e:
        r.diag("error", str(e), error=type(e).__name__)
        code = 2
    except (PoseForgeError, OSError) as e:
        r.diag("error", str(e), error=type(e).__name__, **({"failures": e.failures} if hasattr(e, "failures") else {}))
        code = 1
    r.append_log(code)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
