"""Command-line entry point.

Usage:
    uiforge forge elements  --traces DIR --out DIR [--min-freq N] [--skip-color-check]
    uiforge forge lists     --traces DIR --out DIR
    uiforge forge prompts   --traces DIR --out DIR
    uiforge forge captions  --traces DIR --out DIR --provider fixture --fixture captions.json
    uiforge forge foresight --traces DIR --out DIR [--enlarge-steps N] [--banner-pct F]
    uiforge stats --out DIR
    uiforge eval cider --candidates C.jsonl --references R.jsonl --out DIR

Exit codes: 1 configuration or ordering error, 2 malformed input,
3 caption provider failure after retries.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from .elements import FilterConfig, ImageDecodeError, forge_elements
from .foresight import MatchConfig, build_foresight_set
from .io import FormatError, atomic_write_text, read_jsonl, require, write_jsonl
from .manifest import SAMPLE_SETS, RunManifest, dataset_stats, input_counts, render_table
from .metrics import (
    CiderConfig,
    EmptyCorpus,
    MissingReference,
    cider,
    grounding_accuracy,
    load_candidates,
    load_grounding_instances,
    load_references,
    load_tap_pairs,
    tappability_scores,
)
from .objective import dumps_reports, score_logits_file
from .provider import (
    API_KEY_ENV,
    CaptionCache,
    CaptionFetcher,
    FixtureProvider,
    HttpProvider,
    ProviderConfig,
)
from .screens import ScreenPrompt, attach_captions, forge_prompts
from .trace import SchemaError, UITrace, load_traces

log = logging.getLogger("uiforge")

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_PROVIDER = 0, 1, 2, 3

DEFAULTS: dict[str, Any] = {
    "min_frequency": 5,
    "min_length": 2,
    "color_check": True,
    "image_root": None,
    "prompt_frequency_filter": False,
    "enlarge_steps": 5,
    "enlarge_pct": 0.01,
    "banner_pct": 0.03,
    "square_px": 65.0,
    "provider": "fixture",
    "fixture": None,
    "endpoint": ProviderConfig.endpoint,
    "model_name": ProviderConfig.model_name,
    "max_concurrent": ProviderConfig.max_concurrent,
    "retry_limit": ProviderConfig.retry_limit,
    "cost_per_1k_tokens": str(ProviderConfig.cost_per_1k_tokens),
    "requery": False,
}
# settings that may change speed but never outputs; kept out of config_hash
RUNTIME_ONLY = ("jobs",)

FLAG_TO_KEY = {
    "min_freq": "min_frequency",
    "enlarge_steps": "enlarge_steps",
    "enlarge_pct": "enlarge_pct",
    "banner_pct": "banner_pct",
    "provider": "provider",
    "fixture": "fixture",
    "image_root": "image_root",
    "requery": "requery",
}

# settings each forge step depends on, so config_hash tracks only what matters
STEP_KEYS = {
    "elements": ("min_frequency", "min_length", "color_check", "image_root"),
    "lists": ("min_frequency", "min_length", "color_check", "image_root"),
    "prompts": ("min_frequency", "min_length", "color_check", "image_root", "prompt_frequency_filter"),
    "captions": ("provider", "fixture", "endpoint", "model_name", "retry_limit", "cost_per_1k_tokens", "requery"),
    "foresight": ("enlarge_steps", "enlarge_pct", "banner_pct", "square_px"),
}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def load_settings(args: argparse.Namespace) -> dict[str, Any]:
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            user = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}", EXIT_CONFIG) from None
        unknown = set(user) - set(DEFAULTS) - set(RUNTIME_ONLY)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}", EXIT_CONFIG)
        settings.update(user)
    for flag, key in FLAG_TO_KEY.items():
        value = getattr(args, flag, None)
        if value is not None:
            settings[key] = value
    if getattr(args, "skip_color_check", False):
        settings["color_check"] = False
    if settings["image_root"] is None and getattr(args, "traces", None):
        traces = Path(args.traces)
        settings["image_root"] = str(traces if traces.is_dir() else traces.parent)
    return settings


def _filter_config(s: dict[str, Any]) -> FilterConfig:
    return FilterConfig(
        min_frequency=int(s["min_frequency"]),
        min_length=int(s["min_length"]),
        color_check=bool(s["color_check"]),
        image_root=s["image_root"],
    )


def _match_config(s: dict[str, Any]) -> MatchConfig:
    return MatchConfig(int(s["enlarge_steps"]), float(s["enlarge_pct"]), float(s["banner_pct"]), float(s["square_px"]))


def _load(args: argparse.Namespace) -> list[UITrace]:
    if not args.traces:
        raise CliError("--traces is required", EXIT_CONFIG)
    if not Path(args.traces).exists():
        raise CliError(f"trace path {args.traces} does not exist", EXIT_CONFIG)
    return list(load_traces(args.traces))


def _images_and_samples(records: list[dict]) -> dict[str, int]:
    return {"num_images": len({r["image_path"] for r in records}), "num_samples": len(records)}


def _portable_settings(settings: dict[str, Any], step: str) -> dict[str, Any]:
    chosen = {k: settings[k] for k in STEP_KEYS[step]}
    # path-valued settings are recorded by name only so reruns elsewhere hash equal
    for key in ("image_root", "fixture"):
        if chosen.get(key):
            chosen[key] = Path(chosen[key]).name
    return chosen


def forge(args: argparse.Namespace) -> int:
    settings = load_settings(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    step = args.step
    manifest = RunManifest(f"forge {step}", _portable_settings(settings, step))
    manifest.extra["jobs"] = args.jobs

    if step == "captions":
        return _forge_captions(args, settings, out, manifest)

    if step == "foresight":
        captions_path = out / SAMPLE_SETS["screen"]
        if not captions_path.exists():
            raise CliError(
                f"{captions_path} not found: run `forge prompts` and `forge captions` before `forge foresight`",
                EXIT_CONFIG,
            )
    traces = _load(args)
    manifest.input_counts = input_counts(traces)
    fcfg = _filter_config(settings)
    manifest.extra["color_check"] = "applied" if fcfg.color_check else "skipped"

    if step in ("elements", "lists"):
        result = forge_elements(traces, fcfg, jobs=args.jobs)
        if step == "elements":
            captions = [s.to_record() for s in result.captions]
            path = out / SAMPLE_SETS["element"]
            manifest.add_output(path, write_jsonl(path, captions))
            rpath = out / "rejects.jsonl"
            manifest.add_output(rpath, write_jsonl(rpath, (r.to_record() for r in result.rejects)))
            manifest.output_counts["element"] = _images_and_samples(captions)
        else:
            lists = [s.to_record() for s in result.lists]
            path = out / SAMPLE_SETS["element_list"]
            manifest.add_output(path, write_jsonl(path, lists))
            manifest.output_counts["element_list"] = _images_and_samples(lists)
        manifest.drop_counts["elements"] = result.drop_counts

    elif step == "prompts":
        surviving = None
        if settings["prompt_frequency_filter"]:
            surviving = forge_elements(traces, fcfg, jobs=args.jobs).surviving
        result = forge_prompts(traces, fcfg, jobs=args.jobs, surviving=surviving)
        ppath = out / "screen_prompts.jsonl"
        manifest.add_output(ppath, write_jsonl(ppath, (p.to_record() for p in result.prompts)))
        fpath = out / "prompt_fanout.jsonl"
        manifest.add_output(
            fpath, write_jsonl(fpath, ({"prompt_key": k, "image_paths": v} for k, v in result.fanout.items()))
        )
        manifest.output_counts["prompts"] = {
            "num_images": sum(len(v) for v in result.fanout.values()),
            "num_samples": len(result.prompts),
        }
        manifest.drop_counts["prompts"] = {"empty_element_list": len(result.skipped)}

    elif step == "foresight":
        caption_of = {}
        for i, rec in enumerate(read_jsonl(out / SAMPLE_SETS["screen"]), start=1):
            where = f"{SAMPLE_SETS['screen']} record {i}"
            caption_of[require(rec, "image_path", str, where)] = require(rec, "caption", str, where)
        result = build_foresight_set(traces, caption_of, _match_config(settings), jobs=args.jobs)
        records = [s.to_record() for s in result.samples]
        path = out / SAMPLE_SETS["foresight"]
        manifest.add_output(path, write_jsonl(path, records))
        manifest.output_counts["foresight"] = _images_and_samples(records)
        manifest.drop_counts["foresight_drops"] = result.drop_counts
        manifest.extra["pairs_examined"] = result.examined
        manifest.extra["match_methods"] = result.match_counts

    manifest.write(out)
    log.info("forge %s: %s", step, json.dumps(manifest.output_counts))
    return EXIT_OK


def _forge_captions(args: argparse.Namespace, settings: dict[str, Any], out: Path, manifest: RunManifest) -> int:
    ppath, fpath = out / "screen_prompts.jsonl", out / "prompt_fanout.jsonl"
    if not ppath.exists() or not fpath.exists():
        raise CliError(f"{ppath.name}/{fpath.name} not found in {out}: run `forge prompts` first", EXIT_CONFIG)
    try:
        prompts = [ScreenPrompt.from_record(r) for r in read_jsonl(ppath)]
    except KeyError as exc:
        raise FormatError(f"{ppath.name}: missing field {exc}") from None
    fanout = {
        require(r, "prompt_key", str, fpath.name): require(r, "image_paths", list, fpath.name)
        for r in read_jsonl(fpath)
    }

    pcfg = ProviderConfig(
        endpoint=settings["endpoint"],
        model_name=settings["model_name"],
        max_concurrent=int(settings["max_concurrent"]),
        retry_limit=int(settings["retry_limit"]),
        cost_per_1k_tokens=settings["cost_per_1k_tokens"],
    )
    if settings["provider"] == "fixture":
        if not settings["fixture"]:
            raise CliError("--provider fixture needs --fixture <file>", EXIT_CONFIG)
        try:
            provider = FixtureProvider.from_file(settings["fixture"])
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot read fixture: {exc}", EXIT_CONFIG) from None
    elif settings["provider"] == "live":
        provider = HttpProvider(pcfg)
        if not provider.api_key:
            log.warning("%s is not set; sending unauthenticated requests", API_KEY_ENV)
    else:
        raise CliError(f"unknown provider {settings['provider']!r}", EXIT_CONFIG)

    cache = CaptionCache(out / "caption_cache.json")
    result = CaptionFetcher(provider, pcfg, cache).fetch(prompts, use_cache=not settings["requery"])
    app_ids = {p.prompt_key: p.app_id for p in prompts}
    samples, failed = attach_captions(fanout, result.captions, app_ids)
    records = [s.to_record() for s in samples]
    path = out / SAMPLE_SETS["screen"]
    manifest.add_output(path, write_jsonl(path, records))
    manifest.add_output(out / "caption_cache.json", len(cache))
    manifest.input_counts = {"prompts": len(prompts), "screens": sum(len(v) for v in fanout.values())}
    manifest.output_counts["screen"] = _images_and_samples(records)
    manifest.drop_counts["captions"] = {
        "failed_prompts": len(failed),
        "failed_screens": sum(len(fanout[k]) for k in failed),
    }
    manifest.extra["provider"] = {
        "calls": result.calls,
        "cache_hits": result.cache_hits,
        "tokens": result.tokens,
        "cost": str(result.cost),
        "failures": {k: result.failures.get(k, "no caption") for k in failed},
    }
    manifest.write(out)
    if failed:
        log.error("%d prompt(s) failed; %d screen(s) left uncaptioned", len(failed), manifest.drop_counts["captions"]["failed_screens"])
        return EXIT_PROVIDER
    return EXIT_OK


def stats(args: argparse.Namespace) -> int:
    files = [Path(f) for f in args.files]
    if args.out:
        files += [Path(args.out) / f for f in SAMPLE_SETS.values() if (Path(args.out) / f).exists()]
    if not files:
        raise CliError("no sample files given", EXIT_CONFIG)
    for f in files:
        if not f.exists():
            raise CliError(f"{f} does not exist", EXIT_CONFIG)
    all_stats = [dataset_stats(f) for f in files]
    order = list(SAMPLE_SETS)
    all_stats.sort(key=lambda s: order.index(s.name) if s.name in order else len(order))
    print(render_table(all_stats))
    payload = {s.name: s.to_dict() for s in all_stats}
    if args.json:
        atomic_write_text(args.json, json.dumps(payload, indent=2) + "\n")
    return EXIT_OK


def evaluate(args: argparse.Namespace) -> int:
    out = Path(args.out)
    task = args.task
    if task == "cider":
        cfg = CiderConfig(max_n=args.max_n, cider_d=args.cider_d)
        try:
            res = cider(load_candidates(args.candidates), load_references(args.references), cfg)
        except (EmptyCorpus, MissingReference) as exc:
            raise FormatError(str(exc)) from None
        metrics = {"task": "cider", "variant": res.variant, "max_n": cfg.max_n, "score": res.score,
                   "per_image": res.per_image}
        summary = f"{res.variant.upper()} {res.score:.4f} over {len(res.per_image)} images"
    elif task == "tappability":
        preds, labels, ids = load_tap_pairs(args.predictions, args.labels)
        res = tappability_scores(preds, labels)
        metrics = {"task": "tappability", "f1": res.f1, "accuracy": res.accuracy, "precision": res.precision,
                   "recall": res.recall, "confusion": res.confusion, "unparseable": res.unparseable,
                   "unparseable_ids": [ids[i] for i in res.unparseable_indices]}
        summary = f"F1 {res.f1:.4f} accuracy {res.accuracy:.4f} ({res.unparseable} unparseable)"
    elif task == "grounding":
        instances = load_grounding_instances(args.instances)
        res = grounding_accuracy(instances, args.similarity)
        metrics = {"task": "grounding", "similarity": res.similarity, "accuracy": res.accuracy,
                   "correct": [int(c) for c in res.correct],
                   "instance_ids": [inst.instance_id for inst in instances]}
        summary = f"accuracy {res.accuracy:.4f} over {len(instances)} instances ({res.similarity})"
    elif task == "loss":
        reports = score_logits_file(args.logits, args.objective, args.reduction)
        steps = sum(len(r.per_step) for _, r in reports)
        total = sum(r.total for _, r in reports)
        metrics = {
            "task": "loss",
            "objective": args.objective,
            "reduction": args.reduction,
            "num_samples": len(reports),
            "num_steps": steps,
            "mean_total": total / len(reports) if reports else 0.0,
            "mean_per_step": sum(sum(r.per_step) for _, r in reports) / steps if steps else 0.0,
        }
        atomic_write_text(out / "losses.jsonl", dumps_reports(reports))
        summary = f"{args.objective} loss: mean per-step {metrics['mean_per_step']:.6f} over {steps} steps"
    else:  # argparse restricts choices
        raise CliError(f"unknown task {task}", EXIT_CONFIG)
    atomic_write_text(out / "metrics.json", json.dumps(metrics, indent=2) + "\n")
    print(summary)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uiforge", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("forge", help="build a sample set from traces")
    f.add_argument("step", choices=["elements", "lists", "prompts", "captions", "foresight"])
    f.add_argument("--traces", help="trace directory or file")
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--config", help="JSON settings file; flags override it")
    f.add_argument("--jobs", type=int, default=1)
    f.add_argument("--min-freq", dest="min_freq", type=int)
    f.add_argument("--enlarge-steps", dest="enlarge_steps", type=int)
    f.add_argument("--enlarge-pct", dest="enlarge_pct", type=float)
    f.add_argument("--banner-pct", dest="banner_pct", type=float)
    f.add_argument("--provider", choices=["live", "fixture"])
    f.add_argument("--fixture", help="prompt_key -> caption JSON file for --provider fixture")
    f.add_argument("--image-root", dest="image_root", help="base directory for relative screenshot paths")
    f.add_argument("--skip-color-check", action="store_true")
    f.add_argument("--requery", action="store_true", default=None, help="ignore cached captions")
    f.set_defaults(func=forge)

    s = sub.add_parser("stats", help="count images/samples per sample set")
    s.add_argument("files", nargs="*")
    s.add_argument("--out", help="directory holding forged sample files")
    s.add_argument("--json", help="also write the statistics to this JSON file")
    s.set_defaults(func=stats)

    e = sub.add_parser("eval", help="score model outputs")
    e.add_argument("task", choices=["cider", "tappability", "grounding", "loss"])
    e.add_argument("--out", default=".", help="directory for metrics.json")
    e.add_argument("--candidates")
    e.add_argument("--references")
    e.add_argument("--max-n", dest="max_n", type=int, default=4)
    e.add_argument("--cider-d", dest="cider_d", action="store_true")
    e.add_argument("--predictions")
    e.add_argument("--labels")
    e.add_argument("--instances")
    e.add_argument("--similarity", choices=["token_f1", "cider_1gram"], default="token_f1")
    e.add_argument("--logits")
    e.add_argument("--objective", choices=["xe", "foresight", "static"], default="xe")
    e.add_argument("--reduction", choices=["sum", "mean"], default="sum")
    e.set_defaults(func=evaluate)
    return p


_EVAL_INPUTS = {
    "cider": ("candidates", "references"),
    "tappability": ("predictions", "labels"),
    "grounding": ("instances",),
    "loss": ("logits",),
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )
    try:
        if args.command == "forge" and args.jobs < 1:
            raise CliError("--jobs must be >= 1", EXIT_CONFIG)
        if args.command == "eval":
            for name in _EVAL_INPUTS[args.task]:
                value = getattr(args, name)
                if not value:
                    raise CliError(f"eval {args.task} needs --{name}", EXIT_CONFIG)
                if not Path(value).exists():
                    raise CliError(f"{value} does not exist", EXIT_CONFIG)
        return args.func(args)
    except CliError as exc:
        print(f"uiforge: error: {exc}", file=sys.stderr)
        return exc.code
    except (SchemaError, FormatError, ImageDecodeError) as exc:
        print(f"uiforge: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"uiforge: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
