"""``latte`` command line: train, sample, analyze, verify.

Exit codes: 0 ok, 1 verification failure, 2 invalid configuration or
arguments, 3 non-finite values during training or sampling, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .analysis import PRESETS, estimate_flops, preset_config, report_text
from .backbone import ModelConfig
from .config import ConfigError, RunConfig

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NAN, EXIT_IO = 0, 1, 2, 3, 4

log = logging.getLogger("latte")


def _parse_variants(text: str) -> list[int]:
    try:
        out = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--variants must be a comma-separated list of integers, got {text!r}") from None
    bad = [v for v in out if v not in (1, 2, 3, 4)]
    if bad or not out:
        raise ConfigError(f"invalid variant id(s) {bad or text!r}; choose from 1, 2, 3, 4")
    return out


def cmd_train(args) -> int:
    from .tensor import NonFiniteError
    from .train import TrainingDiverged, train

    run = RunConfig.load(args.config)
    log.info("training %s for %d steps into %s", args.config, run.steps, run.output_dir)
    try:
        state = train(run, resume=not args.no_resume)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NAN
    except NonFiniteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NAN
    print(f"finished at step {state.step}; checkpoints in {Path(run.output_dir) / 'checkpoints'}")
    return EXIT_OK


def cmd_sample(args) -> int:
    from .sample import generate

    if args.count < 0:
        raise ConfigError("--count must be >= 0")
    report = generate(args.ckpt, args.count, args.seed, args.out, use_ema=not args.raw, num_steps=args.diffusion_steps)
    print(json.dumps({k: report[k] for k in ("count", "seed", "weights", "mean_temporal_coherence")}))
    return EXIT_OK


def _analyze_configs(args) -> list[ModelConfig]:
    variants = _parse_variants(args.variants)
    if args.paper_config:
        size = args.paper_config.upper()
        if size not in PRESETS:
            raise ConfigError(f"unknown preset {args.paper_config!r}; choose from {sorted(p.lower() for p in PRESETS)}")
        return [preset_config(size, v) for v in variants]
    data = json.loads(Path(args.config).read_text())
    base = RunConfig.from_dict(data).model if "model" in data else ModelConfig.from_dict(data)
    return [ModelConfig.from_dict({**base.to_dict(), "variant": v}) for v in variants]


def cmd_analyze(args) -> int:
    reports = [estimate_flops(cfg) for cfg in _analyze_configs(args)]
    base = reports[0]
    payload = {
        "reports": [
            {**r.to_dict(), "param_ratio": r.params / base.params, "flop_ratio": r.flops_forward / base.flops_forward}
            for r in reports
        ]
    }
    if args.format == "json":
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(report_text(reports, base))
    if args.json:
        Path(args.json).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify.suites import SUITES, run_suites

    if args.filter and not any(args.filter in n for n in SUITES):
        raise ConfigError(f"no suite matches {args.filter!r}; available: {', '.join(SUITES)}")
    results = run_suites(name_filter=args.filter, on_result=lambda r: print(r.line(), flush=True))
    failed = [f"{r.suite}/{r.name}" for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} cases passed")
    if failed:
        print("failing: " + ", ".join(failed), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latte", description="Latent video diffusion Transformer toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a JSON run config (resumes from the latest checkpoint)")
    t.add_argument("--config", required=True)
    t.add_argument("--no-resume", action="store_true", help="start from scratch even if checkpoints exist")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate clips from a checkpoint (EMA weights by default)")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--count", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None, help="output directory (default: <ckpt>/samples_seed<seed>)")
    s.add_argument("--raw", action="store_true", help="use raw instead of EMA weights")
    s.add_argument("--diffusion-steps", type=int, default=None, help="override the number of sampling steps")
    s.set_defaults(func=cmd_sample)

    a = sub.add_parser("analyze", help="parameter and FLOP report per variant")
    src = a.add_mutually_exclusive_group(required=True)
    src.add_argument("--config")
    src.add_argument("--paper-config", metavar="SIZE", help="model-size preset: s, b, l or xl")
    a.add_argument("--variants", default="1,2,3,4")
    a.add_argument("--format", choices=("text", "json"), default="text")
    a.add_argument("--json", default=None, help="also write the JSON report to this path")
    a.set_defaults(func=cmd_analyze)

    v = sub.add_parser("verify", help="gradient, oracle and invariant suites")
    v.add_argument("--filter", default=None, help="run only suites whose name contains this text")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ValueError as exc:  # includes ConfigError and JSON decoding errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NAN
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
