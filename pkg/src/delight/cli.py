"""``delight analyze|train|eval|gradcheck|ablate``.

Exit codes: 0 success, 1 usage or configuration error, 2 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from .ablate import AXES, ablate, rows_to_csv
from .accounting import model_cost
from .config import RunConfig, RunConfigError
from .dextra import ConfigError, DextraPlan
from .gradcheck import COMPONENTS, gradcheck
from .scaling import baseline_depth, network_depth
from .train import CheckpointError, load_checkpoint, make_task, resolve_model_config, run_training

EXIT_OK, EXIT_USAGE, EXIT_VERIFY = 0, 1, 2

PLAN_COLUMNS = ("b", "N_b", "m_w_b", "params_b", "macs_b")
LAYER_COLUMNS = ("block", "l", "in", "out", "g", "params")
DEPTH_COLUMNS = ("stack", "blocks", "depth", "baseline_depth")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def default_seed() -> int:
    value = os.environ.get("DELIGHT_SEED", "0")
    try:
        return int(value)
    except ValueError:
        raise UsageError(f"DELIGHT_SEED must be an integer, got {value!r}") from None


# -- analyze ----------------------------------------------------------------


def analysis(run: RunConfig, n: int, m: int, mode: str) -> dict:
    model_cfg = resolve_model_config(run)
    plan = model_cfg.block_plan()
    report = model_cost(model_cfg, n, m, mode)
    per_block = report.by_block()

    plan_rows, layer_rows = [], []
    for scale, bcfg in zip(plan, model_cfg.block_configs()):
        labels = [f"encoder.{scale.b}", f"decoder.{scale.b}"]
        params = sum(per_block.get(label, (0, 0))[0] for label in labels)
        macs = sum(per_block.get(label, (0, 0))[1] for label in labels)
        plan_rows.append({"b": scale.b, "N_b": scale.N, "m_w_b": str(scale.m_w), "params_b": params, "macs_b": macs})
        for spec in DextraPlan.build(bcfg.dextra_config()).layers:
            layer_rows.append({"block": scale.b, "l": spec.index, "in": spec.in_dim, "out": spec.out_dim,
                               "g": spec.groups, "params": spec.params})

    B = len(plan)
    if model_cfg.task == "lm":
        depth_rows = [{"stack": "decoder", "blocks": B, "depth": network_depth(plan),
                       "baseline_depth": baseline_depth(B)}]
    else:
        depth_rows = [
            {"stack": "encoder", "blocks": B, "depth": network_depth(plan), "baseline_depth": baseline_depth(B)},
            {"stack": "decoder", "blocks": B, "depth": network_depth(plan, decoder=True),
             "baseline_depth": baseline_depth(B, decoder=True)},
        ]
    return {"plan": plan_rows, "layers": layer_rows, "cost": report.to_dict(), "depth": depth_rows}


def _csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def analysis_csv(result: dict) -> dict[str, str]:
    from .accounting import CostReport

    return {
        "plan": _csv(result["plan"], PLAN_COLUMNS),
        "layers": _csv(result["layers"], LAYER_COLUMNS),
        "cost": CostReport.from_dict(result["cost"]).to_csv(),
        "depth": _csv(result["depth"], DEPTH_COLUMNS),
    }


def cmd_analyze(args) -> int:
    run = RunConfig.load(args.config)
    rep = run["report"]
    n = args.n or rep["n"]
    m = args.m or rep["m"]
    mode = args.mode or rep["mode"]
    fmt = args.format or rep["format"]
    result = analysis(run, n, m, mode)
    if fmt == "json":
        text = json.dumps(result, indent=2) + "\n"
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    tables = analysis_csv(result)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in tables.items():
            (out / f"{name}.csv").write_text(text)
    else:
        sys.stdout.write("\n".join(f"# {name}\n{text}" for name, text in tables.items()))
    return EXIT_OK


# -- train / eval -------------------------------------------------------------


def cmd_train(args) -> int:
    run = RunConfig.load(args.config)
    seed = args.seed if args.seed is not None else default_seed()

    def log(record):
        if not args.quiet:
            print(json.dumps(record), flush=True)

    result = run_training(run, args.out, seed=seed, steps=args.steps, timing=args.timing, log=log)
    print(json.dumps({"final": result.final, "out": str(args.out)}))
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    kind = ckpt.run.task_kind
    if args.task and args.task != kind:
        raise UsageError(f"checkpoint was trained on task {kind!r}, not {args.task!r}")
    task = make_task(ckpt.run, ckpt.run["train"]["seed"])
    metrics = task.evaluate(ckpt.state.model)
    print(json.dumps({"task": kind, "step": ckpt.state.step, **metrics}))
    return EXIT_OK


# -- gradcheck / ablate -------------------------------------------------------


def cmd_gradcheck(args) -> int:
    components = COMPONENTS if args.component == "all" else (args.component,)
    ok = True
    for component in components:
        report = gradcheck(component, args.tol, seed=args.seed, max_entries=args.max_entries)
        print(report.summary(), flush=True)
        ok &= report.passed
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_ablate(args) -> int:
    run = RunConfig.load(args.config)
    seed = args.seed if args.seed is not None else default_seed()
    run = run.override("train", seed=seed, steps=args.steps)
    seeds = [seed + i for i in range(args.seeds)]
    text = rows_to_csv(ablate(run, args.axis, seeds, args.jobs))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="delight", description=__doc__.splitlines()[0].strip("`"))
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="block plan, DExTra layers, parameter/MAC report, depth")
    p.add_argument("config")
    p.add_argument("--n", type=int, help="source tokens (LM context length)")
    p.add_argument("--m", type=int, help="target tokens")
    p.add_argument("--mode", choices=("forward", "decode"))
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--out", help="directory for CSV tables, file for JSON")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="train on the configured toy task")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--timing", action="store_true", help="measure tokens/sec (makes logs non-reproducible)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="token accuracy (copy) or perplexity (char LM) of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--task", choices=("copy", "char_lm"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--component", choices=("all",) + COMPONENTS, default="all")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-entries", type=int, help="probe at most this many coordinates per tensor")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="toy-scale ablation sweep")
    p.add_argument("config")
    p.add_argument("--axis", choices=AXES, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to average")
    p.add_argument("--steps", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (RunConfigError, ConfigError, CheckpointError, UsageError) as exc:
        print(f"delight {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
