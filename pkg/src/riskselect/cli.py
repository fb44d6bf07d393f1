"""Command-line entry point: ``riskselect <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from .comm import ChannelModel
from .idapm import save_weights, synthetic_batch, train_predictor
from .loss import LossParams, LossVariant, loss_and_grad
from .pipeline import HeatmapSource, InvariantViolation, MaskPolicy, RunConfig, report, run, sweep, sweep_csv
from .ptcm import PtcmParams, scenario_relevances
from .scenario import ScenarioError, Template, dumps_scenario, generate_scenario, load_scenario, save_scenario

EXIT_ERROR = 2
EXIT_INVARIANT = 3

_RUN_FIELDS = {f.name for f in fields(RunConfig)}


def _load_config(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be an object")
    unknown = sorted(set(data) - _RUN_FIELDS)
    if unknown:
        raise ValueError(f"{path}: unknown config keys {unknown}")
    return data


def _nested(cls, value, key):
    if isinstance(value, cls):
        return value
    if not isinstance(value, dict):
        raise ValueError(f"config '{key}' must be an object")
    try:
        return cls(**value)
    except TypeError as exc:
        raise ValueError(f"config '{key}': {exc}") from None


def build_config(args: argparse.Namespace) -> RunConfig:
    """Merge a JSON config file with explicitly given flags (flags win)."""
    data = _load_config(getattr(args, "config", None))
    for name in _RUN_FIELDS:
        v = getattr(args, name, None)
        if v is not None and v is not False:
            data[name] = v
    ptcm = _nested(PtcmParams, data.get("ptcm", {}), "ptcm")
    if getattr(args, "horizon", None) is not None:
        ptcm = replace(ptcm, N=args.horizon)
    data["ptcm"] = ptcm
    data["loss"] = _nested(LossParams, data.get("loss", {}), "loss")
    channel = _nested(ChannelModel, data.get("channel", {}), "channel")
    if getattr(args, "drop_probability", None) is not None:
        channel = replace(channel, drop_probability=args.drop_probability)
    data["channel"] = replace(channel, seed=channel.seed if args.seed is None else args.seed)
    return RunConfig(**data)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--template", choices=[t.value for t in Template])
    p.add_argument("--count", type=int)
    p.add_argument("--n-agents", dest="n_agents", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--scenario-paths", dest="scenario_paths", nargs="+")
    p.add_argument("--tau", type=float)
    p.add_argument("--block-size", dest="block_size", type=int)
    p.add_argument("--policy", choices=[m.value for m in MaskPolicy])
    p.add_argument("--heatmap-source", dest="heatmap_source", choices=[h.value for h in HeatmapSource])
    p.add_argument("--weights-path", dest="weights_path")
    p.add_argument("--train-iters", dest="train_iters", type=int)
    p.add_argument("--horizon", type=int, help="trajectory horizon N in frames")
    p.add_argument("--drop-probability", dest="drop_probability", type=float)
    p.add_argument("--iou-threshold", dest="iou_threshold", type=float)
    p.add_argument("--critical-threshold", dest="critical_threshold", type=float)
    p.add_argument("--n-rays", dest="n_rays", type=int)
    p.add_argument("--no-temporal", dest="no_temporal", action="store_true")
    p.add_argument("--no-motion", dest="no_motion", action="store_true")
    p.add_argument("--no-velocity", dest="no_velocity", action="store_true")
    p.add_argument("--out-dir", dest="out_dir")


def _cmd_gen(args) -> int:
    if args.count == 1 and args.out and not args.out.endswith("/"):
        s = generate_scenario(args.template, args.seed, args.n_agents, args.frames, jitter=args.jitter)
        save_scenario(s, args.out)
        return 0
    if args.count == 1 and not args.out:
        sys.stdout.write(dumps_scenario(generate_scenario(args.template, args.seed, args.n_agents, args.frames,
                                                          jitter=args.jitter)))
        return 0
    if not args.out:
        raise ValueError("--out directory is required with --count > 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        s = generate_scenario(args.template, args.seed + i, args.n_agents, args.frames, jitter=args.jitter)
        save_scenario(s, out / f"{args.template}_{args.seed + i:05d}.json")
    return 0


def _cmd_run(args) -> int:
    config = build_config(args)
    rep = run(config)
    sys.stdout.write(rep.table())
    if config.out_dir:
        report(rep, config.out_dir)
    return 0


def _cmd_sweep(args) -> int:
    config = build_config(args)
    rows = sweep(config, args.taus)
    text = sweep_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="ascii")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_eval_ptcm(args) -> int:
    if args.scenario:
        s = load_scenario(args.scenario)
    else:
        s = generate_scenario(args.template, args.seed, args.n_agents)
    params = PtcmParams(N=args.horizon) if args.horizon else PtcmParams()
    sys.stdout.write("target_id,T_S,R_S,relevance\n")
    for r in scenario_relevances(s, args.frame, params, use_velocity=not args.no_velocity):
        sys.stdout.write(f"{r.target_id},{r.T_S!r},{r.R_S!r},{r.relevance!r}\n")
    return 0


def _cmd_eval_loss(args) -> int:
    params = LossParams(alpha_under=args.alpha_under, alpha_over=args.alpha_over, gamma1=args.gamma1,
                        gamma2=args.gamma2, variant=LossVariant(args.variant))
    sys.stdout.write("x,gt,loss,grad\n")
    for x in args.x:
        for gt in args.gt:
            v, g = loss_and_grad(x, gt, params)
            sys.stdout.write(f"{x!r},{gt!r},{float(v)!r},{float(g)!r}\n")
    return 0


def _cmd_train(args) -> int:
    dataset = synthetic_batch(args.samples, args.seed)
    model, trace = train_predictor(dataset, LossParams(variant=LossVariant(args.variant)), args.iters, args.seed)
    sys.stdout.write(f"initial_loss {trace[0]!r}\nfinal_loss {trace[-1]!r}\nratio {trace[-1] / trace[0]!r}\n")
    if args.trace:
        Path(args.trace).write_text("".join(f"{i},{v!r}\n" for i, v in enumerate(trace)), encoding="ascii")
    if args.out:
        save_weights(model, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskselect", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenario", help="generate seeded scenarios as JSON")
    p.add_argument("--template", choices=[t.value for t in Template], default=Template.OCCLUDED_CROSSING.value)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-agents", dest="n_agents", type=int, default=3)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", help="file (count 1) or directory; stdout when omitted")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("run", help="run the pipeline on a suite and report metrics")
    p.add_argument("--seed", type=int)
    _add_run_flags(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="sweep the selection threshold")
    p.add_argument("--seed", type=int)
    p.add_argument("--taus", type=float, nargs="+", required=True)
    p.add_argument("--out", help="CSV path; stdout when omitted")
    _add_run_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("eval-ptcm", help="print per-target relevance scores")
    p.add_argument("--scenario", help="scenario JSON; otherwise generated from template/seed")
    p.add_argument("--template", choices=[t.value for t in Template], default=Template.OCCLUDED_CROSSING.value)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-agents", dest="n_agents", type=int, default=3)
    p.add_argument("--frame", type=int, default=1)
    p.add_argument("--horizon", type=int)
    p.add_argument("--no-velocity", dest="no_velocity", action="store_true")
    p.set_defaults(func=_cmd_eval_ptcm)

    p = sub.add_parser("eval-loss", help="evaluate a heatmap loss and its derivative")
    p.add_argument("--x", type=float, nargs="+", required=True)
    p.add_argument("--gt", type=float, nargs="+", required=True)
    p.add_argument("--variant", choices=[v.value for v in LossVariant], default=LossVariant.RESCALE_FOCAL.value)
    p.add_argument("--alpha-under", dest="alpha_under", type=float, default=1.0)
    p.add_argument("--alpha-over", dest="alpha_over", type=float, default=1.0)
    p.add_argument("--gamma1", type=float, default=2.0)
    p.add_argument("--gamma2", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; evaluation is deterministic")
    p.set_defaults(func=_cmd_eval_loss)

    p = sub.add_parser("train-idapm", help="train the heatmap predictor on the synthetic batch")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--variant", choices=[v.value for v in LossVariant], default=LossVariant.RESCALE_FOCAL.value)
    p.add_argument("--out", help="weights file")
    p.add_argument("--trace", help="CSV file for the per-iteration loss")
    p.set_defaults(func=_cmd_train)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"riskselect: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ValueError, ScenarioError, OSError) as exc:
        print(f"riskselect: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
