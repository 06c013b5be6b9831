"""Command line interface.

Subcommands:
  train        fit a menu network on a setting, write a checkpoint (+ curve CSV)
  eval         Monte Carlo revenue of a mechanism, one CSV row
  audit        DSIC/IR misreport audit of a mechanism
  analyze      winning-allocation ranking and randomized-allocation ratio
  compare      baselines (and optionally a checkpoint) side by side
  sample-dump  write a valuation batch to the flat binary format

Exit codes: 0 success, 2 invalid usage, 3 numerical failure. Config files are
INI-style (sections ``[trainer]``, ``[model]``, ``[setting]``); any value is
overridable by the matching command-line flag.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import sys

from . import evaluation, training
from .baselines import OPTIMAL_REVENUE
from .evaluation import (EvalReport, ItemMyersonMechanism, VcgMechanism,
                         audit, evaluate_mechanism, mechanism_from_checkpoint,
                         write_reports_csv)
from .menunet import ModelConfig, config_for_setting
from .settings import SettingSpec, dump_batch, sample
from .training import TrainConfig, fit

USAGE_ERROR = 2
NUMERICAL_ERROR = 3


class UsageError(ValueError):
    pass


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _spec_from(args) -> SettingSpec:
    if args.setting is None or args.n is None or args.m is None:
        raise UsageError("--setting, --n and --m are required")
    return SettingSpec(args.setting, args.n, args.m)


def _seed_of(args) -> int:
    return 0 if args.seed is None else args.seed


def _load_config_file(path: str) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise UsageError(f"cannot read config file {path}")
    return {section: dict(parser[section]) for section in parser.sections()}


def _config_from_sources(cls, section: dict[str, str], overrides: dict):
    """Merge an INI section into dataclass kwargs; explicit flags win."""
    annotations = {f.name: str(f.type) for f in dataclasses.fields(cls)}
    values = {}
    for key, raw in section.items():
        if key not in annotations:
            raise UsageError(f"unknown {cls.__name__} key {key!r} in config file")
        kind = annotations[key]
        if "bool" in kind:
            values[key] = raw.lower() in ("1", "true", "yes", "on")
        elif "int" in kind:
            values[key] = int(raw)
        else:
            values[key] = float(raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return values


def _mechanism(args, spec: SettingSpec):
    name = args.mechanism
    if name == "vcg":
        return VcgMechanism()
    if name in ("myerson", "item-myerson"):
        return ItemMyersonMechanism(spec)
    if name == "checkpoint":
        if not args.checkpoint:
            raise UsageError("--checkpoint is required with --mechanism checkpoint")
        return mechanism_from_checkpoint(args.checkpoint)
    raise UsageError(f"unknown mechanism {name!r}")


# -- subcommands -------------------------------------------------------------------


def _cmd_train(args) -> int:
    spec = _spec_from(args)
    sections = _load_config_file(args.config) if args.config else {}
    train_overrides = {
        "menu_size": args.menu_size, "menu_temperature": args.menu_temperature,
        "iterations": args.iterations, "samples_per_iter": args.samples_per_iter,
        "batch": args.batch, "tau_a": args.tau_a, "seed": args.seed,
    }
    train_values = _config_from_sources(TrainConfig, sections.get("trainer", {}),
                                        train_overrides)
    if "menu_size" not in train_values or "menu_temperature" not in train_values:
        raise UsageError("menu size and menu temperature are required "
                         "(flags or [trainer] config section)")
    config = TrainConfig(**train_values)
    model_overrides = {"init_std": args.init_std,
                       "boost_init_scale": args.boost_init_scale,
                       "d": args.d, "d_hidden": args.d,
                       "interaction_modules": args.interaction_modules}
    model_values = _config_from_sources(ModelConfig, sections.get("model", {}),
                                        model_overrides)
    model_values.pop("menu_size", None)
    model_values.pop("menu_temperature", None)
    model_config = config_for_setting(spec, config.menu_size,
                                      config.menu_temperature, **model_values)
    print(f"training {spec.n}x{spec.m}({spec.tag}) menu={config.menu_size} "
          f"iterations={config.iterations} seed={config.seed}")
    ckpt = fit(spec, config, model_config=model_config, curve_path=args.curve,
               progress=_progress if args.verbose else None)
    training.save(ckpt, args.out)
    print(f"checkpoint -> {args.out} (final revenue estimate "
          f"{ckpt.revenue_estimate:.4f})")
    return 0


def _progress(iteration: int, loss: float, revenue: float | None) -> None:
    if revenue is not None:
        print(f"  iter {iteration:5d}  loss {loss:+.5f}  revenue {revenue:.4f}",
              flush=True)


def _cmd_eval(args) -> int:
    spec = _spec_from(args)
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    mech = _mechanism(args, spec)
    report = evaluate_mechanism(mech, spec, args.samples, seed=_seed_of(args))
    _emit_reports([report], args.out)
    return 0


def _cmd_audit(args) -> int:
    spec = _spec_from(args)
    try:
        instances, misreports = (int(x) for x in args.probes.split("x"))
    except ValueError:
        raise UsageError(f"--probes must look like 1000x100, got {args.probes!r}")
    mech = _mechanism(args, spec)
    result = audit(mech, spec, instances, misreports, seed=_seed_of(args))
    print(f"mechanism={mech.name} regret={result.max_gain:.3e} "
          f"min_utility={result.min_truthful_utility:.3e} "
          f"min_payment={result.min_payment:.3e}")
    if not (result.dsic_ok and result.ir_ok):
        print("AUDIT FAILED: mechanism is not truthful within tolerance")
        return 1
    return 0


def _cmd_analyze(args) -> int:
    spec = _spec_from(args)
    mech = _mechanism(args, spec)
    top = evaluation.top_winning_allocations(mech, spec, args.samples,
                                             k=args.top, seed=_seed_of(args))
    ratio = evaluation.randomized_ratio(mech, spec, args.samples, seed=_seed_of(args))
    print(f"randomized allocation ratio: {ratio:.4f}")
    for row in top:
        print(f"  entry {row['menu_index']:4d} win_rate {row['win_rate']:.4f} "
              f"boost {row['boost']:+.4f}")
    if args.out:
        import csv as _csv
        with open(args.out, "w", newline="") as fh:
            fh.write("# amanet-top-allocations-v1\n")
            writer = _csv.writer(fh)
            writer.writerow(["menu_index", "win_rate", "boost", "allocation"])
            for row in top:
                writer.writerow([row["menu_index"], repr(row["win_rate"]),
                                 repr(row["boost"]),
                                 ";".join(map(repr, row["allocation"].ravel()))])
        print(f"csv -> {args.out}")
    if args.plot:
        from .plots import plot_top_allocations
        plot_top_allocations(top, ratio, args.plot)
        print(f"plot -> {args.plot}")
    return 0


def _cmd_compare(args) -> int:
    spec = _spec_from(args)
    model = mechanism_from_checkpoint(args.checkpoint) if args.checkpoint else None
    reports = evaluation.compare(spec, args.samples, seed=_seed_of(args),
                                 model_mechanism=model)
    _emit_reports(reports, args.out)
    return 0


def _cmd_sample_dump(args) -> int:
    spec = _spec_from(args)
    if args.batch < 1:
        raise UsageError("--batch must be >= 1")
    batch = sample(spec, args.batch, _seed_of(args))
    dump_batch(batch, args.out)
    print(f"{args.batch} samples of {spec.n}x{spec.m}({spec.tag}) -> {args.out}")
    return 0


def _emit_reports(reports: list[EvalReport], out: str | None) -> None:
    for r in reports:
        line = (f"{r.method}: setting {r.n}x{r.m}({r.setting}) samples {r.samples} "
                f"revenue {r.mean_revenue:.4f} +- {r.stderr:.4f}")
        optimal = OPTIMAL_REVENUE.get((r.setting, r.n, r.m))
        if optimal:
            line += f" (optimal {optimal}, ratio {r.mean_revenue / optimal:.4f})"
        print(line)
    if out:
        write_reports_csv(reports, out)
        print(f"csv -> {out}")


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amanet",
        description="Learned affine maximizer auctions: train, evaluate, audit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_setting_flags(p):
        p.add_argument("--setting", choices=list("ABCDEF"))
        p.add_argument("--n", type=int)
        p.add_argument("--m", type=int)
        p.add_argument("--seed", type=int, default=None)

    p_train = sub.add_parser("train", help="fit a menu network")
    add_setting_flags(p_train)
    p_train.add_argument("--config", help="INI config file")
    p_train.add_argument("--menu-size", dest="menu_size", type=int)
    p_train.add_argument("--menu-temperature", dest="menu_temperature", type=float)
    p_train.add_argument("--iterations", type=int)
    p_train.add_argument("--samples-per-iter", dest="samples_per_iter", type=int)
    p_train.add_argument("--batch", type=int)
    p_train.add_argument("--tau-a", dest="tau_a", type=float)
    p_train.add_argument("--init-std", dest="init_std", type=float)
    p_train.add_argument("--boost-init-scale", dest="boost_init_scale", type=float)
    p_train.add_argument("--d", type=int)
    p_train.add_argument("--interaction-modules", dest="interaction_modules", type=int)
    p_train.add_argument("--curve", help="training-curve CSV path")
    p_train.add_argument("--out", required=True, help="checkpoint path")
    p_train.add_argument("--verbose", action="store_true")
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="Monte Carlo revenue")
    add_setting_flags(p_eval)
    p_eval.add_argument("--mechanism", default="vcg")
    p_eval.add_argument("--checkpoint")
    p_eval.add_argument("--samples", type=int, default=100000)
    p_eval.add_argument("--out", help="CSV path")
    p_eval.set_defaults(func=_cmd_eval)

    p_audit = sub.add_parser("audit", help="truthfulness audit")
    add_setting_flags(p_audit)
    p_audit.add_argument("--mechanism", default="checkpoint")
    p_audit.add_argument("--checkpoint")
    p_audit.add_argument("--probes", default="1000x100",
                         help="instances x misreports per bidder")
    p_audit.set_defaults(func=_cmd_audit)

    p_an = sub.add_parser("analyze", help="winning-allocation analysis")
    add_setting_flags(p_an)
    p_an.add_argument("--mechanism", default="checkpoint")
    p_an.add_argument("--checkpoint")
    p_an.add_argument("--samples", type=int, default=20000)
    p_an.add_argument("--top", type=int, default=10)
    p_an.add_argument("--out", help="CSV path")
    p_an.add_argument("--plot", help="SVG path")
    p_an.set_defaults(func=_cmd_analyze)

    p_cmp = sub.add_parser("compare", help="baselines vs a checkpoint")
    add_setting_flags(p_cmp)
    p_cmp.add_argument("--checkpoint")
    p_cmp.add_argument("--samples", type=int, default=100000)
    p_cmp.add_argument("--out", help="CSV path")
    p_cmp.set_defaults(func=_cmd_compare)

    p_dump = sub.add_parser("sample-dump", help="write a valuation batch")
    add_setting_flags(p_dump)
    p_dump.add_argument("--batch", type=int, required=True)
    p_dump.add_argument("--out", required=True)
    p_dump.set_defaults(func=_cmd_sample_dump)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags already; normalize other exits
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _fail(USAGE_ERROR, str(exc))
    except (ValueError, KeyError) as exc:
        parser.print_usage(sys.stderr)
        return _fail(USAGE_ERROR, str(exc))
    except (training.NumericalError, ArithmeticError, FloatingPointError) as exc:
        return _fail(NUMERICAL_ERROR, f"numerical: {exc}")


if __name__ == "__main__":
    sys.exit(main())
