"""``sead`` command line: train, evaluate, fit scaling, render, compile and probe.

Exit codes: 0 success, 1 evaluation below threshold, 2 usage error,
3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .evolution import (
    EvolutionConfig,
    NeuralStepper,
    evolve_fixed_horizon,
    evolve_to_fixed_point,
    lightcone_probe,
    lightcone_violations,
    make_stepper,
    noise_probe,
)
from .experiments import bench, default_samples, evaluate, scaling_sweep, write_rows
from .kernel import KernelArch, default_arch, init_params, load_checkpoint, save_checkpoint
from .lattice import ContractError, Lattice
from .lut import RuleTable, extract_rule_table, load_table, serialize_table, verify_table
from .render import cell_correct, overlay_image, symbol_image, write_pnm
from .tasks import TASKS, gen_input, get_task, read_input_fixture
from .trainer import TrainConfig, TrainingDivergedError, default_config, train

log = logging.getLogger("sead")

EXIT_OK, EXIT_BELOW, EXIT_USAGE, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class VerificationError(Exception):
    pass


def _ints(text: str) -> list[int]:
    try:
        return [int(float(tok)) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _strs(text: str) -> list[str]:
    return [tok.strip() for tok in text.split(",") if tok.strip()]


def read_config(path) -> dict:
    """Flat ``key = value`` file; keys use the long flag names (dashes or underscores)."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--config", help="flat key = value file; CLI flags override it")
    g.add_argument("--out", default="runs", help="output directory")
    g.add_argument("--engine", choices=("neural", "table", "frontier"), default="neural")
    g.add_argument("--quiet", action="store_true")
    g.add_argument("--force", action="store_true", help="overwrite existing outputs")

    parser = argparse.ArgumentParser(prog="sead", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"sead {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    p = add("train", "chaos-train a kernel on a task's single-step rule")
    p.add_argument("--task", required=True, choices=sorted(TASKS))
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--l-train", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--hidden", type=_ints)
    p.add_argument("--nonlinearity", choices=("tanh", "relu"))

    p = add("eval", "exact-match sweep over lengths and input modes")
    _model_args(p)
    p.add_argument("--lengths", type=_ints, default=[16, 64, 256, 1024])
    p.add_argument("--modes", type=_strs, default=None, help="random,adversarial (default: all valid)")
    p.add_argument("--samples", type=int, help="per length; default follows 1000/100/10/1 by length")

    p = add("scaling", "fit step counts against length for addition")
    _model_args(p)
    p.add_argument("--lengths", type=_ints, default=[2**k for k in range(4, 15)])
    p.add_argument("--samples", type=int, default=20)

    p = add("render", "spacetime diagram as a P5/P6 pixmap")
    _model_args(p)
    p.add_argument("--input", help="input fixture file (task L mode seed + operand lines)")
    p.add_argument("--L", type=int, default=64)
    p.add_argument("--mode", default="random")
    p.add_argument("--style", choices=("raw", "overlay"), default="raw")
    p.add_argument("--steps", type=int, help="horizon for rule110 (default 64)")
    p.add_argument("--lightcone", type=int, help="source cell of the slope-1 guide line")
    p.add_argument("--oracle", action="store_true", help="evolve the reference rule instead of a model")
    p.add_argument("--name", help="output file name")

    p = add("extract-lut", "compile a checkpoint into a rule table")
    _model_args(p)

    p = add("verify-lut", "compare a rule table with the task's reference rule")
    p.add_argument("--table", required=True)
    p.add_argument("--task", choices=sorted(TASKS))

    p = add("bench", "engine throughput on adversarial addition")
    _model_args(p)
    p.add_argument("--engines", type=_strs, default=["neural", "table", "frontier"])
    p.add_argument("--lengths", type=_ints, default=[1000, 10000, 100000])
    p.add_argument("--reps", type=int, default=5)

    p = add("probe-lightcone", "flip one cell and check the difference stays inside the light cone")
    _model_args(p)
    p.add_argument("--L", type=int, default=64)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--horizon", type=int, default=64)

    p = add("probe-noise", "perturb logits below half the decision margin and compare trajectories")
    _model_args(p)
    p.add_argument("--L", type=int, default=64)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--eps", type=float, help="default: half the table's minimum margin")
    return parser


def _model_args(p):
    p.add_argument("--checkpoint", help="SEAD1 checkpoint")
    p.add_argument("--table", help="SEADLUT1 table (table/frontier engines)")
    p.add_argument("--task", choices=sorted(TASKS))


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = read_config(args.config)
        except OSError as exc:
            parser.error(f"cannot read config: {exc}")
        except UsageError as exc:
            parser.error(str(exc))
        # re-parse so explicit flags win over the file
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        unknown = sorted(set(cfg) - set(known))
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        defaults = {}
        for key, raw in cfg.items():
            action = known[key]
            if action.const is True and action.nargs == 0:
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            else:
                defaults[key] = action.type(raw) if action.type else raw
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


# -- helpers ---------------------------------------------------------------------------


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _claim(path: Path, args) -> Path:
    if path.exists() and not args.force:
        raise UsageError(f"{path} exists; pass --force to overwrite")
    return path


def _manifest(args, outputs: list[Path], t0: float, extra: dict | None = None) -> Path:
    conf = {k: v for k, v in vars(args).items() if k != "func"}
    data = {
        "command": args.command,
        "argv": sys.argv[1:],
        "config": conf,
        "seed": args.seed,
        "artifacts": [str(p) for p in outputs],
        "code_version": __version__,
        "wall_clock_seconds": round(time.perf_counter() - t0, 3),
    }
    data.update(extra or {})
    path = outputs[0].with_name(outputs[0].stem + ".manifest.json")
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _load_model(args, need_table: bool = False):
    """Returns ``(task, params | None, table | None)``."""
    params = table = None
    if getattr(args, "checkpoint", None):
        params = load_checkpoint(args.checkpoint)
    if getattr(args, "table", None):
        table = load_table(args.table)
    if params is None and table is None:
        raise UsageError("pass --checkpoint and/or --table")
    name = args.task or (params.arch.task if params is not None else table.task)
    task = get_task(name)
    if need_table and table is None:
        table, _ = extract_rule_table(params)
    return task, params, table


def _verified(task, table: RuleTable) -> RuleTable:
    bad = verify_table(table, task.rule)
    if bad:
        raise VerificationError(
            f"rule table disagrees with the {task.name} reference on {len(bad)} windows "
            f"(first {bad[0]}); refusing to evaluate with an unverified table"
        )
    return table


# -- subcommands ----------------------------------------------------------------------------


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    out = _out_dir(args)
    task = get_task(args.task)
    ckpt = _claim(out / f"{task.name}.ckpt", args)
    report_csv = _claim(out / f"{task.name}.train.csv", args)
    base = default_arch(task.name)
    arch = KernelArch(
        alphabet_size=base.alphabet_size,
        embed_dim=args.embed_dim or base.embed_dim,
        radius=base.radius,
        hidden=tuple(args.hidden) if args.hidden else base.hidden,
        nonlinearity=args.nonlinearity or base.nonlinearity,
        quiescent_id=task.alphabet.quiescent_id,
        task=task.name,
    )
    cfg = default_config(task.name)
    overrides = dict(steps=args.steps, lr=args.lr, batch_size=args.batch_size, rho=args.rho,
                     L_train=args.l_train, eval_every=args.eval_every)
    cfg = TrainConfig(**{**asdict(cfg), **{k: v for k, v in overrides.items() if v is not None}, "seed": args.seed})
    try:
        params, report = train(init_params(arch, args.seed), task, cfg)
    except TrainingDivergedError as exc:
        log.error("%s", exc)
        return EXIT_BELOW
    checksum = save_checkpoint(params, ckpt)
    report.write_csv(report_csv)
    _manifest(args, [ckpt, report_csv], t0, {
        "arch": asdict(arch), "train_config": asdict(cfg), "checkpoint_checksum": checksum,
        "solved_at": report.solved_at, "final_accuracy": report.final_accuracy,
    })
    log.info("%s: %d params, exhaustive accuracy %.4f after %d steps (solved at %s), checksum %s",
             task.name, params.n_params, report.final_accuracy, report.steps_run, report.solved_at, checksum)
    return EXIT_OK if report.final_accuracy == 1.0 else EXIT_BELOW


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    task, params, table = _load_model(args, need_table=args.engine != "neural")
    if args.engine != "neural":
        _verified(task, table)
    elif params is None:
        raise UsageError("the neural engine needs --checkpoint")
    modes = args.modes or (["random", "adversarial"] if task.name == "addition" else ["random"])
    out = _claim(_out_dir(args) / f"eval_{task.name}_{args.engine}.csv", args)
    rows = []
    for L in args.lengths:
        for mode in modes:
            n = args.samples or default_samples(L)
            row, _ = evaluate(task, L, mode, n, args.engine, params, table, args.seed)
            rows.append(row)
            log.info("%s L=%d %s: exact %.4f steps %.1f [%d, %d] (%.1fs)", task.name, L, mode,
                     row.exact_match, row.mean_steps, row.min_steps, row.max_steps, row.wall_clock)
    write_rows(out, rows)
    _manifest(args, [out], t0)
    return EXIT_OK if all(r.exact_match == 1.0 for r in rows) else EXIT_BELOW


def cmd_scaling(args) -> int:
    t0 = time.perf_counter()
    task, params, table = _load_model(args, need_table=args.engine != "neural")
    if task.name != "addition":
        raise UsageError("scaling fits are defined for addition")
    if len(set(args.lengths)) < 2:
        raise UsageError("a scaling fit needs at least two lengths")
    if args.engine != "neural":
        _verified(task, table)
    out = _claim(_out_dir(args) / "scaling.csv", args)
    rows, fit = scaling_sweep(args.lengths, args.samples, args.engine, params, table, args.seed)
    write_rows(out, rows)
    fits = out.with_name("scaling_fit.json")
    fits.write_text(json.dumps(asdict(fit), indent=2) + "\n")
    _manifest(args, [out, fits], t0)
    log.info("adversarial log-log slope %.4f; random log-log slope %.4f; random steps per doubling %.3f",
             fit.adversarial_loglog_slope, fit.random_loglog_slope, fit.random_log2_slope)
    return EXIT_OK if not fit.excluded else EXIT_BELOW


def cmd_render(args) -> int:
    t0 = time.perf_counter()
    if args.input:
        task, inp, _, _ = read_input_fixture(Path(args.input).read_text())
    else:
        if not args.task and not args.checkpoint:
            raise UsageError("render needs --task, --checkpoint or --input")
        task = get_task(args.task) if args.task else get_task(load_checkpoint(args.checkpoint).arch.task)
        if task.name == "rule110" and args.mode == "single":
            inp = np.zeros(args.L, dtype=np.uint8)
            inp[args.L // 2] = 1
        else:
            inp = gen_input(task, args.L, args.mode, seed=args.seed)
    if args.oracle:
        stepper = make_stepper("table", table=RuleTable.from_rule(task.rule))
    else:
        _, params, table = _load_model(args)
        if args.engine == "neural" and params is not None:
            stepper = NeuralStepper(params)
        else:
            stepper = make_stepper("table", table=table or extract_rule_table(params)[0])
    lattice = task.encode_input(inp)
    if task.has_fixed_point:
        res = evolve_to_fixed_point(stepper, lattice, EvolutionConfig(record_trace=True, stride=1))
        rows = res.trace.as_array()
        answer = task.global_oracle(inp)
    else:
        rows = evolve_fixed_horizon(stepper, lattice, args.steps or 64).as_array()
        truth = evolve_fixed_horizon(make_stepper("table", table=RuleTable.from_rule(task.rule)), lattice, len(rows) - 1)
        answer = truth.as_array()
    if args.style == "raw":
        img = symbol_image(rows, task.alphabet.size)
        ext = "pgm"
    else:
        img = overlay_image(cell_correct(task, rows, answer), args.lightcone)
        ext = "ppm"
    out = _claim(_out_dir(args) / (args.name or f"{task.name}_{args.style}.{ext}"), args)
    write_pnm(out, img)
    _manifest(args, [out], t0, {"rows": int(rows.shape[0]), "cols": int(rows.shape[1])})
    return EXIT_OK


def cmd_extract_lut(args) -> int:
    t0 = time.perf_counter()
    if not args.checkpoint:
        raise UsageError("extract-lut needs --checkpoint")
    params = load_checkpoint(args.checkpoint)
    table, margin = extract_rule_table(params)
    out = _claim(_out_dir(args) / f"{params.arch.task}.lut", args)
    serialize_table(table, out)
    _manifest(args, [out], t0, {"min_margin": margin, "entries": int(table.entries.size)})
    log.info("%s: %d entries, minimum logit margin %.6g", params.arch.task, table.entries.size, margin)
    if params.arch.task in TASKS and verify_table(table, get_task(params.arch.task).rule):
        log.warning("extracted table does not match the %s reference rule", params.arch.task)
    return EXIT_OK


def cmd_verify_lut(args) -> int:
    table = load_table(args.table)
    task = get_task(args.task or table.task)
    bad = verify_table(table, task.rule)
    if bad:
        log.error("%d mismatching windows, e.g. %s", len(bad), bad[:5])
        return EXIT_VERIFY
    log.info("table matches the %s reference on all %d windows", task.name, table.entries.size)
    return EXIT_OK


def cmd_bench(args) -> int:
    t0 = time.perf_counter()
    _, params, table = _load_model(args, need_table=True)
    _verified(get_task("addition"), table)
    if "neural" in args.engines and params is None:
        raise UsageError("the neural engine needs --checkpoint")
    out = _claim(_out_dir(args) / "bench.csv", args)
    rows = bench(args.engines, args.lengths, params, table, args.reps)
    write_rows(out, rows)
    _manifest(args, [out], t0)
    return EXIT_OK


def cmd_probe_lightcone(args) -> int:
    t0 = time.perf_counter()
    task, params, table = _load_model(args, need_table=args.engine != "neural")
    stepper = NeuralStepper(params) if args.engine == "neural" else make_stepper("table", table=table)
    rng = np.random.default_rng(args.seed)
    out = _claim(_out_dir(args) / f"lightcone_{task.name}.csv", args)
    total = 0
    with open(out, "w") as fh:
        fh.write("trial,flip,horizon,violations\n")
        for k in range(args.trials):
            lat = Lattice(rng.integers(0, task.alphabet.size, args.L), task.alphabet)
            i, T = int(rng.integers(args.L)), int(rng.integers(1, args.horizon + 1))
            v = lightcone_violations(lightcone_probe(stepper, lat, i, T), i, task.radius)
            total += len(v)
            fh.write(f"{k},{i},{T},{len(v)}\n")
    _manifest(args, [out], t0, {"violations": total})
    log.info("%d light-cone violations over %d trials", total, args.trials)
    return EXIT_OK if total == 0 else EXIT_VERIFY


def cmd_probe_noise(args) -> int:
    t0 = time.perf_counter()
    task, params, table = _load_model(args)
    if params is None:
        raise UsageError("probe-noise needs --checkpoint")
    _, margin = extract_rule_table(params)
    eps = args.eps if args.eps is not None else margin / 2
    out = _claim(_out_dir(args) / f"noise_{task.name}.csv", args)
    changed = 0
    with open(out, "w") as fh:
        fh.write("trial,eps,min_margin,steps,identical\n")
        for k in range(args.trials):
            inp = gen_input(task, args.L, "random", seed=[args.seed, k])
            lat = task.encode_input(inp)
            res = noise_probe(params, lat, eps, steps=None if task.has_fixed_point else args.L, seed=k)
            changed += not res.identical
            fh.write(f"{k},{eps!r},{res.min_margin!r},{res.steps},{int(res.identical)}\n")
    _manifest(args, [out], t0, {"eps": eps, "table_min_margin": margin, "changed_trajectories": changed})
    log.info("eps=%.3g: %d of %d trajectories changed", eps, changed, args.trials)
    return EXIT_OK if changed == 0 else EXIT_VERIFY


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "scaling": cmd_scaling,
    "render": cmd_render,
    "extract-lut": cmd_extract_lut,
    "verify-lut": cmd_verify_lut,
    "bench": cmd_bench,
    "probe-lightcone": cmd_probe_lightcone,
    "probe-noise": cmd_probe_noise,
}


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"sead {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VerificationError as exc:
        print(f"sead {args.command}: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (ContractError, OSError, ValueError) as exc:
        print(f"sead {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
