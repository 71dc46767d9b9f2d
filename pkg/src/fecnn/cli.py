"""Command-line driver: ``fecnn {sweep,bitstats,twophase,train,eval-plan}``.

Results are CSV with a fixed header per subcommand; every row carries the
master seed and a config hash. Config or IO problems exit with status 2 and
a one-line diagnostic on stderr.

Train config files hold one ``key = value`` per line (``#`` starts a
comment). Recognised keys are the command-line options below (``model``,
``dataset``, ``repr``, ``ecc``, ``ber``, ``target_r``, ``mode``, ``seed``,
``trials``, ``limit``) plus any :class:`fecnn.ddpg.TrainConfig` field.
Command-line flags override the file.
"""

import argparse
import csv
import io
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import codec, ddpg, experiments, gradnet, nn
from .ecc import EccSpec
from .scheme import PlanEvaluator, baseline_for_target, load_plan, save_plan

EXIT_CONFIG = 2

_HARNESS_KEYS = {"model", "dataset", "repr", "ecc", "ber", "target_r", "mode", "seed", "trials", "limit", "select_trials"}


class ConfigError(Exception):
    pass


# ------------------------------------------------------------------ helpers


def parse_config_file(path):
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{n}: expected key = value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _coerce(name, value, kind):
    try:
        if kind is bool:
            return str(value).lower() in ("1", "true", "yes", "on")
        if kind is tuple:
            return tuple(int(v) for v in str(value).replace("/", ",").split(",") if v.strip())
        return kind(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {value!r}") from exc


def train_config(values):
    """TrainConfig from a mapping of strings; unknown keys are errors."""
    defaults = ddpg.TrainConfig()
    kw = {}
    for f in fields(ddpg.TrainConfig):
        if f.name in values and values[f.name] is not None:
            kw[f.name] = _coerce(f.name, values[f.name], type(getattr(defaults, f.name)))
    unknown = set(values) - set(kw) - _HARNESS_KEYS - {f.name for f in fields(ddpg.TrainConfig)}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        return ddpg.TrainConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _grid(text):
    try:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad target redundancy list {text!r}") from exc
    if not vals or any(v < 0 for v in vals):
        raise ConfigError("target redundancy values must be non-negative")
    return vals


def _ber(value):
    p = float(value)
    if not 0.0 < p < 1.0:
        raise ConfigError(f"--ber must lie in (0, 1), got {p}")
    return p


def load_inputs(args):
    try:
        model = nn.load_model(args.model)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load model: {exc}") from exc
    try:
        rep = codec.Representation.parse(args.repr)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return model, rep


def load_data(args):
    try:
        return nn.load_dataset(args.dataset)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load dataset: {exc}") from exc


def parse_ecc(text):
    try:
        return EccSpec.parse(text)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def write_rows(rows, columns, out):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    if out in (None, "-"):
        sys.stdout.write(buf.getvalue())
        return
    try:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(buf.getvalue())
    except OSError as exc:
        raise ConfigError(f"cannot write {out}: {exc.strerror}") from exc


def _evaluator(args, model, rep):
    return PlanEvaluator(model, load_data(args), rep, args.limit)


# ------------------------------------------------------------------ subcommands


def cmd_sweep(args):
    model, rep = load_inputs(args)
    ecc = parse_ecc(args.ecc)
    p = _ber(args.ber)
    grid = _grid(args.target_r)
    methods = [m.strip() for m in args.mode.split(",")]
    for m in methods:
        if m not in ("baseline", *ddpg.MODES):
            raise ConfigError(f"unknown method {m!r}")
    cfg = train_config(parse_config_file(args.config)) if args.config else ddpg.TrainConfig()
    if args.iterations is not None:
        cfg = ddpg.TrainConfig(**{**ddpg.config_to_dict(cfg), "iterations": args.iterations})
    pe = _evaluator(args, model, rep)

    def keep(method, target, plan):
        if args.plan_dir:
            path = Path(args.plan_dir) / f"{method}_r{target:g}_s{args.seed}.plan"
            path.parent.mkdir(parents=True, exist_ok=True)
            save_plan(path, plan, pe.layer_sizes, p)

    rows = experiments.sweep(pe, ecc, p, grid, methods, args.trials, args.seed, cfg, keep)
    write_rows(rows, experiments.SWEEP_COLUMNS, args.out)


def cmd_bitstats(args):
    model, rep = load_inputs(args)
    write_rows(experiments.bitstats(model, rep, args.seed), experiments.BITSTATS_COLUMNS, args.out)


def cmd_twophase(args):
    model, rep = load_inputs(args)
    pe = _evaluator(args, model, rep)
    plan_a = plan_b = exposed = None
    try:
        if args.plan_a:
            plan_a = load_plan(args.plan_a)[0]
        if args.plan_b:
            plan_b = load_plan(args.plan_b)[0]
        if args.protect:
            exposed = 1 - load_plan(args.protect)[0].masks
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load plan: {exc}") from exc
    if args.exponent_only:
        if rep.kind != "float32":
            raise ConfigError("--exponent-only needs the float32 representation")
        exp = experiments.exponent_masks(len(pe.layer_sizes))
        exposed = exp if exposed is None else exposed & exp
    try:
        rows = experiments.twophase(pe, args.scenario, _ber(args.ber), args.steps, args.trials, args.seed, plan_a, plan_b, exposed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    write_rows(rows, experiments.TWOPHASE_COLUMNS, args.out)


def cmd_train(args):
    values = parse_config_file(args.config) if args.config else {}
    for key in ("model", "dataset", "repr", "ecc", "ber", "target_r", "mode", "seed", "limit", "iterations", "select_trials"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    args.model = values.get("model")
    args.dataset = values.get("dataset")
    args.repr = values.get("repr", "float32")
    args.limit = int(values["limit"]) if values.get("limit") is not None else None
    ecc = parse_ecc(values.get("ecc", "ideal"))
    if "ber" not in values or "target_r" not in values:
        raise ConfigError("train needs ber and target_r")
    p = _ber(values["ber"])
    values["target_r"] = _grid(values["target_r"])[0]
    values.setdefault("mode", "bitmask")
    if values["mode"] == "baseline":
        raise ConfigError("train runs a learned mode (bitmask or topbits)")
    cfg = train_config(values)
    model, rep = load_inputs(args)
    pe = _evaluator(args, model, rep)
    if args.out is None:
        raise ConfigError("train needs --out <prefix>")
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)

    res = experiments.train_plan(pe, ecc, p, cfg)
    digest = experiments.config_hash({"kind": "train", "ecc": str(ecc), "ber": p, "repr": str(rep), "limit": args.limit, "train": ddpg.config_to_dict(cfg)})
    header = [
        f"# mode={cfg.mode} target_r={cfg.target_r!r} ber={p!r} ecc={ecc} repr={rep} seed={cfg.seed} config_hash={digest}",
        "# state features scaled by per-feature maxima over the model",
    ]
    buf = io.StringIO()
    buf.write("\n".join(header) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ddpg.LOG_COLUMNS)
    for row in res.log:
        w.writerow([row[0], *(repr(float(v)) for v in row[1:])])
    Path(f"{prefix}.log.csv").write_text(buf.getvalue())
    save_plan(f"{prefix}.plan", res.plan, pe.layer_sizes, p)
    if res.agent is not None:
        gradnet.save_checkpoint(f"{prefix}.ckpt.npz", res.agent.nets())
    score = max((s[0] for s in res.selection), default=float("nan"))
    print(
        f"plan {prefix}.plan: bits/layer {'/'.join(map(str, res.plan.bit_counts()))} "
        f"r={res.plan.redundancy(pe.layer_sizes, p).r:.6g} selection_P={score:.4f}"
        + (" (baseline fallback)" if res.fallback else "")
    )


def cmd_eval_plan(args):
    model, rep = load_inputs(args)
    p = _ber(args.ber)
    if args.plan:
        try:
            plan, sizes, _, _ = load_plan(args.plan)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load plan: {exc}") from exc
        if list(sizes) != list(model.layer_sizes) or plan.m != rep.m:
            raise ConfigError("plan does not match the model geometry or representation")
        name = Path(args.plan).name
    else:
        if args.target_r is None:
            raise ConfigError("eval-plan needs --plan or --target-r (baseline)")
        plan = baseline_for_target(_grid(args.target_r)[0], model.layer_sizes, rep.m, parse_ecc(args.ecc), p)
        name = "baseline"
    pe = _evaluator(args, model, rep)
    write_rows(experiments.evaluate_plan_rows(pe, plan, p, args.trials, args.seed, name), experiments.EVAL_COLUMNS, args.out)


# ------------------------------------------------------------------ parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="model file (default: packaged reference model)")
    common.add_argument("--dataset", help="directory with IDX files (default: $FECNN_DATA_DIR or packaged data)")
    common.add_argument("--repr", help="float32 (default) or fixed:<m>:<c|auto>")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--out", help="output path (CSV; '-' or omitted for stdout)")
    common.add_argument("--limit", type=int, help="evaluate on the first N test images only")
    common.add_argument("-v", "--verbose", action="store_true")

    noisy = argparse.ArgumentParser(add_help=False)
    noisy.add_argument("--ecc", default="ideal", help="ideal or bch:<n>:<k>:<t>")
    noisy.add_argument("--ber", type=float, default=0.01, help="channel bit flip probability")
    noisy.add_argument("--trials", type=int, default=100, help="Monte-Carlo trials per evaluation")

    ap = argparse.ArgumentParser(prog="fecnn", description="Selective ECC protection experiments for neural network weights.")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sweep", parents=[common, noisy], help="redundancy/accuracy trade-off table")
    s.add_argument("--target-r", required=True, help="comma-separated target redundancy grid")
    s.add_argument("--mode", default="baseline,topbits,bitmask", help="comma-separated subset of baseline,topbits,bitmask")
    s.add_argument("--config", help="key = value training config for the learned methods")
    s.add_argument("--iterations", type=int, help="override training iterations")
    s.add_argument("--plan-dir", help="also save every evaluated plan here")
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser("bitstats", parents=[common], help="per-position bit value distribution")
    b.set_defaults(func=cmd_bitstats)

    t = sub.add_parser("twophase", parents=[common, noisy], help="two-phase directional degradation curves")
    t.add_argument("--scenario", required=True, choices=experiments.SCENARIOS)
    t.add_argument("--steps", type=int, default=10, help="error probability steps per phase")
    t.add_argument("--plan-a", help="TopBits plan (set-difference scenarios)")
    t.add_argument("--plan-b", help="BitMask plan (set-difference scenarios)")
    t.add_argument("--protect", help="plan whose masked bits are never perturbed")
    t.add_argument("--exponent-only", action="store_true", help="perturb float32 exponent positions only")
    t.set_defaults(func=cmd_twophase)

    tr = sub.add_parser("train", parents=[common], help="learn a protection plan")
    tr.add_argument("--config", help="key = value config file")
    tr.add_argument("--ecc")
    tr.add_argument("--ber", type=float)
    tr.add_argument("--target-r", dest="target_r")
    tr.add_argument("--mode", choices=ddpg.MODES)
    tr.add_argument("--iterations", type=int)
    tr.add_argument("--select-trials", type=int, dest="select_trials")
    tr.set_defaults(func=cmd_train)

    e = sub.add_parser("eval-plan", parents=[common, noisy], help="Monte-Carlo accuracy of a plan")
    e.add_argument("--plan", help="plan file (omit to evaluate the baseline for --target-r)")
    e.add_argument("--target-r")
    e.add_argument("--mode", default="baseline", choices=("baseline",), help=argparse.SUPPRESS)
    e.set_defaults(func=cmd_eval_plan)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "trials", None) is not None and args.trials < 1:
        print("fecnn: error: --trials must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.command != "train":
        # train resolves these after merging its config file
        args.repr = args.repr or "float32"
        args.seed = 0 if args.seed is None else args.seed
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"fecnn: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
