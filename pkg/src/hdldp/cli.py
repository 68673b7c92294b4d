"""Command-line harness: ``hdldp <subcommand> [options]``.

Every subcommand prints a JSON document on stdout. Failures print
``{"error": <type>, "message": <text>}`` on stderr and exit with status 2
for invalid configuration or usage and 1 for anything else.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import collector, datasets, experiments, frequency, hdr4me
from .errors import ConfigError, HDLDPError, ParseError
from .framework import DeviationModel, ValueDistribution, berry_esseen_bound, deviation_model, supremum_probability
from .mechanisms import KINDS, MechanismSpec
from .seeding import substream


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc.msg}", row=exc.lineno, column=exc.colno) from None


def _emit(doc, out=None):
    text = json.dumps(doc, indent=2)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(json.dumps({"out": out}))
    else:
        print(text)


def _overrides(args, config, keys=("eps", "m", "trials", "seed", "mechanism", "out")):
    """Apply command-line flags on top of a config dict."""
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    return config


def _config_dict(args):
    return _read_json(args.config) if getattr(args, "config", None) else {}


def cmd_gen_data(args):
    cfg = _config_dict(args)
    for key in ("kind", "n", "d", "seed"):
        if getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    gen = datasets.GeneratorConfig.from_dict(cfg)
    data = datasets.generate(gen, normalize_columns=not args.raw)
    datasets.save_csv(data, args.out)
    return {"out": args.out, "n": data.n, "d": data.d, "normalized": data.normalized, "generator": gen.to_dict()}


def _spec_from_args(args, d):
    m = d if args.m is None else args.m
    if args.eps is None:
        raise ConfigError("--eps is required")
    return MechanismSpec.from_budget(args.mechanism, args.eps, m), m


def cmd_perturb(args):
    data = datasets.normalize(datasets.load_csv(args.data))
    spec, m = _spec_from_args(args, data.d)
    dims, values = collector.perturb_dataset(data.values, spec, m, substream(args.seed or 0))
    collector.write_reports(args.out, dims, values)
    return {"out": args.out, "reports": int(dims.size), "mechanism": spec.to_dict(), "m": m, "seed": args.seed or 0}


def cmd_aggregate(args):
    dims, values = collector.read_reports(args.reports)
    d = args.d if args.d is not None else int(dims.max()) + 1
    agg = collector.AggregateState(d).add(dims, values).estimate()
    doc = agg.to_dict()
    if args.calibrate:
        spec, _ = _spec_from_args(args, d)
        prior = ValueDistribution.from_dict(_read_json(args.prior)) if args.prior else None
        doc["theta_hat"] = collector.calibrate(agg.theta_hat, spec, prior, required=True).tolist()
        doc["calibrated"] = True
    return doc


def cmd_analyze(args):
    spec = MechanismSpec.from_dict(_read_json(args.spec))
    vd = ValueDistribution.from_dict(_read_json(args.values)) if args.values else None
    model = deviation_model(spec, vd, args.r, d=args.d, signed=args.signed)
    be = berry_esseen_bound(spec, vd, args.r, d=args.d, signed=args.signed)
    return {
        "mechanism": spec.to_dict(),
        "delta": model.delta.tolist(),
        "sigma2": model.sigma2.tolist(),
        "r": model.r.tolist(),
        "sup_prob": {repr(x): supremum_probability(model, x) for x in args.xi},
        "berry_esseen": be.tolist(),
    }


def cmd_recalibrate(args):
    theta = _read_json(args.theta)
    if isinstance(theta, dict):
        theta = theta.get("theta_hat")
    if not isinstance(theta, list):
        raise ConfigError("theta file must hold a list or an object with 'theta_hat'")
    model = DeviationModel.from_dict(_read_json(args.model)) if args.model else None
    cfg = _config_dict(args)
    if args.regularizer is not None:
        cfg["regularizer"] = args.regularizer
    res = hdr4me.recalibrate(np.asarray(theta, dtype=float), model, hdr4me.RecalibrationConfig.from_dict(cfg))
    return res.to_dict()


def cmd_run(args):
    cfg = experiments.ExperimentConfig.from_dict(_overrides(args, _config_dict(args)))
    return experiments.run_experiment(cfg)


def cmd_validate(args):
    cfg = experiments.ExperimentConfig.from_dict(_overrides(args, _config_dict(args)))
    report = experiments.validate_framework(cfg)
    if args.csv_prefix:
        h = report["histogram"]
        rows = [
            {"left": a, "right": b, "mass": m, "density": p}
            for a, b, m, p in zip(h["edges"][:-1], h["edges"][1:], h["masses"], h["density"])
        ]
        experiments.write_rows(args.csv_prefix + "_histogram.csv", rows)
        pdf = report["pdf"]
        experiments.write_rows(args.csv_prefix + "_pdf.csv", [{"x": x, "pdf": p} for x, p in zip(pdf["x"], pdf["pdf"])])
    return report


def cmd_bench(args):
    cfg = _config_dict(args)
    if args.eps is not None:
        cfg["eps"] = args.eps
    if args.m is not None:
        cfg["m"] = args.m
    if args.mechanism is not None:
        cfg["mechanisms"] = [args.mechanism]
    bench = experiments.BenchConfig.from_dict(cfg)
    rows = experiments.benchmark_mechanisms(bench)
    out = args.out or bench.out
    if out:
        experiments.write_rows(out, rows)
    return {"config": bench.to_dict(), "rows": rows}


def cmd_freq(args):
    if args.data:
        if not args.schema:
            raise ConfigError("--schema is required with --data")
        schema = frequency.CategoricalSchema.from_dict(_read_json(args.schema))
        data = frequency.load_categorical_csv(args.data, schema)
        m = schema.d if args.m is None else args.m
        if args.eps is None:
            raise ConfigError("--eps is required")
        rc = hdr4me.RecalibrationConfig(args.regularizer) if args.regularizer else None
        est = frequency.estimate_frequencies(
            data, schema, args.mechanism, args.eps, m, substream(args.seed or 0), recalibration=rc
        )
        return est.to_dict()
    cfg = _overrides(args, _config_dict(args), ("eps", "m", "trials", "seed", "mechanism"))
    if args.regularizer:
        cfg["regularizer"] = args.regularizer
    return experiments.run_frequency_experiment(experiments.FrequencyConfig.from_dict(cfg))


def build_parser():
    parser = _Parser(prog="hdldp", description="High-dimensional LDP mean estimation toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, mech_default=None):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--eps", type=float)
        p.add_argument("--m", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--mechanism", choices=KINDS, default=mech_default)
        p.add_argument("--out")
        return p

    p = sub.add_parser("gen-data", help="generate a synthetic dataset CSV")
    p.add_argument("--config")
    p.add_argument("--kind", choices=datasets.GENERATOR_KINDS)
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--raw", action="store_true", help="skip per-column normalization")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = common(sub.add_parser("perturb", help="perturb a dataset into a report CSV"), "laplace")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_perturb)

    p = common(sub.add_parser("aggregate", help="aggregate a report CSV"), "laplace")
    p.add_argument("--reports", required=True)
    p.add_argument("--d", type=int)
    p.add_argument("--calibrate", action="store_true")
    p.add_argument("--prior", help="value distribution JSON for bounded mechanisms")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("analyze", help="deviation model of a mechanism")
    p.add_argument("--spec", required=True, help="mechanism spec JSON")
    p.add_argument("--values", help="value distribution JSON")
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--d", type=int)
    p.add_argument("--xi", type=float, nargs="+", default=[0.001, 0.01, 0.05, 0.1])
    p.add_argument("--signed", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("recalibrate", help="apply L1/L2 re-calibration")
    p.add_argument("--theta", required=True)
    p.add_argument("--model")
    p.add_argument("--config")
    p.add_argument("--regularizer", choices=hdr4me.REGULARIZERS)
    p.add_argument("--out")
    p.set_defaults(func=cmd_recalibrate)

    p = common(sub.add_parser("run", help="baseline vs re-calibrated MSE experiment"))
    p.set_defaults(func=cmd_run)

    p = common(sub.add_parser("validate", help="Monte Carlo check of the deviation model"))
    p.add_argument("--csv-prefix")
    p.set_defaults(func=cmd_validate)

    p = common(sub.add_parser("bench", help="supremum probability table"))
    p.set_defaults(func=cmd_bench)

    p = common(sub.add_parser("freq", help="categorical frequency estimation"), None)
    p.add_argument("--data")
    p.add_argument("--schema")
    p.add_argument("--regularizer", choices=hdr4me.REGULARIZERS)
    p.set_defaults(func=cmd_freq)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if not getattr(args, "func", None):
            raise ConfigError("a subcommand is required")
        if args.command == "freq" and args.data and args.mechanism is None:
            args.mechanism = "laplace"
        doc = args.func(args)
        if args.command in ("gen-data", "perturb", "bench"):
            print(json.dumps(doc, indent=2))
        else:
            _emit(doc, args.out)
        return 0
    except (ConfigError, HDLDPError, ValueError, OSError) as exc:
        code = 2 if isinstance(exc, ConfigError) else 1
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return code


if __name__ == "__main__":
    sys.exit(main())
