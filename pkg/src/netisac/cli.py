"""``netisac`` command line.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, NetIsacError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _load_config(path):
    from .harness import ExperimentConfig
    return ExperimentConfig() if path is None else ExperimentConfig.load(path)


def _parse_values(text):
    try:
        return [float(v) if any(c in v for c in ".eE") else int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse sweep values {text!r}") from None


def _emit(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    print(text)


def cmd_simulate(args):
    from .harness import run_experiment, summary_dict
    cfg = _load_config(args.config)
    res = run_experiment(cfg, args.output)
    out = summary_dict(res)
    out["files"] = res.files
    _emit(out, None)


def cmd_theory(args):
    from .harness import predict
    cfg = _load_config(args.config)
    _, _, report = predict(cfg, run=args.run, step=args.step)
    _emit(report, args.output)


def cmd_beamform(args):
    from .harness import beamform
    cfg = _load_config(args.config)
    rep = beamform(cfg, args.beta1, args.run)
    _emit(rep.to_dict(), args.output)


def cmd_sweep(args):
    from .harness import sweep, sweep_csv
    cfg = _load_config(args.config)
    header, rows = sweep(cfg, args.axis, _parse_values(args.values))
    text = sweep_csv(header, rows)
    out = Path(args.output or Path(cfg.output_dir) / f"sweep_{args.axis}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(text, end="")


def build_parser():
    p = argparse.ArgumentParser(prog="netisac", description="Networked sparse ISAC sensing simulator")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run all variants and write curves + summary")
    s.add_argument("--config")
    s.add_argument("--output", help="output directory (default: config output_dir)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("theory", help="steady-state MSE prediction for one instance")
    s.add_argument("--config")
    s.add_argument("--run", type=int, default=0)
    s.add_argument("--step", type=int, choices=(1, 2), default=2)
    s.add_argument("--output", help="also write the JSON report here")
    s.set_defaults(func=cmd_theory)

    s = sub.add_parser("beamform", help="DCA beam design for one instance")
    s.add_argument("--config")
    s.add_argument("--beta1", type=float, default=None)
    s.add_argument("--run", type=int, default=0)
    s.add_argument("--output")
    s.set_defaults(func=cmd_beamform)

    s = sub.add_parser("sweep", help="steady-state metric along one axis")
    s.add_argument("--axis", required=True, choices=("L", "N", "K", "beta1", "SNR"))
    s.add_argument("--values", required=True, help="comma-separated, e.g. 4,8,16")
    s.add_argument("--config")
    s.add_argument("--output", help="CSV path (default: <output_dir>/sweep_<axis>.csv)")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"netisac: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError) as exc:
        print(f"netisac: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except NetIsacError as exc:
        print(f"netisac: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
