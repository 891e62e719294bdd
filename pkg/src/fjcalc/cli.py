"""Command-line front end: ``fjcalc <command> [options]``.

Every command writes CSV (to ``--out`` or stdout) preceded by ``#`` comment
lines describing the run: tool version, seeds, a digest of the configuration,
the command line and a timestamp. Apart from the timestamp line, identical
invocations produce identical bytes.

Exit codes: 0 success, 1 usage or configuration error, 2 unbounded delay,
3 an input violates its declared envelope, 4 a bound was violated.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import shlex
import sys
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .curves import token_bucket
from .errors import UnboundedDelayError
from .forkjoin import JOB, WORK, ForkJoinSystem, queue_delay_bounds, verify_claim1
from .stochastic import (
    DEFAULT_SAMPLES, DEFAULT_WARMUP, HOLD_LAST, ZERO_BEYOND, empirical_gsbb, envelope_csv,
    measured_envelope, verify_claim2,
)
from .workload import CUMULATIVE, INCREMENTS, PRNG, GeneratorSpec, TraceSpec, generate, load_trace, save_trace

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_UNBOUNDED = 2
EXIT_HYPOTHESIS = 3
EXIT_VIOLATED = 4

SLACK_TOL = 1e-9


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for unbounded delay here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "%s: error: %s\n" % (self.prog, message))


@dataclass
class RunMetadata:
    command: str
    seeds: list = field(default_factory=list)
    config_digest: str = ""
    timestamp: str = ""
    version: str = __version__

    def lines(self):
        out = ["fjcalc %s" % self.version, "command: %s" % self.command]
        if self.seeds:
            out.append("seed: %s (%s via numpy SeedSequence)" % (" ".join(map(str, self.seeds)), PRNG))
        if self.config_digest:
            out.append("config-sha256: %s" % self.config_digest)
        out.append("timestamp: %s" % self.timestamp)
        return out


def _digest(*objs) -> str:
    blob = json.dumps(objs, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _floats(text):
    try:
        vals = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected a comma-separated list of numbers, got %r" % text)
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


# -- inputs ----------------------------------------------------------------------------------

def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError("cannot read %s %s: %s" % (what, path, exc.strerror))
    except json.JSONDecodeError as exc:
        raise UsageError("%s %s is not valid JSON: %s" % (what, path, exc))


def load_config(args):
    if not args.config:
        raise UsageError("--config FILE is required for this command")
    obj = _read_json(args.config, "config")
    if not isinstance(obj, dict):
        raise UsageError("config must be a JSON object")
    system_obj = {k: v for k, v in obj.items() if k != "source"}
    try:
        system = ForkJoinSystem.from_json(system_obj)
    except (ValueError, TypeError, KeyError) as exc:
        raise UsageError("config: %s" % exc)
    return system, obj


def _generator_spec(args, config_obj=None):
    if getattr(args, "source", None):
        obj = _read_json(args.source, "source")
    elif config_obj and "source" in config_obj:
        obj = config_obj["source"]
    else:
        return None
    try:
        spec = GeneratorSpec.from_json(obj)
    except (ValueError, TypeError) as exc:
        raise UsageError("source: %s" % exc)
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    return spec


def load_input(args, config_obj=None):
    """The arrival process named by ``--trace`` or ``--source`` (or the config's source)."""
    if getattr(args, "trace", None):
        try:
            spec = TraceSpec(args.trace, args.format, args.time_unit, args.work_unit, args.sort,
                             interpolation=args.interpolation)
            A = load_trace(spec)
        except OSError as exc:
            raise UsageError("cannot read trace %s: %s" % (args.trace, exc.strerror))
        except ValueError as exc:
            raise UsageError("trace %s: %s" % (args.trace, exc))
        return A, {"trace": args.trace, "sha256": hashlib.sha256(Path(args.trace).read_bytes()).hexdigest()}, []
    spec = _generator_spec(args, config_obj)
    if spec is None:
        raise UsageError("give an input with --trace FILE or --source FILE")
    try:
        A = generate(spec)
    except OSError as exc:
        raise UsageError("cannot read trace %s: %s" % (spec.path, exc.strerror))
    except ValueError as exc:
        raise UsageError("source: %s" % exc)
    return A, spec.to_json(), [spec.seed]


def emit(args, meta: RunMetadata, body: str):
    text = "".join("# %s\n" % line for line in meta.lines()) + body
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _meta(args, seeds=(), *digest_parts):
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return RunMetadata(args.command_line, list(seeds), _digest(*digest_parts) if digest_parts else "", stamp)


# -- commands --------------------------------------------------------------------------------

def cmd_bound(args):
    system, obj = load_config(args)
    if args.envelope:
        envs = [token_bucket(s, r) for s, r in args.envelope]
        if len(envs) == 1:
            envs = envs * system.K
        if len(envs) != system.K:
            raise UsageError("got %d envelopes for %d queues" % (len(envs), system.K))
        system = system.replace(envelopes=tuple(envs))
    if system.envelopes is None:
        raise UsageError("no arrival envelopes: add 'envelopes' to the config or pass --envelope SIGMA RHO")
    bounds = queue_delay_bounds(system)
    rows = ["queue,d_max"] + ["%d,%r" % (k + 1, b) for k, b in enumerate(bounds)] + ["bound,%r" % max(bounds)]
    emit(args, _meta(args, (), system.to_json()), "\n".join(rows) + "\n")
    return EXIT_OK


def cmd_simulate(args):
    system, obj = load_config(args)
    A, source, seeds = load_input(args, obj)
    aggregate = token_bucket(*args.envelope[0]) if args.envelope else None
    if system.envelopes is None and aggregate is None:
        raise UsageError("no arrival envelopes: add 'envelopes' to the config or pass --envelope SIGMA RHO")
    grid = args.sample_grid if args.sample_grid is not None else 1e-2
    rep = verify_claim1(system, A, grid=grid, aggregate_envelope=aggregate, barrier=args.barrier)
    emit(args, _meta(args, seeds, system.to_json(), source, grid, args.barrier), rep.to_csv(grid_only=True))
    if not rep.hypothesis_ok:
        print("hypothesis violated: %s" % "; ".join(rep.violations), file=sys.stderr)
        return EXIT_HYPOTHESIS
    if rep.min_slack < -SLACK_TOL:
        print("bound violated: minimum slack %r" % rep.min_slack, file=sys.stderr)
        return EXIT_VIOLATED
    return EXIT_OK


def cmd_gsbb(args):
    obj = _read_json(args.config, "config") if args.config else None
    A, source, seeds = load_input(args, obj)
    if args.rate is None:
        raise UsageError("--rate M is required")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        tb = empirical_gsbb(A, args.rate, args.xs, args.warmup, args.samples, args.sampling,
                            HOLD_LAST if args.hold_last else ZERO_BEYOND)
    for w in caught:
        print("warning: %s" % w.message, file=sys.stderr)
    meta = _meta(args, seeds, source, args.rate, args.xs, args.warmup, args.samples, args.sampling)
    emit(args, meta, tb.to_csv())
    return EXIT_OK


def cmd_verify_claim2(args):
    system, obj = load_config(args)
    spec = _generator_spec(args, obj)
    if spec is None:
        raise UsageError("verify-claim2 needs a generator: --source FILE or a 'source' entry in the config")
    xs = np.asarray(args.xs, dtype=float)
    if args.relative:
        xs = xs + system.shift
    seed = args.seed if args.seed is not None else spec.seed
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        try:
            rep = verify_claim2(system, spec, xs, replicas=args.replicas, seed=seed, samples=args.samples,
                                warmup=args.warmup, jobs=args.jobs)
        except ValueError as exc:
            raise UsageError(str(exc))
    for w in caught:
        print("warning: %s" % w.message, file=sys.stderr)
    meta = _meta(args, [seed], system.to_json(), spec.to_json(), xs.tolist(), args.replicas, args.samples, args.warmup)
    emit(args, meta, rep.to_csv())
    if not rep.ok:
        bad = ", ".join("%g" % x for x, p in zip(rep.xs, rep.passed) if not p)
        print("bound violated at x = %s" % bad, file=sys.stderr)
        return EXIT_VIOLATED
    return EXIT_OK


def cmd_envelope(args):
    obj = _read_json(args.config, "config") if args.config else None
    A, source, seeds = load_input(args, obj)
    if any(r <= 0 for r in args.rhos):
        raise UsageError("--rhos must be positive")
    pts = measured_envelope(A, args.rhos)
    emit(args, _meta(args, seeds, source, args.rhos), envelope_csv(pts))
    return EXIT_OK


def cmd_generate(args):
    obj = _read_json(args.config, "config") if args.config else None
    spec = _generator_spec(args, obj)
    if spec is None:
        raise UsageError("generate needs --source FILE (or a 'source' entry in the config)")
    A = generate(spec)
    meta = _meta(args, [spec.seed], spec.to_json())
    save_trace(A, args.out or sys.stdout, args.trace_format, comments=meta.lines())
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------------

def _global_options(parser, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    g = parser.add_argument_group("global options")
    g.add_argument("--config", metavar="FILE", default=default(None),
                   help="fork-join system as JSON (mu, split, envelopes, service_curves, optional source)")
    g.add_argument("--seed", type=int, default=default(None), help="override the generator seed")
    g.add_argument("--out", metavar="PATH", default=default(None), help="write output here instead of stdout")
    g.add_argument("--jobs", type=int, default=default(1), help="worker processes for Monte Carlo replicas")
    g.add_argument("--sample-grid", type=float, default=default(None), metavar="H",
                   help="spacing of the time grid used to sample simulated processes")


def _input_options(parser):
    g = parser.add_argument_group("input")
    g.add_argument("--trace", metavar="FILE", help="CSV trace")
    g.add_argument("--source", metavar="FILE", help="generator spec as JSON")
    g.add_argument("--format", choices=(CUMULATIVE, INCREMENTS), default=CUMULATIVE, help="trace work column")
    g.add_argument("--time-unit", type=float, default=1.0, help="seconds per trace time tick")
    g.add_argument("--work-unit", type=float, default=1.0, help="scale factor for the work column")
    g.add_argument("--sort", action="store_true", help="sort out-of-order trace rows instead of failing")
    g.add_argument("--interpolation", choices=("step", "linear"), default=None,
                   help="read the trace as discrete jumps or fluid (default: from the file, else step)")


def build_parser():
    p = _Parser(prog="fjcalc", description="Delay and backlog bounds for fork-join systems.")
    p.add_argument("--version", action="version", version="fjcalc %s" % __version__)
    _global_options(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help):
        sp = sub.add_parser(name, help=help, description=help)
        _global_options(sp, suppress=True)
        sp.set_defaults(func=func)
        return sp

    sp = command("bound", cmd_bound, "deterministic end-to-end delay bound and per-queue delays")
    sp.add_argument("--envelope", nargs=2, type=float, action="append", metavar=("SIGMA", "RHO"),
                    help="token-bucket envelope per queue (repeat per queue, or give once for all)")

    sp = command("simulate", cmd_simulate, "simulate the system and check the deterministic bound")
    _input_options(sp)
    sp.add_argument("--envelope", nargs=2, type=float, action="append", metavar=("SIGMA", "RHO"),
                    help="aggregate token bucket of the input, used when the config has no envelopes")
    sp.add_argument("--barrier", choices=(JOB, WORK), default=JOB, help="job-level or work-index join")

    sp = command("gsbb", cmd_gsbb, "empirical burstiness tail Phi of a trace or source")
    _input_options(sp)
    sp.add_argument("--rate", type=float, help="drain rate M")
    sp.add_argument("--xs", type=_floats, required=True, help="thresholds, e.g. 0,1,2,4")
    sp.add_argument("--warmup", type=float, default=DEFAULT_WARMUP, help="fraction of the horizon discarded")
    sp.add_argument("--samples", type=int, default=DEFAULT_SAMPLES, help="uniform sample times")
    sp.add_argument("--sampling", choices=("grid", "events"), default="grid")
    sp.add_argument("--hold-last", action="store_true", help="extrapolate the last value instead of zero")

    sp = command("verify-claim2", cmd_verify_claim2, "Monte Carlo check of the stochastic backlog bound")
    sp.add_argument("--source", metavar="FILE", help="generator spec as JSON")
    sp.add_argument("--xs", type=_floats, required=True, help="backlog thresholds")
    sp.add_argument("--relative", action="store_true", help="thresholds are offsets above the shift")
    sp.add_argument("--replicas", type=int, default=20)
    sp.add_argument("--samples", type=int, default=DEFAULT_SAMPLES, help="stationary samples per replica")
    sp.add_argument("--warmup", type=float, default=DEFAULT_WARMUP)

    sp = command("envelope", cmd_envelope, "tightest token-bucket burst for each rate")
    _input_options(sp)
    sp.add_argument("--rhos", type=_floats, required=True, help="rates, e.g. 0.5,1,2")

    sp = command("generate", cmd_generate, "draw a synthetic trace")
    sp.add_argument("--source", metavar="FILE", help="generator spec as JSON")
    sp.add_argument("--trace-format", choices=(CUMULATIVE, INCREMENTS), default=CUMULATIVE)
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.command_line = shlex.join(["fjcalc", *argv])
    if args.jobs < 1:
        parser.error("--jobs must be at least 1")
    if args.sample_grid is not None and not args.sample_grid > 0:
        parser.error("--sample-grid must be positive")
    try:
        return args.func(args)
    except UsageError as exc:
        print("fjcalc %s: error: %s" % (args.command, exc), file=sys.stderr)
        return EXIT_USAGE
    except UnboundedDelayError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_UNBOUNDED
    except BrokenPipeError:
        # output piped into e.g. ``head``; silence the interpreter's flush at exit
        import os
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
