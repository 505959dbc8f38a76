"""Command-line front end.

Subcommands::

    simulate   draw a dataset from a model
    smooth     run the two-filter smoother and write its outputs
    compare    tabulate two density sources on a common grid and report KL
    paper      reproduce the reference examples with pass/fail checks
    validate   check a model file

Exit codes: 0 success, 1 usage or input error, 2 numerical failure,
3 a reproduced example did not meet its target.

Every subcommand accepts ``--config FILE``: a JSON object whose keys are
option names (``caps``, ``seed``, ``grid``, ``out``, ...). Keys that belong to
other subcommands are ignored. Options given on the command line take
precedence over the file.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import JmlsError, ModelError, NumericalError, OracleLimitError, RangeSpaceError
from .fileio import load_dataset, load_mixtures, load_model, save_dataset, save_mixtures, save_model, save_mode_marginals
from .likelihood import ANGLE_TOL, RANK_TOL
from .mixture import GaussianMixture, GaussianSet
from .model import Dataset, JmlsModel, Timing, simulate, validate_model, validate_prior
from .oracle import auto_axes, enumerate_smoother, evaluate_grid, grid_kl, grid_l1, grid_max_abs, rts_smoother
from .reference import (
    EXAMPLES,
    constant_input,
    example1_model,
    example2_model,
    example3_model,
    example_prior,
    gaussian_input,
    run_example,
    sinusoid_input,
)
from .smoother import smooth

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_USAGE", "EXIT_NUMERICAL", "EXIT_MISMATCH"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_MISMATCH = 3

_EXAMPLE_MODELS = {
    "example1": example1_model,
    "example2": example2_model,
    "example3": example3_model,
}
_SOURCES = ("enumeration", "rts", "smoother")


class UsageError(Exception):
    """Bad command line, configuration or input file."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------


def _cap(text) -> int | None:
    if text is None or str(text).lower() in ("inf", "none", "infinity"):
        return None
    try:
        value = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"cap must be a positive integer or 'inf', got {text!r}") from exc
    if value < 1:
        raise argparse.ArgumentTypeError("cap must be >= 1")
    return value


def _caps(values) -> tuple[int | None, int | None, int | None]:
    """``[F]``, ``[F, B]`` or ``[F, B, S]`` to (forward, backward, smoothed)."""
    if values is None:
        return None, None, None
    if isinstance(values, (str, int)):
        values = [values]
    caps = [_cap(v) for v in values]
    if not 1 <= len(caps) <= 3:
        raise UsageError("--caps takes one to three values")
    if len(caps) == 1:
        caps = caps * 2
    if len(caps) == 2:
        caps.append(None)
    return caps[0], caps[1], caps[2]


def _load_problem(args, need_prior: bool = True) -> tuple[JmlsModel, GaussianMixture | None]:
    if bool(args.model) == bool(args.example):
        raise UsageError("give exactly one of --model or --example")
    if args.example:
        if args.example not in _EXAMPLE_MODELS:
            raise UsageError(f"unknown example {args.example!r}; choose from {', '.join(_EXAMPLE_MODELS)}")
        model, prior = _EXAMPLE_MODELS[args.example](), example_prior(args.example)
    else:
        model, prior = load_model(args.model)
    if need_prior and prior is None:
        raise UsageError(f"{args.model} has no prior; add a 'prior' list to the model file")
    return model, prior


def _require(args, *names) -> None:
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")


def _check_dims(model: JmlsModel, data: Dataset) -> None:
    if data.u.shape[1] != model.p or data.y.shape[1] != model.q:
        raise UsageError(f"dataset has p={data.u.shape[1]}, q={data.y.shape[1]}; "
                         f"the model needs p={model.p}, q={model.q}")


def _make_input(args, N: int, p: int, seed: int) -> np.ndarray:
    if args.input == "gaussian":
        return gaussian_input(N, p, seed)
    if args.input == "constant":
        return constant_input(N, args.value, p)
    if p != 1:
        raise UsageError("the sinusoid input is defined for single-input models")
    return sinusoid_input(N, args.amplitude, args.timescale)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    _require(args, "steps", "out")
    if args.steps < 1:
        raise UsageError("--steps must be at least 1")
    model, prior = _load_problem(args)
    # independent streams for the input and for the simulation noise
    input_seed, noise_seed = np.random.SeedSequence(args.seed).generate_state(2)
    u = _make_input(args, args.steps, model.p, int(input_seed))
    data = simulate(model, prior, u, seed=int(noise_seed))
    save_dataset(args.out, data)
    if args.save_model:
        save_model(args.save_model, model, prior)
    print(f"wrote {data.N} samples to {args.out}")
    return EXIT_OK


def cmd_smooth(args) -> int:
    _require(args, "data", "out")
    model, prior = _load_problem(args)
    data = load_dataset(args.data)
    _check_dims(model, data)
    fcap, bcap, scap = _caps(args.caps)
    result = smooth(model, prior, data, fcap, bcap, scap, rank_tol=args.rank_tol, angle_tol=args.angle_tol)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mixtures = [st.mixture for st in result.smoothed]
    save_mixtures(out / "mixture.csv", mixtures)
    save_mode_marginals(out / "modes.csv", [st.mode_marginal for st in result.smoothed])
    if args.grid:
        width = len(str(data.N))
        for st in result.smoothed:
            axes = auto_axes([st], count=args.grid)
            evaluate_grid(st, axes).to_csv(out / f"grid_k{st.k + 1:0{width}d}.csv")
    summary = {
        "N": data.N,
        "n": model.n,
        "m": model.m,
        "caps": {"forward": fcap, "backward": bcap, "smoothed": scap},
        "log_evidence": float(sum(f.log_norm for f in result.forward)),
        "components": {
            "filtered": [list(f.filtered.counts) for f in result.forward],
            "backward": [[len(s) for s in b.propagated.modes] for b in result.backward],
            "smoothed": [list(m.counts) for m in mixtures],
        },
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    # wall times vary between runs, so they live apart from the deterministic outputs
    (out / "timings.json").write_text(json.dumps(result.timings, indent=2) + "\n")
    t = result.timings
    print(f"smoothed {data.N} steps in {t['total']:.3f} s "
          f"(forward {t['forward']:.3f}, backward {t['backward']:.3f}, combine {t['combine']:.3f}); "
          f"outputs in {out}")
    return EXIT_OK


def _source(spec: str, args, model, prior, data) -> list:
    if spec == "enumeration":
        return enumerate_smoother(model, prior, data).smoothed
    if spec == "smoother":
        return smooth(model, prior, data, *_caps(args.caps), rank_tol=args.rank_tol,
                      angle_tol=args.angle_tol).smoothed
    if spec == "rts":
        flat = prior.flatten()
        if model.m != 1 or len(flat) != 1:
            raise UsageError("the rts source needs a single-mode model with a single Gaussian prior")
        if model.timing is not Timing.AFTER:
            raise UsageError("the rts source needs the switch-after-prediction timing")
        track = rts_smoother(model.modes[0], flat.mean[0], flat.cov[0], data)
        return [GaussianMixture((GaussianSet(np.zeros(1), track.smoothed_mean[k][None],
                                             track.smoothed_cov[k][None]),))
                for k in range(data.N)]
    path = Path(spec)
    if not path.is_file():
        raise UsageError(f"unknown density source {spec!r}: use {', '.join(_SOURCES)} or a mixture file")
    return load_mixtures(path)


def cmd_compare(args) -> int:
    _require(args, "data")
    model, prior = _load_problem(args)
    data = load_dataset(args.data)
    _check_dims(model, data)
    ref = _source(args.reference, args, model, prior, data)
    cand = _source(args.candidate, args, model, prior, data)
    if len(ref) != len(cand):
        raise UsageError(f"sources cover different horizons ({len(ref)} and {len(cand)} steps)")
    rows = []
    for k, (a, b) in enumerate(zip(ref, cand)):
        axes = auto_axes([a, b], count=args.grid)
        pa, pb = evaluate_grid(a, axes), evaluate_grid(b, axes)
        rows.append((k + 1, grid_kl(pa, pb), grid_l1(pa, pb), grid_max_abs(pa, pb)))
    kl = np.array([r[1] for r in rows])
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "kl", "l1", "max_abs"])
            for k, *vals in rows:
                w.writerow([str(k)] + [repr(float(v)) for v in vals])
    print(f"{'k':>4} {'KL':>12} {'L1':>12} {'max-abs':>12}")
    for k, a, b, c in rows:
        print(f"{k:>4} {a:12.4e} {b:12.4e} {c:12.4e}")
    print(f"mean KL {kl.mean():.6e}; max L1 {max(r[2] for r in rows):.6e}; "
          f"max abs difference {max(r[3] for r in rows):.6e}")
    return EXIT_OK


def cmd_paper(args) -> int:
    names = list(EXAMPLES) if args.example_id == "all" else [args.example_id]
    ok = True
    for name in names:
        report = run_example(name)
        print(report)
        ok = ok and report.ok
    return EXIT_OK if ok else EXIT_MISMATCH


def cmd_validate(args) -> int:
    model, prior = _load_problem(args, need_prior=False)
    reports = [("model", validate_model(model))]
    if prior is not None and reports[0][1].ok:
        reports.append(("prior", validate_prior(prior, model)))
    if args.data:
        data = load_dataset(args.data)
        _check_dims(model, data)
        reports.append(("dataset", f"N={data.N}"))
    ok = True
    for label, rep in reports:
        print(f"{label}: {rep}")
        ok = ok and bool(getattr(rep, "ok", True))
    return EXIT_OK if ok else EXIT_USAGE


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults")
    common.add_argument("--threads", type=int, help="upper bound on BLAS/LAPACK worker threads")

    problem = _Parser(add_help=False)
    problem.add_argument("--model", help="model file (JSON)")
    problem.add_argument("--example", choices=sorted(_EXAMPLE_MODELS), help="use a built-in example model")

    tuning = _Parser(add_help=False)
    tuning.add_argument("--caps", nargs="+", metavar="CAP",
                        help="component caps: forward [backward [smoothed]]; an integer or 'inf' (default inf)")
    tuning.add_argument("--rank-tol", type=float, default=RANK_TOL, help="relative rank tolerance")
    tuning.add_argument("--angle-tol", type=float, default=ANGLE_TOL, help="principal-angle tolerance")

    parser = _Parser(prog="jmls-smoother", description="Two-filter smoothing for jump Markov linear systems.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common, problem], help="simulate a dataset")
    p.add_argument("-N", "--steps", type=int, help="number of samples")
    p.add_argument("--input", choices=("gaussian", "constant", "sinusoid"), default="gaussian")
    p.add_argument("--value", type=float, default=1.0, help="level of the constant input")
    p.add_argument("--amplitude", type=float, default=2000.0, help="sinusoid amplitude")
    p.add_argument("--timescale", type=float, default=20.0 * math.pi,
                   help="sinusoid time scale: u_k = amplitude * sin(k / timescale)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="dataset CSV to write")
    p.add_argument("--save-model", help="also write the model and prior as JSON")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("smooth", parents=[common, problem, tuning], help="run the smoother")
    p.add_argument("--data", help="dataset CSV")
    p.add_argument("--grid", type=int, default=0, help="also write density grids with this many points per axis")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("compare", parents=[common, problem, tuning], help="compare two density sources")
    p.add_argument("--data", help="dataset CSV")
    p.add_argument("--reference", default="enumeration",
                   help=f"{', '.join(_SOURCES)} or a mixture file (default enumeration)")
    p.add_argument("--candidate", default="smoother",
                   help=f"{', '.join(_SOURCES)} or a mixture file (default smoother)")
    p.add_argument("--grid", type=int, default=2001, help="grid points per axis")
    p.add_argument("--out", help="per-step metrics CSV")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("paper", parents=[common], help="reproduce a reference example")
    p.add_argument("example_id", choices=[*EXAMPLES, "all"])
    p.set_defaults(func=cmd_paper)

    p = sub.add_parser("validate", parents=[common, problem], help="validate a model file")
    p.add_argument("--data", help="optional dataset CSV to check against the model")
    p.set_defaults(func=cmd_validate)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("choose a subcommand: simulate, smooth, compare, paper or validate")
    if not getattr(args, "config", None):
        return args
    try:
        doc = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("the config file must hold a JSON object")
    # one config file may serve several subcommands: keys that belong to
    # another subcommand are ignored, keys no subcommand knows are rejected
    choices = parser._subparsers._group_actions[0].choices  # type: ignore[union-attr]
    sub = choices[args.command]
    own = {a.dest for a in sub._actions}
    anywhere = {a.dest for p in choices.values() for a in p._actions}
    defaults = {}
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if dest not in anywhere or dest in ("config", "help"):
            raise UsageError(f"unknown option {key!r} in {args.config}")
        if dest in own:
            defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
        limit = contextlib.nullcontext()
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be at least 1")
            from threadpoolctl import threadpool_limits
            limit = threadpool_limits(limits=args.threads)
        with limit:
            return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, RangeSpaceError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ModelError, OracleLimitError, OSError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except JmlsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
