"""Command-line interface: simulate, fit, diagnose, summarize, predict, elasticity, score.

Exit codes: 0 success, 1 soft diagnostic failure (e.g. R-hat above 1.05),
2 usage or validation error, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, dataio, plotting
from .datagen import example1, example2, example_scenarios
from .errors import ChainAborted, DataError, InvalidArgument, NumericalError
from .gibbs import run_chain
from .model import class_shares, validate
from .posterior import PosteriorDraws, psrf, summarize, summary_to_csv, summary_to_text
from .predictive import (
    arc_elasticity, brier_terms, check_compatible, predict_probabilities, quadratic_loss, Scenario,
)

log = logging.getLogger("robit")

EXIT_OK, EXIT_SOFT, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
RHAT_LIMIT = 1.05


class UsageError(Exception):
    pass


def _out_dir(path):
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"output directory does not exist: {p}")
    return p


def _existing(path, what):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- simulate -----------------------------------------------------------------

def cmd_simulate(args):
    out = _out_dir(args.out)
    maker = {1: example1, 2: example2}[args.example]
    kwargs = {"N": args.n, "seed": args.seed, "n_truth_draws": args.truth_draws}
    if args.sigma2:
        kwargs["sigma2"] = tuple(args.sigma2)
    bundle = maker(**kwargs)
    data = bundle.dataset
    dataio.write_long_csv(data, out / "data.csv")
    dataio.write_matrix_csv(out / "true_probs.csv", bundle.true_probs, data.alternative_names,
                            row_ids=np.arange(1, data.N + 1))
    spec = bundle.spec
    truth = {
        "example": args.example,
        "seed": args.seed,
        "N": args.n,
        "kernel": spec.kernel,
        "generating": _truth_dict(bundle.truth, spec, data),
        "identified": _truth_dict(bundle.identified, spec, data),
        "scale_alpha2": bundle.scale,
        "shares": dict(zip(data.alternative_names, map(float, class_shares(data)))),
        "n_truth_draws": bundle.n_truth_draws,
        "truth_seed": bundle.truth_seed,
    }
    _write_json(out / "truth.json", truth)
    cfg = dataio.load_config(overrides={
        "kernel": spec.kernel,
        "base_alternative": data.base_alternative,
        "utility": {"asc": [1, 2, 3], "generic": list(data.coef_names[3:]), "specific": {}},
        "scenarios": [s.label for s in example_scenarios()],
    })
    dataio.save_config(cfg, out / "model.json")
    print(f"wrote {out / 'data.csv'} ({data.N} observations), truth.json, true_probs.csv, model.json")
    return EXIT_OK


def _truth_dict(t, spec, data):
    names = spec.parameter_names(data.coef_names)
    return dict(zip(names, map(float, t.flat(spec))))


# -- fit ------------------------------------------------------------------------

def _overrides(args):
    ov = {}
    if getattr(args, "kernel", None):
        ov["kernel"] = args.kernel
    chains = {k: getattr(args, k) for k in ("total_iterations", "warmup", "thin", "n_chains", "seed")
              if getattr(args, k, None) is not None}
    if chains:
        ov["chains"] = chains
    pred = {k: getattr(args, k) for k in ("n_posterior_draws", "n_error_draws")
            if getattr(args, k, None) is not None}
    if getattr(args, "prediction_seed", None) is not None:
        pred["seed"] = args.prediction_seed
    if pred:
        ov["prediction"] = pred
    return ov


def _load(args):
    cfg = dataio.load_config(args.config, _overrides(args))
    data, obs_ids = dataio.dataset_from_long(_existing(args.data, "data file"), cfg)
    spec = dataio.model_spec(cfg, data.J, data.K)
    return cfg, data, obs_ids, spec


def holdout_split(N, fraction, seed):
    """Deterministic test-set row indices (sorted) for a holdout ``fraction``."""
    if not 0.0 < fraction < 1.0:
        raise InvalidArgument("holdout fraction must be in (0, 1)")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    n_test = int(round(fraction * N))
    return np.sort(rng.permutation(N)[:n_test])


def cmd_fit(args):
    out = _out_dir(args.out)
    cfg, data, obs_ids, spec = _load(args)
    problems = [d for d in validate(data, spec) if d.severity == "error"]
    if problems:
        raise UsageError("; ".join(d.message for d in problems))
    for d in validate(data, spec):
        if d.severity == "warning":
            log.warning(d.message)
    split = None
    if args.holdout:
        test = holdout_split(data.N, args.holdout, args.split_seed)
        train = np.setdiff1d(np.arange(data.N), test)
        split = {"holdout": args.holdout, "split_seed": args.split_seed,
                 "test_obs_ids": obs_ids[test].tolist()}
        _write_json(out / "split.json", split)
        data = data.subset(train)
    config = dataio.chain_config(cfg)
    dataio.save_config(cfg, out / "effective_config.json")
    manifest = {
        "software": {"package": "robit", "version": __version__},
        "config": cfg,
        "inputs": {"data": dataio.sha256_file(args.data),
                   "config": dataio.sha256_file(args.config) if args.config else None},
        "n_observations": data.N,
        "parameters": list(spec.parameter_names(data.coef_names)),
        "split": split,
    }
    start = time.perf_counter()
    try:
        draws = run_chain(spec, data, config, workers=args.workers)
    except ChainAborted as exc:
        _write_partial(out / "draws.csv.partial", spec.parameter_names(data.coef_names), exc.partial)
        manifest["aborted"] = str(exc)
        _write_json(out / "manifest.json", manifest)
        raise
    draws.to_csv(out / "draws.csv")
    manifest["draws_sha256"] = dataio.sha256_file(out / "draws.csv")
    manifest["telemetry"] = [
        {k: v for k, v in t.as_dict().items() if k != "wall_time"} for t in draws.telemetry]
    _write_json(out / "manifest.json", manifest)
    _write_json(out / "timing.json", {"wall_time_total": time.perf_counter() - start,
                                      "per_chain": [t.wall_time for t in draws.telemetry]})
    print(f"wrote {out / 'draws.csv'}: {draws.n_chains} chain(s) x {draws.n_retained} draws")
    return EXIT_OK


def _write_partial(path, names, partial):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["chain", "iteration", *names])
        for chain, values, iters in partial:
            for row, it in zip(values, iters):
                writer.writerow([chain + 1, int(it), *(repr(float(v)) for v in row)])


# -- reports ------------------------------------------------------------------

def _load_draws(path):
    return PosteriorDraws.from_csv(_existing(path, "draws file"))


def _report_hash(*paths):
    return "input_sha256=" + dataio.inputs_hash([p for p in paths if p])


def _emit(text, out_path):
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_diagnose(args):
    draws = _load_draws(args.draws)
    rhat = psrf(draws)
    lines = [f"# {_report_hash(args.draws)}", "parameter,rhat"]
    lines += [f"{n},{v:.6f}" for n, v in rhat.items()]
    _emit("\n".join(lines) + "\n", args.out)
    if args.figures:
        figdir = _out_dir(args.figures)
        plotting.plot_traces(draws, figdir / "traces.png")
    bad = [n for n, v in rhat.items() if not v <= RHAT_LIMIT]
    if bad:
        print(f"R-hat above {RHAT_LIMIT} for: {', '.join(bad)}", file=sys.stderr)
        return EXIT_SOFT
    return EXIT_OK


def cmd_summarize(args):
    draws = _load_draws(args.draws)
    rows = summarize(draws)
    header = f"# {_report_hash(args.draws)}\n"
    text = summary_to_text(rows) if args.format == "text" else summary_to_csv(rows)
    _emit(header + text, args.out)
    if args.figures:
        figdir = _out_dir(args.figures)
        truth = None
        if args.truth:
            truth = json.loads(Path(args.truth).read_text())["identified"]
        plotting.plot_posteriors(draws, figdir / "posteriors.png", truth=truth)
        nu = [n for n in draws.names if n == "nu" or n.startswith("nu_")]
        if nu:
            plotting.plot_posteriors(draws, figdir / "dof.png", names=nu, truth=truth)
    return EXIT_OK


def _compatible(draws, spec, data):
    try:
        check_compatible(draws, spec, data)
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from None


def _split_rows(args, obs_ids):
    if not getattr(args, "split", None):
        return None
    test_ids = json.loads(Path(args.split).read_text())["test_obs_ids"]
    pos = {o: i for i, o in enumerate(obs_ids.tolist())}
    return np.array([pos[o] for o in test_ids])


def cmd_predict(args):
    cfg, data, obs_ids, spec = _load(args)
    draws = _load_draws(args.draws)
    _compatible(draws, spec, data)
    rows = _split_rows(args, obs_ids)
    if rows is not None:
        data, obs_ids = data.subset(rows), obs_ids[rows]
    probs = predict_probabilities(draws, spec, data, dataio.prediction_config(cfg))
    out = args.out or "/dev/stdout"
    dataio.write_matrix_csv(out, probs, data.alternative_names, obs_ids,
                            comment=_report_hash(args.draws, args.data, args.config))
    return EXIT_OK


def cmd_elasticity(args):
    cfg, data, _, spec = _load(args)
    draws = _load_draws(args.draws)
    _compatible(draws, spec, data)
    scenarios = [Scenario.parse(s) for s in args.scenario] if args.scenario else dataio.scenarios_from_config(cfg)
    if not scenarios:
        raise UsageError("no scenarios given (use --scenario or the config's 'scenarios' list)")
    pcfg = dataio.prediction_config(cfg)
    results = [arc_elasticity(draws, spec, data, sc, pcfg) for sc in scenarios]
    lines = [f"# {_report_hash(args.draws, args.data, args.config)}",
             ",".join(["scenario"] + [f"alt_{a}" for a in data.alternative_names])]
    for r in results:
        vals = ["undefined" if np.isnan(v) else f"{v:.6f}" for v in r.elasticities]
        lines.append(",".join([f'"{r.scenario.label}"'] + vals))
        if r.undefined:
            print(f"{r.scenario.label}: undefined elasticity for alternatives {r.undefined}", file=sys.stderr)
    _emit("\n".join(lines) + "\n", args.out)
    if args.figures:
        figdir = _out_dir(args.figures)
        plotting.plot_elasticities([(r.scenario.label, r.elasticities) for r in results],
                                   data.alternative_names, figdir / "elasticities.png")
    return EXIT_OK


def cmd_score(args):
    cfg, data, obs_ids, spec = _load(args)
    draws = _load_draws(args.draws)
    _compatible(draws, spec, data)
    rows = _split_rows(args, obs_ids)
    if rows is not None:
        data, obs_ids = data.subset(rows), obs_ids[rows]
    probs = predict_probabilities(draws, spec, data, dataio.prediction_config(cfg))
    if args.metric == "brier":
        terms = brier_terms(data.y, probs)
    else:
        if not args.truth_probs:
            raise UsageError("--metric ql needs --truth-probs")
        _, truth, truth_ids = dataio.read_matrix_csv(args.truth_probs)
        pos = {o: i for i, o in enumerate(truth_ids.tolist())}
        truth = truth[[pos[o] for o in obs_ids]]
        quadratic_loss(truth, probs)  # validates shapes and rows
        terms = np.sum((truth - probs) ** 2, axis=1)
    total = float(np.sum(terms))
    print(f"{args.metric},{total:.6f}")
    if args.per_observation:
        dataio.write_matrix_csv(args.per_observation, terms[:, None], [args.metric], obs_ids,
                                comment=_report_hash(args.draws, args.data, args.config))
    if args.figures:
        plotting.plot_calibration(data.y, probs, _out_dir(args.figures) / "calibration.png")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def _add_model_args(p, draws=True):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--data", required=True, help="long-format choice CSV")
    p.add_argument("--kernel", help="override the configured kernel")
    if draws:
        p.add_argument("--draws", required=True, help="draws CSV written by 'fit'")
    p.add_argument("--n-posterior-draws", dest="n_posterior_draws", type=int)
    p.add_argument("--n-error-draws", dest="n_error_draws", type=int)
    p.add_argument("--prediction-seed", dest="prediction_seed", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="robit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one of the synthetic examples")
    p.add_argument("--example", type=int, choices=(1, 2), required=True)
    p.add_argument("--n", type=int, default=40_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--truth-draws", dest="truth_draws", type=int, default=10_000)
    p.add_argument("--sigma2", type=float, nargs=3, metavar="S2",
                   help="override the error variances of the three latent coordinates")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the Gibbs sampler")
    _add_model_args(p, draws=False)
    p.add_argument("--chains", dest="n_chains", type=int)
    p.add_argument("--iterations", dest="total_iterations", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--holdout", type=float)
    p.add_argument("--split-seed", dest="split_seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("diagnose", help="split R-hat per parameter")
    p.add_argument("--draws", required=True)
    p.add_argument("--out")
    p.add_argument("--figures", help="directory for trace plots")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("summarize", help="posterior summary table")
    p.add_argument("--draws", required=True)
    p.add_argument("--format", choices=("csv", "text"), default="csv")
    p.add_argument("--truth", help="truth.json from 'simulate' (marks true values in figures)")
    p.add_argument("--out")
    p.add_argument("--figures", help="directory for posterior plots")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("predict", help="posterior-predictive choice probabilities")
    _add_model_args(p)
    p.add_argument("--split", help="split.json from 'fit'; predict the held-out rows")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("elasticity", help="aggregate arc elasticities")
    _add_model_args(p)
    p.add_argument("--scenario", action="append", help="e.g. alt=2,attr=k4,change=+10%%")
    p.add_argument("--out")
    p.add_argument("--figures")
    p.set_defaults(func=cmd_elasticity)

    p = sub.add_parser("score", help="Brier score or quadratic loss")
    _add_model_args(p)
    p.add_argument("--metric", choices=("brier", "ql"), default="brier")
    p.add_argument("--truth-probs", dest="truth_probs")
    p.add_argument("--split")
    p.add_argument("--per-observation", dest="per_observation")
    p.add_argument("--figures")
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidArgument, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
