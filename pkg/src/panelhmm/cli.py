"""Command-line entry points: fit, simulate, summarize, validate."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .dataio import (PanelFormatError, _atomic_write, file_sha256,
                     read_chain_csv, read_panel_csv, scan_panel_csv,
                     write_chain_csv, write_manifest, write_panel_csv,
                     write_truth_params_csv, write_truth_paths_csv)
from .fitting import fit_chains
from .likelihood import LikelihoodOptions
from .mcmc import MCMCSettings
from .model import build_model_spec, parameter_layout
from .priors import default_priors
from .simulate import scenario_presets, simulate_cohort
from .summarize import (death_bias_curve, misclassification_table,
                        posterior_summary, probability_evolution,
                        reciprocal_rate_table)


def _load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _write_csv_rows(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    _atomic_write(path, buf.getvalue())


def _fmt(x):
    return repr(float(x))


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    config = _load_config(args.config)
    spec = build_model_spec(args.preset or config.get("preset", "mcsa7"))
    layout = parameter_layout(spec)
    try:
        dataset = read_panel_csv(args.data, spec)
    except PanelFormatError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2

    priors = default_priors(spec, layout, overrides={
        k: tuple(v) for k, v in config.get("priors", {}).items()})
    mcfg = config.get("mcmc", {})
    settings = MCMCSettings(
        iterations=args.iterations or mcfg.get("iterations", 20000),
        burnin=args.burnin if args.burnin is not None else mcfg.get("burnin", 10000),
        thin=args.thin or mcfg.get("thin", 10),
        seed=args.seed if args.seed is not None else mcfg.get("seed", 0),
        workers=args.workers or mcfg.get("workers", 1),
        blocks=config.get("blocks"),
    )
    options = LikelihoodOptions(
        enrollment_correction=not args.no_enrollment_correction,
        death_bias=not args.no_death_bias)
    disabled = tuple(config.get("disable_constraints", ()))

    os.makedirs(args.out, exist_ok=True)
    t0 = time.time()
    chains = fit_chains(dataset, spec, priors, settings, options=options,
                        n_chains=args.chains, disabled_constraints=disabled)
    wall = time.time() - t0

    chain_files = []
    for c, chain in enumerate(chains):
        path = os.path.join(args.out, f"chain_{c:02d}.csv")
        write_chain_csv(chain, path)
        chain_files.append(os.path.basename(path))
    write_manifest(
        os.path.join(args.out, "manifest.json"),
        command="fit",
        version=__version__,
        preset=spec.name,
        data=os.path.abspath(args.data),
        data_sha256=file_sha256(args.data),
        n_subjects=len(dataset),
        n_chains=args.chains,
        settings=settings.to_dict(),
        options={"enrollment_correction": options.enrollment_correction,
                 "death_bias": options.death_bias},
        disabled_constraints=list(disabled),
        prior_overrides=config.get("priors", {}),
        chain_files=chain_files,
        wall_time_s=wall,
        acceptance=[c.acceptance_rates() for c in chains],
    )
    print(f"wrote {len(chain_files)} chain file(s) to {args.out} "
          f"({wall:.1f}s, {len(dataset)} subjects, {layout.size} parameters)")
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    overrides = _load_config(args.config)
    scenario = scenario_presets(args.scenario, cohort_size=args.subjects,
                                seed=args.seed or 0, **overrides)
    subjects, truths = simulate_cohort(scenario)
    layout = parameter_layout(scenario.spec)
    os.makedirs(args.out, exist_ok=True)
    data_path = os.path.join(args.out, "data.csv")
    write_panel_csv(subjects, data_path)
    write_truth_params_csv(layout, scenario.true_params,
                           os.path.join(args.out, "truth_params.csv"))
    write_truth_paths_csv(truths, os.path.join(args.out, "truth_paths.csv"))
    write_manifest(
        os.path.join(args.out, "manifest.json"),
        command="simulate", version=__version__, scenario=args.scenario,
        seed=scenario.seed, cohort_size=scenario.cohort_size,
        realized=len(subjects), data_sha256=file_sha256(data_path))
    print(f"simulated {len(subjects)}/{scenario.cohort_size} subjects "
          f"into {args.out}")
    return 0


# ---------------------------------------------------------------------------
# summarize
# ---------------------------------------------------------------------------

def _parse_profile(text, spec):
    cov = {name: 0.0 for name in spec.covariates}
    if text:
        for part in text.split(","):
            k, v = part.split("=")
            cov[k.strip()] = float(v)
    return cov


def cmd_summarize(args) -> int:
    spec = build_model_spec(args.preset)
    layout = parameter_layout(spec)
    all_draws = []
    for path in args.chains:
        names, draws, _ = read_chain_csv(path)
        if names != layout.names:
            print(f"error: {path} does not match the {spec.name} layout",
                  file=sys.stderr)
            return 2
        all_draws.append(draws)
    os.makedirs(args.out, exist_ok=True)

    table = posterior_summary(all_draws, layout.names)
    _write_csv_rows(
        os.path.join(args.out, "summary.csv"),
        ["name", "mean", "sd", "q2.5", "q50", "q97.5", "rhat", "ess"],
        [[n, _fmt(r["mean"]), _fmt(r["sd"]), _fmt(r["q2.5"]), _fmt(r["q50"]),
          _fmt(r["q97.5"]),
          "" if np.isnan(r["rhat"]) else _fmt(r["rhat"]), _fmt(r["ess"])]
         for n, r in table.items()])

    pooled = np.vstack(all_draws)
    post_mean = pooled.mean(axis=0)
    cov = _parse_profile(args.profile, spec)
    tag = "_".join(f"{k}{int(v)}" for k, v in cov.items()) or "reference"

    if layout.has_block("bias"):
        curve = death_bias_curve(pooled, layout)
        _write_csv_rows(
            os.path.join(args.out, "death_bias_curve.csv"),
            ["iyears", "mean", "q2.5", "q97.5"],
            [[int(y), _fmt(m), _fmt(lo), _fmt(hi)]
             for y, m, lo, hi in zip(curve["iyears"], curve["mean"],
                                     curve["q2.5"], curve["q97.5"])])

    if spec.name == "mcsa7":
        evo = probability_evolution(spec, layout, post_mean, cov)
        cols = [k for k in evo if k != "age"]
        _write_csv_rows(
            os.path.join(args.out, f"prob_evolution_{tag}.csv"),
            ["age"] + cols,
            [[_fmt(a)] + [_fmt(evo[c][k]) for c in cols]
             for k, a in enumerate(evo["age"])])

    for age in args.age:
        rates = reciprocal_rate_table(pooled, spec, layout, cov, age)
        _write_csv_rows(
            os.path.join(args.out, f"mean_transition_years_age{age}_{tag}.csv"),
            ["transition", "posterior_mean_years"],
            [[k, _fmt(v)] for k, v in rates.items()])

    if layout.has_block("diag"):
        tab = misclassification_table(pooled, layout)
        _write_csv_rows(
            os.path.join(args.out, "misclassification.csv"),
            ["true_status", "diagnosed_not_demented", "diagnosed_demented",
             "q2.5", "q97.5"],
            [[k, _fmt(r["diagnosed_not_demented"]), _fmt(r["diagnosed_demented"]),
              _fmt(r["q2.5"]), _fmt(r["q97.5"])] for k, r in tab.items()])

    print(f"wrote summaries for {len(all_draws)} chain(s) to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    spec = build_model_spec(args.preset)
    _, violations = scan_panel_csv(args.data, spec)
    for v in violations:
        print(v)
    if violations:
        print(f"{len(violations)} violation(s) found", file=sys.stderr)
        return 1
    print("ok")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="panelhmm",
                                description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="sample the posterior for a panel dataset")
    f.add_argument("--data", required=True)
    f.add_argument("--config", help="JSON with priors/constraints/mcmc overrides")
    f.add_argument("--preset", default="mcsa7")
    f.add_argument("--chains", type=int, default=1)
    f.add_argument("--iterations", type=int)
    f.add_argument("--burnin", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--workers", type=int)
    f.add_argument("--out", required=True)
    f.add_argument("--no-enrollment-correction", action="store_true",
                   help="drop the delayed-enrollment conditioning (bias demo)")
    f.add_argument("--no-death-bias", action="store_true",
                   help="drop the enrollment decay on the death rate")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="generate a truth-known synthetic cohort")
    s.add_argument("--scenario", required=True,
                   help="cav-baseline | cav-delayed | mcsa-synthetic")
    s.add_argument("--subjects", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--config", help="JSON scenario field overrides")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("summarize", help="posterior tables and curve files")
    m.add_argument("--chains", nargs="+", required=True)
    m.add_argument("--preset", default="mcsa7")
    m.add_argument("--out", required=True)
    m.add_argument("--age", type=int, action="append", default=[])
    m.add_argument("--profile", help="covariate profile, e.g. male=1,educ=0")
    m.set_defaults(func=cmd_summarize)

    v = sub.add_parser("validate", help="check a panel file without fitting")
    v.add_argument("--data", required=True)
    v.add_argument("--preset", default="mcsa7")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not getattr(args, "age", None) and args.command == "summarize":
        args.age = [60, 80]
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
