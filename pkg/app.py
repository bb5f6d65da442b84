#!/usr/bin/env python3
"""
Command line for two-stage acceptance sampling plans

    python app.py plan --data line.csv --aql 0.02 --rql 0.05 --alpha 0.1 --alpha1 0.03
    python app.py oc --exact-normal --grid 50
    python app.py simulate --model 1 --m 250 --reps 1000 --alpha1 0.03 --method kde-sj --seed 42
    python app.py estimate --data line.csv --method bd --probs 0.01,0.02,0.05

Tables go to standard output, diagnostics to standard error. Exit codes:
0 success, 2 input or validation error, 3 numerical or solver failure.
"""

import functools
import json
import logging
import os
import sys

import click
import numpy as np
import pandas as pd

from errors import ConfigError, DomainError, SamplingPlanError
from i18n import (
    detect_language,
    get_language_display_name,
    get_supported_languages,
    get_text,
    styled_text,
)
from numerics import std_normal_quantile
from oc import DependenceKind, oc_curve
from plans import (
    PairedSample,
    batch_plans,
    estimate_rho,
    panel_stage2_size,
    solve_two_stage,
    stage1_plan,
)
from quantile import Method, Sample, build_estimator, reference_estimator
from runconfig import RunConfig
from sim import RngSpec, method_label, results_frame, simulate_plan_distribution

logger = logging.getLogger(__name__)

METHODS = [m.value for m in Method]
FLOAT_FORMAT = "%.6g"
LANGUAGE_HELP = "Message language: " + ", ".join(
    f"{code} ({get_language_display_name(code)})" for code in get_supported_languages()
)


class ClickHandler(logging.Handler):
    """Log records to the current standard error"""

    def emit(self, record):
        try:
            click.echo(self.format(record), err=True)
        except Exception:
            self.handleError(record)


def setup_logging(verbose: int):
    root = logging.getLogger()
    if not any(isinstance(h, ClickHandler) for h in root.handlers):
        handler = ClickHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING)


def fmt(value) -> str:
    return f"{value:.6g}"


def exact(value) -> str:
    """Full-precision decimal string of a float"""
    return repr(float(value))


def handle_errors(command):
    """Report toolkit errors as localized messages with their exit codes"""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        lang = ctx.obj["lang"] if ctx.obj else "en"
        try:
            return command(*args, **kwargs)
        except SamplingPlanError as e:
            logger.debug("command failed", exc_info=True)
            click.echo(
                styled_text(e.message_key, lang, fg="red", bold=True) + f" {e}", err=True
            )
            ctx.exit(e.exit_code)

    return wrapper


def load_config(config_path, **overrides) -> RunConfig:
    pairs = overrides.pop("pairs", None)
    if overrides.get("dep") is None and (overrides.get("rho") is not None or pairs):
        overrides["dep"] = DependenceKind.PANEL.value
    config = RunConfig.from_file(config_path) if config_path else RunConfig()
    return config.with_overrides(**overrides)


config_option = click.option(
    "--config", "config_path", default=None,
    help="key = value file or JSON written by 'plan --format json'",
)


def spec_options(command):
    options = [
        click.option("--aql", type=float, default=None, help="Acceptable quality limit"),
        click.option("--rql", type=float, default=None, help="Rejectable quality limit"),
        click.option("--alpha", type=float, default=None, help="Global producer risk"),
        click.option("--alpha1", type=float, default=None, help="Stage-1 producer risk"),
        click.option("--beta", type=float, default=None, help="Global consumer risk (asymmetric split)"),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def plan_options(command):
    options = [
        click.option("--data", default=None, help="Time-t0 sample, one value per line"),
        click.option("--method", type=click.Choice(METHODS), default=None),
        click.option("--bandwidth", type=float, default=None, help="Kernel bandwidth (skips selection)"),
        click.option("--bd-degree", type=int, default=None, help="Bernstein-Durrmeyer degree"),
        click.option("--support-lo", type=float, default=None),
        click.option("--support-hi", type=float, default=None),
        click.option("--dep", type=click.Choice([k.value for k in DependenceKind]), default=None),
        click.option("--rho", type=float, default=None, help="Panel dependence coefficient"),
        click.option("--pairs", default=None, help="Paired remeasurements (two columns)"),
        click.option("--lambda", "lam", type=float, default=None, help="Size ratio n1/n2"),
        click.option("--batch-b", type=int, default=None),
        click.option("--sigma-b2", type=float, default=None),
        click.option("--sigma-eps2", type=float, default=None),
        click.option("--d", type=float, default=None, help="Degradation factor"),
        click.option("--exact-normal", is_flag=True, help="Use exact normal quantiles instead of data"),
    ]
    for option in reversed(options):
        command = option(command)
    return spec_options(config_option(command))


def _estimator(config: RunConfig, data, exact_normal: bool):
    if exact_normal:
        return reference_estimator(std_normal_quantile)
    if not data:
        raise ConfigError("--data is required unless --exact-normal is given")
    sample = Sample.from_csv(data)
    return build_estimator(sample, config.method_tag, config.bandwidth, config.bd_config())


def _with_pairs(config: RunConfig, spec, g, pairs) -> RunConfig:
    """Fill rho from a paired sample for panel designs"""
    if config.dependence_kind is not DependenceKind.PANEL or not pairs:
        return config
    n1 = stage1_plan(spec, g).n
    n2 = panel_stage2_size(n1, config.lam) if config.lam else n1
    rho = estimate_rho(PairedSample.from_csv(pairs, n1, n2))
    logger.info("estimated rho %.6g from %s", rho, pairs)
    return config.with_overrides(rho=rho)


def _solve(config: RunConfig, g):
    spec = config.quality_spec()
    if config.dependence_kind is DependenceKind.SPATIAL_BATCH:
        return batch_plans(
            spec, g, config.batch_b, config.sigma_b2, config.sigma_eps2,
            config.solver_config(), config.quad_config(), config.rho_max,
        )
    return solve_two_stage(
        spec, g, config.dependence(), config.solver_config(), config.quad_config()
    )


@click.group()
@click.option("--lang", default=None, help=LANGUAGE_HELP)
@click.option("-v", "--verbose", count=True, help="-v info, -vv debug")
@click.pass_context
def cli(ctx, lang, verbose):
    """Two-stage acceptance sampling plans for variables"""
    setup_logging(verbose)
    ctx.ensure_object(dict)
    ctx.obj["lang"] = detect_language(lang)


@cli.command("plan")
@plan_options
@click.option("--format", "output_format", type=click.Choice(["text", "json"]), default="text")
@handle_errors
def cmd_plan(config_path, output_format, data, pairs, exact_normal, **overrides):
    """Solve stage-1 and stage-2 plans"""
    lang = click.get_current_context().obj["lang"]
    config = load_config(config_path, pairs=pairs, **overrides)
    spec = config.quality_spec()
    g = _estimator(config, data, exact_normal)
    config = _with_pairs(config, spec, g, pairs)
    result = _solve(config, g)
    stage2 = result.stage2
    stage1_report, stage2_report, overall_report = result.reports

    if output_format == "json":
        document = {
            "config": config.to_dict(),
            "risks": {
                name: exact(getattr(spec, name))
                for name in ("alpha", "beta", "alpha1", "beta1", "alpha2", "beta2")
            },
            "plan1": {"n": result.plan1.n, "c": exact(result.plan1.c)},
            "plan2": {"n": stage2.plan.n, "c": exact(stage2.plan.c)},
            "stage2_search": {
                "grid_n": stage2.grid_n,
                "grid_c": exact(stage2.grid_c),
                "continuous_n": exact(stage2.continuous_n),
                "continuous_c": exact(stage2.continuous_c),
                "deviation": exact(stage2.deviation),
                "converged": stage2.converged,
                "certified": stage2.certified,
            },
            "oc": {
                report.stage.value: {
                    "aql": exact(report.oc_aql),
                    "rql": exact(report.oc_rql),
                    "valid": report.valid,
                }
                for report in result.reports
            },
            "estimator": {
                "method": method_label(g.method_tag),
                "mean": exact(g.moments.mean),
                "stddev": exact(g.moments.stddev),
                **{k: v if isinstance(v, (bool, int)) else exact(v) for k, v in g.details.items()},
            },
        }
        click.echo(json.dumps(document, indent=2))
        return

    click.echo(styled_text("plan_risks", lang, bold=True))
    click.echo(get_text("plan_risk_row", lang, stage=1, alpha=fmt(spec.alpha1), beta=fmt(spec.beta1)))
    click.echo(get_text("plan_risk_row", lang, stage=2, alpha=fmt(spec.alpha2), beta=fmt(spec.beta2)))
    click.echo(get_text("plan_risk_overall", lang, alpha=fmt(spec.alpha), beta=fmt(spec.beta)))
    click.echo(styled_text("plan_plans", lang, bold=True))
    click.echo(get_text("plan_stage_row", lang, stage=1, n=result.plan1.n, c=fmt(result.plan1.c)))
    click.echo(get_text("plan_stage_row", lang, stage=2, n=stage2.plan.n, c=fmt(stage2.plan.c)))
    if not stage2.certified:
        click.echo(styled_text("plan_best_effort", lang, fg="yellow", deviation=fmt(stage2.deviation)))
    click.echo(styled_text("plan_oc", lang, bold=True))
    for report in (stage1_report, stage2_report, overall_report):
        verdict = get_text("plan_valid" if report.valid else "plan_invalid", lang)
        click.echo(get_text(
            "plan_oc_row", lang, stage=report.stage.value,
            aql=fmt(report.oc_aql), rql=fmt(report.oc_rql), verdict=verdict,
        ))


@cli.command("oc")
@plan_options
@click.option("--n1", type=int, default=None)
@click.option("--c1", type=float, default=None)
@click.option("--n2", type=int, default=None)
@click.option("--c2", type=float, default=None)
@click.option("--grid", type=int, default=50, show_default=True, help="Number of p values")
@click.option("--p-lo", type=float, default=None, help="Default AQL/4")
@click.option("--p-hi", type=float, default=None, help="Default 2*RQL")
@handle_errors
def cmd_oc(config_path, data, pairs, exact_normal, grid, p_lo, p_hi, **overrides):
    """OC table (p, oc1, oc2, overall) as CSV"""
    config = load_config(config_path, pairs=pairs, **overrides)
    spec = config.quality_spec()
    g = _estimator(config, data, exact_normal)
    plans = config.explicit_plans()
    if plans is None:
        config = _with_pairs(config, spec, g, pairs)
        result = _solve(config, g)
        plan1, plan2, dep = result.plan1, result.plan2, result.dependence
    else:
        plan1, plan2 = plans
        dep = config.dependence(plan1.n, plan2.n)

    if grid < 2:
        raise DomainError(f"--grid needs at least 2 points; got {grid}")
    lo = spec.aql / 4 if p_lo is None else p_lo
    hi = min(2 * spec.rql, 0.999) if p_hi is None else p_hi
    if not 0 < lo < hi < 1:
        raise DomainError(f"p range must satisfy 0 < p_lo < p_hi < 1; got ({lo}, {hi})")
    ps = np.union1d(np.linspace(lo, hi, grid), [spec.aql, spec.rql])
    ps = ps[(ps >= lo) & (ps <= hi)]
    table = oc_curve(ps, plan1, plan2, g, dep, config.quad_config())
    click.echo(table.to_csv(index=False, float_format=FLOAT_FORMAT), nl=False)


@cli.command("simulate")
@config_option
@spec_options
@click.option("--model", type=int, default=None, help="Production model 1-4")
@click.option("--m", type=int, default=None, help="Time-t0 sample size")
@click.option("--reps", type=int, default=None)
@click.option("--method", type=click.Choice(METHODS + ["exact"]), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--scale-interp", type=click.Choice(["variance", "stddev"]), default=None)
@click.option("--workers", type=int, default=None, help="Worker processes")
@handle_errors
def cmd_simulate(config_path, method, **overrides):
    """Distribution of solved plans over repeated time-t0 samples (one CSV row)"""
    exact_method = method == "exact"
    config = load_config(config_path, method=None if exact_method else method, **overrides)
    if config.seed is None:
        if os.environ.get("TSSP_REQUIRE_SEED") == "1":
            raise ConfigError("--seed is required when TSSP_REQUIRE_SEED=1")
        logger.info("no seed given; using 0")
    result = simulate_plan_distribution(
        config.sim_model(),
        config.m,
        config.quality_spec(),
        None if exact_method else config.method_tag,
        config.dependence(),
        config.reps,
        RngSpec(config.seed or 0),
        config.solver_config(),
        config.quad_config(),
        config.bd_config(),
        config.workers,
    )
    if result.failures:
        lang = click.get_current_context().obj["lang"]
        click.echo(get_text("simulate_failures", lang, failures=result.failures, reps=result.reps), err=True)
    click.echo(results_frame([result]).to_csv(index=False, float_format=FLOAT_FORMAT), nl=False)


@cli.command("estimate")
@config_option
@click.option("--data", required=True, help="Time-t0 sample, one value per line")
@click.option("--method", type=click.Choice(METHODS), default=None)
@click.option("--probs", default="0.01,0.02,0.05,0.1,0.5", show_default=True)
@click.option("--bandwidth", type=float, default=None)
@click.option("--bd-degree", type=int, default=None)
@click.option("--support-lo", type=float, default=None)
@click.option("--support-hi", type=float, default=None)
@handle_errors
def cmd_estimate(config_path, data, probs, **overrides):
    """Raw and standardized quantile estimates as CSV"""
    lang = click.get_current_context().obj["lang"]
    config = load_config(config_path, **overrides)
    try:
        ps = [float(p) for p in probs.split(",") if p.strip()]
    except ValueError:
        raise DomainError(f"--probs must be a comma-separated list of numbers; got {probs!r}")
    if not ps:
        raise DomainError("--probs is empty")
    for p in ps:
        if not 0 < p < 1:
            raise DomainError(get_text("estimate_prob_range", lang, p=p))

    sample = Sample.from_csv(data)
    g = build_estimator(sample, config.method_tag, config.bandwidth, config.bd_config())
    click.echo(get_text("estimate_mean", lang, value=fmt(g.moments.mean)), err=True)
    click.echo(get_text("estimate_stddev", lang, value=fmt(g.moments.stddev)), err=True)
    if "bandwidth" in g.details:
        click.echo(get_text("estimate_bandwidth", lang, value=fmt(g.details["bandwidth"])), err=True)
    if "degree" in g.details:
        click.echo(get_text("estimate_degree", lang, value=g.details["degree"]), err=True)

    table = pd.DataFrame({
        "p": ps,
        "raw_quantile": [g.raw(p) for p in ps],
        "standardized_quantile": [g.evaluate(p) for p in ps],
    })
    click.echo(table.to_csv(index=False, float_format=FLOAT_FORMAT), nl=False)


def main():
    cli(obj={})


if __name__ == "__main__":
    sys.exit(main())
