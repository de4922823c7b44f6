"""Command-line entry points.

All commands are pure functions of (config file, overrides, seed): given
the same inputs they write byte-identical output files. Exit codes:
0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import os
import re
import sys

import click
import numpy as np

from . import estimator, netstats, synth, tetrad
from .config import config_digest, load_run_config
from .errors import ConfigError, DataError, DomainError, NumericalError
from .features import BlockSource, FeatureContext, mean_design_row, popularity_index
from .graph import load_edges, load_vertices


def _fail(code, message):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError as exc:
        _fail(2, exc)
    except (DataError, DomainError) as exc:
        _fail(3, exc)
    except NumericalError as exc:
        _fail(4, exc)


def _load(cfg):
    cfg.require_inputs()
    vertices = load_vertices(cfg.vertices, delimiter=cfg.delimiter, missing_numeric=cfg.missing_numeric)
    graph = load_edges(cfg.edges, vertices, delimiter=cfg.delimiter)
    return graph


def _outdir(cfg):
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def _slug(label):
    return re.sub(r"[^A-Za-z0-9_]+", "_", label)


def _write_manifest(manifest, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("index,name,kind,group,block\n")
        for row in manifest.to_rows():
            fh.write(",".join(str(v) for v in row) + "\n")


def _write_fit_csv(fr, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("coefficient,estimate,se,z\n")
        for name, b, s, z, _ in estimator.fit_result_rows(fr):
            bs = repr(float(b)) if np.isfinite(b) else "NA"
            ss = repr(float(s)) if np.isfinite(s) else "NA"
            zs = repr(float(z)) if np.isfinite(z) else "NA"
            fh.write(f"{name},{bs},{ss},{zs}\n")


def _write_combined(fits, order, path):
    names = fits[order[0]].names
    with open(path, "w", encoding="utf-8") as fh:
        header = ["coefficient"]
        for label in order:
            header += [f"{label}_estimate", f"{label}_se"]
        fh.write(",".join(header) + "\n")
        for k, name in enumerate(names):
            row = [name]
            for label in order:
                fr = fits[label]
                b, s = fr.beta[k], fr.se[k]
                row.append(repr(float(b)) if np.isfinite(b) else "NA")
                row.append(repr(float(s)) if np.isfinite(s) else "NA")
            fh.write(",".join(row) + "\n")


def _write_margins(effects, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("feature,kind,effect\n")
        for e in effects:
            fh.write(f"{e.name},{e.kind},{float(e.value)!r}\n")


@click.group()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Run config (YAML).")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--workers", type=int, default=None, help="Override the worker count.")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Override the output directory.")
@click.option("--view", type=click.Choice(["directed", "mutual"]), default=None, help="Override the network view.")
@click.pass_context
def main(ctx, config_path, seed, workers, out_dir, view):
    """Dyadic link-formation toolkit: stats, fits, fixed effects, simulation."""
    overrides = {"seed": seed, "workers": workers, "out_dir": out_dir, "view": view}
    ctx.obj = _guarded(load_run_config, config_path, overrides)


@main.command()
@click.pass_obj
def stats(cfg):
    """Descriptive statistics: six plot-data files in the output directory."""

    def run():
        g = _load(cfg)
        out = _outdir(cfg)
        netstats.write_summary_table(g.vertices, os.path.join(out, "summary.csv"))
        netstats.write_degree_distribution(g, os.path.join(out, "degree_distribution.csv"))
        netstats.write_neighbor_curve(g, os.path.join(out, "neighbor_degree.csv"))
        edges = netstats.default_distance_edges(cfg.histogram_bins)
        hist_all = netstats.distance_histogram(g, "all", edges)
        hist_mut = netstats.distance_histogram(g, "mutual", edges)
        netstats.write_distance_histograms(hist_all, hist_mut, os.path.join(out, "distance_histograms.csv"))
        labels, mat = netstats.country_follow_matrix(g, cfg.top_k)
        netstats.write_country_matrix(labels, mat, os.path.join(out, "country_matrix.csv"))
        netstats.write_popularity(popularity_index(g), os.path.join(out, "popularity.csv"))
        click.echo(f"stats written to {out}")

    _guarded(run)


@main.command()
@click.pass_obj
def popularity(cfg):
    """Country popularity ranking only."""

    def run():
        g = _load(cfg)
        out = _outdir(cfg)
        netstats.write_popularity(popularity_index(g), os.path.join(out, "popularity.csv"))
        click.echo(f"popularity written to {out}")

    _guarded(run)


def _fit_all(cfg):
    g = _load(cfg)
    spec = cfg.feature_spec()
    ctx = FeatureContext(g.vertices, spec, graph=g)
    digest = config_digest(cfg)
    fits, failures = estimator.fit_by_country(
        ctx, list(cfg.countries), cfg.optimizer_config(), config_hash=digest, workers=cfg.workers)
    return g, ctx, fits, failures


@main.command()
@click.option("--margins", "with_margins", is_flag=True, default=None, help="Also write marginal effects at the mean.")
@click.pass_obj
def fit(cfg, with_margins):
    """Streaming logit fit: world plus each configured country restriction."""

    def run():
        want_margins = cfg.margins if with_margins is None else True
        g, ctx, fits, failures = _fit_all(cfg)
        out = _outdir(cfg)
        _write_manifest(ctx.manifest, os.path.join(out, "feature_layout.csv"))
        order = [label for label in ["world"] + list(cfg.countries) if label in fits]
        for label in order:
            fr = fits[label]
            slug = _slug(label)
            with open(os.path.join(out, f"fit_{slug}.txt"), "w", encoding="utf-8") as fh:
                fh.write(estimator.format_fit_result(fr, label=f"{label} view={cfg.view}"))
            _write_fit_csv(fr, os.path.join(out, f"fit_{slug}.csv"))
            if want_margins:
                xbar = mean_design_row(ctx, None if label == "world" else label)
                effects = estimator.marginal_effects_at_mean(fr.beta, xbar, ctx.manifest)
                _write_margins(effects, os.path.join(out, f"margins_{slug}.csv"))
        if order:
            _write_combined(fits, order, os.path.join(out, "coefficients.csv"))
        for label, message in failures.items():
            click.echo(f"fit failed for {label}: {message}", err=True)
        if not fits:
            _fail(4, "every restriction failed to fit")
        click.echo(f"fits written to {cfg.out_dir}")

    _guarded(run)


@main.command()
@click.pass_obj
def margins(cfg):
    """Marginal effects at the mean for the world fit."""

    def run():
        g, ctx, fits, failures = _fit_all(cfg)
        if "world" not in fits:
            _fail(4, failures.get("world", "world fit unavailable"))
        out = _outdir(cfg)
        xbar = mean_design_row(ctx)
        effects = estimator.marginal_effects_at_mean(fits["world"].beta, xbar, ctx.manifest)
        _write_margins(effects, os.path.join(out, "margins_world.csv"))
        click.echo(f"margins written to {out}")

    _guarded(run)


@main.command("fit-fe")
@click.pass_obj
def fit_fe(cfg):
    """Tetrad conditional-logit fit plus comparison against the plain fit."""

    def run():
        g = _load(cfg)
        spec = cfg.feature_spec()
        ctx = FeatureContext(g.vertices, spec, graph=g)
        digest = config_digest(cfg)
        seed = cfg.require_seed()
        tcfg = dict(cfg.tetrad)
        budget = int(tcfg.get("budget", 100_000))
        exhaustive_limit = int(tcfg.get("exhaustive_limit", tetrad.EXHAUSTIVE_LIMIT))
        n_boot = int(tcfg.get("n_boot", 0))

        source = BlockSource(ctx, seed=seed)
        plain = estimator.fit_streaming(
            source, cfg.optimizer_config(), names=ctx.manifest.names, config_hash=digest,
            workers=cfg.workers)

        try:
            samples = tetrad.enumerate_tetrads(g, ctx, budget=budget, seed=seed,
                                               exhaustive_limit=exhaustive_limit)
        except DataError as exc:
            _fail(3, f"{exc}; the graph is too dense or too sparse for tetrad conditioning")
        fe = tetrad.fit_tetrad(samples, config_hash=digest)
        if n_boot >= 2:
            boot = tetrad.bootstrap_se(g, spec, n_boot=n_boot, seed=seed, budget=budget,
                                       exhaustive_limit=exhaustive_limit)
            fe.se = boot.se

        out = _outdir(cfg)
        with open(os.path.join(out, "fit_fe.txt"), "w", encoding="utf-8") as fh:
            fh.write(estimator.format_fit_result(fe, label=f"fixed-effects view={cfg.view} tetrads={len(samples)}"))
        _write_fit_csv(fe, os.path.join(out, "fit_fe.csv"))
        rows = tetrad.compare_fits(plain, fe)
        with open(os.path.join(out, "fe_comparison.csv"), "w", encoding="utf-8") as fh:
            fh.write("coefficient,exp_plain,exp_fe,delta\n")
            for r in rows:
                vals = [
                    repr(r.exp_plain) if np.isfinite(r.exp_plain) else "NA",
                    repr(r.exp_fe) if np.isfinite(r.exp_fe) else "NA",
                    repr(r.delta) if np.isfinite(r.delta) else "NA",
                ]
                fh.write(f"{r.name}," + ",".join(vals) + "\n")
        click.echo(f"fixed-effects fit written to {out}")

    _guarded(run)


@main.command()
@click.pass_obj
def simulate(cfg):
    """Generate a synthetic dataset: vertex, edge, and truth files."""

    def run():
        scfg = cfg.synth_config()
        truth = synth.generate(scfg)
        out = _outdir(cfg)
        synth.write_vertex_file(truth.graph.vertices, os.path.join(out, "vertices.csv"),
                                delimiter=cfg.delimiter)
        synth.write_edge_file(truth.graph, os.path.join(out, "edges.csv"), delimiter=cfg.delimiter)
        synth.write_truth_file(truth, os.path.join(out, "truth.json"))
        click.echo(f"synthetic dataset written to {out}")

    _guarded(run)


if __name__ == "__main__":
    main()
