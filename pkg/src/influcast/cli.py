"""Command-line interface.

Subcommands: generate, train, evaluate, baselines, reproduce.  Exit codes:
0 success, 2 configuration error, 3 data error, 4 numerical failure.
Output directories honor the --out flag, then the INFLUCAST_OUT environment
variable, then the configuration file.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path
from typing import List, Optional

import click

from . import report as report_mod
from .baselines import IMPredictor, TablePredictor, pmf_complete, uniform_estimator
from .cascades import (Diagnostics, build_diffusion_network, dump_cascades,
                       extract_exposures, network_to_dict, parse_cascades, prune)
from .config import ExperimentConfig, load_config
from .errors import (ConfigError, DataError, EvaluationDomainError,
                     InflucastError)
from .evaluation import influence_susceptibility_histogram
from .im import Hyperparams, IMModel, train
from .pipeline import (build_eval_data, evaluate_predictor, get_profile,
                       kl_dump_rows, restart_check, run_rounds,
                       run_synthetic_experiment, sanitize_metrics)
from .seeding import derive_seed
from .synth import (generate_ba_network, sample_ground_truth, shuffle_network,
                    simulate_cascades)


@click.group()
def cli() -> None:
    """Learn influence and susceptibility vectors from cascade logs."""


def _out_dir(out: Optional[str], cfg: ExperimentConfig) -> Path:
    path = Path(out) if out else cfg.resolved_out_dir()
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_log(path: str, diagnostics: Optional[Diagnostics] = None):
    file = Path(path)
    if not file.exists():
        raise DataError(f"cascade file not found: {path}")
    with file.open() as fp:
        return parse_cascades(fp, diagnostics)


def _maybe_prune(log, cfg: ExperimentConfig):
    if cfg.min_pair_total > 0 or cfg.max_pair_per_message > 0:
        return prune(log, cfg.min_pair_total,
                     cfg.max_pair_per_message or float("inf"))
    return log


@cli.command()
@click.option("--config", "config_path", type=str, default=None, help="TOML configuration file.")
@click.option("--out", type=str, default=None, help="Output directory.")
@click.option("--seed", type=int, default=None, help="Master seed override.")
@click.option("--n-nodes", type=int, default=None)
@click.option("--edges-per-node", type=int, default=None)
@click.option("--k", type=int, default=None)
@click.option("--lam", "--lambda", "lam", type=float, default=None)
@click.option("--cascades", "n_cascades", type=int, default=None,
              help="Number of cascades to simulate (0: network and model only).")
@click.option("--sources", type=int, default=None)
def generate(config_path, out, seed, n_nodes, edges_per_node, k, lam, n_cascades, sources):
    """Generate a synthetic corpus: network, ground-truth model, cascades,
    and a degree-preserving shuffled network with its own cascades."""
    cfg = load_config(config_path)
    synth_cfg = cfg.synth
    for name, value in (("seed", seed), ("n_nodes", n_nodes),
                        ("edges_per_node", edges_per_node), ("k", k), ("lam", lam),
                        ("n_cascades", n_cascades), ("n_sources", sources)):
        if value is not None:
            setattr(synth_cfg, name, value)
    synth_cfg.validate()
    out_path = _out_dir(out, cfg)

    net = generate_ba_network(synth_cfg.n_nodes, synth_cfg.edges_per_node, synth_cfg.seed)
    truth = sample_ground_truth(synth_cfg)
    report_mod.write_json(network_to_dict(net), out_path / "network.json")
    report_mod.write_json(truth.to_dict(), out_path / "truth_model.json")
    if synth_cfg.n_cascades > 0:
        log = simulate_cascades(net, truth, synth_cfg)
        with (out_path / "cascades.jsonl").open("w") as fp:
            dump_cascades(log, fp)
        shuffled = shuffle_network(net, derive_seed(synth_cfg.seed, "shuffle"),
                                   int(cfg.shuffle_swaps_factor * net.n_edges))
        report_mod.write_json(network_to_dict(shuffled), out_path / "network_shuffled.json")
        shuffled_log = simulate_cascades(
            shuffled, truth,
            dataclasses.replace(synth_cfg, seed=derive_seed(synth_cfg.seed, "log", "shuffled")))
        with (out_path / "cascades_shuffled.jsonl").open("w") as fp:
            dump_cascades(shuffled_log, fp)
    click.echo(f"generated synthetic corpus in {out_path}")


def _hp_from_options(cfg: ExperimentConfig, alpha, lam, k, max_epochs, beta,
                     init_seed, fixed_step) -> Hyperparams:
    hp = cfg.train
    for name, value in (("alpha", alpha), ("lam", lam), ("k", k),
                        ("max_epochs", max_epochs), ("beta", beta),
                        ("init_seed", init_seed)):
        if value is not None:
            setattr(hp, name, value)
    if fixed_step:
        hp.fixed_step = True
    try:
        hp.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return hp


@cli.command()
@click.option("--cascades", "cascades_path", required=True, type=str)
@click.option("--config", "config_path", type=str, default=None)
@click.option("--out", type=str, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--lam", "--lambda", "lam", type=float, default=None)
@click.option("--k", type=int, default=None)
@click.option("--max-epochs", type=int, default=None)
@click.option("--beta", type=float, default=None)
@click.option("--init-seed", type=int, default=None)
@click.option("--fixed-step", is_flag=True, default=False)
@click.option("--grid", "grid_mode", is_flag=True, default=False,
              help="Train one model per (alpha, lambda, k) grid cell.")
def train_cmd(cascades_path, config_path, out, alpha, lam, k, max_epochs, beta,
              init_seed, fixed_step, grid_mode):
    """Train the factor model on a cascade log."""
    cfg = load_config(config_path)
    hp = _hp_from_options(cfg, alpha, lam, k, max_epochs, beta, init_seed, fixed_step)
    out_path = _out_dir(out, cfg)
    diagnostics = Diagnostics()
    log = _maybe_prune(_load_log(cascades_path, diagnostics), cfg)
    net = build_diffusion_network(log)
    exposures = extract_exposures(log, net, diagnostics)
    if not exposures.cells:
        raise DataError("nothing to train: the log produced no exposure records")
    nodes = sorted(net.nodes)

    if grid_mode:
        rows: List[dict] = []
        for a, l, kk in cfg.grid.cells():
            cell_hp = dataclasses.replace(hp, alpha=a, lam=l, k=kk)
            result = train(exposures, cell_hp, nodes=nodes)
            name = f"model_a{a:g}_l{l:g}_k{kk}"
            report_mod.write_json(result.model.to_dict(), out_path / f"{name}.json")
            rows.append({"alpha": a, "lambda": l, "k": kk,
                         "final_loss": result.final_loss, "model": f"{name}.json"})
        import csv as _csv
        with (out_path / "grid_summary.csv").open("w", newline="") as fp:
            writer = _csv.DictWriter(fp, fieldnames=["alpha", "lambda", "k",
                                                     "final_loss", "model"])
            writer.writeheader()
            writer.writerows(rows)
        click.echo(f"trained {len(rows)} grid cells into {out_path}")
        return

    result = train(exposures, hp, nodes=nodes)
    report_mod.write_json(result.model.to_dict(), out_path / "model.json")
    report_mod.write_loss_trace(result.losses, result.steps, out_path / "loss_trace.csv")
    report_mod.render_loss_curve(result.losses, out_path / "loss_curve.png")
    report_mod.write_json(diagnostics.to_dict(), out_path / "diagnostics.json")
    click.echo(f"trained model written to {out_path / 'model.json'} "
               f"(final loss {result.final_loss:.6g})")


def _predictor_for_method(method: str, p: float, model_path: Optional[str],
                          train_log, train_net, exposures, cfg: ExperimentConfig):
    method = method.lower()
    if method == "im":
        if model_path is None:
            raise ConfigError("--method im requires --model")
        model = IMModel.from_dict(json.loads(Path(model_path).read_text()))
        return IMPredictor(model), set(model.node_index)
    if method.startswith("un"):
        return uniform_estimator(p), set(train_net.nodes)
    base, _, suffix = method.partition("+")
    from .baselines import bernoulli_estimator, em_estimator, jaccard_estimator
    if base == "bd":
        table = bernoulli_estimator(exposures)
    elif base == "ji":
        table = jaccard_estimator(train_log, train_net)
    elif base == "em":
        table = em_estimator(train_log, train_net,
                             max_iters=cfg.baselines.em_max_iters,
                             tol=cfg.baselines.em_tol)
    else:
        raise ConfigError(f"unknown method {method!r}")
    table.nodes = sorted(train_net.nodes)
    if suffix == "mf":
        rank = cfg.baselines.mf_rank or cfg.train.k
        pred = pmf_complete(table, rank=rank, reg=cfg.baselines.mf_reg,
                            iters=cfg.baselines.mf_iters,
                            seed=derive_seed(cfg.seed, "mf", base))
        pred.name = method
        return pred, set(train_net.nodes)
    if suffix:
        raise ConfigError(f"unknown method suffix {suffix!r}")
    return TablePredictor(table, name=base), set(train_net.nodes)


@cli.command()
@click.option("--method", default="im", show_default=True,
              help="im, un, bd, ji, em, optionally with +mf (e.g. bd+mf).")
@click.option("--p", type=float, default=0.01, show_default=True,
              help="Probability for the uniform method.")
@click.option("--model", "model_path", type=str, default=None)
@click.option("--train-cascades", "train_path", required=True, type=str)
@click.option("--test-cascades", "test_path", required=True, type=str)
@click.option("--truth", type=click.Choice(["exact", "ratio"]), default="ratio",
              show_default=True)
@click.option("--truth-model", "truth_model_path", type=str, default=None)
@click.option("--min-support", type=int, default=None)
@click.option("--config", "config_path", type=str, default=None)
@click.option("--out", type=str, default=None)
def evaluate(method, p, model_path, train_path, test_path, truth,
             truth_model_path, min_support, config_path, out):
    """Score one method on a held-out cascade log."""
    cfg = load_config(config_path)
    if min_support is not None:
        cfg.min_support = min_support
    out_path = _out_dir(out, cfg)
    train_log = _maybe_prune(_load_log(train_path), cfg)
    test_log = _maybe_prune(_load_log(test_path), cfg)
    train_net = build_diffusion_network(train_log)
    exposures = extract_exposures(train_log, train_net)

    predictor, universe = _predictor_for_method(method, p, model_path,
                                                train_log, train_net, exposures, cfg)
    test_nodes = test_log.nodes()
    if not (universe & test_nodes):
        raise EvaluationDomainError(test_nodes)

    truth_model = None
    if truth == "exact":
        if truth_model_path is None:
            raise ConfigError("--truth exact requires --truth-model")
        truth_model = IMModel.from_dict(json.loads(Path(truth_model_path).read_text()))
    data = build_eval_data(test_log, train_net, universe, truth_model=truth_model,
                           min_support=cfg.min_support)
    rep = evaluate_predictor(predictor.name, predictor, data)
    report_mod.write_json(sanitize_metrics(rep.to_dict()), out_path / "metrics.json")
    report_mod.write_kl_dump(kl_dump_rows(predictor, data), out_path / "kl_dump.csv")
    if method.lower() == "im":
        counts, x_edges, y_edges = influence_susceptibility_histogram(
            predictor.model, bins=20)
        report_mod.write_histogram(counts, out_path / "histogram.csv")
        report_mod.render_histogram(counts, x_edges, y_edges, out_path / "histogram.png")
    click.echo(f"{predictor.name}: mkl={rep.mkl:.6g} compositive={rep.compositive:.6g} "
               f"r_mrr={rep.r_mrr:.4f} ({rep.n_observed} observed, {rep.n_hidden} hidden)")


@cli.command()
@click.option("--train-cascades", "train_path", required=True, type=str)
@click.option("--config", "config_path", type=str, default=None)
@click.option("--out", type=str, default=None)
def baselines(train_path, config_path, out):
    """Fit the pairwise estimators and write their probability tables."""
    from .baselines import bernoulli_estimator, em_estimator, jaccard_estimator
    cfg = load_config(config_path)
    out_path = _out_dir(out, cfg)
    log = _maybe_prune(_load_log(train_path), cfg)
    net = build_diffusion_network(log)
    exposures = extract_exposures(log, net)
    tables = {
        "bd": bernoulli_estimator(exposures),
        "ji": jaccard_estimator(log, net),
        "em": em_estimator(log, net, max_iters=cfg.baselines.em_max_iters,
                           tol=cfg.baselines.em_tol),
    }
    for name, table in tables.items():
        report_mod.write_pairwise_table(table, out_path / f"pairwise_{name}.csv")
    click.echo(f"wrote {len(tables)} pairwise tables to {out_path}")


@cli.command()
@click.option("--profile", type=click.Choice(["synthetic-small", "synthetic-full"]),
              default=None, help="Synthetic end-to-end benchmark profile.")
@click.option("--cascades", "cascades_path", type=str, default=None,
              help="Real-format cascade log for the round-robin protocol.")
@click.option("--boundaries", type=str, default=None,
              help="Comma-separated window boundaries for --cascades mode.")
@click.option("--rounds", type=str, default=None,
              help="Comma-separated training windows (default: all).")
@click.option("--seed", type=int, default=None)
@click.option("--config", "config_path", type=str, default=None)
@click.option("--out", type=str, default=None)
def reproduce(profile, cascades_path, boundaries, rounds, seed, config_path, out):
    """Run a full benchmark: generate/ingest, train all methods, evaluate,
    and emit comparison tables with figures."""
    cfg = load_config(config_path)
    if seed is not None:
        cfg.seed = seed
    out_path = _out_dir(out, cfg)

    if profile is not None:
        prof = get_profile(profile, seed=cfg.seed)
        if cfg.test_cascades_factor > 0:
            prof.test_factor = cfg.test_cascades_factor
        run = run_synthetic_experiment(prof, bcfg=cfg.baselines, out_dir=out_path)
        check, _ = restart_check(run, second_init_seed=derive_seed(cfg.seed, "restart"))
        report_mod.write_json(check.to_dict(), out_path / "restart_check.json")
        best = min(run.reports["trained"].values(), key=lambda r: r.compositive)
        click.echo(f"profile {profile}: best compositive {best.compositive:.6g} "
                   f"({best.method}); artifacts in {out_path}")
        return

    if cascades_path is None or boundaries is None:
        raise ConfigError("reproduce needs either --profile or --cascades with --boundaries")
    try:
        bounds = [int(b) for b in boundaries.split(",")]
    except ValueError as exc:
        raise ConfigError(f"boundaries must be integers: {boundaries!r}") from exc
    round_list = None
    if rounds is not None and rounds != "all":
        try:
            round_list = [int(r) for r in rounds.split(",")]
        except ValueError as exc:
            raise ConfigError(f"rounds must be integers: {rounds!r}") from exc
    log = _load_log(cascades_path)
    results = run_rounds(log, bounds, cfg, out_dir=out_path, rounds=round_list)
    click.echo(f"ran {len(results)} round evaluations into {out_path}")


cli.add_command(train_cmd, name="train")


def main(argv: Optional[List[str]] = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.NoArgsIsHelpError as exc:
        click.echo(exc.format_message())
        return 0
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 2
    except click.exceptions.Exit as exc:  # --help
        return exc.exit_code
    except click.Abort:
        return 1
    except InflucastError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
