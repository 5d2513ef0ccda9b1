"""End-to-end experiment runners: synthetic benchmark, real-data round
robin, and restart-robustness checks.

The synthetic protocol: grow a scale-free network, sample a ground-truth
model, simulate a training log plus held-out test logs on the original and
on a degree-preserving shuffle of the network, train the factor model and
the pairwise baselines on the training log, and score every method against
the exact model probabilities on the test exposure modes.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from . import report as report_mod
from .baselines import (IMPredictor, PairwiseTable, Predictor, TablePredictor,
                        bernoulli_estimator, em_estimator, jaccard_estimator,
                        pmf_complete, uniform_estimator)
from .cascades import (CascadeLog, Diagnostics, DiffusionNetwork, ExposureTable,
                       Mode, NodeId, build_diffusion_network, dump_cascades,
                       extract_exposures, network_to_dict, prune, split_by_time)
from .config import BaselineConfig, ExperimentConfig
from .errors import DataError
from .evaluation import (GroundTruth, MetricsReport, RankCase, bernoulli_kl,
                         estimate_ground_truth, influence_susceptibility_histogram,
                         matrix_difference, model_rank_cases, observed_rank_cases,
                         random_guess_r_mrr, rank_of_truth, split_observed_hidden,
                         synthetic_ground_truth)
from .im import Hyperparams, IMModel, TrainResult, train
from .seeding import derive_seed, rng_for
from .synth import (SynthConfig, generate_ba_network, sample_ground_truth,
                    shuffle_network, simulate_cascades)


def profile_hyperparams(cfg: SynthConfig, *, alpha: float = 0.9,
                        max_epochs: int = 250) -> Hyperparams:
    """Training settings matched to a synthetic generator: the model trains
    at the generator's k and lambda, with priors centered on the sampling
    ranges."""
    lo_i, hi_i = cfg.influence_range
    lo_s, hi_s = cfg.susceptibility_range
    return Hyperparams(
        alpha=alpha,
        beta=1.0,
        mu_I=(lo_i + hi_i) / 2.0,
        sigma2_I=max((hi_i - lo_i) ** 2 / 12.0, 1e-3),
        mu_S=(lo_s + hi_s) / 2.0,
        sigma2_S=max((hi_s - lo_s) ** 2 / 12.0, 1e-3),
        max_epochs=max_epochs,
        k=cfg.k,
        lam=cfg.lam,
        init_seed=derive_seed(cfg.seed, "init"),
        init_scale=0.1,
    )


@dataclass
class Profile:
    name: str
    synth: SynthConfig
    alpha: float = 0.9
    max_epochs: int = 250
    test_factor: float = 1.0
    shuffle_swaps_factor: float = 10.0

    def hyperparams(self) -> Hyperparams:
        return profile_hyperparams(self.synth, alpha=self.alpha,
                                   max_epochs=self.max_epochs)


def get_profile(name: str, seed: int = 42) -> Profile:
    if name == "synthetic-small":
        # larger held-out logs stabilize the sparse ranking statistics at
        # this scale
        return Profile(name=name, synth=SynthConfig(
            n_nodes=300, edges_per_node=5, k=10, lam=0.01,
            n_cascades=5000, n_sources=100, seed=seed), test_factor=4.0)
    if name == "synthetic-full":
        return Profile(name=name, synth=SynthConfig(
            n_nodes=1000, edges_per_node=5, k=20, lam=0.01,
            n_cascades=20000, n_sources=100, seed=seed))
    raise DataError(f"unknown profile {name!r}")


def draw_source_pool(net: DiffusionNetwork, cfg: SynthConfig) -> List[NodeId]:
    """The fixed per-run source pool (shared by training and test logs)."""
    node_list = sorted(net.nodes)
    rng = rng_for(cfg.seed, "source-pool")
    size = min(cfg.n_sources, len(node_list))
    picked = rng.choice(len(node_list), size=size, replace=False)
    return sorted(node_list[i] for i in picked)


@dataclass
class EvaluationData:
    """Everything needed to score predictors on one test log."""

    pairs: List[Tuple[NodeId, Mode]]
    observed: List[Tuple[NodeId, Mode]]
    hidden: List[Tuple[NodeId, Mode]]
    truth: GroundTruth
    rank_cases: List[RankCase]
    random_r_mrr: float
    n_skipped_pairs: int


def build_eval_data(test_log: CascadeLog, train_net: DiffusionNetwork,
                    universe: Set[NodeId], truth_model: Optional[IMModel] = None,
                    min_support: int = 1) -> EvaluationData:
    """Evaluation pairs are the distinct (node, mode) exposure keys of the
    test log (against its own diffusion network), restricted to nodes the
    trained predictors can score.

    With ``truth_model`` the reference probability is the exact model value
    and the ranking ground truth is the model's top mode member; otherwise
    the reference is the test-log forwarding ratio and the ranking ground
    truth is the recorded parent.
    """
    test_net = build_diffusion_network(test_log)
    test_expo = extract_exposures(test_log, test_net)

    def covered(v: NodeId, mode: Mode) -> bool:
        return v in universe and all(u in universe for u in mode)

    if truth_model is None:
        raw = estimate_ground_truth(test_expo, min_support=min_support)
        pairs = [key for key in raw.pairs() if covered(*key)]
        truth = GroundTruth(entries={key: raw.entries[key] for key in pairs})
        all_cases = observed_rank_cases(test_expo)
    else:
        pairs = [key for key in sorted(test_expo.cells,
                                       key=lambda k: (str(k[0]), tuple(map(str, k[1]))))
                 if covered(*key)]
        truth = synthetic_ground_truth(truth_model, pairs)
        all_cases = model_rank_cases(test_expo, truth_model)
    n_skipped = len(test_expo.cells) - len(pairs)
    if not pairs:
        raise DataError("no evaluable (node, mode) pairs overlap the trained universe")
    observed, hidden = split_observed_hidden(train_net, pairs)
    cases = [c for c in all_cases if covered(c.v, c.mode)]
    random_r = random_guess_r_mrr(cases) if cases else float("nan")
    return EvaluationData(pairs=pairs, observed=observed, hidden=hidden,
                          truth=truth, rank_cases=cases, random_r_mrr=random_r,
                          n_skipped_pairs=n_skipped)


def evaluate_predictor(name: str, predictor: Predictor,
                       data: EvaluationData) -> MetricsReport:
    def bucket_mean(bucket: List[Tuple[NodeId, Mode]]) -> float:
        if not bucket:
            return 0.0
        return sum(bernoulli_kl(data.truth.entries[key][0],
                                predictor.set_prob(*key)) for key in bucket) / len(bucket)

    mkl_obs = bucket_mean(data.observed)
    mkl_hid = bucket_mean(data.hidden)
    n_obs, n_hid = len(data.observed), len(data.hidden)
    overall = ((mkl_obs * n_obs + mkl_hid * n_hid) / (n_obs + n_hid)) if (n_obs + n_hid) else 0.0
    if data.rank_cases:
        ranks = rank_of_truth(data.rank_cases, predictor)
        mrr_val = sum(1.0 / r for r in ranks) / len(ranks)
        r_mrr = 1.0 - mrr_val
        n_cases = len(ranks)
    else:
        mrr_val = r_mrr = float("nan")
        n_cases = 0
    return MetricsReport(method=name, mkl=overall, mkl_observed=mkl_obs,
                         mkl_hidden=mkl_hid,
                         compositive=math.hypot(mkl_obs, mkl_hid),
                         mrr=mrr_val, r_mrr=r_mrr, n_observed=n_obs,
                         n_hidden=n_hid, n_rank_cases=n_cases,
                         n_skipped_pairs=data.n_skipped_pairs)


def kl_dump_rows(predictor: Predictor, data: EvaluationData) -> List[dict]:
    hidden = set(data.hidden)
    rows = []
    for key in data.pairs:
        p_true = data.truth.entries[key][0]
        q = predictor.set_prob(*key)
        rows.append({"v": key[0], "mode": key[1], "p_true": p_true, "q": q,
                     "kl": bernoulli_kl(p_true, q),
                     "bucket": "hidden" if key in hidden else "observed"})
    return rows


def fit_predictors(train_log: CascadeLog, train_net: DiffusionNetwork,
                   exposures: ExposureTable, im_model: Optional[IMModel],
                   bcfg: BaselineConfig, seed: int,
                   mf_rank: Optional[int] = None
                   ) -> Tuple[Dict[str, Predictor], Dict[str, PairwiseTable]]:
    """All comparison methods over one training window."""
    universe = sorted(train_net.nodes)
    rank = mf_rank or bcfg.mf_rank
    if not rank:
        rank = im_model.k if im_model is not None else 20

    predictors: Dict[str, Predictor] = {}
    tables: Dict[str, PairwiseTable] = {}
    if im_model is not None:
        predictors["im"] = IMPredictor(im_model)
    for p in bcfg.uniform_ps:
        predictors[f"un(p={p:g})"] = uniform_estimator(p)

    def add_table_methods(name: str, table: PairwiseTable, mf_seed_scope: str) -> None:
        table.nodes = universe
        tables[name] = table
        predictors[name] = TablePredictor(table, name=name)
        mf = pmf_complete(table, rank=rank, reg=bcfg.mf_reg, iters=bcfg.mf_iters,
                          seed=derive_seed(seed, "mf", mf_seed_scope))
        mf.name = f"{name}+mf"
        predictors[f"{name}+mf"] = mf

    add_table_methods("bd", bernoulli_estimator(exposures), "bd")
    add_table_methods("ji", jaccard_estimator(train_log, train_net), "ji")
    add_table_methods("em", em_estimator(train_log, train_net,
                                         max_iters=bcfg.em_max_iters,
                                         tol=bcfg.em_tol), "em")
    return predictors, tables


@dataclass
class SyntheticRun:
    profile: Profile
    hp: Hyperparams
    net: DiffusionNetwork
    truth: IMModel
    source_pool: List[NodeId]
    train_log: CascadeLog
    test_log: CascadeLog
    shuffled_net: DiffusionNetwork
    shuffled_test_log: CascadeLog
    train_net: DiffusionNetwork
    exposures: ExposureTable
    diagnostics: Diagnostics
    im: TrainResult
    predictors: Dict[str, Predictor]
    tables: Dict[str, PairwiseTable]
    evals: Dict[str, EvaluationData]
    reports: Dict[str, Dict[str, MetricsReport]]

    def report(self, net_label: str, method: str) -> MetricsReport:
        return self.reports[net_label][method]


def run_synthetic_experiment(profile: Profile,
                             bcfg: Optional[BaselineConfig] = None,
                             out_dir: Optional[Path] = None,
                             comparison_methods: Optional[Sequence[str]] = None
                             ) -> SyntheticRun:
    bcfg = bcfg or BaselineConfig()
    cfg = profile.synth
    cfg.validate()
    hp = profile.hyperparams()

    net = generate_ba_network(cfg.n_nodes, cfg.edges_per_node, cfg.seed)
    truth = sample_ground_truth(cfg)
    pool = draw_source_pool(net, cfg)
    n_test = max(1, int(round(cfg.n_cascades * profile.test_factor)))

    train_log = simulate_cascades(
        net, truth, dataclasses.replace(cfg, seed=derive_seed(cfg.seed, "log", "train")),
        sources=pool)
    test_log = simulate_cascades(
        net, truth, dataclasses.replace(cfg, seed=derive_seed(cfg.seed, "log", "test"),
                                        n_cascades=n_test),
        sources=pool)
    shuffled_net = shuffle_network(net, derive_seed(cfg.seed, "shuffle"),
                                   int(profile.shuffle_swaps_factor * net.n_edges))
    shuffled_test_log = simulate_cascades(
        shuffled_net, truth,
        dataclasses.replace(cfg, seed=derive_seed(cfg.seed, "log", "test-shuffled"),
                            n_cascades=n_test),
        sources=pool)

    diagnostics = Diagnostics()
    train_net = build_diffusion_network(train_log)
    exposures = extract_exposures(train_log, train_net, diagnostics)
    if not exposures.cells:
        raise DataError("training log produced no exposure records")
    im_result = train(exposures, hp, nodes=sorted(train_net.nodes))

    predictors, tables = fit_predictors(train_log, train_net, exposures,
                                        im_result.model, bcfg, cfg.seed)
    if comparison_methods is not None:
        predictors = {k: v for k, v in predictors.items() if k in comparison_methods}

    universe = set(train_net.nodes)
    evals = {
        "trained": build_eval_data(test_log, train_net, universe, truth_model=truth),
        "shuffled": build_eval_data(shuffled_test_log, train_net, universe, truth_model=truth),
    }
    reports = {label: {name: evaluate_predictor(name, pred, data)
                       for name, pred in predictors.items()}
               for label, data in evals.items()}

    run = SyntheticRun(profile=profile, hp=hp, net=net, truth=truth,
                       source_pool=pool, train_log=train_log, test_log=test_log,
                       shuffled_net=shuffled_net, shuffled_test_log=shuffled_test_log,
                       train_net=train_net, exposures=exposures,
                       diagnostics=diagnostics, im=im_result,
                       predictors=predictors, tables=tables, evals=evals,
                       reports=reports)
    if out_dir is not None:
        write_synthetic_artifacts(run, Path(out_dir))
    return run


@dataclass
class RestartCheck:
    """Column-permutation-matched distance between two trainings, compared
    with the mean distance between freshly sampled random models."""

    i_diff_per_entry: float
    s_diff_per_entry: float
    i_random_per_entry: float
    s_random_per_entry: float

    @property
    def i_ratio(self) -> float:
        return self.i_diff_per_entry / self.i_random_per_entry

    @property
    def s_ratio(self) -> float:
        return self.s_diff_per_entry / self.s_random_per_entry

    def to_dict(self) -> dict:
        return {"i_diff_per_entry": self.i_diff_per_entry,
                "s_diff_per_entry": self.s_diff_per_entry,
                "i_random_per_entry": self.i_random_per_entry,
                "s_random_per_entry": self.s_random_per_entry,
                "i_ratio": self.i_ratio, "s_ratio": self.s_ratio}


def restart_check(run: SyntheticRun, second_init_seed: int,
                  n_random_pairs: int = 5) -> Tuple[RestartCheck, TrainResult]:
    """Retrain from a different initialization and compare matrices."""
    hp2 = dataclasses.replace(run.hp, init_seed=second_init_seed)
    second = train(run.exposures, hp2, nodes=sorted(run.train_net.nodes))
    n, k = run.im.model.I.shape
    scale = 1.0 / (n * k)
    i_diff = matrix_difference(run.im.model.I, second.model.I) * scale
    s_diff = matrix_difference(run.im.model.S, second.model.S) * scale

    cfg = run.profile.synth
    rng = rng_for(cfg.seed, "restart-random")
    lo_i, hi_i = cfg.influence_range
    lo_s, hi_s = cfg.susceptibility_range
    i_rand = []
    s_rand = []
    for _ in range(n_random_pairs):
        a = rng.uniform(lo_i, hi_i, size=(n, k))
        b = rng.uniform(lo_i, hi_i, size=(n, k))
        i_rand.append(matrix_difference(a, b) * scale)
        a = rng.uniform(lo_s, hi_s, size=(n, k))
        b = rng.uniform(lo_s, hi_s, size=(n, k))
        s_rand.append(matrix_difference(a, b) * scale)
    check = RestartCheck(i_diff_per_entry=i_diff, s_diff_per_entry=s_diff,
                         i_random_per_entry=float(np.mean(i_rand)),
                         s_random_per_entry=float(np.mean(s_rand)))
    return check, second


def write_synthetic_artifacts(run: SyntheticRun, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_mod.write_json(network_to_dict(run.net), out_dir / "network.json")
    report_mod.write_json(network_to_dict(run.shuffled_net),
                          out_dir / "network_shuffled.json")
    report_mod.write_json(run.truth.to_dict(), out_dir / "truth_model.json")
    report_mod.write_json(run.im.model.to_dict(), out_dir / "model_im.json")
    for name, log in (("cascades_train.jsonl", run.train_log),
                      ("cascades_test.jsonl", run.test_log),
                      ("cascades_test_shuffled.jsonl", run.shuffled_test_log)):
        with (out_dir / name).open("w") as fp:
            dump_cascades(log, fp)
    report_mod.write_loss_trace(run.im.losses, run.im.steps, out_dir / "loss_trace.csv")
    report_mod.render_loss_curve(run.im.losses, out_dir / "loss_curve.png")
    for name, table in run.tables.items():
        report_mod.write_pairwise_table(table, out_dir / f"pairwise_{name}.csv")

    all_reports = []
    for label, by_method in run.reports.items():
        for name, rep in by_method.items():
            slug = name.replace("(", "_").replace(")", "").replace("=", "")
            report_mod.write_json(sanitize_metrics(rep.to_dict()),
                                  out_dir / "metrics" / f"{label}__{slug}.json")
            all_reports.append(dataclasses.replace(rep, method=f"{name}@{label}"))
        report_mod.write_comparison(list(by_method.values()),
                                    out_dir / f"comparison_{label}.csv")
        report_mod.render_comparison(list(by_method.values()),
                                     out_dir / f"comparison_{label}.png")
        if "im" in run.predictors:
            rows = kl_dump_rows(run.predictors["im"], run.evals[label])
            report_mod.write_kl_dump(rows, out_dir / f"kl_dump_im_{label}.csv")
    counts, x_edges, y_edges = influence_susceptibility_histogram(run.im.model, bins=20)
    report_mod.write_histogram(counts, out_dir / "histogram.csv")
    report_mod.render_histogram(counts, x_edges, y_edges, out_dir / "histogram.png")
    report_mod.write_json({
        "profile": run.profile.name,
        "diagnostics": run.diagnostics.to_dict(),
        "random_guess_r_mrr": {label: _none_if_nan(data.random_r_mrr)
                               for label, data in run.evals.items()},
        "n_eval_pairs": {label: len(data.pairs) for label, data in run.evals.items()},
    }, out_dir / "summary.json")


def _none_if_nan(x: float):
    return None if (isinstance(x, float) and not math.isfinite(x)) else x


def sanitize_metrics(obj: dict) -> dict:
    return {k: _none_if_nan(v) for k, v in obj.items()}


@dataclass
class RoundResult:
    round_index: int
    test_index: int
    reports: Dict[str, MetricsReport]
    random_r_mrr: float
    n_pairs: int


def run_rounds(log: CascadeLog, boundaries: Sequence[int], cfg: ExperimentConfig,
               out_dir: Optional[Path] = None,
               rounds: Optional[Sequence[int]] = None) -> List[RoundResult]:
    """Round robin over time windows: train on window i, evaluate on the
    adjacent windows, with forwarding-ratio ground truth.

    Windows come from splitting ``log`` at ``boundaries``; pruning runs
    first when configured.  Every report gets the full method lineup.
    """
    if cfg.min_pair_total > 0 or cfg.max_pair_per_message > 0:
        log = prune(log, cfg.min_pair_total,
                    cfg.max_pair_per_message or float("inf"))
    windows, overflow = split_by_time(log, boundaries)
    if rounds is None:
        rounds = range(len(windows))
    results: List[RoundResult] = []
    for i in rounds:
        if not 0 <= i < len(windows):
            raise DataError(f"round {i} outside the window list")
        train_window = windows[i]
        if not train_window.messages:
            raise DataError(f"training window {i} is empty")
        train_net = build_diffusion_network(train_window)
        exposures = extract_exposures(train_window, train_net)
        if not exposures.cells:
            raise DataError(f"training window {i} produced no exposure records")
        hp = dataclasses.replace(cfg.train, init_seed=derive_seed(cfg.seed, "round", i))
        im_result = train(exposures, hp, nodes=sorted(train_net.nodes))
        predictors, _ = fit_predictors(train_window, train_net, exposures,
                                       im_result.model, cfg.baselines, cfg.seed)
        universe = set(train_net.nodes)
        for j in (i - 1, i + 1):
            if not 0 <= j < len(windows) or not windows[j].messages:
                continue
            data = build_eval_data(windows[j], train_net, universe,
                                   truth_model=None, min_support=cfg.min_support)
            reports = {name: evaluate_predictor(name, pred, data)
                       for name, pred in predictors.items()}
            results.append(RoundResult(round_index=i, test_index=j,
                                       reports=reports,
                                       random_r_mrr=data.random_r_mrr,
                                       n_pairs=len(data.pairs)))
            if out_dir is not None:
                base = Path(out_dir) / f"round{i}_test{j}"
                base.mkdir(parents=True, exist_ok=True)
                for name, rep in reports.items():
                    slug = name.replace("(", "_").replace(")", "").replace("=", "")
                    report_mod.write_json(sanitize_metrics(rep.to_dict()),
                                          base / f"metrics_{slug}.json")
                report_mod.write_comparison(list(reports.values()),
                                            base / "comparison.csv")
                report_mod.render_comparison(list(reports.values()),
                                             base / "comparison.png")
    if out_dir is not None and overflow.messages:
        report_mod.write_json({"overflow_messages": overflow.n_messages},
                              Path(out_dir) / "overflow.json")
    return results
