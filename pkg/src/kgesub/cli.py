"""Command-line pipeline.

Commands: train, evaluate, build-weights, pretrain-submodel,
score-triples, weights-report, singleton-stats, sweep.

Every run writes its artifacts into one run directory (timestamped
unless --run-dir pins it) together with a manifest and an echo of the
effective configuration; re-feeding that echo reproduces the run.
Exit codes: 0 success, 1 usage or config error, 2 data error,
3 numerical divergence.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import evaluation, submodel, subsampling, training
from .config import RunConfig, load_config, save_config, validate_config
from .data import (Dataset, Direction, count_queries, load_dataset,
                   query_frequency, query_of, singleton_query_stats)
from .errors import (ConfigError, DataError, KgesubError,
                     TrainingDivergedError)
from .models import (ModelKind, init_params, load_params, load_params_tag,
                     save_params)
from .subsampling import (SubModelScores, SubsamplingMethod, WeightTable,
                          build_cbs_weights, build_mbs_weights, load_scores,
                          mbs_frequencies, mix_weights, save_scores,
                          save_weight_table, softmax_over_train,
                          uniform_weights)
from .training import TrainConfig, save_checkpoint


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so main() controls the exit code."""

    def error(self, message: str):
        raise ConfigError(message)


# ---------------------------------------------------------------------------
# shared plumbing


def _make_run_dir(args) -> Path:
    if args.run_dir:
        run_dir = Path(args.run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        return run_dir
    base = Path(args.out)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    candidate = base / f"{args.command}-{stamp}"
    suffix = 0
    while candidate.exists():
        suffix += 1
        candidate = base / f"{args.command}-{stamp}-{suffix}"
    candidate.mkdir(parents=True)
    return candidate


def _write_manifest(run_dir: Path, artifacts: dict[str, Path]) -> None:
    with open(run_dir / "manifest.tsv", "w", encoding="utf-8") as fh:
        for name, path in artifacts.items():
            fh.write(f"{name}\t{path.name}\n")


def _resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = {
        "data": "data_dir", "model": "model", "dim": "dim", "gamma": "gamma",
        "norm_p": "norm_p", "phase_weight": "phase_weight",
        "init_epsilon": "init_epsilon", "nu": "nu",
        "batch_size": "batch_size", "steps": "steps",
        "learning_rate": "learning_rate", "optimizer": "optimizer",
        "adversarial_beta": "adversarial_beta", "seed": "seed",
        "valid_every": "valid_every", "smoothing": "smoothing",
        "subsampling": "subsampling", "method": "method", "alpha": "alpha",
        "lam": "lam", "submodel_scores": "submodel_scores",
        "mbs_query_mass": "mbs_query_mass",
        "submodel_checkpoint": "submodel_checkpoint",
    }
    for arg_name, field_name in overrides.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            setattr(config, field_name, value)
    validate_config(config)
    return config


def _load_data(config: RunConfig) -> Dataset:
    directory = config.resolved_data_dir()
    try:
        return load_dataset(directory)
    except OSError as exc:
        raise DataError(f"cannot load dataset from {directory}: {exc}") from exc


def _model_aux(config: RunConfig) -> dict[str, float]:
    kind = ModelKind.from_string(config.model)
    if kind == ModelKind.TRANSE:
        return {"norm_p": config.norm_p}
    if kind == ModelKind.HAKE:
        return {"phase_weight": config.phase_weight}
    return {}


def _train_config(config: RunConfig) -> TrainConfig:
    return TrainConfig(
        nu=config.nu, batch_size=config.batch_size, steps=config.steps,
        learning_rate=config.learning_rate, optimizer=config.optimizer,
        adam_beta1=config.adam_beta1, adam_beta2=config.adam_beta2,
        adam_epsilon=config.adam_epsilon,
        adversarial_beta=config.adversarial_beta, seed=config.seed,
        valid_every=config.valid_every,
        lr_decay_every=config.lr_decay_every,
        lr_decay_factor=config.lr_decay_factor)


def _build_weights(config: RunConfig, dataset: Dataset) -> WeightTable:
    source = config.subsampling
    if source == "none":
        return uniform_weights(dataset.num_examples)
    method = SubsamplingMethod.from_string(config.method)
    freq = count_queries(dataset.train, smoothing=config.smoothing)
    if source == "cbs":
        return build_cbs_weights(dataset, freq, method)
    if config.mbs_query_mass == "all_candidates":
        try:
            sub_params = load_params(config.submodel_checkpoint)
        except OSError as exc:
            raise DataError(f"cannot read sub-model checkpoint "
                            f"{config.submodel_checkpoint}: {exc}") from exc
        sid = (load_params_tag(config.submodel_checkpoint)
               or Path(config.submodel_checkpoint).stem)
        f_xy, f_x = submodel.mbs_frequencies_all_candidates(sub_params,
                                                            dataset)
    else:
        scores = _load_scores_checked(config.submodel_scores, dataset)
        sid = scores.submodel_id
        f_xy, f_x = mbs_frequencies(dataset, softmax_over_train(scores))
    mbs = build_mbs_weights(f_xy, f_x, method, config.alpha, submodel_id=sid)
    if source == "mbs":
        return mbs
    cbs = build_cbs_weights(dataset, freq, method)
    return mix_weights(cbs, mbs, config.lam)


def _load_scores_checked(path: str, dataset: Dataset) -> SubModelScores:
    try:
        scores = load_scores(path)
    except OSError as exc:
        raise DataError(f"cannot read sub-model scores {path}: {exc}") from exc
    if scores.raw_score.shape[0] != dataset.num_examples:
        raise DataError(
            f"score file {path} covers {scores.raw_score.shape[0]} examples, "
            f"dataset expands to {dataset.num_examples}")
    return scores


def _valid_mrr_callback(dataset: Dataset):
    filter_index = evaluation.build_filter_index(dataset)

    def callback(params, step: int) -> float:
        return evaluation.evaluate(params, dataset, "valid",
                                   filter_index).mrr
    return callback


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    config = _resolve_config(args)
    dataset = _load_data(config)
    run_dir = _make_run_dir(args)
    save_config(config, run_dir / "config.resolved.cfg")

    weights = _build_weights(config, dataset)
    save_weight_table(weights, run_dir / "weights.tsv")

    kind = ModelKind.from_string(config.model)
    params = init_params(kind, dataset.num_entities, dataset.num_relations,
                         config.dim, config.gamma, config.seed,
                         aux=_model_aux(config),
                         init_epsilon=config.init_epsilon)
    callback = _valid_mrr_callback(dataset) if config.valid_every > 0 else None
    result = training.train(dataset, weights, params, _train_config(config),
                            callback)
    save_checkpoint(result.state, run_dir / "checkpoint.bin")
    training.write_log(result.log, run_dir / "train.log")
    _write_manifest(run_dir, {
        "config": run_dir / "config.resolved.cfg",
        "weights": run_dir / "weights.tsv",
        "checkpoint": run_dir / "checkpoint.bin",
        "log": run_dir / "train.log",
    })
    final_loss = result.log[-1].loss if result.log else float("nan")
    print(f"trained {config.steps} steps; final batch loss {final_loss:.6f}")
    print(f"artifacts in {run_dir}")
    return 0


def cmd_evaluate(args) -> int:
    config = _resolve_config(args)
    dataset = _load_data(config)
    run_dir = _make_run_dir(args)
    filter_index = evaluation.build_filter_index(dataset)
    reports = []
    artifacts: dict[str, Path] = {}
    for index, checkpoint in enumerate(args.checkpoint):
        try:
            params = load_params(checkpoint)
        except OSError as exc:
            raise DataError(f"cannot read checkpoint: {exc}") from exc
        report = evaluation.evaluate(params, dataset, args.split,
                                     filter_index)
        reports.append(report)
        suffix = "" if len(args.checkpoint) == 1 else f".run{index}"
        text = evaluation.format_report(report)
        (run_dir / f"report{suffix}.txt").write_text(text, encoding="utf-8")
        evaluation.write_metrics(report, run_dir / f"metrics{suffix}.tsv")
        evaluation.write_rank_dump(report, run_dir / f"ranks{suffix}.tsv")
        artifacts[f"report{suffix}"] = run_dir / f"report{suffix}.txt"
        artifacts[f"metrics{suffix}"] = run_dir / f"metrics{suffix}.tsv"
        artifacts[f"ranks{suffix}"] = run_dir / f"ranks{suffix}.tsv"
        print(text, end="")
    if len(reports) > 1:
        aggregate = evaluation.aggregate_runs(reports)
        evaluation.write_aggregate(aggregate, run_dir / "aggregate.tsv")
        artifacts["aggregate"] = run_dir / "aggregate.tsv"
        for name, (mean, sd) in aggregate.metrics.items():
            print(f"{name.upper():<4} mean {100 * mean:5.1f}  "
                  f"sd {100 * sd:4.1f}  over {len(reports)} runs")
    _write_manifest(run_dir, artifacts)
    return 0


def cmd_build_weights(args) -> int:
    config = _resolve_config(args)
    dataset = _load_data(config)
    run_dir = _make_run_dir(args)
    save_config(config, run_dir / "config.resolved.cfg")
    weights = _build_weights(config, dataset)
    save_weight_table(weights, run_dir / "weights.tsv")
    _write_manifest(run_dir, {
        "config": run_dir / "config.resolved.cfg",
        "weights": run_dir / "weights.tsv",
    })
    print(f"weight table ({weights.provenance.describe()}) in {run_dir}")
    return 0


def cmd_pretrain_submodel(args) -> int:
    config = _resolve_config(args)
    dataset = _load_data(config)
    run_dir = _make_run_dir(args)
    save_config(config, run_dir / "config.resolved.cfg")
    kind = ModelKind.from_string(args.submodel_kind or config.model)
    params, sid = submodel.pretrain_submodel(
        dataset, kind, args.submodel_subsampling, config.dim, config.gamma,
        _train_config(config), aux=_model_aux(config),
        smoothing=config.smoothing, init_epsilon=config.init_epsilon)
    save_params(params, run_dir / "submodel.bin", tag=sid)
    _write_manifest(run_dir, {
        "config": run_dir / "config.resolved.cfg",
        "submodel": run_dir / "submodel.bin",
    })
    print(f"sub-model {sid} in {run_dir}")
    return 0


def cmd_score_triples(args) -> int:
    config = _resolve_config(args)
    dataset = _load_data(config)
    run_dir = _make_run_dir(args)
    try:
        params = load_params(args.checkpoint)
        tag = load_params_tag(args.checkpoint)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from exc
    provenance = tag or Path(args.checkpoint).stem
    scores = submodel.score_training_triples(params, dataset, provenance)
    save_scores(scores, run_dir / "scores.tsv")
    _write_manifest(run_dir, {"scores": run_dir / "scores.tsv"})
    print(f"scored {dataset.num_examples} examples under {provenance}; "
          f"artifacts in {run_dir}")
    return 0


def cmd_weights_report(args) -> int:
    config = _resolve_config(args)
    dataset = _load_data(config)
    run_dir = _make_run_dir(args)
    try:
        cbs = subsampling.load_weight_table(args.cbs_weights)
        mbs = subsampling.load_weight_table(args.mbs_weights)
    except OSError as exc:
        raise DataError(f"cannot read weight table: {exc}") from exc
    for name, table in (("cbs", cbs), ("mbs", mbs)):
        if table.num_examples != dataset.num_examples:
            raise DataError(f"{name} table covers {table.num_examples} "
                            f"examples, dataset expands to "
                            f"{dataset.num_examples}")
    rows = query_appearance_report(dataset, cbs, mbs, args.num_queries,
                                   smoothing=config.smoothing)
    out_path = run_dir / "weights-report.tsv"
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("entity\trelation\tdirection\tcbs_count\t"
                 "cbs_pct\tmbs_pct\n")
        for row in rows:
            fh.write("\t".join(str(v) for v in row) + "\n")
    _write_manifest(run_dir, {"weights_report": out_path})
    print(f"reported {len(rows)} queries; artifacts in {run_dir}")
    return 0


def query_appearance_report(dataset: Dataset, cbs: WeightTable,
                            mbs: WeightTable, n: int,
                            smoothing: float = 0.0) -> list[tuple]:
    """Appearance probabilities of the n lowest-counted queries.

    A query's appearance probability under a weight table is the total
    negative-side weight of its examples as a share of all examples,
    in percent.  Rows come out sorted by counted frequency descending.
    """
    if n < 0:
        raise ConfigError("n must be >= 0")
    freq = count_queries(dataset.train, smoothing=smoothing)
    queries = sorted(freq.keys())
    if n > len(queries):
        print(f"warning: only {len(queries)} distinct queries; "
              f"clamping n={n}", file=sys.stderr)
        n = len(queries)
    mass_cbs: dict = {q: 0.0 for q in queries}
    mass_mbs: dict = {q: 0.0 for q in queries}
    for i, triple in enumerate(dataset.train):
        for direction in (Direction.TAIL_QUERY, Direction.HEAD_QUERY):
            q = query_of(triple, direction)
            eid = 2 * i + int(direction)
            mass_cbs[q] += cbs.b[eid]
            mass_mbs[q] += mbs.b[eid]
    total_cbs = sum(mass_cbs.values())
    total_mbs = sum(mass_mbs.values())
    lowest = sorted(queries,
                    key=lambda q: (query_frequency(freq, q), q))[:n]
    lowest.sort(key=lambda q: (-query_frequency(freq, q), q))
    names = {0: "tail-query", 1: "head-query"}
    return [(q.entity, q.relation, names[int(q.direction)],
             query_frequency(freq, q),
             100.0 * mass_cbs[q] / total_cbs,
             100.0 * mass_mbs[q] / total_mbs) for q in lowest]


def cmd_singleton_stats(args) -> int:
    config = _resolve_config(args)
    dataset = _load_data(config)
    run_dir = _make_run_dir(args)
    if args.stride < 1:
        raise ConfigError("stride must be >= 1")
    rows = singleton_query_stats(dataset.train)[::args.stride]
    names = {0: "tail-query", 1: "head-query"}
    out_path = run_dir / "singleton-stats.tsv"
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("entity\trelation\tdirection\tentity_count\t"
                 "relation_count\n")
        for key, entity_count, relation_count in rows:
            fh.write(f"{key.entity}\t{key.relation}\t"
                     f"{names[int(key.direction)]}\t{entity_count}\t"
                     f"{relation_count}\n")
    _write_manifest(run_dir, {"singleton_stats": out_path})
    print(f"{len(rows)} singleton-query rows; artifacts in {run_dir}")
    return 0


def cmd_sweep(args) -> int:
    config = _resolve_config(args)
    if config.method == "none":
        raise ConfigError("sweep needs a subsampling method "
                          "(base, freq, or uniq)")
    dataset = _load_data(config)
    run_dir = _make_run_dir(args)
    save_config(config, run_dir / "config.resolved.cfg")

    candidates = [_load_scores_checked(path, dataset)
                  for path in args.submodel_scores]
    by_id = {}
    for path, scores in zip(args.submodel_scores, candidates):
        if scores.submodel_id in by_id:
            raise ConfigError(
                f"duplicate sub-model id {scores.submodel_id!r}")
        by_id[scores.submodel_id] = path
    alpha_grid = _parse_grid(args.alpha_grid, subsampling.ALPHA_GRID)
    lambda_grid = _parse_grid(args.lambda_grid, subsampling.LAMBDA_GRID)

    freq = count_queries(dataset.train, smoothing=config.smoothing)
    method = SubsamplingMethod.from_string(config.method)
    cbs = build_cbs_weights(dataset, freq, method)
    kind = ModelKind.from_string(config.model)
    train_config = _train_config(config)
    filter_index = evaluation.build_filter_index(dataset)

    def evaluate_point(scores: SubModelScores, alpha: float,
                       lam: float | None) -> float:
        p = softmax_over_train(scores)
        f_xy, f_x = mbs_frequencies(dataset, p)
        table = build_mbs_weights(f_xy, f_x, method, alpha,
                                  submodel_id=scores.submodel_id)
        if lam is not None:
            table = mix_weights(cbs, table, lam)
        params = init_params(kind, dataset.num_entities,
                             dataset.num_relations, config.dim, config.gamma,
                             config.seed, aux=_model_aux(config),
                             init_epsilon=config.init_epsilon)
        result = training.train(dataset, weights=table, params=params,
                                config=train_config)
        mrr = evaluation.evaluate(result.params, dataset, "valid",
                                  filter_index).mrr
        lam_text = "-" if lam is None else lam
        print(f"  {scores.submodel_id} alpha={alpha} lambda={lam_text} "
              f"valid MRR {mrr:.4f}")
        return mrr

    ledger_path = run_dir / "ledger.tsv"
    selection = submodel.select_submodel(candidates, alpha_grid, lambda_grid,
                                         evaluate_point,
                                         ledger_path=ledger_path)
    best = RunConfig(**vars(config))
    best.subsampling = "mix"
    best.alpha = selection.alpha
    best.lam = selection.lam
    best.submodel_scores = str(by_id[selection.submodel_id])
    save_config(best, run_dir / "best.cfg")
    _write_manifest(run_dir, {
        "config": run_dir / "config.resolved.cfg",
        "ledger": ledger_path,
        "best_config": run_dir / "best.cfg",
    })
    mbs_text = ("forced" if selection.mbs_mrr is None
                else f"MBS valid MRR {selection.mbs_mrr:.4f}")
    print(f"selected sub-model {selection.submodel_id} "
          f"alpha={selection.alpha} ({mbs_text}) "
          f"lambda={selection.lam} (MIX valid MRR {selection.mix_mrr:.4f})")
    print(f"artifacts in {run_dir}")
    return 0


def _parse_grid(text: str | None, default: tuple[float, ...]) -> list[float]:
    if not text:
        return list(default)
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad grid {text!r}") from exc


# ---------------------------------------------------------------------------
# argument wiring


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="config file (key = value sections)")
    sub.add_argument("--run-dir", help="exact artifact directory "
                     "(default: timestamped under --out)")
    sub.add_argument("--out", default="runs",
                     help="base directory for timestamped run dirs")
    sub.add_argument("--data", help="dataset directory with "
                     "train.txt/valid.txt/test.txt")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--smoothing", type=float)


def _add_model_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--model",
                     choices=[kind.value for kind in ModelKind])
    sub.add_argument("--dim", type=int)
    sub.add_argument("--gamma", type=float)
    sub.add_argument("--norm-p", dest="norm_p", type=float)
    sub.add_argument("--phase-weight", dest="phase_weight", type=float)
    sub.add_argument("--init-epsilon", dest="init_epsilon", type=float)


def _add_train_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--nu", type=int)
    sub.add_argument("--batch-size", dest="batch_size", type=int)
    sub.add_argument("--steps", type=int)
    sub.add_argument("--learning-rate", dest="learning_rate", type=float)
    sub.add_argument("--optimizer", choices=["adam", "sgd"])
    sub.add_argument("--adversarial-beta", dest="adversarial_beta",
                     type=float)
    sub.add_argument("--valid-every", dest="valid_every", type=int)


def _add_subsampling_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--subsampling",
                     choices=["none", "cbs", "mbs", "mix"])
    sub.add_argument("--method", choices=["none", "base", "freq", "uniq"])
    sub.add_argument("--alpha", type=float)
    sub.add_argument("--lambda", dest="lam", type=float)
    sub.add_argument("--submodel-scores", dest="submodel_scores")
    sub.add_argument("--mbs-query-mass", dest="mbs_query_mass",
                     choices=["observed", "all_candidates"])
    sub.add_argument("--submodel-checkpoint", dest="submodel_checkpoint")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kgesub",
                     description="Knowledge-graph embedding training with "
                                 "pluggable subsampling")
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("train", parents=[], help="build weights and "
                              "train a model")
    _add_common(sub)
    _add_model_flags(sub)
    _add_train_flags(sub)
    _add_subsampling_flags(sub)
    sub.set_defaults(func=cmd_train)

    sub = commands.add_parser("evaluate", help="filtered link-prediction "
                              "metrics of one or more checkpoints")
    _add_common(sub)
    sub.add_argument("--checkpoint", required=True, nargs="+",
                     help="one checkpoint per trained seed; several "
                          "produce a mean/sd aggregate")
    sub.add_argument("--split", choices=["valid", "test"], default="test")
    sub.set_defaults(func=cmd_evaluate)

    sub = commands.add_parser("build-weights", help="write a weight table "
                              "without training")
    _add_common(sub)
    _add_subsampling_flags(sub)
    sub.set_defaults(func=cmd_build_weights)

    sub = commands.add_parser("pretrain-submodel", help="train a sub-model "
                              "candidate for model-based subsampling")
    _add_common(sub)
    _add_model_flags(sub)
    _add_train_flags(sub)
    sub.add_argument("--submodel-kind",
                     choices=[kind.value for kind in ModelKind])
    sub.add_argument("--submodel-subsampling",
                     choices=list(submodel.SUBMODEL_SUBSAMPLING),
                     default="none")
    sub.set_defaults(func=cmd_pretrain_submodel)

    sub = commands.add_parser("score-triples", help="score the training "
                              "set under a frozen sub-model")
    _add_common(sub)
    sub.add_argument("--checkpoint", required=True)
    sub.set_defaults(func=cmd_score_triples)

    sub = commands.add_parser("weights-report", help="CBS vs MBS appearance "
                              "probabilities of the rarest queries")
    _add_common(sub)
    sub.add_argument("--cbs-weights", required=True)
    sub.add_argument("--mbs-weights", required=True)
    sub.add_argument("-n", "--num-queries", dest="num_queries", type=int,
                     default=100)
    sub.set_defaults(func=cmd_weights_report)

    sub = commands.add_parser("singleton-stats", help="entity/relation "
                              "frequencies of queries seen once")
    _add_common(sub)
    sub.add_argument("--stride", type=int, default=1)
    sub.set_defaults(func=cmd_singleton_stats)

    sub = commands.add_parser("sweep", help="two-stage sub-model/alpha/"
                              "lambda selection on validation MRR")
    _add_common(sub)
    _add_model_flags(sub)
    _add_train_flags(sub)
    sub.add_argument("--method", choices=["base", "freq", "uniq"])
    sub.add_argument("--submodel-scores", nargs="+", required=True)
    sub.add_argument("--alpha-grid", help="comma-separated, default "
                     "2.0,1.0,0.5,0.1,0.05,0.01")
    sub.add_argument("--lambda-grid", help="comma-separated, default "
                     "0.1,0.3,0.5,0.7,0.9")
    sub.set_defaults(func=cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (DataError, KgesubError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
