"""Command-line harness: data generation, training, inference and experiment sweeps.

Exit codes: 0 success or a decision, 2 inconclusive ("?"), 1 error.
Logs go to stderr; reports go to ``--out`` (or stdout when omitted).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import dataio, experiments, infer, lica, mosaic, synth
from .indep import DindepKind
from .nn import TclModel

logger = logging.getLogger("causal_mosaic")

EXIT_OK, EXIT_ERROR, EXIT_INCONCLUSIVE = 0, 1, 2

TCEP_HELP = (
    "The Tuebingen cause-effect pairs can be downloaded from "
    "https://webdav.tuebingen.mpg.de/cause-effect/ (pairs.zip). Unpack it so the "
    "directory holds pair0001.txt ... and pairmeta.txt, then pass it with --data."
)


class _Parser(argparse.ArgumentParser):
    # usage errors must not collide with the "inconclusive" exit code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) or math.isinf(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def dump_report(report: dict) -> str:
    """Canonical JSON: sorted keys, NaN as null, trailing newline."""
    return json.dumps(_jsonable(report), sort_keys=True, indent=1) + "\n"


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def _configs(args):
    cfg = dataio.load_config(args.config) if args.config else dataio.load_config()
    if args.seed is not None:
        cfg["train"] = dataclasses.replace(cfg["train"], seed=args.seed)
        cfg["ensemble"] = dataclasses.replace(cfg["ensemble"], seed=args.seed)
    return cfg


def _load_labeled(directory):
    directory = Path(directory)
    if not directory.is_dir() or not (directory / dataio.META_FILE).exists():
        raise FileNotFoundError(f"no benchmark found at {directory}. {TCEP_HELP}")
    records = dataio.bivariate(dataio.load_tcep(directory))
    if not records:
        raise ValueError(f"{directory}: no bivariate pairs")
    return records


# ---------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    seed = 0 if args.seed is None else args.seed
    net = synth.sample_mixing(experiments.derive_seed(seed, 0), depth=args.depth,
                              triangular=not args.confounded)
    attempt = 0
    while True:
        spec = synth.sample_scales(args.pairs, experiments.derive_seed(seed, 1, attempt))
        if args.pairs < 3 or synth.check_rank(spec):
            break
        attempt += 1
    pairs = synth.generate_pairs(net, spec, args.n, seed=experiments.derive_seed(seed, 2),
                                 orientation=args.orientation)
    synth.export_pairs(pairs, args.out, {"seed": seed, "n_per_pair": args.n, "depth": args.depth,
                                         "confounded": bool(args.confounded),
                                         "orientation": args.orientation})
    logger.info("wrote %d pairs to %s", len(pairs), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _configs(args)
    records = _load_labeled(args.data)
    model = infer.fit_aligned([r.data for r in records], [r.cause for r in records],
                              cfg["mlp"], cfg["train"], pair_ids=[r.pair_id for r in records])
    dataio.save_model(args.out, model)
    logger.info("trained on %d pairs, train accuracy %.4f -> %s", len(records),
                model.train_accuracy, args.out)
    return EXIT_OK


def infer_with_model(model: TclModel, data: np.ndarray, rule: str, measure: str,
                     alpha: float = 0.05) -> infer.DirectionDecision:
    if rule == "thresholded":
        comps = [lica.hica(model, data, 0), lica.hica(model, data, 1)]
        return infer.infer_thresholded(data, comps, alpha)
    return infer.infer_pair(model, data, rule, measure)


def cmd_infer(args) -> int:
    cfg = _configs(args)
    data = dataio.read_pair_file(args.data)
    if args.pool:
        pool = dataio.load_pool(args.pool)
        ens = cfg["ensemble"]
        if args.rule != "rule1" or args.measure != "dcor":
            ens = dataclasses.replace(ens, rule=args.rule, measure=args.measure)
        result = mosaic.decide_new_pair(pool, data, ens, pair_id=Path(args.data).name)
        payload = {"cause": result.cause_index, "decision": result.decision, "score": result.score,
                   "tesserae": result.tessera_ids, "w_n": result.w_n, "w_ns": result.w_ns,
                   "flags": list(result.flags)}
        line = f"{Path(args.data).name}\tmosaic-{ens.scoring}\t{result.decision}\t{result.score:.10g}"
        cause = result.cause_index
    else:
        model = dataio.load_model(args.model)
        d = infer_with_model(model, data, args.rule, args.measure, cfg["experiment"].alpha)
        payload = {"cause": d.cause_index, "decision": d.label, "score": d.margin, "rule": d.rule,
                   "tie": d.tie, "flags": list(d.flags),
                   "evidence": [e._asdict() for e in d.evidence]}
        line = dataio.format_decision_line(Path(args.data).name, d)
        cause = d.cause_index
    print(line)
    if args.out:
        _emit(dump_report(payload), args.out)
    return EXIT_INCONCLUSIVE if cause is None else EXIT_OK


def write_pool_reports(pool: mosaic.TesseraPool, path: Path) -> None:
    """Manifest and accuracy tables next to a saved pool."""
    lines = ["# model\ttraining_pairs\ttacc\tvacc_all\tcacc\tseed\thyperparameters"]
    for n, rec in enumerate(pool.manifest):
        hp = rec.get("hyperparameters") or {}
        seed = hp.get("seed", "")
        tacc = pool.taccs[n] if pool.taccs is not None else float("nan")
        vall = pool.vacc_all[n] if pool.vacc_all is not None else float("nan")
        lines.append(f"{path.name}#m{n}\t{','.join(map(str, pool.training_sets[n]))}\t"
                     f"{tacc:.6g}\t{vall:.6g}\t{pool.cacc[n]:.6g}\t{seed}\t"
                     f"{json.dumps(_jsonable(hp), sort_keys=True)}")
    path.with_name(path.name + ".manifest.tsv").write_text("\n".join(lines) + "\n")
    if pool.vaccs is not None:
        head = "# model\t" + "\t".join(str(p) for p in pool.pair_ids)
        rows = [f"m{n}\t" + "\t".join(f"{v:.6g}" for v in row) for n, row in enumerate(pool.vaccs)]
        path.with_name(path.name + ".vacc.tsv").write_text("\n".join([head] + rows) + "\n")


def cmd_ensemble(args) -> int:
    cfg = _configs(args)
    records = _load_labeled(args.data)
    ens = cfg["ensemble"]
    pool = mosaic.random_training(records, ens, jobs=args.jobs)
    pool = mosaic.evaluate_pool(records, pool, ens, jobs=args.jobs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataio.save_pool(out, pool)
    write_pool_reports(pool, out)
    logger.info("pool of %d models (%d null) -> %s", len(pool.models),
                sum(m is None for m in pool.models), out)
    return EXIT_OK


def cmd_experiment_artificial(args) -> int:
    cfg = _configs(args)
    seed = 0 if args.seed is None else args.seed
    report = experiments.experiment_artificial(cfg["experiment"], cfg["mlp"], cfg["train"],
                                               seed=seed, jobs=args.jobs)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(dump_report(report))
        (out / "plot.tsv").write_text(experiments.plot_data(report))
        logger.info("report written to %s", out)
    else:
        sys.stdout.write(dump_report(report))
    return EXIT_OK


def cmd_experiment_tcep(args) -> int:
    cfg = _configs(args)
    records = _load_labeled(args.data)
    report, pool = experiments.experiment_tcep(records, cfg["ensemble"], jobs=args.jobs,
                                               dataset_hash=dataio.content_hash(args.data))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(dump_report(report))
        lines = ["# pair_id\ttruth\tdecision\tscore\tn_tesserae\tflags"]
        lines += [f"{d['pair_id']}\t{d['truth']}\t{d['decision']}\t{d['score']:.10g}\t"
                  f"{d['n_tesserae']}\t{','.join(d['flags'])}" for d in report["decisions"]]
        (out / "decisions.tsv").write_text("\n".join(lines) + "\n")
        dataio.save_pool(out / "pool.cmosaic", pool)
        write_pool_reports(pool, out / "pool.cmosaic")
        logger.info("report written to %s", out)
    else:
        sys.stdout.write(dump_report(report))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="causal-mosaic", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, jobs=False):
        sp.add_argument("--config", help="INI file with [mlp] [train] [ensemble] [experiment]")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        if jobs:
            sp.add_argument("--jobs", type=int, default=1, help="worker processes")

    sp = sub.add_parser("gen", help="generate synthetic pairs in benchmark layout")
    common(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--pairs", type=int, default=10)
    sp.add_argument("--n", type=int, default=512, help="samples per pair")
    sp.add_argument("--depth", type=int, default=5, help="mixing layers")
    sp.add_argument("--confounded", action="store_true", help="fully connected mixing")
    sp.add_argument("--orientation", choices=("random", "cause_first"), default="random")
    sp.set_defaults(fn=cmd_gen)

    sp = sub.add_parser("train", help="train one TCL + hICA model on labeled pairs")
    common(sp)
    sp.add_argument("--data", required=True, help="benchmark-layout directory")
    sp.add_argument("--out", required=True, help="model file")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("infer", help="infer the direction of one two-column data file")
    common(sp)
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--model")
    src.add_argument("--pool")
    sp.add_argument("--data", required=True, help="two-column text file")
    sp.add_argument("--rule", choices=("rule1", "rule2", "thresholded"), default="rule1")
    sp.add_argument("--measure", choices=[k.value for k in DindepKind], default="dcor")
    sp.add_argument("--out", help="JSON decision file")
    sp.set_defaults(fn=cmd_infer)

    sp = sub.add_parser("ensemble", help="train and evaluate a mosaic pool")
    common(sp, jobs=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="pool file")
    sp.set_defaults(fn=cmd_ensemble)

    sp = sub.add_parser("experiment-artificial", help="synthetic accuracy sweep")
    common(sp, jobs=True)
    sp.add_argument("--out", help="output directory (report.json, plot.tsv)")
    sp.set_defaults(fn=cmd_experiment_artificial)

    sp = sub.add_parser("experiment-tcep", help="mosaic pipeline on a benchmark directory")
    common(sp, jobs=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(fn=cmd_experiment_tcep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.fn(args)
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
