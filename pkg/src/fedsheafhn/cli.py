"""Command-line entry point: ``fedsheafhn {run,sweep,onboard,gradcheck,partition}``."""
from __future__ import annotations

import argparse
import itertools
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checks, config
from .errors import ConfigError, FedSheafError, NumericError
from .graphdata import (PartitionSpec, generate_synthetic, heterogeneity, load_dataset, partition,
                        save_partition)
from .orchestrator import (Federation, build_datasets, load_state, onboard_all, save_state, split_new_clients,
                           synthetic_spec)

log = logging.getLogger("fedsheafhn")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3
CSV_HEADER = "round,client_id,train_loss,val_acc,test_acc,fed_acc\n"
AXIS_ALIASES = {"tau": "attack_tau", "ratio": "attack_ratio", "kind": "attack_kind", "epochs": "local_epochs"}


def _num(x):
    if x is None:
        return ""
    return "nan" if np.isnan(x) else f"{x:.6f}"


def _write(path, text):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


@dataclass
class RunResult:
    out: Path
    reports: list
    federation: Federation

    @property
    def final(self):
        return self.reports[-1]

    @property
    def best(self):
        return max(self.reports, key=lambda r: (r.federated_accuracy, -r.round))


def rounds_csv(reports):
    lines = [CSV_HEADER]
    for r in reports:
        lines.append(f"{r.round},-1,{_num(r.mean('train_loss'))},{_num(r.mean('val_acc'))},"
                     f"{_num(r.mean('test_acc'))},{_num(r.federated_accuracy)}\n")
    return "".join(lines)


def clients_csv(reports):
    lines = [CSV_HEADER]
    for r in reports:
        for m in r.clients:
            lines.append(f"{r.round},{m.cid},{_num(m.train_loss)},{_num(m.val_acc)},{_num(m.test_acc)},"
                         f"{_num(r.federated_accuracy)}\n")
    return "".join(lines)


def _clients_for(cfg):
    """Datasets and ids of the clients that take part in training."""
    datasets = build_datasets(cfg)
    train_ids, _ = split_new_clients(len(datasets), cfg.new_ratio, cfg.seed)
    return datasets, train_ids


def execute_run(cfg: config.RunConfig, out=None):
    """Warm-up plus ``cfg.rounds`` rounds; writes the run directory."""
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "config.txt", cfg.to_text())
    datasets, train_ids = _clients_for(cfg)
    fed = Federation(cfg, [datasets[i] for i in train_ids], client_ids=train_ids)
    reports = fed.run()
    result = RunResult(out, reports, fed)
    _write(out / "rounds.csv", rounds_csv(reports))
    _write(out / "clients.csv", clients_csv(reports))
    summary = [
        f"method = {cfg.method}",
        f"rounds = {len(reports) - 1}",
        f"final_fed_acc = {_num(result.final.federated_accuracy)}",
        f"best_round = {result.best.round}",
        f"best_fed_acc = {_num(result.best.federated_accuracy)}",
    ]
    if len(fed.malicious):
        summary.append(f"honest_fed_acc = {_num(result.final.honest_accuracy)}")
        summary.append("malicious_clients = " + " ".join(str(fed.clients[i].cid) for i in fed.malicious))
    _write(out / "summary.txt", "\n".join(summary) + "\n")
    _write(out / "timing.txt", "".join(f"{r.round}\t{r.wall_time:.6f}\n" for r in reports))
    if fed.server is not None:
        save_state(out / "state.npz", fed)
    return result


def _axes(specs):
    if not specs:
        raise ConfigError("sweep needs at least one --axis key=v1,v2,...")
    axes = []
    for spec in specs:
        if "=" not in spec:
            raise ConfigError(f"axis {spec!r} must look like key=v1,v2")
        key, raw = spec.split("=", 1)
        key = AXIS_ALIASES.get(key.strip(), key.strip())
        values = [v for v in raw.split(",") if v.strip()]
        if not values:
            raise ConfigError(f"axis {key} has an empty value list")
        axes.append((key, [config.parse_value(key, v) for v in values]))
    return axes


def _sweep_job(args):
    cfg, out = args
    result = execute_run(cfg, out)
    return (_num(result.final.federated_accuracy), _num(result.final.honest_accuracy), result.best.round,
            _num(result.best.federated_accuracy))


def execute_sweep(base: config.RunConfig, axis_specs, out=None, repeats=1, jobs=1):
    """Cartesian grid over the axes; every cell is run with seeds seed..seed+repeats-1."""
    axes = _axes(axis_specs)
    out = Path(out or base.out)
    out.mkdir(parents=True, exist_ok=True)
    keys = [k for k, _ in axes]
    tasks, rows = [], []
    for i, combo in enumerate(itertools.product(*(v for _, v in axes))):
        for r in range(repeats):
            cfg = base.replace(**dict(zip(keys, combo)), seed=base.seed + r).validate()
            name = f"{len(tasks):03d}_" + "_".join(f"{k}={config._format(v)}" for k, v in zip(keys, combo))
            tasks.append((cfg, out / name))
            rows.append((len(rows), cfg.seed, combo))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_sweep_job, tasks))
    else:
        results = [_sweep_job(t) for t in tasks]
    lines = [",".join(["index", "seed", *keys, "final_fed_acc", "honest_fed_acc", "best_round", "best_fed_acc"]) + "\n"]
    for (idx, seed, combo), res in zip(rows, results):
        lines.append(",".join([str(idx), str(seed), *(config._format(v) for v in combo), *map(str, res)]) + "\n")
    _write(out / "sweep.csv", "".join(lines))
    return out / "sweep.csv"


def execute_onboard(cfg: config.RunConfig, state=None, out=None):
    """Train (or restore) the server on the train group and onboard the rest."""
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.method != "fedsheafhn":
        raise ConfigError("onboarding needs method = fedsheafhn")
    datasets, train_ids = _clients_for(cfg)
    new_ids = [i for i in range(len(datasets)) if i not in set(train_ids)]
    if state is None:
        result = execute_run(cfg, out)
        fed, last = result.federation, result.final
    else:
        if not Path(state).is_file():
            raise ConfigError(f"state file {state} does not exist")
        _write(out / "config.txt", cfg.to_text())
        fed = Federation(cfg, [datasets[i] for i in train_ids], client_ids=train_ids)
        load_state(state, fed)
        last = fed.report(fed.server.round)
    report = onboard_all(fed, datasets, new_ids, last)
    lines = ["group,client_id,test_acc\n"]
    lines += [f"train,{cid},{_num(a)}\n" for cid, a in zip(report.train_ids, report.train_accs)]
    lines += [f"new,{cid},{_num(a)}\n" for cid, a in zip(report.new_ids, report.new_accs)]
    _write(out / "onboard.csv", "".join(lines))
    _write(out / "onboard_summary.txt",
           f"train_clients = {len(report.train_ids)}\nnew_clients = {len(report.new_ids)}\n"
           f"train_mean = {_num(report.train_mean)}\n"
           f"new_mean = {_num(report.new_mean) if report.new_ids else ''}\n"
           f"round_trips_per_new_client = {report.round_trips}\n")
    return report


def execute_partition(cfg: config.RunConfig, out=None):
    out = Path(out or cfg.out)
    if cfg.dataset_path:
        graph, features, labels = load_dataset(cfg.dataset_path)
    else:
        graph, features, labels = generate_synthetic(synthetic_spec(cfg))
    spec = PartitionSpec(cfg.scenario, cfg.num_parts, cfg.samples_per_part, cfg.sample_fraction, cfg.seed)
    datasets = partition(graph, features, labels, spec)
    save_partition(out, datasets)
    het = heterogeneity(datasets) if len(datasets) > 1 else 0.0
    _write(out / "partition.txt", f"clients = {len(datasets)}\nheterogeneity = {het:.6f}\n"
           + "".join(f"client_{i:03d}_nodes = {ds.n}\n" for i, ds in enumerate(datasets)))
    return datasets


def execute_gradcheck(seeds=5, corrupt=None, stream=None):
    """Run every suite; prints one line per suite.  Returns True iff all pass."""
    stream = stream or sys.stdout
    if corrupt:
        with checks.corrupted(corrupt):
            results, seconds = checks.run_suites(seeds)
    else:
        results, seconds = checks.run_suites(seeds)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        detail = f"failing ops: {', '.join(r.failing)}" if r.failing else f"worst: {r.worst}"
        print(f"{r.name:<18} max_rel_err={r.max_error:.3e}  {status}  ({detail})", file=stream)
    ok = all(r.passed for r in results)
    print(f"{len(results)} suites, {seeds} seeds each, {seconds:.1f} s: {'PASS' if ok else 'FAIL'}", file=stream)
    return ok, results, seconds


def _parser():
    parser = argparse.ArgumentParser(prog="fedsheafhn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("run", help="train one configuration"))
    sweep = sub.add_parser("sweep", help="grid of runs")
    common(sweep)
    sweep.add_argument("--axis", action="append", default=[], metavar="KEY=V1,V2", help="swept key and values")
    sweep.add_argument("--repeats", type=int, default=1, help="seeds per grid cell")
    sweep.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    onboard = sub.add_parser("onboard", help="onboard held-out clients")
    common(onboard)
    onboard.add_argument("--state", help="saved server state (state.npz from a run)")
    onboard.add_argument("--new-ratio", type=float, help="fraction of clients held out")
    grad = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    grad.add_argument("--seeds", type=int, default=5)
    grad.add_argument("--corrupt", metavar="OP", help="scale one backward rule (negative control)")
    common(sub.add_parser("partition", help="partition a dataset into client directories"))
    return parser


def _config(args):
    kwargs = {}
    if args.seed is not None:
        kwargs["seed"] = args.seed
    if args.out is not None:
        kwargs["out"] = args.out
    if getattr(args, "new_ratio", None) is not None:
        kwargs["new_ratio"] = args.new_ratio
    return config.load(args.config, args.set, **kwargs)


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gradcheck":
            ok, _, _ = execute_gradcheck(args.seeds, args.corrupt)
            return EXIT_OK if ok else EXIT_CHECK
        cfg = _config(args)
        start = time.perf_counter()
        if args.command == "run":
            result = execute_run(cfg)
            print(f"final_fed_acc = {result.final.federated_accuracy:.4f} (best {result.best.federated_accuracy:.4f}"
                  f" at round {result.best.round}); wrote {result.out}")
        elif args.command == "sweep":
            if args.repeats < 1 or args.jobs < 1:
                raise ConfigError("--repeats and --jobs must be >= 1")
            path = execute_sweep(cfg, args.axis, repeats=args.repeats, jobs=args.jobs)
            print(f"wrote {path}")
        elif args.command == "onboard":
            report = execute_onboard(cfg, args.state)
            new = f"{report.new_mean:.4f}" if report.new_ids else "-"
            print(f"train_mean = {report.train_mean:.4f}  new_mean = {new}  "
                  f"({len(report.new_ids)} new clients, {report.round_trips} round trip each)")
        elif args.command == "partition":
            datasets = execute_partition(cfg)
            print(f"wrote {len(datasets)} clients to {cfg.out}")
        log.info("%s finished in %.1f s", args.command, time.perf_counter() - start)
        return EXIT_OK
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FedSheafError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
