"""``lsrpca`` command line: ingest, normalize, fit, project, compare, plotdata, oracle."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .errors import ConfigError, LsrpcaError
from .evaluate import LabeledDataset, EvalReport, load_labels, make_synthetic, run_comparison, save_labels, LABELS_FILE
from .mmio import read_csv, read_mtx
from .normalize import MODES as NORM_MODES, NormStats, apply_norm, fit_norm, infer_column_kinds
from .rpca import ProjectionModel, baseline_rpca, exact_pca, ls_rpca, parse_oversample, project, resolve_kbar, rp_model
from .store import SliceStore, partition, scratch_dir

log = logging.getLogger("lsrpca")

FIT_METHODS = {"rp": "rp", "lsrpca": "ls_rpca", "baseline": "rpca_baseline", "exact": "exact_pca"}


class _Phase:
    """Log wall time (and bytes read from ``store``, if given) for one phase."""

    def __init__(self, name, store=None):
        self.name, self.store = name, store

    def __enter__(self):
        self.t0 = time.perf_counter()
        self.b0 = self.store.bytes_read if self.store is not None else 0
        return self

    def __exit__(self, *exc):
        dt = time.perf_counter() - self.t0
        if self.store is not None:
            log.info("%s: %.3fs, %d bytes read", self.name, dt, self.store.bytes_read - self.b0)
        else:
            log.info("%s: %.3fs", self.name, dt)
        return False


def _synthetic_spec(text):
    """``n,p,rank,classes,noise_sd,seed``"""
    parts = text.split(",")
    if len(parts) != 6:
        raise argparse.ArgumentTypeError("expected n,p,rank,classes,noise_sd,seed")
    try:
        n, p, rank, classes, seed = (int(parts[i]) for i in (0, 1, 2, 3, 5))
        noise = float(parts[4])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return n, p, rank, classes, noise, seed


def cmd_ingest(args) -> int:
    out = Path(args.output)
    with _Phase("ingest"):
        if args.synthetic:
            n, p, rank, classes, noise, seed = args.synthetic
            x, labels = make_synthetic(n, p, rank, classes, noise, seed)
        else:
            fmt = args.format
            if fmt == "auto":
                fmt = "csv" if str(args.input).lower().endswith(".csv") else "mtx"
            x = read_mtx(args.input) if fmt == "mtx" else read_csv(args.input, header=args.header)
            labels = load_labels(args.labels) if args.labels else None
        rows = x.shape[0]
        store = partition(x, args.slice_rows or max(rows, 1), out, kind=args.kind)
        if labels is not None:
            if labels.size != rows:
                raise ConfigError(f"{labels.size} labels for {rows} rows")
            save_labels(store.path / LABELS_FILE, labels)
    print(f"{store.path}: {store.n_total} x {store.cols} {store.storage_kind}, {store.n_slices} slices")
    return 0


def cmd_normalize(args) -> int:
    store = SliceStore.open(args.input)
    if args.stats:
        stats = NormStats.load(args.stats)
    else:
        kinds = infer_column_kinds(store) if args.column_kinds == "infer" else None
        with _Phase("fit_norm", store):
            stats = fit_norm(store, args.mode, kinds)
    with _Phase("apply_norm", store):
        out = apply_norm(store, stats, args.output, max_rows=args.slice_rows)
    stats.save(out.path)
    labels = store.path / LABELS_FILE
    if labels.exists():
        (out.path / LABELS_FILE).write_bytes(labels.read_bytes())
    print(f"{out.path}: {out.n_total} x {out.cols} {out.storage_kind} ({stats.mode} normalization)")
    return 0


def cmd_fit(args) -> int:
    store = SliceStore.open(args.input)
    method = FIT_METHODS[args.method]
    mode = parse_oversample(args.oversample)
    kbar = resolve_kbar(args.k, mode)
    store.reset_counters()
    with _Phase(f"fit {method}", store):
        if method == "rp":
            model = rp_model(store.cols, args.k, args.seed)
        elif method == "ls_rpca":
            dump = None
            if args.dump_r:
                def dump(r):
                    np.save(args.dump_r, r)
            model = ls_rpca(store, args.k, kbar, args.seed, mode, on_final_r=dump)
        elif method == "rpca_baseline":
            model = baseline_rpca(store.to_matrix(), args.k, kbar, args.seed, mode)
        else:
            model = exact_pca(store, args.k)
    norm = store.path / "norm.json"
    if norm.exists():
        model.norm_stats = str(norm.resolve())
    model.save(args.output)
    log.info("slice reads: %s", list(store.read_counts))
    print(f"{args.output}: {method} model, P={model.p}, K={model.k}, K-bar={model.kbar}")
    return 0


def cmd_project(args) -> int:
    store = SliceStore.open(args.input)
    model = ProjectionModel.load(args.model)
    with _Phase("project", store):
        out = project(store, model, args.output, max_rows=args.slice_rows)
    labels = store.path / LABELS_FILE
    if labels.exists():
        (out.path / LABELS_FILE).write_bytes(labels.read_bytes())
    print(f"{out.path}: {out.n_total} x {out.cols}")
    return 0


def _load_dataset(cfg, work: Path) -> LabeledDataset:
    if cfg.source == "synthetic":
        s = cfg.synthetic
        x, labels = make_synthetic(s.n, s.p, s.rank, s.n_classes, s.noise_sd, s.seed)
        return LabeledDataset.from_arrays(x, labels, work / "data", cfg.slice_rows)
    if cfg.source == "store":
        return LabeledDataset.open(cfg.path, cfg.labels)
    x = read_mtx(cfg.path) if cfg.source == "mtx" else read_csv(cfg.path)
    labels = load_labels(cfg.labels)
    return LabeledDataset.from_arrays(x, labels, work / "data", cfg.slice_rows)


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.output) if args.output else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory(prefix="lsrpca-data-", dir=scratch_dir()) as work:
        with _Phase("load data"):
            data = _load_dataset(cfg, Path(work))
        if max(cfg.ks) > data.features.cols:
            raise ConfigError(f"K={max(cfg.ks)} exceeds P={data.features.cols}")
        with _Phase("compare"):
            report = run_comparison(data, **cfg.sweep_kwargs(), scratch=work)
    report.to_csv(out / "report.csv")
    report.to_json(out / "report.json")
    failed = sum(e.status != "ok" for e in report.entries)
    print(f"{out / 'report.csv'}: {len(report.entries)} cells, {failed} failed")
    return 0


def cmd_plotdata(args) -> int:
    report = EvalReport.from_json(args.report)
    rows = report.plot_table(args.metric)
    fh = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "method", f"mean_{args.metric}", f"sd_{args.metric}", "error_reduction_pct"])
        for r in rows:
            red = "" if r["error_reduction_pct"] is None else f"{r['error_reduction_pct']:.2f}"
            w.writerow([r["k"], r["method"], f"{r['mean']:.6f}", f"{r['sd']:.6f}", red])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_oracle(args) -> int:
    from .oracle import run_oracle

    results = run_oracle(n_trials=args.trials, seed=args.seed)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} trial {r.trial:2d} slices={len(r.row_counts)} "
              f"max|dV|={r.v_max_abs:.2e} max rel d(sigma)={r.sigma_max_rel:.2e}")
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} trials agree")
    return 1 if n_fail else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lsrpca", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="-v for timings, -vv for debug")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert a matrix file or synthetic spec into a slice store")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="Matrix Market (.mtx) or CSV file")
    src.add_argument("--synthetic", type=_synthetic_spec, metavar="N,P,RANK,CLASSES,NOISE,SEED")
    p.add_argument("--format", choices=["auto", "mtx", "csv"], default="auto")
    p.add_argument("--header", action="store_true", help="CSV has a header row")
    p.add_argument("--labels", help="label file (one integer per line)")
    p.add_argument("--kind", choices=["dense", "sparse"], help="storage kind (default: as read)")
    p.add_argument("--slice-rows", type=int, default=1024)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("normalize", help="column-standardize a store")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--mode", choices=NORM_MODES, default="dense")
    p.add_argument("--column-kinds", choices=["continuous", "infer"], default="continuous")
    p.add_argument("--stats", help="apply previously fitted statistics instead of fitting")
    p.add_argument("--slice-rows", type=int)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("fit", help="fit a projection model")
    p.add_argument("--method", choices=sorted(FIT_METHODS), default="lsrpca")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--oversample", default="minimal", help="minimal | double | fixed:N")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--dump-r", help="save the final triangular factor (.npy)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("project", help="apply a projection model to a store")
    p.add_argument("--input", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--slice-rows", type=int)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("compare", help="run an RP vs randomized-PCA sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--output", help="override [output] dir")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plotdata", help="curve table (K, method, mean, sd, error reduction %%)")
    p.add_argument("--report", required=True, help="report.json from compare")
    p.add_argument("--metric", choices=["log_loss", "error_rate"], default="log_loss")
    p.add_argument("--output")
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("oracle", help="LS-RPCA vs in-core randomized PCA equivalence suite")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except LsrpcaError as exc:
        print(f"lsrpca {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (json.JSONDecodeError, KeyError) as exc:
        print(f"lsrpca {args.command}: error: malformed input: {exc}", file=sys.stderr)
        return 7


if __name__ == "__main__":
    sys.exit(main())
