"""RP vs LS-RPCA curve on synthetic data: mean +- sd log-loss and error rate per K.

    python3 scripts/trend_sweep.py --n 5000 --p 400 --rank 60 --seeds 0 1 2 3 4
"""
import argparse
import tempfile
import time

from lsrpca.evaluate import LabeledDataset, make_synthetic, run_comparison


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--p", type=int, default=400)
    ap.add_argument("--rank", type=int, default=60)
    ap.add_argument("--classes", type=int, default=2)
    ap.add_argument("--noise", type=float, default=0.3)
    ap.add_argument("--ks", type=int, nargs="+", default=[5, 10, 20, 40])
    ap.add_argument("--oversampling", nargs="+", default=["minimal"])
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--slice-rows", type=int, default=1000)
    ap.add_argument("--csv", help="write the per-cell report here")
    args = ap.parse_args()

    t0 = time.perf_counter()
    reports = []
    with tempfile.TemporaryDirectory() as work:
        for s in args.seeds:
            x, y = make_synthetic(args.n, args.p, args.rank, args.classes, args.noise, seed=s)
            data = LabeledDataset.from_arrays(x, y, f"{work}/d{s}", args.slice_rows)
            reports.append(run_comparison(
                data, args.ks, ["rp", "ls_rpca"], args.oversampling, n_folds=args.folds, seeds=[s], root_seed=s,
            ))
    report = reports[0]
    for r in reports[1:]:
        report.entries.extend(r.entries)
    print(f"{'K':>4} {'method':<20} {'log_loss':>18} {'error_rate':>18} {'reduction':>10}")
    red = {(r["k"], r["method"]): r["error_reduction_pct"] for r in report.plot_table("error_rate")}
    for a in report.aggregates():
        label = a["method"] if a["oversampling_mode"] == "-" else f"{a['method']}[{a['oversampling_mode']}]"
        pct = red.get((a["k"], label))
        print(f"{a['k']:>4} {label:<20} {a['mean_log_loss']:.4f} +- {a['sd_log_loss']:.4f}"
              f" {a['mean_error_rate']:.4f} +- {a['sd_error_rate']:.4f}"
              f" {'' if pct is None else f'{pct:9.1f}%'}")
    if args.csv:
        report.to_csv(args.csv)
    print(f"{len(report.entries)} cells in {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
