"""Does fitting the projection on every row beat a small row subsample?

Same folds, normalization and classifier for both arms; only the number of rows
that reach ``ls_rpca`` differs.

    python3 scripts/large_sample.py --seeds 0 1 2 3 4
"""
import argparse
import tempfile
import time

import numpy as np

from lsrpca.evaluate import LabeledDataset, make_synthetic, run_comparison


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--p", type=int, default=400)
    ap.add_argument("--rank", type=int, default=60)
    ap.add_argument("--noise", type=float, default=0.3)
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--subsample", type=int, default=2000)
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--slice-rows", type=int, default=2000)
    ap.add_argument("--shared-omega", action="store_true", help="use the same sketch seed for both arms")
    args = ap.parse_args()

    wins = 0
    t0 = time.perf_counter()
    with tempfile.TemporaryDirectory() as work:
        for s in args.seeds:
            x, y = make_synthetic(args.n, args.p, args.rank, 2, args.noise, seed=s)
            data = LabeledDataset.from_arrays(x, y, f"{work}/d{s}", args.slice_rows)
            res = {}
            for name, rows in (("all", None), ("sub", args.subsample)):
                rep = run_comparison(data, [args.k], ["ls_rpca"], n_folds=args.folds, seeds=[s], root_seed=s,
                                     fit_rows=rows,
                                     omega_seeds="shared" if args.shared_omega else "independent")
                res[name] = np.mean([e.error_rate for e in rep.ok_entries()])
            win = res["all"] <= res["sub"]
            wins += win
            print(f"seed {s}: all rows {res['all']:.4f}  {args.subsample} rows {res['sub']:.4f}"
                  f"  diff {res['sub'] - res['all']:+.4f} {'win' if win else ''}")
    print(f"{wins}/{len(args.seeds)} seeds no worse with all rows ({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
