"""Downstream evaluation: RP vs randomized-PCA projections as classifier preprocessing.

Each cell of a sweep runs the same pipeline on one (seed, fold):

1. column normalization fit on the training rows, applied to train and test;
2. projection fit on the (normalized) training rows, applied to both;
3. renormalization of the projected features (dense mode, fit on train);
4. multinomial logistic regression trained on train;
5. log-loss and error rate on test.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import shutil
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.special import logsumexp

from .errors import ShapeError
from .qr import householder_qr
from .normalize import fit_norm, infer_column_kinds, transform_slice, apply_norm
from .rng import permutation, standard_normal, sub_seed
from .rpca import baseline_rpca, exact_pca, ls_rpca, project, resolve_kbar, rp_model, parse_oversample
from .store import SliceStore, SliceWriter, scratch_dir, slice_iter

log = logging.getLogger(__name__)

PROB_CLIP = 1e-15
LABELS_FILE = "labels.txt"
PCA_METHODS = ("ls_rpca", "rpca_baseline")


# --------------------------------------------------------------------------
# data


@dataclass
class LabeledDataset:
    features: SliceStore
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or self.labels.size != self.features.n_total:
            raise ShapeError(
                f"{self.labels.size} labels for {self.features.n_total} feature rows"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        missing = np.setdiff1d(np.arange(self.n_classes), self.labels)
        if missing.size:
            raise ValueError(f"classes {missing.tolist()} have no samples")

    @classmethod
    def from_arrays(cls, x, labels, path, slice_rows, n_classes=None) -> "LabeledDataset":
        from .store import partition

        labels = np.asarray(labels, dtype=np.int64)
        store = partition(x, slice_rows, path)
        save_labels(store.path / LABELS_FILE, labels)
        return cls(store, labels, int(n_classes if n_classes is not None else labels.max() + 1))

    @classmethod
    def open(cls, path, labels_path=None, n_classes=None) -> "LabeledDataset":
        store = SliceStore.open(path)
        labels = load_labels(labels_path or Path(path) / LABELS_FILE)
        return cls(store, labels, int(n_classes if n_classes is not None else labels.max() + 1))


def save_labels(path, labels):
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels))


def load_labels(path) -> np.ndarray:
    text = Path(path).read_text().split()
    return np.array([int(t) for t in text], dtype=np.int64)


def make_synthetic(n, p, rank, n_classes, noise_sd, seed, *, class_sep=2.0, decay=1.0):
    """Low-rank labelled data ``X = L W^T + noise``.

    Latent coordinates ``L`` (n x rank) are class centers plus unit noise,
    both scaled per latent dimension by ``(j + 1) ** (-decay / 2)``; class
    centers are additionally scaled by the same factor, so the class signal
    concentrates in the high-variance directions.
    ``W`` is a p x rank loading matrix with orthogonal columns of norm
    ``sqrt(p)`` (orthonormalized Gaussian), so the latent variance profile is
    exactly the spectrum of the noiseless data.  Labels are assigned
    round-robin and shuffled.

    Returns ``(x, labels)`` with ``x`` float32 of shape (n, p).
    """
    if not 1 <= rank <= min(n, p):
        raise ValueError(f"rank must lie in [1, min(n, p)], got {rank}")
    if n_classes < 1 or n < n_classes:
        raise ValueError("need at least one sample per class")
    if noise_sd < 0:
        raise ValueError("noise_sd must be nonnegative")
    scale = (np.arange(rank) + 1.0) ** (-decay / 2.0)
    centers = standard_normal(sub_seed(seed, "centers"), n_classes * rank).reshape(n_classes, rank)
    centers *= class_sep * scale**2
    labels = np.arange(n) % n_classes
    labels = labels[permutation(sub_seed(seed, "labels"), n)]
    latent = standard_normal(sub_seed(seed, "latent"), n * rank).reshape(n, rank) * scale
    latent += centers[labels]
    loadings = standard_normal(sub_seed(seed, "loadings"), p * rank).reshape(p, rank)
    loadings = householder_qr(loadings).q * math.sqrt(p)
    x = latent @ loadings.T
    if noise_sd > 0:
        x += noise_sd * standard_normal(sub_seed(seed, "noise"), n * p).reshape(n, p)
    return np.asfortranarray(x, dtype=np.float32), labels.astype(np.int64)


# --------------------------------------------------------------------------
# classifier


def softmax_probs(scores: np.ndarray) -> np.ndarray:
    return np.exp(scores - logsumexp(scores, axis=1, keepdims=True))


def logreg_objective(params, x, y, n_classes, reg):
    """Mean cross-entropy plus ``reg / (2 N) * ||W||^2`` and its gradient.

    ``params`` packs ``W`` (d x C, row-major) followed by the intercepts (C).
    The intercept is not penalized.  With ``reg = 1 / C_sklearn`` this is the
    sum-form objective ``sum_i CE_i + ||W||^2 / (2 C)`` divided by N.
    """
    n, d = x.shape
    w = params[: d * n_classes].reshape(d, n_classes)
    b = params[d * n_classes :]
    scores = x @ w + b
    lse = logsumexp(scores, axis=1)
    f = np.mean(lse - scores[np.arange(n), y]) + 0.5 * reg / n * np.sum(w * w)
    probs = np.exp(scores - lse[:, None])
    probs[np.arange(n), y] -= 1.0
    probs /= n
    gw = x.T @ probs + (reg / n) * w
    gb = probs.sum(axis=0)
    return f, np.concatenate([gw.ravel(), gb])


@dataclass
class LogRegModel:
    coef: np.ndarray
    intercept: np.ndarray
    n_classes: int
    converged: bool
    n_iter: int
    objective_trace: list = field(default_factory=list)

    def decision_function(self, x):
        return np.asarray(x, dtype=np.float64) @ self.coef + self.intercept

    def predict_proba(self, x):
        return softmax_probs(self.decision_function(x))

    def predict(self, x):
        return np.argmax(self.decision_function(x), axis=1)


def train_logreg(x, y, n_classes=None, reg=1.0, max_iter=500, tol=1e-6) -> LogRegModel:
    """Multinomial L2 logistic regression by L-BFGS from a zero start.

    Non-convergence within ``max_iter`` is reported through ``converged`` and
    a log warning rather than an exception.
    """
    x = np.asarray(x.toarray() if sp.issparse(x) else x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ShapeError(f"features {x.shape} and labels {y.shape} disagree")
    if reg <= 0:
        raise ValueError("reg must be positive")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    present = np.unique(y)
    if present.size < 2:
        raise ValueError("training data must contain at least two classes")
    if present.size != n_classes or present[0] != 0 or present[-1] != n_classes - 1:
        raise ValueError(f"every one of the {n_classes} classes must be present in training data")
    d = x.shape[1]
    trace = []
    x0 = np.zeros((d + 1) * n_classes)
    trace.append(logreg_objective(x0, x, y, n_classes, reg)[0])

    def record(intermediate_result):
        trace.append(float(intermediate_result.fun))

    res = minimize(
        logreg_objective,
        x0,
        args=(x, y, n_classes, reg),
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-15},
    )
    converged = bool(res.success)
    if not converged:
        log.warning("logistic regression stopped without converging: %s", res.message)
    params = res.x
    return LogRegModel(
        coef=params[: d * n_classes].reshape(d, n_classes).copy(),
        intercept=params[d * n_classes :].copy(),
        n_classes=n_classes,
        converged=converged,
        n_iter=int(res.nit),
        objective_trace=trace,
    )


def multiclass_log_loss(probs, labels) -> float:
    """``-(1/N) sum_i log p[i, y_i]`` with probabilities clipped to [1e-15, 1 - 1e-15]."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ShapeError(f"probabilities {probs.shape} and labels {labels.shape} disagree")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ShapeError("label outside the probability columns")
    if not np.allclose(probs.sum(axis=1), 1.0, rtol=0.0, atol=1e-6):
        raise ValueError("probability rows must sum to 1")
    p = np.clip(probs[np.arange(labels.size), labels], PROB_CLIP, 1.0 - PROB_CLIP)
    return float(-np.mean(np.log(p)))


def error_rate(pred, labels) -> float:
    return float(np.mean(np.asarray(pred) != np.asarray(labels)))


# --------------------------------------------------------------------------
# splitting


def kfold_splits(n: int, n_folds: int, seed: int):
    """Seeded k-fold partition of ``range(n)``; ``n_folds == 1`` gives an 80/20 holdout."""
    if n_folds < 1:
        raise ValueError("n_folds must be >= 1")
    perm = permutation(seed, n)
    if n_folds == 1:
        return [holdout_split(n, 0.2, seed)]
    out = []
    for test in np.array_split(perm, n_folds):
        mask = np.ones(n, dtype=bool)
        mask[test] = False
        out.append((np.flatnonzero(mask), np.sort(test)))
    return out


def holdout_split(n: int, test_fraction: float, seed: int):
    """Train on a random ``1 - test_fraction`` of rows selected without replacement."""
    perm = permutation(seed, n)
    n_test = int(round(test_fraction * n))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def gather_rows(store: SliceStore, rows, path, slice_rows=None) -> SliceStore:
    """Stream the sorted global ``rows`` of ``store`` into a new store."""
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size and np.any(np.diff(rows) <= 0):
        raise ValueError("rows must be strictly increasing")
    writer = SliceWriter(path, store.cols, store.storage_kind, max_rows=slice_rows)
    offset = 0
    for s, xs in slice_iter(store):
        n_s = store.slice_row_counts[s]
        lo, hi = np.searchsorted(rows, [offset, offset + n_s])
        if hi > lo:
            local = rows[lo:hi] - offset
            writer.append(xs[local] if not sp.issparse(xs) else xs[local, :])
        offset += n_s
    return writer.close()


def assert_disjoint(fit_rows, test_rows):
    """Hygiene guard: no test row may reach a fitting routine."""
    leaked = np.intersect1d(np.asarray(fit_rows), np.asarray(test_rows))
    assert leaked.size == 0, f"{leaked.size} test rows leaked into a fit path"


# --------------------------------------------------------------------------
# report


@dataclass
class EvalEntry:
    method: str
    k: int
    oversampling_mode: str
    seed: int
    fold: int
    log_loss: float = math.nan
    error_rate: float = math.nan
    status: str = "ok"
    cause: str = ""


CSV_FIELDS = [f for f in EvalEntry.__dataclass_fields__]


def _num(v) -> str:
    return repr(float(v))


@dataclass
class EvalReport:
    entries: list
    n_folds: int
    config: dict = field(default_factory=dict)

    def ok_entries(self):
        return [e for e in self.entries if e.status == "ok"]

    def aggregates(self) -> list:
        groups = {}
        for e in self.ok_entries():
            groups.setdefault((e.method, e.k, e.oversampling_mode), []).append(e)
        out = []
        for (method, k, mode), items in sorted(groups.items(), key=lambda kv: (kv[0][1], kv[0][0], kv[0][2])):
            ll = np.array([e.log_loss for e in items])
            er = np.array([e.error_rate for e in items])
            sd = (lambda a: float(a.std(ddof=1)) if a.size > 1 else 0.0)
            out.append(
                {
                    "method": method, "k": k, "oversampling_mode": mode, "n": len(items),
                    "mean_log_loss": float(ll.mean()), "sd_log_loss": sd(ll),
                    "mean_error_rate": float(er.mean()), "sd_error_rate": sd(er),
                }
            )
        return out

    def error_reduction(self, metric: str = "error_rate") -> list:
        """``(err_rp - err_method) / err_rp`` per K for every non-RP method and mode."""
        key = f"mean_{metric}"
        aggs = self.aggregates()
        rp = {a["k"]: a[key] for a in aggs if a["method"] == "rp"}
        out = []
        for a in aggs:
            if a["method"] == "rp" or a["k"] not in rp:
                continue
            base = rp[a["k"]]
            red = (base - a[key]) / base if base > 0 else math.nan
            out.append({"k": a["k"], "method": a["method"], "oversampling_mode": a["oversampling_mode"], "reduction": red})
        return out

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for e in self.entries:
            w.writerow([e.method, e.k, e.oversampling_mode, e.seed, e.fold,
                        _num(e.log_loss), _num(e.error_rate), e.status, e.cause])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "n_folds": self.n_folds,
            "entries": [asdict(e) for e in self.entries],
            "aggregates": self.aggregates(),
            "error_reduction": self.error_reduction("error_rate"),
            "log_loss_reduction": self.error_reduction("log_loss"),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1, sort_keys=True, default=_json_default)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, path) -> "EvalReport":
        d = json.loads(Path(path).read_text())
        return cls([EvalEntry(**e) for e in d["entries"]], d["n_folds"], d.get("config", {}))

    def plot_table(self, metric: str = "log_loss") -> list:
        """Rows ``(K, method, mean, sd, error-reduction %)`` for curve plots."""
        red = {(r["k"], r["method"], r["oversampling_mode"]): r["reduction"] for r in self.error_reduction(metric)}
        rows = []
        for a in self.aggregates():
            label = a["method"] if a["oversampling_mode"] in ("-", "") else f"{a['method']}[{a['oversampling_mode']}]"
            r = red.get((a["k"], a["method"], a["oversampling_mode"]))
            rows.append(
                {
                    "k": a["k"], "method": label,
                    "mean": a[f"mean_{metric}"], "sd": a[f"sd_{metric}"],
                    "error_reduction_pct": None if r is None else 100.0 * r,
                }
            )
        return rows


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


# --------------------------------------------------------------------------
# sweep


def _fit_model(method, fit_store, k, mode, sketch_seed):
    if method == "rp":
        return rp_model(fit_store.cols, k, sketch_seed)
    if method == "ls_rpca":
        return ls_rpca(fit_store, k, resolve_kbar(k, mode), sketch_seed, mode)
    if method == "rpca_baseline":
        return baseline_rpca(fit_store.to_matrix(), k, resolve_kbar(k, mode), sketch_seed, mode)
    if method == "exact_pca":
        return exact_pca(fit_store, k)
    raise ValueError(f"unknown method {method!r}")


def run_comparison(
    data: LabeledDataset,
    ks,
    methods=("rp", "ls_rpca"),
    oversampling_modes=("minimal",),
    n_folds: int = 5,
    seeds=(0,),
    *,
    root_seed: int = 0,
    norm_mode: str = "dense",
    column_kinds=None,
    reg: float = 1.0,
    max_iter: int = 500,
    tol: float = 1e-6,
    slice_rows: int | None = None,
    fit_rows: int | None = None,
    omega_seeds: str = "independent",
    scratch=None,
) -> EvalReport:
    """Sweep (seed, fold, method, oversampling mode, K) cells and collect test metrics.

    ``n_folds == 1`` selects the 80/20 holdout protocol.  ``fit_rows`` caps
    the number of training rows used to fit the projection (a seeded subset
    of the training fold); the classifier always trains on the full fold.
    ``omega_seeds`` is ``"independent"`` (each method draws its own Omega) or
    ``"shared"`` (RP and the PCA methods use the same seed per cell).
    A failing cell is recorded with its cause and the sweep continues.
    """
    ks = [int(k) for k in ks]
    methods = list(methods)
    modes = [parse_oversample(m) for m in oversampling_modes]
    if omega_seeds not in ("independent", "shared"):
        raise ValueError("omega_seeds must be 'independent' or 'shared'")
    if any(k < 1 or k > data.features.cols for k in ks):
        raise ValueError(f"every K must lie in [1, P={data.features.cols}]")
    n = data.features.n_total
    if slice_rows is None:
        slice_rows = max(1024, *(resolve_kbar(k, m) for k in ks for m in modes))
    config = {
        "ks": ks, "methods": methods, "oversampling_modes": modes, "n_folds": n_folds,
        "seeds": list(seeds), "root_seed": root_seed, "norm_mode": norm_mode, "reg": reg,
        "max_iter": max_iter, "tol": tol, "slice_rows": slice_rows, "fit_rows": fit_rows,
        "omega_seeds": omega_seeds,
    }
    kinds = column_kinds
    entries = []
    work = Path(tempfile.mkdtemp(prefix="lsrpca-cmp-", dir=scratch or scratch_dir()))
    try:
        for seed in seeds:
            splits = kfold_splits(n, n_folds, sub_seed(root_seed, "folds", seed))
            for fold, (train_idx, test_idx) in enumerate(splits):
                assert_disjoint(train_idx, test_idx)
                cell_dir = work / f"s{seed}_f{fold}"
                t0 = time.perf_counter()
                train = gather_rows(data.features, train_idx, cell_dir / "train", slice_rows)
                test = gather_rows(data.features, test_idx, cell_dir / "test", slice_rows)
                fold_kinds = infer_column_kinds(train) if kinds == "infer" else kinds
                stats = fit_norm(train, norm_mode, fold_kinds)
                train_n = apply_norm(train, stats, cell_dir / "train_n", max_rows=slice_rows)
                test_n = apply_norm(test, stats, cell_dir / "test_n", max_rows=slice_rows)
                fit_store = train_n
                if fit_rows is not None and fit_rows < train_idx.size:
                    pick = np.sort(permutation(sub_seed(root_seed, "fit_rows", seed, fold), train_idx.size)[:fit_rows])
                    assert_disjoint(train_idx[pick], test_idx)
                    fit_store = gather_rows(train_n, pick, cell_dir / "fit", slice_rows)
                y_train, y_test = data.labels[train_idx], data.labels[test_idx]
                log.info("seed %s fold %d prepared in %.2fs", seed, fold, time.perf_counter() - t0)
                for method in methods:
                    method_modes = modes if method in PCA_METHODS else ["-"]
                    for mode in method_modes:
                        for k in ks:
                            tag = method if omega_seeds == "independent" else "shared"
                            sketch_seed = sub_seed(root_seed, "sketch", tag, seed, fold, k)
                            entry = EvalEntry(method, k, mode, int(seed), fold)
                            try:
                                model = _fit_model(method, fit_store, k, mode, sketch_seed)
                                tr = _projected(train_n, model, cell_dir / "ptrain")
                                te = _projected(test_n, model, cell_dir / "ptest")
                                rstats = fit_norm(tr, "dense")
                                xtr = transform_slice(tr.to_matrix(), rstats)
                                xte = transform_slice(te.to_matrix(), rstats)
                                clf = train_logreg(xtr, y_train, data.n_classes, reg, max_iter, tol)
                                probs = clf.predict_proba(xte)
                                entry.log_loss = multiclass_log_loss(probs, y_test)
                                entry.error_rate = error_rate(np.argmax(probs, axis=1), y_test)
                            except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
                                entry.status = "failed"
                                entry.cause = f"{type(exc).__name__}: {exc}"
                                log.warning("cell %s failed: %s", (method, k, mode, seed, fold), entry.cause)
                            entries.append(entry)
                shutil.rmtree(cell_dir, ignore_errors=True)
    finally:
        shutil.rmtree(work, ignore_errors=True)
    return EvalReport(entries=entries, n_folds=n_folds, config=config)


def _projected(store, model, path):
    return project(store, model, path)
