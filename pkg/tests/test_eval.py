import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lsrpca import evaluate
from lsrpca.errors import ShapeError
from lsrpca.evaluate import (
    EvalEntry, EvalReport, LabeledDataset, assert_disjoint, error_rate, gather_rows, holdout_split,
    kfold_splits, make_synthetic, multiclass_log_loss, run_comparison, train_logreg,
)
from lsrpca.normalize import fit_norm, transform_slice
from lsrpca.store import partition


def blobs(rng, n_per, centers, sd=1.0):
    centers = np.asarray(centers, dtype=float)
    y = np.repeat(np.arange(len(centers)), n_per)
    return centers[y] + sd * rng.standard_normal((y.size, centers.shape[1])), y


# -- classifier ---------------------------------------------------------------


def test_separable_toy_set_has_zero_training_error(rng):
    x = np.concatenate([rng.uniform(-3, -1, 40), rng.uniform(1, 3, 40)])
    x = np.column_stack([x, rng.standard_normal(80)])
    y = (x[:, 0] > 0).astype(int)
    model = train_logreg(x, y, reg=0.1)
    assert error_rate(model.predict(x), y) == 0.0


def test_three_blobs_generalize(rng):
    centers = rng.standard_normal((3, 5)) * 6
    x, y = blobs(rng, 67, centers)
    perm = rng.permutation(y.size)
    tr, te = perm[:150], perm[150:]
    model = train_logreg(x[tr], y[tr], 3)
    assert model.converged
    assert 1 - error_rate(model.predict(x[te]), y[te]) > 0.95


def test_single_class_rejected(rng):
    with pytest.raises(ValueError, match="two classes"):
        train_logreg(rng.standard_normal((5, 2)), np.zeros(5, dtype=int))


def test_missing_class_rejected(rng):
    with pytest.raises(ValueError):
        train_logreg(rng.standard_normal((6, 2)), np.array([0, 0, 2, 2, 0, 2]), 3)


def test_objective_is_nonincreasing(rng):
    x, y = blobs(rng, 30, [[0, 0], [2, 1], [0, 3]], sd=1.5)
    model = train_logreg(x, y, 3, reg=0.5)
    trace = np.array(model.objective_trace)
    assert len(trace) > 2
    assert np.all(np.diff(trace) <= 1e-12)


def test_nonconvergence_is_flagged_not_raised(rng, caplog):
    x, y = blobs(rng, 30, [[0, 0], [1, 1]], sd=2)
    with caplog.at_level("WARNING"):
        model = train_logreg(x, y, max_iter=1)
    assert not model.converged and "without converging" in caplog.text


def test_training_is_deterministic(rng):
    x, y = blobs(rng, 20, [[0, 0], [2, 2]])
    a, b = train_logreg(x, y), train_logreg(x, y)
    assert np.array_equal(a.coef, b.coef) and np.array_equal(a.intercept, b.intercept)


def test_probabilities_sum_to_one(rng):
    x, y = blobs(rng, 20, [[0, 0], [2, 2], [4, 0]])
    p = train_logreg(x, y).predict_proba(x)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


# -- metrics ------------------------------------------------------------------


def test_log_loss_perfect_predictions():
    assert multiclass_log_loss(np.eye(3), [0, 1, 2]) == pytest.approx(-math.log(1 - 1e-15), abs=1e-15)


def test_log_loss_uniform_is_log_c():
    assert multiclass_log_loss(np.full((10, 9), 1 / 9), np.arange(10) % 9) == pytest.approx(math.log(9), abs=1e-12)


def test_log_loss_matches_direct_sum(rng):
    raw = rng.random((5, 4))
    probs = raw / raw.sum(axis=1, keepdims=True)
    labels = [3, 0, 2, 2, 1]
    expected = 0.0
    for i, c in enumerate(labels):
        expected -= math.log(min(max(probs[i, c], 1e-15), 1 - 1e-15))
    assert multiclass_log_loss(probs, labels) == pytest.approx(expected / 5, abs=1e-9)


def test_log_loss_clips_zero_probability():
    assert multiclass_log_loss([[1.0, 0.0]], [1]) == pytest.approx(-math.log(1e-15))


def test_log_loss_validation():
    with pytest.raises(ShapeError):
        multiclass_log_loss(np.full((3, 2), 0.5), [0, 1])
    with pytest.raises(ShapeError):
        multiclass_log_loss(np.full((2, 2), 0.5), [0, 2])
    with pytest.raises(ValueError):
        multiclass_log_loss([[0.5, 0.6]], [0])


def test_error_rate():
    assert error_rate([0, 1, 1, 0], [0, 1, 0, 0]) == 0.25


# -- splitting ----------------------------------------------------------------


@settings(max_examples=30)
@given(n=st.integers(10, 200), k=st.integers(2, 10), seed=st.integers(0, 2**31))
def test_kfold_partitions_rows(n, k, seed):
    folds = kfold_splits(n, k, seed)
    assert len(folds) == k
    tests = np.concatenate([te for _, te in folds])
    assert sorted(tests.tolist()) == list(range(n))
    for tr, te in folds:
        assert np.intersect1d(tr, te).size == 0 and tr.size + te.size == n
        assert abs(te.size - n / k) < 1


def test_holdout_is_80_20():
    tr, te = holdout_split(100, 0.2, 1)
    assert tr.size == 80 and te.size == 20 and np.intersect1d(tr, te).size == 0
    (tr1, te1), = kfold_splits(100, 1, 1)
    assert np.array_equal(te, te1)


def test_assert_disjoint():
    assert_disjoint([1, 2], [3])
    with pytest.raises(AssertionError):
        assert_disjoint([1, 2], [2, 3])


def test_gather_rows(tmp_path, rng):
    x = rng.standard_normal((30, 3)).astype(np.float32)
    store = partition(x, 7, tmp_path / "s")
    rows = np.array([0, 6, 7, 8, 20, 29])
    out = gather_rows(store, rows, tmp_path / "g", 4)
    np.testing.assert_array_equal(out.to_matrix(), x[rows])
    assert out.slice_row_counts == [4, 2]


# -- synthetic data -----------------------------------------------------------


def test_noiseless_synthetic_has_exact_rank():
    x, _ = make_synthetic(300, 50, 8, 2, 0.0, seed=3)
    s = np.linalg.svd(x.astype(np.float64), compute_uv=False)
    assert s[8] < 1e-4 * s[0]


def test_synthetic_reproducible_and_seed_dependent():
    a, ya = make_synthetic(100, 20, 5, 3, 0.1, seed=1)
    b, yb = make_synthetic(100, 20, 5, 3, 0.1, seed=1)
    c, _ = make_synthetic(100, 20, 5, 3, 0.1, seed=2)
    assert a.tobytes() == b.tobytes() and np.array_equal(ya, yb)
    assert not np.any(a.ravel()[:10] == c.ravel()[:10])
    assert np.bincount(ya).min() > 0


def test_synthetic_validation():
    with pytest.raises(ValueError):
        make_synthetic(10, 5, 6, 2, 0.1, seed=0)
    with pytest.raises(ValueError):
        make_synthetic(10, 5, 2, 2, -1.0, seed=0)


def test_exact_pca_at_rank_matches_full_features(tmp_path):
    x, y = make_synthetic(1000, 200, 30, 2, 0.1, seed=5)
    tr, te = holdout_split(1000, 0.2, 9)
    store = partition(x[tr], 200, tmp_path / "tr")
    stats = fit_norm(store, "dense")
    xtr, xte = transform_slice(x[tr], stats), transform_slice(x[te], stats)
    full_acc = 1 - error_rate(train_logreg(xtr, y[tr]).predict(xte), y[te])
    data = LabeledDataset.from_arrays(x, y, tmp_path / "d", 200)
    report = run_comparison(data, [30], ["exact_pca"], n_folds=1, seeds=[0])
    pca_acc = 1 - report.entries[0].error_rate
    assert abs(pca_acc - full_acc) <= 0.01


# -- dataset and sweep --------------------------------------------------------


def test_labeled_dataset_validation(tmp_path, rng):
    store = partition(rng.standard_normal((4, 2)), 2, tmp_path / "s")
    with pytest.raises(ShapeError):
        LabeledDataset(store, [0, 1, 0], 2)
    with pytest.raises(ValueError):
        LabeledDataset(store, [0, 1, 0, 2], 2)
    with pytest.raises(ValueError):
        LabeledDataset(store, [0, 0, 0, 0], 2)


@pytest.fixture
def small_data(tmp_path):
    x, y = make_synthetic(400, 30, 8, 2, 0.2, seed=4)
    return LabeledDataset.from_arrays(x, y, tmp_path / "data", 100)


def test_rp_only_single_fold_has_one_entry_per_k(small_data):
    report = run_comparison(small_data, [2, 4, 6], ["rp"], n_folds=1, seeds=[0])
    assert [e.k for e in report.entries] == [2, 4, 6]
    assert all(e.status == "ok" and e.fold == 0 for e in report.entries)


def test_entry_count_and_metric_ranges(small_data):
    report = run_comparison(
        small_data, [2, 5], ["rp", "ls_rpca", "rpca_baseline", "exact_pca"], ["minimal", "double"],
        n_folds=3, seeds=[0, 1],
    )
    per_fold = 2 + 2 * 2 + 2 * 2 + 2
    assert len(report.entries) == 2 * 3 * per_fold
    for e in report.entries:
        assert e.status == "ok"
        assert e.log_loss >= 0 and 0 <= e.error_rate <= 1
    assert {e.fold for e in report.entries} == {0, 1, 2}


def test_repeated_run_is_identical(small_data):
    kw = dict(ks=[3], methods=["rp", "ls_rpca"], n_folds=2, seeds=[5])
    a = run_comparison(small_data, **kw).to_csv()
    b = run_comparison(small_data, **kw).to_csv()
    assert a == b


def test_failed_cell_is_recorded_and_sweep_continues(small_data):
    report = run_comparison(small_data, [4], ["ls_rpca", "rp"], ["fixed:40"], n_folds=1, seeds=[0])
    bad, good = report.entries
    assert bad.status == "failed" and "K-bar=40" in bad.cause
    assert good.status == "ok"


def test_shared_omega_seed_mode(small_data):
    report = run_comparison(small_data, [3], ["rp", "ls_rpca"], n_folds=1, seeds=[0], omega_seeds="shared")
    assert all(e.status == "ok" for e in report.entries)
    with pytest.raises(ValueError):
        run_comparison(small_data, [3], ["rp"], omega_seeds="bogus")


def test_k_larger_than_p_rejected(small_data):
    with pytest.raises(ValueError):
        run_comparison(small_data, [31], ["rp"])


def test_fit_paths_never_see_test_rows(small_data, monkeypatch):
    """Spy on every fitting routine: each must receive exactly the training-fold size."""
    seen = []
    real_fit_norm, real_ls_rpca = evaluate.fit_norm, evaluate.ls_rpca

    def spy_fit_norm(store, *a, **kw):
        seen.append(("norm", store.n_total))
        return real_fit_norm(store, *a, **kw)

    def spy_ls_rpca(store, *a, **kw):
        seen.append(("proj", store.n_total))
        return real_ls_rpca(store, *a, **kw)

    monkeypatch.setattr(evaluate, "fit_norm", spy_fit_norm)
    monkeypatch.setattr(evaluate, "ls_rpca", spy_ls_rpca)
    run_comparison(small_data, [3], ["ls_rpca"], n_folds=4, seeds=[0])
    assert seen and all(n == 300 for _, n in seen)
    seen.clear()
    run_comparison(small_data, [3], ["ls_rpca"], n_folds=4, seeds=[0], fit_rows=120)
    assert ("proj", 120) in seen and all(n in (300, 120) for _, n in seen)


# -- report ---------------------------------------------------------------------


def _report():
    e = [
        EvalEntry("rp", 5, "-", 0, 0, 0.5, 0.20),
        EvalEntry("rp", 5, "-", 0, 1, 0.7, 0.30),
        EvalEntry("ls_rpca", 5, "minimal", 0, 0, 0.3, 0.10),
        EvalEntry("ls_rpca", 5, "minimal", 0, 1, 0.3, 0.20),
        EvalEntry("ls_rpca", 5, "double", 0, 0, math.nan, math.nan, "failed", "boom"),
    ]
    return EvalReport(e, n_folds=2)


def test_aggregates_and_error_reduction():
    rep = _report()
    aggs = {(a["method"], a["oversampling_mode"]): a for a in rep.aggregates()}
    assert aggs["rp", "-"]["mean_error_rate"] == pytest.approx(0.25)
    assert aggs["rp", "-"]["sd_error_rate"] == pytest.approx(np.std([0.2, 0.3], ddof=1))
    assert ("ls_rpca", "double") not in aggs
    (red,) = rep.error_reduction()
    assert red["reduction"] == pytest.approx((0.25 - 0.15) / 0.25)
    rows = rep.plot_table("error_rate")
    assert {r["method"] for r in rows} == {"rp", "ls_rpca[minimal]"}


def test_report_serialization(tmp_path):
    rep = _report()
    text = rep.to_csv(tmp_path / "r.csv")
    lines = text.splitlines()
    assert lines[0] == "method,k,oversampling_mode,seed,fold,log_loss,error_rate,status,cause"
    assert len(lines) == 6 and lines[-1].endswith("failed,boom")
    rep.to_json(tmp_path / "r.json")
    back = EvalReport.from_json(tmp_path / "r.json")
    assert back.to_csv() == text
    assert json.loads((tmp_path / "r.json").read_text())["error_reduction"]
