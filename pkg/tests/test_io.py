import json
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from clustervar import DatasetSpec, fit_ols, load_csv, load_dataset, within_transform
from clustervar.data import ClusterPartition, RegressionProblem
from clustervar.exceptions import (
    DuplicateHeaderError,
    EmptyFileError,
    MissingColumnError,
    NonNumericCellError,
)
from clustervar.io import (
    DegenerateAbsorbGroupWarning,
    DroppedColumnWarning,
    render_report,
    to_jsonable,
    write_report,
)

import oracles


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestDatasetSpec:
    def test_rejects_column_in_two_roles(self):
        with pytest.raises(ValueError):
            DatasetSpec(path="f", y_col="a", x_cols=("a",), cluster_col="c")
        with pytest.raises(ValueError):
            DatasetSpec(path="f", y_col="y", x_cols=("x",), w_cols=("x",),
                        cluster_col="c")

    def test_requires_focal(self):
        with pytest.raises(ValueError):
            DatasetSpec(path="f", y_col="y", x_cols=(), cluster_col="c")


class TestLoadCsv:
    def test_row_order_and_partition(self, tmp_path):
        path = write(tmp_path, "y,x,cl\n1,0.5,a\n2,1.5,a\n3,1.0,b\n4,2.0,b\n")
        prob = load_csv(DatasetSpec(path=path, y_col="y", x_cols=("x",),
                                    cluster_col="cl"))
        assert prob.partition.groups["a"].tolist() == [0, 1]
        assert prob.partition.groups["b"].tolist() == [2, 3]
        assert_allclose(prob.y, [1, 2, 3, 4])

    def test_interact_time_expansion(self, tmp_path):
        rows = ["y,w1,w2,x,cl,t"]
        periods = ["p1", "p2", "p3"]
        for i in range(9):
            rows.append(f"{i},{i + 0.5},{i - 0.5},{i % 3},c{i % 2},{periods[i % 3]}")
        path = write(tmp_path, "\n".join(rows) + "\n")
        loaded = load_dataset(DatasetSpec(
            path=path, y_col="y", x_cols=("x",), w_cols=("w1", "w2"),
            cluster_col="cl", interact_time_col="t",
        ))
        prob = loaded.problem
        assert prob.W.shape == (9, 6)
        assert len(loaded.w_names) == 6
        # each row is nonzero in exactly its own period's two columns
        nonzero = np.count_nonzero(prob.W, axis=1)
        assert np.all(nonzero == 2)
        # period p2 row 1 carries w1=1.5 w2=0.5 in the p2 slot
        slot = loaded.w_names.index("w1:p2")
        assert prob.W[1, slot] == pytest.approx(1.5)

    def test_hand_solved_fixture_end_to_end(self, tmp_path):
        # 6 x 4 fixture with a known least-squares solution
        path = write(
            tmp_path,
            "y,x,w,cl\n"
            "1.0,1.0,1.0,a\n2.0,2.0,1.0,a\n"
            "2.0,1.0,-1.0,b\n4.0,3.0,-1.0,b\n"
            "3.0,2.0,2.0,c\n5.0,4.0,2.0,c\n",
        )
        prob = load_csv(DatasetSpec(path=path, y_col="y", x_cols=("x",),
                                    w_cols=("w",), cluster_col="cl"))
        fit = fit_ols(prob)
        design = np.column_stack([prob.W[:, 0], prob.X[:, 0]])
        expected = oracles.normal_equations_coef(design, prob.y)
        assert_allclose(np.r_[fit.gamma, fit.beta], expected, rtol=1e-10)

    def test_missing_column(self, tmp_path):
        path = write(tmp_path, "y,x\n1,2\n")
        with pytest.raises(MissingColumnError):
            load_csv(DatasetSpec(path=path, y_col="y", x_cols=("x",),
                                 cluster_col="cl"))

    def test_non_numeric_cell_names_row_and_column(self, tmp_path):
        path = write(tmp_path, "y,x,cl\n1,2,a\n1,oops,b\n")
        with pytest.raises(NonNumericCellError) as exc:
            load_csv(DatasetSpec(path=path, y_col="y", x_cols=("x",),
                                 cluster_col="cl"))
        assert exc.value.row == 1
        assert exc.value.column == "x"

    def test_empty_file_variants(self, tmp_path):
        for text in ("", "y,x,cl\n"):
            path = write(tmp_path, text)
            with pytest.raises(EmptyFileError):
                load_csv(DatasetSpec(path=path, y_col="y", x_cols=("x",),
                                     cluster_col="cl"))

    def test_duplicate_header(self, tmp_path):
        path = write(tmp_path, "y,x,x,cl\n1,2,3,a\n")
        with pytest.raises(DuplicateHeaderError):
            load_csv(DatasetSpec(path=path, y_col="y", x_cols=("x",),
                                 cluster_col="cl"))

    def test_nan_cell_becomes_nonfinite_error(self, tmp_path):
        from clustervar.exceptions import NonFiniteError

        path = write(tmp_path, "y,x,cl\nnan,2,a\n1,3,b\n1,4,c\n")
        with pytest.raises(NonFiniteError):
            load_csv(DatasetSpec(path=path, y_col="y", x_cols=("x",),
                                 cluster_col="cl"))


class TestWithinTransform:
    def _problem(self, rng, n=12):
        X = np.column_stack([rng.standard_normal(n), np.ones(n)])
        W = rng.standard_normal((n, 1))
        y = rng.standard_normal(n)
        return RegressionProblem(y, X, W, ClusterPartition([0] * 6 + [1] * 6))

    def test_constant_column_dropped_with_warning(self, rng):
        prob = self._problem(rng)
        absorb = ["g1"] * 4 + ["g2"] * 4 + ["g3"] * 4
        with pytest.warns(DroppedColumnWarning):
            out = within_transform(prob, absorb)
        assert out.n_focal == 1  # the constant focal column died
        for lab in ("g1", "g2", "g3"):
            idx = [i for i, a in enumerate(absorb) if a == lab]
            assert_allclose(out.y[idx].mean(), 0.0, atol=1e-12)

    def test_single_group_is_grand_mean_centering(self, rng):
        n = 10
        X = rng.standard_normal((n, 1))
        prob = RegressionProblem(rng.standard_normal(n), X, None,
                                 ClusterPartition([0] * 5 + [1] * 5))
        out = within_transform(prob, ["all"] * n)
        assert_allclose(out.X[:, 0], X[:, 0] - X[:, 0].mean(), atol=1e-12)
        assert_allclose(out.y, prob.y - prob.y.mean(), atol=1e-12)

    def test_matches_dummy_variable_regression(self, rng):
        # FWL: within-group OLS equals OLS with group dummies
        n = 14
        X = rng.standard_normal((n, 1))
        y = rng.standard_normal(n)
        absorb = ["a"] * 7 + ["b"] * 7
        prob = RegressionProblem(y, X, None, ClusterPartition([0, 1] * 7))
        out = within_transform(prob, absorb)
        fit = fit_ols(out)
        dummies = np.column_stack([
            (np.array(absorb) == "a").astype(float),
            (np.array(absorb) == "b").astype(float),
        ])
        coef = oracles.normal_equations_coef(np.column_stack([X, dummies]), y)
        assert_allclose(fit.beta[0], coef[0], rtol=1e-10)

    def test_singleton_groups_reported(self, rng):
        prob = self._problem(rng)
        absorb = [f"g{i}" for i in range(6)] + ["h"] * 6
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            within_transform(prob, absorb)
        kinds = {type(w.message) for w in caught}
        assert DegenerateAbsorbGroupWarning in kinds

    def test_absorb_must_cover_rows(self, rng):
        prob = self._problem(rng)
        with pytest.raises(ValueError):
            within_transform(prob, ["a"] * 5)

    def test_partition_untouched(self, rng):
        prob = self._problem(rng)
        with pytest.warns(DroppedColumnWarning):
            out = within_transform(prob, ["a"] * 6 + ["b"] * 6)
        assert out.partition is prob.partition


class TestReports:
    def test_round_trip_lossless(self, tmp_path):
        envelope = {
            "command": "fit",
            "results": {
                "value": 0.1234567890123456789,
                "matrix": np.arange(4.0).reshape(2, 2),
                "count": np.int64(7),
                "flag": np.bool_(True),
                "nested": [np.float64(1.5), {"x": np.float32(2.0)}],
            },
        }
        path = str(tmp_path / "report.json")
        write_report(path, envelope)
        with open(path, encoding="utf-8") as fh:
            loaded = json.load(fh)
        assert loaded == to_jsonable(envelope)
        assert loaded["results"]["value"] == envelope["results"]["value"]
        assert json.loads(render_report(envelope)) == to_jsonable(envelope)

    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        path = str(tmp_path / "r.json")
        write_report(path, {"a": 1})
        leftovers = [p for p in tmp_path.iterdir() if p.name != "r.json"]
        assert leftovers == []
