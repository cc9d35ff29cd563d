import os

import numpy as np
import pytest

from certsurv.data import (CodecError, FormatError, RowError, apply_codec,
                           fit_codec, load_csv, stratified_split)


@pytest.fixture
def small_csv(tmp_path):
    path = tmp_path / "small.csv"
    path.write_text(
        "pid,event,time,fac_color,num_a,num_b\n"
        "0,1,1.5,red,0.1,10\n"
        "1,0,2.0,green,0.4,20\n"
        "2,1,0.7,blue,-0.3,30\n"
        "3,0,3.1,red,0.9,40\n"
        "4,1,1.1,green,0.5,50\n"
        "5,0,2.2,blue,0.0,60\n"
        "6,1,0.4,red,0.2,15\n"
        "7,0,1.9,green,0.8,25\n"
        "8,1,2.8,blue,-0.5,35\n"
        "9,0,3.3,red,0.6,45\n"
    )
    return str(path)


class TestLoadCsv:
    def test_parses_structure(self, small_csv):
        raw = load_csv(small_csv)
        assert len(raw) == 10
        assert raw.fac_columns == ["fac_color"]
        assert raw.num_columns == ["num_a", "num_b"]
        levels = {r.fac["fac_color"] for r in raw.rows}
        assert levels == {"red", "green", "blue"}

    def test_nonpositive_time_dropped_and_counted(self, tmp_path):
        path = tmp_path / "drop.csv"
        rows = ["pid,event,time,num_a"]
        rows.append("0,1,0,1.0")  # dropped
        rows += [f"{i},{i % 2},{i}.5,{i / 10}" for i in range(1, 12)]
        path.write_text("\n".join(rows) + "\n")
        raw = load_csv(str(path))
        assert raw.n_dropped_nonpositive == 1
        assert len(raw) == 11

    def test_missing_required_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("pid,when,event,num_a\n0,1.0,1,0.5\n")
        with pytest.raises(FormatError):
            load_csv(str(path))

    def test_unparseable_numeric_names_line(self, tmp_path):
        path = tmp_path / "bad2.csv"
        rows = ["time,event,num_a"] + [f"{i}.5,1,0.5" for i in range(1, 11)]
        rows.insert(3, "2.5,1,oops")
        path.write_text("\n".join(rows) + "\n")
        with pytest.raises(RowError) as err:
            load_csv(str(path))
        assert "line 4" in str(err.value)

    def test_too_few_rows(self, tmp_path):
        path = tmp_path / "tiny.csv"
        path.write_text("time,event,num_a\n1.0,1,0.5\n")
        with pytest.raises(FormatError):
            load_csv(str(path))

    def test_bundled_retinopathy_shape(self, data_dir):
        raw = load_csv(os.path.join(data_dir, "retinopathy.csv"))
        assert len(raw) == 394
        assert len(raw.fac_columns) == 5
        assert len(raw.num_columns) == 2

    def test_bundled_stagec_shape(self, data_dir):
        raw = load_csv(os.path.join(data_dir, "stagec.csv"))
        assert len(raw) == 146
        assert len(raw.fac_columns) == 4
        assert len(raw.num_columns) == 3


class TestCodec:
    def test_one_hot_partition(self, small_csv):
        raw = load_csv(small_csv)
        codec = fit_codec(raw.rows, raw.fac_columns, raw.num_columns)
        ds = apply_codec(codec, raw.rows)
        onehot = ds.X[:, :3]
        assert np.all(onehot.sum(axis=1) == 1.0)

    def test_standardization(self, small_csv):
        raw = load_csv(small_csv)
        codec = fit_codec(raw.rows, raw.fac_columns, raw.num_columns)
        ds = apply_codec(codec, raw.rows)
        for j in range(3, 5):
            assert abs(ds.X[:, j].mean()) < 1e-10
            assert abs(ds.X[:, j].std() - 1.0) < 1e-10

    def test_unseen_level_encodes_as_zero_block(self, small_csv):
        raw = load_csv(small_csv)
        codec = fit_codec(raw.rows[:6], raw.fac_columns, raw.num_columns)
        row = raw.rows[0]
        row.fac["fac_color"] = "chartreuse"
        ds = apply_codec(codec, [row])
        n_levels = len(codec.fac_levels["fac_color"])
        assert np.all(ds.X[0, :n_levels] == 0.0)

    def test_manual_row_encoding(self, small_csv):
        raw = load_csv(small_csv)
        codec = fit_codec(raw.rows, raw.fac_columns, raw.num_columns)
        ds = apply_codec(codec, raw.rows)
        # row 0: red, a=0.1, b=10; levels sorted: blue, green, red
        a = np.array([r.num["num_a"] for r in raw.rows])
        b = np.array([r.num["num_b"] for r in raw.rows])
        expected = [0.0, 0.0, 1.0,
                    (0.1 - a.mean()) / a.std(),
                    (10 - b.mean()) / b.std()]
        assert np.allclose(ds.X[0], expected, atol=1e-12)

    def test_missing_numeric_gets_train_median(self, tmp_path):
        path = tmp_path / "miss.csv"
        rows = ["time,event,num_a"]
        vals = [1.0, 2.0, 3.0, 4.0, 100.0, 5.0, 6.0, 7.0, 8.0, 9.0]
        for i, v in enumerate(vals):
            rows.append(f"{i + 1}.0,{i % 2},{v}")
        rows.append("11.0,1,")  # missing numeric
        path.write_text("\n".join(rows) + "\n")
        raw = load_csv(str(path))
        codec = fit_codec(raw.rows, raw.fac_columns, raw.num_columns)
        assert codec.num_medians["num_a"] == pytest.approx(np.median(vals))
        ds = apply_codec(codec, raw.rows)
        mean, std = codec.num_stats["num_a"]
        assert ds.X[-1, 0] == pytest.approx((codec.num_medians["num_a"] - mean) / std)

    def test_missing_categorical_gets_own_level(self, tmp_path):
        path = tmp_path / "missfac.csv"
        rows = ["time,event,fac_g,num_a"]
        for i in range(10):
            level = "" if i == 3 else ("a" if i % 2 else "b")
            rows.append(f"{i + 1}.0,{i % 2},{level},{i / 7:.3f}")
        path.write_text("\n".join(rows) + "\n")
        raw = load_csv(str(path))
        codec = fit_codec(raw.rows, raw.fac_columns, raw.num_columns)
        assert "__missing__" in codec.fac_levels["fac_g"]
        ds = apply_codec(codec, raw.rows)
        miss_col = codec.feature_names.index("fac_g=__missing__")
        assert ds.X[3, miss_col] == 1.0
        assert ds.X[:, :3].sum(axis=1).tolist() == [1.0] * 10

    def test_constant_column_dropped(self, tmp_path):
        path = tmp_path / "const.csv"
        rows = ["time,event,num_a,num_c"]
        for i in range(10):
            rows.append(f"{i + 1}.0,{i % 2},{i / 5},7.0")
        path.write_text("\n".join(rows) + "\n")
        raw = load_csv(str(path))
        codec = fit_codec(raw.rows, raw.fac_columns, raw.num_columns)
        assert "num_c" not in codec.num_stats
        assert codec.dim == 1

    def test_all_constant_rejected(self, tmp_path):
        path = tmp_path / "allconst.csv"
        rows = ["time,event,num_c"] + [f"{i + 1}.0,{i % 2},7.0" for i in range(10)]
        path.write_text("\n".join(rows) + "\n")
        raw = load_csv(str(path))
        with pytest.raises(CodecError):
            fit_codec(raw.rows, raw.fac_columns, raw.num_columns)

    def test_no_leakage(self, small_csv):
        import copy
        raw = load_csv(small_csv)
        codec = fit_codec(raw.rows[:6], raw.fac_columns, raw.num_columns)
        before = copy.deepcopy(codec.to_dict())
        apply_codec(codec, raw.rows[6:])
        assert codec.to_dict() == before

    def test_encoding_reproducible(self, small_csv):
        raw = load_csv(small_csv)
        codec = fit_codec(raw.rows, raw.fac_columns, raw.num_columns)
        a = apply_codec(codec, raw.rows)
        b = apply_codec(codec, raw.rows)
        assert np.array_equal(a.X, b.X)

    def test_normalize_onehot_option(self, small_csv):
        raw = load_csv(small_csv)
        codec = fit_codec(raw.rows, raw.fac_columns, raw.num_columns,
                          normalize_onehot=True)
        ds = apply_codec(codec, raw.rows)
        for j in range(3):
            assert abs(ds.X[:, j].mean()) < 1e-10
            assert abs(ds.X[:, j].std() - 1.0) < 1e-10


class TestStratifiedSplit:
    def _toy(self, tmp_path, n=100, events=40):
        path = tmp_path / "toy.csv"
        rows = ["time,event,num_a"]
        for i in range(n):
            e = 1 if i < events else 0
            rows.append(f"{(i % 17) + 1}.0,{e},{np.sin(i):.4f}")
        path.write_text("\n".join(rows) + "\n")
        return load_csv(str(path))

    def test_proportions_and_stratification(self, tmp_path):
        raw = self._toy(tmp_path)
        split = stratified_split(raw, seed=0)
        assert len(split.train) == 60
        assert len(split.validation) == 20
        assert len(split.test) == 20
        assert abs(int(split.train.e.sum()) - 24) <= 1

    def test_deterministic(self, tmp_path):
        raw = self._toy(tmp_path)
        a = stratified_split(raw, seed=5)
        b = stratified_split(raw, seed=5)
        assert np.array_equal(a.train_idx, b.train_idx)
        assert np.array_equal(a.test_idx, b.test_idx)

    def test_partition(self, tmp_path):
        raw = self._toy(tmp_path, n=103, events=41)
        split = stratified_split(raw, seed=3)
        all_idx = np.concatenate([split.train_idx, split.val_idx,
                                  split.test_idx])
        assert len(all_idx) == 103
        assert len(set(all_idx.tolist())) == 103

    def test_single_class_falls_back(self, tmp_path):
        path = tmp_path / "onec.csv"
        rows = ["time,event,num_a"] + [f"{i + 1}.0,1,{i / 7:.3f}" for i in range(20)]
        path.write_text("\n".join(rows) + "\n")
        raw = load_csv(str(path))
        split = stratified_split(raw, seed=0)
        assert len(split.train) == 12

    def test_event_rate_balance_on_larger_data(self, data_dir):
        raw = load_csv(os.path.join(data_dir, "zinc.csv"))
        overall = np.mean([r.event for r in raw.rows])
        split = stratified_split(raw, seed=1)
        for part in (split.train, split.validation, split.test):
            assert abs(part.e.mean() - overall) <= 0.05

    def test_codec_fitted_on_train_only(self, tmp_path):
        raw = self._toy(tmp_path)
        split = stratified_split(raw, seed=2)
        train_rows = [raw.rows[i] for i in split.train_idx]
        refit = fit_codec(train_rows, raw.fac_columns, raw.num_columns)
        assert refit.num_stats == split.codec.num_stats
