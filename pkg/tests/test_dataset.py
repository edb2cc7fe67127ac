import numpy as np
import pytest

from jointimpute.dataset import (
    ResponsePattern,
    SurveyDataset,
    Unit,
    load_dataset,
    partition_by_class_and_pattern,
    pattern_of,
    save_dataset,
)
from jointimpute.errors import DataError

from conftest import make_dataset, random_fixture


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadDataset:
    def test_basic_parse_with_missing_y(self, tmp_path):
        path = write(tmp_path,
                     "id,weight,class,x,y\n"
                     "a,10,1,0,1\n"
                     "b,10,1,1,\n"
                     "c,10,1,0,0\n"
                     "d,10,1,1,\n")
        data = load_dataset(path, schema={"population_size": 40})
        assert data.n == 4
        patterns = [pattern_of(u) for u in data.units]
        assert patterns.count(ResponsePattern.RM) == 2
        assert data.x_categories == 2 and data.y_categories == 2

    def test_non_positive_weight_reports_row(self, tmp_path):
        path = write(tmp_path,
                     "id,weight,class,x,y\na,-1,1,0,1\nb,10,1,1,0\n")
        with pytest.raises(DataError, match="non-positive weight at row 2"):
            load_dataset(path, schema={"population_size": 10})

    def test_category_out_of_declared_range(self, tmp_path):
        path = write(tmp_path,
                     "id,weight,class,x,y\na,1,1,0,0\nb,1,1,1,0\nc,1,1,2,0\n")
        with pytest.raises(DataError, match="category out of range"):
            load_dataset(path, schema={"population_size": 3, "x_categories": 2})

    def test_duplicate_id(self, tmp_path):
        path = write(tmp_path, "id,weight,class,x,y\na,1,1,0,0\na,1,1,1,0\n")
        with pytest.raises(DataError, match="duplicate id"):
            load_dataset(path, schema={"population_size": 2})

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="input not found"):
            load_dataset(tmp_path / "nope.csv")

    def test_malformed_row_number(self, tmp_path):
        path = write(tmp_path, "id,weight,class,x,y\na,1,1,0,0\nb,oops,1,1\n")
        with pytest.raises(DataError, match="row 3"):
            load_dataset(path, schema={"population_size": 2})

    def test_population_size_required(self, tmp_path):
        path = write(tmp_path, "id,weight,class,x,y\na,1,1,0,0\n")
        with pytest.raises(DataError, match="population size required"):
            load_dataset(path)

    def test_sidecar_schema_auto_loaded(self, tmp_path):
        path = write(tmp_path, "id,weight,class,x,y\na,2,1,0,1\n")
        (tmp_path / "data.csv.schema.json").write_text(
            '{"population_size": 6, "x_categories": 3, "y_categories": 2}')
        data = load_dataset(path)
        assert data.population_size == 6
        assert data.x_categories == 3

    def test_column_mapping(self, tmp_path):
        path = write(tmp_path, "uid,w,grp,x,y\na,2,1,0,1\n")
        data = load_dataset(path, schema={
            "population_size": 4,
            "columns": {"id": "uid", "weight": "w", "class": "grp"}})
        assert data.n == 1 and data.weights[0] == 2.0


class TestPatternOf:
    def test_two_variable_patterns(self):
        assert pattern_of(Unit("a", 1.0, 1, 1, None)) is ResponsePattern.RM
        assert pattern_of(Unit("a", 1.0, 1, None, None)) is ResponsePattern.MM
        assert pattern_of(Unit("a", 1.0, 1, 0, 1)) is ResponsePattern.RR
        assert pattern_of(Unit("a", 1.0, 1, None, 0)) is ResponsePattern.MR

    def test_three_variable_pattern(self):
        u = Unit("a", 1.0, 1, 0, 1, z=None, z_missing=True)
        assert pattern_of(u) is ResponsePattern.RRM
        u = Unit("a", 1.0, 1, None, None, z=2)
        assert pattern_of(u) is ResponsePattern.MMR

    def test_round_trip_with_flags(self):
        for name in ("rr", "rm", "mr", "mm"):
            pat = ResponsePattern(name)
            u = Unit("a", 1.0, 1,
                     0 if pat.x_observed else None,
                     0 if pat.y_observed else None)
            assert pattern_of(u) is pat


class TestPartition:
    def test_counts_include_empty_sets(self):
        data = make_dataset([
            ("a", 1, 1, 1, 1), ("b", 1, 1, 0, 0),
            ("c", 1, 1, None, 1), ("d", 1, 1, None, None),
        ], population_size=8)
        part = partition_by_class_and_pattern(data)
        sizes = part.sizes()
        assert sizes[(1, ResponsePattern.RR)] == 2
        assert sizes[(1, ResponsePattern.RM)] == 0
        assert sizes[(1, ResponsePattern.MR)] == 1
        assert sizes[(1, ResponsePattern.MM)] == 1

    def test_empty_dataset(self):
        data = SurveyDataset(
            ids=[], weights=[], groups=[], x=[], x_missing=[],
            y=[], y_missing=[], population_size=1,
            x_categories=2, y_categories=2)
        assert partition_by_class_and_pattern(data).index_sets == {}

    def test_two_classes(self):
        data = make_dataset([("a", 1, 1, 1, 1), ("b", 1, 2, 0, 0)],
                            population_size=4)
        part = partition_by_class_and_pattern(data)
        nonempty = {k for k, v in part.index_sets.items() if len(v)}
        assert nonempty == {(1, ResponsePattern.RR), (2, ResponsePattern.RR)}

    def test_disjoint_exhaustive_and_weighted(self):
        for seed in range(20):
            data = random_fixture(seed)
            part = partition_by_class_and_pattern(data)
            all_idx = np.concatenate([v for v in part.index_sets.values()
                                      if len(v)]) if part.index_sets else []
            assert sorted(all_idx) == list(range(data.n))
            assert sum(part.sizes().values()) == data.n
            for key, idx in part.index_sets.items():
                assert part.weight_totals[key] == pytest.approx(
                    data.weights[idx].sum())


class TestRoundTrip:
    def test_save_load_identity(self, tmp_path):
        for seed in (0, 1, 2):
            data = random_fixture(seed)
            path = tmp_path / f"rt{seed}.csv"
            save_dataset(data, path)
            back = load_dataset(path)
            assert back.equals(data)

    def test_save_load_identity_three_items(self, tmp_path):
        data = make_dataset([
            ("a", 1.5, 1, 1, 0, 2), ("b", 2.0, 1, None, 1, None),
            ("c", 3.25, 2, 0, None, 1),
        ], population_size=12, z_categories=3)
        path = tmp_path / "z.csv"
        save_dataset(data, path)
        back = load_dataset(path)
        assert back.equals(data)
        assert back.z_categories == 3


class TestValidation:
    def test_weights_positive(self):
        with pytest.raises(DataError, match="non-positive weight"):
            make_dataset([("a", 0.0, 1, 0, 0)], population_size=2)

    def test_arrays_frozen(self):
        data = make_dataset([("a", 1, 1, 0, 0)], population_size=2)
        with pytest.raises(ValueError):
            data.weights[0] = 3.0

    def test_subset_keeps_metadata(self):
        data = random_fixture(5)
        sub = data.subset([0, 1])
        assert sub.population_size == data.population_size
        assert sub.x_categories == data.x_categories
        assert sub.n == 2
