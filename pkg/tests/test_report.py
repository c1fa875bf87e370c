import csv
import io
import json

import numpy as np

from choice_lab.report import (
    CSV_FIELDS,
    DIFFER,
    STATUS_PRECONDITION,
    STATUS_SKIPPED,
    DerivativeReport,
    combined_se,
    config_hash,
    format_table,
    reports_to_csv,
    reports_to_json,
)


def make(lhs, rhs, se=0.0, **kw):
    lhs = np.atleast_1d(np.asarray(lhs, float))
    return DerivativeReport("t", np.zeros(1), lhs, np.atleast_1d(np.asarray(rhs, float)),
                            np.full(lhs.shape, se), **kw)


class TestPassRule:
    def test_relative_tolerance(self):
        assert make(1.005, 1.0).passed
        assert not make(1.02, 1.0).passed

    def test_absolute_floor(self):
        assert make(1e-9, 0.0).passed

    def test_standard_error_band(self):
        assert make(1.05, 1.0, se=0.02).passed
        assert not make(1.07, 1.0, se=0.02).passed

    def test_all_components_by_default(self):
        assert not make([1.0, 2.0], [1.0, 1.0]).passed
        assert make([1.0, 2.0], [1.0, 1.0], combine="any").passed

    def test_differ_mode(self):
        assert make(0.5, 0.0, se=0.1, mode=DIFFER).passed
        assert not make(0.2, 0.0, se=0.1, mode=DIFFER).passed

    def test_zero_rhs_relative_error(self):
        rep = make(0.1, 0.0)
        assert np.isinf(rep.rel_err[0])
        assert make(0.0, 0.0).rel_err[0] == 0.0

    def test_non_ok_status_is_not_a_failure(self):
        for status in (STATUS_SKIPPED, STATUS_PRECONDITION):
            rep = make(5.0, 1.0, status=status)
            assert not rep.passed
            assert not rep.counts_as_failure
        assert make(5.0, 1.0).counts_as_failure


class TestSerialisation:
    def test_csv_columns_and_rows(self):
        rep = make([1.0, 2.0], [1.0, 2.0]).with_metadata(config_hash="abc", seed=3, draws=100)
        rows = list(csv.DictReader(io.StringIO(reports_to_csv([rep]))))
        assert tuple(rows[0]) == CSV_FIELDS
        assert [r["component"] for r in rows] == ["0", "1"]
        assert rows[0]["seed"] == "3" and rows[0]["pass"] == "true"

    def test_csv_floats_round_trip(self):
        value = 0.1 + 0.2
        rows = list(csv.DictReader(io.StringIO(reports_to_csv([make(value, value)]))))
        assert float(rows[0]["lhs"]) == value

    def test_json_summary(self):
        doc = json.loads(reports_to_json([make(1.0, 1.0), make(3.0, 1.0, status=STATUS_SKIPPED)]))
        text = json.dumps(doc)
        assert "skipped" in text

    def test_table_marks_status(self):
        table = format_table([make(1.0, 1.0), make(3.0, 1.0), make(3.0, 1.0, status=STATUS_SKIPPED)])
        assert "PASS" in table and "FAIL" in table and "skipped" in table


class TestHelpers:
    def test_combined_se(self):
        np.testing.assert_allclose(combined_se(np.array([3.0]), np.array([4.0])), [5.0])

    def test_config_hash_is_order_free(self):
        assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
        assert config_hash({"a": 1}) != config_hash({"a": 2})
        assert len(config_hash({})) == 16
