"""Verification suites: positive verdicts, negative controls, report shape."""

import pytest

from shelab.verify import SUITES, run_suite


@pytest.fixture(scope="module")
def battery():
    # one full positive battery shared by every test in this module
    return run_suite("all", seed=0)


class TestFullBattery:
    def test_aggregate_verdict(self, battery):
        assert battery["suite"] == "all"
        assert battery["all_pass"] is True
        assert [r["suite"] for r in battery["suites"]] == list(SUITES)

    @pytest.mark.parametrize("name", SUITES)
    def test_suite_report_shape(self, battery, name):
        rep = next(r for r in battery["suites"] if r["suite"] == name)
        assert rep["negative_control"] is False
        assert rep["elapsed_s"] >= 0.0
        assert rep["checks"] and all("name" in c and "pass" in c
                                     for c in rep["checks"])
        assert rep["all_pass"] is True

    def test_unknown_suite_rejected(self):
        with pytest.raises(ValueError, match="unknown suite"):
            run_suite("nosuch")


class TestRuinRecorded:
    def test_mass_passage_is_reported_not_gated(self, battery):
        rep = next(r for r in battery["suites"] if r["suite"] == "ruin")
        rec = rep["recorded"][0]
        assert rec["experiment"] == "mass_process_passage"
        assert 0.0 <= rec["hit_upper_fraction"] <= 1.0
        assert rec["n_paths"] == 200
        assert "pass" not in rec  # informational only
        gated = {c["name"] for c in rep["checks"]}
        assert "mass_process_passage" not in gated


class TestNegativeControls:
    """Each control corrupts one load-bearing ingredient; the suite must
    notice.  A control that passes would mean the check has no teeth."""

    @pytest.mark.parametrize("name,expected_failure", [
        ("jensen", "margin_corpus"),
        ("ruin", "brownian_ruin_L5"),
        ("scaling", "distribution_match"),
        ("splitting", "sum_distribution_match"),
        ("gw", "fixed_point_matches_simulation"),
        ("mild", "zero_noise_first_order"),
    ])
    def test_control_fails_where_expected(self, name, expected_failure):
        rep = run_suite(name, negative_control=True, seed=0)
        assert rep["negative_control"] is True
        assert not rep["all_pass"]
        failing = {c["name"] for c in rep["checks"] if not c["pass"]}
        assert expected_failure in failing
