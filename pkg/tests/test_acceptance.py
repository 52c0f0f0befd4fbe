"""Acceptance criteria at full scale; one pass/fail line per criterion.

Set ``BURGULENCE_ACCEPTANCE=reduced`` for the quick variant used by
``selftest``.  Tolerances are identical in both modes.
"""
import os

import pytest

from burgulence.checks import AcceptanceSuite, SuiteScale, determinism_runs, exact_suite, scheme_suite

SCALE = SuiteScale.reduced() if os.environ.get("BURGULENCE_ACCEPTANCE") == "reduced" else SuiteScale()


@pytest.fixture(scope="module")
def suite():
    return AcceptanceSuite(SCALE)


def _report(capsys, res):
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.line()


def test_criterion_01_exact_properties(capsys):
    _report(capsys, exact_suite())


def test_criterion_02_scheme_validation(capsys):
    _report(capsys, scheme_suite())


def test_criterion_03_sobolev_scaling(suite, capsys):
    _report(capsys, suite.sobolev())


def test_criterion_04_structure_functions(suite, capsys):
    _report(capsys, suite.structure())


def test_criterion_05_flatness(suite, capsys):
    _report(capsys, suite.flatness())


def test_criterion_06_spectrum(suite, capsys):
    _report(capsys, suite.spectrum())


def test_criterion_07_fractional_norms(suite, capsys):
    _report(capsys, suite.fractional())


def test_criterion_08_kruzhkov_bound(suite, capsys):
    _report(capsys, suite.kruzhkov())


def test_criterion_09_two_dimensional_smoke(suite, capsys):
    _report(capsys, suite.two_d())


def test_criterion_10_coupling(suite, capsys):
    _report(capsys, suite.coupling())


def test_criterion_11_determinism(capsys):
    _report(capsys, determinism_runs())
