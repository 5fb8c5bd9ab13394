from __future__ import annotations

import pytest
import torch

from jndscope import selftest


def test_brute_force_window_reference():
    assert selftest.brute_force_window((1, 1, 0, 0, 0), 1, 2, 0) == 3
    assert selftest.brute_force_window((1, 1, 1), 1, 2, 0) is None
    assert selftest.brute_force_window((1, 0, 1, 0), 10, 1, 1) == 10


def test_relative_gradient_error_on_quadratic():
    x = torch.tensor([1.0, -2.0, 0.5], dtype=torch.float64, requires_grad=True)
    assert selftest.relative_gradient_error(lambda: (x**2).sum(), x) < 1e-8


@pytest.mark.parametrize(
    "check",
    [
        lambda: selftest._attention_rows(instances=50),
        lambda: selftest._search_oracle(length=8, max_window=3),
        selftest._naive_round_trip,
        selftest._csa_gradient,
        selftest._mlp_gradient,
        selftest._aggregation_scale,
        lambda: selftest._patch_alignment(calls=40),
        selftest._metric_closed_forms,
    ],
)
def test_individual_checks_pass(check):
    assert check()


def test_failures_become_rows(mocker):
    mocker.patch.object(
        selftest,
        "CHECKS",
        (("ok", lambda: "fine"), ("broken", lambda: (_ for _ in ()).throw(AssertionError("boom")))),
    )
    events = []
    results = selftest.run_selftest(lambda stage, position, total, name: events.append((stage, name)))
    assert [(r.name, r.passed) for r in results] == [("ok", True), ("broken", False)]
    assert results[1].detail == "AssertionError: boom"
    assert events == [("start", "ok"), ("end", "ok"), ("start", "broken"), ("end", "broken")]


@pytest.mark.slow
def test_full_suite_passes():
    results = selftest.run_selftest()
    assert [r.name for r in results] == [name for name, _ in selftest.CHECKS]
    failed = [f"{r.name}: {r.detail}" for r in results if not r.passed]
    assert not failed
