from __future__ import annotations

import numpy as np
import pytest

from mswt.errors import ConfigError, NumericalError
from mswt.gradcheck import SUITES, assert_gradcheck, gradcheck, run_suite, weighted_sum
from mswt.tensor import Function, Tensor, parameter, tensor_sum


class _WrongSquare(Function):
    """Square with a backward that forgets the factor two."""

    def forward(self, a: np.ndarray) -> np.ndarray:
        self.a = a
        return a * a

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad * self.a,)


def test_weighted_sum_is_repeatable(rng: np.random.Generator) -> None:
    out = Tensor(rng.standard_normal((3, 4)))
    assert weighted_sum(out, 5).item() == weighted_sum(out, 5).item()
    assert weighted_sum(out, 5).item() != weighted_sum(out, 6).item()


def test_wrong_backward_is_caught(rng: np.random.Generator) -> None:
    x = parameter(rng.uniform(0.5, 1.5, 6))
    report = gradcheck(lambda: tensor_sum(_WrongSquare.apply(x)), [x], name="wrong")
    assert not report.passed
    assert report.checked == 6
    with pytest.raises(NumericalError, match="wrong"):
        assert_gradcheck(lambda: tensor_sum(_WrongSquare.apply(x)), [x], name="wrong")


def test_inputs_must_require_gradients() -> None:
    with pytest.raises(ConfigError):
        gradcheck(lambda: tensor_sum(Tensor(np.ones(2))), [Tensor(np.ones(2))])


def test_gradcheck_leaves_inputs_unchanged(rng: np.random.Generator) -> None:
    x = parameter(rng.standard_normal(5))
    before = x.data.copy()
    gradcheck(lambda: weighted_sum(x * x, 1), [x])
    np.testing.assert_array_equal(x.data, before)


@pytest.mark.parametrize("suite", SUITES)
def test_suites_pass(suite: str) -> None:
    reports = run_suite(suite, max_checks=6)
    assert reports
    failing = [(report.name, report.worst_rel) for report in reports if not report.passed]
    assert failing == []


def test_unknown_suite() -> None:
    with pytest.raises(ConfigError):
        run_suite("optim")
