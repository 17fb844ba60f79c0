import numpy as np
import pytest

from delight import autodiff as ad
from delight.autodiff import Tensor
from delight.gradcheck import GradcheckReport, check, gradcheck, relative_error


@pytest.mark.parametrize("component", ["primitives", "glt", "shuffle+mixer", "attention", "light_ffn"])
def test_cheap_components_pass(component):
    report = gradcheck(component)
    assert report.passed, report.summary()


def test_dextra_sampled_entries_pass():
    assert gradcheck("dextra", max_entries=8).passed


def test_failing_report_names_the_parameter():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)

    def broken():
        out = ad.sum_(x * x)
        # corrupt the backward pass
        out._backward = lambda g: (np.zeros(2),)
        return out

    report = check(broken, {"weights": x})
    assert not report.passed and report.failures == ["weights"]
    assert "weights" in report.summary()


def test_zero_parameter_model_vacuously_passes():
    report = check(lambda: ad.sum_(Tensor(np.ones(3))), {})
    assert report.passed and report.max_error == 0.0


def test_relative_error_floor():
    assert relative_error(np.array([1e-12]), np.array([0.0])) < 1e-5
    assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)
    assert GradcheckReport("x", 1e-4).passed


def test_unknown_component():
    with pytest.raises(ValueError):
        gradcheck("transformer")
