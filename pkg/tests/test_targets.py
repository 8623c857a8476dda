import numpy as np
import pytest

from mavdesign.errors import DegenerateEffectError, ValidationError
from mavdesign.models import LOGISTIC4, SIGMOID_EMAX, DesignSpace, ParamVector, build_candidate
from mavdesign.targets import AUC, ED, PointMean, eval_target, target_grad_full, target_grad_sub, validate_target
from oracles import emax_auc_hill1, emax_ed_closed, logistic_auc_closed, logistic_ed_closed, richardson_grad

SPACE = DesignSpace(0.0, 8.0)
NOMINAL = ParamVector(4.5, (1.81, 0.79), (0.0, 1.0))


def test_auc_of_constant_mean():
    pv = ParamVector(1.0, (0.0, 0.79), (2.5, 1.0))
    assert eval_target(AUC((0, 8)), SIGMOID_EMAX, pv) == pytest.approx(8 * 2.5, rel=1e-14)


def test_auc_michaelis_menten_closed_form():
    val = eval_target(AUC((0, 8)), SIGMOID_EMAX, NOMINAL)
    assert val == pytest.approx(emax_auc_hill1(1.81, 0.79, 0.0, 0.0, 8.0), rel=1e-12)
    assert val == pytest.approx(11.035, abs=5e-4)


def test_auc_logistic_closed_form():
    pv = ParamVector(4.5, (-1.73, 4.0), (0.015, 0.833))
    assert eval_target(AUC((0, 8)), LOGISTIC4, pv) == pytest.approx(logistic_auc_closed(-1.73, 4.0, 0.015, 0.833, 0.0, 8.0), rel=1e-12)


@pytest.mark.parametrize("family, params", [(SIGMOID_EMAX, ParamVector(1.0, (1.81, 0.79), (0.1, 2.0))), (LOGISTIC4, ParamVector(1.0, (-1.73, 4.0), (0.0, 0.6)))])
def test_auc_quadrature_against_fine_trapezoid(family, params):
    x = np.linspace(0.0, 8.0, 1_000_001)
    y = family.mean(x, np.array(params.vartheta), np.array(params.gamma))
    trap = float(np.trapezoid(y, x)) if hasattr(np, "trapezoid") else float(np.trapz(y, x))
    assert eval_target(AUC((0, 8)), family, params) == pytest.approx(trap, rel=1e-8)


def test_ed_michaelis_menten_closed_form():
    # 0.79 * v / (1 - v) with v = 0.6 * 8 / 8.79, i.e. 0.79 * 4.8 / 3.99
    assert eval_target(ED(0.6, SPACE), SIGMOID_EMAX, NOMINAL) == pytest.approx(0.79 * 4.8 / 3.99, abs=1e-8)
    assert eval_target(ED(0.6, SPACE), SIGMOID_EMAX, NOMINAL) == pytest.approx(emax_ed_closed(0.6, 0.79, 1.0, 0.0, 8.0), abs=1e-8)


@pytest.mark.parametrize("alpha", [0.05, 0.3, 0.6, 0.95])
@pytest.mark.parametrize("t2, g2", [(0.79, 2.0), (2.79, 3.0), (1.79, 0.7)])
def test_ed_sigmoid_emax_closed_form(alpha, t2, g2):
    pv = ParamVector(1.0, (1.81, t2), (0.3, g2))
    assert eval_target(ED(alpha, SPACE), SIGMOID_EMAX, pv) == pytest.approx(emax_ed_closed(alpha, t2, g2, 0.0, 8.0), abs=1e-8)


@pytest.mark.parametrize("t1", [-1.73, 2.0])
def test_ed_logistic_closed_form(t1):
    pv = ParamVector(1.0, (t1, 4.0), (0.0, 5 / 6))
    assert eval_target(ED(0.4, SPACE), LOGISTIC4, pv) == pytest.approx(logistic_ed_closed(0.4, 4.0, 5 / 6, 0.0, 8.0), abs=1e-8)


def test_ed_of_flat_curve_is_degenerate():
    with pytest.raises(DegenerateEffectError):
        eval_target(ED(0.5, SPACE), SIGMOID_EMAX, ParamVector(1.0, (0.0, 0.79), (0.0, 1.0)))


def test_ed_gradient_against_richardson_oracle():
    pv = ParamVector(4.5, (1.81, 0.79), (0.0, 1.0))

    def ed(th):
        return emax_ed_closed(0.6, th[1], th[3], 0.0, 8.0)

    oracle = richardson_grad(ed, pv.mean_params, h=1e-3)
    got = target_grad_full(ED(0.6, SPACE), SIGMOID_EMAX, pv)
    assert got[0] == 0.0
    np.testing.assert_allclose(got[1:], oracle, rtol=1e-6, atol=1e-8)


def test_auc_gradient_components():
    g = target_grad_full(AUC((0, 8)), SIGMOID_EMAX, NOMINAL)
    assert g[0] == 0.0
    assert g[3] == pytest.approx(8.0, rel=1e-14)  # intercept integrates to the region length
    oracle = richardson_grad(lambda th: emax_auc_hill1(th[0], th[1], th[2], 0.0, 8.0), np.array([1.81, 0.79, 0.0]))
    np.testing.assert_allclose(g[1:4], oracle, rtol=1e-9)


def test_point_gradient_has_zero_variance_component():
    g = target_grad_full(PointMean(4.0), LOGISTIC4, ParamVector(4.5, (-1.73, 4.0), (0.0, 1.0)))
    assert g[0] == 0.0
    assert g[3] == 1.0


def test_sub_gradient_is_the_projection():
    cand = build_candidate(SIGMOID_EMAX, (2,))
    full = target_grad_full(ED(0.6, SPACE), SIGMOID_EMAX, NOMINAL)
    np.testing.assert_array_equal(target_grad_sub(ED(0.6, SPACE), cand, NOMINAL), full[[0, 1, 2, 4]])


def test_target_validation():
    with pytest.raises(ValidationError):
        ED(1.0, SPACE)
    with pytest.raises(ValidationError):
        AUC((3, 2))
    with pytest.raises(ValidationError):
        validate_target(AUC((0, 9)), SPACE)
    with pytest.raises(ValidationError):
        validate_target(PointMean(9.0), SPACE)
    validate_target(AUC((0, 8)), SPACE)
