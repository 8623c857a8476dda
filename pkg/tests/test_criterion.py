import numpy as np
import pytest

from families import FLAT, LINEAR
from mavdesign.criterion import (
    CriterionProblem,
    PriorAtom,
    PriorSpec,
    bias_nu,
    fisher_point,
    h_vector,
    info_matrix,
    L_matrix,
    phi_bayes,
    phi_local,
    variance_tau2,
)
from mavdesign.errors import SingularInformationError, ValidationError
from mavdesign.models import (
    LOGISTIC4,
    SIGMOID_EMAX,
    AveragingScheme,
    Design,
    DesignSpace,
    Misspecification,
    ParamVector,
    build_candidate,
)
from mavdesign.targets import AUC, ED, PointMean, target_grad_full
from oracles import dense_criterion, emax_eta, wide_info_oracle

SPACE = DesignSpace(0.0, 8.0)
NOMINAL = ParamVector(4.5, (1.81, 0.79), (0.0, 1.0))
SCHEME = AveragingScheme(((), (2,), (1,), (1, 2)), (0.25,) * 4)
MISSPEC = Misspecification.from_scaled((0.1, 1.0), 150)
XI_1 = Design.uniform((0.0, 2.0, 4.0, 6.0, 8.0))


def test_fisher_point_block_structure():
    cand = build_candidate(FLAT, ())
    J = fisher_point(cand, 3.0, ParamVector(1.0, (0.3, 0.4), ()))
    np.testing.assert_array_equal(J, [[0.5, 0, 0], [0, 1, 2], [0, 2, 4]])


def test_fisher_scaling_in_sigma2():
    cand = build_candidate(SIGMOID_EMAX, (1, 2))
    J1 = fisher_point(cand, 2.0, NOMINAL)
    J3 = fisher_point(cand, 2.0, NOMINAL.replace(sigma2=3 * 4.5))
    assert J3[0, 0] == pytest.approx(J1[0, 0] / 9, rel=1e-14)
    np.testing.assert_allclose(J3[1:, 1:], J1[1:, 1:] / 3, rtol=1e-14)


def test_wide_information_against_gauss_hermite_oracle():
    wide = build_candidate(SIGMOID_EMAX, (1, 2))
    J = info_matrix(wide, XI_1, NOMINAL)
    oracle = wide_info_oracle(emax_eta, XI_1.points, XI_1.weights, 4.5, NOMINAL.mean_params)
    np.testing.assert_allclose(J, oracle, rtol=1e-8, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(J) > 0)


def _dense(scheme, family, design, params, misspec, target):
    wide = build_candidate(family, range(1, family.q + 1))
    J = info_matrix(wide, design, params)
    c = target_grad_full(target, family, params)
    subsets = [s.indices for s in scheme.candidates]
    return dense_criterion(J, c, np.asarray(misspec.delta), subsets, scheme.g_weights, family.p)


def test_narrow_variance_against_dense_oracle():
    narrow = AveragingScheme(((),), (1.0,))
    target = ED(0.6, SPACE)
    tau2 = variance_tau2(narrow, SIGMOID_EMAX, XI_1, NOMINAL, target)
    _, tau2_o, _ = _dense(narrow, SIGMOID_EMAX, XI_1, NOMINAL, MISSPEC, target)
    assert tau2 == pytest.approx(tau2_o, rel=1e-10)
    h = h_vector(build_candidate(SIGMOID_EMAX, ()), XI_1, NOMINAL, target)
    assert h[3] == 0.0 and h[4] == 0.0


def test_scheme_at_single_atom_against_dense_oracle():
    target = ED(0.6, SPACE)
    nu = bias_nu(SCHEME, SIGMOID_EMAX, XI_1, NOMINAL, MISSPEC, target)
    tau2 = variance_tau2(SCHEME, SIGMOID_EMAX, XI_1, NOMINAL, target)
    phi = phi_local(SCHEME, SIGMOID_EMAX, XI_1, NOMINAL, MISSPEC, target)
    nu_o, tau2_o, phi_o = _dense(SCHEME, SIGMOID_EMAX, XI_1, NOMINAL, MISSPEC, target)
    assert nu == pytest.approx(nu_o, rel=1e-10)
    assert tau2 == pytest.approx(tau2_o, rel=1e-10)
    assert phi == pytest.approx(phi_o, rel=1e-10)


def test_wide_candidate_is_unbiased():
    wide_only = AveragingScheme(((1, 2),), (1.0,))
    assert bias_nu(wide_only, SIGMOID_EMAX, XI_1, NOMINAL, MISSPEC, AUC((0, 8))) == pytest.approx(0.0, abs=1e-10)
    L = L_matrix(build_candidate(SIGMOID_EMAX, (1, 2)), XI_1, NOMINAL)
    np.testing.assert_allclose(L, 0.0, atol=1e-10)


def test_linear_closed_form():
    scheme = AveragingScheme(((),), (1.0,))
    params = ParamVector(2.0, (1.5,), ())
    design = Design((1.0, 4.0, 8.0), (0.2, 0.3, 0.5))
    phi = phi_local(scheme, LINEAR, design, params, Misspecification((), 1), PointMean(1.0))
    assert phi == pytest.approx(2.0 / (0.2 * 1 + 0.3 * 16 + 0.5 * 64), rel=1e-13)


def test_optimal_design_beats_uniform_at_one_atom(xi_star_a):
    target = ED(0.6, SPACE)
    assert phi_local(SCHEME, SIGMOID_EMAX, xi_star_a, NOMINAL, MISSPEC, target) < phi_local(SCHEME, SIGMOID_EMAX, XI_1, NOMINAL, MISSPEC, target)


def test_bayesian_criterion_orders_the_bundled_designs(emax_sc, xi_star_a, xi_1, xi_2):
    phis = [phi_bayes(emax_sc.scheme, emax_sc.family, d, emax_sc.prior, emax_sc.target).phi for d in (xi_star_a, xi_1, xi_2)]
    assert phis[0] < phis[1] and phis[0] < phis[2]


def test_bayesian_criterion_is_the_weighted_atom_average(emax_sc, xi_1):
    rep = phi_bayes(emax_sc.scheme, emax_sc.family, xi_1, emax_sc.prior, emax_sc.target)
    local = [phi_local(emax_sc.scheme, emax_sc.family, xi_1, a.params, emax_sc.misspec, emax_sc.target) for a in emax_sc.prior.atoms]
    assert rep.phi == pytest.approx(np.mean(local), rel=1e-13)
    assert len(rep.nu_by_atom) == 9


def test_too_few_points_is_singular():
    with pytest.raises(SingularInformationError):
        phi_local(SCHEME, SIGMOID_EMAX, Design((0.0, 8.0), (0.5, 0.5)), NOMINAL, MISSPEC, ED(0.6, SPACE))


def test_prior_validation():
    with pytest.raises(ValidationError):
        PriorSpec((PriorAtom(NOMINAL, 0.5),), MISSPEC)
    with pytest.raises(ValidationError):
        CriterionProblem(SCHEME, SIGMOID_EMAX, PriorSpec.single(NOMINAL, Misspecification((1.0,), 150)), AUC((0, 8)))


@pytest.mark.parametrize("target, rel", [(AUC((0, 8)), 1e-12), (PointMean(3.0), 1e-12), (ED(0.6, SPACE), 1e-9)])
@pytest.mark.parametrize("family, base", [(SIGMOID_EMAX, NOMINAL), (LOGISTIC4, ParamVector(4.5, (-1.73, 4.0), (0.0, 1.0)))])
def test_criterion_ignores_the_intercept(target, rel, family, base):
    # ED re-solves a root on every finite-difference step, so a shifted
    # intercept changes the rounding and only agrees to about 1e-10.
    design = Design((0.0, 1.0, 2.5, 4.0, 8.0), (0.1, 0.2, 0.3, 0.2, 0.2))
    shifted = base.replace(gamma=(3.7, base.gamma[1]))
    for cand in SCHEME.build(family):
        np.testing.assert_allclose(info_matrix(cand, design, shifted), info_matrix(cand, design, base), rtol=1e-12)
        np.testing.assert_allclose(h_vector(cand, design, shifted, target), h_vector(cand, design, base, target), rtol=rel, atol=1e-12)
    a = phi_local(SCHEME, family, design, base, MISSPEC, target)
    b = phi_local(SCHEME, family, design, shifted, MISSPEC, target)
    assert b == pytest.approx(a, rel=rel)


def test_criterion_depends_on_the_emax_scale(emax_sc, xi_star_a):
    # The mean gradient columns of vartheta2 and gamma2 scale with vartheta1
    # while the intercept column does not, so vartheta1 does not cancel.
    def phi_with(t1):
        atoms = tuple(PriorAtom(a.params.replace(vartheta=(t1, a.params.vartheta[1])), a.weight) for a in emax_sc.prior.atoms)
        prior = PriorSpec(atoms, emax_sc.misspec)
        return CriterionProblem(emax_sc.scheme, emax_sc.family, prior, emax_sc.target).phi(xi_star_a.x, xi_star_a.w)

    assert phi_with(1.81) == pytest.approx(145.3625, rel=1e-6)
    assert phi_with(3.62) < 0.5 * phi_with(1.81)
