import numpy as np
import pytest

from conicfinsler import catalog, jets
from conicfinsler.catalog import FactorSpec, MetricSpec
from conicfinsler.conformal import (
    ConformalPoint,
    cartan_transform,
    connection_transforms,
    diagnostics,
    dual_flatness_checks,
    frame_transform,
    gbar_formula,
    identities_check,
    master_equivalence,
    nondegeneracy_check,
    projective_equivalence_check,
    projective_flatness_checks,
    run_checks,
    signature_mask,
    special_case_reports,
    spray_invariance_check,
    spray_transform,
    transformed_objects,
)
from conicfinsler.core import Geometry, SupportElement, frame_at, main_scalar, metric_at, spray_at, vals
from conicfinsler.errors import DeclarationMismatchError, DegenerateTransformError, SignatureFlipError
from conicfinsler.fd_oracle import fd_partial

P0 = SupportElement([0.1, 0.2], [1.0, 0.5])
KLEIN = catalog.get_metric("klein")
QUARTIC = catalog.get_metric("quartic")
CONST = catalog.get_factor("constant")
PHI_4_10 = catalog.get_factor("phi_4_10")


def klein_batch(count=20, seed=0):
    return catalog.sample_points(KLEIN, PHI_4_10, count=count, seed=seed)


# diagnostics --------------------------------------------------------------------------

GOLDEN = {
    "phi2": 0.1117814893621801,
    "phi22": -0.16540895236327222,
    "sigma": -0.14041874963521786,
    "rho": 1.1805174729626098,
    "phi_c1": 0.8194825270373903,
    "phi_c2": -0.020178511983657665,
    "phi_c1_2": -0.13196000134583777,
    "P": 0.5572935190794441,
    "sigma2": -0.131667869451387,
    "rho2": 0.13196000134583782,
    "Ibar": 0.18217860012914325,
}


def test_diagnostics_golden_values():
    d = diagnostics(KLEIN, PHI_4_10, P0)
    for k, v in GOLDEN.items():
        assert getattr(d, k) == pytest.approx(v, rel=1e-10), k
    assert abs(d.Q) <= 1e-15


def test_diagnostics_against_finite_differences():
    d = diagnostics(KLEIN, PHI_4_10, P0)
    fr = frame_at(KLEIN, P0)
    F = KLEIN(P0.x, P0.y)
    grad = [fd_partial(PHI_4_10, P0, idx) for idx in [(0, 0, 1, 0), (0, 0, 0, 1)]]
    assert d.phi2 == pytest.approx(fr.eps * F * np.dot(grad, fr.m_hi), rel=1e-8)
    # sigma + eps - phi2^2 = 1 / rho
    assert d.sigma + fr.eps - d.phi2**2 == pytest.approx(1 / d.rho, rel=1e-14)


def test_homothety_diagnostics():
    u = klein_batch(5)
    d = diagnostics(KLEIN, CONST, u)
    assert np.max(np.abs(d.phi2)) == 0 and np.max(np.abs(d.sigma)) == 0
    np.testing.assert_array_equal(d.rho, 1.0)
    assert np.max(np.abs(d.P)) <= 1e-15 and np.max(np.abs(d.Q)) <= 1e-15


def test_degenerate_factor_raises():
    metric, factor = catalog.resolve("example_2_12")
    u = catalog.sample_points(metric, factor, count=5, seed=1)
    with pytest.raises(DegenerateTransformError) as err:
        diagnostics(metric, factor, u)
    assert np.max(np.abs(err.value.value)) <= 1e-12


def test_constructor_requires_order_six():
    with pytest.raises(ValueError):
        ConformalPoint(KLEIN, PHI_4_10, P0, order=5)


# nondegeneracy ------------------------------------------------------------------------


def test_nondegeneracy_check():
    r = nondegeneracy_check(KLEIN, CONST, P0)
    assert r.verdict == "pass" and r.info["quantity"] == pytest.approx(1.0)
    reports = nondegeneracy_check(KLEIN, PHI_4_10, klein_batch())
    assert all(r.verdict == "pass" and r.info["quantity"] > 0.1 for r in reports)
    assert max(r.residuals["determinant_identity"] for r in reports) <= 1e-12


def test_nondegeneracy_check_reports_degenerate_pair():
    metric, factor = catalog.resolve("example_2_12")
    u = catalog.sample_points(metric, factor, count=5, seed=2)
    for r in nondegeneracy_check(metric, factor, u):
        assert r.verdict == "fail" and "degenerate" in r.reason
        assert abs(r.info["det_bar_relative"]) <= 1e-9


# transformed objects ------------------------------------------------------------------


def test_gbar_formula_matches_direct():
    u = klein_batch()
    g, ginv = gbar_formula(KLEIN, PHI_4_10, u)
    Fbar = catalog.transformed(KLEIN, PHI_4_10)
    direct = metric_at(Fbar, u)
    np.testing.assert_allclose(g, direct.g, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(ginv, direct.g_inv, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(g @ ginv, np.broadcast_to(np.eye(2), g.shape), atol=1e-10)
    cp = ConformalPoint(KLEIN, PHI_4_10, u)
    np.testing.assert_allclose(vals(cp.gbar_general), direct.g, rtol=1e-9, atol=1e-9)


def test_homothety_scales_everything():
    u = klein_batch(5)
    c = catalog.DEFAULT_CONSTANT
    base = Geometry(KLEIN, u, 6)
    g, ginv = gbar_formula(KLEIN, CONST, u)
    np.testing.assert_allclose(g, np.exp(2 * c) * vals(base.g), rtol=1e-14)
    np.testing.assert_allclose(ginv, np.exp(-2 * c) * vals(base.g_inv), rtol=1e-14)
    fr = frame_transform(KLEIN, CONST, u)
    np.testing.assert_allclose(fr.ell_lo, np.exp(c) * vals(base.ell_lo), rtol=1e-14)
    np.testing.assert_allclose(fr.m_lo, np.exp(c) * vals(base.m_lo), rtol=1e-14)
    _, I1, I2, _ = cartan_transform(KLEIN, CONST, u)
    np.testing.assert_allclose(I1, base.main_scalar.value, atol=1e-14)
    np.testing.assert_allclose(I2, base.main_scalar.value, atol=1e-14)
    Gbar, P, Q, _, _ = spray_transform(KLEIN, CONST, u)
    np.testing.assert_allclose(Gbar, vals(base.G), atol=1e-15)
    Gj, Gjk = connection_transforms(KLEIN, CONST, u)
    np.testing.assert_allclose(Gj, vals(base.G_j), atol=1e-14)
    np.testing.assert_allclose(Gjk, vals(base.G_jk), atol=1e-14)


def test_frame_transform_matches_direct_up_to_sign():
    u = klein_batch()
    fr = frame_transform(KLEIN, PHI_4_10, u)
    direct = frame_at(catalog.transformed(KLEIN, PHI_4_10), u)
    np.testing.assert_allclose(fr.ell_lo, direct.ell_lo, rtol=1e-9)
    np.testing.assert_allclose(fr.ell_hi, direct.ell_hi, rtol=1e-9)
    sign = np.sign(np.einsum("...i,...i->...", fr.m_lo, direct.m_lo))[:, None]
    np.testing.assert_allclose(fr.m_lo, sign * direct.m_lo, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(fr.m_hi, sign * direct.m_hi, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(np.einsum("...i,...i->...", fr.m_lo, fr.m_hi), fr.eps, atol=1e-10)
    np.testing.assert_allclose(np.einsum("...i,...i->...", fr.ell_lo, fr.m_hi), 0.0, atol=1e-10)


def test_main_scalar_three_ways():
    u = catalog.sample_points(QUARTIC, PHI_4_10, count=20, seed=3)
    keep = signature_mask(ConformalPoint(QUARTIC, PHI_4_10, u))
    assert 5 <= keep.sum() < len(u)
    with pytest.raises(SignatureFlipError):
        cartan_transform(QUARTIC, PHI_4_10, u)
    u = u[keep]
    _, I1, I2, _ = cartan_transform(QUARTIC, PHI_4_10, u)
    direct = main_scalar(catalog.transformed(QUARTIC, PHI_4_10), u)
    scale = np.maximum(np.abs(direct), 1.0)
    assert np.max(np.abs(I1 - I2) / scale) <= 1e-8
    assert np.max(np.abs(I1 - direct) / scale) <= 1e-8


def test_riemannian_preserved_by_x_only_factor():
    # rho = eps and phi2 = 0, so 4 rho phi2 - rho2 = 0 and I-bar = sqrt(eps rho) I = 0
    u = klein_batch(5)
    Cbar, I1, I2, riem = cartan_transform(KLEIN, catalog.get_factor("x_only"), u)
    assert np.max(np.abs(riem)) <= 1e-14
    assert np.max(np.abs(I1)) <= 1e-12 and np.max(np.abs(I2)) <= 1e-12 and np.max(np.abs(Cbar)) <= 1e-12


def test_spray_transform_for_invariant_factor():
    metric, factor = catalog.resolve("example_3_12")
    u = catalog.sample_points(metric, factor, count=10, seed=4)
    Gbar, P, Q, P_long, Q_long = spray_transform(metric, factor, u)
    a = np.array(catalog.DEFAULT_A)
    exact = -(u.y @ a / (1 + u.x @ a))[:, None] * u.y
    np.testing.assert_allclose(Gbar, exact, rtol=1e-9, atol=1e-10)
    F2 = Geometry(metric, u, 2).F2.value
    for v in (P, Q, P_long, Q_long):
        assert np.max(np.abs(v) / F2) <= 1e-9
    Gj, Gjk = connection_transforms(metric, factor, u)
    base = spray_at(metric, u)
    np.testing.assert_allclose(Gj, base.G_j, rtol=1e-8, atol=1e-9)
    np.testing.assert_allclose(Gjk, base.G_jk, rtol=1e-8, atol=1e-9)


def test_long_forms_of_P_and_Q():
    _, P, Q, P_long, Q_long = spray_transform(QUARTIC, PHI_4_10, catalog.sample_points(QUARTIC, count=10, seed=5))
    np.testing.assert_allclose(P_long, P, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(Q_long, Q, rtol=1e-9, atol=1e-12)


def test_connection_transforms_match_direct():
    Gj, Gjk = connection_transforms(KLEIN, PHI_4_10, P0)
    direct = spray_at(catalog.transformed(KLEIN, PHI_4_10), P0)
    assert np.max(np.abs(Gj - direct.G_j)) / np.max(np.abs(direct.G_j)) <= 1e-7
    assert np.max(np.abs(Gjk - direct.G_jk)) / np.max(np.abs(direct.G_jk)) <= 1e-7


def test_transformed_objects_bundle():
    t = transformed_objects(KLEIN, PHI_4_10, P0)
    direct = Geometry(catalog.transformed(KLEIN, PHI_4_10), P0, 6)
    np.testing.assert_allclose(t.gbar, vals(direct.g), rtol=1e-9)
    np.testing.assert_allclose(t.Cbar, vals(direct.cartan), rtol=1e-8, atol=1e-10)
    assert t.Ibar == pytest.approx(direct.main_scalar.value, rel=1e-8)
    np.testing.assert_allclose(t.Gbar, vals(direct.G), rtol=1e-8)


def test_transformed_objects_scale_like_the_originals(rng):
    u = catalog.sample_points(QUARTIC, PHI_4_10, count=5, seed=6)
    lam = rng.uniform(0.5, 2.0, size=len(u))
    a = transformed_objects(QUARTIC, PHI_4_10, u)
    b = transformed_objects(QUARTIC, PHI_4_10, u.scaled(lam))
    for name, power in [("gbar", 0), ("Ibar", 0), ("Gbar", 2), ("Gbar_j", 1), ("Gbar_jk", 0), ("Cbar", -1)]:
        x, y = getattr(b, name), getattr(a, name)
        s = lam.reshape((-1,) + (1,) * (np.ndim(y) - 1)) ** power
        assert np.max(np.abs(x - s * y)) <= 1e-8 * max(1.0, np.max(np.abs(y))), name


# checks -------------------------------------------------------------------------------


def test_invariance_and_projective_equivalence_for_klein_to_funk():
    r = spray_invariance_check(KLEIN, PHI_4_10, P0)
    assert r.verdict == "fail" and r.residuals["delta_phi"] > 0.1 and r.residuals["PQ"] > 0.1
    assert r.info["one_sided"] == 0 and r.info["chain_violation"] == 0
    r = projective_equivalence_check(KLEIN, PHI_4_10, P0)
    assert r.verdict == "pass" and r.info["spray_form"] <= 1e-12


def test_invariance_for_invariant_and_constant_factors():
    metric, factor = catalog.resolve("example_3_12")
    u = catalog.sample_points(metric, factor, count=10, seed=7)
    assert all(r.verdict == "pass" for r in spray_invariance_check(metric, factor, u))
    assert all(r.verdict == "pass" for r in projective_equivalence_check(metric, factor, u))
    assert all(r.verdict == "pass" for r in spray_invariance_check(KLEIN, CONST, klein_batch(5)))


def test_projective_flatness_checks():
    r = projective_flatness_checks(KLEIN, PHI_4_10, P0)
    assert r.verdict == "pass" and r.info["flat"] == 1.0
    assert r.info["hamel_bar"] <= 1e-12 and r.info["necessary"] <= 1e-12
    # flat although the sufficient condition fails
    assert r.info["sufficient"] == pytest.approx(1.197554126349919, rel=1e-10)
    r = projective_flatness_checks(KLEIN, CONST, P0)
    assert max(r.info["necessary"], r.info["hamel_bar"], r.info["condition"]) <= 1e-12


def test_sufficient_condition_branch():
    metric, factor = catalog.resolve("sufficiency_klein")
    u = catalog.sample_points(metric, factor, count=10, seed=8)
    for r in projective_flatness_checks(metric, factor, u) + dual_flatness_checks(metric, factor, u):
        assert r.verdict == "pass" and r.info["sufficient"] <= 1e-12 and r.info["flat"] == 1.0


def test_dual_flatness_necessary_condition_forms():
    r = dual_flatness_checks(KLEIN, PHI_4_10, P0)
    assert r.verdict == "pass" and r.info["dual_bar"] <= 1e-12
    assert r.info["dual"] == pytest.approx(0.24439918533604882, rel=1e-10)
    assert r.info["necessary"] <= 1e-12
    # the printed expression does not vanish on this dually flat pair
    assert r.info["necessary_printed"] == pytest.approx(0.040357023967314845, rel=1e-8)
    e = catalog.get_metric("euclidean")
    r = dual_flatness_checks(e, CONST, P0)
    assert r.verdict == "pass" and max(r.info["dual_bar"], r.info["dual"], r.info["necessary"]) == 0


def test_special_cases():
    u = klein_batch(10)
    for r in special_case_reports(KLEIN, catalog.get_factor("x_only"), u):
        assert r.verdict == "pass" and r.residuals["sigma"] == 0 and r.residuals["gbar"] <= 1e-10
    e = catalog.get_metric("euclidean")
    for r in special_case_reports(e, catalog.get_factor("y_only"), u):
        assert r.verdict == "pass" and r.residuals["relation"] == 0


def test_declaration_mismatch():
    u = klein_batch(3)
    with pytest.raises(DeclarationMismatchError):
        special_case_reports(KLEIN, PHI_4_10, u, kind="x-only")
    with pytest.raises(DeclarationMismatchError):
        special_case_reports(KLEIN, PHI_4_10, u, kind="y-only")
    with pytest.raises(DeclarationMismatchError):
        special_case_reports(KLEIN, PHI_4_10, u)
    with pytest.raises(DeclarationMismatchError):
        run_checks(KLEIN, FactorSpec("bad", PHI_4_10, kind="y-only"), u, ["special_cases"])


def test_run_checks_orders_and_skips():
    metric, factor = catalog.resolve("example_2_12")
    u = catalog.sample_points(metric, factor, count=3, seed=9)
    reports = run_checks(metric, factor, u, ["nondegeneracy", "master_equivalence", "special_cases"])
    assert [r.name for r in reports] == ["nondegeneracy"] * 3 + ["master_equivalence"] * 3 + ["special_cases"] * 3
    assert all(r.verdict == "skip" and "DegenerateTransformError" in r.reason for r in reports[3:6])
    assert all(r.verdict == "skip" and "declared" in r.reason for r in reports[6:])
    with pytest.raises(KeyError):
        run_checks(metric, factor, u, ["nope"])


def test_run_checks_single_point_and_tolerance_dict():
    reports = run_checks(KLEIN, PHI_4_10, P0, ["identities"], tol={"identity": 1e-30})
    assert len(reports) == 1 and reports[0].verdict == "fail"
    assert run_checks(KLEIN, PHI_4_10, P0, ["identities"])[0].verdict == "pass"


def _lorentzian(x, y):
    return jets.sqrt(y[0] * y[0] - y[1] * y[1]) * (1 + 0.2 * x[0] * x[1]) + 0.1 * x[1] * y[0]


def _lorentzian_factor(x, y):
    return 0.3 * x[0] + 0.1 * y[1] / jets.sqrt(y[0] * y[0] + y[1] * y[1])


def test_lorentzian_surface_formulas():
    rng = np.random.default_rng(0)
    y = np.stack([rng.uniform(1, 2, 20), rng.uniform(-0.4, 0.4, 20)], -1)
    u = SupportElement(rng.uniform(-0.5, 0.5, (20, 2)), y)
    cp = ConformalPoint(MetricSpec("lorentzian", _lorentzian, signature=-1), FactorSpec("f", _lorentzian_factor), u)
    assert np.all(cp.eps == -1)
    for r in master_equivalence(cp) + identities_check(cp):
        assert r.verdict == "pass", (r.name, r.residuals)
