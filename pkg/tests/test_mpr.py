import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rfbonds.grid_noise import FieldKind, GridSpec, Warp, block_rng, sample_sheet
from rfbonds.mpr import (
    EtaSpec,
    check_c2_bound,
    check_drift_identity,
    check_l2_identity,
    evaluate_conditions,
    g_norm_sq,
    girsanov_kernel,
    l2_identity_sides,
    lambda_from_eta,
)

NORMAL = FieldKind.normalized()


def fine_grid(n_nodes=512, n_time=4, T0=1.0):
    return GridSpec(T0, n_time, n_nodes - 1, u_min=T0 / n_nodes)


def maturity_linear(scale=1.0):
    return EtaSpec.separable(np.ones_like, lambda u: scale * u)


def random_tables(seed, count=10, shape=(4, 6)):
    rng = np.random.default_rng(seed)
    return [rng.normal(0, 1, size=shape) for _ in range(count)]


# lambda ---------------------------------------------------------------------

def test_zero_eta_gives_zero_lambda():
    g = fine_grid(64)
    assert np.all(lambda_from_eta(EtaSpec.zero(), g).values == 0.0)


def test_constant_eta_lambda_is_linear():
    g = fine_grid(64)
    lam = lambda_from_eta(EtaSpec.constant(0.7), g).values
    np.testing.assert_allclose(lam, 0.7 * g.maturity_nodes[None, :] * np.ones((g.n_time + 1, 1)), rtol=1e-12)


def test_lambda_left_endpoint_increments():
    g = fine_grid(32)
    e = EtaSpec.piecewise_constant(random_tables(0, 1)[0]).realize(g)
    lam = lambda_from_eta(e, g).values
    np.testing.assert_allclose(np.diff(lam, axis=1), e[:, :-1] * g.du, atol=1e-14)
    np.testing.assert_allclose(lam[:, 0], e[:, 0] * g.u_min)


@pytest.mark.parametrize("n", [64, 256])
def test_linear_eta_lambda_first_order(n):
    g = fine_grid(n)
    lam = lambda_from_eta(maturity_linear(), g).values
    T = g.maturity_nodes
    err = np.max(np.abs(lam - T**2 / 2))
    assert err <= g.du * g.t0_horizon


# kernel ---------------------------------------------------------------------

def test_zero_eta_gives_zero_kernel():
    g = fine_grid(64)
    k = girsanov_kernel(EtaSpec.zero(), lambda_from_eta(EtaSpec.zero(), g), NORMAL, g)
    assert np.all(k.g == 0.0)


def test_constant_eta_kernel_closed_form():
    g = fine_grid(64)
    c = -1.3
    eta = EtaSpec.constant(c)
    k = girsanov_kernel(eta, lambda_from_eta(eta, g), NORMAL, g)
    np.testing.assert_allclose(k.g, 1.5 * c * np.sqrt(g.maturity_nodes)[None, :] + 0 * k.g, rtol=1e-12)


def test_sqrt_scaled_kernel_matches_normalized():
    g = fine_grid(128)
    eta = EtaSpec.piecewise_constant(random_tables(1, 1)[0])
    lam = lambda_from_eta(eta, g)
    a = girsanov_kernel(eta, lam, NORMAL, g)
    b = girsanov_kernel(eta, lam, FieldKind.scaled(Warp.sqrt()), g)
    np.testing.assert_allclose(b.g, a.g, rtol=0, atol=1e-12)
    np.testing.assert_allclose(b.density_coefficients(g), a.density_coefficients(g), rtol=0, atol=1e-12)


def test_missing_derivative_rejected():
    g = GridSpec(1.0, 4, 4, u_min=0.2)
    bad = Warp("kinked", lambda u: np.asarray(u, float), lambda u: np.where(np.isclose(u, 0.6), np.nan, 1.0))
    eta = EtaSpec.constant(1.0)
    with pytest.raises(ValueError, match="h' unavailable at maturity node 2"):
        girsanov_kernel(eta, lambda_from_eta(eta, g), FieldKind.scaled(bad), g)


@pytest.mark.parametrize("seed", range(5))
def test_kernel_is_linear_in_eta(seed):
    g = fine_grid(32)
    t1, t2 = random_tables(seed, 2)
    e1 = EtaSpec.piecewise_constant(t1).realize(g)
    e2 = EtaSpec.piecewise_constant(t2).realize(g)

    def kern(e):
        return girsanov_kernel(e, lambda_from_eta(e, g), NORMAL, g).g

    np.testing.assert_allclose(kern(e1 + e2), kern(e1) + kern(e2), atol=1e-12)


@pytest.mark.parametrize("c", [-2.0, 0.5, 3.0])
def test_kernel_scaling(c):
    g = fine_grid(32)
    e = EtaSpec.piecewise_constant(random_tables(7, 1)[0]).realize(g)
    lam1, lam_c = lambda_from_eta(e, g), lambda_from_eta(c * e, g)
    k1 = girsanov_kernel(e, lam1, NORMAL, g)
    kc = girsanov_kernel(c * e, lam_c, NORMAL, g)
    np.testing.assert_allclose(lam_c.values, c * lam1.values, atol=1e-12)
    np.testing.assert_allclose(kc.g, c * k1.g, atol=1e-12)
    assert g_norm_sq(kc, g) == pytest.approx(c**2 * g_norm_sq(k1, g), rel=1e-12)


# drift identity --------------------------------------------------------------

def drift_residual(eta, n, kind=NORMAL):
    g = fine_grid(n)
    lam = lambda_from_eta(eta, g)
    return check_drift_identity(girsanov_kernel(eta, lam, kind, g), lam, kind, g)


def test_drift_identity_zero():
    assert drift_residual(EtaSpec.zero(), 64) == 0.0


def test_drift_identity_constant_eta():
    r512 = drift_residual(EtaSpec.constant(1.0), 512)
    r1024 = drift_residual(EtaSpec.constant(1.0), 1024)
    assert r512 <= 1e-2
    assert r512 / r1024 == pytest.approx(2.0, rel=0.1)


def test_drift_identity_linear_eta_converges():
    res = [drift_residual(maturity_linear(), n) for n in (64, 128, 256, 512)]
    for coarse, fine in zip(res, res[1:]):
        assert fine < coarse * 1.1
    assert res[-1] < res[0] / 4


def test_cell_rule_drift_is_exact():
    g = fine_grid(64)
    eta = maturity_linear(2.0)
    lam = lambda_from_eta(eta, g)
    for kind in (NORMAL, FieldKind.scaled(Warp.power(2))):
        k = girsanov_kernel(eta, lam, kind, g)
        total = np.cumsum(k.cell_drift(g, "cell"), axis=-1)
        np.testing.assert_allclose(total, (kind.scale(g.maturity_nodes) * lam.values)[:-1], rtol=1e-12)


# condition integrals -----------------------------------------------------------

def test_zero_eta_conditions_vanish():
    rep = evaluate_conditions(EtaSpec.zero(), fine_grid(64))
    for name in ("c1_integral", "c2_integral", "thm2_integral", "half_g_norm_sq", "term1_norm_sq",
                 "term2_norm_sq"):
        assert getattr(rep, name) == 0.0


@pytest.mark.parametrize("c", [1.0, 0.5, -2.0])
def test_c1_closed_form(c):
    # int_0^1 u log(1/u) du = 1/4 and int_0^1 u du = 1/2
    rep = evaluate_conditions(EtaSpec.constant(c), fine_grid(512))
    assert rep.c1_integral == pytest.approx(5 / 8 * c**2, rel=1e-3)


@pytest.mark.parametrize("c", [1.0, 0.5])
def test_c2_closed_form(c):
    rep = evaluate_conditions(EtaSpec.constant(c), fine_grid(512))
    assert rep.c2_integral == pytest.approx(5 / 4 * c**2, rel=1e-12)


def test_constant_eta_g_norm():
    # g = (3/2) sqrt(u): ||g||^2 = 9/8
    rep = evaluate_conditions(EtaSpec.constant(1.0), fine_grid(512))
    assert 2 * rep.half_g_norm_sq == pytest.approx(9 / 8, rel=1e-3)
    assert rep.term2_norm_sq == pytest.approx(0.5, rel=1e-3)
    assert rep.term1_norm_sq == pytest.approx(1 / 8, rel=1e-3)


def test_thm2_for_sqrt_warp_closed_form():
    # h = sqrt(u): int_u^1 h'^2 = log(1/u)/4, so the integral is 1/32 + 1/2 for eta = 1
    rep = evaluate_conditions(EtaSpec.constant(1.0), fine_grid(512))
    assert rep.thm2_integral == pytest.approx(1 / 32 + 1 / 2, rel=1e-3)


def test_linear_warp_kernel_norms():
    # h = u, eta = 1: g = 2u, ||g||^2 = 4/3, ||h eta||^2 = 1/3, ||h' lambda||^2 = 1/3
    rep = evaluate_conditions(EtaSpec.constant(1.0), fine_grid(512), FieldKind.scaled(Warp.linear()))
    assert 2 * rep.half_g_norm_sq == pytest.approx(4 / 3, rel=1e-3)
    assert rep.term1_norm_sq == pytest.approx(1 / 3, rel=1e-3)
    assert rep.term2_norm_sq == pytest.approx(1 / 3, rel=1e-3)
    # int_u^1 1 = 1 - u: int u (1 - u) / 2 + u^2 = 1/12 + 1/3
    assert rep.thm2_integral == pytest.approx(1 / 12 + 1 / 3, rel=1e-3)


@pytest.mark.parametrize("kind", [NORMAL, FieldKind.scaled(Warp.linear()), FieldKind.scaled(Warp.power(2))])
@pytest.mark.parametrize("seed", range(3))
def test_half_norm_below_term_sum(kind, seed):
    g = fine_grid(64)
    rep = evaluate_conditions(EtaSpec.piecewise_constant(random_tables(seed, 1)[0]), g, kind)
    assert rep.half_g_norm_sq <= rep.term1_norm_sq + rep.term2_norm_sq + 1e-9


def test_sqrt_scaled_report_matches_normalized():
    g = fine_grid(256)
    eta = EtaSpec.piecewise_constant(random_tables(4, 1)[0])
    a = evaluate_conditions(eta, g).to_dict()
    b = evaluate_conditions(eta, g, FieldKind.scaled(Warp.sqrt())).to_dict()
    for key in ("c1_integral", "c2_integral", "thm2_integral", "half_g_norm_sq", "term1_norm_sq",
                "term2_norm_sq"):
        assert b[key] == pytest.approx(a[key], abs=1e-12)


def test_report_json_fields():
    import json

    rep = evaluate_conditions(EtaSpec.constant(1.0), fine_grid(16))
    d = json.loads(rep.to_json())
    assert {"c1_integral", "c2_integral", "thm2_integral", "half_g_norm_sq", "term1_norm_sq",
            "term2_norm_sq", "grid"} <= set(d)
    assert d["grid"]["n_maturity"] == 15


# L2 identity -------------------------------------------------------------------

def test_l2_identity_zero():
    assert check_l2_identity(EtaSpec.zero(), fine_grid(64)) == 0.0


def test_l2_identity_constant_eta():
    lhs, rhs = l2_identity_sides(EtaSpec.constant(1.0), fine_grid(512))
    assert lhs == pytest.approx(1 / 8, rel=1e-3)
    assert rhs == pytest.approx(1 / 8, rel=1e-3)
    assert check_l2_identity(EtaSpec.constant(1.0), fine_grid(512)) <= 1e-3


def brute_force_l2_sides(eta_fn, lam_fn, n_cells, T0=1.0):
    """Midpoint rule on [0, T0] with closed-form lambda; time-independent integrands."""
    h = T0 / n_cells
    u = (np.arange(n_cells) + 0.5) * h
    lhs = np.sum(lam_fn(u) ** 2 / (4 * u)) * h * T0
    rhs = 0.5 * np.sum(eta_fn(u) * lam_fn(u) * np.log(T0 / u)) * h * T0
    return lhs, rhs


def test_l2_identity_linear_eta_against_fine_oracle():
    n = 512
    lhs, rhs = l2_identity_sides(maturity_linear(), fine_grid(n))
    o_lhs, o_rhs = brute_force_l2_sides(lambda u: u, lambda u: u**2 / 2, 4 * n)
    assert o_lhs == pytest.approx(1 / 64, rel=1e-4)
    assert o_rhs == pytest.approx(1 / 64, rel=1e-3)
    assert abs(lhs - o_lhs) <= 1e-3
    assert abs(rhs - o_rhs) <= 1e-3
    assert abs(lhs - rhs) <= 1e-3


# C2 bound ------------------------------------------------------------------------

def test_c2_bound_zero():
    assert check_c2_bound(EtaSpec.zero(), fine_grid(64)) == 0.0


def test_c2_bound_constant_eta():
    assert check_c2_bound(EtaSpec.constant(1.0), fine_grid(512)) == pytest.approx(11 / 8, rel=1e-3)


@pytest.mark.parametrize("table", random_tables(2024), ids=lambda _: "random")
def test_c2_bound_random_piecewise(table):
    assert check_c2_bound(EtaSpec.piecewise_constant(table), fine_grid(128)) >= -1e-6


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 8)),
              elements=st.floats(-10, 10, allow_nan=False)))
def test_c2_bound_property(table):
    g = GridSpec(1.5, 5, 40)
    assert check_c2_bound(EtaSpec.piecewise_constant(table), g) >= -1e-6 * max(1.0, np.max(table**2))


# stochastic eta --------------------------------------------------------------------

def clipped_sheet_rule(c=0.5):
    def rule(rows, i, grid):
        return c * np.tanh(rows[:, -1, :])
    return rule


def test_adapted_eta_is_predictable():
    g = GridSpec(1.0, 6, 5)
    sheet = sample_sheet(g, block_rng(3), 4)
    eta = EtaSpec.grid_adapted(clipped_sheet_rule())
    base = eta.realize(g, sheet)
    bumped_sheet = sheet.sheet.copy()
    bumped_sheet[:, 4:, :] += 10.0
    bumped = eta.realize(g, type(sheet)(sheet.increments, sheet.strip, bumped_sheet, sheet.coords, sheet.kind))
    np.testing.assert_array_equal(base[:, :4], bumped[:, :4])
    assert not np.array_equal(base[:, 4:], bumped[:, 4:])


def test_adapted_eta_requires_sheet():
    with pytest.raises(ValueError, match="needs a sampled sheet"):
        EtaSpec.grid_adapted(clipped_sheet_rule()).realize(GridSpec(1.0, 2, 2))


def test_adapted_eta_conditions_are_estimates():
    g = GridSpec(1.0, 8, 7)
    sheet = sample_sheet(g, block_rng(8), 2000)
    rep = evaluate_conditions(EtaSpec.grid_adapted(clipped_sheet_rule()), g, sheet=sheet)
    assert rep.estimate
    assert set(rep.exp_moments) == {"c1_integral", "c2_integral", "thm2_integral", "half_g_norm_sq"}
    # |eta| <= 0.5 bounds c2 by (5/4)(1/4)
    assert rep.c2_integral <= 5 / 16
    assert 1.0 <= rep.exp_moments["c2_integral"].mean <= math.exp(5 / 16)
    d = rep.to_dict()
    assert d["estimate"] and "std_error" in d["exp_moments"]["c1_integral"]
