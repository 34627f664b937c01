import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from surfnse.cases import (
    ALPHA,
    CASES,
    CaseOnPoints,
    ManufacturedCase,
    exact_divergence,
    exact_pressure,
    exact_surface_gradient,
    exact_velocity,
    forcing,
    get_case,
    killing_field,
    shape_operator,
    sol2a_reference_energy,
    sphere_projector,
    spherical_mean,
)

ALL = sorted(CASES)


def gauss_sphere(n=40):
    """Independent product rule: Gauss-Legendre in z, midpoint in azimuth."""
    z, wz = np.polynomial.legendre.leggauss(n)
    m = 2 * n
    phi = (np.arange(m) + 0.5) * 2 * np.pi / m
    r = np.sqrt(1 - z**2)
    x = np.stack(np.broadcast_arrays(r[:, None] * np.cos(phi), r[:, None] * np.sin(phi), z[:, None]), -1)
    w = np.broadcast_to(wz[:, None] * (2 * np.pi / m), (n, m))
    return x.reshape(-1, 3), w.ravel()


sphere_points = st.tuples(
    st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)
).filter(lambda v: np.linalg.norm(v) > 0.1).map(lambda v: np.array(v) / np.linalg.norm(v))


def test_alpha_value():
    assert ALPHA == pytest.approx(0.48860, abs=1e-5)
    # 1/2 alpha^2 int (x^2 + y^2) = 1 with int (x^2 + y^2) = 8 pi / 3
    assert 0.5 * ALPHA**2 * 8 * np.pi / 3 == pytest.approx(1.0, rel=1e-14)


def test_killing_examples():
    np.testing.assert_array_equal(killing_field([0.0, 0.0, 1.0]), [0, 0, 0])
    np.testing.assert_allclose(killing_field([1.0, 0.0, 0.0]), [0, ALPHA, 0], rtol=0, atol=1e-15)
    with pytest.raises(ValueError, match="origin"):
        killing_field([0.0, 0.0, 0.0])


def test_killing_energy_by_quadrature():
    x, w = gauss_sphere()
    assert 0.5 * w @ np.sum(killing_field(x) ** 2, axis=1) == pytest.approx(1.0, rel=1e-12)


def test_unknown_case():
    with pytest.raises(ValueError, match="unknown case"):
        get_case("exact3")
    with pytest.raises(ValueError):
        exact_velocity("nope", [1.0, 0, 0], 0.0)


def test_velocity_and_pressure_examples():
    # exact1, t large: f -> 1 + z, pole is fixed by the rotation
    np.testing.assert_allclose(exact_velocity("exact1", [0, 0, 1.0], 30.0), 0.0, atol=1e-15)
    # exact1 at t=0: speed profile (1 - 2z) xi_z
    x = np.array([0.6, 0.0, 0.8])
    np.testing.assert_allclose(exact_velocity("exact1", x, 0.0), (1 - 1.6) * killing_field(x), rtol=1e-14)
    # sol2b at t=0: f2(0) = 1 - e, and P e_x = e_x at (0, 1, 0)
    np.testing.assert_allclose(exact_velocity("sol2b", [0, 1.0, 0], 0.0), [1 - np.e, 0, 0], rtol=1e-14)
    assert exact_pressure("sol2b", [1.0, 0, 0], 0.3) == 0.0
    assert exact_pressure("sol2b", [0, 0, 1.0], 0.3) == 1.0
    # normal extension
    np.testing.assert_allclose(
        exact_velocity("sol2a", 3 * x, 0.7), exact_velocity("sol2a", x, 0.7), rtol=1e-14
    )
    with pytest.raises(ValueError, match="origin"):
        exact_velocity("exact1", [0, 0, 0.0], 0.0)


def test_sol2b_pressure_mean_zero():
    x, w = gauss_sphere()
    assert abs(w @ exact_pressure("sol2b", x, 0.0)) < 1e-13


@settings(max_examples=40, deadline=None)
@given(x=sphere_points, t=st.floats(0, 5), name=st.sampled_from(ALL))
def test_tangential_and_projected_gradient(x, t, name):
    u = exact_velocity(name, x, t)
    n = x
    assert abs(u @ n) <= 1e-12
    P = sphere_projector(x)
    G = exact_surface_gradient(name, x, t)
    np.testing.assert_allclose(P @ G @ P, G, atol=1e-12)
    E = 0.5 * (G + G.T)
    np.testing.assert_allclose(E @ n, 0, atol=1e-8)
    assert np.trace(G) == pytest.approx(exact_divergence(name, x, t), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(x=sphere_points, r=st.floats(0.5, 2.0))
def test_shape_operator(x, r):
    H = shape_operator(r * x)
    np.testing.assert_allclose(H @ x, 0, atol=1e-14)
    np.testing.assert_allclose(H, H.T, atol=0)
    assert np.trace(H) == pytest.approx(2 / r, rel=1e-12)


def test_divergence_examples():
    x, _ = gauss_sphere(6)
    assert np.max(np.abs(exact_divergence("killing", x, 0.0))) <= 1e-9
    assert np.max(np.abs(exact_divergence("exact1", x, 0.4))) <= 1e-8
    for name in ("sol2a", "sol2b"):
        assert np.max(np.abs(exact_divergence(name, x, 1.0))) > 0.1
    # div_G(P a) = -(a . n) tr H; at (1,0,0) with a = e_x this is -2 (f2(t) factor removed)
    t = 1.0
    f2 = 1 - np.exp(1 - 6 * t)
    assert exact_divergence("sol2b", [1.0, 0, 0], t) / f2 == pytest.approx(-2.0, abs=1e-8)
    # same identity at random points
    y = x[::7]
    np.testing.assert_allclose(exact_divergence("sol2b", y, t) / f2, -2 * y[:, 0], atol=1e-8)


def _pressure_only(name="p_is_z"):
    return ManufacturedCase(
        name, (), lambda t: np.zeros(0), lambda t: np.zeros(0), pressure_modes=(lambda x: x[..., 2],)
    )


def test_forcing_pressure_gradient_oracle():
    case = _pressure_only()
    np.testing.assert_allclose(forcing(case, [0, 0, 1.0], 0.0, 1.0), 0, atol=1e-10)
    np.testing.assert_allclose(forcing(case, [1.0, 0, 0], 0.0, 1.0), [0, 0, 1], atol=1e-10)
    x, _ = gauss_sphere(5)
    expect = np.array([0, 0, 1.0]) - x[:, 2:3] * x
    np.testing.assert_allclose(forcing(case, x, 0.0, 0.3), expect, atol=1e-10)


def test_forcing_killing_is_zero():
    x, _ = gauss_sphere(4)
    assert np.all(forcing("killing", x, 2.0, 0.0) == 0)


def test_forcing_requires_sphere_points():
    with pytest.raises(ValueError, match="unit sphere"):
        forcing("exact1", [1.1, 0, 0], 0.0, 1.0)


def test_forcing_step_halving():
    x = np.array([0, 0, 1.0])
    a = forcing("exact1", x, 0.0, 1.0, delta=1e-3)
    b = forcing("exact1", x, 0.0, 1.0, delta=5e-4)
    assert np.max(np.abs(a - b)) <= 1e-6
    pts, _ = gauss_sphere(4)
    for name in ("exact1", "sol2a", "sol2b"):
        a = forcing(name, pts, 0.5, 1.0, delta=1e-3)
        b = forcing(name, pts, 0.5, 1.0, delta=5e-4)
        assert np.max(np.abs(a - b)) <= 1e-6 * max(1.0, np.max(np.abs(a)))


def test_fd_order():
    pts, _ = gauss_sphere(3)
    d = 0.08
    f = [forcing("sol2a", pts, 0.5, 1.0, delta=d / 2**j) for j in range(3)]
    e1 = np.max(np.abs(f[0] - f[1]))
    e2 = np.max(np.abs(f[1] - f[2]))
    assert e1 / e2 >= 8.0


def test_forcing_matches_strong_form_for_exact1():
    """Independent check via a stream function. u = g(z) xi_z = n x grad Psi with
    Psi' = -alpha g; on the unit sphere 2 P div E_s(u) = Delta_H u + 2 u for
    solenoidal u, which gives P div E_s(u) = -2 c z xi_z for g = 1 + c z."""
    pts, _ = gauss_sphere(5)
    t, nu = 0.4, 1.0
    c = 1 - 3 * np.exp(-t)
    z = pts[:, 2]
    g = 1 + c * z
    xi = killing_field(pts)
    # (grad_G u) u = g^2 (grad xi) xi = -alpha^2 g^2 P(x, y, 0), tangential part
    cen = np.zeros_like(pts)
    cen[:, :2] = -(ALPHA**2) * pts[:, :2]
    P = sphere_projector(pts)
    conv = np.einsum("qij,qj->qi", P, (g**2)[:, None] * cen)
    dgdt = 3 * np.exp(-t) * z
    visc = (-2 * c * z)[:, None] * xi
    expect = dgdt[:, None] * xi + conv - nu * visc
    np.testing.assert_allclose(forcing("exact1", pts, t, nu), expect, atol=2e-7)


def test_case_on_points_matches_pointwise():
    pts, _ = gauss_sphere(4)
    for name in ALL:
        case = get_case(name)
        data = CaseOnPoints(case, 1.3 * pts)
        t = 0.35
        np.testing.assert_allclose(data.velocity(t), exact_velocity(case, pts, t), atol=1e-14)
        np.testing.assert_allclose(data.pressure(t), exact_pressure(case, pts, t), atol=1e-14)
        np.testing.assert_allclose(data.surface_gradient(t), exact_surface_gradient(case, pts, t), atol=1e-12)
        np.testing.assert_allclose(data.forcing(t, 0.7), forcing(case, pts, t, 0.7), atol=1e-10)


def test_sol2a_reference_energy():
    assert sol2a_reference_energy(0.0) == pytest.approx(128 / 35, rel=1e-14)
    assert sol2a_reference_energy(60.0) == pytest.approx(88 / 35, rel=1e-14)
    x, w = gauss_sphere()
    for t in (0.0, 0.5, 2.0):
        ke = 0.5 * w @ np.sum(exact_velocity("sol2a", x, t) ** 2, axis=1)
        assert ke == pytest.approx(float(sol2a_reference_energy(t)), rel=1e-12)


def test_spherical_mean():
    assert spherical_mean(lambda x: x[:, 2] ** 2) == pytest.approx(1 / 3, rel=1e-13)
    np.testing.assert_allclose(spherical_mean(killing_field), 0, atol=1e-15)
