import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from surfnse.mesh import (
    BOX_HALF_WIDTH,
    ZERO_SNAP,
    build_background_mesh,
    select_active_elements,
    snap_zero,
)
from surfnse.geometry import sphere_level_set


def test_level1_sizes():
    m = build_background_mesh(1)
    assert m.n == 4
    assert m.h == pytest.approx(5 / 6)
    assert m.n_tets == 384
    assert m.n_vertices == 125


def test_level0_sizes():
    m = build_background_mesh(0)
    assert (m.n, m.n_tets, m.n_vertices) == (2, 48, 27)


def test_level3_sizes():
    m = build_background_mesh(3)
    assert m.n == 16
    assert m.h == pytest.approx(10 / 48)
    assert m.n_tets == 24576


def test_negative_level_rejected():
    with pytest.raises(ValueError):
        build_background_mesh(-1)


@pytest.mark.parametrize("level", [0, 1, 2])
def test_counts_orientation_and_tiling(level):
    m = build_background_mesh(level)
    assert m.n_tets == 6 * m.n**3
    assert m.n_vertices == (m.n + 1) ** 3
    vol = m.signed_volumes()
    assert np.all(vol > 0)
    assert vol.sum() == pytest.approx((2 * BOX_HALF_WIDTH) ** 3, rel=1e-12)
    np.testing.assert_allclose(vol, m.h**3 / 6, rtol=1e-10)


def test_vertices_x_fastest():
    m = build_background_mesh(0)
    np.testing.assert_allclose(m.vertices[0], [-5 / 3, -5 / 3, -5 / 3])
    np.testing.assert_allclose(m.vertices[1], [0.0, -5 / 3, -5 / 3])
    np.testing.assert_allclose(m.vertices[3], [-5 / 3, 0.0, -5 / 3])


@pytest.mark.parametrize("level", [0, 1])
def test_conforming_faces(level):
    m = build_background_mesh(level)
    faces = np.sort(m.tets[:, [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]].reshape(-1, 3), axis=1)
    _, counts = np.unique(faces, axis=0, return_counts=True)
    assert set(np.unique(counts)) <= {1, 2}
    # boundary faces: 2 triangles per cube face on the box surface
    assert np.sum(counts == 1) == 6 * 2 * m.n**2


def test_sphere_active_set_level1():
    m = build_background_mesh(1)
    phi = sphere_level_set().p1_values(m)
    act = select_active_elements(m, phi)
    assert len(act) > 0
    vals = snap_zero(phi)[m.tets[act.active_tets]]
    assert np.all((vals < 0).any(axis=1) & (vals >= 0).any(axis=1))
    assert np.all(np.diff(act.active_tets) > 0)
    np.testing.assert_array_equal(act.active_vertices, np.unique(m.tets[act.active_tets]))


def test_uniform_sign_gives_empty_set():
    m = build_background_mesh(0)
    act = select_active_elements(m, np.ones(m.n_vertices))
    assert len(act) == 0
    assert len(act.active_vertices) == 0


def test_wrong_length_rejected():
    m = build_background_mesh(0)
    with pytest.raises(ValueError):
        select_active_elements(m, np.ones(3))


def test_zero_snapped_positive():
    np.testing.assert_array_equal(snap_zero([0.0, -1.0, 2.0]), [ZERO_SNAP, -1.0, 2.0])
    m = build_background_mesh(0)
    phi = np.ones(m.n_vertices)
    phi[13] = 0.0  # centre vertex: zero counts as positive, nothing is cut
    assert len(select_active_elements(m, phi)) == 0
    phi[13] = -1.0
    assert len(select_active_elements(m, phi)) == 24


def test_strip_volume_is_thin():
    # strip volume ~ area * O(h): vol/h stays bounded while vol -> 0
    vols, hs = [], []
    for level in (1, 2, 3):
        m = build_background_mesh(level)
        act = select_active_elements(m, sphere_level_set().p1_values(m))
        vols.append(m.signed_volumes(act.active_tets).sum())
        hs.append(m.h)
    assert vols[0] > vols[1] > vols[2]
    ratios = [v / h for v, h in zip(vols, hs)]
    for a, b in zip(ratios[1:], ratios[2:]):
        assert 0.5 < a / b < 2.0
    assert 0.5 * 4 * np.pi < ratios[-1] < 4 * 4 * np.pi


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from([-1.0, 0.0, 0.5, 1.0]), min_size=27, max_size=27))
def test_active_iff_mixed_sign(values):
    m = build_background_mesh(0)
    phi = np.array(values)
    act = select_active_elements(m, phi)
    snapped = snap_zero(phi)[m.tets]
    expected = np.flatnonzero((snapped < 0).any(axis=1) & (snapped > 0).any(axis=1))
    np.testing.assert_array_equal(act.active_tets, expected)
    if len(expected):
        np.testing.assert_array_equal(act.active_vertices, np.unique(m.tets[expected]))
