from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochcont.geometry import build_atlas, quadrature_nodes
from stochcont.noise_frames import (
    FrameUsageError,
    build_frame,
    ellipticity_residuals,
    polarization_error,
    psi_battery,
    section_identity_error,
)

SPHERE = build_atlas("sphere2")
TORUS = build_atlas("torus2")


@pytest.mark.parametrize("manifold,kind", [("torus2", "partition"), ("torus2", "coordinate"),
                                           ("torus1", "coordinate"), ("sphere2", "partition"),
                                           ("sphere2", "embedded")])
def test_polarized_section_identity(manifold, kind):
    frame = build_frame(build_atlas(manifold), kind)
    rng = np.random.default_rng(5)
    assert section_identity_error(frame, rng, 300) <= 1e-12
    assert polarization_error(frame, rng, 100) <= 1e-12


def test_sphere_frames_need_more_fields_than_dimensions():
    # S^2 is not parallelizable
    for kind in ("partition", "embedded"):
        assert build_frame(SPHERE, kind).n_fields > 2
    assert build_frame(TORUS, "coordinate").n_fields == 2


def test_frame_kinds_are_validated():
    with pytest.raises(FrameUsageError):
        build_frame(TORUS, "embedded")
    with pytest.raises(FrameUsageError):
        build_frame(SPHERE, "coordinate")
    with pytest.raises(ValueError):
        build_frame(SPHERE, "hopf")


def test_embedded_frame_has_closed_form_divergence():
    # div of the projection of e_i is -2 p_i on the unit sphere
    frame = build_frame(SPHERE, "embedded")
    x = np.random.default_rng(1).uniform(-1.2, 1.2, size=(30, 2))
    p = SPHERE.from_coords("north", x)
    assert np.allclose(frame.divergences("north", x), -2.0 * np.sqrt(2.0) * p, atol=1e-12)


def test_coordinate_frame_is_constant_and_solenoidal():
    frame = build_frame(TORUS, "coordinate")
    x = np.random.default_rng(2).uniform(0, 6, size=(10, 2))
    comps = frame.components("T", x)
    assert np.allclose(comps, np.sqrt(2.0) * np.eye(2)[None])
    assert np.all(frame.divergences("T", x) == 0.0)


@pytest.mark.parametrize("kind", ["partition", "embedded"])
def test_ellipticity_identity_on_quadrature_nodes(kind):
    frame = build_frame(SPHERE, kind)
    psis = psi_battery(SPHERE)
    worst = max(float(np.max(ellipticity_residuals(frame, psis, b.chart, b.nodes)))
                for b in quadrature_nodes(SPHERE, 16))
    assert worst <= 1e-9


@settings(max_examples=20, deadline=None)
@given(st.floats(-1.6, 1.6), st.floats(-1.6, 1.6))
def test_ellipticity_identity_at_random_points(a, b):
    frame = build_frame(SPHERE, "partition")
    psis = psi_battery(SPHERE)
    x = np.array([[a, b]])
    for chart in SPHERE.chart_names:
        assert np.max(ellipticity_residuals(frame, psis, chart, x)) <= 1e-9


@pytest.mark.parametrize("kind", ["partition", "embedded"])
def test_frames_are_finite_at_the_chart_origins(kind):
    # each pole sits at the origin of one chart and at infinity of the other
    frame = build_frame(SPHERE, kind)
    psis = psi_battery(SPHERE)
    origin = np.zeros((1, 2))
    for chart in SPHERE.chart_names:
        assert np.all(np.isfinite(frame.components(chart, origin)))
        assert np.max(ellipticity_residuals(frame, psis, chart, origin)) <= 1e-12
