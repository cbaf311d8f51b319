import math

import numpy as np
import pytest

from handlesurgery.errors import ContractViolation
from handlesurgery.handle import HandleParams
from handlesurgery.strips import (band_area, band_integral_closed_form, build_strip,
                                  holomorphicity_residual, linearized_kernel_dim,
                                  monotonicity_probe, strip_energy)


@pytest.fixture(scope="module")
def strip():
    return build_strip(HandleParams())


def closed_form_quadrant_area(X):
    """Area between y = sqrt(2x^2 - 1)_+ and y = sqrt(2x^2 + 1) for 0 <= x <= X.

    The large antiderivative terms x sqrt(2x^2 +- 1) / 2 are combined as
    x / (sqrt(2x^2 + 1) + sqrt(2x^2 - 1)) to avoid cancellation.
    """
    r2 = math.sqrt(2.0)
    upper_log = math.asinh(r2 * X) / (2 * r2)
    lower_log = math.acosh(r2 * X) / (2 * r2)
    algebraic = X / (math.sqrt(2 * X * X + 1) + math.sqrt(2 * X * X - 1))
    return algebraic + upper_log + lower_log


def test_corner_counts(strip):
    assert strip.corners == 2
    assert build_strip(HandleParams(), "one-corner").corners == 1
    with pytest.raises(ContractViolation):
        build_strip(HandleParams(), "three-corner")


def test_samples_lie_between_branches(strip):
    for grid in strip.quadrants:
        x, y = grid[..., 0], grid[..., 1]
        assert np.all(np.abs(2 * x * x - y * y) <= 1 + 1e-9 * (1 + x * x))


def test_boundary_alternates_planes_at_corners(strip):
    labels = [label for label, _ in strip.boundary]
    assert labels == ["C", "V+", "cap", "V-", "L", "corner"] * 2
    # each plane piece ends or starts at the origin where the corner sits
    for label, pts in strip.boundary:
        if label == "C":
            assert np.allclose(pts[0], 0)
        if label == "L":
            assert np.allclose(pts[-1], 0)


def test_holomorphic_and_negative_controls(strip):
    params = HandleParams()
    assert holomorphicity_residual(params, strip) <= 1e-10
    shifted = strip.transformed(shift_x2=params.epsilon ** params.q / 2)
    assert holomorphicity_residual(params, shifted) <= 1e-10
    tilted = strip.transformed(tilt=0.1)
    assert holomorphicity_residual(params, tilted) == pytest.approx(math.sin(0.1), rel=1e-6)


def test_energy_against_closed_form(strip):
    energy = strip_energy(HandleParams(), strip)
    assert energy.area >= 0
    assert energy.area == pytest.approx(2 * closed_form_quadrant_area(strip.truncation), rel=1e-9)
    assert energy.stokes_defect <= 1e-8
    assert abs(energy.corner_terms) <= 1e-8


def test_area_scaling_slope():
    eps = np.array([0.5, 0.45, 0.4, 0.35, 0.3])
    areas = []
    for e in eps:
        params = HandleParams(epsilon=float(e))
        areas.append(strip_energy(params, build_strip(params, nx=8, ny=2)).area_unscaled)
    slope = np.polyfit(np.log(eps), np.log(areas), 1)[0]
    assert slope == pytest.approx(44, rel=0.05)


@pytest.mark.parametrize("band", [(0.0, 1.0), (1.0, 5.0), (3.0, 300.0)])
def test_band_area_matches_closed_form(strip, band):
    assert band_area(strip, *band) == pytest.approx(band_integral_closed_form(*band), abs=1e-6)


def test_monotonicity_probe():
    assert monotonicity_probe(HandleParams()).passed
    bad = monotonicity_probe(HandleParams(q=22, validate=False))
    assert not bad.passed
    ratios = [monotonicity_probe(HandleParams(epsilon=e)).ratio for e in (0.5, 0.4, 0.3, 0.2)]
    assert np.all(np.diff(ratios) < 0)


def test_kernel_dimension():
    params = HandleParams()
    report = linearized_kernel_dim(params)
    assert report.dimension == 0 and not report.unstable
    assert linearized_kernel_dim(params, boundary="matching").dimension >= 1
    assert linearized_kernel_dim(params, delta=0.0).unstable


def test_kernel_weight_contract():
    params = HandleParams()
    with pytest.raises(ContractViolation):
        linearized_kernel_dim(params, delta=-0.1)
    with pytest.raises(ContractViolation):
        linearized_kernel_dim(params, delta=2.0)
