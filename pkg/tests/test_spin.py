import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nvlock.spin import (DEFAULT_CONSTANTS, DEFAULT_ORIENTATIONS, NV_AXES, NvOrientationSet,
                         PhysicalConstants, TransitionSet, all_class_frequencies, bias_field,
                         check_field, eigenvalues, frequency_jacobian, hamiltonian,
                         hyperfine_lines, hyperfine_offset, min_resonance_gap, project_all,
                         project_field, transitions_full, transitions_linear)

D = 2.87e9
BIAS = bias_field(7.8e6, np.radians(76.5), np.radians(62.5))

fields = arrays(np.float64, 3, elements=st.floats(-1e7, 1e7))
temps = st.floats(-50, 50)


# -- constants and geometry ---------------------------------------------------------

def test_default_constants():
    c = DEFAULT_CONSTANTS
    assert (c.delta, c.beta_t, c.gamma) == (2.87e9, -7.4e4, 28.0)


@pytest.mark.parametrize("kw", [{"delta": 0.0}, {"gamma": -1.0}, {"beta_t": 1.0}])
def test_constants_invariants(kw):
    with pytest.raises(ValueError):
        PhysicalConstants(**kw)


def test_axes_are_tetrahedral():
    axes = DEFAULT_ORIENTATIONS.axes
    assert np.all(np.abs(1 - np.linalg.norm(axes, axis=1)) < 1e-12)
    gram = axes @ axes.T
    assert np.allclose(gram[~np.eye(4, dtype=bool)], -1 / 3, atol=1e-12, rtol=0)
    assert np.allclose(axes.sum(axis=0), 0, atol=1e-15)


def test_frames_are_rotations():
    for f in DEFAULT_ORIENTATIONS.frames:
        assert np.allclose(f @ f.T, np.eye(3), atol=1e-14)
        assert np.isclose(np.linalg.det(f), 1.0)


def test_orientation_set_rejects_bad_axes():
    with pytest.raises(ValueError):
        NvOrientationSet(np.eye(4, 3))
    with pytest.raises(ValueError):
        NvOrientationSet(NV_AXES * 1.01)


# -- project_field --------------------------------------------------------------------

def test_projection_aligned():
    b = 7.8e6 * NV_AXES[0]
    assert project_field(b, 0) == pytest.approx(7.8e6, rel=1e-15)


def test_projection_other_axes():
    b = 7.8e6 * NV_AXES[0]
    for i in (1, 2, 3):
        assert project_field(b, i) == pytest.approx(-2.6e6, rel=1e-12)


def test_projection_zero():
    assert np.all(project_all(np.zeros(3)) == 0)


@pytest.mark.parametrize("bad", [-1, 4, 10])
def test_projection_index_out_of_range(bad):
    with pytest.raises(IndexError):
        project_field(np.ones(3), bad)


def test_projection_index_type():
    with pytest.raises(TypeError):
        project_field(np.ones(3), 1.0)


@given(fields)
def test_projections_sum_to_zero(b):
    p = project_all(b)
    assert abs(p.sum()) <= 1e-9 * max(np.abs(p).max(), 1.0)


# -- linear model ----------------------------------------------------------------------

def test_linear_zero_field_is_delta():
    fm, fp = transitions_linear(0.0, 0.0)
    assert fm == 2.87e9 and fp == 2.87e9


def test_linear_ten_microtesla():
    fm, fp = transitions_linear(1e4, 0.0)
    assert fp == pytest.approx(D + 2.8e5, abs=1e-6)
    assert fm == pytest.approx(D - 2.8e5, abs=1e-6)


def test_linear_one_kelvin():
    fm, fp = transitions_linear(0.0, 1.0)
    assert fm == fp == pytest.approx(D - 7.4e4, abs=1e-6)


@given(st.floats(-1e7, 1e7), temps)
def test_linear_sum_is_common_mode(b_nv, dt):
    fm, fp = transitions_linear(b_nv, dt)
    assert fm + fp == pytest.approx(2 * (D - 7.4e4 * dt), rel=1e-15, abs=1e-6)


@given(st.floats(0, 1e7), temps)
def test_linear_ordering(b_nv, dt):
    fm, fp = transitions_linear(b_nv, dt)
    assert fp >= fm


# -- full model -------------------------------------------------------------------------

def test_full_axial_matches_linear():
    b = 1e4 * NV_AXES[2]
    fm, fp = transitions_full(b, 2)
    lm, lp = transitions_linear(1e4)
    assert abs(fm - lm) < 1.0 and abs(fp - lp) < 1.0


def test_full_negative_axial_keeps_branch_labels():
    b = -3e5 * NV_AXES[1]
    fm, fp = transitions_full(b, 1)
    lm, lp = transitions_linear(-3e5)
    assert abs(fm - lm) < 1.0 and abs(fp - lp) < 1.0
    assert fp < fm


def test_full_transverse_shift():
    # closed form for H = D Sz^2 + b Sx: levels (D -/+ s)/2 and D with s = sqrt(D^2 + 4 b^2)
    b = 28.0 * 1e6
    s = np.sqrt(D * D + 4 * b * b)
    e1 = DEFAULT_ORIENTATIONS.frames[0][0]
    fm, fp = transitions_full(1e6 * e1, 0)
    assert fm == pytest.approx((D + s) / 2, abs=1e-3)
    assert fp == pytest.approx(s, abs=1e-3)
    # both move up; the lower by ~ b^2/D = 2.73e5 Hz, the upper by twice that
    assert fm - D == pytest.approx(b * b / D, rel=1e-3)
    assert fp - D == pytest.approx(2 * b * b / D, rel=1e-3)
    assert fm - D == pytest.approx(273144.7358722687, abs=1e-3)


def test_full_zero_field_degenerate():
    fm, fp = transitions_full(np.zeros(3), 3)
    assert fm == pytest.approx(D, abs=1e-6) and fp == pytest.approx(D, abs=1e-6)


def test_full_rejects_field_beyond_bound():
    with pytest.raises(ValueError):
        transitions_full(np.array([3e7, 0, 0]), 0)
    with pytest.raises(ValueError):
        check_field([np.nan, 0, 0])


def test_hamiltonian_is_hermitian():
    h = hamiltonian(np.array([1e5, -2e5, 3e5]), 1.5)
    assert np.allclose(h, h.conj().T)


@given(fields, temps, st.integers(0, 3))
def test_trace_conservation(b, dt, axis):
    w = eigenvalues(b, axis, dt)
    expect = 2 * (D - 7.4e4 * dt)
    assert abs(w.sum() - expect) <= 1e-6 * expect


@given(st.floats(-1e6, 1e6), st.floats(0, 10), st.floats(0, 2 * np.pi), st.integers(0, 3))
def test_full_equals_linear_for_small_transverse(axial, perp, phi, axis):
    e1, e2, n = DEFAULT_ORIENTATIONS.frames[axis]
    b = axial * n + perp * (np.cos(phi) * e1 + np.sin(phi) * e2)
    fm, fp = transitions_full(b, axis)
    lm, lp = transitions_linear(axial)
    assert abs(fm - lm) < 1.0 and abs(fp - lp) < 1.0


@given(st.floats(-5e6, 5e6), st.floats(1e3, 5e6), st.floats(0, 2 * np.pi), st.integers(0, 3))
def test_full_azimuthal_symmetry(axial, perp, phi, axis):
    e1, e2, n = DEFAULT_ORIENTATIONS.frames[axis]
    ref = transitions_full(axial * n + perp * e1, axis)
    rot = transitions_full(axial * n + perp * (np.cos(phi) * e1 + np.sin(phi) * e2), axis)
    # eigensolver round-off at 2.87 GHz is a few microhertz
    assert np.allclose(ref, rot, rtol=0, atol=1e-4)


# -- hyperfine ------------------------------------------------------------------------------

def test_hyperfine_triplet():
    assert np.allclose(hyperfine_lines(2.87e9), [2.86784e9, 2.87e9, 2.87216e9], rtol=0, atol=1e-6)


def test_hyperfine_degenerate():
    assert np.all(hyperfine_lines(2.87e9, 0.0) == 2.87e9)


@given(st.floats(2.5e9, 3.5e9), st.floats(0, 5e6))
def test_hyperfine_spacing(fc, a):
    lines = hyperfine_lines(fc, a)
    assert np.allclose(np.diff(lines), a, rtol=0, atol=1e-6)


def test_hyperfine_offset_signs():
    assert hyperfine_offset(1, 1) == 2.16e6
    assert hyperfine_offset(-1, -1) == 2.16e6
    assert hyperfine_offset(1, 0) == 0
    with pytest.raises(ValueError):
        hyperfine_offset(0, 1)


# -- all classes ----------------------------------------------------------------------------

def test_all_classes_zero_field():
    ts = all_class_frequencies(np.zeros(3), 0.5)
    assert np.allclose(ts.as_array(), D - 7.4e4 * 0.5, rtol=0, atol=1e-6)


def test_all_classes_split_along_axis0():
    b = 5e5 * NV_AXES[0]
    ts = all_class_frequencies(b, 0.0, "linear")
    split = ts.f_plus - ts.f_minus
    assert split[0] == pytest.approx(2 * 28 * 5e5)
    assert np.allclose(np.abs(split[1:]), 2 / 3 * 28 * 5e5)


@pytest.mark.parametrize("model", ["linear", "full"])
def test_bias_resonances_are_separated(model):
    ts = all_class_frequencies(BIAS, 0.0, model)
    linewidth = 2 * 5e5
    assert min_resonance_gap(ts) > 10 * linewidth


def test_all_classes_matches_per_axis_full():
    ts = all_class_frequencies(BIAS, 0.3, "full")
    for a in range(4):
        fm, fp = transitions_full(BIAS, a, 0.3)
        assert ts.f_minus[a] == pytest.approx(float(fm), abs=1e-4)
        assert ts.f_plus[a] == pytest.approx(float(fp), abs=1e-4)


def test_all_classes_batched():
    b = np.stack([BIAS, 2 * BIAS / 3, np.zeros(3)])
    ts = all_class_frequencies(b, np.array([0.0, 1.0, -2.0]), "full")
    assert ts.as_array().shape == (3, 8)
    assert ts.all_lines().shape == (3, 24)
    single = all_class_frequencies(b[1], 1.0, "full").as_array()
    assert np.allclose(ts.as_array()[1], single, rtol=0, atol=1e-4)


def test_transition_set_round_trip():
    ts = all_class_frequencies(BIAS, 0.0)
    back = TransitionSet.from_array(ts.as_array())
    assert np.array_equal(back.f_minus, ts.f_minus) and np.array_equal(back.f_plus, ts.f_plus)
    assert ts.line(2, -1, -1) == ts.f_minus[2] + 2.16e6


def test_unknown_model():
    with pytest.raises(ValueError):
        all_class_frequencies(BIAS, 0.0, "quadratic")


@pytest.mark.parametrize("model", ["linear", "full"])
def test_jacobian_matches_finite_differences(model):
    b, dt = BIAS + np.array([3e3, -1e3, 2e3]), 0.7
    f0, jac = frequency_jacobian(b, dt, model)
    steps = [1.0, 1.0, 1.0, 1e-4]
    for j, h in enumerate(steps):
        x = np.append(b, dt)
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        fp = all_class_frequencies(xp[:3], xp[3], model).as_array()
        fm = all_class_frequencies(xm[:3], xm[3], model).as_array()
        assert np.allclose(jac[:, j], (fp - fm) / (2 * h), rtol=1e-5, atol=1e-4)
    assert np.allclose(f0, all_class_frequencies(b, dt, model).as_array(), rtol=0, atol=1e-6)
