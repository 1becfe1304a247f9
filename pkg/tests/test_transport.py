import numpy as np
import pytest

from eulerci.fields import Field, Grid3, evaluate_sparse, sup_norm
from eulerci.series import (FieldSampler, SampledSeries, SeparableSeries, catmull_rom_weights)
from eulerci.timeline import refine_rounds, build_cutoffs
from eulerci.transport import (FlowError, StencilError, StressSmoother, InverseFlows, Velocity,
                               average_nodes, flow_grid_for, integrate_flow,
                               material_derivative, smoothing_case, time_derivative)
from eulerci.verify import random_field

from conftest import toy_params


def _steady(grid, fn, kind="vector"):
    return SeparableSeries(grid, kind, [(lambda t: 1.0, Field.from_function(grid, fn, kind))])


def test_catmull_rom_reproduces_quadratics():
    for s in np.linspace(0, 1, 7):
        w = catmull_rom_weights(s)
        assert sum(w) == pytest.approx(1.0)
        nodes = np.array([-1, 0, 1, 2])
        assert np.dot(w, nodes) == pytest.approx(s)
        assert np.dot(w, nodes ** 2) == pytest.approx(s * s)


def test_sampled_series_interpolates_profile():
    g = Grid3(8)
    F = Field.from_function(g, lambda x, y, z: np.cos(x))
    h = 1 / 64
    ser = SampledSeries(g, "scalar", h, 65, lambda n: F * ((n * h) ** 2))
    assert ser.at(0.3).coeffs[0, 1, 0, 0].real == pytest.approx(0.5 * 0.09)
    assert ser.at(4 * h).coeffs[0, 1, 0, 0].real == pytest.approx(0.5 * (4 * h) ** 2)


def test_field_sampler_paths_agree(rng):
    g = Grid3(32)
    f = random_field(g, "vector", 6, rng)
    pts = rng.random((3, 50)) * 8 - 4
    direct = evaluate_sparse(f, pts.T).reshape(3, -1)
    spline = FieldSampler(f, max_modes=0)(pts)
    assert np.max(np.abs(spline - direct)) < 1e-5 * np.abs(direct).max()


def test_shear_flow_exact():
    # v = (sin y, 0, 0) is steady and constant along its own trajectories
    g = Grid3(16)
    vel = Velocity(_steady(g, lambda x, y, z: np.stack([np.sin(y), 0 * x, 0 * x])))
    fm = integrate_flow(vel, 0.0, 0.5, g)
    x, y, z = np.broadcast_arrays(*g.coords())
    assert np.max(np.abs(fm.displacement[0.5][0] - 0.5 * np.sin(y))) < 1e-14
    assert fm.volume_defect(0.5) < 1e-12
    assert fm.deviation(0.5) == pytest.approx(0.5, rel=1e-6)


def _abc(x, y, z, a=0.5):
    return a * np.stack([np.sin(z) + np.cos(y), np.sin(x) + np.cos(z), np.sin(y) + np.cos(x)])


def test_rk4_fourth_order_on_abc():
    g = Grid3(8)
    vel = Velocity(_steady(g, _abc))
    ref = integrate_flow(vel, 0.0, 1.0, g, n_steps=256).displacement[1.0]
    errs = [np.abs(integrate_flow(vel, 0.0, 1.0, g, n_steps=n).displacement[1.0] - ref).max()
            for n in (4, 8, 16)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 3.7)


def test_flow_cfl_refused():
    g = Grid3(8)
    vel = Velocity(_steady(g, lambda x, y, z: _abc(x, y, z, a=4.0)))
    with pytest.raises(FlowError):
        integrate_flow(vel, 0.0, 1.0, g)
    with pytest.warns(UserWarning):
        integrate_flow(vel, 0.0, 1.0, g, toy=True, n_steps=4)


def test_inverse_of_forward_is_identity():
    g = Grid3(16)
    vel = Velocity(_steady(g, _abc))
    fwd = integrate_flow(vel, 0.0, 0.4, g, n_steps=64)
    pts = fwd.positions(0.4)
    back = integrate_flow(vel, 0.4, 0.0, g, n_steps=64, points=pts)
    assert np.max(np.abs(pts + back.displacement[0.0] - g.mesh())) < 1e-8


def test_time_derivative_fourth_order():
    g = Grid3(8)
    F = Field.from_function(g, lambda x, y, z: np.cos(x))
    errs = []
    for h in (0.1, 0.05):
        samples = [F * np.cos(0.3 + k * h) for k in (-2, -1, 0, 1, 2)]
        d = time_derivative(samples, h).coeffs[0, 1, 0, 0].real * 2
        errs.append(abs(d + np.sin(0.3)))
    assert np.log2(errs[0] / errs[1]) > 3.8
    with pytest.raises(StencilError):
        time_derivative([F, None, F, F], 0.1)


def test_material_derivative_of_transported_scalar():
    # f(x, t) = sin(x - c t) is transported by v = (c, 0, 0)
    g, c, h, t = Grid3(8), 0.7, 1e-2, 0.2
    samples = [Field.from_function(g, lambda x, y, z, s=t + k * h: np.sin(x - c * s), band=1)
               for k in (-2, -1, 0, 1, 2)]
    v = Field.from_function(g, lambda x, y, z: np.stack([c + 0 * x, 0 * x, 0 * x]), band=1)
    assert sup_norm(material_derivative(samples, h, v)) < 1e-8


def test_average_nodes():
    x, w = average_nodes()
    assert w.sum() == pytest.approx(1.0)
    assert np.allclose(w, w[::-1]) and np.allclose(x, -x[::-1])
    with pytest.raises(ValueError):
        average_nodes(8)


def test_flow_grid_for():
    assert flow_grid_for(Grid3(128), 3).shape == (16, 16, 16)
    assert flow_grid_for(Grid3(128), 10).shape == (64, 64, 64)
    assert flow_grid_for(Grid3(None, (8, 8, 64)), 10).shape == (8, 8, 64)


@pytest.fixture(scope="module")
def cutoffs():
    ps = toy_params()
    ref, _ = refine_rounds(ps, 1)[0]
    return ref, build_cutoffs(ref)


def test_smoothing_cases(cutoffs):
    ref, _ = cutoffs
    assert smoothing_case(ref, 0) == "c"
    assert smoothing_case(ref, ref.n_cutoffs - 1) == "c"
    assert smoothing_case(ref, 1) == "a"


def test_smoother_with_zero_velocity(cutoffs, rng):
    ref, cf = cutoffs
    g = Grid3(8)
    R = random_field(g, "tensor", 2, rng)
    Rser = SeparableSeries(g, "tensor", [(lambda t: 1.0 + t, R)])
    vel = Velocity(SeparableSeries(g, "vector", [(lambda t: 0.0, Field.zeros(g, "vector"))]))
    flows = InverseFlows(vel, cf, g)
    sm = StressSmoother(Rser, vel, flows, tau=0.01)
    s, t = 1, cf.center(1)
    # average of the linear profile 1 + t with a symmetric kernel is 1 + t
    assert np.allclose(sm("a", s, t).physical(), (1 + t) * R.physical(), atol=1e-12)
    assert np.allclose(sm("b", s, t).physical(), (1 + t) * R.physical(), atol=1e-12)
    assert np.all(sm("c", s, t).coeffs == 0)
    with pytest.raises(ValueError):
        sm("d", s, t)
