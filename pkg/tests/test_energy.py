import json
import math

import numpy as np
import pytest

from csh_vortex.cartan import build_cartan
from csh_vortex.energy import (Params, State, action_I, diagnostics, diagnostics_json, evaluate,
                               gradient_J, make_params, make_state, pde_residual,
                               quantized_integrals, reduced_J)
from csh_vortex.errors import BoundaryError, GradientUndefinedError
from csh_vortex.minimize import SolveOptions, initial_guess, minimize_J
from csh_vortex.torus import TorusGrid, VortexConfig, integrate, resample

from conftest import SU3_VORTICES, smooth_field, su3_params


def homogeneous(n1=16, N=(1, 1), lam=200.0):
    grid = TorusGrid(1.0, 1.0, n1, n1)
    cartan = build_cartan(len(N)).with_sources(N, grid.area)
    return Params(cartan=cartan, grid=grid, vortices=VortexConfig(((),) * len(N)),
                  u0=np.zeros((len(N), n1, n1)), lam=lam)


def random_admissible(p, rng, count):
    out = []
    while len(out) < count:
        w = np.stack([-p.u0[i] * rng.uniform(0.6, 1.0) + smooth_field(p.grid, rng, scale=0.4)
                      for i in range(p.n)])
        w -= w.mean(axis=(1, 2), keepdims=True)
        try:
            ev = evaluate(w, p)
        except BoundaryError:
            continue
        if np.all(ev.margins > 1e-3):
            out.append(w)
    return out


def test_zero_state_without_vortices():
    p = homogeneous(N=(0, 0))
    w = np.zeros((2, 16, 16))
    J, c = reduced_J(w, p)
    assert J == 0.0
    np.testing.assert_array_equal(c, 0)
    assert not np.any(gradient_J(w, p))
    state = make_state(w, c, p)
    assert action_I(state, p) == 0.0
    assert pde_residual(state, p).max == 0.0
    d = diagnostics(state, p)
    assert d["Q"] == [0.0, 0.0] and d["D"] == [0.0, 0.0]


def test_homogeneous_closed_form():
    p = homogeneous()
    ev = evaluate(np.zeros((2, 16, 16)), p)
    t = (1 + math.sqrt(1 - 8 * math.pi / 100)) / 2
    J = 200 * (1 - t) + 8 * math.pi * math.log(t) - 4 * math.pi
    assert ev.J == pytest.approx(J, rel=1e-12)
    assert ev.J_reduced == pytest.approx(J, rel=1e-12)
    assert J == pytest.approx(-0.845, abs=5e-4)
    np.testing.assert_allclose(ev.c, math.log(t), rtol=1e-13)


def test_reduced_and_action_forms_agree():
    p = su3_params(n1=32)
    rng = np.random.default_rng(4)
    for w in random_admissible(p, rng, 5):
        ev = evaluate(w, p)
        assert abs(ev.J - ev.J_reduced) <= 1e-9 * max(1.0, abs(ev.J))
        assert abs(action_I(ev.state, p) - ev.J) <= 1e-9 * max(1.0, abs(ev.J))


def test_gradient_matches_central_differences():
    p = su3_params(n1=32)
    rng = np.random.default_rng(9)
    eps = 1e-5
    for w in random_admissible(p, rng, 3):
        g = gradient_J(w, p)
        for _ in range(10):
            f = np.stack([smooth_field(p.grid, rng, modes=4) for _ in range(2)])
            fd = (reduced_J(w + eps * f, p)[0] - reduced_J(w - eps * f, p)[0]) / (2 * eps)
            an = float(np.sum(integrate(p.grid, g * f)))
            assert abs(fd - an) <= 1e-5 * max(abs(an), 1e-8)


def test_gradient_projection_removes_source_mean():
    p = su3_params(n1=32)
    rng = np.random.default_rng(1)
    (w,) = random_admissible(p, rng, 1)
    ev = evaluate(w, p)
    g = ev.gradient(p)
    assert np.max(np.abs(g.mean(axis=(1, 2)))) <= 1e-10
    raw = ev.LMw + p.lam * ev.U * np.einsum("ij,jab->iab", p.cartan.Stilde, ev.U - 1)
    # the natural constraint fixes the removed mean at -b/|Omega|
    np.testing.assert_allclose(raw.mean(axis=(1, 2)), -p.b / p.area, rtol=1e-9)


def test_gradient_undefined_on_boundary():
    p = su3_params(n1=32)
    p = p.with_lambda(p.admissibility_threshold)
    with pytest.raises(GradientUndefinedError):
        gradient_J(-p.u0, p)


def test_outside_admissible_set_raises_with_margins():
    p = su3_params(n1=32, multiple=1.0)
    with pytest.raises(BoundaryError) as exc:
        reduced_J(-p.u0, p)
    assert exc.value.margins is not None


def test_converged_solution_properties(su3, su3_solution):
    state, rep = su3_solution
    res = pde_residual(state, su3)
    assert res.max <= 1e-6
    np.testing.assert_allclose(res.means, 0, atol=1e-9)
    Q, target = quantized_integrals(state, su3)
    np.testing.assert_allclose(Q, target, rtol=1e-8)


def test_refinement_consistency():
    """Solutions on finer grids leave a smaller residual on a common fine grid."""
    fine = su3_params(n1=128)
    out = []
    for n1 in (32, 64):
        p = su3_params(n1=n1)
        state, rep = minimize_J(p, initial_guess(p), SolveOptions(gtol=1e-9))
        assert rep.converged
        v = resample(state.v, p.grid, fine.grid)
        s = State(w=v - v.mean(axis=(1, 2), keepdims=True), c=v.mean(axis=(1, 2)))
        out.append(pde_residual(s, fine).max)
    assert out[1] < out[0]


def test_quantized_target_example():
    p = su3_params(n1=16).with_lambda(500.0)
    _, target = quantized_integrals(State(w=np.zeros((2, 16, 16)), c=np.zeros(2)), p)
    np.testing.assert_allclose(target, -4 * math.pi / 500, rtol=1e-15)
    assert target[0] == pytest.approx(-0.0251327, abs=1e-7)


def test_diagnostics_json_is_stable():
    p = homogeneous()
    ev = evaluate(np.zeros((2, 16, 16)), p)
    rec = diagnostics(ev.state, p)
    for key in ("lambda", "lambda0", "Q", "Q_target", "D", "lemma1_ok", "residual"):
        assert key in rec
    text = diagnostics_json(rec)
    assert text == diagnostics_json(diagnostics(ev.state, p))
    back = json.loads(text)
    assert back["lambda"] == rec["lambda"]
    assert back["c"] == rec["c"]


def test_make_params_checks_rank():
    grid = TorusGrid(1.0, 1.0, 16, 16)
    with pytest.raises(ValueError):
        make_params(grid, VortexConfig(SU3_VORTICES), 100.0, n=3)
    with pytest.raises(ValueError):
        make_params(grid, VortexConfig(SU3_VORTICES), -1.0)


def test_make_state_rejects_nonzero_mean():
    p = homogeneous()
    with pytest.raises(ValueError):
        make_state(np.ones((2, 16, 16)), np.zeros(2), p)
