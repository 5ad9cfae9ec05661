"""Sticky limit flow: closed-form checks, contraction, merging, EVI residuals."""

import math

import numpy as np
import pytest

from measureflow.errors import InputError
from measureflow.fields import GradientSumField, InteractionField, SampledField, uniform_noise
from measureflow.limit import (
    StickyFlowConfig,
    contraction_check,
    evi_residual,
    sticky_flow,
    sticky_property_check,
)
from measureflow.measure import dirac, mixture, tangent_atoms
from measureflow.paths import PathEnsemble, PiecewisePath, Provenance, constant_path
from measureflow.scenarios import scenario
from measureflow.transport import w2_distance

DET = SampledField(lambda x, u: -x, uniform_noise([0]))
ATTRACT = scenario("idf-attract").spec
ZERO_F = InteractionField(lambda x, y: np.zeros_like(x))


def test_linear_flow_matches_exponential():
    flow = sticky_flow(DET, dirac(1.0), 1.0, StickyFlowConfig(dt=1e-4))
    x1 = flow.measure_curve(1.0).atoms[0, 0]
    assert abs(x1 - math.exp(-1.0)) <= 1e-6


def test_interaction_flow_conserves_mean():
    flow = sticky_flow(ATTRACT, mixture([-1.0, 1.0], [0.5, 0.5]), 1.0, StickyFlowConfig(dt=1e-3))
    for t in (0.0, 0.5, 1.0):
        m = flow.measure_curve(t)
        mean = float(np.sum(m.weights * m.atoms[:, 0]))
        assert abs(mean) <= 1e-10
    ends = sorted(flow.measure_curve(1.0).atoms.ravel())
    assert np.allclose(ends, [-math.exp(-1.0), math.exp(-1.0)], atol=1e-6)


def test_zero_field_constant_paths_no_merges():
    flow = sticky_flow(ZERO_F, mixture([0.0, 1.0], [0.5, 0.5]), 2.0)
    assert flow.merge_events == ()
    for p in flow.ensemble.paths:
        assert np.all(p.nodes == p.nodes[0])


def test_contraction_examples():
    mu = mixture([-1.0, 1.0], [0.5, 0.5])
    rep = contraction_check(DET, dirac(0.5), dirac(0.5), -1.0, [0.5, 1.0])
    assert rep.passed and all(lhs <= 1e-9 for _, lhs, _ in rep.rows)

    # linear flow: W2 = e^{-t} W2(0) exactly, the bound is tight
    rep = contraction_check(DET, dirac(0.0), dirac(1.0), -1.0, [0.25, 1.0], StickyFlowConfig(dt=1e-3))
    assert rep.passed
    for t, lhs, _ in rep.rows:
        assert abs(lhs - math.exp(-t)) <= 1e-5

    rep = contraction_check(ZERO_F, mu, mixture([-0.5, 1.5], [0.5, 0.5]), 0.0, [0.5, 1.0])
    assert rep.passed
    lhs_vals = [lhs for _, lhs, _ in rep.rows]
    assert np.allclose(lhs_vals, lhs_vals[0])


MERGE_MU0 = mixture([-1.0, 0.0, 1.0], [0.25, 0.25, 0.5])


@pytest.fixture(scope="module")
def merging_flow():
    return sticky_flow(ATTRACT, MERGE_MU0, 15.0, StickyFlowConfig(dt=2e-3, merge_tol=1e-6))


def test_support_count_monotone_and_mass_conserved(merging_flow):
    flow = merging_flow
    assert len(flow.merge_events) >= 1
    counts = [flow.measure_curve(t).n_atoms for t in np.linspace(0.0, 15.0, 12)]
    assert all(b <= a for a, b in zip(counts, counts[1:]))
    assert counts[-1] < counts[0]
    for t in np.linspace(0.0, 15.0, 7):
        assert flow.measure_curve(t).weights.sum() == 1.0


def test_merged_paths_share_tails_exactly(merging_flow):
    flow = merging_flow
    ev = flow.merge_events[0]
    i, j = ev.survivor, ev.absorbed[0]
    pi, pj = flow.ensemble.paths[i], flow.ensemble.paths[j]
    after = pi.grid >= ev.time
    assert np.array_equal(pi.nodes[after], pj.nodes[after])


def test_et_consistency_at_grid_times():
    flow = sticky_flow(ATTRACT, mixture([-1.0, 1.0], [0.5, 0.5]), 1.0, StickyFlowConfig(dt=0.01))
    grid = flow.ensemble.paths[0].grid
    for t in grid[:: len(grid) // 5]:
        m = flow.measure_curve(float(t))
        atoms = np.stack([p(float(t)) for p in flow.ensemble.paths])
        assert set(map(tuple, m.atoms)) == set(map(tuple, atoms))


def test_sticky_property_check_examples():
    two = PathEnsemble(
        (constant_path(0.0, 1.0), constant_path(1.0, 1.0)),
        np.array([0.5, 0.5]),
        Provenance("limit-flow"),
    )
    assert sticky_property_check(two, 1e-8).passed

    # crossing then separating violates P3
    grid = np.array([0.0, 0.5, 1.0])
    a = PiecewisePath(grid, np.array([[0.0], [1.0], [0.0]]))
    b = PiecewisePath(grid, np.array([[2.0], [1.0], [2.0]]))
    crossing = PathEnsemble((a, b), np.array([0.5, 0.5]), Provenance("limit-flow"))
    rep = sticky_property_check(crossing, 1e-8)
    assert not rep.passed and "P3" in rep.detail

    dup = PathEnsemble(
        (constant_path(0.0, 1.0), constant_path(0.0, 1.0)),
        np.array([0.5, 0.5]),
        Provenance("limit-flow"),
    )
    rep = sticky_property_check(dup, 1e-8)
    assert not rep.passed and "P1" in rep.detail


def test_sticky_properties_of_merging_flow(merging_flow):
    rep = sticky_property_check(merging_flow.ensemble, 1e-8, MERGE_MU0)
    assert rep.passed, rep.detail


def test_evi_residual_closed_form():
    # b = -x from delta_1: W2^2(mu_t, delta_0) = e^{-2t}, residual = O(h)
    flow = sticky_flow(DET, dirac(1.0), 1.0, StickyFlowConfig(dt=1e-4))
    phi = tangent_atoms([((0.0,), (0.0,))], [1.0])
    for h in (1e-2, 1e-3):
        res = evi_residual(flow, phi, [0.1, 0.4], h, lam=-1.0)
        assert all(abs(r) <= 3.0 * h for r in res)

    # test section sitting on the flow itself with zero velocities
    mu = flow.measure_curve(0.2)
    phi_on = tangent_atoms([(mu.atoms[0], np.zeros(1))], [1.0])
    res = evi_residual(flow, phi_on, [0.2], 1e-3, lam=-1.0)
    assert abs(res[0]) <= 5e-3

    flow0 = sticky_flow(ZERO_F, dirac(0.0), 1.0, StickyFlowConfig(dt=1e-3))
    phi1 = tangent_atoms([((1.0,), (0.0,))], [1.0])
    res = evi_residual(flow0, phi1, [0.1, 0.5], 1e-3, lam=0.0)
    assert all(abs(r) <= 1e-12 for r in res)


def test_evi_residual_horizon_guard():
    flow = sticky_flow(DET, dirac(1.0), 0.5, StickyFlowConfig(dt=1e-3))
    with pytest.raises(InputError):
        evi_residual(flow, tangent_atoms([((0.0,), (0.0,))], [1.0]), [0.5], 1e-2, lam=0.0)


def test_quadratic_gradient_flow_decay_rate():
    # single quadratic H(x) = a|x - c|^2 / 2: W2(mu_t, delta_c) = e^{-a t} W2(mu_0, delta_c)
    a, c = 1.5, 0.7
    spec = GradientSumField(((lambda x: a * (x - c)),))
    mu0 = mixture([-1.0, 0.5, 2.0], [0.25, 0.25, 0.5])
    flow = sticky_flow(spec, mu0, 1.0, StickyFlowConfig(dt=1e-3))
    target = dirac(c)
    w0 = w2_distance(mu0, target)
    for t in (0.25, 0.5, 1.0):
        wt = w2_distance(flow.measure_curve(t), target)
        assert abs(wt - math.exp(-a * t) * w0) <= 1e-4


def test_explicit_euler_fine_integrator_mode():
    flow = sticky_flow(DET, dirac(1.0), 1.0, StickyFlowConfig(dt=1e-4, integrator="explicit-euler-fine"))
    x1 = flow.measure_curve(1.0).atoms[0, 0]
    assert abs(x1 - math.exp(-1.0)) <= 1e-3  # first-order accuracy only


def test_limit_vs_euler_distance_monotone():
    # scheme lifts approach the limit flow monotonically (10% slack) as tau halves
    from measureflow.euler import build_path_ensemble, run_explicit_euler
    from measureflow.transport import wasserstein2_sup

    cases = [
        ("sdf-linear", 8, range(2, 7)),
        ("gradient-sum", 6, range(2, 7)),
        ("idf-attract", 3, range(2, 7)),
    ]
    for name, N, ks in cases:
        sc = scenario(name)
        T_max = N * 2.0 ** -min(ks)
        ref = sticky_flow(sc.spec, sc.default_initial, T_max, StickyFlowConfig(dt=1e-4)).ensemble
        errs = []
        for k in ks:
            tau = 2.0**-k
            run = run_explicit_euler(sc.spec, sc.default_initial, tau, N * tau, 50.0)
            ens = build_path_ensemble(run)
            errs.append(wasserstein2_sup(ens, ref.restricted(N * tau)))
        for a, b in zip(errs, errs[1:]):
            assert b <= 1.1 * a, (name, errs)
